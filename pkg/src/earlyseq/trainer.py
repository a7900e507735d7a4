"""Minibatch training loop, Adam optimizer and (mu, trial) sweep grid."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import numcore as nc
from .encoder import infer_peripheral_specs
from .evaluation import TradeoffPoint, evaluate
from .objectives import cis_loss, larm_loss
from .sttransformer import ModelConfig, ModelParams, forward_all_t, init_model

DEFAULT_LEARNING_RATES = {"cis": 1e-5, "larm": 1e-6}


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    objective: str = "cis"  # "cis" or "larm"
    mu: float = 1e-2
    lam: float = 1.0
    rho: float = 0.9
    batch_size: int = 128
    learning_rate: float | None = None  # None = per-objective default
    epochs: int = 10
    seed: int = 0
    d_model: int = 32
    n_heads: int = 8
    d_k: int = 64
    head_hidden: int = 100
    emb_dim: int = 16
    eval_every: int = 1
    trial: int = 0  # bookkeeping label attached to tradeoff points

    def __post_init__(self):
        if self.objective not in ("cis", "larm"):
            raise ValueError(f"unknown objective {self.objective!r}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate is not None and self.learning_rate < 0:
            raise ValueError("learning_rate must be nonnegative")

    @property
    def lr(self) -> float:
        if self.learning_rate is None:
            return DEFAULT_LEARNING_RATES[self.objective]
        return self.learning_rate


@dataclass
class TrainResult:
    model: ModelParams
    points: list[TradeoffPoint]
    epoch_losses: list[float]


@dataclass
class CellResult:
    mu: float
    trial: int
    result: TrainResult | None
    error: str | None = None


class Adam:
    """Per-parameter moment estimates with bias correction."""

    def __init__(self, named_params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.named_params = list(named_params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.steps = 0
        self.m = {name: np.zeros_like(p.values) for name, p in self.named_params}
        self.v = {name: np.zeros_like(p.values) for name, p in self.named_params}

    def zero_grad(self):
        for _, p in self.named_params:
            p.zero_grad()

    def step(self):
        self.steps += 1
        correct1 = 1.0 - self.beta1**self.steps
        correct2 = 1.0 - self.beta2**self.steps
        for name, p in self.named_params:
            g = p.grad
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.values -= self.lr * (m / correct1) / (np.sqrt(v / correct2) + self.eps)


def build_model(train_data, val_data, config: TrainConfig) -> ModelParams:
    """Infer peripherals from the data and initialize a fresh model."""
    n_classes = len(train_data[0].label)
    specs = infer_peripheral_specs(
        list(train_data) + list(val_data), config.d_model, config.emb_dim,
        seed=int(np.random.SeedSequence([config.seed, 0x9E81]).generate_state(1)[0]),
    )
    model_config = ModelConfig(
        d_model=config.d_model, n_heads=config.n_heads, d_k=config.d_k,
        head_hidden=config.head_hidden, n_classes=n_classes,
    )
    return init_model(model_config, specs, seed=config.seed)


def train(train_data, val_data, config: TrainConfig,
          model: ModelParams | None = None) -> TrainResult:
    """Optimize the chosen loss and record a tradeoff point per epoch.

    Deterministic given (data, config, seed): shuffling, LARM mask
    sampling and evaluation rollouts all derive from ``config.seed``.
    Raises :class:`TrainingDiverged` naming the epoch and batch if the
    loss stops being finite.
    """
    if not train_data:
        raise ValueError("training set is empty")
    if model is None:
        model = build_model(train_data, val_data, config)

    seed_seq = np.random.SeedSequence(config.seed)
    shuffle_rng, larm_rng, eval_root = [
        np.random.default_rng(s) for s in seed_seq.spawn(3)
    ]
    optimizer = Adam(model.named_parameters(), lr=config.lr)
    n = len(train_data)
    points = []
    epoch_losses = []

    for epoch in range(config.epochs):
        order = shuffle_rng.permutation(n)
        epoch_loss = 0.0
        for b, start in enumerate(range(0, n, config.batch_size)):
            batch = order[start : start + config.batch_size]
            optimizer.zero_grad()
            total = None
            for i in batch:
                seq = train_data[i]
                outputs = forward_all_t(model, seq)
                if config.objective == "cis":
                    loss = cis_loss(seq.label, outputs, config.mu, config.lam)
                else:
                    loss = larm_loss(seq.label, outputs, config.mu, config.rho,
                                     larm_rng)
                total = loss if total is None else nc.add(total, loss)
            batch_loss = nc.div(total, float(len(batch)))
            value = float(batch_loss.values)
            if not np.isfinite(value):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch} batch {b}"
                )
            nc.backward(batch_loss)
            optimizer.step()
            epoch_loss += value * len(batch)
        epoch_losses.append(epoch_loss / n)

        if val_data and (epoch + 1) % config.eval_every == 0:
            eval_rng = np.random.default_rng(
                np.random.SeedSequence([int(eval_root.integers(2**32)), epoch])
            )
            points.append(
                evaluate(model, val_data, config.objective, eval_rng,
                         mu=config.mu, trial=config.trial, epoch=epoch)
            )
    return TrainResult(model, points, epoch_losses)


def cell_seed(base_seed: int, mu_index: int, trial: int) -> int:
    """Stable per-cell seed independent of execution order."""
    return int(
        np.random.SeedSequence([base_seed, mu_index, trial]).generate_state(1)[0]
    )


def _run_cell(args):
    train_data, val_data, config = args
    try:
        return CellResult(config.mu, config.trial, train(train_data, val_data, config))
    except TrainingDiverged as err:
        return CellResult(config.mu, config.trial, None, error=str(err))


def sweep(train_data, val_data, base_config: TrainConfig, mu_list, trials,
          workers: int = 1) -> list[CellResult]:
    """Train one independent model per (mu, trial) cell.

    Cells use derived seeds so serial and parallel execution produce
    identical results; a diverged cell is reported in its result rather
    than aborting the rest of the grid.
    """
    if not mu_list:
        raise ValueError("mu_list is empty")
    if trials < 1:
        raise ValueError("trials must be >= 1")
    jobs = []
    for mu_index, mu in enumerate(mu_list):
        for trial in range(trials):
            config = replace(
                base_config, mu=mu, trial=trial,
                seed=cell_seed(base_config.seed, mu_index, trial),
            )
            jobs.append((train_data, val_data, config))
    if workers <= 1:
        return [_run_cell(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_cell, jobs))
