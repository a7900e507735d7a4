"""Spatial-temporal transformer body with classifier and policy heads.

The body runs one causal multi-head self-attention block over the
temporal cache, then a gated multi-head attention block in which those
temporal rows query the spatial cache. The gate rescales each spatial
row's raw attention weight by the head-averaged temporal weight of the
row's source element and renormalizes, so strongly attended elements
also dominate spatially. Both heads (class distribution and wait/stop
policy) read the same body output row for every step, giving the full
per-step output matrix in a single causal pass.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import numcore as nc
from .encoder import CacheSet, PeripheralSpec, build_caches, make_peripheral

# division guard for fully-masked gate rows; kept large enough that its
# square stays a normal double inside the division backward
_GATE_FLOOR = 1e-150


@dataclass
class ModelConfig:
    d_model: int = 32
    n_heads: int = 8
    d_k: int = 64
    head_hidden: int = 100
    n_classes: int = 2
    pos_base: float = 10000.0

    def __post_init__(self):
        if self.d_model % 2 != 0:
            raise ValueError("d_model must be even for sinusoidal positions")


@dataclass
class AttentionBlock:
    """One multi-head attention block with residual + layer norm."""

    wq: nc.Tensor
    bq: nc.Tensor
    wk: nc.Tensor
    bk: nc.Tensor
    wv: nc.Tensor
    bv: nc.Tensor
    wo: nc.Tensor
    bo: nc.Tensor
    ln_gain: nc.Tensor
    ln_bias: nc.Tensor
    n_heads: int
    d_k: int

    def named_parameters(self, prefix):
        return [
            (f"{prefix}.wq", self.wq), (f"{prefix}.bq", self.bq),
            (f"{prefix}.wk", self.wk), (f"{prefix}.bk", self.bk),
            (f"{prefix}.wv", self.wv), (f"{prefix}.bv", self.bv),
            (f"{prefix}.wo", self.wo), (f"{prefix}.bo", self.bo),
            (f"{prefix}.ln_gain", self.ln_gain), (f"{prefix}.ln_bias", self.ln_bias),
        ]


@dataclass
class MlpHead:
    """Single hidden layer with ReLU, softmax applied at the call site."""

    w1: nc.Tensor
    b1: nc.Tensor
    w2: nc.Tensor
    b2: nc.Tensor

    def named_parameters(self, prefix):
        return [
            (f"{prefix}.w1", self.w1), (f"{prefix}.b1", self.b1),
            (f"{prefix}.w2", self.w2), (f"{prefix}.b2", self.b2),
        ]

    def __call__(self, x: nc.Tensor) -> nc.Tensor:
        hidden = nc.relu(nc.linear(x, self.w1, self.b1))
        return nc.softmax(nc.linear(hidden, self.w2, self.b2))


@dataclass
class ModelParams:
    """All trainable state: peripherals, two attention blocks, two heads."""

    config: ModelConfig
    peripherals: dict[str, PeripheralSpec]
    temporal: AttentionBlock
    gated: AttentionBlock
    classifier: MlpHead
    policy: MlpHead

    def named_parameters(self):
        named = []
        for tag in sorted(self.peripherals):
            named.extend(self.peripherals[tag].named_parameters())
        named.extend(self.temporal.named_parameters("temporal"))
        named.extend(self.gated.named_parameters("gated"))
        named.extend(self.classifier.named_parameters("classifier"))
        named.extend(self.policy.named_parameters("policy"))
        return named

    def parameters(self):
        return [tensor for _, tensor in self.named_parameters()]


@dataclass
class StepOutputs:
    """Per-step class distributions and wait/stop action distributions."""

    y_hat: nc.Tensor  # (T_end, C); rows sum to 1
    pi: nc.Tensor  # (T_end, 2); column 0 = wait, column 1 = stop

    @property
    def t_end(self) -> int:
        return self.y_hat.shape[0]


def _glorot(rng, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return nc.Tensor(rng.uniform(-limit, limit, size=(fan_in, fan_out)),
                     requires_grad=True)


def _zeros(n):
    return nc.Tensor(np.zeros(n), requires_grad=True)


def _attention_block(rng, d_model, n_heads, d_k) -> AttentionBlock:
    width = n_heads * d_k
    return AttentionBlock(
        wq=_glorot(rng, d_model, width), bq=_zeros(width),
        wk=_glorot(rng, d_model, width), bk=_zeros(width),
        wv=_glorot(rng, d_model, width), bv=_zeros(width),
        wo=_glorot(rng, width, d_model), bo=_zeros(d_model),
        ln_gain=nc.Tensor(np.ones(d_model), requires_grad=True),
        ln_bias=_zeros(d_model),
        n_heads=n_heads, d_k=d_k,
    )


def init_model(config: ModelConfig, peripherals: dict[str, PeripheralSpec],
               seed: int) -> ModelParams:
    """Fresh model with Glorot-initialized weights; deterministic per seed."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5EED]))
    for spec in peripherals.values():
        if spec.d_model != config.d_model:
            raise ValueError("peripheral d_model does not match model config")
    temporal = _attention_block(rng, config.d_model, config.n_heads, config.d_k)
    gated = _attention_block(rng, config.d_model, config.n_heads, config.d_k)
    classifier = MlpHead(
        w1=_glorot(rng, config.d_model, config.head_hidden), b1=_zeros(config.head_hidden),
        w2=_glorot(rng, config.head_hidden, config.n_classes), b2=_zeros(config.n_classes),
    )
    policy = MlpHead(
        w1=_glorot(rng, config.d_model, config.head_hidden), b1=_zeros(config.head_hidden),
        w2=_glorot(rng, config.head_hidden, 2), b2=_zeros(2),
    )
    return ModelParams(config, peripherals, temporal, gated, classifier, policy)


def positional_encoding(t_max: int, d_model: int, base: float = 10000.0) -> np.ndarray:
    """Sinusoidal position matrix: dims (2i, 2i+1) = (sin, cos)(p / base^(2i/d))."""
    if d_model % 2 != 0:
        raise ValueError("positional encoding requires an even d_model")
    positions = np.arange(t_max)[:, None]
    rates = base ** (np.arange(0, d_model, 2) / d_model)
    angles = positions / rates[None, :]
    enc = np.empty((t_max, d_model))
    enc[:, 0::2] = np.sin(angles)
    enc[:, 1::2] = np.cos(angles)
    return enc


def _split_heads(x: nc.Tensor, n_heads: int, d_k: int) -> nc.Tensor:
    rows = x.shape[0]
    return nc.transpose(nc.reshape(x, (rows, n_heads, d_k)), (1, 0, 2))


def _merge_heads(x: nc.Tensor) -> nc.Tensor:
    n_heads, rows, d_k = x.shape
    return nc.reshape(nc.transpose(x, (1, 0, 2)), (rows, n_heads * d_k))


def temporal_attention(block: AttentionBlock, x: nc.Tensor):
    """Causal multi-head self-attention over the temporal cache.

    Returns (layer-normed output, head-averaged weights, per-head
    weights). The query at position t attends to positions <= t only.
    """
    t = x.shape[0]
    q = _split_heads(nc.linear(x, block.wq, block.bq), block.n_heads, block.d_k)
    k = _split_heads(nc.linear(x, block.wk, block.bk), block.n_heads, block.d_k)
    v = _split_heads(nc.linear(x, block.wv, block.bv), block.n_heads, block.d_k)
    causal = np.tril(np.ones((t, t), dtype=bool))
    context, weights = nc.scaled_dot_attention(q, k, v, mask=causal)
    projected = nc.linear(_merge_heads(context), block.wo, block.bo)
    out = nc.layer_norm(nc.add(x, projected), block.ln_gain, block.ln_bias)
    return out, nc.tmean(weights, axis=0), weights


def gated_spatial_attention(block: AttentionBlock, queries: nc.Tensor,
                            spatial: nc.Tensor | None, origin_map,
                            temporal_weights: nc.Tensor):
    """Spatial attention rescaled by each row's source-element weight.

    For the query at step t only spatial rows whose origin element is at
    or before t are admissible. Raw attention probabilities over those
    rows are multiplied by the head-averaged temporal weight of their
    origin and renormalized. Queries with no admissible rows pass
    through on the residual path alone (attention term exactly zero).

    Returns (layer-normed output, gated weights or None when the
    spatial cache is empty).
    """
    t = queries.shape[0]
    if spatial is None or spatial.shape[0] == 0:
        out = nc.layer_norm(queries, block.ln_gain, block.ln_bias)
        return out, None
    origins = np.asarray(origin_map, dtype=np.intp)
    admissible = origins[None, :] <= np.arange(t)[:, None]  # (t, S)

    q = _split_heads(nc.linear(queries, block.wq, block.bq),
                     block.n_heads, block.d_k)
    k = _split_heads(nc.linear(spatial, block.wk, block.bk),
                     block.n_heads, block.d_k)
    v = _split_heads(nc.linear(spatial, block.wv, block.bv),
                     block.n_heads, block.d_k)
    scores = nc.div(nc.matmul(q, nc.transpose(k, (0, 2, 1))), float(np.sqrt(block.d_k)))
    raw = nc.softmax(scores, mask=admissible, empty_rows="zero")  # (H, t, S)

    gate = nc.take(temporal_weights, origins, axis=1)  # (t, S)
    scaled = nc.mul(raw, gate)
    denom = nc.clamp(nc.tsum(scaled, axis=-1, keepdims=True), lo=_GATE_FLOOR)
    gated = nc.div(scaled, denom)

    context = nc.linear(_merge_heads(nc.matmul(gated, v)), block.wo, block.bo)
    has_rows = admissible.any(axis=1).astype(np.float64)[:, None]
    out = nc.layer_norm(nc.add(queries, nc.mul(context, has_rows)),
                        block.ln_gain, block.ln_bias)
    return out, gated


def body_forward(model: ModelParams, caches: CacheSet) -> nc.Tensor:
    """Transformer body over prebuilt caches; one output row per step."""
    pe = positional_encoding(caches.n_temporal, model.config.d_model,
                             model.config.pos_base)
    x = nc.add(caches.temporal, pe)
    t_out, w_mean, _ = temporal_attention(model.temporal, x)
    g_out, _ = gated_spatial_attention(model.gated, t_out, caches.spatial,
                                       caches.origin_map, w_mean)
    return g_out


def forward_all_t(model: ModelParams, sequence) -> StepOutputs:
    """Class and policy distributions for every step of one sequence.

    Row t depends only on elements up to and including t, so the matrix
    equals what per-prefix recomputation would produce.
    """
    caches = build_caches(sequence.elements, model.peripherals)
    body = body_forward(model, caches)
    return StepOutputs(y_hat=model.classifier(body), pi=model.policy(body))


# ---------------------------------------------------------------------------
# checkpointing


def save_checkpoint(model: ModelParams, path):
    """Serialize config, peripheral layout and all parameters as JSON."""
    peripherals = {}
    for tag, spec in model.peripherals.items():
        peripherals[tag] = {
            "kind": spec.kind,
            "vocab_size": spec.vocab_size,
            "emb_dim": spec.emb_dim,
            "grid_h": spec.grid_h,
            "grid_w": spec.grid_w,
            "patch": spec.patch,
            "cardinalities": list(spec.cardinalities),
            "in_dim": spec.in_dim,
        }
    params = {
        name: {"shape": list(tensor.shape), "data": tensor.values.reshape(-1).tolist()}
        for name, tensor in model.named_parameters()
    }
    payload = {
        "format": "earlyseq-checkpoint-v1",
        "config": {
            "d_model": model.config.d_model,
            "n_heads": model.config.n_heads,
            "d_k": model.config.d_k,
            "head_hidden": model.config.head_hidden,
            "n_classes": model.config.n_classes,
            "pos_base": model.config.pos_base,
        },
        "peripherals": peripherals,
        "params": params,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True)


def load_checkpoint(path) -> ModelParams:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("format") != "earlyseq-checkpoint-v1":
        raise ValueError("not an earlyseq checkpoint")
    config = ModelConfig(**payload["config"])
    rng = np.random.default_rng(0)
    peripherals = {}
    for tag, meta in payload["peripherals"].items():
        peripherals[tag] = make_peripheral(
            tag, meta["kind"], config.d_model, rng,
            vocab_size=meta["vocab_size"], emb_dim=meta["emb_dim"],
            grid_h=meta["grid_h"], grid_w=meta["grid_w"], patch=meta["patch"],
            cardinalities=tuple(meta["cardinalities"]), in_dim=meta["in_dim"],
        )
    model = init_model(config, peripherals, seed=0)
    stored = payload["params"]
    for name, tensor in model.named_parameters():
        entry = stored[name]
        values = np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"])
        if values.shape != tensor.shape:
            raise ValueError(f"checkpoint shape mismatch for {name}")
        tensor.values[...] = values
    return model
