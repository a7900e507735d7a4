"""Reward formalism and the two training objectives.

The per-step reward charges a constant time penalty ``mu`` for every
element read and, on stopping, the cross-entropy of the classification.
CIS turns the induced optimal stopping time into fixed supervised
targets for the policy; LARM treats the stopping time as a random
variable with probabilities factored from the per-step policy and
minimizes the expected loss.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numcore as nc
from .sttransformer import StepOutputs

WAIT = "wait"
STOP = "stop"

_CE_FLOOR = 1e-12


@dataclass
class RewardParams:
    mu: float = 0.0  # time penalty per step

    def __post_init__(self):
        if self.mu < 0:
            raise ValueError("mu must be nonnegative")


@dataclass
class CISConfig:
    lam: float = 1.0  # scale on the policy loss term

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be nonnegative")


@dataclass
class LARMConfig:
    rho: float = 0.9  # per-step probability of forcing a wait during training

    def __post_init__(self):
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError("rho must lie in [0, 1]")


def _ce_value(y: np.ndarray, y_hat: np.ndarray) -> float:
    clipped = np.clip(y_hat, _CE_FLOOR, 1.0)
    return float(-(y * np.log(clipped)).sum())


def step_reward(y, y_hat, action, t, t_end, mu) -> float:
    """Reward for one step: -mu for waiting, -mu - CE when classifying.

    A wait at the final step is treated as a forced stop: the model must
    classify once the sequence is exhausted.
    """
    if action not in (WAIT, STOP):
        raise ValueError(f"unknown action {action!r}")
    y = np.asarray(y, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    if action == STOP or t == t_end:
        return -mu - _ce_value(y, y_hat)
    return -mu


def episode_return(y, y_hat_steps, stop_t, mu) -> float:
    """Total reward of waiting until ``stop_t`` then classifying there."""
    y_hat_steps = np.asarray(y_hat_steps, dtype=np.float64)
    if not 1 <= stop_t <= y_hat_steps.shape[0]:
        raise ValueError("stopping time outside 1..T_end")
    return -_ce_value(np.asarray(y, dtype=np.float64), y_hat_steps[stop_t - 1]) - mu * stop_t


def cis_optimal_stop(y, y_hat_steps, mu) -> int:
    """Earliest step maximizing the episode return, 1-based."""
    y = np.asarray(y, dtype=np.float64)
    y_hat_steps = np.asarray(y_hat_steps, dtype=np.float64)
    best_t = 1
    best_r = -np.inf
    for t in range(1, y_hat_steps.shape[0] + 1):
        r = -_ce_value(y, y_hat_steps[t - 1]) - mu * t
        if r > best_r:
            best_r = r
            best_t = t
    return best_t


def cis_target_policy(t_tilde: int, t_end: int) -> np.ndarray:
    """Wait with probability 1 before the target step, stop from it on."""
    if not 1 <= t_tilde <= t_end:
        raise ValueError("target stopping time outside 1..T_end")
    target = np.zeros((t_end, 2))
    target[: t_tilde - 1, 0] = 1.0
    target[t_tilde - 1 :, 1] = 1.0
    return target


def _matrix_ce(target: np.ndarray, probs: nc.Tensor) -> nc.Tensor:
    """Mean over rows of -sum(target_row * log probs_row)."""
    logp = nc.log(nc.clamp(probs, _CE_FLOOR, 1.0))
    return nc.div(nc.tsum(nc.mul(target, logp)), -float(target.shape[0]))


def cis_loss(y, outputs: StepOutputs, mu, lam) -> nc.Tensor:
    """Mean per-step classification CE plus ``lam`` times the policy CE.

    The optimal stopping time and its induced wait/stop targets are
    computed from the current predictions and then held fixed, so no
    gradient flows through the argmax.
    """
    y = np.asarray(y, dtype=np.float64)
    t_end = outputs.t_end
    y_matrix = np.broadcast_to(y, (t_end, y.size))
    loss_yhat = _matrix_ce(y_matrix, outputs.y_hat)
    t_tilde = cis_optimal_stop(y, outputs.y_hat.values, mu)
    target = cis_target_policy(t_tilde, t_end)
    loss_pi = _matrix_ce(target, outputs.pi)
    return nc.add(loss_yhat, nc.mul(loss_pi, float(lam)))


def sample_wait_force_mask(t_end: int, rho: float, rng) -> np.ndarray:
    """Independent per-step wait forcing with probability rho."""
    return rng.random(t_end) < rho


def larm_stop_probabilities(pi, wait_force_mask=None) -> nc.Tensor:
    """Probability of stopping at each step, factored from the policy.

    ``P(T) = prod_{t<T} w_t * s_T`` where ``w_t`` is the wait
    probability (forced to 1 where the mask is set, making a stop there
    impossible) and ``s_T`` the stop probability. The final step's stop
    factor is forced to 1 so the probabilities sum to 1.
    """
    pi = nc.as_tensor(pi)
    t_end = pi.shape[0]
    if wait_force_mask is None:
        forced = np.zeros(t_end, dtype=bool)
    else:
        forced = np.asarray(wait_force_mask, dtype=bool)
        if forced.shape != (t_end,):
            raise ValueError("wait-force mask must have one entry per step")

    per_step = []
    prefix = None  # running product of effective wait probabilities
    for t in range(t_end):
        wait_t = nc.getitem(pi, (t, 0))
        stop_t = nc.getitem(pi, (t, 1))
        if forced[t]:
            wait_t = nc.as_tensor(1.0)
            stop_t = nc.as_tensor(0.0)
        if t == t_end - 1:
            stop_t = nc.as_tensor(1.0)
        p_t = stop_t if prefix is None else nc.mul(prefix, stop_t)
        per_step.append(nc.reshape(p_t, (1,)))
        prefix = wait_t if prefix is None else nc.mul(prefix, wait_t)
    return nc.concat(per_step, axis=0)


def larm_loss(y, outputs: StepOutputs, mu, rho, rng) -> nc.Tensor:
    """Expected-CE loss over the stopping-time distribution.

    Samples the wait-force mask, mixes the per-step class distributions
    by the stopping probabilities, and adds the expected time penalty
    ``mu * E[T]``. Use :func:`larm_loss_with_mask` for a fixed mask.
    """
    mask = sample_wait_force_mask(outputs.t_end, rho, rng)
    return larm_loss_with_mask(y, outputs, mu, mask)


def larm_loss_with_mask(y, outputs: StepOutputs, mu, wait_force_mask) -> nc.Tensor:
    y = np.asarray(y, dtype=np.float64)
    p_stop = larm_stop_probabilities(outputs.pi, wait_force_mask)
    t_end = outputs.t_end
    mixture = nc.tsum(nc.mul(outputs.y_hat, nc.reshape(p_stop, (t_end, 1))), axis=0)
    ce = nc.cross_entropy(y, mixture)
    expected_t = nc.tsum(nc.mul(p_stop, np.arange(1, t_end + 1, dtype=np.float64)))
    return nc.add(ce, nc.mul(expected_t, float(mu)))
