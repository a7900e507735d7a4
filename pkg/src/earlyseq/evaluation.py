"""Inference rollouts, Pareto frontier extraction and tradeoff AUC."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

import numpy as np

from . import numcore as nc
from .sttransformer import ModelParams, forward_all_t


@dataclass
class TradeoffPoint:
    """(mean classification time, accuracy) with sweep bookkeeping tags."""

    mean_t: float
    accuracy: float
    mu: float = 0.0
    trial: int = 0
    epoch: int = 0


@dataclass
class Frontier:
    """Non-dominated tradeoff points sorted by ascending mean time."""

    points: list[TradeoffPoint]
    auc: float | None = None


@dataclass
class RolloutRecord:
    stop_t: int
    predicted: int
    true_class: int
    signature: tuple[str, ...]

    @property
    def correct(self) -> bool:
        return self.predicted == self.true_class


def rollout_cis(model: ModelParams, sequence) -> tuple[int, int]:
    """Deterministic rollout: stop at the first strict stop-argmax.

    Ties keep waiting; the final step is a forced stop. Returns the
    1-based stopping time and the predicted class there.
    """
    with nc.no_grad():
        outputs = forward_all_t(model, sequence)
    pi = outputs.pi.values
    t_end = pi.shape[0]
    stop_t = t_end
    for t in range(t_end):
        if pi[t, 1] > pi[t, 0]:
            stop_t = t + 1
            break
    predicted = int(np.argmax(outputs.y_hat.values[stop_t - 1]))
    return stop_t, predicted


def rollout_larm(model: ModelParams, sequence, rng) -> tuple[int, int]:
    """Stochastic rollout: sample wait/stop per step, classify at the stop."""
    with nc.no_grad():
        outputs = forward_all_t(model, sequence)
    pi = outputs.pi.values
    t_end = pi.shape[0]
    stop_t = t_end
    for t in range(t_end):
        if rng.random() < pi[t, 1]:
            stop_t = t + 1
            break
    predicted = int(np.argmax(outputs.y_hat.values[stop_t - 1]))
    return stop_t, predicted


def run_rollouts(model: ModelParams, data, method: str, rng=None) -> list[RolloutRecord]:
    """One rollout per sample; LARM needs an rng, CIS ignores it."""
    if method not in ("cis", "larm"):
        raise ValueError(f"unknown method {method!r}")
    records = []
    for seq in data:
        if method == "cis":
            stop_t, predicted = rollout_cis(model, seq)
        else:
            stop_t, predicted = rollout_larm(model, seq, rng)
        records.append(
            RolloutRecord(stop_t, predicted, int(np.argmax(seq.label)), seq.signature)
        )
    return records


def evaluate(model: ModelParams, data, method: str, rng=None,
             mu=0.0, trial=0, epoch=0, rollouts_per_sample=1) -> TradeoffPoint:
    """Mean stopping time and accuracy of the method over a validation set.

    One rollout per sample by default; ``rollouts_per_sample > 1``
    averages repeated stochastic rollouts (only meaningful for LARM).
    """
    if not data:
        raise ValueError("validation set is empty")
    records = []
    for _ in range(rollouts_per_sample):
        records.extend(run_rollouts(model, data, method, rng))
    mean_t = float(np.mean([r.stop_t for r in records]))
    accuracy = float(np.mean([r.correct for r in records]))
    return TradeoffPoint(mean_t, accuracy, mu=mu, trial=trial, epoch=epoch)


def pareto_frontier(points) -> Frontier:
    """Drop every dominated point (lower time and higher accuracy win).

    Points sharing a mean time collapse to the best-accuracy one, so the
    surviving accuracies are strictly increasing along ascending time.
    """
    points = list(points)
    if not points:
        raise ValueError("empty input")
    ordered = sorted(points, key=lambda p: (p.mean_t, -p.accuracy))
    frontier = []
    best = -np.inf
    for point in ordered:
        if point.accuracy > best:
            frontier.append(point)
            best = point.accuracy
    return Frontier(points=frontier)


def frontier_auc(frontier: Frontier, t_end: int, chance_level: float = 0.5) -> float:
    """Area under the frontier's accuracy step function on normalized time.

    Time is mapped to x = (mean_t - 1) / (t_end - 1). The step function
    holds the accuracy of the rightmost point at or left of x, is the
    chance level before the first point, and stays flat after the last.
    """
    if t_end < 2:
        raise ValueError("t_end must be at least 2")
    if not frontier.points:
        raise ValueError("empty frontier")
    xs = [(p.mean_t - 1.0) / (t_end - 1.0) for p in frontier.points]
    accs = [p.accuracy for p in frontier.points]
    auc = chance_level * xs[0]
    for i in range(len(xs)):
        right = xs[i + 1] if i + 1 < len(xs) else 1.0
        auc += accs[i] * (right - xs[i])
    return auc


def stopping_time_histogram(records):
    """Counts per stopping time plus per-(modality pattern, T) flow counts."""
    records = list(records)
    if not records:
        raise ValueError("no rollout results")
    histogram = Counter(r.stop_t for r in records)
    flows = Counter((r.signature, r.stop_t) for r in records)
    return histogram, flows
