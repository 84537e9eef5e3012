"""Attention-based client scoring, selection rules, threshold schedules and baselines.

Pipeline for one round:

    probe predictions of every registry model
      -> pairwise scaled KL distances d           (pairwise_distances)
      -> row-softmax of -d, compatibility c       (compatibility)
      -> S = c @ v with v the per-client losses   (attention_scores)
      -> mask via lambda/eta or cumulative tau    (select_by_lambda / select_by_threshold)
      -> score-proportional weights over the mask (aggregation_weights)
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from fedsel import kernels
from fedsel.nn import (
    PROB_FLOOR,
    LabeledDataset,
    ModelParams,
    UnlabeledDataset,
    ce_loss,
    forward_probs,
)

POLICY_KINDS = ("fedabc_lambda", "fedabc_threshold", "fedavg_all", "cho_loss_rank")
SCHEDULE_SHAPES = ("linear", "concave", "convex")

TAU_START = 0.2
TAU_STEP = 0.1


@dataclass
class ScoreReport:
    round: int
    distances: np.ndarray
    compatibility: np.ndarray
    values: np.ndarray
    scores: np.ndarray


@dataclass
class SelectionDecision:
    mask: np.ndarray
    weights: np.ndarray | None = None
    # tau_t for the threshold rule, lambda/eta_t for the lambda rule,
    # target fraction n_t/K for Cho, 1.0 for FedAvg
    threshold: float = float("nan")

    @property
    def num_selected(self) -> int:
        return int(self.mask.sum())

    def with_weights(self, weights: np.ndarray) -> "SelectionDecision":
        return SelectionDecision(self.mask, weights, self.threshold)


@dataclass(frozen=True)
class ThresholdSchedule:
    """Non-decreasing selection threshold over T rounds.

    ``coef`` is the growth coefficient of the concave (log) or convex (quadratic)
    shape. Leave it as None to calibrate it so the mean threshold over the run
    matches the linear schedule's mean.
    """

    shape: str = "linear"
    coef: float | None = None
    cap: float = 1.0

    def __post_init__(self):
        if self.shape not in SCHEDULE_SHAPES:
            raise ValueError(f"unknown schedule shape {self.shape!r}; expected one of {SCHEDULE_SHAPES}")
        if not self.cap > 0:
            raise ValueError(f"cap must be > 0, got {self.cap}")


@dataclass(frozen=True)
class SelectionPolicy:
    kind: str = "fedabc_threshold"
    lam: float = 0.1
    # eta_t = ((t + 1) / T) ** eta_power
    eta_power: float = 1.0
    schedule: ThresholdSchedule = field(default_factory=ThresholdSchedule)
    cho_counts: tuple[int, ...] | None = None
    # fedabc only: "score" weights by normalized scores, "uniform" by 1/|selected|
    weighting: str = "score"
    # fedabc only: still score every client, but select all of them
    force_all: bool = False

    def __post_init__(self):
        if self.kind not in POLICY_KINDS:
            raise ValueError(f"unknown policy {self.kind!r}; expected one of {POLICY_KINDS}")
        if not self.lam > 0:
            raise ValueError(f"lambda must be > 0, got {self.lam}")
        if self.weighting not in ("score", "uniform"):
            raise ValueError(f"weighting must be 'score' or 'uniform', got {self.weighting!r}")

    @property
    def uses_scores(self) -> bool:
        return self.kind.startswith("fedabc")


def kl_divergence(p: Sequence[float], q: Sequence[float]) -> float:
    """(1/N) * sum_n p_n ln(p_n / q_n), q floored at 1e-12 and 0 ln 0 = 0."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape or p.ndim != 1:
        raise ValueError(f"distribution shapes differ: {p.shape} vs {q.shape}")
    nz = p > 0
    q = np.maximum(q, PROB_FLOOR)
    return float(np.sum(p[nz] * np.log(p[nz] / q[nz])) / p.shape[0])


def probe_predictions(registry: Sequence[ModelParams], probe: UnlabeledDataset) -> np.ndarray:
    """Softmax outputs of every registry model on the probe set, shape (K, M, N)."""
    if len(registry) == 0:
        raise ValueError("registry is empty")
    if len(probe) == 0:
        raise ValueError("probe set is empty")
    return np.stack([forward_probs(m, probe.features) for m in registry])


def pairwise_distances(registry: Sequence[ModelParams], probe: UnlabeledDataset) -> np.ndarray:
    return kernels.pairwise_kl(probe_predictions(registry, probe))


def compatibility(d: np.ndarray) -> np.ndarray:
    """Row-wise softmax of -d; the self term exp(-d[k, k]) stays in the sum."""
    d = np.asarray(d, dtype=np.float64)
    if d.ndim != 2 or d.shape[0] != d.shape[1]:
        raise ValueError(f"distance matrix must be square, got {d.shape}")
    if not np.all(np.isfinite(d)) or np.any(d < 0):
        raise ValueError("distances must be finite and non-negative")
    z = -d
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def client_value(client_data: LabeledDataset, global_params: ModelParams) -> float:
    return ce_loss(global_params, client_data)


def attention_scores(c: np.ndarray, v: Sequence[float]) -> np.ndarray:
    c = np.asarray(c, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if c.ndim != 2 or v.ndim != 1 or c.shape != (v.shape[0], v.shape[0]):
        raise ValueError(f"shape mismatch: compatibility {c.shape}, values {v.shape}")
    if np.any(v < 0):
        raise ValueError("values must be non-negative")
    return c @ v


def score_report(
    t: int,
    registry: Sequence[ModelParams],
    probe: UnlabeledDataset,
    values: Sequence[float],
) -> ScoreReport:
    d = pairwise_distances(registry, probe)
    c = compatibility(d)
    v = np.asarray(values, dtype=np.float64)
    return ScoreReport(t, d, c, v, attention_scores(c, v))


def _argmax_low(s: np.ndarray) -> int:
    return int(np.argmax(s))


def select_by_lambda(scores: Sequence[float], lam: float, eta_t: float) -> SelectionDecision:
    """m_k = 1 iff S_k > lam / eta_t; falls back to the single best client."""
    if not lam > 0:
        raise ValueError(f"lambda must be > 0, got {lam}")
    if not 0 < eta_t <= 1:
        raise ValueError(f"eta_t must be in (0, 1], got {eta_t}")
    s = np.asarray(scores, dtype=np.float64)
    cut = lam / eta_t
    mask = (s > cut).astype(np.int64)
    if not mask.any():
        mask[_argmax_low(s)] = 1
    return SelectionDecision(mask, threshold=cut)


def select_by_threshold(scores: Sequence[float], tau_t: float) -> SelectionDecision:
    """Greedy: take clients by normalized score, best first, until the running sum exceeds tau_t."""
    if not 0 < tau_t <= 1:
        raise ValueError(f"tau_t must be in (0, 1], got {tau_t}")
    s = np.asarray(scores, dtype=np.float64)
    k = s.shape[0]
    total = s.sum()
    # a unit-sum running total can never exceed 1; don't let rounding decide
    if total <= 0 or tau_t >= 1.0:
        return SelectionDecision(np.ones(k, dtype=np.int64), threshold=tau_t)
    shat = s / total
    order = np.argsort(-shat, kind="stable")
    mask = np.zeros(k, dtype=np.int64)
    cum = 0.0
    for idx in order:
        mask[idx] = 1
        cum += shat[idx]
        if cum > tau_t:
            break
    return SelectionDecision(mask, threshold=tau_t)


def eta_at(t: int, num_rounds: int, power: float = 1.0) -> float:
    """Temporal weight for schedule index t in [0, T): ((t + 1) / T) ** power."""
    if not 0 <= t < num_rounds:
        raise ValueError(f"round index {t} outside [0, {num_rounds})")
    return ((t + 1) / num_rounds) ** power


def _linear_tau(t: int, cap: float) -> float:
    # integer step count keeps 0.2 + 0.1 * j exact to the printed decimals
    return min(round(TAU_START + TAU_STEP * (t // 2), 10), cap)


def _shape_tau(shape: str, coef: float, t: int, cap: float) -> float:
    if shape == "concave":
        return min(coef * math.log1p(t) + TAU_START, cap)
    return min(coef * t * t + TAU_START, cap)


def calibrate_coefficient(shape: str, num_rounds: int, cap: float = 1.0) -> float:
    """Bisect the concave/convex coefficient so its mean tau over [0, T) equals the linear mean."""
    if shape not in ("concave", "convex"):
        raise ValueError(f"no coefficient to calibrate for shape {shape!r}")
    target = np.mean([_linear_tau(t, cap) for t in range(num_rounds)])

    def mean_tau(coef: float) -> float:
        return float(np.mean([_shape_tau(shape, coef, t, cap) for t in range(num_rounds)]))

    lo, hi = 0.0, 1.0
    while mean_tau(hi) < target and hi < 1e6:
        hi *= 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mean_tau(mid) < target:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-15:
            break
    return 0.5 * (lo + hi)


def threshold_at(schedule: ThresholdSchedule, t: int, num_rounds: int) -> float:
    if not 0 <= t < num_rounds:
        raise ValueError(f"round index {t} outside [0, {num_rounds})")
    if schedule.shape == "linear":
        return _linear_tau(t, schedule.cap)
    coef = schedule.coef
    if coef is None:
        coef = calibrate_coefficient(schedule.shape, num_rounds, schedule.cap)
    return _shape_tau(schedule.shape, coef, t, schedule.cap)


def threshold_series(schedule: ThresholdSchedule, num_rounds: int) -> list[float]:
    if schedule.shape != "linear" and schedule.coef is None:
        coef = calibrate_coefficient(schedule.shape, num_rounds, schedule.cap)
        schedule = ThresholdSchedule(schedule.shape, coef, schedule.cap)
    return [threshold_at(schedule, t, num_rounds) for t in range(num_rounds)]


def aggregation_weights(scores: Sequence[float], mask: Sequence[int]) -> np.ndarray:
    """w_k = m_k S_k / sum_j m_j S_j; uniform over the mask if every selected score is 0."""
    s = np.asarray(scores, dtype=np.float64)
    m = np.asarray(mask)
    if s.shape != m.shape:
        raise ValueError(f"shape mismatch: scores {s.shape}, mask {m.shape}")
    if not m.any():
        raise ValueError("mask selects no client")
    if np.any(s < 0):
        raise ValueError("scores must be non-negative")
    masked = np.where(m > 0, s, 0.0)
    total = masked.sum()
    if total <= 0:
        return (m > 0).astype(np.float64) / int((m > 0).sum())
    return masked / total


def uniform_weights(mask: Sequence[int]) -> np.ndarray:
    m = (np.asarray(mask) > 0).astype(np.float64)
    return m / m.sum()


def baseline_select_all(num_clients: int) -> SelectionDecision:
    if num_clients < 1:
        raise ValueError(f"num_clients must be >= 1, got {num_clients}")
    mask = np.ones(num_clients, dtype=np.int64)
    return SelectionDecision(mask, uniform_weights(mask), threshold=1.0)


def baseline_cho_select(values: Sequence[float], n_t: int) -> SelectionDecision:
    """Top-n_t clients by reported loss, uniform weights."""
    v = np.asarray(values, dtype=np.float64)
    k = v.shape[0]
    if not 1 <= n_t <= k:
        raise ValueError(f"n_t must be in [1, {k}], got {n_t}")
    top = np.argsort(-v, kind="stable")[:n_t]
    mask = np.zeros(k, dtype=np.int64)
    mask[top] = 1
    return SelectionDecision(mask, uniform_weights(mask), threshold=n_t / k)


def default_cho_counts(num_rounds: int, num_clients: int) -> tuple[int, ...]:
    """Cho et al. participation curve: 20% at the first round, +10% every other round.

    The standard K=10, T=20 curve is 2,3,3,4,4,5,5,6,6,7,7,8,8,9,9,9,10,10,10,10:
    a +10% step every two rounds after the first, with one hold at 90%.
    """
    standard = (2, 3, 3, 4, 4, 5, 5, 6, 6, 7, 7, 8, 8, 9, 9, 9, 10, 10, 10, 10)
    if num_rounds == len(standard) and num_clients == 10:
        return standard
    out = []
    for t in range(num_rounds):
        frac = min(0.2 + 0.1 * ((t + 1) // 2), 1.0)
        out.append(max(1, min(num_clients, int(round(frac * num_clients)))))
    return tuple(out)
