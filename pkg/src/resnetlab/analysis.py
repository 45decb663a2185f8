"""Scaling diagnostics over trained runs.

Layer-indexed weights are treated as step functions on [0, 1] via s = k/L
and the depth rescaling sqrt(L) * A_k, so runs of different depth become
comparable paths: this module fits power laws across depth, measures
steps-to-epsilon convergence, estimates 2-variation of the rescaled paths
and computes sup distances between consecutive depths.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError
from .network import Weights
from .training import RunLog

EXHAUSTIVE_POINT_LIMIT = 20


@dataclass(frozen=True)
class ScalingFit:
    """Least-squares fit of log(value) = intercept - exponent * log(L)."""

    exponent: float
    intercept: float
    r_squared: float


def fit_power_law(points) -> ScalingFit:
    """Fit value ~ L**(-exponent) over (L, value) pairs; values must be > 0."""
    pts = [(float(l), float(v)) for l, v in points]
    if len({l for l, _ in pts}) < 2:
        raise InvalidInputError("need at least 2 distinct L values")
    if any(v <= 0 for _, v in pts):
        raise InvalidInputError("power-law fit requires positive values")
    log_l = np.log([l for l, _ in pts])
    log_v = np.log([v for _, v in pts])
    slope, intercept = np.polyfit(log_l, log_v, 1)
    fitted = slope * log_l + intercept
    ss_res = float(np.sum((log_v - fitted) ** 2))
    ss_tot = float(np.sum((log_v - np.mean(log_v)) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return ScalingFit(float(-slope), float(intercept), r2)


def steps_to_epsilon(log, eps_grid) -> list[tuple[float, int | None]]:
    """First logged step with loss below each epsilon (None if never reached).

    Accepts a RunLog or a plain loss sequence indexed by step.
    """
    if isinstance(log, RunLog):
        ts, losses = np.asarray(log.t), np.asarray(log.loss)
    else:
        losses = np.asarray(log, dtype=np.float64)
        ts = np.arange(len(losses))
    out = []
    for eps in eps_grid:
        eps = float(eps)
        if eps <= 0:
            raise InvalidInputError("epsilon grid must be positive")
        hits = np.nonzero(losses < eps)[0]
        out.append((eps, int(ts[hits[0]]) if len(hits) else None))
    return out


@dataclass(frozen=True)
class PathFunction:
    """Matrix-valued step function sampled at strictly increasing s in [0, 1]."""

    s: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.s, dtype=np.float64)
        values = np.asarray(self.values, dtype=np.float64)
        if s.ndim != 1 or len(s) == 0 or len(s) != len(values):
            raise InvalidInputError("need one value per sample point")
        if np.any(np.diff(s) <= 0):
            raise InvalidInputError("sample points must be strictly increasing")
        if not (np.all(np.isfinite(s)) and np.all(np.isfinite(values))):
            raise InvalidInputError("path has non-finite entries")
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "values", values)

    @property
    def points(self) -> int:
        return len(self.s)


def rescaled_path(weights: Weights) -> PathFunction:
    """s = k/L against sqrt(L) * A_k: the depth-rescaled weight path."""
    L = weights.depth
    s = np.arange(1, L + 1) / L
    return PathFunction(s, np.sqrt(L) * weights.layers)


def _increment_scores(values: np.ndarray) -> np.ndarray:
    flat = values.reshape(len(values), -1)
    diff = flat[None, :, :] - flat[:, None, :]
    return np.sum(diff * diff, axis=-1)


def _partition_sum(scores: np.ndarray, idx) -> float:
    return float(sum(scores[a, b] for a, b in zip(idx[:-1], idx[1:])))


def two_variation(path: PathFunction, mode: str = "dyadic") -> float:
    """Supremum over partitions of the summed squared Frobenius increments.

    "exhaustive" enumerates every subpartition of the sample grid (the
    oracle; refuses paths with more than 20 points). "dyadic" maximizes over
    the full grid and its dyadic coarsenings only, a lower bound that is
    cheap at any depth.
    """
    if path.points == 1:
        return 0.0
    scores = _increment_scores(path.values)
    last = path.points - 1

    if mode == "exhaustive":
        if path.points > EXHAUSTIVE_POINT_LIMIT:
            raise InvalidInputError(
                f"exhaustive enumeration limited to {EXHAUSTIVE_POINT_LIMIT} points")
        interior = list(range(1, last))
        best = scores[0, last]
        for mask in range(1, 1 << len(interior)):
            idx = [0]
            idx.extend(p for i, p in enumerate(interior) if mask >> i & 1)
            idx.append(last)
            best = max(best, _partition_sum(scores, idx))
        return float(best)

    if mode != "dyadic":
        raise InvalidInputError(f"unknown mode {mode!r}")
    best = 0.0
    stride = 1
    while True:
        idx = list(range(0, last + 1, stride))
        if idx[-1] != last:
            idx.append(last)
        best = max(best, _partition_sum(scores, idx))
        if len(idx) == 2:
            return float(best)
        stride *= 2


def _value_at(weights: Weights, s: float) -> np.ndarray:
    # floor(L*s) with a nudge so grid points shared across depths land exactly
    k = int(np.floor(weights.depth * s + 1e-9))
    k = min(weights.depth, max(1, k))
    return np.sqrt(weights.depth) * weights.layers[k - 1]


def scaling_limit_distance(runs: list[tuple[int, Weights]]) -> list[tuple[tuple[int, int], float]]:
    """Sup distance of rescaled weight paths between consecutive depths.

    Both paths are evaluated piecewise-constantly on the union of their layer
    grids, and the max over that grid of |sqrt(L) A_{floor(Ls)} -
    sqrt(L') A_{floor(L's)}|_F is reported per consecutive depth pair.
    """
    if len(runs) < 2:
        raise InvalidInputError("need at least two depths")
    runs = sorted(runs, key=lambda lw: lw[0])
    widths = {w.width for _, w in runs}
    if len(widths) != 1:
        raise InvalidInputError("all runs must share the width d")
    out = []
    for (l1, w1), (l2, w2) in zip(runs[:-1], runs[1:]):
        grid = np.union1d(np.arange(1, l1 + 1) / l1, np.arange(1, l2 + 1) / l2)
        sup = 0.0
        for s in grid:
            gap = _value_at(w1, float(s)) - _value_at(w2, float(s))
            sup = max(sup, float(np.linalg.norm(gap)))
        out.append(((l1, l2), sup))
    return out


def mean_layer_norm(weights: Weights) -> float:
    return float(np.mean(np.linalg.norm(weights.layers, axis=(1, 2))))


@dataclass(frozen=True)
class TotalScaling:
    """Depth exponent of the final weights plus the fixed scale exponent."""

    weight_fit: ScalingFit
    alpha0: float

    @property
    def total(self) -> float:
        return self.alpha0 + self.weight_fit.exponent


def total_scaling(runs: list[tuple[int, Weights]], alpha0: float) -> TotalScaling:
    """Fit mean layer Frobenius norm ~ L**(-beta_T) and return alpha0 + beta_T."""
    if len(runs) < 3:
        raise InvalidInputError("need at least three depths")
    fit = fit_power_law([(l, mean_layer_norm(w)) for l, w in runs])
    return TotalScaling(fit, alpha0)


def entry_scatter(runs: list[tuple[int, Weights]], m: int, n: int) -> list[tuple[int, float, float]]:
    """Rows (L, k/L, sqrt(L) * A_k[m, n]) for a fixed matrix entry."""
    rows = []
    for l, w in sorted(runs, key=lambda lw: lw[0]):
        if not (0 <= m < w.width and 0 <= n < w.width):
            raise InvalidInputError(f"entry ({m}, {n}) out of range for width {w.width}")
        scale = np.sqrt(w.depth)
        for k in range(1, w.depth + 1):
            rows.append((l, k / w.depth, float(scale * w.layers[k - 1, m, n])))
    return rows
