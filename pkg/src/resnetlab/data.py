"""Synthetic datasets on the unit sphere and the admissibility checks.

A dataset is feasible when its inputs are pairwise nearly orthogonal:
max_{i != j} |<x_i, x_j>| <= exp(-4 c0) / (8 N). Sampling simply retries
whole draws until that holds, which mirrors the probabilistic feasibility
argument (succeeds quickly once d is comfortably larger than N^2-ish,
certainly for d > N^4).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .autograd import objective
from .errors import InfeasibleDatasetError, InvalidInputError
from .network import TANH, Activation, NetworkConfig, Weights, forward_batch

DEFAULT_MAX_RETRIES = 1000
UNIT_NORM_TOL = 1e-12


@dataclass(frozen=True)
class AssumptionParams:
    """Problem-size constants entering every admissibility threshold."""

    c0: float
    N: int
    d: int
    L: int

    def __post_init__(self):
        if self.c0 <= 0:
            raise InvalidInputError("c0 must be positive")
        if min(self.N, self.d, self.L) < 1:
            raise InvalidInputError("N, d, L must be >= 1")


@dataclass(frozen=True)
class Dataset:
    """N input/target pairs with the recorded input separation."""

    xs: np.ndarray
    ys: np.ndarray
    separation: float
    seed: int

    def __post_init__(self):
        xs = np.asarray(self.xs, dtype=np.float64)
        ys = np.asarray(self.ys, dtype=np.float64)
        if xs.shape != ys.shape or xs.ndim != 2:
            raise InvalidInputError("xs and ys must share shape (N, d)")
        if not (np.all(np.isfinite(xs)) and np.all(np.isfinite(ys))):
            raise InvalidInputError("dataset has non-finite entries")
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "ys", ys)

    @property
    def n(self) -> int:
        return self.xs.shape[0]

    @property
    def dim(self) -> int:
        return self.xs.shape[1]


def separation_of(xs: np.ndarray) -> float:
    """max over i != j of |<x_i, x_j>| (zero for a single point)."""
    xs = np.asarray(xs, dtype=np.float64)
    if xs.shape[0] < 2:
        return 0.0
    gram = np.abs(xs @ xs.T)
    np.fill_diagonal(gram, 0.0)
    return float(np.max(gram))


def separation_threshold(N: int, c0: float) -> float:
    return np.exp(-4.0 * c0) / (8.0 * N)


def _unit_rows(rows: np.ndarray) -> np.ndarray:
    return rows / np.linalg.norm(rows, axis=1, keepdims=True)


def sample_sphere_dataset(N: int, d: int, seed: int, params: AssumptionParams,
                          max_retries: int = DEFAULT_MAX_RETRIES,
                          target_mode: str = "sphere",
                          enforce_separation: bool = True) -> Dataset:
    """Inputs i.i.d. uniform on the sphere, redrawn until separated.

    Targets are uniform unit vectors ("sphere") or a copy of the inputs
    ("inputs", a convenient interpolation-free base for near-init targets).
    Identical seeds give bitwise-identical datasets. With
    ``enforce_separation=False`` the first draw is kept and its separation
    merely recorded; the desk-scale sweeps need this because the threshold
    is only reachable when d is much larger than N.
    """
    if N < 1 or d < 1:
        raise InvalidInputError("N and d must be >= 1")
    if target_mode not in ("sphere", "inputs"):
        raise InvalidInputError(f"unknown target mode {target_mode!r}")
    rng = np.random.default_rng(seed)
    threshold = separation_threshold(N, params.c0)
    best = np.inf
    for _ in range(max_retries):
        xs = _unit_rows(rng.standard_normal((N, d)))
        sep = separation_of(xs)
        best = min(best, sep)
        if sep <= threshold or not enforce_separation:
            if target_mode == "sphere":
                ys = _unit_rows(rng.standard_normal((N, d)))
            else:
                ys = xs.copy()
            return Dataset(xs, ys, sep, seed)
    raise InfeasibleDatasetError(
        f"no draw of {N} points in dimension {d} met separation "
        f"{threshold:.6g} within {max_retries} retries (best {best:.6g})",
        achieved_separation=best, threshold=threshold)


def near_init_targets(xs: np.ndarray, w0: Weights, epsilon: float, seed: int,
                      activation: Activation = TANH) -> np.ndarray:
    """Unit targets close to the initial outputs: normalize(yhat + eps * xi).

    xi are independent unit Gaussian directions, so the initial objective is
    O(epsilon^2) plus the squared norm defect of the raw outputs.
    """
    if epsilon < 0:
        raise InvalidInputError("epsilon must be >= 0")
    outputs = forward_batch(np.asarray(xs, dtype=np.float64), w0, activation).outputs
    rng = np.random.default_rng(seed)
    noise = _unit_rows(rng.standard_normal(outputs.shape))
    return _unit_rows(outputs + epsilon * noise)


def replace_targets(data: Dataset, ys: np.ndarray) -> Dataset:
    return Dataset(data.xs, np.asarray(ys, dtype=np.float64), data.separation, data.seed)


def init_gaussian(config: NetworkConfig, beta0: float, seed: int) -> Weights:
    """Entries i.i.d. normal with standard deviation d**-1 * L**-beta0."""
    d, L = config.width, config.depth
    rng = np.random.default_rng(seed)
    std = d ** (-1.0) * float(L) ** (-beta0)
    return Weights(std * rng.standard_normal((L, d, d)), config.delta)


def initial_row_norm_cap(params: AssumptionParams) -> float:
    """Admissible sup over layers and rows of the row Euclidean norms at t=0."""
    return (2.0 ** (-4.5) * params.N ** (-0.5) * params.d ** (-0.5)
            * np.exp(-4.2 * params.c0) / params.L)


def initial_loss_cap(params: AssumptionParams) -> float:
    """Admissible objective value at t=0."""
    return (2.0 ** (-15) * 3.0 ** (-2) * params.N ** (-2.0) / params.d
            * params.c0 ** 2 * np.exp(-8.2 * params.c0))


def init_certified(config: NetworkConfig, params: AssumptionParams, seed: int,
                   scale: float = 1.0) -> Weights:
    """Rows in uniformly random directions with norm exactly scale * cap.

    With scale <= 1 the row-norm clause holds by construction; smaller scales
    leave headroom for the initial-loss clause.
    """
    if not 0.0 <= scale <= 1.0:
        raise InvalidInputError("scale must lie in [0, 1]")
    d, L = config.width, config.depth
    rng = np.random.default_rng(seed)
    directions = rng.standard_normal((L, d, d))
    directions /= np.linalg.norm(directions, axis=2, keepdims=True)
    return Weights(scale * initial_row_norm_cap(params) * directions, config.delta)


@dataclass(frozen=True)
class ClauseCheck:
    """One admissibility clause: observed value against its threshold."""

    name: str
    observed: float
    threshold: float
    passed: bool


@dataclass(frozen=True)
class AssumptionReport:
    clauses: tuple[ClauseCheck, ...]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.clauses)

    def clause(self, name: str) -> ClauseCheck:
        for c in self.clauses:
            if c.name == name:
                return c
        raise KeyError(name)


def check_assumptions(data: Dataset, w0: Weights, params: AssumptionParams,
                      activation: Activation = TANH,
                      rel_tol: float = 1e-9) -> AssumptionReport:
    """Observed-versus-threshold report for every admissibility clause.

    Clauses: (i) activation grid check, (ii) delta = L**-1/2, (iii) unit data
    and separation, (iv) initial row norms, (v) initial loss.
    """

    def entry(name, observed, threshold):
        observed = float(observed)
        threshold = float(threshold)
        slack = threshold - observed
        return ClauseCheck(name, observed, threshold,
                           slack >= -rel_tol * max(abs(threshold), abs(observed), 1e-300))

    act_report = activation.construction_report
    norms_x = np.linalg.norm(data.xs, axis=1)
    norms_y = np.linalg.norm(data.ys, axis=1)
    unit_dev = float(max(np.max(np.abs(norms_x - 1.0)), np.max(np.abs(norms_y - 1.0))))
    row_norms = np.linalg.norm(w0.layers, axis=2)
    delta_dev = abs(w0.delta - params.L ** (-0.5))

    clauses = (
        entry("i_activation", act_report.max_violation, 0.0),
        entry("ii_delta_scaling", delta_dev, UNIT_NORM_TOL * max(1.0, w0.delta)),
        entry("iii_unit_norms", unit_dev, UNIT_NORM_TOL),
        entry("iii_separation", data.separation, separation_threshold(params.N, params.c0)),
        entry("iv_row_norms", float(np.max(row_norms)), initial_row_norm_cap(params)),
        entry("v_initial_loss", objective(data, w0, activation), initial_loss_cap(params)),
    )
    return AssumptionReport(clauses)


def save_dataset(data: Dataset, csv_path, c0: float | None = None) -> None:
    """CSV of components plus a JSON sidecar with {N, d, seed, separation, c0}."""
    csv_path = str(csv_path)
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["i", "kind", "component", "value"])
        for i in range(data.n):
            for j in range(data.dim):
                writer.writerow([i, "x", j, repr(float(data.xs[i, j]))])
            for j in range(data.dim):
                writer.writerow([i, "y", j, repr(float(data.ys[i, j]))])
    meta = {"N": data.n, "d": data.dim, "seed": data.seed,
            "separation": data.separation, "c0": c0}
    with open(_sidecar_path(csv_path), "w") as fh:
        json.dump(meta, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _sidecar_path(csv_path: str) -> str:
    return csv_path[:-4] + ".json" if csv_path.endswith(".csv") else csv_path + ".json"


def load_dataset(csv_path) -> tuple[Dataset, dict]:
    csv_path = str(csv_path)
    with open(_sidecar_path(csv_path)) as fh:
        meta = json.load(fh)
    n, d = meta["N"], meta["d"]
    xs = np.empty((n, d))
    ys = np.empty((n, d))
    with open(csv_path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["i", "kind", "component", "value"]:
            raise InvalidInputError(f"unexpected dataset header {header!r} in {csv_path}")
        for i, kind, comp, value in reader:
            target = xs if kind == "x" else ys
            target[int(i), int(comp)] = float(value)
    return Dataset(xs, ys, meta["separation"], meta["seed"]), meta
