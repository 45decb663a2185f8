"""Full-batch gradient descent with per-step norm logging.

Each run records the loss, the depth-scaled weight norms

    fbar = 1/2 sum_k |A_k|_F^2,    gbar = L/2 sum_k |A_{k+1} - A_k|_F^2,

the layerwise maxima behind them, and the learning rate. With per-layer
logging on, the run also verifies at every step that the row norms grow no
faster than their one-step drive bound allows.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .autograd import grad_objective_with_stats, objective
from .data import AssumptionParams, Dataset
from .errors import InvalidInputError, NumericalOverflowError
from .network import TANH, Activation, Weights

ETA_CAP_COEFF = 1.0 / 160.0
LARGEST_T_CAP = 10 ** 18

RUNLOG_COLUMNS = ["t", "eta", "loss", "fbar", "gbar", "finf", "neighbour_max", "delta"]


@dataclass(frozen=True)
class Schedule:
    """Learning-rate schedule: eta0 (constant) or eta0/(t+1) (inverse_decay)."""

    kind: str
    eta0: float

    def __post_init__(self):
        if self.kind not in ("constant", "inverse_decay"):
            raise InvalidInputError(f"unknown schedule kind {self.kind!r}")
        if self.eta0 < 0 or not math.isfinite(self.eta0):
            raise InvalidInputError("eta0 must be finite and >= 0")

    def rate(self, t: int) -> float:
        if self.kind == "constant":
            return self.eta0
        return self.eta0 / (t + 1.0)

    def sum_rates(self, T: int) -> float:
        """Sum of eta(t) for t < T."""
        if T <= 0:
            return 0.0
        if self.kind == "constant":
            return self.eta0 * T
        return self.eta0 * harmonic_number(T)


def harmonic_number(T: int) -> float:
    """H_T = sum_{k<=T} 1/k; exact summation small, asymptotic beyond."""
    if T <= 0:
        return 0.0
    if T <= 10_000:
        return float(np.sum(1.0 / np.arange(1, T + 1)))
    t = float(T)
    return math.log(t) + np.euler_gamma + 1.0 / (2.0 * t) - 1.0 / (12.0 * t * t)


@dataclass(frozen=True)
class WeightNorms:
    fbar: float
    gbar: float
    finf: float
    neighbour_max: float


def weight_norms(w: Weights) -> WeightNorms:
    layer_sq = np.sum(w.layers ** 2, axis=(1, 2))
    fbar = 0.5 * float(np.sum(layer_sq))
    finf = float(np.sqrt(np.max(layer_sq)))
    if w.depth > 1:
        diff_sq = np.sum((w.layers[1:] - w.layers[:-1]) ** 2, axis=(1, 2))
        gbar = 0.5 * w.depth * float(np.sum(diff_sq))
        neighbour_max = float(np.sqrt(np.max(diff_sq)))
    else:
        gbar = 0.0
        neighbour_max = 0.0
    return WeightNorms(fbar, gbar, finf, neighbour_max)


def layer_gaps(w: Weights) -> np.ndarray:
    """g_k = 1/2 L^2 |A_{k+1} - A_k|_F^2 for k = 1..L-1."""
    if w.depth < 2:
        return np.empty(0)
    diff_sq = np.sum((w.layers[1:] - w.layers[:-1]) ** 2, axis=(1, 2))
    return 0.5 * w.depth ** 2 * diff_sq


@dataclass
class RunLog:
    """Time series of one gradient-descent run (row 0 is the initial state).

    ``eta_sum`` holds the exact cumulative learning rate before each logged
    step, so envelope checks work at any logging stride. ``f_slack`` (with
    per-layer logging) is the per-step minimum of bound-minus-observed for
    the row-norm growth inequality; ``g_layers`` the per-step g_k rows.
    """

    t: np.ndarray
    eta: np.ndarray
    loss: np.ndarray
    fbar: np.ndarray
    gbar: np.ndarray
    finf: np.ndarray
    neighbour_max: np.ndarray
    delta: np.ndarray
    eta_sum: np.ndarray | None = None
    g_layers: np.ndarray | None = None
    f_slack: np.ndarray | None = None
    failed: bool = False
    fail_reason: str | None = None

    @property
    def steps(self) -> int:
        return int(self.t[-1])


def gd_step(w: Weights, data: Dataset, eta: float,
            activation: Activation = TANH,
            delta_trainable: bool = False) -> Weights:
    """One full-batch update A_k <- A_k - eta * grad_k; input left unmodified."""
    if eta < 0:
        raise InvalidInputError("eta must be >= 0")
    grads, dgrad, _, _ = grad_objective_with_stats(
        data, w, activation, delta_trainable, want_stats=False)
    return _apply_update(w, grads, dgrad, eta, delta_trainable)


def _apply_update(w: Weights, grads: np.ndarray, dgrad: float, eta: float,
                  delta_trainable: bool) -> Weights:
    new_layers = w.layers - eta * grads
    if not np.all(np.isfinite(new_layers)):
        raise NumericalOverflowError("non-finite weights after update")
    new_delta = w.delta
    if delta_trainable:
        new_delta = w.delta - eta * dgrad
        if not (math.isfinite(new_delta) and new_delta > 0):
            raise NumericalOverflowError("scale factor left (0, inf) during update")
    return Weights(new_layers, new_delta)


def train(w0: Weights, data: Dataset, sched: Schedule, T: int,
          activation: Activation = TANH,
          delta_trainable: bool = False,
          log_layers: bool = False,
          log_stride: int = 1) -> tuple[Weights, RunLog]:
    """Run T sequential updates, logging every ``log_stride`` steps plus the
    initial and final state. Overflow aborts with a partial log and the
    ``failed`` marker set instead of raising."""
    if T < 0:
        raise InvalidInputError("T must be >= 0")
    if log_stride < 1:
        raise InvalidInputError("log_stride must be >= 1")

    rows: list[tuple] = []
    g_rows: list[np.ndarray] = []
    f_slacks: list[float] = []
    failed = False
    fail_reason = None

    w = w0
    eta_acc = 0.0
    sqrt_half_l = math.sqrt(0.5 * w0.depth)

    def log_state(t, eta, value):
        norms = weight_norms(w)
        rows.append((t, eta, value, norms.fbar, norms.gbar, norms.finf,
                     norms.neighbour_max, w.delta, eta_acc))
        if log_layers:
            g_rows.append(layer_gaps(w))

    for t in range(T):
        eta = sched.rate(t)
        try:
            grads, dgrad, value, stats = grad_objective_with_stats(
                data, w, activation, delta_trainable, want_stats=log_layers)
        except NumericalOverflowError as exc:
            failed, fail_reason = True, str(exc)
            break
        if t % log_stride == 0:
            log_state(t, eta, value)
        if log_layers:
            f_sqrt_before = sqrt_half_l * np.linalg.norm(w.layers, axis=2)
            drive = (eta * math.sqrt(w.depth) * w.delta / math.sqrt(2.0)
                     * np.sqrt(stats.h_sq_ginf_sq))
        try:
            w = _apply_update(w, grads, dgrad, eta, delta_trainable)
        except NumericalOverflowError as exc:
            failed, fail_reason = True, str(exc)
            break
        if log_layers:
            f_sqrt_after = sqrt_half_l * np.linalg.norm(w.layers, axis=2)
            slack = f_sqrt_before + drive[:, None] - f_sqrt_after
            f_slacks.append(float(np.min(slack)))
        eta_acc += eta

    if not failed:
        try:
            final_value = objective(data, w, activation)
            log_state(T, sched.rate(T), final_value)
        except NumericalOverflowError as exc:
            failed, fail_reason = True, str(exc)

    cols = list(zip(*rows)) if rows else [[]] * 9
    log = RunLog(
        t=np.asarray(cols[0], dtype=np.int64),
        eta=np.asarray(cols[1], dtype=np.float64),
        loss=np.asarray(cols[2], dtype=np.float64),
        fbar=np.asarray(cols[3], dtype=np.float64),
        gbar=np.asarray(cols[4], dtype=np.float64),
        finf=np.asarray(cols[5], dtype=np.float64),
        neighbour_max=np.asarray(cols[6], dtype=np.float64),
        delta=np.asarray(cols[7], dtype=np.float64),
        eta_sum=np.asarray(cols[8], dtype=np.float64),
        g_layers=np.asarray(g_rows) if log_layers and g_rows else None,
        f_slack=np.asarray(f_slacks) if log_layers else None,
        failed=failed,
        fail_reason=fail_reason,
    )
    return w, log


@dataclass(frozen=True)
class LrFeasibility:
    """Margins for the two learning-rate clauses and the largest admissible T.

    Clause 1: eta(t) <= (1/160) N^-1 d^-1 exp(-10.5 c0) for every t < T.
    Clause 2: sum_{t<T} eta(t) <= d^-1 log L.
    """

    eta_cap: float
    max_eta: float
    sum_cap: float
    sum_eta: float
    per_step_ok: bool
    sum_ok: bool
    largest_feasible_T: float

    @property
    def feasible(self) -> bool:
        return self.per_step_ok and self.sum_ok


def lr_feasibility(params: AssumptionParams, sched: Schedule, T: int) -> LrFeasibility:
    if T < 0:
        raise InvalidInputError("T must be >= 0")
    eta_cap = ETA_CAP_COEFF / params.N / params.d * math.exp(-10.5 * params.c0)
    sum_cap = math.log(params.L) / params.d
    max_eta = sched.rate(0) if T > 0 else 0.0
    sum_eta = sched.sum_rates(T)

    if sched.eta0 == 0.0:
        largest: float = math.inf
    elif sched.rate(0) > eta_cap:
        largest = 0.0
    else:
        largest = largest_sum_feasible_T(sched, sum_cap)
    return LrFeasibility(eta_cap, max_eta, sum_cap, sum_eta,
                         per_step_ok=max_eta <= eta_cap,
                         sum_ok=sum_eta <= sum_cap,
                         largest_feasible_T=largest)


def largest_sum_feasible_T(sched: Schedule, budget: float) -> float:
    """Largest T with sum_{t<T} eta(t) <= budget, capped at 10^18.

    Constant rates give floor(budget / eta0); inverse decay inverts the
    harmonic sum, so the answer grows like exp(budget / eta0).
    """
    if budget < 0 or sched.eta0 < 0:
        raise InvalidInputError("budget and eta0 must be nonnegative")
    if sched.eta0 == 0.0:
        return math.inf
    if sched.kind == "constant":
        return min(float(math.floor(budget / sched.eta0)), float(LARGEST_T_CAP))
    ratio = budget / sched.eta0
    if ratio < 1.0:
        return 0.0
    if harmonic_number(LARGEST_T_CAP) <= ratio:
        return float(LARGEST_T_CAP)
    lo, hi = 1, LARGEST_T_CAP
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if harmonic_number(mid) <= ratio:
            lo = mid
        else:
            hi = mid - 1
    return float(lo)


def save_runlog(log: RunLog, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(RUNLOG_COLUMNS)
        for i in range(len(log.t)):
            writer.writerow([int(log.t[i])] + [
                repr(float(col[i])) for col in
                (log.eta, log.loss, log.fbar, log.gbar, log.finf,
                 log.neighbour_max, log.delta)])


def load_runlog(path) -> RunLog:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != RUNLOG_COLUMNS:
            raise InvalidInputError(f"unexpected run log header {header!r} in {path}")
        raw = [[float(v) for v in row] for row in reader]
    if not raw:
        raise InvalidInputError(f"empty run log {path}")
    arr = np.asarray(raw)
    t = arr[:, 0].astype(np.int64)
    eta = arr[:, 1]
    # The cumulative rate is recoverable exactly when every step was logged.
    eta_sum = None
    if len(t) >= 1 and np.array_equal(t[:-1], np.arange(len(t) - 1)):
        eta_sum = np.concatenate([[0.0], np.cumsum(eta[:-1])])
    return RunLog(t=t, eta=eta, loss=arr[:, 2], fbar=arr[:, 3], gbar=arr[:, 4],
                  finf=arr[:, 5], neighbour_max=arr[:, 6], delta=arr[:, 7],
                  eta_sum=eta_sum)


def save_layer_gaps(log: RunLog, path) -> None:
    if log.g_layers is None:
        raise InvalidInputError("run log has no per-layer data")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "k", "g_k"])
        for i in range(len(log.t)):
            for k, value in enumerate(log.g_layers[i], start=1):
                writer.writerow([int(log.t[i]), k, repr(float(value))])
