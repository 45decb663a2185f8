"""Residual architecture: h_k = h_{k-1} + delta * sigma(a_k h_{k-1}).

The forward pass records every hidden state, preactivation and activation
derivative; layer-to-output Jacobians M_k are optional because gradients only
ever need the matching vector recursion (see ``autograd``).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import InvalidInputError, NumericalOverflowError
from .linalg import as_vector

ACTIVATION_GRID_POINTS = 20_001
ACTIVATION_GRID_RANGE = (-10.0, 10.0)


@dataclass(frozen=True)
class ActivationClause:
    name: str
    observed: float
    bound: float

    @property
    def passed(self) -> bool:
        return self.observed <= self.bound


@dataclass(frozen=True)
class ActivationReport:
    """Grid check of the admissibility clauses for a scalar activation.

    Clauses: sigma(0)=0, sigma'(0)=1, |sigma(z)| <= |z|, |sigma'| <= 1,
    |sigma''| <= 1, each evaluated on a dense grid.
    """

    clauses: tuple[ActivationClause, ...]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.clauses)

    @property
    def max_violation(self) -> float:
        return max(max(c.observed - c.bound, 0.0) for c in self.clauses)

    def clause(self, name: str) -> ActivationClause:
        for c in self.clauses:
            if c.name == name:
                return c
        raise KeyError(name)


@dataclass(frozen=True)
class Activation:
    """Scalar activation with first and second derivatives, applied entrywise.

    The admissibility clauses are grid-checked once at construction; the
    resulting report is stored (it is a report, not a gate, so synthetic
    violating activations can still be built and inspected).
    """

    name: str
    value: Callable[[np.ndarray], np.ndarray]
    deriv1: Callable[[np.ndarray], np.ndarray]
    deriv2: Callable[[np.ndarray], np.ndarray]
    construction_report: ActivationReport = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "construction_report", check_activation(self))


def check_activation(a: Activation, grid_points: int = ACTIVATION_GRID_POINTS) -> ActivationReport:
    """Evaluate the five admissibility clauses on a uniform grid."""
    lo, hi = ACTIVATION_GRID_RANGE
    z = np.linspace(lo, hi, grid_points)
    clauses = (
        ActivationClause("value_at_zero", abs(float(a.value(np.array(0.0)))), 0.0),
        ActivationClause("slope_at_zero", abs(float(a.deriv1(np.array(0.0))) - 1.0), 0.0),
        ActivationClause("bounded_by_identity", float(np.max(np.abs(a.value(z)) - np.abs(z))), 0.0),
        ActivationClause("first_derivative", float(np.max(np.abs(a.deriv1(z)))), 1.0),
        ActivationClause("second_derivative", float(np.max(np.abs(a.deriv2(z)))), 1.0),
    )
    return ActivationReport(clauses)


def _tanh_second(z: np.ndarray) -> np.ndarray:
    t = np.tanh(z)
    return -2.0 * t * (1.0 - t * t)


TANH = Activation("tanh", np.tanh, lambda z: 1.0 / np.cosh(z) ** 2, _tanh_second)
IDENTITY = Activation("identity", lambda z: np.asarray(z, dtype=np.float64),
                      lambda z: np.ones_like(np.asarray(z, dtype=np.float64)),
                      lambda z: np.zeros_like(np.asarray(z, dtype=np.float64)))

_ACTIVATIONS = {"tanh": TANH, "identity": IDENTITY}


def activation_by_name(name: str) -> Activation:
    try:
        return _ACTIVATIONS[name]
    except KeyError:
        raise InvalidInputError(f"unknown activation {name!r}") from None


@dataclass(frozen=True)
class NetworkConfig:
    """Width, depth and per-layer scale factor delta = L**(-delta_exponent)."""

    width: int
    depth: int
    delta_exponent: float = 0.5
    delta_trainable: bool = False
    activation: Activation = TANH

    def __post_init__(self):
        if self.width < 1 or self.depth < 1:
            raise InvalidInputError("width and depth must be >= 1")
        if not 0.0 <= self.delta_exponent <= 1.0:
            raise InvalidInputError("delta_exponent must lie in [0, 1]")

    @property
    def delta(self) -> float:
        return float(self.depth) ** (-self.delta_exponent)


@dataclass(frozen=True)
class Weights:
    """Depth-indexed stack of layer matrices plus the scale factor delta.

    ``layers`` has shape (L, d, d); layer k of the recursion is layers[k-1].
    """

    layers: np.ndarray
    delta: float

    def __post_init__(self):
        arr = np.asarray(self.layers, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[1] != arr.shape[2]:
            raise InvalidInputError(f"layers must have shape (L, d, d), got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise InvalidInputError("weights have non-finite entries")
        if not (np.isfinite(self.delta) and self.delta > 0):
            raise InvalidInputError("delta must be positive and finite")
        object.__setattr__(self, "layers", arr)

    @property
    def depth(self) -> int:
        return self.layers.shape[0]

    @property
    def width(self) -> int:
        return self.layers.shape[1]


def zero_weights(width: int, depth: int, delta: float | None = None,
                 delta_exponent: float = 0.5) -> Weights:
    if delta is None:
        delta = float(depth) ** (-delta_exponent)
    return Weights(np.zeros((depth, width, width)), delta)


@dataclass(frozen=True)
class ForwardTrace:
    """Everything the forward pass computes for one input.

    hidden[k] is h_k for k = 0..L (hidden[0] is the input), preact[k-1] is
    a_k = alpha_k h_{k-1}, sigma_prime[k-1] is sigma'(a_k) and, when
    requested, jacobians[k] is M_k = dh_L/dh_k (so jacobians[L] is the
    identity).
    """

    hidden: np.ndarray
    preact: np.ndarray
    sigma_prime: np.ndarray
    jacobians: np.ndarray | None = None

    @property
    def output(self) -> np.ndarray:
        return self.hidden[-1]

    @property
    def depth(self) -> int:
        return self.preact.shape[0]


def forward(x, weights: Weights, activation: Activation = TANH,
            want_jacobians: bool = False) -> ForwardTrace:
    """Run the residual recursion for one input, recording the full trace.

    Raises NumericalOverflowError naming the first layer whose hidden state
    goes non-finite.
    """
    d = weights.width
    L = weights.depth
    h = as_vector(x, dim=d)
    delta = weights.delta

    hidden = np.empty((L + 1, d))
    preact = np.empty((L, d))
    sprime = np.empty((L, d))
    hidden[0] = h
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(1, L + 1):
            a = weights.layers[k - 1] @ hidden[k - 1]
            hidden[k] = hidden[k - 1] + delta * activation.value(a)
            if not np.all(np.isfinite(hidden[k])):
                raise NumericalOverflowError(f"non-finite hidden state at layer {k}", layer=k)
            preact[k - 1] = a
            sprime[k - 1] = activation.deriv1(a)

    jac = None
    if want_jacobians:
        jac = jacobian_stack(weights, sprime)
    return ForwardTrace(hidden, preact, sprime, jac)


def jacobian_stack(weights: Weights, sigma_prime: np.ndarray) -> np.ndarray:
    """M_k for k = 0..L via M_L = I, M_{k-1} = M_k (I + delta diag(s'_k) alpha_k)."""
    L, d = weights.depth, weights.width
    jac = np.empty((L + 1, d, d))
    jac[L] = np.eye(d)
    for k in range(L, 0, -1):
        step = np.eye(d) + weights.delta * (sigma_prime[k - 1][:, None] * weights.layers[k - 1])
        jac[k - 1] = jac[k] @ step
    return jac


@dataclass(frozen=True)
class BatchTrace:
    """Forward trace for a batch of inputs; hidden has shape (L+1, N, d)."""

    hidden: np.ndarray
    preact: np.ndarray
    sigma_prime: np.ndarray

    @property
    def outputs(self) -> np.ndarray:
        return self.hidden[-1]


def forward_batch(xs: np.ndarray, weights: Weights,
                  activation: Activation = TANH) -> BatchTrace:
    """Vectorized forward pass over the sample axis (single numpy path, so
    results are bitwise reproducible)."""
    xs = np.asarray(xs, dtype=np.float64)
    if xs.ndim != 2 or xs.shape[1] != weights.width:
        raise InvalidInputError(f"inputs must have shape (N, {weights.width})")
    L = weights.depth
    delta = weights.delta

    hidden = np.empty((L + 1,) + xs.shape)
    preact = np.empty((L,) + xs.shape)
    sprime = np.empty((L,) + xs.shape)
    hidden[0] = xs
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(1, L + 1):
            a = hidden[k - 1] @ weights.layers[k - 1].T
            hidden[k] = hidden[k - 1] + delta * activation.value(a)
            if not np.all(np.isfinite(hidden[k])):
                raise NumericalOverflowError(f"non-finite hidden state at layer {k}", layer=k)
            preact[k - 1] = a
            sprime[k - 1] = activation.deriv1(a)
    return BatchTrace(hidden, preact, sprime)


def outputs_only(xs: np.ndarray, weights: Weights,
                 activation: Activation = TANH) -> np.ndarray:
    """Batch outputs without storing the per-layer trace (for finite differences)."""
    xs = np.asarray(xs, dtype=np.float64)
    if xs.ndim != 2 or xs.shape[1] != weights.width:
        raise InvalidInputError(f"inputs must have shape (N, {weights.width})")
    h = xs
    delta = weights.delta
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(1, weights.depth + 1):
            h = h + delta * activation.value(h @ weights.layers[k - 1].T)
            if not np.all(np.isfinite(h)):
                raise NumericalOverflowError(f"non-finite hidden state at layer {k}", layer=k)
    return h


def save_weights(weights: Weights, path) -> None:
    """Text format: header "d L delta", then L blocks of d rows of d entries.

    17 significant digits, so float64 values round-trip exactly.
    """
    with open(path, "w") as fh:
        fh.write(f"{weights.width} {weights.depth} {weights.delta:.17g}\n")
        for k in range(weights.depth):
            for row in weights.layers[k]:
                fh.write(" ".join(f"{v:.17g}" for v in row) + "\n")


def load_weights(path) -> Weights:
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 3:
            raise InvalidInputError(f"malformed weights header in {path}")
        d, L, delta = int(header[0]), int(header[1]), float(header[2])
        layers = np.empty((L, d, d))
        for k in range(L):
            for m in range(d):
                parts = fh.readline().split()
                if len(parts) != d:
                    raise InvalidInputError(f"malformed weights row in {path}")
                layers[k, m] = [float(p) for p in parts]
    return Weights(layers, delta)
