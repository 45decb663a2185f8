"""Exact gradients of the mean-squared objective, plus independent oracles.

The backward pass never materializes the layer-to-output Jacobians: the
hidden-state gradients G_k obey

    G_L = yhat - y,      G_{k-1} = G_k + delta * alpha_k^T (sigma'(a_k) * G_k),

and the layer-k gradient of the per-sample loss is
delta * (sigma'(a_k) * G_k) h_{k-1}^T. Finite differences of the objective
serve as the independent check on all of this.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from .errors import InvalidInputError, NumericalOverflowError
from .linalg import as_vector
from .network import (TANH, Activation, BatchTrace, ForwardTrace, Weights,
                      forward_batch, outputs_only)

if TYPE_CHECKING:  # pragma: no cover
    from .data import Dataset

FD_GRAD_STEP = 1e-6
FD_HESSIAN_STEP = 1e-4


def loss(y, yhat) -> float:
    """Half the squared Euclidean distance."""
    yv = as_vector(y)
    yh = as_vector(yhat, dim=yv.shape[0])
    diff = yv - yh
    return 0.5 * float(diff @ diff)


def objective(data: "Dataset", weights: Weights,
              activation: Activation = TANH) -> float:
    """Mean of the per-sample losses over the training set."""
    outputs = outputs_only(data.xs, weights, activation)
    return _mean_squared(outputs, data.ys)


def _mean_squared(outputs: np.ndarray, ys: np.ndarray) -> float:
    with np.errstate(over="ignore"):
        diff = outputs - ys
        value = 0.5 * float(np.sum(diff * diff)) / ys.shape[0]
    if not np.isfinite(value):
        raise NumericalOverflowError("objective overflowed")
    return value


@dataclass(frozen=True)
class Grad:
    """Objective gradient: one matrix per layer plus the scalar delta part.

    ``delta_grad`` is zero whenever delta is frozen.
    """

    layers: np.ndarray
    delta_grad: float = 0.0

    def frobenius_sq(self) -> float:
        """Squared Frobenius norm over the layer matrices (delta excluded)."""
        return float(np.sum(self.layers * self.layers))


@dataclass(frozen=True)
class BackwardTrace:
    """Hidden-state gradients G_k = M_k^T (yhat - y) for k = 0..L, one input."""

    g: np.ndarray


def backward_trace(trace: ForwardTrace, weights: Weights, y,
                   activation: Activation = TANH) -> BackwardTrace:
    """Run the G_k recursion for a single sample's forward trace."""
    L, d = trace.depth, weights.width
    yv = as_vector(y, dim=d)
    g = np.empty((L + 1, d))
    g[L] = trace.hidden[L] - yv
    for k in range(L, 0, -1):
        g[k - 1] = g[k] + weights.delta * ((trace.sigma_prime[k - 1] * g[k]) @ weights.layers[k - 1])
    return BackwardTrace(g)


@dataclass(frozen=True)
class LayerStats:
    """Per-layer mean of |h_{k-1}|^2 * |G_k|_inf^2 over the samples (length L).

    This is the drive term in the one-step growth bound for the depth-scaled
    row norms, recorded during training when per-layer logging is on.
    """

    h_sq_ginf_sq: np.ndarray


def _backward_batch(batch: BatchTrace, weights: Weights, ys: np.ndarray,
                    want_stats: bool,
                    delta_trainable: bool,
                    activation: Activation) -> tuple[np.ndarray, float, LayerStats | None]:
    """Layer gradients of the objective from a batched forward trace."""
    L, d = weights.depth, weights.width
    n = ys.shape[0]
    delta = weights.delta
    grads = np.empty((L, d, d))
    g = batch.hidden[L] - ys
    delta_grad = 0.0
    stats = np.empty(L) if want_stats else None
    # Non-finite values are caught downstream; silence the transient warnings.
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(L, 0, -1):
            sg = batch.sigma_prime[k - 1] * g
            grads[k - 1] = (delta / n) * (sg.T @ batch.hidden[k - 1])
            if delta_trainable:
                delta_grad += float(np.sum(g * activation.value(batch.preact[k - 1]))) / n
            if want_stats:
                h_sq = np.sum(batch.hidden[k - 1] ** 2, axis=1)
                g_inf = np.max(np.abs(g), axis=1)
                stats[k - 1] = float(np.mean(h_sq * g_inf ** 2))
            g = g + delta * (sg @ weights.layers[k - 1])
    layer_stats = LayerStats(stats) if want_stats else None
    return grads, delta_grad, layer_stats


def grad_objective(data: "Dataset", weights: Weights,
                   activation: Activation = TANH,
                   delta_trainable: bool = False) -> Grad:
    """Exact gradient of the objective with respect to every layer (and delta)."""
    grads, dgrad, _, _ = grad_objective_with_stats(
        data, weights, activation, delta_trainable, want_stats=False)
    return Grad(grads, dgrad)


def grad_objective_with_stats(data: "Dataset", weights: Weights,
                              activation: Activation = TANH,
                              delta_trainable: bool = False,
                              want_stats: bool = True):
    """Gradient plus the current loss and optional per-layer drive stats.

    Returns (layer_grads, delta_grad, current_objective, LayerStats or None).
    Training uses this to get the step's loss and logging quantities from the
    same forward pass that produced the gradient.
    """
    batch = forward_batch(data.xs, weights, activation)
    value = _mean_squared(batch.outputs, data.ys)
    grads, dgrad, stats = _backward_batch(batch, weights, data.ys, want_stats,
                                          delta_trainable, activation)
    return grads, dgrad, value, stats


def finite_diff_grad(data: "Dataset", weights: Weights,
                     activation: Activation = TANH,
                     step: float = FD_GRAD_STEP,
                     delta_trainable: bool = False) -> Grad:
    """Central differences of the objective over every entry (and delta).

    Per-entry step is ``step * (1 + |entry|)``. Deliberately routed through
    ``objective`` only, so it stays independent of the analytic backward pass.
    """
    if step <= 0:
        raise InvalidInputError("step must be positive")
    layers = weights.layers.copy()
    probe = Weights(layers, weights.delta)
    grads = np.empty_like(layers)
    L, d = weights.depth, weights.width
    for k in range(L):
        for m in range(d):
            for n in range(d):
                orig = layers[k, m, n]
                h = step * (1.0 + abs(orig))
                layers[k, m, n] = orig + h
                up = objective(data, probe, activation)
                layers[k, m, n] = orig - h
                down = objective(data, probe, activation)
                layers[k, m, n] = orig
                grads[k, m, n] = (up - down) / (2.0 * h)
    delta_grad = 0.0
    if delta_trainable:
        h = step * (1.0 + abs(weights.delta))
        up = objective(data, Weights(layers, weights.delta + h), activation)
        down = objective(data, Weights(layers, weights.delta - h), activation)
        delta_grad = (up - down) / (2.0 * h)
    return Grad(grads, delta_grad)


@dataclass(frozen=True)
class HessianEstimate:
    """Largest-magnitude eigenvalue estimate for the objective Hessian."""

    value: float
    iterations: int
    converged: bool


def hessian_spectral_estimate(data: "Dataset", weights: Weights,
                              activation: Activation = TANH,
                              probes: int = 50,
                              fd_step: float = FD_HESSIAN_STEP,
                              tol: float = 1e-6) -> HessianEstimate:
    """Power iteration on the layer-weight Hessian via finite differences.

    Hessian-vector products are central differences of the analytic gradient
    along the iterate direction; delta is held fixed. Non-convergence within
    ``probes`` iterations is flagged, not raised.
    """
    if probes < 1:
        raise InvalidInputError("probes must be >= 1")
    base = weights.layers
    scale = fd_step * (1.0 + float(np.linalg.norm(base)))

    def hvp(direction: np.ndarray) -> np.ndarray:
        up = Weights(base + scale * direction, weights.delta)
        down = Weights(base - scale * direction, weights.delta)
        g_up = grad_objective(data, up, activation)
        g_down = grad_objective(data, down, activation)
        return (g_up.layers - g_down.layers) / (2.0 * scale)

    v = np.ones_like(base)
    v /= np.linalg.norm(v)
    lam = float(np.sum(v * hvp(v)))
    iterations = 0
    converged = False
    for it in range(1, probes + 1):
        iterations = it
        w = hvp(v)
        norm_w = float(np.linalg.norm(w))
        if norm_w == 0.0:
            lam = 0.0
            converged = True
            break
        v = w / norm_w
        lam_new = float(np.sum(v * hvp(v)))
        if abs(lam_new - lam) <= tol * max(abs(lam_new), np.finfo(float).tiny):
            lam = lam_new
            converged = True
            break
        lam = lam_new
    return HessianEstimate(abs(lam), iterations, converged)
