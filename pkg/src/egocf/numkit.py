"""Dense float64 numerics with hand-written gradients.

Everything in this package runs on plain ``numpy`` float64 arrays. Each
differentiable operation comes as a forward function plus an explicit
``*_backward`` companion, so the training code can assemble gradients
without a graph engine. Determinism is the design priority: no op consumes
hidden randomness, and ``adam_step`` mutates its stores in a fixed order.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable

import numpy as np

from .errors import ConsistencyError, DegenerateInputError, DimensionError

Array = np.ndarray

# Probabilities are clamped here before any log; the only nonlinearity
# deviation from exact arithmetic in the package.
LOG_CLAMP = 1e-12


def as_f64(x) -> Array:
    return np.asarray(x, dtype=np.float64)


# ---------------------------------------------------------------------------
# Core ops
# ---------------------------------------------------------------------------


def matmul(a: Array, b: Array) -> Array:
    """Matrix product of two 2-D arrays."""
    a, b = as_f64(a), as_f64(b)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} x {b.shape}")
    return a @ b


def matmul_backward(d_out: Array, a: Array, b: Array) -> tuple[Array, Array]:
    """Gradients of ``matmul``: dA = dC @ B^T, dB = A^T @ dC."""
    return d_out @ b.T, a.T @ d_out


def softmax(x: Array, axis: int = -1) -> Array:
    """Stable softmax along ``axis`` (max-subtraction before exp)."""
    x = as_f64(x)
    if not -x.ndim <= axis < x.ndim:
        raise DimensionError(f"softmax axis {axis} invalid for shape {x.shape}")
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def softmax_backward(d_out: Array, out: Array, axis: int = -1) -> Array:
    """Jacobian-vector product through softmax given its output."""
    return out * (d_out - np.sum(d_out * out, axis=axis, keepdims=True))


def cross_entropy(probs: Array, gt: Array) -> float:
    """-log of the probability at the one-hot ground-truth index.

    ``probs`` must sum to 1 within 1e-9 and ``gt`` must be one-hot of the
    same length. The picked probability is clamped to ``LOG_CLAMP`` before
    the log.
    """
    probs, gt = as_f64(probs), as_f64(gt)
    if probs.shape != gt.shape or probs.ndim != 1:
        raise DimensionError(f"cross_entropy length mismatch: {probs.shape} vs {gt.shape}")
    if abs(float(probs.sum()) - 1.0) > 1e-9:
        raise DegenerateInputError(f"probs sum to {probs.sum():.12f}, not 1")
    hot = np.flatnonzero(gt == 1.0)
    if hot.size != 1 or not np.all((gt == 0.0) | (gt == 1.0)):
        raise DegenerateInputError("gt is not a one-hot vector")
    p = max(float(probs[hot[0]]), LOG_CLAMP)
    return -math.log(p)


def cross_entropy_backward(probs: Array, gt: Array) -> Array:
    """d/dprobs of ``cross_entropy``; zero where the clamp is active."""
    probs, gt = as_f64(probs), as_f64(gt)
    d = np.zeros_like(probs)
    idx = int(np.flatnonzero(gt == 1.0)[0])
    if probs[idx] > LOG_CLAMP:
        d[idx] = -1.0 / probs[idx]
    return d


def cosine_similarity(p: Array, q: Array) -> float:
    """p.q / (|p|*|q|), in [-1, 1]. Zero-norm inputs are an error."""
    p, q = as_f64(p), as_f64(q)
    if p.shape != q.shape or p.ndim != 1:
        raise DimensionError(f"cosine_similarity length mismatch: {p.shape} vs {q.shape}")
    np_, nq = float(np.linalg.norm(p)), float(np.linalg.norm(q))
    if np_ == 0.0 or nq == 0.0:
        raise DegenerateInputError("cosine_similarity got a zero-norm vector")
    return float(p @ q) / (np_ * nq)


def cosine_similarity_backward(p: Array, q: Array) -> tuple[Array, Array]:
    """(ds/dp, ds/dq) for s = cosine_similarity(p, q)."""
    p, q = as_f64(p), as_f64(q)
    np_, nq = float(np.linalg.norm(p)), float(np.linalg.norm(q))
    s = float(p @ q) / (np_ * nq)
    dp = q / (np_ * nq) - s * p / (np_ * np_)
    dq = p / (np_ * nq) - s * q / (nq * nq)
    return dp, dq


def attention(queries: Array, keys: Array, values: Array) -> Array:
    """softmax(Q K^T / sqrt(d)) V, one output row per query row."""
    queries, keys, values = as_f64(queries), as_f64(keys), as_f64(values)
    for name, t in (("queries", queries), ("keys", keys), ("values", values)):
        if t.ndim != 2:
            raise DimensionError(f"attention {name} must be 2-D, got {t.shape}")
    d = queries.shape[1]
    if keys.shape[1] != d or values.shape[1] != d:
        raise DimensionError(
            f"attention feature dims differ: q {queries.shape}, k {keys.shape}, v {values.shape}"
        )
    if keys.shape[0] != values.shape[0]:
        raise DimensionError(f"attention keys/values row counts differ: {keys.shape} vs {values.shape}")
    scores = queries @ keys.T / math.sqrt(d)
    return softmax(scores, axis=-1) @ values


# ---------------------------------------------------------------------------
# Parameters and optimizer
# ---------------------------------------------------------------------------


class ParamStore:
    """Named float64 parameter tensors with a parallel gradient map.

    Names are unique; gradients always match their parameter's shape.
    Gradients accumulate across ``add_grad`` calls until ``zero_grads``.
    """

    def __init__(self) -> None:
        self.params: dict[str, Array] = {}
        self.grads: dict[str, Array] = {}

    def add(self, name: str, value: Array) -> Array:
        if name in self.params:
            raise ConsistencyError(f"duplicate parameter name {name!r}")
        arr = np.ascontiguousarray(as_f64(value))
        self.params[name] = arr
        return arr

    def add_grad(self, name: str, grad: Array) -> None:
        if name not in self.params:
            raise ConsistencyError(f"gradient for unknown parameter {name!r}")
        grad = as_f64(grad)
        if grad.shape != self.params[name].shape:
            raise DimensionError(
                f"gradient shape {grad.shape} != parameter shape {self.params[name].shape} for {name!r}"
            )
        if name in self.grads:
            self.grads[name] += grad
        else:
            self.grads[name] = grad.copy()

    def zero_grads(self) -> None:
        self.grads = {name: np.zeros_like(p) for name, p in self.params.items()}

    def clear_grads(self) -> None:
        self.grads = {}

    def names(self) -> list[str]:
        return list(self.params)

    def n_params(self) -> int:
        return sum(p.size for p in self.params.values())


class AdamState:
    """First/second moment buffers plus the shared step counter."""

    def __init__(self, m: dict[str, Array], v: dict[str, Array], t: int = 0) -> None:
        self.m = m
        self.v = v
        self.t = t

    @classmethod
    def init(cls, store: ParamStore) -> "AdamState":
        return cls(
            m={name: np.zeros_like(p) for name, p in store.params.items()},
            v={name: np.zeros_like(p) for name, p in store.params.items()},
            t=0,
        )


def adam_step(
    store: ParamStore,
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    weight_decay: float = 0.0,
) -> None:
    """One Adam update with bias correction over every parameter.

    Weight decay is coupled L2: added to the gradient before the moment
    updates. Parameters and moments are mutated in place, in insertion
    order, so repeated runs are bit-identical.
    """
    for name in store.params:
        if name not in store.grads:
            raise ConsistencyError(f"adam_step: no gradient for parameter {name!r}")
    state.t += 1
    t = state.t
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    for name, p in store.params.items():
        g = store.grads[name]
        if weight_decay != 0.0:
            g = g + weight_decay * p
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


# ---------------------------------------------------------------------------
# Finite-difference gradient checker
# ---------------------------------------------------------------------------


def grad_check(
    loss_fn: Callable[[], float],
    store: ParamStore,
    eps: float = 1e-5,
    max_coords: int = 256,
    rng: np.random.Generator | None = None,
    full: bool = False,
    names: Iterable[str] | None = None,
) -> float:
    """Compare ``store.grads`` against central differences of ``loss_fn``.

    ``store.grads`` must already hold the analytic gradient of ``loss_fn``
    at the current parameters. Per tensor, up to ``max_coords`` coordinates
    are sampled (all of them with ``full=True``). Returns the maximum
    relative error |g_a - g_n| / max(|g_a|, |g_n|, 1e-8).
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    worst = 0.0
    for name in names if names is not None else store.params:
        p = store.params[name]
        if name not in store.grads:
            raise ConsistencyError(f"grad_check: no analytic gradient for {name!r}")
        g_analytic = store.grads[name].ravel()
        size = p.size
        if full or size <= max_coords:
            coords = np.arange(size)
        else:
            coords = np.sort(rng.choice(size, size=max_coords, replace=False))
        flat = p.ravel()
        for i in coords:
            orig = flat[i]
            flat[i] = orig + eps
            lo_hi = loss_fn()
            flat[i] = orig - eps
            lo_lo = loss_fn()
            flat[i] = orig
            if not (math.isfinite(lo_hi) and math.isfinite(lo_lo)):
                raise FloatingPointError(f"non-finite loss while perturbing {name!r}[{i}]")
            g_num = (lo_hi - lo_lo) / (2.0 * eps)
            g_ana = float(g_analytic[i])
            rel = abs(g_ana - g_num) / max(abs(g_ana), abs(g_num), 1e-8)
            if rel > worst:
                worst = rel
    return worst
