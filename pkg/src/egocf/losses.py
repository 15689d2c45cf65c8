"""The composite training objective and its gradients.

total = l_qa + alpha * l_pos + beta * l_neg + lambda * l_con

l_qa / l_pos / l_neg are batch-mean cross-entropies (counterfactual
streams are scored against the original ground truth). l_con contrasts
each sample's answer distribution with its positive and negative via
temperature-scaled cosine similarity:

    l_con = -log( exp(s(p, p+)/tau) / (exp(s(p, p+)/tau) + exp(s(p, p-)/tau)) )
          = softplus((s(p, p-) - s(p, p+)) / tau)

computed through logaddexp so tau = 0.1 exponents never overflow. Samples
whose negative construction was a no-op contribute nothing to the
pos/neg/con terms; the batch value is the mean over the usable subset.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, InputError
from .numkit import LOG_CLAMP, as_f64, cross_entropy


@dataclass
class LossWeights:
    alpha: float = 0.8
    beta: float = 1.0
    lam: float = 0.01
    tau: float = 0.1

    def __post_init__(self) -> None:
        if min(self.alpha, self.beta, self.lam) < 0:
            raise InputError("loss weights must be nonnegative")
        if self.tau <= 0:
            raise InputError(f"tau must be positive, got {self.tau}")


@dataclass
class LossBreakdown:
    l_qa: float
    l_pos: float
    l_neg: float
    l_con: float
    total: float

    def recompute_total(self, w: LossWeights) -> float:
        return self.l_qa + w.alpha * self.l_pos + w.beta * self.l_neg + w.lam * self.l_con

    def to_dict(self) -> dict:
        return {"l_qa": self.l_qa, "l_pos": self.l_pos, "l_neg": self.l_neg,
                "l_con": self.l_con, "total": self.total}


# ---------------------------------------------------------------------------
# Cross-entropy terms
# ---------------------------------------------------------------------------


def loss_qa(preds, gts) -> float:
    """Mean cross-entropy of a batch of distributions against one-hots."""
    if len(preds) != len(gts):
        raise DimensionError(f"batch lengths differ: {len(preds)} vs {len(gts)}")
    if len(preds) == 0:
        raise InputError("empty batch")
    return math.fsum(cross_entropy(p, g) for p, g in zip(preds, gts)) / len(preds)


# Counterfactual streams reuse the identical arithmetic.
loss_pos = loss_qa
loss_neg = loss_qa


def ce_values(probs: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Per-sample -log p[label] with the standard clamp; probs (B, K)."""
    picked = probs[np.arange(len(labels)), labels]
    return -np.log(np.maximum(picked, LOG_CLAMP))


def ce_grad(probs: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """d(sum of per-sample CE)/d(probs); caller applies any 1/B scaling."""
    d = np.zeros_like(probs)
    rows = np.arange(len(labels))
    picked = probs[rows, labels]
    live = picked > LOG_CLAMP
    d[rows[live], labels[live]] = -1.0 / picked[live]
    return d


# ---------------------------------------------------------------------------
# Contrastive term
# ---------------------------------------------------------------------------


def _row_cosine(a: np.ndarray, b: np.ndarray):
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    s = np.einsum("ij,ij->i", a, b) / (na * nb)
    return s, na, nb


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    e = np.exp(z[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def loss_con_batch(p: np.ndarray, p_pos: np.ndarray, p_neg: np.ndarray, tau: float):
    """Per-sample contrastive values for (U, K) stacks, plus a backward cache."""
    p, p_pos, p_neg = as_f64(p), as_f64(p_pos), as_f64(p_neg)
    s_pos, n_p, n_pp = _row_cosine(p, p_pos)
    s_neg, _, n_pn = _row_cosine(p, p_neg)
    z = (s_neg - s_pos) / tau
    values = np.logaddexp(0.0, z)
    cache = (p, p_pos, p_neg, s_pos, s_neg, n_p, n_pp, n_pn, z, tau)
    return values, cache


def loss_con_batch_backward(cache):
    """Gradients of the per-sample values w.r.t. (p, p_pos, p_neg)."""
    p, p_pos, p_neg, s_pos, s_neg, n_p, n_pp, n_pn, z, tau = cache
    g = _sigmoid(z) / tau  # dL/ds_neg; dL/ds_pos is its negation
    col = lambda x: x[:, None]
    ds_pos_dp = p_pos / col(n_p * n_pp) - col(s_pos) * p / col(n_p * n_p)
    ds_pos_dpp = p / col(n_p * n_pp) - col(s_pos) * p_pos / col(n_pp * n_pp)
    ds_neg_dp = p_neg / col(n_p * n_pn) - col(s_neg) * p / col(n_p * n_p)
    ds_neg_dpn = p / col(n_p * n_pn) - col(s_neg) * p_neg / col(n_pn * n_pn)
    dp = col(g) * (ds_neg_dp - ds_pos_dp)
    dpp = -col(g) * ds_pos_dpp
    dpn = col(g) * ds_neg_dpn
    return dp, dpp, dpn


def loss_con(p, p_pos, p_neg, tau: float) -> float:
    """Single-sample contrastive loss over three distributions."""
    p, p_pos, p_neg = as_f64(p), as_f64(p_pos), as_f64(p_neg)
    if not (p.shape == p_pos.shape == p_neg.shape) or p.ndim != 1:
        raise DimensionError(
            f"loss_con needs three equal-length vectors, got {p.shape}, {p_pos.shape}, {p_neg.shape}"
        )
    if tau <= 0:
        raise InputError(f"tau must be positive, got {tau}")
    values, _ = loss_con_batch(p[None], p_pos[None], p_neg[None], tau)
    return float(values[0])


def total_loss(l_qa: float, l_pos: float, l_neg: float, l_con: float, w: LossWeights) -> LossBreakdown:
    for name, v in (("l_qa", l_qa), ("l_pos", l_pos), ("l_neg", l_neg), ("l_con", l_con)):
        if not math.isfinite(v):
            raise InputError(f"non-finite loss term {name} = {v}")
    total = l_qa + w.alpha * l_pos + w.beta * l_neg + w.lam * l_con
    return LossBreakdown(l_qa=l_qa, l_pos=l_pos, l_neg=l_neg, l_con=l_con, total=total)
