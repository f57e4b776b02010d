"""Training objectives, the adjoint pass back to E(0), and Adam."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, logsumexp, softmax

from .graph import spmm
from .model import ForwardTrace


@dataclass(frozen=True)
class TrainBatch:
    users: np.ndarray
    pos: np.ndarray
    neg: np.ndarray

    def __post_init__(self):
        for name in ("users", "pos", "neg"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.int64))
        if not (self.users.shape == self.pos.shape == self.neg.shape) or self.users.ndim != 1:
            raise ValueError("batch columns must be 1-d and of equal length")

    def __len__(self) -> int:
        return int(self.users.size)


@dataclass(frozen=True)
class CLConfig:
    tau: float = 0.1
    lambda1: float = 0.3
    lambda2: float = 5e-5
    # reserved: contrast users against items instead of same-kind nodes
    cross_type_negatives: bool = False

    def __post_init__(self):
        if not (np.isfinite(self.tau) and self.tau > 0):
            raise ValueError(f"tau must be > 0, got {self.tau}")
        for name in ("lambda1", "lambda2"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v >= 0):
                raise ValueError(f"{name} must be finite and >= 0, got {v}")
        if self.cross_type_negatives:
            raise NotImplementedError("cross-type InfoNCE negatives are not implemented")


@dataclass
class GradientBuffer:
    grad: np.ndarray
    bpr: float = 0.0
    cl: float = 0.0
    reg: float = 0.0
    total: float = 0.0


def bpr_loss(final: np.ndarray, batch: TrainBatch, num_users: int) -> tuple[float, np.ndarray]:
    """Mean of -log σ(ŷ_ui - ŷ_uj) over the batch, with its gradient w.r.t. ``final``.

    Item indices in ``batch`` are item-local; their rows sit at ``num_users + i``.
    """
    u = final[batch.users]
    p = final[num_users + batch.pos]
    n = final[num_users + batch.neg]
    diff = np.einsum("ij,ij->i", u, p - n)
    m = len(batch)
    loss = float(np.mean(np.logaddexp(0.0, -diff)))
    coef = (-expit(-diff) / m)[:, None]
    grad = np.zeros_like(final)
    np.add.at(grad, batch.users, coef * (p - n))
    np.add.at(grad, num_users + batch.pos, coef * u)
    np.add.at(grad, num_users + batch.neg, -coef * u)
    return loss, grad


def _normalize(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(x, axis=1)
    if np.any(norms == 0):
        raise ValueError("zero-norm row: cosine similarity undefined")
    return x / norms[:, None], norms


def info_nce(anchor: np.ndarray, positive: np.ndarray, tau: float) -> tuple[float, np.ndarray, np.ndarray]:
    """Summed InfoNCE over rows; row i of both inputs is the positive pair.

    Returns the loss and its gradients w.r.t. ``anchor`` and ``positive``.
    The denominator runs over every row of ``positive``, including i itself.
    """
    a_hat, a_norm = _normalize(anchor)
    b_hat, b_norm = _normalize(positive)
    logits = (a_hat @ b_hat.T) / tau
    loss = float(np.sum(logsumexp(logits, axis=1) - np.diag(logits)))
    g = softmax(logits, axis=1)
    g[np.diag_indices_from(g)] -= 1.0
    g /= tau
    ga_hat = g @ b_hat
    gb_hat = g.T @ a_hat
    ga = (ga_hat - a_hat * np.sum(a_hat * ga_hat, axis=1, keepdims=True)) / a_norm[:, None]
    gb = (gb_hat - b_hat * np.sum(b_hat * gb_hat, axis=1, keepdims=True)) / b_norm[:, None]
    return loss, ga, gb


def contrast_nodes(batch: TrainBatch, num_users: int) -> tuple[np.ndarray, np.ndarray]:
    """Global row indices of the batch's distinct users and distinct positive items."""
    return np.unique(batch.users), num_users + np.unique(batch.pos)


def infonce_loss(view_a: np.ndarray, view_b: np.ndarray, batch: TrainBatch, num_users: int,
                 tau: float) -> tuple[float, np.ndarray, np.ndarray]:
    """Users contrasted with users and items with items; the two sums are added."""
    ga = np.zeros_like(view_a)
    gb = np.zeros_like(view_b)
    total = 0.0
    for rows in contrast_nodes(batch, num_users):
        loss, da, db = info_nce(view_a[rows], view_b[rows], tau)
        total += loss
        ga[rows] += da
        gb[rows] += db
    return total, ga, gb


def l2_penalty(e0: np.ndarray, batch: TrainBatch | None, num_users: int,
               full_matrix: bool = False) -> tuple[float, np.ndarray]:
    """Squared Frobenius norm of the batch-touched rows of E(0) (or all of it)."""
    grad = np.zeros_like(e0)
    if full_matrix or batch is None:
        rows = slice(None)
    else:
        rows = np.unique(np.concatenate([batch.users, num_users + batch.pos, num_users + batch.neg]))
    sub = e0[rows]
    grad[rows] = 2.0 * sub
    return float(np.sum(sub * sub)), grad


def total_loss(bpr: float, cl: float, reg: float, cfg: CLConfig) -> float:
    return bpr + cfg.lambda1 * cl + cfg.lambda2 * reg


def backward(trace: ForwardTrace, grad_final=None, grad_view_b=None, grad_view_s=None) -> np.ndarray:
    """Pull head gradients on E(T), B^CL and S^CL back to E(0).

    Each Euler step is the linear map I + s·c_d(Ã - I) + s·α·L̃Ã, whose adjoint
    (Ã, L̃ symmetric) is I + s·c_d(Ã - I) + s·α·ÃL̃. Views add ÃG_b and α·ÃL̃G_s
    per step and the E(0) term once.
    """
    cfg = trace.config
    zero = np.zeros_like(trace.e0)
    g = zero.copy() if grad_final is None else np.array(grad_final, dtype=trace.e0.dtype)
    gb = zero if grad_view_b is None else grad_view_b
    gs = zero if grad_view_s is None else grad_view_s
    s = cfg.step_size
    rate = cfg.reaction_rate
    c_d = 1.0 if cfg.diffusion else 0.0
    for _ in range(cfg.steps):
        inner = gb + c_d * s * g
        if rate:
            inner = inner + rate * spmm(trace.lap, s * g + gs)
        g = (1.0 - c_d * s) * g + spmm(trace.adj, inner)
    g = g + gb + gs
    if not np.all(np.isfinite(g)):
        raise FloatingPointError("non-finite gradient")
    return g


@dataclass
class AdamState:
    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: np.ndarray | None = field(default=None, repr=False)
    v: np.ndarray | None = field(default=None, repr=False)


def adam_step(params: np.ndarray, grads: np.ndarray, state: AdamState) -> np.ndarray:
    """In-place bias-corrected Adam update; returns ``params``."""
    if params.shape != grads.shape:
        raise ValueError(f"param shape {params.shape} != grad shape {grads.shape}")
    if state.m is None:
        state.m = np.zeros_like(params)
        state.v = np.zeros_like(params)
    state.step += 1
    state.m *= state.beta1
    state.m += (1.0 - state.beta1) * grads
    state.v *= state.beta2
    state.v += (1.0 - state.beta2) * grads * grads
    m_hat = state.m / (1.0 - state.beta1 ** state.step)
    v_hat = state.v / (1.0 - state.beta2 ** state.step)
    update = state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    if not np.all(np.isfinite(update)):
        raise FloatingPointError("non-finite Adam update")
    params -= update
    return params
