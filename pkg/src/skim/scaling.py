"""Column scaling vector trained with cluster labels held fixed.

With labels ``L`` fixed, the scaled centroids are sensitivity-weighted means

    c[i, l] = sum_{j: L_ij = l} G_ij W_ij / a_j  /  sum_{j: L_ij = l} G_ij

and the reconstruction ``Wq_ij = c[i, L_ij] * a_j`` is smooth in ``a``, so the
L-full loss ``sum_i r_i H r_i^T`` (``r = W - Wq``) has a closed-form gradient.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from skim.allocation import BitAllocation, KMeansConfig, row_seed
from skim.calibration import HessianProxy
from skim.kmeans1d import WEIGHT_FLOOR, kmeans_lloyd
from skim.parallel import map_rows

ALPHA_MIN = 1e-4
ALPHA_MAX = 1e4


@dataclass
class AdamConfig:
    lr: float = 0.01
    decay: float = 0.5
    decay_every: int = 40
    max_steps: int = 120
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    stall_tol: float = 1e-10
    stall_steps: int = 10

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if not 0 < self.decay <= 1:
            raise ValueError("decay must be in (0, 1]")
        if self.decay_every < 1 or self.max_steps < 0:
            raise ValueError("decay_every must be >= 1 and max_steps >= 0")

    def lr_at(self, step: int) -> float:
        return self.lr * self.decay ** (step // self.decay_every)


def floor_weight_rows(G) -> np.ndarray:
    """Row-wise version of :func:`skim.kmeans1d.floor_weights`."""
    G = np.asarray(G, dtype=np.float64)
    top = G.max(axis=1, keepdims=True) if G.size else np.zeros((G.shape[0], 1))
    floored = np.maximum(G, WEIGHT_FLOOR * top)
    return np.where(top > 0, floored, 1.0)


def _hmat(H):
    return H.H if isinstance(H, HessianProxy) else np.asarray(H, dtype=np.float64)


def _check_alpha(alpha, m):
    alpha = np.asarray(alpha, dtype=np.float64)
    if alpha.shape != (m,):
        raise ValueError(f"alpha must have shape ({m},), got {alpha.shape}")
    if np.any(alpha <= 0) or not np.all(np.isfinite(alpha)):
        raise ValueError("alpha must be finite and positive")
    return alpha


def compute_labels(W, alpha, G, alloc: BitAllocation, kmeans: KMeansConfig | None = None,
                   workers=None) -> np.ndarray:
    """Cluster each row of ``W / alpha`` into ``2**bits[i]`` centroids (weights ``G``)."""
    kmeans = kmeans or KMeansConfig()
    W = np.asarray(W, dtype=np.float64)
    n, m = W.shape
    alpha = _check_alpha(alpha, m)
    G = np.asarray(G, dtype=np.float64)
    bits = np.asarray(alloc.bits if isinstance(alloc, BitAllocation) else alloc)
    if G.shape != W.shape or bits.shape != (n,):
        raise ValueError("W, G and the allocation disagree on shape")
    scaled = W / alpha

    def one_row(i):
        res = kmeans_lloyd(scaled[i], G[i], 2 ** int(bits[i]),
                           seed=row_seed(kmeans.seed, i), restarts=kmeans.restarts)
        return res.labels

    return np.stack(map_rows(one_row, range(n), workers)).astype(np.int64)


def _flat_index(labels):
    n = labels.shape[0]
    K = int(labels.max()) + 1 if labels.size else 1
    return np.arange(n)[:, None] * K + labels, K


def _centroid_table(W, alpha, labels, Gf):
    idx, K = _flat_index(labels)
    size = labels.shape[0] * K
    S = np.bincount(idx.ravel(), weights=Gf.ravel(), minlength=size)
    T = np.bincount(idx.ravel(), weights=(Gf * (W / alpha)).ravel(), minlength=size)
    return idx, S, T


def calc_centroids(W, alpha, labels, G) -> list[np.ndarray]:
    """Sensitivity-weighted centroid of every label class of ``W / alpha``."""
    W = np.asarray(W, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    alpha = _check_alpha(alpha, W.shape[1])
    if labels.shape != W.shape:
        raise ValueError("labels shape does not match W")
    Gf = floor_weight_rows(G)
    idx, S, T = _centroid_table(W, alpha, labels, Gf)
    K = S.size // max(W.shape[0], 1)
    out = []
    for i in range(W.shape[0]):
        k_i = int(labels[i].max()) + 1
        s = S[i * K : i * K + k_i]
        if np.any(s <= 0):
            raise ValueError(f"row {i} has a label class with no weight")
        out.append(T[i * K : i * K + k_i] / s)
    return out


def reconstruct_weights(codebooks, labels, alpha) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    alpha = np.asarray(alpha, dtype=np.float64)
    Wq = np.empty(labels.shape)
    for i, cb in enumerate(codebooks):
        Wq[i] = np.asarray(cb, dtype=np.float64)[labels[i]]
    return Wq * alpha


def loss_and_grad(W, labels, G, H, alpha) -> tuple[float, np.ndarray]:
    """L-full reconstruction loss at ``alpha`` and its gradient (labels fixed)."""
    W = np.asarray(W, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    alpha = _check_alpha(alpha, W.shape[1])
    Hm = _hmat(H)
    Gf = floor_weight_rows(G)
    idx, S, T = _centroid_table(W, alpha, labels, Gf)
    C = T / np.where(S > 0, S, 1.0)
    cq = C[idx]
    R = W - cq * alpha
    RH = R @ Hm
    loss = float(np.sum(RH * R))
    if not np.isfinite(loss):
        raise FloatingPointError("non-finite scaling loss")
    U = 2.0 * RH  # d loss / d R
    A = np.bincount(idx.ravel(), weights=(U * alpha).ravel(), minlength=S.size)
    grad = -np.sum(U * cq, axis=0) + np.sum(
        A[idx] * Gf * W / S[idx], axis=0
    ) / alpha**2
    return max(loss, 0.0), grad


def optimize_alpha(W, labels, G, H, cfg: AdamConfig | None = None, alpha0=None):
    """Adam on the scaling vector; returns ``(best_alpha, trace)``.

    ``trace`` holds ``(step, loss, lr)`` for every evaluated step.  The
    returned vector is the one with the lowest loss seen, so the result is
    never worse than the starting point.
    """
    cfg = cfg or AdamConfig()
    W = np.asarray(W, dtype=np.float64)
    alpha = np.ones(W.shape[1]) if alpha0 is None else _check_alpha(alpha0, W.shape[1]).copy()
    m1 = np.zeros_like(alpha)
    m2 = np.zeros_like(alpha)
    best_alpha, best = alpha.copy(), np.inf
    stall = 0
    trace = []
    for step in range(cfg.max_steps + 1):
        loss, grad = loss_and_grad(W, labels, G, H, alpha)
        lr = cfg.lr_at(step)
        trace.append((step, loss, lr))
        if loss < best:
            small = np.isfinite(best) and best - loss <= cfg.stall_tol * best
            stall = stall + 1 if small else 0
            best, best_alpha = loss, alpha.copy()
        else:
            stall += 1
        if step == cfg.max_steps or stall >= cfg.stall_steps:
            break
        t = step + 1
        m1 = cfg.beta1 * m1 + (1 - cfg.beta1) * grad
        m2 = cfg.beta2 * m2 + (1 - cfg.beta2) * grad * grad
        mhat = m1 / (1 - cfg.beta1**t)
        vhat = m2 / (1 - cfg.beta2**t)
        alpha = np.clip(alpha - lr * mhat / (np.sqrt(vhat) + cfg.eps), ALPHA_MIN, ALPHA_MAX)
    return best_alpha, trace


@dataclass
class ScalingResult:
    labels: np.ndarray
    codebooks: list
    alpha: np.ndarray
    initial_loss: float                  # loss with the first labels at alpha = 1
    iteration_losses: list = field(default_factory=list)  # running best after each iteration
    trace: list = field(default_factory=list)             # (iteration, step, loss, lr)

    @property
    def final_loss(self) -> float:
        return self.iteration_losses[-1] if self.iteration_losses else self.initial_loss


def iterative_optimize(W, G, H, alloc: BitAllocation, iters: int = 1,
                       cfg: AdamConfig | None = None, kmeans: KMeansConfig | None = None,
                       initial_labels=None, workers=None) -> ScalingResult:
    """Alternate label fitting at the current scales with scale training.

    A re-fit that ends worse than the best pair so far is discarded, so the
    recorded per-iteration losses never increase.
    """
    cfg = cfg or AdamConfig()
    W = np.asarray(W, dtype=np.float64)
    if iters < 1:
        raise ValueError("iters must be >= 1")
    alpha = np.ones(W.shape[1])
    if initial_labels is None:
        labels = compute_labels(W, alpha, G, alloc, kmeans, workers)
    else:
        labels = np.asarray(initial_labels, dtype=np.int64)
    initial_loss, _ = loss_and_grad(W, labels, G, H, alpha)

    best_labels, best_alpha, best_loss = labels, alpha, initial_loss
    result = ScalingResult(labels, [], alpha, initial_loss)
    for it in range(iters):
        if it > 0:
            labels = compute_labels(W, best_alpha, G, alloc, kmeans, workers)
        cand_alpha, trace = optimize_alpha(W, labels, G, H, cfg, alpha0=best_alpha)
        result.trace.extend((it, s, l, r) for s, l, r in trace)
        cand_loss = min(l for _, l, _ in trace)
        if cand_loss <= best_loss or it == 0:
            best_labels, best_alpha, best_loss = labels, cand_alpha, cand_loss
        result.iteration_losses.append(best_loss)
    result.labels = best_labels
    result.alpha = best_alpha
    result.codebooks = calc_centroids(W, best_alpha, best_labels, G)
    return result
