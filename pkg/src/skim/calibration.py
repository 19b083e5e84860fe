"""Calibration statistics and the four layer reconstruction objectives.

Notation: a layer ``Y = W X`` with ``W`` (n x m), ``X`` (m x k).  For row ``i``
the weight gradient is ``g_i = gy_i X^T`` where ``gy_i`` is the gradient of the
final loss with respect to output row ``i``.

* L-full  ``r (X X^T) r^T``
* L-diag  ``sum_j ||x_j||^2 r_j^2``
* S-diag  ``sum_j (g_i)_j^2 r_j^2``
* S-full  ``r (g_i^T g_i) r^T``

with ``r = w_i - wq_i``.  All statistics are means over calibration samples.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

NEG_SLACK = 1e-9
ROW_FISHER_BUDGET = 2**26


@dataclass
class CalibSample:
    X: np.ndarray   # (m, k) layer input
    Gy: np.ndarray  # (n, k) loss gradient w.r.t. the layer output

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.Gy = np.asarray(self.Gy, dtype=np.float64)
        if self.X.ndim != 2 or self.Gy.ndim != 2:
            raise ValueError("X and Gy must be 2-D")
        if self.X.shape[1] != self.Gy.shape[1]:
            raise ValueError(
                f"X has {self.X.shape[1]} columns but Gy has {self.Gy.shape[1]}"
            )


@dataclass
class HessianProxy:
    H: np.ndarray      # (m, m)
    diagH: np.ndarray  # (m,)

    @classmethod
    def from_matrix(cls, H) -> "HessianProxy":
        H = np.asarray(H, dtype=np.float64)
        return cls(H, np.diag(H).copy())

    @property
    def m(self) -> int:
        return self.H.shape[0]


def _check_samples(samples, n=None, m=None):
    if not samples:
        raise ValueError("at least one calibration sample is required")
    m = samples[0].X.shape[0] if m is None else m
    n = samples[0].Gy.shape[0] if n is None else n
    for d, s in enumerate(samples):
        if s.X.shape[0] != m:
            raise ValueError(f"sample {d}: X has {s.X.shape[0]} rows, expected {m}")
        if s.Gy.shape[0] != n:
            raise ValueError(f"sample {d}: Gy has {s.Gy.shape[0]} rows, expected {n}")
    return n, m


def weight_gradient(sample: CalibSample) -> np.ndarray:
    """Per-sample weight gradient ``Gy X^T`` of shape (n, m)."""
    return sample.Gy @ sample.X.T


def accumulate_sensitivity(samples: list[CalibSample]) -> np.ndarray:
    """Mean squared weight gradient, shape (n, m)."""
    n, m = _check_samples(samples)
    G = np.zeros((n, m))
    for s in samples:
        G += weight_gradient(s) ** 2
    return G / len(samples)


def accumulate_hessian_proxy(samples: list[CalibSample]) -> HessianProxy:
    _, m = _check_samples(samples)
    H = np.zeros((m, m))
    for s in samples:
        H += s.X @ s.X.T
    H /= len(samples)
    # symmetrize away accumulation round-off
    H = 0.5 * (H + H.T)
    return HessianProxy.from_matrix(H)


def accumulate_row_fisher_full(samples: list[CalibSample]) -> np.ndarray:
    """Per-row Fisher blocks ``mean_d g_i^T g_i``, shape (n, m, m).

    Quadratic in ``m`` per row, so refused above ``n * m^2 > 2**26`` elements.
    """
    n, m = _check_samples(samples)
    if n * m * m > ROW_FISHER_BUDGET:
        raise MemoryError(
            f"row Fisher needs n*m^2 = {n * m * m} elements, budget is {ROW_FISHER_BUDGET}"
        )
    F = np.zeros((n, m, m))
    for s in samples:
        g = weight_gradient(s)
        F += g[:, :, None] * g[:, None, :]
    return F / len(samples)


def _residual(w, wq):
    w = np.asarray(w, dtype=np.float64)
    wq = np.asarray(wq, dtype=np.float64)
    if w.shape != wq.shape:
        raise ValueError(f"shape mismatch: {w.shape} vs {wq.shape}")
    return w - wq


def _clamp(value: float, scale: float) -> float:
    if value < 0.0:
        if value < -NEG_SLACK * max(scale, 1.0):
            raise ArithmeticError(
                f"quadratic form is {value:g}; weighting matrix is not PSD"
            )
        return 0.0
    return float(value)


def _quad(r, A) -> float:
    A = np.asarray(A, dtype=np.float64)
    if A.shape != (r.size, r.size):
        raise ValueError(f"weighting matrix shape {A.shape} does not match residual {r.shape}")
    val = float(r @ A @ r)
    return _clamp(val, float(np.abs(r) @ np.abs(A) @ np.abs(r)))


def err_l_full(w, wq, H) -> float:
    """Layer-wise error of one row with the full Hessian proxy."""
    r = _residual(w, wq)
    Hm = H.H if isinstance(H, HessianProxy) else H
    return _quad(r, Hm)


def err_l_diag(w, wq, diagH) -> float:
    r = _residual(w, wq)
    d = diagH.diagH if isinstance(diagH, HessianProxy) else np.asarray(diagH, dtype=np.float64)
    if d.shape != r.shape:
        raise ValueError(f"diagH shape {d.shape} does not match residual {r.shape}")
    return float(np.sum(d * r * r))


def err_s_diag(w, wq, g_row) -> float:
    r = _residual(w, wq)
    g = np.asarray(g_row, dtype=np.float64)
    if g.shape != r.shape:
        raise ValueError(f"sensitivity row shape {g.shape} does not match residual {r.shape}")
    return float(np.sum(g * r * r))


def err_s_full(w, wq, F_i) -> float:
    r = _residual(w, wq)
    return _quad(r, F_i)


def row_errors_l_full(W, Wq, H) -> np.ndarray:
    """Vector of per-row L-full errors."""
    R = _residual(W, Wq)
    if R.ndim != 2:
        raise ValueError("expected 2-D weight matrices")
    Hm = H.H if isinstance(H, HessianProxy) else np.asarray(H, dtype=np.float64)
    if Hm.shape != (R.shape[1], R.shape[1]):
        raise ValueError(f"H shape {Hm.shape} does not match {R.shape[1]} columns")
    vals = np.einsum("ij,ij->i", R @ Hm, R)
    scale = np.einsum("ij,ij->i", np.abs(R) @ np.abs(Hm), np.abs(R))
    if np.any(vals < -NEG_SLACK * np.maximum(scale, 1.0)):
        raise ArithmeticError("negative quadratic form; H is not PSD")
    return np.maximum(vals, 0.0)


def err_matrix_l_full(W, Wq, H) -> float:
    """Sum of per-row L-full errors, i.e. ``||(W - Wq) X||_F^2`` for one sample."""
    return float(np.sum(row_errors_l_full(W, Wq, H)))
