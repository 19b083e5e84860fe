"""Randomized oracle harness: fast paths checked against exact references.

Used by ``skim oracle-check`` and by the acceptance tests.  Every check
returns a plain dict so results can be printed or asserted on.
"""

from __future__ import annotations

import numpy as np

from skim.allocation import (
    BitAllocation,
    ErrorMatrix,
    allocate_dp_oracle,
    allocate_greedy,
    allocation_error,
)
from skim.calibration import (
    CalibSample,
    accumulate_row_fisher_full,
    err_l_full,
    err_s_full,
)
from skim.kmeans1d import kmeans_exact_dp, kmeans_lloyd
from skim.scaling import compute_labels, loss_and_grad


def _rel(a, b):
    return abs(a - b) / max(abs(a), abs(b), 1e-300)


def objective_equivalence(seed: int = 0, trials: int = 100, max_dim: int = 32) -> dict:
    """Frobenius layer error vs per-row quadratic forms; S-full vs squared scalar."""
    rng = np.random.default_rng(seed)
    worst_l = worst_s = worst_s_plain = 0.0
    for _ in range(trials):
        n, m, k = (int(x) for x in rng.integers(1, max_dim + 1, size=3))
        dW = rng.standard_normal((n, m))
        X = rng.standard_normal((m, k))
        gy = rng.standard_normal((n, k))
        frob = float(np.sum((dW @ X) ** 2))
        H = X @ X.T
        rows = sum(err_l_full(dW[i], np.zeros(m), H) for i in range(n))
        worst_l = max(worst_l, _rel(frob, rows))
        F = accumulate_row_fisher_full([CalibSample(X, gy)])
        g = gy @ X.T
        for i in range(n):
            scalar = float(dW[i] @ X @ gy[i]) ** 2
            quad = err_s_full(dW[i], np.zeros(m), F[i])
            # round-off in either form is bounded by eps * (sum_j |r_j g_j|)^2
            scale = float(np.abs(dW[i]) @ np.abs(g[i])) ** 2
            worst_s = max(worst_s, abs(quad - scalar) / max(scale, 1e-300))
            worst_s_plain = max(worst_s_plain, _rel(quad, scalar))
    return {
        "trials": trials,
        "max_rel_l_full": worst_l,
        "max_scaled_s_full": worst_s,
        "max_rel_s_full": worst_s_plain,
    }


def random_kmeans_instance(rng, max_m=64, max_k=8):
    m = int(rng.integers(1, max_m + 1))
    k = int(rng.integers(1, max_k + 1))
    values = rng.standard_normal(m)
    weights = rng.exponential(size=m) * (rng.random(m) > 0.1)
    return values, weights, k


def kmeans_oracle(seed: int = 0, trials: int = 500, restarts: int = 10,
                  exact_tol: float = 1e-9) -> dict:
    """Lloyd vs exact DP on random weighted 1-D instances."""
    rng = np.random.default_rng(seed)
    exact = 0
    violations = 0
    gaps = []
    for t in range(trials):
        values, weights, k = random_kmeans_instance(rng)
        lloyd = kmeans_lloyd(values, weights, k, seed=seed * 100003 + t, restarts=restarts)
        dp = kmeans_exact_dp(values, weights, k)
        slack = exact_tol * max(lloyd.objective, 1e-300)
        if dp.objective > lloyd.objective + slack:
            violations += 1
        if lloyd.objective <= dp.objective + slack:
            exact += 1
        else:
            gaps.append((lloyd.objective - dp.objective) / dp.objective)
    return {
        "trials": trials,
        "exact_fraction": exact / trials,
        "max_rel_gap": max(gaps, default=0.0),
        "dominance_violations": violations,
    }


def convex_error_matrix(rng, n, b_min=2, b_max=4) -> ErrorMatrix:
    """Integer errors, decreasing in bits with non-increasing reductions."""
    span = b_max - b_min
    E = np.empty((n, span + 1))
    for i in range(n):
        gains = np.sort(rng.integers(0, 500, size=span))[::-1]
        base = rng.integers(0, 1000)
        E[i] = base + np.concatenate([np.cumsum(gains[::-1])[::-1], [0]])
    return ErrorMatrix(E, b_min, b_max)


def arbitrary_error_matrix(rng, n, b_min=2, b_max=4) -> ErrorMatrix:
    return ErrorMatrix(rng.integers(0, 1000, size=(n, b_max - b_min + 1)).astype(float), b_min, b_max)


def _integral_target(rng, n, b_min, b_max):
    total = int(rng.integers(n * b_min, n * b_max + 1))
    return total / n


def allocation_oracle(seed: int = 0, trials: int = 200, max_n: int = 64) -> dict:
    """Greedy vs DP knapsack on convex and arbitrary error matrices."""
    rng = np.random.default_rng(seed)
    convex_mismatch = 0
    dominance_violations = 0
    gaps = []
    for _ in range(trials):
        n = int(rng.integers(1, max_n + 1))
        E = convex_error_matrix(rng, n)
        bit = _integral_target(rng, n, 2, 4)
        if allocation_error(E, allocate_greedy(E, bit)) != allocation_error(E, allocate_dp_oracle(E, bit)):
            convex_mismatch += 1
    for _ in range(trials):
        n = int(rng.integers(1, max_n + 1))
        E = arbitrary_error_matrix(rng, n)
        bit = _integral_target(rng, n, 2, 4)
        g = allocation_error(E, allocate_greedy(E, bit))
        d = allocation_error(E, allocate_dp_oracle(E, bit))
        if d > g:
            dominance_violations += 1
        gaps.append((g - d) / d if d > 0 else 0.0)
    budget_violations = 0
    for _ in range(trials):
        n = int(rng.integers(1, max_n + 1))
        E = arbitrary_error_matrix(rng, n)
        bit = float(rng.uniform(2, 4))
        alloc = allocate_greedy(E, bit)
        if not alloc.saturated and not (bit - 1e-12 <= alloc.average < bit + 1.0 / n):
            budget_violations += 1
    gaps = np.array(gaps)
    return {
        "trials": trials,
        "convex_mismatches": convex_mismatch,
        "dominance_violations": dominance_violations,
        "budget_violations": budget_violations,
        "gap_mean": float(gaps.mean()),
        "gap_median": float(np.median(gaps)),
        "gap_p95": float(np.quantile(gaps, 0.95)),
        "gap_max": float(gaps.max()),
        "gap_zero_fraction": float(np.mean(gaps == 0)),
    }


def finite_difference_grad(f, alpha, rel_step=1e-5) -> np.ndarray:
    """Central differences with step ``rel_step * |alpha_j|``."""
    alpha = np.asarray(alpha, dtype=np.float64)
    g = np.empty_like(alpha)
    for j in range(alpha.size):
        h = rel_step * abs(alpha[j])
        up, dn = alpha.copy(), alpha.copy()
        up[j] += h
        dn[j] -= h
        g[j] = (f(up) - f(dn)) / (up[j] - dn[j])
    return g


def random_scaling_instance(rng, max_n=8, max_m=12):
    n = int(rng.integers(1, max_n + 1))
    m = int(rng.integers(6, max_m + 1))  # more values than centroids, so the loss is nonzero
    W = rng.standard_normal((n, m)) * rng.lognormal(0, 1, size=(n, 1))
    G = rng.exponential(size=(n, m))
    X = rng.standard_normal((m, 16))
    H = X @ X.T / 16
    alloc = BitAllocation(rng.integers(1, 3, size=n), 1.5)
    labels = compute_labels(W, np.ones(m), G, alloc)
    alpha = rng.lognormal(0, 0.3, size=m)
    return W, G, H, labels, alpha


def gradient_check(seed: int = 0, trials: int = 100) -> dict:
    """Analytical scaling gradient vs central finite differences."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        W, G, H, labels, alpha = random_scaling_instance(rng)
        _, grad = loss_and_grad(W, labels, G, H, alpha)
        fd = finite_difference_grad(lambda a: loss_and_grad(W, labels, G, H, a)[0], alpha)
        err = np.max(np.abs(grad - fd)) / max(np.max(np.abs(fd)), 1e-300)
        worst = max(worst, float(err))
    return {"trials": trials, "max_rel_error": worst}
