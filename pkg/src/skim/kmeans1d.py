"""Weighted one-dimensional k-means for a single weight row.

``kmeans_lloyd`` is the production path (k-means++ seeding, restarts).
``kmeans_exact_dp`` is the exact oracle: optimal 1-D clusters are contiguous
in sorted order, so a DP over prefix sums finds the global optimum.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

WEIGHT_FLOOR = 1e-12
MAX_SWEEPS = 100
DP_MAX_POINTS = 4096
SWAP_CANDIDATES = 3
_U64 = 2**64


@dataclass
class ClusterResult:
    labels: np.ndarray     # (m,) int64 in [0, k)
    centroids: np.ndarray  # (k',) strictly ascending, k' <= k
    objective: float

    @property
    def k(self) -> int:
        return len(self.centroids)


def floor_weights(weights) -> np.ndarray:
    """Clamp weights below at ``1e-12 * max``; all-zero weights become uniform."""
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 1:
        raise ValueError("weights must be 1-D")
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise ValueError("weights must be finite and nonnegative")
    top = w.max() if w.size else 0.0
    if top <= 0.0:
        return np.ones_like(w)
    return np.maximum(w, WEIGHT_FLOOR * top)


def _prepare(values, weights, k):
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise ValueError("values must be a non-empty 1-D sequence")
    if not np.all(np.isfinite(v)):
        raise ValueError("values must be finite")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    w = floor_weights(weights)
    if w.shape != v.shape:
        raise ValueError(f"weights shape {w.shape} does not match values {v.shape}")
    return v, w


def _objective(v, w, labels, centroids) -> float:
    d = v - centroids[labels]
    return float(np.sum(w * d * d))


def _finalize(v, w, labels) -> ClusterResult:
    """Weighted-mean centroids for ``labels``; drop empties, sort, merge equal."""
    k = int(labels.max()) + 1
    wsum = np.bincount(labels, weights=w, minlength=k)
    vsum = np.bincount(labels, weights=w * v, minlength=k)
    used = np.flatnonzero(wsum > 0)
    cents = vsum[used] / wsum[used]
    order = np.argsort(cents, kind="stable")
    cents = cents[order]
    uniq, inverse = np.unique(cents, return_inverse=True)
    remap = np.full(k, -1, dtype=np.int64)
    remap[used[order]] = inverse
    new_labels = remap[labels]
    if len(uniq) != len(cents):
        wsum = np.bincount(new_labels, weights=w, minlength=len(uniq))
        uniq = np.bincount(new_labels, weights=w * v, minlength=len(uniq)) / wsum
    return ClusterResult(new_labels, uniq, _objective(v, w, new_labels, uniq))


def _exact_fit(v, w) -> ClusterResult | None:
    uniq, inverse = np.unique(v, return_inverse=True)
    return ClusterResult(inverse.astype(np.int64), uniq, 0.0), len(uniq)


def _assign(v, centers) -> np.ndarray:
    # argmin returns the first minimum, so ties go to the lower centroid index
    d = v[:, None] - centers[None, :]
    return np.argmin(d * d, axis=1).astype(np.int64)


def _pick(rng, p) -> int:
    c = np.cumsum(p)
    idx = int(np.searchsorted(c, rng.random() * c[-1], side="right"))
    return min(idx, len(p) - 1)


def _kmeanspp(v, w, k, rng) -> np.ndarray:
    """Greedy weighted k-means++: each step samples several D^2 candidates and
    keeps the one giving the lowest potential."""
    trials = 2 + int(np.log(k))
    centers = [v[_pick(rng, w)]]
    d2 = (v - centers[0]) ** 2
    for _ in range(1, k):
        p = w * d2
        if p.sum() <= 0.0:
            break
        best_c, best_pot, best_d2 = None, np.inf, None
        for _ in range(trials):
            c = v[_pick(rng, p)]
            cand = np.minimum(d2, (v - c) ** 2)
            pot = float(np.sum(w * cand))
            if pot < best_pot:
                best_c, best_pot, best_d2 = c, pot, cand
        centers.append(best_c)
        d2 = best_d2
    return np.sort(np.array(centers))


def _lloyd(v, w, centers, history=None):
    k = len(centers)
    labels = _assign(v, centers)
    if history is not None:
        history.append(_objective(v, w, labels, centers))
    for _ in range(MAX_SWEEPS):
        wsum = np.bincount(labels, weights=w, minlength=k)
        vsum = np.bincount(labels, weights=w * v, minlength=k)
        full = wsum > 0
        centers = np.where(full, vsum / np.where(full, wsum, 1.0), centers)
        if not full.all():
            # reseed empties at the worst-fit points
            resid = w * (v - centers[labels]) ** 2
            for c in np.flatnonzero(~full):
                j = int(np.argmax(resid))
                centers[c] = v[j]
                resid[j] = -1.0
        centers = np.sort(centers)
        new_labels = _assign(v, centers)
        if history is not None:
            history.append(_objective(v, w, new_labels, centers))
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
    return labels, centers


def _transfer_pass(v, w, labels, k) -> bool:
    """Hartigan single-point transfers, best improvement first.

    Moving point j from cluster a to b changes the objective by
    ``Wb*wj/(Wb+wj)*(vj-mb)^2 - Wa*wj/(Wa-wj)*(vj-ma)^2``.
    """
    moved = False
    for _ in range(v.size * k):
        W = np.bincount(labels, weights=w, minlength=k)
        S = np.bincount(labels, weights=w * v, minlength=k)
        occupied = W > 0
        mu = np.where(occupied, S / np.where(occupied, W, 1.0), 0.0)
        Wa = W[labels]
        lone = Wa - w <= 0.0
        remove = Wa * w / np.where(lone, 1.0, Wa - w) * (v - mu[labels]) ** 2
        add = W[None, :] * w[:, None] / (W[None, :] + w[:, None]) * (v[:, None] - mu[None, :]) ** 2
        add[~np.broadcast_to(occupied, add.shape)] = np.inf
        add[np.arange(v.size), labels] = np.inf
        delta = add - remove[:, None]
        delta[lone] = np.inf  # never empty a cluster here
        j, b = np.unravel_index(int(np.argmin(delta)), delta.shape)
        tot = float(np.sum(w * (v - mu[labels]) ** 2))
        if not delta[j, b] < -1e-12 * max(tot, 1e-300):
            break
        labels[j] = b
        moved = True
    return moved


def _polish(v, w, labels, centers, k, history=None):
    """Alternate Lloyd with point transfers until neither moves anything."""
    for _ in range(MAX_SWEEPS):
        if not _transfer_pass(v, w, labels, k):
            break
        W = np.bincount(labels, weights=w, minlength=k)
        S = np.bincount(labels, weights=w * v, minlength=k)
        centers = np.where(W > 0, S / np.where(W > 0, W, 1.0), centers)
        if history is not None:
            history.append(_objective(v, w, labels, centers))
        labels, centers = _lloyd(v, w, np.sort(centers), history)
    return labels, centers


def _merge_costs(v, w, labels, k) -> np.ndarray:
    """Cost of folding each cluster into its cheaper sorted neighbour."""
    W = np.bincount(labels, weights=w, minlength=k)
    S = np.bincount(labels, weights=w * v, minlength=k)
    mu = S / np.where(W > 0, W, 1.0)
    pair = W[:-1] * W[1:] / np.maximum(W[:-1] + W[1:], 1e-300) * (mu[1:] - mu[:-1]) ** 2
    cost = np.full(k, np.inf)
    cost[:-1] = pair
    cost[1:] = np.minimum(cost[1:], pair)
    cost[W <= 0] = -np.inf  # an empty slot is free to move
    return cost


def _swap_search(v, w, labels, centers, k, history=None):
    """Relocate a cheap-to-merge centroid onto the worst-fit point; keep improvements."""
    obj = _objective(v, w, labels, centers)
    for _ in range(MAX_SWEEPS):
        improved = False
        resid = w * (v - centers[labels]) ** 2
        target = v[int(np.argmax(resid))]
        cost = _merge_costs(v, w, labels, k)
        for c in np.argsort(cost, kind="stable")[:SWAP_CANDIDATES]:
            trial = centers.copy()
            trial[c] = target
            t_labels, t_centers = _lloyd(v, w, np.sort(trial))
            t_labels, t_centers = _polish(v, w, t_labels, t_centers, k)
            t_obj = _objective(v, w, t_labels, t_centers)
            if t_obj < obj * (1.0 - 1e-12):
                labels, centers, obj = t_labels, t_centers, t_obj
                if history is not None:
                    history.append(obj)
                improved = True
                break
        if not improved:
            break
    return labels, centers


def _lloyd_run(v, w, k, rng, history=None):
    centers = _kmeanspp(v, w, k, rng)
    if len(centers) < k:
        centers = np.concatenate([centers, np.full(k - len(centers), centers[-1])])
    labels, centers = _lloyd(v, w, centers, history)
    labels, centers = _polish(v, w, labels, centers, k, history)
    labels, centers = _swap_search(v, w, labels, centers, k, history)
    return labels


def kmeans_lloyd(values, weights, k: int, seed: int = 0, restarts: int = 3) -> ClusterResult:
    """Best of ``restarts`` k-means++-seeded weighted Lloyd runs.

    Restart ``r`` draws from ``default_rng(seed + r)`` so the result depends
    only on the arguments.
    """
    v, w = _prepare(values, weights, k)
    exact, n_distinct = _exact_fit(v, w)
    if k >= n_distinct:
        return exact
    best = None
    for r in range(max(1, restarts)):
        rng = np.random.default_rng((int(seed) + r) % _U64)
        res = _finalize(v, w, _lloyd_run(v, w, k, rng))
        if best is None or res.objective < best.objective:
            best = res
    return best


def kmeans_exact_dp(values, weights, k: int) -> ClusterResult:
    """Globally optimal weighted 1-D k-means by DP over sorted distinct values."""
    v, w = _prepare(values, weights, k)
    if v.size > DP_MAX_POINTS:
        raise ValueError(f"exact DP is limited to {DP_MAX_POINTS} points, got {v.size}")
    exact, n_distinct = _exact_fit(v, w)
    if k >= n_distinct:
        return exact
    uniq = exact.centroids
    uw = np.bincount(exact.labels, weights=w, minlength=n_distinct)
    x = uniq - np.sum(uw * uniq) / np.sum(uw)  # centered for conditioning
    W1 = np.concatenate([[0.0], np.cumsum(uw)])
    S1 = np.concatenate([[0.0], np.cumsum(uw * x)])
    S2 = np.concatenate([[0.0], np.cumsum(uw * x * x)])
    u = n_distinct

    def seg_cost(starts, end):
        ws = W1[end] - W1[starts]
        s1 = S1[end] - S1[starts]
        return np.maximum(S2[end] - S2[starts] - s1 * s1 / ws, 0.0)

    # D[c, j]: best cost of splitting the first j distinct values into c+1 segments
    D = np.full((k, u + 1), np.inf)
    back = np.zeros((k, u + 1), dtype=np.int64)
    for j in range(1, u + 1):
        D[0, j] = seg_cost(np.array([0]), j)[0]
    for c in range(1, k):
        for j in range(c + 1, u + 1):
            starts = np.arange(c, j)
            cand = D[c - 1, starts] + seg_cost(starts, j)
            t = int(np.argmin(cand))
            D[c, j] = cand[t]
            back[c, j] = starts[t]
    seg_of = np.empty(u, dtype=np.int64)
    end = u
    for c in range(k - 1, -1, -1):
        start = back[c, end] if c > 0 else 0
        seg_of[start:end] = c
        end = start
    return _finalize(v, w, seg_of[exact.labels])


def weighted_objective(values, weights, result: ClusterResult) -> float:
    """Weighted within-cluster squared error of ``result`` (floored weights)."""
    v = np.asarray(values, dtype=np.float64)
    w = floor_weights(weights)
    return _objective(v, w, np.asarray(result.labels), np.asarray(result.centroids))


def reconstruct_row(result: ClusterResult) -> np.ndarray:
    return np.asarray(result.centroids)[np.asarray(result.labels)]
