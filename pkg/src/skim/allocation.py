"""Per-row error pre-recording and channel bit allocation.

The greedy allocator repeatedly grants one bit to the row whose error drops
the most; the DP allocator solves the same budgeted sum exactly and serves as
the oracle.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numpy as np

from skim.calibration import HessianProxy, row_errors_l_full
from skim.kmeans1d import ClusterResult, kmeans_lloyd, reconstruct_row
from skim.parallel import map_rows

DP_MAX_CELLS = 2**20
_BUDGET_TOL = 1e-9


@dataclass
class KMeansConfig:
    seed: int = 0
    restarts: int = 3


def row_seed(seed: int, row: int) -> int:
    """Seed for row ``row``; shared by error recording and label computation."""
    return int(np.random.SeedSequence([int(seed) % 2**63, int(row)]).generate_state(2, np.uint64)[0])


@dataclass
class ErrorMatrix:
    E: np.ndarray  # (n, b_max - b_min + 1)
    b_min: int
    b_max: int
    # clusterings[i][b - b_min], kept so the pipeline can reuse them
    clusterings: list | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.E = np.asarray(self.E, dtype=np.float64)
        if self.E.ndim != 2 or self.E.shape[1] != self.b_max - self.b_min + 1:
            raise ValueError(
                f"E shape {self.E.shape} inconsistent with bits {self.b_min}..{self.b_max}"
            )
        if np.any(self.E < 0) or not np.all(np.isfinite(self.E)):
            raise ValueError("error matrix entries must be finite and nonnegative")

    @property
    def n(self) -> int:
        return self.E.shape[0]

    def at(self, row: int, bit: int) -> float:
        return float(self.E[row, bit - self.b_min])


@dataclass
class BitAllocation:
    bits: np.ndarray
    target: float
    saturated: bool = False

    @property
    def average(self) -> float:
        return float(np.mean(self.bits))

    @property
    def total(self) -> int:
        return int(np.sum(self.bits))


def _check_bits(b_min, b_max):
    if not 1 <= b_min <= b_max <= 8:
        raise ValueError(f"need 1 <= b_min <= b_max <= 8, got b_min={b_min}, b_max={b_max}")


def _check_target(bit, b_min, b_max):
    if not b_min - _BUDGET_TOL <= bit <= b_max + _BUDGET_TOL:
        raise ValueError(f"target bit {bit} outside [b_min={b_min}, b_max={b_max}]")


def record_error_matrix(W, G, H, b_min: int = 2, b_max: int = 4,
                        kmeans: KMeansConfig | None = None, workers=None,
                        keep_clusterings: bool = True) -> ErrorMatrix:
    """L-full error of every row clustered at every bit in ``[b_min, b_max]``.

    Clustering is weighted by the sensitivity row ``G[i]``; the recorded error
    uses the Hessian proxy ``H``.
    """
    _check_bits(b_min, b_max)
    kmeans = kmeans or KMeansConfig()
    W = np.asarray(W, dtype=np.float64)
    G = np.asarray(G, dtype=np.float64)
    Hm = H.H if isinstance(H, HessianProxy) else np.asarray(H, dtype=np.float64)
    n, m = W.shape
    if G.shape != (n, m):
        raise ValueError(f"G shape {G.shape} does not match W {W.shape}")
    if Hm.shape != (m, m):
        raise ValueError(f"H shape {Hm.shape} does not match {m} columns")

    def one_row(i):
        seed = row_seed(kmeans.seed, i)
        return [
            kmeans_lloyd(W[i], G[i], 2**b, seed=seed, restarts=kmeans.restarts)
            for b in range(b_min, b_max + 1)
        ]

    clusterings = map_rows(one_row, range(n), workers)
    E = np.empty((n, b_max - b_min + 1))
    for col in range(b_max - b_min + 1):
        Wq = np.stack([reconstruct_row(clusterings[i][col]) for i in range(n)]) if n else W
        E[:, col] = row_errors_l_full(W, Wq, Hm)
    return ErrorMatrix(E, b_min, b_max, clusterings if keep_clusterings else None)


def budget_total(n: int, bit: float) -> int:
    """Smallest integer bit total satisfying ``total >= n * bit``."""
    return int(math.ceil(n * bit - _BUDGET_TOL))


def budget_cap(n: int, bit: float) -> int:
    """Largest integer bit total satisfying ``total <= n * bit``."""
    return int(math.floor(n * bit + _BUDGET_TOL))


def allocate_greedy(E: ErrorMatrix, bit: float, init: str = "all-b_min") -> BitAllocation:
    """Grant bits one at a time to the row with the largest error reduction.

    Stops as soon as ``sum(bits) >= n * bit`` (checked before each grant) or
    every row sits at ``b_max``.  Ties go to the lowest row index.
    """
    b_min, b_max, n = E.b_min, E.b_max, E.n
    _check_target(bit, b_min, b_max)
    if init in ("all-b_min", "min"):
        bits = np.full(n, b_min, dtype=np.int64)
    elif init in ("floor-bit", "floor"):
        bits = np.full(n, min(max(int(math.floor(bit + _BUDGET_TOL)), b_min), b_max), dtype=np.int64)
    else:
        raise ValueError(f"unknown allocation init {init!r}")

    target = budget_total(n, bit)
    total = int(bits.sum())
    heap = [(-(E.at(i, bits[i]) - E.at(i, bits[i] + 1)), i) for i in range(n) if bits[i] < b_max]
    heapq.heapify(heap)
    while total < target and heap:
        _, i = heapq.heappop(heap)
        bits[i] += 1
        total += 1
        if bits[i] < b_max:
            heapq.heappush(heap, (-(E.at(i, bits[i]) - E.at(i, bits[i] + 1)), i))
    return BitAllocation(bits, float(bit), saturated=total < target)


def allocate_uniform(n: int, bit: float, b_min: int, b_max: int) -> BitAllocation:
    """Every row at ``bit``; only valid for integral targets."""
    _check_target(bit, b_min, b_max)
    b = round(bit)
    if abs(bit - b) > _BUDGET_TOL:
        raise ValueError(f"uniform allocation needs an integral bit, got {bit}")
    return BitAllocation(np.full(n, int(b), dtype=np.int64), float(bit))


def allocate_dp_oracle(E: ErrorMatrix, bit: float) -> BitAllocation:
    """Exact minimum of ``sum_i E[i, b_i]`` subject to ``sum_i b_i <= floor(n * bit)``."""
    b_min, b_max, n = E.b_min, E.b_max, E.n
    _check_target(bit, b_min, b_max)
    span = b_max - b_min
    if n * max(span, 1) > DP_MAX_CELLS:
        raise ValueError(f"DP oracle limited to {DP_MAX_CELLS} cells, need {n * span}")
    cap = min(budget_cap(n, bit) - n * b_min, n * span)
    if cap < 0:
        raise ValueError("budget below n * b_min is infeasible")

    # best[c]: minimum error of rows processed so far using at most c extra bits
    best = np.zeros(cap + 1)
    choice = np.zeros((n, cap + 1), dtype=np.int64)
    for i in range(n):
        cand = np.full((span + 1, cap + 1), np.inf)
        for e in range(span + 1):
            cand[e, e:] = best[: cap + 1 - e] + E.E[i, e]
        choice[i] = np.argmin(cand, axis=0)  # fewest extra bits on ties
        best = cand[choice[i], np.arange(cap + 1)]
    bits = np.empty(n, dtype=np.int64)
    c = cap
    for i in range(n - 1, -1, -1):
        e = int(choice[i, c])
        bits[i] = b_min + e
        c -= e
    return BitAllocation(bits, float(bit))


def allocation_error(E: ErrorMatrix, alloc) -> float:
    bits = alloc.bits if isinstance(alloc, BitAllocation) else np.asarray(alloc)
    return float(np.sum(E.E[np.arange(E.n), np.asarray(bits) - E.b_min]))
