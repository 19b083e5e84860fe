"""End-to-end layer quantization: record errors, allocate bits, cluster, scale."""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from skim.allocation import (
    BitAllocation,
    ErrorMatrix,
    KMeansConfig,
    allocate_dp_oracle,
    allocate_greedy,
    allocate_uniform,
    allocation_error,
    record_error_matrix,
)
from skim.calibration import HessianProxy, row_errors_l_full
from skim.packing import QuantizedLayer, dequantize, pad_codebook, size_report
from skim.scaling import (
    AdamConfig,
    calc_centroids,
    compute_labels,
    iterative_optimize,
    loss_and_grad,
)

PRESETS = ("default", "opt-style")
INITS = {"min": "all-b_min", "all-b_min": "all-b_min", "floor": "floor-bit", "floor-bit": "floor-bit"}


@dataclass
class PipelineConfig:
    target_bit: float = 3.0
    b_min: int = 2
    b_max: int = 4
    mixed_precision: bool = True
    allocation_init: str = "all-b_min"
    scaling: bool = True
    iters: int = 1
    seed: int = 0
    restarts: int = 3
    adam: AdamConfig = field(default_factory=AdamConfig)
    oracle: bool = False
    preset: str = "default"

    def __post_init__(self):
        if isinstance(self.adam, dict):
            self.adam = AdamConfig(**self.adam)
        if self.preset not in PRESETS:
            raise ValueError(f"unknown preset {self.preset!r}")
        if self.allocation_init not in INITS:
            raise ValueError(f"unknown allocation init {self.allocation_init!r}")
        self.allocation_init = INITS[self.allocation_init]
        if not 1 <= self.b_min <= self.b_max <= 8:
            raise ValueError(f"need 1 <= b_min <= b_max <= 8, got {self.b_min}..{self.b_max}")
        if not self.b_min <= self.target_bit <= self.b_max:
            raise ValueError(
                f"target bit {self.target_bit} must lie in [b_min={self.b_min}, b_max={self.b_max}]"
            )
        integral = float(self.target_bit).is_integer()
        if self.preset == "opt-style":
            self.allocation_init = "floor-bit"
            if integral:
                self.mixed_precision = False
        if not self.mixed_precision and not integral:
            raise ValueError("mixed precision can only be disabled for an integral target bit")
        if self.iters < 1 or self.restarts < 1:
            raise ValueError("iters and restarts must be >= 1")

    @property
    def kmeans(self) -> KMeansConfig:
        return KMeansConfig(self.seed, self.restarts)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        return cls(**d)


@dataclass
class QuantReport:
    layer: str
    n: int
    m: int
    target_bit: float
    avg_bits: float
    loss_grouping: float    # L-full loss with the initial labels at alpha = 1
    loss_final: float       # L-full loss after scaling (f64 centroids)
    loss_packed: float      # L-full loss of the dequantized packed layer
    recorded_error: float   # sum of pre-recorded errors at the chosen allocation
    bit_histogram: dict
    row_bits: list
    row_errors: list        # per-row L-full error of the final quantization
    error_matrix: list      # rows of E, for error-vs-bit scatter plots
    b_min: int
    b_max: int
    size: dict
    saturated: bool
    trace: list
    iteration_losses: list
    oracle: dict | None
    config: dict
    wall_time: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "QuantReport":
        return cls(**d)


def _slice_errors(E: ErrorMatrix, b_min: int, b_max: int) -> ErrorMatrix:
    if E.b_min > b_min or E.b_max < b_max:
        raise ValueError(
            f"cached error matrix covers bits {E.b_min}..{E.b_max}, need {b_min}..{b_max}"
        )
    lo, hi = b_min - E.b_min, b_max - E.b_min + 1
    clus = None
    if E.clusterings is not None:
        clus = [row[lo:hi] for row in E.clusterings]
    out = ErrorMatrix(E.E[:, lo:hi], b_min, b_max, clus)
    out.kmeans = getattr(E, "kmeans", None)
    return out


def allocate(E: ErrorMatrix, cfg: PipelineConfig) -> BitAllocation:
    if cfg.mixed_precision:
        return allocate_greedy(E, cfg.target_bit, cfg.allocation_init)
    return allocate_uniform(E.n, cfg.target_bit, E.b_min, E.b_max)


def _initial_labels(W, G, E: ErrorMatrix, alloc, cfg, workers):
    """Reuse the clusterings made while recording errors when they match."""
    if E.clusterings is not None and getattr(E, "kmeans", None) == cfg.kmeans:
        return np.stack([
            E.clusterings[i][int(b) - E.b_min].labels for i, b in enumerate(alloc.bits)
        ]).astype(np.int64)
    return compute_labels(W, np.ones(W.shape[1]), G, alloc, cfg.kmeans, workers)


def record_errors(W, G, H, cfg: PipelineConfig, workers=None) -> ErrorMatrix:
    E = record_error_matrix(W, G, H, cfg.b_min, cfg.b_max, cfg.kmeans, workers)
    E.kmeans = cfg.kmeans
    return E


def quantize_layer(W, G, H, cfg: PipelineConfig, errors: ErrorMatrix | None = None,
                   name: str = "layer", workers=None):
    """Quantize one layer; returns ``(QuantizedLayer, QuantReport)``.

    ``errors`` may be a previously recorded error matrix (any bit range that
    covers ``[b_min, b_max]``); it is then reused instead of re-clustering.
    """
    t0 = time.perf_counter()
    W = np.asarray(W, dtype=np.float64)
    G = np.asarray(G, dtype=np.float64)
    Hp = H if isinstance(H, HessianProxy) else HessianProxy.from_matrix(H)
    n, m = W.shape
    if G.shape != W.shape or Hp.H.shape != (m, m):
        raise ValueError("W, G and H shapes are inconsistent")

    E = record_errors(W, G, Hp, cfg, workers) if errors is None else _slice_errors(
        errors, cfg.b_min, cfg.b_max)
    alloc = allocate(E, cfg)
    labels0 = _initial_labels(W, G, E, alloc, cfg, workers)

    if cfg.scaling:
        res = iterative_optimize(W, G, Hp, alloc, cfg.iters, cfg.adam, cfg.kmeans,
                                 initial_labels=labels0, workers=workers)
        labels, centroids, alpha = res.labels, res.codebooks, res.alpha
        loss_grouping, loss_final = res.initial_loss, res.final_loss
        trace = [list(t) for t in res.trace]
        iteration_losses = list(res.iteration_losses)
    else:
        alpha = np.ones(m)
        labels = labels0
        centroids = calc_centroids(W, alpha, labels, G)
        loss_grouping = loss_final = loss_and_grad(W, labels, G, Hp, alpha)[0]
        trace, iteration_losses = [], []

    codebooks = [pad_codebook(c, int(b)) for c, b in zip(centroids, alloc.bits)]
    layer = QuantizedLayer(alloc.bits, labels, codebooks, alpha.astype(np.float32),
                           cfg.b_min, cfg.b_max,
                           {"layer": name, "target_bit": repr(float(cfg.target_bit))})
    Wq = np.stack([c[l] for c, l in zip(centroids, labels)]) * alpha
    row_err = row_errors_l_full(W, Wq, Hp)
    packed_loss = float(np.sum(row_errors_l_full(W, dequantize(layer), Hp)))

    oracle = None
    if cfg.oracle and cfg.mixed_precision:
        dp = allocate_dp_oracle(E, cfg.target_bit)
        g_err, d_err = allocation_error(E, alloc), allocation_error(E, dp)
        oracle = {
            "greedy_error": g_err,
            "dp_error": d_err,
            "gap": g_err - d_err,
            "relative_gap": (g_err - d_err) / d_err if d_err > 0 else 0.0,
            "greedy_avg_bits": alloc.average,
            "dp_avg_bits": dp.average,
        }

    hist = {str(b): int(np.sum(alloc.bits == b)) for b in range(cfg.b_min, cfg.b_max + 1)}
    report = QuantReport(
        layer=name, n=n, m=m, target_bit=float(cfg.target_bit), avg_bits=alloc.average,
        loss_grouping=float(loss_grouping), loss_final=float(loss_final),
        loss_packed=packed_loss, recorded_error=allocation_error(E, alloc),
        bit_histogram=hist, row_bits=[int(b) for b in alloc.bits],
        row_errors=[float(e) for e in row_err], error_matrix=E.E.tolist(),
        b_min=cfg.b_min, b_max=cfg.b_max, size=size_report(layer).as_dict(),
        saturated=alloc.saturated, trace=trace, iteration_losses=iteration_losses,
        oracle=oracle, config=cfg.to_dict(),
    )
    report.wall_time = time.perf_counter() - t0
    if not math.isfinite(report.loss_final):
        raise FloatingPointError("non-finite final loss")
    return layer, report
