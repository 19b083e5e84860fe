"""Scaled k-means weight quantization with channel-wise mixed precision."""

from skim.allocation import (
    BitAllocation,
    ErrorMatrix,
    allocate_dp_oracle,
    allocate_greedy,
    allocate_uniform,
    allocation_error,
    record_error_matrix,
)
from skim.calibration import (
    CalibSample,
    HessianProxy,
    accumulate_hessian_proxy,
    accumulate_row_fisher_full,
    accumulate_sensitivity,
    err_l_diag,
    err_l_full,
    err_matrix_l_full,
    err_s_diag,
    err_s_full,
)
from skim.kmeans1d import ClusterResult, kmeans_exact_dp, kmeans_lloyd
from skim.packing import QuantizedLayer, dequantize, pack, size_report, unpack
from skim.pipeline import PipelineConfig, quantize_layer
from skim.scaling import AdamConfig, iterative_optimize, loss_and_grad, optimize_alpha
from skim.tensor_store import Matrix, read_bundle, write_bundle

__version__ = "0.1.0"
