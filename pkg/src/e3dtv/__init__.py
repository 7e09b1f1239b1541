"""Enhanced 3D total variation (E-3DTV) for hyperspectral image denoising
and compressed-sensing reconstruction."""

from .cs import CompressiveOperator, build_operator, default_cs_config, reconstruct
from .denoise import NumericalError, SolverConfig, SolverReport, denoise
from .fileio import FormatError, read_measurements, read_tensor, write_measurements, write_tensor
from .harness import NoiseSpec, QualityReport, apply_noise, ergas, gen_phantom, psnr, quality_report, ssim
from .regularizer import FactorPair, procrustes_v, soft_threshold, tv3d_measure
from .tensor_core import diff, diff_adjoint, fold3, solve_x_system, unfold3

__version__ = "0.1.0"
