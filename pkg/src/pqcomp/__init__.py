"""Filter pruning by geometric-median distance combined with additive powers-of-two quantization.

The package is organised bottom-up: ``autograd`` and ``optim`` form a small
numpy training engine, ``quant`` and ``prune`` hold the two compression
primitives, ``pipelines`` wires them into the SPQ and PPQ training loops,
``metrics`` does static size/BOPs accounting, and ``shiftmac`` checks the
shift-and-add arithmetic that APoT levels allow.
"""
from .autograd import Tensor
from .metrics import Policy, builtin_arch, compression_report
from .models import build_model
from .pipelines import TrainConfig, run_ppq, run_spq, train_baseline
from .prune import gm_mask
from .quant import QuantConfig, build_level_set, quantize_nearest

__version__ = "0.1.0"

__all__ = ["Tensor", "Policy", "builtin_arch", "compression_report", "build_model", "TrainConfig",
           "run_ppq", "run_spq", "train_baseline", "gm_mask", "QuantConfig", "build_level_set",
           "quantize_nearest"]
