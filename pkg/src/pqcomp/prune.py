"""Geometric-median filter pruning.

Instead of solving for the geometric median of a layer's filters, each filter
is scored by the summed Euclidean distance to every filter in the layer. The
filters with the smallest sums sit closest to the median and are the most
replaceable, so they get masked first.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .autograd import Tensor
from .errors import ConfigError, ShapeError
from .optim import OptimState

log = logging.getLogger(__name__)


@dataclass
class PruneMask:
    layer_id: str
    keep: np.ndarray  # bool per output filter

    @property
    def pruned_count(self) -> int:
        return int((~self.keep).sum())

    @property
    def pruned(self) -> np.ndarray:
        return np.flatnonzero(~self.keep)

    def __len__(self):
        return len(self.keep)


def flatten_filters(weights) -> np.ndarray:
    """(O, I, KH, KW) -> (O, I*KH*KW), input-channel-major then row then column."""
    w = np.asarray(weights.data if isinstance(weights, Tensor) else weights)
    if w.ndim < 2:
        raise ShapeError(f"expected a filter bank, got shape {w.shape}")
    return w.reshape(w.shape[0], -1)


def filter_distance_sums(weights) -> np.ndarray:
    f = flatten_filters(weights).astype(np.float64)
    diff = f[:, None, :] - f[None, :, :]
    return np.sqrt((diff * diff).sum(axis=2)).sum(axis=1)


# Scores this close (relative to the largest) count as tied. Exact ties are common,
# e.g. the two middle filters of a 1-D layer, and rescaling the weights must not
# let roundoff decide between them.
TIE_RTOL = 1e-9


def _tie_ranks(scores: np.ndarray) -> np.ndarray:
    """Dense rank per score, with runs of near-equal sorted scores sharing a rank."""
    order = np.argsort(scores, kind="stable")
    tol = TIE_RTOL * float(np.abs(scores).max(initial=0.0))
    steps = np.diff(scores[order]) > tol
    ranks = np.empty(len(scores), dtype=np.int64)
    ranks[order] = np.concatenate(([0], np.cumsum(steps)))
    return ranks


def prune_count(rate: float, filters: int) -> int:
    if not 0 <= rate < 1:
        raise ConfigError(f"prune rate must lie in [0, 1), got {rate}")
    # floor(rate * O); the epsilon keeps e.g. 0.3*10 from landing at 2.999...
    return int(math.floor(rate * filters + 1e-9))


def select_prune_set(scores, rate: float, layer_id: str = "",
                     previous: Optional[PruneMask] = None) -> PruneMask:
    """Mask the ``floor(rate*O)`` lowest scores, ties (within TIE_RTOL) going to the lower index.

    Filters already pruned in ``previous`` stay pruned and count toward the total.
    """
    scores = np.asarray(scores, dtype=np.float64)
    count = prune_count(rate, len(scores))
    keep = np.ones(len(scores), dtype=bool)
    forced = np.zeros(len(scores), dtype=bool) if previous is None else ~previous.keep
    if forced.sum() > count:
        raise ConfigError(f"{layer_id}: {forced.sum()} filters already pruned exceeds target {count}")
    if count:
        # forced first, then ascending score, then lowest index
        order = np.lexsort((np.arange(len(scores)), _tie_ranks(scores), ~forced))
        keep[order[:count]] = False
    return PruneMask(layer_id, keep)


def gm_mask(weights, rate: float, layer_id: str = "",
            previous: Optional[PruneMask] = None) -> PruneMask:
    """Score ``weights`` and mask the closest ``floor(rate*O)`` filters."""
    w = weights.data if isinstance(weights, Tensor) else np.asarray(weights)
    if w.shape[0] < 2:
        log.warning("layer %s has a single filter; pruning skipped", layer_id)
        return PruneMask(layer_id, np.ones(w.shape[0], dtype=bool))
    return select_prune_set(filter_distance_sums(w), rate, layer_id, previous)


def apply_mask(param: Tensor, mask: PruneMask, zero_grad: bool = False,
               optim_state: Optional[OptimState] = None) -> Tensor:
    """Zero masked filters in place.

    With ``zero_grad`` the filters are frozen: later gradients into them are
    discarded and their momentum is cleared, so they stay exactly zero.
    """
    if len(mask) != param.shape[0]:
        raise ShapeError(f"mask over {len(mask)} filters does not match weight {param.shape}")
    param.data[~mask.keep] = 0
    if zero_grad:
        param.grad_keep = mask.keep.copy() if param.grad_keep is None else param.grad_keep & mask.keep
        if param.grad is not None:
            param.grad[~mask.keep] = 0
        if optim_state is not None:
            optim_state.reset_rows(param, param.grad_keep)
    return param
