"""Additive powers-of-two (APoT) quantization.

A level is ``gamma * sum(P_i)`` where each term ``P_i`` is either 0 or one of
``2**-(i + j*n)`` for ``j = 0 .. 2**k - 2`` (``n`` terms of ``k`` bits each,
interleaved exponents). Signed sets spend one bit on the sign and build the
magnitudes from the remaining ``b - 1`` bits; when those do not split evenly
into ``k``-bit terms, the last term gets the leftover bits.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np

from .autograd import Tensor, _result
from .errors import ConfigError, DomainError

SUPPORTED_BITS = (2, 3, 4, 8)
SUPPORTED_K = (1, 2)
PASSTHROUGH_BITS = 32


@dataclass(frozen=True)
class QuantConfig:
    bits: int = 4
    k: int = 2
    signed: bool = False
    clip: str = "max_abs"  # or "percentile"
    percentile: float = 99.9

    def __post_init__(self):
        if self.bits == PASSTHROUGH_BITS:
            return
        if self.k not in SUPPORTED_K:
            raise ConfigError(f"base bit-width k={self.k} not in {SUPPORTED_K}")
        if self.bits not in SUPPORTED_BITS:
            raise ConfigError(f"bit-width b={self.bits} not in {SUPPORTED_BITS} (or 32 for passthrough)")
        if not self.signed and self.bits % self.k:
            raise ConfigError(f"b={self.bits} is not divisible by k={self.k}")
        if self.clip not in ("max_abs", "percentile"):
            raise ConfigError(f"unknown clip policy {self.clip!r}")
        if not 0 < self.percentile <= 100:
            raise ConfigError("percentile must lie in (0, 100]")

    @property
    def passthrough(self) -> bool:
        return self.bits == PASSTHROUGH_BITS

    @property
    def magnitude_bits(self) -> int:
        return self.bits - 1 if self.signed else self.bits

    @property
    def term_bits(self) -> tuple:
        """Bits per additive term; all ``k`` except possibly a shorter last one."""
        m = self.magnitude_bits
        split = [self.k] * (m // self.k)
        if m % self.k:
            split.append(m % self.k)
        return tuple(split)

    @property
    def n(self) -> int:
        return len(self.term_bits)


@lru_cache(maxsize=None)
def _raw_table(term_bits: tuple) -> tuple:
    """All distinct raw sums with the exponents that produce them, ascending."""
    n = len(term_bits)
    choices = []
    for i, kb in enumerate(term_bits):
        choices.append([None] + [i + j * n for j in range(2 ** kb - 1)])
    table = {}
    for combo in itertools.product(*choices):
        exps = tuple(sorted(e for e in combo if e is not None))
        value = sum(2.0 ** -e for e in exps)
        if value in table:
            raise ConfigError(f"term split {term_bits} produces duplicate level {value}")
        table[value] = exps
    raw = sorted(table)
    return tuple(raw), tuple(table[v] for v in raw)


def max_raw_level(config: QuantConfig) -> float:
    """Largest unscaled sum; using it as alpha gives gamma == 1."""
    return _raw_table(config.term_bits)[0][-1]


@dataclass
class LevelSet:
    gamma: float
    alpha: float
    levels: np.ndarray  # ascending, float64
    signed: bool
    terms: list = field(repr=False)  # per level: list of (sign, exponent)
    code_count: int = 0

    def __len__(self):
        return len(self.levels)

    @property
    def lower(self) -> float:
        return -self.alpha if self.signed else 0.0

    def quantize(self, x) -> np.ndarray:
        return quantize_array(x, self)


def build_level_set(config: QuantConfig, alpha: float) -> LevelSet:
    if config.passthrough:
        raise ConfigError("a 32-bit passthrough config has no level set")
    if not alpha > 0:
        raise DomainError(f"clipping threshold must be positive, got {alpha}")
    raw, exps = _raw_table(config.term_bits)
    gamma = alpha / raw[-1]
    mags = [gamma * r for r in raw]
    if config.signed:
        levels = [-m for m in reversed(mags[1:])] + mags
        terms = [[(-1, e) for e in ex] for ex in reversed(exps[1:])] + [[(1, e) for e in ex] for ex in exps]
        codes = 2 * len(raw)
    else:
        levels, terms, codes = mags, [[(1, e) for e in ex] for ex in exps], len(raw)
    return LevelSet(gamma, float(alpha), np.array(levels, dtype=np.float64), config.signed,
                    terms, codes)


def compute_clip_threshold(values, config: QuantConfig) -> float:
    mags = np.abs(np.asarray(values, dtype=np.float64)).ravel()
    if mags.size == 0:
        raise DomainError("cannot derive a clipping threshold from an empty tensor")
    if config.clip == "percentile":
        alpha = float(np.percentile(mags, config.percentile))
    else:
        alpha = float(mags.max())
    if alpha <= 0:
        # degenerate all-zero input: any positive threshold maps everything to 0
        alpha = float(np.finfo(np.float32).tiny)
    return alpha


def quantize_array(x, ls: LevelSet) -> np.ndarray:
    """Nearest-level projection after clamping; ties resolve toward zero."""
    x = np.asarray(x, dtype=np.float64)
    lv = ls.levels
    if len(lv) == 1:
        return np.full_like(x, lv[0])
    xc = np.clip(x, lv[0], lv[-1])
    idx = np.clip(np.searchsorted(lv, xc, side="left"), 1, len(lv) - 1)
    lo, hi = lv[idx - 1], lv[idx]
    d_lo, d_hi = xc - lo, hi - xc
    take_hi = (d_hi < d_lo) | ((d_hi == d_lo) & (np.abs(hi) < np.abs(lo)))
    return np.where(take_hi, hi, lo)


def quantize_nearest(x: float, ls: LevelSet) -> float:
    return float(quantize_array(x, ls))


def quantize_ste(t: Tensor, ls: LevelSet) -> Tensor:
    """Quantized forward; clipped straight-through gradient."""
    q = quantize_array(t.data, ls).astype(t.dtype)
    inside = (t.data >= ls.lower) & (t.data <= ls.alpha)
    return _result(q, (t,), lambda g: (g * inside,), "quantize_ste")


def quantize_tensor_ste(t: Tensor, config: QuantConfig, alpha: Optional[float] = None,
                        role: str = "weight") -> Tensor:
    if role == "activation" and config.signed:
        raise ConfigError("activations are post-ReLU; use an unsigned quantizer")
    if config.passthrough:
        return t
    if alpha is None:
        alpha = compute_clip_threshold(t.data, config)
    return quantize_ste(t, build_level_set(config, alpha))


def decompose_level(level: float, ls: LevelSet):
    """Return ([(sign, exponent), ...], gamma) with gamma*sum(sign*2**-e) == level."""
    hit = np.flatnonzero(ls.levels == level)
    if hit.size == 0:
        raise DomainError(f"{level!r} is not a level of this set")
    return list(ls.terms[int(hit[0])]), ls.gamma


def rebuild_level(terms, gamma: float) -> float:
    if not terms:
        return 0.0 * gamma
    sign = terms[0][0]
    return sign * (gamma * sum(2.0 ** -e for _, e in terms))


class ActivationQuantizer:
    """Unsigned activation quantizer with a warm-up running-max threshold.

    While not frozen, training calls widen ``alpha`` to the largest activation
    seen so far; ``freeze()`` fixes it for the rest of training and for eval.
    """

    def __init__(self, config: QuantConfig):
        if config.signed:
            raise ConfigError("activations are post-ReLU; use an unsigned quantizer")
        self.config = config
        self.alpha = 0.0
        self.frozen = False
        self._cache: Optional[LevelSet] = None

    def freeze(self) -> None:
        self.frozen = True

    def reset(self) -> None:
        self.alpha, self.frozen, self._cache = 0.0, False, None

    def level_set(self) -> LevelSet:
        alpha = self.alpha if self.alpha > 0 else float(np.finfo(np.float32).tiny)
        if self._cache is None or self._cache.alpha != alpha:
            self._cache = build_level_set(self.config, alpha)
        return self._cache

    def __call__(self, x: Tensor, training: bool = False) -> Tensor:
        if self.config.passthrough:
            return x
        if training and not self.frozen:
            self.alpha = max(self.alpha, float(x.data.max()))
        return quantize_ste(x, self.level_set())
