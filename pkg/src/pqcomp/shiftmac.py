"""Exact fixed-point shift-and-add multiplication by APoT levels.

A weight level is ``gamma * sign * sum(2**-e)``. With gamma rounded down to
a power of two ``2**g``, multiplying an integer-mantissa activation by the
level only needs left shifts and additions; the leftover scale
``gamma / 2**g`` is applied once per output channel, outside the MAC loop.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

from .errors import MantissaOverflowError, PrecisionError, VerificationError
from .quant import LevelSet

MANTISSA_BITS = 64
_LIMIT = 1 << (MANTISSA_BITS - 1)


@dataclass(frozen=True)
class FixedPoint:
    mantissa: int
    frac_bits: int

    @property
    def value(self) -> Fraction:
        return Fraction(self.mantissa, 1 << self.frac_bits) if self.frac_bits >= 0 \
            else Fraction(self.mantissa * (1 << -self.frac_bits))

    def __float__(self):
        return float(self.value)

    def align(self, frac_bits: int) -> "FixedPoint":
        """Re-express with more fractional bits (left shift only)."""
        if frac_bits < self.frac_bits:
            raise PrecisionError("alignment would drop fractional bits")
        return FixedPoint(_checked(self.mantissa << (frac_bits - self.frac_bits)), frac_bits)


def _checked(m: int) -> int:
    if not -_LIMIT <= m < _LIMIT:
        raise MantissaOverflowError(f"mantissa {m} does not fit in {MANTISSA_BITS} signed bits")
    return m


def fixed_point_encode(x, frac_bits: int) -> FixedPoint:
    scaled = Fraction(x) * (1 << frac_bits)
    if scaled.denominator != 1:
        raise PrecisionError(f"{x!r} is not representable with {frac_bits} fractional bits")
    return FixedPoint(_checked(scaled.numerator), frac_bits)


def min_frac_bits(x) -> int:
    """Smallest number of fractional bits that encodes ``x`` exactly."""
    den = Fraction(x).denominator
    if den & (den - 1):
        raise PrecisionError(f"{x!r} is not a dyadic rational")
    return den.bit_length() - 1


def shift_mac(act: FixedPoint, weight_terms, gamma_exp: int = 0) -> FixedPoint:
    """act * 2**gamma_exp * sum(sign * 2**-e) using shifts and adds only."""
    if not weight_terms:
        return FixedPoint(0, act.frac_bits)
    widest = max(e for _, e in weight_terms)
    acc = 0
    for sign, e in weight_terms:
        term = act.mantissa << (widest - e)
        acc = acc + term if sign > 0 else acc - term
        _checked(acc)
    frac = act.frac_bits + widest - gamma_exp
    if frac < 0:
        return FixedPoint(_checked(acc << -frac), 0)
    return FixedPoint(acc, frac)


def accumulate(products) -> FixedPoint:
    """Sum fixed-point values at the widest fractional precision among them."""
    products = list(products)
    if not products:
        return FixedPoint(0, 0)
    frac = max(p.frac_bits for p in products)
    return FixedPoint(_checked(sum(p.align(frac).mantissa for p in products)), frac)


def pow2_floor_exp(gamma: float) -> int:
    """Exponent of the largest power of two <= gamma."""
    m, e = math.frexp(gamma)  # gamma = m * 2**e, 0.5 <= m < 1
    return e - 1


def _exact_sum(terms) -> Fraction:
    return sum((Fraction(s, 1 << e) for s, e in terms), Fraction(0))


def encode_terms(terms) -> FixedPoint:
    """Integer code of a level at raw (gamma = 1) scale."""
    return fixed_point_encode(_exact_sum(terms), max((e for _, e in terms), default=0))


@dataclass
class VerificationReport:
    pairs: int
    mismatches: int
    max_mantissa_bits: int
    first_mismatch: object = None

    @property
    def ok(self) -> bool:
        return self.mismatches == 0

    def __str__(self):
        status = "OK" if self.ok else f"FAILED at {self.first_mismatch}"
        return (f"pairs checked: {self.pairs}\nmismatches: {self.mismatches}\n"
                f"widest mantissa: {self.max_mantissa_bits} bits\nstatus: {status}")


def verify_equivalence(weight_levels: LevelSet, act_levels: LevelSet, strict: bool = True
                       ) -> VerificationReport:
    """Check every (activation, weight) level pair against exact rational multiplication.

    Both levels are defined exactly as ``gamma * sum(sign * 2**-e)``; the
    reference product is computed in rationals from those definitions.
    """
    g_exp = pow2_floor_exp(weight_levels.gamma)
    w_residual = Fraction(weight_levels.gamma) / Fraction(2) ** g_exp
    pairs = mismatches = widest = 0
    first = None
    a_scale, w_scale = Fraction(act_levels.gamma), Fraction(weight_levels.gamma)
    for a_level, a_terms in zip(act_levels.levels, act_levels.terms):
        act_fp = encode_terms(a_terms)
        a_exact = a_scale * _exact_sum(a_terms)
        for w_level, w_terms in zip(weight_levels.levels, weight_levels.terms):
            prod = shift_mac(act_fp, w_terms, g_exp)
            got = prod.value * a_scale * w_residual
            want = a_exact * (w_scale * _exact_sum(w_terms))
            pairs += 1
            widest = max(widest, abs(prod.mantissa).bit_length() + 1)
            if got != want:
                mismatches += 1
                if first is None:
                    first = (float(a_level), float(w_level))
                if strict:
                    raise VerificationError(
                        f"shift-add product mismatch for act={a_level!r}, weight={w_level!r}",
                        pair=first)
    return VerificationReport(pairs, mismatches, widest, first)


def widening_bound(act_bits: int, max_shift: int, n_terms: int) -> int:
    return act_bits + max_shift + math.ceil(math.log2(max(n_terms, 1))) + 1
