"""
Analytic separation-rank bounds.

Upper bound (vocabulary and convolution embeddings alike):
    sep <= ((r+r_e, 3^L)) * ((4, 3^L)) * (3^L + 1)^(r+r_e)
Lower bound (L >= 2, H < r):
    sep >= ((floor((r-H)/2), 3^(L-2)))
with r replaced by min(r, d_x) everywhere. Leading-order scales L*min(r, d_x)
and L*(min(r, d_x) - H) are reported alongside, never with invented constants.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass
from typing import Optional

from seprank.config import EXACT_BITS_LIMIT
from seprank.errors import InputError
from seprank.numerics import log_multiset, multiset_coeff

logger = logging.getLogger(__name__)

_LN2 = math.log(2.0)

DEPTH_EFFICIENCY = 'depth_efficiency'
DUAL_CONTRIBUTION = 'dual_contribution'
BOUNDARY = 'boundary'


@dataclass(frozen=True)
class BoundInputs:
    L: int
    d_x: int
    r: int
    r_e: int = 1
    H: int = 1
    V: Optional[int] = None
    N: Optional[int] = None

    def __post_init__(self):
        for name in ('L', 'd_x', 'r', 'r_e', 'H'):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, int) or value < 1:
                raise InputError(f"{name} must be a positive integer, got: {value!r}")
        for name in ('V', 'N'):
            value = getattr(self, name)
            if value is not None and (not isinstance(value, int) or value < 1):
                raise InputError(f"{name} must be a positive integer when given, got: {value!r}")

    @property
    def effective_rank(self):
        return min(self.r, self.d_x)


@dataclass(frozen=True)
class AssumptionFlags:
    depth_ok: bool
    heads_ok: bool
    vocab_ok: Optional[bool]
    regime: str  # 'vocabulary' when V is given, otherwise 'large_n'


@dataclass(frozen=True)
class AsymptoticScales:
    upper: int
    lower: int


@dataclass(frozen=True)
class DepthRegime:
    regime: str
    threshold: float
    depth: int


@dataclass(frozen=True)
class BoundReport:
    inputs: BoundInputs
    upper_exact: Optional[int]
    upper_log: float
    lower_exact: Optional[int]
    lower_log: Optional[float]
    flags: Optional[AssumptionFlags]
    scales: AsymptoticScales
    regime: DepthRegime

    @property
    def upper_log2(self):
        return self.upper_log / _LN2

    @property
    def lower_log2(self):
        return None if self.lower_log is None else self.lower_log / _LN2

    @property
    def lower_available(self):
        return self.lower_log is not None

    def to_dict(self):
        return {
            'inputs': asdict(self.inputs),
            'effective_rank': self.inputs.effective_rank,
            'upper_exact': self.upper_exact,
            'upper_log': self.upper_log,
            'upper_log2': self.upper_log2,
            'lower_exact': self.lower_exact,
            'lower_log': self.lower_log,
            'lower_log2': self.lower_log2,
            'assumption_flags': asdict(self.flags) if self.flags else None,
            'scales': asdict(self.scales),
            'depth_regime': asdict(self.regime),
        }


def _representable(log_value):
    return log_value / _LN2 <= EXACT_BITS_LIMIT


def upper_bound(inputs: BoundInputs):
    """Return (exact or None, natural log) of the upper bound."""
    r = inputs.effective_rank
    order = 3 ** inputs.L
    width = r + inputs.r_e
    log_value = (
        log_multiset(width, order)
        + log_multiset(4, order)
        + width * math.log(order + 1)
    )
    exact = None
    if _representable(log_value):
        exact = multiset_coeff(width, order) * multiset_coeff(4, order) * (order + 1) ** width
    return exact, log_value


def lower_bound(inputs: BoundInputs):
    """
    Return (exact or None, natural log, AssumptionFlags).

    Degenerates to 1 when H >= r or floor((r-H)/2) = 0.
    """
    if inputs.L < 2:
        raise InputError(f"lower bound needs L >= 2 (3^(L-2) undefined), got L={inputs.L}")
    r = inputs.effective_rank
    depth_ok = 3 ** inputs.L > inputs.d_x
    heads_ok = inputs.H < r
    d = (r - inputs.H) // 2
    if not heads_ok or d < 1:
        logger.warning(
            "lower bound degenerates to 1 (r=%d, H=%d): heads assumption H < r fails or (r-H)/2 < 1",
            r, inputs.H,
        )
        exact, log_value = 1, 0.0
    else:
        order = 3 ** (inputs.L - 2)
        log_value = log_multiset(d, order)
        exact = multiset_coeff(d, order) if _representable(log_value) else None
    if inputs.V is None:
        vocab_ok, regime = None, 'large_n'
    else:
        regime = 'vocabulary'
        if exact is not None:
            vocab_ok = inputs.V >= 2 * exact + 1
        else:
            vocab_ok = math.log(inputs.V) >= log_value + _LN2
    flags = AssumptionFlags(depth_ok=depth_ok, heads_ok=heads_ok, vocab_ok=vocab_ok, regime=regime)
    return exact, log_value, flags


def asymptotic_logs(inputs: BoundInputs):
    r = inputs.effective_rank
    return AsymptoticScales(upper=inputs.L * r, lower=inputs.L * (r - inputs.H))


def depth_regime(L, d_x):
    """Classify L against the log_3(d_x) threshold; |L - threshold| < 0.5 is a boundary."""
    if d_x < 1:
        raise InputError(f"d_x must be >= 1, got: {d_x}")
    threshold = math.log(d_x) / math.log(3)
    if abs(L - threshold) < 0.5:
        regime = BOUNDARY
    elif L > threshold:
        regime = DUAL_CONTRIBUTION
    else:
        regime = DEPTH_EFFICIENCY
    return DepthRegime(regime=regime, threshold=threshold, depth=L)


def bound_report(inputs: BoundInputs):
    upper_exact, upper_log = upper_bound(inputs)
    lower_exact = lower_log = flags = None
    if inputs.L >= 2:
        lower_exact, lower_log, flags = lower_bound(inputs)
    return BoundReport(
        inputs=inputs,
        upper_exact=upper_exact,
        upper_log=upper_log,
        lower_exact=lower_exact,
        lower_log=lower_log,
        flags=flags,
        scales=asymptotic_logs(inputs),
        regime=depth_regime(inputs.L, inputs.d_x),
    )
