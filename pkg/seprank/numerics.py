"""
Dense matrix primitives, tolerance-based numerical rank and exact/log-space
combinatorics shared by every other module.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from seprank.config import DEFAULT_RANK_TOL, EQUILIBRATION_SWEEPS
from seprank.errors import InputError

# Below this many factors the log of a binomial is summed term by term; above
# it gammaln is accurate enough because both arguments are large.
_LOG_SUM_LIMIT = 10_000


@dataclass(frozen=True)
class RankTolerance:
    relative_threshold: float = DEFAULT_RANK_TOL

    def __post_init__(self):
        if not 0.0 < self.relative_threshold < 1.0:
            raise InputError(
                f"relative_threshold must lie in (0, 1), got: {self.relative_threshold}"
            )

    @classmethod
    def coerce(cls, tol, default=DEFAULT_RANK_TOL):
        if tol is None:
            return cls(default)
        if isinstance(tol, RankTolerance):
            return tol
        return cls(float(tol))


def as_matrix(m, name='matrix'):
    """Return ``m`` as a finite, non-empty 2-D float array."""
    arr = np.asarray(m, dtype=float)
    if arr.ndim != 2:
        raise InputError(f"{name} must be 2-D, got shape {arr.shape}")
    if arr.size == 0:
        raise InputError(f"{name} is empty")
    if not np.all(np.isfinite(arr)):
        raise InputError(f"{name} has non-finite entries")
    return arr


def singular_values(m):
    return np.linalg.svd(as_matrix(m), compute_uv=False)


def equilibrate(m, sweeps=EQUILIBRATION_SWEEPS):
    """
    D_r @ m @ D_c with positive diagonal scalings that bring every nonzero row
    and column max-abs close to 1 (alternating square-root scaling).

    The exact rank is unchanged. Entries below eps^2 of the largest one are
    set to zero first so that rounding residue is never scaled up.
    """
    m = np.array(as_matrix(m), dtype=float)
    peak = np.abs(m).max()
    if peak == 0.0:
        return m
    m[np.abs(m) <= peak * np.finfo(float).eps ** 2] = 0.0
    for _ in range(sweeps):
        rows = np.abs(m).max(axis=1)
        rows[rows == 0.0] = 1.0
        m /= np.sqrt(rows)[:, None]
        cols = np.abs(m).max(axis=0)
        cols[cols == 0.0] = 1.0
        m /= np.sqrt(cols)[None, :]
    return m


def numerical_rank(m, tol=None):
    """
    Count singular values above ``tol.relative_threshold * sigma_max``.

    The all-zero matrix has rank 0.
    """
    tol = RankTolerance.coerce(tol)
    sv = singular_values(m)
    sigma_max = sv[0] if sv.size else 0.0
    if sigma_max == 0.0:
        return 0
    return int(np.count_nonzero(sv > tol.relative_threshold * sigma_max))


def _check_counts(n, k):
    for label, value in (('n', n), ('k', k)):
        if isinstance(value, bool) or int(value) != value or value < 0:
            raise InputError(f"{label} must be a non-negative integer, got: {value!r}")


def multiset_coeff(n, k):
    """((n, k)) = C(n+k-1, k), exact."""
    _check_counts(n, k)
    n, k = int(n), int(k)
    if k == 0:
        return 1
    if n == 0:
        return 0
    return math.comb(n + k - 1, k)


def _log_comb(top, m):
    """ln C(top, m) for 0 <= m <= top, stable for astronomically large ``top``."""
    if m == 0:
        return 0.0
    if m <= _LOG_SUM_LIMIT:
        # math.log accepts arbitrarily large ints
        return math.fsum(math.log(top - m + t) - math.log(t) for t in range(1, m + 1))
    return float(gammaln(top + 1.0) - gammaln(m + 1.0) - gammaln(top - m + 1.0))


def log_multiset(n, k):
    """Natural log of multiset_coeff(n, k)."""
    _check_counts(n, k)
    n, k = int(n), int(k)
    if k == 0:
        return 0.0
    if n == 0:
        raise InputError("log_multiset(0, k) is undefined for k > 0 (ln 0)")
    top = n + k - 1
    return _log_comb(top, min(k, n - 1))


def log_multiset_upper_estimate(n, k):
    """ln (2e(n+k)/n)^n, the closed-form cap on ((n, k))."""
    if n < 1:
        raise InputError(f"n must be >= 1, got: {n}")
    return n * (math.log(2.0) + 1.0 + math.log(n + k) - math.log(n))


def log_multiset_lower_estimate(n, k):
    """ln ((n+k-1)/(n-1))^(n-1), the closed-form floor on ((n, k))."""
    if n < 2:
        raise InputError(f"n must be >= 2, got: {n}")
    return (n - 1) * (math.log(n + k - 1) - math.log(n - 1))


def c_of_l(L):
    """Number of composition indices of a depth-L stack: (3^L - 1) / 2."""
    if isinstance(L, bool) or int(L) != L or L < 0:
        raise InputError(f"L must be a non-negative integer, got: {L!r}")
    return (3 ** int(L) - 1) // 2


def log_of_int(value):
    """Natural log of a (possibly huge) positive int."""
    if value <= 0:
        raise InputError(f"log of non-positive value: {value}")
    return math.log(value)
