"""KL ambiguity sets: statistical calibration and worst-case expectations.

An ambiguity set is a KL ball around an estimated distribution. Its radius
is calibrated so the ball contains the truth with a chosen confidence,
using the asymptotic chi-squared distribution of twice the sample KL
divergence. The worst-case expected value over the ball reduces to a
one-dimensional concave dual problem solved by bracketed bisection.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .simplex import Distribution


class DegenerateSupportError(ValueError):
    """Ambiguity is undefined on a singleton support."""


# ---------------------------------------------------------------------------
# chi-squared quantile via the regularized lower incomplete gamma function
# ---------------------------------------------------------------------------

_GAMMA_EPS = 1e-15
_GAMMA_MAX_ITER = 10_000


def _gammp_series(a: float, x: float) -> float:
    # series representation, converges fast for x < a + 1
    ap = a
    total = term = 1.0 / a
    for _ in range(_GAMMA_MAX_ITER):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _GAMMA_EPS:
            break
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _gammq_contfrac(a: float, x: float) -> float:
    # modified Lentz continued fraction for the upper tail, x >= a + 1
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, _GAMMA_MAX_ITER):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _GAMMA_EPS:
            break
    return h * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _reg_lower_gamma(a: float, x: float) -> float:
    """Regularized lower incomplete gamma P(a, x)."""
    if x < 0.0 or a <= 0.0:
        raise ValueError("require x >= 0 and a > 0")
    if x == 0.0:
        return 0.0
    if x < a + 1.0:
        return _gammp_series(a, x)
    return 1.0 - _gammq_contfrac(a, x)


def chi2_cdf(x: float, df: int) -> float:
    """CDF of the chi-squared distribution with df degrees of freedom."""
    if df < 1:
        raise ValueError("df must be >= 1")
    if x <= 0.0:
        return 0.0
    return _reg_lower_gamma(df / 2.0, x / 2.0)


def chi2_quantile(df: int, w: float) -> float:
    """Inverse chi-squared CDF by monotone bisection, tolerance 1e-10."""
    if df < 1:
        raise ValueError("df must be >= 1")
    if not 0.0 <= w < 1.0:
        raise ValueError(f"w must lie in [0, 1), got {w}")
    if w == 0.0:
        return 0.0
    # bracket the quantile; mean + spread covers all but extreme w
    hi = df + 10.0 * math.sqrt(2.0 * df) + 10.0
    while chi2_cdf(hi, df) < w:
        hi *= 2.0
    lo = 0.0
    while hi - lo > 1e-10 * (1.0 + hi):
        mid = 0.5 * (lo + hi)
        if chi2_cdf(mid, df) < w:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def calibrate_radius(n_obs: int, support_size: int, w: float) -> float:
    """KL radius containing the truth with confidence w given n_obs draws.

    Twice the sample KL divergence to the truth is asymptotically
    chi-squared with support_size - 1 degrees of freedom, so the radius
    is the w-quantile scaled by 1/(2 n_obs). w = 1 yields an infinite
    radius: the worst case then ranges over the whole simplex.
    """
    if n_obs < 1:
        raise ValueError("n_obs must be >= 1")
    if support_size < 2:
        raise DegenerateSupportError(
            f"support of size {support_size} leaves nothing ambiguous"
        )
    if not 0.0 <= w <= 1.0:
        raise ValueError(f"confidence must lie in [0, 1], got {w}")
    if w == 1.0:
        return math.inf
    return chi2_quantile(support_size - 1, w) / (2.0 * n_obs)


# ---------------------------------------------------------------------------
# ambiguity sets and the inner worst-case problem
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class AmbiguitySet:
    """KL ball of distributions around a strictly positive center.

    n_obs and confidence record how the radius was calibrated; they are
    None for sets constructed with an ad-hoc radius.
    """

    center: Distribution
    radius: float
    n_obs: int | None = None
    confidence: float | None = None

    def __post_init__(self):
        if np.any(self.center.probs <= 0.0):
            raise ValueError("center must be strictly positive on its support")
        if not self.radius >= 0.0:
            raise ValueError(f"radius must be >= 0, got {self.radius}")
        if self.confidence is not None:
            if not 0.0 <= self.confidence <= 1.0:
                raise ValueError("confidence must lie in [0, 1]")
            if (self.radius == 0.0) != (self.confidence == 0.0):
                raise ValueError("radius is zero iff confidence is zero")

    @classmethod
    def calibrated(cls, center: Distribution, n_obs: int, confidence: float) -> "AmbiguitySet":
        radius = calibrate_radius(n_obs, center.support_size, confidence)
        return cls(center=center, radius=radius, n_obs=n_obs, confidence=confidence)


@dataclass(frozen=True, eq=False)
class WorstCaseResult:
    """Solution of min q.v over a KL ball.

    dual_variable is the optimal dual scalar when the KL constraint binds
    in the interior of the simplex, math.inf when the constraint is slack
    (zero radius or constant values), and None when the minimizer sits on
    the simplex boundary with all mass on the lowest-value atoms.
    """

    value: float
    minimizer: Distribution
    dual_variable: float | None


def _worst_case_batch(
    p: np.ndarray, v: np.ndarray, rho: np.ndarray, mu_tol: float = 1e-12
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized worst-case solve over rows of (center, values, radius).

    Rows may contain zero-probability padding atoms; those never receive
    mass. Returns (values, minimizers, duals) where duals holds inf for
    rows with a slack constraint and nan for boundary rows.
    """
    p = np.asarray(p, dtype=float)
    v = np.asarray(v, dtype=float)
    rho = np.asarray(rho, dtype=float)
    n_rows = p.shape[0]

    mask = p > 0.0
    vmin = np.min(np.where(mask, v, np.inf), axis=1)
    vmax = np.max(np.where(mask, v, -np.inf), axis=1)
    center_val = np.einsum("ij,ij->i", p, np.where(mask, v, 0.0))

    is_min_atom = mask & (v == vmin[:, None])
    min_mass = np.sum(np.where(is_min_atom, p, 0.0), axis=1)
    rho_break = -np.log(min_mass)

    constant = vmax == vmin
    case_center = (rho <= 0.0) | constant
    case_boundary = ~case_center & (rho >= rho_break)
    case_interior = ~case_center & ~case_boundary

    values = center_val.copy()
    minimizer = np.where(mask, p, 0.0)
    dual = np.full(n_rows, np.inf)

    if np.any(case_boundary):
        q_boundary = np.where(is_min_atom, p, 0.0) / min_mass[:, None]
        values = np.where(case_boundary, vmin, values)
        minimizer = np.where(case_boundary[:, None], q_boundary, minimizer)
        dual = np.where(case_boundary, np.nan, dual)

    if np.any(case_interior):
        rows = np.flatnonzero(case_interior)
        pi = p[rows]
        maski = mask[rows]
        vv = np.where(maski, v[rows] - vmin[rows, None], 0.0)
        target = rho[rows]

        def tilt(mu):
            # exponential tilt of the center toward low values; KL to the
            # center follows from the same weights without per-atom logs
            w = pi * np.exp(-vv / mu[:, None])
            w_sum = np.sum(w, axis=1)
            q = w / w_sum[:, None]
            mean_vv = np.sum(q * vv, axis=1)
            kl = -mean_vv / mu - np.log(w_sum)
            return np.maximum(kl, 0.0), q

        span = np.maximum(vmax[rows] - vmin[rows], 1e-300)
        hi = span.copy()
        for _ in range(1100):
            kl_hi, _ = tilt(hi)
            grow = kl_hi > target
            if not grow.any():
                break
            hi = np.where(grow, np.minimum(hi * 2.0, 1e300), hi)
        lo = hi / 2.0
        for _ in range(1100):
            kl_lo, _ = tilt(lo)
            shrink = kl_lo <= target
            if not shrink.any():
                break
            lo = np.where(shrink, np.maximum(lo * 0.5, 1e-308), lo)
        # invariant: kl(lo) > target >= kl(hi); kl is decreasing in mu.
        # rows freeze individually so results do not depend on batching
        for _ in range(2200):
            open_rows = hi - lo > mu_tol * (1.0 + hi)
            if not np.any(open_rows):
                break
            mid = 0.5 * (lo + hi)
            kl_mid, _ = tilt(mid)
            lo = np.where(open_rows & (kl_mid > target), mid, lo)
            hi = np.where(open_rows & ~(kl_mid > target), mid, hi)
        _, q_int = tilt(hi)
        values[rows] = np.sum(q_int * vv, axis=1) + vmin[rows]
        minimizer[rows] = q_int
        dual[rows] = hi

    return values, minimizer, dual


def worst_case_expectation(ambiguity: AmbiguitySet, v) -> WorstCaseResult:
    """Minimize the expectation of v over the KL ball.

    Dispatches between three regimes: the center itself when the radius
    is zero or v is constant; the closed-form boundary solution (mass on
    the lowest-value atoms, proportional to the center there) once the
    radius reaches -ln(center mass of the argmin set); and otherwise the
    interior solution from the concave scalar dual, located by bisection
    on the dual derivative with a geometrically grown bracket.
    """
    v = np.asarray(v, dtype=float)
    size = ambiguity.center.support_size
    if v.shape != (size,):
        raise ValueError(f"value vector has shape {v.shape}, expected ({size},)")
    if not np.all(np.isfinite(v)):
        raise ValueError("value vector has non-finite entries")
    values, q, dual = _worst_case_batch(
        ambiguity.center.probs[None, :], v[None, :], np.array([ambiguity.radius])
    )
    mu = dual[0]
    return WorstCaseResult(
        value=float(values[0]),
        minimizer=Distribution(q[0]),
        dual_variable=None if math.isnan(mu) else float(mu),
    )
