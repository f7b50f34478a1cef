"""Generator contingency-response curves, exact and smooth.

The exact response set couples a saturating quantity x (normalized
generation) with an unbounded driver y through three regimes: a linear
segment of slope tan(theta) for x in [-1, 1], a vertical ray at x = 1 and a
vertical ray at x = -1.  The smooth family replaces it with
``y = g(x) = (a(x) - x)/h * x**(2k) + tan(theta) * x`` built from one of
five inverse-sigmoid functions ``a`` that diverge at +-1.  Larger sharpness
``h`` and order ``k`` tighten the fit to the exact set at the cost of
curvature near the boundary.

All functions accept scalars or numpy arrays and are pure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.special import erfinv

from .errors import CurveDomainError


class SigmoidKind(Enum):
    ATANH = "atanh"
    TAN_SCALED = "tan"
    ALGEBRAIC = "algebraic"
    INV_ERF = "inverf"
    INV_ABS = "invabs"


ALL_SIGMOIDS = tuple(SigmoidKind)


def _check_open_unit(x):
    x = np.asarray(x, dtype=float)
    if np.any(np.abs(x) >= 1.0):
        raise CurveDomainError("argument must lie strictly inside (-1, 1)")
    return x


def _sigmoid_terms(kind: SigmoidKind, x: np.ndarray):
    """Value, first and second derivative of the inverse sigmoid."""
    if kind is SigmoidKind.ATANH:
        a = np.arctanh(x)
        da = 1.0 / (1.0 - x * x)
        d2a = 2.0 * x * da * da
    elif kind is SigmoidKind.TAN_SCALED:
        u = 0.5 * math.pi * x
        a = (2.0 / math.pi) * np.tan(u)
        sec2 = 1.0 / np.cos(u) ** 2
        da = sec2
        d2a = math.pi * sec2 * np.tan(u)
    elif kind is SigmoidKind.ALGEBRAIC:
        w = 1.0 - x * x
        a = x / np.sqrt(w)
        da = w ** -1.5
        d2a = 3.0 * x * w ** -2.5
    elif kind is SigmoidKind.INV_ERF:
        w = erfinv(x)
        a = (2.0 / math.sqrt(math.pi)) * w
        da = np.exp(w * w)
        d2a = math.sqrt(math.pi) * w * np.exp(2.0 * w * w)
    elif kind is SigmoidKind.INV_ABS:
        w = 1.0 - np.abs(x)
        a = x / w
        da = 1.0 / (w * w)
        d2a = np.sign(x) * 2.0 / w ** 3
    else:  # pragma: no cover
        raise ValueError(f"unknown sigmoid kind {kind}")
    return a, da, d2a


def sigmoid_eval(kind: SigmoidKind, x):
    """Evaluate one of the five inverse sigmoids and its derivative."""
    arr = _check_open_unit(x)
    a, da, _ = _sigmoid_terms(kind, arr)
    if np.isscalar(x) or np.ndim(x) == 0:
        return float(a), float(da)
    return a, da


@dataclass(frozen=True)
class SmoothCurveParams:
    """Parameters (theta, a, h, k) of one smooth surrogate curve."""

    theta: float
    kind: SigmoidKind
    h: float
    k: int

    def __post_init__(self):
        if not 0.0 <= self.theta < 0.5 * math.pi:
            raise ValueError("theta must lie in [0, pi/2)")
        if not self.h > 0.0:
            raise ValueError("sharpness h must be positive")
        if self.k < 0 or int(self.k) != self.k:
            raise ValueError("order k must be a non-negative integer")
        if not math.isfinite(math.tan(self.theta)):
            raise ValueError("tan(theta) must be representable")


def _curve_terms(params: SmoothCurveParams, t: np.ndarray):
    a, da, d2a = _sigmoid_terms(params.kind, t)
    h, k = params.h, params.k
    slope = math.tan(params.theta)
    tk = t ** (2 * k)
    g = (a - t) / h * tk + slope * t
    dg = ((da - 1.0) * tk
          + ((a - t) * 2 * k * t ** (2 * k - 1) if k >= 1 else 0.0)) / h + slope
    d2g = (d2a * tk
           + (2.0 * (da - 1.0) * 2 * k * t ** (2 * k - 1) if k >= 1 else 0.0)
           + ((a - t) * 2 * k * (2 * k - 1) * t ** (2 * k - 2) if k >= 1 else 0.0)
           ) / h
    return g, dg, d2g


def smooth_curve_g(params: SmoothCurveParams, t):
    """Evaluate g(t) and g'(t) on the open interval (-1, 1)."""
    arr = _check_open_unit(t)
    g, dg, _ = _curve_terms(params, arr)
    if np.isscalar(t) or np.ndim(t) == 0:
        return float(g), float(dg)
    return g, dg


def smooth_curve_g2(params: SmoothCurveParams, t):
    """g, g' and g'' together (used for second-order solves)."""
    arr = _check_open_unit(t)
    return _curve_terms(params, arr)


def sample_curve(params: SmoothCurveParams, n: int, t_max: float) -> np.ndarray:
    """Uniform samples (t, g(t)) on [-t_max, t_max]; n >= 2 points."""
    if n < 2:
        raise ValueError("need at least two sample points")
    if not 0.0 < t_max < 1.0:
        raise ValueError("t_max must lie in (0, 1)")
    t = np.linspace(-t_max, t_max, n)
    g, _, _ = _curve_terms(params, t)
    return np.column_stack([t, g])


def curve_csv(params: SmoothCurveParams, n: int, t_max: float) -> str:
    rows = sample_curve(params, n, t_max)
    lines = ["t,g"]
    lines += [f"{t:.9g},{g:.9g}" for t, g in rows]
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Exact piecewise model


def membership_violation(theta: float, x, y):
    """How far (x, y) sits from the exact response set.

    Returns the largest of the two min-max complementarity products and the
    box overshoot of x; zero exactly on the set.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    slope = math.tan(theta)
    p1 = np.minimum(np.maximum(0.0, y - slope * x), np.maximum(0.0, 1.0 - x))
    p2 = np.minimum(np.maximum(0.0, slope * x - y), np.maximum(0.0, 1.0 + x))
    box = np.maximum(0.0, np.abs(x) - 1.0)
    out = np.maximum(np.maximum(p1, p2), box)
    return float(out) if out.ndim == 0 else out


def exact_membership(theta: float, x: float, y: float, tol: float = 1e-9) -> bool:
    """True when (x, y) satisfies the exact piecewise response set."""
    if tol <= 0.0:
        raise ValueError("tolerance must be positive")
    return bool(membership_violation(theta, x, y) <= tol)


def exact_response_active(p0, alpha, delta, pmin, pmax):
    """Clipped redispatch max(pmin, min(p0 + alpha*delta, pmax))."""
    desired = np.asarray(p0, dtype=float) + np.asarray(alpha) * np.asarray(delta)
    return np.maximum(pmin, np.minimum(desired, pmax))


def exact_response_logical(p0, alpha, delta, pmin, pmax):
    """Same response through the explicit three-branch case split."""
    desired = p0 + alpha * delta
    if pmax < desired:
        return pmax
    if pmin > desired:
        return pmin
    return desired


class ReactiveRegime(Enum):
    INTERIOR = "interior"
    AT_MAX_VOLTAGE_DROP = "at_max_voltage_drop"
    AT_MIN_VOLTAGE_RISE = "at_min_voltage_rise"
    DEGENERATE = "degenerate"


def reactive_regime(q: float, qmin: float, qmax: float, dv: float,
                    tol: float = 1e-6):
    """Classify one (q, dv) pair against the reactive response rules.

    ``dv`` is the base-minus-contingency voltage magnitude.  A voltage drop
    (dv > 0) is valid only with q pinned at qmax, a rise only at qmin, and
    an interior q requires the voltage to hold its base value.
    """
    if qmin > qmax:
        raise ValueError("qmin must not exceed qmax")
    if qmax - qmin <= tol:
        return ReactiveRegime.DEGENERATE, abs(dv) >= -1.0
    at_max = abs(q - qmax) <= tol
    at_min = abs(q - qmin) <= tol
    inside = qmin - tol <= q <= qmax + tol
    if at_max and not at_min:
        return ReactiveRegime.AT_MAX_VOLTAGE_DROP, dv >= -tol
    if at_min and not at_max:
        return ReactiveRegime.AT_MIN_VOLTAGE_RISE, dv <= tol
    return ReactiveRegime.INTERIOR, inside and abs(dv) <= tol


def reactive_minmax_residual(q, qmin, qmax, dv):
    """The two complementarity products of the reactive coupling.

    Both vanish exactly when (q, dv) satisfies the reactive response rules.
    """
    q = np.asarray(q, dtype=float)
    dv = np.asarray(dv, dtype=float)
    r_plus = np.minimum(np.maximum(0.0, dv), np.maximum(0.0, qmax - q))
    r_minus = np.minimum(np.maximum(0.0, -dv), np.maximum(0.0, q - qmin))
    if r_plus.ndim == 0:
        return float(r_plus), float(r_minus)
    return r_plus, r_minus


# ---------------------------------------------------------------------------
# Normalization and smooth coupling residuals


def normalize_active(p, pmin, pmax):
    """Affine map sending [pmin, pmax] onto [-1, 1]."""
    span = pmax - pmin
    if np.any(np.asarray(span) <= 0.0):
        raise ValueError("normalization needs pmax > pmin")
    return (2.0 * np.asarray(p, dtype=float) - pmax - pmin) / span


def denormalize_active(t, pmin, pmax):
    return 0.5 * ((pmax - pmin) * np.asarray(t, dtype=float) + pmax + pmin)


def smooth_coupling_residual_active(p_c, p0, alpha, delta, pmin, pmax,
                                    params: SmoothCurveParams):
    """Residual of the smooth active coupling and its analytic gradient.

    Zero residual places (normalized p_c, normalized p0 + alpha*delta) on
    the smooth curve.  Gradient entries follow the argument order
    (p_c, p0, alpha, delta).
    """
    scale = 2.0 / (pmax - pmin)
    t_c = normalize_active(p_c, pmin, pmax)
    if abs(t_c) >= 1.0:
        raise CurveDomainError("normalized response left (-1, 1)")
    t_des = normalize_active(p0 + alpha * delta, pmin, pmax)
    g, dg = smooth_curve_g(params, t_c)
    residual = t_des - g
    grad = (-dg * scale, scale, scale * delta, scale * alpha)
    return float(residual), grad


def smooth_coupling_residual_reactive(q, qmin, qmax, v0_mag, vc_mag,
                                      params: SmoothCurveParams):
    """Residual of the smooth reactive coupling; gradient wrt (q, vc_mag)."""
    scale = 2.0 / (qmax - qmin)
    t_q = normalize_active(q, qmin, qmax)
    if abs(t_q) >= 1.0:
        raise CurveDomainError("normalized reactive output left (-1, 1)")
    g, dg = smooth_curve_g(params, t_q)
    residual = (v0_mag - vc_mag) - g
    grad = (-dg * scale, -1.0)
    return float(residual), grad


def curve_gap_bound(params: SmoothCurveParams, t_max: float = 0.999,
                    n: int = 8001) -> float:
    """Largest exact-model violation along the smooth curve.

    Dense sampling of (t, g(t)) measured against the exact set; used as the
    audit tolerance for smooth-vs-exact coupling gaps.
    """
    rows = sample_curve(params, n, t_max)
    return float(np.max(membership_violation(params.theta, rows[:, 0],
                                             rows[:, 1])))
