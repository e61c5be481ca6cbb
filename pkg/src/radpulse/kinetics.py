"""Kinetic and transport parameters recovered from exit-flow data.

The rate constant follows from the ratio of a reactive exit-flow curve to
the standard transport curve (k = 0), which is exactly ``exp(-k t)`` for a
first-order irreversible reaction.  The Peclet number follows from the
first-moment ratio M_1/M_0 of a pure-transport curve.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import simpson

from .eigensolver import PE_MAX, check_peclet
from .errors import (
    GridMismatch,
    InvalidParameters,
    NonPositiveBaseline,
    NotPureTransport,
    OutOfRange,
    WindowTooNarrow,
)
from .series import DEFAULT_TRUNCATION, Curve, ModelParams, Truncation
from .signatures import moment_G

PE_SEARCH_LO = -1.9
DEFAULT_WINDOW = (0.05, 2.0)  # multiples of t_d


@dataclass(frozen=True)
class RateEstimate:
    k_hat: float
    stderr: float
    n_points_used: int
    time_window: tuple[float, float]
    raw_slope: float
    weighted: bool = True
    flags: tuple[str, ...] = ()

    def report(self) -> dict:
        return {
            "k_hat": self.k_hat,
            "stderr": self.stderr,
            "n_points": self.n_points_used,
            "t_lo": self.time_window[0],
            "t_hi": self.time_window[1],
            "raw_slope": self.raw_slope,
            "weighted": self.weighted,
            "flags": "|".join(self.flags) or "none",
        }


class PecletMethod(enum.Enum):
    MOMENT_RATIO = "MomentRatio"
    PEAK_NUMBER = "PeakNumber"


@dataclass(frozen=True)
class PecletEstimate:
    pe_hat: float
    residual: float
    method: PecletMethod = PecletMethod.MOMENT_RATIO
    extra: dict = field(default_factory=dict)

    def report(self) -> dict:
        return {"pe_hat": self.pe_hat, "residual": self.residual, "method": self.method.value}


def extract_rate_constant(curve_k: Curve, curve_0: Curve, window: tuple[float, float] | None = None,
                          weighted: bool = True) -> RateEstimate:
    """Fit ``-ln(j_k / j_0) = k t`` through the origin.

    ``window`` is in absolute time units.  When omitted it defaults to
    [0.05, 2] t_d if the baseline curve carries its parameters, and to the
    whole common grid otherwise.  With ``weighted`` the residuals are
    weighted by j_0, which down-weights the noisy tail where the ratio is
    ill-determined.  Samples where the reactive curve is not positive cannot
    enter the log and are skipped (and flagged).

    The standard error is the heteroscedasticity-consistent (sandwich)
    estimate, so it stays honest when j_0 is not the exact inverse variance.
    """
    if curve_k.t.shape != curve_0.t.shape or not np.allclose(curve_k.t, curve_0.t, rtol=1e-12, atol=0):
        raise GridMismatch("both curves must be sampled on the same time grid")
    t = curve_0.t
    if window is None:
        params = curve_0.params or curve_k.params
        if params is not None:
            window = (DEFAULT_WINDOW[0] * params.t_d, DEFAULT_WINDOW[1] * params.t_d)
        else:
            window = (float(t[0]), float(t[-1]))
    lo, hi = float(window[0]), float(window[1])
    if hi <= lo:
        raise WindowTooNarrow(f"empty window ({lo}, {hi})")
    inside = (t >= lo) & (t <= hi)
    j0 = curve_0.y[inside]
    jk = curve_k.y[inside]
    tt = t[inside]
    if np.any(j0 <= 0):
        raise NonPositiveBaseline("baseline curve must be strictly positive inside the window")
    flags = []
    usable = jk > 0
    if not np.all(usable):
        flags.append(f"skipped_nonpositive={int(np.sum(~usable))}")
    tt, j0, jk = tt[usable], j0[usable], jk[usable]
    if tt.size < 3:
        raise WindowTooNarrow(f"only {tt.size} usable points inside the window, need >= 3")

    y = -np.log(jk / j0)
    w = j0 / j0.max() if weighted else np.ones_like(j0)
    sxx = np.sum(w * tt * tt)
    slope = float(np.sum(w * tt * y) / sxx)
    resid = y - slope * tt
    n = tt.size
    # HC1 sandwich variance of the through-origin WLS slope
    var = np.sum((w * tt * resid) ** 2) / sxx**2 * n / (n - 1)
    stderr = float(math.sqrt(var))
    k_hat = slope
    if slope < 0:
        flags.append("negative_slope_clamped")
        k_hat = 0.0
    return RateEstimate(k_hat=k_hat, stderr=stderr, n_points_used=int(n), time_window=(lo, hi),
                        raw_slope=slope, weighted=weighted, flags=tuple(flags))


def first_moment_ratio(pe: float, trunc: Truncation = DEFAULT_TRUNCATION) -> float:
    """M_1 / (M_0 t_d) for pure transport, i.e. G_0(Pe, 0)."""
    return moment_G(0, pe, 0.0, None, trunc)


def estimate_peclet(m0: float, m1: float, t_d: float, a: float,
                    trunc: Truncation = DEFAULT_TRUNCATION, tol: float = 1e-12) -> PecletEstimate:
    """Invert the pure-transport first-moment ratio for the Peclet number.

    ``G_0(Pe, 0)`` is strictly decreasing in Pe, so bisection on
    [-1.9, 10] finds the unique match.
    """
    if not (m0 > 0 and m1 > 0 and t_d > 0 and a > 0):
        raise InvalidParameters("m0, m1, t_d and a must all be positive")
    if abs(m0 - a) / a > 0.01:
        raise NotPureTransport(
            f"recovered amount M0={m0:g} differs from the pulse a={a:g} by more than 1%; k = 0 is required")
    target = m1 / (m0 * t_d)
    lo, hi = PE_SEARCH_LO, PE_MAX
    g_lo = first_moment_ratio(lo, trunc) - target
    g_hi = first_moment_ratio(hi, trunc) - target
    if g_lo < 0 or g_hi > 0:
        raise OutOfRange(
            f"moment ratio M1/(M0 t_d)={target:.6g} has no Peclet match in [{lo}, {hi}]")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        if first_moment_ratio(mid, trunc) - target > 0:
            lo = mid
        else:
            hi = mid
    pe_hat = check_peclet(0.5 * (lo + hi))
    residual = abs(first_moment_ratio(pe_hat, trunc) * t_d - m1 / m0)
    return PecletEstimate(pe_hat=pe_hat, residual=residual, method=PecletMethod.MOMENT_RATIO)


def curve_moments(curve: Curve, orders=(0, 1)) -> tuple[float, ...]:
    """Raw moments of a sampled exit-flow curve by Simpson quadrature.

    The curve is taken to start at zero flow at t = 0 if its first sample is later.
    """
    t, y = curve.t, curve.y
    if t[0] > 0:
        t = np.concatenate(([0.0], t))
        y = np.concatenate(([0.0], y))
    return tuple(float(simpson(t**m * y, x=t)) for m in orders)


def conversion(pe_or_params, kappa_d: float | None = None,
               trunc: Truncation = DEFAULT_TRUNCATION) -> float:
    """Fraction of the pulse consumed by reaction, 1 - M_0/a = G_0 kappa_d.

    Accepts either a :class:`ModelParams` or a ``(pe, kappa_d)`` pair.
    """
    if isinstance(pe_or_params, ModelParams):
        pe, kd = pe_or_params.pe, pe_or_params.kappa_d
    else:
        if kappa_d is None:
            raise InvalidParameters("kappa_d is required when passing a Peclet number")
        pe, kd = float(pe_or_params), float(kappa_d)
    if not kd >= 0:
        raise InvalidParameters(f"kappa_d must be >= 0, got {kd}")
    if kd == 0:
        return 0.0
    return moment_G(0, pe, kd, None, trunc) * kd
