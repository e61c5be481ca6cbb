"""Scalar signatures of the exit flow: moments, peak number and time scales.

All routines here place the injection point at the inlet (x0 = 0).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .eigensolver import DEFAULT_TOL, EigenBasis, build_basis, check_peclet
from .errors import DegenerateRatio, InvalidParameters, OrderTooHigh, RootNotBracketed
from .series import (
    DEFAULT_TRUNCATION,
    ModelParams,
    Truncation,
    normalized_exit_flow,
    normalized_exit_flow_derivative,
    resolve_basis,
    two_term_exit_flow,
)

MAX_MOMENT_ORDER = 6
PEAK_SEARCH_MAX = 5.0
FULL_SERIES_MIN_TERMS = 100


class PeakMethod(enum.Enum):
    TWO_TERM = "TwoTerm"
    FULL_SERIES = "FullSeries"


@dataclass(frozen=True)
class PeakResult:
    tau_max: float
    j_max: float
    peak_number: float
    method: PeakMethod


@dataclass(frozen=True)
class SignatureSet:
    moments: tuple[float, ...]
    g_values: tuple[float, ...]
    t_mean: float
    t_moments: float
    peak: PeakResult


def _check_order(m: int):
    if m < 0 or int(m) != m:
        raise OrderTooHigh(f"moment order must be a non-negative integer, got {m}")
    if m > MAX_MOMENT_ORDER:
        raise OrderTooHigh(f"moment order {m} exceeds the supported maximum {MAX_MOMENT_ORDER}")


def _g_terms_needed(m: int, pe: float, trunc: Truncation) -> int:
    scale = 2.0 * math.factorial(m) * math.exp(0.5 * pe)
    mu_needed = (scale / trunc.tail_tol) ** (1.0 / (2 * m + 3))
    return int(min(trunc.max_terms, max(2, math.ceil(mu_needed / math.pi + 1.5))))


def moment_G(m: int, pe: float, kappa_d: float, basis: EigenBasis | None = None,
             trunc: Truncation = DEFAULT_TRUNCATION) -> float:
    """Dimensionless time moment of the holdup, G_m(Pe, kappa_d).

    ``G_m = t_d**-1 * integral (t/t_d)**m I(t)/a dt``, summed from the
    eigen-expansion of the holdup.  Terms decay only like mu_n**(-2m-3), so
    the sum is capped at ``trunc.max_terms``; since sin(mu_n) alternates in
    sign, half of the last term is subtracted (the average of the last two
    partial sums), which removes the leading truncation error.
    """
    _check_order(m)
    pe = check_peclet(pe)
    if not kappa_d >= 0:
        raise InvalidParameters(f"kappa_d must be >= 0, got {kappa_d}")
    if basis is None:
        basis = build_basis(pe, _g_terms_needed(m, pe, trunc), DEFAULT_TOL)
    else:
        basis = resolve_basis(pe, basis, 1.0, trunc)
    n = min(basis.count, trunc.max_terms)
    mu = basis.mu[:n]
    s_over_mu2 = (0.5 * pe / mu) ** 2
    terms = (
        mu ** (-2.0 * m - 3.0) * np.sin(mu)
        / ((1.0 + 0.5 * pe * (np.sin(mu) / mu) ** 2)
           * (1.0 + s_over_mu2)
           * (1.0 + s_over_mu2 + kappa_d / mu**2) ** (m + 1))
    )
    total = math.fsum(terms)
    if n >= 2:
        total -= 0.5 * terms[-1]
    return float(2.0 * math.factorial(m) * math.exp(0.5 * pe) * total)


def moment_M(m: int, params: ModelParams, basis: EigenBasis | None = None,
             trunc: Truncation = DEFAULT_TRUNCATION) -> float:
    """Raw moment integral t**m j(L, t) dt for injection at the inlet."""
    _check_order(m)
    pe, kd, a, td = params.pe, params.kappa_d, params.a, params.t_d
    if m == 0:
        if kd == 0.0:
            return a
        return float(a * (1.0 - moment_G(0, pe, kd, basis, trunc) * kd))
    value = m * moment_G(m - 1, pe, kd, basis, trunc)
    if kd != 0.0:
        value -= kd * moment_G(m, pe, kd, basis, trunc)
    return float(a * td**m * value)


def two_term_tau_max(pe: float, kappa_d: float, basis: EigenBasis | None = None) -> float:
    """Closed-form zero of the two-term derivative of the normalised exit flow."""
    pe = check_peclet(pe)
    if basis is None:
        basis = build_basis(pe, 2)
    elif basis.count < 2:
        raise InvalidParameters("two-term peak needs a basis with at least 2 terms")
    mu1, mu2 = basis.mu[0], basis.mu[1]
    w1, w2 = basis.norm_weight[0], basis.norm_weight[1]
    shift = 0.25 * pe * pe + kappa_d
    first = mu1 * math.sin(mu1) / w1 * (shift + mu1 * mu1)
    second = mu2 * math.sin(mu2) / w2 * (shift + mu2 * mu2)
    if first == 0.0:
        raise DegenerateRatio("leading term vanishes")
    ratio = -second / first
    if not ratio > 0 or mu2 == mu1:
        raise DegenerateRatio(f"log argument {ratio!r} is not positive")
    return math.log(ratio) / (mu2 * mu2 - mu1 * mu1)


def _bracket_peak(dJ, seed: float, lo_limit: float, hi_limit: float):
    lo = max(lo_limit, 0.5 * seed)
    hi = min(hi_limit, 2.0 * seed)
    while dJ(lo) <= 0:
        if lo <= lo_limit:
            raise RootNotBracketed(f"no rising flank found above tau_d={lo_limit:g}")
        lo = max(lo_limit, 0.5 * lo)
    while dJ(hi) >= 0:
        if hi >= hi_limit:
            raise RootNotBracketed(f"no falling flank found below tau_d={hi_limit:g}")
        hi = min(hi_limit, 2.0 * hi)
    return lo, hi


def _peak(tau, j, method) -> PeakResult:
    tau, j = float(tau), float(j)
    return PeakResult(tau, j, tau * j, method)


def peak_characteristic(pe: float, kappa_d: float, basis: EigenBasis | None = None,
                        trunc: Truncation = DEFAULT_TRUNCATION,
                        method: PeakMethod = PeakMethod.FULL_SERIES) -> PeakResult:
    """Peak time, peak height and their product for the normalised exit flow."""
    pe = check_peclet(pe)
    if not kappa_d >= 0:
        raise InvalidParameters(f"kappa_d must be >= 0, got {kappa_d}")
    method = PeakMethod(method)
    if method is PeakMethod.TWO_TERM:
        b2 = basis if basis is not None else build_basis(pe, 2)
        tau = two_term_tau_max(pe, kappa_d, b2)
        j = two_term_exit_flow(pe, kappa_d, tau, b2)
        return _peak(tau, j, method)

    if basis is None:
        basis = resolve_basis(pe, None, trunc.min_time, trunc, power=3.0)
        if basis.count < FULL_SERIES_MIN_TERMS:
            basis = build_basis(pe, FULL_SERIES_MIN_TERMS)
    else:
        basis = resolve_basis(pe, basis, trunc.min_time, trunc)

    def dJ(tau):
        return normalized_exit_flow_derivative(pe, kappa_d, tau, basis, trunc)

    seed = two_term_tau_max(pe, kappa_d, basis)
    seed = min(max(seed, trunc.min_time), PEAK_SEARCH_MAX)
    lo, hi = _bracket_peak(dJ, seed, trunc.min_time, PEAK_SEARCH_MAX)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        if dJ(mid) > 0:
            lo = mid
        else:
            hi = mid
    tau = 0.5 * (lo + hi)
    j = normalized_exit_flow(pe, kappa_d, tau, basis, trunc)
    return _peak(tau, j, method)


def mean_exit_time(pe: float, t_d: float) -> float:
    """Expected first-passage time from the inlet, t_d (e^-Pe - 1 + Pe) / Pe**2."""
    pe = check_peclet(pe)
    if not t_d > 0:
        raise InvalidParameters(f"t_d must be > 0, got {t_d}")
    if abs(pe) < 1e-4:
        factor = 0.5 - pe / 6.0 + pe**2 / 24.0 - pe**3 / 120.0 + pe**4 / 720.0
    else:
        factor = (math.expm1(-pe) + pe) / (pe * pe)
    return t_d * factor


def mean_exit_time_profile(params: ModelParams, x):
    """Mean exit time T(x) for a molecule released at ``x`` (no reaction).

    Solves D T'' + v T' = -1 with T'(0) = 0 and T(L) = 0.
    """
    x = np.asarray(x, dtype=float)
    D, v, L = params.D, params.v, params.L
    if abs(params.pe) < 1e-8:
        return (L * L - x * x) / (2.0 * D)
    return (L - x) / v - D / (v * v) * (np.exp(-v * x / D) - math.exp(-v * L / D))


def moment_time_ratio(params: ModelParams, basis: EigenBasis | None = None,
                      trunc: Truncation = DEFAULT_TRUNCATION) -> float:
    """t_moments / t_mean for pure transport (k = 0)."""
    if params.k != 0:
        raise InvalidParameters("moment_time_ratio is defined for k = 0 only")
    t_moments = moment_M(1, params, basis, trunc) / moment_M(0, params, basis, trunc)
    return t_moments / mean_exit_time(params.pe, params.t_d)


def compute_signatures(params: ModelParams, m_max: int = 2, basis: EigenBasis | None = None,
                       trunc: Truncation = DEFAULT_TRUNCATION,
                       method: PeakMethod = PeakMethod.FULL_SERIES) -> SignatureSet:
    _check_order(m_max)
    pe, kd = params.pe, params.kappa_d
    g = tuple(moment_G(m, pe, kd, basis, trunc) for m in range(m_max + 1))
    moments = [params.a * (1.0 - g[0] * kd)]
    for m in range(1, m_max + 1):
        moments.append(params.a * params.t_d**m * (m * g[m - 1] - kd * g[m]))
    m0 = moments[0]
    t_moments = moments[1] / m0 if m_max >= 1 and m0 > 0 else math.nan
    peak = peak_characteristic(pe, kd, None, trunc, method)
    return SignatureSet(
        moments=tuple(moments),
        g_values=g,
        t_mean=mean_exit_time(pe, params.t_d),
        t_moments=t_moments,
        peak=peak,
    )
