"""Eigenfunction-series solutions of the pulse-response RAD problem.

Conventions
-----------
Dimensionless position ``xi = x/L`` and time ``tau = t/t_d`` with
``t_d = L**2/D``; ``kappa_d = k t_d``.  The injected pulse ``a`` is a
point mass at ``x0`` so that ``c`` is an amount per unit length and

    j(L, t) = (a / t_d) * J(t / t_d)
    c(x, t) = (a / L)   * rho(x / L, t / t_d)
    I(t)    = a         * H(t / t_d)

where ``J``, ``rho`` and ``H`` are the dimensionless series evaluated below.
With ``L = 1`` and ``a = 1`` these coincide with the usual normalised forms.

All sums run over descending ``n`` with Neumaier compensation; the
alternating exit-flow series loses digits at small ``tau`` otherwise.
"""

from __future__ import annotations

import enum
import io
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .eigensolver import DEFAULT_TOL, EigenBasis, build_basis, check_peclet
from .errors import (
    BasisMismatch,
    CurveFormatError,
    InvalidParameters,
    TimeTooSmall,
)

MAX_TERMS_CAP = 5000


@dataclass(frozen=True)
class ModelParams:
    """Dimensional parameters of one pulse-response experiment.

    D is the diffusivity, v the (signed) advection velocity, k the first
    order rate constant, L the reactor length, a the pulse amount and x0
    the injection point.
    """

    D: float
    v: float
    k: float = 0.0
    L: float = 1.0
    a: float = 1.0
    x0: float = 0.0

    def __post_init__(self):
        for name in ("D", "v", "k", "L", "a", "x0"):
            if not math.isfinite(getattr(self, name)):
                raise InvalidParameters(f"{name} must be finite")
        if self.D <= 0:
            raise InvalidParameters(f"diffusivity D must be > 0, got {self.D}")
        if self.L <= 0:
            raise InvalidParameters(f"length L must be > 0, got {self.L}")
        if self.a <= 0:
            raise InvalidParameters(f"pulse amount a must be > 0, got {self.a}")
        if self.k < 0:
            raise InvalidParameters(f"rate constant k must be >= 0, got {self.k}")
        if not 0 <= self.x0 < self.L:
            raise InvalidParameters(f"injection point x0={self.x0} must satisfy 0 <= x0 < L={self.L}")
        check_peclet(self.pe)

    @classmethod
    def from_dimensionless(cls, pe: float, kappa_d: float = 0.0, t_d: float = 1.0,
                           L: float = 1.0, a: float = 1.0, x0: float = 0.0) -> "ModelParams":
        if t_d <= 0:
            raise InvalidParameters(f"t_d must be > 0, got {t_d}")
        if kappa_d < 0:
            raise InvalidParameters(f"kappa_d must be >= 0, got {kappa_d}")
        D = L * L / t_d
        return cls(D=D, v=pe * D / L, k=kappa_d / t_d, L=L, a=a, x0=x0)

    @property
    def pe(self) -> float:
        return self.v * self.L / self.D

    @property
    def t_d(self) -> float:
        return self.L * self.L / self.D

    @property
    def kappa_d(self) -> float:
        return self.k * self.t_d

    @property
    def xi0(self) -> float:
        return self.x0 / self.L

    def with_rate(self, k: float) -> "ModelParams":
        return replace(self, k=k)


@dataclass(frozen=True)
class Truncation:
    """Controls for the infinite sums.  ``min_time`` is in units of t_d."""

    max_terms: int = MAX_TERMS_CAP
    tail_tol: float = 1e-12
    min_time: float = 1e-4

    def __post_init__(self):
        if not 1 <= self.max_terms <= MAX_TERMS_CAP:
            raise InvalidParameters(f"max_terms must be in 1..{MAX_TERMS_CAP}, got {self.max_terms}")
        if not self.tail_tol > 0:
            raise InvalidParameters("tail_tol must be > 0")
        if not self.min_time > 0:
            raise InvalidParameters("min_time must be > 0")


DEFAULT_TRUNCATION = Truncation()


class CurveKind(enum.Enum):
    EXIT_FLOW = "ExitFlow"
    NORMALIZED_EXIT_FLOW = "NormalizedExitFlow"
    CONCENTRATION = "Concentration"
    HOLDUP = "Holdup"


@dataclass
class Curve:
    """A sampled time series with the parameters that produced it."""

    kind: CurveKind
    t: np.ndarray
    y: np.ndarray
    params: ModelParams | None = None
    truncation: Truncation | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        if self.t.ndim != 1 or self.t.shape != self.y.shape:
            raise CurveFormatError("t and y must be 1-d arrays of equal length")
        if self.t.size and np.any(np.diff(self.t) <= 0):
            raise CurveFormatError("sample times must be strictly increasing")
        if not np.all(np.isfinite(self.y)) or not np.all(np.isfinite(self.t)):
            raise CurveFormatError("curve contains non-finite samples")

    def __len__(self):
        return self.t.size

    def header(self) -> str:
        fields = [f"kind={self.kind.value}"]
        p = self.params
        if p is not None:
            fields += [f"Pe={p.pe:.17g}", f"kappa_d={p.kappa_d:.17g}", f"t_d={p.t_d:.17g}",
                       f"x0={p.x0:.17g}", f"a={p.a:.17g}", f"L={p.L:.17g}"]
        for key, value in self.meta.items():
            fields.append(f"{key}={value}")
        return "# " + ", ".join(fields)

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        buf.write(self.header() + "\n")
        buf.write("t,y\n")
        for ti, yi in zip(self.t, self.y):
            buf.write(f"{ti:.17g},{yi:.17g}\n")
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text, encoding="utf-8", newline="\n")
        return text

    @classmethod
    def from_csv(cls, source, kind: CurveKind | None = None) -> "Curve":
        """Read a curve from a path, an open text stream or CSV text.  The metadata line is optional."""
        if hasattr(source, "read"):
            text = source.read()
        elif isinstance(source, Path) or (isinstance(source, str) and "\n" not in source):
            text = Path(source).read_text(encoding="utf-8")
        else:
            text = source
        meta: dict[str, str] = {}
        rows = []
        for line in text.splitlines():
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                for item in line[1:].split(","):
                    if "=" in item:
                        key, value = item.split("=", 1)
                        meta[key.strip()] = value.strip()
                continue
            parts = line.split(",")
            if len(parts) < 2:
                raise CurveFormatError(f"expected two columns, got {line!r}")
            try:
                rows.append((float(parts[0]), float(parts[1])))
            except ValueError:
                if rows:
                    raise CurveFormatError(f"unparseable row {line!r}") from None
                continue  # column header
        if not rows:
            raise CurveFormatError("no data rows found")
        arr = np.array(rows)
        if kind is None:
            kind = CurveKind(meta.pop("kind", CurveKind.EXIT_FLOW.value))
        else:
            meta.pop("kind", None)
        params = None
        keys = ("Pe", "kappa_d", "t_d")
        if all(k in meta for k in keys):
            params = ModelParams.from_dimensionless(
                pe=float(meta.pop("Pe")), kappa_d=float(meta.pop("kappa_d")),
                t_d=float(meta.pop("t_d")), L=float(meta.pop("L", 1.0)),
                a=float(meta.pop("a", 1.0)), x0=float(meta.pop("x0", 0.0)))
        return cls(kind=kind, t=arr[:, 0], y=arr[:, 1], params=params, meta=meta)


# -- summation helpers -------------------------------------------------------

def compensated_sum(terms: np.ndarray) -> np.ndarray:
    """Neumaier sum along axis 0, accumulated from the last row to the first."""
    terms = np.asarray(terms, dtype=float)
    s = np.zeros(terms.shape[1:])
    c = np.zeros(terms.shape[1:])
    for row in terms[::-1]:
        t = s + row
        c += np.where(np.abs(s) >= np.abs(row), (s - t) + row, (row - t) + s)
        s = t
    return s + c


def _estimate_terms(tau_min: float, power: float, trunc: Truncation) -> int:
    # mu_n > (n-1) pi and |coefficient| <= 4 mu_n**power for every supported Pe
    n = np.arange(1, trunc.max_terms + 1, dtype=float)
    mu_lo = np.maximum((n - 1) * math.pi, 1e-300)
    mu_hi = n * math.pi
    log_env = math.log(4.0) + power * np.log(mu_hi) - mu_lo**2 * tau_min
    above = np.nonzero(log_env >= math.log(trunc.tail_tol))[0]
    if above.size == 0:
        return 2
    return int(min(trunc.max_terms, max(2, above[-1] + 2)))


def resolve_basis(pe: float, basis: EigenBasis | None, tau_min: float,
                  trunc: Truncation, power: float = 1.0) -> EigenBasis:
    """Return ``basis`` after checking its Pe, or build one long enough for ``tau_min``."""
    pe = check_peclet(pe)
    if basis is not None:
        if not math.isclose(basis.pe, pe, rel_tol=1e-12, abs_tol=1e-12):
            raise BasisMismatch(f"basis built for Pe={basis.pe}, parameters have Pe={pe}")
        return basis
    return build_basis(pe, _estimate_terms(tau_min, power, trunc), DEFAULT_TOL)


def _check_times(tau: np.ndarray, trunc: Truncation):
    if tau.size and np.min(tau) < trunc.min_time * (1 - 1e-12):
        raise TimeTooSmall(
            f"time {np.min(tau):.3g} t_d is below the series floor {trunc.min_time:g} t_d")


def _sum_series(coef: np.ndarray, mu: np.ndarray, tau: np.ndarray, trunc: Truncation) -> np.ndarray:
    """sum_n coef_n exp(-mu_n**2 tau), truncated by the term bound at min(tau)."""
    n_max = min(trunc.max_terms, mu.size)
    coef, mu = coef[:n_max], mu[:n_max]
    if tau.size == 0:
        return np.zeros(0)
    env = np.abs(coef) * np.exp(-mu**2 * np.min(tau))
    above = np.nonzero(env >= trunc.tail_tol)[0]
    n_used = max(1, above[-1] + 1) if above.size else 1
    n_used = min(max(n_used, min(2, n_max)), n_max)
    terms = coef[:n_used, None] * np.exp(-np.outer(mu[:n_used] ** 2, tau))
    return compensated_sum(terms)


def _as_tau(tau):
    arr = np.asarray(tau, dtype=float)
    return arr, arr.ndim == 0


def _finish(values: np.ndarray, scalar: bool):
    return float(values.reshape(-1)[0]) if scalar else values


# -- dimensionless series ----------------------------------------------------

def _exit_coefficients(basis: EigenBasis, xi0: float) -> np.ndarray:
    mu, w = basis.mu, basis.norm_weight
    if xi0 == 0.0:
        return mu * np.sin(mu) / w
    return mu * np.sin(mu * (1.0 - xi0)) / w


def _dimensionless_exit_flow(pe, kappa_d, xi0, tau, basis, trunc, derivative=False):
    tau, scalar = _as_tau(tau)
    flat = tau.reshape(-1)
    _check_times(flat, trunc)
    basis = resolve_basis(pe, basis, float(np.min(flat)) if flat.size else 1.0, trunc,
                          power=3.0 if derivative else 1.0)
    coef = _exit_coefficients(basis, xi0)
    shift = 0.25 * pe * pe + kappa_d
    if derivative:
        coef = -coef * (shift + basis.mu**2)
    series = _sum_series(coef, basis.mu, flat, trunc)
    out = np.exp(0.5 * pe * (1.0 - xi0) - shift * flat) * series
    return _finish(out.reshape(tau.shape), scalar)


def normalized_exit_flow(pe: float, kappa_d: float, tau_d, basis: EigenBasis | None = None,
                         trunc: Truncation = DEFAULT_TRUNCATION):
    """Exit flow divided by a/t_d, as a function of ``tau_d = t/t_d``; injection at xi = 0."""
    _check_kappa(kappa_d)
    return _dimensionless_exit_flow(pe, kappa_d, 0.0, tau_d, basis, trunc)


def normalized_exit_flow_derivative(pe: float, kappa_d: float, tau_d, basis: EigenBasis | None = None,
                                    trunc: Truncation = DEFAULT_TRUNCATION):
    """d/dtau_d of :func:`normalized_exit_flow`, summed term by term."""
    _check_kappa(kappa_d)
    return _dimensionless_exit_flow(pe, kappa_d, 0.0, tau_d, basis, trunc, derivative=True)


def two_term_exit_flow(pe: float, kappa_d: float, tau_d, basis: EigenBasis | None = None):
    """First two terms of the normalised exit-flow series."""
    _check_kappa(kappa_d)
    basis = resolve_basis(pe, basis, 1.0, DEFAULT_TRUNCATION)
    if basis.count < 2:
        raise InvalidParameters("two-term approximation needs a basis with at least 2 terms")
    tau, scalar = _as_tau(tau_d)
    mu = basis.mu[:2]
    coef = mu * np.sin(mu) / basis.norm_weight[:2]
    shift = 0.25 * pe * pe + kappa_d
    flat = tau.reshape(-1)
    terms = coef[:, None] * np.exp(-np.outer(mu**2, flat))
    out = np.exp(0.5 * pe - shift * flat) * (terms[0] + terms[1])
    return _finish(out.reshape(tau.shape), scalar)


def _check_kappa(kappa_d):
    if not kappa_d >= 0:
        raise InvalidParameters(f"kappa_d must be >= 0, got {kappa_d}")


# -- dimensional API ---------------------------------------------------------

def exit_flow(params: ModelParams, basis: EigenBasis | None, t,
              trunc: Truncation = DEFAULT_TRUNCATION):
    """Outflow j(L, t) (amount per unit time) for a point pulse at params.x0."""
    tau = np.asarray(t, dtype=float) / params.t_d
    J = _dimensionless_exit_flow(params.pe, params.kappa_d, params.xi0, tau, basis, trunc)
    return J * (params.a / params.t_d)


def concentration(params: ModelParams, basis: EigenBasis | None, x, t,
                  trunc: Truncation = DEFAULT_TRUNCATION):
    """c(x, t) for a point pulse at params.x0; broadcasts over ``x`` and ``t``."""
    x_arr = np.asarray(x, dtype=float)
    t_arr = np.asarray(t, dtype=float)
    if np.any((x_arr < 0) | (x_arr > params.L)):
        raise InvalidParameters("x must lie in [0, L]")
    xi, tau = np.broadcast_arrays(x_arr / params.L, t_arr / params.t_d)
    scalar = xi.ndim == 0
    xi_f, tau_f = xi.reshape(-1), tau.reshape(-1)
    _check_times(tau_f, trunc)
    pe, xi0 = params.pe, params.xi0
    basis = resolve_basis(pe, basis, float(np.min(tau_f)), trunc, power=0.0)
    n_max = min(trunc.max_terms, basis.count)
    mu, w = basis.mu[:n_max], basis.norm_weight[:n_max]
    amp = np.sin(mu * (1.0 - xi0)) / w
    env = np.abs(amp) * np.exp(-mu**2 * np.min(tau_f))
    above = np.nonzero(env >= trunc.tail_tol)[0]
    n_used = min(n_max, max(2, above[-1] + 1 if above.size else 1))
    mu, amp = mu[:n_used], amp[:n_used]
    terms = amp[:, None] * np.sin(np.outer(mu, 1.0 - xi_f)) * np.exp(-np.outer(mu**2, tau_f))
    series = compensated_sum(terms)
    shift = 0.25 * pe * pe + params.kappa_d
    out = (params.a / params.L) * np.exp(0.5 * pe * (xi_f - xi0) - shift * tau_f) * series
    return _finish(out.reshape(xi.shape), scalar)


def holdup(params: ModelParams, basis: EigenBasis | None, t,
           trunc: Truncation = DEFAULT_TRUNCATION):
    """Amount remaining in the reactor, I(t) = integral of c over [0, L]."""
    tau, scalar = _as_tau(np.asarray(t, dtype=float) / params.t_d)
    flat = tau.reshape(-1)
    _check_times(flat, trunc)
    pe, xi0 = params.pe, params.xi0
    basis = resolve_basis(pe, basis, float(np.min(flat)), trunc, power=-1.0)
    mu, w = basis.mu, basis.norm_weight
    coef = np.sin(mu * (1.0 - xi0)) / (mu * w * (1.0 + (0.5 * pe / mu) ** 2))
    series = _sum_series(coef, mu, flat, trunc)
    shift = 0.25 * pe * pe + params.kappa_d
    out = params.a * np.exp(0.5 * pe * (1.0 - xi0) - shift * flat) * series
    return _finish(out.reshape(tau.shape), scalar)


# -- curves ------------------------------------------------------------------

def time_grid(t_d: float, n_points: int = 400, t_lo: float = 1e-3, t_hi: float = 2.0,
              spacing: str = "uniform") -> np.ndarray:
    """Sample times in absolute units; ``t_lo``/``t_hi`` are multiples of t_d."""
    if spacing == "uniform":
        grid = np.linspace(t_lo, t_hi, n_points)
    elif spacing == "log":
        grid = np.geomspace(t_lo, t_hi, n_points)
    else:
        raise InvalidParameters(f"unknown grid spacing {spacing!r}")
    return grid * t_d


def exit_flow_curve(params: ModelParams, t, basis: EigenBasis | None = None,
                    trunc: Truncation = DEFAULT_TRUNCATION) -> Curve:
    t = np.asarray(t, dtype=float)
    return Curve(CurveKind.EXIT_FLOW, t, exit_flow(params, basis, t, trunc), params, trunc)


def normalized_exit_flow_curve(params: ModelParams, t, basis: EigenBasis | None = None,
                               trunc: Truncation = DEFAULT_TRUNCATION) -> Curve:
    t = np.asarray(t, dtype=float)
    y = _dimensionless_exit_flow(params.pe, params.kappa_d, params.xi0, t / params.t_d, basis, trunc)
    return Curve(CurveKind.NORMALIZED_EXIT_FLOW, t, y, params, trunc)


def holdup_curve(params: ModelParams, t, basis: EigenBasis | None = None,
                 trunc: Truncation = DEFAULT_TRUNCATION) -> Curve:
    t = np.asarray(t, dtype=float)
    return Curve(CurveKind.HOLDUP, t, holdup(params, basis, t, trunc), params, trunc)


def concentration_curve(params: ModelParams, x: float, t, basis: EigenBasis | None = None,
                        trunc: Truncation = DEFAULT_TRUNCATION) -> Curve:
    t = np.asarray(t, dtype=float)
    y = concentration(params, basis, np.full_like(t, x), t, trunc)
    return Curve(CurveKind.CONCENTRATION, t, y, params, trunc, meta={"x": f"{x:.17g}"})
