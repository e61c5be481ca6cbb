"""Independent checks of the analytic engine.

* a finite-difference solver for the RAD equation with a square initial pulse,
* the exact eigen-series for that square pulse (the continuum target of the
  FD solver, used to measure its discretisation error),
* a Monte Carlo first-passage simulator for dX = v dt + sqrt(2D) dW with
  reflection at the inlet and absorption at the outlet,
* sup-norm comparison of sampled curves.

FD grids and MC time steps are expressed in units of t_d.
"""

from __future__ import annotations

import enum
import io
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy import stats
from scipy.integrate import cumulative_simpson
from scipy.sparse.linalg import splu

from .eigensolver import EigenBasis
from .errors import DisjointWindows, InvalidParameters, TooManyCensored, UnstableConfig
from .series import (
    DEFAULT_TRUNCATION,
    Curve,
    CurveKind,
    ModelParams,
    Truncation,
    _as_tau,
    _check_times,
    _finish,
    _sum_series,
    exit_flow,
    resolve_basis,
)
from .signatures import mean_exit_time

UNSTABLE_THRESHOLD = 1e-2
MAX_CENSORED_FRACTION = 1e-3


def worker_count() -> int:
    """Worker cap from the RADPULSE_THREADS environment variable (default 1)."""
    try:
        return max(1, int(os.environ.get("RADPULSE_THREADS", "1")))
    except ValueError:
        return 1


# -- finite differences ------------------------------------------------------

class Scheme(enum.Enum):
    CRANK_NICOLSON = "CrankNicolson"
    IMPLICIT_EULER = "ImplicitEuler"


@dataclass(frozen=True)
class FDGrid:
    """Space-time grid for :func:`fd_solve`.

    ``nx`` is the number of mesh intervals on [0, L]; the nodes 0..nx-1 are
    unknowns and the outlet node carries the Dirichlet value.  ``dt`` and
    ``t_end`` are in units of t_d, ``epsilon`` in units of L.
    """

    nx: int = 400
    dt: float = 1e-4
    t_end: float = 2.0
    epsilon: float = 0.1
    scheme: Scheme = Scheme.CRANK_NICOLSON
    sample_every: int = 10

    def __post_init__(self):
        object.__setattr__(self, "scheme", Scheme(self.scheme))
        if self.nx < 50:
            raise InvalidParameters(f"nx must be >= 50, got {self.nx}")
        if not self.dt > 0 or not self.t_end > 0:
            raise InvalidParameters("dt and t_end must be positive")
        if not 0 < self.epsilon <= 0.5:
            raise InvalidParameters(f"epsilon must lie in (0, 0.5], got {self.epsilon}")
        if self.epsilon < 2.0 / self.nx * (1 - 1e-12):
            raise InvalidParameters(
                f"pulse width {self.epsilon:g} is resolved by fewer than 2 cells at nx={self.nx}")
        if self.sample_every < 1:
            raise InvalidParameters("sample_every must be >= 1")

    @property
    def n_steps(self) -> int:
        return max(1, int(round(self.t_end / self.dt)))


@dataclass
class FDSolution:
    t: np.ndarray
    exit_flow: np.ndarray
    holdup: np.ndarray
    outflow_integral: float
    holdup_integral: float
    params: ModelParams
    grid: FDGrid
    error_estimate: float | None = None

    def mass_balance_residual(self) -> float:
        """a - (outflow + remaining holdup + reacted amount), all integrated over the run."""
        p = self.params
        accounted = self.outflow_integral + self.holdup[-1] + p.k * self.holdup_integral
        return p.a - accounted

    def to_curve(self) -> Curve:
        meta = {"epsilon": f"{self.grid.epsilon:.17g}", "nx": self.grid.nx,
                "dt": f"{self.grid.dt:.17g}", "scheme": self.grid.scheme.value}
        return Curve(CurveKind.EXIT_FLOW, self.t, self.exit_flow, self.params, None, meta)


def _square_pulse(nx: int, epsilon: float) -> np.ndarray:
    # control-volume averages of (1/eps) 1_[0, eps]; discrete trapezoid mass is exactly 1
    h = 1.0 / nx
    i = np.arange(nx)
    left = np.maximum(i * h - 0.5 * h, 0.0)
    right = i * h + 0.5 * h
    width = right - left
    overlap = np.clip(np.minimum(right, epsilon) - left, 0.0, None)
    return overlap / width / epsilon


def _operator(nx: int, pe: float, kappa_d: float) -> sp.csc_matrix:
    h = 1.0 / nx
    main = np.full(nx, -2.0 / h**2 - kappa_d)
    lower = np.full(nx - 1, 1.0 / h**2 + 0.5 * pe / h)
    upper = np.full(nx - 1, 1.0 / h**2 - 0.5 * pe / h)
    # ghost node from the Robin condition u_-1 = u_1 - 2 h Pe u_0
    main[0] = -2.0 / h**2 - 2.0 * pe / h - pe * pe - kappa_d
    upper[0] = 2.0 / h**2
    return sp.diags([lower, main, upper], [-1, 0, 1], format="csc")


def _fd_core(pe: float, kappa_d: float, grid: FDGrid, dt: float, sample_every: int,
             stop_step: int | None = None):
    nx = grid.nx
    h = 1.0 / nx
    A = _operator(nx, pe, kappa_d)
    eye = sp.identity(nx, format="csc")
    n_steps = max(1, int(round(grid.t_end / dt))) if stop_step is None else stop_step

    def outflow(u):
        return (4.0 * u[-1] - u[-2]) / (2.0 * h)

    def mass(u):
        return h * (0.5 * u[0] + u[1:].sum())

    u = _square_pulse(nx, grid.epsilon)
    times, flows, masses = [0.0], [outflow(u)], [mass(u)]
    flow_int = 0.0
    mass_int = 0.0
    prev_flow, prev_mass = flows[0], masses[0]

    if grid.scheme is Scheme.CRANK_NICOLSON:
        lhs = splu((eye - 0.5 * dt * A).tocsc())
        rhs_op = (eye + 0.5 * dt * A).tocsr()
    else:
        lhs = splu((eye - dt * A).tocsc())
        rhs_op = None

    for n in range(1, n_steps + 1):
        if rhs_op is None:
            u = lhs.solve(u)
        elif n == 1:
            # Rannacher start-up: two implicit-Euler half steps (same matrix as the CN left side)
            u = lhs.solve(lhs.solve(u))
        else:
            u = lhs.solve(rhs_op @ u)
        f, m = outflow(u), mass(u)
        flow_int += 0.5 * dt * (prev_flow + f)
        mass_int += 0.5 * dt * (prev_mass + m)
        prev_flow, prev_mass = f, m
        if n % sample_every == 0 or n == n_steps:
            times.append(n * dt)
            flows.append(f)
            masses.append(m)
    if stop_step is not None:
        return u
    return np.array(times), np.array(flows), np.array(masses), flow_int, mass_int


def fd_run(params: ModelParams, grid: FDGrid, estimate_error: bool = True) -> FDSolution:
    """Solve the RAD equation for a square pulse on [0, epsilon L].

    With ``estimate_error`` the run is repeated at dt/2 and the sup-norm
    change of the normalised outflow is the error estimate; above 1e-2 the
    configuration is rejected with UnstableConfig.
    """
    pe, kd = params.pe, params.kappa_d
    tau, J, H, J_int, H_int = _fd_core(pe, kd, grid, grid.dt, grid.sample_every)
    err = None
    if estimate_error:
        tau2, J2, _, _, _ = _fd_core(pe, kd, grid, 0.5 * grid.dt, 2 * grid.sample_every)
        common = np.intersect1d(np.round(tau, 12), np.round(tau2, 12))
        a = np.interp(common, tau, J)
        b = np.interp(common, tau2, J2)
        err = float(np.max(np.abs(a - b)))
        if not np.isfinite(err) or err > UNSTABLE_THRESHOLD:
            raise UnstableConfig(f"step-halving error estimate {err:.3g} exceeds {UNSTABLE_THRESHOLD:g}")
    td, a_amt = params.t_d, params.a
    return FDSolution(
        t=tau * td,
        exit_flow=J * a_amt / td,
        holdup=H * a_amt,
        outflow_integral=J_int * a_amt,
        holdup_integral=H_int * a_amt * td,
        params=params,
        grid=grid,
        error_estimate=err,
    )


def fd_concentration(params: ModelParams, grid: FDGrid, t: float) -> tuple[np.ndarray, np.ndarray]:
    """Concentration profile (x, c(x, t)) from the finite-difference oracle.

    ``t`` is rounded to the nearest multiple of ``grid.dt`` t_d.  The nodes
    are x_i = i L / nx for i < nx; the Dirichlet node c(L) = 0 is appended.
    """
    steps = int(round(t / params.t_d / grid.dt))
    if steps < 1:
        raise InvalidParameters("t must be at least one time step")
    u = _fd_core(params.pe, params.kappa_d, grid, grid.dt, 1, stop_step=steps)
    x = np.arange(grid.nx + 1) / grid.nx * params.L
    c = np.concatenate((u, [0.0])) * params.a / params.L
    return x, c


def fd_solve(params: ModelParams, grid: FDGrid, estimate_error: bool = True) -> Curve:
    """Exit-flow curve j(L, t) from the finite-difference oracle."""
    return fd_run(params, grid, estimate_error).to_curve()


def square_pulse_exit_flow(pe: float, kappa_d: float, epsilon: float, tau_d,
                           basis: EigenBasis | None = None,
                           trunc: Truncation = DEFAULT_TRUNCATION):
    """Normalised exit flow for the initial pulse (1/eps) 1_[0, eps] (exact series).

    The expansion coefficients are integrals of exp(-Pe xi/2) sin(mu (1 - xi))
    over [0, eps], taken in closed form.
    """
    if not 0 < epsilon <= 1:
        raise InvalidParameters(f"epsilon must lie in (0, 1], got {epsilon}")
    tau, scalar = _as_tau(tau_d)
    flat = tau.reshape(-1)
    _check_times(flat, trunc)
    basis = resolve_basis(pe, basis, float(np.min(flat)), trunc, power=1.0)
    mu, w = basis.mu, basis.norm_weight
    s = 0.5 * pe

    def antiderivative(xi):
        theta = mu * (1.0 - xi)
        return math.exp(-s * xi) * (mu * np.cos(theta) - s * np.sin(theta)) / (s * s + mu * mu)

    coef = mu * (antiderivative(epsilon) - antiderivative(0.0)) / (epsilon * w)
    series = _sum_series(coef, mu, flat, trunc)
    out = np.exp(s - (0.25 * pe * pe + kappa_d) * flat) * series
    return _finish(out.reshape(tau.shape), scalar)


# -- Monte Carlo ---------------------------------------------------------------

@dataclass(frozen=True)
class MCConfig:
    """Euler-Maruyama settings; ``dt`` and ``t_cap`` are in units of t_d.

    ``bridge_correction`` tests, after every step that stays inside, whether
    the Brownian bridge between the two positions touched the outlet.  This
    removes the O(sqrt(dt)) overshoot bias of discretely monitored absorption.

    ``reflection="skorokhod"`` reflects each step exactly: the minimum of the
    Brownian bridge between the step endpoints is sampled and the endpoint is
    lifted by its undershoot below zero.  The plain mirror rule (``"mirror"``,
    ``|x|``) is exact without drift but leaves an O(dt) bias in the exit time
    once advection is present.
    """

    n_paths: int = 100_000
    dt: float = 1e-3
    seed: int = 0
    t_cap: float = 50.0
    chunk_size: int = 16384
    bridge_correction: bool = True
    reflection: str = "skorokhod"

    def __post_init__(self):
        if self.n_paths < 1000:
            raise InvalidParameters(f"n_paths must be >= 1000, got {self.n_paths}")
        if not 0 < self.dt <= 1e-3:
            raise InvalidParameters(f"dt must lie in (0, 1e-3] t_d, got {self.dt}")
        if not self.t_cap > 0:
            raise InvalidParameters("t_cap must be positive")
        if self.chunk_size < 1:
            raise InvalidParameters("chunk_size must be >= 1")
        if self.reflection not in ("skorokhod", "mirror"):
            raise InvalidParameters(f"reflection must be 'skorokhod' or 'mirror', got {self.reflection!r}")


@dataclass
class ExitTimes:
    times: np.ndarray  # absolute time units, censored paths excluded
    n_censored: int
    config: MCConfig
    params: ModelParams

    @property
    def mean(self) -> float:
        return float(np.mean(self.times))

    @property
    def stderr(self) -> float:
        return float(np.std(self.times, ddof=1) / math.sqrt(self.times.size))

    def to_csv(self, path=None) -> str:
        cfg = self.config
        buf = io.StringIO()
        buf.write(f"# seed={cfg.seed}, n_paths={cfg.n_paths}, dt={cfg.dt:.17g}, "
                  f"n_censored={self.n_censored}\n")
        buf.write("exit_time\n")
        for value in self.times:
            buf.write(f"{value:.17g}\n")
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text, encoding="utf-8", newline="\n")
        return text


def _chunk_streams(cfg: MCConfig) -> list[tuple[int, np.random.SeedSequence]]:
    n_chunks = -(-cfg.n_paths // cfg.chunk_size)
    children = np.random.SeedSequence(cfg.seed).spawn(n_chunks)
    sizes = [min(cfg.chunk_size, cfg.n_paths - i * cfg.chunk_size) for i in range(n_chunks)]
    return list(zip(sizes, children))


def _reflected_step(x, rng, drift, scale, dt, mirror):
    b = x + drift + scale * rng.standard_normal(x.size)
    if mirror:
        return np.abs(b)
    # exact reflected step: lift the free endpoint by the undershoot of the bridge
    # minimum, sampled from its law given both endpoints (variance 2 dt per step)
    low = 0.5 * (x + b - np.sqrt((x - b) ** 2 - 4.0 * dt * np.log1p(-rng.random(x.size))))
    return b - np.minimum(low, 0.0)


def _simulate_chunk(size: int, seq: np.random.SeedSequence, pe: float, xi0: float,
                    cfg: MCConfig) -> tuple[np.ndarray, int]:
    rng = np.random.Generator(np.random.Philox(seq))
    dt = cfg.dt
    drift = pe * dt
    scale = math.sqrt(2.0 * dt)
    max_steps = int(math.ceil(cfg.t_cap / dt))
    x = np.full(size, xi0)
    idx = np.arange(size)
    exit_step = np.full(size, -1, dtype=np.int64)
    mirror = cfg.reflection == "mirror"
    step = 0
    while idx.size and step < max_steps:
        step += 1
        y = _reflected_step(x, rng, drift, scale, dt, mirror)
        hit = y >= 1.0
        if cfg.bridge_correction:
            p_cross = np.exp(-np.clip((1.0 - x) * (1.0 - y), 0.0, None) / dt)
            hit |= rng.random(idx.size) < p_cross
        if hit.any():
            exit_step[idx[hit]] = step
            keep = ~hit
            idx, x = idx[keep], y[keep]
        else:
            x = y
    censored = int(idx.size)
    # a crossing detected in step n happened somewhere in ((n-1) dt, n dt]; place it
    # uniformly there so the sample has the right mean and no lattice ties
    done = exit_step[exit_step > 0]
    return (done - rng.random(done.size)) * dt, censored


def mc_exit_times(params: ModelParams, cfg: MCConfig, workers: int | None = None) -> ExitTimes:
    """First-passage times to the outlet for molecules released at params.x0.

    Paths are split into fixed chunks, each with its own Philox stream spawned
    from ``cfg.seed``, so results do not depend on the number of workers.
    """
    if params.k != 0:
        raise InvalidParameters("the Monte Carlo oracle models pure transport (k = 0)")
    pe, xi0 = params.pe, params.xi0
    jobs = _chunk_streams(cfg)
    workers = worker_count() if workers is None else max(1, workers)
    if workers == 1:
        results = [_simulate_chunk(n, s, pe, xi0, cfg) for n, s in jobs]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda job: _simulate_chunk(job[0], job[1], pe, xi0, cfg), jobs))
    times = np.concatenate([r[0] for r in results]) * params.t_d
    censored = sum(r[1] for r in results)
    if censored > MAX_CENSORED_FRACTION * cfg.n_paths:
        raise TooManyCensored(f"{censored} of {cfg.n_paths} paths still inside at t_cap={cfg.t_cap} t_d")
    return ExitTimes(times=times, n_censored=censored, config=cfg, params=params)


def mc_positions(params: ModelParams, cfg: MCConfig, t: float) -> np.ndarray:
    """Positions at time ``t`` of reflected (never absorbed) paths started at x0."""
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(cfg.seed)))
    dt = cfg.dt
    n_steps = max(1, int(round(t / params.t_d / dt)))
    x = np.full(cfg.n_paths, params.xi0)
    drift = params.pe * dt
    scale = math.sqrt(2.0 * dt)
    mirror = cfg.reflection == "mirror"
    for _ in range(n_steps):
        x = _reflected_step(x, rng, drift, scale, dt, mirror)
    return x * params.L


def exit_time_cdf(params: ModelParams, t_max: float = 20.0, n_points: int = 40001,
                  basis: EigenBasis | None = None, trunc: Truncation = DEFAULT_TRUNCATION):
    """CDF of the exit time from cumulative quadrature of j_0 / M_0.

    Returns a callable of absolute time.  ``t_max`` is in units of t_d.
    """
    p0 = params.with_rate(0.0)
    t = np.linspace(trunc.min_time, t_max, n_points) * p0.t_d
    j = exit_flow(p0, basis, t, trunc)
    t = np.concatenate(([0.0], t))
    j = np.concatenate(([0.0], j))
    cdf = cumulative_simpson(j, x=t, initial=0.0) / p0.a

    def F(x):
        return np.interp(x, t, cdf, left=0.0, right=cdf[-1])

    return F


# -- comparison ----------------------------------------------------------------

@dataclass
class OracleReport:
    sup_norm_error: float
    window: tuple[float, float]
    samples_compared: int
    passed: bool
    tolerance: float = math.inf
    details: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        row = {
            "sup_norm_error": self.sup_norm_error,
            "t_lo": self.window[0],
            "t_hi": self.window[1],
            "samples_compared": self.samples_compared,
            "tolerance": self.tolerance,
            "pass": self.passed,
        }
        row.update(self.details)
        return row

    def to_csv(self, path=None) -> str:
        row = self.as_dict()
        fmt = [f"{v:.17g}" if isinstance(v, float) else str(v) for v in row.values()]
        text = ",".join(row) + "\n" + ",".join(fmt) + "\n"
        if path is not None:
            Path(path).write_text(text, encoding="utf-8", newline="\n")
        return text


def compare_curves(c1: Curve, c2: Curve, window: tuple[float, float] | None = None,
                   tol: float = math.inf) -> OracleReport:
    """Sup-norm distance between two curves on their common window.

    Both curves are linearly interpolated onto whichever one samples the
    window more finely.
    """
    lo = max(c1.t[0], c2.t[0])
    hi = min(c1.t[-1], c2.t[-1])
    if window is not None:
        lo, hi = max(lo, window[0]), min(hi, window[1])
    if hi < lo:
        raise DisjointWindows(f"curves share no samples in window ({lo:g}, {hi:g})")
    inside1 = c1.t[(c1.t >= lo) & (c1.t <= hi)]
    inside2 = c2.t[(c2.t >= lo) & (c2.t <= hi)]
    grid = inside1 if inside1.size >= inside2.size else inside2
    if grid.size == 0:
        raise DisjointWindows("no samples fall inside the comparison window")
    y1 = np.interp(grid, c1.t, c1.y)
    y2 = np.interp(grid, c2.t, c2.y)
    err = float(np.max(np.abs(y1 - y2)))
    return OracleReport(err, (float(lo), float(hi)), int(grid.size), err <= tol, tol)


def delta_pulse_reference(params: ModelParams, t, n_terms: int | None = None,
                          trunc: Truncation = DEFAULT_TRUNCATION) -> Curve:
    """Analytic delta-pulse exit flow on ``t``; t = 0 maps to the limit value 0."""
    t = np.asarray(t, dtype=float)
    if n_terms is not None:
        trunc = Truncation(max_terms=n_terms, tail_tol=trunc.tail_tol, min_time=trunc.min_time)
    y = np.zeros_like(t)
    ok = t >= trunc.min_time * params.t_d
    if np.any((t < trunc.min_time * params.t_d) & (t != 0)):
        raise InvalidParameters("reference times must be 0 or above the series floor")
    y[ok] = exit_flow(params, None, t[ok], trunc)
    return Curve(CurveKind.EXIT_FLOW, t, y, params, trunc)


def validate_fd(params: ModelParams, grid: FDGrid, n_terms: int = 100,
                tol: float | None = None, estimate_error: bool = True) -> OracleReport:
    """FD square-pulse exit flow against the analytic delta-pulse series on [0, t_end].

    The default tolerance 5 eps**2 + 1e-4 covers the physical pulse-shape
    deviation (which scales with eps**2) plus the discretisation floor.
    """
    sol = fd_run(params, grid, estimate_error)
    fd_curve = sol.to_curve()
    ref = delta_pulse_reference(params.with_rate(params.k), fd_curve.t, n_terms)
    if tol is None:
        tol = 5.0 * grid.epsilon**2 + 1e-4
    report = compare_curves(fd_curve, ref, (0.0, grid.t_end * params.t_d), tol)
    report.details.update({
        "oracle": "fd", "epsilon": grid.epsilon, "nx": grid.nx, "dt": grid.dt,
        "fd_error_estimate": sol.error_estimate if sol.error_estimate is not None else math.nan,
        "mass_balance_residual": sol.mass_balance_residual(),
    })
    return report


def validate_mc(params: ModelParams, cfg: MCConfig, workers: int | None = None,
                n_se: float = 3.0, ks_level: float = 0.01) -> OracleReport:
    """MC mean exit time against the closed form, plus a KS test of the exit-time law."""
    sample = mc_exit_times(params, cfg, workers)
    t_mean = mean_exit_time(params.pe, params.t_d)
    if params.x0 != 0:
        from .signatures import mean_exit_time_profile
        t_mean = float(mean_exit_time_profile(params, params.x0))
    err = abs(sample.mean - t_mean)
    tol = n_se * sample.stderr
    cdf = exit_time_cdf(params)
    ks = stats.kstest(sample.times, cdf)
    n = sample.times.size
    ks_crit = float(stats.kstwo.ppf(1.0 - ks_level, n))
    passed = err <= tol and ks.statistic < ks_crit
    details = {
        "oracle": "mc", "mc_mean": sample.mean, "mc_stderr": sample.stderr, "t_mean": t_mean,
        "ks_statistic": float(ks.statistic), "ks_critical": ks_crit, "n_paths": cfg.n_paths,
        "n_censored": sample.n_censored, "seed": cfg.seed, "dt": cfg.dt,
    }
    return OracleReport(err, (0.0, float(sample.times.max())), n, passed, tol, details)
