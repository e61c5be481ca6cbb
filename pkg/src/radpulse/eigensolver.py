"""Eigenvalues and eigenfunctions of the Robin-Dirichlet Sturm-Liouville problem.

After the exponential substitution that removes the advection and reaction
terms, the spatial problem on ``xi in [0, 1]`` is

    Phi'' = -mu**2 Phi,   Phi(1) = 0,   Phi(0)/2 - Phi'(0)/Pe = 0,

whose solutions are ``Phi_n(xi) = sin(mu_n (1 - xi))`` with ``mu_n`` the
positive roots of ``mu cos(mu) + (Pe/2) sin(mu) = 0``.

Roots are located by bisection on ``((n-1) pi, n pi)``.  This bracket holds
exactly one root for every supported Pe because ``mu cot(mu)`` is strictly
decreasing on each interval, and the pole-free root function is well defined
at ``Pe = 0``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import IndexOutOfRange, InvalidPeclet, ToleranceTooSmall

PE_MIN = -2.0  # exclusive
PE_MAX = 10.0  # inclusive
BRACKET_DELTA = 1e-12
DEFAULT_TOL = 1e-12
EIGHT_DECIMALS_TOL = 1e-8
_EPS = np.finfo(float).eps


def check_peclet(pe: float) -> float:
    """Return ``pe`` as a float, raising InvalidPeclet outside (-2, 10]."""
    pe = float(pe)
    if not (PE_MIN < pe <= PE_MAX) or math.isnan(pe):
        raise InvalidPeclet(
            f"Peclet number {pe!r} outside the supported range ({PE_MIN:g}, {PE_MAX:g}]"
        )
    return pe


def root_function(mu, pe: float):
    """g(mu) = mu cos(mu) + (Pe/2) sin(mu); vectorised over ``mu``."""
    mu = np.asarray(mu, dtype=float)
    return mu * np.cos(mu) + 0.5 * pe * np.sin(mu)


def bracket_interval(n: int) -> tuple[float, float]:
    if n < 1:
        raise IndexOutOfRange(f"eigenvalue index must be >= 1, got {n}")
    lo = (n - 1) * math.pi + BRACKET_DELTA
    hi = n * math.pi - BRACKET_DELTA
    return lo, hi


def bisection_steps(tol: float, width: float = math.pi) -> int:
    """Number of halvings needed to shrink ``width`` below ``tol``."""
    return max(1, math.ceil(math.log2(width / tol)))


def _check_tol(tol: float) -> float:
    tol = float(tol)
    if not tol > 0:
        raise ToleranceTooSmall(f"tolerance must be positive, got {tol!r}")
    floor = 4 * _EPS * (math.pi - 2 * BRACKET_DELTA)
    if tol < floor:
        raise ToleranceTooSmall(f"tolerance {tol:g} is below 4 machine epsilons of the bracket width ({floor:.3g})")
    return tol


def _bisect(ns: np.ndarray, pe: float, tol: float) -> np.ndarray:
    # all brackets bisected simultaneously
    lo = (ns - 1) * math.pi + BRACKET_DELTA
    hi = ns * math.pi - BRACKET_DELTA
    sign_lo = np.sign(root_function(lo, pe))
    for _ in range(bisection_steps(tol)):
        mid = 0.5 * (lo + hi)
        if np.all((mid == lo) | (mid == hi)):
            break  # every bracket is down to adjacent floats
        same = np.sign(root_function(mid, pe)) == sign_lo
        lo = np.where(same, mid, lo)
        hi = np.where(same, hi, mid)
    return 0.5 * (lo + hi)


def solve_eigenvalue(n: int, pe: float, tol: float = DEFAULT_TOL) -> float:
    """Return the n-th positive eigenvalue mu_n for Peclet number ``pe``.

    ``Pe == 0`` is the Neumann case and returns ``(n - 1/2) pi`` directly.
    """
    bracket_interval(n)
    pe = check_peclet(pe)
    tol = _check_tol(tol)
    if pe == 0.0:
        return (n - 0.5) * math.pi
    return float(_bisect(np.array([n], dtype=float), pe, tol)[0])


@dataclass(frozen=True)
class EigenBasis:
    """Sorted eigenvalues ``mu`` and normalisation weights for one Peclet number.

    ``norm_weight[n-1] = 1/2 + (Pe/4) (sin mu_n / mu_n)**2`` is the squared
    L2 norm of ``sin(mu_n (1 - xi))`` on [0, 1].  Arrays are read-only.
    """

    pe: float
    mu: np.ndarray
    norm_weight: np.ndarray
    tol: float = DEFAULT_TOL

    @property
    def count(self) -> int:
        return int(self.mu.shape[0])

    def __len__(self) -> int:
        return self.count

    def eigenfunction(self, n: int, xi):
        return eigenfunction_value(self, n, xi)

    def truncated(self, n_terms: int) -> "EigenBasis":
        n_terms = min(n_terms, self.count)
        return _make_basis(self.pe, self.mu[:n_terms], self.tol)


def _make_basis(pe: float, mu: np.ndarray, tol: float) -> EigenBasis:
    mu = np.array(mu, dtype=float)
    w = 0.5 + 0.25 * pe * (np.sin(mu) / mu) ** 2
    mu.setflags(write=False)
    w.setflags(write=False)
    return EigenBasis(pe=pe, mu=mu, norm_weight=w, tol=tol)


@lru_cache(maxsize=256)
def _cached_basis(pe: float, n_terms: int, tol: float) -> EigenBasis:
    ns = np.arange(1, n_terms + 1, dtype=float)
    if pe == 0.0:
        mu = (ns - 0.5) * math.pi
    else:
        mu = _bisect(ns, pe, tol)
    return _make_basis(pe, mu, tol)


def build_basis(pe: float, n_terms: int, tol: float = DEFAULT_TOL) -> EigenBasis:
    """Build the first ``n_terms`` eigenpairs.  Results are cached per (Pe, N, tol)."""
    if n_terms < 1:
        raise IndexOutOfRange(f"n_terms must be >= 1, got {n_terms}")
    pe = check_peclet(pe)
    tol = _check_tol(tol)
    return _cached_basis(pe, int(n_terms), tol)


def eigenfunction_value(basis: EigenBasis, n: int, xi):
    """Orthonormal eigenfunction ``sin(mu_n (1 - xi)) / sqrt(w_n)``."""
    if not 1 <= n <= basis.count:
        raise IndexOutOfRange(f"eigenfunction index {n} outside 1..{basis.count}")
    xi_arr = np.asarray(xi, dtype=float)
    if np.any((xi_arr < 0) | (xi_arr > 1)):
        raise IndexOutOfRange("xi must lie in [0, 1]")
    mu = basis.mu[n - 1]
    out = np.sin(mu * (1.0 - xi_arr)) / math.sqrt(basis.norm_weight[n - 1])
    return float(out) if out.ndim == 0 else out
