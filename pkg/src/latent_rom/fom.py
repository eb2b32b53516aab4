"""1-D viscous Burgers full-order model on a periodic domain.

    u_t + (u^2 / 2)_x = nu * u_xx,   u(0, x) = a * exp(-x^2 / (2 w^2))

Advection uses the Godunov flux for the convex flux u^2/2, diffusion the
central second difference, time stepping is explicit Euler.  The update is
in flux form, so the discrete mass sum(u) * dx is conserved to round-off.
"""

import itertools
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DivergenceError, ParameterError

CFL_SAFETY = 0.9
PARAM_NAMES = ("amplitude", "width")


@dataclass(frozen=True)
class SpaceTimeGrid:
    n_u: int = 128
    n_t: int = 200
    x_min: float = -3.0
    x_max: float = 3.0
    t_max: float = 1.0

    def __post_init__(self):
        if self.n_u < 3:
            raise ConfigError("n_u must be at least 3")
        if self.n_t < 2:
            raise ConfigError("n_t must be at least 2")
        if not self.x_max > self.x_min:
            raise ConfigError("x_max must exceed x_min")
        if not self.t_max > 0:
            raise ConfigError("t_max must be positive")

    @property
    def dx(self):
        return (self.x_max - self.x_min) / self.n_u

    @property
    def dt(self):
        return self.t_max / self.n_t

    @property
    def x(self):
        return self.x_min + self.dx * np.arange(self.n_u)

    @property
    def t(self):
        return self.dt * np.arange(self.n_t + 1)


@dataclass
class ParameterGrid:
    """Cartesian product of per-dimension breakpoints, with sampled flags.

    Points are enumerated with the last dimension varying fastest; the
    position in that enumeration is the point's linear grid index.
    """

    breakpoints: list
    names: tuple = PARAM_NAMES
    sampled: np.ndarray = None

    def __post_init__(self):
        self.breakpoints = [np.sort(np.asarray(b, dtype=np.float64)) for b in self.breakpoints]
        if any(b.size == 0 for b in self.breakpoints):
            raise ConfigError("every parameter dimension needs at least one breakpoint")
        self.names = tuple(self.names)
        if self.sampled is None:
            self.sampled = np.zeros(len(self.points), dtype=bool)
        else:
            self.sampled = np.asarray(self.sampled, dtype=bool).copy()
            if self.sampled.size != len(self.points):
                raise ConfigError("sampled flags must match the number of grid points")

    @classmethod
    def uniform(cls, lows, highs, counts, names=PARAM_NAMES):
        return cls([np.linspace(lo, hi, n) for lo, hi, n in zip(lows, highs, counts)], names)

    @property
    def dim(self):
        return len(self.breakpoints)

    @property
    def shape(self):
        return tuple(b.size for b in self.breakpoints)

    @property
    def points(self):
        return np.array(list(itertools.product(*self.breakpoints)), dtype=np.float64)

    @property
    def lower(self):
        return np.array([b[0] for b in self.breakpoints])

    @property
    def upper(self):
        return np.array([b[-1] for b in self.breakpoints])

    def corners(self):
        """The 2^d corner points, in grid-index order."""
        return np.array(list(itertools.product(*[(b[0], b[-1]) for b in self.breakpoints])))

    def index_of(self, mu, tol=1e-12):
        """Linear index of the grid point equal to ``mu``, or ``None``."""
        d = np.max(np.abs(self.points - np.asarray(mu, dtype=np.float64)), axis=1)
        hits = np.flatnonzero(d <= tol)
        return int(hits[0]) if hits.size else None

    def mark_sampled(self, mu):
        idx = self.index_of(mu)
        if idx is not None:
            self.sampled[idx] = True
        return idx

    def unsampled_indices(self):
        return np.flatnonzero(~self.sampled)


@dataclass
class SnapshotMatrix:
    u: np.ndarray
    mu: np.ndarray
    grid: SpaceTimeGrid
    runtime: float = field(default=0.0, compare=False)


def _check_mu(mu):
    mu = np.asarray(mu, dtype=np.float64)
    if mu.shape != (2,):
        raise ParameterError(f"expected (amplitude, width), got shape {mu.shape}")
    if not np.all(np.isfinite(mu)):
        raise ParameterError("parameter values must be finite")
    if mu[1] <= 0:
        raise ParameterError(f"width must be positive, got {mu[1]}")
    return mu


def initial_condition(mu, grid):
    a, w = _check_mu(mu)
    x = grid.x
    return a * np.exp(-x * x / (2.0 * w * w))


def stable_dt(u0, grid, viscosity):
    """Largest dt allowed by the advective and diffusive limits (times safety)."""
    umax = float(np.max(np.abs(u0))) if u0.size else 0.0
    limits = []
    if umax > 0:
        limits.append(CFL_SAFETY * grid.dx / umax)
    if viscosity > 0:
        limits.append(CFL_SAFETY * grid.dx ** 2 / (2.0 * viscosity))
    return min(limits) if limits else np.inf


def check_stability(u0, grid, viscosity):
    limit = stable_dt(u0, grid, viscosity)
    if grid.dt > limit:
        raise ConfigError(f"dt={grid.dt:g} exceeds the stability limit {limit:g}; increase n_t")


def godunov_flux(u_left, u_right):
    """Exact Riemann flux for f(u) = u^2/2 at each interface."""
    return np.maximum(0.5 * np.maximum(u_left, 0.0) ** 2, 0.5 * np.minimum(u_right, 0.0) ** 2)


def solve(mu, grid, viscosity=0.02):
    """March the PDE from ``initial_condition(mu)`` and return all n_t+1 states."""
    if viscosity < 0:
        raise ConfigError("viscosity must be non-negative")
    u0 = initial_condition(mu, grid)
    check_stability(u0, grid, viscosity)
    dt, dx = grid.dt, grid.dx
    lam = dt / dx
    out = np.empty((grid.n_t + 1, grid.n_u))
    out[0] = u0
    u = u0.copy()
    for n in range(grid.n_t):
        u_right = np.roll(u, -1)
        # flux[j] sits at interface j+1/2
        flux = godunov_flux(u, u_right) - viscosity * (u_right - u) / dx
        u = u - lam * (flux - np.roll(flux, 1))
        if not np.all(np.isfinite(u)):
            raise DivergenceError(f"FOM diverged at step {n + 1}", step=n + 1)
        out[n + 1] = u
    return SnapshotMatrix(out, np.asarray(mu, dtype=np.float64).copy(), grid)


def solve_timed(mu, grid, viscosity=0.02):
    start = time.perf_counter()
    snap = solve(mu, grid, viscosity)
    snap.runtime = time.perf_counter() - start
    return snap


def fom_runtime_probe(mu, grid, viscosity=0.02):
    """Wall-clock seconds of one full solve."""
    return solve_timed(mu, grid, viscosity).runtime
