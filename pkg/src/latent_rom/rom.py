"""ROM prediction: sample latent ODE coefficients, integrate, decode, summarise."""

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import DivergenceError, NumericError, ShapeError, StateError, UndefinedMetricError
from .fom import initial_condition
from .sindy import SindyLibrary

log = logging.getLogger(__name__)


@dataclass
class ROMSampleSet:
    xi_samples: np.ndarray
    latent_samples: np.ndarray
    seed: int
    diverged: list = field(default_factory=list)

    @property
    def n_samples(self):
        return self.xi_samples.shape[0]


@dataclass
class ROMPrediction:
    mean: np.ndarray
    variance: np.ndarray
    mu_star: np.ndarray
    n_samples: int
    diverged: list = field(default_factory=list)

    @property
    def max_std(self):
        return float(np.sqrt(np.max(self.variance)))


def sample_coefficients(surrogate, mu_star, n_samples, seed=0):
    """Draw ``n_samples`` coefficient matrices, each entry independently.

    A single sample is the predictive mean itself, with no noise.
    """
    if surrogate is None:
        raise StateError("coefficient surrogate has not been fitted")
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    mean, std = surrogate.predict(mu_star)
    if n_samples == 1:
        return mean[None].copy()
    rng = np.random.default_rng(seed)
    return mean + std * rng.standard_normal((n_samples,) + mean.shape)


def _first_bad_row(z):
    bad = ~np.all(np.isfinite(z), axis=1)
    return int(np.argmax(bad)) if bad.any() else None


def _integrate_loop(xi, z0, n_t, dt, library):
    out = np.empty((n_t + 1, z0.size))
    out[0] = z0
    z = z0
    with np.errstate(over="ignore", invalid="ignore"):
        for n in range(n_t):
            z = z + dt * (library.evaluate(z) @ xi.T)
            if not np.all(np.isfinite(z)):
                raise DivergenceError(f"latent state diverged at step {n + 1}", step=n + 1)
            out[n + 1] = z
    return out


def _integrate_affine(xi, z0, n_t, dt, library):
    # Forward Euler with a linear library is w_{n+1} = w_n @ A for the
    # augmented row w = [z, 1]; fill the trajectory by repeated squaring.
    nz = z0.size
    a = np.eye(nz + 1)
    a[:nz, :nz] += dt * xi[:, library.linear_slice].T
    if library.include_constant:
        a[nz, :nz] = dt * xi[:, 0]
    w = np.empty((n_t + 1, nz + 1))
    w[0, :nz] = z0
    w[0, nz] = 1.0
    filled = 1
    power = a
    with np.errstate(over="ignore", invalid="ignore"):
        while filled < n_t + 1:
            take = min(filled, n_t + 1 - filled)
            w[filled:filled + take] = w[:take] @ power
            filled += take
            if filled < n_t + 1:
                power = power @ power
    z = w[:, :nz]
    bad = _first_bad_row(z)
    if bad is not None:
        raise DivergenceError(f"latent state diverged at step {bad}", step=bad)
    return np.ascontiguousarray(z)


def integrate_latent(xi, z0, n_t, dt, library=None, method="auto"):
    """Forward Euler ``z_{n+1} = z_n + dt * theta(z_n) @ xi.T``; row 0 is ``z0``.

    ``method="loop"`` steps one at a time; ``"auto"`` uses the closed affine
    form when the library is linear (the same recursion, evaluated by
    repeated squaring).
    """
    z0 = np.asarray(z0, dtype=np.float64).ravel()
    xi = np.asarray(xi, dtype=np.float64)
    library = library or SindyLibrary(z0.size)
    if z0.size != library.latent_dim:
        raise ShapeError(f"z0 has length {z0.size}, library expects {library.latent_dim}")
    if xi.shape != (library.latent_dim, library.n_terms):
        raise ShapeError(f"xi has shape {xi.shape}, expected {(library.latent_dim, library.n_terms)}")
    if not dt > 0:
        raise ValueError("dt must be positive")
    if method == "loop":
        return _integrate_loop(xi, z0, n_t, dt, library)
    return _integrate_affine(xi, z0, n_t, dt, library)


def encode_initial_condition(ae, u0):
    u0 = np.asarray(u0, dtype=np.float64)
    if u0.shape != (ae.field_dim,):
        raise ShapeError(f"initial condition has shape {u0.shape}, expected ({ae.field_dim},)")
    return ae.encode(u0)


def sample_latent(ae, surrogate, mu_star, grid, n_samples, seed=0, library=None):
    """Latent trajectories for ``n_samples`` coefficient draws.

    Diverging draws are recorded in ``diverged`` and their rows set to NaN.
    """
    z0 = encode_initial_condition(ae, initial_condition(mu_star, grid))
    xis = sample_coefficients(surrogate, mu_star, n_samples, seed)
    latent = np.full((n_samples, grid.n_t + 1, z0.size), np.nan)
    diverged = []
    for d, xi in enumerate(xis):
        try:
            latent[d] = integrate_latent(xi, z0, grid.n_t, grid.dt, library)
        except DivergenceError as exc:
            log.warning("sample %d diverged: %s", d, exc)
            diverged.append(d)
    return ROMSampleSet(xis, latent, seed, diverged)


def ensemble_statistics(fields):
    """Per-entry mean and unbiased variance over axis 0.

    Deviations are taken from the first member, so an ensemble of identical
    fields gives exactly that field and exactly zero variance.
    """
    ref = fields[0]
    n = len(fields)
    if n == 1:
        return ref.copy(), np.zeros_like(ref)
    dev = fields - ref
    s1 = dev.sum(axis=0)
    mean = ref + s1 / n
    variance = (np.sum(dev * dev, axis=0) - s1 * s1 / n) / (n - 1)
    return mean, np.maximum(variance, 0.0)


def predict(ae, surrogate, mu_star, grid, n_samples=20, seed=0, library=None):
    """Ensemble mean and unbiased variance of the decoded latent samples."""
    mu_star = np.asarray(mu_star, dtype=np.float64)
    samples = sample_latent(ae, surrogate, mu_star, grid, n_samples, seed, library)
    keep = [d for d in range(n_samples) if d not in samples.diverged]
    needed = 1 if n_samples == 1 else 2
    if len(keep) < needed:
        raise DivergenceError(f"only {len(keep)} of {n_samples} ROM samples stayed finite")
    n_rows = grid.n_t + 1
    diverged = list(samples.diverged)
    stacked = samples.latent_samples[keep].reshape(len(keep) * n_rows, -1)
    try:
        fields = ae.decode(stacked).reshape(len(keep), n_rows, -1)
    except NumericError:
        decoded = []
        for d in keep:
            try:
                decoded.append(ae.decode(samples.latent_samples[d]))
            except NumericError:
                diverged.append(d)
        if len(decoded) < needed:
            raise DivergenceError(f"only {len(decoded)} of {n_samples} ROM samples decoded to finite fields")
        fields = np.stack(decoded)
    mean, variance = ensemble_statistics(fields)
    return ROMPrediction(mean, variance, mu_star, len(fields), sorted(diverged))


def max_relative_error(u_true, u_pred):
    """Largest per-time-step relative L2 error of ``u_pred`` against ``u_true``."""
    u_true = np.asarray(getattr(u_true, "u", u_true), dtype=np.float64)
    u_pred = np.asarray(u_pred, dtype=np.float64)
    if u_true.shape != u_pred.shape:
        raise ShapeError(f"shapes differ: {u_true.shape} vs {u_pred.shape}")
    norms = np.linalg.norm(u_true, axis=1)
    if np.any(norms == 0):
        raise UndefinedMetricError("relative error undefined for a zero reference row")
    return float(np.max(np.linalg.norm(u_pred - u_true, axis=1) / norms))
