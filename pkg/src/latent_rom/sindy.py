"""Latent-space dynamics identification with a linear candidate library.

The latent time derivative is estimated with second-order finite
differences and regressed onto ``theta(Z) @ xi.T``.  Because the stencil is
a fixed linear operator, the residual loss is differentiable in ``Z`` and
its gradient flows back into the encoder during joint training.
"""

from dataclasses import dataclass

import numpy as np

from .errors import NotPositiveDefiniteError, ShapeError, SingularityError
from .linalg import cholesky, solve_posdef


def estimate_time_derivative(z, dt):
    """Second-order finite differences along axis 0.

    Central on interior rows, one-sided three-point at the first and last
    row, so the estimate is exact for trajectories quadratic in time.
    """
    z = np.asarray(z, dtype=np.float64)
    if z.shape[0] < 3:
        raise ShapeError("need at least 3 time samples to estimate a derivative")
    if not dt > 0:
        raise ValueError("dt must be positive")
    out = np.empty_like(z)
    out[1:-1] = z[2:] - z[:-2]
    # -3 z0 + 4 z1 - z2 written in differences so constants give exact zeros
    out[0] = 3.0 * (z[1] - z[0]) - (z[2] - z[1])
    out[-1] = 3.0 * (z[-1] - z[-2]) - (z[-2] - z[-3])
    return out / (2.0 * dt)


def derivative_adjoint(g, dt):
    """Transpose of :func:`estimate_time_derivative` applied to ``g``."""
    g = np.asarray(g, dtype=np.float64)
    out = np.zeros_like(g)
    out[:-2] -= g[1:-1]
    out[2:] += g[1:-1]
    out[0] -= 3.0 * g[0]
    out[1] += 4.0 * g[0]
    out[2] -= g[0]
    out[-1] += 3.0 * g[-1]
    out[-2] -= 4.0 * g[-1]
    out[-3] += g[-1]
    return out / (2.0 * dt)


@dataclass(frozen=True)
class SindyLibrary:
    """Linear candidate terms ``z_1..z_nz``, optionally preceded by a constant."""

    latent_dim: int
    include_constant: bool = False

    @property
    def n_terms(self):
        return self.latent_dim + int(self.include_constant)

    @property
    def descriptors(self):
        names = [f"z{k}" for k in range(self.latent_dim)]
        return (["1"] + names) if self.include_constant else names

    @property
    def linear_slice(self):
        """Columns of theta that hold the raw latent variables."""
        start = int(self.include_constant)
        return slice(start, start + self.latent_dim)

    def evaluate(self, z):
        """theta(Z) for a single row or a stack of rows."""
        z = np.asarray(z, dtype=np.float64)
        if z.shape[-1] != self.latent_dim:
            raise ShapeError(f"expected latent dimension {self.latent_dim}, got {z.shape[-1]}")
        if not self.include_constant:
            return z
        ones = np.ones(z.shape[:-1] + (1,))
        return np.concatenate([ones, z], axis=-1)


def build_library(z_row, include_constant=False):
    z_row = np.asarray(z_row, dtype=np.float64)
    return SindyLibrary(z_row.shape[-1], include_constant).evaluate(z_row)


@dataclass
class LatentTrajectory:
    z: np.ndarray
    dt: float

    @property
    def z_dot(self):
        return estimate_time_derivative(self.z, self.dt)

    @property
    def latent_dim(self):
        return self.z.shape[1]


@dataclass
class SindyResidual:
    loss: float
    grad_xi: np.ndarray
    grad_z: np.ndarray


def sindy_residual(traj, xi, library=None):
    """Mean squared mismatch between the FD derivative and ``theta(Z) xi^T``.

    Gradients are exact, including the path through the derivative stencil.
    """
    z = np.asarray(traj.z, dtype=np.float64)
    library = library or SindyLibrary(z.shape[1])
    xi = np.asarray(xi, dtype=np.float64)
    if xi.shape != (library.latent_dim, library.n_terms):
        raise ShapeError(f"xi has shape {xi.shape}, expected {(library.latent_dim, library.n_terms)}")
    theta = library.evaluate(z)
    resid = estimate_time_derivative(z, traj.dt) - theta @ xi.T
    loss = float(np.mean(resid ** 2))
    g = 2.0 * resid / resid.size
    grad_xi = -g.T @ theta
    grad_z = derivative_adjoint(g, traj.dt) - g @ xi[:, library.linear_slice]
    return SindyResidual(loss, grad_xi, grad_z)


def least_squares_fit(traj, library=None, rel_jitter=1e-10):
    """Closed-form coefficients minimising the residual, via normal equations.

    The Gram matrix gets a diagonal shift of ``rel_jitter`` times its mean
    diagonal; a Gram matrix with zero scale (or one that stays indefinite
    after jitter escalation) is reported as singular.
    """
    z = np.asarray(traj.z, dtype=np.float64)
    library = library or SindyLibrary(z.shape[1])
    theta = library.evaluate(z)
    if theta.shape[0] < theta.shape[1]:
        raise SingularityError(f"{theta.shape[0]} samples cannot determine {theta.shape[1]} library terms")
    gram = theta.T @ theta
    scale = float(np.mean(np.diag(gram)))
    try:
        factor = cholesky(gram, rel_jitter * scale)
    except NotPositiveDefiniteError as exc:
        raise SingularityError(f"library matrix is rank deficient: {exc}") from exc
    rhs = theta.T @ traj.z_dot
    return np.ascontiguousarray(solve_posdef(factor, rhs).T)


def batched_sindy_residual(z, xi, dt, library=None):
    """Residual averaged over a stack of trajectories.

    ``z`` has shape (n_traj, n_time, n_z) and ``xi`` (n_traj, n_z, n_terms).
    The loss is the mean of the per-trajectory losses of
    :func:`sindy_residual`; gradients are returned with the input shapes.
    """
    z = np.asarray(z, dtype=np.float64)
    xi = np.asarray(xi, dtype=np.float64)
    library = library or SindyLibrary(z.shape[2])
    if xi.shape != (z.shape[0], library.latent_dim, library.n_terms):
        raise ShapeError(f"xi stack has shape {xi.shape}, expected {(z.shape[0], library.latent_dim, library.n_terms)}")
    zt = np.swapaxes(z, 0, 1)  # time first so the stencil runs along axis 0
    theta = library.evaluate(zt)
    resid = estimate_time_derivative(zt, dt) - np.einsum("tml,mjl->tmj", theta, xi)
    loss = float(np.mean(resid ** 2))
    g = 2.0 * resid / resid.size
    grad_xi = -np.einsum("tmj,tml->mjl", g, theta)
    grad_zt = derivative_adjoint(g, dt) - np.einsum("tmj,mjk->tmk", g, xi[:, :, library.linear_slice])
    return SindyResidual(loss, grad_xi, np.swapaxes(grad_zt, 0, 1))
