"""Per-coefficient Gaussian process regression with an ARD RBF kernel.

Inputs are min-max scaled to the unit box of the current training set and
targets are standardised per coefficient.  Hyperparameters (signal
variance, one lengthscale per input dimension, noise variance) live in log
space and are fitted by multistart projected gradient ascent on the log
marginal likelihood.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DegenerateDataError, LatentROMError, NotPositiveDefiniteError, ShapeError, StateError
from .linalg import cholesky, solve_lower, solve_posdef

LENGTHSCALE_BOUNDS = (1e-2, 1e2)
SIGNAL_BOUNDS = (1e-4, 1e2)
NOISE_BOUNDS = (1e-8, 1e-1)
N_RESTARTS = 5
N_ITER = 200
STEP = 0.05


@dataclass(frozen=True)
class RBFKernelParams:
    signal_variance: float
    lengthscales: tuple
    noise_variance: float

    def __post_init__(self):
        object.__setattr__(self, "lengthscales", tuple(float(v) for v in np.atleast_1d(self.lengthscales)))
        if self.signal_variance <= 0 or self.noise_variance <= 0 or min(self.lengthscales) <= 0:
            raise ValueError("kernel hyperparameters must be strictly positive")

    @property
    def dim(self):
        return len(self.lengthscales)

    def to_log(self):
        return np.log([self.signal_variance, *self.lengthscales, self.noise_variance])

    @classmethod
    def from_log(cls, theta):
        theta = np.exp(np.asarray(theta, dtype=np.float64))
        return cls(float(theta[0]), tuple(theta[1:-1]), float(theta[-1]))

    @classmethod
    def default(cls, dim):
        return cls(1.0, (0.5,) * dim, 1e-4)


def log_bounds(dim):
    lo = np.log([SIGNAL_BOUNDS[0]] + [LENGTHSCALE_BOUNDS[0]] * dim + [NOISE_BOUNDS[0]])
    hi = np.log([SIGNAL_BOUNDS[1]] + [LENGTHSCALE_BOUNDS[1]] * dim + [NOISE_BOUNDS[1]])
    return lo, hi


def _factor(k):
    try:
        return cholesky(k, 0.0)
    except NotPositiveDefiniteError:
        return cholesky(k, 1e-10)


def rbf_kernel(x1, x2, params):
    x1 = np.atleast_1d(np.asarray(x1, dtype=np.float64))
    x2 = np.atleast_1d(np.asarray(x2, dtype=np.float64))
    if x1.shape != x2.shape:
        raise ShapeError(f"inputs of shape {x1.shape} and {x2.shape}")
    r2 = np.sum(((x1 - x2) / np.asarray(params.lengthscales)) ** 2)
    return float(params.signal_variance * np.exp(-0.5 * r2))


def kernel_matrix(a, b, params):
    """Noise-free cross covariance between the rows of ``a`` and ``b``."""
    ls = np.asarray(params.lengthscales)
    diff = (a[:, None, :] - b[None, :, :]) / ls
    return params.signal_variance * np.exp(-0.5 * np.sum(diff ** 2, axis=-1))


def log_marginal_likelihood(x, y, params, with_grad=True):
    """Log evidence of ``y`` under the GP and its gradient in log-parameters.

    Gradient order matches :meth:`RBFKernelParams.to_log`.
    """
    n = x.shape[0]
    kf = kernel_matrix(x, x, params)
    factor = _factor(kf + params.noise_variance * np.eye(n))
    alpha = solve_posdef(factor, y[:, None])[:, 0]
    lml = -0.5 * float(y @ alpha) - 0.5 * factor.logdet() - 0.5 * n * np.log(2 * np.pi)
    if not with_grad:
        return lml, None
    inner = np.outer(alpha, alpha) - solve_posdef(factor, np.eye(n))
    ls = np.asarray(params.lengthscales)
    grads = [0.5 * np.sum(inner * kf)]
    for d in range(x.shape[1]):
        sq = (x[:, None, d] - x[None, :, d]) ** 2 / ls[d] ** 2
        grads.append(0.5 * np.sum(inner * kf * sq))
    grads.append(0.5 * params.noise_variance * np.trace(inner))
    return lml, np.array(grads)


def posterior(x, y, xq, params):
    """Predictive mean and variance of a noisy observation at the rows of ``xq``.

    Operates directly on already-normalised data; variance is clamped at 0.
    """
    n = x.shape[0]
    factor = _factor(kernel_matrix(x, x, params) + params.noise_variance * np.eye(n))
    alpha = solve_posdef(factor, y[:, None])[:, 0]
    ks = kernel_matrix(xq, x, params)
    v = solve_lower(factor, ks.T)
    var = params.signal_variance + params.noise_variance - np.sum(v * v, axis=0)
    return ks @ alpha, np.maximum(var, 0.0)


def _optimize(x, y, rng, noise_variance=None, init=None):
    """Multistart projected gradient ascent; returns the best params seen."""
    dim = x.shape[1]
    lo, hi = log_bounds(dim)
    free = np.ones(dim + 2, dtype=bool)
    if noise_variance is not None:
        free[-1] = False
    starts = [(init or RBFKernelParams.default(dim)).to_log()]
    for _ in range(N_RESTARTS - 1):
        starts.append(rng.uniform(lo, hi))
    best_theta, best_lml, init_lml = None, -np.inf, None
    for theta in starts:
        theta = np.clip(theta, lo, hi)
        if noise_variance is not None:
            theta[-1] = np.log(noise_variance)
        for it in range(N_ITER + 1):
            try:
                lml, grad = log_marginal_likelihood(x, y, RBFKernelParams.from_log(theta))
            except LatentROMError:
                break
            if init_lml is None:
                init_lml = lml
            if lml > best_lml:
                best_theta, best_lml = theta.copy(), lml
            if it == N_ITER:
                break
            grad = np.where(free, grad, 0.0)
            norm = np.linalg.norm(grad)
            if not np.isfinite(norm) or norm < 1e-12:
                break
            theta = np.clip(theta + STEP * grad / max(1.0, norm), lo, hi)
    if best_theta is None:
        raise DegenerateDataError("no restart produced a valid kernel matrix")
    return RBFKernelParams.from_log(best_theta), best_lml, init_lml


@dataclass
class GPModel:
    kernel: RBFKernelParams
    train_inputs: np.ndarray
    train_targets: np.ndarray
    input_lo: np.ndarray
    input_hi: np.ndarray
    target_mean: float
    target_std: float
    degenerate: bool = False
    log_likelihood: float = np.nan
    initial_log_likelihood: float = np.nan
    chol: object = field(default=None, repr=False)
    alpha: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if not self.degenerate and self.chol is None:
            n = self.train_inputs.shape[0]
            k = kernel_matrix(self.train_inputs, self.train_inputs, self.kernel)
            self.chol = _factor(k + self.kernel.noise_variance * np.eye(n))
            self.alpha = solve_posdef(self.chol, self.train_targets[:, None])[:, 0]

    def normalize(self, mu):
        mu = np.atleast_2d(np.asarray(mu, dtype=np.float64))
        if mu.shape[1] != self.input_lo.size:
            raise ShapeError(f"expected {self.input_lo.size} parameters, got {mu.shape[1]}")
        return (mu - self.input_lo) / (self.input_hi - self.input_lo)

    def predict_standardized(self, mu):
        """Mean and std in standardised target units for each row of ``mu``."""
        xq = self.normalize(mu)
        if self.degenerate:
            return np.zeros(len(xq)), np.zeros(len(xq))
        ks = kernel_matrix(xq, self.train_inputs, self.kernel)
        v = solve_lower(self.chol, ks.T)
        var = self.kernel.signal_variance + self.kernel.noise_variance - np.sum(v * v, axis=0)
        return ks @ self.alpha, np.sqrt(np.maximum(var, 0.0))

    def predict_many(self, mu):
        m, s = self.predict_standardized(mu)
        return self.target_mean + self.target_std * m, self.target_std * s


def predict(model, mu_star):
    """Predictive ``(mean, std)`` at a single parameter vector."""
    if model is None:
        raise StateError("GP model has not been fitted")
    m, s = model.predict_many(np.asarray(mu_star, dtype=np.float64)[None, :])
    return float(m[0]), float(s[0])


def normalization_bounds(inputs):
    inputs = np.asarray(inputs, dtype=np.float64)
    lo, hi = inputs.min(axis=0), inputs.max(axis=0)
    # A dimension with no spread cannot be scaled; leave it unscaled.
    hi = np.where(hi > lo, hi, lo + 1.0)
    return lo, hi


def fit(inputs, targets, seed=0, noise_variance=None, kernel=None, optimize=True, bounds=None):
    """Fit one GP to ``targets`` observed at the rows of ``inputs``.

    ``noise_variance`` pins the (standardised) noise level; ``optimize=False``
    keeps ``kernel`` as given.  ``bounds`` overrides the min-max normalisation
    so several models can share one input scaling.
    """
    inputs = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    targets = np.asarray(targets, dtype=np.float64).ravel()
    if inputs.shape[0] != targets.size:
        raise ShapeError(f"{inputs.shape[0]} inputs but {targets.size} targets")
    if not np.all(np.isfinite(inputs)) or not np.all(np.isfinite(targets)):
        raise DegenerateDataError("training data must be finite")
    if len(np.unique(inputs, axis=0)) < 2:
        raise DegenerateDataError("need at least two distinct training inputs")
    lo, hi = bounds if bounds is not None else normalization_bounds(inputs)
    x = (inputs - lo) / (hi - lo)
    mean = float(np.mean(targets))
    std = float(np.std(targets))
    if std <= 1e-12 * max(1.0, abs(mean)):
        return GPModel(kernel or RBFKernelParams.default(x.shape[1]), x, np.zeros_like(targets),
                       lo, hi, mean, 0.0, degenerate=True)
    y = (targets - mean) / std
    if kernel is not None and noise_variance is not None:
        kernel = replace(kernel, noise_variance=noise_variance)
    if optimize:
        rng = np.random.default_rng(seed)
        kernel, lml, init_lml = _optimize(x, y, rng, noise_variance, kernel)
    else:
        kernel = kernel or RBFKernelParams.default(x.shape[1])
        if noise_variance is not None:
            kernel = replace(kernel, noise_variance=noise_variance)
        lml, _ = log_marginal_likelihood(x, y, kernel, with_grad=False)
        init_lml = lml
    return GPModel(kernel, x, y, lo, hi, mean, std,
                   log_likelihood=lml, initial_log_likelihood=init_lml)


class GPCoefficientSurrogate:
    """Grid of independent GPs, one per entry of a latent coefficient matrix."""

    def __init__(self, models, train_params):
        self.models = models
        self.train_params = np.asarray(train_params, dtype=np.float64)
        self.shape = (len(models), len(models[0]))
        self._pack()

    def __len__(self):
        return self.shape[0] * self.shape[1]

    def __getitem__(self, jk):
        j, k = jk
        return self.models[j][k]

    def flat_models(self):
        return [m for row in self.models for m in row]

    def _pack(self):
        # Stacked per-model arrays so every coefficient is predicted in one pass.
        flat = self.flat_models()
        first = flat[0]
        self.input_lo, self.input_hi = first.input_lo, first.input_hi
        self._x = first.train_inputs
        n = self._x.shape[0]
        self._degenerate = np.array([m.degenerate for m in flat])
        self._t_mean = np.array([m.target_mean for m in flat])
        self._t_std = np.array([m.target_std for m in flat])
        self._inv_ls2 = np.array([1.0 / np.asarray(m.kernel.lengthscales) ** 2 for m in flat])
        self._sf2 = np.array([m.kernel.signal_variance for m in flat])
        self._sn2 = np.array([m.kernel.noise_variance for m in flat])
        self._alpha = np.zeros((len(flat), n))
        self._kinv = np.zeros((len(flat), n, n))
        for i, m in enumerate(flat):
            if not m.degenerate:
                self._alpha[i] = m.alpha
                self._kinv[i] = solve_posdef(m.chol, np.eye(n))

    def predict(self, mu_star):
        """Predictive mean and std arrays of shape ``self.shape``."""
        xq = (np.asarray(mu_star, dtype=np.float64) - self.input_lo) / (self.input_hi - self.input_lo)
        if xq.shape != self.input_lo.shape:
            raise ShapeError(f"expected {self.input_lo.size} parameters, got shape {xq.shape}")
        d2 = (self._x - xq) ** 2
        ks = self._sf2[:, None] * np.exp(-0.5 * (self._inv_ls2 @ d2.T))
        mean = np.einsum("mn,mn->m", ks, self._alpha)
        var = self._sf2 + self._sn2 - np.einsum("mn,mnp,mp->m", ks, self._kinv, ks)
        std = np.sqrt(np.maximum(var, 0.0))
        mean = np.where(self._degenerate, self._t_mean, self._t_mean + self._t_std * mean)
        std = np.where(self._degenerate, 0.0, self._t_std * std)
        return mean.reshape(self.shape), std.reshape(self.shape)

    def predict_mean(self, mu_star):
        return self.predict(mu_star)[0]


def fit_all(xi, params, seed=0, noise_variance=None):
    """Independent GP for every coefficient ``xi[:, j, k]`` over ``params``."""
    xi = np.asarray(xi, dtype=np.float64)
    params = np.atleast_2d(np.asarray(params, dtype=np.float64))
    if xi.ndim != 3 or xi.shape[0] != params.shape[0]:
        raise ShapeError(f"coefficient tensor {xi.shape} does not match {params.shape[0]} parameter vectors")
    if len(np.unique(params, axis=0)) < 2:
        raise DegenerateDataError("need at least two distinct training parameters")
    bounds = normalization_bounds(params)
    models = []
    for j in range(xi.shape[1]):
        row = []
        for k in range(xi.shape[2]):
            try:
                row.append(fit(params, xi[:, j, k], seed=[seed, j, k],
                               noise_variance=noise_variance, bounds=bounds))
            except LatentROMError as exc:
                raise type(exc)(f"coefficient ({j}, {k}): {exc}") from exc
        models.append(row)
    return GPCoefficientSurrogate(models, params)
