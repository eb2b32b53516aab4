"""Joint autoencoder/latent-dynamics training with variance-driven acquisition.

One epoch is a full-batch Adam step on

    L = mse(U, decode(encode(U))) + sindy_weight * mean_i mse(dZ_i/dt, Z_i xi_i^T)

Every ``greedy_interval`` epochs (while the FOM budget lasts) the GPs are
refitted on the current coefficients, every unsampled test-grid point is
scored by the largest entry of its ROM variance field, and the FOM is run at
the highest-scoring point.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from . import fom, gp, rom
from .errors import AcquisitionError, ConfigError, DivergenceError, LatentROMError, StateError
from .nn import AdamState, adam_step, backward, forward, make_autoencoder
from .sindy import LatentTrajectory, SindyLibrary, batched_sindy_residual, least_squares_fit

log = logging.getLogger(__name__)


@dataclass
class TrainerConfig:
    max_epochs: int = 30000
    greedy_interval: int = 4000
    sindy_weight: float = 0.25
    learning_rate: float = 1e-4
    n_samples: int = 20
    fom_budget: int = 6
    seed: int = 0
    latent_dim: int = 3
    hidden: tuple = (32,)
    include_constant: bool = False
    gp_noise: float = None
    log_every: int = 1000

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        checks = [
            ("max_epochs", self.max_epochs >= 1, "must be >= 1"),
            ("greedy_interval", 1 <= self.greedy_interval <= self.max_epochs, "must lie in [1, max_epochs]"),
            ("sindy_weight", self.sindy_weight >= 0, "must be >= 0"),
            ("learning_rate", self.learning_rate >= 0, "must be >= 0"),
            ("n_samples", self.n_samples >= 1, "must be >= 1"),
            ("fom_budget", self.fom_budget >= 0, "must be >= 0"),
            ("latent_dim", self.latent_dim >= 1, "must be >= 1"),
        ]
        for name, ok, msg in checks:
            if not ok:
                raise ConfigError(f"{name} {msg}")

    @property
    def library(self):
        return SindyLibrary(self.latent_dim, self.include_constant)


@dataclass
class Acquisition:
    epoch: int
    mu: np.ndarray
    max_std: float
    grid_index: int


@dataclass
class TrainingState:
    config: TrainerConfig
    grid: fom.SpaceTimeGrid
    param_grid: fom.ParameterGrid
    ae: object
    dataset: list
    xi: list
    adam: AdamState
    epoch: int = 0
    loss_history: list = field(default_factory=list)
    acquisition_log: list = field(default_factory=list)
    surrogate: object = None
    _data: np.ndarray = field(default=None, repr=False)

    @property
    def params(self):
        return np.array([s.mu for s in self.dataset])

    @property
    def data(self):
        """All snapshots stacked into one (n_mu * (n_t+1)) x n_u matrix."""
        if self._data is None or self._data.shape[0] != len(self.dataset) * (self.grid.n_t + 1):
            self._data = np.concatenate([s.u for s in self.dataset], axis=0)
        return self._data

    def trainable(self):
        return self.ae.parameters() + self.xi

    def fit_surrogate(self):
        self.surrogate = gp.fit_all(np.stack(self.xi), self.params, seed=self.config.seed,
                                    noise_variance=self.config.gp_noise)
        return self.surrogate


@dataclass
class JointLoss:
    total: float
    ae: float
    sindy: float
    grads: list


def joint_loss(state):
    """Losses and exact gradients for every trainable array, in :meth:`TrainingState.trainable` order."""
    if not state.dataset:
        raise StateError("dataset is empty")
    with np.errstate(over="ignore", invalid="ignore"):
        # finiteness is checked once at the end instead of warning mid-way
        return _joint_loss(state)


def _joint_loss(state):
    cfg = state.config
    u = state.data
    n_mu, n_rows = len(state.dataset), state.grid.n_t + 1
    z, enc_tape = forward(state.ae.encoder, u)
    u_hat, dec_tape = forward(state.ae.decoder, z)
    diff = u_hat - u
    l_ae = float(np.mean(diff ** 2))
    dec_grads = backward(dec_tape, 2.0 * diff / diff.size)
    grad_z = dec_grads.inputs
    sindy = batched_sindy_residual(z.reshape(n_mu, n_rows, -1), np.stack(state.xi), state.grid.dt, cfg.library)
    beta = cfg.sindy_weight
    grad_z = grad_z + beta * sindy.grad_z.reshape(grad_z.shape)
    enc_grads = backward(enc_tape, grad_z)
    grads = enc_grads.parameters() + dec_grads.parameters() + list(beta * sindy.grad_xi)
    total = l_ae + beta * sindy.loss
    if not np.isfinite(total) or not all(np.all(np.isfinite(g)) for g in grads):
        raise DivergenceError(f"non-finite loss at epoch {state.epoch}", epoch=state.epoch)
    return JointLoss(total, l_ae, sindy.loss, grads)


def train_epoch(state):
    loss = joint_loss(state)
    adam_step(state.trainable(), loss.grads, state.adam)
    state.epoch += 1
    state.loss_history.append((loss.ae, loss.sindy, loss.total))
    return state


def fit_new_slice(state, snapshot):
    z = state.ae.encode(snapshot.u)
    return least_squares_fit(LatentTrajectory(z, state.grid.dt), state.config.library)


def add_snapshot(state, snapshot):
    """Append a FOM run, warm-start its coefficients, give them fresh Adam moments."""
    xi_new = fit_new_slice(state, snapshot)
    state.dataset.append(snapshot)
    state.xi.append(xi_new)
    if state.adam.first_moment:
        state.adam.extend([xi_new])
    state.param_grid.mark_sampled(snapshot.mu)
    state._data = None


def select_max_variance(variance_fields):
    """Position of the field with the largest entry; ties go to the first."""
    scores = np.array([np.max(v) for v in variance_fields])
    return int(np.argmax(scores))


def candidate_scores(state, indices):
    """Max ROM variance over (t, x) at each candidate grid index."""
    cfg = state.config
    points = state.param_grid.points
    scores = np.empty(len(indices))
    for pos, idx in enumerate(indices):
        try:
            pred = rom.predict(state.ae, state.surrogate, points[idx], state.grid, cfg.n_samples,
                               seed=[cfg.seed, state.epoch, int(idx)], library=cfg.library)
            scores[pos] = np.max(pred.variance)
        except DivergenceError:
            # An ensemble that cannot even be integrated is maximally uncertain.
            scores[pos] = np.inf
    return scores


def greedy_acquire(state, solver):
    """Refit GPs, score every unsampled grid point, run the FOM at the best one."""
    cfg = state.config
    if len(state.acquisition_log) >= cfg.fom_budget:
        log.info("FOM budget of %d exhausted; skipping acquisition", cfg.fom_budget)
        return state
    candidates = state.param_grid.unsampled_indices()
    if candidates.size == 0:
        raise StateError("every test-grid point is already sampled")
    state.fit_surrogate()
    scores = candidate_scores(state, candidates)
    best = int(np.argmax(scores))
    idx = int(candidates[best])
    mu = state.param_grid.points[idx]
    try:
        snapshot = solver(mu)
    except LatentROMError as exc:
        raise AcquisitionError(f"FOM failed at mu={mu.tolist()}: {exc}") from exc
    add_snapshot(state, snapshot)
    max_std = float(np.sqrt(scores[best]))
    state.acquisition_log.append(Acquisition(state.epoch, mu.copy(), max_std, idx))
    log.info("epoch %d: acquired mu=%s (grid index %d, max std %.3e)", state.epoch, mu.tolist(), idx, max_std)
    return state


def initial_state(config, initial_params, param_grid, grid, solver):
    snapshots = [solver(np.asarray(mu, dtype=np.float64)) for mu in initial_params]
    if not snapshots:
        raise ConfigError("initial_params must not be empty")
    ae = make_autoencoder(grid.n_u, config.hidden, config.latent_dim, config.seed)
    state = TrainingState(config, grid, param_grid, ae, [], [], AdamState(lr=config.learning_rate))
    for snap in snapshots:
        add_snapshot(state, snap)
    return state


def default_solver(grid, viscosity):
    return lambda mu: fom.solve_timed(mu, grid, viscosity)


def run(config, param_grid, grid, initial_params=None, solver=None, viscosity=0.02, state=None):
    """Train to ``config.max_epochs`` with scheduled acquisitions.

    Defaults: initial data at the parameter-grid corners, FOM = Burgers.  On
    divergence the exception carries the last good state as ``exc.state``.
    """
    solver = solver or default_solver(grid, viscosity)
    if state is None:
        if initial_params is None:
            initial_params = param_grid.corners()
        state = initial_state(config, initial_params, param_grid, grid, solver)
    try:
        while state.epoch < config.max_epochs:
            train_epoch(state)
            if config.log_every and state.epoch % config.log_every == 0:
                l_ae, l_s, total = state.loss_history[-1]
                log.info("epoch %d: total %.4e ae %.4e sindy %.4e", state.epoch, total, l_ae, l_s)
            if (state.epoch % config.greedy_interval == 0 and state.epoch < config.max_epochs
                    and len(state.acquisition_log) < config.fom_budget):
                greedy_acquire(state, solver)
        state.fit_surrogate()
    except LatentROMError as exc:
        exc.state = state
        raise
    return state
