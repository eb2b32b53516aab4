import numpy as np
import pytest

from latent_rom import fom, gp, rom
from latent_rom.errors import DivergenceError, ShapeError, StateError, UndefinedMetricError
from latent_rom.nn import forward, make_autoencoder
from latent_rom.sindy import SindyLibrary

GRID = fom.SpaceTimeGrid(n_u=16, n_t=40, t_max=0.2)
CORNERS = np.array([[0.7, 0.9], [0.7, 1.1], [0.9, 0.9], [0.9, 1.1]])


@pytest.fixture(scope="module")
def surrogate():
    r = np.random.default_rng(3)
    xi = np.stack([-0.5 * np.eye(2) + 0.05 * r.standard_normal((2, 2)) for _ in range(4)])
    xi[:, 1, 0] = 0.1  # constant across parameters -> degenerate model
    return gp.fit_all(xi, CORNERS, seed=0)


@pytest.fixture(scope="module")
def ae():
    return make_autoencoder(GRID.n_u, [8], 2, seed=0)


def test_single_sample_is_the_mean(surrogate):
    xs = rom.sample_coefficients(surrogate, [0.8, 1.0], 1)
    mean, _ = surrogate.predict([0.8, 1.0])
    assert xs.shape == (1, 2, 2)
    assert np.array_equal(xs[0], mean)


def test_degenerate_coefficient_is_constant_across_samples(surrogate):
    xs = rom.sample_coefficients(surrogate, [0.8, 1.0], 50, seed=1)
    assert np.all(xs[:, 1, 0] == 0.1)
    assert np.std(xs[:, 0, 0]) > 0


def test_sample_mean_converges(surrogate):
    n = 10_000
    xs = rom.sample_coefficients(surrogate, [0.75, 1.02], n, seed=2)
    mean, std = surrogate.predict([0.75, 1.02])
    assert np.all(np.abs(xs.mean(axis=0) - mean) <= 4 * std / np.sqrt(n) + 1e-12)


def test_sampling_needs_surrogate():
    with pytest.raises(StateError):
        rom.sample_coefficients(None, [0.8, 1.0], 3)


@pytest.mark.parametrize("method", ["loop", "auto"])
def test_integrate_zero_coefficients(method):
    z = rom.integrate_latent(np.zeros((3, 3)), [1.0, -2.0, 0.5], 10, 0.1, method=method)
    assert z.shape == (11, 3)
    assert np.all(z == z[0])


@pytest.mark.parametrize("method", ["loop", "auto"])
def test_integrate_decay_closed_form(method):
    z = rom.integrate_latent(np.array([[-1.0]]), [1.0], 20, 0.1, method=method)
    assert z[1, 0] == pytest.approx(0.9, rel=1e-15)
    np.testing.assert_allclose(z[:, 0], 0.9 ** np.arange(21), rtol=1e-13)


@pytest.mark.parametrize("method", ["loop", "auto"])
def test_integrate_rotation_growth(method):
    dt = 0.05
    z = rom.integrate_latent(np.array([[0.0, -1.0], [1.0, 0.0]]), [1.0, 0.0], 100, dt, method=method)
    radius = np.linalg.norm(z, axis=1)
    np.testing.assert_allclose(radius, np.sqrt(1 + dt ** 2) ** np.arange(101), rtol=1e-12)


def test_fast_path_matches_loop(rng):
    lib = SindyLibrary(3, include_constant=True)
    xi = rng.standard_normal((3, 4))
    z0 = rng.standard_normal(3)
    a = rom.integrate_latent(xi, z0, 200, 0.005, lib, method="loop")
    b = rom.integrate_latent(xi, z0, 200, 0.005, lib, method="auto")
    np.testing.assert_allclose(b, a, rtol=1e-11, atol=1e-12)


@pytest.mark.parametrize("method", ["loop", "auto"])
def test_integrate_divergence_reports_step(method):
    with pytest.raises(DivergenceError) as info:
        rom.integrate_latent(np.array([[1e6]]), [1.0], 400, 1.0, method=method)
    assert info.value.step is not None and 0 < info.value.step <= 400


def test_integrate_shape_errors():
    with pytest.raises(ShapeError):
        rom.integrate_latent(np.zeros((2, 2)), [1.0, 2.0, 3.0], 5, 0.1)


def test_euler_first_order():
    def endpoint_error(n):
        z = rom.integrate_latent(np.array([[-1.0]]), [1.0], n, 1.0 / n)
        return abs(z[-1, 0] - np.exp(-1.0))
    ratio = endpoint_error(100) / endpoint_error(200)
    assert 1.8 <= ratio <= 2.2


def test_encode_initial_condition(ae):
    u0 = fom.initial_condition([0.8, 1.0], GRID)
    z0 = rom.encode_initial_condition(ae, u0)
    assert z0.shape == (2,)
    assert np.array_equal(z0, rom.encode_initial_condition(ae, u0))
    assert np.array_equal(z0, forward(ae.encoder, u0[None])[0][0])
    with pytest.raises(ShapeError):
        rom.encode_initial_condition(ae, np.ones(5))


def test_predict_single_sample_has_zero_variance(ae, surrogate):
    p = rom.predict(ae, surrogate, [0.8, 1.0], GRID, n_samples=1)
    assert p.mean.shape == (GRID.n_t + 1, GRID.n_u)
    assert np.all(p.variance == 0.0) and p.max_std == 0.0


def test_predict_identical_samples(ae):
    xi = np.stack([-0.3 * np.eye(2)] * 4)
    sur = gp.fit_all(xi, CORNERS)
    p = rom.predict(ae, sur, [0.8, 1.0], GRID, n_samples=5, seed=0)
    z0 = ae.encode(fom.initial_condition([0.8, 1.0], GRID))
    single = ae.decode(rom.integrate_latent(-0.3 * np.eye(2), z0, GRID.n_t, GRID.dt))
    assert np.all(p.variance == 0.0)
    np.testing.assert_allclose(p.mean, single, rtol=1e-13, atol=1e-15)


def test_predict_statistics_match_two_pass(ae, surrogate):
    mu = [0.78, 0.95]
    p = rom.predict(ae, surrogate, mu, GRID, n_samples=20, seed=5)
    samples = rom.sample_latent(ae, surrogate, mu, GRID, 20, seed=5)
    fields = [ae.decode(z) for z in samples.latent_samples]
    mean = sum(fields) / len(fields)
    var = sum((f - mean) ** 2 for f in fields) / (len(fields) - 1)
    np.testing.assert_allclose(p.mean, mean, rtol=1e-12, atol=1e-14)
    np.testing.assert_allclose(p.variance, var, rtol=1e-12, atol=1e-14)
    assert np.all(p.variance >= 0)
    assert p.max_std == pytest.approx(np.sqrt(p.variance.max()))


def test_predict_deterministic(ae, surrogate):
    a = rom.predict(ae, surrogate, [0.82, 1.01], GRID, 20, seed=9)
    b = rom.predict(ae, surrogate, [0.82, 1.01], GRID, 20, seed=9)
    assert np.array_equal(a.mean, b.mean) and np.array_equal(a.variance, b.variance)


def _fixed_draws(values):
    def fake(surrogate, mu_star, n_samples, seed=0):
        return np.asarray(values, dtype=np.float64).reshape(-1, 1, 1)[:n_samples]
    return fake


def test_diverged_samples_are_excluded(monkeypatch):
    grid = fom.SpaceTimeGrid(n_u=4, n_t=200, t_max=1.0)
    ae = make_autoencoder(4, [3], 1, seed=0)
    draws = [-1.0, 1e6, -0.5, 1e6, -2.0]
    monkeypatch.setattr(rom, "sample_coefficients", _fixed_draws(draws))
    p = rom.predict(ae, None, [0.8, 1.0], grid, n_samples=5, seed=0)
    assert p.diverged == [1, 3]
    assert p.n_samples == 3
    z0 = ae.encode(fom.initial_condition([0.8, 1.0], grid))
    fields = [ae.decode(rom.integrate_latent(np.array([[c]]), z0, grid.n_t, grid.dt)) for c in (-1.0, -0.5, -2.0)]
    np.testing.assert_allclose(p.mean, np.mean(fields, axis=0), rtol=1e-12)
    np.testing.assert_allclose(p.variance, np.var(fields, axis=0, ddof=1), rtol=1e-10, atol=1e-15)


def test_all_diverged_is_an_error(monkeypatch):
    grid = fom.SpaceTimeGrid(n_u=4, n_t=200, t_max=1.0)
    ae = make_autoencoder(4, [3], 1, seed=0)
    monkeypatch.setattr(rom, "sample_coefficients", _fixed_draws([1e6, 1e6, -1.0]))
    with pytest.raises(DivergenceError):
        rom.predict(ae, None, [0.8, 1.0], grid, n_samples=3, seed=0)


def test_max_relative_error_cases(rng):
    u = rng.standard_normal((5, 7))
    assert rom.max_relative_error(u, u) == 0.0
    assert rom.max_relative_error(u, 1.1 * u) == pytest.approx(0.1, abs=1e-12)
    true = np.array([[3.0, 4.0], [0.0, 1.0]])
    pred = np.array([[3.0, 4.0], [0.0, 0.5]])
    assert rom.max_relative_error(true, pred) == pytest.approx(0.5, abs=1e-15)


def test_max_relative_error_scale_invariant(rng):
    u, v = rng.standard_normal((4, 6)), rng.standard_normal((4, 6))
    assert rom.max_relative_error(2.0 * u, 2.0 * v) == rom.max_relative_error(u, v)


def test_max_relative_error_errors():
    with pytest.raises(UndefinedMetricError):
        rom.max_relative_error(np.zeros((2, 2)), np.ones((2, 2)))
    with pytest.raises(ShapeError):
        rom.max_relative_error(np.ones((2, 2)), np.ones((2, 3)))
