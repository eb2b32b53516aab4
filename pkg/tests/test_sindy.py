import numpy as np
import pytest
from scipy.linalg import expm

from latent_rom.errors import ShapeError, SingularityError
from latent_rom.sindy import (LatentTrajectory, SindyLibrary, batched_sindy_residual, build_library,
                              derivative_adjoint, estimate_time_derivative, least_squares_fit,
                              sindy_residual)


def decay_traj(dt=0.01, t_max=2.0):
    t = np.arange(0, t_max + dt / 2, dt)
    return LatentTrajectory(np.column_stack([np.exp(-t), np.exp(-2 * t)]), dt)


def test_derivative_of_constant():
    z = np.full((10, 2), 3.5)
    assert np.all(estimate_time_derivative(z, 0.1) == 0.0)


def test_derivative_of_ramp_exact():
    dt = 0.1
    z = (np.arange(12) * dt)[:, None]
    np.testing.assert_allclose(estimate_time_derivative(z, dt), 1.0, atol=1e-12, rtol=0)


def test_derivative_of_quadratic():
    dt = 0.05
    t = np.arange(30) * dt
    d = estimate_time_derivative((t ** 2)[:, None], dt)[:, 0]
    np.testing.assert_allclose(d, 2 * t, atol=1e-12)
    # three-point one-sided stencils are exact on quadratics too
    assert abs(d[0] - 0.0) < 1e-12 and abs(d[-1] - 2 * t[-1]) < 1e-12


def test_derivative_endpoint_order():
    # on a cubic the one-sided error is dt^2 * z''' / 3 = 2 dt^2
    for dt in (0.02, 0.01):
        t = np.arange(0, 1 + dt / 2, dt)
        d = estimate_time_derivative((t ** 3)[:, None], dt)[:, 0]
        assert abs(d[0] - 0.0) == pytest.approx(2 * dt ** 2, rel=1e-6)
        assert abs(d[5] - 3 * t[5] ** 2) == pytest.approx(dt ** 2, rel=1e-6)


def test_derivative_matches_numpy_gradient(rng):
    z = rng.standard_normal((17, 3))
    np.testing.assert_allclose(estimate_time_derivative(z, 0.3), np.gradient(z, 0.3, axis=0, edge_order=2),
                               rtol=1e-13, atol=1e-13)


def test_derivative_needs_three_rows():
    with pytest.raises(ShapeError):
        estimate_time_derivative(np.zeros((2, 1)), 0.1)


def test_adjoint_identity(rng):
    z, g = rng.standard_normal((9, 2)), rng.standard_normal((9, 2))
    lhs = np.sum(estimate_time_derivative(z, 0.2) * g)
    rhs = np.sum(z * derivative_adjoint(g, 0.2))
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_build_library():
    np.testing.assert_array_equal(build_library([1.5, -2.0]), [1.5, -2.0])
    np.testing.assert_array_equal(build_library([1.5, -2.0], include_constant=True), [1.0, 1.5, -2.0])
    np.testing.assert_array_equal(build_library(np.zeros(3), include_constant=True), [1.0, 0, 0, 0])
    lib = SindyLibrary(3, include_constant=True)
    assert lib.n_terms == 4 and lib.descriptors == ["1", "z0", "z1", "z2"]
    assert SindyLibrary(3).n_terms == 3


def test_residual_small_on_exact_linear_system():
    a = np.array([[-0.5, 1.0], [-1.0, -0.3]])
    dt = 0.01
    step = expm(a * dt)
    z = np.empty((201, 2))
    z[0] = [1.0, 0.5]
    for n in range(200):
        z[n + 1] = step @ z[n]
    assert sindy_residual(LatentTrajectory(z, dt), a).loss < 1e-6


def test_residual_zero_for_constant():
    traj = LatentTrajectory(np.full((8, 2), 0.7), 0.1)
    assert sindy_residual(traj, np.zeros((2, 2))).loss == 0.0


def test_residual_shape_error():
    with pytest.raises(ShapeError):
        sindy_residual(LatentTrajectory(np.zeros((5, 2)), 0.1), np.zeros((2, 3)))


@pytest.mark.parametrize("const", [False, True])
def test_residual_gradients_match_fd(rng, const):
    lib = SindyLibrary(2, const)
    z = rng.standard_normal((9, 2))
    xi = rng.standard_normal((2, lib.n_terms))
    res = sindy_residual(LatentTrajectory(z, 0.1), xi, lib)
    h = 1e-6

    def loss(zz, xx):
        return sindy_residual(LatentTrajectory(zz, 0.1), xx, lib).loss

    for arr, grad, other in ((xi, res.grad_xi, "xi"), (z, res.grad_z, "z")):
        for idx in np.ndindex(arr.shape):
            p, m = arr.copy(), arr.copy()
            p[idx] += h
            m[idx] -= h
            fd = (loss(z, p) - loss(z, m)) / (2 * h) if other == "xi" else (loss(p, xi) - loss(m, xi)) / (2 * h)
            assert abs(fd - grad[idx]) <= 1e-5 * max(abs(grad[idx]), 1e-8) + 1e-9


def test_batched_matches_per_trajectory(rng):
    lib = SindyLibrary(3, True)
    z = rng.standard_normal((4, 11, 3))
    xi = rng.standard_normal((4, 3, 4))
    batched = batched_sindy_residual(z, xi, 0.05, lib)
    singles = [sindy_residual(LatentTrajectory(z[i], 0.05), xi[i], lib) for i in range(4)]
    assert batched.loss == pytest.approx(np.mean([s.loss for s in singles]), rel=1e-13)
    for i, s in enumerate(singles):
        np.testing.assert_allclose(4 * batched.grad_xi[i], s.grad_xi, rtol=1e-12, atol=1e-14)
        np.testing.assert_allclose(4 * batched.grad_z[i], s.grad_z, rtol=1e-12, atol=1e-14)


def test_least_squares_recovers_decay_rates():
    xi = least_squares_fit(decay_traj())
    np.testing.assert_allclose(xi, np.diag([-1.0, -2.0]), atol=1e-3)


def test_least_squares_constant_trajectory_with_constant_term():
    traj = LatentTrajectory(np.full((20, 2), 0.4), 0.1)
    xi = least_squares_fit(traj, SindyLibrary(2, include_constant=True))
    np.testing.assert_allclose(xi, 0.0, atol=1e-10)


def test_least_squares_zero_scale_is_singular():
    with pytest.raises(SingularityError):
        least_squares_fit(LatentTrajectory(np.zeros((10, 2)), 0.1))


def test_least_squares_too_few_samples():
    with pytest.raises(SingularityError):
        least_squares_fit(LatentTrajectory(np.ones((3, 4)), 0.1), SindyLibrary(4, True))


def test_least_squares_local_optimality(rng):
    traj = LatentTrajectory(rng.standard_normal((40, 3)).cumsum(axis=0) * 0.1, 0.05)
    xi = least_squares_fit(traj)
    best = sindy_residual(traj, xi).loss
    for scale in (1e-3, 1e-1):
        for _ in range(100):
            assert best <= sindy_residual(traj, xi + scale * rng.standard_normal(xi.shape)).loss
