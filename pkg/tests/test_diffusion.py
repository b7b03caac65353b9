"""Forward diffusion, Gaussian reverse steps, step grids, and both samplers."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ddro import numerics as nm
from ddro.diffusion import (StepGrid, ancestral_sample, forward_diffuse,
                            gaussian_kl_isotropic, perturbed_grid,
                            posterior_params, reverse_mean_from_eps,
                            reverse_step_params, solver_sample_to,
                            solver_sample_x0)
from ddro.schedule import build_schedule

from conftest import ancestral_chain_moments, make_linear_gaussian_denoiser


def test_forward_diffuse_hand_computed():
    # Single-step schedule with beta = 0.75 gives alpha_bar(1) = 0.25.
    s = build_schedule(1, 0.75, 0.75)
    x_t = forward_diffuse(s, np.array([1.0, 0.0]), 1, np.array([0.0, 1.0]))
    np.testing.assert_allclose(x_t, [0.5, np.sqrt(0.75)], atol=1e-12)
    assert x_t[1] == pytest.approx(0.8660, abs=5e-5)


def test_forward_diffuse_limits(tiny_schedule):
    x0 = np.array([0.7, -0.3])
    eps = np.array([1.0, 2.0])
    # Early timestep keeps x_t close to a scaled x0; exact formula holds.
    for t in range(1, tiny_schedule.T + 1):
        ab = tiny_schedule.alpha_bar(t)
        np.testing.assert_allclose(forward_diffuse(tiny_schedule, x0, t, eps),
                                   np.sqrt(ab) * x0 + np.sqrt(1 - ab) * eps)
    with pytest.raises(ValueError):
        forward_diffuse(tiny_schedule, x0, 0, eps)


def test_posterior_params_closed_form(tiny_schedule):
    s = tiny_schedule
    x0 = np.array([1.0, -2.0])
    for t in range(2, s.T + 1):
        x_t = forward_diffuse(s, x0, t, np.zeros(2))
        mean, var = posterior_params(s, x0, x_t, t)
        # Independent evaluation of the standard posterior coefficients.
        ab, abp, b = s.alpha_bar(t), s.alpha_bar_prev(t), s.beta(t)
        coef0 = np.sqrt(abp) * b / (1 - ab)
        coeft = np.sqrt(1 - b) * (1 - abp) / (1 - ab)
        np.testing.assert_allclose(mean, coef0 * x0 + coeft * x_t, rtol=1e-12)
        assert var == pytest.approx(b * (1 - abp) / (1 - ab))


def test_posterior_zero_inputs_and_range(tiny_schedule):
    mean, _ = posterior_params(tiny_schedule, np.zeros(2), np.zeros(2), 3)
    np.testing.assert_array_equal(mean, [0.0, 0.0])
    with pytest.raises(ValueError):
        posterior_params(tiny_schedule, np.zeros(2), np.zeros(2), 1)


def test_reverse_mean_zero_prediction(tiny_schedule):
    x_t = np.array([2.0, -1.0])
    t = 3
    np.testing.assert_allclose(
        reverse_mean_from_eps(tiny_schedule, x_t, np.zeros(2), t),
        x_t / np.sqrt(tiny_schedule.alpha(t)))


def test_reverse_mean_difference_identity(tiny_schedule):
    """mu_a - mu_b = -(beta / (sqrt(alpha) sqrt(1-ab))) (eps_a - eps_b)."""
    s = tiny_schedule
    rng = nm.make_rng(2)
    for _ in range(20):
        t = int(rng.integers(1, s.T + 1))
        x_t = rng.standard_normal(2)
        ea, eb = rng.standard_normal(2), rng.standard_normal(2)
        mu_a = reverse_mean_from_eps(s, x_t, ea, t)
        mu_b = reverse_mean_from_eps(s, x_t, eb, t)
        coef = s.beta(t) / (np.sqrt(s.alpha(t)) * np.sqrt(1 - s.alpha_bar(t)))
        np.testing.assert_allclose(mu_a - mu_b, -coef * (ea - eb), rtol=1e-10)


def test_reverse_step_params_functional(tiny_schedule, tiny_models):
    phi, _, _ = tiny_models
    x_t = np.array([0.4, 0.1])
    mean1, var1 = reverse_step_params(tiny_schedule, phi, x_t, 0, 2)
    mean2, var2 = reverse_step_params(tiny_schedule, phi.copy(), x_t, 0, 2)
    np.testing.assert_array_equal(mean1, mean2)
    assert var1 == var2 == tiny_schedule.sigma2(2)


def test_gaussian_kl_isotropic():
    assert gaussian_kl_isotropic([1.0, 2.0], [1.0, 2.0], 0.3) == 0.0
    assert gaussian_kl_isotropic([1.0, 0.0], [0.0, 0.0], 0.5) == pytest.approx(1.0)
    a, b = np.array([0.2, -0.4]), np.array([1.0, 0.3])
    assert gaussian_kl_isotropic(a, b, 0.7) == gaussian_kl_isotropic(b, a, 0.7)
    with pytest.raises(ValueError):
        gaussian_kl_isotropic(a, b, 0.0)


def test_forward_posterior_marginal_consistency():
    """Drawing x_t ~ q(.|x0) then x_{t-1} ~ posterior recovers q(x_{t-1}|x0)."""
    s = build_schedule(8, 0.05, 0.35)
    x0 = np.array([1.5, -0.5])
    t = 5
    rng = nm.make_rng(12)
    n = 10_000
    eps = rng.standard_normal((n, 2))
    x_t = np.sqrt(s.alpha_bar(t)) * x0 + np.sqrt(1 - s.alpha_bar(t)) * eps
    means, var = posterior_params(s, x0, x_t, t)
    draws = means + np.sqrt(var) * rng.standard_normal((n, 2))
    abp = s.alpha_bar_prev(t)
    target_mean = np.sqrt(abp) * x0
    target_var = 1 - abp
    se_mean = np.sqrt(target_var / n)
    assert np.all(np.abs(draws.mean(axis=0) - target_mean) < 3 * se_mean)
    se_var = target_var * np.sqrt(2.0 / n)
    assert np.all(np.abs(draws.var(axis=0) - target_var) < 4 * se_var)


def test_step_grid_validation():
    with pytest.raises(ValueError):
        StepGrid(())
    with pytest.raises(ValueError):
        StepGrid((5, 5, 1))
    g = StepGrid((6, 3, 1))
    assert g.with_knot(3) is g
    assert g.with_knot(4).knots == (6, 4, 3, 1)


def test_perturbed_grid_trivial_cases():
    assert perturbed_grid(10, 1, 0).knots == (10,)
    assert perturbed_grid(10, 10, 123).knots == tuple(range(10, 0, -1))
    with pytest.raises(ValueError):
        perturbed_grid(10, 11, 0)
    with pytest.raises(ValueError):
        perturbed_grid(10, 0, 0)


def test_perturbed_grid_properties_over_seeds():
    for seed in range(100):
        g = perturbed_grid(50, 20, seed)
        k = np.array(g.knots)
        assert k[0] == 50
        assert np.all(np.diff(k) < 0)
        assert k.min() >= 1 and k.max() <= 50
        assert len(k) == 20
    # Jittered: at least some seeds deviate from the uniform grid.
    uniform = perturbed_grid(50, 20, 0).knots
    assert any(perturbed_grid(50, 20, s).knots != uniform for s in range(1, 20))


def test_ancestral_sample_deterministic(tiny_schedule, tiny_models):
    phi, _, _ = tiny_models
    a = ancestral_sample(tiny_schedule, phi, 0, 1.0, 77)
    b = ancestral_sample(tiny_schedule, phi, 0, 1.0, 77)
    np.testing.assert_array_equal(a, b)
    c = ancestral_sample(tiny_schedule, phi, 0, 1.0, 78)
    assert not np.array_equal(a, c)


def test_solver_target_T_returns_seeded_gaussian(tiny_schedule, tiny_models):
    phi, _, _ = tiny_models
    grid = perturbed_grid(tiny_schedule.T, 4, 5)
    x = solver_sample_to(tiny_schedule, phi, 0, grid, tiny_schedule.T, 99)
    np.testing.assert_array_equal(x, nm.make_rng(99).standard_normal(2))


def test_solver_deterministic(tiny_schedule, tiny_models):
    phi, _, _ = tiny_models
    grid = perturbed_grid(tiny_schedule.T, 4, 5)
    a = solver_sample_to(tiny_schedule, phi, 0, grid, 2, 31)
    b = solver_sample_to(tiny_schedule, phi, 0, grid, 2, 31)
    np.testing.assert_array_equal(a, b)


def test_solver_inserts_target_knot(tiny_schedule, tiny_models):
    phi, _, _ = tiny_models
    grid = StepGrid((tiny_schedule.T, 1))
    x = solver_sample_to(tiny_schedule, phi, 0, grid, 3, 11)
    assert np.all(np.isfinite(x))
    with pytest.raises(ValueError):
        solver_sample_to(tiny_schedule, phi, 0, grid, 0, 11)


def test_solver_matches_exact_probability_flow():
    """Dense-grid multistep solver vs the closed-form flow map of the
    linear-Gaussian denoiser with unit target variance.

    With target variance 1 every marginal is N(sqrt(ab) mu, I), so the exact
    deterministic transport is the translation x1 = a1 mu + (xT - aT mu).
    The second-order solver must land near it and beat the first-order
    single-history recursion x' = (a'/a) x - ((a'/a) s - s') eps.
    """
    s = build_schedule(50, 0.002, 0.4)
    mu, var0 = np.array([1.0, -2.0]), 1.0
    eps_star = make_linear_gaussian_denoiser(s, mu, var0)
    grid = StepGrid(tuple(range(50, 0, -1)))
    a1, aT = np.sqrt(s.alpha_bar(1)), np.sqrt(s.alpha_bar(50))
    rng = nm.make_rng(8)
    for _ in range(5):
        seed = nm.spawn_seed(rng)
        x_t_start = nm.make_rng(seed).standard_normal(2)
        exact = a1 * mu + (x_t_start - aT * mu)
        x_solver = solver_sample_to(s, eps_star, 0, grid, 1, seed)
        x = x_t_start.copy()
        for t in range(50, 1, -1):
            a_c, a_n = np.sqrt(s.alpha_bar(t)), np.sqrt(s.alpha_bar(t - 1))
            s_c, s_n = np.sqrt(1 - s.alpha_bar(t)), np.sqrt(1 - s.alpha_bar(t - 1))
            x = (a_n / a_c) * x - ((a_n / a_c) * s_c - s_n) * eps_star(x, 0, t)
        err_solver = float(np.max(np.abs(x_solver - exact)))
        err_first_order = float(np.max(np.abs(x - exact)))
        assert err_solver < 2e-2
        assert err_solver < err_first_order


def test_solver_sample_x0_finite(tiny_schedule, tiny_models):
    phi, _, _ = tiny_models
    grid = perturbed_grid(tiny_schedule.T, 4, 3)
    x0 = solver_sample_x0(tiny_schedule, phi, 0, grid, 21)
    assert x0.shape == (2,) and np.all(np.isfinite(x0))


def test_chain_moments_helper_matches_simulation():
    """The exact affine-propagation helper agrees with brute-force sampling."""
    s = build_schedule(20, 0.01, 0.3)
    mu, var0 = np.array([0.5, 0.5]), 1.0
    eps_star = make_linear_gaussian_denoiser(s, mu, var0)
    m_exact, v_exact = ancestral_chain_moments(s, mu, var0)
    rng = nm.make_rng(17)
    draws = np.array([ancestral_sample(s, eps_star, 0, 1.0, nm.spawn_seed(rng))
                      for _ in range(4000)])
    se = np.sqrt(v_exact / 4000)
    assert np.all(np.abs(draws.mean(axis=0) - m_exact) < 4 * se)
    assert np.all(np.abs(draws.var(axis=0) - v_exact) < 0.05 * v_exact + 4 * v_exact * np.sqrt(2 / 4000))


@given(st.integers(2, 40), st.integers(1, 40), st.integers(0, 10_000))
@settings(max_examples=60, deadline=None)
def test_perturbed_grid_property(T, n_steps, seed):
    if n_steps > T:
        n_steps = T
    g = perturbed_grid(T, n_steps, seed)
    k = np.array(g.knots)
    assert k[0] == T
    assert np.all(np.diff(k) < 0)
    assert k.min() >= 1 and k.max() <= T
