"""Forward diffusion, Gaussian reverse steps, and the two samplers.

The ancestral sampler runs the full reverse chain with Gaussian noise at
every step except the last. The deterministic multistep solver integrates
the probability-flow update with a second-order multistep rule in half
log-SNR time (first step first-order); it is used for online policy
sampling and never applies guidance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nm
from .denoiser import DenoiserParams, predict_eps, predict_eps_cfg
from .schedule import NoiseSchedule


def _eps_fn(model):
    """Accept a DenoiserParams record or any callable (x, c, t) -> eps."""
    if callable(model):
        return model
    return lambda x, c, t: np.asarray(nm.value_of(predict_eps(model, x, c, t)), dtype=float)


def forward_diffuse(s: NoiseSchedule, x0, t: int, eps) -> np.ndarray:
    """x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps."""
    ab = s.alpha_bar(t)
    return np.sqrt(ab) * np.asarray(x0, dtype=float) + np.sqrt(1.0 - ab) * np.asarray(eps, dtype=float)


def posterior_params(s: NoiseSchedule, x0, x_t, t: int):
    """Mean and variance of q(x_{t-1} | x_t, x_0) for t >= 2."""
    if t < 2:
        raise ValueError("posterior is defined for t >= 2; t = 1 targets x0 directly")
    s._check_t(t)
    ab_t = s.alpha_bar(t)
    ab_prev = s.alpha_bar_prev(t)
    beta_t = s.beta(t)
    alpha_t = s.alpha(t)
    coef_x0 = np.sqrt(ab_prev) * beta_t / (1.0 - ab_t)
    coef_xt = np.sqrt(alpha_t) * (1.0 - ab_prev) / (1.0 - ab_t)
    mean = coef_x0 * np.asarray(x0, dtype=float) + coef_xt * np.asarray(x_t, dtype=float)
    var = beta_t * (1.0 - ab_prev) / (1.0 - ab_t)
    return mean, var


def reverse_mean_from_eps(s: NoiseSchedule, x_t, eps_hat, t: int) -> np.ndarray:
    """(1/sqrt(alpha_t)) (x_t - beta_t / sqrt(1 - alpha_bar_t) eps_hat)."""
    return (np.asarray(x_t, dtype=float)
            - s.beta(t) / np.sqrt(1.0 - s.alpha_bar(t)) * np.asarray(eps_hat, dtype=float)) / np.sqrt(s.alpha(t))


def reverse_step_params(s: NoiseSchedule, p, x_t, c, t: int):
    """Mean and variance of the learned reverse step p(x_{t-1} | x_t, c)."""
    eps_hat = _eps_fn(p)(np.asarray(x_t, dtype=float), c, t)
    return reverse_mean_from_eps(s, x_t, eps_hat, t), s.sigma2(t)


def gaussian_kl_isotropic(mu1, mu2, var: float) -> float:
    """KL between equal-covariance isotropic Gaussians: ||mu1-mu2||^2 / (2 var)."""
    if var <= 0:
        raise ValueError("variance must be positive")
    d = np.asarray(mu1, dtype=float) - np.asarray(mu2, dtype=float)
    return float(np.dot(d, d)) / (2.0 * var)


def ancestral_sample(s: NoiseSchedule, p, c, w: float, seed: int) -> np.ndarray:
    """Full reverse chain from x_T ~ N(0, I) down to x_0.

    Adds sqrt(var) noise for t >= 2 and none at t = 1. Uses guided
    prediction when w != 1 (c must then be a real condition).
    """
    rng = nm.make_rng(seed)
    dim = p.arch.data_dim if isinstance(p, DenoiserParams) else 2
    x = rng.standard_normal(dim)
    use_cfg = (w != 1.0) and (c is not None)
    for t in range(s.T, 0, -1):
        if use_cfg:
            eps_hat = np.asarray(nm.value_of(predict_eps_cfg(p, x, c, t, w)), dtype=float)
        else:
            eps_hat = _eps_fn(p)(x, c, t)
        x = reverse_mean_from_eps(s, x, eps_hat, t)
        if t >= 2:
            x = x + np.sqrt(s.sigma2(t)) * rng.standard_normal(dim)
    return x


@dataclass(frozen=True)
class StepGrid:
    """Strictly decreasing integer timesteps, starting at T."""

    knots: tuple

    def __post_init__(self):
        k = self.knots
        if not k:
            raise ValueError("empty grid")
        if any(k[i] <= k[i + 1] for i in range(len(k) - 1)):
            raise ValueError("grid must be strictly decreasing")

    def with_knot(self, t: int) -> "StepGrid":
        if t in self.knots:
            return self
        return StepGrid(tuple(sorted(set(self.knots) | {t}, reverse=True)))


def perturbed_grid(T: int, n_steps: int, seed: int) -> StepGrid:
    """Uniform n_steps grid over [1, T] with jittered interior knots.

    Each interior knot moves uniformly within half the local spacing; strict
    decrease is enforced and the first knot is forced to T.
    """
    if not (1 <= n_steps <= T):
        raise ValueError("need 1 <= n_steps <= T")
    if n_steps == 1:
        return StepGrid((T,))
    rng = nm.make_rng(seed)
    base = np.linspace(T, 1, n_steps)
    spacing = (T - 1) / (n_steps - 1)
    knots = base.copy()
    knots[1:-1] += rng.uniform(-spacing / 2.0, spacing / 2.0, size=max(0, n_steps - 2))
    knots = np.rint(knots).astype(int)
    knots[0] = T
    # Clamp into range and restore strict decrease after rounding.
    out = [T]
    for k in knots[1:]:
        k = min(int(k), out[-1] - 1)
        k = max(k, 1)
        if k < out[-1]:
            out.append(k)
    # Pad toward 1 if rounding collapsed knots (rare at sane n_steps).
    while len(out) < n_steps and out[-1] > 1:
        out.append(out[-1] - 1)
    return StepGrid(tuple(out))


def _half_log_snr(s: NoiseSchedule, t: int) -> float:
    ab = s.alpha_bar(t)
    return 0.5 * np.log(ab / (1.0 - ab))


def solver_sample_to(s: NoiseSchedule, p, c, grid: StepGrid, target_t: int,
                     seed: int) -> np.ndarray:
    """Deterministic multistep integration from x_T down to target_t.

    x_T ~ N(0, I) is the only randomness. The update in half log-SNR time
    is the exponential-integrator step
        x_next = (a_next / a_cur) x - s_next (e^h - 1) eps_hat,
    with a = sqrt(alpha_bar), s = sqrt(1 - alpha_bar), h the log-SNR
    increment; from the second step on, eps_hat is linearly extrapolated
    from the previous evaluation (second-order multistep). No guidance is
    applied: the conditional prediction alone drives the integration.
    """
    if not (1 <= target_t <= s.T):
        raise ValueError("target_t out of range")
    eps_of = _eps_fn(p)
    grid = grid.with_knot(target_t)
    knots = [t for t in grid.knots if t >= target_t]
    rng = nm.make_rng(seed)
    dim = p.arch.data_dim if isinstance(p, DenoiserParams) else 2
    x = rng.standard_normal(dim)
    if knots[0] != s.T:
        raise ValueError("grid must start at T")
    prev_eps = None
    prev_lam = None
    for i in range(len(knots) - 1):
        t_cur, t_next = knots[i], knots[i + 1]
        lam_cur = _half_log_snr(s, t_cur)
        lam_next = _half_log_snr(s, t_next)
        h = lam_next - lam_cur
        a_cur = np.sqrt(s.alpha_bar(t_cur))
        a_next = np.sqrt(s.alpha_bar(t_next))
        sd_next = np.sqrt(1.0 - s.alpha_bar(t_next))
        eps_cur = eps_of(x, c, t_cur)
        if prev_eps is None:
            eps_eff = eps_cur
        else:
            r = (lam_cur - prev_lam) / h
            eps_eff = eps_cur + 0.5 * (eps_cur - prev_eps) / r
        x = (a_next / a_cur) * x - sd_next * np.expm1(h) * eps_eff
        prev_eps, prev_lam = eps_cur, lam_cur
    return x


def solver_sample_x0(s: NoiseSchedule, p, c, grid: StepGrid, seed: int) -> np.ndarray:
    """Integrate to t = 1 and apply the final denoise to a clean sample."""
    x1 = solver_sample_to(s, p, c, grid, 1, seed)
    eps_hat = _eps_fn(p)(x1, c, 1)
    ab1 = s.alpha_bar(1)
    return (x1 - np.sqrt(1.0 - ab1) * eps_hat) / np.sqrt(ab1)
