"""Diffusion noise schedule and per-timestep loss weights.

Timesteps are 1-based (t = 1..T) in the public API; internal arrays are
0-indexed. The per-timestep weight ``lam`` is either the analytic
beta_t^2 / (2 sigma_t^2 alpha_t (1 - alpha_bar_t)) arising from the
Gaussian-KL-to-MSE reduction, or the unit convention used for training.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SIGMA_MODES = ("beta", "posterior")
LAM_MODES = ("analytic", "unit")


@dataclass(frozen=True)
class NoiseSchedule:
    """Immutable per-timestep diffusion constants for horizon T."""

    T: int
    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray
    sigma2s: np.ndarray
    lams: np.ndarray
    sigma_mode: str = "beta"
    lam_mode: str = "unit"

    def _check_t(self, t: int):
        if not (1 <= t <= self.T):
            raise ValueError(f"timestep {t} out of range [1, {self.T}]")

    def beta(self, t: int) -> float:
        self._check_t(t)
        return float(self.betas[t - 1])

    def alpha(self, t: int) -> float:
        self._check_t(t)
        return float(self.alphas[t - 1])

    def alpha_bar(self, t: int) -> float:
        self._check_t(t)
        return float(self.alpha_bars[t - 1])

    def alpha_bar_prev(self, t: int) -> float:
        """alpha_bar at t-1, with the boundary convention alpha_bar_0 = 1."""
        self._check_t(t)
        return 1.0 if t == 1 else float(self.alpha_bars[t - 2])

    def sigma2(self, t: int) -> float:
        self._check_t(t)
        return float(self.sigma2s[t - 1])

    def lam(self, t: int) -> float:
        self._check_t(t)
        return float(self.lams[t - 1])

    def with_lams(self, lams: np.ndarray) -> "NoiseSchedule":
        """Copy with replaced weights (used by the corrupted-weight control)."""
        return NoiseSchedule(
            T=self.T,
            betas=self.betas,
            alphas=self.alphas,
            alpha_bars=self.alpha_bars,
            sigma2s=self.sigma2s,
            lams=np.asarray(lams, dtype=float),
            sigma_mode=self.sigma_mode,
            lam_mode="corrupted",
        )


def analytic_lam(beta: np.ndarray, alpha: np.ndarray, alpha_bar: np.ndarray,
                 sigma2: np.ndarray) -> np.ndarray:
    return beta**2 / (2.0 * sigma2 * alpha * (1.0 - alpha_bar))


def build_schedule(T: int, beta_start: float, beta_end: float,
                   sigma_mode: str = "beta", lam_mode: str = "unit") -> NoiseSchedule:
    """Linear beta schedule from beta_start to beta_end inclusive."""
    if T < 1:
        raise ValueError("T must be a positive integer")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ValueError("need 0 < beta_start <= beta_end < 1")
    if sigma_mode not in SIGMA_MODES:
        raise ValueError(f"sigma_mode must be one of {SIGMA_MODES}")
    if lam_mode not in LAM_MODES:
        raise ValueError(f"lam_mode must be one of {LAM_MODES}")

    beta = np.linspace(beta_start, beta_end, T, dtype=float)
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)

    if sigma_mode == "beta":
        sigma2 = beta.copy()
    else:
        alpha_bar_prev = np.concatenate(([1.0], alpha_bar[:-1]))
        sigma2 = beta * (1.0 - alpha_bar_prev) / (1.0 - alpha_bar)
        sigma2[0] = beta[0]

    if lam_mode == "analytic":
        lam = analytic_lam(beta, alpha, alpha_bar, sigma2)
    else:
        lam = np.ones(T, dtype=float)

    return NoiseSchedule(T=T, betas=beta, alphas=alpha, alpha_bars=alpha_bar,
                         sigma2s=sigma2, lams=lam,
                         sigma_mode=sigma_mode, lam_mode=lam_mode)


def lambda_weight(s: NoiseSchedule, t: int) -> float:
    """Per-timestep loss weight at 1-based timestep t."""
    return s.lam(t)
