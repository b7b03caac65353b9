"""Executable check that the trajectory log-ratio objective equals the
weighted noise-prediction objective.

Both sides of the derivation are evaluated on shared random draws: the
closed-form Gaussian-KL expression (via posterior and reverse-step means)
and the analytically weighted squared-noise-difference expression. Under
common random numbers the two are an exact per-draw algebraic identity, far
stronger than a Monte-Carlo confidence interval; aggregate estimates are
retained for the expectation-level statement.

Boundary handling: the t = 1 reverse step targets the clean sample itself
with variance sigma_1^2, symmetrically in both expressions. The discarded
prior term is independent of the learner by construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict
import json

import numpy as np

from . import numerics as nm
from .denoiser import DenoiserParams, predict_eps
from .diffusion import (forward_diffuse, gaussian_kl_isotropic, posterior_params,
                        reverse_mean_from_eps)
from .schedule import NoiseSchedule, analytic_lam


@dataclass(frozen=True)
class McEstimate:
    value: float
    std_error: float
    n: int

    @classmethod
    def from_samples(cls, samples) -> "McEstimate":
        arr = np.asarray(samples, dtype=float)
        se = float(arr.std(ddof=1) / np.sqrt(arr.size)) if arr.size > 1 else 0.0
        if not np.isfinite(se):
            raise ValueError("variance overflow: increase the sample count")
        return cls(value=float(arr.mean()), std_error=se, n=int(arr.size))


def _eps(p: DenoiserParams, x, c, t) -> np.ndarray:
    return np.asarray(nm.value_of(predict_eps(p, x, c, t)), dtype=float)


def _analytic_lams(s: NoiseSchedule) -> np.ndarray:
    if s.lam_mode == "analytic":
        return s.lams
    if s.lam_mode == "corrupted":
        return s.lams
    return analytic_lam(s.betas, s.alphas, s.alpha_bars, s.sigma2s)


def _target_mean(s: NoiseSchedule, x0, x_t, t: int) -> np.ndarray:
    """Mean of the forward posterior; at t = 1 the target is x0 itself."""
    if t == 1:
        return np.asarray(x0, dtype=float)
    mean, _ = posterior_params(s, x0, x_t, t)
    return mean


def _expert_draw_terms(phi, ref, s, x0, c, rng, beta_kl, lams):
    """Both forms of the per-draw expert-side sum over t = 1..T."""
    kl_total, eps_total = 0.0, 0.0
    for t in range(1, s.T + 1):
        epsbar = rng.standard_normal(np.asarray(x0).shape[0])
        x_t = forward_diffuse(s, x0, t, epsbar)
        mu_q = _target_mean(s, x0, x_t, t)
        mu_phi = reverse_mean_from_eps(s, x_t, _eps(phi, x_t, c, t), t)
        mu_ref = reverse_mean_from_eps(s, x_t, _eps(ref, x_t, c, t), t)
        var = s.sigma2(t)
        kl_total += (-gaussian_kl_isotropic(mu_q, mu_phi, var)
                     + gaussian_kl_isotropic(mu_q, mu_ref, var))
        eps_total += lams[t - 1] * (
            -float(np.dot(epsbar - _eps(phi, x_t, c, t), epsbar - _eps(phi, x_t, c, t)))
            + float(np.dot(epsbar - _eps(ref, x_t, c, t), epsbar - _eps(ref, x_t, c, t))))
    return beta_kl * kl_total, beta_kl * eps_total


def _policy_draw_terms(phi, ref, policy, s, c, rng, beta_kl, lams):
    """Both forms of the per-draw policy-side sum, along one exact ancestral
    chain of the policy (the derivation's densities are the ancestral ones)."""
    dim = policy.arch.data_dim
    x = rng.standard_normal(dim)
    kl_total, eps_total = 0.0, 0.0
    for t in range(s.T, 0, -1):
        eps_th = _eps(policy, x, c, t)
        eps_phi = _eps(phi, x, c, t)
        eps_ref = _eps(ref, x, c, t)
        mu_th = reverse_mean_from_eps(s, x, eps_th, t)
        mu_phi = reverse_mean_from_eps(s, x, eps_phi, t)
        mu_ref = reverse_mean_from_eps(s, x, eps_ref, t)
        var = s.sigma2(t)
        kl_total += (-gaussian_kl_isotropic(mu_th, mu_phi, var)
                     + gaussian_kl_isotropic(mu_th, mu_ref, var))
        eps_total += lams[t - 1] * (
            -float(np.dot(eps_th - eps_phi, eps_th - eps_phi))
            + float(np.dot(eps_th - eps_ref, eps_th - eps_ref)))
        x = mu_th
        if t >= 2:
            x = x + np.sqrt(var) * rng.standard_normal(dim)
    return beta_kl * kl_total, beta_kl * eps_total


def expert_side_kl(phi, ref, s, x0_source, c, n: int, seed: int,
                   beta_kl: float = 1.0) -> McEstimate:
    """Gaussian-KL form of the expert side, Monte Carlo over (x0, eps) draws."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = nm.make_rng(seed)
    lams = _analytic_lams(s)
    vals = [_expert_draw_terms(phi, ref, s, x0_source(rng), c, rng, beta_kl, lams)[0]
            for _ in range(n)]
    return McEstimate.from_samples(vals)


def expert_side_eps(phi, ref, s, x0_source, c, n: int, seed: int,
                    beta_kl: float = 1.0) -> McEstimate:
    """Weighted noise-difference form over draws matched to expert_side_kl."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = nm.make_rng(seed)
    lams = _analytic_lams(s)
    vals = [_expert_draw_terms(phi, ref, s, x0_source(rng), c, rng, beta_kl, lams)[1]
            for _ in range(n)]
    return McEstimate.from_samples(vals)


def policy_side_pair(phi, ref, policy, s, c, n: int, seed: int,
                     beta_kl: float = 1.0):
    """Both forms of the policy side over shared ancestral-chain draws."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = nm.make_rng(seed)
    lams = _analytic_lams(s)
    pairs = [_policy_draw_terms(phi, ref, policy, s, c, rng, beta_kl, lams)
             for _ in range(n)]
    kl_vals, eps_vals = zip(*pairs)
    return McEstimate.from_samples(kl_vals), McEstimate.from_samples(eps_vals)


@dataclass
class DerivationReport:
    passed: bool
    n: int
    expert_kl: float
    expert_eps: float
    policy_kl: float
    policy_eps: float
    objective_kl: float
    objective_eps: float
    max_rel_deviation: float
    tolerance: float
    first_violation: dict | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "DerivationReport":
        return cls(**json.loads(text))


def verify_derivation(phi, ref, policy, s: NoiseSchedule, world, n: int,
                      seed: int, beta_kl: float = 1.0,
                      tolerance: float = 1e-10) -> DerivationReport:
    """Per-draw equality of the two objective forms under shared randomness.

    Every draw must agree to relative ``tolerance`` on both the expert and
    policy sides, and the full objective (expert minus policy) must agree
    between forms at the aggregate level.
    """
    from .world import sample_ground_truth

    rng = nm.make_rng(seed)
    lams = _analytic_lams(s)
    expert_kl, expert_eps, policy_kl, policy_eps = [], [], [], []
    max_dev = 0.0
    first_violation = None
    for i in range(n):
        c = int(rng.integers(world.n_conditions))
        x0 = sample_ground_truth(world, c, 1, nm.spawn_seed(rng))[0]
        ek, ee = _expert_draw_terms(phi, ref, s, x0, c, rng, beta_kl, lams)
        pk, pe = _policy_draw_terms(phi, ref, policy, s, c, rng, beta_kl, lams)
        expert_kl.append(ek)
        expert_eps.append(ee)
        policy_kl.append(pk)
        policy_eps.append(pe)
        for side, a, b in (("expert", ek, ee), ("policy", pk, pe)):
            dev = float(abs(a - b) / max(1.0, abs(a), abs(b)))
            max_dev = max(max_dev, dev)
            if dev > tolerance and first_violation is None:
                first_violation = {"draw": i, "side": side, "condition": c,
                                   "kl_form": float(a), "eps_form": float(b)}
    obj_kl = float(np.mean(expert_kl) - np.mean(policy_kl))
    obj_eps = float(np.mean(expert_eps) - np.mean(policy_eps))
    obj_dev = abs(obj_kl - obj_eps) / max(1.0, abs(obj_kl), abs(obj_eps))
    passed = bool(max_dev <= tolerance and obj_dev <= tolerance)
    return DerivationReport(
        passed=passed, n=n,
        expert_kl=float(np.mean(expert_kl)), expert_eps=float(np.mean(expert_eps)),
        policy_kl=float(np.mean(policy_kl)), policy_eps=float(np.mean(policy_eps)),
        objective_kl=obj_kl, objective_eps=obj_eps,
        max_rel_deviation=max_dev, tolerance=tolerance,
        first_violation=first_violation)
