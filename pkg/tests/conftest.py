"""Shared fixtures: tiny models for unit tests, and session-scoped
end-to-end artifacts (pretrained reference, expert pool, ranking-optimized
model) reused by the expensive alignment tests."""

import time

import numpy as np
import pytest

from ddro import numerics as nm
from ddro.config import RunConfig
from ddro.denoiser import DenoiserArch, init_denoiser
from ddro.schedule import build_schedule
from ddro.trainer import TrainerConfig, dro_train, pretrain_reference, sft_finetune
from ddro.world import build_pool, select_experts


# ---------------------------------------------------------------------------
# Small, cheap fixtures for unit tests
# ---------------------------------------------------------------------------


@pytest.fixture
def tiny_arch():
    return DenoiserArch(data_dim=2, hidden=(4,), n_conditions=2, cond_dim=2,
                        n_freq=2, horizon=6)


@pytest.fixture
def tiny_schedule():
    return build_schedule(6, 0.05, 0.3)


@pytest.fixture
def tiny_models(tiny_arch):
    rng = nm.make_rng(100)
    phi = init_denoiser(tiny_arch, nm.spawn_seed(rng))
    ref = init_denoiser(tiny_arch, nm.spawn_seed(rng))
    policy = init_denoiser(tiny_arch, nm.spawn_seed(rng))
    return phi, ref, policy


def make_linear_gaussian_denoiser(s, mu, var0):
    """Optimal noise predictor for a single-Gaussian N(mu, var0 I) target.

    With x_t = sqrt(ab) x0 + sqrt(1-ab) eps and x0 ~ N(mu, var0 I), the
    posterior-mean-optimal prediction is linear in x_t:
        eps*(x_t, t) = (x_t - sqrt(ab) mu) * sqrt(1-ab) / (ab var0 + 1 - ab).
    """
    mu = np.asarray(mu, dtype=float)

    def eps_star(x, c, t):
        ab = s.alpha_bar(t)
        return (np.asarray(x, dtype=float) - np.sqrt(ab) * mu) * np.sqrt(1.0 - ab) \
            / (ab * var0 + 1.0 - ab)

    return eps_star


def ancestral_chain_moments(s, mu, var0):
    """Exact mean/variance of the ancestral chain driven by the optimal
    linear denoiser: propagate the affine reverse-step map from N(0, I)."""
    mu = np.asarray(mu, dtype=float)
    m = np.zeros_like(mu)
    v = 1.0
    for t in range(s.T, 0, -1):
        ab = s.alpha_bar(t)
        beta = s.beta(t)
        alpha = s.alpha(t)
        k = beta / np.sqrt(1.0 - ab) * np.sqrt(1.0 - ab) / (ab * var0 + 1.0 - ab)
        # x_{t-1} mean-map: (x - k (x - sqrt(ab) mu)) / sqrt(alpha)
        a_lin = (1.0 - k) / np.sqrt(alpha)
        b_lin = k * np.sqrt(ab) / np.sqrt(alpha) * mu
        m = a_lin * m + b_lin
        v = a_lin**2 * v
        if t >= 2:
            v = v + s.sigma2(t)
    return m, v


# ---------------------------------------------------------------------------
# Session-scoped end-to-end artifacts (built once, shared by slow tests)
# ---------------------------------------------------------------------------


@pytest.fixture(scope="session")
def timings():
    """Wall-clock seconds of the expensive session artifacts, keyed by name."""
    return {}


@pytest.fixture(scope="session")
def run_config():
    return RunConfig()


@pytest.fixture(scope="session")
def world(run_config):
    return run_config.make_world()


@pytest.fixture(scope="session")
def schedule(run_config):
    return run_config.make_schedule()


@pytest.fixture(scope="session")
def reference(run_config, world, schedule, timings):
    start = time.perf_counter()
    ref = pretrain_reference(world, schedule, run_config.make_arch(),
                             run_config.make_pretrain_trainer_config())
    timings["pretrain"] = time.perf_counter() - start
    return ref


@pytest.fixture(scope="session")
def pool(run_config, world, schedule, reference, timings):
    start = time.perf_counter()
    out = build_pool(world, reference, schedule,
                     run_config.experts.pool_per_condition,
                     run_config.experts.seed,
                     guidance=run_config.experts.guidance)
    timings["pool"] = time.perf_counter() - start
    return out


@pytest.fixture(scope="session")
def demos(pool, run_config):
    return select_experts(pool, run_config.experts.top_k)


def finetune_config(n_steps=2400):
    """Desk-scale calibration used by the alignment tests: a relaxed clip
    threshold keeps the push-away term live long enough for the ranking
    objective to sharpen past the demo distribution."""
    return TrainerConfig(n_steps=n_steps, batch_size=32, learning_rate=1e-3,
                         clip_threshold=-5.0, seed=0)


@pytest.fixture(scope="session")
def dro_model(reference, demos, schedule, timings):
    """EMA weights of the ranking-optimized model on the default demo set."""
    start = time.perf_counter()
    _, ema_params, history, _ = dro_train(reference, demos, schedule,
                                          finetune_config())
    timings["dro"] = time.perf_counter() - start
    return ema_params, history


@pytest.fixture(scope="session")
def sft_model(reference, demos, schedule):
    """Supervised fine-tuning baseline at the same data and budget."""
    return sft_finetune(reference, demos, schedule, finetune_config())
