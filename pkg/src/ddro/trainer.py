"""Reference pretraining, the ranking-optimization loop, and AdamW.

The ranking loop keeps three parameter records: a frozen reference, the
trained learner, and a policy copy that only ever gets overwritten by the
learner every M steps. Each batch item draws one timestep, one condition
(shared between the expert and policy sides, with prompt dropout applied to
that shared condition), one expert sample diffused forward, and one online
policy sample produced by the deterministic solver on a freshly perturbed
step grid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nm
from .denoiser import (DenoiserParams, EmaState, NULL_CONDITION, ema_init,
                       ema_update, predict_eps)
from .diffusion import ancestral_sample, perturbed_grid, solver_sample_to
from .losses import make_breakdown, sft_loss, trl_loss
from .schedule import NoiseSchedule
from .world import DemoSet, ToyWorld, sample_ground_truth, synth_reward

HISTORY_COLUMNS = ("step", "loss", "mean_margin", "clip_fraction", "reward_margin")


@dataclass
class TrainerConfig:
    n_steps: int = 400
    batch_size: int = 32
    policy_update_interval: int = 1
    clip_threshold: float = -0.001
    learning_rate: float = 3e-4
    weight_decay: float = 0.0
    prompt_dropout: float = 0.2
    ema_decay: float = 0.995
    solver_steps: int = 20
    seed: int = 0
    beta_kl: float = 1.0
    reward_margin_samples: int = 16

    def __post_init__(self):
        if self.n_steps < 0:
            raise ValueError("n_steps must be >= 0")
        if self.batch_size < 1 or self.policy_update_interval < 1:
            raise ValueError("batch size and update interval must be >= 1")
        if not (0.0 <= self.prompt_dropout <= 1.0):
            raise ValueError("prompt dropout must be in [0, 1]")


@dataclass
class OptimizerState:
    """Adam moments with a step counter; decoupled weight decay at apply time."""

    m: dict
    v: dict
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def init(cls, params: DenoiserParams) -> "OptimizerState":
        return cls(m={k: np.zeros_like(v) for k, v in params.values.items()},
                   v={k: np.zeros_like(v) for k, v in params.values.items()})


def optimizer_step(state: OptimizerState, params: DenoiserParams, grads: dict,
                   lr: float, wd: float = 0.0):
    """One AdamW update; returns the new state and parameter record."""
    new_m, new_v, new_values = {}, {}, {}
    step = state.step + 1
    for k, p in params.values.items():
        g = np.asarray(grads[k], dtype=float)
        if g.shape != np.shape(p):
            raise ValueError(f"gradient shape mismatch for '{k}'")
        if not np.all(np.isfinite(g)):
            raise ValueError(f"non-finite gradient for '{k}'")
        m = state.beta1 * state.m[k] + (1.0 - state.beta1) * g
        v = state.beta2 * state.v[k] + (1.0 - state.beta2) * g * g
        m_hat = m / (1.0 - state.beta1**step)
        v_hat = v / (1.0 - state.beta2**step)
        new_values[k] = p - lr * m_hat / (np.sqrt(v_hat) + state.eps) - lr * wd * p
        new_m[k], new_v[k] = m, v
    new_state = OptimizerState(m=new_m, v=new_v, step=step,
                               beta1=state.beta1, beta2=state.beta2, eps=state.eps)
    return new_state, params.with_values(new_values)


def drop_condition(c, p_drop: float, seed: int):
    """Replace c with the null condition with probability p_drop."""
    if not (0.0 <= p_drop <= 1.0):
        raise ValueError("p_drop must be in [0, 1]")
    if p_drop == 0.0:
        return c
    if nm.make_rng(seed).random() < p_drop:
        return NULL_CONDITION
    return c


class TrainingDiverged(RuntimeError):
    pass


def _traced(params: DenoiserParams, wrapped: dict) -> DenoiserParams:
    return params.with_values(wrapped)


def pretrain_reference(world: ToyWorld, s: NoiseSchedule, arch, config: TrainerConfig,
                       init: DenoiserParams | None = None) -> DenoiserParams:
    """Denoising pretraining on ground-truth conditional samples.

    Returns EMA weights; stands in for a generic pretrained base model.
    """
    from .denoiser import init_denoiser

    rng = nm.make_rng(config.seed)
    params = init if init is not None else init_denoiser(arch, nm.spawn_seed(rng))
    if config.n_steps == 0:
        return params
    opt = OptimizerState.init(params)
    ema = ema_init(params, config.ema_decay)
    for step in range(config.n_steps):
        items = []
        for _ in range(config.batch_size):
            c = int(rng.integers(world.n_conditions))
            x0 = sample_ground_truth(world, c, 1, nm.spawn_seed(rng))[0]
            t = int(rng.integers(1, s.T + 1))
            epsbar = rng.standard_normal(arch.data_dim)
            c_used = drop_condition(c, config.prompt_dropout, nm.spawn_seed(rng))
            items.append((x0, c_used, t, epsbar))

        def batch_loss(wrapped):
            phi = _traced(params, wrapped)
            return nm.mean_of([sft_loss(phi, s, x0, c, t, eb) for x0, c, t, eb in items])

        loss, grads = nm.grad(batch_loss, params.values)
        if not np.isfinite(loss):
            raise TrainingDiverged(f"pretraining loss diverged at step {step}")
        opt, params = optimizer_step(opt, params, grads, config.learning_rate,
                                     config.weight_decay)
        ema = ema_update(ema, params)
    return ema.shadow


def sft_finetune(ref: DenoiserParams, demos: DemoSet, s: NoiseSchedule,
                 config: TrainerConfig) -> DenoiserParams:
    """Supervised fine-tuning on expert demonstrations (baseline for the
    ranking method at equal data and budget). Returns EMA weights."""
    rng = nm.make_rng(config.seed)
    params = ref.copy()
    opt = OptimizerState.init(params)
    ema = ema_init(params, config.ema_decay)
    conditions = demos.conditions()
    for step in range(config.n_steps):
        items = []
        for _ in range(config.batch_size):
            c = int(conditions[rng.integers(len(conditions))])
            x0 = demos.draw(c, rng)
            t = int(rng.integers(1, s.T + 1))
            epsbar = rng.standard_normal(params.arch.data_dim)
            c_used = drop_condition(c, config.prompt_dropout, nm.spawn_seed(rng))
            items.append((x0, c_used, t, epsbar))

        def batch_loss(wrapped):
            phi = _traced(params, wrapped)
            return nm.mean_of([sft_loss(phi, s, x0, c, t, eb) for x0, c, t, eb in items])

        loss, grads = nm.grad(batch_loss, params.values)
        if not np.isfinite(loss):
            raise TrainingDiverged(f"SFT loss diverged at step {step}")
        opt, params = optimizer_step(opt, params, grads, config.learning_rate,
                                     config.weight_decay)
        ema = ema_update(ema, params)
    return ema.shadow


@dataclass
class TrainState:
    """Everything needed to resume a run bit-identically."""

    phi: DenoiserParams
    policy: DenoiserParams
    ema: EmaState
    opt: OptimizerState
    step: int
    rng_state: dict


def _init_state(ref: DenoiserParams, config: TrainerConfig) -> TrainState:
    rng = nm.make_rng(config.seed)
    return TrainState(phi=ref.copy(), policy=ref.copy(),
                      ema=ema_init(ref, config.ema_decay),
                      opt=OptimizerState.init(ref), step=0,
                      rng_state=rng.bit_generator.state)


def dro_train(ref: DenoiserParams, demos: DemoSet, s: NoiseSchedule,
              config: TrainerConfig, world: ToyWorld | None = None,
              state: TrainState | None = None, n_steps: int | None = None):
    """Ranking-optimization loop; returns (phi, ema params, history, state).

    ``history`` is a list of dict rows with HISTORY_COLUMNS keys. Passing a
    previously returned ``state`` resumes the run; ``n_steps`` overrides the
    number of additional steps (defaults to config.n_steps - state.step).
    """
    if not demos.per_condition:
        raise ValueError("demo set is empty")
    if state is None:
        state = _init_state(ref, config)
    rng = nm.make_rng(0)
    rng.bit_generator.state = state.rng_state
    phi, policy, ema, opt = state.phi, state.policy, state.ema, state.opt
    conditions = demos.conditions()
    total = config.n_steps if n_steps is None else state.step + n_steps
    history = []

    for step in range(state.step + 1, total + 1):
        items = []
        for n in range(config.batch_size):
            t = int(rng.integers(1, s.T + 1))
            c = int(conditions[rng.integers(len(conditions))])
            xbar0 = demos.draw(c, rng)
            epsbar = rng.standard_normal(phi.arch.data_dim)
            c_used = drop_condition(c, config.prompt_dropout, nm.spawn_seed(rng))
            grid = perturbed_grid(s.T, min(config.solver_steps, s.T), nm.spawn_seed(rng))
            x_t = solver_sample_to(s, policy, c_used, grid, t, nm.spawn_seed(rng))
            items.append((xbar0, c_used, t, epsbar, x_t))

        batch_holder = []

        def batch_loss(wrapped):
            phi_traced = _traced(phi, wrapped)
            batch = [make_breakdown(phi_traced, ref, policy, s, xbar0, c, t, eb, x_t)
                     for xbar0, c, t, eb, x_t in items]
            batch_holder.append(batch)
            return trl_loss(batch, config.clip_threshold)

        loss, grads = nm.grad(batch_loss, phi.values)
        if not np.isfinite(loss):
            raise TrainingDiverged(f"ranking loss diverged at step {step}")
        batch = batch_holder[-1]
        opt, phi = optimizer_step(opt, phi, grads, config.learning_rate,
                                  config.weight_decay)
        ema = ema_update(ema, phi)
        if step % config.policy_update_interval == 0:
            policy = phi.copy()

        margins = [b.margin_value for b in batch]
        clip_fraction = float(np.mean([b.clipped for b in batch]))
        if world is not None and config.reward_margin_samples > 0:
            rm = reward_margin_quick(world, demos, policy, s,
                                     config.reward_margin_samples,
                                     nm.spawn_seed(rng))
        else:
            rm = float("nan")
        history.append({"step": step, "loss": loss,
                        "mean_margin": float(np.mean(margins)),
                        "clip_fraction": clip_fraction, "reward_margin": rm})

    final_state = TrainState(phi=phi, policy=policy, ema=ema, opt=opt,
                             step=total, rng_state=rng.bit_generator.state)
    return phi, ema.shadow, history, final_state


def reward_margin_quick(world: ToyWorld, demos: DemoSet, policy: DenoiserParams,
                        s: NoiseSchedule, n: int, seed: int) -> float:
    """Mean demo reward minus mean reward of n fresh policy samples."""
    rng = nm.make_rng(seed)
    demo_scores = [synth_reward(world, x, c)
                   for c in demos.conditions() for x, _ in demos.demos(c)]
    conditions = demos.conditions()
    policy_scores = []
    for _ in range(n):
        c = int(conditions[rng.integers(len(conditions))])
        x = ancestral_sample(s, policy, c, 1.0, nm.spawn_seed(rng))
        policy_scores.append(synth_reward(world, x, c))
    return float(np.mean(demo_scores) - np.mean(policy_scores))
