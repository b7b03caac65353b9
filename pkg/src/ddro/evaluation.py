"""Win-rate protocol, median-of-n selection, and the reward-margin diagnostic."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, asdict

import numpy as np

from . import numerics as nm
from .denoiser import DenoiserParams
from .diffusion import ancestral_sample
from .schedule import NoiseSchedule
from .world import DemoSet, ToyWorld, synth_reward


@dataclass
class EvalReport:
    win_rate: float
    per_condition: dict = field(default_factory=dict)
    mean_reward_a: float = 0.0
    mean_reward_b: float = 0.0
    n_prompts: int = 0

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        d = json.loads(text)
        d["per_condition"] = {int(k): v for k, v in d["per_condition"].items()}
        return cls(**d)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["condition", "win_rate"])
            writer.writerow(["all", self.win_rate])
            for c in sorted(self.per_condition):
                writer.writerow([c, self.per_condition[c]])


def median_of_n(samples, scores):
    """The sample whose score is the median of n (odd) scores.

    Ties resolve by stable score order, so permuting the inputs cannot
    change the selected score.
    """
    scores = [float(s) for s in scores]
    if len(samples) != len(scores):
        raise ValueError("samples and scores must align")
    if len(scores) % 2 == 0:
        raise ValueError("n must be odd")
    if not all(np.isfinite(scores)):
        raise ValueError("scores must be finite")
    order = sorted(range(len(scores)), key=lambda i: scores[i])
    return samples[order[len(scores) // 2]]


def _representative(world, s, model, c, w, n_per_prompt, seed):
    rng = nm.make_rng(seed)
    samples = [ancestral_sample(s, model, c, w, nm.spawn_seed(rng))
               for _ in range(n_per_prompt)]
    scores = [synth_reward(world, x, c) for x in samples]
    return median_of_n(samples, scores)


def win_rate(world: ToyWorld, s: NoiseSchedule, model_a, model_b, conditions,
             n_prompts: int, n_per_prompt: int, w: float, seed: int) -> EvalReport:
    """Median-of-n representatives compared by the synthetic reward.

    model_a wins a prompt if its representative strictly out-scores
    model_b's; exact score ties count 0.5.
    """
    if n_per_prompt % 2 == 0:
        raise ValueError("n_per_prompt must be odd")
    rng = nm.make_rng(seed)
    conditions = list(conditions)
    outcomes, per_c, rewards_a, rewards_b = [], {}, [], []
    for i in range(n_prompts):
        c = int(conditions[i % len(conditions)])
        # One seed per prompt, shared by both models: self-comparison ties
        # exactly and swapping the models exactly complements the outcome.
        seed_p = nm.spawn_seed(rng)
        xa = _representative(world, s, model_a, c, w, n_per_prompt, seed_p)
        xb = _representative(world, s, model_b, c, w, n_per_prompt, seed_p)
        ra, rb = synth_reward(world, xa, c), synth_reward(world, xb, c)
        rewards_a.append(ra)
        rewards_b.append(rb)
        outcome = 1.0 if ra > rb else (0.0 if rb > ra else 0.5)
        outcomes.append(outcome)
        per_c.setdefault(c, []).append(outcome)
    return EvalReport(win_rate=float(np.mean(outcomes)),
                      per_condition={c: float(np.mean(v)) for c, v in per_c.items()},
                      mean_reward_a=float(np.mean(rewards_a)),
                      mean_reward_b=float(np.mean(rewards_b)),
                      n_prompts=n_prompts)


def reward_margin(world: ToyWorld, demos: DemoSet, policy: DenoiserParams,
                  s: NoiseSchedule, n: int, seed: int) -> float:
    """Empirical expert-minus-policy reward gap (the inductive-step margin)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = nm.make_rng(seed)
    demo_scores = [synth_reward(world, x, c)
                   for c in demos.conditions() for x, _ in demos.demos(c)]
    conditions = demos.conditions()
    policy_scores = []
    for i in range(n):
        c = int(conditions[i % len(conditions)])
        x = ancestral_sample(s, policy, c, 1.0, nm.spawn_seed(rng))
        policy_scores.append(synth_reward(world, x, c))
    return float(np.mean(demo_scores) - np.mean(policy_scores))
