"""Toy conditional worlds, the synthetic analytic reward, and expert selection.

Each condition owns a small isotropic Gaussian mixture plus one preferred
component; the reward is the negative squared distance to the preferred
mean, scaled by a sharpness tau. Expert demonstrations come from a pool
generated by the reference model, scored and truncated to the top K.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import numerics as nm
from .diffusion import ancestral_sample


@dataclass(frozen=True)
class ToyWorld:
    """Ground-truth conditional mixtures plus the synthetic reward."""

    n_conditions: int
    means: np.ndarray          # (C, n_components, dim)
    component_var: float
    weights: np.ndarray        # (C, n_components)
    preferred: np.ndarray      # (C,) index of the preferred component
    tau: float = 4.0

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if not np.allclose(self.weights.sum(axis=1), 1.0):
            raise ValueError("mixture weights must sum to 1 per condition")
        if np.any(self.preferred < 0) or np.any(self.preferred >= self.means.shape[1]):
            raise ValueError("preferred component index out of range")

    def _check_c(self, c):
        c = int(c)
        if not (0 <= c < self.n_conditions):
            raise ValueError(f"invalid condition {c}")
        return c

    def preferred_mean(self, c) -> np.ndarray:
        return self.means[self._check_c(c), int(self.preferred[int(c)])]


def default_world(n_conditions: int = 4, separation: float = 4.0,
                  component_var: float = 0.25, tau: float = 4.0) -> ToyWorld:
    """Bimodal world: two components per condition, separated along a
    direction that rotates with the condition; the preferred one alternates."""
    dim = 2
    means = np.zeros((n_conditions, 2, dim))
    for c in range(n_conditions):
        angle = np.pi * c / n_conditions
        direction = np.array([np.cos(angle), np.sin(angle)])
        means[c, 0] = (separation / 2.0) * direction
        means[c, 1] = -(separation / 2.0) * direction
    weights = np.full((n_conditions, 2), 0.5)
    preferred = np.array([c % 2 for c in range(n_conditions)])
    return ToyWorld(n_conditions=n_conditions, means=means,
                    component_var=component_var, weights=weights,
                    preferred=preferred, tau=tau)


def synth_reward(world: ToyWorld, x, c) -> float:
    """r*(x, c) = -||x - preferred_mean(c)||^2 / tau; max 0 at the mean."""
    d = np.asarray(x, dtype=float) - world.preferred_mean(c)
    return -float(np.dot(d, d)) / world.tau


def sample_ground_truth(world: ToyWorld, c, n: int, seed: int) -> np.ndarray:
    """n i.i.d. draws from the condition's mixture."""
    if n < 1:
        raise ValueError("n must be >= 1")
    c = world._check_c(c)
    rng = nm.make_rng(seed)
    comps = rng.choice(world.means.shape[1], size=n, p=world.weights[c])
    noise = rng.standard_normal((n, world.means.shape[2]))
    return world.means[c, comps] + np.sqrt(world.component_var) * noise


@dataclass(frozen=True)
class DemoSet:
    """Per-condition expert demonstrations with scores, sorted descending."""

    per_condition: dict = field(default_factory=dict)  # c -> list[(x0, score)]

    def conditions(self):
        return sorted(self.per_condition)

    def demos(self, c):
        return self.per_condition[int(c)]

    def mean_score(self) -> float:
        scores = [s for items in self.per_condition.values() for _, s in items]
        return float(np.mean(scores))

    def draw(self, c, rng: np.random.Generator) -> np.ndarray:
        items = self.per_condition[int(c)]
        return np.array(items[rng.integers(len(items))][0], copy=True)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["condition", "x0", "x1", "score"])
            for c in self.conditions():
                for x, score in self.per_condition[c]:
                    writer.writerow([c, x[0], x[1], score])


def select_experts(pool, K: int) -> DemoSet:
    """Per condition: stable descending sort by score, keep the top K."""
    by_c = {}
    for x, c, score in pool:
        by_c.setdefault(int(c), []).append((np.asarray(x, dtype=float), float(score)))
    out = {}
    for c, items in by_c.items():
        if len(items) < K:
            raise ValueError(f"condition {c} has only {len(items)} pool items, need {K}")
        ranked = sorted(items, key=lambda it: -it[1])  # python sort is stable
        out[c] = ranked[:K]
    return DemoSet(per_condition=out)


def build_pool(world: ToyWorld, ref, s, per_condition: int, seed: int,
               guidance: float = 1.0):
    """Reference-model samples per condition, scored with the synthetic reward."""
    rng = nm.make_rng(seed)
    pool = []
    for c in range(world.n_conditions):
        for _ in range(per_condition):
            x = ancestral_sample(s, ref, c, guidance, nm.spawn_seed(rng))
            pool.append((x, c, synth_reward(world, x, c)))
    return pool
