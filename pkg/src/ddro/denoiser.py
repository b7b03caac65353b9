"""Conditional noise-prediction MLP with classifier-free guidance and EMA.

One architecture is instantiated three times during ranking optimization:
a frozen reference, the trained reward/learner, and a periodically synced
policy copy. The network consumes concat(x_t, sinusoidal time features of
t/T, a learned condition embedding); the null condition is its own learned
embedding row, mirroring prompt dropout to empty strings.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nm

NULL_CONDITION = None


@dataclass(frozen=True)
class DenoiserArch:
    """Architecture config; the parameter count is a pure function of this."""

    data_dim: int = 2
    hidden: tuple = (128, 128)
    n_conditions: int = 4
    cond_dim: int = 8
    n_freq: int = 8
    horizon: int = 50

    def input_dim(self) -> int:
        return self.data_dim + 2 * self.n_freq + self.cond_dim

    def param_count(self) -> int:
        n = 0
        dims = (self.input_dim(),) + tuple(self.hidden) + (self.data_dim,)
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            n += fan_out * fan_in + fan_out
        n += (self.n_conditions + 1) * self.cond_dim
        return n


@dataclass(frozen=True)
class DenoiserParams:
    """Value-semantic parameter record: architecture plus named flat arrays."""

    arch: DenoiserArch
    values: dict

    def copy(self) -> "DenoiserParams":
        return DenoiserParams(self.arch, {k: np.array(v, copy=True) for k, v in self.values.items()})

    def flat(self) -> np.ndarray:
        return np.concatenate([np.asarray(v, dtype=float).ravel() for _, v in sorted(self.values.items())])

    def with_values(self, values: dict) -> "DenoiserParams":
        return DenoiserParams(self.arch, values)


def layer_names(arch: DenoiserArch):
    n_layers = len(arch.hidden) + 1
    return [(f"W{i}", f"b{i}") for i in range(n_layers)]


def init_denoiser(arch: DenoiserArch, seed: int) -> DenoiserParams:
    """Fan-in scaled Gaussian init: W ~ N(0, 1/fan_in), biases zero,
    condition embeddings ~ N(0, 0.1^2)."""
    if any(h < 1 for h in arch.hidden):
        raise ValueError("hidden widths must be >= 1")
    if arch.n_conditions < 1:
        raise ValueError("need at least one condition")
    rng = nm.make_rng(seed)
    dims = (arch.input_dim(),) + tuple(arch.hidden) + (arch.data_dim,)
    values = {}
    for i, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
        values[f"W{i}"] = rng.standard_normal((fan_out, fan_in)) / np.sqrt(fan_in)
        values[f"b{i}"] = np.zeros(fan_out)
    values["cond_emb"] = 0.1 * rng.standard_normal((arch.n_conditions + 1, arch.cond_dim))
    return DenoiserParams(arch, values)


def time_embedding(t: int, arch: DenoiserArch) -> np.ndarray:
    """Sinusoidal features of u = t / T at frequencies pi * 2^k."""
    u = t / arch.horizon
    k = np.arange(arch.n_freq)
    angles = np.pi * (2.0**k) * u
    return np.concatenate([np.sin(angles), np.cos(angles)])


def _cond_index(arch: DenoiserArch, c):
    if c is NULL_CONDITION:
        return arch.n_conditions
    c = int(c)
    if not (0 <= c < arch.n_conditions):
        raise ValueError(f"unknown condition {c}")
    return c


def predict_eps(p: DenoiserParams, x_t, c, t: int):
    """Noise prediction eps(x_t, c, t); pure and deterministic.

    Works on plain arrays or on Var-wrapped parameters, returning a traced
    output in the latter case so losses can differentiate through it.
    """
    arch = p.arch
    if not (1 <= t <= arch.horizon):
        raise ValueError(f"timestep {t} out of range [1, {arch.horizon}]")
    idx = _cond_index(arch, c)
    temb = time_embedding(t, arch)
    cemb = nm.row(p.values["cond_emb"], idx)
    h = nm.concat([np.asarray(nm.value_of(x_t), dtype=float), temb, cemb]) \
        if not nm.is_var(x_t) else nm.concat([x_t, temb, cemb])
    n_layers = len(arch.hidden) + 1
    for i in range(n_layers):
        h = nm.add(nm.matvec(p.values[f"W{i}"], h), p.values[f"b{i}"])
        if i < n_layers - 1:
            h = nm.tanh(h)
    return h


def predict_eps_cfg(p: DenoiserParams, x_t, c, t: int, w: float):
    """Classifier-free guidance: eps_null + w * (eps_c - eps_null)."""
    if c is NULL_CONDITION:
        raise ValueError("guidance requires a real condition")
    eps_c = predict_eps(p, x_t, c, t)
    if w == 1.0:
        return eps_c
    eps_null = predict_eps(p, x_t, NULL_CONDITION, t)
    return nm.add(eps_null, nm.scale(w, nm.sub(eps_c, eps_null)))


@dataclass(frozen=True)
class EmaState:
    """Exponential moving average shadow of a parameter record."""

    shadow: DenoiserParams
    decay: float

    def __post_init__(self):
        if not (0.0 <= self.decay < 1.0):
            raise ValueError("decay must be in [0, 1)")


def ema_init(params: DenoiserParams, decay: float) -> EmaState:
    return EmaState(shadow=params.copy(), decay=decay)


def ema_update(e: EmaState, current: DenoiserParams) -> EmaState:
    """shadow <- decay * shadow + (1 - decay) * current, elementwise."""
    if set(e.shadow.values) != set(current.values):
        raise ValueError("parameter records are not shape-congruent")
    new_values = {}
    for k, shadow_v in e.shadow.values.items():
        cur = current.values[k]
        if np.shape(shadow_v) != np.shape(cur):
            raise ValueError(f"shape mismatch for '{k}'")
        new_values[k] = e.decay * shadow_v + (1.0 - e.decay) * cur
    return EmaState(shadow=e.shadow.with_values(new_values), decay=e.decay)
