"""Run configuration: one human-readable YAML document per experiment.

Every protocol hyperparameter is explicit here with its desk-scale default;
the full-scale counterparts (T=1000 with betas in [1e-4, 0.02], K=500,
EMA decay 0.9999, learning rate 1e-4, guidance 7.5, update interval M=1,
clip threshold -0.001, prompt dropout 0.2) are noted next to each field so
toy runs stay traceable to the original protocol.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import yaml

from .denoiser import DenoiserArch
from .schedule import build_schedule
from .trainer import TrainerConfig
from .world import default_world


class ConfigError(ValueError):
    pass


@dataclass
class WorldConfig:
    n_conditions: int = 4
    separation: float = 4.0
    component_var: float = 0.25
    tau: float = 4.0


@dataclass
class ScheduleConfig:
    # Desk scale: T=50 with betas rescaled so cumulative noise matches the
    # conventional T=1000, [1e-4, 0.02] linear schedule.
    T: int = 50
    beta_start: float = 0.002
    beta_end: float = 0.4
    sigma_mode: str = "beta"
    lam_mode: str = "unit"


@dataclass
class ArchConfig:
    hidden: list = field(default_factory=lambda: [128, 128])
    cond_dim: int = 8
    n_freq: int = 8


@dataclass
class PretrainConfig:
    n_steps: int = 1200
    batch_size: int = 64
    learning_rate: float = 1e-3
    weight_decay: float = 0.0
    prompt_dropout: float = 0.2   # 20% of prompts dropped to the null row
    ema_decay: float = 0.995      # full-scale protocol uses 0.9999
    seed: int = 1


@dataclass
class ExpertConfig:
    pool_per_condition: int = 512
    top_k: int = 256              # full-scale protocol uses K=500
    guidance: float = 1.0
    seed: int = 2


@dataclass
class EvalConfig:
    n_prompts: int = 200
    n_per_prompt: int = 5
    guidance: float = 2.0         # full-scale protocol uses 7.5
    seed: int = 3


@dataclass
class VerifyConfig:
    T: int = 10
    hidden: list = field(default_factory=lambda: [16, 16])
    n_draws: int = 64
    seed: int = 4


@dataclass
class RunConfig:
    world: WorldConfig = field(default_factory=WorldConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    arch: ArchConfig = field(default_factory=ArchConfig)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    experts: ExpertConfig = field(default_factory=ExpertConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    verify: VerifyConfig = field(default_factory=VerifyConfig)
    out_dir: str = "runs/default"
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        sections = {"world": WorldConfig, "schedule": ScheduleConfig,
                    "arch": ArchConfig, "pretrain": PretrainConfig,
                    "trainer": TrainerConfig, "experts": ExpertConfig,
                    "eval": EvalConfig, "verify": VerifyConfig}
        kwargs = {}
        for key, value in d.items():
            if key in sections:
                if not isinstance(value, dict):
                    raise ConfigError(f"section '{key}' must be a mapping")
                try:
                    kwargs[key] = sections[key](**value)
                except (TypeError, ValueError) as exc:
                    raise ConfigError(f"invalid section '{key}': {exc}") from exc
            elif key in ("out_dir", "seed"):
                kwargs[key] = value
            else:
                raise ConfigError(f"unknown config key '{key}'")
        return cls(**kwargs)

    # Constructors for the live objects the modules consume.

    def make_world(self):
        w = self.world
        return default_world(n_conditions=w.n_conditions, separation=w.separation,
                             component_var=w.component_var, tau=w.tau)

    def make_schedule(self):
        s = self.schedule
        try:
            return build_schedule(s.T, s.beta_start, s.beta_end,
                                  sigma_mode=s.sigma_mode, lam_mode=s.lam_mode)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def make_arch(self) -> DenoiserArch:
        return DenoiserArch(data_dim=2, hidden=tuple(self.arch.hidden),
                            n_conditions=self.world.n_conditions,
                            cond_dim=self.arch.cond_dim, n_freq=self.arch.n_freq,
                            horizon=self.schedule.T)

    def make_pretrain_trainer_config(self) -> TrainerConfig:
        p = self.pretrain
        return TrainerConfig(n_steps=p.n_steps, batch_size=p.batch_size,
                             learning_rate=p.learning_rate,
                             weight_decay=p.weight_decay,
                             prompt_dropout=p.prompt_dropout,
                             ema_decay=p.ema_decay, seed=p.seed)


def load_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    except FileNotFoundError:
        raise
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config: {exc}") from exc
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    try:
        return RunConfig.from_dict(raw)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def save_config(path, config: RunConfig):
    with open(path, "w") as fh:
        yaml.safe_dump(config.to_dict(), fh, sort_keys=True)
