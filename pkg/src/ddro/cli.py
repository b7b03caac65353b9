"""Command-line entry points: pretrain, train, eval, verify, select-experts.

Every command is a pure function of (config file, input checkpoints, seed):
rerunning with the same inputs reproduces the same output bytes. Exit codes
are categorized: 0 success, 2 config error, 3 numeric failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from . import checkpoint, numerics as nm, report
from .config import ConfigError, RunConfig, load_config, save_config
from .evaluation import win_rate
from .numerics import NumericOverflowError
from .oracle import verify_derivation
from .trainer import HISTORY_COLUMNS, TrainingDiverged, dro_train, pretrain_reference
from .world import build_pool, select_experts

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_IO = 4


def _load(args) -> RunConfig:
    cfg = load_config(args.config)
    if args.seed_override is not None:
        cfg.seed = args.seed_override
        cfg.pretrain.seed = args.seed_override
        cfg.trainer.seed = args.seed_override
        cfg.experts.seed = args.seed_override
        cfg.eval.seed = args.seed_override
        cfg.verify.seed = args.seed_override
    if args.out is not None:
        cfg.out_dir = args.out
    return cfg


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_pretrain(args) -> int:
    cfg = _load(args)
    out = _out_dir(cfg)
    world = cfg.make_world()
    sched = cfg.make_schedule()
    ref = pretrain_reference(world, sched, cfg.make_arch(),
                             cfg.make_pretrain_trainer_config())
    ckpt = out / "reference.ckpt"
    checkpoint.save_params(ckpt, ref)
    save_config(out / "config.yaml", cfg)
    print(f"wrote {ckpt}")
    return EXIT_OK


def cmd_select_experts(args) -> int:
    cfg = _load(args)
    out = _out_dir(cfg)
    world = cfg.make_world()
    sched = cfg.make_schedule()
    ref = checkpoint.load_params(args.reference)
    pool = build_pool(world, ref, sched, cfg.experts.pool_per_condition,
                      cfg.experts.seed, guidance=cfg.experts.guidance)
    demos = select_experts(pool, cfg.experts.top_k)
    path = out / "experts.csv"
    demos.to_csv(path)
    print(f"wrote {path} (mean expert reward {demos.mean_score():.4f})")
    return EXIT_OK


def _load_demos_csv(path):
    from .world import DemoSet

    per_c = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            c = int(row["condition"])
            per_c.setdefault(c, []).append(
                (np.array([float(row["x0"]), float(row["x1"])]), float(row["score"])))
    return DemoSet(per_condition=per_c)


def cmd_train(args) -> int:
    cfg = _load(args)
    out = _out_dir(cfg)
    world = cfg.make_world()
    sched = cfg.make_schedule()
    ref = checkpoint.load_params(args.reference)
    demos = _load_demos_csv(args.experts)
    state = checkpoint.load_train_state(args.resume) if args.resume else None
    phi, ema_params, history, final_state = dro_train(
        ref, demos, sched, cfg.trainer, world=world, state=state)
    checkpoint.save_params(out / "dro.ckpt", phi)
    checkpoint.save_params(out / "dro_ema.ckpt", ema_params)
    checkpoint.save_train_state(out / "train_state.ckpt", final_state)
    hist_path = out / "history.csv"
    mode = "a" if args.resume and hist_path.exists() else "w"
    if mode == "a":
        with open(hist_path, "a", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(HISTORY_COLUMNS))
            for row in history:
                writer.writerow({k: row[k] for k in HISTORY_COLUMNS})
    else:
        report.write_history_csv(hist_path, history, HISTORY_COLUMNS)
    report.render_history(hist_path)
    print(f"wrote {hist_path} and checkpoints in {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _load(args)
    out = _out_dir(cfg)
    world = cfg.make_world()
    sched = cfg.make_schedule()
    model_a = checkpoint.load_params(args.ckpt_a)
    model_b = checkpoint.load_params(args.ckpt_b)
    rep = win_rate(world, sched, model_a, model_b,
                   conditions=range(world.n_conditions),
                   n_prompts=cfg.eval.n_prompts,
                   n_per_prompt=cfg.eval.n_per_prompt,
                   w=cfg.eval.guidance, seed=cfg.eval.seed)
    (out / "eval_report.json").write_text(rep.to_json())
    rep.to_csv(out / "eval_report.csv")
    report.render_win_rates(rep, out / "eval_report.png")
    print(f"win_rate={rep.win_rate:.4f} (A={args.ckpt_a} vs B={args.ckpt_b})")
    return EXIT_OK


def cmd_verify(args) -> int:
    cfg = _load(args)
    out = _out_dir(cfg)
    from .denoiser import DenoiserArch, init_denoiser
    from .schedule import build_schedule

    world = cfg.make_world()
    v = cfg.verify
    rng = nm.make_rng(v.seed)
    failed = False
    reports = {}
    for sigma_mode in ("beta", "posterior"):
        sched = build_schedule(v.T, 0.02, 0.4, sigma_mode=sigma_mode,
                               lam_mode="analytic")
        if args.corrupt_lambda:
            sched = sched.with_lams(2.0 * sched.lams)
        arch = DenoiserArch(data_dim=2, hidden=tuple(v.hidden),
                            n_conditions=world.n_conditions, cond_dim=4,
                            n_freq=4, horizon=v.T)
        phi = init_denoiser(arch, nm.spawn_seed(rng))
        ref = init_denoiser(arch, nm.spawn_seed(rng))
        policy = init_denoiser(arch, nm.spawn_seed(rng))
        rep = verify_derivation(phi, ref, policy, sched, world, v.n_draws,
                                nm.spawn_seed(rng))
        reports[sigma_mode] = rep
        status = "PASS" if rep.passed else "FAIL"
        print(f"sigma_mode={sigma_mode}: {status} "
              f"(max rel deviation {rep.max_rel_deviation:.3e})")
        failed = failed or not rep.passed
    import json
    from dataclasses import asdict

    payload = json.dumps({k: asdict(rep) for k, rep in reports.items()},
                         indent=2, sort_keys=True)
    (out / "verify_report.json").write_text(payload)
    return EXIT_NUMERIC if failed else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ddro",
                                     description="Toy diffusion ranking optimization")
    parser.add_argument("--config", required=True, help="run config YAML")
    parser.add_argument("--seed-override", type=int, default=None)
    parser.add_argument("--out", default=None, help="output directory override")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("pretrain", help="train the reference model")

    p = sub.add_parser("select-experts", help="build pool and keep top-K per condition")
    p.add_argument("--reference", required=True)

    p = sub.add_parser("train", help="run ranking optimization")
    p.add_argument("--reference", required=True)
    p.add_argument("--experts", required=True)
    p.add_argument("--resume", default=None, help="train-state checkpoint to resume")

    p = sub.add_parser("eval", help="win rate between two checkpoints")
    p.add_argument("--ckpt-a", required=True)
    p.add_argument("--ckpt-b", required=True)

    p = sub.add_parser("verify", help="check the derivation oracle")
    p.add_argument("--corrupt-lambda", action="store_true",
                   help="negative control: double the analytic weights")
    return parser


COMMANDS = {"pretrain": cmd_pretrain, "select-experts": cmd_select_experts,
            "train": cmd_train, "eval": cmd_eval, "verify": cmd_verify}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, checkpoint.CheckpointError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericOverflowError, TrainingDiverged) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
