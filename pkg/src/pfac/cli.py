"""Command-line entry point: ``pfac train | eval | pretrain-prey``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from pfac import harness
from pfac.algorithms import save_learner
from pfac.config import config_from_dict, load_config, save_config
from pfac.errors import ConfigurationError, TrainingDiverged, UsageError
from pfac.harness import ExperimentConfig

log = logging.getLogger("pfac")

RESOLVED_CONFIG = "config-resolved.json"
EXIT_OK, EXIT_FAILED, EXIT_USAGE = 0, 1, 2


def _resolve(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else config_from_dict({})
    changes = {}
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    if getattr(args, "scenario", None) is not None:
        changes["scenario"] = args.scenario
    if getattr(args, "algo", None) is not None:
        changes["predator_algo"] = args.algo
    if getattr(args, "episodes", None) is not None:
        changes["total_episodes" if args.command == "train" else "pretrain_episodes"] = args.episodes
    if getattr(args, "beta", None) is not None:
        changes["hyper"] = replace(cfg.hyper, beta=args.beta)
    if getattr(args, "prey_checkpoint", None) is not None:
        changes["prey_policy"] = "pretrained"
        changes["prey_checkpoint"] = str(args.prey_checkpoint)
    if "scenario" in changes and changes["scenario"] == "three_v_one_simultaneous":
        changes.setdefault("prey_policy", "trained_simultaneously")
    return replace(cfg, **changes) if changes else cfg


def cmd_train(args) -> int:
    cfg = _resolve(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_config(cfg, out / RESOLVED_CONFIG)
    try:
        result = harness.run_experiment(cfg, out_dir=out)
    except TrainingDiverged as exc:
        print(f"training aborted: {exc}", file=sys.stderr)
        return EXIT_FAILED
    last = result.records[-1]
    print(f"episodes={last.episode} success_rate_w200={last.success_rate_w200:.3f}")
    return EXIT_OK


def _find_run_files(path: Path) -> tuple[Path, Path]:
    """(checkpoint directory, resolved config) for a run or checkpoint directory."""
    if not path.is_dir():
        raise FileNotFoundError(f"checkpoint directory not found: {path}")
    ck = path / "checkpoints" if (path / "checkpoints").is_dir() else path
    for candidate in (path / RESOLVED_CONFIG, ck.parent / RESOLVED_CONFIG, ck / RESOLVED_CONFIG):
        if candidate.is_file():
            return ck, candidate
    raise FileNotFoundError(f"no {RESOLVED_CONFIG} next to {path}")


def cmd_eval(args) -> int:
    if args.episodes is None or args.episodes < 1:
        print("eval needs --episodes >= 1", file=sys.stderr)
        return EXIT_USAGE
    ck, cfg_path = _find_run_files(Path(args.checkpoints))
    cfg = load_config(args.config) if args.config else load_config(cfg_path)
    out = Path(args.out) if args.out else ck.parent if ck.name == "checkpoints" else ck
    out.mkdir(parents=True, exist_ok=True)
    rate = harness.evaluate_policy(ck, cfg, args.episodes, seed=args.seed or 0, out_path=out / "eval.csv")
    print(repr(float(rate)))
    return EXIT_OK


def cmd_pretrain_prey(args) -> int:
    cfg = _resolve(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_config(cfg, out / RESOLVED_CONFIG)
    try:
        learner = harness.pretrain_prey(cfg)
    except TrainingDiverged as exc:
        print(f"pretraining aborted: {exc}", file=sys.stderr)
        return EXIT_FAILED
    ck = out / "checkpoints"
    ck.mkdir(exist_ok=True)
    save_learner(learner, ck / "prey.json")
    for i in range(cfg.world.n_predators):
        (ck / f"predator_{i}.json").write_text(json.dumps(harness.scripted_doc("field_follower")))
    print(str(ck / "prey.json"))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pfac", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", type=Path, help="JSON run configuration")
        p.add_argument("--out", type=Path, required=True, help="output directory")
        p.add_argument("--seed", type=int)
        p.add_argument("--scenario", choices=sorted(harness.SCENARIOS))
        p.add_argument("--episodes", type=int)

    train = sub.add_parser("train", help="train predators and write metrics.csv and checkpoints")
    common(train)
    train.add_argument("--algo", choices=["ddpg", "pgddpg", "sarsa_ac2", "stochastic_ac2"])
    train.add_argument("--beta", type=float)
    train.add_argument("--prey-checkpoint", type=Path, help="frozen prey learner checkpoint")
    train.set_defaults(func=cmd_train)

    ev = sub.add_parser("eval", help="evaluate saved policies without exploration")
    ev.add_argument("--checkpoints", type=Path, required=True, help="run directory or its checkpoints/")
    ev.add_argument("--episodes", type=int, required=True)
    ev.add_argument("--seed", type=int, default=0)
    ev.add_argument("--config", type=Path, help="override the run's resolved config")
    ev.add_argument("--out", type=Path, help="directory for eval.csv")
    ev.set_defaults(func=cmd_eval)

    pre = sub.add_parser("pretrain-prey", help="train a DDPG prey against field-following predators")
    common(pre)
    pre.set_defaults(func=cmd_pretrain_prey)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigurationError, UsageError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
