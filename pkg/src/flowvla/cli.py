"""Command-line entry point: ``flowvla <subcommand> [options]``.

Settings come from an INI file (``--config``) with ``[run]``, ``[model]``,
``[train]``, ``[data]``, ``[flow]`` and ``[controller]`` sections; flags
override the file. Every output directory receives the resolved
``config.ini``, which re-creates the run when passed back via ``--config``.
"""

from __future__ import annotations

import argparse
import configparser
import io
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .data import gen_episodes, read_dataset, write_episodes
from .flow import FlowConfig
from .inference import ControllerConfig, HumanCommands, evaluate, profile, profile_csv, sample_chunk
from .model import COMPACT, DESK, TINY, build_model, load_checkpoint, save_checkpoint
from .sim import ToyEnv
from .training import TrainConfig, TrainingDiverged, finetune, pretrain
from .verify import run_suites

PRESETS = {"desk": DESK, "compact": COMPACT, "tiny": TINY}
COMMANDS = ("gen-data", "pretrain", "finetune", "eval", "sample", "bench", "gradcheck", "verify")

DEFAULTS = {
    "run": {"seed": "0", "out": "runs/latest", "arch": "two-expert", "checkpoint": "", "data": "",
            "task": "", "embodiment": "", "episodes": "10", "human_commands": ""},
    "model": {"preset": "compact"},
    "train": {},
    "data": {"mixture": "reach:arm reach:dual pick_place:arm pick_place:mobile sort:arm fold:dual",
             "episodes_per_pair": "50", "noise": "0.5"},
    "flow": {"steps": "10"},
    "controller": {"execute_k": "25"},
}


class UsageError(Exception):
    pass


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="INI file with run settings")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--arch", choices=("two-expert", "small"))
    common.add_argument("--steps", type=int, help="training steps")
    common.add_argument("--episodes", type=int, help="episodes to generate or evaluate")
    common.add_argument("--execute-k", type=int, help="actions executed per chunk")
    common.add_argument("--flow-steps", type=int, help="Euler integration steps")
    common.add_argument("--checkpoint", type=Path)
    common.add_argument("--data", type=Path, help="episode root directory")
    common.add_argument("--task")
    common.add_argument("--embodiment")
    common.add_argument("--human-commands", type=Path, help="file of subcommands, one per line")
    parser = argparse.ArgumentParser(prog="flowvla", description="Flow-matching action-chunk policies on toy robots.")
    parser.add_argument("--version", action="version", version=f"flowvla {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="{" + ",".join(COMMANDS) + "}")
    helps = {
        "gen-data": "write scripted-expert episodes",
        "pretrain": "train on a multi-task, multi-embodiment mixture",
        "finetune": "train a checkpoint on one task",
        "eval": "closed-loop rollouts under flat / commander / human-file language",
        "sample": "print one action chunk as CSV",
        "bench": "print the per-part latency CSV",
        "gradcheck": "finite-difference check of the loss gradient",
        "verify": "run every invariant suite",
    }
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=helps[name])
    return parser


def resolve(args) -> configparser.ConfigParser:
    cfg = configparser.ConfigParser()
    cfg.read_dict(DEFAULTS)
    if args.config is not None:
        if not args.config.exists():
            raise UsageError(f"config file {args.config} not found")
        cfg.read(args.config)
    overrides = {
        ("run", "seed"): args.seed, ("run", "out"): args.out, ("run", "arch"): args.arch,
        ("run", "checkpoint"): args.checkpoint, ("run", "data"): args.data, ("run", "task"): args.task,
        ("run", "embodiment"): args.embodiment, ("run", "episodes"): args.episodes,
        ("run", "human_commands"): args.human_commands, ("train", "steps"): args.steps,
        ("flow", "steps"): args.flow_steps, ("controller", "execute_k"): args.execute_k,
    }
    for (section, key), value in overrides.items():
        if value is not None:
            cfg[section][key] = str(value)
    return cfg


def write_config(cfg: configparser.ConfigParser, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    cfg.write(buf)
    (out / "config.ini").write_text(buf.getvalue())


def model_config(cfg):
    section = dict(cfg["model"])
    preset = section.pop("preset", "compact")
    if preset not in PRESETS:
        raise UsageError(f"unknown model preset {preset!r}; choose from {sorted(PRESETS)}")
    return PRESETS[preset].replace(**{k: type(getattr(PRESETS[preset], k))(v) for k, v in section.items()})


def train_config(cfg, phase: str) -> TrainConfig:
    options = dict(cfg["train"])
    options.setdefault("phase", phase)
    options.setdefault("seed", cfg["run"]["seed"])
    steps = int(options.get("steps", TrainConfig.steps))
    if "warmup" not in options and steps <= TrainConfig.warmup:
        options["warmup"] = str(steps // 10)
    return TrainConfig.from_dict(options)


def flow_config(cfg) -> FlowConfig:
    return FlowConfig(steps=cfg["flow"].getint("steps"))


def _mixture_pairs(cfg) -> list[tuple[str, str]]:
    pairs = []
    for item in cfg["data"]["mixture"].split():
        task, _, emb = item.partition(":")
        pairs.append((task, emb))
    return pairs


def _datasets(cfg, pairs) -> dict:
    root = cfg["run"]["data"]
    if root:
        found = read_dataset(root)
        missing = [p for p in pairs if p not in found]
        if missing:
            raise UsageError(f"data directory {root} has no episodes for {missing}")
        return {p: found[p] for p in pairs}
    n = cfg["data"].getint("episodes_per_pair")
    seed = cfg["run"].getint("seed")
    noise = cfg["data"].getfloat("noise")
    return {(t, e): gen_episodes(e, t, n, np.random.default_rng([seed, i]), noise=noise)
            for i, (t, e) in enumerate(pairs)}


def _task_pair(cfg) -> tuple[str, str]:
    run = cfg["run"]
    return run["task"] or "pick_place", run["embodiment"] or "arm"


def _load_model(cfg):
    path = cfg["run"]["checkpoint"]
    if not path:
        raise UsageError("this command needs --checkpoint")
    model, _ = load_checkpoint(path)
    return model


# -- subcommands ----------------------------------------------------------------

def cmd_gen_data(cfg, out: Path) -> int:
    run = cfg["run"]
    pairs = [_task_pair(cfg)] if run["task"] else _mixture_pairs(cfg)
    n = run.getint("episodes")
    for i, (task, emb) in enumerate(pairs):
        eps = gen_episodes(emb, task, n, np.random.default_rng([run.getint("seed"), i]),
                           noise=cfg["data"].getfloat("noise"))
        write_episodes(out / "data", eps)
        print(f"{emb}/{task}: {len(eps)} episodes, {sum(len(e) for e in eps)} steps")
    return 0


def cmd_pretrain(cfg, out: Path) -> int:
    tc = train_config(cfg, "pretrain")
    model = build_model(model_config(cfg), cfg["run"]["arch"], tc.seed)
    if tc.steps == 0:
        save_checkpoint(out / "checkpoint.bin", model, {"phase": "init", "steps": 0, "seed": tc.seed})
        print(f"wrote initial checkpoint {out / 'checkpoint.bin'}")
        return 0
    result = pretrain(model, _datasets(cfg, _mixture_pairs(cfg)), tc, flow_config=flow_config(cfg))
    path = result.save(out)
    print(f"final loss {result.log[-1]['loss']:.4f}; wrote {path}")
    return 0


def cmd_finetune(cfg, out: Path) -> int:
    tc = train_config(cfg, "finetune")
    model = _load_model(cfg)
    data = _datasets(cfg, [_task_pair(cfg)])
    result = finetune(model, data, tc, arch=cfg["run"]["arch"], flow_config=flow_config(cfg))
    path = result.save(out)
    last = f"final loss {result.log[-1]['loss']:.4f}; " if result.log else ""
    print(f"{last}wrote {path}")
    return 0


def cmd_eval(cfg, out: Path) -> int:
    model = _load_model(cfg)
    run = cfg["run"]
    n = run.getint("episodes")
    cc = ControllerConfig(horizon=model.config.horizon, execute_k=cfg["controller"].getint("execute_k"))
    seed = run.getint("seed")
    conditions = {"flat": "flat", "commander": "commander"}
    if run["human_commands"]:
        lines = Path(run["human_commands"]).read_text().splitlines()
        conditions["human"] = lambda: HumanCommands(lines)

    task, emb = _task_pair(cfg)

    def make_env(i):
        return ToyEnv(emb, task, seed=(seed, i))

    rows = ["condition,mean,stderr,n"]
    for name, mode in conditions.items():
        scores = evaluate(make_env, lambda env, rng: model, n, cc, seed, mode, flow_config(cfg))
        mean = float(np.mean(scores))
        err = float(np.std(scores, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
        print(f"{name}: {mean:.3f} +/- {err:.3f} (n={n})")
        rows.append(f"{name},{mean!r},{err!r},{n}")
    (out / "eval.csv").write_text("\n".join(rows) + "\n")
    return 0


def cmd_sample(cfg, out: Path) -> int:
    model = _load_model(cfg)
    run = cfg["run"]
    task, emb = _task_pair(cfg)
    env = ToyEnv(emb, task, seed=run.getint("seed"))
    chunk = sample_chunk(model, env.observe(), np.random.default_rng(run.getint("seed")), flow_config(cfg))
    acts = chunk.unpadded()
    lines = [",".join(f"a{j}" for j in range(acts.shape[1]))] + [",".join(repr(float(x)) for x in row) for row in acts]
    text = "\n".join(lines) + "\n"
    (out / "chunk.csv").write_text(text)
    sys.stdout.write(text)
    return 0


def cmd_bench(cfg, out: Path) -> int:
    run = cfg["run"]
    model = _load_model(cfg) if run["checkpoint"] else build_model(model_config(cfg), run["arch"], run.getint("seed"))
    task, emb = _task_pair(cfg)
    env = ToyEnv(emb, task, seed=run.getint("seed"))
    text = profile_csv(profile(model, env.observe(), flow_config(cfg)))
    (out / "timing.csv").write_text(text)
    sys.stdout.write(text)
    return 0


def _report(names) -> int:
    results = run_suites(names)
    for r in results:
        print(f"{'PASS' if r.ok else 'FAIL'}  {r.name}: {r.detail} ({r.seconds:.1f}s)")
    failed = [r.name for r in results if not r.ok]
    if failed:
        print("failed: " + ", ".join(failed), file=sys.stderr)
        return 1
    return 0


def cmd_gradcheck(cfg, out: Path) -> int:
    return _report({"gradcheck two-expert", "gradcheck small"})


def cmd_verify(cfg, out: Path) -> int:
    return _report(None)


HANDLERS = {
    "gen-data": cmd_gen_data, "pretrain": cmd_pretrain, "finetune": cmd_finetune, "eval": cmd_eval,
    "sample": cmd_sample, "bench": cmd_bench, "gradcheck": cmd_gradcheck, "verify": cmd_verify,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse already printed usage
        return int(exc.code or 0)
    try:
        cfg = resolve(args)
        out = Path(cfg["run"]["out"])
        write_config(cfg, out)
        return HANDLERS[args.command](cfg, out)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"flowvla {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, KeyError, FileNotFoundError, TrainingDiverged) as exc:
        print(f"flowvla {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
