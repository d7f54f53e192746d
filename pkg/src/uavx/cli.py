"""Command-line entry point: train experiments, compare runs, roll out policies.

Every artifact-producing command overwrites its output deterministically,
so repeating an invocation with the same seed and --out reproduces the
same CSV files byte for byte.
"""
from __future__ import annotations

import argparse
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError
from .memory import ReplayMemory
from .qpolicy import load_policy, save_policy, select_greedy
from .tensor_nn import save_network
from .trainer import (
    STRATEGIES,
    ExperimentConfig,
    apply_config_keys,
    config_snapshot,
    read_blocks_csv,
    run_episode,
    run_experiment,
    start_state,
    write_blocks_csv,
)
from .worldsim import load_world_config, preset_path

ENV_OUT_ROOT = "UAVX_OUT_ROOT"
TRAJECTORY_HEADER = "episode,step,x,y,z,heading,pitch,action,reward"

_SVG_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def resolve_config_path(value: str) -> Path:
    """A config argument is a file path or the name of a shipped preset."""
    path = Path(value)
    if path.is_file():
        return path
    try:
        return Path(str(preset_path(value)))
    except ConfigError:
        raise ConfigError(f"config not found: {value}") from None


def _now() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def _write_manifest(out_dir: Path, fields: dict, snapshot: str) -> None:
    with open(out_dir / "manifest.txt", "w", encoding="utf-8") as fh:
        for key, value in fields.items():
            fh.write(f"{key} = {value}\n")
        fh.write("[config]\n")
        fh.write(snapshot)


# ---------------------------------------------------------------------------
# train


def cmd_train(args) -> int:
    try:
        config_path = resolve_config_path(args.config)
        world, extras = load_world_config(config_path)
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    config = ExperimentConfig(world=world, strategy=args.strategy, seed=args.seed)
    if args.episodes is not None:
        config.episodes = args.episodes
    try:
        apply_config_keys(config, extras, source=str(config_path))
        overrides = {}
        for item in args.set or []:
            if "=" not in item:
                raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
            key, value = item.split("=", 1)
            overrides[key.strip()] = value.strip()
        apply_config_keys(config, overrides, source="--set")
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    out_root = os.environ.get(ENV_OUT_ROOT, "runs")
    label = f"{world.name or 'world'}-{config.strategy}-s{config.seed}"
    out_dir = Path(args.out) if args.out else Path(out_root) / label
    out_dir.mkdir(parents=True, exist_ok=True)

    started = _now()
    progress = None if args.quiet else lambda msg: print(msg, flush=True)
    result = run_experiment(config, episodes_csv=out_dir / "episodes.csv", progress=progress)
    write_blocks_csv(out_dir / "blocks.csv", result.blocks)

    ckpt_dir = out_dir / "checkpoints"
    save_policy(result.pair, ckpt_dir, global_step=result.global_steps)
    if hasattr(result.strategy, "domain"):
        save_network(result.strategy.domain.net, ckpt_dir / "domain.nn")

    snapshot = config_snapshot(config)
    with open(out_dir / "config.cfg", "w", encoding="utf-8") as fh:
        fh.write(config_path.read_text(encoding="utf-8"))
        fh.write("\n# resolved training parameters\n")
        fh.write(snapshot)
    _write_manifest(
        out_dir,
        {
            "version": __version__,
            "command": "train",
            "strategy": config.strategy,
            "seed": config.seed,
            "episodes": config.episodes,
            "world": config_path,
            "world_name": world.name,
            "out": out_dir,
            "started_utc": started,
            "finished_utc": _now(),
            "global_steps": result.global_steps,
        },
        snapshot,
    )
    if not args.quiet:
        final = result.blocks[-1]
        print(
            f"done: {config.episodes} episodes, final block mean reward "
            f"{final.mean_reward:.3f}, mean steps {final.mean_steps:.1f} -> {out_dir}"
        )
    return 0


# ---------------------------------------------------------------------------
# compare


def _write_series_csv(path: Path, labels, table: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("block_index," + ",".join(labels) + "\n")
        for idx in sorted(table):
            cells = [str(idx)]
            for label in labels:
                value = table[idx].get(label)
                cells.append("" if value is None else repr(value))
            fh.write(",".join(cells) + "\n")


def write_svg_lines(path: Path, title: str, series: dict) -> None:
    """Minimal line chart: one polyline per labelled series."""
    width, height, margin = 640, 400, 55
    xs_all = [x for xs, _ in series.values() for x in xs]
    ys_all = [y for _, ys in series.values() for y in ys]
    if not xs_all:
        xs_all, ys_all = [0.0, 1.0], [0.0, 1.0]
    x_lo, x_hi = min(xs_all), max(xs_all)
    y_lo, y_hi = min(ys_all), max(ys_all)
    x_span = (x_hi - x_lo) or 1.0
    y_span = (y_hi - y_lo) or 1.0

    def sx(x):
        return margin + (x - x_lo) / x_span * (width - 2 * margin)

    def sy(y):
        return height - margin - (y - y_lo) / y_span * (height - 2 * margin)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2}" y="20" text-anchor="middle" font-size="15">{title}</text>',
        f'<line x1="{margin}" y1="{height - margin}" x2="{width - margin}" '
        f'y2="{height - margin}" stroke="black"/>',
        f'<line x1="{margin}" y1="{margin}" x2="{margin}" y2="{height - margin}" stroke="black"/>',
        f'<text x="{margin}" y="{height - margin + 18}" font-size="11">{x_lo:g}</text>',
        f'<text x="{width - margin}" y="{height - margin + 18}" text-anchor="end" '
        f'font-size="11">{x_hi:g}</text>',
        f'<text x="{margin - 6}" y="{height - margin}" text-anchor="end" font-size="11">{y_lo:g}</text>',
        f'<text x="{margin - 6}" y="{margin + 4}" text-anchor="end" font-size="11">{y_hi:g}</text>',
    ]
    for i, (label, (xs, ys)) in enumerate(series.items()):
        color = _SVG_COLORS[i % len(_SVG_COLORS)]
        points = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in zip(xs, ys))
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{points}"/>')
        parts.append(
            f'<text x="{width - margin + 4}" y="{margin + 14 * i}" font-size="11" '
            f'fill="{color}">{label}</text>'
        )
    parts.append("</svg>")
    path.write_text("\n".join(parts), encoding="utf-8")


def cmd_compare(args) -> int:
    runs = []
    for run_dir in args.runs:
        blocks_path = Path(run_dir) / "blocks.csv"
        if not blocks_path.is_file():
            print(f"error: {blocks_path} does not exist", file=sys.stderr)
            return 1
        try:
            blocks = read_blocks_csv(blocks_path)
        except ConfigError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 1
        label = Path(run_dir).name or str(run_dir)
        runs.append((label, blocks))
    labels = []
    for label, _ in runs:
        while label in labels:
            label += "+"
        labels.append(label)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    reward_table: dict = {}
    steps_table: dict = {}
    for label, (_, blocks) in zip(labels, runs):
        for block in blocks:
            reward_table.setdefault(block.block_index, {})[label] = block.mean_reward
            steps_table.setdefault(block.block_index, {})[label] = block.mean_steps

    with open(out_dir / "comparison.csv", "w", encoding="utf-8") as fh:
        header = ["block_index"]
        for label in labels:
            header += [f"{label}_mean_reward", f"{label}_mean_steps"]
        fh.write(",".join(header) + "\n")
        for idx in sorted(reward_table):
            cells = [str(idx)]
            for label in labels:
                r = reward_table[idx].get(label)
                s = steps_table[idx].get(label)
                cells.append("" if r is None else repr(r))
                cells.append("" if s is None else repr(s))
            fh.write(",".join(cells) + "\n")

    _write_series_csv(out_dir / "mean_reward.csv", labels, reward_table)
    _write_series_csv(out_dir / "mean_steps.csv", labels, steps_table)
    if args.svg:
        for metric, table in (("mean_reward", reward_table), ("mean_steps", steps_table)):
            series = {}
            for label in labels:
                xs = [idx for idx in sorted(table) if label in table[idx]]
                ys = [table[idx][label] for idx in xs]
                series[label] = (xs, ys)
            write_svg_lines(out_dir / f"{metric}.svg", f"{metric} per episode block", series)
    print(f"compared {len(runs)} runs over {len(reward_table)} blocks -> {out_dir}")
    return 0


# ---------------------------------------------------------------------------
# rollout


class GreedyPolicy:
    name = "greedy"
    prioritized = False
    eps = 0.0

    def begin_episode(self, episode):
        pass

    def select(self, pair, state, mem, global_step, rng):
        return select_greedy(pair, state)

    def after_optimize(self, batch):
        pass


def cmd_rollout(args) -> int:
    root = Path(args.checkpoint)
    ckpt_dir = root / "checkpoints" if (root / "checkpoints").is_dir() else root
    config_arg = args.config or (
        str(root / "config.cfg") if (root / "config.cfg").is_file() else None
    )
    if config_arg is None:
        print("error: no world config found; pass --config", file=sys.stderr)
        return 1
    try:
        pair, _ = load_policy(ckpt_dir)
        world, extras = load_world_config(resolve_config_path(config_arg))
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    config = ExperimentConfig(world=world, episodes=max(1, args.n), seed=args.seed)
    try:
        apply_config_keys(config, extras, source=config_arg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    config.warmup = 10**18  # frozen policy: never optimize

    out_path = Path(args.out) if args.out else Path("trajectory.csv")
    out_path.parent.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(config.seed)
    mem = ReplayMemory(config.capacity)
    policy = GreedyPolicy()
    totals, lengths = [], []
    with open(out_path, "w", encoding="utf-8") as fh:
        fh.write(TRAJECTORY_HEADER + "\n")
        for episode in range(1, args.n + 1):
            trace: list = []
            total, steps, collided, _ = run_episode(
                config, world, start_state(world, rng), pair, policy, mem, rng, 0, trace=trace
            )
            for row in trace:
                step_i, x, y, z, heading, pitch, action, r = row
                fh.write(
                    f"{episode},{step_i},{x!r},{y!r},{z!r},{heading!r},{pitch!r},{action},{r!r}\n"
                )
            totals.append(total)
            lengths.append(steps)
    print(
        f"rollout: {args.n} greedy episodes, mean reward {np.mean(totals):.3f}, "
        f"mean steps {np.mean(lengths):.1f} -> {out_path}"
    )
    return 0


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="uavx",
        description="Train and compare depth-camera UAV obstacle-avoidance policies.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="run a training experiment")
    train.add_argument("--config", required=True, help="world config file or preset name")
    train.add_argument("--strategy", choices=STRATEGIES, default="epsilon_greedy")
    train.add_argument("--seed", type=int, default=0)
    train.add_argument("--episodes", type=int, default=None)
    train.add_argument("--out", default=None, help=f"output dir (default under ${ENV_OUT_ROOT})")
    train.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    train.add_argument("--quiet", action="store_true")
    train.set_defaults(func=cmd_train)

    compare = sub.add_parser("compare", help="join block metrics from several runs")
    compare.add_argument("runs", nargs="+", help="run directories containing blocks.csv")
    compare.add_argument("--out", default="compare")
    compare.add_argument("--svg", action="store_true", help="also write SVG line charts")
    compare.set_defaults(func=cmd_compare)

    rollout = sub.add_parser("rollout", help="run greedy episodes from a checkpoint")
    rollout.add_argument("--checkpoint", required=True, help="run dir or checkpoints dir")
    rollout.add_argument("--config", default=None, help="world config (default: the run's copy)")
    rollout.add_argument("--n", type=int, default=5)
    rollout.add_argument("--seed", type=int, default=0)
    rollout.add_argument("--out", default=None, help="trajectory CSV path")
    rollout.set_defaults(func=cmd_rollout)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
