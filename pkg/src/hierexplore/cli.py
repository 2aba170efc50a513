"""Command-line harness: ``train``, ``eval``, ``codec-bench`` and ``render``.

Settings come from three layers: built-in defaults, an optional flat
``key = value`` file (``--config``), and command-line flags, which win.
Exit codes: 0 success, 2 configuration error, 3 I/O error, 4 numeric failure.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import os
import sys
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .cluster import MeanShiftConfig
from .errors import ConfigError, DomainError, NumericError
from .frontier import FrontierSet, detect_frontiers
from .global_planner import ModelParams, load_checkpoint, save_checkpoint
from .gridmap import FREE, OCCUPIED, UNKNOWN, close_free_space
from .learner import LogRow, PPOConfig, RewardConfig, log_csv, train
from .local_planner import UtilityParams
from .sim import (SIZE_CLASSES, Episode, GreedyPolicy, LearnedPolicy, SimConfig, World,
                  generate_world, metrics_csv, run_episode)

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4
COMMANDS = ("train", "eval", "codec-bench", "render")

CHECKPOINT_NAME = "checkpoint.mgnn"
TRAIN_LOG_NAME = "train_log.csv"
EVAL_NAME = "eval.csv"
CODEC_NAME = "codec.csv"
RENDER_NAME = "render.ppm"


@dataclass
class RunConfig:
    command: str = "eval"
    seed: int = 0
    size_class: str = "small"
    robots: int = 2
    episodes: int = 100
    steps_per_episode: int = 25
    policy: str = "greedy"       # "greedy", "learned:<checkpoint>", or a comma list
    output: str = "runs"
    world: str = ""              # world file; empty means generate from seed
    world_seed: int = -1         # train on this single world when >= 0
    resume: bool = False
    max_steps: int = 200
    sensor_range: int = 20
    closing_radius: int = 1
    # reward
    lam: float = 2.0
    r_time: float = -1.0
    # local planner
    c: float = 1.0
    k_g: float = 1.0
    k_l: float = 1.0
    U_G: float = 5.0
    U_L: float = 5.0
    theta: int = 10
    # clustering
    bandwidth_percentile: float = 15.0
    cluster_min_size: int = 2
    # PPO
    learning_rate: float = 3e-4
    clip_ratio: float = 0.2
    gamma: float = 0.99
    gae_lambda: float = 0.95
    entropy_coeff: float = 0.01
    value_coeff: float = 0.5
    epochs_per_update: int = 4
    max_grad_norm: float = 0.5
    reward_scale: float = 1e-3
    init_seed: int = 0
    # render
    scale: int = 4

    def sim_config(self) -> SimConfig:
        return SimConfig(
            n_robots=self.robots, sensor_range=self.sensor_range,
            cluster_min_size=self.cluster_min_size, max_steps=self.max_steps,
            closing_radius=self.closing_radius,
            utility=UtilityParams(c=self.c, k_g=self.k_g, k_l=self.k_l, U_G=self.U_G,
                                  U_L=self.U_L, theta=self.theta),
            clustering=MeanShiftConfig(percentile=self.bandwidth_percentile))

    def ppo_config(self) -> PPOConfig:
        return PPOConfig(clip_ratio=self.clip_ratio, learning_rate=self.learning_rate,
                         epochs_per_update=self.epochs_per_update, gamma=self.gamma,
                         gae_lambda=self.gae_lambda, entropy_coeff=self.entropy_coeff,
                         value_coeff=self.value_coeff, max_grad_norm=self.max_grad_norm,
                         episodes=self.episodes, steps_per_episode=self.steps_per_episode,
                         reward_scale=self.reward_scale)

    def reward_config(self) -> RewardConfig:
        return RewardConfig(r_time=self.r_time, lam=self.lam)

    def validate(self) -> None:
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}")
        if self.size_class not in SIZE_CLASSES:
            raise ConfigError(f"size_class must be one of {sorted(SIZE_CLASSES)}")
        if self.robots < 1 or self.episodes < 0 or self.steps_per_episode < 0:
            raise ConfigError("robots >= 1, episodes >= 0 and steps_per_episode >= 0 required")
        if self.scale < 1:
            raise ConfigError("scale must be >= 1")
        try:
            self.sim_config()
            self.ppo_config()
            self.reward_config()
        except DomainError as exc:
            raise ConfigError(str(exc)) from exc


_FIELDS = {f.name: f for f in fields(RunConfig)}


def _coerce(name: str, raw):
    f = _FIELDS.get(name)
    if f is None:
        raise ConfigError(f"unknown setting {name!r}")
    kind = type(f.default)
    if not isinstance(raw, str):
        return raw
    try:
        if kind is bool:
            low = raw.strip().lower()
            if low not in ("1", "0", "true", "false", "yes", "no"):
                raise ValueError(raw)
            return low in ("1", "true", "yes")
        return kind(raw.strip())
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {raw!r}") from exc


def parse_config_text(text: str) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment; dashes in keys become underscores."""
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        out[key] = _coerce(key, value)
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hierexplore",
                                     description="Hierarchical multi-robot exploration toolkit")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", help="key = value settings file (flags take precedence)")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override any setting; repeatable")
    for name, f in _FIELDS.items():
        if name == "command":
            continue
        flag = "--" + name.replace("_", "-")
        if f.type in ("bool", bool):
            parser.add_argument(flag, dest=name, default=None, action="store_const", const=True)
        else:
            parser.add_argument(flag, dest=name, default=None)
    return parser


def load_config(argv) -> RunConfig:
    args = build_parser().parse_args(argv)
    values = {}
    if args.config:
        try:
            values.update(parse_config_text(Path(args.config).read_text()))
        except OSError as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
    for name in _FIELDS:
        if name != "command" and getattr(args, name, None) is not None:
            values[name] = _coerce(name, getattr(args, name))
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        key = key.strip().replace("-", "_")
        values[key] = _coerce(key, value)
    values.pop("command", None)
    cfg = RunConfig(command=args.command, **values)
    cfg.validate()
    return cfg


# -- helpers --------------------------------------------------------------------

def _out_dir(cfg: RunConfig) -> Path:
    path = Path(cfg.output)
    path.mkdir(parents=True, exist_ok=True)
    if not os.access(path, os.W_OK):
        raise PermissionError(f"output directory {path} is not writable")
    return path


def _load_world(cfg: RunConfig, seed: int) -> World:
    if cfg.world:
        try:
            text = Path(cfg.world).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read world {cfg.world}: {exc}") from exc
        try:
            return World.from_text(text, seed=seed)
        except ValueError as exc:
            raise ConfigError(f"bad world file {cfg.world}: {exc}") from exc
    return generate_world(seed, cfg.size_class, cfg.robots)


def _policies(cfg: RunConfig) -> list:
    out = []
    for spec in (s.strip() for s in cfg.policy.split(",") if s.strip()):
        if spec == "greedy":
            out.append(GreedyPolicy())
        elif spec.startswith("learned:"):
            path = spec.split(":", 1)[1]
            if not Path(path).is_file():
                raise ConfigError(f"checkpoint {path!r} does not exist")
            try:
                out.append(LearnedPolicy(load_checkpoint(path)))
            except DomainError as exc:
                raise ConfigError(str(exc)) from exc
        else:
            raise ConfigError(f"unknown policy {spec!r}")
    if not out:
        raise ConfigError("no policy given")
    return out


# -- commands -------------------------------------------------------------------

def run_train(cfg: RunConfig) -> Path:
    out = _out_dir(cfg)
    ckpt, log_path = out / CHECKPOINT_NAME, out / TRAIN_LOG_NAME
    sim_cfg, ppo, reward = cfg.sim_config(), cfg.ppo_config(), cfg.reward_config()
    start = 0
    if cfg.resume and ckpt.is_file() and log_path.is_file():
        params = load_checkpoint(ckpt)
        start = max(0, len(log_path.read_text().splitlines()) - 1)
    else:
        params = ModelParams.initialize(cfg.init_seed)
        save_checkpoint(params, ckpt)
        log_path.write_text(log_csv([]))

    def make_episode(i: int) -> Episode:
        world_seed = cfg.world_seed if cfg.world_seed >= 0 else cfg.seed * 100_003 + i
        return Episode(_load_world(cfg, world_seed), sim_cfg, world_seed)

    def on_episode(row: LogRow, p: ModelParams) -> None:
        save_checkpoint(p, ckpt)
        with open(log_path, "a") as fh:
            fh.write(log_csv([row], header=False))

    train(params, make_episode, ppo, reward, seed=cfg.seed, start_episode=start,
          on_episode=on_episode)
    return ckpt


def run_eval(cfg: RunConfig) -> Path:
    policies = _policies(cfg)
    out = _out_dir(cfg)
    sim_cfg = cfg.sim_config()
    blocks = []
    for policy in policies:
        rows = [run_episode(sim_cfg, _load_world(cfg, cfg.seed + i), policy, cfg.seed + i)
                for i in range(cfg.episodes)]
        text = metrics_csv(rows)
        blocks.append(text if not blocks else text.split("\n", 1)[1])
    path = out / EVAL_NAME
    path.write_text("".join(blocks))
    return path


def run_codec_bench(cfg: RunConfig) -> Path:
    out = _out_dir(cfg)
    sim_cfg = cfg.sim_config()
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["seed", "size_class", "steps", "dense_bytes", "sparse_bytes",
                     "reduction_pct"])
    dense = sparse = 0
    for i in range(cfg.episodes):
        m = run_episode(sim_cfg, _load_world(cfg, cfg.seed + i), GreedyPolicy(), cfg.seed + i)
        dense += m.dense_bytes
        sparse += m.sparse_bytes
        writer.writerow([m.seed, m.size_class, m.steps, m.dense_bytes, m.sparse_bytes,
                         f"{m.reduction_pct:.4f}"])
    total = 100.0 * (1.0 - sparse / dense) if dense else 0.0
    writer.writerow(["total", cfg.size_class, "", dense, sparse, f"{total:.4f}"])
    path = out / CODEC_NAME
    path.write_text(buf.getvalue())
    print(f"dense {dense} B, sparse {sparse} B, reduction {total:.2f}%")
    return path


# render colours
WHITE, BLACK, GRAY = (255, 255, 255), (0, 0, 0), (128, 128, 128)
UN_COLOUR, OCC_COLOUR, BOTH_COLOUR = (0, 160, 255), (230, 40, 40), (200, 0, 200)
TRAIL_COLOURS = [(40, 180, 60), (255, 150, 0), (120, 60, 200), (0, 170, 170),
                 (200, 200, 0), (160, 80, 40)]


def render_ppm(grid, frontiers: FrontierSet | None = None, trails=(), scale: int = 1) -> bytes:
    """Binary PPM of a tri-state grid with frontiers and robot trails overlaid."""
    grid = np.asarray(grid)
    h, w = grid.shape
    img = np.empty((h, w, 3), dtype=np.uint8)
    img[grid == FREE] = WHITE
    img[grid == OCCUPIED] = BLACK
    img[grid == UNKNOWN] = GRAY
    if frontiers is None:
        frontiers = detect_frontiers(grid)
    un = {tuple(c) for c in frontiers.f_un.tolist()}
    occ = {tuple(c) for c in frontiers.f_occ.tolist()}
    for x, y in un | occ:
        img[y, x] = BOTH_COLOUR if (x, y) in un and (x, y) in occ else (
            UN_COLOUR if (x, y) in un else OCC_COLOUR)
    for i, trail in enumerate(trails):
        colour = TRAIL_COLOURS[i % len(TRAIL_COLOURS)]
        for x, y in trail:
            img[y, x] = colour
    if scale > 1:
        img = img.repeat(scale, axis=0).repeat(scale, axis=1)
    return f"P6\n{img.shape[1]} {img.shape[0]}\n255\n".encode() + img.tobytes()


def run_render(cfg: RunConfig) -> Path:
    out = _out_dir(cfg)
    world = _load_world(cfg, cfg.seed)
    if cfg.steps_per_episode == 0:
        grid, trails = world.truth, []
    else:
        episode = Episode(world, dataclasses.replace(cfg.sim_config(),
                                                     max_steps=cfg.steps_per_episode), cfg.seed)
        policy = _policies(cfg)[0]
        while episode.done is None:
            episode.act(policy(episode.state))
        grid = close_free_space(episode.explored(), cfg.closing_radius)
        trails = [r.trail for r in episode.robots]
    path = out / RENDER_NAME
    path.write_bytes(render_ppm(grid, None, trails, cfg.scale))
    return path


RUNNERS = {"train": run_train, "eval": run_eval, "codec-bench": run_codec_bench,
           "render": run_render}


def main(argv=None) -> int:
    try:
        cfg = load_config(sys.argv[1:] if argv is None else argv)
        path = RUNNERS[cfg.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    print(path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
