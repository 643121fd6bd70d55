"""Run configuration and experiment drivers: train, eval, sweep and render."""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import typing
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np
import yaml

from adaptive_ivus import plots
from adaptive_ivus.agent import Agent, AgentConfig, ReplayMemory, Transition
from adaptive_ivus.beamform import scan_convert, to_uint8, write_pgm
from adaptive_ivus.environment import EnvConfig, WireTargetEnv, frame_metrics, trace_row, write_trace
from adaptive_ivus.gumbel import anneal_sigma
from adaptive_ivus.subsample import Mask, action_strip, random_mask

log = logging.getLogger(__name__)

METRICS = ("mse", "mae", "psnr", "ssim")
TRAIN_FIELDS = ("step", "episode", "frame", "reward", "sigma", "critic_loss", "actor_objective")
EVAL_FIELDS = ("step", "strategy", "return") + METRICS
CHECKPOINT_NAME = "checkpoint.ckpt"


@dataclass(frozen=True)
class RunConfig:
    """Everything a run depends on. ``factor`` fixes K = N / factor for the agent."""

    seed: int = 0
    factor: int = 4
    train_steps: int = 20_000
    eval_interval: int = 1_000
    periodic_eval_episodes: int = 10
    eval_episodes: int = 50
    eval_seed: int = 10_000
    anneal_fraction: float | None = 0.5
    eval_prefilter: bool = False
    augment_rotations: bool = True
    out_dir: str = "runs/default"
    sweep_factors: tuple[int, ...] = (2, 4, 8)
    sweep_seeds: int = 5
    env: EnvConfig = field(default_factory=EnvConfig)
    agent: AgentConfig = field(default_factory=AgentConfig)

    def __post_init__(self):
        n = self.env.num_measurements
        check_factor(self.factor, n)
        for f in self.sweep_factors:
            check_factor(f, n)
        if self.train_steps < 0:
            raise ValueError("train_steps must be >= 0")
        for name in ("eval_interval", "periodic_eval_episodes", "eval_episodes", "sweep_seeds"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.anneal_fraction is not None and not 0 < self.anneal_fraction <= 1:
            raise ValueError("anneal_fraction must lie in (0, 1]")

    @property
    def num_samples(self) -> int:
        return self.env.num_measurements // self.factor

    def agent_config(self) -> AgentConfig:
        """Agent settings with K, rotation group and annealing horizon filled in from the run."""
        gumbel = self.agent.gumbel
        if self.anneal_fraction is not None:
            gumbel = replace(gumbel, anneal_steps=max(1, round(self.anneal_fraction * self.train_steps)))
        rotations = self.env.geometry.num_elements if self.augment_rotations else self.agent.rotations
        return replace(self.agent, num_samples=self.num_samples, rotations=rotations, gumbel=gumbel)


def check_factor(factor: int, n: int) -> None:
    if factor < 1 or n % factor:
        raise ValueError(f"subsampling factor {factor} does not divide N={n}")


# ---------------------------------------------------------------------------
# config files

def config_to_dict(cfg) -> dict:
    def plain(v):
        if isinstance(v, tuple):
            return [plain(x) for x in v]
        if isinstance(v, dict):
            return {k: plain(x) for k, x in v.items()}
        return v

    return plain(dataclasses.asdict(cfg))


def _from_dict(cls, data, where: str):
    if not isinstance(data, dict):
        raise ValueError(f"config section {where or 'root'} must be a mapping")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ValueError(f"unknown config key(s) in {where or 'root'}: {', '.join(sorted(unknown))}")
    kwargs = {}
    for name, value in data.items():
        kwargs[name] = _coerce(hints[name], value, f"{where}.{name}" if where else name)
    return cls(**kwargs)


def _coerce(hint, value, where):
    if dataclasses.is_dataclass(hint):
        return _from_dict(hint, value, where)
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    if origin is typing.Union or (origin is not None and type(None) in args):
        if value is None:
            return None
        inner = [a for a in args if a is not type(None)]
        return _coerce(inner[0], value, where)
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ValueError(f"config field {where} expects a list")
        item = args[0] if args else object
        return tuple(_coerce(item, v, where) for v in value)
    if hint is bool:
        if not isinstance(value, bool):
            raise ValueError(f"config field {where} expects true or false")
        return value
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ValueError(f"config field {where} expects an integer, got {value!r}")
        return value
    if hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ValueError(f"config field {where} expects a number, got {value!r}")
        return float(value)
    if hint is str:
        if not isinstance(value, str):
            raise ValueError(f"config field {where} expects a string, got {value!r}")
        return value
    return value


def config_from_dict(data: dict) -> RunConfig:
    return _from_dict(RunConfig, data or {}, "")


def load_config(path) -> RunConfig:
    try:
        data = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as exc:
        raise ValueError(f"cannot parse config {path}: {exc}") from exc
    return config_from_dict(data or {})


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(config_to_dict(cfg), sort_keys=False)


# ---------------------------------------------------------------------------
# evaluation

Policy = Callable[[np.ndarray, np.random.Generator], Mask]


def agent_policy(agent: Agent) -> Policy:
    return lambda state, rng: agent.select_action(state, mode="eval")


def random_policy(k: int, n: int) -> Policy:
    return lambda state, rng: random_mask(k, n, rng)


def full_policy(n: int) -> Policy:
    return lambda state, rng: Mask.full(n)


def run_episodes(policy: Policy, env_cfg: EnvConfig, episodes: int, eval_seed: int,
                 prefiltered: bool = False) -> list[dict]:
    """Play ``episodes`` episodes; episode e always sees the scene drawn from ``[eval_seed, e]``.

    Metrics compare the last frame of each episode with its fully sampled
    reconstruction, optionally after the environment's pre-filter.
    """
    env = WireTargetEnv(env_cfg, seed=eval_seed)
    rows = []
    for e in range(episodes):
        state = env.reset(np.random.default_rng([eval_seed, e]))
        policy_rng = np.random.default_rng([eval_seed, e, 1])
        total = 0.0
        for _ in range(env_cfg.episode_length):
            res = env.step(policy(state, policy_rng))
            total += res.reward
            state = res.state
        row = {"episode": e, "return": total}
        score = env.filter if prefiltered else (lambda img: img)
        row.update(frame_metrics(score(res.state), score(res.truth)))
        rows.append(row)
    return rows


def summarize(rows: list[dict]) -> dict:
    return {key: float(np.mean([r[key] for r in rows])) for key in ("return",) + METRICS}


def _write_csv(path, fieldnames, rows) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=fieldnames)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    return path


def _comparison_rows(table: dict[str, dict]) -> list[dict]:
    """Metric-per-row layout with one column per strategy."""
    return [{"metric": m, **{name: table[name][m] for name in table}} for m in ("return",) + METRICS]


# ---------------------------------------------------------------------------
# commands

@dataclass
class TrainResult:
    agent: Agent
    summary: dict
    out_dir: Path


def cmd_train(cfg: RunConfig) -> TrainResult:
    """Warm up on random masks, train, evaluate periodically, then write logs and a checkpoint."""
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n, k = cfg.env.num_measurements, cfg.num_samples
    acfg = cfg.agent_config()
    env = WireTargetEnv(cfg.env, seed=cfg.seed)
    agent = Agent(acfg, n, seed=cfg.seed)
    memory = ReplayMemory(acfg.replay_capacity, agent.state_dim, n)
    env_rng = np.random.default_rng([cfg.seed, 3])
    warm_rng = np.random.default_rng([cfg.seed, 4])

    def periodic_eval(step):
        rows = run_episodes(agent_policy(agent), cfg.env, cfg.periodic_eval_episodes, cfg.eval_seed,
                            cfg.eval_prefilter)
        return {"step": step, "strategy": "learned", **summarize(rows)}

    random_row = {"step": 0, "strategy": "random",
                  **summarize(run_episodes(random_policy(k, n), cfg.env, cfg.periodic_eval_episodes, cfg.eval_seed,
                                           cfg.eval_prefilter))}
    eval_rows = [random_row, periodic_eval(0)]
    train_rows = []
    state = env.reset(env_rng)
    episode = 0
    for step in range(cfg.train_steps):
        sigma = anneal_sigma(max(step - acfg.warmup_steps, 0), acfg.gumbel)
        if step < acfg.warmup_steps:
            action = random_mask(k, n, warm_rng)
        else:
            action = agent.select_action(state, sigma)
        res = env.step(action)
        memory.add(Transition(agent.encode(state), action, res.reward, agent.encode(res.state), res.truncated))
        row = {"step": step + 1, "episode": episode, "frame": env.t, "reward": res.reward, "sigma": sigma,
               "critic_loss": "", "actor_objective": ""}
        if step >= acfg.warmup_steps:
            out_l = agent.learn(memory, sigma)
            if out_l is not None:
                row["critic_loss"], row["actor_objective"] = out_l
        train_rows.append(row)
        state = res.state
        if res.truncated:
            state = env.reset(env_rng)
            episode += 1
        if (step + 1) % cfg.eval_interval == 0:
            eval_rows.append(periodic_eval(step + 1))
            log.info("step %d  eval return %.1f  mse %.5f", step + 1, eval_rows[-1]["return"], eval_rows[-1]["mse"])
    if eval_rows[-1]["step"] != cfg.train_steps:
        eval_rows.append(periodic_eval(cfg.train_steps))

    final = evaluate_agent(agent, cfg)
    agent.save(out / CHECKPOINT_NAME)
    _write_csv(out / "train_log.csv", TRAIN_FIELDS, train_rows)
    _write_csv(out / "eval_log.csv", EVAL_FIELDS, eval_rows)
    _write_csv(out / "final_eval.csv", ("metric", "random", "learned"), _comparison_rows(final))
    learned = [r for r in eval_rows if r["strategy"] == "learned"]
    summary = {
        "seed": cfg.seed,
        "factor": cfg.factor,
        "num_samples": k,
        "train_steps": cfg.train_steps,
        "initial_eval_return": learned[0]["return"],
        "final_eval_return": learned[-1]["return"],
        "final": final,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    plots.learning_curve(learned, out / "learning_curve.png", random_row)
    return TrainResult(agent, summary, out)


def evaluate_agent(agent: Agent, cfg: RunConfig) -> dict[str, dict]:
    """Learned and random policies on the same ``eval_episodes`` seeded episodes."""
    n, k = cfg.env.num_measurements, cfg.num_samples
    return {
        "random": summarize(run_episodes(random_policy(k, n), cfg.env, cfg.eval_episodes, cfg.eval_seed,
                                         cfg.eval_prefilter)),
        "learned": summarize(run_episodes(agent_policy(agent), cfg.env, cfg.eval_episodes, cfg.eval_seed,
                                          cfg.eval_prefilter)),
    }


def load_agent(cfg: RunConfig, checkpoint) -> Agent:
    if checkpoint is None:
        raise ValueError("a checkpoint path is required (--checkpoint)")
    if not Path(checkpoint).is_file():
        raise FileNotFoundError(f"checkpoint not found: {checkpoint}")
    agent = Agent(cfg.agent_config(), cfg.env.num_measurements, seed=cfg.seed)
    agent.load(checkpoint)
    return agent


def cmd_eval(cfg: RunConfig, checkpoint) -> dict[str, dict]:
    """Table of mean final-frame metrics and returns, random versus learned, plus per-episode rows."""
    agent = load_agent(cfg, checkpoint)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n, k = cfg.env.num_measurements, cfg.num_samples
    per_episode = {
        "random": run_episodes(random_policy(k, n), cfg.env, cfg.eval_episodes, cfg.eval_seed, cfg.eval_prefilter),
        "learned": run_episodes(agent_policy(agent), cfg.env, cfg.eval_episodes, cfg.eval_seed, cfg.eval_prefilter),
    }
    table = {name: summarize(rows) for name, rows in per_episode.items()}
    _write_csv(out / "eval_table.csv", ("metric", "random", "learned"), _comparison_rows(table))
    rows = [{"strategy": name, **r} for name, rs in per_episode.items() for r in rs]
    _write_csv(out / "eval_episodes.csv", ("strategy", "episode", "return") + METRICS, rows)
    plots.metrics_bars({name: {m: t[m] for m in METRICS} for name, t in table.items()}, out / "eval_metrics.png")
    return table


def cmd_sweep(cfg: RunConfig, factors=None) -> list[dict]:
    """Train and evaluate every (factor, seed) cell; aggregate SSIM and MSE per factor and strategy."""
    factors = tuple(cfg.sweep_factors if factors is None else factors)
    n = cfg.env.num_measurements
    for f in factors:
        check_factor(f, n)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cells = []
    for f in factors:
        for i in range(cfg.sweep_seeds):
            seed = cfg.seed + i
            cell_cfg = replace(cfg, factor=f, seed=seed, out_dir=str(out / f"factor{f}_seed{seed}"))
            log.info("sweep cell factor=%d seed=%d", f, seed)
            final = cmd_train(cell_cfg).summary["final"]
            for strategy in ("random", "learned"):
                cells.append({"factor": f, "seed": seed, "strategy": strategy, **final[strategy]})
    _write_csv(out / "sweep_cells.csv", ("factor", "seed", "strategy", "return") + METRICS, cells)
    summary = aggregate_sweep(cells)
    _write_csv(out / "sweep_summary.csv", tuple(summary[0].keys()), summary)
    plots.sweep_curve(summary, out / "sweep_ssim.png")
    return summary


def aggregate_sweep(cells: list[dict]) -> list[dict]:
    out = []
    for f in sorted({c["factor"] for c in cells}):
        for strategy in ("random", "learned"):
            sel = [c for c in cells if c["factor"] == f and c["strategy"] == strategy]
            row = {"factor": f, "strategy": strategy, "seeds": len(sel)}
            for m in ("ssim", "mse"):
                vals = np.array([c[m] for c in sel])
                row[f"{m}_mean"] = float(vals.mean())
                row[f"{m}_std"] = float(vals.std())
            out.append(row)
    return out


def cmd_render(cfg: RunConfig, checkpoint) -> list[Path]:
    """One evaluation episode as scan-converted frames, action strips, a montage and a trace."""
    agent = load_agent(cfg, checkpoint)
    out = Path(cfg.out_dir)
    (out / "frames").mkdir(parents=True, exist_ok=True)
    (out / "actions").mkdir(parents=True, exist_ok=True)
    env = WireTargetEnv(cfg.env, seed=cfg.eval_seed)
    state = env.reset(np.random.default_rng([cfg.eval_seed, 0]))
    frames, strips, trace, paths = [], [], [], []
    for t in range(1, cfg.env.episode_length + 1):
        mask = agent.select_action(state, mode="eval")
        res = env.step(mask)
        frame = to_uint8(scan_convert(res.state, cfg.env.geometry, cfg.env.grid))
        strip = action_strip(mask, cfg.env.geometry)
        paths.append(write_pgm(out / "frames" / f"frame_{t:02d}.pgm", frame))
        paths.append(write_pgm(out / "actions" / f"action_{t:02d}.pgm", strip))
        frames.append(frame)
        strips.append(strip)
        trace.append(trace_row(0, t, res, env.filter if cfg.eval_prefilter else None))
        state = res.state
    paths.append(write_trace(out / "episode_trace.csv", trace))
    paths.append(plots.episode_montage(frames, strips, out / "episode.png"))
    return paths
