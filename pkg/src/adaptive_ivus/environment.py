"""Episodic acquisition environment: one frame per step, scored against full acquisition."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from adaptive_ivus import quality
from adaptive_ivus.beamform import ImageGrid, reconstruct
from adaptive_ivus.simkernel import ArrayGeometry, Scene, SceneSampler, advance_scene, simulate_rf
from adaptive_ivus.subsample import Mask, apply_mask

REWARD_KINDS = ("mse", "ssim_adv")
PREFILTER_KINDS = ("none", "threshold", "anisotropic_diffusion")


@dataclass(frozen=True)
class EnvConfig:
    episode_length: int = 10
    geometry: ArrayGeometry = field(default_factory=ArrayGeometry)
    grid: ImageGrid = field(default_factory=ImageGrid)
    scenes: SceneSampler = field(default_factory=lambda: SceneSampler(noise_std=0.04))
    reward: str = "mse"
    prefilter: str = "threshold"
    threshold: float = 0.5
    diffusion: quality.DiffusionConfig = field(default_factory=quality.DiffusionConfig)
    adversarial: quality.AdvRewardConfig = field(default_factory=quality.AdvRewardConfig)
    dynamic_range_db: float = 40.0

    def __post_init__(self):
        if self.episode_length < 1:
            raise ValueError("episode_length must be >= 1")
        if self.reward not in REWARD_KINDS:
            raise ValueError(f"reward must be one of {REWARD_KINDS}, got {self.reward!r}")
        if self.prefilter not in PREFILTER_KINDS:
            raise ValueError(f"prefilter must be one of {PREFILTER_KINDS}, got {self.prefilter!r}")
        self.grid.check(self.geometry)

    @property
    def num_measurements(self) -> int:
        return self.geometry.num_measurements


@dataclass
class StepResult:
    state: np.ndarray
    reward: float
    truncated: bool
    truth: np.ndarray
    mask: Mask
    info: dict = field(default_factory=dict)


class EpisodeEnded(RuntimeError):
    """Raised when stepping an episode that has already reached its time limit."""


class WireTargetEnv:
    """Revolving wire targets imaged frame by frame under the agent's masks.

    ``reset`` images frame 0 with every measurement; each ``step`` advances the
    scene, simulates one frame, reconstructs it from the masked channels and
    rewards agreement with the fully sampled reconstruction of that same frame.
    """

    def __init__(self, cfg: EnvConfig = EnvConfig(), seed: int = 0):
        self.cfg = cfg
        self.scene: Scene | None = None
        self.t = 0
        self.discriminator = None
        if cfg.reward == "ssim_adv":
            self.discriminator = quality.Discriminator(cfg.adversarial, np.random.default_rng([seed, 1]))

    def image(self, rf: np.ndarray) -> np.ndarray:
        return reconstruct(rf, self.cfg.geometry, self.cfg.grid, self.cfg.dynamic_range_db)

    def filter(self, img):
        """The configured pre-filter; rewards and reported metrics both see filtered images."""
        return quality.prefilter(img, self.cfg.prefilter, self.cfg.threshold, self.cfg.diffusion)

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        self.scene = self.cfg.scenes.sample(rng, self.cfg.geometry, self.cfg.grid.max_depth)
        self.t = 0
        return self.image(simulate_rf(self.scene, self.cfg.geometry))

    def step(self, action: Mask) -> StepResult:
        if self.scene is None:
            raise EpisodeEnded("call reset() before step()")
        if self.t >= self.cfg.episode_length:
            raise EpisodeEnded(f"episode already ended after {self.cfg.episode_length} steps")
        self.scene = advance_scene(self.scene)
        x = simulate_rf(self.scene, self.cfg.geometry)
        truth = self.image(x)
        state = self.image(apply_mask(action, x))
        s_f, truth_f = self.filter(state), self.filter(truth)
        info = {}
        if self.cfg.reward == "mse":
            reward = quality.reward_mse(s_f, truth_f)
        else:
            info["ssim"] = quality.ssim(s_f, truth_f)
            penalty, _ = quality.adversarial_reward(state, self.discriminator, real=truth)
            info["adv_penalty"] = penalty
            reward = quality.ssim_adv_reward(info["ssim"], penalty, self.cfg.adversarial.weight)
        self.t += 1
        return StepResult(state, reward, self.t == self.cfg.episode_length, truth, action, info)


def frame_metrics(state, truth) -> dict[str, float]:
    return {
        "mse": quality.mse(state, truth),
        "mae": quality.mae(state, truth),
        "psnr": quality.psnr(state, truth),
        "ssim": quality.ssim(state, truth),
    }


TRACE_FIELDS = ("episode", "step", "k", "mask_indices", "reward", "mse", "mae", "psnr", "ssim")


def trace_row(episode: int, step: int, result: StepResult, prefilter=None) -> dict:
    """One trace record; ``prefilter`` (e.g. ``env.filter``) is applied before scoring."""
    f = prefilter or (lambda img: img)
    row = {
        "episode": episode,
        "step": step,
        "k": result.mask.k,
        "mask_indices": " ".join(str(i) for i in result.mask.indices),
        "reward": result.reward,
    }
    row.update(frame_metrics(f(result.state), f(result.truth)))
    return row


def write_trace(path, rows) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=TRACE_FIELDS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    return path
