"""Actor-critic learner that picks K measurements per frame with Gumbel top-K."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from adaptive_ivus import neural
from adaptive_ivus.beamform import angle_profile, downsample_area
from adaptive_ivus.gumbel import (
    GumbelConfig,
    relaxed_top_k,
    relaxed_top_k_backward,
    sample_gumbel,
    top_k_indices,
)
from adaptive_ivus.subsample import Mask


STATE_ENCODINGS = ("angle_profile", "image")


@dataclass(frozen=True)
class AgentConfig:
    num_samples: int = 40
    gamma: float = 0.9
    actor_lr: float = 1e-3
    critic_lr: float = 1e-3
    batch_size: int = 64
    tau_target: float = 0.01
    replay_capacity: int = 10_000
    warmup_steps: int = 200
    reward_scale: float = 0.005
    actor_hidden: tuple[int, ...] = (256, 256)
    critic_hidden: tuple[int, ...] = (256, 256)
    state_encoding: str = "angle_profile"
    encoding: tuple[int, int] = (32, 32)
    rotations: int = 0
    actor_final_scale: float = 0.1
    gumbel: GumbelConfig = field(default_factory=GumbelConfig)

    def __post_init__(self):
        if not 0 <= self.gamma < 1:
            raise ValueError("gamma must lie in [0, 1)")
        if not 0 < self.tau_target <= 1:
            raise ValueError("tau_target must lie in (0, 1]")
        for name in ("num_samples", "batch_size", "replay_capacity"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.warmup_steps < 0:
            raise ValueError("warmup_steps must be >= 0")
        if not (self.actor_lr > 0 and self.critic_lr > 0):
            raise ValueError("learning rates must be positive")
        if self.state_encoding not in STATE_ENCODINGS:
            raise ValueError(f"state_encoding must be one of {STATE_ENCODINGS}, got {self.state_encoding!r}")
        if self.rotations < 0:
            raise ValueError("rotations must be >= 0")

    @property
    def state_dim(self) -> int:
        if self.state_encoding == "angle_profile":
            return self.encoding[0]
        return self.encoding[0] * self.encoding[1]


@dataclass
class Transition:
    state: np.ndarray
    action: Mask
    reward: float
    next_state: np.ndarray
    truncated: bool = False

    def __post_init__(self):
        if not np.isfinite(self.reward):
            raise ValueError("reward must be finite")


class ReplayMemory:
    """Fixed-capacity FIFO ring buffer of transitions stored as dense arrays."""

    def __init__(self, capacity: int, state_dim: int, num_actions: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.states = np.zeros((capacity, state_dim))
        self.actions = np.zeros((capacity, num_actions))
        self.rewards = np.zeros(capacity)
        self.next_states = np.zeros((capacity, state_dim))
        self.truncated = np.zeros(capacity, dtype=bool)
        self.inserted = 0

    def __len__(self):
        return min(self.inserted, self.capacity)

    def add(self, tr: Transition) -> None:
        i = self.inserted % self.capacity
        self.states[i] = tr.state
        self.actions[i] = tr.action.bits
        self.rewards[i] = tr.reward
        self.next_states[i] = tr.next_state
        self.truncated[i] = tr.truncated
        self.inserted += 1

    def order(self) -> np.ndarray:
        """Slot indices from oldest to newest."""
        n = len(self)
        start = self.inserted - n
        return np.arange(start, start + n) % self.capacity

    def sample(self, batch_size: int, rng: np.random.Generator) -> dict:
        idx = rng.integers(0, len(self), size=batch_size)
        return self.batch(idx)

    def batch(self, idx) -> dict:
        return {
            "states": self.states[idx],
            "actions": self.actions[idx],
            "rewards": self.rewards[idx],
            "next_states": self.next_states[idx],
            "truncated": self.truncated[idx],
        }


def rotate_batch(batch: dict, rotations: int, rng: np.random.Generator) -> dict:
    """Rotate each transition by a random whole number of angular steps.

    States and actions are laid out angle-major, so one step rolls the state by
    ``state_dim / rotations`` entries and the action by ``N / rotations``. A
    circular array looks the same after such a turn, which makes this an exact
    symmetry of the task rather than an approximation.
    """
    n = len(batch["rewards"])
    shift = rng.integers(0, rotations, size=n)
    idx = (np.arange(rotations)[None, :] - shift[:, None]) % rotations
    out = dict(batch)
    for key in ("states", "actions", "next_states"):
        x = batch[key].reshape(n, rotations, -1)
        out[key] = np.take_along_axis(x, idx[:, :, None], axis=1).reshape(n, -1)
    return out


class Agent:
    """Deterministic actor with Gumbel exploration, a Q critic, and target copies of both."""

    def __init__(self, cfg: AgentConfig, num_actions: int, seed: int = 0):
        if cfg.num_samples > num_actions:
            raise ValueError(f"K={cfg.num_samples} exceeds N={num_actions}")
        self.cfg = cfg
        self.num_actions = num_actions
        self.state_dim = cfg.state_dim
        if cfg.rotations and (cfg.encoding[0] % cfg.rotations or num_actions % cfg.rotations):
            raise ValueError(f"rotations={cfg.rotations} must divide both the angular bins and N={num_actions}")
        init_rng = np.random.default_rng([seed, 0])
        self.rng = np.random.default_rng([seed, 2])
        self.actor_spec = neural.MlpSpec((self.state_dim, *cfg.actor_hidden, num_actions))
        self.critic_spec = neural.MlpSpec((self.state_dim + num_actions, *cfg.critic_hidden, 1))
        self.actor = neural.init_params(self.actor_spec, init_rng, cfg.actor_final_scale)
        self.critic = neural.init_params(self.critic_spec, init_rng)
        self.actor_target = self.actor.copy()
        self.critic_target = self.critic.copy()
        self.actor_opt = neural.Adam(self.actor_spec.num_params, lr=cfg.actor_lr)
        self.critic_opt = neural.Adam(self.critic_spec.num_params, lr=cfg.critic_lr)
        self.updates = 0

    @property
    def k(self) -> int:
        return self.cfg.num_samples

    def encode(self, img) -> np.ndarray:
        """State vector of a reconstruction; already-encoded input passes through."""
        img = np.asarray(img, dtype=np.float64)
        if img.ndim == 2 and img.shape[-1] != self.state_dim:
            if self.cfg.state_encoding == "angle_profile":
                return angle_profile(img, self.cfg.encoding[0])
            return downsample_area(img, self.cfg.encoding).ravel()
        return img

    def logits(self, states, target: bool = False) -> np.ndarray:
        params = self.actor_target if target else self.actor
        return neural.forward(self.actor_spec, params, states)

    def q_value(self, states, actions, target: bool = False) -> np.ndarray:
        params = self.critic_target if target else self.critic
        x = np.concatenate([np.atleast_2d(states), np.atleast_2d(actions)], axis=1)
        return neural.forward(self.critic_spec, params, x)[:, 0]

    def select_action(self, state, sigma: float = 0.0, rng=None, mode: str = "train") -> Mask:
        """Top-K of the actor logits, perturbed by Gumbel noise of scale ``sigma`` in train mode."""
        if mode not in ("train", "eval"):
            raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
        scores = self.logits(self.encode(state))
        if mode == "train" and sigma > 0:
            scores = scores + sample_gumbel(self.num_actions, sigma, rng if rng is not None else self.rng)
        return Mask(top_k_indices(scores, self.k), self.num_actions)

    def greedy_actions(self, states, target: bool = False) -> np.ndarray:
        """Noise-free K-hot actions for a batch of encoded states."""
        idx = top_k_indices(self.logits(states, target), self.k)
        out = np.zeros((len(idx), self.num_actions))
        np.put_along_axis(out, idx, 1.0, axis=1)
        return out

    def td_target(self, batch: dict) -> np.ndarray:
        """``scale * r + gamma * Q'(s', pi'(s'))``; time-limit ends still bootstrap."""
        nxt = batch["next_states"]
        q_next = self.q_value(nxt, self.greedy_actions(nxt, target=True), target=True)
        return self.cfg.reward_scale * batch["rewards"] + self.cfg.gamma * q_next

    def critic_update(self, batch: dict) -> float:
        target = self.td_target(batch)
        x = np.concatenate([batch["states"], batch["actions"]], axis=1)
        q, cache = neural.forward(self.critic_spec, self.critic, x, return_cache=True)
        err = q[:, 0] - target
        loss = float(np.mean(err ** 2))
        grads, _ = neural.backward(self.critic_spec, self.critic, x, (2.0 * err / len(err))[:, None], cache=cache)
        self.critic = self.critic_opt.step(self.critic, grads)
        return loss

    def actor_objective_and_grad(self, states, sigma: float, rng=None):
        """Mean Q of relaxed Gumbel top-K actions and its gradient w.r.t. actor parameters."""
        rng = rng if rng is not None else self.rng
        states = np.atleast_2d(states)
        logits, a_cache = neural.forward(self.actor_spec, self.actor, states, return_cache=True)
        noise = sample_gumbel(logits.shape, sigma, rng)
        soft, r_cache = relaxed_top_k(logits, noise, self.k, self.cfg.gumbel.relax_temperature, return_cache=True)
        x = np.concatenate([states, soft], axis=1)
        q, c_cache = neural.forward(self.critic_spec, self.critic, x, return_cache=True)
        objective = float(np.mean(q))
        _, dx = neural.backward(self.critic_spec, self.critic, x, np.full_like(q, 1.0 / len(q)), cache=c_cache)
        d_logits = relaxed_top_k_backward(dx[:, self.state_dim:], r_cache)
        grads, _ = neural.backward(self.actor_spec, self.actor, states, d_logits, cache=a_cache)
        return objective, grads

    def actor_update(self, batch: dict, sigma: float) -> float:
        objective, grads = self.actor_objective_and_grad(batch["states"], sigma)
        # ascent on the objective
        self.actor = self.actor_opt.step(self.actor, -grads)
        return objective

    def soft_update_targets(self, tau: float | None = None) -> None:
        tau = self.cfg.tau_target if tau is None else tau
        self.actor_target = tau * self.actor + (1.0 - tau) * self.actor_target
        self.critic_target = tau * self.critic + (1.0 - tau) * self.critic_target

    def learn(self, memory: ReplayMemory, sigma: float):
        """One critic step, one actor step and a target update; None until the replay holds a batch."""
        if len(memory) < self.cfg.batch_size:
            return None
        batch = memory.sample(self.cfg.batch_size, self.rng)
        if self.cfg.rotations:
            batch = rotate_batch(batch, self.cfg.rotations, self.rng)
        critic_loss = self.critic_update(batch)
        actor_obj = self.actor_update(batch, sigma)
        self.soft_update_targets()
        self.updates += 1
        return critic_loss, actor_obj

    # -- persistence ---------------------------------------------------------

    def records(self) -> dict:
        return {
            "actor": neural.mlp_record(self.actor_spec, self.actor),
            "critic": neural.mlp_record(self.critic_spec, self.critic),
            "actor_target": neural.mlp_record(self.actor_spec, self.actor_target),
            "critic_target": neural.mlp_record(self.critic_spec, self.critic_target),
            "actor_opt": neural.array_record(self.actor_opt.state_array()),
            "critic_opt": neural.array_record(self.critic_opt.state_array()),
            "meta": neural.array_record([self.k, self.num_actions, self.updates]),
        }

    def save(self, path, extra: dict | None = None):
        records = self.records()
        for name, value in (extra or {}).items():
            records[name] = neural.array_record(value)
        return neural.save_checkpoint(path, records)

    def load_records(self, records: dict) -> None:
        for name in ("actor", "critic", "actor_target", "critic_target", "actor_opt", "critic_opt", "meta"):
            if name not in records:
                raise neural.CheckpointError(f"checkpoint is missing record {name!r}")
        meta = records["meta"].data
        if int(meta[0]) != self.k or int(meta[1]) != self.num_actions:
            raise neural.CheckpointError(
                f"record 'meta': checkpoint is for K={int(meta[0])}, N={int(meta[1])}, "
                f"agent expects K={self.k}, N={self.num_actions}"
            )
        for name, spec in (("actor", self.actor_spec), ("critic", self.critic_spec),
                           ("actor_target", self.actor_spec), ("critic_target", self.critic_spec)):
            got_spec, params = neural.record_to_mlp(name, records[name])
            if got_spec != spec:
                raise neural.CheckpointError(f"record {name!r}: layer sizes {got_spec.sizes} do not match {spec.sizes}")
            setattr(self, name, params.copy())
        self.actor_opt = neural.Adam.from_state_array(records["actor_opt"].data)
        self.critic_opt = neural.Adam.from_state_array(records["critic_opt"].data)
        if self.actor_opt.size != self.actor_spec.num_params:
            raise neural.CheckpointError("record 'actor_opt': moment size does not match the actor")
        if self.critic_opt.size != self.critic_spec.num_params:
            raise neural.CheckpointError("record 'critic_opt': moment size does not match the critic")
        self.updates = int(meta[2])

    def load(self, path) -> dict:
        records = neural.load_checkpoint(path)
        self.load_records(records)
        return records
