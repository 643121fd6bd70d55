"""Gumbel top-K subset sampling, its softmax relaxation, and noise-scale annealing."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from adaptive_ivus.subsample import Mask

UNIFORM_EPS = 1e-12
LOG_FLOOR = -1e9


@dataclass(frozen=True)
class GumbelConfig:
    sigma_start: float = 2.0
    sigma_end: float = 0.2
    anneal_steps: int = 10_000
    relax_temperature: float = 1.0

    def __post_init__(self):
        if not self.sigma_start >= self.sigma_end > 0:
            raise ValueError("need sigma_start >= sigma_end > 0")
        if self.anneal_steps < 1:
            raise ValueError("anneal_steps must be >= 1")
        if not self.relax_temperature > 0:
            raise ValueError("relax_temperature must be positive")


def gumbel_from_uniform(u, sigma: float = 1.0) -> np.ndarray:
    return -np.log(-np.log(u)) * sigma


def sample_gumbel(n, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """Scaled Gumbel(0, sigma) noise; ``n`` may be an int or a shape."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    u = rng.uniform(UNIFORM_EPS, 1.0 - UNIFORM_EPS, size=n)
    return gumbel_from_uniform(u, sigma)


def top_k_indices(values: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k largest entries along the last axis, ties to the lowest index."""
    values = np.asarray(values)
    if k > values.shape[-1]:
        raise ValueError(f"K={k} exceeds length {values.shape[-1]}")
    # stable sort on the negated values keeps lower indices first among ties
    return np.sort(np.argsort(-values, axis=-1, kind="stable")[..., :k], axis=-1)


def top_k(perturbed_logits, k: int) -> Mask:
    v = np.asarray(perturbed_logits, dtype=np.float64).ravel()
    return Mask(top_k_indices(v, k), len(v))


def _log1m(p):
    with np.errstate(divide="ignore"):
        raw = np.log1p(-p)
    return np.maximum(raw, LOG_FLOOR), raw > LOG_FLOOR


def _softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def relaxed_top_k(logits, noise, k: int, tau: float, return_cache: bool = False):
    """Differentiable K-hot surrogate built from K successive softmaxes.

    Each round takes a softmax of the current scores and then down-weights
    what it picked by adding ``log(1 - p)``. The K rounds sum to the soft
    mask, whose entries add up to exactly K. Works on the last axis, so a
    batch of rows can go in at once.
    """
    if not tau > 0:
        raise ValueError("tau must be positive")
    alpha = np.asarray(logits, dtype=np.float64) + np.asarray(noise, dtype=np.float64)
    if k > alpha.shape[-1]:
        raise ValueError(f"K={k} exceeds length {alpha.shape[-1]}")
    probs, keeps = [], []
    m = np.zeros_like(alpha)
    for _ in range(k):
        p = _softmax(alpha / tau)
        m = m + p
        probs.append(p)
        step, keep = _log1m(p)
        keeps.append(keep)
        alpha = alpha + step
    if return_cache:
        return m, (probs, keeps, tau)
    return m


def relaxed_top_k_backward(grad_m, cache) -> np.ndarray:
    """Gradient of the loss w.r.t. ``logits + noise`` given dL/dm."""
    probs, keeps, tau = cache
    grad_m = np.asarray(grad_m, dtype=np.float64)
    g_alpha = np.zeros_like(grad_m)  # dL/d alpha^{j+1}
    for p, keep in zip(reversed(probs), reversed(keeps)):
        with np.errstate(divide="ignore", invalid="ignore"):
            through_log = np.where(keep, -g_alpha / (1.0 - p), 0.0)
        g_p = grad_m + through_log
        g_z = p * (g_p - np.sum(g_p * p, axis=-1, keepdims=True))
        g_alpha = g_alpha + g_z / tau
    return g_alpha


def anneal_sigma(step: int, cfg: GumbelConfig) -> float:
    """Geometric decay from ``sigma_start`` to ``sigma_end`` over ``anneal_steps``."""
    if step < 0:
        raise ValueError("step must be >= 0")
    frac = min(step / cfg.anneal_steps, 1.0)
    return cfg.sigma_start * (cfg.sigma_end / cfg.sigma_start) ** frac
