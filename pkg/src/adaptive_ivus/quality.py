"""Image metrics, reward functions, pre-filters and the adversarial reward term."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import uniform_filter

from adaptive_ivus import neural
from adaptive_ivus.beamform import downsample_area

PSNR_CAP_DB = 100.0
SSIM_WINDOW = 7
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def mse(a, b) -> float:
    a, b = _pair(a, b)
    return float(np.mean((a - b) ** 2))


def mae(a, b) -> float:
    a, b = _pair(a, b)
    return float(np.mean(np.abs(a - b)))


def psnr(a, b, cap: float = PSNR_CAP_DB) -> float:
    """Peak signal-to-noise ratio for unit peak, capped when the images match."""
    err = mse(a, b)
    if err == 0:
        return cap
    return float(min(10.0 * np.log10(1.0 / err), cap))


def ssim(a, b) -> float:
    """Mean SSIM over 7x7 uniform windows, data range 1.

    Local statistics use the unbiased (N-1) covariance and the border strip
    of half a window is excluded from the mean.
    """
    a, b = _pair(a, b)
    if min(a.shape) < SSIM_WINDOW:
        raise ValueError(f"images must be at least {SSIM_WINDOW} pixels on each side")
    npx = SSIM_WINDOW ** a.ndim
    corr = npx / (npx - 1.0)
    ux = uniform_filter(a, SSIM_WINDOW)
    uy = uniform_filter(b, SSIM_WINDOW)
    uxx = uniform_filter(a * a, SSIM_WINDOW)
    uyy = uniform_filter(b * b, SSIM_WINDOW)
    uxy = uniform_filter(a * b, SSIM_WINDOW)
    vx = corr * (uxx - ux * ux)
    vy = corr * (uyy - uy * uy)
    vxy = corr * (uxy - ux * uy)
    num = (2 * ux * uy + SSIM_C1) * (2 * vxy + SSIM_C2)
    den = (ux * ux + uy * uy + SSIM_C1) * (vx + vy + SSIM_C2)
    pad = (SSIM_WINDOW - 1) // 2
    crop = tuple(slice(pad, n - pad) for n in a.shape)
    return float(np.mean((num / den)[crop]))


def reward_mse(s, truth) -> float:
    """Negated sum of squared pixel differences."""
    s, truth = _pair(s, truth)
    return 0.0 - float(np.sum((s - truth) ** 2))


def threshold_filter(img, thresh: float = 0.1) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    return np.where(img < thresh, 0.0, img)


@dataclass(frozen=True)
class DiffusionConfig:
    iterations: int = 5
    kappa: float = 0.1
    step: float = 0.2

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not 0 < self.step <= 0.25:
            raise ValueError("step must lie in (0, 0.25] for the explicit 4-neighbour scheme")
        if not self.kappa > 0:
            raise ValueError("kappa must be positive")


def diffusion_step(img: np.ndarray, kappa: float, step: float) -> np.ndarray:
    """One Perona-Malik update in flux form with zero flux across the border."""
    flux_r = np.diff(img, axis=0)
    flux_r = np.exp(-(flux_r / kappa) ** 2) * flux_r
    flux_c = np.diff(img, axis=1)
    flux_c = np.exp(-(flux_c / kappa) ** 2) * flux_c
    change = np.zeros_like(img)
    change[:-1] += flux_r
    change[1:] -= flux_r
    change[:, :-1] += flux_c
    change[:, 1:] -= flux_c
    return img + step * change


def anisotropic_diffusion(img, cfg: DiffusionConfig = DiffusionConfig()) -> np.ndarray:
    out = np.array(img, dtype=np.float64)
    for _ in range(cfg.iterations):
        out = diffusion_step(out, cfg.kappa, cfg.step)
    return out


def prefilter(img, kind: str, thresh: float = 0.1, diffusion: DiffusionConfig = DiffusionConfig()) -> np.ndarray:
    if kind == "none":
        return np.asarray(img, dtype=np.float64)
    if kind == "threshold":
        return threshold_filter(img, thresh)
    if kind == "anisotropic_diffusion":
        return anisotropic_diffusion(img, diffusion)
    raise ValueError(f"unknown pre-filter {kind!r}")


# ---------------------------------------------------------------------------
# adversarial term

@dataclass(frozen=True)
class AdvRewardConfig:
    weight: float = 1e-5
    hidden: tuple[int, ...] = (128,)
    lr: float = 1e-4
    encoding: tuple[int, int] = (32, 32)
    eps: float = 1e-12

    def __post_init__(self):
        if self.weight < 0:
            raise ValueError("adversarial weight must be >= 0")


class Discriminator:
    """Binary classifier of full (real) versus subsampled (fake) reconstructions."""

    def __init__(self, cfg: AdvRewardConfig, rng: np.random.Generator):
        self.cfg = cfg
        n_in = cfg.encoding[0] * cfg.encoding[1]
        self.spec = neural.MlpSpec((n_in, *cfg.hidden, 1), "sigmoid")
        self.params = neural.init_params(self.spec, rng)
        self.opt = neural.Adam(self.spec.num_params, lr=cfg.lr)

    def encode(self, img) -> np.ndarray:
        img = np.asarray(img, dtype=np.float64)
        if img.ndim == 2:
            return downsample_area(img, self.cfg.encoding).ravel()
        return img

    def prob(self, img) -> np.ndarray:
        return neural.forward(self.spec, self.params, self.encode(img))[..., 0]

    def penalty(self, fake) -> float:
        """Non-saturating generator-style loss ``-log(D(fake) + eps)``."""
        return float(-np.log(self.prob(fake) + self.cfg.eps))

    def update(self, real, fake) -> float:
        """One binary cross-entropy step on a batch of real and fake inputs; returns the pre-step loss."""
        x = np.vstack([np.atleast_2d(self.encode(real)), np.atleast_2d(self.encode(fake))])
        n_real = len(np.atleast_2d(self.encode(real)))
        labels = np.zeros(len(x))
        labels[:n_real] = 1.0
        out, cache = neural.forward(self.spec, self.params, x, return_cache=True)
        p = np.clip(out[:, 0], self.cfg.eps, 1.0 - self.cfg.eps)
        loss = float(-np.mean(labels * np.log(p) + (1 - labels) * np.log(1 - p)))
        # dBCE/dp, mean over the batch
        grad_p = (-(labels / p) + (1 - labels) / (1 - p)) / len(x)
        grads, _ = neural.backward(self.spec, self.params, x, grad_p[:, None], cache=cache)
        self.params = self.opt.step(self.params, grads)
        return loss


def adversarial_reward(s, disc: Discriminator, real=None):
    """Penalty for the subsampled reconstruction ``s``; optionally trains ``disc`` on (real, s).

    Returns ``(penalty, disc)``.
    """
    penalty = disc.penalty(s)
    if real is not None:
        disc.update(real, s)
    return penalty, disc


def ssim_adv_reward(ssim_value: float, penalty: float, weight: float) -> float:
    return ssim_value - weight * penalty
