"""Pulse-echo RF simulation of revolving wire targets seen by a circular array.

Units: millimetres, microseconds and megahertz, so that ``c`` is in mm/us and
``t * fs`` is a sample index.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class ArrayGeometry:
    num_elements: int = 32
    array_radius: float = 0.5
    speed_of_sound: float = 1.54
    sampling_freq: float = 32.0
    pulse_center_freq: float = 8.0
    pulse_bandwidth_frac: float = 0.6
    num_fast_time_samples: int = 384
    sub_aperture: int = 5

    def __post_init__(self):
        if self.num_elements < 4:
            raise ValueError(f"num_elements must be >= 4, got {self.num_elements}")
        if self.sub_aperture < 1 or self.sub_aperture % 2 == 0:
            raise ValueError(f"sub_aperture must be odd and >= 1, got {self.sub_aperture}")
        if self.sub_aperture > self.num_elements:
            raise ValueError("sub_aperture cannot exceed num_elements")
        if self.num_fast_time_samples < 1:
            raise ValueError("num_fast_time_samples must be >= 1")
        for name in ("array_radius", "speed_of_sound", "sampling_freq",
                     "pulse_center_freq", "pulse_bandwidth_frac"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    @property
    def num_measurements(self) -> int:
        return self.num_elements * self.sub_aperture

    @property
    def element_angles(self) -> np.ndarray:
        return TWO_PI * np.arange(self.num_elements) / self.num_elements

    @property
    def element_positions(self) -> np.ndarray:
        """(E, 2) array of element centres."""
        a = self.element_angles
        return self.array_radius * np.stack([np.cos(a), np.sin(a)], axis=1)

    @property
    def pulse_sigma(self) -> float:
        """Temporal standard deviation (us) of the Gaussian pulse envelope.

        The -6 dB spectral width equals ``pulse_bandwidth_frac * f0``.
        """
        sigma_f = self.pulse_bandwidth_frac * self.pulse_center_freq / (2.0 * math.sqrt(2.0 * math.log(2.0)))
        return 1.0 / (TWO_PI * sigma_f)

    @property
    def record_duration(self) -> float:
        return (self.num_fast_time_samples - 1) / self.sampling_freq

    def pairs(self) -> tuple[np.ndarray, np.ndarray]:
        """Transmit and receive element index for every measurement."""
        n = np.arange(self.num_measurements)
        tx = n // self.sub_aperture
        rx = (tx + n % self.sub_aperture - (self.sub_aperture - 1) // 2) % self.num_elements
        return tx, rx

    def pulse(self, t: np.ndarray) -> np.ndarray:
        s = self.pulse_sigma
        return np.exp(-0.5 * (t / s) ** 2) * np.cos(TWO_PI * self.pulse_center_freq * t)


@dataclass(frozen=True)
class WireTarget:
    angle: float
    radial_distance: float
    angular_velocity: float = 0.0
    reflectivity: float = 1.0

    def __post_init__(self):
        if not self.reflectivity >= 0:
            raise ValueError("reflectivity must be >= 0")
        if not self.radial_distance > 0:
            raise ValueError("radial_distance must be positive")

    @property
    def position(self) -> np.ndarray:
        return self.radial_distance * np.array([math.cos(self.angle), math.sin(self.angle)])


@dataclass(frozen=True)
class Scene:
    targets: tuple[WireTarget, ...]
    noise_std: float = 0.1
    frame_index: int = 0
    rng_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "targets", tuple(self.targets))
        if len(self.targets) < 1:
            raise ValueError("a scene needs at least one target")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")

    @classmethod
    def create(cls, targets, geom: ArrayGeometry, max_depth: float | None = None, **kwargs) -> "Scene":
        """Build a scene and reject targets the geometry cannot record."""
        scene = cls(tuple(targets), **kwargs)
        check_scene(scene, geom, max_depth)
        return scene


def check_scene(scene: Scene, geom: ArrayGeometry, max_depth: float | None = None) -> None:
    """Raise ValueError if any target lies inside the array or beyond the recorded depth."""
    positions = geom.element_positions
    for i, target in enumerate(scene.targets):
        if target.radial_distance <= geom.array_radius:
            raise ValueError(f"target {i} lies inside the array (r={target.radial_distance} mm)")
        if max_depth is not None and target.radial_distance - geom.array_radius > max_depth:
            raise ValueError(f"target {i} is deeper than max_depth={max_depth} mm")
        farthest = np.max(np.linalg.norm(positions - target.position, axis=1))
        if 2.0 * farthest / geom.speed_of_sound > geom.record_duration:
            raise ValueError(
                f"target {i} at r={target.radial_distance} mm is beyond the "
                f"{geom.num_fast_time_samples}-sample record"
            )


def advance_scene(scene: Scene) -> Scene:
    targets = tuple(
        replace(t, angle=(t.angle + t.angular_velocity) % TWO_PI) for t in scene.targets
    )
    return replace(scene, targets=targets, frame_index=scene.frame_index + 1)


@dataclass(frozen=True)
class SceneSampler:
    """Random scene generator used at every episode reset."""

    num_targets: int = 2
    radial_range: tuple[float, float] = (2.0, 7.0)
    angular_velocity_range: tuple[float, float] = (-0.3, 0.3)
    reflectivity_range: tuple[float, float] = (1.0, 1.0)
    noise_std: float = 0.1

    def sample(self, rng: np.random.Generator, geom: ArrayGeometry, max_depth: float | None = None) -> Scene:
        targets = []
        for _ in range(self.num_targets):
            targets.append(WireTarget(
                angle=float(rng.uniform(0.0, TWO_PI)),
                radial_distance=float(rng.uniform(*self.radial_range)),
                angular_velocity=float(rng.uniform(*self.angular_velocity_range)),
                reflectivity=float(rng.uniform(*self.reflectivity_range)),
            ))
        seed = int(rng.integers(0, 2**63 - 1))
        return Scene.create(targets, geom, max_depth, noise_std=self.noise_std, rng_seed=seed)


def time_of_flight(scene: Scene, geom: ArrayGeometry) -> np.ndarray:
    """(N, n_targets) round-trip travel times in microseconds."""
    pos = geom.element_positions
    tgt = np.stack([t.position for t in scene.targets])
    dist = np.linalg.norm(pos[:, None, :] - tgt[None, :, :], axis=2)
    tx, rx = geom.pairs()
    return (dist[tx] + dist[rx]) / geom.speed_of_sound


def simulate_clean_rf(scene: Scene, geom: ArrayGeometry) -> np.ndarray:
    """Noise-free (N, S) channel data."""
    tof = time_of_flight(scene, geom)
    refl = np.array([t.reflectivity for t in scene.targets])
    t = np.arange(geom.num_fast_time_samples) / geom.sampling_freq
    # (N, targets, S), summed over targets in a fixed order
    echoes = geom.pulse(t[None, None, :] - tof[:, :, None]) * refl[None, :, None]
    return echoes.sum(axis=1)


def frame_noise(scene: Scene, geom: ArrayGeometry) -> np.ndarray:
    shape = (geom.num_measurements, geom.num_fast_time_samples)
    if scene.noise_std == 0:
        return np.zeros(shape)
    rng = np.random.default_rng([scene.rng_seed, scene.frame_index])
    return rng.normal(0.0, scene.noise_std, size=shape)


def simulate_rf(scene: Scene, geom: ArrayGeometry) -> np.ndarray:
    """Simulate one fully sampled RF frame of shape (N, S).

    Each channel is the sum of Gaussian-enveloped cosine echoes delayed by the
    transmit-target-receive path, plus white Gaussian noise seeded by
    ``(scene.rng_seed, scene.frame_index)``.
    """
    check_scene(scene, geom)
    return simulate_clean_rf(scene, geom) + frame_noise(scene, geom)
