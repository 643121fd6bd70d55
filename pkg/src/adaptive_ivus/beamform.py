"""Delay-and-sum reconstruction of (zero-filled) RF data into polar B-mode images.

For a fixed geometry and grid, DAS with linear interpolation is a linear map
from the flattened (N, S) channel data to the pixel field, so it is built once
as a sparse matrix and reused for every frame.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.signal
import scipy.sparse

from adaptive_ivus.simkernel import TWO_PI, ArrayGeometry


@dataclass(frozen=True)
class ImageGrid:
    num_scanlines: int = 128
    num_depth_samples: int = 256
    max_depth: float = 8.0

    def __post_init__(self):
        if self.num_scanlines < 1 or self.num_depth_samples < 1:
            raise ValueError("grid dimensions must be positive")
        if not self.max_depth > 0:
            raise ValueError("max_depth must be positive")

    @property
    def depth_step(self) -> float:
        return self.max_depth / self.num_depth_samples

    @property
    def depths(self) -> np.ndarray:
        """Pixel-centre distances from the array surface (mm)."""
        return (np.arange(self.num_depth_samples) + 0.5) * self.depth_step

    @property
    def angles(self) -> np.ndarray:
        return TWO_PI * np.arange(self.num_scanlines) / self.num_scanlines

    @property
    def shape(self) -> tuple[int, int]:
        return self.num_scanlines, self.num_depth_samples

    def check(self, geom: ArrayGeometry) -> None:
        if self.num_scanlines % geom.num_elements:
            raise ValueError(
                f"num_scanlines={self.num_scanlines} is not a multiple of "
                f"num_elements={geom.num_elements}"
            )

    def pixel_of(self, angle: float, depth: float) -> tuple[int, int]:
        """Nearest (scanline, depth sample) index for a polar position."""
        line = int(round((angle % TWO_PI) / TWO_PI * self.num_scanlines)) % self.num_scanlines
        k = int(round(depth / self.depth_step - 0.5))
        return line, min(max(k, 0), self.num_depth_samples - 1)


def receive_apodization(sub_aperture: int) -> np.ndarray:
    """Hann weights over the receive offsets, nonzero at both ends."""
    j = np.arange(sub_aperture)
    return 0.5 * (1.0 - np.cos(TWO_PI * (j + 1) / (sub_aperture + 1)))


def sector_gate(geom: ArrayGeometry, grid: ImageGrid, half_width: float = 2.0) -> np.ndarray:
    """(scanlines, E) boolean gate.

    A scanline receives contributions from a transmit element when their
    angles differ by at most ``half_width`` element pitches.
    """
    pitch = TWO_PI / geom.num_elements
    diff = grid.angles[:, None] - geom.element_angles[None, :]
    diff = np.abs((diff + math.pi) % TWO_PI - math.pi)
    return diff <= half_width * pitch * (1.0 + 1e-9)


@functools.lru_cache(maxsize=8)
def das_operator(geom: ArrayGeometry, grid: ImageGrid) -> scipy.sparse.csr_matrix:
    """Sparse (pixels, N*S) matrix applying time-of-flight interpolation and apodization."""
    grid.check(geom)
    a, s_len = geom.sub_aperture, geom.num_fast_time_samples
    tx_all, rx_all = geom.pairs()
    apod = receive_apodization(a)
    gate = sector_gate(geom, grid)
    pos = geom.element_positions
    radii = geom.array_radius + grid.depths

    rows, cols, vals = [], [], []
    for line, theta in enumerate(grid.angles):
        px = np.stack([radii * math.cos(theta), radii * math.sin(theta)], axis=1)
        # measurements whose transmit element is gated onto this scanline
        meas = np.flatnonzero(gate[line][tx_all] > 0)
        if meas.size == 0:
            continue
        d = np.linalg.norm(px[None, :, :] - pos[:, None, :], axis=2)  # (E, D)
        tof = (d[tx_all[meas]] + d[rx_all[meas]]) / geom.speed_of_sound
        idx = tof * geom.sampling_freq  # (M, D)
        w = (apod[meas % a] * gate[line][tx_all[meas]])[:, None] * np.ones_like(idx)
        valid = (idx >= 0) & (idx <= s_len - 1)
        i0 = np.floor(idx).astype(np.int64)
        frac = idx - i0
        pix = line * grid.num_depth_samples + np.broadcast_to(np.arange(grid.num_depth_samples), idx.shape)
        base = meas[:, None] * s_len
        i1 = np.minimum(i0 + 1, s_len - 1)
        for col, weight in ((base + i0, w * (1.0 - frac)), (base + i1, w * frac)):
            keep = valid & (weight != 0)
            rows.append(pix[keep])
            cols.append(col[keep])
            vals.append(weight[keep])
    shape = (grid.num_scanlines * grid.num_depth_samples, geom.num_measurements * s_len)
    op = scipy.sparse.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=shape
    ).tocsr()
    op.sum_duplicates()
    op.sort_indices()
    return op


def das_reconstruct(y: np.ndarray, geom: ArrayGeometry, grid: ImageGrid) -> np.ndarray:
    """Beamformed RF field of shape (scanlines, depth samples)."""
    y = np.asarray(y, dtype=np.float64)
    expected = (geom.num_measurements, geom.num_fast_time_samples)
    if y.shape != expected:
        raise ValueError(f"RF frame has shape {y.shape}, expected {expected}")
    return (das_operator(geom, grid) @ y.ravel()).reshape(grid.shape)


def envelope(field: np.ndarray) -> np.ndarray:
    """Analytic-signal magnitude along depth (last axis)."""
    field = np.asarray(field, dtype=np.float64)
    if not np.any(field):
        return np.zeros_like(field)
    return np.abs(scipy.signal.hilbert(field, axis=-1))


def log_compress(env: np.ndarray, dynamic_range_db: float = 40.0) -> np.ndarray:
    if dynamic_range_db <= 0:
        raise ValueError("dynamic_range_db must be positive")
    env = np.asarray(env, dtype=np.float64)
    peak = env.max() if env.size else 0.0
    if peak <= 0:
        return np.zeros_like(env)
    with np.errstate(divide="ignore"):
        db = 20.0 * np.log10(env / peak)
    return np.clip(1.0 + db / dynamic_range_db, 0.0, 1.0)


def reconstruct(y: np.ndarray, geom: ArrayGeometry, grid: ImageGrid, dynamic_range_db: float = 40.0) -> np.ndarray:
    """Full B-mode chain: DAS, envelope detection, log compression."""
    return log_compress(envelope(das_reconstruct(y, geom, grid)), dynamic_range_db)


def downsample_area(img: np.ndarray, size: tuple[int, int] = (32, 32)) -> np.ndarray:
    """Block-average a 2-D image to ``size``; both dimensions must divide evenly."""
    h, w = img.shape
    bh, bw = size
    if h % bh or w % bw:
        raise ValueError(f"image shape {img.shape} is not divisible by {size}")
    return img.reshape(bh, h // bh, bw, w // bw).mean(axis=(1, 3))


def angle_profile(img: np.ndarray, bins: int = 32) -> np.ndarray:
    """Brightest pixel in each of ``bins`` equal angular sectors (rows are scanlines)."""
    img = np.asarray(img, dtype=np.float64)
    if img.shape[0] % bins:
        raise ValueError(f"{img.shape[0]} scanlines do not split into {bins} sectors")
    return img.reshape(bins, -1).max(axis=1)


def scan_convert(img: np.ndarray, geom: ArrayGeometry, grid: ImageGrid, out_size: int = 256) -> np.ndarray:
    """Bilinear polar-to-Cartesian resampling; pixels off the imaged annulus are 0."""
    img = np.asarray(img, dtype=np.float64)
    lines, depth_n = img.shape
    extent = geom.array_radius + grid.max_depth
    coords = (np.arange(out_size) + 0.5) / out_size * 2.0 * extent - extent
    xx, yy = np.meshgrid(coords, coords[::-1])
    rho = np.hypot(xx, yy) - geom.array_radius
    theta = np.arctan2(yy, xx) % TWO_PI

    u = theta / TWO_PI * lines
    v = rho / grid.depth_step - 0.5
    inside = (v >= 0) & (v <= depth_n - 1)
    v = np.clip(v, 0, depth_n - 1)
    u0 = np.floor(u).astype(int) % lines
    u1 = (u0 + 1) % lines
    fu = u - np.floor(u)
    v0 = np.floor(v).astype(int)
    v1 = np.minimum(v0 + 1, depth_n - 1)
    fv = v - v0
    out = (img[u0, v0] * (1 - fu) * (1 - fv) + img[u1, v0] * fu * (1 - fv)
           + img[u0, v1] * (1 - fu) * fv + img[u1, v1] * fu * fv)
    out[~inside] = 0.0
    return np.clip(out, 0.0, 1.0)


def to_uint8(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img)
    if img.dtype == np.uint8:
        return img
    return np.round(np.clip(img, 0.0, 1.0) * 255).astype(np.uint8)


def write_pgm(path, img: np.ndarray) -> Path:
    """Write a binary (P5) 8-bit graymap."""
    data = to_uint8(img)
    if data.ndim != 2:
        raise ValueError("PGM export needs a 2-D image")
    path = Path(path)
    h, w = data.shape
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n255\n" % (w, h))
        f.write(np.ascontiguousarray(data).tobytes())
    return path


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = []
    pos = 0
    while len(parts) < 4:
        while raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        end = pos
        while not raw[end:end + 1].isspace():
            end += 1
        parts.append(raw[pos:end])
        pos = end
    if parts[0] != b"P5":
        raise ValueError(f"not a binary PGM file: magic {parts[0]!r}")
    w, h, maxval = (int(p) for p in parts[1:])
    if maxval != 255:
        raise ValueError(f"unsupported maxval {maxval}")
    data = np.frombuffer(raw[pos + 1:pos + 1 + w * h], dtype=np.uint8)
    if data.size != w * h:
        raise ValueError("truncated PGM payload")
    return data.reshape(h, w)
