"""Binary acquisition masks over transmit/receive element pairs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from adaptive_ivus.simkernel import ArrayGeometry


@dataclass(frozen=True, eq=False)
class Mask:
    """K selected measurement indices out of N.

    ``indices`` is kept sorted; ``bits`` is the dense 0/1 view.
    """

    indices: np.ndarray
    n: int

    def __post_init__(self):
        idx = np.unique(np.asarray(self.indices, dtype=np.int64))
        if len(idx) != len(np.asarray(self.indices).ravel()):
            raise ValueError("mask indices must be distinct")
        if len(idx) < 1 or len(idx) > self.n:
            raise ValueError(f"need 1 <= K <= N, got K={len(idx)}, N={self.n}")
        if idx[0] < 0 or idx[-1] >= self.n:
            raise ValueError("mask index out of range")
        idx.setflags(write=False)
        object.__setattr__(self, "indices", idx)

    @classmethod
    def from_bits(cls, bits) -> "Mask":
        bits = np.asarray(bits)
        if not np.all((bits == 0) | (bits == 1)):
            raise ValueError("mask bits must be 0 or 1")
        return cls(np.flatnonzero(bits), len(bits))

    @classmethod
    def full(cls, n: int) -> "Mask":
        return cls(np.arange(n), n)

    @property
    def k(self) -> int:
        return len(self.indices)

    @property
    def bits(self) -> np.ndarray:
        b = np.zeros(self.n)
        b[self.indices] = 1.0
        return b

    def __eq__(self, other):
        if not isinstance(other, Mask):
            return NotImplemented
        return self.n == other.n and np.array_equal(self.indices, other.indices)

    def __hash__(self):
        return hash((self.n, self.indices.tobytes()))

    def __repr__(self):
        return f"Mask(k={self.k}, n={self.n}, indices={self.indices.tolist()})"


def apply_mask(mask: Mask, x: np.ndarray) -> np.ndarray:
    """Zero-fill every channel of ``x`` that the mask does not select."""
    x = np.asarray(x)
    if x.shape[0] != mask.n:
        raise ValueError(f"mask length {mask.n} does not match {x.shape[0]} channels")
    y = np.zeros_like(x)
    y[mask.indices] = x[mask.indices]
    return y


def index_to_pair(n: int, geom: ArrayGeometry) -> tuple[int, int]:
    if not 0 <= n < geom.num_measurements:
        raise IndexError(f"measurement index {n} outside [0, {geom.num_measurements})")
    a = geom.sub_aperture
    tx = n // a
    rx = (tx + n % a - (a - 1) // 2) % geom.num_elements
    return tx, rx


def pair_to_index(tx: int, rx: int, geom: ArrayGeometry) -> int:
    e, a = geom.num_elements, geom.sub_aperture
    if not (0 <= tx < e and 0 <= rx < e):
        raise IndexError(f"element pair ({tx}, {rx}) out of range")
    offset = (rx - tx + (a - 1) // 2) % e
    if offset >= a:
        raise ValueError(f"receive element {rx} is outside the aperture of transmit element {tx}")
    return tx * a + offset


def random_mask(k: int, n: int, rng: np.random.Generator) -> Mask:
    """Uniformly random K-subset of ``range(n)``."""
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= K <= N, got K={k}, N={n}")
    return Mask(rng.choice(n, size=k, replace=False), n)


def receive_counts(mask: Mask, geom: ArrayGeometry) -> np.ndarray:
    """Number of selected receive offsets per transmit element."""
    return mask.bits.reshape(geom.num_elements, geom.sub_aperture).sum(axis=1).astype(int)


def action_strip(mask: Mask, geom: ArrayGeometry, cell: int = 8, height: int = 16) -> np.ndarray:
    """uint8 strip with one cell per transmit element.

    Black is one selected receive element (or none), white is all A of them.
    """
    counts = receive_counts(mask, geom)
    a = geom.sub_aperture
    if a == 1:
        level = np.where(counts > 0, 1.0, 0.0)
    else:
        level = np.clip((counts - 1) / (a - 1), 0.0, 1.0)
    row = np.round(255 * level).astype(np.uint8)
    return np.repeat(np.tile(row, (height, 1)), cell, axis=1)
