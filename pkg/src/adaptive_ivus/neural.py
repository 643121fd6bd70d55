"""Small multi-layer perceptrons with hand-written reverse mode, Adam, and checkpoints.

Parameters live in one flat float64 vector; the layout (W1, b1, W2, b2, ...)
is fully determined by the layer sizes. Weights are stored as (fan_out, fan_in)
and inputs may be a single vector or a (batch, features) array.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

ACTIVATIONS = ("identity", "relu", "sigmoid")


@dataclass(frozen=True)
class MlpSpec:
    sizes: tuple[int, ...]
    output_activation: str = "identity"

    def __post_init__(self):
        object.__setattr__(self, "sizes", tuple(int(s) for s in self.sizes))
        if len(self.sizes) < 3:
            raise ValueError("an MLP needs an input, at least one hidden layer, and an output")
        if min(self.sizes) < 1:
            raise ValueError("layer sizes must be >= 1")
        if self.output_activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.output_activation!r}")

    @property
    def activations(self) -> tuple[str, ...]:
        return ("relu",) * (len(self.sizes) - 2) + (self.output_activation,)

    @property
    def layers(self) -> list[tuple[slice, tuple[int, int], slice]]:
        out, offset = [], 0
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            w = slice(offset, offset + fan_in * fan_out)
            offset = w.stop
            b = slice(offset, offset + fan_out)
            offset = b.stop
            out.append((w, (fan_out, fan_in), b))
        return out

    @property
    def num_params(self) -> int:
        return self.layers[-1][2].stop

    def unpack(self, params: np.ndarray):
        """Views (W, b) per layer into the flat vector."""
        if params.shape != (self.num_params,):
            raise ValueError(f"expected {self.num_params} parameters, got shape {params.shape}")
        return [(params[w].reshape(shape), params[b]) for w, shape, b in self.layers]


def init_params(spec: MlpSpec, rng: np.random.Generator, final_scale: float = 1.0) -> np.ndarray:
    """Uniform fan-in initialisation, U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases."""
    params = np.empty(spec.num_params)
    for i, (w, shape, b) in enumerate(spec.layers):
        bound = 1.0 / np.sqrt(shape[1])
        if i == len(spec.layers) - 1:
            bound *= final_scale
        params[w] = rng.uniform(-bound, bound, size=w.stop - w.start)
        params[b] = rng.uniform(-bound, bound, size=b.stop - b.start)
    return params


def _act(name, z):
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "sigmoid":
        return 0.5 * (1.0 + np.tanh(0.5 * z))
    return z


def _act_grad(name, z, a, g):
    if name == "relu":
        return g * (z > 0)
    if name == "sigmoid":
        return g * a * (1.0 - a)
    return g


def forward(spec: MlpSpec, params: np.ndarray, x, return_cache: bool = False):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != spec.sizes[0]:
        raise ValueError(f"input has {x.shape[-1]} features, network expects {spec.sizes[0]}")
    cache = [x]
    a = x
    for (w, b), act in zip(spec.unpack(params), spec.activations):
        z = a @ w.T + b
        a = _act(act, z)
        cache.append((z, a))
    if return_cache:
        return a, cache
    return a


def backward(spec: MlpSpec, params: np.ndarray, x, grad_out, cache=None):
    """Return (dL/dparams, dL/dx) given dL/d(output).

    Parameter gradients are summed over the batch dimension.
    """
    if cache is None:
        _, cache = forward(spec, params, x, return_cache=True)
    grad_out = np.asarray(grad_out, dtype=np.float64)
    if grad_out.shape[-1] != spec.sizes[-1]:
        raise ValueError(f"output gradient has {grad_out.shape[-1]} entries, network emits {spec.sizes[-1]}")
    grads = np.zeros(spec.num_params)
    layers = spec.layers
    weights = spec.unpack(params)
    g = grad_out
    for i in range(len(layers) - 1, -1, -1):
        z, a = cache[i + 1]
        a_prev = cache[0] if i == 0 else cache[i][1]
        g = _act_grad(spec.activations[i], z, a, g)
        w_sl, shape, b_sl = layers[i]
        if g.ndim == 1:
            grads[w_sl] = np.outer(g, a_prev).ravel()
            grads[b_sl] = g
        else:
            grads[w_sl] = (g.T @ a_prev).ravel()
            grads[b_sl] = g.sum(axis=0)
        g = g @ weights[i][0]
    return grads, g


@dataclass
class Adam:
    """Adaptive-moment optimiser state for one flat parameter vector."""

    size: int
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: np.ndarray = field(default=None, repr=False)
    v: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.m is None:
            self.m = np.zeros(self.size)
        if self.v is None:
            self.v = np.zeros(self.size)

    def step(self, params: np.ndarray, grads: np.ndarray) -> np.ndarray:
        """Return updated parameters for a descent step on ``grads``."""
        if grads.shape != params.shape or params.shape != self.m.shape:
            raise ValueError("parameter, gradient and moment shapes differ")
        self.step_count += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grads
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grads * grads
        m_hat = self.m / (1.0 - self.beta1 ** self.step_count)
        v_hat = self.v / (1.0 - self.beta2 ** self.step_count)
        return params - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def state_array(self) -> np.ndarray:
        return np.concatenate([[self.step_count, self.lr, self.beta1, self.beta2, self.eps], self.m, self.v])

    @classmethod
    def from_state_array(cls, arr: np.ndarray) -> "Adam":
        size = (len(arr) - 5) // 2
        step, lr, b1, b2, eps = arr[:5]
        return cls(size, lr, b1, b2, eps, int(step), arr[5:5 + size].copy(), arr[5 + size:].copy())


def optimizer_step(state: Adam, params: np.ndarray, grads: np.ndarray) -> np.ndarray:
    return state.step(params, grads)


def params_to_bytes(params: np.ndarray) -> bytes:
    return np.asarray(params, dtype="<f8").tobytes()


def params_from_bytes(raw: bytes) -> np.ndarray:
    return np.frombuffer(raw, dtype="<f8").astype(np.float64)


# ---------------------------------------------------------------------------
# checkpoint container

MAGIC = b"IVUSCKPT"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    """Raised when a checkpoint file is truncated, corrupt or mismatched."""


@dataclass
class Record:
    kind: str
    dims: tuple[int, ...]
    data: np.ndarray


def mlp_record(spec: MlpSpec, params: np.ndarray) -> Record:
    return Record(f"mlp:{spec.output_activation}", spec.sizes, np.asarray(params, dtype=np.float64))


def array_record(arr) -> Record:
    arr = np.asarray(arr, dtype=np.float64)
    return Record("array", arr.shape, arr.ravel())


def record_to_mlp(name: str, rec: Record) -> tuple[MlpSpec, np.ndarray]:
    if not rec.kind.startswith("mlp:"):
        raise CheckpointError(f"record {name!r} has kind {rec.kind!r}, expected an MLP")
    spec = MlpSpec(rec.dims, rec.kind.split(":", 1)[1])
    if rec.data.size != spec.num_params:
        raise CheckpointError(
            f"record {name!r}: payload holds {rec.data.size} values, layer sizes {rec.dims} need {spec.num_params}"
        )
    return spec, rec.data


def save_checkpoint(path, records: dict[str, Record]) -> Path:
    """Write records as: magic, version, count, then per record a header,
    a little-endian f64 payload and a CRC32 of that record.

    A CRC32 of everything before it closes the file.
    """
    buf = bytearray(MAGIC)
    buf += struct.pack("<HI", FORMAT_VERSION, len(records))
    for name, rec in records.items():
        nm, kind = name.encode(), rec.kind.encode()
        data = np.ascontiguousarray(rec.data, dtype="<f8")
        chunk = struct.pack("<H", len(nm)) + nm
        chunk += struct.pack("<H", len(kind)) + kind
        chunk += struct.pack("<I", len(rec.dims)) + struct.pack(f"<{len(rec.dims)}Q", *rec.dims)
        chunk += struct.pack("<Q", data.size) + data.tobytes()
        buf += chunk + struct.pack("<I", zlib.crc32(chunk))
    buf += struct.pack("<I", zlib.crc32(buf))
    path = Path(path)
    path.write_bytes(bytes(buf))
    return path


def load_checkpoint(path) -> dict[str, Record]:
    raw = Path(path).read_bytes()
    if len(raw) < len(MAGIC) + 10:
        raise CheckpointError("file too short to hold a checkpoint header")
    if raw[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f"bad magic bytes {raw[:len(MAGIC)]!r}")
    (crc,) = struct.unpack("<I", raw[-4:])
    body = raw[:-4]
    version, count = struct.unpack_from("<HI", body, len(MAGIC))
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported format version {version}")
    pos = len(MAGIC) + 6
    records = {}

    def take(fmt, what):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(body):
            raise CheckpointError(f"truncated while reading {what}")
        out = struct.unpack_from(fmt, body, pos)
        pos += size
        return out

    for i in range(count):
        start = pos
        (n,) = take("<H", f"record {i} name length")
        name = bytes(take(f"<{n}s", f"record {i} name")[0]).decode()
        (n,) = take("<H", f"record {name!r} kind length")
        kind = bytes(take(f"<{n}s", f"record {name!r} kind")[0]).decode()
        (nd,) = take("<I", f"record {name!r} dims count")
        dims = take(f"<{nd}Q", f"record {name!r} dims")
        (size,) = take("<Q", f"record {name!r} payload length")
        if pos + 8 * size > len(body):
            raise CheckpointError(f"truncated payload in record {name!r}")
        data = np.frombuffer(body, dtype="<f8", count=size, offset=pos).astype(np.float64)
        pos += 8 * size
        (rec_crc,) = take("<I", f"record {name!r} checksum")
        if zlib.crc32(body[start:pos - 4]) != rec_crc:
            raise CheckpointError(f"checksum mismatch in record {name!r}")
        if not np.all(np.isfinite(data)):
            raise CheckpointError(f"non-finite values in record {name!r}")
        records[name] = Record(kind, tuple(int(d) for d in dims), data)
    if pos != len(body):
        raise CheckpointError(f"{len(body) - pos} trailing bytes after the last record")
    if zlib.crc32(body) != crc:
        raise CheckpointError("checksum mismatch in file header")
    return records
