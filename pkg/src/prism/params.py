"""Named parameter store with gradient buffers and binary checkpoint I/O.

Checkpoint layout (little-endian): magic ``PRSM``, format version u32,
entry count u32, then per entry {name length u16, UTF-8 name, rank u8,
one u32 per dim, raw float32 values}. The run seed travels as a reserved
``_meta.seed`` entry (two float32 halves, seed = hi * 65536 + lo) so a
checkpoint can reproduce its own Gumbel noise stream. Round-trips are
bit-exact.
"""

from __future__ import annotations

import struct

import numpy as np

from .tensor import Tensor, param_leaf

MAGIC = b"PRSM"
FORMAT_VERSION = 1
META_SEED = "_meta.seed"


class CheckpointError(ValueError):
    pass


def trunc_normal(rng: np.random.Generator, shape, std: float = 0.02) -> np.ndarray:
    return np.clip(rng.standard_normal(shape) * std, -2 * std, 2 * std).astype(np.float32)


class Param:
    __slots__ = ("name", "value", "grad", "_leaf", "_leaf_epoch")

    def __init__(self, name: str, value: np.ndarray):
        self.name = name
        self.value = value
        self.grad = np.zeros_like(value)
        self._leaf = None
        self._leaf_epoch = -1

    @property
    def shape(self):
        return self.value.shape


class ParamStore:
    """Ordered map of named parameters; each forward pass binds them to
    fresh tape leaves via :meth:`leaf` so gradients land per step."""

    def __init__(self):
        self._params: dict[str, Param] = {}
        self._epoch = 0

    def create(self, name: str, value: np.ndarray) -> Param:
        if name in self._params:
            raise ValueError(f"duplicate parameter name: {name}")
        p = Param(name, np.ascontiguousarray(value, dtype=np.float32))
        self._params[name] = p
        return p

    def __getitem__(self, name: str) -> Param:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self):
        return list(self._params)

    def params(self):
        return self._params.values()

    def num_values(self) -> int:
        return sum(p.value.size for p in self._params.values())

    def begin_step(self):
        """Invalidate cached leaves; call once per forward/backward cycle."""
        self._epoch += 1

    def leaf(self, p: Param) -> Tensor:
        if p._leaf_epoch != self._epoch:
            p._leaf = param_leaf(p.value)
            p._leaf_epoch = self._epoch
        return p._leaf

    def harvest_grads(self):
        """Copy tape gradients into the per-parameter buffers.

        Parameters not reached by the last backward pass get zero gradients.
        """
        for p in self._params.values():
            if p._leaf_epoch == self._epoch and p._leaf is not None and p._leaf.grad is not None:
                p.grad = np.ascontiguousarray(p._leaf.grad, dtype=p.value.dtype)
            else:
                p.grad = np.zeros_like(p.value)
        return self

    # -- checkpoint I/O ------------------------------------------------------

    def save(self, path, seed: int | None = None):
        entries = []
        if seed is not None:
            if not 0 <= seed < 2 ** 32:
                raise CheckpointError(f"seed {seed} out of u32 range")
            entries.append((META_SEED, np.asarray([seed >> 16, seed & 0xFFFF], dtype=np.float32)))
        entries.extend((p.name, p.value) for p in self._params.values())
        with open(path, "wb") as f:
            f.write(MAGIC)
            f.write(struct.pack("<II", FORMAT_VERSION, len(entries)))
            for name, value in entries:
                raw = name.encode("utf-8")
                f.write(struct.pack("<H", len(raw)))
                f.write(raw)
                f.write(struct.pack("<B", value.ndim))
                for d in value.shape:
                    f.write(struct.pack("<I", d))
                f.write(np.ascontiguousarray(value, dtype="<f4").tobytes())

    def load(self, path):
        """Load values into this store; every name and shape must match."""
        data, _ = read_checkpoint(path)
        missing = set(self._params) - set(data)
        extra = set(data) - set(self._params)
        if missing or extra:
            raise CheckpointError(f"checkpoint/model mismatch: missing={sorted(missing)[:4]} "
                                  f"extra={sorted(extra)[:4]}")
        for name, value in data.items():
            p = self._params[name]
            if p.value.shape != value.shape:
                raise CheckpointError(f"shape mismatch for {name}: "
                                      f"model {p.value.shape} vs checkpoint {value.shape}")
            p.value = value
        self._epoch += 1
        return self


def read_checkpoint(path):
    """Read a checkpoint file; returns ({name: float32 array}, seed or None)."""
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != MAGIC:
        raise CheckpointError(f"bad magic bytes in {path}")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    off = 12
    out = {}
    seed = None
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", blob, off)
        off += 2
        name = blob[off:off + nlen].decode("utf-8")
        off += nlen
        (rank,) = struct.unpack_from("<B", blob, off)
        off += 1
        dims = struct.unpack_from(f"<{rank}I", blob, off) if rank else ()
        off += 4 * rank
        n = int(np.prod(dims)) if rank else 1
        value = np.frombuffer(blob, dtype="<f4", count=n, offset=off).reshape(dims).copy()
        off += 4 * n
        if name == META_SEED:
            seed = int(value[0]) * 65536 + int(value[1])
        else:
            out[name] = value
    if off != len(blob):
        raise CheckpointError(f"trailing bytes in {path}")
    return out, seed
