"""Named parameter store, initializers, and binary checkpoints.

Checkpoint layout (little-endian throughout):

    magic   8 bytes   b"LARMCKPT"
    version u32       1
    count   u32       number of tensor records
    record  repeated  u32 name_len | name utf-8 | u32 rank | u32 dims... | f64 data
    opt     u8        1 if optimizer state follows, else 0
    [m records, v records in the same format, then u64 step count]
"""

from __future__ import annotations

import struct

import numpy as np

from .autodiff import Tensor

_MAGIC = b"LARMCKPT"
_VERSION = 1


class CheckpointMismatch(Exception):
    """A stored tensor does not line up with the live model."""


class ParamStore:
    """Ordered mapping of name -> trainable Tensor."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, data: np.ndarray) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name: {name}")
        t = Tensor(np.asarray(data, dtype=np.float64), requires_grad=True)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self):
        return list(self._params)

    def tensors(self):
        return list(self._params.values())

    def zero_grads(self):
        for t in self._params.values():
            t.grad = None

    def num_values(self) -> int:
        return sum(t.data.size for t in self._params.values())

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self._params.items()}

    def load_state_arrays(self, state: dict[str, np.ndarray]):
        for name, t in self._params.items():
            if name not in state:
                raise CheckpointMismatch(f"checkpoint is missing tensor {name!r}")
            arr = state[name]
            if arr.shape != t.data.shape:
                raise CheckpointMismatch(
                    f"tensor {name!r}: checkpoint shape {arr.shape} != model shape {t.data.shape}"
                )
            t.data = arr.astype(np.float64).copy()
        extra = set(state) - set(self._params)
        if extra:
            raise CheckpointMismatch(f"checkpoint has unknown tensor {sorted(extra)[0]!r}")


# -- initializers -----------------------------------------------------------


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> np.ndarray:
    """Uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out))."""
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=shape)


def init_linear(store: ParamStore, rng: np.random.Generator, name: str, n_in: int, n_out: int):
    """Dense layer params: weight (n_in, n_out) Glorot, bias zeros."""
    w = store.add(f"{name}.w", glorot_uniform(rng, n_in, n_out, (n_in, n_out)))
    b = store.add(f"{name}.b", np.zeros(n_out))
    return w, b


def init_conv(store: ParamStore, rng: np.random.Generator, name: str, c_in: int, c_out: int):
    """3x3 conv params: kernel (c_out, c_in, 3, 3) Glorot on receptive fields."""
    fan_in = c_in * 9
    fan_out = c_out * 9
    w = store.add(f"{name}.w", glorot_uniform(rng, fan_in, fan_out, (c_out, c_in, 3, 3)))
    b = store.add(f"{name}.b", np.zeros(c_out))
    return w, b


def init_embedding(store: ParamStore, rng: np.random.Generator, name: str, vocab: int, dim: int):
    return store.add(name, rng.normal(0.0, 0.02, size=(vocab, dim)))


def init_layer_norm(store: ParamStore, name: str, dim: int):
    gain = store.add(f"{name}.gain", np.ones(dim))
    bias = store.add(f"{name}.bias", np.zeros(dim))
    return gain, bias


# -- checkpoint serialization -------------------------------------------------


def _write_record(fh, name: str, arr: np.ndarray):
    encoded = name.encode("utf-8")
    fh.write(struct.pack("<I", len(encoded)))
    fh.write(encoded)
    fh.write(struct.pack("<I", arr.ndim))
    for d in arr.shape:
        fh.write(struct.pack("<I", d))
    fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _read_record(fh):
    (name_len,) = struct.unpack("<I", fh.read(4))
    name = fh.read(name_len).decode("utf-8")
    (rank,) = struct.unpack("<I", fh.read(4))
    dims = tuple(struct.unpack("<I", fh.read(4))[0] for _ in range(rank))
    count = int(np.prod(dims)) if dims else 1
    arr = np.frombuffer(fh.read(8 * count), dtype="<f8").reshape(dims).astype(np.float64)
    return name, arr


def save_checkpoint(path, store: ParamStore, optimizer=None):
    """Write all parameters (and optimizer moments, if given) to ``path``."""
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", _VERSION))
        fh.write(struct.pack("<I", len(store)))
        for name, t in store.items():
            _write_record(fh, name, t.data)
        if optimizer is None:
            fh.write(struct.pack("<B", 0))
        else:
            fh.write(struct.pack("<B", 1))
            for name, arr in optimizer.moment1.items():
                _write_record(fh, name, arr)
            for name, arr in optimizer.moment2.items():
                _write_record(fh, name, arr)
            fh.write(struct.pack("<Q", optimizer.step_count))


def load_checkpoint(path, store: ParamStore, optimizer=None):
    """Restore parameters (and optimizer moments) saved by ``save_checkpoint``.

    Raises CheckpointMismatch naming the first offending tensor when shapes or
    names disagree with the live model.
    """
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != _MAGIC:
            raise CheckpointMismatch(f"bad checkpoint magic {magic!r}")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != _VERSION:
            raise CheckpointMismatch(f"unsupported checkpoint version {version}")
        (count,) = struct.unpack("<I", fh.read(4))
        state = {}
        for _ in range(count):
            name, arr = _read_record(fh)
            state[name] = arr
        store.load_state_arrays(state)
        (has_opt,) = struct.unpack("<B", fh.read(1))
        if has_opt and optimizer is not None:
            for moments in (optimizer.moment1, optimizer.moment2):
                for _ in range(count):
                    name, arr = _read_record(fh)
                    if name not in moments:
                        raise CheckpointMismatch(f"optimizer state for unknown tensor {name!r}")
                    if arr.shape != moments[name].shape:
                        raise CheckpointMismatch(
                            f"optimizer moment {name!r}: shape {arr.shape} != {moments[name].shape}"
                        )
                    moments[name] = arr
            (optimizer.step_count,) = struct.unpack("<Q", fh.read(8))
