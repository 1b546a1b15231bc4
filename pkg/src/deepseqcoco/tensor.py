"""Dense float tensors with tape-based reverse-mode differentiation.

Every differentiable kernel in :mod:`deepseqcoco.functional` goes through
:func:`record`, which wraps the numpy result in a :class:`Tensor`, checks it
for NaN/Inf and, when a :class:`Tape` is active and some input requires a
gradient, appends a node holding the backward closure.  :func:`backward`
replays the tape in exact reverse order.

Layout convention for images is NHWC, row-major (C-contiguous).
"""

from __future__ import annotations

import contextlib
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .errors import DataError, NumericError, ShapeError, UsageError

_default_dtype = np.dtype(np.float32)
_tape_stack: list["Tape"] = []


def get_default_dtype() -> np.dtype:
    return _default_dtype


def set_default_dtype(dtype) -> None:
    """Select 32-bit (default) or 64-bit floats for newly created tensors."""
    global _default_dtype
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise UsageError(f"unsupported dtype {dtype}; use float32 or float64")
    _default_dtype = dtype


@contextlib.contextmanager
def precision(dtype):
    """Temporarily switch the default float width, e.g. ``precision("float64")``."""
    previous = _default_dtype
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(previous)


class Tensor:
    """An n-dimensional float array with an optional gradient slot."""

    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None, dtype=None):
        arr = np.array(data, dtype=dtype or _default_dtype, order="C", copy=True)
        if any(d < 1 for d in arr.shape):
            raise ShapeError(f"all extents must be >= 1, got {arr.shape}")
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self.name = name

    @classmethod
    def wrap(cls, arr: np.ndarray, requires_grad: bool = False, name: Optional[str] = None) -> "Tensor":
        """Wrap an existing array without copying (internal fast path)."""
        t = cls.__new__(cls)
        t.data = np.ascontiguousarray(arr)
        t.grad = None
        t.requires_grad = requires_grad
        t.name = name
        return t

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise UsageError(f"tensor of shape {self.shape} is not a scalar")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def detach(self) -> "Tensor":
        return Tensor.wrap(self.data.copy(), name=self.name)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label}, requires_grad={self.requires_grad})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class Node:
    op: str
    out: Tensor
    inputs: tuple
    backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tape:
    """Ordered record of differentiable operations.

    Use as a context manager; operations executed inside the ``with`` block
    are recorded when at least one input requires a gradient.
    """

    def __init__(self):
        self.nodes: list[Node] = []

    def __enter__(self) -> "Tape":
        _tape_stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _tape_stack.remove(self)

    def __len__(self) -> int:
        return len(self.nodes)

    def clear(self) -> None:
        self.nodes.clear()


def current_tape() -> Optional[Tape]:
    return _tape_stack[-1] if _tape_stack else None


@contextlib.contextmanager
def no_tape():
    """Suspend recording (used for inference and frozen sub-networks)."""
    saved = list(_tape_stack)
    _tape_stack.clear()
    try:
        yield
    finally:
        _tape_stack.extend(saved)


def record(op: str, out: np.ndarray, inputs: Sequence[Tensor], backward_fn) -> Tensor:
    if not np.all(np.isfinite(out)):
        raise NumericError(f"{op}: produced non-finite values")
    requires = any(t.requires_grad for t in inputs)
    result = Tensor.wrap(out, requires_grad=requires)
    tape = current_tape()
    if requires and tape is not None:
        tape.nodes.append(Node(op, result, tuple(inputs), backward_fn))
    return result


def backward(loss: Tensor, tape: Tape, params: Iterable[Tensor] = ()) -> None:
    """Write d(loss)/d(t) into ``t.grad`` for every tensor on the tape.

    Tensors listed in ``params`` that never reached the loss end up with an
    all-zero gradient.  Gradients are overwritten, not accumulated, so a
    fresh call always reflects only this loss.
    """
    if loss.size != 1:
        raise UsageError(f"backward needs a scalar loss, got shape {loss.shape}")
    for node in tape.nodes:
        node.out.grad = None
        for t in node.inputs:
            t.grad = None
    for p in params:
        p.grad = np.zeros_like(p.data)
    loss.grad = np.ones_like(loss.data)
    for node in reversed(tape.nodes):
        g = node.out.grad
        if g is None:
            continue
        for t, gi in zip(node.inputs, node.backward(g)):
            if gi is None or not t.requires_grad:
                continue
            gi = np.asarray(gi, dtype=t.data.dtype).reshape(t.shape)
            if t.grad is None:
                t.grad = gi.copy()
            else:
                t.grad += gi


# --- DSQT raw tensor files -------------------------------------------------

DSQT_MAGIC = b"DSQT"
DSQT_VERSION = 1


def save_tensor(path, tensor) -> None:
    """Write ``tensor`` (Tensor or array) as little-endian float32 DSQT."""
    arr = tensor.data if isinstance(tensor, Tensor) else np.asarray(tensor)
    header = DSQT_MAGIC + struct.pack("<II", DSQT_VERSION, arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    Path(path).write_bytes(header + np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_tensor(path) -> Tensor:
    raw = Path(path).read_bytes()
    if raw[:4] != DSQT_MAGIC:
        raise DataError(f"{path}: not a DSQT file")
    if len(raw) < 12:
        raise DataError(f"{path}: truncated header")
    version, rank = struct.unpack_from("<II", raw, 4)
    if version != DSQT_VERSION:
        raise DataError(f"{path}: unsupported DSQT version {version}")
    offset = 12 + 4 * rank
    if len(raw) < offset:
        raise DataError(f"{path}: truncated header")
    dims = struct.unpack_from(f"<{rank}I", raw, 12)
    count = int(np.prod(dims, dtype=np.int64))
    if len(raw) - offset != 4 * count:
        raise DataError(f"{path}: payload holds {len(raw) - offset} bytes, expected {4 * count}")
    arr = np.frombuffer(raw, dtype="<f4", count=count, offset=offset).reshape(dims)
    return Tensor(arr, dtype=np.float32)
