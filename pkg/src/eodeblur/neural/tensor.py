"""A minimal reverse-mode autodiff engine over numpy arrays (NCHW layout).

Only the operations the restoration network needs are provided. Every op
keeps the dtype of its inputs, so the same graph runs in float32 for
training and float64 for gradient checks.
"""

from __future__ import annotations

from contextlib import contextmanager
from typing import Callable, Iterable

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    pass


class Tensor:
    """Array value plus gradient slot and the closure that back-propagates into parents."""

    __slots__ = ("value", "grad", "parents", "_backward", "name")

    def __init__(self, value: np.ndarray, parents: tuple["Tensor", ...] = (),
                 backward: Callable[[np.ndarray], None] | None = None, name: str = ""):
        self.value = value
        self.grad: np.ndarray | None = None
        self.parents = parents
        self._backward = backward
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = g.copy()
        else:
            self.grad += g

    def backward(self, seed: np.ndarray | None = None) -> None:
        """Propagate d(self)/d(node) into every ancestor's ``grad``."""
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node.parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.value) if seed is None else seed
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


def param(value: np.ndarray, name: str = "") -> Tensor:
    return Tensor(value, name=name)


# -- padding helpers ------------------------------------------------------------

def _reflect_matrix(n: int, pad: int, dtype) -> np.ndarray:
    """(n + 2 pad, n) selection matrix of symmetric (edge-repeating) padding."""
    idx = np.pad(np.arange(n), pad, mode="symmetric")
    m = np.zeros((n + 2 * pad, n), dtype=dtype)
    m[np.arange(len(idx)), idx] = 1
    return m


def _pad(x: np.ndarray, pad: int, mode: str) -> np.ndarray:
    if pad == 0:
        return x
    if mode == "zero":
        return np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    if mode == "reflect":
        return np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)), mode="symmetric")
    raise ValueError(f"unknown pad mode {mode!r}")


def _unpad_grad(g: np.ndarray, pad: int, mode: str, h: int, w: int) -> np.ndarray:
    if pad == 0:
        return g
    if mode == "zero":
        return g[:, :, pad:pad + h, pad:pad + w]
    ph, pw = _reflect_matrix(h, pad, g.dtype), _reflect_matrix(w, pad, g.dtype)
    return np.einsum("ph,ncpq,qw->nchw", ph, g, pw, optimize=True)


# -- ops ----------------------------------------------------------------------

def conv2d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray | None, stride: int = 1,
                   pad: int = 0, pad_mode: str = "zero") -> tuple[np.ndarray, np.ndarray]:
    """Cross-correlation. Returns the output and the im2col view used for backward."""
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError("conv2d expects NCHW input and OIkk weights")
    if x.shape[1] != w.shape[1]:
        raise ShapeError(f"input has {x.shape[1]} channels, kernel expects {w.shape[1]}")
    kh, kw = w.shape[2:]
    xp = _pad(x, pad, pad_mode)
    if xp.shape[2] < kh or xp.shape[3] < kw:
        raise ShapeError("kernel larger than padded input")
    cols = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    out = np.tensordot(cols, w, axes=([1, 4, 5], [1, 2, 3]))  # N, Ho, Wo, O
    if b is not None:
        out = out + b
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2)), cols


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, pad: int = 0,
           pad_mode: str = "zero") -> Tensor:
    out, cols = conv2d_forward(x.value, w.value, None if b is None else b.value, stride, pad, pad_mode)
    n, c, h, wd = x.shape
    kh, kw = w.shape[2:]
    ho, wo = out.shape[2:]

    def backward(g: np.ndarray) -> None:
        w._accumulate(np.tensordot(g, cols, axes=([0, 2, 3], [0, 2, 3])))
        if b is not None:
            b._accumulate(g.sum(axis=(0, 2, 3)))
        dcols = np.tensordot(g, w.value, axes=([1], [0]))  # N, Ho, Wo, C, kh, kw
        dxp = np.zeros((n, c, h + 2 * pad, wd + 2 * pad), dtype=g.dtype)
        for i in range(kh):
            for j in range(kw):
                dxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += \
                    dcols[..., i, j].transpose(0, 3, 1, 2)
        x._accumulate(_unpad_grad(dxp, pad, pad_mode, h, wd))

    parents = (x, w) if b is None else (x, w, b)
    return Tensor(out, parents, backward)


_kink_log: list[np.ndarray] | None = None


@contextmanager
def record_kinks():
    """Collect the branch pattern (ReLU masks, L1 signs) of every op run inside."""
    global _kink_log
    previous, _kink_log = _kink_log, []
    try:
        yield _kink_log
    finally:
        _kink_log = previous


def log_kink(pattern: np.ndarray) -> None:
    if _kink_log is not None:
        _kink_log.append(np.packbits(pattern.ravel()))


def relu(x: Tensor) -> Tensor:
    mask = x.value > 0
    log_kink(mask)
    return Tensor(x.value * mask, (x,), lambda g: x._accumulate(g * mask))


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"add shape mismatch {a.shape} vs {b.shape}")

    def backward(g):
        a._accumulate(g)
        b._accumulate(g)

    return Tensor(a.value + b.value, (a, b), backward)


def scale(a: Tensor, s: float) -> Tensor:
    return Tensor(a.value * a.value.dtype.type(s), (a,), lambda g: a._accumulate(g * g.dtype.type(s)))


def avgpool2(x: Tensor) -> Tensor:
    """2x2 block mean (area downsampling)."""
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError("avgpool2 needs even spatial dims")
    v = x.value.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))

    def backward(g):
        up = np.repeat(np.repeat(g, 2, axis=2), 2, axis=3) * g.dtype.type(0.25)
        x._accumulate(up)

    return Tensor(v.astype(x.value.dtype, copy=False), (x,), backward)


def upsample2(x: Tensor) -> Tensor:
    """Nearest-neighbour 2x upsampling."""
    v = np.repeat(np.repeat(x.value, 2, axis=2), 2, axis=3)

    def backward(g):
        n, c, h, w = g.shape
        x._accumulate(g.reshape(n, c, h // 2, 2, w // 2, 2).sum(axis=(3, 5)))

    return Tensor(v, (x,), backward)


def total(terms: Iterable[Tensor]) -> Tensor:
    terms = list(terms)
    value = sum(t.value for t in terms)

    def backward(g):
        for t in terms:
            t._accumulate(np.asarray(g))

    return Tensor(np.asarray(value), tuple(terms), backward)
