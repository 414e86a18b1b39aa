"""Multi-scale content loss: L1 plus weighted L1 on the 2-D spectra."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from . import tensor as T


def l1_fft_loss(out: T.Tensor, target: np.ndarray, lam: float) -> T.Tensor:
    """mean|out - target| + lam * mean|FFT2(out) - FFT2(target)| for one scale."""
    if out.shape != target.shape:
        raise T.ShapeError(f"output {out.shape} vs target {target.shape}")
    diff = out.value - target
    n = diff.size
    T.log_kink(diff > 0)
    value = np.mean(np.abs(diff))
    spec = None
    if lam:
        spec = np.fft.fft2(diff, axes=(-2, -1))
        mag = np.abs(spec)
        value = value + lam * np.mean(mag)
    value = np.asarray(value, dtype=out.value.dtype)

    def backward(g):
        grad = np.sign(diff) / n
        if spec is not None:
            with np.errstate(invalid="ignore", divide="ignore"):
                unit = np.where(mag > 0, spec / mag, 0)
            hw = diff.shape[-1] * diff.shape[-2]
            # d|F(x)|/dx summed over bins = Re(F^H unit) = hw * Re(ifft2(unit))
            grad = grad + lam * hw * np.real(np.fft.ifft2(unit, axes=(-2, -1))) / n
        out._accumulate((g * grad).astype(out.value.dtype))

    return T.Tensor(value, (out,), backward)


def content_loss_graph(outputs: Sequence[T.Tensor], targets: Sequence[np.ndarray], lam: float) -> T.Tensor:
    if len(outputs) != len(targets):
        raise T.ShapeError("need one target per output scale")
    return T.total(l1_fft_loss(o, t, lam) for o, t in zip(outputs, targets))


def content_loss(outputs: Sequence[np.ndarray], targets: Sequence[np.ndarray], lam: float) -> float:
    """Sum over scales of mean L1 plus `lam` times mean spectral L1."""
    return float(content_loss_graph([T.Tensor(np.asarray(o)) for o in outputs],
                                    [np.asarray(t) for t in targets], lam).value)


def pyramid(x: np.ndarray, levels: int = 3) -> list[np.ndarray]:
    """Targets at full, 1/2, 1/4 scale by 2x2 block means."""
    out = [x]
    for _ in range(levels - 1):
        n, c, h, w = out[-1].shape
        out.append(out[-1].reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5)).astype(x.dtype))
    return out
