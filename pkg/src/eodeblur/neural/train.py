"""Training configuration, LR schedule, gradients, gradient checking and Adam training."""

from __future__ import annotations

import configparser
import csv
import math
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .loss import content_loss_graph, pyramid
from .model import Architecture, Graph, ModelWeights, init_weights


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 4
    lr_initial: float = 1e-4
    lr_step: int = 500
    lr_gamma: float = 0.5
    total_iterations: int = 3000
    fft_loss_weight: float = 0.1
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        for f in ("batch_size", "lr_initial", "lr_step", "lr_gamma", "total_iterations"):
            if not getattr(self, f) > 0:
                raise ValueError(f"{f} must be positive")
        if self.fft_loss_weight < 0:
            raise ValueError("fft_loss_weight must be >= 0")

    @classmethod
    def from_ini(cls, path: str | Path, section: str = "train", **overrides) -> "TrainConfig":
        parser = configparser.ConfigParser()
        if not parser.read(path):
            raise FileNotFoundError(path)
        values = {}
        if parser.has_section(section):
            types = {f.name: f.type for f in fields(cls)}
            for key, raw in parser.items(section):
                if key not in types:
                    raise ValueError(f"unknown [{section}] key {key!r}")
                values[key] = int(raw) if types[key] in ("int", int) else float(raw)
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)


def lr_at(config: TrainConfig, iteration: int) -> float:
    """Step schedule: lr_initial * lr_gamma ** (iteration // lr_step)."""
    if not 0 <= iteration < config.total_iterations:
        raise ValueError(f"iteration {iteration} outside [0, {config.total_iterations})")
    return config.lr_initial * config.lr_gamma ** (iteration // config.lr_step)


def loss_and_gradients(weights: ModelWeights, batch: np.ndarray, targets: np.ndarray,
                       lam: float) -> tuple[float, dict[str, np.ndarray]]:
    """Content loss of one batch and its gradient for every parameter."""
    if batch.shape != targets.shape:
        raise T.ShapeError(f"batch {batch.shape} vs targets {targets.shape}")
    dtype = next(iter(weights.params.values())).dtype
    graph = Graph(weights)
    outs = graph.forward(T.Tensor(np.asarray(batch, dtype=dtype)))
    loss = content_loss_graph(outs, pyramid(np.asarray(targets, dtype=dtype)), lam)
    loss.backward()
    return float(loss.value), graph.gradients()


def backward(weights: ModelWeights, batch: np.ndarray, targets: np.ndarray, lam: float) -> dict[str, np.ndarray]:
    return loss_and_gradients(weights, batch, targets, lam)[1]


def batch_loss(weights: ModelWeights, batch: np.ndarray, targets: np.ndarray, lam: float) -> float:
    dtype = next(iter(weights.params.values())).dtype
    outs = Graph(weights).forward(T.Tensor(np.asarray(batch, dtype=dtype)))
    return float(content_loss_graph(outs, pyramid(np.asarray(targets, dtype=dtype)), lam).value)


GradFn = Callable[[ModelWeights, np.ndarray, np.ndarray, float], dict[str, np.ndarray]]
LossFn = Callable[[ModelWeights, np.ndarray, np.ndarray, float], float]


def relative_error(analytic: float, numeric: float, floor: float = 1e-10) -> float:
    scale = max(abs(analytic), abs(numeric))
    if scale < floor:
        return abs(analytic - numeric)
    return abs(analytic - numeric) / scale


def _loss_with_pattern(loss_fn: LossFn, w, x, y, lam) -> tuple[float, bytes]:
    with T.record_kinks() as log:
        value = loss_fn(w, x, y, lam)
    return value, b"".join(p.tobytes() for p in log)


@dataclass
class GradcheckReport:
    max_relative_error: float
    checked: int
    shrunk: int            # entries that needed a step below eps to avoid a kink
    skipped: int           # entries dropped because every tried step crossed a kink
    worst_parameter: str


def gradcheck_report(weights: ModelWeights, sample: tuple[np.ndarray, np.ndarray], eps: float = 1e-3,
                     n_params: int = 200, lam: float = 0.1, seed: int = 0,
                     grad_fn: GradFn = backward, loss_fn: LossFn = batch_loss,
                     max_halvings: int = 12) -> GradcheckReport:
    """Compare analytic gradients with central differences in float64.

    ReLU and L1 terms make the loss piecewise smooth. A difference quotient
    whose +/- probes land on a different branch pattern (ReLU masks, L1 signs)
    than the base point measures the kink, not the gradient, so the step is
    halved until the pattern matches; entries that never match are replaced
    by fresh draws. At least one entry of every tensor is tried.
    """
    w64 = weights.astype(np.float64)
    x, y = (np.asarray(a, dtype=np.float64) for a in sample)
    grads = grad_fn(w64, x, y, lam)
    _, base_pattern = _loss_with_pattern(loss_fn, w64, x, y, lam)
    rng = np.random.default_rng(seed)
    names = list(w64.params)
    sizes = np.array([w64.params[n].size for n in names])
    bounds = np.cumsum(sizes)

    def draw():
        f = int(rng.integers(bounds[-1]))
        i = int(np.searchsorted(bounds, f, side="right"))
        return names[i], int(f - (bounds[i] - sizes[i]))

    queue = [(n, int(rng.integers(w64.params[n].size))) for n in names]
    seen: set[tuple[str, int]] = set()
    worst, worst_name = 0.0, ""
    checked = shrunk = skipped = 0
    while checked < n_params:
        if queue:
            pick = queue.pop(0)
        else:
            pick = draw()
            if pick in seen and len(seen) < bounds[-1]:
                continue
        seen.add(pick)
        name, idx = pick
        p = w64.params[name].reshape(-1)
        orig = p[idx]
        h = eps
        numeric = None
        for attempt in range(max_halvings + 1):
            p[idx] = orig + h
            up, pat_up = _loss_with_pattern(loss_fn, w64, x, y, lam)
            p[idx] = orig - h
            down, pat_down = _loss_with_pattern(loss_fn, w64, x, y, lam)
            p[idx] = orig
            if pat_up == base_pattern and pat_down == base_pattern:
                numeric = (up - down) / (2 * h)
                shrunk += attempt > 0
                break
            h /= 2
        if numeric is None:
            skipped += 1
            continue
        err = relative_error(float(grads[name].reshape(-1)[idx]), numeric)
        checked += 1
        if err > worst:
            worst, worst_name = err, f"{name}[{idx}]"
    return GradcheckReport(worst, checked, shrunk, skipped, worst_name)


def gradcheck(weights: ModelWeights, sample: tuple[np.ndarray, np.ndarray], eps: float = 1e-3,
              n_params: int = 200, lam: float = 0.1, seed: int = 0,
              grad_fn: GradFn = backward, loss_fn: LossFn = batch_loss) -> float:
    """Max relative error between analytic gradients and central differences."""
    return gradcheck_report(weights, sample, eps, n_params, lam, seed, grad_fn, loss_fn).max_relative_error


# -- training -------------------------------------------------------------------

def _stack_pairs(pairs) -> tuple[np.ndarray, np.ndarray]:
    xs, ys = [], []
    for degraded, clean in pairs:
        xs.append(getattr(degraded, "data", degraded))
        ys.append(getattr(clean, "data", clean))
    return np.stack(xs).astype(np.float32), np.stack(ys).astype(np.float32)


def dataset_loss(weights: ModelWeights, pairs, lam: float, chunk: int = 8) -> float:
    """Mean per-sample content loss over a dataset."""
    x, y = _stack_pairs(pairs)
    total = 0.0
    for i in range(0, len(x), chunk):
        total += batch_loss(weights, x[i:i + chunk], y[i:i + chunk], lam) * len(x[i:i + chunk])
    return total / len(x)


@dataclass
class TrainResult:
    weights: ModelWeights
    curve: list[tuple[int, float, float]]   # (iteration, lr, batch loss)

    def write_csv(self, path: str | Path) -> Path:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iteration", "lr", "loss"])
            for it, lr, loss in self.curve:
                writer.writerow([it, repr(lr), repr(loss)])
        return Path(path)


def train_toy(config: TrainConfig, pairs: Sequence, arch: Architecture = Architecture(),
              init: ModelWeights | None = None,
              progress: Callable[[int, float], None] | None = None) -> TrainResult:
    """Adam on the content loss with the step LR schedule.

    Batches are drawn without replacement from a seeded permutation that is
    reshuffled each epoch.
    """
    if len(pairs) == 0:
        raise ValueError("empty dataset")
    if len(pairs) < config.batch_size:
        raise ValueError(f"need at least batch_size={config.batch_size} pairs")
    x_all, y_all = _stack_pairs(pairs)
    weights = init.copy() if init is not None else init_weights(arch, seed=config.seed)
    rng = np.random.default_rng(config.seed)
    m = {k: np.zeros_like(v) for k, v in weights.params.items()}
    v = {k: np.zeros_like(p) for k, p in weights.params.items()}
    b1, b2, eps = config.adam_beta1, config.adam_beta2, config.adam_eps
    order = rng.permutation(len(x_all))
    cursor = 0
    curve = []
    for it in range(config.total_iterations):
        if cursor + config.batch_size > len(order):
            order = rng.permutation(len(x_all))
            cursor = 0
        idx = order[cursor:cursor + config.batch_size]
        cursor += config.batch_size
        loss, grads = loss_and_gradients(weights, x_all[idx], y_all[idx], config.fft_loss_weight)
        lr = lr_at(config, it)
        t = it + 1
        for k, p in weights.params.items():
            g = grads[k]
            m[k] = b1 * m[k] + (1 - b1) * g
            v[k] = b2 * v[k] + (1 - b2) * g * g
            mhat = m[k] / (1 - b1 ** t)
            vhat = v[k] / (1 - b2 ** t)
            p -= (lr * mhat / (np.sqrt(vhat) + eps)).astype(p.dtype)
        curve.append((it, lr, loss))
        if progress is not None:
            progress(it, loss)
        if not math.isfinite(loss):
            raise FloatingPointError(f"loss diverged at iteration {it}")
    return TrainResult(weights, curve)
