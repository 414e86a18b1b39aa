"""Toy multi-input multi-output U-shaped restorer.

Three scales (full, 1/2, 1/4). Each scale receives the area-downsampled input
and emits ``input + residual``, so zeroed output heads give an exact identity.

    x1 ─ conv─RB ──────────────────────────────── e1 ─┐
    x2 ─ shallow conv ⊕ strided conv(e1) ─ RB ─── e2 ─┐│
    x3 ─ shallow conv ⊕ strided conv(e2) ─ RB ─── e3  ││
    out3 = x3 + head3(e3)                             ││
    d2 = RB(up-conv(e3) ⊕ e2);  out2 = x2 + head2(d2) ┘│
    d1 = RB(up-conv(d2) ⊕ e1);  out1 = x1 + head1(d1) ─┘
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T


@dataclass(frozen=True)
class Architecture:
    widths: tuple[int, int, int] = (8, 16, 32)
    in_channels: int = 3

    def to_dict(self) -> dict:
        return {"widths": list(self.widths), "in_channels": self.in_channels}


def parameter_shapes(arch: Architecture) -> dict[str, tuple[int, ...]]:
    """Name -> shape for every parameter, in a fixed order."""
    c = arch.in_channels
    w1, w2, w3 = arch.widths
    convs = {
        "enc1.in": (w1, c),
        "enc1.rb.a": (w1, w1), "enc1.rb.b": (w1, w1),
        "enc2.down": (w2, w1), "enc2.scm": (w2, c),
        "enc2.rb.a": (w2, w2), "enc2.rb.b": (w2, w2),
        "enc3.down": (w3, w2), "enc3.scm": (w3, c),
        "enc3.rb.a": (w3, w3), "enc3.rb.b": (w3, w3),
        "head3": (c, w3),
        "dec2.up": (w2, w3),
        "dec2.rb.a": (w2, w2), "dec2.rb.b": (w2, w2),
        "head2": (c, w2),
        "dec1.up": (w1, w2),
        "dec1.rb.a": (w1, w1), "dec1.rb.b": (w1, w1),
        "head1": (c, w1),
    }
    shapes: dict[str, tuple[int, ...]] = {}
    for name, (o, i) in convs.items():
        shapes[name + ".w"] = (o, i, 3, 3)
        shapes[name + ".b"] = (o,)
    return shapes


HEADS = ("head1", "head2", "head3")


@dataclass
class ModelWeights:
    """Named parameter arrays plus the architecture they belong to."""

    arch: Architecture
    params: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        expected = parameter_shapes(self.arch)
        missing = set(expected) - set(self.params)
        extra = set(self.params) - set(expected)
        if missing or extra:
            raise T.ShapeError(f"weights do not match architecture (missing {sorted(missing)}, extra {sorted(extra)})")
        for name, shape in expected.items():
            if self.params[name].shape != shape:
                raise T.ShapeError(f"{name}: shape {self.params[name].shape}, expected {shape}")

    @property
    def n_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    def astype(self, dtype) -> "ModelWeights":
        return ModelWeights(self.arch, {k: v.astype(dtype) for k, v in self.params.items()})

    def copy(self) -> "ModelWeights":
        return ModelWeights(self.arch, {k: v.copy() for k, v in self.params.items()})


def init_weights(arch: Architecture = Architecture(), seed: int = 0,
                 zero_heads: bool = False, dtype=np.float32) -> ModelWeights:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in parameter_shapes(arch).items():
        layer = name.rsplit(".", 1)[0]
        if zero_heads and layer in HEADS:
            params[name] = np.zeros(shape, dtype=dtype)
            continue
        wshape = parameter_shapes(arch)[layer + ".w"]
        bound = 1.0 / np.sqrt(wshape[1] * wshape[2] * wshape[3])
        params[name] = rng.uniform(-bound, bound, size=shape).astype(dtype)
    return ModelWeights(arch, params)


class Graph:
    """Parameter tensors for one forward/backward pass."""

    def __init__(self, weights: ModelWeights):
        self.weights = weights
        self.tensors = {k: T.param(v, k) for k, v in weights.params.items()}

    def conv(self, name: str, x: T.Tensor, stride: int = 1) -> T.Tensor:
        return T.conv2d(x, self.tensors[name + ".w"], self.tensors[name + ".b"], stride=stride, pad=1)

    def resblock(self, name: str, x: T.Tensor) -> T.Tensor:
        h = T.relu(self.conv(name + ".a", x))
        return T.add(x, self.conv(name + ".b", h))

    def forward(self, x1: T.Tensor) -> list[T.Tensor]:
        x2 = T.avgpool2(x1)
        x3 = T.avgpool2(x2)
        e1 = self.resblock("enc1.rb", T.relu(self.conv("enc1.in", x1)))
        h2 = T.add(T.relu(self.conv("enc2.down", e1, stride=2)), T.relu(self.conv("enc2.scm", x2)))
        e2 = self.resblock("enc2.rb", h2)
        h3 = T.add(T.relu(self.conv("enc3.down", e2, stride=2)), T.relu(self.conv("enc3.scm", x3)))
        e3 = self.resblock("enc3.rb", h3)
        out3 = T.add(x3, self.conv("head3", e3))
        d2 = T.add(T.relu(self.conv("dec2.up", T.upsample2(e3))), e2)
        d2 = self.resblock("dec2.rb", d2)
        out2 = T.add(x2, self.conv("head2", d2))
        d1 = T.add(T.relu(self.conv("dec1.up", T.upsample2(d2))), e1)
        d1 = self.resblock("dec1.rb", d1)
        out1 = T.add(x1, self.conv("head1", d1))
        return [out1, out2, out3]

    def gradients(self) -> dict[str, np.ndarray]:
        return {k: (t.grad if t.grad is not None else np.zeros_like(t.value)) for k, t in self.tensors.items()}


def _check_input(x: np.ndarray) -> None:
    if x.ndim != 4:
        raise T.ShapeError("expected an NCHW batch")
    if x.shape[2] % 4 or x.shape[3] % 4:
        raise T.ShapeError(f"spatial dims {x.shape[2:]} must be divisible by 4")


def mimo_forward(weights: ModelWeights, img: np.ndarray) -> list[np.ndarray]:
    """Restored estimates at full, 1/2 and 1/4 scale."""
    _check_input(img)
    img = np.asarray(img, dtype=next(iter(weights.params.values())).dtype)
    return [o.value for o in Graph(weights).forward(T.Tensor(img))]


def restore_array(weights: ModelWeights, planes: np.ndarray) -> np.ndarray:
    """Full-scale output for a single (C, H, W) array."""
    return mimo_forward(weights, planes[None])[0][0]


def _layer_table(arch: Architecture) -> list[tuple[str, int, int, int, int]]:
    """(op, scale, in_channels, out_channels, stride) for every node of :meth:`Graph.forward`.

    Scale 0 is full resolution; a strided conv reads scale s and writes s + 1,
    an upsample reads s and writes s - 1.
    """
    c = arch.in_channels
    w1, w2, w3 = arch.widths
    rb = lambda s, w: [("conv", s, w, w, 1), ("relu", s, w, w, 1), ("conv", s, w, w, 1), ("add", s, w, w, 1)]
    return [
        ("pool", 0, c, c, 1), ("pool", 1, c, c, 1),
        ("conv", 0, c, w1, 1), ("relu", 0, w1, w1, 1), *rb(0, w1),
        ("conv", 0, w1, w2, 2), ("relu", 1, w2, w2, 1), ("conv", 1, c, w2, 1), ("relu", 1, w2, w2, 1),
        ("add", 1, w2, w2, 1), *rb(1, w2),
        ("conv", 1, w2, w3, 2), ("relu", 2, w3, w3, 1), ("conv", 2, c, w3, 1), ("relu", 2, w3, w3, 1),
        ("add", 2, w3, w3, 1), *rb(2, w3),
        ("conv", 2, w3, c, 1), ("add", 2, c, c, 1),
        ("up", 2, w3, w3, 1), ("conv", 1, w3, w2, 1), ("relu", 1, w2, w2, 1), ("add", 1, w2, w2, 1), *rb(1, w2),
        ("conv", 1, w2, c, 1), ("add", 1, c, c, 1),
        ("up", 1, w2, w2, 1), ("conv", 0, w2, w1, 1), ("relu", 0, w1, w1, 1), ("add", 0, w1, w1, 1), *rb(0, w1),
        ("conv", 0, w1, c, 1), ("add", 0, c, c, 1),
    ]


def activation_floats(arch: Architecture, h: int, w: int) -> int:
    """Float32 slots a forward pass holds at its high-water mark for one (h, w) sample.

    Walks the nodes in execution order, accumulating what the graph keeps
    alive: each output, each convolution's zero-padded input (retained by the
    im2col view) and each ReLU's boolean mask (a quarter float). During a
    convolution ``tensordot`` also makes a transient contiguous im2col copy
    of 9 * in_channels floats per output pixel; the result is the largest
    held-plus-transient total seen. ``h`` and ``w`` must be divisible by 4.
    """
    dims = [(h, w), (h // 2, w // 2), (h // 4, w // 4)]
    area = [a * b for a, b in dims]
    padded = [(a + 2) * (b + 2) for a, b in dims]
    held = arch.in_channels * area[0]      # the input itself
    peak = held
    for op, s, cin, cout, stride in _layer_table(arch):
        if op == "conv":
            so = s + (stride == 2)
            held += cin * padded[s]
            peak = max(peak, held + 9 * cin * area[so] + cout * area[so])
            held += cout * area[so]
        elif op == "relu":
            held += cout * area[s] + (cout * area[s]) // 4
        elif op == "pool":
            held += cout * area[s + 1]
        elif op == "up":
            held += cout * area[s - 1]
        else:
            held += cout * area[s]
        peak = max(peak, held)
    return peak
