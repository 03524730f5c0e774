"""Generator and discriminator networks described layer by layer.

A :class:`NetworkSpec` is a plain, JSON-serialisable description; a
:class:`Network` is the torch module built from it. Spatial layers use
"same" padding so that the stride alone sets the resolution change:
a stride-``s`` convolution maps ``n -> ceil(n / s)`` and a stride-``s``
transposed convolution maps ``n -> n * s``.

Default generator (32x32x3 -> 32x32x3)::

    conv 64 3x3/2 -> lrelu -> conv 128 3x3/2 -> lrelu -> conv 256 3x3/2 -> lrelu
    tconv 128 3x3/2 -> lrelu -> tconv 64 3x3/2 -> lrelu -> tconv 3 3x3/2 -> sigmoid

Default discriminator (32x32x3 -> scalar)::

    conv 64 4x4/3 -> lrelu -> bn -> conv 128 4x4/3 -> lrelu -> bn
    fc 128 -> lrelu -> fc 1 -> sigmoid
"""

from __future__ import annotations

import copy
import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ShapeError, SpecError
from .metrics import GLOBAL, ssim_loss_torch

LAYER_KINDS = ("conv", "transposed_conv", "fully_connected", "leaky_relu", "batch_norm", "sigmoid")
ROLES = ("generator", "discriminator")
STRIDES = {"generator": 2, "discriminator": 3}
LEAKY_SLOPE = 0.2


@dataclass
class LayerSpec:
    kind: str
    filters: int = 0
    kernel: tuple[int, int] = (3, 3)
    stride: int = 1
    out_features: int = 0

    def __post_init__(self):
        self.kernel = tuple(int(k) for k in self.kernel)


@dataclass
class NetworkSpec:
    role: str
    layers: list[LayerSpec]
    input_shape: tuple[int, int, int] = (32, 32, 3)

    def __post_init__(self):
        self.input_shape = tuple(int(v) for v in self.input_shape)
        self.layers = [l if isinstance(l, LayerSpec) else LayerSpec(**l) for l in self.layers]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["input_shape"] = list(self.input_shape)
        for layer in d["layers"]:
            layer["kernel"] = list(layer["kernel"])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        return cls(role=d["role"], layers=[LayerSpec(**l) for l in d["layers"]], input_shape=tuple(d["input_shape"]))


def _conv(filters, kernel, stride, transposed=False):
    return LayerSpec("transposed_conv" if transposed else "conv", filters=filters, kernel=(kernel, kernel), stride=stride)


def default_generator_spec() -> NetworkSpec:
    act = LayerSpec("leaky_relu")
    layers = [
        _conv(64, 3, 2), act,
        _conv(128, 3, 2), act,
        _conv(256, 3, 2), act,
        _conv(128, 3, 2, True), act,
        _conv(64, 3, 2, True), act,
        _conv(3, 3, 2, True), LayerSpec("sigmoid"),
    ]
    return NetworkSpec("generator", copy.deepcopy(layers))


def default_discriminator_spec() -> NetworkSpec:
    layers = [
        _conv(64, 4, 3), LayerSpec("leaky_relu"), LayerSpec("batch_norm"),
        _conv(128, 4, 3), LayerSpec("leaky_relu"), LayerSpec("batch_norm"),
        LayerSpec("fully_connected", out_features=128), LayerSpec("leaky_relu"),
        LayerSpec("fully_connected", out_features=1), LayerSpec("sigmoid"),
    ]
    return NetworkSpec("discriminator", layers)


def validate_spec(spec: NetworkSpec) -> list[tuple[int, ...]]:
    """Propagate shapes through ``spec`` and check role invariants.

    Returns the output shape after every layer: ``(H, W, C)`` for spatial
    layers, ``(F,)`` once a fully connected layer has flattened the input.
    Raises :class:`SpecError` naming the first offending layer.
    """
    if spec.role not in ROLES:
        raise SpecError(f"unknown role {spec.role!r}")
    if not spec.layers:
        raise SpecError("network has no layers", 0)
    shape: tuple[int, ...] = tuple(spec.input_shape)
    if len(shape) != 3 or min(shape) < 1:
        raise SpecError(f"bad input shape {shape}")
    shapes = []
    required_stride = STRIDES[spec.role]
    for i, layer in enumerate(spec.layers):
        if layer.kind not in LAYER_KINDS:
            raise SpecError(f"layer {i}: unknown kind {layer.kind!r}", i)
        if layer.kind in ("conv", "transposed_conv"):
            if len(shape) != 3:
                raise SpecError(f"layer {i}: {layer.kind} after a fully connected layer", i)
            if spec.role == "discriminator" and layer.kind == "transposed_conv":
                raise SpecError(f"layer {i}: discriminator cannot upsample", i)
            if layer.stride != required_stride:
                raise SpecError(f"layer {i}: {spec.role} {layer.kind} stride must be {required_stride}, got {layer.stride}", i)
            if min(layer.kernel) < 1 or layer.filters < 1:
                raise SpecError(f"layer {i}: kernel and filters must be >= 1", i)
            h, w, _ = shape
            if layer.kind == "conv":
                shape = (math.ceil(h / layer.stride), math.ceil(w / layer.stride), layer.filters)
            else:
                shape = (h * layer.stride, w * layer.stride, layer.filters)
        elif layer.kind == "fully_connected":
            if layer.out_features < 1:
                raise SpecError(f"layer {i}: out_features must be >= 1", i)
            shape = (layer.out_features,)
        shapes.append(shape)

    last = len(spec.layers) - 1
    if spec.layers[-1].kind != "sigmoid":
        raise SpecError(f"layer {last}: network must end with a sigmoid", last)
    if spec.role == "generator":
        if shape != tuple(spec.input_shape):
            raise SpecError(f"generator output {shape} differs from input {tuple(spec.input_shape)}", last)
    elif shape != (1,):
        raise SpecError(f"discriminator must end in a single score, got {shape}", last)
    return shapes


class SameConv2d(nn.Module):
    """Strided convolution with TensorFlow-style "same" padding."""

    def __init__(self, in_ch, out_ch, kernel, stride):
        super().__init__()
        self.conv = nn.Conv2d(in_ch, out_ch, kernel, stride=stride)
        self.kernel = kernel
        self.stride = stride

    def forward(self, x):
        pads = []
        for n, k in ((x.shape[3], self.kernel[1]), (x.shape[2], self.kernel[0])):
            total = max((math.ceil(n / self.stride) - 1) * self.stride + k - n, 0)
            pads += [total // 2, total - total // 2]
        return self.conv(F.pad(x, pads))


def _transposed(in_ch, out_ch, kernel, stride):
    pads, extra = [], []
    for k in kernel:
        p = max(math.ceil((k - stride) / 2), 0)
        pads.append(p)
        extra.append(2 * p - (k - stride))
    return nn.ConvTranspose2d(in_ch, out_ch, kernel, stride=stride, padding=tuple(pads), output_padding=tuple(extra))


class Network(nn.Module):
    """Torch module built from a :class:`NetworkSpec`."""

    def __init__(self, spec: NetworkSpec):
        super().__init__()
        shapes = validate_spec(spec)
        self.spec = spec
        layers = []
        shape = tuple(spec.input_shape)
        for layer, out_shape in zip(spec.layers, shapes):
            if layer.kind == "conv":
                layers.append(SameConv2d(shape[2], layer.filters, layer.kernel, layer.stride))
            elif layer.kind == "transposed_conv":
                layers.append(_transposed(shape[2], layer.filters, layer.kernel, layer.stride))
            elif layer.kind == "fully_connected":
                layers.append(nn.Sequential(nn.Flatten(), nn.Linear(int(np.prod(shape)), layer.out_features)))
            elif layer.kind == "leaky_relu":
                layers.append(nn.LeakyReLU(LEAKY_SLOPE))
            elif layer.kind == "batch_norm":
                layers.append(nn.BatchNorm2d(shape[2]) if len(shape) == 3 else nn.BatchNorm1d(shape[0]))
            else:
                layers.append(nn.Sigmoid())
            shape = out_shape
        self.layers = nn.ModuleList(layers)

    @property
    def role(self) -> str:
        return self.spec.role

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        for layer in self.layers:
            x = layer(x)
        return x

    def clip_targets(self):
        """Modules whose weights are subject to clipping (conv and FC)."""
        return [m for m in self.modules() if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d, nn.Linear))]


def _init(net: Network, seed: int) -> Network:
    gen = torch.Generator().manual_seed(int(seed))
    with torch.no_grad():
        for m in net.clip_targets():
            nn.init.kaiming_normal_(m.weight, a=LEAKY_SLOPE, mode="fan_in", nonlinearity="leaky_relu", generator=gen)
            nn.init.zeros_(m.bias)
    return net


def build_generator(spec: NetworkSpec | None = None, seed: int = 0) -> Network:
    spec = spec or default_generator_spec()
    if spec.role != "generator":
        raise SpecError(f"expected a generator spec, got role {spec.role!r}")
    return _init(Network(spec), seed)


def build_discriminator(spec: NetworkSpec | None = None, seed: int = 0) -> Network:
    spec = spec or default_discriminator_spec()
    if spec.role != "discriminator":
        raise SpecError(f"expected a discriminator spec, got role {spec.role!r}")
    return _init(Network(spec), seed)


# ---------------------------------------------------------------------------
# Array <-> tensor helpers


def to_tensor(batch, dtype=torch.float32) -> torch.Tensor:
    """Stack faces ``(H, W, C)`` into an ``(N, C, H, W)`` tensor."""
    if isinstance(batch, torch.Tensor):
        return batch.to(dtype)
    if isinstance(batch, np.ndarray) and batch.ndim == 3:
        batch = batch[None]
    arr = np.asarray(batch, dtype=np.float64) if len(batch) else np.empty((0,))
    if arr.shape[0] == 0:
        raise ShapeError("empty batch")
    if arr.ndim != 4:
        raise ShapeError(f"expected a batch of (H, W, C) images, got shape {arr.shape}")
    return torch.from_numpy(np.ascontiguousarray(arr.transpose(0, 3, 1, 2))).to(dtype)


def to_faces(t: torch.Tensor) -> np.ndarray:
    return t.detach().to(torch.float64).numpy().transpose(0, 2, 3, 1).copy()


def _dtype(net: nn.Module):
    return next(net.parameters()).dtype


def _check_input(net: Network, x: torch.Tensor) -> None:
    expected = tuple(net.spec.input_shape)
    got = (x.shape[2], x.shape[3], x.shape[1])
    if got != expected:
        raise ShapeError(f"{net.role} expects inputs of shape {expected}, got {got}")


def _run(net: Network, batch, mode: str) -> torch.Tensor:
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    x = to_tensor(batch, _dtype(net))
    _check_input(net, x)
    if mode == "train":
        # Batch statistics without touching the caller's running averages.
        net = copy.deepcopy(net).train()
    else:
        was_training = net.training
        net.eval()
    with torch.no_grad():
        out = net(x)
    if mode == "eval" and was_training:
        net.train()
    return out


def generator_forward(net: Network, batch, mode: str = "eval") -> np.ndarray:
    """Restore a batch of faces; returns ``(N, H, W, C)`` floats in [0, 1]."""
    return to_faces(_run(net, batch, mode))


def discriminator_forward(net: Network, batch, mode: str = "eval") -> np.ndarray:
    """Score a batch of faces; returns ``(N,)`` floats in [0, 1]."""
    return _run(net, batch, mode).reshape(-1).to(torch.float64).numpy().copy()


def clip_weights_(net: Network, c: float) -> Network:
    """In-place clamp of every conv/FC weight into ``[-c, c]``."""
    if c <= 0:
        raise ValueError("clip value must be positive")
    with torch.no_grad():
        for m in net.clip_targets():
            bound = _bound_within(c, m.weight.dtype)
            m.weight.clamp_(-bound, bound)
    return net


def _bound_within(c: float, dtype: torch.dtype) -> float:
    """Largest value of ``dtype`` not exceeding ``c``, so clipped weights stay in [-c, c]."""
    np_dtype = np.float32 if dtype == torch.float32 else np.float64
    b = np_dtype(c)
    if float(b) > c:
        b = np.nextafter(b, np_dtype(0))
    return float(b)


def clip_weights(net: Network, c: float) -> Network:
    """Copy of ``net`` with conv/FC weights clamped to ``[-c, c]``.

    Biases and batch-norm parameters/statistics are left untouched.
    """
    return clip_weights_(copy.deepcopy(net), c)


def max_abs_weight(net: Network) -> float:
    return max(float(m.weight.detach().abs().max()) for m in net.clip_targets())


def loss_value(net: Network, batch, loss_kind: str, targets, mode: str = "train") -> torch.Tensor:
    """Differentiable loss of ``net`` on ``batch``.

    ``bce``: binary cross-entropy of the scores against labels ``targets``.
    ``ssim_recon``: batch-mean ``1 - SSIM`` (global window) between outputs
    and target images.
    """
    dtype = _dtype(net)
    x = to_tensor(batch, dtype)
    _check_input(net, x)
    net.train(mode == "train")
    out = net(x)
    if loss_kind == "bce":
        y = torch.as_tensor(np.asarray(targets, dtype=np.float64), dtype=dtype).reshape(-1)
        scores = out.reshape(-1)
        if y.shape != scores.shape:
            raise ShapeError(f"{scores.shape[0]} scores but {y.shape[0]} labels")
        return F.binary_cross_entropy(scores, y)
    if loss_kind == "ssim_recon":
        y = to_tensor(targets, dtype)
        if y.shape != out.shape:
            raise ShapeError(f"outputs {tuple(out.shape)} vs targets {tuple(y.shape)}")
        return ssim_loss_torch(out, y, GLOBAL)
    raise ValueError(f"unknown loss kind {loss_kind!r}")


def backward(net: Network, batch, loss_kind: str, targets, mode: str = "train") -> dict[str, np.ndarray]:
    """Gradients of the loss with respect to every trainable parameter.

    Works on a copy, so ``net`` (including batch-norm statistics) is not
    modified. Returns ``{parameter name: gradient array}``.
    """
    work = copy.deepcopy(net)
    work.zero_grad(set_to_none=True)
    loss = loss_value(work, batch, loss_kind, targets, mode)
    loss.backward()
    grads = {}
    for name, p in work.named_parameters():
        g = p.grad if p.grad is not None else torch.zeros_like(p)
        grads[name] = g.detach().numpy().copy()
    return grads


def parameter_arrays(net: nn.Module) -> dict[str, np.ndarray]:
    """All parameters and buffers as numpy arrays, keyed by state-dict name."""
    return {k: v.detach().cpu().numpy().copy() for k, v in net.state_dict().items()}


def tiny_discriminator_spec(size: int = 9) -> NetworkSpec:
    """One stride-3 conv layer, one FC score: smooth everywhere."""
    return NetworkSpec(
        "discriminator",
        [_conv(2, 3, 3), LayerSpec("fully_connected", out_features=1), LayerSpec("sigmoid")],
        input_shape=(size, size, 3),
    )


def tiny_generator_spec(size: int = 8) -> NetworkSpec:
    return NetworkSpec(
        "generator",
        [_conv(4, 3, 2), _conv(3, 3, 2, True), LayerSpec("sigmoid")],
        input_shape=(size, size, 3),
    )
