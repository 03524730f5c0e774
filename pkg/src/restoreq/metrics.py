"""MSE and SSIM.

SSIM follows Wang et al. (2004): luminance, contrast and structure terms
with stabilising constants ``C1 = (k1 L)^2`` and ``C2 = (k2 L)^2``. Each
channel is scored independently and the channel scores are averaged.

Two windows are supported:

* ``"global"``: one window covering the whole image (statistics are plain
  means over all pixels of a channel). Cheap and smooth; used as the
  training loss.
* ``"gaussian"``: 11x11 Gaussian window with sigma 1.5, evaluated at every
  valid position; the SSIM map is averaged. Used for quality scoring.

Numpy functions operate on ``(H, W, C)`` arrays in float64; the ``*_torch``
variants operate on ``(N, C, H, W)`` tensors and are differentiable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError

GAUSSIAN_SIZE = 11
GAUSSIAN_SIGMA = 1.5
WINDOWS = ("global", "gaussian")


@dataclass(frozen=True)
class SsimParams:
    k1: float = 0.01
    k2: float = 0.03
    dynamic_range: float = 1.0
    window: str = "gaussian"

    def __post_init__(self):
        if self.k1 <= 0 or self.k2 <= 0:
            raise ValueError("k1 and k2 must be positive")
        if self.dynamic_range <= 0:
            raise ValueError("dynamic_range must be positive")
        if self.window not in WINDOWS:
            raise ValueError(f"window must be one of {WINDOWS}, got {self.window!r}")

    @property
    def c1(self) -> float:
        return (self.k1 * self.dynamic_range) ** 2

    @property
    def c2(self) -> float:
        return (self.k2 * self.dynamic_range) ** 2


GLOBAL = SsimParams(window="global")
WINDOWED = SsimParams(window="gaussian")


def gaussian_window(size: int = GAUSSIAN_SIZE, sigma: float = GAUSSIAN_SIGMA) -> np.ndarray:
    """Normalised 2-D Gaussian weights of shape ``(size, size)``."""
    coords = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(coords**2) / (2.0 * sigma**2))
    g /= g.sum()
    return np.outer(g, g)


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    if a.ndim != 3:
        raise ShapeError(f"expected (H, W) or (H, W, C) images, got {a.shape}")
    return a, b


def mse(a, b) -> float:
    """Mean squared difference over all values."""
    a, b = _pair(a, b)
    return float(np.mean((a - b) ** 2))


def _ssim_from_moments(mu_a, mu_b, var_a, var_b, cov, c1, c2):
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return num / den


def ssim_map(a, b, params: SsimParams = WINDOWED) -> np.ndarray:
    """Local SSIM values, shape ``(H', W', C)``.

    For the global window the map is a single ``(1, 1, C)`` entry.
    """
    a, b = _pair(a, b)
    if params.window == "global":
        mu_a = a.mean(axis=(0, 1))
        mu_b = b.mean(axis=(0, 1))
        da, db = a - mu_a, b - mu_b
        var_a = (da**2).mean(axis=(0, 1))
        var_b = (db**2).mean(axis=(0, 1))
        cov = (da * db).mean(axis=(0, 1))
        out = _ssim_from_moments(mu_a, mu_b, var_a, var_b, cov, params.c1, params.c2)
        return out[None, None, :]

    window = gaussian_window()
    if a.shape[0] < GAUSSIAN_SIZE or a.shape[1] < GAUSSIAN_SIZE:
        raise ShapeError(f"windowed SSIM needs images of at least {GAUSSIAN_SIZE}x{GAUSSIAN_SIZE}, got {a.shape[:2]}")

    def local(x):
        # (H', W', C, k, k) . (k, k) -> (H', W', C)
        return np.tensordot(sliding_window_view(x, window.shape, axis=(0, 1)), window, axes=([3, 4], [0, 1]))

    mu_a, mu_b = local(a), local(b)
    var_a = local(a * a) - mu_a**2
    var_b = local(b * b) - mu_b**2
    cov = local(a * b) - mu_a * mu_b
    return _ssim_from_moments(mu_a, mu_b, var_a, var_b, cov, params.c1, params.c2)


def ssim(a, b, params: SsimParams = WINDOWED) -> float:
    """Mean SSIM over windows and channels, in ``[-1, 1]``."""
    return float(ssim_map(a, b, params).mean())


def ssim_loss(a, b, params: SsimParams = GLOBAL) -> float:
    return 1.0 - ssim(a, b, params)


def ssim_loss_grad(a, b, params: SsimParams = GLOBAL) -> np.ndarray:
    """Gradient of ``1 - ssim(a, b)`` with respect to ``a``, same shape as ``a``."""
    a_np, b_np = _pair(a, b)
    ta = torch.tensor(a_np.transpose(2, 0, 1)[None], dtype=torch.float64, requires_grad=True)
    tb = torch.tensor(b_np.transpose(2, 0, 1)[None], dtype=torch.float64)
    loss = 1.0 - ssim_torch(ta, tb, params).sum()
    loss.backward()
    grad = ta.grad[0].numpy().transpose(1, 2, 0)
    return grad.reshape(np.shape(a))


# ---------------------------------------------------------------------------
# torch


def ssim_torch(a: torch.Tensor, b: torch.Tensor, params: SsimParams = GLOBAL) -> torch.Tensor:
    """Per-image SSIM for ``(N, C, H, W)`` batches; returns shape ``(N,)``."""
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    c1, c2 = params.c1, params.c2
    if params.window == "global":
        mu_a = a.mean(dim=(2, 3))
        mu_b = b.mean(dim=(2, 3))
        da = a - mu_a[..., None, None]
        db = b - mu_b[..., None, None]
        var_a = (da * da).mean(dim=(2, 3))
        var_b = (db * db).mean(dim=(2, 3))
        cov = (da * db).mean(dim=(2, 3))
        return _ssim_from_moments(mu_a, mu_b, var_a, var_b, cov, c1, c2).mean(dim=1)

    channels = a.shape[1]
    w = torch.as_tensor(gaussian_window(), dtype=a.dtype, device=a.device)
    w = w.expand(channels, 1, GAUSSIAN_SIZE, GAUSSIAN_SIZE)

    def local(x):
        return F.conv2d(x, w, groups=channels)

    mu_a, mu_b = local(a), local(b)
    var_a = local(a * a) - mu_a**2
    var_b = local(b * b) - mu_b**2
    cov = local(a * b) - mu_a * mu_b
    return _ssim_from_moments(mu_a, mu_b, var_a, var_b, cov, c1, c2).mean(dim=(1, 2, 3))


def ssim_loss_torch(a: torch.Tensor, b: torch.Tensor, params: SsimParams = GLOBAL) -> torch.Tensor:
    """Batch-mean ``1 - SSIM``."""
    return 1.0 - ssim_torch(a, b, params).mean()
