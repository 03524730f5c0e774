"""Image ingestion, cropping/resizing to the 32x32x3 network input, and
synthetic degradations.

Raw images are ``uint8`` arrays of shape ``(H, W, 3)``. Face images are
``float64`` arrays of shape ``(32, 32, 3)`` with values in ``[0, 1]``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError
from scipy import ndimage

from .errors import BoxError, ChannelError, ImageDecodeError, ManifestError, ShapeError

FACE_SIZE = 32
FACE_SHAPE = (FACE_SIZE, FACE_SIZE, 3)
MIN_BOX_SIDE = 8


@dataclass(frozen=True)
class BoundingBox:
    x: int
    y: int
    w: int
    h: int

    def check_within(self, height: int, width: int) -> None:
        if self.w < MIN_BOX_SIDE or self.h < MIN_BOX_SIDE:
            raise BoxError(f"box {self} smaller than {MIN_BOX_SIDE} px")
        if self.x < 0 or self.y < 0 or self.x + self.w > width or self.y + self.h > height:
            raise BoxError(f"box {self} outside image of size {width}x{height}")


class DegradationKind(str, Enum):
    BLUR = "blur"
    DOWNSAMPLE = "downsample"
    ADDITIVE_NOISE = "additive_noise"
    BRIGHTNESS_SHIFT = "brightness_shift"
    OCCLUSION = "occlusion"
    AFFINE_WARP = "affine_warp"


@dataclass(frozen=True)
class DegradationSpec:
    kind: DegradationKind
    severity: float
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", DegradationKind(self.kind))
        if not 0.0 <= self.severity <= 1.0:
            raise ValueError(f"severity must lie in [0, 1], got {self.severity}")


def check_face(face: np.ndarray) -> np.ndarray:
    face = np.asarray(face, dtype=np.float64)
    if face.shape != FACE_SHAPE:
        raise ShapeError(f"expected face of shape {FACE_SHAPE}, got {face.shape}")
    return face


# ---------------------------------------------------------------------------
# I/O


def load_image(path) -> np.ndarray:
    """Decode an 8-bit RGB raster into a ``(H, W, 3)`` uint8 array.

    Grayscale, palette and alpha images are rejected rather than converted.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such image: {path}")
    try:
        with Image.open(path) as im:
            im.load()
            mode = im.mode
            if mode != "RGB":
                raise ChannelError(f"{path}: expected 3-channel RGB image, got mode {mode!r}")
            pixels = np.asarray(im, dtype=np.uint8).copy()
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise ImageDecodeError(f"cannot decode {path}: {exc}") from exc
    return pixels


def save_png(face_or_raw: np.ndarray, path) -> None:
    """Write a face (floats in [0, 1]) or raw uint8 image as lossless PNG."""
    arr = np.asarray(face_or_raw)
    if arr.dtype != np.uint8:
        arr = to_uint8(arr)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr, mode="RGB").save(path, format="PNG")


def to_uint8(face: np.ndarray) -> np.ndarray:
    return np.round(np.clip(face, 0.0, 1.0) * 255.0).astype(np.uint8)


# ---------------------------------------------------------------------------
# Resampling


def _bilinear_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Half-pixel-centred bilinear resize of a float ``(H, W, C)`` array."""
    in_h, in_w = img.shape[:2]
    if (in_h, in_w) == (out_h, out_w):
        return img.copy()
    ys = (np.arange(out_h) + 0.5) * (in_h / out_h) - 0.5
    xs = (np.arange(out_w) + 0.5) * (in_w / out_w) - 0.5
    grid_y, grid_x = np.meshgrid(ys, xs, indexing="ij")
    out = np.empty((out_h, out_w, img.shape[2]), dtype=np.float64)
    for c in range(img.shape[2]):
        out[..., c] = ndimage.map_coordinates(img[..., c], [grid_y, grid_x], order=1, mode="nearest")
    return out


def preprocess(raw: np.ndarray, box: BoundingBox | None = None) -> np.ndarray:
    """Crop ``raw`` to ``box`` (whole image by default) and resize to 32x32x3.

    Values are scaled by 1/255 before bilinear resampling.
    """
    raw = np.asarray(raw)
    if raw.ndim != 3 or raw.shape[2] != 3:
        raise ChannelError(f"expected (H, W, 3) image, got shape {raw.shape}")
    height, width = raw.shape[:2]
    if box is None:
        box = BoundingBox(0, 0, width, height)
    else:
        box.check_within(height, width)
    crop = raw[box.y : box.y + box.h, box.x : box.x + box.w].astype(np.float64) / 255.0
    face = _bilinear_resize(crop, FACE_SIZE, FACE_SIZE)
    return np.clip(face, 0.0, 1.0)


# ---------------------------------------------------------------------------
# Degradations

BLUR_MAX_SIGMA = 2.5
NOISE_MAX_STD = 0.25
BRIGHTNESS_MAX_SHIFT = 0.5
OCCLUSION_MAX_AREA = 0.5
OCCLUSION_FILL = 0.5
WARP_MAX_DEGREES = 30.0
WARP_MAX_SHIFT = 4.0


def _blur(face, severity, rng):
    sigma = BLUR_MAX_SIGMA * severity
    return ndimage.gaussian_filter(face, sigma=(sigma, sigma, 0), mode="reflect")


def _downsample(face, severity, rng):
    side = max(4, int(round(FACE_SIZE * (1.0 - severity))))
    small = _bilinear_resize(face, side, side)
    return _bilinear_resize(small, FACE_SIZE, FACE_SIZE)


def _noise(face, severity, rng):
    return face + rng.normal(0.0, NOISE_MAX_STD * severity, size=face.shape)


def _brightness(face, severity, rng):
    sign = 1.0 if rng.random() < 0.5 else -1.0
    return face + sign * BRIGHTNESS_MAX_SHIFT * severity


def _occlusion(face, severity, rng):
    side = int(round(math.sqrt(OCCLUSION_MAX_AREA * severity * FACE_SIZE * FACE_SIZE)))
    out = face.copy()
    if side == 0:
        return out
    y = int(rng.integers(0, FACE_SIZE - side + 1))
    x = int(rng.integers(0, FACE_SIZE - side + 1))
    out[y : y + side, x : x + side] = OCCLUSION_FILL
    return out


def _affine(face, severity, rng):
    angle = math.radians(WARP_MAX_DEGREES * severity) * (1.0 if rng.random() < 0.5 else -1.0)
    direction = rng.uniform(0.0, 2.0 * math.pi)
    shift = WARP_MAX_SHIFT * severity * np.array([math.sin(direction), math.cos(direction)])
    # Inverse map: output pixel -> source pixel, rotating about the image centre.
    cos, sin = math.cos(angle), math.sin(angle)
    matrix = np.array([[cos, -sin], [sin, cos]])
    centre = np.array([(FACE_SIZE - 1) / 2.0] * 2)
    offset = centre - matrix @ (centre + shift)
    out = np.empty_like(face)
    for c in range(face.shape[2]):
        out[..., c] = ndimage.affine_transform(face[..., c], matrix, offset=offset, order=1, mode="nearest")
    return out


_DEGRADERS = {
    DegradationKind.BLUR: _blur,
    DegradationKind.DOWNSAMPLE: _downsample,
    DegradationKind.ADDITIVE_NOISE: _noise,
    DegradationKind.BRIGHTNESS_SHIFT: _brightness,
    DegradationKind.OCCLUSION: _occlusion,
    DegradationKind.AFFINE_WARP: _affine,
}


def degrade(face: np.ndarray, spec: DegradationSpec) -> np.ndarray:
    """Apply one synthetic degradation; pure in ``(face, spec)``.

    All randomness (noise, occluder position, warp direction) is drawn from
    ``spec.seed``. Severity 0 returns an unchanged copy for every kind.
    """
    face = check_face(face)
    if spec.severity == 0:
        return face.copy()
    rng = np.random.default_rng(spec.seed)
    out = _DEGRADERS[spec.kind](face, spec.severity, rng)
    return np.clip(out, 0.0, 1.0)


# ---------------------------------------------------------------------------
# Dataset manifest


@dataclass
class Subject:
    subject_id: str
    anchor: str
    variants: list[str] = field(default_factory=list)


@dataclass
class Manifest:
    """Per-subject anchor/variant listing; paths are relative to ``root``."""

    root: Path
    subjects: list[Subject]

    def resolve(self, image_id: str) -> Path:
        return self.root / image_id

    def image_ids(self) -> list[str]:
        ids = []
        for s in self.subjects:
            ids.append(s.anchor)
            ids.extend(s.variants)
        return ids

    def subject_of(self) -> dict[str, str]:
        return {image_id: s.subject_id for s in self.subjects for image_id in [s.anchor, *s.variants]}

    def to_json(self) -> list[dict]:
        return [{"subject_id": s.subject_id, "anchor": s.anchor, "variants": list(s.variants)} for s in self.subjects]


def load_manifest(path) -> Manifest:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(doc, list):
        raise ManifestError(f"{path}: top level must be a list of subjects")
    subjects = []
    seen = set()
    for i, entry in enumerate(doc):
        if not isinstance(entry, dict) or "subject_id" not in entry:
            raise ManifestError(f"{path}: entry {i} has no subject_id")
        sid = str(entry["subject_id"])
        if sid in seen:
            raise ManifestError(f"{path}: duplicate subject {sid!r}")
        seen.add(sid)
        anchor = entry.get("anchor")
        if not anchor:
            raise ManifestError(f"{path}: subject {sid!r} has no anchor")
        variants = entry.get("variants", [])
        if not isinstance(variants, list):
            raise ManifestError(f"{path}: subject {sid!r} variants must be a list")
        subjects.append(Subject(sid, str(anchor), [str(v) for v in variants]))
    return Manifest(path.parent, subjects)


def write_manifest(manifest: Manifest, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(manifest.to_json(), indent=2) + "\n")


def load_face(path, box: BoundingBox | None = None) -> np.ndarray:
    return preprocess(load_image(path), box)
