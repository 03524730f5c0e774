"""Procedural face-like images and degraded corpora for desk-scale runs.

Each subject gets a fixed geometry and palette (background, skin, hair,
eyes, brows, nose, mouth) drawn from the corpus seed. The anchor is a clean
64x64 rendering; variants are 32x32 degradations of the preprocessed
anchor spread over a severity grid.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .imaging import (
    DegradationKind,
    DegradationSpec,
    Manifest,
    Subject,
    degrade,
    preprocess,
    save_png,
    to_uint8,
    write_manifest,
)

log = logging.getLogger(__name__)

ANCHOR_SIZE = 64
SUPERSAMPLE = 4
KINDS = tuple(DegradationKind)


@dataclass(frozen=True)
class FaceGeometry:
    background: tuple
    skin: tuple
    hair: tuple
    iris: tuple
    lips: tuple
    face_cx: float
    face_cy: float
    face_rx: float
    face_ry: float
    hair_drop: float
    eye_y: float
    eye_dx: float
    eye_r: float
    brow_lift: float
    brow_tilt: float
    nose_len: float
    nose_w: float
    mouth_y: float
    mouth_w: float
    mouth_h: float


def random_geometry(rng: np.random.Generator) -> FaceGeometry:
    def colour(lo, hi):
        return tuple(rng.uniform(lo, hi, size=3))

    skin_tone = rng.uniform(0.35, 0.95)
    skin = (skin_tone, skin_tone * rng.uniform(0.7, 0.9), skin_tone * rng.uniform(0.55, 0.8))
    return FaceGeometry(
        background=colour(0.1, 0.9),
        skin=skin,
        hair=colour(0.02, 0.5),
        iris=colour(0.05, 0.6),
        lips=(rng.uniform(0.5, 0.9), rng.uniform(0.1, 0.4), rng.uniform(0.15, 0.45)),
        face_cx=rng.uniform(-0.05, 0.05),
        face_cy=rng.uniform(0.0, 0.1),
        face_rx=rng.uniform(0.48, 0.66),
        face_ry=rng.uniform(0.62, 0.8),
        hair_drop=rng.uniform(0.15, 0.55),
        eye_y=rng.uniform(-0.2, 0.0),
        eye_dx=rng.uniform(0.18, 0.32),
        eye_r=rng.uniform(0.06, 0.11),
        brow_lift=rng.uniform(0.1, 0.2),
        brow_tilt=rng.uniform(-0.08, 0.08),
        nose_len=rng.uniform(0.12, 0.3),
        nose_w=rng.uniform(0.04, 0.09),
        mouth_y=rng.uniform(0.28, 0.45),
        mouth_w=rng.uniform(0.12, 0.26),
        mouth_h=rng.uniform(0.03, 0.08),
    )


def render_face(geo: FaceGeometry, size: int = ANCHOR_SIZE) -> np.ndarray:
    """Rasterise ``geo`` into a ``(size, size, 3)`` uint8 image (anti-aliased)."""
    n = size * SUPERSAMPLE
    # Coordinates in [-1, 1], y pointing down.
    c = (np.arange(n) + 0.5) / n * 2.0 - 1.0
    y, x = np.meshgrid(c, c, indexing="ij")
    img = np.empty((n, n, 3))
    img[:] = geo.background

    def ellipse(cx, cy, rx, ry):
        return ((x - cx) / rx) ** 2 + ((y - cy) / ry) ** 2 <= 1.0

    fx, fy = geo.face_cx, geo.face_cy
    head = ellipse(fx, fy, geo.face_rx, geo.face_ry)
    hair = ellipse(fx, fy - 0.06, geo.face_rx + 0.07, geo.face_ry + 0.08) & (y < fy - geo.face_ry + geo.hair_drop)
    img[hair] = geo.hair
    img[head & ~hair] = geo.skin

    shade = tuple(0.75 * v for v in geo.skin)
    ey = fy + geo.eye_y
    for side in (-1.0, 1.0):
        ex = fx + side * geo.eye_dx
        img[ellipse(ex, ey, geo.eye_r * 1.6, geo.eye_r)] = (0.95, 0.95, 0.95)
        img[ellipse(ex, ey, geo.eye_r * 0.75, geo.eye_r * 0.75)] = geo.iris
        img[ellipse(ex, ey, geo.eye_r * 0.3, geo.eye_r * 0.3)] = (0.02, 0.02, 0.02)
        by = ey - geo.brow_lift + side * geo.brow_tilt * (x - ex)
        brow = (np.abs(x - ex) <= geo.eye_r * 1.9) & (np.abs(y - by) <= 0.025)
        img[brow] = geo.hair

    ny = fy + geo.eye_y + 0.08
    nose = (y >= ny) & (y <= ny + geo.nose_len) & (np.abs(x - fx) <= geo.nose_w * (y - ny) / geo.nose_len + 0.01)
    img[nose] = shade
    img[ellipse(fx, fy + geo.mouth_y, geo.mouth_w, geo.mouth_h)] = geo.lips

    img = img.reshape(size, SUPERSAMPLE, size, SUPERSAMPLE, 3).mean(axis=(1, 3))
    return to_uint8(img)


def severity_grid(n_variants: int) -> np.ndarray:
    """``n`` evenly spaced severities in ``(0, 1]``."""
    return np.linspace(0.0, 1.0, n_variants + 1)[1:]


@dataclass(frozen=True)
class VariantRecord:
    image_id: str
    subject_id: str
    kind: str
    severity: float


def write_synthetic_corpus(out_dir, n_subjects: int, n_variants: int, seed: int, kinds=KINDS) -> Manifest:
    """Render anchors and degraded variants under ``out_dir``.

    Writes ``manifest.json`` and ``degradations.csv`` (image_id, subject_id,
    kind, severity; anchors have kind ``none`` and severity 0). Same seed,
    same bytes.
    """
    if n_subjects < 1 or n_variants < 1:
        raise ValueError("need at least one subject and one variant")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    severities = severity_grid(n_variants)
    subjects, records = [], []
    for i in range(n_subjects):
        sid = f"s{i:03d}"
        raw = render_face(random_geometry(rng))
        anchor_id = f"{sid}/anchor.png"
        save_png(raw, out_dir / anchor_id)
        records.append(VariantRecord(anchor_id, sid, "none", 0.0))
        face = preprocess(raw)
        variants = []
        for j, sev in enumerate(severities):
            kind = DegradationKind(kinds[int(rng.integers(len(kinds)))])
            spec = DegradationSpec(kind, float(sev), int(rng.integers(2**31)))
            image_id = f"{sid}/v{j:02d}.png"
            save_png(degrade(face, spec), out_dir / image_id)
            variants.append(image_id)
            records.append(VariantRecord(image_id, sid, kind.value, float(sev)))
        subjects.append(Subject(sid, anchor_id, variants))

    manifest = Manifest(out_dir, subjects)
    write_manifest(manifest, out_dir / "manifest.json")
    with open(out_dir / "degradations.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["image_id", "subject_id", "kind", "severity"])
        for r in records:
            w.writerow([r.image_id, r.subject_id, r.kind, repr(r.severity)])
    if n_subjects < 2:
        log.warning("corpus has a single subject: usable for training, not for non-mated evaluation")
    return manifest


def read_degradations(path) -> dict[str, VariantRecord]:
    with open(path, newline="") as fh:
        return {
            row["image_id"]: VariantRecord(row["image_id"], row["subject_id"], row["kind"], float(row["severity"]))
            for row in csv.DictReader(fh)
        }
