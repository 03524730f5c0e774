"""Quality scores from restoration.

A face is restored by the generator and compared with its restoration:

* ``q_mse  = 1 - MSE(input, restored)``
* ``q_ssim = SSIM(input, restored)`` (windowed by default)
* ``q_disc = D(restored)``

Higher is better for all three.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint
from .errors import CheckpointError
from .imaging import Manifest, check_face, load_face, save_png
from .metrics import WINDOWED, SsimParams, mse, ssim
from .model import Network, discriminator_forward, generator_forward

log = logging.getLogger(__name__)

SCORE_FIELDS = ("image_id", "q_mse", "q_ssim", "q_disc", "error")


@dataclass
class QualityReport:
    q_mse: float
    q_ssim: float
    q_disc: float
    restored: np.ndarray


@dataclass
class ScoreRow:
    image_id: str
    report: QualityReport | None = None
    error: str = ""


def restore(g: Network, face: np.ndarray) -> np.ndarray:
    return generator_forward(g, check_face(face)[None], mode="eval")[0]


def restore_batch(g: Network, faces) -> np.ndarray:
    return generator_forward(g, np.stack([check_face(f) for f in faces]), mode="eval")


def score_batch(g: Network, d: Network, faces, params: SsimParams = WINDOWED) -> list[QualityReport]:
    faces = [check_face(f) for f in faces]
    restored = generator_forward(g, np.stack(faces), mode="eval")
    disc = discriminator_forward(d, restored, mode="eval")
    return [
        QualityReport(1.0 - mse(f, r), ssim(f, r, params), float(s), r)
        for f, r, s in zip(faces, restored, disc)
    ]


def score_quality(g: Network, d: Network, face: np.ndarray, params: SsimParams = WINDOWED) -> QualityReport:
    return score_batch(g, d, [face], params)[0]


def load_models(g_path, d_path) -> tuple[Network, Network]:
    """Load trained generator and discriminator checkpoints.

    Checkpoints written before any training has run are rejected.
    """
    g, d = load_checkpoint(g_path), load_checkpoint(d_path)
    for net, path, role in ((g, g_path, "generator"), (d, d_path, "discriminator")):
        if net.role != role:
            raise CheckpointError(f"{path}: expected a {role}, found a {net.role}")
        if not net.meta.get("trained_stages"):
            raise CheckpointError(f"{path}: checkpoint holds an untrained {role}")
    return g, d


def corpus_items(source) -> list[tuple[str, Path]]:
    """``(image_id, path)`` for a manifest or an iterable of paths / pairs."""
    if isinstance(source, Manifest):
        return [(i, source.resolve(i)) for i in source.image_ids()]
    items = []
    for entry in source:
        if isinstance(entry, (tuple, list)):
            items.append((str(entry[0]), Path(entry[1])))
        else:
            items.append((str(entry), Path(entry)))
    return items


def score_corpus(
    g: Network,
    d: Network,
    source,
    params: SsimParams = WINDOWED,
    batch_size: int = 64,
    dump_dir=None,
) -> list[ScoreRow]:
    """Score every image of ``source``; one row per image, input order.

    Unreadable images yield a row with ``error`` set; the run continues.
    Restorations are written as PNG under ``dump_dir`` when given.
    """
    items = corpus_items(source)
    rows = [ScoreRow(image_id) for image_id, _ in items]
    ok, faces = [], []
    for i, (image_id, path) in enumerate(items):
        try:
            faces.append(load_face(path))
            ok.append(i)
        except Exception as exc:  # noqa: BLE001  row-level failure
            rows[i].error = f"{type(exc).__name__}: {exc}"
            log.warning("skipping %s: %s", image_id, exc)
    for start in range(0, len(ok), batch_size):
        chunk = ok[start : start + batch_size]
        for i, report in zip(chunk, score_batch(g, d, faces[start : start + batch_size], params)):
            rows[i].report = report
            if dump_dir is not None:
                save_png(report.restored, Path(dump_dir) / rows[i].image_id)
    return rows


def write_scores_csv(rows: list[ScoreRow], path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SCORE_FIELDS)
        for row in rows:
            if row.report is None:
                w.writerow([row.image_id, "", "", "", row.error])
            else:
                r = row.report
                w.writerow([row.image_id, repr(r.q_mse), repr(r.q_ssim), repr(r.q_disc), ""])


def read_scores_csv(path) -> dict[str, dict[str, float]]:
    """``{image_id: {"q_mse": .., "q_ssim": .., "q_disc": ..}}``; error rows are skipped."""
    out = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            if row.get("error"):
                continue
            out[row["image_id"]] = {k: float(row[k]) for k in ("q_mse", "q_ssim", "q_disc")}
    return out
