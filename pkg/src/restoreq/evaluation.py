"""Verification-based validation of quality scores.

Conventions used throughout:

* A mated pair *fails* when ``similarity < threshold``; ties at the
  threshold count as matches. A non-mated pair is a false match when
  ``similarity >= threshold``.
* The unit of rejection in an error-versus-reject curve is the image:
  rejecting an image removes every pair it takes part in.
* Quality ties are broken by image id, ascending.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import EvaluationError
from .imaging import Manifest

DEFAULT_FRACTIONS = tuple(round(0.05 * i, 2) for i in range(20))


@dataclass
class VerificationPair:
    id_a: str
    id_b: str
    mated: bool
    similarity: float = math.nan


@dataclass
class ErcCurve:
    fractions: list[float]
    fnmr: list[float]
    threshold: float
    initial_fnmr: float
    # Number of mated pairs left at each fraction.
    mated_remaining: list[int] = field(default_factory=list)


@dataclass
class DetCurve:
    thresholds: list[float]
    fmr: list[float]
    fnmr: list[float]

    @property
    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.fmr, self.fnmr))


# ---------------------------------------------------------------------------
# Pairs


def _subjects(source) -> dict[str, list[str]]:
    if isinstance(source, Manifest):
        return {s.subject_id: [s.anchor, *s.variants] for s in source.subjects}
    return {k: list(v) for k, v in source.items()}


def build_pairs(source, n_nonmated_per_image: int, seed: int) -> list[VerificationPair]:
    """All within-subject pairs plus a seeded sample of cross-subject pairs.

    ``source`` is a :class:`Manifest` or a ``{subject_id: [image ids]}``
    mapping. For every image, ``n_nonmated_per_image`` partners are drawn
    uniformly from other subjects' images; unordered duplicates are dropped.
    """
    subjects = _subjects(source)
    pairs = []
    for ids in subjects.values():
        for a, b in itertools.combinations(ids, 2):
            pairs.append(VerificationPair(a, b, True))
    if n_nonmated_per_image <= 0:
        return pairs
    if len(subjects) < 2:
        raise EvaluationError("non-mated pairs need at least two subjects")

    owner = [(image_id, sid) for sid, ids in subjects.items() for image_id in ids]
    rng = np.random.default_rng(seed)
    seen = set()
    for image_id, sid in owner:
        others = [i for i, (_, s) in enumerate(owner) if s != sid]
        picks = rng.choice(len(others), size=min(n_nonmated_per_image, len(others)), replace=False)
        for k in picks:
            other = owner[others[int(k)]][0]
            key = (image_id, other) if image_id < other else (other, image_id)
            if key in seen:
                continue
            seen.add(key)
            pairs.append(VerificationPair(image_id, other, False))
    return pairs


def score_pairs(pairs: Sequence[VerificationPair], compare: Callable, faces: Mapping[str, np.ndarray]) -> list[VerificationPair]:
    """Return copies of ``pairs`` with similarities from ``compare``."""
    return [VerificationPair(p.id_a, p.id_b, p.mated, float(compare(faces[p.id_a], faces[p.id_b]))) for p in pairs]


def _split(pairs):
    mated = np.array([p.similarity for p in pairs if p.mated], dtype=np.float64)
    non = np.array([p.similarity for p in pairs if not p.mated], dtype=np.float64)
    return mated, non


# ---------------------------------------------------------------------------
# Thresholds and rates


def fnmr_at(mated: np.ndarray, threshold: float) -> float:
    mated = np.asarray(mated, dtype=np.float64)
    if mated.size == 0:
        return math.nan
    return float(np.count_nonzero(mated < threshold)) / mated.size


def fmr_at(nonmated: np.ndarray, threshold: float) -> float:
    nonmated = np.asarray(nonmated, dtype=np.float64)
    if nonmated.size == 0:
        return math.nan
    return float(np.count_nonzero(nonmated >= threshold)) / nonmated.size


def calibrate_threshold(mated_similarities, target_fnmr: float) -> tuple[float, float]:
    """Threshold giving the largest achievable FNMR not above ``target_fnmr``.

    Candidates are the observed similarity values; among those reaching the
    best achievable FNMR the smallest is returned. Returns
    ``(threshold, achieved_fnmr)``.
    """
    sims = np.sort(np.asarray(mated_similarities, dtype=np.float64))
    if sims.size == 0:
        raise EvaluationError("no mated similarities to calibrate on")
    if not 0.0 < target_fnmr < 1.0:
        raise EvaluationError(f"target FNMR must lie in (0, 1), got {target_fnmr}")
    n = sims.size
    # Threshold sims[k] rejects exactly the values strictly below it.
    below = np.searchsorted(sims, sims, side="left")
    achievable = below / n
    ok = achievable <= target_fnmr + 1e-12
    best = achievable[ok].max()
    threshold = float(sims[ok & (achievable == best)].min())
    return threshold, float(best)


def _rejection_order(qualities: Mapping[str, float]) -> list[str]:
    return sorted(qualities, key=lambda i: (qualities[i], i))


def _rejected_count(fraction: float, n: int) -> int:
    return int(math.floor(fraction * n + 1e-9))


def compute_erc(
    pairs: Sequence[VerificationPair],
    qualities: Mapping[str, float],
    threshold: float,
    fractions: Sequence[float] = DEFAULT_FRACTIONS,
) -> ErcCurve:
    """FNMR after rejecting the lowest-quality fraction of images.

    At fraction ``r`` the ``floor(r * n)`` lowest-quality images are
    removed, where ``n`` is the number of images with a quality value.
    FNMR is ``nan`` once no mated pair survives.
    """
    fractions = [float(r) for r in fractions]
    if any(b <= a for a, b in zip(fractions, fractions[1:])):
        raise EvaluationError("fractions must be strictly increasing")
    if any(not 0.0 <= r <= 1.0 for r in fractions):
        raise EvaluationError("fractions must lie in [0, 1]")
    missing = sorted({i for p in pairs for i in (p.id_a, p.id_b)} - set(qualities))
    if missing:
        raise EvaluationError(f"no quality for {len(missing)} image(s): {', '.join(missing[:10])}")

    order = _rejection_order(qualities)
    rank = {image_id: k for k, image_id in enumerate(order)}
    mated = [p for p in pairs if p.mated]
    # A pair survives until its lower-ranked member is rejected.
    first_out = np.array([min(rank[p.id_a], rank[p.id_b]) for p in mated], dtype=np.int64)
    fails = np.array([p.similarity < threshold for p in mated], dtype=bool)

    fnmr, remaining = [], []
    for r in fractions:
        alive = first_out >= _rejected_count(r, len(order))
        n_alive = int(alive.sum())
        remaining.append(n_alive)
        fnmr.append(float(np.count_nonzero(fails & alive)) / n_alive if n_alive else math.nan)
    initial = fnmr_at(np.array([p.similarity for p in mated]), threshold)
    return ErcCurve(fractions, fnmr, float(threshold), initial, remaining)


def perfect_curve(initial_fnmr: float, fractions: Sequence[float] = DEFAULT_FRACTIONS) -> ErcCurve:
    """Best possible curve, ``max(initial_fnmr - r, 0)``."""
    if not 0.0 <= initial_fnmr <= 1.0:
        raise EvaluationError("initial FNMR must lie in [0, 1]")
    fractions = [float(r) for r in fractions]
    return ErcCurve(fractions, [max(initial_fnmr - r, 0.0) for r in fractions], math.nan, float(initial_fnmr))


def default_thresholds(pairs: Sequence[VerificationPair]) -> list[float]:
    """Every observed similarity, plus one value above the maximum."""
    sims = np.unique([p.similarity for p in pairs])
    return sims.tolist() + [float(np.nextafter(sims[-1], np.inf))]


def compute_det(pairs: Sequence[VerificationPair], thresholds: Sequence[float] | None = None) -> DetCurve:
    mated, non = _split(pairs)
    if mated.size == 0 or non.size == 0:
        raise EvaluationError("DET needs both mated and non-mated pairs")
    thresholds = sorted(float(t) for t in (default_thresholds(pairs) if thresholds is None else thresholds))
    ms, ns = np.sort(mated), np.sort(non)
    t = np.asarray(thresholds)
    fnmr = np.searchsorted(ms, t, side="left") / ms.size
    fmr = (ns.size - np.searchsorted(ns, t, side="left")) / ns.size
    return DetCurve(thresholds, fmr.tolist(), fnmr.tolist())


def compute_eer(det: DetCurve) -> float:
    """Equal error rate, interpolated where FNMR - FMR changes sign."""
    fmr, fnmr = np.asarray(det.fmr), np.asarray(det.fnmr)
    diff = fnmr - fmr
    if np.any(diff == 0):
        return float(fmr[np.argmax(diff == 0)])
    cross = np.nonzero(np.diff(np.sign(diff)))[0]
    if cross.size == 0:
        k = int(np.argmin(np.abs(diff)))
        return float((fmr[k] + fnmr[k]) / 2)
    k = int(cross[0])
    w = diff[k] / (diff[k] - diff[k + 1])
    return float(fmr[k] + w * (fmr[k + 1] - fmr[k]))


def eer(pairs: Sequence[VerificationPair]) -> float:
    return compute_eer(compute_det(pairs))


# ---------------------------------------------------------------------------
# Quality bins


def bin_by_quality(qualities: Mapping[str, float], k: int = 3) -> list[list[str]]:
    """Split images into ``k`` equal-count groups, lowest quality first.

    Remainders go to the lowest bins, so sizes differ by at most one.
    """
    n = len(qualities)
    if k < 1 or k > n:
        raise EvaluationError(f"cannot split {n} images into {k} bins")
    order = _rejection_order(qualities)
    base, extra = divmod(n, k)
    groups, start = [], 0
    for i in range(k):
        size = base + (1 if i < extra else 0)
        groups.append(order[start : start + size])
        start += size
    return groups


def pairs_within(pairs: Sequence[VerificationPair], ids) -> list[VerificationPair]:
    """Pairs whose two images both belong to ``ids``."""
    ids = set(ids)
    return [p for p in pairs if p.id_a in ids and p.id_b in ids]


def pairs_by_bin(pairs: Sequence[VerificationPair], bins: Sequence[Sequence[str]]) -> list[list[VerificationPair]]:
    """Assign every pair to the bin of its lower-quality image.

    ``bins`` are ordered lowest quality first, as from :func:`bin_by_quality`.
    The result partitions ``pairs``.
    """
    label = {i: k for k, group in enumerate(bins) for i in group}
    grouped = [[] for _ in bins]
    for p in pairs:
        grouped[min(label[p.id_a], label[p.id_b])].append(p)
    return grouped


# ---------------------------------------------------------------------------
# Default comparator


class PixelComparator:
    """Training-free face comparator.

    A face is embedded as its 2x2-average-pooled pixels (16x16x3), shifted
    and scaled to zero mean and unit variance, and optionally projected on
    principal components fitted to a set of anchor images. Similarity is the
    cosine of two embeddings.
    """

    def __init__(self, pool: int = 2):
        self.pool = pool
        self.mean = None
        self.components = None

    def _raw(self, face: np.ndarray) -> np.ndarray:
        face = np.asarray(face, dtype=np.float64)
        h, w, c = face.shape
        p = self.pool
        v = face.reshape(h // p, p, w // p, p, c).mean(axis=(1, 3)).reshape(-1)
        v = v - v.mean()
        std = v.std()
        return v / std if std > 0 else v

    def fit(self, anchors: Sequence[np.ndarray], n_components: int = 32) -> "PixelComparator":
        x = np.stack([self._raw(a) for a in anchors])
        self.mean = x.mean(axis=0)
        _, _, vt = np.linalg.svd(x - self.mean, full_matrices=False)
        self.components = vt[: min(n_components, vt.shape[0])]
        return self

    def embed(self, face: np.ndarray) -> np.ndarray:
        v = self._raw(face)
        if self.components is not None:
            v = self.components @ (v - self.mean)
        return v

    def similarity_of(self, ea: np.ndarray, eb: np.ndarray) -> float:
        na, nb = np.linalg.norm(ea), np.linalg.norm(eb)
        if na == 0 or nb == 0:
            return 0.0
        return float(np.clip(np.dot(ea, eb) / (na * nb), -1.0, 1.0))

    def __call__(self, a: np.ndarray, b: np.ndarray) -> float:
        return self.similarity_of(self.embed(a), self.embed(b))

    def score_pairs(self, pairs: Sequence[VerificationPair], faces: Mapping[str, np.ndarray]) -> list[VerificationPair]:
        cache = {}

        def emb(i):
            if i not in cache:
                cache[i] = self.embed(faces[i])
            return cache[i]

        return [VerificationPair(p.id_a, p.id_b, p.mated, self.similarity_of(emb(p.id_a), emb(p.id_b))) for p in pairs]


def default_comparator(anchors: Sequence[np.ndarray] | None = None, n_components: int = 32) -> PixelComparator:
    comp = PixelComparator()
    if anchors is not None and len(anchors) > 1:
        comp.fit(anchors, n_components)
    return comp


# ---------------------------------------------------------------------------
# CSV files


def write_similarities_csv(pairs: Sequence[VerificationPair], path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id_a", "id_b", "mated", "similarity"])
        for p in pairs:
            w.writerow([p.id_a, p.id_b, int(p.mated), repr(float(p.similarity))])


def read_similarities_csv(path) -> list[VerificationPair]:
    with open(path, newline="") as fh:
        return [
            VerificationPair(r["id_a"], r["id_b"], bool(int(r["mated"])), float(r["similarity"]))
            for r in csv.DictReader(fh)
        ]


def read_quality_csv(path, column: str) -> dict[str, float]:
    """Per-image scores from any CSV with ``image_id`` and ``column`` fields."""
    out = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "image_id" not in reader.fieldnames or column not in reader.fieldnames:
            raise EvaluationError(f"{path}: needs columns image_id and {column}")
        for row in reader:
            if row.get("error") or row[column] == "":
                continue
            out[row["image_id"]] = float(row[column])
    return out


def write_erc_csv(curves: Mapping[str, ErcCurve], path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["curve", "fraction", "fnmr", "mated_remaining", "threshold"])
        for name, c in curves.items():
            remaining = c.mated_remaining or [""] * len(c.fractions)
            for r, f, m in zip(c.fractions, c.fnmr, remaining):
                w.writerow([name, repr(r), repr(f), m, repr(c.threshold)])


def write_det_csv(curves: Mapping[str, DetCurve], path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["curve", "threshold", "fmr", "fnmr"])
        for name, c in curves.items():
            for t, a, b in zip(c.thresholds, c.fmr, c.fnmr):
                w.writerow([name, repr(t), repr(a), repr(b)])
