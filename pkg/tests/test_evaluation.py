import math

import numpy as np
import pytest

from restoreq.errors import EvaluationError
from restoreq.evaluation import (
    DEFAULT_FRACTIONS,
    PixelComparator,
    VerificationPair,
    bin_by_quality,
    build_pairs,
    calibrate_threshold,
    compute_det,
    compute_eer,
    compute_erc,
    default_comparator,
    eer,
    fmr_at,
    fnmr_at,
    pairs_by_bin,
    pairs_within,
    perfect_curve,
    read_quality_csv,
    read_similarities_csv,
    write_det_csv,
    write_erc_csv,
    write_similarities_csv,
)

from .conftest import natural_faces
from .oracles import brute_force_erc, count_rates

# Measured once on the seed-1 testbed (anchors vs severity-1.0 variants).
HEAVY_VARIANT_EER = 0.09551020408163269


def _pairs(mated, nonmated):
    out = [VerificationPair(f"m{i}a", f"m{i}b", True, s) for i, s in enumerate(mated)]
    out += [VerificationPair(f"n{i}a", f"n{i}b", False, s) for i, s in enumerate(nonmated)]
    return out


# -- pairs -------------------------------------------------------------------


def test_two_by_two_gives_two_mated_pairs():
    pairs = build_pairs({"a": ["a1", "a2"], "b": ["b1", "b2"]}, 0, seed=0)
    assert [(p.id_a, p.id_b, p.mated) for p in pairs] == [("a1", "a2", True), ("b1", "b2", True)]


def test_nonmated_sampling(testbed):
    manifest = testbed["manifest"]
    owner = manifest.subject_of()
    pairs = build_pairs(manifest, 5, seed=0)
    again = build_pairs(manifest, 5, seed=0)
    other = build_pairs(manifest, 5, seed=1)
    assert pairs == again
    assert pairs != other
    mated = [p for p in pairs if p.mated]
    non = [p for p in pairs if not p.mated]
    assert len(mated) == 50 * 21
    assert all(owner[p.id_a] == owner[p.id_b] for p in mated)
    assert all(owner[p.id_a] != owner[p.id_b] for p in non)
    keys = [frozenset((p.id_a, p.id_b)) for p in non]
    assert len(keys) == len(set(keys))
    assert 0.9 * 5 * 350 <= len(non) <= 5 * 350


def test_single_subject_is_an_error():
    with pytest.raises(EvaluationError):
        build_pairs({"a": ["a1", "a2", "a3"]}, 2, seed=0)
    assert len(build_pairs({"a": ["a1", "a2", "a3"]}, 0, seed=0)) == 3


# -- calibration -------------------------------------------------------------


def test_calibrate_example():
    sims = [k / 10 for k in range(1, 11)]
    t, achieved = calibrate_threshold(sims, 0.2)
    assert t == 0.3
    assert achieved == 0.2
    assert sum(s < t for s in sims) == 2


def test_calibrate_matches_enumeration(rng):
    sims = rng.random(137)
    for target in (0.05, 0.1, 0.33):
        best = max(fnmr_at(sims, t) for t in sims if fnmr_at(sims, t) <= target)
        expected = min(t for t in sims if fnmr_at(sims, t) == best)
        assert calibrate_threshold(sims, target) == (expected, best)


def test_calibrate_all_equal():
    assert calibrate_threshold([0.4] * 7, 0.1) == (0.4, 0.0)


def test_calibrate_errors():
    with pytest.raises(EvaluationError):
        calibrate_threshold([], 0.1)
    with pytest.raises(EvaluationError):
        calibrate_threshold([0.5], 1.0)


def test_calibrated_fnmr_within_one_pair_of_target(testbed):
    mated = [p.similarity for p in testbed["pairs"] if p.mated]
    _, achieved = calibrate_threshold(mated, 0.10)
    assert 0.10 - 1 / len(mated) < achieved <= 0.10


# -- ERC ---------------------------------------------------------------------


def test_perfect_curve():
    curve = perfect_curve(0.10, [0.0, 0.05, 0.10, 0.5])
    assert curve.fnmr == [0.10, max(0.10 - 0.05, 0.0), 0.0, 0.0]
    full = perfect_curve(0.10)
    assert full.fnmr == [max(0.10 - r, 0.0) for r in DEFAULT_FRACTIONS]


def test_erc_matches_brute_force(testbed, rng):
    pairs = testbed["pairs"]
    t, achieved = calibrate_threshold([p.similarity for p in pairs if p.mated], 0.10)
    ids = testbed["manifest"].image_ids()
    for qualities in (
        {i: -testbed["severity"][i] for i in ids},
        {i: float(rng.random()) for i in ids},
        {i: float(rng.integers(0, 4)) for i in ids},
    ):
        curve = compute_erc(pairs, qualities, t)
        assert curve.fnmr == brute_force_erc(pairs, qualities, t, DEFAULT_FRACTIONS)
        assert curve.fnmr[0] == curve.initial_fnmr == achieved
        assert len(curve.mated_remaining) == len(curve.fractions)


def test_oracle_quality_erc_falls(testbed):
    pairs = testbed["pairs"]
    t, _ = calibrate_threshold([p.similarity for p in pairs if p.mated], 0.10)
    qualities = {i: -s for i, s in testbed["severity"].items()}
    curve = compute_erc(pairs, qualities, t, [0.0, 0.3])
    assert curve.fnmr[1] < curve.fnmr[0]


def test_random_quality_erc_stays_flat(testbed):
    pairs = testbed["pairs"]
    ids = testbed["manifest"].image_ids()
    t, _ = calibrate_threshold([p.similarity for p in pairs if p.mated], 0.10)
    fractions = [r for r in DEFAULT_FRACTIONS if r <= 0.5]
    runs = []
    for seed in range(20):
        q = np.random.default_rng(seed).random(len(ids))
        runs.append(compute_erc(pairs, dict(zip(ids, q.tolist())), t, fractions).fnmr)
    mean = np.mean(runs, axis=0)
    assert np.all(np.abs(mean - 0.10) <= 0.03), mean


def test_constant_quality_erc_tie_break_only():
    pairs = _pairs([0.1, 0.9, 0.9, 0.9], [0.2])
    qualities = {i: 1.0 for p in pairs for i in (p.id_a, p.id_b)}
    curve = compute_erc(pairs, qualities, 0.5, [0.0, 0.2])
    # ids sort as m0a, m0b, m1a, ...: the failing pair goes first
    assert curve.fnmr == [0.25, 0.0]


def test_erc_exhausted_is_nan():
    pairs = _pairs([0.1, 0.9], [])
    q = {"m0a": 0.0, "m0b": 0.0, "m1a": 0.1, "m1b": 0.2}
    curve = compute_erc(pairs, q, 0.5, [0.0, 0.5, 0.75])
    assert curve.fnmr[:2] == [0.5, 0.0]
    assert math.isnan(curve.fnmr[2])
    assert curve.mated_remaining == [2, 1, 0]


def test_erc_errors():
    pairs = _pairs([0.1], [])
    with pytest.raises(EvaluationError):
        compute_erc(pairs, {"m0a": 1.0}, 0.5)
    with pytest.raises(EvaluationError):
        compute_erc(pairs, {"m0a": 1.0, "m0b": 1.0}, 0.5, [0.2, 0.1])


# -- DET ---------------------------------------------------------------------


def test_det_separable():
    det = compute_det(_pairs([0.8, 0.9, 0.95], [0.1, 0.2, 0.3]))
    assert (0.0, 0.0) in det.points


def test_det_identical_distributions():
    sims = [0.1, 0.25, 0.4, 0.7, 0.9]
    pairs = _pairs(sims, sims)
    between = [(a + b) / 2 for a, b in zip(sims, sims[1:])]
    det = compute_det(pairs, between)
    assert all(abs(a + b - 1.0) < 1e-12 for a, b in det.points)


def test_det_matches_counting(rng):
    pairs = _pairs(rng.normal(0.6, 0.15, 80).tolist(), rng.normal(0.3, 0.15, 120).tolist())
    det = compute_det(pairs)
    for t, fmr, fnmr in zip(det.thresholds, det.fmr, det.fnmr):
        assert (fmr, fnmr) == count_rates(pairs, t)
    assert all(a >= b for a, b in zip(det.fmr, det.fmr[1:]))
    assert all(a <= b for a, b in zip(det.fnmr, det.fnmr[1:]))
    assert det.fnmr[-1] == 1.0 and det.fmr[-1] == 0.0


def test_det_needs_both_classes():
    with pytest.raises(EvaluationError):
        compute_det(_pairs([0.5], []))


def test_eer_symmetric_example():
    # mated {0.3, 0.6, 0.9}, non-mated {0.1, 0.4, 0.7}: at t in (0.3, 0.4] both rates are 1/3
    assert abs(eer(_pairs([0.3, 0.6, 0.9], [0.1, 0.4, 0.7])) - 1 / 3) < 1e-12


def test_eer_interpolates():
    det = compute_det(_pairs([0.5, 0.6], [0.2, 0.55]), [0.5, 0.55, 0.6])
    # at 0.5: fmr .5, fnmr 0; at 0.55: fmr .5, fnmr .5 -> equal
    assert compute_eer(det) == 0.5


def test_rates_on_empty_are_nan():
    assert math.isnan(fnmr_at([], 0.5)) and math.isnan(fmr_at([], 0.5))


# -- bins --------------------------------------------------------------------


def test_bins_nine_and_ten():
    nine = {f"i{k}": float(k) for k in range(9)}
    assert [len(b) for b in bin_by_quality(nine, 3)] == [3, 3, 3]
    ten = {f"i{k:02d}": float(k) for k in range(10)}
    bins = bin_by_quality(ten, 3)
    assert [len(b) for b in bins] == [4, 3, 3]
    assert bins[0] == ["i00", "i01", "i02", "i03"]


def test_bins_all_equal_use_id_order():
    q = {i: 0.5 for i in ["e", "a", "d", "c", "b", "f"]}
    assert bin_by_quality(q, 3) == [["a", "b"], ["c", "d"], ["e", "f"]]


def test_bins_too_many():
    with pytest.raises(EvaluationError):
        bin_by_quality({"a": 1.0, "b": 2.0}, 3)


def test_pairs_by_bin_partitions(testbed):
    pairs = testbed["pairs"]
    q = {i: -s for i, s in testbed["severity"].items()}
    bins = bin_by_quality(q, 3)
    grouped = pairs_by_bin(pairs, bins)
    assert sum(len(g) for g in grouped) == len(pairs)
    rank = {i: k for k, b in enumerate(bins) for i in b}
    for k, group in enumerate(grouped):
        assert all(min(rank[p.id_a], rank[p.id_b]) == k for p in group)
    # the top bin holds exactly the pairs with both images in it
    assert grouped[2] == pairs_within(pairs, bins[2])


# -- comparator --------------------------------------------------------------


def test_comparator_identity_and_symmetry():
    a, b = natural_faces(2, seed=8)
    comp = default_comparator()
    assert abs(comp(a, a) - 1.0) < 1e-12
    assert abs(comp(a, b) - comp(b, a)) < 1e-9
    fitted = default_comparator(natural_faces(20, seed=9))
    assert abs(fitted(a, b) - fitted(b, a)) < 1e-9
    assert abs(fitted(a, a) - 1.0) < 1e-12


def test_comparator_constant_face():
    comp = PixelComparator()
    flat = np.full((32, 32, 3), 0.5)
    assert comp(flat, natural_faces(1)[0]) == 0.0


def test_comparator_separates_heavy_variants(testbed):
    manifest, faces, severity = testbed["manifest"], testbed["faces"], testbed["severity"]
    heavy = {s.subject_id: [v for v in s.variants if severity[v] == 1.0] for s in manifest.subjects}
    pairs = [
        VerificationPair(s.anchor, v, s.subject_id == o)
        for s in manifest.subjects
        for o, vs in heavy.items()
        for v in vs
    ]
    value = eer(default_comparator().score_pairs(pairs, faces))
    assert value < 0.35
    assert abs(value - HEAVY_VARIANT_EER) < 1e-9


# -- files -------------------------------------------------------------------


def test_csv_roundtrips(tmp_path, testbed):
    pairs = testbed["pairs"][:50]
    write_similarities_csv(pairs, tmp_path / "s.csv")
    assert read_similarities_csv(tmp_path / "s.csv") == pairs

    (tmp_path / "q.csv").write_text("image_id,score,error\na,0.5,\nb,,\nc,0.25,\nd,0.1,boom\n")
    assert read_quality_csv(tmp_path / "q.csv", "score") == {"a": 0.5, "c": 0.25}
    with pytest.raises(EvaluationError):
        read_quality_csv(tmp_path / "q.csv", "other")

    write_erc_csv({"x": perfect_curve(0.1, [0.0, 0.5])}, tmp_path / "erc.csv")
    assert (tmp_path / "erc.csv").read_text().splitlines() == [
        "curve,fraction,fnmr,mated_remaining,threshold",
        "x,0.0,0.1,,nan",
        "x,0.5,0.0,,nan",
    ]
    write_det_csv({"all": compute_det(_pairs([0.9], [0.1]), [0.5])}, tmp_path / "det.csv")
    assert (tmp_path / "det.csv").read_text().splitlines()[1] == "all,0.5,0.0,0.0"
