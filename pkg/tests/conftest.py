import sys

import numpy as np
import pytest

from restoreq.evaluation import build_pairs, default_comparator
from restoreq.imaging import load_face, preprocess
from restoreq.synth import random_geometry, read_degradations, render_face, write_synthetic_corpus

SMOKE_SUBJECTS = 8
SMOKE_VARIANTS = 3


def natural_faces(n, seed=0):
    """Rendered synthetic faces at 32x32, for tests that need image structure."""
    rng = np.random.default_rng(seed)
    return [preprocess(render_face(random_geometry(rng))) for _ in range(n)]


@pytest.fixture(scope="session")
def smoke_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("smoke")
    manifest = write_synthetic_corpus(root, SMOKE_SUBJECTS, SMOKE_VARIANTS, seed=0)
    return manifest


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def testbed(tmp_path_factory):
    """50-subject synthetic corpus scored by the default comparator."""
    root = tmp_path_factory.mktemp("testbed")
    manifest = write_synthetic_corpus(root, 50, 6, seed=1)
    faces = {i: load_face(manifest.resolve(i)) for i in manifest.image_ids()}
    pairs = default_comparator().score_pairs(build_pairs(manifest, 5, seed=0), faces)
    severity = {i: r.severity for i, r in read_degradations(root / "degradations.csv").items()}
    return {"manifest": manifest, "faces": faces, "pairs": pairs, "severity": severity}


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("tests.test_acceptance")
    lines = getattr(module, "REPORT", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
