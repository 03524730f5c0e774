import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from restoreq.errors import ShapeError
from restoreq.imaging import DegradationSpec, degrade
from restoreq.metrics import (
    GLOBAL,
    WINDOWED,
    SsimParams,
    mse,
    ssim,
    ssim_loss,
    ssim_loss_grad,
    ssim_torch,
)

from .conftest import natural_faces
from .oracles import central_difference, loop_mse, loop_ssim_windowed, max_rel_error

CONSTANT_PAIR_SSIM = 1e-4 / 1.0001  # (2*0*1 + C1) / (0 + 1 + C1), contrast term is 1


# -- mse ---------------------------------------------------------------------


def test_mse_examples(rng):
    a = rng.random((32, 32, 3))
    assert mse(a, a) == 0.0
    assert mse(np.zeros((32, 32, 3)), np.ones((32, 32, 3))) == 1.0


def test_mse_matches_loop(rng):
    a, b = rng.random((32, 32, 3)), rng.random((32, 32, 3))
    assert abs(mse(a, b) - loop_mse(a, b)) < 1e-12


def test_shape_mismatch():
    with pytest.raises(ShapeError):
        mse(np.zeros((32, 32, 3)), np.zeros((32, 31, 3)))
    with pytest.raises(ShapeError):
        ssim(np.zeros((32, 32, 3)), np.zeros((32, 31, 3)))


# -- ssim --------------------------------------------------------------------


@pytest.mark.parametrize("params", [GLOBAL, WINDOWED])
def test_ssim_identity(rng, params):
    a = rng.random((32, 32, 3))
    assert abs(ssim(a, a, params) - 1.0) < 1e-9


def test_ssim_constant_closed_form():
    a, b = np.zeros((32, 32, 3)), np.ones((32, 32, 3))
    assert abs(ssim(a, b, GLOBAL) - CONSTANT_PAIR_SSIM) < 1e-6
    assert abs(CONSTANT_PAIR_SSIM - 9.999e-5) < 1e-8


def test_windowed_natural_blurred_pair_matches_loop():
    face = natural_faces(1, seed=3)[0]
    blurred = degrade(face, DegradationSpec("blur", 0.6))
    assert abs(ssim(face, blurred, WINDOWED) - loop_ssim_windowed(face, blurred)) < 1e-6


def test_windowed_matches_loop_on_random_pairs(rng):
    for _ in range(20):
        a = rng.random((14, 16, 3))
        b = np.clip(a + rng.normal(0, 0.2, a.shape), 0, 1)
        assert abs(ssim(a, b, WINDOWED) - loop_ssim_windowed(a, b)) < 1e-6


def test_windowed_too_small():
    with pytest.raises(ShapeError):
        ssim(np.zeros((8, 8, 3)), np.zeros((8, 8, 3)), WINDOWED)


@pytest.mark.parametrize("params", [GLOBAL, WINDOWED])
def test_torch_matches_numpy(rng, params):
    a, b = rng.random((32, 32, 3)), rng.random((32, 32, 3))
    ta = torch.tensor(a.transpose(2, 0, 1)[None])
    tb = torch.tensor(b.transpose(2, 0, 1)[None])
    assert abs(float(ssim_torch(ta, tb, params)[0]) - ssim(a, b, params)) < 1e-12


def test_params_validation():
    with pytest.raises(ValueError):
        SsimParams(window="box")
    with pytest.raises(ValueError):
        SsimParams(k1=0)


unit_images = arrays(np.float64, (12, 12, 3), elements=st.floats(0, 1, allow_nan=False))


@settings(max_examples=50, deadline=None)
@given(a=unit_images, b=unit_images)
def test_symmetry_and_bounds(a, b):
    for params in (GLOBAL, WINDOWED):
        s = ssim(a, b, params)
        assert s == ssim(b, a, params)
        assert -1.0 <= s <= 1.0 + 1e-12
        assert 0.0 <= ssim_loss(a, b, params) <= 2.0 + 1e-12
    assert mse(a, b) == mse(b, a)
    assert 0.0 <= mse(a, b) <= 1.0


def test_ssim_below_one_when_different(rng):
    a = rng.random((12, 12, 3))
    b = a.copy()
    b[3, 4, 1] += 0.1
    assert ssim(a, b, GLOBAL) < 1.0
    assert ssim(a, b, WINDOWED) < 1.0


# -- gradient ----------------------------------------------------------------


def test_loss_of_identical_is_zero(rng):
    a = rng.random((32, 32, 3))
    assert abs(ssim_loss(a, a)) < 1e-12


def test_global_loss_gradient_on_8x8_crop():
    face = natural_faces(1, seed=4)[0]
    a = face[10:18, 10:18]
    b = degrade(face, DegradationSpec("additive_noise", 0.5, seed=1))[10:18, 10:18]
    analytic = ssim_loss_grad(a, b, GLOBAL)
    numeric = central_difference(lambda x: ssim_loss(x, b, GLOBAL), a)
    assert max_rel_error(analytic, numeric) < 1e-4


def test_windowed_loss_gradient(rng):
    a, b = rng.random((12, 12, 3)), rng.random((12, 12, 3))
    analytic = ssim_loss_grad(a, b, WINDOWED)
    numeric = central_difference(lambda x: ssim_loss(x, b, WINDOWED), a)
    assert max_rel_error(analytic, numeric) < 1e-4
