import math

import numpy as np
import pytest

from radiosynth.grid import GridGeometry
from radiosynth.masks import BinaryMask, MaskError
from radiosynth.shape import SHAPE_NAMES, compute_shape, principal_moments


def _mask(bits, sx=1.0, sy=1.0):
    bits = np.asarray(bits, dtype=bool)
    return BinaryMask(GridGeometry(bits.shape[1], bits.shape[0], sx, sy), bits)


def _disk(radius, pad=3):
    n = 2 * radius + 2 * pad + 1
    r, c = np.indices((n, n)) - (radius + pad)
    return _mask(r * r + c * c <= radius * radius)


def test_block_hand_values():
    f = compute_shape(_mask(np.ones((3, 3))))
    assert f.pixel_surface == 9.0
    assert abs(f.mesh_surface - 8.5) <= 1e-12
    assert abs(f.perimeter - (8 + 2 * math.sqrt(2))) <= 1e-12
    assert f.sphericity == pytest.approx(2 * math.sqrt(math.pi * 8.5) / (8 + 2 * math.sqrt(2)), abs=1e-12)
    assert f.sphericity == pytest.approx(0.9546, abs=3e-4)
    assert f.elongation == 1.0
    # population covariance of a 3x3 grid: variance 2/3 on both axes
    assert f.major_axis_length == pytest.approx(4 * math.sqrt(2 / 3), abs=1e-12)


@pytest.mark.parametrize("radius", [20, 25, 30])
def test_disk_area_convergence(radius):
    f = compute_shape(_disk(radius))
    assert abs(f.mesh_surface - math.pi * radius ** 2) / (math.pi * radius ** 2) <= 0.02


@pytest.mark.xfail(strict=True, reason="midpoint contour overestimates a circle's perimeter by ~5.5%")
@pytest.mark.parametrize("radius", [20, 25, 30])
def test_disk_sphericity_bound(radius):
    assert 0.98 <= compute_shape(_disk(radius)).sphericity <= 1.01


def test_disk_sphericity_limit():
    # the bias is systematic: sphericity rises towards ~0.948, never to 1
    values = [compute_shape(_disk(r)).sphericity for r in (10, 25, 50, 100)]
    assert values == sorted(values)
    assert 0.93 < values[1] < 0.94 and 0.944 < values[-1] < 0.95


def test_single_pixel_convention():
    f = compute_shape(_mask([[1]]))
    assert f.major_axis_length == 0 and f.minor_axis_length == 0 and f.elongation == 1.0
    assert f.pixel_surface == 1.0 and f.mesh_surface == 0.5


def test_empty_mask_error():
    with pytest.raises(MaskError):
        compute_shape(_mask(np.zeros((2, 2))))


def test_positive_and_finite_for_2d_masks():
    rng = np.random.default_rng(1)
    for _ in range(40):
        bits = rng.random((9, 9)) < 0.6
        if bits.sum() < 2 or bits.any(axis=0).sum() < 2 or bits.any(axis=1).sum() < 2:
            continue
        f = compute_shape(_mask(bits)).as_dict()
        assert all(math.isfinite(v) and v > 0 for v in f.values())
        assert 0 < f["elongation"] <= 1


def test_translation_and_rotation():
    rng = np.random.default_rng(2)
    bits = rng.random((11, 7)) < 0.6
    base = compute_shape(_mask(bits)).as_dict()
    shifted = compute_shape(_mask(np.pad(bits, ((3, 1), (5, 2))))).as_dict()
    assert shifted == base
    for k in (1, 2, 3):
        rot = compute_shape(_mask(np.rot90(bits, k))).as_dict()
        for name in SHAPE_NAMES:
            assert rot[name] == pytest.approx(base[name], rel=1e-12, abs=1e-12)


def test_isotropic_scaling():
    bits = np.random.default_rng(4).random((10, 10)) < 0.6
    a = compute_shape(_mask(bits)).as_dict()
    b = compute_shape(_mask(bits, 2.0, 2.0)).as_dict()
    for name, factor in [("pixel_surface", 4), ("mesh_surface", 4), ("perimeter", 2), ("maximum_diameter", 2),
                         ("major_axis_length", 2), ("minor_axis_length", 2), ("sphericity", 1),
                         ("elongation", 1), ("perimeter_surface_ratio", 0.5)]:
        assert b[name] == pytest.approx(factor * a[name], rel=1e-12)


def test_row_ordering():
    elong = [compute_shape(_mask(np.ones((1, k)))).elongation for k in range(1, 9)]
    # collinear rows have a zero minor axis: elongation drops to 0 and stays there
    assert all(x >= y for x, y in zip(elong, elong[1:]))
    for k in range(3, 8):
        row = compute_shape(_mask(np.ones((1, k * k)))).sphericity
        square = compute_shape(_mask(np.ones((k, k)))).sphericity
        assert row < square


def test_convex_sphericity_bound():
    for radius in range(6, 16):
        assert compute_shape(_disk(radius)).sphericity <= 1.02


def test_principal_moments_order_independent():
    bits = np.random.default_rng(6).random((8, 8)) < 0.5
    g = GridGeometry(8, 8)
    l1, l2 = principal_moments(bits, g)
    assert l1 >= l2 >= 0
    t1, t2 = principal_moments(bits.T, g)
    assert (l1, l2) == pytest.approx((t1, t2), rel=1e-12)
