import json

import numpy as np
import pytest

from radiosynth.features import extract_features
from radiosynth.grid import GridGeometry, ImageGrid
from radiosynth.masks import BinaryMask, MaskError, circular_mask
from radiosynth.synth import (CONDITIONING_FEATURES, N_MODES, PARAM_NAMES, BlobParams, SynthesisError,
                              TargetSpec, background_fill, boundary_ring, box_kernel, harmonic_fill,
                              make_phantom, remove_tumor, render_blob, replace_tumor, shape_target,
                              synthesize, targets_from_features, tumor_center)

G = GridGeometry(80, 80)


def _random_mask(rng, shape=(40, 40)):
    from scipy import ndimage
    while True:
        bits = ndimage.uniform_filter(rng.normal(size=shape), 5) > rng.uniform(0.05, 0.25)
        if bits.any() and not bits.all():
            return bits


# ------------------------------------------------------------ background fill

def test_constant_fill_exact():
    img = ImageGrid(G, np.full(G.shape, 123.25))
    out = background_fill(img, circular_mask(G, (40, 40), 20), seed=3, noise=True)
    assert np.array_equal(out.intensities, img.intensities)


def test_ramp_reproduced():
    x, y = G.coordinates()
    ramp = 3.0 * x - 1.5 * y + 40.0
    span = ramp.max() - ramp.min()
    rng = np.random.default_rng(0)
    for _ in range(5):
        bits = _random_mask(rng, G.shape)
        # keep border pixels outside: the mirror rule is not exact for a ramp there
        bits[:2] = bits[-2:] = False
        bits[:, :2] = bits[:, -2:] = False
        if not bits.any():
            continue
        out = background_fill(ImageGrid(G, ramp), BinaryMask(G, bits), noise=False)
        assert np.max(np.abs(out.intensities - ramp)) <= 1e-6 * span


def test_maximum_principle_and_outside_untouched():
    rng = np.random.default_rng(1)
    g = GridGeometry(40, 40)
    for _ in range(100):
        img = rng.normal(size=g.shape) * 50
        bits = _random_mask(rng)
        filled, iters, res = harmonic_fill(img, bits)
        ring = boundary_ring(bits, 1) & ~bits
        inside = filled[bits]
        assert inside.min() >= img[ring].min() - 1e-9 and inside.max() <= img[ring].max() + 1e-9
        assert np.array_equal(filled[~bits], img[~bits])
        out = background_fill(ImageGrid(g, img), BinaryMask(g, bits), seed=2)
        assert np.array_equal(out.intensities[~bits], img[~bits])


def test_fill_noise_matches_ring_std_and_is_seeded():
    img, lab = make_phantom(5)
    m = BinaryMask(G, np.isin(lab.labels, (1, 2, 4)))
    a = background_fill(img, m, seed=4)
    assert a == background_fill(img, m, seed=4)
    assert a != background_fill(img, m, seed=5)
    quiet = background_fill(img, m, noise=False)
    resid = (a.intensities - quiet.intensities)[m.bits]
    ring_std = np.std(img.intensities[boundary_ring(m.bits)], ddof=1)
    assert resid.std() == pytest.approx(ring_std, rel=0.15)


def test_fill_errors():
    with pytest.raises(MaskError):
        harmonic_fill(np.zeros((4, 4)), np.zeros((4, 4), bool))
    with pytest.raises(MaskError):
        harmonic_fill(np.zeros((4, 4)), np.ones((4, 4), bool))


# --------------------------------------------------------------------- blobs

def test_param_roundtrips():
    p = BlobParams((30.0, 31.0), 10.0, tuple(np.arange(N_MODES) / 100), tuple(-np.arange(N_MODES) / 90),
                   0.4, 280.0, 650.0, 20.0, 1.5)
    assert BlobParams.from_vector(p.to_vector()) == p
    assert BlobParams.from_dict(json.loads(json.dumps(p.to_dict()))) == p
    assert len(PARAM_NAMES) == p.to_vector().size == 20


def test_invalid_params():
    with pytest.raises(SynthesisError):
        BlobParams((40, 40), -1.0).validate()
    with pytest.raises(SynthesisError):
        BlobParams((40, 40), 10.0, a=(1.5,) + (0.0,) * (N_MODES - 1)).validate()
    with pytest.raises(SynthesisError):
        render_blob(BlobParams((5, 5), 10.0), G, ImageGrid(G, np.zeros(G.shape)))


def test_zero_modes_give_digital_disk():
    g = GridGeometry(90, 90)
    p = BlobParams((45.0, 45.0), 30.0, core_ratio=0.5)
    _, lab = render_blob(p, g, ImageGrid(g, np.zeros(g.shape)))
    x, y = g.coordinates()
    assert np.array_equal(lab.labels > 0, np.hypot(x - 45, y - 45) < 30)


@pytest.mark.xfail(strict=True, reason="midpoint contour bias: digital disks reach ~0.94 sphericity")
def test_zero_modes_sphericity_bound():
    g = GridGeometry(80, 80)
    img, lab = render_blob(BlobParams((40.0, 40.0), 25.0), g, ImageGrid(g, np.zeros(g.shape)))
    assert extract_features(img, lab).get("ROI2", "sphericity") >= 0.98


def test_core_area_ratio():
    g = GridGeometry(90, 90)
    for ratio in (0.3, 0.5, 0.7):
        p = BlobParams((45.0, 45.0), 28.0, (0.05,) + (0.0,) * 5, (0.0, 0.03) + (0.0,) * 4, core_ratio=ratio)
        _, lab = render_blob(p, g, ImageGrid(g, np.zeros(g.shape)))
        frac = (lab.labels == 1).sum() / (lab.labels > 0).sum()
        assert abs(frac - ratio ** 2) <= 0.1 * ratio ** 2


def test_render_deterministic_and_composited():
    bg = ImageGrid(G, np.random.default_rng(0).normal(400, 10, G.shape))
    p = BlobParams((40.0, 38.0), 12.0, smooth_px=1.3)
    a = render_blob(p, G, bg, seed=9)
    assert a == render_blob(p, G, bg, seed=9)
    outside = a[1].labels == 0
    assert np.array_equal(a[0].intensities[outside], bg.intensities[outside])


def test_box_kernel():
    assert box_kernel(0.0).tolist() == [1.0]
    assert np.allclose(box_kernel(1.0), np.full(3, 1 / 3))
    assert np.allclose(box_kernel(0.5), [0.25, 0.5, 0.25])
    k = box_kernel(1.7)
    assert k.size == 5 and abs(k.sum() - 1) < 1e-15


# ------------------------------------------------------------------ targets

def test_target_json_roundtrip_and_validation():
    img, lab = make_phantom(0)
    ts = targets_from_features(extract_features(img, lab))
    assert len(ts.targets) == 134
    back = TargetSpec.from_json(ts.to_json())
    assert back == ts
    with pytest.raises(SynthesisError):
        TargetSpec((), 10.0)
    with pytest.raises(SynthesisError):
        TargetSpec.from_json('{"mask_diameter_mm": 5, "targets": [{"roi": "ROI1"}]}')
    with pytest.raises(SynthesisError):
        shape_target(100.0, 1.3)


def test_default_scales():
    fv = extract_features(*make_phantom(0))
    ts = targets_from_features(fv, CONDITIONING_FEATURES)
    assert ts.get("ROI2", "sphericity").scale == 0.05
    area = ts.get("ROI2", "pixel_surface")
    assert area.scale == area.value
    assert ts.mask_diameter == pytest.approx(1.25 * fv.get("ROI2", "maximum_diameter"))


# ---------------------------------------------------------------- synthesis

def _self_target(seed=0):
    bg = remove_tumor(*make_phantom(3), seed=1)
    p = BlobParams((41.0, 39.0), 11.0, (0.05, 0.0, -0.02, 0.0, 0.0, 0.0), (0.0, 0.03, 0.0, 0.0, 0.0, 0.0),
                   0.5, 300.0, 700.0, 25.0, 1.0)
    img, lab = render_blob(p, G, bg, seed=11)
    return bg, tumor_center(lab), targets_from_features(extract_features(img, lab), CONDITIONING_FEATURES)


def test_budget_one_returns_initial():
    bg, c, ts = _self_target()
    res = synthesize(bg, c, ts, seed=0, budget=1)
    assert res.evaluations == 1 and res.objective == res.initial_objective
    fv = res.achieved
    obj = sum(t.weight * ((fv.get(t.roi, t.feature) - t.value) / t.scale) ** 2 for t in ts.targets)
    assert res.objective == pytest.approx(obj, rel=1e-12)
    with pytest.raises(SynthesisError):
        synthesize(bg, c, ts, budget=0)


def test_two_seeds_diverse_but_on_target():
    bg, c, ts = _self_target()
    a = synthesize(bg, c, ts, seed=1, budget=2000)
    b = synthesize(bg, c, ts, seed=2, budget=2000)
    for res in (a, b):
        # the 10% area bound is acceptance-level; here only diversity at a fair fit
        assert res.objective < 0.1
        area = ts.get("ROI2", "pixel_surface").value
        assert abs(res.achieved.get("ROI2", "pixel_surface") - area) <= 0.15 * area
        assert abs(res.achieved.get("ROI2", "sphericity") - ts.get("ROI2", "sphericity").value) <= 0.05
        assert list(res.trace) == sorted(res.trace, reverse=True)
    assert np.count_nonzero(a.labels.labels != b.labels.labels) > 0


def test_synthesis_deterministic_and_inside_circle():
    bg, c, ts = _self_target()
    a = synthesize(bg, c, ts, seed=7, budget=150)
    b = synthesize(bg, c, ts, seed=7, budget=150)
    assert a.image == b.image and a.labels == b.labels and a.trace == b.trace
    circle = circular_mask(G, c, ts.mask_diameter).bits
    assert not (a.labels.labels.astype(bool) & ~circle).any()


def test_shape_target_sweep_cell():
    bg = remove_tumor(*make_phantom(3), seed=1)
    res = synthesize(bg, (40.0, 40.0), shape_target(300.0, 0.85), seed=0, budget=1500)
    fv = res.achieved
    assert abs(fv.get("ROI2", "pixel_surface") - 300) <= 0.15 * 300
    assert abs(fv.get("ROI2", "sphericity") - 0.85) <= 0.08


# ------------------------------------------------------------ phantoms, removal

def test_phantom_properties():
    a = make_phantom(12)
    assert a[0] == make_phantom(12)[0] and a[1] == make_phantom(12)[1]
    fv = extract_features(*a)
    assert not fv.flagged and (a[1].labels == 2).any()
    rows = {tuple(extract_features(*make_phantom(s)).values()) for s in range(30)}
    assert len(rows) == 30
    with pytest.raises(SynthesisError):
        make_phantom(0, GridGeometry(32, 32))


def test_replace_tumor_modes():
    img, lab = make_phantom(6)
    res = replace_tumor(img, lab, (40.0, 40.0), None, seed=1)
    assert not res.labels.labels.any()
    assert np.array_equal(res.image.intensities[lab.labels == 0], img.intensities[lab.labels == 0])
    with pytest.raises(SynthesisError):
        replace_tumor(img, lab, (500.0, 40.0), None)


def test_replace_tumor_self_consistency():
    img, lab = make_phantom(6)
    fv = extract_features(img, lab)
    ts = targets_from_features(fv, CONDITIONING_FEATURES)
    res = replace_tumor(img, lab, tumor_center(lab), ts, seed=3, budget=2500)
    assert res.metadata["pipeline"] == ["background_fill(labels 1,2,4)", "synthesize"]
    area = fv.get("ROI2", "pixel_surface")
    assert abs(res.achieved.get("ROI2", "pixel_surface") - area) <= 0.1 * area
    assert abs(res.achieved.get("ROI2", "sphericity") - fv.get("ROI2", "sphericity")) <= 0.05
