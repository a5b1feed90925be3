"""GLCM and GLSZM texture matrices and their features.

Feature names and formulas follow the default-enabled GLCM/GLSZM sets of the
common radiomics toolkits, in 2D, with symmetric co-occurrence counting and
per-angle features averaged over the angles that have at least one pair.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from skimage import measure

from .firstorder import DiscretizationConfig, discretize
from .grid import ImageGrid, check_same_geometry
from .masks import BinaryMask, MaskError

# (row, col) unit offsets: 0, 45, 90 and 135 degrees
GLCM_OFFSETS = ((0, 1), (1, 1), (1, 0), (1, -1))

GLCM_NAMES = (
    "autocorrelation", "joint_average", "cluster_prominence", "cluster_shade",
    "cluster_tendency", "contrast", "correlation", "difference_average",
    "difference_entropy", "difference_variance", "joint_energy", "joint_entropy",
    "imc1", "imc2", "idm", "idmn", "id", "idn", "inverse_variance",
    "maximum_probability", "sum_average", "sum_entropy", "sum_squares", "mcc",
)

GLSZM_NAMES = (
    "small_area_emphasis", "large_area_emphasis", "gray_level_non_uniformity",
    "gray_level_non_uniformity_normalized", "size_zone_non_uniformity",
    "size_zone_non_uniformity_normalized", "zone_percentage", "gray_level_variance",
    "zone_variance", "zone_entropy", "low_gray_level_zone_emphasis",
    "high_gray_level_zone_emphasis", "small_area_low_gray_level_emphasis",
    "small_area_high_gray_level_emphasis", "large_area_low_gray_level_emphasis",
    "large_area_high_gray_level_emphasis",
)


def gray_levels(image: ImageGrid, mask: BinaryMask, disc: DiscretizationConfig) -> tuple[np.ndarray, int]:
    """Discretized level image: ``1..n_levels`` inside ``mask``, 0 outside."""
    check_same_geometry(image, mask)
    if mask.is_empty():
        raise MaskError("texture features need a non-empty mask")
    levels = np.zeros(mask.geometry.shape, dtype=np.int64)
    bins, n_levels = discretize(image.intensities[mask.bits], disc)
    levels[mask.bits] = bins
    return levels, n_levels


@dataclass(frozen=True, eq=False)
class GlcmSet:
    """Normalized symmetric co-occurrence matrices, one per retained offset.

    ``matrices[k, i-1, j-1]`` is the joint probability of levels ``(i, j)`` at
    ``offsets[k]``.
    """
    matrices: np.ndarray
    offsets: tuple
    n_levels: int


def glcm_from_levels(levels: np.ndarray, n_levels: int) -> GlcmSet:
    h, w = levels.shape
    mats, kept = [], []
    for dr, dc in GLCM_OFFSETS:
        r0, r1 = max(0, -dr), h - max(0, dr)
        c0, c1 = max(0, -dc), w - max(0, dc)
        a = levels[r0:r1, c0:c1]
        b = levels[r0 + dr:r1 + dr, c0 + dc:c1 + dc]
        valid = (a > 0) & (b > 0)
        if not valid.any():
            continue
        idx = (a[valid] - 1) * n_levels + (b[valid] - 1)
        counts = np.bincount(idx, minlength=n_levels * n_levels).reshape(n_levels, n_levels)
        counts = (counts + counts.T).astype(np.float64)
        mats.append(counts / counts.sum())
        kept.append((dr, dc))
    if not mats:
        raise MaskError("no pair of neighbouring ROI pixels at any GLCM offset")
    return GlcmSet(np.stack(mats), tuple(kept), n_levels)


def build_glcm(image: ImageGrid, mask: BinaryMask,
               disc: DiscretizationConfig = DiscretizationConfig()) -> GlcmSet:
    return glcm_from_levels(*gray_levels(image, mask, disc))


def _xlog2x(p: np.ndarray, axes) -> np.ndarray:
    safe = np.where(p > 0, p, 1.0)
    return -np.sum(p * np.log2(safe), axis=axes)


def _angle_mean(values: np.ndarray) -> float:
    return math.fsum(values.tolist()) / len(values) + 0.0


def glcm_features(glcm: GlcmSet) -> dict[str, float]:
    """The 24 GLCM features, each averaged over the retained offsets."""
    P = glcm.matrices
    ng = glcm.n_levels
    lv = np.arange(1, ng + 1, dtype=np.float64)
    i = lv[:, None]
    j = lv[None, :]
    ax = (1, 2)

    px = P.sum(axis=2)
    py = P.sum(axis=1)
    ux = px @ lv
    uy = py @ lv
    varx = np.sum(px * (lv[None, :] - ux[:, None]) ** 2, axis=1)
    vary = np.sum(py * (lv[None, :] - uy[:, None]) ** 2, axis=1)

    diff = np.abs(i - j)
    k_sum = np.arange(2, 2 * ng + 1)
    k_diff = np.arange(ng)
    sum_idx = (i + j).astype(np.int64) - 2
    diff_idx = diff.astype(np.int64)
    p_sum = np.stack([np.bincount(sum_idx.ravel(), weights=m.ravel(), minlength=2 * ng - 1) for m in P])
    p_diff = np.stack([np.bincount(diff_idx.ravel(), weights=m.ravel(), minlength=ng) for m in P])

    hx = _xlog2x(px, 1)
    hy = _xlog2x(py, 1)
    hxy = _xlog2x(P, ax)
    pxpy = px[:, :, None] * py[:, None, :]
    safe_pxpy = np.where(pxpy > 0, pxpy, 1.0)
    hxy1 = -np.sum(P * np.log2(safe_pxpy), axis=ax)
    hxy2 = _xlog2x(pxpy, ax)

    shift = (i + j)[None] - ux[:, None, None] - uy[:, None, None]
    sig = np.sqrt(varx * vary)
    cross = np.sum(P * i * j, axis=ax)
    with np.errstate(divide="ignore", invalid="ignore"):
        correlation = np.where(sig > 0, (cross - ux * uy) / np.where(sig > 0, sig, 1.0), 1.0)
        hmax = np.maximum(hx, hy)
        imc1 = np.where(hmax > 0, (hxy - hxy1) / np.where(hmax > 0, hmax, 1.0), 0.0)
    imc2 = np.sqrt(np.clip(1.0 - np.exp(-2.0 * (hxy2 - hxy)), 0.0, None))
    imc2 = np.where(hxy2 == hxy, 0.0, imc2)

    diff_avg = p_diff @ k_diff
    off_diag = diff > 0
    inv_var_w = np.where(off_diag, 1.0 / np.where(off_diag, diff, 1.0) ** 2, 0.0)

    per_angle = {
        "autocorrelation": cross,
        "joint_average": ux,
        "cluster_prominence": np.sum(P * shift ** 4, axis=ax),
        "cluster_shade": np.sum(P * shift ** 3, axis=ax),
        "cluster_tendency": np.sum(P * shift ** 2, axis=ax),
        "contrast": np.sum(P * diff ** 2, axis=ax),
        "correlation": correlation,
        "difference_average": diff_avg,
        "difference_entropy": _xlog2x(p_diff, 1),
        "difference_variance": np.sum(p_diff * (k_diff[None, :] - diff_avg[:, None]) ** 2, axis=1),
        "joint_energy": np.sum(P * P, axis=ax),
        "joint_entropy": hxy,
        "imc1": imc1,
        "imc2": imc2,
        "idm": np.sum(P / (1.0 + diff ** 2), axis=ax),
        "idmn": np.sum(P / (1.0 + diff ** 2 / ng ** 2), axis=ax),
        "id": np.sum(P / (1.0 + diff), axis=ax),
        "idn": np.sum(P / (1.0 + diff / ng), axis=ax),
        "inverse_variance": np.sum(P * inv_var_w, axis=ax),
        "maximum_probability": P.max(axis=ax),
        "sum_average": p_sum @ k_sum,
        "sum_entropy": _xlog2x(p_sum, 1),
        "sum_squares": np.sum(P * (i[None] - ux[:, None, None]) ** 2, axis=ax),
        "mcc": np.array([_mcc(m, a, b) for m, a, b in zip(P, px, py)]),
    }
    return {name: _angle_mean(per_angle[name]) for name in GLCM_NAMES}


def _mcc(p: np.ndarray, px: np.ndarray, py: np.ndarray) -> float:
    """Square root of the second largest eigenvalue of the transition matrix.

    ``Q(i, j) = sum_k p(i, k) p(j, k) / (px(i) py(k))`` over levels present in
    the matrix. A single present level gives 1.
    """
    present = px > 0
    if np.count_nonzero(present) < 2:
        return 1.0
    p = p[np.ix_(present, present)]
    px, py = px[present], py[present]
    q = (p / px[:, None] / py[None, :]) @ p.T
    eig = np.sort(np.linalg.eigvals(q).real)
    return float(math.sqrt(max(eig[-2], 0.0)))


@dataclass(frozen=True, eq=False)
class SizeZoneMatrix:
    """``counts[i-1, j-1]`` is the number of zones of level ``i`` with ``j`` pixels."""
    counts: np.ndarray
    n_levels: int
    n_pixels: int

    @property
    def max_zone_size(self) -> int:
        return self.counts.shape[1]

    @property
    def n_zones(self) -> int:
        return int(self.counts.sum())


def glszm_from_levels(levels: np.ndarray, n_levels: int, connectivity: int = 8) -> SizeZoneMatrix:
    if connectivity not in (4, 8):
        raise MaskError(f"connectivity must be 4 or 8, got {connectivity}")
    # equal-valued neighbours share a label, so one pass finds every zone
    zones = measure.label(levels, connectivity=1 if connectivity == 4 else 2, background=0)
    flat = zones.ravel()
    inside = flat > 0
    n_pixels = int(np.count_nonzero(inside))
    n_zones = int(flat.max())
    sizes = np.bincount(flat, minlength=n_zones + 1)[1:]
    zone_level = np.zeros(n_zones, dtype=np.int64)
    zone_level[flat[inside] - 1] = levels.ravel()[inside]
    max_size = int(sizes.max()) if n_zones else 1
    counts = np.zeros((n_levels, max_size), dtype=np.int64)
    np.add.at(counts, (zone_level - 1, sizes - 1), 1)
    return SizeZoneMatrix(counts, n_levels, n_pixels)


def build_glszm(image: ImageGrid, mask: BinaryMask,
                disc: DiscretizationConfig = DiscretizationConfig(),
                connectivity: int = 8) -> SizeZoneMatrix:
    return glszm_from_levels(*gray_levels(image, mask, disc), connectivity=connectivity)


def glszm_features(szm: SizeZoneMatrix) -> dict[str, float]:
    """The 16 GLSZM features over ``p(i, j) = P(i, j) / N_z``."""
    P = szm.counts.astype(np.float64)
    nz = P.sum()
    if nz < 1:
        raise MaskError("size zone matrix has no zones")
    p = P / nz
    i = np.arange(1, P.shape[0] + 1, dtype=np.float64)[:, None]
    j = np.arange(1, P.shape[1] + 1, dtype=np.float64)[None, :]
    pg = P.sum(axis=1)
    ps = P.sum(axis=0)
    mu_i = float(np.sum(p * i))
    mu_j = float(np.sum(p * j))
    nonzero = p[p > 0]
    out = {
        "small_area_emphasis": np.sum(p / j ** 2),
        "large_area_emphasis": np.sum(p * j ** 2),
        "gray_level_non_uniformity": np.sum(pg ** 2) / nz,
        "gray_level_non_uniformity_normalized": np.sum(pg ** 2) / nz ** 2,
        "size_zone_non_uniformity": np.sum(ps ** 2) / nz,
        "size_zone_non_uniformity_normalized": np.sum(ps ** 2) / nz ** 2,
        "zone_percentage": nz / szm.n_pixels,
        "gray_level_variance": np.sum(p * (i - mu_i) ** 2),
        "zone_variance": np.sum(p * (j - mu_j) ** 2),
        "zone_entropy": -np.sum(nonzero * np.log2(nonzero)) + 0.0,
        "low_gray_level_zone_emphasis": np.sum(p / i ** 2),
        "high_gray_level_zone_emphasis": np.sum(p * i ** 2),
        "small_area_low_gray_level_emphasis": np.sum(p / (i ** 2 * j ** 2)),
        "small_area_high_gray_level_emphasis": np.sum(p * i ** 2 / j ** 2),
        "large_area_low_gray_level_emphasis": np.sum(p * j ** 2 / i ** 2),
        "large_area_high_gray_level_emphasis": np.sum(p * i ** 2 * j ** 2),
    }
    return {k: float(out[k]) for k in GLSZM_NAMES}
