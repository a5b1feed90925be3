"""Binary ROI masks, connected components and marching-squares boundaries."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np
from scipy import ndimage
from scipy.spatial import ConvexHull, QhullError
from scipy.spatial.distance import pdist

from .grid import GridGeometry, LabelGrid, GridError

ROI_LABELS = frozenset({1, 2, 4})


class MaskError(ValueError):
    pass


@dataclass(frozen=True)
class RoiSpec:
    name: str
    labels: frozenset

    def __post_init__(self):
        labels = frozenset(int(v) for v in self.labels)
        if not labels:
            raise MaskError("RoiSpec needs at least one label")
        if not labels <= ROI_LABELS:
            raise MaskError(f"ROI labels must be a subset of {{1, 2, 4}}, got {sorted(labels)}")
        object.__setattr__(self, "labels", labels)


# ROI conventions for the tumour sub-regions: necrotic core, enhancing rim,
# their union (used for the enhancing ROI's shape family) and edema.
ROI_NECROTIC = RoiSpec("ROI1", {1})
ROI_ENHANCING = RoiSpec("ROI2", {4})
ROI_TUMOR = RoiSpec("tumor", {1, 4})
ROI_EDEMA = RoiSpec("ROI3", {2})
ROI_WHOLE = RoiSpec("whole", {1, 2, 4})


@dataclass(frozen=True, eq=False)
class BinaryMask:
    geometry: GridGeometry
    bits: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.bits, dtype=bool)
        if b.ndim == 1:
            b = b.reshape(self.geometry.shape)
        if b.shape != self.geometry.shape:
            raise GridError(f"mask shape {b.shape} does not match geometry {self.geometry.shape}")
        b = np.ascontiguousarray(b).copy()
        b.flags.writeable = False
        object.__setattr__(self, "bits", b)

    def __eq__(self, other):
        return (isinstance(other, BinaryMask) and self.geometry == other.geometry
                and np.array_equal(self.bits, other.bits))

    def pixel_count(self) -> int:
        return int(np.count_nonzero(self.bits))

    def is_empty(self) -> bool:
        return not self.bits.any()

    def __or__(self, other: "BinaryMask") -> "BinaryMask":
        return BinaryMask(self.geometry, self.bits | other.bits)

    def __and__(self, other: "BinaryMask") -> "BinaryMask":
        return BinaryMask(self.geometry, self.bits & other.bits)


def mask_from_labels(labels: LabelGrid, roi: RoiSpec) -> BinaryMask:
    return BinaryMask(labels.geometry, np.isin(labels.labels, sorted(roi.labels)))


_STRUCTURES = {
    4: ndimage.generate_binary_structure(2, 1),
    8: ndimage.generate_binary_structure(2, 2),
}


def label_components(bits: np.ndarray, connectivity: int = 8) -> tuple[np.ndarray, int]:
    """``scipy.ndimage.label`` with 4- or 8-connectivity."""
    try:
        structure = _STRUCTURES[connectivity]
    except KeyError:
        raise MaskError(f"connectivity must be 4 or 8, got {connectivity}") from None
    return ndimage.label(bits, structure=structure)


def connected_components(mask: BinaryMask, connectivity: int = 8) -> list[BinaryMask]:
    """Split ``mask`` into maximal connected pieces.

    Output is sorted by size (largest first), ties broken by the row-major index
    of each component's first pixel, so the result does not depend on how the
    labelling visited pixels.
    """
    lab, n = label_components(mask.bits, connectivity)
    if n == 0:
        return []
    flat = lab.ravel()
    sizes = np.bincount(flat, minlength=n + 1)[1:]
    nz = np.flatnonzero(flat)
    first = np.full(n, flat.size, dtype=np.int64)
    np.minimum.at(first, flat[nz] - 1, nz)
    order = sorted(range(n), key=lambda k: (-sizes[k], first[k]))
    return [BinaryMask(mask.geometry, lab == k + 1) for k in order]


def circular_mask(geometry: GridGeometry, center: tuple[float, float], diameter: float) -> BinaryMask:
    """Pixels whose centers lie within ``diameter / 2`` mm of ``center = (x, y)`` mm."""
    if not diameter > 0:
        raise MaskError(f"diameter must be > 0, got {diameter}")
    x, y = geometry.coordinates()
    cx, cy = center
    bits = (x - cx) ** 2 + (y - cy) ** 2 <= (diameter / 2.0) ** 2
    if not bits.any():
        raise MaskError(f"circle at {center} with diameter {diameter} mm covers no pixel")
    return BinaryMask(geometry, bits)


# ------------------------------------------------------------- marching squares
#
# Cells sit between four pixel centers of the zero-padded mask. Corner bits:
# top-left 8, top-right 4, bottom-right 2, bottom-left 1. Contour vertices are
# the midpoints of cell edges; the saddle cases 5 and 10 join the two inside
# corners through the cell center. Segments are directed so that the inside is
# on the right in image coordinates (x right, y down), which makes the
# shoelace area of outer loops positive and of holes negative.

_T, _R, _B, _L = range(4)
_SEGMENTS = {
    1: [(_L, _B)], 2: [(_B, _R)], 3: [(_L, _R)], 4: [(_R, _T)],
    5: [(_L, _T), (_R, _B)], 6: [(_B, _T)], 7: [(_L, _T)], 8: [(_T, _L)],
    9: [(_T, _B)], 10: [(_T, _R), (_B, _L)], 11: [(_T, _R)], 12: [(_R, _L)],
    13: [(_R, _B)], 14: [(_B, _L)],
}
# midpoint of each cell edge in doubled padded coordinates, offset from (2r, 2c)
_EDGE_OFFSETS = {_T: (0, 1), _R: (1, 2), _B: (2, 1), _L: (1, 0)}

# inside area of a cell as a fraction of the cell area, per case
_CELL_AREA = np.array([0, 1, 1, 4, 1, 6, 4, 7, 1, 4, 6, 7, 4, 7, 7, 8], dtype=np.float64) / 8.0
# segment counts per case: corner cuts, horizontal spans, vertical spans
_CELL_DIAG = np.array([0, 1, 1, 0, 1, 2, 0, 1, 1, 0, 2, 1, 0, 1, 1, 0], dtype=np.float64)
_CELL_HORZ = np.array([0, 0, 0, 1, 0, 0, 0, 0, 0, 0, 0, 0, 1, 0, 0, 0], dtype=np.float64)
_CELL_VERT = np.array([0, 0, 0, 0, 0, 0, 1, 0, 0, 1, 0, 0, 0, 0, 0, 0], dtype=np.float64)


def _cell_cases(bits: np.ndarray) -> np.ndarray:
    p = np.pad(bits, 1).astype(np.uint8)
    return (p[:-1, :-1] << 3) | (p[:-1, 1:] << 2) | (p[1:, 1:] << 1) | p[1:, :-1]


@dataclass(frozen=True, eq=False)
class BoundaryMesh:
    """Closed contour loops in physical (x, y) millimetres.

    Each loop is an ``(n, 2)`` array; the closing edge from the last vertex back
    to the first is implicit.
    """
    polygons: list = field(default_factory=list)

    def __post_init__(self):
        for loop in self.polygons:
            if len(loop) < 3:
                raise MaskError("boundary loop with fewer than 3 vertices")

    def vertices(self) -> np.ndarray:
        return np.concatenate(self.polygons, axis=0)

    def signed_areas(self) -> np.ndarray:
        return np.array([_shoelace(p) for p in self.polygons])

    def area(self) -> float:
        return float(self.signed_areas().sum())

    def perimeter(self) -> float:
        return float(sum(np.hypot(*(np.roll(p, -1, axis=0) - p).T).sum() for p in self.polygons))

    def edge_lengths(self) -> np.ndarray:
        return np.concatenate([np.hypot(*(np.roll(p, -1, axis=0) - p).T) for p in self.polygons])


def _shoelace(p: np.ndarray) -> float:
    x, y = p[:, 0], p[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def boundary_mesh(mask: BinaryMask) -> BoundaryMesh:
    """Marching-squares contour of ``mask`` as closed loops."""
    if mask.is_empty():
        raise MaskError("cannot mesh an empty mask")
    cases = _cell_cases(mask.bits)
    nxt: dict[tuple[int, int], tuple[int, int]] = {}
    for r, c in zip(*np.nonzero((cases > 0) & (cases < 15))):
        base_r, base_c = 2 * int(r), 2 * int(c)
        for a, b in _SEGMENTS[int(cases[r, c])]:
            start = (base_r + _EDGE_OFFSETS[a][0], base_c + _EDGE_OFFSETS[a][1])
            end = (base_r + _EDGE_OFFSETS[b][0], base_c + _EDGE_OFFSETS[b][1])
            nxt[start] = end

    g = mask.geometry
    loops = []
    remaining = set(nxt)
    while remaining:
        first = min(remaining)
        pts = [first]
        remaining.discard(first)
        cur = nxt[first]
        while cur != first:
            pts.append(cur)
            remaining.discard(cur)
            cur = nxt[cur]
        arr = np.array(pts, dtype=np.float64)
        # doubled padded (row, col) -> physical (x, y)
        loops.append(np.column_stack(((arr[:, 1] / 2.0 - 1.0) * g.spacing_x,
                                      (arr[:, 0] / 2.0 - 1.0) * g.spacing_y)))
    return BoundaryMesh(loops)


def maximum_diameter(mesh: BoundaryMesh) -> float:
    """Largest distance between any two mesh vertices."""
    return _max_pairwise(mesh.vertices())


def _max_pairwise(points: np.ndarray) -> float:
    if len(points) < 2:
        return 0.0
    if len(points) > 8:
        try:
            points = points[ConvexHull(points).vertices]
        except QhullError:
            pass
    return float(pdist(points).max())


def contour_measures(bits: np.ndarray, geometry: GridGeometry) -> tuple[float, float, float]:
    """``(area, perimeter, maximum_diameter)`` of the marching-squares contour.

    Same contour as :func:`boundary_mesh` but accumulated per cell without
    linking loops, which is what the feature extractor uses.
    """
    cases = _cell_cases(bits)
    hist = np.bincount(cases.ravel(), minlength=16).astype(np.float64)
    sx, sy = geometry.spacing_x, geometry.spacing_y
    area = float(hist @ _CELL_AREA) * sx * sy
    perimeter = float(hist @ _CELL_DIAG) * math.hypot(sx / 2.0, sy / 2.0) \
        + float(hist @ _CELL_HORZ) * sx + float(hist @ _CELL_VERT) * sy
    p = np.pad(bits, 1)
    hr, hc = np.nonzero(p[:, :-1] != p[:, 1:])
    vr, vc = np.nonzero(p[:-1, :] != p[1:, :])
    # padded (row, col) of edge midpoints -> physical
    rows = np.concatenate((hr.astype(np.float64), vr + 0.5)) - 1.0
    cols = np.concatenate((hc + 0.5, vc.astype(np.float64))) - 1.0
    diameter = _max_pairwise(np.column_stack((cols * sx, rows * sy)))
    return area, perimeter, diameter


def union(masks: Iterable[BinaryMask]) -> BinaryMask:
    masks = list(masks)
    bits = np.zeros(masks[0].geometry.shape, dtype=bool)
    for m in masks:
        bits |= m.bits
    return BinaryMask(masks[0].geometry, bits)
