"""2D shape features of a binary ROI."""
from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

from .grid import GridGeometry
from .masks import BinaryMask, MaskError, contour_measures


@dataclass(frozen=True)
class ShapeFeatures:
    mesh_surface: float
    pixel_surface: float
    perimeter: float
    perimeter_surface_ratio: float
    sphericity: float
    maximum_diameter: float
    major_axis_length: float
    minor_axis_length: float
    elongation: float

    def as_dict(self) -> dict[str, float]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


SHAPE_NAMES = tuple(f.name for f in fields(ShapeFeatures))


def principal_moments(bits: np.ndarray, geometry: GridGeometry) -> tuple[float, float]:
    """Eigenvalues (descending) of the population covariance of pixel centers."""
    rows, cols = np.nonzero(bits)
    pts = np.column_stack((cols * geometry.spacing_x, rows * geometry.spacing_y))
    # sort for a pixel-order independent reduction
    pts = pts[np.lexsort((pts[:, 1], pts[:, 0]))]
    centered = pts - pts.mean(axis=0)
    cov = centered.T @ centered / len(pts)
    lam = np.linalg.eigvalsh(cov)
    return max(float(lam[1]), 0.0), max(float(lam[0]), 0.0)


def compute_shape(mask: BinaryMask, geometry: GridGeometry | None = None) -> ShapeFeatures:
    """The 9 shape features of ``mask``.

    A single-pixel mask has zero-length axes; its elongation is reported as 1.
    Collinear masks have a zero minor axis and elongation 0.
    """
    geometry = mask.geometry if geometry is None else geometry
    bits = mask.bits
    n = int(np.count_nonzero(bits))
    if n == 0:
        raise MaskError("shape features need a non-empty mask")
    area, perimeter, diameter = contour_measures(bits, geometry)
    lam1, lam2 = principal_moments(bits, geometry)
    if lam1 > 0:
        elongation = math.sqrt(lam2 / lam1)
    else:
        elongation = 1.0
    return ShapeFeatures(
        mesh_surface=area,
        pixel_surface=n * geometry.pixel_area,
        perimeter=perimeter,
        perimeter_surface_ratio=perimeter / area,
        sphericity=2.0 * math.sqrt(math.pi * area) / perimeter,
        maximum_diameter=diameter,
        major_axis_length=4.0 * math.sqrt(lam1),
        minor_axis_length=4.0 * math.sqrt(lam2),
        elongation=elongation,
    )
