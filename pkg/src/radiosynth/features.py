"""Per-subject feature vectors and cohort tables.

A feature vector holds 67 values per ROI: 9 shape, 18 first-order, 24 GLCM and
16 GLSZM features. Entries are ordered by ROI (as configured), then family
(shape, firstorder, glcm, glszm), then feature name alphabetically.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .firstorder import FIRST_ORDER_NAMES, DiscretizationConfig, compute_first_order, discretize
from .grid import GridGeometry, ImageGrid, LabelGrid, _atomic_write, check_same_geometry
from .masks import BinaryMask, MaskError, RoiSpec
from .shape import SHAPE_NAMES, compute_shape
from .texture import GLCM_NAMES, GLSZM_NAMES, glcm_features, glcm_from_levels, glszm_features, \
    glszm_from_levels

FAMILIES = ("shape", "firstorder", "glcm", "glszm")
FAMILY_FEATURES = {
    "shape": tuple(sorted(SHAPE_NAMES)),
    "firstorder": tuple(sorted(FIRST_ORDER_NAMES)),
    "glcm": tuple(sorted(GLCM_NAMES)),
    "glszm": tuple(sorted(GLSZM_NAMES)),
}
FEATURES_PER_ROI = sum(len(v) for v in FAMILY_FEATURES.values())
FEATURE_FAMILY = {name: fam for fam, names in FAMILY_FEATURES.items() for name in names}


class FeatureError(ValueError):
    pass


@dataclass(frozen=True)
class RoiConfig:
    """An ROI plus the (possibly wider) label set its shape family is measured on."""
    roi: RoiSpec
    shape_labels: frozenset | None = None

    @property
    def name(self) -> str:
        return self.roi.name

    def shape_roi(self) -> RoiSpec:
        if self.shape_labels is None:
            return self.roi
        return RoiSpec(self.roi.name + "_shape", self.shape_labels)

    def to_dict(self) -> dict:
        return {"name": self.roi.name, "labels": sorted(self.roi.labels),
                "shape_labels": sorted(self.shape_labels) if self.shape_labels else None}

    @classmethod
    def from_dict(cls, d: dict) -> "RoiConfig":
        shape = d.get("shape_labels")
        return cls(RoiSpec(d["name"], frozenset(d["labels"])), frozenset(shape) if shape else None)


# ROI1 is the necrotic core; ROI2 the enhancing tumour, whose shape family is
# measured on the necrotic + enhancing union.
ROI1 = RoiConfig(RoiSpec("ROI1", frozenset({1})))
ROI2 = RoiConfig(RoiSpec("ROI2", frozenset({4})), frozenset({1, 4}))
ROI3 = RoiConfig(RoiSpec("ROI3", frozenset({2})))
DEFAULT_ROIS = (ROI1, ROI2)


def schema(rois: Sequence[RoiConfig] | Sequence[str] = DEFAULT_ROIS,
           families: Sequence[str] = FAMILIES) -> list[tuple[str, str, str]]:
    """Canonical ``(roi, family, feature)`` column keys."""
    names = [r.name if isinstance(r, RoiConfig) else r for r in rois]
    return [(roi, fam, feat) for roi in names for fam in FAMILIES if fam in families
            for feat in FAMILY_FEATURES[fam]]


@dataclass(frozen=True, eq=False)
class FeatureVector:
    entries: tuple
    metadata: dict = field(default_factory=dict)
    absent: tuple = ()

    def __eq__(self, other):
        return isinstance(other, FeatureVector) and self.entries == other.entries \
            and self.absent == other.absent

    def __len__(self):
        return len(self.entries)

    def as_dict(self) -> dict[tuple[str, str], float]:
        return {(roi, feat): value for roi, _fam, feat, value in self.entries}

    def keys(self) -> list[tuple[str, str, str]]:
        return [(roi, fam, feat) for roi, fam, feat, _ in self.entries]

    def values(self) -> np.ndarray:
        return np.array([v for *_, v in self.entries], dtype=np.float64)

    def get(self, roi: str, feature: str) -> float:
        for r, _fam, f, v in self.entries:
            if r == roi and f == feature:
                return v
        raise KeyError((roi, feature))

    @property
    def flagged(self) -> bool:
        return bool(self.absent)


def _bbox(bits: np.ndarray) -> tuple[slice, slice]:
    rows = np.flatnonzero(bits.any(axis=1))
    cols = np.flatnonzero(bits.any(axis=0))
    return slice(rows[0], rows[-1] + 1), slice(cols[0], cols[-1] + 1)


def roi_features(image: ImageGrid, labels: LabelGrid, rc: RoiConfig,
                 disc: DiscretizationConfig, families: Iterable[str] = FAMILIES) -> dict[str, dict[str, float]]:
    """Features of one ROI, by family. Raises :class:`MaskError` for empty/degenerate ROIs."""
    families = set(families)
    lab = labels.labels
    bits = np.isin(lab, sorted(rc.roi.labels))
    if not bits.any():
        raise MaskError(f"ROI {rc.name} is empty")
    geometry = image.geometry
    out: dict[str, dict[str, float]] = {}
    if "shape" in families:
        shape_bits = np.isin(lab, sorted(rc.shape_roi().labels)) if rc.shape_labels else bits
        win = _bbox(shape_bits)
        out["shape"] = compute_shape(BinaryMask(_window_geometry(geometry, shape_bits[win]),
                                                shape_bits[win])).as_dict()
    win = _bbox(bits)
    bits = bits[win]
    values = image.intensities[win]
    if "firstorder" in families:
        out["firstorder"] = compute_first_order(values[bits], geometry.pixel_area, disc).as_dict()
    if "glcm" in families or "glszm" in families:
        levels = np.zeros(bits.shape, dtype=np.int64)
        levels[bits], n_levels = discretize(values[bits], disc)
        if "glcm" in families:
            out["glcm"] = glcm_features(glcm_from_levels(levels, n_levels))
        if "glszm" in families:
            out["glszm"] = glszm_features(glszm_from_levels(levels, n_levels))
    return out


def _window_geometry(geometry: GridGeometry, a: np.ndarray) -> GridGeometry:
    return GridGeometry(a.shape[1], a.shape[0], geometry.spacing_x, geometry.spacing_y)


def extract_features(image: ImageGrid, labels: LabelGrid,
                     rois: Sequence[RoiConfig] = DEFAULT_ROIS,
                     disc: DiscretizationConfig = DiscretizationConfig(),
                     source: str | None = None, seed: int | None = None) -> FeatureVector:
    """All 67 features for each configured ROI.

    ROIs that are empty (or too small for a co-occurrence matrix) are listed in
    ``absent`` and contribute no entries.
    """
    check_same_geometry(image, labels)
    entries, absent = [], []
    for rc in rois:
        try:
            fams = roi_features(image, labels, rc, disc)
        except MaskError:
            absent.append(rc.name)
            continue
        for fam in FAMILIES:
            for feat in FAMILY_FEATURES[fam]:
                entries.append((rc.name, fam, feat, float(fams[fam][feat])))
    g = image.geometry
    meta = {
        "rois": [rc.to_dict() for rc in rois],
        "discretization": disc.to_dict(),
        "geometry": {"width": g.width, "height": g.height, "spacing_x": g.spacing_x, "spacing_y": g.spacing_y},
        "pixel_counts": {rc.name: int(np.isin(labels.labels, sorted(rc.roi.labels)).sum()) for rc in rois},
        "glcm_feature_set": "default-enabled 24 (2D, symmetric, angle-averaged)",
    }
    if source is not None:
        meta["source"] = source
    if seed is not None:
        meta["seed"] = int(seed)
    return FeatureVector(tuple(entries), meta, tuple(absent))


# -------------------------------------------------------------------- cohorts

@dataclass(frozen=True, eq=False)
class CohortMatrix:
    subjects: tuple
    columns: tuple
    values: np.ndarray
    transform: dict | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != (len(self.subjects), len(self.columns)):
            raise FeatureError(f"values shape {v.shape} does not match "
                               f"{len(self.subjects)} subjects x {len(self.columns)} columns")
        if np.isnan(v).any():
            raise FeatureError("cohort matrix contains NaN")
        object.__setattr__(self, "subjects", tuple(self.subjects))
        object.__setattr__(self, "columns", tuple(tuple(c) for c in self.columns))
        object.__setattr__(self, "values", v)

    def column(self, key) -> np.ndarray:
        return self.values[:, self.columns.index(tuple(key))]

    def select(self, keys) -> "CohortMatrix":
        idx = [self.columns.index(tuple(k)) for k in keys]
        return CohortMatrix(self.subjects, [self.columns[i] for i in idx], self.values[:, idx],
                            metadata=self.metadata)

    def sorted_by_subject(self) -> "CohortMatrix":
        order = sorted(range(len(self.subjects)), key=lambda k: self.subjects[k])
        return CohortMatrix([self.subjects[k] for k in order], self.columns, self.values[order],
                            self.transform, self.metadata)


def cohort_from_vectors(vectors: dict[str, FeatureVector], missing: str = "drop",
                        columns: Sequence | None = None) -> CohortMatrix:
    """Stack feature vectors into a cohort table, rows sorted by subject id.

    ``missing`` decides what happens to subjects with absent ROIs: ``"drop"``
    removes them, ``"impute"`` fills the gaps with the column mean of the
    subjects that have them.
    """
    if missing not in ("drop", "impute"):
        raise ValueError("missing must be 'drop' or 'impute'")
    subjects = sorted(vectors)
    if columns is None:
        rois = []
        for s in subjects:
            for r in vectors[s].metadata.get("rois", []):
                if r["name"] not in rois:
                    rois.append(r["name"])
            for roi, *_ in vectors[s].keys():
                if roi not in rois:
                    rois.append(roi)
        columns = schema(rois)
    columns = [tuple(c) for c in columns]
    col_idx = {c: k for k, c in enumerate(columns)}
    rows, kept, dropped = [], [], []
    for s in subjects:
        row = np.full(len(columns), np.nan)
        for key, v in zip(vectors[s].keys(), vectors[s].values()):
            if key in col_idx:
                row[col_idx[key]] = v
        if np.isnan(row).any() and missing == "drop":
            dropped.append(s)
            continue
        rows.append(row)
        kept.append(s)
    values = np.array(rows).reshape(len(kept), len(columns))
    if missing == "impute" and len(kept):
        means = np.nanmean(np.where(np.isnan(values), np.nan, values), axis=0)
        if np.isnan(means).any():
            raise FeatureError("cannot impute a column that is missing for every subject")
        values = np.where(np.isnan(values), means[None, :], values)
    meta = {"dropped_subjects": dropped, "missing_policy": missing}
    return CohortMatrix(kept, columns, values, metadata=meta)


def standardize(cohort: CohortMatrix, reference: dict | None = None) -> CohortMatrix:
    """Per-column z-scores with the population standard deviation.

    With ``reference`` (a ``transform`` dict from an earlier call) the stored
    means and deviations are applied instead of being recomputed. Columns with
    zero spread map to 0 and are listed in ``transform["zero_variance"]``.
    """
    if reference is None:
        if len(cohort.subjects) < 2:
            raise FeatureError("standardization needs at least 2 subjects")
        mean = cohort.values.mean(axis=0)
        std = cohort.values.std(axis=0)
        zero = std == 0
        transform = {"columns": [list(c) for c in cohort.columns], "mean": mean.tolist(),
                     "std": std.tolist(), "zero_variance": [list(c) for c, z in zip(cohort.columns, zero) if z]}
    else:
        cols = [tuple(c) for c in reference["columns"]]
        if cols != list(cohort.columns):
            raise FeatureError("reference transform has a different column schema")
        mean = np.asarray(reference["mean"])
        std = np.asarray(reference["std"])
        transform = reference
    zero = std == 0
    z = (cohort.values - mean) / np.where(zero, 1.0, std)
    z[:, zero] = 0.0
    return CohortMatrix(cohort.subjects, cohort.columns, z, transform, cohort.metadata)


def destandardize(cohort: CohortMatrix) -> CohortMatrix:
    if cohort.transform is None:
        raise FeatureError("cohort carries no transform")
    mean = np.asarray(cohort.transform["mean"])
    std = np.asarray(cohort.transform["std"])
    return CohortMatrix(cohort.subjects, cohort.columns, cohort.values * std + mean, None, cohort.metadata)


# ------------------------------------------------------------------------ I/O

CSV_HEADER = ("subject", "roi", "family", "feature", "value")


def sidecar_path(path) -> Path:
    return Path(path).with_suffix(".json")


def write_features(path, vectors: dict[str, FeatureVector], extra_metadata: dict | None = None) -> None:
    """Write feature vectors as long-format CSV plus a JSON metadata sidecar."""
    buf = io.StringIO(newline="")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    subjects = sorted(vectors)
    rois: list[str] = []
    for s in subjects:
        for roi, fam, feat, v in vectors[s].entries:
            w.writerow((s, roi, fam, feat, repr(float(v))))
        for r in vectors[s].metadata.get("rois", []):
            if r["name"] not in rois:
                rois.append(r["name"])
    meta = {
        "format": "radiosynth-features v1",
        "rois": rois,
        "subjects": {s: {"absent": list(vectors[s].absent), **vectors[s].metadata} for s in subjects},
    }
    if extra_metadata:
        meta.update(extra_metadata)
    _atomic_write(path, buf.getvalue().encode("utf-8"))
    _atomic_write(sidecar_path(path), (json.dumps(meta, indent=1, sort_keys=True) + "\n").encode("utf-8"))


def read_vectors(path) -> dict[str, FeatureVector]:
    side = sidecar_path(path)
    if not side.exists():
        raise FeatureError(f"missing metadata sidecar {side}")
    meta = json.loads(side.read_text())
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != CSV_HEADER:
            raise FeatureError(f"bad features CSV header: {header}")
        raw: dict[str, dict] = {}
        for row in reader:
            if len(row) != 5:
                raise FeatureError(f"malformed row {row}")
            s, roi, fam, feat, value = row
            if FEATURE_FAMILY.get(feat) != fam:
                raise FeatureError(f"unknown feature {fam}/{feat}")
            raw.setdefault(s, {})[(roi, fam, feat)] = float(value)
    subject_meta = meta.get("subjects", {})
    roi_order = list(meta.get("rois", []))
    out = {}
    for s in sorted(set(raw) | set(subject_meta)):
        vals = raw.get(s, {})
        rois = roi_order + sorted({k[0] for k in vals} - set(roi_order))
        keys = [k for k in schema(rois) if k in vals]
        if len(keys) != len(vals) or len(keys) % FEATURES_PER_ROI:
            raise FeatureError(f"subject {s}: feature set does not match the {FEATURES_PER_ROI}-per-ROI schema")
        sm = dict(subject_meta.get(s, {}))
        absent = tuple(sm.pop("absent", ()))
        out[s] = FeatureVector(tuple((r, f, n, vals[(r, f, n)]) for r, f, n in keys), sm, absent)
    return out


def read_features(path, missing: str = "drop") -> CohortMatrix:
    """Read a features CSV (plus sidecar) into a cohort table."""
    vectors = read_vectors(path)
    meta = json.loads(sidecar_path(path).read_text())
    rois = list(meta.get("rois", [])) or None
    columns = schema(rois) if rois else None
    return cohort_from_vectors(vectors, missing=missing, columns=columns)
