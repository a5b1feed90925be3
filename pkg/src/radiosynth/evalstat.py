"""Similarity statistics between a real and a synthetic feature cohort.

Cells of the report are (ROI, feature family) pairs. In the default
``"flattened"`` pairing every (subject, feature) value of a cell, standardized
against the real cohort, is one paired sample; ``"per-feature"`` computes the
statistics per feature column and reports their mean.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .features import FAMILIES, CohortMatrix, FeatureError, standardize
from .grid import _atomic_write

FAMILY_LABELS = {"shape": "Shape", "firstorder": "Histogram", "glcm": "GLCM", "glszm": "GLSZM"}
SIGNIFICANCE = 1e-4


class StatError(ValueError):
    pass


def _vectors(u, v) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(u, dtype=np.float64).ravel()
    y = np.asarray(v, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise StatError(f"length mismatch: {x.size} vs {y.size}")
    if not (np.isfinite(x).all() and np.isfinite(y).all()):
        raise StatError("inputs must be finite")
    return x, y


def cosine(u, v) -> float:
    """Cosine of the angle between ``u`` and ``v``."""
    x, y = _vectors(u, v)
    nx, ny = np.linalg.norm(x), np.linalg.norm(y)
    if nx == 0 or ny == 0:
        raise StatError("cosine similarity is undefined for a zero vector")
    return float(np.clip(np.dot(x, y) / (nx * ny), -1.0, 1.0))


def t_pvalue(r: float, n: int) -> float:
    """Two-sided p-value of a correlation ``r`` from ``n`` pairs.

    Uses ``t = r sqrt((n - 2) / (1 - r^2))`` with ``n - 2`` degrees of freedom;
    the tail is the regularized incomplete beta ``I_{df/(df+t^2)}(df/2, 1/2)``.
    """
    if n < 3:
        raise StatError("a p-value needs n >= 3")
    df = n - 2
    r2 = min(r * r, 1.0)
    if r2 == 1.0:
        return 0.0
    t2 = r2 * df / (1.0 - r2)
    return float(min(max(special.betainc(0.5 * df, 0.5, df / (df + t2)), 0.0), 1.0))


def _correlation(x: np.ndarray, y: np.ndarray) -> float:
    dx, dy = x - x.mean(), y - y.mean()
    sx, sy = math.sqrt(float(np.dot(dx, dx))), math.sqrt(float(np.dot(dy, dy)))
    if sx == 0 or sy == 0:
        raise StatError("correlation is undefined for a constant vector")
    return float(np.clip(np.dot(dx, dy) / (sx * sy), -1.0, 1.0))


def pearson(u, v) -> tuple[float, float]:
    """Sample correlation and its two-sided t-test p-value."""
    x, y = _vectors(u, v)
    if x.size < 3:
        raise StatError("pearson needs at least 3 pairs")
    r = _correlation(x, y)
    return r, t_pvalue(r, x.size)


def rankdata(values) -> np.ndarray:
    """Ranks starting at 1; tied values share the average of their ranks."""
    x = np.asarray(values, dtype=np.float64).ravel()
    order = np.argsort(x, kind="stable")
    xs = x[order]
    # first index of each run of equal values
    starts = np.flatnonzero(np.r_[True, xs[1:] != xs[:-1]])
    ends = np.r_[starts[1:], xs.size]
    avg = 0.5 * (starts + ends - 1) + 1.0
    ranks = np.empty(x.size)
    ranks[order] = np.repeat(avg, ends - starts)
    return ranks


def spearman(u, v, permutations: int = 0, seed: int = 0) -> tuple[float, float]:
    """Rank correlation with a t-approximation or permutation p-value.

    Parameters
    ----------
    permutations : int
        With ``N > 0`` the p-value is ``(1 + #{|rho*| >= |rho|}) / (N + 1)``
        over ``N`` seeded shuffles of ``v``'s ranks.
    """
    x, y = _vectors(u, v)
    if x.size < 3:
        raise StatError("spearman needs at least 3 pairs")
    rx, ry = rankdata(x), rankdata(y)
    rho = _correlation(rx, ry)
    if permutations <= 0:
        return rho, t_pvalue(rho, x.size)
    rng = np.random.default_rng(seed)
    hits = 0
    for _ in range(int(permutations)):
        if abs(_correlation(rx, rng.permutation(ry))) >= abs(rho) - 1e-12:
            hits += 1
    return rho, (hits + 1) / (permutations + 1)


# --------------------------------------------------------------------- report

METRICS = ("cosine", "pearson", "spearman")


@dataclass(frozen=True)
class CellStats:
    roi: str
    family: str
    cosine: float
    pearson_r: float
    pearson_p: float
    spearman_rho: float
    spearman_p: float
    n: int


@dataclass(frozen=True)
class SimilarityReport:
    cells: tuple
    metadata: dict = field(default_factory=dict)

    def get(self, roi: str, family: str) -> CellStats:
        for c in self.cells:
            if c.roi == roi and c.family == family:
                return c
        raise KeyError((roi, family))

    def rows(self):
        """``(roi, family, metric, value, p, n)`` tuples; cosine has no p-value."""
        for c in self.cells:
            yield c.roi, c.family, "cosine", c.cosine, None, c.n
            yield c.roi, c.family, "pearson", c.pearson_r, c.pearson_p, c.n
            yield c.roi, c.family, "spearman", c.spearman_rho, c.spearman_p, c.n

    def to_csv(self) -> str:
        buf = io.StringIO(newline="")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("roi", "family", "metric", "value", "p", "n"))
        for roi, fam, metric, value, p, n in self.rows():
            w.writerow((roi, fam, metric, repr(float(value)), "" if p is None else repr(float(p)), n))
        return buf.getvalue()

    def to_text(self) -> str:
        """Aligned table, one row per metric and one column per (ROI, family)."""
        cols = [(c.roi, c.family) for c in self.cells]
        heads = [f"{r} {FAMILY_LABELS.get(f, f)}" for r, f in cols]
        width = max(12, *(len(h) + 1 for h in heads))
        lines = ["".ljust(22) + "".join(h.rjust(width) for h in heads)]
        for metric, label in (("cosine", "Cosine Similarity"), ("pearson", "Pearson Correlation"),
                              ("spearman", "Spearman Correlation")):
            out = []
            for c in self.cells:
                value, p = {"cosine": (c.cosine, None), "pearson": (c.pearson_r, c.pearson_p),
                            "spearman": (c.spearman_rho, c.spearman_p)}[metric]
                star = "*" if p is not None and p < SIGNIFICANCE else " "
                out.append(f"{value:.4f}{star}".rjust(width))
            lines.append(label.ljust(22) + "".join(out))
        lines.append(f"* p < {SIGNIFICANCE:g}; pairing: {self.metadata.get('pairing', '?')}")
        return "\n".join(lines) + "\n"

    def write(self, path) -> None:
        _atomic_write(path, self.to_csv().encode("utf-8"))


def _cell(roi, family, x, y, pairing):
    if pairing == "flattened":
        xf, yf = x.ravel(), y.ravel()
        r, rp = pearson(xf, yf)
        rho, sp = spearman(xf, yf)
        return CellStats(roi, family, cosine(xf, yf), r, rp, rho, sp, xf.size)
    # per-feature: statistics over subjects for each column, then averaged
    stats = []
    for k in range(x.shape[1]):
        try:
            stats.append((cosine(x[:, k], y[:, k]), *pearson(x[:, k], y[:, k]), *spearman(x[:, k], y[:, k])))
        except StatError:
            continue
    if not stats:
        raise StatError(f"no usable feature column in cell {roi}/{family}")
    s = np.array(stats)
    # the least significant column bounds the cell's p-value
    return CellStats(roi, family, float(s[:, 0].mean()), float(s[:, 1].mean()), float(s[:, 2].max()),
                     float(s[:, 3].mean()), float(s[:, 4].max()), x.shape[0])


def family_report(real: CohortMatrix, synth: CohortMatrix, pairing: str = "flattened",
                  rois=None, families=FAMILIES) -> SimilarityReport:
    """Compare two cohorts cell by cell.

    Both cohorts are z-scored with the real cohort's column means and standard
    deviations. Columns that are constant in the real cohort carry no scale and
    are left out; they are listed in the metadata.
    """
    if pairing not in ("flattened", "per-feature"):
        raise StatError("pairing must be 'flattened' or 'per-feature'")
    if real.columns != synth.columns:
        raise FeatureError("real and synthetic cohorts have different feature schemas")
    real, synth = real.sorted_by_subject(), synth.sorted_by_subject()
    if real.subjects != synth.subjects:
        raise FeatureError("real and synthetic cohorts have different subjects")
    zr = standardize(real)
    zs = standardize(synth, reference=zr.transform)
    skipped = {tuple(c) for c in zr.transform["zero_variance"]}
    if rois is None:
        rois = list(dict.fromkeys(roi for roi, _f, _n in real.columns))
    cells = []
    for roi in rois:
        for fam in families:
            idx = [k for k, c in enumerate(real.columns) if c[0] == roi and c[1] == fam and c not in skipped]
            if not idx:
                continue
            cells.append(_cell(roi, fam, zr.values[:, idx], zs.values[:, idx], pairing))
    meta = {"pairing": pairing, "standardized_against": "real",
            "excluded_constant_columns": sorted(list(c) for c in skipped),
            "subjects": len(real.subjects)}
    return SimilarityReport(tuple(cells), meta)
