"""Feature-conditioned tumour synthesis and tumour removal.

The generator is an explicit forward model: a star-convex blob whose radius is
a truncated Fourier series in the polar angle, split into a necrotic core
(label 1) and an enhancing rim (label 4), textured with blurred Gaussian noise.
Synthesis searches the blob parameters by simulated annealing so that the
features extracted from the rendered tumour match a target. Removal replaces a
masked region by the harmonic extension of its boundary plus matched noise.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy import ndimage

from .features import (DEFAULT_ROIS, FAMILY_FEATURES, FEATURE_FAMILY, FeatureVector, RoiConfig,
                       extract_features, roi_features)
from .firstorder import DiscretizationConfig
from .grid import GridGeometry, ImageGrid, LabelGrid, check_same_geometry
from .masks import BinaryMask, MaskError, ROI_WHOLE, circular_mask, mask_from_labels

log = logging.getLogger(__name__)

N_MODES = 6
_THETA_CHECK = np.linspace(0.0, 2.0 * np.pi, 720, endpoint=False)
_MAX_SMOOTH = 3


class SynthesisError(ValueError):
    pass


# ------------------------------------------------------------ background fill

def harmonic_fill(values: np.ndarray, mask: np.ndarray, omega: float = 1.9, tol: float = 1e-10,
                  max_iter: int = 10_000) -> tuple[np.ndarray, int, float]:
    """Solve the discrete Laplace equation inside ``mask`` by red-black SOR.

    Pixels outside ``mask`` are Dirichlet data. Masked pixels on the image edge
    see a reflected (zero-flux) neighbour. Iteration stops once the largest
    five-point residual is at most ``tol`` times the range of the boundary
    values.

    Returns
    -------
    filled : ndarray
    iterations : int
    residual : float
        Final maximum absolute residual.
    """
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise MaskError("fill mask is empty")
    if mask.all():
        raise MaskError("fill mask covers the whole image; no boundary values")
    u_full = np.array(values, dtype=np.float64)
    h, w = mask.shape
    rows, cols = np.nonzero(mask)
    r0, r1 = max(rows.min() - 1, 0), min(rows.max() + 2, h)
    c0, c1 = max(cols.min() - 1, 0), min(cols.max() + 2, w)
    u = u_full[r0:r1, c0:c1].copy()
    m = mask[r0:r1, c0:c1]
    at_top, at_bottom, at_left, at_right = r0 == 0, r1 == h, c0 == 0, c1 == w
    ring = ndimage.binary_dilation(m, structure=ndimage.generate_binary_structure(2, 1)) & ~m
    boundary = u[ring]
    span = float(boundary.max() - boundary.min())
    u[m] = boundary.mean()
    rr, cc = np.indices(u.shape)
    colors = [m & ((rr + cc) % 2 == k) for k in (0, 1)]

    def neighbour_sum(a):
        s = np.zeros_like(a)
        s[1:, :] += a[:-1, :]
        s[:-1, :] += a[1:, :]
        s[:, 1:] += a[:, :-1]
        s[:, :-1] += a[:, 1:]
        # mirror across the image border; other window edges hold no masked pixels
        if at_top:
            s[0, :] += a[0, :]
        if at_bottom:
            s[-1, :] += a[-1, :]
        if at_left:
            s[:, 0] += a[:, 0]
        if at_right:
            s[:, -1] += a[:, -1]
        return s

    target = tol * span
    residual = 0.0
    it = 0
    for it in range(1, max_iter + 1):
        for sel in colors:
            s = neighbour_sum(u)
            u[sel] += omega * (0.25 * s[sel] - u[sel])
        residual = float(np.max(np.abs(neighbour_sum(u)[m] - 4.0 * u[m])))
        if residual <= target:
            break
    else:
        log.warning("harmonic fill stopped at %d iterations, residual %.3g", max_iter, residual)
    out = u_full.copy()
    out[r0:r1, c0:c1][m] = u[m]
    return out, it, residual


def boundary_ring(mask: np.ndarray, width: int = 2) -> np.ndarray:
    """Pixels within ``width`` (chessboard distance) outside ``mask``."""
    grown = ndimage.binary_dilation(mask, structure=np.ones((3, 3), bool), iterations=width)
    return grown & ~mask


def background_fill(image: ImageGrid, mask: BinaryMask, seed: int = 0, noise: bool = True,
                    omega: float = 1.9, tol: float = 1e-10, max_iter: int = 10_000) -> ImageGrid:
    """Remove whatever ``mask`` covers: harmonic fill plus boundary-matched noise.

    The added Gaussian noise has the sample standard deviation of the 2-pixel
    ring just outside the mask. Pixels outside the mask are returned unchanged.
    """
    check_same_geometry(image, mask)
    bits = mask.bits
    filled, _, _ = harmonic_fill(image.intensities, bits, omega=omega, tol=tol, max_iter=max_iter)
    if noise:
        ring_vals = image.intensities[boundary_ring(bits)]
        std = float(np.std(ring_vals, ddof=1)) if ring_vals.size > 1 else 0.0
        if std > 0:
            rng = np.random.default_rng(seed)
            filled[bits] += rng.normal(0.0, std, size=int(bits.sum()))
    out = np.where(bits, filled, image.intensities)
    return ImageGrid(image.geometry, out)


# ---------------------------------------------------------------- forward model

@dataclass(frozen=True)
class BlobParams:
    center: tuple
    r0: float
    a: tuple = (0.0,) * N_MODES
    b: tuple = (0.0,) * N_MODES
    core_ratio: float = 0.5
    mu_ncr: float = 300.0
    mu_et: float = 700.0
    sigma_tex: float = 30.0
    smooth_px: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(v) for v in self.center))
        object.__setattr__(self, "a", tuple(float(v) for v in self.a))
        object.__setattr__(self, "b", tuple(float(v) for v in self.b))
        if len(self.a) != N_MODES or len(self.b) != N_MODES:
            raise SynthesisError(f"need {N_MODES} Fourier coefficients per family")

    def validate(self) -> None:
        if not self.r0 > 0:
            raise SynthesisError("r0 must be positive")
        if not 0.05 < self.core_ratio < 0.95:
            raise SynthesisError("core_ratio must lie in (0.05, 0.95)")
        if self.sigma_tex < 0 or self.smooth_px < 0:
            raise SynthesisError("sigma_tex and smooth_px must be non-negative")
        if np.min(self.radius(_THETA_CHECK)) <= 0:
            raise SynthesisError("blob radius is not positive for every angle")

    def radius(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=np.float64)
        k = np.arange(1, N_MODES + 1)
        mod = np.cos(np.multiply.outer(theta, k)) @ np.array(self.a) \
            + np.sin(np.multiply.outer(theta, k)) @ np.array(self.b)
        return self.r0 * (1.0 + mod)

    def extent(self) -> float:
        """Largest radius over the angle check grid."""
        return float(np.max(self.radius(_THETA_CHECK)))

    def to_vector(self) -> np.ndarray:
        return np.array([*self.center, self.r0, *self.a, *self.b, self.core_ratio, self.mu_ncr,
                         self.mu_et, self.sigma_tex, self.smooth_px], dtype=np.float64)

    @classmethod
    def from_vector(cls, v) -> "BlobParams":
        v = [float(x) for x in v]
        n = N_MODES
        return cls((v[0], v[1]), v[2], tuple(v[3:3 + n]), tuple(v[3 + n:3 + 2 * n]), *v[3 + 2 * n:])

    def to_dict(self) -> dict:
        d = asdict(self)
        d["center"] = list(self.center)
        d["a"], d["b"] = list(self.a), list(self.b)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "BlobParams":
        return cls(**{**d, "center": tuple(d["center"]), "a": tuple(d["a"]), "b": tuple(d["b"])})


PARAM_NAMES = ("cx", "cy", "r0", *(f"a{k}" for k in range(1, N_MODES + 1)),
               *(f"b{k}" for k in range(1, N_MODES + 1)), "core_ratio", "mu_ncr", "mu_et",
               "sigma_tex", "smooth_px")


def _blob_labels(params: BlobParams, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    dx = x - params.center[0]
    dy = y - params.center[1]
    d = np.hypot(dx, dy)
    with np.errstate(invalid="ignore", divide="ignore"):
        e = np.where(d > 0, (dx + 1j * dy) / np.where(d > 0, d, 1.0), 1.0 + 0j)
    coef = np.array(params.a) - 1j * np.array(params.b)
    acc = np.zeros(d.shape, dtype=np.complex128)
    # Horner in e: sum_k coef_k e^k
    for ck in coef[::-1]:
        acc = (acc + ck) * e
    r = params.r0 * (1.0 + acc.real)
    labels = np.zeros(d.shape, dtype=np.uint8)
    labels[d < r] = 4
    labels[d < params.core_ratio * r] = 1
    return labels


def _texture(params: BlobParams, labels: np.ndarray, noise: np.ndarray) -> np.ndarray:
    field_ = np.where(labels == 1, params.mu_ncr, params.mu_et) + params.sigma_tex * noise
    kernel = box_kernel(params.smooth_px)
    if kernel.size > 1:
        for axis in (0, 1):
            field_ = ndimage.correlate1d(field_, kernel, axis=axis, mode="nearest")
    return field_


def box_kernel(radius: float) -> np.ndarray:
    """Normalized 1D box of half-width ``radius`` pixels.

    Fractional radii weight the two outermost taps by the fractional part, so
    the blur varies continuously with ``radius``; integer radii give the plain
    ``2 * radius + 1`` box.
    """
    whole = int(math.floor(radius))
    frac = radius - whole
    if frac > 0:
        w = np.ones(2 * whole + 3)
        w[0] = w[-1] = frac
    else:
        w = np.ones(2 * whole + 1)
    return w / w.sum()


def render_blob(params: BlobParams, geometry: GridGeometry, background: ImageGrid,
                seed: int = 0) -> tuple[ImageGrid, LabelGrid]:
    """Render a tumour over ``background``.

    Noise is drawn from ``numpy.random.default_rng(seed)`` as one standard
    normal field over the whole grid. The tumour replaces the background only
    on its own pixels.
    """
    if background.geometry != geometry:
        raise SynthesisError("background geometry does not match")
    params.validate()
    ext = params.extent()
    cx, cy = params.center
    if (cx - ext < 0 or cy - ext < 0 or cx + ext > (geometry.width - 1) * geometry.spacing_x
            or cy + ext > (geometry.height - 1) * geometry.spacing_y):
        raise SynthesisError("blob does not fit inside the grid")
    x, y = geometry.coordinates()
    labels = _blob_labels(params, x, y)
    if not labels.any():
        raise SynthesisError("blob covers no pixel")
    noise = np.random.default_rng(seed).standard_normal(geometry.shape)
    tex = _texture(params, labels, noise)
    img = np.where(labels > 0, tex, background.intensities)
    return ImageGrid(geometry, img), LabelGrid(geometry, labels)


# -------------------------------------------------------------------- targets

DEFAULT_FAMILY_WEIGHTS = {"shape": 1.0, "firstorder": 1.0, "glcm": 0.25, "glszm": 0.25}


@dataclass(frozen=True)
class Target:
    roi: str
    feature: str
    value: float
    weight: float = 1.0
    scale: float = 1.0

    @property
    def family(self) -> str:
        return FEATURE_FAMILY[self.feature]


@dataclass(frozen=True)
class TargetSpec:
    targets: tuple
    mask_diameter: float

    def __post_init__(self):
        ts = tuple(t if isinstance(t, Target) else Target(**t) for t in self.targets)
        object.__setattr__(self, "targets", ts)
        if not self.mask_diameter > 0:
            raise SynthesisError("mask_diameter must be positive")
        for t in ts:
            if t.feature not in FEATURE_FAMILY:
                raise SynthesisError(f"unknown feature {t.feature!r}")
            if not (t.weight > 0 and t.scale > 0):
                raise SynthesisError(f"target {t.roi}/{t.feature} needs positive weight and scale")
        if not ts:
            raise SynthesisError("target set is empty")

    def get(self, roi: str, feature: str) -> Target | None:
        for t in self.targets:
            if t.roi == roi and t.feature == feature:
                return t
        return None

    def to_json(self) -> str:
        return json.dumps({"mask_diameter_mm": self.mask_diameter,
                           "targets": [{"roi": t.roi, "feature": t.feature, "value": t.value,
                                        "weight": t.weight, "scale": t.scale} for t in self.targets]},
                          indent=1)

    @classmethod
    def from_json(cls, text: str) -> "TargetSpec":
        d = json.loads(text)
        try:
            targets = [Target(t["roi"], t["feature"], float(t["value"]), float(t.get("weight", 1.0)),
                              float(t.get("scale", 1.0))) for t in d["targets"]]
            return cls(tuple(targets), float(d["mask_diameter_mm"]))
        except (KeyError, TypeError) as exc:
            raise SynthesisError(f"malformed target spec: {exc}") from exc


# Ratios in (0, 1] whose useful resolution is far below their magnitude.
ABSOLUTE_SCALES = {"sphericity": 0.05, "elongation": 0.05}

# Compact target: geometry of the whole tumour and the core, plus region contrast.
CONDITIONING_FEATURES = (
    *(("ROI2", f) for f in FAMILY_FEATURES["shape"]),
    ("ROI1", "pixel_surface"), ("ROI1", "sphericity"), ("ROI1", "mean"), ("ROI1", "variance"),
    ("ROI2", "mean"), ("ROI2", "variance"),
)


def targets_from_features(fv: FeatureVector, features: Sequence[tuple[str, str]] | None = None,
                          scales: dict | None = None, weights: dict | None = None,
                          mask_diameter: float | None = None, diameter_margin: float = 1.25,
                          diameter_roi: str = "ROI2") -> TargetSpec:
    """Build a target from an extracted feature vector.

    Parameters
    ----------
    features : sequence of (roi, feature), optional
        Subset to target; all entries of ``fv`` by default.
    scales : dict, optional
        ``{(roi, feature): scale}``, e.g. cohort standard deviations. Missing
        entries use :data:`ABSOLUTE_SCALES` for the bounded shape ratios and
        ``max(|value|, 1)`` otherwise.
    weights : dict, optional
        Per-family weights; defaults to :data:`DEFAULT_FAMILY_WEIGHTS`.
    mask_diameter : float, optional
        Conditioning circle diameter. Defaults to ``diameter_margin`` times the
        maximum diameter of ``diameter_roi``'s shape region.
    """
    weights = {**DEFAULT_FAMILY_WEIGHTS, **(weights or {})}
    scales = scales or {}
    values = fv.as_dict()
    keys = list(features) if features is not None else [(r, f) for r, _fam, f in fv.keys()]
    targets = []
    for roi, feat in keys:
        v = values[(roi, feat)]
        s = scales.get((roi, feat))
        if s is None or not s > 0:
            s = ABSOLUTE_SCALES.get(feat, max(abs(v), 1.0))
        targets.append(Target(roi, feat, v, weights[FEATURE_FAMILY[feat]], float(s)))
    if mask_diameter is None:
        mask_diameter = diameter_margin * values[(diameter_roi, "maximum_diameter")]
    return TargetSpec(tuple(targets), float(mask_diameter))


# ------------------------------------------------------------------ annealing

@dataclass(frozen=True, eq=False)
class SynthesisResult:
    image: ImageGrid
    labels: LabelGrid
    achieved: FeatureVector
    objective: float
    evaluations: int
    seed: int
    params: BlobParams | None = None
    initial_objective: float | None = None
    trace: tuple = ()
    metadata: dict = field(default_factory=dict)


class _Problem:
    """Objective evaluation restricted to the conditioning circle's bounding window."""

    def __init__(self, background: ImageGrid, center, target: TargetSpec, seed: int,
                 rois: Sequence[RoiConfig], disc: DiscretizationConfig):
        g = background.geometry
        self.geometry = g
        self.target = target
        self.disc = disc
        self.circle = circular_mask(g, center, target.mask_diameter)
        rows, cols = np.nonzero(self.circle.bits)
        m = _MAX_SMOOTH + 1
        self.r0, self.r1 = max(rows.min() - m, 0), min(rows.max() + m + 1, g.height)
        self.c0, self.c1 = max(cols.min() - m, 0), min(cols.max() + m + 1, g.width)
        win = (slice(self.r0, self.r1), slice(self.c0, self.c1))
        self.window = win
        self.wgeom = GridGeometry(self.c1 - self.c0, self.r1 - self.r0, g.spacing_x, g.spacing_y)
        x, y = g.coordinates()
        self.x, self.y = x[win], y[win]
        self.bg = background.intensities[win]
        self.noise = np.random.default_rng(seed).standard_normal(g.shape)[win]
        self.outside = ~self.circle.bits[win]
        by_roi: dict[str, set] = {}
        for t in target.targets:
            by_roi.setdefault(t.roi, set()).add(t.family)
        known = {rc.name: rc for rc in rois}
        missing = set(by_roi) - set(known)
        if missing:
            raise SynthesisError(f"targets reference unknown ROI(s) {sorted(missing)}")
        self.plan = [(known[r], fams) for r, fams in by_roi.items()]
        self.tvals = np.array([t.value for t in target.targets])
        self.tw = np.array([t.weight for t in target.targets])
        self.ts = np.array([t.scale for t in target.targets])

    def render(self, p: BlobParams):
        labels = _blob_labels(p, self.x, self.y)
        if not labels.any() or labels[self.outside].any():
            return None
        img = np.where(labels > 0, _texture(p, labels, self.noise), self.bg)
        return img, labels

    def features(self, img: np.ndarray, labels: np.ndarray) -> dict | None:
        image = ImageGrid(self.wgeom, img)
        lab = LabelGrid(self.wgeom, labels)
        out = {}
        try:
            for rc, fams in self.plan:
                for fam, vals in roi_features(image, lab, rc, self.disc, fams).items():
                    for k, v in vals.items():
                        out[(rc.name, k)] = v
        except MaskError:
            return None
        return out

    def objective(self, p: BlobParams) -> float:
        if not _feasible(p):
            return math.inf
        rendered = self.render(p)
        if rendered is None:
            return math.inf
        f = self.features(*rendered)
        if f is None:
            return math.inf
        achieved = np.array([f[(t.roi, t.feature)] for t in self.target.targets])
        z = (achieved - self.tvals) / self.ts
        val = float(np.sum(self.tw * z * z))
        return val if math.isfinite(val) else math.inf


def _feasible(p: BlobParams) -> bool:
    if not (p.r0 > 0 and 0.05 < p.core_ratio < 0.95 and p.sigma_tex >= 0
            and 0 <= p.smooth_px <= _MAX_SMOOTH):
        return False
    return bool(np.min(p.radius(_THETA_CHECK)) > 0)


def initial_guess(background: ImageGrid, center, target: TargetSpec) -> BlobParams:
    """Starting blob read off the targets where possible."""
    g = background.geometry
    radius_cap = 0.45 * target.mask_diameter

    def tv(roi, feat):
        t = target.get(roi, feat)
        return None if t is None else t.value

    area = tv("ROI2", "pixel_surface") or tv("ROI2", "mesh_surface")
    r0 = math.sqrt(area / math.pi) if area else 0.35 * target.mask_diameter
    r0 = min(r0, radius_cap)
    core_area = tv("ROI1", "pixel_surface") or tv("ROI1", "mesh_surface")
    core_ratio = math.sqrt(core_area / area) if (core_area and area) else 0.5
    core_ratio = min(max(core_ratio, 0.15), 0.85)

    circle = circular_mask(g, center, target.mask_diameter)
    bg_vals = background.intensities[circle.bits]
    bg_mean, bg_std = float(bg_vals.mean()), float(bg_vals.std())
    mu_et = tv("ROI2", "mean")
    mu_et = bg_mean + 3.0 * max(bg_std, 1.0) if mu_et is None else mu_et
    mu_ncr = tv("ROI1", "mean")
    mu_ncr = bg_mean - 3.0 * max(bg_std, 1.0) if mu_ncr is None else mu_ncr
    var_et = tv("ROI2", "variance")
    sigma = math.sqrt(var_et) if var_et else max(bg_std, 1.0)
    return BlobParams(tuple(center), r0, core_ratio=core_ratio, mu_ncr=mu_ncr, mu_et=mu_et,
                      sigma_tex=sigma, smooth_px=0.0)


_CORE = 3 + 2 * N_MODES


def _to_search(p: BlobParams) -> np.ndarray:
    # search the core radius directly so outer and inner areas move independently;
    # the first harmonic shifts the blob by about r0 * (a1, b1), so the search
    # centre is that shifted centroid and a1, b1 then only reshape
    v = p.to_vector()
    v[_CORE] = p.core_ratio * p.r0
    v[0] += p.r0 * p.a[0]
    v[1] += p.r0 * p.b[0]
    return v


def _from_search(v: np.ndarray) -> BlobParams:
    w = v.copy()
    w[_CORE] = v[_CORE] / v[2] if v[2] > 0 else 0.0
    w[0] -= v[2] * v[3]
    w[1] -= v[2] * v[3 + N_MODES]
    return BlobParams.from_vector(w)


def _step_scales(p0: BlobParams, target: TargetSpec) -> np.ndarray:
    radius = 0.5 * target.mask_diameter
    i_scale = max(p0.sigma_tex, abs(p0.mu_et - p0.mu_ncr) * 0.05, 1.0)
    fourier = 0.03 / np.arange(1, N_MODES + 1)
    return np.array([0.05 * radius, 0.05 * radius, 0.04 * p0.r0, *fourier, *fourier,
                     0.03 * p0.r0, 0.1 * i_scale, 0.1 * i_scale, 0.1 * i_scale, 0.35])


def synthesize(background: ImageGrid, mask_center, target: TargetSpec, seed: int = 0,
               budget: int = 5000, rois: Sequence[RoiConfig] = DEFAULT_ROIS,
               disc: DiscretizationConfig = DiscretizationConfig(),
               initial: BlobParams | None = None, cooling: float = 0.995,
               patience: int = 500) -> SynthesisResult:
    """Search blob parameters whose rendering matches ``target``.

    Minimizes ``sum_f w_f ((f(render(p)) - target_f) / scale_f) ** 2`` by
    simulated annealing with geometric cooling from the initial objective.
    Each proposal perturbs a random subset of parameters with Gaussian steps;
    step sizes adapt to the acceptance rate. Blobs leaving the conditioning
    circle are rejected. ``budget`` counts objective evaluations, including the
    starting point.
    """
    if budget < 1:
        raise SynthesisError("budget must be >= 1")
    problem = _Problem(background, tuple(mask_center), target, seed, rois, disc)
    p0 = initial if initial is not None else initial_guess(background, mask_center, target)
    cur = _to_search(p0)
    f_cur = problem.objective(p0)
    if not math.isfinite(f_cur):
        # shrink until the starting blob fits inside the circle
        for _ in range(40):
            p0 = replace(p0, r0=p0.r0 * 0.9)
            f_cur = problem.objective(p0)
            if math.isfinite(f_cur):
                break
        else:
            raise SynthesisError("no feasible starting blob inside the conditioning circle")
        cur = _to_search(p0)
    f_init = f_cur
    best, f_best = cur.copy(), f_cur
    trace = [f_best]
    rng = np.random.default_rng([int(seed), 0x5EED])
    steps = _step_scales(p0, target)
    n = cur.size
    t0 = f_init if f_init > 0 else 1.0
    temp = t0
    steps0 = steps.copy()
    last_gain = 0
    for k in range(1, budget):
        if k - last_gain > patience:
            # stalled: return to the best point with fresh step sizes
            cur, f_cur = best.copy(), f_best
            steps = steps0 * 0.5
            last_gain = k
        n_move = 1 + rng.binomial(n - 1, 2.0 / n)
        idx = rng.choice(n, size=n_move, replace=False)
        prop = cur.copy()
        prop[idx] += rng.standard_normal(n_move) * steps[idx]
        f_prop = problem.objective(_from_search(prop))
        if f_prop <= f_cur or (math.isfinite(f_prop) and rng.random() < math.exp(-(f_prop - f_cur) / temp)):
            cur, f_cur = prop, f_prop
            steps[idx] *= 1.1
            if f_cur < f_best:
                if f_cur < f_best * (1 - 1e-3):
                    last_gain = k
                best, f_best = cur.copy(), f_cur
        else:
            steps[idx] *= 0.97
        temp *= cooling
        trace.append(f_best)
        if f_best == 0.0:
            break
    evaluations = len(trace)
    best_p = _from_search(best)
    image, labels = _compose(background, problem, best_p)
    achieved = extract_features(image, labels, rois, disc, seed=seed)
    return SynthesisResult(image, labels, achieved, f_best, evaluations, int(seed), best_p, f_init,
                           tuple(trace), {"mask_center": list(map(float, mask_center)),
                                          "mask_diameter": target.mask_diameter})


def _compose(background: ImageGrid, problem: _Problem, p: BlobParams) -> tuple[ImageGrid, LabelGrid]:
    img_w, lab_w = problem.render(p)
    img = background.intensities.copy()
    lab = np.zeros(background.geometry.shape, dtype=np.uint8)
    img[problem.window] = img_w
    lab[problem.window] = lab_w
    return ImageGrid(background.geometry, img), LabelGrid(background.geometry, lab)


# ------------------------------------------------------------------- phantoms

def make_phantom(seed: int, geometry: GridGeometry = GridGeometry(80, 80)) -> tuple[ImageGrid, LabelGrid]:
    """Synthetic slice with one planted tumour (labels 1/4) and an edema halo (label 2).

    The tissue background is a sum of eight low-frequency cosines plus white
    noise; the tumour parameters are drawn from ``seed``.
    """
    if geometry.width < 64 or geometry.height < 64:
        raise SynthesisError("phantoms need at least 64 x 64 pixels")
    rng = np.random.default_rng([int(seed), 0xFA47])
    x, y = geometry.coordinates()
    fov_x = geometry.width * geometry.spacing_x
    fov_y = geometry.height * geometry.spacing_y
    bg = np.full(geometry.shape, 400.0)
    for _ in range(8):
        fx, fy = rng.uniform(-2.5, 2.5, size=2)
        bg += rng.uniform(8.0, 30.0) * np.cos(2 * np.pi * (fx * x / fov_x + fy * y / fov_y)
                                              + rng.uniform(0, 2 * np.pi))
    bg += rng.normal(0.0, 8.0, size=geometry.shape)

    size = min(fov_x, fov_y)
    spacing = max(geometry.spacing_x, geometry.spacing_y)
    for _ in range(100):
        r0 = rng.uniform(0.09, 0.17) * size
        k = np.arange(1, N_MODES + 1)
        a = rng.normal(0.0, 0.09, N_MODES) / k
        b = rng.normal(0.0, 0.09, N_MODES) / k
        params = BlobParams(
            center=(fov_x / 2 + rng.uniform(-0.12, 0.12) * fov_x, fov_y / 2 + rng.uniform(-0.12, 0.12) * fov_y),
            r0=r0, a=tuple(a), b=tuple(b), core_ratio=rng.uniform(0.35, 0.65),
            mu_ncr=rng.uniform(250.0, 350.0), mu_et=rng.uniform(600.0, 800.0),
            sigma_tex=rng.uniform(15.0, 45.0), smooth_px=float(rng.integers(0, 3)))
        if _feasible(params) and np.min(params.radius(_THETA_CHECK)) * params.core_ratio > 2.5 * spacing \
                and params.extent() * 1.45 < 0.5 * size:
            break
    image, labels = render_blob(params, geometry, ImageGrid(geometry, bg), seed=int(rng.integers(2**31)))
    # edema: a band around the tumour, slightly hypointense
    dx, dy = x - params.center[0], y - params.center[1]
    d = np.hypot(dx, dy)
    theta = np.arctan2(dy, dx)
    halo = (d < 1.4 * params.radius(theta)) & (labels.labels == 0)
    lab = labels.labels.copy()
    lab[halo] = 2
    img = image.intensities.copy()
    img[halo] -= 25.0
    return ImageGrid(geometry, img), LabelGrid(geometry, lab)


def phantom_params(seed: int, geometry: GridGeometry = GridGeometry(80, 80)) -> dict:
    """Ground-truth description of :func:`make_phantom` output (centre of the tumour)."""
    _, labels = make_phantom(seed, geometry)
    rows, cols = np.nonzero(np.isin(labels.labels, (1, 4)))
    return {"center": (float(cols.mean() * geometry.spacing_x), float(rows.mean() * geometry.spacing_y))}


# ------------------------------------------------------------------ replacement

def tumor_center(labels: LabelGrid, roi_labels=(1, 4)) -> tuple[float, float]:
    """Centroid (mm) of the tumour labels."""
    rows, cols = np.nonzero(np.isin(labels.labels, roi_labels))
    if rows.size == 0:
        raise SynthesisError("no tumour labels present")
    g = labels.geometry
    return float(cols.mean() * g.spacing_x), float(rows.mean() * g.spacing_y)


def remove_tumor(image: ImageGrid, labels: LabelGrid, seed: int = 0, noise: bool = True) -> ImageGrid:
    """Background-fill the union of all tumour labels."""
    mask = mask_from_labels(labels, ROI_WHOLE)
    if mask.is_empty():
        raise SynthesisError("no tumour labels present")
    return background_fill(image, mask, seed=seed, noise=noise)


def replace_tumor(image: ImageGrid, labels: LabelGrid, new_center, target: TargetSpec | None,
                  seed: int = 0, budget: int = 5000, rois: Sequence[RoiConfig] = DEFAULT_ROIS,
                  disc: DiscretizationConfig = DiscretizationConfig(), noise: bool = True) -> SynthesisResult:
    """Remove the existing tumour, then synthesize a new one at ``new_center``.

    With ``target=None`` only the removal is performed.
    """
    check_same_geometry(image, labels)
    g = image.geometry
    cx, cy = new_center
    if not (0 <= cx <= (g.width - 1) * g.spacing_x and 0 <= cy <= (g.height - 1) * g.spacing_y):
        raise SynthesisError(f"new centre {new_center} lies outside the grid")
    filled = remove_tumor(image, labels, seed=seed, noise=noise)
    pipeline = ["background_fill(labels 1,2,4)"]
    if target is None:
        empty = LabelGrid(g, np.zeros(g.shape, dtype=np.uint8))
        return SynthesisResult(filled, empty, FeatureVector((), {}, ()), 0.0, 0, int(seed),
                               metadata={"pipeline": pipeline})
    result = synthesize(filled, new_center, target, seed=seed, budget=budget, rois=rois, disc=disc)
    pipeline.append("synthesize")
    return replace(result, metadata={**result.metadata, "pipeline": pipeline})


# ---------------------------------------------------------------- shape sweep

def shape_target(pixel_surface: float, sphericity: float, mask_diameter: float | None = None,
                 diameter_factor: float = 2.0, roi: str = "ROI2") -> TargetSpec:
    """Target only the area and sphericity of the whole tumour.

    The conditioning circle defaults to ``diameter_factor`` times the diameter
    of the disk with the requested area, leaving room for lobed outlines.
    """
    if not (pixel_surface > 0 and 0 < sphericity <= 1):
        raise SynthesisError("need pixel_surface > 0 and sphericity in (0, 1]")
    if mask_diameter is None:
        mask_diameter = diameter_factor * 2.0 * math.sqrt(pixel_surface / math.pi)
    return TargetSpec((Target(roi, "pixel_surface", float(pixel_surface), 1.0, float(pixel_surface)),
                       Target(roi, "sphericity", float(sphericity), 1.0, ABSOLUTE_SCALES["sphericity"])),
                      float(mask_diameter))


@dataclass(frozen=True)
class SweepCell:
    row: int
    col: int
    pixel_surface: float
    sphericity: float
    result: SynthesisResult | None
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.result is not None


def cell_seed(seed: int, row: int, col: int) -> int:
    """Seed of one sweep cell; depends only on its position, not on scheduling."""
    return int(np.random.SeedSequence([int(seed), int(row), int(col)]).generate_state(1)[0])


def _sweep_cell(job) -> SweepCell:
    background, center, row, col, surface, sph, seed, budget = job
    try:
        res = synthesize(background, center, shape_target(surface, sph),
                         seed=cell_seed(seed, row, col), budget=budget)
    except (SynthesisError, MaskError) as exc:
        return SweepCell(row, col, surface, sph, None, str(exc))
    return SweepCell(row, col, surface, sph, res)


def sweep(background: ImageGrid, center, surfaces: Sequence[float], sphericities: Sequence[float],
          seed: int = 0, budget: int = 3000, map_fn=map) -> list[SweepCell]:
    """Synthesize one tumour per (sphericity row, surface column) pair.

    Cells come back in row-major order. ``map_fn`` may be a process pool's
    ``map``; every cell has its own seed so the output does not depend on it.
    """
    if not surfaces or not sphericities:
        raise SynthesisError("both sweep axes need at least one value")
    for s in sphericities:
        if not 0 < s <= 1:
            raise SynthesisError(f"sphericity {s} outside (0, 1]")
    for a in surfaces:
        if not a > 0:
            raise SynthesisError(f"pixel surface {a} must be positive")
    jobs = [(background, tuple(center), i, j, float(a), float(s), int(seed), int(budget))
            for i, s in enumerate(sorted(sphericities)) for j, a in enumerate(sorted(surfaces))]
    return list(map_fn(_sweep_cell, jobs))
