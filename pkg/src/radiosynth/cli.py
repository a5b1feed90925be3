"""Command-line batch interface.

Every command writes into an output directory and archives the effective run
configuration there as ``run_config.json``. Passing that file back with
``--config`` reproduces the run. Exit codes: 0 success, 1 usage or input
error, 2 empty result.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .evalstat import StatError, family_report
from .features import DEFAULT_ROIS, FeatureError, RoiConfig, extract_features, read_features, \
    write_features
from .firstorder import DiscretizationConfig
from .grid import GridError, GridGeometry, ImageGrid, _atomic_write, load_grid, save_grid, save_pgm
from .masks import MaskError, RoiSpec
from .synth import SynthesisError, TargetSpec, make_phantom, remove_tumor, sweep, synthesize

log = logging.getLogger("radiosynth")

EXIT_OK, EXIT_INPUT, EXIT_EMPTY = 0, 1, 2
MANIFEST_HEADER = ("subject", "image_path", "labels_path")
CONFIG_NAME = "run_config.json"


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    """Effective settings of one command run.

    Command-specific inputs live in ``inputs``. ``jobs`` is not archived: it
    only changes wall time.
    """
    command: str = ""
    out: str | None = None
    discretization: dict = field(default_factory=lambda: DiscretizationConfig().to_dict())
    rois: list = field(default_factory=lambda: [r.to_dict() for r in DEFAULT_ROIS])
    budget: int | None = None
    seed: int = 0
    jobs: int = 1
    slice_index: int | None = None
    inputs: dict = field(default_factory=dict)

    def disc(self) -> DiscretizationConfig:
        return DiscretizationConfig(**self.discretization)

    def roi_configs(self) -> tuple[RoiConfig, ...]:
        return tuple(RoiConfig.from_dict(r) for r in self.rois)

    def to_json(self) -> str:
        d = asdict(self)
        d.pop("jobs")
        return json.dumps(d, indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {path}: {exc}") from exc
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)


# ------------------------------------------------------------------- helpers

@contextmanager
def _mapper(jobs: int):
    if jobs <= 1:
        yield map
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            yield pool.map


def _derived_seed(seed: int, *keys: int) -> int:
    return int(np.random.SeedSequence([int(seed), *map(int, keys)]).generate_state(1)[0])


def _parse_roi(text: str) -> dict:
    # NAME=L[,L...][/SHAPE_L[,...]]
    try:
        name, rest = text.split("=", 1)
        labels, _, shape = rest.partition("/")
        spec = RoiConfig(RoiSpec(name, frozenset(int(v) for v in labels.split(","))),
                         frozenset(int(v) for v in shape.split(",")) if shape else None)
    except (ValueError, MaskError) as exc:
        raise argparse.ArgumentTypeError(f"bad ROI {text!r}: {exc}") from exc
    return spec.to_dict()


def read_manifest(path) -> list[tuple[str, Path, Path]]:
    """Rows of a ``subject,image_path,labels_path`` manifest; relative paths
    are resolved against the manifest's directory."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise UsageError(f"cannot read manifest {path}: {exc}") from exc
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None or tuple(h.strip() for h in header) != MANIFEST_HEADER:
        raise UsageError(f"manifest header must be {','.join(MANIFEST_HEADER)}")
    rows = []
    for k, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != 3:
            raise UsageError(f"manifest line {k}: expected 3 fields")
        subject, img, lab = (c.strip() for c in row)
        rows.append((subject, path.parent / img, path.parent / lab))
    if len({r[0] for r in rows}) != len(rows):
        raise UsageError("manifest has duplicate subject ids")
    return rows


def write_manifest(path, rows) -> None:
    buf = io.StringIO(newline="")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(MANIFEST_HEADER)
    w.writerows(rows)
    _atomic_write(path, buf.getvalue().encode("utf-8"))


def _json_bytes(obj) -> bytes:
    return (json.dumps(obj, indent=1, sort_keys=True) + "\n").encode("utf-8")


# ------------------------------------------------------------------ commands

def _extract_one(job):
    subject, img_path, lab_path, slice_index, rois, disc = job
    try:
        image = load_grid(img_path, "image", slice_index)
        labels = load_grid(lab_path, "labels", slice_index)
        fv = extract_features(image, labels, rois, disc, source=str(subject))
    except (OSError, GridError, MaskError, FeatureError, ValueError) as exc:
        return subject, None, str(exc)
    if fv.flagged:
        return subject, fv, f"absent ROIs: {', '.join(fv.absent)}"
    return subject, fv, None


def cmd_extract(cfg: RunConfig, out: Path) -> int:
    inp = cfg.inputs
    if inp.get("manifest"):
        rows = read_manifest(inp["manifest"])
    elif inp.get("image") and inp.get("labels"):
        rows = [(inp.get("subject") or Path(inp["image"]).stem, Path(inp["image"]), Path(inp["labels"]))]
    else:
        raise UsageError("extract needs --manifest or both --image and --labels")
    rois, disc = cfg.roi_configs(), cfg.disc()
    jobs = [(s, str(i), str(l), cfg.slice_index, rois, disc) for s, i, l in rows]
    vectors, failures = {}, {}
    with _mapper(cfg.jobs) as mp:
        for subject, fv, err in mp(_extract_one, jobs):
            if err:
                failures[subject] = err
                log.warning("%s: %s", subject, err)
            if fv is not None:
                vectors[subject] = fv
    write_features(out / "features.csv", vectors, {"failures": failures})
    ok = sum(1 for s in vectors if s not in failures)
    log.info("extracted %d subjects (%d flagged or failed)", len(vectors), len(failures))
    return EXIT_OK if ok >= 1 else EXIT_EMPTY


def _grid_center(geometry: GridGeometry) -> tuple[float, float]:
    return ((geometry.width - 1) * geometry.spacing_x / 2, (geometry.height - 1) * geometry.spacing_y / 2)


def cmd_synthesize(cfg: RunConfig, out: Path) -> int:
    inp = cfg.inputs
    if not inp.get("background") or not inp.get("target"):
        raise UsageError("synthesize needs --background and --target")
    background = load_grid(inp["background"], "image", cfg.slice_index)
    try:
        target = TargetSpec.from_json(Path(inp["target"]).read_text())
    except (OSError, KeyError, TypeError, json.JSONDecodeError) as exc:
        raise UsageError(f"bad target file: {exc}") from exc
    center = tuple(inp["center"]) if inp.get("center") else _grid_center(background.geometry)
    budget = cfg.budget if cfg.budget is not None else 5000
    res = synthesize(background, center, target, seed=cfg.seed, budget=budget,
                     rois=cfg.roi_configs(), disc=cfg.disc())
    save_grid(res.image, out / "image.flatgrid")
    save_grid(res.labels, out / "labels.flatgrid")
    write_features(out / "achieved.csv", {"synthetic": res.achieved})
    _atomic_write(out / "trace.json", _json_bytes({
        "objective": res.objective, "initial_objective": res.initial_objective,
        "evaluations": res.evaluations, "seed": res.seed, "params": res.params.to_dict(),
        "best_objective_trace": list(res.trace), **res.metadata}))
    log.info("objective %.6g after %d evaluations", res.objective, res.evaluations)
    return EXIT_OK


def cmd_remove(cfg: RunConfig, out: Path) -> int:
    inp = cfg.inputs
    if not inp.get("image") or not inp.get("labels"):
        raise UsageError("remove needs --image and --labels")
    image = load_grid(inp["image"], "image", cfg.slice_index)
    labels = load_grid(inp["labels"], "labels", cfg.slice_index)
    if not np.isin(labels.labels, (1, 2, 4)).any():
        log.warning("no tumour labels; nothing to remove")
        return EXIT_EMPTY
    filled = remove_tumor(image, labels, seed=cfg.seed, noise=inp.get("noise", "on") == "on")
    save_grid(filled, out / "filled.flatgrid")
    return EXIT_OK


def cmd_evaluate(cfg: RunConfig, out: Path) -> int:
    inp = cfg.inputs
    if not inp.get("real") or not inp.get("synth"):
        raise UsageError("evaluate needs --real and --synth")
    real = read_features(inp["real"])
    syn = read_features(inp["synth"])
    common = sorted(set(real.subjects) & set(syn.subjects))
    if len(common) < 3:
        log.warning("fewer than 3 paired subjects")
        return EXIT_EMPTY
    if len(common) != len(real.subjects) or len(common) != len(syn.subjects):
        raise UsageError("real and synthetic cohorts list different subjects")
    report = family_report(real, syn, pairing=inp.get("pairing", "flattened"))
    report.write(out / "report.csv")
    _atomic_write(out / "report.txt", report.to_text().encode("utf-8"))
    _atomic_write(out / "report.json", _json_bytes(report.metadata))
    return EXIT_OK


def _phantom_one(job):
    index, seed, geometry, out = job
    image, labels = make_phantom(seed, geometry)
    stem = f"phantom_{index:03d}"
    save_grid(image, out / f"{stem}_image.flatgrid")
    save_grid(labels, out / f"{stem}_labels.flatgrid")
    return stem, f"{stem}_image.flatgrid", f"{stem}_labels.flatgrid"


def cmd_phantom(cfg: RunConfig, out: Path) -> int:
    inp = cfg.inputs
    count = int(inp.get("count", 1))
    if count < 1:
        raise UsageError("--count must be >= 1")
    geometry = GridGeometry(int(inp.get("width", 80)), int(inp.get("height", 80)),
                            float(inp.get("spacing", 1.0)), float(inp.get("spacing", 1.0)))
    jobs = [(k, _derived_seed(cfg.seed, k), geometry, out) for k in range(count)]
    with _mapper(cfg.jobs) as mp:
        rows = list(mp(_phantom_one, jobs))
    write_manifest(out / "manifest.csv", rows)
    return EXIT_OK


def _checkerboard(shape, lo, hi, square=8):
    r, c = np.indices(shape)
    return np.where(((r // square) + (c // square)) % 2 == 0, lo, hi)


def cmd_grid(cfg: RunConfig, out: Path) -> int:
    inp = cfg.inputs
    if not inp.get("background"):
        raise UsageError("grid needs --background")
    surfaces = sorted(float(v) for v in inp.get("surfaces", []))
    spheres = sorted(float(v) for v in inp.get("sphericities", []))
    if not surfaces or not spheres:
        raise UsageError("grid needs --surfaces and --sphericities")
    if any(v <= 0 for v in surfaces) or any(not 0 < v <= 1 for v in spheres):
        raise UsageError("surfaces must be > 0 and sphericities in (0, 1]")
    background = load_grid(inp["background"], "image", cfg.slice_index)
    g = background.geometry
    center = tuple(inp["center"]) if inp.get("center") else _grid_center(g)
    budget = cfg.budget if cfg.budget is not None else 3000
    with _mapper(cfg.jobs) as mp:
        cells = sweep(background, center, surfaces, spheres, seed=cfg.seed, budget=budget, map_fn=mp)

    lo, hi = np.percentile(background.intensities, [0.5, 99.5])
    for c in cells:
        if c.ok:
            hi = max(hi, float(np.percentile(c.result.image.intensities, 99.5)))
    h, w = g.shape
    montage = np.empty((h * len(spheres), w * len(surfaces)))
    buf = io.StringIO(newline="")
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(("row", "col", "target_pixel_surface", "target_sphericity", "status",
                 "achieved_pixel_surface", "achieved_sphericity", "objective", "message"))
    for c in cells:
        tile = (slice(c.row * h, (c.row + 1) * h), slice(c.col * w, (c.col + 1) * w))
        if c.ok:
            a = c.result.achieved
            montage[tile] = c.result.image.intensities
            wr.writerow((c.row, c.col, repr(c.pixel_surface), repr(c.sphericity), "ok",
                         repr(a.get("ROI2", "pixel_surface")), repr(a.get("ROI2", "sphericity")),
                         repr(c.result.objective), ""))
        else:
            montage[tile] = _checkerboard((h, w), lo, hi)
            wr.writerow((c.row, c.col, repr(c.pixel_surface), repr(c.sphericity), "failed",
                         "", "", "", c.error))
    mg = GridGeometry(montage.shape[1], montage.shape[0], g.spacing_x, g.spacing_y)
    save_pgm(ImageGrid(mg, montage), out / "montage.pgm", (float(lo), float(hi)))
    _atomic_write(out / "cells.csv", buf.getvalue().encode("utf-8"))
    n_ok = sum(c.ok for c in cells)
    log.info("%d of %d cells succeeded", n_ok, len(cells))
    return EXIT_OK if 2 * n_ok >= len(cells) else EXIT_EMPTY


COMMANDS = {"extract": cmd_extract, "synthesize": cmd_synthesize, "remove": cmd_remove,
            "evaluate": cmd_evaluate, "phantom": cmd_phantom, "grid": cmd_grid}


# -------------------------------------------------------------------- parser

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


# flag dest -> key inside RunConfig.inputs
_INPUT_KEYS = ("image", "labels", "subject", "manifest", "background", "target", "center", "noise",
               "real", "synth", "pairing", "count", "width", "height", "spacing", "surfaces",
               "sphericities")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON RunConfig; explicit flags override it")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int)
    common.add_argument("--jobs", type=int, help="worker processes (output does not depend on it)")
    common.add_argument("--budget", type=int, help="objective evaluations per synthesis")
    common.add_argument("--slice-index", type=int, dest="slice_index", help="axial plane of 3D NIfTI input")
    common.add_argument("--discretization", choices=("fixed_bin_width", "fixed_bin_count"))
    common.add_argument("--bin-width", type=float, dest="bin_width")
    common.add_argument("--bin-count", type=int, dest="bin_count")
    common.add_argument("--roi", action="append", type=_parse_roi, dest="rois",
                        help="NAME=LABELS[/SHAPE_LABELS], e.g. ROI2=4/1,4; repeatable")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="radiosynth", description="Radiomics extraction and conditioned tumour synthesis.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("extract", parents=[common], help="feature vectors for images + labels")
    s.add_argument("--manifest")
    s.add_argument("--image")
    s.add_argument("--labels")
    s.add_argument("--subject")

    s = sub.add_parser("synthesize", parents=[common], help="fit a tumour to a target feature set")
    s.add_argument("--background")
    s.add_argument("--target", help="TargetSpec JSON")
    s.add_argument("--center", type=float, nargs=2, metavar=("X_MM", "Y_MM"))

    s = sub.add_parser("remove", parents=[common], help="background-fill the tumour labels")
    s.add_argument("--image")
    s.add_argument("--labels")
    s.add_argument("--noise", choices=("on", "off"))

    s = sub.add_parser("evaluate", parents=[common], help="similarity report of two feature CSVs")
    s.add_argument("--real")
    s.add_argument("--synth")
    s.add_argument("--pairing", choices=("flattened", "per-feature"))

    s = sub.add_parser("phantom", parents=[common], help="write a seeded phantom corpus + manifest")
    s.add_argument("--count", type=int)
    s.add_argument("--width", type=int)
    s.add_argument("--height", type=int)
    s.add_argument("--spacing", type=float)

    s = sub.add_parser("grid", parents=[common], help="pixel surface x sphericity sweep")
    s.add_argument("--background")
    s.add_argument("--surfaces", type=float, nargs="+")
    s.add_argument("--sphericities", type=float, nargs="+")
    s.add_argument("--center", type=float, nargs=2, metavar=("X_MM", "Y_MM"))
    return p


def resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
    if cfg.command and cfg.command != args.command:
        raise UsageError(f"config was written by '{cfg.command}', not '{args.command}'")
    cfg.command = args.command
    for name in ("out", "seed", "jobs", "budget", "slice_index", "rois"):
        v = getattr(args, name, None)
        if v is not None:
            setattr(cfg, name, v)
    disc = dict(cfg.discretization)
    for flag, key in (("discretization", "mode"), ("bin_width", "bin_width"), ("bin_count", "bin_count")):
        v = getattr(args, flag, None)
        if v is not None:
            disc[key] = v
    cfg.discretization = disc
    inputs = dict(cfg.inputs)
    for key in _INPUT_KEYS:
        v = getattr(args, key, None)
        if v is not None:
            inputs[key] = str(v) if key in ("image", "labels", "manifest", "background", "target",
                                            "real", "synth") else v
    cfg.inputs = inputs
    if cfg.out is None:
        raise UsageError("--out is required")
    if cfg.jobs < 1:
        raise UsageError("--jobs must be >= 1")
    try:
        cfg.disc()
        cfg.roi_configs()
    except (ValueError, TypeError, KeyError) as exc:
        raise UsageError(f"bad configuration: {exc}") from exc
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(levelname)s: %(message)s")
    try:
        cfg = resolve_config(args)
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        code = COMMANDS[cfg.command](cfg, out)
        _atomic_write(out / CONFIG_NAME, cfg.to_json().encode("utf-8"))
        return code
    except (UsageError, OSError, GridError, MaskError, FeatureError, SynthesisError, StatError,
            ValueError) as exc:
        print(f"radiosynth {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
