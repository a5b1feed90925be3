import json
import subprocess
import sys

import numpy as np
import pytest

from radiosynth.cli import main, read_manifest
from radiosynth.features import extract_features, read_vectors, sidecar_path
from radiosynth.grid import load_grid
from radiosynth.grid import LabelGrid, save_grid
from radiosynth.synth import CONDITIONING_FEATURES, remove_tumor, synthesize, targets_from_features, tumor_center


def snapshot(folder):
    return {p.relative_to(folder).as_posix(): p.read_bytes() for p in sorted(folder.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def phantoms(tmp_path_factory):
    out = tmp_path_factory.mktemp("ph")
    assert main(["phantom", "--count", "4", "--seed", "5", "--out", str(out)]) == 0
    return out


def test_phantom_manifest(phantoms):
    rows = read_manifest(phantoms / "manifest.csv")
    assert [r[0] for r in rows] == [f"phantom_{k:03d}" for k in range(4)]
    assert all(r[1].exists() and r[2].exists() for r in rows)
    cfg = json.loads((phantoms / "run_config.json").read_text())
    assert cfg["command"] == "phantom" and cfg["seed"] == 5 and "jobs" not in cfg


def test_phantom_jobs_and_rerun_identical(tmp_path):
    out = tmp_path / "p"
    main(["phantom", "--count", "3", "--out", str(out)])
    first = snapshot(out)
    main(["phantom", "--count", "3", "--out", str(out), "--jobs", "2"])
    assert snapshot(out) == first


def test_extract_manifest_jobs_identical(phantoms, tmp_path):
    out = tmp_path / "x"
    assert main(["extract", "--manifest", str(phantoms / "manifest.csv"), "--out", str(out)]) == 0
    first = snapshot(out)
    assert main(["extract", "--manifest", str(phantoms / "manifest.csv"), "--out", str(out), "--jobs", "2"]) == 0
    assert snapshot(out) == first
    vectors = read_vectors(out / "features.csv")
    assert len(vectors) == 4
    rows = first["features.csv"].decode().splitlines()
    assert rows[0] == "subject,roi,family,feature,value" and len(rows) == 1 + 4 * 134
    img = load_grid(phantoms / "phantom_002_image.flatgrid")
    lab = load_grid(phantoms / "phantom_002_labels.flatgrid", "labels")
    assert np.array_equal(vectors["phantom_002"].values(), extract_features(img, lab).values())


def test_extract_failures_and_empty(tmp_path, phantoms):
    man = tmp_path / "m.csv"
    man.write_text("subject,image_path,labels_path\nbad,nope.flatgrid,nope.flatgrid\n")
    assert main(["extract", "--manifest", str(man), "--out", str(tmp_path / "o")]) == 2
    side = json.loads(sidecar_path(tmp_path / "o" / "features.csv").read_text())
    assert "bad" in side["failures"]
    (tmp_path / "bad.csv").write_text("a,b\n")
    assert main(["extract", "--manifest", str(tmp_path / "bad.csv"), "--out", str(tmp_path / "o2")]) == 1


def test_usage_errors_exit_1(tmp_path, capsys):
    assert main(["extract", "--out", str(tmp_path)]) == 1
    with pytest.raises(SystemExit) as exc:
        main(["extract", "--discretization", "nonsense"])
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 1


def test_remove(phantoms, tmp_path):
    img = phantoms / "phantom_000_image.flatgrid"
    lab = phantoms / "phantom_000_labels.flatgrid"
    out = tmp_path / "r"
    assert main(["remove", "--image", str(img), "--labels", str(lab), "--out", str(out), "--seed", "3"]) == 0
    filled = load_grid(out / "filled.flatgrid")
    ref = remove_tumor(load_grid(img), load_grid(lab, "labels"), seed=3)
    assert filled == ref
    assert main(["remove", "--image", str(img), "--labels", str(lab), "--out", str(tmp_path / "q"),
                 "--noise", "off"]) == 0
    assert load_grid(tmp_path / "q" / "filled.flatgrid") == remove_tumor(load_grid(img), load_grid(lab, "labels"),
                                                                         noise=False)
    # a label map with no tumour is an empty result
    empty = tmp_path / "empty.flatgrid"
    save_grid(LabelGrid(load_grid(lab, "labels").geometry, np.zeros((80, 80), np.uint8)), empty)
    assert main(["remove", "--image", str(img), "--labels", str(empty), "--out", str(tmp_path / "e")]) == 2


def test_synthesize_matches_library_and_config_roundtrip(phantoms, tmp_path):
    img, lab = load_grid(phantoms / "phantom_001_image.flatgrid"), load_grid(phantoms / "phantom_001_labels.flatgrid", "labels")
    bg = remove_tumor(img, lab, seed=0)
    save_grid(bg, tmp_path / "bg.flatgrid")
    ts = targets_from_features(extract_features(img, lab), CONDITIONING_FEATURES)
    (tmp_path / "t.json").write_text(ts.to_json())
    c = tumor_center(lab)
    out = tmp_path / "s"
    args = ["synthesize", "--background", str(tmp_path / "bg.flatgrid"), "--target", str(tmp_path / "t.json"),
            "--center", str(c[0]), str(c[1]), "--budget", "60", "--seed", "4", "--out", str(out)]
    assert main(args) == 0
    ref = synthesize(bg, c, ts, seed=4, budget=60)
    assert load_grid(out / "image.flatgrid") == ref.image
    assert load_grid(out / "labels.flatgrid", "labels") == ref.labels
    trace = json.loads((out / "trace.json").read_text())
    assert trace["objective"] == ref.objective and trace["evaluations"] == 60
    first = snapshot(out)
    # the archived config alone reproduces the run, flags override it
    assert main(["synthesize", "--config", str(out / "run_config.json"), "--jobs", "2"]) == 0
    assert snapshot(out) == first
    other = tmp_path / "s2"
    assert main(["synthesize", "--config", str(out / "run_config.json"), "--seed", "5", "--out", str(other)]) == 0
    assert json.loads((other / "run_config.json").read_text())["seed"] == 5
    assert (other / "image.flatgrid").read_bytes() != first["image.flatgrid"]


def test_config_errors(tmp_path):
    (tmp_path / "c.json").write_text('{"command": "extract", "colour": 1}')
    assert main(["extract", "--config", str(tmp_path / "c.json"), "--out", str(tmp_path / "o")]) == 1
    (tmp_path / "d.json").write_text('{"command": "phantom"}')
    assert main(["extract", "--config", str(tmp_path / "d.json"), "--out", str(tmp_path / "o")]) == 1


def test_evaluate(phantoms, tmp_path):
    man = phantoms / "manifest.csv"
    main(["extract", "--manifest", str(man), "--out", str(tmp_path / "real")])
    real = tmp_path / "real" / "features.csv"
    out = tmp_path / "ev"
    assert main(["evaluate", "--real", str(real), "--synth", str(real), "--out", str(out)]) == 0
    lines = (out / "report.csv").read_text().splitlines()
    assert lines[0] == "roi,family,metric,value,p,n"
    assert "Spearman Correlation" in (out / "report.txt").read_text()
    first = snapshot(out)
    main(["evaluate", "--real", str(real), "--synth", str(real), "--out", str(out), "--jobs", "2"])
    assert snapshot(out) == first
    # fewer than three subjects is an empty result
    rows = (tmp_path / "real" / "features.csv").read_text().splitlines()
    two = [rows[0]] + [r for r in rows[1:] if r.split(",")[0] in ("phantom_000", "phantom_001")]
    (tmp_path / "two.csv").write_text("\n".join(two) + "\n")
    sidecar_path(tmp_path / "two.csv").write_bytes(sidecar_path(real).read_bytes())
    assert main(["evaluate", "--real", str(tmp_path / "two.csv"), "--synth", str(tmp_path / "two.csv"),
                 "--out", str(tmp_path / "ev2")]) == 2


def test_grid_single_cell_equals_synthesize(phantoms, tmp_path):
    img = load_grid(phantoms / "phantom_003_image.flatgrid")
    lab = load_grid(phantoms / "phantom_003_labels.flatgrid", "labels")
    bg = remove_tumor(img, lab, seed=0)
    save_grid(bg, tmp_path / "bg.flatgrid")
    out = tmp_path / "g"
    args = ["grid", "--background", str(tmp_path / "bg.flatgrid"), "--surfaces", "200", "400",
            "--sphericities", "0.8", "--budget", "40", "--seed", "2", "--out", str(out)]
    assert main(args) == 0
    first = snapshot(out)
    assert main(args + ["--jobs", "2"]) == 0
    assert snapshot(out) == first
    cells = first["cells.csv"].decode().splitlines()
    assert len(cells) == 3 and cells[1].startswith("0,0,200.0,0.8,ok")
    assert first["montage.pgm"].startswith(b"P5\n160 80\n255\n")


def test_console_script(tmp_path):
    out = tmp_path / "c"
    proc = subprocess.run([sys.executable, "-m", "radiosynth.cli", "phantom", "--count", "1", "--out", str(out)],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert (out / "phantom_000_image.flatgrid").exists()
    proc = subprocess.run([sys.executable, "-m", "radiosynth.cli", "evaluate"], capture_output=True, text=True)
    assert proc.returncode == 1 and "error" in proc.stderr
