import csv
import filecmp
import json
import math

import numpy as np
import pytest

from colliseg.cli import main
from colliseg.fileio import read_json, read_pfm, read_pgm, write_pfm, write_pgm
from colliseg.metrics import dice
from colliseg.simulate import SimulationConfig, generate_sample


def run(argv):
    return main([str(a) for a in argv])


def gen_dataset(tmp_path, name, count=4, seed=7, config_lines=()):
    out = tmp_path / name
    args = ["gen", "--out", out, "--count", count, "--seed", seed]
    if config_lines:
        cfg_file = tmp_path / f"{name}.cfg"
        cfg_file.write_text("\n".join(config_lines) + "\n")
        args += ["--config", cfg_file]
    assert run(args) == 0
    return out


def dirs_equal(a, b):
    names = sorted(p.name for p in a.iterdir())
    if names != sorted(p.name for p in b.iterdir()):
        return False
    match, mismatch, errors = filecmp.cmpfiles(a, b, names, shallow=False)
    return not mismatch and not errors


def test_gen_writes_expected_files_and_manifest(tmp_path):
    out = gen_dataset(tmp_path, "ds", count=3)
    manifest = read_json(out / "manifest.json")
    assert manifest["count"] == 3
    assert len(manifest["samples"]) == 3
    for entry in manifest["samples"]:
        for key in ("image", "mask", "hough", "lines"):
            assert (out / entry[key]).exists()


def test_gen_deterministic_across_runs_and_workers(tmp_path):
    a = gen_dataset(tmp_path, "a", count=4, seed=11)
    b = gen_dataset(tmp_path, "b", count=4, seed=11)
    assert dirs_equal(a, b)
    c = tmp_path / "c"
    assert run(["gen", "--out", c, "--count", 4, "--seed", 11, "--workers", 3]) == 0
    assert dirs_equal(a, c)


def test_gen_mask_round_trip_matches_memory(tmp_path):
    out = gen_dataset(tmp_path, "ds", count=2, seed=3)
    cfg = SimulationConfig(rng_seed=3)
    for i in range(2):
        sample = generate_sample(cfg, i)
        on_disk = read_pgm(out / f"mask_{i:04d}.pgm")
        assert np.array_equal(on_disk.data, sample.roi_mask.data)


def test_gen_config_file_and_validation(tmp_path):
    out = gen_dataset(
        tmp_path, "ds", count=2, seed=5,
        config_lines=["transmission = 0.2", "n_edges_range = 2, 3", "photon_scale = off"],
    )
    doc = read_json(out / "lines_0000.json")
    assert doc["config"]["transmission"] == 0.2
    assert doc["config"]["photon_scale"] is None
    assert len(doc["lines"]) in (2, 3)
    # invalid value exits 2 and names the field
    bad = tmp_path / "bad.cfg"
    bad.write_text("transmission = 0\n")
    assert run(["gen", "--out", tmp_path / "x", "--count", 1, "--config", bad]) == 2


def test_gen_unknown_config_key(tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("not_a_field = 3\n")
    assert run(["gen", "--out", tmp_path / "x", "--count", 1, "--config", bad]) == 2


def test_detect_from_gt_pair_self_consistent(tmp_path):
    out = gen_dataset(tmp_path, "ds", count=2, seed=13)
    det = tmp_path / "det"
    code = run([
        "detect", "--mask", out / "mask_0000.pgm", "--hough", out / "hough_0000.pfm",
        "--t", 0.2, "--out", det,
    ])
    assert code == 0
    pred = read_pgm(det / "pred_mask.pgm")
    gt = read_pgm(out / "mask_0000.pgm")
    assert dice(pred, gt) >= 0.99
    doc = read_json(det / "pred_lines.json")
    gt_doc = read_json(out / "lines_0000.json")
    assert len(doc["lines"]) == len(gt_doc["lines"])


def test_detect_zero_hough_full_mask(tmp_path):
    out = gen_dataset(tmp_path, "ds", count=1, seed=2)
    hough = read_pfm(out / "hough_0000.pfm")
    write_pfm(tmp_path / "zero.pfm", np.zeros_like(hough, dtype=np.float32))
    det = tmp_path / "det"
    assert run([
        "detect", "--mask", out / "mask_0000.pgm", "--hough", tmp_path / "zero.pfm",
        "--out", det,
    ]) == 0
    pred = read_pgm(det / "pred_mask.pgm")
    assert pred.count() == pred.width * pred.height


def test_detect_empty_mask_exits_nonzero(tmp_path, capsys):
    out = gen_dataset(tmp_path, "ds", count=1, seed=2)
    write_pgm(tmp_path / "empty.pgm", np.zeros((256, 256), bool))
    code = run([
        "detect", "--mask", tmp_path / "empty.pgm", "--hough", out / "hough_0000.pfm",
        "--out", tmp_path / "det",
    ])
    assert code != 0
    err = capsys.readouterr().err
    assert err.startswith("error:") and "empty mask, no seed available" in err


def test_detect_corrupt_pfm_reports_offset(tmp_path, capsys):
    out = gen_dataset(tmp_path, "ds", count=1, seed=2)
    bad = tmp_path / "bad.pfm"
    bad.write_bytes(b"Pf\n10 10\n-1.0\n" + b"\x01" * 11)
    code = run(["detect", "--mask", out / "mask_0000.pgm", "--hough", bad, "--out", tmp_path / "d"])
    assert code != 0
    err = capsys.readouterr().err
    assert "error:" in err and "byte" in err


def test_detect_image_classical_path(tmp_path):
    out = gen_dataset(
        tmp_path, "clean", count=1, seed=21,
        config_lines=[
            "area_fraction_range = 0.3, 0.7",
            "min_edge_contact = 50",
            "min_edge_contact_ratio = 0.6",
            f"theta_margin_rad = {math.radians(10)}",
        ],
    )
    det = tmp_path / "det"
    assert run([
        "detect", "--image", out / "img_0000.pfm", "--t", 0.35, "--min-blob-area", 4,
        "--out", det,
    ]) == 0
    pred = read_pgm(det / "pred_mask.pgm")
    gt = read_pgm(out / "mask_0000.pgm")
    assert dice(pred, gt) >= 0.95


def test_eval_identity(tmp_path):
    out = gen_dataset(tmp_path, "ds", count=4, seed=31)
    report = tmp_path / "rep" / "report"
    assert run([
        "eval", "--pred", out, "--gt", out, "--report", report,
        "--sweep", "0.05:0.8:6", "--t", 0.2,
    ]) == 0
    doc = json.loads((report.parent / "report.json").read_text())
    assert doc["dice"]["mean"] == 1.0
    assert doc["ahd_mm"]["median"] == 0.0
    assert all(f == 1.0 for f in doc["sweep"]["f1"])
    assert doc["line_detection"]["f1"] == 1.0
    for suffix in ("report.csv", "report_ahd_box.png", "report_dice_box.png", "report_sweep.png"):
        assert (report.parent / suffix).exists()


def test_eval_csv_row_count_and_recomputation(tmp_path):
    out = gen_dataset(tmp_path, "ds", count=5, seed=33)
    report = tmp_path / "report"
    assert run([
        "eval", "--pred", out, "--gt", out, "--report", report,
        "--sweep", "0.1:0.7:4", "--t", 0.2,
    ]) == 0
    rows = list(csv.DictReader((tmp_path / "report.csv").open()))
    assert len(rows) == 5
    doc = json.loads((tmp_path / "report.json").read_text())

    dices = [float(r["dice"]) for r in rows]
    assert doc["dice"]["mean"] == pytest.approx(float(np.mean(dices)), abs=1e-12)
    assert doc["dice"]["median"] == pytest.approx(float(np.median(dices)), abs=1e-12)
    ahds = [float(r["ahd_mm"]) for r in rows]
    assert doc["ahd_mm"]["mean"] == pytest.approx(float(np.mean(ahds)), abs=1e-12)

    # sweep aggregates recomputed from the per-threshold CSV count columns
    for idx, t in enumerate(doc["sweep"]["thresholds"]):
        ps, rs = [], []
        for r in rows:
            tp = int(r[f"tp@{t:.6f}"])
            fp = int(r[f"fp@{t:.6f}"])
            fn = int(r[f"fn@{t:.6f}"])
            ps.append((1.0 if fn == 0 else 0.0) if tp + fp == 0 else tp / (tp + fp))
            rs.append((1.0 if fp == 0 else 0.0) if tp + fn == 0 else tp / (tp + fn))
        p, rr = float(np.mean(ps)), float(np.mean(rs))
        assert doc["sweep"]["precision"][idx] == pytest.approx(p, abs=1e-12)
        assert doc["sweep"]["recall"][idx] == pytest.approx(rr, abs=1e-12)
        want_f1 = 2 * p * rr / (p + rr) if p + rr else 0.0
        assert doc["sweep"]["f1"][idx] == pytest.approx(want_f1, abs=1e-12)


def test_eval_missing_counterparts_listed(tmp_path, capsys):
    gt = gen_dataset(tmp_path, "gt", count=3, seed=35)
    pred = tmp_path / "pred"
    pred.mkdir()
    # only provide sample 0000
    for name in ("mask_0000.pgm", "hough_0000.pfm"):
        (pred / name).write_bytes((gt / name).read_bytes())
    code = run(["eval", "--pred", pred, "--gt", gt, "--report", tmp_path / "r"])
    assert code != 0
    err = capsys.readouterr().err
    assert "missing counterpart files" in err
    assert "0001" in err and "0002" in err


def test_eval_bad_sweep_spec(tmp_path, capsys):
    gt = gen_dataset(tmp_path, "gt", count=1, seed=36)
    assert run(["eval", "--pred", gt, "--gt", gt, "--report", tmp_path / "r", "--sweep", "0.5"]) == 2
    assert "error:" in capsys.readouterr().err


def test_gen_with_external_base_images(tmp_path):
    basedir = tmp_path / "bases"
    basedir.mkdir()
    rng = np.random.default_rng(0)
    for i in range(2):
        write_pfm(basedir / f"base_{i}.pfm", (rng.random((256, 256)) + 0.5).astype(np.float32))
    a = tmp_path / "a"
    b = tmp_path / "b"
    assert run(["gen", "--out", a, "--count", 4, "--seed", 3, "--base-dir", basedir]) == 0
    assert run(["gen", "--out", b, "--count", 4, "--seed", 3, "--base-dir", basedir, "--workers", 2]) == 0
    assert dirs_equal(a, b)
    # empty base dir is a config-independent runtime error
    empty = tmp_path / "none"
    empty.mkdir()
    assert run(["gen", "--out", tmp_path / "c", "--count", 1, "--base-dir", empty]) == 1


def test_detect_requires_hough_with_mask(tmp_path, capsys):
    gt = gen_dataset(tmp_path, "gt", count=1, seed=37)
    code = run(["detect", "--mask", gt / "mask_0000.pgm", "--out", tmp_path / "d"])
    assert code == 2
    assert "requires --hough" in capsys.readouterr().err
