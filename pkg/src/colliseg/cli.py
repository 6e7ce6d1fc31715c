"""Command-line interface: dataset generation, detection, evaluation.

Subcommands
-----------
gen     write a synthetic dataset (PFM images, PGM masks, PFM Hough labels,
        JSON line sidecars, manifest.json)
detect  run the lines-to-shapes pipeline on one sample, either from a raw
        image (classical Sobel edge path) or from a supplied region mask +
        Hough space pair standing in for network outputs
eval    score a prediction directory against a ground-truth directory and
        write a per-sample CSV, a JSON aggregate, and report figures

All error paths print a single line prefixed ``error:`` to stderr and exit
nonzero (2 for configuration problems, 1 for runtime failures).
"""

from __future__ import annotations

import argparse
import concurrent.futures
import csv
import dataclasses
import io
import logging
import sys
from pathlib import Path

import numpy as np

from .fileio import FormatError, atomic_write_bytes, read_json, read_pfm, read_pgm, write_json, write_pfm, write_pgm
from .grid import BinaryMask, HoughGeometry, HoughSpace, ImageGrid, Line, mask_centroid
from .metrics import MatchReport, box_stats, dice, avg_hausdorff_mm, f1_sweep, match_lines
from .plots import save_box_plot, save_sweep_plot
from .reconstruct import LineSet, PostprocessConfig, classical_edge_path, extract_lines, lines_to_mask
from .simulate import SimulationConfig, generate_sample

log = logging.getLogger("colliseg")


class ConfigError(ValueError):
    """Invalid configuration value; message names the offending field."""


# ---------------------------------------------------------------------------
# configuration file handling (key=value lines, # comments)

_TUPLE_FIELDS = {"n_edges_range": int, "area_fraction_range": float}
_INT_FIELDS = {"width", "height", "rng_seed", "n_theta"}
_OPTIONAL_FLOAT_FIELDS = {"photon_scale"}


def _parse_config_file(path: Path) -> dict:
    known = {f.name for f in dataclasses.fields(SimulationConfig)}
    values: dict = {}
    for lineno, raw_line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in known:
            raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
        try:
            if key in _TUPLE_FIELDS:
                cast = _TUPLE_FIELDS[key]
                parts = [cast(p) for p in value.split(",")]
                if len(parts) != 2:
                    raise ValueError("expected two comma-separated values")
                values[key] = tuple(parts)
            elif key in _OPTIONAL_FLOAT_FIELDS:
                values[key] = None if value.lower() in ("off", "none") else float(value)
            elif key in _INT_FIELDS:
                values[key] = int(value)
            else:
                values[key] = float(value)
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: {key}: {exc}")
    return values


def _sim_config(args) -> SimulationConfig:
    values = _parse_config_file(Path(args.config)) if args.config else {}
    if args.seed is not None:
        values["rng_seed"] = args.seed
    try:
        return SimulationConfig(**values)
    except ValueError as exc:
        raise ConfigError(str(exc))


def _config_echo(cfg: SimulationConfig) -> dict:
    doc = dataclasses.asdict(cfg)
    doc["n_edges_range"] = list(doc["n_edges_range"])
    doc["area_fraction_range"] = list(doc["area_fraction_range"])
    return doc


# ---------------------------------------------------------------------------
# gen


def _geometry_doc(geometry: HoughGeometry) -> dict:
    return {
        "n_theta": geometry.n_theta,
        "n_rho": geometry.n_rho,
        "rho_min": geometry.rho_min,
        "rho_max": geometry.rho_max,
    }


def _write_sample_files(
    cfg: SimulationConfig, out_dir: str, index: int, base_paths: tuple[str, ...] = ()
) -> str:
    base = None
    if base_paths:
        path = base_paths[index % len(base_paths)]
        base = ImageGrid(read_pfm(path), cfg.pixel_spacing)
    sample = generate_sample(cfg, index, base=base)
    sid = f"{index:04d}"
    out = Path(out_dir)
    write_pfm(out / f"img_{sid}.pfm", sample.image.data)
    write_pgm(out / f"mask_{sid}.pgm", sample.roi_mask)
    write_pfm(out / f"hough_{sid}.pfm", sample.hough_label.data)
    write_json(
        out / f"lines_{sid}.json",
        {
            "sample_id": sid,
            "pixel_spacing": sample.image.pixel_spacing,
            "hough": _geometry_doc(sample.hough_label.geometry),
            "roi_reference_point": list(sample.gt_lines.roi_reference_point),
            "lines": [
                {"theta_rad": line.theta, "rho_px": line.rho}
                for line in sample.gt_lines.edges
            ],
            "config": _config_echo(cfg),
        },
    )
    return sid


def cmd_gen(args) -> int:
    cfg = _sim_config(args)
    if args.count < 1:
        raise ConfigError(f"count must be >= 1, got {args.count}")
    if args.workers < 1:
        raise ConfigError(f"workers must be >= 1, got {args.workers}")
    base_paths: tuple[str, ...] = ()
    if args.base_dir:
        base_paths = tuple(str(p) for p in sorted(Path(args.base_dir).glob("*.pfm")))
        if not base_paths:
            raise ValueError(f"no .pfm base images found in {args.base_dir}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    indices = list(range(args.count))
    if args.workers == 1:
        ids = [_write_sample_files(cfg, str(out), i, base_paths) for i in indices]
    else:
        with concurrent.futures.ProcessPoolExecutor(max_workers=args.workers) as pool:
            ids = list(
                pool.map(
                    _write_sample_files,
                    [cfg] * len(indices),
                    [str(out)] * len(indices),
                    indices,
                    [base_paths] * len(indices),
                )
            )
    ids.sort()
    write_json(
        out / "manifest.json",
        {
            "count": args.count,
            "seed": cfg.rng_seed,
            "config": _config_echo(cfg),
            "samples": [
                {
                    "id": sid,
                    "image": f"img_{sid}.pfm",
                    "mask": f"mask_{sid}.pgm",
                    "hough": f"hough_{sid}.pfm",
                    "lines": f"lines_{sid}.json",
                }
                for sid in ids
            ],
        },
    )
    log.info("wrote %d samples to %s", args.count, out)
    print(f"wrote {args.count} samples to {out}")
    return 0


# ---------------------------------------------------------------------------
# detect


def _default_geometry_for(width: int, height: int, n_rho: int | None = None, n_theta: int = 180) -> HoughGeometry:
    geometry = HoughGeometry.for_image(width, height, n_theta=n_theta)
    if n_rho is None:
        return geometry
    # symmetric +-diagonal range is a pure function of the image shape, so a
    # stored accumulator only pins the bin counts
    return HoughGeometry(
        n_theta=n_theta, n_rho=n_rho, rho_min=geometry.rho_min, rho_max=geometry.rho_max
    )


def _bright_region_seed(img: ImageGrid) -> tuple[float, float]:
    """Centroid of the bright (non-collimated) pixels of a raw image."""
    lo, hi = np.percentile(img.data, [1.0, 99.0])
    bright = img.data > 0.5 * (lo + hi)
    if not bright.any():
        raise ValueError("empty mask, no seed available")
    return mask_centroid(BinaryMask(bright))


def _lines_doc(lines: LineSet) -> list[dict]:
    return [
        {"theta_rad": line.theta, "rho_px": line.rho, "blob_mass": mass}
        for line, mass in zip(lines.lines, lines.blob_mass)
    ]


def cmd_detect(args) -> int:
    try:
        cfg = PostprocessConfig(threshold=args.t, min_blob_area=args.min_blob_area)
    except ValueError as exc:
        raise ConfigError(str(exc))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    if args.image:
        img = ImageGrid(read_pfm(args.image), args.spacing)
        geometry = _default_geometry_for(img.width, img.height)
        hough, lines = classical_edge_path(img, cfg, geometry)
        seed = _bright_region_seed(img)
        shape = img.shape
        source = {"image": str(args.image)}
    else:
        region = read_pgm(args.mask)
        hough_data = read_pfm(args.hough)
        geometry = _default_geometry_for(
            region.width, region.height, n_rho=hough_data.shape[1], n_theta=hough_data.shape[0]
        )
        hough = HoughSpace(geometry=geometry, data=hough_data)
        lines = extract_lines(hough, cfg)
        seed = mask_centroid(region)
        shape = region.shape
        source = {"mask": str(args.mask), "hough": str(args.hough)}

    pred_mask = lines_to_mask(lines, seed, shape)
    write_pgm(out / "pred_mask.pgm", pred_mask)
    write_json(
        out / "pred_lines.json",
        {
            "source": source,
            "threshold": cfg.threshold,
            "min_blob_area": cfg.min_blob_area,
            "seed": [seed[0], seed[1]],
            "hough": _geometry_doc(geometry),
            "lines": _lines_doc(lines),
        },
    )
    log.info("wrote %s and %s", out / "pred_mask.pgm", out / "pred_lines.json")
    print(f"detected {len(lines)} lines; wrote {out / 'pred_mask.pgm'}")
    return 0


# ---------------------------------------------------------------------------
# eval


def _parse_sweep(spec: str) -> tuple[float, ...]:
    parts = spec.split(":")
    if len(parts) != 3:
        raise ConfigError(f"sweep must be t0:t1:steps, got {spec!r}")
    try:
        t0, t1 = float(parts[0]), float(parts[1])
        steps = int(parts[2])
    except ValueError as exc:
        raise ConfigError(f"sweep: {exc}")
    if steps < 1:
        raise ConfigError(f"sweep steps must be >= 1, got {steps}")
    if not (0.0 <= t0 <= t1 <= 1.0):
        raise ConfigError(f"sweep endpoints must satisfy 0 <= t0 <= t1 <= 1, got {spec!r}")
    return tuple(float(t) for t in np.linspace(t0, t1, steps))


def _discover_ids(gt_dir: Path) -> list[str]:
    ids = sorted(p.stem.removeprefix("mask_") for p in gt_dir.glob("mask_*.pgm"))
    if not ids:
        raise ValueError(f"no samples found in {gt_dir} (expected mask_*.pgm)")
    return ids


def _load_gt_lines(doc: dict) -> LineSet:
    return LineSet.from_lines(
        Line(theta=entry["theta_rad"], rho=entry["rho_px"]) for entry in doc["lines"]
    )


def _counts(report: MatchReport) -> tuple[int, int, int]:
    return report.tp, len(report.unmatched_pred), len(report.unmatched_gt)


def cmd_eval(args) -> int:
    pred_dir, gt_dir = Path(args.pred), Path(args.gt)
    thresholds = _parse_sweep(args.sweep)
    if not 0.0 <= args.ea_accept <= 1.0:
        raise ConfigError(f"ea-accept must lie in [0, 1], got {args.ea_accept}")
    try:
        cfg = PostprocessConfig(threshold=args.t, min_blob_area=args.min_blob_area)
    except ValueError as exc:
        raise ConfigError(str(exc))

    ids = _discover_ids(gt_dir)
    missing = []
    for sid in ids:
        for path in (
            gt_dir / f"lines_{sid}.json",
            pred_dir / f"mask_{sid}.pgm",
            pred_dir / f"hough_{sid}.pfm",
        ):
            if not path.exists():
                missing.append(f"{sid}:{path.name}")
    if missing:
        raise ValueError("missing counterpart files: " + ", ".join(missing))

    rows = []
    sweep_samples = []
    spacing = None
    shape = None
    for sid in ids:
        gt_mask = read_pgm(gt_dir / f"mask_{sid}.pgm")
        doc = read_json(gt_dir / f"lines_{sid}.json")
        gt_lines = _load_gt_lines(doc)
        spacing = float(doc["pixel_spacing"])
        shape = gt_mask.shape
        geometry = HoughGeometry(
            n_theta=int(doc["hough"]["n_theta"]),
            n_rho=int(doc["hough"]["n_rho"]),
            rho_min=float(doc["hough"]["rho_min"]),
            rho_max=float(doc["hough"]["rho_max"]),
        )
        pred_mask = read_pgm(pred_dir / f"mask_{sid}.pgm")
        hough = HoughSpace(geometry=geometry, data=read_pfm(pred_dir / f"hough_{sid}.pfm"))

        sample_dice = dice(pred_mask, gt_mask)
        sample_ahd = avg_hausdorff_mm(pred_mask, gt_mask, spacing)
        ref_report = match_lines(extract_lines(hough, cfg), gt_lines, shape, args.ea_accept)
        tp, fp, fn = _counts(ref_report)
        row = {
            "id": sid,
            "dice": sample_dice,
            "ahd_mm": sample_ahd,
            "tp": tp,
            "fp": fp,
            "fn": fn,
            "ea_scores": ";".join(repr(score) for _, _, score in ref_report.pairs),
        }
        for t in thresholds:
            report_t = match_lines(
                extract_lines(hough, cfg.with_threshold(t)), gt_lines, shape, args.ea_accept
            )
            tp_t, fp_t, fn_t = _counts(report_t)
            row[f"tp@{t:.6f}"] = tp_t
            row[f"fp@{t:.6f}"] = fp_t
            row[f"fn@{t:.6f}"] = fn_t
        rows.append(row)
        sweep_samples.append((hough, gt_lines))

    curve = f1_sweep(sweep_samples, shape, cfg, args.ea_accept, thresholds)
    dice_stats = box_stats([r["dice"] for r in rows])
    ahd_stats = box_stats([r["ahd_mm"] for r in rows])

    def per_sample_pr(tp, fp, fn):
        p = (1.0 if fn == 0 else 0.0) if tp + fp == 0 else tp / (tp + fp)
        r = (1.0 if fp == 0 else 0.0) if tp + fn == 0 else tp / (tp + fn)
        return p, r

    ref_p = float(np.mean([per_sample_pr(r["tp"], r["fp"], r["fn"])[0] for r in rows]))
    ref_r = float(np.mean([per_sample_pr(r["tp"], r["fp"], r["fn"])[1] for r in rows]))
    ref_f1 = 2 * ref_p * ref_r / (ref_p + ref_r) if ref_p + ref_r > 0 else 0.0

    base = Path(args.report)
    if base.suffix in (".csv", ".json"):
        base = base.with_suffix("")
    base.parent.mkdir(parents=True, exist_ok=True)

    buf = io.StringIO()
    fieldnames = list(rows[0].keys())
    writer = csv.DictWriter(buf, fieldnames=fieldnames)
    writer.writeheader()
    for row in rows:
        writer.writerow(
            {k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()}
        )
    atomic_write_bytes(base.with_suffix(".csv"), buf.getvalue().encode("utf-8"))

    write_json(
        base.with_suffix(".json"),
        {
            "n_samples": len(ids),
            "ea_accept": args.ea_accept,
            "reference_threshold": args.t,
            "pixel_spacing": spacing,
            "dice": dataclasses.asdict(dice_stats),
            "ahd_mm": dataclasses.asdict(ahd_stats),
            "line_detection": {"precision": ref_p, "recall": ref_r, "f1": ref_f1},
            "sweep": {
                "thresholds": list(curve.thresholds),
                "precision": list(curve.precision),
                "recall": list(curve.recall),
                "f1": list(curve.f1),
                "best_threshold": curve.best_threshold,
                "best_f1": curve.best_f1,
            },
        },
    )

    save_box_plot(
        Path(str(base) + "_ahd_box.png"),
        {"all samples": [r["ahd_mm"] for r in rows]},
        ylabel="average Hausdorff distance [mm]",
    )
    save_box_plot(
        Path(str(base) + "_dice_box.png"),
        {"all samples": [r["dice"] for r in rows]},
        ylabel="Dice coefficient",
    )
    save_sweep_plot(Path(str(base) + "_sweep.png"), curve)

    print(
        f"evaluated {len(ids)} samples: dice mean {dice_stats.mean:.4f}, "
        f"ahd median {ahd_stats.median:.3f} mm, best F1 {curve.best_f1:.4f} "
        f"at t={curve.best_threshold:.3f}"
    )
    return 0


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="colliseg",
        description="Collimator shadow detection: synthetic data, lines-to-shapes inference, evaluation.",
    )
    parser.add_argument("--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("gen", help="generate a synthetic dataset")
    p_gen.add_argument("--out", required=True, help="output directory")
    p_gen.add_argument("--count", type=int, required=True, help="number of samples")
    p_gen.add_argument("--seed", type=int, default=None, help="overrides rng_seed")
    p_gen.add_argument("--config", default=None, help="key=value config file")
    p_gen.add_argument(
        "--base-dir", default=None,
        help="directory of .pfm base images to collimate (default: synthetic phantoms)",
    )
    p_gen.add_argument("--workers", type=int, default=1, help="parallel workers")
    p_gen.set_defaults(func=cmd_gen)

    p_det = sub.add_parser("detect", help="run the detection pipeline on one sample")
    group = p_det.add_mutually_exclusive_group(required=True)
    group.add_argument("--image", default=None, help="raw image PFM (classical edge path)")
    group.add_argument("--mask", default=None, help="region mask PGM (network stand-in)")
    p_det.add_argument("--hough", default=None, help="Hough space PFM (required with --mask)")
    p_det.add_argument("--t", type=float, default=0.35, help="Hough threshold fraction")
    p_det.add_argument("--min-blob-area", type=int, default=1, help="minimum blob area in cells")
    p_det.add_argument("--spacing", type=float, default=0.15, help="pixel spacing mm/px")
    p_det.add_argument("--out", required=True, help="output directory")
    p_det.set_defaults(func=cmd_detect)

    p_eval = sub.add_parser("eval", help="evaluate predictions against ground truth")
    p_eval.add_argument("--pred", required=True, help="prediction directory")
    p_eval.add_argument("--gt", required=True, help="ground-truth directory")
    p_eval.add_argument("--report", required=True, help="report base path")
    p_eval.add_argument("--ea-accept", type=float, default=0.9, help="EA acceptance threshold")
    p_eval.add_argument("--sweep", default="0.05:0.95:10", help="threshold sweep t0:t1:steps")
    p_eval.add_argument("--t", type=float, default=0.35, help="reference Hough threshold")
    p_eval.add_argument("--min-blob-area", type=int, default=1, help="minimum blob area in cells")
    p_eval.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(message)s",
    )
    if args.command == "detect" and args.mask and not args.hough:
        print("error: --mask requires --hough", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (FormatError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
