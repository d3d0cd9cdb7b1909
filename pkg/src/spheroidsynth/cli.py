"""Command line entry point.

One JSON config drives every subcommand; `--set section.key=value` patches
it in place and `--seed`, `--out`, `--workers` override the usual knobs.
Each command writes its artifacts plus a manifest that echoes the fully
resolved configuration, the derived seeds and the tool version, so a
manifest is enough to reproduce the job.

Exit codes: 0 success, 2 configuration/schema problem, 3 file I/O problem,
4 domain error (invalid data for an otherwise well-formed request).
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, PipelineConfig, apply_overrides, parse_config, resolved_dict
from .cpm import assign_targets, export_borders, init_state, run_mcs
from .cpm import manifest as cpm_manifest
from .imaging import simulate_imaging
from .metrics import HistogramFeatures, det_counts, det_score, kid_volumes, match_regions, seg_score
from .morphology import clean_labels, close_and_dilate, extract_features
from .nuclei import PrototypeDB, place_nuclei
from .plots import energy_trace_svg, feature_histograms_svg
from .postproc import binarize, borders_to_binary_membrane, split_and_assign
from .scan import grid_scan, save_scan_csv, save_scan_json
from .volume import VolumeIOError, load_volume, save_volume, upsample_z

EXIT_SCHEMA = 2
EXIT_IO = 3
EXIT_DOMAIN = 4

_COMMANDS = (
    ("preprocess", "clean an annotated label volume for simulation"),
    ("features", "extract the per-cell morphology feature table"),
    ("simulate", "evolve cell shapes with the lattice simulation"),
    ("scan", "grid-search simulation parameters and rank them"),
    ("synth", "place nucleus prototypes into simulated cells"),
    ("image", "apply the microscope forward model to an intensity volume"),
    ("postproc", "convert predicted signal plus cell labels to instances"),
    ("evaluate", "score predicted labels and optionally image similarity"),
    ("pipeline", "run preprocess, simulate, synth, image and postproc"),
)


def _stage_seeds(seed: int, run_idx: int = 0) -> dict:
    """Independent per-stage seeds derived from the master seed."""
    ss = np.random.SeedSequence([int(seed), int(run_idx)])
    dyn, targets, placement, imaging, kid = ss.generate_state(5, dtype=np.uint64).tolist()
    return {
        "dynamics": int(dyn),
        "targets": int(targets),
        "placement": int(placement),
        "imaging": int(imaging),
        "kid": int(kid),
    }


def _require(value, key: str):
    if value is None:
        raise ConfigError(f"$.{key}: required by this command but not set")
    return value


def _out_dir(cfg: PipelineConfig) -> Path:
    out = Path(cfg.io.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_manifest(out: Path, command: str, cfg: PipelineConfig, extra: dict | None = None):
    doc = {
        "tool": "spheroidsynth",
        "version": __version__,
        "command": command,
        "config": resolved_dict(cfg),
    }
    if extra:
        doc.update(extra)
    (out / "manifest.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _preprocess_volume(cfg: PipelineConfig):
    src = _require(cfg.io.cells_in, "io.cells_in")
    v = load_volume(src, kind="label")
    pp = cfg.preprocess
    v = clean_labels(v, pp.min_voxels, pp.min_z_span)
    if pp.close_radius > 0:
        v = close_and_dilate(v, pp.close_radius)
    if pp.upsample_z > 1:
        v = upsample_z(v, pp.upsample_z)
    return v


def cmd_preprocess(cfg: PipelineConfig, args, log) -> dict:
    out = _out_dir(cfg)
    v = _preprocess_volume(cfg)
    save_volume(v, out / "cells_preprocessed.rvol")
    log(f"preprocess: kept {len(v.labels())} cells, shape {v.shape}")
    return {"outputs": ["cells_preprocessed.rvol"], "n_cells": len(v.labels())}


def cmd_features(cfg: PipelineConfig, args, log) -> dict:
    out = _out_dir(cfg)
    src = _require(cfg.io.cells_in, "io.cells_in")
    v = load_volume(src, kind="label")
    table = extract_features(v)
    table.to_csv(out / "features.csv")
    log(f"features: {len(table)} cells -> features.csv")
    return {"outputs": ["features.csv"], "n_cells": len(table)}


def _simulate(cfg: PipelineConfig, seeds: dict, out: Path, log):
    src = _require(cfg.io.cells_in, "io.cells_in")
    v = load_volume(src, kind="label")
    return _simulate_loaded(v, cfg, seeds, out, log)


def _simulate_loaded(v, cfg: PipelineConfig, seeds: dict, out: Path, log):
    state = init_state(v, cfg.cpm.params, seed=seeds["dynamics"])
    assign_targets(state, seed=seeds["targets"])
    snapshots = run_mcs(state, cfg.cpm.n_mcs, cfg.cpm.snapshot_every)
    final = export_borders(state)
    save_volume(final, out / "cells_simulated.rvol")
    if cfg.cpm.snapshot_every > 0:
        for mcs, snap in snapshots:
            save_volume(snap, out / f"cells_mcs_{mcs:05d}.rvol")
    with (out / "energy.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["mcs", "energy"])
        for i, h in enumerate(state.energy_trace):
            writer.writerow([i, repr(float(h))])
    energy_trace_svg(state.energy_trace, out / "energy.svg")
    log(
        f"simulate: {cfg.cpm.n_mcs} steps, {len(final.labels())} cells remain, "
        f"{state.accepted_total} copies accepted"
    )
    return state, final


def cmd_simulate(cfg: PipelineConfig, args, log) -> dict:
    out = _out_dir(cfg)
    seeds = _stage_seeds(cfg.seed)
    state, final = _simulate(cfg, seeds, out, log)
    return {
        "outputs": ["cells_simulated.rvol", "energy.csv", "energy.svg"],
        "seeds": seeds,
        "simulation": cpm_manifest(state),
        "n_cells": len(final.labels()),
    }


def cmd_scan(cfg: PipelineConfig, args, log) -> dict:
    out = _out_dir(cfg)
    src = _require(cfg.io.cells_in, "io.cells_in")
    v = load_volume(src, kind="label")
    records = grid_scan(
        v,
        cfg.scan.grid,
        n_mcs=cfg.scan.n_mcs,
        base_seed=cfg.seed,
        workers=max(1, args.workers),
        replicates=cfg.scan.replicates,
    )
    save_scan_csv(records, out / "scan.csv")
    save_scan_json(records, out / "scan.json")
    best = records[0]
    log(f"scan: {len(records)} combinations, best m = {best.metric_m:.6g} ({best.params})")
    return {
        "outputs": ["scan.csv", "scan.json"],
        "n_combinations": len(records),
        "best_metric_m": best.metric_m,
    }


def _synth(cells, cfg: PipelineConfig, seeds: dict, out: Path, log):
    proto_dir = _require(cfg.io.prototypes_dir, "io.prototypes_dir")
    db = PrototypeDB.load(proto_dir)
    phantom, nuclei, report = place_nuclei(cells, db, cfg.placement, seed=seeds["placement"])
    save_volume(phantom, out / "nuclei_intensity.rvol")
    save_volume(nuclei, out / "nuclei_labels.rvol")
    (out / "placement_report.json").write_text(
        json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"
    )
    log(f"synth: placed {len(report.placed)} nuclei, skipped {len(report.skipped)} cells")
    return phantom, nuclei, report


def cmd_synth(cfg: PipelineConfig, args, log) -> dict:
    out = _out_dir(cfg)
    seeds = _stage_seeds(cfg.seed)
    src = _require(cfg.io.cells_in, "io.cells_in")
    cells = load_volume(src, kind="label")
    _, _, report = _synth(cells, cfg, seeds, out, log)
    return {
        "outputs": ["nuclei_intensity.rvol", "nuclei_labels.rvol", "placement_report.json"],
        "seeds": seeds,
        "n_placed": len(report.placed),
        "n_skipped": len(report.skipped),
    }


def _image(phantom, cfg: PipelineConfig, seeds: dict, out: Path, log):
    img = simulate_imaging(phantom, cfg.imaging, seed=seeds["imaging"])
    save_volume(img, out / "image.rvol")
    outputs = ["image.rvol"]
    if img.data.dtype.kind in "ui":
        save_volume(img, out / "image.tif")
        outputs.append("image.tif")
    log(f"image: {img.shape} {img.data.dtype} written")
    return img, outputs


def cmd_image(cfg: PipelineConfig, args, log) -> dict:
    out = _out_dir(cfg)
    seeds = _stage_seeds(cfg.seed)
    src = _require(cfg.io.image_in, "io.image_in")
    phantom = load_volume(src, kind="intensity")
    _, outputs = _image(phantom, cfg, seeds, out, log)
    return {"outputs": outputs, "seeds": seeds}


def _postproc(phantom, cells, cfg: PipelineConfig, out: Path, log):
    membrane = borders_to_binary_membrane(cells, cfg.postproc.membrane_thickness)
    binary = binarize(phantom, cfg.postproc.binarize_threshold)
    instances = split_and_assign(binary, membrane, cells, cfg.postproc.opening_radius)
    save_volume(instances, out / "instances.rvol")
    log(f"postproc: {len(instances.labels())} instances")
    return instances


def cmd_postproc(cfg: PipelineConfig, args, log) -> dict:
    out = _out_dir(cfg)
    pred = load_volume(_require(cfg.io.pred_in, "io.pred_in"), kind="intensity")
    cells = load_volume(_require(cfg.io.cells_in, "io.cells_in"), kind="label")
    instances = _postproc(pred, cells, cfg, out, log)
    return {"outputs": ["instances.rvol"], "n_instances": len(instances.labels())}


def cmd_evaluate(cfg: PipelineConfig, args, log) -> dict:
    out = _out_dir(cfg)
    ev = cfg.evaluate
    gt = load_volume(_require(ev.gt, "evaluate.gt"), kind="label")
    pred = load_volume(_require(ev.pred, "evaluate.pred"), kind="label")
    matches = match_regions(gt, pred)
    counts = det_counts(gt, pred)
    scores = {
        "seg": seg_score(gt, pred),
        "det": det_score(gt, pred),
        "counts": counts.to_dict(),
    }
    if (ev.kid_real is None) != (ev.kid_synth is None):
        raise ConfigError("$.evaluate: kid_real and kid_synth must be set together")
    if ev.kid_real is not None:
        real = load_volume(ev.kid_real, kind="intensity")
        synth = load_volume(ev.kid_synth, kind="intensity")
        fx = HistogramFeatures(ev.kid_value_range, bins=ev.kid_bins)
        scores["kid"] = kid_volumes(
            real,
            synth,
            fx,
            subset_size=ev.kid_subset_size,
            n_subsets=ev.kid_n_subsets,
            seed=_stage_seeds(cfg.seed)["kid"],
        )
    (out / "scores.json").write_text(json.dumps(scores, indent=2, sort_keys=True) + "\n")
    with (out / "iou_table.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["gt_label", "pred_label", "iou"])
        for m in matches:
            writer.writerow([m.gt_label, m.pred_label, repr(m.iou)])
    log(f"evaluate: SEG {scores['seg']:.4f} DET {scores['det']:.4f}")
    return {"outputs": ["scores.json", "iou_table.csv"], **scores}


def _pipeline_one(cfg: PipelineConfig, out: Path, run_idx: int, quiet: bool) -> dict:
    log = _make_logger(quiet)
    out.mkdir(parents=True, exist_ok=True)
    seeds = _stage_seeds(cfg.seed, run_idx)
    cells0 = _preprocess_volume(cfg)
    save_volume(cells0, out / "cells_preprocessed.rvol")
    start_table = extract_features(cells0)
    start_table.to_csv(out / "features_start.csv")
    _, cells1 = _simulate_loaded(cells0, cfg, seeds, out, log)
    end_table = extract_features(cells1)
    end_table.to_csv(out / "features_end.csv")
    feature_histograms_svg(start_table, end_table, out / "features.svg")
    phantom, _, report = _synth(cells1, cfg, seeds, out, log)
    _image(phantom, cfg, seeds, out, log)
    _postproc(phantom, cells1, cfg, out, log)
    run_info = {
        "run": run_idx,
        "seeds": seeds,
        "n_cells_start": len(start_table),
        "n_cells_end": len(end_table),
        "n_placed": len(report.placed),
        "n_skipped": len(report.skipped),
    }
    (out / "run.json").write_text(json.dumps(run_info, indent=2, sort_keys=True) + "\n")
    return run_info


def cmd_pipeline(cfg: PipelineConfig, args, log) -> dict:
    out = _out_dir(cfg)
    if cfg.runs == 1:
        runs = [_pipeline_one(cfg, out, 0, args.quiet)]
    else:
        dirs = [out / f"run_{i:03d}" for i in range(cfg.runs)]
        if args.workers > 1:
            with ProcessPoolExecutor(max_workers=args.workers) as pool:
                futures = [
                    pool.submit(_pipeline_one, cfg, d, i, True) for i, d in enumerate(dirs)
                ]
                runs = [f.result() for f in futures]
        else:
            runs = [_pipeline_one(cfg, d, i, args.quiet) for i, d in enumerate(dirs)]
        for info in runs:
            log(f"pipeline run {info['run']}: {info['n_placed']} nuclei placed")
    return {"runs": runs}


_HANDLERS = {
    "preprocess": cmd_preprocess,
    "features": cmd_features,
    "simulate": cmd_simulate,
    "scan": cmd_scan,
    "synth": cmd_synth,
    "image": cmd_image,
    "postproc": cmd_postproc,
    "evaluate": cmd_evaluate,
    "pipeline": cmd_pipeline,
}


def _make_logger(quiet: bool):
    def log(msg: str):
        if not quiet:
            print(msg)

    return log


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spheroidsynth",
        description="Synthetic 3D microscopy of cell spheroids.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    for name, help_text in _COMMANDS:
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--config", metavar="PATH", help="JSON configuration file")
        sp.add_argument(
            "--set",
            dest="overrides",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="override one config entry (repeatable), e.g. cpm.n_mcs=50",
        )
        sp.add_argument("--out", metavar="DIR", help="output directory (io.out_dir)")
        sp.add_argument("--seed", type=int, metavar="U64", help="master seed")
        sp.add_argument("--workers", type=int, default=1, metavar="N", help="worker processes")
        sp.add_argument("--quiet", action="store_true", help="suppress progress output")
    return parser


def _resolve_config(args) -> PipelineConfig:
    if args.config is not None:
        path = Path(args.config)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    else:
        doc = {}
    overrides = list(args.overrides)
    if args.out is not None:
        overrides.append(f"io.out_dir={args.out}")
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    doc = apply_overrides(doc, overrides)
    return parse_config(doc)


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    log = _make_logger(args.quiet)
    try:
        cfg = _resolve_config(args)
        extra = _HANDLERS[args.command](cfg, args, log)
        _write_manifest(_out_dir(cfg), args.command, cfg, extra)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except (VolumeIOError, FileNotFoundError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    return 0
