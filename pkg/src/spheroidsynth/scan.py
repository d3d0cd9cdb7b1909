"""Grid search over Potts parameters.

Each parameter combination is scored by simulating from the same initial
volume and computing m = mean_k(W_k) * mean_i(IoU_i), where W_k is the
Wasserstein distance between the start and end distributions of feature k
and IoU_i compares each cell's start and end voxel sets. Small m means
the shape statistics survived while individual cells moved.
"""

from __future__ import annotations

import csv
import itertools
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .cpm import CpmParams, assign_targets, export_borders, init_state, run_mcs
from .morphology import FEATURE_NAMES, extract_features, iou_per_cell, wasserstein_1d
from .volume import LabelVolume


@dataclass(frozen=True)
class ScanRecord:
    params: CpmParams
    wasserstein: dict[str, float]   # one entry per feature name
    mean_wasserstein: float
    mean_iou: float
    metric_m: float
    seed: int
    n_mcs: int
    wall_time: float
    grid_index: int = -1


def _derived_seeds(seed: int, n: int) -> list[int]:
    return [int(x) for x in np.random.SeedSequence(seed).generate_state(n, np.uint64)]


def mean_start_iou(initial: LabelVolume, final: LabelVolume) -> float:
    """Mean same-label IoU over cells present at start; missing cells count 0."""
    ious = iou_per_cell(initial, final)
    if not ious:
        raise ValueError("initial volume has no cells")
    return float(np.mean(list(ious.values())))


def evaluate_params(
    initial: LabelVolume, p: CpmParams, n_mcs: int, seed: int, grid_index: int = -1
) -> ScanRecord:
    """Simulate one parameter set and score it against the initial volume."""
    start_features = extract_features(initial)
    if len(start_features) == 0:
        raise ValueError("initial volume has no cells")
    dyn_seed, target_seed = _derived_seeds(seed, 2)
    state = init_state(initial, p, seed=dyn_seed)
    assign_targets(state, seed=target_seed)
    t0 = time.perf_counter()
    run_mcs(state, n_mcs)
    wall = time.perf_counter() - t0
    final = export_borders(state)
    end_features = extract_features(final)
    w = {}
    for i, name in enumerate(FEATURE_NAMES):
        a = start_features.values[:, i]
        if len(end_features) == 0:
            # every cell vanished: distances are undefined, score the
            # combination as useless via IoU 0 and keep W at 0
            w[name] = 0.0
        else:
            w[name] = wasserstein_1d(a, end_features.values[:, i])
    mean_w = float(np.mean(list(w.values())))
    mean_iou = mean_start_iou(initial, final)
    return ScanRecord(
        params=p,
        wasserstein=w,
        mean_wasserstein=mean_w,
        mean_iou=mean_iou,
        metric_m=mean_w * mean_iou,
        seed=seed,
        n_mcs=n_mcs,
        wall_time=wall,
        grid_index=grid_index,
    )


def _average_records(records: list[ScanRecord]) -> ScanRecord:
    first = records[0]
    if len(records) == 1:
        return first
    w = {
        name: float(np.mean([r.wasserstein[name] for r in records]))
        for name in FEATURE_NAMES
    }
    mean_w = float(np.mean(list(w.values())))
    mean_iou = float(np.mean([r.mean_iou for r in records]))
    return ScanRecord(
        params=first.params,
        wasserstein=w,
        mean_wasserstein=mean_w,
        mean_iou=mean_iou,
        metric_m=mean_w * mean_iou,
        seed=first.seed,
        n_mcs=first.n_mcs,
        wall_time=float(sum(r.wall_time for r in records)),
        grid_index=first.grid_index,
    )


def _eval_one(args) -> ScanRecord:
    initial, p, n_mcs, seeds, grid_index = args
    reps = [
        evaluate_params(initial, p, n_mcs, seed, grid_index=grid_index)
        for seed in seeds
    ]
    return _average_records(reps)


def grid_combinations(grid: dict[str, list]) -> list[CpmParams]:
    """Cartesian product of the grid in deterministic enumeration order."""
    if not grid:
        raise ValueError("parameter grid is empty")
    valid = {f.name for f in fields(CpmParams)}
    unknown = set(grid) - valid
    if unknown:
        raise ValueError(f"unknown parameter names in grid: {sorted(unknown)}")
    names = list(grid)
    combos = []
    for values in itertools.product(*(grid[n] for n in names)):
        combos.append(CpmParams(**dict(zip(names, values))))
    return combos


def grid_scan(
    initial: LabelVolume,
    grid: dict[str, list],
    n_mcs: int,
    base_seed: int,
    workers: int = 1,
    replicates: int = 1,
) -> list[ScanRecord]:
    """Score every grid combination; ranked ascending by m.

    Combination seeds derive from (base_seed, grid index), so results do
    not depend on worker count or scheduling. Ties keep grid order.
    """
    if replicates < 1:
        raise ValueError(f"replicates must be >= 1, got {replicates}")
    combos = grid_combinations(grid)
    jobs = []
    for idx, p in enumerate(combos):
        seeds = [
            int(np.random.SeedSequence([base_seed, idx, r]).generate_state(1, np.uint64)[0])
            for r in range(replicates)
        ]
        jobs.append((initial, p, n_mcs, seeds, idx))
    if workers <= 1:
        records = [_eval_one(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_eval_one, jobs))
    return sorted(records, key=lambda r: r.metric_m)


# ---------------------------------------------------------------------------
# report serialization
# ---------------------------------------------------------------------------

_PARAM_FIELDS = [f.name for f in fields(CpmParams)]


def record_to_dict(r: ScanRecord) -> dict:
    return {
        "grid_index": r.grid_index,
        "params": {name: getattr(r.params, name) for name in _PARAM_FIELDS},
        "wasserstein": dict(r.wasserstein),
        "mean_wasserstein": r.mean_wasserstein,
        "mean_iou": r.mean_iou,
        "metric_m": r.metric_m,
        "seed": r.seed,
        "n_mcs": r.n_mcs,
        "wall_time": r.wall_time,
    }


def record_from_dict(d: dict) -> ScanRecord:
    return ScanRecord(
        params=CpmParams(**d["params"]),
        wasserstein={k: float(v) for k, v in d["wasserstein"].items()},
        mean_wasserstein=float(d["mean_wasserstein"]),
        mean_iou=float(d["mean_iou"]),
        metric_m=float(d["metric_m"]),
        seed=int(d["seed"]),
        n_mcs=int(d["n_mcs"]),
        wall_time=float(d["wall_time"]),
        grid_index=int(d["grid_index"]),
    )


def save_scan_json(records: list[ScanRecord], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {"records": [record_to_dict(r) for r in records]}
    path.write_text(json.dumps(payload, indent=2, sort_keys=True))


def load_scan_json(path) -> list[ScanRecord]:
    payload = json.loads(Path(path).read_text())
    return [record_from_dict(d) for d in payload["records"]]


def save_scan_csv(records: list[ScanRecord], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = (
        ["grid_index"]
        + _PARAM_FIELDS
        + [f"w_{name}" for name in FEATURE_NAMES]
        + ["mean_wasserstein", "mean_iou", "metric_m", "seed", "n_mcs", "wall_time"]
    )
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        for r in records:
            row = [r.grid_index]
            row += [getattr(r.params, name) for name in _PARAM_FIELDS]
            row += [repr(r.wasserstein[name]) for name in FEATURE_NAMES]
            row += [
                repr(r.mean_wasserstein),
                repr(r.mean_iou),
                repr(r.metric_m),
                r.seed,
                r.n_mcs,
                repr(r.wall_time),
            ]
            w.writerow(row)
