"""Segmentation quality scores and a slice-wise image-distribution distance.

SEG and DET follow the Cell Tracking Challenge conventions: a predicted
region claims a reference region when it covers more than half of it, SEG
averages the IoU of the claimed pairs, and DET charges weighted costs for
splits, misses and spurious objects. The distribution distance is an
unbiased kernel MMD estimate computed per 2D slice, averaged over random
slice subsets and the three orthogonal plane directions, with a pluggable
per-slice feature extractor.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np

from .volume import IntensityVolume, LabelVolume


@dataclass(frozen=True)
class RegionMatch:
    """One reference region and the prediction that claimed it, if any."""

    gt_label: int
    pred_label: int  # 0 when unmatched
    intersection: int
    iou: float


@dataclass(frozen=True)
class DetCounts:
    """Detection error tally: misses, spurious objects, required splits."""

    fn: int
    fp: int
    ns: int
    n_gt: int

    def __post_init__(self):
        if min(self.fn, self.fp, self.ns, self.n_gt) < 0:
            raise ValueError("counts must be non-negative")

    def to_dict(self) -> dict:
        return {"FN": self.fn, "FP": self.fp, "NS": self.ns, "n_gt": self.n_gt}


def _check_pair(gt: LabelVolume, pred: LabelVolume) -> None:
    if gt.geometry != pred.geometry:
        raise ValueError(f"geometry mismatch: {gt.geometry} vs {pred.geometry}")
    if not (gt.data != 0).any():
        raise ValueError("reference volume has no labeled objects")


def _overlap_maps(gt: LabelVolume, pred: LabelVolume):
    g = gt.data.ravel()
    p = pred.data.ravel()
    gt_labels, gt_counts = np.unique(g[g != 0], return_counts=True)
    pred_labels, pred_counts = np.unique(p[p != 0], return_counts=True)
    gt_sizes = dict(zip(gt_labels.tolist(), gt_counts.tolist()))
    pred_sizes = dict(zip(pred_labels.tolist(), pred_counts.tolist()))
    both = (g != 0) & (p != 0)
    inter: dict[tuple[int, int], int] = {}
    if both.any():
        key = g[both].astype(np.int64) * (int(p.max()) + 1) + p[both].astype(np.int64)
        uk, uc = np.unique(key, return_counts=True)
        base = int(p.max()) + 1
        for k, c in zip(uk.tolist(), uc.tolist()):
            inter[(k // base, k % base)] = c
    return gt_sizes, pred_sizes, inter


def match_regions(gt: LabelVolume, pred: LabelVolume) -> list[RegionMatch]:
    """Per reference region, the majority-overlap prediction and its IoU.

    A prediction claims a region only when the intersection exceeds half the
    region's size; at most one prediction can do so.
    """
    _check_pair(gt, pred)
    gt_sizes, pred_sizes, inter = _overlap_maps(gt, pred)
    best: dict[int, tuple[int, int]] = {}
    for (gl, pl), c in inter.items():
        if 2 * c > gt_sizes[gl]:
            best[gl] = (pl, c)
    out = []
    for gl in sorted(gt_sizes):
        if gl in best:
            pl, c = best[gl]
            union = gt_sizes[gl] + pred_sizes[pl] - c
            out.append(RegionMatch(int(gl), int(pl), int(c), c / union))
        else:
            out.append(RegionMatch(int(gl), 0, 0, 0.0))
    return out


def seg_score(gt: LabelVolume, pred: LabelVolume) -> float:
    """Mean IoU over reference regions; unmatched regions score zero."""
    matches = match_regions(gt, pred)
    return float(np.mean([m.iou for m in matches]))


def det_counts(gt: LabelVolume, pred: LabelVolume) -> DetCounts:
    """Tally detection errors under the majority-overlap assignment."""
    matches = match_regions(gt, pred)
    _, pred_sizes, _ = _overlap_maps(gt, pred)
    assigned: dict[int, int] = {}
    for m in matches:
        if m.pred_label != 0:
            assigned[m.pred_label] = assigned.get(m.pred_label, 0) + 1
    fn = sum(1 for m in matches if m.pred_label == 0)
    fp = sum(1 for pl in pred_sizes if pl not in assigned)
    ns = sum(max(0, c - 1) for c in assigned.values())
    return DetCounts(fn=fn, fp=fp, ns=ns, n_gt=len(matches))


def det_score(gt: LabelVolume, pred: LabelVolume) -> float:
    """Detection accuracy in [0, 1]: 1 minus the normalized repair cost.

    Repairing the prediction costs 5 per required split, 10 per missed
    region and 1 per spurious prediction; the cost of building the reference
    from nothing (10 per region) normalizes the total.
    """
    c = det_counts(gt, pred)
    aogm_d = 5.0 * c.ns + 10.0 * c.fn + 1.0 * c.fp
    aogm_0 = 10.0 * c.n_gt
    return 1.0 - min(aogm_d, aogm_0) / aogm_0


class FeatureExtractor(Protocol):
    """Maps a 2D slice to a fixed-length feature vector of length `dim`."""

    dim: int

    def __call__(self, plane: np.ndarray) -> np.ndarray: ...


class HistogramFeatures:
    """Default slice features: intensity and gradient-magnitude histograms.

    Each histogram has `bins` bins over a fixed value range and is
    normalized to sum 1, so the feature vector has length 2 * bins and is
    comparable across slices of different sizes.
    """

    def __init__(self, value_range: tuple[float, float] = (0.0, 1.0), bins: int = 64):
        lo, hi = (float(value_range[0]), float(value_range[1]))
        if not np.isfinite([lo, hi]).all() or hi <= lo:
            raise ValueError(f"value_range must be finite with hi > lo, got {value_range}")
        if bins < 1:
            raise ValueError(f"bins must be >= 1, got {bins}")
        self.value_range = (lo, hi)
        self.bins = int(bins)
        self.dim = 2 * self.bins

    def __call__(self, plane: np.ndarray) -> np.ndarray:
        plane = np.asarray(plane, dtype=np.float64)
        lo, hi = self.value_range
        vals = np.clip(plane, lo, hi)
        h1, _ = np.histogram(vals, bins=self.bins, range=(lo, hi))
        gy, gx = np.gradient(plane)
        mag = np.clip(np.hypot(gy, gx), 0.0, hi - lo)
        h2, _ = np.histogram(mag, bins=self.bins, range=(0.0, hi - lo))
        feat = np.concatenate([h1 / plane.size, h2 / plane.size])
        return feat.astype(np.float64)


def mmd2_unbiased(fa: np.ndarray, fb: np.ndarray) -> float:
    """Unbiased squared MMD with the cubic kernel (x.y/d + 1)^3.

    Within-set sums exclude the diagonal, so the estimate is unbiased and
    can dip below zero for close distributions.
    """
    fa = np.asarray(fa, dtype=np.float64)
    fb = np.asarray(fb, dtype=np.float64)
    if fa.ndim != 2 or fb.ndim != 2 or fa.shape[1] != fb.shape[1]:
        raise ValueError(f"expected n x d and m x d arrays, got {fa.shape} and {fb.shape}")
    n, d = fa.shape
    m = fb.shape[0]
    if n < 2 or m < 2:
        raise ValueError(f"need at least 2 vectors per side, got {n} and {m}")
    kaa = (fa @ fa.T / d + 1.0) ** 3
    kbb = (fb @ fb.T / d + 1.0) ** 3
    kab = (fa @ fb.T / d + 1.0) ** 3
    term_a = (kaa.sum() - np.trace(kaa)) / (n * (n - 1))
    term_b = (kbb.sum() - np.trace(kbb)) / (m * (m - 1))
    term_ab = 2.0 * kab.mean()
    return float(term_a + term_b - term_ab)


def _slice_features(data: np.ndarray, axis: int, fx: FeatureExtractor) -> np.ndarray:
    planes = np.moveaxis(data, axis, 0)
    feats = np.stack([fx(p) for p in planes])
    if not np.isfinite(feats).all():
        raise ValueError("feature extractor produced non-finite values")
    return feats


def kid_volumes(
    a: IntensityVolume,
    b: IntensityVolume,
    fx: FeatureExtractor,
    subset_size: int = 100,
    n_subsets: int = 10,
    seed: int = 0,
) -> float:
    """Slice-wise distribution distance between two volumes.

    For each plane direction, per-slice features of both volumes feed the
    unbiased MMD estimator on `n_subsets` random slice subsets of at most
    `subset_size` slices; the final value averages the three directions.
    """
    if subset_size < 2 or n_subsets < 1:
        raise ValueError("subset_size must be >= 2 and n_subsets >= 1")
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed))))
    direction_means = []
    for axis in range(3):
        if a.shape[axis] < 2 or b.shape[axis] < 2:
            raise ValueError(
                f"axis {axis} has fewer than 2 slices ({a.shape[axis]} and {b.shape[axis]})"
            )
        fa = _slice_features(a.data, axis, fx)
        fb = _slice_features(b.data, axis, fx)
        sa = min(subset_size, fa.shape[0])
        sb = min(subset_size, fb.shape[0])
        vals = []
        for _ in range(n_subsets):
            ia = rng.choice(fa.shape[0], size=sa, replace=False)
            ib = rng.choice(fb.shape[0], size=sb, replace=False)
            vals.append(mmd2_unbiased(fa[ia], fb[ib]))
        direction_means.append(float(np.mean(vals)))
    return float(np.mean(direction_means))
