"""Label-mask preprocessing and per-cell morphological features.

The seven features extracted per cell: volume, surface area, volume-to-
surface ratio, minor and major axis length, sphericity and eccentricity.
Surface area is the 6-connected exposed-face count (faces to a different
label, to medium, or on the volume boundary) times the physical face
area, matching the lattice convention of the simulation engine. Axis
lengths follow the solid-ellipsoid convention: full length
2*sqrt(5*eigenvalue) of the voxel-center covariance in µm.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .volume import LabelVolume, VolumeGeometry

FEATURE_NAMES = (
    "volume",
    "surface_area",
    "va_ratio",
    "minor_axis_length",
    "major_axis_length",
    "sphericity",
    "eccentricity",
)

_STRUCT_6 = ndimage.generate_binary_structure(3, 1)


@dataclass
class FeatureTable:
    """Per-cell feature rows; columns ordered as FEATURE_NAMES."""

    labels: np.ndarray  # (n,) int64
    values: np.ndarray  # (n, 7) float64

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (self.labels.size, len(FEATURE_NAMES)):
            raise ValueError(
                f"values shape {self.values.shape} does not match "
                f"{self.labels.size} labels x {len(FEATURE_NAMES)} features"
            )

    def __len__(self) -> int:
        return self.labels.size

    def column(self, name: str) -> np.ndarray:
        return self.values[:, FEATURE_NAMES.index(name)]

    def row(self, label: int) -> dict:
        idx = np.flatnonzero(self.labels == label)
        if idx.size == 0:
            raise KeyError(f"label {label} not in table")
        return dict(zip(FEATURE_NAMES, self.values[idx[0]]))

    def to_csv(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(("label",) + FEATURE_NAMES)
            for lab, row in zip(self.labels, self.values):
                w.writerow([int(lab)] + [repr(float(x)) for x in row])

    @classmethod
    def from_csv(cls, path) -> "FeatureTable":
        with open(path, newline="") as f:
            r = csv.reader(f)
            header = next(r)
            if tuple(header) != ("label",) + FEATURE_NAMES:
                raise ValueError(f"unexpected feature CSV header {header}")
            labels, values = [], []
            for row in r:
                labels.append(int(row[0]))
                values.append([float(x) for x in row[1:]])
        return cls(np.array(labels, dtype=np.int64), np.array(values, dtype=np.float64).reshape(len(labels), len(FEATURE_NAMES)))


@dataclass
class PrincipalFrame:
    """Centroid (µm), orthonormal axes by descending eigenvalue, eigenvalues (µm²)."""

    centroid: np.ndarray  # (3,) µm, (z, y, x)
    axes: np.ndarray      # (3, 3) rows are direction vectors
    eigenvalues: np.ndarray  # (3,) descending, >= 0

    @property
    def major_axis(self) -> np.ndarray:
        return self.axes[0]


def clean_labels(v: LabelVolume, min_voxels: int, min_z_span: int) -> LabelVolume:
    """Remove labels with fewer voxels or a smaller z extent than required."""
    if min_voxels < 0 or min_z_span < 0:
        raise ValueError("min_voxels and min_z_span must be >= 0")
    data = v.data
    max_label = int(data.max()) if data.size else 0
    if max_label == 0:
        return v.copy()
    counts = np.bincount(data.ravel(), minlength=max_label + 1)
    z_any = data.reshape(data.shape[0], -1)
    # z extent per label: last plane seen minus first plane seen, inclusive
    zmin = np.full(max_label + 1, data.shape[0], dtype=np.int64)
    zmax = np.full(max_label + 1, -1, dtype=np.int64)
    for z in range(data.shape[0]):
        present = np.unique(z_any[z])
        zmin[present] = np.minimum(zmin[present], z)
        zmax[present] = np.maximum(zmax[present], z)
    span = zmax - zmin + 1
    keep = (counts >= min_voxels) & (span >= min_z_span)
    keep[0] = True
    out = np.where(keep[data], data, 0)
    return LabelVolume(v.geometry, out.astype(data.dtype), dict(v.meta))


def close_and_dilate(v: LabelVolume, radius: int) -> LabelVolume:
    """Per-label binary closing then dilation (6-connected, ``radius`` iterations).

    Original nonzero voxels are never overwritten; contested medium voxels
    go to the nearest label (Euclidean distance to the label's original
    voxels, physical units), ties to the lower label id.
    """
    if radius < 1:
        raise ValueError(f"radius must be >= 1, got {radius}")
    data = v.data
    out = data.copy()
    objects = ndimage.find_objects(data)
    best_dist = np.full(data.shape, np.inf, dtype=np.float64)
    best_label = np.zeros(data.shape, dtype=out.dtype)
    pad = 2 * radius + 1
    for label0, sl in enumerate(objects, start=1):
        if sl is None:
            continue
        psl = tuple(
            slice(max(s.start - pad, 0), min(s.stop + pad, n))
            for s, n in zip(sl, data.shape)
        )
        sub = data[psl]
        mask = sub == label0
        # zero-pad before closing: scipy's erosion treats outside as
        # foreground-free, which would eat voxels near the volume edge
        ppad = radius + 1
        mask_p = np.pad(mask, ppad)
        closed = ndimage.binary_closing(mask_p, structure=_STRUCT_6, iterations=radius)
        grown = ndimage.binary_dilation(closed, structure=_STRUCT_6, iterations=radius)
        grown = grown[ppad:-ppad, ppad:-ppad, ppad:-ppad]
        claims = grown & (sub == 0)
        if not claims.any():
            continue
        dist = ndimage.distance_transform_edt(~mask, sampling=v.geometry.spacing)
        take = claims & (dist < best_dist[psl])
        best_dist[psl][take] = dist[take]
        best_label[psl][take] = label0
    claimed = best_label > 0
    out[claimed] = best_label[claimed]
    return LabelVolume(v.geometry, out, dict(v.meta))


def _surface_areas(data: np.ndarray, geometry: VolumeGeometry, max_label: int) -> np.ndarray:
    """Exposed-face area per label in µm² (6-connected, boundary counts)."""
    areas = np.zeros(max_label + 1, dtype=np.float64)
    for axis, face_area in enumerate(geometry.face_areas):
        lo = [slice(None)] * 3
        hi = [slice(None)] * 3
        lo[axis] = slice(None, -1)
        hi[axis] = slice(1, None)
        a = data[tuple(lo)]
        b = data[tuple(hi)]
        neq = a != b
        counts = np.bincount(a[neq], minlength=max_label + 1).astype(np.float64)
        counts += np.bincount(b[neq], minlength=max_label + 1)
        counts += np.bincount(np.take(data, 0, axis=axis).ravel(), minlength=max_label + 1)
        counts += np.bincount(np.take(data, -1, axis=axis).ravel(), minlength=max_label + 1)
        areas += face_area * counts
    areas[0] = 0.0
    return areas


def _label_covariance(coords_um: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Centroid and population covariance of voxel-center coordinates."""
    centroid = coords_um.mean(axis=0)
    d = coords_um - centroid
    cov = d.T @ d / coords_um.shape[0]
    return centroid, cov


def extract_features(v: LabelVolume) -> FeatureTable:
    """One feature row per nonzero label; see module docstring for conventions."""
    data = v.data
    max_label = int(data.max()) if data.size else 0
    if max_label == 0:
        return FeatureTable(np.empty(0, dtype=np.int64), np.empty((0, len(FEATURE_NAMES))))
    counts = np.bincount(data.ravel(), minlength=max_label + 1)
    areas = _surface_areas(data, v.geometry, max_label)
    spacing = np.asarray(v.geometry.spacing)
    voxel_volume = v.geometry.voxel_volume
    labels = np.flatnonzero(counts[1:]) + 1
    objects = ndimage.find_objects(data)
    rows = np.empty((labels.size, len(FEATURE_NAMES)), dtype=np.float64)
    for i, label0 in enumerate(labels):
        sl = objects[label0 - 1]
        offset = np.array([s.start for s in sl], dtype=np.float64)
        coords = np.argwhere(data[sl] == label0) + offset
        _, cov = _label_covariance(coords * spacing)
        eigvals = np.clip(np.linalg.eigvalsh(cov), 0.0, None)
        minor = 2.0 * np.sqrt(5.0 * eigvals[0])
        major = 2.0 * np.sqrt(5.0 * eigvals[2])
        volume = counts[label0] * voxel_volume
        area = areas[label0]
        sphericity = np.pi ** (1.0 / 3.0) * (6.0 * volume) ** (2.0 / 3.0) / area
        ecc = np.sqrt(max(0.0, 1.0 - (minor / major) ** 2)) if major > 0 else 0.0
        rows[i] = (volume, area, volume / area, minor, major, sphericity, ecc)
    return FeatureTable(labels.astype(np.int64), rows)


def _canonical_frame() -> np.ndarray:
    return np.eye(3)


def _fix_signs(axes: np.ndarray) -> np.ndarray:
    out = axes.copy()
    for i in range(3):
        j = np.argmax(np.abs(out[i]))
        if out[i, j] < 0:
            out[i] = -out[i]
    return out


def principal_axes(v: LabelVolume, label: int, rel_tol: float = 1e-9) -> PrincipalFrame:
    """Centroid and covariance eigen-frame of one label in physical coordinates.

    Degenerate spectra (all eigenvalues equal within rel_tol of the largest,
    including the single-voxel zero case) fall back to the canonical z/y/x
    basis so repeated runs are reproducible.
    """
    coords = np.argwhere(v.data == label)
    if coords.size == 0:
        raise ValueError(f"label {label} not present in volume")
    spacing = np.asarray(v.geometry.spacing)
    centroid, cov = _label_covariance(coords * spacing)
    eigvals, eigvecs = np.linalg.eigh(cov)
    eigvals = np.clip(eigvals[::-1], 0.0, None)
    axes = eigvecs.T[::-1]
    scale = eigvals[0]
    if scale <= 0 or (eigvals[0] - eigvals[2]) <= rel_tol * scale:
        axes = _canonical_frame()
    else:
        axes = _fix_signs(axes)
    return PrincipalFrame(centroid=centroid, axes=axes, eigenvalues=eigvals)


def wasserstein_1d(a, b) -> float:
    """Exact 1-Wasserstein distance between two empirical distributions.

    Computed by integrating |F_a^{-1} - F_b^{-1}| over the merged quantile
    grid, so unequal sample sizes are handled exactly.
    """
    a = np.sort(np.asarray(a, dtype=np.float64))
    b = np.sort(np.asarray(b, dtype=np.float64))
    if a.size == 0 or b.size == 0:
        raise ValueError("wasserstein_1d requires non-empty samples")
    if not (np.isfinite(a).all() and np.isfinite(b).all()):
        raise ValueError("wasserstein_1d requires finite samples")
    # merged quantile breakpoints of both empirical CDFs
    qa = np.arange(1, a.size) / a.size
    qb = np.arange(1, b.size) / b.size
    q = np.union1d(np.union1d(qa, qb), [0.0, 1.0])
    widths = np.diff(q)
    mids = (q[:-1] + q[1:]) / 2.0
    ia = np.minimum((mids * a.size).astype(np.int64), a.size - 1)
    ib = np.minimum((mids * b.size).astype(np.int64), b.size - 1)
    return float(np.sum(widths * np.abs(a[ia] - b[ib])))


def iou_per_cell(a: LabelVolume, b: LabelVolume) -> dict[int, float]:
    """IoU of each label in ``a`` against the same label id in ``b``."""
    if a.geometry != b.geometry:
        raise ValueError(f"geometry mismatch: {a.geometry} vs {b.geometry}")
    max_label = int(max(a.data.max(), b.data.max())) if a.data.size else 0
    counts_a = np.bincount(a.data.ravel(), minlength=max_label + 1)
    counts_b = np.bincount(b.data.ravel(), minlength=max_label + 1)
    same = (a.data == b.data) & (a.data != 0)
    inter = np.bincount(a.data[same], minlength=max_label + 1)
    out = {}
    for label0 in np.flatnonzero(counts_a[1:]) + 1:
        union = counts_a[label0] + counts_b[label0] - inter[label0]
        out[int(label0)] = float(inter[label0] / union)
    return out
