"""Nucleus prototype extraction and placement into simulated cells.

Prototypes are tight crops of annotated nuclei (binary mask plus the
masked intensity signal). Placement, per cell in ascending label order:
draw a prototype uniformly, rotate its long axis onto the cell's long
axis, scale it so its volume is a fixed fraction of the cell volume,
then try candidate centers drawn from a Gaussian around the cell
centroid until enough of the nucleus falls inside the cell. Nuclei are
clipped to their cell on placement, so nucleus labels always nest inside
same-labeled cells.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .morphology import PrincipalFrame, principal_axes
from .volume import IntensityVolume, LabelVolume, VolumeGeometry, load_volume, save_volume


@dataclass
class NucleusPrototype:
    """Tight binary mask + masked intensity of one annotated nucleus."""

    mask: np.ndarray
    intensity: np.ndarray
    spacing: tuple[float, float, float]
    frame: PrincipalFrame = None
    source_label: int = 0

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=bool)
        self.intensity = np.asarray(self.intensity, dtype=np.float32)
        if self.mask.ndim != 3 or self.mask.shape != self.intensity.shape:
            raise ValueError(
                f"mask {self.mask.shape} and intensity {self.intensity.shape} must be matching 3D arrays"
            )
        if not self.mask.any():
            raise ValueError("prototype mask is empty")
        if self.intensity[~self.mask].any():
            raise ValueError("intensity must be zero outside the mask")
        for axis in range(3):
            proj = self.mask.any(axis=tuple(i for i in range(3) if i != axis))
            if not (proj[0] and proj[-1]):
                raise ValueError("prototype mask is not tightly cropped")
        self.spacing = tuple(float(s) for s in self.spacing)
        if self.frame is None:
            self.frame = _mask_frame(self.mask, self.spacing)

    @property
    def voxel_count(self) -> int:
        return int(self.mask.sum())

    @property
    def volume_um3(self) -> float:
        sz, sy, sx = self.spacing
        return self.voxel_count * sz * sy * sx


def _mask_frame(mask: np.ndarray, spacing) -> PrincipalFrame:
    v = LabelVolume(VolumeGeometry(mask.shape, tuple(spacing)), mask.astype(np.uint8))
    return principal_axes(v, 1)


def _tight_crop(mask: np.ndarray, *others):
    idx = np.argwhere(mask)
    lo = idx.min(axis=0)
    hi = idx.max(axis=0) + 1
    sl = tuple(slice(a, b) for a, b in zip(lo, hi))
    return (mask[sl],) + tuple(o[sl] for o in others)


@dataclass
class PrototypeDB:
    prototypes: list[NucleusPrototype]

    def __len__(self) -> int:
        return len(self.prototypes)

    def save(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        index = []
        for i, p in enumerate(self.prototypes):
            mask_name = f"prototype_{i:03d}_mask.rvol"
            int_name = f"prototype_{i:03d}_intensity.rvol"
            geometry = VolumeGeometry(p.mask.shape, p.spacing)
            save_volume(
                LabelVolume(geometry, p.mask.astype(np.uint8)), directory / mask_name
            )
            save_volume(
                IntensityVolume(geometry, p.intensity), directory / int_name
            )
            index.append(
                {"mask": mask_name, "intensity": int_name, "source_label": p.source_label}
            )
        (directory / "index.json").write_text(
            json.dumps({"prototypes": index}, indent=2, sort_keys=True)
        )

    @classmethod
    def load(cls, directory) -> "PrototypeDB":
        directory = Path(directory)
        index_path = directory / "index.json"
        if not index_path.exists():
            raise FileNotFoundError(f"no prototype index at {index_path}")
        index = json.loads(index_path.read_text())
        prototypes = []
        for entry in index["prototypes"]:
            mask_v = load_volume(directory / entry["mask"], kind="label")
            int_v = load_volume(directory / entry["intensity"], kind="intensity")
            prototypes.append(
                NucleusPrototype(
                    mask=mask_v.data > 0,
                    intensity=int_v.data,
                    spacing=mask_v.geometry.spacing,
                    source_label=int(entry.get("source_label", 0)),
                )
            )
        return cls(prototypes)


@dataclass(frozen=True)
class PlacementConfig:
    nc_volume_ratio: float = 0.4
    overlap_threshold: float = 0.8
    position_sigma_factor: float = 0.25
    max_position_attempts: int = 10
    max_prototype_attempts: int = 5

    def __post_init__(self):
        if not 0 < self.nc_volume_ratio < 1:
            raise ValueError(f"nc_volume_ratio must be in (0, 1), got {self.nc_volume_ratio}")
        if not 0 < self.overlap_threshold <= 1:
            raise ValueError(f"overlap_threshold must be in (0, 1], got {self.overlap_threshold}")
        if self.position_sigma_factor <= 0:
            raise ValueError(f"position_sigma_factor must be > 0, got {self.position_sigma_factor}")
        if self.max_position_attempts < 1 or self.max_prototype_attempts < 1:
            raise ValueError("attempt budgets must be >= 1")


def extract_prototypes(
    intensity: IntensityVolume, labels: LabelVolume, ids: list[int]
) -> PrototypeDB:
    """Tight-crop one prototype per requested label id."""
    if intensity.geometry != labels.geometry:
        raise ValueError(
            f"geometry mismatch: {intensity.geometry} vs {labels.geometry}"
        )
    present = set(labels.labels())
    prototypes = []
    for lab in ids:
        if lab not in present:
            raise ValueError(f"label {lab} not present in annotation volume")
        mask = labels.data == lab
        mask_c, int_c = _tight_crop(mask, intensity.data)
        masked = np.where(mask_c, int_c, 0).astype(np.float32)
        prototypes.append(
            NucleusPrototype(
                mask=mask_c,
                intensity=masked,
                spacing=labels.geometry.spacing,
                source_label=int(lab),
            )
        )
    return PrototypeDB(prototypes)


def _check_rotation(rotation: np.ndarray) -> np.ndarray:
    rotation = np.asarray(rotation, dtype=np.float64)
    if rotation.shape != (3, 3):
        raise ValueError(f"rotation must be 3x3, got {rotation.shape}")
    if not np.allclose(rotation @ rotation.T, np.eye(3), atol=1e-6):
        raise ValueError("rotation matrix is not orthonormal")
    if not math.isclose(float(np.linalg.det(rotation)), 1.0, abs_tol=1e-6):
        raise ValueError("rotation matrix must have determinant +1")
    return rotation


def _nearest_mask(
    mask: np.ndarray, matrix: np.ndarray, offset: np.ndarray, shape: tuple[int, ...]
) -> np.ndarray:
    # hand-rolled nearest-neighbor pull; ndimage's order=0 spline path
    # missamples at fractional coordinates and loses volume on upscales
    idx = np.indices(shape, dtype=np.float64).reshape(3, -1)
    src = matrix @ idx + offset[:, None]
    near = np.floor(src + 0.5).astype(np.intp)
    dims = np.array(mask.shape, dtype=np.intp)[:, None]
    inside = ((near >= 0) & (near < dims)).all(axis=0)
    out = np.zeros(idx.shape[1], dtype=bool)
    hit = near[:, inside]
    out[inside] = mask[hit[0], hit[1], hit[2]]
    return out.reshape(shape)


def resample_prototype(
    p: NucleusPrototype,
    rotation: np.ndarray,
    scale: float,
    out_spacing: tuple[float, float, float] | None = None,
) -> NucleusPrototype:
    """Rigid rotation + isotropic scale onto a (possibly different) grid.

    The mask is resampled nearest-neighbor, the intensity trilinearly;
    both land in a tight output box. Physical volume scales by scale³ up
    to digitization error.
    """
    rotation = _check_rotation(rotation)
    if scale <= 0:
        raise ValueError(f"scale must be > 0, got {scale}")
    out_spacing = p.spacing if out_spacing is None else tuple(float(s) for s in out_spacing)
    s_in = np.diag(p.spacing)
    s_out = np.diag(out_spacing)
    r_inv = rotation.T
    # corners of the input content in physical space, forward-mapped
    n = np.array(p.mask.shape) - 1
    corners = np.array(
        [[z, y, x] for z in (0, n[0]) for y in (0, n[1]) for x in (0, n[2])],
        dtype=np.float64,
    )
    fwd = (scale * (rotation @ (corners @ s_in).T)).T
    lo = fwd.min(axis=0) - np.asarray(out_spacing)
    hi = fwd.max(axis=0) + np.asarray(out_spacing)
    shape = tuple(int(np.ceil((h - l) / s)) + 1 for l, h, s in zip(lo, hi, out_spacing))
    matrix = np.linalg.inv(s_in) @ r_inv @ s_out / scale
    offset = np.linalg.inv(s_in) @ r_inv @ lo / scale
    mask = _nearest_mask(p.mask, matrix, offset, shape)
    if not mask.any():
        raise ValueError("resampled mask is empty; scale too small for the grid")
    # grid-constant: zero-padded interpolation so the outer half-voxel
    # shell of the box still blends with the edge values instead of cval
    intensity = ndimage.affine_transform(
        p.intensity, matrix, offset=offset, output_shape=shape,
        order=1, mode="grid-constant", cval=0.0,
    )
    intensity = np.where(mask, intensity, 0.0).astype(np.float32)
    mask, intensity = _tight_crop(mask, intensity)
    return NucleusPrototype(
        mask=mask, intensity=intensity, spacing=out_spacing, source_label=p.source_label
    )


def rotation_between(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Minimal rotation taking direction u onto direction ±v (sign chosen acute)."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0 or nv == 0:
        return np.eye(3)
    u = u / nu
    v = v / nv
    if u @ v < 0:
        v = -v
    k = np.cross(u, v)
    s = np.linalg.norm(k)
    c = float(u @ v)
    if s < 1e-12:
        return np.eye(3)
    k = k / s
    kx = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + math.sin(math.atan2(s, c)) * kx + (1 - c) * (kx @ kx)


def _is_degenerate(frame: PrincipalFrame, rel_tol: float = 1e-9) -> bool:
    top = frame.eigenvalues[0]
    return top <= 0 or (top - frame.eigenvalues[2]) <= rel_tol * top


@dataclass
class PlacementReport:
    placed: list[int] = field(default_factory=list)
    skipped: list[int] = field(default_factory=list)
    cells: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"placed": self.placed, "skipped": self.skipped, "cells": self.cells}


def place_nuclei(
    cells: LabelVolume, db: PrototypeDB, cfg: PlacementConfig, seed: int
) -> tuple[IntensityVolume, LabelVolume, PlacementReport]:
    """Place one nucleus per cell where the attempt budget allows.

    Returns the accumulated intensity phantom, the nucleus label volume
    (labels match cell labels), and a per-cell attempt report. Cells keep
    their own random substream, so outcomes for one cell do not depend on
    how many attempts earlier cells consumed.
    """
    if len(db) == 0:
        raise ValueError("prototype database is empty")
    labels = cells.labels()
    if not labels:
        raise ValueError("cell volume has no cells")
    spacing = np.asarray(cells.geometry.spacing)
    voxel_volume = cells.geometry.voxel_volume
    shape = cells.data.shape
    phantom = np.zeros(shape, dtype=np.float32)
    nuclei = np.zeros(shape, dtype=cells.data.dtype)
    report = PlacementReport()
    counts = np.bincount(cells.data.ravel())

    for lab in labels:
        rng = np.random.Generator(
            np.random.Philox(np.random.SeedSequence([seed, int(lab)]))
        )
        cell_mask = cells.data == lab
        cell_volume = float(counts[lab]) * voxel_volume
        cell_frame = principal_axes(cells, lab)
        centroid_um = cell_frame.centroid
        r_eq = (3.0 * cell_volume / (4.0 * math.pi)) ** (1.0 / 3.0)
        sigma = cfg.position_sigma_factor * r_eq
        entry = {
            "label": int(lab),
            "placed": False,
            "prototype_draws": [],
            "position_attempts": 0,
            "overlap": None,
        }
        done = False
        for _ in range(cfg.max_prototype_attempts):
            proto_idx = int(rng.integers(0, len(db)))
            entry["prototype_draws"].append(proto_idx)
            proto = db.prototypes[proto_idx]
            scale = (cfg.nc_volume_ratio * cell_volume / proto.volume_um3) ** (1.0 / 3.0)
            if _is_degenerate(cell_frame) or _is_degenerate(proto.frame):
                rot = np.eye(3)
            else:
                rot = rotation_between(proto.frame.major_axis, cell_frame.major_axis)
            try:
                fitted = resample_prototype(
                    proto, rot, scale, out_spacing=cells.geometry.spacing
                )
            except ValueError:
                continue
            n_vox = fitted.voxel_count
            centroid_vox = np.argwhere(fitted.mask).mean(axis=0)
            for _ in range(cfg.max_position_attempts):
                entry["position_attempts"] += 1
                center_um = rng.normal(loc=centroid_um, scale=sigma, size=3)
                center_vox = center_um / spacing
                corner = np.rint(center_vox - centroid_vox).astype(np.int64)
                inside = _count_overlap(fitted.mask, corner, cell_mask)
                overlap = inside / n_vox
                if overlap >= cfg.overlap_threshold:
                    _stamp(
                        fitted, corner, cell_mask, phantom, nuclei, np.uint64(lab)
                    )
                    entry["placed"] = True
                    entry["overlap"] = overlap
                    report.placed.append(int(lab))
                    done = True
                    break
            if done:
                break
        if not done:
            report.skipped.append(int(lab))
        report.cells.append(entry)
    return (
        IntensityVolume(cells.geometry, phantom),
        LabelVolume(cells.geometry, nuclei),
        report,
    )


def _clipped_window(mask_shape, corner, vol_shape):
    src, dst = [], []
    for c, m, n in zip(corner, mask_shape, vol_shape):
        a = max(0, -c)
        b = min(m, n - c)
        if a >= b:
            return None
        src.append(slice(a, b))
        dst.append(slice(c + a, c + b))
    return tuple(src), tuple(dst)


def _count_overlap(mask, corner, cell_mask) -> int:
    """Nucleus voxels landing on the cell; out-of-volume parts count as misses."""
    win = _clipped_window(mask.shape, corner, cell_mask.shape)
    if win is None:
        return 0
    src, dst = win
    return int((mask[src] & cell_mask[dst]).sum())


def _stamp(proto, corner, cell_mask, phantom, nuclei, label):
    win = _clipped_window(proto.mask.shape, corner, cell_mask.shape)
    if win is None:
        return
    src, dst = win
    keep = proto.mask[src] & cell_mask[dst]
    phantom[dst][keep] = phantom[dst][keep] + proto.intensity[src][keep]
    nuclei_view = nuclei[dst]
    nuclei_view[keep] = label
