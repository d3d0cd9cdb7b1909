"""Synthetic test objects: packed cell aggregates and simple shapes.

These stand in for segmented microscopy volumes in tests, demos, and
parameter scans when no real annotation is at hand.
"""

from __future__ import annotations

import numpy as np

from .volume import LabelVolume, VolumeGeometry


def ellipsoid(
    shape: tuple[int, int, int],
    spacing: tuple[float, float, float],
    center_um: tuple[float, float, float],
    radii_um: tuple[float, float, float],
    label: int = 1,
) -> LabelVolume:
    """Solid digitized ellipsoid; voxel centers inside get ``label``."""
    if any(r <= 0 for r in radii_um):
        raise ValueError(f"radii must be positive, got {radii_um}")
    geometry = VolumeGeometry(shape, spacing)
    coords = [np.arange(n) * s for n, s in zip(shape, spacing)]
    zz, yy, xx = np.meshgrid(*coords, indexing="ij")
    r2 = (
        ((zz - center_um[0]) / radii_um[0]) ** 2
        + ((yy - center_um[1]) / radii_um[1]) ** 2
        + ((xx - center_um[2]) / radii_um[2]) ** 2
    )
    data = np.where(r2 <= 1.0, np.uint16(label), np.uint16(0))
    return LabelVolume(geometry, data)


def voronoi_spheroid(
    shape: tuple[int, int, int],
    spacing: tuple[float, float, float],
    n_cells: int,
    seed: int,
    radius_fraction: float = 0.9,
) -> LabelVolume:
    """Compact aggregate of ``n_cells`` touching cells filling an ellipsoid.

    Cell seed points are drawn uniformly inside the ellipsoid inscribed in
    the volume (shrunk by ``radius_fraction``); every inside voxel joins
    the nearest seed in physical distance. Labels are 1..n_cells, all
    nonempty.
    """
    if n_cells < 1:
        raise ValueError(f"n_cells must be >= 1, got {n_cells}")
    if not 0 < radius_fraction <= 1:
        raise ValueError(f"radius_fraction must be in (0, 1], got {radius_fraction}")
    geometry = VolumeGeometry(shape, spacing)
    spacing_arr = np.asarray(spacing, dtype=np.float64)
    extent = (np.asarray(shape) - 1) * spacing_arr
    center = extent / 2.0
    radii = extent / 2.0 * radius_fraction
    if np.any(radii <= 0):
        raise ValueError("volume too small for an inscribed ellipsoid")

    coords = [np.arange(n) * s for n, s in zip(shape, spacing)]
    zz, yy, xx = np.meshgrid(*coords, indexing="ij")
    r2 = (
        ((zz - center[0]) / radii[0]) ** 2
        + ((yy - center[1]) / radii[1]) ** 2
        + ((xx - center[2]) / radii[2]) ** 2
    )
    inside = r2 <= 1.0
    n_inside = int(inside.sum())
    if n_inside < n_cells:
        raise ValueError(
            f"ellipsoid holds {n_inside} voxels, cannot seat {n_cells} cells"
        )

    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    inside_idx = np.argwhere(inside)
    pick = rng.choice(n_inside, size=n_cells, replace=False)
    seeds_um = inside_idx[pick] * spacing_arr

    points = np.stack([zz[inside], yy[inside], xx[inside]], axis=1)
    best = np.zeros(points.shape[0], dtype=np.int64)
    best_d2 = np.full(points.shape[0], np.inf)
    for i, s in enumerate(seeds_um):
        d2 = ((points - s) ** 2).sum(axis=1)
        closer = d2 < best_d2
        best_d2[closer] = d2[closer]
        best[closer] = i + 1
    data = np.zeros(shape, dtype=np.uint16)
    data[inside] = best.astype(np.uint16)
    return LabelVolume(geometry, data)
