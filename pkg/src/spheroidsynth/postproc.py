"""From two-channel predictions back to instance labels.

Simulated cell borders become binary membrane walls; a predicted nuclei
channel is thresholded, split along those walls, cleaned with a binary
opening, and finally stamped with the simulated cell labels so every
surviving nucleus inherits the identity of the cell it sits in. Foreground
that lands on medium has no cell to inherit from and is dropped, which
doubles as artifact removal.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .volume import IntensityVolume, LabelVolume

_STRUCT6 = ndimage.generate_binary_structure(3, 1)


@dataclass(frozen=True)
class PostprocConfig:
    """Label extraction parameters.

    binarize_threshold: integer images read it as a fraction of the dtype
        maximum (must stay inside (0, 1)); float images use it as-is.
    opening_radius: iterations of 6-connected binary opening; 0 disables.
    membrane_thickness: half-width of the wall drawn around label borders.
    """

    binarize_threshold: float = 0.5
    opening_radius: int = 1
    membrane_thickness: int = 1

    def __post_init__(self):
        if not np.isfinite(self.binarize_threshold) or self.binarize_threshold <= 0:
            raise ValueError(
                f"binarize_threshold must be finite and > 0, got {self.binarize_threshold}"
            )
        if int(self.opening_radius) != self.opening_radius or self.opening_radius < 0:
            raise ValueError(f"opening_radius must be an integer >= 0, got {self.opening_radius}")
        if int(self.membrane_thickness) != self.membrane_thickness or self.membrane_thickness < 1:
            raise ValueError(
                f"membrane_thickness must be an integer >= 1, got {self.membrane_thickness}"
            )
        object.__setattr__(self, "opening_radius", int(self.opening_radius))
        object.__setattr__(self, "membrane_thickness", int(self.membrane_thickness))

    def to_dict(self) -> dict:
        return {
            "binarize_threshold": self.binarize_threshold,
            "opening_radius": self.opening_radius,
            "membrane_thickness": self.membrane_thickness,
        }


def borders_to_binary_membrane(cells: LabelVolume, thickness: int = 1) -> IntensityVolume:
    """Mark every voxel that has a differently labeled voxel within reach.

    Reach is `thickness` steps of face connectivity, so walls are centered
    on each label interface and grow symmetrically into both sides. Voxels
    beyond the volume edge do not count as neighbors.
    """
    thickness = int(thickness)
    if thickness < 1:
        raise ValueError(f"thickness must be >= 1, got {thickness}")
    data = cells.data
    edge = np.zeros(data.shape, dtype=bool)
    for axis in range(3):
        front = [slice(None)] * 3
        back = [slice(None)] * 3
        front[axis] = slice(1, None)
        back[axis] = slice(None, -1)
        diff = data[tuple(front)] != data[tuple(back)]
        edge[tuple(front)] |= diff
        edge[tuple(back)] |= diff
    if thickness > 1 and edge.any():
        # a voxel within t steps of a differing label is within t-1 steps
        # of some adjacent differing pair, so dilation is exact here
        edge = ndimage.binary_dilation(edge, _STRUCT6, iterations=thickness - 1)
    return IntensityVolume(cells.geometry, edge.astype(np.uint8), dict(cells.meta))


def binarize(pred: IntensityVolume, threshold: float = 0.5) -> IntensityVolume:
    """Threshold a predicted channel into a 0/1 volume.

    Integer data compares against threshold * dtype max (threshold must lie
    in (0, 1)); floating data compares against the value directly.
    """
    if not np.isfinite(threshold) or threshold <= 0:
        raise ValueError(f"threshold must be finite and > 0, got {threshold}")
    data = pred.data
    if data.dtype.kind in "ui":
        if threshold >= 1:
            raise ValueError(
                f"integer data needs a fractional threshold in (0, 1), got {threshold}"
            )
        cutoff = threshold * np.iinfo(data.dtype).max
    else:
        cutoff = threshold
    out = (data >= cutoff).astype(np.uint8)
    return IntensityVolume(pred.geometry, out, dict(pred.meta))


def _require_binary(v: IntensityVolume, name: str) -> np.ndarray:
    data = v.data
    if data.dtype.kind not in "uib":
        raise ValueError(f"{name} must be an integer/boolean binary volume, got {data.dtype}")
    if data.size and int(data.max(initial=0)) > 1:
        raise ValueError(f"{name} must contain only 0 and 1")
    return data.astype(bool)


def split_and_assign(
    binary_nuclei: IntensityVolume,
    binary_membrane: IntensityVolume,
    cells: LabelVolume,
    opening_radius: int = 1,
) -> LabelVolume:
    """Split nuclei foreground along membranes and stamp cell identities.

    Foreground minus membrane is opened (6-connected, `opening_radius`
    iterations) and each remaining voxel takes the cell label underneath.
    Voxels over medium take label 0, so stray blobs vanish on their own.
    """
    opening_radius = int(opening_radius)
    if opening_radius < 0:
        raise ValueError(f"opening_radius must be >= 0, got {opening_radius}")
    if binary_nuclei.geometry != binary_membrane.geometry or binary_nuclei.geometry != cells.geometry:
        raise ValueError("binary_nuclei, binary_membrane and cells must share geometry")
    fg = _require_binary(binary_nuclei, "binary_nuclei")
    membrane = _require_binary(binary_membrane, "binary_membrane")
    fg = fg & ~membrane
    if opening_radius > 0 and fg.any():
        fg = ndimage.binary_opening(fg, _STRUCT6, iterations=opening_radius)
    out = np.where(fg, cells.data, 0).astype(cells.data.dtype)
    return LabelVolume(cells.geometry, out, dict(cells.meta))
