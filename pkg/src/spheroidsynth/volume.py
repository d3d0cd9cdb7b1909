"""Geometry-aware 3D volume containers and bit-exact file I/O.

All volumes are dense arrays in z-major (z, y, x) order with a physical
voxel spacing in micrometers. Two on-disk formats are supported:

* uncompressed grayscale multi-page TIFF (8/16-bit), with z spacing and
  xy resolution carried in ImageJ-style metadata, and
* RVOL, a trivially parseable raw format: little-endian binary payload at
  ``<path>`` plus a JSON sidecar header at ``<path>.json`` describing
  shape, spacing, dtype and axis order.

Label 0 is reserved for medium/background in label volumes.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import tifffile

RVOL_DTYPES = {
    "u8": np.dtype("<u1"),
    "u16": np.dtype("<u2"),
    "u32": np.dtype("<u4"),
    "f32": np.dtype("<f4"),
}
_DTYPE_NAMES = {v: k for k, v in RVOL_DTYPES.items()}


class VolumeIOError(Exception):
    """Base class for volume file I/O failures."""


class UnsupportedTiffError(VolumeIOError):
    """TIFF file is compressed, non-grayscale, or not 8/16-bit."""


class HeaderMismatchError(VolumeIOError):
    """RVOL header disagrees with the payload (size, dtype, ...)."""


class MissingSpacingWarning(UserWarning):
    """Raised when a TIFF carries no voxel spacing metadata."""


@dataclass(frozen=True)
class VolumeGeometry:
    """Shape (nz, ny, nx) and voxel spacing (sz, sy, sx) in micrometers."""

    shape: tuple[int, int, int]
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        shape = tuple(int(n) for n in self.shape)
        spacing = tuple(float(s) for s in self.spacing)
        if len(shape) != 3 or any(n < 1 for n in shape):
            raise ValueError(f"shape must be three positive integers, got {self.shape}")
        if len(spacing) != 3 or any(not np.isfinite(s) or s <= 0 for s in spacing):
            raise ValueError(f"spacing must be three finite positive values, got {self.spacing}")
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "spacing", spacing)

    @property
    def voxel_volume(self) -> float:
        """Volume of one voxel in µm³."""
        sz, sy, sx = self.spacing
        return sz * sy * sx

    @property
    def face_areas(self) -> tuple[float, float, float]:
        """Area in µm² of a voxel face normal to the z, y, x axis."""
        sz, sy, sx = self.spacing
        return (sy * sx, sz * sx, sz * sy)

    @property
    def n_voxels(self) -> int:
        nz, ny, nx = self.shape
        return nz * ny * nx


def _check_data(geometry: VolumeGeometry, data: np.ndarray) -> np.ndarray:
    data = np.asarray(data)
    if data.shape != geometry.shape:
        raise ValueError(f"data shape {data.shape} != geometry shape {geometry.shape}")
    return data


@dataclass
class LabelVolume:
    """3D lattice of non-negative integer cell/instance labels; 0 = medium."""

    geometry: VolumeGeometry
    data: np.ndarray
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        self.data = _check_data(self.geometry, self.data)
        if self.data.dtype.kind not in "ui":
            raise ValueError(f"label data must be integer, got {self.data.dtype}")
        if self.data.dtype.kind == "i" and self.data.size and int(self.data.min()) < 0:
            raise ValueError("label data must be non-negative")

    @classmethod
    def from_array(cls, data, spacing=(1.0, 1.0, 1.0)) -> "LabelVolume":
        data = np.asarray(data)
        return cls(VolumeGeometry(data.shape, tuple(spacing)), data)

    @property
    def shape(self):
        return self.geometry.shape

    @property
    def spacing(self):
        return self.geometry.spacing

    def labels(self) -> list[int]:
        """Sorted nonzero labels present in the volume."""
        u = np.unique(self.data)
        return [int(x) for x in u[u != 0]]

    def copy(self) -> "LabelVolume":
        return LabelVolume(self.geometry, self.data.copy(), dict(self.meta))


@dataclass
class IntensityVolume:
    """3D scalar image; unsigned 8/16-bit counts or real-valued data."""

    geometry: VolumeGeometry
    data: np.ndarray
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        self.data = _check_data(self.geometry, self.data)
        if self.data.dtype.kind == "f" and self.data.size and not np.isfinite(self.data).all():
            raise ValueError("intensity data must be finite")

    @classmethod
    def from_array(cls, data, spacing=(1.0, 1.0, 1.0)) -> "IntensityVolume":
        data = np.asarray(data)
        return cls(VolumeGeometry(data.shape, tuple(spacing)), data)

    @property
    def shape(self):
        return self.geometry.shape

    @property
    def spacing(self):
        return self.geometry.spacing

    def copy(self) -> "IntensityVolume":
        return IntensityVolume(self.geometry, self.data.copy(), dict(self.meta))


Volume = LabelVolume | IntensityVolume


def _wrap(kind: str, data: np.ndarray, geometry: VolumeGeometry, meta: dict) -> Volume:
    if kind == "label":
        return LabelVolume(geometry, data, meta)
    if kind == "intensity":
        return IntensityVolume(geometry, data, meta)
    raise ValueError(f"unknown volume kind {kind!r}")


def _infer_kind(data: np.ndarray) -> str:
    return "label" if data.dtype.kind in "ui" else "intensity"


# ---------------------------------------------------------------------------
# RVOL: raw little-endian payload + JSON sidecar header
# ---------------------------------------------------------------------------

def _rvol_header_path(path: Path) -> Path:
    return path.with_name(path.name + ".json")


def _save_rvol(v: Volume, path: Path) -> None:
    dt = np.dtype(v.data.dtype).newbyteorder("<")
    if dt not in _DTYPE_NAMES:
        raise VolumeIOError(
            f"RVOL supports dtypes {sorted(RVOL_DTYPES)}, cannot store {v.data.dtype}; cast first"
        )
    header = {
        "format": "rvol",
        "version": 1,
        "shape": list(v.geometry.shape),
        "spacing": list(v.geometry.spacing),
        "dtype": _DTYPE_NAMES[dt],
        "order": "zyx",
        "byte_order": "little",
        "kind": "label" if isinstance(v, LabelVolume) else "intensity",
    }
    payload = np.ascontiguousarray(v.data, dtype=dt).tobytes()
    path.write_bytes(payload)
    _rvol_header_path(path).write_text(json.dumps(header, sort_keys=True, indent=1) + "\n")


def _load_rvol(path: Path) -> Volume:
    hpath = _rvol_header_path(path)
    if not hpath.exists():
        raise HeaderMismatchError(f"missing RVOL header {hpath}")
    try:
        header = json.loads(hpath.read_text())
    except json.JSONDecodeError as e:
        raise HeaderMismatchError(f"unparseable RVOL header {hpath}: {e}") from e
    for key in ("shape", "dtype"):
        if key not in header:
            raise HeaderMismatchError(f"RVOL header {hpath} missing {key!r}")
    if header.get("order", "zyx") != "zyx":
        raise HeaderMismatchError(f"unsupported RVOL axis order {header.get('order')!r}")
    if header.get("byte_order", "little") != "little":
        raise HeaderMismatchError(f"unsupported RVOL byte order {header.get('byte_order')!r}")
    if header["dtype"] not in RVOL_DTYPES:
        raise HeaderMismatchError(f"unsupported RVOL dtype {header['dtype']!r}")
    dt = RVOL_DTYPES[header["dtype"]]
    shape = tuple(int(n) for n in header["shape"])
    payload = path.read_bytes()
    expected = int(np.prod(shape)) * dt.itemsize
    if len(payload) != expected:
        raise HeaderMismatchError(
            f"RVOL payload {path} is {len(payload)} bytes, header implies {expected}"
        )
    data = np.frombuffer(payload, dtype=dt).reshape(shape).copy()
    geometry = VolumeGeometry(shape, tuple(header.get("spacing", (1.0, 1.0, 1.0))))
    kind = header.get("kind", _infer_kind(data))
    return _wrap(kind, data, geometry, {"source": str(path)})


# ---------------------------------------------------------------------------
# TIFF: uncompressed grayscale multi-page, 8/16-bit
# ---------------------------------------------------------------------------

def _save_tiff(v: Volume, path: Path) -> None:
    data = v.data
    if data.dtype.kind == "f":
        raise UnsupportedTiffError("TIFF output is limited to 8/16-bit grayscale; use rvol for real data")
    if data.dtype not in (np.dtype("u1"), np.dtype("u2")):
        vmax = int(data.max()) if data.size else 0
        if vmax >= 2**16:
            raise VolumeIOError(f"max label {vmax} does not fit 16-bit TIFF; use rvol")
        data = data.astype(np.uint16)
    sz, sy, sx = v.geometry.spacing
    nz = data.shape[0]
    # ImageJ-style description written by hand: tifffile's imagej mode
    # reshapes degenerate stacks (single-column planes become a samples
    # axis), while the plain writer stores every page verbatim.
    desc = (
        f"ImageJ=1.11a\nimages={nz}\nslices={nz}\nhyperstack=true\n"
        f"mode=grayscale\nunit=um\nspacing={sz!r}\nloop=false\n"
    )
    tifffile.imwrite(
        path,
        np.ascontiguousarray(data),
        photometric="minisblack",
        resolution=(1.0 / sx, 1.0 / sy),
        description=desc,
        metadata=None,
    )


def _tiff_spacing(tf: tifffile.TiffFile) -> tuple[float, float, float] | None:
    meta = tf.imagej_metadata or {}
    if "spacing" not in meta:
        return None
    sz = float(meta["spacing"])
    page = tf.pages[0]
    xres = page.tags.get("XResolution")
    yres = page.tags.get("YResolution")
    if xres is None or yres is None:
        return None
    xn, xd = xres.value
    yn, yd = yres.value
    if xn == 0 or yn == 0:
        return None
    return (sz, yd / yn, xd / xn)


def _load_tiff(path: Path, kind: str) -> Volume:
    with tifffile.TiffFile(path) as tf:
        for page in tf.pages:
            if page.compression != tifffile.COMPRESSION.NONE:
                raise UnsupportedTiffError(f"{path}: compressed TIFF ({page.compression.name}) not supported")
            if page.samplesperpixel != 1 or page.photometric not in (
                tifffile.PHOTOMETRIC.MINISBLACK,
                tifffile.PHOTOMETRIC.MINISWHITE,
            ):
                raise UnsupportedTiffError(f"{path}: only single-sample grayscale TIFF is supported")
            if page.bitspersample not in (8, 16) or page.dtype.kind != "u":
                raise UnsupportedTiffError(f"{path}: only unsigned 8/16-bit TIFF is supported")
        data = tf.asarray()
        spacing = _tiff_spacing(tf)
    if data.ndim == 2:
        data = data[None]
    if data.ndim != 3:
        raise UnsupportedTiffError(f"{path}: expected a 2D/3D grayscale stack, got shape {data.shape}")
    meta = {"source": str(path)}
    if spacing is None:
        warnings.warn(
            f"{path}: no voxel spacing metadata, defaulting to 1 µm isotropic",
            MissingSpacingWarning,
            stacklevel=3,
        )
        spacing = (1.0, 1.0, 1.0)
        meta["default_spacing_used"] = True
    geometry = VolumeGeometry(data.shape, spacing)
    if kind == "auto":
        kind = _infer_kind(data)
    return _wrap(kind, data, geometry, meta)


# ---------------------------------------------------------------------------
# public entry points
# ---------------------------------------------------------------------------

def _format_for(path: Path, fmt: str | None) -> str:
    if fmt is not None:
        if fmt not in ("tiff", "rvol"):
            raise ValueError(f"format must be 'tiff' or 'rvol', got {fmt!r}")
        return fmt
    suffix = path.suffix.lower()
    if suffix in (".tif", ".tiff"):
        return "tiff"
    if suffix == ".rvol":
        return "rvol"
    raise ValueError(f"cannot infer format from {path.name!r}; pass format='tiff' or 'rvol'")


def load_volume(path, kind: str = "auto") -> Volume:
    """Load a TIFF or RVOL volume.

    ``kind`` selects the returned container: "label", "intensity", or
    "auto" (RVOL header's kind; integer TIFF data defaults to labels).
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such volume file: {path}")
    fmt = _format_for(path, None)
    try:
        if fmt == "tiff":
            return _load_tiff(path, kind)
        vol = _load_rvol(path)
    except (VolumeIOError, FileNotFoundError):
        raise
    except Exception as e:
        raise VolumeIOError(f"unreadable volume file {path}: {e}") from e
    if kind != "auto" and fmt == "rvol":
        vol = _wrap(kind, vol.data, vol.geometry, vol.meta)
    return vol


def save_volume(v: Volume, path, format: str | None = None) -> None:
    """Write a volume to ``path``; round-trips bit-exactly via load_volume."""
    path = Path(path)
    fmt = _format_for(path, format)
    path.parent.mkdir(parents=True, exist_ok=True)
    if fmt == "tiff":
        _save_tiff(v, path)
    else:
        _save_rvol(v, path)


def upsample_z(v: Volume, factor: int) -> Volume:
    """Nearest-neighbor upsampling along z; spacing shrinks by ``factor``."""
    factor = int(factor)
    if factor < 1:
        raise ValueError(f"upsampling factor must be >= 1, got {factor}")
    nz, ny, nx = v.geometry.shape
    sz, sy, sx = v.geometry.spacing
    data = np.repeat(v.data, factor, axis=0)
    geometry = VolumeGeometry((nz * factor, ny, nx), (sz / factor, sy, sx))
    return type(v)(geometry, data, dict(v.meta))


def crop(v: Volume, origin: tuple[int, int, int], shape: tuple[int, int, int]) -> Volume:
    """Copy the sub-volume of ``shape`` starting at ``origin`` (z, y, x)."""
    origin = tuple(int(o) for o in origin)
    shape = tuple(int(n) for n in shape)
    for o, n, full in zip(origin, shape, v.geometry.shape):
        if o < 0 or n < 1 or o + n > full:
            raise ValueError(
                f"crop window origin={origin} shape={shape} outside volume shape {v.geometry.shape}"
            )
    z, y, x = origin
    nz, ny, nx = shape
    data = v.data[z : z + nz, y : y + ny, x : x + nx].copy()
    return type(v)(VolumeGeometry(shape, v.geometry.spacing), data, dict(v.meta))
