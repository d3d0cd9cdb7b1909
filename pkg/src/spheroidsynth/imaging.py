"""Microscope forward model: depth attenuation, PSF blur, downsampling, noise.

Turns a clean fluorescence phantom into something that looks like it came
off a confocal stack. The four stages run in acquisition order: light is
lost with imaging depth, the optics blur with a point spread function, the
sensor integrates over larger voxels, and photon shot noise plus read noise
land on top. Every stage is a pure function of its inputs and the seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .volume import IntensityVolume, VolumeGeometry

_DTYPE_CHOICES = ("uint8", "uint16", "float32", "float64")


@dataclass(frozen=True)
class ImagingConfig:
    """Parameters of the imaging chain.

    attenuation_mu: exponential signal loss per micrometer of depth (0 = off,
        matching stacks acquired with depth compensation).
    psf_sigma: Gaussian PSF standard deviation in µm per (z, y, x) axis.
    downsample_factors: integer block-mean pooling factors per axis.
    photon_gain: expected photon counts per intensity unit (shot noise scale).
    read_noise_sigma: additive sensor noise, in intensity units.
    output_dtype: dtype of the final noisy image; integer choices clamp.
    """

    attenuation_mu: float = 0.0
    psf_sigma: tuple[float, float, float] = (0.0, 0.0, 0.0)
    downsample_factors: tuple[int, int, int] = (1, 1, 1)
    photon_gain: float = 100.0
    read_noise_sigma: float = 0.0
    output_dtype: str = "float32"

    def __post_init__(self):
        object.__setattr__(self, "psf_sigma", tuple(float(s) for s in self.psf_sigma))
        object.__setattr__(
            self, "downsample_factors", tuple(int(f) for f in self.downsample_factors)
        )
        if not np.isfinite(self.attenuation_mu) or self.attenuation_mu < 0:
            raise ValueError(f"attenuation_mu must be >= 0, got {self.attenuation_mu}")
        if len(self.psf_sigma) != 3 or any(not np.isfinite(s) or s < 0 for s in self.psf_sigma):
            raise ValueError(f"psf_sigma must be three values >= 0, got {self.psf_sigma}")
        if len(self.downsample_factors) != 3 or any(f < 1 for f in self.downsample_factors):
            raise ValueError(
                f"downsample_factors must be three integers >= 1, got {self.downsample_factors}"
            )
        if not np.isfinite(self.photon_gain) or self.photon_gain <= 0:
            raise ValueError(f"photon_gain must be > 0, got {self.photon_gain}")
        if not np.isfinite(self.read_noise_sigma) or self.read_noise_sigma < 0:
            raise ValueError(f"read_noise_sigma must be >= 0, got {self.read_noise_sigma}")
        if self.output_dtype not in _DTYPE_CHOICES:
            raise ValueError(
                f"output_dtype must be one of {_DTYPE_CHOICES}, got {self.output_dtype!r}"
            )

    def to_dict(self) -> dict:
        return {
            "attenuation_mu": self.attenuation_mu,
            "psf_sigma": list(self.psf_sigma),
            "downsample_factors": list(self.downsample_factors),
            "photon_gain": self.photon_gain,
            "read_noise_sigma": self.read_noise_sigma,
            "output_dtype": self.output_dtype,
        }


def _as_float(data: np.ndarray) -> np.ndarray:
    if data.dtype.kind == "f":
        return data
    return data.astype(np.float32)


def attenuate_depth(v: IntensityVolume, mu: float) -> IntensityVolume:
    """Scale each z plane by exp(-mu * depth), depth = z index * z spacing."""
    if not np.isfinite(mu) or mu < 0:
        raise ValueError(f"mu must be >= 0, got {mu}")
    data = _as_float(v.data)
    depth = np.arange(v.shape[0], dtype=np.float64) * v.spacing[0]
    factor = np.exp(-mu * depth).astype(data.dtype)
    out = data * factor[:, None, None]
    return IntensityVolume(v.geometry, out, dict(v.meta))


def _gaussian_kernel(sigma_vox: float) -> np.ndarray:
    radius = int(math.ceil(4.0 * sigma_vox))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma_vox) ** 2)
    return k / k.sum()


def convolve_psf(v: IntensityVolume, sigma: tuple[float, float, float]) -> IntensityVolume:
    """Separable Gaussian blur; sigma in µm per (z, y, x) axis.

    Kernels are sampled at voxel centers, cut at 4 sigma and renormalized to
    sum 1, so constant regions keep their value. Borders reflect.
    """
    sigma = tuple(float(s) for s in sigma)
    if len(sigma) != 3 or any(not np.isfinite(s) or s < 0 for s in sigma):
        raise ValueError(f"sigma must be three values >= 0, got {sigma}")
    out = _as_float(v.data).copy()
    for axis, (s_um, s_vox) in enumerate(zip(sigma, v.spacing)):
        if s_um == 0:
            continue
        kernel = _gaussian_kernel(s_um / s_vox).astype(out.dtype)
        out = ndimage.correlate1d(out, kernel, axis=axis, mode="reflect")
    return IntensityVolume(v.geometry, out, dict(v.meta))


def _block_mean(a: np.ndarray, factor: int, axis: int) -> np.ndarray:
    if factor == 1:
        return a
    n = a.shape[axis]
    starts = np.arange(0, n, factor)
    sums = np.add.reduceat(a, starts, axis=axis)
    # trailing remainder blocks average over their actual length
    lens = np.minimum(starts + factor, n) - starts
    shape = [1] * a.ndim
    shape[axis] = len(starts)
    return sums / lens.astype(sums.dtype).reshape(shape)


def downsample(v: IntensityVolume, factors: tuple[int, int, int]) -> IntensityVolume:
    """Block-mean pooling by integer factors; voxel spacing grows to match."""
    factors = tuple(int(f) for f in factors)
    if len(factors) != 3 or any(f < 1 for f in factors):
        raise ValueError(f"factors must be three integers >= 1, got {factors}")
    out = _as_float(v.data)
    for axis, f in enumerate(factors):
        out = _block_mean(out, f, axis)
    spacing = tuple(s * f for s, f in zip(v.spacing, factors))
    return IntensityVolume(VolumeGeometry(out.shape, spacing), out, dict(v.meta))


def add_noise(
    v: IntensityVolume,
    gain: float,
    read_sigma: float,
    seed: int,
    out_dtype: str = "float32",
) -> IntensityVolume:
    """Photon shot noise plus additive read noise.

    Each voxel becomes Poisson(value * gain) / gain + Normal(0, read_sigma).
    Integer output dtypes round and clamp to the representable range.
    """
    if not np.isfinite(gain) or gain <= 0:
        raise ValueError(f"gain must be > 0, got {gain}")
    if not np.isfinite(read_sigma) or read_sigma < 0:
        raise ValueError(f"read_sigma must be >= 0, got {read_sigma}")
    if out_dtype not in _DTYPE_CHOICES:
        raise ValueError(f"out_dtype must be one of {_DTYPE_CHOICES}, got {out_dtype!r}")
    data = np.asarray(v.data, dtype=np.float64)
    if data.size and data.min() < 0:
        raise ValueError("intensities must be non-negative before the sensor stage")
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed))))
    out = rng.poisson(data * gain).astype(np.float64) / gain
    if read_sigma > 0:
        out += rng.normal(0.0, read_sigma, size=out.shape)
    dt = np.dtype(out_dtype)
    if dt.kind in "ui":
        info = np.iinfo(dt)
        out = np.clip(np.rint(out), info.min, info.max)
    out = out.astype(dt)
    return IntensityVolume(v.geometry, out, dict(v.meta))


def simulate_imaging(v: IntensityVolume, cfg: ImagingConfig, seed: int) -> IntensityVolume:
    """Full chain: attenuate with depth, blur, pool, then add sensor noise."""
    out = attenuate_depth(v, cfg.attenuation_mu)
    out = convolve_psf(out, cfg.psf_sigma)
    out = downsample(out, cfg.downsample_factors)
    out = add_noise(out, cfg.photon_gain, cfg.read_noise_sigma, seed, cfg.output_dtype)
    out.meta["imaging"] = cfg.to_dict()
    out.meta["imaging_seed"] = int(seed)
    return out
