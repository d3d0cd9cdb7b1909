"""Strict JSON configuration for the pipeline runner.

One JSON document configures every stage. Parsing is strict: an unknown key
anywhere fails with its dotted path, so typos cannot silently fall back to
defaults. The fully resolved configuration (defaults included) is what run
manifests echo, making any job reproducible from its manifest alone.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .cpm import CpmParams
from .imaging import ImagingConfig
from .nuclei import PlacementConfig
from .postproc import PostprocConfig


class ConfigError(Exception):
    """A configuration document violates the schema."""


# the published four-parameter search grid (6 * 6 * 6 * 3 = 648 combinations)
SCAN_GRID = {
    "lambda_volume": [0.001, 2.0, 4.0, 6.0, 8.0, 10.0],
    "lambda_area": [0.001, 2.0, 4.0, 6.0, 8.0, 10.0],
    "j_cell_cell": [0.0001, 2.0, 4.0, 6.0, 8.0, 10.0],
    "j_cell_medium": [10.0, 55.0, 100.0],
}


@dataclass(frozen=True)
class IoSection:
    """Input/output paths. Subcommands verify the ones they need."""

    cells_in: str | None = None
    prototypes_dir: str | None = None
    image_in: str | None = None
    pred_in: str | None = None
    out_dir: str = "out"


@dataclass(frozen=True)
class PreprocessSection:
    """Annotation cleanup: size/extent filters, hole repair, z upsampling."""

    min_voxels: int = 5
    min_z_span: int = 4
    close_radius: int = 1
    upsample_z: int = 1

    def __post_init__(self):
        if self.min_voxels < 0 or self.min_z_span < 0:
            raise ValueError("min_voxels and min_z_span must be >= 0")
        if self.close_radius < 0:
            raise ValueError(f"close_radius must be >= 0, got {self.close_radius}")
        if self.upsample_z < 1:
            raise ValueError(f"upsample_z must be >= 1, got {self.upsample_z}")


@dataclass(frozen=True)
class CpmSection:
    """Dynamics parameters plus run length and snapshot cadence."""

    params: CpmParams = field(default_factory=CpmParams)
    n_mcs: int = 1000
    snapshot_every: int = 0

    def __post_init__(self):
        if self.n_mcs < 0:
            raise ValueError(f"n_mcs must be >= 0, got {self.n_mcs}")
        if self.snapshot_every < 0:
            raise ValueError(f"snapshot_every must be >= 0, got {self.snapshot_every}")


@dataclass(frozen=True)
class ScanSection:
    """Grid search settings; the default grid is the published 648-point scan."""

    grid: dict = field(default_factory=lambda: {k: list(v) for k, v in SCAN_GRID.items()})
    n_mcs: int = 200
    replicates: int = 1

    def __post_init__(self):
        if not isinstance(self.grid, dict) or not self.grid:
            raise ValueError("grid must be a non-empty mapping of parameter name to values")
        valid = {f.name for f in dataclasses.fields(CpmParams)}
        for key, values in self.grid.items():
            if key not in valid:
                raise ValueError(f"unknown grid parameter {key!r}")
            if not isinstance(values, (list, tuple)) or not values:
                raise ValueError(f"grid values for {key!r} must be a non-empty list")
        if self.n_mcs < 0:
            raise ValueError(f"n_mcs must be >= 0, got {self.n_mcs}")
        if self.replicates < 1:
            raise ValueError(f"replicates must be >= 1, got {self.replicates}")


@dataclass(frozen=True)
class EvaluateSection:
    """Scoring inputs: label volumes for SEG/DET, image pair for the KID."""

    gt: str | None = None
    pred: str | None = None
    kid_real: str | None = None
    kid_synth: str | None = None
    kid_subset_size: int = 100
    kid_n_subsets: int = 10
    kid_bins: int = 64
    kid_value_range: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        object.__setattr__(self, "kid_value_range", tuple(float(v) for v in self.kid_value_range))
        if self.kid_subset_size < 2:
            raise ValueError(f"kid_subset_size must be >= 2, got {self.kid_subset_size}")
        if self.kid_n_subsets < 1:
            raise ValueError(f"kid_n_subsets must be >= 1, got {self.kid_n_subsets}")
        if self.kid_bins < 1:
            raise ValueError(f"kid_bins must be >= 1, got {self.kid_bins}")
        lo, hi = self.kid_value_range
        if hi <= lo:
            raise ValueError(f"kid_value_range must be increasing, got {self.kid_value_range}")


@dataclass(frozen=True)
class PipelineConfig:
    """The whole run: one seed, one set of sections, one output directory."""

    seed: int = 0
    runs: int = 1
    io: IoSection = field(default_factory=IoSection)
    preprocess: PreprocessSection = field(default_factory=PreprocessSection)
    cpm: CpmSection = field(default_factory=CpmSection)
    scan: ScanSection = field(default_factory=ScanSection)
    placement: PlacementConfig = field(default_factory=PlacementConfig)
    imaging: ImagingConfig = field(default_factory=ImagingConfig)
    postproc: PostprocConfig = field(default_factory=PostprocConfig)
    evaluate: EvaluateSection = field(default_factory=EvaluateSection)

    def __post_init__(self):
        if self.seed < 0:
            raise ValueError(f"seed must be >= 0, got {self.seed}")
        if self.runs < 1:
            raise ValueError(f"runs must be >= 1, got {self.runs}")


_SECTION_TYPES = {
    "io": IoSection,
    "preprocess": PreprocessSection,
    "cpm": CpmSection,
    "scan": ScanSection,
    "placement": PlacementConfig,
    "imaging": ImagingConfig,
    "postproc": PostprocConfig,
    "evaluate": EvaluateSection,
}
_NESTED = {(CpmSection, "params"): CpmParams}


def _build(cls, data, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected an object, got {type(data).__name__}")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{path}.{unknown[0]}: unknown key")
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name not in data:
            continue
        value = data[f.name]
        sub = _NESTED.get((cls, f.name))
        if sub is not None:
            value = _build(sub, value, f"{path}.{f.name}")
        kwargs[f.name] = value
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def parse_config(doc: dict) -> PipelineConfig:
    """Build a validated PipelineConfig from a parsed JSON document."""
    if not isinstance(doc, dict):
        raise ConfigError(f"$: expected an object, got {type(doc).__name__}")
    known = {"seed", "runs"} | set(_SECTION_TYPES)
    unknown = sorted(set(doc) - known)
    if unknown:
        raise ConfigError(f"$.{unknown[0]}: unknown key")
    kwargs = {}
    for scalar in ("seed", "runs"):
        if scalar in doc:
            kwargs[scalar] = doc[scalar]
    for name, cls in _SECTION_TYPES.items():
        if name in doc:
            kwargs[name] = _build(cls, doc[name], f"$.{name}")
    try:
        return PipelineConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"$: {exc}") from exc


def load_config(path) -> PipelineConfig:
    """Read and validate a JSON configuration file."""
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: invalid JSON: {exc}") from exc
    return parse_config(doc)


def _parse_override_value(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw  # bare strings (paths etc.) pass through unquoted


def apply_overrides(doc: dict, overrides: list[str]) -> dict:
    """Apply `section.key=value` assignments to a raw config document.

    Values parse as JSON when possible, otherwise as plain strings, so
    `--set cpm.n_mcs=50` and `--set io.cells_in=data/cells.rvol` both work.
    The result revalidates through the normal strict path.
    """
    out = json.loads(json.dumps(doc))  # deep copy, JSON types only
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, raw = item.split("=", 1)
        parts = [p for p in key.strip().split(".") if p]
        if not parts:
            raise ConfigError(f"override {item!r} has an empty key")
        node = out
        for part in parts[:-1]:
            nxt = node.setdefault(part, {})
            if not isinstance(nxt, dict):
                raise ConfigError(f"override {key!r} descends into a non-object")
            node = nxt
        node[parts[-1]] = _parse_override_value(raw.strip())
    return out


def resolved_dict(cfg: PipelineConfig) -> dict:
    """The full configuration with every default filled in, JSON-ready."""

    def convert(obj):
        if dataclasses.is_dataclass(obj):
            return {f.name: convert(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
        if isinstance(obj, tuple):
            return [convert(v) for v in obj]
        if isinstance(obj, dict):
            return {k: convert(v) for k, v in obj.items()}
        return obj

    return convert(cfg)
