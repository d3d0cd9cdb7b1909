"""3D Cellular Potts model with Metropolis Monte Carlo dynamics.

Energy of a configuration:

    H = sum_i lv*(V_i - Vt_i)^2 + sum_i la*(A_i - At_i)^2
        + J_cc * (cell-cell contact links) + J_cm * (cell-medium contact links)

with V_i in voxels and A_i in exposed 6-neighbor faces (volume-boundary
faces included), so parameter values calibrated in lattice units apply
directly. Contact links are unordered site pairs with differing labels
within the contact neighbor range; sites outside the lattice count as
medium and are never proposal sources. One Monte Carlo step (MCS) is as
many copy attempts as there are lattice sites.

The per-attempt kernels are JIT-compiled; the random stream is generated
per MCS from a counter-based generator keyed by the run seed, so results
are reproducible regardless of how attempts interleave.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .volume import LabelVolume

_SHELL_R2 = (1, 2, 3, 4)


def neighbor_offsets(order: int) -> np.ndarray:
    """Integer offsets of the first ``order`` neighbor shells.

    Shells are grouped by squared distance 1, 2, 3, 4; cumulative counts
    are 6, 18, 26, 32. Offsets are sorted by squared distance, then
    lexicographically, so the ordering is stable across runs.
    """
    if not 1 <= order <= 4:
        raise ValueError(f"neighbor order must be in 1..4, got {order}")
    allowed = set(_SHELL_R2[:order])
    offs = []
    for dz in range(-2, 3):
        for dy in range(-2, 3):
            for dx in range(-2, 3):
                r2 = dz * dz + dy * dy + dx * dx
                if r2 in allowed:
                    offs.append((r2, dz, dy, dx))
    offs.sort()
    return np.array([o[1:] for o in offs], dtype=np.int64)


@dataclass(frozen=True)
class CpmParams:
    """Energy and dynamics parameters in lattice units."""

    lambda_volume: float = 10.0
    lambda_area: float = 0.001
    j_cell_cell: float = 2.0
    j_cell_medium: float = 55.0
    temperature: float = 30.0
    potts_neighbor_order: int = 3
    contact_neighbor_order: int = 4

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError(f"temperature must be > 0, got {self.temperature}")
        if self.lambda_volume < 0 or self.lambda_area < 0:
            raise ValueError("lambda weights must be >= 0")
        for name in ("potts_neighbor_order", "contact_neighbor_order"):
            v = getattr(self, name)
            if not 1 <= v <= 4:
                raise ValueError(f"{name} must be in 1..4, got {v}")
        for name in ("j_cell_cell", "j_cell_medium"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")


@dataclass(frozen=True)
class TargetAssignment:
    """Record of one target shuffle: which cell's initial actual values each cell received."""

    source_for: dict[int, int]
    target_volumes: dict[int, int]
    target_areas: dict[int, int]


@dataclass
class CpmState:
    lattice: LabelVolume
    params: CpmParams
    seed: int
    volumes: np.ndarray        # (max_label+1,) int64, exact voxel counts
    areas: np.ndarray          # (max_label+1,) int64, exact face counts
    target_volumes: np.ndarray
    target_areas: np.ndarray
    cell_labels: np.ndarray    # sorted nonzero labels present at init
    mcs_counter: int = 0
    energy_trace: list = field(default_factory=list)
    accepted_total: int = 0
    _rng: np.random.Generator = field(default=None, repr=False)
    _potts_offsets: np.ndarray = field(default=None, repr=False)
    _contact_offsets: np.ndarray = field(default=None, repr=False)

    def vanished_labels(self) -> list[int]:
        """Cells that existed at init but lost every voxel."""
        return [int(i) for i in self.cell_labels if self.volumes[i] == 0]


def measure_cells(data: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Exact per-label voxel and exposed-face counts (index 0 zeroed).

    A face is exposed when the 6-neighbor across it has a different label
    or lies outside the volume.
    """
    max_label = int(data.max()) if data.size else 0
    vols = np.bincount(data.ravel(), minlength=max_label + 1).astype(np.int64)
    areas = np.zeros(max_label + 1, dtype=np.int64)
    for axis in range(3):
        lo = [slice(None)] * 3
        hi = [slice(None)] * 3
        lo[axis] = slice(None, -1)
        hi[axis] = slice(1, None)
        a = data[tuple(lo)]
        b = data[tuple(hi)]
        neq = a != b
        areas += np.bincount(a[neq], minlength=max_label + 1)
        areas += np.bincount(b[neq], minlength=max_label + 1)
        areas += np.bincount(np.take(data, 0, axis=axis).ravel(), minlength=max_label + 1)
        areas += np.bincount(np.take(data, -1, axis=axis).ravel(), minlength=max_label + 1)
    vols[0] = 0
    areas[0] = 0
    return vols, areas


def _rng_for(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))


def init_state(v: LabelVolume, params: CpmParams, seed: int) -> CpmState:
    """Build a simulation state; targets start at each cell's own actual values."""
    data = np.ascontiguousarray(v.data.astype(np.int32))
    vols, areas = measure_cells(data)
    labels = np.flatnonzero(vols[1:]) + 1
    return CpmState(
        lattice=LabelVolume(v.geometry, data, dict(v.meta)),
        params=params,
        seed=int(seed),
        volumes=vols,
        areas=areas,
        target_volumes=vols.copy(),
        target_areas=areas.copy(),
        cell_labels=labels.astype(np.int64),
        _rng=_rng_for(seed),
        _potts_offsets=neighbor_offsets(params.potts_neighbor_order),
        _contact_offsets=neighbor_offsets(params.contact_neighbor_order),
    )


def assign_targets(state: CpmState, seed: int) -> TargetAssignment:
    """Shuffle target (volume, area) pairs among cells by a random permutation.

    Each cell's targets are taken jointly from one donor cell's initial
    actual values, so the target distributions equal the initial actual
    distributions exactly. Only valid before any dynamics have run.
    """
    if state.mcs_counter != 0:
        raise ValueError("targets can only be reassigned at MCS 0")
    labels = state.cell_labels
    perm = _rng_for(seed).permutation(labels.size)
    vols = state.volumes[labels]
    areas = state.areas[labels]
    source_for, tv, ta = {}, {}, {}
    for i, dest in enumerate(labels):
        src = labels[perm[i]]
        state.target_volumes[dest] = vols[perm[i]]
        state.target_areas[dest] = areas[perm[i]]
        source_for[int(dest)] = int(src)
        tv[int(dest)] = int(vols[perm[i]])
        ta[int(dest)] = int(areas[perm[i]])
    return TargetAssignment(source_for=source_for, target_volumes=tv, target_areas=ta)


def _shift_views(data: np.ndarray, d) -> tuple[np.ndarray, np.ndarray]:
    """Views (a, b) pairing each in-lattice site with its in-lattice neighbor at +d."""
    sa, sb = [], []
    for k, n in zip(d, data.shape):
        k = int(k)
        if k >= 0:
            sa.append(slice(0, n - k))
            sb.append(slice(k, n))
        else:
            sa.append(slice(-k, n))
            sb.append(slice(0, n + k))
    return data[tuple(sa)], data[tuple(sb)]


def hamiltonian(state: CpmState) -> float:
    """Total energy recomputed from the lattice (reference implementation)."""
    p = state.params
    data = state.lattice.data
    vols, areas = measure_cells(data)
    n = max(vols.size, state.target_volumes.size)
    vols = np.pad(vols, (0, n - vols.size))
    areas = np.pad(areas, (0, n - areas.size))
    labels = state.cell_labels
    dv = vols[labels] - state.target_volumes[labels]
    da = areas[labels] - state.target_areas[labels]
    h = p.lambda_volume * float(dv @ dv) + p.lambda_area * float(da @ da)
    # contact links: in-lattice pairs seen from both ends, halved; pairs
    # into the boundary counted once with the outside as medium
    cc_pairs = 0
    cm_pairs = 0.0
    for d in state._contact_offsets:
        a, b = _shift_views(data, d)
        neq = a != b
        both = neq & (a != 0) & (b != 0)
        cc_pairs += int(both.sum())
        cm_pairs += 0.5 * (int(neq.sum()) - int(both.sum()))
        inside = np.zeros(data.shape, dtype=bool)
        sa = tuple(
            slice(0, n - int(k)) if int(k) >= 0 else slice(-int(k), n)
            for k, n in zip(d, data.shape)
        )
        inside[sa] = True
        cm_pairs += float(np.count_nonzero(data[~inside]))
    h += p.j_cell_cell * cc_pairs / 2.0 + p.j_cell_medium * cm_pairs
    return h


@njit(cache=True)
def _count_same6(lattice, z, y, x, label):
    nz, ny, nx = lattice.shape
    k = 0
    if z > 0 and lattice[z - 1, y, x] == label:
        k += 1
    if z < nz - 1 and lattice[z + 1, y, x] == label:
        k += 1
    if y > 0 and lattice[z, y - 1, x] == label:
        k += 1
    if y < ny - 1 and lattice[z, y + 1, x] == label:
        k += 1
    if x > 0 and lattice[z, y, x - 1] == label:
        k += 1
    if x < nx - 1 and lattice[z, y, x + 1] == label:
        k += 1
    return k


@njit(cache=True)
def _contact_j(a, b, jcc, jcm):
    if a == b:
        return 0.0
    if a == 0 or b == 0:
        return jcm
    return jcc


@njit(cache=True)
def _delta_h_site(
    lattice, vols, areas, tvol, tarea,
    lam_v, lam_a, jcc, jcm, contact_off, z, y, x, src,
):
    nz, ny, nx = lattice.shape
    tgt = lattice[z, y, x]
    dh = 0.0
    if src != 0:
        v = vols[src]
        t = tvol[src]
        dh += lam_v * (float((v + 1 - t) ** 2) - float((v - t) ** 2))
        k = _count_same6(lattice, z, y, x, src)
        a = areas[src]
        ta = tarea[src]
        da = 6 - 2 * k
        dh += lam_a * (float((a + da - ta) ** 2) - float((a - ta) ** 2))
    if tgt != 0:
        v = vols[tgt]
        t = tvol[tgt]
        dh += lam_v * (float((v - 1 - t) ** 2) - float((v - t) ** 2))
        k = _count_same6(lattice, z, y, x, tgt)
        a = areas[tgt]
        ta = tarea[tgt]
        da = 2 * k - 6
        dh += lam_a * (float((a + da - ta) ** 2) - float((a - ta) ** 2))
    for i in range(contact_off.shape[0]):
        zz = z + contact_off[i, 0]
        yy = y + contact_off[i, 1]
        xx = x + contact_off[i, 2]
        if 0 <= zz < nz and 0 <= yy < ny and 0 <= xx < nx:
            lm = lattice[zz, yy, xx]
        else:
            lm = np.int32(0)
        dh += _contact_j(src, lm, jcc, jcm) - _contact_j(tgt, lm, jcc, jcm)
    return dh


@njit(cache=True)
def _apply_copy(lattice, vols, areas, z, y, x, src):
    tgt = lattice[z, y, x]
    if src != 0:
        vols[src] += 1
        areas[src] += 6 - 2 * _count_same6(lattice, z, y, x, src)
    if tgt != 0:
        vols[tgt] -= 1
        areas[tgt] += 2 * _count_same6(lattice, z, y, x, tgt) - 6
    lattice[z, y, x] = src


@njit(cache=True)
def _run_one_mcs(
    lattice, vols, areas, tvol, tarea,
    lam_v, lam_a, jcc, jcm, temperature,
    potts_off, contact_off, sites, offsets_idx, uniforms,
):
    nz, ny, nx = lattice.shape
    accepted = 0
    dh_sum = 0.0
    for i in range(sites.shape[0]):
        flat = sites[i]
        z = flat // (ny * nx)
        rem = flat % (ny * nx)
        y = rem // nx
        x = rem % nx
        j = offsets_idx[i]
        zz = z + potts_off[j, 0]
        yy = y + potts_off[j, 1]
        xx = x + potts_off[j, 2]
        if zz < 0 or zz >= nz or yy < 0 or yy >= ny or xx < 0 or xx >= nx:
            continue
        src = lattice[zz, yy, xx]
        if src == lattice[z, y, x]:
            continue
        dh = _delta_h_site(
            lattice, vols, areas, tvol, tarea,
            lam_v, lam_a, jcc, jcm, contact_off, z, y, x, src,
        )
        if dh <= 0.0 or uniforms[i] < math.exp(-dh / temperature):
            _apply_copy(lattice, vols, areas, z, y, x, src)
            accepted += 1
            dh_sum += dh
    return accepted, dh_sum


def delta_h(state: CpmState, site: tuple[int, int, int], src_label: int) -> float:
    """Energy change if ``src_label`` were copied into ``site``; no mutation."""
    z, y, x = site
    data = state.lattice.data
    nz, ny, nx = data.shape
    if not (0 <= z < nz and 0 <= y < ny and 0 <= x < nx):
        raise ValueError(f"site {site} outside lattice {data.shape}")
    if src_label == data[z, y, x]:
        raise ValueError(f"source label {src_label} already occupies site {site}")
    if src_label != 0 and src_label not in state.cell_labels:
        raise ValueError(f"unknown cell label {src_label}")
    p = state.params
    return float(
        _delta_h_site(
            data, state.volumes, state.areas,
            state.target_volumes, state.target_areas,
            p.lambda_volume, p.lambda_area, p.j_cell_cell, p.j_cell_medium,
            state._contact_offsets, z, y, x, np.int32(src_label),
        )
    )


def attempt(state: CpmState, site: tuple[int, int, int], src_label: int) -> tuple[bool, float]:
    """One Metropolis decision for an explicit proposal.

    Draws a single uniform from the state's stream, applies the copy (and
    cache updates) when accepted. Returns (accepted, energy change).
    """
    dh = delta_h(state, site, src_label)
    u = state._rng.random()
    accepted = dh <= 0.0 or u < math.exp(-dh / state.params.temperature)
    if accepted:
        z, y, x = site
        _apply_copy(
            state.lattice.data, state.volumes, state.areas, z, y, x, np.int32(src_label)
        )
        state.accepted_total += 1
    return accepted, dh


def run_mcs(
    state: CpmState, n_mcs: int, snapshot_every: int = 0
) -> list[tuple[int, LabelVolume]]:
    """Advance the simulation by ``n_mcs`` Monte Carlo steps.

    Returns (mcs_index, lattice copy) snapshots at every
    ``snapshot_every`` steps plus the final state. The energy trace is
    extended by one entry per MCS (entry 0 is the starting energy).
    """
    if n_mcs < 0:
        raise ValueError(f"n_mcs must be >= 0, got {n_mcs}")
    if snapshot_every < 0:
        raise ValueError(f"snapshot_every must be >= 0, got {snapshot_every}")
    p = state.params
    data = state.lattice.data
    n_sites = data.size
    if not state.energy_trace:
        state.energy_trace.append(hamiltonian(state))
    h = state.energy_trace[-1]
    snapshots: list[tuple[int, LabelVolume]] = []
    for step in range(n_mcs):
        sites = state._rng.integers(0, n_sites, size=n_sites, dtype=np.int64)
        offs = state._rng.integers(
            0, state._potts_offsets.shape[0], size=n_sites, dtype=np.int64
        )
        unis = state._rng.random(n_sites)
        accepted, dh_sum = _run_one_mcs(
            data, state.volumes, state.areas,
            state.target_volumes, state.target_areas,
            p.lambda_volume, p.lambda_area, p.j_cell_cell, p.j_cell_medium,
            p.temperature,
            state._potts_offsets, state._contact_offsets,
            sites, offs, unis,
        )
        state.accepted_total += int(accepted)
        state.mcs_counter += 1
        h += dh_sum
        state.energy_trace.append(h)
        last = step == n_mcs - 1
        if (snapshot_every and state.mcs_counter % snapshot_every == 0) or last:
            snapshots.append((state.mcs_counter, export_borders(state)))
    return snapshots


def export_borders(state: CpmState) -> LabelVolume:
    """Current cell lattice as an unsigned label volume (deep copy)."""
    return LabelVolume(
        state.lattice.geometry,
        state.lattice.data.astype(np.uint32),
        dict(state.lattice.meta),
    )


def manifest(state: CpmState) -> dict:
    """Run description for serialization next to exported volumes."""
    p = state.params
    return {
        "params": {
            "lambda_volume": p.lambda_volume,
            "lambda_area": p.lambda_area,
            "j_cell_cell": p.j_cell_cell,
            "j_cell_medium": p.j_cell_medium,
            "temperature": p.temperature,
            "potts_neighbor_order": p.potts_neighbor_order,
            "contact_neighbor_order": p.contact_neighbor_order,
        },
        "seed": state.seed,
        "mcs": state.mcs_counter,
        "accepted_total": state.accepted_total,
        "n_cells": int(state.cell_labels.size),
        "vanished_labels": state.vanished_labels(),
        "energy_trace": [float(x) for x in state.energy_trace],
    }
