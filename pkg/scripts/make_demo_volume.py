#!/usr/bin/env python3
"""Create demo inputs: a Voronoi cell volume and a nucleus prototype database.

Writes <out>/cells.rvol and <out>/prototypes/. The cells partition a digital
ball; the prototypes come from a small synthetic annotation holding three
ellipsoidal nuclei with mottled intensity.
"""

import argparse
from pathlib import Path

import numpy as np

from spheroidsynth.nuclei import extract_prototypes
from spheroidsynth.phantoms import ellipsoid, voronoi_spheroid
from spheroidsynth.volume import (
    IntensityVolume,
    LabelVolume,
    VolumeGeometry,
    save_volume,
)


def build_prototype_db(seed: int = 0):
    shape = (14, 14, 40)
    geometry = VolumeGeometry(shape, (1.0, 1.0, 1.0))
    lab = np.zeros(shape, np.uint16)
    for i, cx in enumerate((6.5, 19.5, 32.5), start=1):
        e = ellipsoid(shape, (1.0, 1.0, 1.0), (6.5, 6.5, cx), (3.0, 2.4, 2.7), label=i)
        lab[e.data > 0] = i
    rng = np.random.default_rng(seed)
    inten = np.where(lab > 0, 100.0 + 30.0 * rng.random(shape), 0.0).astype(np.float32)
    return extract_prototypes(
        IntensityVolume(geometry, inten), LabelVolume(geometry, lab), [1, 2, 3]
    )


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=Path("demo_data"))
    ap.add_argument("--size", type=int, default=48, help="cube edge in voxels")
    ap.add_argument("--cells", type=int, default=20)
    ap.add_argument("--seed", type=int, default=1)
    args = ap.parse_args()

    args.out.mkdir(parents=True, exist_ok=True)
    shape = (args.size,) * 3
    cells = voronoi_spheroid(shape, (1.0, 1.0, 1.0), n_cells=args.cells, seed=args.seed)
    save_volume(cells, args.out / "cells.rvol")
    db = build_prototype_db(seed=args.seed)
    db.save(args.out / "prototypes")
    print(f"{args.out / 'cells.rvol'}: {len(cells.labels())} cells, shape {shape}")
    print(f"{args.out / 'prototypes'}: {len(db)} prototypes")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
