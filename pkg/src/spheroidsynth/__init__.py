"""Synthetic 3D microscopy of cell spheroids.

Pipeline: segmented label masks -> Cellular Potts simulation of cell
boundaries -> nucleus prototype placement -> optical imaging simulation ->
instance label post-processing, plus SEG/DET/KID quality metrics and a
grid search over the simulation parameters.
"""

__version__ = "0.1.0"

from .volume import (  # noqa: F401
    IntensityVolume,
    LabelVolume,
    VolumeGeometry,
    crop,
    load_volume,
    save_volume,
    upsample_z,
)
from .config import PipelineConfig, load_config, parse_config  # noqa: F401
from .cpm import (  # noqa: F401
    CpmParams,
    assign_targets,
    export_borders,
    init_state,
    run_mcs,
)
from .imaging import ImagingConfig, simulate_imaging  # noqa: F401
from .metrics import (  # noqa: F401
    HistogramFeatures,
    det_score,
    kid_volumes,
    seg_score,
)
from .morphology import FEATURE_NAMES, FeatureTable, extract_features  # noqa: F401
from .nuclei import (  # noqa: F401
    PlacementConfig,
    PrototypeDB,
    extract_prototypes,
    place_nuclei,
)
from .phantoms import ellipsoid, voronoi_spheroid  # noqa: F401
from .postproc import PostprocConfig, split_and_assign  # noqa: F401
from .scan import evaluate_params, grid_scan  # noqa: F401
