"""Dense patch-correspondence fields over CNN activation tensors.

Given per-layer activation tensors for a query image and a database of
pixel-aligned training pairs, this package computes a dense nearest-neighbor
field between hyperpatches (small h×w×D sub-tensors) — exhaustively or with a
seeded PatchMatch-style approximate search — then composes input/output image
reconstructions, correspondence visualizations, and segmentation metrics from
the field.
"""

from .database import TrainingDatabase, TrainingPair, flatten_descriptor
from .compose import (
    CorrespondenceMap,
    CoverageReport,
    correspondence_map,
    reconstruct,
    semantic_correspondence,
)
from .errors import (
    BadMagicError,
    BadVersionError,
    BoundsError,
    ConfigError,
    DuplicateIdError,
    EmptySetError,
    FormatError,
    ManifestError,
    MissingFileError,
    NonFiniteValueError,
    PatchfieldError,
    ShapeError,
    ShapeMismatchError,
    TruncatedFileError,
    UndefinedMetricError,
)
from .metrics import (
    ClassPalette,
    compare_to_baseline,
    confusion,
    format_delta,
    mean_iou,
    mean_pixel_accuracy,
    metric_report,
    quantize,
)
from .rng import CellStreams, SplitMix64
from .search import (
    Correspondence,
    NNField,
    SearchConfig,
    exhaustive_search,
    hpm_init,
    hpm_propagate,
    hpm_random_search,
    hpm_run,
)
from .store import (
    ingest,
    filter_manifest,
    load_image,
    load_manifest,
    load_query_spec,
    pix2pix_layer_table,
    read_field,
    read_tensor,
    save_image,
    write_field,
    write_tensor,
)
from .tensors import (
    ActivationTensor,
    HyperPatchView,
    LayerSpec,
    PatchRect,
    cosine_distance,
    extract_hyperpatch,
    layer_geometry,
)

__version__ = "0.1.0"
