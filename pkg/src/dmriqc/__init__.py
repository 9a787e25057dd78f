"""dmriqc: slice-wise artifact detection and QC reporting for diffusion MRI."""

__version__ = "0.1.0"

from .errors import (  # noqa: F401
    ConfigError,
    DmriqcError,
    EmptyExtentError,
    EmptyResultError,
    LeakageError,
    LoadError,
    ModelFormatError,
    SimulationError,
    TrainingError,
    ViewMismatchError,
)
from .volume import (  # noqa: F401
    AXIAL,
    SAGITTAL,
    BrainExtent,
    DWIVolume,
    ExclusionRule,
    SliceSample,
    attach_labels,
    compute_brain_extent,
    extract_slices,
    load_dwi,
    normalize_slice,
    prepare_input,
    read_labels_csv,
    write_labels_csv,
)


def __getattr__(name):
    # heavier submodules load lazily so `import dmriqc` stays light
    import importlib

    lazy = {
        "augment": ".augment",
        "backbone": ".backbone",
        "cli": ".cli",
        "config": ".config",
        "datasets": ".datasets",
        "detectors": ".detectors",
        "evaluation": ".evaluation",
        "features": ".features",
        "heads": ".heads",
        "pipeline": ".pipeline",
        "service": ".service",
        "simulate": ".simulate",
    }
    if name in lazy:
        return importlib.import_module(lazy[name], __name__)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
