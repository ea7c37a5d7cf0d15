from .folds import FoldPlan, make_folds
from .manifest import load_manifest, read_manifest, save_dataset, write_manifest
from .nifti import (
    NiftiDatatypeError,
    NiftiError,
    NiftiHeaderError,
    NiftiMagicError,
    NiftiTruncatedError,
    load_volume,
    read_nifti,
    write_nifti,
)
from .synth import SynthConfig, VolumePair, blob_region_mask, synth_generate
from .volume import normalize_volume, resize_volume

__all__ = [
    "FoldPlan",
    "NiftiDatatypeError",
    "NiftiError",
    "NiftiHeaderError",
    "NiftiMagicError",
    "NiftiTruncatedError",
    "SynthConfig",
    "VolumePair",
    "blob_region_mask",
    "load_manifest",
    "load_volume",
    "make_folds",
    "normalize_volume",
    "read_manifest",
    "read_nifti",
    "resize_volume",
    "save_dataset",
    "synth_generate",
    "write_manifest",
    "write_nifti",
]
