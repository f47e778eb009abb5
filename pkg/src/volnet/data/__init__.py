"""NIfTI ingestion, preprocessing, phantom generation and dataset splits."""
from .dataset import DataError, Dataset, Sample, nifti_dataset, phantom_dataset, write_phantom_set
from .nifti import NiftiHeader, encode_nifti, read_nifti, write_nifti
from .phantom import Volume3D, Volume4D, generate_phantom_fmri, generate_phantom_mri
from .preprocess import resample_trilinear, standardize_time, znormalize
from .splits import SplitPlan, batch_iter, make_splits

__all__ = [
    "DataError", "Dataset", "Sample", "nifti_dataset", "phantom_dataset", "write_phantom_set",
    "NiftiHeader", "encode_nifti", "read_nifti", "write_nifti",
    "Volume3D", "Volume4D", "generate_phantom_fmri", "generate_phantom_mri",
    "resample_trilinear", "standardize_time", "znormalize",
    "SplitPlan", "batch_iter", "make_splits",
]
