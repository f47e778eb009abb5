import numpy as np

from volnet.data import phantom_dataset
from volnet.models import ModelSpec


def toy_dataset(kind="sm-gru", count=12, delta=0.5, seed=0):
    spec = ModelSpec.toy(kind)
    mri = spec.mri_input if spec.modality == "multi" else None
    return spec, phantom_dataset(count, delta, seed, spec.fmri_input, mri, phantom_dims=(2, 8, 8, 8))


def arrays_equal(a: dict, b: dict) -> bool:
    return a.keys() == b.keys() and all(np.asarray(a[k]).tobytes() == np.asarray(b[k]).tobytes() for k in a)
