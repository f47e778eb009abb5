"""Bring raw volumes to the network's input shapes."""
from __future__ import annotations

import numpy as np

from ..errors import DegenerateAxis

TARGET_T = 30


def _resample_axis(v: np.ndarray, axis: int, n: int) -> np.ndarray:
    s = v.shape[axis]
    if s == n:
        return v
    if s < 2:
        raise DegenerateAxis(f"cannot interpolate along an axis of extent {s}")
    if n < 2:
        raise DegenerateAxis(f"target extent must be >= 2, got {n}")
    # corner-aligned: target 0 -> source 0, target n-1 -> source s-1
    pos = np.arange(n) * ((s - 1) / (n - 1))
    lo = np.minimum(np.floor(pos).astype(np.intp), s - 2)
    frac = pos - lo
    shape = [1] * v.ndim
    shape[axis] = n
    frac = frac.reshape(shape)
    a = np.take(v, lo, axis=axis)
    b = np.take(v, lo + 1, axis=axis)
    return a * (1 - frac) + b * frac


def resample_trilinear(vol: np.ndarray, target: tuple) -> np.ndarray:
    """Trilinear resampling of the last three axes of ``vol`` to ``target``.

    Separable linear interpolation, so any field that is linear in each
    coordinate separately is reproduced exactly. Leading axes (time) are
    carried along.
    """
    vol = np.asarray(vol, dtype=np.float64)
    if vol.ndim < 3:
        raise DegenerateAxis(f"need at least 3 axes, got shape {vol.shape}")
    target = tuple(int(t) for t in target)
    if vol.shape[-3:] == target:
        return vol
    for s in vol.shape[-3:]:
        if s < 2:
            raise DegenerateAxis(f"source extent {s} < 2 in shape {vol.shape}")
    out = vol
    for k, n in enumerate(target):
        out = _resample_axis(out, vol.ndim - 3 + k, n)
    return out


def time_indices(t: int, target_t: int = TARGET_T) -> np.ndarray:
    if t < 1:
        raise ValueError("need at least one timestep")
    if t >= target_t:
        if target_t == 1:
            return np.zeros(1, dtype=np.intp)
        # round half up; i*(t-1)/(target_t-1) is exact for the common ratios
        return np.floor(np.arange(target_t) * (t - 1) / (target_t - 1) + 0.5).astype(np.intp)
    return np.arange(target_t) % t


def standardize_time(vol4d: np.ndarray, target_t: int = TARGET_T) -> np.ndarray:
    """Uniform subsampling (T >= target) or cyclic repetition (T < target)."""
    vol4d = np.asarray(vol4d)
    return vol4d[time_indices(vol4d.shape[0], target_t)]


def znormalize(vol: np.ndarray) -> np.ndarray:
    vol = np.asarray(vol, dtype=np.float64)
    std = vol.std()
    if std == 0:
        return np.zeros_like(vol)
    return (vol - vol.mean()) / std


def prepare_fmri(vol4d: np.ndarray, fmri_input: tuple) -> np.ndarray:
    """``(T, D, H, W)`` -> network input ``(T', D', H', W', 1)``."""
    t, d, h, w, c = fmri_input
    v = standardize_time(vol4d, t)
    v = resample_trilinear(v, (d, h, w))
    return znormalize(v)[..., None]


def prepare_mri(vol3d: np.ndarray, mri_input: tuple) -> np.ndarray:
    d, h, w, c = mri_input
    v = np.asarray(vol3d)
    if v.ndim == 4 and v.shape[0] == 1:
        v = v[0]
    return znormalize(resample_trilinear(v, (d, h, w)))[..., None]
