"""Seeded procedural brain phantoms.

Structural volumes stand in for GAN-generated MRI: an ellipsoidal skull
shell, a cortex ellipsoid with smooth low-frequency intensity variation,
2-4 interior substructures and Gaussian noise, z-normalised.

Functional phantoms reuse that anatomy and add a BOLD-like sinusoid in
three fixed ellipsoidal regions. Class 1 raises the amplitude of region 1
relative to region 2 by ``delta`` and jitters the oscillation frequency by
up to ``0.2 * delta``, so ``delta = 0`` gives identical class distributions.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..tensor import Tensor
from .preprocess import znormalize

NOISE_FRACTION = 0.05
SHELL_INNER = 0.88
CORTEX_SCALE = 0.84

# fixed functional regions: (centre, radii) in [-1, 1] coordinates (z, y, x)
ROIS = (
    ((0.1, 0.0, -0.4), (0.3, 0.3, 0.3)),
    ((0.1, 0.0, 0.4), (0.3, 0.3, 0.3)),
    ((-0.35, 0.3, 0.0), (0.25, 0.25, 0.25)),
)
BOLD_AMPLITUDE = 1.0
BOLD_CYCLES = 3.0


@dataclass
class Volume3D:
    data: Tensor  # (D, H, W, 1)
    seed: int
    source: str = "phantom"


@dataclass
class Volume4D:
    data: Tensor  # (T, D, H, W, 1)
    subject_id: str
    label: int
    source: str = "phantom"


def _grid(dims):
    axes = [np.linspace(-1.0, 1.0, n) for n in dims]
    return np.meshgrid(*axes, indexing="ij")


def _ellipsoid(grid, centre, radii) -> np.ndarray:
    return sum(((g - c) / r) ** 2 for g, c, r in zip(grid, centre, radii))


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), stream]))


def _anatomy(rng: np.random.Generator, dims) -> tuple[np.ndarray, np.ndarray]:
    """Noise-free structural image in [0, 1] and its head mask."""
    grid = _grid(dims)
    centre = rng.uniform(-0.03, 0.03, 3)
    radii = 0.92 * (1 + rng.uniform(-0.05, 0.05, 3))
    r_outer = _ellipsoid(grid, centre, radii)
    head = r_outer <= 1.0
    shell = head & (r_outer > SHELL_INNER ** 2)
    cortex = _ellipsoid(grid, centre, radii * CORTEX_SCALE) <= 1.0

    # low-frequency intensity field over the cortex
    field = np.zeros(dims)
    for _ in range(4):
        k = rng.uniform(0.5, 2.0, 3)
        phase = rng.uniform(0, 2 * np.pi)
        field += np.cos(sum(ki * g * np.pi for ki, g in zip(k, grid)) + phase)
    field /= 4.0

    img = np.zeros(dims)
    img[shell] = 0.9
    img[cortex] = 0.55 + 0.15 * field[cortex]
    for _ in range(rng.integers(2, 5)):
        c = centre + rng.uniform(-0.4, 0.4, 3) * radii
        r = rng.uniform(0.1, 0.25, 3)
        sub = cortex & (_ellipsoid(grid, c, r) <= 1.0)
        img[sub] = rng.choice([0.25, 0.8])
    return img, head


def generate_phantom_mri(seed: int, dims=(64, 64, 64), normalize: bool = True) -> Volume3D:
    rng = _rng(seed, 0)
    img, head = _anatomy(rng, tuple(dims))
    sigma = NOISE_FRACTION * (img.max() - img.min())
    img[head] += rng.normal(0.0, sigma, int(head.sum()))
    if normalize:
        img = znormalize(img)
    return Volume3D(Tensor(img[..., None]), seed)


def bold_parameters(rng: np.random.Generator, label: int, delta: float) -> dict:
    """Per-subject oscillation parameters for the three regions."""
    scale = BOLD_AMPLITUDE * (1 + rng.uniform(-0.1, 0.1))
    amps = np.full(3, scale)
    freq = np.full(3, BOLD_CYCLES)
    jitter = rng.uniform(-0.2, 0.2, 3)
    phase = rng.uniform(0, 2 * np.pi, 3)
    if label == 1:
        amps[0] *= 1 + delta
        freq *= 1 + delta * jitter
    return {"amplitude": amps, "cycles": freq, "phase": phase}


def generate_phantom_fmri(seed: int, label: int, dims=(30, 28, 28, 28), delta: float = 0.5,
                          subject_id: str | None = None) -> Volume4D:
    if label not in (0, 1):
        raise ValueError(f"label must be 0 or 1, got {label}")
    t_steps, *spatial = dims
    spatial = tuple(spatial)
    rng = _rng(seed, 1 + label)
    anatomy, head = _anatomy(_rng(seed, 0), spatial)
    params = bold_parameters(rng, label, delta)
    grid = _grid(spatial)
    t = np.arange(t_steps) / t_steps
    vol = np.broadcast_to(anatomy, (t_steps,) + spatial).copy()
    for k, (centre, radii) in enumerate(ROIS):
        roi = head & (_ellipsoid(grid, centre, radii) <= 1.0)
        wave = params["amplitude"][k] * np.sin(2 * np.pi * params["cycles"][k] * t + params["phase"][k])
        vol[:, roi] += wave[:, None]
    sigma = NOISE_FRACTION * (vol.max() - vol.min())
    vol[:, head] += rng.normal(0.0, sigma, (t_steps, int(head.sum())))
    vol = znormalize(vol)
    return Volume4D(Tensor(vol[..., None]), subject_id or f"phantom-{seed}", label)
