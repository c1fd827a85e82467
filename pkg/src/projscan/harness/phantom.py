"""Synthetic head-like phantoms with age-dependent structure.

The volume is an ellipsoid (different semi-axes per axis) made of

* an outer shell of value 1.0 whose thickness shrinks with age,
* an interior of level 0.35 carrying a voxel checkerboard texture whose
  amplitude grows with age (it shows up in slice-wise std, barely in means),
* a central ventricle of value 0, elongated along y, that widens with age,
* optional Gaussian noise inside the head.

With ``signal="variance"`` the shell and ventricle are frozen at their
mid-range geometry so that age is only visible through the texture
amplitude, i.e. through slice-wise variance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ParameterError
from ..rng import stream
from ..volume_io import Volume3D

AGE_MIN, AGE_MAX = 44, 82
DESK_DIMS = (64, 64, 52)
SEMI_AXES = (0.42, 0.46, 0.40)
VENTRICLE_AXES = (0.10, 0.28, 0.12)
INTERIOR_LEVEL = 0.35
SIGNALS = ("mixed", "variance")


@dataclass
class Phantom:
    volume: Volume3D
    age: float
    seed: int
    subject_id: str = ""


def age_fraction(age) -> float:
    return (float(age) - AGE_MIN) / (AGE_MAX - AGE_MIN)


def shell_thickness(age) -> float:
    """Shell thickness as a fraction of the normalised radius."""
    return 0.30 - 0.15 * age_fraction(age)


def ventricle_radius(age) -> float:
    return 0.55 + 0.6 * age_fraction(age)


def texture_amplitude(age) -> float:
    return 0.05 + 0.30 * age_fraction(age)


def _radius(dims, axes):
    grids = np.meshgrid(*[np.arange(n, dtype=np.float64) for n in dims], indexing="ij")
    r2 = sum(((g - (n - 1) / 2.0) / (a * n)) ** 2 for g, n, a in zip(grids, dims, axes))
    return np.sqrt(r2), grids


def analytic_phantom(age, dims=DESK_DIMS, signal="mixed") -> np.ndarray:
    """Noise-free phantom as a float64 ``(nx, ny, nz)`` array."""
    if signal not in SIGNALS:
        raise ParameterError(f"signal must be one of {SIGNALS}")
    geo_age = age if signal == "mixed" else (AGE_MIN + AGE_MAX) / 2.0
    r, grids = _radius(dims, SEMI_AXES)
    rv, _ = _radius(dims, VENTRICLE_AXES)
    head = r <= 1.0
    shell = head & (r >= 1.0 - shell_thickness(geo_age))
    ventricle = rv < ventricle_radius(geo_age)
    interior = head & ~shell & ~ventricle
    checker = np.where((grids[0] + grids[1] + grids[2]) % 2 == 0, 1.0, -1.0)
    vol = np.zeros(dims)
    vol[shell] = 1.0
    vol[interior] = INTERIOR_LEVEL + texture_amplitude(age) * checker[interior]
    return vol


def generate_phantom(age, seed: int, dims=DESK_DIMS, noise: float = 0.05,
                     signal: str = "mixed", subject_id: str = "") -> Phantom:
    if not AGE_MIN <= age <= AGE_MAX:
        raise ParameterError(f"age {age} outside [{AGE_MIN}, {AGE_MAX}]")
    if noise < 0:
        raise ParameterError("noise amplitude must be >= 0")
    vol = analytic_phantom(age, dims, signal)
    if noise > 0:
        head = _radius(dims, SEMI_AXES)[0] <= 1.0
        rng = stream(seed, "phantom")
        vol[head] += noise * rng.standard_normal(int(head.sum()))
    return Phantom(Volume3D(vol.astype(np.float32)), float(age), seed, subject_id)


# label distributions ---------------------------------------------------------

def _skewed_weights(ages):
    # beta(2, 3)-shaped: mode in the upper fifties, long tail towards old ages
    u = (ages - AGE_MIN + 0.5) / (AGE_MAX - AGE_MIN + 1)
    return u * (1 - u) ** 2


def age_distribution(kind: str = "uniform") -> tuple[np.ndarray, np.ndarray]:
    """Integer ages and their target probabilities."""
    ages = np.arange(AGE_MIN, AGE_MAX + 1)
    if kind == "uniform":
        w = np.ones(ages.size)
    elif kind == "skewed":
        w = _skewed_weights(ages.astype(np.float64))
    else:
        raise ParameterError(f"unknown age distribution {kind!r}")
    return ages, w / w.sum()


def sample_ages(n: int, kind: str = "uniform", seed: int = 0, weights=None) -> np.ndarray:
    """``n`` integer ages whose histogram follows the target distribution.

    Quotas are allocated by largest remainder, so every age's share is within
    ``1/n`` of its target; order is then shuffled with the given seed.
    """
    ages, p = age_distribution(kind)
    if weights is not None:
        p = np.asarray(weights, dtype=np.float64)
        p = p / p.sum()
    raw = p * n
    counts = np.floor(raw).astype(int)
    short = n - counts.sum()
    if short:
        order = np.argsort(-(raw - counts), kind="stable")
        counts[order[:short]] += 1
    out = np.repeat(ages, counts).astype(np.float64)
    stream(seed, "phantom", n).shuffle(out)
    return out


def generate_cohort(n: int, seed: int = 0, dims=DESK_DIMS, noise: float = 0.05,
                    signal: str = "mixed", distribution: str = "uniform") -> list[Phantom]:
    ages = sample_ages(n, distribution, seed)
    width = max(4, len(str(n)))
    out = []
    for i, age in enumerate(ages):
        sub_seed = int(stream(seed, "phantom", i).integers(2**31))
        out.append(generate_phantom(age, sub_seed, dims, noise, signal,
                                    subject_id=f"sub-{i + 1:0{width}d}"))
    return out
