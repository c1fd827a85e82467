"""Principal-component "eigen slices" along one projection axis."""

from __future__ import annotations

import numpy as np

from ..errors import ParameterError
from ..volume_io import PLANE_AXES, Volume3D


def _fix_sign(v: np.ndarray) -> np.ndarray:
    i = int(np.argmax(np.abs(v)))
    return -v if v[i] < 0 else v


def eigen_slices(vol: Volume3D, plane: str, k: int) -> dict:
    """Top-``k`` principal directions of the slices stacked along ``plane``.

    Each slice is one observation.  The decomposition runs on the n x n Gram
    matrix of the mean-centred slices (n = slice count), and the pixel-space
    directions are recovered as ``Xc.T @ u / sqrt(lambda)``.

    Returns ``{"images": [k arrays], "explained_variance": array(k)}``.
    Directions with zero variance come back as all-zero images with a
    fraction of 0.
    """
    if plane not in PLANE_AXES:
        raise ParameterError(f"unknown plane {plane!r}")
    stack = np.moveaxis(vol.data, PLANE_AXES[plane], 0)
    n = stack.shape[0]
    img_shape = stack.shape[1:]
    if not 1 <= k <= n:
        raise ParameterError(f"k={k} outside [1, {n}]")

    x = stack.reshape(n, -1).astype(np.float64)
    xc = x - x.mean(axis=0)
    gram = xc @ xc.T
    evals, evecs = np.linalg.eigh(gram)
    order = np.argsort(evals)[::-1]
    evals = np.clip(evals[order], 0.0, None)
    evecs = evecs[:, order]

    tol = evals[0] * n * np.finfo(np.float64).eps if n else 0.0
    evals = np.where(evals > tol, evals, 0.0)
    total = evals.sum()

    images, fractions = [], np.zeros(k)
    for j in range(k):
        if evals[j] <= 0.0:
            images.append(np.zeros(img_shape))
            continue
        v = xc.T @ evecs[:, j] / np.sqrt(evals[j])
        v /= np.linalg.norm(v)
        images.append(_fix_sign(v).reshape(img_shape))
        fractions[j] = evals[j] / total
    return {"images": images, "explained_variance": fractions}
