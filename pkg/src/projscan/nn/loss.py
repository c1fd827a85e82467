import numpy as np

from ..errors import ShapeError


def mse_loss(pred, target):
    """Mean squared error and its gradient with respect to ``pred``.

    The loss is accumulated in float64; the gradient keeps ``pred``'s dtype.
    """
    pred = np.asarray(pred)
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise ShapeError(f"pred shape {pred.shape} != target shape {target.shape}")
    diff = pred.astype(np.float64) - target.astype(np.float64)
    n = diff.size
    loss = float(np.mean(diff * diff)) if n else 0.0
    grad = (2.0 / max(n, 1) * diff).astype(pred.dtype if pred.dtype.kind == "f" else np.float64)
    return loss, grad
