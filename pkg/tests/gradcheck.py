"""Central finite-difference gradient checks shared by the nn and acceptance tests."""

import numpy as np

from projscan.nn import BatchNorm2D, Conv2D, Dense, Dropout, GlobalAvgPool, ReLU, Sequential

H = 1e-3
KINDS = ("conv2d", "conv2d_stride2", "batchnorm2d", "relu", "dropout", "global_avg_pool", "dense")


def rel_err(a, b):
    a, b = np.ravel(a), np.ravel(b)
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    return 0.0 if scale == 0 else float(np.linalg.norm(a - b) / scale)


def _away_from_zero(x, margin):
    # push values off the ReLU kink so a central difference never straddles it
    return np.where(np.abs(x) < margin, np.sign(x + 1e-300) * margin + x, x)


def fd_grad(f, arr, h=H):
    """Central differences of scalar ``f()`` w.r.t. every element of ``arr`` (in place)."""
    g = np.zeros_like(arr)
    flat = arr.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        up = f()
        flat[i] = old - h
        down = f()
        flat[i] = old
        gflat[i] = (up - down) / (2 * h)
    return g


def check_module(module, x, train=True, seed=0, h=H):
    """Compare analytic and numeric gradients of ``sum(r * module(x))``.

    Returns ``{name: relative error}`` for the input and every parameter.
    ``module`` is a Sequential; dropout masks are pinned by reseeding.
    """
    y, _ = module.forward(x, train=train, rng=np.random.default_rng(seed))
    r = np.random.default_rng(seed + 1).standard_normal(y.shape)

    def f():
        out, _ = module.forward(x, train=train, rng=np.random.default_rng(seed))
        return float(np.sum(r * out))

    module.zero_grad()
    _, caches = module.forward(x, train=train, rng=np.random.default_rng(seed))
    dx = module.backward(r.copy(), caches)
    errs = {"input": rel_err(dx, fd_grad(f, x, h))}
    analytic = {k: v.copy() for k, v in module.named_gradients().items()}
    for name, p in module.named_parameters().items():
        errs[name] = rel_err(analytic[name], fd_grad(f, p, h))
    return errs


def random_case(kind, rng):
    """A float64 single-layer (or layer + helper) module and a matching input."""
    f64 = np.float64
    c, b = int(rng.integers(1, 4)), int(rng.integers(2, 4))
    hgt, wid = int(rng.integers(3, 7)), int(rng.integers(3, 7))
    x = rng.standard_normal((c, b, hgt, wid))
    if kind in ("conv2d", "conv2d_stride2"):
        stride = 2 if kind == "conv2d_stride2" else 1
        layer = Conv2D(c, int(rng.integers(1, 4)), 3, stride, rng=rng, dtype=f64)
        layer.params["bias"][:] = rng.standard_normal(layer.filters)
        return Sequential([layer]), x
    if kind == "batchnorm2d":
        layer = BatchNorm2D(c, dtype=f64)
        layer.params["gamma"][:] = rng.uniform(0.5, 1.5, c)
        layer.params["beta"][:] = rng.standard_normal(c)
        return Sequential([layer]), x * rng.uniform(0.5, 3.0) + rng.standard_normal()
    if kind == "relu":
        return Sequential([ReLU()]), _away_from_zero(x, 10 * H)
    if kind == "dropout":
        return Sequential([Dropout(float(rng.choice([0.2, 0.3, 0.5])))]), x
    if kind == "global_avg_pool":
        return Sequential([GlobalAvgPool()]), x
    if kind == "dense":
        fin, fout = int(rng.integers(1, 8)), int(rng.integers(1, 6))
        layer = Dense(fin, fout, rng=rng, dtype=f64)
        layer.params["bias"][:] = rng.standard_normal(fout)
        return Sequential([layer]), rng.standard_normal((b, fin))
    raise ValueError(kind)
