"""Shared test oracles: finite differences and naive reference ops.

These stay deliberately independent of the library's own forward/backward
code paths; they are the ground truth the fast implementations are checked
against.
"""

import numpy as np


def central_diff(f, leaf_data: np.ndarray, flat_index: int, h: float = 1e-5) -> float:
    """Central finite difference of scalar f() w.r.t. one coordinate of leaf_data.

    ``f`` must recompute the forward pass from ``leaf_data`` on every call.
    """
    flat = leaf_data.reshape(-1)
    orig = flat[flat_index]
    flat[flat_index] = orig + h
    fp = f()
    flat[flat_index] = orig - h
    fm = f()
    flat[flat_index] = orig
    return (fp - fm) / (2.0 * h)


def rel_err(a: float, b: float, floor: float = 1e-6) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)


def check_gradients(build, leaves, rng, probes=20, h=1e-5, tol=1e-4):
    """Compare autodiff gradients against central differences.

    ``build`` constructs the graph and returns the scalar output Tensor;
    ``leaves`` are the Tensors whose gradients get probed. Asserts that the
    relative error stays below ``tol`` on ``probes`` random coordinates per
    leaf.
    """
    for leaf in leaves:
        leaf.grad = None
    out = build()
    out.backward()
    worst = 0.0
    for leaf in leaves:
        assert leaf.grad is not None, "leaf received no gradient"
        n = leaf.data.size
        idx = rng.choice(n, size=min(probes, n), replace=False)
        for i in idx:
            numeric = central_diff(lambda: build().item(), leaf.data, int(i), h=h)
            analytic = leaf.grad.reshape(-1)[int(i)]
            err = rel_err(analytic, numeric)
            worst = max(worst, err)
            assert err < tol, (
                f"gradient mismatch at coord {i}: analytic={analytic}, "
                f"numeric={numeric}, rel_err={err}")
    return worst


def naive_conv2d(x: np.ndarray, w: np.ndarray, stride: int = 1, pad: int = 0) -> np.ndarray:
    """Direct six-loop cross-correlation used as the conv oracle."""
    n, c, h, wd = x.shape
    o, ci, kh, kw = w.shape
    assert ci == c
    xp = np.zeros((n, c, h + 2 * pad, wd + 2 * pad))
    xp[:, :, pad:pad + h, pad:pad + wd] = x
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((n, o, oh, ow))
    for b in range(n):
        for oc in range(o):
            for i in range(oh):
                for j in range(ow):
                    acc = 0.0
                    for ic in range(c):
                        for ki in range(kh):
                            for kj in range(kw):
                                acc += xp[b, ic, i * stride + ki, j * stride + kj] * w[oc, ic, ki, kj]
                    out[b, oc, i, j] = acc
    return out


def two_pass_channel_stats(x: np.ndarray):
    """Reference per-channel mean/biased-variance over batch and space."""
    c = x.shape[1]
    means = np.zeros(c)
    variances = np.zeros(c)
    for k in range(c):
        vals = x[:, k, :, :].reshape(-1)
        means[k] = vals.sum() / vals.size
        variances[k] = ((vals - means[k]) ** 2).sum() / vals.size
    return means, variances
