"""Central finite-difference check of network parameter gradients."""

import numpy as np

from .netgraph import cross_entropy


def loss_at(net, x, y, train):
    out = net.forward(x, train=train, update_stats=False)
    return cross_entropy(out.logits, y).mean


def relative_error(a, b, zero=1e-8):
    """``||a - b|| / max(||a||, ||b||)``.

    When both norms are below ``zero`` the gradient is zero up to roundoff
    (for instance a batchnorm shift that a later normalization cancels) and
    the plain difference is returned instead.
    """
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    diff = np.linalg.norm(a - b)
    return float(diff / scale) if scale >= zero else float(diff)


def numeric_grad(net, x, y, name, h=1e-5, train=True):
    p = net.by_name[name]
    saved = p.value
    base = np.array(saved, dtype=np.float64)
    grad = np.zeros_like(base)
    try:
        for i in range(base.size):
            for sign in (1, -1):
                v = base.copy()
                v.flat[i] += sign * h
                p.value = v
                net.mark_modified()
                grad.flat[i] += sign * loss_at(net, x, y, train)
        grad /= 2 * h
    finally:
        p.value = saved
        net.mark_modified()
    return grad


def check_gradients(net, x, y, h=1e-5, train=True):
    """Per-parameter relative error between backward and central differences.

    BatchNorm layers use batch statistics (``train``) without touching
    running statistics, so every evaluation sees the same function.
    """
    out = net.forward(x, train=train, update_stats=False)
    back = net.backward(cross_entropy(out.logits, y).grad)
    analytic = {k: g.copy() for k, g in back.grads.items()}
    return {name: relative_error(analytic[name], numeric_grad(net, x, y, name, h, train))
            for name in analytic}
