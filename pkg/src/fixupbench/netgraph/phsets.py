"""Positively homogeneous parameter sets.

Scaling every member of such a set by ``alpha > 0`` scales the logits by
``alpha``, provided the network has no active biases or normalization.
"""

from dataclasses import dataclass

import numpy as np


@dataclass
class PhSet:
    members: tuple   # parameter names
    label: str
    warning: str = ""


def ph_sets(net):
    """Return the stem, classifier and projection-union sets of ``net``."""
    warning = ""
    if net.spec.use_batchnorm:
        warning = "network uses batchnorm; sets are not positively homogeneous"
    elif net.has_nonzero_bias():
        warning = "network has nonzero biases; sets are not positively homogeneous"
    sets = [
        PhSet(("stem.weight",), "stem weight", warning),
        PhSet(("classifier.weight",), "classifier weight", warning),
    ]
    for l in range(net.num_blocks):
        proj = f"block{l}.proj"
        if proj in net.by_name:
            sets.append(PhSet((proj, f"block{l}.w1"), f"projection + first branch layer of block {l}", warning))
    return sets


def scaled_logits(net, x, members, alpha, train=False):
    """Logits after multiplying the ``members`` parameters by ``alpha``; restores them after."""
    saved = {name: net.by_name[name].value for name in members}
    try:
        for name in members:
            net.by_name[name].value = alpha * saved[name]
        net.mark_modified()
        return net.forward(x, train=train, update_stats=False).logits
    finally:
        for name, value in saved.items():
            net.by_name[name].value = value
        net.mark_modified()


def ph_scaling_error(net, x, members, alpha):
    """Max relative error of ``logits(alpha * theta) = alpha * logits(theta)``."""
    base = net.forward(x, train=False, update_stats=False).logits
    scaled = scaled_logits(net, x, members, alpha)
    denom = max(float(np.abs(alpha * base).max()), 1e-300)
    return float(np.abs(scaled - alpha * base).max()) / denom
