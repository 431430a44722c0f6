"""Initialization schemes: He, Xavier, Fixup, sqrt(1/2) rescaling and LSUV.

Every scheme draws a base sample for each weight in registry order from the
same generator, then rescales or zeroes. Two schemes applied with the same
seed therefore give bitwise-identical stem and shortcut weights.
"""

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, DomainError, PreconditionError
from .netgraph.layers import (
    BN_BETA, BN_GAMMA, MULTIPLIER, SCALAR_BIAS, WEIGHT, Conv2d, Linear,
)

SCHEMES = ("he", "xavier", "fixup", "lsuv", "sqrt_half")
BASES = ("he", "xavier")
SQRT_HALF = math.sqrt(0.5)


@dataclass(frozen=True)
class InitScheme:
    kind: str = "fixup"
    base: str = "he"
    lsuv_tol: float = 0.05
    lsuv_max_iter: int = 10
    # ablation switches (fixup only)
    scale_mult: float = 1.0
    zero_last: bool = True
    zero_classifier: bool = True

    def validate(self):
        if self.kind not in SCHEMES:
            raise ConfigError(f"unknown init scheme {self.kind!r}")
        if self.base not in BASES:
            raise ConfigError(f"unknown base init {self.base!r}")
        if not self.lsuv_tol > 0 or self.lsuv_max_iter < 1:
            raise ConfigError("lsuv_tol must be positive and lsuv_max_iter >= 1")
        if not self.scale_mult > 0:
            raise ConfigError("scale_mult must be positive")


def fixup_scale(num_branches, m):
    """Rule-2 rescaling factor ``L ** (-1 / (2m - 2))`` for a branch of ``m`` layers."""
    if num_branches < 1:
        raise DomainError(f"number of residual branches must be >= 1, got {num_branches}")
    if m < 2:
        raise DomainError(f"fixup scale is undefined for m={m} (needs m >= 2)")
    return float(num_branches) ** (-1.0 / (2 * m - 2))


def base_sample(p, base, rng):
    """He: normal with variance ``gain / fan_in``, gain 2 when the layer's input
    is rectified and 1 otherwise. Xavier: uniform with gain 1."""
    if base == "he":
        gain = 2.0 if p.relu_input else 1.0
        return T.sample("normal", p.shape, rng, std=math.sqrt(gain / p.fan_in))
    a = math.sqrt(6.0 / (p.fan_in + p.fan_out))
    return T.sample("uniform", p.shape, rng, low=-a, high=a)


def _reset_non_weights(net):
    for p in net.params:
        if p.kind in (SCALAR_BIAS, BN_BETA):
            p.value = np.zeros(p.shape)
        elif p.kind in (MULTIPLIER, BN_GAMMA):
            p.value = np.ones(p.shape)
    for bn in net.batchnorms():
        bn.running_mean = np.zeros_like(bn.running_mean)
        bn.running_var = np.ones_like(bn.running_var)


def _finish(net, kind):
    net.initialized = True
    net.init_kind = kind
    net.mark_modified()


def apply_standard(net, rng, base="he"):
    for p in net.weights():
        p.value = base_sample(p, base, rng)
    _reset_non_weights(net)
    net.set_block_scale(net.spec.branch_output_scale)
    _finish(net, base)


def apply_he(net, rng):
    apply_standard(net, rng, "he")


def apply_xavier(net, rng):
    apply_standard(net, rng, "xavier")


def apply_fixup(net, rng, base="he", scale_mult=1.0, zero_last=True, zero_classifier=True):
    """Fixup: zero classifier and last branch layers, rescale the rest of each branch.

    Branches are rescaled with their own depth ``m`` and the global branch
    count ``L``. A single-layer branch is zero-initialized with a warning.
    Shortcut, stem and projection weights keep the unscaled base draw.
    """
    if net.spec.use_batchnorm:
        raise ConfigError("fixup cannot be applied to a batchnorm network")
    depths = net.block_depths()
    num_branches = net.num_blocks
    for p in net.weights():
        draw = base_sample(p, base, rng)
        if p.is_classifier and zero_classifier:
            draw = np.zeros(p.shape)
        elif p.in_branch:
            m = depths[p.branch_index]
            if m == 1:
                draw = np.zeros(p.shape)
            elif p.is_last_in_branch and zero_last:
                draw = np.zeros(p.shape)
            else:
                draw = draw * (fixup_scale(num_branches, m) * scale_mult)
        p.value = draw
    if 1 in depths:
        warnings.warn("fixup: single-layer branches have no defined rescaling; zero-initialized", stacklevel=2)
    _reset_non_weights(net)
    net.set_block_scale(net.spec.branch_output_scale)
    _finish(net, "fixup")


def apply_sqrt_half(net, rng, base="he"):
    """Standard init with every block output scaled by sqrt(1/2)."""
    if not math.isclose(net.spec.branch_output_scale, SQRT_HALF, rel_tol=1e-12):
        raise ConfigError("sqrt_half init needs a network built with branch_output_scale = sqrt(1/2)")
    apply_standard(net, rng, base)
    net.init_kind = "sqrt_half"


@dataclass
class LsuvReport:
    block_variances: list                         # per-unit variance of each branch's last weight layer output
    scales: dict = field(default_factory=dict)    # weight name -> cumulative rescale factor
    iterations: dict = field(default_factory=dict)
    dead: list = field(default_factory=list)      # weight names whose output variance was zero


def _per_unit_variance(out):
    units = math.prod(out.shape[1:])
    return T.variance_sum(out) / units


def _orthogonal_init(net, rng):
    for p in net.weights():
        q = T.sample("orthogonal", (p.shape[0], math.prod(p.shape[1:])), rng)
        p.value = q.reshape(p.shape)
    _reset_non_weights(net)
    net.set_block_scale(net.spec.branch_output_scale)


def _walk(layers, h, report, tol, max_iter):
    """Forward through ``layers`` in eval mode, normalizing each weight layer's output."""
    last_var = None
    for layer in layers:
        if isinstance(layer, (Linear, Conv2d)) and not layer.weight.is_classifier:
            w = layer.weight
            iters = 0
            total = 1.0
            out = layer.forward(h, train=False)
            v = _per_unit_variance(out)
            while abs(v - 1.0) > tol and iters < max_iter:
                if not v > 0 or not math.isfinite(v):
                    report.dead.append(w.name)
                    break
                s = 1.0 / math.sqrt(v)
                w.value = w.value * s
                total *= s
                iters += 1
                out = layer.forward(h, train=False)
                v = _per_unit_variance(out)
            report.scales[w.name] = total
            report.iterations[w.name] = iters
            last_var = v
            h = out
        else:
            h = layer.forward(h, train=False)
    return h, last_var


def lsuv_rescale(net, probe_batch, tol=0.05, max_iter=10):
    """Layer-sequential unit-variance pass over the current weights.

    Stem, then each block's branch layers in order: every weight layer is
    rescaled by ``1/sqrt(v)`` until the per-unit variance ``v`` of its output
    on ``probe_batch`` lies within ``1 +- tol``. Shortcut projections and the
    classifier keep their orthogonal draw.
    """
    probe_batch = np.asarray(probe_batch, dtype=np.float64)
    if probe_batch.shape[0] < 16:
        raise PreconditionError("LSUV needs a probe batch of at least 16 examples")
    if net.spec.use_batchnorm:
        raise ConfigError("LSUV is a normalization-free baseline; network uses batchnorm")
    report = LsuvReport([])
    with np.errstate(all="ignore"):
        h, _ = _walk(net.stem.layers, probe_batch, report, tol, max_iter)
        for block in net.blocks:
            _, v = _walk(block.branch.layers, h, report, tol, max_iter)
            report.block_variances.append(v)
            h = block.forward(h, train=False)
    net.mark_modified()
    return report


def apply_lsuv(net, probe_batch, rng, tol=0.05, max_iter=10):
    _orthogonal_init(net, rng)
    _finish(net, "lsuv")
    return lsuv_rescale(net, probe_batch, tol, max_iter)


def apply_init(net, scheme, rng, probe_batch=None):
    """Apply ``scheme`` to ``net``; returns the LSUV report for ``lsuv``, else None."""
    scheme.validate()
    if scheme.kind == "he":
        apply_he(net, rng)
    elif scheme.kind == "xavier":
        apply_xavier(net, rng)
    elif scheme.kind == "fixup":
        apply_fixup(net, rng, scheme.base, scheme.scale_mult, scheme.zero_last, scheme.zero_classifier)
    elif scheme.kind == "sqrt_half":
        apply_sqrt_half(net, rng, scheme.base)
    else:
        if probe_batch is None:
            raise ConfigError("lsuv needs a probe batch")
        return apply_lsuv(net, probe_batch, rng, scheme.lsuv_tol, scheme.lsuv_max_iter)
    return None
