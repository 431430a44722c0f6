"""Residual network construction and forward/backward passes."""

import math
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, DimensionError, StateError
from .layers import (
    BN_BETA, BN_GAMMA, MULTIPLIER, SCALAR_BIAS, WEIGHT,
    BatchNorm, Conv2d, Flatten, GlobalAvgPool, Linear, Multiplier, Param,
    ReLU, ResidualBlock, ScalarBias, Sequential,
)

BLOCK_KINDS = ("mlp", "conv-basic")
SHORTCUT_KINDS = ("identity", "projection")


@dataclass(frozen=True)
class NetworkSpec:
    """Declarative description of a residual network.

    ``input_shape`` is ``(d,)`` (or any shape, flattened) for ``mlp`` and
    ``(C, H, W)`` for ``conv-basic``. ``branch_layers`` may be a tuple giving
    one depth per block. Blocks are split evenly across the stages listed in
    ``shortcut_kinds``; a ``projection`` stage opens with a projection
    shortcut (1x1 stride-2 with channel doubling for ``conv-basic`` after the
    first stage, a square linear map for ``mlp``).
    """

    input_shape: tuple = (64,)
    num_blocks: int = 4
    branch_layers: object = 2
    width: int = 64
    block_kind: str = "mlp"
    num_classes: int = 10
    use_batchnorm: bool = False
    use_scalar_bias: bool = False
    use_multiplier: bool = False
    shortcut_kinds: tuple = ("identity",)
    branch_output_scale: float = 1.0
    residual: bool = True
    bn_eps: float = 1e-5
    bn_momentum: float = 0.9

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(s) for s in self.input_shape))
        object.__setattr__(self, "shortcut_kinds", tuple(self.shortcut_kinds))
        if isinstance(self.branch_layers, (list, tuple)):
            object.__setattr__(self, "branch_layers", tuple(int(m) for m in self.branch_layers))

    def block_depths(self):
        if isinstance(self.branch_layers, tuple):
            return list(self.branch_layers)
        return [int(self.branch_layers)] * self.num_blocks

    def validate(self):
        if self.num_blocks < 1:
            raise ConfigError(f"num_blocks must be >= 1, got {self.num_blocks}")
        depths = self.block_depths()
        if len(depths) != self.num_blocks:
            raise ConfigError(f"got {len(depths)} branch depths for {self.num_blocks} blocks")
        if min(depths) < 1:
            raise ConfigError("every branch needs at least one layer")
        if self.width < 1:
            raise ConfigError(f"width must be positive, got {self.width}")
        if self.num_classes < 2:
            raise ConfigError(f"need at least 2 classes, got {self.num_classes}")
        if self.block_kind not in BLOCK_KINDS:
            raise ConfigError(f"unknown block kind {self.block_kind!r}")
        if self.use_batchnorm and self.use_multiplier:
            raise ConfigError("batchnorm and branch multipliers are mutually exclusive")
        if not self.shortcut_kinds or len(self.shortcut_kinds) > self.num_blocks:
            raise ConfigError("need between 1 and num_blocks stages")
        for kind in self.shortcut_kinds:
            if kind not in SHORTCUT_KINDS:
                raise ConfigError(f"unknown shortcut kind {kind!r}")
        if not self.branch_output_scale > 0:
            raise ConfigError("branch_output_scale must be positive")
        if self.block_kind == "conv-basic" and len(self.input_shape) != 3:
            raise ConfigError("conv-basic needs input_shape (C, H, W)")


@dataclass
class ForwardResult:
    activations: list   # x_0 .. x_L
    logits: np.ndarray
    finite: bool


@dataclass
class BackwardResult:
    grads: dict               # param name -> gradient
    activation_grads: list    # d loss / d x_l for l = 0 .. L


class Network:
    def __init__(self, spec, stem, blocks, head, params):
        self.spec = spec
        self.stem = stem
        self.blocks = blocks
        self.head = head
        self.params = params
        self.by_name = {p.name: p for p in params}
        if len(self.by_name) != len(params):
            raise ConfigError("duplicate parameter names")
        self.initialized = False
        self.init_kind = None
        self.version = 0
        self._cache_version = None

    @property
    def num_blocks(self):
        return len(self.blocks)

    def block_depths(self):
        return self.spec.block_depths()

    def branch_params(self, index):
        return [p for p in self.params if p.branch_index == index]

    def weights(self):
        return [p for p in self.params if p.kind == WEIGHT]

    def batchnorms(self):
        out = []
        for seq in [self.stem, *[b.branch for b in self.blocks], self.head]:
            out.extend(layer for layer in seq.layers if isinstance(layer, BatchNorm))
        return out

    def has_nonzero_bias(self):
        return any(p.kind == SCALAR_BIAS and np.any(p.value != 0) for p in self.params)

    def mark_modified(self):
        self.version += 1
        self._cache_version = None

    def snapshot(self):
        return {p.name: p.value.copy() for p in self.params}

    def restore(self, values):
        for name, value in values.items():
            self.by_name[name].value = value.copy()
        self.mark_modified()

    def set_block_scale(self, scale):
        for block in self.blocks:
            block.out_scale = scale

    def _check_ready(self):
        if not self.initialized:
            raise StateError("network parameters are uninitialized; apply an init scheme first")

    def forward(self, x, train=True, update_stats=True):
        """Run the network, caching every block input for ``backward``.

        NaN/Inf in activations or logits is reported through ``finite``.
        """
        self._check_ready()
        x = np.asarray(x, dtype=np.float64)
        if tuple(x.shape[1:]) != self.spec.input_shape and (
                self.spec.block_kind != "mlp"
                or math.prod(x.shape[1:]) != math.prod(self.spec.input_shape)):
            raise DimensionError(f"input batch {x.shape} does not match spec input {self.spec.input_shape}")
        with np.errstate(all="ignore"):
            h = self.stem.forward(x, train, update_stats)
            acts = [h]
            for block in self.blocks:
                h = block.forward(h, train, update_stats)
                acts.append(h)
            z = self.head.forward(h, train, update_stats)
        self._cache_version = self.version
        finite = bool(np.isfinite(z).all() and np.isfinite(h).all())
        return ForwardResult(acts, z, finite)

    def logits_from(self, start, x, train=True, update_stats=False):
        """Logits when ``x`` is fed as the input of block ``start`` (0-based)."""
        self._check_ready()
        self._cache_version = None
        with np.errstate(all="ignore"):
            for block in self.blocks[start:]:
                x = block.forward(x, train, update_stats)
            return self.head.forward(x, train, update_stats)

    def backward(self, dloss_dz):
        """Reverse-mode pass from ``d loss / d logits``.

        Must follow a ``forward`` on the same parameters; the cache is
        consumed.
        """
        if self._cache_version is None or self._cache_version != self.version:
            raise StateError("no fresh forward cache; call forward before backward")
        self._cache_version = None
        for p in self.params:
            p.zero_grad()
        with np.errstate(all="ignore"):
            dh = self.head.backward(np.asarray(dloss_dz, dtype=np.float64))
            dacts = [dh]
            for block in reversed(self.blocks):
                dh = block.backward(dh)
                dacts.append(dh)
            self.stem.backward(dh)
        dacts.reverse()
        return BackwardResult({p.name: p.grad for p in self.params}, dacts)


class _Builder:
    def __init__(self, spec):
        self.spec = spec
        self.params = []

    def param(self, name, shape, kind, **tags):
        p = Param(name, np.full(shape, np.nan), kind, **tags)
        self.params.append(p)
        return p

    def bias(self, name, **tags):
        return ScalarBias(self.param(name, (), SCALAR_BIAS, **tags))

    def batchnorm(self, name, channels, **tags):
        g = self.param(name + ".gamma", (channels,), BN_GAMMA, **tags)
        b = self.param(name + ".beta", (channels,), BN_BETA, **tags)
        return BatchNorm(g, b, self.spec.bn_eps, self.spec.bn_momentum)

    def linear(self, name, n_in, n_out, **tags):
        return Linear(self.param(name, (n_out, n_in), WEIGHT, fan_in=n_in, fan_out=n_out, **tags))

    def conv(self, name, c_in, c_out, k, stride=1, pad=0, **tags):
        w = self.param(name, (c_out, c_in, k, k), WEIGHT, fan_in=c_in * k * k, fan_out=c_out * k * k, **tags)
        return Conv2d(w, stride, pad)


def _stage_sizes(num_blocks, num_stages):
    base, extra = divmod(num_blocks, num_stages)
    return [base + (1 if s < extra else 0) for s in range(num_stages)]


def build(spec):
    """Instantiate the parameter graph for ``spec`` with NaN-filled parameters."""
    spec.validate()
    b = _Builder(spec)
    sb, bn = spec.use_scalar_bias, spec.use_batchnorm
    conv = spec.block_kind == "conv-basic"
    width = spec.width

    stem_layers = []
    if conv:
        stem_layers.append(b.conv("stem.weight", spec.input_shape[0], width, 3, 1, 1))
    else:
        stem_layers += [Flatten(), b.linear("stem.weight", math.prod(spec.input_shape), width)]
    if bn:
        stem_layers.append(b.batchnorm("stem.bn", width))
    if sb:
        stem_layers.append(b.bias("stem.bias"))
    if conv:
        stem_layers.append(ReLU())
    stem = Sequential(stem_layers)

    blocks = []
    depths = spec.block_depths()
    l = 0
    channels = width
    for stage, (kind, count) in enumerate(zip(spec.shortcut_kinds, _stage_sizes(spec.num_blocks, len(spec.shortcut_kinds)))):
        for j in range(count):
            m = depths[l]
            name = f"block{l}"
            project = kind == "projection" and j == 0
            down = conv and project and stage > 0
            c_in, c_out = channels, channels * 2 if down else channels
            tags = dict(in_branch=True, branch_index=l)
            layers = []
            for i in range(1, m + 1):
                lt = dict(tags, layer_index=i, is_last_in_branch=(i == m), relu_input=(conv or i > 1))
                if sb:
                    layers.append(b.bias(f"{name}.b{i}a", **tags))
                if conv:
                    stride = 2 if (down and i == 1) else 1
                    layers.append(b.conv(f"{name}.w{i}", c_in if i == 1 else c_out, c_out, 3, stride, 1, **lt))
                else:
                    layers.append(b.linear(f"{name}.w{i}", width, width, **lt))
                if bn:
                    layers.append(b.batchnorm(f"{name}.bn{i}", c_out, **tags))
                if i < m:
                    if sb:
                        layers.append(b.bias(f"{name}.b{i}b", **tags))
                    layers.append(ReLU())
                elif spec.use_multiplier:
                    layers.append(Multiplier(b.param(f"{name}.mult", (), MULTIPLIER, **tags)))
            shortcut = None
            if project:
                if conv:
                    shortcut = Sequential([b.conv(f"{name}.proj", c_in, c_out, 1, 2 if down else 1, 0,
                                                  is_projection=True, relu_input=True)])
                else:
                    shortcut = Sequential([b.linear(f"{name}.proj", width, width, is_projection=True)])
            blocks.append(ResidualBlock(Sequential(layers), shortcut, spec.branch_output_scale,
                                        post_relu=conv, residual=spec.residual))
            channels = c_out
            l += 1

    head_layers = [GlobalAvgPool()] if conv else []
    if bn:
        head_layers.append(b.batchnorm("head.bn", channels))
    if sb:
        head_layers.append(b.bias("head.bias"))
    head_layers.append(b.linear("classifier.weight", channels, spec.num_classes,
                                is_classifier=True, relu_input=conv and not bn))
    head = Sequential(head_layers)
    return Network(spec, stem, blocks, head, b.params)
