"""Run configuration: a line-based ``section.key = value`` format.

Blank lines and ``#`` comments are ignored. Every key has a default, so an
empty file is a valid configuration. Unknown keys and unparsable values are
errors carrying the offending line number.
"""

import math
from dataclasses import dataclass, field

from .data import load_cifar10_bin, load_idx, synth_gaussian, Splits
from .errors import ConfigError
from .init import SCHEMES, SQRT_HALF, InitScheme
from .netgraph import NetworkSpec
from .train import TrainConfig

# Sweep variants on top of the init schemes: "bn" is He init with batchnorm.
VARIANTS = SCHEMES + ("bn",)


def _bool(text):
    low = text.lower()
    if low in ("true", "yes", "on", "1"):
        return True
    if low in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt_float(text):
    return None if text.lower() in ("auto", "none") else float(text)


def _list(conv):
    def parse(text):
        return tuple(conv(item.strip()) for item in text.split(",") if item.strip())
    return parse


def _fmt(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if value is None:
        return "auto"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ", ".join(_fmt(v) for v in value)
    return str(value)


# section -> key -> (parser, default)
SCHEMA = {
    "arch": {
        "block_kind": (str, "mlp"),
        "num_blocks": (int, 8),
        "branch_layers": (int, 2),
        "width": (int, 64),
        "use_batchnorm": (_bool, False),
        "use_scalar_bias": (_bool, True),
        "use_multiplier": (_bool, True),
        "shortcuts": (_list(str), ("identity",)),
        "residual": (_bool, True),
    },
    "init": {
        "scheme": (str, "fixup"),
        "base": (str, "he"),
        "lsuv_tol": (float, 0.05),
        "lsuv_max_iter": (int, 10),
    },
    "ablation": {
        "no_bias": (_bool, False),
        "no_residual": (_bool, False),
        "scale_mult": (float, 1.0),
        "zero_last": (_bool, True),
    },
    "train": {
        "lr": (float, 0.1),
        "momentum": (float, 0.9),
        "weight_decay": (float, 5e-4),
        "epochs": (int, 1),
        "batch_size": (int, 128),
        "scalar_lr_multiplier": (_opt_float, None),
        "mixup_alpha": (float, 0.0),
        "lr_schedule": (str, "constant"),
        "lr_milestones": (_list(int), ()),
        "lr_gamma": (float, 0.1),
        "log_every": (int, 100),
        "scalar_weight_decay": (_bool, False),
        "measure_updates": (_bool, True),
    },
    "data": {
        "source": (str, "synth"),
        "num_classes": (int, 10),
        "dim": (int, 64),
        "n_per_class": (int, 1000),
        "separation": (float, 3.0),
        "seed": (int, 0),
        "train_images": (str, ""),
        "train_labels": (str, ""),
        "test_images": (str, ""),
        "test_labels": (str, ""),
        "cifar_train": (_list(str), ()),
        "cifar_test": (_list(str), ()),
    },
    "run": {
        "seeds": (_list(int), (0,)),
        "run_id": (str, "run"),
    },
    "sweep": {
        "depths": (_list(int), (8, 64, 256, 1024)),
        "inits": (_list(str), ("fixup", "bn", "he", "sqrt_half")),
    },
    "probe": {
        "batch_size": (int, 128),
        "eta": (float, 1e-4),
        "depths": (_list(int), (4, 16, 64, 256)),
        "width": (int, 32),
        "update_ratio_max": (float, 3.0),
        "theorem_nets": (int, 4),
        "curve_epochs": (int, 0),
    },
}


@dataclass
class RunConfig:
    values: dict = field(default_factory=dict)   # "section.key" -> parsed value

    def __getitem__(self, key):
        return self.values[key]

    def get(self, section, key):
        return self.values[f"{section}.{key}"]

    def replace(self, **updates):
        """Copy with ``section__key=value`` overrides."""
        values = dict(self.values)
        for k, v in updates.items():
            name = k.replace("__", ".", 1)
            if name not in values:
                raise ConfigError(f"unknown key {name!r}")
            values[name] = v
        cfg = RunConfig(values)
        cfg.validate()
        return cfg

    # -- derived objects

    def network_spec(self, variant=None, depth=None, input_shape=None, num_classes=None):
        """NetworkSpec for ``variant`` (default: ``init.scheme``).

        Baselines other than Fixup are built without scalar biases and
        multipliers; ``bn`` adds batchnorm; ``sqrt_half`` sets the block
        output scale.
        """
        variant = variant or self.get("init", "scheme")
        fixup = variant == "fixup"
        bias = self.get("arch", "use_scalar_bias") and not self.get("ablation", "no_bias")
        kind = self.get("arch", "block_kind")
        if input_shape is None:
            input_shape = (self.get("data", "dim"),) if kind == "mlp" else (3, 32, 32)
        spec = NetworkSpec(
            input_shape=input_shape,
            num_blocks=depth or self.get("arch", "num_blocks"),
            branch_layers=self.get("arch", "branch_layers"),
            width=self.get("arch", "width"),
            block_kind=kind,
            num_classes=num_classes or self.get("data", "num_classes"),
            use_batchnorm=variant == "bn" or (self.get("arch", "use_batchnorm") and not fixup),
            use_scalar_bias=bias and fixup,
            use_multiplier=self.get("arch", "use_multiplier") and fixup,
            shortcut_kinds=self.get("arch", "shortcuts"),
            branch_output_scale=SQRT_HALF if variant == "sqrt_half" else 1.0,
            residual=self.get("arch", "residual") and not self.get("ablation", "no_residual"),
        )
        try:
            spec.validate()
        except ConfigError as exc:
            raise ConfigError(f"arch: {exc}") from None
        return spec

    def init_scheme(self, variant=None):
        variant = variant or self.get("init", "scheme")
        return InitScheme(
            kind="he" if variant == "bn" else variant,
            base=self.get("init", "base"),
            lsuv_tol=self.get("init", "lsuv_tol"),
            lsuv_max_iter=self.get("init", "lsuv_max_iter"),
            scale_mult=self.get("ablation", "scale_mult"),
            zero_last=self.get("ablation", "zero_last"),
        )

    def train_config(self, seed):
        return TrainConfig(
            lr=self.get("train", "lr"),
            momentum=self.get("train", "momentum"),
            weight_decay=self.get("train", "weight_decay"),
            epochs=self.get("train", "epochs"),
            batch_size=self.get("train", "batch_size"),
            scalar_lr_multiplier=self.get("train", "scalar_lr_multiplier"),
            mixup_alpha=self.get("train", "mixup_alpha"),
            lr_schedule=self.get("train", "lr_schedule"),
            lr_milestones=self.get("train", "lr_milestones"),
            lr_gamma=self.get("train", "lr_gamma"),
            seed=seed,
            log_every=self.get("train", "log_every"),
            scalar_weight_decay=self.get("train", "scalar_weight_decay"),
        )

    def dataset(self):
        """Load the configured data; file errors propagate as OSError/FormatError."""
        source = self.get("data", "source")
        if source == "synth":
            return synth_gaussian(self.get("data", "num_classes"), self.get("data", "dim"),
                                  self.get("data", "n_per_class"), self.get("data", "separation"),
                                  self.get("data", "seed"))
        if source == "idx":
            c = self.get("data", "num_classes")
            train = load_idx(self.get("data", "train_images"), self.get("data", "train_labels"), c)
            test = load_idx(self.get("data", "test_images"), self.get("data", "test_labels"), c,
                            stats=(train.mean, train.std))
            return Splits(train, test)
        train = load_cifar10_bin(list(self.get("data", "cifar_train")))
        test = load_cifar10_bin(list(self.get("data", "cifar_test")), stats=(train.mean, train.std))
        return Splits(train, test)

    # -- checks and echo

    def validate(self):
        v = self.values
        if v["init.scheme"] not in SCHEMES:
            raise ConfigError(f"init.scheme must be one of {', '.join(SCHEMES)}")
        if v["init.scheme"] == "fixup" and v["arch.use_batchnorm"]:
            raise ConfigError("init.scheme = fixup cannot be combined with arch.use_batchnorm = true")
        for name in v["sweep.inits"]:
            if name not in VARIANTS:
                raise ConfigError(f"sweep.inits: unknown variant {name!r}")
        if v["data.source"] not in ("synth", "idx", "cifar10"):
            raise ConfigError("data.source must be synth, idx or cifar10")
        if v["data.source"] == "cifar10" and v["arch.block_kind"] != "conv-basic":
            raise ConfigError("cifar10 data needs arch.block_kind = conv-basic")
        if not v["run.seeds"]:
            raise ConfigError("run.seeds must list at least one seed")
        if v["probe.batch_size"] < 2:
            raise ConfigError("probe.batch_size must be >= 2")
        if not v["probe.eta"] >= 0 or not math.isfinite(v["probe.eta"]):
            raise ConfigError("probe.eta must be a finite non-negative number")
        if any(d < 1 for d in v["sweep.depths"] + v["probe.depths"]):
            raise ConfigError("depths must be positive")
        try:
            self.init_scheme().validate()
            self.train_config(0).validate()
            self.network_spec()
        except ConfigError as exc:
            raise ConfigError(str(exc)) from None

    def echo_lines(self):
        return [f"{k} = {_fmt(self.values[k])}" for k in sorted(self.values)]


def defaults():
    return {f"{s}.{k}": default for s, keys in SCHEMA.items() for k, (_, default) in keys.items()}


def parse_config(text):
    """Parse configuration text into a validated RunConfig."""
    values = defaults()
    lines = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'section.key = value'")
        name, value = (part.strip() for part in line.split("=", 1))
        section, _, key = name.partition(".")
        if section not in SCHEMA or key not in SCHEMA[section]:
            raise ConfigError(f"line {lineno}: unknown key {name!r}")
        parser = SCHEMA[section][key][0]
        try:
            values[name] = parser(value)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {name}: {exc}") from None
        lines[name] = lineno
    cfg = RunConfig(values)
    try:
        cfg.validate()
    except ConfigError as exc:
        # attribute the failure to the last line that touched a named key, if any
        hit = [lines[k] for k in lines if k in str(exc)]
        where = f"line {max(hit)}: " if hit else ""
        raise ConfigError(f"{where}{exc}") from None
    return cfg


def config_from_echo(csv_text):
    """Rebuild the RunConfig echoed in the ``# key = value`` header of an output file."""
    body = []
    for line in csv_text.splitlines():
        if not line.startswith("# "):
            break
        body.append(line[2:])
    return parse_config("\n".join(body))
