"""Command-line entry point: ``verify``, ``sweep-depth``, ``train`` and ``probe``.

Every command writes CSV whose first lines echo the resolved configuration
as ``# section.key = value`` comments. Exit codes: 0 success, 1 a check
failed, 2 configuration error, 3 I/O error.
"""

import argparse
import csv
import io
import math
import sys
from dataclasses import astuple, replace

import numpy as np

from . import probe as P
from .config import config_from_echo, parse_config
from .data import synth_gaussian
from .errors import ConfigError, FormatError, UpdateScaleError
from .gradcheck import check_gradients
from .init import InitScheme, apply_init
from .netgraph import NetworkSpec, build, cross_entropy, one_hot, ph_scaling_error, ph_sets, soft_cross_entropy
from .tensor import make_rng
from .train import METRICS_COLUMNS, mixup_batch, train

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_IO = 0, 1, 2, 3

VERIFY_COLUMNS = ("check", "seed", "detail", "lhs", "rhs", "pass")
PROBE_COLUMNS = ("probe", "seed", "depth", "index", "lhs", "rhs", "pass")


def fmt(value):
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def render_csv(cfg, columns, rows):
    buf = io.StringIO()
    for line in cfg.echo_lines():
        buf.write(f"# {line}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    writer.writerows([fmt(v) for v in row] for row in rows)
    return buf.getvalue()


def read_csv(text):
    """Split an emitted file into ``(config, header, rows)``; values stay strings."""
    cfg = config_from_echo(text)
    body = [line for line in text.splitlines() if not line.startswith("#")]
    table = list(csv.reader(body))
    return cfg, tuple(table[0]), [tuple(r) for r in table[1:]]


# -- sweep / train --------------------------------------------------------------

def _probe_inputs(data, n):
    return data.train.inputs[:n]


def init_net(cfg, variant, depth, seed, data):
    spec = cfg.network_spec(variant, depth, input_shape=data.train.inputs.shape[1:],
                            num_classes=data.num_classes)
    net = build(spec)
    apply_init(net, cfg.init_scheme(variant), make_rng(seed),
               probe_batch=_probe_inputs(data, max(16, cfg.get("probe", "batch_size"))))
    return net


def run_sweep(cfg, data=None):
    """One first-epoch record per (depth, variant, seed), in that nesting order."""
    data = data or cfg.dataset()
    rows = []
    for depth in cfg.get("sweep", "depths"):
        for variant in cfg.get("sweep", "inits"):
            for seed in cfg.get("run", "seeds"):
                net = init_net(cfg, variant, depth, seed, data)
                records = train(net, data, replace(cfg.train_config(seed), epochs=1),
                                run_id=f"{variant}-L{depth}-s{seed}",
                                measure_updates=cfg.get("train", "measure_updates"))
                rec = records[-1]
                rec.init = variant
                rows.append(rec)
    return rows


def run_train(cfg, data=None):
    data = data or cfg.dataset()
    rows = []
    variant = cfg.get("init", "scheme")
    for seed in cfg.get("run", "seeds"):
        net = init_net(cfg, variant, cfg.get("arch", "num_blocks"), seed, data)
        rows.extend(train(net, data, cfg.train_config(seed), run_id=f"{cfg.get('run', 'run_id')}-s{seed}",
                          measure_updates=cfg.get("train", "measure_updates")))
    return rows


# -- verify -----------------------------------------------------------------------

def _probe_batch(cfg, seed):
    data = synth_gaussian(cfg.get("data", "num_classes"), cfg.get("data", "dim"),
                          max(8, cfg.get("probe", "batch_size")), cfg.get("data", "separation"), seed)
    n = cfg.get("probe", "batch_size")
    return data.train.inputs[:n], one_hot(data.train.labels[:n], data.num_classes)


def _bias_free_net(cfg, seed, index, input_dim, num_classes):
    """He or Xavier init (alternating), no biases, no batchnorm."""
    spec = NetworkSpec(input_shape=(input_dim,), num_blocks=cfg.get("arch", "num_blocks"),
                       branch_layers=cfg.get("arch", "branch_layers"), width=cfg.get("probe", "width"),
                       num_classes=num_classes, shortcut_kinds=("projection",))
    net = build(spec)
    base = ("he", "xavier")[index % 2]
    apply_init(net, InitScheme(kind=base), make_rng(1000 * seed + index))
    return net


def check_gradcheck(cfg, seed):
    rng = make_rng(seed)
    spec = NetworkSpec(input_shape=(5,), num_blocks=2, branch_layers=cfg.get("arch", "branch_layers"),
                       width=4, num_classes=3, use_scalar_bias=True, use_multiplier=True,
                       shortcut_kinds=("projection",))
    net = build(spec)
    apply_init(net, InitScheme(kind="he"), rng)
    for p in net.params:   # move scalars off their init values so every path is exercised
        if p.shape == ():
            p.value = np.asarray(rng.uniform(0.5, 1.5) if p.kind == "multiplier" else rng.normal(0, 0.3))
    net.mark_modified()
    x = rng.standard_normal((6, 5))
    y = one_hot(rng.integers(0, 3, 6), 3)
    errs = check_gradients(net, x, y)
    worst = max(errs, key=errs.get)
    return [("gradcheck", seed, worst, errs[worst], 1e-6, errs[worst] <= 1e-6)]


def check_theorems(cfg, seed):
    x, y = _probe_batch(cfg, seed)
    rows = []
    for k in range(cfg.get("probe", "theorem_nets")):
        net = _bias_free_net(cfg, seed, k, x.shape[1], y.shape[1])
        t1 = [r for r in P.check_theorem1(net, x, y) if not r.skipped]
        worst = min(t1, key=lambda r: r.lhs - r.rhs)
        rows.append(("theorem1", seed, f"net{k}", worst.lhs, worst.rhs, all(r.holds for r in t1)))
        for ph in ph_sets(net):
            res = P.check_theorem2(net, x, y, ph.members)
            rows.append(("theorem2", seed, f"net{k}:{'+'.join(ph.members)}", res.lhs, res.bound, res.holds))
            err = max(ph_scaling_error(net, x, ph.members, a) for a in (0.5, 2.0, 7.0))
            rows.append(("ph_scaling", seed, f"net{k}:{'+'.join(ph.members)}", err, 1e-10, err <= 1e-10))
    return rows


def check_identity(cfg, seed):
    x, _ = _probe_batch(cfg, seed)
    if x.shape[0] < 64:
        x = np.tile(x, (math.ceil(64 / x.shape[0]), 1))
    spec = cfg.network_spec("fixup", input_shape=x.shape[1:])
    net = build(spec)
    apply_init(net, cfg.init_scheme("fixup"), make_rng(seed))
    prof = P.variance_profile(net, x)
    dev = float(np.max(np.abs(prof.values - prof.values[0]))) if prof.overflow_depth is None else math.inf
    return [("identity_at_init", seed, f"L={net.num_blocks}", dev, 0.0, dev == 0.0)]


def check_branch_constraint(cfg, seed):
    scheme = cfg.init_scheme("fixup")
    L, m = cfg.get("arch", "num_blocks"), cfg.get("arch", "branch_layers")
    a = [v * scheme.scale_mult for v in P.fixup_scalar_model(L, m, scheme.zero_last)]
    value = P.scalar_branch(a, 1.0, 1.0, 0.0).constraint_value * math.sqrt(L)
    return [("branch_constraint", seed, f"L={L},m={m}", value, 1.0, 0.99 <= value <= 1.01)]


def _update_ratio(cfg, seed, scheme, x, y):
    def factory(depth):
        spec = NetworkSpec(input_shape=(x.shape[1],), num_blocks=depth, branch_layers=cfg.get("arch", "branch_layers"),
                           width=cfg.get("probe", "width"), num_classes=y.shape[1])
        net = build(spec)
        apply_init(net, scheme, make_rng(seed))
        return net
    table = P.measure_update_scale(factory, cfg.get("probe", "depths"), cfg.get("probe", "eta"), x, y)
    if any(r.diverged for r in table):
        return table, math.inf
    vals = [r.per_eta for r in table]
    return table, max(vals) / min(vals) if min(vals) > 0 else math.inf


def check_update_scale(cfg, seed):
    x, y = _probe_batch(cfg, seed)
    scheme = cfg.init_scheme("fixup")
    limit = cfg.get("probe", "update_ratio_max")
    rows = []
    for label, sch in (("fixup", scheme),
                       ("rule2", InitScheme(kind="fixup", base=scheme.base, scale_mult=scheme.scale_mult,
                                            zero_last=False, zero_classifier=False))):
        _, ratio = _update_ratio(cfg, seed, sch, x, y)
        rows.append(("update_scale", seed, label, ratio, limit, ratio <= limit))
    return rows


def check_scalar_branch(cfg, seed):
    rng = make_rng(seed)
    slopes = []
    for _ in range(10):
        m = int(rng.integers(2, 5))
        a = rng.uniform(0.2, 1.5, m)
        g = rng.uniform(0.5, 2.0) * rng.choice([-1.0, 1.0])
        slopes.append(P.remainder_slope(a, rng.uniform(0.5, 2.0), g, [1e-2, 1e-3, 1e-4]))
    worst = max(slopes, key=lambda s: abs(s - 2))
    return [("scalar_branch", seed, "remainder slope", worst, 2.0, abs(worst - 2) <= 0.1)]


def check_mixup(cfg, seed):
    rng = make_rng(seed)
    c = cfg.get("data", "num_classes")
    z = rng.standard_normal((16, c))
    y = one_hot(rng.integers(0, c, 16), c)
    _, y_soft, lam, perm = mixup_batch(z, y, 0.7, rng)
    soft = soft_cross_entropy(z, y_soft).losses
    hard = lam * cross_entropy(z, y).losses + (1 - lam) * cross_entropy(z, y[perm]).losses
    err = float(np.max(np.abs(soft - hard) / np.maximum(np.abs(hard), 1e-300)))
    return [("mixup_linearity", seed, f"lambda={lam!r}", err, 1e-10, err <= 1e-10)]


CHECKS = {
    "gradcheck": check_gradcheck,
    "theorems": check_theorems,
    "identity_at_init": check_identity,
    "branch_constraint": check_branch_constraint,
    "update_scale": check_update_scale,
    "scalar_branch": check_scalar_branch,
    "mixup_linearity": check_mixup,
}


def run_verify(cfg):
    rows = []
    for name, check in CHECKS.items():
        for seed in cfg.get("run", "seeds"):
            rows.extend(check(cfg, seed))
    return rows


# -- probe ------------------------------------------------------------------------

PROBES = ("variance", "theorem1", "theorem2", "update_scale", "curve")


def run_probe(cfg, data=None):
    """ProbeReport rows for the configured network, plus a training curve if requested."""
    data = data or cfg.dataset()
    n = max(64, cfg.get("probe", "batch_size"))
    x = data.train.inputs[:n]
    y = one_hot(data.train.labels[:n], data.num_classes)
    variant = cfg.get("init", "scheme")
    depth = cfg.get("arch", "num_blocks")
    rows = []
    for seed in cfg.get("run", "seeds"):
        net = init_net(cfg, variant, depth, seed, data)
        prof = P.variance_profile(net, x)
        for l, v in enumerate(prof.values):
            rows.append(("variance", seed, depth, l, v, math.nan, True))
        if prof.overflow_depth is not None:
            rows.append(("variance_overflow", seed, depth, prof.overflow_depth, math.inf, math.nan, False))
        if not net.spec.use_batchnorm:
            for r in P.check_theorem1(net, x, y):
                rows.append(("theorem1", seed, depth, f"{r.example}:{r.block}", r.lhs, r.rhs, r.holds))
            for ph in ph_sets(net):
                res = P.check_theorem2(net, x, y, ph.members)
                rows.append(("theorem2", seed, depth, "+".join(ph.members), res.lhs, res.bound, res.holds))
        try:
            us = P.update_scale(net, x, y, cfg.get("probe", "eta"), per_branch=True)
            rows.append(("update_scale", seed, depth, "total", us.norm, us.eta, True))
            rows.append(("update_cosine", seed, depth, "mean", us.mean_cosine, math.nan, True))
            for l, bn in enumerate(us.branch_norms):
                rows.append(("update_branch", seed, depth, l, bn, us.eta, True))
        except UpdateScaleError as exc:   # outside the first-order regime: a finding, not a crash
            rows.append(("update_scale", seed, depth, "total", math.nan, exc.suggested_eta, False))
        epochs = cfg.get("probe", "curve_epochs")
        if epochs:
            tcfg = replace(cfg.train_config(seed), epochs=epochs, log_every=1)
            for rec in train(init_net(cfg, variant, depth, seed, data), data, tcfg, measure_updates=False):
                rows.append(("curve", seed, depth, rec.step, rec.train_acc, rec.train_loss, not rec.diverged))
    return rows


def produce(command, cfg):
    """Run ``command`` in-process; returns ``(csv_text, rows)``."""
    if command == "verify":
        rows = run_verify(cfg)
        return render_csv(cfg, VERIFY_COLUMNS, rows), rows
    if command == "probe":
        rows = run_probe(cfg)
        return render_csv(cfg, PROBE_COLUMNS, rows), rows
    rows = [astuple(r) for r in (run_sweep(cfg) if command == "sweep-depth" else run_train(cfg))]
    return render_csv(cfg, METRICS_COLUMNS, rows), rows


# -- entry point ------------------------------------------------------------------

def _load_config(args):
    text = ""
    if args.config:
        with open(args.config, encoding="utf-8") as f:
            text = f.read()
    cfg = parse_config(text)
    if args.seed is not None:
        cfg = cfg.replace(run__seeds=(args.seed,))
    return cfg


def _emit(text, out):
    if out:
        with open(out, "w", encoding="utf-8") as f:
            f.write(text)
    else:
        sys.stdout.write(text)


def build_parser():
    parser = argparse.ArgumentParser(prog="fixupbench", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (("verify", "run the invariant suite"),
                            ("sweep-depth", "first-epoch accuracy across depths and inits"),
                            ("train", "train the configured network"),
                            ("probe", "variance, bound and update-scale probes")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="configuration file (section.key = value lines)")
        p.add_argument("--out", help="CSV output path (default stdout)")
        p.add_argument("--seed", type=int, help="replace run.seeds with this single seed")
        p.add_argument("--list", action="store_true", help="list checks/probes and exit")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.list:
        names = CHECKS if args.command == "verify" else PROBES if args.command == "probe" else METRICS_COLUMNS
        print("\n".join(names))
        return EXIT_OK
    try:
        cfg = _load_config(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    try:
        text, rows = produce(args.command, cfg)
        _emit(text, args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, FormatError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    if args.command != "verify":
        return EXIT_OK
    failed = [r for r in rows if not r[-1]]
    for r in failed:
        print(f"FAIL {r[0]} seed={r[1]} {r[2]}: lhs={r[3]!r} rhs={r[4]!r}", file=sys.stderr)
    return EXIT_FAIL if failed else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
