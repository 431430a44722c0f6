"""Numerical probes of the initialization theory.

Variance growth across blocks, the two gradient-norm lower bounds, the
per-step change of the network output, and the scalar-branch model.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import DomainError, PreconditionError, UpdateScaleError
from .netgraph import cross_entropy
from .train import output_update, update_norm

SLACK = 1e-8


def holds(lhs, rhs, slack=SLACK):
    return bool(lhs >= rhs - slack * max(1.0, abs(rhs)))


# -- variance ---------------------------------------------------------------

@dataclass
class VarianceProfile:
    values: np.ndarray        # Var[x_l] for l = 0 .. (truncated at overflow)
    overflow_depth: int = None

    def mean_log2_ratio(self):
        v = self.values
        if v.size < 2:
            return float("nan")
        return float(np.mean(np.diff(np.log2(v))))


def variance_profile(net, x, train=False):
    """Summed per-coordinate batch variance of every block boundary ``x_0 .. x_L``."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] < 64:
        raise PreconditionError("variance_profile needs a batch of at least 64 examples")
    acts = net.forward(x, train=train, update_stats=False).activations
    values = []
    overflow = None
    with np.errstate(all="ignore"):
        for depth, a in enumerate(acts):
            v = T.variance_sum(a)
            if not math.isfinite(v) or not np.isfinite(a).all():
                overflow = depth
                break
            values.append(v)
    return VarianceProfile(np.array(values), overflow)


# -- gradient-norm lower bounds ----------------------------------------------

@dataclass
class Theorem1Row:
    example: int
    block: int          # 1-based; block L+1 is the classifier head
    lhs: float          # ||d loss / d x_{block-1}||
    rhs: float          # (loss - H(p)) / ||x_{block-1}||
    holds: bool
    skipped: bool = False


def check_theorem1(net, x, y):
    """Compare ``||dl/dx_{i-1}||`` with ``(l - H(p)) / ||x_{i-1}||`` for every block and example.

    ``y`` holds one-hot rows. The network must be bias-free, ReLU and
    normalization-free for the bound to apply; that is the caller's job.
    """
    x = np.asarray(x, dtype=np.float64)
    out = net.forward(x, train=False, update_stats=False)
    ce = cross_entropy(out.logits, y)
    # per-example (not averaged) loss gradient gives per-example rows of dl/dx
    back = net.backward(ce.grad * x.shape[0])
    gap = ce.losses - ce.entropy
    rows = []
    for i, (act, dact) in enumerate(zip(out.activations, back.activation_grads)):
        xn = np.linalg.norm(act.reshape(act.shape[0], -1), axis=1)
        gn = np.linalg.norm(dact.reshape(dact.shape[0], -1), axis=1)
        for e in range(x.shape[0]):
            if xn[e] == 0:
                rows.append(Theorem1Row(e, i + 1, float(gn[e]), float("nan"), True, skipped=True))
                continue
            rhs = float(gap[e] / xn[e])
            rows.append(Theorem1Row(e, i + 1, float(gn[e]), rhs, holds(gn[e], rhs)))
    return rows


@dataclass
class Theorem2Result:
    lhs: float          # ||d l_avg / d theta_ph||
    bound: float        # G(theta_ph)
    holds: bool
    theta_norm: float
    undefined: bool = False


def set_norm(net, members):
    return math.sqrt(sum(float(np.vdot(net.by_name[n].value, net.by_name[n].value)) for n in members))


def check_theorem2(net, x, y, members):
    """Gradient norm of the set ``members`` against ``G = mean(l - H(p)) / ||theta_ph||``."""
    x = np.asarray(x, dtype=np.float64)
    out = net.forward(x, train=False, update_stats=False)
    ce = cross_entropy(out.logits, y)
    back = net.backward(ce.grad)
    lhs = math.sqrt(sum(float(np.vdot(back.grads[n], back.grads[n])) for n in members))
    norm = set_norm(net, members)
    if norm == 0:
        return Theorem2Result(lhs, float("nan"), True, 0.0, undefined=True)
    bound = float(np.mean(ce.losses - ce.entropy)) / norm
    return Theorem2Result(lhs, bound, holds(lhs, bound), norm)


def estimate_bound(num_classes, logits, theta_norm):
    """``(E[max_i z_i] - ln c) / ||theta_ph||`` with the expectation over ``logits`` rows."""
    return (float(np.mean(np.max(logits, axis=1))) - math.log(num_classes)) / theta_norm


@dataclass
class ExpectationCheck:
    mean_g: float
    mean_bound: float
    stderr: float       # standard error of the paired difference
    draws: int

    @property
    def holds(self):
        return self.mean_g >= self.mean_bound - 2 * self.stderr


def theorem2_expectation(net_factory, x, y, members, draws=64):
    """Monte-Carlo comparison of ``E[G]`` with the max-logit bound over fresh weight draws.

    ``net_factory(draw)`` returns an initialized network for draw index ``draw``.
    """
    gs, bounds = [], []
    for d in range(draws):
        net = net_factory(d)
        res = check_theorem2(net, x, y, members)
        z = net.forward(x, train=False, update_stats=False).logits
        gs.append(res.bound)
        bounds.append(estimate_bound(y.shape[1], z, res.theta_norm))
    gs, bounds = np.array(gs), np.array(bounds)
    diff = gs - bounds
    stderr = float(diff.std(ddof=1) / math.sqrt(draws)) if draws > 1 else float("nan")
    return ExpectationCheck(float(gs.mean()), float(bounds.mean()), stderr, draws)


# -- update scale -------------------------------------------------------------

@dataclass
class UpdateScale:
    depth: int
    eta: float
    norm: float                  # ||delta f||
    first_order_ratio: float     # ||delta f(eta)|| / ||delta f(eta/2)||, ideally 2
    branch_norms: list = field(default_factory=list)
    mean_cosine: float = float("nan")
    diverged: bool = False

    @property
    def per_eta(self):
        return self.norm / self.eta if self.eta else float("nan")


def _mean_pairwise_cosine(vectors):
    v = np.array([u.ravel() for u in vectors])
    norms = np.linalg.norm(v, axis=1)
    keep = norms > 0
    if keep.sum() < 2:
        return float("nan")
    v = v[keep] / norms[keep, None]
    gram = v @ v.T
    k = gram.shape[0]
    return float((gram.sum() - np.trace(gram)) / (k * (k - 1)))


def update_scale(net, x, y, eta, per_branch=False, tol=0.05):
    """One plain SGD step of size ``eta`` on ``(x, y)``; measure the logit change.

    Raises UpdateScaleError if halving ``eta`` does not halve the change
    within ``tol`` (the step is outside the first-order regime).
    """
    x = np.asarray(x, dtype=np.float64)
    train_mode = net.spec.use_batchnorm
    out = net.forward(x, train=train_mode, update_stats=False)
    with np.errstate(all="ignore"):
        ce = cross_entropy(out.logits, y)
    back = net.backward(ce.grad)
    grads = {k: g.copy() for k, g in back.grads.items()}
    delta = output_update(net, x, grads, eta, train=train_mode)
    norm = update_norm(delta)
    ratio = float("nan")
    if eta != 0:
        half = update_norm(output_update(net, x, grads, eta / 2, train=train_mode))
        ratio = norm / half if half > 0 else (2.0 if norm == 0 else float("inf"))
        if not (math.isfinite(norm) and abs(ratio / 2 - 1) <= tol):
            raise UpdateScaleError(
                f"step {eta:g} is not first-order at depth {net.num_blocks} "
                f"(halving ratio {ratio:.4g}); try eta={eta / 10:g}", eta / 10)
    result = UpdateScale(net.num_blocks, eta, norm, ratio)
    if per_branch:
        contribs = []
        for l in range(net.num_blocks):
            params = net.branch_params(l)
            saved = {p.name: p.value for p in params}
            try:
                for p in params:
                    p.value = saved[p.name] - eta * grads[p.name]
                with np.errstate(all="ignore"):
                    contribs.append(net.logits_from(l, out.activations[l], train=train_mode) - out.logits)
            finally:
                for p in params:
                    p.value = saved[p.name]
                net.mark_modified()
        result.branch_norms = [update_norm(c) for c in contribs]
        result.mean_cosine = _mean_pairwise_cosine(contribs)
    return result


def measure_update_scale(net_factory, depths, eta, x, y, per_branch=False):
    """``update_scale`` across depths; a first-order failure is recorded as ``diverged``."""
    rows = []
    for depth in depths:
        net = net_factory(depth)
        try:
            rows.append(update_scale(net, x, y, eta, per_branch=per_branch))
        except UpdateScaleError:
            rows.append(UpdateScale(depth, eta, float("nan"), float("nan"), diverged=True))
    return rows


# -- scalar branch --------------------------------------------------------------

@dataclass
class ScalarBranch:
    delta_formula: float
    delta_exact: float
    constraint_value: float
    stuck: bool = False


def scalar_branch(a, x, g, eta):
    """Scalar branch ``F = prod(a) * x`` under one gradient step with ``dl/dF = g`` fixed.

    ``delta_formula`` is the first-order change ``-eta g sum_i (prod_{k != i} a_k x)^2``,
    ``delta_exact`` applies the step to every ``a_i`` and recomputes ``F``.
    ``constraint_value`` is ``prod_{k != j} a_k * x`` with ``j`` the (first)
    smallest factor.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 1 or a.size < 1:
        raise DomainError("a must be a non-empty vector")
    if np.any(a < 0) or x <= 0:
        raise DomainError("scalar branch needs a_i >= 0 and x > 0")
    m = a.size
    others = np.array([np.prod(np.delete(a, i)) * x for i in range(m)])
    j = int(np.argmin(a))
    constraint = float(others[j])
    if np.count_nonzero(a == 0) > 1:
        return ScalarBranch(0.0, 0.0, constraint, stuck=True)
    formula = float(-eta * g * np.sum(others ** 2))
    grads = g * others
    exact = float(np.prod(a - eta * grads) * x - np.prod(a) * x)
    return ScalarBranch(formula, exact, constraint)


def fixup_scalar_model(num_branches, m, zero_last=True):
    """Per-layer scale factors Fixup assigns to an ``m``-layer branch."""
    from .init import fixup_scale
    s = fixup_scale(num_branches, m)
    a = [s] * m
    if zero_last:
        a[-1] = 0.0
    return a


def remainder_slope(a, x, g, etas):
    """Log-log slope of ``|exact - formula|`` against ``eta`` (second order gives 2)."""
    err = [abs(scalar_branch(a, x, g, e).delta_exact - scalar_branch(a, x, g, e).delta_formula) for e in etas]
    return float(np.polyfit(np.log(etas), np.log(err), 1)[0])
