"""SGD training with momentum, weight decay, per-group learning rates and Mixup."""

import math
from dataclasses import dataclass, field, fields

import numpy as np

from . import tensor as T
from .errors import ConfigError, PreconditionError
from .netgraph import SCALAR_KINDS, WEIGHT, cross_entropy, one_hot, soft_cross_entropy


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    epochs: int = 1
    batch_size: int = 128
    # None: 0.1 when Mixup is on, 1 otherwise
    scalar_lr_multiplier: float = None
    mixup_alpha: float = 0.0
    lr_schedule: str = "constant"
    lr_milestones: tuple = ()
    lr_gamma: float = 0.1
    seed: int = 0
    log_every: int = 100
    scalar_weight_decay: bool = False

    def validate(self):
        if not self.lr >= 0:
            raise ConfigError(f"lr must be >= 0, got {self.lr}")
        if not 0 <= self.momentum < 1:
            raise ConfigError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.mixup_alpha < 0:
            raise ConfigError("mixup_alpha must be >= 0")
        if self.lr_schedule not in ("constant", "step"):
            raise ConfigError(f"unknown lr schedule {self.lr_schedule!r}")

    def scalar_multiplier(self):
        if self.scalar_lr_multiplier is not None:
            return self.scalar_lr_multiplier
        return 0.1 if self.mixup_alpha > 0 else 1.0

    def lr_at(self, epoch):
        if self.lr_schedule == "step":
            return self.lr * self.lr_gamma ** sum(epoch >= m for m in self.lr_milestones)
        return self.lr


@dataclass
class MetricsRecord:
    run_id: str
    depth: int
    init: str
    lr: float
    epoch: int
    step: int
    train_loss: float
    train_acc: float
    test_acc: float
    grad_norm: float
    update_norm: float
    diverged: bool


METRICS_COLUMNS = tuple(f.name for f in fields(MetricsRecord))


@dataclass
class OptimizerState:
    velocity: dict = field(default_factory=dict)
    step: int = 0


def sgd_step(params, grads, state, cfg, lr=None):
    """Classic momentum: ``v <- mu v + (g + wd theta)``, ``theta <- theta - lr_group v``.

    Weight decay touches ``weight`` parameters only (scalar biases and
    multipliers too when ``cfg.scalar_weight_decay``). Scalar parameters use
    ``lr * cfg.scalar_multiplier()``.
    """
    lr = cfg.lr if lr is None else lr
    scalar_lr = lr * cfg.scalar_multiplier()
    missing = [p.name for p in params if p.name not in grads]
    if missing:
        raise PreconditionError(f"no gradient for parameters: {missing[:5]}")
    for p in params:
        g = grads[p.name]
        decay = p.kind == WEIGHT or (cfg.scalar_weight_decay and p.kind in SCALAR_KINDS)
        if decay and cfg.weight_decay:
            g = g + cfg.weight_decay * p.value
        v = state.velocity.get(p.name)
        v = g if v is None else cfg.momentum * v + g
        state.velocity[p.name] = v
        p.value = p.value - (scalar_lr if p.kind in SCALAR_KINDS else lr) * v
    state.step += 1


def mixup_batch(x, y_onehot, alpha, rng, lam=None):
    """Convex combination of each example with an in-batch partner.

    ``lam`` is drawn once per batch from Beta(alpha, alpha) unless given.
    Returns ``(x_mix, y_soft, lam, perm)``.
    """
    if not alpha > 0:
        raise ConfigError("mixup alpha must be positive")
    if x.shape[0] < 2:
        raise PreconditionError("mixup needs a batch of at least 2")
    perm = rng.permutation(x.shape[0])
    if lam is None:
        lam = float(rng.beta(alpha, alpha))
    x_mix = lam * x + (1.0 - lam) * x[perm]
    y_soft = lam * y_onehot + (1.0 - lam) * y_onehot[perm]
    return x_mix, y_soft, lam, perm


def evaluate(net, data, batch_size=512):
    """Mean cross-entropy and accuracy in eval mode; argmax ties go to the lowest class."""
    losses = []
    correct = 0
    for start in range(0, len(data), batch_size):
        x = data.inputs[start:start + batch_size]
        y = data.labels[start:start + batch_size]
        z = net.forward(x, train=False, update_stats=False).logits
        with np.errstate(all="ignore"):
            losses.append(cross_entropy(z, one_hot(y, data.num_classes)).losses)
        correct += int((np.argmax(z, axis=1) == y).sum())
    loss = float(np.concatenate(losses).mean()) if losses else float("nan")
    return loss, correct / max(len(data), 1)


def _global_norm(grads):
    return math.sqrt(sum(float(np.vdot(g, g)) for g in grads.values()))


def output_update(net, x, grads, eta, train=True):
    """Logit change ``f(x; theta - eta g) - f(x; theta)``, leaving ``net`` unchanged."""
    saved = net.snapshot()
    stats = [(bn.running_mean, bn.running_var) for bn in net.batchnorms()]
    try:
        before = net.forward(x, train=train, update_stats=False).logits
        for p in net.params:
            p.value = saved[p.name] - eta * grads[p.name]
        net.mark_modified()
        after = net.forward(x, train=train, update_stats=False).logits
    finally:
        net.restore(saved)
        for bn, (m, v) in zip(net.batchnorms(), stats):
            bn.running_mean, bn.running_var = m, v
    with np.errstate(all="ignore"):
        return after - before


def update_norm(delta):
    """RMS over the batch of per-example L2 norms of a logit update."""
    with np.errstate(all="ignore"):
        return float(np.sqrt((delta * delta).sum(axis=1).mean()))


def train(net, data, cfg, run_id="run", measure_updates=True):
    """Train ``net`` on ``data.train``; returns the MetricsRecord stream.

    One record every ``cfg.log_every`` steps (minibatch statistics, no test
    accuracy) and one per epoch (epoch-averaged minibatch statistics plus
    test accuracy). On NaN/Inf in the loss or logits the run stops and the
    final record is flagged ``diverged``.
    """
    cfg.validate()
    if len(data.train) == 0 or len(data.test) == 0:
        raise ConfigError("training needs non-empty train and test splits")
    rng = T.make_rng(cfg.seed)
    state = OptimizerState()
    num_classes = data.num_classes
    depth = net.num_blocks
    init = net.init_kind or "none"
    records = []
    n = len(data.train)
    min_batch = 2 if (net.spec.use_batchnorm or cfg.mixup_alpha > 0) else 1

    for epoch in range(cfg.epochs):
        lr = cfg.lr_at(epoch)
        order = rng.permutation(n)
        loss_sum = acc_sum = 0.0
        seen = 0
        last_grad_norm = last_update = float("nan")
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            if idx.size < min_batch:
                continue
            x = data.train.inputs[idx]
            labels = data.train.labels[idx]
            y = one_hot(labels, num_classes)
            if cfg.mixup_alpha > 0:
                x, y, _, _ = mixup_batch(x, y, cfg.mixup_alpha, rng)
            out = net.forward(x, train=True)
            with np.errstate(all="ignore"):
                loss = soft_cross_entropy(out.logits, y) if cfg.mixup_alpha > 0 else cross_entropy(out.logits, y)
            step = state.step + 1
            if not (out.finite and math.isfinite(loss.mean)):
                records.append(MetricsRecord(run_id, depth, init, lr, epoch, step, loss.mean,
                                             float("nan"), float("nan"), float("nan"), float("nan"), True))
                return records
            back = net.backward(loss.grad)
            last_grad_norm = _global_norm(back.grads)
            acc = float((np.argmax(out.logits, axis=1) == labels).mean())
            loss_sum += loss.mean * idx.size
            acc_sum += acc * idx.size
            seen += idx.size
            if measure_updates and step % cfg.log_every == 0:
                last_update = update_norm(output_update(net, x, back.grads, lr))
            sgd_step(net.params, back.grads, state, cfg, lr)
            net.mark_modified()
            if step % cfg.log_every == 0:
                records.append(MetricsRecord(run_id, depth, init, lr, epoch, step, loss.mean, acc,
                                             float("nan"), last_grad_norm, last_update, False))
        if not all(np.isfinite(p.value).all() for p in net.params):
            records.append(MetricsRecord(run_id, depth, init, lr, epoch, state.step, loss_sum / max(seen, 1),
                                         float("nan"), float("nan"), last_grad_norm, last_update, True))
            return records
        _, test_acc = evaluate(net, data.test)
        records.append(MetricsRecord(run_id, depth, init, lr, epoch, state.step,
                                     loss_sum / max(seen, 1), acc_sum / max(seen, 1), test_acc,
                                     last_grad_norm, last_update, False))
    return records
