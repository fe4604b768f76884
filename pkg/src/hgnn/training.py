"""Training loop with early stopping, plus optimizers, schedulers and metrics.

Cadence: step / exponential / reduce-on-plateau / polynomial / cosine
schedulers advance once per epoch; cyclic and one-cycle advance once per
optimizer step. L1 and (coupled) weight decay are folded into the gradient
right before each update.
"""

import json
import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .operators import collate
from .tensor import cross_entropy_loss, multi_margin_loss, no_grad

OPTIMIZER_KINDS = ("adam", "sgd", "rmsprop")
SCHEDULER_KINDS = ("step", "exponential", "reduce_on_plateau", "polynomial",
                   "cosine_annealing", "cyclic", "one_cycle")
PER_BATCH_SCHEDULERS = ("cyclic", "one_cycle")
LOSS_KINDS = ("cross_entropy", "multi_margin")
BATCH_SIZES = (16, 32, 64, 128, 512)

ADAM_EPS = 1e-8


class TrainingDiverged(RuntimeError):
    """Forward produced non-finite values; the trial is marked failed."""


@dataclass
class OptimizerConfig:
    kind: str
    learning_rate: float
    weight_decay: float = 0.0
    l1_lambda: float = 0.0
    adam_beta1: Optional[float] = None
    adam_beta2: Optional[float] = None
    sgd_momentum: Optional[float] = None
    rmsprop_alpha: Optional[float] = None
    rmsprop_momentum: Optional[float] = None
    rmsprop_eps: Optional[float] = None

    _FIELDS = {
        "adam": ("adam_beta1", "adam_beta2"),
        "sgd": ("sgd_momentum",),
        "rmsprop": ("rmsprop_alpha", "rmsprop_momentum", "rmsprop_eps"),
    }

    def __post_init__(self):
        if self.kind not in OPTIMIZER_KINDS:
            raise ValueError(f"unknown optimizer {self.kind!r}")
        for kind, names in self._FIELDS.items():
            for name in names:
                val = getattr(self, name)
                if kind == self.kind and val is None:
                    raise ValueError(f"{self.kind} optimizer requires {name}")
                if kind != self.kind and val is not None:
                    raise ValueError(f"{name} is not a {self.kind} field")

    def to_json_dict(self):
        d = {"kind": self.kind, "learning_rate": self.learning_rate,
             "weight_decay": self.weight_decay, "l1_lambda": self.l1_lambda}
        for name in self._FIELDS[self.kind]:
            d[name] = getattr(self, name)
        return d

    @classmethod
    def from_json_dict(cls, d):
        return cls(**d)


@dataclass
class SchedulerConfig:
    kind: str
    step_size: Optional[int] = None
    gamma: Optional[float] = None
    factor: Optional[float] = None
    patience: Optional[int] = None
    threshold: Optional[float] = None
    eps: Optional[float] = None
    power: Optional[float] = None
    total_iters: Optional[int] = None
    t_max: Optional[int] = None
    eta_min: Optional[float] = None
    base_lr: Optional[float] = None
    max_lr: Optional[float] = None
    step_size_up: Optional[int] = None
    pct_start: Optional[float] = None

    _REQUIRED = {
        "step": ("step_size", "gamma"),
        "exponential": ("gamma",),
        "reduce_on_plateau": ("factor", "patience", "threshold", "eps"),
        "polynomial": ("power", "total_iters"),
        "cosine_annealing": ("t_max", "eta_min"),
        "cyclic": ("base_lr", "max_lr", "step_size_up"),
        "one_cycle": ("max_lr", "pct_start"),
    }

    def __post_init__(self):
        if self.kind not in SCHEDULER_KINDS:
            raise ValueError(f"unknown scheduler {self.kind!r}")
        for name in self._REQUIRED[self.kind]:
            if getattr(self, name) is None:
                raise ValueError(f"{self.kind} scheduler requires {name}")
        if self.kind == "cyclic" and not self.base_lr < self.max_lr:
            raise ValueError(
                f"cyclic scheduler needs base_lr < max_lr, got {self.base_lr} >= {self.max_lr}"
            )

    def to_json_dict(self):
        d = {"kind": self.kind}
        for name in self._REQUIRED[self.kind]:
            d[name] = getattr(self, name)
        return d

    @classmethod
    def from_json_dict(cls, d):
        return cls(**d)


@dataclass
class TrialConfig:
    """Everything the trainer needs beyond the model wiring."""

    model: object  # ModelConfig
    optimizer: OptimizerConfig
    scheduler: SchedulerConfig
    loss: str = "cross_entropy"
    batch_size: int = 32

    def __post_init__(self):
        if self.loss not in LOSS_KINDS:
            raise ValueError(f"unknown loss {self.loss!r}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")

    def to_json_dict(self):
        return {
            "model": self.model.to_json_dict(),
            "optimizer": self.optimizer.to_json_dict(),
            "scheduler": self.scheduler.to_json_dict(),
            "loss": self.loss,
            "batch_size": self.batch_size,
        }

    @classmethod
    def from_json_dict(cls, d):
        from .models import ModelConfig

        return cls(
            model=ModelConfig.from_json_dict(d["model"]),
            optimizer=OptimizerConfig.from_json_dict(d["optimizer"]),
            scheduler=SchedulerConfig.from_json_dict(d["scheduler"]),
            loss=d.get("loss", "cross_entropy"),
            batch_size=int(d.get("batch_size", 32)),
        )


# -- optimizers ------------------------------------------------------------------


class Optimizer:
    """adam / sgd / rmsprop with coupled weight decay and L1 folded into the
    gradient before the update. ``lr`` is mutated by the scheduler."""

    def __init__(self, params, config):
        self.params = list(params)
        self.config = config
        self.lr = config.learning_rate
        self.t = 0
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        cfg = self.config
        self.t += 1
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            g = p.grad
            if cfg.weight_decay:
                g = g + cfg.weight_decay * p.data
            if cfg.l1_lambda:
                g = g + cfg.l1_lambda * np.sign(p.data)
            if cfg.kind == "sgd":
                if cfg.sgd_momentum:
                    self._m[i] = cfg.sgd_momentum * self._m[i] + g
                    g = self._m[i]
                p.data -= self.lr * g
            elif cfg.kind == "adam":
                b1, b2 = cfg.adam_beta1, cfg.adam_beta2
                self._m[i] = b1 * self._m[i] + (1 - b1) * g
                self._v[i] = b2 * self._v[i] + (1 - b2) * g * g
                mhat = self._m[i] / (1 - b1 ** self.t)
                vhat = self._v[i] / (1 - b2 ** self.t)
                p.data -= self.lr * mhat / (np.sqrt(vhat) + ADAM_EPS)
            else:  # rmsprop
                a = cfg.rmsprop_alpha
                self._v[i] = a * self._v[i] + (1 - a) * g * g
                denom = np.sqrt(self._v[i] + cfg.rmsprop_eps)
                if cfg.rmsprop_momentum:
                    self._m[i] = cfg.rmsprop_momentum * self._m[i] + g / denom
                    p.data -= self.lr * self._m[i]
                else:
                    p.data -= self.lr * g / denom


# -- schedulers ------------------------------------------------------------------


class Scheduler:
    """Learning-rate schedule driving an Optimizer.

    ``on_epoch(val_loss)`` after each epoch and ``on_batch()`` after each
    optimizer step; each is a no-op for schedulers of the other cadence.
    one_cycle's nominal total of batch_size*1000 steps is clamped to the
    actual number of optimizer steps in the run.
    """

    def __init__(self, config, optimizer, steps_per_epoch=1, max_epochs=1, batch_size=32):
        self.config = config
        self.opt = optimizer
        self.base_lr = optimizer.config.learning_rate
        self.epoch = 0
        self.batch_step = 0
        run_steps = max(1, steps_per_epoch * max_epochs)
        self.total_steps = max(2, min(batch_size * 1000, run_steps))
        # reduce-on-plateau state
        self._best = math.inf
        self._stale = 0
        if config.kind == "cyclic":
            self.opt.lr = config.base_lr
        elif config.kind == "one_cycle":
            self.opt.lr = config.max_lr / 25.0

    @property
    def per_batch(self):
        return self.config.kind in PER_BATCH_SCHEDULERS

    def on_batch(self):
        if not self.per_batch:
            return self.opt.lr
        self.batch_step += 1
        self.opt.lr = self._batch_lr(self.batch_step)
        return self.opt.lr

    def on_epoch(self, val_loss=None):
        if self.per_batch:
            return self.opt.lr
        self.epoch += 1
        cfg = self.config
        if cfg.kind == "step":
            self.opt.lr = self.base_lr * cfg.gamma ** (self.epoch // cfg.step_size)
        elif cfg.kind == "exponential":
            self.opt.lr = self.base_lr * cfg.gamma ** self.epoch
        elif cfg.kind == "polynomial":
            t = min(self.epoch, cfg.total_iters)
            self.opt.lr = self.base_lr * (1.0 - t / cfg.total_iters) ** cfg.power
        elif cfg.kind == "cosine_annealing":
            t = min(self.epoch, cfg.t_max)
            self.opt.lr = cfg.eta_min + (self.base_lr - cfg.eta_min) * (
                1.0 + math.cos(math.pi * t / cfg.t_max)
            ) / 2.0
        elif cfg.kind == "reduce_on_plateau":
            if val_loss is not None:
                if val_loss < self._best * (1.0 - cfg.threshold):
                    self._best = val_loss
                    self._stale = 0
                else:
                    self._stale += 1
                    if self._stale > cfg.patience:
                        new_lr = self.opt.lr * cfg.factor
                        if self.opt.lr - new_lr > cfg.eps:
                            self.opt.lr = new_lr
                        self._stale = 0
        return self.opt.lr

    def _batch_lr(self, t):
        cfg = self.config
        if cfg.kind == "cyclic":
            s = cfg.step_size_up
            cycle = math.floor(1 + t / (2 * s))
            x = abs(t / s - 2 * cycle + 1)
            return cfg.base_lr + (cfg.max_lr - cfg.base_lr) * max(0.0, 1.0 - x)
        # one_cycle, cosine-annealed two-phase schedule
        total = self.total_steps
        t = min(t, total)
        up = max(1.0, cfg.pct_start * total)
        initial = cfg.max_lr / 25.0
        final = initial / 1e4
        if t <= up:
            pct = t / up
            return cfg.max_lr + (initial - cfg.max_lr) * (1.0 + math.cos(math.pi * pct)) / 2.0
        pct = (t - up) / max(1.0, total - up)
        return final + (cfg.max_lr - final) * (1.0 + math.cos(math.pi * pct)) / 2.0


# -- metrics ----------------------------------------------------------------------


@dataclass
class MetricsReport:
    accuracy: float
    weighted_f1: float
    mean_loss: float
    loss_std: float
    per_class_f1: list = field(default_factory=list)

    def primary(self, name):
        return getattr(self, name)

    def to_json_dict(self):
        return {
            "accuracy": self.accuracy,
            "weighted_f1": self.weighted_f1,
            "mean_loss": self.mean_loss,
            "loss_std": self.loss_std,
            "per_class_f1": self.per_class_f1,
        }

    @classmethod
    def from_json_dict(cls, d):
        return cls(
            accuracy=d["accuracy"],
            weighted_f1=d["weighted_f1"],
            mean_loss=d["mean_loss"],
            loss_std=d["loss_std"],
            per_class_f1=list(d.get("per_class_f1", [])),
        )


def per_class_f1_scores(labels, preds, n_classes):
    """F1 per class with the 0/0 -> 0 convention."""
    scores = []
    for c in range(n_classes):
        tp = int(np.sum((preds == c) & (labels == c)))
        fp = int(np.sum((preds == c) & (labels != c)))
        fn = int(np.sum((preds != c) & (labels == c)))
        denom = 2 * tp + fp + fn
        scores.append(2 * tp / denom if denom else 0.0)
    return scores


def metrics_from_predictions(labels, preds, losses, n_classes):
    labels = np.asarray(labels)
    preds = np.asarray(preds)
    losses = np.asarray(losses, dtype=np.float64)
    f1s = per_class_f1_scores(labels, preds, n_classes)
    support = np.bincount(labels, minlength=n_classes)
    weighted = float(sum(s * f for s, f in zip(support, f1s)) / len(labels))
    return MetricsReport(
        accuracy=float(np.mean(preds == labels)),
        weighted_f1=weighted,
        mean_loss=float(losses.mean()),
        loss_std=float(losses.std()),  # population std of per-sample losses
        per_class_f1=f1s,
    )


def per_sample_losses(logits, labels, kind):
    """Numpy per-sample losses matching the differentiable batch losses."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n, c = logits.shape
    if kind == "cross_entropy":
        zmax = logits.max(axis=1, keepdims=True)
        lse = zmax[:, 0] + np.log(np.exp(logits - zmax).sum(axis=1))
        return lse - logits[np.arange(n), labels]
    if kind == "multi_margin":
        zy = logits[np.arange(n), labels][:, None]
        viol = np.maximum(0.0, 1.0 - zy + logits)
        viol[np.arange(n), labels] = 0.0
        return viol.sum(axis=1) / c
    raise ValueError(f"unknown loss {kind!r}")


def batch_loss(logits, labels, kind):
    if kind == "cross_entropy":
        return cross_entropy_loss(logits, labels)
    if kind == "multi_margin":
        return multi_margin_loss(logits, labels)
    raise ValueError(f"unknown loss {kind!r}")


def evaluate(model, graphs, loss_kind="cross_entropy", chunk=512):
    """MetricsReport over a graph list; keeps per-sample losses for loss_std."""
    if not graphs:
        raise ValueError("evaluate: empty evaluation set")
    model.set_eval()
    n_classes = model.config.output_size
    all_preds, all_labels, all_losses = [], [], []
    with no_grad():
        for i in range(0, len(graphs), chunk):
            part = graphs[i:i + chunk]
            batch = collate(part)
            logits = model.forward(batch).data
            if not np.isfinite(logits).all():
                raise TrainingDiverged("non-finite logits during evaluation")
            all_preds.append(logits.argmax(axis=1))
            all_labels.append(batch.labels)
            all_losses.append(per_sample_losses(logits, batch.labels, loss_kind))
    return metrics_from_predictions(
        np.concatenate(all_labels), np.concatenate(all_preds),
        np.concatenate(all_losses), n_classes,
    )


# -- training loop ------------------------------------------------------------------


@dataclass
class TrainOutcome:
    best_epoch: int
    best_metrics: Optional[MetricsReport]
    epoch_history: list
    stopped_early: bool
    wall_time: float
    status: str = "complete"  # complete | pruned | failed

    @property
    def ok(self):
        return self.status == "complete"


def _snapshot(model):
    params = [p.data.copy() for p in model.parameters()]
    stats = [(bn.running_mean.copy(), bn.running_var.copy()) for bn in _batch_norms(model)]
    return params, stats


def _restore(model, snap):
    params, stats = snap
    for p, data in zip(model.parameters(), params):
        p.data = data.copy()
    for bn, (mean, var) in zip(_batch_norms(model), stats):
        bn.running_mean = mean.copy()
        bn.running_var = var.copy()


def _batch_norms(model):
    for stack in (model.gnn_stack, model.pseudo_stack, model.concat_stack,
                  model.aux_stack, model.seq_stack, model.dense_stack):
        for layer in stack:
            if layer.bn is not None:
                yield layer.bn


def train(model, train_set, val_set, trial_config, max_epochs=300, patience=30,
          primary_metric="accuracy", pruning_hook=None, seed=0, log_stream=None,
          log_context=None):
    """Mini-batch training with early stopping and an optional pruning hook.

    Stops after `patience` consecutive epochs without strict improvement of
    the primary metric; the returned model state is the best epoch's
    snapshot. patience=None disables early stopping (full retraining).
    """
    if not train_set or not val_set:
        raise ValueError("train() needs nonempty train and validation sets")
    started = time.perf_counter()
    seeds = np.random.SeedSequence([seed, 0x5eed]).spawn(2)
    shuffle_rng = np.random.default_rng(seeds[0])
    model.seed_dropout(seeds[1])

    opt = Optimizer(model.parameters(), trial_config.optimizer)
    bs = trial_config.batch_size
    steps_per_epoch = max(1, math.ceil(len(train_set) / bs))
    sched = Scheduler(trial_config.scheduler, opt, steps_per_epoch, max_epochs, bs)

    history = []
    best_value = -math.inf
    best_loss = math.inf
    best_epoch = 0
    best_snap = None
    stagnant = 0
    stopped_early = False
    status = "complete"

    for epoch in range(1, max_epochs + 1):
        model.set_train()
        order = shuffle_rng.permutation(len(train_set))
        diverged = False
        for s in range(0, len(order), bs):
            batch = collate([train_set[i] for i in order[s:s + bs]])
            logits = model.forward(batch)
            if not np.isfinite(logits.data).all():
                diverged = True
                break
            loss = batch_loss(logits, batch.labels, trial_config.loss)
            if not np.isfinite(loss.data).all():
                diverged = True
                break
            model.zero_grad()
            loss.backward()
            opt.step()
            sched.on_batch()
        if diverged:
            status = "failed"
            break

        try:
            metrics = evaluate(model, val_set, trial_config.loss)
        except TrainingDiverged:
            status = "failed"
            break
        sched.on_epoch(metrics.mean_loss)
        history.append(metrics)
        value = metrics.primary(primary_metric)

        improved = value > best_value
        if improved or (value == best_value and metrics.mean_loss < best_loss):
            best_value = value
            best_loss = metrics.mean_loss
            best_epoch = epoch
            best_snap = _snapshot(model)
        stagnant = 0 if improved else stagnant + 1

        if log_stream is not None:
            rec = {"epoch": epoch, "loss": metrics.mean_loss,
                   "accuracy": metrics.accuracy, "weighted_f1": metrics.weighted_f1,
                   "lr": opt.lr}
            if log_context:
                rec.update(log_context)
            log_stream.write(json.dumps(rec, sort_keys=True) + "\n")

        if pruning_hook is not None and pruning_hook(epoch, value):
            status = "pruned"
            break
        if patience is not None and stagnant >= patience:
            stopped_early = True
            break

    if best_snap is not None:
        _restore(model, best_snap)
    wall = time.perf_counter() - started
    return TrainOutcome(
        best_epoch=best_epoch,
        best_metrics=history[best_epoch - 1] if best_epoch else None,
        epoch_history=history,
        stopped_early=stopped_early,
        wall_time=wall,
        status=status,
    )
