"""Optimisation: subject-disjoint split, warm-up schedule, Adam with L2, and the training phases.

Phases:

* ``pretrain_cae``: autoencoder reconstruction, mean squared error.
* ``train_classifier``: cross-entropy on the classifier; the encoder is
  frozen by default (latents are computed once) or trained with it.
* ``joint``: cross-entropy plus reconstruction error over every parameter.
* ``full``: ``pretrain_cae`` followed by ``train_classifier``.
"""

from __future__ import annotations

import csv
import logging
import math
import time
from collections import OrderedDict, defaultdict
from dataclasses import dataclass, field

import numpy as np

from cwat.errors import ConfigError, DataError, NumericError
from cwat.numerics import add, backward, cross_entropy_logits, mse_loss, mul, no_grad

log = logging.getLogger(__name__)

PHASES = ("pretrain_cae", "train_classifier", "joint")
PHASE_CHOICES = PHASES + ("full",)
METRIC_COLUMNS = ("epoch", "phase", "split", "loss", "accuracy", "lr", "wall_seconds")


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.001
    weight_decay: float = 1e-6
    batch_size: int = 64
    epochs: int = 15
    warmup_steps: int = 200
    seed: int = 0
    val_fraction: float = 0.1
    phase: str = "full"
    freeze_encoder: bool = True
    decoupled_weight_decay: bool = False
    micro_batch: int = 16  # gradient-accumulation chunk; bounds memory, not the update

    def validate(self):
        if self.lr <= 0 or self.batch_size < 1 or self.epochs < 1 or self.micro_batch < 1:
            raise ConfigError("lr, batch_size, epochs and micro_batch must be positive")
        if self.weight_decay < 0 or self.warmup_steps < 0:
            raise ConfigError("weight_decay and warmup_steps must be >= 0")
        if not 0.0 < self.val_fraction < 1.0:
            raise ConfigError(f"val_fraction must be in (0, 1), got {self.val_fraction}")
        if self.phase not in PHASE_CHOICES:
            raise ConfigError(f"phase must be one of {', '.join(PHASE_CHOICES)}; got {self.phase!r}")
        return self

    @property
    def phases(self):
        return ("pretrain_cae", "train_classifier") if self.phase == "full" else (self.phase,)


# ---------------------------------------------------------------- split


def split_by_subject(items, val_fraction=0.1, seed=0):
    """Partition ``items`` (anything with ``subject_id`` and ``label``) so no subject is on both sides.

    Subjects are visited in a seeded random order and moved to validation
    while neither the overall validation share nor the per-label share
    would exceed its target.  Returns ``(train_items, val_items)``.
    """
    train_idx, val_idx = split_indices_by_subject(
        [it.subject_id for it in items], [it.label for it in items], val_fraction, seed
    )
    return [items[i] for i in train_idx], [items[i] for i in val_idx]


def split_indices_by_subject(subject_ids, labels, val_fraction=0.1, seed=0):
    if not 0.0 < val_fraction < 1.0:
        raise ConfigError(f"val_fraction must be in (0, 1), got {val_fraction}")
    members = defaultdict(list)
    for i, s in enumerate(subject_ids):
        members[s].append(i)
    subjects = sorted(members)
    if len(subjects) < 2:
        raise DataError(f"need at least 2 subjects to split, found {len(subjects)}")

    total = len(subject_ids)
    per_label = defaultdict(int)
    for lab in labels:
        per_label[lab] += 1
    target_total = max(1, round(val_fraction * total))
    target_label = {lab: math.ceil(val_fraction * n) for lab, n in per_label.items()}

    order = np.random.default_rng(seed).permutation(len(subjects))
    val_subjects = set()
    val_total = 0
    val_label = defaultdict(int)
    for k in order:
        s = subjects[k]
        counts = defaultdict(int)
        for i in members[s]:
            counts[labels[i]] += 1
        if val_total + len(members[s]) > target_total:
            continue
        if any(val_label[lab] + n > target_label[lab] for lab, n in counts.items()):
            continue
        val_subjects.add(s)
        val_total += len(members[s])
        for lab, n in counts.items():
            val_label[lab] += n
    if not val_subjects:
        # every subject is bigger than the target: take the smallest one
        val_subjects.add(min(subjects, key=lambda s: (len(members[s]), s)))
    if len(val_subjects) == len(subjects):
        val_subjects.discard(subjects[order[-1]])

    train_idx = [i for i, s in enumerate(subject_ids) if s not in val_subjects]
    val_idx = [i for i, s in enumerate(subject_ids) if s in val_subjects]
    return train_idx, val_idx


# ---------------------------------------------------------------- optimiser


def lr_schedule(step, config=None):
    """Linear warm-up to ``config.lr`` over ``warmup_steps`` (1-based step), then constant."""
    config = config or TrainConfig()
    if config.warmup_steps == 0:
        return config.lr
    return config.lr * min(1.0, step / config.warmup_steps)


class Adam:
    """Bias-corrected Adam over a name -> Tensor mapping.

    L2 regularisation is coupled by default (``grad += weight_decay * param``
    before the moment update); ``decoupled=True`` shrinks the parameter
    directly instead.
    """

    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0, decoupled=False):
        self.params = OrderedDict(params)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.weight_decay = weight_decay
        self.decoupled = decoupled
        self.step_count = 0
        self.m = OrderedDict((k, np.zeros_like(p.data)) for k, p in self.params.items())
        self.v = OrderedDict((k, np.zeros_like(p.data)) for k, p in self.params.items())

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def step(self, lr):
        grads = OrderedDict()
        for name, p in self.params.items():
            g = np.zeros_like(p.data) if p.grad is None else p.grad
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient in parameter {name!r}")
            grads[name] = g
        self.step_count += 1
        t = self.step_count
        b1, b2 = self.beta1, self.beta2
        for name, p in self.params.items():
            g = grads[name]
            if self.weight_decay and not self.decoupled:
                g = g + self.weight_decay * p.data
            self.m[name] = b1 * self.m[name] + (1 - b1) * g
            self.v[name] = b2 * self.v[name] + (1 - b2) * g * g
            m_hat = self.m[name] / (1 - b1 ** t)
            v_hat = self.v[name] / (1 - b2 ** t)
            new = p.data - lr * m_hat / (np.sqrt(v_hat) + self.eps)
            if self.weight_decay and self.decoupled:
                new = new - lr * self.weight_decay * p.data
            p.data = new

    def state_tensors(self):
        out = OrderedDict(step=np.array([float(self.step_count)]))
        for name in self.params:
            out[f"m.{name}"] = self.m[name]
            out[f"v.{name}"] = self.v[name]
        return out

    def load_state_tensors(self, tensors):
        self.step_count = int(tensors["step"][0])
        for name in self.params:
            self.m[name] = np.array(tensors[f"m.{name}"])
            self.v[name] = np.array(tensors[f"v.{name}"])


def adam_step(params, grads, state, lr, weight_decay=0.0):
    """Functional form: write ``grads`` into ``params`` and apply one step of ``state`` (an :class:`Adam`)."""
    for name, g in grads.items():
        params[name].grad = np.asarray(g, dtype=np.float64)
    state.weight_decay = weight_decay
    state.step(lr)
    return params


# ---------------------------------------------------------------- loops


@dataclass
class TrainResult:
    rows: list = field(default_factory=list)
    best_epoch: dict = field(default_factory=dict)  # phase -> epoch
    optimizer: Adam | None = None


def _chunks(indices, size):
    for start in range(0, len(indices), size):
        yield indices[start:start + size]


def _snapshot(params):
    return OrderedDict((k, p.data.copy()) for k, p in params.items())


def _restore(params, snap):
    for k, p in params.items():
        p.data = snap[k]


class _Phase:
    """Loss and parameter set of one training phase."""

    def __init__(self, model, phase, config):
        self.model, self.phase, self.config = model, phase, config
        cae, clf = model.cae, model.classifier
        self.classify = phase != "pretrain_cae"
        self.frozen = phase == "train_classifier" and config.freeze_encoder
        if phase == "pretrain_cae":
            self.params = OrderedDict(cae.params)
        elif self.frozen:
            self.params = OrderedDict(clf.params)
        elif phase == "train_classifier":
            self.params = OrderedDict(list(cae.encoder_parameters().items()) + list(clf.params.items()))
        else:
            self.params = OrderedDict(list(cae.params.items()) + list(clf.params.items()))
        self.latents = {}

    def prepare(self, name, data):
        """Encode ``data`` once when the encoder is frozen."""
        if not self.frozen:
            return
        chunks = []
        with no_grad():
            for idx in _chunks(list(range(len(data))), self.config.micro_batch):
                chunks.append(self.model.encode(data.load(idx)).data)
        self.latents[name] = np.concatenate(chunks)

    def inputs(self, name, data, idx):
        if self.frozen:
            return self.latents[name][idx]
        return data.load(idx)

    def loss(self, x, y, training, rng):
        """Returns ``(loss tensor, logits array or None)``."""
        model = self.model
        if self.phase == "pretrain_cae":
            return mse_loss(model.reconstruct(x), x), None
        if self.frozen:
            logits = model.classifier.classify(x, training=training, rng=rng)
            return cross_entropy_logits(logits, y), logits.data
        z = model.encode(x)
        logits = model.classifier.classify(z, training=training, rng=rng)
        loss = cross_entropy_logits(logits, y)
        if self.phase == "joint":
            loss = add(loss, mse_loss(model.cae.decode(z), x))
        return loss, logits.data


def _check_loss(value, phase, epoch):
    if not math.isfinite(value):
        raise NumericError(f"{phase}: loss became {value} in epoch {epoch}")


def _evaluate(runner, name, data):
    total, correct, n = 0.0, 0, len(data)
    labels = data.labels
    with no_grad():
        for idx in _chunks(list(range(n)), runner.config.micro_batch):
            loss, logits = runner.loss(runner.inputs(name, data, idx), labels[idx], False, None)
            total += loss.item() * len(idx)
            if logits is not None:
                correct += int(np.sum(np.argmax(logits, axis=1) == labels[idx]))
    return total / n, (correct / n if runner.classify else None)


def _better(phase_classifies, cand, best):
    if best is None:
        return True
    loss, acc = cand
    best_loss, best_acc = best
    if phase_classifies:
        return acc > best_acc or (acc == best_acc and loss < best_loss)
    return loss < best_loss


def train_phase(model, phase, train_data, val_data, config, on_row=None):
    """Run ``config.epochs`` epochs of one phase and restore the best-validation parameters."""
    if phase not in PHASES:
        raise ConfigError(f"unknown phase {phase!r}")
    if len(train_data) == 0:
        raise DataError("training set is empty")
    runner = _Phase(model, phase, config)
    runner.prepare("train", train_data)
    if val_data is not None and len(val_data):
        runner.prepare("val", val_data)
    else:
        val_data = None

    opt = Adam(runner.params, weight_decay=config.weight_decay, decoupled=config.decoupled_weight_decay)
    phase_index = PHASES.index(phase)
    dropout_rng = np.random.default_rng((config.seed, phase_index, 0xD0))
    labels = train_data.labels
    n = len(train_data)
    rows, best, best_epoch, best_params = [], None, None, None
    started = time.perf_counter()

    for epoch in range(1, config.epochs + 1):
        order = np.random.default_rng((config.seed, phase_index, epoch)).permutation(n)
        total, correct = 0.0, 0
        for batch in _chunks(order, config.batch_size):
            lr = lr_schedule(opt.step_count + 1, config)
            opt.zero_grad()
            batch_loss = 0.0
            for idx in _chunks(batch, config.micro_batch):
                loss, logits = runner.loss(runner.inputs("train", train_data, idx), labels[idx],
                                           True, dropout_rng)
                value = loss.item()
                _check_loss(value, phase, epoch)
                backward(mul(loss, len(idx) / len(batch)))
                batch_loss += value * len(idx)
                if logits is not None:
                    correct += int(np.sum(np.argmax(logits, axis=1) == labels[idx]))
            opt.step(lr)
            total += batch_loss
        train_acc = correct / n if runner.classify else None
        rows.append(_row(epoch, phase, "train", total / n, train_acc, lr, started))
        if on_row:
            on_row(rows[-1])

        if val_data is not None:
            val_loss, val_acc = _evaluate(runner, "val", val_data)
            _check_loss(val_loss, phase, epoch)
            rows.append(_row(epoch, phase, "val", val_loss, val_acc, lr, started))
            if on_row:
                on_row(rows[-1])
            cand = (val_loss, val_acc)
        else:
            cand = (total / n, train_acc)
        if _better(runner.classify, cand, best):
            best, best_epoch, best_params = cand, epoch, _snapshot(runner.params)

    _restore(runner.params, best_params)
    log.info("%s: best epoch %d of %d", phase, best_epoch, config.epochs)
    return TrainResult(rows=rows, best_epoch={phase: best_epoch}, optimizer=opt)


def _row(epoch, phase, split, loss, accuracy, lr, started):
    return {
        "epoch": epoch, "phase": phase, "split": split, "loss": loss,
        "accuracy": accuracy, "lr": lr, "wall_seconds": time.perf_counter() - started,
    }


def train(model, data, config, on_row=None):
    """Split ``data`` by subject, then run every phase of ``config`` in order.

    Returns ``(TrainResult, train_set, val_set)``.
    """
    config.validate()
    if len(data) == 0:
        raise DataError("dataset is empty")
    train_idx, val_idx = split_indices_by_subject(data.subject_ids, list(data.labels),
                                                  config.val_fraction, config.seed)
    train_set, val_set = data.subset(train_idx), data.subset(val_idx)
    result = TrainResult()
    for phase in config.phases:
        part = train_phase(model, phase, train_set, val_set, config, on_row=on_row)
        result.rows += part.rows
        result.best_epoch.update(part.best_epoch)
        result.optimizer = part.optimizer
    return result, train_set, val_set


def format_metric(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_metrics(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(METRIC_COLUMNS)
        for row in rows:
            w.writerow([format_metric(row[c]) for c in METRIC_COLUMNS])


def read_metrics(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
