"""Magnitude pruning schedules: one-shot, iterative and layer-wise."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from ..core import ContractError, MaskedMatrix, to_dense
from ..sparsifiers import ScalarFraction, _kept_count, _top_k_mask, apply
from .graph import sgd_step
from .model import MLP, Dataset


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.05
    batch_size: int = 64
    dense_epochs: int = 60
    # fine-tuning length after a one-shot prune
    finetune_epochs: int = 30
    seed: int = 0
    global_pruning: bool = False

    def __post_init__(self):
        if self.lr < 0 or self.batch_size < 1 or self.dense_epochs < 0 or self.finetune_epochs < 0:
            raise ContractError(f"invalid training config {self}")


def _check_sparsity(name, s):
    if not 0.0 <= s < 1.0:
        raise ContractError(f"{name} must lie in [0, 1), got {s}")


@dataclass(frozen=True)
class OneShot:
    target: float

    kind = "one_shot"

    def __post_init__(self):
        _check_sparsity("target", self.target)


@dataclass(frozen=True)
class Iterative:
    start: float
    step: float
    target: float
    epochs_per_step: int

    kind = "iterative"

    def __post_init__(self):
        _check_sparsity("start", self.start)
        _check_sparsity("target", self.target)
        if self.step <= 0 or self.start > self.target or self.epochs_per_step < 0:
            raise ContractError(f"invalid iterative schedule {self}")

    def levels(self) -> list:
        out = []
        i = 0
        while True:
            s = round(self.start + i * self.step, 12)
            if s >= self.target - 1e-9:
                break
            out.append(s)
            i += 1
        return out + [self.target]


@dataclass(frozen=True)
class LayerWise:
    target: float
    epochs_per_layer: int
    order: Optional[tuple] = None

    kind = "layer_wise"

    def __post_init__(self):
        _check_sparsity("target", self.target)
        if self.epochs_per_layer < 0:
            raise ContractError("epochs_per_layer must be non-negative")


@dataclass(frozen=True)
class LogRow:
    step: int
    phase: str
    layer: str
    sparsity: float
    loss: float


@dataclass(frozen=True)
class PruneEvent:
    step: int
    layers: tuple
    sparsity: float


@dataclass
class TrainLog:
    rows: list = field(default_factory=list)
    events: list = field(default_factory=list)
    mask_violations: int = 0
    step: int = 0

    def record(self, phase, layer, sparsity, loss):
        self.rows.append(LogRow(self.step, phase, layer, float(sparsity), float(loss)))

    @property
    def final_loss(self) -> float:
        return self.rows[-1].loss

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["step", "phase", "layer", "sparsity", "loss"])
        for r in self.rows:
            w.writerow([r.step, r.phase, r.layer, f"{r.sparsity:.6f}", f"{r.loss:.10g}"])
        return buf.getvalue()


def model_sparsity(model: MLP) -> float:
    zeros = total = 0
    for w in model.weights:
        d = to_dense(w.value)
        zeros += d.size - np.count_nonzero(w.value.mask if isinstance(w.value, MaskedMatrix) else d)
        total += d.size
    return zeros / total


def prune_layers(model: MLP, names, sparsity: float, global_pool: bool = False):
    """Magnitude-prune the named weights to ``sparsity`` (per layer unless pooled)."""
    params = [w for w in model.weights if w.name in names]
    if not global_pool:
        for p in params:
            p.value = apply(ScalarFraction(sparsity), p.dense())
        return
    mags = np.concatenate([np.abs(p.dense()).ravel() for p in params])
    keep = _top_k_mask(mags, _kept_count(sparsity, mags.size))
    off = 0
    for p in params:
        d = p.dense()
        p.value = MaskedMatrix.from_dense(d, keep[off:off + d.size].reshape(d.shape))
        off += d.size


class _Trainer:
    def __init__(self, model: MLP, data: Dataset, config: TrainConfig, log: TrainLog,
                 on_step: Optional[Callable] = None, eval_data: Optional[Dataset] = None):
        self.model = model
        self.data = data
        self.eval_data = eval_data if eval_data is not None else data
        self.config = config
        self.log = log
        self.on_step = on_step
        self.rng = np.random.default_rng(config.seed)
        self.snapshot()

    def snapshot(self):
        self.masks = {w.name: w.value.mask.copy() for w in self.model.weights
                      if isinstance(w.value, MaskedMatrix)}

    def _check_masks(self):
        for w in self.model.weights:
            ref = self.masks.get(w.name)
            if ref is None:
                continue
            if not (np.array_equal(w.value.mask, ref) and not np.any(w.value.dense[~ref])):
                self.log.mask_violations += 1

    def epochs(self, count: int, phase: str):
        n = len(self.data)
        bs = self.config.batch_size
        for _ in range(count):
            order = self.rng.permutation(n)
            for lo in range(0, n, bs):
                idx = order[lo:lo + bs]
                _, grads = self.model.loss_and_grads(self.data.x[idx], self.data.y[idx])
                sgd_step(self.model.parameters, grads, self.config.lr)
                self._check_masks()
                if self.on_step is not None:
                    self.on_step(self.model, self.log)
            self.log.step += 1
            self.log.record(phase, "all", model_sparsity(self.model), self.eval_loss())

    def eval_loss(self) -> float:
        return self.model.loss(self.eval_data)

    def prune(self, names, sparsity: float):
        prune_layers(self.model, names, sparsity, self.config.global_pruning)
        self.snapshot()
        self.log.events.append(PruneEvent(self.log.step, tuple(names), sparsity))
        loss = self.eval_loss()
        per_layer = self.model.weight_sparsity()
        for name in names:
            self.log.record("prune", name, per_layer[name], loss)


def train_dense(model: MLP, data: Dataset, config: TrainConfig, epochs: int | None = None,
                on_step: Optional[Callable] = None, eval_data: Optional[Dataset] = None,
                phase: str = "dense") -> TrainLog:
    """Plain SGD for ``epochs`` (default ``config.dense_epochs``).

    Logged losses are measured on ``eval_data`` when given, else on ``data``.
    """
    log = TrainLog()
    t = _Trainer(model, data, config, log, on_step, eval_data)
    log.record("init", "all", model_sparsity(model), t.eval_loss())
    t.epochs(config.dense_epochs if epochs is None else epochs, phase)
    return log


def run_schedule(model: MLP, data: Dataset, schedule, config: TrainConfig,
                 on_step: Optional[Callable] = None,
                 eval_data: Optional[Dataset] = None) -> TrainLog:
    """Prune ``model`` (in place) following ``schedule``, fine-tuning between events."""
    for w in model.weights:
        if isinstance(w.value, MaskedMatrix) and not w.value.mask.all():
            raise ContractError(f"{w.name} is already pruned; schedules start from dense weights")
    log = TrainLog()
    t = _Trainer(model, data, config, log, on_step, eval_data)
    log.record("start", "all", model_sparsity(model), t.eval_loss())
    names = model.layer_names
    if isinstance(schedule, OneShot):
        if schedule.target > 0:
            t.prune(names, schedule.target)
        t.epochs(config.finetune_epochs, "finetune")
    elif isinstance(schedule, Iterative):
        for s in schedule.levels():
            t.prune(names, s)
            t.epochs(schedule.epochs_per_step, "finetune")
    elif isinstance(schedule, LayerWise):
        order = list(schedule.order) if schedule.order is not None else names
        unknown = set(order) - set(names)
        if unknown:
            raise ContractError(f"unknown layers in order: {sorted(unknown)}")
        for name in order:
            t.prune([name], schedule.target)
            t.epochs(schedule.epochs_per_layer, "finetune")
    else:
        raise ContractError(f"unknown schedule {schedule!r}")
    return log


def per_layer_target_met(model: MLP, target: float) -> bool:
    """Each weight's pruned count is the exact count ScalarFraction(target) drops."""
    for w in model.weights:
        size = w.value.mask.size
        dropped = size - np.count_nonzero(w.value.mask)
        if dropped != size - math.ceil((1.0 - target) * size - 1e-9):
            return False
    return True
