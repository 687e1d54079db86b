"""Dense training followed by each pruning schedule, on the teacher task."""
from __future__ import annotations

from dataclasses import dataclass, field

from ..core import ContractError
from .model import MLP, teacher_task
from .schedules import Iterative, LayerWise, OneShot, TrainConfig, TrainLog, run_schedule, train_dense


@dataclass(frozen=True)
class DemoConfig:
    sizes: tuple = (64, 32, 1)
    teacher_sizes: tuple = (64, 8, 1)
    n_train: int = 1024
    n_eval: int = 1024
    noise: float = 0.1
    target: float = 0.5
    start: float = 0.1
    step: float = 0.1
    # every schedule, and the dense reference, gets this many fine-tuning epochs
    finetune_epochs: int = 50
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        if self.n_train < 1 or self.n_eval < 1 or self.finetune_epochs < 0:
            raise ContractError(f"invalid demo config {self}")
        if self.sizes[0] != self.teacher_sizes[0] or self.sizes[-1] != self.teacher_sizes[-1]:
            raise ContractError("student and teacher must share input and output sizes")


@dataclass
class DemoResult:
    dense: TrainLog
    reference: TrainLog
    logs: dict
    models: dict

    @property
    def dense_final_loss(self) -> float:
        return self.reference.final_loss


def schedules_for(cfg: DemoConfig, n_layers: int) -> dict:
    iterative = Iterative(cfg.start, cfg.step, cfg.target, 0)
    per_step = cfg.finetune_epochs // len(iterative.levels())
    return {
        "one_shot": OneShot(cfg.target),
        "iterative": Iterative(cfg.start, cfg.step, cfg.target, per_step),
        "layer_wise": LayerWise(cfg.target, cfg.finetune_epochs // n_layers),
    }


def run_demo(cfg: DemoConfig = DemoConfig(), names=("one_shot", "iterative", "layer_wise"),
             on_step=None) -> DemoResult:
    """Train densely, then prune copies of the trained model with each schedule.

    Losses are held-out MSE. The dense reference keeps training the dense
    model for the same number of fine-tuning epochs the schedules get.
    """
    seed = cfg.train.seed
    data, held_out = teacher_task(cfg.n_train + cfg.n_eval, cfg.teacher_sizes, cfg.noise,
                                  seed).split(cfg.n_train)
    model = MLP(cfg.sizes, seed=seed)
    dense = train_dense(model, data, cfg.train, eval_data=held_out)
    ref_model = model.clone()
    reference = train_dense(ref_model, data, cfg.train, epochs=cfg.finetune_epochs,
                            eval_data=held_out, phase="dense_reference")
    train_cfg = TrainConfig(**{**cfg.train.__dict__, "finetune_epochs": cfg.finetune_epochs})
    schedules = schedules_for(cfg, len(model.weights))
    logs, models = {}, {"dense": ref_model}
    for name in names:
        if name not in schedules:
            raise ContractError(f"unknown schedule {name!r}")
        pruned = model.clone()
        logs[name] = run_schedule(pruned, data, schedules[name], train_cfg, on_step, held_out)
        models[name] = pruned
    return DemoResult(dense, reference, logs, models)
