"""Class-incremental driver: alternates the adaptation phase with a pluggable
core-learning strategy over an ordered task stream, evaluating on all seen
tasks after each stage.

Two strategies stand in for the integrated methods: "ncm" accumulates class
prototypes with no training, "linear" fine-tunes a growing linear head on the
frozen adapted backbone.
"""

from dataclasses import dataclass, field

import numpy as np

from .adaptation import AdaptConfig, adapt, compute_prototypes, ce_adapt_loss
from .errors import NonFiniteLoss
from .metrics import AccuracyMatrix
from .model import (
    Classifier,
    backprop,
    classify,
    embed,
    embed_with_tape,
)
from .numerics import OptimizerState, params_hash, sgd_step

CORE_STRATEGIES = ("ncm", "linear")


@dataclass
class Task:
    class_ids: frozenset
    train: list  # (x, y) pairs
    test: list

    def __post_init__(self):
        if not self.train or not self.test:
            raise ValueError("task must have train and test samples")


@dataclass
class TaskStream:
    tasks: list

    def __post_init__(self):
        if not self.tasks:
            raise ValueError("stream must contain at least one task")
        seen = set()
        for t in self.tasks:
            if seen & t.class_ids:
                raise ValueError("task class sets must be pairwise disjoint")
            seen |= t.class_ids

    def __len__(self):
        return len(self.tasks)

    def permuted(self, rng) -> "TaskStream":
        order = rng.permutation(len(self.tasks))
        return TaskStream([self.tasks[i] for i in order])


@dataclass
class ExperimentState:
    backbone: object
    adapter: object
    classifier: Classifier
    task_index: int = 0


def core_learn_ncm(state: ExperimentState, task_data) -> ExperimentState:
    """Append current-task prototypes computed with the frozen adapted model.

    No parameter updates; previously stored prototypes are never touched."""
    before = params_hash(state.backbone.param_dict())
    protos = compute_prototypes(state.backbone, state.adapter, task_data)
    for cid, p in protos.prototypes.items():
        if cid in state.classifier.prototypes:
            raise ValueError(f"class {cid} already in classifier")
        state.classifier.prototypes[cid] = p
    state.classifier.class_ids = sorted(state.classifier.prototypes)
    assert params_hash(state.backbone.param_dict()) == before
    return state


def core_learn_linear(
    state: ExperimentState, task_data, epochs: int, lr: float, rng,
    tune_adapter: bool = False,
) -> ExperimentState:
    """Cross-entropy fine-tuning of the linear head (optionally the adapter)
    on current-task data; the backbone stays bit-identical."""
    before = params_hash(state.backbone.param_dict())
    task_data = list(task_data)
    state.classifier.add_classes(sorted({y for _, y in task_data}))
    head = state.classifier
    head_state = OptimizerState(lr=lr)
    adapter_state = OptimizerState(lr=lr)
    adapter_params = (
        state.adapter.param_dict() if (tune_adapter and state.adapter) else None
    )
    for _ in range(epochs):
        order = rng.permutation(len(task_data))
        for i in order:
            x, y = task_data[i]
            if adapter_params is not None:
                e, tape = embed_with_tape(state.backbone, state.adapter, x)
            else:
                e = embed(state.backbone, state.adapter, x)
                tape = None
            loss, d_e, d_w, d_b = ce_adapt_loss(e, y, head)
            if not np.isfinite(loss):
                raise NonFiniteLoss(f"core-learning loss {loss}")
            sgd_step({"W": head.weight, "b": head.bias}, {"W": d_w, "b": d_b}, head_state)
            if adapter_params is not None:
                grads = backprop(tape, state.backbone, state.adapter, d_e)
                sgd_step(
                    adapter_params,
                    {k: grads[k] for k in adapter_params},
                    adapter_state,
                )
    assert params_hash(state.backbone.param_dict()) == before
    return state


def evaluate(state: ExperimentState, stream: TaskStream, up_to_task: int):
    """Per-task accuracies a[k][j] for j <= k over the union label space."""
    row = []
    for j in range(up_to_task):
        test = stream.tasks[j].test
        correct = 0
        for x, y in test:
            e = embed(state.backbone, state.adapter, x)
            pred, _ = classify(state.classifier, e)
            correct += pred == y
        row.append(correct / len(test))
    return row


@dataclass
class RunResult:
    matrix: AccuracyMatrix
    adapt_reports: list
    state: ExperimentState
    status: str = "ok"
    error: str = ""


def run_acl(
    stream: TaskStream,
    backbone,
    adapter,
    adapt_cfg: AdaptConfig,
    core: str,
    rng,
    core_epochs: int = 10,
    core_lr: float = 0.1,
    tune_adapter: bool = False,
) -> RunResult:
    """Adapt -> freeze -> core-learn -> evaluate, for each task in order.

    On failure mid-stream the partial accuracy matrix is returned with
    status "failed"."""
    if core not in CORE_STRATEGIES:
        raise ValueError(f"unknown core strategy {core!r}")
    if core == "ncm":
        classifier = Classifier.cosine({})
    else:
        d = backbone.weights[-1].shape[0]
        classifier = Classifier.linear([], d)
    state = ExperimentState(backbone.copy(), adapter.copy(), classifier)
    rows, reports = [], []
    try:
        for k, task in enumerate(stream.tasks, start=1):
            do_adapt = adapt_cfg.mode != "disabled" and not (
                adapt_cfg.first_task_only and k > 1
            )
            if do_adapt:
                state.backbone, state.adapter, report = adapt(
                    state.backbone, state.adapter, task.train, adapt_cfg, rng
                )
                reports.append((k, report))
            state.task_index = k
            if core == "ncm":
                core_learn_ncm(state, task.train)
            else:
                core_learn_linear(
                    state, task.train, core_epochs, core_lr, rng,
                    tune_adapter=tune_adapter,
                )
            rows.append(evaluate(state, stream, k))
    except Exception as e:  # noqa: BLE001 - partial matrix must survive
        return RunResult(
            AccuracyMatrix(rows, expected_tasks=len(stream)),
            reports,
            state,
            status="failed",
            error=f"{type(e).__name__}: {e}",
        )
    return RunResult(AccuracyMatrix(rows, expected_tasks=len(stream)), reports, state)
