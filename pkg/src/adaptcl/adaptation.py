"""Pre-task adaptation: class prototypes from the pre-adaptation model, the
prototype-anchored contrastive loss with its analytic gradient, a
cross-entropy ablation loss, and the mini-batch adaptation loop.

Prototypes are computed once from the model state at phase entry and stay
frozen for the whole phase; the loop asserts the misclassification-threshold
and Markov bounds per batch and records the feature-deviation bound per epoch.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateVector, NonFiniteLoss, UnknownLabel
from .model import (
    Classifier,
    backprop,
    classify,
    embed,
    embed_many,
    embed_with_tape,
    model_params,
)
from .numerics import (
    OptimizerState,
    l2_normalize,
    log_sum_exp,
    params_hash,
    sgd_step,
)

LOG2 = math.log(2.0)

ADAPT_MODES = ("acl", "ce_ablation", "lightweight_only", "disabled")


@dataclass(frozen=True)
class AdaptConfig:
    temperature: float = 0.1
    epochs: int = 1
    lr: float = 0.05
    batch_size: int = 32
    momentum: float = 0.0
    mode: str = "acl"
    first_task_only: bool = False

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.mode not in ADAPT_MODES:
            raise ValueError(f"unknown adaptation mode {self.mode!r}")


@dataclass
class PrototypeTable:
    """Unit prototypes keyed by class id, tagged with the producing model."""

    prototypes: dict
    provenance: str

    def __contains__(self, label):
        return label in self.prototypes

    def class_ids(self):
        return sorted(self.prototypes)

    def matrix(self):
        return np.stack([self.prototypes[c] for c in self.class_ids()])


def compute_prototypes(backbone, adapter, data) -> PrototypeTable:
    """Renormalized per-class mean of unit embeddings.

    data: sequence of (x, y) pairs. A class whose embedding mean is
    (numerically) zero raises DegenerateVector rather than being patched.
    """
    sums, counts = {}, {}
    for x, y in data:
        e = embed(backbone, adapter, x)
        if y in sums:
            sums[y] += e
            counts[y] += 1
        else:
            sums[y] = e.copy()
            counts[y] = 1
    protos = {}
    for y in sums:
        mean = sums[y] / counts[y]
        try:
            protos[y] = l2_normalize(mean)
        except DegenerateVector as e:
            raise DegenerateVector(f"class {y}: {e}") from e
    return PrototypeTable(protos, provenance=params_hash(model_params(backbone, adapter)))


def acl_loss(e_star: np.ndarray, label, protos: PrototypeTable, tau: float):
    """Temperature-scaled softmax over prototype cosines, anchored at the
    true class. Returns (loss, d_loss/d_e_star); the gradient is taken with
    the embedding as a free vector, before the normalization Jacobian."""
    if label not in protos:
        raise UnknownLabel(f"label {label!r} not in prototype table")
    ids = protos.class_ids()
    p = protos.matrix()  # (C, d)
    scores = (p @ e_star) / tau
    y_idx = ids.index(label)
    lse = log_sum_exp(scores)
    loss = lse - scores[y_idx]
    soft = np.exp(scores - lse)
    grad = (soft @ p - p[y_idx]) / tau
    return float(loss), grad


def ce_adapt_loss(e_star: np.ndarray, label, head: Classifier):
    """Softmax cross-entropy on linear-head logits.

    Returns (loss, d_loss/d_e_star, d_loss/d_W, d_loss/d_b)."""
    if label not in head.class_ids:
        raise UnknownLabel(f"label {label!r} not in head")
    logits = head.weight @ e_star + head.bias
    y_idx = head.class_ids.index(label)
    lse = log_sum_exp(logits)
    loss = lse - logits[y_idx]
    soft = np.exp(logits - lse)
    delta = soft.copy()
    delta[y_idx] -= 1.0
    d_e = head.weight.T @ delta
    d_w = np.outer(delta, e_star)
    return float(loss), d_e, d_w, delta


@dataclass
class AdaptReport:
    """Per-epoch loss and the live bound measurements (lhs/rhs pairs)."""

    mode: str
    epochs: list = field(default_factory=list)  # dicts per epoch
    prototype_provenance: str = ""

    def rows(self):
        """CSV rows: epoch, mean_loss, bound_lhs, bound_rhs, markov_lhs, markov_rhs."""
        return [
            (
                e["epoch"],
                e["mean_loss"],
                e["bound_lhs"],
                e["bound_rhs"],
                e["markov_lhs"],
                e["markov_rhs"],
            )
            for e in self.epochs
        ]


class BoundViolation(AssertionError):
    """A theoretical guarantee failed at runtime; always an implementation bug."""


def _check_batch_bounds(losses, wrong_flags):
    for loss, wrong in zip(losses, wrong_flags):
        if wrong and loss < LOG2 - 1e-12:
            raise BoundViolation(
                f"misclassified sample with loss {loss!r} < log 2"
            )
    rate = float(np.mean(wrong_flags))
    bound = float(np.mean(losses)) / LOG2
    if rate > bound + 1e-12:
        raise BoundViolation(f"error rate {rate} exceeds loss bound {bound}")


def _trainable_params(backbone, adapter, mode):
    if mode == "lightweight_only":
        return adapter.param_dict()
    return model_params(backbone, adapter)


def adapt(backbone, adapter, data, config: AdaptConfig, rng):
    """One adaptation phase on a task's training data.

    Returns (adapted backbone, adapted adapter, AdaptReport). The inputs are
    never mutated; mode="disabled" or epochs=0 returns exact copies.
    """
    data = list(data)
    if not data:
        raise ValueError("adaptation data is empty")
    backbone = backbone.copy()
    adapter = adapter.copy() if adapter is not None else None
    report = AdaptReport(mode=config.mode)
    if config.mode == "disabled":
        return backbone, adapter, report

    protos = compute_prototypes(backbone, adapter, data)
    report.prototype_provenance = protos.provenance
    proto_classifier = Classifier.cosine(protos.prototypes)
    labels = [y for _, y in data]
    old_embeds = embed_many(backbone, adapter, [x for x, _ in data])

    head = None
    if config.mode == "ce_ablation":
        head = Classifier.linear(sorted(set(labels)), old_embeds.shape[1])

    if config.epochs == 0:
        return backbone, adapter, report

    params = _trainable_params(backbone, adapter, config.mode)
    state = OptimizerState(lr=config.lr, momentum=config.momentum)
    head_state = OptimizerState(lr=config.lr, momentum=config.momentum)

    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(data))
        for start in range(0, len(data), config.batch_size):
            batch = [data[i] for i in order[start : start + config.batch_size]]
            grads = {name: np.zeros_like(p) for name, p in params.items()}
            head_grads = None
            if head is not None:
                head_grads = {
                    "W": np.zeros_like(head.weight),
                    "b": np.zeros_like(head.bias),
                }
            batch_losses, batch_wrong = [], []
            for x, y in batch:
                e_star, tape = embed_with_tape(backbone, adapter, x)
                if config.mode == "ce_ablation":
                    loss, d_e, d_w, d_b = ce_adapt_loss(e_star, y, head)
                    head_grads["W"] += d_w / len(batch)
                    head_grads["b"] += d_b / len(batch)
                else:
                    loss, d_e = acl_loss(e_star, y, protos, config.temperature)
                    pred, _ = classify(proto_classifier, e_star)
                    batch_losses.append(loss)
                    batch_wrong.append(pred != y)
                if not np.isfinite(loss):
                    raise NonFiniteLoss(f"loss {loss} in epoch {epoch}")
                sample_grads = backprop(tape, backbone, adapter, d_e)
                for name in grads:
                    grads[name] += sample_grads[name] / len(batch)
            if batch_losses:
                _check_batch_bounds(batch_losses, batch_wrong)
            sgd_step(params, grads, state)
            if head is not None:
                sgd_step(
                    {"W": head.weight, "b": head.bias}, head_grads, head_state
                )

        new_embeds = embed_many(backbone, adapter, [x for x, _ in data])
        epoch_losses, epoch_wrong = [], []
        for e_star, y in zip(new_embeds, labels):
            loss, _ = acl_loss(e_star, y, protos, config.temperature)
            pred, _ = classify(proto_classifier, e_star)
            epoch_losses.append(loss)
            epoch_wrong.append(pred != y)
        proto_mat = np.stack([protos.prototypes[y] for y in labels])
        dev = np.sum((new_embeds - old_embeds) ** 2, axis=1)
        new_to_p = np.sum((new_embeds - proto_mat) ** 2, axis=1)
        old_to_p = np.sum((old_embeds - proto_mat) ** 2, axis=1)
        bound_lhs = float(np.mean(dev))
        bound_rhs = 2.0 * (float(np.mean(new_to_p)) + float(np.mean(old_to_p)))
        if bound_lhs > bound_rhs + 1e-9:
            raise BoundViolation(
                f"feature-deviation bound violated: {bound_lhs} > {bound_rhs}"
            )
        markov_lhs = float(np.mean(epoch_wrong))
        markov_rhs = float(np.mean(epoch_losses)) / LOG2
        report.epochs.append(
            {
                "epoch": epoch,
                "mean_loss": float(np.mean(epoch_losses)),
                "bound_lhs": bound_lhs,
                "bound_rhs": bound_rhs,
                "markov_lhs": markov_lhs,
                "markov_rhs": markov_rhs,
            }
        )
    assert protos.provenance == report.prototype_provenance
    return backbone, adapter, report
