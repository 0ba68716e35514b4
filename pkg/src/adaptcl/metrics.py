"""Continual-learning metrics over the lower-triangular accuracy matrix, and
standalone verifiers for the toolkit's theoretical guarantees: the
loss-threshold/Markov misclassification bound, the feature-deviation bound,
the sphere distance-cosine identity, and the mean-as-minimizer property.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import IncompleteMatrix, LengthMismatch, SingleTask, TooFewSamples

LOG2 = math.log(2.0)


@dataclass
class AccuracyMatrix:
    """rows[b][j]: accuracy on task j+1 after learning stage b+1 (j <= b)."""

    rows: list
    expected_tasks: int = 0

    def __post_init__(self):
        for b, row in enumerate(self.rows):
            if len(row) != b + 1:
                raise ValueError(f"row {b} has {len(row)} entries, expected {b + 1}")
            if any(not (0.0 <= a <= 1.0) for a in row):
                raise ValueError("accuracies must lie in [0, 1]")
        if not self.expected_tasks:
            self.expected_tasks = len(self.rows)

    @property
    def K(self):
        return len(self.rows)

    @property
    def complete(self):
        return self.K == self.expected_tasks and self.K > 0

    def stage_accuracies(self):
        """A_b: mean accuracy over tasks <= b after stage b."""
        return [float(np.mean(row)) for row in self.rows]


def _require_complete(m: AccuracyMatrix):
    if not m.complete:
        raise IncompleteMatrix(
            f"matrix has {m.K} of {m.expected_tasks} rows"
        )


def last_accuracy(m: AccuracyMatrix) -> float:
    _require_complete(m)
    return m.stage_accuracies()[-1]


def avg_incremental_accuracy(m: AccuracyMatrix) -> float:
    _require_complete(m)
    return float(np.mean(m.stage_accuracies()))


def forgetting(m: AccuracyMatrix) -> float:
    """Mean over tasks j < K of best-ever accuracy minus final accuracy.

    Unclamped: negative values indicate backward transfer."""
    _require_complete(m)
    if m.K < 2:
        raise SingleTask("forgetting needs K >= 2")
    drops = []
    for j in range(m.K - 1):
        best = max(m.rows[b][j] for b in range(j, m.K - 1))
        drops.append(best - m.rows[m.K - 1][j])
    return float(np.mean(drops))


def plasticity(m: AccuracyMatrix, immediate: bool = False) -> float:
    """Mean over tasks of the best-ever accuracy on that task.

    immediate=True instead averages each task's accuracy right after it was
    learned (the diagonal)."""
    _require_complete(m)
    if immediate:
        return float(np.mean([m.rows[j][j] for j in range(m.K)]))
    return float(np.mean([max(m.rows[b][j] for b in range(j, m.K)) for j in range(m.K)]))


@dataclass
class BoundReport:
    context: str
    lhs: float
    rhs: float
    tolerance: float
    extra: dict = field(default_factory=dict)

    @property
    def slack(self):
        return self.rhs - self.lhs

    @property
    def passed(self):
        return self.slack >= -self.tolerance


def check_markov_bound(losses, correct_flags, context="markov") -> BoundReport:
    """Misclassification rate vs mean(loss)/log 2."""
    losses = np.asarray(losses, dtype=np.float64)
    correct = np.asarray(correct_flags, dtype=bool)
    if losses.shape != correct.shape:
        raise LengthMismatch(f"{losses.shape} vs {correct.shape}")
    if losses.size == 0:
        raise LengthMismatch("empty sequences")
    lhs = float(np.mean(~correct))
    rhs = float(np.mean(losses)) / LOG2
    return BoundReport(context, lhs, rhs, tolerance=1e-12)


def check_stability_bound(
    old_embeddings, new_embeddings, prototypes, labels, context="stability"
) -> BoundReport:
    """mean||e_new - e_old||^2 vs 2(mean||e_new - p_y||^2 + mean||e_old - p_y||^2)."""
    old = np.asarray(old_embeddings, dtype=np.float64)
    new = np.asarray(new_embeddings, dtype=np.float64)
    labels = list(labels)
    if not (len(old) == len(new) == len(labels)) or len(old) == 0:
        raise LengthMismatch("aligned non-empty sequences required")
    p = np.stack([prototypes[y] for y in labels])
    lhs = float(np.mean(np.sum((new - old) ** 2, axis=1)))
    rhs = 2.0 * (
        float(np.mean(np.sum((new - p) ** 2, axis=1)))
        + float(np.mean(np.sum((old - p) ** 2, axis=1)))
    )
    return BoundReport(context, lhs, rhs, tolerance=1e-9)


def verify_lemma1(n_pairs: int, dim: int, rng) -> float:
    """Max |  ||a-b||^2 - 2(1 - cos(a,b)) | over seeded random unit pairs."""
    worst = 0.0
    for _ in range(n_pairs):
        a = rng.standard_normal(dim)
        b = rng.standard_normal(dim)
        a /= np.linalg.norm(a)
        b /= np.linalg.norm(b)
        lhs = float(np.sum((a - b) ** 2))
        rhs = 2.0 * (1.0 - float(a @ b))
        worst = max(worst, abs(lhs - rhs))
    return worst


def verify_lemma2(class_embeddings, rng, n_probes: int = 100) -> BoundReport:
    """The unnormalized mean minimizes mean squared distance.

    lhs: mean squared distance to the mean; rhs: best mean squared distance
    over random perturbed probe points. Also asserts the objective's gradient
    vanishes at the mean, and logs how far the renormalized prototype sits
    from the mean (reported, not asserted)."""
    e = np.asarray(class_embeddings, dtype=np.float64)
    if e.ndim != 2 or len(e) < 2:
        raise TooFewSamples("need at least 2 embeddings")
    mean = e.mean(axis=0)
    lhs = float(np.mean(np.sum((e - mean) ** 2, axis=1)))
    rhs = np.inf
    for _ in range(n_probes):
        z = mean + 0.1 * rng.standard_normal(mean.shape)
        rhs = min(rhs, float(np.mean(np.sum((e - z) ** 2, axis=1))))
    if n_probes == 0:
        rhs = lhs
    # gradient of the objective at z = mean: -2 (mean(e) - z)
    grad_norm = float(np.linalg.norm(-2.0 * (e.mean(axis=0) - mean)))
    norm_mean = np.linalg.norm(mean)
    renorm_gap = (
        float(np.linalg.norm(mean / norm_mean - mean)) if norm_mean > 0 else np.nan
    )
    report = BoundReport(
        "mean-minimizer",
        lhs,
        rhs,
        tolerance=1e-12,
        extra={"grad_norm_at_mean": grad_norm, "renormalization_gap": renorm_gap},
    )
    if grad_norm > 1e-12:
        report.extra["gradient_check_failed"] = True
    return report
