"""Standalone verification campaigns for every runtime guarantee: the
distance-cosine identity, the mean-as-minimizer property, the
misclassification loss threshold, the Markov error bound, the
feature-deviation bound, and the analytic-vs-numeric gradient battery."""

import math
from dataclasses import dataclass, field

import numpy as np

from . import model as model_mod
from .adaptation import PrototypeTable, acl_loss
from .metrics import (
    check_markov_bound,
    check_stability_bound,
    verify_lemma1,
    verify_lemma2,
)
from .model import ModelConfig, classify, embed, init_model, model_params, Classifier
from .numerics import finite_diff_grad, l2_normalize, make_rng

LOG2 = math.log(2.0)


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    vacuous: bool = False


@dataclass
class VerifySizes:
    lemma1_pairs: int = 1000
    lemma2_sets: int = 20
    lemma2_probes: int = 100
    threshold_draws: int = 10000
    markov_batches: int = 200
    stability_draws: int = 1000
    grad_seeds: int = 3
    grad_probes: int = 10


def _random_unit(rng, dim):
    return l2_normalize(rng.standard_normal(dim))


def _random_table(rng, dim, n_classes):
    return PrototypeTable(
        {c: _random_unit(rng, dim) for c in range(n_classes)}, "random"
    )


def run_lemma1(seed, n_pairs, dims=(2, 16, 64)) -> CheckResult:
    if n_pairs == 0:
        return CheckResult("lemma1", True, "no pairs requested", vacuous=True)
    worst = 0.0
    for dim in dims:
        rng = make_rng(seed, 11, dim)
        worst = max(worst, verify_lemma1(n_pairs, dim, rng))
    return CheckResult(
        "lemma1", worst <= 1e-12, f"max residual {worst:.3e} (limit 1e-12)"
    )


def run_lemma2(seed, n_sets, n_probes, dim=16) -> CheckResult:
    if n_sets == 0:
        return CheckResult("lemma2", True, "no sets requested", vacuous=True)
    rng = make_rng(seed, 12)
    for i in range(n_sets):
        n = int(rng.integers(2, 51))
        embeds = np.stack([_random_unit(rng, dim) for _ in range(n)])
        report = verify_lemma2(embeds, rng, n_probes)
        grad = report.extra["grad_norm_at_mean"]
        if not report.passed or grad > 1e-12:
            return CheckResult(
                "lemma2",
                False,
                f"set {i}: lhs={report.lhs!r} rhs={report.rhs!r} grad={grad!r}",
            )
    return CheckResult("lemma2", True, f"{n_sets} sets x {n_probes} probes")


def run_threshold(seed, n_draws, dim=16) -> CheckResult:
    """Cosine-misclassified draws must incur loss >= log 2."""
    if n_draws == 0:
        return CheckResult("loss-threshold", True, "no draws requested", vacuous=True)
    rng = make_rng(seed, 13)
    violations = 0
    worst = None
    for i in range(n_draws):
        n_classes = int(rng.integers(2, 9))
        tau = float(rng.uniform(0.02, 0.5))
        table = _random_table(rng, dim, n_classes)
        e = _random_unit(rng, dim)
        y = int(rng.integers(n_classes))
        pred, _ = classify(Classifier.cosine(table.prototypes), e)
        loss, _ = acl_loss(e, y, table, tau)
        if pred != y and loss < LOG2 - 1e-12:
            violations += 1
            worst = (i, loss)
    if violations:
        return CheckResult(
            "loss-threshold", False, f"{violations} violations, first {worst}"
        )
    return CheckResult("loss-threshold", True, f"{n_draws} draws, zero violations")


def run_markov(seed, n_batches, dim=16) -> CheckResult:
    if n_batches == 0:
        return CheckResult("markov", True, "no batches requested", vacuous=True)
    rng = make_rng(seed, 14)
    for i in range(n_batches):
        n_classes = int(rng.integers(2, 9))
        tau = float(rng.uniform(0.02, 0.5))
        table = _random_table(rng, dim, n_classes)
        clf = Classifier.cosine(table.prototypes)
        losses, correct = [], []
        for _ in range(int(rng.integers(5, 40))):
            e = _random_unit(rng, dim)
            y = int(rng.integers(n_classes))
            pred, _ = classify(clf, e)
            losses.append(acl_loss(e, y, table, tau)[0])
            correct.append(pred == y)
        report = check_markov_bound(losses, correct, context=f"batch {i}")
        if not report.passed:
            return CheckResult(
                "markov", False, f"batch {i}: lhs={report.lhs!r} rhs={report.rhs!r}"
            )
    return CheckResult("markov", True, f"{n_batches} random batches")


def run_stability(seed, n_draws, dim=16) -> CheckResult:
    if n_draws == 0:
        return CheckResult("stability", True, "no draws requested", vacuous=True)
    rng = make_rng(seed, 15)
    for i in range(n_draws):
        old = _random_unit(rng, dim)
        new = _random_unit(rng, dim)
        p = _random_unit(rng, dim)
        report = check_stability_bound([old], [new], {0: p}, [0], context=f"draw {i}")
        if not report.passed:
            return CheckResult(
                "stability", False, f"draw {i}: lhs={report.lhs!r} rhs={report.rhs!r}"
            )
    return CheckResult("stability", True, f"{n_draws} random unit triples")


def run_gradient_battery(
    seed, n_seeds, n_probes, rel_tol=1e-4, h=1e-5, with_adapter=True
) -> CheckResult:
    """Backprop through embed -> normalize -> contrastive loss vs central
    finite differences, per parameter group."""
    if n_seeds == 0 or n_probes == 0:
        return CheckResult("gradients", True, "no probes requested", vacuous=True)
    cfg = ModelConfig(input_dim=2, embed_dim=3, hidden=(4,))
    for s in range(n_seeds):
        rng = make_rng(seed, 16, s)
        backbone, adapter = init_model(cfg, rng, adapter_rank=2)
        if with_adapter:
            adapter.up[:] = rng.uniform(-0.3, 0.3, adapter.up.shape)
        else:
            adapter = None
        table = _random_table(rng, cfg.embed_dim, 3)
        for probe in range(n_probes):
            x = rng.standard_normal(cfg.input_dim)
            y = int(rng.integers(3))
            tau = float(rng.uniform(0.05, 0.5))

            def loss_fn(_params):
                e = embed(backbone, adapter, x)
                return acl_loss(e, y, table, tau)[0]

            params = model_params(backbone, adapter)
            e, tape = model_mod.embed_with_tape(backbone, adapter, x)
            _, d_e = acl_loss(e, y, table, tau)
            analytic = model_mod.backprop(tape, backbone, adapter, d_e)
            numeric = finite_diff_grad(loss_fn, params, h)
            for name in params:
                err = np.linalg.norm(analytic[name] - numeric[name])
                scale = max(np.linalg.norm(numeric[name]), 1e-10)
                if err / scale > rel_tol:
                    return CheckResult(
                        "gradients",
                        False,
                        f"seed {s} probe {probe} group {name}: "
                        f"rel err {err / scale:.3e} > {rel_tol:g}",
                    )
    return CheckResult(
        "gradients", True, f"{n_seeds} seeds x {n_probes} probes, rel tol {rel_tol:g}"
    )


def run_all(seed: int = 0, sizes: "VerifySizes | None" = None):
    sizes = sizes or VerifySizes()
    return [
        run_lemma1(seed, sizes.lemma1_pairs),
        run_lemma2(seed, sizes.lemma2_sets, sizes.lemma2_probes),
        run_threshold(seed, sizes.threshold_draws),
        run_markov(seed, sizes.markov_batches),
        run_stability(seed, sizes.stability_draws),
        run_gradient_battery(seed, sizes.grad_seeds, sizes.grad_probes),
    ]
