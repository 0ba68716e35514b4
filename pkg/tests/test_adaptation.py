import math

import numpy as np
import pytest

from adaptcl.adaptation import (
    AdaptConfig,
    PrototypeTable,
    acl_loss,
    adapt,
    ce_adapt_loss,
    compute_prototypes,
)
from adaptcl.errors import DegenerateVector, UnknownLabel
from adaptcl.model import Classifier, ModelConfig, embed, init_model, model_params
from adaptcl.numerics import finite_diff_grad, l2_normalize, make_rng, params_hash

LOG2 = math.log(2.0)


class _IdentityBackbone:
    """Passes 2-d inputs straight through (weights = I); for prototype tests."""

    def __new__(cls):
        cfg = ModelConfig(input_dim=2, embed_dim=2, hidden=(2,))
        backbone, _ = init_model(cfg, make_rng(0))
        backbone.weights = [np.eye(2), np.eye(2)]
        backbone.biases = [np.zeros(2), np.zeros(2)]
        backbone.activation = "relu"
        return backbone


class TestComputePrototypes:
    def test_symmetric_mean(self):
        backbone = _IdentityBackbone()
        data = [(np.array([1.0, 0.0]), 0), (np.array([0.0, 1.0]), 0)]
        protos = compute_prototypes(backbone, None, data)
        np.testing.assert_allclose(
            protos.prototypes[0], [np.sqrt(2) / 2, np.sqrt(2) / 2], atol=1e-12
        )

    def test_single_sample(self):
        backbone = _IdentityBackbone()
        x = np.array([3.0, 4.0])
        protos = compute_prototypes(backbone, None, [(x, 1)])
        np.testing.assert_allclose(
            protos.prototypes[1], embed(backbone, None, x), atol=0
        )

    def test_degenerate_mean(self):
        cfg = ModelConfig(input_dim=2, embed_dim=2, hidden=(2,))
        backbone, _ = init_model(cfg, make_rng(0))
        backbone.weights = [np.eye(2), np.eye(2)]
        backbone.biases = [np.zeros(2), np.zeros(2)]
        backbone.activation = "tanh"
        data = [(np.array([1.0, 0.0]), 0), (np.array([-1.0, 0.0]), 0)]
        with pytest.raises(DegenerateVector):
            compute_prototypes(backbone, None, data)


class TestAclLoss:
    def test_single_prototype(self):
        protos = PrototypeTable({0: np.array([1.0, 0.0])}, "t")
        loss, grad = acl_loss(np.array([0.0, 1.0]), 0, protos, 0.1)
        assert loss == 0.0

    def test_aligned_embedding(self):
        protos = PrototypeTable(
            {0: np.array([1.0, 0.0]), 1: np.array([0.0, 1.0])}, "t"
        )
        loss, _ = acl_loss(np.array([1.0, 0.0]), 0, protos, 0.1)
        assert loss == pytest.approx(math.log(1 + math.exp(-10)), rel=1e-12)

    def test_wrong_class_prototype(self):
        protos = PrototypeTable(
            {0: np.array([1.0, 0.0]), 1: np.array([0.0, 1.0])}, "t"
        )
        loss, _ = acl_loss(np.array([0.0, 1.0]), 0, protos, 0.1)
        assert loss == pytest.approx(math.log(1 + math.exp(10)), rel=1e-12)
        assert loss >= LOG2

    def test_unknown_label(self):
        protos = PrototypeTable({0: np.array([1.0, 0.0])}, "t")
        with pytest.raises(UnknownLabel):
            acl_loss(np.array([1.0, 0.0]), 9, protos, 0.1)

    def test_gradient_vs_finite_differences(self):
        rng = make_rng(31)
        protos = PrototypeTable(
            {c: l2_normalize(rng.standard_normal(5)) for c in range(4)}, "t"
        )
        for _ in range(10):
            e = l2_normalize(rng.standard_normal(5))
            tau = float(rng.uniform(0.05, 0.5))
            _, grad = acl_loss(e, 2, protos, tau)
            numeric = finite_diff_grad(
                lambda p: acl_loss(p["e"], 2, protos, tau)[0],
                {"e": e.copy()},
                1e-6,
            )["e"]
            np.testing.assert_allclose(grad, numeric, atol=1e-6)


class TestCeAdaptLoss:
    def test_uniform_logits(self):
        head = Classifier.linear([0, 1, 2, 3], 4)
        loss, *_ = ce_adapt_loss(np.ones(4) / 2.0, 1, head)
        assert loss == pytest.approx(math.log(4), abs=1e-12)

    def test_large_margin_limit(self):
        head = Classifier.linear([0, 1], 2)
        head.weight = np.array([[50.0, 0.0], [-50.0, 0.0]])
        loss, *_ = ce_adapt_loss(np.array([1.0, 0.0]), 0, head)
        assert loss < 1e-12

    def test_gradient_vs_finite_differences(self):
        rng = make_rng(32)
        head = Classifier.linear([0, 1, 2], 4)
        head.weight = rng.standard_normal((3, 4))
        head.bias = rng.standard_normal(3)
        e = l2_normalize(rng.standard_normal(4))
        _, d_e, d_w, d_b = ce_adapt_loss(e, 1, head)
        num_e = finite_diff_grad(
            lambda p: ce_adapt_loss(p["e"], 1, head)[0], {"e": e.copy()}, 1e-6
        )["e"]
        np.testing.assert_allclose(d_e, num_e, atol=1e-6)

        def loss_of_head(p):
            head.weight, head.bias = p["W"], p["b"]
            return ce_adapt_loss(e, 1, head)[0]

        nums = finite_diff_grad(
            loss_of_head, {"W": head.weight.copy(), "b": head.bias.copy()}, 1e-6
        )
        np.testing.assert_allclose(d_w, nums["W"], atol=1e-6)
        np.testing.assert_allclose(d_b, nums["b"], atol=1e-6)


def _toy_task(rng, n_per_class=20):
    centers = [np.array([2.0, 0.0]), np.array([0.0, 2.0]), np.array([-2.0, -2.0])]
    data = []
    for y, c in enumerate(centers):
        for _ in range(n_per_class):
            data.append((c + 0.2 * rng.standard_normal(2), y))
    return data


@pytest.fixture
def toy_setup():
    rng = make_rng(40)
    cfg = ModelConfig(input_dim=2, embed_dim=4, hidden=(8,))
    backbone, adapter = init_model(cfg, rng, adapter_rank=2)
    return backbone, adapter, _toy_task(rng), rng


class TestAdapt:
    def test_zero_epochs_identity(self, toy_setup):
        backbone, adapter, data, rng = toy_setup
        before = params_hash(model_params(backbone, adapter))
        b2, a2, report = adapt(
            backbone, adapter, data, AdaptConfig(epochs=0), rng
        )
        assert params_hash(model_params(b2, a2)) == before
        assert report.epochs == []

    def test_disabled_mode(self, toy_setup):
        backbone, adapter, data, rng = toy_setup
        before = params_hash(model_params(backbone, adapter))
        b2, a2, report = adapt(
            backbone, adapter, data, AdaptConfig(mode="disabled"), rng
        )
        assert params_hash(model_params(b2, a2)) == before

    def test_zero_lr_report_emitted(self, toy_setup):
        backbone, adapter, data, rng = toy_setup
        before = params_hash(model_params(backbone, adapter))
        b2, a2, report = adapt(
            backbone, adapter, data, AdaptConfig(lr=0.0, epochs=1), rng
        )
        assert params_hash(model_params(b2, a2)) == before
        assert len(report.epochs) == 1

    def test_loss_decreases_on_separable_data(self, toy_setup):
        backbone, adapter, data, rng = toy_setup
        cfg = AdaptConfig(epochs=3, lr=0.1, batch_size=16)
        _, _, report = adapt(backbone, adapter, data, cfg, rng)
        losses = [e["mean_loss"] for e in report.epochs]
        assert losses[-1] < losses[0]

    def test_bounds_recorded_and_hold(self, toy_setup):
        backbone, adapter, data, rng = toy_setup
        cfg = AdaptConfig(epochs=2, lr=0.1, batch_size=16)
        _, _, report = adapt(backbone, adapter, data, cfg, rng)
        for row in report.epochs:
            assert row["bound_lhs"] <= row["bound_rhs"] + 1e-9
            assert row["markov_lhs"] <= row["markov_rhs"] + 1e-12

    def test_prototypes_frozen(self, toy_setup):
        backbone, adapter, data, rng = toy_setup
        pre_hash = params_hash(model_params(backbone, adapter))
        _, _, report = adapt(
            backbone, adapter, data, AdaptConfig(epochs=1, lr=0.1), rng
        )
        # provenance records the pre-adaptation model, not the adapted one
        assert report.prototype_provenance == pre_hash

    def test_lightweight_only_freezes_backbone(self, toy_setup):
        backbone, adapter, data, rng = toy_setup
        before = params_hash(backbone.param_dict())
        b2, a2, _ = adapt(
            backbone,
            adapter,
            data,
            AdaptConfig(mode="lightweight_only", epochs=1, lr=0.1),
            rng,
        )
        assert params_hash(b2.param_dict()) == before
        assert params_hash(a2.param_dict()) != params_hash(adapter.param_dict())

    def test_ce_ablation_runs(self, toy_setup):
        backbone, adapter, data, rng = toy_setup
        b2, a2, report = adapt(
            backbone,
            adapter,
            data,
            AdaptConfig(mode="ce_ablation", epochs=1, lr=0.1),
            rng,
        )
        assert params_hash(b2.param_dict()) != params_hash(backbone.param_dict())
        assert len(report.epochs) == 1
