import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qvnn import (
    AbsHead,
    Model,
    QBatchNorm,
    QConv2d,
    QDense,
    QMaxPool,
    RegConfig,
    SparsityReport,
    SplitActivation,
    mask_gamma,
    preset,
    prune_gamma,
    reg_bn_gamma,
    reg_l1_elem,
    reg_l2_elem,
    reg_rq,
    reg_rql,
    regularizer,
    sparsity_report,
)
from qvnn.errors import ContractError


def q(*vals):
    return np.array(vals, dtype=float).reshape(4, -1)


class TestPenalties:
    def test_l1_examples(self):
        assert reg_l1_elem([q(1, -2, 3, -4)])[0] == 10
        p, g = reg_l1_elem([np.zeros((4, 3))])
        assert p == 0 and not g[0].any()
        assert reg_l1_elem([np.array([[1.0, 0], [0, -1], [0, 0], [0, 0]])])[0] == 2

    def test_l2_examples(self):
        p, g = reg_l2_elem([q(3, 0, 4, 0)])
        assert p == 12.5
        np.testing.assert_array_equal(g[0], q(3, 0, 4, 0))
        assert reg_l2_elem([np.zeros((4, 2))])[0] == 0

    def test_rq_examples(self):
        p, g = reg_rq([q(3, 0, 4, 0)], Q=1)
        assert p == 5
        np.testing.assert_allclose(g[0][:, 0], [0.6, 0, 0.8, 0], rtol=1e-15)
        w = np.array([[3.0, 0], [0, 0], [4, 0], [0, 0]])
        p, g = reg_rq([w], Q=2)
        assert p == 2.5
        assert not g[0][:, 1].any()

    def test_rq_default_q_counts_quaternions(self):
        ws = [np.ones((4, 2, 3)), np.ones((4, 5))]
        assert reg_rq(ws)[0] == pytest.approx(2.0)

    def test_rq_needs_positive_q(self):
        with pytest.raises(ContractError):
            reg_rq([q(1, 0, 0, 0)], Q=0)

    def test_rql_example(self):
        assert reg_rql([q(3, 0, 4, 0)], Q=1)[0] == 12
        assert reg_rql([np.zeros((4, 2))])[0] == 0

    def test_bn_examples(self):
        p, g = reg_bn_gamma([np.array([1.0, -0.5, 0.0])])
        assert p == 0.5
        np.testing.assert_allclose(g[0], [1 / 3, -1 / 3, 0])
        assert reg_bn_gamma([np.ones(4), np.ones(2)])[0] == 1.0
        with pytest.raises(ContractError, match="batch-norm"):
            reg_bn_gamma([])

    @settings(max_examples=30)
    @given(st.integers(0, 2**31 - 1))
    def test_rq_norm_symmetries(self, seed):
        rng = np.random.default_rng(seed)
        w = rng.normal(size=(4, 6))
        base = reg_rq([w])[0]
        flipped = w.copy()
        flipped[:, 2] *= -1
        perm = w[[0, 3, 1, 2]]
        assert reg_rq([flipped])[0] == pytest.approx(base, rel=1e-14)
        assert reg_rq([perm])[0] == pytest.approx(base, rel=1e-14)

    @settings(max_examples=30)
    @given(st.integers(0, 2**31 - 1))
    def test_nonnegative_and_zero_only_at_zero(self, seed):
        rng = np.random.default_rng(seed)
        w = rng.normal(size=(4, 3)) * (rng.random((4, 3)) < 0.5)
        for fn in (reg_l1_elem, reg_l2_elem, reg_rq, reg_rql):
            p = fn([w])[0]
            assert p >= 0 and (p == 0) == (not w.any())
        g = rng.normal(size=5) * (rng.random(5) < 0.5)
        p = reg_bn_gamma([g])[0]
        assert p >= 0 and (p == 0) == (not g.any())

    @pytest.mark.parametrize("fn", [reg_l1_elem, reg_l2_elem, reg_rq, reg_rql])
    def test_subgradients_match_finite_differences(self, fn):
        rng = np.random.default_rng(0)
        eps = 1e-6
        for _ in range(50):
            w = rng.uniform(0.01, 1.0, size=(4, 3)) * rng.choice([-1, 1], size=(4, 3))
            _, (g,) = fn([w], Q=7) if fn in (reg_rq, reg_rql) else fn([w])
            for n in range(w.size):
                e = np.zeros(w.size)
                e[n] = eps
                e = e.reshape(w.shape)
                kw = {"Q": 7} if fn in (reg_rq, reg_rql) else {}
                num = (fn([w + e], **kw)[0] - fn([w - e], **kw)[0]) / (2 * eps)
                assert abs(g.reshape(-1)[n] - num) <= 1e-6 * max(abs(num), 1.0)


class TestModelRegularizer:
    def test_only_weights_and_gamma_penalized(self):
        model = preset("mnist-qcnn-bn")
        _, grads = regularizer(model, "r_q+bn_gamma_l1")
        assert set(grads) == {"0.W", "4.W", "9.W", "1.gamma", "5.gamma"}
        _, grads = regularizer(model, "l1")
        assert set(grads) == {"0.W", "4.W", "9.W"}

    def test_model_q_is_network_wide(self):
        model = preset("mnist-qcnn")
        p, _ = regularizer(model, "rq")
        ws = [l.W for l in model.weight_layers()]
        Q = model.quaternion_weight_count()
        assert p == pytest.approx(sum(np.sqrt((w * w).sum(axis=0)).sum() for w in ws) / Q, rel=1e-12)

    def test_rql_is_sum(self):
        model = preset("mnist-qcnn", seed=3)
        a, ga = regularizer(model, "rq")
        b, gb = regularizer(model, "l1")
        c, gc = regularizer(model, "rql")
        assert c == pytest.approx(a + b, rel=1e-12)
        np.testing.assert_allclose(gc["3.W"], ga["3.W"] + gb["3.W"], rtol=1e-12)

    def test_none(self):
        p, g = regularizer(preset("mnist-qcnn"), "none")
        assert p == 0 and not g

    def test_bn_regularizer_without_bn(self):
        with pytest.raises(ContractError):
            regularizer(preset("mnist-qcnn"), "bn-l1")

    def test_config_validation(self):
        assert RegConfig("rq", 1e-3).kind == "r_q"
        with pytest.raises(ContractError):
            RegConfig("l3", 1.0)
        with pytest.raises(ContractError):
            RegConfig("l1", -1.0)
        with pytest.raises(ContractError):
            RegConfig("l1", 1.0, threshold=0.0)


def tiny_dense_model(W):
    return Model([QDense(W.shape[2], W.shape[1], W=W), AbsHead()], (W.shape[2],), W.shape[1])


class TestSparsity:
    def test_all_zero(self):
        rep = sparsity_report(tiny_dense_model(np.zeros((4, 2, 3))))
        assert rep.component_sparsity == 1.0 and rep.quaternion_sparsity == 1.0
        assert rep.neuron_sparsity == 0.0

    def test_real_only_weight(self):
        rep = sparsity_report(tiny_dense_model(np.array([1.0, 0, 0, 0]).reshape(4, 1, 1)), 1e-3)
        assert rep.component_sparsity == 0.75 and rep.quaternion_sparsity == 0.0

    def test_threshold_is_strict(self):
        W = np.full((4, 1, 1), 1e-3)
        assert sparsity_report(tiny_dense_model(W), 1e-3).quaternion_sparsity == 0.0
        assert sparsity_report(tiny_dense_model(W * 0.999), 1e-3).quaternion_sparsity == 1.0

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_against_brute_force_counts(self, seed):
        rng = np.random.default_rng(seed)
        model = preset("mnist-qcnn", seed=seed % 7)
        for layer in model.weight_layers():
            layer.W[rng.random(layer.W.shape) < 0.6] = 0.0
            layer.W[:, rng.random(layer.W.shape[1:]) < 0.3] = 0.0
        rep = sparsity_report(model, 1e-3)
        comps = np.concatenate([np.abs(l.W).reshape(4, -1) for l in model.weight_layers()], axis=1)
        zero_c = sum(1 for v in comps.reshape(-1) if v < 1e-3)
        zero_q = sum(1 for col in comps.T if all(v < 1e-3 for v in col))
        assert rep.component_sparsity == zero_c / comps.size
        assert rep.quaternion_sparsity == zero_q / comps.shape[1]
        assert rep.quaternion_sparsity <= rep.component_sparsity

    def test_neuron_sparsity_and_macs(self):
        model = preset("mnist-qcnn-bn")
        base = sparsity_report(model)
        assert base.live_macs == base.total_macs == 16 * 9 * 26 * 26 + 32 * 16 * 9 * 11 * 11 + 10 * 800
        assert base.live_params == base.total_params == model.quaternion_param_count()
        model.layers[5].gamma[:8] = 0.0
        rep = sparsity_report(model)
        assert rep.neuron_sparsity == pytest.approx(8 / 48)
        assert rep.live_macs == 16 * 9 * 26 * 26 + 24 * 16 * 9 * 11 * 11 + 10 * 600

    def test_report_formats(self):
        rep = sparsity_report(preset("mnist-qcnn"))
        assert SparsityReport.csv_header().split(",")[0] == "component_sparsity"
        assert len(rep.csv_row().split(",")) == len(SparsityReport.csv_header().split(","))
        assert "quaternion_sparsity=" in str(rep)
        assert set(rep.as_dict()) >= {"live_params", "live_macs"}

    def test_bad_tau(self):
        with pytest.raises(ContractError):
            sparsity_report(preset("mnist-qcnn"), 0.0)


def bn_model(seed, padding=0):
    rng = np.random.default_rng(seed)
    layers = [
        QConv2d(1, 6, 3, padding=padding, rng=rng, bias=False), QBatchNorm(6), SplitActivation(), QMaxPool(2),
        QConv2d(6, 4, 3, padding=padding, rng=rng, bias=False), QBatchNorm(4), SplitActivation(),
    ]
    # valid: 8 -> 6 -> 3 -> 1; padded: 10 -> 10 -> 5 -> 5
    side, H = (5, 10) if padding else (1, 8)
    layers += [QDense(4 * side * side, 3, rng=rng), AbsHead()]
    model = Model(layers, (1, H, H), 3)
    for bn in model.batchnorms():
        bn.gamma = rng.uniform(0.5, 1.5, bn.channels)
        bn.beta = rng.normal(size=(4, bn.channels))
        bn.running_mean = rng.normal(size=(4, bn.channels)) * 0.1
        bn.running_var = rng.uniform(0.5, 2.0, bn.channels)
    return model


class TestPruning:
    def test_nothing_below_threshold_is_identity(self):
        model = bn_model(0)
        pruned = prune_gamma(model, 1e-3)
        x = np.random.default_rng(1).normal(size=(4, 5, 1, 8, 8))
        np.testing.assert_array_equal(pruned.forward(x), model.forward(x))

    def test_dead_channel_with_zero_beta(self):
        model = bn_model(2)
        bn = model.batchnorms()[0]
        bn.gamma[1] = 0.0
        bn.beta[:, 1] = 0.0
        pruned = prune_gamma(model, 1e-3)
        x = np.random.default_rng(3).normal(size=(4, 10, 1, 8, 8))
        np.testing.assert_allclose(pruned.forward(x), model.forward(x), rtol=0, atol=1e-12)
        assert pruned.layers[0].out_channels == 5 and pruned.layers[4].in_channels == 5

    def test_folding_constant_channels(self):
        model = bn_model(4)
        model.layers[1].gamma[[0, 3]] = 0.0
        model.layers[5].gamma[2] = 0.0
        pruned = prune_gamma(model, 1e-3)
        x = np.random.default_rng(5).normal(size=(4, 20, 1, 8, 8))
        np.testing.assert_allclose(pruned.forward(x), model.forward(x), rtol=0, atol=1e-9)
        rep = sparsity_report(pruned)
        assert rep.neuron_sparsity == 0.0
        assert rep.total_macs < sparsity_report(model).total_macs

    def test_input_model_untouched(self):
        model = bn_model(6)
        model.layers[1].gamma[0] = 0.0
        before = {k: v.copy() for k, v in model.parameters().items()}
        prune_gamma(model)
        for k, v in model.parameters().items():
            np.testing.assert_array_equal(v, before[k])

    def test_mask_gamma(self):
        model = bn_model(7)
        model.layers[1].gamma[2] = 5e-4
        masked = mask_gamma(model, 1e-3)
        assert masked.layers[1].gamma[2] == 0.0 and model.layers[1].gamma[2] == 5e-4

    def test_padded_conv_warns(self):
        model = bn_model(8, padding=1)
        model.layers[1].gamma[0] = 0.0
        with pytest.warns(UserWarning, match="padded"):
            prune_gamma(model)

    def test_errors(self):
        with pytest.raises(ContractError):
            prune_gamma(preset("mnist-qcnn"))
        model = bn_model(9)
        model.layers[5].gamma[:] = 0.0
        with pytest.raises(ContractError, match="every channel"):
            prune_gamma(model)
        with pytest.raises(ContractError):
            prune_gamma(bn_model(9), 0.0)

    def test_preset_prune_matches_masked(self):
        model = preset("mnist-qcnn-bn", seed=1)
        rng = np.random.default_rng(10)
        for bn in model.batchnorms():
            bn.beta = rng.normal(size=bn.beta.shape)
            bn.gamma[rng.random(bn.channels) < 0.25] = 0.0
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            pruned = prune_gamma(model)
        x = rng.uniform(size=(4, 8, 1, 28, 28))
        np.testing.assert_allclose(pruned.forward(x), model.forward(x), rtol=0, atol=1e-9)
