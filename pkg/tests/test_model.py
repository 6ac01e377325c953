import math

import numpy as np
import pytest

from cropdann import autodiff as ad
from cropdann.autodiff import Tensor, backward, finite_difference_check, no_grad, zero_grads
from cropdann.errors import ContractError, ShapeError
from cropdann.layers import param_count
from cropdann.model import (DANNModel, GaussianRegressor, ModelConfig, RegressionModel,
                            component_counts, strip_discriminator)
from cropdann.training import bce_loss, gaussian_nll


def small_cfg(**kw):
    base = dict(backbone="tcn", depth=2, in_features=2, seq_len=4,
                hidden_channels=6, seed=0)
    base.update(kw)
    return ModelConfig(**base)


class TestComponentCounts:
    def test_default_counts(self):
        counts = component_counts()
        assert counts["extractor"] == 23680
        assert counts["regressor"] == 82
        assert counts["discriminator"] == 28417

    def test_extractor_counts_by_depth(self):
        from cropdann.model import LSTMFeatureExtractor, TCNFeatureExtractor
        r = np.random.default_rng(0)
        for depth, expected in ((1, 4000), (2, 10560), (4, 23680)):
            assert param_count(TCNFeatureExtractor(ModelConfig(depth=depth), r)) == expected
        for depth, expected in ((1, 7520), (2, 20640), (4, 46880)):
            cfg = ModelConfig(backbone="lstm", depth=depth)
            assert param_count(LSTMFeatureExtractor(cfg, r)) == expected

    def test_parameter_partition_disjoint_exhaustive(self):
        model = DANNModel(ModelConfig())
        groups = [model.feature_parameters(), model.regressor_parameters(),
                  model.discriminator_parameters()]
        ids = [id(p) for g in groups for p in g]
        assert len(ids) == len(set(ids))
        assert set(ids) == {id(p) for p in model.parameters()}


class TestExtractFeatures:
    def test_shape_contract(self):
        model = DANNModel(ModelConfig())
        out = model.extract_features(Tensor(np.zeros((2, 11, 5))))
        assert out.shape == (2, 40, 11)
        assert np.isfinite(out.data).all()

    def test_wrong_length_rejected(self):
        model = DANNModel(ModelConfig())
        with pytest.raises(ShapeError):
            model.extract_features(Tensor(np.zeros((2, 9, 5))))
        with pytest.raises(ShapeError):
            model.extract_features(Tensor(np.zeros((2, 11, 4))))

    def test_causality_of_features(self):
        model = DANNModel(ModelConfig(seed=3))
        x = np.random.default_rng(0).standard_normal((2, 11, 5))
        base = model.extract_features(Tensor(x)).data
        xp = x.copy()
        xp[:, 10, :] += 3.0
        out = model.extract_features(Tensor(xp)).data
        assert np.array_equal(out[:, :, :10], base[:, :, :10])

    def test_receptive_field_covers_window(self):
        # 4 blocks, k=2, dilations (1,2,4,8): field 1 + 2*(1+2+4+8) = 31 >= 11,
        # so every earlier timestep can reach every later output
        model = DANNModel(ModelConfig(seed=1))
        x = np.random.default_rng(1).standard_normal((1, 11, 5))
        base = model.extract_features(Tensor(x)).data
        for t in range(11):
            xp = x.copy()
            xp[:, t, :] += 10.0
            out = model.extract_features(Tensor(xp)).data
            assert np.abs(out[:, :, t:] - base[:, :, t:]).max() > 0.0


class TestGaussianRegressor:
    def _features(self, value=0.0):
        return Tensor(np.full((2, 40, 11), value))

    def test_zero_weights_softplus_default(self):
        reg = GaussianRegressor(40, np.random.default_rng(0))
        reg.dense.weight.data[:] = 0.0
        pred = reg.forward(self._features())
        assert np.allclose(pred.mu.data, 0.0)
        assert np.allclose(pred.sigma.data, math.log(2.0) + 1e-6)

    def test_bias_one_five(self):
        reg = GaussianRegressor(40, np.random.default_rng(0))
        reg.dense.weight.data[:] = 0.0
        reg.dense.bias.data = np.array([1.0, 5.0])
        pred = reg.forward(self._features())
        assert np.allclose(pred.mu.data, 1.0)
        assert np.allclose(pred.sigma.data, math.log1p(math.exp(5.0)) + 1e-6)

    def test_paper_strict_clamps_negatives(self):
        reg = GaussianRegressor(40, np.random.default_rng(0), sigma_link="relu")
        reg.dense.weight.data[:] = 0.0
        reg.dense.bias.data = np.array([-1.0, -1.0])
        pred = reg.forward(self._features())
        assert np.allclose(pred.mu.data, 0.0)
        assert np.allclose(pred.sigma.data, 1e-6)

    @pytest.mark.parametrize("link", ["softplus", "relu"])
    def test_sigma_always_positive(self, link):
        rng = np.random.default_rng(5)
        for seed in range(10):
            reg = GaussianRegressor(40, np.random.default_rng(seed), sigma_link=link)
            reg.dense.bias.data = rng.standard_normal(2) * 3
            pred = reg.forward(Tensor(rng.standard_normal((3, 40, 11))))
            assert (pred.sigma.data > 0).all()


class TestDiscriminator:
    def test_zero_weights_half_probability(self):
        model = DANNModel(ModelConfig())
        for p in model.discriminator.parameters():
            p.data[:] = 0.0
        prob = model.discriminate(Tensor(np.ones((3, 40, 11))), train=False)
        assert np.allclose(prob.data, 0.5)

    def test_output_in_unit_interval(self):
        model = DANNModel(ModelConfig(seed=2))
        f = model.extract_features(Tensor(np.random.default_rng(0).standard_normal((4, 11, 5))))
        prob = model.discriminate(f, train=True)
        assert ((prob.data > 0) & (prob.data < 1)).all()

    def test_train_mode_needs_two(self):
        model = DANNModel(ModelConfig())
        with pytest.raises(ContractError):
            model.discriminate(Tensor(np.ones((1, 40, 11))), train=True)

    def test_grl_gradient_contract(self):
        # extractor gradient of the domain loss is exactly -1 times the
        # gradient computed with the reversal replaced by identity
        model = DANNModel(small_cfg())
        x = Tensor(np.random.default_rng(3).standard_normal((4, 4, 2)))
        d = Tensor(np.array([[0.0], [1.0], [0.0], [1.0]]))

        def domain_grads(apply_grl):
            zero_grads(model.parameters())
            f = model.extract_features(x, train=True)
            loss = bce_loss(model.discriminate(f, train=True, apply_grl=apply_grl), d)
            backward(loss)
            return [p.grad.copy() for p in model.feature_parameters()]

        with_grl = domain_grads(True)
        without = domain_grads(False)
        for a, b in zip(with_grl, without):
            assert np.array_equal(a, -b)

    def test_discriminator_grads_unaffected_by_grl(self):
        model = DANNModel(small_cfg())
        x = Tensor(np.random.default_rng(4).standard_normal((4, 4, 2)))
        d = Tensor(np.array([[0.0], [1.0], [0.0], [1.0]]))

        def disc_grads(apply_grl):
            zero_grads(model.parameters())
            f = model.extract_features(x, train=True)
            loss = bce_loss(model.discriminate(f, train=True, apply_grl=apply_grl), d)
            backward(loss)
            return [p.grad.copy() for p in model.discriminator_parameters()]

        for a, b in zip(disc_grads(True), disc_grads(False)):
            assert np.array_equal(a, b)


class TestForwardTrain:
    def test_shape_contract(self):
        model = DANNModel(ModelConfig())
        pred, prob = model.forward_train(Tensor(np.random.default_rng(0).standard_normal((3, 11, 5))))
        assert pred.mu.shape == (3, 11)
        assert pred.sigma.shape == (3, 11)
        assert prob.shape == (3, 1)

    def test_feature_tensor_shared(self):
        model = DANNModel(small_cfg())
        x = Tensor(np.random.default_rng(1).standard_normal((2, 4, 2)))
        features = model.extract_features(x, train=True)
        pred = model.regress(features)
        prob = model.discriminate(features, train=True)
        # walk both branch graphs back to the shared feature node
        def reaches(tensor, target):
            stack, seen = [tensor], set()
            while stack:
                node = stack.pop()
                if node is target:
                    return True
                if id(node) in seen or node.node is None:
                    continue
                seen.add(id(node))
                stack.extend(node.node.parents)
            return False

        assert reaches(pred.mu, features)
        assert reaches(prob, features)

    def test_full_model_gradcheck(self):
        model = DANNModel(small_cfg())
        rng = np.random.default_rng(7)
        for p in model.parameters():
            if np.all(p.data == 0.0):
                p.data = rng.uniform(-0.4, 0.4, p.data.shape)
        x = Tensor(rng.standard_normal((4, 4, 2)))
        y = Tensor(rng.standard_normal((4, 4)))
        d = Tensor(np.array([[0.0], [1.0], [0.0], [1.0]]))

        def loss_fn():
            f = model.extract_features(x, train=True)
            return gaussian_nll(model.regress(f), y) \
                + bce_loss(model.discriminate(f, train=False, apply_grl=False), d)

        assert finite_difference_check(loss_fn, model.parameters()) < 1e-5


class TestStripDiscriminator:
    def test_predictions_bit_identical(self):
        model = DANNModel(ModelConfig(seed=4))
        x = Tensor(np.random.default_rng(2).standard_normal((3, 11, 5)))
        with no_grad():
            before = model.regress(model.extract_features(x))
            stripped = strip_discriminator(model)
            after = stripped.predict(x)
        assert np.array_equal(before.mu.data, after.mu.data)
        assert np.array_equal(before.sigma.data, after.sigma.data)

    def test_param_count_drop(self):
        model = DANNModel(ModelConfig())
        stripped = strip_discriminator(model)
        assert param_count(model) - param_count(stripped) == 28417

    def test_accepts_batch_of_one(self):
        stripped = strip_discriminator(DANNModel(ModelConfig()))
        pred = stripped.predict(Tensor(np.zeros((1, 11, 5))))
        assert pred.mu.shape == (1, 11)


class TestDeterminismAndInit:
    def test_eval_forward_bit_identical(self):
        model = DANNModel(ModelConfig(seed=9))
        x = Tensor(np.random.default_rng(5).standard_normal((2, 11, 5)))
        with no_grad():
            a = model.predict(x)
            b = model.predict(x)
        assert np.array_equal(a.mu.data, b.mu.data)

    def test_same_seed_same_init(self):
        a = DANNModel(ModelConfig(seed=11))
        b = DANNModel(ModelConfig(seed=11))
        for (na, pa), (nb, pb) in zip(a.named_parameters(), b.named_parameters()):
            assert na == nb
            assert np.array_equal(pa.data, pb.data)

    def test_regression_model_shares_backbone_init_with_dann(self):
        dann = DANNModel(ModelConfig(seed=13))
        reg = RegressionModel(ModelConfig(seed=13))
        for (na, pa), (nb, pb) in zip(reg.named_parameters(), dann.named_parameters()):
            assert na == nb
            assert np.array_equal(pa.data, pb.data)

    def test_mlp_backbone_rejected_for_dann(self):
        with pytest.raises(ContractError):
            DANNModel(ModelConfig(backbone="mlp"))

    def test_unknown_backbone_rejected(self):
        with pytest.raises(ContractError):
            ModelConfig(backbone="gru")
