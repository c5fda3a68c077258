import math
import unittest

import numpy as np

import models
import param_core
from data import DatasetSplit
from errors import ConfigError, CongruenceError
from models import LossConfig, ModelSpec, OptimizerState
from param_core import LayerTensor, ParameterSet, RngStream


def _logistic(weights, bias=0.0) -> ParameterSet:
    weights = np.asarray(weights, dtype=np.float64)
    return ParameterSet(
        (
            LayerTensor("out", "weight", (1, weights.size), weights),
            LayerTensor("out", "bias", (1,), [bias]),
        )
    )


def _numeric_grad(params: ParameterSet, batch, cfg: LossConfig, anchor, h: float = 1e-5) -> np.ndarray:
    vector = param_core.flatten_to_vector(params)
    grad = np.zeros_like(vector)
    for k in range(vector.size):
        plus, minus = vector.copy(), vector.copy()
        plus[k] += h
        minus[k] -= h
        loss_plus, _ = models.loss_and_grad(param_core.unflatten(params, plus), batch, cfg, anchor)
        loss_minus, _ = models.loss_and_grad(param_core.unflatten(params, minus), batch, cfg, anchor)
        grad[k] = (loss_plus - loss_minus) / (2 * h)
    return grad


class InitTest(unittest.TestCase):
    def test_logistic_shapes_and_zero_bias(self) -> None:
        params = models.init_params(ModelSpec("logistic", 3), RngStream(0, purpose="init"))
        self.assertEqual(params.signature, (("out", "weight", (1, 3)), ("out", "bias", (1,))))
        np.testing.assert_array_equal(params.layer("out", "bias").values, [0.0])

    def test_mlp_shapes(self) -> None:
        params = models.init_params(ModelSpec("mlp", 4, (8,)), RngStream(0, purpose="init"))
        self.assertEqual([layer.shape for layer in params], [(8, 4), (8,), (1, 8), (1,)])

    def test_same_seed_same_params(self) -> None:
        spec = ModelSpec("mlp", 5, (6, 3))
        a = models.init_params(spec, RngStream(9, purpose="init"))
        b = models.init_params(spec, RngStream(9, purpose="init"))
        self.assertTrue(a.bit_equal(b))

    def test_invalid_specs(self) -> None:
        with self.assertRaises(ConfigError):
            ModelSpec("logistic", 3, (4,))
        with self.assertRaises(ConfigError):
            ModelSpec("mlp", 3)
        with self.assertRaises(ConfigError):
            ModelSpec("cnn", 3)


class ForwardTest(unittest.TestCase):
    def test_zero_params_give_one_half(self) -> None:
        params = param_core.new_zeroed(models.init_params(ModelSpec("mlp", 3, (4,)), RngStream(0)))
        self.assertEqual(models.forward(params, np.array([1.0, -2.0, 3.0])), 0.5)

    def test_orthogonal_input(self) -> None:
        self.assertEqual(models.forward(_logistic([1.0, 0.0]), np.array([0.0, 5.0])), 0.5)

    def test_sigmoid_value(self) -> None:
        self.assertAlmostEqual(models.forward(_logistic([2.0]), np.array([1.0])), 0.8807970779778823, places=12)

    def test_dimension_mismatch(self) -> None:
        with self.assertRaises(CongruenceError):
            models.forward(_logistic([1.0, 2.0]), np.array([1.0, 2.0, 3.0]))


class LossTest(unittest.TestCase):
    def test_single_positive_at_one_half(self) -> None:
        loss, _ = models.loss_and_grad(_logistic([0.0]), (np.array([[1.0]]), np.array([1])), LossConfig())
        self.assertAlmostEqual(loss, math.log(2), places=12)

    def test_proximal_term_vanishes_at_anchor(self) -> None:
        params = _logistic([0.3, -0.2], 0.1)
        batch = (np.array([[1.0, 2.0], [0.5, -1.0]]), np.array([1, 0]))
        plain_loss, plain_grad = models.loss_and_grad(params, batch, LossConfig())
        prox_loss, prox_grad = models.loss_and_grad(params, batch, LossConfig(prox_mu=0.5), anchor=params)
        self.assertEqual(plain_loss, prox_loss)
        np.testing.assert_array_equal(
            param_core.flatten_to_vector(plain_grad), param_core.flatten_to_vector(prox_grad)
        )

    def test_anchor_requires_positive_mu(self) -> None:
        params = _logistic([0.0])
        batch = (np.array([[1.0]]), np.array([1]))
        with self.assertRaises(ConfigError):
            models.loss_and_grad(params, batch, LossConfig(), anchor=params)
        with self.assertRaises(ConfigError):
            models.loss_and_grad(params, batch, LossConfig(prox_mu=0.1))

    def test_gradients_match_finite_differences(self) -> None:
        generator = np.random.default_rng(2024)
        specs = [ModelSpec("logistic", 4), ModelSpec("mlp", 4, (5,))]
        for instance in range(100):
            spec = specs[instance % 2]
            mu = (0.0, 0.01, 0.5)[instance % 3]
            params = models.init_params(spec, RngStream(instance, purpose="init"))
            n = int(generator.integers(2, 12))
            batch = (generator.normal(size=(n, 4)), generator.integers(0, 2, size=n))
            weights = tuple(generator.uniform(0.2, 1.8, size=2))
            anchor = None
            if mu > 0:
                anchor = models.init_params(spec, RngStream(instance + 1000, purpose="init"))
            cfg = LossConfig(weights, mu)
            _, grad = models.loss_and_grad(params, batch, cfg, anchor)
            np.testing.assert_allclose(
                param_core.flatten_to_vector(grad),
                _numeric_grad(params, batch, cfg, anchor),
                rtol=1e-5,
                atol=1e-8,
                err_msg=f"instance={instance} arch={spec.arch} mu={mu}",
            )

    def test_proximal_gradient_adds_mu_times_offset(self) -> None:
        generator = np.random.default_rng(17)
        spec = ModelSpec("mlp", 3, (4,))
        for instance in range(20):
            params = models.init_params(spec, RngStream(instance, purpose="init"))
            anchor = models.init_params(spec, RngStream(instance + 500, purpose="init"))
            batch = (generator.normal(size=(6, 3)), generator.integers(0, 2, size=6))
            mu = float(generator.uniform(0.001, 1.0))
            _, plain = models.loss_and_grad(params, batch, LossConfig((0.8, 1.2)))
            _, prox = models.loss_and_grad(params, batch, LossConfig((0.8, 1.2), mu), anchor)
            offset = mu * (param_core.flatten_to_vector(params) - param_core.flatten_to_vector(anchor))
            np.testing.assert_allclose(
                param_core.flatten_to_vector(prox) - param_core.flatten_to_vector(plain),
                offset,
                rtol=0,
                atol=1e-10,
                err_msg=f"instance={instance}",
            )

    def test_weighted_loss_is_symmetric_under_label_swap(self) -> None:
        generator = np.random.default_rng(23)
        for instance in range(20):
            weights = generator.normal(size=3)
            bias = float(generator.normal())
            features = generator.normal(size=(9, 3))
            labels = generator.integers(0, 2, size=9)
            w_neg, w_pos = generator.uniform(0.2, 1.8, size=2)
            loss, _ = models.loss_and_grad(_logistic(weights, bias), (features, labels), LossConfig((w_neg, w_pos)))
            swapped, _ = models.loss_and_grad(
                _logistic(-weights, -bias), (features, 1 - labels), LossConfig((w_pos, w_neg))
            )
            self.assertAlmostEqual(loss, swapped, delta=1e-12, msg=f"instance={instance}")

    def test_class_weights(self) -> None:
        self.assertEqual(models.class_weights_for(np.array([1, 0, 0, 0])), (0.5, 1.5))
        self.assertEqual(models.class_weights_for(np.array([1, 1])), (1.0, 1.0))


class OptimizerTest(unittest.TestCase):
    def test_plain_sgd_step(self) -> None:
        params = _logistic([1.0])
        grad = _logistic([2.0])
        opt = OptimizerState.fresh(params, lr0=0.1, momentum=0.0, weight_decay=0.0)
        updated, _ = models.sgd_step(params, grad, opt, 0)
        self.assertAlmostEqual(updated.layer("out", "weight").values[0], 0.8, places=15)

    def test_zero_gradient_is_a_fixed_point(self) -> None:
        params = _logistic([1.5, -0.5], 0.25)
        opt = OptimizerState.fresh(params, weight_decay=0.0)
        updated, _ = models.sgd_step(params, param_core.new_zeroed(params), opt, 3)
        self.assertTrue(updated.bit_equal(params))

    def test_lr_schedule(self) -> None:
        opt = OptimizerState.fresh(_logistic([0.0]), lr0=0.1, halve_every=2)
        self.assertEqual([opt.lr_at(epoch) for epoch in range(5)], [0.1, 0.1, 0.05, 0.05, 0.025])

    def test_momentum_accumulates_velocity(self) -> None:
        params = _logistic([0.0])
        grad = _logistic([1.0])
        opt = OptimizerState.fresh(params, lr0=1.0, momentum=0.5, weight_decay=0.0)
        params, opt = models.sgd_step(params, grad, opt, 0)
        params, opt = models.sgd_step(params, grad, opt, 0)
        self.assertEqual(opt.velocity.layer("out", "weight").values[0], 1.5)
        self.assertEqual(params.layer("out", "weight").values[0], -2.5)


class TrainingTest(unittest.TestCase):
    def setUp(self) -> None:
        generator = np.random.default_rng(5)
        labels = np.arange(40) % 2
        margin = 1.0 + np.abs(generator.normal(size=40))
        features = np.column_stack([np.where(labels == 1, margin, -margin), 0.1 * generator.normal(size=40)])
        self.split = DatasetSplit(features, labels)
        self.params = models.init_params(ModelSpec("logistic", 2), RngStream(0, purpose="init"))

    def test_full_batch_is_one_step(self) -> None:
        cfg = LossConfig()
        opt = OptimizerState.fresh(self.params)
        trained, loss, _ = models.local_train_epoch(self.params, self.split, cfg, opt, 0, 100, RngStream(1))
        expected_loss, grad = models.loss_and_grad(self.params, self.split, cfg)
        expected, _ = models.sgd_step(self.params, grad, opt, 0)
        np.testing.assert_allclose(
            param_core.flatten_to_vector(trained), param_core.flatten_to_vector(expected), rtol=1e-12, atol=1e-14
        )
        self.assertAlmostEqual(loss, expected_loss, places=12)

    def test_zero_learning_rate_leaves_params_unchanged(self) -> None:
        cfg = LossConfig()
        opt = OptimizerState.fresh(self.params, lr0=0.0)
        trained, loss, _ = models.local_train_epoch(self.params, self.split, cfg, opt, 0, 100, RngStream(1))
        self.assertTrue(trained.bit_equal(self.params))
        self.assertAlmostEqual(loss, models.eval_loss(self.params, self.split, cfg) / len(self.split), places=12)

    def test_training_is_deterministic(self) -> None:
        cfg = LossConfig()
        runs = []
        for _ in range(2):
            opt = OptimizerState.fresh(self.params)
            trained, _, _ = models.local_train_epoch(self.params, self.split, cfg, opt, 0, 8, RngStream(3))
            runs.append(trained)
        self.assertTrue(runs[0].bit_equal(runs[1]))

    def test_separable_data_is_learned(self) -> None:
        cfg = LossConfig()
        params = self.params
        opt = OptimizerState.fresh(params, weight_decay=0.0)
        for epoch in range(20):
            params, _, opt = models.local_train_epoch(
                params, self.split, cfg, opt, epoch, 8, RngStream(0, round_index=epoch, purpose="shuffle")
            )
        accuracy = np.mean(models.predict_labels(params, self.split.features) == self.split.labels)
        self.assertGreaterEqual(accuracy, 0.99)


class EvalLossTest(unittest.TestCase):
    def test_zero_params_balanced_split(self) -> None:
        params = param_core.new_zeroed(models.init_params(ModelSpec("logistic", 2), RngStream(0)))
        split = DatasetSplit(np.ones((6, 2)), np.array([0, 1, 0, 1, 0, 1]))
        self.assertAlmostEqual(models.eval_loss(params, split, LossConfig()), 6 * math.log(2), places=12)

    def test_perfect_classifier_is_near_zero(self) -> None:
        params = _logistic([100.0])
        split = DatasetSplit(np.array([[1.0], [-1.0]]), np.array([1, 0]))
        self.assertLessEqual(models.eval_loss(params, split, LossConfig()), 2 * 1e-11)

    def test_matches_per_sample_recomputation(self) -> None:
        generator = np.random.default_rng(8)
        params = models.init_params(ModelSpec("mlp", 3, (4,)), RngStream(1, purpose="init"))
        split = DatasetSplit(generator.normal(size=(25, 3)), generator.integers(0, 2, size=25))
        weights = (0.7, 1.3)
        expected = 0.0
        for x, y in zip(split.features, split.labels):
            p = min(max(models.forward(params, x), 1e-12), 1 - 1e-12)
            expected -= weights[1] * y * math.log(p) + weights[0] * (1 - y) * math.log(1 - p)
        self.assertAlmostEqual(models.eval_loss(params, split, LossConfig(weights)), expected, delta=1e-10)


if __name__ == "__main__":
    unittest.main()
