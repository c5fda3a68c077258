"""
Small differentiable binary classifiers trained from scratch.

Two architectures are supported: ``logistic`` (a single dense layer) and
``mlp`` (ReLU hidden layers followed by one output unit).  Both end in a
sigmoid and are trained with a class-weighted binary cross-entropy, with an
optional proximal penalty ``(mu / 2) * ||params - anchor||**2`` used by
FedProx clients.

The optimizer is classical SGD with momentum and L2 weight decay added to the
gradient.  The learning rate at global epoch ``e`` is
``lr0 * 0.5 ** floor(e / halve_every)``.  Gradients are computed analytically;
the tests compare them with central finite differences.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import TYPE_CHECKING, Optional, Union

import numpy as np
from scipy.special import expit

from config import defaults
from errors import ConfigError, CongruenceError
from param_core import LayerTensor, ParameterSet, RngStream, axpy, l2_distance, new_zeroed, require_congruent

if TYPE_CHECKING:
    from data import DatasetSplit

logger = logging.getLogger(__name__)

ARCHS = ("logistic", "mlp")
ACTIVATIONS = ("relu",)
PROB_EPS = 1e-12
OUTPUT_LAYER_ID = "out"

Batch = Union["DatasetSplit", tuple[np.ndarray, np.ndarray]]


@dataclass(frozen=True)
class ModelSpec:
    arch: str
    input_dim: int
    hidden_dims: tuple[int, ...] = ()
    activation: str = "relu"

    def __post_init__(self) -> None:
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.arch not in ARCHS:
            raise ConfigError(f"invalid_arch: {self.arch!r} not in {ARCHS}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"invalid_activation: {self.activation!r}")
        if int(self.input_dim) < 1:
            raise ConfigError(f"invalid_input_dim: {self.input_dim}")
        if self.arch == "logistic" and self.hidden_dims:
            raise ConfigError("invalid_hidden_dims: logistic takes no hidden layers")
        if self.arch == "mlp" and not self.hidden_dims:
            raise ConfigError("invalid_hidden_dims: mlp needs at least one hidden layer")
        if any(h < 1 for h in self.hidden_dims):
            raise ConfigError(f"invalid_hidden_dims: {self.hidden_dims}")

    def dense_shapes(self) -> list[tuple[str, int, int]]:
        """Return ``(layer_id, fan_out, fan_in)`` for each dense layer in order."""
        shapes = []
        fan_in = int(self.input_dim)
        for index, width in enumerate(self.hidden_dims):
            shapes.append((f"hidden{index}", width, fan_in))
            fan_in = width
        shapes.append((OUTPUT_LAYER_ID, 1, fan_in))
        return shapes


@dataclass(frozen=True)
class LossConfig:
    class_weights: tuple[float, float] = (1.0, 1.0)
    prox_mu: float = 0.0

    def __post_init__(self) -> None:
        w_neg, w_pos = (float(w) for w in self.class_weights)
        if not (w_neg > 0 and w_pos > 0 and math.isfinite(w_neg) and math.isfinite(w_pos)):
            raise ConfigError(f"invalid_class_weights: {self.class_weights}")
        if not (self.prox_mu >= 0 and math.isfinite(self.prox_mu)):
            raise ConfigError(f"invalid_prox_mu: {self.prox_mu}")
        object.__setattr__(self, "class_weights", (w_neg, w_pos))


@dataclass(frozen=True)
class OptimizerState:
    lr0: float
    momentum: float
    weight_decay: float
    halve_every: int
    velocity: ParameterSet

    def __post_init__(self) -> None:
        if self.lr0 < 0 or not 0 <= self.momentum < 1 or self.weight_decay < 0:
            raise ConfigError(
                f"invalid_optimizer: lr0={self.lr0} momentum={self.momentum} weight_decay={self.weight_decay}"
            )
        if self.halve_every < 1:
            raise ConfigError(f"invalid_halve_every: {self.halve_every}")

    @classmethod
    def fresh(
        cls,
        template: ParameterSet,
        *,
        lr0: float = defaults.LR0,
        momentum: float = defaults.MOMENTUM,
        weight_decay: float = defaults.WEIGHT_DECAY,
        halve_every: int = defaults.HALVE_EVERY,
    ) -> OptimizerState:
        return cls(lr0, momentum, weight_decay, halve_every, new_zeroed(template))

    def lr_at(self, global_epoch: int) -> float:
        return self.lr0 * 0.5 ** (global_epoch // self.halve_every)


def class_weights_for(labels: np.ndarray) -> tuple[float, float]:
    """Inverse class frequency, normalized so that ``w_neg + w_pos == 2``.

    Falls back to unit weights when one class is missing.
    """
    labels = np.asarray(labels)
    n = labels.size
    n_pos = int(np.count_nonzero(labels == 1))
    n_neg = n - n_pos
    if n_pos == 0 or n_neg == 0:
        return (1.0, 1.0)
    return (2.0 * n_pos / n, 2.0 * n_neg / n)


def init_params(spec: ModelSpec, rng: RngStream) -> ParameterSet:
    generator = rng.generator()
    layers = []
    for layer_id, fan_out, fan_in in spec.dense_shapes():
        bound = 1.0 / math.sqrt(fan_in)
        weights = generator.uniform(-bound, bound, size=(fan_out, fan_in))
        layers.append(LayerTensor(layer_id, "weight", (fan_out, fan_in), weights))
        layers.append(LayerTensor(layer_id, "bias", (fan_out,), np.zeros(fan_out)))
    return ParameterSet(tuple(layers))


def _dense_layers(params: ParameterSet) -> list[tuple[np.ndarray, np.ndarray]]:
    layers = params.layers
    if len(layers) % 2:
        raise ConfigError("unsupported_layout: expected weight/bias pairs")
    pairs = []
    for weight, bias in zip(layers[0::2], layers[1::2]):
        if (
            weight.kind != "weight"
            or bias.kind != "bias"
            or weight.layer_id != bias.layer_id
            or len(weight.shape) != 2
            or bias.shape != (weight.shape[0],)
        ):
            raise ConfigError(f"unsupported_layout: {weight.signature} / {bias.signature}")
        pairs.append((weight.as_array(), bias.values))
    if pairs[-1][0].shape[0] != 1:
        raise ConfigError("unsupported_layout: output layer must have one unit")
    return pairs


def _as_xy(batch: Batch) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(batch, tuple):
        features, labels = batch
    else:
        features, labels = batch.features, batch.labels
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if features.ndim != 2 or labels.shape != (features.shape[0],):
        raise CongruenceError(f"dimension_mismatch: features {features.shape} labels {labels.shape}")
    return features, labels


def _forward_pass(
    layers: list[tuple[np.ndarray, np.ndarray]], features: np.ndarray
) -> tuple[list[np.ndarray], list[np.ndarray]]:
    if features.shape[1] != layers[0][0].shape[1]:
        raise CongruenceError(f"dimension_mismatch: input has {features.shape[1]} features, model expects {layers[0][0].shape[1]}")
    inputs = [features]
    pre_activations = []
    current = features
    last = len(layers) - 1
    for index, (weight, bias) in enumerate(layers):
        z = current @ weight.T + bias
        pre_activations.append(z)
        if index < last:
            current = np.maximum(z, 0.0)
            inputs.append(current)
    return inputs, pre_activations


def logits(params: ParameterSet, features: np.ndarray) -> np.ndarray:
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    _, pre_activations = _forward_pass(_dense_layers(params), features)
    return pre_activations[-1][:, 0]


def predict_proba(params: ParameterSet, features: np.ndarray) -> np.ndarray:
    return expit(logits(params, features))


def forward(params: ParameterSet, x: np.ndarray) -> float:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise CongruenceError(f"dimension_mismatch: expected a feature vector, got shape {x.shape}")
    return float(predict_proba(params, x[None, :])[0])


def predict_labels(params: ParameterSet, features: np.ndarray, threshold: float = defaults.F1_THRESHOLD) -> np.ndarray:
    return (predict_proba(params, features) >= threshold).astype(np.int64)


def _weighted_cross_entropy(p: np.ndarray, labels: np.ndarray, class_weights: tuple[float, float]) -> np.ndarray:
    w_neg, w_pos = class_weights
    clipped = np.clip(p, PROB_EPS, 1.0 - PROB_EPS)
    return -(w_pos * labels * np.log(clipped) + w_neg * (1.0 - labels) * np.log(1.0 - clipped))


def loss_and_grad(
    params: ParameterSet,
    batch: Batch,
    cfg: LossConfig,
    anchor: Optional[ParameterSet] = None,
) -> tuple[float, ParameterSet]:
    """Mean class-weighted BCE over the batch plus the optional proximal term."""
    features, labels = _as_xy(batch)
    n = labels.size
    if n == 0:
        raise ConfigError("empty_batch")
    if (anchor is not None) != (cfg.prox_mu > 0):
        raise ConfigError(f"invalid_anchor: anchor {'given' if anchor is not None else 'missing'} with prox_mu={cfg.prox_mu}")

    layers = _dense_layers(params)
    inputs, pre_activations = _forward_pass(layers, features)
    p = expit(pre_activations[-1][:, 0])
    loss = float(np.mean(_weighted_cross_entropy(p, labels, cfg.class_weights)))

    # The clamp is flat outside (eps, 1 - eps), so the gradient vanishes there.
    w_neg, w_pos = cfg.class_weights
    active = (p > PROB_EPS) & (p < 1.0 - PROB_EPS)
    delta = ((w_neg * (1.0 - labels) * p - w_pos * labels * (1.0 - p)) * active / n)[:, None]

    grads: list[np.ndarray] = [np.empty(0)] * (2 * len(layers))
    for index in range(len(layers) - 1, -1, -1):
        weight, _ = layers[index]
        grads[2 * index] = delta.T @ inputs[index]
        grads[2 * index + 1] = delta.sum(axis=0)
        if index > 0:
            delta = (delta @ weight) * (pre_activations[index - 1] > 0)
    grad = params.with_layer_values(grads)

    if anchor is not None:
        require_congruent(params, anchor)
        distance = l2_distance(params, anchor)
        loss += 0.5 * cfg.prox_mu * distance * distance
        grad = axpy(grad, cfg.prox_mu, axpy(params, -1.0, anchor))
    return loss, grad


def sgd_step(
    params: ParameterSet, grad: ParameterSet, opt: OptimizerState, global_epoch: int
) -> tuple[ParameterSet, OptimizerState]:
    lr = opt.lr_at(global_epoch)
    decayed = axpy(grad, opt.weight_decay, params)
    velocity = axpy(decayed, opt.momentum, opt.velocity)
    return axpy(params, -lr, velocity), replace(opt, velocity=velocity)


def local_train_epoch(
    params: ParameterSet,
    split: Batch,
    cfg: LossConfig,
    opt: OptimizerState,
    global_epoch: int,
    batch_size: int,
    rng: RngStream,
    anchor: Optional[ParameterSet] = None,
) -> tuple[ParameterSet, float, OptimizerState]:
    """One shuffled pass over ``split``; returns params, mean batch loss and optimizer."""
    features, labels = _as_xy(split)
    n = labels.size
    if n == 0:
        raise ConfigError("empty_split")
    if batch_size < 1:
        raise ConfigError(f"invalid_batch_size: {batch_size}")
    order = rng.generator().permutation(n)
    losses = []
    for start in range(0, n, batch_size):
        index = order[start : start + batch_size]
        loss, grad = loss_and_grad(params, (features[index], labels[index]), cfg, anchor)
        params, opt = sgd_step(params, grad, opt, global_epoch)
        losses.append(loss)
    mean_loss = float(np.mean(losses))
    logger.debug("LOCAL_EPOCH_DONE epoch=%s batches=%s mean_loss=%.6f", global_epoch, len(losses), mean_loss)
    return params, mean_loss, opt


def eval_loss(params: ParameterSet, split: Batch, cfg: LossConfig) -> float:
    """Summed (not averaged) class-weighted cross-entropy without the proximal term."""
    features, labels = _as_xy(split)
    if labels.size == 0:
        raise ConfigError("empty_split")
    p = predict_proba(params, features)
    return float(np.sum(_weighted_cross_entropy(p, labels, cfg.class_weights)))
