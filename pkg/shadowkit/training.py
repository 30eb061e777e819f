"""Minibatch SGD training and finite-difference gradient verification."""

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .cnn import CnnModel, PARAM_ORDER, batch_loss_and_grads, forward, forward_cached
from .errors import ConfigError, DatasetError, TrainingDivergedError


GRAD_FLOOR = 1e-4  # denominator floor for relative errors of near-zero gradients


@dataclass
class TrainConfig:
    """SGD settings. The learning rate decays by ``lr_decay`` after every epoch."""
    learning_rate: float = 0.05
    epochs: int = 200
    batch_size: int = 16
    seed: int = 0
    init_scale: float = 1.0
    lr_decay: float = 0.95

    def __post_init__(self):
        # 0 is accepted here as a frozen run; the CLI config requires > 0
        if not self.learning_rate >= 0:
            raise ConfigError('learning rate must be non-negative', key='learning_rate')
        if self.epochs < 1:
            raise ConfigError('epoch count must be at least 1', key='epochs')
        if self.batch_size < 1:
            raise ConfigError('minibatch size must be at least 1', key='batch_size')
        if not 0 < self.lr_decay <= 1:
            raise ConfigError('lr_decay must be in (0, 1]', key='lr_decay')
        if self.init_scale < 0:
            raise ConfigError('init_scale must be non-negative', key='init_scale')


def _stack(samples: list, units: int) -> tuple:
    if not samples:
        raise DatasetError('no training samples')
    x = np.stack([np.asarray(s.x, dtype=np.float64) for s in samples])
    y = np.stack([np.asarray(s.y, dtype=np.float64).reshape(-1) for s in samples])
    if y.shape[1] != units:
        raise DatasetError(f'labels have {y.shape[1]} cells, model predicts {units}')
    return x, y


def sgd_train(model: CnnModel, samples: list, config: TrainConfig,
              verbose: bool = False) -> tuple:
    """Train a copy of ``model`` on pre-normalized samples.

    Returns (trained model, per-epoch mean loss). The shuffle stream is seeded
    from ``config.seed``, so identical inputs give bit-identical weights.
    """
    x, y = _stack(samples, model.units)
    trained = model.copy()
    trained.seed = config.seed
    rng = np.random.default_rng([config.seed, 1])
    n = len(samples)
    curve = []

    for epoch in range(config.epochs):
        lr = config.learning_rate * config.lr_decay ** epoch
        order = rng.permutation(n)
        total = 0.0
        for batch, start in enumerate(range(0, n, config.batch_size)):
            idx = order[start:start + config.batch_size]
            loss, grads, _ = batch_loss_and_grads(trained, x[idx], y[idx])
            if not math.isfinite(loss):
                raise TrainingDivergedError(epoch + 1, batch + 1, loss)
            total += loss
            step = lr / len(idx)
            for name in PARAM_ORDER:
                trained.params[name] -= step * grads[name]
        curve.append(total / n)
        if verbose:
            print(f"  epoch {epoch + 1}/{config.epochs}  loss={curve[-1]:.5f}  lr={lr:.4g}")

    return trained, curve


def cell_accuracy(model: CnnModel, samples: list, threshold: float = 0.5) -> float:
    """Fraction of label cells predicted correctly at ``threshold``."""
    x, y = _stack(samples, model.units)
    probs = forward(model, x)
    return float(np.mean((probs >= threshold) == (y > 0.5)))


# ============================================================
#  GRADIENT CHECK
# ============================================================

def _default_gradients(model: CnnModel, x: np.ndarray, y: np.ndarray) -> tuple:
    loss, grads, _ = batch_loss_and_grads(model, x, y)
    return loss, grads


def _loss_and_routes(model: CnnModel, x: np.ndarray, y: np.ndarray) -> tuple:
    probs, cache = forward_cached(model, x)
    probs = np.clip(probs, 1e-12, 1 - 1e-12)
    loss = float(-np.sum(y * np.log(probs) + (1.0 - y) * np.log(1.0 - probs)))
    return loss, (cache['arg1'], cache['arg2'])


def _same_routes(a: tuple, b: tuple) -> bool:
    return all(np.array_equal(u, v) for u, v in zip(a, b))


def grad_check(model: CnnModel, sample, eps: float = 1e-5, n_coords: int = 200,
               seed: int = 0, gradient_fn: Optional[Callable] = None) -> float:
    """Max relative error between analytic and central-difference gradients.

    Coordinates are drawn from every parameter tensor (at least
    ``n_coords / 8`` each, or all of a small tensor), topped up from the dense
    weights to reach ``n_coords``. A perturbation that changes a pooling argmax has
    crossed a kink of the max and is replaced by another coordinate.
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ConfigError('eps must lie in [1e-7, 1e-3]', key='eps')
    gradient_fn = gradient_fn or _default_gradients
    x = np.asarray(sample.x, dtype=np.float64)[None]
    y = np.asarray(sample.y, dtype=np.float64).reshape(1, -1)

    _, analytic = gradient_fn(model, x, y)
    _, base_routes = _loss_and_routes(model, x, y)

    quota = math.ceil(n_coords / len(PARAM_ORDER))
    targets = {name: min(model.params[name].size, quota) for name in PARAM_ORDER}
    targets['dense.w'] += max(0, n_coords - sum(targets.values()))

    rng = np.random.default_rng(seed)
    perturbed = model.copy()
    worst = 0.0
    for name in PARAM_ORDER:
        flat = perturbed.params[name].reshape(-1)
        grad = np.asarray(analytic[name]).reshape(-1)
        checked = 0
        for idx in rng.permutation(flat.size):
            if checked >= targets[name]:
                break
            original = flat[idx]
            flat[idx] = original + eps
            loss_plus, routes_plus = _loss_and_routes(perturbed, x, y)
            flat[idx] = original - eps
            loss_minus, routes_minus = _loss_and_routes(perturbed, x, y)
            flat[idx] = original
            if not (_same_routes(routes_plus, base_routes) and _same_routes(routes_minus, base_routes)):
                continue
            numeric = (loss_plus - loss_minus) / (2.0 * eps)
            err = abs(grad[idx] - numeric) / max(abs(grad[idx]) + abs(numeric), GRAD_FLOOR)
            worst = max(worst, err)
            checked += 1
    return worst
