"""
Trainer

Mini-batch SGD with classical momentum over a model-graph model:

    v <- momentum * v + g
    w <- w - lr * v

Defaults are the published training setup (lr 0.01, momentum 0.9, 50
epochs, batch 64, constant learning rate, mean cross-entropy). Shuffling is
seeded, so a run is a pure function of (model, data, config). The weights of
the epoch with the best validation accuracy are kept at the end.

Usage:
    from src.trainer import TrainConfig, train

    report = train(model, splits, TrainConfig(epochs=20, seed=7))
"""

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd

from .complexity import ConstraintSpec, analyze, check_constraints
from .dataset import DatasetSplits, SplitData
from .errors import DatasetError, ShapeError, TrainingError
from .layers.base import Grads, Mode
from .model_graph import Model, model_backward, model_forward, model_loss, predict
from .quantizer import stored_weight_bits
from .serialization import save_model
from .settings import DEFAULT_HYPERPARAMS
from .tensor import Precision, Rng

logger = logging.getLogger(__name__)

STD_FLOOR = 1e-8


# =============================================================================
# OPTIMIZER
# =============================================================================

@dataclass
class SgdState:
    """
    Attributes:
        velocity: One zero-initialized array per registered parameter
        lr: Learning rate
        momentum: Velocity decay
    """
    velocity: Dict[str, np.ndarray]
    lr: float = DEFAULT_HYPERPARAMS.learning_rate
    momentum: float = DEFAULT_HYPERPARAMS.momentum

    @classmethod
    def zeros_like(cls, params: Dict[str, np.ndarray], lr: float = DEFAULT_HYPERPARAMS.learning_rate,
                   momentum: float = DEFAULT_HYPERPARAMS.momentum) -> 'SgdState':
        return cls({k: np.zeros_like(v) for k, v in params.items()}, lr, momentum)


def sgd_momentum_step(params: Dict[str, np.ndarray], grads: Grads,
                      state: SgdState) -> Tuple[Dict[str, np.ndarray], SgdState]:
    """In-place classical momentum update of every parameter."""
    if set(params) != set(grads) or set(params) != set(state.velocity):
        raise ShapeError(
            f"Registry mismatch: params={len(params)}, grads={len(grads)}, velocity={len(state.velocity)}"
        )
    for name, w in params.items():
        g, v = grads[name], state.velocity[name]
        if g.shape != w.shape or v.shape != w.shape:
            raise ShapeError(f"{name}: param {w.shape}, grad {g.shape}, velocity {v.shape}")
        v *= state.momentum
        v += g
        w -= state.lr * v
    return params, state


# =============================================================================
# CONFIG AND REPORT
# =============================================================================

@dataclass
class TrainConfig:
    epochs: int = DEFAULT_HYPERPARAMS.epochs
    batch_size: int = DEFAULT_HYPERPARAMS.batch_size
    learning_rate: float = DEFAULT_HYPERPARAMS.learning_rate
    momentum: float = DEFAULT_HYPERPARAMS.momentum
    seed: int = 0
    checkpoint_dir: Optional[Path] = None
    fit_input_norm: bool = True

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate <= 0 or not 0 <= self.momentum < 1:
            raise ValueError(f"Need lr > 0 and momentum in [0, 1), got {self.learning_rate}, {self.momentum}")


@dataclass
class EpochMetrics:
    epoch: int
    train_loss: float
    train_acc: float
    val_acc: Optional[float]


@dataclass
class TrainReport:
    """
    Attributes:
        epochs: One row per completed epoch
        best_epoch: Epoch whose weights were kept (None if no validation data)
        best_val_acc: Its validation accuracy
        test_acc: Accuracy of the kept weights on the test split
        constraints: Deployment verdict for the trained model
        wall_time_s: Not part of equality or the metrics JSON
    """
    epochs: List[EpochMetrics] = field(default_factory=list)
    best_epoch: Optional[int] = None
    best_val_acc: Optional[float] = None
    test_acc: Optional[float] = None
    constraints: Dict = field(default_factory=dict)
    wall_time_s: float = field(default=0.0, compare=False)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [vars(e) for e in self.epochs], columns=['epoch', 'train_loss', 'train_acc', 'val_acc']
        )

    def to_dict(self) -> Dict:
        return {
            'epochs': [vars(e) for e in self.epochs],
            'best_epoch': self.best_epoch,
            'best_val_acc': self.best_val_acc,
            'test_acc': self.test_acc,
            'constraints': self.constraints,
        }

    def save(self, json_path: Union[str, Path], csv_path: Optional[Union[str, Path]] = None) -> None:
        json_path = Path(json_path)
        json_path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))
        self.to_frame().to_csv(csv_path or json_path.with_suffix('.csv'), index=False)


# =============================================================================
# TRAINING
# =============================================================================

def train_step(model: Model, x: np.ndarray, y: np.ndarray, state: SgdState) -> Tuple[float, np.ndarray]:
    """One forward/backward/update on a batch. Returns (loss before the update, probs)."""
    probs, caches = model_forward(model, x, Mode.TRAIN)
    loss = model_loss(probs, y)
    if not np.isfinite(loss):
        raise TrainingError(f"Non-finite loss {loss} on a batch of {len(y)}")
    grads = model_backward(model, caches, probs, y)
    sgd_momentum_step(model.params, grads, state)
    return loss, probs


def evaluate(model: Model, split: SplitData, batch_size: int = 256,
             precision: Precision = Precision.FLOAT64) -> float:
    """Argmax accuracy; ties go to the lowest class index. Never mutates the model."""
    if len(split) == 0:
        raise DatasetError("Cannot evaluate on an empty split")
    probs = predict(model, split.x, batch_size, precision)
    return float(np.mean(np.argmax(probs, axis=1) == split.y))


def fit_input_normalization(model: Model, x: np.ndarray) -> None:
    """Per-coefficient mean/std of the training features."""
    mean = x.mean(axis=(0, 1, 2))
    std = np.maximum(x.std(axis=(0, 1, 2)), STD_FLOOR)
    model.set_input_normalization(mean, std)


def _snapshot(model: Model) -> Tuple[Dict[str, np.ndarray], Dict[str, np.ndarray]]:
    return {k: v.copy() for k, v in model.params.items()}, {k: v.copy() for k, v in model.buffers.items()}


def _restore(model: Model, snapshot) -> None:
    params, buffers = snapshot
    for k, v in params.items():
        model.params[k][...] = v
    for k, v in buffers.items():
        model.buffers[k] = v


def train(model: Model, data: DatasetSplits, config: Optional[TrainConfig] = None,
          state: Optional[SgdState] = None) -> TrainReport:
    """
    Train in place.

    Raises:
        DatasetError: empty training split
        ShapeError: features do not match the model input
        TrainingError: non-finite loss
    """
    config = config or TrainConfig()
    report = TrainReport()
    if config.epochs == 0:
        return report

    train_split, val_split = data.train, data.val
    if len(train_split) == 0:
        raise DatasetError("Training split is empty")
    if tuple(train_split.x.shape[1:]) != model.input_shape[1:]:
        raise ShapeError(f"Features {train_split.x.shape[1:]} do not match model input {model.input_shape[1:]}")
    if len(val_split) == 0:
        logger.warning("[Trainer] Validation split is empty; keeping the last epoch's weights")

    if config.fit_input_norm:
        fit_input_normalization(model, train_split.x)
    state = state or SgdState.zeros_like(model.params, config.learning_rate, config.momentum)
    rng = Rng(config.seed)
    started = time.perf_counter()

    n = len(train_split)
    best = None
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        loss_sum, correct = 0.0, 0
        for step, start in enumerate(range(0, n, config.batch_size)):
            idx = order[start:start + config.batch_size]
            yb = train_split.y[idx]
            try:
                loss, probs = train_step(model, train_split.x[idx], yb, state)
            except TrainingError as e:
                raise TrainingError(f"Epoch {epoch}, step {step}: {e}") from e
            loss_sum += loss * len(idx)
            correct += int(np.sum(np.argmax(probs, axis=1) == yb))

        val_acc = evaluate(model, val_split) if len(val_split) else None
        metrics = EpochMetrics(epoch, loss_sum / n, correct / n, val_acc)
        report.epochs.append(metrics)
        logger.info(
            f"[Trainer] epoch {epoch}/{config.epochs} loss={metrics.train_loss:.4f} "
            f"train_acc={metrics.train_acc:.3f} val_acc={val_acc if val_acc is None else round(val_acc, 4)}"
        )

        if val_acc is not None and (report.best_val_acc is None or val_acc > report.best_val_acc):
            report.best_epoch, report.best_val_acc = epoch, val_acc
            best = _snapshot(model)

        if config.checkpoint_dir is not None:
            save_model(model, Path(config.checkpoint_dir) / f"epoch_{epoch:03d}.tspn")

    if best is not None:
        _restore(model, best)
        logger.info(f"[Trainer] Kept epoch {report.best_epoch} (val_acc={report.best_val_acc:.4f})")

    if len(data.test):
        report.test_acc = evaluate(model, data.test)

    # float weights until quantize; config.weight_bits is only the deployment target
    complexity = analyze(model.config, weight_bits=stored_weight_bits(model))
    verdict = check_constraints(
        complexity, report.best_val_acc,
        ConstraintSpec(micro_ops_only=model.config.micro_ops_only), model.config,
    )
    report.constraints = verdict.to_dict()
    report.wall_time_s = time.perf_counter() - started
    return report
