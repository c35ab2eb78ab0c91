"""Mini-batch training: L2 loss, RMSprop, stepped LR decay, early stopping."""
import csv
import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import DivergenceError, NonFiniteError, ShapeError
from .model import forward, predict_normalized

log = logging.getLogger(__name__)

LOG_HEADER = ["epoch", "train_loss", "val_rmse", "lr", "seconds"]


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    decay_factor: float = 0.7
    decay_every: int = 5
    batch_size: int = 50
    max_epochs: int = 300
    early_stop_patience: int = 10
    rmsprop_smoothing: float = 0.9
    rmsprop_epsilon: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.decay_factor <= 1:
            raise ValueError("decay_factor must lie in (0, 1]")
        for name in ("learning_rate", "decay_every", "batch_size", "max_epochs",
                     "early_stop_patience", "rmsprop_epsilon"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.rmsprop_smoothing < 1:
            raise ValueError("rmsprop_smoothing must lie in (0, 1)")

    def lr_at(self, epoch):
        """Learning rate used during 0-based ``epoch``."""
        return self.learning_rate * self.decay_factor ** (epoch // self.decay_every)

    def to_dict(self):
        return asdict(self)


@dataclass
class TrainState:
    epoch: int = 0
    accumulators: dict = field(default_factory=dict)
    best_val_rmse: float = float("inf")
    best_epoch: int = -1
    since_improvement: int = 0
    history: list = field(default_factory=list)
    stopped_early: bool = False


def l2_loss(pred, target):
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"l2_loss: shapes {pred.shape} and {target.shape} differ")
    return float(np.mean((pred - target) ** 2))


def rmsprop_step(params, grads, accumulators, lr, rho=0.9, eps=1e-8):
    """In-place RMSprop update of every array in ``params``."""
    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise NonFiniteError(f"non-finite gradient for parameter {name!r}")
    for name, g in grads.items():
        v = accumulators.get(name)
        if v is None:
            v = accumulators[name] = np.zeros_like(g)
        v *= rho
        v += (1.0 - rho) * g * g
        params[name] -= lr * g / (np.sqrt(v) + eps)


def batch_loss_and_grads(model, inputs, targets):
    tape = ad.Tape()
    leaves = {k: tape.leaf(v) for k, v in model.params.items()}
    loss = ad.mean_square(forward(model, inputs, tape, leaves), ad.Var(targets))
    tape.backward(loss)
    grads = {k: (v.grad if v.grad is not None else np.zeros_like(v.value)) for k, v in leaves.items()}
    return float(loss.value), grads


def validation_rmse(model, windows):
    """RMSE in km/h over every window and every predicted step."""
    pred = predict_normalized(model, windows.inputs())
    scale = model.normalizer.std
    return float(np.sqrt(np.mean((pred - windows.targets()) ** 2)) * scale)


def train(model, windows, config=None, log_path=None, checkpoint_path=None, on_epoch=None):
    """Train ``model`` in place on ``windows['train']``, early-stopping on ``windows['val']``.

    The model ends up holding the parameters of the best validation epoch.
    """
    from .model import save_checkpoint

    config = config or TrainConfig()
    train_w, val_w = windows["train"], windows["val"]
    if len(train_w) == 0 or len(val_w) == 0:
        raise ValueError("train and validation splits must both contain windows")
    if model.normalizer is None:
        raise ValueError("model needs the normalizer used to build the windows")
    rng = np.random.default_rng([config.seed, 1])
    state = TrainState()
    best = model.copy_params()
    log_fh = None
    if log_path is not None:
        log_fh = open(log_path, "w", newline="", encoding="utf-8")
        writer = csv.writer(log_fh, lineterminator="\n")
        writer.writerow(LOG_HEADER)
    try:
        for epoch in range(config.max_epochs):
            t0 = time.perf_counter()
            lr = config.lr_at(epoch)
            order = rng.permutation(len(train_w))
            total, count = 0.0, 0
            for a in range(0, len(order), config.batch_size):
                idx = order[a:a + config.batch_size]
                loss, grads = batch_loss_and_grads(model, train_w.inputs(idx), train_w.targets(idx))
                if not np.isfinite(loss):
                    model.set_params(best)
                    raise DivergenceError(f"loss became non-finite in epoch {epoch}", state)
                try:
                    rmsprop_step(model.params, grads, state.accumulators, lr,
                                 config.rmsprop_smoothing, config.rmsprop_epsilon)
                except NonFiniteError as exc:
                    model.set_params(best)
                    raise DivergenceError(f"epoch {epoch}: {exc}", state) from exc
                total += loss * len(idx)
                count += len(idx)
            val = validation_rmse(model, val_w)
            if not np.isfinite(val):
                model.set_params(best)
                raise DivergenceError(f"validation RMSE became non-finite in epoch {epoch}", state)
            state.epoch = epoch + 1
            row = {"epoch": epoch + 1, "train_loss": total / count, "val_rmse": val, "lr": lr,
                   "seconds": time.perf_counter() - t0}
            state.history.append(row)
            if log_fh is not None:
                writer.writerow([row["epoch"], repr(row["train_loss"]), repr(row["val_rmse"]),
                                 repr(row["lr"]), f"{row['seconds']:.3f}"])
                log_fh.flush()
            log.info("epoch %d loss %.5f val_rmse %.4f lr %.2e", epoch + 1, row["train_loss"], val, lr)
            if val < state.best_val_rmse:
                state.best_val_rmse = val
                state.best_epoch = epoch + 1
                state.since_improvement = 0
                best = model.copy_params()
                if checkpoint_path is not None:
                    save_checkpoint(model, checkpoint_path)
            else:
                state.since_improvement += 1
            if on_epoch is not None:
                on_epoch(state)
            if state.since_improvement >= config.early_stop_patience:
                state.stopped_early = True
                break
    finally:
        if log_fh is not None:
            log_fh.close()
    model.set_params(best)
    return state
