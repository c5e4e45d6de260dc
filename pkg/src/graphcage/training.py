"""Training loop: MAE + capsule L2 objective under RMSprop with global-norm
gradient clipping. Fixed seed gives bit-identical logs and checkpoints."""

from __future__ import annotations

import json
import os

import numpy as np

from .config import TrainConfig
from .data import Example, iter_batches, load_dataset
from .metrics import MetricsReport, compute_metrics
from .model import GraphCage
from .tensor import backward, global_grad_norm

RMSPROP_DECAY = 0.9
RMSPROP_EPS = 1e-8


class NaNLossError(RuntimeError):
    pass


class RMSprop:
    """Classic (non-centered) RMSprop over a parameter registry."""

    def __init__(self, registry, lr: float, decay: float = RMSPROP_DECAY,
                 eps: float = RMSPROP_EPS):
        self.registry = registry
        self.lr = lr
        self.decay = decay
        self.eps = eps
        self.state = {name: np.zeros_like(p.tensor.data)
                      for name, p in registry.items()}

    def step(self) -> None:
        for name, p in self.registry.items():
            if not p.trainable or p.tensor.grad is None:
                continue
            g = p.tensor.grad
            v = self.state[name]
            v *= self.decay
            v += (1.0 - self.decay) * g * g
            p.tensor.data -= self.lr * g / (np.sqrt(v) + self.eps)


def clip_global_norm(registry, threshold: float) -> float:
    """Scale all gradients so the global norm is at most ``threshold``."""
    norm = global_grad_norm(registry.tensors())
    if norm > threshold and norm > 0:
        factor = threshold / norm
        for t in registry.tensors():
            if t.grad is not None:
                t.grad *= factor
    return norm


def _check_finite(loss_value: float, model: GraphCage) -> None:
    if np.isfinite(loss_value):
        return
    culprit = "<none>"
    for name, p in model.parameters().items():
        if not np.all(np.isfinite(p.tensor.data)):
            culprit = name
            break
    raise NaNLossError(f"non-finite loss {loss_value}; first non-finite "
                       f"parameter: {culprit}")


def _split_loss(model: GraphCage, examples: list[Example],
                cfg: TrainConfig) -> tuple[float, float, float]:
    """Mean (total, mae, penalty) over a split, batched, no updates."""
    total_err = 0.0
    count = 0
    penalty = None
    for batch in iter_batches(examples, cfg.batch_size):
        _, mae, pen, _ = model.loss(batch, cfg.l2_lambda)
        total_err += mae.item() * batch.size
        count += batch.size
        penalty = pen.item()
    mae_mean = total_err / count
    return mae_mean + penalty, mae_mean, penalty


def train(cfg: TrainConfig, out_dir: str,
          model: GraphCage | None = None) -> dict:
    """Train, writing ``train_log.jsonl`` and ``checkpoint.gckp`` (best
    validation loss) into ``out_dir``. Returns a summary dict."""
    os.makedirs(out_dir, exist_ok=True)
    train_examples = load_dataset(cfg.train_path)
    val_examples = load_dataset(cfg.val_path) if cfg.val_path else []
    if model is None:
        model = GraphCage(cfg.model, seed=cfg.seed)
    _validate_dims(model, train_examples[0])

    optimizer = RMSprop(model.parameters(), lr=cfg.learning_rate)
    shuffle_rng = np.random.default_rng(cfg.seed + 1)
    log_path = os.path.join(out_dir, "train_log.jsonl")
    ckpt_path = os.path.join(out_dir, "checkpoint.gckp")
    best_val = np.inf
    history = []

    with open(log_path, "w", encoding="utf-8", newline="\n") as log:
        header = {"config": _config_dict(cfg),
                  "optimizer": {"name": "rmsprop", "decay": RMSPROP_DECAY,
                                "eps": RMSPROP_EPS}}
        log.write(json.dumps(header, sort_keys=True) + "\n")
        for epoch in range(1, cfg.epochs + 1):
            epoch_mae = 0.0
            epoch_penalty = 0.0
            seen = 0
            n_batches = 0
            for batch in iter_batches(train_examples, cfg.batch_size,
                                      shuffle_rng):
                model.parameters().zero_grads()
                total, mae, penalty, _ = model.loss(batch, cfg.l2_lambda)
                _check_finite(total.item(), model)
                backward(total)
                clip_global_norm(model.parameters(), cfg.grad_clip)
                optimizer.step()
                epoch_mae += mae.item() * batch.size
                epoch_penalty += penalty.item()
                seen += batch.size
                n_batches += 1
            train_mae = epoch_mae / seen
            train_penalty = epoch_penalty / n_batches
            entry = {"epoch": epoch,
                     "train_mae": train_mae,
                     "train_penalty": train_penalty,
                     "train_loss": train_mae + train_penalty}
            if val_examples:
                val_loss, val_mae, val_penalty = _split_loss(
                    model, val_examples, cfg)
                entry.update({"val_loss": val_loss, "val_mae": val_mae,
                              "val_penalty": val_penalty})
                if val_loss < best_val:
                    best_val = val_loss
                    model.save(ckpt_path, meta=model.checkpoint_meta(cfg.seed))
            log.write(json.dumps(entry, sort_keys=True) + "\n")
            history.append(entry)
    if not val_examples:
        model.save(ckpt_path, meta=model.checkpoint_meta(cfg.seed))
    return {"log_path": log_path, "checkpoint_path": ckpt_path,
            "best_val_loss": None if not val_examples else best_val,
            "history": history, "model": model}


def evaluate(model: GraphCage, examples: list[Example],
             batch_size: int = 32) -> MetricsReport:
    if not examples:
        raise ValueError("cannot evaluate an empty split")
    _validate_dims(model, examples[0])
    preds = []
    labels = []
    for batch in iter_batches(examples, batch_size):
        preds.append(model.predict(batch))
        labels.append(batch.labels)
    return compute_metrics(np.concatenate(preds), np.concatenate(labels))


def _validate_dims(model: GraphCage, example: Example) -> None:
    cfg = model.cfg
    expected = {"t": cfg.d_t, "a": cfg.d_a, "v": cfg.d_v}
    for m, d in expected.items():
        got = example.sequences[m].shape[1]
        if got != d:
            raise ValueError(f"modality {m!r}: dataset feature dim {got} "
                             f"does not match model dim {d}")


def _config_dict(cfg: TrainConfig) -> dict:
    from dataclasses import asdict
    return asdict(cfg)
