"""Composite loss, Adam training loop with early stopping, evaluation and checkpoints.

Checkpoint format (version 1): a ``torch.save`` zip archive holding a dict

    format        "megacrn-checkpoint"
    version       1
    model_config  ModelConfig as a plain dict
    normalizer    {"mean": float, "std": float}
    train_config  TrainConfig as a plain dict (or None)
    state_dict    parameter tensors keyed by dotted names, e.g.
                  ``encoder.cell0.theta_u``, ``memory.phi``, ``readout.weight``
    best_epoch    int or None
    val_mae       float or None

Everything in it loads with ``torch.load(..., weights_only=True)``.
"""
import copy
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch

from .data import Normalizer
from .errors import ConfigError, TrainingAborted
from .meta_learner import consistency_loss, contrastive_loss
from .metrics import masked_mae, masked_metrics
from .model import MegaCRN, ModelConfig

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "megacrn-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    lr: float = 0.001
    batch_size: int = 64
    max_epochs: int = 200
    patience: int = 10
    kappa1: float = 0.01
    kappa2: float = 0.01
    margin: float = 1.0
    seed: int = 0
    grad_clip: Optional[float] = 5.0
    deterministic: bool = True
    mask_zeros: bool = True
    horizons: Optional[Sequence[int]] = None

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.lr < 0:
            raise ConfigError("lr must be >= 0")
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise ConfigError("batch_size, max_epochs and patience must be positive")
        if self.patience > self.max_epochs:
            raise ConfigError(f"patience ({self.patience}) exceeds max_epochs ({self.max_epochs})")
        if self.kappa1 < 0 or self.kappa2 < 0 or self.margin < 0:
            raise ConfigError("kappa1, kappa2 and margin must be non-negative")
        if self.grad_clip is not None and self.grad_clip <= 0:
            raise ConfigError("grad_clip must be positive or None")

    def to_dict(self):
        d = asdict(self)
        if d["horizons"] is not None:
            d["horizons"] = list(d["horizons"])
        return d

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass
class LossTerms:
    total: torch.Tensor
    mae: torch.Tensor
    l1: torch.Tensor
    l2: torch.Tensor


def masked_l1(pred, truth, mask_zeros=True):
    if mask_zeros:
        mask = (truth != 0).to(pred.dtype)
        return ((pred - truth).abs() * mask).sum() / mask.sum().clamp_min(1.0)
    return (pred - truth).abs().mean()


def task_loss(pred, truth, Q=None, phi=None, top2=None, kappa1=0.01, kappa2=0.01, margin=1.0, mask_zeros=True):
    """Masked MAE plus weighted memory losses, all in original units.

    Memory losses are summed over nodes and averaged over the batch. When no
    query is given, or both weights are zero, the memory terms are not computed.
    """
    mae = masked_l1(pred, truth, mask_zeros)
    zero = mae.new_zeros(())
    if Q is None or (kappa1 == 0 and kappa2 == 0):
        return LossTerms(mae, mae, zero, zero)
    l1 = consistency_loss(Q, phi, top2).mean() if kappa1 else zero
    l2 = contrastive_loss(Q, phi, top2, margin).mean() if kappa2 else zero
    return LossTerms(mae + kappa1 * l1 + kappa2 * l2, mae, l1, l2)


def trace_loss(model, trace, targets, normalizer, config: TrainConfig):
    pred = normalizer.inverse_transform(trace.predictions)
    if trace.queries is None:
        return task_loss(pred, targets, mask_zeros=config.mask_zeros)
    return task_loss(
        pred, targets, trace.queries, model.memory.phi, trace.readout.top2,
        config.kappa1, config.kappa2, config.margin, config.mask_zeros,
    )


def set_deterministic(flag):
    torch.use_deterministic_algorithms(bool(flag))


def build_model(config: ModelConfig, seed=0, dtype=torch.float32):
    """Seeded construction; initial values do not depend on the global default dtype."""
    previous = torch.get_default_dtype()
    torch.set_default_dtype(torch.float32)
    try:
        torch.manual_seed(seed)
        model = MegaCRN(config)
    finally:
        torch.set_default_dtype(previous)
    return model.to(dtype)


def _param_dtype(model):
    return next(model.parameters()).dtype


def predict(model, split, normalizer, batch_size=64):
    """Predictions in original units for every window of ``split``, shape (S, beta, N, C)."""
    dtype = _param_dtype(model)
    outs = []
    was_training = model.training
    model.eval()
    with torch.no_grad():
        for batch in split.batches(batch_size):
            x = torch.as_tensor(batch.inputs, dtype=dtype)
            outs.append(normalizer.inverse_transform(model(x).predictions).cpu().numpy())
    model.train(was_training)
    return np.concatenate(outs, axis=0)


def validation_mae(model, split, normalizer, batch_size=64, mask_zeros=True):
    return masked_mae(predict(model, split, normalizer, batch_size), split.targets[..., None], mask_zeros)


def evaluate(model, normalizer, split, horizons=None, mask_zeros=True, batch_size=64):
    """Deterministic masked metrics on one windowed split."""
    if split.inputs.shape[-1] != model.config.n_nodes:
        raise ConfigError(f"data has {split.inputs.shape[-1]} nodes, model expects {model.config.n_nodes}")
    if split.inputs.shape[1] != model.config.lookback or split.targets.shape[1] != model.config.horizon:
        raise ConfigError("window lengths do not match the model's lookback/horizon")
    pred = predict(model, split, normalizer, batch_size)[..., 0]
    return masked_metrics(pred, split.targets, horizons, mask_zeros)


def default_horizons(horizon):
    """Reporting horizons: 15/30/60 min at 12 steps, 10/30/60 min at 6 steps."""
    if horizon == 12:
        return [3, 6, 12]
    if horizon == 6:
        return [1, 3, 6]
    return sorted({max(1, horizon // 4), max(1, horizon // 2), horizon})


@dataclass
class TrainResult:
    history: list
    best_epoch: int
    best_val_mae: float
    best_state: dict = field(repr=False)
    stopped_early: bool = False


def _check_finite(terms, epoch, step):
    for name in ("mae", "l1", "l2", "total"):
        if not torch.isfinite(getattr(terms, name)):
            raise TrainingAborted(name, epoch, step)


def train(model, data, config: TrainConfig, out_dir=None, on_epoch=None):
    """Fit ``model`` on ``data.train`` with early stopping on validation MAE.

    Restores the best-validation parameters into ``model`` before returning. With
    ``out_dir`` set, writes ``train_log.jsonl`` (one JSON record per epoch) and
    ``checkpoint.pt``.
    """
    config.validate()
    set_deterministic(config.deterministic)
    torch.manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)
    dtype = _param_dtype(model)
    norm = data.normalizer
    optimizer = torch.optim.Adam(model.parameters(), lr=config.lr, betas=(0.9, 0.999), eps=1e-8)

    log_fh = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        log_fh = (out_dir / "train_log.jsonl").open("w")

    history = []
    best_val = math.inf
    best_epoch = 0
    best_state = copy.deepcopy(model.state_dict())
    bad_epochs = 0
    stopped_early = False
    start = time.perf_counter()
    try:
        for epoch in range(1, config.max_epochs + 1):
            model.train()
            sums = {"loss": 0.0, "mae": 0.0, "l1": 0.0, "l2": 0.0}
            seen = 0
            for step, batch in enumerate(data.train.batches(config.batch_size, shuffle=True, rng=rng)):
                x = torch.as_tensor(batch.inputs, dtype=dtype)
                y = torch.as_tensor(batch.targets, dtype=dtype)
                trace = model(x)
                terms = trace_loss(model, trace, y, norm, config)
                _check_finite(terms, epoch, step)
                optimizer.zero_grad()
                terms.total.backward()
                if config.grad_clip is not None:
                    torch.nn.utils.clip_grad_norm_(model.parameters(), config.grad_clip)
                optimizer.step()
                b = x.shape[0]
                seen += b
                sums["loss"] += terms.total.item() * b
                sums["mae"] += terms.mae.item() * b
                sums["l1"] += terms.l1.item() * b
                sums["l2"] += terms.l2.item() * b

            val = validation_mae(model, data.val, norm, config.batch_size, config.mask_zeros)
            record = {
                "epoch": epoch,
                "train_loss": sums["loss"] / seen,
                "train_mae": sums["mae"] / seen,
                "l1": sums["l1"] / seen,
                "l2": sums["l2"] / seen,
                "val_mae": val,
                "elapsed_seconds": round(time.perf_counter() - start, 3),
            }
            history.append(record)
            if log_fh is not None:
                log_fh.write(json.dumps(record) + "\n")
                log_fh.flush()
            if on_epoch is not None:
                on_epoch(record)
            log.info("epoch %d train_mae %.4f val_mae %.4f", epoch, record["train_mae"], val)

            if val < best_val:
                best_val, best_epoch, bad_epochs = val, epoch, 0
                best_state = copy.deepcopy(model.state_dict())
            else:
                bad_epochs += 1
                if bad_epochs >= config.patience:
                    stopped_early = True
                    break
    finally:
        if log_fh is not None:
            log_fh.close()

    model.load_state_dict(best_state)
    result = TrainResult(history, best_epoch, best_val, best_state, stopped_early)
    if out_dir is not None:
        save_checkpoint(out_dir / "checkpoint.pt", model, norm, config, best_epoch=best_epoch, val_mae=best_val)
    return result


def save_checkpoint(path, model, normalizer, train_config=None, best_epoch=None, val_mae=None):
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "model_config": model.config.to_dict(),
        "normalizer": normalizer.to_dict(),
        "train_config": None if train_config is None else train_config.to_dict(),
        "state_dict": {k: v.detach().clone() for k, v in model.state_dict().items()},
        "best_epoch": best_epoch,
        "val_mae": None if val_mae is None else float(val_mae),
    }
    torch.save(payload, path)
    return Path(path)


def load_checkpoint(path):
    """Return ``(model, normalizer, payload)``; the model is in eval mode."""
    payload = torch.load(path, map_location="cpu", weights_only=True)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ConfigError(f"{path} is not a {CHECKPOINT_FORMAT} file")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ConfigError(f"unsupported checkpoint version {payload.get('version')}")
    config = ModelConfig.from_dict(payload["model_config"])
    state = payload["state_dict"]
    model = MegaCRN(config).to(next(iter(state.values())).dtype)
    model.load_state_dict(state)
    model.eval()
    norm = payload["normalizer"]
    return model, Normalizer(norm["mean"], norm["std"]), payload
