"""Masked MAE / RMSE / MAPE at selected forecast horizons."""
import csv
import io
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np


@dataclass
class HorizonMetrics:
    mae: Optional[float]
    rmse: Optional[float]
    mape: Optional[float]
    valid_count: int

    @property
    def defined(self):
        return self.valid_count > 0


@dataclass
class HorizonReport:
    """Per-horizon metrics (1-based horizon keys) plus an all-horizons aggregate.

    A horizon without any valid entry carries ``None`` metrics, written out as
    ``undefined``.
    """

    horizons: Dict[int, HorizonMetrics] = field(default_factory=dict)
    overall: Optional[HorizonMetrics] = None

    def rows(self):
        out = [(f"horizon{h}", m) for h, m in self.horizons.items()]
        if self.overall is not None:
            out.append(("all", self.overall))
        return out

    def to_text(self):
        lines = []
        for name, m in self.rows():
            for key in ("mae", "rmse", "mape"):
                v = getattr(m, key)
                lines.append(f"{name}.{key} = {'undefined' if v is None else repr(v)}")
            lines.append(f"{name}.valid_count = {m.valid_count}")
        return "\n".join(lines) + "\n"

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["horizon", "mae", "rmse", "mape", "valid_count"])
        for name, m in self.rows():
            w.writerow([name, *("undefined" if v is None else repr(v) for v in (m.mae, m.rmse, m.mape)), m.valid_count])
        return buf.getvalue()

    def to_dict(self):
        return {name: {"mae": m.mae, "rmse": m.rmse, "mape": m.mape, "valid_count": m.valid_count}
                for name, m in self.rows()}


def _metrics(pred, truth, mask):
    n = int(mask.sum())
    if n == 0:
        return HorizonMetrics(None, None, None, 0)
    err = (pred - truth)[mask]
    y = truth[mask]
    abs_err = np.abs(err)
    mae = float(abs_err.mean())
    rmse = float(np.sqrt((err ** 2).mean()))
    nz = y != 0
    mape = float((abs_err[nz] / np.abs(y[nz])).mean() * 100.0) if nz.any() else None
    return HorizonMetrics(mae, rmse, mape, n)


def masked_metrics(pred, truth, horizons=None, mask_zeros=True):
    """Metrics over entries with non-zero truth.

    ``pred`` and ``truth`` are (B, beta, N) or (B, beta, N, C) arrays in original
    units. ``horizons`` are 1-based; ``None`` means every horizon.
    """
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs truth {truth.shape}")
    if pred.ndim < 2:
        raise ValueError("expected at least (batch, horizon) axes")
    beta = pred.shape[1]
    horizons = list(range(1, beta + 1)) if horizons is None else [int(h) for h in horizons]
    bad = [h for h in horizons if not 1 <= h <= beta]
    if bad:
        raise ValueError(f"horizons {bad} outside [1, {beta}]")
    mask = truth != 0 if mask_zeros else np.ones(truth.shape, dtype=bool)
    report = HorizonReport()
    for h in horizons:
        report.horizons[h] = _metrics(pred[:, h - 1], truth[:, h - 1], mask[:, h - 1])
    report.overall = _metrics(pred, truth, mask)
    return report


def masked_mae(pred, truth, mask_zeros=True):
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    mask = truth != 0 if mask_zeros else np.ones(truth.shape, dtype=bool)
    if not mask.any():
        return float("nan")
    return float(np.abs(pred - truth)[mask].mean())
