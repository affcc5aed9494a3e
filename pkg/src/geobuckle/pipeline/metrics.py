"""Error metrics and the per-sample / aggregate report."""

from __future__ import annotations

import csv
import io
import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from ..errors import DimensionError, InputError

log = logging.getLogger(__name__)

ERROR_COLUMNS = ("err_ux", "err_uy", "err_uz", "err_fr")
R2_COLUMNS = ("r2_ux", "r2_uy", "r2_uz")
REPORT_HEADER = ("id",) + ERROR_COLUMNS + R2_COLUMNS
STATS = ("mean", "min", "max", "median")


class UndefinedMetricWarning(UserWarning):
    pass


def rel_l2(pred, target) -> float:
    """``||pred - target||_2 / ||target||_2``; NaN (with a warning) for a zero target."""
    pred = np.asarray(pred, dtype=np.float64).ravel()
    target = np.asarray(target, dtype=np.float64).ravel()
    if pred.shape != target.shape:
        raise DimensionError(f"rel_l2 shapes differ: {pred.shape} vs {target.shape}")
    denom = np.linalg.norm(target)
    if denom == 0.0:
        warnings.warn("relative L2 error undefined for a zero target", UndefinedMetricWarning, stacklevel=2)
        return math.nan
    return float(np.linalg.norm(pred - target) / denom)


def r_squared(pred, target) -> float:
    """Coefficient of determination ``1 - SS_res / SS_tot``."""
    pred = np.asarray(pred, dtype=np.float64).ravel()
    target = np.asarray(target, dtype=np.float64).ravel()
    if pred.shape != target.shape:
        raise DimensionError(f"r_squared shapes differ: {pred.shape} vs {target.shape}")
    resid = pred - target
    dev = target - target.mean()
    ss_tot = float(dev @ dev)
    if ss_tot == 0.0:
        raise InputError("R^2 undefined for a zero-variance target")
    return 1.0 - float(resid @ resid) / ss_tot


@dataclass
class MetricsReport:
    ids: list[str]
    errors: dict[str, np.ndarray]  # column -> [n_samples]
    r2: dict[str, np.ndarray]
    node_errors: dict[str, np.ndarray] = field(default_factory=dict)  # id -> [N, 3] |u_hat - u|

    def summary(self) -> dict[str, dict[str, float]]:
        """``{stat: {column: value}}`` over defined (non-NaN) per-sample values."""
        out = {s: {} for s in STATS}
        for col in ERROR_COLUMNS:
            vals = self.errors[col]
            vals = vals[~np.isnan(vals)]
            if vals.size == 0:
                for s in STATS:
                    out[s][col] = math.nan
                continue
            out["mean"][col] = float(vals.mean())
            out["min"][col] = float(vals.min())
            out["max"][col] = float(vals.max())
            out["median"][col] = float(np.median(vals))
        return out

    def rows(self) -> list[list]:
        return [
            [sid] + [float(self.errors[c][i]) for c in ERROR_COLUMNS]
            + [float(self.r2[c][i]) for c in R2_COLUMNS]
            for i, sid in enumerate(self.ids)
        ]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(REPORT_HEADER)
        for row in self.rows():
            w.writerow([row[0]] + [f"{v:.9g}" for v in row[1:]])
        w.writerow([])
        w.writerow(("stat",) + ERROR_COLUMNS)
        summ = self.summary()
        for s in STATS:
            w.writerow([s] + [f"{summ[s][c]:.9g}" for c in ERROR_COLUMNS])
        return buf.getvalue()

    def table(self) -> str:
        """Plain-text table with one row per statistic."""
        summ = self.summary()
        lines = [f"{'':8s}" + "".join(f"{c:>10s}" for c in ("u_x", "u_y", "u_z", "F_R"))]
        for s in STATS:
            lines.append(f"{s.capitalize():8s}" + "".join(f"{summ[s][c]:10.4f}" for c in ERROR_COLUMNS))
        return "\n".join(lines)
