"""Linear weight interpolation of forward- and backward-trained policies.

    theta = (1 - lam) * theta_forward + lam * theta_backward
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import MergeError
from .evalreport import evaluate, greedy_chooser

DEFAULT_LAMBDA = 0.25
DEFAULT_GRID = (0.0, 0.25, 0.5, 0.75, 1.0)


def _check_lambda(lam: float) -> float:
    lam = float(lam)
    if not 0.0 <= lam <= 1.0:
        raise MergeError(f"lambda must lie in [0, 1], got {lam}")
    return lam


@dataclass(frozen=True)
class MergeSpec:
    forward: Path
    backward: Path
    lam: float = DEFAULT_LAMBDA

    def __post_init__(self):
        _check_lambda(self.lam)

    def load(self):
        """``(theta_f, theta_b)``, checked for equal feature dimension."""
        from .trainer import load_checkpoint

        wf, _ = load_checkpoint(self.forward)
        wb, _ = load_checkpoint(self.backward)
        if wf.shape != wb.shape:
            raise MergeError(f"feature_dim mismatch: {wf.shape[0]} vs {wb.shape[0]}")
        return wf, wb


def interpolate(theta_f, theta_b, lam: float = DEFAULT_LAMBDA) -> np.ndarray:
    lam = _check_lambda(lam)
    tf = np.asarray(theta_f, dtype=np.float64)
    tb = np.asarray(theta_b, dtype=np.float64)
    if tf.shape != tb.shape:
        raise MergeError(f"dimension mismatch: {tf.shape} vs {tb.shape}")
    # endpoints are copies so they stay bit-exact even for -0.0 or inf entries
    if lam == 0.0:
        return tf.copy()
    if lam == 1.0:
        return tb.copy()
    return (1.0 - lam) * tf + lam * tb


def sweep(theta_f, theta_b, lambdas, env, qids, provider=None, meta=None) -> list:
    """Greedy evaluation of each interpolated policy; one row per lambda."""
    lambdas = list(lambdas)
    if not lambdas:
        raise MergeError("empty lambda list")
    rows = []
    for lam in lambdas:
        w = interpolate(theta_f, theta_b, lam)
        rep = evaluate(greedy_chooser(w), env, qids, provider, {**(meta or {}), "lambda": float(lam)})
        agg = rep.aggregates
        rows.append({"lambda": float(lam), **{k: agg[k] for k in ("em", "response_length", "search_calls",
                                                                  "R_forward", "R_backward")}})
    return rows
