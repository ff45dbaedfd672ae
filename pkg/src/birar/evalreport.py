"""Evaluation harness, comparison tables, and SVG training plots."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional
from xml.sax.saxutils import escape

import numpy as np

from .errors import EvalError
from .policy import featurize, greedy_action, oracle_action
from .rewards import em, score
from .synthenv import Environment, env_step, reset, to_trajectory
from .trajectory import response_length, search_calls

ROW_FIELDS = ("question_id", "em", "response_length", "search_calls", "R_forward", "R_backward")
METRICS = ("em", "response_length", "search_calls", "R_forward", "R_backward")


@dataclass
class EvalReport:
    rows: list
    meta: dict = field(default_factory=dict)

    @property
    def aggregates(self) -> dict:
        out = {}
        for m in METRICS:
            vals = [r[m] for r in self.rows if r.get(m) is not None]
            out[m] = float(np.mean(vals)) if vals and len(vals) == len(self.rows) else None
        out["n"] = len(self.rows)
        return out

    def to_json(self) -> dict:
        return {"meta": self.meta, "aggregates": self.aggregates, "rows": self.rows}


# choosers map (env, state, actions, phi) -> index into actions

def greedy_chooser(w) -> Callable:
    w = np.asarray(w, dtype=np.float64)
    return lambda env, state, actions, phi: greedy_action(w, phi)


def oracle_chooser(env, state, actions, phi) -> int:
    return actions.index(oracle_action(env, state))


def random_chooser(seed: int) -> Callable:
    """Uniform over candidates; one RNG stream per (seed, question)."""
    streams: dict = {}

    def choose(env, state, actions, phi):
        rng = streams.get(state.qid)
        if rng is None:
            rng = streams[state.qid] = np.random.default_rng([seed, int(state.qid.lstrip("q") or 0)])
        return int(rng.integers(len(actions)))

    return choose


def run_episode(env: Environment, qid: str, choose: Callable):
    state = reset(env, qid)
    while not state.done:
        actions, phi = featurize(env, state)
        _, state = env_step(env, state, actions[choose(env, state, actions, phi)])
    return to_trajectory(state)


def evaluate(choose, env: Environment, qids, provider=None, meta: Optional[dict] = None) -> EvalReport:
    """One episode per question under ``choose`` (greedy for trained
    checkpoints). Directional rewards are filled when ``provider`` is given."""
    rows = []
    for qid in qids:
        q = env.questions.get(qid)
        if q is None:
            raise EvalError(f"question {qid!r} does not belong to this world")
        traj = run_episode(env, qid, choose)
        row = {
            "question_id": qid,
            "em": em(traj.answer, q.gold_answer),
            "response_length": response_length(traj),
            "search_calls": search_calls(traj),
            "R_forward": None,
            "R_backward": None,
        }
        if provider is not None:
            b = score(provider, traj, q.gold_answer)
            row["R_forward"], row["R_backward"] = b.R_forward, b.R_backward
        rows.append(row)
    return EvalReport(rows, dict(meta or {}))


def compare(reports, labels=None) -> dict:
    """Side-by-side aggregates; deltas are relative to the first report."""
    reports = list(reports)
    if not reports:
        raise EvalError("nothing to compare")
    labels = list(labels) if labels is not None else [r.meta.get("label", f"run{i}") for i, r in enumerate(reports)]
    base = reports[0]
    base_q = [r["question_id"] for r in base.rows]
    for r in reports[1:]:
        if r.meta.get("world_seed") != base.meta.get("world_seed"):
            raise EvalError("reports come from different worlds")
        if [x["question_id"] for x in r.rows] != base_q:
            raise EvalError("reports cover different question sets")
    b_agg = base.aggregates
    table = []
    for label, r in zip(labels, reports):
        agg = r.aggregates
        row = {"label": label, **{m: agg[m] for m in METRICS}}
        for m in METRICS:
            row[f"delta_{m}"] = None if agg[m] is None or b_agg[m] is None else agg[m] - b_agg[m]
        table.append(row)
    return {"baseline": labels[0], "world_seed": base.meta.get("world_seed"), "n": len(base_q), "rows": table}


def emit(obj, fmt: str, path) -> Path:
    """Write an :class:`EvalReport` or a comparison dict as ``json`` or ``csv``."""
    path = Path(path)
    if fmt == "json":
        data = obj.to_json() if isinstance(obj, EvalReport) else obj
        path.write_text(json.dumps(data, indent=1, sort_keys=True) + "\n")
        return path
    if fmt != "csv":
        raise EvalError(f"unknown format {fmt!r}")
    if isinstance(obj, EvalReport):
        fields, rows = ROW_FIELDS, obj.rows
    else:
        rows = obj["rows"]
        fields = tuple(rows[0].keys()) if rows else ("label",)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(fields)
        for r in rows:
            w.writerow(["" if r.get(f) is None else (repr(r[f]) if isinstance(r[f], float) else r[f]) for f in fields])
    return path


def read_report_csv(path) -> EvalReport:
    rows = []
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            rows.append({
                "question_id": r["question_id"],
                "em": int(r["em"]),
                "response_length": int(r["response_length"]),
                "search_calls": int(r["search_calls"]),
                "R_forward": float(r["R_forward"]) if r["R_forward"] else None,
                "R_backward": float(r["R_backward"]) if r["R_backward"] else None,
            })
    return EvalReport(rows)


def read_report_json(path) -> EvalReport:
    obj = json.loads(Path(path).read_text())
    return EvalReport(obj["rows"], obj.get("meta", {}))


_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def plot_metric(series: dict, metric: str, path, width: int = 640, height: int = 360) -> Path:
    """Standalone SVG line plot of ``metric`` against step.

    ``series`` maps a label to metrics rows ``(step, reward, resp_len,
    search_calls, kl, clip_frac)`` as produced by the trainer. Each step of
    each series appears exactly once as a polyline vertex.
    """
    from .trainer import METRICS_HEADER

    col = METRICS_HEADER.index(metric)
    pad = 48
    all_steps = [r[0] for rows in series.values() for r in rows]
    all_vals = [r[col] for rows in series.values() for r in rows]
    if not all_steps:
        raise EvalError("no training rows to plot")
    x0, x1 = min(all_steps), max(all_steps)
    y0, y1 = min(all_vals), max(all_vals)
    if x1 == x0:
        x1 = x0 + 1
    if y1 == y0:
        y1 = y0 + 1.0

    def sx(x):
        return pad + (x - x0) / (x1 - x0) * (width - 2 * pad)

    def sy(y):
        return height - pad - (y - y0) / (y1 - y0) * (height - 2 * pad)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
        f'<text x="{width / 2}" y="{height - 12}" text-anchor="middle" font-size="12">step</text>',
        f'<text x="14" y="{height / 2}" font-size="12" transform="rotate(-90 14 {height / 2})" '
        f'text-anchor="middle">{escape(metric)}</text>',
        f'<text x="{pad}" y="{height - pad + 14}" font-size="10">{x0}</text>',
        f'<text x="{width - pad}" y="{height - pad + 14}" font-size="10" text-anchor="end">{x1}</text>',
        f'<text x="{pad - 4}" y="{height - pad}" font-size="10" text-anchor="end">{y0:.3g}</text>',
        f'<text x="{pad - 4}" y="{pad + 4}" font-size="10" text-anchor="end">{y1:.3g}</text>',
    ]
    for i, (label, rows) in enumerate(series.items()):
        color = _COLORS[i % len(_COLORS)]
        pts = " ".join(f"{sx(r[0]):.2f},{sy(r[col]):.2f}" for r in rows)
        parts.append(f'<polyline data-label="{escape(label)}" fill="none" stroke="{color}" '
                     f'stroke-width="1.5" points="{pts}" data-steps="{",".join(str(r[0]) for r in rows)}"/>')
        parts.append(f'<text x="{width - pad + 4}" y="{pad + 14 * i}" font-size="11" fill="{color}">'
                     f'{escape(label)}</text>')
    parts.append("</svg>")
    path = Path(path)
    path.write_text("\n".join(parts) + "\n")
    return path
