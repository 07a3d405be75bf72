"""Confusion matrices, one-vs-rest metrics and predictive-probability tables."""

from __future__ import annotations

import json
import math
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import svgplot

CLASSES = ("N", "V", "S", "F")
ABNORMAL = ("V", "S", "F")
SCHEMA_PATH = Path(__file__).with_name("report_schema.json")


class LabelDomainError(ValueError):
    pass


# --------------------------------------------------------------------------
# Confusion matrices and metrics
# --------------------------------------------------------------------------

def final_class(label: str) -> str:
    """N, Xy and Xr all collapse to their class letter."""
    if label in CLASSES:
        return label
    if len(label) == 2 and label[0] in ABNORMAL and label[1] in "yr":
        return label[0]
    raise LabelDomainError(f"unknown label {label!r}")


def red_class(label: str) -> str:
    """Global-stage view: a yellow alarm was a global normal."""
    cls = final_class(label)
    return "N" if label.endswith("y") else cls


@dataclass(frozen=True)
class ConfusionMatrix:
    counts: np.ndarray  # rows predicted, columns truth, order N V S F

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def to_list(self) -> list[list[int]]:
        return self.counts.astype(int).tolist()

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.counts + other.counts)


def confusion(labels: Sequence[str], truths: Sequence[str], collapse=final_class) -> ConfusionMatrix:
    if len(labels) != len(truths):
        raise ValueError("labels and truths must have equal length")
    cm = np.zeros((4, 4), dtype=np.int64)
    for lab, tru in zip(labels, truths):
        if tru not in CLASSES:
            raise LabelDomainError(f"unknown truth label {tru!r}")
        cm[CLASSES.index(collapse(lab)), CLASSES.index(tru)] += 1
    return ConfusionMatrix(cm)


@dataclass(frozen=True)
class BinaryCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


def one_vs_rest(cm: ConfusionMatrix, cls: str) -> BinaryCounts:
    i = CLASSES.index(cls)
    C = cm.counts
    tp = int(C[i, i])
    fp = int(C[i, :].sum() - tp)
    fn = int(C[:, i].sum() - tp)
    return BinaryCounts(tp, fp, fn, int(C.sum() - tp - fp - fn))


def _pct(num: float, den: float) -> float:
    return 100.0 * num / den if den else math.nan


@dataclass(frozen=True)
class Metrics:
    acc: float
    se: float
    sp: float

    def to_dict(self) -> dict:
        return {"acc": _json_num(self.acc), "se": _json_num(self.se), "sp": _json_num(self.sp)}


def binary_metrics(cm: ConfusionMatrix, cls: str) -> Metrics:
    """Percentages; NaN where a denominator is zero."""
    b = one_vs_rest(cm, cls)
    return Metrics(_pct(b.tp + b.tn, b.total), _pct(b.tp, b.tp + b.fn), _pct(b.tn, b.tn + b.fp))


def per_record_stats(values: Iterable[float]) -> tuple[float, float]:
    """(median, IQR) with linear-interpolation quartiles; NaN entries ignored."""
    v = np.asarray(list(values), dtype=float)
    v = v[np.isfinite(v)]
    if v.size == 0:
        return math.nan, math.nan
    q1, med, q3 = np.percentile(v, [25, 50, 75])
    return float(med), float(q3 - q1)


# --------------------------------------------------------------------------
# Predictive tables
# --------------------------------------------------------------------------

@dataclass
class PredictionTable:
    counts: dict[str, dict[str, int]]  # yellow type -> first true abnormal type -> n
    prior_counts: dict[str, int]  # true abnormal samples in the evaluated streams
    unresolved: dict[str, int] = field(default_factory=lambda: {x: 0 for x in ABNORMAL})
    window: int | None = None

    @classmethod
    def from_counts(cls, counts, prior_counts=None, window=None) -> "PredictionTable":
        counts = {x: {y: int(counts[x][y]) for y in ABNORMAL} for x in ABNORMAL}
        if prior_counts is None:
            prior_counts = {y: sum(counts[x][y] for x in ABNORMAL) for y in ABNORMAL}
        return cls(counts, {y: int(prior_counts[y]) for y in ABNORMAL}, window=window)

    def row_total(self, x: str) -> int:
        return sum(self.counts[x].values())

    def posterior(self, x: str) -> dict[str, float]:
        """Percent of resolved yellow-``x`` alarms followed first by each type."""
        tot = self.row_total(x)
        return {y: _pct(self.counts[x][y], tot) for y in ABNORMAL}

    @property
    def followup_totals(self) -> dict[str, int]:
        return {y: sum(self.counts[x][y] for x in ABNORMAL) for y in ABNORMAL}

    def prior(self) -> dict[str, float]:
        tot = sum(self.prior_counts.values())
        return {y: _pct(self.prior_counts[y], tot) for y in ABNORMAL}

    def followup_prior(self) -> dict[str, float]:
        """Column totals of the table as a distribution."""
        col = self.followup_totals
        tot = sum(col.values())
        return {y: _pct(col[y], tot) for y in ABNORMAL}

    def uplift(self, x: str) -> float:
        return self.posterior(x)[x] - self.prior()[x]

    def to_dict(self) -> dict:
        return {
            "window": self.window,
            "counts": self.counts,
            "percent": {x: {y: _json_num(v) for y, v in self.posterior(x).items()} for x in ABNORMAL},
            "unresolved": dict(self.unresolved),
            "prior_counts": dict(self.prior_counts),
            "prior_percent": {y: _json_num(v) for y, v in self.prior().items()},
            "followup_totals": self.followup_totals,
            "followup_percent": {y: _json_num(v) for y, v in self.followup_prior().items()},
        }


def predictive_table(streams, window: int | None = None, target: str = "truth") -> PredictionTable:
    """Tally, for every yellow alarm, the first abnormal sample after it.

    ``streams`` holds one time-ordered list of AlarmLabel per patient.  With
    ``target="truth"`` the ground truth is searched; ``"red"`` searches the
    predicted red alarms instead.  ``window`` limits the search to that many
    following samples.
    """
    if window is not None and window < 1:
        raise ValueError("window must be >= 1")
    counts = {x: {y: 0 for y in ABNORMAL} for x in ABNORMAL}
    unresolved = {x: 0 for x in ABNORMAL}
    prior = {y: 0 for y in ABNORMAL}
    for stream in streams:
        if target == "truth":
            seq = [lab.truth if lab.truth in ABNORMAL else None for lab in stream]
        elif target == "red":
            seq = [lab.value[0] if lab.value.endswith("r") else None for lab in stream]
        else:
            raise ValueError(f"unknown target {target!r}")
        for y in seq:
            if y is not None:
                prior[y] += 1
        n = len(seq)
        # next_abn[k] = index of the first abnormal at or after k
        next_abn = [n] * (n + 1)
        for k in range(n - 1, -1, -1):
            next_abn[k] = k if seq[k] is not None else next_abn[k + 1]
        for k, lab in enumerate(stream):
            if not lab.value.endswith("y"):
                continue
            x = lab.value[0]
            j = next_abn[k + 1]
            if j < n and (window is None or j - k <= window):
                counts[x][seq[j]] += 1
            else:
                unresolved[x] += 1
    return PredictionTable(counts, prior, unresolved, window)


# --------------------------------------------------------------------------
# Report
# --------------------------------------------------------------------------

def _json_num(v: float):
    return None if v is None or (isinstance(v, float) and not math.isfinite(v)) else v


def metrics_block(cm: ConfusionMatrix) -> dict:
    return {c: binary_metrics(cm, c).to_dict() for c in CLASSES}


def per_record_block(per_record_cms: dict[str, ConfusionMatrix]) -> dict:
    out = {}
    for c in CLASSES:
        rows = [binary_metrics(cm, c) for _, cm in sorted(per_record_cms.items())]
        out[c] = {}
        for m in ("acc", "se", "sp"):
            med, iqr = per_record_stats(getattr(r, m) for r in rows)
            out[c][m] = {"median": _json_num(med), "iqr": _json_num(iqr)}
    return out


def build_report(
    streams: dict[str, list],
    transform_mode: str = "none",
    alpha: float = 1.25,
    window: int = 10,
    alpha_sweep: list[dict] | None = None,
    skipped: list[str] | None = None,
) -> dict:
    """Assemble the report document from per-patient alarm streams."""
    labels = [lab for pid in sorted(streams) for lab in streams[pid]]
    values = [lab.value for lab in labels]
    truths = [lab.truth for lab in labels]
    cm_final = confusion(values, truths, final_class)
    cm_red = confusion(values, truths, red_class)
    per_record = {
        pid: confusion([lab.value for lab in s], [lab.truth for lab in s]) for pid, s in streams.items()
    }
    ordered = [streams[pid] for pid in sorted(streams)]
    return {
        "schema_version": 1,
        "transform_mode": transform_mode,
        "alpha": alpha,
        "n_samples": len(labels),
        "n_records": len(streams),
        "yellow_count": sum(v.endswith("y") for v in values),
        "red_count": sum(v.endswith("r") for v in values),
        "confusion": {"global": cm_red.to_list(), "final": cm_final.to_list()},
        "metrics": {"global": metrics_block(cm_red), "final": metrics_block(cm_final)},
        "per_record": per_record_block(per_record),
        "prediction": {
            "unwindowed": predictive_table(ordered, None).to_dict(),
            "windowed": predictive_table(ordered, window).to_dict(),
            "red_unwindowed": predictive_table(ordered, None, target="red").to_dict(),
        },
        "alpha_sweep": alpha_sweep or [],
        "skipped_records": sorted(skipped or []),
    }


def empty_report(transform_mode: str = "none", alpha: float = 1.25, window: int = 10) -> dict:
    return build_report({}, transform_mode, alpha, window)


def atomic_write(path: str | Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def report_json(report: dict) -> str:
    return json.dumps(report, sort_keys=True, indent=2, allow_nan=False) + "\n"


def _table_csv(cm_list: list[list[int]]) -> str:
    lines = ["predicted\\truth," + ",".join(CLASSES)]
    for c, row in zip(CLASSES, cm_list):
        lines.append(c + "," + ",".join(str(v) for v in row))
    return "\n".join(lines) + "\n"


def _prediction_csv(table: dict) -> str:
    lines = ["yellow," + ",".join(f"n_{y}" for y in ABNORMAL) + "," + ",".join(f"pct_{y}" for y in ABNORMAL)
             + ",unresolved"]

    def fmt(v):
        return "" if v is None else f"{v:.2f}"

    for x in ABNORMAL:
        lines.append(x + "," + ",".join(str(table["counts"][x][y]) for y in ABNORMAL) + ","
                     + ",".join(fmt(table["percent"][x][y]) for y in ABNORMAL) + f",{table['unresolved'][x]}")
    lines.append("prior," + ",".join(str(table["prior_counts"][y]) for y in ABNORMAL) + ","
                 + ",".join(fmt(table["prior_percent"][y]) for y in ABNORMAL) + ",")
    return "\n".join(lines) + "\n"


def _metrics_csv(report: dict) -> str:
    lines = ["statistic," + ",".join(f"{c}_{m}" for c in CLASSES for m in ("acc", "se", "sp"))]

    def fmt(v):
        return "" if v is None else f"{v:.2f}"

    lines.append("cumulated," + ",".join(fmt(report["metrics"]["final"][c][m]) for c in CLASSES
                                         for m in ("acc", "se", "sp")))
    for stat in ("median", "iqr"):
        lines.append(stat + "," + ",".join(fmt(report["per_record"][c][m][stat]) for c in CLASSES
                                           for m in ("acc", "se", "sp")))
    return "\n".join(lines) + "\n"


def emit_report(report: dict, out_dir: str | Path) -> dict[str, Path]:
    """Write report.json, CSV tables and the posterior-vs-prior SVG charts."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create report directory {out}: {exc}") from exc
    files = {
        "report.json": report_json(report),
        "confusion_global.csv": _table_csv(report["confusion"]["global"]),
        "confusion_final.csv": _table_csv(report["confusion"]["final"]),
        "metrics.csv": _metrics_csv(report),
        "prediction_unwindowed.csv": _prediction_csv(report["prediction"]["unwindowed"]),
        "prediction_windowed.csv": _prediction_csv(report["prediction"]["windowed"]),
    }
    for key in ("unwindowed", "windowed"):
        t = report["prediction"][key]

        def nan(v):
            return math.nan if v is None else v

        files[f"prediction_{key}.svg"] = svgplot.grouped_bars(
            f"Posterior vs prior ({key})",
            list(ABNORMAL),
            {
                "P(X | yellow X)": [nan(t["percent"][x][x]) for x in ABNORMAL],
                "prior P(X)": [nan(t["prior_percent"][x]) for x in ABNORMAL],
            },
        )
    written = {}
    for name, text in files.items():
        atomic_write(out / name, text)
        written[name] = out / name
    return written


def load_schema() -> dict:
    return json.loads(SCHEMA_PATH.read_text())
