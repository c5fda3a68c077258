"""
Binary classification metrics and per-center evaluation tables.

F1 uses a fixed 0.5 probability threshold.  AUROC is the Mann-Whitney
statistic computed from average ranks, so tied scores count one half.
Summaries report unweighted means over centers with sample (n - 1)
standard deviations, one row per method and evaluation group.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np
import pandas as pd
from scipy.stats import rankdata

from config import defaults
from data import ClientDataset, DatasetSplit, FederationLayout
from errors import CongruenceError, UndefinedMetricError
from models import predict_proba
from param_core import ParameterSet

logger = logging.getLogger(__name__)

GROUPS = ("local_test", "independent")
REPORT_COLUMNS = ["method", "center_id", "group", "n_pos", "n_neg", "f1", "auroc"]
SUMMARY_COLUMNS = ["method", "group", "n_centers", "mean_f1", "sd_f1", "mean_auroc", "sd_auroc"]
CROSS_CENTER_COLUMNS = ["model_center", "eval_center", "group", "f1", "auroc"]


@dataclass(frozen=True)
class EvalReport:
    method: str
    center_id: str
    group: str
    n_pos: int
    n_neg: int
    f1: float
    auroc: Optional[float]
    threshold: float = defaults.F1_THRESHOLD

    def to_row(self) -> dict[str, object]:
        row = asdict(self)
        row.pop("threshold")
        return row


@dataclass(frozen=True)
class SummaryRow:
    method: str
    group: str
    n_centers: int
    mean_f1: float
    sd_f1: float
    mean_auroc: float
    sd_auroc: float


@dataclass(frozen=True)
class SummaryTable:
    rows: tuple[SummaryRow, ...]

    def row(self, method: str, group: str) -> SummaryRow:
        for row in self.rows:
            if row.method == method and row.group == group:
                return row
        raise KeyError(f"{method}/{group}")

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([asdict(row) for row in self.rows], columns=SUMMARY_COLUMNS)


def _binary(values: Sequence[int], name: str) -> np.ndarray:
    array = np.asarray(values).reshape(-1)
    if not np.all((array == 0) | (array == 1)):
        raise ValueError(f"invalid_{name}: expected 0/1 values")
    return array.astype(np.int64)


def f1_score(preds: Sequence[int], labels: Sequence[int]) -> float:
    preds = _binary(preds, "preds")
    labels = _binary(labels, "labels")
    if preds.size != labels.size:
        raise CongruenceError(f"length_mismatch: {preds.size} predictions for {labels.size} labels")
    if preds.size == 0:
        raise UndefinedMetricError("empty_input: f1 needs at least one sample")
    tp = int(np.count_nonzero((preds == 1) & (labels == 1)))
    fp = int(np.count_nonzero((preds == 1) & (labels == 0)))
    fn = int(np.count_nonzero((preds == 0) & (labels == 1)))
    denominator = 2 * tp + fp + fn
    return 0.0 if denominator == 0 else 2 * tp / denominator


def auroc(scores: Sequence[float], labels: Sequence[int]) -> float:
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = _binary(labels, "labels")
    if scores.size != labels.size:
        raise CongruenceError(f"length_mismatch: {scores.size} scores for {labels.size} labels")
    n_pos = int(np.count_nonzero(labels == 1))
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError(f"single_class: n_pos={n_pos} n_neg={n_neg}")
    ranks = rankdata(scores, method="average")
    u_statistic = float(np.sum(ranks[labels == 1])) - n_pos * (n_pos + 1) / 2.0
    return u_statistic / (n_pos * n_neg)


def _evaluate_split(
    model: ParameterSet, split: DatasetSplit, threshold: float
) -> tuple[int, int, float, Optional[float]]:
    scores = predict_proba(model, split.features)
    preds = (scores >= threshold).astype(np.int64)
    labels = split.labels
    f1 = f1_score(preds, labels)
    defined = split.n_pos > 0 and split.n_neg > 0
    return split.n_pos, split.n_neg, f1, auroc(scores, labels) if defined else None


def evaluation_split(dataset: ClientDataset, layout: FederationLayout) -> DatasetSplit:
    """Test split for training centers, every sample for independent centers."""
    if layout.group_of(dataset.center_id) == "local_test":
        return dataset.split("test")
    return dataset.all_samples()


def evaluate_model(
    model: ParameterSet,
    datasets: Mapping[str, ClientDataset],
    layout: FederationLayout,
    *,
    method: str = "",
    threshold: float = defaults.F1_THRESHOLD,
) -> list[EvalReport]:
    reports = []
    for center_id in layout.training_centers + layout.independent_centers:
        n_pos, n_neg, f1, area = _evaluate_split(model, evaluation_split(datasets[center_id], layout), threshold)
        if n_pos + n_neg < 1:
            raise UndefinedMetricError(f"empty_evaluation_set: center={center_id}")
        reports.append(
            EvalReport(method, center_id, layout.group_of(center_id), n_pos, n_neg, f1, area, threshold)
        )
    return reports


def _mean_sd(values: Iterable[Optional[float]]) -> tuple[float, float]:
    array = np.array([v for v in values if v is not None and not math.isnan(v)], dtype=np.float64)
    if array.size == 0:
        return math.nan, math.nan
    sd = float(np.std(array, ddof=1)) if array.size > 1 else math.nan
    return float(np.mean(array)), sd


def summarize(
    reports_by_method: Mapping[str, Sequence[EvalReport]],
    groups: Sequence[str] = GROUPS,
) -> SummaryTable:
    rows = []
    for method, reports in reports_by_method.items():
        for group in groups:
            members = [r for r in reports if r.group == group]
            if len(members) < 2:
                raise UndefinedMetricError(f"too_few_reports: method={method} group={group} n={len(members)}")
            mean_f1, sd_f1 = _mean_sd(r.f1 for r in members)
            mean_auroc, sd_auroc = _mean_sd(r.auroc for r in members)
            rows.append(SummaryRow(method, group, len(members), mean_f1, sd_f1, mean_auroc, sd_auroc))
    return SummaryTable(tuple(rows))


def mean_f1(reports: Sequence[EvalReport], group: str) -> float:
    values = [r.f1 for r in reports if r.group == group]
    return float(np.mean(values)) if values else math.nan


def reports_frame(reports: Iterable[EvalReport]) -> pd.DataFrame:
    return pd.DataFrame([r.to_row() for r in reports], columns=REPORT_COLUMNS)


def reports_from_frame(frame: pd.DataFrame) -> dict[str, list[EvalReport]]:
    by_method: dict[str, list[EvalReport]] = {}
    for row in frame.itertuples(index=False):
        area = None if pd.isna(row.auroc) else float(row.auroc)
        report = EvalReport(
            str(row.method), str(row.center_id), str(row.group), int(row.n_pos), int(row.n_neg), float(row.f1), area
        )
        by_method.setdefault(report.method, []).append(report)
    return by_method


def write_csv(frame: pd.DataFrame, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, lineterminator="\n")


def cross_center_matrix(
    models: Mapping[str, ParameterSet],
    datasets: Mapping[str, ClientDataset],
    layout: FederationLayout,
    *,
    threshold: float = defaults.F1_THRESHOLD,
) -> pd.DataFrame:
    """Score every model on every center's evaluation split."""
    rows = []
    for model_center, model in models.items():
        for eval_center in layout.training_centers + layout.independent_centers:
            split = evaluation_split(datasets[eval_center], layout)
            _, _, f1, area = _evaluate_split(model, split, threshold)
            rows.append(
                {
                    "model_center": model_center,
                    "eval_center": eval_center,
                    "group": layout.group_of(eval_center),
                    "f1": f1,
                    "auroc": area,
                }
            )
    logger.info("CROSS_CENTER_DONE models=%s centers=%s", len(models), len(rows) // max(1, len(models)))
    return pd.DataFrame(rows, columns=CROSS_CENTER_COLUMNS)


def local_baseline_reports(
    matrix: pd.DataFrame,
    datasets: Mapping[str, ClientDataset],
    layout: FederationLayout,
    *,
    method: str = "local",
    threshold: float = defaults.F1_THRESHOLD,
) -> list[EvalReport]:
    """One report per center from a cross-center matrix of local models.

    A training center is scored with its own model.  An independent center
    gets the mean over every local model evaluated on it.
    """
    reports = []
    for center_id in layout.training_centers + layout.independent_centers:
        split = evaluation_split(datasets[center_id], layout)
        group = layout.group_of(center_id)
        rows = matrix[matrix["eval_center"] == center_id]
        if group == "local_test":
            rows = rows[rows["model_center"] == center_id]
        if rows.empty:
            raise UndefinedMetricError(f"missing_local_model: center={center_id}")
        areas = rows["auroc"].dropna()
        area = float(areas.mean()) if len(areas) else None
        reports.append(
            EvalReport(method, center_id, group, split.n_pos, split.n_neg, float(rows["f1"].mean()), area, threshold)
        )
    return reports
