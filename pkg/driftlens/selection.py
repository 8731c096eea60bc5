"""
Ground-truth-free model selection by DS-diff, scored against worst / average / best baselines.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .exceptions import CoverageError, InsufficientDataError, SelectionError
from .stats import ci95
from .utils import format_ci, parse_ci

logger = logging.getLogger(__name__)

CASES = ('worst', 'average', 'best')
PER_FOLD = 'per_fold'
FOLD_MEAN = 'fold_mean'


def select_model_dsdiff(ds_diffs: Sequence[float]) -> int:
    """Index of the smallest DS-diff; ties go to the lowest index"""
    values = list(ds_diffs)
    if not values:
        raise SelectionError("No candidate models to select from")
    # np.argmin returns the first occurrence of the minimum
    return int(np.argmin(np.asarray(values, dtype=np.float64)))


def baselines(mae_values: Sequence[float]) -> Tuple[float, float, float]:
    """(worst, average, best) = (max, mean, min)"""
    values = np.asarray(list(mae_values), dtype=np.float64)
    if values.size == 0:
        raise SelectionError("No candidate MAE values")
    return float(values.max()), float(values.mean()), float(values.min())


def percent_improvement(baseline_mae: float, achieved_mae: float) -> float:
    """(baseline − achieved) / baseline; negative means degradation"""
    if baseline_mae == 0:
        if achieved_mae == 0:
            return 0.0
        raise ZeroDivisionError("Percent improvement undefined for a zero baseline")
    return (baseline_mae - achieved_mae) / baseline_mae


def residual_medians(achieved: Sequence[float], worst: Sequence[float], average: Sequence[float],
                     best: Sequence[float]) -> Tuple[float, float, float]:
    """Medians over domains of achieved − baseline, per baseline"""
    if not achieved:
        raise InsufficientDataError("No domains")
    if not len(achieved) == len(worst) == len(average) == len(best):
        raise CoverageError("Residual inputs differ in length")
    achieved = np.asarray(achieved, dtype=np.float64)
    return tuple(float(np.median(achieved - np.asarray(base, dtype=np.float64))) for base in (worst, average, best))


def _safe_improvement(baseline_mae: float, achieved_mae: float) -> float:
    try:
        return percent_improvement(baseline_mae, achieved_mae)
    except ZeroDivisionError:
        logger.warning(f"Zero-MAE baseline with achieved MAE {achieved_mae:.3f}; percent left undefined")
        return math.nan


@dataclass
class SelectionResult:
    test_domain: str
    fold: int
    chosen_domain: str
    chosen_mae: float
    worst: float
    average: float
    best: float
    candidates: Tuple[str, ...] = field(default=())

    @property
    def pct_over_worst(self) -> float:
        return _safe_improvement(self.worst, self.chosen_mae)

    @property
    def pct_over_average(self) -> float:
        return _safe_improvement(self.average, self.chosen_mae)

    @property
    def pct_over_best(self) -> float:
        return _safe_improvement(self.best, self.chosen_mae)

    def residuals(self) -> Tuple[float, float, float]:
        return self.chosen_mae - self.worst, self.chosen_mae - self.average, self.chosen_mae - self.best


def select_for_target(ds_diff_table, mae_table, test_domain: str, fold: Optional[int],
                      include_self: bool = False) -> SelectionResult:
    """
    Pick the candidate model minimizing DS-diff towards test_domain

    fold=None selects on fold-averaged DS-diff and scores fold-averaged MAE.
    """
    domains = list(ds_diff_table.domains)
    candidates = [d for d in domains if include_self or d != test_domain]
    if not candidates:
        raise SelectionError(f"No candidate models for {test_domain}")
    j = ds_diff_table.index(test_domain)

    def cell(table, x):
        i = table.index(x)
        return float(table.values[i, j, :].mean() if fold is None else table.values[i, j, fold])

    diffs = [cell(ds_diff_table, x) for x in candidates]
    maes = [cell(mae_table, x) for x in candidates]
    if any(math.isnan(v) for v in diffs + maes):
        raise CoverageError(f"Missing DS-diff or MAE cells towards {test_domain} (fold {fold})")

    chosen = select_model_dsdiff(diffs)
    worst, average, best = baselines(maes)
    return SelectionResult(test_domain, -1 if fold is None else fold, candidates[chosen], maes[chosen],
                           worst, average, best, tuple(candidates))


def run_selection(ds_diff_table, mae_table, include_self: bool = False, mode: str = PER_FOLD) -> List[SelectionResult]:
    """Selection for every (test domain, fold), or every test domain in fold-mean mode"""
    if not ds_diff_table.same_grid(mae_table):
        raise CoverageError("DS-diff and MAE tables cover different grids")
    ds_diff_table.require_complete()
    mae_table.require_complete()
    folds = [None] if mode == FOLD_MEAN else range(ds_diff_table.fold_count)
    results = []
    for y in ds_diff_table.domains:
        for fold in folds:
            result = select_for_target(ds_diff_table, mae_table, y, fold, include_self)
            logger.debug(f"{y} fold {fold}: chose {result.chosen_domain} (MAE {result.chosen_mae:.3f})")
            results.append(result)
    return results


# --- report ---

REPORT_COLUMNS = ('worst', 'average', 'best', 'ds_diff', 'pct_over_worst', 'pct_over_average', 'pct_over_best')


@dataclass
class DomainRow:
    """Fold-aggregated selection outcome for one test domain; each entry is (mean, ci halfwidth or NaN)"""
    test_domain: str
    values: Dict[str, Tuple[float, float]]
    folds: Optional[Dict[str, List[float]]] = None

    def mean(self, column: str) -> float:
        return self.values[column][0]


@dataclass
class SelectionReport:
    rows: List[DomainRow]
    average: Dict[str, Tuple[float, float]]
    residual_medians: Tuple[float, float, float]

    def summary(self) -> Dict[str, Tuple[float, float]]:
        """Average MAE per case"""
        return {case: self.average[column] for case, column in
                (('Worst', 'worst'), ('Average', 'average'), ('Best', 'best'), ('DS-diff', 'ds_diff'))}


def _mean_ci(values: Sequence[float]) -> Tuple[float, float]:
    if len(values) < 2:
        return float(values[0]), math.nan
    return ci95(values)


def domain_rows(results: Sequence[SelectionResult]) -> List[DomainRow]:
    """Group per-fold results by test domain; percents are per fold, then averaged"""
    grouped: Dict[str, List[SelectionResult]] = {}
    for r in results:
        grouped.setdefault(r.test_domain, []).append(r)

    fold_counts = {len(v) for v in grouped.values()}
    if len(fold_counts) > 1:
        raise CoverageError(f"Test domains have differing fold counts: {sorted(fold_counts)}")

    rows = []
    for domain, items in grouped.items():
        items = sorted(items, key=lambda r: r.fold)
        per_fold = {
            'worst': [r.worst for r in items],
            'average': [r.average for r in items],
            'best': [r.best for r in items],
            'ds_diff': [r.chosen_mae for r in items],
            'pct_over_worst': [r.pct_over_worst for r in items],
            'pct_over_average': [r.pct_over_average for r in items],
            'pct_over_best': [r.pct_over_best for r in items],
        }
        rows.append(DomainRow(domain, {c: _mean_ci(v) for c, v in per_fold.items()}, per_fold))
    return rows


def selection_report(rows: Sequence[DomainRow]) -> SelectionReport:
    """
    Average row and residual medians over test domains

    When fold-level values are present the Average row's CI is across folds of
    the domain-averaged values; rows carrying only published means get no CI.
    """
    if not rows:
        raise CoverageError("No selection rows to report")

    average = {}
    for column in REPORT_COLUMNS:
        means = [row.mean(column) for row in rows]
        overall = float(np.mean(means))
        halfwidth = math.nan
        if all(row.folds is not None for row in rows):
            per_fold = np.mean([row.folds[column] for row in rows], axis=0)
            if len(per_fold) >= 2:
                halfwidth = ci95(per_fold)[1]
        average[column] = (overall, halfwidth)

    medians = residual_medians(
        [row.mean('ds_diff') for row in rows],
        [row.mean('worst') for row in rows],
        [row.mean('average') for row in rows],
        [row.mean('best') for row in rows],
    )
    return SelectionReport(list(rows), average, medians)


def residual_frame(rows: Sequence[DomainRow]) -> pd.DataFrame:
    """Per-domain residuals (DS-diff − baseline) on fold-mean MAE"""
    return pd.DataFrame(
        [(row.test_domain,
          row.mean('ds_diff') - row.mean('worst'),
          row.mean('ds_diff') - row.mean('average'),
          row.mean('ds_diff') - row.mean('best')) for row in rows],
        columns=['test_domain', 'vs_worst', 'vs_average', 'vs_best'],
    )


def report_frame(report: SelectionReport) -> pd.DataFrame:
    """Per-test-domain selection table with an Average row; cells are 'mean ± ci'"""
    records = []
    for row in report.rows:
        records.append([row.test_domain] + [format_ci(*row.values[c]) for c in REPORT_COLUMNS])
    records.append(['Average'] + [format_ci(*report.average[c]) for c in REPORT_COLUMNS])
    return pd.DataFrame(records, columns=['test_domain'] + list(REPORT_COLUMNS))


def rows_from_frame(frame: pd.DataFrame) -> List[DomainRow]:
    """
    Read a per-test-domain selection table of published means

    Percent columns are used as given when present: they are fold means of
    per-fold ratios and cannot be rebuilt from fold-mean MAEs. Missing percent
    columns are derived from the MAE means.
    """
    rows = []
    for record in frame.to_dict('records'):
        domain = str(record['test_domain'])
        if domain.lower() == 'average':
            continue
        values = {}
        for column in ('worst', 'average', 'best', 'ds_diff'):
            mean, halfwidth = parse_ci(record[column])
            values[column] = (mean, math.nan if halfwidth is None else halfwidth)
        for column, base in (('pct_over_worst', 'worst'), ('pct_over_average', 'average'), ('pct_over_best', 'best')):
            if column in record and pd.notna(record[column]):
                mean, halfwidth = parse_ci(record[column])
                values[column] = (mean, math.nan if halfwidth is None else halfwidth)
            else:
                values[column] = (percent_improvement(values[base][0], values['ds_diff'][0]), math.nan)
        rows.append(DomainRow(domain, values))
    return rows
