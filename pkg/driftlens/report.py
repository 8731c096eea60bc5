"""
CSV and SVG emission for CKA maps, metric tables and the summary tables.

Every writer goes through utils.atomic_write and uses fixed float formats,
so identical inputs give byte-identical files.
"""

import logging
import math
import os
from typing import Dict, Mapping, Sequence

import matplotlib
matplotlib.use('Agg')
import matplotlib.pyplot as plt
import numpy as np
import pandas as pd

from .cka import CkaMap
from .hr import SUMMARY_COLUMNS, SummaryStats
from .metrics import DISPLAY_NAMES, DS_SIM, MODEL_SIM, MetricTable
from .selection import SelectionReport
from .stats import CorrelationResult, ci95
from .utils import atomic_write, format_ci

logger = logging.getLogger(__name__)

FLOAT_FORMAT = '%.9g'
# similarity metrics read "higher = closer", so their colormap is inverted to line up with error maps
INVERTED_KINDS = (DS_SIM, MODEL_SIM)

matplotlib.rcParams['svg.hashsalt'] = 'driftlens'


def write_frame(frame: pd.DataFrame, path, index: bool = False, float_format=FLOAT_FORMAT):
    # float_format=None keeps the shortest round-trip repr
    with atomic_write(path, 'w', newline='') as f:
        frame.to_csv(f, index=index, float_format=float_format, lineterminator='\n')
    logger.info(f"Wrote {path}")
    return path


def cka_map_frame(cka: CkaMap) -> pd.DataFrame:
    frame = pd.DataFrame(cka.values, index=list(cka.x_layers), columns=list(cka.y_layers))
    frame.index.name = f"{cka.x_model_id}@{cka.x_dataset_id} \\ {cka.y_model_id}@{cka.y_dataset_id}"
    return frame


def write_cka_map(cka: CkaMap, path):
    return write_frame(cka_map_frame(cka), path, index=True)


def write_metric_table(table: MetricTable, directory, stem=None):
    """Long form (train_domain, test_domain, fold, value) plus the fold-mean matrix"""
    stem = stem or table.kind
    long_path = os.path.join(directory, f"{stem}_long.csv")
    matrix_path = os.path.join(directory, f"{stem}_matrix.csv")
    write_frame(table.to_long_frame(), long_path)
    write_frame(table.to_matrix_frame(), matrix_path, index=True)
    return long_path, matrix_path


def read_metric_table(kind: str, path) -> MetricTable:
    return MetricTable.from_long_frame(kind, pd.read_csv(path, float_precision='round_trip'))


def summary_frame(summaries: Mapping[str, SummaryStats]) -> pd.DataFrame:
    """Dataset summary: domain, Time, Avg HR, Avg HR stddev as 'mean ± ci'"""
    return pd.DataFrame(
        [[domain] + s.formatted() for domain, s in summaries.items()],
        columns=['domain'] + list(SUMMARY_COLUMNS),
    )


def intra_mae_frame(mae_table: MetricTable) -> pd.DataFrame:
    """Intra-dataset test MAE per domain, mean ± ci over folds"""
    rows = []
    for i, domain in enumerate(mae_table.domains):
        values = mae_table.values[i, i, :]
        if len(values) >= 2:
            rows.append([domain, format_ci(*ci95(values))])
        else:
            rows.append([domain, format_ci(float(values[0]), None)])
    return pd.DataFrame(rows, columns=['domain', 'MAE (BPM)'])


def correlation_frame(results: Dict[str, CorrelationResult]) -> pd.DataFrame:
    """Correlation table: r, p and significance per metric kind, plus a Composite row"""
    kinds = list(results)
    domains = [row.train_domain for row in results[kinds[0]].rows]
    columns = ['train_domain']
    for kind in kinds:
        columns += [f"{kind}_r", f"{kind}_p", f"{kind}_significant"]

    records = []
    for index, domain in enumerate(domains):
        record = [domain]
        for kind in kinds:
            result = results[kind]
            row = result.rows[index]
            record += [row.r, row.p, row.significant(result.threshold)]
        records.append(record)
    composite = ['Composite']
    for kind in kinds:
        composite += [results[kind].composite, results[kind].threshold, '']
    records.append(composite)
    return pd.DataFrame(records, columns=columns)


def heatmap_svg(matrix: pd.DataFrame, path, title: str, inverted: bool = False, fmt: str = '.2f',
                xlabel: str = 'Test dataset', ylabel: str = 'Train dataset'):
    """Annotated heatmap of a square matrix (rows = train domain, columns = test domain)"""
    values = matrix.to_numpy(dtype=np.float64)
    size = max(4.0, 0.45 * len(matrix.columns) + 2.0)
    fig, ax = plt.subplots(figsize=(size, size * 0.85))
    try:
        image = ax.imshow(values, cmap='viridis_r' if inverted else 'viridis', aspect='equal')
        fig.colorbar(image, ax=ax, fraction=0.046, pad=0.04)
        ax.set_xticks(range(len(matrix.columns)))
        ax.set_xticklabels([str(c) for c in matrix.columns], rotation=90)
        ax.set_yticks(range(len(matrix.index)))
        ax.set_yticklabels([str(i) for i in matrix.index])
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        ax.set_title(title)
        if len(matrix.columns) <= 25:
            finite = values[np.isfinite(values)]
            middle = (finite.min() + finite.max()) / 2.0 if finite.size else 0.0
            for i in range(values.shape[0]):
                for j in range(values.shape[1]):
                    if math.isfinite(values[i, j]):
                        dark = (values[i, j] > middle) if inverted else (values[i, j] < middle)
                        ax.text(j, i, format(values[i, j], fmt), ha='center', va='center', fontsize=6,
                                color='white' if dark else 'black')
        fig.tight_layout()
        with atomic_write(path, 'wb') as f:
            fig.savefig(f, format='svg', metadata={'Date': None})
    finally:
        plt.close(fig)
    logger.info(f"Wrote {path}")
    return path


def metric_heatmap(table: MetricTable, directory, svg: bool = False):
    """Fold-mean heatmap CSV (and SVG) for one table"""
    matrix = table.to_matrix_frame()
    csv_path = write_frame(matrix, os.path.join(directory, f"{table.kind}_heatmap.csv"), index=True)
    paths = [csv_path]
    if svg:
        paths.append(heatmap_svg(matrix, os.path.join(directory, f"{table.kind}_heatmap.svg"),
                                 DISPLAY_NAMES.get(table.kind, table.kind),
                                 inverted=table.kind in INVERTED_KINDS))
    return paths


def read_cka_map_frame(path) -> pd.DataFrame:
    return pd.read_csv(path, index_col=0, float_precision='round_trip')


def cka_map_svg(frame: pd.DataFrame, path):
    """CKA map heatmap from a cka_map_frame, fresh or read back from its CSV"""
    frame = frame.copy()
    frame.columns = [str(c) for c in frame.columns]
    x_side, _, y_side = str(frame.index.name or '').partition(' \\ ')
    title = f"CKA {x_side} vs {y_side}" if y_side else 'CKA map'
    return heatmap_svg(frame, path, title,
                       xlabel=f"{y_side.split('@')[0] or 'y'} layer", ylabel=f"{x_side.split('@')[0] or 'x'} layer")


def training_domain_medians(tables: Sequence[MetricTable]) -> pd.DataFrame:
    """
    Median of each fold-mean table over test domains, one row per training domain

    Rank 1 marks the training domain whose models meet the most severe shift:
    highest DS-diff or MAE, lowest similarity.
    """
    columns = {}
    for table in tables:
        medians = pd.Series(np.median(table.fold_mean(), axis=1), index=list(table.domains))
        columns[f"{table.kind}_median"] = medians
        columns[f"{table.kind}_rank"] = medians.rank(
            method='min', ascending=table.kind in INVERTED_KINDS).astype('Int64')
    frame = pd.DataFrame(columns)
    frame.index.name = 'train_domain'
    return frame.reset_index()


def residual_boxplot_svg(residuals: pd.DataFrame, path):
    """Box plot of per-domain selection residuals against each baseline; below zero favours DS-diff"""
    labels = {'vs_worst': 'Worst', 'vs_average': 'Average', 'vs_best': 'Best'}
    columns = [c for c in labels if c in residuals.columns]
    fig, ax = plt.subplots(figsize=(4.5, 4.0))
    try:
        ax.boxplot([residuals[c].dropna().to_numpy(dtype=np.float64) for c in columns])
        ax.set_xticks(range(1, len(columns) + 1))
        ax.set_xticklabels([labels[c] for c in columns])
        ax.axhline(0.0, color='grey', linewidth=0.8, linestyle='--')
        ax.set_xlabel('Baseline')
        ax.set_ylabel('Residual MAE (BPM)')
        ax.set_title('DS-diff selection residuals')
        fig.tight_layout()
        with atomic_write(path, 'wb') as f:
            fig.savefig(f, format='svg', metadata={'Date': None})
    finally:
        plt.close(fig)
    logger.info(f"Wrote {path}")
    return path


def write_summary_table(summaries: Mapping[str, SummaryStats], path):
    return write_frame(summary_frame(summaries), path)


def selection_summary_frame(report: SelectionReport) -> pd.DataFrame:
    """Average MAE per case, with the median residual of DS-diff selection against it"""
    residuals = dict(zip(('Worst', 'Average', 'Best'), report.residual_medians))
    records = []
    for case, (mean, halfwidth) in report.summary().items():
        median = residuals.get(case)
        records.append([case, format_ci(mean, halfwidth), '' if median is None else f"{median:.3f}"])
    return pd.DataFrame(records, columns=['case', 'MAE (BPM)', 'median residual (BPM)'])
