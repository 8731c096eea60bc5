"""
Statistics for relating domain-shift metrics to empirical error.
"""

import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats as sps

from .exceptions import (
    CoverageError,
    InsufficientDataError,
    TransformDomainError,
    UndefinedCorrelationError,
)

logger = logging.getLogger(__name__)

FISHER_CLAMP = 1.0 - 1e-6


def p_value_from_r(r: float, n: int) -> float:
    """
    Two-tailed p for Pearson r over n points, t = r·√((n−2)/(1−r²)) with n−2 dof

    Used where only a published r and its point count are known.
    """
    if n < 3:
        raise UndefinedCorrelationError(f"p-value needs n >= 3, got {n}")
    if abs(r) >= 1.0:
        return 0.0
    t = r * math.sqrt((n - 2) / (1.0 - r * r))
    return float(min(1.0, 2.0 * sps.t.sf(abs(t), n - 2)))


def pearson(xs: Sequence[float], ys: Sequence[float]) -> Tuple[float, float]:
    """
    Pearson correlation with two-tailed p-value

    Returns:
        (r, p)
    """
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise UndefinedCorrelationError(f"Inputs must be equal-length vectors: {x.shape} vs {y.shape}")
    n = len(x)
    if n < 3:
        raise UndefinedCorrelationError(f"Correlation needs n >= 3 points, got {n}")
    if np.all(x == x[0]) or np.all(y == y[0]):
        raise UndefinedCorrelationError("Correlation undefined for constant input")
    r, p = sps.pearsonr(x, y)
    return float(r), float(p)


def fisher_composite(rs: Sequence[float]) -> float:
    """tanh(mean(atanh(r_i)))"""
    rs = np.asarray(rs, dtype=np.float64)
    if rs.size == 0:
        raise InsufficientDataError("No correlation coefficients to combine")
    if np.any(np.abs(rs) >= 1.0):
        raise TransformDomainError(f"Fisher z undefined for |r| >= 1: {rs[np.abs(rs) >= 1.0].tolist()}")
    return float(np.tanh(np.mean(np.arctanh(rs))))


def bonferroni_threshold(alpha: float, m: int) -> float:
    if m < 1:
        raise ValueError(f"Bonferroni correction needs m >= 1 tests, got {m}")
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    return alpha / m


def ci95(values: Sequence[float]) -> Tuple[float, float]:
    """Mean and t-based 95% CI halfwidth: t(0.975, k−1)·s/√k"""
    v = np.asarray(values, dtype=np.float64)
    k = v.size
    if k < 2:
        raise InsufficientDataError(f"95% CI needs >= 2 values, got {k}")
    mean = float(v.mean())
    s = float(v.std(ddof=1))
    return mean, float(sps.t.ppf(0.975, k - 1) * s / math.sqrt(k))


# --- metric vs MAE ---

@dataclass
class CorrelationRow:
    train_domain: str
    r: float
    p: float
    n: int

    def significant(self, threshold: float) -> bool:
        return bool(self.p == self.p and self.p < threshold)


@dataclass
class CorrelationResult:
    kind: str
    rows: List[CorrelationRow]
    composite: float
    alpha: float

    @property
    def threshold(self) -> float:
        return bonferroni_threshold(self.alpha, max(1, len(self.rows)))

    def significance(self) -> Dict[str, bool]:
        # computed on demand so the flags always follow the current threshold
        return {row.train_domain: row.significant(self.threshold) for row in self.rows}


def clamped_composite(rs: Sequence[float]) -> float:
    """fisher_composite with |r| = 1 clamped to ±(1 − 1e-6)"""
    rs = np.asarray(rs, dtype=np.float64)
    if np.any(np.abs(rs) >= 1.0):
        logger.warning(f"Clamping {int(np.sum(np.abs(rs) >= 1.0))} |r| = 1 values for the Fisher transform")
        rs = np.clip(rs, -FISHER_CLAMP, FISHER_CLAMP)
    return fisher_composite(rs)


def correlate_metric_vs_mae(metric_table, mae_table, include_self: bool = True,
                            alpha: float = 0.05) -> CorrelationResult:
    """
    Per train domain, correlate the fold-mean metric with fold-mean MAE across test domains

    Rows whose correlation is undefined are kept with r = p = NaN and left out
    of the composite.
    """
    if not metric_table.same_grid(mae_table):
        raise CoverageError(f"Metric grid {metric_table.domains} x {metric_table.fold_count} folds does not "
                            f"match MAE grid {mae_table.domains} x {mae_table.fold_count} folds")
    metric = metric_table.fold_mean()
    error = mae_table.fold_mean()

    rows = []
    for i, domain in enumerate(metric_table.domains):
        columns = [j for j in range(len(metric_table.domains)) if include_self or j != i]
        try:
            r, p = pearson(metric[i, columns], error[i, columns])
        except UndefinedCorrelationError as e:
            logger.warning(f"{metric_table.kind} row {domain}: {e}")
            r, p = math.nan, math.nan
        rows.append(CorrelationRow(domain, r, p, len(columns)))

    defined = [row.r for row in rows if row.r == row.r]
    composite = clamped_composite(defined) if defined else math.nan
    return CorrelationResult(metric_table.kind, rows, composite, alpha)


def composite_from_published(rs: Sequence[float], alpha: float = 0.05, n_points: Optional[int] = None):
    """
    Composite and Bonferroni threshold from published r values

    Returns:
        (composite, threshold, p-values or None when n_points is unknown)
    """
    composite = clamped_composite(rs)
    threshold = bonferroni_threshold(alpha, len(rs))
    p_values = None if n_points is None else [p_value_from_r(r, n_points) for r in rs]
    return composite, threshold, p_values
