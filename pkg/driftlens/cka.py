"""
Linear-kernel CKA: Gram matrices, HSIC estimators and layer-pair CKA maps.

All arithmetic runs in float64 whatever the storage precision of the
activations. The unbiased minibatch estimator accumulates the three HSIC
terms (x·y, x·x, y·y) over consecutive batches and normalizes once at the end.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from .exceptions import (
    EstimatorDomainError,
    InsufficientSamplesError,
    PairingError,
    SizeError,
    ValidationError,
)
from .tensorio import ActivationSet

logger = logging.getLogger(__name__)

BIASED = 'biased'
UNBIASED = 'unbiased'
ESTIMATORS = (BIASED, UNBIASED)

DEFAULT_BATCH_SIZE = 64
# self-HSIC below this marks a constant (degenerate) layer
DEGENERATE_HSIC = 1e-12
UNBIASED_MIN_N = 4


def _as_matrix(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[0] < 1:
        raise SizeError(f"Expected an n x p matrix with n >= 1, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValidationError("Non-finite entries in activation matrix")
    return X


def _check_pair(Gx: np.ndarray, Gy: np.ndarray, min_n: int) -> int:
    if Gx.ndim != 2 or Gx.shape[0] != Gx.shape[1] or Gx.shape != Gy.shape:
        raise SizeError(f"Gram matrices must be square and equal-sized: {Gx.shape} vs {Gy.shape}")
    n = Gx.shape[0]
    if n < min_n:
        raise SizeError(f"Need n >= {min_n}, got {n}")
    return n


def gram_linear(X) -> np.ndarray:
    """G = X·Xᵀ"""
    X = _as_matrix(X)
    G = X @ X.T
    # matmul can leave asymmetry at the ulp level
    return (G + G.T) / 2.0


def center_gram(G) -> np.ndarray:
    """H·G·H with H = I − 11ᵀ/n"""
    G = np.asarray(G, dtype=np.float64)
    if G.ndim != 2 or G.shape[0] != G.shape[1]:
        raise SizeError(f"Gram matrix must be square, got {G.shape}")
    if G.shape[0] < 2:
        raise SizeError(f"Centering needs n >= 2, got {G.shape[0]}")
    row_means = G.mean(axis=0, keepdims=True)
    col_means = G.mean(axis=1, keepdims=True)
    return G - row_means - col_means + G.mean()


def hsic_biased(Gx, Gy) -> float:
    """⟨center(Gx), center(Gy)⟩ / (n−1)²"""
    Gx = np.asarray(Gx, dtype=np.float64)
    Gy = np.asarray(Gy, dtype=np.float64)
    n = _check_pair(Gx, Gy, 2)
    Cx = center_gram(Gx)
    Cy = center_gram(Gy)
    # the centered product is symmetric in its arguments; sum in a fixed order
    return float(np.sum(Cx * Cy) / (n - 1) ** 2)


def hsic_unbiased(Kx, Ky) -> float:
    """
    Unbiased HSIC estimator (U-statistic), defined for n >= 4

        1/(n(n−3)) · [ tr(K̃x K̃y) + 1ᵀK̃x1 · 1ᵀK̃y1 / ((n−1)(n−2)) − 2/(n−2) · 1ᵀK̃x K̃y1 ]

    where K̃ has its diagonal zeroed.
    """
    Kx = np.array(Kx, dtype=np.float64)
    Ky = np.array(Ky, dtype=np.float64)
    if Kx.ndim == 2 and Kx.shape[0] == Kx.shape[1] and Kx.shape == Ky.shape and Kx.shape[0] < UNBIASED_MIN_N:
        raise EstimatorDomainError(f"Unbiased HSIC needs n >= {UNBIASED_MIN_N}, got {Kx.shape[0]}")
    n = _check_pair(Kx, Ky, UNBIASED_MIN_N)

    np.fill_diagonal(Kx, 0.0)
    np.fill_diagonal(Ky, 0.0)

    trace_term = np.sum(Kx * Ky)
    sum_term = Kx.sum() * Ky.sum() / ((n - 1) * (n - 2))
    cross_term = 2.0 * (Kx.sum(axis=0) @ Ky.sum(axis=1)) / (n - 2)
    return float((trace_term + sum_term - cross_term) / (n * (n - 3)))


def _hsic(Gx, Gy, estimator: str) -> float:
    if estimator == BIASED:
        return hsic_biased(Gx, Gy)
    if estimator == UNBIASED:
        return hsic_unbiased(Gx, Gy)
    raise ValueError(f"Unknown estimator {estimator!r}; expected one of {ESTIMATORS}")


def _normalize(xy: float, xx: float, yy: float) -> Tuple[float, bool]:
    if xx < DEGENERATE_HSIC or yy < DEGENERATE_HSIC:
        return 0.0, True
    return float(xy / np.sqrt(xx * yy)), False


@dataclass(frozen=True)
class CkaResult:
    value: float
    degenerate: bool

    def __float__(self):
        return self.value


def cka_pair(X, Y, estimator: str = BIASED) -> CkaResult:
    """
    CKA = HSIC(X,Y) / √(HSIC(X,X)·HSIC(Y,Y)) over the full sample

    Returns:
        CkaResult: value 0 with degenerate=True when either layer is constant
    """
    X = _as_matrix(X)
    Y = _as_matrix(Y)
    if X.shape[0] != Y.shape[0]:
        raise SizeError(f"Sample counts differ: {X.shape[0]} vs {Y.shape[0]}")
    Gx = gram_linear(X)
    Gy = gram_linear(Y)
    value, degenerate = _normalize(_hsic(Gx, Gy, estimator), _hsic(Gx, Gx, estimator), _hsic(Gy, Gy, estimator))
    return CkaResult(value, degenerate)


@dataclass(frozen=True)
class CkaMap:
    x_model_id: str
    y_model_id: str
    x_dataset_id: str
    y_dataset_id: str
    x_layers: Tuple[str, ...]
    y_layers: Tuple[str, ...]
    values: np.ndarray
    estimator: str
    batch_size: int
    degenerate: np.ndarray

    @property
    def shape(self):
        return self.values.shape

    def diagonal_mean(self) -> float:
        return float(np.mean(np.diag(self.values)))

    def transposed(self) -> 'CkaMap':
        return CkaMap(
            self.y_model_id, self.x_model_id, self.y_dataset_id, self.x_dataset_id,
            self.y_layers, self.x_layers, self.values.T.copy(), self.estimator,
            self.batch_size, self.degenerate.T.copy(),
        )


def batch_bounds(n: int, batch_size: int, min_batch: int) -> List[Tuple[int, int]]:
    """Consecutive [start, stop) batches; a final batch shorter than min_batch is dropped"""
    bounds = []
    for start in range(0, n, batch_size):
        stop = min(start + batch_size, n)
        if stop - start >= min_batch:
            bounds.append((start, stop))
    return bounds


def cka_map(acts_x: ActivationSet, acts_y: ActivationSet, estimator: str = UNBIASED,
            batch_size: Optional[int] = DEFAULT_BATCH_SIZE) -> CkaMap:
    """
    Layer-pair CKA map between two activation sets over the same samples

    Args:
        acts_x, acts_y (ActivationSet): equal sample counts
        estimator (str): 'biased' or 'unbiased'
        batch_size (int): None means one batch of all samples

    Returns:
        CkaMap: L_x x L_y
    """
    if estimator not in ESTIMATORS:
        raise ValueError(f"Unknown estimator {estimator!r}; expected one of {ESTIMATORS}")
    n = acts_x.n_samples
    if acts_y.n_samples != n:
        raise PairingError(f"Activation sets have {n} and {acts_y.n_samples} samples; pair them first")

    batch_size = n if batch_size is None else int(batch_size)
    min_batch = UNBIASED_MIN_N if estimator == UNBIASED else 2
    if batch_size < min_batch:
        raise EstimatorDomainError(f"batch_size {batch_size} below the {estimator} estimator minimum {min_batch}")
    bounds = batch_bounds(n, batch_size, min_batch)
    if not bounds:
        raise InsufficientSamplesError(
            f"{n} samples give no batch of >= {min_batch} at batch_size {batch_size}")

    same = acts_x is acts_y
    Lx, Ly = len(acts_x), len(acts_y)
    xy = np.zeros((Lx, Ly))
    xx = np.zeros(Lx)
    yy = np.zeros(Ly)

    # fixed summation order: batches in sample order
    for start, stop in bounds:
        grams_x = [gram_linear(layer.data[start:stop]) for layer in acts_x.layers]
        grams_y = grams_x if same else [gram_linear(layer.data[start:stop]) for layer in acts_y.layers]
        for i, Gx in enumerate(grams_x):
            xx[i] += _hsic(Gx, Gx, estimator)
        for j, Gy in enumerate(grams_y):
            yy[j] += _hsic(Gy, Gy, estimator)
        for i, Gx in enumerate(grams_x):
            for j, Gy in enumerate(grams_y):
                if same and j < i:
                    xy[i, j] = xy[j, i]
                    continue
                xy[i, j] += _hsic(Gx, Gy, estimator)

    count = len(bounds)
    xy /= count
    xx /= count
    yy /= count

    values = np.zeros((Lx, Ly))
    degenerate = np.zeros((Lx, Ly), dtype=bool)
    for i in range(Lx):
        for j in range(Ly):
            values[i, j], degenerate[i, j] = _normalize(xy[i, j], xx[i], yy[j])

    if degenerate.any():
        logger.warning(f"{int(degenerate.sum())} degenerate CKA cells "
                       f"({acts_x.model_id}/{acts_x.dataset_id} vs {acts_y.model_id}/{acts_y.dataset_id})")

    return CkaMap(
        x_model_id=acts_x.model_id,
        y_model_id=acts_y.model_id,
        x_dataset_id=acts_x.dataset_id,
        y_dataset_id=acts_y.dataset_id,
        x_layers=tuple(acts_x.layer_names),
        y_layers=tuple(acts_y.layer_names),
        values=values,
        estimator=estimator,
        batch_size=batch_size,
        degenerate=degenerate,
    )
