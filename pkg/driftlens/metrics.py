"""
Domain-shift metrics built on CKA maps, and the cross-domain tables holding them.

    DS-diff    mean |self-map of the source model on its training data
               − self-map of the same model on the target data|
    DS-sim     mean same-layer CKA of the source model, training data vs target data
    Model-sim  mean same-layer CKA of the source model vs a model trained on the target,
               both on the target data

DS-diff needs no labels for the target; Model-sim needs a model trained on it.
"""

import logging
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .cka import DEFAULT_BATCH_SIZE, UNBIASED, CkaMap, cka_map
from .config import CKA_SAMPLES
from .exceptions import ArchitectureError, CoverageError, PairingError
from .synth import FoldPlan, SyntheticDataset, ToyModel, forward_collect
from .tensorio import ActivationSet
from .utils import run_jobs

logger = logging.getLogger(__name__)

DS_DIFF = 'ds_diff'
DS_SIM = 'ds_sim'
MODEL_SIM = 'model_sim'
MAE = 'mae'
METRIC_KINDS = (DS_DIFF, DS_SIM, MODEL_SIM)

DISPLAY_NAMES = {DS_DIFF: 'DS-diff', DS_SIM: 'DS-sim', MODEL_SIM: 'Model-sim', MAE: 'MAE'}


# --- single metrics ---

def pair_samples(acts_a: ActivationSet, acts_b: ActivationSet) -> Tuple[ActivationSet, ActivationSet]:
    """Pair two sets sample-by-sample in their stored (subject_id, frame) order, truncated to the shorter"""
    n = min(acts_a.n_samples, acts_b.n_samples)
    if n < 1:
        raise PairingError(f"Cannot pair {acts_a.dataset_id} with {acts_b.dataset_id}: no samples")
    if acts_a.n_samples != acts_b.n_samples:
        logger.debug(f"Pairing {acts_a.dataset_id} ({acts_a.n_samples}) with "
                     f"{acts_b.dataset_id} ({acts_b.n_samples}): truncating to {n}")
    return (acts_a if acts_a.n_samples == n else acts_a.truncated(n),
            acts_b if acts_b.n_samples == n else acts_b.truncated(n))


def ds_diff_from_maps(map_xx: CkaMap, map_yy: CkaMap) -> float:
    """Mean absolute cell difference of two self-similarity maps, trivial diagonal included"""
    if map_xx.shape != map_yy.shape:
        raise ArchitectureError(f"CKA map shapes differ: {map_xx.shape} vs {map_yy.shape}")
    return float(np.mean(np.abs(map_xx.values - map_yy.values)))


def ds_diff(acts_on_x: ActivationSet, acts_on_y: ActivationSet, estimator: str = UNBIASED,
            batch_size: Optional[int] = DEFAULT_BATCH_SIZE) -> float:
    """
    DS-diff of a model between its training set and a target set

    Args:
        acts_on_x: the model's activations on its training set
        acts_on_y: the same model's activations on the target set (sample counts may differ)
    """
    map_xx = cka_map(acts_on_x, acts_on_x, estimator, batch_size)
    map_yy = map_xx if acts_on_y is acts_on_x else cka_map(acts_on_y, acts_on_y, estimator, batch_size)
    return ds_diff_from_maps(map_xx, map_yy)


def ds_sim(acts_on_x: ActivationSet, acts_on_y: ActivationSet, estimator: str = UNBIASED,
           batch_size: Optional[int] = DEFAULT_BATCH_SIZE) -> float:
    """Mean same-layer CKA of one model across two datasets (samples paired by order)"""
    a, b = pair_samples(acts_on_x, acts_on_y)
    if acts_on_x is acts_on_y:
        b = a
    return cka_map(a, b, estimator, batch_size).diagonal_mean()


def model_sim(acts_x: ActivationSet, acts_y: ActivationSet, estimator: str = UNBIASED,
              batch_size: Optional[int] = DEFAULT_BATCH_SIZE) -> float:
    """Mean same-layer CKA of two models on one dataset"""
    if len(acts_x) != len(acts_y):
        raise ArchitectureError(f"Models have {len(acts_x)} and {len(acts_y)} layers")
    if acts_x.n_samples != acts_y.n_samples:
        raise PairingError(f"Model-sim needs the same samples: {acts_x.n_samples} vs {acts_y.n_samples}")
    return cka_map(acts_x, acts_y, estimator, batch_size).diagonal_mean()


# --- tables ---

@dataclass
class MetricTable:
    """(train_domain, test_domain, fold) grid; NaN marks an unfilled cell"""
    kind: str
    domains: Tuple[str, ...]
    values: np.ndarray   # D x D x F

    @classmethod
    def empty(cls, kind: str, domains: Sequence[str], fold_count: int) -> 'MetricTable':
        return cls(kind, tuple(domains), np.full((len(domains), len(domains), fold_count), np.nan))

    @property
    def fold_count(self) -> int:
        return self.values.shape[2]

    def index(self, domain: str) -> int:
        return self.domains.index(domain)

    def set(self, train_domain: str, test_domain: str, fold: int, value: float):
        self.values[self.index(train_domain), self.index(test_domain), fold] = value

    def get(self, train_domain: str, test_domain: str, fold: int) -> float:
        return float(self.values[self.index(train_domain), self.index(test_domain), fold])

    def missing(self) -> List[Tuple[str, str, int]]:
        return [(self.domains[i], self.domains[j], int(k)) for i, j, k in zip(*np.nonzero(np.isnan(self.values)))]

    def require_complete(self):
        missing = self.missing()
        if missing:
            raise CoverageError(f"{DISPLAY_NAMES.get(self.kind, self.kind)} table has "
                                f"{len(missing)} empty cells, e.g. {missing[:3]}", missing)

    def fold_mean(self) -> np.ndarray:
        """D x D matrix averaged over folds"""
        self.require_complete()
        return self.values.mean(axis=2)

    def to_long_frame(self) -> pd.DataFrame:
        rows = []
        for i, x in enumerate(self.domains):
            for j, y in enumerate(self.domains):
                for k in range(self.fold_count):
                    rows.append((x, y, k, self.values[i, j, k]))
        return pd.DataFrame(rows, columns=['train_domain', 'test_domain', 'fold', 'value'])

    def to_matrix_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.fold_mean(), index=list(self.domains), columns=list(self.domains))
        frame.index.name = 'train_domain'
        return frame

    @classmethod
    def from_long_frame(cls, kind: str, frame: pd.DataFrame, domains: Optional[Sequence[str]] = None) -> 'MetricTable':
        if domains is None:
            domains = list(dict.fromkeys(list(frame['train_domain']) + list(frame['test_domain'])))
        folds = sorted(int(f) for f in frame['fold'].unique())
        if folds != list(range(len(folds))):
            raise CoverageError(f"Fold indices are not dense 0..k-1: {folds}")
        table = cls.empty(kind, domains, len(folds))
        for row in frame.itertuples(index=False):
            table.set(row.train_domain, row.test_domain, int(row.fold), float(row.value))
        return table

    def same_grid(self, other: 'MetricTable') -> bool:
        return self.domains == other.domains and self.values.shape == other.values.shape


def _coverage(models: Dict[Tuple[str, int], ToyModel], domains: Sequence[str], fold_count: int):
    missing = [(d, f) for d in domains for f in range(fold_count) if (d, f) not in models]
    if missing:
        raise CoverageError(f"Missing trained models for {len(missing)} (domain, fold) pairs: {missing}", missing)


def metric_tables(models: Dict[Tuple[str, int], ToyModel],
                  datasets: Dict[str, SyntheticDataset],
                  fold_plans: Dict[str, FoldPlan],
                  kinds: Iterable[str] = METRIC_KINDS,
                  estimator: str = UNBIASED,
                  batch_size: Optional[int] = DEFAULT_BATCH_SIZE,
                  threads: int = 1,
                  maps: Optional[Dict[tuple, CkaMap]] = None,
                  samples: str = 'test') -> Dict[str, MetricTable]:
    """
    Fill every (train domain, test domain, fold) cell for the requested metric kinds

    CKA analyses use each dataset's test subjects for the fold at hand, or
    every subject of the dataset with samples='all'.
    Passing a dict as `maps` collects every computed CkaMap keyed by
    (kind, train_domain, test_domain, fold).
    """
    kinds = list(kinds)
    unknown = [k for k in kinds if k not in METRIC_KINDS]
    if unknown:
        raise ValueError(f"Unknown metric kinds {unknown}; expected {METRIC_KINDS}")
    if samples not in CKA_SAMPLES:
        raise ValueError(f"Unknown CKA sample choice {samples!r}; expected one of {CKA_SAMPLES}")

    domains = list(datasets)
    fold_count = next(iter(fold_plans.values())).fold_count
    _coverage(models, domains, fold_count)
    tables = {kind: MetricTable.empty(kind, domains, fold_count) for kind in kinds}

    def activations(x: str, fold: int, y: str) -> ActivationSet:
        subjects = datasets[y].subject_ids if samples == 'all' else fold_plans[y].test_subjects(fold)
        _, acts = forward_collect(models[(x, fold)], datasets[y], subjects)
        return acts

    def row_job(key):
        # one source model against every dataset: DS-diff and DS-sim
        x, fold = key
        on_x = activations(x, fold, x)
        map_xx = cka_map(on_x, on_x, estimator, batch_size)
        out = {}
        for y in domains:
            on_y = on_x if y == x else activations(x, fold, y)
            if DS_DIFF in kinds:
                map_yy = map_xx if y == x else cka_map(on_y, on_y, estimator, batch_size)
                out[(DS_DIFF, y)] = (ds_diff_from_maps(map_xx, map_yy), map_yy)
            if DS_SIM in kinds:
                a, b = pair_samples(on_x, on_y)
                sim_map = cka_map(a, a if y == x else b, estimator, batch_size)
                out[(DS_SIM, y)] = (sim_map.diagonal_mean(), sim_map)
        return out

    def column_job(key):
        # every source model against the target's own model on one dataset: Model-sim
        y, fold = key
        own = activations(y, fold, y)
        out = {}
        for x in domains:
            other = own if x == y else activations(x, fold, y)
            if len(other) != len(own):
                raise ArchitectureError(f"Models for {x} and {y} have different layer counts")
            sim_map = cka_map(other, own, estimator, batch_size)
            out[(MODEL_SIM, x)] = (sim_map.diagonal_mean(), sim_map)
        return out

    keys = [(d, f) for d in domains for f in range(fold_count)]
    if DS_DIFF in kinds or DS_SIM in kinds:
        logger.info(f"Computing {', '.join(k for k in kinds if k != MODEL_SIM)} over {len(keys)} models")
        for (x, fold), out in run_jobs(row_job, keys, threads).items():
            for (kind, y), (value, cka) in out.items():
                tables[kind].set(x, y, fold, value)
                if maps is not None:
                    maps[(kind, x, y, fold)] = cka
    if MODEL_SIM in kinds:
        logger.info(f"Computing model_sim over {len(keys)} (dataset, fold) columns")
        for (y, fold), out in run_jobs(column_job, keys, threads).items():
            for (kind, x), (value, cka) in out.items():
                tables[kind].set(x, y, fold, value)
                if maps is not None:
                    maps[(kind, x, y, fold)] = cka

    for table in tables.values():
        table.require_complete()
    return tables


def metric_matrix(models, datasets, fold_plans, kind: str, estimator: str = UNBIASED,
                  batch_size: Optional[int] = DEFAULT_BATCH_SIZE, threads: int = 1,
                  samples: str = 'test') -> MetricTable:
    """One metric kind over the full (train domain, test domain, fold) grid"""
    return metric_tables(models, datasets, fold_plans, [kind], estimator, batch_size, threads,
                         samples=samples)[kind]
