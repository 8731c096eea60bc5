"""Shared fixtures for the driftlens test suite."""

import os
import sys

import numpy as np
import pytest

# Add the parent directory to the path so tests import the package in place
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from driftlens.config import DomainSpec
from driftlens.synth import build_toy_model, fit_readout, generate_domain, make_fold_plan
from driftlens.tensorio import ActivationSet, LayerActivations

REPO_ROOT = os.path.abspath(os.path.join(os.path.dirname(__file__), '..'))
FIXTURES_DIR = os.path.join(REPO_ROOT, 'fixtures')


def make_acts(rng, n=40, widths=(5, 7, 3), model_id='m', dataset_id='d'):
    """Random activation set with one layer per width"""
    return ActivationSet(
        model_id, dataset_id,
        tuple(LayerActivations(f"layer{i + 1}", rng.standard_normal((n, w))) for i, w in enumerate(widths)),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(42)


@pytest.fixture(scope='session')
def clean_spec():
    return DomainSpec('clean', subjects=6, clip_seconds=12.0, hr_mean=75.0, hr_stddev=4.0, seed=11)


@pytest.fixture(scope='session')
def noisy_spec():
    return DomainSpec('noisy', subjects=6, clip_seconds=12.0, hr_mean=95.0, hr_stddev=4.0,
                      noise_level=1.0, illumination_offset=2.0, seed=12)


@pytest.fixture(scope='session')
def clean_dataset(clean_spec):
    return generate_domain(clean_spec)


@pytest.fixture(scope='session')
def noisy_dataset(noisy_spec):
    return generate_domain(noisy_spec)


@pytest.fixture(scope='session')
def trained_pair(clean_dataset, noisy_dataset):
    """One fold: models trained on each domain, plus the fold plans"""
    base = build_toy_model([12, 12, 12], clean_dataset.feature_dim, seed=3)
    plans = {
        'clean': make_fold_plan(clean_dataset.subject_ids, 3, seed=1),
        'noisy': make_fold_plan(noisy_dataset.subject_ids, 3, seed=2),
    }
    models = {
        (name, fold): fit_readout(base, ds, plans[name].train_subjects(fold), 1e-3, model_id=f"{name}_f{fold}")
        for name, ds in (('clean', clean_dataset), ('noisy', noisy_dataset))
        for fold in range(3)
    }
    return models, {'clean': clean_dataset, 'noisy': noisy_dataset}, plans


@pytest.fixture
def small_config(tmp_path):
    """Two short domains, three folds, small model; written to tmp_path/run.yaml"""
    text = f"""
seed: 5
out_dir: {tmp_path / 'run'}
fold_count: 3
architecture:
  widths: [8, 8, 8]
cka:
  estimator: unbiased
  batch_size: 32
domains:
  - {{domain_id: clean, subjects: 6, clip_seconds: 12, hr_mean: 75, hr_stddev: 4}}
  - {{domain_id: noisy, subjects: 6, clip_seconds: 12, hr_mean: 95, hr_stddev: 4, noise_level: 1.0, illumination_offset: 2.0}}
"""
    path = tmp_path / 'run.yaml'
    path.write_text(text, encoding='utf-8')
    return str(path)
