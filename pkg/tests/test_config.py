"""Run configuration loading and validation."""

import os

import pandas as pd
import pytest

from driftlens.config import Config, DomainSpec, RunConfig
from driftlens.exceptions import SpecError
from driftlens.utils import parse_ci
from tests.conftest import FIXTURES_DIR, REPO_ROOT


class TestRunConfig:

    def test_load(self, small_config):
        cfg = RunConfig.load(small_config)
        assert cfg.domain_ids == ['clean', 'noisy']
        assert cfg.fold_count == 3
        assert cfg.widths == [8, 8, 8]
        assert cfg.batch_size == 32
        assert cfg.validate() == []

    def test_domain_seeds_follow_global_seed(self, small_config):
        cfg = RunConfig.load(small_config)
        assert [d.seed for d in cfg.domains] == [5000, 5001]
        overridden = RunConfig.load(small_config, seed=9)
        assert [d.seed for d in overridden.domains] == [9000, 9001]
        assert overridden.model_seed == 9

    def test_defaults(self):
        cfg = RunConfig.from_dict({'domains': [{'domain_id': 'x'}]})
        assert cfg.estimator == 'unbiased'
        assert cfg.widths == [32] * 6
        assert cfg.selection_mode == 'per_fold'
        assert cfg.correlation_include_self and not cfg.selection_include_self
        assert cfg.normalize_inputs and cfg.cka_samples == 'test' and cfg.fold_seed is None

    def test_training_cka_and_fold_split_keys(self):
        cfg = RunConfig.from_dict({
            'subjects_per_fold_seed': 17,
            'training': {'normalize_inputs': False},
            'cka': {'samples': 'all'},
            'domains': [{'domain_id': 'x'}],
        })
        assert cfg.fold_seed == 17
        assert not cfg.normalize_inputs
        assert cfg.cka_samples == 'all'
        assert cfg.validate() == []

    def test_bad_sample_choice_and_fold_seed(self):
        cfg = RunConfig.from_dict({
            'subjects_per_fold_seed': -1,
            'cka': {'samples': 'train'},
            'domains': [{'domain_id': 'x'}],
        })
        errors = cfg.validate()
        assert any('cka.samples' in e for e in errors)
        assert any('subjects_per_fold_seed' in e for e in errors)

    def test_unknown_keys(self):
        with pytest.raises(SpecError):
            RunConfig.from_dict({'sed': 1})
        with pytest.raises(SpecError):
            RunConfig.from_dict({'domains': [{'domain_id': 'x', 'colour': 'red'}]})

    def test_collects_every_error(self):
        cfg = RunConfig.from_dict({
            'fold_count': 1,
            'architecture': {'widths': [4]},
            'cka': {'estimator': 'rbf'},
            'domains': [{'domain_id': 'x'}, {'domain_id': 'x', 'hr_mean': 200}],
        })
        errors = cfg.validate()
        assert any('Duplicate' in e for e in errors)
        assert any('fold_count' in e for e in errors)
        assert any('widths' in e for e in errors)
        assert any('estimator' in e for e in errors)
        assert any('hr_mean' in e for e in errors)

    def test_short_clip_for_stft_window(self):
        cfg = RunConfig.from_dict({'domains': [{'domain_id': 'x', 'clip_seconds': 5}], 'fold_count': 2})
        assert any('STFT window' in e for e in cfg.validate())

    def test_mixed_feature_dims(self):
        cfg = RunConfig.from_dict({'domains': [{'domain_id': 'x'}, {'domain_id': 'y', 'feature_dim': 6}]})
        assert any('feature_dim' in e for e in cfg.validate())


class TestDomainSpec:

    def test_frames(self):
        assert DomainSpec('x', clip_seconds=12.0, fps=30.0).frames == 360

    def test_hr_band(self):
        assert DomainSpec('x', hr_mean=170.0, hr_stddev=5.0).validate()
        assert not DomainSpec('x', hr_mean=165.0, hr_stddev=5.0).validate()

    def test_shift_knobs(self):
        assert DomainSpec('x', confound_amplitude=-1.0).validate()
        assert not DomainSpec('x', confound_amplitude=4.0, sensor_angle=-0.5).validate()

    def test_shift_knobs_from_yaml_entry(self):
        cfg = RunConfig.from_dict({'domains': [{'domain_id': 'x', 'confound_amplitude': 4, 'sensor_angle': 0.8}]})
        assert cfg.domains[0].confound_amplitude == 4
        assert cfg.domains[0].sensor_angle == 0.8


class TestProcessConfig:

    def test_threads_from_environment(self, monkeypatch):
        monkeypatch.setenv('DRIFTLENS_THREADS', '3')
        assert Config().THREADS == 3

    def test_invalid_threads(self, monkeypatch):
        monkeypatch.setenv('DRIFTLENS_THREADS', '0')
        assert Config().validate()


class TestShippedConfigs:

    @pytest.mark.parametrize('name', ['example.yaml', 'acceptance.yaml', 'published_like.yaml'])
    def test_valid(self, name):
        cfg = RunConfig.load(os.path.join(REPO_ROOT, 'configs', name))
        assert cfg.validate() == []

    def test_acceptance_grid_shift_grows_along_the_list(self):
        cfg = RunConfig.load(os.path.join(REPO_ROOT, 'configs', 'acceptance.yaml'))
        assert len(cfg.domains) == 5 and cfg.fold_count == 3
        assert all(d.subjects == 20 for d in cfg.domains)
        for knob in ('noise_level', 'hr_mean', 'sensor_angle'):
            values = [getattr(d, knob) for d in cfg.domains]
            assert values == sorted(values) and len(set(values)) == 5, knob

    def test_published_like_follows_summary(self):
        """Clip length, HR mean and HR spread come from the published dataset summary"""
        cfg = RunConfig.load(os.path.join(REPO_ROOT, 'configs', 'published_like.yaml'))
        summary = pd.read_csv(os.path.join(FIXTURES_DIR, 'published_dataset_summary.csv'))
        assert cfg.domain_ids == list(summary['domain'])

        for record in summary.to_dict('records'):
            spec = cfg.domain(record['domain'])
            seconds = parse_ci(record['Time (s)'])[0]
            assert spec.clip_seconds == min(120, max(15, int(seconds + 0.5)))
            assert spec.hr_mean == pytest.approx(parse_ci(record['Avg HR (BPM)'])[0], abs=0.051)
            assert spec.hr_stddev == pytest.approx(parse_ci(record['Avg HR stddev (BPM)'])[0], abs=0.0051)

    def test_fixtures_share_domains(self):
        intra = pd.read_csv(os.path.join(FIXTURES_DIR, 'published_intra_mae.csv'))
        correlations = pd.read_csv(os.path.join(FIXTURES_DIR, 'published_correlations.csv'))
        selection = pd.read_csv(os.path.join(FIXTURES_DIR, 'published_selection.csv'))
        domains = list(intra['domain'])
        assert len(domains) == 21
        assert list(correlations['train_domain']) == domains
        assert [d for d in selection['test_domain'] if d != 'Average'] == domains
        assert all(parse_ci(v)[1] is not None for v in intra['MAE (BPM)'])
