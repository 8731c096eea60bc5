"""Command line stages, their artifacts and exit codes."""

import os

import numpy as np
import pandas as pd
import pytest

from driftlens.cli import (
    EXIT_CONFIG,
    EXIT_IO,
    EXIT_MISSING,
    EXIT_OK,
    exit_code_for,
    fold_plans,
    main,
)
from driftlens.config import RunConfig
from driftlens.exceptions import CoverageError, DumpCorruptionError, LockError, MissingArtifactError, SpecError
from driftlens.synth import generate_domain
from driftlens.utils import LOCK_NAME
from tests.conftest import FIXTURES_DIR, REPO_ROOT

STAGE_ORDER = ('synth', 'train', 'eval', 'metrics', 'correlate', 'select', 'report')


def snapshot(directory):
    files = {}
    for root, _, names in os.walk(directory):
        for name in names:
            path = os.path.join(root, name)
            with open(path, 'rb') as f:
                files[os.path.relpath(path, directory)] = f.read()
    return files


@pytest.fixture(scope='module')
def pipeline(tmp_path_factory):
    """Full pipeline on two small domains, run stage by stage"""
    tmp_path = tmp_path_factory.mktemp('pipeline')
    out = tmp_path / 'run'
    config = tmp_path / 'run.yaml'
    config.write_text(f"""
seed: 5
out_dir: {out}
fold_count: 3
architecture:
  widths: [8, 8, 8]
cka:
  batch_size: 32
domains:
  - {{domain_id: clean, subjects: 6, clip_seconds: 12, hr_mean: 75, hr_stddev: 4}}
  - {{domain_id: noisy, subjects: 6, clip_seconds: 12, hr_mean: 95, hr_stddev: 4, noise_level: 1.0, illumination_offset: 2.0}}
""", encoding='utf-8')
    codes = {}
    for stage in STAGE_ORDER:
        extra = {'metrics': ['--maps'], 'report': ['--svg']}.get(stage, [])
        codes[stage] = main([stage, '--config', str(config)] + extra)
    return str(config), str(out), codes


class TestPipeline:

    def test_every_stage_succeeds(self, pipeline):
        _, _, codes = pipeline
        assert codes == {stage: EXIT_OK for stage in STAGE_ORDER}

    def test_artifacts(self, pipeline):
        _, out, _ = pipeline
        expected = [
            'datasets/clean.actv', 'datasets/noisy_truth.csv', 'summary_stats.csv',
            'models/clean_f0.json', 'models/noisy_f2.json',
            'eval/mae_long.csv', 'eval/mae_matrix.csv', 'eval/intra_mae.csv',
            'metrics/ds_diff_long.csv', 'metrics/ds_sim_matrix.csv', 'metrics/model_sim_long.csv',
            'correlation.csv', 'selection.csv', 'selection_summary.csv', 'selection_residuals.csv',
            'selection_choices.csv', 'report/mae_heatmap.csv', 'report/ds_sim_heatmap.svg',
            'report/training_domain_medians.csv', 'report/selection_residuals.svg',
        ]
        for name in expected:
            assert os.path.exists(os.path.join(out, name)), name
        assert not os.path.exists(os.path.join(out, LOCK_NAME))
        assert len(os.listdir(os.path.join(out, 'models'))) == 6
        assert os.listdir(os.path.join(out, 'metrics', 'maps'))
        assert [n for n in os.listdir(os.path.join(out, 'report')) if n.startswith('cka_map_') and n.endswith('.svg')]

    def test_training_domain_medians(self, pipeline):
        _, out, _ = pipeline
        medians = pd.read_csv(os.path.join(out, 'report', 'training_domain_medians.csv'))
        assert sorted(medians['train_domain']) == ['clean', 'noisy']
        for kind in ('mae', 'ds_diff', 'ds_sim', 'model_sim'):
            assert sorted(medians[f"{kind}_rank"]) in ([1, 2], [1, 1])

    def test_mae_table(self, pipeline):
        _, out, _ = pipeline
        mae = pd.read_csv(os.path.join(out, 'eval', 'mae_long.csv'))
        assert len(mae) == 2 * 2 * 3
        assert (mae['value'] >= 0).all()
        intra = pd.read_csv(os.path.join(out, 'eval', 'intra_mae.csv'))
        diagonal = mae[mae['train_domain'] == mae['test_domain']]
        clean = diagonal[diagonal['train_domain'] == 'clean']['value'].mean()
        assert intra.loc[intra['domain'] == 'clean', 'MAE (BPM)'].item().startswith(f"{clean:.3f}")

    def test_metric_identities_survive_files(self, pipeline):
        _, out, _ = pipeline
        ds_diff = pd.read_csv(os.path.join(out, 'metrics', 'ds_diff_long.csv'))
        diagonal = ds_diff[ds_diff['train_domain'] == ds_diff['test_domain']]
        assert (diagonal['value'] == 0.0).all()
        model_sim = pd.read_csv(os.path.join(out, 'metrics', 'model_sim_long.csv'))
        diagonal = model_sim[model_sim['train_domain'] == model_sim['test_domain']]
        np.testing.assert_allclose(diagonal['value'], 1.0, atol=1e-6)

    def test_heatmap_grid(self, pipeline):
        _, out, _ = pipeline
        heatmap = pd.read_csv(os.path.join(out, 'report', 'ds_diff_heatmap.csv'), index_col=0)
        assert heatmap.shape == (2, 2)

    def test_rerun_is_byte_identical(self, pipeline):
        config, out, _ = pipeline
        before = snapshot(out)
        for stage in STAGE_ORDER:
            extra = {'metrics': ['--maps'], 'report': ['--svg']}.get(stage, [])
            assert main([stage, '--config', config] + extra) == EXIT_OK
        after = snapshot(out)
        assert sorted(before) == sorted(after)
        for name in before:
            assert before[name] == after[name], name

    def test_all_matches_stagewise(self, pipeline, tmp_path):
        config, out, _ = pipeline
        other = tmp_path / 'again'
        assert main(['all', '--config', config, '--out', str(other), '--maps', '--svg']) == EXIT_OK
        first, second = snapshot(out), snapshot(str(other))
        for name in ('eval/mae_long.csv', 'metrics/ds_diff_long.csv', 'selection.csv', 'report/mae_heatmap.svg'):
            assert first[name] == second[name], name


class TestFoldSplit:

    def test_one_seed_splits_every_domain_alike(self):
        cfg = RunConfig.from_dict({
            'fold_count': 3,
            'domains': [{'domain_id': 'a', 'subjects': 9, 'clip_seconds': 12},
                        {'domain_id': 'b', 'subjects': 9, 'clip_seconds': 12}],
        })
        datasets = {spec.domain_id: generate_domain(spec) for spec in cfg.domains}
        own = fold_plans(cfg, datasets)
        assert own['a'] != own['b']
        cfg.fold_seed = 4
        shared = fold_plans(cfg, datasets)
        assert shared['a'] == shared['b']


class TestFailures:

    def test_missing_upstream(self, small_config):
        assert main(['train', '--config', small_config]) == EXIT_MISSING

    def test_invalid_config(self, tmp_path):
        config = tmp_path / 'bad.yaml'
        config.write_text("fold_count: 1\ndomains:\n  - {domain_id: x}\n", encoding='utf-8')
        assert main(['synth', '--config', str(config)]) == EXIT_CONFIG

    def test_config_required(self):
        assert main(['synth']) == EXIT_CONFIG

    def test_locked_directory(self, small_config, tmp_path):
        os.makedirs(tmp_path / 'run', exist_ok=True)
        (tmp_path / 'run' / LOCK_NAME).write_text('1')
        assert main(['synth', '--config', small_config]) == EXIT_IO

    def test_exit_code_mapping(self):
        assert exit_code_for(MissingArtifactError('x', 'synth')) == EXIT_MISSING
        assert exit_code_for(CoverageError('gap')) == EXIT_MISSING
        assert exit_code_for(LockError('busy')) == EXIT_IO
        assert exit_code_for(DumpCorruptionError('short')) == EXIT_IO
        assert exit_code_for(SpecError('bad')) == EXIT_CONFIG
        assert exit_code_for(RuntimeError('?')) == 1


class TestFixtures:

    def test_correlate(self, tmp_path):
        assert main(['correlate', '--fixtures', FIXTURES_DIR, '--out', str(tmp_path)]) == EXIT_OK
        frame = pd.read_csv(tmp_path / 'correlation.csv')
        composite = frame[frame['train_domain'] == 'Composite'].iloc[0]
        assert float(composite['ds_diff_r']) == pytest.approx(0.781, abs=0.002)
        assert float(composite['model_sim_r']) == pytest.approx(-0.896, abs=0.002)
        assert float(composite['ds_diff_p']) == pytest.approx(0.00238, abs=5e-6)

    def test_select(self, tmp_path):
        assert main(['select', '--fixtures', FIXTURES_DIR, '--out', str(tmp_path)]) == EXIT_OK
        frame = pd.read_csv(tmp_path / 'selection.csv')
        average = frame[frame['test_domain'] == 'Average'].iloc[0]
        assert average['pct_over_worst'].startswith('0.41')
        summary = pd.read_csv(tmp_path / 'selection_summary.csv')
        assert summary.loc[0, 'median residual (BPM)'] == pytest.approx(-3.182, abs=0.001)

    def test_missing_fixture(self, tmp_path):
        assert main(['select', '--fixtures', str(tmp_path / 'absent.csv'), '--out', str(tmp_path)]) == EXIT_MISSING


@pytest.mark.slow
class TestAcceptanceGrid:
    """Five domains of increasing shift, three folds, swept over five seeds"""

    def test_metric_directions_and_selection(self, tmp_path):
        config = os.path.join(REPO_ROOT, 'configs', 'acceptance.yaml')
        positive_ds_diff = negative_model_sim = 0
        for seed in range(5):
            out = tmp_path / f"seed{seed}"
            assert main(['all', '--config', config, '--seed', str(seed), '--out', str(out)]) == EXIT_OK
            frame = pd.read_csv(out / 'correlation.csv')
            composite = frame[frame['train_domain'] == 'Composite'].iloc[0]
            positive_ds_diff += float(composite['ds_diff_r']) > 0
            negative_model_sim += float(composite['model_sim_r']) < 0

            choices = pd.read_csv(out / 'selection_choices.csv')
            assert choices['chosen_mae'].mean() < choices['worst'].mean(), f"seed {seed}"
        assert positive_ds_diff >= 4
        assert negative_model_sim >= 4
