"""CSV and SVG emission."""

import numpy as np
import pandas as pd
import pytest

from driftlens.cka import cka_map
from driftlens.hr import SummaryStats
from driftlens.metrics import DS_DIFF, DS_SIM, MAE, MODEL_SIM, MetricTable
from driftlens.report import (
    cka_map_frame,
    cka_map_svg,
    correlation_frame,
    intra_mae_frame,
    metric_heatmap,
    read_cka_map_frame,
    read_metric_table,
    residual_boxplot_svg,
    selection_summary_frame,
    summary_frame,
    training_domain_medians,
    write_cka_map,
    write_metric_table,
)
from driftlens.selection import DomainRow, selection_report
from driftlens.stats import CorrelationResult, CorrelationRow
from tests.conftest import make_acts


def table(kind=DS_DIFF):
    t = MetricTable.empty(kind, ['a', 'b'], 3)
    t.values[:] = np.arange(12, dtype=float).reshape(2, 2, 3) / 7.0
    return t


class TestTables:

    def test_metric_table_files(self, tmp_path):
        long_path, matrix_path = write_metric_table(table(), tmp_path)
        rebuilt = read_metric_table(DS_DIFF, long_path)
        np.testing.assert_allclose(rebuilt.values, table().values, rtol=1e-8)
        matrix = pd.read_csv(matrix_path, index_col=0)
        assert list(matrix.columns) == ['a', 'b']
        assert matrix.loc['b', 'a'] == pytest.approx(table().fold_mean()[1, 0], rel=1e-8)

    def test_rewrite_is_byte_identical(self, tmp_path):
        first, _ = write_metric_table(table(), tmp_path / 'one')
        second, _ = write_metric_table(table(), tmp_path / 'two')
        assert open(first, 'rb').read() == open(second, 'rb').read()

    def test_summary_frame(self):
        summaries = {'x': SummaryStats(3, (30.0, 0.0), (69.2, 6.026), (2.34, 0.352))}
        frame = summary_frame(summaries)
        assert frame.iloc[0].tolist() == ['x', '30.000 ± 0.000', '69.200 ± 6.026', '2.340 ± 0.352']

    def test_intra_mae_uses_diagonal(self):
        frame = intra_mae_frame(table(MAE))
        assert frame['domain'].tolist() == ['a', 'b']
        assert frame.iloc[0, 1].startswith(f"{np.mean([0, 1, 2]) / 7.0:.3f} ± ")

    def test_correlation_frame(self):
        rows = [CorrelationRow('a', 0.9, 0.001, 21), CorrelationRow('b', float('nan'), float('nan'), 21)]
        frame = correlation_frame({DS_DIFF: CorrelationResult(DS_DIFF, rows, 0.9, 0.05)})
        assert list(frame.columns) == ['train_domain', 'ds_diff_r', 'ds_diff_p', 'ds_diff_significant']
        assert frame['train_domain'].tolist() == ['a', 'b', 'Composite']
        assert bool(frame.loc[0, 'ds_diff_significant'])
        assert not bool(frame.loc[1, 'ds_diff_significant'])

    def test_selection_summary(self):
        columns = ('worst', 'average', 'best', 'ds_diff', 'pct_over_worst', 'pct_over_average', 'pct_over_best')
        rows = [DomainRow(name, {c: (v, float('nan')) for c, v in zip(columns, values)})
                for name, values in (('a', (4, 3, 2, 2, .5, 1 / 3, 0)), ('b', (6, 5, 4, 5, 1 / 6, 0, -.25)))]
        frame = selection_summary_frame(selection_report(rows))
        assert frame['case'].tolist() == ['Worst', 'Average', 'Best', 'DS-diff']
        assert frame.loc[0, 'MAE (BPM)'] == '5.000'
        assert frame.loc[0, 'median residual (BPM)'] == '-1.500'
        assert frame.loc[3, 'median residual (BPM)'] == ''


class TestCkaMaps:

    def test_frame_labels(self, rng):
        a = make_acts(rng, n=20, widths=(3, 3), model_id='ma', dataset_id='da')
        b = make_acts(rng, n=20, widths=(2, 2, 2), model_id='mb', dataset_id='db')
        frame = cka_map_frame(cka_map(a, b))
        assert frame.shape == (2, 3)
        assert list(frame.index) == ['layer1', 'layer2']

    def test_csv_and_svg(self, rng, tmp_path):
        acts = make_acts(rng, n=20)
        cka = cka_map(acts, acts)
        write_cka_map(cka, tmp_path / 'map.csv')
        back = read_cka_map_frame(tmp_path / 'map.csv')
        np.testing.assert_allclose(np.diag(back.to_numpy()), 1.0, atol=1e-8)
        assert back.index.name == cka_map_frame(cka).index.name
        cka_map_svg(back, tmp_path / 'map.svg')
        text = (tmp_path / 'map.svg').read_text(encoding='utf-8')
        assert text.lstrip().startswith('<?xml')

    def test_svg_same_from_csv_and_from_map(self, rng, tmp_path):
        acts = make_acts(rng, n=20)
        cka = cka_map(acts, acts)
        write_cka_map(cka, tmp_path / 'map.csv')
        fresh = cka_map_svg(cka_map_frame(cka), tmp_path / 'fresh.svg')
        reread = cka_map_svg(read_cka_map_frame(tmp_path / 'map.csv'), tmp_path / 'reread.svg')
        assert open(fresh, 'rb').read() == open(reread, 'rb').read()


class TestHeatmaps:

    def test_csv_only(self, tmp_path):
        paths = metric_heatmap(table(DS_SIM), tmp_path)
        assert [p.endswith('.csv') for p in paths] == [True]

    def test_svg_is_deterministic(self, tmp_path):
        first = metric_heatmap(table(DS_SIM), tmp_path / 'one', svg=True)[1]
        second = metric_heatmap(table(DS_SIM), tmp_path / 'two', svg=True)[1]
        assert open(first, 'rb').read() == open(second, 'rb').read()


def grid_table(kind, matrix):
    matrix = np.asarray(matrix, dtype=float)
    t = MetricTable.empty(kind, ['a', 'b', 'c'], 2)
    t.values[:] = matrix[:, :, None]
    return t


class TestTrainingDomainMedians:

    def test_medians_over_test_domains(self):
        mae = grid_table(MAE, [[1, 5, 9], [2, 2, 2], [7, 8, 0]])
        frame = training_domain_medians([mae])
        assert list(frame['train_domain']) == ['a', 'b', 'c']
        np.testing.assert_allclose(frame['mae_median'], [5.0, 2.0, 7.0])

    def test_rank_direction(self):
        ds_diff = grid_table(DS_DIFF, [[0, .1, .2], [.3, 0, .4], [.05, .05, 0]])
        model_sim = grid_table(MODEL_SIM, [[1, .9, .8], [.5, 1, .6], [.95, .9, 1]])
        frame = training_domain_medians([ds_diff, model_sim]).set_index('train_domain')
        # most severe shift ranks first: largest DS-diff, smallest similarity
        assert list(frame['ds_diff_rank'].loc[['b', 'a', 'c']]) == [1, 2, 3]
        assert list(frame['model_sim_rank'].loc[['b', 'a', 'c']]) == [1, 2, 3]

    def test_ties_share_a_rank(self):
        frame = training_domain_medians([grid_table(MAE, [[1, 1, 1], [1, 1, 1], [3, 3, 3]])])
        assert list(frame['mae_rank']) == [2, 2, 1]


class TestResidualBoxplot:

    def residuals(self):
        return pd.DataFrame({
            'test_domain': ['a', 'b', 'c', 'd'],
            'vs_worst': [-3.0, -1.5, -4.2, 0.0],
            'vs_average': [-0.5, 0.2, -1.0, 0.1],
            'vs_best': [0.9, 1.1, 0.0, 2.0],
        })

    def test_writes_svg(self, tmp_path):
        path = residual_boxplot_svg(self.residuals(), tmp_path / 'residuals.svg')
        text = open(path, encoding='utf-8').read()
        assert text.lstrip().startswith('<?xml')
        assert '<svg' in text

    def test_deterministic(self, tmp_path):
        first = residual_boxplot_svg(self.residuals(), tmp_path / 'one.svg')
        second = residual_boxplot_svg(self.residuals(), tmp_path / 'two.svg')
        assert open(first, 'rb').read() == open(second, 'rb').read()
