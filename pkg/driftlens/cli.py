"""
Batch command line front end.

Each stage reads the artifacts of the stage before it from the run directory
and writes its own, so every stage can be rerun on its own:

    synth -> train -> eval -> metrics -> correlate -> select -> report
"""

import argparse
import dataclasses
import glob
import json
import logging
import os
from typing import Dict, List, Optional, Sequence, Tuple

import pandas as pd

from . import __version__
from .cka import ESTIMATORS
from .config import Config, LOG_TO_FILE, RunConfig
from .exceptions import (
    CoverageError,
    CiUndefinedError,
    DriftLensError,
    DumpFormatError,
    LockError,
    MissingArtifactError,
    SpecError,
    ValidationError,
)
from .hr import BvpSeries, HrSeries, dataset_summary, pooled_mae, stft_hr
from .metrics import DISPLAY_NAMES, DS_DIFF, MAE, METRIC_KINDS, MetricTable, metric_tables
from .report import (
    cka_map_svg,
    correlation_frame,
    intra_mae_frame,
    metric_heatmap,
    read_cka_map_frame,
    read_metric_table,
    residual_boxplot_svg,
    selection_summary_frame,
    training_domain_medians,
    write_cka_map,
    write_frame,
    write_metric_table,
    write_summary_table,
)
from .selection import domain_rows, report_frame, residual_frame, rows_from_frame, run_selection, selection_report
from .stats import CorrelationResult, CorrelationRow, composite_from_published, correlate_metric_vs_mae, p_value_from_r
from .synth import (
    FoldPlan,
    SyntheticDataset,
    ToyModel,
    build_toy_model,
    dataset_from_parts,
    dataset_to_activation_set,
    fit_readout,
    forward_collect,
    generate_domain,
    make_fold_plan,
    model_from_dict,
    model_to_dict,
    truth_frame,
)
from .tensorio import EXTENSION, load_activation_set, save_activation_set
from .utils import atomic_write, directory_lock, run_jobs, setup_logging

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_MISSING = 3
EXIT_IO = 4

CORRELATION_FIXTURE = 'published_correlations.csv'
SELECTION_FIXTURE = 'published_selection.csv'


class RunPaths:
    """Artifact locations inside one run directory"""

    def __init__(self, out_dir):
        self.root = out_dir
        self.datasets = os.path.join(out_dir, 'datasets')
        self.models = os.path.join(out_dir, 'models')
        self.eval = os.path.join(out_dir, 'eval')
        self.metrics = os.path.join(out_dir, 'metrics')
        self.maps = os.path.join(out_dir, 'metrics', 'maps')
        self.report = os.path.join(out_dir, 'report')

    def dataset(self, domain: str) -> str:
        return os.path.join(self.datasets, f"{domain}{EXTENSION}")

    def truth(self, domain: str) -> str:
        return os.path.join(self.datasets, f"{domain}_truth.csv")

    def model(self, domain: str, fold: int) -> str:
        return os.path.join(self.models, f"{domain}_f{fold}.json")

    def metric_long(self, kind: str) -> str:
        directory = self.eval if kind == MAE else self.metrics
        return os.path.join(directory, f"{kind}_long.csv")

    @property
    def summary_stats(self) -> str:
        return os.path.join(self.root, 'summary_stats.csv')

    @property
    def correlation(self) -> str:
        return os.path.join(self.root, 'correlation.csv')

    def selection(self, suffix: str = '') -> str:
        return os.path.join(self.root, f"selection{suffix}.csv")


def require(path: str, producer: str) -> str:
    if not os.path.exists(path):
        raise MissingArtifactError(path, producer)
    return path


def exit_code_for(error: BaseException) -> int:
    """Map an exception to the process exit status"""
    if isinstance(error, (MissingArtifactError, CoverageError)):
        return EXIT_MISSING
    if isinstance(error, (LockError, DumpFormatError, OSError)):
        return EXIT_IO
    if isinstance(error, DriftLensError) and isinstance(error, ValueError):
        return EXIT_CONFIG
    return EXIT_FAILURE


# --- artifact loading ---

def fold_plans(cfg: RunConfig, datasets: Dict[str, SyntheticDataset]) -> Dict[str, FoldPlan]:
    """Per-domain subject splits, seeded by subjects_per_fold_seed when set and by each domain's seed otherwise"""
    def seed_of(d):
        return cfg.domain(d).seed if cfg.fold_seed is None else cfg.fold_seed

    return {d: make_fold_plan(datasets[d].subject_ids, cfg.fold_count, seed_of(d)) for d in cfg.domain_ids}


def load_datasets(cfg: RunConfig, paths: RunPaths) -> Dict[str, SyntheticDataset]:
    datasets = {}
    for domain in cfg.domain_ids:
        acts = load_activation_set(require(paths.dataset(domain), 'synth'))
        truth = pd.read_csv(require(paths.truth(domain), 'synth'), float_precision='round_trip',
                            dtype={'subject_id': str})
        datasets[domain] = dataset_from_parts(acts, truth, cfg.domain(domain).fps)
    logger.info(f"Loaded {len(datasets)} datasets from {paths.datasets}")
    return datasets


def load_models(cfg: RunConfig, paths: RunPaths) -> Dict[Tuple[str, int], ToyModel]:
    models = {}
    for domain in cfg.domain_ids:
        for fold in range(cfg.fold_count):
            with open(require(paths.model(domain, fold), 'train'), 'r', encoding='utf-8') as f:
                models[(domain, fold)] = model_from_dict(json.load(f))
    logger.info(f"Loaded {len(models)} models from {paths.models}")
    return models


def load_table(kind: str, paths: RunPaths) -> MetricTable:
    producer = 'eval' if kind == MAE else f"metrics --kind {kind}"
    return read_metric_table(kind, require(paths.metric_long(kind), producer))


def fixture_path(fixtures: str, name: str) -> str:
    """--fixtures takes either the fixture directory or the CSV itself"""
    path = os.path.join(fixtures, name) if os.path.isdir(fixtures) else fixtures
    if not os.path.exists(path):
        raise MissingArtifactError(path, 'fixtures')
    return path


# --- stages ---

def cmd_synth(cfg: RunConfig, paths: RunPaths, threads: int = 1) -> List[str]:
    """Generate every configured domain, its ground truth and the per-domain summary statistics"""
    logger.info(f"Generating {len(cfg.domains)} domains")
    datasets = run_jobs(lambda domain: generate_domain(cfg.domain(domain)), cfg.domain_ids, threads)

    written = []
    summaries = {}
    for domain, dataset in datasets.items():
        save_activation_set(dataset_to_activation_set(dataset), paths.dataset(domain))
        written.append(paths.dataset(domain))
        written.append(write_frame(truth_frame(dataset), paths.truth(domain), float_format=None))
        try:
            summaries[domain] = dataset_summary(dataset)
        except CiUndefinedError as e:
            logger.warning(f"{domain}: {e}")
            summaries[domain] = e.summary
    written.append(write_summary_table(summaries, paths.summary_stats))
    return written


def cmd_train(cfg: RunConfig, paths: RunPaths, threads: int = 1) -> List[str]:
    """One readout per (domain, fold), trained on the fold's training subjects"""
    datasets = load_datasets(cfg, paths)
    plans = fold_plans(cfg, datasets)
    feature_dims = {d.feature_dim for d in datasets.values()}
    if len(feature_dims) > 1:
        raise SpecError(f"Datasets disagree on feature_dim: {sorted(feature_dims)}")
    base = build_toy_model(cfg.widths, feature_dims.pop(), cfg.model_seed)

    def train(key):
        domain, fold = key
        return fit_readout(base, datasets[domain], plans[domain].train_subjects(fold),
                           cfg.ridge_lambda, model_id=f"{domain}_f{fold}",
                           normalize_inputs=cfg.normalize_inputs)

    keys = [(d, k) for d in cfg.domain_ids for k in range(cfg.fold_count)]
    logger.info(f"Training {len(keys)} models")
    written = []
    for (domain, fold), model in run_jobs(train, keys, threads).items():
        path = paths.model(domain, fold)
        with atomic_write(path, 'w', newline='\n') as f:
            json.dump(model_to_dict(model), f, indent=2, sort_keys=True)
            f.write('\n')
        written.append(path)
    return written


def cmd_eval(cfg: RunConfig, paths: RunPaths, threads: int = 1) -> List[str]:
    """
    Cross-dataset MAE: the fold-k model of every domain scored on the fold-k test subjects of every domain

    Ground-truth HR comes from the same STFT applied to the ground-truth BVP,
    so predicted and true windows align by construction.
    """
    datasets = load_datasets(cfg, paths)
    models = load_models(cfg, paths)
    plans = fold_plans(cfg, datasets)

    def hr_of(samples, fps, subject_id) -> HrSeries:
        return stft_hr(BvpSeries(fps, samples, subject_id), cfg.window_s, cfg.hop_s, cfg.pad_factor)

    truth_hr = {
        (y, r.subject_id): hr_of(r.bvp, ds.fps, r.subject_id)
        for y, ds in datasets.items() for r in ds.subjects
    }

    def score(key):
        x, fold = key
        row = {}
        for y, ds in datasets.items():
            predictions, _ = forward_collect(models[(x, fold)], ds, plans[y].test_subjects(fold))
            row[y] = pooled_mae((hr_of(bvp, ds.fps, sid), truth_hr[(y, sid)]) for sid, bvp in predictions.items())
        return row

    table = MetricTable.empty(MAE, cfg.domain_ids, cfg.fold_count)
    keys = [(x, k) for x in cfg.domain_ids for k in range(cfg.fold_count)]
    logger.info(f"Evaluating {len(keys)} models on {len(datasets)} datasets")
    for (x, fold), row in run_jobs(score, keys, threads).items():
        for y, value in row.items():
            table.set(x, y, fold, value)
    table.require_complete()

    written = list(write_metric_table(table, paths.eval))
    written.append(write_frame(intra_mae_frame(table), os.path.join(paths.eval, 'intra_mae.csv')))
    return written


def cmd_metrics(cfg: RunConfig, paths: RunPaths, kinds: Sequence[str] = METRIC_KINDS, threads: int = 1,
                maps: bool = False) -> List[str]:
    """DS-diff / DS-sim / Model-sim tables over every (train domain, test domain, fold)"""
    datasets = load_datasets(cfg, paths)
    models = load_models(cfg, paths)
    collected = {} if maps else None
    tables = metric_tables(models, datasets, fold_plans(cfg, datasets), kinds, cfg.estimator,
                           cfg.batch_size, threads, maps=collected, samples=cfg.cka_samples)

    written = []
    for table in tables.values():
        written.extend(write_metric_table(table, paths.metrics))
    if collected:
        for (kind, x, y, fold), cka in sorted(collected.items()):
            written.append(write_cka_map(cka, os.path.join(paths.maps, f"{kind}_{x}__{y}_f{fold}.csv")))
        logger.info(f"Wrote {len(collected)} CKA maps to {paths.maps}")
    return written


def _log_correlation(results: Dict[str, CorrelationResult]):
    for kind, result in results.items():
        significant = sum(result.significance().values())
        logger.info(f"{DISPLAY_NAMES.get(kind, kind)}: composite r = {result.composite:.3f}, "
                    f"{significant}/{len(result.rows)} rows with p < {result.threshold:.5f}")


def correlation_from_fixture(path: str, alpha: float = 0.05) -> Dict[str, CorrelationResult]:
    """
    Rebuild correlation results from published r values

    p-values need the number of points behind each r: taken from an `n`
    column when present, otherwise the number of domains.
    """
    frame = pd.read_csv(path)
    frame = frame[frame['train_domain'].astype(str).str.lower() != 'composite']
    kinds = [k for k in METRIC_KINDS if k in frame.columns]
    if not kinds:
        raise SpecError(f"{path}: no metric columns, expected some of {METRIC_KINDS}")
    default_n = len(frame)

    results = {}
    for kind in kinds:
        rs = frame[kind].astype(float).tolist()
        ns = frame['n'].astype(int).tolist() if 'n' in frame.columns else [default_n] * len(rs)
        composite, _, _ = composite_from_published(rs, alpha)
        rows = [CorrelationRow(str(domain), r, p_value_from_r(r, n), n)
                for domain, r, n in zip(frame['train_domain'], rs, ns)]
        results[kind] = CorrelationResult(kind, rows, composite, alpha)
    return results


def cmd_correlate(cfg: Optional[RunConfig], paths: RunPaths, fixtures: Optional[str] = None) -> List[str]:
    """Correlations of each metric with MAE, from the run or from published values"""
    alpha = cfg.alpha if cfg else 0.05
    if fixtures:
        results = correlation_from_fixture(fixture_path(fixtures, CORRELATION_FIXTURE), alpha)
    else:
        mae_table = load_table(MAE, paths)
        kinds = [k for k in METRIC_KINDS if os.path.exists(paths.metric_long(k))]
        if not kinds:
            raise MissingArtifactError(paths.metric_long(DS_DIFF), 'metrics')
        results = {
            kind: correlate_metric_vs_mae(load_table(kind, paths), mae_table, cfg.correlation_include_self, alpha)
            for kind in kinds
        }
    _log_correlation(results)
    return [write_frame(correlation_frame(results), paths.correlation)]


def cmd_select(cfg: Optional[RunConfig], paths: RunPaths, fixtures: Optional[str] = None) -> List[str]:
    """DS-diff model selection scored against worst / average / best, per test domain and averaged"""
    written = []
    if fixtures:
        rows = rows_from_frame(pd.read_csv(fixture_path(fixtures, SELECTION_FIXTURE)))
    else:
        results = run_selection(load_table(DS_DIFF, paths), load_table(MAE, paths),
                                cfg.selection_include_self, cfg.selection_mode)
        rows = domain_rows(results)
        choices = pd.DataFrame(
            [(r.test_domain, r.fold, r.chosen_domain, r.chosen_mae, r.worst, r.average, r.best) for r in results],
            columns=['test_domain', 'fold', 'chosen_domain', 'chosen_mae', 'worst', 'average', 'best'],
        )
        written.append(write_frame(choices, paths.selection('_choices')))

    report = selection_report(rows)
    average = report.average
    logger.info(f"DS-diff selection: {average['pct_over_worst'][0]:.3f} over worst, "
                f"{average['pct_over_average'][0]:.3f} over average, {average['pct_over_best'][0]:.3f} over best")
    logger.info("Median residuals vs worst/average/best: "
                + ', '.join(f"{m:.3f}" for m in report.residual_medians))
    written.append(write_frame(report_frame(report), paths.selection()))
    written.append(write_frame(selection_summary_frame(report), paths.selection('_summary')))
    written.append(write_frame(residual_frame(rows), paths.selection('_residuals')))
    return written


def cmd_report(cfg: RunConfig, paths: RunPaths, svg: bool = False) -> List[str]:
    """
    Fold-mean heatmap CSVs (and SVGs) for MAE and every metric table present,
    the per-training-domain medians with their shift ranking, and with --svg
    the first saved CKA map and the selection residual box plot
    """
    kinds = [k for k in METRIC_KINDS if os.path.exists(paths.metric_long(k))]
    if not kinds:
        raise MissingArtifactError(paths.metric_long(DS_DIFF), 'metrics')

    written = []
    tables = [load_table(kind, paths) for kind in [MAE] + kinds]
    for table in tables:
        written.extend(metric_heatmap(table, paths.report, svg))

    medians = training_domain_medians(tables)
    written.append(write_frame(medians, os.path.join(paths.report, 'training_domain_medians.csv')))
    for table in tables:
        ranked = medians.sort_values(f"{table.kind}_rank")['train_domain'].head(5).tolist()
        logger.info(f"Most severe shift as training domain by median {DISPLAY_NAMES.get(table.kind, table.kind)}: "
                    f"{', '.join(ranked)}")

    if not svg:
        return written
    map_files = sorted(glob.glob(os.path.join(paths.maps, '*.csv')))
    if map_files:
        name = os.path.splitext(os.path.basename(map_files[0]))[0]
        written.append(cka_map_svg(read_cka_map_frame(map_files[0]),
                                   os.path.join(paths.report, f"cka_map_{name}.svg")))
    if os.path.exists(paths.selection('_residuals')):
        residuals = pd.read_csv(paths.selection('_residuals'))
        written.append(residual_boxplot_svg(residuals, os.path.join(paths.report, 'selection_residuals.svg')))
    return written


# --- argument parsing ---

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='driftlens', description='CKA-based domain-shift analytics')
    parser.add_argument('--version', action='version', version=f"%(prog)s {__version__}")

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', help='YAML run configuration')
    common.add_argument('--out', help='Run directory (overrides out_dir)')
    common.add_argument('--seed', type=int, help='Global seed (overrides seed)')
    common.add_argument('--estimator', choices=ESTIMATORS, help='HSIC estimator (overrides cka.estimator)')
    common.add_argument('--batch-size', type=int, help='CKA batch size (overrides cka.batch_size)')
    common.add_argument('-v', '--verbose', action='store_true', help='Debug logging')

    sub = parser.add_subparsers(dest='command', required=True)
    sub.add_parser('synth', parents=[common], help='Generate synthetic domains')
    sub.add_parser('train', parents=[common], help='Train one model per (domain, fold)')
    sub.add_parser('eval', parents=[common], help='Cross-dataset MAE table')

    metrics = sub.add_parser('metrics', parents=[common], help='DS-diff / DS-sim / Model-sim tables')
    metrics.add_argument('--kind', choices=METRIC_KINDS + ('all',), default='all')
    metrics.add_argument('--maps', action='store_true', help='Also dump every CKA map as CSV')

    for name, text in (('correlate', 'Correlate metrics with MAE'), ('select', 'DS-diff model selection')):
        stage = sub.add_parser(name, parents=[common], help=text)
        stage.add_argument('--fixtures', help='Directory (or CSV) of published values to run from')

    report = sub.add_parser('report', parents=[common], help='Heatmap CSVs and SVGs')
    report.add_argument('--svg', action='store_true', help='Also render SVG heatmaps')

    run_all = sub.add_parser('all', parents=[common], help='Run every stage in order')
    run_all.add_argument('--maps', action='store_true')
    run_all.add_argument('--svg', action='store_true')
    return parser


def resolve_config(args) -> Optional[RunConfig]:
    """RunConfig with command-line overrides applied, validated"""
    if not args.config:
        if getattr(args, 'fixtures', None):
            return None
        raise SpecError(f"{args.command} needs --config")

    cfg = RunConfig.load(args.config, seed=args.seed)
    overrides = {}
    if args.out:
        overrides['out_dir'] = args.out
    if args.estimator:
        overrides['estimator'] = args.estimator
    if args.batch_size is not None:
        overrides['batch_size'] = args.batch_size
    cfg = dataclasses.replace(cfg, **overrides)

    errors = cfg.validate()
    if errors:
        logger.error("Configuration errors:")
        for error in errors:
            logger.error(f"  - {error}")
        raise ValidationError(f"{len(errors)} configuration error(s) in {args.config}")
    return cfg


def run_command(args, cfg: Optional[RunConfig], threads: int) -> List[str]:
    out_dir = cfg.out_dir if cfg else (args.out or os.path.join('runs', 'fixtures'))
    paths = RunPaths(out_dir)
    command = args.command

    with directory_lock(out_dir):
        if command == 'synth':
            return cmd_synth(cfg, paths, threads)
        if command == 'train':
            return cmd_train(cfg, paths, threads)
        if command == 'eval':
            return cmd_eval(cfg, paths, threads)
        if command == 'metrics':
            kinds = METRIC_KINDS if args.kind == 'all' else (args.kind,)
            return cmd_metrics(cfg, paths, kinds, threads, args.maps)
        if command == 'correlate':
            return cmd_correlate(cfg, paths, args.fixtures)
        if command == 'select':
            return cmd_select(cfg, paths, args.fixtures)
        if command == 'report':
            return cmd_report(cfg, paths, args.svg)
        if command == 'all':
            written = cmd_synth(cfg, paths, threads)
            written += cmd_train(cfg, paths, threads)
            written += cmd_eval(cfg, paths, threads)
            written += cmd_metrics(cfg, paths, METRIC_KINDS, threads, args.maps)
            written += cmd_correlate(cfg, paths)
            written += cmd_select(cfg, paths)
            written += cmd_report(cfg, paths, args.svg)
            return written
    raise SpecError(f"Unknown command {command}")


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(None, log_to_file=LOG_TO_FILE, level='DEBUG' if args.verbose else None)

    try:
        process = Config()
        errors = process.validate()
        if errors:
            logger.error("Configuration errors:")
            for error in errors:
                logger.error(f"  - {error}")
            return EXIT_CONFIG
        logger.debug(process)

        cfg = resolve_config(args)
        if cfg is not None:
            logger.debug(cfg)
        written = run_command(args, cfg, process.THREADS)
        logger.info(f"{args.command}: {len(written)} artifacts written")
        return EXIT_OK

    except MissingArtifactError as e:
        logger.error(str(e))
        return exit_code_for(e)
    except DriftLensError as e:
        logger.error(f"{args.command} failed: {e}")
        return exit_code_for(e)
    except OSError as e:
        logger.error(f"{args.command} failed: {e}")
        return EXIT_IO
    except Exception as e:
        logger.error(f"Unexpected error in {args.command}: {e}", exc_info=True)
        return EXIT_FAILURE
