"""
Run every stage for one configuration over several seeds and print the headline numbers.
Useful for checking that the metric directions hold across seeds.

    python scripts/run_pipeline.py configs/acceptance.yaml --seeds 0 1 2 3 4
"""

import argparse
import logging
import os
import sys

# Add the parent directory to the path so we can import from driftlens
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

import pandas as pd

from driftlens.cli import EXIT_OK, main
from driftlens.config import RunConfig
from driftlens.utils import setup_logging

# Set up logging on the root logger; the stages log through it too
setup_logging()
logger = logging.getLogger('run_pipeline')


def run_seed(config, seed, out_root, svg):
    out = os.path.join(out_root, f"seed{seed}")
    args = ['all', '--config', config, '--seed', str(seed), '--out', out]
    if svg:
        args.append('--svg')
    code = main(args)
    if code != EXIT_OK:
        logger.error(f"Seed {seed} failed with exit code {code}")
        return None

    correlation = pd.read_csv(os.path.join(out, 'correlation.csv'))
    composite = correlation[correlation['train_domain'] == 'Composite'].iloc[0]
    choices = pd.read_csv(os.path.join(out, 'selection_choices.csv'))
    return {
        'seed': seed,
        'ds_diff_r': float(composite['ds_diff_r']),
        'ds_sim_r': float(composite['ds_sim_r']),
        'model_sim_r': float(composite['model_sim_r']),
        'selected_mae': choices['chosen_mae'].mean(),
        'worst_mae': choices['worst'].mean(),
        'average_mae': choices['average'].mean(),
        'best_mae': choices['best'].mean(),
    }


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description='Run the full pipeline over several seeds')
    parser.add_argument('config', help='YAML run configuration')
    parser.add_argument('--seeds', type=int, nargs='+', default=[0])
    parser.add_argument('--out', help='Root directory for the per-seed runs (default: out_dir of the config)')
    parser.add_argument('--svg', action='store_true')
    args = parser.parse_args()

    try:
        out_root = args.out or RunConfig.load(args.config).out_dir
        rows = []
        for seed in args.seeds:
            logger.info(f"Running seed {seed}")
            row = run_seed(args.config, seed, out_root, args.svg)
            if row is None:
                sys.exit(1)
            rows.append(row)

        summary = pd.DataFrame(rows)
        print(summary.to_string(index=False, float_format=lambda v: f"{v:.3f}"))
        print(f"\nDS-diff composite > 0 in {int((summary['ds_diff_r'] > 0).sum())}/{len(rows)} seeds")
        print(f"Model-sim composite < 0 in {int((summary['model_sim_r'] < 0).sum())}/{len(rows)} seeds")
        print(f"Selection beats worst case in {int((summary['selected_mae'] < summary['worst_mae']).sum())}/{len(rows)} seeds")

    except KeyboardInterrupt:
        logger.info("Run interrupted by user")
        sys.exit(1)
    except Exception as e:
        logger.error(f"Unexpected error: {str(e)}", exc_info=True)
        sys.exit(1)
