"""
Result files.

Everything written here is a pure function of the config and seeds: rows are in
config order, floats use pandas' shortest round-trip representation, JSON keys
keep insertion order, and wall-clock times are never written.
"""

from __future__ import annotations

import json
import logging
import os
from pathlib import Path

import pandas as pd

from .runner import ExperimentResult, learning_curves, summarize, visitation_heatmap

logger = logging.getLogger(__name__)


def ensure_output_dir(path: Path) -> Path:
    """Create ``path`` if needed and make sure it is writable; raises OSError otherwise."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    if not os.access(path, os.W_OK | os.X_OK):
        raise PermissionError(f'output directory {path} is not writable')
    return path


def write_csv(frame: pd.DataFrame, path: Path) -> None:
    frame.to_csv(path, index=False, lineterminator='\n')


def write_json(data, path: Path) -> None:
    Path(path).write_text(json.dumps(data, indent=2, allow_nan=True) + '\n')


def write_experiment(result: ExperimentResult, output_dir: Path) -> list[Path]:
    """Write summary.csv, curves.csv, heatmap.csv (gridworld kinds) and runs/<seed>.json."""
    output_dir = ensure_output_dir(output_dir)
    written = []

    summary = summarize(result.records)
    failures = pd.DataFrame([vars(f) for f in result.failures], columns=['variant', 'seed', 'error', 'slot'])
    if not failures.empty:
        counts = failures.groupby('variant', sort=False).size()
        summary['failures'] = summary['variant'].map(counts).fillna(0).astype(int)
    else:
        summary['failures'] = 0
    write_csv(summary, output_dir / 'summary.csv')
    written.append(output_dir / 'summary.csv')

    write_csv(learning_curves(result.records), output_dir / 'curves.csv')
    written.append(output_dir / 'curves.csv')

    if result.config.kind.startswith('gridworld') and result.records:
        write_csv(visitation_heatmap(result.records, result.config.gridworld.size), output_dir / 'heatmap.csv')
        written.append(output_dir / 'heatmap.csv')

    runs_dir = ensure_output_dir(output_dir / 'runs')
    for slot, (occurrence, seed) in enumerate(_seed_occurrences(result.config.seeds)):
        name = f'{seed}.json' if occurrence == 0 else f'{seed}_{occurrence}.json'
        records = [r.to_dict() for r, s in zip(result.records, result.slots) if s == slot]
        errors = [{'variant': f.variant, 'error': f.error} for f in result.failures if f.slot == slot]
        write_json({'seed': seed, 'records': records, 'failures': errors}, runs_dir / name)
        written.append(runs_dir / name)

    logger.info('wrote %d result files to %s', len(written), output_dir)
    return written


def _seed_occurrences(seeds: list[int]) -> list[tuple[int, int]]:
    seen: dict[int, int] = {}
    ordered = []
    for seed in seeds:
        ordered.append((seen.get(seed, 0), seed))
        seen[seed] = seen.get(seed, 0) + 1
    return ordered


def write_report(report: dict, output_dir: Path, name: str = 'report.json') -> Path:
    output_dir = ensure_output_dir(output_dir)
    write_json(report, output_dir / name)
    return output_dir / name
