"""CSV and SVG output for MRSE reports."""

import csv
import logging
import math
from dataclasses import astuple
from pathlib import Path
from typing import Dict, List, Tuple, Union

import matplotlib

matplotlib.use('Agg')  # Non-interactive backend
import matplotlib.pyplot as plt  # noqa: E402

from .replication import ESTIMATORS, MrseReport, MrseRow

logger = logging.getLogger(__name__)

CSV_COLUMNS = ['estimator', 'epsilon', 'm', 'n', 'p', 'alpha', 'mrse', 'stderr']

# line style per estimator; the noise-free baseline is solid
LINE_STYLES: Dict[str, str] = {
    'cq': '--',
    'os': ':',
    'qn': '-.',
    'qn_nodp': '-',
}
LINE_COLORS: Dict[str, str] = {
    'cq': '#1f77b4',
    'os': '#ff7f0e',
    'qn': '#2ca02c',
    'qn_nodp': '#000000',
}

FIGSIZE = (8, 5)
SVG_HASH_SALT = 'robust-qn'


def write_csv(report: MrseReport, path: Union[str, Path]) -> Path:
    """Write ``estimator,epsilon,m,n,p,alpha,mrse,stderr`` rows; an empty report gives a header only."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(CSV_COLUMNS)
        for row in report.rows:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in astuple(row)])
    logger.info(f"Wrote {len(report.rows)} MRSE rows to {path}")
    return path


def read_csv(path: Union[str, Path], grid_kind: str = 'epsilon') -> MrseReport:
    """Parse a file written by :func:`write_csv`."""
    report = MrseReport(grid_kind=grid_kind)
    with open(path, 'r', newline='') as f:
        reader = csv.DictReader(f)
        if reader.fieldnames != CSV_COLUMNS:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        for rec in reader:
            report.rows.append(MrseRow(
                estimator=rec['estimator'],
                epsilon=float(rec['epsilon']),
                m=int(rec['m']),
                n=int(rec['n']),
                p=int(rec['p']),
                alpha=float(rec['alpha']),
                mrse=float(rec['mrse']),
                stderr=float(rec['stderr']),
            ))
    return report


def emit_svg(report: MrseReport, path: Union[str, Path], title: str = "MRSE") -> Path:
    """
    Line chart of MRSE against the grid variable, one line per estimator.

    Private estimators are dashed and the noise-free baseline is solid. Each
    line carries the SVG id ``estimator-<name>``. Estimators with no finite
    values are skipped. The file has no date stamp and fixed element ids, so
    equal reports give equal bytes.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    key = 'epsilon' if report.grid_kind == 'epsilon' else 'm'

    series: Dict[str, List[Tuple[float, float]]] = {}
    for row in report.rows:
        if math.isfinite(row.mrse):
            series.setdefault(row.estimator, []).append((float(getattr(row, key)), row.mrse))

    with matplotlib.rc_context({'svg.hashsalt': SVG_HASH_SALT, 'svg.fonttype': 'none'}):
        plt.figure(figsize=FIGSIZE)
        try:
            for estimator in ESTIMATORS + tuple(e for e in series if e not in ESTIMATORS):
                if estimator not in series:
                    continue
                xs, ys = zip(*sorted(series[estimator]))
                plt.plot(xs, ys, linestyle=LINE_STYLES.get(estimator, ':'),
                         color=LINE_COLORS.get(estimator, '#7f7f7f'), marker='o',
                         linewidth=2, label=estimator, gid=f"estimator-{estimator}")
            plt.xlabel(key)
            plt.ylabel("MRSE")
            plt.ylim(bottom=0)
            plt.title(title)
            if series:
                plt.legend()
            plt.tight_layout()
            plt.savefig(path, format='svg', metadata={'Date': None})
        finally:
            plt.close()

    logger.info(f"Wrote MRSE chart to {path}")
    return path
