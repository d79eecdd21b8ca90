#!/usr/bin/env python3
"""
Robust Quasi-Newton Simulator - Launcher Module

This module contains the SimulatorLauncher class behind the ``robust-qn``
command: argument parsing, configuration layering and the four subcommands.
"""

import argparse
import logging
import os
import sys
import time
from pathlib import Path
from typing import Any, Dict, List, Optional

from rich.console import Console
from rich.table import Table

from . import __version__
from .config_manager import ConfigManager, load_experiment_file
from .exceptions import RobustQNError
from .orchestrator import ProtocolConfig
from .utils import DebugLogger, derive_seed, format_time_duration, parse_number_list, setup_logging

logger = logging.getLogger(__name__)

BANNER = f"""
╔════════════════════════════════════════════════════════════════╗
║                                                                ║
║        ROBUST QUASI-NEWTON SIMULATOR v{__version__:<25}║
║                                                                ║
║     Byzantine-robust DCQ aggregation • Gaussian mechanism      ║
║     Newton and BFGS refinement • Privacy budget ledger         ║
║                                                                ║
╚════════════════════════════════════════════════════════════════╝
"""

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_MISSING_INPUT = 2
EXIT_INTERRUPTED = 130


class SimulatorLauncher:
    """Command-line front end for the simulator."""

    def __init__(self, console: Optional[Console] = None):
        self.console = console or Console()
        self.config_manager: Optional[ConfigManager] = None

    def build_parser(self) -> argparse.ArgumentParser:
        common = argparse.ArgumentParser(add_help=False)
        common.add_argument('--config', help="key=value experiment file")
        common.add_argument('--framework-config', help="YAML framework configuration")
        common.add_argument('--seed', type=int, help="master seed")
        common.add_argument('--out', help="output directory")
        common.add_argument('--no-dp', action='store_true', help="disable the Gaussian mechanism")
        common.add_argument('--variant', choices=['standard', 'unreliable-center'])
        common.add_argument('--log-level', choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'])
        common.add_argument('--quiet', action='store_true', help="suppress the banner")

        parser = argparse.ArgumentParser(
            prog='robust-qn',
            description="Byzantine-robust, differentially private distributed M-estimation",
        )
        parser.add_argument('--version', action='version', version=f"%(prog)s {__version__}")
        sub = parser.add_subparsers(dest='command', required=True)

        sim = sub.add_parser('simulate', parents=[common], help="synthetic MRSE grid runs")
        sim.add_argument('--grid-kind', choices=['epsilon', 'm'], default='epsilon')
        sim.add_argument('--grid', help="comma separated grid values, e.g. 4,12,30")
        sim.add_argument('--reps', type=int, help="replicates per grid point")
        sim.add_argument('--export-trace', action='store_true',
                         help="also write transcript.csv and ledger.csv of replicate 0")

        mnist = sub.add_parser('mnist', parents=[common], help="MNIST digit-pair classifiers")
        mnist.add_argument('--images', help="training images IDX file")
        mnist.add_argument('--labels', help="training labels IDX file")
        mnist.add_argument('--pair', default='8,9', help="two digits, e.g. 8,9")
        mnist.add_argument('--features', help="column indices kept after the zero filter")
        mnist.add_argument('--train-size', type=int)
        mnist.add_argument('--train-fraction', type=float)
        mnist.add_argument('--machines', type=int, help="machines holding training data (default 10)")
        mnist.add_argument('--alpha', type=float, help="Byzantine fraction (default 0.1)")
        mnist.add_argument('--epsilon', type=float, help="total privacy budget (default 30)")

        demo = sub.add_parser('dcq-demo', parents=[common], help="DCQ efficiency Monte Carlo")
        demo.add_argument('--M', type=int, default=2001, help="values per aggregation")
        demo.add_argument('--K', type=int, default=10, help="composite quantile levels")
        demo.add_argument('--reps', type=int, default=5000)

        sub.add_parser('privacy-audit', parents=[common], help="noise-plan and composition tables")
        return parser

    def run(self, argv: Optional[List[str]] = None) -> int:
        args = self.build_parser().parse_args(argv)
        try:
            self._configure(args)
            if not args.quiet:
                self.console.print(BANNER)
            handler = {
                'simulate': self.run_simulate,
                'mnist': self.run_mnist,
                'dcq-demo': self.run_dcq_demo,
                'privacy-audit': self.run_privacy_audit,
            }[args.command]
            return handler(args)
        except KeyboardInterrupt:
            self.console.print("\n[yellow]Interrupted by user[/yellow]")
            return EXIT_INTERRUPTED
        except FileNotFoundError as e:
            self.console.print(f"[red]{e}[/red]")
            return EXIT_MISSING_INPUT
        except RobustQNError as e:
            self.console.print(f"[red]Error:[/red] {e}")
            return EXIT_ERROR

    def _configure(self, args: argparse.Namespace) -> None:
        self.config_manager = ConfigManager(args.framework_config)
        config = self.config_manager.config
        if args.log_level:
            config['logging']['level'] = args.log_level
        setup_logging('robust_qn', config)
        DebugLogger.reset()
        DebugLogger(config)

    def _settings(self, args: argparse.Namespace) -> Dict[str, Any]:
        """Experiment settings: framework defaults, then the key=value file, then flags."""
        from .experiments import ExperimentConfig

        settings = self.config_manager.get_experiment_defaults()
        if args.config:
            settings.update(load_experiment_file(args.config, ExperimentConfig.field_names()))
        if args.seed is not None:
            settings['master_seed'] = args.seed
        if args.no_dp:
            settings['dp_enabled'] = False
        if args.variant:
            settings['variant'] = args.variant
        if getattr(args, 'reps', None) is not None and args.command == 'simulate':
            settings['reps'] = args.reps
        return settings

    def _out_dir(self, args: argparse.Namespace) -> Path:
        out = Path(args.out) if args.out else self.config_manager.get_output_dir()
        out.mkdir(parents=True, exist_ok=True)
        return out

    def _protocol(self) -> ProtocolConfig:
        return ProtocolConfig.from_config(self.config_manager.get_protocol_config())

    def run_simulate(self, args: argparse.Namespace) -> int:
        from .experiments import ExperimentConfig, default_grid, emit_svg, run_replications, write_csv

        cfg = ExperimentConfig.from_mapping(self._settings(args))
        kind = int if args.grid_kind == 'm' else float
        grid = parse_number_list(args.grid, kind) if args.grid else default_grid(args.grid_kind, cfg)
        out = self._out_dir(args)

        start = time.time()
        report = run_replications(cfg, grid, args.grid_kind, self._protocol())
        csv_path = write_csv(report, out / 'mrse.csv')
        svg_path = emit_svg(report, out / 'mrse.svg',
                            title=f"MRSE vs {args.grid_kind} ({cfg.model}, p={cfg.p})")

        table = Table(title=f"MRSE over {cfg.reps} replicates ({cfg.model}, p={cfg.p}, n={cfg.n})")
        table.add_column(args.grid_kind, justify="right")
        for estimator in ('cq', 'os', 'qn', 'qn_nodp'):
            table.add_column(estimator, justify="right")
        for value in report.grid_values():
            cells = []
            for estimator in ('cq', 'os', 'qn', 'qn_nodp'):
                row = report.lookup(estimator, value)
                cells.append(f"{row.mrse:.4f} ± {row.stderr:.4f}")
            table.add_row(f"{value:g}", *cells)
        self.console.print(table)
        if report.failures:
            self.console.print(f"[yellow]Failed replicates:[/yellow] {report.failures}")

        if args.export_trace:
            self._export_trace(cfg, args.grid_kind, grid[0], out)

        self.console.print(f"Wrote {csv_path} and {svg_path} "
                           f"in {format_time_duration(time.time() - start)}")
        return EXIT_OK

    def _export_trace(self, cfg, grid_kind: str, value: float, out: Path) -> None:
        from .experiments import point_config, run_single

        point = point_config(cfg, grid_kind, value)
        private, _, theta_star = run_single(point, derive_seed(cfg.master_seed, 'replicate', 0),
                                            self._protocol())
        private.transcript.to_csv(out / 'transcript.csv')
        private.ledger.to_csv(out / 'ledger.csv')

        table = Table(title=f"Replicate 0 at {grid_kind}={value:g}")
        table.add_column("quantity")
        table.add_column("value", justify="right")
        for key, val in private.summary(theta_star, cfg.delta_tilde).items():
            table.add_row(key, f"{val:.6g}" if isinstance(val, float) else str(val))
        self.console.print(table)

    def run_mnist(self, args: argparse.Namespace) -> int:
        from .experiments import (MnistConfig, find_mnist_files, global_accuracy, load_idx,
                                  preprocess_pair, train_eval_pair)

        images, labels = args.images, args.labels
        if not (images and labels):
            found = find_mnist_files(os.environ.get('ROBUST_QN_MNIST_DIR', 'data/mnist'))
            if found is None:
                self.console.print("[red]MNIST IDX files not found.[/red] Pass --images and "
                                   "--labels or set ROBUST_QN_MNIST_DIR to a directory holding "
                                   "train-images-idx3-ubyte and train-labels-idx1-ubyte.")
                return EXIT_MISSING_INPUT
            images, labels = found
        for path in (images, labels):
            if not Path(path).exists():
                self.console.print(f"[red]MNIST file not found:[/red] {path}")
                return EXIT_MISSING_INPUT

        digit_a, digit_b = parse_number_list(args.pair, int)
        settings = self._mnist_settings(args)
        features = parse_number_list(args.features, int) if args.features else None
        train_size = args.train_size if args.train_size is not None else 11760

        cfg = MnistConfig.from_settings(settings)
        pair = preprocess_pair(load_idx(images, labels), digit_a, digit_b, features,
                               train_size=train_size, train_fraction=args.train_fraction,
                               seed=cfg.seed)
        score = train_eval_pair(pair, cfg, self._protocol())
        pooled = global_accuracy(pair)

        table = Table(title=f"Digits {digit_a} vs {digit_b} ({pair.p} features, {cfg.variant})")
        for column in ("m", "n", "byzantine", "epsilon", "accuracy", "global"):
            table.add_column(column, justify="right")
        table.add_row(str(cfg.m), str(pair.train.n // cfg.m), str(cfg.byzantine_count),
                      f"{cfg.epsilon_total:g}" if cfg.dp_enabled else "off",
                      f"{100 * score:.2f}%", f"{100 * pooled:.2f}%")
        self.console.print(table)
        return EXIT_OK

    def _mnist_settings(self, args: argparse.Namespace) -> Dict[str, Any]:
        """
        MNIST settings: the key=value file, then flags.

        The framework experiment defaults are tuned for the synthetic models
        and are not applied here; unset keys keep the MnistConfig defaults.
        """
        from .experiments import ExperimentConfig

        settings: Dict[str, Any] = {}
        if args.config:
            settings.update(load_experiment_file(args.config, ExperimentConfig.field_names()))
        if args.seed is not None:
            settings['master_seed'] = args.seed
        if args.no_dp:
            settings['dp_enabled'] = False
        if args.variant:
            settings['variant'] = args.variant
        if args.alpha is not None:
            settings['alpha_byz'] = args.alpha
        if args.epsilon is not None:
            settings['epsilon_total'] = args.epsilon
        if args.machines is not None:
            variant = settings.get('variant', 'standard')
            settings['m'] = args.machines - 1 if variant == 'standard' else args.machines
        return settings

    def run_dcq_demo(self, args: argparse.Namespace) -> int:
        from .experiments import efficiency_monte_carlo

        seed = args.seed if args.seed is not None else self._settings(args)['master_seed']
        report = efficiency_monte_carlo(M=args.M, K=args.K, reps=args.reps, seed=seed)

        table = Table(title=f"Efficiency relative to the mean (M={report.M}, K={report.K}, "
                            f"{report.reps} reps)")
        table.add_column("estimator")
        table.add_column("variance", justify="right")
        table.add_column("var(mean) / var", justify="right")
        table.add_row("mean", f"{report.var_mean:.3e}", "1.0000")
        table.add_row("median", f"{report.var_median:.3e}", f"{report.median_ratio:.4f}")
        table.add_row("dcq", f"{report.var_dcq:.3e}", f"{report.dcq_ratio:.4f}")
        self.console.print(table)
        self.console.print(f"D_K = {report.dk:.6f}, 1/D_K = {report.asymptotic_ratio:.4f}")
        return EXIT_OK

    def run_privacy_audit(self, args: argparse.Namespace) -> int:
        from .experiments import ExperimentConfig, privacy_audit, write_audit_csv

        cfg = ExperimentConfig.from_mapping(self._settings(args))
        audit = privacy_audit(cfg)
        path = write_audit_csv(audit, self._out_dir(args) / 'privacy_audit.csv')

        for title, section in (("Noise scales", audit.noise_scales),
                               (f"Composition over {cfg.rounds} rounds", audit.composition),
                               ("Empirical privacy loss", audit.empirical)):
            table = Table(title=f"{title} (p={cfg.p}, n={cfg.n}, epsilon={cfg.epsilon_total:g})")
            table.add_column("name")
            table.add_column("value", justify="right")
            for name, value in section:
                table.add_row(name, f"{value:.6g}")
            self.console.print(table)
        self.console.print(f"Wrote {path}")
        return EXIT_OK


def main(argv: Optional[List[str]] = None) -> None:
    """Main entry point"""
    sys.exit(SimulatorLauncher().run(argv))


if __name__ == "__main__":
    main()
