#!/usr/bin/env python3
"""
Experiment Manager - command line for the MCGD toolkit

Subcommands:
    build-chain     draw the reversible chain P and its non-reversible lift Q
    analyze-mixing  deviation / bound table for a transition matrix file
    validate        check step, noise and chain conditions of a configuration
    run             run an experiment batch and write CSV results

Exit codes: 0 success, 1 validation failure, 2 runtime failure.

Usage: python manage_experiments.py run --config config/ar_comparison.yaml --out results/
"""

import argparse
import logging
import sys
from typing import List, Optional

from pydantic import ValidationError

from src.agents.experiment_agent import ExperimentAgent
from src.core.experiment_protocols import ExperimentConfig, load_experiment_config

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_RUNTIME = 2

logger = logging.getLogger(__name__)


class ExperimentManager:
    """Maps parsed arguments onto ExperimentAgent calls and exit codes"""

    def __init__(self, args: argparse.Namespace):
        self.args = args

    def load_config(self) -> ExperimentConfig:
        config = load_experiment_config(self.args.config) if self.args.config else ExperimentConfig()
        updates = {}
        if self.args.seed is not None:
            updates["seeds"] = [self.args.seed]
        if self.args.unsafe:
            updates["unsafe"] = True
        if self.args.out:
            updates["output_dir"] = self.args.out
        return config.model_copy(update=updates)

    def print_header(self):
        print("\n" + "=" * 60)
        print("MCGD EXPERIMENTS")
        print("=" * 60)

    def print_section(self, title: str):
        print(f"\n{'─' * 50}")
        print(f"{title}")
        print(f"{'─' * 50}")

    def build_chain(self, agent: ExperimentAgent) -> int:
        self.print_section("Building chain pair")
        response = agent.build_chain()
        if not response.success:
            print(f"❌ Chain build failed: {response.error_message}")
            return EXIT_RUNTIME
        print(f"✅ P -> {response.p_file}  |l2(P)| = {response.lambda2_p:.6f}")
        print(f"✅ Q -> {response.q_file}  |l2(Q)| = {response.lambda2_q:.6f}")
        print(f"📄 Metadata -> {response.metadata_file}")
        return EXIT_OK

    def analyze_mixing(self, agent: ExperimentAgent) -> int:
        if not self.args.matrix:
            print("❌ analyze-mixing needs --matrix PATH")
            return EXIT_INVALID
        self.print_section(f"Mixing analysis of {self.args.matrix}")
        response = agent.analyze_mixing(self.args.matrix, self.args.k_max)
        if not response.success:
            print(f"❌ Mixing analysis failed: {response.error_message}")
            return EXIT_RUNTIME
        print(f"✅ {response.rows} rows -> {response.csv_file}")
        return EXIT_OK

    def validate(self, agent: ExperimentAgent) -> int:
        self.print_section("Validating configuration")
        report = agent.validate(self.args.chain)
        for check in report.checks:
            mark = "✅" if check.passed else "❌"
            print(f"{mark} {check.condition} {check.detail}".rstrip())
        for error in report.errors:
            print(f"❌ {error}")
        return EXIT_OK if report.valid else EXIT_INVALID

    def run(self, agent: ExperimentAgent) -> int:
        self.print_section(f"Running {agent.config.experiment.value}")
        response = agent.run_experiment()
        if response.validation_failed:
            for error in response.errors:
                print(f"❌ {error}")
            return EXIT_INVALID
        ok = len(response.runs) - len(response.failed_runs)
        print(f"✅ {ok} runs completed, {len(response.failed_runs)} failed "
              f"({response.processing_time_seconds:.1f}s)")
        for error in response.errors:
            print(f"❌ {error}")
        print(f"📄 Results in {agent.output_dir}")
        return EXIT_OK if response.success else EXIT_RUNTIME

    def execute(self) -> int:
        try:
            config = self.load_config()
        except (OSError, ValueError, ValidationError) as e:
            print(f"❌ Invalid configuration: {e}")
            return EXIT_INVALID

        self.print_header()
        agent = ExperimentAgent(config)
        handlers = {
            "build-chain": self.build_chain,
            "analyze-mixing": self.analyze_mixing,
            "validate": self.validate,
            "run": self.run,
        }
        try:
            return handlers[self.args.command](agent)
        except OSError as e:
            print(f"❌ Cannot write results: {e}")
            return EXIT_RUNTIME


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Markov chain gradient descent experiments")
    parser.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    subparsers = parser.add_subparsers(dest="command", required=True)

    for name, help_text in [
        ("build-chain", "build the reversible chain and its non-reversible lift"),
        ("analyze-mixing", "tabulate deviation from stationarity and mixing bounds"),
        ("validate", "check convergence conditions of a configuration"),
        ("run", "run an experiment and write CSV results"),
    ]:
        sub = subparsers.add_parser(name, help=help_text)
        sub.add_argument("--config", help="YAML experiment configuration")
        sub.add_argument("--out", help="output directory (overrides output_dir)")
        sub.add_argument("--seed", type=int, help="run a single seed instead of the configured list")
        sub.add_argument("--unsafe", action="store_true", help="run even if convergence conditions fail")
        if name == "analyze-mixing":
            sub.add_argument("--matrix", help="transition matrix text file")
            sub.add_argument("--k-max", type=int, default=50, help="largest power to tabulate")
        if name == "validate":
            sub.add_argument("--chain", help="transition matrix file to check for ergodicity")
        else:
            sub.set_defaults(chain=None)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    return ExperimentManager(args).execute()


if __name__ == "__main__":
    sys.exit(main())
