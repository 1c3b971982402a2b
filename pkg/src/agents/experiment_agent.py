from typing import Any, Callable, Dict, List, Optional, Tuple
import logging
from pathlib import Path
from datetime import datetime

import numpy as np
import pandas as pd

from ..core.errors import MCGDError
from ..core.experiment_protocols import (
    BuildChainResponse, ConditionCheck, ExperimentConfig, ExperimentKind, ExperimentResponse,
    MixingAnalysisResponse, RunOutcome, ValidationReport,
)
from ..core.markov_chain import (
    TransitionMatrix, classify_chain, read_transition_matrix, write_transition_matrix,
)
from ..core.random_streams import Stream
from ..tools.chain_builders import build_chain_pair
from ..tools.data_gen import (
    collect_ar_samples, dataset_frame, finite_surrogate, make_ar_stream, make_node_dataset,
    node_least_squares, sample_components,
)
from ..tools.mcgd_solver import (
    Condition, RunRecord, Setting, iterations_for_budget, run_mcgd, run_mcgd_stream, run_sgdt,
    run_sgdt_stream, run_summary, validate_noise, validate_schedule,
)
from ..tools.mixing_analysis import mixing_table
from ..tools.objectives import (
    FeasibleSet, FiniteSumObjective, LossFamily, assemble_finite_sum, reference_minimum,
)
from ..tools.result_export import plot_rows, run_file_name, write_frame, write_metadata, write_run

logger = logging.getLogger(__name__)

RunFactory = Callable[[], Tuple[RunRecord, Optional[float]]]


def setting_for(loss: LossFamily) -> Setting:
    return Setting.NONCONVEX if loss == LossFamily.SIGMOID_SQ else Setting.CONVEX


class ExperimentAgent:
    """
    Executes the command-line operations: build a chain pair, analyze mixing
    of a matrix file, validate a configuration, and run an experiment batch.
    A failing run is logged and reported; the rest of the batch continues.
    """

    def __init__(self, config: ExperimentConfig, output_dir: Optional[str] = None):
        self.config = config
        self.output_dir = Path(output_dir or config.output_dir)
        logger.info(f"Experiment agent initialized for {config.experiment.value} -> {self.output_dir}")

    def _feasible_set(self, loss: LossFamily, dim: int) -> FeasibleSet:
        if setting_for(loss) == Setting.CONVEX:
            return FeasibleSet.ball(np.zeros(dim), self.config.ball_radius)
        return FeasibleSet.full_space()

    def _chain_file(self, chain_file: Optional[str]) -> Optional[str]:
        return chain_file or self.config.chain.chain_file

    def validate(self, chain_file: Optional[str] = None) -> ValidationReport:
        """Check step and noise conditions per loss, and ergodicity of a chain file if one is set"""
        report = ValidationReport(valid=True)
        schedule = self.config.schedule.build()
        noise = self.config.noise.build()

        for loss in self.config.losses:
            setting = setting_for(loss)
            for check in (validate_schedule(schedule, setting), validate_noise(noise, setting, schedule)):
                report.checks.append(ConditionCheck(
                    condition=f"{loss.value}:{check.condition.value}",
                    passed=check.valid,
                    detail=check.reason or "",
                ))

        path = self._chain_file(chain_file)
        if path is not None:
            try:
                classification = classify_chain(read_transition_matrix(path))
                report.checks.append(ConditionCheck(
                    condition=Condition.ERGODIC_CHAIN.value,
                    passed=classification.ergodic,
                    detail=f"irreducible={classification.irreducible} aperiodic={classification.aperiodic} "
                           f"periods={list(classification.period_per_state)}",
                ))
            except (MCGDError, OSError) as e:
                report.errors.append(f"{path}: {e}")

        report.valid = not report.failures and not report.errors
        for failure in report.failures:
            logger.warning(f"Condition {failure.condition} fails: {failure.detail}")
        return report

    def build_chain(self, seed: Optional[int] = None) -> BuildChainResponse:
        """Build P and Q for one seed and write them with a metadata sidecar"""
        seed = self.config.seeds[0] if seed is None else seed
        settings = self.config.chain
        try:
            pair = build_chain_pair(
                settings.n, seed, edge_prob=settings.edge_prob, num_cycles=settings.num_cycles,
                cycle_len=settings.cycle_len, w0_factor=settings.w0_factor,
            )
            p_file = write_transition_matrix(pair.p, self.output_dir / f"chain_P_seed{seed}.txt")
            q_file = write_transition_matrix(pair.q, self.output_dir / f"chain_Q_seed{seed}.txt")
            metadata_file = write_metadata({
                "seed": seed,
                "n": settings.n,
                "edge_prob": settings.edge_prob,
                "d_max": pair.graph.d_max,
                "w0": pair.overlay.w0,
                "cycles": [list(c) for c in pair.overlay.cycles],
                "lambda2_P": pair.lambda2_p,
                "lambda2_Q": pair.lambda2_q,
                "P_reversible": pair.p_reversible,
                "Q_reversible": pair.q_reversible,
                "stationary_Q": pair.stationary_q,
            }, self.output_dir / f"chain_metadata_seed{seed}.json")
        except (MCGDError, ValueError, OSError) as e:
            logger.error(f"Chain build failed for seed {seed}: {e}")
            return BuildChainResponse(success=False, error_message=str(e))

        return BuildChainResponse(
            success=True,
            p_file=str(p_file),
            q_file=str(q_file),
            metadata_file=str(metadata_file),
            lambda2_p=pair.lambda2_p,
            lambda2_q=pair.lambda2_q,
        )

    def analyze_mixing(self, matrix_file: str, k_max: int) -> MixingAnalysisResponse:
        try:
            chain = read_transition_matrix(matrix_file)
            table = mixing_table(chain, k_max)
            csv_file = write_frame(table, self.output_dir / f"mixing_{Path(matrix_file).stem}.csv")
        except (MCGDError, ValueError, OSError) as e:
            logger.error(f"Mixing analysis failed for {matrix_file}: {e}")
            return MixingAnalysisResponse(success=False, error_message=str(e))
        return MixingAnalysisResponse(success=True, csv_file=str(csv_file), rows=len(table))

    # Run construction

    def _ar_runs(self, loss: LossFamily, seed: int) -> List[Tuple[str, RunFactory]]:
        cfg = self.config
        feasible = self._feasible_set(loss, cfg.ar_dimension)
        eval_stream = make_ar_stream(cfg.ar_dimension, seed, cfg.ar_flip_prob, noise_stream=Stream.AR_EVAL)
        features, labels = collect_ar_samples(eval_stream, cfg.ar_eval_samples)
        evaluation = assemble_finite_sum(sample_components(loss, features, labels), feasible,
                                         n_samples=cfg.estimate_samples, seed=seed, name=f"ar_{loss.value}")
        f_star = self._reference(evaluation, feasible, loss)
        if cfg.dump_datasets:
            write_frame(dataset_frame(features, labels),
                        self.output_dir / f"dataset_ar_{loss.value}_seed{seed}.csv")

        schedule = cfg.schedule.build()
        noise = cfg.noise.build()

        def mcgd() -> Tuple[RunRecord, Optional[float]]:
            stream = make_ar_stream(cfg.ar_dimension, seed, cfg.ar_flip_prob)
            return run_mcgd_stream(loss, stream, evaluation, feasible, schedule, noise, cfg.iterations,
                                   seed=seed, log_every=cfg.log_every, unsafe=cfg.unsafe), f_star

        def sgdt(T: int) -> RunFactory:
            def run() -> Tuple[RunRecord, Optional[float]]:
                stream = make_ar_stream(cfg.ar_dimension, seed, cfg.ar_flip_prob)
                return run_sgdt_stream(loss, stream, evaluation, feasible, schedule, T,
                                       iterations_for_budget(cfg.iterations, T), seed=seed,
                                       log_every=max(1, cfg.log_every // T), unsafe=cfg.unsafe), f_star
            return run

        return [("mcgd", mcgd)] + [(f"sgd{T}", sgdt(T)) for T in cfg.T_list]

    def _finite_objective(self, loss: LossFamily, m: int, seed: int) -> Tuple[FiniteSumObjective, FeasibleSet]:
        cfg = self.config
        d = cfg.dataset_dimension
        feasible = self._feasible_set(loss, d)
        if loss == LossFamily.LEAST_SQUARES:
            dataset = make_node_dataset(m, d, seed)
            components = node_least_squares(dataset)
            if cfg.dump_datasets:
                write_frame(dataset_frame(dataset.features, dataset.labels, dataset.beta_star),
                            self.output_dir / f"dataset_nodes_seed{seed}.csv")
        else:
            components = finite_surrogate(loss, m, d, seed, flip_prob=cfg.ar_flip_prob)
        objective = assemble_finite_sum(components, feasible, n_samples=cfg.estimate_samples,
                                        seed=seed, name=f"{loss.value}_M{m}")
        return objective, feasible

    def _reference(self, objective: FiniteSumObjective, feasible: FeasibleSet,
                   loss: LossFamily) -> Optional[float]:
        if setting_for(loss) != Setting.CONVEX:
            return None
        _, f_star = reference_minimum(objective, feasible, max_iter=self.config.reference_max_iter, strict=False)
        return f_star

    def _finite_chain_runs(self, loss: LossFamily, seed: int, chain: TransitionMatrix,
                           chain_id: str, include_sgdt: bool,
                           label: str = "mcgd") -> List[Tuple[str, RunFactory]]:
        cfg = self.config
        objective, feasible = self._finite_objective(loss, chain.size, seed)
        f_star = self._reference(objective, feasible, loss)
        schedule = cfg.schedule.build()
        noise = cfg.noise.build()
        start = cfg.chain.start_state

        def mcgd() -> Tuple[RunRecord, Optional[float]]:
            return run_mcgd(objective, feasible, chain, schedule, noise, cfg.iterations,
                            start_state=start, seed=seed, log_every=cfg.log_every,
                            unsafe=cfg.unsafe, chain_id=chain_id), f_star

        def sgdt(T: int) -> RunFactory:
            def run() -> Tuple[RunRecord, Optional[float]]:
                return run_sgdt(objective, feasible, chain, schedule, T,
                                iterations_for_budget(cfg.iterations, T), start_state=start, seed=seed,
                                log_every=max(1, cfg.log_every // T), unsafe=cfg.unsafe,
                                chain_id=chain_id), f_star
            return run

        runs = [(label, mcgd)]
        if include_sgdt:
            runs += [(f"sgd{T}", sgdt(T)) for T in cfg.T_list]
        return runs

    def _planned_runs(self, loss: LossFamily, seed: int, metadata: Dict[str, Any]) -> List[Tuple[str, RunFactory]]:
        cfg = self.config
        if cfg.experiment == ExperimentKind.AR_COMPARISON:
            return self._ar_runs(loss, seed)

        if cfg.experiment == ExperimentKind.CHAIN_COMPARISON:
            settings = cfg.chain
            pair = build_chain_pair(
                settings.n, seed, edge_prob=settings.edge_prob, num_cycles=settings.num_cycles,
                cycle_len=settings.cycle_len, w0_factor=settings.w0_factor,
            )
            metadata[f"seed{seed}"] = {
                "lambda2_P": pair.lambda2_p,
                "lambda2_Q": pair.lambda2_q,
                "stationary_Q": pair.stationary_q,
                "d_max": pair.graph.d_max,
            }
            return (self._finite_chain_runs(loss, seed, pair.p, "reversible", False, "mcgd_reversible")
                    + self._finite_chain_runs(loss, seed, pair.q, "nonreversible", False, "mcgd_nonreversible"))

        if cfg.chain.chain_file:
            chain = read_transition_matrix(cfg.chain.chain_file)
            chain_id = Path(cfg.chain.chain_file).stem
        else:
            chain = build_chain_pair(cfg.chain.n, seed, edge_prob=cfg.chain.edge_prob,
                                     num_cycles=cfg.chain.num_cycles, cycle_len=cfg.chain.cycle_len,
                                     w0_factor=cfg.chain.w0_factor).p
            chain_id = "P"
        return self._finite_chain_runs(loss, seed, chain, chain_id, True)

    def run_experiment(self) -> ExperimentResponse:
        """Run every (loss, method, seed) of the configuration and write results"""
        start_time = datetime.now()
        experiment = self.config.experiment.value

        report = self.validate()
        if not report.valid and not self.config.unsafe:
            errors = [f"{c.condition}: {c.detail}" for c in report.failures] + report.errors
            return ExperimentResponse(success=False, experiment=experiment, errors=errors,
                                      validation_failed=True)

        response = ExperimentResponse(success=True, experiment=experiment)
        plot_data: List[Dict[str, Any]] = []
        metadata: Dict[str, Any] = {"config": self.config.model_dump(mode="json")}

        for seed in self.config.seeds:
            for loss in self.config.losses:
                try:
                    planned = self._planned_runs(loss, seed, metadata)
                except (MCGDError, ValueError) as e:
                    message = f"{loss.value} seed={seed}: setup failed: {e}"
                    logger.error(message)
                    response.errors.append(message)
                    response.runs.append(RunOutcome(experiment, loss.value, "setup", seed, False,
                                                    error_message=str(e)))
                    continue

                for method, factory in planned:
                    outcome = self._execute(experiment, loss, method, seed, factory, plot_data)
                    response.runs.append(outcome)
                    if outcome.csv_file:
                        response.data_files.append(outcome.csv_file)
                    if not outcome.success:
                        response.errors.append(f"{loss.value} {method} seed={seed}: {outcome.error_message}")

        summary = pd.DataFrame([run.to_row() for run in response.runs])
        response.data_files.append(str(write_frame(summary, self.output_dir / "summary.csv")))
        plot_columns = ["experiment", "loss", "method", "seed", "samples_consumed", "metric", "value"]
        response.data_files.append(str(write_frame(pd.DataFrame(plot_data, columns=plot_columns),
                                                   self.output_dir / "plot_data.csv")))
        response.data_files.append(str(write_metadata(metadata, self.output_dir / "metadata.json")))

        response.success = not response.errors
        response.processing_time_seconds = (datetime.now() - start_time).total_seconds()
        logger.info(f"{experiment}: {len(response.runs) - len(response.failed_runs)} runs ok, "
                    f"{len(response.failed_runs)} failed in {response.processing_time_seconds:.1f}s")
        return response

    def _execute(self, experiment: str, loss: LossFamily, method: str, seed: int,
                 factory: RunFactory, plot_data: List[Dict[str, Any]]) -> RunOutcome:
        try:
            record, f_star = factory()
            csv_file = write_run(record, self.output_dir / run_file_name(experiment, loss.value, method, seed))
        except (MCGDError, ValueError, FloatingPointError) as e:
            logger.error(f"Run {loss.value}/{method}/seed{seed} failed: {e}")
            return RunOutcome(experiment, loss.value, method, seed, False, error_message=str(e))

        plot_data.extend(plot_rows(record, experiment, loss.value, method, f_star))
        return RunOutcome(
            experiment, loss.value, method, seed, True, csv_file=str(csv_file),
            summary=run_summary(record, f_star, self.config.target_fractions),
        )
