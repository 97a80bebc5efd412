"""Named experiment pipelines: one library pipeline per experiment name."""

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from doob_meyer.doob import doob_decompose_discrete, ui_diagnostics
from doob_meyer.filtered_space import IDENTITY_TOL, FiniteFilteredSpace, StoppingTime, as_time
from doob_meyer.instance import read_instance
from doob_meyer.komlos import komlos_extract
from doob_meyer.limit import (
    convergence_curve,
    decompose_levels,
    predictability_check,
    tail_levels,
)
from doob_meyer.processes import (
    AdaptedProcess,
    GroundTruthPair,
    binary_tree,
    class_d_sup,
    gen_ground_truth,
    gen_squared_walk,
    hitting_time,
    is_submartingale,
    max_deviation,
    random_space,
)

from .config import ConfigError, ExperimentConfig, StoppingSpec
from .reports import CsvReport, JsonReport, Report

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class Setup:
    """A loaded or generated instance; ``truth`` is set for ground-truth generators."""

    seed: int | None
    space: FiniteFilteredSpace
    S: AdaptedProcess | None
    truth: GroundTruthPair | None = None


@dataclass
class ExperimentResult:
    name: str
    reports: list[Report] = field(default_factory=list)
    failures: list[str] = field(default_factory=list)
    summary: dict = field(default_factory=dict)


def build_setup(config: ExperimentConfig, seed: int | None = None) -> Setup:
    """
    Load the configured instance file or generate one.

    Ground-truth trees reveal one sign per master step up to ``depth`` signs,
    so depth d has 2**d atoms.
    """
    if config.instance is not None:
        instance = read_instance(config.instance)
        return Setup(seed=None, space=instance.space, S=instance.process)

    seed = config.seed if seed is None else seed
    if config.generator == "squared_walk":
        space = binary_tree(config.depth)
        return Setup(seed=seed, space=space, S=gen_squared_walk(space))
    if config.generator == "random":
        space = random_space(seed, config.depth)
    else:
        space = binary_tree(config.depth, signs=config.depth)
    truth = gen_ground_truth(seed, space, config.predictable_level)
    return Setup(seed=seed, space=space, S=truth.S, truth=truth)


def _require_process(setup: Setup) -> AdaptedProcess:
    if setup.S is None:
        raise ConfigError("the instance has no process")
    return setup.S


def stopping_time(setup: Setup, spec: StoppingSpec) -> StoppingTime:
    S = _require_process(setup)
    if spec.kind == "constant":
        return StoppingTime.constant(setup.space, as_time(spec.value), level=S.level)
    return hitting_time(setup.space, S, float(spec.value))


def run_decompose(config: ExperimentConfig, max_workers: int) -> ExperimentResult:
    """Decompose at every level; recovery against the generating pair where known."""
    result = ExperimentResult(name="decompose")
    rows = []
    worst_recovery = 0.0
    if config.instance is not None:
        seeds = [None]
    else:
        seeds = range(config.seed, config.seed + config.seeds)
    for seed in seeds:
        setup = build_setup(config, seed)
        S = _require_process(setup)
        submartingale = bool(is_submartingale(setup.space, S))
        levels = config.level_list(S.level)
        for pair in decompose_levels(setup.space, S, levels, max_workers=max_workers):
            residual = pair.martingale_residual(setup.space)
            predictable = pair.is_predictable(setup.space)
            increasing = pair.is_increasing(setup.space)
            recovery = None
            if setup.truth is not None and pair.level >= setup.truth.predictable_level:
                recovery = max(
                    max_deviation(setup.space, pair.M, setup.truth.M.sample(pair.level)),
                    max_deviation(setup.space, pair.A, setup.truth.A.sample(pair.level)),
                )
                worst_recovery = max(worst_recovery, recovery)
            passed = (
                residual <= IDENTITY_TOL
                and predictable
                and increasing == submartingale
                and (recovery is None or recovery <= config.tolerance)
            )
            if not passed:
                result.failures.append(
                    f"decomposition fails at seed={seed} level={pair.level}: "
                    f"residual={residual!r} predictable={predictable} "
                    f"increasing={increasing} submartingale={submartingale} recovery={recovery!r}"
                )
            rows.append(
                (
                    seed,
                    pair.level,
                    residual,
                    predictable,
                    pair.min_increment(setup.space),
                    increasing,
                    submartingale,
                    recovery,
                    passed,
                )
            )
    result.reports.append(
        CsvReport(
            name="decompose",
            header=(
                "seed",
                "level",
                "martingale_residual",
                "predictable",
                "min_increment",
                "increasing",
                "submartingale",
                "recovery_error",
                "passed",
            ),
            rows=tuple(rows),
        )
    )
    result.summary = {"rows": len(rows), "max_recovery_error": worst_recovery}
    return result


def run_ui(config: ExperimentConfig, max_workers: int) -> ExperimentResult:
    setup = build_setup(config)
    S = _require_process(setup)
    diagnostics = ui_diagnostics(setup.space, S, config.level_list(S.level), config.thresholds)
    rows = tuple(
        (
            row.level,
            row.c,
            row.tail_mass,
            row.prob_tau_lt_1,
            row.lhs_eq1,
            row.rhs_eq1,
            row.markov_bound,
            row.rhs_eq1_raw,
            row.passed(),
        )
        for row in diagnostics.rows
    )
    result = ExperimentResult(name="ui", failures=diagnostics.failures())
    result.reports.append(
        CsvReport(
            name="ui",
            header=(
                "level",
                "c",
                "tail_mass",
                "prob_tau_lt_1",
                "lhs_eq1",
                "rhs_eq1",
                "markov_bound",
                "rhs_eq1_raw",
                "passed",
            ),
            rows=rows,
        )
    )
    result.summary = {
        "envelope": {format(c, "g"): v for c, v in diagnostics.envelope.items()},
        "class_d_bound": diagnostics.class_d_bound,
        "compensator_shift": diagnostics.compensator_shift,
    }
    result.reports.append(JsonReport(name="ui", data=result.summary))
    return result


def run_komlos(config: ExperimentConfig, max_workers: int) -> ExperimentResult:
    """Komlos extraction on the terminal martingale values of every level."""
    setup = build_setup(config)
    S = _require_process(setup)
    pairs = decompose_levels(setup.space, S, config.level_list(S.level), max_workers=max_workers)
    terminals = [pair.M.at(setup.space, 1) for pair in pairs]
    _, report = komlos_extract(setup.space, terminals, max_workers=max_workers)
    rows = tuple(
        (
            pairs[record.n - 1].level,
            record.n,
            record.norm,
            record.tail_inf,
            record.certificate_gap,
            norm_slack,
            cauchy_slack,
            diameter,
        )
        for record, norm_slack, cauchy_slack, diameter in zip(
            report.records, report.norm_bound_slack, report.cauchy_slack, report.tail_diameters
        )
    )
    result = ExperimentResult(name="komlos", failures=report.failures())
    result.reports.append(
        CsvReport(
            name="komlos",
            header=(
                "level",
                "n",
                "norm",
                "tail_inf",
                "certificate_gap",
                "norm_bound_slack",
                "cauchy_slack",
                "l1_tail_diameter",
            ),
            rows=rows,
        )
    )
    result.reports.append(JsonReport(name="komlos", data=report.to_dict()))
    result.summary = {"sup_inf": report.sup_inf, "levels": len(pairs)}
    return result


def run_convergence(config: ExperimentConfig, max_workers: int) -> ExperimentResult:
    """Full limit pipeline with the predictability and stopping-time checks."""
    setup = build_setup(config)
    S = _require_process(setup)
    taus = {spec.label: stopping_time(setup, spec) for spec in config.stopping_times}
    levels = config.level_list(S.level)
    curve = convergence_curve(
        setup.space,
        S,
        levels,
        stopping_times=taus,
        times=[as_time(t) for t in config.times],
        max_workers=max_workers,
    )
    combined = curve.combined
    tail_from = None
    if setup.truth is not None:
        tail_from = max(tail_levels(levels)[0], setup.truth.predictable_level)
    predictability = predictability_check(setup.space, combined, taus, tail_from=tail_from)

    result = ExperimentResult(name="convergence")
    identity = combined.identity_residual(setup.space)
    if identity > IDENTITY_TOL:
        result.failures.append(f"combined identity off by {identity!r}")
    tau_rows = []
    for label, table in curve.tau_tables.items():
        for row in table:
            if not row.passed():
                result.failures.append(
                    f"stopping-time identity fails for {label} at level={row.level}: "
                    f"identity_gap={row.identity_gap!r} step_gap={row.step_gap!r}"
                )
            tau_rows.append(
                (
                    label,
                    row.level,
                    row.mean_combined,
                    row.sigma_rhs,
                    row.identity_gap,
                    row.reference_mean,
                    row.mean_gap,
                    row.step_gap,
                    row.passed(),
                )
            )
    result.failures.extend(predictability.failures())
    result.failures.extend(curve.komlos.failures())

    result.reports.append(
        CsvReport(
            name="convergence",
            header=(
                "depth",
                "t_or_tau",
                "l1_gap_A",
                "l1_gap_M1",
                "mean_gap_at_tau",
                "per_atom_bound",
            ),
            rows=tuple(
                (
                    row.depth,
                    row.label,
                    row.l1_gap_A,
                    row.l1_gap_M1,
                    row.mean_gap_at_tau,
                    row.per_atom_bound,
                )
                for row in curve.rows
            ),
        )
    )
    result.reports.append(
        CsvReport(
            name="tau",
            header=(
                "tau",
                "level",
                "mean_combined",
                "sigma_rhs",
                "identity_gap",
                "reference_mean",
                "mean_gap",
                "step_gap",
                "passed",
            ),
            rows=tuple(tau_rows),
        )
    )
    result.reports.append(
        CsvReport(
            name="predictability",
            header=("t", "covered", "max_excess", "max_gap_continuous", "max_jump"),
            rows=tuple(
                (row.t, row.covered, row.max_excess, row.max_gap_continuous, row.max_jump)
                for row in predictability.times
            ),
        )
    )
    result.summary = {
        "identity_residual": identity,
        "aleq": predictability.aleq,
        "asame": predictability.asame,
        "pred1": predictability.pred1,
        "uncovered_times": list(predictability.uncovered),
        "tail_levels": list(predictability.tail_levels),
        "sup_gaps": curve.column("sup"),
    }
    result.reports.append(JsonReport(name="convergence", data=result.summary))
    return result


def run_validate(config: ExperimentConfig, max_workers: int) -> ExperimentResult:
    """Load or generate the instance and describe it; schema errors surface as exit 2."""
    setup = build_setup(config)
    space = setup.space
    summary = {
        "atoms": space.n_atoms,
        "depth": space.depth,
        "min_prob": float(np.min(space.probs)),
        "blocks_at_1": space.block_count(1),
    }
    if setup.S is not None:
        check = is_submartingale(space, setup.S)
        summary.update(
            {
                "process_level": setup.S.level,
                "submartingale": check.ok,
                "max_submartingale_violation": check.max_violation,
                "class_d_sup": class_d_sup(space, setup.S),
            }
        )
        if check.ok:
            pair = doob_decompose_discrete(space, setup.S, setup.S.level)
            summary["mean_A1"] = space.expectation(pair.A.at(space, 1))
    result = ExperimentResult(name="validate", summary=summary)
    result.reports.append(JsonReport(name="validate", data=summary))
    return result


EXPERIMENTS: dict[str, Callable[[ExperimentConfig, int], ExperimentResult]] = {
    "decompose": run_decompose,
    "ui": run_ui,
    "komlos": run_komlos,
    "convergence": run_convergence,
    "validate": run_validate,
}


def run(config: ExperimentConfig, max_workers: int = 1) -> ExperimentResult:
    logger.info("running %s", config.experiment)
    return EXPERIMENTS[config.experiment](config, max_workers)
