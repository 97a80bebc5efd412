"""Convex combinations of refining decompositions and their limits.

Every quantity here is measured against the decomposition of S on its own
(master) grid, the terminal object of the refinement on a finite space.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import Mapping, Sequence

import numpy as np

from .doob import DoobPair, doob_decompose_discrete, extend_compensator_step, extend_martingale
from .filtered_space import (
    IDENTITY_TOL,
    DyadicGrid,
    FiniteFilteredSpace,
    StoppingTime,
    TimeLike,
    checked_stopping_time,
    evaluate_at_stopping_time,
    format_time,
)
from .komlos import ConvexWeights, KomlosReport, komlos_extract
from .processes import AdaptedProcess

logger = logging.getLogger(__name__)

RECOVERY_TOL = 1e-10
JUMP_THRESHOLD = 1e-9


class WeightSupportError(ValueError):
    """Weights do not match the positions of the level list."""


def _combine(weights: ConvexWeights, processes: Sequence[AdaptedProcess]) -> AdaptedProcess:
    chosen = processes[weights.start - 1 : weights.stop]
    values = tuple(
        weights.weights @ np.stack([p.values[k] for p in chosen])
        for k in range(len(chosen[0].values))
    )
    return AdaptedProcess(level=chosen[0].level, values=values)


@dataclass(frozen=True, eq=False)
class CombinedProcesses:
    """
    Per level n_i of ``levels``: the decomposition, its extensions to the
    master grid and the combinations with the weights of position i.

    ``reference`` is the decomposition of S on the master grid. The limit
    candidate M is the terminal value of the last combined martingale;
    ``limit_martingale`` is E[M | F_t] and ``limit_compensator`` is
    S - E[M | F_t].
    """

    levels: tuple[int, ...]
    S: AdaptedProcess = field(repr=False)
    pairs: tuple[DoobPair, ...] = field(repr=False)
    weights: tuple[ConvexWeights, ...] = field(repr=False)
    martingales: tuple[AdaptedProcess, ...] = field(repr=False)
    compensators: tuple[AdaptedProcess, ...] = field(repr=False)
    combined_M: tuple[AdaptedProcess, ...] = field(repr=False)
    combined_A: tuple[AdaptedProcess, ...] = field(repr=False)
    reference: DoobPair = field(repr=False)

    @property
    def master(self) -> int:
        return self.S.level

    @cached_property
    def limit_martingale(self) -> AdaptedProcess:
        return self.combined_M[-1]

    @cached_property
    def limit_compensator(self) -> AdaptedProcess:
        return self.S - self.limit_martingale

    def identity_residual(self, space: FiniteFilteredSpace) -> float:
        """
        max |A_t + M_t - S_t| of the combinations over the grid of their
        coarsest level.
        """
        worst = 0.0
        for n, M, A in zip(self.levels, self.combined_M, self.combined_A):
            for t in DyadicGrid(n).times:
                residual = A.block_values(t) + M.block_values(t) - self.S.block_values(t)
                worst = max(worst, float(np.max(np.abs(residual))))
        return worst


def decompose_levels(
    space: FiniteFilteredSpace, S: AdaptedProcess, levels: Sequence[int], max_workers: int = 1
) -> tuple[DoobPair, ...]:
    """Decompositions of S at every level, in level order."""
    if max_workers <= 1:
        return tuple(doob_decompose_discrete(space, S, n) for n in levels)
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        return tuple(pool.map(lambda n: doob_decompose_discrete(space, S, n), levels))


def build_combined(
    space: FiniteFilteredSpace,
    S: AdaptedProcess,
    levels: Sequence[int],
    weights: Sequence[ConvexWeights],
    pairs: Sequence[DoobPair] | None = None,
) -> CombinedProcesses:
    """
    Combine extended martingales and step-extended compensators with the same
    weights.

    ``weights[i - 1]`` must cover positions i..L of the L levels, as returned
    by :func:`komlos_extract` on the terminal martingale values.

    Raises:
        WeightSupportError: If the weights do not fit the level list
        ValueError: If the levels are not increasing or exceed S's grid
    """
    levels = tuple(levels)
    _check_levels(levels, S)
    if len(weights) != len(levels):
        raise WeightSupportError(f"{len(weights)} weight vectors for {len(levels)} levels")
    for i, w in enumerate(weights, start=1):
        if w.start != i or w.stop != len(levels):
            raise WeightSupportError(
                f"weights for position {i} cover {w.start}..{w.stop}, expected {i}..{len(levels)}"
            )
    if pairs is None:
        pairs = decompose_levels(space, S, levels)
    if [p.level for p in pairs] != list(levels):
        raise ValueError("decompositions do not match the levels")

    master = S.level
    martingales = tuple(extend_martingale(space, p, master) for p in pairs)
    compensators = tuple(extend_compensator_step(space, p, master) for p in pairs)
    return CombinedProcesses(
        levels=levels,
        S=S,
        pairs=tuple(pairs),
        weights=tuple(weights),
        martingales=martingales,
        compensators=compensators,
        combined_M=tuple(_combine(w, martingales) for w in weights),
        combined_A=tuple(_combine(w, compensators) for w in weights),
        reference=doob_decompose_discrete(space, S, master),
    )


def _check_levels(levels: tuple[int, ...], S: AdaptedProcess):
    if not levels:
        raise ValueError("need at least one level")
    if any(b <= a for a, b in zip(levels, levels[1:])):
        raise ValueError(f"levels must be increasing, got {list(levels)}")
    if levels[0] < 1 or levels[-1] > S.level:
        raise ValueError(f"levels must lie in 1..{S.level}, got {list(levels)}")


def round_up_time(t: TimeLike, n: int) -> Fraction:
    """Smallest time of D_n that is >= t."""
    return DyadicGrid(n).round_up(t)


def sigma_round_up(tau: StoppingTime, n: int) -> StoppingTime:
    """sigma_n = inf{t in D_n : t >= tau}, a stopping time on D_n."""
    if n >= tau.level:
        return tau.at_level(n)
    factor = 2 ** (tau.level - n)
    return StoppingTime(level=n, ticks=-(-tau.ticks // factor))


@dataclass(frozen=True)
class TauRow:
    """
    Compensator means at a stopping time for one level.

    ``sigma_rhs`` is sum_j lambda_j E[S_{sigma_j}] - E[M_0] over the levels
    in the support; ``step_gap`` is the largest per-atom difference between
    the combined step extension at tau and the same combination of each
    level's compensator at its round-up.
    """

    level: int
    mean_combined: float
    sigma_rhs: float
    reference_mean: float
    step_gap: float

    @property
    def identity_gap(self) -> float:
        return abs(self.mean_combined - self.sigma_rhs)

    @property
    def mean_gap(self) -> float:
        return abs(self.mean_combined - self.reference_mean)

    def passed(self, tol: float = IDENTITY_TOL) -> bool:
        return self.identity_gap <= tol and self.step_gap <= tol


def compensator_mean_at_tau(
    space: FiniteFilteredSpace, combined: CombinedProcesses, tau: StoppingTime
) -> tuple[TauRow, ...]:
    """
    E[A_tau] of every combination against E[S_sigma] - E[M_0] and the
    reference E[A_tau].

    Raises:
        NotStoppingTimeError: If tau is not a stopping time
        ValueError: If tau is finer than the master grid
    """
    if tau.level > combined.master:
        raise ValueError(f"stopping time on D_{tau.level} is finer than D_{combined.master}")
    checked_stopping_time(space, tau)
    tau = tau.at_level(combined.master)
    start = space.expectation(combined.reference.M.at(space, 0))
    reference_mean = space.expectation(evaluate_at_stopping_time(space, combined.reference.A, tau))

    level_values = []
    level_means = []
    for pair in combined.pairs:
        sigma = sigma_round_up(tau, pair.level)
        level_values.append(evaluate_at_stopping_time(space, pair.A, sigma))
        stopped = evaluate_at_stopping_time(space, combined.S.sample(pair.level), sigma)
        level_means.append(space.expectation(stopped))

    rows = []
    for n, w, A in zip(combined.levels, combined.weights, combined.combined_A):
        at_tau = evaluate_at_stopping_time(space, A, tau)
        chosen = slice(w.start - 1, w.stop)
        at_sigma = w.weights @ np.stack(level_values[chosen])
        rows.append(
            TauRow(
                level=n,
                mean_combined=space.expectation(at_tau),
                sigma_rhs=float(w.weights @ np.array(level_means[chosen])) - start,
                reference_mean=reference_mean,
                step_gap=float(np.max(np.abs(at_tau - at_sigma))),
            )
        )
    return tuple(rows)


@dataclass(frozen=True)
class TimeCheck:
    """Running max of the combined compensators at one master time."""

    t: Fraction
    covered: bool
    max_excess: float
    max_gap_continuous: float
    max_jump: float


@dataclass(frozen=True)
class StoppingCheck:
    label: str
    max_gap: float
    uncovered_atoms: int


@dataclass(frozen=True, eq=False)
class PredictabilityReport:
    """
    Max over the tail levels as a finite stand-in for limsup.

    ``tail_levels`` are the computed levels from ``tail_from`` on. A level
    counts at (t, w) only if t lies on its grid. Times off every tail grid
    are listed in ``uncovered`` and are not evaluated by the flags.
    """

    levels: tuple[int, ...]
    tail_levels: tuple[int, ...]
    times: tuple[TimeCheck, ...]
    stopping: tuple[StoppingCheck, ...]
    tol: float
    jump_threshold: float

    @property
    def uncovered(self) -> tuple[Fraction, ...]:
        return tuple(row.t for row in self.times if not row.covered)

    @property
    def aleq(self) -> bool:
        return all(row.max_excess <= self.tol for row in self.times if row.covered)

    @property
    def asame(self) -> bool:
        return all(row.max_gap_continuous <= self.tol for row in self.times if row.covered)

    @property
    def pred1(self) -> bool:
        return all(row.max_gap <= self.tol for row in self.stopping)

    def failures(self) -> list[str]:
        problems = []
        for row in self.times:
            if row.covered and row.max_excess > self.tol:
                problems.append(
                    f"running max exceeds A at t={format_time(row.t)}: {row.max_excess!r}"
                )
            if row.covered and row.max_gap_continuous > self.tol:
                problems.append(
                    f"running max differs from A at continuity t={format_time(row.t)}: "
                    f"{row.max_gap_continuous!r}"
                )
        for row in self.stopping:
            if row.max_gap > self.tol:
                problems.append(f"running max differs from A at {row.label}: {row.max_gap!r}")
        return problems


def tail_levels(levels: Sequence[int], tail_from: int | None = None) -> tuple[int, ...]:
    """
    Levels ``>= tail_from``, or the last half of ``levels`` when it is None.

    Falls back to the finest level when ``tail_from`` is above all of them.
    """
    levels = tuple(levels)
    if tail_from is None:
        tail_from = levels[len(levels) // 2]
    return tuple(n for n in levels if n >= tail_from) or levels[-1:]


def predictability_check(
    space: FiniteFilteredSpace,
    combined: CombinedProcesses,
    stopping_times: Mapping[str, StoppingTime] | Sequence[StoppingTime] = (),
    tol: float = RECOVERY_TOL,
    jump_threshold: float = JUMP_THRESHOLD,
    tail_from: int | None = None,
) -> PredictabilityReport:
    """
    Compare the running max of the tail combined compensators with the reference A.

    At every master time: the max may not exceed A (beyond ``tol``), and it
    must equal A where A does not jump by ``jump_threshold`` or more. At
    every supplied stopping time it must equal A_tau.

    Only levels ``>= tail_from`` enter the max; by default the last half of
    the computed levels. Coarse combinations of a compensator that is only
    predictable on finer grids are not close to A, so they stay out.
    """
    if len(combined.levels) < 3:
        logger.warning("predictability check on %d levels only", len(combined.levels))
    tail = tail_levels(combined.levels, tail_from)
    tail_A = [A for n, A in zip(combined.levels, combined.combined_A) if n in tail]
    if not isinstance(stopping_times, Mapping):
        stopping_times = {f"tau[{i}]": tau for i, tau in enumerate(stopping_times)}

    reference = combined.reference.A
    master = DyadicGrid(combined.master)
    times = []
    previous = None
    for t in master.times:
        target = reference.at(space, t)
        jump = np.zeros(space.n_atoms) if previous is None else target - previous
        previous = target
        values = [A.at(space, t) for n, A in zip(tail, tail_A) if t in DyadicGrid(n)]
        if not values:
            times.append(
                TimeCheck(
                    t=t,
                    covered=False,
                    max_excess=0.0,
                    max_gap_continuous=0.0,
                    max_jump=float(np.max(jump)),
                )
            )
            continue
        running = np.max(np.stack(values), axis=0)
        continuous = jump < jump_threshold
        gap = np.abs(running - target)
        times.append(
            TimeCheck(
                t=t,
                covered=True,
                max_excess=max(0.0, float(np.max(running - target))),
                max_gap_continuous=float(np.max(gap[continuous])) if continuous.any() else 0.0,
                max_jump=float(np.max(jump)),
            )
        )
    if any(not row.covered for row in times):
        uncovered = sum(not row.covered for row in times)
        logger.warning("%d master times lie on no computed grid", uncovered)

    stopping = []
    for label, tau in stopping_times.items():
        checked_stopping_time(space, tau)
        ticks = tau.at_level(combined.master).ticks
        target = evaluate_at_stopping_time(space, reference, tau)
        running = np.full(space.n_atoms, -np.inf)
        for n, A in zip(tail, tail_A):
            on_grid = ticks % 2 ** (combined.master - n) == 0
            value = evaluate_at_stopping_time(space, A, tau)
            running = np.where(on_grid, np.maximum(running, value), running)
        covered = np.isfinite(running)
        if not covered.all():
            logger.warning(
                "%s: %d atoms stop off every computed grid", label, int((~covered).sum())
            )
        gap = np.abs(running[covered] - target[covered])
        stopping.append(
            StoppingCheck(
                label=label,
                max_gap=float(np.max(gap)) if gap.size else 0.0,
                uncovered_atoms=int((~covered).sum()),
            )
        )
    return PredictabilityReport(
        levels=combined.levels,
        tail_levels=tail,
        times=tuple(times),
        stopping=tuple(stopping),
        tol=tol,
        jump_threshold=jump_threshold,
    )


@dataclass(frozen=True)
class CurveRow:
    """
    One line of the convergence curve.

    ``label`` is a time ``j/2^n``, ``"sup"`` for the max over master times, or
    a stopping-time label; ``mean_gap_at_tau`` is set on stopping-time rows.
    """

    depth: int
    label: str
    l1_gap_A: float
    l1_gap_M1: float
    mean_gap_at_tau: float | None
    per_atom_bound: float


@dataclass(frozen=True, eq=False)
class ConvergenceCurve:
    rows: tuple[CurveRow, ...]
    komlos: KomlosReport = field(repr=False)
    tau_tables: dict[str, tuple[TauRow, ...]] = field(repr=False)
    combined: CombinedProcesses = field(repr=False)

    def column(self, label: str) -> list[float]:
        """l1_gap_A per depth for one label."""
        return [row.l1_gap_A for row in self.rows if row.label == label]

    def mean_gaps(self, label: str) -> list[float]:
        return [row.mean_gap_at_tau for row in self.rows if row.label == label]


def _l1(space: FiniteFilteredSpace, f: np.ndarray) -> float:
    return space.expectation(np.abs(f))


def convergence_curve(
    space: FiniteFilteredSpace,
    S: AdaptedProcess,
    levels: Sequence[int],
    stopping_times: Mapping[str, StoppingTime] | Sequence[StoppingTime] = (),
    times: Sequence[TimeLike] = (1,),
    max_workers: int = 1,
) -> ConvergenceCurve:
    """
    Decompose at every level, pick Komlos weights from the terminal
    martingale values, combine and measure against the master decomposition.

    Rows per level: one per entry of ``times``, a ``"sup"`` row over all master
    times, and one per stopping time. ``per_atom_bound`` turns an L^1 gap into
    a per-atom bound by dividing by the smallest atom probability.
    """
    levels = tuple(levels)
    _check_levels(levels, S)
    if not isinstance(stopping_times, Mapping):
        stopping_times = {f"tau[{i}]": tau for i, tau in enumerate(stopping_times)}

    pairs = decompose_levels(space, S, levels, max_workers=max_workers)
    terminals = [pair.M.at(space, 1) for pair in pairs]
    weights, komlos = komlos_extract(space, terminals, max_workers=max_workers)
    combined = build_combined(space, S, levels, weights, pairs=pairs)
    logger.info("combined %d levels on D_%d", len(levels), combined.master)

    reference = combined.reference
    smallest = float(np.min(space.probs))
    m1 = reference.M.at(space, 1)
    tau_tables = {
        label: compensator_mean_at_tau(space, combined, tau)
        for label, tau in stopping_times.items()
    }

    rows = []
    for i, (n, M, A) in enumerate(zip(levels, combined.combined_M, combined.combined_A)):
        gap_m1 = _l1(space, M.at(space, 1) - m1)
        gaps = {t: _l1(space, A.at(space, t) - reference.A.at(space, t)) for t in A.times}
        entries = [(format_time(t), gaps[A.times[A.grid.index(t)]], None) for t in times]
        entries.append(("sup", max(gaps.values()), None))
        for label, tau in stopping_times.items():
            at_tau = evaluate_at_stopping_time(space, A, tau)
            target = evaluate_at_stopping_time(space, reference.A, tau)
            entries.append((label, _l1(space, at_tau - target), tau_tables[label][i].mean_gap))
        rows.extend(
            CurveRow(
                depth=n,
                label=label,
                l1_gap_A=gap,
                l1_gap_M1=gap_m1,
                mean_gap_at_tau=mean_gap,
                per_atom_bound=gap / smallest,
            )
            for label, gap, mean_gap in entries
        )

    return ConvergenceCurve(
        rows=tuple(rows), komlos=komlos, tau_tables=tau_tables, combined=combined
    )
