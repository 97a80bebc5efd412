"""Discrete Doob decomposition and uniform-integrability diagnostics.

For a process S sampled on D_n the decomposition S = M + A is

    A_0 = 0,  A_t - A_{t-h} = E[S_t - S_{t-h} | F_{t-h}],  M_t = S_t - A_t

with h = 1/2**n. M is a martingale on D_n, A is predictable, and A is
increasing iff S is a submartingale.
"""

import logging
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from .filtered_space import (
    IDENTITY_TOL,
    DyadicGrid,
    FiniteFilteredSpace,
    StoppingTime,
    checked_stopping_time,
    evaluate_at_stopping_time,
    format_time,
)
from .processes import AdaptedProcess, class_d_sup, is_submartingale, max_deviation

logger = logging.getLogger(__name__)

EQ1_SLACK = 1e-10


class NotSubmartingaleError(ValueError):
    """The input to a submartingale-only diagnostic is not a submartingale."""


@dataclass(frozen=True, eq=False)
class DoobPair:
    """Martingale part M and compensator A of a process sampled on D_level."""

    level: int
    M: AdaptedProcess
    A: AdaptedProcess

    @property
    def S(self) -> AdaptedProcess:
        return self.M + self.A

    def martingale_residual(self, space: FiniteFilteredSpace) -> float:
        """max |E[M_t | F_{t-h}] - M_{t-h}| over atoms and grid times."""
        times = self.M.times
        worst = 0.0
        for k in range(1, len(times)):
            drift = space.project(self.M.values[k], times[k], times[k - 1]) - self.M.values[k - 1]
            worst = max(worst, float(np.max(np.abs(drift))))
        return worst

    def is_predictable(self, space: FiniteFilteredSpace) -> bool:
        """A_t is constant on the blocks of the partition at t - h, exactly."""
        times = self.A.times
        for k in range(1, len(times)):
            values = self.A.at(space, times[k])
            if not space.is_measurable(values, times[k - 1]):
                logger.debug("A is not predictable at t=%s", format_time(times[k]))
                return False
        return True

    def min_increment(self, space: FiniteFilteredSpace) -> float:
        """Smallest per-atom increment A_t - A_{t-h}."""
        times = self.A.times
        smallest = np.inf
        for k in range(1, len(times)):
            previous = space.reindex(self.A.values[k - 1], times[k - 1], times[k])
            smallest = min(smallest, float(np.min(self.A.values[k] - previous)))
        return float(smallest)

    def is_increasing(self, space: FiniteFilteredSpace, tol: float = IDENTITY_TOL) -> bool:
        return self.min_increment(space) >= -tol


def doob_decompose_discrete(space: FiniteFilteredSpace, S: AdaptedProcess, n: int) -> DoobPair:
    """
    Doob decomposition of the sampled process (S_t) for t in D_n.

    A process given on a finer grid is sampled down to D_n first.

    Raises:
        NotAdaptedError: If S does not fit the partitions of the space
        ValueError: If S lives on a grid coarser than D_n
    """
    S.check_space(space)
    if not 1 <= n <= S.level:
        raise ValueError(f"cannot decompose a process on D_{S.level} at level {n}")
    sampled = S.sample(n)
    times = sampled.times

    compensator = [np.zeros(space.block_count(0))]
    martingale = [sampled.values[0].copy()]
    for k in range(1, len(times)):
        s, t = times[k - 1], times[k]
        drift = space.project(sampled.values[k], t, s) - sampled.values[k - 1]
        a_t = space.reindex(compensator[-1] + drift, s, t)
        compensator.append(a_t)
        martingale.append(sampled.values[k] - a_t)
    return DoobPair(
        level=n,
        M=AdaptedProcess(level=n, values=tuple(martingale)),
        A=AdaptedProcess(level=n, values=tuple(compensator)),
    )


def _check_target(space: FiniteFilteredSpace, pair: DoobPair, target: int):
    if not pair.level <= target <= space.depth:
        raise ValueError(f"target level {target} outside {pair.level}..{space.depth}")


def extend_martingale(space: FiniteFilteredSpace, pair: DoobPair, target: int) -> AdaptedProcess:
    """M_t := E[M_1 | F_t] for t in D_target."""
    _check_target(space, pair, target)
    if target == pair.level:
        return pair.M
    terminal = pair.M.values[-1]
    return AdaptedProcess(
        level=target,
        values=tuple(space.project(terminal, 1, t) for t in DyadicGrid(target).times),
    )


def extend_compensator_step(
    space: FiniteFilteredSpace, pair: DoobPair, target: int
) -> AdaptedProcess:
    """
    Step extension sum_t A_t 1_{(t - h, t]} evaluated on D_target.

    Each time s of D_target takes the value of A at the smallest D_level time
    t >= s; s = 0 keeps A_0 = 0. A_t is F_{t-h}-measurable and s > t - h, so
    the values are carried over exactly.
    """
    _check_target(space, pair, target)
    coarse = DyadicGrid(pair.level)
    values = []
    for s in DyadicGrid(target).times:
        t = coarse.round_up(s)
        values.append(space.reindex(pair.A.block_values(t), t, s))
    return AdaptedProcess(level=target, values=tuple(values))


def tau_threshold(space: FiniteFilteredSpace, A: AdaptedProcess, c: float) -> StoppingTime:
    """
    tau(c) = inf{(j - 1)/2**n : A_{j/2**n} > c} capped at 1.

    The result is a stopping time because A is predictable; that is checked.

    Raises:
        ValueError: If c <= 0
        NotStoppingTimeError: If A is not predictable enough for tau to be one
    """
    if c <= 0:
        raise ValueError("threshold must be positive")
    A.check_space(space)
    last = 2**A.level
    ticks = np.full(space.n_atoms, last, dtype=np.int64)
    pending = np.ones(space.n_atoms, dtype=bool)
    for j in range(1, last + 1):
        exceeded = pending & (A.at(space, Fraction(j, last)) > c)
        ticks[exceeded] = j - 1
        pending &= ~exceeded
    return checked_stopping_time(space, StoppingTime(level=A.level, ticks=ticks))


def normalize(space: FiniteFilteredSpace, S: AdaptedProcess) -> AdaptedProcess:
    """S_t - E[S_1 | F_t]: zero at t = 1 and <= 0 for a submartingale."""
    S.check_space(space)
    terminal = S.values[-1]
    return AdaptedProcess(
        level=S.level,
        values=tuple(row - space.project(terminal, 1, t) for t, row in zip(S.times, S.values)),
    )


@dataclass(frozen=True)
class UIRow:
    """Uniform-integrability quantities at one (level, threshold) pair."""

    level: int
    c: float
    tail_mass: float
    prob_tau_lt_1: float
    lhs_eq1: float
    rhs_eq1: float
    markov_bound: float
    rhs_eq1_raw: float

    @property
    def eq1_slack(self) -> float:
        return self.rhs_eq1 - self.lhs_eq1

    @property
    def markov_slack(self) -> float:
        return self.markov_bound - self.prob_tau_lt_1

    def passed(self, slack: float = EQ1_SLACK) -> bool:
        return self.eq1_slack >= -slack and self.markov_slack >= -slack


@dataclass(frozen=True, eq=False)
class UIDiagnostics:
    """
    Rows per (level, threshold), computed on the normalized process.

    ``envelope[c]`` is the sup over levels of the tail mass at c;
    ``class_d_bound`` is sup_tau E[|S_tau|] of the normalized process and
    ``compensator_shift`` the largest change of A caused by normalizing.
    """

    levels: tuple[int, ...]
    thresholds: tuple[float, ...]
    rows: tuple[UIRow, ...]
    envelope: dict[float, float] = field(repr=False)
    class_d_bound: float
    compensator_shift: float

    def failures(self, slack: float = EQ1_SLACK) -> list[str]:
        """Descriptions of every violated check, in row order."""
        problems = []
        for row in self.rows:
            if row.eq1_slack < -slack:
                problems.append(
                    f"eq1 fails at level={row.level} c={row.c:g}: "
                    f"{row.lhs_eq1!r} > {row.rhs_eq1!r}"
                )
            if row.markov_slack < -slack:
                problems.append(
                    f"markov bound fails at level={row.level} c={row.c:g}: "
                    f"{row.prob_tau_lt_1!r} > {row.markov_bound!r}"
                )
        for level in self.levels:
            tails = [row.tail_mass for row in self.rows if row.level == level]
            if any(b > a + slack for a, b in zip(tails, tails[1:])):
                problems.append(f"tail mass increases in c at level={level}")
        if self.compensator_shift > IDENTITY_TOL:
            problems.append(f"normalizing changed the compensator by {self.compensator_shift!r}")
        return problems

    @property
    def passed(self) -> bool:
        return not self.failures()


def ui_diagnostics(
    space: FiniteFilteredSpace,
    S: AdaptedProcess,
    levels: Iterable[int],
    thresholds: Sequence[float],
) -> UIDiagnostics:
    """
    Tail masses E[A_1 1{A_1 > c}], P[tau(c) < 1] and both sides of

        E[A_1; A_1 > c] <= -2 E[S_tau(c/2); tau(c/2) < 1] - E[S_tau(c); tau(c) < 1]

    for every level and threshold, plus the Markov bound
    P[tau(c) < 1] <= E[A_1]/c. The inequality holds for S normalized to
    S_t - E[S_1 | F_t]; the right-hand side on the raw process is recorded as
    ``rhs_eq1_raw``.

    Raises:
        NotSubmartingaleError: If S is not a submartingale
        ValueError: If a threshold is not positive
    """
    check = is_submartingale(space, S)
    if not check:
        raise NotSubmartingaleError(
            f"process is not a submartingale: shortfall {check.max_violation:.3g} "
            f"at t={format_time(check.worst_time)}"
        )
    thresholds = tuple(sorted(set(float(c) for c in thresholds)))
    if not thresholds or thresholds[0] <= 0:
        raise ValueError("threshold must be positive")
    levels = tuple(levels)

    normalized = normalize(space, S)
    rows = []
    shift = 0.0
    for n in levels:
        raw_pair = doob_decompose_discrete(space, S, n)
        pair = doob_decompose_discrete(space, normalized, n)
        shift = max(shift, max_deviation(space, raw_pair.A, pair.A))

        a1 = pair.A.at(space, 1)
        mean_a1 = space.expectation(a1)
        sampled = normalized.sample(n)
        sampled_raw = S.sample(n)
        last = 2**n

        def stopped_before_end(c: float, process: AdaptedProcess) -> tuple[float, float]:
            tau = tau_threshold(space, pair.A, c)
            before = (tau.ticks < last).astype(float)
            stopped = evaluate_at_stopping_time(space, process, tau)
            return space.expectation(before), space.expectation(stopped * before)

        for c in thresholds:
            tail = space.expectation(np.where(a1 > c, a1, 0.0))
            prob, at_c = stopped_before_end(c, sampled)
            _, at_half = stopped_before_end(c / 2, sampled)
            _, raw_c = stopped_before_end(c, sampled_raw)
            _, raw_half = stopped_before_end(c / 2, sampled_raw)
            rows.append(
                UIRow(
                    level=n,
                    c=c,
                    tail_mass=tail,
                    prob_tau_lt_1=prob,
                    lhs_eq1=tail,
                    rhs_eq1=-2.0 * at_half - at_c,
                    markov_bound=mean_a1 / c,
                    rhs_eq1_raw=-2.0 * raw_half - raw_c,
                )
            )
        logger.info("ui diagnostics done for level %d", n)

    envelope = {c: max(row.tail_mass for row in rows if row.c == c) for c in thresholds}
    return UIDiagnostics(
        levels=levels,
        thresholds=thresholds,
        rows=tuple(rows),
        envelope=envelope,
        class_d_bound=class_d_sup(space, normalized),
        compensator_shift=shift,
    )
