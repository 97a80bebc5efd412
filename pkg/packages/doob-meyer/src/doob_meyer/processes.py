"""Adapted processes, instance generators and the class-D supremum oracle.

Generators are deterministic functions of a 64-bit seed: every draw comes from
``numpy.random.Generator(numpy.random.PCG64(seed))`` in a fixed order, so an
experiment replays bit-identically on any platform.
"""

import itertools
import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import Callable, Iterator, Sequence

import numpy as np

from .filtered_space import (
    IDENTITY_TOL,
    DyadicGrid,
    FiniteFilteredSpace,
    SpaceError,
    StoppingTime,
    TimeLike,
    as_random_variable,
    conditional_expectation,
    evaluate_at_stopping_time,
    format_time,
)

logger = logging.getLogger(__name__)

MAX_ATOMS = 2**16


class NotAdaptedError(ValueError):
    """A process value is not constant on the blocks of its time's partition."""

    def __init__(self, message: str, time: Fraction | None = None):
        super().__init__(message)
        self.time = time


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


@dataclass(frozen=True, eq=False)
class AdaptedProcess:
    """
    A process on the grid D_level.

    ``values[k]`` holds one value per block of the partition at time
    ``k / 2**level``, so adaptedness holds by construction. Use
    :meth:`from_atoms` to build one from per-atom vectors and :meth:`at` to
    read a per-atom vector back.
    """

    level: int
    values: tuple[np.ndarray, ...] = field(repr=False)

    def __post_init__(self):
        if len(self.values) != 2**self.level + 1:
            raise ValueError(
                f"a process on D_{self.level} needs {2**self.level + 1} times, "
                f"got {len(self.values)}"
            )
        frozen = []
        for k, row in enumerate(self.values):
            row = np.array(row, dtype=float)
            if not np.all(np.isfinite(row)):
                raise ValueError(f"non-finite value at t={format_time(Fraction(k, 2**self.level))}")
            row.setflags(write=False)
            frozen.append(row)
        object.__setattr__(self, "values", tuple(frozen))

    @classmethod
    def from_atoms(
        cls, space: FiniteFilteredSpace, level: int, rows: Sequence[Sequence[float]]
    ) -> "AdaptedProcess":
        """
        Build a process from one per-atom vector per time of D_level.

        Raises:
            NotAdaptedError: At the first time whose vector is not constant on
                the blocks of that time's partition
        """
        grid = space.grid(level)
        if len(rows) != len(grid):
            raise ValueError(f"expected {len(grid)} time rows, got {len(rows)}")
        values = []
        for t, row in zip(grid.times, rows):
            block = space.compress(as_random_variable(space, row), t)
            if block is None:
                raise NotAdaptedError(f"process is not adapted at t={format_time(t)}", time=t)
            values.append(block)
        return cls(level=level, values=tuple(values))

    @classmethod
    def deterministic(
        cls, space: FiniteFilteredSpace, level: int, path: Callable[[Fraction], float]
    ) -> "AdaptedProcess":
        """A process whose value at t is the number ``path(t)`` on every atom."""
        grid = space.grid(level)
        return cls(
            level=level,
            values=tuple(np.full(space.block_count(t), float(path(t))) for t in grid.times),
        )

    @property
    def grid(self) -> DyadicGrid:
        return DyadicGrid(self.level)

    @property
    def times(self) -> tuple[Fraction, ...]:
        return self.grid.times

    def block_values(self, t: TimeLike) -> np.ndarray:
        return self.values[self.grid.index(t)]

    def at(self, space: FiniteFilteredSpace, t: TimeLike) -> np.ndarray:
        """Per-atom vector of X_t."""
        return space.expand(self.block_values(t), t)

    def to_atoms(self, space: FiniteFilteredSpace) -> np.ndarray:
        """All per-atom vectors stacked, shape (times, atoms)."""
        return np.stack([self.at(space, t) for t in self.times])

    def sample(self, level: int) -> "AdaptedProcess":
        """The sampled process (X_t) for t in D_level, level <= self.level."""
        if not 0 <= level <= self.level:
            raise ValueError(f"cannot sample a D_{self.level} process on D_{level}")
        step = 2 ** (self.level - level)
        return AdaptedProcess(level=level, values=self.values[::step])

    def check_space(self, space: FiniteFilteredSpace) -> "AdaptedProcess":
        """Return self after checking it lives on this space."""
        if self.level > space.depth:
            raise ValueError(f"process on D_{self.level} exceeds master depth {space.depth}")
        for t, row in zip(self.times, self.values):
            if len(row) != space.block_count(t):
                raise NotAdaptedError(
                    f"process has {len(row)} values at t={format_time(t)}, "
                    f"the partition has {space.block_count(t)} blocks",
                    time=t,
                )
        return self

    def _combine(self, other: "AdaptedProcess", op) -> "AdaptedProcess":
        if other.level != self.level:
            raise ValueError(f"level mismatch: D_{self.level} vs D_{other.level}")
        return AdaptedProcess(
            level=self.level, values=tuple(op(a, b) for a, b in zip(self.values, other.values))
        )

    def __add__(self, other: "AdaptedProcess") -> "AdaptedProcess":
        return self._combine(other, np.add)

    def __sub__(self, other: "AdaptedProcess") -> "AdaptedProcess":
        return self._combine(other, np.subtract)

    def __neg__(self) -> "AdaptedProcess":
        return self.scale(-1.0)

    def scale(self, c: float) -> "AdaptedProcess":
        return AdaptedProcess(level=self.level, values=tuple(c * row for row in self.values))

    def __mul__(self, c: float) -> "AdaptedProcess":
        return self.scale(c)

    __rmul__ = __mul__

    def abs(self) -> "AdaptedProcess":
        return AdaptedProcess(level=self.level, values=tuple(np.abs(row) for row in self.values))


def max_deviation(space: FiniteFilteredSpace, X: AdaptedProcess, Y: AdaptedProcess) -> float:
    """Largest per-atom difference between two processes on the same grid."""
    if X.level != Y.level:
        raise ValueError(f"level mismatch: D_{X.level} vs D_{Y.level}")
    return max(float(np.max(np.abs(a - b))) for a, b in zip(X.values, Y.values))


@dataclass(frozen=True)
class SubmartingaleCheck:
    """Outcome of :func:`is_submartingale`; truthy iff the check passed."""

    ok: bool
    max_violation: float
    worst_time: Fraction | None = None

    def __bool__(self) -> bool:
        return self.ok


def is_submartingale(
    space: FiniteFilteredSpace, S: AdaptedProcess, tol: float = IDENTITY_TOL
) -> SubmartingaleCheck:
    """
    Check E[S_t | F_s] >= S_s - tol for consecutive grid times s < t.

    Consecutive pairs suffice by the tower property. The reported violation is
    the largest shortfall max(S_s - E[S_t | F_s]) over atoms and times, or 0.
    """
    S.check_space(space)
    times = S.times
    worst, worst_time = 0.0, None
    for k in range(len(times) - 1):
        s, t = times[k], times[k + 1]
        shortfall = S.values[k] - space.project(S.values[k + 1], t, s)
        current = float(np.max(shortfall))
        if current > worst:
            worst, worst_time = current, s
    return SubmartingaleCheck(ok=worst <= tol, max_violation=worst, worst_time=worst_time)


@dataclass(frozen=True, eq=False)
class GroundTruthPair:
    """
    A martingale M and a predictable increasing A with A_0 = 0, on the master grid.

    A is predictable on every grid D_n with n >= ``predictable_level``.
    """

    M: AdaptedProcess
    A: AdaptedProcess
    predictable_level: int

    @cached_property
    def S(self) -> AdaptedProcess:
        return self.M + self.A


def _predictable_increments(
    rng: np.random.Generator,
    space: FiniteFilteredSpace,
    level: int,
    draw: Callable[[np.random.Generator, int], np.ndarray],
) -> AdaptedProcess:
    """
    Cumulative sum of F_{t - 1/2**level}-measurable increments, carried to
    the master grid as a step function constant on (t - 1/2**level, t].
    """
    grid = space.grid(level)
    master = space.grid()
    ratio = 2 ** (space.depth - level)

    # running value of A_t, as block values at the previous grid time
    current = np.zeros(space.block_count(0))
    master_values = [np.zeros(space.block_count(0))]
    for j in range(1, len(grid)):
        s = grid.times[j - 1]
        raw = draw(rng, space.n_atoms)
        increment = space.compress(conditional_expectation(space, raw, s), s)
        current = current + increment
        for k in range((j - 1) * ratio + 1, j * ratio + 1):
            master_values.append(space.project(current, s, master.times[k]))
        if j < len(grid) - 1:
            current = space.project(current, s, grid.times[j])
    return AdaptedProcess(level=space.depth, values=tuple(master_values))


def gen_ground_truth(
    seed: int, space: FiniteFilteredSpace, level: int, jump_scale: float = 1.0
) -> GroundTruthPair:
    """
    Instance with a known Doob decomposition S = M + A on the master grid.

    M_1 is a standard normal draw per atom projected onto F_1, and
    M_t = E[M_1 | F_t]. A has nonnegative increments at the times of D_level,
    each exponential with mean ``jump_scale / 2**level`` before projection on
    F_{t - 1/2**level}.
    """
    if not 1 <= level <= space.depth:
        raise ValueError(f"level must lie in 1..{space.depth}, got {level}")
    rng = _rng(seed)
    master = space.grid()

    terminal = conditional_expectation(space, rng.standard_normal(space.n_atoms), 1)
    m1 = space.compress(terminal, 1)
    M = AdaptedProcess(
        level=space.depth, values=tuple(space.project(m1, 1, t) for t in master.times)
    )
    scale = jump_scale / 2**level
    A = _predictable_increments(rng, space, level, lambda g, n: scale * g.exponential(size=n))
    logger.debug("ground truth seed=%d level=%d jump_scale=%g", seed, level, jump_scale)
    return GroundTruthPair(M=M, A=A, predictable_level=level)


def gen_predictable_drift(
    seed: int, space: FiniteFilteredSpace, level: int, scale: float = 1.0
) -> AdaptedProcess:
    """
    Predictable process D with D_0 = 0 and increments of either sign, normal
    with standard deviation ``scale / 2**level`` before projection.

    Adding D to a submartingale breaks the submartingale property wherever an
    increment is negative.
    """
    if not 1 <= level <= space.depth:
        raise ValueError(f"level must lie in 1..{space.depth}, got {level}")
    rng = _rng(seed)
    sd = scale / 2**level
    return _predictable_increments(rng, space, level, lambda g, n: sd * g.standard_normal(n))


def perturb_drift(
    seed: int, space: FiniteFilteredSpace, S: AdaptedProcess, level: int, scale: float = 1.0
) -> AdaptedProcess:
    """S plus a predictable drift of either sign, sampled on the grid of S."""
    drift = gen_predictable_drift(seed, space, level, scale=scale)
    return S + drift.sample(S.level)


def binary_tree(level: int, signs: int | None = None, p_up: float = 0.5) -> FiniteFilteredSpace:
    """
    Binary tree on the master grid D_level.

    Atoms are sign sequences (``"+-+"``); the partition at a grid time groups
    atoms that share the signs revealed so far. By default one sign is revealed
    per grid step, which is the tree the squared walk needs. With fewer signs,
    sign ``i`` is revealed at grid index ``ceil(i * 2**level / signs)``.
    """
    if level < 1:
        raise ValueError(f"level must be >= 1, got {level}")
    steps = 2**level
    signs = steps if signs is None else signs
    if not 1 <= signs <= steps:
        raise ValueError(f"signs must lie in 1..{steps}, got {signs}")
    if 2**signs > MAX_ATOMS:
        raise ValueError(f"a tree with {signs} signs exceeds {MAX_ATOMS} atoms")
    if not 0 < p_up < 1:
        raise ValueError(f"p_up must lie in (0, 1), got {p_up}")

    n = 2**signs
    index = np.arange(n, dtype=np.int64)
    ups = np.array([bin(i).count("1") for i in range(n)])
    probs = p_up**ups * (1 - p_up) ** (signs - ups)
    probs = probs / probs.sum()
    atoms = tuple(
        format(i, f"0{signs}b").replace("1", "+").replace("0", "-") for i in range(n)
    )

    reveal = [math.ceil(i * steps / signs) for i in range(1, signs + 1)]
    labels = np.empty((steps + 1, n), dtype=np.int64)
    for j in range(steps + 1):
        revealed = sum(1 for r in reveal if r <= j)
        labels[j] = index >> (signs - revealed)
    return FiniteFilteredSpace(atoms=atoms, probs=probs, depth=level, labels=labels)


def _is_walk_tree(space: FiniteFilteredSpace) -> bool:
    steps = 2**space.depth
    if steps > 16 or space.n_atoms != 2**steps:
        return False
    if not np.all(space.probs == space.probs[0]):
        return False
    index = np.arange(space.n_atoms, dtype=np.int64)
    return all(
        np.array_equal(space.labels[j], index >> (steps - j)) for j in range(steps + 1)
    )


def gen_squared_walk(space: FiniteFilteredSpace, level: int | None = None) -> AdaptedProcess:
    """
    S_t = W_t**2 for the random walk W with fair steps of size 1/sqrt(2**N).

    The space must be ``binary_tree(N)``: one fair sign per step of the master
    grid. S is a submartingale whose compensator on D_N is A_t = t. Values are
    computed as K_t**2 / 2**N with the integer walk K, which keeps them exact.
    """
    if not _is_walk_tree(space):
        raise SpaceError("squared walk needs the fair one-sign-per-step binary tree")
    steps = 2**space.depth
    index = np.arange(space.n_atoms, dtype=np.int64)
    rows = [np.zeros(space.n_atoms)]
    walk = np.zeros(space.n_atoms, dtype=np.int64)
    for j in range(1, steps + 1):
        bit = (index >> (steps - j)) & 1
        walk = walk + 2 * bit - 1
        rows.append((walk * walk) / float(steps))
    S = AdaptedProcess.from_atoms(space, space.depth, rows)
    return S if level is None else S.sample(level)


def random_space(seed: int, level: int, atoms: int | None = None) -> FiniteFilteredSpace:
    """
    Random space on D_level with contiguous blocks that split over time.

    Each of the ``atoms - 1`` cut points between neighbouring atoms is revealed
    at a uniformly drawn grid index, or never; probabilities are positive and
    normalized.
    """
    rng = _rng(seed)
    n = int(rng.integers(2, 65)) if atoms is None else atoms
    if not 1 <= n <= MAX_ATOMS:
        raise ValueError(f"atoms must lie in 1..{MAX_ATOMS}, got {n}")
    probs = rng.exponential(size=n) + 0.05
    probs = probs / probs.sum()
    reveal = rng.integers(0, 2**level + 2, size=max(n - 1, 0))

    labels = np.empty((2**level + 1, n), dtype=np.int64)
    for j in range(2**level + 1):
        cuts = (reveal <= j).astype(np.int64)
        labels[j] = np.concatenate([[0], np.cumsum(cuts)])
    names = tuple(f"w{i}" for i in range(n))
    return FiniteFilteredSpace(atoms=names, probs=probs, depth=level, labels=labels)


def hitting_time(space: FiniteFilteredSpace, X: AdaptedProcess, c: float) -> StoppingTime:
    """First grid time with X_t > c, capped at 1."""
    X.check_space(space)
    ticks = np.full(space.n_atoms, 2**X.level, dtype=np.int64)
    pending = np.ones(space.n_atoms, dtype=bool)
    for j, t in enumerate(X.times):
        hit = pending & (X.at(space, t) > c)
        ticks[hit] = j
        pending &= ~hit
    return StoppingTime(level=X.level, ticks=ticks)


def _stopping_choices(
    space: FiniteFilteredSpace, grid: DyadicGrid, j: int, members: np.ndarray
) -> Iterator[list[tuple[np.ndarray, int]]]:
    yield [(members, j)]
    if j == len(grid) - 1:
        return
    row = space.labels_at(grid.times[j + 1])[members]
    children = [members[row == b] for b in np.unique(row)]
    options = [list(_stopping_choices(space, grid, j + 1, child)) for child in children]
    for combo in itertools.product(*options):
        yield [pair for part in combo for pair in part]


def enumerate_stopping_times(space: FiniteFilteredSpace, level: int) -> Iterator[StoppingTime]:
    """
    Every stopping time on D_level, by deciding stop-or-continue block by block.

    The count grows doubly exponentially with the number of splits; keep this
    to trees of depth <= 3.
    """
    grid = space.grid(level)
    row = space.labels_at(0)
    roots = [np.flatnonzero(row == b) for b in np.unique(row)]
    options = [list(_stopping_choices(space, grid, 0, root)) for root in roots]
    for combo in itertools.product(*options):
        ticks = np.empty(space.n_atoms, dtype=np.int64)
        for part in combo:
            for members, j in part:
                ticks[members] = j
        yield StoppingTime(level=level, ticks=ticks)


def snell_envelope(space: FiniteFilteredSpace, X: AdaptedProcess) -> AdaptedProcess:
    """Smallest supermartingale dominating X: U_1 = X_1, U_t = max(X_t, E[U_{t+h} | F_t])."""
    X.check_space(space)
    times = X.times
    envelope = [None] * len(times)
    envelope[-1] = X.values[-1]
    for k in range(len(times) - 2, -1, -1):
        continuation = space.project(envelope[k + 1], times[k + 1], times[k])
        envelope[k] = np.maximum(X.values[k], continuation)
    return AdaptedProcess(level=X.level, values=tuple(envelope))


def class_d_sup(space: FiniteFilteredSpace, S: AdaptedProcess) -> float:
    """
    sup over stopping times tau of E[|S_tau|], via the Snell envelope of |S|.

    On a finite space the supremum is attained.
    """
    envelope = snell_envelope(space, S.abs())
    return float(np.dot(space.block_probs(0), envelope.values[0]))


def stopped_mean(space: FiniteFilteredSpace, X: AdaptedProcess, tau: StoppingTime) -> float:
    """E[X_tau]."""
    return space.expectation(evaluate_at_stopping_time(space, X, tau))
