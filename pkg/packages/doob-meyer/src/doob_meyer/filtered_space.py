"""Finite filtered probability spaces indexed by dyadic times.

A space is a finite set of atoms with positive probabilities and, for every
time of the master grid ``D_N = {j / 2**N}``, a partition of the atoms into
blocks. Partitions refine as time increases. Conditional expectations are
block averages and are computed exactly up to floating-point rounding.
"""

import logging
import re
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import TYPE_CHECKING, Mapping, Sequence

import numpy as np

if TYPE_CHECKING:
    from .processes import AdaptedProcess

logger = logging.getLogger(__name__)

IDENTITY_TOL = 1e-12

TimeLike = Fraction | int | float | str
RandomVariable = np.ndarray

_TIME_PATTERN = re.compile(r"^\s*(\d+)\s*/\s*2\s*\^\s*(\d+)\s*$")


class SpaceError(ValueError):
    """Invalid filtered space, or a time the space has no partition for."""

    def __init__(self, message: str, location: str | None = None):
        super().__init__(message)
        self.location = location


class NotStoppingTimeError(ValueError):
    """A random time fails the stopping-time measurability property."""


def as_time(t: TimeLike) -> Fraction:
    """
    Convert a time to an exact rational.

    Accepts fractions, integers, floats (converted exactly) and strings of the
    form ``"j/2^n"`` or anything ``Fraction`` parses (``"3/8"``, ``"0.5"``).

    Raises:
        SpaceError: If a string cannot be parsed as a time
    """
    if isinstance(t, Fraction):
        return t
    if isinstance(t, str):
        match = _TIME_PATTERN.match(t)
        if match:
            return Fraction(int(match.group(1)), 2 ** int(match.group(2)))
        try:
            return Fraction(t.strip())
        except ValueError as e:
            raise SpaceError(f"not a time: {t!r}") from e
    return Fraction(t)


def time_level(t: TimeLike) -> int:
    """Return the smallest n such that t lies on the dyadic grid D_n."""
    t = as_time(t)
    if not 0 <= t <= 1:
        raise SpaceError(f"time {t} outside [0, 1]")
    den = t.denominator
    if den & (den - 1):
        raise SpaceError(f"not a dyadic time: {t}")
    return den.bit_length() - 1


def format_time(t: TimeLike) -> str:
    """Format a dyadic time in lowest terms as ``"j/2^n"``."""
    t = as_time(t)
    level = time_level(t)
    return f"{t.numerator}/2^{level}"


@dataclass(frozen=True)
class DyadicGrid:
    """The times j / 2**level, j = 0 .. 2**level, on the horizon [0, 1]."""

    level: int

    def __post_init__(self):
        if self.level < 0:
            raise SpaceError(f"grid level must be >= 0, got {self.level}")

    @property
    def step(self) -> Fraction:
        return Fraction(1, 2**self.level)

    @cached_property
    def times(self) -> tuple[Fraction, ...]:
        return tuple(Fraction(j, 2**self.level) for j in range(2**self.level + 1))

    def __len__(self) -> int:
        return 2**self.level + 1

    def __contains__(self, t: object) -> bool:
        try:
            t = as_time(t)  # type: ignore[arg-type]
        except (SpaceError, TypeError):
            return False
        return 0 <= t <= 1 and (t * 2**self.level).denominator == 1

    def index(self, t: TimeLike) -> int:
        """Position of t on this grid."""
        scaled = as_time(t) * 2**self.level
        if scaled.denominator != 1 or not 0 <= scaled <= 2**self.level:
            raise SpaceError(f"time {format_time(t)} is not on D_{self.level}")
        return scaled.numerator

    def round_up(self, t: TimeLike) -> Fraction:
        """Smallest grid time >= t."""
        t = as_time(t)
        if not 0 <= t <= 1:
            raise SpaceError(f"time {t} outside [0, 1]")
        scaled = t * 2**self.level
        j = -(-scaled.numerator // scaled.denominator)
        return Fraction(j, 2**self.level)


def _canonical_labels(row: np.ndarray) -> np.ndarray:
    """Relabel blocks 0, 1, ... in order of their first atom."""
    _, first, inverse = np.unique(row, return_index=True, return_inverse=True)
    rank = np.empty(len(first), dtype=np.int32)
    rank[np.argsort(first, kind="stable")] = np.arange(len(first), dtype=np.int32)
    return rank[inverse.reshape(-1)]


@dataclass(frozen=True, eq=False)
class FiniteFilteredSpace:
    """
    Atoms with probabilities and a refining partition for each master time.

    ``labels[k, w]`` is the block index of atom ``w`` in the partition at
    time ``k / 2**depth``; blocks are numbered in order of their first atom.
    Instances are immutable and safe to share between threads.
    """

    atoms: tuple[str, ...]
    probs: np.ndarray = field(repr=False)
    depth: int
    labels: np.ndarray = field(repr=False)

    def __post_init__(self):
        probs = np.array(self.probs, dtype=float)
        labels = np.array(self.labels, dtype=np.int64)
        _validate(self.atoms, probs, self.depth, labels)
        labels = np.stack([_canonical_labels(row) for row in labels])
        _check_refinement(self.depth, labels)
        probs.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "labels", labels)

        block_probs = []
        representatives = []
        for row in labels:
            count = int(row.max()) + 1
            block_probs.append(np.bincount(row, weights=probs, minlength=count))
            _, first = np.unique(row, return_index=True)
            representatives.append(first)
        object.__setattr__(self, "_block_probs", tuple(block_probs))
        object.__setattr__(self, "_representatives", tuple(representatives))

    @classmethod
    def from_partitions(
        cls,
        atoms: Sequence[str],
        probs: Sequence[float],
        depth: int,
        partitions: Mapping[TimeLike, Sequence[Sequence[int]]],
    ) -> "FiniteFilteredSpace":
        """
        Build a space from explicit partitions keyed by dyadic time.

        Every time of ``D_depth`` needs a partition; each partition must list
        every atom index exactly once.

        Raises:
            SpaceError: On the first violated invariant, with its location
        """
        atoms = tuple(str(a) for a in atoms)
        if depth < 1:
            raise SpaceError(f"depth must be >= 1, got {depth}", location="depth")
        grid = DyadicGrid(depth)
        labels = np.full((len(grid), len(atoms)), -1, dtype=np.int32)
        seen: dict[Fraction, object] = {}

        for key, blocks in partitions.items():
            location = f'partitions["{key}"]'
            try:
                t = as_time(key)
                k = grid.index(t)
            except SpaceError as e:
                raise SpaceError(str(e), location=location) from e
            if t in seen:
                raise SpaceError(
                    f"duplicate partition for t={format_time(t)}", location=location
                )
            seen[t] = key
            for b, block in enumerate(blocks):
                if len(block) == 0:
                    raise SpaceError("empty block", location=f"{location}[{b}]")
                for atom in block:
                    if not 0 <= atom < len(atoms):
                        raise SpaceError(
                            f"atom index {atom} out of range",
                            location=f"{location}[{b}]",
                        )
                    if labels[k, atom] != -1:
                        raise SpaceError(
                            f"atom {atom} appears in more than one block",
                            location=f"{location}[{b}]",
                        )
                    labels[k, atom] = b
            missing = np.flatnonzero(labels[k] == -1)
            if missing.size:
                raise SpaceError(
                    f"atom {int(missing[0])} is in no block", location=location
                )

        for t in grid.times:
            if t not in seen:
                raise SpaceError(
                    f"no partition at t={format_time(t)}", location="partitions"
                )
        return cls(atoms=atoms, probs=np.asarray(probs, dtype=float), depth=depth, labels=labels)

    @property
    def n_atoms(self) -> int:
        return len(self.atoms)

    def grid(self, level: int | None = None) -> DyadicGrid:
        """Dyadic grid at ``level`` (the master grid by default)."""
        level = self.depth if level is None else level
        if not 0 <= level <= self.depth:
            raise SpaceError(f"level {level} outside 0..{self.depth}")
        return DyadicGrid(level)

    def time_index(self, t: TimeLike) -> int:
        """Master-grid index of t."""
        t = as_time(t)
        scaled = t * 2**self.depth
        if scaled.denominator != 1 or not 0 <= scaled <= 2**self.depth:
            raise SpaceError(f"no partition at t={t}")
        return scaled.numerator

    def labels_at(self, t: TimeLike) -> np.ndarray:
        return self.labels[self.time_index(t)]

    def block_count(self, t: TimeLike) -> int:
        return len(self._block_probs[self.time_index(t)])

    def block_probs(self, t: TimeLike) -> np.ndarray:
        return self._block_probs[self.time_index(t)]

    def representatives(self, t: TimeLike) -> np.ndarray:
        """First atom of every block at t."""
        return self._representatives[self.time_index(t)]

    def blocks(self, t: TimeLike) -> tuple[tuple[int, ...], ...]:
        row = self.labels_at(t)
        order = np.argsort(row, kind="stable")
        splits = np.cumsum(np.bincount(row))[:-1]
        return tuple(tuple(int(a) for a in part) for part in np.split(order, splits))

    def expand(self, values: np.ndarray, t: TimeLike) -> np.ndarray:
        """Per-atom vector of a random variable given by its block values at t."""
        return np.asarray(values)[self.labels_at(t)]

    def compress(self, f: np.ndarray, t: TimeLike) -> np.ndarray | None:
        """Block values of f at t, or None if f is not constant on those blocks."""
        row = self.labels_at(t)
        values = np.asarray(f)[self.representatives(t)]
        if not np.array_equal(values[row], f):
            return None
        return values

    def is_measurable(self, f: np.ndarray, t: TimeLike) -> bool:
        return self.compress(f, t) is not None

    def project(self, values: np.ndarray, t_from: TimeLike, t_to: TimeLike) -> np.ndarray:
        """
        Conditional expectation on F_{t_to} of a variable known by its block
        values at t_from, as block values at t_to.

        When ``t_to >= t_from`` the variable is already F_{t_to}-measurable and
        its values are carried over unchanged.
        """
        k_from = self.time_index(t_from)
        k_to = self.time_index(t_to)
        if k_to >= k_from:
            return self.reindex(values, t_from, t_to)
        parent = self.labels[k_to][self._representatives[k_from]]
        mass = np.bincount(
            parent,
            weights=self._block_probs[k_from] * values,
            minlength=len(self._block_probs[k_to]),
        )
        return mass / self._block_probs[k_to]

    def reindex(self, values: np.ndarray, t_from: TimeLike, t_to: TimeLike) -> np.ndarray:
        """
        Block values at t_to of a variable given by its block values at t_from.

        The variable must be F_{t_to}-measurable; values are copied, never
        averaged, so the result is bit-identical to the input.
        """
        k_from = self.time_index(t_from)
        k_to = self.time_index(t_to)
        return np.asarray(values)[self.labels[k_from][self._representatives[k_to]]]

    def expectation(self, f: np.ndarray) -> float:
        return float(np.dot(self.probs, f))


def _validate(atoms: tuple[str, ...], probs: np.ndarray, depth: int, labels: np.ndarray):
    n = len(atoms)
    if n == 0:
        raise SpaceError("a space needs at least one atom", location="atoms")
    if len(set(atoms)) != n:
        raise SpaceError("atom identifiers must be unique", location="atoms")
    if depth < 1:
        raise SpaceError(f"depth must be >= 1, got {depth}", location="depth")
    if probs.shape != (n,):
        raise SpaceError(f"expected {n} probabilities, got {probs.size}", location="probs")
    if not np.all(np.isfinite(probs)):
        raise SpaceError("probabilities must be finite", location="probs")
    nonpositive = np.flatnonzero(probs <= 0)
    if nonpositive.size:
        i = int(nonpositive[0])
        raise SpaceError(
            f"atom {atoms[i]!r} has probability {probs[i]}; atoms need positive mass",
            location=f"probs[{i}]",
        )
    total = float(np.sum(probs))
    if abs(total - 1.0) > IDENTITY_TOL:
        raise SpaceError(f"probabilities sum to {total!r}, not 1", location="probs")
    if labels.shape != (2**depth + 1, n):
        raise SpaceError(
            f"expected partitions for {2**depth + 1} times and {n} atoms",
            location="partitions",
        )
    if labels.min() < 0:
        raise SpaceError("every atom needs a block at every time", location="partitions")


def _check_refinement(depth: int, labels: np.ndarray):
    for k in range(1, len(labels)):
        coarse, fine = labels[k - 1], labels[k]
        _, first = np.unique(fine, return_index=True)
        parent = np.zeros(int(fine.max()) + 1, dtype=np.int64)
        parent[fine[first]] = coarse[first]
        if not np.array_equal(parent[fine], coarse):
            t, s = Fraction(k, 2**depth), Fraction(k - 1, 2**depth)
            raise SpaceError(
                f"partition at t={format_time(t)} does not refine the partition "
                f"at t={format_time(s)}",
                location=f'partitions["{format_time(t)}"]',
            )


def as_random_variable(space: FiniteFilteredSpace, f: Sequence[float]) -> RandomVariable:
    """Validate a per-atom vector: one finite value per atom."""
    values = np.asarray(f, dtype=float)
    if values.shape != (space.n_atoms,):
        raise ValueError(f"expected {space.n_atoms} values, got shape {values.shape}")
    if not np.all(np.isfinite(values)):
        raise ValueError("random variables must have finite entries")
    return values


def conditional_expectation(
    space: FiniteFilteredSpace, f: Sequence[float], t: TimeLike
) -> RandomVariable:
    """
    E[f | F_t] as a per-atom vector.

    On each block B of the partition at t the value is the probability-weighted
    average of f over B.

    Raises:
        SpaceError: If the space has no partition at t
        ValueError: If f does not have one finite value per atom
    """
    values = as_random_variable(space, f)
    row = space.labels_at(t)
    block_probs = space.block_probs(t)
    mass = np.bincount(row, weights=space.probs * values, minlength=len(block_probs))
    return (mass / block_probs)[row]


def lp_norm(space: FiniteFilteredSpace, f: Sequence[float], p: int) -> float:
    """Weighted L^p norm (sum_w P(w) |f(w)|^p)^(1/p) for p in {1, 2}."""
    values = as_random_variable(space, f)
    if p == 1:
        return float(np.dot(space.probs, np.abs(values)))
    if p == 2:
        return float(np.sqrt(np.dot(space.probs, values * values)))
    raise ValueError(f"p must be 1 or 2, got {p}")


@dataclass(frozen=True, eq=False)
class StoppingTime:
    """
    A random time on the grid D_level, stored as integer ticks.

    ``ticks[w] = j`` means tau(w) = j / 2**level.
    """

    level: int
    ticks: np.ndarray = field(repr=False)

    def __post_init__(self):
        ticks = np.array(self.ticks, dtype=np.int64)
        if ticks.ndim != 1:
            raise ValueError("ticks must be a per-atom vector")
        if ticks.size and (ticks.min() < 0 or ticks.max() > 2**self.level):
            raise ValueError(f"ticks must lie in 0..{2**self.level}")
        ticks.setflags(write=False)
        object.__setattr__(self, "ticks", ticks)

    @classmethod
    def from_times(cls, times: Sequence[TimeLike], level: int) -> "StoppingTime":
        grid = DyadicGrid(level)
        return cls(level=level, ticks=np.array([grid.index(t) for t in times], dtype=np.int64))

    @classmethod
    def constant(
        cls, space: FiniteFilteredSpace, t: TimeLike, level: int | None = None
    ) -> "StoppingTime":
        level = space.depth if level is None else level
        j = DyadicGrid(level).index(t)
        return cls(level=level, ticks=np.full(space.n_atoms, j, dtype=np.int64))

    @property
    def times(self) -> tuple[Fraction, ...]:
        return tuple(Fraction(int(j), 2**self.level) for j in self.ticks)

    def as_floats(self) -> np.ndarray:
        return self.ticks / float(2**self.level)

    def at_level(self, level: int) -> "StoppingTime":
        """The same random time expressed on the grid D_level."""
        if level >= self.level:
            return StoppingTime(level=level, ticks=self.ticks * 2 ** (level - self.level))
        factor = 2 ** (self.level - level)
        if np.any(self.ticks % factor):
            raise ValueError(f"stopping time does not take values on D_{level}")
        return StoppingTime(level=level, ticks=self.ticks // factor)


def is_stopping_time(
    space: FiniteFilteredSpace, tau: StoppingTime | Sequence[TimeLike], level: int
) -> bool:
    """
    True iff {tau <= t} is a union of blocks of the partition at t for every
    t in D_level. False when D_level is finer than the master grid, since the
    space has no partitions there.
    """
    if not 0 <= level <= space.depth:
        logger.debug("no partitions on D_%d for a space of depth %d", level, space.depth)
        return False
    if isinstance(tau, StoppingTime):
        try:
            ticks = tau.at_level(level).ticks
        except ValueError:
            return False
    else:
        grid = DyadicGrid(level)
        try:
            ticks = np.array([grid.index(t) for t in tau], dtype=np.int64)
        except SpaceError:
            logger.debug("random time takes values off D_%d", level)
            return False
    if ticks.shape != (space.n_atoms,):
        return False

    grid = space.grid(level)
    for j, t in enumerate(grid.times):
        if not space.is_measurable((ticks <= j).astype(float), t):
            logger.debug("{tau <= %s} is not F_t-measurable", format_time(t))
            return False
    return True


def checked_stopping_time(space: FiniteFilteredSpace, tau: StoppingTime) -> StoppingTime:
    """Return tau unchanged, or raise NotStoppingTimeError."""
    if not is_stopping_time(space, tau, tau.level):
        raise NotStoppingTimeError(f"random time on D_{tau.level} is not a stopping time")
    return tau


def evaluate_at_stopping_time(
    space: FiniteFilteredSpace, X: "AdaptedProcess", tau: StoppingTime
) -> RandomVariable:
    """
    The stopped value X_tau, per atom X_{tau(w)}(w).

    Raises:
        NotStoppingTimeError: If tau is not a stopping time
        ValueError: If tau takes values off the process grid
    """
    checked_stopping_time(space, tau)
    try:
        ticks = tau.at_level(X.level).ticks
    except ValueError as e:
        raise ValueError(
            f"stopping time on D_{tau.level} is not on the process grid D_{X.level}"
        ) from e

    result = np.empty(space.n_atoms)
    for j in np.unique(ticks):
        mask = ticks == j
        result[mask] = X.at(space, Fraction(int(j), 2**X.level))[mask]
    return result
