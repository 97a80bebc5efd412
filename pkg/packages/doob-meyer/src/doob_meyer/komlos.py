"""Forward convex combinations of a finite sequence of random variables.

The solver works on the Gram matrix of inner products in weighted L^2,
``G[i, j] = sum_w P(w) f_i(w) f_j(w)``, and minimizes ``lam @ G @ lam`` over
the simplex. The extraction composes one Hilbert step per truncation level.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .filtered_space import FiniteFilteredSpace, as_random_variable, lp_norm

logger = logging.getLogger(__name__)

SOLVER_TOL = 1e-10
WEIGHT_TOL = 1e-12
OPTIMIZATION_TOL = 1e-8


class SolverError(RuntimeError):
    """The min-norm solver did not certify optimality within its iteration cap."""

    def __init__(
        self, message: str, weights: np.ndarray, point: np.ndarray, certificate_gap: float
    ):
        super().__init__(message)
        self.weights = weights
        self.point = point
        self.certificate_gap = certificate_gap


class ExtractionError(RuntimeError):
    """A solve inside the staged extraction failed."""

    def __init__(self, message: str, stage: int, index: int):
        super().__init__(message)
        self.stage = stage
        self.index = index


@dataclass(frozen=True, eq=False)
class ConvexWeights:
    """
    Weights on the positions ``start .. stop`` of a sequence (1-based).

    ``weights[i]`` belongs to position ``start + i``.
    """

    start: int
    weights: np.ndarray = field(repr=False)

    def __post_init__(self):
        weights = np.array(self.weights, dtype=float)
        if self.start < 1:
            raise ValueError(f"start must be >= 1, got {self.start}")
        if weights.ndim != 1 or weights.size == 0:
            raise ValueError("weights must be a nonempty vector")
        if np.any(weights < 0):
            raise ValueError(f"negative weight {float(weights.min())!r}")
        total = float(weights.sum())
        if abs(total - 1.0) > WEIGHT_TOL:
            raise ValueError(f"weights sum to {total!r}, not 1")
        weights.setflags(write=False)
        object.__setattr__(self, "weights", weights)

    @property
    def stop(self) -> int:
        return self.start + len(self.weights) - 1

    @property
    def support(self) -> tuple[int, ...]:
        return tuple(self.start + int(i) for i in np.flatnonzero(self.weights > 0))

    def items(self) -> list[tuple[int, float]]:
        return [(self.start + i, float(w)) for i, w in enumerate(self.weights)]

    def combine(self, sequence: Sequence[np.ndarray]) -> np.ndarray:
        """sum_j weights_j * sequence[j] over the positions start..stop."""
        if self.stop > len(sequence):
            raise ValueError(f"weights reach position {self.stop}, sequence has {len(sequence)}")
        block = np.asarray(sequence[self.start - 1 : self.stop], dtype=float)
        return self.weights @ block


@dataclass(frozen=True, eq=False)
class MinNormResult:
    """Minimizer of the norm over a convex hull, with its optimality certificate."""

    weights: ConvexWeights
    point: np.ndarray = field(repr=False)
    norm: float
    certificate_gap: float
    iterations: int


def _project_simplex(v: np.ndarray) -> np.ndarray:
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    ind = np.arange(1, len(v) + 1)
    rho = np.flatnonzero(u - css / ind > 0)[-1]
    return np.maximum(v - css[rho] / (rho + 1), 0.0)


def _certificate_gap(gram: np.ndarray, scales: np.ndarray, lam: np.ndarray) -> float:
    """max_j (|g|^2 - <g, f_j>) / max(1, |f_j|), floored at 0."""
    grad = gram @ lam
    return max(0.0, float(np.max((lam @ grad - grad) / scales)))


def _affine_minimizer(gram: np.ndarray) -> np.ndarray:
    """Minimizer of mu @ gram @ mu subject to sum(mu) = 1, via the KKT system."""
    k = len(gram)
    kkt = np.zeros((k + 1, k + 1))
    kkt[:k, :k] = gram
    kkt[:k, k] = 1.0
    kkt[k, :k] = 1.0
    rhs = np.zeros(k + 1)
    rhs[k] = 1.0
    mu = np.linalg.lstsq(kkt, rhs, rcond=None)[0][:k]
    return mu / mu.sum()


def _wolfe(
    gram: np.ndarray, scales: np.ndarray, tol: float, max_iter: int
) -> tuple[np.ndarray, int, bool]:
    """Active-set min-norm-point iteration; returns (weights, iterations, converged)."""
    k = len(gram)
    active = [int(np.argmin(np.diag(gram)))]
    lam = np.zeros(k)
    lam[active[0]] = 1.0
    iterations = 0
    while iterations < max_iter:
        iterations += 1
        grad = gram @ lam
        violation = (lam @ grad - grad) / scales
        j = int(np.argmax(violation))
        if violation[j] <= tol or j in active:
            return lam, iterations, True
        active.append(j)
        logger.debug("major cycle %d adds vector %d", iterations, j)

        while iterations < max_iter:
            iterations += 1
            idx = np.array(active)
            mu = _affine_minimizer(gram[np.ix_(idx, idx)])
            if not np.all(np.isfinite(mu)):
                logger.debug("degenerate affine hull with %d vectors", len(idx))
                return lam, iterations, False
            if np.all(mu > 0):
                lam = np.zeros(k)
                lam[idx] = mu
                break
            current = lam[idx]
            blocked = np.flatnonzero(mu <= 0)
            denom = current[blocked] - mu[blocked]
            ratios = np.where(denom > 0, current[blocked] / np.where(denom > 0, denom, 1.0), 0.0)
            theta = float(np.min(ratios))
            mixed = (1.0 - theta) * current + theta * mu
            mixed[blocked[int(np.argmin(ratios))]] = 0.0
            keep = mixed > 0
            lam = np.zeros(k)
            lam[idx[keep]] = mixed[keep]
            active = [int(i) for i in idx[keep]]
            logger.debug("minor cycle drops to %d active vectors", len(active))
    return lam, iterations, False


def _projected_gradient(
    gram: np.ndarray, scales: np.ndarray, lam: np.ndarray, tol: float, max_iter: int
) -> tuple[np.ndarray, float]:
    """Accelerated projected gradient from ``lam``; returns the best iterate and its gap."""
    top = float(np.linalg.eigvalsh(gram)[-1])
    if top <= 0:
        return lam, _certificate_gap(gram, scales, lam)
    step = 1.0 / (2.0 * top)
    best, best_gap = lam, _certificate_gap(gram, scales, lam)
    x, y, momentum = lam, lam, 1.0
    for _ in range(max_iter):
        nxt = _project_simplex(y - step * 2.0 * (gram @ y))
        following = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * momentum * momentum))
        y = nxt + ((momentum - 1.0) / following) * (nxt - x)
        x, momentum = nxt, following
        gap = _certificate_gap(gram, scales, x)
        if gap < best_gap:
            best, best_gap = x, gap
        if best_gap <= tol:
            break
    return best, best_gap


def min_norm_convex_hull(
    space: FiniteFilteredSpace,
    vectors: Sequence[Sequence[float]],
    tol: float = SOLVER_TOL,
    max_iter: int | None = None,
) -> MinNormResult:
    """
    Point of smallest weighted L^2 norm in the convex hull of ``vectors``.

    The result is certified: <g, f_j - g> >= -tol * max(1, |f_j|) for every j,
    which is the first-order condition of the min-norm point. The active-set
    iteration runs first; a projected-gradient pass takes over if it stalls.
    The default iteration cap is 10 * len(vectors) * atoms.

    Raises:
        ValueError: If ``vectors`` is empty or ``tol`` is not positive
        SolverError: If no certified point is found within the cap
    """
    if len(vectors) == 0:
        raise ValueError("need at least one vector")
    if tol <= 0:
        raise ValueError(f"tol must be positive, got {tol}")
    F = np.stack([as_random_variable(space, f) for f in vectors])
    X = F * np.sqrt(space.probs)
    gram = X @ X.T
    scales = np.maximum(1.0, np.sqrt(np.diag(gram)))
    cap = max_iter if max_iter is not None else 10 * len(F) * space.n_atoms

    lam, iterations, converged = _wolfe(gram, scales, tol, cap)
    lam = np.clip(lam, 0.0, None)
    lam = lam / lam.sum()
    gap = _certificate_gap(gram, scales, lam)
    if not converged or gap > tol:
        logger.debug("falling back to projected gradient, gap %.3g", gap)
        lam, gap = _projected_gradient(gram, scales, lam, tol, cap)
        iterations += cap
    point = lam @ F
    if gap > tol:
        raise SolverError(
            f"min-norm solver stopped with certificate gap {gap:.3g} > {tol:.3g}",
            weights=lam,
            point=point,
            certificate_gap=gap,
        )
    norm = math.sqrt(max(0.0, float(lam @ gram @ lam)))
    return MinNormResult(
        weights=ConvexWeights(start=1, weights=lam),
        point=point,
        norm=norm,
        certificate_gap=gap,
        iterations=iterations,
    )


def hilbert_komlos_step(
    space: FiniteFilteredSpace,
    tail: Sequence[Sequence[float]],
    slack: float,
    tol: float = SOLVER_TOL,
    start: int = 1,
) -> MinNormResult:
    """g_n in conv(tail) with |g_n| within min(slack, tol) of the tail infimum."""
    result = min_norm_convex_hull(space, tail, tol=min(slack, tol))
    return MinNormResult(
        weights=ConvexWeights(start=start, weights=result.weights.weights),
        point=result.point,
        norm=result.norm,
        certificate_gap=result.certificate_gap,
        iterations=result.iterations,
    )


def truncate(f: Sequence[float], i: int) -> np.ndarray:
    """f * 1{|f| <= i}."""
    if i < 1:
        raise ValueError(f"truncation level must be >= 1, got {i}")
    values = np.asarray(f, dtype=float)
    return np.where(np.abs(values) <= i, values, 0.0)


@dataclass(frozen=True, eq=False)
class KomlosRecord:
    """
    One index of the last active stage.

    ``tail_inf`` is the solver's value of inf |conv(tail)|; every point of
    that hull has norm >= ``tail_inf - epsilon``.
    """

    n: int
    norm: float
    tail_inf: float
    certificate_gap: float
    epsilon: float
    weights: ConvexWeights

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "norm": self.norm,
            "tail_inf": self.tail_inf,
            "certificate_gap": self.certificate_gap,
            "weights": [[j, w] for j, w in self.weights.items()],
        }


@dataclass(frozen=True, eq=False)
class KomlosReport:
    """
    Outcome of :func:`komlos_extract`.

    ``points[n - 1]`` is g_n = sum_j lambda^n_j f_j on the untruncated inputs.
    ``l1_distances[k, m]`` is |g_{k+1} - g_{m+1}|_1 and ``tail_diameters[n - 1]``
    its maximum over k, m >= n.
    """

    records: tuple[KomlosRecord, ...]
    points: tuple[np.ndarray, ...] = field(repr=False)
    sup_inf: float
    l1_distances: np.ndarray = field(repr=False)
    tail_diameters: tuple[float, ...]
    stages: tuple[dict, ...]
    norm_bound_slack: tuple[float, ...]
    cauchy_slack: tuple[float, ...]
    monotone_slack: tuple[float, ...]
    membership_residual: float
    tol: float

    def failures(self, tol: float = OPTIMIZATION_TOL) -> list[str]:
        problems = []
        for record, slack in zip(self.records, self.norm_bound_slack):
            if slack < -tol:
                problems.append(f"norm bound fails at n={record.n}: slack {slack!r}")
        for record, slack in zip(self.records, self.cauchy_slack):
            if slack < -tol:
                problems.append(f"pairwise bound fails at n={record.n}: slack {slack!r}")
        for record, slack in zip(self.records, self.monotone_slack):
            if slack < -tol:
                problems.append(f"tail infimum decreases after n={record.n}: slack {slack!r}")
        if self.membership_residual > tol:
            problems.append(f"combinations off by {self.membership_residual!r}")
        return problems

    def to_dict(self) -> dict:
        return {
            "sup_inf": self.sup_inf,
            "records": [record.to_dict() for record in self.records],
            "stages": list(self.stages),
            "tail_diameters": list(self.tail_diameters),
            "norm_bound_slack": list(self.norm_bound_slack),
            "cauchy_slack": list(self.cauchy_slack),
            "membership_residual": self.membership_residual,
        }


def _stage_is_active(sequence: np.ndarray, i: int) -> bool:
    if i == 1:
        return True
    magnitude = np.abs(sequence)
    return bool(np.any((magnitude > i - 1) & (magnitude <= i)))


def _solve_stage(
    space: FiniteFilteredSpace,
    vectors: np.ndarray,
    stage: int,
    tol: float,
    max_workers: int,
) -> list[MinNormResult]:
    def solve(n: int) -> MinNormResult:
        try:
            return hilbert_komlos_step(space, vectors[n - 1 :], slack=1.0 / n, tol=tol, start=n)
        except SolverError as e:
            raise ExtractionError(
                f"solver failed at stage {stage}, index {n}: {e}", stage=stage, index=n
            ) from e

    indices = range(1, len(vectors) + 1)
    if max_workers <= 1:
        return [solve(n) for n in indices]
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        return list(pool.map(solve, indices))


def _epsilons(
    space: FiniteFilteredSpace, vectors: np.ndarray, results: list[MinNormResult]
) -> list[float]:
    norms = np.sqrt(np.maximum(0.0, (vectors * vectors) @ space.probs))
    epsilons = []
    for n, result in enumerate(results, start=1):
        if result.norm == 0:
            epsilons.append(0.0)
            continue
        s = float(np.max(np.maximum(1.0, norms[n - 1 :])))
        epsilons.append(result.certificate_gap * s / result.norm)
    return epsilons


def komlos_extract(
    space: FiniteFilteredSpace,
    sequence: Sequence[Sequence[float]],
    levels: int | None = None,
    tol: float = SOLVER_TOL,
    max_workers: int = 1,
) -> tuple[list[ConvexWeights], KomlosReport]:
    """
    Forward convex weights lambda^n over positions n..N with L^1-close combinations.

    Stage i truncates the inputs at i and runs one Hilbert step per index on
    the stage-(i-1) combinations of the truncated inputs; the weight matrices
    compose. ``levels`` defaults to ceil(max |f_n|_inf) so the last stage is
    truncation-free. Stages where no value crosses a new truncation level are
    skipped. Solves within a stage run on up to ``max_workers`` threads.

    Raises:
        ValueError: If the sequence is empty
        ExtractionError: If a solve fails, naming its stage and index
    """
    if len(sequence) == 0:
        raise ValueError("need at least one vector")
    F = np.stack([as_random_variable(space, f) for f in sequence])
    N = len(F)
    top = float(np.max(np.abs(F)))
    if levels is None:
        levels = max(1, math.ceil(top))
    if levels < 1:
        raise ValueError(f"levels must be >= 1, got {levels}")
    if top > levels:
        logger.warning("last stage truncates values up to %g at level %d", top, levels)

    W = np.eye(N)
    results: list[MinNormResult] = []
    vectors = F
    last_level = 1
    stages = []
    skipped = []
    for i in range(1, levels + 1):
        if not _stage_is_active(F, i):
            stages.append({"stage": i, "active": False})
            skipped.append(i)
            continue
        logger.info("stage %d of %d", i, levels)
        vectors = W @ truncate(F, i)
        last_level = i
        results = _solve_stage(space, vectors, i, tol, max_workers)
        composed = np.zeros_like(W)
        for n, result in enumerate(results, start=1):
            composed[n - 1] = result.weights.weights @ W[n - 1 :]
        W = composed
        stages.append(
            {"stage": i, "active": True, "sup_inf": max(result.norm for result in results)}
        )
    if skipped:
        logger.warning("skipped %d inactive truncation stages", len(skipped))

    weights = [
        ConvexWeights(start=n, weights=_renormalized(W[n - 1, n - 1 :])) for n in range(1, N + 1)
    ]
    points = tuple(w.combine(F) for w in weights)
    stage_points = np.stack([result.point for result in results])
    reconstructed = np.stack([w.combine(truncate(F, last_level)) for w in weights])
    epsilons = _epsilons(space, vectors, results)
    tail_infs = [result.norm for result in results]
    sup_inf = max(tail_infs)

    records = tuple(
        KomlosRecord(
            n=n,
            norm=results[n - 1].norm,
            tail_inf=tail_infs[n - 1],
            certificate_gap=results[n - 1].certificate_gap,
            epsilon=epsilons[n - 1],
            weights=weights[n - 1],
        )
        for n in range(1, N + 1)
    )

    stacked = np.stack(points)
    l1 = np.abs(stacked[:, None, :] - stacked[None, :, :]) @ space.probs
    diameters = tuple(float(np.max(l1[n:, n:])) for n in range(N))

    # |g_n| is measured on the untruncated combinations, the pairwise bound on the last stage
    norm_bound = tuple(
        sup_inf + 1.0 / n + tol - lp_norm(space, points[n - 1], 2) for n in range(1, N + 1)
    )
    differences = stage_points[:, None, :] - stage_points[None, :, :]
    squared = (differences**2) @ space.probs
    cauchy = []
    for n in range(1, N + 1):
        floor = max(0.0, tail_infs[n - 1] - epsilons[n - 1])
        bound = 4.0 * (sup_inf + 1.0 / n) ** 2 - 4.0 * floor**2 + tol
        cauchy.append(float(bound - np.max(squared[n - 1 :, n - 1 :])))
    monotone = tuple(
        tail_infs[n] - (tail_infs[n - 1] - epsilons[n - 1]) for n in range(1, N)
    ) + (0.0,)

    report = KomlosReport(
        records=records,
        points=points,
        sup_inf=sup_inf,
        l1_distances=l1,
        tail_diameters=diameters,
        stages=tuple(stages),
        norm_bound_slack=norm_bound,
        cauchy_slack=tuple(cauchy),
        monotone_slack=monotone,
        membership_residual=float(np.max(np.abs(stage_points - reconstructed))),
        tol=tol,
    )
    return weights, report


def _renormalized(row: np.ndarray) -> np.ndarray:
    row = np.clip(row, 0.0, None)
    return row / row.sum()
