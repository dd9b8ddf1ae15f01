"""Nonparametric bootstrap standard errors and percentile confidence
intervals.

Every replicate redraws rows with replacement and reruns the full pipeline
(all nuisances are refit on the resample). Resample indices for replicate r
depend only on (seed, r), so parallel and serial runs agree exactly.

The empirical influence-function variance estimator is deliberately not
offered: it is not robust to the same mis-specifications the point estimator
tolerates.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from .data import Dataset
from .errors import ContractError, InstabilityError, PathmedError

MAX_FAILURE_SHARE = 0.20


@dataclass(frozen=True)
class BootstrapResult:
    point: float
    se: float
    ci_lower: float
    ci_upper: float
    reps_requested: int
    reps_succeeded: int
    seed: int
    level: float


def resample_indices(n: int, seed: int, rep: int) -> np.ndarray:
    """With-replacement row indices for one replicate, derived from
    (seed, rep) only."""
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(rep,)))
    return rng.integers(0, n, size=n)


def _replicate(args):
    data, pipeline, seed, rep = args
    rows = resample_indices(data.n, seed, rep)
    try:
        return rep, dict(pipeline(data.subset(rows)))
    except PathmedError as exc:
        return rep, f"{exc.code}: {exc}"


def bootstrap_table(
    data: Dataset,
    pipeline: Callable[[Dataset], Mapping[str, float]],
    reps: int,
    seed: int,
    level: float = 0.95,
    jobs: int = 1,
) -> dict[str, BootstrapResult]:
    """Bootstrap a pipeline returning several named scalars at once (the
    replicate refits are shared across quantities).

    Replicates failing with package errors (positivity, fit, ...) are
    excluded; more than 20% failures raises InstabilityError carrying the
    partial results.
    """
    if reps < 2:
        raise ContractError(f"need reps >= 2, got {reps}")
    if not 0.0 < level < 1.0:
        raise ContractError(f"confidence level must be in (0, 1), got {level}")
    full = dict(pipeline(data))

    tasks = [(data, pipeline, seed, rep) for rep in range(reps)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_replicate, tasks,
                                     chunksize=max(1, reps // (4 * jobs))))
    else:
        outcomes = [_replicate(task) for task in tasks]

    draws: dict[str, list[float]] = {key: [] for key in full}
    failures: list[tuple[int, str]] = []
    for rep, outcome in sorted(outcomes):
        if isinstance(outcome, str):
            failures.append((rep, outcome))
        else:
            for key in full:
                draws[key].append(outcome[key])

    succeeded = reps - len(failures)
    alpha = 1.0 - level
    results = {}
    for key, values in draws.items():
        arr = np.asarray(values, dtype=float)
        if arr.size >= 2:
            se = float(arr.std(ddof=1))
            lo, hi = np.percentile(arr, [100 * alpha / 2, 100 * (1 - alpha / 2)])
        else:
            se, lo, hi = float("nan"), float("nan"), float("nan")
        results[key] = BootstrapResult(
            point=full[key], se=se, ci_lower=float(lo), ci_upper=float(hi),
            reps_requested=reps, reps_succeeded=succeeded, seed=seed,
            level=level,
        )
    if len(failures) > MAX_FAILURE_SHARE * reps:
        raise InstabilityError(
            f"{len(failures)} of {reps} bootstrap replicates failed "
            f"(first: {failures[0][1]})",
            partial=results,
        )
    return results


def bootstrap(
    data: Dataset,
    pipeline: Callable[[Dataset], float],
    reps: int,
    seed: int,
    level: float = 0.95,
    jobs: int = 1,
) -> BootstrapResult:
    """Bootstrap a scalar estimator pipeline."""
    table = bootstrap_table(data, _Scalar(pipeline), reps, seed,
                            level=level, jobs=jobs)
    return table["value"]


class _Scalar:
    """Picklable adapter turning a scalar pipeline into a one-key table."""

    def __init__(self, pipeline: Callable[[Dataset], float]):
        self.pipeline = pipeline

    def __call__(self, data: Dataset) -> dict[str, float]:
        return {"value": float(self.pipeline(data))}
