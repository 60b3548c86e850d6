"""Turn ratio traces into answers: an average, or a capacity-respecting allocation."""
from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

from .errors import InfeasibleDemand, NotConverged
from .simulator import SimulationTrace, _fmt


@dataclass(frozen=True)
class ResourceParams:
    pi_min: tuple
    pi_max: tuple
    rho_d: float
    leader_set: tuple = (1,)

    def __post_init__(self):
        lo, hi = np.asarray(self.pi_min, float), np.asarray(self.pi_max, float)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError("pi_min and pi_max must be vectors of equal length")
        if np.any(lo > hi):
            raise ValueError("pi_min must not exceed pi_max")
        if not self.leader_set:
            raise ValueError("leader_set must be nonempty")
        object.__setattr__(self, "pi_min", tuple(lo.tolist()))
        object.__setattr__(self, "pi_max", tuple(hi.tolist()))
        object.__setattr__(self, "leader_set", tuple(sorted(set(int(v) for v in self.leader_set))))

    @property
    def n(self) -> int:
        return len(self.pi_min)

    @property
    def sum_min(self) -> float:
        return math.fsum(self.pi_min)

    @property
    def sum_max(self) -> float:
        return math.fsum(self.pi_max)

    @property
    def feasible(self) -> bool:
        return self.sum_min <= self.rho_d <= self.sum_max


@dataclass
class ConvergenceReport:
    estimates: np.ndarray  # last defined ratio per node
    value: float  # median of the per-node estimates
    first_converged_round: int
    node_first_round: np.ndarray  # per node: first round after which it stays within tol
    tail_deviation: np.ndarray  # per node: max |ratio - value| over defined rounds from convergence on
    tol: float
    window: int

    def to_csv(self, path: str | os.PathLike) -> None:
        with open(path, "w") as fh:
            fh.write("node,estimate,first_converged_round,tail_deviation\n")
            for j, (est, dev) in enumerate(zip(self.estimates, self.tail_deviation)):
                fh.write(f"{j + 1},{_fmt(est)},{self.first_converged_round},{_fmt(dev)}\n")


def average_estimate(trace: SimulationTrace, window: int = 50, tol: float = 1e-6) -> ConvergenceReport:
    """Detect sustained agreement of the ratio estimates.

    Only rounds >= 1 are protocol output (round 0 is the initialization), and
    only defined ratios are inspected.  The reference value is the median of
    the nodes' last defined ratios.  Convergence is declared at the round right
    after the last one in which some defined ratio strays more than ``tol`` from
    it, provided at least ``window`` rounds follow and every node reports a
    defined ratio in them.
    """
    if window < 1:
        raise ValueError("window must be >= 1")
    ratios = trace.ratios[1:]
    defined = trace.defined[1:]
    K = ratios.shape[0]
    if K == 0:
        raise NotConverged("trace has no protocol rounds")
    n = ratios.shape[1]
    estimates = np.full(n, np.nan)
    for j in range(n):
        idx = np.flatnonzero(defined[:, j])
        if idx.size == 0:
            raise NotConverged(f"node {j + 1} never had a defined ratio")
        estimates[j] = ratios[idx[-1], j]
    value = float(np.median(estimates))
    dev = np.where(defined, np.abs(ratios - value), 0.0)
    bad = dev > tol
    node_first = np.empty(n, dtype=int)
    for j in range(n):
        idx = np.flatnonzero(bad[:, j])
        node_first[j] = (idx[-1] + 1 if idx.size else 0) + 1
    # rows are rounds 1..K, so row r is round r + 1
    first = int(node_first.max())
    remaining = K + 1 - first
    if remaining < window:
        raise NotConverged(
            f"agreement within {tol} only from round {first}; need {window} more rounds, have {remaining}"
        )
    tail = defined[first - 1:]
    missing = np.flatnonzero(~tail.any(axis=0))
    if missing.size:
        raise NotConverged(f"nodes {(missing + 1).tolist()} have no defined ratio after round {first}")
    tail_dev = np.where(tail, dev[first - 1:], 0.0).max(axis=0)
    return ConvergenceReport(estimates, value, first, node_first, tail_dev, tol, window)


def expected_allocation(params: ResourceParams) -> np.ndarray:
    """Closed-form limit: every node sits at the same fraction of its capacity range."""
    lo, hi = np.asarray(params.pi_min), np.asarray(params.pi_max)
    span = params.sum_max - params.sum_min
    if span == 0.0:
        return lo.copy()
    return lo + (params.rho_d - params.sum_min) / span * (hi - lo)


@dataclass
class AllocationReport:
    pi: np.ndarray
    ratio: float
    convergence: ConvergenceReport | None
    sum_error: float
    box_violation: float

    def to_csv(self, path: str | os.PathLike) -> None:
        with open(path, "w") as fh:
            fh.write("node,pi,ratio\n")
            for j, p in enumerate(self.pi):
                fh.write(f"{j + 1},{_fmt(p)},{_fmt(self.ratio)}\n")


def _infeasible(params: ResourceParams, detail: str) -> InfeasibleDemand:
    return InfeasibleDemand(
        f"demand {params.rho_d} outside capacity window [{params.sum_min}, {params.sum_max}]: {detail}",
        rho_d=params.rho_d,
        sum_min=params.sum_min,
        sum_max=params.sum_max,
    )


def resource_allocation(
    trace: SimulationTrace, params: ResourceParams, window: int = 50, tol: float = 1e-6
) -> AllocationReport:
    """Allocation ``pi_j = pi_min_j + r_j (pi_max_j - pi_min_j)`` from the converged ratios.

    A consensus ratio outside ``[0, 1]`` means the demand cannot be met; that
    is reported as :class:`InfeasibleDemand`.  Nodes with a zero-width range
    are pinned to their fixed capacity.
    """
    lo, hi = np.asarray(params.pi_min), np.asarray(params.pi_max)
    span = hi - lo
    if not np.any(span > 0):
        # every capacity is fixed, z stays zero everywhere and no ratio is ever defined
        if abs(params.rho_d - params.sum_min) > params.n * tol:
            raise _infeasible(params, "all capacities are fixed")
        return AllocationReport(lo.copy(), 0.0, None, abs(params.rho_d - params.sum_min), 0.0)
    report = average_estimate(trace, window=window, tol=tol)
    r = report.value
    if r < -tol or r > 1.0 + tol:
        raise _infeasible(params, f"consensus ratio {r:.6g} outside [0, 1]")
    pi = lo + np.clip(report.estimates, 0.0, 1.0) * span
    pi = np.where(span > 0, pi, lo)
    sum_err = abs(math.fsum(pi.tolist()) - params.rho_d)
    box = float(max(0.0, np.max(lo - pi), np.max(pi - hi)))
    return AllocationReport(pi, r, report, sum_err, box)

