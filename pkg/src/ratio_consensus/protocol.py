"""Per-node state machine for the packet-drop robust double iteration.

Each node keeps two internal states (``y`` and ``z``), broadcasts the running
totals of ``state / out_degree`` it has ever emitted, and remembers the last
running total heard from every in-neighbor.  The difference between two
successive received totals is exactly the mass released by that neighbor since
the previous delivery, so a dropped packet delays mass instead of losing it.

A message also carries the latest increment.  When the receiver heard the
same sender in the previous round, the increment *is* the difference of the
two totals, and using it directly keeps a loss-free run bit-identical to the
plain linear iteration (``fl(a + b) - a`` is not ``b`` in floating point).
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import InfeasibleDemandWarning, UnknownSender


@dataclass
class NodeState:
    """Protocol variables of one node; ``node`` is the 0-based vertex index."""

    node: int
    y: float
    z: float
    mu: float = 0.0
    sigma: float = 0.0
    nu: dict[int, float] = field(default_factory=dict)
    nu_prev: dict[int, float] = field(default_factory=dict)
    tau: dict[int, float] = field(default_factory=dict)
    tau_prev: dict[int, float] = field(default_factory=dict)
    # senders heard in the previous round
    fresh: dict[int, bool] = field(default_factory=dict)


@dataclass(frozen=True)
class Message:
    sender: int
    mu: float
    sigma: float
    mu_step: float
    sigma_step: float


def init_average_consensus(values: Sequence[float]) -> list[NodeState]:
    """``y_j = v_j`` and ``z_j = 1``; every running total starts at zero."""
    return [NodeState(node=j, y=float(v), z=1.0) for j, v in enumerate(values)]


def init_resource_coordination(
    pi_min: Sequence[float],
    pi_max: Sequence[float],
    rho_d: float,
    leader_set: Iterable[int],
) -> list[NodeState]:
    """Initial states for the resource-coordination problem.

    ``leader_set`` holds the 1-based labels of the nodes contacted by the
    external leader; each of them starts with an equal share of ``rho_d``.
    Infeasible demands only warn: every node can detect infeasibility from
    its converged ratio.
    """
    lo = np.asarray(pi_min, dtype=float)
    hi = np.asarray(pi_max, dtype=float)
    if lo.shape != hi.shape or lo.ndim != 1:
        raise ValueError("pi_min and pi_max must be vectors of equal length")
    if np.any(lo > hi):
        raise ValueError("pi_min must not exceed pi_max")
    leaders = sorted(set(int(v) for v in leader_set))
    if not leaders:
        raise ValueError("leader_set must be nonempty")
    n = lo.size
    if leaders[0] < 1 or leaders[-1] > n:
        raise ValueError(f"leader labels must lie in 1..{n}")
    if not lo.sum() <= rho_d <= hi.sum():
        warnings.warn(
            f"demand {rho_d} outside capacity window [{lo.sum()}, {hi.sum()}]",
            InfeasibleDemandWarning,
            stacklevel=2,
        )
    share = rho_d / len(leaders)
    y = -lo
    for v in leaders:
        y[v - 1] = share - lo[v - 1]
    z = hi - lo
    return [NodeState(node=j, y=float(y[j]), z=float(z[j])) for j in range(n)]


def make_broadcast(state: NodeState, out_degree: int) -> Message:
    """Add this round's share to the running totals and emit them."""
    mu_step = state.y / out_degree
    sigma_step = state.z / out_degree
    state.mu += mu_step
    state.sigma += sigma_step
    return Message(state.node, state.mu, state.sigma, mu_step, sigma_step)


def receive_and_update(
    state: NodeState,
    delivered: Mapping[int, Message],
    in_neighbors: Sequence[int],
) -> NodeState:
    """Consume this round's delivered messages and compute the next ``y``, ``z``.

    ``delivered`` maps sender index to message and must only contain
    in-neighbors (including the node itself when its self-loop delivered).
    Contributions are summed in ascending sender order.
    """
    allowed = set(in_neighbors)
    for sender in delivered:
        if sender not in allowed:
            raise UnknownSender(f"node {state.node} has no in-neighbor {sender}")
    y_next = 0.0
    z_next = 0.0
    for i in sorted(allowed):
        nu_old = state.nu.get(i, 0.0)
        tau_old = state.tau.get(i, 0.0)
        state.nu_prev[i] = nu_old
        state.tau_prev[i] = tau_old
        msg = delivered.get(i)
        if msg is None:
            state.fresh[i] = False
            continue
        if state.fresh.get(i, False):
            dy, dz = msg.mu_step, msg.sigma_step
        else:
            dy, dz = msg.mu - nu_old, msg.sigma - tau_old
        state.nu[i] = msg.mu
        state.tau[i] = msg.sigma
        state.fresh[i] = True
        y_next += dy
        z_next += dz
    state.y = y_next
    state.z = z_next
    return state


def ratio_estimate(state: NodeState, threshold: float = 0.0) -> float | None:
    """``y / z`` when ``z`` exceeds ``threshold``, else ``None``."""
    if state.z > threshold:
        return state.y / state.z
    return None


def reliable_step(values: np.ndarray, g) -> np.ndarray:
    """One round of the loss-free iteration ``x_j <- sum_{i in N-(j)} x_i / outdeg(i)``."""
    out = np.zeros(g.n)
    deg = g.out_degree
    for j in range(g.n):
        acc = 0.0
        for i in g.in_neighbors[j]:
            acc += values[i] / deg[i]
        out[j] = acc
    return out


def reliable_run(y0, z0, g, rounds: int) -> tuple[np.ndarray, np.ndarray]:
    """Trajectories of the loss-free double iteration, shape ``(rounds + 1, n)``."""
    ys = np.empty((rounds + 1, g.n))
    zs = np.empty((rounds + 1, g.n))
    ys[0] = y0
    zs[0] = z0
    for k in range(rounds):
        ys[k + 1] = reliable_step(ys[k], g)
        zs[k + 1] = reliable_step(zs[k], g)
    return ys, zs
