"""Synchronous lossy-network simulator with a mass-conservation audit.

A round is bulk-synchronous: every node broadcasts its running totals, one
Bernoulli draw per edge decides delivery, and every node updates from what
arrived.  Mass that a sender has released but a receiver has not yet heard
is "in flight" on that edge: ``sender_total - receiver_last_heard``.
Node mass plus in-flight mass is invariant, for both iterations.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import kernels
from .errors import MassLeak
from .graph import DirectedGraph
from .protocol import NodeState, make_broadcast, receive_and_update
from .rng import make_rng, spawn_rngs

MASS_TOL = 1e-9


@dataclass(frozen=True)
class DropModel:
    """Per-edge delivery probability ``q`` with optional 1-based per-edge overrides."""

    q: float = 1.0
    per_edge: Mapping[tuple[int, int], float] = field(default_factory=dict)
    self_drop: bool = True

    def __post_init__(self):
        for value in [self.q, *self.per_edge.values()]:
            if not 0.0 < value <= 1.0:
                raise ValueError(f"delivery probability must be in (0, 1], got {value}")

    @property
    def uniform(self) -> bool:
        return not self.per_edge

    def edge_probabilities(self, g: DirectedGraph) -> np.ndarray:
        probs = np.full(g.m, float(self.q))
        for (j, i), value in self.per_edge.items():
            try:
                probs[g.edge_index(j - 1, i - 1)] = value
            except KeyError:
                raise ValueError(f"per-edge probability given for non-edge ({j}, {i})") from None
        return probs


@dataclass(frozen=True)
class LinkRealization:
    """One round's delivery indicators, aligned with ``graph.edge_array``."""

    graph: DirectedGraph
    mask: np.ndarray

    def as_dict(self) -> dict[tuple[int, int], int]:
        return {
            (j + 1, i + 1): int(x)
            for (j, i), x in zip(self.graph.edge_array.tolist(), self.mask.tolist())
        }


def _draw_masks(model: DropModel, g: DirectedGraph, rng, rounds: int) -> np.ndarray:
    # one uniform per edge per round, in edge order; chunked calls give the same stream
    u = rng.random((rounds, g.m))
    x = u < model.edge_probabilities(g)
    if not model.self_drop:
        x[:, g.self_loop_mask] = True
    return x.astype(np.uint8)


def sample_mask(model: DropModel, g: DirectedGraph, rng) -> LinkRealization:
    return LinkRealization(g, _draw_masks(model, g, make_rng(rng), 1)[0].astype(bool))


@dataclass
class NetworkState:
    """Array form of all node states: totals per node, last-heard values per edge."""

    y: np.ndarray
    z: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray
    nu: np.ndarray
    tau: np.ndarray
    fresh: np.ndarray

    @classmethod
    def initial(cls, y0, z0, g: DirectedGraph) -> "NetworkState":
        y = np.array(y0, dtype=float)
        z = np.array(z0, dtype=float)
        if y.shape != (g.n,) or z.shape != (g.n,):
            raise ValueError(f"initial vectors must have length {g.n}")
        return cls(
            y, z, np.zeros(g.n), np.zeros(g.n),
            np.zeros(g.m), np.zeros(g.m), np.zeros(g.m, dtype=np.uint8),
        )

    @classmethod
    def from_nodes(cls, nodes: Sequence[NodeState], g: DirectedGraph) -> "NetworkState":
        if len(nodes) != g.n:
            raise ValueError(f"expected {g.n} node states, got {len(nodes)}")
        st = cls.initial([s.y for s in nodes], [s.z for s in nodes], g)
        st.mu[:] = [s.mu for s in nodes]
        st.sigma[:] = [s.sigma for s in nodes]
        for e, (j, i) in enumerate(g.edge_array.tolist()):
            node = nodes[j]
            st.nu[e] = node.nu.get(i, 0.0)
            st.tau[e] = node.tau.get(i, 0.0)
            st.fresh[e] = node.fresh.get(i, False)
        return st

    def copy(self) -> "NetworkState":
        return NetworkState(*(a.copy() for a in (
            self.y, self.z, self.mu, self.sigma, self.nu, self.tau, self.fresh)))

    def in_flight(self, g: DirectedGraph) -> tuple[np.ndarray, np.ndarray]:
        src = g.senders
        return self.mu[src] - self.nu, self.sigma[src] - self.tau


def total_mass(values, in_flight) -> float:
    """Node mass plus in-flight mass, summed exactly."""
    return math.fsum(np.concatenate([np.ravel(values), np.ravel(in_flight)]).tolist())


def threshold_C(g: DirectedGraph) -> float:
    """``n / ((n + m) * maxoutdeg ** (n - 1))``: each z exceeds it infinitely often."""
    n, m = g.n, g.m
    return n / ((n + m) * float(g.out_degree.max()) ** (n - 1))


def positivity_bound(q: float, n: int) -> float:
    """Lower bound ``q ** n`` on the conditional probability that ``z_j[(k+1)n] >= C``."""
    return q ** n


def step(
    states: Sequence[NodeState], g: DirectedGraph, model: DropModel, rng
) -> tuple[list[NodeState], LinkRealization]:
    """One round through the per-node engine (reference path; ``run`` is the fast one)."""
    realization = sample_mask(model, g, rng)
    messages = [make_broadcast(s, int(g.out_degree[s.node])) for s in states]
    delivered: list[dict[int, object]] = [{} for _ in range(g.n)]
    for (j, i), x in zip(g.edge_array.tolist(), realization.mask.tolist()):
        if x:
            delivered[j][i] = messages[i]
    for j, s in enumerate(states):
        receive_and_update(s, delivered[j], g.in_neighbors[j])
    return list(states), realization


@dataclass
class SimulationTrace:
    """Per-round record; row ``k`` of ``y``/``z`` is the state after ``k`` rounds."""

    graph: DirectedGraph
    y: np.ndarray
    z: np.ndarray
    masks: np.ndarray
    mass_y: np.ndarray
    mass_z: np.ndarray
    threshold: float = 0.0
    flight_y: np.ndarray | None = None
    flight_z: np.ndarray | None = None
    final_state: NetworkState | None = None

    @property
    def rounds(self) -> int:
        return self.masks.shape[0]

    @property
    def n(self) -> int:
        return self.graph.n

    @property
    def defined(self) -> np.ndarray:
        return self.z > self.threshold

    @property
    def ratios(self) -> np.ndarray:
        """``y / z`` where defined, NaN elsewhere."""
        out = np.full(self.y.shape, np.nan)
        ok = self.defined
        out[ok] = self.y[ok] / self.z[ok]
        return out

    def to_csv(self, path: str | os.PathLike) -> None:
        ratios = self.ratios
        defined = self.defined
        with open(path, "w") as fh:
            fh.write("round,node,y,z,ratio,defined,mass_total\n")
            for k in range(self.y.shape[0]):
                mass = _fmt(self.mass_z[k])
                for j in range(self.n):
                    r = _fmt(ratios[k, j]) if defined[k, j] else ""
                    fh.write(
                        f"{k},{j + 1},{_fmt(self.y[k, j])},{_fmt(self.z[k, j])},"
                        f"{r},{int(defined[k, j])},{mass}\n"
                    )

    def masks_to_csv(self, path: str | os.PathLike) -> None:
        edges = self.graph.edge_array.tolist()
        with open(path, "w") as fh:
            fh.write("round,j,i,x\n")
            for k in range(self.rounds):
                for (j, i), x in zip(edges, self.masks[k].tolist()):
                    fh.write(f"{k},{j + 1},{i + 1},{int(x)}\n")


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _as_network_state(states, g: DirectedGraph) -> NetworkState:
    if isinstance(states, NetworkState):
        return states.copy()
    return NetworkState.from_nodes(states, g)


def run(
    states,
    g: DirectedGraph,
    model: DropModel,
    rng,
    rounds: int,
    *,
    threshold: float = 0.0,
    record_in_flight: bool = False,
    audit: bool = True,
    backend: str | None = None,
    chunk: int = 4096,
) -> SimulationTrace:
    """Simulate ``rounds`` rounds from ``states`` (node list or :class:`NetworkState`).

    Raises :class:`MassLeak` when node-plus-in-flight mass drifts from its
    initial value by more than ``1e-9 * n`` (scaled by the initial magnitude).
    """
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    rng = make_rng(rng)
    advance = kernels.get_advance(backend)
    st = _as_network_state(states, g)
    n, m = g.n, g.m
    src = np.ascontiguousarray(g.senders)
    dst = np.ascontiguousarray(g.receivers)
    outdeg = g.out_degree.astype(float)

    ys = np.empty((rounds + 1, n))
    zs = np.empty((rounds + 1, n))
    mass_y = np.empty(rounds + 1)
    mass_z = np.empty(rounds + 1)
    masks = np.empty((rounds, m), dtype=np.uint8)
    fly = flz = None
    if record_in_flight:
        fly = np.empty((rounds + 1, m))
        flz = np.empty((rounds + 1, m))

    f0y, f0z = st.in_flight(g)
    ys[0], zs[0] = st.y, st.z
    mass_y[0] = total_mass(st.y, f0y)
    mass_z[0] = total_mass(st.z, f0z)
    if record_in_flight:
        fly[0], flz[0] = f0y, f0z

    # kernel works on a leading replica axis of size 1
    y, z = st.y[None].copy(), st.z[None].copy()
    mu, sigma = st.mu[None].copy(), st.sigma[None].copy()
    nu, tau, fresh = st.nu[None].copy(), st.tau[None].copy(), st.fresh[None].copy()

    for k0 in range(0, rounds, chunk):
        c = min(chunk, rounds - k0)
        block = _draw_masks(model, g, rng, c)
        masks[k0:k0 + c] = block
        rows = slice(k0 + 1, k0 + 1 + c)
        advance(
            y, z, mu, sigma, nu, tau, fresh,
            src, dst, outdeg, block[None],
            ys[rows][None], zs[rows][None], mass_y[rows][None], mass_z[rows][None],
            fly[rows][None] if record_in_flight else None,
            flz[rows][None] if record_in_flight else None,
        )

    final = NetworkState(y[0], z[0], mu[0], sigma[0], nu[0], tau[0], fresh[0])
    trace = SimulationTrace(
        g, ys, zs, masks, mass_y, mass_z, threshold, fly, flz, final_state=final
    )
    if audit:
        audit_mass(trace)
    return trace


def audit_mass(trace: SimulationTrace, tol: float = MASS_TOL) -> None:
    n = trace.n
    for ledger, series, initial in (
        ("y", trace.mass_y, trace.y[0]),
        ("z", trace.mass_z, trace.z[0]),
    ):
        scale = max(1.0, float(np.abs(initial).max()), abs(float(series[0])))
        err = np.abs(series - series[0])
        bad = np.flatnonzero(err > tol * n * scale)
        if bad.size:
            k = int(bad[0])
            raise MassLeak(k, ledger, float(series[0]), float(series[k]))


def max_mass_error(trace: SimulationTrace) -> tuple[float, float]:
    """Largest deviation of the y- and z-ledgers from their initial totals."""
    y0, z0 = math.fsum(trace.y[0].tolist()), math.fsum(trace.z[0].tolist())
    return float(np.abs(trace.mass_y - y0).max()), float(np.abs(trace.mass_z - z0).max())


@dataclass
class ReplicaBatch:
    """Trajectories of independent replicas, shape ``(trials, rounds + 1, n)``."""

    y: np.ndarray
    z: np.ndarray
    mass_y: np.ndarray
    mass_z: np.ndarray


def run_replicas(
    g: DirectedGraph,
    model: DropModel,
    y0,
    z0,
    rounds: int,
    trials: int,
    seed,
    *,
    backend: str | None = None,
    batch: int = 2048,
) -> ReplicaBatch:
    """Independent replicas from the same initial state; replica ``r`` uses child stream ``r``
    of ``seed`` and reproduces ``run(..., rng=spawn_rngs(seed, trials)[r])`` exactly."""
    advance = kernels.get_advance(backend)
    n, m = g.n, g.m
    src = np.ascontiguousarray(g.senders)
    dst = np.ascontiguousarray(g.receivers)
    outdeg = g.out_degree.astype(float)
    rngs = spawn_rngs(seed, trials)
    ys = np.empty((trials, rounds + 1, n))
    zs = np.empty((trials, rounds + 1, n))
    mass_y = np.empty((trials, rounds + 1))
    mass_z = np.empty((trials, rounds + 1))
    ys[:, 0] = y0
    zs[:, 0] = z0
    mass_y[:, 0] = math.fsum(np.ravel(y0).tolist())
    mass_z[:, 0] = math.fsum(np.ravel(z0).tolist())
    for t0 in range(0, trials, batch):
        T = min(batch, trials - t0)
        masks = np.stack([_draw_masks(model, g, rngs[t0 + t], rounds) for t in range(T)])
        y = np.tile(np.asarray(y0, dtype=float), (T, 1))
        z = np.tile(np.asarray(z0, dtype=float), (T, 1))
        mu, sigma = np.zeros((T, n)), np.zeros((T, n))
        nu, tau = np.zeros((T, m)), np.zeros((T, m))
        fresh = np.zeros((T, m), dtype=np.uint8)
        yo = np.empty((T, rounds, n))
        zo = np.empty((T, rounds, n))
        my = np.empty((T, rounds))
        mz = np.empty((T, rounds))
        advance(y, z, mu, sigma, nu, tau, fresh, src, dst, outdeg, masks, yo, zo, my, mz)
        ys[t0:t0 + T, 1:] = yo
        zs[t0:t0 + T, 1:] = zo
        mass_y[t0:t0 + T, 1:] = my
        mass_z[t0:t0 + T, 1:] = mz
    return ReplicaBatch(ys, zs, mass_y, mass_z)
