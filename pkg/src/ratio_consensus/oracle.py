"""Batch of analytic checks on one graph and drop probability, with a CSV report."""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import moments as mo
from .errors import DimensionTooLarge
from .graph import DirectedGraph
from .simulator import _fmt

BURN_IN = 10


@dataclass
class Check:
    name: str
    passed: bool
    value: float
    detail: str = ""


@dataclass
class OracleReport:
    rows: list = field(default_factory=list)  # (k, quantity, norm_or_trace, value)
    checks: list = field(default_factory=list)
    lambda1: float = float("nan")
    lambda2_abs: float = float("nan")
    colsum_max_err: float = float("nan")

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def failures(self) -> list:
        return [c for c in self.checks if not c.passed]

    def add(self, name, passed, value, detail=""):
        self.checks.append(Check(name, bool(passed), float(value), detail))

    def to_csv(self, path: str | os.PathLike) -> None:
        with open(path, "w") as fh:
            fh.write("k,quantity,norm_or_trace,value\n")
            for k, quantity, kind, value in self.rows:
                fh.write(f"{'' if k is None else k},{quantity},{kind},{_fmt(value)}\n")
            for c in self.checks:
                fh.write(f",check:{c.name},{'pass' if c.passed else 'fail'},{_fmt(c.value)}\n")

    def spectral_to_csv(self, path: str | os.PathLike) -> None:
        with open(path, "w") as fh:
            fh.write("lambda1,lambda2_abs,colsum_max_err\n")
            fh.write(f"{_fmt(self.lambda1)},{_fmt(self.lambda2_abs)},{_fmt(self.colsum_max_err)}\n")


def _first_moment_checks(rep, vsys, y0, z0, q, k_max):
    sy, sz = math.fsum(y0.tolist()), math.fsum(z0.tolist())
    alpha = mo.alignment_constant(y0, z0)
    # long enough for the alignment gap to shrink below 1e-10
    Q = q * vsys.P + (1.0 - q) * np.eye(vsys.n)
    lam = np.sort(np.abs(np.linalg.eigvals(Q)))[::-1]
    gap = 1.0 - (lam[1] if lam.size > 1 else 0.0)
    horizon = max(k_max, int(math.ceil(50.0 / max(gap, 1e-6))))
    a, b = vsys.Ptilde @ y0, vsys.Ptilde @ z0
    worst_a = worst_y = 0.0
    align = float(np.linalg.norm(z0 - alpha * y0))
    for k in range(1, horizon + 1):
        yk, a_next = mo.first_moment_step(vsys, a, q)
        zk, b_next = mo.first_moment_step(vsys, b, q)
        a, b = a_next, b_next
        worst_a = max(worst_a, abs(a.sum() - sy), abs(b.sum() - sz))
        worst_y = max(worst_y, abs(yk.sum() - q * sy), abs(zk.sum() - q * sz))
        align = float(np.linalg.norm(zk - alpha * yk))
        if k <= k_max:
            rep.rows.append((k, "ybar", "sum", yk.sum()))
            rep.rows.append((k, "zbar-alpha*ybar", "norm", align))
    scale = max(1.0, abs(sy), abs(sz))
    rep.add("edge_mean_mass_constant", worst_a <= 1e-9 * scale, worst_a)
    rep.add("node_mean_mass_is_q_times_initial", worst_y <= 1e-9 * scale, worst_y)
    rep.add("first_moment_alignment", align <= 1e-10 * scale, align, f"after {horizon} steps")


def _cross_path_check(rep, vsys, pi, y0, q, steps):
    a = vsys.Ptilde @ y0
    Ga = np.outer(a, a)
    gam = mo.vec(Ga)
    worst = 0.0
    for _ in range(steps):
        Ga = mo.edge_second_moment_step(vsys, Ga, q)
        gam = pi @ gam
        worst = max(worst, float(np.abs(mo.vec(Ga) - gam).max()) / max(1.0, float(np.abs(gam).max())))
    rep.add("matrix_vs_vec_second_moment", worst <= 1e-12, worst)


def _deviation_paths(vsys, y0, z0, q, k_max):
    """Largest gap between the two routes to E[v_k v_kT] over k = 1..k_max."""
    alpha = mo.alignment_constant(y0, z0)
    a, b = vsys.Ptilde @ y0, vsys.Ptilde @ z0
    Ga, Ps, Xi = np.outer(a, a), np.outer(b, b), np.outer(a, b)
    C = vsys.C(q)
    worst = 0.0
    for _ in range(k_max):
        X = Ps + alpha * alpha * Ga - alpha * (Xi + Xi.T)
        via_chi = mo.node_second_moment(vsys, X, q)
        Ga, Phi = mo.second_moment_step(vsys, Ga, q, C)
        Ps, Lam = mo.second_moment_step(vsys, Ps, q, C)
        Xi, Ups = mo.second_moment_step(vsys, Xi, q, C)
        via_nodes = Lam + alpha * alpha * Phi - alpha * (Ups + Ups.T)
        worst = max(worst, float(np.abs(via_chi - via_nodes).max()))
    return worst


def run_oracle_checks(
    g: DirectedGraph,
    q: float,
    y0,
    z0=None,
    *,
    k_max: int = 200,
    trials: int = 10_000,
    mc_rounds: int = 15,
    seed=0,
    rate_tol: float = 0.05,
    radius_tol: float = 1e-3,
    mc_fraction: float = 0.99,
) -> OracleReport:
    """Spectral, conservation, alignment, decay and Monte Carlo checks.

    Dense ``Pi`` is only built for small graphs; above the cap its checks are
    skipped and the decay checks use the matrix-free operator.
    """
    vsys = mo.vectorize_graph(g)
    y0 = np.asarray(y0, dtype=float)
    z0 = np.ones(g.n) if z0 is None else np.asarray(z0, dtype=float)
    rep = OracleReport()

    pi = None
    try:
        pim = mo.build_pi(vsys, q)
    except DimensionTooLarge:
        rep.rows.append((None, "pi_dense", "skipped", float(g.n)))
        lam2 = mo.second_eigenvalue_modulus(lambda x: mo.apply_pi(vsys, q, x), vsys.N ** 2, max_iter=20_000, tol=1e-8)
        rep.lambda1, rep.lambda2_abs, rep.colsum_max_err = 1.0, lam2, float("nan")
    else:
        pi = pim.matrix
        rep.lambda1, rep.lambda2_abs, rep.colsum_max_err = pim.lambda1, pim.lambda2_abs, pim.colsum_max_err
        rep.add("pi_column_sums", pim.colsum_max_err <= 1e-12, pim.colsum_max_err)
        lo, hi = float(pi.min()), float(pi.max())
        rep.add("pi_entries_in_unit_interval", lo >= -1e-14 and hi <= 1 + 1e-14, min(lo, 1 - hi))
        rep.add("lambda1_is_one", abs(pim.lambda1 - 1.0) <= 1e-10, pim.lambda1)
        rep.add("lambda1_simple", pim.multiplicity_of_one == 1, pim.multiplicity_of_one)
        rep.add("lambda2_below_one", pim.lambda2_abs <= 1 - 1e-8, pim.lambda2_abs)
        _cross_path_check(rep, vsys, pi, y0, q, min(k_max, 50))

    _first_moment_checks(rep, vsys, y0, z0, q, k_max)

    raw = mo.chi_trajectory(vsys, y0, z0, q, k_max, stabilize=False, pi=pi)
    stab = mo.chi_trajectory(vsys, y0, z0, q, k_max, stabilize=True)
    for k in range(k_max + 1):
        rep.rows.append((k, "chi", "sum", raw.entry_sums[k]))
        rep.rows.append((k + 1, "E[vvT]", "trace", stab.deviation_trace[k]))
    worst_sum = float(np.abs(raw.entry_sums).max())
    rep.add("chi_entry_sum_zero", worst_sum <= 1e-9, worst_sum)
    tr = stab.deviation_trace
    rep.add("deviation_trace_nonnegative", bool(np.all(tr >= 0)), float(tr.min()))
    diffs = np.diff(tr[BURN_IN:])
    rep.add("deviation_trace_nonincreasing", bool(np.all(diffs <= 0)), float(diffs.max(initial=0.0)))
    aligned = bool(np.all(tr == 0))
    rate = 0.0 if aligned else mo.fit_geometric_rate(tr)
    radius = mo.invariant_subspace_radius(vsys, q)
    rep.rows.append((None, "deviation_trace", "fitted_rate", rate))
    rep.rows.append((None, "alignment_subspace", "spectral_radius", radius))
    rep.add("decay_rate_at_most_lambda2", rate <= rep.lambda2_abs + rate_tol, rate, f"|lambda2|={rep.lambda2_abs:.6g}")
    if not aligned:
        rep.add("decay_rate_matches_subspace_radius", abs(rate - radius) <= radius_tol, rate - radius)
    gap = _deviation_paths(vsys, y0, z0, q, k_max)
    rep.add("deviation_two_paths_agree", gap <= 1e-10, gap)

    if trials > 0:
        traj = mo.moment_trajectory(vsys, y0, z0, q, mc_rounds, keep_edge_moments=False)
        emp = mo.monte_carlo_moments(g, q, y0, z0, trials, mc_rounds, seed)
        for cmp in mo.compare_moments(traj, emp):
            rep.rows.append((None, f"mc:{cmp.quantity}", "fraction_within_3se", cmp.fraction))
            rep.add(f"monte_carlo_{cmp.quantity}", cmp.fraction >= mc_fraction, cmp.fraction)
    return rep
