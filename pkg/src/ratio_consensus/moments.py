"""First- and second-moment dynamics of the lossy double iteration.

Each edge ``(j, i)`` carries the mass ``a(j, i)`` that ``i`` has released
towards ``j`` but ``j`` has not yet absorbed.  Stacking these gives
``a_k`` of length ``n**2`` (column-major: edge ``(j, i)`` sits at ``i*n + j``)
with

    y_{k+1} = F (x_k * a_k)
    a_{k+1} = (u - x_k) * a_k + Pt y_{k+1}

where ``F = [I I ... I]`` sums the per-edge masses arriving at each node and
``Pt`` stacks ``P E_i`` so that ``F Pt = P``.  Taking expectations over the
i.i.d. Bernoulli(q) mask ``x_k`` gives closed linear recursions for the
means and second moments; the second moments vectorize to ``gamma_{k+1} =
Pi gamma_k`` with the ``n**4 x n**4`` matrix built by :func:`build_pi`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionTooLarge, NotColumnStochastic, ZeroInitialSum
from .graph import DirectedGraph, weight_matrix

DENSE_PI_MAX_N = 8


@dataclass(frozen=True)
class VectorizedSystem:
    P: np.ndarray
    F: np.ndarray
    Ptilde: np.ndarray

    @property
    def n(self) -> int:
        return self.P.shape[0]

    @property
    def N(self) -> int:
        return self.n * self.n

    @property
    def g_mask(self) -> np.ndarray:
        """Diagonal of ``G``: ones at ``l * N + l`` (the vec positions of diagonal entries)."""
        N = self.N
        g = np.zeros(N * N)
        g[np.arange(N) * (N + 1)] = 1.0
        return g

    @property
    def G(self) -> np.ndarray:
        return np.diag(self.g_mask)

    @property
    def PtF(self) -> np.ndarray:
        return self.Ptilde @ self.F

    def C(self, q: float) -> np.ndarray:
        """``q Pt F + (1 - q) I``: expected one-step map of the edge masses."""
        return q * self.PtF + (1.0 - q) * np.eye(self.N)

    @property
    def D(self) -> np.ndarray:
        return np.eye(self.N) - self.PtF

    def support(self) -> np.ndarray:
        """Vec indices of the graph's edges; every other entry of ``a_k`` stays zero."""
        j, i = np.nonzero(self.P)
        return np.sort(i * self.n + j)


def build_vectorization(P, tol: float = 1e-12) -> VectorizedSystem:
    P = np.array(P, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise NotColumnStochastic("P must be square")
    n = P.shape[0]
    if np.any(P < 0) or np.abs(P.sum(axis=0) - 1.0).max() > tol:
        raise NotColumnStochastic(
            f"column sums deviate from 1 by {np.abs(P.sum(axis=0) - 1.0).max():.3g}"
        )
    F = np.tile(np.eye(n), n)
    Pt = np.zeros((n * n, n))
    for i in range(n):
        Pt[i * n:(i + 1) * n, i] = P[:, i]
    err = np.abs(F @ Pt - P).max()
    if err > 1e-14:
        raise AssertionError(f"F Pt != P (max error {err:.3g})")
    P.setflags(write=False)
    F.setflags(write=False)
    Pt.setflags(write=False)
    return VectorizedSystem(P, F, Pt)


def vectorize_graph(g: DirectedGraph) -> VectorizedSystem:
    return build_vectorization(weight_matrix(g))


def _diag(X: np.ndarray) -> np.ndarray:
    return np.diag(np.diag(X))


@dataclass
class MomentTrajectory:
    """Analytic moments for rounds ``0..k_max``.

    ``ybar[k]`` is E[y_k]; ``Phi[k]``, ``Lambda[k]``, ``Upsilon[k]`` are
    E[y yT], E[z zT], E[y zT].  The edge-level moments ``Gamma`` (E[a aT]),
    ``Psi`` (E[b bT]) and ``Xi`` (E[a bT]) are kept for every round only when
    requested; otherwise just the last one is stored.
    """

    q: float
    ybar: np.ndarray
    zbar: np.ndarray
    abar: np.ndarray
    bbar: np.ndarray
    Phi: np.ndarray
    Lambda: np.ndarray
    Upsilon: np.ndarray
    Gamma: list = field(default_factory=list)
    Psi: list = field(default_factory=list)
    Xi: list = field(default_factory=list)

    @property
    def k_max(self) -> int:
        return self.ybar.shape[0] - 1

    @property
    def Delta(self) -> list:
        """E[b aT], the transpose of ``Xi`` by definition."""
        return [X.T for X in self.Xi]


def first_moment_step(vsys: VectorizedSystem, abar: np.ndarray, q: float):
    """``(ybar_{k+1}, abar_{k+1})`` from ``abar_k``."""
    return q * (vsys.F @ abar), vsys.C(q) @ abar


def edge_second_moment_step(vsys: VectorizedSystem, X: np.ndarray, q: float, C=None) -> np.ndarray:
    """E[a_{k+1} b_{k+1}T] from E[a_k b_kT]: ``C X CT + q(1-q) D diag(X) DT``."""
    C = vsys.C(q) if C is None else C
    D = vsys.D
    return C @ X @ C.T + q * (1.0 - q) * (D @ _diag(X) @ D.T)


def node_second_moment(vsys: VectorizedSystem, X: np.ndarray, q: float) -> np.ndarray:
    """E[y_{k+1} z_{k+1}T] from E[a_k b_kT]: ``F (q^2 X + q(1-q) diag X) FT``."""
    F = vsys.F
    return F @ (q * q * X + q * (1.0 - q) * _diag(X)) @ F.T


def second_moment_step(vsys: VectorizedSystem, X: np.ndarray, q: float, C=None):
    """Advance one edge-level second moment; also return the node-level one it emits."""
    return edge_second_moment_step(vsys, X, q, C), node_second_moment(vsys, X, q)


def moment_trajectory(vsys: VectorizedSystem, y0, z0, q: float, k_max: int, keep_edge_moments: bool = True) -> MomentTrajectory:
    if not 0.0 < q <= 1.0:
        raise ValueError("q must be in (0, 1]")
    n, N = vsys.n, vsys.N
    y0 = np.asarray(y0, dtype=float)
    z0 = np.asarray(z0, dtype=float)
    K = k_max + 1
    ybar, zbar = np.empty((K, n)), np.empty((K, n))
    abar, bbar = np.empty((K, N)), np.empty((K, N))
    Phi, Lam, Ups = np.empty((K, n, n)), np.empty((K, n, n)), np.empty((K, n, n))
    Pt = vsys.Ptilde
    a, b = Pt @ y0, Pt @ z0
    Ga, Ps, Xi = np.outer(a, a), np.outer(b, b), np.outer(a, b)
    ybar[0], zbar[0], abar[0], bbar[0] = y0, z0, a, b
    Phi[0], Lam[0], Ups[0] = np.outer(y0, y0), np.outer(z0, z0), np.outer(y0, z0)
    traj = MomentTrajectory(q, ybar, zbar, abar, bbar, Phi, Lam, Ups)
    C = vsys.C(q)
    for k in range(1, K):
        ybar[k], abar[k] = first_moment_step(vsys, abar[k - 1], q)
        zbar[k], bbar[k] = first_moment_step(vsys, bbar[k - 1], q)
        if keep_edge_moments:
            traj.Gamma.append(Ga)
            traj.Psi.append(Ps)
            traj.Xi.append(Xi)
        Ga, Phi[k] = second_moment_step(vsys, Ga, q, C)
        Ps, Lam[k] = second_moment_step(vsys, Ps, q, C)
        Xi, Ups[k] = second_moment_step(vsys, Xi, q, C)
    if keep_edge_moments:
        traj.Gamma.append(Ga)
        traj.Psi.append(Ps)
        traj.Xi.append(Xi)
    else:
        traj.Gamma, traj.Psi, traj.Xi = [Ga], [Ps], [Xi]
    return traj


# --- the n^4 x n^4 second-moment matrix -------------------------------------


def vec(X: np.ndarray) -> np.ndarray:
    return np.asarray(X).reshape(-1, order="F")


def unvec(x: np.ndarray, N: int) -> np.ndarray:
    return np.asarray(x).reshape((N, N), order="F")


@dataclass
class PiMatrix:
    matrix: np.ndarray
    q: float
    lambda1: float
    lambda2_abs: float
    eigenvalues: np.ndarray

    @property
    def colsum_max_err(self) -> float:
        return float(np.abs(self.matrix.sum(axis=0) - 1.0).max())

    @property
    def left_eigenvector(self) -> np.ndarray:
        # column stochastic: the all-ones vector is a left eigenvector for 1
        return np.ones(self.matrix.shape[0])

    def right_eigenvector(self, tol: float = 1e-10, max_iter: int = 100_000) -> np.ndarray:
        """Stationary vector (sums to 1) by power iteration."""
        _, v = power_iteration(lambda x: self.matrix @ x, self.matrix.shape[0], tol=tol, max_iter=max_iter)
        return v / v.sum()

    @property
    def multiplicity_of_one(self) -> int:
        return int(np.sum(np.abs(self.eigenvalues - 1.0) <= 1e-10))


def pi_dense(vsys: VectorizedSystem, q: float) -> np.ndarray:
    C = vsys.C(q)
    D = vsys.D
    return np.kron(C, C) + q * (1.0 - q) * np.kron(D, D) * vsys.g_mask[None, :]


def build_pi(vsys: VectorizedSystem, q: float, max_n: int = DENSE_PI_MAX_N) -> PiMatrix:
    """Dense ``Pi`` with its spectrum.

    Eigenvalues come from a dense eigensolver; :func:`power_iteration` and
    :func:`second_eigenvalue_modulus` give the iterative estimates.
    """
    if not 0.0 < q <= 1.0:
        raise ValueError("q must be in (0, 1]")
    if vsys.n > max_n:
        raise DimensionTooLarge(
            f"dense Pi for n={vsys.n} needs {vsys.n ** 8 * 8 / 2**30:.1f} GiB; cap is n <= {max_n}"
        )
    M = pi_dense(vsys, q)
    ev = np.linalg.eigvals(M)
    order = np.argsort(-np.abs(ev), kind="stable")
    ev = ev[order]
    lam1 = float(ev[0].real)
    lam2 = float(np.abs(ev[1])) if ev.size > 1 else 0.0
    return PiMatrix(M, q, lam1, lam2, ev)


def apply_pi(vsys: VectorizedSystem, q: float, x: np.ndarray, C=None) -> np.ndarray:
    """Matrix-free ``Pi @ x`` via the edge-level recursion; usable for any ``n``."""
    return vec(edge_second_moment_step(vsys, unvec(x, vsys.N), q, C))


def pi_operator(vsys: VectorizedSystem, q: float):
    from scipy.sparse.linalg import LinearOperator

    C = vsys.C(q)
    size = vsys.N ** 2
    return LinearOperator((size, size), matvec=lambda x: apply_pi(vsys, q, np.ravel(x), C), dtype=float)


def power_iteration(matvec, size: int, x0=None, tol: float = 1e-10, max_iter: int = 100_000):
    """Dominant eigenvalue estimate ``(lambda, v)`` for a nonnegative operator."""
    x = np.ones(size) / size if x0 is None else np.asarray(x0, dtype=float)
    x = x / np.linalg.norm(x)
    lam = 0.0
    for _ in range(max_iter):
        y = matvec(x)
        new = float(x @ y)
        norm = np.linalg.norm(y)
        if norm == 0.0:
            return 0.0, y
        y = y / norm
        if abs(new - lam) <= tol and np.linalg.norm(y - x) <= math.sqrt(tol):
            return new, y
        lam, x = new, y
    return lam, x


def second_eigenvalue_modulus(matvec, size: int, seed: int = 0, block: int = 50, tol: float = 1e-10, max_iter: int = 100_000) -> float:
    """|lambda_2| of a column-stochastic operator by power iteration on the zero-sum subspace.

    ``uT Pi = uT`` makes ``{x : sum(x) = 0}`` invariant and removes the unit
    eigenvalue from it.  The growth factor is measured over blocks of steps so
    a complex pair (oscillating iterates) still gives the modulus.
    """
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(size)
    x -= x.mean()
    x /= np.linalg.norm(x)
    est = None
    steps = 0
    while steps < max_iter:
        log_growth = 0.0
        for _ in range(block):
            x = matvec(x)
            x -= x.mean()
            s = np.linalg.norm(x)
            if s == 0.0:
                return 0.0
            log_growth += math.log(s)
            x /= s
        steps += block
        new = math.exp(log_growth / block)
        if est is not None and abs(new - est) <= tol:
            return new
        est = new
    return float(est)


# --- alignment error w_k = b_k - alpha a_k -----------------------------------


def alignment_constant(y0, z0) -> float:
    sy = math.fsum(np.ravel(y0).tolist())
    if sy == 0.0:
        raise ZeroInitialSum("alignment constant needs a nonzero sum of y_0")
    return math.fsum(np.ravel(z0).tolist()) / sy


def chi_initial(vsys: VectorizedSystem, y0, z0, alpha: float | None = None) -> np.ndarray:
    """``psi_0 + alpha^2 gamma_0 - alpha (xi_0 + delta_0)``, i.e. vec of E[w_0 w_0T]."""
    alpha = alignment_constant(y0, z0) if alpha is None else alpha
    a = vsys.Ptilde @ np.asarray(y0, dtype=float)
    b = vsys.Ptilde @ np.asarray(z0, dtype=float)
    Xi0 = np.outer(a, b)
    return vec(np.outer(b, b) + alpha * alpha * np.outer(a, a) - alpha * (Xi0 + Xi0.T))


def _double_center(X: np.ndarray, sup: np.ndarray) -> np.ndarray:
    Y = X[np.ix_(sup, sup)]
    Y = Y - Y.mean(axis=0, keepdims=True) - Y.mean(axis=1, keepdims=True) + Y.mean()
    out = np.zeros_like(X)
    out[np.ix_(sup, sup)] = Y
    return out


@dataclass
class ChiTrajectory:
    alpha: float
    chi: np.ndarray  # (K+1, N^2)
    entry_sums: np.ndarray
    deviation_trace: np.ndarray  # trace E[v_{k+1} v_{k+1}T] for k = 0..K

    @property
    def norms(self) -> np.ndarray:
        return np.linalg.norm(self.chi, axis=1)


def chi_trajectory(vsys: VectorizedSystem, y0, z0, q: float, k_max: int, *, stabilize: bool = True, pi: np.ndarray | None = None) -> ChiTrajectory:
    """Iterate ``chi_k = Pi chi_{k-1}``.

    ``E[w_k w_kT]`` has zero row and column sums and vanishes off the edge
    support for every k.  With ``stabilize`` the iterate is projected back onto
    that subspace after each step so rounding noise (which has no such
    structure and decays more slowly) cannot swamp the signal.  ``pi`` selects
    the dense matrix product instead of the matrix-free one.
    """
    alpha = alignment_constant(y0, z0)
    N = vsys.N
    C = vsys.C(q)
    sup = vsys.support()
    chi = np.empty((k_max + 1, N * N))
    chi[0] = chi_initial(vsys, y0, z0, alpha)
    for k in range(1, k_max + 1):
        nxt = pi @ chi[k - 1] if pi is not None else apply_pi(vsys, q, chi[k - 1], C)
        if stabilize:
            nxt = vec(_double_center(unvec(nxt, N), sup))
        chi[k] = nxt
    sums = np.array([math.fsum(c.tolist()) for c in chi])
    traces = np.array([np.trace(node_second_moment(vsys, unvec(c, N), q)) for c in chi])
    return ChiTrajectory(alpha, chi, sums, traces)


def fit_geometric_rate(series, tail: float = 0.5) -> float:
    """Least-squares geometric rate of a positive sequence over its last ``tail`` fraction."""
    s = np.asarray(series, dtype=float)
    start = int(len(s) * (1.0 - tail))
    k = np.arange(start, len(s))
    vals = s[start:]
    keep = vals > 0
    if keep.sum() < 2:
        return 0.0
    slope = np.polyfit(k[keep], np.log(vals[keep]), 1)[0]
    return float(math.exp(slope))


def invariant_subspace_radius(vsys: VectorizedSystem, q: float) -> float:
    """Spectral radius of ``Pi`` on the subspace where E[w wT] lives.

    That subspace is matrices supported on edge-by-edge pairs with zero row and
    column sums (``uT D = 0`` keeps both properties).  Its radius is the
    asymptotic decay rate of ``chi_k``; it can be strictly below ``|lambda_2|``.
    """
    N = vsys.N
    sup = vsys.support()
    s = sup.size
    # basis of {Y in R^{s x s}: Y 1 = 0, 1T Y = 0} = H Z HT with H an orthonormal basis of 1-perp
    H = np.linalg.qr(np.eye(s) - 1.0 / s, mode="reduced")[0][:, : s - 1]
    if s == 1:
        return 0.0
    C = vsys.C(q)
    cols = []
    basis = []
    for a in range(s - 1):
        for b in range(s - 1):
            Y = np.outer(H[:, a], H[:, b])
            X = np.zeros((N, N))
            X[np.ix_(sup, sup)] = Y
            basis.append((a, b))
            Xn = edge_second_moment_step(vsys, X, q, C)[np.ix_(sup, sup)]
            cols.append(vec(H.T @ Xn @ H))
    R = np.array(cols).T
    return float(np.abs(np.linalg.eigvals(R)).max())


def deviation_second_moment(vsys: VectorizedSystem, traj: MomentTrajectory, k: int):
    """E[v_k v_kT] with ``v_k = z_k - alpha y_k``, by two independent routes.

    Returns ``(from_chi, from_node_moments)``: the first pushes E[w_{k-1} w_{k-1}T]
    through ``F (q^2 X + q(1-q) diag X) FT``; the second combines
    ``Lambda + alpha^2 Phi - alpha (Upsilon + UpsilonT)``.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(traj.Gamma) <= k - 1:
        raise ValueError("trajectory lacks edge moments for round k - 1")
    alpha = alignment_constant(traj.ybar[0], traj.zbar[0])
    Ga, Ps, Xi = traj.Gamma[k - 1], traj.Psi[k - 1], traj.Xi[k - 1]
    X = Ps + alpha * alpha * Ga - alpha * (Xi + Xi.T)
    via_chi = node_second_moment(vsys, X, traj.q)
    U = traj.Upsilon[k]
    via_nodes = traj.Lambda[k] + alpha * alpha * traj.Phi[k] - alpha * (U + U.T)
    return via_chi, via_nodes


# --- Monte Carlo cross-validation --------------------------------------------


@dataclass
class EmpiricalMoments:
    trials: int
    mean_y: np.ndarray
    mean_z: np.ndarray
    yy: np.ndarray
    zz: np.ndarray
    yz: np.ndarray
    se_y: np.ndarray
    se_z: np.ndarray
    se_yy: np.ndarray
    se_zz: np.ndarray
    se_yz: np.ndarray


def _mean_se(samples: np.ndarray):
    T = samples.shape[0]
    mean = samples.mean(axis=0)
    if T < 2:
        return mean, np.zeros_like(mean)
    return mean, samples.std(axis=0, ddof=1) / math.sqrt(T)


def monte_carlo_moments(g: DirectedGraph, q: float, y0, z0, trials: int, k_max: int, seed, backend=None) -> EmpiricalMoments:
    """Sample moments of ``y_k``, ``z_k`` over independent self-drop replicas."""
    from .simulator import DropModel, run_replicas

    if trials < 1:
        raise ValueError("trials must be >= 1")
    batch = run_replicas(g, DropModel(q=q, self_drop=True), y0, z0, k_max, trials, seed, backend=backend)
    Y, Z = batch.y, batch.z
    my, sy = _mean_se(Y)
    mz, sz = _mean_se(Z)
    myy, syy = _mean_se(Y[:, :, :, None] * Y[:, :, None, :])
    mzz, szz = _mean_se(Z[:, :, :, None] * Z[:, :, None, :])
    myz, syz = _mean_se(Y[:, :, :, None] * Z[:, :, None, :])
    return EmpiricalMoments(trials, my, mz, myy, mzz, myz, sy, sz, syy, szz, syz)


@dataclass
class BandComparison:
    quantity: str
    total: int
    inside: int
    failures: list  # (k, index, analytic, empirical, se)

    @property
    def fraction(self) -> float:
        return self.inside / self.total if self.total else 1.0


def compare_within_band(name: str, analytic, empirical, se, width: float = 3.0, exact_tol: float = 1e-12) -> BandComparison:
    """Count components with ``|analytic - empirical| <= width * se``.

    Components with zero standard error (deterministic in every replica) must
    match to ``exact_tol`` relative to their magnitude.
    """
    analytic, empirical, se = map(np.asarray, (analytic, empirical, se))
    diff = np.abs(analytic - empirical)
    bound = np.where(se > 0, width * se, exact_tol * np.maximum(1.0, np.abs(analytic)))
    ok = diff <= bound
    failures = [
        (int(idx[0]), tuple(int(v) for v in idx[1:]), float(analytic[idx]), float(empirical[idx]), float(se[idx]))
        for idx in zip(*np.nonzero(~ok))
    ]
    return BandComparison(name, int(ok.size), int(ok.sum()), failures)


def compare_moments(traj: MomentTrajectory, emp: EmpiricalMoments, width: float = 3.0) -> list[BandComparison]:
    K = min(traj.k_max, emp.mean_y.shape[0] - 1) + 1
    pairs = [
        ("E[y]", traj.ybar, emp.mean_y, emp.se_y),
        ("E[z]", traj.zbar, emp.mean_z, emp.se_z),
        ("E[yyT]", traj.Phi, emp.yy, emp.se_yy),
        ("E[zzT]", traj.Lambda, emp.zz, emp.se_zz),
        ("E[yzT]", traj.Upsilon, emp.yz, emp.se_yz),
    ]
    return [compare_within_band(name, a[:K], e[:K], s[:K], width) for name, a, e, s in pairs]


@dataclass
class HadamardReport:
    S_closed: np.ndarray
    T_closed: np.ndarray
    S_empirical: np.ndarray
    T_empirical: np.ndarray
    S_se: np.ndarray
    T_se: np.ndarray

    def within(self, width: float = 3.0, exact_tol: float = 1e-12) -> bool:
        s = compare_within_band("S", self.S_closed[None], self.S_empirical[None], self.S_se[None], width, exact_tol)
        t = compare_within_band("T", self.T_closed[None], self.T_empirical[None], self.T_se[None], width, exact_tol)
        return not s.failures and not t.failures


def hadamard_closed_form(c, d, q: float):
    """E[(c*x)(x*d)T] and E[(c*x)((u-x)*d)T] for i.i.d. Bernoulli(q) entries of x."""
    cd = np.outer(c, d)
    S = q * q * cd + q * (1.0 - q) * _diag(cd)
    T = q * (1.0 - q) * cd - q * (1.0 - q) * _diag(cd)
    return S, T


def hadamard_expectation_check(c, d, q: float, trials: int, seed) -> HadamardReport:
    from .rng import make_rng

    c = np.asarray(c, dtype=float)
    d = np.asarray(d, dtype=float)
    rng = make_rng(seed)
    x = (rng.random((trials, c.size)) < q).astype(float)
    cx = c * x
    S_s = cx[:, :, None] * (x * d)[:, None, :]
    T_s = cx[:, :, None] * ((1.0 - x) * d)[:, None, :]
    S_m, S_se = _mean_se(S_s)
    T_m, T_se = _mean_se(T_s)
    S, T = hadamard_closed_form(c, d, q)
    return HadamardReport(S, T, S_m, T_m, S_se, T_se)
