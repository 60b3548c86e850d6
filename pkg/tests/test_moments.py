import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ratio_consensus import graph, moments as mo
from ratio_consensus.errors import DimensionTooLarge, NotColumnStochastic, ZeroInitialSum


def Ptilde_from_blocks(P):
    # stack (E_i P^T)^T = P E_i with E_i the i-th diagonal selector
    n = P.shape[0]
    blocks = []
    for i in range(n):
        E = np.zeros((n, n))
        E[i, i] = 1.0
        blocks.append((E @ P.T).T)
    return np.vstack(blocks)


def test_two_node_vectorization():
    P = np.full((2, 2), 0.5)
    v = mo.build_vectorization(P)
    assert v.Ptilde.shape == (4, 2)
    np.testing.assert_array_equal(v.Ptilde.sum(axis=0), [1, 1])
    np.testing.assert_array_equal(v.F @ v.Ptilde, P)


def test_one_node_vectorization():
    v = mo.build_vectorization([[1.0]])
    assert v.F.tolist() == [[1.0]] and v.Ptilde.tolist() == [[1.0]] and v.G.tolist() == [[1.0]]


def test_rejects_non_stochastic():
    with pytest.raises(NotColumnStochastic):
        mo.build_vectorization([[0.5, 0.2], [0.5, 0.7]])
    with pytest.raises(NotColumnStochastic):
        mo.build_vectorization([[1.5, 0.0], [-0.5, 1.0]])


@pytest.mark.parametrize("name", ["cycle:3", "cycle-chord:4", "paper5", "complete:3"])
def test_ptilde_layout(name):
    P = graph.weight_matrix(graph.builtin_graph(name))
    v = mo.build_vectorization(P)
    np.testing.assert_array_equal(v.Ptilde, Ptilde_from_blocks(P))
    n = P.shape[0]
    for i in range(n):
        np.testing.assert_array_equal(v.Ptilde[i * n:(i + 1) * n, i], P[:, i])
    assert np.abs(v.F @ v.Ptilde - P).max() <= 1e-14


def test_G_is_diagonal_idempotent_rank():
    v = mo.vectorize_graph(graph.cycle(3))
    G = v.G
    np.testing.assert_array_equal(G @ G, G)
    assert np.count_nonzero(G) == v.N and np.linalg.matrix_rank(G) == v.N
    # ones exactly at the vec positions of diagonal entries
    X = np.arange(v.N * v.N, dtype=float).reshape(v.N, v.N)
    np.testing.assert_array_equal(G @ mo.vec(X), mo.vec(np.diag(np.diag(X))))


def test_first_moment_reduction_q1(cycle_chord4):
    v = mo.vectorize_graph(cycle_chord4)
    y0 = np.array([2.0, -1, 4, 3])
    t = mo.moment_trajectory(v, y0, np.ones(4), 1.0, 10)
    for k in range(10):
        np.testing.assert_allclose(t.ybar[k + 1], v.P @ t.ybar[k], atol=1e-14)


@pytest.mark.parametrize("q", [0.1, 0.5, 0.9])
def test_first_moment_sums(cycle_chord4, q):
    v = mo.vectorize_graph(cycle_chord4)
    y0 = np.array([2.0, -1, 4, 3])
    t = mo.moment_trajectory(v, y0, np.ones(4), q, 40)
    np.testing.assert_allclose(t.ybar[1:].sum(axis=1), q * y0.sum(), atol=1e-12)
    np.testing.assert_allclose(t.abar.sum(axis=1), y0.sum(), atol=1e-12)
    np.testing.assert_allclose(t.zbar[1:].sum(axis=1), q * 4, atol=1e-12)
    Q = q * v.P + (1 - q) * np.eye(4)
    for k in range(1, 40):
        np.testing.assert_allclose(t.ybar[k + 1], Q @ t.ybar[k], atol=1e-12)
    np.testing.assert_allclose(t.ybar[1], q * v.P @ y0, atol=1e-15)


def test_first_moment_alignment(cycle_chord4):
    v = mo.vectorize_graph(cycle_chord4)
    q = 0.5
    y0 = np.array([2.0, -1, 4, 3])
    Q = q * v.P + (1 - q) * np.eye(4)
    lam2 = np.sort(np.abs(np.linalg.eigvals(Q)))[-2]
    K = int(math.ceil(50 / (1 - lam2)))
    t = mo.moment_trajectory(v, y0, np.ones(4), q, K, keep_edge_moments=False)
    alpha = 4 / y0.sum()
    assert np.linalg.norm(t.zbar[K] - alpha * t.ybar[K]) <= 1e-10


def test_pi_q1_is_kron(cycle3):
    v = mo.vectorize_graph(cycle3)
    pi = mo.build_pi(v, 1.0).matrix
    np.testing.assert_allclose(pi, np.kron(v.PtF, v.PtF), atol=1e-15)


def closed_form_entry(P, q, row, col):
    """Entry of Pi from the three closed forms; PtF[r, l] = P[j, i] when i == l mod n."""
    n = P.shape[0]
    N = n * n

    def ptf(r, l):
        i, j = divmod(r, n)
        return P[j, i] if i == l % n else 0.0

    r1, r2 = row % N, row // N
    c1, c2 = col % N, col // N
    a, b = ptf(r1, c1), ptf(r2, c2)
    if c1 == c2:
        if r1 == c1 and r2 == c2:
            return q * a * b + (1 - q)
        return q * a * b
    # off the G columns only the C (x) C part remains
    ca = q * a + (1 - q) * (r1 == c1)
    cb = q * b + (1 - q) * (r2 == c2)
    return ca * cb


@pytest.mark.parametrize("q", [0.3, 0.8])
def test_pi_entries_closed_form(cycle3, q):
    P = graph.weight_matrix(cycle3)
    v = mo.build_vectorization(P)
    pi = mo.build_pi(v, q).matrix
    rng = np.random.default_rng(0)
    N2 = v.N ** 2
    G_cols = np.arange(v.N) * (v.N + 1)
    cols = np.concatenate([G_cols, rng.integers(0, N2, 20)])
    for col in cols:
        for row in range(N2):
            assert pi[row, col] == pytest.approx(closed_form_entry(P, q, row, col), abs=1e-15)


def test_dimension_guard():
    v = mo.vectorize_graph(graph.cycle(9))
    with pytest.raises(DimensionTooLarge):
        mo.build_pi(v, 0.5)


def test_matrix_free_matches_dense(cycle_chord4):
    v = mo.vectorize_graph(cycle_chord4)
    pi = mo.build_pi(v, 0.6).matrix
    x = np.random.default_rng(1).normal(size=v.N ** 2)
    np.testing.assert_allclose(mo.apply_pi(v, 0.6, x), pi @ x, atol=1e-13)
    op = mo.pi_operator(v, 0.6)
    np.testing.assert_allclose(op @ x, pi @ x, atol=1e-13)


@settings(max_examples=20, deadline=None)
@given(n=st.integers(2, 5), p=st.floats(0.2, 1.0), seed=st.integers(0, 2**31), q=st.sampled_from([0.1, 0.5, 0.9, 1.0]))
def test_pi_structural_properties(n, p, seed, q):
    g = graph.random_strongly_connected(n, p, seed)
    pim = mo.build_pi(mo.vectorize_graph(g), q)
    assert pim.colsum_max_err <= 1e-12
    assert pim.matrix.min() >= -1e-14 and pim.matrix.max() <= 1 + 1e-14
    assert abs(pim.lambda1 - 1) <= 1e-10
    assert pim.multiplicity_of_one == 1
    assert pim.lambda2_abs <= 1 - 1e-8


def test_power_iteration_finds_unit_eigenvalue(cycle3):
    pim = mo.build_pi(mo.vectorize_graph(cycle3), 0.5)
    lam, _ = mo.power_iteration(lambda x: pim.matrix @ x, pim.matrix.shape[0])
    assert abs(lam - 1.0) <= 1e-8
    v = pim.right_eigenvector()
    np.testing.assert_allclose(pim.matrix @ v, v, atol=1e-8)
    np.testing.assert_array_equal(pim.left_eigenvector @ pim.matrix, pim.matrix.sum(axis=0))


@pytest.mark.parametrize("name,q", [("cycle:3", 0.7), ("cycle:3", 0.5), ("cycle-chord:4", 0.9)])
def test_deflated_power_iteration_matches_dense(name, q):
    v = mo.vectorize_graph(graph.builtin_graph(name))
    pim = mo.build_pi(v, q)
    est = mo.second_eigenvalue_modulus(lambda x: pim.matrix @ x, v.N ** 2)
    assert est == pytest.approx(pim.lambda2_abs, abs=5e-3)


def test_second_moment_q1_reduction(cycle3):
    v = mo.vectorize_graph(cycle3)
    y0 = np.array([1.0, 2.0, -0.5])
    t = mo.moment_trajectory(v, y0, np.ones(3), 1.0, 5)
    for k in range(5):
        np.testing.assert_allclose(t.Phi[k + 1], v.F @ t.Gamma[k] @ v.F.T, atol=1e-13)
        C = v.PtF
        np.testing.assert_allclose(t.Gamma[k + 1], C @ t.Gamma[k] @ C.T, atol=1e-13)


def test_phi_one_closed_form(cycle_chord4):
    v = mo.vectorize_graph(cycle_chord4)
    q = 0.7
    y0 = np.array([2.0, -1, 4, 3])
    t = mo.moment_trajectory(v, y0, np.ones(4), q, 1)
    A = v.Ptilde @ np.outer(y0, y0) @ v.Ptilde.T
    expected = np.outer(t.ybar[1], t.ybar[1]) + q * (1 - q) * v.F @ np.diag(np.diag(A)) @ v.F.T
    np.testing.assert_allclose(t.Phi[1], expected, atol=1e-13)


def test_vec_recursion_agrees_with_matrix_form(cycle_chord4):
    v = mo.vectorize_graph(cycle_chord4)
    q = 0.7
    pi = mo.build_pi(v, q).matrix
    t = mo.moment_trajectory(v, [2.0, -1, 4, 3], np.ones(4), q, 30)
    for k in range(1, 31):
        for M in (t.Gamma, t.Psi, t.Xi):
            got = pi @ mo.vec(M[k - 1])
            assert np.abs(got - mo.vec(M[k])).max() <= 1e-12 * max(1.0, np.abs(got).max())


def test_second_moments_symmetric_psd(cycle_chord4):
    v = mo.vectorize_graph(cycle_chord4)
    t = mo.moment_trajectory(v, [2.0, -1, 4, 3], np.ones(4), 0.4, 20)
    for k in range(21):
        for M in (t.Gamma[k], t.Psi[k]):
            np.testing.assert_allclose(M, M.T, atol=1e-14)
            assert np.linalg.eigvalsh(M).min() >= -1e-12
        np.testing.assert_array_equal(t.Delta[k], t.Xi[k].T)


@pytest.mark.parametrize("q", [0.3, 0.7, 1.0])
def test_chi_sums_to_zero(cycle_chord4, q):
    v = mo.vectorize_graph(cycle_chord4)
    pi = mo.build_pi(v, q).matrix
    c = mo.chi_trajectory(v, [2.0, -1, 4, 3], np.ones(4), q, 200, stabilize=False, pi=pi)
    assert np.abs(c.entry_sums).max() <= 1e-9


def test_chi_zero_when_aligned(cycle3):
    v = mo.vectorize_graph(cycle3)
    y0 = np.array([1.0, 2.0, 3.0])
    c = mo.chi_trajectory(v, y0, 0.5 * y0, 0.6, 30)
    assert not c.chi.any()
    assert not c.deviation_trace.any()


def test_zero_initial_sum(cycle3):
    with pytest.raises(ZeroInitialSum):
        mo.chi_trajectory(mo.vectorize_graph(cycle3), [1.0, -1.0, 0.0], np.ones(3), 0.5, 5)


def test_stabilized_matches_raw_before_noise_floor(cycle_chord4):
    v = mo.vectorize_graph(cycle_chord4)
    raw = mo.chi_trajectory(v, [2.0, -1, 4, 3], np.ones(4), 0.7, 20, stabilize=False)
    st = mo.chi_trajectory(v, [2.0, -1, 4, 3], np.ones(4), 0.7, 20)
    np.testing.assert_allclose(st.chi, raw.chi, atol=1e-12)


def test_fit_geometric_rate_exact():
    assert mo.fit_geometric_rate(0.3 ** np.arange(100)) == pytest.approx(0.3, rel=1e-12)


def subspace_radius_bruteforce(v, q):
    """Independent route: restrict dense Pi to edge-pair coordinates, then project on zero row/col sums."""
    pi = mo.build_pi(v, q).matrix
    sup = v.support()
    N = v.N
    idx = np.array([a + b * N for b in sup for a in sup])
    R = pi[np.ix_(idx, idx)]
    s = sup.size
    J = np.eye(s) - 1.0 / s
    Proj = np.kron(J, J)
    return np.abs(np.linalg.eigvals(Proj @ R @ Proj)).max()


@pytest.mark.parametrize("name,q", [("cycle:3", 0.5), ("cycle:3", 1.0), ("cycle-chord:4", 0.7), ("paper5", 0.5)])
def test_invariant_subspace_radius(name, q):
    v = mo.vectorize_graph(graph.builtin_graph(name))
    r = mo.invariant_subspace_radius(v, q)
    assert r == pytest.approx(subspace_radius_bruteforce(v, q), abs=1e-10)
    assert r <= mo.build_pi(v, q).lambda2_abs + 1e-12


@pytest.mark.parametrize("name,q", [("cycle:3", 0.7), ("cycle-chord:4", 0.5), ("cycle-chord:4", 0.7)])
def test_deviation_trace_decays_at_subspace_radius(name, q):
    g = graph.builtin_graph(name)
    v = mo.vectorize_graph(g)
    y0 = np.arange(1.0, g.n + 1)
    c = mo.chi_trajectory(v, y0, np.ones(g.n), q, 200)
    tr = c.deviation_trace
    assert (tr >= 0).all()
    assert (np.diff(tr[10:]) <= 0).all()
    assert mo.fit_geometric_rate(tr) == pytest.approx(mo.invariant_subspace_radius(v, q), abs=1e-6)


def test_deviation_two_paths(cycle_chord4):
    v = mo.vectorize_graph(cycle_chord4)
    t = mo.moment_trajectory(v, [2.0, -1, 4, 3], np.ones(4), 0.7, 40)
    c = mo.chi_trajectory(v, [2.0, -1, 4, 3], np.ones(4), 0.7, 40, stabilize=False)
    for k in range(1, 41):
        a, b = mo.deviation_second_moment(v, t, k)
        assert np.abs(a - b).max() <= 1e-10
        assert np.trace(a) == pytest.approx(c.deviation_trace[k - 1], abs=1e-12)


def test_deviation_zero_when_aligned(cycle3):
    v = mo.vectorize_graph(cycle3)
    y0 = np.array([1.0, 2.0, 3.0])
    t = mo.moment_trajectory(v, y0, 2 * y0, 0.5, 5)
    a, b = mo.deviation_second_moment(v, t, 5)
    assert np.abs(a).max() <= 1e-14 and np.abs(b).max() <= 1e-12


def test_monte_carlo_q1_exact(cycle3):
    v = mo.vectorize_graph(cycle3)
    y0 = np.array([1.0, 2.0, 6.0])
    emp = mo.monte_carlo_moments(cycle3, 1.0, y0, np.ones(3), 20, 8, 0)
    t = mo.moment_trajectory(v, y0, np.ones(3), 1.0, 8)
    assert not emp.se_y.any()
    for cmp in mo.compare_moments(t, emp):
        assert cmp.fraction == 1.0, cmp.failures[:3]


@pytest.mark.slow
def test_monte_carlo_cycle4():
    g = graph.cycle(4)
    v = mo.vectorize_graph(g)
    y0 = np.array([2.0, -1, 4, 3])
    emp = mo.monte_carlo_moments(g, 0.7, y0, np.ones(4), 10_000, 10, 123)
    t = mo.moment_trajectory(v, y0, np.ones(4), 0.7, 10)
    mean = mo.compare_within_band("E[y]", t.ybar[10], emp.mean_y[10], emp.se_y[10])
    assert mean.fraction == 1.0, mean.failures
    zz = mo.compare_within_band("E[zzT]", t.Lambda[10], emp.zz[10], emp.se_zz[10])
    assert zz.fraction == 1.0, zz.failures


def test_hadamard_limits():
    c, d = np.array([1.0, 2.0, -1.0]), np.array([0.5, 1.0, 3.0])
    S, T = mo.hadamard_closed_form(c, d, 1.0)
    np.testing.assert_array_equal(S, np.outer(c, d))
    assert not T.any()
    S, T = mo.hadamard_closed_form(c, d, 0.0)
    assert not S.any() and not T.any()


def test_hadamard_two_by_two():
    rep = mo.hadamard_expectation_check([1, 1], [1, 1], 0.5, 100_000, 3)
    np.testing.assert_allclose(rep.S_closed, [[0.5, 0.25], [0.25, 0.5]])
    assert rep.within()


@pytest.mark.parametrize("q", [0.2, 0.5, 0.9])
def test_hadamard_random_vectors(q):
    rng = np.random.default_rng(int(q * 10))
    rep = mo.hadamard_expectation_check(rng.normal(size=4), rng.normal(size=4), q, 50_000, 7)
    assert rep.within(width=4.0)


def test_band_comparison_exact_components():
    ok = mo.compare_within_band("x", np.array([1.0, 2.0]), np.array([1.0, 2.0 + 1e-9]), np.zeros(2))
    assert ok.inside == 1 and ok.failures[0][1] == ()
