import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from uowsn_loc.channel import ChannelParams
from uowsn_loc.graph import (
    CollinearAnchorsError,
    Deployment,
    GraphDisconnectedError,
    NetworkGraph,
    NoiseSpec,
    build_graph,
    complete_midrange,
    deploy_network,
    is_connected,
)
from uowsn_loc.localization import (
    PAPER_LITERAL,
    SMACOF,
    LocalizeOptions,
    SingularSystemError,
    anchored_update,
    build_majorization_matrices,
    classical_mds,
    localize,
    mds_baseline,
    procrustes_align,
    rmspe,
    stress,
)

CH = ChannelParams()


def _dist(P):
    P = np.asarray(P, dtype=float)
    return np.sqrt(((P[:, None] - P[None]) ** 2).sum(-1))


def _exact_graph(points, n_anchors, adjacency=None, weights=None):
    P = np.asarray(points, dtype=float)
    D = _dist(P)
    adj = np.ones_like(D, dtype=bool) if adjacency is None else np.asarray(adjacency, dtype=bool)
    adj = adj & ~np.eye(len(P), dtype=bool)
    w = adj.astype(float) if weights is None else np.where(adj, weights, 0.0)
    return NetworkGraph(adj, w, np.where(adj, D, np.nan), n_anchors, P[len(P) - n_anchors:].copy(), P)


def _random_graph(seed, n=20, m=4, radius=40.0, var=0.02):
    dep = deploy_network(n, m, np.random.default_rng(seed), tx_range=radius)
    return build_graph(dep, CH, NoiseSpec(variance=var), np.random.default_rng(seed + 10**6))


def test_two_node_laplacian():
    g = _exact_graph([[0, 0], [1, 0]], 0)
    st_ = build_majorization_matrices(g, g.true_positions)
    np.testing.assert_array_equal(st_.Z, [[1, -1], [-1, 1]])


def test_c_equals_z_when_ranges_match_iterate():
    rng = np.random.default_rng(0)
    P = rng.uniform(0, 10, (6, 2))
    W = rng.uniform(0.5, 2, (6, 6))
    W = (W + W.T) / 2
    g = _exact_graph(P, 3, weights=W)
    state = build_majorization_matrices(g, P)
    np.testing.assert_allclose(state.C, state.Z, atol=1e-12)


@given(st.integers(0, 10**6))
def test_laplacian_rows_sum_to_zero(seed):
    rng = np.random.default_rng(seed)
    P = rng.uniform(0, 10, (7, 2))
    W = rng.uniform(0, 3, (7, 7))
    W = (W + W.T) / 2
    state = build_majorization_matrices(_exact_graph(P, 3, weights=W), rng.uniform(0, 10, (7, 2)))
    np.testing.assert_allclose(state.Z.sum(axis=1), 0, atol=1e-12)
    np.testing.assert_allclose(state.C.sum(axis=1), 0, atol=1e-9)
    np.testing.assert_array_equal(state.Z, state.Z.T)


def test_coincident_points_contribute_nothing_to_c():
    g = _exact_graph([[0, 0], [1, 0], [0, 1]], 0)
    Y = np.array([[0.0, 0.0], [0.0, 0.0], [0.0, 1.0]])
    state = build_majorization_matrices(g, Y)
    assert state.C[0, 1] == 0.0
    assert np.isfinite(state.C).all()


def test_paper_literal_layout():
    g = _exact_graph([[0, 0], [1, 0], [0, 1], [1, 1]], 2)
    state = build_majorization_matrices(g, g.true_positions, PAPER_LITERAL)
    assert np.all(np.diag(state.Z) == 0) and np.all(np.diag(state.C) == 0)
    col = g.weights.sum(axis=0)
    assert state.Z[0, 1] == col[1]
    with pytest.raises(ValueError):
        build_majorization_matrices(g, g.true_positions, "bogus")


def test_block_partition():
    g = _exact_graph(np.random.default_rng(1).uniform(0, 5, (5, 2)), 2)
    s = build_majorization_matrices(g, g.true_positions)
    assert s.Z11.shape == (3, 3) and s.Z12.shape == (3, 2) and s.Z22.shape == (2, 2)
    np.testing.assert_array_equal(np.block([[s.C11, s.C12], [s.C12.T, s.C22]]), s.C)


def test_update_fixed_point_at_truth():
    P = np.array([[3.0, 4.0], [0.0, 0.0], [10.0, 0.0]])
    g = _exact_graph(P, 2)
    state = build_majorization_matrices(g, P)
    np.testing.assert_allclose(anchored_update(state, P[1:]), P[:1], atol=1e-12)


def test_anchor_only_sensors_converge_to_truth():
    # no sensor-sensor edges: each sensor is a separate trilateration problem
    anchors = np.array([[0.0, 0.0], [50.0, 0.0], [0.0, 50.0], [50.0, 50.0]])
    sensors = np.array([[10.0, 20.0], [35.0, 30.0], [25.0, 5.0]])
    P = np.vstack((sensors, anchors))
    adj = np.ones((7, 7), dtype=bool)
    adj[:3, :3] = False
    g = _exact_graph(P, 4, adjacency=adj)
    Y = np.vstack((np.full((3, 2), 25.0) + np.arange(6).reshape(3, 2), anchors))
    for _ in range(3000):
        state = build_majorization_matrices(g, Y)
        Y = np.vstack((anchored_update(state, anchors), anchors))
    np.testing.assert_allclose(Y[:3], sensors, atol=1e-6)


def test_singular_block_names_unanchored_sensors():
    P = np.array([[0.0, 0.0], [1.0, 0.0], [5.0, 5.0], [6.0, 5.0], [5.0, 6.0]])
    adj = np.zeros((5, 5), dtype=bool)
    adj[0, 1] = adj[1, 0] = True
    adj[2:, 2:] = True
    g = _exact_graph(P, 3, adjacency=adj)
    state = build_majorization_matrices(g, P)
    with pytest.raises(SingularSystemError) as err:
        anchored_update(state, P[2:])
    assert err.value.sensors == [0, 1]


@settings(max_examples=100)
@given(st.integers(0, 10**6))
def test_majorization_step_never_increases_stress(seed):
    g = _random_graph(seed)
    if not is_connected(g):
        return
    full = complete_midrange(g)
    Y = np.vstack((np.random.default_rng(seed).uniform(0, 100, (g.n_sensors, 2)), g.anchor_positions))
    before = stress(Y, full)
    state = build_majorization_matrices(full, Y)
    Y2 = np.vstack((anchored_update(state, g.anchor_positions), g.anchor_positions))
    assert stress(Y2, full) <= before + 1e-12 * max(1.0, before)


@settings(max_examples=25)
@given(st.integers(0, 10**6))
def test_localize_trace_monotone_and_anchors_fixed(seed):
    g = _random_graph(seed)
    if not is_connected(g):
        return
    res = localize(g)
    tr = np.array(res.stress_trace)
    assert np.all(np.diff(tr) <= 1e-12 * np.maximum(1.0, tr[:-1]))
    assert np.array_equal(res.positions[g.n_sensors:], g.anchor_positions)
    assert res.iterations == len(tr) - 1


@pytest.mark.parametrize("seed", range(5))
def test_exact_recovery_noiseless_full_connectivity(seed):
    rng = np.random.default_rng(seed)
    P = np.vstack((rng.uniform(0, 100, (30, 2)), [[0, 0], [100, 0], [30, 90]]))
    res = localize(_exact_graph(P, 3))
    assert res.rmspe < 1e-6


def test_exact_recovery_from_random_init_sparse_but_rigid():
    dep = deploy_network(40, 5, np.random.default_rng(4), tx_range=60.0)
    g = build_graph(dep, CH, NoiseSpec(variance=0.0), np.random.default_rng(0))
    res = localize(g, LocalizeOptions(max_iters=5000, tol=1e-14, fill_weight_ratio=0.0))
    assert res.rmspe < 1e-5


@settings(max_examples=15)
@given(st.integers(0, 10**6), st.floats(1e-3, 1e3))
def test_weight_scaling_leaves_iterates_unchanged(seed, factor):
    g = _random_graph(seed)
    if not is_connected(g):
        return
    scaled = NetworkGraph(g.adjacency, g.weights * factor, g.ranges, g.n_anchors,
                          g.anchor_positions, g.true_positions)
    opts = LocalizeOptions(max_iters=30, tol=0.0)
    a = localize(g, opts)
    b = localize(scaled, opts)
    np.testing.assert_allclose(a.estimates, b.estimates, atol=1e-9, rtol=0)


def test_localize_errors():
    P = np.array([[5.0, 5.0], [0, 0], [1, 1], [2, 2]])
    with pytest.raises(CollinearAnchorsError):
        localize(_exact_graph(P, 3))
    P = np.array([[5.0, 5.0], [0, 0], [10, 0]])
    with pytest.raises(CollinearAnchorsError):
        localize(_exact_graph(P, 2))
    P = np.array([[50.0, 50.0], [51.0, 50.0], [0, 0], [10, 0], [0, 10]])
    adj = np.ones((5, 5), dtype=bool)
    adj[:2, 2:] = adj[2:, :2] = False
    with pytest.raises(GraphDisconnectedError):
        localize(_exact_graph(P, 3, adjacency=adj))


def test_localize_records_convergence_and_initial_config():
    g = _random_graph(3, n=30, radius=50.0)
    res = localize(g, LocalizeOptions(max_iters=2, tol=0.0))
    assert res.iterations == 2 and not res.converged
    assert res.initial_positions.shape == (g.n_nodes, 2)
    res = localize(g)
    assert res.converged


def test_random_init_and_explicit_init():
    g = _random_graph(5, n=25, radius=60.0)
    a = localize(g, LocalizeOptions(init="random"), rng=np.random.default_rng(1))
    b = localize(g, LocalizeOptions(init="random"), rng=np.random.default_rng(1))
    np.testing.assert_array_equal(a.estimates, b.estimates)
    c = localize(g, init=g.true_positions[: g.n_sensors])
    assert c.rmspe < 0.5
    with pytest.raises(ValueError):
        localize(g, LocalizeOptions(init="bogus"))


def test_paper_literal_mode_runs():
    g = _random_graph(2, n=15, radius=60.0)
    res = localize(g, LocalizeOptions(mode=PAPER_LITERAL, max_iters=20))
    assert res.estimates.shape == (g.n_sensors, 2)
    assert np.array_equal(res.positions[g.n_sensors:], g.anchor_positions)


def test_classical_mds_reproduces_euclidean_distances():
    P = np.array([[0.0, 0.0], [3.0, 0.0], [3.0, 4.0], [-1.0, 2.0]])
    emb = classical_mds(_dist(P))
    np.testing.assert_allclose(_dist(emb.coords), _dist(P), atol=1e-9)
    assert not emb.non_euclidean


def test_classical_mds_collinear_second_eigenvalue_zero():
    emb = classical_mds(_dist([[0, 0], [1, 0], [3, 0]]))
    assert abs(emb.eigenvalues[1]) < 1e-9


def test_classical_mds_flags_non_euclidean():
    D = np.array([[0, 1, 5.0], [1, 0, 1], [5, 1, 0]])
    assert classical_mds(D).non_euclidean


@given(st.integers(0, 10**6))
def test_mds_then_procrustes_recovers_truth(seed):
    P = np.random.default_rng(seed).uniform(-50, 50, (12, 2))
    emb = classical_mds(_dist(P))
    Y = procrustes_align(emb.coords, P, np.arange(12), scale=False)
    np.testing.assert_allclose(Y, P, atol=1e-9)


def test_procrustes_identity_rotation_reflection():
    P = np.array([[0.0, 0.0], [4.0, 1.0], [1.0, 5.0], [3.0, 3.0]])
    idx = np.arange(4)
    np.testing.assert_allclose(procrustes_align(P, P, idx), P, atol=1e-12)
    rot = np.array([[0.0, -1.0], [1.0, 0.0]])
    moved = P @ rot.T + [7.0, -2.0]
    np.testing.assert_allclose(procrustes_align(moved, P, idx), P, atol=1e-9)
    mirrored = P * [-1.0, 1.0]
    R = np.linalg.svd((mirrored - mirrored.mean(0)).T @ (P - P.mean(0)))
    # determinant-sign oracle: the best orthogonal map onto P is a reflection
    assert np.linalg.det(R[0] @ R[2]) < 0
    np.testing.assert_allclose(procrustes_align(mirrored, P, idx), P, atol=1e-9)
    scaled = 2.5 * P
    np.testing.assert_allclose(procrustes_align(scaled, P, idx), P, atol=1e-9)
    with pytest.raises(CollinearAnchorsError):
        procrustes_align(P, [[0, 0], [1, 1], [2, 2]], [0, 1, 2])


def test_rmspe_examples():
    T = np.zeros((3, 2))
    assert rmspe(T, T) == 0.0
    assert rmspe(T + [1.0, 0.0], T) == 1.0
    assert rmspe([[3.0, 4.0]], [[0.0, 0.0]]) == 5.0


def test_mds_baseline_on_exact_full_graph():
    P = np.random.default_rng(8).uniform(0, 100, (15, 2))
    res = mds_baseline(_exact_graph(P, 4))
    assert res.rmspe < 1e-9


@pytest.mark.parametrize("seed", range(4))
def test_proposed_not_worse_than_baseline_dense(seed):
    dep = deploy_network(60, 8, np.random.default_rng(seed), tx_range=40.0)
    g = build_graph(dep, CH, NoiseSpec(variance=0.02), np.random.default_rng(seed))
    assert is_connected(g)
    assert localize(g).rmspe <= mds_baseline(g).rmspe


def test_stress_counts_each_pair_once():
    g = _exact_graph([[0, 0], [3, 4]], 0)
    Y = np.array([[0.0, 0.0], [6.0, 8.0]])
    assert stress(Y, g) == pytest.approx(25.0)
    assert math.isclose(stress(g.true_positions, g), 0.0)
