from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from equillm import geomgraph as gg
from equillm.errors import ContractError, GenerationError, ParseError, SamplingError

seeds = st.integers(0, 2**32 - 1)


def _graph(rng, n=6):
    edges = gg.undirected_to_directed(gg.random_connected_graph(n, 3.0, rng))
    return gg.GeometricGraph(rng.standard_normal((n, 2)), rng.standard_normal((n, 3)), edges)


# -- transforms ---------------------------------------------------------------------
def test_identity_transform():
    g = _graph(np.random.default_rng(0))
    out = gg.apply_transform(g, gg.TransformE3.identity())
    assert np.array_equal(out.coords, g.coords) and np.array_equal(out.edges, g.edges)


def test_quarter_turn_about_z():
    # row-vector convention: x -> x @ Q + t
    Q = np.array([[0.0, 1.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    out = gg.TransformE3(Q, np.zeros(3)).apply_coords(np.array([1.0, 0.0, 0.0]))
    assert np.allclose(out, [0.0, 1.0, 0.0], atol=0)


@given(seeds, st.booleans())
@settings(max_examples=30, deadline=None)
def test_transform_preserves_pairwise_distances(seed, reflect):
    rng = np.random.default_rng(seed)
    g = _graph(rng)
    tau = gg.random_transform(rng, reflect=reflect)
    assert (tau.det < 0) == reflect
    x, y = g.coords, gg.apply_transform(g, tau).coords
    dx = np.linalg.norm(x[:, None] - x[None], axis=-1)
    dy = np.linalg.norm(y[:, None] - y[None], axis=-1)
    assert np.max(np.abs(dx - dy)) <= 1e-10


@given(seeds)
@settings(max_examples=20, deadline=None)
def test_then_composes_in_order(seed):
    rng = np.random.default_rng(seed)
    a, b = gg.random_transform(rng), gg.random_transform(rng)
    x = rng.standard_normal((4, 3))
    assert np.allclose(a.then(b).apply_coords(x), b.apply_coords(a.apply_coords(x)), atol=1e-12)


def test_non_orthogonal_rejected():
    with pytest.raises(ContractError):
        gg.TransformE3(np.diag([1.0, 2.0, 1.0]), np.zeros(3))


def test_transform_trajectory_and_residues():
    rng = np.random.default_rng(1)
    tau = gg.random_transform(rng)
    traj = gg.gen_spring_system(4, 12, 0.05, 2.0, seed=2)
    moved = gg.apply_transform(traj, tau)
    assert np.allclose(moved.frames, traj.frames @ tau.Q + tau.t, atol=1e-12)
    res = gg.gen_residue_structure(3, seed=4)
    assert np.allclose(gg.apply_transform(res, tau).backbone, res.backbone @ tau.Q + tau.t, atol=1e-12)
    with pytest.raises(TypeError):
        gg.apply_transform(object(), tau)


# -- graph types --------------------------------------------------------------------
def test_graph_validation():
    with pytest.raises(ContractError):
        gg.GeometricGraph(np.ones((3, 2)), np.ones((4, 3)), np.zeros((0, 2)))
    with pytest.raises(ContractError):
        gg.GeometricGraph(np.ones((3, 2)), np.ones((3, 3)), np.array([[0, 5]]))
    with pytest.raises(ContractError):
        gg.GeometricGraph(np.ones((3, 2)), np.ones((3, 3)), np.array([[1, 1]]))
    with pytest.raises(ContractError):
        gg.ResidueStructure(np.array([0, 25]), np.zeros((2, 4, 3)))


def test_graph_arrays_read_only():
    g = _graph(np.random.default_rng(0))
    with pytest.raises(ValueError):
        g.coords[0, 0] = 1.0


# -- edge distances -------------------------------------------------------------------
def test_edge_distance_345():
    g = gg.GeometricGraph(np.ones((2, 1)), np.array([[0.0, 0, 0], [3.0, 4.0, 0]]), np.array([[0, 1]]))
    assert gg.edge_distances(g).tolist() == [5.0]


def test_edge_distance_coincident():
    g = gg.GeometricGraph(np.ones((2, 1)), np.ones((2, 3)), np.array([[0, 1], [1, 0]]))
    assert gg.edge_distances(g).tolist() == [0.0, 0.0]


@given(seeds)
@settings(max_examples=25, deadline=None)
def test_edge_distances_match_loop(seed):
    g = _graph(np.random.default_rng(seed), 7)
    ref = []
    for j, i in g.edges.tolist():
        ref.append(math.sqrt(sum((g.coords[i][c] - g.coords[j][c]) ** 2 for c in range(3))))
    assert np.max(np.abs(gg.edge_distances(g) - np.array(ref))) <= 1e-12


@given(seeds, st.integers(2, 12), st.floats(1.0, 6.0))
@settings(max_examples=40, deadline=None)
def test_random_graph_connected(seed, n, degree):
    pairs = gg.random_connected_graph(n, degree, np.random.default_rng(seed))
    seen, frontier = {0}, [0]
    adj = {k: set() for k in range(n)}
    for a, b in pairs:
        adj[a].add(b)
        adj[b].add(a)
    while frontier:
        for nb in adj[frontier.pop()]:
            if nb not in seen:
                seen.add(nb)
                frontier.append(nb)
    assert len(seen) == n and all(a < b for a, b in pairs)


def test_radius_graph():
    x = np.array([[0.0, 0, 0], [1.0, 0, 0], [5.0, 0, 0]])
    assert sorted(map(tuple, gg.radius_graph(x, 2.0).tolist())) == [(0, 1), (1, 0)]


# -- spring systems -------------------------------------------------------------------
def test_equilibrium_pair_stays_put():
    x0 = np.array([[0.0, 0, 0], [1.0, 0, 0]])
    frames = gg.integrate_springs(x0, np.zeros((2, 3)), np.ones(2), np.array([[0, 1]]), 20, 0.05, 3.0, 1.0)
    assert np.array_equal(frames, np.broadcast_to(x0, frames.shape))


def test_spring_determinism():
    a = gg.gen_spring_system(5, 30, 0.05, 2.0, seed=11)
    b = gg.gen_spring_system(5, 30, 0.05, 2.0, seed=11)
    assert a.frames.tobytes() == b.frames.tobytes()


@given(seeds)
@settings(max_examples=15, deadline=None)
def test_spring_momentum_conserved(seed):
    traj = gg.gen_spring_system(5, 40, 0.05, 2.0, seed=seed)
    m = gg.node_masses(traj.skeleton.node_features)[:, None]
    v0 = (traj.frames[1] - traj.frames[0]) / 0.05
    vT = (traj.frames[-1] - traj.frames[-2]) / 0.05
    assert np.max(np.abs((m * v0).sum(0) - (m * vT).sum(0))) <= 1e-8


def test_spring_divergence_reported():
    with pytest.raises(GenerationError, match="smaller dt"):
        gg.gen_spring_system(4, 400, 5.0, 50.0, seed=0)


def test_spring_needs_two_nodes():
    with pytest.raises(ContractError):
        gg.gen_spring_system(1, 10, 0.05, 1.0, seed=0)


# -- windows ----------------------------------------------------------------------------
def _traj(n_frames):
    frames = np.arange(n_frames * 6, dtype=np.float64).reshape(n_frames, 2, 3)
    return gg.Trajectory(frames, gg.GeometricGraph(np.ones((2, 1)), frames[0], np.array([[0, 1], [1, 0]])))


def test_window_exact_length():
    (w,) = gg.sample_windows(_traj(8), 4, 1, seed=3)
    assert w.start == 0 and w.inputs.shape == (4, 2, 3) and w.targets.shape == (4, 2, 3)


def test_window_count_zero():
    assert gg.sample_windows(_traj(8), 4, 0, seed=3) == []


def test_window_starts_in_range():
    traj = _traj(100)
    starts = {w.start for w in gg.sample_windows(traj, 10, 1000, seed=0)}
    assert starts <= set(range(81))
    for w in gg.sample_windows(traj, 10, 20, seed=1):
        assert np.array_equal(w.inputs, traj.frames[w.start : w.start + 10])
        assert np.array_equal(w.targets, traj.frames[w.start + 10 : w.start + 20])


def test_window_too_short():
    with pytest.raises(SamplingError):
        gg.sample_windows(_traj(7), 4, 1, seed=0)


def test_window_horizon():
    (w,) = gg.sample_windows(_traj(7), 4, 1, seed=0, horizon=3)
    assert w.targets.shape[0] == 3


# -- residues ---------------------------------------------------------------------------
def test_residue_graph_layout():
    res = gg.gen_residue_structure(3, seed=0)
    g = gg.residue_graph(res)
    assert g.n_nodes == 12 and g.node_features.shape == (12, 5)
    # 6 intra pairs per residue and 2 links per consecutive pair, both directions
    assert len(g.edges) == 2 * (3 * 6 + 2 * 2)


def test_residue_categories_in_range():
    res = gg.gen_residue_structure(50, seed=2)
    assert res.categories.min() >= 0 and res.categories.max() < gg.N_CATEGORIES


# -- dataset files -------------------------------------------------------------------------
def test_empty_dataset_round_trip(tmp_path):
    path = tmp_path / "empty.traj.jsonl"
    gg.save_dataset(path, [])
    assert len(path.read_text().splitlines()) == 1
    assert gg.load_dataset(path) == []


def test_single_trajectory_round_trip(tmp_path):
    traj = gg.gen_spring_system(2, 5, 0.05, 1.0, seed=0)
    gg.save_dataset(tmp_path / "one.jsonl", [traj])
    (back,) = gg.load_dataset(tmp_path / "one.jsonl")
    assert np.array_equal(back.frames, traj.frames)
    assert np.array_equal(back.skeleton.edges, traj.skeleton.edges)
    assert np.array_equal(back.skeleton.node_features, traj.skeleton.node_features)


def test_many_trajectories_round_trip(tmp_path):
    data = gg.gen_spring_dataset(50, 7, n_nodes=4, n_steps=6, dt=0.05, stiffness=2.0)
    gg.save_dataset(tmp_path / "d.jsonl", data)
    back = gg.load_dataset(tmp_path / "d.jsonl")
    assert len(back) == 50
    assert max(np.max(np.abs(a.frames - b.frames)) for a, b in zip(data, back)) <= 1e-12


def test_residue_round_trip(tmp_path):
    data = gg.gen_residue_dataset(4, 3, seed=1)
    gg.save_dataset(tmp_path / "r.jsonl", data)
    back = gg.load_dataset(tmp_path / "r.jsonl")
    for a, b in zip(data, back):
        assert np.array_equal(a.categories, b.categories) and np.array_equal(a.backbone, b.backbone)


def test_parse_error_names_line(tmp_path):
    data = gg.gen_spring_dataset(2, 0, n_nodes=3, n_steps=4, dt=0.05, stiffness=1.0)
    path = tmp_path / "d.jsonl"
    gg.save_dataset(path, data)
    lines = path.read_text().splitlines()
    lines[2] = lines[2][:-5]
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(ParseError, match="line 3 \\(record 1\\)"):
        gg.load_dataset(path)
    path.write_text("not json\n")
    with pytest.raises(ParseError, match="line 1"):
        gg.load_dataset(path)
