import math

import numpy as np
import pytest

from sim3slam.frontend import NoiseModel, generate_scene, simulate_pair
from sim3slam.graph import (
    DuplicatePass,
    Edge,
    GraphConfig,
    LoopDecision,
    Node,
    NodeKey,
    PoseGraph,
    summarize_confidence,
)
from sim3slam.sim3 import Sim3, log_sim3

ZERO_NOISE = NoiseModel(sigma_rot=0.0, sigma_trans=0.0, sigma_scale=0.0, sigma_point=0.0, seed=0)


def odometry_passes(scene, noise, radius):
    """Passes in stream order: view j arrives, pairs with its predecessors."""
    measurements = []
    pass_id = 0
    for j in range(1, scene.num_views):
        for i in range(max(0, j - radius), j):
            measurements.append(simulate_pair(scene, i, j, noise, pass_id))
            pass_id += 1
    return measurements


def build_graph(scene, noise, radius, config=None):
    graph = PoseGraph(config or GraphConfig(neighbor_radius=radius))
    for m in odometry_passes(scene, noise, radius):
        graph.ingest_pair(m)
    return graph


def edge_residual_vec(edge, graph):
    v_from = graph.nodes[edge.from_key].pose
    v_to = graph.nodes[edge.to_key].pose
    return log_sim3(edge.measurement.compose(v_from.inverse()).compose(v_to)).vector


def test_first_pair_layout():
    scene = generate_scene("circle", 10, 60, seed=0)
    graph = PoseGraph()
    graph.ingest_pair(simulate_pair(scene, 0, 1, ZERO_NOISE, 0))
    assert len(graph.nodes) == 2
    assert len(graph.pose_edges) == 1
    assert len(graph.scale_edges) == 0
    assert graph.anchor == NodeKey(0, 1)
    assert graph.nodes[NodeKey(0, 1)].is_first_processed
    assert graph.nodes[NodeKey(1, 0)].is_first_processed


def test_five_view_layout_with_radius_two():
    scene = generate_scene("circle", 5, 80, seed=0, radius=1.0)
    graph = build_graph(scene, ZERO_NOISE, radius=2)
    # nodes per view: min(i, N) + min(L-1-i, N)
    expected = {0: 2, 1: 3, 2: 4, 3: 3, 4: 2}
    for view, count in expected.items():
        assert len(graph.nodes_of_view(view)) == count, view
    assert len(graph.nodes) == sum(expected.values())
    assert len(graph.pose_edges) == 7
    assert len(graph.scale_edges) == sum(c - 1 for c in expected.values())
    # all scale edges share the view's first-processed hub
    for e in graph.scale_edges:
        assert graph.nodes[e.from_key].is_first_processed
    assert graph.validate() == []


def test_node_count_formula_longer_chain():
    scene = generate_scene("circle", 12, 100, seed=1)
    for radius in (2, 3):
        graph = build_graph(scene, ZERO_NOISE, radius=radius)
        for view in range(12):
            expected = min(view, radius) + min(12 - 1 - view, radius)
            assert len(graph.nodes_of_view(view)) == expected
        assert len(graph.pose_edges) == sum(
            1 for j in range(12) for i in range(max(0, j - radius), j)
        )


def test_zero_noise_residuals_vanish_at_ground_truth():
    # Ground-truth assignment: node of pass p has the camera's rotation and
    # position with scale 1/c_p (c_p the hidden per-pass pointmap scale).
    scene = generate_scene("circle", 3, 80, seed=2)
    noise = NoiseModel(sigma_rot=0.0, sigma_trans=0.0, sigma_scale=0.05, sigma_point=0.0, seed=3)
    measurements = odometry_passes(scene, noise, radius=2)
    graph = PoseGraph(GraphConfig(neighbor_radius=2))
    for m in measurements:
        graph.ingest_pair(m)

    # recover each pass's scale factor from the emitted pointmaps
    pass_scale = {}
    for m in measurements:
        cam = scene.poses[m.view_i].inverse()
        local = cam.act(scene.landmarks)
        k = int(np.argmax(np.linalg.norm(local, axis=1) * scene.visibility[m.view_i]))
        pass_scale[m.pass_id] = float(
            np.linalg.norm(m.pointmap_i.points[0, k]) / np.linalg.norm(local[k])
        )

    for m in measurements:
        c = pass_scale[m.pass_id]
        for view in (m.view_i, m.view_j):
            key = NodeKey(view, m.view_j if view == m.view_i else m.view_i)
            gt_pose = scene.poses[view]
            graph.nodes[key].pose = Sim3(gt_pose.rotation, gt_pose.translation, 1.0 / c)

    for e in graph.edges:
        assert np.linalg.norm(edge_residual_vec(e, graph)) < 1e-9, (e.kind, e.from_key, e.to_key)


def test_initialization_satisfies_new_edges_zero_noise():
    scene = generate_scene("circle", 8, 100, seed=3)
    graph = build_graph(scene, ZERO_NOISE, radius=2)
    for e in graph.edges:
        assert np.linalg.norm(edge_residual_vec(e, graph)) < 1e-9


def test_duplicate_pass_rejected():
    scene = generate_scene("circle", 10, 60, seed=0)
    graph = PoseGraph()
    m = simulate_pair(scene, 0, 1, ZERO_NOISE, 0)
    graph.ingest_pair(m)
    with pytest.raises(DuplicatePass):
        graph.ingest_pair(m)
    # same pair under a fresh pass id still collides on the node keys
    m2 = simulate_pair(scene, 0, 1, ZERO_NOISE, 99)
    with pytest.raises(DuplicatePass):
        graph.ingest_pair(m2)


def make_loop_measurement(scene, i, j, confidence):
    m = simulate_pair(scene, i, j, ZERO_NOISE, pass_id=1000 + i * 101 + j)
    from sim3slam.frontend import PairMeasurement
    from sim3slam.two_view import RelativePose

    pose = RelativePose(m.relative_pose.transform, confidence)
    return PairMeasurement(m.view_i, m.view_j, m.pointmap_i, m.pointmap_j, pose, m.pass_id)


def test_loop_gating_thresholds():
    scene = generate_scene("circle", 20, 140, seed=4)
    graph = build_graph(scene, ZERO_NOISE, radius=2)
    n_nodes = len(graph.nodes)
    n_pose = len(graph.pose_edges)
    n_scale = len(graph.scale_edges)

    rejected = graph.try_close_loop(make_loop_measurement(scene, 0, 10, 0.5))
    assert rejected is LoopDecision.REJECTED
    assert (len(graph.nodes), len(graph.pose_edges), len(graph.scale_edges)) == (
        n_nodes,
        n_pose,
        n_scale,
    )

    boundary = graph.try_close_loop(make_loop_measurement(scene, 0, 11, 0.75))
    assert boundary is LoopDecision.REJECTED  # strictly greater than tau_p

    accepted = graph.try_close_loop(make_loop_measurement(scene, 0, 12, 0.9))
    assert accepted is LoopDecision.ACCEPTED
    assert len(graph.nodes) == n_nodes + 2
    assert len(graph.pose_edges) == n_pose + 1
    assert len(graph.scale_edges) == n_scale + 2
    assert graph.validate() == []


def test_validate_catches_corruption():
    scene = generate_scene("circle", 6, 80, seed=5)
    graph = build_graph(scene, ZERO_NOISE, radius=2)
    assert graph.validate() == []

    from sim3slam.sim3 import so3_exp

    bad = graph.scale_edges[0]
    bad.measurement = Sim3(so3_exp([0.1, 0, 0]), np.zeros(3), bad.measurement.scale)
    problems = graph.validate()
    assert any("rotation not identity" in p for p in problems)


def test_validate_catches_isolated_view():
    scene = generate_scene("circle", 6, 80, seed=5)
    graph = build_graph(scene, ZERO_NOISE, radius=2)
    key = NodeKey(99, 98)
    graph.nodes[key] = Node(key, Sim3.identity(), True, 1.0)
    problems = graph.validate()
    assert any("not connected" in p for p in problems)


def test_deterministic_construction_and_dump_roundtrip(tmp_path):
    scene = generate_scene("circle", 10, 90, seed=6)
    noise = NoiseModel(seed=6)
    g1 = build_graph(scene, noise, radius=2)
    g2 = build_graph(scene, noise, radius=2)
    p1, p2 = tmp_path / "g1.txt", tmp_path / "g2.txt"
    g1.dump(str(p1))
    g2.dump(str(p2))
    assert p1.read_bytes() == p2.read_bytes()

    loaded = PoseGraph.load(str(p1))
    assert set(loaded.nodes) == set(g1.nodes)
    for key in g1.nodes:
        assert loaded.nodes[key].pose.is_close(g1.nodes[key].pose, tol=0.0)
        assert loaded.nodes[key].is_first_processed == g1.nodes[key].is_first_processed
    assert len(loaded.edges) == len(g1.edges)
    for ea, eb in zip(loaded.edges, g1.edges):
        assert ea.kind == eb.kind and ea.from_key == eb.from_key and ea.to_key == eb.to_key
        assert ea.measurement.is_close(eb.measurement, tol=0.0)
        assert np.array_equal(ea.omega, eb.omega)

    p3 = tmp_path / "g3.txt"
    loaded.dump(str(p3))
    assert p3.read_bytes() == p1.read_bytes()


def test_summarize_confidence_reductions():
    from sim3slam.two_view import LocalPointmap

    pm = LocalPointmap(
        np.zeros((1, 3, 3)),
        np.array([[1.0, 2.0, 6.0]]),
        np.array([[True, True, False]]),
    )
    assert summarize_confidence(pm, "mean") == pytest.approx(1.5)
    assert summarize_confidence(pm, "sum") == pytest.approx(3.0)
    assert summarize_confidence(pm, "max") == pytest.approx(2.0)


def test_omega_matrices_spd():
    cfg = GraphConfig()
    for omega in (cfg.pose_omega(0.8), cfg.scale_omega(0.5)):
        assert omega.shape == (7, 7)
        assert np.allclose(omega, omega.T)
        assert np.linalg.eigvalsh(omega)[0] > 0
