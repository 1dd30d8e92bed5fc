import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from diffold.features import (
    CONTACT_THRESHOLD,
    EDGE_FEAT_DIM,
    NODE_FEAT_DIM,
    RBF_CENTERS,
    build_graph,
    edge_features,
    graph_from_json,
    graph_to_json,
    knn_graph,
    neighbor_sets,
    node_features,
    rbf_encode,
    rel_pos_features,
    rel_seq_encode,
    surface_aware,
)
from diffold.backbone import ProteinBackbone, Residue, residue_sasa
from diffold.synthetic import make_helix_backbone

from conftest import random_rotation


class TestKnn:
    def test_three_collinear_nodes(self):
        ca = np.array([[0.0, 0, 0], [1.0, 0, 0], [3.0, 0, 0]])
        edges = knn_graph(ca, k=1)
        assert edges.tolist() == [[1, 0], [0, 1], [1, 2]]

    def test_saturation_gives_complete_digraph(self):
        ca = np.random.default_rng(0).normal(size=(5, 3))
        edges = knn_graph(ca, k=10)
        assert edges.shape == (5 * 4, 2)
        assert len({(s, d) for s, d in edges.tolist()}) == 20
        assert not any(s == d for s, d in edges.tolist())

    def test_tie_breaks_toward_smaller_index(self):
        # Nodes 1 and 2 exactly equidistant from node 0.
        ca = np.array([[0.0, 0, 0], [1.0, 0, 0], [-1.0, 0, 0]])
        edges = knn_graph(ca, k=1)
        into_zero = [s for s, d in edges.tolist() if d == 0]
        assert into_zero == [1]

    def test_edge_count_formula(self):
        rng = np.random.default_rng(1)
        for n, k in [(2, 1), (6, 3), (6, 30), (12, 5)]:
            edges = knn_graph(rng.normal(size=(n, 3)), k=k)
            assert edges.shape[0] == n * min(k, n - 1)

    def test_sorted_by_destination_then_distance(self):
        rng = np.random.default_rng(2)
        ca = rng.normal(size=(8, 3)) * 5
        edges = knn_graph(ca, k=3)
        dists = np.linalg.norm(ca[edges[:, 0]] - ca[edges[:, 1]], axis=1)
        for e in range(len(edges) - 1):
            if edges[e, 1] == edges[e + 1, 1]:
                assert dists[e] <= dists[e + 1] + 1e-12
            else:
                assert edges[e, 1] < edges[e + 1, 1]

    def test_rejects_tiny_inputs(self):
        with pytest.raises(ValueError):
            knn_graph(np.zeros((1, 3)), k=1)
        with pytest.raises(ValueError):
            knn_graph(np.zeros((3, 3)), k=0)


class TestSurfaceAware:
    def test_single_neighbor_gives_one(self):
        ca = np.array([[0.0, 0, 0], [2.0, 0, 0]])
        edges = knn_graph(ca, k=1)
        rho = surface_aware(ca, neighbor_sets(edges, 2))
        assert np.allclose(rho, 1.0, atol=1e-12)

    def test_symmetric_neighbors_cancel(self):
        ca = np.array([[0.0, 0, 0], [2.0, 0, 0], [-2.0, 0, 0]])
        edges = knn_graph(ca, k=2)
        rho = surface_aware(ca, neighbor_sets(edges, 3))
        assert np.allclose(rho[0], 0.0, atol=1e-12)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(min_value=0, max_value=10_000))
    def test_values_bounded(self, seed):
        rng = np.random.default_rng(seed)
        ca = rng.normal(size=(7, 3)) * 8
        edges = knn_graph(ca, k=4)
        rho = surface_aware(ca, neighbor_sets(edges, 7))
        assert np.all(rho >= 0.0) and np.all(rho <= 1.0 + 1e-12)


class TestRbf:
    def test_zero_distance(self):
        v = rbf_encode(0.0)
        assert v[0] == 1.0
        assert np.all(np.diff(v) <= 0)

    def test_peak_at_center(self):
        v = rbf_encode(float(RBF_CENTERS[7]))
        assert v[7] == 1.0
        assert v.argmax() == 7

    def test_far_distance_finite(self):
        v = rbf_encode(1000.0)
        assert np.all(v < 1e-300)
        assert np.all(np.isfinite(v))

    def test_width(self):
        assert rbf_encode(5.0).shape == (15,)


class TestRelPos:
    def test_rigid_motion_invariance(self, helix12, rng):
        base = rel_pos_features(helix12, 3, 7)
        for _ in range(5):
            moved = helix12.transformed(random_rotation(rng), rng.normal(size=3) * 20)
            assert np.allclose(rel_pos_features(moved, 3, 7), base, atol=1e-8)

    def test_unit_norm_blocks(self, helix12):
        v = rel_pos_features(helix12, 2, 9)
        for a in range(4):
            assert np.linalg.norm(v[3 * a : 3 * a + 3]) == pytest.approx(1.0, abs=1e-12)

    def test_direction_asymmetry(self):
        rng = np.random.default_rng(5)
        residues = []
        for _ in range(2):
            pts = rng.normal(size=(4, 3)) * 3
            residues.append(
                Residue(n_xyz=pts[0], ca_xyz=pts[1], c_xyz=pts[2], o_xyz=pts[3],
                        b_factor=1.0, aa_type=0)
            )
        bb = ProteinBackbone(id="pair", residues=residues)
        assert not np.allclose(
            rel_pos_features(bb, 0, 1), rel_pos_features(bb, 1, 0), atol=1e-6
        )

    def test_degenerate_frame_raises(self):
        res = Residue(
            n_xyz=np.array([2.0, 0.0, 0.0]),
            ca_xyz=np.array([0.0, 0.0, 0.0]),
            c_xyz=np.array([1.0, 0.0, 0.0]),
            o_xyz=np.array([0.0, 1.0, 0.0]),
            b_factor=1.0,
            aa_type=0,
        )
        other = Residue(
            n_xyz=np.array([5.0, 5.0, 0.0]),
            ca_xyz=np.array([6.0, 5.0, 0.0]),
            c_xyz=np.array([6.0, 6.0, 1.0]),
            o_xyz=np.array([7.0, 6.0, 0.0]),
            b_factor=1.0,
            aa_type=0,
        )
        bb = ProteinBackbone(id="degen", residues=[res, other])
        with pytest.raises(ValueError, match="residue 0"):
            rel_pos_features(bb, 1, 0)


class TestRelSeq:
    def test_adjacent_contact(self):
        v = rel_seq_encode(4, 5, 3.8)
        assert v[33] == 1.0
        assert v[65] == 1.0
        assert v.sum() == 2.0

    def test_clamped_offset(self):
        v = rel_seq_encode(100, 0, 50.0)
        assert v[0] == 1.0
        assert v[65] == 0.0

    @settings(max_examples=50, deadline=None)
    @given(
        st.integers(min_value=0, max_value=500),
        st.integers(min_value=0, max_value=500),
        st.floats(min_value=0.1, max_value=100.0),
    )
    def test_exactly_one_hot(self, i, j, d):
        if i == j:
            return
        v = rel_seq_encode(i, j, d)
        assert np.count_nonzero(v[:65]) == 1
        assert v[65] in (0.0, 1.0)
        assert (v[65] == 1.0) == (d < CONTACT_THRESHOLD)


class TestNodeFeatures:
    def test_constant_bfactor_zeroed(self, helix12):
        originals = [r.b_factor for r in helix12.residues]
        for r in helix12.residues:
            r.b_factor = 10.0
        try:
            edges = knn_graph(helix12.ca_coords(), 4)
            nbrs = neighbor_sets(edges, len(helix12))
            nf = node_features(helix12, residue_sasa(helix12, 64), nbrs)
            assert np.all(nf[:, 0] == 0.0)
        finally:
            for r, b in zip(helix12.residues, originals):
                r.b_factor = b

    def test_width_eleven(self, helix12_graph):
        assert helix12_graph.node_feats.shape[1] == NODE_FEAT_DIM

    def test_znorm_columns(self, helix12_graph):
        for col in (0, 1):
            vals = helix12_graph.node_feats[:, col]
            assert vals.mean() == pytest.approx(0.0, abs=1e-10)
            assert vals.std() == pytest.approx(1.0, abs=1e-10)


class TestGraph:
    def test_feature_widths(self, helix12_graph):
        assert helix12_graph.node_feats.shape == (12, NODE_FEAT_DIM)
        assert helix12_graph.edge_feats.shape == (helix12_graph.n_edges, EDGE_FEAT_DIM)
        assert helix12_graph.n_edges == 12 * 6

    def test_se3_invariance(self, helix12, helix12_graph, rng):
        for _ in range(5):
            moved = helix12.transformed(random_rotation(rng), rng.normal(size=3) * 40)
            g2 = build_graph(moved, k=6)
            assert np.array_equal(g2.edges, helix12_graph.edges)
            assert np.allclose(g2.node_feats, helix12_graph.node_feats, atol=1e-8)
            assert np.allclose(g2.edge_feats, helix12_graph.edge_feats, atol=1e-8)

    def test_determinism(self, helix12):
        a = build_graph(helix12, k=6)
        b = build_graph(helix12, k=6)
        assert np.array_equal(a.node_feats, b.node_feats)
        assert np.array_equal(a.edge_feats, b.edge_feats)
        assert np.array_equal(a.edges, b.edges)

    def test_all_finite(self, helix12_graph):
        assert np.all(np.isfinite(helix12_graph.node_feats))
        assert np.all(np.isfinite(helix12_graph.edge_feats))

    def test_cache_round_trip(self, helix12_graph):
        text = graph_to_json(helix12_graph)
        again = graph_from_json(text)
        assert np.array_equal(again.node_feats, helix12_graph.node_feats)
        assert np.array_equal(again.edge_feats, helix12_graph.edge_feats)
        assert np.array_equal(again.edges, helix12_graph.edges)
        assert np.array_equal(again.true_types, helix12_graph.true_types)
        assert again.id == helix12_graph.id

    def test_cache_version_check(self, helix12_graph):
        import json

        doc = json.loads(graph_to_json(helix12_graph))
        doc["format_version"] = 99
        with pytest.raises(ValueError, match="version"):
            graph_from_json(json.dumps(doc))
