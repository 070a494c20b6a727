import itertools
import math

import numpy as np
import pytest

from astra_nav.errors import MapError
from astra_nav.topomap import Landmark, MapNode, Pose6, TopoMap


def node(nid, x=0.0, y=0.0, z=0.0):
    return MapNode(nid, Pose6((x, y, z)))


def simple_map():
    m = TopoMap()
    m.add_node(node("a", 0, 0)).add_node(node("b", 1, 0)).add_node(node("c", 1, 1))
    m.add_edge("a", "b", Pose6((1, 0, 0)))
    m.add_edge("b", "c", Pose6((0, 1, 0)))
    return m


class TestConstruction:
    def test_duplicate_node_id(self):
        m = TopoMap().add_node(node("a"))
        with pytest.raises(MapError, match="duplicate"):
            m.add_node(node("a"))

    def test_self_loop(self):
        m = TopoMap().add_node(node("a"))
        with pytest.raises(MapError, match="self-loop"):
            m.add_edge("a", "a", Pose6())

    def test_missing_endpoint(self):
        m = TopoMap().add_node(node("a"))
        with pytest.raises(MapError, match="does not exist"):
            m.add_edge("a", "zz", Pose6())

    def test_edge_length_pythagorean(self):
        m = TopoMap().add_node(node("a")).add_node(node("b"))
        m.add_edge("a", "b", Pose6((3, 4, 0)))
        assert m.edges[("a", "b")].length == pytest.approx(5.0)

    def test_edges_are_undirected(self):
        m = TopoMap().add_node(node("a")).add_node(node("b"))
        m.add_edge("b", "a", Pose6((1, 0, 0)))
        assert ("a", "b") in m.edges


class TestLandmarks:
    def test_fresh_registration(self):
        m = TopoMap().add_node(node("n1"))
        m.register_landmark("n1", Landmark("lm1", "sofa", {"color": "gray"}))
        assert m.landmarks["lm1"].node_ids == {"n1"}
        assert "lm1" in m.nodes["n1"].landmark_ids

    def test_reregistration_extends_registry(self):
        m = TopoMap().add_node(node("n1")).add_node(node("n2"))
        lm = Landmark("lm1", "sofa")
        m.register_landmark("n1", lm)
        m.register_landmark("n2", lm)
        assert m.landmarks["lm1"].node_ids == {"n1", "n2"}

    def test_missing_node(self):
        with pytest.raises(MapError, match="missing node"):
            TopoMap().register_landmark("ghost", Landmark("lm1", "sofa"))

    def test_merge_self_is_noop(self):
        m = TopoMap().add_node(node("n1"))
        m.register_landmark("n1", Landmark("lm1", "sofa"))
        before = m.to_jsonable()
        assert m.merge_covisible("lm1", "lm1") == []
        assert m.to_jsonable() == before

    def test_merge_unions_nodes(self):
        m = TopoMap().add_node(node("n1")).add_node(node("n2"))
        m.register_landmark("n1", Landmark("lm1", "sofa"))
        m.register_landmark("n2", Landmark("lm2", "sofa"))
        warnings = m.merge_covisible("lm1", "lm2")
        assert warnings == []
        assert set(m.landmarks) == {"lm1"}
        assert m.landmarks["lm1"].node_ids == {"n1", "n2"}
        assert m.nodes["n2"].landmark_ids == {"lm1"}
        assert m.validate().ok

    def test_merge_category_conflict(self):
        m = TopoMap().add_node(node("n1")).add_node(node("n2"))
        m.register_landmark("n1", Landmark("lm1", "sofa"))
        m.register_landmark("n2", Landmark("lm2", "door"))
        with pytest.raises(MapError, match="category conflict"):
            m.merge_covisible("lm1", "lm2")

    def test_merge_attribute_conflict_warns(self):
        m = TopoMap().add_node(node("n1")).add_node(node("n2"))
        m.register_landmark("n1", Landmark("lm1", "sofa", {"color": "gray"}))
        m.register_landmark("n2", Landmark("lm2", "sofa", {"color": "brown"}))
        warnings = m.merge_covisible("lm1", "lm2")
        assert len(warnings) == 1 and "color" in warnings[0]
        assert m.landmarks["lm1"].visual_attributes["color"] == "gray"

    def test_merge_missing_landmark(self):
        m = TopoMap().add_node(node("n1"))
        m.register_landmark("n1", Landmark("lm1", "sofa"))
        with pytest.raises(MapError, match="missing landmark"):
            m.merge_covisible("lm1", "zzz")

    def test_nodes_for_landmark(self):
        m = TopoMap().add_node(node("n1")).add_node(node("n3"))
        lm = Landmark("lm1", "door")
        m.register_landmark("n1", lm)
        m.register_landmark("n3", lm)
        assert m.nodes_for_landmark("lm1") == {"n1", "n3"}
        with pytest.raises(MapError):
            m.nodes_for_landmark("nope")


class TestSpatialQuery:
    def test_zero_radius_hits_exact_node(self):
        m = TopoMap().add_node(node("a", 1.0, 2.0, 0.0))
        assert m.spatial_query((1.0, 2.0, 0.0), 0.0) == {"a"}

    def test_boundary_inclusive(self):
        m = TopoMap()
        for i, d in enumerate((1.0, 2.0, 3.0)):
            m.add_node(node(f"n{i}", d, 0.0))
        assert m.spatial_query((0, 0, 0), 2.0) == {"n0", "n1"}

    def test_negative_radius(self):
        with pytest.raises(MapError, match="negative"):
            TopoMap().spatial_query((0, 0, 0), -1.0)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(11)
        m = TopoMap()
        pts = rng.uniform(-5, 5, size=(40, 3))
        for i, p in enumerate(pts):
            m.add_node(node(f"n{i:02d}", *p))
        for _ in range(20):
            center = rng.uniform(-5, 5, size=3)
            r = rng.uniform(0, 8)
            expect = {
                f"n{i:02d}" for i, p in enumerate(pts) if np.linalg.norm(p - center) <= r
            }
            assert m.spatial_query(center, r) == expect


class TestShortestPath:
    def test_trivial(self):
        m = simple_map()
        assert m.shortest_path("a", "a") == ["a"]

    def test_triangle_prefers_two_hops(self):
        m = TopoMap()
        for nid in "abc":
            m.add_node(node(nid))
        m.add_edge("a", "b", Pose6((1, 0, 0)))
        m.add_edge("b", "c", Pose6((1, 0, 0)))
        m.add_edge("a", "c", Pose6((3, 0, 0)))
        assert m.shortest_path("a", "c") == ["a", "b", "c"]

    def test_disconnected_is_empty(self):
        m = TopoMap().add_node(node("a")).add_node(node("b"))
        assert m.shortest_path("a", "b") == []

    def test_missing_node(self):
        with pytest.raises(MapError, match="missing node"):
            simple_map().shortest_path("a", "zz")

    def test_lexicographic_tie_break(self):
        m = TopoMap()
        for nid in ("a", "m", "z", "goal"):
            m.add_node(node(nid))
        m.add_edge("a", "m", Pose6((1, 0, 0)))
        m.add_edge("m", "goal", Pose6((1, 0, 0)))
        m.add_edge("a", "z", Pose6((1, 0, 0)))
        m.add_edge("z", "goal", Pose6((1, 0, 0)))
        assert m.shortest_path("a", "goal") == ["a", "m", "goal"]

    def test_optimal_on_random_graphs(self):
        rng = np.random.default_rng(4)
        for _ in range(30):
            n = int(rng.integers(2, 9))
            m = TopoMap()
            ids = [f"n{i}" for i in range(n)]
            for nid in ids:
                m.add_node(node(nid))
            lengths = {}
            for i, j in itertools.combinations(range(n), 2):
                if rng.random() < 0.45:
                    length = float(rng.uniform(0.1, 4.0))
                    m.add_edge(ids[i], ids[j], Pose6((length, 0, 0)))
                    lengths[(ids[i], ids[j])] = length
            src, dst = ids[0], ids[-1]
            # brute force over simple paths
            best_cost = math.inf
            stack = [(src, [src], 0.0)]
            while stack:
                cur, path, cost = stack.pop()
                if cur == dst:
                    best_cost = min(best_cost, cost)
                    continue
                for (a, b), length in lengths.items():
                    nxt = b if a == cur else a if b == cur else None
                    if nxt and nxt not in path:
                        stack.append((nxt, path + [nxt], cost + length))
            got = m.shortest_path(src, dst)
            if not got:
                assert best_cost == math.inf
            else:
                got_cost = sum(
                    lengths[tuple(sorted((x, y)))] for x, y in zip(got[:-1], got[1:])
                )
                assert got_cost == pytest.approx(best_cost)


class TestValidateAndPersistence:
    def test_empty_round_trip(self, tmp_path):
        m = TopoMap()
        path = tmp_path / "empty.json"
        m.save(path)
        assert TopoMap.load(path) == m

    def test_dangling_backref_is_violation(self):
        m = TopoMap().add_node(node("n1"))
        m.nodes["n1"].landmark_ids.add("ghost")
        report = m.validate()
        assert not report.ok
        assert len(report.violations) == 1
        assert "ghost" in report.violations[0]

    def test_random_map_round_trip(self, tmp_path):
        rng = np.random.default_rng(2)
        m = TopoMap()
        ids = [f"n{i:03d}" for i in range(100)]
        for nid in ids:
            m.add_node(node(nid, *rng.uniform(-10, 10, 3)))
        for _ in range(150):
            a, b = rng.choice(ids, 2, replace=False)
            if tuple(sorted((a, b))) not in m.edges:
                m.add_edge(a, b, Pose6(tuple(rng.uniform(-2, 2, 3))))
        for k in range(30):
            lm = Landmark(
                f"lm{k:03d}",
                str(rng.choice(["sofa", "door", "shelf"])),
                {"color": str(rng.choice(["red", "gray"]))},
                "for testing",
            )
            for nid in rng.choice(ids, rng.integers(1, 4), replace=False):
                m.register_landmark(str(nid), lm)
        assert m.validate().ok
        path = tmp_path / "m.json"
        m.save(path)
        loaded = TopoMap.load(path)
        assert loaded == m
        assert loaded.validate().ok

    def test_load_reports_json_error_position(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text('{"nodes": [}')
        with pytest.raises(MapError, match="line"):
            TopoMap.load(path)

    def test_load_reports_missing_field(self, tmp_path):
        path = tmp_path / "nofield.json"
        path.write_text('{"nodes": [{"id": "a"}], "edges": [], "landmarks": []}')
        with pytest.raises(MapError, match="pose"):
            TopoMap.load(path)

    def test_cross_reference_symmetry_after_ops(self):
        m = simple_map()
        lm = Landmark("lm1", "door")
        m.register_landmark("a", lm)
        m.register_landmark("b", lm)
        m.register_landmark("c", Landmark("lm2", "door"))
        m.merge_covisible("lm1", "lm2")
        report = m.validate()
        assert report.ok, report.violations
        for nid, n in m.nodes.items():
            for lid in n.landmark_ids:
                assert nid in m.landmarks[lid].node_ids
        for lid, lm in m.landmarks.items():
            for nid in lm.node_ids:
                assert lid in m.nodes[nid].landmark_ids


def test_pose6_planar_yaw():
    half = math.pi / 4
    q = (math.cos(half / 2), 0.0, 0.0, math.sin(half / 2))
    p = Pose6((1, 2, 3), q).planar()
    assert p.x == 1 and p.y == 2
    assert p.theta == pytest.approx(half)
