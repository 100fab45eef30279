import itertools

import networkx as nx
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from consensus_response import netgen as ng
from oracles import nx_adjacency, ring_oracle


# ring


def test_ring_nearest_neighbours():
    g = ng.ring_lattice(8, 2)
    assert g.neighbors()[0] == [1, 7]


def test_ring_full_degree_is_complete():
    assert ng.ring_lattice(8, 7) == ng.complete_graph(8)


@pytest.mark.parametrize("n", range(3, 65))
def test_ring_n_minus_one_equals_complete_exhaustive(n):
    assert ng.ring_lattice(n, n - 1).edge_set() == ng.complete_graph(n).edge_set()


@pytest.mark.parametrize("n,k", [(10, 4), (33, 6), (64, 10), (17, 16)])
def test_ring_matches_networkx(n, k):
    np.testing.assert_array_equal(ng.ring_lattice(n, k).adjacency(), ring_oracle(n, k))


@pytest.mark.parametrize("k", [3, 5, 9])
def test_ring_rejects_odd_degree(k):
    with pytest.raises(ng.GraphError, match="even"):
        ng.ring_lattice(12, k)


def test_ring_rejects_excess_degree():
    with pytest.raises(ng.GraphError):
        ng.ring_lattice(8, 8)


def test_ring_2049_complete():
    g = ng.ring_lattice(2049, 2048)
    assert g.n_edges == 2049 * 2048 // 2
    assert np.all(g.degrees() == 2048)


# mesh


def test_mesh_first_shell_von_neumann():
    g = ng.mesh_2d(4, 4)
    side = 4
    for node, nb in enumerate(g.neighbors()):
        x, y = divmod(node, side)
        expect = sorted({((x + dx) % side) * side + (y + dy) % side for dx, dy in [(1, 0), (-1, 0), (0, 1), (0, -1)]})
        assert nb == expect


def test_mesh_matches_torus_grid_oracle():
    g = ng.mesh_2d(6, 4)
    tor = nx.convert_node_labels_to_integers(nx.grid_2d_graph(6, 6, periodic=True), ordering="sorted")
    np.testing.assert_array_equal(g.adjacency(), nx_adjacency(tor, 36))


@pytest.mark.parametrize("side,k", [(32, 8), (32, 4), (7, 12), (8, 20)])
def test_mesh_regular_and_connected(side, k):
    g = ng.mesh_2d(side, k)
    assert np.all(g.degrees() == k)
    assert ng.is_connected(g)


def test_mesh_shells_are_nearest():
    side, k = 9, 12
    g = ng.mesh_2d(side, k)
    # every linked site is at least as close as any unlinked one
    def d2(a, b):
        ax, ay = divmod(a, side)
        bx, by = divmod(b, side)
        dx = min(abs(ax - bx), side - abs(ax - bx))
        dy = min(abs(ay - by), side - abs(ay - by))
        return dx * dx + dy * dy

    nb = set(g.neighbors()[0])
    far = max(d2(0, j) for j in nb)
    assert all(d2(0, j) > far for j in range(1, side * side) if j not in nb)


def test_mesh_rejects_non_multiple_of_four():
    with pytest.raises(ng.GraphError, match="multiple of 4"):
        ng.mesh_2d(8, 6)


def test_mesh_degrees_all_valid():
    for k in ng.mesh_degrees(10):
        assert np.all(ng.mesh_2d(10, k).degrees() == k)


# caveman


def test_caveman_small():
    g = ng.caveman(3, 2)
    assert g.n_nodes == 9
    assert g.n_edges == 9
    assert ng.is_connected(g)


@pytest.mark.parametrize("n_clusters,k", [(3, 2), (5, 4), (280, 2), (12, 6)])
def test_caveman_degree_distribution(n_clusters, k):
    g = ng.caveman(n_clusters, k)
    assert g.n_nodes == (k + 1) * n_clusters
    deg = g.degrees()
    assert np.sum(deg == k + 1) == n_clusters
    assert np.sum(deg == k - 1) == n_clusters
    assert np.sum(deg == k) == g.n_nodes - 2 * n_clusters
    assert ng.is_connected(g)


def test_caveman_matches_networkx_edge_count():
    ref = nx.connected_caveman_graph(6, 5)
    g = ng.caveman(6, 4)
    assert g.n_edges == ref.number_of_edges()
    assert sorted(g.degrees()) == sorted(d for _, d in ref.degree())


# random regular


def test_random_forced_complete():
    assert ng.regular_random(6, 5, seed=1) == ng.complete_graph(6)


def test_random_perfect_matching():
    g = ng.regular_random(4, 1, seed=3)
    assert g.n_edges == 2
    assert np.all(g.degrees() == 1)


def test_random_large_regular():
    g = ng.regular_random(1024, 8, seed=0)
    assert np.all(g.degrees() == 8)


def test_random_reproducible():
    a = ng.regular_random(200, 6, seed=42)
    b = ng.regular_random(200, 6, seed=42)
    assert a.edges.tobytes() == b.edges.tobytes()
    assert a != ng.regular_random(200, 6, seed=43)


def test_random_rejects_odd_stub_count():
    with pytest.raises(ng.GraphError, match="even"):
        ng.regular_random(7, 3)


@settings(max_examples=40, deadline=None)
@given(n=st.integers(5, 60), k=st.integers(1, 59), seed=st.integers(0, 10**6))
def test_random_regular_property(n, k, seed):
    if k >= n or (k * n) % 2:
        return
    g = ng.regular_random(n, k, seed=seed)
    assert np.all(g.degrees() == k)
    assert len(g.edge_set()) == g.n_edges


# graph container and connectivity


def test_is_connected_examples():
    assert ng.is_connected(ng.complete_graph(4))
    assert not ng.is_connected(ng.InteractionGraph(4, [(0, 1), (2, 3)]))
    assert ng.is_connected(ng.caveman(3, 2))


def test_graph_rejects_self_loop_and_range():
    with pytest.raises(ng.GraphError):
        ng.InteractionGraph(3, [(1, 1)])
    with pytest.raises(ng.GraphError):
        ng.InteractionGraph(3, [(0, 3)])


def test_graph_duplicates_collapse_and_symmetry():
    g = ng.InteractionGraph(4, [(1, 0), (0, 1), (2, 3)])
    assert g.n_edges == 2
    a = g.adjacency()
    assert np.array_equal(a, a.T)


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 12).flatmap(lambda n: st.tuples(st.just(n), st.lists(st.tuples(st.integers(0, n - 1), st.integers(0, n - 1))))))
def test_components_agree_with_networkx(data):
    n, pairs = data
    pairs = [(i, j) for i, j in pairs if i != j]
    g = ng.InteractionGraph(n, np.array(pairs, dtype=np.int64).reshape(-1, 2))
    ref = nx.Graph()
    ref.add_nodes_from(range(n))
    ref.add_edges_from(pairs)
    assert ng.is_connected(g) == nx.is_connected(ref)
    assert sorted(map(sorted, ng.components(g))) == sorted(map(sorted, nx.connected_components(ref)))


# consensus system


def test_single_follower_system():
    sys = ng.build_consensus_system(ng.InteractionGraph(2, [(0, 1)]))
    np.testing.assert_array_equal(sys.w_follower, [[-1.0]])
    np.testing.assert_array_equal(sys.w_leader, [1.0])


def test_ring4_row():
    sys = ng.build_consensus_system(ng.ring_lattice(4, 2))
    assert sys.follower_ids == (1, 2, 3)
    row = sys.w_follower[0]
    assert row[0] == -1.0 and row[1] == 0.5 and row[2] == 0.0
    assert sys.w_leader[0] == 0.5


def test_isolated_follower_error_names_node():
    g = ng.InteractionGraph(4, [(0, 1), (1, 2)])
    with pytest.raises(ng.IsolatedFollowerError) as exc:
        ng.build_consensus_system(g)
    assert exc.value.node == 3
    assert "3" in str(exc.value)


@settings(max_examples=40, deadline=None)
@given(
    kind=st.sampled_from(["ring", "mesh", "caveman", "random"]),
    size=st.integers(0, 3),
    pick=st.integers(0, 1000),
    omega0=st.floats(0.1, 10),
    seed=st.integers(0, 1000),
)
def test_consensus_invariants(kind, size, pick, omega0, seed):
    n = {"ring": [9, 16, 33, 40], "mesh": [16, 25, 36, 49], "caveman": [12, 24, 30, 36], "random": [10, 16, 24, 31]}[kind][size]
    spec = ng.ModelSpec(kind, n)
    degs = spec.degrees()
    k = degs[pick % len(degs)]
    g = spec.build(k, seed=seed)
    sys = ng.build_consensus_system(g, omega0)
    assert np.all(np.diag(sys.w_follower) == -omega0)
    assert sys.row_sum_residual() <= 1e-12 * omega0
    off = sys.w_follower - np.diag(np.diag(sys.w_follower))
    assert np.all(off >= 0) and np.all(sys.w_leader >= 0)
    deg = g.degrees()
    a = g.adjacency()
    for r, i in enumerate(sys.follower_ids[:5]):
        np.testing.assert_allclose(sys.w_leader[r], omega0 * a[i, 0] / deg[i])


def test_generator_degrees_exact():
    for kind, n in [("ring", 30), ("mesh", 36), ("random", 30)]:
        spec = ng.ModelSpec(kind, n)
        for k in spec.degrees():
            assert np.all(spec.build(k, seed=1).degrees() == k), (kind, k)


# edge-list format


def test_edge_list_round_trip(tmp_path):
    g = ng.ring_lattice(10, 4, leader=3)
    path = tmp_path / "g.txt"
    ng.write_edge_list(g, path, ["made by a test"])
    assert path.read_text().splitlines()[1] == "10 3"
    assert ng.read_edge_list(path) == g


@pytest.mark.parametrize(
    "text",
    ["", "3 0\n0 5\n", "3 0\n0 1\n1 0\n", "3 0\n1 1\n", "3 7\n0 1\n", "three 0\n"],
)
def test_edge_list_rejects_bad_input(text):
    with pytest.raises(ng.GraphError):
        ng.parse_edge_list(text)


# model spec


def test_model_degree_sets():
    assert ng.ModelSpec("ring", 9).degrees() == [2, 4, 6, 8]
    assert ng.ModelSpec("caveman", 12).degrees() == [2, 3, 5, 11]
    assert ng.ModelSpec("mesh", 16).degrees()[-1] == 15
    assert all(k * 9 % 2 == 0 for k in ng.ModelSpec("random", 9).degrees())


def test_model_rejects_bad_sizes():
    with pytest.raises(ng.GraphError):
        ng.ModelSpec("mesh", 30)
    with pytest.raises(ng.GraphError):
        ng.ModelSpec("caveman", 7)
    with pytest.raises(ng.GraphError):
        ng.ModelSpec("lattice", 10)


def test_ring_distance():
    assert ng.ring_distance(0, 7, 8) == 1
    assert ng.ring_distance(2, 6, 9) == 4
    for i, j in itertools.product(range(9), repeat=2):
        assert ng.ring_distance(i, j, 9) == ng.ring_distance(j, i, 9)
