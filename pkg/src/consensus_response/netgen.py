"""Interaction-network generators and leader-grounded consensus matrices.

Graphs are undirected, unweighted and simple. Node ``leader`` follows an
external signal; every other node runs the row-normalised consensus rule
``dx_i/dt = (omega0 / k_i) * sum_j a_ij (x_j - x_i)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components


class GraphError(ValueError):
    """Invalid generator parameters or malformed graph data."""


class IsolatedFollowerError(GraphError):
    """A follower has no neighbours, so its consensus row is undefined."""

    def __init__(self, node: int):
        super().__init__(f"follower node {node} has degree 0; 1/k_i is undefined")
        self.node = node


def _canonical_edges(pairs, n_nodes: int) -> np.ndarray:
    arr = np.asarray(list(pairs) if not isinstance(pairs, np.ndarray) else pairs, dtype=np.int64)
    if arr.size == 0:
        arr = np.empty((0, 2), dtype=np.int64)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise GraphError("edges must be a sequence of (i, j) pairs")
    if np.any(arr < 0) or np.any(arr >= n_nodes):
        raise GraphError(f"edge endpoint out of range [0, {n_nodes - 1}]")
    if np.any(arr[:, 0] == arr[:, 1]):
        bad = arr[arr[:, 0] == arr[:, 1]][0]
        raise GraphError(f"self-loop at node {bad[0]}")
    arr = np.sort(arr, axis=1)
    arr = np.unique(arr, axis=0)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class InteractionGraph:
    """Simple undirected graph on ``n_nodes`` nodes with a designated leader.

    ``edges`` is stored as a read-only ``(E, 2)`` array with ``i < j`` in
    lexicographic order, so two graphs with the same edge set compare equal.
    """

    n_nodes: int
    edges: np.ndarray
    leader: int = 0
    label: str = field(default="", compare=False)

    def __post_init__(self):
        if self.n_nodes < 1:
            raise GraphError("graph needs at least one node")
        if not 0 <= self.leader < self.n_nodes:
            raise GraphError(f"leader {self.leader} outside [0, {self.n_nodes - 1}]")
        object.__setattr__(self, "edges", _canonical_edges(self.edges, self.n_nodes))

    @classmethod
    def from_adjacency(cls, adjacency, leader: int = 0, label: str = "") -> "InteractionGraph":
        a = np.asarray(adjacency)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise GraphError("adjacency must be square")
        if not np.array_equal(a != 0, (a != 0).T):
            raise GraphError("adjacency is not symmetric")
        if np.any(np.diag(a) != 0):
            raise GraphError("adjacency has self-loops")
        i, j = np.nonzero(np.triu(a != 0, 1))
        return cls(a.shape[0], np.column_stack([i, j]), leader, label)

    @property
    def n_followers(self) -> int:
        return self.n_nodes - 1

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def adjacency(self, dtype=float) -> np.ndarray:
        a = np.zeros((self.n_nodes, self.n_nodes), dtype=dtype)
        if self.n_edges:
            a[self.edges[:, 0], self.edges[:, 1]] = 1
            a[self.edges[:, 1], self.edges[:, 0]] = 1
        return a

    def degrees(self) -> np.ndarray:
        return np.bincount(self.edges.ravel(), minlength=self.n_nodes)

    def neighbors(self) -> list[list[int]]:
        out: list[list[int]] = [[] for _ in range(self.n_nodes)]
        for i, j in self.edges.tolist():
            out[i].append(j)
            out[j].append(i)
        for nb in out:
            nb.sort()
        return out

    def with_leader(self, leader: int) -> "InteractionGraph":
        return InteractionGraph(self.n_nodes, self.edges, leader, self.label)

    def edge_set(self) -> frozenset[tuple[int, int]]:
        return frozenset(map(tuple, self.edges.tolist()))

    def __eq__(self, other):
        if not isinstance(other, InteractionGraph):
            return NotImplemented
        return (
            self.n_nodes == other.n_nodes
            and self.leader == other.leader
            and np.array_equal(self.edges, other.edges)
        )

    def __hash__(self):
        return hash((self.n_nodes, self.leader, self.edges.tobytes()))

    def __repr__(self):
        tag = f" {self.label!r}" if self.label else ""
        return f"InteractionGraph(n_nodes={self.n_nodes}, n_edges={self.n_edges}, leader={self.leader}{tag})"


def complete_graph(n_total: int, leader: int = 0) -> InteractionGraph:
    i, j = np.triu_indices(n_total, 1)
    return InteractionGraph(n_total, np.column_stack([i, j]), leader, f"complete({n_total})")


def ring_lattice(n_total: int, k: int, leader: int = 0) -> InteractionGraph:
    """Ring where node ``i`` links to ``i +/- 1, ..., i +/- k/2``.

    ``k = n_total - 1`` is accepted for any parity and gives the complete graph.
    """
    if n_total < 3:
        raise GraphError("ring needs n_total >= 3")
    if k > n_total - 1:
        raise GraphError(f"ring degree k={k} exceeds n_total-1={n_total - 1}")
    if k == n_total - 1:
        g = complete_graph(n_total, leader)
        return InteractionGraph(n_total, g.edges, leader, f"ring({n_total},{k})")
    if k < 2 or k % 2:
        raise GraphError(f"ring degree must be even and >= 2, got k={k}")
    nodes = np.arange(n_total)
    pairs = [np.column_stack([nodes, (nodes + d) % n_total]) for d in range(1, k // 2 + 1)]
    return InteractionGraph(n_total, np.vstack(pairs), leader, f"ring({n_total},{k})")


def torus_shells(side: int) -> list[list[tuple[int, int]]]:
    """Distinct torus offsets grouped by Euclidean distance, nearest shell first."""
    half = side // 2
    rng = range(-half + (1 if side % 2 == 0 else 0), half + 1)
    by_dist: dict[int, list[tuple[int, int]]] = {}
    for dx in rng:
        for dy in rng:
            if dx == 0 and dy == 0:
                continue
            by_dist.setdefault(dx * dx + dy * dy, []).append((dx, dy))
    return [by_dist[d2] for d2 in sorted(by_dist)]


def mesh_degrees(side: int) -> list[int]:
    """Degrees reachable by whole shells that are multiples of 4, plus all-to-all."""
    total, out = 0, []
    for shell in torus_shells(side):
        total += len(shell)
        if total % 4 == 0 and total < side * side - 1:
            out.append(total)
    out.append(side * side - 1)
    return out


def mesh_offsets(side: int, k: int) -> list[tuple[int, int]]:
    if k == side * side - 1:
        return [o for shell in torus_shells(side) for o in shell]
    if k % 4:
        raise GraphError(f"mesh degree must be a multiple of 4, got k={k}")
    offsets: list[tuple[int, int]] = []
    for shell in torus_shells(side):
        if len(offsets) == k:
            break
        offsets.extend(shell)
        if len(offsets) > k:
            raise GraphError(f"mesh degree k={k} would split a distance shell on a {side}x{side} torus")
    if len(offsets) != k:
        raise GraphError(f"mesh degree k={k} exceeds the {side}x{side} torus")
    return offsets


def mesh_2d(side: int, k: int, leader: int = 0) -> InteractionGraph:
    """Periodic ``side x side`` grid, each node linked to its ``k`` nearest sites."""
    if side < 2:
        raise GraphError("mesh side must be >= 2")
    offsets = mesh_offsets(side, k)
    x, y = np.divmod(np.arange(side * side), side)
    pairs = []
    for dx, dy in offsets:
        nbr = ((x + dx) % side) * side + (y + dy) % side
        pairs.append(np.column_stack([np.arange(side * side), nbr]))
    return InteractionGraph(side * side, np.vstack(pairs), leader, f"mesh({side},{k})")


def caveman(n_clusters: int, k: int, leader: int = 0) -> InteractionGraph:
    """Connected caveman graph: ``n_clusters`` cliques of ``k+1`` nodes in a cycle.

    In clique ``c`` starting at node ``b``, edge ``(b, b+1)`` is replaced by
    ``(b, b-1)`` so that ``b`` links to the last node of the previous clique.
    """
    if n_clusters < 2:
        raise GraphError("caveman needs n_clusters >= 2")
    if k < 2:
        raise GraphError("caveman needs k >= 2")
    size = k + 1
    n = size * n_clusters
    edges = set()
    for c in range(n_clusters):
        b = c * size
        for i in range(b, b + size):
            for j in range(i + 1, b + size):
                edges.add((i, j))
        edges.discard((b, b + 1))
        p = (b - 1) % n
        edges.add((min(b, p), max(b, p)))
    return InteractionGraph(n, np.array(sorted(edges)), leader, f"caveman({n_clusters},{k})")


def caveman_degrees(n_total: int) -> list[int]:
    ks = [d - 1 for d in range(3, n_total // 2 + 1) if n_total % d == 0]
    return ks + [n_total - 1]


def _pair_stubs(n_total: int, k: int, rng: np.random.Generator) -> set[tuple[int, int]] | None:
    """One attempt at pairing ``k`` stubs per node into a simple graph.

    Stubs are shuffled and paired; pairs that would form a loop or repeat an
    edge go back into the pool for the next pass. Returns ``None`` on a dead
    end (leftover stubs with no admissible partner).
    """
    edges: set[tuple[int, int]] = set()
    stubs = np.repeat(np.arange(n_total), k)
    while stubs.size:
        rest: list[int] = []
        for u, v in rng.permutation(stubs).reshape(-1, 2).tolist():
            if u > v:
                u, v = v, u
            if u != v and (u, v) not in edges:
                edges.add((u, v))
            else:
                rest += (u, v)
        if len(rest) == stubs.size:
            nodes = sorted(set(rest))
            if not any((u, v) not in edges for a, u in enumerate(nodes) for v in nodes[a + 1 :]):
                return None
        stubs = np.array(rest, dtype=np.int64)
    return edges


def regular_random(n_total: int, k: int, seed=None, leader: int = 0, max_tries: int = 1000) -> InteractionGraph:
    """Random simple ``k``-regular graph by stub pairing, deterministic in ``seed``.

    Loops and repeated edges are re-paired locally; an attempt that dead-ends
    restarts from scratch. Degrees above ``(n_total - 1) / 2`` are sampled as
    the complement of an ``(n_total - 1 - k)``-regular graph.
    """
    if k < 0 or k >= n_total:
        raise GraphError(f"regular degree must satisfy 0 <= k < n_total, got k={k}")
    if (k * n_total) % 2:
        raise GraphError(f"k * n_total must be even, got {k} * {n_total}")
    label = f"random({n_total},{k})"
    if k == n_total - 1:
        return InteractionGraph(n_total, complete_graph(n_total).edges, leader, label)
    rng = np.random.default_rng(seed)
    dual = 2 * k > n_total - 1
    kk = n_total - 1 - k if dual else k
    for _ in range(max_tries):
        edges = _pair_stubs(n_total, kk, rng)
        if edges is None:
            continue
        if dual:
            i, j = np.triu_indices(n_total, 1)
            edges = set(zip(i.tolist(), j.tolist())) - edges
        return InteractionGraph(n_total, np.array(sorted(edges), dtype=np.int64).reshape(-1, 2), leader, label)
    raise GraphError(f"no simple {k}-regular graph on {n_total} nodes after {max_tries} pairing attempts")


def is_connected(g: InteractionGraph) -> bool:
    if g.n_nodes == 1:
        return True
    e = g.edges
    m = coo_matrix((np.ones(len(e)), (e[:, 0], e[:, 1])), shape=(g.n_nodes, g.n_nodes))
    n_comp, _ = connected_components(m, directed=False)
    return n_comp == 1


def components(g: InteractionGraph) -> list[list[int]]:
    e = g.edges
    m = coo_matrix((np.ones(len(e)), (e[:, 0], e[:, 1])), shape=(g.n_nodes, g.n_nodes))
    _, labels = connected_components(m, directed=False)
    groups: dict[int, list[int]] = {}
    for node, lab in enumerate(labels.tolist()):
        groups.setdefault(lab, []).append(node)
    return sorted(groups.values(), key=lambda c: (len(c), c[0]))


@dataclass(frozen=True, eq=False)
class ConsensusSystem:
    """Follower/leader blocks of the consensus matrix for one leader choice.

    ``symmetrizer`` is a positive vector ``s`` with ``s_i w_ij = s_j w_ji`` on
    the follower block (node degrees for graph systems), which makes ``W_F``
    similar to a symmetric matrix. ``None`` when no such vector is known.
    """

    w_follower: np.ndarray
    w_leader: np.ndarray
    omega0: float
    follower_ids: tuple[int, ...]
    leader: int = 0
    symmetrizer: np.ndarray | None = None

    def __post_init__(self):
        for name in ("w_follower", "w_leader", "symmetrizer"):
            arr = getattr(self, name)
            if arr is not None:
                arr = np.array(arr, dtype=float)
                arr.setflags(write=False)
                object.__setattr__(self, name, arr)
        n = len(self.follower_ids)
        if self.w_follower.shape != (n, n) or self.w_leader.shape != (n,):
            raise GraphError("consensus blocks do not match the follower count")

    @property
    def n_followers(self) -> int:
        return len(self.follower_ids)

    def row_sum_residual(self) -> float:
        """max_i |sum_j w_ij + w_i0| (zero for graph-built rows)."""
        if self.n_followers == 0:
            return 0.0
        return float(np.max(np.abs(self.w_follower.sum(axis=1) + self.w_leader)))

    def reachable_from_leader(self) -> np.ndarray:
        """Boolean mask of followers with a directed influence path from the leader."""
        n = self.n_followers
        seen = self.w_leader != 0
        frontier = seen.copy()
        pattern = self.w_follower != 0
        np.fill_diagonal(pattern, False)
        while frontier.any():
            new = pattern[:, frontier].any(axis=1) & ~seen
            seen |= new
            frontier = new
        return seen if n else np.zeros(0, dtype=bool)


def build_consensus_system(g: InteractionGraph, omega0: float = 1.0, allow_isolated: bool = False) -> ConsensusSystem:
    """Assemble ``W_F`` and ``W_L`` with ``w_ij = omega0 (a_ij / k_i - delta_ij)``.

    With ``allow_isolated`` a degree-0 follower keeps only its ``-omega0``
    diagonal entry, so it never receives the leader's signal.
    """
    a = g.adjacency()
    deg = a.sum(axis=1)
    followers = [i for i in range(g.n_nodes) if i != g.leader]
    for i in followers:
        if deg[i] == 0 and not allow_isolated:
            raise IsolatedFollowerError(i)
    safe = np.where(deg > 0, deg, 1.0)
    w = omega0 * a / safe[:, None]
    np.fill_diagonal(w, -omega0)
    idx = np.array(followers, dtype=int)
    sym = np.where(deg[idx] > 0, deg[idx], 1.0)
    return ConsensusSystem(
        w_follower=w[np.ix_(idx, idx)],
        w_leader=w[idx, g.leader],
        omega0=float(omega0),
        follower_ids=tuple(followers),
        leader=g.leader,
        symmetrizer=sym,
    )


def system_from_weights(w_full: np.ndarray, leader: int = 0, omega0: float = 1.0, symmetrizer=None) -> ConsensusSystem:
    """Partition a full ``(N+1) x (N+1)`` consensus matrix around ``leader``."""
    w_full = np.asarray(w_full, dtype=float)
    n = w_full.shape[0]
    idx = np.array([i for i in range(n) if i != leader], dtype=int)
    sym = None if symmetrizer is None else np.asarray(symmetrizer, dtype=float)[idx]
    return ConsensusSystem(
        w_follower=w_full[np.ix_(idx, idx)],
        w_leader=w_full[idx, leader],
        omega0=float(omega0),
        follower_ids=tuple(idx.tolist()),
        leader=leader,
        symmetrizer=sym,
    )


# edge-list text format: "n_nodes leader" header, then one "i j" per line


def write_edge_list(g: InteractionGraph, path, header_lines: Iterable[str] = ()) -> str:
    lines = [f"# {h}" for h in header_lines]
    lines.append(f"{g.n_nodes} {g.leader}")
    lines.extend(f"{i} {j}" for i, j in g.edges.tolist())
    text = "\n".join(lines) + "\n"
    if path is not None:
        Path(path).write_text(text)
    return text


def parse_edge_list(text: str) -> InteractionGraph:
    rows = [ln.split() for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    if not rows:
        raise GraphError("empty edge list")
    try:
        n_nodes, leader = (int(v) for v in rows[0])
        pairs = [(int(a), int(b)) for a, b in rows[1:]]
    except ValueError as exc:
        raise GraphError(f"malformed edge list: {exc}") from None
    seen = set()
    for i, j in pairs:
        key = (min(i, j), max(i, j))
        if key in seen:
            raise GraphError(f"duplicate edge {key}")
        seen.add(key)
    return InteractionGraph(n_nodes, np.array(pairs, dtype=np.int64).reshape(-1, 2), leader)


def read_edge_list(path) -> InteractionGraph:
    return parse_edge_list(Path(path).read_text())


def ring_distance(i: int, j: int, n_total: int) -> int:
    d = abs(i - j) % n_total
    return min(d, n_total - d)


def isqrt_exact(n: int) -> int:
    r = math.isqrt(n)
    if r * r != n:
        raise GraphError(f"{n} nodes cannot form a square torus")
    return r


MODEL_KINDS = ("ring", "mesh", "caveman", "random")


@dataclass(frozen=True)
class ModelSpec:
    """A network family of fixed size whose degree ``k`` is the free knob.

    ``n_total`` counts every node, leader included. The complete graph is the
    last entry of every ``degrees()`` list (the all-to-all limit).
    """

    kind: str
    n_total: int
    leader: int = 0

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise GraphError(f"unknown model {self.kind!r}; expected one of {', '.join(MODEL_KINDS)}")
        if self.kind == "mesh":
            isqrt_exact(self.n_total)
        if self.kind == "ring" and self.n_total < 3:
            raise GraphError("ring needs n_total >= 3")
        if self.kind == "caveman" and len(caveman_degrees(self.n_total)) < 2:
            raise GraphError(f"n_total={self.n_total} admits no caveman split into >= 2 cliques of >= 3")
        if not 0 <= self.leader < self.n_total:
            raise GraphError(f"leader {self.leader} outside [0, {self.n_total - 1}]")

    @property
    def is_random(self) -> bool:
        return self.kind == "random"

    @property
    def is_circulant(self) -> bool:
        return self.kind in ("ring", "mesh")

    @property
    def complete_degree(self) -> int:
        return self.n_total - 1

    def degrees(self) -> list[int]:
        n = self.n_total
        if self.kind == "ring":
            return list(range(2, n - 1, 2)) + [n - 1]
        if self.kind == "mesh":
            return mesh_degrees(isqrt_exact(n))
        if self.kind == "caveman":
            return caveman_degrees(n)
        return [k for k in range(2, n) if (k * n) % 2 == 0]

    def check_degree(self, k: int) -> None:
        if k not in self.degrees():
            raise GraphError(f"k={k} is not a valid degree for {self.kind} with n_total={self.n_total}")

    def build(self, k: int, seed=None) -> InteractionGraph:
        n = self.n_total
        if self.kind == "ring":
            return ring_lattice(n, k, self.leader)
        if self.kind == "mesh":
            return mesh_2d(isqrt_exact(n), k, self.leader)
        if self.kind == "caveman":
            if k == n - 1:
                return complete_graph(n, self.leader)
            if n % (k + 1):
                raise GraphError(f"caveman clique size {k + 1} does not divide n_total={n}")
            return caveman(n // (k + 1), k, self.leader)
        return regular_random(n, k, seed, self.leader)

    def tag(self) -> dict:
        return {"kind": self.kind, "n_total": self.n_total, "leader": self.leader}
