"""Simulated annealing over small unweighted graphs.

The objective is the collective response averaged over every choice of
leader. For ``omega > 0`` all leaders come from one inverse: with
``G = (i omega I - W)^-1`` over the full graph, the follower gains for
leader ``l`` are ``G[:, l] / G[l, l]``. Nodes without neighbours keep only
their ``-omega0`` diagonal, so they never pick up the signal.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from consensus_response import netgen
from consensus_response._parallel import parallel_map, sample_seed
from consensus_response.netgen import InteractionGraph
from consensus_response.spectral import frequency_response


def _consensus_matrix(adj: np.ndarray, omega0: float) -> np.ndarray:
    deg = adj.sum(axis=1)
    w = omega0 * adj / np.where(deg > 0, deg, 1.0)[:, None]
    np.fill_diagonal(w, -omega0)
    return w


def _averaged_from_adjacency(adj: np.ndarray, omega: float, omega0: float) -> float:
    n = len(adj)
    g = np.linalg.inv(1j * omega * np.eye(n) - _consensus_matrix(adj, omega0))
    ratio = np.abs(g / np.diag(g)[None, :]) ** 2
    return float((ratio.sum() - n) / n)


def leader_averaged_response(g: InteractionGraph, omega: float, omega0: float = 1.0) -> float:
    """Mean of ``H^2`` over all ``n_nodes`` leader choices.

    At ``omega = 0`` every leader is solved separately and any follower cut
    off from the leader raises :class:`SingularResponseError`.
    """
    if omega < 0:
        raise ValueError("omega must be >= 0")
    if omega > 0:
        return _averaged_from_adjacency(g.adjacency(), omega, omega0)
    total = 0.0
    for leader in range(g.n_nodes):
        sys = netgen.build_consensus_system(g.with_leader(leader), omega0, allow_isolated=True)
        total += frequency_response(sys, 0.0).h_squared
    return total / g.n_nodes


def mean_degree(g: InteractionGraph) -> float:
    return 2.0 * g.n_edges / g.n_nodes


def propose_move(g: InteractionGraph, rng: np.random.Generator) -> InteractionGraph:
    """Toggle one uniformly chosen node pair."""
    i, j = _draw_pair(g.n_nodes, rng)
    edges = g.edge_set()
    edges = edges - {(i, j)} if (i, j) in edges else edges | {(i, j)}
    return InteractionGraph(g.n_nodes, np.array(sorted(edges), dtype=np.int64).reshape(-1, 2), g.leader, g.label)


def _draw_pair(n: int, rng: np.random.Generator) -> tuple[int, int]:
    i = int(rng.integers(n))
    j = int(rng.integers(n - 1))
    if j >= i:
        j += 1
    return (i, j) if i < j else (j, i)


@dataclass(frozen=True)
class Schedule:
    t0: float = 0.1
    cooling: float = 1e-3 ** (1 / 20000)
    steps: int = 20000

    def __post_init__(self):
        if not self.t0 > 0:
            raise ValueError("initial temperature must be > 0")
        if not 0 < self.cooling <= 1:
            raise ValueError("cooling factor must lie in (0, 1]")
        if self.steps < 1:
            raise ValueError("annealing needs at least one step")


@dataclass(frozen=True)
class ChainTrace:
    temperature: np.ndarray
    objective: np.ndarray
    proposed: np.ndarray
    accepted: np.ndarray


@dataclass(frozen=True)
class AnnealResult:
    best_graph: InteractionGraph
    best_objective: float
    mean_degree: float
    omega: float
    seed: int
    restart_best: tuple[tuple[float, InteractionGraph], ...] = field(default=())
    traces: tuple[ChainTrace, ...] = field(default=(), repr=False)
    schedule: Schedule = field(default_factory=Schedule)
    omega0: float = 1.0

    @property
    def running_best(self) -> np.ndarray:
        """Best objective after each restart, in restart order."""
        return np.maximum.accumulate([b for b, _ in self.restart_best])


def _chain(n: int, omega: float, omega0: float, schedule: Schedule, seed: int):
    rng = np.random.default_rng(seed)
    adj = np.zeros((n, n))
    pair_bit = {}
    cache: dict[int, float] = {}
    key = 0

    def objective(k: int) -> float:
        val = cache.get(k)
        if val is None:
            val = cache[k] = _averaged_from_adjacency(adj, omega, omega0)
        return val

    cur = objective(key)
    best, best_key = cur, key
    temps = np.empty(schedule.steps)
    objs = np.empty(schedule.steps)
    props = np.empty(schedule.steps)
    acc = np.zeros(schedule.steps, dtype=bool)
    temp = schedule.t0
    for step in range(schedule.steps):
        i, j = _draw_pair(n, rng)
        bit = pair_bit.setdefault((i, j), 1 << (i * n + j))
        adj[i, j] = adj[j, i] = 1.0 - adj[i, j]
        new_key = key ^ bit
        new = objective(new_key)
        delta = new - cur
        u = rng.random()
        if delta >= 0 or u < math.exp(delta / temp):
            key, cur = new_key, new
            acc[step] = True
            if cur > best:
                best, best_key = cur, key
        else:
            adj[i, j] = adj[j, i] = 1.0 - adj[i, j]
        temps[step], objs[step], props[step] = temp, cur, new
        temp *= schedule.cooling
    return best, best_key, ChainTrace(temps, objs, props, acc)


def _graph_from_key(n: int, key: int) -> InteractionGraph:
    edges = [(i, j) for i in range(n) for j in range(i + 1, n) if key >> (i * n + j) & 1]
    return InteractionGraph(n, np.array(edges, dtype=np.int64).reshape(-1, 2))


def anneal_topology(
    n_total: int,
    omega: float,
    schedule: Schedule | None = None,
    seed: int = 0,
    restarts: int = 8,
    omega0: float = 1.0,
    threads: int | None = None,
) -> AnnealResult:
    """Metropolis search over simple graphs on ``n_total`` nodes.

    Every restart starts from the empty graph with its own counter-derived
    RNG and cools geometrically; the best graph seen in any restart wins
    (earliest restart on ties).
    """
    if n_total < 2:
        raise ValueError("annealing needs n_total >= 2")
    if not omega > 0:
        raise ValueError("annealing needs omega > 0")
    if restarts < 1:
        raise ValueError("annealing needs at least one restart")
    schedule = schedule or Schedule()
    chains = parallel_map(
        lambda r: _chain(n_total, omega, omega0, schedule, sample_seed(seed, r)), range(restarts), threads
    )
    per_restart = tuple((b, _graph_from_key(n_total, k)) for b, k, _ in chains)
    best_idx = max(range(restarts), key=lambda r: (per_restart[r][0], -r))
    best_obj, best_graph = per_restart[best_idx]
    return AnnealResult(
        best_graph=best_graph,
        best_objective=best_obj,
        mean_degree=mean_degree(best_graph),
        omega=omega,
        seed=seed,
        restart_best=per_restart,
        traces=tuple(t for _, _, t in chains),
        schedule=schedule,
        omega0=omega0,
    )


def enumerate_optimum(n_total: int, omega: float, omega0: float = 1.0) -> tuple[float, InteractionGraph]:
    """Exhaustive search over all ``2^(n(n-1)/2)`` graphs (tiny ``n_total`` only)."""
    pairs = [(i, j) for i in range(n_total) for j in range(i + 1, n_total)]
    if len(pairs) > 20:
        raise ValueError("exhaustive search is limited to n_total <= 6")
    best = None
    for mask in range(1 << len(pairs)):
        edges = [p for b, p in enumerate(pairs) if mask >> b & 1]
        g = InteractionGraph(n_total, np.array(edges, dtype=np.int64).reshape(-1, 2))
        val = leader_averaged_response(g, omega, omega0)
        if best is None or val > best[0]:
            best = (val, g)
    return best


def result_json(res: AnnealResult, extra: dict | None = None) -> str:
    payload = {
        "omega": res.omega,
        "mean_degree": res.mean_degree,
        "objective": res.best_objective,
        "edges": res.best_graph.edges.tolist(),
        "seed": res.seed,
        "n_total": res.best_graph.n_nodes,
        "components": [len(c) for c in netgen.components(res.best_graph)],
        "restart_objectives": [b for b, _ in res.restart_best],
        "restart_mean_degrees": [mean_degree(g) for _, g in res.restart_best],
        "schedule": {"t0": res.schedule.t0, "cooling": res.schedule.cooling, "steps": res.schedule.steps},
    }
    if extra:
        payload.update(extra)
    return json.dumps(payload, indent=2) + "\n"


def trace_csv(res: AnnealResult, header_lines: Sequence[str] = ()) -> str:
    lines = [f"# {h}" for h in header_lines] + ["step,temperature,objective,accepted,restart,proposed"]
    for r, tr in enumerate(res.traces):
        for s in range(len(tr.temperature)):
            temp, obj, prop = float(tr.temperature[s]), float(tr.objective[s]), float(tr.proposed[s])
            lines.append(f"{s},{temp!r},{obj!r},{int(tr.accepted[s])},{r},{prop!r}")
    return "\n".join(lines) + "\n"
