"""Gradient ascent on consensus weights under the row-sum constraint.

The weighted ring assigns every link at ring distance ``d`` the weight
``c_d`` (``d = 1 .. n_total // 2``), with ``w_ii = -omega0``. Feasible
profiles satisfy ``sum_d mult_d c_d = omega0`` (zero row sums) and
``c >= 0``, where ``mult_d`` counts the nodes at distance ``d``.

Gradients use one factorisation and an adjoint solve: with
``M = i omega I - W_F``, ``h = M^-1 W_L`` and ``a = M^-H h``,

    dH^2/dw_ij = 2 Re(conj(a_i) h_j),    dH^2/dw_i0 = 2 Re(conj(a_i)).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg as sla

from consensus_response import netgen
from consensus_response._parallel import parallel_map, sample_seed
from consensus_response.netgen import ConsensusSystem
from consensus_response.spectral import SingularResponseError


class OptimizationDiverged(RuntimeError):
    """H^2 rose above N, which only happens if the constraint drifted."""

    def __init__(self, message: str, trace: "OptimizationTrace"):
        super().__init__(message)
        self.trace = trace


def ring_multiplicity(n_total: int) -> np.ndarray:
    """Number of nodes at ring distance ``d`` from any node, ``d = 1 .. n_total // 2``."""
    mult = np.full(n_total // 2, 2, dtype=np.int64)
    if n_total % 2 == 0:
        mult[-1] = 1
    return mult


def ring_distances(n_total: int) -> np.ndarray:
    idx = np.arange(n_total)
    return np.minimum(idx, n_total - idx)


@dataclass(frozen=True)
class WeightProfile:
    coeffs: np.ndarray
    omega: float
    n_total: int
    omega0: float = 1.0

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=float)
        if c.shape != (self.n_total // 2,):
            raise ValueError(f"profile for n_total={self.n_total} needs {self.n_total // 2} coefficients, got {c.shape}")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @property
    def distances(self) -> np.ndarray:
        return np.arange(1, self.n_total // 2 + 1)

    @property
    def multiplicity(self) -> np.ndarray:
        return ring_multiplicity(self.n_total)

    def row_sum(self) -> float:
        """Row sum of the reconstructed ``W`` (identical for every row)."""
        return float(self.multiplicity @ self.coeffs - self.omega0)

    def constraint_norm(self) -> float:
        """Euclidean norm of the vector of all row sums."""
        return abs(self.row_sum()) * math.sqrt(self.n_total)

    def first_row(self) -> np.ndarray:
        dist = ring_distances(self.n_total)
        return np.concatenate([[-self.omega0], self.coeffs[dist[1:] - 1]])

    def full_matrix(self) -> np.ndarray:
        """Symmetric circulant ``W`` with ``W[i, j] = c_{d(i, j)}``."""
        dist = ring_distances(self.n_total)
        i, j = np.indices((self.n_total, self.n_total))
        return self.first_row()[dist[(j - i) % self.n_total]]

    def system(self) -> ConsensusSystem:
        return netgen.system_from_weights(self.full_matrix(), 0, self.omega0, np.ones(self.n_total))

    def with_coeffs(self, coeffs) -> "WeightProfile":
        return WeightProfile(coeffs, self.omega, self.n_total, self.omega0)


def uniform_profile(n_total: int, omega: float, omega0: float = 1.0) -> WeightProfile:
    """All-to-all weights ``omega0 / N``."""
    return WeightProfile(np.full(n_total // 2, omega0 / (n_total - 1)), omega, n_total, omega0)


def ring_profile(n_total: int, k: int, omega: float, omega0: float = 1.0) -> WeightProfile:
    """Unweighted ring of degree ``k`` written as a profile."""
    if k == n_total - 1:
        return uniform_profile(n_total, omega, omega0)
    netgen.ring_lattice(n_total, k)
    c = np.zeros(n_total // 2)
    c[: k // 2] = omega0 / k
    return WeightProfile(c, omega, n_total, omega0)


@dataclass(frozen=True)
class TraceRow:
    iteration: int
    cost: float
    h_squared: float
    constraint_norm: float


@dataclass(frozen=True)
class OptimizationTrace:
    iterations: tuple[TraceRow, ...]
    converged: bool
    status: str = ""
    start: str = ""
    starts: tuple[tuple[str, float], ...] = field(default=())


# gradients


def response_gradient_weights(sys: ConsensusSystem, omega: float) -> np.ndarray:
    """``dH^2/dw_ij`` for every node pair, indexed by graph node.

    Rows are followers (the leader row is identically zero), columns include
    the leader. Diagonal entries are the derivative with respect to
    ``w_ii`` even though consensus matrices keep them fixed.
    """
    if omega < 0:
        raise ValueError("omega must be >= 0")
    n = sys.n_followers
    m = 1j * omega * np.eye(n) - sys.w_follower
    if omega == 0 and not sys.reachable_from_leader().all():
        raise SingularResponseError("omega=0 is singular: some followers have no path from the leader")
    lu = sla.lu_factor(m)
    h = sla.lu_solve(lu, sys.w_leader.astype(complex))
    a = sla.lu_solve(lu, h, trans=2)
    ids = np.array(sys.follower_ids)
    grad = np.zeros((n + 1, n + 1))
    grad[np.ix_(ids, ids)] = 2.0 * np.real(np.conj(a)[:, None] * h[None, :])
    grad[ids, sys.leader] = 2.0 * np.real(np.conj(a))
    return grad


def _gains_and_adjoint_fft(profile: WeightProfile):
    """``h`` and ``a = M^-H h`` for the ring, leader at node 0, via FFT (omega > 0)."""
    lam = np.fft.fft(profile.first_row()).real
    res = 1.0 / (1j * profile.omega - lam)
    g = np.fft.ifft(res)
    h = g[1:] / g[0]

    def solve(y):
        # grounded inverse by Schur complement of the full circulant resolvent
        z = np.fft.ifft(res * np.fft.fft(np.concatenate([[0.0], y])))
        return z[1:] - g[1:] * z[0] / g[0]

    # M is complex symmetric, so M^-H y = conj(M^-1 conj(y))
    a = np.conj(solve(np.conj(h)))
    return h, a


def _gains_and_adjoint_lu(profile: WeightProfile):
    sys = profile.system()
    m = 1j * profile.omega * np.eye(sys.n_followers) - sys.w_follower
    if profile.omega == 0 and not sys.reachable_from_leader().all():
        raise SingularResponseError("omega=0 is singular: the profile leaves followers cut off from the leader")
    lu = sla.lu_factor(m)
    h = sla.lu_solve(lu, sys.w_leader.astype(complex))
    return h, sla.lu_solve(lu, h, trans=2)


def _h2_and_coeff_gradient(profile: WeightProfile, method: str = "auto"):
    if method == "auto":
        method = "fft" if profile.omega > 0 else "lu"
    if method == "fft":
        if profile.omega <= 0:
            raise ValueError("the FFT route needs omega > 0")
        h, a = _gains_and_adjoint_fft(profile)
    elif method == "lu":
        h, a = _gains_and_adjoint_lu(profile)
    else:
        raise ValueError(f"unknown method {method!r}")
    n = profile.n_total
    x = np.concatenate([[1.0], h])
    ab = np.concatenate([[0.0], a])
    # r_s = sum_i conj(ab_i) x_{i+s}: every (row i, column i+s) pair at lag s
    r = np.fft.ifft(np.conj(np.fft.fft(ab)) * np.fft.fft(x))
    s = profile.distances
    grad = r[s] + r[(-s) % n]
    if n % 2 == 0:
        grad[-1] = r[n // 2]
    return float(np.sum(np.abs(h) ** 2)), 2.0 * grad.real


def response_gradient_coeffs(profile: WeightProfile, method: str = "auto") -> np.ndarray:
    """``dH^2/dc_d``: the weight gradient summed over all links at distance ``d``."""
    return _h2_and_coeff_gradient(profile, method)[1]


def cost_and_gradient(profile: WeightProfile, lam: float, method: str = "auto") -> tuple[float, np.ndarray]:
    """Penalised cost ``H^2 - (lam/2) sum_i (sum_j w_ij)^2`` and its coefficient gradient."""
    if lam < 0:
        raise ValueError("penalty weight must be >= 0")
    h2, grad = _h2_and_coeff_gradient(profile, method)
    s = profile.row_sum()
    n = profile.n_total
    cost = h2 - 0.5 * lam * n * s * s
    return cost, grad - lam * n * s * profile.multiplicity


# constraint handling


def project_feasible(y: np.ndarray, mult: np.ndarray, total: float) -> np.ndarray:
    """Euclidean projection onto ``{c >= 0, mult . c = total}``.

    The solution is ``max(y - tau * mult, 0)``; ``tau`` is found exactly from
    the sorted breakpoints ``y_d / mult_d``.
    """
    y = np.asarray(y, dtype=float)
    m = np.asarray(mult, dtype=float)
    brk = y / m
    order = np.argsort(-brk)
    cm_y = np.cumsum((m * y)[order])
    cm_m2 = np.cumsum((m * m)[order])
    taus = (cm_y - total) / cm_m2
    nxt = np.append(brk[order][1:], -np.inf)
    ok = (taus < brk[order]) & (taus >= nxt)
    j = int(np.argmax(ok)) if ok.any() else len(y) - 1
    c = np.maximum(y - taus[j] * m, 0.0)
    active = c > 0
    if active.any():
        c[active] -= m[active] * (m @ c - total) / (m[active] @ m[active])
        c = np.maximum(c, 0.0)
    return c


# optimisation

DEFAULT_STARTS = ("uniform", "exp1", "exp2", "exp4", "exp8", "exp16", "exp64")


def _start_shape(name: str, distances: np.ndarray) -> np.ndarray:
    if name == "uniform":
        return np.ones(len(distances))
    if name.startswith("exp"):
        scale = float(name[3:])
        if scale > 0:
            return np.exp(-distances / scale)
    raise ValueError(f"unknown start {name!r}; use 'uniform' or 'exp<length>'")


def _ascend(
    c: np.ndarray,
    base: WeightProfile,
    step0: float,
    max_iter: int,
    tol: float,
    lam: float,
    start: str,
):
    mult = base.multiplicity
    limit = base.n_total - 1 + 1e-6
    prof = base.with_coeffs(c)
    f, g = _h2_and_coeff_gradient(prof)
    rows = [TraceRow(0, f - 0.5 * lam * base.n_total * prof.row_sum() ** 2, f, prof.constraint_norm())]

    def check(f):
        if f > limit:
            trace = OptimizationTrace(tuple(rows), False, "diverged", start)
            raise OptimizationDiverged(f"H^2={f:.12g} exceeds N={base.n_total - 1}: constraint drift", trace)

    check(f)
    eta = step0
    status = "budget"
    for it in range(1, max_iter + 1):
        while True:
            cand = base.with_coeffs(project_feasible(c + eta * g, mult, base.omega0))
            fn, gn = _h2_and_coeff_gradient(cand)
            if fn > f:
                break
            eta /= 2
            if eta < 1e-30:
                break
        if eta < 1e-30:
            status = "stalled"
            break
        moved = np.linalg.norm(cand.coeffs - c) / eta
        c, f, g, prof = cand.coeffs, fn, gn, cand
        rows.append(TraceRow(it, f - 0.5 * lam * base.n_total * prof.row_sum() ** 2, f, prof.constraint_norm()))
        check(f)
        if moved < tol:
            status = "converged"
            break
        # steps far beyond the feasible box only add rounding to the projection
        eta = min(2 * eta, 10.0 * base.omega0 / max(float(np.max(np.abs(g))), 1e-300))
    return c, f, OptimizationTrace(tuple(rows), status != "budget", status, start)


def optimize_weight_profile(
    n_total: int,
    omega: float,
    omega0: float = 1.0,
    step0: float = 1e-2,
    max_iter: int = 5000,
    tol: float = 1e-8,
    seed: int = 0,
    noise: float = 0.01,
    starts: Sequence[str] = DEFAULT_STARTS,
    lam: float = 1.0,
    threads: int | None = None,
) -> tuple[WeightProfile, OptimizationTrace]:
    """Projected gradient ascent of ``H^2`` over feasible ring profiles.

    Each named start (uniform, or ``exp<l>`` for ``exp(-d/l)``) gets
    multiplicative noise of relative size ``noise`` and is projected onto the
    feasible set. A step is accepted only if ``H^2`` increases; the step
    halves on rejection and doubles after acceptance. A run stops once the
    projected-gradient measure ``|c_new - c| / eta`` drops below ``tol``.
    The best start wins and is returned in canonical orientation.
    """
    if n_total < 8:
        raise ValueError("weight optimisation needs n_total >= 8")
    if omega <= 0:
        raise ValueError("weight optimisation needs omega > 0 (every feasible profile gives H^2 = N at omega = 0)")
    base = uniform_profile(n_total, omega, omega0)
    d = base.distances

    def run(indexed):
        idx, name = indexed
        rng = np.random.default_rng(sample_seed(seed, idx))
        shape = _start_shape(name, d)
        y = omega0 * shape / (base.multiplicity @ shape) * (1.0 + noise * rng.standard_normal(len(d)))
        c0 = project_feasible(y, base.multiplicity, omega0)
        return _ascend(c0, base, step0, max_iter, tol, lam, name)

    results = parallel_map(run, list(enumerate(starts)), threads)
    best = max(range(len(results)), key=lambda i: (results[i][1], -i))
    c, _, trace = results[best]
    summary = tuple((name, float(r[1])) for name, r in zip(starts, results))
    trace = OptimizationTrace(trace.iterations, trace.converged, trace.status, trace.start, summary)
    return canonical_profile(base.with_coeffs(c)), trace


def _heaviside_fit(profile: WeightProfile) -> tuple[int, float, float]:
    c = np.asarray(profile.coeffs)
    if not np.any(c > 0):
        raise ValueError("cannot fit a step to an all-zero profile")
    if np.any(c < 0):
        raise ValueError("step fit needs a non-negative profile")
    n = len(c)
    cs, cs2 = np.cumsum(c), np.cumsum(c * c)
    cut = np.arange(1, n + 1)
    heights = cs / cut
    resid = (cs2 - cs * heights) + (cs2[-1] - cs2)
    d0 = int(np.argmin(resid)) + 1
    return d0, float(heights[d0 - 1]), float(resid[d0 - 1])


def effective_degree(profile: WeightProfile) -> int:
    """Degree of the best least-squares step ``c_d = h [d <= d0]``.

    Returns the number of neighbours within ring distance ``d0`` (``2 d0``,
    or ``N`` for a step covering the whole ring).
    """
    d0, _, _ = _heaviside_fit(profile)
    return int(profile.multiplicity[:d0].sum())


def canonical_profile(profile: WeightProfile) -> WeightProfile:
    """Pick the most step-like among the relabellings ``d -> a d mod n``.

    Multipliers ``a`` coprime with ``n_total`` permute ring distances and give
    isomorphic circulant graphs with identical response. The representative
    minimises the residual of the step fit, then the first moment
    ``sum_d d c_d``.
    """
    n = profile.n_total
    d = profile.distances
    scale = float(profile.coeffs @ profile.coeffs)
    if scale == 0:
        return profile
    best = None
    for a in range(1, n // 2 + 1):
        if math.gcd(a, n) != 1:
            continue
        ad = (a * d) % n
        ad = np.minimum(ad, n - ad)
        c2 = np.empty(len(d))
        c2[ad - 1] = profile.coeffs
        cand = profile.with_coeffs(c2)
        resid = _heaviside_fit(cand)[2] / scale
        moment = float(d @ c2)
        if best is None or resid < best[0] - 1e-9 or (resid <= best[0] + 1e-9 and moment < best[1]):
            best = (resid, moment, cand)
    return best[2]


# output formats


def profile_csv(profile: WeightProfile, header_lines: Sequence[str] = ()) -> str:
    lines = [f"# {h}" for h in header_lines] + ["distance,weight"]
    lines += [f"{d},{w!r}" for d, w in zip(profile.distances.tolist(), profile.coeffs.tolist())]
    return "\n".join(lines) + "\n"


def trace_csv(trace: OptimizationTrace, header_lines: Sequence[str] = ()) -> str:
    lines = [f"# {h}" for h in header_lines] + ["iter,cost,h_squared,constraint_norm"]
    lines += [f"{r.iteration},{r.cost!r},{r.h_squared!r},{r.constraint_norm!r}" for r in trace.iterations]
    return "\n".join(lines) + "\n"


def summary_json(profile: WeightProfile, trace: OptimizationTrace, extra: dict | None = None) -> str:
    payload = {
        "n_total": profile.n_total,
        "omega": profile.omega,
        "omega0": profile.omega0,
        "h_squared": trace.iterations[-1].h_squared,
        "k_star": effective_degree(profile),
        "converged": trace.converged,
        "status": trace.status,
        "start": trace.start,
        "iterations": trace.iterations[-1].iteration,
        "constraint_norm": profile.constraint_norm(),
        "starts": {name: h2 for name, h2 in trace.starts},
    }
    if extra:
        payload.update(extra)
    return json.dumps(payload, indent=2) + "\n"
