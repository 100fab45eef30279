"""Frequency response of leader-follower consensus networks.

For a follower block ``W_F`` and leader column ``W_L`` the per-agent gains are

    H(omega) = (i omega I - W_F)^-1 W_L

and the collective response is ``H^2 = sum_i |h_i|^2``. Frequencies are
angular and expressed in the same time unit as ``omega0``.

Three exact evaluation routes are provided:

* dense complex LU per frequency (:func:`frequency_response`), the reference;
* a modal route that diagonalises the symmetrised follower block once per
  system (:class:`ModalResponse`), for sweeps on a fixed graph;
* an FFT route for translation-invariant lattices (:func:`circulant_h_squared`),
  using ``h_i = G[i, 0] / G[0, 0]`` with ``G = (i omega - W)^-1`` circulant.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.linalg as sla

from consensus_response import netgen
from consensus_response._parallel import parallel_map, sample_seed
from consensus_response.netgen import ConsensusSystem, GraphError, ModelSpec


class SingularResponseError(ArithmeticError):
    """``i omega I - W_F`` is singular (omega = 0 with followers cut off from the leader)."""


DEFAULT_PPD = 96


@dataclass(frozen=True)
class ResponseVector:
    omega: float
    gains: np.ndarray

    @property
    def h_squared(self) -> float:
        return collective_response(self)


@dataclass(frozen=True)
class SpectrumPoint:
    omega: float
    h_squared: float
    gains: np.ndarray | None = None


@dataclass(frozen=True)
class ResponseSpectrum:
    points: tuple[SpectrumPoint, ...]

    @property
    def omegas(self) -> np.ndarray:
        return np.array([p.omega for p in self.points])

    @property
    def h_squared(self) -> np.ndarray:
        return np.array([p.h_squared for p in self.points])


@dataclass(frozen=True)
class KStarEntry:
    omega: float
    k_star: int
    h_squared: float


@dataclass(frozen=True)
class KStarCurve:
    model: dict
    entries: tuple[KStarEntry, ...]
    degrees: tuple[int, ...] = field(default=())

    @property
    def omegas(self) -> np.ndarray:
        return np.array([e.omega for e in self.entries])

    @property
    def k_star(self) -> np.ndarray:
        return np.array([e.k_star for e in self.entries])


def frequency_grid(lo: float, hi: float, ppd: int = DEFAULT_PPD, scale: str = "log") -> np.ndarray:
    """Sorted grid from ``lo`` to ``hi`` with ``ppd`` points per decade (log) or in total (linear)."""
    if hi < lo:
        raise ValueError("frequency grid needs lo <= hi")
    if scale == "log":
        if lo <= 0:
            raise ValueError("log grid needs lo > 0")
        n = max(int(round(math.log10(hi / lo) * ppd)), 0) + 1
        return np.logspace(math.log10(lo), math.log10(hi), n)
    if scale == "linear":
        return np.linspace(lo, hi, max(ppd, 2))
    raise ValueError(f"unknown grid scale {scale!r}")


def _check_omega(omega: float) -> None:
    if not omega >= 0:
        raise ValueError(f"omega must be >= 0, got {omega}")


def frequency_response(sys: ConsensusSystem, omega: float, allow_disconnected: bool = False) -> ResponseVector:
    """Solve ``(i omega I - W_F) H = W_L`` by dense complex LU.

    At ``omega = 0`` a follower with no path from the leader makes the system
    singular. ``allow_disconnected`` returns the ``omega -> 0+`` limit instead,
    in which such followers have zero gain.
    """
    _check_omega(omega)
    n = sys.n_followers
    if n == 0:
        return ResponseVector(omega, np.zeros(0, dtype=complex))
    m = 1j * omega * np.eye(n) - sys.w_follower
    rhs = sys.w_leader.astype(complex)
    if omega == 0:
        reach = sys.reachable_from_leader()
        if not reach.all():
            if not allow_disconnected:
                cut = [sys.follower_ids[i] for i in np.nonzero(~reach)[0][:5]]
                raise SingularResponseError(
                    f"omega=0 is singular: followers {cut} have no path from leader {sys.leader}"
                )
            gains = np.zeros(n, dtype=complex)
            if reach.any():
                sub = np.ix_(reach, reach)
                gains[reach] = sla.lu_solve(sla.lu_factor(m[sub]), rhs[reach])
            return ResponseVector(omega, gains)
    gains = sla.lu_solve(sla.lu_factor(m), rhs)
    return ResponseVector(omega, gains)


def collective_response(rv: ResponseVector) -> float:
    return float(np.sum(np.abs(rv.gains) ** 2))


class ModalResponse:
    """Modal evaluation of ``H(omega)`` for one fixed system.

    With ``s`` the system's symmetrizer, ``S = D W_F D^-1`` (``D = diag(sqrt s)``)
    is symmetric, so one ``eigh`` gives every frequency in ``O(N^2)``.
    """

    def __init__(self, sys: ConsensusSystem):
        if sys.symmetrizer is None:
            raise ValueError("modal route needs a symmetrizable system")
        self.sys = sys
        d = np.sqrt(sys.symmetrizer)
        s_mat = d[:, None] * sys.w_follower / d[None, :]
        s_mat = 0.5 * (s_mat + s_mat.T)
        self.eigenvalues, vecs = np.linalg.eigh(s_mat)
        self._left = vecs / d[:, None]
        self._coef = vecs.T @ (d * sys.w_leader)
        # ||D^-1 V c||^2 weights; exact H^2 needs the Gram matrix unless D is uniform
        self._uniform = np.allclose(d, d[0])
        if not self._uniform:
            self._gram = self._left.T @ self._left

    def gains(self, omega: float) -> np.ndarray:
        _check_omega(omega)
        denom = 1j * omega - self.eigenvalues
        if omega == 0 and np.any(np.abs(denom) < 1e-12 * max(1.0, self.sys.omega0)):
            raise SingularResponseError("omega=0 is singular: a follower component is cut off from the leader")
        return self._left @ (self._coef / denom)

    def h_squared(self, omegas) -> np.ndarray:
        om = np.atleast_1d(np.asarray(omegas, dtype=float))
        if np.any(om < 0):
            raise ValueError("omega must be >= 0")
        denom = 1j * om[:, None] - self.eigenvalues[None, :]
        if np.any(np.abs(denom) < 1e-12 * max(1.0, self.sys.omega0)):
            raise SingularResponseError("omega=0 is singular: a follower component is cut off from the leader")
        z = self._coef[None, :] / denom
        if self._uniform:
            scale = 1.0 / self.sys.symmetrizer[0]
            return scale * np.sum(np.abs(z) ** 2, axis=1)
        return np.real(np.einsum("wi,ij,wj->w", z.conj(), self._gram, z))


def response_spectrum(
    sys: ConsensusSystem,
    omegas: Sequence[float],
    method: str = "lu",
    keep_gains: bool = False,
    threads: int | None = None,
) -> ResponseSpectrum:
    """Evaluate ``H^2`` on a sorted grid, one independent solve per point."""
    om = np.asarray(omegas, dtype=float)
    if np.any(np.diff(om) < 0):
        raise ValueError("frequency grid must be sorted ascending")

    if method == "lu":
        def point(w):
            try:
                rv = frequency_response(sys, float(w))
            except SingularResponseError as exc:
                raise SingularResponseError(f"at omega={w:g}: {exc}") from None
            return SpectrumPoint(float(w), collective_response(rv), rv.gains if keep_gains else None)

        return ResponseSpectrum(tuple(parallel_map(point, om.tolist(), threads)))
    if method == "modal":
        modal = ModalResponse(sys)
        if keep_gains:
            pts = []
            for w in om:
                g = modal.gains(float(w))
                pts.append(SpectrumPoint(float(w), float(np.sum(np.abs(g) ** 2)), g))
            return ResponseSpectrum(tuple(pts))
        h2 = modal.h_squared(om)
        return ResponseSpectrum(tuple(SpectrumPoint(float(w), float(v)) for w, v in zip(om, h2)))
    raise ValueError(f"unknown method {method!r}")


def circulant_kernel(model: ModelSpec, k: int, omega0: float = 1.0) -> np.ndarray:
    """First row (ring) or first plane (mesh) of the full consensus matrix ``W``."""
    n = model.n_total
    if model.kind == "ring":
        row = np.zeros(n)
        if k == n - 1:
            row[1:] = omega0 / k
        else:
            row[1 : k // 2 + 1] = omega0 / k
            row[n - k // 2 :] = omega0 / k
        row[0] = -omega0
        return row
    if model.kind == "mesh":
        side = netgen.isqrt_exact(n)
        plane = np.zeros((side, side))
        for dx, dy in netgen.mesh_offsets(side, k):
            plane[dx % side, dy % side] = omega0 / k
        plane[0, 0] = -omega0
        return plane
    raise ValueError(f"model {model.kind!r} is not translation invariant")


def circulant_h_squared(kernel: np.ndarray, omegas, keep_gains: bool = False):
    """``H^2`` for a translation-invariant ``W`` with the leader at the origin.

    ``kernel`` is ``W[0, :]`` laid out on the lattice (1-D ring or 2-D torus)
    and must be symmetric under ``x -> -x``. Requires ``omega > 0``.
    """
    kernel = np.asarray(kernel, dtype=float)
    om = np.atleast_1d(np.asarray(omegas, dtype=float))
    if np.any(om <= 0):
        raise ValueError("the circulant route needs omega > 0 (W itself is singular)")
    axes = tuple(range(-kernel.ndim, 0))
    lam = np.fft.fftn(kernel).real
    resolvent = 1.0 / (1j * om.reshape((-1,) + (1,) * kernel.ndim) - lam[None, ...])
    g = np.fft.ifftn(resolvent, axes=axes).reshape(len(om), -1)
    h = g[:, 1:] / g[:, :1]
    h2 = np.sum(np.abs(h) ** 2, axis=1)
    if keep_gains:
        return h2, h
    return h2


def model_h_squared(
    model: ModelSpec,
    k: int,
    omegas,
    omega0: float = 1.0,
    samples: int = 1,
    seed: int = 0,
) -> np.ndarray:
    """Sample-averaged ``H^2`` of one model instance over a grid.

    Lattices use the FFT route for ``omega > 0``; other models use the modal
    route. Random samples draw seeds ``sample_seed(seed, k, s)`` so results
    never depend on evaluation order.
    """
    om = np.asarray(omegas, dtype=float)
    if model.is_circulant and model.leader == 0 and np.all(om > 0):
        return circulant_h_squared(circulant_kernel(model, k, omega0), om)
    n_samples = samples if model.is_random else 1
    acc = np.zeros(len(om))
    for s in range(n_samples):
        g = model.build(k, seed=sample_seed(seed, k, s))
        acc += ModalResponse(netgen.build_consensus_system(g, omega0)).h_squared(om)
    return acc / n_samples


def _argmax_smallest(degrees: np.ndarray, values: np.ndarray) -> int:
    best = np.max(values)
    return int(np.min(degrees[values == best]))


def degree_sweep(
    model: ModelSpec,
    omegas,
    omega0: float = 1.0,
    samples: int = 1,
    seed: int = 0,
    degrees: Sequence[int] | None = None,
    threads: int | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(degrees, H2)`` with ``H2[a, b]`` for degree ``a`` at frequency ``b``."""
    ks = np.array(sorted(model.degrees() if degrees is None else degrees))
    rows = parallel_map(lambda k: model_h_squared(model, int(k), omegas, omega0, samples, seed), ks.tolist(), threads)
    return ks, np.array(rows)


def optimal_degree(
    model: ModelSpec,
    omega: float,
    samples: int = 1,
    omega0: float = 1.0,
    seed: int = 0,
    exclude_complete: bool = False,
    threads: int | None = None,
) -> int:
    """Degree maximising (sample-averaged) ``H^2`` at ``omega``; ties go to the smaller k."""
    degrees = model.degrees()
    if exclude_complete:
        degrees = degrees[:-1]
    ks, table = degree_sweep(model, [omega], omega0, samples, seed, degrees, threads)
    return _argmax_smallest(ks, table[:, 0])


def kstar_curve(
    model: ModelSpec,
    omegas,
    samples: int = 1,
    omega0: float = 1.0,
    seed: int = 0,
    threads: int | None = None,
) -> KStarCurve:
    om = np.asarray(omegas, dtype=float)
    ks, table = degree_sweep(model, om, omega0, samples, seed, threads=threads)
    entries = []
    for b, w in enumerate(om):
        kst = _argmax_smallest(ks, table[:, b])
        entries.append(KStarEntry(float(w), kst, float(table[ks == kst, b][0])))
    return KStarCurve(model.tag(), tuple(entries), tuple(int(k) for k in ks))


def bulk_kstar(table_degrees: np.ndarray, table: np.ndarray, complete_degree: int) -> np.ndarray:
    """Optimal degree per frequency once the complete graph is excluded."""
    keep = table_degrees != complete_degree
    ks = table_degrees[keep]
    return np.array([_argmax_smallest(ks, col) for col in table[keep].T])


def finite_size_jump(model: ModelSpec, omegas, omega0: float = 1.0, samples: int = 1, seed: int = 0):
    """First grid frequency where k* leaves the complete graph, and the bulk k* there."""
    om = np.asarray(omegas, dtype=float)
    ks, table = degree_sweep(model, om, omega0, samples, seed)
    kst = np.array([_argmax_smallest(ks, col) for col in table.T])
    below = np.nonzero(kst != model.complete_degree)[0]
    if len(below) == 0:
        raise ValueError("k* never leaves the complete graph on this grid")
    b = int(below[0])
    bulk = bulk_kstar(ks, table[:, b : b + 1], model.complete_degree)[0]
    return float(om[b]), int(bulk)


def fit_power_law(curve: KStarCurve, window: tuple[float, float], min_points: int = 5) -> tuple[float, float]:
    """Least-squares fit of ``log k* = log K0 - gamma log omega`` inside ``window``.

    Points sitting on the model's smallest degree or on the complete graph are
    dropped, since they are floors/plateaus rather than bulk behaviour.
    """
    lo, hi = window
    om, ks = curve.omegas, curve.k_star.astype(float)
    keep = (om >= lo) & (om <= hi)
    if curve.degrees:
        keep &= (ks != min(curve.degrees)) & (ks != max(curve.degrees))
    if keep.sum() < min_points:
        raise ValueError(f"only {int(keep.sum())} usable points in window {window}; need {min_points}")
    slope, intercept = np.polyfit(np.log(om[keep]), np.log(ks[keep]), 1)
    return float(np.exp(intercept)), float(-slope)


def consensus_speed(sys: ConsensusSystem) -> float:
    """Smallest real part among the eigenvalues of ``-W_F``."""
    if sys.symmetrizer is not None:
        d = np.sqrt(sys.symmetrizer)
        s_mat = d[:, None] * sys.w_follower / d[None, :]
        ev = np.linalg.eigvalsh(0.5 * (s_mat + s_mat.T))
        rate = float(np.min(-ev))
    else:
        rate = float(np.min(np.real(-np.linalg.eigvals(sys.w_follower))))
    if rate <= 1e-12 * max(1.0, sys.omega0):
        raise SingularResponseError(
            f"smallest decay rate {rate:.3g} is not positive: some followers are cut off from the leader"
        )
    return rate


def first_dominance(omegas, a, b) -> float | None:
    """Smallest grid frequency from which ``a > b`` holds at every later point."""
    om = np.asarray(omegas)
    wins = np.asarray(a) > np.asarray(b)
    if not wins[-1]:
        return None
    idx = len(wins) - 1
    while idx > 0 and wins[idx - 1]:
        idx -= 1
    return float(om[idx])


# CSV / JSON writers


def spectrum_csv(spec: ResponseSpectrum, header_lines: Sequence[str] = ()) -> str:
    lines = [f"# {h}" for h in header_lines]
    with_gains = bool(spec.points) and spec.points[0].gains is not None
    cols = ["omega", "h_squared"]
    if with_gains:
        for i in range(len(spec.points[0].gains)):
            cols += [f"h_i_re_{i}", f"h_i_im_{i}"]
    lines.append(",".join(cols))
    for p in spec.points:
        vals = [repr(float(p.omega)), repr(float(p.h_squared))]
        if with_gains:
            for g in p.gains:
                vals += [repr(float(g.real)), repr(float(g.imag))]
        lines.append(",".join(vals))
    return "\n".join(lines) + "\n"


def kstar_csv(curve: KStarCurve, header_lines: Sequence[str] = ()) -> str:
    lines = [f"# {h}" for h in header_lines]
    lines.append("omega,k_star,h_squared")
    lines += [f"{e.omega!r},{e.k_star},{e.h_squared!r}" for e in curve.entries]
    return "\n".join(lines) + "\n"


def read_kstar_csv(path) -> KStarCurve:
    rows = [ln for ln in Path(path).read_text().splitlines() if ln.strip() and not ln.startswith("#")]
    if not rows or rows[0].strip() != "omega,k_star,h_squared":
        raise ValueError(f"{path}: not a k* curve CSV")
    entries = []
    for ln in rows[1:]:
        w, k, h = ln.split(",")
        entries.append(KStarEntry(float(w), int(k), float(h)))
    meta = {}
    for ln in Path(path).read_text().splitlines():
        if ln.startswith("# degrees="):
            meta["degrees"] = tuple(int(v) for v in ln.split("=", 1)[1].split())
    return KStarCurve({}, tuple(entries), meta.get("degrees", ()))


def fit_json(k0: float, gamma: float, window: tuple[float, float], extra: dict | None = None) -> str:
    payload = {"K0": k0, "gamma": gamma, "window": [window[0], window[1]]}
    if extra:
        payload.update(extra)
    return json.dumps(payload, indent=2, sort_keys=False) + "\n"

