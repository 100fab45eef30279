"""Time-domain simulation of linear and heading consensus.

Two simulators live here:

* :func:`simulate_linear` integrates ``dx/dt = W_F x + W_L u(t)`` with
  fixed-step RK4, the time-domain check on the frequency response;
* :func:`simulate_heading` runs the asynchronous nonlinear heading protocol,
  where each follower wakes on its own jittered timer, takes the circular
  mean of its neighbours' last published headings and relaxes toward it.
"""
from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.integrate import trapezoid

from consensus_response.netgen import ConsensusSystem, InteractionGraph

TWO_PI = 2.0 * math.pi


class SimulationUnstable(ArithmeticError):
    """State grew beyond ten times the input amplitude."""


def wrap(angle):
    """Wrap to ``(-pi, pi]``."""
    out = np.pi - np.mod(np.pi - np.asarray(angle, dtype=float), TWO_PI)
    return float(out) if np.ndim(out) == 0 else out


def _wrap1(a: float) -> float:
    a = math.pi - math.fmod(math.pi - a, TWO_PI)
    if a <= -math.pi:
        a += TWO_PI
    elif a > math.pi:
        a -= TWO_PI
    return a


# linear dynamics


@dataclass(frozen=True)
class SinusoidInput:
    omega: float
    amplitude: float = 1.0
    phase: float = 0.0

    def __call__(self, t):
        return self.amplitude * np.cos(self.omega * t + self.phase)


@dataclass(frozen=True)
class LinearTrajectory:
    times: np.ndarray
    states: np.ndarray
    input: SinusoidInput


def simulate_linear(
    sys: ConsensusSystem,
    u: SinusoidInput,
    duration: float,
    dt: float,
    sample_every: int = 1,
    x0=None,
) -> LinearTrajectory:
    """Classical RK4 from ``x(0) = 0`` (or ``x0``) with a fixed step ``dt``.

    Every ``sample_every``-th step is stored, so the stored grid is uniform.
    """
    if dt <= 0 or duration <= 0:
        raise ValueError("dt and duration must be positive")
    if dt > 0.1 / sys.omega0 * (1 + 1e-12) or (u.omega > 0 and dt > 0.1 / u.omega * (1 + 1e-12)):
        raise ValueError(f"dt={dt:g} too coarse: need dt <= 0.1/omega0 and dt <= 0.1/omega")
    n_steps = int(round(duration / dt))
    a = np.asarray(sys.w_follower)
    b = np.asarray(sys.w_leader)
    x = np.zeros(sys.n_followers) if x0 is None else np.array(x0, dtype=float)
    bound = 10.0 * max(abs(u.amplitude), float(np.max(np.abs(x), initial=0.0)), 1e-300)
    out_t = [0.0]
    out_x = [x.copy()]
    for step in range(n_steps):
        t = step * dt
        k1 = a @ x + b * u(t)
        k2 = a @ (x + 0.5 * dt * k1) + b * u(t + 0.5 * dt)
        k3 = a @ (x + 0.5 * dt * k2) + b * u(t + 0.5 * dt)
        k4 = a @ (x + dt * k3) + b * u(t + dt)
        x = x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.abs(x) <= bound):
            raise SimulationUnstable(f"state left the bound {bound:g} at t={t + dt:g}; dt too large or unstable system")
        if (step + 1) % sample_every == 0:
            out_t.append((step + 1) * dt)
            out_x.append(x.copy())
    return LinearTrajectory(np.array(out_t), np.array(out_x), u)


def _project(times: np.ndarray, series: np.ndarray, omega: float, settle_fraction: float) -> np.ndarray:
    """Complex amplitudes ``z`` with ``series ~ Re(z e^{i omega t})`` after the settle window."""
    if not 0 <= settle_fraction < 1:
        raise ValueError("settle_fraction must lie in [0, 1)")
    start = times[0] + settle_fraction * (times[-1] - times[0])
    mask = times >= start
    span = times[mask][-1] - times[mask][0] if mask.any() else 0.0
    if omega <= 0 or span * omega < 3 * TWO_PI:
        raise ValueError("window after settling covers fewer than 3 periods")
    t = times[mask]
    basis = np.column_stack([np.cos(omega * t), np.sin(omega * t)])
    coef, *_ = np.linalg.lstsq(basis, series[mask].reshape(len(t), -1), rcond=None)
    return coef[0] - 1j * coef[1]


def steady_state_amplitude(traj: LinearTrajectory, omega: float | None = None, settle_fraction: float = 0.5) -> np.ndarray:
    """Per-agent complex gains relative to the input sinusoid.

    Least-squares projection of each ``x_i`` on ``cos``/``sin`` at ``omega``
    over the samples after ``settle_fraction`` of the run.
    """
    u = traj.input
    omega = u.omega if omega is None else omega
    z = _project(traj.times, traj.states, omega, settle_fraction)
    return z / (u.amplitude * np.exp(1j * u.phase))


# heading protocol


def heading_target(neighbor_headings: Sequence[float], current: float | None = None) -> float:
    """Circular mean of the neighbours' headings.

    When the resultant vanishes (antipodal cancellation) the current heading
    is returned unchanged; without a current heading that case raises.
    """
    if len(neighbor_headings) == 0:
        raise ValueError("heading target needs at least one neighbour")
    s = sum(math.sin(a) for a in neighbor_headings)
    c = sum(math.cos(a) for a in neighbor_headings)
    if math.hypot(s, c) < 1e-12:
        if current is None:
            raise ValueError("neighbour headings cancel; circular mean undefined")
        return current
    return math.atan2(s, c)


LEADER_MODES = ("rotate", "oscillate")


@dataclass(frozen=True)
class HeadingTrajectory:
    times: np.ndarray
    headings: np.ndarray
    leader_freq: float
    update_period: float
    rate: float
    graph: InteractionGraph = field(repr=False)
    seed: int | None = None
    leader_mode: str = "rotate"
    amplitude: float = 0.0

    @property
    def leader(self) -> int:
        return self.graph.leader

    @property
    def followers(self) -> np.ndarray:
        return np.array([i for i in range(self.graph.n_nodes) if i != self.graph.leader])


def _leader_signal(mode: str, leader_freq: float, amplitude: float):
    if mode not in LEADER_MODES:
        raise ValueError(f"unknown leader mode {mode!r}; expected one of {LEADER_MODES}")
    om = TWO_PI * leader_freq
    if mode == "rotate":
        return lambda t: _wrap1(om * t)
    return lambda t: amplitude * math.sin(om * t)


def _initial_headings(g: InteractionGraph, initial, rng: np.random.Generator, theta_l0: float) -> list[float]:
    n = g.n_nodes
    if isinstance(initial, str):
        if initial == "random":
            th = rng.uniform(-math.pi, math.pi, n)
        elif initial == "leader":
            th = np.full(n, theta_l0)
        else:
            raise ValueError(f"unknown initial condition {initial!r}")
    else:
        th = np.array(initial, dtype=float)
        if th.shape != (n,):
            raise ValueError(f"initial headings need shape ({n},)")
    th = [_wrap1(float(v)) for v in th]
    th[g.leader] = theta_l0
    return th


def _default_duration(leader_freq: float, duration: float | None) -> float:
    if duration is None:
        if leader_freq <= 0:
            raise ValueError("a static leader needs an explicit duration")
        return 4.0 / leader_freq
    if duration <= 0:
        raise ValueError("duration must be positive")
    return duration


def simulate_heading(
    g: InteractionGraph,
    leader_freq: float,
    omega0: float,
    dT: float = 0.1,
    duration: float | None = None,
    jitter: float = 0.1,
    seed: int | None = 0,
    sample_dt: float | None = None,
    leader_mode: str = "rotate",
    amplitude: float = 0.1,
    initial="random",
) -> HeadingTrajectory:
    """Asynchronous heading consensus driven by a rotating or oscillating leader.

    Each follower wakes at a random phase in ``[0, dT)`` and then every
    ``dT (1 + jitter eta)`` with ``eta`` uniform in ``[-1, 1]``. On waking it
    reads its neighbours' current headings (followers publish on update, the
    leader continuously) and applies
    ``theta_i += omega0 dT wrap(target - theta_i)``. Simultaneous wake-ups
    are processed in node order. ``duration`` defaults to four leader periods.
    """
    if not 0 <= jitter < 1:
        raise ValueError("jitter must lie in [0, 1)")
    if dT <= 0 or omega0 <= 0:
        raise ValueError("dT and omega0 must be positive")
    duration = _default_duration(leader_freq, duration)
    sample_dt = dT if sample_dt is None else sample_dt
    rng = np.random.default_rng(seed)
    lead = _leader_signal(leader_mode, leader_freq, amplitude)
    leader = g.leader
    theta = _initial_headings(g, initial, rng, lead(0.0))
    nbrs = g.neighbors()
    gain = omega0 * dT

    times = np.arange(int(math.floor(duration / sample_dt + 1e-9)) + 1) * sample_dt
    out = np.empty((len(times), g.n_nodes))
    heap = [(float(rng.uniform(0.0, dT)), i) for i in range(g.n_nodes) if i != leader]
    heapq.heapify(heap)
    oi = 0
    while oi < len(times):
        t, i = heap[0] if heap else (math.inf, -1)
        while oi < len(times) and times[oi] <= t:
            theta[leader] = lead(float(times[oi]))
            out[oi] = theta
            oi += 1
        if oi >= len(times):
            break
        heapq.heappop(heap)
        theta[leader] = lead(t)
        nb = nbrs[i]
        if nb:
            s = c = 0.0
            for j in nb:
                s += math.sin(theta[j])
                c += math.cos(theta[j])
            if math.hypot(s, c) >= 1e-12:
                theta[i] = _wrap1(theta[i] + gain * _wrap1(math.atan2(s, c) - theta[i]))
        heapq.heappush(heap, (t + dT * (1.0 + jitter * float(rng.uniform(-1.0, 1.0))), i))
    return HeadingTrajectory(times, out, leader_freq, dT, omega0, g, seed, leader_mode, amplitude)


def continuous_heading_limit(
    g: InteractionGraph,
    leader_freq: float,
    omega0: float,
    dt: float,
    duration: float | None = None,
    leader_mode: str = "rotate",
    amplitude: float = 0.1,
    initial="leader",
    seed: int | None = 0,
    sample_every: int = 1,
) -> HeadingTrajectory:
    """RK4 integration of ``dtheta_i/dt = omega0 wrap(mean_circ(theta_N(i)) - theta_i)``."""
    if dt <= 0 or dt > 0.1 / omega0 * (1 + 1e-12):
        raise ValueError("dt must satisfy 0 < dt <= 0.1/omega0")
    duration = _default_duration(leader_freq, duration)
    rng = np.random.default_rng(seed)
    lead = _leader_signal(leader_mode, leader_freq, amplitude)
    theta = np.array(_initial_headings(g, initial, rng, lead(0.0)))
    leader = g.leader
    adj = g.adjacency()
    fol = np.array([i for i in range(g.n_nodes) if i != leader])
    isolated = adj.sum(axis=1) == 0

    def rhs(t, th):
        th = th.copy()
        th[leader] = lead(t)
        s = adj @ np.sin(th)
        c = adj @ np.cos(th)
        d = omega0 * wrap(np.arctan2(s, c) - th)
        d[isolated | (np.hypot(s, c) < 1e-12)] = 0.0
        d[leader] = 0.0
        return d

    n_steps = int(round(duration / dt))
    out_t, out = [0.0], [theta.copy()]
    for step in range(n_steps):
        t = step * dt
        k1 = rhs(t, theta)
        k2 = rhs(t + 0.5 * dt, theta + 0.5 * dt * k1)
        k3 = rhs(t + 0.5 * dt, theta + 0.5 * dt * k2)
        k4 = rhs(t + dt, theta + dt * k3)
        theta = theta + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        theta[fol] = wrap(theta[fol])
        theta[leader] = lead(t + dt)
        if not np.all(np.isfinite(theta)):
            raise SimulationUnstable(f"non-finite heading at t={t + dt:g}")
        if (step + 1) % sample_every == 0:
            out_t.append((step + 1) * dt)
            out.append(theta.copy())
    return HeadingTrajectory(np.array(out_t), np.array(out), leader_freq, dt, omega0, g, seed, leader_mode, amplitude)


@dataclass(frozen=True)
class FollowMetrics:
    per_agent: np.ndarray
    collective: float
    polarization: float


def follow_metric(traj: HeadingTrajectory) -> FollowMetrics:
    """Time-averaged alignment of each follower with the leader, and polarization.

    ``H_i`` averages ``cos(theta_i - theta_L)`` over the whole run by the
    trapezoid rule, ``H^2 = sum_i H_i^2``, and the polarization averages
    ``|mean_j exp(i theta_j)|`` over all nodes.
    """
    t = traj.times
    if len(t) < 2:
        raise ValueError("trajectory needs at least two samples")
    span = t[-1] - t[0]
    lead = traj.headings[:, traj.leader]
    fol = traj.headings[:, traj.followers]
    h_i = trapezoid(np.cos(fol - lead[:, None]), t, axis=0) / span
    order = np.abs(np.exp(1j * traj.headings).mean(axis=1))
    pol = float(trapezoid(order, t) / span)
    return FollowMetrics(h_i, float(np.sum(h_i**2)), min(max(pol, 0.0), 1.0))


def heading_gains(traj: HeadingTrajectory, settle_fraction: float = 0.5) -> np.ndarray:
    """Follower gains relative to an oscillating leader (small-signal regime)."""
    if traj.leader_mode != "oscillate":
        raise ValueError("gains are defined for an oscillating leader")
    om = TWO_PI * traj.leader_freq
    z = _project(traj.times, traj.headings, om, settle_fraction)
    return z[traj.followers] / z[traj.leader]


def calibrate_omega0(threshold_hz: float = 0.05, n_followers: int = 10) -> float:
    """Relaxation rate that puts the all-to-all locking threshold at ``threshold_hz``.

    With every follower seeing the leader and the other ``N - 1`` followers
    in a common heading, the circular-mean pull toward the leader is at most
    ``asin(1 / (N - 1))``, so the swarm can keep up with a leader turning at
    angular rate ``Omega`` only while ``Omega <= omega0 asin(1 / (N - 1))``.
    """
    if threshold_hz <= 0:
        raise ValueError("threshold frequency must be positive")
    if n_followers < 2:
        raise ValueError("calibration needs at least two followers")
    return TWO_PI * threshold_hz / math.asin(1.0 / (n_followers - 1))


# output formats


def trajectory_csv(traj: HeadingTrajectory, header_lines: Sequence[str] = ()) -> str:
    order = [traj.leader] + traj.followers.tolist()
    lines = [f"# {h}" for h in header_lines]
    lines.append(f"# column order (graph nodes): {' '.join(map(str, order))}")
    lines.append(",".join(["t"] + [f"theta_{c}" for c in range(len(order))]))
    for t, row in zip(traj.times.tolist(), traj.headings[:, order].tolist()):
        lines.append(",".join([repr(t)] + [repr(v) for v in row]))
    return "\n".join(lines) + "\n"


def metrics_json(m: FollowMetrics, traj: HeadingTrajectory, extra: dict | None = None) -> str:
    deg = traj.graph.degrees()
    payload = {
        "H_i": m.per_agent.tolist(),
        "H2": m.collective,
        "H2_normalized": m.collective / traj.graph.n_followers,
        "polarization": m.polarization,
        "leader_freq_hz": traj.leader_freq,
        "k": int(deg[traj.followers].max()) if traj.graph.n_followers else 0,
        "omega0": traj.rate,
        "dT": traj.update_period,
        "seed": traj.seed,
    }
    if extra:
        payload.update(extra)
    return json.dumps(payload, indent=2) + "\n"
