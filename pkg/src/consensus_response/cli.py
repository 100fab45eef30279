"""Command-line front end.

Every run is described by a flat ``key=value`` configuration: an optional
file (``--config`` or ``--recipe``) overridden by command-line flags. The
resolved configuration is embedded in every output, so any artifact can be
replayed with ``--config ARTIFACT``.

Exit status: 0 on success, 1 on a computation error, 2 on a configuration
error (reported before any computation starts).
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
import tempfile
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any, Callable

import numpy as np

from consensus_response import __version__, netgen, spectral, structopt, timesim, weightopt
from consensus_response._parallel import THREADS_ENV, resolve_threads

COMMANDS = ("generate", "spectrum", "kstar", "fit", "optimize-weights", "anneal", "simulate", "calibrate")
CONFIG_MARK = "config:"


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration (exit status 2)."""


def _bool(text: str) -> bool:
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _int(text: str) -> int:
    val = float(text)
    if not val.is_integer():
        raise ValueError(f"not an integer: {text!r}")
    return int(val)


def _starts(text: str) -> tuple[str, ...]:
    return tuple(s.strip() for s in str(text).split(",") if s.strip())


@dataclass(frozen=True)
class Key:
    parse: Callable[[str], Any]
    default: Any
    commands: tuple[str, ...]
    help: str
    replay: bool = True


_ALL = COMMANDS
_GRID = ("spectrum", "kstar")

KEYS: dict[str, Key] = {
    "model": Key(str, "ring", ("generate", "spectrum", "kstar", "simulate"), "ring | mesh | caveman | random"),
    "n": Key(_int, None, ("generate", "spectrum", "kstar", "optimize-weights", "anneal", "simulate", "calibrate"),
             "total node count, leader included"),
    "k": Key(_int, None, ("generate", "spectrum", "simulate"), "degree"),
    "leader": Key(_int, 0, ("generate", "spectrum", "simulate"), "leader node index"),
    "graph": Key(str, None, ("spectrum", "simulate"), "edge-list file used instead of model/n/k"),
    "seed": Key(_int, 0, ("generate", "spectrum", "kstar", "optimize-weights", "anneal", "simulate"), "master seed"),
    "samples": Key(_int, 1, ("kstar",), "random-graph samples per degree"),
    "omega": Key(float, None, ("optimize-weights", "anneal"), "angular frequency (units of omega0)"),
    "omega_lo": Key(float, 1e-4, _GRID, "lowest grid frequency"),
    "omega_hi": Key(float, 1.0, _GRID, "highest grid frequency"),
    "ppd": Key(_int, spectral.DEFAULT_PPD, _GRID, "grid points per decade (log) or in total (linear)"),
    "scale": Key(str, "log", _GRID, "log | linear"),
    "omega0": Key(float, 1.0, ("spectrum", "kstar", "optimize-weights", "anneal", "simulate"), "relaxation rate"),
    "method": Key(str, "lu", ("spectrum",), "lu | modal"),
    "gains": Key(_bool, False, ("spectrum",), "also write per-agent complex gains"),
    "input": Key(str, None, ("fit",), "k* curve CSV to fit"),
    "window_lo": Key(float, None, ("fit",), "fit window lower edge"),
    "window_hi": Key(float, None, ("fit",), "fit window upper edge"),
    "min_points": Key(_int, 5, ("fit",), "minimum usable points in the window"),
    "max_iter": Key(_int, 5000, ("optimize-weights",), "iteration budget per start"),
    "step0": Key(float, 1e-2, ("optimize-weights",), "initial step size"),
    "tol": Key(float, 1e-8, ("optimize-weights",), "projected-gradient stopping tolerance"),
    "noise": Key(float, 0.01, ("optimize-weights",), "relative start perturbation"),
    "starts": Key(_starts, weightopt.DEFAULT_STARTS, ("optimize-weights",), "comma list: uniform, exp<l>"),
    "restarts": Key(_int, 8, ("anneal",), "independent annealing chains"),
    "t0": Key(float, structopt.Schedule().t0, ("anneal",), "initial temperature"),
    "cooling": Key(float, structopt.Schedule().cooling, ("anneal",), "geometric cooling factor per step"),
    "steps": Key(_int, structopt.Schedule().steps, ("anneal",), "steps per chain"),
    "leader_freq": Key(float, None, ("simulate",), "leader frequency in Hz"),
    "dt_update": Key(float, 0.1, ("simulate",), "follower update period in seconds"),
    "duration": Key(float, None, ("simulate",), "run length in seconds (default: 4 leader periods)"),
    "jitter": Key(float, 0.1, ("simulate",), "relative timer jitter"),
    "sample_dt": Key(float, None, ("simulate",), "output sampling interval (default: update period)"),
    "leader_mode": Key(str, "rotate", ("simulate",), "rotate | oscillate"),
    "amplitude": Key(float, 0.1, ("simulate",), "oscillation amplitude in radians"),
    "initial": Key(str, "random", ("simulate",), "random | leader"),
    "threshold_hz": Key(float, 0.05, ("calibrate", "simulate"), "all-to-all locking threshold"),
    "calibrate": Key(_bool, False, ("simulate",), "derive omega0 from threshold_hz"),
    "format": Key(str, None, _ALL, "csv | json (default depends on the command)"),
    "output": Key(str, None, _ALL, "output path (default: stdout)", replay=False),
    "trace_output": Key(str, None, ("optimize-weights", "anneal"), "optional trace CSV path", replay=False),
    "threads": Key(_int, None, _ALL, f"worker cap (env {THREADS_ENV})", replay=False),
}

DEFAULT_FORMAT = {
    "generate": "txt",
    "spectrum": "csv",
    "kstar": "csv",
    "fit": "json",
    "optimize-weights": "csv",
    "anneal": "json",
    "simulate": "json",
    "calibrate": "json",
}


def _flag(key: str) -> str:
    return "--" + key.replace("_", "-")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="consensus-response",
        description="Frequency response, optimisation and simulation of leader-follower consensus networks.",
    )
    p.add_argument("command", nargs="?", choices=COMMANDS, help="command to run (may come from --config)")
    p.add_argument("--config", help="key=value file or a previous output artifact")
    p.add_argument("--recipe", help="name of a bundled recipe (e.g. ring_kstar)")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    for key, spec in KEYS.items():
        p.add_argument(_flag(key), dest=key, default=argparse.SUPPRESS, metavar=key.upper(), help=spec.help)
    return p


def recipe_text(name: str) -> str:
    fname = name if name.endswith(".conf") else f"{name}.conf"
    ref = resources.files("consensus_response") / "recipes" / fname
    if not ref.is_file():
        available = sorted(r.name for r in (resources.files("consensus_response") / "recipes").iterdir())
        raise ConfigError(f"unknown recipe {name!r}; available: {', '.join(available)}")
    return ref.read_text()


def parse_kv(text: str, origin: str) -> dict[str, str]:
    """Read ``key=value`` lines; also accepts artifacts with an embedded config."""
    stripped = text.lstrip()
    if stripped.startswith("{"):
        try:
            payload = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{origin}: invalid JSON: {exc}") from None
        if "config" not in payload:
            raise ConfigError(f"{origin}: JSON artifact has no embedded config")
        return {str(k): str(v) for k, v in payload["config"].items()}
    out: dict[str, str] = {}
    embedded = any(ln.startswith(f"# {CONFIG_MARK}") for ln in text.splitlines())
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if embedded:
            if not line.startswith(f"# {CONFIG_MARK}"):
                continue
            line = line[len(f"# {CONFIG_MARK}") :].strip()
        elif not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{origin}:{lineno}: expected key=value, got {raw!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = val
    return out


def _format_value(val) -> str:
    if isinstance(val, bool):
        return "true" if val else "false"
    if isinstance(val, (tuple, list)):
        return ",".join(map(str, val))
    if isinstance(val, float):
        return repr(val)
    return str(val)


def parse_config(argv: list[str] | None = None) -> dict[str, Any]:
    """Resolve the run configuration: defaults < file < flags.

    Raises :class:`ConfigError` for unknown keys, keys that do not apply to
    the command, malformed values and domain violations.
    """
    ns = build_parser().parse_args(argv)
    raw: dict[str, str] = {}
    if ns.recipe and ns.config:
        raise ConfigError("use either --recipe or --config, not both")
    if ns.recipe:
        raw.update(parse_kv(recipe_text(ns.recipe), f"recipe {ns.recipe}"))
    if ns.config:
        path = Path(ns.config)
        if not path.is_file():
            raise ConfigError(f"config file {ns.config} not found")
        raw.update(parse_kv(path.read_text(), ns.config))
    file_command = raw.pop("command", None)
    command = ns.command or file_command
    if command is None:
        raise ConfigError("no command given (positional argument or 'command' key)")
    if command not in COMMANDS:
        raise ConfigError(f"unknown command {command!r}")
    if ns.command and file_command and ns.command != file_command:
        raise ConfigError(f"command {ns.command!r} conflicts with {file_command!r} from the config file")
    raw.pop("version", None)
    for key in list(raw):
        if key not in KEYS:
            raise ConfigError(f"unknown config key {key!r}")
    flags = {k: v for k, v in vars(ns).items() if k in KEYS}
    merged = {**raw, **flags}
    cfg: dict[str, Any] = {"command": command}
    for key, spec in KEYS.items():
        if command not in spec.commands:
            if key in merged:
                src = _flag(key) if key in flags else f"key {key!r}"
                raise ConfigError(f"{src} does not apply to command {command!r}")
            continue
        if key in merged:
            try:
                cfg[key] = spec.parse(merged[key])
            except (TypeError, ValueError) as exc:
                src = _flag(key) if key in flags else f"key {key!r}"
                raise ConfigError(f"{src}: {exc}") from None
        else:
            cfg[key] = spec.default
    if cfg.get("format") is None:
        cfg["format"] = DEFAULT_FORMAT[command]
    validate(cfg)
    return cfg


def _require(cfg, *keys):
    for key in keys:
        if cfg.get(key) is None:
            raise ConfigError(f"{_flag(key)} is required for {cfg['command']}")


def _model_spec(cfg) -> netgen.ModelSpec:
    try:
        return netgen.ModelSpec(cfg["model"], cfg["n"], cfg.get("leader", 0))
    except netgen.GraphError as exc:
        raise ConfigError(str(exc)) from None


def validate(cfg: dict[str, Any]) -> None:
    """Domain checks that need no computation."""
    cmd = cfg["command"]
    allowed = {"generate": ("txt",), "fit": ("json",), "calibrate": ("json",), "anneal": ("json",)}
    fmts = allowed.get(cmd, ("csv", "json"))
    if cfg["format"] not in fmts:
        raise ConfigError(f"--format {cfg['format']!r} is not available for {cmd}; use {' | '.join(fmts)}")
    if cfg.get("threads") is not None and cfg["threads"] < 1:
        raise ConfigError("--threads must be >= 1")
    for key in ("omega0", "dt_update", "threshold_hz", "step0", "t0"):
        if cfg.get(key) is not None and not cfg[key] > 0:
            raise ConfigError(f"{_flag(key)} must be positive")
    if cmd in ("generate", "spectrum", "simulate") and not cfg.get("graph"):
        _require(cfg, "n", "k")
        spec = _model_spec(cfg)
        try:
            spec.check_degree(cfg["k"])
            if cfg["model"] == "ring" and cfg["k"] % 2 and cfg["k"] != cfg["n"] - 1:
                raise netgen.GraphError(f"ring degree must be even, got k={cfg['k']}")
        except netgen.GraphError as exc:
            raise ConfigError(f"--k: {exc}") from None
    if cmd in _GRID:
        if cfg["scale"] not in ("log", "linear"):
            raise ConfigError("--scale must be log or linear")
        if cfg["omega_hi"] < cfg["omega_lo"] or cfg["omega_lo"] < 0:
            raise ConfigError("need 0 <= omega_lo <= omega_hi")
        if cfg["scale"] == "log" and cfg["omega_lo"] <= 0:
            raise ConfigError("a log grid needs omega_lo > 0")
        if cfg["ppd"] < 1:
            raise ConfigError("--ppd must be >= 1")
    if cmd == "spectrum" and cfg["method"] not in ("lu", "modal"):
        raise ConfigError("--method must be lu or modal")
    if cmd == "kstar":
        _require(cfg, "n")
        _model_spec(cfg)
        if cfg["samples"] < 1:
            raise ConfigError("--samples must be >= 1")
    if cmd == "fit":
        _require(cfg, "input")
        lo, hi = cfg["window_lo"], cfg["window_hi"]
        if lo is not None and hi is not None and hi < lo:
            raise ConfigError("fit window needs window_lo <= window_hi")
    if cmd == "optimize-weights":
        _require(cfg, "n", "omega")
        if cfg["n"] < 8:
            raise ConfigError("--n must be >= 8 for weight optimisation")
        if not cfg["omega"] > 0:
            raise ConfigError("--omega must be > 0")
        try:
            for name in cfg["starts"]:
                weightopt._start_shape(name, np.arange(1, 3))
        except ValueError as exc:
            raise ConfigError(f"--starts: {exc}") from None
    if cmd == "anneal":
        _require(cfg, "n", "omega")
        if not 2 <= cfg["n"] <= 64:
            raise ConfigError("--n must lie in [2, 64] for annealing")
        if not cfg["omega"] > 0:
            raise ConfigError("--omega must be > 0")
        try:
            structopt.Schedule(cfg["t0"], cfg["cooling"], cfg["steps"])
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if cfg["restarts"] < 1:
            raise ConfigError("--restarts must be >= 1")
    if cmd == "simulate":
        _require(cfg, "leader_freq")
        if cfg["leader_mode"] not in timesim.LEADER_MODES:
            raise ConfigError(f"--leader-mode must be one of {', '.join(timesim.LEADER_MODES)}")
        if cfg["initial"] not in ("random", "leader"):
            raise ConfigError("--initial must be random or leader")
        if not 0 <= cfg["jitter"] < 1:
            raise ConfigError("--jitter must lie in [0, 1)")
        if cfg["leader_freq"] < 0:
            raise ConfigError("--leader-freq must be >= 0")
        if cfg["leader_freq"] == 0 and cfg["duration"] is None:
            raise ConfigError("a static leader needs --duration")
    if cmd == "calibrate":
        _require(cfg, "n")
        if cfg["n"] < 3:
            raise ConfigError("--n must be >= 3 (at least two followers)")


def embedded_config(cfg: dict[str, Any]) -> dict[str, str]:
    out = {"command": cfg["command"]}
    for key, spec in KEYS.items():
        if key in cfg and spec.replay and cfg[key] is not None:
            out[key] = _format_value(cfg[key])
    return out


def _header(cfg) -> list[str]:
    lines = [f"consensus-response {__version__}"]
    lines += [f"{CONFIG_MARK} {k}={v}" for k, v in embedded_config(cfg).items()]
    return lines


def _json_with_config(text: str, cfg) -> str:
    payload = json.loads(text)
    payload["config"] = embedded_config(cfg)
    payload["version"] = __version__
    return json.dumps(payload, indent=2) + "\n"


def write_atomic(path: str | None, text: str) -> None:
    """Write via a temporary file in the target directory, then rename."""
    if path is None or path == "-":
        sys.stdout.write(text)
        return
    target = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{target.name}.", suffix=".tmp", dir=target.parent or Path("."))
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, target)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# command implementations


def _graph(cfg) -> netgen.InteractionGraph:
    if cfg.get("graph"):
        g = netgen.read_edge_list(cfg["graph"])
        return g
    return _model_spec(cfg).build(cfg["k"], seed=cfg["seed"])


def _grid(cfg) -> np.ndarray:
    return spectral.frequency_grid(cfg["omega_lo"], cfg["omega_hi"], cfg["ppd"], cfg["scale"])


def run_generate(cfg) -> str:
    return netgen.write_edge_list(_graph(cfg), None, _header(cfg))


def run_spectrum(cfg) -> str:
    g = _graph(cfg)
    sys_ = netgen.build_consensus_system(g, cfg["omega0"])
    spec = spectral.response_spectrum(sys_, _grid(cfg), cfg["method"], cfg["gains"], cfg["threads"])
    if cfg["format"] == "csv":
        return spectral.spectrum_csv(spec, _header(cfg))
    payload = {
        "omega": spec.omegas.tolist(),
        "h_squared": spec.h_squared.tolist(),
    }
    if cfg["gains"]:
        payload["gains_re"] = [p.gains.real.tolist() for p in spec.points]
        payload["gains_im"] = [p.gains.imag.tolist() for p in spec.points]
    return _json_with_config(json.dumps(payload), cfg)


def run_kstar(cfg) -> str:
    model = _model_spec(cfg)
    curve = spectral.kstar_curve(model, _grid(cfg), cfg["samples"], cfg["omega0"], cfg["seed"], cfg["threads"])
    if cfg["format"] == "csv":
        extra = [f"degrees={' '.join(map(str, curve.degrees))}"]
        return spectral.kstar_csv(curve, _header(cfg) + extra)
    payload = {
        "omega": curve.omegas.tolist(),
        "k_star": curve.k_star.tolist(),
        "h_squared": [e.h_squared for e in curve.entries],
        "degrees": list(curve.degrees),
    }
    return _json_with_config(json.dumps(payload), cfg)


def run_fit(cfg) -> str:
    curve = spectral.read_kstar_csv(cfg["input"])
    om = curve.omegas
    lo = cfg["window_lo"] if cfg["window_lo"] is not None else float(om.min())
    hi = cfg["window_hi"] if cfg["window_hi"] is not None else float(om.max())
    k0, gamma = spectral.fit_power_law(curve, (lo, hi), cfg["min_points"])
    return _json_with_config(spectral.fit_json(k0, gamma, (lo, hi)), cfg)


def run_optimize_weights(cfg) -> str:
    prof, trace = weightopt.optimize_weight_profile(
        cfg["n"],
        cfg["omega"],
        omega0=cfg["omega0"],
        step0=cfg["step0"],
        max_iter=cfg["max_iter"],
        tol=cfg["tol"],
        seed=cfg["seed"],
        noise=cfg["noise"],
        starts=cfg["starts"],
        threads=cfg["threads"],
    )
    if cfg["trace_output"]:
        write_atomic(cfg["trace_output"], weightopt.trace_csv(trace, _header(cfg)))
    if cfg["format"] == "csv":
        info = [
            f"h_squared={trace.iterations[-1].h_squared!r}",
            f"k_star={weightopt.effective_degree(prof)}",
            f"status={trace.status}",
            f"start={trace.start}",
        ]
        return weightopt.profile_csv(prof, _header(cfg) + info)
    extra = {"distance": prof.distances.tolist(), "weight": prof.coeffs.tolist()}
    return _json_with_config(weightopt.summary_json(prof, trace, extra), cfg)


def run_anneal(cfg) -> str:
    schedule = structopt.Schedule(cfg["t0"], cfg["cooling"], cfg["steps"])
    res = structopt.anneal_topology(
        cfg["n"], cfg["omega"], schedule, cfg["seed"], cfg["restarts"], cfg["omega0"], cfg["threads"]
    )
    if cfg["trace_output"]:
        write_atomic(cfg["trace_output"], structopt.trace_csv(res, _header(cfg)))
    return _json_with_config(structopt.result_json(res), cfg)


def run_simulate(cfg) -> str:
    g = _graph(cfg)
    omega0 = cfg["omega0"]
    if cfg["calibrate"]:
        omega0 = timesim.calibrate_omega0(cfg["threshold_hz"], g.n_followers)
    traj = timesim.simulate_heading(
        g,
        cfg["leader_freq"],
        omega0,
        dT=cfg["dt_update"],
        duration=cfg["duration"],
        jitter=cfg["jitter"],
        seed=cfg["seed"],
        sample_dt=cfg["sample_dt"],
        leader_mode=cfg["leader_mode"],
        amplitude=cfg["amplitude"],
        initial=cfg["initial"],
    )
    if cfg["format"] == "csv":
        return timesim.trajectory_csv(traj, _header(cfg) + [f"omega0={omega0!r}"])
    metrics = timesim.follow_metric(traj)
    extra = {"k": cfg["k"]} if cfg.get("k") is not None else None
    return _json_with_config(timesim.metrics_json(metrics, traj, extra), cfg)


def run_calibrate(cfg) -> str:
    n_followers = cfg["n"] - 1
    omega0 = timesim.calibrate_omega0(cfg["threshold_hz"], n_followers)
    payload = {
        "omega0": omega0,
        "threshold_hz": cfg["threshold_hz"],
        "n_followers": n_followers,
        "lock_rate": omega0 * math.asin(1.0 / (n_followers - 1)),
    }
    return _json_with_config(json.dumps(payload), cfg)


RUNNERS = {
    "generate": run_generate,
    "spectrum": run_spectrum,
    "kstar": run_kstar,
    "fit": run_fit,
    "optimize-weights": run_optimize_weights,
    "anneal": run_anneal,
    "simulate": run_simulate,
    "calibrate": run_calibrate,
}


def run(cfg: dict[str, Any]) -> int:
    try:
        cfg = dict(cfg)
        cfg["threads"] = resolve_threads(cfg.get("threads"))
        text = RUNNERS[cfg["command"]](cfg)
        write_atomic(cfg.get("output"), text)
    except (ArithmeticError, ValueError, RuntimeError, OSError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


def main(argv: list[str] | None = None) -> int:
    try:
        cfg = parse_config(argv)
    except ConfigError as exc:
        print(f"consensus-response: config error: {exc}", file=sys.stderr)
        return 2
    except SystemExit as exc:
        return int(exc.code or 0)
    return run(cfg)


if __name__ == "__main__":
    raise SystemExit(main())
