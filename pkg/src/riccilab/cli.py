"""Configuration-driven command line: simulate / spectrum / verify.

Scenario configs are flat INI-style text (key = value under [sections]);
parsing normalizes values so that parse -> serialize -> parse is the
identity.  Outputs (manifest, trajectory CSV, monitor CSVs, spectrum and
verify reports) are documented in docs/FORMATS.md and are byte-identical
for identical config + seed on a fixed build.

Exit codes: 0 success, 1 verification failure, 2 configuration error,
3 numerical failure (NaN / positive-definiteness loss).
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import io
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, backend, estimates, flows, stability, synthesis, targets
from .errors import ConfigError, NumericalFailureError
from .geometry import SyntheticCurvature, flat_metric_state
from .grid import Grid, ScalarField, load_field, sup_norm

SYSTEMS = ("hrf", "warped", "invariant", "connection")
PRESETS = ("fixed_point", "sin_bump", "perturbed_fixed_point", "from_files")
MONITORS = ("sandwich", "gradient_decay")
SPECTRUM_BLOCKS = ("metric", "map", "oneform", "fiber", "threeform")


# ---------------------------------------------------------------------------
# scenario configuration


@dataclass
class ScenarioConfig:
    """Normalized scenario: every field is a plain python value."""

    system: str
    seed: int
    points: tuple
    periods: tuple
    preset: str
    initial: dict
    params: dict
    stepper: dict
    monitors: tuple
    spectrum: dict = field(default_factory=dict)

    def serialize(self) -> str:
        cp = configparser.ConfigParser()
        cp["scenario"] = {"system": self.system, "seed": str(self.seed)}
        cp["grid"] = {
            "points": ",".join(str(p) for p in self.points),
            "periods": ",".join(repr(p) for p in self.periods),
        }
        cp["initial"] = {"preset": self.preset, **{
            k: _fmt(v) for k, v in sorted(self.initial.items())
        }}
        cp["params"] = {k: _fmt(v) for k, v in sorted(self.params.items())}
        cp["stepper"] = {k: _fmt(v) for k, v in sorted(self.stepper.items())}
        cp["monitors"] = {"names": ",".join(self.monitors)}
        if self.spectrum:
            cp["spectrum"] = {k: _fmt(v) for k, v in sorted(self.spectrum.items())}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    def content_hash(self) -> str:
        return hashlib.sha256(self.serialize().encode()).hexdigest()


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _get(cp, section, key, cast, default=None, required=False):
    full = f"{section}.{key}"
    if not cp.has_option(section, key):
        if required:
            raise ConfigError(full, "missing required key")
        return default
    raw = cp.get(section, key)
    try:
        if cast is bool:
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        return cast(raw)
    except (ValueError, TypeError):
        raise ConfigError(full, f"cannot parse {raw!r} as {cast.__name__}")


def _tuple_of(cast):
    def parse(raw):
        return tuple(cast(x) for x in raw.split(",") if x.strip())

    return parse


_PARAM_KEYS = {
    "c": float, "s": float, "lam": float, "m": int, "mu": float,
    "phi_avg0": float, "gauge": str, "synth": str, "synth_k": float,
    "fiber_rank": int, "target_dim": int, "normalized": bool,
}
_STEPPER_KEYS = {
    "dt": float, "cfl": float, "t_end": float, "record_every": int,
}
_INITIAL_KEYS = {
    "amplitude": float, "mode": int, "axis": int, "offset": float,
    "kmax": int, "block": str, "g_file": str, "phi_file": str,
    "a_file": str, "gg_file": str, "h_file": str,
}
_SPECTRUM_KEYS = {
    "block": str, "k": int, "lam": float, "synth_k": float, "synth": str,
    "fiber_rank": int, "target_dim": int, "trace_free": bool, "shift": float,
}


def parse_config(text: str) -> ScenarioConfig:
    cp = configparser.ConfigParser()
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError("<file>", f"unparseable config: {exc}")
    system = _get(cp, "scenario", "system", str, required=True)
    if system not in SYSTEMS:
        raise ConfigError("scenario.system", f"unknown system {system!r}")
    seed = _get(cp, "scenario", "seed", int, default=0)
    points = _get(cp, "grid", "points", _tuple_of(int), required=True)
    periods = _get(
        cp, "grid", "periods", _tuple_of(float),
        default=tuple(2 * np.pi for _ in points),
    )
    try:
        Grid(points, periods)
    except ValueError as exc:
        raise ConfigError("grid.points", str(exc))
    preset = _get(cp, "initial", "preset", str, default="fixed_point")
    if preset not in PRESETS:
        raise ConfigError("initial.preset", f"unknown preset {preset!r}")

    def read_section(name, keys):
        out = {}
        if cp.has_section(name):
            for key in cp.options(name):
                if key == "preset" and name == "initial":
                    continue
                if key == "names" and name == "monitors":
                    continue
                if key not in keys:
                    raise ConfigError(f"{name}.{key}", "unknown key")
                out[key] = _get(cp, name, key, keys[key])
        return out

    initial = read_section("initial", _INITIAL_KEYS)
    params = read_section("params", _PARAM_KEYS)
    stepper = read_section("stepper", _STEPPER_KEYS)
    spectrum = read_section("spectrum", _SPECTRUM_KEYS)
    monitors = ()
    if cp.has_option("monitors", "names"):
        monitors = tuple(
            x.strip() for x in cp.get("monitors", "names").split(",") if x.strip()
        )
        for mon in monitors:
            if mon not in MONITORS:
                raise ConfigError("monitors.names", f"unknown monitor {mon!r}")
            if system != "warped":
                raise ConfigError(
                    "monitors.names", f"monitor {mon!r} applies to warped runs"
                )
    return ScenarioConfig(
        system=system, seed=seed, points=points, periods=periods,
        preset=preset, initial=initial, params=params, stepper=stepper,
        monitors=monitors, spectrum=spectrum,
    )


def load_config(path) -> ScenarioConfig:
    return parse_config(Path(path).read_text())


# ---------------------------------------------------------------------------
# scenario assembly


def _build_params(cfg: ScenarioConfig, grid: Grid) -> flows.FlowParams:
    p = dict(cfg.params)
    synth = None
    if p.pop("synth", "none") == "space_form":
        synth = SyntheticCurvature(K=p.pop("synth_k", -1.0), n=grid.dim)
    else:
        p.pop("synth_k", None)
    gauge = None
    if p.pop("gauge", "none") == "reference":
        gauge = flat_metric_state(grid)
    p.pop("normalized", None)
    p.pop("fiber_rank", None)
    p.pop("target_dim", None)
    lam = p.pop("lam", synth.lam if synth is not None else 0.0)
    if synth is not None and "s" not in p:
        p["s"] = -2.0 * synth.lam
    return flows.FlowParams(lam=lam, gauge=gauge, synth=synth, **p)


def build_initial_state(cfg: ScenarioConfig):
    """State + params from a normalized scenario config (deterministic by seed)."""
    grid = Grid(cfg.points, cfg.periods)
    rng = np.random.default_rng(cfg.seed)
    params = _build_params(cfg, grid)
    init = dict(cfg.initial)
    amplitude = init.get("amplitude", 0.1)
    mode = init.get("mode", 1)
    axis = init.get("axis", 0)
    kmax = init.get("kmax", 2)
    m0 = flat_metric_state(grid)
    system = cfg.system

    if cfg.preset == "from_files":
        return _state_from_files(cfg, grid, params), params

    if system == "warped":
        offset = init.get("offset", params.phi_avg0)
        if cfg.preset == "fixed_point":
            phi = ScalarField(grid, np.full(grid.shape, params.phi_avg0))
        elif cfg.preset == "sin_bump":
            phi = synthesis.mode_scalar(grid, axis, mode, amplitude, offset)
        else:
            phi = ScalarField(
                grid,
                params.phi_avg0
                + synthesis.smooth_scalar_data(grid, rng, kmax, amplitude),
            )
        return flows.WarpedState(g=m0.g.copy(), phi=phi), params

    if system == "hrf":
        k = cfg.params.get("target_dim", 1)
        phi0 = targets.constant_map(grid, targets.euclidean(k), np.zeros(k))
        if cfg.preset == "sin_bump":
            data = phi0.data.copy()
            data[..., 0] += synthesis.mode_scalar(grid, axis, mode, amplitude).data
            phi0 = targets.MapField(grid, data, target=phi0.target)
        elif cfg.preset == "perturbed_fixed_point":
            data = phi0.data.copy()
            for comp in range(k):
                data[..., comp] += synthesis.smooth_scalar_data(
                    grid, rng, kmax, amplitude
                )
            phi0 = targets.MapField(grid, data, target=phi0.target)
        return flows.HRFState(g=m0.g.copy(), phi=phi0), params

    if system == "invariant":
        N = cfg.params.get("fiber_rank", 2)
        A = synthesis.zero_vec_oneform(grid, N)
        G = synthesis.constant_fibermetric(grid, np.eye(N))
        if cfg.preset == "perturbed_fixed_point":
            block = init.get("block", "A")
            if block == "A":
                A = synthesis.smooth_vec_oneform(grid, rng, N, kmax, amplitude)
            elif block == "G":
                G = synthesis.smooth_fibermetric(grid, rng, N, kmax, amplitude)
            else:
                raise ConfigError("initial.block", f"unknown block {block!r}")
        elif cfg.preset == "sin_bump":
            A = synthesis.zero_vec_oneform(grid, N)
            A.data[..., axis, 0] = synthesis.mode_scalar(
                grid, axis, mode, amplitude
            ).data
        return flows.InvariantState(g=m0.g.copy(), A=A, G=G), params

    # connection
    if cfg.preset == "fixed_point":
        H = synthesis.constant_threeform(grid, 0.0)
    elif cfg.preset == "sin_bump":
        H = synthesis.constant_threeform(grid, amplitude)
    else:
        H = synthesis.smooth_threeform(grid, rng, kmax, amplitude)
    return flows.ConnectionState(g=m0.g.copy(), H=H), params


def _state_from_files(cfg, grid, params):
    init = cfg.initial

    def want(key):
        if key not in init:
            raise ConfigError(f"initial.{key}", "required for preset from_files")
        f = load_field(init[key])
        if f.grid != grid:
            raise ConfigError(f"initial.{key}", "field grid does not match [grid]")
        return f

    if cfg.system == "warped":
        return flows.WarpedState(g=want("g_file"), phi=want("phi_file"))
    if cfg.system == "connection":
        return flows.ConnectionState(g=want("g_file"), H=want("h_file"))
    if cfg.system == "invariant":
        return flows.InvariantState(g=want("g_file"), A=want("a_file"), G=want("gg_file"))
    raise ConfigError("initial.preset", f"from_files unsupported for {cfg.system}")


# ---------------------------------------------------------------------------
# outputs


def _state_checksum(state) -> str:
    sha = hashlib.sha256()
    for name in sorted(state.arrays()):
        sha.update(name.encode())
        sha.update(np.ascontiguousarray(state.arrays()[name]).tobytes())
    return sha.hexdigest()


def write_trajectory_csv(traj, path):
    names = sorted(traj.states[0].arrays())
    header = ["step", "time"]
    for n in names:
        header += [f"{n}_sup", f"{n}_l2flat"]
    header.append("state_sha256")
    lines = [",".join(header)]
    for i, st in enumerate(traj.states):
        row = [str(i), repr(float(traj.times[i]))]
        for n in names:
            arr = st.arrays()[n]
            row.append(repr(float(np.max(np.abs(arr)))))
            row.append(repr(float(np.sqrt(np.mean(arr * arr)))))
        row.append(_state_checksum(st))
        lines.append(",".join(row))
    Path(path).write_text("\n".join(lines) + "\n")


def write_monitor_csv(monitor, path):
    lines = ["t,observed_min,observed_max,lower_env,upper_env,margin,violated"]
    for row in monitor.rows():
        lines.append(
            ",".join(repr(float(x)) if not isinstance(x, bool) else str(int(x))
                     for x in row)
        )
    Path(path).write_text("\n".join(lines) + "\n")


def write_manifest(cfg: ScenarioConfig, out_dir: Path, extra=None):
    manifest = {
        "config_sha256": cfg.content_hash(),
        "package_version": __version__,
        "backend": backend.BACKEND,
        "numpy_version": np.__version__,
        "seed": cfg.seed,
    }
    if extra:
        manifest.update(extra)
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# subcommands


def cmd_simulate(cfg: ScenarioConfig, out_dir: Path) -> int:
    state, params = build_initial_state(cfg)
    stepper = flows.StepperConfig(**cfg.stepper) if cfg.stepper else flows.StepperConfig()
    rhs_kw = {}
    if cfg.system == "warped":
        rhs_kw["normalized"] = cfg.params.get("normalized", True)
    try:
        traj = flows.run_flow(state, params, stepper, **rhs_kw)
    except NumericalFailureError as exc:
        dump = {
            "error": str(exc),
            "time": exc.time,
            "step": exc.step,
            "diagnostics": {k: str(v) for k, v in exc.diagnostics.items()},
        }
        (out_dir / "failure.json").write_text(json.dumps(dump, indent=2) + "\n")
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    write_trajectory_csv(traj, out_dir / "trajectory.csv")
    monitor_files = []
    for name in cfg.monitors:
        mon = (
            estimates.monitor_sandwich(traj)
            if name == "sandwich"
            else estimates.monitor_gradient_decay(traj)
        )
        fname = f"monitor_{name}.csv"
        write_monitor_csv(mon, out_dir / fname)
        monitor_files.append(fname)
    write_manifest(cfg, out_dir, {
        "samples": len(traj),
        "dt": traj.dt,
        "degenerated": traj.degenerated,
        "monitors": monitor_files,
    })
    print(f"simulate: {len(traj)} samples, dt={traj.dt:.3e}, out={out_dir}")
    return 0


def cmd_spectrum(cfg: ScenarioConfig, out_dir: Path) -> int:
    spec = dict(cfg.spectrum)
    block = spec.pop("block", None)
    if block is None:
        raise ConfigError("spectrum.block", "missing required key")
    if block not in SPECTRUM_BLOCKS:
        raise ConfigError("spectrum.block", f"unknown block {block!r}")
    grid = Grid(cfg.points, cfg.periods)
    k = spec.pop("k", 10)
    synth = None
    if spec.pop("synth", "none") == "space_form":
        synth = SyntheticCurvature(K=spec.pop("synth_k", -1.0), n=grid.dim)
    else:
        spec.pop("synth_k", None)
    lam = spec.pop("lam", synth.lam if synth is not None else 0.0)
    op = stability.make_block_operator(block, grid, lam=lam, synth=synth, **spec)
    report = stability.spectrum(op, k=k)
    report.meta["system"] = cfg.system
    text = report.serialize()
    (out_dir / "spectrum_report.txt").write_text(text)
    write_manifest(cfg, out_dir, {"block": block, "verdict": report.verdict})
    print(text, end="")
    return 0


def cmd_verify(suite: str, out_dir: Path, fast: bool = True) -> int:
    from . import verification

    try:
        results = verification.run_suite(suite, fast=fast)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for r in results:
        print(r.line())
    report = {
        "suite": suite,
        "all_passed": all(r.passed for r in results),
        "checks": [r.as_dict() for r in results],
    }
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "verify_report.json").write_text(json.dumps(report, indent=2) + "\n")
    return 0 if report["all_passed"] else 1


# ---------------------------------------------------------------------------
# entry point


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="riccilab",
        description="Coupled Ricci flow laboratory: simulate, spectra, verification",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="integrate a configured scenario")
    p_sim.add_argument("--config", required=True)
    p_sim.add_argument("--out", default="out")
    p_sim.add_argument("--seed", type=int, default=None)

    p_spec = sub.add_parser("spectrum", help="eigenvalues of a linearization block")
    p_spec.add_argument("--config", required=True)
    p_spec.add_argument("--out", default="out")

    p_ver = sub.add_parser("verify", help="run a verification suite")
    p_ver.add_argument(
        "--suite", default="all",
        help="identities | linearization | estimates | spectra | all",
    )
    p_ver.add_argument("--out", default="out")
    p_ver.add_argument(
        "--full", action="store_true",
        help="run checks at full acceptance sizes (slower)",
    )

    args = parser.parse_args(argv)
    out_dir = Path(args.out)

    if args.command == "verify":
        return cmd_verify(args.suite, out_dir, fast=not args.full)

    try:
        cfg = load_config(args.config)
        if args.command == "simulate" and args.seed is not None:
            cfg.seed = args.seed
        out_dir.mkdir(parents=True, exist_ok=True)
        if args.command == "simulate":
            return cmd_simulate(cfg, out_dir)
        return cmd_spectrum(cfg, out_dir)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
