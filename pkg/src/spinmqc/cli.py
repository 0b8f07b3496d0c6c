"""Command-line front end: ``spinmqc {mqc,echo,zeno,analytic,validate}``.

Settings come from built-in defaults, then an optional preset, then an INI
config file (``--config``), then command-line flags; later sources win.
Quantities at this boundary are in microseconds, angstrom, degrees and kHz;
they are converted to seconds, radians and rad/s only where the run is built.

Exit codes: 0 ok, 2 configuration error, 3 numerical-health failure,
4 validation failure.
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import hashlib
import json
import math
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .echo import (EchoCurve, FitError, PerturbationKind, PerturbationSpec, fit_exponential, fit_fermi,
                   loschmidt_echo, perturbation_hamiltonian)
from .hamiltonians import CONVENTIONS, HamiltonianKind, build_hamiltonian, convention_scale
from .lattice import (HAP_C, HAP_R_IN, HAP_R_X, SpinGeometry, Truncation, build_couplings, cubic_cluster, hap_chain,
                      hap_ladder, powder_nodes, sphere_nodes, zeno_report)
from .mqc import (AnalyticSimulation, MqcSeries, MqcSimulation, NumericalHealthError, powder_average,
                  powder_average_resimulated)
from .spinops import DEFAULT_MAX_SPINS, HARD_MAX_SPINS, SizeError, build_basis
from .dynamics import thermal_deviation_state

EXIT_OK, EXIT_CONFIG, EXIT_HEALTH, EXIT_VALIDATION = 0, 2, 3, 4

SYSTEMS = ("hap-chain", "hap-ladder", "custom-geometry", "cubic-cluster")
METHODS = ("direct", "phase", "analytic")
METHOD_ALIASES = {"phase-encoding": "phase"}
SUM_TOL = 1e-9
ODD_TOL = 1e-10
SYMMETRY_TOL = 1e-12


class ConfigError(ValueError):
    """Invalid configuration; ``path`` names the offending field as section.key."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass
class RunConfig:
    system: str = "hap-chain"
    n_spins: int = 10
    truncation: str = "nnn"
    hamiltonians: list = field(default_factory=lambda: ["dq"])
    convention: str = "closed-form"
    theta_deg: float | None = 0.0
    powder_order: int | None = None
    methods: list = field(default_factory=lambda: ["direct"])
    n_phases: int = 32
    t_start_us: float = 0.0
    t_stop_us: float = 200.0
    t_step_us: float = 2.0
    spacing_a: float = HAP_R_IN
    r_x_a: float = HAP_R_X
    axial_offset_a: float = HAP_C / 4
    positions_a: list | None = None
    field_direction: list = field(default_factory=lambda: [0.0, 0.0, 1.0])
    coupling_khz: float | None = None
    quadrature_order: int = 40
    perturbation: str = "nnn-dipolar"
    strength: float = 1.0
    seed: int = 0
    observable: str = "magnetization"
    out: str = "spinmqc-out"
    threads: int = 1
    max_spins: int = DEFAULT_MAX_SPINS

    def checksum(self) -> str:
        """sha256 of the physics-relevant settings (output location and thread count excluded)."""
        payload = {k: v for k, v in dataclasses.asdict(self).items() if k not in ("out", "threads")}
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


# config file layout: field -> (section, converter)
def _floats(text: str) -> list:
    return [float(x) for x in text.replace(",", " ").split()]


def _positions(text: str) -> list:
    rows = [r for r in text.replace("\n", ";").split(";") if r.strip()]
    return [_floats(r) for r in rows]


def _names(text: str) -> list:
    return [x.strip().lower() for x in text.replace(",", " ").split() if x.strip()]


def _optional_int(text: str):
    return None if text.strip().lower() in ("", "none") else int(text)


def _optional_float(text: str):
    return None if text.strip().lower() in ("", "none") else float(text)


SCHEMA = {
    "system": ("system", str), "n_spins": ("system", int), "truncation": ("system", str),
    "theta_deg": ("system", _optional_float), "powder_order": ("system", _optional_int),
    "spacing_a": ("system", float), "r_x_a": ("system", float), "axial_offset_a": ("system", float),
    "positions_a": ("system", _positions), "field_direction": ("system", _floats),
    "coupling_khz": ("system", _optional_float), "quadrature_order": ("system", int),
    "hamiltonians": ("dynamics", _names), "convention": ("dynamics", str), "methods": ("dynamics", _names),
    "n_phases": ("dynamics", int), "t_start_us": ("dynamics", float), "t_stop_us": ("dynamics", float),
    "t_step_us": ("dynamics", float),
    "perturbation": ("echo", str), "strength": ("echo", float), "seed": ("echo", int),
    "observable": ("echo", str),
    "out": ("run", str), "threads": ("run", int), "max_spins": ("run", int),
}
KEY_ALIASES = {"hamiltonian": "hamiltonians", "method": "methods"}

PRESETS = {
    "fig3": dict(system="hap-chain", n_spins=10, truncation="nnn", hamiltonians=["xx", "dq"], theta_deg=0.0,
                 powder_order=None, methods=["direct"], t_start_us=0.0, t_stop_us=400.0, t_step_us=2.0),
    "fig4": dict(system="hap-chain", n_spins=10, truncation="nnn", hamiltonians=["xx", "dq"], theta_deg=0.0,
                 powder_order=40, methods=["direct"], t_start_us=0.0, t_stop_us=200.0, t_step_us=2.0),
    "fig6-hap": dict(system="hap-chain", n_spins=10, truncation="nn", hamiltonians=["dq"], theta_deg=0.0,
                     powder_order=None, perturbation="nnn-dipolar", strength=1.0, t_start_us=0.0,
                     t_stop_us=1400.0, t_step_us=20.0),
}
COMMAND_DEFAULTS = {
    "echo": dict(truncation="nn", t_stop_us=1400.0, t_step_us=20.0),
    "analytic": dict(truncation="nn", hamiltonians=["dq"], methods=["analytic"]),
}


def load_config_file(path: str) -> dict:
    parser = configparser.ConfigParser()
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc.strerror}") from exc
    except configparser.Error as exc:
        raise ConfigError("config", f"malformed file: {exc}") from exc
    values = {}
    for section in parser.sections():
        for key, raw in parser.items(section):
            name = KEY_ALIASES.get(key, key)
            where = f"{section}.{key}"
            if name not in SCHEMA:
                raise ConfigError(where, "unknown key")
            expected, convert = SCHEMA[name]
            if section != expected:
                raise ConfigError(where, f"belongs in section [{expected}]")
            try:
                values[name] = convert(raw)
            except ValueError as exc:
                raise ConfigError(where, f"cannot parse {raw!r}") from exc
    return values


def _path(name: str) -> str:
    section = SCHEMA.get(name, ("run",))[0]
    return f"{section}.{name}"


def validate(cfg: RunConfig, check_size: bool = True) -> RunConfig:
    """Check every field before anything is allocated; returns the normalized config."""

    def need(ok: bool, name: str, message: str):
        if not ok:
            raise ConfigError(_path(name), message)

    need(cfg.system in SYSTEMS, "system", f"must be one of {', '.join(SYSTEMS)}")
    need(1 <= cfg.max_spins <= HARD_MAX_SPINS, "max_spins", f"must lie in 1..{HARD_MAX_SPINS}")
    need(isinstance(cfg.n_spins, int) and cfg.n_spins >= 2, "n_spins", "must be an integer >= 2")
    if check_size and cfg.n_spins > cfg.max_spins:
        raise SizeError(f"system.n_spins: {cfg.n_spins} exceeds the cap of {cfg.max_spins} (raise --max-spins, "
                        f"hard limit {HARD_MAX_SPINS})")
    need(cfg.truncation in {t.value for t in Truncation}, "truncation", "must be nn, nnn or full")
    need(bool(cfg.hamiltonians), "hamiltonians", "at least one Hamiltonian is required")
    for kind in cfg.hamiltonians:
        need(kind in {k.value for k in HamiltonianKind}, "hamiltonians", f"unknown Hamiltonian {kind!r}")
    cfg.hamiltonians = list(dict.fromkeys(cfg.hamiltonians))
    need(cfg.convention in CONVENTIONS, "convention", f"must be one of {', '.join(CONVENTIONS)}")
    cfg.methods = list(dict.fromkeys(METHOD_ALIASES.get(m, m) for m in cfg.methods))
    need(bool(cfg.methods), "methods", "at least one method is required")
    for m in cfg.methods:
        need(m in METHODS, "methods", f"unknown method {m!r}; choose from direct, phase, analytic")
    need(cfg.theta_deg is not None or cfg.powder_order is not None, "theta_deg",
         "give an orientation (theta) or a powder order")
    if cfg.theta_deg is not None:
        need(math.isfinite(cfg.theta_deg), "theta_deg", "must be finite")
    if cfg.powder_order is not None:
        need(cfg.powder_order >= 2, "powder_order", "must be >= 2")
    need(cfg.n_phases >= 2, "n_phases", "must be >= 2")
    need(cfg.n_phases // 2 - 1 >= cfg.n_spins or "phase" not in cfg.methods, "n_phases",
         f"{cfg.n_phases} phases alias orders up to {cfg.n_spins}; need at least {2 * cfg.n_spins + 2}")
    need(math.isfinite(cfg.t_step_us) and cfg.t_step_us > 0, "t_step_us", "time step must be > 0")
    need(math.isfinite(cfg.t_start_us) and cfg.t_start_us >= 0, "t_start_us", "must be >= 0")
    need(math.isfinite(cfg.t_stop_us) and cfg.t_stop_us >= cfg.t_start_us, "t_stop_us", "must be >= t_start_us")
    need(cfg.spacing_a > 0, "spacing_a", "must be > 0")
    need(cfg.r_x_a > 0, "r_x_a", "must be > 0")
    need(cfg.quadrature_order >= 16, "quadrature_order", "must be >= 16")
    need(len(cfg.field_direction) == 3 and any(cfg.field_direction), "field_direction",
         "must be a nonzero 3-vector")
    if cfg.system == "custom-geometry":
        need(cfg.positions_a is not None, "positions_a", "custom geometry needs positions")
        need(all(len(p) == 3 for p in cfg.positions_a), "positions_a", "each position needs three coordinates")
        need(len(cfg.positions_a) == cfg.n_spins, "positions_a",
             f"{len(cfg.positions_a)} positions given for n_spins = {cfg.n_spins}")
    if cfg.system == "hap-ladder":
        need(cfg.n_spins % 2 == 0, "n_spins", "a two-chain ladder needs an even number of spins")
    if cfg.coupling_khz is not None:
        need(cfg.coupling_khz > 0, "coupling_khz", "must be > 0")
    try:
        PerturbationKind(cfg.perturbation)
    except ValueError:
        raise ConfigError(_path("perturbation"), f"unknown kind {cfg.perturbation!r}") from None
    need(math.isfinite(cfg.strength) and cfg.strength >= 0, "strength", "must be >= 0")
    need(cfg.observable in ("magnetization", "fidelity"), "observable", "must be magnetization or fidelity")
    need(cfg.threads >= 1, "threads", "must be >= 1")
    return cfg


def resolve(command: str, args: argparse.Namespace) -> RunConfig:
    values = dict(COMMAND_DEFAULTS.get(command, {}))
    if getattr(args, "preset", None):
        values.update(PRESETS[args.preset])
    if getattr(args, "config", None):
        values.update(load_config_file(args.config))
    flags = {k: v for k, v in vars(args).items() if v is not None and k in {f.name for f in dataclasses.fields(
        RunConfig)}}
    if getattr(args, "theta_deg", None) is not None:
        flags["powder_order"] = None
    if getattr(args, "powder_order", None) is not None:
        flags["theta_deg"] = None
    values.update(flags)
    return validate(RunConfig(**values), check_size=command not in ("zeno", "validate"))


# ---------------------------------------------------------------- geometry

def make_geometry(cfg: RunConfig, theta: float | None = None) -> SpinGeometry:
    theta = math.radians(cfg.theta_deg or 0.0) if theta is None else theta
    if cfg.system == "hap-chain":
        return hap_chain(cfg.n_spins, theta, cfg.spacing_a)
    if cfg.system == "hap-ladder":
        return hap_ladder(cfg.n_spins // 2, theta, 0.0, cfg.spacing_a, cfg.r_x_a, cfg.axial_offset_a)
    if cfg.system == "cubic-cluster":
        return cubic_cluster(cfg.n_spins, cfg.spacing_a, cfg.field_direction)
    return SpinGeometry(np.array(cfg.positions_a), cfg.field_direction, label="custom")


def _chain_axis(geom: SpinGeometry) -> np.ndarray:
    p = geom.positions - geom.positions[0]
    axis = p[np.argmax(np.linalg.norm(p, axis=1))]
    return axis / np.linalg.norm(axis)


def _times(cfg: RunConfig) -> np.ndarray:
    n = int(math.floor((cfg.t_stop_us - cfg.t_start_us) / cfg.t_step_us + 1e-9)) + 1
    return (cfg.t_start_us + cfg.t_step_us * np.arange(n)) * 1e-6


# ---------------------------------------------------------------- output helpers

class Output:
    """Collects emitted files and writes the manifest at the end of a run."""

    def __init__(self, cfg: RunConfig, command: str, quiet: bool = False):
        self.cfg = cfg
        self.command = command
        self.dir = Path(cfg.out)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.files: dict[str, str] = {}
        self.extra: dict = {}
        self.quiet = quiet
        self.started = time.perf_counter()

    def say(self, text: str):
        if not self.quiet:
            print(text)

    def write(self, name: str, text: str):
        path = self.dir / name
        path.write_text(text)
        self.files[name] = hashlib.sha256(text.encode()).hexdigest()

    def header(self, **items) -> dict:
        base = {"spinmqc": __version__, "command": self.command, "config_sha256": self.cfg.checksum()}
        base.update(items)
        return base

    def finish(self, status: str = "ok") -> Path:
        manifest = {
            "command": self.command,
            "status": status,
            "version": __version__,
            "config": dataclasses.asdict(self.cfg),
            "config_sha256": self.cfg.checksum(),
            "wall_clock_s": round(time.perf_counter() - self.started, 3),
            "files": dict(sorted(self.files.items())),
        }
        manifest.update(self.extra)
        path = self.dir / "manifest.json"
        path.write_text(json.dumps(manifest, indent=2, default=_json_default) + "\n")
        return path


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not serializable: {type(obj).__name__}")


def check_health(series: MqcSeries, label: str):
    """Sum rule, +-M symmetry and vanishing odd orders; raises NumericalHealthError."""
    sum_dev = float(np.max(np.abs(series.sum_check() - 1))) if len(series.times) else 0.0
    if sum_dev > SUM_TOL:
        raise NumericalHealthError(f"{label}: sum rule violated by {sum_dev:.2e}")
    for m in series.orders:
        if m % 2 and np.max(np.abs(series[m]), initial=0) > ODD_TOL:
            raise NumericalHealthError(f"{label}: odd order J_{m} = {np.max(np.abs(series[m])):.2e}")
        if m > 0 and np.max(np.abs(series[m] - series[-m]), initial=0) > SYMMETRY_TOL:
            raise NumericalHealthError(f"{label}: J_{m} and J_-{m} differ")


# ---------------------------------------------------------------- commands

def _simulation(cfg: RunConfig, kind: str, method: str, geom: SpinGeometry, basis, collinear: bool):
    couplings = build_couplings(geom, cfg.truncation)
    if method == "analytic":
        if kind != "dq" or cfg.truncation != "nn" or cfg.system not in ("hap-chain", "custom-geometry") \
                or not geom.is_collinear():
            raise ConfigError("dynamics.methods", "analytic method needs a DQ Hamiltonian on an NN chain")
        d = np.array([c[2] for c in couplings.couplings])
        if cfg.coupling_khz is not None:
            d = np.full_like(d, 2 * np.pi * cfg.coupling_khz * 1e3)
        if np.ptp(np.abs(d)) > 1e-12 * np.max(np.abs(d)):
            raise ConfigError("dynamics.methods", "analytic method needs homogeneous couplings")
        # the closed form is stated in the default convention; rescale to the requested one
        return AnalyticSimulation(cfg.n_spins, abs(d[0]) * convention_scale(cfg.convention) / 4)
    if cfg.coupling_khz is not None:
        couplings = couplings.scaled(2 * np.pi * cfg.coupling_khz * 1e3 / couplings.d_max)
    h = build_hamiltonian(kind, couplings, basis, cfg.convention)
    return MqcSimulation(h, thermal_deviation_state(basis), method=method, n_phases=cfg.n_phases,
                         collinear=collinear)


def cmd_mqc(cfg: RunConfig, out: Output, executor=None) -> int:
    basis = build_basis(cfg.n_spins, cfg.max_spins)
    times = _times(cfg)
    orientations = []
    if cfg.theta_deg is not None:
        orientations.append((f"theta{cfg.theta_deg:g}", "theta"))
    if cfg.powder_order is not None:
        orientations.append((f"powder{cfg.powder_order}", "powder"))
    cross = {}
    for kind in cfg.hamiltonians:
        for tag, mode in orientations:
            results = {}
            for method in cfg.methods:
                start = time.perf_counter()
                if mode == "theta":
                    geom = make_geometry(cfg)
                    series = _simulation(cfg, kind, method, geom, basis, geom.is_collinear()).series(times, executor)
                else:
                    series = _powder(cfg, kind, method, basis, times, executor)
                label = f"{kind}/{tag}/{method}"
                check_health(series, label)
                results[method] = series
                name = f"mqc_{kind}_{tag}_{method}.csv"
                out.write(name, series.to_csv(comments=out.header(hamiltonian=kind, orientation=tag, method=method,
                                                                  convention=cfg.convention,
                                                                  n_spins=cfg.n_spins,
                                                                  truncation=cfg.truncation)))
                out.say(f"{name}: {len(times)} times, max |sum-1| = "
                        f"{np.max(np.abs(series.sum_check() - 1)):.1e} ({time.perf_counter() - start:.1f} s)")
            methods = list(results)
            for a, b in zip(methods, methods[1:]):
                diff = results[a].max_abs_diff(results[b])
                cross[f"{kind}/{tag}: {a} vs {b}"] = diff
                out.say(f"{kind}/{tag}: max |dJ_M| {a} vs {b} = {diff:.2e}")
    if cross:
        out.extra["method_cross_checks"] = cross
    return EXIT_OK


def _powder(cfg: RunConfig, kind: str, method: str, basis, times, executor) -> MqcSeries:
    geom = make_geometry(cfg)
    if geom.is_collinear():
        aligned = geom.with_field(_chain_axis(geom))
        sim = _simulation(cfg, kind, method, aligned, basis, True)
        return powder_average(sim, powder_nodes(cfg.powder_order), times, executor)
    if method == "analytic":
        raise ConfigError("dynamics.methods", "analytic method needs a collinear chain")
    dirs, weights = sphere_nodes(cfg.powder_order)
    nodes = list(zip(dirs, weights))
    return powder_average_resimulated(
        lambda b: _simulation(cfg, kind, method, geom.with_field(b), basis, False), nodes, times, executor)


def _fit_report(curve: EchoCurve) -> dict:
    report = {}
    for name, fitter in (("exponential", fit_exponential), ("fermi", fit_fermi)):
        try:
            fit = fitter(curve)
            report[name] = {"params_us": {k: v * 1e6 for k, v in fit.params.items()}, "rss": fit.rss}
        except FitError as exc:
            report[name] = {"error": type(exc).__name__, "notice": str(exc)}
    fitted = [k for k in ("exponential", "fermi") if "rss" in report[k]]
    if len(fitted) == 2:
        best = min(fitted, key=lambda k: report[k]["rss"])
        for k in fitted:
            report[k]["preferred"] = k == best
        report["preferred"] = best
    else:
        report["preferred"] = None
    return report


def cmd_echo(cfg: RunConfig, out: Output, fit_only: str | None = None) -> int:
    if fit_only:
        try:
            curve = EchoCurve.from_csv(Path(fit_only).read_text())
        except (OSError, ValueError, IndexError) as exc:
            raise ConfigError("fit_only", f"cannot read echo curve {fit_only}: {exc}") from exc
        source = {"fit_only": str(fit_only)}
    else:
        basis = build_basis(cfg.n_spins, cfg.max_spins)
        geom = make_geometry(cfg)
        couplings = build_couplings(geom, cfg.truncation)
        if cfg.coupling_khz is not None:
            couplings = couplings.scaled(2 * np.pi * cfg.coupling_khz * 1e3 / couplings.d_max)
        h_dq = build_hamiltonian("dq", couplings, basis, cfg.convention)
        spec = PerturbationSpec(cfg.perturbation, cfg.strength, cfg.seed)
        try:
            sigma = perturbation_hamiltonian(spec, basis, geom, cfg.convention)
        except ValueError as exc:
            raise ConfigError("echo.perturbation", str(exc)) from exc
        curve = loschmidt_echo(thermal_deviation_state(basis), h_dq, sigma, _times(cfg), cfg.observable)
        if not np.all(np.isfinite(curve.amplitude)):
            raise NumericalHealthError("echo amplitude is not finite")
        if len(curve.times) and curve.times[0] == 0 and abs(curve.amplitude[0] - 1) > 1e-12:
            raise NumericalHealthError("echo amplitude at t=0 differs from one")
        out.write("echo.csv", curve.to_csv(comments=out.header(perturbation=cfg.perturbation, strength=cfg.strength,
                                                              seed=cfg.seed, observable=cfg.observable,
                                                              n_spins=cfg.n_spins, truncation=cfg.truncation)))
        out.say(f"echo.csv: {len(curve.times)} times, final amplitude {curve.amplitude[-1]:.4f}")
        source = {"perturbation": dataclasses.asdict(spec) | {"kind": spec.kind.value}}
    report = _fit_report(curve) | source
    out.write("echo_fit.json", json.dumps(report, indent=2, sort_keys=True, default=_json_default) + "\n")
    for name in ("exponential", "fermi"):
        entry = report[name]
        if "error" in entry:
            out.say(f"{name}: fit rejected ({entry['error']}: {entry['notice']})")
        else:
            params = ", ".join(f"{k} = {v:.2f} us" for k, v in entry["params_us"].items())
            flag = " [preferred]" if entry.get("preferred") else ""
            out.say(f"{name}: {params}, rss = {entry['rss']:.3e}{flag}")
    return EXIT_OK


def cmd_zeno(cfg: RunConfig, out: Output) -> int:
    report = zeno_report(cfg.spacing_a, cfg.r_x_a, quadrature_order=cfg.quadrature_order,
                         axial_offset=cfg.axial_offset_a)
    data = dataclasses.asdict(report)
    out.write("zeno.json", json.dumps(data, indent=2, sort_keys=True) + "\n")
    out.say(f"coupling ratio d_in/d_x       = {report.ratio_couplings:.4f}")
    out.say(f"second-moment ratio           = {report.ratio_second_moments:.4f}")
    out.say(f"tau_in                        = {report.tau_in * 1e6:.4f} us")
    out.say(f"tau_x                         = {report.tau_x * 1e3:.4f} ms")
    out.say(f"rate ratio tau_in/tau_x       = {report.rate_ratio:.6f} (1/{1 / report.rate_ratio:.1f})")
    return EXIT_OK


def cmd_validate(cfg: RunConfig, out: Output) -> int:
    from .validation import run_all

    lines = []

    def report(check):
        lines.append(check.line())
        out.say(check.line())

    results = run_all(cfg.max_spins, report)
    failed = [c for c in results if c.passed is False]
    skipped = [c for c in results if c.passed is None]
    summary = f"{len(results) - len(failed) - len(skipped)} passed, {len(failed)} failed, {len(skipped)} skipped"
    lines.append(summary)
    out.say(summary)
    out.write("validate.txt", "\n".join(lines) + "\n")
    out.extra["checks"] = [dataclasses.asdict(c) for c in results]
    return EXIT_VALIDATION if failed else EXIT_OK


# ---------------------------------------------------------------- argument parsing

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spinmqc", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="INI file with [system], [dynamics], [echo], [run]")
    common.add_argument("--preset", choices=sorted(PRESETS))
    common.add_argument("--out", metavar="DIR")
    common.add_argument("--threads", type=int, metavar="N")
    common.add_argument("--max-spins", dest="max_spins", type=int, metavar="N")
    common.add_argument("--quiet", action="store_true", help="print nothing on success")

    system = argparse.ArgumentParser(add_help=False)
    system.add_argument("--system", choices=SYSTEMS)
    system.add_argument("--n-spins", dest="n_spins", type=int)
    system.add_argument("--truncation", choices=[t.value for t in Truncation])
    system.add_argument("--hamiltonian", dest="hamiltonians", action="append",
                        choices=[k.value for k in HamiltonianKind], help="repeatable")
    system.add_argument("--convention", choices=sorted(CONVENTIONS))
    system.add_argument("--coupling-khz", dest="coupling_khz", type=float,
                        help="override the largest coupling d/2pi")
    orient = system.add_mutually_exclusive_group()
    orient.add_argument("--theta", dest="theta_deg", type=float, metavar="DEG")
    orient.add_argument("--powder", dest="powder_order", type=int, metavar="ORDER")
    system.add_argument("--t-start", dest="t_start_us", type=float, metavar="US")
    system.add_argument("--t-stop", dest="t_stop_us", type=float, metavar="US")
    system.add_argument("--t-step", dest="t_step_us", type=float, metavar="US")

    mqc = sub.add_parser("mqc", parents=[common, system], help="MQC intensities J_M(t)")
    mqc.add_argument("--method", dest="methods", action="append",
                     choices=list(METHODS) + list(METHOD_ALIASES), help="repeatable; several runs are compared")
    mqc.add_argument("--n-phases", dest="n_phases", type=int, metavar="K")

    echo = sub.add_parser("echo", parents=[common, system], help="Loschmidt echo and decay fits")
    echo.add_argument("--perturbation", choices=[k.value for k in PerturbationKind])
    echo.add_argument("--strength", type=float)
    echo.add_argument("--seed", type=int)
    echo.add_argument("--observable", choices=["magnetization", "fidelity"])
    echo.add_argument("--fit-only", dest="fit_only", metavar="CSV", help="fit an existing echo curve")

    zeno = sub.add_parser("zeno", parents=[common], help="anisotropy and Zeno estimates")
    zeno.add_argument("--r-in", dest="spacing_a", type=float, metavar="ANGSTROM")
    zeno.add_argument("--r-x", dest="r_x_a", type=float, metavar="ANGSTROM")
    zeno.add_argument("--axial-offset", dest="axial_offset_a", type=float, metavar="ANGSTROM")
    zeno.add_argument("--quadrature-order", dest="quadrature_order", type=int)

    sub.add_parser("analytic", parents=[common, system], help="closed-form J_0, J_2 of a homogeneous NN chain")
    sub.add_parser("validate", parents=[common], help="run the acceptance checks")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    quiet = args.quiet
    try:
        cfg = resolve(args.command, args)
    except (ConfigError, SizeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Output(cfg, args.command, quiet)
    executor = ThreadPoolExecutor(max_workers=cfg.threads) if cfg.threads > 1 else None
    status, code = "ok", EXIT_OK
    try:
        if args.command in ("mqc", "analytic"):
            code = cmd_mqc(cfg, out, executor)
        elif args.command == "echo":
            code = cmd_echo(cfg, out, args.fit_only)
        elif args.command == "zeno":
            code = cmd_zeno(cfg, out)
        else:
            code = cmd_validate(cfg, out)
        if code == EXIT_VALIDATION:
            status = "validation-failed"
    except (ConfigError, SizeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        status, code = "config-error", EXIT_CONFIG
    except NumericalHealthError as exc:
        print(f"numerical-health failure: {exc}", file=sys.stderr)
        status, code = "numerical-health-failure", EXIT_HEALTH
    except BaseException:
        status, code = "error", 1
        raise
    finally:
        if executor is not None:
            executor.shutdown()
        out.extra["exit_code"] = code
        out.finish(status)
    return code


if __name__ == "__main__":
    sys.exit(main())
