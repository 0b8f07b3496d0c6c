"""Acceptance checks run by ``spinmqc validate`` and by the test suite.

Each check returns one or more :class:`Check` records.  Checks that need
more spins than the active cap are reported as skipped rather than run at a
smaller size, so a reduced cap never turns a size-specific claim green.
"""

from __future__ import annotations

import hashlib
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import lattice
from .dynamics import Evolver, energy, staggered_state, thermal_deviation_state
from .echo import (EchoCurve, PerturbationSpec, exponential_model, fermi_model, fit_exponential, fit_fermi,
                   loschmidt_echo, perturbation_hamiltonian)
from .hamiltonians import apply_even_site_pi_rotation, build_hamiltonian
from .lattice import Truncation, build_couplings, hap_chain, homogeneous_chain, powder_nodes
from .mqc import MqcSimulation, analytic_jm_homogeneous, jm_direct, powder_average
from .spinops import DEFAULT_MAX_SPINS, build_basis

D_MAX = abs(lattice.dipolar_coupling((0, 0, lattice.HAP_R_IN), (0, 0, 1)))
FREE_FERMION_SIZES = (2, 4, 6, 8, 10)
LEAKAGE_WINDOW = 3.7  # in units of hbar / d_max
ECHO_TIME = 6.0


@dataclass
class Check:
    criterion: int
    name: str
    passed: bool | None  # None = skipped
    detail: str
    elapsed: float = 0.0

    def __post_init__(self):
        if self.passed is not None:
            self.passed = bool(self.passed)  # numpy comparisons yield np.bool_, which breaks `is False`

    @property
    def status(self) -> str:
        return {True: "PASS", False: "FAIL", None: "SKIP"}[self.passed]

    def line(self) -> str:
        return f"{self.status} [{self.criterion}] {self.name}: {self.detail} ({self.elapsed:.1f} s)"


@dataclass
class Context:
    """Run settings shared by all checks, plus a cache for expensive intermediate results."""

    max_spins: int = DEFAULT_MAX_SPINS
    cache: dict = field(default_factory=dict)

    def allows(self, n_spins: int) -> bool:
        return n_spins <= self.max_spins

    def memo(self, key, compute):
        if key not in self.cache:
            self.cache[key] = compute()
        return self.cache[key]


def _skip(criterion: int, name: str, n_spins: int, ctx: Context) -> Check:
    return Check(criterion, name, None, f"needs N={n_spins}, cap is {ctx.max_spins}")


def _timed(fn):
    def wrapper(ctx: Context) -> list[Check]:
        start = time.perf_counter()
        checks = fn(ctx)
        spent = time.perf_counter() - start
        for c in checks:
            if not c.elapsed:
                c.elapsed = spent / len(checks)
        return checks

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


def _free_fermion_runs(ctx: Context):
    """Direct-method J_M on homogeneous NN DQ chains, 0-200 us in 2 us steps."""

    def compute():
        times = np.arange(0.0, 200e-6 + 1e-12, 2e-6)
        runs = {}
        start = time.perf_counter()
        for n in FREE_FERMION_SIZES:
            if not ctx.allows(n):
                continue
            basis = build_basis(n)
            h = build_hamiltonian("dq", homogeneous_chain(n, D_MAX), basis)
            runs[n] = MqcSimulation(h).series(times)
        return times, runs, time.perf_counter() - start

    return ctx.memo("free-fermion", compute)


@_timed
def check_free_fermion(ctx: Context) -> list[Check]:
    """Criterion 1: closed form for J_0 and J_2 on homogeneous NN chains, plus runtime."""
    times, runs, spent = _free_fermion_runs(ctx)
    worst = 0.0
    for n, series in runs.items():
        j0, j2 = analytic_jm_homogeneous(n, D_MAX, times)
        worst = max(worst, np.max(np.abs(series[0] - j0)), np.max(np.abs(series[2] - j2)),
                    np.max(np.abs(series[-2] - j2)))
    sizes = ",".join(map(str, runs))
    missing = [n for n in FREE_FERMION_SIZES if n not in runs]
    out = [Check(1, "closed-form J0/J2", worst < 1e-9, f"N={sizes}: max |dJ| = {worst:.2e} (tol 1e-9)")]
    if missing:
        out[0].detail += f"; N={missing} skipped by cap"
    out.append(Check(1, "closed-form runtime", spent < 60, f"{spent:.1f} s (limit 60 s)"))
    return out


@_timed
def check_selection_rule(ctx: Context) -> list[Check]:
    """Criterion 2: no |M| outside {0, 2} under NN H_DQ."""
    _, runs, _ = _free_fermion_runs(ctx)
    worst = 0.0
    for series in runs.values():
        for m in series.orders:
            if abs(m) not in (0, 2):
                worst = max(worst, float(np.max(np.abs(series[m]))))
    return [Check(2, "selection rule |M| in {0,2}", worst < 1e-10, f"max J_M outside = {worst:.2e} (tol 1e-10)")]


@_timed
def check_mapping(ctx: Context) -> list[Check]:
    """Criterion 3: U H_DQ U^dagger = H_XY on NN chains and U I^z U^dagger = staggered state."""
    rng = np.random.default_rng(7)
    worst_h, worst_rho = 0.0, 0.0
    for n in range(2, min(8, ctx.max_spins) + 1):
        basis = build_basis(n)
        for couplings in (homogeneous_chain(n, D_MAX),
                          lattice.CouplingSet(n, [(i, i + 1, D_MAX * rng.uniform(0.2, 1.5)) for i in range(n - 1)],
                                              Truncation.NN)):
            mapped = apply_even_site_pi_rotation(build_hamiltonian("dq", couplings, basis))
            worst_h = max(worst_h, float(np.max(np.abs(mapped.matrix - build_hamiltonian("xy", couplings,
                                                                                           basis).matrix))))
        rho = apply_even_site_pi_rotation(thermal_deviation_state(basis))
        worst_rho = max(worst_rho, float(np.max(np.abs(rho.matrix - staggered_state(basis).matrix))))
    return [
        Check(3, "U H_DQ U+ = H_XY (NN)", worst_h < 1e-12, f"N<=8 max entry diff = {worst_h:.2e} (tol 1e-12)"),
        Check(3, "U Iz U+ = staggered state", worst_rho < 1e-12, f"max entry diff = {worst_rho:.2e}"),
    ]


@_timed
def check_method_equivalence(ctx: Context) -> list[Check]:
    """Criterion 4: phase encoding vs direct on N=6 (HAp chain with NNN couplings)."""
    n = 6
    basis = build_basis(n)
    couplings = build_couplings(hap_chain(n, 0.0), Truncation.NNN)
    times = np.linspace(0.0, 200e-6, 20)
    out = []
    for kind in ("dq", "xx"):
        h = build_hamiltonian(kind, couplings, basis)
        direct = MqcSimulation(h, method="direct").series(times)
        phase = MqcSimulation(h, method="phase").series(times)
        diff = direct.max_abs_diff(phase)
        out.append(Check(4, f"phase encoding = direct ({kind.upper()})", diff < 1e-9,
                         f"N=6, 20 times: max |dJ| = {diff:.2e} (tol 1e-9)"))
    return out


def _leakage_sims(ctx: Context):
    def compute():
        n = 10
        basis = build_basis(n)
        couplings = build_couplings(hap_chain(n, 0.0), Truncation.NNN)
        return {kind: MqcSimulation(build_hamiltonian(kind, couplings, basis), collinear=True)
                for kind in ("dq", "xx")}

    return ctx.memo("leakage", compute)


@_timed
def check_nnn_leakage(ctx: Context) -> list[Check]:
    """Criterion 5: max J_4 under NNN H_DQ at most a tenth of that under H_XX, theta=0 and powder."""
    if not ctx.allows(10):
        return [_skip(5, "NNN leakage theta=0", 10, ctx), _skip(5, "NNN leakage powder", 10, ctx)]
    sims = _leakage_sims(ctx)
    times = np.linspace(0.0, LEAKAGE_WINDOW, 75) / D_MAX
    start = time.perf_counter()
    single = {k: float(np.max(s.series(times)[4])) for k, s in sims.items()}
    mid = time.perf_counter()
    nodes = powder_nodes(40)
    powder = {k: float(np.max(powder_average(s, nodes, times)[4])) for k, s in sims.items()}
    end = time.perf_counter()
    out = []
    for label, vals, spent in (("theta=0", single, mid - start), ("powder order 40", powder, end - mid)):
        ratio = vals["dq"] / vals["xx"]
        out.append(Check(5, f"NNN leakage {label}", ratio <= 0.1,
                         f"max J4 DQ = {vals['dq']:.4f}, XX = {vals['xx']:.4f}, ratio = {ratio:.3f} (limit 0.1)",
                         spent))
    return out


@_timed
def check_mesoscopic_echo(ctx: Context) -> list[Check]:
    """Criterion 6: J_0 revival near 6 hbar/d_max and N=10 vs N=12 agreement before 3.7 hbar/d_max."""
    out = []
    if ctx.allows(10):
        basis = build_basis(10)
        sim = MqcSimulation(build_hamiltonian("dq", homogeneous_chain(10, D_MAX), basis))
        scaled = np.arange(LEAKAGE_WINDOW, 9.0 + 1e-9, 0.01)
        j0 = sim.series(scaled / D_MAX)[0]
        peak = float(scaled[np.argmax(j0)])
        err = abs(peak - ECHO_TIME) / ECHO_TIME
        out.append(Check(6, "mesoscopic echo position", err <= 0.05,
                         f"J0 revival at {peak:.2f} hbar/d_max = {peak / D_MAX * 1e6:.0f} us, "
                         f"{100 * err:.1f}% from 6 (tol 5%)"))
    else:
        out.append(_skip(6, "mesoscopic echo position", 10, ctx))
    if ctx.allows(12):
        scaled = np.linspace(0.0, LEAKAGE_WINDOW, 75)[:-1]
        series = {}
        for n in (10, 12):
            basis = build_basis(n)
            series[n] = MqcSimulation(build_hamiltonian("dq", homogeneous_chain(n, D_MAX), basis)).series(
                scaled / D_MAX)
        diff = series[10].max_abs_diff(series[12])
        gap = np.max([np.abs(series[10][m] - series[12][m]) for m in (0, 2)], axis=0)
        first = scaled[np.argmax(gap > 1e-3)] if np.any(gap > 1e-3) else None
        note = f", first exceeds 1e-3 at {first:.2f} hbar/d_max" if first is not None else ""
        out.append(Check(6, "finite-size independence N=10 vs 12", diff < 1e-3,
                         f"max |dJ| for t < 3.7 hbar/d_max = {diff:.2e} (tol 1e-3){note}"))
    else:
        out.append(_skip(6, "finite-size independence N=10 vs 12", 12, ctx))
    return out


@_timed
def check_coupling_anchor(ctx: Context) -> list[Check]:
    """Criterion 7: HAp nearest-neighbour coupling at theta=0."""
    couplings = build_couplings(hap_chain(2, 0.0), Truncation.NN)
    khz = couplings.d_max / (2 * np.pi) / 1e3
    err = abs(khz - 2.95) / 2.95
    return [Check(7, "HAp d_max anchor", err < 0.01, f"d_max = 2pi x {khz:.4f} kHz, {100 * err:.2f}% from 2.95")]


@_timed
def check_zeno(ctx: Context) -> list[Check]:
    """Criterion 8: coupling ratio, rate ratio and second-moment ratio."""
    report = lattice.zeno_report()
    formula = 2 * (lattice.HAP_R_X / lattice.HAP_R_IN) ** 3
    rate_err = abs(report.rate_ratio * 400 - 1)
    sm_err = abs(report.ratio_second_moments - 30) / 30
    return [
        Check(8, "coupling ratio 2(rx/rin)^3", abs(report.ratio_couplings - formula) <= 1e-12 * formula
              and abs(report.ratio_couplings - 41) / 41 < 0.01, f"{report.ratio_couplings:.4f} (formula {formula:.4f})"),
        Check(8, "Zeno rate ratio ~ 1/400", rate_err <= 0.05,
              f"1/{1 / report.rate_ratio:.2f}, {100 * rate_err:.2f}% from 1/400 (tol 5%)"),
        Check(8, "second-moment ratio ~ 30", sm_err <= 0.15,
              f"{report.ratio_second_moments:.2f}, {100 * sm_err:.1f}% from 30 (tol 15%)"),
    ]


def _fit_errors(model: str, seeds: int, noise: float):
    t = np.linspace(0.0, 1400e-6, 50)
    errs = []
    for seed in range(seeds):
        rng = np.random.default_rng(seed)
        jitter = rng.normal(0.0, noise, t.size) if noise else 0.0
        if model == "exponential":
            fit = fit_exponential(EchoCurve(t, exponential_model(t, 770e-6) + jitter))
            errs.append([fit.params["tau_phi"] / 770e-6 - 1])
        else:
            fit = fit_fermi(EchoCurve(t, fermi_model(t, 545e-6, 123e-6) + jitter))
            errs.append([fit.params["t_c"] / 545e-6 - 1, fit.params["tau_phi"] / 123e-6 - 1])
    return np.array(errs)


@_timed
def check_echo(ctx: Context) -> list[Check]:
    """Criterion 9: perfect reversal without perturbation and fitter parameter recovery."""
    out = []
    n = min(10, ctx.max_spins)
    basis = build_basis(n)
    geom = hap_chain(n, 0.0)
    h_dq = build_hamiltonian("dq", build_couplings(geom, Truncation.NN), basis)
    sigma = perturbation_hamiltonian(PerturbationSpec("nnn-dipolar", 0.0), basis, geom)
    times = np.arange(0.0, 1400e-6 + 1e-12, 20e-6)
    curve = loschmidt_echo(thermal_deviation_state(basis), h_dq, sigma, times)
    dev = float(np.max(np.abs(curve.amplitude - 1)))
    out.append(Check(9, "zero perturbation E(t) = 1", dev < 1e-10, f"N={n}, 0-1400 us: max |E-1| = {dev:.2e}"))

    for model, names in (("exponential", ("tau_phi",)), ("fermi", ("t_c", "tau_phi"))):
        clean = np.abs(_fit_errors(model, 1, 0.0)[0])
        out.append(Check(9, f"{model} fit noiseless", bool(np.all(clean < 0.005)),
                         ", ".join(f"{k} err {100 * e:.2e}%" for k, e in zip(names, clean)) + " (tol 0.5%)"))
        noisy = _fit_errors(model, 100, 0.01)
        rms = np.sqrt(np.mean(noisy ** 2, axis=0))
        worst = np.max(np.abs(noisy), axis=0)
        out.append(Check(9, f"{model} fit 1% noise", bool(np.all(rms < 0.02)),
                         ", ".join(f"{k} rms err {100 * r:.2f}% (worst seed {100 * w:.2f}%)"
                                   for k, r, w in zip(names, rms, worst)) + " over 100 seeds (tol 2%)"))
    return out


@_timed
def check_invariants(ctx: Context) -> list[Check]:
    """Criterion 10: trace, purity, energy, sum rule, +-M symmetry, determinism."""
    n = min(8, ctx.max_spins)
    basis = build_basis(n)
    couplings = build_couplings(hap_chain(n, 0.4), Truncation.FULL)
    rho0 = thermal_deviation_state(basis)
    purity0 = rho0.purity()
    trace_err = purity_err = energy_err = sum_err = sym_err = 0.0
    for kind in ("zz", "xx", "dq", "xy"):
        h = build_hamiltonian(kind, couplings, basis)
        prepared = Evolver(h).prepare(rho0)
        e0 = energy(rho0, h)
        scale = max(abs(e0), float(np.linalg.norm(h.matrix)) * np.sqrt(purity0))
        for t in np.linspace(0, 200e-6, 6):
            rho = prepared.at(t)
            trace_err = max(trace_err, abs(rho.trace()))
            purity_err = max(purity_err, abs(rho.purity() / purity0 - 1))
            energy_err = max(energy_err, abs(energy(rho, h) - e0) / scale)
            jm = jm_direct(rho, purity0)
            sum_err = max(sum_err, abs(sum(jm.values()) - 1))
            sym_err = max(sym_err, max(abs(jm[m] - jm[-m]) for m in jm))
    out = [
        Check(10, "trace conserved", trace_err < 1e-12, f"max |Tr rho(t)| = {trace_err:.2e}"),
        Check(10, "purity conserved", purity_err < 1e-10, f"max relative drift = {purity_err:.2e}"),
        Check(10, "energy conserved", energy_err < 1e-10, f"max relative drift = {energy_err:.2e}"),
        Check(10, "J_M sum rule", sum_err < 1e-9, f"max |sum J - 1| = {sum_err:.2e}"),
        Check(10, "J_+M = J_-M", sym_err < 1e-12, f"max |J_M - J_-M| = {sym_err:.2e}"),
    ]
    out.append(_determinism_check())
    return out


def _determinism_check() -> Check:
    from .cli import main

    digests = []
    with tempfile.TemporaryDirectory() as tmp:
        for rep in range(2):
            for cmd in (["mqc", "--n-spins", "6", "--truncation", "nnn", "--hamiltonian", "dq", "--t-stop", "40",
                         "--t-step", "4", "--method", "direct", "--method", "phase", "--threads", "2"],
                        ["echo", "--n-spins", "6", "--perturbation", "zz-disorder", "--strength", "0.2",
                         "--seed", "11", "--t-stop", "400", "--t-step", "20"]):
                out = Path(tmp) / f"{cmd[0]}-{rep}"
                code = main(cmd + ["--out", str(out), "--quiet"])
                if code != 0:
                    return Check(10, "CSV determinism", False, f"run {' '.join(cmd)} exited with {code}")
                for path in sorted(out.glob("*.csv")):
                    digests.append((rep, cmd[0], path.name, hashlib.sha256(path.read_bytes()).hexdigest()))
    first = [d[1:] for d in digests if d[0] == 0]
    second = [d[1:] for d in digests if d[0] == 1]
    same = bool(first) and first == second
    return Check(10, "CSV determinism", same, f"{len(first)} CSV files byte-identical across repeated runs"
                 if same else "CSV output differs between identical runs")


CHECKS = (check_free_fermion, check_selection_rule, check_mapping, check_method_equivalence, check_nnn_leakage,
          check_mesoscopic_echo, check_coupling_anchor, check_zeno, check_echo, check_invariants)


def run_all(max_spins: int = DEFAULT_MAX_SPINS, report=None) -> list[Check]:
    """Run every check; ``report`` is called with each Check as soon as it is known."""
    ctx = Context(max_spins=max_spins)
    start = time.perf_counter()
    results = []
    for check in CHECKS:
        for c in check(ctx):
            results.append(c)
            if report:
                report(c)
    total = time.perf_counter() - start
    runtime = Check(10, "validate runtime", total < 600, f"{total:.0f} s (limit 600 s)", total)
    results.append(runtime)
    if report:
        report(runtime)
    return results

