"""Loschmidt echo under H_DQ / -H_DQ with an unreversed perturbation, and decay fits.

Forward segment: H_f = H_DQ + Sigma.  Backward segment: H_b = -H_DQ + Sigma.
The echo amplitude after a forward time t and an equal backward time is

    E(t) = Tr{exp(-i H_b t) exp(-i H_f t) rho0 exp(i H_f t) exp(i H_b t) Iz} / Tr{rho0 Iz}.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.optimize import least_squares

from .dynamics import Evolver
from .hamiltonians import DEFAULT_CONVENTION, HamiltonianKind, build_hamiltonian
from .lattice import SpinGeometry, Truncation, build_couplings, neighbor_pairs
from .spinops import ContractError, SpinOperator, ZeemanBasis, total_spin_op

N_STARTS = 8


class PerturbationKind(str, Enum):
    NNN_DIPOLAR = "nnn-dipolar"
    CROSS_CHAIN = "cross-chain"
    ZZ_DISORDER = "zz-disorder"


@dataclass(frozen=True)
class PerturbationSpec:
    kind: PerturbationKind
    strength: float = 1.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", PerturbationKind(self.kind))
        if not self.strength >= 0:
            raise ValueError("perturbation strength must be non-negative")


def perturbation_hamiltonian(spec: PerturbationSpec, basis: ZeemanBasis, geometry: SpinGeometry,
                             convention: str = DEFAULT_CONVENTION) -> SpinOperator:
    """Unreversed term Sigma on the same basis as H_DQ.

    nnn-dipolar: secular dipolar (ZZ form) of next-nearest-neighbour pairs.
    cross-chain: secular dipolar between spins on different chains.
    zz-disorder: local fields h_i Iz_i, h_i uniform in +-strength * d_max.
    """
    if geometry.n_spins != basis.n_spins:
        raise ContractError("geometry and basis sizes differ")
    if spec.kind is PerturbationKind.ZZ_DISORDER:
        d_max = build_couplings(geometry, Truncation.NN).d_max
        rng = np.random.default_rng(spec.seed)
        h = rng.uniform(-spec.strength * d_max, spec.strength * d_max, size=basis.n_spins)
        diag = (basis.bits - 0.5) @ h
        return SpinOperator(basis, np.diag(diag), hermitian=True, label="Sigma_zz")

    full = build_couplings(geometry, Truncation.FULL)
    if spec.kind is PerturbationKind.NNN_DIPOLAR:
        keep = set(neighbor_pairs(geometry, Truncation.NNN)) - set(neighbor_pairs(geometry, Truncation.NN))
    else:
        ids = geometry.chain_ids
        keep = {(i, j) for i, j in full.pairs() if ids[i] != ids[j]}
        if not keep:
            raise ValueError("cross-chain perturbation needs a geometry with more than one chain")
    sigma = build_hamiltonian(HamiltonianKind.ZZ, full.subset(keep), basis, convention)
    return SpinOperator(basis, sigma.matrix * spec.strength, hermitian=True, label=f"Sigma_{spec.kind.value}")


@dataclass
class EchoCurve:
    times: np.ndarray
    amplitude: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.amplitude = np.asarray(self.amplitude, dtype=float)
        if self.times.shape != self.amplitude.shape:
            raise ValueError("times and amplitudes differ in length")

    def to_csv(self, comments: dict | None = None) -> str:
        lines = [f"# {k}: {v}" for k, v in (comments or {}).items()]
        lines.append("t_us,echo_amplitude")
        lines += [f"{t * 1e6:.6f},{a:.15e}" for t, a in zip(self.times, self.amplitude)]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_csv(cls, text: str) -> EchoCurve:
        rows = [ln.split(",") for ln in text.splitlines() if ln and not ln.startswith("#")]
        body = np.array(rows[1:], dtype=float)
        return cls(body[:, 0] * 1e-6, body[:, 1])


def loschmidt_echo(rho0: SpinOperator, h_dq: SpinOperator, sigma: SpinOperator | None, times,
                   observable: str = "magnetization") -> EchoCurve:
    """Echo amplitude after forward H_DQ + Sigma and backward -H_DQ + Sigma.

    ``observable="fidelity"`` projects on rho0 instead of total Iz.
    """
    basis = rho0.basis
    if h_dq.basis.n_spins != basis.n_spins or (sigma is not None and sigma.basis.n_spins != basis.n_spins):
        raise ContractError("operators live on different bases")
    sigma_m = np.zeros_like(h_dq.matrix) if sigma is None else sigma.matrix
    forward = Evolver(SpinOperator(basis, h_dq.matrix + sigma_m, hermitian=True, label="H_f"))
    backward = Evolver(SpinOperator(basis, -h_dq.matrix + sigma_m, hermitian=True, label="H_b"))
    if observable == "magnetization":
        obs = total_spin_op(basis, "z").matrix
    elif observable == "fidelity":
        obs = rho0.matrix
    else:
        raise ValueError(f"unknown observable {observable!r}")
    norm = np.vdot(obs, rho0.matrix).real
    if abs(norm) < 1e-300:
        raise ValueError("echo normalizer Tr{rho0 O} vanishes")

    times = np.asarray(times, dtype=float)
    amps = np.empty(len(times))
    diag0, diag_obs = _diagonal(rho0.matrix), _diagonal(obs)
    for k, t in enumerate(times):
        u = backward.propagator(t) @ forward.propagator(t)
        if diag0 is not None and diag_obs is not None:
            # both diagonal: Tr{u rho0 u^dag O} = sum_rs O_r |u_rs|^2 rho0_s
            amps[k] = diag_obs @ (np.abs(u) ** 2) @ diag0 / norm
        else:
            rho = u @ rho0.matrix @ u.conj().T
            amps[k] = np.vdot(obs, rho).real / norm
    if len(times) and times[0] == 0:
        amps = amps / amps[0]
    return EchoCurve(times, amps, meta={"observable": observable})


def _diagonal(m: np.ndarray):
    d = np.diag(m)
    if np.count_nonzero(m - np.diag(d)):
        return None
    if np.any(d.imag):
        return None
    return d.real


class FitError(ValueError):
    pass


class DegenerateInputError(FitError):
    """Curve carries no decay information (e.g. flat)."""


class ShapeError(FitError):
    """Curve shape is incompatible with a decay model."""


@dataclass
class EchoFit:
    model: str
    params: dict
    rss: float
    preferred: bool = False

    def __post_init__(self):
        if not self.params.get("tau_phi", 0) > 0:
            raise FitError("fitted tau_phi must be positive")
        if self.model == "fermi" and not self.params.get("t_c", 0) > 0:
            raise FitError("fitted t_c must be positive")

    def as_dict(self) -> dict:
        return {"model": self.model, "params": dict(self.params), "rss": self.rss, "preferred": self.preferred}


def exponential_model(t, tau_phi):
    return np.exp(-np.asarray(t) / tau_phi)


def fermi_model(t, t_c, tau_phi):
    """C / (1 + exp((t - t_c) / tau_phi)) with C fixing the value at t=0 to one."""
    t = np.asarray(t)
    c = 1 + np.exp(-t_c / tau_phi)
    return c * _logistic((t - t_c) / tau_phi)


def _logistic(x):
    return np.exp(-np.logaddexp(0.0, x))


def _check_curve(curve: EchoCurve, min_points: int):
    t, y = curve.times, curve.amplitude
    if len(t) < min_points:
        raise FitError(f"need at least {min_points} points, got {len(t)}")
    if np.ptp(y) < 1e-9:
        raise DegenerateInputError("flat curve: no decay to fit")
    slope = np.polyfit(t, y, 1)[0]
    if slope >= 0:
        raise ShapeError("curve does not decay")
    return t, y


def _best_of(residual, starts):
    best = None
    for x0 in starts:
        try:
            res = least_squares(residual, x0, method="lm", x_scale="jac")
        except (ValueError, FloatingPointError):
            continue
        if np.all(np.isfinite(res.x)) and (best is None or res.cost < best.cost):
            best = res
    if best is None:
        raise FitError("all fit starts failed")
    return best


def fit_exponential(curve: EchoCurve) -> EchoFit:
    """Least-squares fit of exp(-t / tau_phi), amplitude fixed to one."""
    t, y = _check_curve(curve, 5)
    span = t[-1] - t[0]
    starts = [[np.log(span * f)] for f in np.geomspace(0.05, 20, N_STARTS)]
    res = _best_of(lambda p: exponential_model(t, np.exp(p[0])) - y, starts)
    tau = float(np.exp(res.x[0]))
    if tau > 1e3 * span:
        raise DegenerateInputError("decay time diverges: no measurable decay")
    return EchoFit("exponential", {"tau_phi": tau}, float(2 * res.cost))


def fit_fermi(curve: EchoCurve) -> EchoFit:
    """Least-squares fit of the Fermi-type decay, parameters (t_c, tau_phi)."""
    t, y = _check_curve(curve, 6)
    span = t[-1] - t[0]
    t_guesses = np.linspace(0.1, 0.9, N_STARTS) * span + t[0]
    tau_guesses = np.geomspace(0.02, 0.5, N_STARTS) * span
    starts = [[np.log(tc), np.log(tau)] for tc, tau in zip(t_guesses, tau_guesses[::-1])]
    res = _best_of(lambda p: fermi_model(t, np.exp(p[0]), np.exp(p[1])) - y, starts)
    t_c, tau = (float(v) for v in np.exp(res.x))
    return EchoFit("fermi", {"t_c": t_c, "tau_phi": tau}, float(2 * res.cost))


@dataclass
class ModelComparison:
    exponential: EchoFit
    fermi: EchoFit

    @property
    def best(self) -> EchoFit:
        return self.fermi if self.fermi.preferred else self.exponential

    def as_dict(self) -> dict:
        return {"preferred": self.best.model, "exponential": self.exponential.as_dict(),
                "fermi": self.fermi.as_dict()}


def compare_models(curve: EchoCurve) -> ModelComparison:
    """Fit both decay laws and flag the one with the lower residual sum of squares."""
    exp_fit = fit_exponential(curve)
    fermi_fit = fit_fermi(curve)
    if fermi_fit.rss < exp_fit.rss:
        fermi_fit.preferred = True
    else:
        exp_fit.preferred = True
    return ModelComparison(exp_fit, fermi_fit)
