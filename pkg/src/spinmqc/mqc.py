"""Multiple-quantum coherence intensities.

J_M(t) = Tr{rho_M rho_-M} / Tr{rho(0)^2}, where rho_M keeps the elements of
rho(t) whose states differ in total magnetic quantum number by M.  With this
denominator the signed orders sum to one at every time.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from .dynamics import Evolver, thermal_deviation_state
from .spinops import SpinOperator, ZeemanBasis

NEGATIVE_TOL = 1e-12
DEFAULT_PHASES = 32


class NumericalHealthError(ArithmeticError):
    """A computed intensity violates a bound it must satisfy exactly."""


def coherence_decompose(rho: SpinOperator, basis: ZeemanBasis | None = None) -> dict[int, np.ndarray]:
    """Split rho into blocks rho_M (full-size, zero outside m_r - m_s = M)."""
    basis = basis or rho.basis
    dm = basis.delta_m
    n = basis.n_spins
    blocks = {}
    for order in range(-n, n + 1):
        blocks[order] = np.where(dm == order, rho.matrix, 0)
    return blocks


def _orders(n_spins: int) -> np.ndarray:
    return np.arange(-n_spins, n_spins + 1)


def _checked(raw: np.ndarray, orders: np.ndarray) -> dict[int, float]:
    bad = raw < -NEGATIVE_TOL
    if np.any(bad):
        worst = orders[bad][np.argmin(raw[bad])]
        raise NumericalHealthError(f"J_{worst} = {raw.min():.3e} is negative beyond tolerance")
    raw = np.where(raw < 0, 0.0, raw)
    return {int(m): float(v) for m, v in zip(orders, raw)}


def _weights_by_order(basis: ZeemanBasis, blocks) -> np.ndarray:
    """Sum |rho_rs|^2 per coherence order over (row_idx, col_idx, block) pieces."""
    n = basis.n_spins
    acc = np.zeros(2 * n + 1)
    dm = basis.delta_m
    for ia, ib, block in blocks:
        sub = dm[np.ix_(ia, ib)]
        acc += np.bincount((sub + n).ravel(), weights=(np.abs(block) ** 2).ravel(), minlength=2 * n + 1)
    return acc


def jm_direct(rho_t: SpinOperator, norm: float | None = None) -> dict[int, float]:
    """Intensities of every order -N..N from an evolved density matrix.

    ``norm`` defaults to Tr{rho_t^2}, which equals Tr{rho(0)^2} under unitary
    evolution.
    """
    basis = rho_t.basis
    if norm is None:
        norm = float(np.vdot(rho_t.matrix, rho_t.matrix).real)
    if not norm > 0:
        raise ValueError("initial state has zero norm")
    full = np.arange(basis.dim)
    raw = _weights_by_order(basis, [(full, full, rho_t.matrix)]) / norm
    return _checked(raw, _orders(basis.n_spins))


def jm_phase_encoding(rho0: SpinOperator, hamiltonian, t: float, n_phases: int = DEFAULT_PHASES,
                      max_order: int | None = None) -> dict[int, float]:
    """Intensities from the phase-encoded echo signal.

    S(phi_k) = Tr{exp(i H_phi t) rho(t) exp(-i H_phi t) rho0}, where
    H_phi = exp(-i phi Iz) H exp(i phi Iz) and phi_k = 2 pi k / n_phases.  A
    discrete Fourier transform over k separates the orders.
    """
    evolver = hamiltonian if isinstance(hamiltonian, Evolver) else Evolver(hamiltonian)
    basis = rho0.basis
    max_order = basis.n_spins if max_order is None else max_order
    if max_order > n_phases // 2 - 1:
        raise ValueError(
            f"n_phases={n_phases} aliases orders above {n_phases // 2 - 1}; need max_order <= that")
    norm = float(np.vdot(rho0.matrix, rho0.matrix).real)
    if not norm > 0:
        raise ValueError("initial state has zero norm")

    u = evolver.propagator(t)
    rho_t = u @ rho0.matrix @ u.conj().T
    u_dag = u.conj().T
    dm = basis.delta_m
    diagonal = np.count_nonzero(rho0.matrix - np.diag(np.diag(rho0.matrix))) == 0
    signal = np.empty(n_phases, dtype=complex)
    for k in range(n_phases):
        phi = 2 * np.pi * k / n_phases
        # exp(i H_phi t) = R U^dagger R^dagger with R = exp(-i phi Iz): elementwise phases
        back = u_dag * np.exp(-1j * phi * dm)
        left = back @ rho_t
        if diagonal:
            signal[k] = np.sum(np.einsum("ij,ji->i", left, back.conj().T) * np.diag(rho0.matrix))
        else:
            signal[k] = np.trace(left @ back.conj().T @ rho0.matrix)
    # S(phi) = sum_M exp(i M phi) J_M norm
    spectrum = np.fft.fft(signal) / n_phases / norm
    orders = np.arange(-max_order, max_order + 1)
    raw = spectrum[orders % n_phases]
    if np.max(np.abs(raw.imag)) > 1e-9:
        raise NumericalHealthError(f"phase-encoded intensities have imaginary part {np.abs(raw.imag).max():.2e}")
    return _checked(raw.real, orders)


def analytic_jm_homogeneous(n_spins: int, d: float, t):
    """Free-fermion intensities (J0, J+-2) of a homogeneous nearest-neighbour DQ chain.

    J0 = (1/N) sum_n cos^2(4 d t cos(pi n / (N+1))), J2 = (1/2N) sum_n sin^2(...).
    ``d`` in rad/s, ``t`` in seconds (scalar or array).
    """
    if n_spins < 2:
        raise ValueError("need at least two spins")
    t = np.asarray(t, dtype=float)
    k = np.cos(np.pi * np.arange(1, n_spins + 1) / (n_spins + 1))
    arg = 4 * d * np.multiply.outer(t, k)
    j0 = np.mean(np.cos(arg) ** 2, axis=-1)
    j2 = np.mean(np.sin(arg) ** 2, axis=-1) / 2
    return j0, j2


@dataclass
class MqcSeries:
    times: np.ndarray
    intensities: dict  # order -> array over times
    normalization: str = "sum-to-one"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.intensities = {int(m): np.asarray(v, dtype=float) for m, v in sorted(self.intensities.items())}

    @property
    def orders(self) -> list[int]:
        return sorted(self.intensities)

    def __getitem__(self, order: int) -> np.ndarray:
        return self.intensities.get(int(order), np.zeros_like(self.times))

    def sum_check(self) -> np.ndarray:
        return np.sum([v for v in self.intensities.values()], axis=0)

    def max_abs_diff(self, other: MqcSeries) -> float:
        orders = set(self.orders) | set(other.orders)
        return float(max(np.max(np.abs(self[m] - other[m])) for m in orders))

    def to_csv(self, stream=None, comments: dict | None = None, max_order: int | None = None) -> str:
        """Columns t_us, J0, J2, ..., sum_check; each JM is the signed order +M."""
        top = max(self.orders) if max_order is None else max_order
        cols = [m for m in range(0, top + 1, 2)]
        buf = io.StringIO()
        for key, value in (comments or {}).items():
            buf.write(f"# {key}: {value}\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["t_us"] + [f"J{m}" for m in cols] + ["sum_check"])
        total = self.sum_check()
        for k, t in enumerate(self.times):
            writer.writerow([f"{t * 1e6:.6f}"] + [f"{self[m][k]:.15e}" for m in cols] + [f"{total[k]:.15e}"])
        text = buf.getvalue()
        if stream is not None:
            stream.write(text)
        return text

    @classmethod
    def from_csv(cls, text: str) -> MqcSeries:
        lines = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
        rows = list(csv.reader(lines))
        header, body = rows[0], np.array(rows[1:], dtype=float)
        times = body[:, 0] * 1e-6
        intens = {}
        for c, name in enumerate(header):
            if name.startswith("J"):
                m = int(name[1:])
                intens[m] = body[:, c]
                if m:
                    intens[-m] = body[:, c]
        return cls(times, intens)


class MqcSimulation:
    """Bundle of (Hamiltonian, initial state, method) that yields an MqcSeries on any grid.

    ``collinear`` records that every coupling shares one angular factor, which
    licenses powder averaging by time rescaling.
    """

    def __init__(self, hamiltonian: SpinOperator, rho0: SpinOperator | None = None, method: str = "direct",
                 n_phases: int = DEFAULT_PHASES, collinear: bool = False):
        if method not in ("direct", "phase"):
            raise ValueError(f"unknown method {method!r}")
        self.hamiltonian = hamiltonian
        self.basis = hamiltonian.basis
        self.rho0 = rho0 if rho0 is not None else thermal_deviation_state(self.basis)
        self.method = method
        self.n_phases = n_phases
        self.collinear = collinear
        self.evolver = Evolver(hamiltonian)
        self._prepared = self.evolver.prepare(self.rho0)
        self.norm = float(np.vdot(self.rho0.matrix, self.rho0.matrix).real)

    def at(self, t: float) -> dict[int, float]:
        if self.method == "phase":
            return jm_phase_encoding(self.rho0, self.evolver, t, self.n_phases)
        raw = self._prepared.order_weights(t) / self.norm
        return _checked(raw, _orders(self.basis.n_spins))

    def series(self, times, executor=None) -> MqcSeries:
        times = np.asarray(times, dtype=float)
        if executor is None:
            rows = [self.at(t) for t in times]
        else:
            rows = list(executor.map(self.at, times))
        orders = sorted(rows[0]) if rows else []
        intens = {m: np.array([r[m] for r in rows]) for m in orders}
        return MqcSeries(times, intens, meta={"method": self.method})


class AnalyticSimulation:
    """Closed-form J_0, J_+-2 of a homogeneous nearest-neighbour DQ chain, shaped like MqcSimulation."""

    method = "analytic"
    collinear = True

    def __init__(self, n_spins: int, d: float):
        if n_spins < 2:
            raise ValueError("the closed form needs at least two spins")
        self.n_spins = n_spins
        self.d = d

    def series(self, times, executor=None) -> MqcSeries:
        times = np.asarray(times, dtype=float)
        j0, j2 = analytic_jm_homogeneous(self.n_spins, self.d, times)
        intens = {m: np.zeros_like(times) for m in _orders(self.n_spins)}
        intens[0], intens[2], intens[-2] = j0, j2, j2.copy()
        return MqcSeries(times, intens, meta={"method": "analytic"})


def _resample(series: MqcSeries, times: np.ndarray) -> MqcSeries:
    out = {}
    for m in series.orders:
        spline = CubicSpline(series.times, series[m])
        out[m] = spline(times)
    return MqcSeries(times, out)


def powder_average(theta0, nodes, times=None, executor=None) -> MqcSeries:
    """Orientation average of a collinear chain by time rescaling.

    J_powder(t) = sum_k w_k J(t |3 cos^2 theta_k - 1| / 2).  ``theta0`` is an
    MqcSimulation at the orientation of maximum coupling (evaluated exactly at
    the rescaled times) or an MqcSeries sampled on a grid starting at t=0
    (cubic-spline resampled).  The absolute value is exact because every
    built Hamiltonian is real and J_M(-t) = J_M(t).
    """
    from .lattice import angular_factor

    if isinstance(theta0, (MqcSimulation, AnalyticSimulation)):
        if not theta0.collinear:
            raise ValueError("time rescaling needs a collinear chain; use powder_average_resimulated")
        if times is None:
            raise ValueError("times are required when averaging a simulation")
        evaluate = lambda ts: theta0.series(ts, executor)  # noqa: E731
    elif isinstance(theta0, MqcSeries):
        if times is None:
            times = theta0.times
        if theta0.times[0] != 0 or np.max(times) > theta0.times[-1]:
            raise ValueError("sampled series must start at t=0 and cover the requested times")
        evaluate = lambda ts: _resample(theta0, ts)  # noqa: E731
    else:
        raise TypeError("theta0 must be a simulation or an MqcSeries")

    times = np.asarray(times, dtype=float)
    thetas = np.array([n[0] for n in nodes])
    weights = np.array([n[1] for n in nodes])
    scales = np.abs(angular_factor(thetas))
    stretched = np.multiply.outer(scales, times).ravel()
    # evaluate every distinct rescaled time once
    uniq, inverse = np.unique(stretched, return_inverse=True)
    sampled = evaluate(uniq)
    out = {}
    for m in sampled.orders:
        values = sampled[m][inverse].reshape(len(scales), len(times))
        out[m] = weights @ values
    return MqcSeries(times, out, meta={"powder_order": len(nodes)})


def powder_average_resimulated(simulate, nodes, times, executor=None) -> MqcSeries:
    """Orientation average by re-simulating at each node.

    ``nodes`` holds (orientation, weight) pairs and ``simulate(orientation)``
    returns an MqcSimulation; the orientation may be an angle or a field direction.
    """
    times = np.asarray(times, dtype=float)
    acc = None
    for orientation, w in nodes:
        s = simulate(orientation).series(times, executor)
        if acc is None:
            acc = {m: w * s[m] for m in s.orders}
        else:
            for m in s.orders:
                acc[m] = acc[m] + w * s[m]
    return MqcSeries(times, acc, meta={"powder_order": len(nodes), "resimulated": True})
