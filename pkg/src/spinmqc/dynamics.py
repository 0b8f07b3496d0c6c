"""Unitary evolution of the high-temperature deviation density matrix."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .spinops import ContractError, SectorSpectrum, SpinOperator, ZeemanBasis, sector_eig


class DensityMatrix(SpinOperator):
    """Deviation part of the density matrix (not unit trace)."""

    def __init__(self, basis: ZeemanBasis, matrix, label: str = "rho", normalization: str = "deviation"):
        super().__init__(basis, matrix, hermitian=True, label=label)
        self.normalization = normalization

    def purity(self) -> float:
        return float(np.vdot(self.matrix, self.matrix).real)


def thermal_deviation_state(basis: ZeemanBasis) -> DensityMatrix:
    """rho(0) = sum_i Iz_i, diagonal with entries m_s."""
    return DensityMatrix(basis, np.diag(basis.m_values.astype(complex)), label="rho0")


def staggered_state(basis: ZeemanBasis) -> DensityMatrix:
    """sum_i (-1)^(i-1) Iz_i with 1-based labels, i.e. + on 0-based even sites."""
    signs = np.where(np.arange(basis.n_spins) % 2 == 0, 1.0, -1.0)
    diag = (basis.bits - 0.5) @ signs
    return DensityMatrix(basis, np.diag(diag.astype(complex)), label="rho0_staggered")


def magnetization(rho: SpinOperator) -> float:
    """Tr{rho Iz}."""
    value = complex(np.diag(rho.matrix) @ rho.basis.m_values)
    scale = max(1.0, abs(value))
    if abs(value.imag) > 1e-10 * scale:
        raise ArithmeticError(f"magnetization has imaginary residue {value.imag:.3e}")
    return value.real


class Evolver:
    """Diagonalizes H once (sector by sector) and propagates states at any time."""

    def __init__(self, hamiltonian: SpinOperator):
        self.hamiltonian = hamiltonian
        self.basis = hamiltonian.basis
        self.spectrum: SectorSpectrum = sector_eig(hamiltonian)

    def propagator(self, t: float) -> np.ndarray:
        dim = self.basis.dim
        u = np.zeros((dim, dim), dtype=complex)
        for idx, w, v in self.spectrum.blocks:
            u[np.ix_(idx, idx)] = (v * np.exp(-1j * w * t)) @ v.conj().T
        return u

    def prepare(self, rho0: SpinOperator) -> _Prepared:
        """Transform rho0 into the eigenbasis once for repeated evolution."""
        if rho0.basis.n_spins != self.basis.n_spins:
            raise ContractError("state and Hamiltonian live on different bases")
        rho = rho0.matrix
        if np.iscomplexobj(rho) and not np.any(rho.imag):
            rho = rho.real
        flip = self._flip_pairs() if _is_flip_odd_diagonal(rho) else None
        pieces, flip_pieces = [], []
        for ia, wa, va in self.spectrum.blocks:
            if flip is not None and ia[0] in flip:
                flip_pieces.append(_flip_piece(self.hamiltonian.matrix, ia, np.diag(rho), self.basis))
                continue
            for ib, wb, vb in self.spectrum.blocks:
                sub = rho[np.ix_(ia, ib)]
                if not np.any(sub):
                    continue
                pieces.append((ia, ib, wa, wb, va, vb, va.conj().T @ sub @ vb))
        return _Prepared(self.basis, pieces, flip_pieces)

    def _flip_pairs(self) -> set | None:
        """Sector start indices of sectors mapped onto themselves by flipping every spin.

        Returns None when H is not invariant under the global flip.
        """
        h = self.hamiltonian.matrix
        perm = self.basis.states ^ (self.basis.dim - 1)
        scale = max(1.0, float(np.max(np.abs(h))))
        if not np.allclose(h[np.ix_(perm, perm)], h, rtol=0, atol=1e-13 * scale):
            return None
        closed = set()
        for idx, _, _ in self.spectrum.blocks:
            if len(idx) > 1 and np.array_equal(np.sort(idx ^ (self.basis.dim - 1)), np.sort(idx)):
                closed.add(idx[0])
        return closed

    def evolve(self, rho0: SpinOperator, t: float) -> DensityMatrix:
        return self.prepare(rho0).at(t)


def _is_flip_odd_diagonal(rho: np.ndarray) -> bool:
    d = np.diag(rho)
    if np.count_nonzero(rho - np.diag(d)):
        return False
    return bool(np.array_equal(d[::-1], -d))


@dataclass
class _FlipPiece:
    """A flip-closed sector split into flip-even (+) and flip-odd (-) halves.

    ``first[k] < second[k]`` are the two Zeeman states of the k-th flip pair;
    |+-k> = (|first_k> +- |second_k>)/sqrt(2).  A flip-odd diagonal state only
    connects + with -, so rho(t) is carried by the single block X(t) = <+|rho|->.
    """

    first: np.ndarray
    second: np.ndarray
    w_plus: np.ndarray
    v_plus: np.ndarray
    w_minus: np.ndarray
    v_minus: np.ndarray
    tilde: np.ndarray
    twice_m: np.ndarray

    def x_at(self, t: float):
        """(re, im) of X(t), or a complex X with im=None."""
        wa, wb, va, vb, tilde = self.w_plus, self.w_minus, self.v_plus, self.v_minus, self.tilde
        if tilde.dtype.kind == "f" and va.dtype.kind == "f" and vb.dtype.kind == "f":
            return _real_sandwich(wa, wb, va, vb, tilde, t)
        pa, pb = np.exp(-1j * wa * t), np.exp(1j * wb * t)
        return (va * pa) @ tilde @ (pb[:, None] * vb.conj().T), None

    def order_weights(self, t: float, n: int) -> np.ndarray:
        re, im = self.x_at(t)
        if im is None:
            x = re
            sym, anti = (x + x.conj().T) / 2, (x - x.conj().T) / 2
            w_sym, w_anti = np.abs(sym) ** 2, np.abs(anti) ** 2
        else:
            w_sym = ((re + re.T) / 2) ** 2 + ((im - im.T) / 2) ** 2
            w_anti = ((re - re.T) / 2) ** 2 + ((im + im.T) / 2) ** 2
        tm = self.twice_m
        diff = (tm[:, None] - tm[None, :]) // 2
        summ = (tm[:, None] + tm[None, :]) // 2
        size = 2 * n + 1
        acc = np.bincount((diff + n).ravel(), weights=w_sym.ravel(), minlength=size)
        acc += np.bincount((n - diff).ravel(), weights=w_sym.ravel(), minlength=size)
        acc += np.bincount((summ + n).ravel(), weights=w_anti.ravel(), minlength=size)
        acc += np.bincount((n - summ).ravel(), weights=w_anti.ravel(), minlength=size)
        return acc

    def zeeman_blocks(self, t: float):
        re, im = self.x_at(t)
        x = re if im is None else re - 1j * im
        xd = x.conj().T
        f, s = self.first, self.second
        yield f, f, (x + xd) / 2
        yield f, s, (xd - x) / 2
        yield s, f, (x - xd) / 2
        yield s, s, -(x + xd) / 2


def _flip_piece(h: np.ndarray, idx: np.ndarray, diag0: np.ndarray, basis: ZeemanBasis) -> _FlipPiece:
    full = basis.dim - 1
    first = np.sort(idx[idx < (idx ^ full)])
    second = first ^ full
    direct = h[np.ix_(first, first)]
    crossed = h[np.ix_(first, second)]
    w_plus, v_plus = np.linalg.eigh(direct + crossed)
    w_minus, v_minus = np.linalg.eigh(direct - crossed)
    d = diag0[first]
    if np.iscomplexobj(d) and not np.any(d.imag):
        d = d.real
    tilde = v_plus.conj().T @ (d[:, None] * v_minus)
    twice_m = np.rint(2 * basis.m_values[first]).astype(int)
    return _FlipPiece(first, second, w_plus, v_plus, w_minus, v_minus, tilde, twice_m)


def _real_sandwich(wa, wb, va, vb, tilde, t):
    """Real and imaginary parts (re, im) of va diag(e^{-i wa t}) tilde diag(e^{i wb t}) vb^T = re - i im."""
    ca, sa = np.cos(wa * t), np.sin(wa * t)
    cb, sb = np.cos(wb * t), np.sin(wb * t)
    cos_part = (np.outer(ca, cb) + np.outer(sa, sb)) * tilde
    sin_part = (np.outer(sa, cb) - np.outer(ca, sb)) * tilde
    return va @ cos_part @ vb.T, va @ sin_part @ vb.T


@dataclass
class _Prepared:
    basis: ZeemanBasis
    pieces: list
    flip_pieces: list = field(default_factory=list)

    def blocks_at(self, t: float):
        """Yield (row_idx, col_idx, block) of rho(t); blocks absent here are zero."""
        for piece in self.flip_pieces:
            yield from piece.zeeman_blocks(t)
        for ia, ib, block in self._plain_blocks(t):
            yield ia, ib, block

    def _plain_blocks(self, t: float, split: bool = False):
        for ia, ib, wa, wb, va, vb, tilde in self.pieces:
            if tilde.dtype.kind == "f" and va.dtype.kind == "f" and vb.dtype.kind == "f":
                # real eigenvectors and real transformed state: four real products
                # instead of two complex ones, exp(-i(wa-wb)t) = cos - i sin
                re, im = _real_sandwich(wa, wb, va, vb, tilde, t)
                yield ia, ib, ((re, im) if split else re - 1j * im)
                continue
            pa = np.exp(-1j * wa * t)
            pb = np.exp(1j * wb * t)
            block = (va * pa) @ tilde @ (pb[:, None] * vb.conj().T)
            yield ia, ib, ((block, None) if split else block)

    def order_weights(self, t: float) -> np.ndarray:
        """sum |rho_rs(t)|^2 per coherence order -N..N."""
        n = self.basis.n_spins
        acc = np.zeros(2 * n + 1)
        dm = self.basis.delta_m
        for piece in self.flip_pieces:
            acc += piece.order_weights(t, n)
        for ia, ib, (re, im) in self._plain_blocks(t, split=True):
            w = np.abs(re) ** 2 if im is None else re ** 2 + im ** 2
            acc += np.bincount((dm[np.ix_(ia, ib)] + n).ravel(), weights=w.ravel(), minlength=2 * n + 1)
        return acc

    def at(self, t: float) -> DensityMatrix:
        dim = self.basis.dim
        out = np.zeros((dim, dim), dtype=complex)
        for ia, ib, block in self.blocks_at(t):
            out[np.ix_(ia, ib)] = block
        return DensityMatrix(self.basis, _hermitize(out), label=f"rho({t:g})")


def _hermitize(m: np.ndarray) -> np.ndarray:
    return (m + m.conj().T) / 2


def evolve(rho0: SpinOperator, hamiltonian, t: float) -> DensityMatrix:
    """rho(t) = U(t) rho0 U(t)^dagger with U(t) = exp(-i H t).

    ``hamiltonian`` may be a SpinOperator or a prepared Evolver.
    """
    evolver = hamiltonian if isinstance(hamiltonian, Evolver) else Evolver(hamiltonian)
    if rho0.basis.n_spins != evolver.basis.n_spins:
        raise ContractError("state and Hamiltonian live on different bases")
    return evolver.evolve(rho0, t)


def evolve_ensemble(basis: ZeemanBasis, hamiltonian, t: float, weights=None) -> DensityMatrix:
    """Ensemble route: sum over Zeeman states |s> of m_s |psi_s(t)><psi_s(t)|.

    Each basis state is propagated separately, the way an ensemble average
    over initial Zeeman states is built.  Equals ``evolve`` of the thermal
    deviation state; kept as an independent cross-check.
    """
    evolver = hamiltonian if isinstance(hamiltonian, Evolver) else Evolver(hamiltonian)
    u = evolver.propagator(t)
    weights = basis.m_values if weights is None else np.asarray(weights)
    rho = np.zeros((basis.dim, basis.dim), dtype=complex)
    for s, m_s in enumerate(weights):
        if m_s == 0:
            continue
        psi = u[:, s]
        rho += m_s * np.outer(psi, psi.conj())
    return DensityMatrix(basis, _hermitize(rho), label=f"rho_ens({t:g})")


@dataclass
class Trajectory:
    times: np.ndarray
    states: list

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("trajectory times must be strictly increasing")


def trajectory(rho0: SpinOperator, hamiltonian, times) -> Trajectory:
    evolver = hamiltonian if isinstance(hamiltonian, Evolver) else Evolver(hamiltonian)
    prepared = evolver.prepare(rho0)
    times = np.asarray(times, dtype=float)
    return Trajectory(times, [prepared.at(t) for t in times])


def energy(rho: SpinOperator, hamiltonian: SpinOperator) -> float:
    return float(np.vdot(hamiltonian.matrix, rho.matrix).real)
