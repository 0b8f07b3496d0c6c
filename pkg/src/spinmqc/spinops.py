"""Operator algebra on the Zeeman product basis of N spin-1/2 nuclei.

Basis states are labelled by bit patterns in ascending order; bit ``i`` set
means spin ``i`` points up (m_i = +1/2).  Site 0 is the least significant bit,
so in Kronecker products it is the *last* factor.

Hamiltonians are stored in angular-frequency units (rad/s) with hbar absorbed,
so the evolution phase of an eigenvalue ``lam`` after time ``t`` is ``lam * t``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

HARD_MAX_SPINS = 14
DEFAULT_MAX_SPINS = 12

HERMITIAN_ATOL = 1e-12
UNITARY_ATOL = 1e-10


class SizeError(ValueError):
    """Requested system exceeds the dense-storage caps."""


class ContractError(ValueError):
    """An operator violates a structural precondition (Hermiticity, shape)."""


@dataclass(frozen=True, eq=False)
class ZeemanBasis:
    n_spins: int
    states: np.ndarray = field(repr=False)
    m_values: np.ndarray = field(repr=False)

    @property
    def dim(self) -> int:
        return len(self.states)

    @cached_property
    def bits(self) -> np.ndarray:
        """(dim, N) array of 0/1 occupation, column i is spin i."""
        return (self.states[:, None] >> np.arange(self.n_spins)) & 1

    @cached_property
    def delta_m(self) -> np.ndarray:
        """Integer matrix of coherence orders m_r - m_s."""
        m2 = (2 * self.m_values).astype(np.int64)
        return (m2[:, None] - m2[None, :]) // 2

    def count(self, m: float) -> int:
        return int(np.count_nonzero(self.m_values == m))


def build_basis(n_spins: int, max_spins: int = HARD_MAX_SPINS) -> ZeemanBasis:
    """Enumerate the 2**n_spins Zeeman states in ascending bit order."""
    cap = min(max_spins, HARD_MAX_SPINS)
    if not 1 <= n_spins <= cap:
        raise SizeError(f"n_spins={n_spins} outside supported range 1..{cap}")
    states = np.arange(2**n_spins, dtype=np.int64)
    n_up = np.zeros_like(states)
    for i in range(n_spins):
        n_up += (states >> i) & 1
    m_values = n_up - n_spins / 2.0
    return ZeemanBasis(n_spins, states, m_values)


class SpinOperator:
    """Dense operator on a Zeeman basis.

    ``hermitian`` is a tag checked on construction when set, so a tagged
    operator is guaranteed Hermitian to ``HERMITIAN_ATOL`` (relative to its
    largest entry when that exceeds one).
    """

    def __init__(self, basis: ZeemanBasis, matrix, hermitian: bool = False, label: str = ""):
        matrix = np.asarray(matrix)
        if matrix.shape != (basis.dim, basis.dim):
            raise ContractError(
                f"matrix shape {matrix.shape} does not match basis dimension {basis.dim}"
            )
        self.basis = basis
        self.matrix = matrix
        self.label = label
        self.hermitian = False
        if hermitian:
            check_hermitian(self)
            self.hermitian = True

    def __repr__(self) -> str:
        tag = ", hermitian" if self.hermitian else ""
        return f"SpinOperator(N={self.basis.n_spins}{tag}, label={self.label!r})"

    def _wrap(self, matrix, hermitian=False, label=""):
        return SpinOperator(self.basis, matrix, hermitian=hermitian, label=label)

    def _other(self, other):
        if isinstance(other, SpinOperator):
            if other.basis.n_spins != self.basis.n_spins:
                raise ContractError("operators live on different bases")
            return other.matrix
        return NotImplemented

    def __add__(self, other):
        m = self._other(other)
        if m is NotImplemented:
            return m
        return self._wrap(self.matrix + m, hermitian=self.hermitian and other.hermitian)

    def __sub__(self, other):
        m = self._other(other)
        if m is NotImplemented:
            return m
        return self._wrap(self.matrix - m, hermitian=self.hermitian and other.hermitian)

    def __neg__(self):
        return self._wrap(-self.matrix, hermitian=self.hermitian, label=f"-{self.label}")

    def __mul__(self, scalar):
        if not np.isscalar(scalar):
            return NotImplemented
        herm = self.hermitian and np.isreal(scalar)
        return self._wrap(self.matrix * scalar, hermitian=herm)

    __rmul__ = __mul__

    def __matmul__(self, other):
        m = self._other(other)
        if m is NotImplemented:
            return m
        return self._wrap(self.matrix @ m)

    def dagger(self) -> SpinOperator:
        return self._wrap(self.matrix.conj().T, hermitian=self.hermitian)

    def trace(self) -> complex:
        return complex(np.trace(self.matrix))

    def commutator(self, other: SpinOperator) -> SpinOperator:
        return self @ other - other @ self


def hermiticity_defect(matrix: np.ndarray) -> float:
    """max |A - A^dagger|, relative to max |A| when the operator carries units."""
    diff = np.max(np.abs(matrix - matrix.conj().T)) if matrix.size else 0.0
    scale = max(1.0, float(np.max(np.abs(matrix)))) if matrix.size else 1.0
    return float(diff / scale)


def check_hermitian(op: SpinOperator, atol: float = HERMITIAN_ATOL) -> None:
    defect = hermiticity_defect(op.matrix)
    if defect >= atol:
        raise ContractError(f"operator {op.label!r} is not Hermitian (defect {defect:.3e})")


# single-site matrices in the local (down, up) order used by the basis
_LOCAL = {
    "x": np.array([[0, 0.5], [0.5, 0]], dtype=complex),
    "y": np.array([[0, 0.5j], [-0.5j, 0]], dtype=complex),
    "z": np.array([[-0.5, 0], [0, 0.5]], dtype=complex),
    "+": np.array([[0, 0], [1, 0]], dtype=complex),
    "-": np.array([[0, 1], [0, 0]], dtype=complex),
}
_AXIS_ALIASES = {"−": "-", "minus": "-", "plus": "+"}


def local_matrix(axis: str) -> np.ndarray:
    """2x2 single-spin operator in (down, up) order."""
    axis = _AXIS_ALIASES.get(axis, axis)
    try:
        return _LOCAL[axis].copy()
    except KeyError:
        raise ValueError(f"unknown spin axis {axis!r}; expected one of x, y, z, +, -") from None


def embed(basis: ZeemanBasis, site_ops: dict[int, np.ndarray]) -> np.ndarray:
    """Kronecker product placing ``site_ops[i]`` on site i and identity elsewhere."""
    out = np.ones((1, 1), dtype=complex)
    for k in reversed(range(basis.n_spins)):
        out = np.kron(out, site_ops.get(k, np.eye(2)))
    return out


def single_spin_op(basis: ZeemanBasis, site: int, axis: str) -> SpinOperator:
    if not 0 <= site < basis.n_spins:
        raise IndexError(f"site {site} out of range for {basis.n_spins} spins")
    local = local_matrix(axis)
    herm = axis in ("x", "y", "z")
    return SpinOperator(basis, embed(basis, {site: local}), hermitian=herm, label=f"I{site}{axis}")


def total_spin_op(basis: ZeemanBasis, axis: str) -> SpinOperator:
    """Collective operator sum_i I_i^axis."""
    if axis == "z":
        return SpinOperator(basis, np.diag(basis.m_values.astype(complex)), hermitian=True, label="Iz")
    mat = sum(single_spin_op(basis, i, axis).matrix for i in range(basis.n_spins))
    return SpinOperator(basis, mat, hermitian=axis in ("x", "y"), label=f"I{axis}")


@dataclass(frozen=True, eq=False)
class Spectrum:
    """Eigen-decomposition H = V diag(eigenvalues) V^dagger."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    basis: ZeemanBasis | None = None

    def reconstruct(self) -> np.ndarray:
        v = self.eigenvectors
        return (v * self.eigenvalues) @ v.conj().T


def hermitian_eig(op) -> Spectrum:
    """Full spectrum with eigenvalues ascending; LAPACK ``eigh`` does the work.

    Accepts a SpinOperator or a bare square array.
    """
    if isinstance(op, SpinOperator):
        matrix, basis = op.matrix, op.basis
    else:
        matrix, basis = np.asarray(op), None
    defect = hermiticity_defect(matrix)
    if defect >= HERMITIAN_ATOL:
        raise ContractError(f"eigendecomposition needs a Hermitian operator (defect {defect:.3e})")
    w, v = np.linalg.eigh(matrix)
    return Spectrum(w, v, basis)


def propagator(spectrum: Spectrum, t: float):
    """U(t) = exp(-i H t) from a spectrum of H (rad/s); negative t runs backwards.

    Returns a SpinOperator when the spectrum knows its basis, else an array.
    """
    v = spectrum.eigenvectors
    phases = np.exp(-1j * spectrum.eigenvalues * t)
    u = (v * phases) @ v.conj().T
    if spectrum.basis is None:
        return u
    return SpinOperator(spectrum.basis, u, label=f"U({t:g})")


def unitarity_defect(matrix: np.ndarray) -> float:
    return float(np.max(np.abs(matrix.conj().T @ matrix - np.eye(len(matrix)))))


def sectors(matrix: np.ndarray, atol: float = 0.0) -> list[np.ndarray]:
    """Index sets of the connected components of the operator's coupling graph.

    A Hermitian operator is block diagonal on these sets, so its spectrum can
    be assembled blockwise.
    """
    mask = np.abs(matrix) > atol
    n_comp, labels = connected_components(csr_matrix(mask), directed=False)
    order = np.argsort(labels, kind="stable")
    bounds = np.flatnonzero(np.diff(labels[order])) + 1
    return np.split(order, bounds)


@dataclass(frozen=True, eq=False)
class SectorSpectrum:
    """Blockwise spectrum of a Hermitian operator over its decoupled sectors."""

    basis: ZeemanBasis
    blocks: tuple  # of (indices, eigenvalues, eigenvectors)

    def to_spectrum(self) -> Spectrum:
        dim = self.basis.dim
        w = np.empty(dim)
        v = np.zeros((dim, dim), dtype=complex)
        col = 0
        for idx, bw, bv in self.blocks:
            k = len(idx)
            w[col:col + k] = bw
            v[np.ix_(idx, np.arange(col, col + k))] = bv
            col += k
        order = np.argsort(w, kind="stable")
        return Spectrum(w[order], v[:, order], self.basis)


def sector_eig(op: SpinOperator) -> SectorSpectrum:
    check_hermitian(op)
    mat = op.matrix
    real = np.allclose(mat.imag, 0.0, atol=0.0) if np.iscomplexobj(mat) else True
    if real:
        mat = mat.real
    blocks = []
    for idx in sectors(mat):
        w, v = np.linalg.eigh(mat[np.ix_(idx, idx)])
        blocks.append((idx, w, v))
    return SectorSpectrum(op.basis, tuple(blocks))
