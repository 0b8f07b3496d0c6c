"""Spin geometries, dipolar couplings and orientation averages.

Distances are in Angstrom, couplings in rad/s (d_ij / hbar).  The dipolar
prefactor is the SI form mu0 gamma^2 hbar / (4 pi r^3), so a proton pair at
3.44 A along the field couples at 2 pi x 2.95 kHz.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy import constants

log = logging.getLogger(__name__)

ANGSTROM = 1e-10
MU0_OVER_4PI = constants.mu_0 / (4 * np.pi)
GAMMA_PROTON = constants.physical_constants["proton gyromag. ratio"][0]  # rad s^-1 T^-1

# hydroxyapatite OH chains
HAP_R_IN = 3.44  # in-chain proton spacing, c/2
HAP_R_X = 9.42  # chain-to-chain distance, a
HAP_C = 2 * HAP_R_IN

MAGIC_ANGLE = float(np.arccos(1 / np.sqrt(3)))

_SHELL_RTOL = 1e-9


class Truncation(str, Enum):
    NN = "nn"
    NNN = "nnn"
    FULL = "full"


@dataclass(eq=False)
class SpinGeometry:
    positions: np.ndarray
    field_direction: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    gamma: float = GAMMA_PROTON
    label: str = ""
    # which chain each spin belongs to; used by the cross-chain perturbation
    chain_ids: np.ndarray | None = None

    def __post_init__(self):
        self.positions = np.atleast_2d(np.asarray(self.positions, dtype=float))
        if self.positions.shape[1] != 3:
            raise ValueError("positions must be a list of 3-vectors")
        b = np.asarray(self.field_direction, dtype=float)
        norm = np.linalg.norm(b)
        if norm == 0:
            raise ValueError("field direction must be nonzero")
        self.field_direction = b / norm
        if self.chain_ids is None:
            self.chain_ids = np.zeros(len(self.positions), dtype=int)
        self.chain_ids = np.asarray(self.chain_ids, dtype=int)
        dist = self.distances()
        np.fill_diagonal(dist, np.inf)
        if len(self.positions) > 1 and dist.min() <= 0:
            raise ValueError("spin positions must be pairwise distinct")

    @property
    def n_spins(self) -> int:
        return len(self.positions)

    def distances(self) -> np.ndarray:
        diff = self.positions[:, None, :] - self.positions[None, :, :]
        return np.linalg.norm(diff, axis=-1)

    def is_collinear(self, atol: float = 1e-9) -> bool:
        """True when all spins lie on one line, so every pair shares one angle to the field."""
        if self.n_spins < 3:
            return True
        p = self.positions - self.positions[0]
        axis = p[np.argmax(np.linalg.norm(p, axis=1))]
        axis = axis / np.linalg.norm(axis)
        perp = p - np.outer(p @ axis, axis)
        return bool(np.max(np.linalg.norm(perp, axis=1)) < atol * max(1.0, np.abs(p).max()))

    def with_field(self, field_direction) -> SpinGeometry:
        return SpinGeometry(self.positions, field_direction, self.gamma, self.label, self.chain_ids)


@dataclass(eq=False)
class CouplingSet:
    n_spins: int
    couplings: list  # of (i, j, d_ij) with i < j, d in rad/s
    truncation: Truncation = Truncation.FULL

    def __post_init__(self):
        seen = set()
        for i, j, _ in self.couplings:
            if not 0 <= i < j < self.n_spins:
                raise ValueError(f"invalid pair ({i}, {j}) for {self.n_spins} spins")
            if (i, j) in seen:
                raise ValueError(f"duplicate pair ({i}, {j})")
            seen.add((i, j))

    def __len__(self) -> int:
        return len(self.couplings)

    def pairs(self) -> list[tuple[int, int]]:
        return [(i, j) for i, j, _ in self.couplings]

    def scaled(self, factor: float) -> CouplingSet:
        return CouplingSet(self.n_spins, [(i, j, d * factor) for i, j, d in self.couplings], self.truncation)

    def subset(self, keep) -> CouplingSet:
        keep = set(keep)
        return CouplingSet(self.n_spins, [c for c in self.couplings if (c[0], c[1]) in keep], self.truncation)

    @property
    def d_max(self) -> float:
        return max((abs(d) for _, _, d in self.couplings), default=0.0)


def dipolar_coupling(r_vec, field_direction=(0.0, 0.0, 1.0), gamma: float = GAMMA_PROTON) -> float:
    """Secular dipolar coupling d/hbar in rad/s for an internuclear vector in Angstrom.

    d = (mu0/4pi) gamma^2 hbar (3 cos^2 theta - 1) / (2 r^3)
    """
    r_vec = np.asarray(r_vec, dtype=float)
    r = np.linalg.norm(r_vec)
    if r == 0:
        raise ValueError("internuclear vector has zero length")
    b = np.asarray(field_direction, dtype=float)
    cos_t = float(r_vec @ b) / (r * np.linalg.norm(b))
    r_si = r * ANGSTROM
    return MU0_OVER_4PI * gamma**2 * constants.hbar * (3 * cos_t**2 - 1) / (2 * r_si**3)


def angular_factor(theta) -> np.ndarray:
    """(3 cos^2 theta - 1) / 2, the common rescaling of a collinear chain."""
    return (3 * np.cos(theta) ** 2 - 1) / 2


def hap_chain(n_spins: int, theta: float = 0.0, spacing: float = HAP_R_IN) -> SpinGeometry:
    """Collinear proton chain along z with the field tilted by ``theta`` in the xz plane."""
    if n_spins < 2:
        raise ValueError("a chain needs at least two spins")
    positions = np.zeros((n_spins, 3))
    positions[:, 2] = spacing * np.arange(n_spins)
    field_dir = np.array([np.sin(theta), 0.0, np.cos(theta)])
    return SpinGeometry(positions, field_dir, GAMMA_PROTON, label=f"hap-chain-{n_spins}")


def hap_ladder(n_per_chain: int, theta: float = 0.0, phi: float = 0.0,
               r_in: float = HAP_R_IN, r_x: float = HAP_R_X, axial_offset: float = 0.0) -> SpinGeometry:
    """Two parallel chains at distance ``r_x``; spins of chain 1 follow those of chain 0."""
    z = r_in * np.arange(n_per_chain)
    a = np.column_stack([np.zeros(n_per_chain), np.zeros(n_per_chain), z])
    b = np.column_stack([np.full(n_per_chain, r_x), np.zeros(n_per_chain), z + axial_offset])
    field_dir = np.array([np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi), np.cos(theta)])
    ids = np.repeat([0, 1], n_per_chain)
    return SpinGeometry(np.vstack([a, b]), field_dir, GAMMA_PROTON, f"hap-ladder-{n_per_chain}", ids)


def cubic_cluster(n_spins: int, spacing: float = 3.0, field_direction=(1.0, 2.0, 3.0)) -> SpinGeometry:
    """First ``n_spins`` sites of a simple-cubic fragment, filled shell by shell from the origin."""
    rng = range(-2, 3)
    pts = np.array([(x, y, z) for x in rng for y in rng for z in rng], dtype=float)
    order = np.lexsort((pts[:, 0], pts[:, 1], pts[:, 2], np.linalg.norm(pts, axis=1)))
    return SpinGeometry(pts[order[:n_spins]] * spacing, field_direction, GAMMA_PROTON, f"cubic-{n_spins}")


def _shells(dist_row: np.ndarray, self_index: int) -> list[np.ndarray]:
    """Partner indices grouped by equal distance, nearest shell first."""
    others = np.delete(np.arange(len(dist_row)), self_index)
    d = dist_row[others]
    order = np.argsort(d, kind="stable")
    shells, current, ref = [], [], None
    for k in order:
        if ref is not None and not np.isclose(d[k], ref, rtol=_SHELL_RTOL, atol=0):
            shells.append(np.array(current))
            current = []
        if not current:
            ref = d[k]
        current.append(others[k])
    if current:
        shells.append(np.array(current))
    return shells


def neighbor_pairs(geom: SpinGeometry, truncation: Truncation | str) -> list[tuple[int, int]]:
    truncation = Truncation(truncation)
    n = geom.n_spins
    if truncation is Truncation.FULL:
        return [(i, j) for i in range(n) for j in range(i + 1, n)]
    depth = 1 if truncation is Truncation.NN else 2
    dist = geom.distances()
    keep = set()
    for i in range(n):
        shells = _shells(dist[i], i)
        for shell in shells[:depth]:
            if len(shell) > 2:
                log.warning(
                    "spin %d has %d equidistant partners; neighbour ranking is not chain-like, "
                    "keeping the whole shell in index order", i, len(shell))
            for j in shell:
                keep.add((min(i, j), max(i, j)))
    return sorted(keep)


def build_couplings(geom: SpinGeometry, truncation: Truncation | str = Truncation.FULL) -> CouplingSet:
    truncation = Truncation(truncation)
    pairs = neighbor_pairs(geom, truncation)
    couplings = []
    for i, j in pairs:
        d = dipolar_coupling(geom.positions[j] - geom.positions[i], geom.field_direction, geom.gamma)
        couplings.append((i, j, d))
    return CouplingSet(geom.n_spins, couplings, truncation)


def homogeneous_chain(n_spins: int, d: float, truncation: Truncation | str = Truncation.NN,
                      nnn_ratio: float = 1 / 8) -> CouplingSet:
    """Uniform chain couplings without geometry; NNN pairs get ``nnn_ratio * d``."""
    truncation = Truncation(truncation)
    couplings = [(i, i + 1, d) for i in range(n_spins - 1)]
    if truncation is Truncation.NNN:
        couplings += [(i, i + 2, d * nnn_ratio) for i in range(n_spins - 2)]
    elif truncation is Truncation.FULL:
        couplings += [(i, j, d / (j - i) ** 3) for i in range(n_spins) for j in range(i + 2, n_spins)]
    return CouplingSet(n_spins, sorted(couplings), truncation)


def powder_nodes(order: int = 40) -> list[tuple[float, float]]:
    """Gauss-Legendre nodes in u = cos(theta) on [0, 1], weights summing to one.

    A single chain is axially symmetric about its own axis, so only the polar
    angle between chain and field matters.
    """
    if order < 2:
        raise ValueError("quadrature order must be at least 2")
    x, w = np.polynomial.legendre.leggauss(order)
    u = (x + 1) / 2
    w = w / 2
    return [(float(np.arccos(ui)), float(wi)) for ui, wi in zip(u, w)]


def sphere_nodes(order: int = 40, n_phi: int | None = None):
    """Product rule over the hemisphere: Gauss-Legendre in cos(theta), uniform in phi.

    Returns field directions (K, 3) and weights summing to one.
    """
    n_phi = n_phi or 2 * order
    x, w = np.polynomial.legendre.leggauss(order)
    u = (x + 1) / 2
    w = w / 2
    phi = 2 * np.pi * np.arange(n_phi) / n_phi
    s = np.sqrt(1 - u**2)
    dirs = np.stack([
        np.outer(s, np.cos(phi)), np.outer(s, np.sin(phi)), np.outer(u, np.ones(n_phi))
    ], axis=-1).reshape(-1, 3)
    weights = np.repeat(w / n_phi, n_phi)
    return dirs, weights


def coupling_anisotropy(r_in: float = HAP_R_IN, r_x: float = HAP_R_X) -> float:
    """In-chain over cross-chain coupling at the orientation maximizing the in-chain one."""
    if r_in <= 0 or r_x <= 0:
        raise ValueError("distances must be positive")
    return 2 * (r_x / r_in) ** 3


def hexagonal_neighbors(r_x: float = HAP_R_X, r_in: float = HAP_R_IN, axial_offset: float = HAP_C / 4,
                        n_cells: int = 5, nearest_only: bool = True) -> np.ndarray:
    """Cross-chain partner vectors from a reference spin to the six surrounding chains.

    Each neighbour chain is shifted along the axis by ``axial_offset``.  With
    ``nearest_only`` the closest shell of partners is kept, otherwise every
    spin within ``n_cells`` unit cells (c = 2 r_in) along the axis.
    """
    zs = r_in * np.arange(-2 * n_cells, 2 * n_cells + 1) + axial_offset
    vecs = []
    for k in range(6):
        a = np.pi / 3 * k
        for z in zs:
            vecs.append((r_x * np.cos(a), r_x * np.sin(a), z))
    vecs = np.array(vecs)
    if nearest_only:
        r = np.linalg.norm(vecs, axis=1)
        vecs = vecs[np.isclose(r, r.min(), rtol=_SHELL_RTOL, atol=0)]
    return vecs


def in_chain_partners(r_in: float = HAP_R_IN, n_cells: int = 5) -> np.ndarray:
    zs = r_in * np.arange(-2 * n_cells, 2 * n_cells + 1)
    zs = zs[zs != 0]
    return np.column_stack([np.zeros_like(zs), np.zeros_like(zs), zs])


def local_second_moment(partners: np.ndarray, field_direction) -> float:
    """Van Vleck sum over partners of ((3 cos^2 - 1) / r^3)^2, geometric units (A^-6)."""
    partners = np.atleast_2d(partners)
    r = np.linalg.norm(partners, axis=1)
    cos_t = partners @ np.asarray(field_direction) / r
    return float(np.sum(((3 * cos_t**2 - 1) / r**3) ** 2))


def second_moment_ratio(r_in: float = HAP_R_IN, r_x: float = HAP_R_X, quadrature_order: int = 40,
                        axial_offset: float = HAP_C / 4, n_cells: int = 5,
                        cross_model: str = "nearest-shell", n_phi: int | None = None) -> float:
    """Orientation average sqrt(<M2_in / M2_x>) for a proton in a hexagonal chain array.

    M2_in is the in-chain lattice sum out to ``n_cells`` unit cells.  With the
    default ``cross_model="nearest-shell"``, M2_x is the mean second moment per
    partner in the closest cross-chain shell, which puts the in-chain and
    cross-chain moments on the same per-coupling footing as the pair ratio
    (r_x / r_in)^3.  ``cross_model="lattice"`` instead sums over every spin in
    the six neighbour chains within the cutoff.
    """
    if quadrature_order < 16:
        raise ValueError("quadrature_order must be at least 16")
    inner = in_chain_partners(r_in, n_cells)
    if cross_model == "nearest-shell":
        cross = hexagonal_neighbors(r_x, r_in, axial_offset, n_cells, nearest_only=True)
        per = len(cross)
    elif cross_model == "lattice":
        cross = hexagonal_neighbors(r_x, r_in, axial_offset, n_cells, nearest_only=False)
        per = 1
    else:
        raise ValueError(f"unknown cross_model {cross_model!r}")
    if len(inner) == 0 or len(cross) == 0:
        raise ValueError("empty partner set")
    dirs, weights = sphere_nodes(quadrature_order, n_phi)
    ratios = np.array([
        local_second_moment(inner, b) / (local_second_moment(cross, b) / per) for b in dirs
    ])
    return float(np.sqrt(weights @ ratios))


@dataclass(frozen=True)
class ZenoReport:
    ratio_couplings: float
    ratio_second_moments: float
    tau_in: float
    tau_x: float
    rate_ratio: float

    def __post_init__(self):
        for name in ("ratio_couplings", "ratio_second_moments", "tau_in", "tau_x", "rate_ratio"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be positive and finite, got {v}")


def zeno_rates(d_in: float, d_x: float) -> tuple[float, float, float]:
    """Flip-flop times: tau_in = 1/d_in and the golden-rule 1/tau_x = d_x^2 / d_in.

    Couplings in rad/s; returns (tau_in, tau_x, tau_in / tau_x).
    """
    if not d_in >= d_x > 0:
        raise ValueError("need d_in >= d_x > 0")
    tau_in = 1 / d_in
    tau_x = d_in / d_x**2
    return tau_in, tau_x, (d_x / d_in) ** 2


def zeno_report(r_in: float = HAP_R_IN, r_x: float = HAP_R_X, gamma: float = GAMMA_PROTON,
                quadrature_order: int = 40, axial_offset: float = HAP_C / 4) -> ZenoReport:
    """Anisotropy and Zeno estimates for a chain array.

    The rate ratio uses the bare pair couplings at the same orientation,
    d_in / d_x = (r_x / r_in)^3.
    """
    d_in = abs(dipolar_coupling((0, 0, r_in), (0, 0, 1), gamma))
    d_x = abs(dipolar_coupling((0, 0, r_x), (0, 0, 1), gamma))
    tau_in, tau_x, rate = zeno_rates(d_in, d_x)
    return ZenoReport(
        ratio_couplings=coupling_anisotropy(r_in, r_x),
        ratio_second_moments=second_moment_ratio(r_in, r_x, quadrature_order, axial_offset),
        tau_in=tau_in,
        tau_x=tau_x,
        rate_ratio=rate,
    )
