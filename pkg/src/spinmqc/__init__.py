"""Exact simulation of multiple-quantum coherence dynamics in dipolar spin-1/2 networks."""

from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # running from a source tree without installation
    __version__ = "0.1.0"

from .dynamics import DensityMatrix, Evolver, evolve, magnetization, thermal_deviation_state
from .echo import EchoCurve, EchoFit, PerturbationSpec, compare_models, fit_exponential, fit_fermi, loschmidt_echo
from .hamiltonians import HamiltonianKind, apply_even_site_pi_rotation, build_hamiltonian
from .lattice import CouplingSet, SpinGeometry, Truncation, build_couplings, hap_chain, powder_nodes
from .mqc import MqcSeries, MqcSimulation, analytic_jm_homogeneous, jm_direct, jm_phase_encoding, powder_average
from .spinops import SpinOperator, ZeemanBasis, build_basis, hermitian_eig, propagator

__all__ = [
    "DensityMatrix", "Evolver", "evolve", "magnetization", "thermal_deviation_state",
    "EchoCurve", "EchoFit", "PerturbationSpec", "compare_models", "fit_exponential", "fit_fermi", "loschmidt_echo",
    "HamiltonianKind", "apply_even_site_pi_rotation", "build_hamiltonian",
    "CouplingSet", "SpinGeometry", "Truncation", "build_couplings", "hap_chain", "powder_nodes",
    "MqcSeries", "MqcSimulation", "analytic_jm_homogeneous", "jm_direct", "jm_phase_encoding", "powder_average",
    "SpinOperator", "ZeemanBasis", "build_basis", "hermitian_eig", "propagator",
]
