import itertools
from math import comb

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spinmqc.hamiltonians import build_hamiltonian
from spinmqc.lattice import homogeneous_chain
from spinmqc.spinops import (ContractError, SizeError, SpinOperator, build_basis, hermitian_eig, propagator,
                             sector_eig, single_spin_op, total_spin_op, unitarity_defect)


def random_hermitian(rng, dim, scale=1.0):
    a = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    return scale * (a + a.conj().T) / 2


class TestBasis:
    def test_two_spins(self):
        b = build_basis(2)
        assert list(b.states) == [0, 1, 2, 3]
        assert list(b.m_values) == [-1, 0, 0, 1]

    def test_three_spins_count(self):
        b = build_basis(3)
        assert b.dim == 8
        assert b.count(0.5) == 3

    def test_ten_spins(self):
        b = build_basis(10)
        assert b.dim == 1024
        assert b.count(0) == comb(10, 5) == 252

    @pytest.mark.parametrize("n", range(1, 9))
    def test_binomial_counts(self, n):
        b = build_basis(n)
        for k in range(n + 1):
            assert b.count(k - n / 2) == comb(n, k)

    @pytest.mark.parametrize("n", [0, -1, 15])
    def test_out_of_range(self, n):
        with pytest.raises(SizeError):
            build_basis(n)

    def test_cap_below_hard_limit(self):
        with pytest.raises(SizeError):
            build_basis(9, max_spins=8)

    def test_delta_m_integer(self):
        b = build_basis(3)
        assert b.delta_m.dtype.kind == "i"
        assert b.delta_m[7, 0] == 3 and b.delta_m[0, 7] == -3


class TestSingleSpin:
    def test_one_spin_z(self):
        b = build_basis(1)
        # ascending bit order: state 0 is down, state 1 is up
        np.testing.assert_array_equal(single_spin_op(b, 0, "z").matrix, np.diag([-0.5, 0.5]))

    def test_raising_on_down_down(self):
        b = build_basis(2)
        plus = single_spin_op(b, 0, "+").matrix
        psi = plus @ np.eye(4)[0]  # |down down>
        expected = np.zeros(4)
        expected[1] = 1.0  # bit 0 set: spin 0 up
        np.testing.assert_array_equal(psi, expected)

    def test_ladder_identity(self):
        b = build_basis(3)
        for i in range(3):
            x, y = single_spin_op(b, i, "x").matrix, single_spin_op(b, i, "y").matrix
            np.testing.assert_allclose(single_spin_op(b, i, "+").matrix, x + 1j * y)
            np.testing.assert_allclose(single_spin_op(b, i, "-").matrix, x - 1j * y)

    def test_su2_n3_all_pairs(self):
        b = build_basis(3)
        for i, j in itertools.product(range(3), repeat=2):
            x, y = single_spin_op(b, i, "x"), single_spin_op(b, j, "y")
            comm = x.commutator(y).matrix
            expected = 1j * single_spin_op(b, i, "z").matrix if i == j else 0
            np.testing.assert_allclose(comm, expected, atol=1e-15)

    @pytest.mark.parametrize("n", [1, 2, 3, 4])
    def test_su2_cyclic_exhaustive(self, n):
        b = build_basis(n)
        for site in range(n):
            ops = {a: single_spin_op(b, site, a).matrix for a in "xyz"}
            for a, c, e in (("x", "y", "z"), ("y", "z", "x"), ("z", "x", "y")):
                np.testing.assert_allclose(ops[a] @ ops[c] - ops[c] @ ops[a], 1j * ops[e], atol=1e-15)

    def test_site_out_of_range(self):
        with pytest.raises(IndexError):
            single_spin_op(build_basis(2), 2, "z")

    def test_bad_axis(self):
        with pytest.raises(ValueError):
            single_spin_op(build_basis(2), 0, "w")

    def test_total_z_is_diagonal_m(self):
        b = build_basis(4)
        np.testing.assert_array_equal(np.diag(total_spin_op(b, "z").matrix).real, b.m_values)


class TestSpinOperator:
    def test_shape_mismatch(self):
        with pytest.raises(ContractError):
            SpinOperator(build_basis(2), np.eye(3))

    def test_hermitian_tag_checked(self):
        b = build_basis(1)
        with pytest.raises(ContractError):
            SpinOperator(b, np.array([[0, 1], [0, 0]]), hermitian=True)

    def test_algebra(self):
        b = build_basis(2)
        x = total_spin_op(b, "x")
        z = total_spin_op(b, "z")
        assert (x + z).hermitian
        assert not (1j * x).hermitian
        np.testing.assert_allclose((2 * x - x).matrix, x.matrix)
        np.testing.assert_allclose((x @ x).matrix, x.matrix @ x.matrix)
        assert abs(z.trace()) == 0

    def test_mixing_bases_rejected(self):
        with pytest.raises(ContractError):
            total_spin_op(build_basis(2), "z") + total_spin_op(build_basis(3), "z")


class TestEig:
    def test_diagonal(self):
        spec = hermitian_eig(np.diag([1.0, 2.0, 3.0]))
        np.testing.assert_array_equal(spec.eigenvalues, [1, 2, 3])
        np.testing.assert_array_equal(np.abs(spec.eigenvectors), np.eye(3))

    def test_two_spin_dq_literal(self):
        d = 2 * np.pi * 1000.0
        b = build_basis(2)
        h = build_hamiltonian("dq", homogeneous_chain(2, d), b, convention="literal")
        np.testing.assert_allclose(hermitian_eig(h).eigenvalues, [-d / 4, 0, 0, d / 4], atol=1e-12 * d)

    def test_random_reconstruction(self, rng):
        a = random_hermitian(rng, 8)
        spec = hermitian_eig(a)
        assert np.all(np.diff(spec.eigenvalues) >= 0)
        assert np.linalg.norm(spec.reconstruct() - a) / np.linalg.norm(a) < 1e-12
        assert unitarity_defect(spec.eigenvectors) < 1e-10

    def test_non_hermitian_rejected(self):
        with pytest.raises(ContractError):
            hermitian_eig(np.array([[1.0, 2.0], [0.0, 1.0]]))

    def test_sector_eig_matches_full(self, rng):
        b = build_basis(5)
        h = build_hamiltonian("dq", homogeneous_chain(5, 1e4, "nnn"), b)
        full = hermitian_eig(h)
        blocks = sector_eig(h).to_spectrum()
        np.testing.assert_allclose(blocks.eigenvalues, full.eigenvalues, atol=1e-9)
        np.testing.assert_allclose(blocks.reconstruct(), h.matrix, atol=1e-9)


class TestPropagator:
    def test_identity_at_zero(self, rng):
        spec = hermitian_eig(random_hermitian(rng, 8, 1e4))
        np.testing.assert_allclose(propagator(spec, 0.0), np.eye(8), atol=1e-14)

    def test_group_property(self, rng):
        spec = hermitian_eig(random_hermitian(rng, 16, 1e4))
        t = 100e-6
        u = propagator(spec, t)
        assert unitarity_defect(u) < 1e-10
        np.testing.assert_allclose(u @ propagator(spec, -t), np.eye(16), atol=1e-10)

    def test_two_spin_dq_rabi_return(self):
        d = 2 * np.pi * 2950.0
        b = build_basis(2)
        h = build_hamiltonian("dq", homogeneous_chain(2, d), b)
        u = propagator(hermitian_eig(h), np.pi / d).matrix
        up_up = np.eye(4)[3]
        out = u @ up_up
        assert abs(abs(out[3]) - 1) < 1e-12
        assert np.max(np.abs(out[:3])) < 1e-12

    def test_returns_operator_with_basis(self):
        b = build_basis(2)
        h = build_hamiltonian("xy", homogeneous_chain(2, 1e3), b)
        assert isinstance(propagator(hermitian_eig(h), 1e-4), SpinOperator)


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 6), st.floats(-1e-3, 1e-3), st.integers(0, 10**6))
def test_propagator_unitary_property(dim, t, seed):
    a = random_hermitian(np.random.default_rng(seed), dim, 1e4)
    assert unitarity_defect(propagator(hermitian_eig(a), t)) < 1e-10
