import numpy as np
import pytest

from spinmqc.dynamics import thermal_deviation_state
from spinmqc.echo import (DegenerateInputError, EchoCurve, FitError, PerturbationSpec, ShapeError, compare_models,
                          exponential_model, fermi_model, fit_exponential, fit_fermi, loschmidt_echo,
                          perturbation_hamiltonian)
from spinmqc.hamiltonians import build_hamiltonian
from spinmqc.lattice import build_couplings, hap_chain, hap_ladder
from spinmqc.spinops import SpinOperator, build_basis

D = 2 * np.pi * 2950.8


def nn_dq(n):
    b = build_basis(n)
    g = hap_chain(n)
    return b, g, build_hamiltonian("dq", build_couplings(g, "nn"), b)


class TestEcho:
    def test_zero_perturbation_is_perfect(self):
        b, g, h = nn_dq(6)
        sigma = perturbation_hamiltonian(PerturbationSpec("nnn-dipolar", 0.0), b, g)
        curve = loschmidt_echo(thermal_deviation_state(b), h, sigma, np.linspace(0, 1e-3, 11))
        np.testing.assert_allclose(curve.amplitude, 1, atol=1e-12)

    def test_no_sigma(self):
        b, g, h = nn_dq(4)
        curve = loschmidt_echo(thermal_deviation_state(b), h, None, [0.0, 2e-4])
        np.testing.assert_allclose(curve.amplitude, 1, atol=1e-12)

    def test_dq_shaped_perturbation_breaks_echo(self):
        b, g, h = nn_dq(4)
        sigma = SpinOperator(b, 0.3 * h.matrix, hermitian=True)
        curve = loschmidt_echo(thermal_deviation_state(b), h, sigma, np.linspace(0, 4e-4, 9))
        assert np.max(np.abs(curve.amplitude - 1)) > 1e-3

    def test_fidelity_observable(self):
        b, g, h = nn_dq(4)
        curve = loschmidt_echo(thermal_deviation_state(b), h, None, [0.0, 1e-4], observable="fidelity")
        np.testing.assert_allclose(curve.amplitude, 1, atol=1e-12)
        with pytest.raises(ValueError):
            loschmidt_echo(thermal_deviation_state(b), h, None, [0.0], observable="spin")

    def test_nnn_decay_monotone_to_floor(self):
        # beyond E ~ 0.1 a ten-spin system shows mesoscopic fluctuations; the decay is monotone above that
        n = 10
        b, g, h = nn_dq(n)
        sigma = perturbation_hamiltonian(PerturbationSpec("nnn-dipolar"), b, g)
        times = np.linspace(0, 8 / D, 41)
        amp = loschmidt_echo(thermal_deviation_state(b), h, sigma, times).amplitude
        assert amp[0] == pytest.approx(1)
        above = np.flatnonzero(amp > 0.1)
        head = amp[: above[-1] + 1]
        assert np.all(np.diff(head) < 0)
        assert amp[-1] < 0.5

    def test_cross_chain_on_ladder(self):
        g = hap_ladder(2)
        b = build_basis(4)
        sigma = perturbation_hamiltonian(PerturbationSpec("cross-chain"), b, g)
        assert np.any(sigma.matrix)
        # secular dipolar: zz plus flip-flop, so it conserves the Zeeman quantum number
        assert np.all(sigma.matrix[b.delta_m != 0] == 0)
        with pytest.raises(ValueError):
            perturbation_hamiltonian(PerturbationSpec("cross-chain"), b, hap_chain(4))

    def test_zz_disorder_seeded(self):
        b, g, _ = nn_dq(5)
        a = perturbation_hamiltonian(PerturbationSpec("zz-disorder", 0.2, seed=3), b, g).matrix
        c = perturbation_hamiltonian(PerturbationSpec("zz-disorder", 0.2, seed=3), b, g).matrix
        e = perturbation_hamiltonian(PerturbationSpec("zz-disorder", 0.2, seed=4), b, g).matrix
        assert np.array_equal(a, c)
        assert not np.array_equal(a, e)

    def test_negative_strength(self):
        with pytest.raises(ValueError):
            PerturbationSpec("nnn-dipolar", -1.0)

    def test_csv_round_trip(self):
        curve = EchoCurve(np.linspace(0, 1e-3, 5), np.linspace(1, 0.2, 5))
        back = EchoCurve.from_csv(curve.to_csv({"n": 4}))
        np.testing.assert_allclose(back.times, curve.times, atol=1e-12)
        np.testing.assert_allclose(back.amplitude, curve.amplitude, atol=1e-14)


class TestFits:
    t = np.linspace(0, 1e-3, 60)

    def test_exponential_noiseless(self):
        fit = fit_exponential(EchoCurve(self.t, exponential_model(self.t, 2.5e-4)))
        assert fit.params["tau_phi"] == pytest.approx(2.5e-4, rel=1e-6)
        assert fit.rss < 1e-20

    def test_fermi_noiseless(self):
        fit = fit_fermi(EchoCurve(self.t, fermi_model(self.t, 4e-4, 6e-5)))
        assert fit.params["t_c"] == pytest.approx(4e-4, rel=1e-6)
        assert fit.params["tau_phi"] == pytest.approx(6e-5, rel=1e-6)

    def test_fermi_model_starts_at_one(self):
        assert fermi_model(0.0, 3e-4, 5e-5) == pytest.approx(1, abs=1e-15)

    def test_noisy_fermi(self, rng):
        y = fermi_model(self.t, 4e-4, 6e-5) + rng.normal(0, 0.01, self.t.size)
        fit = fit_fermi(EchoCurve(self.t, y))
        assert fit.params["t_c"] == pytest.approx(4e-4, rel=0.02)
        assert fit.params["tau_phi"] == pytest.approx(6e-5, rel=0.1)

    def test_compare_prefers_true_model(self):
        cmp_f = compare_models(EchoCurve(self.t, fermi_model(self.t, 4e-4, 6e-5)))
        assert cmp_f.best.model == "fermi"
        assert cmp_f.fermi.rss < cmp_f.exponential.rss
        cmp_e = compare_models(EchoCurve(self.t, exponential_model(self.t, 2e-4)))
        # a Fermi law with t_c -> 0 mimics the exponential; either way the residual is tiny
        assert cmp_e.best.rss < 1e-10
        assert cmp_e.as_dict()["preferred"] == cmp_e.best.model

    def test_flat_is_degenerate(self):
        with pytest.raises(DegenerateInputError):
            fit_exponential(EchoCurve(self.t, np.ones_like(self.t)))
        with pytest.raises(DegenerateInputError):
            fit_fermi(EchoCurve(self.t, np.ones_like(self.t)))

    def test_rising_is_shape_error(self):
        with pytest.raises(ShapeError):
            fit_exponential(EchoCurve(self.t, np.linspace(0.2, 1, self.t.size)))

    def test_too_few_points(self):
        with pytest.raises(FitError):
            fit_fermi(EchoCurve(self.t[:4], np.linspace(1, 0.5, 4)))
