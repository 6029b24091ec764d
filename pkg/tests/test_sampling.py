"""Shot sampling, noise emulation, post-selection, and fidelity estimation."""

import math

import numpy as np
import pytest

from bonn import subspace as ss


def random_unit(rng, n):
    x = rng.normal(size=n)
    return x / np.linalg.norm(x)


class TestNoiseModel:
    def test_leak_probability_closed_form(self):
        nm = ss.NoiseModel(gate_error=0.01)
        assert abs(nm.leak_probability(28) - (1.0 - 0.99**28)) < 1e-15
        assert ss.NoiseModel().leak_probability(1000) == 0.0

    def test_validation(self):
        with pytest.raises(ValueError):
            ss.NoiseModel(gate_error=1.0)
        with pytest.raises(ValueError):
            ss.NoiseModel(readout_flip=-0.1)
        with pytest.raises(ValueError):
            ss.NoiseModel(shots=0)


class TestSampleShots:
    def test_deterministic_for_fixed_seed(self):
        state = ss.unary_state(random_unit(np.random.default_rng(0), 8))
        nm = ss.NoiseModel(gate_error=0.02, readout_flip=0.01, shots=4000)
        a = ss.sample_shots(state, nm, 28, rng=123)
        b = ss.sample_shots(state, nm, 28, rng=123)
        assert a.weights == b.weights
        c = ss.sample_shots(state, nm, 28, rng=124)
        assert a.weights != c.weights

    def test_noiseless_shots_land_on_unary_strings(self):
        state = ss.unary_state(random_unit(np.random.default_rng(1), 8))
        counts = ss.sample_shots(state, ss.NoiseModel(shots=5000), 28, rng=7)
        assert counts.total() == 5000
        for outcome in counts.weights:
            assert outcome != 0 and outcome & (outcome - 1) == 0

    def test_empirical_frequencies_approach_born_rule(self):
        rng = np.random.default_rng(2)
        y = random_unit(rng, 8)
        counts = ss.sample_shots(ss.unary_state(y), ss.NoiseModel(shots=200_000), 0, rng=11)
        sel = ss.postselect_unary(counts)
        np.testing.assert_allclose(sel.probs, y**2, atol=5e-3)

    def test_discarded_fraction_matches_leakage_formula(self):
        # n = 16 makes the uniform-string unary weight (n / 2^n) negligible,
        # so the discarded fraction is an unbiased estimate of 1-(1-eps)^G
        rng = np.random.default_rng(3)
        y = random_unit(rng, 16)
        eps, gates, shots = 0.01, 28, 10_000
        lam = 1.0 - (1.0 - eps) ** gates
        counts = ss.sample_shots(
            ss.unary_state(y), ss.NoiseModel(gate_error=eps, shots=shots), gates, rng=19
        )
        sel = ss.postselect_unary(counts)
        se = math.sqrt(lam * (1.0 - lam) / shots)
        assert abs(sel.discarded_fraction - lam) < 3.0 * se

    def test_worked_leakage_example_eight_qubits(self):
        # eps = 0.01 over 28 gates leaks ~24.5% of shots
        rng = np.random.default_rng(4)
        y = random_unit(rng, 8)
        counts = ss.sample_shots(
            ss.unary_state(y), ss.NoiseModel(gate_error=0.01, shots=20_000), 28, rng=5
        )
        sel = ss.postselect_unary(counts)
        assert abs(sel.discarded_fraction - (1.0 - 0.99**28)) < 0.02

    def test_readout_flips_move_mass_off_unary(self):
        state = ss.basis_state(8, 0)
        counts = ss.sample_shots(
            state, ss.NoiseModel(readout_flip=0.05, shots=20_000), 0, rng=6
        )
        sel = ss.postselect_unary(counts)
        # each of 8 bits survives unflipped w.p. 0.95^8 ~ 0.663
        expected = 1.0 - (0.95**8 + 7 * 0.05**2 * 0.95**6)
        assert abs(sel.discarded_fraction - expected) < 0.02

    def test_large_shot_counts_chunked_consistently(self):
        state = ss.unary_state(random_unit(np.random.default_rng(8), 4))
        counts = ss.sample_shots(state, ss.NoiseModel(shots=200_000), 0, rng=9)
        assert counts.total() == 200_000

    def test_widest_register(self):
        state = ss.basis_state(64, 63)
        counts = ss.sample_shots(state, ss.NoiseModel(shots=100), 0, rng=10)
        assert counts.weights == {1 << 63: 100}


class TestExactMode:
    def test_exact_equals_born_when_noiseless(self):
        y = random_unit(np.random.default_rng(12), 8)
        counts = ss.sample_shots(ss.unary_state(y), ss.NoiseModel(), 28, rng=0)
        sel = ss.postselect_unary(counts)
        np.testing.assert_allclose(sel.probs, y**2, atol=1e-15)
        assert sel.discarded_fraction == 0.0

    def test_exact_leakage_weights(self):
        y = random_unit(np.random.default_rng(13), 8)
        eps, gates = 0.01, 28
        lam = 1.0 - (1.0 - eps) ** gates
        counts = ss.sample_shots(
            ss.unary_state(y), ss.NoiseModel(gate_error=eps), gates, rng=0
        )
        sel = ss.postselect_unary(counts)
        # per unary string: (1-lam) p_j + lam / 2^n
        expected = (1.0 - lam) * y**2 + lam / 256.0
        np.testing.assert_allclose(sel.probs, expected / expected.sum(), atol=1e-12)
        np.testing.assert_allclose(sel.discarded_fraction, lam * (1.0 - 8 / 256.0), atol=1e-12)

    def test_exact_mode_distribution_sums_to_one(self):
        y = random_unit(np.random.default_rng(14), 6)
        counts = ss.sample_shots(
            ss.unary_state(y), ss.NoiseModel(gate_error=0.03, readout_flip=0.02), 40, rng=0
        )
        assert abs(counts.total() - 1.0) < 1e-12

    def test_exact_mode_rejects_wide_registers(self):
        with pytest.raises(ValueError):
            ss.sample_shots(ss.basis_state(32, 0), ss.NoiseModel(), 5, rng=0)

    def test_exact_flip_channel_marginals(self):
        # starting from e_0, the probability that bit 0 reads 1 is 1-r
        counts = ss.sample_shots(
            ss.basis_state(4, 0), ss.NoiseModel(readout_flip=0.1), 0, rng=0
        )
        p_bit0 = sum(w for k, w in counts.weights.items() if k & 1)
        assert abs(p_bit0 - 0.9) < 1e-12


class TestPostselect:
    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            ss.postselect_unary(ss.ShotCounts(n=4, weights={}, shots=0))

    def test_all_discarded_raises_dedicated_error(self):
        counts = ss.ShotCounts(n=4, weights={3: 10, 0: 2}, shots=12)
        with pytest.raises(ss.AllShotsDiscardedError):
            ss.postselect_unary(counts)

    def test_mixed_counts(self):
        counts = ss.ShotCounts(n=4, weights={1: 30, 2: 10, 3: 60}, shots=100)
        sel = ss.postselect_unary(counts)
        np.testing.assert_allclose(sel.probs, [0.75, 0.25, 0.0, 0.0])
        assert sel.discarded_fraction == 0.6


class TestFidelity:
    def test_perfect_distribution_gives_unit_fidelity(self):
        y = random_unit(np.random.default_rng(20), 8)
        assert abs(ss.fidelity_estimate(y**2, y) - 1.0) < 1e-12

    def test_sign_blind(self):
        y = random_unit(np.random.default_rng(21), 8)
        assert abs(ss.fidelity_estimate(y**2, -np.abs(y)) - 1.0) < 1e-12

    def test_orthogonal_support_gives_zero(self):
        p = np.array([1.0, 0.0, 0.0, 0.0])
        y = np.array([0.0, 1.0, 0.0, 0.0])
        assert ss.fidelity_estimate(p, y) == 0.0

    def test_validates_inputs(self):
        with pytest.raises(ValueError):
            ss.fidelity_estimate(np.array([0.5, 0.4]), np.array([1.0, 0.0]))
        with pytest.raises(ValueError):
            ss.fidelity_estimate(np.array([0.5, 0.5]), np.array([2.0, 0.0]))

    def test_shot_noise_fidelity_matches_first_order_theory(self):
        # noiseless sampling: E[1 - F] ~ (n-1)/(4M)
        rng = np.random.default_rng(22)
        n, shots, reps = 8, 10_000, 40
        vals = []
        for r in range(reps):
            y = random_unit(rng, n)
            counts = ss.sample_shots(
                ss.unary_state(y), ss.NoiseModel(shots=shots), 28, rng=1000 + r
            )
            sel = ss.postselect_unary(counts)
            vals.append(1.0 - ss.fidelity_estimate(sel.probs, y))
        mean_infidelity = float(np.mean(vals))
        theory = (n - 1) / (4.0 * shots)
        assert 0.5 * theory < mean_infidelity < 2.0 * theory

    def test_amplitude_error_scales_as_inverse_sqrt_shots(self):
        # log-log slope of ||sqrt(p_hat) - |y|||_2 vs M within -0.5 +- 0.15
        rng = np.random.default_rng(23)
        n = 8
        shot_grid = [100, 1000, 10_000, 100_000, 1_000_000]
        errs = []
        for m_idx, m in enumerate(shot_grid):
            trial = []
            for r in range(8):
                y = random_unit(rng, n)
                counts = ss.sample_shots(
                    ss.unary_state(y), ss.NoiseModel(shots=m), 28, rng=5000 + 100 * m_idx + r
                )
                sel = ss.postselect_unary(counts)
                trial.append(np.linalg.norm(np.sqrt(sel.probs) - np.abs(y)))
            errs.append(np.mean(trial))
        slope = np.polyfit(np.log(shot_grid), np.log(errs), 1)[0]
        assert -0.65 < slope < -0.35
        # and the fidelity itself converges to 1
        assert errs[-1] < errs[0] / 10.0
