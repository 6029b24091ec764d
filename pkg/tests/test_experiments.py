"""Tests for the fidelity and hardware-fraction experiment harnesses."""

import numpy as np
import pytest

from bonn import experiments as ex
from bonn import subspace as ss
from bonn.datagen import decompose, generate_scan
from bonn.models import AutoencoderSpec
from bonn.training import TrainConfig, train


def _avg_rows(rows):
    return {(r["setting"], r["shots"]): r for r in rows if r["input"] == "avg"}


class TestFidelityConfig:
    def test_rejects_unknown_input_kind(self):
        with pytest.raises(ValueError, match="input_kind"):
            ex.FidelityConfig(input_kind="volume")

    def test_rejects_tiny_register(self):
        with pytest.raises(ValueError, match="n must be"):
            ex.FidelityConfig(n=1)

    def test_rejects_nonpositive_shots(self):
        with pytest.raises(ValueError):
            ex.FidelityConfig(shots_small=0)


class TestFidelityInputs:
    def test_random_inputs_are_unit_rows(self):
        vecs = ex.fidelity_inputs(ex.FidelityConfig(seed=5))
        assert vecs.shape == (8, 8)
        np.testing.assert_allclose(np.linalg.norm(vecs, axis=1), 1.0, atol=1e-12)

    def test_slice_inputs_are_unit_rows(self):
        vecs = ex.fidelity_inputs(ex.FidelityConfig(input_kind="slice", seed=5))
        assert vecs.shape == (8, 8)
        np.testing.assert_allclose(np.linalg.norm(vecs, axis=1), 1.0, atol=1e-12)

    def test_inputs_deterministic_per_seed(self):
        a = ex.fidelity_inputs(ex.FidelityConfig(seed=9))
        b = ex.fidelity_inputs(ex.FidelityConfig(seed=9))
        c = ex.fidelity_inputs(ex.FidelityConfig(seed=10))
        np.testing.assert_array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_slice_kind_needs_divisible_register(self):
        with pytest.raises(ValueError, match="dividing"):
            ex.fidelity_inputs(ex.FidelityConfig(n=6, input_kind="slice"))


@pytest.fixture(scope="module")
def fidelity_rows():
    return ex.run_fidelity(ex.FidelityConfig(seed=0))


class TestRunFidelity:
    def test_row_count_and_settings(self, fidelity_rows):
        assert len(fidelity_rows) == 5 * 9
        assert {r["setting"] for r in fidelity_rows} == {"exact", "shots_only", "noisy"}

    def test_exact_setting_has_unit_fidelity(self, fidelity_rows):
        exact = [r for r in fidelity_rows if r["setting"] == "exact" and r["input"] != "avg"]
        assert len(exact) == 8
        for r in exact:
            assert r["fidelity"] == pytest.approx(1.0, abs=1e-12)
            assert r["status"] == "ok"

    def test_shots_only_averages_meet_reference_bands(self, fidelity_rows):
        avg = _avg_rows(fidelity_rows)
        assert avg[("shots_only", 10000)]["fidelity"] >= 0.999
        assert avg[("shots_only", 1000)]["fidelity"] >= 0.996

    def test_noisy_averages_inside_hardware_band(self, fidelity_rows):
        avg = _avg_rows(fidelity_rows)
        for shots in (1000, 10000):
            assert 0.93 <= avg[("noisy", shots)]["fidelity"] <= 0.98

    def test_more_shots_tightens_fidelity(self, fidelity_rows):
        avg = _avg_rows(fidelity_rows)
        assert avg[("shots_only", 10000)]["fidelity"] > avg[("shots_only", 1000)]["fidelity"]

    def test_deterministic(self, fidelity_rows):
        assert fidelity_rows == ex.run_fidelity(ex.FidelityConfig(seed=0))

    def test_all_shots_discarded_is_surfaced_per_input(self):
        # near-certain readout flips push every weight-1 string to weight
        # n-1, so post-selection in the noisy settings keeps nothing
        cfg = ex.FidelityConfig(
            gate_error=0.0, readout_flip=0.999, shots_small=64, shots_large=64, seed=0
        )
        rows = ex.run_fidelity(cfg)
        noisy = [r for r in rows if r["setting"] == "noisy"]
        assert all(r["status"] == "all_shots_discarded" for r in noisy)
        assert all(r["fidelity"] is None for r in noisy)
        ok = [r for r in rows if r["setting"] != "noisy"]
        assert all(r["status"] == "ok" for r in ok)


@pytest.fixture(scope="module")
def trained_qcnn():
    blocks = decompose(generate_scan(32, seed=3), 16).blocks
    spec = AutoencoderSpec("qcnn3d", conv1_stride=1)
    cfg = TrainConfig(
        mode="pe", epochs=8, batch_size=4, seed=1, learning_rate=1e-3, optimizer="adam"
    )
    return train(spec, blocks, cfg), blocks


class TestHwFractionConfig:
    def test_rejects_bad_fractions(self):
        with pytest.raises(ValueError, match="fractions"):
            ex.HwFractionConfig(fractions=(0, 120))
        with pytest.raises(ValueError, match="fractions"):
            ex.HwFractionConfig(fractions=())

    def test_rejects_nonpositive_counts(self):
        with pytest.raises(ValueError):
            ex.HwFractionConfig(shots=0)
        with pytest.raises(ValueError):
            ex.HwFractionConfig(repeats=0)
        with pytest.raises(ValueError):
            ex.HwFractionConfig(slice_index=-1)


@pytest.fixture(scope="module")
def hw_sweep(trained_qcnn):
    trained, blocks = trained_qcnn
    cfg = ex.HwFractionConfig(repeats=2, fractions=(0, 30, 100), seed=0)
    return ex.run_hw_fraction(trained, blocks[0], cfg)


class TestRunHwFraction:
    def test_zero_fraction_is_exactly_zero(self, hw_sweep):
        runs, summary = hw_sweep
        for r in [r for r in runs if r["fraction"] == 0]:
            assert r["circuits"] == 0
            assert r["mse_layer"] == 0.0
            assert r["mse_conv"] == 0.0
            assert r["mse_autoencoder"] == 0.0
        assert summary[0]["mse_layer_mean"] == 0.0

    def test_circuit_counts_floor_of_fraction(self, hw_sweep):
        runs, _ = hw_sweep
        counts = {r["fraction"]: r["circuits"] for r in runs}
        assert counts == {0: 0, 30: 30 * 256 // 100, 100: 256}

    def test_layer_to_conv_ratio_is_grid_size_over_slice(self, hw_sweep):
        # both scopes share one SSE; the denominators differ by exactly
        # (k * out_edge^3) / (out_edge^2 * k) = out_edge
        runs, _ = hw_sweep
        for r in [r for r in runs if r["fraction"] == 100]:
            assert r["mse_layer"] == pytest.approx(16.0 * r["mse_conv"], rel=1e-12)

    def test_attenuation_ordering_at_full_fraction(self, hw_sweep):
        _, summary = hw_sweep
        full = summary[-1]
        assert full["fraction"] == 100
        assert full["mse_layer_mean"] > full["mse_conv_mean"] > full["mse_autoencoder_mean"] > 0

    def test_layer_mse_grows_with_fraction(self, hw_sweep):
        _, summary = hw_sweep
        means = [s["mse_layer_mean"] for s in summary]
        assert means == sorted(means)
        assert means[0] < means[-1]

    def test_deterministic(self, trained_qcnn, hw_sweep):
        trained, blocks = trained_qcnn
        cfg = ex.HwFractionConfig(repeats=2, fractions=(0, 30, 100), seed=0)
        assert ex.run_hw_fraction(trained, blocks[0], cfg) == hw_sweep

    def test_zero_block_gives_zero_error(self, trained_qcnn):
        # zero patches carry no amplitude to sample; the estimate is exact
        trained, _ = trained_qcnn
        cfg = ex.HwFractionConfig(repeats=1, fractions=(100,), seed=0)
        runs, _ = ex.run_hw_fraction(trained, np.zeros((16, 16, 16)), cfg)
        assert runs[0]["mse_layer"] == 0.0
        assert runs[0]["mse_autoencoder"] == 0.0

    def test_slice_index_outside_grid_rejected(self, trained_qcnn):
        trained, blocks = trained_qcnn
        cfg = ex.HwFractionConfig(slice_index=16, fractions=(0,))
        with pytest.raises(ValueError, match="slice_index"):
            ex.run_hw_fraction(trained, blocks[0], cfg)

    def test_model_without_circuit_conv_rejected(self):
        blocks = decompose(generate_scan(16, seed=4), 16).blocks
        spec = AutoencoderSpec("fnn", hidden_dim=32, latent_dim=16)
        trained = train(spec, blocks, TrainConfig(mode="pe", epochs=1, batch_size=1, seed=0))
        with pytest.raises(ValueError, match="orthogonal convolution"):
            ex.run_hw_fraction(trained, blocks[0], ex.HwFractionConfig(fractions=(0,)))
