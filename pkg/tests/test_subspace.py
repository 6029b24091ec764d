"""Gate, layout, and loader contracts for the unary-subspace simulator."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bonn import subspace as ss


def full_space_rbs(n: int, i: int, j: int, theta: float) -> np.ndarray:
    """Independent oracle: the 4x4 two-qubit rotation embedded in 2^n dims.

    Columns follow the basis-image convention of
    [[1,0,0,0],[0,c,-s,0],[0,s,c,0],[0,0,0,1]] on (|00>,|01>,|10>,|11>)
    where |q_i q_j> orders qubit i first.
    """
    dim = 1 << n
    c, s = math.cos(theta), math.sin(theta)
    m = np.zeros((dim, dim))
    swap = (1 << i) | (1 << j)
    for b in range(dim):
        bi, bj = (b >> i) & 1, (b >> j) & 1
        if bi == bj:
            m[b, b] = 1.0
        elif bi == 1:  # |10> -> c|10> - s|01>
            m[b, b] = c
            m[b ^ swap, b] = -s
        else:  # |01> -> c|01> + s|10>
            m[b, b] = c
            m[b ^ swap, b] = s
    return m


class TestRbsGate:
    GOLDEN_ANGLES = [0.0, math.pi / 4, math.pi / 2, math.pi]

    @pytest.mark.parametrize("theta", GOLDEN_ANGLES)
    def test_matches_full_space_embedding(self, theta):
        n = 4
        for i in range(n):
            for j in range(n):
                if i == j:
                    continue
                big = full_space_rbs(n, i, j, theta)
                for k in range(n):
                    full_vec = np.zeros(1 << n)
                    full_vec[1 << k] = 1.0
                    image = big @ full_vec
                    expected = np.array([image[1 << q] for q in range(n)])
                    got = ss.apply_rbs(ss.basis_state(n, k), i, j, theta).amplitudes
                    np.testing.assert_allclose(got, expected, atol=1e-12)
                    # weight-1 input never leaks weight elsewhere
                    leaked = image.copy()
                    for q in range(n):
                        leaked[1 << q] = 0.0
                    assert np.max(np.abs(leaked)) == 0.0

    def test_quarter_turn_transfers_basis_states(self):
        n = 5
        st_i, st_j = ss.basis_state(n, 1), ss.basis_state(n, 3)
        out_i = ss.apply_rbs(st_i, 1, 3, math.pi / 2).amplitudes
        out_j = ss.apply_rbs(st_j, 1, 3, math.pi / 2).amplitudes
        np.testing.assert_allclose(out_i, -ss.basis_state(n, 3).amplitudes, atol=1e-12)
        np.testing.assert_allclose(out_j, ss.basis_state(n, 1).amplitudes, atol=1e-12)

    def test_bystander_amplitudes_untouched(self):
        rng = np.random.default_rng(7)
        x = rng.normal(size=6)
        x /= np.linalg.norm(x)
        out = ss.apply_rbs(ss.unary_state(x), 2, 4, 0.83).amplitudes
        for k in (0, 1, 3, 5):
            assert out[k] == x[k]

    @given(
        theta=st.floats(-10.0, 10.0, allow_nan=False),
        seed=st.integers(0, 2**31 - 1),
    )
    @settings(max_examples=80, deadline=None)
    def test_norm_preserved(self, theta, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 12))
        x = rng.normal(size=n)
        x /= np.linalg.norm(x)
        out = ss.apply_rbs(ss.unary_state(x), 0, n - 1, theta)
        assert abs(np.linalg.norm(out.amplitudes) - 1.0) < 1e-12

    def test_rejects_bad_indices(self):
        state = ss.basis_state(4, 0)
        with pytest.raises(ValueError):
            ss.apply_rbs(state, 1, 1, 0.3)
        with pytest.raises(ValueError):
            ss.apply_rbs(state, 0, 4, 0.3)
        with pytest.raises(ValueError):
            ss.apply_rbs(state, -1, 2, 0.3)


class TestStates:
    def test_rejects_single_qubit(self):
        with pytest.raises(ValueError):
            ss.basis_state(1, 0)

    def test_rejects_unnormalized(self):
        with pytest.raises(ValueError):
            ss.unary_state([0.5, 0.5, 0.5])

    def test_basis_state_bit_convention(self):
        s = ss.basis_state(5, 3)
        assert s.amplitudes[3] == 1.0 and s.amplitudes.sum() == 1.0


class TestLayouts:
    def test_gate_counts(self):
        for n in (2, 4, 8, 16, 64):
            assert len(ss.build_layout("pyramid", n)) == n * (n - 1) // 2
            assert len(ss.build_layout("butterfly", n)) == (n // 2) * int(math.log2(n))
            assert len(ss.build_layout("diagonal", n)) == n - 1
            assert len(ss.build_layout("parallel", n)) == n - 1

    def test_pyramid_gates_are_nearest_neighbour(self):
        lay = ss.build_layout("pyramid", 8)
        assert all(abs(g.i - g.j) == 1 for g in lay.gates)

    def test_diagonal_gates_are_nearest_neighbour(self):
        lay = ss.build_layout("diagonal", 8)
        assert all(abs(g.i - g.j) == 1 for g in lay.gates)

    def test_butterfly_pairs_differ_in_one_bit(self):
        lay = ss.build_layout("butterfly", 16)
        seen = set()
        for g in lay.gates:
            diff = g.i ^ g.j
            assert diff & (diff - 1) == 0
            seen.add((g.i, g.j))
        assert len(seen) == len(lay.gates)

    def test_butterfly_rejects_non_power_of_two(self):
        with pytest.raises(ValueError):
            ss.build_layout("butterfly", 6)

    def test_parallel_loader_is_log_depth(self):
        for n in (8, 64):
            lay = ss.build_layout("parallel", n)
            depth = [0] * n
            levels = 0
            for g in lay.gates:
                d = max(depth[g.i], depth[g.j]) + 1
                depth[g.i] = depth[g.j] = d
                levels = max(levels, d)
            assert levels == math.ceil(math.log2(n))

    def test_rejects_out_of_range_n(self):
        with pytest.raises(ValueError):
            ss.build_layout("pyramid", 1)
        with pytest.raises(ValueError):
            ss.build_layout("nonsense", 8)

    def test_butterfly_qfnn_width(self):
        assert len(ss.build_layout("butterfly", 128)) == 448


class TestSimulate:
    def test_pyramid_two_qubits_worked_example(self):
        lay = ss.build_layout("pyramid", 2)
        theta = 0.37
        out = ss.simulate(lay, [theta]).amplitudes
        np.testing.assert_allclose(out, [math.cos(theta), -math.sin(theta)], atol=1e-15)
        mat = ss.layer_matrix(lay, [theta])
        expected = np.array(
            [[math.cos(theta), math.sin(theta)], [-math.sin(theta), math.cos(theta)]]
        )
        np.testing.assert_allclose(mat, expected, atol=1e-15)

    def test_layer_matrix_columns_are_basis_images(self):
        rng = np.random.default_rng(11)
        lay = ss.build_layout("butterfly", 8)
        angles = rng.uniform(-math.pi, math.pi, lay.num_params)
        mat = ss.layer_matrix(lay, angles)
        for j in range(8):
            col = ss.simulate(lay, angles, ss.basis_state(8, j)).amplitudes
            np.testing.assert_allclose(mat[:, j], col, atol=1e-12)

    def test_orthogonality_across_sizes(self):
        rng = np.random.default_rng(23)
        for n in (2, 4, 8, 16, 64):
            for kind in ("pyramid", "butterfly"):
                lay = ss.build_layout(kind, n)
                angles = rng.uniform(-math.pi, math.pi, lay.num_params)
                mat = ss.layer_matrix(lay, angles)
                err = np.max(np.abs(mat.T @ mat - np.eye(n)))
                assert err < 1e-9, f"{kind} n={n}: {err}"

    def test_norm_preserved_through_long_sequences(self):
        rng = np.random.default_rng(37)
        for n in (4, 16, 64):
            lay = ss.build_layout("pyramid", n)
            angles = rng.uniform(-math.pi, math.pi, lay.num_params)
            x = rng.normal(size=n)
            x /= np.linalg.norm(x)
            out = ss.simulate(lay, angles, ss.unary_state(x))
            assert abs(np.linalg.norm(out.amplitudes) - 1.0) < 1e-12

    def test_angle_count_validated(self):
        lay = ss.build_layout("pyramid", 4)
        with pytest.raises(ValueError):
            ss.simulate(lay, np.zeros(3))

    def test_loader_plus_layer_equals_dense_matvec(self):
        # circuit application must agree with dense linear algebra on the
        # loaded vector, for every loader and n up to 8
        rng = np.random.default_rng(91)
        for n in (2, 3, 5, 8):
            pyr = ss.build_layout("pyramid", n)
            theta = rng.uniform(-math.pi, math.pi, pyr.num_params)
            dense = ss.layer_matrix(pyr, theta)
            for kind in ("diagonal", "parallel"):
                x = rng.normal(size=n)
                x /= np.linalg.norm(x)
                loader = ss.freeze(ss.build_layout(kind, n), ss.loader_angles(kind, x))
                circuit = ss.chain(loader, pyr)
                out = ss.simulate(circuit, theta).amplitudes
                np.testing.assert_allclose(out, dense @ x, atol=1e-9)


class TestLoaders:
    def test_diagonal_recursion_worked_example(self):
        x = np.zeros(8)
        x[0] = x[1] = 1.0 / math.sqrt(2.0)
        angles = ss.loader_angles("diagonal", x)
        np.testing.assert_allclose(angles[0], math.pi / 4, atol=1e-12)
        np.testing.assert_allclose(angles[1:], 0.0, atol=1e-12)

    def test_diagonal_product_of_sines_identity(self):
        rng = np.random.default_rng(5)
        x = rng.uniform(0.1, 1.0, size=6)
        x /= np.linalg.norm(x)
        angles = ss.loader_angles("diagonal", x)
        for k in range(5):
            expect = math.cos(angles[k]) * np.prod(np.sin(angles[:k]))
            np.testing.assert_allclose(x[k], expect, atol=1e-12)
        np.testing.assert_allclose(x[5], np.prod(np.sin(angles)), atol=1e-12)

    def test_basis_vector_loads_with_zero_angles(self):
        e0 = np.zeros(8)
        e0[0] = 1.0
        np.testing.assert_allclose(ss.loader_angles("diagonal", e0), 0.0, atol=1e-15)
        np.testing.assert_allclose(ss.loader_angles("parallel", e0), 0.0, atol=1e-15)

    @given(seed=st.integers(0, 2**31 - 1))
    @settings(max_examples=60, deadline=None)
    def test_round_trip_random_unit_vectors(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 65))
        x = rng.normal(size=n)
        x /= np.linalg.norm(x)
        for kind in ("diagonal", "parallel"):
            lay = ss.build_layout(kind, n)
            out = ss.simulate(lay, ss.loader_angles(kind, x)).amplitudes
            np.testing.assert_allclose(out, x, atol=1e-9)

    def test_round_trip_handles_signs_and_zeros(self):
        x = np.array([0.0, -0.6, 0.0, 0.8, 0.0])
        for kind in ("diagonal", "parallel"):
            lay = ss.build_layout(kind, len(x))
            out = ss.simulate(lay, ss.loader_angles(kind, x)).amplitudes
            np.testing.assert_allclose(out, x, atol=1e-12)

    def test_rejects_unnormalized_input(self):
        with pytest.raises(ValueError):
            ss.loader_angles("diagonal", np.ones(4))


class TestLayoutComposition:
    def test_freeze_requires_full_angle_vector(self):
        lay = ss.build_layout("pyramid", 4)
        with pytest.raises(ValueError):
            ss.freeze(lay, np.zeros(2))

    def test_chain_offsets_param_slots(self):
        a = ss.build_layout("diagonal", 4)
        b = ss.build_layout("pyramid", 4)
        combined = ss.chain(a, b)
        assert combined.num_params == a.num_params + b.num_params
        rng = np.random.default_rng(3)
        angles = rng.uniform(-1, 1, combined.num_params)
        out = ss.simulate(combined, angles).amplitudes
        step = ss.simulate(a, angles[: a.num_params])
        out2 = ss.simulate(b, angles[a.num_params :], step).amplitudes
        np.testing.assert_allclose(out, out2, atol=1e-15)

    def test_chain_rejects_mixed_widths(self):
        with pytest.raises(ValueError):
            ss.chain(ss.build_layout("pyramid", 4), ss.build_layout("pyramid", 8))


class TestSweepGradients:
    def test_tape_forward_matches_plain_sweep(self):
        rng = np.random.default_rng(17)
        lay = ss.build_layout("butterfly", 8)
        angles = rng.uniform(-2, 2, lay.num_params)
        x = rng.normal(size=(5, 8))
        out, _ = ss.sweep_with_tape(x, lay, angles)
        np.testing.assert_allclose(out, ss.sweep(x, lay, angles), atol=0)

    def test_backward_matches_central_differences(self):
        rng = np.random.default_rng(29)
        h = 1e-6
        for kind, n in (("pyramid", 4), ("butterfly", 8), ("diagonal", 5)):
            lay = ss.build_layout(kind, n)
            angles = rng.uniform(-2, 2, lay.num_params)
            x = rng.normal(size=(3, n))
            w = rng.normal(size=(3, n))  # loss = sum(w * sweep(x))
            out, tape = ss.sweep_with_tape(x, lay, angles)
            grad_x, grad_angles = ss.sweep_backward(w, lay, tape)
            for s in range(lay.num_params):
                bumped = angles.copy()
                bumped[s] += h
                up = np.sum(w * ss.sweep(x, lay, bumped))
                bumped[s] -= 2 * h
                dn = np.sum(w * ss.sweep(x, lay, bumped))
                np.testing.assert_allclose(grad_angles[s], (up - dn) / (2 * h), rtol=2e-5, atol=1e-8)
            for idx in np.ndindex(x.shape):
                bumped = x.copy()
                bumped[idx] += h
                up = np.sum(w * ss.sweep(bumped, lay, angles))
                bumped[idx] -= 2 * h
                dn = np.sum(w * ss.sweep(bumped, lay, angles))
                np.testing.assert_allclose(grad_x[idx], (up - dn) / (2 * h), rtol=2e-5, atol=1e-8)
