import numpy as np
import numpy.testing as npt
import pytest
from oracles import fd_gradients, matmul_triple_loop, max_rel_error

from gufu import numerics as nm
from gufu.errors import DimensionError, TrainingError


class TestMatmul:
    def test_identity(self):
        m = np.array([[1.0, 2.0], [3.0, 4.0]])
        npt.assert_array_equal(nm.matmul_arrays(np.eye(2), m), m)

    def test_hand_arithmetic(self):
        a = np.array([[1.0, 2.0], [3.0, 4.0]])
        b = np.array([[0.0], [1.0]])
        npt.assert_array_equal(nm.matmul_arrays(a, b), [[2.0], [4.0]])

    def test_matches_triple_loop_oracle(self):
        rng = np.random.default_rng(11)
        a = rng.normal(size=(5, 7))
        b = rng.normal(size=(7, 3))
        npt.assert_allclose(nm.matmul_arrays(a, b), matmul_triple_loop(a, b),
                            rtol=1e-12, atol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            nm.matmul_arrays(np.zeros((2, 3)), np.zeros((2, 3)))


class TestForwardBackward:
    def test_identity_reconstruction_zero_loss_zero_grads(self):
        params = nm.ParamSet()
        w = params.add("w", np.eye(3))
        x = nm.constant(np.arange(9.0).reshape(3, 3))

        def loss_fn():
            return nm.frobenius_diff(nm.matmul(w, x), x)

        loss, _ = nm.forward_backward(params, loss_fn)
        assert loss == 0.0
        npt.assert_array_equal(w.grad, np.zeros((3, 3)))

    def test_affine_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(3)
        params = nm.ParamSet()
        w = params.add("w", rng.normal(size=(3, 3)))
        b = params.add("b", rng.normal(size=3))
        x = nm.constant(rng.normal(size=(3, 3)))
        target = nm.constant(rng.normal(size=(3, 3)))

        def loss_t():
            return nm.frobenius_diff(nm.affine(x, w, b), target)

        nm.forward_backward(params, loss_t)
        analytic = {"w": w.grad.copy(), "b": b.grad.copy()}
        numeric = fd_gradients(params, lambda: loss_t().item())
        assert max_rel_error(analytic, numeric) < 1e-4

    def test_dropout_eval_mode_identity(self):
        x = nm.constant(np.arange(12.0).reshape(3, 4))
        out = nm.dropout(x, 0.5, None, training=False)
        npt.assert_array_equal(out.data, x.data)

    def test_non_finite_loss_names_term(self):
        params = nm.ParamSet()
        w = params.add("w", np.array([[-1.0]]))

        def loss_fn():
            bad = nm.log(w)
            return bad, {"log_term": nm.sum_all(bad)}

        with pytest.raises(TrainingError, match="log_term"):
            nm.forward_backward(params, loss_fn)


class TestPrimitiveGradients:
    """Every differentiable primitive against central differences."""

    @pytest.mark.parametrize("case", [
        "relu", "sigmoid", "log", "row_norm", "concat", "gather",
        "segment_mean", "rowwise_dot", "mul", "frobenius",
    ])
    def test_against_finite_differences(self, case):
        rng = np.random.default_rng(abs(hash(case)) % (2**31))
        params = nm.ParamSet()
        w = params.add("w", rng.uniform(0.5, 1.5, size=(4, 3)))
        c3 = nm.constant(rng.normal(size=(4, 3)))
        c6 = nm.constant(rng.normal(size=(4, 6)))

        others = {
            "relu": lambda t: nm.sum_all(nm.relu(nm.sub(t, 0.9))),
            "sigmoid": lambda t: nm.sum_all(nm.sigmoid(t)),
            "log": lambda t: nm.sum_all(nm.log(t)),
            "row_norm": lambda t: nm.sum_all(nm.mul(nm.row_l2_normalize(t), c3)),
            "concat": lambda t: nm.sum_all(nm.mul(nm.concat_cols([t, t]), c6)),
            "gather": lambda t: nm.sum_all(nm.mul(nm.gather_rows(t, [0, 2, 2, 1]), c3)),
            "segment_mean": lambda t: nm.sum_all(
                nm.mul(nm.segment_mean(t, [0, 0, 1, 2], 4), c3)),
            "rowwise_dot": lambda t: nm.sum_all(
                nm.sigmoid(nm.rowwise_dot(t, c3))),
            "mul": lambda t: nm.sum_all(nm.mul(t, t)),
            "frobenius": lambda t: nm.frobenius_diff(t, c3),
        }
        fn = others[case]
        nm.forward_backward(params, lambda: fn(w))
        analytic = {"w": w.grad.copy()}
        numeric = fd_gradients(params, lambda: fn(w).item())
        assert max_rel_error(analytic, numeric) < 1e-4, case

    def test_row_normalize_unit_norms(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(10, 6))
        x[3] = 0.0
        out = nm.row_l2_normalize(nm.constant(x)).data
        norms = np.linalg.norm(out, axis=1)
        npt.assert_allclose(np.delete(norms, 3), 1.0, atol=1e-12)
        npt.assert_array_equal(out[3], np.zeros(6))

    def test_segment_mean_empty_segment_is_zero(self):
        x = nm.constant(np.ones((2, 3)))
        out = nm.segment_mean(x, [0, 2], 4).data
        npt.assert_array_equal(out[1], np.zeros(3))
        npt.assert_array_equal(out[3], np.zeros(3))
        npt.assert_array_equal(out[0], np.ones(3))


class TestOptimizer:
    def test_zero_gradients_leave_params_unchanged(self):
        params = nm.ParamSet()
        w = params.add("w", np.ones((2, 2)))
        params.step(0.01)
        npt.assert_array_equal(w.data, np.ones((2, 2)))

    def test_sgd_definition(self):
        params = nm.ParamSet()
        w = params.add("w", np.array([[1.0]]))
        w.grad = np.array([[2.0]])
        params.step(0.01, mode="sgd")
        npt.assert_allclose(w.data, [[0.98]])
        assert w.grad is None

    @pytest.mark.parametrize("mode", ["sgd", "adam"])
    def test_quadratic_descent_is_monotone(self, mode):
        params = nm.ParamSet()
        w = params.add("w", np.array([[2.0, -1.5], [0.5, 3.0]]))
        target = nm.constant(np.array([[0.4, 0.1], [-0.2, 0.3]]))

        def loss_fn():
            diff = nm.sub(w, target)
            return nm.sum_all(nm.mul(diff, diff))

        losses = []
        for _ in range(20):
            loss, _ = nm.forward_backward(params, loss_fn)
            params.step(0.01, mode=mode)
            losses.append(loss)
        assert all(b < a for a, b in zip(losses, losses[1:]))


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(9)
        entries = {
            "a.w": rng.normal(size=(4, 5)),
            "a.b": rng.normal(size=5),
            "scalar": np.array([3.25]),
        }
        nm.save_checkpoint(tmp_path / "ckpt", entries)
        loaded = nm.load_checkpoint(tmp_path / "ckpt")
        assert list(loaded) == list(entries)
        for name in entries:
            assert loaded[name].tobytes() == entries[name].tobytes()

    def test_repeated_save_is_byte_identical(self, tmp_path):
        entries = {"w": np.linspace(0, 1, 7).reshape(1, 7)}
        nm.save_checkpoint(tmp_path / "c1", entries)
        nm.save_checkpoint(tmp_path / "c2", entries)
        assert (tmp_path / "c1.bin").read_bytes() == (tmp_path / "c2.bin").read_bytes()
        assert (tmp_path / "c1.json").read_bytes() == (tmp_path / "c2.json").read_bytes()

    def test_paramset_state_round_trip(self, tmp_path):
        params = nm.ParamSet()
        w = params.add("w", np.array([[1.0, 2.0]]))
        w.grad = np.array([[0.5, -0.5]])
        params.step(0.01)
        nm.save_checkpoint(tmp_path / "s", params.state_arrays())

        params2 = nm.ParamSet()
        params2.add("w", np.zeros((1, 2)))
        params2.load_state_arrays(nm.load_checkpoint(tmp_path / "s"))
        npt.assert_array_equal(params2["w"].data, params["w"].data)
        # One more identical step on both must stay in lockstep (Adam state).
        for p in (params, params2):
            p["w"].grad = np.array([[0.25, 0.1]])
            p.step(0.01)
        npt.assert_array_equal(params["w"].data, params2["w"].data)
