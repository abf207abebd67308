import numpy as np
import numpy.testing as npt
import pytest
from oracles import fd_gradients, max_rel_error

from gufu import numerics as nm
from gufu.errors import DimensionError, ValidationError
from gufu.feature_extractor import Autoencoder
from gufu.rng import derive_rng


def synthetic_rss(n, m, seed=0):
    """Smooth normalized rows so nearby rows look alike."""
    rng = np.random.default_rng(seed)
    centers = rng.uniform(0.0, 1.0, size=(m, 2))
    points = rng.uniform(0.0, 1.0, size=(n, 2))
    d = np.linalg.norm(points[:, None, :] - centers[None, :, :], axis=2)
    x = np.clip(0.9 - 0.8 * d, 0.0, 1.0)
    return points, x


class TestEncodeDecode:
    def test_zero_weight_encoder_gives_zero_features(self):
        ae = Autoencoder(6, hidden=8, code=4, seed=1)
        for name in ("ae.enc.w1", "ae.enc.w2"):
            ae.params[name].data = np.zeros_like(ae.params[name].data)
        out = ae.encode(np.random.default_rng(0).uniform(0, 1, (3, 6)))
        npt.assert_array_equal(out, np.zeros((3, 4)))

    def test_identical_rows_identical_features(self):
        ae = Autoencoder(5, hidden=8, code=4, seed=2)
        row = np.random.default_rng(1).uniform(0, 1, 5)
        out = ae.encode(np.stack([row, row]))
        npt.assert_array_equal(out[0], out[1])

    def test_row_permutation_permutes_features(self):
        ae = Autoencoder(5, hidden=8, code=4, seed=3)
        x = np.random.default_rng(2).uniform(0, 1, (6, 5))
        perm = np.array([3, 1, 5, 0, 4, 2])
        npt.assert_array_equal(ae.encode(x)[perm], ae.encode(x[perm]))

    def test_zero_decoder_outputs_constant_sigmoid_bias(self):
        ae = Autoencoder(5, hidden=8, code=4, seed=4)
        for name in ("ae.dec.w1", "ae.dec.w2"):
            ae.params[name].data = np.zeros_like(ae.params[name].data)
        ae.params["ae.dec.b2"].data = np.full(5, 0.3)
        out = ae.decode(np.random.default_rng(3).normal(size=(2, 4)))
        npt.assert_allclose(out, 1.0 / (1.0 + np.exp(-0.3)))
        assert np.allclose(out[0], out[1])

    def test_decode_range_and_shapes(self):
        ae = Autoencoder(7, hidden=8, code=4, seed=5)
        out = ae.decode(np.random.default_rng(4).normal(size=(10, 4)) * 5)
        assert out.shape == (10, 7)
        assert out.min() >= 0.0 and out.max() <= 1.0

    def test_shape_errors(self):
        ae = Autoencoder(5, hidden=8, code=4)
        with pytest.raises(DimensionError):
            ae.encode(np.zeros((2, 4)))
        with pytest.raises(DimensionError):
            ae.decode(np.zeros((2, 5)))
        with pytest.raises(ValidationError):
            ae.encode(np.full((2, 5), 2.0))


class TestTraining:
    def test_epochs_zero_no_op(self):
        ae = Autoencoder(5, hidden=8, code=4, seed=6)
        before = ae.params["ae.enc.w1"].data.copy()
        history = ae.train_initial(np.random.default_rng(5).uniform(0, 1, (4, 5)),
                                   epochs=0)
        assert history == []
        npt.assert_array_equal(ae.params["ae.enc.w1"].data, before)

    def test_identical_rows_loss_decreases(self):
        row = np.random.default_rng(6).uniform(0.2, 0.8, 5)
        x = np.tile(row, (8, 1))
        ae = Autoencoder(5, hidden=16, code=4, seed=7)
        history = ae.train_initial(x, epochs=30)
        assert len(history) == 30
        assert history[-1] < history[0]

    def test_synthetic_db_major_loss_drop(self):
        _, x = synthetic_rss(200, 50, seed=8)
        ae = Autoencoder(50, hidden=128, code=32, seed=8)
        history = ae.train_initial(x, epochs=50, rng=derive_rng(8, "t"))
        assert history[-1] < 0.25 * history[0]

    def test_ten_epoch_windows_non_increasing(self):
        _, x = synthetic_rss(120, 30, seed=9)
        ae = Autoencoder(30, hidden=64, code=16, seed=9)
        history = ae.train_initial(x, epochs=50)
        for i in range(len(history) - 10):
            assert history[i + 10] <= history[i] + 1e-9

    def test_gradient_check_full_autoencoder(self):
        rng = np.random.default_rng(10)
        ae = Autoencoder(12, hidden=5, code=3, seed=10, dropout_rate=0.0)
        x = nm.constant(rng.uniform(0.1, 0.9, size=(4, 12)))

        def loss_t():
            z = ae._encode_t(x)
            return nm.frobenius_diff(x, ae._decode_t(z))

        nm.forward_backward(ae.params, loss_t)
        analytic = {n: ae.params[n].grad.copy() for n in ae.params.names()}
        numeric = fd_gradients(ae.params, lambda: loss_t().item())
        assert max_rel_error(analytic, numeric) < 1e-4


class TestRetrainConsistent:
    def make_trained(self, n=40, m=12, seed=11):
        _, x = synthetic_rss(n, m, seed=seed)
        ae = Autoencoder(m, hidden=32, code=8, seed=seed)
        ae.train_initial(x, epochs=30)
        return ae, x

    def test_no_drift_consistency_terms_start_at_zero(self):
        ae, x = self.make_trained()
        z = ae.encode(x)
        xhat = ae.decode(z)
        history = ae.retrain_consistent(x, z, xhat, epochs=1)
        assert history[0]["cons_enc"] < 1e-9
        assert history[0]["cons_dec"] < 1e-9

    def test_perturbed_target_consistency_term_analytic(self):
        ae, x = self.make_trained()
        z = ae.encode(x) + 0.1
        xhat = ae.decode(z)
        history = ae.retrain_consistent(x, z, xhat, epochs=1)
        expected = np.sqrt(z.size) * 0.1
        npt.assert_allclose(history[0]["cons_enc"], expected, rtol=1e-9)
        assert history[0]["cons_dec"] < 1e-12

    def test_retraining_reduces_encoder_gap(self):
        ae, x = self.make_trained()
        rng = np.random.default_rng(12)
        z_target = ae.encode(x) + rng.normal(0, 0.2, size=(x.shape[0], 8))
        xhat_target = ae.decode(z_target)
        before = np.linalg.norm(ae.encode(x) - z_target)
        ae.retrain_consistent(x, z_target, xhat_target, epochs=40)
        after = np.linalg.norm(ae.encode(x) - z_target)
        assert after < before


class TestResize:
    def test_identity_map_same_width_unchanged(self):
        ae = Autoencoder(6, hidden=8, code=4, seed=13)
        out = ae.resize_for_aps(6, {i: i for i in range(6)})
        for name in ae.params.names():
            npt.assert_array_equal(out.params[name].data, ae.params[name].data)

    def test_add_one_ap_new_column_fresh(self):
        ae = Autoencoder(4, hidden=8, code=4, seed=14)
        out = ae.resize_for_aps(5, {i: i for i in range(4)})
        npt.assert_array_equal(out.params["ae.enc.w1"].data[:4], ae.params["ae.enc.w1"].data)
        # the added row comes from the fresh Xavier init and is nonzero
        assert np.any(out.params["ae.enc.w1"].data[4] != 0.0)
        npt.assert_array_equal(out.params["ae.dec.w2"].data[:, :4],
                               ae.params["ae.dec.w2"].data)

    def test_remove_one_ap_matches_undetected_fill(self):
        # Dropping a column equals feeding the old encoder that AP as
        # undetected: normalized 0 contributes nothing through the weights.
        ae = Autoencoder(5, hidden=8, code=4, seed=15)
        x = np.random.default_rng(7).uniform(0, 1, (6, 5))
        x_filled = x.copy()
        x_filled[:, 2] = 0.0
        column_map = {0: 0, 1: 1, 3: 2, 4: 3}
        small = ae.resize_for_aps(4, column_map)
        npt.assert_allclose(small.encode(x[:, [0, 1, 3, 4]]), ae.encode(x_filled),
                            atol=1e-12)

    def test_map_out_of_range(self):
        ae = Autoencoder(4, hidden=8, code=4)
        with pytest.raises(DimensionError):
            ae.resize_for_aps(3, {3: 5})
