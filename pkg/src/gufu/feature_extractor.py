"""Autoencoder mapping normalized RSS rows to fixed-length feature vectors.

The encoder is n_in -> hidden -> code (relu + dropout on the hidden layer,
linear code); the decoder mirrors it with a relu hidden layer and a sigmoid
output so reconstructions stay inside the normalized RSS range [0, 1].
Training minimizes the Frobenius norm of the reconstruction residual; the
per-batch retraining adds consistency terms that tie the encoder and decoder
to an externally updated feature set.
"""

from __future__ import annotations

import logging

import numpy as np

from . import numerics as nm
from .errors import DimensionError, ValidationError
from .rng import derive_rng

logger = logging.getLogger(__name__)

__all__ = ["Autoencoder"]

_INPUT_TOL = 1e-9


class Autoencoder:
    CODE_DIM = 32

    def __init__(self, n_in: int, hidden: int = 128, code: int = CODE_DIM, *,
                 seed: int = 0, dropout_rate: float = 0.5):
        if n_in < 1:
            raise ValidationError("autoencoder needs at least one input column")
        self.n_in = int(n_in)
        self.hidden = int(hidden)
        self.code = int(code)
        self.dropout_rate = float(dropout_rate)
        self.seed = int(seed)
        self.params = nm.ParamSet()
        rng = derive_rng(seed, "ae-init")
        p = self.params
        p.add("ae.enc.w1", nm.xavier_uniform((n_in, hidden), rng))
        p.add("ae.enc.b1", np.zeros(hidden))
        p.add("ae.enc.w2", nm.xavier_uniform((hidden, code), rng))
        p.add("ae.enc.b2", np.zeros(code))
        p.add("ae.dec.w1", nm.xavier_uniform((code, hidden), rng))
        p.add("ae.dec.b1", np.zeros(hidden))
        p.add("ae.dec.w2", nm.xavier_uniform((hidden, n_in), rng))
        p.add("ae.dec.b2", np.zeros(n_in))

    # -- forward passes -----------------------------------------------------

    def _encode_t(self, x: nm.Tensor, *, training: bool = False,
                  rng: np.random.Generator | None = None) -> nm.Tensor:
        p = self.params
        h = nm.relu(nm.affine(x, p["ae.enc.w1"], p["ae.enc.b1"]))
        h = nm.dropout(h, self.dropout_rate, rng, training)
        return nm.affine(h, p["ae.enc.w2"], p["ae.enc.b2"])

    def _decode_t(self, z: nm.Tensor) -> nm.Tensor:
        p = self.params
        h = nm.relu(nm.affine(z, p["ae.dec.w1"], p["ae.dec.b1"]))
        return nm.sigmoid(nm.affine(h, p["ae.dec.w2"], p["ae.dec.b2"]))

    def _check_input(self, x_norm: np.ndarray) -> np.ndarray:
        x = np.asarray(x_norm, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise DimensionError(f"expected N x {self.n_in} input, got {x.shape}")
        if x.min() < -_INPUT_TOL or x.max() > 1.0 + _INPUT_TOL:
            raise ValidationError("encoder input must be normalized to [0, 1]")
        return x

    def encode(self, x_norm: np.ndarray) -> np.ndarray:
        """Feature vectors for normalized RSS rows (inference: dropout off)."""
        x = self._check_input(x_norm)
        return self._encode_t(nm.constant(x)).data

    def decode(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64)
        if z.ndim != 2 or z.shape[1] != self.code:
            raise DimensionError(f"expected N x {self.code} codes, got {z.shape}")
        return self._decode_t(nm.constant(z)).data

    # -- training -----------------------------------------------------------

    def train_initial(self, x_norm: np.ndarray, epochs: int = 50, lr: float = 0.01,
                      *, rng: np.random.Generator | None = None) -> list[float]:
        """Full-batch training on the reconstruction loss; returns the history."""
        x = self._check_input(x_norm)
        if x.shape[0] < 2:
            raise ValidationError("initial training needs at least 2 rows")
        if rng is None:
            rng = derive_rng(self.seed, "ae-train")
        x_c = nm.constant(x)
        history: list[float] = []
        for _ in range(int(epochs)):
            def loss_fn():
                z = self._encode_t(x_c, training=True, rng=rng)
                xhat = self._decode_t(z)
                return nm.frobenius_diff(x_c, xhat)
            loss, _ = nm.forward_backward(self.params, loss_fn)
            nm.optimizer_step(self.params, lr)
            history.append(loss)
        return history

    def retrain_consistent(self, x_norm: np.ndarray, z_target: np.ndarray,
                           xhat_target: np.ndarray, epochs: int = 20, lr: float = 0.01,
                           *, rng: np.random.Generator | None = None) -> list[dict]:
        """Reconstruction loss plus consistency with an updated feature set.

        z_target holds the externally updated codes for the same rows and
        xhat_target the RSS the decoder should produce from them.  Runs
        without dropout so the consistency terms are exact (they start at
        zero when the targets match the current encoder/decoder).  Each
        history entry carries the individual terms.
        """
        x = self._check_input(x_norm)
        z_t = np.asarray(z_target, dtype=np.float64)
        xh_t = np.asarray(xhat_target, dtype=np.float64)
        if z_t.shape != (x.shape[0], self.code):
            raise DimensionError(f"z_target must be {x.shape[0]} x {self.code}")
        if xh_t.shape != x.shape:
            raise DimensionError("xhat_target must match the input shape")
        x_c, z_c, xh_c = nm.constant(x), nm.constant(z_t), nm.constant(xh_t)
        history: list[dict] = []
        for _ in range(int(epochs)):
            def loss_fn():
                z = self._encode_t(x_c)
                xhat = self._decode_t(z)
                recon = nm.frobenius_diff(x_c, xhat)
                cons_enc = nm.frobenius_diff(z, z_c)
                cons_dec = nm.frobenius_diff(self._decode_t(z_c), xh_c)
                total = recon + 0.5 * (cons_enc + cons_dec)
                return total, {"recon": recon, "cons_enc": cons_enc, "cons_dec": cons_dec}
            loss, comps = nm.forward_backward(self.params, loss_fn)
            nm.optimizer_step(self.params, lr)
            comps["total"] = loss
            history.append(comps)
        return history

    # -- structural changes --------------------------------------------------

    def resize_for_aps(self, new_n_in: int, column_map: dict[int, int], *,
                       seed: int | None = None) -> "Autoencoder":
        """A copy sized for a changed AP set.

        column_map sends surviving old input columns to their new positions;
        weights tied to surviving columns are copied, new columns keep the
        fresh Xavier init, hidden layers are copied unchanged.
        """
        for old, new in column_map.items():
            if not (0 <= old < self.n_in) or not (0 <= new < new_n_in):
                raise DimensionError(f"column_map entry out of range: {old} -> {new}")
        if len(set(column_map.values())) != len(column_map):
            raise ValidationError("column_map maps two old columns to one new column")
        out = Autoencoder(new_n_in, self.hidden, self.code,
                          seed=self.seed if seed is None else seed,
                          dropout_rate=self.dropout_rate)
        src, dst = self.params, out.params
        for name in ("ae.enc.b1", "ae.enc.w2", "ae.enc.b2",
                     "ae.dec.w1", "ae.dec.b1"):
            dst[name].data = src[name].data.copy()
        for old, new in column_map.items():
            dst["ae.enc.w1"].data[new, :] = src["ae.enc.w1"].data[old, :]
            dst["ae.dec.w2"].data[:, new] = src["ae.dec.w2"].data[:, old]
            dst["ae.dec.b2"].data[new] = src["ae.dec.b2"].data[old]
        return out

    # -- persistence ----------------------------------------------------------

    def state_arrays(self) -> dict[str, np.ndarray]:
        return self.params.state_arrays()

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        self.params.load_state_arrays(arrays)
