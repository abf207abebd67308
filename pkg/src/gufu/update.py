"""Two-MLP update module: locations for new samples, fresh features for old.

The first MLP maps a graph embedding to a location (meters); the second maps
a location back to an embedding.  Training combines the fit losses on both
with consistency terms that tie predictions for new samples to the labels
and features of their virtual neighbors among the old samples:

    L = alpha * (L_P + L_U) + (1 - alpha) * (L_CP + L_CU)

The adjacency used by the consistency terms has one column per new sample,
normalized to sum 1, so a new sample's target is the arithmetic mean over
its old virtual neighbors (an exact copy for a single neighbor); new samples
with no old virtual neighbor are masked out of the consistency terms.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import numerics as nm
from .data import FingerprintDatabase, denormalize_rss
from .errors import ContractError, DimensionError
from .feature_extractor import Autoencoder
from .graph import SignalGraph
from .rng import derive_rng

logger = logging.getLogger(__name__)

__all__ = [
    "UpdateMlps",
    "VirtualAdjacency",
    "build_virtual_adjacency",
    "train_update_module",
    "predict_locations",
    "update_features",
    "apply_fingerprint_update",
]


@dataclass
class VirtualAdjacency:
    """Old-sample x new-sample incidence with columns normalized to sum 1."""

    matrix: np.ndarray            # n_old x n_new, column sums in {0, 1}
    column_mask: np.ndarray       # n_new bools: column had >= 1 neighbor
    old_ids: list[int]
    new_ids: list[int]


def build_virtual_adjacency(g: SignalGraph, old_ids: list[int],
                            new_ids: list[int]) -> VirtualAdjacency:
    old_pos = {nid: i for i, nid in enumerate(old_ids)}
    new_pos = {nid: j for j, nid in enumerate(new_ids)}
    a = np.zeros((len(old_ids), len(new_ids)))
    for u, v in g.virtual_edges:
        if u in old_pos and v in new_pos:
            a[old_pos[u], new_pos[v]] = 1.0
        elif v in old_pos and u in new_pos:
            a[old_pos[v], new_pos[u]] = 1.0
    sums = a.sum(axis=0)
    mask = sums > 0.0
    a[:, mask] /= sums[mask]
    return VirtualAdjacency(a, mask, list(old_ids), list(new_ids))


class UpdateMlps:
    """mlp_loc: embedding -> location; mlp_feat: location -> embedding."""

    def __init__(self, feature_dim: int, *, hidden: int = 64, alpha: float = 0.5,
                 site_bounds: tuple[float, float, float, float], seed: int = 0):
        self.feature_dim = int(feature_dim)
        self.hidden = int(hidden)
        self.alpha = float(alpha)
        self.site_bounds = tuple(site_bounds)
        self.seed = int(seed)
        self.trained = False
        self.params = nm.ParamSet()
        rng = derive_rng(seed, "upd-init")
        p = self.params
        p.add("upd.loc.w1", nm.xavier_uniform((feature_dim, hidden), rng))
        p.add("upd.loc.b1", np.zeros(hidden))
        p.add("upd.loc.w2", nm.xavier_uniform((hidden, 2), rng))
        p.add("upd.loc.b2", np.zeros(2))
        p.add("upd.feat.w1", nm.xavier_uniform((2, hidden), rng))
        p.add("upd.feat.b1", np.zeros(hidden))
        p.add("upd.feat.w2", nm.xavier_uniform((hidden, feature_dim), rng))
        p.add("upd.feat.b2", np.zeros(feature_dim))

    def _scale_locations(self, y: np.ndarray) -> np.ndarray:
        x0, y0, x1, y1 = self.site_bounds
        span = np.array([max(x1 - x0, 1e-12), max(y1 - y0, 1e-12)])
        return (np.asarray(y, dtype=np.float64) - np.array([x0, y0])) / span

    def _loc_t(self, z: nm.Tensor) -> nm.Tensor:
        p = self.params
        h = nm.relu(nm.affine(z, p["upd.loc.w1"], p["upd.loc.b1"]))
        return nm.affine(h, p["upd.loc.w2"], p["upd.loc.b2"])

    def _feat_t(self, y_scaled: nm.Tensor) -> nm.Tensor:
        p = self.params
        h = nm.relu(nm.affine(y_scaled, p["upd.feat.w1"], p["upd.feat.b1"]))
        return nm.affine(h, p["upd.feat.w2"], p["upd.feat.b2"])

    def state_arrays(self) -> dict[str, np.ndarray]:
        return self.params.state_arrays()

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        self.params.load_state_arrays(arrays)
        self.trained = True


def train_update_module(mlps: UpdateMlps, z_x: np.ndarray, y_x: np.ndarray,
                        z_u: np.ndarray, adjacency: VirtualAdjacency | None,
                        epochs: int = 200, lr: float = 0.01) -> list[dict]:
    """Train both MLPs; returns per-epoch histories of all loss components."""
    z_x = np.asarray(z_x, dtype=np.float64)
    y_x = np.asarray(y_x, dtype=np.float64)
    z_u = np.asarray(z_u, dtype=np.float64)
    if z_x.shape[1] != mlps.feature_dim or (z_u.size and z_u.shape[1] != mlps.feature_dim):
        raise DimensionError("embedding width does not match the update module")
    alpha = mlps.alpha
    use_consistency = (
        alpha < 1.0
        and adjacency is not None
        and z_u.shape[0] > 0
        and bool(adjacency.column_mask.any())
    )
    if alpha < 1.0 and not use_consistency:
        logger.warning("no old-new virtual edges; consistency terms skipped")

    z_x_c = nm.constant(z_x)
    y_x_c = nm.constant(y_x)
    z_u_c = nm.constant(z_u)
    y_x_scaled_c = nm.constant(mlps._scale_locations(y_x))
    if use_consistency:
        at = nm.constant(adjacency.matrix.T)                       # n_new x n_old
        col_mask = nm.constant(adjacency.column_mask.astype(np.float64)[:, None])
        y_targets = nm.matmul(at, y_x_c)                           # n_new x 2
    history: list[dict] = []
    for _ in range(int(epochs)):
        def loss_fn():
            comps: dict[str, nm.Tensor] = {}
            y_hat_x = mlps._loc_t(z_x_c)
            lp = nm.frobenius_diff(y_x_c, y_hat_x)
            comps["lp"] = lp
            total = nm.scale(lp, alpha)
            if z_u.shape[0] > 0:
                y_hat_u = mlps._loc_t(z_u_c)
                z_hat_u = mlps._feat_t(_scale_t(mlps, y_hat_u))
                lu = nm.frobenius_diff(z_u_c, z_hat_u)
                comps["lu"] = lu
                total = total + nm.scale(lu, alpha)
                if use_consistency:
                    lcp = nm.frobenius_diff(nm.mul(y_targets, col_mask),
                                            nm.mul(y_hat_u, col_mask))
                    z_hat_x = mlps._feat_t(y_x_scaled_c)
                    lcu = nm.frobenius_diff(nm.mul(nm.matmul(at, z_hat_x), col_mask),
                                            nm.mul(z_u_c, col_mask))
                    comps["lcp"] = lcp
                    comps["lcu"] = lcu
                    total = total + nm.scale(lcp + lcu, 1.0 - alpha)
            return total, comps
        loss, comps = nm.forward_backward(mlps.params, loss_fn)
        nm.optimizer_step(mlps.params, lr)
        comps["total"] = loss
        history.append(comps)
    mlps.trained = True
    return history


def _scale_t(mlps: UpdateMlps, y: nm.Tensor) -> nm.Tensor:
    """Differentiable version of the location scaling."""
    x0, y0, x1, y1 = mlps.site_bounds
    span = np.array([max(x1 - x0, 1e-12), max(y1 - y0, 1e-12)])
    return nm.mul(y + nm.constant(-np.array([x0, y0])), nm.constant(1.0 / span))


def predict_locations(mlps: UpdateMlps, z_new: np.ndarray) -> np.ndarray:
    """Locations (meters) for new-sample embeddings, clipped to site bounds."""
    if not mlps.trained:
        raise ContractError("update module has not been trained this cycle")
    z_new = np.asarray(z_new, dtype=np.float64)
    pred = mlps._loc_t(nm.constant(z_new)).data
    x0, y0, x1, y1 = mlps.site_bounds
    lo = np.array([x0, y0])
    hi = np.array([x1, y1])
    outside = int(np.sum(np.any((pred < lo) | (pred > hi), axis=1)))
    if outside:
        logger.info("predict_locations: clipping %d prediction(s) to site bounds", outside)
    return np.clip(pred, lo, hi)


def update_features(mlps: UpdateMlps, y_old: np.ndarray) -> np.ndarray:
    """Updated feature vectors for the database rows, queried by location."""
    if not mlps.trained:
        raise ContractError("update module has not been trained this cycle")
    y_scaled = mlps._scale_locations(y_old)
    return mlps._feat_t(nm.constant(y_scaled)).data


def apply_fingerprint_update(db: FingerprintDatabase, mlps: UpdateMlps,
                             autoencoder: Autoencoder, *,
                             snap_floor_dbm: float = -110.0) -> tuple[FingerprintDatabase, dict]:
    """Decode updated features into RSS and replace the database matrix.

    Locations, row count and MAC list are untouched.  Decoded values that
    fall below snap_floor_dbm are treated as undetected (-120).
    """
    z_hat = update_features(mlps, db.locations)
    codes = z_hat[:, :autoencoder.code]
    decoded = autoencoder.decode(codes)
    clamped = int(np.sum((decoded < 0.0) | (decoded > 1.0)))
    if clamped:
        logger.info("apply_fingerprint_update: clamping %d decoded value(s)", clamped)
    rss = denormalize_rss(np.clip(decoded, 0.0, 1.0))
    snapped = rss <= snap_floor_dbm
    rss[snapped] = -120.0
    new_db = FingerprintDatabase(db.locations.copy(), rss, list(db.macs), db.site_bounds)
    stats = {"clamped": clamped, "snapped": int(snapped.sum())}
    return new_db, stats
