"""Trust propagation over the signal graph and threshold-based edge changes.

Each node carries per-dimension goodness and fairness scores.  Goodness is
the plain average of neighbor fairness weighted by the normalized edge
weight; fairness is one minus half the average absolute gap between the
normalized incident weights and the neighbors' goodness.  Scores start from
the node features (min-max rescaled into [0, 1] per dimension) and are
iterated Jacobi-style, all goodness first and then all fairness from the
fresh goodness, until the summed l2 change of both falls under epsilon.

Candidate edges are (AP s, sample v) pairs reachable as s - u (real edge)
plus u - v (virtual edge).  The predicted weight is

    w_hat = 0.5 * w_max * mean_i(G_i(s) F_i(v) + F_i(s) G_i(v))

using the mean over dimensions so the prediction stays within [0, w_max].
A candidate at or above the decision threshold gains an edge if absent; one
below it loses its edge if present.  APs left without edges are deleted.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .data import UNDETECTED_DBM, FingerprintDatabase
from .errors import ValidationError
from .graph import WEIGHT_OFFSET, SignalGraph

logger = logging.getLogger(__name__)

__all__ = [
    "TrustScores",
    "EdgeModification",
    "compute_trust",
    "detection_threshold",
    "predict_edges",
    "new_ap_nodes",
    "apply_forgetting",
]

VIRTUAL_NORMALIZED_WEIGHT = 1.0


@dataclass
class TrustScores:
    node_ids: list[int]
    goodness: np.ndarray      # n_nodes x d
    fairness: np.ndarray      # n_nodes x d
    epsilon: float
    iterations: int
    converged: bool

    def of(self, node_id: int) -> tuple[np.ndarray, np.ndarray]:
        k = self.node_ids.index(node_id)
        return self.goodness[k], self.fairness[k]


@dataclass
class EdgeModification:
    added: list[tuple[int, int, float]] = field(default_factory=list)    # (sample, ap, w)
    removed: list[tuple[int, int]] = field(default_factory=list)         # (sample, ap)
    removed_ap_macs: list[str] = field(default_factory=list)
    delta: float = 0.0
    w_max: float = 0.0

    def to_json(self) -> dict:
        return {
            "added": [[s, a, w] for s, a, w in self.added],
            "removed": [[s, a] for s, a in self.removed],
            "removed_ap_macs": list(self.removed_ap_macs),
            "delta": self.delta,
            "w_max": self.w_max,
        }


def _minmax_rescale(features: np.ndarray) -> np.ndarray:
    lo = features.min(axis=0)
    hi = features.max(axis=0)
    span = hi - lo
    out = np.zeros_like(features)
    ok = span > 0.0
    out[:, ok] = (features[:, ok] - lo[ok]) / span[ok]
    return out


def _neighborhoods(g: SignalGraph, ids: list[int]):
    """Per node: (neighbor index array, normalized weight array)."""
    index = {nid: k for k, nid in enumerate(ids)}
    w_max = g.max_weight()
    nbrs: list[list[int]] = [[] for _ in ids]
    wts: list[list[float]] = [[] for _ in ids]
    for (s, a), w in g.edges.items():
        wn = w / w_max if w_max > 0 else 0.0
        nbrs[index[s]].append(index[a])
        wts[index[s]].append(wn)
        nbrs[index[a]].append(index[s])
        wts[index[a]].append(wn)
    for (u, v) in sorted(g.virtual_edges):
        nbrs[index[u]].append(index[v])
        wts[index[u]].append(VIRTUAL_NORMALIZED_WEIGHT)
        nbrs[index[v]].append(index[u])
        wts[index[v]].append(VIRTUAL_NORMALIZED_WEIGHT)
    return ([np.array(n, dtype=np.intp) for n in nbrs],
            [np.array(w) for w in wts])


def compute_trust(g: SignalGraph, features: np.ndarray, node_ids: list[int],
                  epsilon: float = 0.1, max_iterations: int = 100,
                  rescale: bool = True) -> TrustScores:
    """Iterate goodness/fairness to (near) fixed point.

    features rows follow node_ids and seed both score vectors; isolated
    nodes keep their initialization.  Virtual edges take part with
    normalized weight 1.
    """
    features = np.asarray(features, dtype=np.float64)
    if features.shape[0] != len(node_ids):
        raise ValidationError("one feature row per node id required")
    init = _minmax_rescale(features) if rescale else features.copy()
    nbrs, wts = _neighborhoods(g, node_ids)
    goodness = init.copy()
    fairness = init.copy()
    iterations = 0
    converged = False
    while iterations < max_iterations:
        new_goodness = goodness.copy()
        for k in range(len(node_ids)):
            if nbrs[k].size == 0:
                continue
            new_goodness[k] = (fairness[nbrs[k]] * wts[k][:, None]).mean(axis=0)
        new_fairness = fairness.copy()
        for k in range(len(node_ids)):
            if nbrs[k].size == 0:
                continue
            gaps = np.abs(wts[k][:, None] - new_goodness[nbrs[k]])
            new_fairness[k] = 1.0 - 0.5 * gaps.mean(axis=0)
        change_g = float(np.linalg.norm(new_goodness - goodness, axis=1).sum())
        change_f = float(np.linalg.norm(new_fairness - fairness, axis=1).sum())
        goodness, fairness = new_goodness, new_fairness
        iterations += 1
        if change_g <= epsilon and change_f <= epsilon:
            converged = True
            break
    if not converged:
        logger.warning("compute_trust: no convergence after %d iterations", iterations)
    return TrustScores(list(node_ids), goodness, fairness, epsilon, iterations, converged)


def detection_threshold(db: FingerprintDatabase, strict: bool = False) -> float:
    """Decision threshold: 120 minus the largest detected |RSS| in the db.

    Undetected (-120) fills are excluded; including them would force the
    threshold to zero and removal could never trigger.  strict=True keeps
    the zero threshold.
    """
    if strict:
        return 0.0
    detected = db.rss[db.rss > UNDETECTED_DBM]
    if detected.size == 0:
        return 0.0
    return float(WEIGHT_OFFSET - np.abs(detected).max())


def _candidates(g: SignalGraph) -> list[tuple[int, int]]:
    """Deduplicated (ap, sample) pairs witnessed by a real plus virtual path."""
    virtual_nbrs: dict[int, list[int]] = {}
    for (u, v) in sorted(g.virtual_edges):
        virtual_nbrs.setdefault(u, []).append(v)
        virtual_nbrs.setdefault(v, []).append(u)
    seen: set[tuple[int, int]] = set()
    out: list[tuple[int, int]] = []
    for (u_sample, s_ap) in g.edges:
        for v_sample in virtual_nbrs.get(u_sample, ()):
            key = (s_ap, v_sample)
            if key not in seen:
                seen.add(key)
                out.append(key)
    return out


def predict_edges(g: SignalGraph, scores: TrustScores, delta: float,
                  w_max: float | None = None) -> EdgeModification:
    """Score candidate pairs and decide edge additions and removals."""
    if w_max is None:
        w_max = g.max_weight()
    index = {nid: k for k, nid in enumerate(scores.node_ids)}
    mods = EdgeModification(delta=float(delta), w_max=float(w_max))
    for s_ap, v_sample in _candidates(g):
        ks, kv = index[s_ap], index[v_sample]
        products = (scores.goodness[ks] * scores.fairness[kv]
                    + scores.fairness[ks] * scores.goodness[kv])
        w_hat = 0.5 * w_max * float(products.mean())
        exists = (v_sample, s_ap) in g.edges
        if w_hat >= delta and not exists:
            mods.added.append((v_sample, s_ap, w_hat))
        elif w_hat < delta and exists:
            mods.removed.append((v_sample, s_ap))
    return mods


def new_ap_nodes(g: SignalGraph, new_macs: list[str], batch_node_ids: list[int],
                 batch_rss_new: np.ndarray) -> list[int]:
    """AP nodes for MACs first seen in this batch.

    batch_rss_new columns follow new_macs and rows follow batch_node_ids;
    edges carry the shifted RSS and the node feature is the weighted
    average of its neighbors' features.
    """
    batch_rss_new = np.asarray(batch_rss_new, dtype=np.float64)
    if batch_rss_new.shape != (len(batch_node_ids), len(new_macs)):
        raise ValidationError("batch_rss_new must be len(batch_node_ids) x len(new_macs)")
    created = []
    for j, mac in enumerate(new_macs):
        detected = np.nonzero(batch_rss_new[:, j] > UNDETECTED_DBM)[0]
        if detected.size == 0:
            continue
        ap_id = g.add_ap_node(mac)
        for i in detected:
            g.add_edge(batch_node_ids[i], ap_id, batch_rss_new[i, j] + WEIGHT_OFFSET)
        nbrs = g.ap_neighbors(ap_id)
        weights = np.array([w for _, w in nbrs])
        feats = np.stack([g.samples[s].feature for s, _ in nbrs])
        g.aps[ap_id].feature = (weights[:, None] * feats).sum(axis=0) / weights.sum()
        created.append(ap_id)
    return created


def apply_forgetting(g: SignalGraph, mods: EdgeModification) -> list[str]:
    """Apply the computed edge modification; delete APs left isolated.

    Returns (and records on mods) the MACs of deleted AP nodes; their
    database columns are dropped on export.
    """
    for sample_id, ap_id, w in mods.added:
        if w < mods.delta:
            raise ValidationError("added edge below the decision threshold")
        g.add_edge(sample_id, ap_id, w)
    for sample_id, ap_id in mods.removed:
        if (sample_id, ap_id) not in g.edges:
            raise ValidationError(f"cannot remove missing edge {(sample_id, ap_id)}")
        g.remove_edge(sample_id, ap_id)
    removed_macs = []
    for ap_id in [a for a in g.aps if not g.ap_neighbors(a)]:
        removed_macs.append(g.remove_ap(ap_id))
    mods.removed_ap_macs = removed_macs
    return removed_macs
