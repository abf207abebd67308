"""The bipartite signal graph and its aggregation network.

Sample nodes carry a feature vector of encoder output concatenated with the
node's (bounds-scaled) location; AP nodes are identified by MAC.  Real edges
connect samples to the APs they detect, weighted by the detected RSS shifted
up by 120 dBm so weights are strictly positive.  Transient virtual edges
connect pairs of sample nodes whose feature cosine similarity exceeds a
threshold.

The aggregation network runs L layers; each layer aggregates, per node, the
mean of relu(W0 . [edge_feature, neighbor_feature]) over incident real and
virtual edges, transforms the concatenation of the previous feature and the
aggregate with W1, and l2-normalizes.  Real edge features are then refreshed
with W2 from the concatenation of both endpoint features and the previous
edge feature; virtual edges keep their initial features within a pass.
Training maximizes edge-endpoint agreement, -sum log sigmoid(z_u . z_v) over
real plus virtual edges, optionally with uniform negative sampling to keep
the embeddings from collapsing onto a single point.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import numerics as nm
from .data import UNDETECTED_DBM, FingerprintDatabase
from .errors import ContractError, DimensionError, GufuError, ValidationError

logger = logging.getLogger(__name__)

WEIGHT_OFFSET = 120.0

__all__ = [
    "WEIGHT_OFFSET",
    "SampleNode",
    "ApNode",
    "SignalGraph",
    "build_graph",
    "init_ap_features",
    "create_virtual_edges",
    "init_gnn_params",
    "gnn_layer_count",
    "aggregate",
    "train_gnn",
    "add_batch_nodes",
    "remove_batch_nodes",
]


@dataclass
class SampleNode:
    id: int
    feature: np.ndarray
    location: np.ndarray
    is_new: bool = False
    row: int | None = None  # database row for survey nodes


@dataclass
class ApNode:
    id: int
    mac: str
    feature: np.ndarray


@dataclass
class SignalGraph:
    site_bounds: tuple[float, float, float, float]
    feature_dim: int
    samples: dict[int, SampleNode] = field(default_factory=dict)
    aps: dict[int, ApNode] = field(default_factory=dict)
    mac_to_ap: dict[str, int] = field(default_factory=dict)
    edges: dict[tuple[int, int], float] = field(default_factory=dict)  # (sample, ap) -> w
    virtual_edges: set[tuple[int, int]] = field(default_factory=set)   # sorted sample pairs
    next_id: int = 0

    # -- construction helpers -------------------------------------------------

    def _take_id(self) -> int:
        nid = self.next_id
        self.next_id += 1
        return nid

    def scale_location(self, loc) -> np.ndarray:
        """Map meters into [0, 1]^2 using the site bounds."""
        x0, y0, x1, y1 = self.site_bounds
        loc = np.asarray(loc, dtype=np.float64)
        span = np.array([max(x1 - x0, 1e-12), max(y1 - y0, 1e-12)])
        return (loc - np.array([x0, y0])) / span

    def add_sample_node(self, feature32: np.ndarray, location, *, is_new: bool,
                        row: int | None = None) -> int:
        feature = np.concatenate([np.asarray(feature32, dtype=np.float64),
                                  self.scale_location(location)])
        if feature.shape[0] != self.feature_dim:
            raise DimensionError(
                f"sample feature dim {feature.shape[0]} != {self.feature_dim}")
        nid = self._take_id()
        self.samples[nid] = SampleNode(nid, feature, np.asarray(location, dtype=np.float64),
                                       is_new=is_new, row=row)
        return nid

    def add_ap_node(self, mac: str) -> int:
        if mac in self.mac_to_ap:
            raise ValidationError(f"AP node already exists for {mac!r}")
        nid = self._take_id()
        self.aps[nid] = ApNode(nid, mac, np.zeros(self.feature_dim))
        self.mac_to_ap[mac] = nid
        return nid

    def add_edge(self, sample_id: int, ap_id: int, weight: float) -> None:
        if sample_id not in self.samples or ap_id not in self.aps:
            raise ValidationError(f"edge endpoints not in graph: {sample_id}, {ap_id}")
        if weight <= 0.0:
            raise ValidationError(f"edge weight must be positive, got {weight}")
        self.edges[(sample_id, ap_id)] = float(weight)

    def remove_edge(self, sample_id: int, ap_id: int) -> None:
        del self.edges[(sample_id, ap_id)]

    def remove_ap(self, ap_id: int) -> str:
        node = self.aps.pop(ap_id)
        del self.mac_to_ap[node.mac]
        for key in [k for k in self.edges if k[1] == ap_id]:
            del self.edges[key]
        return node.mac

    # -- queries ---------------------------------------------------------------

    def node_ids(self) -> list[int]:
        return list(self.samples) + list(self.aps)

    def sample_ids(self, *, only_new: bool | None = None) -> list[int]:
        if only_new is None:
            return list(self.samples)
        return [i for i, n in self.samples.items() if n.is_new == only_new]

    def feature_of(self, node_id: int) -> np.ndarray:
        if node_id in self.samples:
            return self.samples[node_id].feature
        return self.aps[node_id].feature

    def ap_neighbors(self, ap_id: int) -> list[tuple[int, float]]:
        return [(s, w) for (s, a), w in self.edges.items() if a == ap_id]

    def sample_neighbors(self, sample_id: int) -> list[tuple[int, float]]:
        return [(a, w) for (s, a), w in self.edges.items() if s == sample_id]

    def virtual_neighbors(self, sample_id: int) -> list[int]:
        out = []
        for u, v in self.virtual_edges:
            if u == sample_id:
                out.append(v)
            elif v == sample_id:
                out.append(u)
        return out

    def max_weight(self) -> float:
        return max(self.edges.values()) if self.edges else 0.0

    def to_debug_json(self) -> dict:
        return {
            "samples": [
                {"id": n.id, "loc": [float(n.location[0]), float(n.location[1])],
                 "new": n.is_new, "row": n.row}
                for n in self.samples.values()
            ],
            "aps": [{"id": n.id, "mac": n.mac} for n in self.aps.values()],
            "edges": [[s, a, w] for (s, a), w in self.edges.items()],
            "virtual_edges": sorted([list(p) for p in self.virtual_edges]),
        }


# -- graph construction ---------------------------------------------------------


def build_graph(db: FingerprintDatabase, features: np.ndarray) -> SignalGraph:
    """One sample node per database row, one AP node per detected MAC.

    An edge exists exactly where an RSS entry is above -120 dBm and carries
    weight rss + 120.
    """
    features = np.asarray(features, dtype=np.float64)
    if features.shape[0] != db.n_samples:
        raise DimensionError("feature row count != database row count")
    g = SignalGraph(site_bounds=db.site_bounds, feature_dim=features.shape[1] + 2)
    sample_ids = [
        g.add_sample_node(features[i], db.locations[i], is_new=False, row=i)
        for i in range(db.n_samples)
    ]
    for j, mac in enumerate(db.macs):
        detected = np.nonzero(db.rss[:, j] > UNDETECTED_DBM)[0]
        if detected.size == 0:
            continue
        ap_id = g.add_ap_node(mac)
        for i in detected:
            g.add_edge(sample_ids[i], ap_id, db.rss[i, j] + WEIGHT_OFFSET)
    return g


def init_ap_features(g: SignalGraph) -> None:
    """AP feature := weighted average of neighbor sample features."""
    for ap_id, node in g.aps.items():
        nbrs = g.ap_neighbors(ap_id)
        if not nbrs:
            raise GufuError(f"AP node {node.mac!r} has no edges")
        weights = np.array([w for _, w in nbrs])
        feats = np.stack([g.samples[s].feature for s, _ in nbrs])
        node.feature = (weights[:, None] * feats).sum(axis=0) / weights.sum()


def create_virtual_edges(g: SignalGraph, sigma: float) -> int:
    """Connect every unordered sample pair with cosine similarity > sigma."""
    if not (0.0 < sigma < 1.0):
        raise ValidationError(f"sigma must lie in (0, 1), got {sigma}")
    ids = g.sample_ids()
    g.virtual_edges = set()
    if len(ids) < 2:
        return 0
    feats = np.stack([g.samples[i].feature for i in ids])
    norms = np.linalg.norm(feats, axis=1)
    usable = norms > 0.0
    skipped = int((~usable).sum())
    if skipped:
        logger.warning("create_virtual_edges: skipping %d zero-norm feature rows", skipped)
    unit = np.where(usable[:, None], feats / np.where(usable, norms, 1.0)[:, None], 0.0)
    sims = unit @ unit.T
    hits = np.argwhere(np.triu(sims > sigma, k=1))
    for a, b in hits:
        if usable[a] and usable[b]:
            pair = (ids[a], ids[b]) if ids[a] < ids[b] else (ids[b], ids[a])
            g.virtual_edges.add(pair)
    return len(g.virtual_edges)


# -- aggregation network ----------------------------------------------------------


def init_gnn_params(layers: int, dim: int, rng: np.random.Generator) -> nm.ParamSet:
    """Weights for each layer: W0 (message), W1 (node update), W2 (edge update)."""
    params = nm.ParamSet()
    for layer in range(1, layers + 1):
        params.add(f"gnn.l{layer}.w0", nm.xavier_uniform((2 * dim, dim), rng))
        params.add(f"gnn.l{layer}.w1", nm.xavier_uniform((2 * dim, dim), rng))
        params.add(f"gnn.l{layer}.w2", nm.xavier_uniform((3 * dim, dim), rng))
    return params


def gnn_layer_count(params: nm.ParamSet) -> int:
    n = 0
    while f"gnn.l{n + 1}.w0" in params:
        n += 1
    return n


def _edge_lists(g: SignalGraph):
    """Real-then-virtual edge endpoint lists in deterministic order."""
    real = list(g.edges.items())
    virt = sorted(g.virtual_edges)
    u = [s for (s, _a), _w in real] + [a for a, _b in virt]
    v = [a for (_s, a), _w in real] + [b for _a, b in virt]
    return real, virt, u, v


def aggregate(g: SignalGraph, params: nm.ParamSet, *,
              training: bool = False, rng: np.random.Generator | None = None,
              dropout_rate: float = 0.0, max_neighbors: int | None = None):
    """Run the layered aggregation; returns (node_ids, embeddings Tensor).

    With zero layers the embeddings equal the stored node features.  Nodes
    with no incident edges aggregate a zero vector.
    """
    ids = g.node_ids()
    index = {nid: k for k, nid in enumerate(ids)}
    feats = np.stack([g.feature_of(nid) for nid in ids]) if ids else np.zeros((0, g.feature_dim))
    z = nm.constant(feats)
    layers = gnn_layer_count(params)
    if layers == 0:
        return ids, z

    real, virt, u_nodes, v_nodes = _edge_lists(g)
    n_edges = len(u_nodes)
    if n_edges == 0:
        # Pure self-update path: empty aggregate is a zero matrix.
        for layer in range(1, layers + 1):
            agg = nm.constant(np.zeros(z.data.shape))
            z = nm.row_l2_normalize(nm.relu(
                nm.matmul(nm.concat_cols([z, agg]), params[f"gnn.l{layer}.w1"])))
        return ids, z

    u_idx = np.array([index[n] for n in u_nodes], dtype=np.intp)
    v_idx = np.array([index[n] for n in v_nodes], dtype=np.intp)
    # Messages flow in both directions over each undirected edge.
    src = np.concatenate([u_idx, v_idx])
    dst = np.concatenate([v_idx, u_idx])
    eidx = np.concatenate([np.arange(n_edges), np.arange(n_edges)])
    if max_neighbors is not None:
        keep = _cap_incident(dst, max_neighbors, rng)
        src, dst, eidx = src[keep], dst[keep], eidx[keep]

    n_real = len(real)
    ef = nm.scale(nm.add(nm.gather_rows(z, u_idx), nm.gather_rows(z, v_idx)), 0.5)
    for layer in range(1, layers + 1):
        w0, w1, w2 = (params[f"gnn.l{layer}.w{k}"] for k in range(3))
        msg_in = nm.concat_cols([nm.gather_rows(ef, eidx), nm.gather_rows(z, src)])
        msg = nm.relu(nm.matmul(msg_in, w0))
        msg = nm.dropout(msg, dropout_rate, rng, training)
        agg = nm.segment_mean(msg, dst, len(ids))
        z = nm.row_l2_normalize(nm.relu(nm.matmul(nm.concat_cols([z, agg]), w1)))
        if n_real:
            ef_in = nm.concat_cols([
                nm.gather_rows(z, u_idx[:n_real]),
                nm.gather_rows(ef, np.arange(n_real)),
                nm.gather_rows(z, v_idx[:n_real]),
            ])
            ef_real = nm.row_l2_normalize(nm.relu(nm.matmul(ef_in, w2)))
            if len(virt):
                ef = nm.concat_rows([ef_real, nm.gather_rows(ef, np.arange(n_real, n_edges))])
            else:
                ef = ef_real
    return ids, z


def _cap_incident(dst: np.ndarray, cap: int, rng: np.random.Generator | None) -> np.ndarray:
    """Indices keeping at most cap incident messages per destination node."""
    if rng is None:
        raise ValidationError("max_neighbors requires an rng")
    keep: list[int] = []
    by_node: dict[int, list[int]] = {}
    for k, node in enumerate(dst):
        by_node.setdefault(int(node), []).append(k)
    for node in sorted(by_node):
        rows = by_node[node]
        if len(rows) > cap:
            chosen = rng.choice(len(rows), size=cap, replace=False)
            rows = [rows[int(c)] for c in sorted(chosen)]
        keep.extend(rows)
    return np.array(sorted(keep), dtype=np.intp)


def _negative_pairs(g: SignalGraph, ids: list[int], index: dict[int, int],
                    pos_u: list[int], per_edge: int, rng: np.random.Generator):
    """Uniform non-neighbor partners for each positive edge endpoint."""
    adjacency: dict[int, set[int]] = {nid: set() for nid in ids}
    for (s, a) in g.edges:
        adjacency[s].add(a)
        adjacency[a].add(s)
    for (s1, s2) in g.virtual_edges:
        adjacency[s1].add(s2)
        adjacency[s2].add(s1)
    n = len(ids)
    u_out, n_out = [], []
    for u in pos_u:
        for _ in range(per_edge):
            for _try in range(32):
                cand = ids[int(rng.integers(n))]
                if cand != u and cand not in adjacency[u]:
                    u_out.append(index[u])
                    n_out.append(index[cand])
                    break
    return np.array(u_out, dtype=np.intp), np.array(n_out, dtype=np.intp)


def train_gnn(g: SignalGraph, params: nm.ParamSet, epochs: int = 50, lr: float = 0.01,
              negatives_per_edge: int = 5, *, rng: np.random.Generator,
              dropout_rate: float = 0.5, max_neighbors: int | None = None,
              remove_virtual_after: bool = True) -> list[float]:
    """Unsupervised training of the aggregation weights.

    Set negatives_per_edge=0 for the attraction-only loss.  Virtual edges
    are dropped afterwards unless the caller manages their lifecycle.
    """
    real, virt, u_nodes, v_nodes = _edge_lists(g)
    if not u_nodes:
        raise ValidationError("train_gnn: graph has no edges")
    history: list[float] = []
    for _ in range(int(epochs)):
        def loss_fn():
            ids, emb = aggregate(g, params, training=True, rng=rng,
                                 dropout_rate=dropout_rate, max_neighbors=max_neighbors)
            index = {nid: k for k, nid in enumerate(ids)}
            u_idx = np.array([index[n] for n in u_nodes], dtype=np.intp)
            v_idx = np.array([index[n] for n in v_nodes], dtype=np.intp)
            dots = nm.rowwise_dot(nm.gather_rows(emb, u_idx), nm.gather_rows(emb, v_idx))
            loss = nm.neg(nm.sum_all(nm.log(nm.sigmoid(dots))))
            if negatives_per_edge > 0:
                nu, nn = _negative_pairs(g, ids, index, u_nodes, negatives_per_edge, rng)
                if nu.size:
                    ndots = nm.rowwise_dot(nm.gather_rows(emb, nu), nm.gather_rows(emb, nn))
                    loss = loss + nm.neg(nm.sum_all(nm.log(nm.sigmoid(nm.neg(ndots)))))
            return loss
        loss, _ = nm.forward_backward(params, loss_fn)
        nm.optimizer_step(params, lr)
        history.append(loss)
    if remove_virtual_after:
        g.virtual_edges = set()
    return history


# -- batch node lifecycle -----------------------------------------------------------


def add_batch_nodes(g: SignalGraph, features32: np.ndarray, shared_rss: np.ndarray,
                    shared_macs: list[str], rng: np.random.Generator) -> list[int]:
    """Insert unlabeled batch samples with uniform random location labels.

    shared_rss columns correspond to shared_macs (database MACs present in
    the batch); edges are created where the RSS is above the floor.
    """
    features32 = np.asarray(features32, dtype=np.float64)
    shared_rss = np.asarray(shared_rss, dtype=np.float64)
    if features32.shape[0] != shared_rss.shape[0]:
        raise DimensionError("feature and rss row counts differ")
    if shared_rss.shape[1] != len(shared_macs):
        raise DimensionError("shared_rss column count != len(shared_macs)")
    x0, y0, x1, y1 = g.site_bounds
    new_ids = []
    for i in range(features32.shape[0]):
        loc = np.array([rng.uniform(x0, x1), rng.uniform(y0, y1)])
        nid = g.add_sample_node(features32[i], loc, is_new=True)
        n_edges = 0
        for j, mac in enumerate(shared_macs):
            if shared_rss[i, j] > UNDETECTED_DBM and mac in g.mac_to_ap:
                g.add_edge(nid, g.mac_to_ap[mac], shared_rss[i, j] + WEIGHT_OFFSET)
                n_edges += 1
        if n_edges == 0:
            logger.warning("batch row %d detects no shared AP; node %d has no edges", i, nid)
        new_ids.append(nid)
    return new_ids


def remove_batch_nodes(g: SignalGraph, ids: list[int]) -> None:
    """Remove new-flagged sample nodes plus every incident (virtual) edge."""
    for nid in ids:
        node = g.samples.get(nid)
        if node is None:
            raise ContractError(f"node {nid} is not a sample node")
        if not node.is_new:
            raise ContractError(f"node {nid} is not flagged new; refusing to remove")
    doomed = set(ids)
    for nid in ids:
        del g.samples[nid]
    for key in [k for k in g.edges if k[0] in doomed]:
        del g.edges[key]
    g.virtual_edges = {p for p in g.virtual_edges if p[0] not in doomed and p[1] not in doomed}
