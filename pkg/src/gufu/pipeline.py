"""Orchestration: offline initialization, per-batch updates, persistence.

A state bundles the fingerprint database, the signal graph, the trained
autoencoder, the aggregation network and the update MLPs.  Every stochastic
step draws from an RNG derived from (seed, cycle, purpose), so repeated runs
from one seed are bit-identical and a state reloaded from disk continues
exactly like the in-memory one.

Each update cycle follows the same phases: align the batch against the
database and encode it over the shared APs; insert batch nodes and virtual
edges and run the aggregation network; train the update MLPs and write the
decoded RSS back into the database; refresh edge weights from what the batch
actually observed near each old sample; handle AP changes through trust
scores, edge prediction and forgetting; then retrain the autoencoder (with
consistency terms) and the aggregation weights, and drop the batch nodes.
When the AP set changed, the final RSS write-back decodes the embeddings of
the post-change graph.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import numerics as nm
from .config import RunConfig
from .data import (
    UNDETECTED_DBM,
    FingerprintDatabase,
    SignalBatch,
    align,
    denormalize_rss,
    load_survey,
    normalize_rss,
    save_survey,
)
from .edge_dynamics import (
    EdgeModification,
    apply_forgetting,
    compute_trust,
    detection_threshold,
    new_ap_nodes,
    predict_edges,
)
from .errors import ValidationError
from .feature_extractor import Autoencoder
from .graph import (
    ApNode,
    SampleNode,
    SignalGraph,
    add_batch_nodes,
    aggregate,
    build_graph,
    create_virtual_edges,
    init_ap_features,
    init_gnn_params,
    remove_batch_nodes,
    train_gnn,
)
from .rng import derive_rng
from .update import (
    UpdateMlps,
    apply_fingerprint_update,
    build_virtual_adjacency,
    predict_locations,
    train_update_module,
    update_features,
)

logger = logging.getLogger(__name__)

__all__ = ["GufuState", "initialize", "update_cycle", "save_state", "load_state"]

EDGE_WEIGHT_FLOOR = 0.5


@dataclass
class GufuState:
    config: RunConfig
    db: FingerprintDatabase
    graph: SignalGraph
    autoencoder: Autoencoder
    gnn: nm.ParamSet
    mlps: UpdateMlps
    cycle: int = 0


# -- initialization ------------------------------------------------------------


def _drop_empty_columns(db: FingerprintDatabase) -> FingerprintDatabase:
    detected = (db.rss > UNDETECTED_DBM).any(axis=0)
    if detected.all():
        return db
    dropped = [m for m, d in zip(db.macs, detected) if not d]
    logger.warning("dropping %d never-detected column(s): %s", len(dropped), dropped)
    keep = np.nonzero(detected)[0]
    return FingerprintDatabase(db.locations.copy(), db.rss[:, keep],
                               [db.macs[j] for j in keep], db.site_bounds)


def initialize(db: FingerprintDatabase, config: RunConfig) -> GufuState:
    """Offline stage: train the extractor, build the graph, train the GNN."""
    if db.n_samples == 0:
        raise ValidationError("cannot initialize from an empty survey")
    db = _drop_empty_columns(db.copy())
    cfg = config
    seed = cfg.seed

    ae = Autoencoder(db.n_aps, cfg.ae_hidden, cfg.code_dim,
                     seed=seed, dropout_rate=cfg.dropout)
    x_norm = normalize_rss(db.rss)
    ae.train_initial(x_norm, epochs=cfg.epochs, lr=cfg.lr,
                     rng=derive_rng(seed, "ae-train"))

    graph = build_graph(db, ae.encode(x_norm))
    init_ap_features(graph)
    n_virtual = create_virtual_edges(graph, cfg.sigma)
    if n_virtual == 0:
        logger.warning("initialize: no virtual edges at sigma=%.2f", cfg.sigma)

    gnn = init_gnn_params(cfg.layers, cfg.feature_dim, derive_rng(seed, "gnn-init"))
    if graph.edges:
        train_gnn(graph, gnn, epochs=cfg.epochs, lr=cfg.lr,
                  negatives_per_edge=0 if cfg.strict_gnn_loss else cfg.negatives_per_edge,
                  rng=derive_rng(seed, "gnn-train"), dropout_rate=cfg.dropout,
                  max_neighbors=cfg.max_neighbors, remove_virtual_after=False)
    ids, emb_t = aggregate(graph, gnn)
    emb = {nid: emb_t.data[k] for k, nid in enumerate(ids)}
    graph.virtual_edges = set()

    # Tie the autoencoder to the embedding space the update stage will decode
    # from; without this the first cycle's decoder input is an unseen space.
    old_ids = _old_ids_in_row_order(graph)
    z_target = np.stack([emb[i] for i in old_ids])[:, :cfg.code_dim]
    ae.retrain_consistent(x_norm, z_target, x_norm, epochs=cfg.retrain_epochs,
                          lr=cfg.lr, rng=derive_rng(seed, "ae-align"))
    _refresh_sample_features(graph, ae, db)
    init_ap_features(graph)

    mlps = UpdateMlps(cfg.feature_dim, hidden=cfg.mlp_hidden, alpha=cfg.alpha,
                      site_bounds=db.site_bounds, seed=seed)
    return GufuState(config=cfg, db=db, graph=graph, autoencoder=ae,
                     gnn=gnn, mlps=mlps, cycle=0)


def _old_ids_in_row_order(graph: SignalGraph) -> list[int]:
    olds = [n for n in graph.samples.values() if not n.is_new]
    return [n.id for n in sorted(olds, key=lambda n: n.row)]


def _refresh_sample_features(graph: SignalGraph, ae: Autoencoder,
                             db: FingerprintDatabase) -> None:
    f32 = ae.encode(normalize_rss(db.rss))
    for node in graph.samples.values():
        if node.is_new:
            continue
        node.feature = np.concatenate([f32[node.row], graph.scale_location(node.location)])


# -- per-cycle helpers -------------------------------------------------------------


def _aligned_batch_matrix(db: FingerprintDatabase, batch: SignalBatch) -> np.ndarray:
    """Batch RSS laid out in database column order; missing APs are -120."""
    alignment = align(db, batch)
    out = np.full((batch.n_samples, db.n_aps), UNDETECTED_DBM)
    for db_col, b_col in alignment.shared:
        out[:, db_col] = batch.rss[:, b_col]
    return out


def _batch_neighbor_rows(graph: SignalGraph, new_ids: list[int]) -> dict[int, list[int]]:
    """Old sample id -> batch row indices of its virtual neighbors."""
    row_of = {nid: j for j, nid in enumerate(new_ids)}
    out: dict[int, list[int]] = {}
    for u, v in sorted(graph.virtual_edges):
        if u in row_of and v not in row_of and not graph.samples[v].is_new:
            out.setdefault(v, []).append(row_of[u])
        elif v in row_of and u not in row_of and not graph.samples[u].is_new:
            out.setdefault(u, []).append(row_of[v])
    return out


def _refresh_edge_weights(graph: SignalGraph, batch: SignalBatch,
                          nbr_rows: dict[int, list[int]],
                          edges: list[tuple[int, int]]) -> int:
    """Re-weight old-sample edges from what nearby batch samples observed.

    Evidence for (sample, AP) is the mean shifted RSS of the AP over the
    sample's virtual batch neighbors (0 where undetected or absent from the
    batch); edges whose sample has no batch neighbors keep their weight.
    """
    col_of = {m: j for j, m in enumerate(batch.macs)}
    refreshed = 0
    for sid, aid in edges:
        rows = nbr_rows.get(sid)
        if not rows:
            continue
        mac = graph.aps[aid].mac
        col = col_of.get(mac)
        if col is None:
            evidence = 0.0
        else:
            evidence = float(np.mean(batch.rss[rows, col] + 120.0))
        graph.edges[(sid, aid)] = max(evidence, EDGE_WEIGHT_FLOOR)
        refreshed += 1
    return refreshed


def _db_with_schema(db: FingerprintDatabase, drop: list[str],
                    add: list[tuple[str, np.ndarray]]) -> FingerprintDatabase:
    keep = [j for j, m in enumerate(db.macs) if m not in set(drop)]
    macs = [db.macs[j] for j in keep]
    cols = [db.rss[:, keep]] if keep else [np.zeros((db.n_samples, 0))]
    for mac, col in sorted(add, key=lambda kv: kv[0]):
        macs.append(mac)
        cols.append(col[:, None])
    return FingerprintDatabase(db.locations.copy(), np.hstack(cols), macs, db.site_bounds)


def _decode_writeback(db: FingerprintDatabase, ae: Autoencoder, codes: np.ndarray,
                      snap_floor_dbm: float) -> FingerprintDatabase:
    decoded = np.clip(ae.decode(codes), 0.0, 1.0)
    rss = denormalize_rss(decoded)
    rss[rss <= snap_floor_dbm] = UNDETECTED_DBM
    return FingerprintDatabase(db.locations.copy(), rss, list(db.macs), db.site_bounds)


# -- the update cycle ------------------------------------------------------------------


def update_cycle(state: GufuState, batch: SignalBatch) -> dict:
    """Run one batch through the full update; mutates state, returns a report."""
    cfg = state.config
    k = state.cycle + 1
    report: dict = {
        "cycle": k,
        "batch_id": batch.batch_id,
        "n_batch_samples": batch.n_samples,
        "warnings": [],
        "config": cfg.to_dict(),
    }
    if batch.n_samples == 0:
        report["warnings"].append("empty batch: no-op")
        state.cycle = k
        return report

    graph, ae = state.graph, state.autoencoder
    alignment = align(state.db, batch)
    report["alignment"] = {
        "shared": len(alignment.shared),
        "new_aps": [batch.macs[j] for j in alignment.new_aps],
        "missing_aps": [state.db.macs[j] for j in alignment.missing_aps],
    }
    run_update = bool(alignment.shared)
    if not run_update:
        report["warnings"].append("no shared APs: skipping fingerprint update stage")

    # Insert batch nodes (features from the shared-AP view) and virtual edges.
    u_aligned = _aligned_batch_matrix(state.db, batch)
    z_u32 = ae.encode(normalize_rss(u_aligned))
    shared_macs = [state.db.macs[i] for i, _ in alignment.shared]
    shared_rss = (batch.rss[:, [j for _, j in alignment.shared]]
                  if alignment.shared else np.zeros((batch.n_samples, 0)))
    new_ids = add_batch_nodes(graph, z_u32, shared_rss, shared_macs,
                              derive_rng(cfg.seed, "cycle", k, "locations"))
    create_virtual_edges(graph, cfg.sigma)
    ids, emb_t = aggregate(graph, state.gnn)
    emb = {nid: emb_t.data[i] for i, nid in enumerate(ids)}
    old_ids = _old_ids_in_row_order(graph)
    nbr_rows = _batch_neighbor_rows(graph, new_ids)

    z_target = np.stack([emb[i] for i in old_ids])[:, :cfg.code_dim]
    if run_update:
        z_x = np.stack([emb[i] for i in old_ids])
        z_u = np.stack([emb[i] for i in new_ids])
        adjacency = build_virtual_adjacency(graph, old_ids, new_ids)
        if cfg.fresh_update_mlps:
            state.mlps = UpdateMlps(cfg.feature_dim, hidden=cfg.mlp_hidden,
                                    alpha=cfg.alpha, site_bounds=state.db.site_bounds,
                                    seed=derive_rng(cfg.seed, "cycle", k, "mlp-seed").integers(2**31))
        history = train_update_module(state.mlps, z_x, state.db.locations, z_u,
                                      adjacency, epochs=cfg.update_epochs, lr=cfg.lr)
        report["update_losses"] = [
            {key: float(v) for key, v in h.items()} for h in history
        ]
        pred = predict_locations(state.mlps, z_u)
        report["predicted_locations"] = [[float(x), float(y)] for x, y in pred]
        state.db, upd_stats = apply_fingerprint_update(
            state.db, state.mlps, ae, snap_floor_dbm=cfg.snap_floor_dbm)
        report["fingerprint_update"] = upd_stats
        z_target = update_features(state.mlps, state.db.locations)[:, :cfg.code_dim]
        refreshed = _refresh_edge_weights(
            graph, batch, nbr_rows,
            [e for e in graph.edges if not graph.samples[e[0]].is_new])
        report["edges_reweighted"] = refreshed

    # AP changes: trust scores over the updated node features, edge
    # prediction for candidate (AP, sample) pairs, then forgetting.
    removed_macs: list[str] = []
    added_columns: list[tuple[str, np.ndarray]] = []
    created_ap_ids: list[int] = []
    if cfg.enable_edge_prediction:
        new_macs = [batch.macs[j] for j in alignment.new_aps]
        rss_new = (batch.rss[:, alignment.new_aps]
                   if alignment.new_aps else np.zeros((batch.n_samples, 0)))
        created_ap_ids = new_ap_nodes(graph, new_macs, new_ids, rss_new)
        trust_ids = ids + created_ap_ids
        feats = [emb[nid] for nid in ids]
        for ap_id in created_ap_ids:
            nbrs = graph.ap_neighbors(ap_id)
            w = np.array([wt for _, wt in nbrs])
            f = np.stack([emb[s] for s, _ in nbrs])
            feats.append((w[:, None] * f).sum(axis=0) / w.sum())
        scores = compute_trust(graph, np.stack(feats), trust_ids,
                               epsilon=cfg.epsilon,
                               max_iterations=cfg.trust_max_iterations)
        delta = detection_threshold(state.db, strict=cfg.strict_delta)
        mods = predict_edges(graph, scores, delta)
        removed_macs = apply_forgetting(graph, mods)
        _refresh_edge_weights(graph, batch, nbr_rows,
                              [(s, a) for s, a, _ in mods.added
                               if not graph.samples[s].is_new and a in graph.aps])
        report["edge_modification"] = mods.to_json()
        report["trust"] = {"iterations": scores.iterations,
                           "converged": scores.converged}
        added_columns = _adopted_ap_columns(graph, state.db, created_ap_ids, old_ids)
    else:
        report["edge_modification"] = EdgeModification().to_json()

    schema_changed = bool(removed_macs) or bool(added_columns)
    if schema_changed:
        old_macs = list(state.db.macs)
        state.db = _db_with_schema(state.db, removed_macs, added_columns)
        column_map = {old_macs.index(m): j for j, m in enumerate(state.db.macs)
                      if m in old_macs}
        state.autoencoder = ae = ae.resize_for_aps(state.db.n_aps, column_map)

    # Retrain the extractor toward the updated features, refresh node
    # features and the aggregation weights on the updated graph.
    x_now = normalize_rss(state.db.rss)
    ae.retrain_consistent(x_now, z_target, x_now, epochs=cfg.retrain_epochs,
                          lr=cfg.lr, rng=derive_rng(cfg.seed, "cycle", k, "ae-retrain"))
    _refresh_sample_features(graph, ae, state.db)
    u2 = ae.encode(normalize_rss(_aligned_batch_matrix(state.db, batch)))
    for j, nid in enumerate(new_ids):
        node = graph.samples[nid]
        node.feature = np.concatenate([u2[j], graph.scale_location(node.location)])
    init_ap_features(graph)
    create_virtual_edges(graph, cfg.sigma)
    if graph.edges:
        gnn_history = train_gnn(
            graph, state.gnn, epochs=cfg.retrain_epochs, lr=cfg.lr,
            negatives_per_edge=0 if cfg.strict_gnn_loss else cfg.negatives_per_edge,
            rng=derive_rng(cfg.seed, "cycle", k, "gnn-retrain"),
            dropout_rate=cfg.dropout, max_neighbors=cfg.max_neighbors,
            remove_virtual_after=False)
        report["gnn_retrain_losses"] = gnn_history

    if schema_changed:
        # The final write-back decodes the embeddings of the changed graph,
        # after a second consistency pass aligning the decoder with them.
        ids2, emb2_t = aggregate(graph, state.gnn)
        emb2 = {nid: emb2_t.data[i] for i, nid in enumerate(ids2)}
        codes2 = np.stack([emb2[i] for i in old_ids])[:, :cfg.code_dim]
        ae.retrain_consistent(x_now, codes2, x_now, epochs=cfg.retrain_epochs,
                              lr=cfg.lr,
                              rng=derive_rng(cfg.seed, "cycle", k, "ae-align2"))
        state.db = _decode_writeback(state.db, ae, codes2, cfg.snap_floor_dbm)

    remove_batch_nodes(graph, new_ids)
    graph.virtual_edges = set()
    dangling = [a for a in graph.aps if not graph.ap_neighbors(a)]
    if dangling:
        macs = [graph.remove_ap(a) for a in dangling]
        report["warnings"].append(f"dropped APs left without edges: {macs}")
        state.db = _db_with_schema(state.db, macs, [])
        removed_macs.extend(macs)
    report["removed_ap_macs"] = removed_macs
    report["added_ap_macs"] = [mac for mac, _ in added_columns]
    report["db"] = {"rows": state.db.n_samples, "aps": state.db.n_aps}
    state.cycle = k
    return report


def _adopted_ap_columns(graph: SignalGraph, db: FingerprintDatabase,
                        created_ap_ids: list[int], old_ids: list[int]
                        ) -> list[tuple[str, np.ndarray]]:
    """Database columns for new APs that gained edges to old samples.

    Column values come from the (evidence-refreshed) edge weights; rows
    without an edge stay undetected.  New APs with no old-sample edges are
    dropped from the graph: they would dangle once the batch nodes go.
    """
    columns = []
    for ap_id in created_ap_ids:
        values = np.full(db.n_samples, UNDETECTED_DBM)
        n_old_edges = 0
        for sid, w in graph.ap_neighbors(ap_id):
            node = graph.samples[sid]
            if node.is_new:
                continue
            values[node.row] = min(w - 120.0, 0.0)
            n_old_edges += 1
        if n_old_edges:
            columns.append((graph.aps[ap_id].mac, values))
        else:
            mac = graph.remove_ap(ap_id)
            logger.info("new AP %s gained no edges to labeled samples; not adopted", mac)
    return columns


# -- persistence --------------------------------------------------------------------------


def save_state(state: GufuState, directory: str | Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "reports").mkdir(exist_ok=True)
    save_survey(state.db, directory / "db.jsonl")

    graph = state.graph
    sample_ids = list(graph.samples)
    ap_ids = list(graph.aps)
    manifest = {
        "cycle": state.cycle,
        "config": state.config.to_dict(),
        "site_bounds": list(state.db.site_bounds),
        "macs": list(state.db.macs),
        "mlps_trained": state.mlps.trained,
        "ae": {"n_in": state.autoencoder.n_in, "hidden": state.autoencoder.hidden,
               "code": state.autoencoder.code, "seed": state.autoencoder.seed},
        "graph": {
            "next_id": graph.next_id,
            "feature_dim": graph.feature_dim,
            "samples": [{"id": n.id, "new": n.is_new, "row": n.row}
                        for n in graph.samples.values()],
            "aps": [{"id": n.id, "mac": n.mac} for n in graph.aps.values()],
            "edges": [[s, a, w] for (s, a), w in graph.edges.items()],
            "virtual_edges": sorted([list(p) for p in graph.virtual_edges]),
        },
    }
    with open(directory / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=1, sort_keys=True)
        f.write("\n")

    entries: dict[str, np.ndarray] = {}
    entries.update(state.autoencoder.state_arrays())
    entries.update(state.gnn.state_arrays())
    entries.update(state.mlps.state_arrays())
    entries["graph.sample_features"] = (
        np.stack([graph.samples[i].feature for i in sample_ids])
        if sample_ids else np.zeros((0, graph.feature_dim)))
    entries["graph.sample_locations"] = (
        np.stack([graph.samples[i].location for i in sample_ids])
        if sample_ids else np.zeros((0, 2)))
    entries["graph.ap_features"] = (
        np.stack([graph.aps[i].feature for i in ap_ids])
        if ap_ids else np.zeros((0, graph.feature_dim)))
    nm.save_checkpoint(directory / "model", entries)


def load_state(directory: str | Path) -> GufuState:
    directory = Path(directory)
    with open(directory / "manifest.json") as f:
        manifest = json.load(f)
    cfg = RunConfig.from_dict(manifest["config"])
    db = load_survey(directory / "db.jsonl", site_bounds=tuple(manifest["site_bounds"]))
    if db.macs != manifest["macs"]:
        raise ValidationError("state db.jsonl MAC set disagrees with the manifest")
    arrays = nm.load_checkpoint(directory / "model")

    ae_meta = manifest["ae"]
    ae = Autoencoder(ae_meta["n_in"], ae_meta["hidden"], ae_meta["code"],
                     seed=ae_meta["seed"], dropout_rate=cfg.dropout)
    ae.load_state_arrays(arrays)
    gnn = init_gnn_params(cfg.layers, cfg.feature_dim, derive_rng(cfg.seed, "gnn-init"))
    gnn.load_state_arrays(arrays)
    mlps = UpdateMlps(cfg.feature_dim, hidden=cfg.mlp_hidden, alpha=cfg.alpha,
                      site_bounds=db.site_bounds, seed=cfg.seed)
    mlps.params.load_state_arrays(arrays)
    mlps.trained = bool(manifest["mlps_trained"])

    gmeta = manifest["graph"]
    graph = SignalGraph(site_bounds=db.site_bounds, feature_dim=gmeta["feature_dim"])
    graph.next_id = gmeta["next_id"]
    sample_feats = arrays["graph.sample_features"]
    sample_locs = arrays["graph.sample_locations"]
    for i, rec in enumerate(gmeta["samples"]):
        node = SampleNode(rec["id"], sample_feats[i], sample_locs[i],
                          is_new=rec["new"], row=rec["row"])
        graph.samples[node.id] = node
    ap_feats = arrays["graph.ap_features"]
    for i, rec in enumerate(gmeta["aps"]):
        ap_id = rec["id"]
        graph.aps[ap_id] = ApNode(ap_id, rec["mac"], ap_feats[i])
        graph.mac_to_ap[rec["mac"]] = ap_id
    for s, a, w in gmeta["edges"]:
        graph.edges[(s, a)] = float(w)
    graph.virtual_edges = {tuple(p) for p in gmeta["virtual_edges"]}
    return GufuState(config=cfg, db=db, graph=graph, autoencoder=ae,
                     gnn=gnn, mlps=mlps, cycle=int(manifest["cycle"]))
