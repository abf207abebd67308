"""Fingerprint database and signal batch data model, normalization and I/O.

RSS values are dBm in [-120, 0]; exactly -120 means "not detected" and is
the no-edge marker for the signal graph.  Files are JSON Lines: survey
records carry {"loc": [x, y], "rss": {mac: dbm, ...}}, batch records the
same without "loc".  MACs absent from a record are treated as -120 dBm.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ParseError, ValidationError

logger = logging.getLogger(__name__)

UNDETECTED_DBM = -120.0
RSS_SPAN = 120.0

__all__ = [
    "UNDETECTED_DBM",
    "FingerprintDatabase",
    "SignalBatch",
    "ApAlignment",
    "normalize_rss",
    "denormalize_rss",
    "align",
    "load_survey",
    "load_batch",
    "save_survey",
    "save_batch",
]


def _check_rss_range(rss: np.ndarray, what: str) -> None:
    bad = np.argwhere((rss < UNDETECTED_DBM) | (rss > 0.0))
    if bad.size:
        r, c = bad[0]
        raise ValidationError(
            f"{what}: RSS out of range at row {r}, col {c}: {rss[r, c]}"
        )


def _canonical_mac(mac: str) -> str:
    return mac.strip().lower()


@dataclass
class FingerprintDatabase:
    """Labeled survey: locations (N x 2, meters) and RSS (N x n_s, dBm)."""

    locations: np.ndarray
    rss: np.ndarray
    macs: list[str]
    site_bounds: tuple[float, float, float, float]

    def __post_init__(self):
        self.locations = np.asarray(self.locations, dtype=np.float64)
        self.rss = np.asarray(self.rss, dtype=np.float64)
        if self.locations.ndim != 2 or self.locations.shape[1] != 2:
            raise ValidationError("locations must be N x 2")
        if self.rss.shape[0] != self.locations.shape[0]:
            raise ValidationError("locations and rss row counts differ")
        if self.rss.shape[1] != len(self.macs):
            raise ValidationError("rss column count != number of MACs")
        if len(set(self.macs)) != len(self.macs):
            raise ValidationError("duplicate MAC in database")
        _check_rss_range(self.rss, "database")
        x0, y0, x1, y1 = self.site_bounds
        if np.any(self.locations[:, 0] < x0) or np.any(self.locations[:, 0] > x1) \
                or np.any(self.locations[:, 1] < y0) or np.any(self.locations[:, 1] > y1):
            raise ValidationError("a survey location lies outside site_bounds")

    @property
    def n_samples(self) -> int:
        return self.rss.shape[0]

    @property
    def n_aps(self) -> int:
        return self.rss.shape[1]

    def copy(self) -> "FingerprintDatabase":
        return FingerprintDatabase(
            self.locations.copy(), self.rss.copy(), list(self.macs), self.site_bounds
        )


@dataclass
class SignalBatch:
    """Unlabeled crowdsourced RSS matrix (K x n_b, dBm) plus its MAC index."""

    rss: np.ndarray
    macs: list[str]
    batch_id: str = ""

    def __post_init__(self):
        self.rss = np.asarray(self.rss, dtype=np.float64)
        if self.rss.ndim != 2 or self.rss.shape[1] != len(self.macs):
            raise ValidationError("batch rss column count != number of MACs")
        if len(set(self.macs)) != len(self.macs):
            raise ValidationError("duplicate MAC in batch")
        _check_rss_range(self.rss, f"batch {self.batch_id or '<unnamed>'}")

    @property
    def n_samples(self) -> int:
        return self.rss.shape[0]


@dataclass
class ApAlignment:
    """How a batch's MAC columns line up with the database's columns."""

    shared: list[tuple[int, int]]          # (db column, batch column)
    new_aps: list[int] = field(default_factory=list)      # batch columns
    missing_aps: list[int] = field(default_factory=list)  # db columns


def normalize_rss(rss_dbm: np.ndarray) -> np.ndarray:
    """Map dBm in [-120, 0] to [0, 1]; -120 maps to exactly 0."""
    rss_dbm = np.asarray(rss_dbm, dtype=np.float64)
    _check_rss_range(np.atleast_2d(rss_dbm), "normalize_rss input")
    return (rss_dbm + RSS_SPAN) / RSS_SPAN


_DENORM_TOL = 1e-9


def denormalize_rss(norm: np.ndarray) -> np.ndarray:
    """Inverse of normalize_rss; inputs may exceed [0, 1] by <= 1e-9."""
    norm = np.asarray(norm, dtype=np.float64)
    bad = np.argwhere((norm < -_DENORM_TOL) | (norm > 1.0 + _DENORM_TOL))
    if bad.size:
        idx = tuple(bad[0])
        raise ValidationError(f"denormalize_rss: value out of range at {idx}: {norm[idx]}")
    clipped = np.clip(norm, 0.0, 1.0)
    return RSS_SPAN * clipped - RSS_SPAN


def align(db: FingerprintDatabase, batch: SignalBatch) -> ApAlignment:
    """Partition MACs into shared / new (batch only) / missing (db only)."""
    db_index = {m: i for i, m in enumerate(db.macs)}
    shared = []
    new_aps = []
    for j, mac in enumerate(batch.macs):
        if mac in db_index:
            shared.append((db_index[mac], j))
        else:
            new_aps.append(j)
    batch_set = set(batch.macs)
    missing = [i for i, m in enumerate(db.macs) if m not in batch_set]
    return ApAlignment(shared=shared, new_aps=new_aps, missing_aps=missing)


def _parse_rss_map(obj, line_no: int) -> dict[str, float]:
    raw = obj.get("rss")
    if not isinstance(raw, dict):
        raise ParseError("record has no 'rss' object", line_no)
    out: dict[str, float] = {}
    for mac, value in raw.items():
        mac = _canonical_mac(mac)
        try:
            v = float(value)
        except (TypeError, ValueError):
            raise ParseError(f"non-numeric RSS for {mac!r}", line_no) from None
        if v < UNDETECTED_DBM:
            # Real scanners occasionally report below the floor; clamp.
            logger.warning("line %d: clamping RSS %.1f dBm for %s to -120", line_no, v, mac)
            v = UNDETECTED_DBM
        if v > 0.0:
            raise ParseError(f"RSS above 0 dBm for {mac!r}: {v}", line_no)
        out[mac] = v
    return out


def _read_records(path: str | Path, require_loc: bool):
    records = []
    with open(path) as f:
        for line_no, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc.msg}", line_no) from exc
            loc = obj.get("loc")
            if require_loc:
                if (not isinstance(loc, (list, tuple))) or len(loc) != 2:
                    raise ParseError("survey record missing 'loc' [x, y]", line_no)
                loc = (float(loc[0]), float(loc[1]))
            records.append((loc, _parse_rss_map(obj, line_no)))
    return records


def _mac_universe(records) -> list[str]:
    macs: set[str] = set()
    for _, rss in records:
        macs.update(rss)
    return sorted(macs)


def _records_to_matrix(records, macs: list[str]) -> np.ndarray:
    index = {m: j for j, m in enumerate(macs)}
    rss = np.full((len(records), len(macs)), UNDETECTED_DBM)
    for i, (_, rec) in enumerate(records):
        for mac, v in rec.items():
            rss[i, index[mac]] = v
    return rss


def bounds_from_locations(locations: np.ndarray, margin: float) -> tuple[float, float, float, float]:
    """Axis-aligned bounds of the survey grid, padded by one grid step."""
    locations = np.asarray(locations, dtype=np.float64)
    return (
        float(locations[:, 0].min() - margin),
        float(locations[:, 1].min() - margin),
        float(locations[:, 0].max() + margin),
        float(locations[:, 1].max() + margin),
    )


def load_survey(path: str | Path, site_bounds=None, bounds_margin: float = 2.5) -> FingerprintDatabase:
    records = _read_records(path, require_loc=True)
    if not records:
        raise ValidationError(f"empty survey file: {path}")
    macs = _mac_universe(records)
    locations = np.array([loc for loc, _ in records], dtype=np.float64)
    rss = _records_to_matrix(records, macs)
    if site_bounds is None:
        site_bounds = bounds_from_locations(locations, bounds_margin)
    return FingerprintDatabase(locations, rss, macs, tuple(site_bounds))


def load_batch(path: str | Path, batch_id: str = "") -> SignalBatch:
    records = _read_records(path, require_loc=False)
    macs = _mac_universe(records)
    rss = _records_to_matrix(records, macs)
    return SignalBatch(rss, macs, batch_id=batch_id or Path(path).stem)


def _rss_row_to_map(row: np.ndarray, macs: list[str]) -> dict[str, float]:
    return {m: float(v) for m, v in zip(macs, row) if v > UNDETECTED_DBM}


def save_survey(db: FingerprintDatabase, path: str | Path) -> None:
    with open(path, "w") as f:
        for i in range(db.n_samples):
            rec = {
                "loc": [float(db.locations[i, 0]), float(db.locations[i, 1])],
                "rss": _rss_row_to_map(db.rss[i], db.macs),
            }
            f.write(json.dumps(rec) + "\n")


def save_batch(batch: SignalBatch, path: str | Path) -> None:
    with open(path, "w") as f:
        for i in range(batch.n_samples):
            f.write(json.dumps({"rss": _rss_row_to_map(batch.rss[i], batch.macs)}) + "\n")
