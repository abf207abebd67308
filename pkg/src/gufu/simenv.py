"""Synthetic evolving-WiFi-environment generator and evaluation metrics.

Propagation is log-distance path loss with log-normal shadowing frozen per
(AP, 0.5 m spatial cell) plus per-scan Gaussian noise:

    rss = tx_power - ref_loss - 10 n log10(max(d, 1 m)) + shadow + noise

Values below the detection floor are undetected.  The environment evolves
through a schedule of weekly events (add / remove / move / power_change);
everything is a pure function of (config, seed, week), so the simulator can
serve as the ground-truth oracle for the update pipeline.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import UNDETECTED_DBM, FingerprintDatabase, SignalBatch
from .errors import ValidationError
from .rng import derive_rng

__all__ = [
    "ApSpec",
    "EnvironmentEvent",
    "SimConfig",
    "Simulator",
    "rss_error",
    "location_error",
    "default_desk_config",
]

SHADOW_CELL_M = 0.5


@dataclass
class ApSpec:
    mac: str
    position: tuple[float, float]
    tx_power_dbm: float = -25.0
    ref_loss_db: float = 0.0
    path_loss_exp: float = 3.0

    def to_json(self) -> dict:
        return {
            "mac": self.mac,
            "position": list(self.position),
            "tx_power_dbm": self.tx_power_dbm,
            "ref_loss_db": self.ref_loss_db,
            "path_loss_exp": self.path_loss_exp,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ApSpec":
        return cls(
            mac=str(obj["mac"]).lower(),
            position=(float(obj["position"][0]), float(obj["position"][1])),
            tx_power_dbm=float(obj.get("tx_power_dbm", -25.0)),
            ref_loss_db=float(obj.get("ref_loss_db", 0.0)),
            path_loss_exp=float(obj.get("path_loss_exp", 3.0)),
        )


@dataclass
class EnvironmentEvent:
    week: int
    kind: str                       # add | remove | move | power_change
    mac: str | None = None
    position: tuple[float, float] | None = None
    delta_db: float | None = None
    ap: ApSpec | None = None

    def to_json(self) -> dict:
        out: dict = {"week": self.week, "kind": self.kind}
        if self.mac is not None:
            out["mac"] = self.mac
        if self.position is not None:
            out["position"] = list(self.position)
        if self.delta_db is not None:
            out["delta_db"] = self.delta_db
        if self.ap is not None:
            out["ap"] = self.ap.to_json()
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "EnvironmentEvent":
        return cls(
            week=int(obj["week"]),
            kind=str(obj["kind"]),
            mac=(str(obj["mac"]).lower() if "mac" in obj else None),
            position=(tuple(float(c) for c in obj["position"]) if "position" in obj else None),
            delta_db=(float(obj["delta_db"]) if "delta_db" in obj else None),
            ap=(ApSpec.from_json(obj["ap"]) if "ap" in obj else None),
        )


@dataclass
class SimConfig:
    site_bounds: tuple[float, float, float, float] = (0.0, 0.0, 20.0, 20.0)
    grid_spacing: float = 2.5
    aps: list[ApSpec] = field(default_factory=list)
    shadowing_sigma: float = 3.0
    noise_sigma: float = 1.0
    detection_floor: float = UNDETECTED_DBM
    events: list[EnvironmentEvent] = field(default_factory=list)
    seed: int = 0
    survey_repeats: int = 1

    def __post_init__(self):
        if self.shadowing_sigma < 0 or self.noise_sigma < 0:
            raise ValidationError("sigmas must be non-negative")
        x0, y0, x1, y1 = self.site_bounds
        for ap in self.aps:
            px, py = ap.position
            if not (x0 <= px <= x1 and y0 <= py <= y1):
                raise ValidationError(f"AP {ap.mac} initially outside site bounds")

    def to_json(self) -> dict:
        return {
            "site_bounds": list(self.site_bounds),
            "grid_spacing": self.grid_spacing,
            "aps": [ap.to_json() for ap in self.aps],
            "shadowing_sigma": self.shadowing_sigma,
            "noise_sigma": self.noise_sigma,
            "detection_floor": self.detection_floor,
            "events": [e.to_json() for e in self.events],
            "seed": self.seed,
            "survey_repeats": self.survey_repeats,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "SimConfig":
        return cls(
            site_bounds=tuple(float(c) for c in obj.get("site_bounds", (0, 0, 20, 20))),
            grid_spacing=float(obj.get("grid_spacing", 2.5)),
            aps=[ApSpec.from_json(a) for a in obj.get("aps", [])],
            shadowing_sigma=float(obj.get("shadowing_sigma", 3.0)),
            noise_sigma=float(obj.get("noise_sigma", 1.0)),
            detection_floor=float(obj.get("detection_floor", UNDETECTED_DBM)),
            events=[EnvironmentEvent.from_json(e) for e in obj.get("events", [])],
            seed=int(obj.get("seed", 0)),
            survey_repeats=int(obj.get("survey_repeats", 1)),
        )

    @classmethod
    def from_file(cls, path: str | Path) -> "SimConfig":
        with open(path) as f:
            return cls.from_json(json.load(f))

    def to_file(self, path: str | Path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_json(), f, indent=1, sort_keys=True)
            f.write("\n")


class Simulator:
    def __init__(self, cfg: SimConfig):
        self.cfg = cfg

    # -- environment evolution ------------------------------------------------

    def aps_at(self, week: int) -> list[ApSpec]:
        """Effective AP set after applying all events up to the given week."""
        aps = {ap.mac: ApSpec(ap.mac, tuple(ap.position), ap.tx_power_dbm,
                              ap.ref_loss_db, ap.path_loss_exp)
               for ap in self.cfg.aps}
        for ev in self.cfg.events:
            if ev.week > week:
                continue
            if ev.kind == "add":
                if ev.ap is None:
                    raise ValidationError("add event requires an 'ap' spec")
                aps[ev.ap.mac] = ApSpec(ev.ap.mac, tuple(ev.ap.position),
                                        ev.ap.tx_power_dbm, ev.ap.ref_loss_db,
                                        ev.ap.path_loss_exp)
            elif ev.kind == "remove":
                aps.pop(ev.mac, None)
            elif ev.kind == "move":
                if ev.mac in aps:
                    aps[ev.mac].position = tuple(ev.position)
            elif ev.kind == "power_change":
                if ev.mac in aps:
                    aps[ev.mac].tx_power_dbm += ev.delta_db
            else:
                raise ValidationError(f"unknown event kind: {ev.kind!r}")
        return list(aps.values())

    # -- propagation -----------------------------------------------------------

    def _shadow(self, mac: str, loc) -> float:
        if self.cfg.shadowing_sigma == 0.0:
            return 0.0
        cix = math.floor(loc[0] / SHADOW_CELL_M)
        ciy = math.floor(loc[1] / SHADOW_CELL_M)
        rng = derive_rng(self.cfg.seed, "shadow", mac, cix, ciy)
        return float(rng.normal(0.0, self.cfg.shadowing_sigma))

    def rss_at(self, ap: ApSpec, loc, *, noise_db: float = 0.0) -> float | None:
        """Received power at a location, or None when below the floor."""
        d = math.hypot(loc[0] - ap.position[0], loc[1] - ap.position[1])
        d = max(d, 1.0)
        rss = (ap.tx_power_dbm - ap.ref_loss_db
               - 10.0 * ap.path_loss_exp * math.log10(d)
               + self._shadow(ap.mac, loc) + noise_db)
        if rss < self.cfg.detection_floor:
            return None
        return min(rss, 0.0)

    def _scan(self, aps: list[ApSpec], loc, rng: np.random.Generator | None) -> dict[str, float]:
        out = {}
        for ap in aps:
            noise = float(rng.normal(0.0, self.cfg.noise_sigma)) if rng is not None else 0.0
            rss = self.rss_at(ap, loc, noise_db=noise)
            if rss is not None:
                out[ap.mac] = rss
        return out

    # -- dataset generation ------------------------------------------------------

    def _grid_centers(self) -> np.ndarray:
        x0, y0, x1, y1 = self.cfg.site_bounds
        gs = self.cfg.grid_spacing
        nx = max(int(round((x1 - x0) / gs)), 1)
        ny = max(int(round((y1 - y0) / gs)), 1)
        pts = [(x0 + (i + 0.5) * gs, y0 + (j + 0.5) * gs)
               for j in range(ny) for i in range(nx)]
        return np.array(pts)

    def _db_at(self, week: int, *, with_noise: bool) -> FingerprintDatabase:
        aps = self.aps_at(week)
        centers = self._grid_centers()
        rng = derive_rng(self.cfg.seed, "survey", week) if with_noise else None
        rows = []
        locs = []
        for center in centers:
            for _ in range(self.cfg.survey_repeats):
                rows.append(self._scan(aps, center, rng))
                locs.append(center)
        macs = sorted({m for r in rows for m in r})
        rss = np.full((len(rows), len(macs)), UNDETECTED_DBM)
        index = {m: j for j, m in enumerate(macs)}
        for i, row in enumerate(rows):
            for mac, v in row.items():
                rss[i, index[mac]] = v
        return FingerprintDatabase(np.array(locs), rss, macs, self.cfg.site_bounds)

    def survey(self) -> FingerprintDatabase:
        """The initial labeled site survey (week 0, scan noise included)."""
        return self._db_at(0, with_noise=True)

    def truth_db(self, week: int) -> FingerprintDatabase:
        """Noise-free fingerprints for the environment at a given week."""
        return self._db_at(week, with_noise=False)

    def crowdsource_batch(self, week: int, count: int) -> tuple[SignalBatch, np.ndarray]:
        """Unlabeled samples at uniform random locations plus hidden truth."""
        aps = self.aps_at(week)
        rng = derive_rng(self.cfg.seed, "batch", week)
        x0, y0, x1, y1 = self.cfg.site_bounds
        locs = np.column_stack([rng.uniform(x0, x1, size=count),
                                rng.uniform(y0, y1, size=count)]) if count else np.zeros((0, 2))
        rows = [self._scan(aps, loc, rng) for loc in locs]
        macs = sorted({m for r in rows for m in r})
        rss = np.full((count, len(macs)), UNDETECTED_DBM)
        index = {m: j for j, m in enumerate(macs)}
        for i, row in enumerate(rows):
            for mac, v in row.items():
                rss[i, index[mac]] = v
        batch = SignalBatch(rss, macs, batch_id=f"week{week}")
        return batch, locs


# -- evaluation metrics ---------------------------------------------------------------


def rss_error(updated: FingerprintDatabase, truth: FingerprintDatabase,
              macs: list[str] | None = None) -> float:
    """Mean |updated - truth| in dB over detected ground-truth entries.

    Rows must correspond one to one.  Columns are matched by MAC; when a
    `macs` restriction is given, columns absent from the updated database
    count as undetected (-120 dBm), so a dropped AP is scored against what
    the environment actually shows.
    """
    if updated.n_samples != truth.n_samples:
        raise ValidationError("row count mismatch between updated and truth databases")
    t_index = {m: j for j, m in enumerate(truth.macs)}
    u_index = {m: j for j, m in enumerate(updated.macs)}
    if macs is None:
        considered = sorted(set(truth.macs) & set(updated.macs))
    else:
        considered = sorted(set(macs) & set(truth.macs))
    if not considered:
        raise ValidationError("no MACs in common to compare")
    total = 0.0
    count = 0
    for mac in considered:
        t_col = truth.rss[:, t_index[mac]]
        if mac in u_index:
            u_col = updated.rss[:, u_index[mac]]
        else:
            u_col = np.full(truth.n_samples, UNDETECTED_DBM)
        mask = t_col > UNDETECTED_DBM
        total += float(np.abs(u_col[mask] - t_col[mask]).sum())
        count += int(mask.sum())
    if count == 0:
        raise ValidationError("ground truth has no detected entries for the comparison")
    return total / count


def location_error(predicted: np.ndarray, truth: np.ndarray) -> tuple[float, list[tuple[float, float]]]:
    """Mean Euclidean distance plus a CDF table at 1 m resolution."""
    predicted = np.asarray(predicted, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if predicted.shape != truth.shape:
        raise ValidationError(f"shape mismatch: {predicted.shape} vs {truth.shape}")
    dists = np.linalg.norm(predicted - truth, axis=1)
    mean = float(dists.mean()) if dists.size else 0.0
    top = int(math.ceil(dists.max())) if dists.size else 0
    cdf = [(float(k), float(np.mean(dists <= k))) for k in range(top + 1)]
    return mean, cdf


# -- canned scenario ---------------------------------------------------------------------


def default_desk_config(seed: int = 7, *, weeks: int = 8,
                        churn: bool = True) -> SimConfig:
    """Desk-scale scenario: 20 m x 20 m site, 2.5 m grid, 12 APs.

    With churn enabled, each week adds roughly 15% and removes roughly 10%
    of the AP population, echoing campus-scale turnover.
    """
    rng = derive_rng(seed, "desk-layout")
    bounds = (0.0, 0.0, 20.0, 20.0)
    aps = []
    for k in range(12):
        pos = (float(rng.uniform(1.0, 19.0)), float(rng.uniform(1.0, 19.0)))
        aps.append(ApSpec(mac=f"aa:bb:cc:dd:00:{k:02x}", position=pos,
                          tx_power_dbm=float(rng.uniform(-30.0, -24.0)),
                          ref_loss_db=0.0, path_loss_exp=3.2))
    events: list[EnvironmentEvent] = []
    if churn:
        next_mac = 12
        alive = [ap.mac for ap in aps]
        for week in range(1, weeks + 1):
            n_add = max(1, round(0.15 * len(alive)))
            n_remove = max(1, round(0.10 * len(alive)))
            for _ in range(n_add):
                mac = f"aa:bb:cc:dd:01:{next_mac:02x}"
                next_mac += 1
                ap = ApSpec(mac=mac,
                            position=(float(rng.uniform(1.0, 19.0)),
                                      float(rng.uniform(1.0, 19.0))),
                            tx_power_dbm=float(rng.uniform(-30.0, -24.0)),
                            ref_loss_db=0.0, path_loss_exp=3.2)
                events.append(EnvironmentEvent(week=week, kind="add", ap=ap))
                alive.append(mac)
            for _ in range(n_remove):
                victim = alive[int(rng.integers(len(alive)))]
                alive.remove(victim)
                events.append(EnvironmentEvent(week=week, kind="remove", mac=victim))
    return SimConfig(site_bounds=bounds, grid_spacing=2.5, aps=aps,
                     shadowing_sigma=3.0, noise_sigma=1.0,
                     events=events, seed=seed, survey_repeats=1)
