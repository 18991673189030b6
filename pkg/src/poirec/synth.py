"""Synthetic check-in corpus generator.

POIs sit on a lat/lon grid (coordinates are exact multiples of 1e-6
degrees so CSV round-trips are lossless).  Transitions are sampled from
a softmax whose logits mix three context signals: a preferred next
category, distance decay, and each POI's peak visiting hour.  With all
coupling strengths at zero every transition is uniform over POIs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from datetime import date, datetime, timezone

import numpy as np

from .ingest import DataError, haversine_km




@dataclass
class SynthConfig:
    users: int
    pois: int
    categories: int
    traj_per_user: int = 6
    len_min: int = 3
    len_max: int = 5
    grid_deg: float = 0.2
    coupling_category: float = 0.0
    coupling_distance: float = 0.0
    coupling_hour: float = 0.0
    base_lat: float = 40.7
    base_lon: float = -74.0
    start_day: str = "2013-01-01"

    def validate(self) -> None:
        if self.users < 1 or self.pois < 1 or self.categories < 1:
            raise DataError(f"infeasible spec: users={self.users}, pois={self.pois}, "
                            f"categories={self.categories}")
        if self.traj_per_user < 1:
            raise DataError(f"infeasible spec: traj_per_user={self.traj_per_user}")
        if not (1 <= self.len_min <= self.len_max <= 18):
            raise DataError(f"infeasible spec: trajectory length range "
                            f"[{self.len_min}, {self.len_max}] outside [1, 18]")
        if self.grid_deg <= 0:
            raise DataError(f"infeasible spec: grid_deg={self.grid_deg}")
        if min(self.coupling_category, self.coupling_distance, self.coupling_hour) < 0:
            raise DataError("infeasible spec: negative coupling strength")


def _poi_coordinates(cfg: SynthConfig) -> np.ndarray:
    side = math.ceil(math.sqrt(cfg.pois))
    cell_micro = max(1, round(cfg.grid_deg * 1e6 / side))
    base_lat_micro = round(cfg.base_lat * 1e6)
    base_lon_micro = round(cfg.base_lon * 1e6)
    coords = np.empty((cfg.pois, 2))
    for p in range(cfg.pois):
        # division (not * 1e-6) so each value is the correctly rounded double
        # for the micro-degree decimal, making the CSV round-trip lossless
        coords[p, 0] = (base_lat_micro + (p // side) * cell_micro) / 1e6
        coords[p, 1] = (base_lon_micro + (p % side) * cell_micro) / 1e6
    return coords


def generate_rows(cfg: SynthConfig, seed: int) -> list[tuple[str, str, str, float, float, int]]:
    """Deterministic event rows for the given seed, one per check-in."""
    cfg.validate()
    rng = np.random.default_rng(seed)
    coords = _poi_coordinates(cfg)
    poi_cat = rng.integers(0, cfg.categories, size=cfg.pois)
    peak_hour = rng.integers(0, 24, size=cfg.pois)

    dist = np.zeros((cfg.pois, cfg.pois))
    for i in range(cfg.pois):
        for j in range(cfg.pois):
            dist[i, j] = haversine_km(coords[i, 0], coords[i, 1], coords[j, 0], coords[j, 1])
    dist_norm = dist / max(dist.max(), 1e-9)

    day0 = date.fromisoformat(cfg.start_day).toordinal()
    rows = []
    for u in range(cfg.users):
        for t in range(cfg.traj_per_user):
            length = int(rng.integers(cfg.len_min, cfg.len_max + 1))
            start_hour = int(rng.integers(5, 24 - length))
            day = date.fromordinal(day0 + t)
            midnight = int(datetime(day.year, day.month, day.day, tzinfo=timezone.utc).timestamp())
            poi = int(rng.integers(cfg.pois))
            for step in range(length):
                hour = start_hour + step
                ts = midnight + hour * 3600
                rows.append((f"u{u:04d}", f"p{poi:04d}", f"c{poi_cat[poi]}",
                             coords[poi, 0], coords[poi, 1], ts))
                if step + 1 < length:
                    next_hour = start_hour + step + 1
                    logits = (
                        cfg.coupling_category * (poi_cat == (poi_cat[poi] + 1) % cfg.categories)
                        - cfg.coupling_distance * dist_norm[poi]
                        + cfg.coupling_hour * np.cos(2.0 * np.pi * (next_hour - peak_hour) / 24.0)
                    )
                    logits = logits - logits.max()
                    probs = np.exp(logits)
                    probs /= probs.sum()
                    poi = int(rng.choice(cfg.pois, p=probs))
    return rows


def generate_synthetic(cfg: SynthConfig, seed: int, out_path) -> int:
    """Write the corpus as a check-in CSV; returns the number of data rows."""
    rows = generate_rows(cfg, seed)
    with open(out_path, "w", newline="", encoding="utf-8") as fh:
        fh.write("user_id,poi_id,category_id,lat,lon,timestamp\n")
        for user_id, poi_id, cat_id, lat, lon, ts in rows:
            fh.write(f"{user_id},{poi_id},{cat_id},{lat:.6f},{lon:.6f},{ts}\n")
    return len(rows)
