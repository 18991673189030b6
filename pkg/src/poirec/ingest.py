"""Check-in data pipeline: load, filter, segment, split, graph, features.

Everything here is a pure function over immutable inputs.  Filtering is
iterated to a fixed point so the result does not depend on the order in
which the thresholds are applied.  Day segmentation and time slots use
the configured timezone offset (hours, default UTC).
"""

from __future__ import annotations

import csv
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone

import numpy as np

EARTH_RADIUS_KM = 6371.0
CSV_FIELDS = ["user_id", "poi_id", "category_id", "lat", "lon", "timestamp"]


class DataError(ValueError):
    """Malformed or degenerate input data."""


@dataclass(frozen=True)
class CheckIn:
    user_id: str
    poi_id: str
    category_id: str
    lat: float
    lon: float
    timestamp: int
    time_slot: int


@dataclass
class Trajectory:
    """One user's check-ins within a single calendar day, time-ordered."""

    user_id: str
    day_key: str                       # ISO date in the configured timezone
    events: list[tuple[str, int, int]]  # (poi_id, time_slot, timestamp)

    @property
    def first_timestamp(self) -> int:
        return self.events[0][2]

    def __len__(self) -> int:
        return len(self.events)


@dataclass
class Dataset:
    users: dict[str, int]
    pois: dict[str, int]
    categories: dict[str, int]
    poi_cat: np.ndarray      # (|V|,) dense category index per POI index
    poi_latlon: np.ndarray   # (|V|, 2)
    train: list[Trajectory] = field(default_factory=list)
    val: list[Trajectory] = field(default_factory=list)
    test: list[Trajectory] = field(default_factory=list)
    dmax: int = 20
    bin_width_km: float = 1.0
    tz_hours: float = 0.0
    stats: dict = field(default_factory=dict)

    @property
    def num_pois(self) -> int:
        return len(self.pois)


def _local_dt(timestamp: int, tz_hours: float) -> datetime:
    return datetime.fromtimestamp(timestamp, tz=timezone(timedelta(hours=tz_hours)))


def time_slot_of(timestamp: int, tz_hours: float) -> int:
    return _local_dt(timestamp, tz_hours).hour


def day_key_of(timestamp: int, tz_hours: float) -> str:
    return _local_dt(timestamp, tz_hours).date().isoformat()


def load_checkins(path, tz_hours: float = 0.0) -> list[CheckIn]:
    """Parse a check-in CSV into records, in file order.

    Header must be exactly ``user_id,poi_id,category_id,lat,lon,timestamp``.
    Raises :class:`DataError` naming the offending line on malformed rows
    and on files with no data rows.
    """
    records: list[CheckIn] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty data") from None
        if [h.strip() for h in header] != CSV_FIELDS:
            raise DataError(f"{path}: line 1: bad header {header!r}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 6:
                raise DataError(f"{path}: line {lineno}: expected 6 fields, got {len(row)}")
            user_id, poi_id, cat_id, lat_s, lon_s, ts_s = (v.strip() for v in row)
            try:
                lat = float(lat_s)
                lon = float(lon_s)
                ts = int(float(ts_s))
            except ValueError:
                raise DataError(f"{path}: line {lineno}: unparsable number") from None
            if not (-90.0 <= lat <= 90.0):
                raise DataError(f"{path}: line {lineno}: latitude {lat} out of range")
            if not (-180.0 <= lon <= 180.0):
                raise DataError(f"{path}: line {lineno}: longitude {lon} out of range")
            records.append(CheckIn(user_id, poi_id, cat_id, lat, lon, ts,
                                   time_slot_of(ts, tz_hours)))
    if not records:
        raise DataError(f"{path}: empty data")
    return records


def haversine_km(lat1: float, lon1: float, lat2: float, lon2: float) -> float:
    """Great-circle distance in kilometers (Earth radius 6371.0 km)."""
    p1, l1, p2, l2 = map(math.radians, (lat1, lon1, lat2, lon2))
    a = math.sin((p2 - p1) / 2.0) ** 2 + math.cos(p1) * math.cos(p2) * math.sin((l2 - l1) / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_KM * math.asin(min(1.0, math.sqrt(a)))


def distance_bin(km: float, bin_width_km: float, dmax: int) -> int:
    """Fixed-width bin index with the final bin catching overflow."""
    if km < 0 or dmax < 1 or bin_width_km <= 0:
        raise ValueError(f"distance_bin: km={km}, bin_width_km={bin_width_km}, dmax={dmax}")
    return min(int(km // bin_width_km), dmax - 1)


def segment_by_day(checkins, tz_hours: float) -> dict[str, list[list[CheckIn]]]:
    """Group each user's check-ins by local calendar day, time-ordered."""
    per_user: dict[str, list[CheckIn]] = defaultdict(list)
    for c in checkins:
        per_user[c.user_id].append(c)
    out: dict[str, list[list[CheckIn]]] = {}
    for uid in per_user:
        events = sorted(per_user[uid], key=lambda c: c.timestamp)
        days: dict[str, list[CheckIn]] = {}
        for c in events:
            days.setdefault(day_key_of(c.timestamp, tz_hours), []).append(c)
        out[uid] = [days[k] for k in sorted(days)]
    return out


def filter_dataset(checkins, min_poi_interactions: int = 10, min_user_trajectories: int = 5,
                   min_traj_len: int = 3, *, tz_hours: float = 0.0, bin_width_km: float = 1.0,
                   dmax: int = 20):
    """Apply the activity thresholds to a fixed point and index the survivors.

    Returns ``(dataset, trajectories_by_user)``; the dataset's splits are
    left empty (see :func:`chrono_split`).  Removing a POI can shorten
    trajectories below the length threshold, which can drop users, which
    changes POI counts again, so the three filters iterate until nothing
    changes.
    """
    if not checkins:
        raise DataError("empty data")
    events = list(checkins)
    surviving_days: dict[str, list[list[CheckIn]]] = {}
    while True:
        poi_counts = Counter(c.poi_id for c in events)
        kept = [c for c in events if poi_counts[c.poi_id] >= min_poi_interactions]
        by_user = segment_by_day(kept, tz_hours)
        surviving_days = {}
        survivors: list[CheckIn] = []
        for uid, days in by_user.items():
            long_enough = [d for d in days if len(d) >= min_traj_len]
            if len(long_enough) >= min_user_trajectories:
                surviving_days[uid] = long_enough
                for d in long_enough:
                    survivors.extend(d)
        if len(survivors) == len(events):
            break
        events = survivors
    if not events:
        raise DataError("empty after filtering")

    users = {uid: i for i, uid in enumerate(sorted(surviving_days))}
    poi_ids = sorted({c.poi_id for c in events})
    pois = {pid: i for i, pid in enumerate(poi_ids)}
    # Per-POI category and coordinates from its earliest surviving check-in
    # (ties broken lexicographically) so the choice is order-independent.
    earliest: dict[str, CheckIn] = {}
    for c in events:
        cur = earliest.get(c.poi_id)
        if cur is None or (c.timestamp, c.category_id) < (cur.timestamp, cur.category_id):
            earliest[c.poi_id] = c
    categories = {cid: i for i, cid in enumerate(sorted({earliest[p].category_id for p in poi_ids}))}
    poi_cat = np.array([categories[earliest[p].category_id] for p in poi_ids], dtype=np.intp)
    poi_latlon = np.array([[earliest[p].lat, earliest[p].lon] for p in poi_ids])

    trajs_by_user: dict[str, list[Trajectory]] = {}
    for uid, days in surviving_days.items():
        trajs_by_user[uid] = [
            Trajectory(uid, day_key_of(d[0].timestamp, tz_hours),
                       [(c.poi_id, c.time_slot, c.timestamp) for c in d])
            for d in days
        ]
    n_events = len(events)
    stats = {
        "users": len(users),
        "pois": len(pois),
        "checkins": n_events,
        "density": n_events / (len(users) * len(pois)),
    }
    dataset = Dataset(users=users, pois=pois, categories=categories, poi_cat=poi_cat,
                      poi_latlon=poi_latlon, dmax=dmax, bin_width_km=bin_width_km,
                      tz_hours=tz_hours, stats=stats)
    return dataset, trajs_by_user


def chrono_split(trajs_by_user: dict[str, list[Trajectory]],
                 ratios: tuple[float, float, float] = (0.8, 0.1, 0.1)):
    """Per-user chronological split: ceil shares for train and val, rest test."""
    train: list[Trajectory] = []
    val: list[Trajectory] = []
    test: list[Trajectory] = []
    for uid in sorted(trajs_by_user):
        trajs = sorted(trajs_by_user[uid], key=lambda t: t.first_timestamp)
        n = len(trajs)
        n_train = min(math.ceil(ratios[0] * n), n)
        n_val = min(math.ceil(ratios[1] * n), n - n_train)
        train.extend(trajs[:n_train])
        val.extend(trajs[n_train:n_train + n_val])
        test.extend(trajs[n_train + n_val:])
    return train, val, test


def prepare_dataset(checkins, **kwargs) -> Dataset:
    """Filter, index, and chronologically split in one step."""
    dataset, trajs_by_user = filter_dataset(checkins, **kwargs)
    dataset.train, dataset.val, dataset.test = chrono_split(trajs_by_user)
    return dataset


@dataclass
class TransitionGraph:
    """Directed POI transition graph with per-edge counts and distance bins.

    ``edge_*`` arrays hold only observed transitions (count >= 1).  The
    aggregation neighborhoods optionally add one self pair per node; see
    :meth:`attention_pairs`.
    """

    num_nodes: int
    edge_src: np.ndarray
    edge_dst: np.ndarray
    edge_count: np.ndarray
    edge_bin: np.ndarray
    self_loops: bool = True

    @property
    def num_edges(self) -> int:
        return int(self.edge_src.size)

    def attention_pairs(self, direction: str = "in"):
        """(neighbor, central, bin) arrays for every aggregation pair.

        With in-neighbor aggregation the central node of an edge is its
        destination; ``direction="out"`` swaps the roles.  Self pairs are
        appended for nodes lacking one when self-loops are enabled, and
        the result is sorted by (central, neighbor).
        """
        if direction == "in":
            nb, ce = self.edge_src, self.edge_dst
        elif direction == "out":
            nb, ce = self.edge_dst, self.edge_src
        else:
            raise ValueError(f"attention_pairs: unknown direction {direction!r}")
        nb = nb.copy()
        ce = ce.copy()
        bins = self.edge_bin.copy()
        if self.self_loops:
            has_self = np.zeros(self.num_nodes, dtype=bool)
            has_self[self.edge_src[self.edge_src == self.edge_dst]] = True
            missing = np.flatnonzero(~has_self)
            nb = np.concatenate([nb, missing])
            ce = np.concatenate([ce, missing])
            bins = np.concatenate([bins, np.zeros(missing.size, dtype=bins.dtype)])
        order = np.lexsort((nb, ce))
        return nb[order], ce[order], bins[order]

    def in_neighbors(self, node: int) -> list[int]:
        """Predecessors of ``node`` (plus itself when self-loops are on)."""
        nbrs = set(self.edge_src[self.edge_dst == node].tolist())
        if self.self_loops:
            nbrs.add(node)
        return sorted(nbrs)


def iter_transitions(trajectories, dataset: Dataset):
    """Yield (src_idx, dst_idx) for every consecutive pair in the trajectories."""
    pois = dataset.pois
    for traj in trajectories:
        for (p1, _, _), (p2, _, _) in zip(traj.events, traj.events[1:]):
            yield pois[p1], pois[p2]


def build_transition_graph(train_trajectories, dataset: Dataset,
                           add_self_loops: bool = True) -> TransitionGraph:
    """One directed edge per distinct consecutive POI pair in the training split."""
    counts: Counter = Counter(iter_transitions(train_trajectories, dataset))
    keys = sorted(counts)
    src = np.array([k[0] for k in keys], dtype=np.intp)
    dst = np.array([k[1] for k in keys], dtype=np.intp)
    cnt = np.array([counts[k] for k in keys], dtype=np.int64)
    bins = np.array([
        distance_bin(
            haversine_km(dataset.poi_latlon[i, 0], dataset.poi_latlon[i, 1],
                         dataset.poi_latlon[j, 0], dataset.poi_latlon[j, 1]),
            dataset.bin_width_km, dataset.dmax)
        for i, j in keys
    ], dtype=np.intp) if keys else np.zeros(0, dtype=np.intp)
    return TransitionGraph(num_nodes=dataset.num_pois, edge_src=src, edge_dst=dst,
                           edge_count=cnt, edge_bin=bins, self_loops=add_self_loops)


@dataclass
class ContextFeatures:
    """Per-POI context inputs for the adaptive attention.

    Rows of ``d_src``/``d_dst``/``hourly`` are normalized to sum to 1 for
    POIs with at least one relevant training event and are all zeros
    otherwise, so missing evidence stays silent.
    """

    category: np.ndarray  # (|V|,) int
    d_src: np.ndarray     # (|V|, dmax) distance-bin distribution as transition origin
    d_dst: np.ndarray     # (|V|, dmax) distance-bin distribution as transition destination
    hourly: np.ndarray    # (|V|, 24) hour-of-day check-in distribution


def _normalize_rows(m: np.ndarray) -> np.ndarray:
    totals = m.sum(axis=1, keepdims=True)
    return np.divide(m, totals, out=np.zeros_like(m), where=totals > 0)


def extract_context_features(train_trajectories, dataset: Dataset) -> ContextFeatures:
    """Count-based context features from the training split only."""
    n = dataset.num_pois
    d_src = np.zeros((n, dataset.dmax))
    d_dst = np.zeros((n, dataset.dmax))
    hourly = np.zeros((n, 24))
    for i, j in iter_transitions(train_trajectories, dataset):
        km = haversine_km(dataset.poi_latlon[i, 0], dataset.poi_latlon[i, 1],
                          dataset.poi_latlon[j, 0], dataset.poi_latlon[j, 1])
        b = distance_bin(km, dataset.bin_width_km, dataset.dmax)
        d_src[i, b] += 1
        d_dst[j, b] += 1
    for traj in train_trajectories:
        for poi_id, slot, _ in traj.events:
            hourly[dataset.pois[poi_id], slot] += 1
    return ContextFeatures(category=dataset.poi_cat.copy(),
                           d_src=_normalize_rows(d_src),
                           d_dst=_normalize_rows(d_dst),
                           hourly=_normalize_rows(hourly))
