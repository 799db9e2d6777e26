"""Trip-record ingestion: raw trip CSVs to a demand Scenario.

Pipeline: parse trips inside a time window, cluster pickup points into
stations with seeded k-means, then estimate per-station arrival rates,
origin-destination routing probabilities (with additive smoothing), and
mean travel times (with distance/average-speed fill for unobserved pairs).

Input CSV columns: pickup_ts,pickup_x,pickup_y,dropoff_x,dropoff_y,duration_s
(header required; timestamps ISO-8601 or epoch seconds).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from datetime import datetime, timezone

import numpy as np
from sklearn.cluster import KMeans

from .errors import (
    DisconnectedDemand,
    EmptyWindow,
    IoError,
    TooFewPoints,
)
from .scenario import Scenario, validate_scenario

RATE_FLOOR = 1e-6
SMOOTHING = 1e-3
OUTLIER_FACTOR = 5.0


@dataclass(frozen=True)
class TripRecord:
    pickup_ts: float        # epoch seconds
    pickup: tuple           # (x, y)
    dropoff: tuple          # (x, y)
    duration: float         # seconds

    def __post_init__(self):
        if not self.duration > 0:
            raise ValueError("trip duration must be positive")
        for v in (*self.pickup, *self.dropoff, self.pickup_ts):
            if not np.isfinite(v):
                raise ValueError("trip coordinates/timestamps must be finite")


@dataclass
class ParseResult:
    trips: list
    skipped: int


@dataclass
class StationClustering:
    coords: np.ndarray       # (N, 2) centroids
    pickup_idx: np.ndarray   # per-trip pickup station
    dropoff_idx: np.ndarray  # per-trip dropoff station


@dataclass
class IngestResult:
    scenario: Scenario
    notes: list = field(default_factory=list)


def _parse_ts(text):
    """Epoch seconds from an ISO-8601 string or a raw number."""
    try:
        return float(text)
    except ValueError:
        pass
    dt = datetime.fromisoformat(text)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.timestamp()


def parse_trips(path, window) -> ParseResult:
    """Trips whose pickup falls inside [window[0], window[1])."""
    start, end = (_parse_ts(str(w)) for w in window)
    if not end > start:
        raise ValueError("window end must be after its start")
    trips = []
    skipped = 0
    try:
        f = open(path, newline="")
    except OSError as e:
        raise IoError(str(e)) from e
    with f:
        reader = csv.DictReader(f)
        cols = ("pickup_ts", "pickup_x", "pickup_y",
                "dropoff_x", "dropoff_y", "duration_s")
        if reader.fieldnames is None:
            raise EmptyWindow(f"{path} is empty")
        if any(c not in reader.fieldnames for c in cols):
            raise IoError(f"{path}: missing required header {cols}")
        for row in reader:
            try:
                ts = _parse_ts(row["pickup_ts"])
                rec = TripRecord(
                    ts,
                    (float(row["pickup_x"]), float(row["pickup_y"])),
                    (float(row["dropoff_x"]), float(row["dropoff_y"])),
                    float(row["duration_s"]),
                )
            except (TypeError, ValueError):
                skipped += 1
                continue
            if start <= ts < end:
                trips.append(rec)
    if not trips:
        raise EmptyWindow(f"no trips with pickups in [{start}, {end})")
    return ParseResult(trips=trips, skipped=skipped)


def cluster_stations(trips, n, seed=0) -> StationClustering:
    """Seeded k-means over pickup points; both trip endpoints are then
    assigned to their nearest centroid."""
    pickups = np.array([t.pickup for t in trips], dtype=float)
    if len(np.unique(pickups, axis=0)) < n:
        raise TooFewPoints(
            f"{len(np.unique(pickups, axis=0))} distinct pickup points "
            f"for {n} stations")
    km = KMeans(n_clusters=n, init="k-means++", n_init=50, random_state=seed)
    pickup_idx = km.fit_predict(pickups)
    dropoffs = np.array([t.dropoff for t in trips], dtype=float)
    dist = np.linalg.norm(dropoffs[:, None, :]
                          - km.cluster_centers_[None, :, :], axis=2)
    return StationClustering(
        coords=km.cluster_centers_.copy(),
        pickup_idx=np.asarray(pickup_idx, dtype=int),
        dropoff_idx=dist.argmin(axis=1),
    )


def estimate_parameters(trips, clustering, window_length,
                        outlier_factor=OUTLIER_FACTOR) -> IngestResult:
    """Scenario parameters from clustered trips.

    Arrival rate is pickups per window time; routing is the empirical OD
    share with additive smoothing (diagonal forced to zero); travel time is
    the mean observed duration, with unobserved pairs filled by centroid
    distance over the fleet-average speed. Trips whose duration exceeds
    outlier_factor times their OD median are dropped first.
    """
    if not window_length > 0:
        raise ValueError("window_length must be positive")
    coords = clustering.coords
    n = len(coords)
    notes = []

    od = np.column_stack([clustering.pickup_idx, clustering.dropoff_idx])
    durs = np.array([t.duration for t in trips], dtype=float)

    keep = np.ones(len(trips), dtype=bool)
    for (i, j) in {tuple(x) for x in od}:
        mask = (od[:, 0] == i) & (od[:, 1] == j)
        med = np.median(durs[mask])
        bad = mask & (durs > outlier_factor * med)
        if bad.any():
            keep &= ~bad
            notes.append(f"dropped {int(bad.sum())} duration outliers "
                         f"on {i}->{j}")
    self_loop = od[:, 0] == od[:, 1]
    if (keep & self_loop).any():
        notes.append(f"dropped {int((keep & self_loop).sum())} "
                     "same-station trips")
        keep &= ~self_loop
    od, durs = od[keep], durs[keep]
    if len(od) == 0:
        raise EmptyWindow("no usable trips after filtering")

    counts = np.zeros((n, n))
    np.add.at(counts, (od[:, 0], od[:, 1]), 1)
    pickups = counts.sum(axis=1)

    lam = pickups / window_length
    low = lam < RATE_FLOOR
    if low.any():
        lam = np.where(low, RATE_FLOOR, lam)
        notes.append("rate floor applied at stations "
                     f"{np.where(low)[0].tolist()}")

    p = counts + SMOOTHING
    np.fill_diagonal(p, 0.0)
    p = p / p.sum(axis=1, keepdims=True)

    dist = np.linalg.norm(coords[:, None, :] - coords[None, :, :], axis=2)
    trip_dist = dist[od[:, 0], od[:, 1]]
    speed = float(trip_dist.sum() / durs.sum()) if trip_dist.sum() > 0 else 1.0

    T = np.zeros((n, n))
    np.add.at(T, (od[:, 0], od[:, 1]), durs)
    observed = counts > 0
    T = np.divide(T, counts, out=np.zeros_like(T), where=observed)
    fill = dist / max(speed, 1e-12)
    T = np.where(observed, T, fill)
    np.fill_diagonal(T, 1.0)   # unused; keeps the matrix strictly positive
    offdiag = ~np.eye(n, dtype=bool)
    if (T[offdiag] <= 0).any():
        # coincident centroids give zero distance fill; use smallest
        # observed travel time instead
        floor = durs.min()
        T = np.where(offdiag & (T <= 0), floor, T)
        notes.append("travel-time floor applied to coincident stations")

    s = Scenario(lam, p, T, coords=coords, time_unit="s")
    problems = validate_scenario(s)
    if problems:
        raise DisconnectedDemand("; ".join(problems))
    return IngestResult(scenario=s, notes=notes)


def ingest(path, window, n, seed=0):
    """Full pipeline; returns (IngestResult, ParseResult)."""
    parsed = parse_trips(path, window)
    clustering = cluster_stations(parsed.trips, n, seed=seed)
    start, end = (_parse_ts(str(w)) for w in window)
    result = estimate_parameters(parsed.trips, clustering, end - start)
    return result, parsed
