"""Loading raw geo-referenced event records and mapping them to model coordinates.

Raw rows carry a timestamp, WGS84 latitude/longitude and an area id.  They
become model events through a local equirectangular projection (kilometres
about a fixed origin; adequate at city scale) with time measured in days
since the earliest record.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from datetime import datetime
from typing import Optional

import numpy as np

from .errors import EmptyFileError, MissingColumnError, UnknownAreaError
from .model import Event, History

KM_PER_DEG_LAT = 110.574
KM_PER_DEG_LON = 111.320
SECONDS_PER_DAY = 86400.0

_TIME_FORMATS = (
    "%Y-%m-%dT%H:%M:%S",
    "%Y-%m-%d %H:%M:%S",
    "%Y-%m-%d",
    "%m/%d/%Y %H:%M",
    "%m/%d/%Y %I:%M:%S %p",
    "%m/%d/%Y",
)


@dataclass(frozen=True)
class RawRecord:
    timestamp: datetime
    lat: float
    lon: float
    area_id: str


@dataclass(frozen=True)
class ProjectionSpec:
    """Equirectangular projection origin; x/y come out in kilometres."""

    origin_lat: float
    origin_lon: float

    @property
    def scale(self) -> tuple:
        """(km per degree longitude, km per degree latitude) at the origin."""
        return (
            KM_PER_DEG_LON * math.cos(math.radians(self.origin_lat)),
            KM_PER_DEG_LAT,
        )

    def forward(self, lat: float, lon: float) -> tuple:
        sx, sy = self.scale
        return (lon - self.origin_lon) * sx, (lat - self.origin_lat) * sy

    def inverse(self, x: float, y: float) -> tuple:
        sx, sy = self.scale
        return self.origin_lat + y / sy, self.origin_lon + x / sx


@dataclass(frozen=True)
class LoadResult:
    records: list
    rejects: list  # (line_number, reason) pairs; nothing is dropped silently


def _parse_time(raw: str) -> datetime:
    raw = raw.strip()
    for fmt in _TIME_FORMATS:
        try:
            return datetime.strptime(raw, fmt)
        except ValueError:
            continue
    raise ValueError(f"unrecognized timestamp {raw!r}")


def load_csv(
    path,
    column_map: dict,
    include_types: Optional[set] = None,
) -> LoadResult:
    """Parse raw records; malformed rows go to the rejects report.

    ``column_map`` names the ``time``, ``lat``, ``lon`` and ``area`` columns
    (optionally ``type`` for include-list filtering).  Rows with
    placeholder coordinates (|lat| < 1) are rejected, not silently dropped.
    """
    for key in ("time", "lat", "lon", "area"):
        if key not in column_map:
            raise MissingColumnError(f"column_map must name the {key!r} column")
    records = []
    rejects = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for key in ("time", "lat", "lon", "area"):
            if column_map[key] not in header:
                raise MissingColumnError(
                    f"column {column_map[key]!r} not found in header {header}"
                )
        type_col = column_map.get("type")
        if include_types is not None and (type_col is None or type_col not in header):
            raise MissingColumnError("type filtering requested but no type column mapped")
        n_rows = 0
        for line_no, row in enumerate(reader, start=2):
            n_rows += 1
            if include_types is not None and row[type_col].strip() not in include_types:
                continue
            try:
                ts = _parse_time(row[column_map["time"]])
                lat = float(row[column_map["lat"]])
                lon = float(row[column_map["lon"]])
            except (ValueError, TypeError) as exc:
                rejects.append((line_no, str(exc)))
                continue
            area = row[column_map["area"]].strip()
            if not (-90.0 <= lat <= 90.0) or not (-180.0 <= lon <= 180.0):
                rejects.append((line_no, f"coordinates out of range ({lat}, {lon})"))
                continue
            if abs(lat) < 1.0:
                rejects.append((line_no, f"placeholder coordinates ({lat}, {lon})"))
                continue
            if not area:
                rejects.append((line_no, "empty area id"))
                continue
            records.append(RawRecord(ts, lat, lon, area))
    if n_rows == 0:
        raise EmptyFileError(f"{path} has no data rows")
    return LoadResult(records, rejects)


def build_area_index(records) -> dict:
    """Deterministic area id -> node index map (lexicographic order)."""
    return {area: i for i, area in enumerate(sorted({r.area_id for r in records}))}


def default_projection(records) -> ProjectionSpec:
    """Origin at the centroid of the record coordinates."""
    lat0 = float(np.mean([r.lat for r in records]))
    lon0 = float(np.mean([r.lon for r in records]))
    return ProjectionSpec(lat0, lon0)


def to_history(records, proj: ProjectionSpec, area_index: dict) -> History:
    """Project records to model events; time is days since the earliest record.

    Input order does not matter: events are sorted by (t, node, x, y) and the
    horizon is the latest event time.
    """
    if not records:
        return History((), 0.0)
    missing = sorted({r.area_id for r in records} - set(area_index))
    if missing:
        raise UnknownAreaError(f"area ids missing from the index: {missing}")
    t0 = min(r.timestamp for r in records)
    events = []
    for r in records:
        t = (r.timestamp - t0).total_seconds() / SECONDS_PER_DAY
        x, y = proj.forward(r.lat, r.lon)
        events.append(Event(t, x, y, area_index[r.area_id]))
    horizon = max(e.t for e in events)
    return History.from_events(events, horizon)


def write_event_csv(history: History, path) -> None:
    """Canonical event trace: header ``t,x,y,node``, one row per event."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "x", "y", "node"])
        for e in history.events:
            writer.writerow([repr(e.t), repr(e.x), repr(e.y), e.node])


def read_event_csv(path) -> History:
    """Read a canonical ``t,x,y,node`` trace back into a History."""
    events = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for col in ("t", "x", "y", "node"):
            if reader.fieldnames is None or col not in reader.fieldnames:
                raise MissingColumnError(f"event CSV must have a {col!r} column")
        for row in reader:
            events.append(
                Event(float(row["t"]), float(row["x"]), float(row["y"]), int(row["node"]))
            )
    if not events:
        raise EmptyFileError(f"{path} has no events")
    horizon = max(e.t for e in events)
    return History.from_events(events, horizon)
