"""Weather and electricity data clients.

Offline mode (the default) answers from a fixture manifest and never touches
the network; live mode queries the open-meteo archive and the EIA v2 API.
Every successful answer is cached on disk under ``<cache_dir>/<hash>.csv``
with a ``<hash>.json`` sidecar describing the query.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import tempfile
import threading
import time
from dataclasses import dataclass
from datetime import datetime, timedelta
from importlib import resources
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .core import Frame, TimeSeries, read_csv, write_csv
from .errors import (
    EmptyRange,
    InvalidValue,
    NetworkBlocked,
    NetworkDisabledNoFixture,
    RetrievalError,
    UnknownZone,
    UpstreamError,
)

log = logging.getLogger(__name__)

WEATHER_URL = "https://archive-api.open-meteo.com/v1/archive"
ELECTRICITY_URL = "https://api.eia.gov/v2/electricity/rto/region-data/data/"
EIA_KEY_ENV = "EIA_API_KEY"
RESOLUTIONS = {"hourly": timedelta(hours=1), "daily": timedelta(days=1)}
# EIA region-data "type" facet per requested variable
EIA_TYPES = {"demand": "D", "demand_forecast": "DF", "net_generation": "NG", "interchange": "TI"}

# transport(url, params, timeout) -> (status_code, parsed_json_or_text)
HttpTransport = Callable[[str, dict, float], tuple]


@dataclass(frozen=True)
class RetrievalQuery:
    kind: str
    location: Union[tuple[float, float], str]
    start: datetime
    end: datetime
    variables: tuple[str, ...]
    resolution: str = "hourly"

    def __post_init__(self):
        if self.kind not in ("weather", "electricity"):
            raise InvalidValue(f"unknown retrieval kind {self.kind!r}")
        if self.resolution not in RESOLUTIONS:
            raise InvalidValue(f"resolution must be hourly or daily, got {self.resolution!r}")
        if not self.start < self.end:
            raise InvalidValue("query start must precede end")
        variables = tuple(self.variables) if not isinstance(self.variables, str) else (self.variables,)
        if not variables:
            raise InvalidValue("query needs at least one variable")
        object.__setattr__(self, "variables", variables)
        if self.kind == "weather":
            lat, lon = self.location
            if not (-90 <= lat <= 90 and -180 <= lon <= 180):
                raise InvalidValue(f"coordinates out of range: ({lat}, {lon})")
            object.__setattr__(self, "location", (float(lat), float(lon)))
        elif not isinstance(self.location, str) or not self.location.strip():
            raise InvalidValue("electricity queries need a non-empty zone code")

    @property
    def step(self) -> timedelta:
        return RESOLUTIONS[self.resolution]

    @property
    def n_rows(self) -> int:
        return int((self.end - self.start) // self.step)

    def canonical(self) -> dict:
        d = {
            "kind": self.kind,
            "start": self.start.isoformat(),
            "end": self.end.isoformat(),
            "variables": sorted(self.variables),
            "resolution": self.resolution,
        }
        if self.kind == "weather":
            d["lat"], d["lon"] = self.location
        else:
            d["zone"] = self.location
        return d

    def cache_key(self) -> str:
        text = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()


def blocking_transport(url: str, params: dict, timeout: float) -> tuple:
    raise NetworkBlocked(f"network access is disabled (attempted GET {url})")


def requests_transport(url: str, params: dict, timeout: float) -> tuple:
    import requests

    try:
        resp = requests.get(url, params=params, timeout=timeout)
    except requests.RequestException as exc:
        raise UpstreamError(0, str(exc)) from exc
    try:
        return resp.status_code, resp.json()
    except ValueError:
        return resp.status_code, resp.text


def default_fixture_dir() -> Path:
    return Path(str(resources.files("tsreasoner").joinpath("data/retrieval")))


def _atomic_write(path: Path, text: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


class RetrievalClient:
    def __init__(self, mode: str = "offline", cache_dir: Path | str | None = None,
                 fixture_dir: Path | str | None = None, transport: HttpTransport | None = None,
                 weather_url: str = WEATHER_URL, electricity_url: str = ELECTRICITY_URL,
                 timeout: float = 30.0, max_attempts: int = 3, backoff: float = 0.5,
                 sleep: Callable[[float], None] = time.sleep):
        if mode not in ("offline", "live"):
            raise ValueError(f"retrieval mode must be offline or live, got {mode!r}")
        self.mode = mode
        self.cache_dir = Path(cache_dir) if cache_dir is not None else None
        self.fixture_dir = Path(fixture_dir) if fixture_dir is not None else default_fixture_dir()
        self.transport = transport or (requests_transport if mode == "live" else blocking_transport)
        self.weather_url = weather_url
        self.electricity_url = electricity_url
        self.timeout = timeout
        self.max_attempts = max_attempts
        self.backoff = backoff
        self.sleep = sleep
        self.network_calls = 0
        self._lock = threading.Lock()
        self._manifest: Optional[list[dict]] = None

    # ---------------------------------------------------------------- public

    def fetch(self, q: RetrievalQuery) -> Frame:
        cached = self._cache_get(q)
        if cached is not None:
            return cached
        frame = self._fixture(q) if self.mode == "offline" else self._live(q)
        self._cache_put(q, frame)
        return frame

    def fetch_weather(self, q: RetrievalQuery) -> Frame:
        if q.kind != "weather":
            raise InvalidValue("fetch_weather needs a weather query")
        return self.fetch(q)

    def fetch_electricity(self, q: RetrievalQuery) -> Frame:
        if q.kind != "electricity":
            raise InvalidValue("fetch_electricity needs an electricity query")
        return self.fetch(q)

    def fetch_weather_args(self, lat, lon, start, end, variables, resolution="hourly") -> Frame:
        return self.fetch_weather(RetrievalQuery("weather", (lat, lon), start, end, _vars(variables), resolution))

    def fetch_electricity_args(self, zone, start, end, variables, resolution="hourly") -> Frame:
        return self.fetch_electricity(RetrievalQuery("electricity", zone, start, end, _vars(variables), resolution))

    # ---------------------------------------------------------------- cache

    def _cache_paths(self, q: RetrievalQuery) -> tuple[Path, Path]:
        key = q.cache_key()
        return self.cache_dir / f"{key}.csv", self.cache_dir / f"{key}.json"

    def _cache_get(self, q: RetrievalQuery) -> Optional[Frame]:
        if self.cache_dir is None:
            return None
        csv_path, _ = self._cache_paths(q)
        if not csv_path.exists():
            return None
        frame = read_csv(csv_path)
        return _order(frame, q.variables)

    def _cache_put(self, q: RetrievalQuery, frame: Frame) -> None:
        if self.cache_dir is None:
            return
        self.cache_dir.mkdir(parents=True, exist_ok=True)
        csv_path, meta_path = self._cache_paths(q)
        with self._lock:
            _atomic_write(csv_path, write_csv(frame))
            meta = {"query": q.canonical(), "source": self.mode, "rows": len(frame)}
            _atomic_write(meta_path, json.dumps(meta, indent=1, sort_keys=True))

    # ---------------------------------------------------------------- offline

    def manifest(self) -> list[dict]:
        if self._manifest is None:
            path = self.fixture_dir / "manifest.json"
            self._manifest = json.loads(path.read_text())["fixtures"] if path.exists() else []
        return self._manifest

    def _fixture(self, q: RetrievalQuery) -> Frame:
        entries = [e for e in self.manifest() if e["kind"] == q.kind and e.get("resolution", "hourly") == q.resolution]
        if q.kind == "electricity":
            zones = {e["zone"] for e in entries}
            if zones and q.location not in zones:
                raise UnknownZone(f"zone {q.location!r} is not in the offline manifest (known: {sorted(zones)})")
            entries = [e for e in entries if e["zone"] == q.location]
        else:
            entries = [e for e in entries
                       if abs(e["lat"] - q.location[0]) < 1e-6 and abs(e["lon"] - q.location[1]) < 1e-6]
        entries = [e for e in entries if set(q.variables) <= set(e["variables"])]
        if not entries:
            raise NetworkDisabledNoFixture(f"offline mode and no fixture covers {q.canonical()}")
        overlapping = []
        for e in entries:
            lo, hi = datetime.fromisoformat(e["start"]), datetime.fromisoformat(e["end"])
            if lo <= q.start and q.end <= hi:
                frame = read_csv(self.fixture_dir / e["file"])
                i0 = int((q.start - frame.start) // q.step)
                return _order(frame.slice(i0, i0 + q.n_rows), q.variables)
            if q.start < hi and lo < q.end:
                overlapping.append((lo, hi))
        if overlapping:
            lo, hi = overlapping[0]
            missing = []
            if q.start < lo:
                missing.append(f"{q.start.isoformat()}..{lo.isoformat()}")
            if q.end > hi:
                missing.append(f"{hi.isoformat()}..{q.end.isoformat()}")
            raise EmptyRange(f"no data for {', '.join(missing)}; partial ranges are rejected")
        raise NetworkDisabledNoFixture(f"offline mode and no fixture covers {q.canonical()}")

    # ---------------------------------------------------------------- live

    def _get(self, url: str, params: dict) -> dict:
        last: Exception | None = None
        for attempt in range(self.max_attempts):
            if attempt:
                self.sleep(self.backoff * 2 ** (attempt - 1))
            self.network_calls += 1
            status, payload = self.transport(url, params, self.timeout)
            if status == 200 and isinstance(payload, dict):
                return payload
            last = UpstreamError(status, str(payload)[:200])
            if status not in (0, 429) and status < 500:
                break
        raise last

    def _live(self, q: RetrievalQuery) -> Frame:
        if q.kind == "weather":
            return self._live_weather(q)
        return self._live_electricity(q)

    def _live_weather(self, q: RetrievalQuery) -> Frame:
        lat, lon = q.location
        params = {
            "latitude": lat, "longitude": lon,
            "start_date": q.start.date().isoformat(),
            "end_date": (q.end - timedelta(seconds=1)).date().isoformat(),
            q.resolution: ",".join(q.variables),
            "timezone": "UTC",
        }
        payload = self._get(self.weather_url, params)
        return parse_open_meteo(payload, q)

    def _live_electricity(self, q: RetrievalQuery) -> Frame:
        unknown = [v for v in q.variables if v not in EIA_TYPES]
        if unknown:
            raise InvalidValue(f"unknown electricity variables {unknown}; choose from {sorted(EIA_TYPES)}")
        fmt = "%Y-%m-%dT%H"
        params = {
            "frequency": "hourly" if q.resolution == "hourly" else "daily",
            "data[0]": "value",
            "facets[respondent][]": q.location,
            "facets[type][]": [EIA_TYPES[v] for v in q.variables],
            "start": q.start.strftime(fmt),
            "end": (q.end - q.step).strftime(fmt),
            "length": 5000,
        }
        key = os.environ.get(EIA_KEY_ENV)
        if key:
            params["api_key"] = key
        payload = self._get(self.electricity_url, params)
        return parse_eia(payload, q)


def _vars(variables) -> tuple[str, ...]:
    if isinstance(variables, str):
        return tuple(v.strip() for v in variables.split(",") if v.strip())
    return tuple(variables)


def _order(frame: Frame, variables: Sequence[str]) -> Frame:
    missing = [v for v in variables if v not in frame.names]
    if missing:
        raise RetrievalError(f"variables {missing} missing from retrieved data")
    return Frame(tuple(frame[v] for v in variables))


def _grid(q: RetrievalQuery, stamps: Sequence[datetime], columns: dict[str, Sequence]) -> Frame:
    """Place (timestamp, value) rows onto the query's regular grid."""
    n = q.n_rows
    out = {v: np.full(n, np.nan) for v in q.variables}
    for j, t in enumerate(stamps):
        i = (t - q.start) / q.step
        if 0 <= i < n and float(i).is_integer():
            for v in q.variables:
                x = columns[v][j]
                if x is not None:
                    out[v][int(i)] = float(x)
    for v, arr in out.items():
        if np.isnan(arr).all():
            raise EmptyRange(f"upstream returned no data for {v} in the requested range")
        if np.isnan(arr).any():
            raise EmptyRange(f"upstream data for {v} has {int(np.isnan(arr).sum())} missing rows")
    return Frame(tuple(TimeSeries(out[v], q.start, q.step, v) for v in q.variables))


def parse_open_meteo(payload: dict, q: RetrievalQuery) -> Frame:
    block = payload.get(q.resolution)
    if not block or "time" not in block:
        raise EmptyRange("open-meteo response has no data block")
    stamps = [datetime.fromisoformat(t) for t in block["time"]]
    missing = [v for v in q.variables if v not in block]
    if missing:
        raise UpstreamError(200, f"variables {missing} absent from response")
    return _grid(q, stamps, {v: block[v] for v in q.variables})


def parse_eia(payload: dict, q: RetrievalQuery) -> Frame:
    rows = (payload.get("response") or {}).get("data") or []
    if not rows:
        raise EmptyRange("EIA response has no rows")
    by_type = {code: v for v, code in EIA_TYPES.items()}
    stamps: list[datetime] = []
    columns: dict[str, list] = {v: [] for v in q.variables}
    seen: dict[datetime, int] = {}
    for r in rows:
        v = by_type.get(r.get("type"))
        if v not in columns:
            continue
        t = datetime.strptime(r["period"], "%Y-%m-%dT%H" if "T" in r["period"] else "%Y-%m-%d")
        if t not in seen:
            seen[t] = len(stamps)
            stamps.append(t)
            for col in columns.values():
                col.append(None)
        columns[v][seen[t]] = r.get("value")
    return _grid(q, stamps, columns)
