"""Readers, writers and quality control for lidar shots, optical series and label rasters.

File formats
------------
Shot CSV
    ``shot_id,orbit_id,lon,lat,date,quality_flag,degrade_flag,rh000,...,rh100``
    with ISO dates and ``.`` as decimal separator.
Shot NDJSON
    one object per line with the same scalar keys plus ``"rh": [101 floats]``.
Optical NDJSON
    one object per location,
    ``{"location_id", "lon", "lat", "obs": [{"t", "green", "nir", "swir1", "swir2", "cloud_prob"}, ...]}``.
Label raster
    ESRI ASCII grid plus a ``code,name`` legend sidecar.
"""
from __future__ import annotations

import csv
import datetime as dt
import io
import json
import math
import os
from dataclasses import dataclass, field
from typing import IO, Iterable, NamedTuple

import numpy as np

from .errors import ConfigError, GridMismatchError, ParseError, ValidationError

N_RH = 101
RH_COLUMNS = [f"rh{i:03d}" for i in range(N_RH)]
SHOT_COLUMNS = ["shot_id", "orbit_id", "lon", "lat", "date", "quality_flag", "degrade_flag"] + RH_COLUMNS
OPTICAL_BANDS = ("green", "nir", "swir1", "swir2")
STUDY_MONTHS = frozenset({7, 8, 9})
NON_CROP_NAMES = frozenset({"non-crop", "noncrop", "non_crop"})
QC_REASONS = ("quality", "degrade", "rh100", "orbit")


# ---------------------------------------------------------------------------
# domain types


@dataclass(eq=False)
class GediShot:
    shot_id: str
    orbit_id: str
    lon: float
    lat: float
    date: dt.date
    quality_flag: int
    degrade_flag: int
    rh: np.ndarray

    @property
    def month(self) -> int:
        return self.date.month

    def is_monotone(self) -> bool:
        return bool(np.all(np.diff(self.rh) >= 0.0))


@dataclass(frozen=True)
class OpticalObservation:
    t: float
    green: float
    nir: float
    swir1: float
    swir2: float
    cloud_prob: float


@dataclass(eq=False)
class OpticalSeries:
    location_id: str
    lon: float
    lat: float
    observations: list = field(default_factory=list)

    def __post_init__(self):
        self.observations = sorted(self.observations, key=lambda o: o.t)

    def as_arrays(self) -> dict:
        """Column view: ``{"t": array, "green": array, ...}``."""
        cols = ("t",) + OPTICAL_BANDS + ("cloud_prob",)
        return {c: np.array([getattr(o, c) for o in self.observations], dtype=float) for c in cols}


class GridHeader(NamedTuple):
    xll: float
    yll: float
    cell_size: float
    n_rows: int
    n_cols: int


@dataclass(eq=False)
class LabelRaster:
    """North-up integer class grid.

    Stored by its lower-left corner (as in the ASCII grid header) so that
    read/write round-trips are exact; ``origin_lon``/``origin_lat`` give the
    upper-left corner used for indexing.
    """

    xll: float
    yll: float
    cell_size: float
    cells: np.ndarray
    nodata: int = -9999
    legend: dict = field(default_factory=dict)

    def __post_init__(self):
        self.cells = np.asarray(self.cells)
        if self.cells.ndim != 2:
            raise ValidationError("raster cells must be a 2-D array")
        if not self.cell_size > 0:
            raise ValidationError(f"cell_size must be positive, got {self.cell_size}")

    @classmethod
    def from_origin(cls, origin_lon, origin_lat, cell_size, cells, nodata=-9999, legend=None):
        cells = np.asarray(cells)
        return cls(origin_lon, origin_lat - cells.shape[0] * cell_size, cell_size, cells,
                   nodata, dict(legend or {}))

    @property
    def n_rows(self) -> int:
        return self.cells.shape[0]

    @property
    def n_cols(self) -> int:
        return self.cells.shape[1]

    @property
    def origin_lon(self) -> float:
        return self.xll

    @property
    def origin_lat(self) -> float:
        return self.yll + self.n_rows * self.cell_size

    @property
    def header(self) -> GridHeader:
        return GridHeader(self.xll, self.yll, self.cell_size, self.n_rows, self.n_cols)

    def code_for(self, name: str) -> int:
        for code, label in self.legend.items():
            if label == name:
                return code
        raise KeyError(name)

    def check_legend(self):
        """Every non-nodata code must be named in the legend."""
        codes = set(np.unique(self.cells).tolist()) - {self.nodata}
        missing = sorted(codes - set(self.legend))
        if missing:
            raise ValidationError(f"raster codes missing from legend: {missing}")

    def cell_center(self, row, col):
        lon = self.xll + (np.asarray(col) + 0.5) * self.cell_size
        lat = self.origin_lat - (np.asarray(row) + 0.5) * self.cell_size
        return lon, lat

    def index_of(self, lon, lat):
        """(row, col, inside) for points, floor convention from the upper-left corner."""
        lon = np.asarray(lon, dtype=float)
        lat = np.asarray(lat, dtype=float)
        col = np.floor((lon - self.xll) / self.cell_size)
        row = np.floor((self.origin_lat - lat) / self.cell_size)
        inside = (col >= 0) & (col < self.n_cols) & (row >= 0) & (row < self.n_rows)
        row = np.where(inside, row, 0).astype(np.int64)
        col = np.where(inside, col, 0).astype(np.int64)
        return row, col, inside


def check_aligned(a: GridHeader, b: GridHeader):
    if tuple(a) != tuple(b):
        raise GridMismatchError(f"grids are not aligned: {a} vs {b}")


@dataclass(eq=False)
class LabeledShot:
    shot: GediShot
    crop_code: int
    is_maize: bool


# ---------------------------------------------------------------------------
# stream helpers


def _text_stream(stream) -> IO[str]:
    if isinstance(stream, (bytes, bytearray)):
        return io.StringIO(bytes(stream).decode("utf-8"))
    if isinstance(stream, (str, os.PathLike)):
        return open(stream, "r", encoding="utf-8", newline="")
    if isinstance(stream, io.TextIOBase):
        return stream
    return io.TextIOWrapper(stream, encoding="utf-8", newline="")


def _fmt(x: float) -> str:
    return repr(float(x))


# ---------------------------------------------------------------------------
# shots


def _shot_from_fields(get, line) -> GediShot:
    def req(name):
        value = get(name)
        if value is None or value == "":
            raise ParseError("missing value", line=line, field=name)
        return value

    def as_float(name, value=None):
        raw = req(name) if value is None else value
        try:
            x = float(raw)
        except (TypeError, ValueError):
            raise ParseError(f"not a number: {raw!r}", line=line, field=name) from None
        if not math.isfinite(x):
            raise ParseError(f"non-finite value: {raw!r}", line=line, field=name)
        return x

    def as_int(name):
        raw = req(name)
        try:
            return int(raw)
        except (TypeError, ValueError):
            raise ParseError(f"not an integer: {raw!r}", line=line, field=name) from None

    lon = as_float("lon")
    lat = as_float("lat")
    if not -180.0 <= lon <= 180.0:
        raise ParseError(f"longitude out of range: {lon}", line=line, field="lon")
    if not -90.0 <= lat <= 90.0:
        raise ParseError(f"latitude out of range: {lat}", line=line, field="lat")
    raw_date = req("date")
    try:
        date = dt.date.fromisoformat(str(raw_date))
    except ValueError:
        raise ParseError(f"bad ISO date: {raw_date!r}", line=line, field="date") from None
    quality = as_int("quality_flag")
    if quality not in (0, 1):
        raise ParseError(f"quality_flag must be 0 or 1, got {quality}", line=line, field="quality_flag")
    degrade = as_int("degrade_flag")
    if degrade < 0:
        raise ParseError(f"degrade_flag must be non-negative, got {degrade}", line=line, field="degrade_flag")
    rh_raw = get("rh")
    if rh_raw is not None:
        if not isinstance(rh_raw, list) or len(rh_raw) != N_RH:
            raise ParseError(f"rh must be a list of {N_RH} numbers", line=line, field="rh")
        rh = np.array([as_float("rh", v) for v in rh_raw])
    else:
        rh = np.array([as_float(c) for c in RH_COLUMNS])
    return GediShot(str(req("shot_id")), str(req("orbit_id")), lon, lat, date, quality, degrade, rh)


def parse_shot_records(stream, format: str = "csv") -> list:
    """Parse shot records and validate RH monotonicity.

    Parameters
    ----------
    stream : bytes, path, or file-like (text or binary)
    format : {"csv", "ndjson"}

    Raises
    ------
    ParseError
        malformed record, with line number and field name.
    ValidationError
        one or more shots have a decreasing RH curve; all offending ids are listed.
    """
    f = _text_stream(stream)
    shots = []
    if format == "csv":
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            return []
        missing = [c for c in SHOT_COLUMNS if c not in header]
        if missing:
            raise ParseError(f"header lacks columns {missing[:5]}", line=1, field=missing[0])
        pos = {name: i for i, name in enumerate(header)}
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} fields, got {len(row)}", line=line,
                                 field=header[min(len(row), len(header) - 1)])
            shots.append(_shot_from_fields(lambda k: row[pos[k]] if k in pos else None, line))
    elif format == "ndjson":
        for line, text in enumerate(f, start=1):
            if not text.strip():
                continue
            try:
                obj = json.loads(text)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc.msg}", line=line) from None
            if not isinstance(obj, dict):
                raise ParseError("record is not an object", line=line)
            shots.append(_shot_from_fields(obj.get, line))
    else:
        raise ConfigError(f"unknown shot format {format!r}")

    bad = [s.shot_id for s in shots if not s.is_monotone()]
    if bad:
        raise ValidationError(f"non-monotone RH curve for shots: {', '.join(bad)}")
    return shots


def write_shot_records(shots: Iterable[GediShot], stream: IO[str], format: str = "csv"):
    if format == "csv":
        w = csv.writer(stream, lineterminator="\n")
        w.writerow(SHOT_COLUMNS)
        for s in shots:
            w.writerow([s.shot_id, s.orbit_id, _fmt(s.lon), _fmt(s.lat), s.date.isoformat(),
                        s.quality_flag, s.degrade_flag] + [_fmt(v) for v in s.rh])
    elif format == "ndjson":
        for s in shots:
            obj = {"shot_id": s.shot_id, "orbit_id": s.orbit_id, "lon": float(s.lon),
                   "lat": float(s.lat), "date": s.date.isoformat(), "quality_flag": s.quality_flag,
                   "degrade_flag": s.degrade_flag, "rh": [float(v) for v in s.rh]}
            stream.write(json.dumps(obj) + "\n")
    else:
        raise ConfigError(f"unknown shot format {format!r}")


# ---------------------------------------------------------------------------
# optical series


def parse_optical_series(stream) -> list:
    f = _text_stream(stream)
    out = []
    for line, text in enumerate(f, start=1):
        if not text.strip():
            continue
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON: {exc.msg}", line=line) from None
        for key in ("location_id", "lon", "lat", "obs"):
            if key not in obj:
                raise ParseError("missing key", line=line, field=key)
        observations = []
        for k, o in enumerate(obj["obs"]):
            try:
                ob = OpticalObservation(*(float(o[c]) for c in ("t",) + OPTICAL_BANDS + ("cloud_prob",)))
            except KeyError as exc:
                raise ParseError(f"observation {k} missing key", line=line, field=exc.args[0]) from None
            except (TypeError, ValueError):
                raise ParseError(f"observation {k} has a non-numeric value", line=line, field="obs") from None
            if not 0.0 <= ob.t <= 1.0:
                raise ParseError(f"observation {k}: t={ob.t} outside [0, 1]", line=line, field="t")
            if not 0.0 <= ob.cloud_prob <= 1.0:
                raise ParseError(f"observation {k}: cloud_prob={ob.cloud_prob} outside [0, 1]",
                                 line=line, field="cloud_prob")
            for band in OPTICAL_BANDS:
                if getattr(ob, band) < 0:
                    raise ParseError(f"observation {k}: negative reflectance", line=line, field=band)
            observations.append(ob)
        out.append(OpticalSeries(str(obj["location_id"]), float(obj["lon"]), float(obj["lat"]), observations))
    return out


def write_optical_series(series: Iterable[OpticalSeries], stream: IO[str]):
    for s in series:
        obs = [{"t": o.t, "green": o.green, "nir": o.nir, "swir1": o.swir1, "swir2": o.swir2,
                "cloud_prob": o.cloud_prob} for o in s.observations]
        stream.write(json.dumps({"location_id": s.location_id, "lon": s.lon, "lat": s.lat, "obs": obs}) + "\n")


# ---------------------------------------------------------------------------
# ASCII grids


def read_legend(stream) -> dict:
    legend = {}
    f = _text_stream(stream)
    for line, row in enumerate(csv.reader(f), start=1):
        if not row or row[0].startswith("#"):
            continue
        if len(row) != 2:
            raise ParseError("legend rows are 'code,name'", line=line)
        try:
            legend[int(row[0])] = row[1].strip()
        except ValueError:
            raise ParseError(f"bad legend code {row[0]!r}", line=line, field="code") from None
    return legend


def write_legend(legend: dict, stream: IO[str]):
    for code in sorted(legend):
        stream.write(f"{code},{legend[code]}\n")


_HEADER_KEYS = ("ncols", "nrows", "xllcorner", "yllcorner", "cellsize", "nodata_value")


def read_ascii_grid(stream, dtype=float):
    """Read an ESRI ASCII grid. Returns ``(GridHeader, nodata, values)``; row 0 is north."""
    f = _text_stream(stream)
    text = f.read()
    lines = text.splitlines()
    head = {}
    i = 0
    while i < len(lines) and len(head) < 6:
        parts = lines[i].split()
        if not parts:
            i += 1
            continue
        key = parts[0].lower()
        if key not in _HEADER_KEYS and key not in ("xllcenter", "yllcenter"):
            break
        if len(parts) != 2:
            raise ParseError("header lines are 'key value'", line=i + 1, field=key)
        head[key] = parts[1]
        i += 1
    for key in ("ncols", "nrows", "cellsize"):
        if key not in head:
            raise ParseError("missing header key", line=i + 1, field=key)
    try:
        ncols, nrows = int(head["ncols"]), int(head["nrows"])
        cs = float(head["cellsize"])
        if "xllcorner" in head:
            xll, yll = float(head["xllcorner"]), float(head["yllcorner"])
        else:
            xll = float(head["xllcenter"]) - cs / 2
            yll = float(head["yllcenter"]) - cs / 2
        nodata = float(head.get("nodata_value", -9999))
    except (KeyError, ValueError) as exc:
        raise ParseError(f"bad header: {exc}", line=1) from None
    try:
        values = np.array(" ".join(lines[i:]).split(), dtype=float)
    except ValueError:
        raise ParseError("non-numeric cell value", line=i + 1) from None
    if values.size != nrows * ncols:
        raise ParseError(f"expected {nrows * ncols} cell values, got {values.size}", line=i + 1)
    values = values.reshape(nrows, ncols)
    if np.dtype(dtype).kind in "iu":
        values = values.astype(dtype)
        nodata = int(nodata)
    return GridHeader(xll, yll, cs, nrows, ncols), nodata, values


def write_ascii_grid(stream: IO[str], header: GridHeader, values: np.ndarray, nodata, fmt=None):
    values = np.asarray(values)
    if values.shape != (header.n_rows, header.n_cols):
        raise GridMismatchError(f"values shape {values.shape} does not match header {header}")
    is_int = values.dtype.kind in "iu"
    stream.write(f"ncols {header.n_cols}\n")
    stream.write(f"nrows {header.n_rows}\n")
    stream.write(f"xllcorner {_fmt(header.xll)}\n")
    stream.write(f"yllcorner {_fmt(header.yll)}\n")
    stream.write(f"cellsize {_fmt(header.cell_size)}\n")
    stream.write(f"NODATA_value {int(nodata) if is_int else _fmt(nodata)}\n")
    np.savetxt(stream, values, fmt=fmt or ("%d" if is_int else "%.6f"), delimiter=" ")


def read_label_raster(grid, legend=None) -> LabelRaster:
    """Read an integer raster; ``legend`` defaults to ``<grid path>.legend`` when it exists."""
    header, nodata, cells = read_ascii_grid(grid, dtype=np.int64)
    if legend is None and isinstance(grid, (str, os.PathLike)):
        candidate = os.fspath(grid) + ".legend"
        legend = candidate if os.path.exists(candidate) else None
    names = read_legend(legend) if legend is not None else {}
    raster = LabelRaster(header.xll, header.yll, header.cell_size, cells, int(nodata), names)
    if names:
        raster.check_legend()
    return raster


def write_label_raster(raster: LabelRaster, grid: IO[str], legend: IO[str] | None = None):
    write_ascii_grid(grid, raster.header, raster.cells.astype(np.int64), raster.nodata)
    if legend is not None:
        write_legend(raster.legend, legend)


# ---------------------------------------------------------------------------
# quality control and labelling


def qc_filter(shots, max_rh100_m: float = 10.0, dropped_orbits=()):
    """Drop low-quality shots.

    A shot is kept when ``quality_flag == 1``, ``degrade_flag == 0``,
    ``rh[100] <= max_rh100_m`` and its orbit is not listed in ``dropped_orbits``.
    Each dropped shot is logged once, under the first failing rule in the
    order quality, degrade, rh100, orbit.

    Returns
    -------
    kept : list of GediShot
    drop_log : list of (shot_id, reason)
    """
    if not max_rh100_m > 0:
        raise ConfigError(f"max_rh100_m must be positive, got {max_rh100_m}")
    dropped_orbits = set(dropped_orbits)
    kept, log = [], []
    for s in shots:
        if s.quality_flag != 1:
            log.append((s.shot_id, "quality"))
        elif s.degrade_flag != 0:
            log.append((s.shot_id, "degrade"))
        elif s.rh[100] > max_rh100_m:
            log.append((s.shot_id, "rh100"))
        elif s.orbit_id in dropped_orbits:
            log.append((s.shot_id, "orbit"))
        else:
            kept.append(s)
    return kept, log


def drop_fractions(n_input: int, drop_log) -> dict:
    """Fraction of the input dropped per reason, plus ``"total"``."""
    out = {r: 0.0 for r in QC_REASONS}
    if n_input:
        for _, reason in drop_log:
            out[reason] += 1.0 / n_input
    out["total"] = len(drop_log) / n_input if n_input else 0.0
    return out


def sample_labels(raster: LabelRaster, lon, lat) -> np.ndarray:
    row, col, inside = raster.index_of(lon, lat)
    return np.where(inside, raster.cells[row, col], raster.nodata)


def sample_label(raster: LabelRaster, lon: float, lat: float) -> int:
    """Class code of the cell containing ``(lon, lat)``, or the raster's nodata code.

    Points on a shared edge belong to the cell to the east/south.
    """
    return int(sample_labels(raster, [lon], [lat])[0])


def non_crop_codes(raster: LabelRaster) -> set:
    return {code for code, name in raster.legend.items() if name.strip().lower() in NON_CROP_NAMES}


def attach_labels(shots, raster: LabelRaster, maize_code: int, exclude_codes=None) -> list:
    """Label shots at their footprint centroid.

    Shots on nodata or non-crop cells are dropped. ``exclude_codes`` defaults
    to the legend entries named ``non-crop``.
    """
    if raster.legend and maize_code not in raster.legend:
        raise ConfigError(f"maize code {maize_code} is not in the raster legend")
    exclude = set(non_crop_codes(raster) if exclude_codes is None else exclude_codes)
    exclude.add(raster.nodata)
    shots = list(shots)
    if not shots:
        return []
    codes = sample_labels(raster, [s.lon for s in shots], [s.lat for s in shots])
    return [LabeledShot(s, int(c), int(c) == maize_code) for s, c in zip(shots, codes) if int(c) not in exclude]


def check_months(months) -> frozenset:
    months = frozenset(int(m) for m in months)
    if not months or not months <= STUDY_MONTHS:
        raise ConfigError(f"months must be a non-empty subset of {{7, 8, 9}}, got {sorted(months)}")
    return months


def month_filter(shots, months) -> list:
    months = check_months(months)
    return [s for s in shots if _shot_of(s).date.month in months]


def _shot_of(s):
    return s.shot if isinstance(s, LabeledShot) else s
