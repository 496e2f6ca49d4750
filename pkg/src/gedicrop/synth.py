"""Synthetic regions with known ground truth.

The generator encodes two facts: lidar RH curves depend only on crop height
(identical in every region), while optical greenness follows a seasonal pulse
whose timing moves with a per-region phenology shift. All randomness comes
from Philox streams keyed on the region seed plus a purpose tag and an index,
so output does not depend on generation order.
"""
from __future__ import annotations

import datetime as dt
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.special import ndtri

from .errors import ConfigError
from .features import HarmonicConfig, s2_features_batch
from .ingest import GediShot, LabelRaster, OpticalObservation, OpticalSeries, GridHeader
from .mapgen import FeatureRaster

YEAR = 2019
SEASON_START = dt.date(YEAR, 7, 1)
SEASON_DAYS = 92  # 1 July .. 30 September

# stream tags
_BLOCKS, _POSITIONS, _SHOT, _ROW, _CLOUD = 1, 2, 3, 4, 5

# RH curve shape
GROUND_SPREAD_M = 0.25
CANOPY_GAIN = 0.9
RH_INCREMENT_SD = 0.15
RH50_SD = 0.08
RH_CAP_M = 9.9

_P = np.arange(101) / 100.0
_Z = ndtri(0.005 + 0.99 * _P) / ndtri(0.995)  # in [-1, 1], symmetric about percentile 50


@dataclass(frozen=True)
class CropProfile:
    name: str
    code: int
    height_mean_m: float
    height_sd_m: float
    peak_t_mean: float
    peak_t_sd: float
    peak_gcvi: float
    is_tall: bool
    season_width: float = 0.07
    month_scale: tuple = (1.0, 1.0, 1.0)  # height multiplier for Jul, Aug, Sep

    def __post_init__(self):
        if self.height_mean_m < 0:
            raise ConfigError(f"{self.name}: height_mean_m must be >= 0")
        if not 0.0 < self.peak_t_mean < 1.0:
            raise ConfigError(f"{self.name}: peak_t_mean must lie in (0, 1)")


MAIZE = CropProfile("maize", 1, 2.4, 0.3, 0.58, 0.015, 5.5, True, month_scale=(0.85, 1.0, 0.9))
SOYBEAN = CropProfile("soybean", 5, 0.9, 0.3, 0.65, 0.015, 5.0, False)
RICE = CropProfile("rice", 3, 0.8, 0.25, 0.60, 0.015, 4.0, False)
NON_CROP = CropProfile("non-crop", 0, 0.2, 0.1, 0.45, 0.05, 1.0, False, season_width=0.2)


@dataclass(frozen=True)
class RegionSpec:
    name: str
    bbox: tuple  # lon_min, lat_min, lon_max, lat_max
    crops: tuple  # ((CropProfile, fraction), ...)
    phenology_shift: float = 0.0
    n_shots: int = 3000
    seed: int = 0
    cell_size: float = 0.004
    field_block: int = 10
    revisit_days: int = 5
    clear_frac: float = 0.6
    reflectance_noise_sd: float = 0.004
    amplitude_sd: float = 0.1
    qc_fail_frac: float = 0.0
    nodata: int = -9999

    def __post_init__(self):
        total = sum(f for _, f in self.crops)
        if not self.crops or abs(total - 1.0) > 1e-9 or any(f < 0 for _, f in self.crops):
            raise ConfigError(f"crop fractions must be non-negative and sum to 1, got {total}")
        lon0, lat0, lon1, lat1 = self.bbox
        if not (lon1 > lon0 and lat1 > lat0):
            raise ConfigError("bbox must be (lon_min, lat_min, lon_max, lat_max)")
        if len(_cells_spanned(self.bbox, 0.5)) < 2:
            raise ConfigError("bbox must span at least two 0.5 degree grid cells")
        codes = [p.code for p, _ in self.crops]
        if len(set(codes)) != len(codes) or self.nodata in codes:
            raise ConfigError("crop codes must be unique and differ from nodata")

    @property
    def shape(self) -> tuple:
        lon0, lat0, lon1, lat1 = self.bbox
        return (int(round((lat1 - lat0) / self.cell_size)), int(round((lon1 - lon0) / self.cell_size)))

    @property
    def header(self) -> GridHeader:
        n_rows, n_cols = self.shape
        return GridHeader(float(self.bbox[0]), float(self.bbox[1]), self.cell_size, n_rows, n_cols)

    @property
    def legend(self) -> dict:
        return {p.code: p.name for p, _ in self.crops}

    @property
    def maize_code(self) -> int:
        for p, _ in self.crops:
            if p.is_tall:
                return p.code
        raise ConfigError("region has no tall crop")

    def times(self) -> np.ndarray:
        days = np.arange(0, 365, self.revisit_days)
        return days / 364.0


def _cells_spanned(bbox, size):
    lon0, lat0, lon1, lat1 = bbox
    xs = range(int(np.floor(lon0 / size)), int(np.ceil(lon1 / size)))
    ys = range(int(np.floor(lat0 / size)), int(np.ceil(lat1 / size)))
    return [(x, y) for x in xs for y in ys]


def _stream(seed: int, tag: int, index: int = 0) -> np.random.Generator:
    key = np.array([int(seed) % 2 ** 64, (tag << 48) | int(index)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


# ---------------------------------------------------------------------------
# lidar


def gen_rh_curve(height_m: float, rng: np.random.Generator) -> np.ndarray:
    """101-value RH curve for a single-mode, ground-centred crop waveform.

    The curve is a scaled symmetric quantile shape: the lower half spans the
    ground pulse, the upper half widens with canopy height. Increments get
    multiplicative log-normal noise and the whole curve is shifted so RH50
    lands near zero, so monotonicity holds exactly.
    """
    if height_m < 0:
        raise ConfigError("height must be non-negative")
    upper = GROUND_SPREAD_M + CANOPY_GAIN * height_m
    base = np.where(_P < 0.5, _Z * GROUND_SPREAD_M, _Z * upper)
    inc = np.diff(base) * np.exp(rng.normal(0.0, RH_INCREMENT_SD, size=100))
    curve = np.concatenate([[0.0], np.cumsum(inc)])
    curve += rng.normal(0.0, RH50_SD) - curve[50]
    return np.minimum(curve, RH_CAP_M)


# ---------------------------------------------------------------------------
# optical


def _pulse(t, peak, amp, width):
    return amp[..., None] * np.exp(-0.5 * ((t - peak[..., None]) / width[..., None]) ** 2)


def _bands(t, peak, amp, width, noise):
    """Reflectances for locations x times. ``noise`` has shape (4, N, T)."""
    pulse = _pulse(t, peak, amp, width)
    green = np.maximum(0.06 + noise[0], 1e-3)
    nir = np.maximum(green * (1.3 + pulse) + noise[1], 0.0)
    swir1 = np.maximum(0.28 - 0.02 * pulse + noise[2], 0.0)
    swir2 = np.maximum(0.20 - 0.018 * pulse + noise[3], 0.0)
    return green, nir, swir1, swir2


def _cloud_prob(rng, n_times, clear_frac, min_clear):
    clear = rng.random(n_times) < clear_frac
    prob = np.where(clear, rng.uniform(0.0, 0.3, n_times), rng.uniform(0.31, 1.0, n_times))
    if clear.sum() < min_clear:
        prob[np.linspace(0, n_times - 1, min_clear).astype(int)] = 0.0
    return prob


def gen_optical_series(profile: CropProfile, shift: float, rng: np.random.Generator,
                       location_id="loc", lon=0.0, lat=0.0, revisit_days=5, clear_frac=0.6,
                       noise_sd=0.004, amplitude_sd=0.1, min_clear=HarmonicConfig().min_obs + 5):
    """One location's yearly series, greenness peaking near ``profile.peak_t_mean + shift``."""
    t = np.arange(0, 365, revisit_days) / 364.0
    peak = np.array([profile.peak_t_mean + shift + rng.normal(0.0, profile.peak_t_sd)])
    amp = np.array([profile.peak_gcvi * max(0.0, 1.0 + rng.normal(0.0, amplitude_sd))])
    width = np.array([profile.season_width])
    noise = rng.normal(0.0, noise_sd, size=(4, 1, t.size)) if noise_sd > 0 else np.zeros((4, 1, t.size))
    green, nir, swir1, swir2 = (b[0] for b in _bands(t, peak, amp, width, noise))
    cloud = _cloud_prob(rng, t.size, clear_frac, min_clear)
    obs = [OpticalObservation(float(t[j]), float(green[j]), float(nir[j]), float(swir1[j]), float(swir2[j]),
                              float(cloud[j])) for j in range(t.size)]
    return OpticalSeries(location_id, float(lon), float(lat), obs)


# ---------------------------------------------------------------------------
# regions


class SyntheticRegion(NamedTuple):
    shots: list
    series: list
    truth: LabelRaster


def crop_grid(spec: RegionSpec) -> LabelRaster:
    """Truth raster: field blocks of ``field_block`` cells, crops in exact mix proportions."""
    n_rows, n_cols = spec.shape
    b = spec.field_block
    br, bc = -(-n_rows // b), -(-n_cols // b)
    n_blocks = br * bc
    counts = np.floor(np.array([f for _, f in spec.crops]) * n_blocks + 0.5).astype(int)
    counts[-1] = n_blocks - counts[:-1].sum()
    codes = np.repeat([p.code for p, _ in spec.crops], counts)
    codes = _stream(spec.seed, _BLOCKS).permutation(codes).reshape(br, bc)
    cells = np.kron(codes, np.ones((b, b), dtype=np.int64))[:n_rows, :n_cols]
    return LabelRaster(spec.bbox[0], spec.bbox[1], spec.cell_size, cells, spec.nodata, spec.legend)


def _block_clouds(spec: RegionSpec, n_times: int) -> np.ndarray:
    """Cloud probability per (block row, block col, time); clouds cover whole fields."""
    n_rows, n_cols = spec.shape
    b = spec.field_block
    br, bc = -(-n_rows // b), -(-n_cols // b)
    out = np.empty((br, bc, n_times))
    min_clear = HarmonicConfig().min_obs + 5
    for i in range(br):
        rng = _stream(spec.seed, _CLOUD, i)
        for j in range(bc):
            out[i, j] = _cloud_prob(rng, n_times, spec.clear_frac, min_clear)
    return out


def _profile_arrays(spec: RegionSpec, codes):
    profiles = [p for p, _ in spec.crops]
    pos = np.searchsorted(np.array(sorted(p.code for p in profiles)), codes)
    profiles.sort(key=lambda p: p.code)
    fields = ("peak_t_mean", "peak_t_sd", "peak_gcvi", "season_width")
    return {f: np.array([getattr(p, f) for p in profiles])[pos] for f in fields}


def optical_rows(spec: RegionSpec, truth: LabelRaster, rows, clouds=None):
    """Band arrays for whole raster rows.

    Returns ``(t, green, nir, swir1, swir2, cloud_prob)`` with band arrays of
    shape ``(len(rows), n_cols, T)``. Each row draws from its own stream.
    """
    t = spec.times()
    if clouds is None:
        clouds = _block_clouds(spec, t.size)
    n_cols = truth.n_cols
    out = [np.empty((len(rows), n_cols, t.size)) for _ in range(5)]
    for k, r in enumerate(rows):
        rng = _stream(spec.seed, _ROW, r)
        prof = _profile_arrays(spec, truth.cells[r])
        peak = prof["peak_t_mean"] + spec.phenology_shift + rng.normal(0.0, 1.0, n_cols) * prof["peak_t_sd"]
        amp = prof["peak_gcvi"] * np.maximum(0.0, 1.0 + rng.normal(0.0, spec.amplitude_sd, n_cols))
        noise = rng.normal(0.0, spec.reflectance_noise_sd, size=(4, n_cols, t.size))
        for arr, band in zip(out, _bands(t, peak, amp, prof["season_width"], noise)):
            arr[k] = band
        out[4][k] = clouds[r // spec.field_block][np.arange(n_cols) // spec.field_block]
    return (t, *out)


def _shot_positions(spec: RegionSpec):
    rng = _stream(spec.seed, _POSITIONS)
    lon0, lat0, lon1, lat1 = spec.bbox
    # keep points strictly inside so every shot maps to a raster cell
    lon = rng.uniform(lon0, lon1, spec.n_shots)
    lat = rng.uniform(lat0, lat1, spec.n_shots)
    lon = np.minimum(lon, np.nextafter(lon1, lon0))
    lat = np.maximum(lat, np.nextafter(lat0, lat1))
    return lon, lat


def gen_shot(spec: RegionSpec, index: int, lon: float, lat: float, profile: CropProfile) -> GediShot:
    rng = _stream(spec.seed, _SHOT, index)
    date = SEASON_START + dt.timedelta(days=int(rng.integers(0, SEASON_DAYS)))
    orbit = f"{date:%Y%m%d}-{int(rng.integers(0, 4))}"
    scale = profile.month_scale[date.month - 7]
    height = max(0.0, rng.normal(profile.height_mean_m * scale, profile.height_sd_m))
    rh = gen_rh_curve(height, rng)
    quality, degrade = 1, 0
    if spec.qc_fail_frac > 0 and rng.random() < spec.qc_fail_frac:
        rule = int(rng.integers(0, 3))
        if rule == 0:
            quality = 0
        elif rule == 1:
            degrade = int(rng.integers(1, 10))
        else:
            rh = rh + (12.0 - rh[100])
    return GediShot(f"{spec.name}-{index:06d}", orbit, float(lon), float(lat), date, quality, degrade, rh)


def gen_region(spec: RegionSpec) -> SyntheticRegion:
    """Shots (with RH), optical series at each shot, and the truth raster.

    A shot's optical series is the series of the raster cell it falls in, so
    point features and wall-to-wall features agree.
    """
    truth = crop_grid(spec)
    lon, lat = _shot_positions(spec)
    row, col, inside = truth.index_of(lon, lat)
    assert inside.all()
    by_code = {p.code: p for p, _ in spec.crops}
    shots = [gen_shot(spec, i, lon[i], lat[i], by_code[int(truth.cells[row[i], col[i]])])
             for i in range(spec.n_shots)]

    t = spec.times()
    clouds = _block_clouds(spec, t.size)
    series = [None] * spec.n_shots
    unique_rows = np.unique(row)
    for start in range(0, len(unique_rows), 64):
        chunk = unique_rows[start:start + 64]
        _, green, nir, swir1, swir2, cloud = optical_rows(spec, truth, chunk, clouds)
        pos = {int(r): k for k, r in enumerate(chunk)}
        for i in np.flatnonzero(np.isin(row, chunk)):
            k, c = pos[int(row[i])], col[i]
            obs = [OpticalObservation(float(t[j]), float(green[k, c, j]), float(nir[k, c, j]),
                                      float(swir1[k, c, j]), float(swir2[k, c, j]), float(cloud[k, c, j]))
                   for j in range(t.size)]
            series[i] = OpticalSeries(shots[i].shot_id, shots[i].lon, shots[i].lat, obs)
    return SyntheticRegion(shots, series, truth)


def gen_feature_raster(spec: RegionSpec, truth: LabelRaster | None = None,
                       cfg: HarmonicConfig = HarmonicConfig(), rows_per_tile: int = 64) -> FeatureRaster:
    """HARM-20 features for every cell of the region's raster."""
    if truth is None:
        truth = crop_grid(spec)
    t = spec.times()
    clouds = _block_clouds(spec, t.size)
    values = np.empty((truth.n_rows, truth.n_cols, 4 * cfg.n_coeffs))
    for r0 in range(0, truth.n_rows, rows_per_tile):
        rows = np.arange(r0, min(r0 + rows_per_tile, truth.n_rows))
        _, green, nir, swir1, swir2, cloud = optical_rows(spec, truth, rows, clouds)
        flat = [a.reshape(-1, t.size) for a in (green, nir, swir1, swir2, cloud)]
        values[rows] = s2_features_batch(t, *flat, cfg).reshape(len(rows), truth.n_cols, -1)
    return FeatureRaster(truth.header, values)


# ---------------------------------------------------------------------------
# default benchmark


def default_regions(n_shots: int = 3000, cell_size: float = 0.004, shift: float = 0.12, seed: int = 2019):
    """Two regions with identical crop heights and a phenology shift between them."""
    a = RegionSpec("alpha", (-94.0, 41.0, -92.0, 43.0), ((MAIZE, 0.45), (SOYBEAN, 0.45), (NON_CROP, 0.10)),
                   phenology_shift=0.0, n_shots=n_shots, seed=seed, cell_size=cell_size)
    b = RegionSpec("beta", (124.0, 43.0, 126.0, 45.0), ((MAIZE, 0.40), (SOYBEAN, 0.50), (NON_CROP, 0.10)),
                   phenology_shift=shift, n_shots=n_shots, seed=seed + 1, cell_size=cell_size)
    return a, b
