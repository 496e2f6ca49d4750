"""Fixed-length feature vectors: RH-11 from lidar shots, HARM-20 from optical series.

HARM-20 layout: bands in the order NIR, SWIR1, SWIR2, GCVI; within each band the
coefficients ``(c, a1, b1, a2, b2)`` of

    f(t) = c + sum_k a_k cos(2 pi omega k t) + b_k sin(2 pi omega k t)
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import (ConfigError, InsufficientObservationsError, ParseError, RankError,
                     TooFewPointsError, UndefinedIndexError)
from .ingest import GediShot, OpticalSeries, _fmt, _text_stream

RH_PERCENTILES = tuple(range(0, 101, 10))
S2_BANDS = ("nir", "swir1", "swir2", "gcvi")
FEATURE_DIMS = {"RH11": 11, "HARM20": 20}


def coefficient_names(n: int = 2) -> list:
    names = ["c"]
    for k in range(1, n + 1):
        names += [f"a{k}", f"b{k}"]
    return names


S2_FEATURE_NAMES = [f"{band}_{c}" for band in S2_BANDS for c in coefficient_names(2)]
RH_FEATURE_NAMES = [f"rh{p}" for p in RH_PERCENTILES]


@dataclass(frozen=True)
class HarmonicConfig:
    n: int = 2
    omega: float = 1.5
    min_obs: int = 5
    cloud_prob_max: float = 0.3

    def __post_init__(self):
        if self.n < 1:
            raise ConfigError(f"harmonic order must be >= 1, got {self.n}")
        if not self.omega > 0:
            raise ConfigError(f"omega must be positive, got {self.omega}")
        if self.min_obs < 2 * self.n + 1:
            raise ConfigError(f"min_obs must be >= 2n+1 = {2 * self.n + 1}, got {self.min_obs}")
        if not 0.0 <= self.cloud_prob_max <= 1.0:
            raise ConfigError(f"cloud_prob_max must lie in [0, 1], got {self.cloud_prob_max}")

    @property
    def n_coeffs(self) -> int:
        return 2 * self.n + 1


@dataclass(frozen=True)
class HarmonicCoeffs:
    c: float
    a: np.ndarray
    b: np.ndarray

    def as_vector(self) -> np.ndarray:
        out = [self.c]
        for ak, bk in zip(self.a, self.b):
            out += [ak, bk]
        return np.array(out, dtype=float)

    @classmethod
    def from_vector(cls, v) -> "HarmonicCoeffs":
        v = np.asarray(v, dtype=float)
        return cls(float(v[0]), v[1::2].copy(), v[2::2].copy())


# ---------------------------------------------------------------------------
# lidar


def subsample_rh(shot) -> np.ndarray:
    """RH values at percentiles 0, 10, ..., 100."""
    rh = shot.rh if isinstance(shot, GediShot) else np.asarray(shot)
    if len(rh) != 101:
        raise ValueError(f"expected 101 RH values, got {len(rh)}")
    return np.asarray(rh, dtype=float)[list(RH_PERCENTILES)]


def rh_feature_matrix(shots) -> tuple:
    shots = list(shots)
    X = np.array([subsample_rh(s) for s in shots]).reshape(len(shots), 11)
    return [s.shot_id for s in shots], X


# ---------------------------------------------------------------------------
# optical


def gcvi(nir, green):
    """Green chlorophyll vegetation index, ``nir / green - 1``."""
    if green <= 0:
        raise UndefinedIndexError(f"GCVI undefined for green reflectance {green}")
    return nir / green - 1.0


def clear_observations(series: OpticalSeries, cfg: HarmonicConfig = HarmonicConfig()) -> list:
    return [o for o in series.observations if o.cloud_prob <= cfg.cloud_prob_max]


def design_matrix(t, n: int, omega: float) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    cols = [np.ones_like(t)]
    for k in range(1, n + 1):
        arg = 2.0 * np.pi * omega * k * t
        cols += [np.cos(arg), np.sin(arg)]
    return np.stack(cols, axis=-1)


def fit_harmonics(t, y, cfg: HarmonicConfig = HarmonicConfig()) -> HarmonicCoeffs:
    """Least-squares harmonic fit of ``y(t)``.

    Solved with an SVD-based solver, so rank-deficient designs (fewer
    distinct times than coefficients) yield the minimum-norm solution.

    Raises
    ------
    TooFewPointsError
        fewer than ``cfg.min_obs`` points.
    RankError
        all sample times identical.
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    if t.shape != y.shape or t.ndim != 1:
        raise ValueError("t and y must be 1-D arrays of equal length")
    if t.size < cfg.min_obs:
        raise TooFewPointsError(t.size, cfg.min_obs)
    if np.ptp(t) == 0.0:
        raise RankError("all observation times are identical")
    A = design_matrix(t, cfg.n, cfg.omega)
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    return HarmonicCoeffs.from_vector(coef)


def evaluate_harmonic(coeffs: HarmonicCoeffs, omega: float, t):
    v = coeffs.as_vector()
    n = len(coeffs.a)
    out = design_matrix(np.asarray(t, dtype=float), n, omega) @ v
    return float(out) if np.ndim(out) == 0 else out


def build_s2_features(series: OpticalSeries, cfg: HarmonicConfig = HarmonicConfig()) -> np.ndarray:
    """HARM-20 vector for one location.

    Cloudy observations are removed first. GCVI is computed per clear
    observation and observations with non-positive green reflectance are left
    out of the GCVI fit only.

    Raises
    ------
    InsufficientObservationsError
        a band has fewer than ``cfg.min_obs`` usable observations.
    """
    obs = clear_observations(series, cfg)
    t = np.array([o.t for o in obs], dtype=float)
    bands = {b: np.array([getattr(o, b) for o in obs], dtype=float) for b in ("green", "nir", "swir1", "swir2")}
    ok = bands["green"] > 0
    gcvi_values = np.divide(bands["nir"], bands["green"], out=np.zeros_like(t), where=ok) - 1.0
    series_by_band = {
        "nir": (t, bands["nir"]),
        "swir1": (t, bands["swir1"]),
        "swir2": (t, bands["swir2"]),
        "gcvi": (t[ok], gcvi_values[ok]),
    }
    out = []
    for band in S2_BANDS:
        tb, yb = series_by_band[band]
        if tb.size < cfg.min_obs:
            raise InsufficientObservationsError(band, int(tb.size), cfg.min_obs)
        try:
            out.append(fit_harmonics(tb, yb, cfg).as_vector())
        except RankError as exc:
            raise InsufficientObservationsError(band, int(np.unique(tb).size), cfg.min_obs) from exc
    return np.concatenate(out)


def _s2_or_error(series, cfg):
    try:
        return series.location_id, build_s2_features(series, cfg), None
    except InsufficientObservationsError as exc:
        return series.location_id, None, str(exc)


def extract_s2_features(series_list, cfg: HarmonicConfig = HarmonicConfig(), workers: int = 1):
    """HARM-20 features for many locations.

    Returns ``(ids, X, failures)`` where ``failures`` maps excluded location ids
    to the reason. Output order follows the input regardless of ``workers``.
    """
    series_list = list(series_list)
    if workers > 1:
        from joblib import Parallel, delayed
        results = Parallel(n_jobs=workers)(delayed(_s2_or_error)(s, cfg) for s in series_list)
    else:
        results = [_s2_or_error(s, cfg) for s in series_list]
    ids, rows, failures = [], [], {}
    for loc, vec, err in results:
        if err is None:
            ids.append(loc)
            rows.append(vec)
        else:
            failures[loc] = err
    X = np.array(rows).reshape(len(rows), 4 * cfg.n_coeffs)
    return ids, X, failures


def fit_harmonics_batch(t, Y, mask, cfg: HarmonicConfig = HarmonicConfig()) -> np.ndarray:
    """Harmonic fits for many series sharing acquisition times.

    ``Y`` and ``mask`` have shape ``(N, T)``; ``mask`` marks usable samples.
    Series with identical masks share one factorization. Rows with too few
    usable samples (or all-equal times) come back as NaN.
    """
    t = np.asarray(t, dtype=float)
    Y = np.asarray(Y, dtype=float)
    mask = np.asarray(mask, dtype=bool)
    out = np.full((Y.shape[0], cfg.n_coeffs), np.nan)
    if Y.shape[0] == 0:
        return out
    A = design_matrix(t, cfg.n, cfg.omega)
    patterns, inverse = np.unique(np.packbits(mask, axis=1), axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    order = np.argsort(inverse, kind="stable")
    bounds = np.searchsorted(inverse[order], np.arange(len(patterns) + 1))
    for g in range(len(patterns)):
        rows = order[bounds[g]:bounds[g + 1]]
        m = mask[rows[0]]
        if m.sum() < cfg.min_obs or np.ptp(t[m]) == 0.0:
            continue
        coef, *_ = np.linalg.lstsq(A[m], Y[rows][:, m].T, rcond=None)
        out[rows] = coef.T
    return out


def s2_features_batch(t, green, nir, swir1, swir2, cloud_prob, cfg: HarmonicConfig = HarmonicConfig()):
    """Vectorised HARM-20 for ``(N, T)`` band arrays observed at common times ``t``.

    Matches :func:`build_s2_features` row by row; rows failing any band are NaN.
    """
    green = np.asarray(green, dtype=float)
    clear = np.asarray(cloud_prob) <= cfg.cloud_prob_max
    ok = clear & (green > 0)
    g = np.divide(nir, green, out=np.zeros_like(green), where=green > 0) - 1.0
    parts = [fit_harmonics_batch(t, nir, clear, cfg),
             fit_harmonics_batch(t, swir1, clear, cfg),
             fit_harmonics_batch(t, swir2, clear, cfg),
             fit_harmonics_batch(t, g, ok, cfg)]
    X = np.concatenate(parts, axis=1)
    X[np.isnan(X).any(axis=1)] = np.nan
    return X


# ---------------------------------------------------------------------------
# feature matrix files


def write_feature_matrix(stream, ids, X, kind: str):
    if kind not in FEATURE_DIMS:
        raise ConfigError(f"unknown feature kind {kind!r}")
    X = np.asarray(X, dtype=float)
    dim = FEATURE_DIMS[kind]
    if X.ndim != 2 or X.shape[1] != dim or X.shape[0] != len(ids):
        raise ValueError(f"{kind} matrix must be (len(ids), {dim}), got {X.shape}")
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(["location_id", "kind"] + [f"f{i:02d}" for i in range(dim)])
    for loc, row in zip(ids, X):
        w.writerow([loc, kind] + [_fmt(v) for v in row])


def read_feature_matrix(stream):
    """Returns ``(ids, X, kind)``."""
    f = _text_stream(stream)
    reader = csv.reader(f)
    try:
        header = next(reader)
    except StopIteration:
        raise ParseError("empty feature file", line=1) from None
    dim = len(header) - 2
    if header[:2] != ["location_id", "kind"] or dim not in FEATURE_DIMS.values():
        raise ParseError("header must be location_id,kind,f00..", line=1)
    ids, rows, kind = [], [], None
    for row in reader:
        if not row:
            continue
        line = reader.line_num
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} fields", line=line)
        if row[1] not in FEATURE_DIMS or FEATURE_DIMS[row[1]] != dim:
            raise ParseError(f"kind {row[1]!r} inconsistent with {dim} columns", line=line, field="kind")
        if kind is not None and row[1] != kind:
            raise ParseError("mixed feature kinds in one file", line=line, field="kind")
        kind = row[1]
        try:
            values = [float(v) for v in row[2:]]
        except ValueError:
            raise ParseError("non-numeric feature", line=line) from None
        if not all(math.isfinite(v) for v in values):
            raise ParseError("non-finite feature", line=line)
        ids.append(row[0])
        rows.append(values)
    if kind is None:
        kind = {v: k for k, v in FEATURE_DIMS.items()}[dim]
    return ids, np.array(rows, dtype=float).reshape(len(rows), dim), kind
