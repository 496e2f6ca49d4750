"""Declarative run configuration (INI style: ``[section]`` headers, ``key = value`` lines).

Unknown sections or keys are rejected. Relative paths resolve against the
directory of the config file.

Example::

    [run]
    regime = gedi_s2_transfer
    train_region = alpha
    test_region = beta
    months = 7,8,9
    seed = 0
    output_dir = out

    [region alpha]
    shots = alpha/shots.csv
    optical = alpha/optical.ndjson
    raster = alpha/truth.asc
    maize_code = 1
"""
from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field

from .errors import ConfigError
from .experiments import REGIME_KINDS, SplitConfig
from .features import FEATURE_DIMS, HarmonicConfig
from .forest import ForestConfig
from .ingest import check_months


def _int(v):
    return int(v)


def _float(v):
    return float(v)


def _str(v):
    return v.strip()


def _opt_int(v):
    return None if v.strip().lower() in ("", "none") else int(v)


def _list(v):
    return [x.strip() for x in v.split(",") if x.strip()]


def _months(v):
    return sorted(check_months(int(x) for x in _list(v)))


def _max_features(v):
    v = v.strip().lower()
    return v if v in ("sqrt", "all") else int(v)


def _bool(v):
    v = v.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


SCHEMA = {
    "run": {"regime": _str, "train_region": _str, "test_region": _str, "months": _months, "seed": _int,
            "n_runs": _int, "workers": _int, "output_dir": _str, "feature_kind": _str},
    "qc": {"max_rh100_m": _float, "dropped_orbits": _list},
    "harmonic": {"n": _int, "omega": _float, "min_obs": _int, "cloud_prob_max": _float},
    "forest": {"n_trees": _int, "max_features": _max_features, "min_samples_split": _int, "max_depth": _opt_int},
    "split": {"cell_size_deg": _float, "train_frac": _float},
    "train": {"region": _str, "kind": _str, "labels": _str, "label_model": _str, "model": _str},
    "map": {"model": _str, "features": _str, "cropland": _str, "truth": _str, "tile": _int,
            "prefix": _str},
    "synth": {"n_shots": _int, "cell_size": _float, "shift": _float, "qc_fail_frac": _float},
}
REGION_KEYS = {"shots": _str, "shots_format": _str, "optical": _str, "raster": _str, "legend": _str,
               "maize_code": _int, "features_raster": _str}
PATH_KEYS = {("run", "output_dir"), ("train", "label_model"), ("train", "model"), ("map", "model"),
             ("map", "features"), ("map", "cropland"), ("map", "truth")}
REGION_PATH_KEYS = {"shots", "optical", "raster", "legend", "features_raster"}


@dataclass
class RegionPaths:
    name: str
    shots: str | None = None
    shots_format: str = "csv"
    optical: str | None = None
    raster: str | None = None
    legend: str | None = None
    maize_code: int = 1
    features_raster: str | None = None


@dataclass
class RunConfig:
    regime: str | None = None
    train_region: str | None = None
    test_region: str | None = None
    months: list = field(default_factory=lambda: [7, 8, 9])
    seed: int = 0
    n_runs: int = 11
    workers: int = 1
    output_dir: str = "out"
    feature_kind: str | None = None
    max_rh100_m: float = 10.0
    dropped_orbits: list = field(default_factory=list)
    harmonic: HarmonicConfig = field(default_factory=HarmonicConfig)
    forest: ForestConfig = field(default_factory=ForestConfig)
    split: SplitConfig = field(default_factory=SplitConfig)
    regions: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    map: dict = field(default_factory=dict)
    synth: dict = field(default_factory=dict)
    source: str | None = None

    def validate(self):
        if self.regime is not None and self.regime not in REGIME_KINDS:
            raise ConfigError(f"unknown regime {self.regime!r}; choose from {sorted(REGIME_KINDS)}")
        if self.feature_kind is not None:
            if self.feature_kind not in FEATURE_DIMS:
                raise ConfigError(f"unknown feature_kind {self.feature_kind!r}")
            if self.regime is not None and REGIME_KINDS[self.regime] != self.feature_kind:
                raise ConfigError(f"regime {self.regime} uses {REGIME_KINDS[self.regime]} features, "
                                  f"config says {self.feature_kind}")
        if not 0 <= self.seed < 2 ** 63:
            raise ConfigError(f"seed must be a non-negative 63-bit integer, got {self.seed}")
        if self.n_runs < 1:
            raise ConfigError("n_runs must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if not self.max_rh100_m > 0:
            raise ConfigError("max_rh100_m must be positive")
        for r in self.regions.values():
            if r.shots_format not in ("csv", "ndjson"):
                raise ConfigError(f"region {r.name}: shots_format must be csv or ndjson")
        check_months(self.months)
        return self

    def to_dict(self) -> dict:
        """Fully resolved configuration, echoed into every artifact."""
        return {
            "run": {"regime": self.regime, "train_region": self.train_region, "test_region": self.test_region,
                    "months": list(self.months), "seed": self.seed, "n_runs": self.n_runs,
                    "workers": self.workers, "output_dir": self.output_dir, "feature_kind": self.feature_kind},
            "qc": {"max_rh100_m": self.max_rh100_m, "dropped_orbits": list(self.dropped_orbits)},
            "harmonic": {"n": self.harmonic.n, "omega": self.harmonic.omega, "min_obs": self.harmonic.min_obs,
                         "cloud_prob_max": self.harmonic.cloud_prob_max},
            "forest": {k: v for k, v in self.forest.to_dict().items() if k != "seed"},
            "split": {"cell_size_deg": self.split.cell_size_deg, "train_frac": self.split.train_frac},
            "regions": {name: vars(r).copy() for name, r in sorted(self.regions.items())},
            "train": dict(self.train),
            "map": dict(self.map),
            "synth": dict(self.synth),
            "master_seed": self.seed,
        }


def parse_config_text(text: str, base_dir: str = ".") -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None, delimiters=("=",), comment_prefixes=("#", ";"),
                                   inline_comment_prefixes=("#",))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from None

    values = {}
    regions = {}
    for section in cp.sections():
        if section.startswith("region "):
            name = section[len("region "):].strip()
            if not name:
                raise ConfigError("region section needs a name: [region NAME]")
            schema, target = REGION_KEYS, {}
        elif section in SCHEMA:
            schema, target = SCHEMA[section], values.setdefault(section, {})
        else:
            raise ConfigError(f"unknown config section [{section}]")
        for key, raw in cp.items(section):
            if key not in schema:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            try:
                value = schema[key](raw)
            except (ValueError, ConfigError) as exc:
                raise ConfigError(f"[{section}] {key}: {exc}") from None
            is_path = (section, key) in PATH_KEYS or (section.startswith("region ") and key in REGION_PATH_KEYS)
            if is_path and value:
                value = os.path.normpath(os.path.join(base_dir, value))
            target[key] = value
        if section.startswith("region "):
            regions[name] = RegionPaths(name, **target)

    run = values.get("run", {})
    qc = values.get("qc", {})
    try:
        harmonic = HarmonicConfig(**values.get("harmonic", {}))
        forest = ForestConfig(**values.get("forest", {}))
        split = SplitConfig(**values.get("split", {}))
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    cfg = RunConfig(**run, max_rh100_m=qc.get("max_rh100_m", 10.0), dropped_orbits=qc.get("dropped_orbits", []),
                    harmonic=harmonic, forest=forest, split=split, regions=regions,
                    train=values.get("train", {}), map=values.get("map", {}), synth=values.get("synth", {}))
    if "output_dir" not in run:
        cfg.output_dir = os.path.normpath(os.path.join(base_dir, "out"))
    return cfg


def load_config(path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as f:
            text = f.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    cfg = parse_config_text(text, os.path.dirname(os.path.abspath(path)))
    cfg.source = os.path.abspath(path)
    return cfg
