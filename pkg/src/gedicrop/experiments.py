"""Local, transfer and lidar-supervised experiments with spatially blocked splits.

Regimes
-------
s2_local          HARM-20 features, trained and tested on different cells of one region
gedi_local        RH-11 features, same protocol
s2_transfer       HARM-20 model from region A scored on region B's test cells
gedi_transfer     RH-11 model from region A scored on region B's test cells
gedi_s2_transfer  RH-11 model from A labels B's training shots; a HARM-20 model is
                  trained on those predictions and scored on B's test cells

Run ``i`` of an experiment uses seed ``master_seed + i`` for both the split
and the forest, so a local run and the transfer run with the same index share
the same source model.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, RunError, SplitError, ValidationError
from .features import HarmonicConfig, extract_s2_features, rh_feature_matrix
from .forest import Forest, ForestConfig, predict, train_forest
from .ingest import attach_labels, check_months, qc_filter

REGIME_KINDS = {
    "s2_local": "HARM20",
    "gedi_local": "RH11",
    "s2_transfer": "HARM20",
    "gedi_transfer": "RH11",
    "gedi_s2_transfer": "HARM20",
}
LOCAL_REGIMES = ("s2_local", "gedi_local")
MONTH_SETS = ((7,), (8,), (9,), (7, 8, 9))

# Published real-data accuracies, kept in reports for side-by-side reading.
REFERENCE_ACCURACY = {
    "gedi_local_best_month": {"china_sep": 0.88, "france_jul": 0.85, "us_aug": 0.91},
    "s2_local": {"china": 0.93, "france": 0.95, "us": 0.95},
    "s2_transfer_mean": 0.64,
    "gedi_s2_transfer_min": 0.82,
}


@dataclass(frozen=True)
class SplitConfig:
    cell_size_deg: float = 0.5
    train_frac: float = 0.8

    def __post_init__(self):
        if not self.cell_size_deg > 0:
            raise ConfigError("cell_size_deg must be positive")
        if not 0.0 < self.train_frac < 1.0:
            raise ConfigError("train_frac must lie in (0, 1)")


# ---------------------------------------------------------------------------
# data


@dataclass(eq=False)
class RegionData:
    """Labelled samples of one region with both feature kinds aligned by row.

    ``is_maize`` and ``crop`` are ``None`` in a features-only view.
    """

    name: str
    ids: np.ndarray
    lon: np.ndarray
    lat: np.ndarray
    month: np.ndarray
    rh: np.ndarray
    s2: np.ndarray
    is_maize: np.ndarray | None
    crop: np.ndarray | None

    def __len__(self):
        return len(self.ids)

    def take(self, mask) -> "RegionData":
        pick = lambda a: None if a is None else a[mask]
        return RegionData(self.name, self.ids[mask], self.lon[mask], self.lat[mask], self.month[mask],
                          self.rh[mask], self.s2[mask], pick(self.is_maize), pick(self.crop))

    def in_months(self, months) -> "RegionData":
        months = check_months(months)
        return self.take(np.isin(self.month, sorted(months)))

    def features(self, kind: str) -> np.ndarray:
        if kind == "RH11":
            return self.rh
        if kind == "HARM20":
            return self.s2
        raise ConfigError(f"unknown feature kind {kind!r}")

    def features_only(self) -> "RegionData":
        return RegionData(self.name, self.ids, self.lon, self.lat, self.month, self.rh, self.s2, None, None)


def region_data(name, labeled_shots, legend, s2_ids, s2_X) -> RegionData:
    """Join labelled shots with HARM-20 rows (matched on shot id = location id).

    Shots without optical features are left out so both feature kinds are
    evaluated on identical samples.
    """
    row_of = {loc: i for i, loc in enumerate(s2_ids)}
    kept = [ls for ls in labeled_shots if ls.shot.shot_id in row_of]
    shots = [ls.shot for ls in kept]
    _, rh = rh_feature_matrix(shots)
    s2 = np.asarray(s2_X, dtype=float)[[row_of[s.shot_id] for s in shots]].reshape(len(shots), -1)
    return RegionData(
        name,
        np.array([s.shot_id for s in shots], dtype=object),
        np.array([s.lon for s in shots], dtype=float),
        np.array([s.lat for s in shots], dtype=float),
        np.array([s.date.month for s in shots], dtype=np.int64),
        rh,
        s2,
        np.array([ls.is_maize for ls in kept], dtype=bool),
        np.array([legend.get(ls.crop_code, str(ls.crop_code)) for ls in kept], dtype=object),
    )


def prepare_region(name, shots, series, raster, maize_code, max_rh100_m=10.0, dropped_orbits=(),
                   harmonic: HarmonicConfig = HarmonicConfig(), workers: int = 1):
    """QC, label and featurize one region. Returns ``(RegionData, log)``."""
    kept, drop_log = qc_filter(shots, max_rh100_m, dropped_orbits)
    labeled = attach_labels(kept, raster, maize_code)
    ids, X, failures = extract_s2_features(series, harmonic, workers)
    data = region_data(name, labeled, raster.legend, ids, X)
    log = {"n_shots": len(shots), "n_qc_dropped": len(drop_log), "n_labeled": len(labeled),
           "n_no_optical": len(labeled) - len(data), "n_samples": len(data),
           "n_optical_failures": len(failures)}
    return data, log


# ---------------------------------------------------------------------------
# spatial split


@dataclass(frozen=True)
class GridSplit:
    cell_size_deg: float
    train_frac: float
    seed: int
    assignment: dict  # (ix, iy) -> "train" | "test"

    @property
    def train_cells(self) -> list:
        return sorted(c for c, side in self.assignment.items() if side == "train")

    @property
    def test_cells(self) -> list:
        return sorted(c for c, side in self.assignment.items() if side == "test")

    def is_train(self, lon, lat) -> np.ndarray:
        keys = cell_keys(lon, lat, self.cell_size_deg)
        train = set(self.train_cells)
        return np.array([k in train for k in keys], dtype=bool)


def cell_keys(lon, lat, cell_size) -> list:
    ix = np.floor(np.asarray(lon, dtype=float) / cell_size).astype(np.int64)
    iy = np.floor(np.asarray(lat, dtype=float) / cell_size).astype(np.int64)
    return list(zip(ix.tolist(), iy.tolist()))


def n_train_cells(n_cells: int, train_frac: float) -> int:
    """``round(train_frac * n_cells)`` (half up), clamped to leave both sides non-empty."""
    return min(max(int(math.floor(train_frac * n_cells + 0.5)), 1), n_cells - 1)


def grid_split(lon, lat, cell_size: float = 0.5, train_frac: float = 0.8, seed: int = 0) -> GridSplit:
    """Assign whole world-grid cells to train or test.

    Cells are keyed by ``(floor(lon / cell_size), floor(lat / cell_size))``;
    the populated cells, in sorted order, are shuffled with ``seed`` and the
    first ``n_train_cells`` go to training.
    """
    cells = sorted(set(cell_keys(lon, lat, cell_size)))
    if len(cells) < 2:
        raise SplitError(f"need at least 2 populated grid cells, found {len(cells)}")
    order = np.random.default_rng(seed).permutation(len(cells))
    k = n_train_cells(len(cells), train_frac)
    assignment = {cells[j]: ("train" if rank < k else "test") for rank, j in enumerate(order)}
    return GridSplit(cell_size, train_frac, seed, assignment)


# ---------------------------------------------------------------------------
# metrics


@dataclass
class RunMetrics:
    accuracy: float
    confusion: list  # [predicted][actual], index 0 = non-maize, 1 = maize
    per_crop: dict  # crop name -> [predicted maize, predicted non-maize]
    n_train: int
    n_test: int
    seed: int = 0
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"accuracy": self.accuracy, "confusion": self.confusion, "per_crop": self.per_crop,
                "n_train": self.n_train, "n_test": self.n_test, "seed": self.seed, "extra": self.extra}


def compute_metrics(pred, truth, crop_names=None, n_train: int = 0, seed: int = 0) -> RunMetrics:
    pred = np.asarray(pred).astype(bool)
    truth = np.asarray(truth).astype(bool)
    if pred.shape != truth.shape:
        raise ValidationError(f"prediction and truth lengths differ: {pred.shape} vs {truth.shape}")
    confusion = [[int((~pred & ~truth).sum()), int((~pred & truth).sum())],
                 [int((pred & ~truth).sum()), int((pred & truth).sum())]]
    n = int(pred.size)
    per_crop = {}
    if crop_names is not None:
        names = np.asarray(crop_names, dtype=object)
        for name in sorted(set(names.tolist())):
            sel = names == name
            per_crop[name] = [int(pred[sel].sum()), int((~pred[sel]).sum())]
    acc = (confusion[0][0] + confusion[1][1]) / n if n else float("nan")
    return RunMetrics(acc, confusion, per_crop, int(n_train), n, int(seed))


def aggregate(accuracies) -> tuple:
    """``(mean, population std, median run index)``.

    The median run is the one holding the median accuracy; for an even number
    of runs, the lower of the two middle values.
    """
    acc = np.asarray(list(accuracies), dtype=float)
    if acc.size == 0:
        raise ValueError("no runs to aggregate")
    order = np.argsort(acc, kind="stable")
    return float(acc.mean()), float(acc.std()), int(order[(acc.size - 1) // 2])


@dataclass
class ExperimentReport:
    regime: str
    train_region: str
    test_region: str
    months: list
    runs: list
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        self.mean_accuracy, self.std_accuracy, self.median_run_index = aggregate(r.accuracy for r in self.runs)

    def to_dict(self) -> dict:
        median = self.runs[self.median_run_index]
        return {
            "regime": self.regime,
            "feature_kind": REGIME_KINDS[self.regime],
            "train_region": self.train_region,
            "test_region": self.test_region,
            "months": list(self.months),
            "n_runs": len(self.runs),
            "mean_accuracy": self.mean_accuracy,
            "std_accuracy": self.std_accuracy,
            "median_run_index": self.median_run_index,
            "median_run_confusion": median.confusion,
            "median_run_per_crop": median.per_crop,
            "runs": [r.to_dict() for r in self.runs],
            "config": self.config,
            "reference_accuracy": REFERENCE_ACCURACY,
        }


SUMMARY_COLUMNS = ["regime", "feature_kind", "train_region", "test_region", "months", "n_runs",
                   "mean_accuracy", "std_accuracy", "median_accuracy"]


def write_summary_csv(reports, stream):
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(SUMMARY_COLUMNS)
    for r in reports:
        w.writerow([r.regime, REGIME_KINDS[r.regime], r.train_region, r.test_region,
                    "+".join(str(m) for m in r.months), len(r.runs), f"{r.mean_accuracy:.6f}",
                    f"{r.std_accuracy:.6f}", f"{r.runs[r.median_run_index].accuracy:.6f}"])


# ---------------------------------------------------------------------------
# runs


def _run_seeds(master_seed, n_runs):
    if n_runs < 1:
        raise ConfigError("n_runs must be >= 1")
    return [int(master_seed) + i for i in range(n_runs)]


def _split_sides(data: RegionData, split_cfg: SplitConfig, seed: int):
    split = grid_split(data.lon, data.lat, split_cfg.cell_size_deg, split_cfg.train_frac, seed)
    train = split.is_train(data.lon, data.lat)
    return train, ~train


def _require_both_classes(labels, what, months):
    if labels.size == 0 or labels.all() or not labels.any():
        raise RunError(f"{what}: only one class present for months {sorted(months)}")


def local_models(data: RegionData, kind: str, months=(7, 8, 9), n_runs: int = 11, master_seed: int = 0,
                 forest_cfg: ForestConfig = ForestConfig(), split_cfg: SplitConfig = SplitConfig(),
                 workers: int = 1) -> list:
    """One forest per run, trained on the training side of that run's split."""
    months = check_months(months)
    d = data.in_months(months)
    out = []
    for seed in _run_seeds(master_seed, n_runs):
        train, _ = _split_sides(d, split_cfg, seed)
        _require_both_classes(d.is_maize[train], f"{data.name} training split (seed {seed})", months)
        out.append(train_forest(d.features(kind)[train], d.is_maize[train], replace(forest_cfg, seed=seed), kind,
                                workers=workers))
    return out


def _config_echo(kind, months, n_runs, master_seed, forest_cfg, split_cfg, extra=None):
    cfg = {"feature_kind": kind, "months": sorted(months), "n_runs": n_runs, "master_seed": master_seed,
           "forest": forest_cfg.to_dict(), "split": {"cell_size_deg": split_cfg.cell_size_deg,
                                                     "train_frac": split_cfg.train_frac},
           "class_weighting": "none", "transfer_evaluation": "target test split"}
    cfg.update(extra or {})
    return cfg


def run_local(data: RegionData, kind: str, months=(7, 8, 9), n_runs: int = 11, master_seed: int = 0,
              forest_cfg: ForestConfig = ForestConfig(), split_cfg: SplitConfig = SplitConfig(),
              models=None, workers: int = 1, extra_config=None) -> ExperimentReport:
    """Train and test within one region over ``n_runs`` seeded grid splits."""
    months = check_months(months)
    d = data.in_months(months)
    if models is None:
        models = local_models(data, kind, months, n_runs, master_seed, forest_cfg, split_cfg, workers)
    runs = []
    for seed, model in zip(_run_seeds(master_seed, n_runs), models):
        train, test = _split_sides(d, split_cfg, seed)
        pred = predict(model, d.features(kind)[test])
        runs.append(compute_metrics(pred, d.is_maize[test], d.crop[test], int(train.sum()), seed))
    regime = "gedi_local" if kind == "RH11" else "s2_local"
    return ExperimentReport(regime, data.name, data.name, sorted(months), runs,
                            _config_echo(kind, months, n_runs, master_seed, forest_cfg, split_cfg, extra_config))


def run_transfer(source: RegionData, target: RegionData, kind: str, months=(7, 8, 9), n_runs: int = 11,
                 master_seed: int = 0, forest_cfg: ForestConfig = ForestConfig(),
                 split_cfg: SplitConfig = SplitConfig(), models=None, workers: int = 1,
                 extra_config=None) -> ExperimentReport:
    """Score source-region models on the target region's test cells.

    ``models`` may be a single pre-trained :class:`Forest` (used for every
    run) or one forest per run; by default the source local models are trained.
    """
    months = check_months(months)
    if isinstance(models, Forest):
        models = [models] * n_runs
    if models is None:
        models = local_models(source, kind, months, n_runs, master_seed, forest_cfg, split_cfg, workers)
    for m in models:
        if m.feature_kind != kind:
            raise ConfigError(f"model feature kind {m.feature_kind} does not match {kind}")
    t = target.in_months(months)
    runs = []
    for seed, model in zip(_run_seeds(master_seed, n_runs), models):
        _, test = _split_sides(t, split_cfg, seed)
        pred = predict(model, t.features(kind)[test])
        runs.append(compute_metrics(pred, t.is_maize[test], t.crop[test], 0, seed))
    regime = "gedi_transfer" if kind == "RH11" else "s2_transfer"
    return ExperimentReport(regime, source.name, target.name, sorted(months), runs,
                            _config_echo(kind, months, n_runs, master_seed, forest_cfg, split_cfg, extra_config))


def run_gedi_s2_transfer(source: RegionData, target: RegionData, months=(7, 8, 9), n_runs: int = 11,
                         master_seed: int = 0, forest_cfg: ForestConfig = ForestConfig(),
                         split_cfg: SplitConfig = SplitConfig(), gedi_models=None, workers: int = 1,
                         extra_config=None, return_models: bool = False):
    """Lidar-supervised optical model for a region without labels.

    Stage 1 predicts maize at the target's training-side shots with a source
    RH-11 model; stage 2 trains a HARM-20 forest on those hard predictions.
    Target labels are only read when scoring the test side.
    """
    months = check_months(months)
    if isinstance(gedi_models, Forest):
        gedi_models = [gedi_models] * n_runs
    if gedi_models is None:
        gedi_models = local_models(source, "RH11", months, n_runs, master_seed, forest_cfg, split_cfg, workers)
    truth_view = target.in_months(months)
    unlabeled = truth_view.features_only()
    runs, stage2 = [], []
    for seed, gedi in zip(_run_seeds(master_seed, n_runs), gedi_models):
        if gedi.feature_kind != "RH11":
            raise ConfigError("stage-1 model must use RH11 features")
        train, test = _split_sides(unlabeled, split_cfg, seed)
        train_view = unlabeled.take(train)
        assert train_view.is_maize is None and train_view.crop is None
        pseudo = predict(gedi, train_view.rh).astype(bool)
        _require_both_classes(pseudo, f"{target.name} pseudo-labels (seed {seed})", months)
        model = train_forest(train_view.s2, pseudo, replace(forest_cfg, seed=seed), "HARM20", workers=workers)
        stage2.append(model)
        # evaluator: the only place target truth is read
        pred = predict(model, truth_view.s2[test])
        m = compute_metrics(pred, truth_view.is_maize[test], truth_view.crop[test], int(train.sum()), seed)
        m.extra["pseudo_label_accuracy"] = float((pseudo == truth_view.is_maize[train]).mean())
        runs.append(m)
    report = ExperimentReport("gedi_s2_transfer", source.name, target.name, sorted(months), runs,
                              _config_echo("HARM20", months, n_runs, master_seed, forest_cfg, split_cfg,
                                           extra_config))
    return (report, stage2) if return_models else report


def run_regime(regime: str, regions: dict, train_region: str, test_region: str | None = None, months=(7, 8, 9),
               n_runs: int = 11, master_seed: int = 0, forest_cfg: ForestConfig = ForestConfig(),
               split_cfg: SplitConfig = SplitConfig(), workers: int = 1, extra_config=None) -> ExperimentReport:
    """Dispatch one of the five regimes by name."""
    if regime not in REGIME_KINDS:
        raise ConfigError(f"unknown regime {regime!r}; choose from {sorted(REGIME_KINDS)}")
    kind = REGIME_KINDS[regime]
    kw = dict(months=months, n_runs=n_runs, master_seed=master_seed, forest_cfg=forest_cfg,
              split_cfg=split_cfg, workers=workers, extra_config=extra_config)
    if train_region not in regions:
        raise ConfigError(f"unknown region {train_region!r}")
    if regime in LOCAL_REGIMES:
        if test_region not in (None, train_region):
            raise ConfigError(f"{regime} trains and tests in the same region")
        return run_local(regions[train_region], kind, **kw)
    if test_region is None or test_region not in regions:
        raise ConfigError(f"{regime} needs a test_region among {sorted(regions)}")
    if test_region == train_region:
        raise ConfigError(f"{regime} needs distinct train and test regions")
    if regime == "gedi_s2_transfer":
        return run_gedi_s2_transfer(regions[train_region], regions[test_region], **kw)
    return run_transfer(regions[train_region], regions[test_region], kind, **kw)
