"""Command-line entry point.

Subcommands: ``synth``, ``ingest``, ``features``, ``train``, ``experiment``, ``map``.
Exit codes: 0 success, 2 configuration/usage error, 3 invalid input data,
4 runtime failure.
"""
from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from dataclasses import replace

import numpy as np

from . import __version__
from .artifacts import atomic_write, dump_json
from .config import RunConfig, load_config, parse_config_text
from .errors import ConfigError, GedicropError, ParseError, ValidationError
from .experiments import REGIME_KINDS, prepare_region, run_regime, write_summary_csv
from .features import extract_s2_features, rh_feature_matrix, write_feature_matrix
from .forest import deserialize_forest, predict, serialize_forest, train_forest
from .ingest import (attach_labels, drop_fractions, parse_optical_series, parse_shot_records, qc_filter,
                     read_label_raster, write_ascii_grid, write_label_raster, write_optical_series,
                     write_shot_records)
from .mapgen import load_feature_raster, map_report, predict_map, save_feature_raster

log = logging.getLogger("gedicrop")

EXIT_OK, EXIT_CONFIG, EXIT_VALIDATION, EXIT_RUNTIME = 0, 2, 3, 4


# ---------------------------------------------------------------------------
# helpers


def _out(cfg: RunConfig, *parts) -> str:
    path = os.path.join(cfg.output_dir, *parts)
    os.makedirs(os.path.dirname(path), exist_ok=True)
    return path


def _write_json(path, obj):
    atomic_write(path, lambda f: dump_json(obj, f))


def _with_context(path, fn, *args):
    try:
        return fn(*args)
    except ParseError as exc:
        raise ParseError(f"{path}: {exc}", line=None) from exc
    except ValidationError as exc:
        raise type(exc)(f"{path}: {exc}") from exc


def _region(cfg: RunConfig, name: str):
    if name not in cfg.regions:
        raise ConfigError(f"no [region {name}] section in config")
    return cfg.regions[name]


def _load_shots(rp):
    if not rp.shots:
        raise ConfigError(f"region {rp.name}: 'shots' path not set")
    with open(rp.shots, "rb") as f:
        return _with_context(rp.shots, parse_shot_records, f, rp.shots_format)


def _load_series(rp):
    if not rp.optical:
        raise ConfigError(f"region {rp.name}: 'optical' path not set")
    with open(rp.optical, "rb") as f:
        return _with_context(rp.optical, parse_optical_series, f)


def _load_raster(rp):
    if not rp.raster:
        raise ConfigError(f"region {rp.name}: 'raster' path not set")
    return _with_context(rp.raster, read_label_raster, rp.raster, rp.legend)


def _prepare(cfg: RunConfig, name: str):
    rp = _region(cfg, name)
    data, info = prepare_region(name, _load_shots(rp), _load_series(rp), _load_raster(rp), rp.maize_code,
                                cfg.max_rh100_m, cfg.dropped_orbits, cfg.harmonic, cfg.workers)
    log.info("region %s: %s", name, info)
    return data, info


def _selected_regions(cfg: RunConfig, names):
    return sorted(names) if names else sorted(cfg.regions)


# ---------------------------------------------------------------------------
# commands


def cmd_synth(cfg: RunConfig) -> dict:
    """Write the default two-region benchmark plus a ready-to-run config."""
    from . import synth

    opts = cfg.synth
    specs = synth.default_regions(n_shots=opts.get("n_shots", 3000), cell_size=opts.get("cell_size", 0.004),
                                  shift=opts.get("shift", 0.12), seed=cfg.seed)
    qc_fail = opts.get("qc_fail_frac", 0.0)
    specs = [replace(s, qc_fail_frac=qc_fail) for s in specs]
    summary = {"config": cfg.to_dict(), "regions": {}}
    region_lines = []
    for spec in specs:
        region = synth.gen_region(spec)
        base = _out(cfg, spec.name, "x")[:-1]
        atomic_write(base + "shots.csv", lambda f: write_shot_records(region.shots, f))
        atomic_write(base + "optical.ndjson", lambda f: write_optical_series(region.series, f))
        atomic_write(base + "truth.asc", lambda f: write_label_raster(region.truth, f))
        atomic_write(base + "truth.asc.legend",
                     lambda f: f.write("".join(f"{c},{n}\n" for c, n in sorted(region.truth.legend.items()))))
        fr = synth.gen_feature_raster(spec, region.truth, cfg.harmonic)
        atomic_write(base + "features.npz", lambda f: save_feature_raster(f, fr), mode="wb")
        summary["regions"][spec.name] = {
            "n_shots": spec.n_shots, "phenology_shift": spec.phenology_shift, "seed": spec.seed,
            "bbox": list(spec.bbox), "cell_size": spec.cell_size, "shape": list(spec.shape),
            "crops": {p.name: frac for p, frac in spec.crops}, "qc_fail_frac": spec.qc_fail_frac,
        }
        region_lines.append(
            f"[region {spec.name}]\nshots = {spec.name}/shots.csv\noptical = {spec.name}/optical.ndjson\n"
            f"raster = {spec.name}/truth.asc\nmaize_code = {spec.maize_code}\n"
            f"features_raster = {spec.name}/features.npz\n")
    a, b = specs[0].name, specs[1].name
    ini = (f"[run]\nregime = gedi_s2_transfer\ntrain_region = {a}\ntest_region = {b}\nmonths = 7,8,9\n"
           f"seed = 0\nn_runs = 11\noutput_dir = results\n\n" + "\n".join(region_lines) +
           f"\n# label_model comes from: gedicrop train --config benchmark.ini --region {a} --kind RH11 "
           f"--labels truth --model results/model_{a}_RH11.grf\n"
           f"[train]\nregion = {b}\nkind = HARM20\nlabels = model\nlabel_model = results/model_{a}_RH11.grf\n"
           f"model = results/model_{b}_HARM20.grf\n\n"
           f"[map]\nmodel = results/model_{b}_HARM20.grf\nfeatures = {b}/features.npz\n"
           f"cropland = {b}/truth.asc\ntruth = {b}/truth.asc\n")
    atomic_write(_out(cfg, "benchmark.ini"), lambda f: f.write(ini))
    _write_json(_out(cfg, "synth_report.json"), summary)
    return summary


def cmd_ingest(cfg: RunConfig, regions=None) -> dict:
    """Parse, QC and label shots; write cleaned shots, labels and the drop log."""
    summary = {"config": cfg.to_dict(), "regions": {}}
    for name in _selected_regions(cfg, regions):
        rp = _region(cfg, name)
        shots = _load_shots(rp)
        kept, drop_log = qc_filter(shots, cfg.max_rh100_m, cfg.dropped_orbits)
        info = {"n_input": len(shots), "n_kept": len(kept), "n_dropped": len(drop_log),
                "drop_fractions": drop_fractions(len(shots), drop_log)}
        atomic_write(_out(cfg, name, "shots_qc.csv"), lambda f: write_shot_records(kept, f))

        def write_log(f):
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["shot_id", "reason"])
            w.writerows(drop_log)
        atomic_write(_out(cfg, name, "qc_drop_log.csv"), write_log)

        if rp.raster:
            raster = _load_raster(rp)
            labeled = attach_labels(kept, raster, rp.maize_code)

            def write_labels(f):
                w = csv.writer(f, lineterminator="\n")
                w.writerow(["shot_id", "crop_code", "crop_name", "is_maize"])
                for ls in labeled:
                    w.writerow([ls.shot.shot_id, ls.crop_code, raster.legend.get(ls.crop_code, ""),
                                int(ls.is_maize)])
            atomic_write(_out(cfg, name, "labels.csv"), write_labels)
            info["n_labeled"] = len(labeled)
            info["n_maize"] = sum(ls.is_maize for ls in labeled)
        report = {"region": name, **info, "config": cfg.to_dict()}
        _write_json(_out(cfg, name, "ingest_report.json"), report)
        summary["regions"][name] = info
    return summary


def cmd_features(cfg: RunConfig, regions=None) -> dict:
    """RH-11 features for QC-passed shots and HARM-20 features for optical series."""
    summary = {"config": cfg.to_dict(), "regions": {}}
    for name in _selected_regions(cfg, regions):
        rp = _region(cfg, name)
        info = {}
        if rp.shots:
            kept, _ = qc_filter(_load_shots(rp), cfg.max_rh100_m, cfg.dropped_orbits)
            ids, X = rh_feature_matrix(kept)
            atomic_write(_out(cfg, name, "rh11.csv"), lambda f: write_feature_matrix(f, ids, X, "RH11"))
            info["n_rh11"] = len(ids)
        if rp.optical:
            ids, X, failures = extract_s2_features(_load_series(rp), cfg.harmonic, cfg.workers)
            atomic_write(_out(cfg, name, "harm20.csv"), lambda f: write_feature_matrix(f, ids, X, "HARM20"))
            info["n_harm20"] = len(ids)
            info["excluded"] = dict(sorted(failures.items()))
        _write_json(_out(cfg, name, "features_report.json"), {"region": name, **info, "config": cfg.to_dict()})
        summary["regions"][name] = {k: v for k, v in info.items() if k != "excluded"}
    return summary


def cmd_train(cfg: RunConfig) -> dict:
    """Train one forest on all samples of a region.

    ``[train] labels = truth`` uses the label raster; ``labels = model`` uses
    hard predictions of an RH11 model (``label_model``) at the region's shots.
    """
    t = cfg.train
    name = t.get("region") or cfg.train_region
    if not name:
        raise ConfigError("train needs [train] region or [run] train_region")
    kind = t.get("kind") or cfg.feature_kind or (REGIME_KINDS[cfg.regime] if cfg.regime else None)
    if kind not in ("RH11", "HARM20"):
        raise ConfigError(f"train needs kind RH11 or HARM20, got {kind!r}")
    labels = t.get("labels", "truth")
    data, info = _prepare(cfg, name)
    data = data.in_months(cfg.months)
    if labels == "truth":
        y = data.is_maize
        label_source = "truth"
    elif labels == "model":
        path = t.get("label_model")
        if not path or not os.path.exists(path):
            raise ConfigError(f"label_model not found: {path}")
        with open(path, "rb") as f:
            labeler = _with_context(path, deserialize_forest, f.read())
        if labeler.feature_kind != "RH11":
            raise ConfigError("label_model must be an RH11 forest")
        y = predict(labeler, data.rh).astype(bool)
        label_source = f"model:{os.path.basename(path)}"
    else:
        raise ConfigError(f"[train] labels must be 'truth' or 'model', got {labels!r}")
    meta = {"config": cfg.to_dict(), "region": name, "label_source": label_source, "n_samples": len(data),
            "months": list(cfg.months)}
    forest = train_forest(data.features(kind), y, replace(cfg.forest, seed=cfg.seed), kind, cfg.workers, meta)
    path = t.get("model") or _out(cfg, f"model_{name}_{kind}.grf")
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    payload = serialize_forest(forest)
    atomic_write(path, lambda f: f.write(payload), mode="wb")
    return {"model": path, "kind": kind, "n_samples": len(data), "n_maize_labels": int(np.sum(y)),
            "label_source": label_source}


def cmd_experiment(cfg: RunConfig) -> dict:
    """Run one regime and write its JSON report and summary CSV."""
    if cfg.regime is None:
        raise ConfigError("experiment needs [run] regime (or --regime)")
    if cfg.train_region is None:
        raise ConfigError("experiment needs [run] train_region")
    names = {cfg.train_region} | ({cfg.test_region} if cfg.test_region else set())
    if cfg.regime in ("s2_local", "gedi_local"):
        names = {cfg.train_region}
    regions, prep = {}, {}
    for name in sorted(names):
        regions[name], prep[name] = _prepare(cfg, name)
    report = run_regime(cfg.regime, regions, cfg.train_region,
                        None if cfg.regime.endswith("_local") else cfg.test_region, cfg.months, cfg.n_runs,
                        cfg.seed, replace(cfg.forest, seed=cfg.seed), cfg.split, cfg.workers)
    doc = report.to_dict()
    doc["resolved_config"] = cfg.to_dict()
    doc["data"] = prep
    stem = f"experiment_{report.regime}_{report.train_region}_{report.test_region}_m{''.join(map(str, report.months))}"
    _write_json(_out(cfg, stem + ".json"), doc)
    atomic_write(_out(cfg, stem + "_summary.csv"), lambda f: write_summary_csv([report], f))
    return {"report": _out(cfg, stem + ".json"), "mean_accuracy": report.mean_accuracy,
            "std_accuracy": report.std_accuracy}


def cmd_map(cfg: RunConfig) -> dict:
    """Apply a HARM20 model to a feature raster within a cropland mask."""
    m = cfg.map
    model_path = m.get("model")
    if not model_path or not os.path.exists(model_path):
        raise ConfigError(f"model file not found: {model_path}")
    with open(model_path, "rb") as f:
        forest = _with_context(model_path, deserialize_forest, f.read())
    fr_path = m.get("features")
    if not fr_path:
        raise ConfigError("[map] features not set")
    features = load_feature_raster(fr_path)
    crop_path = m.get("cropland")
    if not crop_path:
        raise ConfigError("[map] cropland not set")
    cropland = _with_context(crop_path, read_label_raster, crop_path)
    classes, confidence = predict_map(forest, features, cropland, m.get("tile", 512), cfg.workers)
    prefix = m.get("prefix", "map")
    report = {"config": cfg.to_dict(), "model": os.path.basename(model_path),
              "outputs": [f"{prefix}_pred.asc", f"{prefix}_pred.asc.legend", f"{prefix}_confidence.asc"],
              "n_cells": int(classes.cells.size),
              "n_mapped": int((classes.cells != classes.nodata).sum())}
    if m.get("truth"):
        truth = _with_context(m["truth"], read_label_raster, m["truth"])
        report["comparison"] = map_report(classes, truth)
    atomic_write(_out(cfg, f"{prefix}_pred.asc"), lambda f: write_label_raster(classes, f))
    atomic_write(_out(cfg, f"{prefix}_pred.asc.legend"),
                 lambda f: f.write("".join(f"{c},{n}\n" for c, n in sorted(classes.legend.items()))))
    conf = np.where(np.isnan(confidence), -9999.0, confidence)
    atomic_write(_out(cfg, f"{prefix}_confidence.asc"),
                 lambda f: write_ascii_grid(f, classes.header, conf, -9999.0, fmt="%.4f"))
    _write_json(_out(cfg, f"{prefix}_report.json"), report)
    return {k: v for k, v in report.items() if k != "config"}


COMMANDS = {
    "synth": cmd_synth,
    "ingest": cmd_ingest,
    "features": cmd_features,
    "train": cmd_train,
    "experiment": cmd_experiment,
    "map": cmd_map,
}


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gedicrop", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        sp = sub.add_parser(name, help=fn.__doc__.splitlines()[0])
        sp.add_argument("--config", help="run configuration file")
        sp.add_argument("--seed", type=int, help="master seed")
        sp.add_argument("--workers", type=int, help="worker count")
        sp.add_argument("--months", help="comma-separated months from 7,8,9")
        sp.add_argument("--regime", help=f"one of {', '.join(REGIME_KINDS)}")
        sp.add_argument("--output-dir", help="output directory")
        sp.add_argument("-v", "--verbose", action="store_true")
        if name == "train":
            sp.add_argument("--region", help="region to train on (overrides [train] region)")
            sp.add_argument("--kind", choices=("RH11", "HARM20"), help="feature kind")
            sp.add_argument("--labels", choices=("truth", "model"), help="label source")
            sp.add_argument("--label-model", help="RH11 model used when labels=model")
            sp.add_argument("--model", help="output model path")
    return p


def resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else parse_config_text("", os.getcwd())
    if args.seed is not None:
        cfg.seed = args.seed
    if args.workers is not None:
        cfg.workers = args.workers
    if args.months is not None:
        try:
            cfg.months = sorted(int(m) for m in args.months.split(",") if m.strip())
        except ValueError:
            raise ConfigError(f"bad --months value {args.months!r}") from None
    if args.regime is not None:
        cfg.regime = args.regime
    if args.output_dir is not None:
        cfg.output_dir = os.path.abspath(args.output_dir)
    for key in ("region", "kind", "labels", "label_model", "model"):
        value = getattr(args, key, None)
        if value is not None:
            cfg.train[key] = os.path.abspath(value) if key in ("label_model", "model") else value
    return cfg.validate()


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        result = COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValidationError as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (GedicropError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    summary = {k: v for k, v in (result or {}).items() if k != "config"}
    if summary:
        import json
        print(json.dumps(summary, indent=2, sort_keys=True, default=str))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
