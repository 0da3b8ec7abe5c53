"""
Command-line experiment runner.

Every command reads an optional JSON run config (``--config``); flags
override values from the file. All randomness derives from the ``seed`` key.

    precipnet simulate --out runs/demo --n-records 20000
    precipnet train --out runs/demo --max-epochs 50
    precipnet retrieve --bundle runs/demo/models/dpr_ocean \\
        --input runs/demo/splits/dpr_ocean_test.bin --out runs/demo/retrieval
    precipnet evaluate --pred runs/demo/retrieval/retrievals.csv \\
        --truth runs/demo/splits/dpr_ocean_test.bin --trim 97.5 --out runs/demo/eval
    precipnet gradcheck
"""
import argparse
import copy
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import gradcheck, nn
from . import pipeline as pl
from .data import (PrecipLabel, RadarSource, SurfaceClass, load_database,
                   save_database, split_database)
from .errors import AlignmentError, ConfigError, GradCheckFailure, PrecipNetError
from .evaluation import (Grid, confusion, estimation_metrics, write_grid_csv,
                         write_metrics, zonal_mean)
from .synthetic import SyntheticConfig, generate_synthetic

log = logging.getLogger("precipnet")

DEFAULT_CONFIG = {
    "experiment": "default",
    "seed": 0,
    "out": "runs/default",
    "data_dir": None,
    "format": "binary",
    "sources": ["dpr", "cpr"],
    "synthetic": {"n_records": 100_000},
    "source_overrides": {"cpr": {"snow_dist": [2.0, 0.1]}},
    "split": [0.7, 0.15, 0.15],
    "surfaces": None,
    "suite": {},
    "grid_res": 0.1,
    "occ_threshold": 0.01,
    "trim": None,
    "band_width": 5.0,
}


def load_run_config(path=None):
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if path is not None:
        try:
            user = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        unknown = set(user) - set(cfg)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        for key, value in user.items():
            if isinstance(cfg[key], dict) and isinstance(value, dict):
                cfg[key].update(value)
            else:
                cfg[key] = value
    return cfg


def _override(cfg, args, *keys):
    for key in keys:
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _ext(fmt):
    return ".csv" if fmt == "csv" else ".bin"


def _label_counts(db):
    return {PrecipLabel(v).name.lower(): int(np.sum(db.label == v))
            for v in (PrecipLabel.NONE, PrecipLabel.RAIN, PrecipLabel.SNOW)}


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


###############################################################################
# simulate
###############################################################################


def synthetic_config_for(cfg, source):
    settings = dict(cfg["synthetic"])
    settings.update(cfg["source_overrides"].get(source, {}))
    settings["source"] = source
    settings["seed"] = int(cfg["seed"]) + int(RadarSource[source.upper()])
    return SyntheticConfig.from_dict(settings)


def cmd_simulate(cfg):
    out = Path(cfg["out"])
    data_dir = Path(cfg["data_dir"]) if cfg["data_dir"] else out / "data"
    data_dir.mkdir(parents=True, exist_ok=True)
    manifest = {"experiment": cfg["experiment"], "databases": [], "sources": {}}
    for source in cfg["sources"]:
        syn = synthetic_config_for(cfg, source)
        db = generate_synthetic(syn)
        manifest["sources"][source] = {"config": syn.to_dict(), "n_records": len(db),
                                       "label_counts": _label_counts(db)}
        for surface, part in sorted(db.stratify().items()):
            name = f"{source}_{surface.name.lower()}{_ext(cfg['format'])}"
            save_database(part, data_dir / name, cfg["format"])
            manifest["databases"].append({
                "file": name, "source": source, "surface": surface.name.lower(),
                "n_records": len(part), "label_counts": _label_counts(part),
                "sha256": _sha256(data_dir / name)})
            log.info("wrote %s (%d records)", name, len(part))
    _write_json(data_dir / "manifest.json", manifest)
    return manifest


###############################################################################
# train
###############################################################################


def suite_config_from(cfg):
    suite = pl.SuiteConfig.from_dict(cfg["suite"])
    suite.seed = int(cfg["seed"])
    return suite


def cmd_train(cfg):
    out = Path(cfg["out"])
    data_dir = Path(cfg["data_dir"]) if cfg["data_dir"] else out / "data"
    manifest_path = data_dir / "manifest.json"
    if not manifest_path.exists():
        raise ConfigError(f"no database manifest at {manifest_path}; run simulate first")
    entries = json.loads(manifest_path.read_text())["databases"]
    if cfg["surfaces"]:
        entries = [e for e in entries if e["surface"] in cfg["surfaces"]]
    suite_cfg = suite_config_from(cfg)
    models, splits = out / "models", out / "splits"
    splits.mkdir(parents=True, exist_ok=True)
    manifest = {"experiment": cfg["experiment"], "suite_config": suite_cfg.to_dict(),
                "suites": []}
    for entry in entries:
        name = f"{entry['source']}_{entry['surface']}"
        db = load_database(data_dir / entry["file"])
        train, val, test = split_database(db, tuple(cfg["split"]), seed=int(cfg["seed"]))
        for part, tag in ((train, "train"), (val, "val"), (test, "test")):
            save_database(part, splits / f"{name}_{tag}.bin", "binary")
        log.info("training %s on %d/%d/%d records", name, len(train), len(val), len(test))
        suite, histories = pl.train_suite(train, val, suite_cfg, test_db=test,
                                          source=RadarSource[entry["source"].upper()],
                                          surface=SurfaceClass[entry["surface"].upper()])
        bundle = models / name
        pl.save_suite(suite, bundle)
        for role, hist in histories.items():
            nn.write_history(bundle / f"history_{role}.csv", hist)
        manifest["suites"].append({
            "name": name, "bundle": str(bundle.relative_to(out)),
            "rain_estimator": suite.rain_estimator is not None,
            "snow_estimator": suite.snow_estimator is not None,
            "cdf_maps": sorted(p.name.lower() for p in suite.cdf_maps),
            "epochs": {role: len(h) for role, h in histories.items()},
            "n_train": len(train), "n_val": len(val), "n_test": len(test),
            "checksums": {p.name: _sha256(p) for p in sorted(bundle.iterdir())},
        })
    _write_json(models / "manifest.json", manifest)
    return manifest


###############################################################################
# retrieve
###############################################################################


def cmd_retrieve(cfg, bundle, input_path, fuse_bundle=None, debias=None, output=None):
    out = Path(output) if output else Path(cfg["out"]) / "retrievals.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    db = load_database(input_path)
    suite = pl.load_suite(bundle)
    result = pl.retrieve_database(suite, db)
    scale = pl.ZonalScale.from_json(debias) if debias else None
    if fuse_bundle is None:
        if scale is not None:
            result["rate"] = pl.apply_zonal_scale(scale, result["lat"], result["rate"],
                                                  result["label"], scale.phase)
        pl.write_retrievals_csv(out, result)
        return {"output": str(out), "n": len(db)}
    other = pl.retrieve_database(pl.load_suite(fuse_bundle), db)
    dpr, cpr = result, other
    if RadarSource(suite.source) == RadarSource.CPR:
        dpr, cpr = other, result
    fused = pl.fuse_results(dpr, cpr)
    if scale is not None:
        fused["rate"] = pl.apply_zonal_scale(scale, fused["lat"], fused["rate"],
                                             fused["label"], scale.phase)
    pl.write_fused_csv(out, fused)
    return {"output": str(out), "n": len(db),
            "n_mixed": int(np.sum(fused["label"] == PrecipLabel.MIXED))}


###############################################################################
# evaluate
###############################################################################


def _check_alignment(pred, truth):
    if len(pred["label"]) != len(truth):
        raise AlignmentError(
            f"{len(pred['label'])} retrievals but {len(truth)} truth records")
    bad = np.flatnonzero((pred["lat"] != truth.lat) | (pred["lon"] != truth.lon))
    if len(bad):
        raise AlignmentError(f"retrieval row {bad[0] + 1} does not match the truth "
                             "record's coordinates")


def cmd_evaluate(cfg, pred_path, truth_path, zonal_scale_out=None):
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    pred = pl.read_retrievals_csv(pred_path)
    truth = load_database(truth_path, allow_mixed_surface=True)
    _check_alignment(pred, truth)
    report = {"n_pairs": len(truth)}
    for phase in pl.PHASES:
        name = phase.name.lower()
        c = confusion(pred["label"], truth.label, phase)
        report.update({f"{name}_tp": c.tp, f"{name}_fp": c.fp, f"{name}_tn": c.tn,
                       f"{name}_fn": c.fn, f"{name}_tpr": c.tpr, f"{name}_fpr": c.fpr})
        hit = (pred["label"] == phase) & (truth.label == phase)
        if hit.any():
            m = estimation_metrics(pred["rate"][hit], truth.rate[hit], cfg["trim"])
            report.update({f"{name}_bias": m.bias, f"{name}_ubrmse": m.ubrmse,
                           f"{name}_ubmae": m.ubmae, f"{name}_n_estimated": m.n})
    if cfg["trim"] is not None:
        report["trim_percentile"] = cfg["trim"]
    grid = Grid(cfg["grid_res"], occurrence_threshold=cfg["occ_threshold"])
    grid.add(pred["lat"], pred["lon"], pred["label"], pred["rate"])
    write_grid_csv(grid, out / "grid.csv")
    report["grid_resolution"] = cfg["grid_res"]
    report["grid_total"] = grid.total()
    report["input_total"] = float(np.sum(pred["rate"][pred["label"] != PrecipLabel.NONE]))
    report["grid_cells"] = len(grid.samples)
    with open(out / "zonal_means.csv", "w") as f:
        f.write("lat_center,rain,snow\n")
        centers, rain = zonal_mean(grid, "rain")
        _, snow = zonal_mean(grid, "snow")
        for c, r, s in zip(centers, rain, snow):
            if np.isfinite(r):
                f.write(f"{c!r},{r!r},{s!r}\n")
    if zonal_scale_out:
        active = Grid(cfg["grid_res"], occurrence_threshold=cfg["occ_threshold"])
        active.add(truth.lat, truth.lon, truth.label, truth.rate)
        scale = pl.fit_zonal_scale(grid, active, cfg["band_width"], "snow")
        scale.to_json(zonal_scale_out)
        report["zonal_scale"] = str(zonal_scale_out)
    write_metrics(report, out / "metrics.json", out / "metrics.txt")
    return report


###############################################################################
# gradcheck
###############################################################################


def cmd_gradcheck(cfg, n_nets=20, inject_fault=False):
    corrupt = gradcheck.double_first_entry if inject_fault else None
    cases = gradcheck.run_matrix(n_nets, seed=int(cfg["seed"]), corrupt=corrupt)
    for case in cases:
        print(f"{'PASS' if case.passed else 'FAIL'} {case.max_rel_error:.3e} "
              f"({case.n_parameters} params) {case.name}")
    worst = max(c.max_rel_error for c in cases)
    ok = all(c.passed for c in cases)
    print(f"{'PASS' if ok else 'FAIL'}: max relative error {worst:.3e} "
          f"over {len(cases)} networks (threshold {gradcheck.FAIL_THRESHOLD:g})")
    return ok


###############################################################################
# entry point
###############################################################################

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run config")
    common.add_argument("--seed", type=int, help="base seed for every random stream")
    common.add_argument("--out", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="precipnet", description=__doc__.split("\n\n")[0],
                                     parents=[common])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="write synthetic databases")
    p.add_argument("--n-records", type=int)
    p.add_argument("--format", choices=["binary", "csv"])
    p.add_argument("--sources", nargs="+", choices=["dpr", "cpr"])
    p.add_argument("--data-dir")

    p = sub.add_parser("train", parents=[common], help="train retrieval suites")
    p.add_argument("--data-dir")
    p.add_argument("--surfaces", nargs="+", choices=["ocean", "land", "coast"])
    p.add_argument("--max-epochs", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--metric", choices=["euclidean", "mahalanobis"])

    p = sub.add_parser("retrieve", parents=[common], help="run a suite over a database")
    p.add_argument("--bundle", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--fuse", metavar="BUNDLE", help="second bundle (other radar) to fuse with")
    p.add_argument("--debias-zonal", metavar="SCALE_JSON")
    p.add_argument("--output", help="CSV path (default <out>/retrievals.csv)")

    p = sub.add_parser("evaluate", parents=[common], help="score retrievals against truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--trim", type=float)
    p.add_argument("--grid-res", type=float)
    p.add_argument("--occ-threshold", type=float)
    p.add_argument("--band-width", type=float)
    p.add_argument("--zonal-scale-out", metavar="SCALE_JSON")

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference self-check")
    p.add_argument("--n-nets", type=int, default=20)
    p.add_argument("--inject-fault", action="store_true", help=argparse.SUPPRESS)
    return parser


def run(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    cfg = load_run_config(args.config)
    _override(cfg, args, "seed", "out", "data_dir", "format", "sources", "surfaces",
              "trim", "grid_res", "occ_threshold", "band_width")
    if getattr(args, "n_records", None) is not None:
        cfg["synthetic"]["n_records"] = args.n_records
    for key in ("k", "metric"):
        if getattr(args, key, None) is not None:
            cfg["suite"][key] = getattr(args, key)
    if getattr(args, "max_epochs", None) is not None:
        for role in ("detector_train", "estimator_train"):
            cfg["suite"].setdefault(role, {})["max_epochs"] = args.max_epochs

    if args.command == "simulate":
        result = cmd_simulate(cfg)
        print(json.dumps({d["file"]: d["n_records"] for d in result["databases"]}))
    elif args.command == "train":
        result = cmd_train(cfg)
        print(json.dumps({s["name"]: s["epochs"] for s in result["suites"]}))
    elif args.command == "retrieve":
        print(json.dumps(cmd_retrieve(cfg, args.bundle, args.input, args.fuse,
                                      args.debias_zonal, args.output)))
    elif args.command == "evaluate":
        report = cmd_evaluate(cfg, args.pred, args.truth, args.zonal_scale_out)
        for key in sorted(report):
            print(f"{key} = {report[key]}")
    elif args.command == "gradcheck":
        if not cmd_gradcheck(cfg, args.n_nets, args.inject_fault):
            return GradCheckFailure.exit_code
    return 0


def main(argv=None):
    try:
        return run(argv)
    except PrecipNetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
