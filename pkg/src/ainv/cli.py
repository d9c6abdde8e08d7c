"""Command-line harness.

Every command writes ``config.json`` (the fully materialized configuration)
and ``manifest.json`` (sha256 of every produced file) into ``--out``.  On
failure a single JSON line ``{"error": ..., "message": ..., "command": ...}``
goes to stderr and the exit code is nonzero.
"""

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import config as C
from . import io
from .adapt import (
    STREAM_BASE,
    STREAM_BASE_VAL,
    STREAM_TEST,
    AdaptError,
    BaseModel,
    adaptive_solve,
    fit_base_model,
    generate_base_dataset,
    sample_rng,
)
from .analysis import efficiency_factor, emit_report, fit_scaling, run_nonadaptive_baseline
from .fields import SineCoeffs, eval_sine_basis, project_sine_basis
from .nn import Dataset, NetConfig, TrainingError
from .scatter import GMRESError, Measurement, forward_solve

log = logging.getLogger("ainv")

STREAMS = {"base": STREAM_BASE, "val": STREAM_BASE_VAL, "test": STREAM_TEST}
LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


class CLIError(RuntimeError):
    pass


def _setup_logging():
    level = os.environ.get("AINV_LOG", "error").lower()
    if level not in LOG_LEVELS:
        raise CLIError(f"AINV_LOG must be one of {sorted(LOG_LEVELS)}, got {level!r}")
    logging.basicConfig(level=LOG_LEVELS[level], stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def _prepare(args):
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["out"] = args.out
    cfg = C.load_config(args.config, overrides)
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    io.write_json(out / "config.json", cfg)
    return cfg, C.build(cfg), out


def _finish(out, files, command):
    files = [Path(f) for f in files] + [out / "config.json"]
    io.write_manifest(out, files, {"command": command})


# commands


def cmd_gen_data(args):
    cfg, b, out = _prepare(args)
    split = cfg["data"]["split"]
    n = cfg["data"]["n_samples"]
    data = generate_base_dataset(b.prior, n, b.scatter, b.seed, b.grid, b.order, STREAMS[split],
                                 args.threads)
    path = out / "dataset.ainv"
    io.save_dataset(path, data)
    pts = out / "points.json"
    io.write_json(pts, {"split": split, "points": [io.point_to_dict(p) for p in data.meta]})
    _finish(out, [path, pts], "gen-data")


def _read_dataset(path):
    if not Path(path).exists():
        raise CLIError(f"dataset {path} does not exist")
    return io.load_dataset(path)


def cmd_train_base(args):
    cfg, b, out = _prepare(args)
    data = _read_dataset(args.dataset)
    if args.val is not None:
        val = _read_dataset(args.val)
    else:
        n_val = max(1, int(round(b.adapt.val_fraction * len(data))))
        val = generate_base_dataset(b.prior, n_val, b.scatter, b.seed, b.grid, b.order,
                                    STREAM_BASE_VAL, args.threads)
    tcfg = C.train_config(cfg, seed=int(sample_rng(b.seed, 5).integers(2**31)))
    bm = fit_base_model(Dataset(data.X, data.Y), Dataset(val.X, val.Y), b.net, b.seed, tcfg=tcfg)
    files = _save_model(out, bm)
    io.write_history(out / "history.csv", bm.history)
    _finish(out, files + [out / "history.csv"], "train-base")


def _save_model(out, bm: BaseModel):
    io.save_weights(out / "weights.ainv", bm.weights)
    io.save_dataset(out / "val.ainv", bm.val)
    model = {
        "net": bm.net_cfg.to_dict(),
        "stats": {"mean": bm.stats[0].tolist(), "std": bm.stats[1].tolist()},
        "target": {"mean": bm.target[0].tolist(), "scale": bm.target[1]},
        "checksum": bm.weights.checksum(),
    }
    io.write_json(out / "model.json", model)
    return [out / "weights.ainv", out / "val.ainv", out / "model.json"]


def _load_model(model_dir, train_set: Dataset):
    d = Path(model_dir)
    if not (d / "model.json").exists():
        raise CLIError(f"{d} holds no trained model (model.json missing)")
    meta = io.read_json(d / "model.json")
    net = NetConfig(**meta["net"])
    w = io.load_weights(d / "weights.ainv")
    w.check(net)
    stats = (np.array(meta["stats"]["mean"]), np.array(meta["stats"]["std"]))
    target = (np.array(meta["target"]["mean"]), float(meta["target"]["scale"]))
    val = io.load_dataset(d / "val.ainv")
    return BaseModel(w, net, stats, train_set, val, target=target)


def cmd_adapt(args):
    cfg, b, out = _prepare(args)
    train_set = _read_dataset(args.base_dataset)
    bm = _load_model(args.model, train_set)
    if bm.net_cfg.out_dim != b.order**2:
        raise CLIError(f"model predicts {bm.net_cfg.out_dim} coefficients, config order {b.order}")
    truth = None
    if args.measurement:
        m = io.load_measurement(args.measurement)
    elif args.truth_field:
        f = io.load_field(args.truth_field)
        truth = project_sine_basis(f, b.order)
        m = forward_solve(f, b.scatter, rng=sample_rng(b.seed, STREAM_TEST, args.instance))
    elif args.test:
        test = _read_dataset(args.test)
        if not 0 <= args.instance < len(test):
            raise CLIError(f"instance {args.instance} outside test set of size {len(test)}")
        x = test.X[args.instance]
        m = Measurement(x[0] + 1j * x[1])
        truth = SineCoeffs(b.order, test.Y[args.instance])
    else:
        raise CLIError("give one of --measurement, --truth-field or --test")

    pred, records = adaptive_solve(m, bm, b.prior, b.adapt, b.scatter, b.grid, seed=b.seed,
                                   instance=args.instance, truth=truth, threads=args.threads)
    files = write_run_dir(out, records, pred, b.grid)
    files.append(out / "measurement.ainv")
    io.save_measurement(out / "measurement.ainv", m)
    if truth is not None:
        io.save_coeffs(out / "truth.ainv", truth)
        files.append(out / "truth.ainv")
    _finish(out, files, "adapt")


ROUND_FIELDS = ["round", "relative_error", "measurement_error", "n_adapt", "n_base", "epochs", "weights"]


def write_run_dir(out, records, pred, grid, weights=None):
    out = Path(out)
    files = []
    io.write_csv(out / "rounds.csv", [r.row() for r in records], ROUND_FIELDS)
    files.append(out / "rounds.csv")
    for r in records:
        files += io.write_heatmap(out / f"round_{r.round:02d}", eval_sine_basis(r.prediction, grid).values)
        io.save_coeffs(out / f"round_{r.round:02d}.ainv", r.prediction)
        files.append(out / f"round_{r.round:02d}.ainv")
        if r.projection is not None:
            p = out / f"round_{r.round:02d}_projection.json"
            io.write_json(p, io.point_to_dict(r.projection))
            files.append(p)
    io.save_coeffs(out / "prediction.ainv", pred)
    files.append(out / "prediction.ainv")
    return files


def cmd_baseline(args):
    cfg, b, out = _prepare(args)
    n_test = cfg["baseline"]["n_test"]
    test = generate_base_dataset(b.prior, n_test, b.scatter, b.seed, b.grid, b.order, STREAM_TEST,
                                 args.threads)
    tcfg = C.train_config(cfg, seed=int(sample_rng(b.seed, 5).integers(2**31)))
    res = run_nonadaptive_baseline(b.prior, cfg["baseline"]["sizes"], test, b.net, b.scatter, b.grid,
                                   b.order, b.seed, val_fraction=b.adapt.val_fraction,
                                   threads=args.threads, tcfg=tcfg)
    rows = [{"n_train": n, "relative_error": repr(e)} for n, e, _ in res]
    io.write_csv(out / "baseline.csv", rows, ["n_train", "relative_error"])
    files = [out / "baseline.csv"]
    if len(res) >= 2:
        fit = fit_scaling([(n, e) for n, e, _ in res])
        io.write_json(out / "fit.json", fit.to_dict())
        files.append(out / "fit.json")
    _finish(out, files, "baseline")


def cmd_analyze(args):
    cfg, b, out = _prepare(args)
    from .adapt import RoundRecord

    records = {}
    for i, d in enumerate(args.run_dirs):
        rows = io.read_csv(Path(d) / "rounds.csv")
        records[i] = [
            RoundRecord(int(r["round"]), None,
                        relative_error=float(r["relative_error"]) if r["relative_error"] else None,
                        measurement_error=float(r["measurement_error"]) if r["measurement_error"] else None)
            for r in rows
        ]
    baseline, fit, reports = [], None, []
    if args.baseline:
        baseline = [(int(r["n_train"]), float(r["relative_error"]))
                    for r in io.read_csv(Path(args.baseline) / "baseline.csv")]
        if len({n for n, _ in baseline}) >= 2:
            fit = fit_scaling(baseline)
    a = b.adapt
    if fit is not None and fit.a < 0:
        by_round = {}
        for recs in records.values():
            for r in recs:
                if r.relative_error is not None:
                    by_round.setdefault(r.round, []).append(r.relative_error)
        for t, errs in sorted(by_round.items()):
            reports.append((t, efficiency_factor(fit, (a.n_base_model, t, a.n_adapt), float(np.mean(errs)))))
    files = emit_report(records, fit, reports, out, a.n_base_model, a.n_adapt, baseline)
    _finish(out, files, "analyze")


def cmd_forward(args):
    cfg, b, out = _prepare(args)
    path = Path(args.field)
    if path.suffix == ".csv":
        from .fields import FieldGrid, Grid

        vals = np.loadtxt(path, delimiter=",", ndmin=2)
        f = FieldGrid(Grid(vals.shape[0]), vals)
    else:
        f = io.load_field(path)
    m = forward_solve(f, b.scatter, rng=sample_rng(b.seed, STREAM_TEST))
    io.save_measurement(out / "measurement.ainv", m)
    np.savetxt(out / "measurement.csv", np.column_stack([m.data.real.ravel(), m.data.imag.ravel()]),
               delimiter=",", fmt="%.17g", header="real,imag", comments="")
    _finish(out, [out / "measurement.ainv", out / "measurement.csv"], "forward")


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train-base": cmd_train_base,
    "adapt": cmd_adapt,
    "baseline": cmd_baseline,
    "analyze": cmd_analyze,
    "forward": cmd_forward,
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="JSON run configuration")
    common.add_argument("--seed", type=int, default=None, help="master seed (overrides the config)")
    common.add_argument("--out", default=None, help="output directory (overrides the config)")
    common.add_argument("--threads", type=int, default=1, help="worker processes for sample generation")

    p = argparse.ArgumentParser(prog="ainv", description="adaptive sampling for inverse scattering")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("gen-data", parents=[common], help="sample a prior dataset")
    s = sub.add_parser("train-base", parents=[common], help="train a base model")
    s.add_argument("dataset")
    s.add_argument("--val", default=None, help="validation dataset (default: sampled)")
    s = sub.add_parser("adapt", parents=[common], help="adaptive refinement of one instance")
    s.add_argument("model", help="train-base output directory")
    s.add_argument("base_dataset")
    g = s.add_mutually_exclusive_group()
    g.add_argument("--measurement", default=None)
    g.add_argument("--truth-field", default=None)
    g.add_argument("--test", default=None, help="test dataset; pick a pair with --instance")
    s.add_argument("--instance", type=int, default=0)
    sub.add_parser("baseline", parents=[common], help="non-adaptive scaling sweep")
    s = sub.add_parser("analyze", parents=[common], help="fits, efficiency and plots")
    s.add_argument("run_dirs", nargs="*")
    s.add_argument("--baseline", default=None, help="baseline output directory")
    s = sub.add_parser("forward", parents=[common], help="one forward solve")
    s.add_argument("field", help="field container (.ainv) or CSV matrix")
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _setup_logging()
        if args.threads < 1:
            raise CLIError("--threads must be at least 1")
        COMMANDS[args.command](args)
    except (C.ConfigError, CLIError, io.FormatError, AdaptError, GMRESError, TrainingError,
            ValueError, OSError) as e:
        line = {"error": type(e).__name__, "message": str(e), "command": args.command}
        print(json.dumps(line), file=sys.stderr)
        return 2 if isinstance(e, C.ConfigError) else 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
