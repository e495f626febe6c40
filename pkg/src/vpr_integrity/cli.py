"""Command-line entry point: ``vpr-integrity <subcommand> [flags]``.

Every subcommand accepts ``--config FILE.json`` whose keys are flag names
(dashes or underscores); flags given on the command line win. Each run
writes a ``manifest.json`` before its results. Exit codes: 0 success,
1 validation / data / missing-file error, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import hashlib
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .core import DistanceMode, SynthConfig, ToleranceConfig, generate_synthetic
from .errors import ConfigError, VprError
from .experiments import (
    Exp1Config,
    Exp2Config,
    Method,
    build_query_table,
    calibrate_threshold,
    metrics_from_results,
    monitor_operating_point,
    read_thresholds,
    run_exp1,
    run_exp2,
    write_exp1_results,
    write_exp2_results,
    write_thresholds,
)
from .featurizer import CATALOGUE_VERSION
from .io import load_dataset, load_model, save_dataset, save_model
from .matcher import DistanceMetric
from .mlp import TrainConfig, choose_alpha_default, predict, train

log = logging.getLogger("vpr_integrity")

METHODS = ("baseline", "np", "nr", "verified", "oracle")


# -- helpers ---------------------------------------------------------------

def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _config_dict(args) -> dict:
    skip = {"func", "config", "verbose"}
    out = {}
    for k, v in sorted(vars(args).items()):
        if k in skip:
            continue
        out[k] = list(v) if isinstance(v, tuple) else v
    return out


def write_manifest(path, args, argv, model_path=None) -> dict:
    """Record what was run; only ``started`` varies between identical runs."""
    doc = {
        "command": args.command,
        "argv": list(argv),
        "config": _config_dict(args),
        "seed": getattr(args, "seed", None),
        "catalogue_version": CATALOGUE_VERSION,
        "package_version": __version__,
        "model_sha256": _sha256(model_path) if model_path and Path(model_path).exists() else None,
        "started": _now(),
    }
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return doc


def _tolerance(args) -> ToleranceConfig:
    return ToleranceConfig(args.tolerance, DistanceMode(args.distance_mode))


def _require_model(args):
    if not args.model:
        raise ConfigError(f"--method {args.method} needs --model")
    if not Path(args.model).exists():
        raise FileNotFoundError(f"model file not found: {args.model} (run `train` first)")
    return load_model(args.model)


def _method(args) -> Method:
    if args.method == "baseline":
        return Method.baseline()
    if args.method == "oracle":
        return Method.oracle()
    if args.method == "verified":
        return Method.verified(_require_model(args))
    if not args.thresholds:
        raise ConfigError(f"--method {args.method} needs --thresholds (run `calibrate-thresholds` first)")
    if not Path(args.thresholds).exists():
        raise FileNotFoundError(f"thresholds file not found: {args.thresholds}")
    kind = "N_P" if args.method == "np" else "N_R"
    baselines = read_thresholds(args.thresholds)
    if kind not in baselines:
        raise ConfigError(f"{args.thresholds} has no {kind} threshold")
    return Method.with_threshold(baselines[kind].threshold, name=args.method)


def _result_header(args, method: Method) -> dict:
    header = _config_dict(args)
    header["method"] = method.label
    header["recall_denominator"] = "all post-warmup queries"
    if method.model is not None:
        header["model_sha256"] = _sha256(args.model)
    return header


# -- subcommands -----------------------------------------------------------

def cmd_gen_synth(args, argv) -> int:
    cfg = SynthConfig(n=args.n, m=args.m, spacing=args.spacing, aliasing_rate=args.aliasing,
                      noise_sigma=args.noise, seed=args.seed, alias_residual=args.alias_residual,
                      min_alias_offset=args.min_alias_offset)
    out = Path(args.out)
    write_manifest(out / "manifest.json", args, argv)
    traverse, queries = generate_synthetic(cfg)
    save_dataset(traverse, queries, out)
    log.info("wrote %d references and %d queries (%d aliased) to %s",
             len(traverse), len(queries), queries.truth.n_aliased, out)
    return 0


def cmd_train(args, argv) -> int:
    traverse, queries = load_dataset(args.data)
    table = build_query_table(traverse, queries, args.metric, _tolerance(args))
    labels = table.label
    alpha = args.alpha
    if alpha is None:
        alpha = choose_alpha_default(1.0 - float(labels.mean()))
        log.info("alpha %.4g chosen from label balance", alpha)
    cfg = TrainConfig(alpha=alpha, batch_size=args.batch_size, learning_rate=args.lr,
                      dropout=args.dropout, epochs=args.epochs, seed=args.seed,
                      optimizer=args.optimizer, threshold=args.threshold,
                      plateau_epochs=args.plateau_epochs)
    out = Path(args.out)
    write_manifest(out.with_name(out.name + ".manifest.json"), args, argv)
    result = train(table.features, labels, cfg)
    save_model(result.model, out)
    with open(out.parent / "train_log.csv", "w", newline="") as fh:
        header = {"alpha": alpha, "seed": args.seed, "n_samples": int(labels.size),
                  "in_tolerance_fraction": float(labels.mean())}
        fh.write("# " + json.dumps(header, sort_keys=True) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "loss", "train_precision", "train_recall"])
        for e in result.history:
            w.writerow([e.epoch, repr(e.loss), repr(e.precision), repr(e.recall)])
    log.info("trained %d epochs, final loss %.6g", len(result.history), result.final_loss)
    return 0


def cmd_calibrate(args, argv) -> int:
    traverse, queries = load_dataset(args.data)
    table = build_query_table(traverse, queries, args.metric, _tolerance(args))
    extra = {}
    if args.model:
        model = _require_model(args)
        tp, tr = monitor_operating_point(model, table)
        extra["monitor_operating_point"] = {"precision": tp, "recall": tr}
    else:
        tp, tr = args.target_precision, args.target_recall
    if tp is None or tr is None:
        raise ConfigError("give --model or both --target-precision and --target-recall")
    out = Path(args.out)
    write_manifest(out.with_name(out.name + ".manifest.json"), args, argv, args.model)
    baselines = [calibrate_threshold(table.match_distance, "N_P", tp, table.label),
                 calibrate_threshold(table.match_distance, "N_R", tr, table.label)]
    write_thresholds(out, baselines, extra)
    return 0


def cmd_verify(args, argv) -> int:
    model = _require_model(args)
    traverse, queries = load_dataset(args.data)
    table = build_query_table(traverse, queries, args.metric, _tolerance(args))
    out = Path(args.out)
    write_manifest(out / "manifest.json", args, argv, args.model)
    raw, binary = predict(model, table.features)
    with open(out / "verify.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["query", "best_index", "match_distance", "score", "prediction", "accepted_x",
                    "accepted_y", "accepted_theta", "label"])
        for k in range(len(table)):
            pose = traverse.poses[table.best_index[k]] if binary[k] else None
            cells = ["", "", ""] if pose is None else [repr(float(v)) for v in pose]
            w.writerow([k + 1, int(table.best_index[k]) + 1, repr(float(table.match_distance[k])),
                        repr(float(raw[k])), int(binary[k]), *cells, int(table.label[k])])
    return 0


def cmd_exp1(args, argv) -> int:
    method = _method(args)
    traverse, queries = load_dataset(args.data)
    cfg = Exp1Config(n_starts=args.n_starts, goal_distances=tuple(args.goals),
                     assessment_tolerance=args.assessment_tolerance,
                     arrival_margin=args.arrival_margin, seed=args.seed)
    out = Path(args.out)
    write_manifest(out / "manifest.json", args, argv, args.model)
    result = run_exp1(traverse, queries, method, cfg, _tolerance(args), args.metric)
    write_exp1_results(result, out, _result_header(args, method))
    _print_summary(result.metrics)
    return 0


def cmd_exp2(args, argv) -> int:
    method = _method(args)
    traverse, queries = load_dataset(args.data)
    cfg = Exp2Config(window_d=args.window, warmup=args.warmup)
    out = Path(args.out)
    write_manifest(out / "manifest.json", args, argv, args.model)
    result = run_exp2(traverse, queries, method, cfg, _tolerance(args), args.metric)
    write_exp2_results(result, out, _result_header(args, method))
    _print_summary(result.metrics)
    return 0


def cmd_metrics(args, argv) -> int:
    report = metrics_from_results(args.results)
    text = json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    stored = Path(args.results) / "metrics.json"
    if args.check and stored.exists():
        _compare(json.loads(stored.read_text())["metrics"], report.to_dict())
    return 0


def _compare(a, b, path="metrics", tol=1e-9):
    if isinstance(a, dict) and isinstance(b, dict):
        for k in set(a) | set(b):
            _compare(a.get(k), b.get(k), f"{path}.{k}", tol)
    elif isinstance(a, (int, float)) and isinstance(b, (int, float)) and not isinstance(a, bool):
        if abs(a - b) > tol:
            raise VprError(f"{path}: stored {a} != recomputed {b}")
    elif a != b:
        raise VprError(f"{path}: stored {a!r} != recomputed {b!r}")


def _print_summary(m) -> None:
    def pct(x):
        return "n/a" if x is None else f"{100 * x:.2f}%"
    parts = [f"method={m.method}", f"precision={pct(m.precision)}", f"recall={pct(m.recall)}"]
    if m.localization_error is not None:
        parts.append(f"mean_error={m.localization_error.mean:.3f}m")
    if m.n_missions:
        parts.append(f"completion={pct(m.mission_completion)}")
        parts.append(f"mean_goal_error={m.goal_error.mean:.3f}m")
    print(" ".join(parts))


# -- parser ----------------------------------------------------------------

def _common(p, out_help):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help=out_help)
    p.add_argument("--config", help="JSON file of flag defaults; command-line flags win")


def _matching(p):
    p.add_argument("--data", help="dataset directory (reference/ and query/)")
    p.add_argument("--tolerance", type=float, default=0.5, help="in-tolerance radius in meters")
    p.add_argument("--distance-mode", choices=[m.value for m in DistanceMode], default="along-track")
    p.add_argument("--metric", choices=[m.value for m in DistanceMetric], default="euclidean")


def _method_flags(p):
    p.add_argument("--method", choices=METHODS, default="baseline")
    p.add_argument("--model", help="trained monitor (.vprm) for --method verified")
    p.add_argument("--thresholds", help="thresholds JSON for --method np / nr")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vpr-integrity",
                                     description="VPR integrity monitoring and localization experiments")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synth", help="generate a synthetic reference/query dataset")
    _common(p, "output dataset directory")
    p.add_argument("--n", type=int, default=500)
    p.add_argument("--m", type=int, default=128)
    p.add_argument("--spacing", type=float, default=0.3)
    p.add_argument("--aliasing", type=float, default=0.2)
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--alias-residual", type=float, default=0.8)
    p.add_argument("--min-alias-offset", type=int, default=5)
    p.set_defaults(func=cmd_gen_synth)

    p = sub.add_parser("train", help="train the integrity monitor")
    _common(p, "output model file (.vprm); train_log.csv goes beside it")
    _matching(p)
    p.add_argument("--alpha", type=float, default=None,
                   help="out-of-tolerance loss weight (default: chosen from label balance)")
    p.add_argument("--epochs", type=int, default=500)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--lr", type=float, default=1e-5)
    p.add_argument("--dropout", type=float, default=0.1)
    p.add_argument("--optimizer", choices=["adam", "sgd"], default="adam")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--plateau-epochs", type=int, default=50)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("calibrate-thresholds", help="calibrate naive N_P / N_R distance thresholds")
    _common(p, "output thresholds JSON")
    _matching(p)
    p.add_argument("--model", help="monitor whose training precision/recall are the targets")
    p.add_argument("--target-precision", type=float)
    p.add_argument("--target-recall", type=float)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("verify", help="single-query verification of every query")
    _common(p, "output directory")
    _matching(p)
    p.add_argument("--model")
    p.set_defaults(func=cmd_verify, method="verified")

    p = sub.add_parser("simulate-exp1", help="goal-zone missions with single-query localization")
    _common(p, "output directory")
    _matching(p)
    _method_flags(p)
    p.add_argument("--n-starts", type=int, default=50)
    p.add_argument("--goals", type=float, nargs="+", default=[5.0, 10.0, 25.0, 50.0])
    p.add_argument("--assessment-tolerance", type=float, default=0.5)
    p.add_argument("--arrival-margin", type=float, default=0.10)
    p.set_defaults(func=cmd_exp1)

    p = sub.add_parser("simulate-exp2", help="continuous history-of-queries localization")
    _common(p, "output directory")
    _matching(p)
    _method_flags(p)
    p.add_argument("--window", type=float, default=1.5, help="history length in meters")
    p.add_argument("--warmup", type=float, default=None, help="warmup distance (default: --window)")
    p.set_defaults(func=cmd_exp2)

    p = sub.add_parser("metrics", help="recompute metrics from simulation CSVs")
    p.add_argument("--results", help="simulation output directory")
    p.add_argument("--out", help="write JSON here instead of stdout")
    p.add_argument("--check", action="store_true", help="fail if metrics.json disagrees (> 1e-9)")
    p.add_argument("--config", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_metrics)
    return parser


def _apply_config(parser, args, argv):
    """Reparse with the config file's values as defaults so that flags win."""
    if not getattr(args, "config", None):
        return args
    try:
        doc = json.loads(Path(args.config).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"config {args.config} must hold a JSON object")
    sub = parser._subparsers._group_actions[0].choices[args.command]
    known = {a.dest for a in sub._actions}
    defaults = {}
    for key, value in doc.items():
        dest = key.lstrip("-").replace("-", "_")
        if dest not in known or dest in ("help", "config"):
            raise ConfigError(f"config {args.config}: unknown option {key!r}")
        defaults[dest] = value
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


REQUIRED = {
    "gen-synth": ("out",),
    "train": ("data", "out"),
    "calibrate-thresholds": ("data", "out"),
    "verify": ("data", "model", "out"),
    "simulate-exp1": ("data", "out"),
    "simulate-exp2": ("data", "out"),
    "metrics": ("results",),
}


def _check_required(parser, args):
    missing = [f"--{d.replace('_', '-')}" for d in REQUIRED[args.command] if getattr(args, d) is None]
    if missing:
        sub = parser._subparsers._group_actions[0].choices[args.command]
        sub.error("the following arguments are required: " + ", ".join(missing))


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args = _apply_config(parser, args, argv)
    except ConfigError as exc:
        print(f"vpr-integrity {args.command}: error: {exc}", file=sys.stderr)
        return 1
    _check_required(parser, args)
    try:
        return args.func(args, argv)
    except (VprError, OSError, ValueError) as exc:
        print(f"vpr-integrity {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
