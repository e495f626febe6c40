"""Train a monitor on the training fixture and compare all methods on the standard fixture.

    python scripts/run_standard_fixture.py [--epochs 500] [--out results.json]
"""

import argparse
import json
import time
from dataclasses import asdict, replace

from vpr_integrity.core import SynthConfig, generate_synthetic
from vpr_integrity.experiments import (
    Exp1Config,
    Method,
    build_query_table,
    calibrate_threshold,
    monitor_operating_point,
    run_exp1,
    run_exp2,
)
from vpr_integrity.mlp import TrainConfig, choose_alpha_default, train

STANDARD = SynthConfig(n=500, m=128, spacing=0.3, aliasing_rate=0.2, noise_sigma=0.05, seed=42)


def fmt(x):
    return "n/a" if x is None else f"{x:.3f}"


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--train-seed", type=int, default=1, help="seed of the training traverse")
    ap.add_argument("--model-seed", type=int, default=1)
    ap.add_argument("--epochs", type=int, default=500)
    ap.add_argument("--out", help="write metrics as JSON here")
    args = ap.parse_args()

    t0 = time.perf_counter()
    tr_t, tr_q = generate_synthetic(replace(STANDARD, seed=args.train_seed))
    tr_table = build_query_table(tr_t, tr_q)
    te_t, te_q = generate_synthetic(STANDARD)
    te_table = build_query_table(te_t, te_q)

    alpha = choose_alpha_default(1.0 - float(tr_table.label.mean()))
    result = train(tr_table.features, tr_table.label,
                   TrainConfig(alpha=alpha, epochs=args.epochs, seed=args.model_seed))
    model = result.model
    p_train, r_train = monitor_operating_point(model, tr_table)
    print(f"trained alpha={alpha:.2f} epochs={len(result.history)} "
          f"train precision={p_train:.3f} recall={r_train:.3f} ({time.perf_counter() - t0:.0f} s)")

    n_p = calibrate_threshold(tr_table.match_distance, "N_P", p_train, tr_table.label)
    n_r = calibrate_threshold(tr_table.match_distance, "N_R", r_train, tr_table.label)
    methods = [Method.baseline(), Method.with_threshold(n_p.threshold, "np"),
               Method.with_threshold(n_r.threshold, "nr"), Method.verified(model), Method.oracle()]

    report = {}
    print(f"{'method':<10}{'exp2 prec':>10}{'exp2 rec':>10}{'exp2 err':>10}{'exp1 done':>11}{'goal err':>10}")
    for m in methods:
        e2 = run_exp2(te_t, te_q, m, table=te_table).metrics
        e1 = run_exp1(te_t, te_q, m, Exp1Config(seed=STANDARD.seed), table=te_table).metrics
        err = e2.localization_error.mean if e2.localization_error else None
        goal = e1.goal_error.mean if e1.goal_error else None
        print(f"{m.label:<10}{fmt(e2.precision):>10}{fmt(e2.recall):>10}{fmt(err):>10}"
              f"{fmt(e1.mission_completion):>11}{fmt(goal):>10}")
        report[m.label] = {"exp1": asdict(e1), "exp2": asdict(e2)}
    if args.out:
        with open(args.out, "w") as fh:
            json.dump({"alpha": alpha, "methods": report}, fh, indent=2)


if __name__ == "__main__":
    main()
