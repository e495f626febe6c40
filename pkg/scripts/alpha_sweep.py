"""Train monitors over a range of alpha and report how the rejection rate moves.

    python scripts/alpha_sweep.py --alphas 1 3 6 21 35 [--epochs 200]
"""

import argparse
from dataclasses import replace

import numpy as np

from vpr_integrity.core import SynthConfig, generate_synthetic
from vpr_integrity.experiments import Method, build_query_table, run_exp2
from vpr_integrity.mlp import TrainConfig, predict, train

STANDARD = SynthConfig(n=500, m=128, spacing=0.3, aliasing_rate=0.2, noise_sigma=0.05, seed=42)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--alphas", type=float, nargs="+", default=[1.0, 3.0, 6.0, 21.0, 35.0])
    ap.add_argument("--epochs", type=int, default=200)
    ap.add_argument("--seed", type=int, default=1)
    args = ap.parse_args()

    tr_t, tr_q = generate_synthetic(replace(STANDARD, seed=1))
    tr_table = build_query_table(tr_t, tr_q)
    te_t, te_q = generate_synthetic(STANDARD)
    te_table = build_query_table(te_t, te_q)
    print(f"training labels: {tr_table.label.mean():.3f} in tolerance")
    print(f"{'alpha':>7}{'rejected':>10}{'exp2 prec':>11}{'exp2 rec':>10}")
    for alpha in args.alphas:
        model = train(tr_table.features, tr_table.label,
                      TrainConfig(alpha=alpha, epochs=args.epochs, seed=args.seed)).model
        rejected = int(np.sum(predict(model, te_table.features)[1] == 0))
        m = run_exp2(te_t, te_q, Method.verified(model), table=te_table).metrics
        prec = "n/a" if m.precision is None else f"{m.precision:.3f}"
        print(f"{alpha:>7.1f}{rejected:>10d}{prec:>11}{m.recall:>10.3f}")


if __name__ == "__main__":
    main()
