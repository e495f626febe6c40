"""Acceptance gate: one check per criterion, each at its stated tolerance.

Run with ``pytest tests/test_acceptance.py`` (a PASS/FAIL line per
criterion is printed in the terminal summary) or directly with
``python tests/test_acceptance.py``.
"""

import json
import shutil
import sys
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from conftest import ACCEPTANCE, STANDARD, TRAINING  # noqa: E402
from oracles import calibrate_oracle, hoq_oracle, sweep_oracle, weighted_mse_loop  # noqa: E402
from vpr_integrity.cli import main as cli_main  # noqa: E402
from vpr_integrity.core import SynthConfig, Traverse, generate_synthetic  # noqa: E402
from vpr_integrity.experiments import (  # noqa: E402
    REFERENCE_OPERATING_POINTS,
    Exp1Config,
    Exp2Config,
    Method,
    ThresholdBaseline,
    build_query_table,
    calibrate_threshold,
    read_thresholds,
    run_exp1,
    run_exp2,
    threshold_sweep,
    write_thresholds,
)
from vpr_integrity.featurizer import CATALOGUE, extract_stats_batch  # noqa: E402
from vpr_integrity.localizer import HistoryWindow, hoq_best, hoq_localize, update_history  # noqa: E402
from vpr_integrity.mlp import TrainConfig, choose_alpha_default, init_params, loss_and_gradients, train, weighted_mse  # noqa: E402


@dataclass
class Outcome:
    ok: bool
    detail: str


def _window(dist, preds, odo, idx, d=1e9):
    h = HistoryWindow(window_d=d)
    for m, dd, w, p in zip(idx, dist, odo, preds):
        h = update_history(h, int(m), float(dd), float(w), int(p))
    return h


# -- 1 ------------------------------------------------------------------------

def check_1() -> Outcome:
    t0 = time.perf_counter()
    rng = np.random.default_rng(101)
    worst = 0.0
    for _ in range(50):
        n = int(rng.integers(1, 64))
        P = rng.integers(0, 2, size=n)
        Ph = rng.random(n)
        alpha = float(rng.uniform(1.0, 50.0))
        worst = max(worst, abs(weighted_mse(P, Ph, alpha) - weighted_mse_loop(P, Ph, alpha)))
        worst = max(worst, abs(weighted_mse(P, Ph, 1.0) - float(np.mean((P - Ph) ** 2))))
    dt = time.perf_counter() - t0
    return Outcome(worst <= 1e-12 and dt < 1.0, f"max |error| {worst:.1e} (tol 1e-12), {dt:.3f} s (limit 1 s)")


# -- 2 ------------------------------------------------------------------------

def check_2() -> Outcome:
    t0 = time.perf_counter()
    rng = np.random.default_rng(202)
    weights, biases = init_params([12, 8, 8, 8, 8, 1], rng)
    Xn = rng.normal(size=(16, 12))
    P = rng.integers(0, 2, size=16).astype(float)
    alpha, h = 6.0, 1e-5
    _, gw, gb = loss_and_gradients((weights, biases), Xn, P, alpha)
    worst, count = 0.0, 0
    for params, grads in ((weights, gw), (biases, gb)):
        for p, g in zip(params, grads):
            for i in np.ndindex(p.shape):
                old = p[i]
                p[i] = old + h
                up = loss_and_gradients((weights, biases), Xn, P, alpha)[0]
                p[i] = old - h
                down = loss_and_gradients((weights, biases), Xn, P, alpha)[0]
                p[i] = old
                fd = (up - down) / (2 * h)
                worst = max(worst, abs(fd - g[i]) / max(abs(fd), abs(g[i]), 1e-8))
                count += 1
    dt = time.perf_counter() - t0
    return Outcome(worst < 1e-4 and dt < 10.0,
                   f"{count} parameters, max relative error {worst:.1e} (tol 1e-4), {dt:.2f} s (limit 10 s)")


# -- 3 ------------------------------------------------------------------------

def _hoq_instance(rng):
    n = int(rng.integers(2, 60))
    if rng.random() < 0.5:
        steps = rng.choice([0.0, 0.25, 0.5, 1.0], size=n - 1)
    else:
        steps = rng.uniform(0.0, 1.0, size=n - 1)
    heading = np.cumsum(rng.normal(0, 0.3, size=n - 1))
    xy = np.vstack([[0.0, 0.0], np.cumsum(np.c_[steps * np.cos(heading), steps * np.sin(heading)], axis=0)])
    traverse = Traverse(np.c_[xy, np.zeros(n)], np.ones((n, 1)))
    k = int(rng.integers(1, 10))
    dist = rng.integers(0, 4, size=k) / 4.0
    preds = rng.integers(0, 2, size=k)
    odo = np.sort(rng.integers(0, 16, size=k) / 4.0)
    idx = rng.integers(0, n, size=k)
    current = float(odo[-1] + rng.integers(0, 16) / 4.0)
    return traverse, dist, preds, odo, idx, current


def check_3() -> Outcome:
    t0 = time.perf_counter()
    rng = np.random.default_rng(303)
    agree = total = ties = 0
    for _ in range(500):
        traverse, dist, preds, odo, idx, current = _hoq_instance(rng)
        h = _window(dist, preds, odo, idx)
        ties += int(np.sum(dist == dist.min()) > 1)
        for verified in (False, True):
            want = hoq_oracle(dist, preds, idx, odo, current, list(traverse.gaps), verified)
            got = hoq_localize(h, current, traverse, verified).index
            agree += got == want
            total += 1
    dt = time.perf_counter() - t0
    return Outcome(agree == total and ties > 0 and dt < 5.0,
                   f"{agree}/{total} agree with exhaustive oracle ({ties} instances with distance ties), "
                   f"{dt:.2f} s (limit 5 s)")


# -- 4 ------------------------------------------------------------------------

def check_4() -> Outcome:
    traverse, queries = generate_synthetic(SynthConfig(n=1200, m=64, aliasing_rate=0.2, seed=404))
    table = build_query_table(traverse, queries)
    plain = run_exp2(traverse, queries, Method.baseline(), table=table)
    all_ones = run_exp2(traverse, queries, Method.with_threshold(np.inf, name="verified-all-ones"), table=table)
    same = sum(a == b for a, b in zip(plain.outcomes, all_ones.outcomes))
    n = len(plain.outcomes)
    return Outcome(same == n and n >= 1000, f"{same}/{n} queries identical")


# -- 5 ------------------------------------------------------------------------

def check_5() -> Outcome:
    rng = np.random.default_rng(505)
    declined = never = 0
    for _ in range(1000):
        k = int(rng.integers(1, 20))
        dist, odo = rng.random(k), np.sort(rng.random(k) * 2)
        idx = rng.integers(0, 50, size=k)
        if hoq_best(_window(dist, np.zeros(k, int), odo, idx), verified=True) is None:
            declined += 1
        preds = rng.integers(0, 2, size=k)
        preds[rng.integers(0, k)] = 1
        if hoq_best(_window(dist, preds, odo, idx), verified=True) is not None:
            never += 1
    return Outcome(declined == 1000 and never == 1000,
                   f"all-rejected windows declined {declined}/1000; windows with an accepted entry "
                   f"localized {never}/1000")


# -- 6 ------------------------------------------------------------------------

def check_6(fixture=None) -> Outcome:
    t0 = time.perf_counter()
    traverse, queries = generate_synthetic(STANDARD) if fixture is None else fixture[:2]
    table = build_query_table(traverse, queries) if fixture is None else fixture[2]
    b2 = run_exp2(traverse, queries, Method.baseline(), table=table).metrics
    o2 = run_exp2(traverse, queries, Method.oracle(), table=table).metrics
    cfg = Exp1Config(seed=STANDARD.seed)
    b1 = run_exp1(traverse, queries, Method.baseline(), cfg, table=table).metrics
    o1 = run_exp1(traverse, queries, Method.oracle(), cfg, table=table).metrics
    dt = time.perf_counter() - t0
    ok = (o2.precision == 1.0
          and o2.localization_error.mean < b2.localization_error.mean
          and o1.mission_completion >= b1.mission_completion
          and o1.goal_error.mean <= 0.5 * b1.goal_error.mean
          and dt < 60.0)
    return Outcome(ok, (
        f"Exp2 precision {o2.precision:.3f} (baseline {b2.precision:.3f}), mean error "
        f"{o2.localization_error.mean:.3f} m vs {b2.localization_error.mean:.3f} m; Exp1 completion "
        f"{o1.mission_completion:.3f} vs {b1.mission_completion:.3f}, mean goal error "
        f"{o1.goal_error.mean:.3f} m vs {b1.goal_error.mean:.3f} m; {dt:.1f} s (limit 60 s)"))


# -- 7 ------------------------------------------------------------------------

def check_7(train_fixture=None, test_fixture=None) -> Outcome:
    t0 = time.perf_counter()
    if train_fixture is None:
        tr_t, tr_q = generate_synthetic(TRAINING)
        tr_table = build_query_table(tr_t, tr_q)
    else:
        tr_table = train_fixture[2]
    if test_fixture is None:
        te_t, te_q = generate_synthetic(STANDARD)
        te_table = build_query_table(te_t, te_q)
    else:
        te_t, te_q, te_table = test_fixture
    alpha = choose_alpha_default(1.0 - float(tr_table.label.mean()))
    model = train(tr_table.features, tr_table.label, TrainConfig(alpha=alpha, seed=1)).model
    base = run_exp2(te_t, te_q, Method.baseline(), table=te_table).metrics
    ver = run_exp2(te_t, te_q, Method.verified(model), table=te_table).metrics
    dt = time.perf_counter() - t0
    precision = ver.precision if ver.precision is not None else 0.0
    ok = precision >= base.precision + 0.01 and ver.recall >= 0.60 and dt < 600.0
    return Outcome(ok, (
        f"alpha {alpha:.2f}; verified precision {precision:.4f} vs baseline {base.precision:.4f} "
        f"(need +0.01), recall {ver.recall:.4f} (need 0.60); {dt:.0f} s (limit 600 s)"))


# -- 8 ------------------------------------------------------------------------

def check_8() -> Outcome:
    rng = np.random.default_rng(808)
    exact = total = 0
    for _ in range(100):
        n = int(rng.integers(5, 200))
        d = np.round(rng.random(n), int(rng.integers(1, 4)))   # coarse values create ties
        y = (rng.random(n) < rng.uniform(0.2, 0.9)).astype(int)
        y[0], y[1] = 0, 1
        sweep_ok = list(zip(*threshold_sweep(d, y))) == sweep_oracle(list(d), list(y))
        for kind in ("N_P", "N_R"):
            target = float(rng.uniform(0.0, 1.0))
            b = calibrate_threshold(d, kind, target, y)
            want = calibrate_oracle(list(d), list(y), kind, target)
            match = (not b.attained) if want is None else (b.threshold, b.precision, b.recall) == want
            exact += bool(match and sweep_ok)
            total += 1
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "thresholds.json"
        fixtures = [ThresholdBaseline("N_P", p, 0.0, p, r) for p, r in REFERENCE_OPERATING_POINTS.values()]
        round_trip = 0
        for f in fixtures:
            write_thresholds(path, [f], {"technique_points": REFERENCE_OPERATING_POINTS})
            back = read_thresholds(path)["N_P"]
            stored = json.loads(path.read_text())["technique_points"]
            round_trip += back == f and all(tuple(v) == REFERENCE_OPERATING_POINTS[k] for k, v in stored.items())
    return Outcome(exact == total and round_trip == len(fixtures),
                   f"{exact}/{total} calibrations equal the exhaustive sweep; "
                   f"{round_trip}/{len(fixtures)} reference operating points round-trip exactly")


# -- 9 ------------------------------------------------------------------------

def _strip_timestamps(name, data):
    if name.endswith("manifest.json"):
        doc = json.loads(data)
        doc.pop("started", None)
        return json.dumps(doc, sort_keys=True).encode()
    return data


def _snapshot(root):
    return {str(p.relative_to(root)): _strip_timestamps(p.name, p.read_bytes())
            for p in sorted(root.rglob("*")) if p.is_file() and p.suffix in (".csv", ".json")}


def check_9() -> Outcome:
    root = Path(tempfile.mkdtemp(prefix="vpr-determinism-"))
    data, model, thr = str(root / "data"), str(root / "model" / "model.vprm"), str(root / "thr.json")
    commands = [
        ["gen-synth", "--n", "200", "--m", "64", "--aliasing", "0.2", "--seed", "7", "--out", data],
        ["train", "--data", data, "--alpha", "6", "--seed", "1", "--epochs", "20", "--out", model],
        ["calibrate-thresholds", "--data", data, "--model", model, "--out", thr],
        ["verify", "--data", data, "--model", model, "--out", str(root / "verify")],
    ]
    for method in ("baseline", "np", "nr", "verified", "oracle"):
        commands.append(["simulate-exp1", "--data", data, "--method", method, "--model", model,
                         "--thresholds", thr, "--seed", "3", "--out", str(root / f"exp1-{method}")])
        commands.append(["simulate-exp2", "--data", data, "--method", method, "--model", model,
                         "--thresholds", thr, "--out", str(root / f"exp2-{method}")])
    commands.append(["metrics", "--results", str(root / "exp2-verified"), "--check",
                     "--out", str(root / "recomputed.json")])
    try:
        for argv in commands:
            if cli_main(argv) != 0:
                return Outcome(False, f"`{argv[0]}` failed")
        first = _snapshot(root)
        for argv in commands:
            cli_main(argv)
        second = _snapshot(root)
    finally:
        shutil.rmtree(root, ignore_errors=True)
    diff = sorted(k for k in first.keys() | second.keys() if first.get(k) != second.get(k))
    n_cmds = len({c[0] for c in commands})
    return Outcome(not diff and len(first) > 0,
                   f"{n_cmds} subcommands, {len(first)} CSV/JSON files compared, "
                   f"{len(diff)} differ{(': ' + ', '.join(diff[:3])) if diff else ''}")


# -- 10 -----------------------------------------------------------------------

def _vectors(rng, count):
    """Random, constant and sorted vectors with magnitudes from 1e-12 to 1e12."""
    lengths = np.unique(np.round(np.exp(np.linspace(np.log(2), np.log(4096), 40))).astype(int))
    for i in range(count):
        n = int(lengths[rng.integers(0, lengths.size)]) if i % 10 else int(rng.integers(2, 4097))
        kind = i % 5
        mags = 10.0 ** rng.uniform(-12, 12, size=n)
        signs = rng.choice([-1.0, 1.0], size=n)
        if kind == 0:
            v = signs * mags
        elif kind == 1:
            v = np.full(n, signs[0] * mags[0])
        elif kind == 2:
            v = np.sort(signs * mags)
        elif kind == 3:
            v = 10.0 ** rng.uniform(-12, 12) * rng.normal(size=n)
        else:
            v = 10.0 ** rng.uniform(-12, 12) * (1.0 + 1e-9 * rng.normal(size=n))
        yield v


def check_10(count=10_000, n_perm=100) -> Outcome:
    t0 = time.perf_counter()
    rng = np.random.default_rng(1010)
    inv = CATALOGUE.permutation_invariant_mask
    non_finite = 0
    worst = 0.0
    for v in _vectors(rng, count):
        batch = np.empty((n_perm + 1, v.size))
        batch[0] = v
        for j in range(1, n_perm + 1):
            batch[j] = v[rng.permutation(v.size)]
        S = extract_stats_batch(batch)
        non_finite += int(not np.all(np.isfinite(S)))
        worst = max(worst, float(np.max(np.abs(S[1:, inv] - S[0, inv]))))
    dt = time.perf_counter() - t0
    return Outcome(non_finite == 0 and worst <= 1e-12,
                   f"{count} vectors x {n_perm} permutations: {non_finite} with non-finite statistics, "
                   f"max invariant-statistic change {worst:.1e} (tol 1e-12), {dt:.0f} s")


# -- pytest wrappers ---------------------------------------------------------------

TITLES = {
    1: "weighted MSE correctness",
    2: "gradient fidelity",
    3: "history-of-queries oracle equivalence",
    4: "verified/unverified reduction",
    5: "decline rule",
    6: "oracle-verifier end-to-end",
    7: "trained-monitor end-to-end",
    8: "threshold calibration",
    9: "determinism",
    10: "featurizer totality",
}


def _record(number, outcome):
    ACCEPTANCE[number] = (outcome.ok, f"criterion {number} ({TITLES[number]}): "
                                      f"{'PASS' if outcome.ok else 'FAIL'} - {outcome.detail}")
    assert outcome.ok, outcome.detail


def test_criterion_1():
    _record(1, check_1())


def test_criterion_2():
    _record(2, check_2())


def test_criterion_3():
    _record(3, check_3())


def test_criterion_4():
    _record(4, check_4())


def test_criterion_5():
    _record(5, check_5())


def test_criterion_6(standard_fixture):
    _record(6, check_6(standard_fixture))


@pytest.mark.slow
def test_criterion_7(training_fixture, standard_fixture):
    _record(7, check_7(training_fixture, standard_fixture))


def test_criterion_8():
    _record(8, check_8())


def test_criterion_9():
    _record(9, check_9())


@pytest.mark.slow
def test_criterion_10():
    _record(10, check_10())


if __name__ == "__main__":
    failed = 0
    for number in TITLES:
        try:
            outcome = globals()[f"check_{number}"]()
        except Exception as exc:  # report and keep going
            outcome = Outcome(False, f"raised {type(exc).__name__}: {exc}")
        failed += not outcome.ok
        print(f"criterion {number} ({TITLES[number]}): {'PASS' if outcome.ok else 'FAIL'} - {outcome.detail}",
              flush=True)
    sys.exit(1 if failed else 0)
