"""Acceptance criteria 1-9.

Each test records a PASS/FAIL line through ``criteria_log.verdict``; the lines
are collected in the "acceptance criteria" section of the pytest summary.
Criteria 4, 5, 6 and 8 share two full default reproductions (seed 0, hidden
sizes 1-10, 15 restarts), which take several minutes each.
"""
import time

import numpy as np
import pytest

from brbpnn.data import CANONICAL_SIZE, check_partition, fold_plan, load_dataset
from brbpnn.evaluate import reproduce
from brbpnn.network import NetworkSpec, error_jacobian, init_params, predict, unflatten
from brbpnn.trainer import TrainConfig, train
from criteria_log import verdict
from oracles import fd_error_jacobian

# FE table, transcribed independently of the package copy
TABLE = """
1 10 41.8 174.1584 1722.719 393.4 25.64973
2 15 35.6 171.1613 1529.699 263.8 25.57726
3 20 33.8 165.5169 1370.545 199.6 25.56427
4 25 32.4 160.1255 1240.153 161.6 25.59890
5 30 31.2 155.0284 1129.391 136.6 25.60988
6 35 30.6 150.3356 1034.944 119.0 25.55115
7 40 30.2 145.7655 950.3074 106.2 25.55958
8 45 30.0 141.2537 872.9422 96.6 25.61840
9 50 30.2 136.8172 801.4117 89.2 25.65779
10 55 30.6 132.2554 733.2346 83.4 25.62680
11 60 31.4 127.5051 667.3803 78.8 25.53845
12 65 32.8 122.5176 602.7001 75.4 25.66338
13 70 34.4 117.0706 537.6730 72.6 25.51802
14 75 36.8 110.9777 471.2534 70.6 25.49363
15 80 40.2 104.0514 402.4569 69.4 25.69447
16 85 44.8 95.87533 330.1474 68.4 25.44845
17 90 51.8 86.18540 254.5306 68.2 25.49894
"""


@pytest.fixture(scope="session")
def full(tmp_path_factory):
    t0 = time.perf_counter()
    res = reproduce(tmp_path_factory.mktemp("run1"), seed=0)
    return res, time.perf_counter() - t0


def test_criterion_1_dataset_fidelity():
    t0 = time.perf_counter()
    records = load_dataset()
    want = [[float(x) for x in line.split()] for line in TABLE.strip().splitlines()]
    got = [[r.case, r.theta_p, r.u_max, r.fn_max, r.ft_max, r.u_det, r.alpha_det] for r in records]
    elapsed = time.perf_counter() - t0
    mismatches = sum(a != b for gr, wr in zip(got, want) for a, b in zip(gr[1:], wr[1:]))
    ok = len(got) == CANONICAL_SIZE and [g[0] for g in got] == [w[0] for w in want] and mismatches == 0 and elapsed < 1
    verdict(1, "dataset fidelity", ok, f"{len(got)} rows x 6 columns, {mismatches} cell mismatches, {elapsed * 1e3:.1f} ms")


def test_criterion_2_jacobian_against_finite_differences():
    specs = ["1-1-1", "1-2-2", "1-5-3"]
    rng = np.random.default_rng(20240)
    t0 = time.perf_counter()
    worst, checked = 0.0, 0
    for i in range(100):
        hidden = "linear" if i % 2 == 0 else "tanh"
        spec = NetworkSpec.parse(specs[i % 3], hidden=hidden)
        flat = rng.uniform(-1.0, 1.0, spec.param_count)
        u = rng.uniform(0.0, 1.0, size=(4, 1))
        J = error_jacobian(unflatten(spec, flat), u)
        ref = np.array(fd_error_jacobian(spec.layer_sizes, 1, spec.activations, flat, u))
        mask = np.abs(ref) > 1e-8
        rel = np.abs(J[mask] - ref[mask]) / np.abs(ref[mask])
        worst = max(worst, float(rel.max(initial=0.0)))
        checked += int(mask.sum())
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-6 and elapsed < 10
    verdict(2, "Jacobian vs central differences", ok,
            f"100 draws, {checked} entries, worst relative error {worst:.2e}, {elapsed:.1f} s")


def _lm_error(seed, min_gradient):
    rng = np.random.default_rng(seed)
    r, m = int(rng.integers(1, 4)), int(rng.integers(1, 4))
    n = int(rng.integers(r + 2, 11))
    u = rng.uniform(-1, 1, size=(n, r))
    t = rng.normal(size=(n, m))
    cfg = TrainConfig(bayesian=False, max_epochs=5, seed=seed, min_gradient=min_gradient)
    params, rep = train(NetworkSpec(r, (m,)), u, t, cfg)
    x = np.hstack([u, np.ones((n, 1))])
    theta = np.linalg.lstsq(x, t, rcond=None)[0]
    want = np.concatenate([theta[:-1].T.ravel(), theta[-1]])
    got = np.concatenate([params.weights[0].ravel(), params.biases[0]])
    return float(np.max(np.abs(got - want))), rep.final.epoch


def test_criterion_3_lm_reaches_normal_equations():
    # The gradient stop (|J^T e| < 1e-7) is a tolerance on the gradient, not
    # on the weights, and can end a run before 1e-8 weight accuracy; it is
    # switched off here and the default-tolerance error reported alongside.
    runs = [_lm_error(seed, 0.0) for seed in range(50)]
    worst = max(e for e, _ in runs)
    max_epochs = max(n for _, n in runs)
    default_worst = max(_lm_error(seed, TrainConfig().min_gradient)[0] for seed in range(50))
    ok = worst <= 1e-8 and max_epochs <= 5
    verdict(3, "LM oracle equivalence", ok,
            f"50 instances, max |w - w*| {worst:.2e}, at most {max_epochs} epochs "
            f"(with the default gradient stop: {default_worst:.1e})")


def test_criterion_4_evidence_updates(full):
    res, _ = full
    n_epochs, worst, gamma_ok = 0, 0.0, True
    for kind, m in res.models.items():
        n_out = m.sweep.config.model.n_outputs
        for run in m.sweep.runs:
            if not run.ok:
                continue
            K = m.sweep.config.spec(run.hidden).param_count
            Q = fold_plan()[run.split].n_train * n_out
            tr = run.trace
            gamma_ok &= bool(np.all((tr[:, 1] >= 0) & (tr[:, 1] <= K)))
            # epoch 0 is the (mu=0, nu=1) starting point, not an update
            _, gamma, ew, ed, mu, nu = tr[1:].T
            mu_chk = gamma / (2.0 * ew)
            nu_chk = (Q - gamma) / (2.0 * ed)
            worst = max(worst, float(np.max(np.abs(mu_chk - mu) / mu, initial=0.0)),
                        float(np.max(np.abs(nu_chk - nu) / nu, initial=0.0)))
            n_epochs += len(tr)
    ok = gamma_ok and worst <= 1e-12
    verdict(4, "evidence-update sanity", ok,
            f"{n_epochs} logged epochs, gamma in [0, K]: {gamma_ok}, worst mu/nu relative mismatch {worst:.1e}")


def test_criterion_5_model_selection(full):
    res, elapsed = full
    want = {"I": {4, 5, 6}, "II": {2, 3}}
    parts, ok = [], elapsed < 600
    for kind, m in res.models.items():
        c = m.sweep.curve
        drop = c[1] > c[2]
        sel = m.sweep.selected in want[kind]
        ok &= drop and sel
        parts.append(f"model {kind}: MSE(1)={c[1]:.3e} MSE(2)={c[2]:.3e} selected {m.sweep.selected}")
    verdict(5, "model selection", ok, "; ".join(parts) + f"; {elapsed:.0f} s for the full reproduction")


def test_criterion_6_relative_error_bands(full):
    res, _ = full
    rows = res.summary()
    parts = [f"{r['output']} avg {r['avg']:.2f}% max {r['max']:.2f}% {'ok' if r['pass'] else 'OUT'}" for r in rows]
    verdict(6, "relative-error bands", all(r["pass"] for r in rows), "; ".join(parts))


def test_criterion_7_affine_collapse():
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(200):
        r = int(rng.integers(1, 4))
        sizes = tuple(int(s) for s in rng.integers(1, 7, size=int(rng.integers(1, 5))))
        spec = NetworkSpec(r, sizes)
        params = init_params(spec, rng, scale=1.0)
        x, y = rng.normal(size=(2, r))
        a = rng.uniform(-2, 2)
        lhs = predict(params, (a * x + (1 - a) * y)[None])[0]
        rhs = a * predict(params, x[None])[0] + (1 - a) * predict(params, y[None])[0]
        worst = max(worst, float(np.max(np.abs(lhs - rhs))))
    verdict(7, "affine-collapse property", worst <= 1e-10, f"200 linear networks, worst deviation {worst:.1e}")


def test_criterion_8_determinism(full, tmp_path_factory):
    res, _ = full
    again = reproduce(tmp_path_factory.mktemp("run2"), seed=0)
    files = sorted(p.relative_to(res.out_dir) for p in res.out_dir.rglob("*") if p.is_file())
    files2 = sorted(p.relative_to(again.out_dir) for p in again.out_dir.rglob("*") if p.is_file())
    differing = [str(f) for f in files if (res.out_dir / f).read_bytes() != (again.out_dir / f).read_bytes()]
    ok = files == files2 and not differing and res.digest == again.digest
    verdict(8, "determinism", ok, f"{len(files)} files, {len(differing)} differ, digest {res.digest[:16]}")


def test_criterion_9_fold_plan():
    plan = fold_plan()
    check_partition(plan)
    tests = sorted(c for s in plan for c in s.test)
    sizes = [s.n_train for s in plan]
    complements = all(set(s.train) == set(range(1, 18)) - set(s.test) for s in plan)
    ok = tests == list(range(1, 18)) and complements and sizes == [13, 14, 13, 14, 14]
    verdict(9, "fold plan", ok, f"test folds cover 1..17 once, train sizes {sizes}")
