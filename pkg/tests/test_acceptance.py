"""Acceptance suite: one reported pass/fail line per criterion.

Run with ``pytest tests/test_acceptance.py -v``; the lines are printed in
the "acceptance criteria" section of the terminal summary.
"""

import json
import math
import time
from pathlib import Path

import numpy as np

from sigpert import gs_model as gm
from sigpert import perturb as pt
from sigpert.harness.cli import main
from sigpert.tensor_sig import MultiPath, apply_linear_map, chen_mul, signature

from moments import ou_terminal_moments
from oracles import nested_trapezoid_signature

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
N_CASES = 200


def max_dev(a, b):
    return max(float(np.max(np.abs(x - y))) for x, y in zip(a.levels, b.levels))


def random_walk(rng, n, m):
    return np.vstack([np.zeros(m), np.cumsum(rng.standard_normal((n, m)) / math.sqrt(n), axis=0)])


def shuffles(u, v):
    if not u:
        return [v]
    if not v:
        return [u]
    return [(u[0],) + w for w in shuffles(u[1:], v)] + [(v[0],) + w for w in shuffles(u, v[1:])]


def cli(command, config, out, *extra):
    return main([command, "--config", str(config), "--out", str(out), *extra])


def snapshot(directory):
    return {p.name: p.read_bytes() for p in sorted(Path(directory).iterdir())}


def test_signature_oracle_equivalence(report):
    start = time.perf_counter()
    t = np.linspace(0.0, 1.0, 10_001)
    rng = np.random.default_rng(20240610)
    paths = [np.stack([t, t**2], axis=1)]
    for _ in range(5):
        coef = rng.uniform(-1, 1, size=(3, 5))
        paths.append(np.stack([np.polyval(c, t) for c in coef], axis=1))
    worst = 0.0
    for x in paths:
        ref = nested_trapezoid_signature(x, 4)
        s = signature(MultiPath(t, x), 4)
        worst = max(worst, max(abs(s.coeff(tuple(i + 1 for i in w)) - v) for w, v in ref.items()))
    elapsed = time.perf_counter() - start
    ok = worst < 1e-6 and elapsed < 10
    report("signature oracle equivalence", ok, f"max dev {worst:.2e}, {elapsed:.1f}s")
    assert ok


def test_algebraic_property_suite(report):
    start = time.perf_counter()
    rng = np.random.default_rng(20240611)
    chen = shuffle = nat = 0.0
    for _ in range(N_CASES):
        m, n, depth = int(rng.integers(1, 4)), int(rng.integers(2, 60)), int(rng.integers(1, 5))
        x = random_walk(rng, n, m)
        k = int(rng.integers(1, n))
        whole = signature(x, depth)
        chen = max(chen, max_dev(whole, chen_mul(signature(x[: k + 1], depth), signature(x[k:], depth))))

        m2 = int(rng.integers(1, 4))
        s = signature(random_walk(rng, n, m2), 4)
        lu, lv = int(rng.integers(1, 3)), int(rng.integers(1, 3))
        u = tuple(int(i) for i in rng.integers(1, m2 + 1, size=lu))
        v = tuple(int(i) for i in rng.integers(1, m2 + 1, size=lv))
        rhs = sum(s.coeff(w) for w in shuffles(u, v))
        shuffle = max(shuffle, abs(s.coeff(u) * s.coeff(v) - rhs))

        L = rng.uniform(-1, 1, size=(int(rng.integers(1, 4)), m))
        t = np.linspace(0, 1, n + 1)
        nat = max(nat, max_dev(signature(MultiPath(t, x).map(L), depth), apply_linear_map(whole, L)))
    elapsed = time.perf_counter() - start
    ok = chen < 1e-9 and shuffle < 1e-9 and nat < 1e-10 and elapsed < 30
    report("Chen/shuffle/naturality property suite", ok,
           f"{N_CASES} cases each: chen {chen:.1e}, shuffle {shuffle:.1e}, naturality {nat:.1e}, {elapsed:.1f}s")
    assert ok


def test_term_structure_lift_identity(report):
    p = gm.GSParams(kappa=1.0, gamma=0.3, maturities=(0.25, 0.5, 1.0))
    worst = 0.0
    for seed in range(10):
        d = gm.BrownianDriver(seed, 1024, 8, p.rho)
        spot, cy = gm.simulate_gs(p, d)
        lifted = pt.lift_term_structure(signature(MultiPath.stack(spot, cy), 4), p)
        worst = max(worst, max_dev(lifted, signature(gm.futures_returns(spot, cy, p), 4)))
    ok = worst < 1e-8
    report("term-structure lift identity", ok, f"10 drivers, d=3, depth 4: max dev {worst:.1e}")
    assert ok


def test_deterministic_yield_rates(report, tmp_path):
    start = time.perf_counter()
    code = cli("converge", CONFIGS / "prop32.json", tmp_path)
    res = json.loads((tmp_path / "converge.json").read_text())
    elapsed = time.perf_counter() - start
    slopes = {n: f["slope"] for n, f in res["fits"].items()}
    ok = code == 0 and res["passed"] and res["domination"] and elapsed < 60
    ok = ok and all(abs(s - (int(n) + 1) / 2) <= 0.1 for n, s in slopes.items()) and len(slopes) == 4
    detail = ", ".join(f"n={n}: {s:.3f}" for n, s in slopes.items())
    report("deterministic yield-error rates", ok, f"{detail}; domination {res['domination']}; {elapsed:.1f}s")
    assert ok


def test_monte_carlo_signature_rates(report, tmp_path):
    # only the rates are checked; the constants in front of them are not reproduced
    start = time.perf_counter()
    code = cli("converge", CONFIGS / "thm33.json", tmp_path)
    res = json.loads((tmp_path / "converge.json").read_text())
    elapsed = time.perf_counter() - start
    hdr = res["header"]["driver"]
    budget = hdr["n_paths"] == 2000 and hdr["n_steps"] == 4096 and res["depth"] == 3 and res["p"] == 2
    slopes = {n: (f["slope"], f["slope_se"]) for n, f in res["fits"].items()}
    ok = code == 0 and budget and elapsed < 600 and len(slopes) == 4
    ok = ok and all(abs(s - (int(n) + 1) / 2) <= 0.15 for n, (s, _) in slopes.items())
    detail = ", ".join(f"n={n}: {s:.3f}±{se:.3f}" for n, (s, se) in slopes.items())
    report("Monte Carlo signature rates", ok, f"{detail}; rates only, constants not reproduced; {elapsed:.0f}s")
    assert ok


def test_expansion_residual_rate(report, tmp_path):
    start = time.perf_counter()
    code = cli("expand", CONFIGS / "expand.json", tmp_path)
    res = json.loads((tmp_path / "expansion.json").read_text())
    elapsed = time.perf_counter() - start
    fit = res["residual"]["fit"]
    deltas = [r["delta"] for r in res["residual"]["rows"]]
    budget = res["header"]["driver"]["n_paths"] == 2000 and res["header"]["driver"]["n_steps"] == 4096
    ok = code == 0 and budget and fit is not None and abs(fit["slope"] - 2.0) <= 0.2
    ok = ok and deltas == [2.0**-k for k in range(2, 8)]
    report("expansion residual rate", ok, f"slope {fit['slope']:.3f}±{fit['slope_se']:.3f}; {elapsed:.0f}s")
    assert ok


def test_expansion_term_structure(report):
    base = gm.GSParams(kappa=0.6, theta=0.05, c=0.15, gamma=0.1)
    d = gm.BrownianDriver(20240612, 1024, 400, base.rho)
    ref = pt.expansion_basis(base, d, 3)

    invariant = True
    for change in ({"gamma": 0.35}, {"kappa": 1.9}, {"theta": 0.12}):
        other = pt.expansion_basis(base.replace(**change), d, 3)
        for a, b in zip(ref.terms, other.terms):
            invariant &= (a.order, a.monomial) == (b.order, b.monomial)
            invariant &= all(np.array_equal(x, y) for x, y in zip(a.sample, b.sample))

    # regression of the simulated order-1/2 signal on E11, at three gammas
    small = base.replace(delta=0.01)
    d1 = gm.BrownianDriver(20240613, 1024, 1000, base.rho)
    b1 = pt.expansion_basis(small, d1, 1)
    e0, e11 = b1.term(0, pt.ONE).sample[1], b1.term(1, pt.GAMMA).sample[1]
    gammas = (0.1, 0.2, 0.4)
    betas, ses = [], []
    for g in gammas:
        q = small.replace(gamma=g)
        y = (pt.signature_model(q, d1, 1).levels[1] - e0) / math.sqrt(q.delta)
        bb, ss = [], []
        for i in range(q.d):
            coef, cov = np.polyfit(e11[:, i], y[:, i], 1, cov=True)
            bb.append(coef[0])
            ss.append(math.sqrt(cov[0, 0]))
        betas.append(np.array(bb))
        ses.append(np.array(ss))
    w = (gammas[2] - gammas[1]) / (gammas[2] - gammas[0])
    gap = betas[1] - (w * betas[0] + (1 - w) * betas[2])
    gap_se = np.sqrt(ses[1] ** 2 + (w * ses[0]) ** 2 + ((1 - w) * ses[2]) ** 2)
    worst_z = float(np.max(np.abs(gap) / gap_se))
    collinear = worst_z <= 3
    a = pt.order_coordinates(ref, base, 2)
    q = base.replace(kappa=2 * base.kappa, theta=base.c + (base.theta - base.c) / 2)
    b = pt.order_coordinates(ref, q, 2)
    rescale = max(float(np.max(np.abs(x - y))) for x, y in zip(a, b))
    ok = invariant and collinear and rescale < 1e-12
    report("expansion term structure", ok,
           f"bit-invariant {invariant}; gamma collinearity max z {worst_z:.2f}; order-1 rescaling dev {rescale:.1e}")
    assert ok


def test_ou_moments(report):
    p = gm.GSParams(c=0.1, theta=0.05, kappa=2.0, gamma=0.3, delta=1.0)
    times = (0.25, 0.5, 1.0)
    mean, se, var, se_var = ou_terminal_moments(p, times)
    a = p.delta * p.kappa
    ok = True
    worst = 0.0
    for i, t in enumerate(times):
        m_ref = p.theta + (p.c - p.theta) * math.exp(-a * t)
        v_ref = p.delta * p.gamma**2 * (-math.expm1(-2 * a * t)) / (2 * a)
        z = max(abs(mean[i] - m_ref) / se[i], abs(var[i] - v_ref) / se_var[i])
        worst = max(worst, z)
        ok &= z <= 3
    report("OU moment checks", ok, f"10^5 paths, t in {times}: max |z| {worst:.2f}")
    assert ok


def test_classification(report, tmp_path):
    start = time.perf_counter()
    code = cli("classify", CONFIGS / "classify.json", tmp_path)
    res = json.loads((tmp_path / "classify.json").read_text())
    elapsed = time.perf_counter() - start
    acc, abl = res["main"]["accuracy"], res["ablation"]["accuracy"]
    ablation_delta = max(c["model"].get("delta", 1.0) for c in json.loads((CONFIGS / "classify.json").read_text())["classify"]["ablation"])
    ok = code == 0 and acc >= 0.95 and abs(abl - 0.5) <= 0.10 and ablation_delta <= 0.1 and elapsed < 300
    report("signature classification", ok, f"accuracy {acc:.3f}; ablation {abl:.3f} (chance 0.5); {elapsed:.0f}s")
    assert ok


def test_reproducibility(report, tmp_path):
    cfg = tmp_path / "small.json"
    cfg.write_text(json.dumps({
        "model": {"gamma": 0.2},
        "driver": {"seed": 77, "n_steps": 256, "n_paths": 1000},
        "simulate": {"n_export": 2},
        "signature": {"depth": 3, "order": 2},
        "converge": {"experiment": "cor34", "deltas": {"first": 2, "last": 6}},
        "expand": {"depth": 2, "deltas": {"first": 2, "last": 6}, "gamma_grid": [0.1, 0.2]},
        "classify": {"classes": [{"name": "a", "model": {"gamma": 0.05}}, {"name": "b", "model": {"gamma": 0.5}}],
                     "n_markets": 30, "n_windows": 32, "window_steps": 8, "min_accuracy": 0.0},
    }))
    rng = np.random.default_rng(3)
    lines = ["date,contract_1,contract_2"] + [
        f"2021-03-{i + 1:02d},{float(a)!r},{float(b)!r}" for i, (a, b) in enumerate(30 * np.exp(np.cumsum(0.01 * rng.standard_normal((25, 2)), axis=0)))]
    (tmp_path / "curve.csv").write_text("\n".join(lines) + "\n")
    icfg = tmp_path / "ingest.json"
    icfg.write_text(json.dumps({"ingest": {"csv": "curve.csv", "window": 10, "step": 5}}))

    runs = [("simulate", cfg, "simulate.json"), ("simulate", cfg, "paths.csv"), ("signature", cfg, "signature.json"),
            ("converge", CONFIGS / "prop32.json", "converge.csv"), ("converge", cfg, "converge.json"),
            ("expand", cfg, "expansion.json"), ("classify", cfg, "classify.json"),
            ("ingest", icfg, "ingest.json"), ("ingest", icfg, "polyline.csv")]
    mismatched = []
    for i, (command, config, result) in enumerate(runs):
        first, second = tmp_path / f"r{i}a", tmp_path / f"r{i}b"
        cli(command, config, first)
        cli(command, first / result, second)
        if snapshot(first) != snapshot(second):
            mismatched.append(f"{command}/{result}")
    ok = not mismatched
    report("reproducibility from embedded header", ok,
           f"{len(runs)} result files re-run" + (f"; mismatched {mismatched}" if mismatched else ", all bit-identical"))
    assert ok
