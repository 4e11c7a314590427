"""Acceptance criteria; each test prints one ``ACCEPTANCE <n> PASS|FAIL`` line."""
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from gqoed import criteria as cr
from gqoed import validation as va
from gqoed.config import example1_defaults, example2_defaults
from gqoed.experiments import run_experiment


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\nACCEPTANCE {n} {'PASS' if ok else 'FAIL'}: {detail}")
        return ok
    return emit


def test_1_quadratic_variance_closed_form(report):
    t0 = time.perf_counter()
    err = va.quad_variance_mc_error(seed=0, n_samples=10**6)
    dt = time.perf_counter() - t0
    ok = err <= 0.01 and dt < 10
    assert report(1, ok, f"relative error {err:.2e} (tol 1e-2), {dt:.2f} s (limit 10 s)")


def test_2_nested_monte_carlo(report, ex1):
    t0 = time.perf_counter()
    designs = va._random_designs(ex1.problem.d, 5, seed=0)
    z = va.nested_mc_zscores(ex1, designs, seed=0, n_outer=10**4)
    dt = time.perf_counter() - t0
    ok = max(abs(v) for v in z) <= 3 and dt < 120
    assert report(2, ok, f"z-scores {np.round(z, 2).tolist()} (|z| <= 3), {dt:.1f} s (limit 120 s)")


def test_3_estimator_consistency_and_counts(report, ex1, ex1_gd):
    P = ex1.problem
    half = 0.5 * cr.hz_tilde_trace_sq(P, ex1_gd)
    pre = cr.precompute_svd(P, P.d, seed=0)
    worst = 0.0
    zmax = 0.0
    for w in va._random_designs(P.d, 5, seed=1):
        design = P.design(w)
        ref = cr.gq_dense_oracle(P, design, ex1_gd)
        sdec = cr.gq_spectral(P, design, ex1_gd, max(design.size, 1)).value + half
        svd = cr.gq_svd(P, design, ex1_gd, pre).value + half
        worst = max(worst, abs(sdec - ref) / abs(ref), abs(svd - ref) / abs(ref))
        est = cr.gq_randomized(P, design, ex1_gd, 200, seed=0)
        zmax = max(zmax, abs(est.value - ref) / est.stderr)
    counts = va.operation_counts(ex1, seed=0)
    counts.update({f"tracer_{k}": v for k, v in va.tracer_solve_counts(va.tracer_instance(), 0).items()})
    bad = {k: v for k, v in counts.items() if v[0] != v[1]}
    ok = worst <= 1e-7 and zmax <= 3 and not bad
    assert report(3, ok, f"full-rank rel err {worst:.1e} (tol 1e-7), randomized max |z| {zmax:.2f} "
                         f"(tol 3), count mismatches {bad or 'none'}")


def test_4_spectral_and_woodbury_identities(report):
    rng = np.random.default_rng(4)
    p1 = max(va.spectral_identity_error(rng) for _ in range(20))
    p2 = max(va.woodbury_errors(rng)[0] for _ in range(20))
    ok = p1 <= 1e-10 and p2 <= 1e-10
    assert report(4, ok, f"spectral identity {p1:.1e}, Woodbury {p2:.1e} (tol 1e-10, 20 instances each)")


def test_5_tracer_derivatives(report, tracer):
    g, sym, hfd = va.tracer_derivative_errors(tracer, seed=5)
    ok = g < 1e-4 and sym <= 1e-8 and hfd <= 1e-3
    assert report(5, ok, f"gradient FD {g:.1e} (<1e-4), Hessian symmetry {sym:.1e} (1e-8), "
                         f"Hessian FD {hfd:.1e} (1e-3)")


def test_6_map_stationarity(report, ex1):
    err = va.map_stationarity(ex1, seed=6, count=5)
    assert report(6, err <= 1e-7, f"max relative gradient norm at MAP {err:.1e} (tol 1e-7)")


@pytest.mark.slow
def test_7_example1_goal_spread(report):
    cfg = example1_defaults(posterior_samples=0, random_designs=20)
    art = run_experiment(cfg)
    ks = cfg.design_sizes
    sd = {m: {r["k"]: np.sqrt(r["variance"]) for r in art.rows(m)} for m in ("gq", "aopt")}
    rand = {k: np.median([np.sqrt(r["variance"]) for r in art.rows("random") if r["k"] == k]) for k in ks}
    beats_a = sum(sd["gq"][k] <= sd["aopt"][k] for k in ks) / len(ks)
    beats_r = all(sd["gq"][k] <= rand[k] for k in ks)
    ok = beats_a >= 0.8 and beats_r
    assert report(7, ok, f"G_q <= A-opt for {beats_a:.0%} of k (need 80%), "
                         f"<= random median for every k: {beats_r}")


@pytest.mark.slow
def test_8_example2_cv_ordering(report):
    cfg = example2_defaults(posterior_samples=500)
    art = run_experiment(cfg)
    ks = cfg.design_sizes
    med = {m: {k: np.median([r["cv"] for r in art.rows(m) if r["k"] == k]) for k in ks}
           for m in ("gq", "gell", "aopt")}
    chained = [med["gq"][k] <= med["gell"][k] <= med["aopt"][k] for k in ks]
    frac = sum(chained) / len(ks)
    n_exp = len({r["expansion"] for r in art.rows("gq")})
    ok = frac >= 0.7 and n_exp == 5
    assert report(8, ok, f"G_q <= G_ell <= A-opt median CV for {sum(chained)}/{len(ks)} k "
                         f"({frac:.0%}, need 70%) over {n_exp} expansion points")


def _csv_bodies(d: Path):
    return {p.name: p.read_bytes() for p in sorted(d.glob("*.csv"))}


@pytest.mark.slow
def test_9_reproducibility(report, tmp_path):
    cmd = [sys.executable, "-m", "gqoed", "validate", "--seed", "7"]
    a, b = (subprocess.run(cmd, capture_output=True, check=False).stdout for _ in range(2))
    same_report = a == b and len(a) > 0
    cfg = example1_defaults(posterior_samples=500, random_designs=5)
    run_experiment(cfg, tmp_path / "r1")
    run_experiment(cfg, tmp_path / "r2")
    c1, c2 = _csv_bodies(tmp_path / "r1"), _csv_bodies(tmp_path / "r2")
    same_csv = c1 == c2 and len(c1) > 0
    ok = same_report and same_csv
    assert report(9, ok, f"validate --seed 7 identical: {same_report}; "
                         f"{len(c1)} CSV files byte-identical: {same_csv}")
