"""Acceptance criteria 1-10, each at its stated tolerance."""
import csv
import json
import time

import numpy as np
import pytest

from pbrigidity import flexibility as fx
from pbrigidity import phi_analysis as pa
from pbrigidity import rigidity_probe as rp
from pbrigidity.cli import main
from pbrigidity.expression import parse_expression, sample_expression
from pbrigidity.field_core import poisson_bracket, read_field

from conftest import bump_pair, cos_pair, gaussian_field, identity_pair, record

BF = "2*x*bump(0.5,0.5,0.4)"
BG = "y*bump(0.5,0.5,0.4)"
PAIR_GRID = "0,1,0,1,513,513,plane"
DELTAS = [0.01, 0.02, 0.04, 0.08]
# (n, k=1) choices admissible at the deltas above; eps = measured max oscillation
ESTIMATES = ["6,1,auto", "8,1,auto", "10,1,auto", "12,1,auto"]


def _bracket_error(n):
    F, G = cos_pair(n)
    X, _ = F.grid.mesh()
    t = time.perf_counter()
    b = poisson_bracket(F, G)
    dt = time.perf_counter() - t
    return float(np.abs(b.values - 2 * np.sin(2 * X)).max()), dt


def test_c01_bracket_calculus():
    e1, dt = _bracket_error(257)
    e2, _ = _bracket_error(513)
    ok = e1 <= 5e-3 and e1 / e2 >= 3.5 and dt < 1.0
    record(1, ok, f"C0 error {e1:.3e} at 257^2, {e2:.3e} at 513^2, ratio {e1 / e2:.2f}, "
                  f"{dt * 1e3:.1f} ms")
    assert ok


def test_c02_area_formula():
    F, G = cos_pair(512)
    t = time.perf_counter()
    rep = pa.area_formula_check(F, G, value_grid=512)
    dt = time.perf_counter() - t
    ok = abs(rep.lhs - 4) / 4 <= 0.02 and rep.rel_err <= 0.02 and dt < 30
    record(2, ok, f"lhs {rep.lhs:.6f} rhs {rep.rhs:.6f} rel_err {rep.rel_err:.2e}, {dt:.2f} s")
    assert ok


def test_c03_kn_approximation():
    F, G = identity_pair(129)
    ns = [4, 8, 16, 32]
    seq = pa.kn_norm_sequence(F, G, 1, 0.5, ns)
    err = max(abs(v - ((n - 2) / n) ** 2) for n, v in zip(ns, seq.values))
    mono = all(a <= b for a, b in zip(seq.values, seq.values[1:]))
    ok = err <= 0.02 and mono
    record(3, ok, f"values {[round(v, 6) for v in seq.values]}, max abs error {err:.2e}, "
                  f"nondecreasing {mono}")
    assert ok


def test_c04_oscillation_decay():
    F, G = cos_pair(1025)
    osc = {}
    for k in (2, 4, 8):
        dec = pa.decompose(F, G, 4, k)
        osc[k], _ = pa.oscillation_stats(F, G, 1, dec.valid_components, dec.bracket)
    r1, r2 = osc[2] / osc[4], osc[4] / osc[8]
    ok = osc[2] > osc[4] > osc[8] and r1 >= 1.6 and r2 >= 1.6
    record(4, ok, f"max_osc k=2,4,8: {osc[2]:.4f}, {osc[4]:.4f}, {osc[8]:.4f}; "
                  f"ratios {r1:.2f}, {r2:.2f}")
    assert ok


def test_c05_local_surjectivity():
    n, k = 4, 4
    delta = 0.3 / (2 * k * n)
    F, G = cos_pair(257)
    comps = pa.decompose(F, G, n, k).valid_components
    regions = {}
    worst, checks = 1.0, 0
    for trial in range(100):
        ss = np.random.SeedSequence([2024, trial])
        sF, sG, sC = (int(s.generate_state(1)[0]) for s in ss.spawn(3))
        Fb = rp.perturb(F, rp.PerturbationSpec("smooth_noise", delta, sF))
        Gb = rp.perturb(G, rp.PerturbationSpec("smooth_noise", delta, sG))
        picks = np.random.default_rng(sC).choice(len(comps), size=8, replace=False)
        for i in picks:
            c = comps[i]
            if i not in regions:
                regions[i] = pa.surjectivity_region(F, G, c, delta)
            rep = pa.local_surjectivity_check(F, G, Fb, Gb, c, delta, region=regions[i])
            worst = min(worst, rep.covered_fraction)
            checks += 1
    ok = worst == 1.0
    record(5, ok, f"min covered fraction {worst} over 100 trials ({checks} sheet checks, "
                  f"delta {delta:.5f})")
    assert ok


@pytest.fixture(scope="module")
def probe_runs(tmp_path_factory):
    runs = {}
    for p in (1, 2):
        out = tmp_path_factory.mktemp(f"probe_p{p}")
        args = ["probe", "--f", BF, "--g", BG, "--grid", PAIR_GRID, "--margin", "2",
                "--p", str(p), "--deltas", ",".join(map(str, DELTAS)), "--trials", "20",
                "--seed", "7", "--out", str(out)]
        for e in ESTIMATES:
            args += ["--estimate", e]
        status = main(args)
        runs[p] = (status, out)
    return runs


def test_c06_main_estimate(probe_runs):
    violations, total, lines = 0, 0, []
    ok = True
    for p, (status, out) in probe_runs.items():
        sweep = json.loads((out / "sweep.json").read_text())
        certified = {}
        for row in sweep["per_delta"]:
            b = row["bound_from_main_estimate"] or 0.0
            s = row["sheetwise_bound"] or 0.0
            certified[row["delta"]] = max(b, s)
            lines.append(f"p={p} d={row['delta']}: min {row['min_observed_lp'] ** p:.4f} "
                         f">= bound {b:.4f} / sheetwise {s:.4f}")
        with open(out / "sweep.csv") as fh:
            for r in csv.DictReader(fh):
                total += 1
                if float(r["achieved_lp"]) ** p < certified[float(r["delta"])]:
                    violations += 1
        ok &= status == 0 and sweep["violations"] == 0
    ok &= violations == 0 and total >= 200
    record(6, ok, f"{violations} violations in {total} perturbations; " + "; ".join(lines))
    assert ok


def _independent_errors(F, G, Ft, Gt):
    c0 = float(np.abs(Ft.values - F.values).max())
    d = np.abs(Gt.values - G.values)
    means = 0.25 * (d[:-1, :-1] + d[1:, :-1] + d[:-1, 1:] + d[1:, 1:])
    return c0, float(means.sum() * F.grid.cell_area)


def test_c07_flexibility():
    F = gaussian_field(513, 4)
    t = time.perf_counter()
    Ft, Gt, cert = fx.commuting_pair(F, F, 0.1, 1)
    dt = time.perf_counter() - t
    c0, lq = _independent_errors(F, F, Ft, Gt)
    exact = float(np.abs(poisson_bracket(Ft, Gt).values).max())

    # the same tiles, resampled on the doubled grid
    F2 = gaussian_field(1025, 8)
    region = fx.support_region(F.grid, F, F)
    region2 = fx.NodeBox(2 * region.i0, 2 * region.i1, 2 * region.j0, 2 * region.j1)
    mesh2 = fx.refine_mesh(fx.mesh_of(F, F, 0.1), 2)
    Ft2, Gt2, cert2 = fx.commuting_pair(F2, F2, 0.1, 1, region=region2, mesh=mesh2)
    exact2 = float(np.abs(poisson_bracket(Ft2, Gt2).values).max())

    ok = (cert.passes and cert.bracket_max == 0.0 and exact == 0.0
          and cert.c0_error < 0.1 and cert.lq_error_q < 0.1
          and c0 == cert.c0_error and abs(lq - cert.lq_error_q) <= 1e-12
          and cert2.bracket_max == 0.0 and exact2 == 0.0 and dt < 20)
    record(7, ok, f"513^2: bracket_max {cert.bracket_max}, c0 {cert.c0_error:.4f}, "
                  f"lq {cert.lq_error_q:.4f}, {cert.mesh_cells} tiles, {dt:.2f} s; "
                  f"1025^2 resampled: bracket_max {cert2.bracket_max}, c0 {cert2.c0_error:.4f}, "
                  f"lq {cert2.lq_error_q:.4f}")
    assert ok


def test_c08_rigidity_vs_flexibility(probe_runs, tmp_path):
    out = tmp_path / "flex"
    status = main(["flex", "--f", BF, "--g", BG, "--grid", PAIR_GRID, "--margin", "2",
                   "--eps", "0.2", "--q", "1", "--out", str(out)])
    cert = json.loads((out / "certificate.json").read_text())
    Ft, Gt = read_field(out / "F_tilde.pbf"), read_field(out / "G_tilde.pbf")
    grid = Ft.grid
    F = sample_expression(parse_expression(BF), grid, 2)
    G = sample_expression(parse_expression(BG), grid, 2)
    g_c0 = float(np.abs(Gt.values - G.values).max())
    f_c0 = float(np.abs(Ft.values - F.values).max())
    flex_lp = float(np.abs(poisson_bracket(Ft, Gt).values).max())
    positive = []
    for p, (_, pout) in probe_runs.items():
        for row in json.loads((pout / "sweep.json").read_text())["per_delta"]:
            bound = max(row["bound_from_main_estimate"] or 0.0, row["sheetwise_bound"] or 0.0)
            if bound > 0:
                positive.append((row["delta"], bound))
    # the flex pair beats every positive bound, so it must sit outside those delta balls
    outside = all(max(f_c0, g_c0) > d for d, _ in positive)
    ok = (status == 0 and cert["passes"] and cert["bracket_max"] == 0.0 and flex_lp == 0.0
          and cert["c0_error"] < 0.2 and cert["lq_error_q"] < 0.2 and bool(positive)
          and outside and g_c0 > max(DELTAS))
    record(8, ok, f"flex pair: bracket 0, |F~-F|_C0 {f_c0:.4f}, |G~-G|_L1 "
                  f"{cert['lq_error_q']:.4f}, |G~-G|_C0 {g_c0:.4f}; probe pairs stay above "
                  f"{len(positive)} positive certified bounds")
    assert ok


def test_c09_adjoint_gradient():
    F, G = bump_pair(257)
    chk = rp.gradient_check(F, G, 2)
    ok = chk.max_rel_err <= 1e-5 and chk.checked >= 100
    record(9, ok, f"max relative error {chk.max_rel_err:.2e} over {chk.checked} nodes")
    assert ok


def test_c10_determinism(tmp_path, monkeypatch):
    args = ["probe", "--f", BF, "--g", BG, "--grid", "0,1,0,1,129,129", "--margin", "2",
            "--p", "1", "--deltas", "0.01,0.02,0.04", "--trials", "5", "--seed", "11",
            "--estimate", "8,1,auto"]
    main(args + ["--out", str(tmp_path / "a")])
    monkeypatch.setenv("PB_THREADS", "2")
    main(args + ["--out", str(tmp_path / "b")])
    same = all((tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
               for f in ("sweep.json", "sweep.csv"))
    record(10, same, "sweep.json and sweep.csv byte-identical across runs (1 vs 2 threads)")
    assert same
