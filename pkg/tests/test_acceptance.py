"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line."""
import json
import math
import os
import subprocess
import sys
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from nsg import clarke, geometry, mollify, sphere_maps as sm
from nsg.harness import bundled_configs, random_hyperplane_pair
from nsg.manifolds import FlatTorus, RoundSphere, twisted_conditions_check
from oracles import abs_mixing_singular_grid

CONFIGS = os.path.join(os.path.dirname(__file__), "..", "src", "nsg", "configs")


def report(number, ok, runtime, limit, detail):
    ok = ok and (limit is None or runtime < limit)
    budget = f" (limit {limit:g}s)" if limit is not None else ""
    line = f"CRITERION {number}: {'PASS' if ok else 'FAIL'} [{runtime:.2f}s{budget}] {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def families():
    return [sm.IdentityMap(3), sm.RotationMap.random(3, 11), sm.LatitudeTwist(3, 0.01),
            sm.LatitudeTwist(3, 0.05), sm.LatitudeTwist(3, 0.1)]


def test_criterion_01_clarke_examples():
    start = time.perf_counter()
    f = clarke.max_of_square_and_affine()
    radii = (1e-3, 1e-4, 1e-5)
    classes = {}
    errs = []
    for x in (-1.5, -1.0, 0.0, 2.0, 2.5):
        gg = clarke.sample_generalized_gradient(f, [x], radii)
        classes[x] = clarke.is_critical(gg).critical
        if x == -1.0:
            errs.append(max(abs(gg.samples.min() + 2), abs(gg.samples.max() - 1)))
        if x == 2.0:
            errs.append(max(abs(gg.samples.min() - 1), abs(gg.samples.max() - 4)))
    runtime = time.perf_counter() - start
    ok = max(errs) <= 0.02 and classes == {-1.5: False, -1.0: True, 0.0: False, 2.0: False, 2.5: False}
    report(1, ok, runtime, 1.0, f"endpoint error {max(errs):.2e}, critical set "
                               f"{[x for x, c in classes.items() if c]}")


def test_criterion_02_abs_mixing_nonsingularity():
    start = time.perf_counter()
    gd = clarke.sample_generalized_differential(clarke.abs_mixing_map(), [0.0, 0.0])
    margin = clarke.nonsingularity_margin(gd, 10_000, seed=0)
    runtime = time.perf_counter() - start
    oracle = abs_mixing_singular_grid()
    report(2, margin >= 0.4, runtime, 5.0,
           f"margin {margin:.6f} vs threshold 0.4 (grid oracle min sigma_min {oracle:.6f})")


def test_criterion_03_sup_error():
    start = time.perf_counter()
    torus = FlatTorus(2)
    f = mollify.distance_function(torus, [0.0, 0.0])
    grid = torus.uniform_grid(128)
    errs = {}
    ok = True
    for eps in (0.05, 0.1):
        sf = mollify.smooth_function(f, mollify.standard_cover(torus), eps)
        r = mollify.sup_error_report(sf, f, grid)
        errs[eps] = r.max_abs_err
        ok = ok and r.max_abs_err <= eps
    ok = ok and errs[0.05] <= errs[0.1] + 1e-9
    report(3, ok, time.perf_counter() - start, 60.0,
           f"sup error {errs[0.05]:.5f} (eps 0.05), {errs[0.1]:.5f} (eps 0.1)")


def test_criterion_04_obtuse_gradients():
    start = time.perf_counter()
    sphere = RoundSphere(2)
    lat = np.linspace(-0.2, 0.2, 21)
    lon = 2 * math.pi * np.arange(72) / 72
    L, P = np.meshgrid(lat, lon)
    band = np.stack([np.cos(L) * np.cos(P), np.cos(L) * np.sin(P), np.sin(L)], -1).reshape(-1, 3)
    N = np.array([0.0, 0.0, 1.0])
    r = mollify.obtuse_gradient_report(sphere, N, -N, band, 0.05)
    report(4, r.min_angle > math.pi / 2 + 0.5, time.perf_counter() - start, 60.0,
           f"min angle {r.min_angle:.6f} vs {math.pi / 2 + 0.5:.6f}")


ROUNDOFF = 1e-12  # both sides vanish for isometries; allow double-precision noise


def test_criterion_05_gronwall_suite():
    start = time.perf_counter()
    worst_slack, worst_res_a, worst_res_fd, chain_ok = np.inf, 0.0, 0.0, True
    h = sm.FD_STEP
    for sigma in families():
        for i in range(256):
            g = sm.sample_geodesic(3, 0, i)
            s = sm.curve_samples(sigma, g, h, "analytic")
            r = sm.gronwall_check(s)
            worst_slack = min(worst_slack, r.rhs - r.max_lhs)
            chain_ok = chain_ok and r.holds and all(r.chain.values())
            worst_res_a = max(worst_res_a, sm.curvature_identity_residual(s))
            worst_res_fd = max(worst_res_fd, sm.curvature_identity_residual(sm.curve_samples(sigma, g, h, "fd")))
    ok = chain_ok and worst_slack >= -ROUNDOFF and worst_res_a <= 1e-6 and worst_res_fd <= 5 * h ** 2
    report(5, ok, time.perf_counter() - start, 120.0,
           f"min slack {worst_slack:.3e}, residual {worst_res_a:.1e} analytic / {worst_res_fd:.1e} fd "
           f"(cap {5 * h ** 2:.1e})")


def test_criterion_06_certificate():
    start = time.perf_counter()
    threshold = math.exp(-math.pi) * (1 - 1 / math.sqrt(2))
    tested = families() + [sm.LatitudeTwist(3, 1e-5)]
    certified, ok, passing_near_iso = [], True, 0
    for sigma in tested:
        alpha_ok, worst = sm.alpha_condition(sigma, 256, 0)
        if alpha_ok:
            m = sm.extension_nonsingularity_margin(sigma, 256, 1000, 0)
            certified.append(round(m, 4))
            ok = ok and m > 0
        cr = sm.check_conditions(sigma, geodesic_count=256, pairs=20_000)
        if cr.entries["bilip-lower"].satisfied and cr.entries["curvature"].satisfied:
            passing_near_iso += 1
            ok = ok and worst <= threshold
    ok = ok and passing_near_iso >= 3
    report(6, ok, time.perf_counter() - start, 120.0,
           f"threshold {threshold:.6f}; certified margins {certified}; "
           f"{passing_near_iso} maps pass the near-isometry condition")


def test_criterion_07_bilipschitz_sandwich():
    start = time.perf_counter()
    tested = families() + [sm.make_sphere_map("normalized-perturbation", 3, 0.05, seed=2)]
    violations = 0
    for i, sigma in enumerate(tested):
        lip = sm.bilip_estimate(sigma, 20_000, seed=i)
        r = sm.extension_bilip_check(sigma, 100_000, seed=100 + i, lip_b=lip)
        violations += r.violations
    report(7, violations == 0, time.perf_counter() - start, 30.0,
           f"{violations} violations over {len(tested)} families x 1e5 pairs")


def test_criterion_08_dimension_constant():
    start = time.perf_counter()
    errs = []
    for n in (2, 8):
        closed = ((8 / math.pi) * (n - 1)) ** -0.5
        r = sm.check_conditions(sm.RotationMap.random(n, 3), geodesic_count=16, pairs=10_000)
        errs.append(abs(r.entries["bilip-dimension"].margin - closed))
    report(8, max(errs) <= 1e-9, time.perf_counter() - start, 10.0, f"max deviation {max(errs):.2e}")


def test_criterion_09_gram_dependence():
    start = time.perf_counter()
    a, b = geometry.near_orthonormal_dependent(0.5), geometry.near_orthonormal_dependent(0.1)
    ok = (len(a) == 13 and geometry.gram_deviation(a) < 0.5 and geometry.numerical_rank(a) == 12
          and len(b) == 397 and geometry.gram_deviation(b) < 0.1 and geometry.numerical_rank(b) == 396)
    report(9, ok, time.perf_counter() - start, 5.0,
           f"{len(a)} vectors rank {geometry.numerical_rank(a)}; {len(b)} vectors rank {geometry.numerical_rank(b)}")


def test_criterion_10_twisted_hypotheses(tmp_path):
    start = time.perf_counter()
    sphere = RoundSphere(2)
    N = np.array([0.0, 0.0, 1.0])
    r = twisted_conditions_check(sphere, N, -N, sphere.polar_grid(N, 129))
    out = tmp_path / "torus.json"
    proc = subprocess.run([sys.executable, "-m", "nsg.cli", "run", "--config",
                           os.path.join(CONFIGS, "twisted-torus-fails.json"), "--out", str(out)],
                          capture_output=True, text=True)
    rep = json.loads(out.read_text())
    witnesses = [w for c in rep["checks"] for w in c["detail"].get("witnesses", [])]
    ok = r.cond_18 and r.cond_19 and r.worst_angle >= math.pi - 1e-6 and proc.returncode == 1 and witnesses
    report(10, bool(ok), time.perf_counter() - start, 60.0,
           f"sphere worst angle {r.worst_angle:.9f}; torus exit {proc.returncode}, witness {witnesses[:1]}")


def test_criterion_11_hyperplane_margin():
    start = time.perf_counter()
    rng = np.random.default_rng(0)
    margins = [geometry.hyperplane_convex_rank_margin(*random_hyperplane_pair(n, rng), grid=100)
               for n in [2, 3, 4, 5] * 25]
    report(11, min(margins) > 0, time.perf_counter() - start, 5.0, f"min margin {min(margins):.4e}")


def test_criterion_12_determinism(tmp_path):
    start = time.perf_counter()
    mismatched = []
    for cfg in bundled_configs():
        outs = []
        for k in range(2):
            path = tmp_path / f"{os.path.basename(cfg)}.{k}"
            subprocess.run([sys.executable, "-m", "nsg.cli", "run", "--config", cfg, "--out", str(path),
                            "--no-timing"], capture_output=True)
            outs.append(path.read_bytes())
        if outs[0] != outs[1]:
            mismatched.append(os.path.basename(cfg))
    report(12, not mismatched, time.perf_counter() - start, None,
           f"{len(bundled_configs())} configs, mismatches: {mismatched or 'none'}")
