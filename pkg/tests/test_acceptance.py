"""Acceptance suite: one test per primary criterion.

Each criterion records a single PASS/FAIL line (printed in the pytest
terminal summary, or directly when this file is run as a script).
Runtime limits are part of each criterion.
"""

from __future__ import annotations

import json
import math
import time

import numpy as np
import sympy

from anosovlab.cli import TRIVIAL_VERDICT, main
from anosovlab.cohomology import birkhoff_sum
from anosovlab.manifolds import (chart_s, chart_u, holonomy_jacobian_fd, holonomy_jacobian_series,
                                 srb_holonomy_identity_check)
from anosovlab.observables import CoboundaryOf, TrigPoly
from anosovlab.pcf import (loop_decompose, matching_kernel, pcf_paths,
                           random_null_homologous_loop, simple_pcf_gradient)
from anosovlab.periodic import build_catalog, linear_fixed_points
from anosovlab.shadowing import (ConjugacyMap, catalog_pairing_defect, conjugacy_defect,
                                 linearizing_conjugacy, sup_distance_to_identity)
from anosovlab.spectral import (ETA_THRESHOLD, RateBounds, brin_pinching_check,
                                bunching_from_rates, matching_regularity_k)
from anosovlab.torus_maps import PerturbedMap, splitting_frames
from conftest import CONFIGS, cat_map, t3_map
from oracles import CAT, T3, linear_pcf_gradient

RESULTS: list[str] = []



def record(n: int, ok: bool, detail: str, elapsed: float, limit: float) -> bool:
    ok = ok and elapsed <= limit
    RESULTS.append(f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail} ({elapsed:.1f} s, limit {limit:g} s)")
    print(RESULTS[-1])
    return ok


def standard_trig() -> TrigPoly:
    from anosovlab.observables import ScalarMode
    return TrigPoly([ScalarMode((1, 0, 0), 0.2, "sin"), ScalarMode((0, 1, -1), 0.15, "cos"),
                     ScalarMode((1, 1, 0), -0.1, "sin")], dim=3)


def abx(f, rng, scale=0.05):
    a = rng.random(f.dim)
    b = chart_s(f, a[None], rng.uniform(-scale, scale, (1, f.dim_stable)))[0]
    x = chart_u(f, a[None], rng.uniform(-scale, scale, (1, f.dim_unstable)))[0]
    return a, b, x


# ---------------------------------------------------------------- 1

def criterion_1() -> bool:
    t0 = time.perf_counter()
    lam = 1.7
    r = RateBounds(mu_minus=lam ** 3, mu_plus=lam ** 6, lambda_minus=lam, lambda_plus=lam ** 2)
    b = bunching_from_rates(r)
    brin = brin_pinching_check(r)
    below = matching_regularity_k(ETA_THRESHOLD - 1e-12)["admissible"]
    above = matching_regularity_k(ETA_THRESHOLD + 1e-12)["admissible"]
    etas = np.linspace(0.05, 4.0, 4001)
    etas = etas[np.abs(etas - ETA_THRESHOLD) > 1e-9]
    equiv = all(matching_regularity_k(e)["admissible"]
                == (2 * e * e - e - 2 < 0) == (matching_regularity_k(e)["k"] > e) for e in etas)
    ok = (abs(b.b_s - 2) < 1e-12 and abs(b.b_u - 2 / 3) < 1e-12 and brin == {"first": False, "second": False}
          and below and not above and equiv)
    return record(1, ok, f"b_s={b.b_s:.15g} b_u={b.b_u:.15g} brin={brin} flip={below and not above} "
                  f"equivalence={equiv}", time.perf_counter() - t0, 1.0)


# ---------------------------------------------------------------- 2

def criterion_2() -> bool:
    t0 = time.perf_counter()
    ok, parts = True, []
    for name, L, f, kmax in (("cat", CAT, cat_map(1e-3), 6), ("T3", T3, t3_map(1e-3), 4)):
        cat = build_catalog(f, kmax, continue_all=True)
        for k in range(1, kmax + 1):
            det = abs(int((sympy.Matrix(L) ** k - sympy.eye(len(L))).det()))
            n_seeds = len(linear_fixed_points(L, k))
            ok &= n_seeds == det == cat.counts[k] == cat.continued.get(k, 0)
            ok &= cat.max_residual[k] < 1e-10
        ok &= not cat.failures
        parts.append(f"{name} counts {[cat.counts[k] for k in range(1, kmax + 1)]} "
                     f"max residual {max(cat.max_residual.values()):.1e}")
    return record(2, ok, "; ".join(parts), time.perf_counter() - t0, 30.0)


# ---------------------------------------------------------------- 3

def criterion_3() -> bool:
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    f = t3_map(1e-3)
    fc = cat_map(1e-3)
    cats = [(f, build_catalog(f, 4)), (fc, build_catalog(fc, 6))]
    loops = [random_null_homologous_loop(f, rng.random(3), int(rng.choice([4, 6, 8])), rng, scale=0.1)
             for _ in range(100)]
    triples = [abx(f, rng) for _ in range(3)]
    max_birk, max_pcf, max_ratio, max_grad = 0.0, 0.0, 0.0, 0.0
    for i in range(10):
        u = TrigPoly.random(3, 3, rng, amplitude=0.3)
        u2 = TrigPoly.random(2, 3, rng, amplitude=0.3)
        c = float(rng.normal())
        for g, cat in cats:
            phi = CoboundaryOf(u if g.dim == 3 else u2, c, g)
            for o in cat.orbits:
                max_birk = max(max_birk, abs(birkhoff_sum(g, phi, o) / o.period - c))
        phi = CoboundaryOf(u, c, f)
        for sv in pcf_paths(f, phi, loops):
            max_pcf = max(max_pcf, abs(sv.value))
            max_ratio = max(max_ratio, abs(sv.value) / sv.tail_bound if sv.tail_bound else math.inf)
        A, B, X = (np.array(v) for v in zip(*triples))
        grads = simple_pcf_gradient(f, A, B, X, phi)
        # telescoping oracle: rho = sum over the closed loop of u(start) - u(end) = 0
        max_grad = max(max_grad, float(np.max(np.linalg.norm(grads, axis=-1))))
    ok = max_birk < 1e-8 and max_ratio <= 1 and max_grad < 1e-5
    return record(3, ok, f"max |average - c| {max_birk:.1e}; max |PCF| {max_pcf:.1e} "
                  f"(at most {max_ratio:.2f} of its tail bound) over 10x100 loops; max gradient gap {max_grad:.1e}", time.perf_counter() - t0, 120.0)


# ---------------------------------------------------------------- 4

def criterion_4() -> bool:
    t0 = time.perf_counter()
    rng = np.random.default_rng(77)
    f = t3_map(1e-3)
    A, B, X = (np.array(v) for v in zip(*[abx(f, rng) for _ in range(20)]))
    series = holonomy_jacobian_series(f, A, B, X)
    fd = holonomy_jacobian_fd(f, A, B, X)
    rel = float(np.max(np.abs(np.exp(series.value) - fd) / fd))
    gap = float(np.max(srb_holonomy_identity_check(f, A, B, X)["gap"]))
    return record(4, rel < 1e-4 and gap < 1e-5,
                  f"max relative Jacobian error {rel:.1e}; max SRB identity gap {gap:.1e} on 20 triples",
                  time.perf_counter() - t0, 120.0)


# ---------------------------------------------------------------- 5

def criterion_5() -> bool:
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    f = t3_map(1e-3)
    phi = standard_trig()
    worst, ok = 0.0, True
    for i in range(25):
        loop = random_null_homologous_loop(f, rng.random(3), 6 if i % 2 == 0 else 8, rng, scale=0.1)
        pieces = loop_decompose(f, loop)
        ok &= bool(pieces) and all(len(p) == 4 for p in pieces)
        vals = pcf_paths(f, phi, [loop] + pieces)
        worst = max(worst, abs(vals[0].value - sum(v.value for v in vals[1:])))
    ok &= worst < 1e-6
    return record(5, ok, f"25 loops, all pieces 4-leg; max |sum - original| {worst:.1e}",
                  time.perf_counter() - t0, 120.0)


# ---------------------------------------------------------------- 6

def criterion_6() -> bool:
    t0 = time.perf_counter()
    f1 = t3_map(1e-3)
    f2 = PerturbedMap.linear_map(T3)
    q = ConjugacyMap(f1, f2)
    defect = conjugacy_defect(q, 8)
    pairing = catalog_pairing_defect(q, build_catalog(f1, 4), build_catalog(f2, 4))
    d = [sup_distance_to_identity(linearizing_conjugacy(t3_map(e)), 6) for e in (1e-2, 1e-3, 1e-4)]
    ratios = [d[0] / d[1], d[1] / d[2]]
    ok = (defect < 1e-8 and pairing["missing"] == 0 and pairing["max_distance"] < 1e-10
          and all(8 <= r <= 12 for r in ratios))
    return record(6, ok, f"defect {defect:.1e}; paired {pairing['paired']} orbits at distance "
                  f"{pairing['max_distance']:.1e}; scaling ratios {ratios[0]:.2f}, {ratios[1]:.2f}",
                  time.perf_counter() - t0, 300.0)


# ---------------------------------------------------------------- 7

def criterion_7(tmp) -> bool:
    t0 = time.perf_counter()
    cfg = str(CONFIGS / "t3_obstruction.json")
    codes = [main(["match-test", "--config", cfg, "--out", str(tmp / "obs")]),
             main(["srb-mme", "--config", cfg, "--out", str(tmp / "obs")]),
             main(["rigidity-report", "--config", str(CONFIGS / "t3_identity.json"), "--out", str(tmp / "id")])]
    match = json.loads((tmp / "obs" / "match_test.json").read_text())["report"]
    srb = json.loads((tmp / "obs" / "srb_mme.json").read_text())["report"]
    rig = json.loads((tmp / "id" / "rigidity_report.json").read_text())
    w = match["witness"] or {}
    base = np.asarray(w.get("base", [np.nan] * 3))
    at_origin = bool(np.all(np.abs(base - np.round(base)) < 1e-9))
    ok = (codes == [0, 0, 0] and not match["unstable_match"] and w.get("kind") == "unstable"
          and w.get("period") == 1 and at_origin and srb["verdict"] == "obstructed"
          and rig["verdict"] == TRIVIAL_VERDICT and rig["kernel_dim"] == 0)
    return record(7, ok, f"witness {w.get('kind')} period {w.get('period')} at origin={at_origin} "
                  f"gap {w.get('gap', float('nan')):.2e}; srb-mme {srb['verdict']}; "
                  f"identity verdict '{rig['verdict']}' kernel_dim {rig['kernel_dim']}",
                  time.perf_counter() - t0, 300.0)


# ---------------------------------------------------------------- 8

def criterion_8() -> bool:
    t0 = time.perf_counter()
    rng = np.random.default_rng(88)
    f = t3_map(1e-3)
    u = TrigPoly.random(3, 3, rng, amplitude=0.3)
    phi = CoboundaryOf(u, 0.4, f)
    dims = []
    for _ in range(10):
        x = rng.random(3)
        pairs = []
        for _ in range(3):
            a = chart_u(f, x[None], rng.uniform(-0.03, 0.03, (1, 2)))[0]
            pairs.append((a, chart_s(f, a[None], rng.uniform(-0.05, 0.05, (1, 1)))[0]))
        dims.append(matching_kernel(f, f, None, x, pairs, phi, phi).kernel_dim)
    lin = PerturbedMap.linear_map(T3)
    trig = standard_trig()
    x = np.zeros(3)
    b = chart_s(lin, x[None], [[0.05]])[0]
    rep = matching_kernel(lin, lin, None, x, [(x, b)], trig, trig)
    _, Qu, _ = splitting_frames(lin, x[None])
    Qu = Qu[0]
    g = linear_pcf_gradient(T3, trig, x, b - x)
    G_ref = np.stack([g @ Qu, g @ np.asarray(T3, float) @ Qu])
    s_ref = np.linalg.svd(G_ref, compute_uv=False)
    err = float(np.max(np.abs(rep.gradients - G_ref)) / np.max(np.abs(G_ref)))
    ok = (all(d == 2 for d in dims) and rep.numeric_rank == 2 and s_ref[-1] > 1e-3 * s_ref[0]
          and err < 1e-3)
    return record(8, ok, f"coboundary kernel dims {dims}; fixed-point rank {rep.numeric_rank} "
                  f"(oracle singular values {s_ref[0]:.3f}, {s_ref[1]:.3f}; row error {err:.1e})",
                  time.perf_counter() - t0, 60.0)


# ---------------------------------------------------------------- pytest entry points

def test_criterion_1_rate_arithmetic():
    assert criterion_1()


def test_criterion_2_orbit_counts():
    assert criterion_2()


def test_criterion_3_coboundary_annihilation():
    assert criterion_3()


def test_criterion_4_holonomy_jacobian():
    assert criterion_4()


def test_criterion_5_loop_decomposition():
    assert criterion_5()


def test_criterion_6_conjugacy_contract():
    assert criterion_6()


def test_criterion_7_dichotomy_detector(tmp_path):
    assert criterion_7(tmp_path)


def test_criterion_8_matching_kernel():
    assert criterion_8()


if __name__ == "__main__":
    import sys
    import tempfile
    from pathlib import Path

    with tempfile.TemporaryDirectory() as d:
        flags = [criterion_1(), criterion_2(), criterion_3(), criterion_4(), criterion_5(),
                 criterion_6(), criterion_7(Path(d)), criterion_8()]
    sys.exit(0 if all(flags) else 1)
