"""Acceptance criteria, one pass/fail line each.

Run with ``pytest tests/test_acceptance.py -s`` or ``python tests/test_acceptance.py``.
The lines are also repeated in the pytest terminal summary.
"""
import math
import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from conftest import ACCEPTANCE_LINES  # noqa: E402
from test_averaging import direct_average, random_trig_system, system  # noqa: E402
from test_bell import bell_number, brute_force  # noqa: E402

from nhtorus.averaging import AveragingWorkspace, averaged_f, check_H1  # noqa: E402
from nhtorus.bell import bell_eval, bell_monomials  # noqa: E402
from nhtorus.cycles import find_limit_cycle  # noqa: E402
from nhtorus.jerk import (  # noqa: E402
    JerkSpec,
    equilibrium_seed,
    fN_closed_form,
    guiding_closed_form,
    jerk_field,
    jerk_section,
    jerk_standard_form,
    limiting_torus_distance,
    translated_guiding,
)
from nhtorus.ode import SectionSpec  # noqa: E402
from nhtorus.torus import (  # noqa: E402
    FIXED_POINT_CONFIG,
    FourierCurve,
    NonWindingError,
    SectionMap,
    TorusError,
    check_winding,
    contraction_estimate,
    interior_fixed_point,
    invariance_residual,
)

GRID = np.array([[r, z] for r in np.linspace(1, 3, 5) for z in np.linspace(-1, 1, 5)])


def report(k, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {k}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def info(detail):
    line = f"[INFO] {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def test_criterion_1_bell_oracle():
    start = time.perf_counter()
    bell_monomials.cache_clear()
    exact = all(
        {m.multiplicities: m.coefficient for m in bell_monomials(p, q)} == brute_force(p, q)
        for p in range(1, 9)
        for q in range(1, p + 1)
    )
    oracle_time = time.perf_counter() - start
    bell_monomials.cache_clear()
    start = time.perf_counter()
    for p in range(1, 9):
        for q in range(1, p + 1):
            bell_monomials(p, q)
    columns = all(
        sum(bell_eval(p, q, [1] * (p - q + 1)) for q in range(1, p + 1)) == bell_number(p) for p in range(1, 9)
    )
    elapsed = time.perf_counter() - start
    ok = exact and columns and elapsed < 1.0
    assert report(
        1,
        ok,
        f"brute-force match {exact}, Bell-number sums {columns}, "
        f"generation {elapsed:.3f} s (with enumerator {oracle_time:.2f} s)",
    )


def test_criterion_2_and_3_vanishing_and_closed_form():
    start = time.perf_counter()
    worst_low, worst_top = 0.0, 0.0
    for N in (3, 4, 5):
        ws = AveragingWorkspace(jerk_standard_form(JerkSpec(order=N)))
        stack = ws.y_at_period(N, GRID)
        for i in range(1, N):
            worst_low = max(worst_low, float(np.max(np.linalg.norm(stack[i - 1], axis=-1))) / math.factorial(i))
        fN = averaged_f(ws, N, GRID)
        exact = fN_closed_form(GRID[:, 0], GRID[:, 1])
        rel = np.linalg.norm(fN - exact, axis=-1) / np.maximum(1.0, np.linalg.norm(exact, axis=-1))
        worst_top = max(worst_top, float(rel.max()))
    elapsed = time.perf_counter() - start
    ok2 = report(2, worst_low < 1e-7 and elapsed < 120, f"max |f_i|, i < N, N in 3..5: {worst_low:.2e} (< 1e-7), {elapsed:.1f} s")
    ok3 = report(3, worst_top < 1e-5 and elapsed < 120, f"max relative error of f_N vs closed form: {worst_top:.2e} (< 1e-5), {elapsed:.1f} s")
    assert ok2 and ok3


def test_criterion_4_guiding_cycle():
    start = time.perf_counter()
    sec = SectionSpec(normal=(0, 1), anchor=(2, 0), direction=-1, branch=(1, 0))
    cyc = find_limit_cycle(guiding_closed_form(), [2.5, 0.0], sec)
    r, z = cyc.samples.T
    circle = float(np.max(np.abs(np.hypot(r - 2, z) - 1)))
    sec = SectionSpec(normal=(0, 1), anchor=(0, 0), direction=-1, branch=(1, 0))
    tr = find_limit_cycle(translated_guiding(), [0.5, 0.0], sec)
    target = math.exp(-2 * math.pi)
    e_mono = abs(tr.multiplier / target - 1)
    e_liou = abs(tr.multiplier_liouville / target - 1)
    e_agree = abs(tr.multiplier_liouville / tr.multiplier - 1)
    elapsed = time.perf_counter() - start
    ok = circle < 1e-6 and max(e_mono, e_liou, e_agree) < 1e-6 and elapsed < 10
    assert report(
        4,
        ok,
        f"circle error {circle:.1e}; multiplier rel. error monodromy {e_mono:.1e}, "
        f"Liouville {e_liou:.1e}, agreement {e_agree:.1e}; {elapsed:.1f} s",
    )


@pytest.mark.slow
def test_criterion_5_torus_detection(jerk_samples, jerk_torus):
    eps = 0.2
    start = time.perf_counter()
    sample = jerk_samples(eps)
    sec = jerk_section(0.0)
    try:
        check_winding(sample.points, sample.points.mean(axis=0))
        curve = FourierCurve(8).fit(sample.points)
        winding, why = True, "winds"
    except NonWindingError as exc:
        winding, why = False, f"does not wind ({exc})"
        curve = FourierCurve(8, check_winding=False).fit(sample.points)
    smap = SectionMap(jerk_field(JerkSpec(eps=eps)), sec)
    fit = curve.fit_residual_
    inv = invariance_residual(smap, curve)
    try:
        nu = contraction_estimate(smap, curve)
    except TorusError:
        nu = math.nan
    seed = equilibrium_seed(sec)
    fp, mult = interior_fixed_point(SectionMap(jerk_field(JerkSpec(eps=eps)), sec, FIXED_POINT_CONFIG), seed)
    near = float(np.linalg.norm(fp - seed))
    moduli = np.abs(mult)
    elapsed = time.perf_counter() - start + jerk_samples.seconds.get((eps, 200, 1000), 0.0)
    checks = {
        "winding": winding,
        "fit": fit < 1e-3,
        "invariance": inv < 2e-3,
        "nu_hat": nu < 1 - 1e-3,
        "fixed point": near < 0.1 and bool(np.all(moduli > 1)),
        "runtime": elapsed < 300,
    }
    failed = [k for k, v in checks.items() if not v]
    detail = (
        f"burn 200 keep 1000: sample {why}; fit {fit:.2e}, invariance {inv:.2e}, nu_hat {nu:.5f}, "
        f"fixed point {np.round(fp, 6).tolist()} at {near:.1e} from seed, moduli {np.round(moduli, 6).tolist()}; "
        f"{elapsed:.0f} s" + (f"; failing: {', '.join(failed)}" if failed else "")
    )
    ok = report(5, not failed, detail)
    est = jerk_torus(0.0)
    info(
        f"criterion 5 at keep 2500 (command-line default): curve from {est.curve_source}, fit {est.fit_residual:.2e}, "
        f"invariance {est.invariance_residual:.2e}, nu_hat {est.nu_hat:.5f}, "
        f"moduli {np.round(np.abs(est.multipliers), 6).tolist()}, sandwich winding {est.sandwich_winding}"
    )
    assert ok


@pytest.mark.slow
def test_criterion_6_order_eps_localization(jerk_samples):
    eps_values = (0.05, 0.1, 0.2)
    sup = []
    for eps in eps_values:
        sup.append(float(np.max(limiting_torus_distance(jerk_samples(eps).states))))
    elapsed = sum(jerk_samples.seconds.get((e, 200, 1000), 0.0) for e in eps_values)
    monotone = all(a < b for a, b in zip(sup, sup[1:]))
    slope = float(np.polyfit(np.log(eps_values), np.log(sup), 1)[0])
    K = max(s / e for s, e in zip(sup, eps_values))
    ok = monotone and 0.8 <= slope <= 1.3 and elapsed < 900
    assert report(
        6,
        ok,
        f"sup distance {', '.join(f'{e}: {s:.3e}' for e, s in zip(eps_values, sup))}; monotone {monotone}; "
        f"log-log slope {slope:.2f} (need 0.8..1.3); K = {K:.3f}; {elapsed:.0f} s",
    )


def test_criterion_7_h1_discriminator():
    start = time.perf_counter()
    r = np.sqrt(np.linspace(0.5, 4, 5))
    z = np.linspace(-2, 2, 5)
    good = check_H1("-xd^3", r, z)
    bad = check_H1("xdd", r, z)
    sin_avg = bad.violations[..., 1]
    err = float(np.max(np.abs(sin_avg - r[:, None] / 2)))
    elapsed = time.perf_counter() - start
    ok = good.passed and good.max_violation < 1e-10 and not bad.passed and err < 1e-9 and elapsed < 1
    assert report(
        7,
        ok,
        f"-xd^3 violation {good.max_violation:.1e}; xdd fails with |<P sin> - r/2| <= {err:.1e}; {elapsed:.3f} s",
    )


def test_criterion_8_first_order_average():
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(10):
        F1 = random_trig_system(rng)
        ws = AveragingWorkspace(system(F1))
        Z = rng.uniform(-1, 1, (20, 2))
        got = averaged_f(ws, 1, Z)
        want = np.array([2 * np.pi * direct_average(F1, z) for z in Z])
        worst = max(worst, float(np.max(np.abs(got - want))))
    elapsed = time.perf_counter() - start
    assert report(8, worst < 1e-10 and elapsed < 10, f"max |f_1 - T <F_1>| over 10 systems x 20 points: {worst:.1e}; {elapsed:.2f} s")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v", "-s", "-p", "no:cacheprovider"]))
