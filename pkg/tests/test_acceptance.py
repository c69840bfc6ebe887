"""Acceptance criteria, each run at its stated tolerance.

Every test records its measured values in ``ACCEPTANCE_RESULTS``; the
conftest hook prints one PASS/FAIL line per criterion at the end of the
session (``-s`` also shows them as each test finishes). Criteria that cannot
be met as stated are marked ``xfail(strict=True)``: the assertion is the
criterion itself, the run is reported, and an unexpected pass is an error.
"""

import math
import time

import numpy as np
import pytest

from nlobs.constraints import (
    DEFAULT_EPS_PI,
    penalty_threshold,
    pi_value,
    rowat_constraint,
    rowat_margins,
)
from nlobs.excitation import RunContext, eta_eval, regressor_along_run, upe_check, wnpe_probe
from nlobs.gainbounds import GainBoundsProblem, dgamma_ceiling, epsilon_floor, synth_verify, tau_star
from nlobs.harness import build_loop, compare_constraints, emit_outputs, run_closed_loop
from nlobs.numkit import deadzone, rk4_integrate
from nlobs.observer import lambda_phase, residual_check
from nlobs.plant import (
    RowatParams,
    bifurcation_csv,
    bifurcation_scan,
    equilibria,
    from_canonical,
    to_canonical,
)
from nlobs.scenario import shipped_scenario

ACCEPTANCE_RESULTS = {}

S5 = RowatParams(tau_m=0.1666, tau_s=5.0, sigma_s=0.8, sigma_f=2.0, A_f=1.0)


def record(n, part, ok, info):
    ACCEPTANCE_RESULTS.setdefault(n, []).append((part, bool(ok), info))
    print(f"criterion {n} {part}: {'PASS' if ok else 'FAIL'} ({info})")
    return bool(ok)


def g(x):
    return f"{x:.6g}"


# -------------------------------------------------------------------------- 1


def test_criterion_01_deadzone_algebra():
    rng = np.random.default_rng(2024)
    n = 100_000
    t0 = time.perf_counter()
    a = rng.uniform(-10, 10, n) * 10.0 ** rng.uniform(-3, 0, n)
    b = rng.uniform(-10, 10, n) * 10.0 ** rng.uniform(-3, 0, n)
    L = rng.choice([-1.0, 1.0], n) * 10.0 ** rng.uniform(-2, 2, n)
    eps = 10.0 ** rng.uniform(-4, 1, n)
    da, db = deadzone(a, eps), deadzone(b, eps)
    lo = np.minimum(np.abs(a), np.abs(b))
    hi = np.maximum(np.abs(a), np.abs(b))
    p1 = np.max(deadzone(lo, eps) - deadzone(hi, eps))
    p2 = np.max(deadzone(np.abs(a) + np.abs(b), eps) - (da + np.abs(b)))
    p3 = np.max(np.abs(deadzone(L * a, eps) - np.abs(L) * deadzone(a, eps / np.abs(L))))
    p4 = np.max((da + db) - 2.0 * np.hypot(da, db))
    elapsed = time.perf_counter() - t0
    tol = 1e-12
    ok = record(1, "properties", max(p1, p2, p4) <= tol and p3 <= tol, f"worst excess 1..4 = {g(p1)}, {g(p2)}, {g(p3)}, {g(p4)}")
    ok &= record(1, "runtime", elapsed < 1.0, f"{elapsed:.3f} s")
    assert ok


# -------------------------------------------------------------------------- 2


def test_criterion_02_canonical_map():
    c = to_canonical(S5)
    ref = (-6.2, 6.0, -2.16, 1.2)
    dev = max(max(abs(x - r) for x, r in zip(c.theta, ref)), abs(c.lam - 2.0))
    ok = record(2, "reference", dev <= 0.01, f"theta={tuple(round(float(v), 4) for v in c.theta)}, lambda={g(c.lam)}, max dev {g(dev)}")
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(10_000):
        p = RowatParams(
            tau_m=rng.uniform(0.05, 1.0),
            tau_s=rng.uniform(1.0, 20.0),
            sigma_s=rng.uniform(0.1, 2.0),
            sigma_f=rng.uniform(0.5, 4.0),
            A_f=rng.uniform(0.2, 3.0),
        )
        back = from_canonical(to_canonical(p))
        for k, v in p.as_dict().items():
            worst = max(worst, abs(getattr(back, k) - v) / abs(v))
    ok &= record(2, "round trip", worst <= 1e-10, f"max rel error {g(worst)} over 1e4 draws")
    assert ok


# -------------------------------------------------------------------------- 3


def test_criterion_03_equilibria():
    eqs = equilibria(S5)
    ok = record(3, "count", len(eqs) == 3, f"{len(eqs)} equilibria")
    assert len(eqs) == 3
    ref = [(-0.292, -0.2336), (0.0, 0.0), (0.292, 0.2336)]
    dev = max(max(abs(e.V - r[0]), abs(e.q - r[1])) for e, r in zip(eqs, ref))
    ok &= record(3, "location", dev <= 1e-3, f"V = {', '.join(g(e.V) for e in eqs)}; max dev {g(dev)}")
    kinds = [e.kind for e in eqs]
    ok &= record(3, "classes", kinds == ["UNODE", "SADDLE", "UNODE"], ",".join(kinds))
    # independent oracle: hand-written Jacobian at the origin and the quadratic formula
    p = S5
    J = np.array([[(-1.0 + p.sigma_f) / p.tau_m, -1.0 / p.tau_m], [p.sigma_s / p.tau_s, -1.0 / p.tau_s]])
    tr, det = np.trace(J), np.linalg.det(J)
    roots = sorted([(tr - math.sqrt(tr * tr - 4 * det)) / 2, (tr + math.sqrt(tr * tr - 4 * det)) / 2])
    got = sorted(eqs[1].eigenvalues)
    d_oracle = max(abs(a - b) for a, b in zip(got, roots))
    d_ref = max(abs(got[0] + 0.0413), abs(got[1] - 5.844))
    ok &= record(3, "origin eigenvalues", d_oracle <= 1e-3 and d_ref <= 1e-3, f"{g(got[0])}, {g(got[1])}; vs oracle {g(d_oracle)}, vs reference {g(d_ref)}")
    assert ok


# -------------------------------------------------------------------------- 4


def test_criterion_04_bifurcation():
    grid = np.linspace(0.8, 1.2, 81)
    t0 = time.perf_counter()
    rows = bifurcation_scan(grid, 2.0, 1.0, 0.1666, 5.0)
    csv_text = bifurcation_csv(rows)
    elapsed = time.perf_counter() - t0
    bad = []
    for ss, eqs in rows:
        if abs(ss - 1.0) <= 1e-3:
            continue
        want = 3 if ss < 1.0 else 1
        if len(eqs) != want:
            bad.append((ss, len(eqs)))
    checked = sum(1 for ss, _ in rows if abs(ss - 1.0) > 1e-3)
    ok = record(4, "branches", not bad and len(csv_text.splitlines()) == 82, f"{checked} grid points checked, mismatches {bad}")
    ok &= record(4, "runtime", elapsed < 10.0, f"{elapsed:.2f} s")
    assert ok


# -------------------------------------------------------------------------- 5


def criterion5_scenario():
    sc = shipped_scenario().with_changes("integration", h=1e-3, T_final=1000.0, record_every=1000)
    return sc.with_changes("observer", renormalize=False)


def _c5_run():
    return run_closed_loop(criterion5_scenario(), monitor=True)


@pytest.fixture(scope="module")
def c5_result():
    return _c5_run()


@pytest.mark.slow
def test_criterion_05_structural_invariants(c5_result):
    rep = c5_result.monitor.report()
    ok = record(5, "steps", rep["steps"] == 1_000_000, f"{rep['steps']} steps at h=1e-3")
    ok &= record(5, "M first row", rep["m_row0_max"] <= 1e-15, f"max |M_1j| = {g(rep['m_row0_max'])}")
    ok &= record(5, "radius drift", rep["radius_drift_max"] <= 1e-6, f"max |r^2-1| = {g(rep['radius_drift_max'])}, renormalization off")
    ok &= record(5, "lambda in box", rep["lambda_in_box"], "every step")
    ok &= record(5, "frozen s", rep["frozen_violations"] == 0, f"{rep['frozen_steps']} gate-closed steps, {rep['frozen_violations']} changed s")
    assert ok


# -------------------------------------------------------------------------- 6


def _residual(h, T=5.0):
    sc = shipped_scenario().with_changes("integration", h=h, T_final=T, record_every=1)
    loop, X0, N = build_loop(sc)
    tr = rk4_integrate(loop.field, 0.0, X0, h, N, post_step=loop.post_step)
    return residual_check(tr, loop)


def test_criterion_06_error_system_residual():
    r1 = _residual(1e-3)
    r2 = _residual(5e-4)
    ok = record(6, "residual", r1 <= 1e-4, f"{g(r1)} at h=1e-3")
    ratio = r1 / r2
    ok &= record(6, "halving", 3.0 <= ratio <= 5.0, f"{g(r2)} at h=5e-4, ratio {ratio:.3f}")
    assert ok


# -------------------------------------------------------------------------- 7


def _joint_error(loop, X):
    xp, st = loop.split(X)
    th = loop.truth.theta
    x = loop.truth.to_canonical(xp)
    return float(np.linalg.norm(np.concatenate([st.zeta - x + st.M @ th, st.theta_hat - th])))


@pytest.mark.xfail(strict=True, reason="regressor excitation is too weak for a tenfold decay by t=50 at the shipped gains")
def test_criterion_07_linear_stage():
    t0 = time.perf_counter()
    base = shipped_scenario()
    lam = base.truth_canonical().lam
    sc = base.with_changes("observer", search=False, phase0=tuple(float(v) for v in lambda_phase(lam, base.plant.lambda_bounds)))
    sc = sc.with_changes("integration", T_final=50.0, record_every=100)
    loop, X0, N = build_loop(sc)
    tr = rk4_integrate(loop.field, 0.0, X0, sc.integration.h, N, record_every=100)
    lam_run = loop.kernel.lam(loop.split(tr.data[-1])[1].s)[0]
    e0, e50 = _joint_error(loop, tr.data[0]), _joint_error(loop, tr.data[-1])
    ctx = RunContext(truth=loop.truth, x0=np.array([sc.plant.V0, sc.plant.q0]), B=np.array(sc.observer.B), h=sc.integration.h, N=8000)
    upe = upe_check(lambda la: regressor_along_run(ctx, la), [[lam]], 13.29, ctx.dt, stride=10)
    elapsed = time.perf_counter() - t0
    ok = record(7, "lambda pinned", lam_run == pytest.approx(lam, abs=1e-12), f"lambda_hat = {g(lam_run)}")
    ok &= record(7, "UPE certificate", upe.mu_hat > 0, f"mu_hat = {g(upe.mu_hat)} over T=13.29")
    ratio = e50 / e0
    ok &= record(7, "decay", ratio <= 0.1, f"|e(50)|/|e(0)| = {g(e50)}/{g(e0)} = {ratio:.3f}")
    ok &= record(7, "runtime", elapsed < 30.0, f"{elapsed:.1f} s")
    assert ok


# -------------------------------------------------------------------------- 8


@pytest.fixture(scope="module")
def s5_runs(tmp_path_factory):
    out = tmp_path_factory.mktemp("s5")
    t0 = time.perf_counter()
    r1, r2, rep = compare_constraints(shipped_scenario())
    elapsed = time.perf_counter() - t0
    emit_outputs(r1, out)
    emit_outputs(r2, out)
    return r1, r2, rep, out, elapsed


@pytest.mark.slow
def test_criterion_08_full_reproduction(s5_runs):
    r1, r2, rep, out, elapsed = s5_runs
    s = r1.summary
    sc = r1.scenario
    dev = float(s["estimate.lambda_tail_maxdev"])
    ok = record(8, "lambda tail", dev <= 0.1, f"max |lambda_hat-2| over tail = {g(dev)}, final {s['estimate.lambda_final']}")
    rel = {k: float(s[f"physical.{k}_tail_maxrel"]) for k in ("tau_m", "tau_s", "sigma_s", "sigma_f", "A_f")}
    ok &= record(8, "physical tail", max(rel.values()) <= 0.1, ", ".join(f"{k} {v:.3f}" for k, v in rel.items()))
    pit = float(s["pi.tail_max"])
    ok &= record(8, "pi tail", pit == 0.0, f"max pi over tail = {g(pit)}")
    ey = float(s["error.y_tail_sup"])
    ok &= record(8, "output error", ey <= sc.observer.epsilon, f"sup |y-y_hat| over tail = {g(ey)}, eps = {g(sc.observer.epsilon)}")
    have = sorted(p.name for p in out.iterdir())
    ok &= record(
        8,
        "comparison",
        "rowat_s5_noconstraints.summary" in have and "rowat_s5.summary" in have,
        f"lambda time with/without constraints {rep['with.convergence.lambda_time']} / {rep['without.convergence.lambda_time']}; both runs {elapsed:.0f} s",
    )
    assert ok


# -------------------------------------------------------------------------- 9

THETA_TRUE = np.array(to_canonical(S5).theta)
LAM_TRUE = np.array([2.0])


@pytest.mark.xfail(strict=True, reason="at eps_pi=0.002 the third margin sits below the penalty threshold")
def test_criterion_09_truth_penalty_zero_at_stated_eps():
    pv = pi_value(rowat_constraint(eps_pi=0.002), THETA_TRUE, LAM_TRUE)
    u3 = rowat_margins(THETA_TRUE, LAM_TRUE)[2]
    ok = record(9, "pi(truth) at eps_pi=0.002", pv == 0.0, f"pi = {g(pv)}; u3 = {g(u3)} < u* = {g(penalty_threshold(0.002))}")
    assert ok


def test_criterion_09_threshold_and_literal():
    worst = 0.0
    for eps in (1e-6, 1e-4, 1e-3, 0.002, DEFAULT_EPS_PI, 0.0024):
        worst = max(worst, abs(penalty_threshold(eps) - (-3.0 - math.atanh(2 * eps - 1))))
    ok = record(9, "threshold identity", worst <= 1e-10, f"max |u* - (-3 - atanh(2 eps-1))| = {g(worst)}")
    pv = pi_value(rowat_constraint(), THETA_TRUE, LAM_TRUE)
    ok &= record(9, "resolved default", pv == 0.0, f"pi(truth) = {g(pv)} at eps_pi = {DEFAULT_EPS_PI}, u* = {g(penalty_threshold(DEFAULT_EPS_PI))}")
    lit = pi_value(rowat_constraint(eps_pi=0.002, u1_literal=True), THETA_TRUE, LAM_TRUE)
    u1 = rowat_margins(THETA_TRUE, LAM_TRUE, u1_literal=True)[0]
    ok &= record(9, "literal u1", lit > 0.0 and u1 < 0, f"pi(truth) = {g(lit)}, u1 = {g(u1)} (flagged)")
    assert ok


# ------------------------------------------------------------------------- 10

WORKED = GainBoundsProblem(beta0=2.0, a=1.0, c=1.0, Delta=0.1, M=1.0, Delta_d=0.0, kappa=2.0, d=0.5, x0=1.0, h0=1.0)


def test_criterion_10_gain_bounds():
    t0 = time.perf_counter()
    e, dg, ts = epsilon_floor(WORKED), dgamma_ceiling(WORKED), tau_star(WORKED)
    dev = max(abs(e - 0.36667), abs(dg - 0.02004), abs(ts - 2.0794))
    ok = record(10, "formulas", dev <= 1e-4, f"eps_min {e:.6f}, D_gamma_max {dg:.6f}, tau* {ts:.6f}")
    rep = synth_verify(WORKED, D_gamma=0.02, eps=0.37)
    elapsed = time.perf_counter() - t0
    ok &= record(10, "h bounded", rep.compliant and rep.h_bounded, f"h in [{g(rep.h_min)}, {g(rep.h_max)}], h0 = 1")
    ok &= record(10, "crossings", rep.crossings_ok and len(rep.crossings) > 0, f"{len(rep.crossings)} crossings, min T_i = {g(rep.min_T)} vs tau* {g(ts)}")
    ok &= record(10, "runtime", elapsed < 10.0, f"{elapsed:.2f} s")
    assert ok


# ------------------------------------------------------------------------- 11


def test_criterion_11_excitation():
    t = np.linspace(0.0, 4 * math.pi, 8001)
    ph = np.column_stack([np.sin(t), np.cos(t)])
    mu = upe_check([ph], [[2.0]], 2 * math.pi, t[1] - t[0]).mu_hat
    ok = record(11, "sin/cos", abs(mu - math.pi) <= 1e-6, f"mu_hat = {mu:.9f}")
    sc = shipped_scenario()
    ctx = RunContext(truth=sc.truth(), x0=np.array([sc.plant.V0, sc.plant.q0]), B=np.array(sc.observer.B), h=sc.integration.h, N=10_000)
    eta = eta_eval(ctx, ctx.truth.lam, ctx.truth.theta)
    ok &= record(11, "eta at truth", np.all(eta == 0.0), f"max |eta| = {g(np.max(np.abs(eta)))}")
    probe = (ctx.truth.lam + 0.3, ctx.truth.theta * 1.05)
    rep = wnpe_probe(ctx, [probe], L=15.0, skip=20.0)
    ok &= record(11, "generic probe", rep.inf_sup[0] > 0, f"min over windows of sup |eta| = {g(rep.inf_sup[0])}")
    assert ok


# ------------------------------------------------------------------------- 12


@pytest.mark.slow
def test_criterion_12_determinism(s5_runs, c5_result, tmp_path):
    _, _, _, first, _ = s5_runs
    again = run_closed_loop(shipped_scenario())
    emit_outputs(again, tmp_path / "s5")
    files = sorted(p for p in first.iterdir() if not p.name.startswith("rowat_s5_noconstraints"))
    diff = [p.name for p in files if p.read_bytes() != (tmp_path / "s5" / p.name).read_bytes()]
    ok = record(12, "s5 run files", not diff and len(files) >= 12, f"{len(files)} files compared, differing: {diff}")
    c5 = _c5_run()
    same5 = c5.raw.to_csv() == c5_result.raw.to_csv() and c5.monitor.report() == c5_result.monitor.report()
    ok &= record(12, "invariant run", same5, "packed states and monitor report identical")
    rows = [bifurcation_csv(bifurcation_scan(np.linspace(0.8, 1.2, 81), 2.0, 1.0, 0.1666, 5.0)) for _ in range(2)]
    syn = [synth_verify(WORKED, D_gamma=0.02, eps=0.37).crossing_csv() for _ in range(2)]
    r6 = [_residual(1e-3) for _ in range(2)]
    ok &= record(12, "small runs", rows[0] == rows[1] and syn[0] == syn[1] and r6[0] == r6[1], "bifurcation csv, crossing csv, residual")
    assert ok
