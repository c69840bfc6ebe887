import math

import numpy as np
import pytest

from nlobs.harness import (
    FIG1_A,
    TABLE_LABELS,
    RunDiverged,
    emit_outputs,
    fig1_compare,
    lambda_convergence_time,
    parse_summary,
    resolve_output_dir,
    run_closed_loop,
    summarize,
    summary_text,
)
from nlobs.numkit import Trajectory
from nlobs.observer import lambda_phase
from nlobs.scenario import shipped_scenario


def short(T=5.0, h=0.01, every=10, **obs):
    sc = shipped_scenario().with_changes("integration", h=h, T_final=T, record_every=every)
    return sc.with_changes("observer", **obs) if obs else sc


@pytest.fixture(scope="module")
def result():
    return run_closed_loop(short(), monitor=True)


def test_table_schema_and_rows(result):
    t = result.table
    assert t.labels == TABLE_LABELS
    assert t.n_samples == 500 // 10 + 1
    assert np.all(np.isfinite(t.data))
    # y is the plant output, the membrane potential
    np.testing.assert_array_equal(t.column("y"), t.column("V"))


def test_monitor_invariants(result):
    rep = result.monitor.report()
    assert rep["steps"] == 500
    assert rep["m_row0_max"] == 0.0
    assert rep["lambda_in_box"]
    assert rep["radius_drift_max"] <= 1e-9
    assert rep["frozen_violations"] == 0


def test_truth_initialized_run_stays_put():
    sc = shipped_scenario()
    c = sc.truth_canonical()
    x0 = sc.truth().to_canonical([sc.plant.V0, sc.plant.q0])
    sc = short(
        T=20.0,
        theta0=tuple(float(v) for v in c.theta),
        zeta0=tuple(float(v) for v in x0),
        phase0=tuple(float(v) for v in lambda_phase(c.lam, [[1.0, 3.0]])),
    )
    r = run_closed_loop(sc, monitor=True)
    t = r.table
    assert np.max(np.abs(t.column("y") - t.column("y_hat"))) <= 1e-6
    assert np.all(t.column("gate_value") == 0.0)
    np.testing.assert_array_equal(t.column("s_1"), t.column("s_1")[0])
    np.testing.assert_array_equal(t.column("s_2"), t.column("s_2")[0])
    assert r.monitor.report()["frozen_steps"] == 2000
    assert float(r.summary["estimate.lambda_final"]) == pytest.approx(2.0, abs=1e-12)


def test_emit_outputs_round_trip(result, tmp_path):
    files = emit_outputs(result, tmp_path)
    names = {p.name for p in files}
    for suffix in ("csv", "summary", "config", "lambda.dat", "tau_m.dat", "tau_s.dat", "sigma_s.dat", "A_f.dat", "V.dat", "V_hat.dat", "q.dat", "q_hat.dat"):
        assert f"rowat_s5.{suffix}" in names
    back = Trajectory.from_csv((tmp_path / "rowat_s5.csv").read_text())
    assert back.n_samples == result.table.n_samples
    np.testing.assert_array_equal(back.data, result.table.data)
    # the summary is recomputable from the emitted table alone
    assert summarize(back, result.scenario) == result.summary
    assert parse_summary((tmp_path / "rowat_s5.summary").read_text()) == result.summary
    lam = np.loadtxt(tmp_path / "rowat_s5.lambda.dat")
    assert lam.shape == (result.table.n_samples, 2)


def test_emit_outputs_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    emit_outputs(run_closed_loop(short(T=2.0)), a)
    emit_outputs(run_closed_loop(short(T=2.0)), b)
    for f in sorted(a.iterdir()):
        assert f.read_bytes() == (b / f.name).read_bytes()


def test_summary_text_parses_back():
    s = {"a.b": "1.5", "c": "nan"}
    assert parse_summary("# comment\n\n" + summary_text(s)) == s


def test_summary_keys(result):
    s = result.summary
    for key in ("estimate.lambda_final", "physical.tau_m", "error.y_tail_sup", "pi.tail_max", "convergence.lambda_time"):
        assert key in s
    assert s["run.samples"] == "51"
    assert float(s["run.t_final"]) == pytest.approx(5.0)


def test_lambda_convergence_time():
    t = np.arange(6.0)
    assert lambda_convergence_time(t, np.array([3, 2.5, 2.05, 2.3, 2.01, 2.0]), 2.0) == 4.0
    assert lambda_convergence_time(t, np.full(6, 2.0), 2.0) == 0.0
    assert math.isnan(lambda_convergence_time(t, np.array([2, 2, 2, 2, 2, 3.0]), 2.0))


def test_output_dir_precedence(monkeypatch, tmp_path):
    sc = shipped_scenario()
    monkeypatch.delenv("NLOBS_OUT", raising=False)
    assert resolve_output_dir(sc) == sc.output_dir()
    monkeypatch.setenv("NLOBS_OUT", str(tmp_path / "env"))
    assert resolve_output_dir(sc) == tmp_path / "env"
    assert resolve_output_dir(sc, str(tmp_path / "cli")) == tmp_path / "cli"


def test_divergence_raises_with_partial():
    sc = short(T=50.0, h=0.5, every=1, gamma_theta=1e6)
    with pytest.raises(RunDiverged) as info, np.errstate(all="ignore"):
        run_closed_loop(sc)
    assert info.value.partial is None or info.value.partial.labels == TABLE_LABELS


def test_fig1_identical_parameters_agree():
    r = fig1_compare(FIG1_A, FIG1_A, h=1e-2)
    assert all(d["sup_dV"] == 0.0 for d in r["ics"])


def test_fig1_nearly_identical_from_reference_ic():
    r = fig1_compare(h=1e-2)
    first, second = r["ics"]
    # both systems settle on cycles of practically the same amplitude
    assert abs(first["range_V_A"] - first["range_V_C"]) < 0.01
    assert first["sup_dV"] < 0.5
    # the other initial condition separates the phases
    assert second["sup_dV"] > 1.0
    ta, tc = r["traj"][0]
    assert ta.n_samples == tc.n_samples == 3001
