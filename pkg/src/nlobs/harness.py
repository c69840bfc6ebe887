"""Closed-loop experiments, derived tables, summaries and output files."""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .numkit import IntegrationError, Trajectory, format_float, rk4_integrate
from .observer import ClosedLoop, ObserverState, build_closed_loop
from .plant import OutOfChart, RowatParams, physical_from_canonical, rowat_field, state_to_canonical
from .scenario import Scenario

__all__ = [
    "TABLE_LABELS",
    "RunResult",
    "RunDiverged",
    "InvariantMonitor",
    "build_loop",
    "run_closed_loop",
    "make_table",
    "summarize",
    "summary_text",
    "parse_summary",
    "emit_outputs",
    "lambda_convergence_time",
    "compare_constraints",
    "simulate_plant",
    "fig1_compare",
    "resolve_output_dir",
]

TABLE_LABELS = (
    "V",
    "q",
    "y",
    "y_hat",
    "x1_hat",
    "x2_hat",
    "theta_hat_1",
    "theta_hat_2",
    "theta_hat_3",
    "theta_hat_4",
    "lambda_hat",
    "pi_value",
    "gate_value",
    "s_1",
    "s_2",
)
PHYSICAL_KEYS = ("tau_m", "tau_s", "sigma_s", "sigma_f", "A_f")
TAIL_FRACTION = 0.1
FINAL_FRACTION = 0.05
LAMBDA_TOL = 0.1


class RunDiverged(RuntimeError):
    def __init__(self, message: str, t: float, partial: Optional[Trajectory]):
        super().__init__(message)
        self.t = t
        self.partial = partial


@dataclass(frozen=True)
class RunResult:
    scenario: Scenario
    raw: Trajectory
    table: Trajectory
    summary: dict
    monitor: Optional["InvariantMonitor"] = None


class InvariantMonitor:
    """Per-step checks of the observer's structural invariants.

    After every RK4 step it records the largest first-row entry of ``M``, the
    largest oscillator radius drift ``|r^2 - 1|``, whether ``lam_hat`` stayed
    in its box, and whether ``s`` was left bitwise unchanged on every step
    whose four stage gates were all zero.
    """

    def __init__(self, loop: ClosedLoop):
        self.loop = loop
        k = loop.kernel
        off = loop.np_
        self.row0 = np.array([off + j * k.n for j in range(k.m)])
        self.s_idx = slice(off + k.kt, off + k.size)
        self.lo = loop.cfg.lambda_bounds[:, 0]
        self.hi = loop.cfg.lambda_bounds[:, 1]
        self.m_row0_max = 0.0
        self.radius_drift_max = 0.0
        self.lambda_in_box = True
        self.frozen_steps = 0
        self.frozen_violations = 0
        self.steps = 0
        self._s_prev = None

    def start(self, X0: np.ndarray) -> None:
        self._s_prev = X0[self.s_idx].copy()
        self.loop.kernel.gate_max = 0.0
        self._check(X0)

    def _check(self, X):
        self.m_row0_max = max(self.m_row0_max, float(np.max(np.abs(X[self.row0]))))
        s = X[self.s_idx]
        r2 = s[0::2] ** 2 + s[1::2] ** 2
        self.radius_drift_max = max(self.radius_drift_max, float(np.max(np.abs(r2 - 1.0))))
        lam = self.loop.kernel.lam(s)
        if np.any(lam < self.lo) or np.any(lam > self.hi):
            self.lambda_in_box = False

    def __call__(self, k: int, t: float, X: np.ndarray) -> None:
        self.steps += 1
        self._check(X)
        s = X[self.s_idx]
        if self.loop.kernel.gate_max == 0.0:
            self.frozen_steps += 1
            if not np.array_equal(s, self._s_prev):
                self.frozen_violations += 1
        self._s_prev = s.copy()
        self.loop.kernel.gate_max = 0.0

    def report(self) -> dict:
        return {
            "steps": self.steps,
            "m_row0_max": self.m_row0_max,
            "radius_drift_max": self.radius_drift_max,
            "lambda_in_box": self.lambda_in_box,
            "frozen_steps": self.frozen_steps,
            "frozen_violations": self.frozen_violations,
        }


def build_loop(sc: Scenario) -> tuple:
    """Closed loop, packed initial state and step count for a scenario."""
    truth = sc.truth()
    cfg = sc.observer_config()
    loop = build_closed_loop(truth, cfg)
    obs0 = ObserverState.initial(truth.spec.n, truth.spec.m, sc.initial_zeta(), sc.initial_theta(), sc.observer.phase0)
    X0 = loop.initial([sc.plant.V0, sc.plant.q0], obs0)
    return loop, X0, sc.integration.N


def make_table(loop: ClosedLoop, raw: Trajectory) -> Trajectory:
    """Run table in the fixed column schema, derived row by row from the packed states."""
    rows = np.empty((raw.n_samples, len(TABLE_LABELS)))
    ts = raw.times
    for k in range(raw.n_samples):
        X = raw.data[k]
        d = loop.diagnostics(ts[k], X)
        xp, st = loop.split(X)
        rows[k, 0:2] = xp
        rows[k, 2] = d["y"]
        rows[k, 3] = d["y_hat"]
        rows[k, 4:6] = d["x_hat"]
        rows[k, 6:10] = st.theta_hat
        rows[k, 10] = d["lambda_hat"][0]
        rows[k, 11] = d["pi_value"]
        rows[k, 12] = d["gate_value"]
        rows[k, 13:15] = st.s
    return Trajectory(t0=raw.t0, h=raw.h, data=rows, labels=TABLE_LABELS)


def run_closed_loop(sc: Scenario, monitor: bool = False) -> RunResult:
    """Co-integrate plant and observer on one RK4 clock and summarize the run.

    Raises
    ------
    RunDiverged
        On a non-finite state; ``partial`` is the run table up to that point.
    """
    loop, X0, N = build_loop(sc)
    mon = InvariantMonitor(loop) if monitor else None
    if mon is not None:
        mon.start(X0)
    try:
        raw = rk4_integrate(
            loop.field,
            0.0,
            X0,
            sc.integration.h,
            N,
            on_sample=mon,
            record_every=sc.integration.record_every,
            labels=loop.labels,
            post_step=loop.post_step if sc.observer.renormalize else None,
        )
    except IntegrationError as exc:
        part = make_table(loop, exc.partial) if exc.partial is not None else None
        raise RunDiverged(str(exc), exc.t, part) from None
    table = make_table(loop, raw)
    return RunResult(scenario=sc, raw=raw, table=table, summary=summarize(table, sc), monitor=mon)


def _physical(theta, lam) -> Optional[tuple]:
    try:
        return physical_from_canonical(theta, lam)
    except OutOfChart:
        return None


def lambda_convergence_time(times: np.ndarray, lam_hat: np.ndarray, lam_true: float, tol: float = LAMBDA_TOL) -> float:
    """First recorded time after which ``|lam_hat - lam_true| <= tol`` holds to the end; NaN if never."""
    bad = np.nonzero(np.abs(lam_hat - lam_true) > tol)[0]
    if bad.size == 0:
        return float(times[0])
    if bad[-1] == lam_hat.size - 1:
        return float("nan")
    return float(times[bad[-1] + 1])


def summarize(table: Trajectory, sc: Scenario) -> dict:
    """Tail statistics over the last 10% of the recorded samples.

    Computed from the run table and the scenario's true parameters only, so
    re-parsing an emitted CSV reproduces it exactly.
    """
    truth_p = sc.plant.params
    c = sc.truth_canonical()
    lam_true = c.lam
    ts = table.times
    K = table.n_samples
    k0 = min(int(math.floor((1.0 - TAIL_FRACTION) * (K - 1))), K - 1)
    tail = slice(k0, K)
    col = table.column
    lam_hat = col("lambda_hat")
    th = table.columns([f"theta_hat_{i}" for i in range(1, 5)])
    V, q = col("V"), col("q")
    x2 = np.array([state_to_canonical(truth_p, (V[k], q[k]))[1] for k in range(K)])
    ex = np.hypot(col("x1_hat") - V, col("x2_hat") - x2)
    ey = np.abs(col("y_hat") - col("y"))

    s = {}
    s["run.t_final"] = format_float(ts[-1])
    s["run.samples"] = str(K)
    s["run.tail_start"] = format_float(ts[k0])
    s["estimate.lambda_final"] = format_float(lam_hat[-1])
    s["estimate.lambda_tail"] = format_float(float(np.mean(lam_hat[tail])))
    s["estimate.lambda_tail_maxdev"] = format_float(float(np.max(np.abs(lam_hat[tail] - lam_true))))
    for i in range(4):
        s[f"estimate.theta_hat_{i + 1}"] = format_float(th[-1, i])
    truth_vals = truth_p.as_dict()
    final = _physical(th[-1], lam_hat[-1])
    maxrel = {k: 0.0 for k in PHYSICAL_KEYS}
    for k in range(k0, K):
        ph = _physical(th[k], lam_hat[k])
        for j, key in enumerate(PHYSICAL_KEYS):
            if ph is None:
                maxrel[key] = math.inf
            else:
                maxrel[key] = max(maxrel[key], abs(ph[j] - truth_vals[key]) / abs(truth_vals[key]))
    for j, key in enumerate(PHYSICAL_KEYS):
        s[f"physical.{key}"] = format_float(final[j]) if final is not None else "nan"
    for key in PHYSICAL_KEYS:
        s[f"physical.{key}_tail_maxrel"] = format_float(maxrel[key])
    s["error.y_tail_sup"] = format_float(float(np.max(ey[tail])))
    s["error.x_tail_sup"] = format_float(float(np.max(ex[tail])))
    s["error.epsilon"] = format_float(sc.observer.epsilon)
    s["pi.tail_max"] = format_float(float(np.max(col("pi_value")[tail])))
    s["gate.tail_max"] = format_float(float(np.max(col("gate_value")[tail])))
    s["convergence.lambda_time"] = format_float(lambda_convergence_time(ts, lam_hat, lam_true))
    s["constraints.enabled"] = "true" if sc.constraints.enabled else "false"
    return s


def summary_text(summary: dict) -> str:
    return "".join(f"{k} = {v}\n" for k, v in summary.items())


def parse_summary(text: str) -> dict:
    out = {}
    for line in text.splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        k, v = line.split(" = ", 1)
        out[k] = v
    return out


def resolve_output_dir(sc: Scenario, out: Optional[str] = None) -> Path:
    """``--out`` wins, then ``NLOBS_OUT``, then the scenario's own directory."""
    if out:
        return Path(out)
    env = os.environ.get("NLOBS_OUT")
    if env:
        return Path(env)
    return sc.output_dir()


def _dat(path: Path, t: np.ndarray, v: np.ndarray) -> None:
    with open(path, "w", newline="\n") as fh:
        for a, b in zip(t, v):
            fh.write(f"{a:.17g} {b:.17g}\n")


def _physical_series(table: Trajectory) -> np.ndarray:
    th = table.columns([f"theta_hat_{i}" for i in range(1, 5)])
    lam = table.column("lambda_hat")
    out = np.full((table.n_samples, 5), np.nan)
    for k in range(table.n_samples):
        ph = _physical(th[k], lam[k])
        if ph is not None:
            out[k] = ph
    return out


def emit_outputs(result: RunResult, out_dir, stem: Optional[str] = None) -> list:
    """Write the run CSV, the summary, the effective configuration and the plot-data files.

    Plot data (two columns ``t value``): ``lambda``, ``tau_m``, ``tau_s``,
    ``sigma_s``, ``A_f`` over the whole run, and ``V``, ``V_hat``, ``q``,
    ``q_hat`` over the final 5%, where ``q_hat`` maps the state estimate back
    with the current parameter estimates.
    """
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out_dir}: {exc}") from exc
    stem = stem or result.scenario.stem()
    table = result.table
    written = []

    def put(name: str, text: str):
        p = out_dir / name
        try:
            with open(p, "w", newline="\n") as fh:
                fh.write(text)
        except OSError as exc:
            raise OSError(f"cannot write {p}: {exc}") from exc
        written.append(p)

    put(f"{stem}.csv", table.to_csv())
    put(f"{stem}.summary", summary_text(result.summary))
    put(f"{stem}.config", result.scenario.effective_config())
    t = table.times
    phys = _physical_series(table)
    series = {"lambda": table.column("lambda_hat")}
    for j, key in enumerate(PHYSICAL_KEYS):
        if key != "sigma_f":
            series[key] = phys[:, j]
    K = table.n_samples
    k0 = min(int(math.floor((1.0 - FINAL_FRACTION) * (K - 1))), K - 1)
    V = table.column("V")[k0:]
    q = table.column("q")[k0:]
    x1h = table.column("x1_hat")[k0:]
    x2h = table.column("x2_hat")[k0:]
    tm, ts_ = phys[k0:, 0], phys[k0:, 1]
    q_hat = (tm / ts_) * x1h - tm * x2h
    for name, v, tt in [(k, v, t) for k, v in series.items()] + [
        ("V", V, t[k0:]),
        ("V_hat", x1h, t[k0:]),
        ("q", q, t[k0:]),
        ("q_hat", q_hat, t[k0:]),
    ]:
        p = out_dir / f"{stem}.{name}.dat"
        _dat(p, tt, v)
        written.append(p)
    return written


def compare_constraints(sc: Scenario) -> tuple:
    """Run the scenario with and without the constraint penalty.

    Returns ``(with_result, without_result, report)`` where ``report`` holds
    ``key = value`` comparison entries.
    """
    with_c = sc if sc.constraints.enabled else sc.with_changes("constraints", enabled=True)
    without = sc.with_changes("constraints", enabled=False)
    without = replace(without, outputs=replace(without.outputs, stem=with_c.stem() + "_noconstraints"))
    r1 = run_closed_loop(with_c)
    r2 = run_closed_loop(without)
    rep = {
        "with.convergence.lambda_time": r1.summary["convergence.lambda_time"],
        "without.convergence.lambda_time": r2.summary["convergence.lambda_time"],
        "with.estimate.lambda_final": r1.summary["estimate.lambda_final"],
        "without.estimate.lambda_final": r2.summary["estimate.lambda_final"],
        "with.error.y_tail_sup": r1.summary["error.y_tail_sup"],
        "without.error.y_tail_sup": r2.summary["error.y_tail_sup"],
    }
    times = r1.table.times
    lam_true = sc.truth_canonical().lam
    for frac in (0.1, 0.2, 0.5):
        k = int(round(frac * (r1.table.n_samples - 1)))
        rep[f"with.lambda_dev_at_{format_float(times[k])}"] = format_float(abs(r1.table.column("lambda_hat")[k] - lam_true))
        rep[f"without.lambda_dev_at_{format_float(times[k])}"] = format_float(abs(r2.table.column("lambda_hat")[k] - lam_true))
    return r1, r2, rep


def simulate_plant(p: RowatParams, x0, h: float, T: float, record_every: int = 1) -> Trajectory:
    """Rowat model alone in ``(V, q)``."""
    p.require_valid()
    N = int(round(T / h))
    return rk4_integrate(lambda t, x: rowat_field(p, x, t), 0.0, np.asarray(x0, dtype=float), h, N, record_every=record_every, labels=("V", "q"))


FIG1_A = RowatParams(tau_m=0.1666, tau_s=5.0, sigma_s=0.9, sigma_f=2.0, A_f=1.0)
FIG1_C = RowatParams(tau_m=0.2062, tau_s=6.1881, sigma_s=1.1, sigma_f=2.0, A_f=1.0)
FIG1_ICS = ((1.0, 0.0), (0.199729, 0.179756))


def fig1_compare(
    pa: RowatParams = FIG1_A,
    pc: RowatParams = FIG1_C,
    ics=FIG1_ICS,
    T: float = 30.0,
    h: float = 1e-3,
) -> dict:
    """``sup_t |V_A(t) - V_C(t)|`` over ``[0, T]`` for each initial condition.

    Returns a dict with per-IC entries ``sup_dV``, ``final_V_A``,
    ``final_V_C`` plus the trajectories under ``traj``.
    """
    out = {"T": T, "h": h, "ics": [], "traj": []}
    for ic in ics:
        ta = simulate_plant(pa, ic, h, T)
        tc = simulate_plant(pc, ic, h, T)
        dv = np.abs(ta.column("V") - tc.column("V"))
        out["ics"].append(
            {
                "V0": ic[0],
                "q0": ic[1],
                "sup_dV": float(dv.max()),
                "final_V_A": float(ta.column("V")[-1]),
                "final_V_C": float(tc.column("V")[-1]),
                "range_V_A": float(np.ptp(ta.column("V")[len(dv) // 2 :])),
                "range_V_C": float(np.ptp(tc.column("V")[len(dv) // 2 :])),
            }
        )
        out["traj"].append((ta, tc))
    return out
