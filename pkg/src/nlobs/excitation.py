"""Sampling diagnostics for the excitation hypotheses.

* lambda-uniform persistency of excitation: minimum eigenvalue of sliding
  window Gramians of the regressor, over a grid of lambda values;
* weak nonlinear persistency of excitation: worst-window suprema of the
  mismatch ``eta`` for a grid of probe parameters, against their distance to
  an empirical indistinguishability set;
* indistinguishability residuals along the observed trajectory.

These check finitely many windows and grid points; they are diagnostics and
certify nothing about the quantifiers over all times and parameters.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .numkit import companion_pair, format_float, rk4_integrate
from .plant import TruthModel

__all__ = [
    "RunContext",
    "ProbeSignals",
    "UPEReport",
    "WNPEReport",
    "IndistinguishabilityScore",
    "EtaFilter",
    "window_gramians",
    "upe_check",
    "regressor_along_run",
    "probe_signals",
    "eta_eval",
    "indist_score",
    "sliding_max",
    "wnpe_probe",
    "estimate_period",
    "default_probe_grid",
    "INDIST_TOL",
]

INDIST_TOL = 1e-9


@dataclass(frozen=True)
class RunContext:
    """A reproducible plant run: the diagnostics re-integrate the plant from
    ``x0`` alongside their own filters on the same RK4 grid."""

    truth: TruthModel
    x0: np.ndarray
    B: np.ndarray
    h: float
    N: int
    record_every: int = 1

    @property
    def dt(self) -> float:
        return self.h * self.record_every

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.N // self.record_every + 1)


@dataclass(frozen=True)
class EtaFilter:
    """Filter ``z' = Lam z + G v`` with ``q = C_tilde z`` and ``z(t0) = 0``."""

    Lam: np.ndarray
    G: np.ndarray
    C_tilde: np.ndarray

    @classmethod
    def from_B(cls, B) -> "EtaFilter":
        B = np.asarray(B, dtype=float)
        if B.size < 2:
            return cls(np.zeros((0, 0)), np.zeros((0, B.size)), np.zeros(0))
        cp = companion_pair(B[1:])
        return cls(cp.Lam, cp.G, cp.C_tilde)

    @property
    def order(self) -> int:
        return self.Lam.shape[0]

    def static_gain(self) -> float:
        if self.order == 0:
            return 0.0
        return float(np.linalg.norm(np.linalg.solve(self.Lam, self.G), 2))


@dataclass(frozen=True)
class ProbeSignals:
    """Signals along the run for one probe ``(lam', theta')``."""

    times: np.ndarray
    phi: np.ndarray
    eta: np.ndarray
    indist: np.ndarray
    z_sup: float
    v_sup: float


def _field_for_probe(ctx: RunContext, lam_p, theta_p, filt: EtaFilter):
    truth = ctx.truth
    spec = truth.spec
    n, m = spec.n, spec.m
    B = np.asarray(ctx.B, dtype=float)
    theta = truth.theta
    lam = truth.lam
    dp = truth.dim
    kM = n * m
    nz = filt.order

    def field(t, X):
        xp = X[:dp]
        M = X[dp : dp + kM].reshape((n, m), order="F")
        z = X[dp + kM :]
        y = float(truth.to_canonical(xp)[0])
        u = spec.u(t)
        P = spec.psi(t, lam_p, y)
        W = np.array(P, dtype=float)
        W[:-1] += M[1:]
        dM = W - np.outer(B, W[0])
        out = np.empty(X.size)
        out[:dp] = truth.field(t, xp)
        out[dp : dp + kM] = dM.ravel(order="F")
        if nz:
            v = (P - spec.psi(t, lam, y)) @ theta + spec.g(t, lam_p, y, u) - spec.g(t, lam, y, u)
            out[dp + kM :] = filt.Lam @ z + filt.G @ v
        return out

    return field


def probe_signals(ctx: RunContext, lam_p, theta_p) -> ProbeSignals:
    """Co-integrate the plant, the probe's own ``M`` filter and the eta filter.

    ``eta = phi(lam')^T (theta' - theta) + C^T (Psi(lam') - Psi(lam)) theta
    + g_1(lam') - g_1(lam) + C_tilde z`` and the indistinguishability
    integrand ``B phi^T (theta' - theta) + (Psi(lam') - Psi(lam)) theta +
    g(lam') - g(lam)`` are sampled on the recording grid.
    """
    truth = ctx.truth
    spec = truth.spec
    n, m = spec.n, spec.m
    lam_p = np.atleast_1d(np.asarray(lam_p, dtype=float))
    theta_p = np.asarray(theta_p, dtype=float)
    if lam_p.shape != (spec.p,) or theta_p.shape != (m,):
        raise ValueError("probe dimensions do not match the plant")
    filt = EtaFilter.from_B(ctx.B)
    dp = truth.dim
    X0 = np.concatenate([np.asarray(ctx.x0, dtype=float), np.zeros(n * m + filt.order)])
    traj = rk4_integrate(_field_for_probe(ctx, lam_p, theta_p, filt), 0.0, X0, ctx.h, ctx.N, record_every=ctx.record_every)
    theta, lam = truth.theta, truth.lam
    B = np.asarray(ctx.B, dtype=float)
    dth = theta_p - theta
    K = traj.n_samples
    phis = np.empty((K, m))
    eta = np.empty(K)
    ind = np.empty(K)
    z_sup = 0.0
    v_sup = 0.0
    ts = traj.times
    for k in range(K):
        X = traj.data[k]
        t = ts[k]
        y = float(truth.to_canonical(X[:dp])[0])
        u = spec.u(t)
        M = X[dp : dp + n * m].reshape((n, m), order="F")
        z = X[dp + n * m :]
        Pp = spec.psi(t, lam_p, y)
        ph = M[1] + Pp[0] if n > 1 else Pp[0].copy()
        phis[k] = ph
        v = (Pp - spec.psi(t, lam, y)) @ theta + spec.g(t, lam_p, y, u) - spec.g(t, lam, y, u)
        q = float(filt.C_tilde @ z) if filt.order else 0.0
        eta[k] = float(ph @ dth) + v[0] + q
        ind[k] = float(np.linalg.norm(B * float(ph @ dth) + v))
        if filt.order:
            z_sup = max(z_sup, float(np.linalg.norm(z)))
        v_sup = max(v_sup, float(np.linalg.norm(v)))
    return ProbeSignals(times=ts, phi=phis, eta=eta, indist=ind, z_sup=z_sup, v_sup=v_sup)


def eta_eval(ctx: RunContext, lam_p, theta_p) -> np.ndarray:
    """``eta`` sampled on the run's recording grid."""
    return probe_signals(ctx, lam_p, theta_p).eta


def regressor_along_run(ctx: RunContext, lam_p) -> np.ndarray:
    """``phi(t, lam')`` along the run (shape ``K x m``)."""
    return probe_signals(ctx, lam_p, ctx.truth.theta).phi


@dataclass(frozen=True)
class IndistinguishabilityScore:
    lam: np.ndarray
    theta: np.ndarray
    residual: float

    @property
    def indistinguishable(self) -> bool:
        return self.residual < INDIST_TOL


def indist_score(ctx: RunContext, lam_p, theta_p) -> IndistinguishabilityScore:
    sig = probe_signals(ctx, lam_p, theta_p)
    return IndistinguishabilityScore(
        lam=np.atleast_1d(np.asarray(lam_p, dtype=float)),
        theta=np.asarray(theta_p, dtype=float),
        residual=float(np.max(sig.indist)),
    )


# --------------------------------------------------------------------------
# lambda-UPE


def window_gramians(phis: np.ndarray, dt: float, w: int, stride: int = 1) -> np.ndarray:
    """Trapezoid-rule Gramians over windows of ``w`` intervals starting every
    ``stride`` samples; shape ``(n_windows, m, m)``."""
    phis = np.asarray(phis, dtype=float)
    K, m = phis.shape
    if w < 1 or w >= K:
        raise ValueError("window must span at least one interval and fit in the run")
    P = phis[:, :, None] * phis[:, None, :]
    cum = np.zeros((K, m, m))
    cum[1:] = np.cumsum(0.5 * dt * (P[:-1] + P[1:]), axis=0)
    starts = np.arange(0, K - w, stride)
    return cum[starts + w] - cum[starts]


@dataclass(frozen=True)
class UPEReport:
    T: float
    lam_grid: np.ndarray
    min_eig: np.ndarray
    mu_hat: float
    threshold: float
    n_windows: int
    dt: float

    @property
    def passed(self) -> bool:
        return self.mu_hat > self.threshold

    def summary_line(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        return f"UPE: T={self.T:.6g} mu={self.mu_hat:.6g} {verdict}({self.threshold:.6g})"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        p = self.lam_grid.shape[1]
        w.writerow([f"lambda_{j + 1}" for j in range(p)] + ["min_eig", "pass"])
        for lam, mu in zip(self.lam_grid, self.min_eig):
            w.writerow([format_float(v) for v in lam] + [format_float(mu), int(mu > self.threshold)])
        return buf.getvalue()


def upe_check(
    phi_source,
    lam_grid,
    T: float,
    dt: float,
    stride: int = 1,
    threshold: float = 0.0,
) -> UPEReport:
    """lambda-UPE diagnostic.

    Parameters
    ----------
    phi_source : callable or sequence
        ``phi_source(lam)`` returning the ``K x m`` regressor samples for one
        grid point, or a sequence of such arrays aligned with ``lam_grid``.
    lam_grid : (G, p) array
    T : float
        Window length; rounded to a whole number of sample intervals.
    dt : float
        Sample spacing.
    stride : int
        Window start spacing in samples.
    threshold : float
        ``mu_hat`` must exceed it to pass.

    Raises
    ------
    ValueError
        If the run is shorter than ``2 T`` or the grid is empty.
    """
    grid = np.asarray(lam_grid, dtype=float)
    if grid.ndim == 1:
        grid = grid[:, None]
    if grid.shape[0] == 0:
        raise ValueError("lambda grid is empty")
    w = int(round(T / dt))
    mins = []
    n_windows = 0
    for i, lam in enumerate(grid):
        ph = phi_source(lam) if callable(phi_source) else phi_source[i]
        ph = np.asarray(ph, dtype=float)
        if ph.ndim == 1:
            ph = ph[:, None]
        if (ph.shape[0] - 1) < 2 * w:
            raise ValueError(f"run of {(ph.shape[0] - 1) * dt:g} time units is shorter than 2T = {2 * T:g}")
        G = window_gramians(ph, dt, w, stride)
        ev = np.linalg.eigvalsh(G)
        mins.append(float(ev[:, 0].min()))
        n_windows += G.shape[0]
    mins = np.array(mins)
    # tiny negative eigenvalues are round-off on a semidefinite matrix
    mins = np.where((mins < 0) & (mins > -1e-10), 0.0, mins)
    return UPEReport(
        T=w * dt,
        lam_grid=grid,
        min_eig=mins,
        mu_hat=float(mins.min()),
        threshold=threshold,
        n_windows=n_windows,
        dt=dt,
    )


def estimate_period(y: np.ndarray, dt: float, skip: float = 0.5) -> float:
    """Mean spacing of upward mean-crossings over the last ``1 - skip`` of ``y``."""
    y = np.asarray(y, dtype=float)
    y = y[int(skip * y.size) :]
    c = y - y.mean()
    idx = np.nonzero((c[:-1] < 0) & (c[1:] >= 0))[0]
    if idx.size < 2:
        raise ValueError("fewer than two crossings: no periodic motion detected")
    frac = -c[idx] / (c[idx + 1] - c[idx])
    tc = (idx + frac) * dt
    return float(np.mean(np.diff(tc)))


# --------------------------------------------------------------------------
# wNPE


def sliding_max(a: np.ndarray, w: int) -> np.ndarray:
    """``out[i] = max(a[i:i+w+1])`` for every full window (van Herk / Gil-Werman)."""
    a = np.asarray(a, dtype=float)
    span = w + 1
    if span > a.size:
        raise ValueError("window longer than the signal")
    nb = -(-a.size // span)
    pad = np.full(nb * span, -np.inf)
    pad[: a.size] = a
    blocks = pad.reshape(nb, span)
    pre = np.maximum.accumulate(blocks, axis=1).ravel()
    suf = np.maximum.accumulate(blocks[:, ::-1], axis=1)[:, ::-1].ravel()
    n_out = a.size - span + 1
    i = np.arange(n_out)
    return np.maximum(suf[i], pre[i + span - 1])


@dataclass(frozen=True)
class WNPEReport:
    L: float
    probes: tuple
    inf_sup: np.ndarray
    dist: np.ndarray
    envelope: np.ndarray
    t1: np.ndarray
    residual: np.ndarray
    skip: float

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        lam0, th0 = self.probes[0]
        head = [f"lambda_{j + 1}" for j in range(len(lam0))] + [f"theta_{j + 1}" for j in range(len(th0))]
        w.writerow(head + ["dist", "inf_sup", "envelope", "t1", "residual", "indistinguishable"])
        for k, (lam, th) in enumerate(self.probes):
            row = [format_float(v) for v in lam] + [format_float(v) for v in th]
            row += [
                format_float(self.dist[k]),
                format_float(self.inf_sup[k]),
                format_float(self.envelope[k]),
                format_float(self.t1[k]),
                format_float(self.residual[k]),
                int(self.residual[k] < INDIST_TOL),
            ]
            w.writerow(row)
        return buf.getvalue()

    def summary_line(self) -> str:
        far = self.dist > 0
        lo = float(self.inf_sup[far].min()) if np.any(far) else float("nan")
        return f"wNPE: L={self.L:.6g} probes={len(self.probes)} min_sup_distinguishable={lo:.6g}"


def wnpe_probe(ctx: RunContext, probes: Sequence, L: float, skip: float = 0.0) -> WNPEReport:
    """Weak nonlinear PE scatter for a grid of probes.

    For each probe the sliding-window supremum of ``|eta|`` over windows of
    length ``L`` starting at ``t >= skip`` is minimized over windows. The
    distance is to ``E_hat``: the truth plus every probe whose
    indistinguishability residual is below ``INDIST_TOL``. The envelope at a
    probe is the smallest worst-window supremum among probes at least as far
    away, hence non-decreasing in distance. ``t1`` is the earliest window
    start after which every window supremum is positive (NaN if none).
    """
    if len(probes) == 0:
        raise ValueError("probe grid is empty")
    truth = ctx.truth
    dt = ctx.dt
    w = int(round(L / dt))
    k0 = int(round(skip / dt))
    norm_probes = []
    inf_sup, t1, resid = [], [], []
    for lam_p, th_p in probes:
        lam_p = np.atleast_1d(np.asarray(lam_p, dtype=float))
        th_p = np.asarray(th_p, dtype=float)
        norm_probes.append((tuple(lam_p.tolist()), tuple(th_p.tolist())))
        sig = probe_signals(ctx, lam_p, th_p)
        sm = sliding_max(np.abs(sig.eta[k0:]), w)
        inf_sup.append(float(sm.min()))
        suffix_min = np.minimum.accumulate(sm[::-1])[::-1]
        pos = np.nonzero(suffix_min > 0)[0]
        t1.append(float((k0 + pos[0]) * dt) if pos.size else float("nan"))
        resid.append(float(np.max(sig.indist)))
    inf_sup = np.array(inf_sup)
    resid = np.array(resid)
    pts = np.array([np.concatenate([lp, tp]) for lp, tp in norm_probes])
    truth_pt = np.concatenate([truth.lam, truth.theta])
    E = [truth_pt] + [pts[k] for k in range(len(pts)) if resid[k] < INDIST_TOL]
    E = np.array(E)
    dist = np.array([float(np.min(np.linalg.norm(E - p, axis=1))) for p in pts])
    order = np.argsort(dist, kind="stable")
    env_sorted = np.minimum.accumulate(inf_sup[order][::-1])[::-1]
    # probes at equal distance share the smallest sup of their group
    d_sorted = dist[order]
    env_sorted = env_sorted[np.searchsorted(d_sorted, d_sorted, side="left")]
    envelope = np.empty_like(inf_sup)
    envelope[order] = env_sorted
    return WNPEReport(
        L=w * dt,
        probes=tuple(norm_probes),
        inf_sup=inf_sup,
        dist=dist,
        envelope=envelope,
        t1=np.array(t1),
        residual=resid,
        skip=k0 * dt,
    )


def default_probe_grid(truth: TruthModel, rel: Sequence[float] = (-0.2, 0.2), lam_offsets: Sequence[float] = (-0.5, 0.5)) -> list:
    """Truth, single-coordinate relative theta perturbations and lambda offsets."""
    th, lam = truth.theta, truth.lam
    grid = [(lam.copy(), th.copy())]
    for k in range(th.size):
        for r in rel:
            t2 = th.copy()
            t2[k] *= 1.0 + r
            grid.append((lam.copy(), t2))
    for j in range(lam.size):
        for d in lam_offsets:
            l2 = lam.copy()
            l2[j] += d
            grid.append((l2, th.copy()))
    return grid

