"""Tuning calculus for the interconnection of a decaying subsystem ``x`` and a
monotone integral subsystem ``h``.

With ``|x(t)| <= beta(t - t0)|x(t0)| + c sup|h| + Delta`` and
``h' = -gamma0(|x + d|_eps + M|h|)``, ``|gamma0(s)| <= D_gamma |s|``, both
stay bounded when

    eps     >= Delta (1 + beta(0) kappa / (kappa - d)) + Delta_d
    D_gamma <= (kappa - 1)/kappa / tau* * h0 / (beta(0)|x0| + h0 (c (1 + kappa beta(0)/(1 - d)) + M))

with ``tau* = beta^{-1}(d / kappa)``. Here ``beta(s) = beta0 exp(-a s)``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

from .numkit import format_float

__all__ = [
    "GainBoundsProblem",
    "GainBoundsResult",
    "Crossing",
    "SynthReport",
    "epsilon_floor",
    "tau_star",
    "dgamma_ceiling",
    "solve",
    "synth_verify",
]


@dataclass(frozen=True)
class GainBoundsProblem:
    beta0: float
    a: float
    c: float
    Delta: float
    M: float
    Delta_d: float = 0.0
    kappa: float = 2.0
    d: float = 0.5
    x0: float = 1.0
    h0: float = 1.0

    def __post_init__(self):
        if not self.beta0 >= 1.0:
            raise ValueError("beta0 must be >= 1")
        if not self.a > 0.0:
            raise ValueError("decay rate a must be positive")
        for name in ("c", "Delta", "M", "Delta_d", "x0"):
            if not getattr(self, name) >= 0.0:
                raise ValueError(f"{name} must be non-negative")
        if not self.kappa > 1.0:
            raise ValueError("kappa must exceed 1")
        if not 0.0 < self.d < 1.0:
            raise ValueError("d must lie in (0, 1)")
        if not self.h0 > 0.0:
            raise ValueError("h0 must be positive")

    def beta(self, s: float) -> float:
        return self.beta0 * math.exp(-self.a * s)

    def beta_inv(self, v: float) -> float:
        return math.log(self.beta0 / v) / self.a


@dataclass(frozen=True)
class GainBoundsResult:
    eps_min: float
    dgamma_max: float
    tau_star: float


def epsilon_floor(p: GainBoundsProblem) -> float:
    return p.Delta * (1.0 + p.beta0 * p.kappa / (p.kappa - p.d)) + p.Delta_d


def tau_star(p: GainBoundsProblem) -> float:
    """``beta^{-1}(d / kappa) = ln(beta0 kappa / d) / a``."""
    assert p.d / p.kappa < p.beta0
    return p.beta_inv(p.d / p.kappa)


def dgamma_ceiling(p: GainBoundsProblem) -> float:
    ts = tau_star(p)
    den = p.beta0 * p.x0 + abs(p.h0) * (p.c * (1.0 + p.kappa * p.beta0 / (1.0 - p.d)) + p.M)
    if den == 0.0:
        # x0 = c = M = 0: nothing drives h, any gain is admissible
        return math.inf
    return (p.kappa - 1.0) / p.kappa / ts * p.h0 / den


def solve(p: GainBoundsProblem) -> GainBoundsResult:
    return GainBoundsResult(eps_min=epsilon_floor(p), dgamma_max=dgamma_ceiling(p), tau_star=tau_star(p))


@dataclass(frozen=True)
class Crossing:
    i: int
    t: float
    T: float
    ok: bool


@dataclass(frozen=True)
class SynthReport:
    D_gamma: float
    eps: float
    tau_star: float
    horizon: float
    step: float
    crossings: tuple
    h_min: float
    h_max: float
    x_max: float
    compliant: bool
    h0: float
    realization: str = ""

    @property
    def h_bounded(self) -> bool:
        return self.h_min >= 0.0 and self.h_max <= self.h0

    @property
    def crossings_ok(self) -> bool:
        return all(c.ok for c in self.crossings)

    @property
    def passed(self) -> bool:
        return self.h_bounded and self.crossings_ok and math.isfinite(self.x_max)

    @property
    def min_T(self) -> float:
        return min((c.T for c in self.crossings), default=float("nan"))

    def crossing_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["i", "t_i", "T_i", "tau_star", "pass"])
        for c in self.crossings:
            w.writerow([c.i, format_float(c.t), format_float(c.T), format_float(self.tau_star), int(c.ok)])
        return buf.getvalue()

    def summary_lines(self) -> list:
        lines = [
            f"realization = {self.realization}",
            f"D_gamma = {self.D_gamma!r}",
            f"eps = {self.eps!r}",
            f"compliant = {self.compliant}",
            f"crossings = {len(self.crossings)}",
            f"min_T = {self.min_T!r}",
            f"tau_star = {self.tau_star!r}",
            f"h_range = [{self.h_min!r}, {self.h_max!r}]",
            f"x_max = {self.x_max!r}",
        ]
        if not self.crossings:
            lines.append("note = horizon too short to observe any crossing")
        lines.append(f"verdict = {'PASS' if self.passed else 'FAIL'}")
        return lines


REALIZATION = (
    "x(t) = beta0 exp(-a (t - t_r)) x(t_r) + c h(t_r) + Delta, restarted at every level "
    "crossing t_r = t_i; d(t) = Delta_d sin t; h' = -D_gamma (|x + d|_eps + M |h|)"
)


def synth_verify(
    p: GainBoundsProblem,
    D_gamma: float,
    eps: float,
    horizon: float = 200.0,
    step: float = 1e-2,
    max_crossings: int = 60,
) -> SynthReport:
    """Simulate one concrete interconnection that meets the hypotheses with equality.

    ``x`` follows the decay bound itself, restarted from its current value at
    each crossing (the worst trajectory the bound admits when applied from
    ``t_i``); since ``h`` is non-increasing, ``sup |h|`` over the current
    stretch is ``h(t_r)``. ``h`` is integrated with RK4. Crossings of the
    levels ``kappa^{-i} h0`` are located by linear interpolation and each
    interval ``T_i = t_i - t_{i-1}`` is checked against ``tau*`` with one step
    of timing tolerance.
    """
    if not (D_gamma > 0 and eps >= 0 and horizon > 0 and step > 0):
        raise ValueError("need D_gamma > 0, eps >= 0, horizon > 0, step > 0")
    ts = tau_star(p)
    compliant = D_gamma <= dgamma_ceiling(p) and eps >= epsilon_floor(p)
    b0, a, c, De, Dd, Mc = p.beta0, p.a, p.c, p.Delta, p.Delta_d, p.M

    t_r, x_r, h_r = 0.0, p.x0, p.h0

    def xval(t):
        return b0 * math.exp(-a * (t - t_r)) * x_r + c * h_r + De

    def hdot(t, h):
        s = abs(xval(t) + Dd * math.sin(t))
        return -D_gamma * (max(s - eps, 0.0) + Mc * abs(h))

    N = int(round(horizon / step))
    h = p.h0
    h_min = h_max = h
    x_max = xval(0.0)
    level_i = 1
    level = p.h0 / p.kappa
    t_prev_cross = 0.0
    crossings = []
    for k in range(N):
        t = k * step
        k1 = hdot(t, h)
        k2 = hdot(t + 0.5 * step, h + 0.5 * step * k1)
        k3 = hdot(t + 0.5 * step, h + 0.5 * step * k2)
        k4 = hdot(t + step, h + step * k3)
        h_new = h + step / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        t_new = t + step
        x_max = max(x_max, xval(t_new))
        while h_new <= level < h and len(crossings) < max_crossings:
            tc = t + step * (h - level) / (h - h_new)
            T = tc - t_prev_cross
            crossings.append(Crossing(i=level_i, t=tc, T=T, ok=T >= ts - step))
            t_prev_cross = tc
            # restart the decay bound from the current value
            x_r = xval(tc)
            t_r = tc
            h_r = level
            level_i += 1
            level = p.h0 / p.kappa**level_i
        h = h_new
        h_min = min(h_min, h)
        h_max = max(h_max, h)
        if not math.isfinite(h):
            break
    return SynthReport(
        D_gamma=D_gamma,
        eps=eps,
        tau_star=ts,
        horizon=N * step,
        step=step,
        crossings=tuple(crossings),
        h_min=h_min,
        h_max=h_max,
        x_max=x_max,
        compliant=compliant,
        h0=p.h0,
        realization=REALIZATION,
    )
