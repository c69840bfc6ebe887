"""Parametric constraints encoded as a non-negative penalty ``pi(theta, lam)``.

Each strict inequality ``u_i(theta, lam) > 0`` is turned into a smooth
penalty ``|(1 + tanh(-u_i - 3)) / 2|_eps``, which vanishes once the margin
clears ``u* = -3 - atanh(2 eps - 1)`` and is positive below it. ``pi`` is the
sum of the penalties.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import minimize

from .plant import OutOfChart, physical_from_canonical

__all__ = [
    "EPS_PI_MAX",
    "DEFAULT_EPS_PI",
    "ConstraintSpec",
    "LipschitzEstimate",
    "penalty",
    "penalty_threshold",
    "rowat_margins",
    "rowat_constraint",
    "rowat_discriminant",
    "ROWAT_D_REGULAR",
    "pi_value",
    "lipschitz_estimate",
]

EPS_PI_MAX = (1.0 + math.tanh(-3.0)) / 2.0
# The true Rowat parameters have u3 ~ 0.0822; eps_pi = 0.002 puts u* at
# ~0.106 and leaves a ~1e-4 floor in f3. 0.0022 moves u* to ~0.059.
DEFAULT_EPS_PI = 0.0022


def penalty(u: float, eps_pi: float) -> float:
    """Dead-zoned smooth step: positive for ``u < u*``, zero for ``u >= u*``."""
    # the smooth step is non-negative, so the dead-zone needs no abs
    return max(0.5 * (1.0 + math.tanh(-u - 3.0)) - eps_pi, 0.0)


def penalty_threshold(eps_pi: float) -> float:
    """Margin ``u*`` above which :func:`penalty` is exactly zero."""
    _check_eps_pi(eps_pi)
    return -3.0 - math.atanh(2.0 * eps_pi - 1.0)


def _check_eps_pi(eps_pi: float) -> None:
    if not 0.0 < eps_pi < EPS_PI_MAX:
        raise ValueError(f"eps_pi must lie in (0, {EPS_PI_MAX:.7f}), got {eps_pi}")


def rowat_margins(theta, lam, u1_literal: bool = False) -> tuple:
    """Signed margins ``(u1, u2, u3)`` of the three Rowat feasibility conditions.

    ``u1`` encodes three equilibria (``sigma_f - sigma_s - 1``; the literal
    printed form ``sigma_s - sigma_f + 1`` with ``u1_literal``), ``u2`` is
    the discriminant of the origin's characteristic polynomial and ``u3``
    the margin for opposite-sign real eigenvalues, ``-|u2|`` when ``u2 <= 0``.

    Raises :class:`OutOfChart` for singular canonical parameters.
    """
    tau_m, tau_s, sigma_s, sigma_f, _ = physical_from_canonical(theta, lam)
    u1 = (sigma_s - sigma_f + 1.0) if u1_literal else (sigma_f - sigma_s - 1.0)
    a1 = (1.0 - sigma_f) / tau_m + 1.0 / tau_s
    D = a1 * a1 - 4.0 * (1.0 - sigma_f + sigma_s) / (tau_s * tau_m)
    u3 = math.sqrt(D) - abs(a1) if D > 0.0 else -abs(D)
    return u1, D, u3


@dataclass(frozen=True)
class ConstraintSpec:
    """Penalty assembly. ``margins`` maps ``(theta, lam)`` to the signed margins
    of every constraint, or raises :class:`OutOfChart`.

    ``regular`` optionally marks the part of parameter space on which ``pi``
    is Lipschitz; :func:`lipschitz_estimate` only probes inside it.
    """

    margins: Callable[[np.ndarray, np.ndarray], Sequence[float]]
    eps_pi: float = DEFAULT_EPS_PI
    offchart_ceiling: float = 1.0
    names: tuple = ()
    L1: Optional[float] = None
    L2: Optional[float] = None
    regular: Optional[Callable[[np.ndarray, np.ndarray], bool]] = None

    def __post_init__(self):
        _check_eps_pi(self.eps_pi)
        if not self.offchart_ceiling >= 0:
            raise ValueError("off-chart ceiling must be non-negative")

    def penalties(self, theta, lam) -> Optional[tuple]:
        try:
            us = self.margins(theta, lam)
        except OutOfChart:
            return None
        e = self.eps_pi
        return tuple(max(0.5 * (1.0 + math.tanh(-u - 3.0)) - e, 0.0) for u in us)

    def with_lipschitz(self, est: "LipschitzEstimate") -> "ConstraintSpec":
        return replace(self, L1=est.L1, L2=est.L2)


ROWAT_D_REGULAR = 1.0


def rowat_discriminant(theta, lam) -> float:
    """Discriminant of the origin's characteristic polynomial in canonical form,
    ``s^2 - (t1 + lam t2) s - (t3 + lam t4)``; equals ``u2`` wherever the chart
    is defined."""
    t1, t2, t3, t4 = (float(v) for v in theta)
    la = float(np.ravel(lam)[0]) if np.ndim(lam) else float(lam)
    b = t1 + la * t2
    return b * b + 4.0 * (t3 + la * t4)


def rowat_constraint(
    eps_pi: float = DEFAULT_EPS_PI,
    u1_literal: bool = False,
    offchart_ceiling: float = 1.0,
    d_regular: float = ROWAT_D_REGULAR,
) -> ConstraintSpec:
    """Rowat constraint set. ``u3`` jumps across ``D = 0`` and ``sqrt(D)`` has
    unbounded slope as ``D -> 0+``, so the regular region is ``D >= d_regular``."""

    def margins(theta, lam):
        return rowat_margins(theta, lam, u1_literal)

    def regular(theta, lam):
        return rowat_discriminant(theta, lam) >= d_regular

    return ConstraintSpec(
        margins=margins,
        eps_pi=eps_pi,
        offchart_ceiling=offchart_ceiling,
        names=("equilibria", "discriminant", "eigen_signs"),
        regular=regular,
    )


def pi_value(spec: ConstraintSpec, theta, lam) -> float:
    """Sum of penalties, or the off-chart ceiling when the margins are undefined."""
    f = spec.penalties(theta, lam)
    if f is None:
        return spec.offchart_ceiling
    return math.fsum(f)


@dataclass(frozen=True)
class LipschitzEstimate:
    L1: float
    L2: float
    samples: int
    coverage: float
    seed: int
    regular_fraction: float = 1.0


def lipschitz_estimate(
    spec: ConstraintSpec,
    theta_bounds,
    lambda_bounds,
    samples: int = 4000,
    seed: int = 0,
    refine: int = 12,
    max_evals: int = 1500,
) -> LipschitzEstimate:
    """Sampled Lipschitz constants of ``pi`` in ``theta`` and in ``lam``.

    Inside the regular region ``pi`` is continuous and piecewise smooth, so
    each constant is the supremum of the corresponding partial gradient norm.
    Gradients are taken by central differences (one-sided at box faces) at
    uniform base points; the ``refine`` largest per group start a bounded
    Nelder-Mead ascent on the gradient norm. Points outside the chart or
    outside ``spec.regular`` are skipped; ``coverage`` is the in-chart
    fraction of base draws and ``regular_fraction`` the fraction that was
    also regular.

    The result is a lower estimate: the largest gradient norm found.
    """
    if samples < 1000:
        raise ValueError("need at least 1000 samples")
    tb = np.asarray(theta_bounds, dtype=float).reshape(-1, 2)
    lb = np.asarray(lambda_bounds, dtype=float).reshape(-1, 2)
    m = tb.shape[0]
    box = np.vstack([tb, lb])
    lo, hi = box[:, 0], box[:, 1]
    width = np.maximum(hi - lo, 1e-12)
    rng = np.random.default_rng(seed)
    reg = spec.regular

    def f(z):
        th, la = z[:m], z[m:]
        if reg is not None and not reg(th, la):
            return None
        v = spec.penalties(th, la)
        return None if v is None else math.fsum(v)

    groups = (range(m), range(m, box.shape[0]))

    def grad_norm(z, which):
        g = []
        for k in groups[which]:
            d = 1e-7 * width[k]
            a = z.copy()
            b = z.copy()
            a[k] = min(z[k] + d, hi[k])
            b[k] = max(z[k] - d, lo[k])
            fa, fb = f(a), f(b)
            if fa is None or fb is None:
                return None
            g.append((fa - fb) / (a[k] - b[k]))
        return math.sqrt(math.fsum(x * x for x in g))

    cands = ([], [])
    in_chart = regular = 0
    for _ in range(samples):
        z = rng.uniform(lo, hi)
        if spec.penalties(z[:m], z[m:]) is not None:
            in_chart += 1
        if f(z) is None:
            continue
        regular += 1
        for which in (0, 1):
            gn = grad_norm(z, which)
            if gn is not None:
                cands[which].append((gn, z))

    bounds = list(zip(lo.tolist(), hi.tolist()))
    L = [0.0, 0.0]
    for which in (0, 1):
        top = sorted(cands[which], key=lambda c: -c[0])[:refine]

        def objective(u, which=which):
            v = grad_norm(np.clip(u, lo, hi), which)
            return 0.0 if v is None else -v

        for gn, z in top:
            res = minimize(
                objective,
                z,
                method="Nelder-Mead",
                bounds=bounds,
                options={"xatol": 1e-9, "fatol": 1e-9, "maxfev": max_evals},
            )
            L[which] = max(L[which], gn, -float(res.fun))
    return LipschitzEstimate(
        L1=L[0],
        L2=L[1],
        samples=samples,
        coverage=in_chart / samples,
        seed=seed,
        regular_fraction=regular / samples,
    )
