"""Canonical plant class and the Rowat-Selverston reference oscillator.

The canonical class is

    x' = A x + Psi(t, lam, y) theta + g(t, lam, y, u) + xi(t),   y = x[0]

with ``A`` the upward shift. The Rowat-Selverston model lives in physical
coordinates ``(V, q)`` and maps into the canonical class through an exact
linear change of coordinates and a nonlinear reparameterization
``(tau_m, tau_s, sigma_s, sigma_f, A_f) <-> (theta, lam)``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .numkit import bisect_roots, format_float

__all__ = [
    "OutOfChart",
    "PlantSpec",
    "RowatParams",
    "CanonicalParams",
    "Equilibrium",
    "zero_disturbance",
    "SineDisturbance",
    "NoiseDisturbance",
    "rowat_field",
    "rowat_jacobian",
    "to_canonical",
    "from_canonical",
    "physical_from_canonical",
    "state_to_canonical",
    "state_from_canonical",
    "rowat_psi",
    "rowat_g",
    "rowat_plant_spec",
    "canonical_field",
    "TruthModel",
    "rowat_truth",
    "canonical_truth",
    "classify_planar",
    "equilibria",
    "origin_charpoly",
    "bifurcation_scan",
    "bifurcation_csv",
    "EQUILIBRIUM_CODES",
]

CHART_TOL = 1e-9
EQUILIBRIUM_CODES = ("SADDLE", "UNODE", "SNODE", "UFOCUS", "SFOCUS", "NONHYPERBOLIC")


class OutOfChart(ValueError):
    """Canonical parameters that do not map back to physical parameters."""


# --------------------------------------------------------------------------
# disturbances


def zero_disturbance(n: int) -> Callable[[float], np.ndarray]:
    z = np.zeros(n)
    z.setflags(write=False)
    return lambda t: z


@dataclass(frozen=True)
class SineDisturbance:
    """``xi(t) = amplitude * sin(freq t + phase)`` on one state coordinate."""

    n: int
    amplitude: float
    freq: float = 1.0
    phase: float = 0.0
    coord: int = 0

    def __call__(self, t: float) -> np.ndarray:
        out = np.zeros(self.n)
        out[self.coord] = self.amplitude * math.sin(self.freq * t + self.phase)
        return out

    @property
    def bound(self) -> float:
        return abs(self.amplitude)


class NoiseDisturbance:
    """Seeded uniform noise, held piecewise constant over ``hold`` time units
    and clipped so that ``||xi(t)|| <= bound``.

    Values are a pure function of ``(seed, floor(t / hold))``; blocks are
    generated on demand from one generator stream so any evaluation order
    yields the same signal.
    """

    _BLOCK = 4096

    def __init__(self, n: int, bound: float, seed: int = 0, hold: float = 0.1):
        if bound < 0 or hold <= 0:
            raise ValueError("noise bound must be >= 0 and hold > 0")
        self.n = n
        self.bound = float(bound)
        self.seed = int(seed)
        self.hold = float(hold)
        self._rng = np.random.default_rng(self.seed)
        self._table = np.empty((0, n))

    def _extend(self, upto: int) -> None:
        while self._table.shape[0] <= upto:
            blk = self._rng.uniform(-self.bound, self.bound, size=(self._BLOCK, self.n))
            norms = np.linalg.norm(blk, axis=1)
            over = norms > self.bound
            blk[over] *= (self.bound / norms[over])[:, None]
            self._table = np.vstack([self._table, blk])

    def __call__(self, t: float) -> np.ndarray:
        k = max(int(math.floor(t / self.hold)), 0)
        if k >= self._table.shape[0]:
            self._extend(k)
        return self._table[k]


# --------------------------------------------------------------------------
# canonical plant class


def _zero_input(t: float) -> float:
    return 0.0


@dataclass(frozen=True)
class PlantSpec:
    """A member of the canonical plant class.

    ``theta_bounds`` is ``m x 2`` and ``lambda_bounds`` is ``p x 2``, one
    ``[min, max]`` row per coordinate.
    """

    n: int
    m: int
    p: int
    psi: Callable[[float, np.ndarray, float], np.ndarray]
    g: Callable[[float, np.ndarray, float, float], np.ndarray]
    xi: Callable[[float], np.ndarray]
    delta_xi: float
    theta_bounds: np.ndarray
    lambda_bounds: np.ndarray
    u: Callable[[float], float] = _zero_input
    g_is_zero: bool = False

    def __post_init__(self):
        tb = np.asarray(self.theta_bounds, dtype=float).reshape(self.m, 2)
        lb = np.asarray(self.lambda_bounds, dtype=float).reshape(self.p, 2)
        if np.any(tb[:, 0] > tb[:, 1]) or np.any(lb[:, 0] > lb[:, 1]):
            raise ValueError("parameter intervals must satisfy min <= max")
        tb.setflags(write=False)
        lb.setflags(write=False)
        object.__setattr__(self, "theta_bounds", tb)
        object.__setattr__(self, "lambda_bounds", lb)
        if self.n < 1 or self.m < 1 or self.p < 1:
            raise ValueError("dimensions must be positive")
        lam = lb.mean(axis=1)
        P = np.asarray(self.psi(0.0, lam, 0.0))
        if P.shape != (self.n, self.m):
            raise ValueError(f"psi returns shape {P.shape}, expected {(self.n, self.m)}")
        G = np.asarray(self.g(0.0, lam, 0.0, self.u(0.0)))
        if G.shape != (self.n,):
            raise ValueError(f"g returns shape {G.shape}, expected {(self.n,)}")
        X = np.asarray(self.xi(0.0))
        if X.shape != (self.n,):
            raise ValueError(f"xi returns shape {X.shape}, expected {(self.n,)}")
        if self.delta_xi < 0:
            raise ValueError("disturbance bound must be non-negative")

    def disturbance_within_bound(self, times: Sequence[float]) -> bool:
        return all(np.linalg.norm(self.xi(t)) <= self.delta_xi * (1 + 1e-12) for t in times)


def canonical_field(spec: PlantSpec, theta, lam, x, t: float) -> np.ndarray:
    """``A x + Psi theta + g + xi`` with ``y = x[0]``."""
    x = np.asarray(x, dtype=float)
    if x.shape != (spec.n,):
        raise ValueError(f"state has shape {x.shape}, expected {(spec.n,)}")
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    theta = np.asarray(theta, dtype=float)
    y = x[0]
    dx = np.empty(spec.n)
    dx[:-1] = x[1:]
    dx[-1] = 0.0
    dx += spec.psi(t, lam, y) @ theta
    dx += spec.g(t, lam, y, spec.u(t))
    dx += spec.xi(t)
    return dx


# --------------------------------------------------------------------------
# Rowat-Selverston model


@dataclass(frozen=True)
class RowatParams:
    tau_m: float
    tau_s: float
    sigma_s: float
    sigma_f: float
    A_f: float

    @property
    def valid(self) -> bool:
        vals = (self.tau_m, self.tau_s, self.sigma_s, self.sigma_f, self.A_f)
        return all(math.isfinite(v) for v in vals) and self.tau_m > 0 and self.tau_s > 0 and self.A_f > 0

    def require_valid(self) -> "RowatParams":
        if not self.valid:
            raise ValueError(f"invalid Rowat parameters {self}: need tau_m, tau_s, A_f > 0")
        return self

    def as_dict(self) -> dict:
        return {
            "tau_m": self.tau_m,
            "tau_s": self.tau_s,
            "sigma_s": self.sigma_s,
            "sigma_f": self.sigma_f,
            "A_f": self.A_f,
        }


@dataclass(frozen=True)
class CanonicalParams:
    theta: tuple
    lam: float

    def __post_init__(self):
        object.__setattr__(self, "theta", tuple(float(v) for v in self.theta))
        if len(self.theta) != 4:
            raise ValueError("Rowat canonical parameters have four theta entries")


def rowat_field(p: RowatParams, state, t: float = 0.0) -> np.ndarray:
    V, q = float(state[0]), float(state[1])
    dV = (-V - q + p.A_f * math.tanh(p.sigma_f / p.A_f * V)) / p.tau_m
    dq = (p.sigma_s * V - q) / p.tau_s
    return np.array([dV, dq])


def rowat_jacobian(p: RowatParams, state) -> np.ndarray:
    V = float(state[0])
    sech2 = 1.0 - math.tanh(p.sigma_f / p.A_f * V) ** 2
    return np.array(
        [
            [(-1.0 + p.sigma_f * sech2) / p.tau_m, -1.0 / p.tau_m],
            [p.sigma_s / p.tau_s, -1.0 / p.tau_s],
        ]
    )


def to_canonical(p: RowatParams) -> CanonicalParams:
    p.require_valid()
    tm, ts = p.tau_m, p.tau_s
    theta = (
        -1.0 / tm - 1.0 / ts,
        p.A_f / tm,
        (-1.0 - p.sigma_s) / (ts * tm),
        p.A_f / (ts * tm),
    )
    return CanonicalParams(theta=theta, lam=p.sigma_f / p.A_f)


def physical_from_canonical(theta, lam) -> tuple:
    """Raw inverse map ``(theta, lam) -> (tau_m, tau_s, sigma_s, sigma_f, A_f)``.

    No positivity check is made, so estimates that wander into non-physical
    regions still produce numbers. Raises :class:`OutOfChart` near the
    singular set ``theta_4 = 0`` or ``theta_1 + theta_4/theta_2 = 0``.
    """
    t1, t2, t3, t4 = theta.tolist() if isinstance(theta, np.ndarray) else map(float, theta)
    if isinstance(lam, np.ndarray):
        lam = lam.item(0)
    elif isinstance(lam, (list, tuple)):
        lam = float(lam[0])
    else:
        lam = float(lam)
    if abs(t4) < CHART_TOL or abs(t2) < CHART_TOL:
        raise OutOfChart("theta_4 (or theta_2) vanishes")
    tau_s = t2 / t4
    den = t1 + 1.0 / tau_s
    if abs(den) < CHART_TOL:
        raise OutOfChart("theta_1 + theta_4/theta_2 vanishes")
    tau_m = -1.0 / den
    A_f = t2 * tau_m
    sigma_s = -t3 * tau_s * tau_m - 1.0
    sigma_f = lam * A_f
    return tau_m, tau_s, sigma_s, sigma_f, A_f


def from_canonical(c: CanonicalParams) -> RowatParams:
    tau_m, tau_s, sigma_s, sigma_f, A_f = physical_from_canonical(c.theta, c.lam)
    return RowatParams(tau_m=tau_m, tau_s=tau_s, sigma_s=sigma_s, sigma_f=sigma_f, A_f=A_f)


def state_to_canonical(p: RowatParams, state) -> np.ndarray:
    V, q = float(state[0]), float(state[1])
    return np.array([V, V / p.tau_s - q / p.tau_m])


def state_from_canonical(p: RowatParams, x) -> np.ndarray:
    x1, x2 = float(x[0]), float(x[1])
    return np.array([x1, (p.tau_m / p.tau_s) * x1 - p.tau_m * x2])


def rowat_psi(y: float, lam) -> np.ndarray:
    lam = float(np.ravel(lam)[0]) if np.ndim(lam) else float(lam)
    th = math.tanh(lam * y)
    return np.array([[y, th, 0.0, 0.0], [0.0, 0.0, y, th]])


def rowat_g() -> np.ndarray:
    return np.zeros(2)


_G_ZERO = np.zeros(2)
_G_ZERO.setflags(write=False)


def rowat_plant_spec(
    theta_bounds=((-12.0, -4.0), (2.0, 10.0), (-5.0, -0.5), (0.2, 2.0)),
    lambda_bounds=((1.0, 3.0),),
    xi: Optional[Callable[[float], np.ndarray]] = None,
    delta_xi: float = 0.0,
) -> PlantSpec:
    """PlantSpec for the Rowat model in canonical coordinates (n=2, m=4, p=1)."""

    def psi(t, lam, y):
        th = math.tanh(lam[0] * y)
        return np.array([[y, th, 0.0, 0.0], [0.0, 0.0, y, th]])

    def g(t, lam, y, u):
        return _G_ZERO

    return PlantSpec(
        n=2,
        m=4,
        p=1,
        psi=psi,
        g=g,
        xi=xi if xi is not None else zero_disturbance(2),
        delta_xi=delta_xi,
        theta_bounds=np.asarray(theta_bounds, dtype=float),
        lambda_bounds=np.asarray(lambda_bounds, dtype=float),
        g_is_zero=True,
    )


@dataclass(frozen=True)
class TruthModel:
    """A simulated plant together with its true canonical parameters.

    ``field(t, xp)`` integrates the plant in its native coordinates ``xp``;
    ``to_canonical(xp)`` is the exact change of coordinates into the
    canonical class described by ``spec``, whose first entry is the output.
    """

    spec: PlantSpec
    theta: np.ndarray
    lam: np.ndarray
    field: Callable[[float, np.ndarray], np.ndarray]
    to_canonical: Callable[[np.ndarray], np.ndarray]
    labels: tuple
    rowat: Optional[RowatParams] = None

    @property
    def dim(self) -> int:
        return len(self.labels)


def rowat_truth(p: RowatParams, spec: Optional[PlantSpec] = None) -> TruthModel:
    """Rowat plant in ``(V, q)``; the disturbance of ``spec`` is pulled back through
    the linear state map so the canonical image obeys the canonical field."""
    p.require_valid()
    spec = spec if spec is not None else rowat_plant_spec()
    c = to_canonical(p)
    tm, ts = p.tau_m, p.tau_s
    a, k = p.A_f, p.sigma_f / p.A_f
    xi = spec.xi
    has_xi = spec.delta_xi > 0.0

    def field(t, xp):
        V, q = xp[0], xp[1]
        dV = (-V - q + a * math.tanh(k * V)) / tm
        dq = (p.sigma_s * V - q) / ts
        if has_xi:
            d = xi(t)
            dV += d[0]
            dq += (tm / ts) * d[0] - tm * d[1]
        return np.array([dV, dq])

    def to_can(xp):
        return np.array([xp[0], xp[0] / ts - xp[1] / tm])

    return TruthModel(
        spec=spec,
        theta=np.array(c.theta),
        lam=np.array([c.lam]),
        field=field,
        to_canonical=to_can,
        labels=("V", "q"),
        rowat=p,
    )


def canonical_truth(spec: PlantSpec, theta, lam) -> TruthModel:
    """Plant simulated directly in canonical coordinates."""
    theta = np.asarray(theta, dtype=float)
    lam = np.atleast_1d(np.asarray(lam, dtype=float))

    def field(t, x):
        return canonical_field(spec, theta, lam, x, t)

    return TruthModel(
        spec=spec,
        theta=theta,
        lam=lam,
        field=field,
        to_canonical=lambda x: np.asarray(x, dtype=float),
        labels=tuple(f"x{i + 1}" for i in range(spec.n)),
    )


# --------------------------------------------------------------------------
# equilibria and bifurcations


@dataclass(frozen=True)
class Equilibrium:
    V: float
    q: float
    eigenvalues: tuple
    kind: str


def classify_planar(J: np.ndarray) -> str:
    """Classify a planar linearization from its trace, determinant and discriminant."""
    tr = float(J[0, 0] + J[1, 1])
    det = float(J[0, 0] * J[1, 1] - J[0, 1] * J[1, 0])
    disc = tr * tr - 4.0 * det
    if det < 0.0:
        return "SADDLE"
    if det == 0.0 or tr == 0.0:
        return "NONHYPERBOLIC"
    if disc >= 0.0:
        return "UNODE" if tr > 0.0 else "SNODE"
    return "UFOCUS" if tr > 0.0 else "SFOCUS"


def equilibria(p: RowatParams, grid_points: int = 6001) -> list:
    """All equilibria of the Rowat model, sorted by ``V``.

    Equilibria satisfy ``q = sigma_s V`` and ``(1 + sigma_s) V = A_f tanh(sigma_f V / A_f)``;
    the scan covers ``|V| <= 3 A_f``.
    """
    p.require_valid()
    a, sf, ss = p.A_f, p.sigma_f, p.sigma_s

    def f(V):
        return a * math.tanh(sf / a * V) - (1.0 + ss) * V

    roots = bisect_roots(f, -3.0 * a, 3.0 * a, grid_points)
    out = []
    for V in roots:
        q = ss * V
        J = rowat_jacobian(p, (V, q))
        eig = np.linalg.eigvals(J)
        eig = tuple(sorted(eig.tolist(), key=lambda z: (z.real, z.imag)))
        eig = tuple(complex(z).real if complex(z).imag == 0 else complex(z) for z in eig)
        out.append(Equilibrium(V=V, q=q, eigenvalues=eig, kind=classify_planar(J)))
    return out


def origin_charpoly(p: RowatParams) -> tuple:
    """Coefficients ``(a1, a0)`` of ``s^2 + a1 s + a0`` at the origin and the discriminant."""
    p.require_valid()
    a1 = (1.0 - p.sigma_f) / p.tau_m + 1.0 / p.tau_s
    a0 = (1.0 - p.sigma_f + p.sigma_s) / (p.tau_s * p.tau_m)
    return a1, a0, a1 * a1 - 4.0 * a0


def bifurcation_scan(
    sigma_s_values: Sequence[float],
    sigma_f: float,
    A_f: float,
    tau_m: float,
    tau_s: float,
    grid_points: int = 6001,
) -> list:
    """Equilibria for each ``sigma_s`` on the grid, in grid order.

    Returns a list of ``(sigma_s, [Equilibrium, ...])`` pairs.
    """
    rows = []
    for ss in sigma_s_values:
        p = RowatParams(tau_m=tau_m, tau_s=tau_s, sigma_s=float(ss), sigma_f=sigma_f, A_f=A_f)
        rows.append((float(ss), equilibria(p, grid_points)))
    return rows


def bifurcation_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["sigma_s", "n_equilibria", "V_e_1", "V_e_2", "V_e_3", "class_1", "class_2", "class_3"])
    for ss, eqs in rows:
        vals = [format_float(e.V) for e in eqs[:3]] + [""] * (3 - min(len(eqs), 3))
        kinds = [e.kind for e in eqs[:3]] + [""] * (3 - min(len(eqs), 3))
        w.writerow([format_float(ss), len(eqs)] + vals + kinds)
    return buf.getvalue()
