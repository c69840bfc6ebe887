"""Adaptive observer with an oscillator-driven search over the nonlinear parameters.

The linear-in-``theta`` part is handled by a filter ``M`` and a gradient law,

    M'      = (A - B C^T A) M + (I - B C^T) Psi(t, lam_hat, y)
    zeta'   = A zeta + l (y_hat - y) + B phi^T theta_hat + g
    theta'  = -gamma_theta (y_hat - y) phi,     phi^T = C^T A M + C^T Psi

with ``x_hat = zeta + M theta_hat``. The nonlinear parameters ``lam_hat`` are
read off the first coordinate of planar oscillators whose speed is gated by
the dead-zoned output error plus the constraint penalty, so the search
freezes once both fall inside the dead zone.

Observer state vectors are laid out as ``[M column-major | zeta | theta_hat | s]``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .constraints import ConstraintSpec, pi_value
from .numkit import Trajectory, hurwitz
from .plant import PlantSpec, TruthModel

__all__ = [
    "SigmaSpec",
    "ObserverConfig",
    "ObserverState",
    "ClosedLoop",
    "RowatClosedLoop",
    "build_closed_loop",
    "sigma_gate",
    "lambda_decode",
    "lambda_phase",
    "oscillator_field",
    "phi",
    "observer_field",
    "xhat_compose",
    "make_omegas",
    "rationally_independent",
    "observer_labels",
    "residual_check",
]


@dataclass(frozen=True)
class SigmaSpec:
    """Bounded gate ``sigma(v) = M tanh(D v / M)`` with ``sigma <= M`` and ``sigma <= D v``."""

    M: float = 1.0
    D: float = 1.0

    def __post_init__(self):
        if not (self.M > 0 and self.D > 0):
            raise ValueError("sigma bound M and slope D must be positive")


def sigma_gate(spec: SigmaSpec, v: float) -> float:
    if v < 0:
        raise ValueError("gate input must be non-negative")
    return spec.M * math.tanh(spec.D * v / spec.M)


def _primes(k: int) -> list:
    out, c = [], 2
    while len(out) < k:
        if all(c % q for q in out if q * q <= c):
            out.append(c)
        c += 1
    return out


def make_omegas(p: int) -> np.ndarray:
    """Square roots of the first ``p`` primes scaled to unit maximum; ``(1,)`` for ``p = 1``."""
    if p < 1:
        raise ValueError("need p >= 1")
    if p == 1:
        return np.ones(1)
    w = np.sqrt(np.array(_primes(p), dtype=float))
    return w / w[-1]


def rationally_independent(omega: Sequence[float], max_coeff: Optional[int] = None, tol: float = 1e-9) -> bool:
    """Finite check that no integer vector ``k != 0`` with ``|k_j| <= max_coeff``
    gives ``sum k_j omega_j = 0`` (to ``tol`` relative to ``sum |k_j omega_j|``).

    The default coefficient bound keeps the search below about 10^5 vectors.
    A float test cannot certify irrationality; this rejects the practically
    relevant resonances (equal or small-integer-ratio frequencies).
    """
    w = np.asarray(omega, dtype=float).ravel()
    p = w.size
    if p == 1:
        return bool(w[0] != 0.0)
    if max_coeff is None:
        max_coeff = max(1, int((1e5 ** (1.0 / p) - 1) // 2))
    rng = range(-max_coeff, max_coeff + 1)
    for k in itertools.product(rng, repeat=p):
        if not any(k):
            continue
        # skip sign-mirrored duplicates
        first = next(v for v in k if v != 0)
        if first < 0:
            continue
        kk = np.asarray(k, dtype=float)
        if abs(kk @ w) <= tol * (np.abs(kk) @ np.abs(w)):
            return False
    return True


def lambda_decode(s, bounds) -> np.ndarray:
    """Affine map of each odd oscillator coordinate from ``[-1, 1]`` onto its interval.

    Coordinates are clipped to ``[-1, 1]`` first, so integrator drift off the
    unit circle can never take the estimate outside the box.
    """
    s = np.asarray(s, dtype=float)
    b = np.asarray(bounds, dtype=float).reshape(-1, 2)
    odd = np.clip(s[0::2], -1.0, 1.0)
    return b[:, 0] + 0.5 * (b[:, 1] - b[:, 0]) * (odd + 1.0)


def lambda_phase(lam, bounds) -> np.ndarray:
    """Oscillator phases ``phi0`` with ``lambda_decode((cos phi0, sin phi0)) = lam``."""
    b = np.asarray(bounds, dtype=float).reshape(-1, 2)
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    c = 2.0 * (lam - b[:, 0]) / (b[:, 1] - b[:, 0]) - 1.0
    if np.any(np.abs(c) > 1.0):
        raise ValueError("lambda outside its interval")
    return np.arccos(c)


def oscillator_field(s, gate_value: float, gamma: float, omega) -> np.ndarray:
    """Pairwise rotation field scaled by ``gamma * gate_value * omega_j``."""
    s = np.asarray(s, dtype=float)
    omega = np.asarray(omega, dtype=float)
    a, b = s[0::2], s[1::2]
    r2 = a * a + b * b
    k = gamma * gate_value * omega
    out = np.empty_like(s)
    out[0::2] = k * (a - b - a * r2)
    out[1::2] = k * (a + b - b * r2)
    return out


def phi(M, Psi) -> np.ndarray:
    """Regressor ``C^T A M + C^T Psi``: second row of ``M`` plus first row of ``Psi``."""
    M = np.asarray(M, dtype=float)
    Psi = np.asarray(Psi, dtype=float)
    if M.shape[0] == 1:
        return Psi[0].copy()
    return M[1] + Psi[0]


@dataclass(frozen=True)
class ObserverConfig:
    """Gains and search settings.

    Parameters
    ----------
    B : (n,) array
        ``col(1, b_1, ..., b_{n-1})``; the ``b`` polynomial must be Hurwitz.
    l : (n,) array
        Output injection; ``A + l C^T`` must be Hurwitz.
    gamma_theta, gamma, eps : float
        Gradient gain, search gain and gate dead-zone width, all positive.
    sigma : SigmaSpec
    omega : (p,) array
        Oscillator frequencies, positive and rationally independent.
    lambda_bounds : (p, 2) array
    constraint : ConstraintSpec, optional
        Adds the dead-zoned penalty to the gate input.
    renormalize : bool
        Project each oscillator pair back onto the unit circle after a step
        when its radius has drifted by more than 1e-9.
    search : bool
        If false the oscillators are frozen (``lam_hat`` pinned at its
        initial value) whatever the gate does.
    """

    B: np.ndarray
    l: np.ndarray
    gamma_theta: float
    gamma: float
    eps: float
    sigma: SigmaSpec
    omega: np.ndarray
    lambda_bounds: np.ndarray
    constraint: Optional[ConstraintSpec] = None
    renormalize: bool = True
    search: bool = True

    def __post_init__(self):
        B = np.atleast_1d(np.asarray(self.B, dtype=float)).copy()
        l = np.atleast_1d(np.asarray(self.l, dtype=float)).copy()
        omega = np.atleast_1d(np.asarray(self.omega, dtype=float)).copy()
        lb = np.asarray(self.lambda_bounds, dtype=float).reshape(-1, 2).copy()
        n = B.size
        if l.size != n:
            raise ValueError(f"l has length {l.size}, B has length {n}")
        if B[0] != 1.0:
            raise ValueError("B must have first entry 1")
        if n > 1 and not hurwitz(B[1:]):
            raise ValueError(f"b = {B[1:].tolist()} is not Hurwitz")
        if not np.all(np.linalg.eigvals(_shift(n) + np.outer(l, _e1(n))).real < 0):
            raise ValueError("A + l C^T is not Hurwitz")
        for name in ("gamma_theta", "gamma", "eps"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be positive, got {v}")
        if omega.size != lb.shape[0]:
            raise ValueError("need one frequency per lambda coordinate")
        if np.any(omega <= 0):
            raise ValueError("frequencies must be positive")
        if not rationally_independent(omega):
            raise ValueError(f"frequencies {omega.tolist()} are rationally dependent")
        if np.any(lb[:, 0] >= lb[:, 1]):
            raise ValueError("lambda intervals must have min < max")
        for arr in (B, l, omega, lb):
            arr.setflags(write=False)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "l", l)
        object.__setattr__(self, "omega", omega)
        object.__setattr__(self, "lambda_bounds", lb)

    @property
    def n(self) -> int:
        return self.B.size

    @property
    def p(self) -> int:
        return self.omega.size


def _shift(n: int) -> np.ndarray:
    return np.eye(n, k=1)


def _e1(n: int) -> np.ndarray:
    e = np.zeros(n)
    e[0] = 1.0
    return e


@dataclass
class ObserverState:
    M: np.ndarray
    zeta: np.ndarray
    theta_hat: np.ndarray
    s: np.ndarray

    @classmethod
    def initial(cls, n: int, m: int, zeta0, theta0, phase0) -> "ObserverState":
        """``M(t0) = 0`` and oscillators on the unit circle at phases ``phase0``."""
        phase0 = np.atleast_1d(np.asarray(phase0, dtype=float))
        s = np.empty(2 * phase0.size)
        s[0::2] = np.cos(phase0)
        s[1::2] = np.sin(phase0)
        return cls(
            M=np.zeros((n, m)),
            zeta=np.array(zeta0, dtype=float).reshape(n),
            theta_hat=np.array(theta0, dtype=float).reshape(m),
            s=s,
        )

    def pack(self) -> np.ndarray:
        return np.concatenate([self.M.ravel(order="F"), self.zeta, self.theta_hat, self.s])

    @classmethod
    def unpack(cls, vec, n: int, m: int, p: int) -> "ObserverState":
        vec = np.asarray(vec, dtype=float)
        if vec.size != n * m + n + m + 2 * p:
            raise ValueError("observer vector has the wrong length")
        k = n * m
        return cls(
            M=vec[:k].reshape((n, m), order="F").copy(),
            zeta=vec[k : k + n].copy(),
            theta_hat=vec[k + n : k + n + m].copy(),
            s=vec[k + n + m :].copy(),
        )


def observer_labels(n: int, m: int, p: int) -> tuple:
    labs = [f"M_{i + 1}_{j + 1}" for j in range(m) for i in range(n)]
    labs += [f"zeta_{i + 1}" for i in range(n)]
    labs += [f"theta_hat_{i + 1}" for i in range(m)]
    labs += [f"s_{i + 1}" for i in range(2 * p)]
    return tuple(labs)


def xhat_compose(state: ObserverState) -> np.ndarray:
    return state.zeta + state.M @ state.theta_hat


class _Kernel:
    """Observer right-hand side on packed vectors, with the last gate value kept."""

    def __init__(self, cfg: ObserverConfig, spec: PlantSpec):
        if spec.n != cfg.n or spec.p != cfg.p:
            raise ValueError("observer and plant dimensions disagree")
        self.cfg = cfg
        self.spec = spec
        n, m, p = spec.n, spec.m, spec.p
        self.n, self.m, self.p = n, m, p
        self.kM = n * m
        self.kz = self.kM + n
        self.kt = self.kz + m
        self.size = self.kt + 2 * p
        lb = cfg.lambda_bounds
        self.lo = lb[:, 0].copy()
        self.half = 0.5 * (lb[:, 1] - lb[:, 0])
        self.gate_max = 0.0

    def penalty(self, theta_hat, lam) -> float:
        c = self.cfg.constraint
        return 0.0 if c is None else pi_value(c, theta_hat, lam)

    def lam(self, s) -> np.ndarray:
        return self.lo + self.half * (np.clip(s[0::2], -1.0, 1.0) + 1.0)

    def gate(self, e: float, theta_hat, lam) -> tuple:
        cfg = self.cfg
        pv = self.penalty(theta_hat, lam)
        v = max(abs(e) - cfg.eps, 0.0) + max(abs(pv) - cfg.eps, 0.0)
        return pv, cfg.sigma.M * math.tanh(cfg.sigma.D * v / cfg.sigma.M)

    def __call__(self, t: float, ov: np.ndarray, y: float, u: float) -> np.ndarray:
        cfg, spec = self.cfg, self.spec
        n, m = self.n, self.m
        M = ov[: self.kM].reshape((n, m), order="F")
        zeta = ov[self.kM : self.kz]
        th = ov[self.kz : self.kt]
        s = ov[self.kt :]
        lam = self.lam(s)
        Psi = spec.psi(t, lam, y)
        W = np.array(Psi, dtype=float)
        W[:-1] += M[1:]
        ph = W[0]
        dM = W - np.outer(cfg.B, ph)
        e = zeta[0] - y
        dz = np.empty(n)
        dz[:-1] = zeta[1:]
        dz[-1] = 0.0
        dz += cfg.l * e + cfg.B * (ph @ th)
        if not spec.g_is_zero:
            dz += spec.g(t, lam, y, u)
        dth = (-cfg.gamma_theta * e) * ph
        out = np.empty(self.size)
        out[: self.kM] = dM.ravel(order="F")
        out[self.kM : self.kz] = dz
        out[self.kz : self.kt] = dth
        if cfg.search:
            _, g = self.gate(e, th, lam)
            if g > self.gate_max:
                self.gate_max = g
            if g == 0.0:
                out[self.kt :] = 0.0
            else:
                a, b = s[0::2], s[1::2]
                r2 = a * a + b * b
                k = (cfg.gamma * g) * cfg.omega
                out[self.kt :: 2] = k * (a - b - a * r2)
                out[self.kt + 1 :: 2] = k * (a + b - b * r2)
        else:
            out[self.kt :] = 0.0
        return out

    def renormalize(self, ov: np.ndarray) -> np.ndarray:
        s = ov[self.kt :]
        a, b = s[0::2], s[1::2]
        r = np.sqrt(a * a + b * b)
        bad = np.abs(r - 1.0) > 1e-9
        if np.any(bad):
            ov = ov.copy()
            idx = np.nonzero(bad)[0]
            ov[self.kt + 2 * idx] = a[idx] / r[idx]
            ov[self.kt + 2 * idx + 1] = b[idx] / r[idx]
        return ov


def observer_field(cfg: ObserverConfig, spec: PlantSpec, y: float, state, t: float, u: Optional[float] = None):
    """Time derivative of the observer given the measured output ``y``.

    ``state`` is an :class:`ObserverState` or a packed vector; the result has
    the same form.
    """
    k = _Kernel(cfg, spec)
    uu = spec.u(t) if u is None else u
    if isinstance(state, ObserverState):
        d = k(t, state.pack(), float(y), uu)
        return ObserverState.unpack(d, spec.n, spec.m, spec.p)
    return k(t, np.asarray(state, dtype=float), float(y), uu)


class ClosedLoop:
    """Plant in its own coordinates co-integrated with the observer.

    The packed vector is ``[plant state | observer state]``; the observer sees
    only ``y``, the first canonical coordinate of the plant.
    """

    def __init__(self, truth: TruthModel, cfg: ObserverConfig):
        self.truth = truth
        self.cfg = cfg
        self.kernel = _Kernel(cfg, truth.spec)
        self.np_ = truth.dim
        self.size = self.np_ + self.kernel.size
        self.labels = tuple(truth.labels) + observer_labels(truth.spec.n, truth.spec.m, truth.spec.p)

    def initial(self, plant0, obs0: ObserverState) -> np.ndarray:
        return np.concatenate([np.asarray(plant0, dtype=float), obs0.pack()])

    def output(self, xp) -> float:
        return float(self.truth.to_canonical(xp)[0])

    def field(self, t: float, X: np.ndarray) -> np.ndarray:
        xp = X[: self.np_]
        out = np.empty(self.size)
        out[: self.np_] = self.truth.field(t, xp)
        out[self.np_ :] = self.kernel(t, X[self.np_ :], self.output(xp), self.truth.spec.u(t))
        return out

    def post_step(self, X: np.ndarray) -> np.ndarray:
        if not self.cfg.renormalize:
            return X
        ov_in = X[self.np_ :]
        ov = self.kernel.renormalize(ov_in)
        if ov is ov_in:
            return X
        return np.concatenate([X[: self.np_], ov])

    def split(self, X) -> tuple:
        X = np.asarray(X, dtype=float)
        k = self.kernel
        st = ObserverState.unpack(X[self.np_ :], k.n, k.m, k.p)
        return X[: self.np_], st

    def diagnostics(self, t: float, X) -> dict:
        """Derived quantities at one packed state."""
        xp, st = self.split(X)
        k = self.kernel
        lam = k.lam(st.s)
        y = self.output(xp)
        e = st.zeta[0] - y
        pv, g = k.gate(e, st.theta_hat, lam)
        if not self.cfg.search:
            g = 0.0
        return {
            "y": y,
            "y_hat": float(st.zeta[0]),
            "x_hat": xhat_compose(st),
            "lambda_hat": lam,
            "pi_value": pv,
            "gate_value": g,
        }


class RowatClosedLoop(ClosedLoop):
    """Same closed loop as :class:`ClosedLoop`, specialized to the Rowat plant
    with scalar arithmetic (several times faster for n = 2, m = 4, p = 1)."""

    def __init__(self, truth: TruthModel, cfg: ObserverConfig):
        if truth.rowat is None or truth.spec.n != 2 or truth.spec.m != 4 or truth.spec.p != 1:
            raise ValueError("RowatClosedLoop needs a Rowat truth model")
        if not truth.spec.g_is_zero:
            raise ValueError("RowatClosedLoop assumes g = 0")
        super().__init__(truth, cfg)
        rp = truth.rowat
        self._c = (rp.tau_m, rp.tau_s, rp.sigma_s, rp.sigma_f / rp.A_f, rp.A_f)
        self._xi = truth.spec.xi if truth.spec.delta_xi > 0.0 else None

    def field(self, t: float, X: np.ndarray) -> np.ndarray:
        tm, ts, ss, kf, af = self._c
        cfg = self.cfg
        V, q, _, m21, _, m22, _, m23, _, m24, z1, z2, t1, t2, t3, t4, s1, s2 = X.tolist()
        dV = (-V - q + af * math.tanh(kf * V)) / tm
        dq = (ss * V - q) / ts
        if self._xi is not None:
            d = self._xi(t)
            dV += d[0]
            dq += (tm / ts) * d[0] - tm * d[1]
        y = V
        lo, half = self.kernel.lo[0], self.kernel.half[0]
        c1 = -1.0 if s1 < -1.0 else (1.0 if s1 > 1.0 else s1)
        lam = lo + half * (c1 + 1.0)
        tl = math.tanh(lam * y)
        p1, p2, p3, p4 = m21 + y, m22 + tl, m23, m24
        b1, b2 = cfg.B.tolist()
        l1, l2 = cfg.l.tolist()
        e = z1 - y
        pt = p1 * t1 + p2 * t2 + p3 * t3 + p4 * t4
        ge = -cfg.gamma_theta * e
        ds1 = ds2 = 0.0
        if cfg.search:
            if cfg.constraint is None:
                pv = 0.0
            else:
                pv = pi_value(cfg.constraint, (t1, t2, t3, t4), lam)
            eps = cfg.eps
            v = max(abs(e) - eps, 0.0) + max(abs(pv) - eps, 0.0)
            sg = cfg.sigma
            g = sg.M * math.tanh(sg.D * v / sg.M)
            if g > self.kernel.gate_max:
                self.kernel.gate_max = g
            if g != 0.0:
                r2 = s1 * s1 + s2 * s2
                k = cfg.gamma * g * cfg.omega.item(0)
                ds1 = k * (s1 - s2 - s1 * r2)
                ds2 = k * (s1 + s2 - s2 * r2)
        return np.array(
            [
                dV,
                dq,
                0.0,
                -b2 * p1,
                0.0,
                -b2 * p2,
                0.0,
                y - b2 * p3,
                0.0,
                tl - b2 * p4,
                z2 + l1 * e + b1 * pt,
                l2 * e + b2 * pt,
                ge * p1,
                ge * p2,
                ge * p3,
                ge * p4,
                ds1,
                ds2,
            ]
        )


def build_closed_loop(truth: TruthModel, cfg: ObserverConfig) -> ClosedLoop:
    """Scalar fast path for the Rowat plant, generic loop otherwise."""
    if truth.rowat is not None and truth.spec.g_is_zero:
        return RowatClosedLoop(truth, cfg)
    return ClosedLoop(truth, cfg)


def residual_check(traj: Trajectory, loop: ClosedLoop) -> float:
    """Max discrepancy between centered differences of the error ``(e1, e2)``
    and the right-hand side of the error system along a recorded run.

    ``e1 = zeta - x + M theta`` and ``e2 = theta_hat - theta``; their
    dynamics are

        e1' = (A + l C^T) e1 + B phi^T e2 + v
        e2' = -gamma_theta phi C^T e1,

    with ``v = (Psi(lam_hat) - Psi(lam)) theta + g(lam_hat) - g(lam) - xi``.
    The trajectory must hold the full packed state of ``loop`` at uniform
    spacing. The result is O(h^2) in the sample spacing.
    """
    if traj.n_samples < 3:
        raise ValueError("trajectory too short for centered differences")
    truth, cfg, spec = loop.truth, loop.cfg, loop.truth.spec
    n = spec.n
    theta, lam = truth.theta, truth.lam
    Al = _shift(n) + np.outer(cfg.l, _e1(n))
    ts = traj.times
    E = []
    R = []
    for k in range(traj.n_samples):
        X = traj.data[k]
        t = ts[k]
        xp, st = loop.split(X)
        x = truth.to_canonical(xp)
        y = x[0]
        lh = loop.kernel.lam(st.s)
        e1 = st.zeta - x + st.M @ theta
        e2 = st.theta_hat - theta
        E.append(np.concatenate([e1, e2]))
        if k == 0 or k == traj.n_samples - 1:
            R.append(None)
            continue
        Ph = spec.psi(t, lh, y)
        ph = phi(st.M, Ph)
        u = spec.u(t)
        v = (Ph - spec.psi(t, lam, y)) @ theta + spec.g(t, lh, y, u) - spec.g(t, lam, y, u) - spec.xi(t)
        de1 = Al @ e1 + cfg.B * (ph @ e2) + v
        de2 = -cfg.gamma_theta * ph * e1[0]
        R.append(np.concatenate([de1, de2]))
    E = np.asarray(E)
    h = traj.h
    worst = 0.0
    for k in range(1, traj.n_samples - 1):
        fd = (E[k + 1] - E[k - 1]) / (2.0 * h)
        worst = max(worst, float(np.max(np.abs(fd - R[k]))))
    return worst
