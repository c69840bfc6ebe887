"""Shared numerics: dead-zone norms, Hurwitz/companion utilities, fixed-step RK4,
bracketing root finder and the uniform-grid trajectory container."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

__all__ = [
    "IntegrationError",
    "CompanionPair",
    "Trajectory",
    "deadzone",
    "deadzone_vec",
    "hurwitz",
    "companion_pair",
    "rk4_step",
    "rk4_integrate",
    "bisect_roots",
    "format_float",
]


class IntegrationError(RuntimeError):
    """Raised when a state becomes non-finite during integration.

    The partial trajectory up to the last finite sample is attached as
    ``partial`` so callers can persist it.
    """

    def __init__(self, message: str, t: float, partial: Optional["Trajectory"] = None):
        super().__init__(message)
        self.t = t
        self.partial = partial


def deadzone(a, eps):
    """Scalar dead-zone norm ``max(|a| - eps, 0)``; works elementwise on arrays
    (``a`` and ``eps`` broadcast)."""
    if isinstance(a, (float, int)) and isinstance(eps, (float, int)):
        if eps < 0:
            raise ValueError("dead-zone width must be non-negative")
        return max(abs(a) - eps, 0.0)
    if np.any(np.asarray(eps) < 0):
        raise ValueError("dead-zone width must be non-negative")
    return np.maximum(np.abs(a) - eps, 0.0)


def deadzone_vec(v, eps: float) -> float:
    """Dead-zone applied to the Euclidean norm of ``v``."""
    if eps < 0:
        raise ValueError("dead-zone width must be non-negative")
    return max(float(np.linalg.norm(np.asarray(v, dtype=float))) - eps, 0.0)


def _poly_companion(b: np.ndarray) -> np.ndarray:
    # companion of the monic s^k + b1 s^{k-1} + ... + bk
    k = b.size
    C = np.zeros((k, k))
    C[:, 0] = -b
    if k > 1:
        C[: k - 1, 1:] = np.eye(k - 1)
    return C


def hurwitz(b: Sequence[float]) -> bool:
    """True iff ``s^k + b1 s^{k-1} + ... + bk`` has all roots in Re s < 0."""
    b = np.atleast_1d(np.asarray(b, dtype=float))
    if b.size == 0:
        raise ValueError("coefficient vector must be nonempty")
    if not np.all(np.isfinite(b)):
        return False
    eig = np.linalg.eigvals(_poly_companion(b))
    return bool(np.all(eig.real < 0.0))


@dataclass(frozen=True)
class CompanionPair:
    """Filter matrices built from the observer coefficient vector ``b``.

    ``Lam`` is ``(n-1)x(n-1)`` with first column ``-b`` and the shifted
    identity to its right, ``G = (-b | I_{n-1})`` and ``C_tilde`` selects
    the first filter coordinate.
    """

    b: np.ndarray
    Lam: np.ndarray
    G: np.ndarray
    C_tilde: np.ndarray

    @property
    def order(self) -> int:
        return self.b.size


def companion_pair(b: Sequence[float]) -> CompanionPair:
    b = np.atleast_1d(np.asarray(b, dtype=float)).copy()
    if not hurwitz(b):
        raise ValueError(f"coefficients {b.tolist()} do not define a Hurwitz polynomial")
    k = b.size
    Lam = _poly_companion(b)
    G = np.hstack([-b.reshape(k, 1), np.eye(k)])
    C_tilde = np.zeros(k)
    C_tilde[0] = 1.0
    for arr in (b, Lam, G, C_tilde):
        arr.setflags(write=False)
    return CompanionPair(b=b, Lam=Lam, G=G, C_tilde=C_tilde)


def format_float(x: float) -> str:
    """17 significant digits, round-trippable; empty string for NaN."""
    if x != x:
        return ""
    return f"{x:.17g}"


@dataclass(frozen=True)
class Trajectory:
    """Samples on a uniform grid ``t0 + k*h`` for ``k = 0..N-1``."""

    t0: float
    h: float
    data: np.ndarray
    labels: tuple = field(default=())

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError("grid spacing must be positive")
        data = np.asarray(self.data, dtype=float)
        if data.ndim != 2:
            raise ValueError("trajectory samples must be a 2-D array")
        if self.labels and len(self.labels) != data.shape[1]:
            raise ValueError("label count does not match sample width")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "labels", tuple(self.labels))

    @property
    def n_samples(self) -> int:
        return self.data.shape[0]

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.h * np.arange(self.n_samples)

    def column(self, label: str) -> np.ndarray:
        return self.data[:, self.labels.index(label)]

    def columns(self, labels: Sequence[str]) -> np.ndarray:
        idx = [self.labels.index(lab) for lab in labels]
        return self.data[:, idx]

    def to_csv(self, include_time: bool = True) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        header = (["t"] if include_time else []) + list(self.labels)
        w.writerow(header)
        times = self.times
        for k in range(self.n_samples):
            row = [format_float(times[k])] if include_time else []
            row.extend(format_float(v) for v in self.data[k])
            w.writerow(row)
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "Trajectory":
        rows = list(csv.reader(io.StringIO(text)))
        header, body = rows[0], rows[1:]
        if header[0] != "t":
            raise ValueError("first CSV column must be 't'")
        arr = np.array([[float(c) if c != "" else np.nan for c in r] for r in body])
        t = arr[:, 0]
        h = float(t[1] - t[0]) if len(t) > 1 else 1.0
        if len(t) > 2 and not np.allclose(np.diff(t), h, rtol=1e-9, atol=1e-12):
            raise ValueError("CSV time column is not uniformly spaced")
        return cls(t0=float(t[0]), h=h, data=arr[:, 1:], labels=tuple(header[1:]))


Field = Callable[[float, np.ndarray], np.ndarray]


def rk4_step(f: Field, t: float, x: np.ndarray, h: float) -> np.ndarray:
    k1 = f(t, x)
    k2 = f(t + 0.5 * h, x + (0.5 * h) * k1)
    k3 = f(t + 0.5 * h, x + (0.5 * h) * k2)
    k4 = f(t + h, x + h * k3)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def rk4_integrate(
    f: Field,
    t0: float,
    x0,
    h: float,
    N: int,
    on_sample: Optional[Callable[[int, float, np.ndarray], Optional[np.ndarray]]] = None,
    record_every: int = 1,
    labels: Sequence[str] = (),
    post_step: Optional[Callable[[np.ndarray], np.ndarray]] = None,
) -> Trajectory:
    """Classical fixed-step RK4 from ``t0`` for ``N`` steps.

    Returns samples at every ``record_every``-th step including the initial
    state, so the trajectory holds ``N // record_every + 1`` rows.

    ``on_sample(k, t, x)`` is called after every step (``k`` is the step
    count, ``t = t0 + k*h``). ``post_step(x)`` may project the state after
    each step (e.g. renormalization) and must return the new state.

    Raises
    ------
    IntegrationError
        If the state turns non-finite; ``partial`` holds the samples recorded
        so far.
    """
    if not h > 0:
        raise ValueError("step size must be positive")
    if N < 0:
        raise ValueError("step count must be non-negative")
    if record_every < 1:
        raise ValueError("record_every must be >= 1")
    x = np.array(x0, dtype=float).reshape(-1)
    out = np.empty((N // record_every + 1, x.size))
    out[0] = x
    r = 1
    for k in range(1, N + 1):
        t = t0 + (k - 1) * h
        x = rk4_step(f, t, x, h)
        if post_step is not None:
            x = post_step(x)
        if not np.all(np.isfinite(x)):
            tk = t0 + k * h
            partial = Trajectory(t0, h * record_every, out[:r], labels)
            raise IntegrationError(f"non-finite state at t={tk!r}", tk, partial)
        if on_sample is not None:
            on_sample(k, t0 + k * h, x)
        if k % record_every == 0:
            out[r] = x
            r += 1
    return Trajectory(t0=t0, h=h * record_every, data=out, labels=labels)


def bisect_roots(
    f: Callable[[float], float], lo: float, hi: float, grid_points: int, tol: float = 1e-12
) -> list:
    """Roots of a scalar function located by sign changes on a uniform grid.

    Each bracket is refined by bisection until it is narrower than ``tol``.
    Grid points where ``f`` vanishes exactly are reported as roots. Tangential
    roots without a sign change are not found; refine the grid instead.
    """
    if not lo < hi:
        raise ValueError("need lo < hi")
    if grid_points < 2:
        raise ValueError("need at least two grid points")
    xs = np.linspace(lo, hi, grid_points)
    fs = [float(f(x)) for x in xs]
    roots = []
    for i, (x, fx) in enumerate(zip(xs, fs)):
        if fx == 0.0:
            roots.append(float(x))
            continue
        if i + 1 < len(xs):
            fn = fs[i + 1]
            if fn != 0.0 and (fx < 0.0) != (fn < 0.0):
                a, b, fa = float(x), float(xs[i + 1]), fx
                while b - a >= tol:
                    m = 0.5 * (a + b)
                    if m <= a or m >= b:
                        break
                    fm = float(f(m))
                    if fm == 0.0:
                        a = b = m
                        break
                    if (fm < 0.0) == (fa < 0.0):
                        a, fa = m, fm
                    else:
                        b = m
                roots.append(0.5 * (a + b))
    return sorted(roots)
