"""Fixed-step RK4 integration of time-varying ODEs ``x' = F(t, x)``."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ContractError, DomainError
from .signal_model import StateFunction

__all__ = [
    "OdeSystem",
    "Trajectory",
    "integrate",
    "integrate_many",
    "sample",
    "richardson_check",
    "trajectory_to_csv",
    "system_state_function",
    "ESCAPE_RADIUS",
]

ESCAPE_RADIUS = 1e6


@dataclass(frozen=True)
class OdeSystem:
    """Right-hand side ``rhs(t, x) -> x'`` of dimension ``dim``.

    ``rhs_batch(ts, X)``, when given, evaluates many states at once:
    ``ts`` has shape ``(k,)``, ``X`` has shape ``(dim, k)`` and the result has
    shape ``(dim, k)``.  It is only a speed path and must agree with ``rhs``.
    """

    rhs: Callable
    dim: int
    label: str = ""
    params: dict = field(default_factory=dict)
    rhs_batch: Optional[Callable] = None

    def __call__(self, t, x):
        return np.asarray(self.rhs(t, x), dtype=float)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Solution samples on a time grid.

    ``derivs[k]`` holds ``F(times[k], states[k])`` and feeds the Hermite
    interpolant used by :func:`sample`.
    """

    t0: float
    x0: np.ndarray
    step: float
    times: np.ndarray
    states: np.ndarray
    derivs: np.ndarray
    finite: bool = True
    escaped: bool = False
    label: str = ""

    @property
    def flags(self) -> dict:
        return {"finite": self.finite, "escaped": self.escaped}

    @property
    def t_end(self) -> float:
        return float(self.times[-1])

    def norms(self) -> np.ndarray:
        return np.linalg.norm(self.states, axis=1)


def _steps(t0, t_end, step):
    if not step > 0:
        raise ContractError("step must be positive")
    if not t_end > t0:
        raise ContractError("t_end must exceed t0")
    span = t_end - t0
    n_full = int(math.floor(span / step * (1 + 1e-12)))
    rem = span - n_full * step
    # a sliver below 1e-9 step is absorbed by the last full step
    if rem <= 1e-9 * step:
        rem = 0.0
    return n_full, rem


def integrate(sys: OdeSystem, t0: float, x0, t_end: float, step: float,
              escape_radius: float = ESCAPE_RADIUS) -> Trajectory:
    """Classical fourth-order Runge-Kutta with a fixed step.

    The final step is shortened to land on ``t_end``.  If the state leaves
    the ball of radius ``escape_radius`` or the right-hand side becomes
    non-finite, the trajectory is truncated at the last good sample and
    flagged as escaped.
    """
    n_full, rem = _steps(t0, t_end, step)
    n_total = n_full + (1 if rem > 0 else 0)
    x = np.array(x0, dtype=float).reshape(-1)
    if x.size != sys.dim:
        raise ContractError(f"x0 has size {x.size}, system dimension is {sys.dim}")
    f = sys.rhs
    times = np.empty(n_total + 1)
    states = np.empty((n_total + 1, sys.dim))
    derivs = np.empty((n_total + 1, sys.dim))
    times[0] = t0
    states[0] = x
    t = t0
    k1 = np.asarray(f(t, x), dtype=float)
    escaped = False
    finite = bool(np.all(np.isfinite(k1)))
    last = 0
    if finite:
        derivs[0] = k1
        for i in range(n_total):
            h = step if i < n_full else rem
            hh = 0.5 * h
            k2 = np.asarray(f(t + hh, x + hh * k1), dtype=float)
            k3 = np.asarray(f(t + hh, x + hh * k2), dtype=float)
            k4 = np.asarray(f(t + h, x + h * k3), dtype=float)
            x_new = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            t_new = t0 + (i + 1) * step if i < n_full else t_end
            if not np.all(np.isfinite(x_new)):
                escaped, finite = True, False
                break
            if math.sqrt(float(x_new @ x_new)) > escape_radius:
                escaped = True
                break
            k1_new = np.asarray(f(t_new, x_new), dtype=float)
            if not np.all(np.isfinite(k1_new)):
                escaped, finite = True, False
                break
            t, x, k1 = t_new, x_new, k1_new
            last = i + 1
            times[last] = t
            states[last] = x
            derivs[last] = k1
    else:
        escaped = True
        derivs[0] = np.nan_to_num(k1)
    m = last + 1
    return Trajectory(float(t0), states[0].copy(), float(step), times[:m].copy(),
                      states[:m].copy(), derivs[:m].copy(), finite, escaped, sys.label)


def integrate_many(sys: OdeSystem, starts: Sequence, duration: float, step: float,
                   escape_radius: float = ESCAPE_RADIUS) -> list:
    """Integrate several ``(t0, x0)`` pairs over the same ``duration``.

    Uses ``sys.rhs_batch`` to advance every member in lockstep when it is
    available, otherwise falls back to :func:`integrate` one at a time.
    Results are returned in the order of ``starts``.
    """
    starts = [(float(t0), np.asarray(x0, dtype=float).reshape(-1)) for t0, x0 in starts]
    if not starts:
        return []
    if sys.rhs_batch is None or len(starts) == 1:
        return [integrate(sys, t0, x0, t0 + duration, step, escape_radius)
                for t0, x0 in starts]
    n_full, rem = _steps(0.0, duration, step)
    n_total = n_full + (1 if rem > 0 else 0)
    k = len(starts)
    t0s = np.array([s[0] for s in starts])
    X = np.stack([s[1] for s in starts], axis=1)
    if X.shape[0] != sys.dim:
        raise ContractError("initial state dimension does not match the system")
    f = sys.rhs_batch
    states = np.empty((n_total + 1, sys.dim, k))
    derivs = np.empty((n_total + 1, sys.dim, k))
    offsets = np.empty(n_total + 1)
    offsets[0] = 0.0
    alive = np.ones(k, dtype=bool)
    last = np.zeros(k, dtype=int)
    bad_rhs = np.zeros(k, dtype=bool)
    states[0] = X
    K1 = np.asarray(f(t0s, X), dtype=float)
    bad = ~np.all(np.isfinite(K1), axis=0)
    alive &= ~bad
    bad_rhs |= bad
    K1 = np.where(alive, K1, 0.0)
    X = np.where(alive, X, 0.0)
    derivs[0] = K1
    r2 = escape_radius * escape_radius
    # max|x_i| below this bound implies ||x|| <= escape_radius
    cheap_bound = escape_radius / math.sqrt(sys.dim)
    last[:] = n_total
    last[~alive] = 0
    with np.errstate(all="ignore"):
        for i in range(n_total):
            h = step if i < n_full else rem
            hh = 0.5 * h
            t = t0s + offsets[i]
            K2 = f(t + hh, X + hh * K1)
            K3 = f(t + hh, X + hh * K2)
            K4 = f(t + h, X + h * K3)
            Xn = X + (h / 6.0) * (K1 + 2.0 * K2 + 2.0 * K3 + K4)
            off = (i + 1) * step if i < n_full else duration
            K1n = f(t0s + off, Xn)
            if not (np.abs(Xn).max() <= cheap_bound and math.isfinite(K1n.sum())):
                # slow path: retire members that escaped or went non-finite
                fin = np.isfinite(Xn).all(axis=0) & np.isfinite(K1n).all(axis=0)
                sq = np.where(fin, (Xn * Xn).sum(axis=0), np.inf)
                ok = alive & fin & (sq <= r2)
                bad_rhs |= alive & ~fin
                last[alive & ~ok] = i
                alive = ok
                Xn = np.where(alive, Xn, 0.0)
                K1n = np.where(alive, K1n, 0.0)
                if not alive.any():
                    n_total = i
                    break
            X, K1 = Xn, K1n
            offsets[i + 1] = off
            states[i + 1] = X
            derivs[i + 1] = K1
    out = []
    for j, (t0, x0) in enumerate(starts):
        m = last[j] + 1
        escaped = bool(last[j] < n_full + (1 if rem > 0 else 0))
        out.append(Trajectory(t0, x0.copy(), float(step), t0 + offsets[:m],
                              states[:m, :, j].copy(), derivs[:m, :, j].copy(),
                              not bad_rhs[j], bool(escaped), sys.label))
    return out


def sample(traj: Trajectory, t: float) -> np.ndarray:
    """Cubic Hermite interpolation of the trajectory at time ``t``."""
    times = traj.times
    if t < times[0] or t > times[-1]:
        raise DomainError(f"t={t} outside trajectory range [{times[0]}, {times[-1]}]")
    i = int(np.searchsorted(times, t, side="right")) - 1
    if times[i] == t:
        return traj.states[i].copy()
    i = min(i, times.size - 2)
    t_a, t_b = times[i], times[i + 1]
    h = t_b - t_a
    s = (t - t_a) / h
    h00 = (1 + 2 * s) * (1 - s) ** 2
    h10 = s * (1 - s) ** 2
    h01 = s * s * (3 - 2 * s)
    h11 = s * s * (s - 1)
    return (h00 * traj.states[i] + h10 * h * traj.derivs[i]
            + h01 * traj.states[i + 1] + h11 * h * traj.derivs[i + 1])


def sample_many(traj: Trajectory, ts) -> np.ndarray:
    """Vectorized :func:`sample`; returns shape ``(len(ts), dim)``."""
    ts = np.asarray(ts, dtype=float)
    times = traj.times
    if ts.size and (ts.min() < times[0] or ts.max() > times[-1]):
        raise DomainError("sample times outside trajectory range")
    i = np.clip(np.searchsorted(times, ts, side="right") - 1, 0, times.size - 2)
    t_a = times[i]
    h = times[i + 1] - t_a
    s = ((ts - t_a) / h)[:, None]
    h00 = (1 + 2 * s) * (1 - s) ** 2
    h10 = s * (1 - s) ** 2
    h01 = s * s * (3 - 2 * s)
    h11 = s * s * (s - 1)
    hc = h[:, None]
    out = (h00 * traj.states[i] + h10 * hc * traj.derivs[i]
           + h01 * traj.states[i + 1] + h11 * hc * traj.derivs[i + 1])
    exact = times[i] == ts
    out[exact] = traj.states[i[exact]]
    exact_end = ts == times[-1]
    out[exact_end] = traj.states[-1]
    return out


def richardson_check(sys: OdeSystem, t0: float, x0, t_end: float, step: float) -> float:
    """Global-error estimate from a step-halved rerun: ``max|x_h - x_h/2| / 15``.

    Returns ``inf`` if either run escaped.
    """
    a = integrate(sys, t0, x0, t_end, step)
    b = integrate(sys, t0, x0, t_end, step / 2)
    if a.escaped or b.escaped:
        return math.inf
    return float(np.max(np.abs(a.states[-1] - b.states[-1]))) / 15.0


def trajectory_to_csv(traj: Trajectory, path=None) -> str:
    """CSV text ``t,x1,...,xn`` with 17 significant digits per value."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t"] + [f"x{i + 1}" for i in range(traj.states.shape[1])])
    for t, x in zip(traj.times, traj.states):
        w.writerow([f"{t:.17g}"] + [f"{v:.17g}" for v in x])
    text = buf.getvalue()
    if path is not None:
        from .io_util import atomic_write_text
        atomic_write_text(path, text)
    return text


def system_state_function(sys: OdeSystem, n1: Optional[int] = None,
                          domain_t=(-math.inf, math.inf)) -> StateFunction:
    """Wrap the vector field ``F(t, x)`` as a :class:`StateFunction`."""
    if sys.rhs_batch is not None:
        fb = sys.rhs_batch

        def func(ts, x):
            X = np.repeat(np.asarray(x, dtype=float)[:, None], np.size(ts), axis=1)
            return fb(np.asarray(ts, dtype=float), X).T

        return StateFunction(func, sys.dim, n1, tuple(domain_t), sys.label, vectorized=True)
    return StateFunction(sys.rhs, sys.dim, n1, tuple(domain_t), sys.label)
