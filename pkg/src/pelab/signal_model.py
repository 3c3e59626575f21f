"""Time signals, state-dependent functions and windowed quadrature.

Conventions used throughout the package:

* every norm is Euclidean;
* a :class:`TimeSignal` evaluates to a ``p x q`` matrix ``Phi(t)`` and its
  Gram integral is ``int Phi Phi^T`` (a ``p x p`` matrix), so that for a unit
  vector ``v`` the quadratic form ``v^T G v`` equals the windowed integral of
  ``||Phi(t)^T v||^2``;
* time domains are closed, finite intervals declared by the caller.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ContractError, DomainError, EvaluationError

__all__ = [
    "TimeSignal",
    "StateFunction",
    "QuadratureSpec",
    "window_nodes",
    "window_integral",
    "window_integral_norm",
    "window_gram",
    "min_eigenvalue",
    "signal_from_samples",
    "signal_from_csv",
    "named_signal",
    "named_state_function",
    "along_path",
    "SIGNAL_NAMES",
    "STATE_FUNCTION_NAMES",
]

_DOMAIN_SLACK = 1e-9
EPS_NUM = 1e-9


def _as_matrix(value) -> np.ndarray:
    a = np.asarray(value, dtype=float)
    if a.ndim == 0:
        return a.reshape(1, 1)
    if a.ndim == 1:
        return a.reshape(-1, 1)
    return a


def _check_interval(lo, hi, domain, what="window"):
    d_lo, d_hi = domain
    finite = [abs(v) for v in (d_lo, d_hi) if math.isfinite(v)]
    slack = _DOMAIN_SLACK * max([1.0] + finite)
    if lo < d_lo - slack or hi > d_hi + slack:
        raise DomainError(f"{what} [{lo}, {hi}] outside domain [{d_lo}, {d_hi}]")


@dataclass(frozen=True)
class TimeSignal:
    """Matrix-valued function of time on a closed interval.

    ``func(t)`` may return a scalar, a vector (read as a column) or a matrix.
    With ``vectorized=True`` it is called once with an array of times and must
    return an array whose leading axis runs over those times.
    """

    func: Callable
    domain: tuple = (-math.inf, math.inf)
    label: str = ""
    vectorized: bool = False

    def eval(self, t: float) -> np.ndarray:
        _check_interval(t, t, self.domain, "time")
        if self.vectorized:
            return self.eval_many(np.array([t]))[0]
        return _as_matrix(self.func(t))

    def eval_many(self, ts) -> np.ndarray:
        """Evaluate on an array of times; returns shape ``(k, p, q)``."""
        ts = np.asarray(ts, dtype=float)
        if self.vectorized:
            out = np.asarray(self.func(ts), dtype=float)
            if out.ndim == 1:
                out = out.reshape(-1, 1, 1)
            elif out.ndim == 2:
                out = out[:, :, None]
            return out
        return np.stack([_as_matrix(self.func(t)) for t in ts])

    @property
    def shape(self) -> tuple:
        lo, hi = self.domain
        t = lo if math.isfinite(lo) else (hi if math.isfinite(hi) else 0.0)
        return self.eval(t).shape


@dataclass(frozen=True)
class StateFunction:
    """Vector-valued function ``f(t, x)`` with the state split as ``(x1, x2)``.

    ``n1`` is the size of the leading block ``x1``; the excitation properties
    computed by :mod:`pelab.pe_engine` are always taken with respect to that
    block.  Use :meth:`reorder` to move other coordinates to the front.
    """

    func: Callable
    n: int
    n1: Optional[int] = None
    domain_t: tuple = (-math.inf, math.inf)
    label: str = ""
    vectorized: bool = False

    def __post_init__(self):
        if self.n1 is None:
            object.__setattr__(self, "n1", self.n)
        if not (0 < self.n1 <= self.n):
            raise ContractError(f"need 0 < n1 <= n, got n1={self.n1}, n={self.n}")

    @property
    def n2(self) -> int:
        return self.n - self.n1

    def eval(self, t: float, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.vectorized:
            return self.eval_times(np.array([t]), x)[0]
        return np.atleast_1d(np.asarray(self.func(t, x), dtype=float)).ravel()

    def eval_times(self, ts, x) -> np.ndarray:
        """Evaluate at fixed ``x`` over an array of times; shape ``(k, m)``."""
        ts = np.asarray(ts, dtype=float)
        x = np.asarray(x, dtype=float)
        if self.vectorized:
            out = np.asarray(self.func(ts, x), dtype=float)
            if out.ndim == 0:
                out = np.full((ts.size, 1), float(out))
            elif out.ndim == 1:
                out = out.reshape(-1, 1)
            return out
        return np.stack([self.eval(t, x) for t in ts])

    def reorder(self, perm: Sequence[int], n1: int) -> "StateFunction":
        """Return the same function in permuted coordinates.

        The new state ``y`` satisfies ``y[i] = x[perm[i]]``; the first ``n1``
        entries of ``y`` become the excited block.
        """
        perm = np.asarray(perm, dtype=int)
        if sorted(perm.tolist()) != list(range(self.n)):
            raise ContractError(f"not a permutation of range({self.n}): {perm}")
        inv = np.argsort(perm)
        base = self

        def func(t, y):
            return base.func(t, np.asarray(y, dtype=float)[inv])

        return StateFunction(func, self.n, n1, self.domain_t,
                             self.label or "reordered", self.vectorized)


@dataclass(frozen=True)
class QuadratureSpec:
    """Composite quadrature rule; ``step=None`` means ``1e-3 * min(T, 1)``."""

    rule: str = "simpson"
    step: Optional[float] = None

    def __post_init__(self):
        if self.rule not in ("trapezoid", "simpson"):
            raise ContractError(f"unknown quadrature rule {self.rule!r}")
        if self.step is not None and not self.step > 0:
            raise ContractError("quadrature step must be positive")

    def step_for(self, T: float) -> float:
        if self.step is not None:
            return self.step
        return 1e-3 * min(T, 1.0)


DEFAULT_QUADRATURE = QuadratureSpec()


def window_nodes(t: float, T: float, q: QuadratureSpec = DEFAULT_QUADRATURE):
    """Nodes and weights of the composite rule on ``[t, t + T]``."""
    if not T > 0:
        raise ContractError(f"window length must be positive, got {T}")
    n = max(1, int(math.ceil(T / q.step_for(T) - 1e-9)))
    if q.rule == "simpson" and n % 2:
        n += 1
    h = T / n
    nodes = t + h * np.arange(n + 1)
    nodes[-1] = t + T
    if q.rule == "trapezoid":
        w = np.full(n + 1, h)
        w[0] = w[-1] = h / 2
    else:
        w = np.empty(n + 1)
        w[1:-1:2] = 4.0
        w[2:-1:2] = 2.0
        w[0] = w[-1] = 1.0
        w *= h / 3
    return nodes, w


def window_integral(values: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Apply quadrature weights along the leading axis of ``values``."""
    return np.tensordot(weights, values, axes=(0, 0))


def _raise_nonfinite(vals, nodes, x=None):
    bad = ~np.isfinite(vals.reshape(len(nodes), -1)).all(axis=1)
    tau = float(nodes[np.argmax(bad)])
    raise EvaluationError(f"non-finite evaluation at tau={tau}", tau=tau,
                          x=None if x is None else np.asarray(x).tolist())


def window_integral_norm(f: StateFunction, x, t: float, T: float,
                         q: QuadratureSpec = DEFAULT_QUADRATURE) -> float:
    """Integral of ``||f(tau, x)||`` over ``[t, t + T]``."""
    if not T > 0:
        raise ContractError(f"window length must be positive, got {T}")
    _check_interval(t, t + T, f.domain_t)
    nodes, w = window_nodes(t, T, q)
    vals = f.eval_times(nodes, x)
    if not np.all(np.isfinite(vals)):
        _raise_nonfinite(vals, nodes, x)
    norms = np.sqrt(np.einsum("ij,ij->i", vals, vals))
    return max(0.0, float(w @ norms))


def window_gram(S: TimeSignal, t: float, T: float,
                q: QuadratureSpec = DEFAULT_QUADRATURE) -> np.ndarray:
    """Symmetrized quadrature of ``Phi(tau) Phi(tau)^T`` over ``[t, t + T]``."""
    if not T > 0:
        raise ContractError(f"window length must be positive, got {T}")
    _check_interval(t, t + T, S.domain)
    nodes, w = window_nodes(t, T, q)
    vals = S.eval_many(nodes)
    if not np.all(np.isfinite(vals)):
        _raise_nonfinite(vals, nodes)
    G = np.einsum("k,kij,klj->il", w, vals, vals)
    return 0.5 * (G + G.T)


def min_eigenvalue(M, tol: float = EPS_NUM) -> float:
    """Smallest eigenvalue of a symmetric matrix (LAPACK ``syevd``)."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape[0] != M.shape[1]:
        raise ContractError(f"matrix must be square, got {M.shape}")
    scale = max(1.0, float(np.max(np.abs(M))) if M.size else 1.0)
    if np.max(np.abs(M - M.T), initial=0.0) > tol * scale:
        raise ContractError("matrix is not symmetric within tolerance")
    return float(np.linalg.eigvalsh(0.5 * (M + M.T))[0])


# -- sample-backed signals ---------------------------------------------------

def signal_from_samples(ts, values, label: str = "samples") -> TimeSignal:
    """Piecewise-linear signal through ``(ts[k], values[k])``.

    ``values`` has shape ``(k,)``, ``(k, p)`` or ``(k, p, q)``.
    """
    ts = np.asarray(ts, dtype=float)
    vals = np.asarray(values, dtype=float)
    if ts.ndim != 1 or ts.size < 2 or np.any(np.diff(ts) <= 0):
        raise ContractError("sample times must be strictly increasing, >= 2 samples")
    if vals.shape[0] != ts.size:
        raise ContractError("one value per sample time required")
    if vals.ndim == 1:
        vals = vals.reshape(-1, 1, 1)
    elif vals.ndim == 2:
        vals = vals[:, :, None]
    flat = vals.reshape(ts.size, -1)
    shape = vals.shape[1:]

    def func(tq):
        tq = np.atleast_1d(tq)
        cols = [np.interp(tq, ts, flat[:, j]) for j in range(flat.shape[1])]
        return np.stack(cols, axis=-1).reshape((tq.size,) + shape)

    return TimeSignal(func, (float(ts[0]), float(ts[-1])), label, vectorized=True)


def signal_from_csv(path, shape: Optional[Sequence[int]] = None) -> TimeSignal:
    """Load a signal from CSV rows ``t, e11, e12, ...`` (row-major entries).

    A non-numeric first row is treated as a header.  Without ``shape`` the
    entries form a column vector.
    """
    rows = []
    with open(path, newline="") as fh:
        for i, row in enumerate(csv.reader(fh)):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                rows.append([float(c) for c in row])
            except ValueError:
                if i == 0:
                    continue
                raise ContractError(f"{path}: non-numeric data on line {i + 1}")
    data = np.asarray(rows, dtype=float)
    if data.ndim != 2 or data.shape[1] < 2:
        raise ContractError(f"{path}: need a time column and at least one entry")
    vals = data[:, 1:]
    if shape is not None:
        vals = vals.reshape((-1,) + tuple(shape))
    return signal_from_samples(data[:, 0], vals, label=str(path))


# -- named catalog -------------------------------------------------------------

def _sig_sin_cos(omega=1.0, phase=0.0):
    def f(ts):
        a = omega * ts + phase
        return np.stack([np.sin(a), np.cos(a)], axis=-1)
    return f


def _sig_trig(coeffs, omegas):
    """Column signal with entries sum_j c[i][j] * sin(omega_j t + j)."""
    c = np.asarray(coeffs, dtype=float)
    om = np.asarray(omegas, dtype=float)

    def f(ts):
        basis = np.sin(np.outer(ts, om) + np.arange(om.size))
        return basis @ c.T
    return f


def _sig_cos_sin(omega=1.0):
    def f(ts):
        a = omega * ts
        return np.stack([np.cos(a), np.sin(a)], axis=-1)
    return f


SIGNAL_NAMES = {
    "sin_cos": lambda omega=1.0, phase=0.0: _sig_sin_cos(omega, phase),
    "cos_sin": lambda omega=1.0: _sig_cos_sin(omega),
    "sin": lambda omega=1.0, amplitude=1.0: (lambda ts: amplitude * np.sin(omega * ts)),
    "cos": lambda omega=1.0, amplitude=1.0: (lambda ts: amplitude * np.cos(omega * ts)),
    "abs_sin": lambda omega=1.0: (lambda ts: np.abs(np.sin(omega * ts))),
    "inverse_time": lambda: (lambda ts: 1.0 / (1.0 + ts)),
    "constant": lambda value=1.0: (lambda ts: np.multiply.outer(np.ones_like(ts), np.asarray(value, dtype=float))),
    "trig": _sig_trig,
}


def named_signal(name: str, domain=(0.0, math.inf), **params) -> TimeSignal:
    """Build a catalog signal; ``csv`` takes ``path`` and optional ``shape``."""
    if name == "csv":
        return signal_from_csv(params["path"], params.get("shape"))
    if name not in SIGNAL_NAMES:
        raise KeyError(name)
    return TimeSignal(SIGNAL_NAMES[name](**params), tuple(domain), name, vectorized=True)


def _sf_eg31(ts, x):
    return x[0] * np.sin(ts) - x[1] * np.cos(ts)


def _sf_coordinate(index):
    def f(ts, x):
        return np.full(np.shape(ts), x[index])
    return f


def _sf_linear(signal: TimeSignal):
    def f(ts, x):
        return np.einsum("kij,i->kj", signal.eval_many(ts), x)
    return f


def along_path(f: StateFunction, path: TimeSignal) -> StateFunction:
    """``tau -> f(tau, z(tau))`` for a state path ``z``, as a state function of time only.

    The result ignores its state argument (a placeholder of dimension 1), so
    :func:`window_integral_norm` on it integrates ``||f(tau, z(tau))||``.
    """

    def g(ts, _x):
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        Z = path.eval_many(ts).reshape(ts.size, -1)
        if Z.shape[1] != f.n:
            raise ContractError(f"path has dimension {Z.shape[1]}, function expects {f.n}")
        return np.stack([f.eval_times(np.array([t]), z)[0] for t, z in zip(ts, Z)])

    return StateFunction(g, 1, 1, f.domain_t, f"{f.label}@{path.label}", vectorized=True)


STATE_FUNCTION_NAMES = ("eg31_psi", "coordinate", "linear_signal", "zero")


def named_state_function(name: str, n: Optional[int] = None, n1: Optional[int] = None,
                         domain=(0.0, math.inf), **params) -> StateFunction:
    """Build a catalog state function.

    * ``eg31_psi``: ``x1 sin t - x2 cos t`` on a 2-dimensional state;
    * ``coordinate``: the single coordinate ``x[index]``;
    * ``linear_signal``: ``Phi(t)^T x`` for a named signal ``signal``;
    * ``zero``: the zero function.
    """
    domain = tuple(domain)
    if name == "eg31_psi":
        return StateFunction(_sf_eg31, 2, n1 or 2, domain, name, vectorized=True)
    if name == "coordinate":
        n = n or 2
        return StateFunction(_sf_coordinate(int(params.get("index", 1))), n, n1 or n,
                             domain, name, vectorized=True)
    if name == "linear_signal":
        sig = named_signal(**params["signal"], domain=domain)
        n = sig.shape[0]
        return StateFunction(_sf_linear(sig), n, n1 or n, domain, name, vectorized=True)
    if name == "zero":
        n = n or 1
        return StateFunction(lambda ts, x: np.zeros_like(ts), n, n1 or n, domain,
                             name, vectorized=True)
    raise KeyError(name)
