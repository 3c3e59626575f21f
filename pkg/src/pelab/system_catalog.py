"""Closed-loop systems used by the experiments.

Each constructor returns an :class:`~pelab.ode_sim.OdeSystem` (with a batch
right-hand side for ensemble runs) together with the pieces its analyses need:
Lyapunov evaluators, the excitation functions, regressors.

Systems with matching nonlinearities have the block form::

    x1' = A(t, x) + B(t, x)
    x2' = C(t, x) + D(t, x)

with every block vanishing at ``x = 0``.  ``B0(t, x2) = B(t, (0, x2))`` is the
part of the coupling whose excitation drives convergence of ``x2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .errors import ContractError, EvaluationError
from .ode_sim import OdeSystem, system_state_function
from .signal_model import StateFunction, TimeSignal, named_signal

__all__ = [
    "MatchingSystem",
    "FeedforwardSystem",
    "ELPlant",
    "ControllerConfig",
    "SlotineLiSystem",
    "CatalogSystem",
    "make_gradient_adaptive",
    "make_feedforward_bounded",
    "make_driftless",
    "rotation_drift",
    "make_pendulum_el",
    "make_two_link_el",
    "make_slotine_li",
    "make_exp_decay",
    "make_inverse_time_decay",
    "make_rotation",
    "make_still",
    "sine_reference",
    "constant_reference",
    "monotone_envelope",
    "enough_pe_margin",
    "whitened_gain",
    "build_system",
    "SYSTEM_NAMES",
]


def _is_spd(M, tol=0.0) -> bool:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    return bool(np.allclose(M, M.T) and np.linalg.eigvalsh(M)[0] > tol)


def _signal_batch(S: TimeSignal):
    """``ts -> (k, p, q)`` evaluator; skips per-call domain checks."""
    if S.vectorized:
        return S.eval_many
    return lambda ts: np.stack([S.eval(t) for t in np.atleast_1d(ts)])


# -- matching-nonlinearity systems ------------------------------------------------------

@dataclass(frozen=True)
class MatchingSystem:
    """Block decomposition of a closed loop plus a Lyapunov function.

    ``A, B, C, D`` are state functions of the full state ``x = (x1, x2)``;
    ``B0`` is a state function of ``(t, x2)`` only.  ``V(t, x)`` is the
    Lyapunov function and ``grad_V(t, x)`` returns ``(dV/dt, dV/dx)``.
    """

    n1: int
    n2: int
    A: StateFunction
    B: StateFunction
    C: StateFunction
    D: StateFunction
    B0: StateFunction
    V: Callable
    grad_V: Callable
    ode: OdeSystem
    label: str = ""

    @property
    def F(self) -> StateFunction:
        return system_state_function(self.ode, self.n1 + self.n2)

    def vdot(self, t: float, x) -> float:
        x = np.asarray(x, dtype=float)
        vt, vx = self.grad_V(t, x)
        return float(vt + vx @ self.ode.rhs(t, x))

    def blocks(self, t: float, x) -> tuple:
        return tuple(g.eval(t, x) for g in (self.A, self.B, self.C, self.D))

    def check_invariants(self, rng=None, count: int = 200, radius: float = 10.0,
                         tol: float = 1e-10) -> dict:
        """Sampled checks of the structural assumptions; raises on violation.

        Checks: blocks vanish at the origin, ``F = (A + B, C + D)``,
        ``B0(t, x2) = B(t, (0, x2))``, ``B0(t, 0) = 0`` and ``dV/dt <= tol``
        (relative to the size of the terms).
        """
        rng = rng if rng is not None else np.random.default_rng(0)
        n = self.n1 + self.n2
        worst = {"origin": 0.0, "assembly": 0.0, "b0": 0.0, "vdot": -math.inf}
        for _ in range(count):
            t = float(rng.uniform(0.0, 100.0))
            x = rng.standard_normal(n)
            x *= radius * rng.uniform() ** (1.0 / n) / np.linalg.norm(x)
            a, b, c, d = self.blocks(t, x)
            a0, b0, c0, d0 = self.blocks(t, np.zeros(n))
            worst["origin"] = max(worst["origin"], *(float(np.max(np.abs(v))) for v in (a0, b0, c0, d0)))
            fx = self.ode.rhs(t, x)
            worst["assembly"] = max(worst["assembly"],
                                    float(np.max(np.abs(fx - np.concatenate([a + b, c + d])))))
            x2 = x[self.n1:]
            xz = np.concatenate([np.zeros(self.n1), x2])
            worst["b0"] = max(worst["b0"], float(np.max(np.abs(self.B0.eval(t, x2) - self.B.eval(t, xz)))),
                              float(np.max(np.abs(self.B0.eval(t, np.zeros(self.n2))))))
            vt, vx = self.grad_V(t, x)
            scale = 1.0 + float(np.abs(vx) @ np.abs(fx)) + abs(float(vt))
            worst["vdot"] = max(worst["vdot"], self.vdot(t, x) / scale)
        for key in ("origin", "assembly", "b0"):
            if worst[key] > tol:
                raise ContractError(f"{self.label}: invariant {key!r} violated by {worst[key]:.3g}")
        if worst["vdot"] > tol:
            raise ContractError(f"{self.label}: V increases along the flow ({worst['vdot']:.3g})")
        return worst

    def rho2_samples(self, Delta: float, r_max: float, rng=None, count: int = 400):
        """Samples ``(||x1||, ||B(t,x) - B0(t,x2)||)`` with ``||x2|| <= Delta``."""
        rng = rng if rng is not None else np.random.default_rng(0)
        r, v = [], []
        for _ in range(count):
            t = float(rng.uniform(0.0, 100.0))
            x1 = rng.standard_normal(self.n1)
            x1 *= rng.uniform(0.0, r_max) / np.linalg.norm(x1)
            x2 = rng.standard_normal(self.n2)
            x2 *= rng.uniform(0.0, Delta) / np.linalg.norm(x2)
            x = np.concatenate([x1, x2])
            r.append(float(np.linalg.norm(x1)))
            v.append(float(np.linalg.norm(self.B.eval(t, x) - self.B0.eval(t, x2))))
        return np.asarray(r), np.asarray(v)


def monotone_envelope(r, values):
    """Least nondecreasing function above the samples: running max in ``r``.

    Returns ``(r_sorted, envelope)``.
    """
    r = np.asarray(r, dtype=float)
    values = np.asarray(values, dtype=float)
    order = np.argsort(r, kind="stable")
    return r[order], np.maximum.accumulate(values[order])


def make_gradient_adaptive(Phi: TimeSignal, Atilde=-1.0, P=1.0, label: str = "") -> MatchingSystem:
    """``x1' = A~ x1 + G(t) x2``, ``x2' = -P^{-1} G(t)^T x1`` with ``G = Phi``.

    ``Phi(t)`` is an ``n1 x n2`` matrix.  ``V = |x1|^2 / 2 + x2^T P x2 / 2``
    has ``V' = x1^T A~ x1 <= 0`` because the cross terms cancel.
    """
    At = np.atleast_2d(np.asarray(Atilde, dtype=float))
    Pm = np.atleast_2d(np.asarray(P, dtype=float))
    G0 = Phi.eval(Phi.domain[0] if math.isfinite(Phi.domain[0]) else 0.0)
    n1, n2 = G0.shape
    if At.shape != (n1, n1):
        raise ContractError(f"A~ must be {n1}x{n1}, got {At.shape}")
    if Pm.shape != (n2, n2):
        raise ContractError(f"P must be {n2}x{n2}, got {Pm.shape}")
    if np.linalg.eigvalsh(0.5 * (At + At.T))[-1] >= 0:
        raise ContractError("A~ must have a negative definite symmetric part")
    if not _is_spd(Pm):
        raise ContractError("P must be symmetric positive definite")
    Pinv = np.linalg.inv(Pm)
    Gb = _signal_batch(Phi)
    label = label or f"gradient_adaptive[{Phi.label}]"

    def rhs(t, x):
        G = Gb(np.array([t]))[0]
        x1, x2 = x[:n1], x[n1:]
        return np.concatenate([At @ x1 + G @ x2, -Pinv @ (G.T @ x1)])

    def rhs_batch(ts, X):
        G = Gb(ts)
        X1, X2 = X[:n1], X[n1:]
        out = np.empty_like(X)
        if n1 == 1 and n2 == 1:
            g = G[:, 0, 0]
            out[0] = At[0, 0] * X1[0] + g * X2[0]
            out[1] = -Pinv[0, 0] * g * X1[0]
            return out
        out[:n1] = At @ X1 + np.einsum("kij,jk->ik", G, X2)
        out[n1:] = -Pinv @ np.einsum("kji,jk->ik", G, X1)
        return out

    def block(fn):
        def f(ts, x):
            x = np.asarray(x, dtype=float)
            return np.stack([fn(G, x[:n1], x[n1:]) for G in Gb(np.atleast_1d(ts))])
        return f

    n = n1 + n2
    A = StateFunction(block(lambda G, a, b: At @ a), n, n1, label="A", vectorized=True)
    B = StateFunction(block(lambda G, a, b: G @ b), n, n1, label="B", vectorized=True)
    C = StateFunction(block(lambda G, a, b: -Pinv @ (G.T @ a)), n, n1, label="C", vectorized=True)
    D = StateFunction(block(lambda G, a, b: np.zeros(n2)), n, n1, label="D", vectorized=True)

    def b0(ts, x2):
        return np.einsum("kij,j->ki", Gb(np.atleast_1d(ts)), np.asarray(x2, dtype=float))

    B0 = StateFunction(b0, n2, n2, Phi.domain, "B0", vectorized=True)

    def V(t, x):
        x1, x2 = x[:n1], x[n1:]
        return 0.5 * float(x1 @ x1) + 0.5 * float(x2 @ Pm @ x2)

    def grad_V(t, x):
        return 0.0, np.concatenate([x[:n1], Pm @ x[n1:]])

    ode = OdeSystem(rhs, n, label, {"n1": n1, "n2": n2}, rhs_batch)
    return MatchingSystem(n1, n2, A, B, C, D, B0, V, grad_V, ode, label)


# -- bounded feedback for feedforward and driftless systems ------------------------------------

def _log_cosh(z):
    z = np.abs(z)
    return z + np.log1p(np.exp(-2.0 * z)) - math.log(2.0)


@dataclass(frozen=True)
class FeedforwardSystem:
    """Closed loop of ``xi' = f(t, xi) + g(t, xi, u) u`` with ``u = Tanh(z)``.

    The state is ``(xi, z)``.  ``W(t, y) = V(t, xi) + sum log cosh z_i`` is the
    composite Lyapunov function; ``matching`` is the same system written in
    the block form with ``x1 = z`` and ``x2 = xi``.
    """

    ode: OdeSystem
    n_xi: int
    n_u: int
    W: Callable
    matching: MatchingSystem
    label: str = ""

    def control(self, y) -> np.ndarray:
        return np.tanh(np.asarray(y, dtype=float)[self.n_xi:])

    def wdot(self, t: float, y) -> float:
        return self.matching.vdot(t, np.concatenate([y[self.n_xi:], y[:self.n_xi]]))


def rotation_drift(omega: float = 1.0):
    """Drift ``xi' = omega J xi`` on the plane, ``J`` the quarter turn; returns ``(f, f_batch)``."""
    J = omega * np.array([[0.0, -1.0], [1.0, 0.0]])
    return (lambda t, xi: J @ xi), (lambda ts, X: J @ X)


def make_feedforward_bounded(f: Optional[Callable], g, n_xi: int, n_u: int,
                             V: Optional[Callable] = None, dV: Optional[Callable] = None,
                             f_batch: Optional[Callable] = None, label: str = "") -> FeedforwardSystem:
    """Bounded dynamic feedback ``z' = -z - g(t, xi, Tanh z)^T dV/dxi``, ``u = Tanh z``.

    ``f(t, xi)`` is the drift (``None`` for no drift).  ``g`` is either a
    :class:`TimeSignal` of ``n_xi x n_u`` matrices or a function
    ``g(t, xi, u)``.  ``V`` and its gradient ``dV(t, xi)`` default to
    ``|xi|^2 / 2``; ``V`` must be nonincreasing along the drift.
    """
    if V is None and dV is None:
        V = lambda t, xi: 0.5 * float(xi @ xi)  # noqa: E731
        dV = lambda t, xi: np.asarray(xi, dtype=float)  # noqa: E731
        dV_batch = lambda ts, X: X  # noqa: E731
    elif V is None or dV is None:
        raise ContractError("V and dV must be given together")
    else:
        dV_batch = None
    if isinstance(g, TimeSignal):
        gs = _signal_batch(g)
        shape = g.shape
        if shape != (n_xi, n_u):
            raise ContractError(f"g has shape {shape}, expected ({n_xi}, {n_u})")
        g_fn = lambda t, xi, u: gs(np.array([t]))[0]  # noqa: E731
        g_batch = lambda ts, X, U: gs(ts)  # noqa: E731
        g_label = g.label
    else:
        g_fn = g
        g_batch = None
        g_label = getattr(g, "__name__", "g")
    zero_xi = np.zeros(n_xi)
    if f is None:
        f = lambda t, xi: zero_xi  # noqa: E731
        f_batch = lambda ts, X: np.zeros_like(X)  # noqa: E731
    else:
        f0 = np.asarray(f(0.0, zero_xi), dtype=float)
        if f0.shape != (n_xi,) or np.any(f0 != 0):
            raise ContractError("drift must map into R^n_xi and vanish at xi = 0")
    gm = np.asarray(g_fn(0.0, zero_xi, np.zeros(n_u)), dtype=float)
    if gm.shape != (n_xi, n_u):
        raise ContractError(f"g returns shape {gm.shape}, expected ({n_xi}, {n_u})")
    label = label or f"feedforward[{g_label}]"
    n = n_xi + n_u

    def rhs(t, y):
        xi, z = y[:n_xi], y[n_xi:]
        u = np.tanh(z)
        G = np.asarray(g_fn(t, xi, u), dtype=float)
        return np.concatenate([f(t, xi) + G @ u, -z - G.T @ dV(t, xi)])

    rhs_batch = None
    if g_batch is not None and f_batch is not None and dV_batch is not None:
        def rhs_batch(ts, Y):
            Xi, Z = Y[:n_xi], Y[n_xi:]
            U = np.tanh(Z)
            G = g_batch(ts, Xi, U)
            out = np.empty_like(Y)
            if n_xi == 1 and n_u == 1:
                gv = G[:, 0, 0]
                out[0] = f_batch(ts, Xi)[0] + gv * U[0]
                out[1] = -Z[0] - gv * Xi[0]
                return out
            out[:n_xi] = f_batch(ts, Xi) + np.einsum("kij,jk->ik", G, U)
            out[n_xi:] = -Z - np.einsum("kji,jk->ik", G, dV_batch(ts, Xi))
            return out

    def W(t, y):
        y = np.asarray(y, dtype=float)
        return float(V(t, y[:n_xi]) + np.sum(_log_cosh(y[n_xi:])))

    ode = OdeSystem(rhs, n, label, {"n_xi": n_xi, "n_u": n_u}, rhs_batch)

    # block form in the coordinates x = (z, xi)
    def blk(fn, nn):
        def h(ts, x):
            x = np.asarray(x, dtype=float)
            z, xi = x[:n_u], x[n_u:]
            return np.stack([np.atleast_1d(fn(t, z, xi)) for t in np.atleast_1d(ts)]).reshape(-1, nn)
        return StateFunction(h, n, n_u, vectorized=True)

    def gz(t, xi, z):
        return np.asarray(g_fn(t, xi, np.tanh(z)), dtype=float)

    A = blk(lambda t, z, xi: -z, n_u)
    B = blk(lambda t, z, xi: -gz(t, xi, z).T @ dV(t, xi), n_u)
    C = blk(lambda t, z, xi: gz(t, xi, z) @ np.tanh(z), n_xi)
    D = blk(lambda t, z, xi: np.asarray(f(t, xi), dtype=float), n_xi)

    def b0(ts, xi):
        xi = np.asarray(xi, dtype=float)
        u0 = np.zeros(n_u)
        return np.stack([-np.asarray(g_fn(t, xi, u0), dtype=float).T @ dV(t, xi)
                         for t in np.atleast_1d(ts)])

    B0 = StateFunction(b0, n_xi, n_xi, label="B0", vectorized=True)

    def rhs_perm(t, x):
        y = rhs(t, np.concatenate([x[n_u:], x[:n_u]]))
        return np.concatenate([y[n_xi:], y[:n_xi]])

    def Wp(t, x):
        return W(t, np.concatenate([x[n_u:], x[:n_u]]))

    def grad_Wp(t, x):
        z, xi = x[:n_u], x[n_u:]
        eps = 1e-6
        vt = (V(t + eps, xi) - V(t - eps, xi)) / (2 * eps)
        return vt, np.concatenate([np.tanh(z), dV(t, xi)])

    matching = MatchingSystem(n_u, n_xi, A, B, C, D, B0, Wp, grad_Wp,
                              OdeSystem(rhs_perm, n, label + "[z,xi]"), label)
    return FeedforwardSystem(ode, n_xi, n_u, W, matching, label)


def make_driftless(g, n_xi: int = 1, n_u: int = 1, V=None, dV=None, label: str = "") -> FeedforwardSystem:
    """Bounded feedback for ``xi' = g(t, xi, u) u`` (no drift); ``V = |xi|^2 / 2`` by default."""
    return make_feedforward_bounded(None, g, n_xi, n_u, V, dV,
                                    label=label or f"driftless[{getattr(g, 'label', 'g')}]")


# -- Euler-Lagrange plants -------------------------------------------------------------------

@dataclass(frozen=True)
class ELPlant:
    """``D(q) q'' + C(q, q') q' + g(q) = u`` with a known regressor.

    An optional ``damping(q, theta)`` matrix adds viscous friction
    ``F_v q'`` to the left-hand side; it is kept apart from ``C`` so that
    ``D' - 2C`` stays skew.

    The model functions are batch-native: ``q`` and ``qd`` have shape
    ``(dof, k)``; matrices come back as ``(k, dof, dof)``, vectors as
    ``(dof, k)``.  ``Y(q, qd, v, a)`` has shape ``(k, p, dof)`` and satisfies
    ``Y^T theta = D(q) a + (C(q, qd) + F_v) v + g(q)``.
    """

    dof: int
    theta_true: np.ndarray
    inertia: Callable
    coriolis: Callable
    gravity: Callable
    regressor_full: Callable
    inertia_dot: Callable
    label: str = ""
    damping: Optional[Callable] = None

    @property
    def n_params(self) -> int:
        return self.theta_true.size

    def _col(self, v):
        return np.asarray(v, dtype=float).reshape(self.dof, 1)

    def D(self, q, theta=None) -> np.ndarray:
        return self.inertia(self._col(q), self._theta(theta))[0]

    def C(self, q, qd, theta=None) -> np.ndarray:
        return self.coriolis(self._col(q), self._col(qd), self._theta(theta))[0]

    def g(self, q, theta=None) -> np.ndarray:
        return self.gravity(self._col(q), self._theta(theta))[:, 0]

    def Y(self, q, qd, v, a) -> np.ndarray:
        return self.regressor_full(self._col(q), self._col(qd), self._col(v), self._col(a))[0]

    def Psi(self, q, qd, qdd) -> np.ndarray:
        """Regressor ``Psi(q, q', q'')`` with ``Psi^T theta = D q'' + C q' + g``."""
        return self.Y(q, qd, qd, qdd)

    def friction(self, q, theta) -> np.ndarray:
        """Viscous friction matrices, ``(k, dof, dof)``; zero without damping."""
        if self.damping is None:
            return np.zeros((q.shape[1], self.dof, self.dof))
        return self.damping(q, theta)

    def _theta(self, theta):
        return self.theta_true if theta is None else np.asarray(theta, dtype=float)

    def check_invariants(self, rng=None, count: int = 100, tol: float = 1e-10) -> dict:
        """Linearity in the parameters, skew symmetry of ``D' - 2C`` and ``D > 0`` on random states."""
        rng = rng if rng is not None else np.random.default_rng(0)
        q = rng.uniform(-np.pi, np.pi, (self.dof, count))
        qd = rng.uniform(-3, 3, (self.dof, count))
        qdd = rng.uniform(-3, 3, (self.dof, count))
        v = rng.uniform(-3, 3, (self.dof, count))
        th = self.theta_true
        Dm = self.inertia(q, th)
        Cm = self.coriolis(q, qd, th)
        lhs = (np.einsum("kij,jk->ik", Dm, qdd) + np.einsum("kij,jk->ik", Cm + self.friction(q, th), qd)
               + self.gravity(q, th))
        rhs = np.einsum("kpi,p->ik", self.regressor_full(q, qd, qd, qdd), th)
        lin = float(np.max(np.abs(lhs - rhs)))
        S = self.inertia_dot(q, qd, th) - 2 * Cm
        skew = float(np.max(np.abs(np.einsum("ik,kij,jk->k", v, S, v))))
        lam = float(np.min(np.linalg.eigvalsh(Dm)))
        sym = float(np.max(np.abs(Dm - np.swapaxes(Dm, 1, 2))))
        if lin > tol:
            raise ContractError(f"{self.label}: regressor identity off by {lin:.3g}")
        if skew > tol:
            raise ContractError(f"{self.label}: D' - 2C not skew ({skew:.3g})")
        if not (lam > 0 and sym <= tol):
            raise ContractError(f"{self.label}: inertia not symmetric positive definite")
        return {"linearity": lin, "skew": skew, "min_inertia_eig": lam}


def make_pendulum_el(theta=(1.0, 9.81), viscous: bool = False) -> ELPlant:
    """Pendulum ``th1 q'' + th2 sin q [+ th3 q'] = u``.

    With ``viscous=True`` the friction term enters through the velocity slot
    of the regressor, so ``Y = (a, sin q, v)``.
    """
    th = np.asarray(theta, dtype=float)
    if viscous and th.size == 2:
        th = np.append(th, 0.1)
    if th.size != (3 if viscous else 2):
        raise ContractError("pendulum takes 2 parameters (3 with viscous friction)")

    def inertia(q, t):
        return np.full((q.shape[1], 1, 1), t[0])

    def coriolis(q, qd, t):
        return np.zeros((q.shape[1], 1, 1))

    def damping(q, t):
        return np.full((q.shape[1], 1, 1), t[2])

    def gravity(q, t):
        return t[1] * np.sin(q)

    def regressor(q, qd, v, a):
        Y = np.empty((q.shape[1], 3 if viscous else 2, 1))
        Y[:, 0, 0] = a[0]
        Y[:, 1, 0] = np.sin(q[0])
        if viscous:
            Y[:, 2, 0] = v[0]
        return Y

    def inertia_dot(q, qd, t):
        return np.zeros((q.shape[1], 1, 1))

    return ELPlant(1, th, inertia, coriolis, gravity, regressor, inertia_dot,
                   "pendulum" + ("+viscous" if viscous else ""), damping if viscous else None)


def make_two_link_el(theta=(1.6667, 0.5, 0.3333)) -> ELPlant:
    """Planar two-link arm without gravity, three lumped inertial parameters.

    ``D = [[th1 + 2 th2 c2, th3 + th2 c2], [th3 + th2 c2, th3]]`` and
    ``C = th2 s2 [[-q2', -(q1' + q2')], [q1', 0]]``.
    """
    th = np.asarray(theta, dtype=float)
    if th.size != 3:
        raise ContractError("two-link arm takes 3 parameters")
    if th[2] * (th[0] - th[2]) - th[1] ** 2 <= 0:
        raise ContractError("parameters do not give a positive definite inertia")

    def inertia(q, t):
        c = np.cos(q[1])
        k = q.shape[1]
        M = np.empty((k, 2, 2))
        M[:, 0, 0] = t[0] + 2 * t[1] * c
        M[:, 0, 1] = M[:, 1, 0] = t[2] + t[1] * c
        M[:, 1, 1] = t[2]
        return M

    def coriolis(q, qd, t):
        s = t[1] * np.sin(q[1])
        M = np.empty((q.shape[1], 2, 2))
        M[:, 0, 0] = -s * qd[1]
        M[:, 0, 1] = -s * (qd[0] + qd[1])
        M[:, 1, 0] = s * qd[0]
        M[:, 1, 1] = 0.0
        return M

    def gravity(q, t):
        return np.zeros_like(q)

    def regressor(q, qd, v, a):
        c, s = np.cos(q[1]), np.sin(q[1])
        Y = np.empty((q.shape[1], 3, 2))
        Y[:, 0, 0] = a[0]
        Y[:, 1, 0] = 2 * c * a[0] + c * a[1] - s * qd[1] * v[0] - s * (qd[0] + qd[1]) * v[1]
        Y[:, 2, 0] = a[1]
        Y[:, 0, 1] = 0.0
        Y[:, 1, 1] = c * a[0] + s * qd[0] * v[0]
        Y[:, 2, 1] = a[0] + a[1]
        return Y

    def inertia_dot(q, qd, t):
        s = t[1] * np.sin(q[1]) * qd[1]
        M = np.empty((q.shape[1], 2, 2))
        M[:, 0, 0] = -2 * s
        M[:, 0, 1] = M[:, 1, 0] = -s
        M[:, 1, 1] = 0.0
        return M

    return ELPlant(2, th, inertia, coriolis, gravity, regressor, inertia_dot, "two_link")


# -- Slotine-Li adaptive controller --------------------------------------------------------

@dataclass(frozen=True)
class ControllerConfig:
    """Gains of the adaptive tracking controller.

    ``K_d`` is SPD and ``lam > 0``.  The adaptation gain ``gamma`` is either a
    positive scalar or an SPD matrix ``Gamma`` (the law becomes
    ``th^' = -Gamma Y s``).
    """

    Kd: np.ndarray = field(default_factory=lambda: np.eye(1) * 5.0)
    lam: float = 1.0
    gamma: object = 2.0

    def __post_init__(self):
        Kd = np.atleast_2d(np.asarray(self.Kd, dtype=float))
        object.__setattr__(self, "Kd", Kd)
        if not _is_spd(Kd):
            raise ContractError("K_d must be symmetric positive definite")
        if not self.lam > 0:
            raise ContractError("lambda must be positive")
        g = np.asarray(self.gamma, dtype=float)
        if g.ndim == 0:
            if not g > 0:
                raise ContractError("gamma must be positive")
            object.__setattr__(self, "gamma", float(g))
        elif not _is_spd(g):
            raise ContractError("a matrix adaptation gain must be symmetric positive definite")
        else:
            object.__setattr__(self, "gamma", g)

    def gain_matrix(self, p: int) -> np.ndarray:
        if np.ndim(self.gamma) == 0:
            return self.gamma * np.eye(p)
        if self.gamma.shape != (p, p):
            raise ContractError(f"adaptation gain must be {p}x{p}")
        return self.gamma

    @classmethod
    def for_dof(cls, dof: int, kd: float = 5.0, lam: float = 1.0, gamma=2.0):
        return cls(np.eye(dof) * kd, lam, gamma)


def whitened_gain(Phi: TimeSignal, scale: float = 1.0, window: float = 2 * math.pi,
                  t0: float = 0.0) -> np.ndarray:
    """``scale * M^{-1}`` with ``M`` the window-averaged Gram matrix of ``Phi``.

    Equalizes the adaptation rate across parameter directions when the
    regressor excites some of them much more weakly than others.
    """
    from .signal_model import window_gram

    M = window_gram(Phi, t0, window) / window
    if np.linalg.eigvalsh(M)[0] <= 1e-12 * max(1.0, float(np.trace(M))):
        raise ContractError("regressor Gram matrix is singular; no whitened gain exists")
    Minv = np.linalg.inv(M)
    return scale * 0.5 * (Minv + Minv.T)


@dataclass(frozen=True)
class SlotineLiSystem:
    """Closed loop in the coordinates ``y = (q~, s, th~)``.

    ``q~ = q - q_d``, ``s = q' - q_r'`` with ``q_r' = q_d' - lam q~`` and
    ``th~ = th - th^``.  ``regressor`` is the desired-trajectory regressor
    ``Phi(t)`` (a ``p x dof`` time signal); ``V`` the Lyapunov function.
    """

    ode: OdeSystem
    plant: ELPlant
    cfg: ControllerConfig
    regressor: TimeSignal
    V: Callable
    label: str = ""

    def split(self, y):
        y = np.asarray(y, dtype=float)
        n = self.plant.dof
        return y[:n], y[n:2 * n], y[2 * n:]


def make_slotine_li(plant: ELPlant, ref: TimeSignal, cfg: ControllerConfig,
                    label: str = "") -> SlotineLiSystem:
    """Adaptive tracking loop ``u = Y(q, q', q_r', q_r'') th^ - K_d s``, ``th^' = -Gamma Y s``.

    ``ref(t)`` returns the ``3 x dof`` matrix ``[q_d; q_d'; q_d'']``.  In
    error coordinates the loop reads::

        q~' = s - lam q~
        D(q) s' = -Y^T th~ - (C(q, q') + F_v) s - K_d s
        th~' = Gamma Y s

    with ``Y = Y(q, q', q_r', q_r'')`` evaluated at the physical state
    ``q = q_d + q~``, ``q' = q_r' + s``.
    """
    n = plant.dof
    p = plant.n_params
    if cfg.Kd.shape != (n, n):
        raise ContractError(f"K_d must be {n}x{n}")
    if ref.shape != (3, n):
        raise ContractError(f"reference must return a 3x{n} matrix, got {ref.shape}")
    rb = _signal_batch(ref)
    Kd, lam = cfg.Kd, float(cfg.lam)
    Gam = cfg.gain_matrix(p)
    Gam_inv = np.linalg.inv(Gam)
    th = plant.theta_true
    label = label or f"slotine_li[{plant.label},{ref.label}]"

    kd00 = float(Kd[0, 0])
    fixed_c = plant.dof == 1 and plant.label.startswith("pendulum")

    def rhs_batch(ts, Y):
        R = rb(ts)  # (k, 3, n)
        qt, s, tht = Y[:n], Y[n:2 * n], Y[2 * n:]
        q = R[:, 0, :].T + qt
        vr = R[:, 1, :].T - lam * qt
        v = vr + s
        ar = R[:, 2, :].T - lam * (s - lam * qt)
        Ym = plant.regressor_full(q, v, vr, ar)  # (k, p, n)
        out = np.empty_like(Y)
        out[:n] = s - lam * qt
        if n == 1:
            ym = Ym[:, :, 0].T  # (p, k)
            if fixed_c:
                # pendulum: constant inertia th1, C = 0, friction th3
                damp = kd00 + (th[2] if th.size == 3 else 0.0)
                out[1] = (-(ym * tht).sum(axis=0) - damp * s[0]) / th[0]
            else:
                Cm = plant.coriolis(q, v, th) + plant.friction(q, th)
                force = -(ym * tht).sum(axis=0) - (Cm[:, 0, 0] + kd00) * s[0]
                out[1] = force / plant.inertia(q, th)[:, 0, 0]
            out[2:] = Gam @ (ym * s[0])
        else:
            Dm = plant.inertia(q, th)
            Cm = plant.coriolis(q, v, th) + plant.friction(q, th)
            force = (-np.einsum("kpi,pk->ik", Ym, tht) - np.einsum("kij,jk->ik", Cm, s) - Kd @ s)
            out[n:2 * n] = np.linalg.solve(Dm, force.T[:, :, None])[:, :, 0].T
            out[2 * n:] = Gam @ np.einsum("kpi,ik->pk", Ym, s)
        if not math.isfinite(float(out[n:2 * n].sum())):
            raise EvaluationError("singular inertia in the closed loop")
        return out

    def rhs(t, y):
        return rhs_batch(np.array([t]), np.asarray(y, dtype=float)[:, None])[:, 0]

    def regressor(ts):
        R = rb(np.atleast_1d(ts))
        q, v, a = R[:, 0, :].T, R[:, 1, :].T, R[:, 2, :].T
        return plant.regressor_full(q, v, v, a)

    Phi = TimeSignal(regressor, ref.domain, f"regressor[{ref.label}]", vectorized=True)

    def V(t, y):
        y = np.asarray(y, dtype=float)
        qt, s, tht = y[:n], y[n:2 * n], y[2 * n:]
        q = rb(np.array([t]))[0, 0] + qt
        Dm = plant.D(q)
        return float(0.5 * s @ Dm @ s + lam * qt @ Kd @ qt + 0.5 * tht @ Gam_inv @ tht)

    ode = OdeSystem(rhs, 2 * n + p, label, {"dof": n, "n_params": p, "lam": lam},
                    rhs_batch)
    return SlotineLiSystem(ode, plant, cfg, Phi, V, label)


def sine_reference(dof: int = 1, amplitude=1.0, omega=1.0) -> TimeSignal:
    """``q_d = a sin(w t)`` per joint with its first two derivatives."""
    a = np.broadcast_to(np.asarray(amplitude, dtype=float), (dof,)).copy()
    w = np.broadcast_to(np.asarray(omega, dtype=float), (dof,)).copy()

    aw, aww = a * w, -a * w * w

    def f(ts):
        ph = np.multiply.outer(ts, w)
        out = np.empty((ph.shape[0], 3, dof))
        sn = np.sin(ph)
        out[:, 0, :] = a * sn
        out[:, 1, :] = aw * np.cos(ph)
        out[:, 2, :] = aww * sn
        return out

    return TimeSignal(f, (-math.inf, math.inf), "sine", vectorized=True)


def constant_reference(dof: int = 1, value=0.0) -> TimeSignal:
    v = np.broadcast_to(np.asarray(value, dtype=float), (dof,)).copy()

    def f(ts):
        out = np.zeros((np.size(ts), 3, dof))
        out[:, 0, :] = v
        return out

    return TimeSignal(f, (-math.inf, math.inf), "constant", vectorized=True)


# -- simple reference systems --------------------------------------------------------------

def make_exp_decay(rate: float = 1.0, dim: int = 1) -> OdeSystem:
    """``x' = -rate x``."""
    return OdeSystem(lambda t, x: -rate * x, dim, f"exp_decay[{rate}]", {"rate": rate},
                     lambda ts, X: -rate * X)


def make_inverse_time_decay(dim: int = 1) -> OdeSystem:
    """``x' = -x / (1 + t)``: asymptotically stable, not uniformly; defined for ``t > -1``."""
    return OdeSystem(lambda t, x: -x / (1.0 + t), dim, "inverse_time_decay", {},
                     lambda ts, X: -X / (1.0 + ts))


def make_rotation(omega: float = 1.0) -> OdeSystem:
    """``x1' = -w x2``, ``x2' = w x1``: norm-preserving, not attractive."""
    J = omega * np.array([[0.0, -1.0], [1.0, 0.0]])
    return OdeSystem(lambda t, x: J @ x, 2, "rotation", {"omega": omega}, lambda ts, X: J @ X)


def make_still(dim: int = 1) -> OdeSystem:
    """``x' = 0``."""
    return OdeSystem(lambda t, x: np.zeros_like(x), dim, "still", {},
                     lambda ts, X: np.zeros_like(X))


# -- diagnostics --------------------------------------------------------------------------

def enough_pe_margin(cmap, rho1_Delta: float, rho4: Callable, s_grid) -> dict:
    """Compare ``exp(-theta(s)) gamma(s)`` against ``3 rho1(Delta) rho4(s)`` on ``s_grid``.

    Reported, not enforced: a negative ``min_margin`` means the sufficient
    excitation-versus-perturbation condition is not met on this grid.
    """
    s = np.asarray(s_grid, dtype=float)
    lhs = np.array([math.exp(-cmap.theta_at(v)) * cmap.gamma_at(v) for v in s])
    rhs = 3.0 * rho1_Delta * np.array([rho4(v) for v in s])
    margin = lhs - rhs
    return {"s": s.tolist(), "excitation": lhs.tolist(), "perturbation": rhs.tolist(),
            "margin": margin.tolist(), "min_margin": float(margin.min()),
            "holds": bool(np.all(margin >= 0))}


# -- registry --------------------------------------------------------------------------------

@dataclass
class CatalogSystem:
    """A named system with whatever structure its analyses use."""

    name: str
    ode: OdeSystem
    params: dict
    domain_t: tuple = (0.0, math.inf)
    matching: Optional[MatchingSystem] = None
    feedforward: Optional[FeedforwardSystem] = None
    slotine: Optional[SlotineLiSystem] = None

    @property
    def F(self) -> StateFunction:
        return system_state_function(self.ode, self.ode.dim, self.domain_t)


def _signal(spec, default) -> TimeSignal:
    spec = dict(spec or default)
    name = spec.pop("name")
    return named_signal(name, **spec)


def _b_gradient(p):
    phi = _signal(p.get("phi"), {"name": "sin"})
    m = make_gradient_adaptive(phi, p.get("Atilde", -1.0), p.get("P", 1.0))
    return CatalogSystem("gradient_adaptive", m.ode, p, matching=m)


def _b_driftless(p):
    g = _signal(p.get("g"), {"name": "sin"})
    ff = make_driftless(g)
    return CatalogSystem("driftless", ff.ode, p, feedforward=ff, matching=ff.matching)


def _b_feedforward(p):
    omega = float(p.get("omega", 0.5))
    g = _signal(p.get("g"), {"name": "sin_cos"})
    if g.shape != (2, 1):
        raise ContractError("feedforward input map must be a 2-vector signal")
    f, fb = rotation_drift(omega)
    ff = make_feedforward_bounded(f, g, 2, 1, f_batch=fb, label=f"feedforward[{g.label}]")
    return CatalogSystem("feedforward", ff.ode, p, feedforward=ff, matching=ff.matching)


def _b_slotine(p):
    plant_name = p.get("plant", "pendulum")
    if plant_name == "pendulum":
        plant = make_pendulum_el(p.get("theta", (1.0, 9.81)))
    elif plant_name == "two_link":
        plant = make_two_link_el(p.get("theta", (1.6667, 0.5, 0.3333)))
    else:
        raise KeyError(plant_name)
    ref = p.get("reference", "sine")
    if ref == "sine":
        r = sine_reference(plant.dof, p.get("amplitude", 1.0), p.get("omega", 1.0))
    elif ref == "constant":
        r = constant_reference(plant.dof, p.get("value", 0.0))
    else:
        raise KeyError(ref)
    gamma = p.get("gamma", 2.0)
    if p.get("whiten_from") is not None:
        # adaptation gain shaped by the regressor of another reference (e.g. the PE one)
        src = dict(p, reference=p["whiten_from"], whiten_from=None, gamma=1.0)
        gamma = whitened_gain(_b_slotine(src).slotine.regressor, float(gamma))
    elif p.get("whiten", False):
        probe = make_slotine_li(plant, r, ControllerConfig.for_dof(plant.dof, p.get("kd", 5.0),
                                                                   p.get("lam", 1.0), 1.0))
        gamma = whitened_gain(probe.regressor, float(gamma))
    cfg = ControllerConfig.for_dof(plant.dof, p.get("kd", 5.0), p.get("lam", 1.0), gamma)
    sl = make_slotine_li(plant, r, cfg)
    return CatalogSystem("slotine_li", sl.ode, p, slotine=sl)


SYSTEM_NAMES = {
    "exp_decay": lambda p: CatalogSystem("exp_decay", make_exp_decay(p.get("rate", 1.0), p.get("dim", 1)), p),
    "inverse_time_decay": lambda p: CatalogSystem("inverse_time_decay",
                                                  make_inverse_time_decay(p.get("dim", 1)), p),
    "rotation": lambda p: CatalogSystem("rotation", make_rotation(p.get("omega", 1.0)), p),
    "still": lambda p: CatalogSystem("still", make_still(p.get("dim", 1)), p),
    "gradient_adaptive": _b_gradient,
    "driftless": _b_driftless,
    "feedforward": _b_feedforward,
    "slotine_li": _b_slotine,
}


def build_system(name: str, params: Optional[dict] = None) -> CatalogSystem:
    """Instantiate a catalog system by name; raises ``KeyError`` for unknown names."""
    if name not in SYSTEM_NAMES:
        raise KeyError(name)
    params = dict(params or {})
    domain = params.pop("domain_t", None)
    sys = SYSTEM_NAMES[name](params)
    if domain is not None:
        lo, hi = (float(v) for v in domain)
        if not lo < hi:
            raise ContractError(f"domain_t must satisfy lo < hi, got {domain}")
        sys = replace(sys, domain_t=(lo, hi), params=dict(params, domain_t=[lo, hi]))
    return sys
