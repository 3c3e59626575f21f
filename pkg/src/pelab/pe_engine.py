"""Persistency-of-excitation certificates.

Two families of checks live here:

* classical PE of a time signal ``Phi(t)``: the windowed Gram integral
  ``int_t^{t+T} Phi Phi^T`` is bounded below by ``mu * I`` for every window
  start examined;
* uniform delta-PE of a state-dependent function ``phi(t, x)`` with respect
  to the leading state block ``x1``: the windowed integral of
  ``||phi(tau, x)||`` is bounded below by ``mu`` whenever ``||x1||`` lies in
  ``[delta, Delta]`` and ``||x2|| <= Delta``.

Every check samples a continuum on a finite grid, so the results are grid
certificates.  Failures are returned as :class:`Counterexample` values that
carry the minimizing witness, never raised.
"""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .errors import ContractError
from .ode_sim import OdeSystem, integrate, sample_many
from .signal_model import (
    DEFAULT_QUADRATURE,
    QuadratureSpec,
    StateFunction,
    TimeSignal,
    min_eigenvalue,
    window_gram,
    window_integral_norm,
    window_nodes,
)

__all__ = [
    "MU_FLOOR",
    "PECertificate",
    "Counterexample",
    "AnnulusGrid",
    "CertificateMap",
    "sphere_directions",
    "window_starts",
    "classical_pe_certificate",
    "udpe_certificate",
    "pointwise_pe_scan",
    "certificate_map",
    "power_certificate",
    "filtered_pe_check",
    "mornar_scalar_pe",
    "certificate_from_dict",
]

MU_FLOOR = 1e-8
KINDS = ("classical_gram", "udpe_annulus", "mornar_scalar")


def _vec(x):
    return None if x is None else [float(v) for v in np.asarray(x).ravel()]


@dataclass
class PECertificate:
    """Window length ``T`` and excitation level ``mu`` with their evidence.

    ``evidence`` holds one ``{"t", "value"[, "x"]}`` entry per window that was
    evaluated; every value is at least ``mu``.  ``valid_t_range`` is the time
    span covered by the examined windows.
    """

    kind: str
    T: float
    mu: float
    valid_t_range: tuple
    evidence: list = field(default_factory=list)
    params: dict = field(default_factory=dict)

    ok = True

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ContractError(f"unknown certificate kind {self.kind!r}")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "T": float(self.T),
            "mu": float(self.mu),
            "valid_t_range": [float(v) for v in self.valid_t_range],
            "evidence": self.evidence,
            "params": self.params,
        }


@dataclass
class Counterexample:
    """A failed certificate: the witness ``(t, x)`` and the value achieved there.

    ``reason`` is one of ``below_floor`` (excitation under ``MU_FLOOR``),
    ``decaying_rate`` (running-integral slope tends to zero),
    ``no_window_found`` (no window length in the search schedule worked),
    ``not_udpe`` (a certificate-map level failed) or
    ``hypothesis_violation`` (an input assumption did not hold).
    """

    kind: str
    reason: str
    value: float
    t: Optional[float] = None
    x: Optional[list] = None
    T: Optional[float] = None
    evidence: list = field(default_factory=list)
    params: dict = field(default_factory=dict)

    ok = False

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "status": "counterexample",
            "reason": self.reason,
            "value": float(self.value),
            "t": None if self.t is None else float(self.t),
            "x": self.x,
            "T": None if self.T is None else float(self.T),
            "evidence": self.evidence,
            "params": self.params,
        }


def certificate_from_dict(d: dict) -> Union[PECertificate, Counterexample]:
    if d.get("status") == "counterexample":
        return Counterexample(d["kind"], d["reason"], d["value"], d.get("t"), d.get("x"),
                              d.get("T"), list(d.get("evidence", [])), dict(d.get("params", {})))
    return PECertificate(d["kind"], float(d["T"]), float(d["mu"]), tuple(d["valid_t_range"]),
                         list(d.get("evidence", [])), dict(d.get("params", {})))


# -- grids ---------------------------------------------------------------------

def sphere_directions(n: int, count: Optional[int] = None, rng=None) -> np.ndarray:
    """Deterministic unit directions in ``R^n``.

    ``n = 1``: ``+1, -1``.  ``n = 2``: ``count`` equally spaced angles starting
    at ``e1``.  ``n = 3``: a Fibonacci lattice.  ``n > 3``: the signed axes
    followed by the signed diagonals (diagonal sign patterns are capped at 64).
    With ``rng`` given, ``count`` uniformly random directions instead.
    """
    if n < 1:
        raise ContractError("dimension must be positive")
    if rng is not None:
        v = rng.standard_normal((count or 2 * n, n))
        return v / np.linalg.norm(v, axis=1, keepdims=True)
    if n == 1:
        return np.array([[1.0], [-1.0]])
    if n == 2:
        k = count or 8
        a = 2 * np.pi * np.arange(k) / k
        return np.stack([np.cos(a), np.sin(a)], axis=1)
    if n == 3:
        k = count or 16
        i = np.arange(k) + 0.5
        z = 1 - 2 * i / k
        r = np.sqrt(1 - z * z)
        phi = np.pi * (1 + 5 ** 0.5) * i
        return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)
    axes = np.concatenate([np.eye(n), -np.eye(n)])
    signs = list(itertools.islice(itertools.product((1.0, -1.0), repeat=n), 64))
    diags = np.asarray(signs) / math.sqrt(n)
    dirs = np.concatenate([axes, diags])
    if count is not None:
        dirs = dirs[:count]
    return dirs


def window_starts(lo: float, hi: float, T: float, count: Optional[int] = None,
                  spacing: Optional[float] = None) -> np.ndarray:
    """Window starts in ``[lo, hi - T]``; by default spaced ``T / 8`` apart (at most 400)."""
    end = hi - T
    if end < lo - 1e-12:
        raise ContractError(f"window of length {T} does not fit in [{lo}, {hi}]")
    if count is None:
        sp = spacing or T / 8
        count = min(400, int(math.floor((end - lo) / sp + 1e-9)) + 1)
    if count <= 1 or end <= lo:
        return np.array([float(lo)])
    return np.linspace(lo, end, count)


@dataclass(frozen=True)
class AnnulusGrid:
    """Sample points of ``{delta <= ||x1|| <= Delta, ||x2|| <= Delta}`` and window starts."""

    delta: float
    Delta: float
    x1_samples: np.ndarray
    x2_samples: np.ndarray
    t_samples: np.ndarray

    def __post_init__(self):
        x1 = np.atleast_2d(np.asarray(self.x1_samples, dtype=float))
        x2 = np.asarray(self.x2_samples, dtype=float)
        if x2.ndim == 1:
            x2 = x2.reshape(-1, 1) if x2.size else np.zeros((1, 0))
        t = np.atleast_1d(np.asarray(self.t_samples, dtype=float))
        object.__setattr__(self, "x1_samples", x1)
        object.__setattr__(self, "x2_samples", x2)
        object.__setattr__(self, "t_samples", t)
        if not (self.delta > 0 and self.Delta >= self.delta):
            raise ContractError(f"need 0 < delta <= Delta, got {self.delta}, {self.Delta}")
        if x1.shape[0] == 0:
            raise ContractError("x1_samples must be nonempty")
        if x2.shape[0] == 0:
            raise ContractError("x2_samples must be nonempty (use one zero-length vector)")
        if t.size == 0:
            raise ContractError("t_samples must be nonempty")
        tol = 1e-12 * max(1.0, self.Delta)
        r1 = np.linalg.norm(x1, axis=1)
        if np.any(r1 < self.delta - tol) or np.any(r1 > self.Delta + tol):
            raise ContractError("an x1 sample violates delta <= ||x1|| <= Delta")
        if x2.shape[1] and np.any(np.linalg.norm(x2, axis=1) > self.Delta + tol):
            raise ContractError("an x2 sample violates ||x2|| <= Delta")

    @property
    def n1(self) -> int:
        return self.x1_samples.shape[1]

    @property
    def n2(self) -> int:
        return self.x2_samples.shape[1]

    @classmethod
    def build(cls, n1: int, n2: int, delta: float, Delta: float, t_samples,
              n_dir: Optional[int] = None, n_rad: int = 3,
              n_dir2: Optional[int] = None, n_rad2: int = 2, rng=None) -> "AnnulusGrid":
        """Product grid: directions x radii for each block, ``x2`` including 0."""
        d1 = sphere_directions(n1, n_dir, rng)
        radii = np.array([delta]) if Delta == delta else np.linspace(delta, Delta, n_rad)
        x1 = np.concatenate([r * d1 for r in radii])
        if n2 == 0:
            x2 = np.zeros((1, 0))
        else:
            d2 = sphere_directions(n2, n_dir2, rng)
            radii2 = np.linspace(0.0, Delta, max(n_rad2, 1))
            parts = [np.zeros((1, n2))] + [r * d2 for r in radii2 if r > 0]
            x2 = np.concatenate(parts)
        return cls(float(delta), float(Delta), x1, x2, np.asarray(t_samples, dtype=float))

    def points(self) -> np.ndarray:
        """All grid states ``(x1, x2)`` in lexicographic ``(i1, i2)`` order."""
        n_a, n_b = self.x1_samples.shape[0], self.x2_samples.shape[0]
        a = np.repeat(self.x1_samples, n_b, axis=0)
        b = np.tile(self.x2_samples, (n_a, 1))
        return np.concatenate([a, b], axis=1)


# -- classical PE ------------------------------------------------------------------

def classical_pe_certificate(S: TimeSignal, T: float,
                             q: QuadratureSpec = DEFAULT_QUADRATURE,
                             t_grid: Sequence[float] = (),
                             mu_floor: float = MU_FLOOR):
    """Smallest Gram eigenvalue over the window starts in ``t_grid``."""
    t_grid = np.asarray(t_grid, dtype=float).ravel()
    if t_grid.size == 0:
        raise ContractError("t_grid must be nonempty")
    evidence = []
    best_t, best = None, math.inf
    for t in t_grid:
        lam = max(0.0, min_eigenvalue(window_gram(S, float(t), T, q)))
        evidence.append({"t": float(t), "value": lam})
        if lam < best:
            best_t, best = float(t), lam
    span = (float(t_grid.min()), float(t_grid.max()) + T)
    params = {"signal": S.label, "rule": q.rule, "mu_floor": mu_floor}
    if best > mu_floor:
        return PECertificate("classical_gram", float(T), best, span, evidence, params)
    return Counterexample("classical_gram", "below_floor", best, best_t, None, float(T),
                          evidence, params)


# -- uniform delta-PE ---------------------------------------------------------------

def _map(fn, items, threads):
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            return list(ex.map(fn, items))
    return [fn(it) for it in items]


def _sweep(f: StateFunction, points: np.ndarray, t_samples: np.ndarray, T: float,
           q: QuadratureSpec, threads: int = 1):
    """Window integrals for every (point, start); shape ``(len(points), len(t_samples))``."""

    def one(x):
        return [window_integral_norm(f, x, float(t), T, q) for t in t_samples]

    return np.asarray(_map(one, list(points), threads), dtype=float).reshape(len(points), len(t_samples))


def udpe_certificate(f: StateFunction, grid: AnnulusGrid, T: float,
                     q: QuadratureSpec = DEFAULT_QUADRATURE,
                     mu_floor: float = MU_FLOOR, threads: int = 1):
    """Minimum windowed norm integral of ``f`` over an annulus grid.

    Ties between grid points are broken by lexicographic grid index, so the
    witness does not depend on ``threads``.
    """
    if grid.n1 != f.n1 or grid.n2 != f.n2:
        raise ContractError(f"grid blocks ({grid.n1}, {grid.n2}) do not match "
                            f"the function partition ({f.n1}, {f.n2})")
    pts = grid.points()
    vals = _sweep(f, pts, grid.t_samples, T, q, threads)
    idx = int(np.argmin(vals))  # first minimum in row-major order
    i, j = divmod(idx, vals.shape[1])
    mu = float(vals[i, j])
    evidence = [{"t": float(t), "x": _vec(pts[a]), "value": float(vals[a, b])}
                for a in range(len(pts)) for b, t in enumerate(grid.t_samples)]
    span = (float(grid.t_samples.min()), float(grid.t_samples.max()) + T)
    params = {"function": f.label, "delta": grid.delta, "Delta": grid.Delta,
              "n1": f.n1, "n2": f.n2, "rule": q.rule, "mu_floor": mu_floor}
    if mu > mu_floor:
        return PECertificate("udpe_annulus", float(T), mu, span, evidence, params)
    return Counterexample("udpe_annulus", "below_floor", mu, float(grid.t_samples[j]),
                          _vec(pts[i]), float(T), evidence, params)


def _doubling(T0: float, T_max: float):
    if not T0 > 0:
        raise ContractError("initial window length must be positive")
    T = T0
    while T <= T_max * (1 + 1e-12):
        yield T
        T *= 2


def _pointwise(f, x, T_max, q, T0, t_span, mu_floor):
    lo, hi = t_span if t_span is not None else f.domain_t
    if not (math.isfinite(lo) and math.isfinite(hi)):
        lo = 0.0 if not math.isfinite(lo) else lo
        hi = lo + 10 * T_max
    witness = None
    for T in _doubling(T0, T_max):
        if hi - lo < T:
            break
        starts = window_starts(lo, hi, T)
        vals = np.array([window_integral_norm(f, x, float(t), T, q) for t in starts])
        j = int(np.argmin(vals))
        evidence = [{"t": float(t), "x": _vec(x), "value": float(v)} for t, v in zip(starts, vals)]
        if vals[j] > mu_floor:
            cert = PECertificate("udpe_annulus", float(T), float(vals[j]),
                                 (float(starts[0]), float(starts[-1]) + T), evidence,
                                 {"function": f.label, "pointwise": True, "rule": q.rule,
                                  "mu_floor": mu_floor})
            return cert, None
        witness = (float(starts[j]), float(vals[j]), float(T), evidence)
    return None, witness


def pointwise_pe_scan(f: StateFunction, x, T_max: float,
                      q: QuadratureSpec = DEFAULT_QUADRATURE, T0: float = 1.0,
                      t_span: Optional[tuple] = None, mu_floor: float = MU_FLOOR):
    """First window length in ``T0, 2 T0, ...`` (up to ``T_max``) that excites at fixed ``x``.

    The infimum is taken over window starts spaced ``T / 8`` apart within
    ``t_span`` (default: the function's domain, or ``[0, 10 T_max]`` when that
    is unbounded).  Returns a certificate or ``None``.
    """
    x = np.asarray(x, dtype=float)
    if not np.any(x[: f.n1]):
        raise ContractError("the x1 part of the state must be nonzero")
    cert, _ = _pointwise(f, x, T_max, q, T0, t_span, mu_floor)
    return cert


# -- certificate maps ----------------------------------------------------------------

def _inf_convolution(breaks: np.ndarray, values: np.ndarray, s: float) -> float:
    """``inf_z {v(z) + |s - z|}`` for the step function ``v = values[i]`` on ``[breaks[i], breaks[i+1])``."""
    best = math.inf
    for i, v in enumerate(values):
        a = breaks[i]
        b = breaks[i + 1] if i + 1 < len(breaks) else math.inf
        if s < a:
            d = a - s
        elif s > b:
            d = s - b
        else:
            d = 0.0
        best = min(best, v + d)
    return best


@dataclass
class CertificateMap:
    """Tabulated window length ``theta(delta)`` and level ``gamma(delta)`` for fixed ``Delta``.

    ``theta`` is nonincreasing and ``gamma`` nondecreasing along ``deltas``.
    :meth:`gamma_at` and :meth:`theta_at` give continuous envelopes between
    (and beyond) the tabulated points: ``gamma`` is the 1-Lipschitz lower
    envelope of the step function it tabulates (zero below the first delta),
    and ``1 / theta`` the 1-Lipschitz lower envelope of ``1 / max(1, T)``.
    """

    Delta: float
    deltas: list
    theta: list
    gamma: list
    raw_T: list = field(default_factory=list)
    raw_mu: list = field(default_factory=list)

    ok = True

    def __post_init__(self):
        d = np.asarray(self.deltas, dtype=float)
        th = np.asarray(self.theta, dtype=float)
        ga = np.asarray(self.gamma, dtype=float)
        if not (d.size == th.size == ga.size and d.size > 0):
            raise ContractError("deltas, theta and gamma must be nonempty and aligned")
        if np.any(np.diff(d) <= 0):
            raise ContractError("deltas must be increasing")
        if not (np.all(np.isfinite(th)) and np.all(np.isfinite(ga))
                and np.all(th > 0) and np.all(ga > 0)):
            raise ContractError("theta and gamma must be finite and positive")
        if np.any(np.diff(th) > 0) or np.any(np.diff(ga) < 0):
            raise ContractError("theta must be nonincreasing and gamma nondecreasing")

    def gamma_at(self, s: float) -> float:
        if s <= 0:
            return 0.0
        breaks = np.concatenate([[0.0], np.asarray(self.deltas, dtype=float)])
        values = np.concatenate([[0.0], np.asarray(self.gamma, dtype=float)])
        return _inf_convolution(breaks, values, s)

    def theta_at(self, s: float) -> float:
        if s <= 0:
            return math.inf
        breaks = np.asarray(self.deltas, dtype=float).copy()
        breaks[0] = 0.0  # below the first delta reuse the largest window length
        inv = 1.0 / np.maximum(1.0, np.asarray(self.theta, dtype=float))
        return 1.0 / _inf_convolution(breaks, inv, s)

    def to_dict(self) -> dict:
        return {"Delta": float(self.Delta), "deltas": [float(v) for v in self.deltas],
                "theta": [float(v) for v in self.theta], "gamma": [float(v) for v in self.gamma],
                "raw_T": [float(v) for v in self.raw_T], "raw_mu": [float(v) for v in self.raw_mu]}

    @classmethod
    def from_dict(cls, d: dict) -> "CertificateMap":
        return cls(d["Delta"], list(d["deltas"]), list(d["theta"]), list(d["gamma"]),
                   list(d.get("raw_T", [])), list(d.get("raw_mu", [])))


def certificate_map(f: StateFunction, Delta: float, delta_grid: Sequence[float],
                    q: QuadratureSpec = DEFAULT_QUADRATURE, t_samples=None,
                    T0: float = 1.0, T_max: float = 64.0, mu_floor: float = MU_FLOOR,
                    grid_kwargs: Optional[dict] = None, threads: int = 1):
    """Per-delta certificates on ``delta <= ||x1|| <= Delta``, then monotone regularization.

    For each ``delta`` the window length is searched on the doubling schedule
    ``T0, 2 T0, ...``.  The regularized values at ``delta_i`` are the running
    infimum of ``mu`` and the running supremum of ``T`` over
    ``delta_j >= delta_i``.  Returns a :class:`CertificateMap` or, if some
    ``delta`` admits no certificate, a :class:`Counterexample` with reason
    ``not_udpe``.
    """
    deltas = np.asarray(delta_grid, dtype=float)
    if deltas.size == 0 or np.any(np.diff(deltas) <= 0):
        raise ContractError("delta_grid must be nonempty and increasing")
    if np.any(deltas <= 0) or np.any(deltas > Delta * (1 + 1e-12)):
        raise ContractError("delta_grid entries must lie in (0, Delta]")
    if t_samples is None:
        lo = f.domain_t[0] if math.isfinite(f.domain_t[0]) else 0.0
        t_samples = np.linspace(lo, lo + 2 * np.pi, 9)
    gk = dict(grid_kwargs or {})
    raw_T, raw_mu = [], []
    for d in deltas:
        grid = AnnulusGrid.build(f.n1, f.n2, float(d), float(Delta), t_samples, **gk)
        found = None
        last = None
        for T in _doubling(T0, T_max):
            res = udpe_certificate(f, grid, T, q, mu_floor, threads)
            if res.ok:
                found = res
                break
            last = res
        if found is None:
            ce = last
            return Counterexample("udpe_annulus", "not_udpe", ce.value, ce.t, ce.x, ce.T, [],
                                  {"delta": float(d), "Delta": float(Delta), "function": f.label,
                                   "message": f"not uniformly delta-PE at delta={d}"})
        raw_T.append(found.T)
        raw_mu.append(found.mu)
    raw_T = np.asarray(raw_T)
    raw_mu = np.asarray(raw_mu)
    gamma = np.minimum.accumulate(raw_mu[::-1])[::-1]
    theta = np.maximum.accumulate(raw_T[::-1])[::-1]
    return CertificateMap(float(Delta), deltas.tolist(), theta.tolist(), gamma.tolist(),
                          raw_T.tolist(), raw_mu.tolist())


# -- derived facts -----------------------------------------------------------------------

def power_certificate(c: PECertificate, p: float) -> PECertificate:
    """Certificate for ``|phi|^p`` from one for ``phi``: ``mu_p = mu^p / T^(p/q)``, ``1/p + 1/q = 1``."""
    if not p > 1:
        raise ContractError(f"power must exceed 1, got {p}")
    if c.kind not in ("udpe_annulus", "classical_gram"):
        raise ContractError(f"cannot raise a {c.kind} certificate to a power")
    q_conj = p / (p - 1.0)
    mu_p = c.mu ** p / c.T ** (p / q_conj)
    params = dict(c.params, power=float(p), base_mu=float(c.mu))
    return PECertificate(c.kind, c.T, float(mu_p), tuple(c.valid_t_range), list(c.evidence), params)


def _as_bound(bound):
    if bound is None:
        return None
    if callable(bound):
        return bound
    return lambda t: float(bound)


def filtered_pe_check(f: StateFunction, f_phi: Callable, z, phi_f0,
                      horizon: Optional[float] = None,
                      q: QuadratureSpec = DEFAULT_QUADRATURE, T0: float = 1.0,
                      T_max: Optional[float] = None, burn_in: Optional[float] = None,
                      bound=None, step: Optional[float] = None,
                      mu_floor: float = MU_FLOOR):
    """Excitation of the filtered signal ``Phi_f' = -f_phi(t, Phi_f) Phi_f + phi(t, z)``.

    The filter runs from ``(0, phi_f0)``.  ``f_phi`` returns a scalar or an
    ``m x m`` matrix.  ``bound`` (a number or a function of ``t``) is the
    envelope the filter state must respect; breaking it, or escaping, yields a
    ``hypothesis_violation`` counterexample.  Windows are scanned after a
    burn-in of five filter time constants.
    """
    z = np.asarray(z, dtype=float)
    phi_f0 = np.atleast_1d(np.asarray(phi_f0, dtype=float))
    m = phi_f0.size
    T_search = T_max if T_max is not None else 16 * T0
    cert_in = None
    if np.any(z[: f.n1]):
        cert_in, _ = _pointwise(f, z, T_search, q, T0, None, mu_floor)
    T_in = cert_in.T if cert_in is not None else T0
    if burn_in is None:
        gain = float(np.max(np.abs(np.atleast_1d(f_phi(0.0, phi_f0)))))
        burn_in = 5.0 / gain if gain > 0 else 5.0
    if horizon is None:
        horizon = burn_in + 10 * T_in
    if step is None:
        step = min(1e-2, T_in / 100)

    def rhs(t, pf):
        damp = np.asarray(f_phi(t, pf), dtype=float)
        drive = f.eval(t, z)
        return -(damp @ pf if damp.ndim == 2 else damp * pf) + drive

    traj = integrate(OdeSystem(rhs, m, "filter"), 0.0, phi_f0, horizon, step)
    params = {"function": f.label, "burn_in": burn_in, "horizon": horizon,
              "input_certified": cert_in is not None, "input_T": T_in,
              "input_mu": None if cert_in is None else cert_in.mu}
    if traj.escaped:
        return Counterexample("udpe_annulus", "hypothesis_violation", math.inf,
                              traj.t_end, _vec(traj.states[-1]), None, [],
                              dict(params, message="filter state escaped"))
    bnd = _as_bound(bound)
    if bnd is not None:
        norms = traj.norms()
        limits = np.array([bnd(t) for t in traj.times])
        over = np.nonzero(norms > limits)[0]
        if over.size:
            k = int(over[0])
            return Counterexample("udpe_annulus", "hypothesis_violation", float(norms[k]),
                                  float(traj.times[k]), _vec(traj.states[k]), None, [],
                                  dict(params, message="filter state exceeds its bound"))

    def filtered(ts, _x):
        return sample_many(traj, np.clip(ts, traj.times[0], traj.times[-1]))

    g = StateFunction(filtered, 1, 1, (0.0, traj.t_end), "filtered", vectorized=True)
    cert, witness = _pointwise(g, np.ones(1), horizon - burn_in, q, T_in,
                               (burn_in, traj.t_end), mu_floor)
    if cert is not None:
        cert.params.update(params)
        return cert
    if witness is None:
        return Counterexample("udpe_annulus", "no_window_found", 0.0, None, None, None, [], params)
    t_w, v_w, T_w, ev = witness
    return Counterexample("udpe_annulus", "below_floor", v_w, t_w, None, T_w, ev, params)


def _spearman(a, b) -> float:
    from scipy.stats import spearmanr
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.size < 3 or np.all(a == a[0]) or np.all(b == b[0]):
        return 0.0
    return float(spearmanr(a, b).statistic)


def mornar_scalar_pe(S: TimeSignal, directions, t0_grid, horizon: float,
                     q: QuadratureSpec = DEFAULT_QUADRATURE, mu_floor: float = MU_FLOOR,
                     decay_ratio: float = 0.5, trend: float = -0.8):
    """Linear lower envelope ``int_{t0}^t ||P(s) x|| ds >= a (t - t0) + b``.

    For each unit direction ``x`` the running integral ``g`` is tabulated on
    ``[min t0, max t0 + horizon]``.  The slope is ``a = min_t0 g(t0, t0 + H) / H``
    and ``b`` is the smallest intercept that makes the line a lower bound on
    every tabulated pair.  A direction whose per-start slopes fall by more
    than ``decay_ratio`` with a decreasing rank trend (Spearman below
    ``trend``) is reported as ``a = 0``: the running integral is sublinear.
    """
    dirs = [np.asarray(d, dtype=float).ravel() for d in directions]
    if not dirs:
        raise ContractError("directions must be nonempty")
    for d in dirs:
        if abs(np.linalg.norm(d) - 1.0) > 1e-9:
            raise ContractError(f"direction {d} is not unit-norm")
    t0s = np.sort(np.asarray(t0_grid, dtype=float).ravel())
    if t0s.size == 0:
        raise ContractError("t0_grid must be nonempty")
    lo, hi = float(t0s[0]), float(t0s[-1]) + horizon
    h = q.step_for(horizon)
    n = int(math.ceil((hi - lo) / h))
    ts = lo + (hi - lo) * np.arange(n + 1) / n
    h = (hi - lo) / n
    P = S.eval_many(ts)
    i0 = np.rint((t0s - lo) / h).astype(int)
    J = int(round(horizon / h))
    dts = np.arange(J + 1) * h
    results = []
    worst = None
    for k, x in enumerate(dirs):
        if P.shape[2] != x.size:
            raise ContractError(f"direction of size {x.size} does not fit a {P.shape[1:]} signal")
        vals = np.linalg.norm(P @ x, axis=1)
        G = np.concatenate([[0.0], np.cumsum(0.5 * h * (vals[1:] + vals[:-1]))])
        rows = np.stack([G[i:i + J + 1] - G[i] for i in i0])
        rates = rows[:, -1] / horizon
        a = float(rates.min())
        b = float(np.min(rows - a * dts))
        ratio = float(rates.min() / rates.max()) if rates.max() > 0 else 0.0
        rho = _spearman(t0s, rates)
        decaying = ratio < decay_ratio and rho <= trend
        entry = {"direction": _vec(x), "a": a, "b": b, "rate_ratio": ratio,
                 "rate_trend": rho, "rates": [{"t": float(t), "value": float(r)}
                                               for t, r in zip(t0s, rates)]}
        if decaying or a <= mu_floor:
            entry["a"] = 0.0
            entry["a_observed"] = a
        results.append(entry)
        if worst is None or entry["a"] < results[worst]["a"]:
            worst = k
    params = {"signal": S.label, "horizon": horizon, "per_direction": results}
    flat = results[worst]
    if flat["a"] <= mu_floor:
        t_min = flat["rates"][int(np.argmin([r["value"] for r in flat["rates"]]))]["t"]
        reason = "decaying_rate" if flat.get("a_observed", 0.0) > mu_floor else "below_floor"
        return Counterexample("mornar_scalar", reason, 0.0, t_min, flat["direction"], horizon,
                              flat["rates"], params)
    a = min(r["a"] for r in results)
    b = min(r["b"] for r in results)
    evidence = [{"t": r["t"], "x": e["direction"], "value": r["value"]}
                for e in results for r in e["rates"]]
    params["b"] = b
    return PECertificate("mornar_scalar", float(horizon), a, (lo, hi), evidence, params)
