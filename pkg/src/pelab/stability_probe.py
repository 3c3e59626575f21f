"""Empirical stability estimators built on ensembles of simulated trajectories.

* settling times and their dependence on the initial time ``t0`` (the
  uniformity question);
* the overshoot envelope ``sup ||x(t)||`` as a function of ``||x0||``;
* exponential envelope fits;
* the cross-check between uniform attractivity and excitation of the vector
  field;
* the discounted excitation integral ``V(t, x) = -int_t^inf e^{t - tau} |phi1(tau, x)| dtau``
  and the derivative inequality it satisfies along solutions.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .errors import ContractError
from .ode_sim import OdeSystem, Trajectory, integrate_many, sample_many
from .pe_engine import (
    AnnulusGrid,
    CertificateMap,
    Counterexample,
    MU_FLOOR,
    mornar_scalar_pe,
    sphere_directions,
    udpe_certificate,
)
from .signal_model import DEFAULT_QUADRATURE, QuadratureSpec, StateFunction, TimeSignal, window_nodes

__all__ = [
    "settling_time",
    "UniformityReport",
    "uniformity_probe",
    "UGSReport",
    "ugs_probe",
    "ExpFit",
    "ules_fit",
    "NecessityReport",
    "necessity_experiment",
    "contingency_table",
    "VjResult",
    "vj_plus_1",
    "LegoReport",
    "lego_check",
    "DISPERSION_THRESHOLD",
    "TREND_THRESHOLD",
    "H_MAX",
]

DISPERSION_THRESHOLD = 0.5
TREND_THRESHOLD = 0.8
H_MAX = 60.0


def settling_time(traj: Trajectory, sigma: float) -> float:
    """Smallest ``T`` on the grid with ``||x(t)|| <= sigma`` for every ``t >= t0 + T``.

    Returns ``inf`` if the final sample is still outside the ball or the
    trajectory escaped.
    """
    if not sigma > 0:
        raise ContractError("sigma must be positive")
    if traj.escaped:
        return math.inf
    outside = np.nonzero(traj.norms() > sigma)[0]
    if outside.size == 0:
        return 0.0
    k = int(outside[-1])
    if k == traj.times.size - 1:
        return math.inf
    return float(traj.times[k + 1] - traj.t0)


def _directions(dim: int, spec, rng=None) -> np.ndarray:
    if spec is None:
        return sphere_directions(dim)
    if isinstance(spec, (int, np.integer)):
        return sphere_directions(dim, int(spec), rng)
    d = np.atleast_2d(np.asarray(spec, dtype=float))
    if d.shape[1] != dim:
        raise ContractError(f"directions must have {dim} columns")
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def _spearman(a, b) -> float:
    from scipy.stats import spearmanr

    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.size < 2 or np.all(a == a[0]) or np.all(b == b[0]):
        return 0.0
    if a.size == 2:
        return float(np.sign(a[1] - a[0]) * np.sign(b[1] - b[0]))
    return float(spearmanr(a, b).statistic)


@dataclass
class UniformityReport:
    """Settling-time table over initial times, with a uniformity verdict.

    ``settling[t0]`` is the worst settling time over the sampled initial
    states of norm ``r``; ``table`` lists every ``(t0, direction_index, T)``.
    """

    r: float
    sigma: float
    t0_grid: list
    settling: dict
    dispersion: float
    trend: float
    verdict: str
    horizon: float
    step: float
    table: list = field(default_factory=list)
    label: str = ""

    def to_dict(self) -> dict:
        return {"r": self.r, "sigma": self.sigma, "t0_grid": self.t0_grid,
                "settling": {repr(float(k)): v for k, v in self.settling.items()},
                "dispersion": self.dispersion, "trend": self.trend, "verdict": self.verdict,
                "horizon": self.horizon, "step": self.step, "label": self.label}

    def settling_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t0", "direction_index", "T"])
        for t0, j, T in self.table:
            w.writerow([f"{t0:.17g}", j, "inf" if math.isinf(T) else f"{T:.17g}"])
        return buf.getvalue()


def _verdict(t0s, worst, dispersion_threshold, trend_threshold):
    worst = np.asarray(worst, dtype=float)
    if np.all(np.isinf(worst)):
        return math.inf, 0.0, "inconclusive"
    if np.any(np.isinf(worst)):
        dispersion = math.inf
    else:
        med = float(np.median(worst))
        spread = float(worst.max() - worst.min())
        dispersion = 0.0 if spread == 0 else (spread / med if med > 0 else math.inf)
    # inf sorts above every finite value, which is the ranking we want
    ranks_input = np.where(np.isinf(worst), np.finfo(float).max, worst)
    trend = _spearman(t0s, ranks_input)
    if dispersion <= dispersion_threshold:
        return dispersion, trend, "uniform"
    if trend >= trend_threshold:
        return dispersion, trend, "non_uniform"
    return dispersion, trend, "inconclusive"


def uniformity_probe(sys: OdeSystem, r: float, sigma: float, t0_grid: Sequence[float],
                     x0_directions=None, horizon: float = 100.0, step: float = 1e-2,
                     dispersion_threshold: float = DISPERSION_THRESHOLD,
                     trend_threshold: float = TREND_THRESHOLD, rng=None) -> UniformityReport:
    """Settling time ``T(t0)`` from the sphere of radius ``r`` into the ``sigma``-ball.

    Verdicts: ``uniform`` when the relative spread ``(max - min) / median``
    of the per-``t0`` settling times is at most ``dispersion_threshold``;
    ``non_uniform`` when it is larger and the settling times increase with
    ``t0`` (Spearman rank correlation at least ``trend_threshold``, with
    never-settled runs ranked last); ``inconclusive`` otherwise, including
    when nothing settles within the horizon.
    """
    if not (r > 0 and sigma > 0 and horizon > 0 and step > 0):
        raise ContractError("r, sigma, horizon and step must be positive")
    t0s = sorted(float(t) for t in t0_grid)
    if not t0s:
        raise ContractError("t0_grid must be nonempty")
    dirs = _directions(sys.dim, x0_directions, rng)
    starts = [(t0, r * d) for t0 in t0s for d in dirs]
    trajs = integrate_many(sys, starts, horizon, step)
    table = []
    worst = []
    for i, t0 in enumerate(t0s):
        row = []
        for j in range(len(dirs)):
            T = settling_time(trajs[i * len(dirs) + j], sigma)
            table.append((t0, j, T))
            row.append(T)
        worst.append(max(row))
    dispersion, trend, verdict = _verdict(t0s, worst, dispersion_threshold, trend_threshold)
    return UniformityReport(float(r), float(sigma), t0s, dict(zip(t0s, worst)), dispersion,
                            trend, verdict, float(horizon), float(step), table, sys.label)


@dataclass
class UGSReport:
    """Observed overshoot ``sup ||x(t)||`` per initial radius and its monotone envelope."""

    radii: list
    sup_norm: list
    envelope: list
    violation: bool
    witness: Optional[dict] = None

    def to_dict(self) -> dict:
        return {"radii": self.radii, "sup_norm": self.sup_norm, "envelope": self.envelope,
                "violation": self.violation, "witness": self.witness}

    def gamma(self, r: float) -> float:
        """Envelope value at ``r`` (linear interpolation, nondecreasing)."""
        return float(np.interp(r, self.radii, self.envelope))


def ugs_probe(sys: OdeSystem, radii: Sequence[float], t0_grid: Sequence[float],
              horizon: float, step: float = 1e-2, x0_directions=None, rng=None) -> UGSReport:
    """Sup of ``||x(t)||`` over time, initial times and directions, for each radius.

    The envelope is the running maximum over increasing radii, the least
    nondecreasing function above the observations.  An escaped trajectory is
    reported as a violation with its ``(r, t0, x0)``.
    """
    radii = sorted(float(v) for v in radii)
    dirs = _directions(sys.dim, x0_directions, rng)
    starts = [(float(t0), r * d) for r in radii for t0 in t0_grid for d in dirs]
    trajs = integrate_many(sys, starts, horizon, step)
    per = len(t0_grid) * len(dirs)
    sups = []
    witness = None
    for i, r in enumerate(radii):
        chunk = trajs[i * per:(i + 1) * per]
        for tr in chunk:
            if tr.escaped and witness is None:
                witness = {"r": r, "t0": tr.t0, "x0": tr.x0.tolist(), "t_escape": tr.t_end}
        sups.append(max(math.inf if tr.escaped else float(tr.norms().max()) for tr in chunk))
    env = np.maximum.accumulate(np.asarray(sups)).tolist()
    return UGSReport(radii, sups, env, witness is not None, witness)


@dataclass
class ExpFit:
    """Envelope ``||x(t)|| <= gamma1 ||x0|| exp(-gamma2 (t - t0))``.

    ``residual`` is the largest deviation of ``log ||x||`` from the fitted
    tail line over all trajectories; ``ok`` is false with a ``reason`` when
    some tail is not exponential.
    """

    gamma1: float
    gamma2: float
    residual: float
    r: float
    ok: bool = True
    reason: str = ""
    slopes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"gamma1": self.gamma1, "gamma2": self.gamma2, "residual": self.residual,
                "r": self.r, "ok": self.ok, "reason": self.reason, "slopes": self.slopes}


def _tail_fit(t, y):
    """Least squares ``y = a + b t``; returns ``(b, stderr_b, max_abs_residual)``."""
    A = np.stack([np.ones_like(t), t], axis=1)
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    res = y - A @ coef
    dof = max(1, t.size - 2)
    s2 = float(res @ res) / dof
    var_b = s2 / float(((t - t.mean()) ** 2).sum())
    return float(coef[1]), math.sqrt(var_b), float(np.max(np.abs(res)))


def ules_fit(sys: OdeSystem, r: float, t0_grid: Sequence[float], directions=None,
             horizon: float = 20.0, step: float = 1e-2, tail_start: float = 0.25,
             floor: float = 1e-10, curvature: float = 2.0, rng=None) -> ExpFit:
    """Fit an exponential envelope to trajectories starting on the sphere of radius ``r``.

    Each tail (``t >= t0 + tail_start * horizon`` and ``||x|| > floor * r``)
    gets a least-squares line in ``log ||x||``.  A tail is rejected as
    non-exponential when the slope's ``3 sigma`` interval contains 0 or when
    the mean slopes of its first and last thirds differ by more than a
    factor ``curvature`` (algebraic decay flattens out).  ``gamma2`` is the
    smallest decay rate over the ensemble and ``gamma1`` the smallest
    multiplier that makes the envelope hold at every sample.
    """
    dirs = _directions(sys.dim, directions, rng)
    starts = [(float(t0), r * d) for t0 in t0_grid for d in dirs]
    trajs = integrate_many(sys, starts, horizon, step)
    slopes = []
    residual = 0.0
    for tr in trajs:
        if tr.escaped:
            return ExpFit(math.inf, 0.0, math.inf, r, False, "trajectory escaped", slopes)
        t = tr.times - tr.t0
        nrm = tr.norms()
        keep = (t >= tail_start * horizon) & (nrm > floor * r)
        if keep.sum() < 12:
            return ExpFit(math.inf, 0.0, math.inf, r, False,
                          "tail too short above the noise floor", slopes)
        tt, yy = t[keep], np.log(nrm[keep])
        b, se, res = _tail_fit(tt, yy)
        residual = max(residual, res)
        slopes.append(-b)
        if b + 3 * se >= 0:
            return ExpFit(math.inf, 0.0, residual, r, False, "tail slope not significantly negative",
                          slopes)
        k = tt.size // 3
        early = -(yy[k] - yy[0]) / (tt[k] - tt[0])
        late = -(yy[-1] - yy[-1 - k]) / (tt[-1] - tt[-1 - k])
        if not (early > 0 and late > 0) or max(early / late, late / early) > curvature:
            return ExpFit(math.inf, 0.0, residual, r, False,
                          f"tail is not exponential (early/late rate {early:.3g}/{late:.3g})", slopes)
    gamma2 = float(min(slopes))
    gamma1 = 0.0
    for tr in trajs:
        t = tr.times - tr.t0
        n0 = float(np.linalg.norm(tr.x0))
        gamma1 = max(gamma1, float(np.max(tr.norms() * np.exp(gamma2 * t))) / n0)
    return ExpFit(gamma1, gamma2, residual, float(r), True, "", slopes)


# -- necessity of excitation ----------------------------------------------------------

@dataclass
class NecessityReport:
    """Contingency cell (uniformity verdict, excitation of ``F``) for one system."""

    label: str
    verdict: str
    udpe: bool
    consistent: bool
    certificate: dict
    decay: dict = field(default_factory=dict)

    @property
    def cell(self) -> tuple:
        return (self.verdict, "udpe" if self.udpe else "not_udpe")

    def to_dict(self) -> dict:
        return {"label": self.label, "verdict": self.verdict, "udpe": self.udpe,
                "consistent": self.consistent, "cell": list(self.cell),
                "certificate": self.certificate, "decay": self.decay}


def _norm_signal(F: StateFunction, x) -> TimeSignal:
    x = np.asarray(x, dtype=float)

    def f(ts):
        v = F.eval_times(np.atleast_1d(ts), x)
        return np.sqrt(np.einsum("ij,ij->i", v, v))

    return TimeSignal(f, F.domain_t, "norm", vectorized=True)


def necessity_experiment(F: StateFunction, grid: AnnulusGrid, T: float,
                         uniformity: UniformityReport,
                         q: QuadratureSpec = DEFAULT_QUADRATURE, mu_floor: float = MU_FLOOR,
                         label: str = "") -> NecessityReport:
    """Cross-check a uniformity verdict against excitation of the vector field.

    ``F`` counts as excited on the grid when :func:`udpe_certificate`
    succeeds and, at every grid state, the windowed integrals of ``||F||``
    do not fade with the window start (checked with
    :func:`mornar_scalar_pe` on ``t -> ||F(t, x)||`` over the grid's window
    starts).  The cell (uniform, not excited) contradicts the necessity of
    excitation for uniform attractivity; reaching it means the grids are too
    coarse.
    """
    res = udpe_certificate(F, grid, T, q, mu_floor)
    udpe = res.ok
    decay = {}
    if udpe and grid.t_samples.size >= 3:
        for x in grid.points():
            m = mornar_scalar_pe(_norm_signal(F, x), [np.ones(1)], grid.t_samples, T, q, mu_floor)
            if not m.ok:
                udpe = False
                decay = {"x": x.tolist(), "reason": m.reason, "t": m.t}
                break
    summary = {"status": "certificate" if res.ok else "counterexample",
               "T": float(T), "value": float(res.mu if res.ok else res.value),
               "t": None if res.ok else res.t, "x": None if res.ok else res.x}
    consistent = not (uniformity.verdict == "uniform" and not udpe)
    return NecessityReport(label or uniformity.label, uniformity.verdict, udpe, consistent,
                           summary, decay)


def contingency_table(reports: Sequence[NecessityReport]) -> dict:
    """Count systems per (verdict, excitation) cell."""
    table = {f"{v}/{e}": [] for v in ("uniform", "non_uniform", "inconclusive")
             for e in ("udpe", "not_udpe")}
    for rep in reports:
        table["/".join(rep.cell)].append(rep.label)
    return table


# -- discounted excitation integral ------------------------------------------------------

@dataclass
class VjResult:
    """Truncated value of ``-int_t^inf e^{t - tau} |phi1(tau, x)| dtau``.

    ``truncation_bound = M e^{-H}`` bounds the neglected tail when
    ``|phi1| <= M``.
    """

    value: float
    truncation_bound: float
    horizon: float
    bound: float


def _phi_norms(phi1: StateFunction, x, nodes):
    v = phi1.eval_times(nodes, x)
    return np.sqrt(np.einsum("ij,ij->i", v, v))


def vj_plus_1(phi1: StateFunction, t: float, x, H: Optional[float] = None,
              q: QuadratureSpec = DEFAULT_QUADRATURE, M: Optional[float] = None,
              tol: float = 1e-9, H_max: float = H_MAX) -> VjResult:
    """Discounted excitation integral over ``[t, t + H]``.

    ``M`` bounds ``|phi1|`` (estimated from the samples when omitted).  The
    horizon is widened until ``M e^{-H} <= tol``, up to ``H_max``.
    """
    x = np.asarray(x, dtype=float)
    if H is None:
        H = 20.0
    if not H > 0:
        raise ContractError("horizon must be positive")
    H = min(float(H), H_max)
    while True:
        nodes, w = window_nodes(t, H, q)
        vals = _phi_norms(phi1, x, nodes)
        bound = float(M) if M is not None else float(vals.max(initial=0.0))
        if bound * math.exp(-H) <= tol or H >= H_max:
            break
        H = min(H_max, max(H + 1.0, math.log(max(bound, tol) / tol) + 1.0))
    value = -float(w @ (np.exp(t - nodes) * vals))
    return VjResult(min(0.0, value), bound * math.exp(-H), H, bound)


@dataclass
class LegoReport:
    """Largest excess of the measured derivative over the bound along a trajectory."""

    status: str
    max_violation: float
    samples: list = field(default_factory=list)
    message: str = ""

    @property
    def ok(self) -> bool:
        return self.status == "checked"

    def to_dict(self) -> dict:
        return {"status": self.status, "max_violation": self.max_violation,
                "samples": self.samples, "message": self.message}


def lego_check(phi1: StateFunction, traj: Trajectory,
               theta_map: Union[CertificateMap, Counterexample], K_Delta: float,
               rho: Optional[Callable] = None, q: QuadratureSpec = DEFAULT_QUADRATURE,
               n1: int = 0, fd_step: Optional[float] = None, n_points: int = 200,
               H: Optional[float] = None, M: Optional[float] = None) -> LegoReport:
    """Check ``dV/dt <= |phi1| + Y_a(x2) + K rho(x1, phi1)`` along ``traj``.

    ``V`` is :func:`vj_plus_1` and its derivative along the solution is a
    centered finite difference with step ``fd_step`` (default half the
    trajectory step; it must be smaller than the trajectory step).
    ``Y_a(x2) = max(-|x2|, -exp(-theta(|x2|)) gamma(|x2|))`` comes from the
    certificate map of ``phi1``.  The state splits as ``x = (x1, x2)`` with
    ``x1`` of size ``n1``; ``phi1`` takes ``x2`` when its dimension is that of
    ``x2``, otherwise the full state.  ``rho(x1, phi1_value)`` bounds
    ``|x2'|``; when omitted, the measured ``|x2'|`` along the trajectory is
    used.
    """
    if not isinstance(theta_map, CertificateMap):
        return LegoReport("hypothesis_unmet", math.nan, [],
                          "no certificate map: phi1 is not uniformly delta-PE on the grid")
    if fd_step is None:
        fd_step = traj.step / 2
    if not (0 < fd_step < traj.step):
        raise ContractError(f"finite-difference step {fd_step} must lie in (0, {traj.step})")
    n = traj.states.shape[1]
    takes_x2 = phi1.n == n - n1
    lo, hi = traj.times[0] + fd_step, traj.times[-1] - fd_step
    if hi <= lo:
        raise ContractError("trajectory too short for the finite difference")
    ts = np.linspace(lo, hi, n_points)
    X = sample_many(traj, ts)
    Xm = sample_many(traj, ts - fd_step)
    Xp = sample_many(traj, ts + fd_step)
    dX = (Xp - Xm) / (2 * fd_step)

    def arg(x):
        return x[n1:] if takes_x2 else x

    def V(t, x):
        return vj_plus_1(phi1, t, arg(x), H, q, M).value

    worst = -math.inf
    samples = []
    for t, x, xm, xp, dx in zip(ts, X, Xm, Xp, dX):
        lhs = (V(t + fd_step, xp) - V(t - fd_step, xm)) / (2 * fd_step)
        phi = float(np.linalg.norm(phi1.eval(t, arg(x))))
        s2 = float(np.linalg.norm(x[n1:]))
        if s2 > 0:
            Ya = max(-s2, -math.exp(-theta_map.theta_at(s2)) * theta_map.gamma_at(s2))
        else:
            Ya = 0.0
        if rho is None:
            pert = float(np.linalg.norm(dx[n1:]))
        else:
            pert = float(rho(x[:n1], phi))
        rhs = phi + Ya + K_Delta * pert
        worst = max(worst, lhs - rhs)
        samples.append({"t": float(t), "lhs": lhs, "rhs": rhs})
    return LegoReport("checked", float(worst), samples)
