"""Command-line front end: configs in, JSON/CSV/SVG artifacts out.

A config is a JSON object::

    {
      "name": "eg31",
      "seed": 0,
      "output_dir": null,
      "system": {"name": "gradient_adaptive", "params": {}},
      "signals": [{"id": "psi", "kind": "state_function", "name": "eg31_psi", "params": {}}],
      "analysis": [{"id": "udpe", "op": "udpe", "params": {"target": "psi", "T": 6.28}}],
      "checks": [{"metric": "udpe.mu", "cmp": "abs_close", "value": 4.0, "tol": 1e-3}]
    }

Each analysis entry writes ``<id>.json`` (plus CSV/SVG for simulations and
settling tables).  Targets name an entry of ``signals`` or a part of the
system: ``system.F``, ``system.B0`` or ``system.regressor``.

Exit codes: 0 success, 2 a counterexample or failed check, 1 an error.
"""

from __future__ import annotations

import argparse
import copy
import csv
import io
import json
import math
import os
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np

from . import pe_engine as pe
from . import stability_probe as sp
from .errors import ConfigError, PelabError
from .io_util import atomic_write_text, dumps, to_jsonable, write_json
from .ode_sim import integrate_many
from .signal_model import (
    QuadratureSpec,
    along_path,
    named_signal,
    named_state_function,
    window_integral_norm,
)
from .system_catalog import SYSTEM_NAMES, build_system

EXIT_OK, EXIT_ERROR, EXIT_COUNTEREXAMPLE = 0, 1, 2

CERTIFY_OPS = ("window_integral", "classical_pe", "udpe", "pointwise", "certificate_map",
               "mornar", "power", "vj")
SIMULATE_OPS = ("simulate",)
PROBE_OPS = ("uniformity", "ugs", "ules", "necessity", "lego")
ALL_OPS = CERTIFY_OPS + SIMULATE_OPS + PROBE_OPS
CHECK_CMPS = ("lt", "le", "gt", "ge", "eq", "in", "abs_close", "rel_close")
TOP_KEYS = ("name", "seed", "output_dir", "system", "signals", "analysis", "checks")

EXPERIMENTS = {
    "eg31": ("eg31.json", "x2_wrt_x1.json"),
    "mornar": ("mornar.json",),
    "mrac-pe": ("mrac_pe.json",),
    "mrac-nope": ("mrac_nope.json",),
    "feedforward": ("feedforward.json",),
    "driftless": ("driftless.json",),
    "slotli-pe": ("slotli_pe.json",),
    "slotli-nope": ("slotli_nope.json",),
    "necessity": ("necessity.json",),
}


# -- config ------------------------------------------------------------------------

@dataclass
class ExperimentConfig:
    """Parsed experiment: a system, named signals, analyses and pass/fail checks."""

    name: str
    seed: int = 0
    output_dir: Optional[str] = None
    system: Optional[dict] = None
    signals: list = field(default_factory=list)
    analysis: list = field(default_factory=list)
    checks: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"name": self.name, "seed": self.seed, "output_dir": self.output_dir,
                "system": copy.deepcopy(self.system), "signals": copy.deepcopy(self.signals),
                "analysis": copy.deepcopy(self.analysis), "checks": copy.deepcopy(self.checks)}


def _need(d, key, where, kind=None):
    if key not in d:
        raise ConfigError("missing required key", f"{where}.{key}" if where else key)
    v = d[key]
    if kind is not None and not isinstance(v, kind):
        raise ConfigError(f"expected {kind.__name__ if isinstance(kind, type) else 'value'}",
                          f"{where}.{key}" if where else key)
    return v


def parse_config(data: dict) -> ExperimentConfig:
    """Validate a config dict; unknown names raise :class:`ConfigError` with the key."""
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    for k in data:
        if k not in TOP_KEYS:
            raise ConfigError("unknown key", k)
    name = _need(data, "name", "", str)
    seed = data.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise ConfigError("seed must be a nonnegative integer", "seed")
    out = data.get("output_dir")
    if out is not None and not isinstance(out, str):
        raise ConfigError("expected a string", "output_dir")
    system = data.get("system")
    if system is not None:
        if not isinstance(system, dict):
            raise ConfigError("expected an object", "system")
        sname = _need(system, "name", "system", str)
        if sname not in SYSTEM_NAMES:
            raise ConfigError(f"unknown catalog system {sname!r}; known: {sorted(SYSTEM_NAMES)}",
                              "system.name")
        if not isinstance(system.get("params", {}), dict):
            raise ConfigError("expected an object", "system.params")
        system = {"name": sname, "params": dict(system.get("params", {}))}
    signals = data.get("signals", [])
    if not isinstance(signals, list):
        raise ConfigError("expected a list", "signals")
    ids = set()
    for i, s in enumerate(signals):
        where = f"signals[{i}]"
        if not isinstance(s, dict):
            raise ConfigError("expected an object", where)
        sid = _need(s, "id", where, str)
        kind = _need(s, "kind", where, str)
        sname = _need(s, "name", where, str)
        if kind == "signal":
            if sname != "csv" and sname not in _signal_names():
                raise ConfigError(f"unknown signal {sname!r}", f"{where}.name")
        elif kind == "state_function":
            if sname not in _state_function_names():
                raise ConfigError(f"unknown state function {sname!r}", f"{where}.name")
        else:
            raise ConfigError("kind must be 'signal' or 'state_function'", f"{where}.kind")
        if sid in ids:
            raise ConfigError("duplicate id", f"{where}.id")
        ids.add(sid)
    analysis = data.get("analysis", [])
    if not isinstance(analysis, list):
        raise ConfigError("expected a list", "analysis")
    aids = set()
    for i, a in enumerate(analysis):
        where = f"analysis[{i}]"
        if not isinstance(a, dict):
            raise ConfigError("expected an object", where)
        op = _need(a, "op", where, str)
        if op not in ALL_OPS:
            raise ConfigError(f"unknown op {op!r}; known: {list(ALL_OPS)}", f"{where}.op")
        aid = a.get("id", f"{op}_{i}")
        if not isinstance(aid, str) or aid in aids:
            raise ConfigError("ids must be unique strings", f"{where}.id")
        aids.add(aid)
        if not isinstance(a.get("params", {}), dict):
            raise ConfigError("expected an object", f"{where}.params")
        if op in SIMULATE_OPS + PROBE_OPS and op != "necessity" and system is None:
            raise ConfigError(f"op {op!r} needs a system", f"{where}.op")
    checks = data.get("checks", [])
    if not isinstance(checks, list):
        raise ConfigError("expected a list", "checks")
    for i, c in enumerate(checks):
        where = f"checks[{i}]"
        if not isinstance(c, dict):
            raise ConfigError("expected an object", where)
        metric = _need(c, "metric", where, str)
        if metric.split(".", 1)[0] not in aids:
            raise ConfigError(f"metric refers to unknown analysis id {metric!r}", f"{where}.metric")
        cmp = _need(c, "cmp", where, str)
        if cmp not in CHECK_CMPS:
            raise ConfigError(f"unknown comparison {cmp!r}", f"{where}.cmp")
        _need(c, "value", where)
    return ExperimentConfig(name, seed, out, system, copy.deepcopy(signals),
                            copy.deepcopy(analysis), copy.deepcopy(checks))


def _signal_names():
    from .signal_model import SIGNAL_NAMES
    return SIGNAL_NAMES


def _state_function_names():
    from .signal_model import STATE_FUNCTION_NAMES
    return STATE_FUNCTION_NAMES


def bundled_config_dir():
    return resources.files("pelab") / "configs"


def resolve_config_path(path) -> Path:
    """The file itself, or a bundled config of the same basename."""
    p = Path(path)
    if p.is_file():
        return p
    bundled = bundled_config_dir() / p.name
    if bundled.is_file():
        return Path(str(bundled))
    raise ConfigError(f"config file not found: {path}", "--config")


def load_config(path) -> ExperimentConfig:
    p = resolve_config_path(path)
    text = p.read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}",
                          str(p)) from None
    return parse_config(data)


# -- evaluation context ----------------------------------------------------------------

class Context:
    """Objects shared by the analyses of one config."""

    def __init__(self, cfg: ExperimentConfig, threads: int = 1, step: Optional[float] = None):
        self.cfg = cfg
        self.threads = threads
        self.step = step
        self.rng = np.random.default_rng(cfg.seed)
        self.system = build_system(cfg.system["name"], cfg.system["params"]) if cfg.system else None
        self.objects = {}
        for s in cfg.signals:
            params = dict(s.get("params", {}))
            domain = s.get("domain", [0.0, math.inf])
            if s["kind"] == "signal":
                self.objects[s["id"]] = named_signal(s["name"], domain=tuple(domain), **params)
            else:
                self.objects[s["id"]] = named_state_function(s["name"], s.get("n"), s.get("n1"),
                                                             domain=tuple(domain), **params)
        self.results = {}

    def target(self, name):
        if name in self.objects:
            return self.objects[name]
        if name.startswith("system.") and self.system is not None:
            part = name.split(".", 1)[1]
            if part == "F":
                return self.system.F
            if part == "B0" and self.system.matching is not None:
                return self.system.matching.B0
            if part == "regressor" and self.system.slotine is not None:
                return self.system.slotine.regressor
        raise ConfigError(f"unknown target {name!r}", "target")

    def sim_step(self, p, default=1e-2):
        return float(self.step if self.step is not None else p.get("step", default))


def _rng(ctx, p):
    """The seeded generator when ``random_directions`` is requested, else deterministic lattices."""
    return ctx.rng if p.get("random_directions", False) else None


def _quad(p) -> QuadratureSpec:
    q = p.get("quadrature", {})
    return QuadratureSpec(q.get("rule", "simpson"), q.get("step"))


def _grid_times(spec, default):
    if spec is None:
        return np.asarray(default, dtype=float)
    if isinstance(spec, dict):
        return np.linspace(float(spec["start"]), float(spec["stop"]), int(spec["num"]))
    return np.asarray(spec, dtype=float)


def _annulus(ctx, p, n1, n2):
    g = dict(p.get("grid", {}))
    delta = float(g.get("delta", 1.0))
    Delta = float(g.get("Delta", delta))
    ts = _grid_times(g.get("t_samples"), np.linspace(0.0, 2 * math.pi, 9))
    return pe.AnnulusGrid.build(n1, n2, delta, Delta, ts, g.get("n_dir"), int(g.get("n_rad", 3)),
                                g.get("n_dir2"), int(g.get("n_rad2", 2)), _rng(ctx, p))


def _cert_result(res):
    d = res.to_dict()
    if res.ok:
        d["status"] = "certificate"
        metrics = {"status": "certificate", "mu": res.mu, "T": res.T}
        if "b" in res.params:
            metrics["a"] = res.mu
            metrics["b"] = res.params["b"]
    else:
        metrics = {"status": "counterexample", "reason": res.reason, "value": res.value,
                   "t": res.t, "x": res.x, "T": res.T}
        if res.kind == "mornar_scalar":
            metrics["a"] = 0.0
    return d, metrics, not res.ok


# -- operations ------------------------------------------------------------------------
# Each returns (json document, metrics dict, counterexample flag, extra files).

def op_window_integral(ctx, p, aid):
    f = ctx.target(p["target"])
    if "path" in p:
        f = along_path(f, ctx.target(p["path"]))
        x = [0.0]
    else:
        x = p["x"]
    v = window_integral_norm(f, x, float(p.get("t", 0.0)), float(p["T"]), _quad(p))
    return {"value": v, "params": p}, {"value": v}, False, {}


def op_classical_pe(ctx, p, aid):
    S = ctx.target(p["target"])
    T = float(p["T"])
    res = pe.classical_pe_certificate(S, T, _quad(p), _grid_times(p.get("t_grid"), [0.0]),
                                      float(p.get("mu_floor", pe.MU_FLOOR)))
    ctx.results[aid] = res
    return _cert_result(res) + ({},)


def op_udpe(ctx, p, aid):
    f = ctx.target(p["target"])
    grid = _annulus(ctx, p, f.n1, f.n2)
    res = pe.udpe_certificate(f, grid, float(p["T"]), _quad(p),
                              float(p.get("mu_floor", pe.MU_FLOOR)), ctx.threads)
    ctx.results[aid] = res
    return _cert_result(res) + ({},)


def op_pointwise(ctx, p, aid):
    f = ctx.target(p["target"])
    span = tuple(p["t_span"]) if "t_span" in p else None
    res = pe.pointwise_pe_scan(f, p["x"], float(p.get("T_max", 64.0)), _quad(p),
                               float(p.get("T0", 1.0)), span, float(p.get("mu_floor", pe.MU_FLOOR)))
    if res is None:
        return ({"status": "counterexample", "reason": "no_window_found", "x": p["x"]},
                {"status": "counterexample", "reason": "no_window_found"}, True, {})
    ctx.results[aid] = res
    return _cert_result(res) + ({},)


def op_certificate_map(ctx, p, aid):
    f = ctx.target(p["target"])
    ts = _grid_times(p.get("t_samples"), None) if "t_samples" in p else None
    res = pe.certificate_map(f, float(p["Delta"]), p["deltas"], _quad(p), ts,
                             float(p.get("T0", 1.0)), float(p.get("T_max", 64.0)),
                             float(p.get("mu_floor", pe.MU_FLOOR)), p.get("grid"), ctx.threads)
    ctx.results[aid] = res
    if isinstance(res, pe.CertificateMap):
        d = res.to_dict()
        d["status"] = "certificate"
        return d, {"status": "certificate", "gamma": res.gamma, "theta": res.theta}, False, {}
    return _cert_result(res) + ({},)


def op_mornar(ctx, p, aid):
    S = ctx.target(p["target"])
    dirs = p.get("directions")
    if dirs is None:
        dirs = list(np.eye(S.shape[0]))
    res = pe.mornar_scalar_pe(S, [np.asarray(d, dtype=float) for d in dirs],
                              _grid_times(p.get("t0_grid"), [0.0]), float(p["horizon"]), _quad(p),
                              float(p.get("mu_floor", pe.MU_FLOOR)),
                              float(p.get("decay_ratio", 0.5)), float(p.get("trend", -0.8)))
    ctx.results[aid] = res
    return _cert_result(res) + ({},)


def op_power(ctx, p, aid):
    base = ctx.results.get(p["of"])
    if base is None:
        raise ConfigError(f"no earlier certificate with id {p['of']!r}", "params.of")
    if not base.ok:
        return _cert_result(base) + ({},)
    res = pe.power_certificate(base, float(p.get("p", 2.0)))
    ctx.results[aid] = res
    return _cert_result(res) + ({},)


def op_vj(ctx, p, aid):
    f = ctx.target(p["target"])
    r = sp.vj_plus_1(f, float(p.get("t", 0.0)), p["x"], p.get("H"), _quad(p), p.get("M"),
                     float(p.get("tol", 1e-9)), float(p.get("H_max", sp.H_MAX)))
    d = {"value": r.value, "truncation_bound": r.truncation_bound, "horizon": r.horizon,
         "bound": r.bound}
    return d, d, False, {}


def _starts(ctx, p, dim):
    t0s = [float(t) for t in p.get("t0s", [0.0])]
    if "x0s" in p:
        x0s = [np.asarray(x, dtype=float) for x in p["x0s"]]
    else:
        r = float(p.get("r", 1.0))
        x0s = list(r * pe.sphere_directions(dim, p.get("directions"), _rng(ctx, p)))
    return [(t0, x0) for t0 in t0s for x0 in x0s]


def _lyapunov(sysobj):
    if sysobj.slotine is not None:
        return sysobj.slotine.V
    if sysobj.feedforward is not None:
        return sysobj.feedforward.W
    if sysobj.matching is not None:
        return sysobj.matching.V
    return None


def _decimate(n, limit=1500):
    return np.unique(np.linspace(0, n - 1, min(n, limit)).astype(int))


def render_svg(series, title="", width=800, height=500) -> str:
    """Log-scale plot of ``(t, ||x||)`` polylines with decade gridlines."""
    floor = 1e-16
    ys = [np.maximum(np.asarray(y, dtype=float), floor) for _, y in series]
    xs = [np.asarray(t, dtype=float) for t, _ in series]
    pos = np.concatenate([y[np.isfinite(y)] for y in ys]) if ys else np.array([1.0])
    lo = math.floor(math.log10(max(floor, pos.min()))) if pos.size else -1
    hi = math.ceil(math.log10(pos.max())) if pos.size else 1
    if hi <= lo:
        hi = lo + 1
    tmin = min((float(x[0]) for x in xs), default=0.0)
    tmax = max((float(x[-1]) for x in xs), default=1.0)
    if tmax <= tmin:
        tmax = tmin + 1.0
    ml, mr, mt, mb = 70, 20, 30, 45
    pw, ph = width - ml - mr, height - mt - mb

    def X(t):
        return ml + (t - tmin) / (tmax - tmin) * pw

    def Y(v):
        return mt + (hi - math.log10(v)) / (hi - lo) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}">',
           f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
           f'<text x="{width / 2:.1f}" y="18" text-anchor="middle" font-size="14">{title}</text>']
    for k in range(lo, hi + 1):
        y = Y(10.0 ** k)
        out.append(f'<line x1="{ml}" y1="{y:.2f}" x2="{ml + pw}" y2="{y:.2f}" stroke="#ddd"/>')
        out.append(f'<text x="{ml - 6}" y="{y + 4:.2f}" text-anchor="end" font-size="11">1e{k}</text>')
    out.append(f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="black"/>')
    for k in range(6):
        t = tmin + k * (tmax - tmin) / 5
        out.append(f'<text x="{X(t):.2f}" y="{mt + ph + 16}" text-anchor="middle" '
                   f'font-size="11">{t:.4g}</text>')
    out.append(f'<text x="{ml + pw / 2:.1f}" y="{height - 8}" text-anchor="middle" '
               f'font-size="12">t</text>')
    palette = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf"]
    for i, (t, y) in enumerate(zip(xs, ys)):
        keep = _decimate(t.size)
        pts = " ".join(f"{X(a):.2f},{Y(min(b, 10.0 ** hi)):.2f}" for a, b in zip(t[keep], y[keep])
                       if np.isfinite(b))
        out.append(f'<polyline fill="none" stroke="{palette[i % len(palette)]}" '
                   f'stroke-width="1.2" points="{pts}"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def op_simulate(ctx, p, aid):
    sysobj = ctx.system
    step = ctx.sim_step(p)
    horizon = float(p["horizon"])
    starts = _starts(ctx, p, sysobj.ode.dim)
    trajs = integrate_many(sysobj.ode, starts, horizon, step)
    finals = [float(np.linalg.norm(tr.states[-1])) for tr in trajs]
    metrics = {"final_norm_max": max(finals), "final_norms": finals,
               "escaped": any(tr.escaped for tr in trajs)}
    V = _lyapunov(sysobj)
    if V is not None:
        inc = 0.0
        for tr in trajs:
            vals = np.array([V(t, x) for t, x in zip(tr.times, tr.states)])
            inc = max(inc, float(np.max(np.diff(vals), initial=0.0)))
        metrics["v_increase_max"] = inc
    if sysobj.slotine is not None:
        sl = sysobj.slotine
        perr, track, ratio = [], [], []
        for tr in trajs:
            q0, s0, th0 = sl.split(tr.states[0])
            q1, s1, th1 = sl.split(tr.states[-1])
            perr.append(float(np.linalg.norm(th1)))
            track.append(float(max(np.linalg.norm(q1), np.linalg.norm(s1))))
            n0 = float(np.linalg.norm(th0))
            ratio.append(float(np.linalg.norm(th1)) / n0 if n0 > 0 else math.nan)
        metrics.update(param_error_final=max(perr), tracking_error_final=max(track),
                       param_ratio_min=min(ratio))
    if p.get("richardson", False):
        half = integrate_many(sysobj.ode, starts, horizon, step / 2)
        metrics["step_halving_diff"] = max(abs(f - float(np.linalg.norm(h.states[-1])))
                                          for f, h in zip(finals, half))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    dim = sysobj.ode.dim
    w.writerow(["run", "t0", "t"] + [f"x{i + 1}" for i in range(dim)] + ["norm"])
    every = max(1, int(p.get("csv_every", 10)))
    for k, tr in enumerate(trajs):
        idx = np.unique(np.r_[np.arange(0, tr.times.size, every), tr.times.size - 1])
        for i in idx:
            w.writerow([k, repr(tr.t0), repr(float(tr.times[i]))]
                       + [repr(float(v)) for v in tr.states[i]]
                       + [repr(float(np.linalg.norm(tr.states[i])))])
    files = {f"{aid}.csv": buf.getvalue()}
    if p.get("svg", True):
        series = [(tr.times, tr.norms()) for tr in trajs]
        files[f"{aid}.svg"] = render_svg(series, f"{ctx.cfg.name}: |x(t)|")
    doc = {"system": sysobj.name, "params": p, "step": step, "metrics": metrics,
           "runs": [{"t0": tr.t0, "x0": tr.x0.tolist(), "final": tr.states[-1].tolist(),
                     **tr.flags} for tr in trajs]}
    return doc, metrics, False, files


def op_uniformity(ctx, p, aid):
    rep = sp.uniformity_probe(ctx.system.ode, float(p.get("r", 1.0)), float(p.get("sigma", 0.1)),
                              p.get("t0_grid", [0.0]), p.get("directions"),
                              float(p.get("horizon", 100.0)), ctx.sim_step(p),
                              float(p.get("dispersion_threshold", sp.DISPERSION_THRESHOLD)),
                              float(p.get("trend_threshold", sp.TREND_THRESHOLD)), _rng(ctx, p))
    metrics = {"verdict": rep.verdict, "dispersion": rep.dispersion, "trend": rep.trend,
               "settling": [rep.settling[t] for t in rep.t0_grid]}
    return rep.to_dict(), metrics, False, {f"{aid}_settling.csv": rep.settling_csv()}


def op_ugs(ctx, p, aid):
    rep = sp.ugs_probe(ctx.system.ode, p.get("radii", [0.5, 1.0, 2.0]), p.get("t0_grid", [0.0]),
                       float(p.get("horizon", 50.0)), ctx.sim_step(p), p.get("directions"),
                       _rng(ctx, p))
    radii = np.asarray(rep.radii)
    metrics = {"violation": rep.violation, "envelope": rep.envelope,
               "envelope_over_r_max": float(np.max(np.asarray(rep.envelope) / radii))}
    return rep.to_dict(), metrics, rep.violation, {}


def op_ules(ctx, p, aid):
    fit = sp.ules_fit(ctx.system.ode, float(p.get("r", 1.0)), p.get("t0_grid", [0.0]),
                      p.get("directions"), float(p.get("horizon", 20.0)), ctx.sim_step(p),
                      rng=_rng(ctx, p))
    metrics = {"ok": fit.ok, "gamma1": fit.gamma1, "gamma2": fit.gamma2, "residual": fit.residual}
    return fit.to_dict(), metrics, False, {}


def run_necessity_sweep(systems, p, rng=None, threads: int = 1, step: Optional[float] = None):
    """Uniformity verdict and excitation of ``F`` for each ``{"name", "params"}`` entry."""
    reports = []
    for entry in systems:
        s = build_system(entry["name"], entry.get("params", {}))
        u = sp.uniformity_probe(s.ode, float(p.get("r", 1.0)), float(p.get("sigma", 0.1)),
                                p.get("t0_grid", [0.0, 10.0, 40.0]), p.get("directions"),
                                float(p.get("horizon", 100.0)),
                                float(step if step is not None else p.get("step", 1e-2)), rng=rng)
        g = dict(p.get("grid", {}))
        ts = _grid_times(g.get("t_samples"), np.linspace(0.0, 190.0, 6))
        grid = pe.AnnulusGrid.build(s.ode.dim, 0, float(g.get("delta", 0.5)),
                                    float(g.get("Delta", 1.0)), ts, g.get("n_dir"),
                                    int(g.get("n_rad", 3)), rng=rng)
        label = entry.get("label", entry["name"])
        reports.append(sp.necessity_experiment(s.F, grid, float(p.get("T", 2 * math.pi)), u,
                                               label=label))
    return reports


def op_necessity(ctx, p, aid):
    systems = p.get("systems")
    if systems is None:
        systems = [ctx.cfg.system]
    for i, e in enumerate(systems):
        if e.get("name") not in SYSTEM_NAMES:
            raise ConfigError(f"unknown catalog system {e.get('name')!r}",
                              f"params.systems[{i}].name")
    reports = run_necessity_sweep(systems, p, _rng(ctx, p), ctx.threads, ctx.step)
    table = sp.contingency_table(reports)
    bad = table["uniform/not_udpe"]
    metrics = {"violating_cell_count": len(bad), "systems": len(reports),
               "cells": {r.label: "/".join(r.cell) for r in reports}}
    doc = {"table": table, "reports": [r.to_dict() for r in reports]}
    return doc, metrics, False, {}


def op_lego(ctx, p, aid):
    m = ctx.system.matching
    if m is None:
        raise ConfigError("lego needs a system with a matching structure", "system.name")
    phi1 = ctx.target(p.get("target", "system.B0"))
    cmap = pe.certificate_map(phi1, float(p.get("Delta", 2.0)), p.get("deltas", [0.25, 0.5, 1.0, 2.0]),
                              _quad(p), None, float(p.get("T0", 2 * math.pi)),
                              float(p.get("T_max", 64.0)))
    step = ctx.sim_step(p, 1e-3)
    (t0, x0), = _starts(ctx, {"t0s": [p.get("t0", 0.0)], "x0s": [p["x0"]]}, m.n1 + m.n2)
    tr = integrate_many(ctx.system.ode, [(t0, x0)], float(p.get("horizon", 50.0)), step)[0]
    rep = sp.lego_check(phi1, tr, cmap, float(p.get("K_Delta", 1.0)), None, _quad(p), m.n1,
                        p.get("fd_step"), int(p.get("n_points", 200)))
    metrics = {"status": rep.status, "max_violation": rep.max_violation}
    return rep.to_dict(), metrics, False, {}


OPS = {
    "window_integral": op_window_integral,
    "classical_pe": op_classical_pe,
    "udpe": op_udpe,
    "pointwise": op_pointwise,
    "certificate_map": op_certificate_map,
    "mornar": op_mornar,
    "power": op_power,
    "vj": op_vj,
    "simulate": op_simulate,
    "uniformity": op_uniformity,
    "ugs": op_ugs,
    "ules": op_ules,
    "necessity": op_necessity,
    "lego": op_lego,
}


# -- checks ------------------------------------------------------------------------------

def _lookup(metrics, path):
    aid, _, key = path.partition(".")
    v = metrics[aid]
    for part in key.split(".") if key else []:
        v = v[int(part)] if isinstance(v, list) else v[part]
    return v


def evaluate_check(check, metrics) -> dict:
    """Apply one ``{"metric", "cmp", "value"[, "tol"]}`` check to the collected metrics."""
    try:
        got = _lookup(metrics, check["metric"])
    except (KeyError, IndexError, ValueError, TypeError):
        got = None
    want = check["value"]
    cmp = check["cmp"]
    tol = float(check.get("tol", 0.0))
    ok = False
    if got is not None:
        a = np.asarray(got, dtype=float) if cmp not in ("eq", "in") else got
        if cmp == "lt":
            ok = bool(np.all(a < want))
        elif cmp == "le":
            ok = bool(np.all(a <= want))
        elif cmp == "gt":
            ok = bool(np.all(a > want))
        elif cmp == "ge":
            ok = bool(np.all(a >= want))
        elif cmp == "eq":
            ok = got == want
        elif cmp == "in":
            ok = got in want
        elif cmp == "abs_close":
            ok = bool(np.all(np.abs(a - np.asarray(want, dtype=float)) <= tol))
        elif cmp == "rel_close":
            w = np.asarray(want, dtype=float)
            ok = bool(a.shape == w.shape and np.all(np.abs(a - w) <= tol * np.abs(w)))
    label = check.get("label") or f"{check['metric']} {cmp} {want}"
    return {"label": label, "metric": check["metric"], "value": got, "status": "PASS" if ok else "FAIL"}


# -- running -------------------------------------------------------------------------------

@dataclass
class RunResult:
    name: str
    metrics: dict
    counterexample: bool
    checks: list
    files: list

    @property
    def checks_passed(self) -> bool:
        return all(c["status"] == "PASS" for c in self.checks)


def run_config(cfg: ExperimentConfig, out_dir, ops=ALL_OPS, threads: int = 1,
               step: Optional[float] = None, log=None) -> RunResult:
    """Run the analyses of ``cfg`` whose op is in ``ops`` and write their outputs."""
    out_dir = Path(out_dir)
    ctx = Context(cfg, threads, step)
    metrics, files, any_cex = {}, [], False
    for i, entry in enumerate(cfg.analysis):
        op = entry["op"]
        if op not in ops:
            continue
        aid = entry.get("id", f"{op}_{i}")
        params = dict(entry.get("params", {}))
        doc, m, cex, extra = OPS[op](ctx, params, aid)
        metrics[aid] = m
        any_cex = any_cex or cex
        files.append(str(write_json(out_dir / f"{aid}.json", {"id": aid, "op": op, "result": doc})))
        for fname, text in extra.items():
            files.append(str(atomic_write_text(out_dir / fname, text)))
        if log:
            log(f"{cfg.name}/{aid}: {_short(m)}")
    checks = [evaluate_check(c, metrics) for c in cfg.checks
              if c["metric"].split(".", 1)[0] in metrics]
    return RunResult(cfg.name, metrics, any_cex, checks, files)


def _short(m):
    keys = ("status", "verdict", "mu", "value", "final_norm_max", "max_violation",
            "violating_cell_count", "gamma2", "param_error_final", "violation")
    return ", ".join(f"{k}={m[k]}" for k in keys if k in m) or "done"


def _out_root(args, cfg: Optional[ExperimentConfig] = None) -> Path:
    if args.out:
        return Path(args.out)
    if os.environ.get("PELAB_OUT"):
        return Path(os.environ["PELAB_OUT"])
    if cfg is not None and cfg.output_dir:
        return Path(cfg.output_dir)
    return Path("pelab_out")


def _with_seed(cfg, seed):
    if seed is not None:
        cfg.seed = int(seed)
    return cfg


def _summary_text(rows) -> str:
    return "".join(f"{r['label']}: {r['status']}\n" for r in rows)


def _write_summary(out, result_list):
    rows = [dict(c, config=r.name) for r in result_list for c in r.checks]
    write_json(out / "summary.json", {"checks": rows,
                                      "metrics": {r.name: r.metrics for r in result_list}})
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["config", "check", "value", "status"])
    for r in rows:
        w.writerow([r["config"], r["label"], json.dumps(to_jsonable(r["value"]), sort_keys=True),
                    r["status"]])
    atomic_write_text(out / "summary.csv", buf.getvalue())
    atomic_write_text(out / "summary.txt", _summary_text(rows))
    return rows


def _cmd_config(args, ops, log):
    cfg = _with_seed(load_config(args.config), args.seed)
    if not any(a["op"] in ops for a in cfg.analysis):
        raise ConfigError(f"config has no analysis for this command (ops {list(ops)})", "analysis")
    out = _out_root(args, cfg)
    res = run_config(cfg, out, ops, args.threads, args.step, log)
    rows = _write_summary(out, [res])
    for r in rows:
        log(f"{r['label']}: {r['status']}")
    return EXIT_COUNTEREXAMPLE if res.counterexample or not res.checks_passed else EXIT_OK


def cmd_certify(args, log):
    return _cmd_config(args, CERTIFY_OPS, log)


def cmd_simulate(args, log):
    return _cmd_config(args, SIMULATE_OPS, log)


def cmd_uniformity(args, log):
    return _cmd_config(args, PROBE_OPS, log)


def cmd_reproduce(args, log):
    name = args.name
    if name not in EXPERIMENTS:
        print(f"unknown experiment {name!r}; available: {', '.join(EXPERIMENTS)}", file=sys.stderr)
        return EXIT_ERROR
    out = _out_root(args) / name
    results = []
    for fname in EXPERIMENTS[name]:
        path = Path(str(bundled_config_dir() / fname))
        cfg = _with_seed(load_config(path), args.seed)
        atomic_write_text(out / "configs" / fname, dumps(cfg.to_dict()))
        results.append(run_config(cfg, out / Path(fname).stem, ALL_OPS, args.threads,
                                  args.step, log))
    rows = _write_summary(out, results)
    if not args.quiet:
        sys.stdout.write(_summary_text(rows))
    return EXIT_OK if all(r.checks_passed for r in results) else EXIT_COUNTEREXAMPLE


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", help="output directory (default: $PELAB_OUT, then the config's "
                                      "output_dir, then ./pelab_out)")
    common.add_argument("--seed", type=int, help="seed for randomized grid choices (overrides config)")
    common.add_argument("--threads", type=int, default=1, help="worker threads for grid sweeps")
    common.add_argument("--step", type=float, help="integration step override for every simulation")
    common.add_argument("--quiet", action="store_true", help="suppress progress output")
    parser = argparse.ArgumentParser(
        prog="pelab",
        description="Excitation certificates and stability probes for time-varying systems.",
        epilog="Exit codes: 0 success, 2 counterexample or failed check, 1 error. "
               "The PELAB_OUT environment variable sets the default output directory.")
    sub = parser.add_subparsers(dest="command", required=True)
    for cmd, helptext in (("certify", "run the certificate analyses of a config"),
                          ("simulate", "integrate trajectories and write CSV/SVG"),
                          ("uniformity", "run settling-time and stability probes")):
        sp_ = sub.add_parser(cmd, parents=[common], help=helptext)
        sp_.add_argument("--config", required=True, help="config JSON (bundled names also accepted)")
    rp = sub.add_parser("reproduce", parents=[common], help="run a bundled experiment")
    rp.add_argument("name", help="one of: " + ", ".join(EXPERIMENTS))
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    def log(msg):
        if not args.quiet:
            print(msg, file=sys.stderr)

    handlers = {"certify": cmd_certify, "simulate": cmd_simulate,
                "uniformity": cmd_uniformity, "reproduce": cmd_reproduce}
    try:
        return handlers[args.command](args, log)
    except (PelabError, KeyError, TypeError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
