"""Scenario execution shared by the CLI and the acceptance suite."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import lindblad as lb
from .baths import engine_rates, gamma_full, optical_steady_state, regime_margins
from .config import ScenarioConfig, parse_config, set_value
from .errors import RegimeError
from .hilbert import Thermal, make_state, required_dim
from .phasespace import OUFlow, energy_trajectory, ensemble_from_spec
from .thermo import WorkLedger, compare_ledgers, ledger_from_analytic, ledger_from_oracle, write_csv

log = logging.getLogger(__name__)

MIN_MARGIN = 10.0


@dataclass
class StateResult:
    name: str
    ledgers: dict  # path name -> WorkLedger
    deviations: dict | None = None
    margins: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)


@dataclass
class ScenarioResult:
    config: ScenarioConfig
    rates: dict
    states: dict  # name -> StateResult

    @property
    def warnings(self):
        return [w for s in self.states.values() for w in s.warnings]


def rates_summary(cfg: ScenarioConfig) -> dict:
    p = cfg.params
    r = engine_rates(p)
    total, terms = gamma_full(p)
    return {
        "gamma": r.gamma,
        "d": r.d,
        "Gamma_M": r.Gamma_M,
        "d_M": r.d_M,
        "drift": r.drift,
        "gain": r.gain,
        "n_O": r.n_O,
        "kappa": r.kappa,
        "gamma_full": total,
        "gamma_terms": {t.label: t.value for t in terms},
        "flagged_terms": [t.label for t in terms if t.may_be_negative],
    }


def initial_mean_number(spec, dim=60) -> float:
    return make_state(spec, max(dim, required_dim(spec))).mean_number()


def state_margins(cfg: ScenarioConfig, spec) -> tuple:
    """Regime margins over the run, using the energy law to bound ``<n_M>``."""
    r = engine_rates(cfg.params)
    n = energy_trajectory(initial_mean_number(spec), OUFlow.from_rates(r), cfg.times)
    m = regime_margins(cfg.params, float(np.max(n)), cfg.t_end, r.n_O)
    warnings = []
    if m["margin"] < MIN_MARGIN:
        warnings.append(
            f"outside linear regime: (g/Omega_M)^2 n_M = {m['coupling']:.3g}, "
            f"(g^2/Omega_M) n_O^2 t = {m['dressing']:.3g}, margin {m['margin']:.3g} < {MIN_MARGIN:g}"
        )
    return m, warnings, float(np.max(n))


def oracle_ledger(cfg: ScenarioConfig, spec, info: lb.EvolveInfo | None = None):
    p = cfg.params
    gens = lb.build_generators(p, cfg.dim_O, cfg.dim_M)
    _, pops = optical_steady_state(p, cfg.dim_O)
    s0 = lb.product_state(pops / pops.sum(), make_state(spec, cfg.dim_M))
    traj = lb.evolve(s0, gens, cfg.times, info=info)
    return ledger_from_oracle(cfg.times, traj, gens), traj


def analytic_ledger(cfg: ScenarioConfig, spec, n_max: float | None = None) -> WorkLedger:
    """P-function ledger; states without a P-function use the Fock rendering."""
    e = ensemble_from_spec(spec)
    if e is None:
        if n_max is None:
            n_max = state_margins(cfg, spec)[2]
        dim = max(cfg.dim_M, required_dim(spec), required_dim(Thermal(1.5 * n_max)))
        e = make_state(spec, dim)
    return ledger_from_analytic(cfg.params, e, cfg.times)


def run_scenario(cfg: ScenarioConfig, pipeline: str | None = None, strict: bool = False) -> ScenarioResult:
    """Run every state of a scenario through the requested pipeline.

    Raises
    ------
    RegimeError
        With ``strict`` when any state's regime margin is below 10.
    """
    pipeline = pipeline or cfg.pipeline
    rates = rates_summary(cfg)
    results = {}
    for name, spec in cfg.states.items():
        margins, warnings, n_max = state_margins(cfg, spec)
        for w in warnings:
            log.warning("%s/%s: %s", cfg.name, name, w)
        if strict and warnings:
            raise RegimeError(f"{cfg.name}/{name}: {warnings[0]}")
        ledgers = {}
        if pipeline in ("analytic", "compare"):
            ledgers["analytic"] = analytic_ledger(cfg, spec, n_max)
        if pipeline in ("oracle", "compare"):
            ledgers["oracle"], _ = oracle_ledger(cfg, spec)
        dev = compare_ledgers(ledgers["oracle"], ledgers["analytic"]) if pipeline == "compare" else None
        results[name] = StateResult(name, ledgers, dev, margins, warnings)
    return ScenarioResult(cfg, rates, results)


# -- output --------------------------------------------------------------------


def to_jsonable(x):
    if isinstance(x, dict):
        return {str(k): to_jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [to_jsonable(v) for v in x]
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (float, np.floating)):
        return None if not math.isfinite(x) else float(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    return x


def atomic_write(path: Path, text: str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


def ledger_text(ledger: WorkLedger) -> str:
    buf = io.StringIO()
    write_csv(ledger, buf)
    return buf.getvalue()


def write_outputs(result: ScenarioResult, out: Path) -> list:
    out = Path(out)
    written = []
    for name, s in result.states.items():
        for path_name, ledger in s.ledgers.items():
            f = out / f"{name}_{path_name}.csv"
            atomic_write(f, ledger_text(ledger))
            written.append(f)
    summary = {
        "scenario": result.config.name,
        "seed": result.config.seed,
        "rates": result.rates,
        "states": {
            n: {"margins": s.margins, "warnings": s.warnings, "deviations": s.deviations}
            for n, s in result.states.items()
        },
    }
    f = out / "summary.json"
    atomic_write(f, json.dumps(to_jsonable(summary), indent=2, sort_keys=True) + "\n")
    written.append(f)
    devs = [(n, s.deviations) for n, s in result.states.items() if s.deviations]
    if devs:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["state", "column", "relative", "scaled"])
        for n, d in devs:
            for col, v in d.items():
                w.writerow([n, col, repr(float(v["relative"])), repr(float(v["scaled"]))])
        f = out / "deviations.csv"
        atomic_write(f, buf.getvalue())
        written.append(f)
    return written


# -- sweeps --------------------------------------------------------------------

SWEEP_COLUMNS = ("value", "gamma", "d", "n_O", "peak_eta", "beyond_carnot_duration")


def beyond_carnot_duration(ledger: WorkLedger) -> float:
    """Total time during which ``eta`` exceeds ``1 - T_c/T_h``."""
    t, eta = ledger["t"], ledger["eta"]
    carnot = 1 - ledger.T_c / ledger.T_h
    above = np.nan_to_num(eta, nan=-np.inf) > carnot
    dt = np.diff(t)
    return float(np.sum(dt * 0.5 * (above[1:].astype(float) + above[:-1].astype(float))))


def sweep_point(args):
    text, axis, value, name, use_oracle = args
    cfg = parse_config(set_value(text, axis, value), name)
    r = engine_rates(cfg.params)
    spec = next(iter(cfg.states.values()))
    ledger = oracle_ledger(cfg, spec)[0] if use_oracle else analytic_ledger(cfg, spec)
    eta = ledger["eta"]
    peak = float(np.nanmax(eta)) if np.isfinite(eta).any() else math.nan
    return (value, r.gamma, r.d, r.n_O, peak, beyond_carnot_duration(ledger))


def sweep(text: str, axis: str, values, name: str = "sweep", workers: int = 1, pipeline: str | None = None):
    """Evaluate a config at each value of a scalar key; rows in value order.

    The first state of the config is used.  The analytic path is used unless
    the pipeline is ``oracle``.
    """
    base = parse_config(text, name)
    use_oracle = (pipeline or base.pipeline) == "oracle"
    set_value(text, axis, values[0])  # validates the axis before spawning workers
    jobs = [(text, axis, v, name, use_oracle) for v in values]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(sweep_point, jobs))
    else:
        rows = [sweep_point(j) for j in jobs]
    return rows


def sweep_text(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_COLUMNS)
    for row in rows:
        w.writerow([repr(float(x)) if not isinstance(x, str) else x for x in row])
    return buf.getvalue()
