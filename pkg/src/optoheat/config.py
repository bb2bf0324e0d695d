"""Scenario configuration files.

Configs are INI files with dotted section names::

    [engine]        omega_O, Omega_M, g, Gamma_M, n_M_th, units
    [bath.hot]      temperature, shape, plus the shape's parameters
    [bath.cold]     same
    [state]         kind plus its parameters (or several [state.NAME] sections)
    [time]          t_end, samples
    [run]           pipeline, dim_O, dim_M, seed

Frequencies, rates and temperatures are in units of ``Omega_M`` unless
``units = absolute`` is set, in which case every such value is divided by
``Omega_M`` on load.  Unknown sections or keys are rejected with their
dotted path.
"""

from __future__ import annotations

import configparser
import io
import math
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .baths import BandStop, BathSpectrum, EngineParams, Flat, Lorentzian, Tabulated
from .errors import ConfigError
from .hilbert import Coherent, Fock, PhaseAveragedCoherent, StateSpec, Thermal

BUNDLED = ("default_engine", "single_bath", "fig2_states", "thermal_noise_gain")
PIPELINES = ("oracle", "analytic", "compare")

_ENGINE_KEYS = {"omega_O", "Omega_M", "g", "Gamma_M", "n_M_th", "units"}
_SHAPE_KEYS = {
    "lorentzian": {"center", "width", "G0"},
    "bandstop": {"G0", "stop_lo", "stop_hi", "edge_width"},
    "flat": {"G0"},
    "tabulated": {"points"},
}
_STATE_KEYS = {
    "coherent": {"beta"},
    "fock": {"n"},
    "thermal": {"nbar"},
    "phase_averaged": {"radius"},
}
_TIME_KEYS = {"t_end", "samples"}
_RUN_KEYS = {"pipeline", "dim_O", "dim_M", "seed"}


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    params: EngineParams
    states: dict  # name -> StateSpec, in file order
    t_end: float
    samples: int
    pipeline: str = "compare"
    dim_O: int = 5
    dim_M: int = 30
    seed: int = 0
    raw: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def times(self):
        return np.linspace(0.0, self.t_end, self.samples)


def _getter(section, path):
    def get(key, cast=float, default=None, required=True):
        if key not in section:
            if required and default is None:
                raise ConfigError("missing required key", f"{path}.{key}")
            return default
        raw = section[key]
        try:
            value = cast(raw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"cannot parse {raw!r} ({exc})", f"{path}.{key}") from None
        if isinstance(value, float) and not math.isfinite(value):
            raise ConfigError("value must be finite", f"{path}.{key}")
        return value

    return get


def _check_keys(section, allowed, path):
    for key in section:
        if key not in allowed:
            raise ConfigError("unknown key", f"{path}.{key}")


def _parse_points(text):
    pts = []
    for item in text.split(","):
        w, sep, g = item.partition(":")
        if not sep:
            raise ValueError("expected 'omega:G' pairs separated by commas")
        pts.append((float(w), float(g)))
    return tuple(pts)


def _bath(cp, label, scale):
    path = f"bath.{label}"
    if not cp.has_section(path):
        raise ConfigError("missing section", path)
    sec = cp[path]
    get = _getter(sec, path)
    shape = get("shape", str).strip().lower()
    if shape not in _SHAPE_KEYS:
        raise ConfigError(f"unknown shape {shape!r}; expected one of {sorted(_SHAPE_KEYS)}", f"{path}.shape")
    _check_keys(sec, {"temperature", "shape"} | _SHAPE_KEYS[shape], path)
    T = get("temperature") / scale
    try:
        if shape == "lorentzian":
            s = Lorentzian(get("center") / scale, get("width") / scale, get("G0") / scale)
        elif shape == "bandstop":
            s = BandStop(
                get("G0") / scale,
                get("stop_lo") / scale,
                get("stop_hi") / scale,
                get("edge_width", default=2.0 * scale) / scale,
            )
        elif shape == "flat":
            s = Flat(get("G0") / scale)
        else:
            pts = get("points", _parse_points)
            s = Tabulated(tuple((w / scale, g / scale) for w, g in pts))
        return BathSpectrum(label, T, s)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc), path) from None


def _state(sec, path, omega) -> StateSpec:
    get = _getter(sec, path)
    kind = get("kind", str).strip().lower()
    if kind not in _STATE_KEYS:
        raise ConfigError(f"unknown kind {kind!r}; expected one of {sorted(_STATE_KEYS)}", f"{path}.kind")
    _check_keys(sec, {"kind"} | _STATE_KEYS[kind], path)
    if kind == "coherent":
        return Coherent(get("beta", complex), omega=omega)
    if kind == "fock":
        n = get("n", int)
        if n < 0:
            raise ConfigError("must be >= 0", f"{path}.n")
        return Fock(n, omega=omega)
    if kind == "thermal":
        nbar = get("nbar")
        if nbar < 0:
            raise ConfigError("must be >= 0", f"{path}.nbar")
        return Thermal(nbar, omega=omega)
    radius = get("radius")
    if radius < 0:
        raise ConfigError("must be >= 0", f"{path}.radius")
    return PhaseAveragedCoherent(radius, omega=omega)


def parse_config(text: str, name: str = "scenario") -> ScenarioConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str  # keys are case sensitive (Omega_M vs omega_O)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None

    for sec in cp.sections():
        known = sec in ("engine", "time", "run", "state", "bath.hot", "bath.cold") or sec.startswith("state.")
        if not known:
            raise ConfigError("unknown section", sec)
    if not cp.has_section("engine"):
        raise ConfigError("missing section", "engine")

    eng = cp["engine"]
    _check_keys(eng, _ENGINE_KEYS, "engine")
    get = _getter(eng, "engine")
    units = get("units", str, default="Omega_M").strip()
    Omega = get("Omega_M", default=1.0)
    if units == "Omega_M":
        scale = 1.0
    elif units == "absolute":
        if Omega <= 0:
            raise ConfigError("must be > 0", "engine.Omega_M")
        scale = Omega
    else:
        raise ConfigError("expected 'Omega_M' or 'absolute'", "engine.units")

    hot, cold = _bath(cp, "hot", scale), _bath(cp, "cold", scale)
    try:
        params = EngineParams(
            omega_O=get("omega_O") / scale,
            Omega_M=Omega / scale,
            g=get("g") / scale,
            hot=hot,
            cold=cold,
            Gamma_M=get("Gamma_M", default=0.0, required=False) / scale,
            n_M_th=get("n_M_th", default=0.0, required=False),
        )
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc), "engine") from None

    states = {}
    if cp.has_section("state"):
        states["state"] = _state(cp["state"], "state", params.Omega_M)
    for sec in cp.sections():
        if sec.startswith("state."):
            states[sec.split(".", 1)[1]] = _state(cp[sec], sec, params.Omega_M)
    if not states:
        raise ConfigError("missing section", "state")

    if not cp.has_section("time"):
        raise ConfigError("missing section", "time")
    _check_keys(cp["time"], _TIME_KEYS, "time")
    gt = _getter(cp["time"], "time")
    t_end = gt("t_end") * scale  # time in units of 1/Omega_M
    samples = gt("samples", int)
    if t_end <= 0:
        raise ConfigError("must be > 0", "time.t_end")
    if samples < 3:
        raise ConfigError("must be >= 3", "time.samples")

    run = cp["run"] if cp.has_section("run") else {}
    _check_keys(run, _RUN_KEYS, "run")
    gr = _getter(run, "run")
    pipeline = gr("pipeline", str, default="compare").strip()
    if pipeline not in PIPELINES:
        raise ConfigError(f"expected one of {PIPELINES}", "run.pipeline")
    dim_O, dim_M = gr("dim_O", int, default=5), gr("dim_M", int, default=30)
    for key, v in (("dim_O", dim_O), ("dim_M", dim_M)):
        if v < 2:
            raise ConfigError("must be >= 2", f"run.{key}")

    raw = {s: dict(cp[s]) for s in cp.sections()}
    return ScenarioConfig(
        name=name,
        params=params,
        states=states,
        t_end=t_end,
        samples=samples,
        pipeline=pipeline,
        dim_O=dim_O,
        dim_M=dim_M,
        seed=gr("seed", int, default=0),
        raw=raw,
    )


def bundled_text(name: str) -> str:
    if name not in BUNDLED:
        raise ConfigError(f"no bundled config {name!r}; available: {', '.join(BUNDLED)}")
    return resources.files("optoheat").joinpath("configs", f"{name}.cfg").read_text()


def load_config(source: str) -> ScenarioConfig:
    """Load a config from a path, or by name from the bundled set."""
    path = Path(source)
    if path.is_file():
        return parse_config(path.read_text(), path.stem)
    if source in BUNDLED:
        return parse_config(bundled_text(source), source)
    raise ConfigError(f"config file not found: {source}")


def with_overrides(cfg: ScenarioConfig, **kw) -> ScenarioConfig:
    kw = {k: v for k, v in kw.items() if v is not None}
    return replace(cfg, **kw) if kw else cfg


def set_value(text: str, axis: str, value) -> str:
    """Return config text with the scalar at dotted path ``axis`` replaced.

    ``axis`` is ``section.key`` where the section itself may contain dots,
    e.g. ``bath.hot.temperature`` or ``state.coherent.beta``.
    """
    section, _, key = axis.rpartition(".")
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    cp.read_string(text)
    if not section or not cp.has_section(section) or key not in cp[section]:
        raise ConfigError("sweep axis does not name an existing key", axis)
    try:
        complex(cp[section][key])
    except ValueError:
        raise ConfigError("sweep axis is not a scalar", axis) from None
    cp[section][key] = repr(value) if isinstance(value, float) else str(value)
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()
