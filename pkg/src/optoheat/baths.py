"""Bath response spectra and the rates of the linearized engine.

Every spectrum stores only its positive-frequency response.  The
negative-frequency (absorption) side is always generated from detailed
balance, ``G(-w) = exp(-w/T) G(w)``, so no user input can break KMS.
"""

from __future__ import annotations

import logging
import math
import sys
from dataclasses import dataclass, field

import numpy as np

from .errors import BathRangeError, SteadyStateError

log = logging.getLogger(__name__)


# -- spectral shapes (positive frequencies only) -----------------------------


@dataclass(frozen=True)
class Lorentzian:
    """Peak ``G0`` at ``center``, full width at half maximum ``width``."""

    center: float
    width: float
    G0: float

    def __post_init__(self):
        if not self.width > 0:
            raise ValueError("Lorentzian width must be > 0")

    def __call__(self, w):
        hw = 0.5 * self.width
        return self.G0 * hw**2 / ((np.asarray(w, dtype=float) - self.center) ** 2 + hw**2)


@dataclass(frozen=True)
class BandStop:
    """Pass level ``G0`` outside ``[stop_lo, stop_hi]``, zero inside.

    The edges are raised-cosine ramps of width ``edge_width`` placed outside
    the stop band: the response climbs from 0 at ``stop_hi`` to ``G0`` at
    ``stop_hi + edge_width`` (and mirrors this below ``stop_lo``).
    """

    G0: float
    stop_lo: float
    stop_hi: float
    edge_width: float = 2.0

    def __post_init__(self):
        if self.stop_hi < self.stop_lo:
            raise ValueError("stop band must satisfy stop_lo <= stop_hi")
        if self.edge_width < 0:
            raise ValueError("edge_width must be >= 0")

    def __call__(self, w):
        w = np.asarray(w, dtype=float)
        out = np.full(w.shape, float(self.G0))
        ew = self.edge_width
        out = np.where((w >= self.stop_lo) & (w <= self.stop_hi), 0.0, out)
        if ew > 0:
            up = (w > self.stop_hi) & (w < self.stop_hi + ew)
            down = (w < self.stop_lo) & (w > self.stop_lo - ew)
            # ramps are evaluated everywhere but only kept inside their masks
            with np.errstate(over="ignore", invalid="ignore"):
                out = np.where(up, 0.5 * self.G0 * (1 - np.cos(np.pi * (w - self.stop_hi) / ew)), out)
                out = np.where(down, 0.5 * self.G0 * (1 - np.cos(np.pi * (self.stop_lo - w) / ew)), out)
        return out


@dataclass(frozen=True)
class Flat:
    G0: float

    def __call__(self, w):
        return np.full(np.shape(w), float(self.G0))


@dataclass(frozen=True)
class Tabulated:
    """Linear interpolation through sorted ``(omega, G)`` samples; no extrapolation."""

    points: tuple

    def __post_init__(self):
        pts = tuple((float(a), float(b)) for a, b in self.points)
        if len(pts) < 2:
            raise ValueError("tabulated spectrum needs at least two points")
        ws = [p[0] for p in pts]
        if any(b <= a for a, b in zip(ws, ws[1:])):
            raise ValueError("tabulated frequencies must be strictly increasing")
        object.__setattr__(self, "points", pts)

    def __call__(self, w):
        w = np.asarray(w, dtype=float)
        ws = np.array([p[0] for p in self.points])
        gs = np.array([p[1] for p in self.points])
        if np.any(w < ws[0]) or np.any(w > ws[-1]):
            raise BathRangeError(
                f"frequency outside tabulated range [{ws[0]}, {ws[-1]}]: {w}"
            )
        return np.interp(w, ws, gs)


Shape = Lorentzian | BandStop | Flat | Tabulated


@dataclass(frozen=True)
class BathSpectrum:
    label: str
    temperature: float
    shape: Shape

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("bath temperature must be >= 0")
        vals = []
        if isinstance(self.shape, Tabulated):
            vals = [g for _, g in self.shape.points]
        elif isinstance(self.shape, (Lorentzian, Flat, BandStop)):
            vals = [self.shape.G0]
        if any(v < 0 for v in vals):
            raise ValueError("bath response must be nonnegative")

    def __call__(self, omega):
        return response(self, omega)


def kms_factor(omega, temperature):
    """``exp(-|omega|/T)`` with the T = 0 limit handled."""
    if temperature == 0:
        return 0.0 if omega != 0 else 1.0
    return math.exp(-abs(omega) / temperature)


def response(b: BathSpectrum, omega: float) -> float:
    """Bath response at a signed frequency.

    Positive frequencies (emission into the bath) return the shape value;
    negative frequencies return the detailed-balance weighted value.
    """
    g = float(b.shape(abs(omega)))
    if omega < 0:
        g *= kms_factor(omega, b.temperature)
    return g


# -- engine parameters and rates ---------------------------------------------


@dataclass(frozen=True)
class EngineParams:
    omega_O: float
    Omega_M: float
    g: float
    hot: BathSpectrum
    cold: BathSpectrum
    Gamma_M: float = 0.0
    n_M_th: float = 0.0

    def __post_init__(self):
        if not self.omega_O > self.Omega_M > 0:
            raise ValueError("need omega_O > Omega_M > 0")
        if self.g < 0:
            raise ValueError("coupling g must be >= 0")
        if self.Gamma_M < 0 or self.n_M_th < 0:
            raise ValueError("Gamma_M and n_M_th must be >= 0")

    @property
    def kappa(self) -> float:
        """Sideband weight ``(g / Omega_M)^2``."""
        return (self.g / self.Omega_M) ** 2

    @property
    def harmonic_frequencies(self) -> dict:
        return {
            0: self.omega_O,
            1: self.omega_O + self.Omega_M,
            -1: self.omega_O - self.Omega_M,
        }

    @property
    def baths(self) -> dict:
        return {"hot": self.hot, "cold": self.cold}

    def G(self, omega: float) -> float:
        """Combined response ``G_h + G_c``."""
        return response(self.hot, omega) + response(self.cold, omega)


def sample_harmonics(p: EngineParams) -> dict:
    """Per-bath responses at ``+-omega_q`` for q = 0, +1, -1.

    Keys are ``(q, sign)`` with sign +1 for emission and -1 for absorption.
    """
    out = {}
    for name, bath in p.baths.items():
        out[name] = {
            (q, s): response(bath, s * w)
            for q, w in p.harmonic_frequencies.items()
            for s in (1, -1)
        }
    return out


def optical_steady_state(p: EngineParams, dim: int | None = None):
    """Geometric steady state of the optical mode under the q = 0 generators.

    Returns
    -------
    (float, ndarray)
        Mean occupancy ``r / (1 - r)`` with ``r = G(-w_O) / G(w_O)``, and the
        populations ``r^n (1 - r)`` on ``dim`` levels (enough levels to hold
        all but 1e-12 of the population when ``dim`` is None).
    """
    down = p.G(p.omega_O)
    up = p.G(-p.omega_O)
    if down <= 0 or up >= down:
        raise SteadyStateError(
            "no optical steady state (population inversion): "
            f"G(w_O) = {down:.6g}, G(-w_O) = {up:.6g}"
        )
    r = up / down
    if dim is None:
        dim = 2 if r == 0 else max(2, math.ceil(math.log(1e-12) / math.log(r)))
    pops = (1 - r) * r ** np.arange(dim)
    return r / (1 - r), pops


@dataclass(frozen=True)
class EngineRates:
    gamma: float
    d: float
    Gamma_M: float
    d_M: float
    n_O: float
    kappa: float
    harmonics: dict = field(repr=False)

    @property
    def drift(self) -> float:
        """Net amplitude-decay rate ``gamma + Gamma_M``; negative means gain."""
        return self.gamma + self.Gamma_M

    @property
    def gain(self) -> bool:
        return self.gamma + self.Gamma_M < 0

    @property
    def down_rate(self) -> float:
        """Rate of the effective lowering jump on the mechanics (all channels)."""
        return self.gamma + self.Gamma_M + self.d

    @property
    def up_rate(self) -> float:
        return self.d


def _sideband_rates(h, n):
    """Effective mechanical (down, up) rates from the q = +-1 channels."""
    G = lambda q, s: h["hot"][(q, s)] + h["cold"][(q, s)]  # noqa: E731
    down = G(1, 1) * n + G(-1, -1) * (n + 1)
    up = G(-1, 1) * n + G(1, -1) * (n + 1)
    return down, up


def engine_rates(p: EngineParams, harmonics: dict | None = None) -> EngineRates:
    """Drift ``gamma`` and diffusion ``d`` of the mechanical P-function.

    ``gamma = k [G(w+) n + G(-w-)(n+1) - G(w-) n - G(-w+)(n+1)]`` and
    ``d = k [G(w-) n + G(-w+)(n+1)] + d_M`` with ``k = (g/Omega_M)^2`` and
    ``n`` the optical steady-state occupancy.  ``harmonics`` overrides the
    sampled responses (same layout as :func:`sample_harmonics`).
    """
    n_O, _ = optical_steady_state(p, dim=2)
    h = sample_harmonics(p) if harmonics is None else harmonics
    down, up = _sideband_rates(h, n_O)
    k = p.kappa
    d_M = p.Gamma_M * p.n_M_th
    return EngineRates(
        gamma=k * (down - up),
        d=k * up + d_M,
        Gamma_M=p.Gamma_M,
        d_M=d_M,
        n_O=n_O,
        kappa=k,
        harmonics=h,
    )


def regime_margins(p: EngineParams, n_M: float, t: float, n_O: float | None = None) -> dict:
    """The two small parameters of the linear-amplification regime.

    ``coupling = (g/Omega_M)^2 <n_M>`` and ``dressing = (g^2/Omega_M) <n_O>^2 t``.
    Both must be << 1; ``margin`` is how many times smaller than 1 the larger
    one is.
    """
    if n_O is None:
        n_O = optical_steady_state(p, dim=2)[0]
    coupling = p.kappa * n_M
    dressing = p.g**2 / p.Omega_M * n_O**2 * t
    worst = max(coupling, dressing)
    return {
        "coupling": coupling,
        "dressing": dressing,
        # subnormal worst would overflow the division
        "margin": 1.0 / worst if worst > 1.0 / sys.float_info.max else math.inf,
    }


def check_regime(p: EngineParams, n_M: float, t: float, min_margin: float = 10.0) -> list:
    """Warn (never raise) when the regime margins fall below ``min_margin``."""
    m = regime_margins(p, n_M, t)
    warnings = []
    if m["margin"] < min_margin:
        msg = (
            f"outside linear regime: (g/Omega_M)^2 n_M = {m['coupling']:.3g}, "
            f"(g^2/Omega_M) n_O^2 t = {m['dressing']:.3g} (margin {m['margin']:.3g} < {min_margin})"
        )
        log.warning(msg)
        warnings.append(msg)
    return warnings


@dataclass(frozen=True)
class GammaTerm:
    label: str
    value: float
    may_be_negative: bool


def gamma_full(p: EngineParams):
    """Drift rate expanded into per-bath products ``G_a(w_+-) G_b(w_0)``.

    Each bracket is a difference of Boltzmann factors.  The overall
    prefactor is ``k <n+1> / G(w_0)``: with the optical steady state
    ``<n> = <n+1> G(-w_0)/G(w_0)`` this makes the sum identical to
    :func:`engine_rates`.  The two hot-sideband/cold-carrier cross terms
    are the only ones that can be negative when ``T_h > T_c``.

    Returns
    -------
    (float, list[GammaTerm])
    """
    n_O, _ = optical_steady_state(p, dim=2)
    w0, wp, wm = p.omega_O, p.omega_O + p.Omega_M, p.omega_O - p.Omega_M
    G = {j: b.shape for j, b in p.baths.items()}
    T = {j: b.temperature for j, b in p.baths.items()}
    boltz = lambda j, w: kms_factor(w, T[j])  # noqa: E731
    terms = []
    for a in ("hot", "cold"):
        for b in ("hot", "cold"):
            vp = float(G[a](wp) * G[b](w0)) * (boltz(b, w0) - boltz(a, wp))
            vm = float(G[a](wm) * G[b](w0)) * (boltz(a, wm) - boltz(b, w0))
            ta, tb = a[0], b[0]
            terms.append(GammaTerm(f"G_{ta}(w+) G_{tb}(w0)", vp, a == "hot" and b == "cold"))
            terms.append(GammaTerm(f"G_{ta}(w-) G_{tb}(w0)", vm, a == "cold" and b == "hot"))
    G0 = p.G(w0)
    pref = p.kappa * (n_O + 1) / G0
    scaled = [GammaTerm(t.label, pref * t.value, t.may_be_negative) for t in terms]
    return math.fsum(t.value for t in scaled), scaled
