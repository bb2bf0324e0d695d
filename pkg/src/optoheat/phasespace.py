"""Analytic Ornstein-Uhlenbeck propagation of the mechanical P-function.

Under the linearized engine the P-function obeys

    dP/dt = (a/2)(d_b b + d_b* b*) P + d d^2 P / db db*,   a = gamma + Gamma_M,

whose Green's function maps a Gaussian of centre ``b`` and width ``s2``
(``P ~ exp(-|beta - b|^2 / s2)``) to a Gaussian with

    b(t) = b e^{-a t / 2},   s2(t) = s2 e^{-a t} + d (1 - e^{-a t}) / a.

Gaussians, their phase averages and finite mixtures of the two are closed
under this flow, which is all the analytic path needs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import expm
from scipy.special import ive

from .baths import EngineRates
from .errors import TruncationError
from .hilbert import (
    DEFAULT_BUDGET,
    Coherent,
    Fock,
    FockState,
    Mixture,
    PhaseAveragedCoherent,
    Thermal,
    bound_ergotropy,
    displaced_thermal,
    required_dim,
)

PASSIVITY_TOL = 1e-9


@dataclass(frozen=True)
class OUFlow:
    """Drift ``rate = gamma + Gamma_M`` (negative means gain) and diffusion ``d``."""

    rate: float
    diffusion: float

    def __post_init__(self):
        if self.diffusion < 0:
            raise ValueError("diffusion must be >= 0")

    @classmethod
    def from_rates(cls, r: EngineRates) -> "OUFlow":
        return cls(r.gamma + r.Gamma_M, r.d)


@dataclass(frozen=True)
class GaussianPhaseState:
    """Displaced thermal state: P-function centre ``mean`` and width ``sigma2``."""

    mean: complex
    sigma2: float
    omega: float = 1.0

    def __post_init__(self):
        if self.sigma2 < 0:
            raise ValueError("sigma2 must be >= 0")
        object.__setattr__(self, "mean", complex(self.mean))


@dataclass(frozen=True)
class PhaseAveraged:
    """Gaussian of width ``sigma2`` centred on a ring of ``radius``, uniform in phase."""

    radius: float
    sigma2: float
    omega: float = 1.0

    def __post_init__(self):
        if self.radius < 0 or self.sigma2 < 0:
            raise ValueError("radius and sigma2 must be >= 0")


@dataclass(frozen=True)
class GaussianMixture:
    """Convex combination of Gaussian and phase-averaged components."""

    components: tuple  # of (weight, GaussianPhaseState | PhaseAveraged)
    omega: float = field(default=1.0)

    def __post_init__(self):
        comps = tuple((float(w), c) for w, c in self.components)
        w = np.array([w for w, _ in comps])
        if len(w) == 0 or np.any(w < 0) or abs(w.sum() - 1) > 1e-12:
            raise ValueError("mixture weights must be nonnegative and sum to 1")
        for _, c in comps:
            if not isinstance(c, (GaussianPhaseState, PhaseAveraged)):
                raise TypeError("mixture components must be Gaussian or phase-averaged")
        object.__setattr__(self, "components", comps)


PhaseEnsemble = GaussianPhaseState | PhaseAveraged | GaussianMixture


def coherent(beta, omega=1.0) -> GaussianPhaseState:
    return GaussianPhaseState(beta, 0.0, omega)


def thermal(nbar, omega=1.0) -> GaussianPhaseState:
    return GaussianPhaseState(0.0, nbar, omega)


# -- propagation -----------------------------------------------------------------


def _growth(a, t):
    """``(1 - e^{-a t}) / a`` with its ``t`` limit at ``a -> 0``."""
    x = a * t
    if abs(x) < 1e-8:
        return t * (1 - 0.5 * x)
    return -math.expm1(-x) / a


def propagate_width(sigma2, f: OUFlow, t):
    return sigma2 * math.exp(-f.rate * t) + f.diffusion * _growth(f.rate, t)


def propagate(e: PhaseEnsemble, f: OUFlow, t: float) -> PhaseEnsemble:
    """Evolve an ensemble for a duration ``t`` under the OU flow."""
    if t < 0:
        raise ValueError("t must be >= 0")
    if t == 0:
        return e
    shrink = math.exp(-0.5 * f.rate * t)
    if isinstance(e, GaussianPhaseState):
        return replace(e, mean=e.mean * shrink, sigma2=propagate_width(e.sigma2, f, t))
    if isinstance(e, PhaseAveraged):
        return replace(e, radius=e.radius * shrink, sigma2=propagate_width(e.sigma2, f, t))
    if isinstance(e, GaussianMixture):
        return replace(e, components=tuple((w, propagate(c, f, t)) for w, c in e.components))
    raise TypeError(f"unsupported ensemble {type(e).__name__}")


def mean_number(e: PhaseEnsemble) -> float:
    if isinstance(e, GaussianPhaseState):
        return abs(e.mean) ** 2 + e.sigma2
    if isinstance(e, PhaseAveraged):
        return e.radius**2 + e.sigma2
    return sum(w * mean_number(c) for w, c in e.components)


def mean_energy_t(e: PhaseEnsemble) -> float:
    """``Omega (|b|^2 + s2)`` averaged over components."""
    return e.omega * mean_number(e)


def energy_trajectory(n0, f: OUFlow, t, omega=1.0):
    """Mean energy ``Omega [n0 e^{-a t} + d (1 - e^{-a t}) / a]`` on a time grid.

    The denominator is the signed drift ``a``; the ``a -> 0`` limit is ``d t``.
    """
    t = np.asarray(t, dtype=float)
    x = f.rate * t
    if f.rate == 0:
        growth = t
    else:
        growth = np.where(np.abs(x) < 1e-8, t * (1 - 0.5 * x), -np.expm1(-x) / (f.rate or 1.0))
    out = omega * (n0 * np.exp(-x) + f.diffusion * growth)
    return out if out.ndim else float(out)


# -- Fock conversion and work ----------------------------------------------------


def _component_fock(c, dim, budget):
    avg = isinstance(c, PhaseAveraged)
    beta = c.radius if avg else c.mean
    return displaced_thermal(beta, c.sigma2, dim, c.omega, budget, phase_averaged=avg).matrix


def _guess_dim(e):
    if isinstance(e, GaussianMixture):
        return max(_guess_dim(c) for _, c in e.components)
    r = e.radius if isinstance(e, PhaseAveraged) else abs(e.mean)
    return max(required_dim(Coherent(r)), required_dim(Thermal(e.sigma2)), 2)


def to_fock(e: PhaseEnsemble, dim: int | None = None, budget: float = DEFAULT_BUDGET) -> FockState:
    """Fock-basis density matrix of an ensemble.

    With ``dim=None`` the truncation grows until the leaked population is
    below ``budget``; an explicit ``dim`` that is too small raises
    :class:`TruncationError`.
    """
    auto = dim is None
    dim = _guess_dim(e) if auto else dim
    while True:
        try:
            if isinstance(e, GaussianMixture):
                m = sum(w * _component_fock(c, dim, budget) for w, c in e.components if w > 0)
            else:
                m = _component_fock(e, dim, budget)
            break
        except TruncationError as err:
            if not auto or err.required_dim is None or dim > 20000:
                raise
            dim = err.required_dim
    m = m / np.trace(m).real
    return FockState(m, omega=e.omega)


WORK_BUDGET = 1e-12


def work_capacity(e: PhaseEnsemble, method: str = "auto", dim: int | None = None) -> float:
    """Bound ergotropy (energy above the equal-entropy Gibbs state).

    A single Gaussian uses the closed form ``Omega |b|^2``: its entropy is
    that of the undisplaced thermal state of width ``s2``.  Everything else,
    or ``method="fock"``, goes through the Fock representation, truncated
    at ``WORK_BUDGET`` so the renormalized tail does not register as work.
    """
    if method not in ("auto", "fock"):
        raise ValueError("method must be 'auto' or 'fock'")
    if method == "auto" and isinstance(e, GaussianPhaseState):
        return e.omega * abs(e.mean) ** 2
    return bound_ergotropy(to_fock(e, dim, WORK_BUDGET))


def displace_to_passive(s: GaussianPhaseState, f: OUFlow | None = None, t: float = 0.0):
    """Shift the P-function centre to the origin, optionally after propagating.

    Returns
    -------
    (GaussianPhaseState, float)
        The centred state and the work removed, ``Omega |b(t)|^2``.
    """
    if not isinstance(s, GaussianPhaseState):
        raise TypeError("displace_to_passive needs a single Gaussian")
    if f is not None:
        s = propagate(s, f, t)
    return replace(s, mean=0j), s.omega * abs(s.mean) ** 2


def effective_temperature_coherent(d, t, Omega=1.0) -> float:
    """Temperature of a coherent state diffused to width ``d t``."""
    dt = d * t
    if dt < 0:
        raise ValueError("d*t must be >= 0")
    if dt == 0:
        return 0.0
    return Omega / math.log1p(1.0 / dt)


# -- radial passivity --------------------------------------------------------------


def _radial_component(c, r):
    s2 = c.sigma2
    R = c.radius if isinstance(c, PhaseAveraged) else abs(c.mean)
    if isinstance(c, GaussianPhaseState) and R != 0:
        raise ValueError("displaced Gaussian is not isotropic; phase-average it first")
    if s2 == 0:
        raise ValueError("zero-width component has a singular P-function")
    x = 2 * r * R / s2
    # exp(-(r^2+R^2)/s2) I0(x) = exp(-(r-R)^2/s2) ive(0, x)
    return np.exp(-((r - R) ** 2) / s2) * ive(0, x) / (math.pi * s2)


def radial_profile(e: PhaseEnsemble):
    """Normalized isotropic P-function as a callable of ``r = |beta|``."""
    comps = e.components if isinstance(e, GaussianMixture) else ((1.0, e),)

    def profile(r):
        r = np.asarray(r, dtype=float)
        return sum(w * _radial_component(c, r) for w, c in comps)

    return profile


def is_passive_radial(P, r_max: float, samples: int = 4001, tol: float = PASSIVITY_TOL) -> bool:
    """True iff the sampled, normalized radial profile never increases.

    Increases smaller than ``tol`` are ignored.

    Raises
    ------
    ValueError
        If the profile is negative, non-finite, or has no finite positive norm.
    """
    r = np.linspace(0.0, r_max, samples)
    p = np.asarray(P(r), dtype=float)
    if not np.all(np.isfinite(p)) or np.any(p < -tol):
        raise ValueError("radial profile must be finite and nonnegative")
    norm = np.trapezoid(2 * np.pi * r * p, r)
    if not np.isfinite(norm) or norm <= 0:
        raise ValueError("radial profile is not normalizable on [0, r_max]")
    p = p / norm
    return bool(np.all(np.diff(p) <= tol))


def phase_averaged_threshold(beta0, d, t, rate: float = 0.0):
    """Rescaled ring radius ``|b'|^2 = 4 |b(t)|^2 / (d t)`` and the flag ``|b'|^2 > 1``.

    ``b(t) = beta0 e^{-rate t / 2}`` is the propagated ring radius; the
    default ``rate = 0`` uses the initial radius.
    """
    if t == 0:
        raise ValueError("t = 0: the state is still a coherent ring (nonpassive for beta0 != 0)")
    dt = d * t
    if dt <= 0:
        raise ValueError("d*t must be > 0")
    b2 = abs(beta0) ** 2 * math.exp(-rate * t)
    value = 4.0 * b2 / dt
    return value, value > 1.0


# -- Monte-Carlo sampler -------------------------------------------------------------


def sample_ou(
    e: GaussianPhaseState,
    f: OUFlow,
    t: float,
    n_paths: int,
    seed: int,
    n_steps: int = 1,
    method: str = "exact",
):
    """Draw ``beta(t)`` samples of the OU process started from ``e``.

    ``method="exact"`` composes the exact Gaussian transition ``n_steps``
    times; ``method="euler"`` uses Euler-Maruyama, which is independent of
    the closed-form propagator and converges weakly at first order.
    """
    rng = np.random.default_rng(seed)

    def cgauss(var, size):
        s = math.sqrt(0.5 * var)
        return s * (rng.standard_normal(size) + 1j * rng.standard_normal(size))

    beta = e.mean + cgauss(e.sigma2, n_paths)
    h = t / n_steps
    if method == "exact":
        shrink = math.exp(-0.5 * f.rate * h)
        var = f.diffusion * _growth(f.rate, h)
        for _ in range(n_steps):
            beta = beta * shrink + cgauss(var, n_paths)
    elif method == "euler":
        for _ in range(n_steps):
            beta = beta * (1 - 0.5 * f.rate * h) + cgauss(f.diffusion * h, n_paths)
    else:
        raise ValueError("method must be 'exact' or 'euler'")
    return beta


# -- Fock-space rendering of the same flow ---------------------------------------


def _band_generator(dim, k, down, up):
    """Generator for the band ``rho[n, n+k]`` of ``down D[M] + up D[M^dag]``."""
    n = np.arange(dim - k, dtype=float)
    m = n + k
    diag = -0.5 * down * (n + m) - 0.5 * up * (n + m + 2)
    if k == 0:
        # no raising out of the top level keeps the truncated map trace preserving
        diag[-1] += up * dim
    G = np.diag(diag)
    coupling = np.sqrt((n[:-1] + 1) * (m[:-1] + 1))
    G[np.arange(len(n) - 1), np.arange(1, len(n))] = down * coupling
    G[np.arange(1, len(n)), np.arange(len(n) - 1)] = up * coupling
    return G


def evolve_fock(s: FockState, f: OUFlow, times, leak_budget: float = 1e-6):
    """Evolve a single-mode Fock-basis state under the drift-diffusion flow.

    The flow is the master equation ``(a + d) D[M] + d D[M^dag]``, whose
    P-function obeys the same Fokker-Planck equation, so this path handles
    inputs without a nonnegative P-function (Fock states).  Each coherence
    band ``rho[n, n+k]`` evolves independently.

    Raises
    ------
    TruncationError
        If the top level ends up holding more than ``leak_budget``.
    """
    down, up = f.rate + f.diffusion, f.diffusion
    if down < 0:
        raise ValueError("rate + diffusion must be >= 0 for a physical flow")
    times = np.asarray(times, dtype=float)
    dim = s.dim
    rho0 = np.asarray(s.matrix)
    bands = [k for k in range(dim) if np.any(np.abs(np.diagonal(rho0, k)) > 1e-15)]
    gens = {k: _band_generator(dim, k, down, up) for k in bands}
    out = []
    for t in times - times[0]:
        m = np.zeros((dim, dim), dtype=complex)
        for k in bands:
            v = expm(gens[k] * t) @ np.diagonal(rho0, k)
            idx = np.arange(dim - k)
            m[idx, idx + k] = v
            if k:
                m[idx + k, idx] = v.conj()
        top = m[-1, -1].real
        if top > leak_budget:
            raise TruncationError(
                f"top Fock level (dim {dim}) holds {top:.3g} > {leak_budget:.3g} at t={t:.6g}",
                required_dim=dim + max(2, dim // 4),
            )
        out.append(FockState(m / np.trace(m).real, omega=s.omega))
    return out


def ensemble_from_spec(spec) -> PhaseEnsemble | None:
    """P-function ensemble for a state specification, or None if it has none.

    Fock states (and mixtures containing them) have no nonnegative regular
    P-function and return None.
    """
    om = spec.omega
    if isinstance(spec, Coherent):
        return GaussianPhaseState(spec.beta, 0.0, om)
    if isinstance(spec, Thermal):
        return GaussianPhaseState(0.0, spec.nbar, om)
    if isinstance(spec, PhaseAveragedCoherent):
        return PhaseAveraged(spec.radius, 0.0, om)
    if isinstance(spec, Fock):
        return None
    if isinstance(spec, Mixture):
        comps = [(w, ensemble_from_spec(c)) for w, c in spec.components]
        if any(c is None or isinstance(c, GaussianMixture) for _, c in comps):
            return None
        return GaussianMixture(tuple(comps), om)
    raise TypeError(f"unsupported state spec {type(spec).__name__}")
