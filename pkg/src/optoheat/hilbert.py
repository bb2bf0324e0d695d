"""Single-mode states on a truncated Fock basis and the passivity toolkit.

Units are hbar = k_B = 1.  The mode Hamiltonian is ``omega * a^dag a`` with
no zero-point offset, so the vacuum carries zero energy.

Work is measured two ways:

* :func:`ergotropy` -- energy above the spectrum-preserving passive state.
* :func:`bound_ergotropy` -- energy above the Gibbs state of equal entropy,
  which upper-bounds the ergotropy and is the ``W_max`` reported by the
  thermodynamic ledger.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import bisect
from scipy.special import gammaln, logsumexp, xlogy
from scipy.stats import poisson

from .errors import TruncationError

DEFAULT_BUDGET = 1e-8

_HERM_TOL = 1e-10
_TRACE_TOL = 1e-9
_EIG_FLOOR = -1e-10


@dataclass(frozen=True, eq=False)
class FockState:
    """Density matrix of one bosonic mode truncated to ``dim`` levels.

    The matrix is copied and made read-only on construction, so instances
    can be shared freely.
    """

    matrix: np.ndarray
    omega: float = 1.0

    def __post_init__(self):
        m = np.array(self.matrix, dtype=complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] < 2:
            raise ValueError(f"density matrix must be square with dim >= 2, got {m.shape}")
        herm = np.max(np.abs(m - m.conj().T))
        if herm > _HERM_TOL:
            raise ValueError(f"density matrix not Hermitian (max |rho - rho^dag| = {herm:.3g})")
        m = 0.5 * (m + m.conj().T)
        tr = np.trace(m).real
        if abs(tr - 1.0) > _TRACE_TOL:
            raise ValueError(f"trace {tr!r} differs from 1 by more than {_TRACE_TOL}")
        lam_min = np.linalg.eigvalsh(m)[0]
        if lam_min < _EIG_FLOOR:
            raise ValueError(f"density matrix has negative eigenvalue {lam_min:.3g}")
        if self.omega <= 0:
            raise ValueError("omega must be positive")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def populations(self) -> np.ndarray:
        return self.matrix.diagonal().real.copy()

    def mean_number(self) -> float:
        return float(np.dot(np.arange(self.dim), self.matrix.diagonal().real))


# -- state specifications ---------------------------------------------------


@dataclass(frozen=True)
class StateSpec:
    omega: float = field(default=1.0, kw_only=True)


@dataclass(frozen=True)
class Coherent(StateSpec):
    beta: complex


@dataclass(frozen=True)
class Fock(StateSpec):
    n: int


@dataclass(frozen=True)
class Thermal(StateSpec):
    nbar: float


@dataclass(frozen=True)
class PhaseAveragedCoherent(StateSpec):
    """Coherent state |r e^{i theta}> averaged uniformly over theta."""

    radius: float


@dataclass(frozen=True)
class Mixture(StateSpec):
    components: tuple  # of (weight, StateSpec)

    def __post_init__(self):
        object.__setattr__(self, "components", tuple((float(w), s) for w, s in self.components))
        weights = np.array([w for w, _ in self.components])
        if len(weights) == 0 or np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-12:
            raise ValueError("mixture weights must be nonnegative and sum to 1")


def _poisson_tail(mu, dim):
    """Population at levels >= dim of a Poisson distribution with mean mu."""
    return float(poisson.sf(dim - 1, mu)) if mu > 0 else 0.0


def _thermal_tail(nbar, dim):
    return (nbar / (nbar + 1.0)) ** dim if nbar > 0 else 0.0


def leaked_population(spec: StateSpec, dim: int) -> float:
    """Population the exact state would place at levels >= ``dim``."""
    if isinstance(spec, Coherent):
        return _poisson_tail(abs(spec.beta) ** 2, dim)
    if isinstance(spec, PhaseAveragedCoherent):
        return _poisson_tail(spec.radius**2, dim)
    if isinstance(spec, Thermal):
        return _thermal_tail(spec.nbar, dim)
    if isinstance(spec, Fock):
        return 0.0 if spec.n < dim else 1.0
    if isinstance(spec, Mixture):
        return sum(w * leaked_population(s, dim) for w, s in spec.components)
    raise TypeError(f"unknown state spec {spec!r}")


def required_dim(spec: StateSpec, budget: float = DEFAULT_BUDGET) -> int:
    """Smallest truncation satisfying both the leak budget and the coherent rule."""
    if isinstance(spec, Fock):
        return max(2, spec.n + 1)
    if isinstance(spec, Mixture):
        return max(required_dim(s, budget) for _, s in spec.components)
    if isinstance(spec, Thermal):
        if spec.nbar <= 0:
            return 2
        dim = math.ceil(math.log(budget) / math.log(spec.nbar / (spec.nbar + 1.0)))
        return max(2, dim)
    mu = abs(spec.beta) ** 2 if isinstance(spec, Coherent) else spec.radius**2
    dim = max(2, math.ceil(4 * mu))
    while _poisson_tail(mu, dim) >= budget:
        dim += 1
    return dim


def _coherent_amplitudes(beta, dim):
    n = np.arange(dim)
    r = abs(beta)
    if r == 0:
        amp = np.zeros(dim, dtype=complex)
        amp[0] = 1.0
        return amp
    logmag = -0.5 * r * r + n * math.log(r) - 0.5 * gammaln(n + 1)
    return np.exp(logmag) * np.exp(1j * n * np.angle(beta))


def _poisson_weights(mu, dim):
    n = np.arange(dim)
    if mu == 0:
        w = np.zeros(dim)
        w[0] = 1.0
        return w
    return np.exp(-mu + n * math.log(mu) - gammaln(n + 1))


def _raw_matrix(spec, dim):
    if isinstance(spec, Coherent):
        amp = _coherent_amplitudes(complex(spec.beta), dim)
        return np.outer(amp, amp.conj())
    if isinstance(spec, PhaseAveragedCoherent):
        return np.diag(_poisson_weights(spec.radius**2, dim)).astype(complex)
    if isinstance(spec, Thermal):
        n = np.arange(dim)
        nb = spec.nbar
        p = np.zeros(dim)
        if nb == 0:
            p[0] = 1.0
        else:
            p = np.exp(n * math.log(nb / (nb + 1.0))) / (nb + 1.0)
        return np.diag(p).astype(complex)
    if isinstance(spec, Fock):
        m = np.zeros((dim, dim), dtype=complex)
        m[spec.n, spec.n] = 1.0
        return m
    if isinstance(spec, Mixture):
        return sum(w * _raw_matrix(s, dim) for w, s in spec.components)
    raise TypeError(f"unknown state spec {spec!r}")


def _check_spec(spec, dim):
    if isinstance(spec, Fock) and not 0 <= spec.n < dim:
        raise TruncationError(
            f"fock({spec.n}) needs dim >= {spec.n + 1}, got {dim}", required_dim=spec.n + 1
        )
    if isinstance(spec, Thermal) and spec.nbar < 0:
        raise ValueError("thermal occupancy must be >= 0")
    if isinstance(spec, PhaseAveragedCoherent) and spec.radius < 0:
        raise ValueError("phase-averaged radius must be >= 0")
    if isinstance(spec, Coherent) and abs(spec.beta) ** 2 > dim / 4:
        need = required_dim(spec)
        raise TruncationError(
            f"coherent |beta|^2 = {abs(spec.beta) ** 2:.4g} exceeds dim/4; use dim >= {need}",
            required_dim=need,
        )
    if isinstance(spec, Mixture):
        for _, s in spec.components:
            _check_spec(s, dim)


def make_state(spec: StateSpec, dim: int, budget: float = DEFAULT_BUDGET) -> FockState:
    """Build a normalized :class:`FockState` from a state specification.

    Raises
    ------
    TruncationError
        If the exact state leaks at least ``budget`` population above level
        ``dim - 1``.  The message names the dimension that would suffice.
    """
    if dim < 2:
        raise ValueError("dim must be >= 2")
    _check_spec(spec, dim)
    leak = leaked_population(spec, dim)
    if leak >= budget:
        need = required_dim(spec, budget)
        raise TruncationError(
            f"{type(spec).__name__} leaks {leak:.3g} above level {dim - 1}; use dim >= {need}",
            required_dim=need,
        )
    m = _raw_matrix(spec, dim)
    m /= np.trace(m).real
    return FockState(m, omega=spec.omega)


def displaced_thermal(beta, nbar, dim, omega=1.0, budget=DEFAULT_BUDGET, phase_averaged=False):
    """Exact Fock matrix of ``D(beta) rho_th(nbar) D(beta)^dag``.

    The P-function is a Gaussian of width ``nbar`` centred on ``beta``.  With
    ``phase_averaged=True`` only the diagonal is kept, which is the uniform
    average over the phase of ``beta``.  Elements are evaluated from the
    associated-Laguerre closed form with a negative argument, summed in the
    log domain so no cancellation occurs.
    """
    beta = complex(beta)
    r = abs(beta)
    if nbar < 0:
        raise ValueError("nbar must be >= 0")
    if nbar == 0:
        spec = PhaseAveragedCoherent(r, omega=omega) if phase_averaged else Coherent(beta, omega=omega)
        return make_state(spec, dim, budget)
    if r == 0:
        return make_state(Thermal(nbar, omega=omega), dim, budget)

    lb, ln, l1 = math.log(r), math.log(nbar), math.log1p(nbar)
    m = np.zeros((dim, dim), dtype=complex)
    kmax = 1 if phase_averaged else dim
    j = np.arange(dim)[None, :]
    for k in range(kmax):
        n = np.arange(dim - k)[:, None]
        valid = j <= n
        nj = np.where(valid, n - j, 0)
        terms = (
            gammaln(n + k + 1)
            - gammaln(nj + 1)
            - gammaln(k + j + 1)
            + nj * ln
            + 2 * j * lb
            - (n + j) * l1
            - gammaln(j + 1)
        )
        terms = np.where(valid, terms, -np.inf)
        n1 = n[:, 0]
        logval = (
            -r * r / (1 + nbar)
            + 0.5 * (gammaln(n1 + 1) - gammaln(n1 + k + 1))
            + k * lb
            - (k + 1) * l1
            + logsumexp(terms, axis=1)
        )
        vals = np.exp(logval) * np.exp(1j * k * np.angle(beta))
        idx = np.arange(dim - k)
        m[idx + k, idx] = vals
        if k:
            m[idx, idx + k] = vals.conj()
    leak = 1.0 - np.trace(m).real
    if leak >= budget:
        need = dim
        mean = r * r + nbar
        while need < 100000:
            need = int(need * 1.5) + 1
            tail = _thermal_tail(nbar, need) + _poisson_tail(2 * mean + 1, need)
            if tail < budget:
                break
        raise TruncationError(
            f"displaced thermal (|beta|^2={r * r:.4g}, nbar={nbar:.4g}) leaks {leak:.3g} at dim {dim}; "
            f"use dim >= {need}",
            required_dim=need,
        )
    m /= np.trace(m).real
    return FockState(m, omega=omega)


# -- observables --------------------------------------------------------------


def mean_energy(s: FockState) -> float:
    """``omega * <n>``; no zero-point term."""
    return s.omega * s.mean_number()


def _spectrum(s):
    return np.linalg.eigvalsh(s.matrix)


def von_neumann_entropy(s: FockState) -> float:
    lam = np.clip(_spectrum(s), 0.0, None)
    return float(-np.sum(xlogy(lam, lam)))


def thermal_entropy(nbar):
    """Closed-form entropy of an untruncated thermal oscillator state."""
    nbar = np.asarray(nbar, dtype=float)
    out = xlogy(nbar + 1, nbar + 1) - xlogy(nbar, nbar)
    return out if out.ndim else float(out)


def passive_state(s: FockState) -> FockState:
    """Eigenvalues sorted in decreasing order onto increasing Fock levels.

    Ties keep their eigensolver order (stable sort); the energy is unaffected.
    """
    lam = _spectrum(s)
    order = np.argsort(-lam, kind="stable")
    p = np.clip(lam[order], 0.0, None)
    p /= p.sum()
    return FockState(np.diag(p), omega=s.omega)


def ergotropy(s: FockState) -> float:
    return mean_energy(s) - mean_energy(passive_state(s))


def gibbs_nbar(entropy: float) -> float:
    """Thermal occupancy whose closed-form entropy equals ``entropy``."""
    if entropy < 1e-10:
        return 0.0
    hi = 1.0
    while thermal_entropy(hi) < entropy:
        hi *= 2.0
    return bisect(lambda x: thermal_entropy(x) - entropy, 0.0, hi, xtol=1e-14, maxiter=500)


def temperature_from_nbar(nbar, omega=1.0):
    """Temperature of a thermal mode with occupancy ``nbar`` (0 for the vacuum)."""
    if nbar <= 0:
        return 0.0
    return omega / math.log1p(1.0 / nbar)


def gibbs_equivalent(s: FockState, budget: float = 1e-14):
    """Thermal state with the same entropy as ``s`` and its temperature.

    The returned state is truncated at a tight ``budget`` so that its
    entropy matches ``s`` to better than 1e-8 after renormalization.

    Returns
    -------
    (FockState, float)
        The Gibbs state (dimension enlarged if the budget requires it) and
        ``T_M = omega / ln(1 + 1/nbar)``.  Pure states map to the vacuum at
        ``T_M = 0``.
    """
    entropy = von_neumann_entropy(s)
    if entropy > math.log(s.dim) + 1e-9:
        raise ValueError(
            f"entropy {entropy:.6g} exceeds the truncated-space maximum ln({s.dim})"
        )
    nbar = gibbs_nbar(entropy)
    spec = Thermal(nbar, omega=s.omega)
    dim = max(s.dim, required_dim(spec, budget))
    return make_state(spec, dim, budget), temperature_from_nbar(nbar, s.omega)


def bound_ergotropy(s: FockState) -> float:
    """Energy above the equal-entropy Gibbs state (the work-capacity bound)."""
    nbar = gibbs_nbar(von_neumann_entropy(s))
    return mean_energy(s) - s.omega * nbar
