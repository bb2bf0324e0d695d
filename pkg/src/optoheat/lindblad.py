"""Brute-force two-mode master equation on a truncated joint Fock space.

The joint basis is ``|n_O> (x) |n_M>`` with the optical index major.  The
dynamics are written in the interaction picture, so the generator is a sum
of time-independent dissipators:

* q = 0, per bath: lowering ``O`` at ``G_j(w_O)``, raising ``O^dag`` at ``G_j(-w_O)``;
* q = +1, per bath: ``O M`` at ``k G_j(w+)`` and ``O^dag M^dag`` at ``k G_j(-w+)``;
* q = -1, per bath: ``O M^dag`` at ``k G_j(w-)`` and ``O^dag M`` at ``k G_j(-w-)``;
* phonon bath: ``M`` at ``Gamma_M (n_th + 1)`` and ``M^dag`` at ``Gamma_M n_th``;

with ``k = (g/Omega_M)^2`` and ``w+- = w_O +- Omega_M``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.optimize import curve_fit

from .baths import EngineParams, response
from .errors import FitError, NumericalError, TruncationError
from .hilbert import FockState

log = logging.getLogger(__name__)

LEAK_BUDGET = 1e-6
_POS_FLOOR = -1e-8


@dataclass(frozen=True, eq=False)
class JointState:
    matrix: np.ndarray
    dim_O: int
    dim_M: int

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        size = self.dim_O * self.dim_M
        if m.shape != (size, size):
            raise ValueError(f"joint matrix must be {size}x{size}, got {m.shape}")
        if np.max(np.abs(m - m.conj().T)) > 1e-9:
            raise ValueError("joint density matrix not Hermitian")
        if abs(np.trace(m).real - 1) > 1e-9:
            raise ValueError("joint density matrix trace differs from 1")
        m = m.copy()
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    def blocks(self) -> np.ndarray:
        """Matrix reshaped to ``[nO, nM, nO', nM']``."""
        return self.matrix.reshape(self.dim_O, self.dim_M, self.dim_O, self.dim_M)


def product_state(rho_O, rho_M) -> JointState:
    """``rho_O (x) rho_M`` from FockStates or raw matrices/population vectors."""

    def as_matrix(x):
        if isinstance(x, FockState):
            return x.matrix
        x = np.asarray(x, dtype=complex)
        return np.diag(x) if x.ndim == 1 else x

    a, b = as_matrix(rho_O), as_matrix(rho_M)
    return JointState(np.kron(a, b), a.shape[0], b.shape[0])


def reduced_M(state: JointState, omega: float = 1.0) -> FockState:
    m = np.einsum("iaib->ab", state.blocks())
    return FockState(0.5 * (m + m.conj().T), omega=omega)


def reduced_O(state: JointState, omega: float = 1.0) -> FockState:
    m = np.einsum("aibi->ab", state.blocks())
    return FockState(0.5 * (m + m.conj().T), omega=omega)


# -- generators ----------------------------------------------------------------


def _lowering(dim):
    return sp.diags(np.sqrt(np.arange(1, dim, dtype=float)), 1, format="csr")


@dataclass(frozen=True)
class Channel:
    """One jump operator with its rate; ``harmonic`` is None for the phonon bath."""

    bath: str
    harmonic: int | None
    kind: str  # "down" or "up"
    rate: float
    op: sp.csr_matrix = field(repr=False)


@dataclass(eq=False)
class GeneratorSet:
    params: EngineParams
    dim_O: int
    dim_M: int
    channels: list

    def __post_init__(self):
        self._cache = {}

    @property
    def size(self) -> int:
        return self.dim_O * self.dim_M

    def select(self, bath=None, harmonic="any"):
        return [
            c
            for c in self.channels
            if (bath is None or c.bath == bath) and (harmonic == "any" or c.harmonic == harmonic)
        ]

    def superoperator(self, bath=None, harmonic="any") -> sp.csr_matrix:
        """Sparse Liouvillian acting on row-major ``vec(rho)``."""
        key = (bath, harmonic)
        if key not in self._cache:
            eye = sp.identity(self.size, format="csr", dtype=complex)
            total = sp.csr_matrix((self.size**2, self.size**2), dtype=complex)
            for c in self.select(bath, harmonic):
                if c.rate == 0:
                    continue
                L = c.op.astype(complex)
                LdL = (L.conj().T @ L).tocsr()
                total = total + c.rate * (
                    sp.kron(L, L.conj(), format="csr")
                    - 0.5 * sp.kron(LdL, eye, format="csr")
                    - 0.5 * sp.kron(eye, LdL.T, format="csr")
                )
            self._cache[key] = total.tocsr()
        return self._cache[key]

    def apply(self, rho: np.ndarray, bath=None, harmonic="any") -> np.ndarray:
        """Generator acting on a density matrix."""
        rho = np.asarray(rho, dtype=complex)
        out = np.zeros_like(rho)
        for c in self.select(bath, harmonic):
            if c.rate == 0:
                continue
            L = c.op
            Ld = L.T.conj()
            LdL = Ld @ L
            LrLd = L @ (Ld.T @ rho.T).T  # L rho L^dag
            out += c.rate * (LrLd - 0.5 * (LdL @ rho) - 0.5 * (LdL.T @ rho.T).T)
        return out

    def rate_table(self) -> dict:
        return {(c.bath, c.harmonic, c.kind): c.rate for c in self.channels}

    def hamiltonian(self, dressed_correction: bool = True) -> np.ndarray:
        """Diagonal of ``H_O + H_M`` in the joint basis.

        With ``dressed_correction`` the optical part carries the
        ``-(g n_O)^2 / Omega_M`` term of the dressed Hamiltonian.
        """
        p = self.params
        nO = np.repeat(np.arange(self.dim_O, dtype=float), self.dim_M)
        nM = np.tile(np.arange(self.dim_M, dtype=float), self.dim_O)
        h = p.omega_O * nO + p.Omega_M * nM
        if dressed_correction:
            h = h - (p.g * nO) ** 2 / p.Omega_M
        return h


def build_generators(p: EngineParams, dim_O: int, dim_M: int) -> GeneratorSet:
    if dim_O < 2 or dim_M < 2:
        raise ValueError("dims must be >= 2")
    a_O, a_M = _lowering(dim_O), _lowering(dim_M)
    I_O = sp.identity(dim_O, format="csr")
    I_M = sp.identity(dim_M, format="csr")
    O = sp.kron(a_O, I_M, format="csr")
    M = sp.kron(I_O, a_M, format="csr")
    Od, Md = O.T.tocsr(), M.T.tocsr()
    k = p.kappa
    wp, wm = p.omega_O + p.Omega_M, p.omega_O - p.Omega_M
    channels = []
    for name, bath in p.baths.items():
        channels += [
            Channel(name, 0, "down", response(bath, p.omega_O), O),
            Channel(name, 0, "up", response(bath, -p.omega_O), Od),
            Channel(name, 1, "down", k * response(bath, wp), (O @ M).tocsr()),
            Channel(name, 1, "up", k * response(bath, -wp), (Od @ Md).tocsr()),
            Channel(name, -1, "down", k * response(bath, wm), (O @ Md).tocsr()),
            Channel(name, -1, "up", k * response(bath, -wm), (Od @ M).tocsr()),
        ]
    channels += [
        Channel("phonon", None, "down", p.Gamma_M * (p.n_M_th + 1), M),
        Channel("phonon", None, "up", p.Gamma_M * p.n_M_th, Md),
    ]
    return GeneratorSet(p, dim_O, dim_M, channels)


# -- integration ---------------------------------------------------------------


def _rk4(f, y, h):
    k1 = f(y)
    k2 = f(y + 0.5 * h * k1)
    k3 = f(y + 0.5 * h * k2)
    k4 = f(y + h * k3)
    return y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def _clamp(m, dim_O, dim_M):
    m = 0.5 * (m + m.conj().T)
    lam, vec = np.linalg.eigh(m)
    if lam[0] < 0:
        if lam[0] < _POS_FLOOR:
            raise NumericalError(f"positivity lost: eigenvalue {lam[0]:.3g} below {_POS_FLOOR}")
        log.debug("clamping eigenvalues down to %.3g", lam[0])
        lam = np.clip(lam, 0.0, None)
        m = (vec * lam) @ vec.conj().T
    m /= np.trace(m).real
    return JointState(m, dim_O, dim_M)


def top_level_leak(state: JointState) -> tuple:
    """Populations of the highest optical and mechanical Fock levels."""
    diag = state.matrix.diagonal().real.reshape(state.dim_O, state.dim_M)
    return float(diag[-1, :].sum()), float(diag[:, -1].sum())


def _spectral_radius(L):
    """Largest |eigenvalue| of the Liouvillian, padded by 10%.

    Falls back to the (looser) Gershgorin row-sum bound if ARPACK does not
    converge.  ARPACK gets a fixed start vector so runs are reproducible.
    """
    gershgorin = max(float(abs(L).sum(axis=1).max()), 1e-12)
    if L.shape[0] < 16:
        return gershgorin
    try:
        v0 = np.ones(L.shape[0], dtype=complex)
        lam = spla.eigs(L, k=1, which="LM", v0=v0, return_eigenvectors=False, tol=1e-4, maxiter=5000)
        return min(1.1 * float(np.abs(lam).max()), gershgorin)
    except spla.ArpackError:
        return gershgorin


@dataclass
class EvolveInfo:
    steps: int = 0
    rejected: int = 0
    max_leak: float = 0.0
    trace_drift: float = 0.0


def evolve(
    state: JointState,
    gens: GeneratorSet,
    t_grid,
    tol: float = 1e-9,
    h0: float | None = None,
    max_halvings: int = 60,
    leak_budget: float | None = LEAK_BUDGET,
    info: EvolveInfo | None = None,
):
    """Integrate the master equation and return the states on ``t_grid``.

    Adaptive classical RK4 with step-doubling error control: each step is
    taken once with ``h`` and twice with ``h/2``; the max-norm difference
    divided by 15 must stay below ``tol``.  Output states have tiny negative
    eigenvalues (above -1e-8) clamped and are renormalized.

    Raises
    ------
    NumericalError
        If the step had to be halved ``max_halvings`` times in a row.
    TruncationError
        If the top Fock level of either mode exceeds ``leak_budget``.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    if np.any(np.diff(t_grid) < 0):
        raise ValueError("t_grid must be sorted")
    if state.dim_O != gens.dim_O or state.dim_M != gens.dim_M:
        raise ValueError("state and generator dimensions differ")
    info = info if info is not None else EvolveInfo()
    L = gens.superoperator()
    f = lambda y: L @ y  # noqa: E731
    y = state.matrix.ravel().astype(complex)
    size = gens.size
    span = t_grid[-1] - t_grid[0] if len(t_grid) > 1 else 0.0
    # Capping the step by the spectral radius keeps RK4 inside its stability
    # region; without it stiff top-level coherences ride the stability edge
    # and inject noise that breaks positivity.
    h_max = 2.5 / _spectral_radius(L)
    h = min(h0, h_max) if h0 is not None else 0.5 * h_max
    t = t_grid[0]
    out = [_clamp(y.reshape(size, size), gens.dim_O, gens.dim_M)]
    for t_next in t_grid[1:]:
        halvings = 0
        while t < t_next - 1e-14 * max(1.0, abs(t_next)):
            step = min(h, t_next - t)
            full = _rk4(f, y, step)
            half = _rk4(f, _rk4(f, y, 0.5 * step), 0.5 * step)
            err = np.max(np.abs(half - full)) / 15.0
            if err <= tol:
                y = half + (half - full) / 15.0
                t += step
                info.steps += 1
                halvings = 0
                grow = 4.0 if err == 0 else min(4.0, 0.9 * (tol / err) ** 0.2)
                if step == h:
                    h = min(h * max(1.0, grow), h_max)
            else:
                info.rejected += 1
                halvings += 1
                if halvings > max_halvings or step < 1e-14 * max(span, 1.0):
                    raise NumericalError(
                        f"step-size failure at t={t:.6g}: error {err:.3g} > tol {tol:.3g} with h={step:.3g}"
                    )
                h = step * max(0.1, 0.9 * (tol / err) ** 0.2)
        t = t_next
        s = _clamp(y.reshape(size, size), gens.dim_O, gens.dim_M)
        info.trace_drift = max(info.trace_drift, abs(np.sum(y[:: size + 1]).real - 1.0))
        leak_O, leak_M = top_level_leak(s)
        info.max_leak = max(info.max_leak, leak_O, leak_M)
        if leak_budget is not None and max(leak_O, leak_M) > leak_budget:
            mode, dim, leak = ("optical", gens.dim_O, leak_O) if leak_O > leak_M else ("mechanical", gens.dim_M, leak_M)
            raise TruncationError(
                f"top {mode} Fock level (dim {dim}) holds {leak:.3g} > {leak_budget:.3g} at t={t:.6g}",
                required_dim=dim + max(2, dim // 4),
            )
        out.append(s)
    log.debug("evolve: %d steps, %d rejected, max leak %.3g", info.steps, info.rejected, info.max_leak)
    return out


# -- observables ---------------------------------------------------------------


@dataclass(frozen=True)
class HeatCurrents:
    hot: float
    cold: float
    phonon: float

    @property
    def total(self) -> float:
        return self.hot + self.cold + self.phonon


def _adjoint_on_diagonal(gens, bath, h):
    """Heisenberg-picture generator of ``bath`` applied to a diagonal observable."""
    H = sp.diags(h).astype(complex)
    X = sp.csr_matrix((gens.size, gens.size), dtype=complex)
    for c in gens.select(bath):
        if c.rate == 0:
            continue
        L = c.op.astype(complex)
        Ld = L.conj().T
        LdL = Ld @ L
        X = X + c.rate * (Ld @ H @ L - 0.5 * (LdL @ H + H @ LdL))
    return X.tocsr()


def heat_currents(state: JointState, gens: GeneratorSet, dressed_correction: bool = True) -> HeatCurrents:
    """Energy flow from each bath into the system, ``Tr[H L_j(rho)]``."""
    h = gens.hamiltonian(dressed_correction)
    key = ("_heat", dressed_correction)
    if key not in gens._cache:
        gens._cache[key] = {b: _adjoint_on_diagonal(gens, b, h) for b in ("hot", "cold", "phonon")}
    X = gens._cache[key]
    rho = state.matrix
    J = {b: float(np.real(np.sum(X[b].multiply(rho.T)))) for b in X}
    return HeatCurrents(J["hot"], J["cold"], J["phonon"])


def system_energy(state: JointState, gens: GeneratorSet, dressed_correction: bool = True) -> float:
    return float(np.dot(gens.hamiltonian(dressed_correction), state.matrix.diagonal().real))


def mechanical_moments(state: JointState):
    """``(<M>, <M^dag M>)`` of the mechanical mode."""
    rho_M = np.einsum("iaib->ab", state.blocks())
    dim = state.dim_M
    a = np.diag(np.sqrt(np.arange(1, dim)), 1)
    mean = np.trace(rho_M @ a)
    number = np.dot(np.arange(dim), rho_M.diagonal().real)
    return complex(mean), float(number)


# -- empirical drift and diffusion ---------------------------------------------


@dataclass(frozen=True)
class DriftDiffusionFit:
    gamma: float
    d: float
    drift_first: float | None
    drift_second: float
    residual_first: float | None
    residual_second: float
    condition: float


def fit_drift_diffusion(times, mean, number, Gamma_M=0.0, min_amplitude=1e-8) -> DriftDiffusionFit:
    """Fit ``d<M>/dt = -(a/2)<M>`` and ``d<n>/dt = -a <n> + d`` to moment series.

    The first-moment decay gives ``a`` whenever the amplitude is resolvable;
    otherwise ``a`` comes from the second moment alone.  ``gamma = a - Gamma_M``.
    """
    t = np.asarray(times, dtype=float) - float(times[0])
    mean = np.asarray(mean, dtype=complex)
    N = np.asarray(number, dtype=float)
    if len(t) < 3 or t[-1] <= 0:
        raise FitError("need at least three samples spanning a positive time")

    a1 = res1 = None
    if np.min(np.abs(mean)) > min_amplitude:
        X = np.column_stack([np.ones_like(t), t])
        cond = np.linalg.cond(X)
        if cond > 1e12:
            raise FitError(f"first-moment design matrix ill-conditioned (cond={cond:.3g})")
        y = np.log(np.abs(mean))
        coef, *_ = np.linalg.lstsq(X, y, rcond=None)
        a1 = -2.0 * coef[1]
        res1 = float(np.sqrt(np.mean((X @ coef - y) ** 2)))

    def model(tt, a, d):
        x = a * tt
        growth = np.where(np.abs(x) < 1e-8, tt * (1 - 0.5 * x), -np.expm1(-x) / np.where(a == 0, 1, a))
        return N[0] * np.exp(-x) + d * growth

    # linear estimate from the integrated moment equation seeds the nonlinear fit
    integ = np.concatenate([[0.0], np.cumsum(0.5 * (N[1:] + N[:-1]) * np.diff(t))])
    A = np.column_stack([-integ, t])
    cond = np.linalg.cond(A[1:])
    if not np.isfinite(cond) or cond > 1e12:
        raise FitError(f"second-moment design matrix ill-conditioned (cond={cond:.3g})")
    (a_lin, d_lin), *_ = np.linalg.lstsq(A, N - N[0], rcond=None)
    (a2, d2), _ = curve_fit(model, t, N, p0=[a_lin, d_lin], xtol=1e-14, ftol=1e-14, maxfev=20000)
    res2 = float(np.sqrt(np.mean((model(t, a2, d2) - N) ** 2)))

    if a1 is not None:
        basis = np.where(abs(a1 * t) < 1e-8, t, -np.expm1(-a1 * t) / (a1 if a1 else 1.0))
        rhs = N - N[0] * np.exp(-a1 * t)
        d_fixed = float(np.dot(basis, rhs) / np.dot(basis, basis))
        a, d = a1, d_fixed
    else:
        a, d = a2, d2
    return DriftDiffusionFit(
        gamma=float(a - Gamma_M),
        d=float(d),
        drift_first=None if a1 is None else float(a1),
        drift_second=float(a2),
        residual_first=res1,
        residual_second=res2,
        condition=float(cond),
    )


def extract_drift_diffusion(times, trajectory, Gamma_M=0.0) -> DriftDiffusionFit:
    """Empirical ``(gamma, d)`` from a sequence of JointStates."""
    moments = [mechanical_moments(s) for s in trajectory]
    return fit_drift_diffusion(times, [m for m, _ in moments], [n for _, n in moments], Gamma_M)
