"""Homogenized solution hierarchy, exact averaged solutions and rates.

Full space is modeled by a large torus of period R; every operator in play
is a Fourier multiplier, so all objects live on the dual grid (2 pi / R) Z^d
truncated at a cutoff K, and all norms are frequency-side sums approximating
L2(R^d):  ||g||^2 = R^{-d} sum_m |ghat(xi_m)|^2  for continuum-transform
values ghat.

The hierarchy solves, frequency by frequency,

    grad spectrum of u^1 (xi) = -(xi ox xi) / (xi . A1 xi) fhat(xi),

and inductively feeds lower orders through the monomial multipliers carried
by the higher effective tensors.  The exact averaged solution divides by the
symbol at eps xi instead; the difference at matched truncation order is the
rate object fitted on log-log axes.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field as dc_field
from typing import Callable, Mapping, Sequence

import numpy as np

from .cell import CoefficientField, DEFAULT_OPTIONS, SolveOptions
from .correctors import CorrectorSet
from .fourier import (
    FrequencyLattice,
    SpectralField,
    divergence,
    gradient,
    pointwise_product,
)
from .symbol import symbol_at

TWO_PI = 2.0 * np.pi


# ---------------------------------------------------------------------------
# grid, forcing
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FullSpaceGrid:
    """Frequency grid xi = (2 pi / R) m, |xi_j| <= K, of the proxy torus."""

    d: int
    R: float = 16.0
    K: float = TWO_PI * 8

    def __post_init__(self):
        if self.R <= 0 or self.K <= 0:
            raise ValueError("period and cutoff must be positive")

    @property
    def modes_per_axis(self) -> int:
        return int(np.floor(self.K / (TWO_PI / self.R)))

    @property
    def shape(self) -> tuple[int, ...]:
        return (2 * self.modes_per_axis + 1,) * self.d

    def frequencies(self) -> np.ndarray:
        m = np.arange(-self.modes_per_axis, self.modes_per_axis + 1)
        axes = np.meshgrid(*(m,) * self.d, indexing="ij")
        return (TWO_PI / self.R) * np.stack(axes).astype(float)

    def check_admissible(self, eps_max: float) -> None:
        """Largest rescaled frequency must stay strictly inside the dual cell."""
        if eps_max * self.K >= TWO_PI:
            raise ValueError(
                f"cutoff K={self.K:.4g} with eps={eps_max} leaves the "
                f"admissible range (need eps*K < 2 pi)"
            )

    def norm(self, ghat: np.ndarray) -> float:
        return float(np.sqrt(np.sum(np.abs(ghat) ** 2) / self.R ** self.d))

    def weighted_norm(self, ghat: np.ndarray, s: float) -> float:
        xi = self.frequencies()
        w = (1.0 + np.sum(xi ** 2, axis=0)) ** s
        return float(np.sqrt(np.sum(w * np.abs(ghat) ** 2) / self.R ** self.d))


@dataclass(frozen=True)
class Forcing:
    """Vector forcing given by a closed-form continuum transform."""

    d: int
    profile: Callable[[np.ndarray], np.ndarray]
    label: str = "custom"

    @classmethod
    def gaussian(cls, d: int, direction=None, width: float = 1.0) -> "Forcing":
        """fhat(xi) = e exp(-width |xi|^2 / 2); default e = (1,..,1)/sqrt(d)."""
        e = (np.full(d, 1.0 / np.sqrt(d)) if direction is None
             else np.asarray(direction, dtype=float))

        def profile(xi):
            env = np.exp(-0.5 * width * np.sum(xi ** 2, axis=0))
            return e.reshape((d,) + (1,) * (xi.ndim - 1)) * env

        return cls(d, profile, label=f"gaussian(width={width})")

    def values(self, grid: FullSpaceGrid) -> np.ndarray:
        xi = grid.frequencies()
        out = np.asarray(self.profile(xi), dtype=complex)
        if out.shape != (self.d,) + xi.shape[1:]:
            raise ValueError(f"forcing profile returned shape {out.shape}")
        return out


# ---------------------------------------------------------------------------
# hierarchy
# ---------------------------------------------------------------------------

def _check_first_order(a1: np.ndarray) -> None:
    sym = 0.5 * (a1 + a1.T)
    if np.linalg.eigvalsh(sym)[0] <= 0.0:
        raise ValueError("first-order tensor is not symmetrized-elliptic")


def _potential_recursion(abars: Sequence[np.ndarray], fhat: np.ndarray,
                         xi: np.ndarray) -> list[np.ndarray]:
    """Scalar potentials u^n(xi) of the hierarchy on an arbitrary frequency
    set; index 0 of the returned list is order 1.  abars[0] is the d x d
    first-order tensor, abars[k-1] the order-k tensor."""
    d = xi.shape[0]
    a1 = np.asarray(abars[0], dtype=float)
    _check_first_order(a1)
    den = np.einsum("a...,ab,b...->...", xi, a1, xi)
    zero = np.all(xi == 0.0, axis=0)
    den_safe = np.where(zero, 1.0, den)
    if np.any(np.abs(den_safe) <= 0.0):
        raise ValueError("vanishing first-order symbol on a nonzero frequency")
    pots: list[np.ndarray] = []
    ixf = np.sum(1j * xi * fhat, axis=0)
    pots.append(np.where(zero, 0.0, ixf / den_safe))
    ell = len(abars)
    for n in range(2, ell + 1):
        rhs = np.zeros_like(pots[0])
        for k in range(2, n + 1):
            ak = np.asarray(abars[k - 1], dtype=float)
            grad_prev = 1j * xi * pots[n - k][None]  # grad spectrum of u^{n+1-k}
            for idx in itertools.product(range(d), repeat=k - 1):
                mono = np.ones_like(pots[0])
                for i in idx:
                    mono = mono * (1j * xi[i])
                vec = np.einsum("ab,b...->a...", ak[idx], grad_prev)
                rhs = rhs + mono * np.sum(1j * xi * vec, axis=0)
        pots.append(np.where(zero, 0.0, rhs / den_safe))
    return pots


@dataclass(frozen=True)
class HomogenizedHierarchy:
    """Gradient spectra of the hierarchy orders on a FullSpaceGrid."""

    grid: FullSpaceGrid
    ell: int
    abars: list[np.ndarray]
    fhat: np.ndarray
    grad_spectra: list[np.ndarray]   # index n-1 holds order n, shape (d,)+grid

    def truncated_gradient(self, eps: float) -> np.ndarray:
        """Gradient spectrum of sum_n eps^(n-1) u^n."""
        out = np.zeros_like(self.grad_spectra[0])
        for n, g in enumerate(self.grad_spectra, start=1):
            out = out + eps ** (n - 1) * g
        return out


def solve_hierarchy(abars: Sequence[np.ndarray], f: Forcing,
                    grid: FullSpaceGrid) -> HomogenizedHierarchy:
    """Orders 1..len(abars) of the homogenized hierarchy for forcing f."""
    xi = grid.frequencies()
    fhat = f.values(grid)
    pots = _potential_recursion(abars, fhat, xi)
    grads = [1j * xi * p[None] for p in pots]
    return HomogenizedHierarchy(grid, len(abars), [np.array(a) for a in abars],
                                fhat, grads)


def curl_free_defect(grad_spectrum: np.ndarray, grid: FullSpaceGrid) -> float:
    """Max deviation of a gradient spectrum from being parallel to xi."""
    xi = grid.frequencies()
    q = np.sum(xi ** 2, axis=0)
    q = np.where(q == 0.0, 1.0, q)
    proj = xi * (np.sum(xi * grad_spectrum, axis=0) / q)[None]
    return float(np.max(np.abs(grad_spectrum - proj)))


# ---------------------------------------------------------------------------
# exact averaged solution via the symbol
# ---------------------------------------------------------------------------

class SymbolCache:
    """Memoizes symbol values keyed by the rounded rescaled frequency.

    For real media the reflection value at -zeta is the conjugate, so each
    antipodal pair costs one shifted solve.
    """

    def __init__(self, a: CoefficientField, opts: SolveOptions = DEFAULT_OPTIONS):
        self.a = a
        self.opts = opts
        self._store: dict[tuple, complex] = {}
        self.solves = 0
        self.hits = 0

    @staticmethod
    def _key(zeta: np.ndarray) -> tuple:
        return tuple(np.round(zeta, 12))

    def value(self, zeta) -> complex:
        zeta = np.asarray(zeta, dtype=float)
        key = self._key(zeta)
        if key in self._store:
            self.hits += 1
            return self._store[key]
        neg = self._key(-zeta)
        if self.a.field.is_real and neg in self._store:
            self.hits += 1
            val = np.conj(self._store[neg])
            self._store[key] = val
            return val
        val = symbol_at(self.a, zeta, opts=self.opts).value
        self._store[key] = val
        self.solves += 1
        return val


def averaged_solution(a: CoefficientField, eps: float, f: Forcing,
                      grid: FullSpaceGrid,
                      cache: SymbolCache | None = None,
                      opts: SolveOptions = DEFAULT_OPTIONS) -> np.ndarray:
    """Gradient spectrum of the averaged solution at scale eps.

    Per frequency:  -(xi ox xi) fhat(xi) * eps^2 / symbol(eps xi);  the zero
    mode is zero.  Symbol values are cached across sweeps.
    """
    grid.check_admissible(eps)
    if cache is None:
        cache = SymbolCache(a, opts)
    xi = grid.frequencies()
    fhat = f.values(grid)
    flat = xi.reshape(a.d, -1)
    ff = fhat.reshape(a.d, -1)
    out = np.zeros_like(ff)
    for j in range(flat.shape[1]):
        x = flat[:, j]
        if not np.any(x):
            continue
        s = cache.value(eps * x)
        out[:, j] = -x * (x @ ff[:, j]) * eps ** 2 / s
    return out.reshape(fhat.shape)


# ---------------------------------------------------------------------------
# rates
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RateTable:
    ell: int
    eps: np.ndarray
    errors: np.ndarray
    weighted_norm: float      # ||<grad>^{2 ell - 1} f||
    prefactors: np.ndarray    # errors / (eps^ell * weighted_norm)
    slope: float              # least-squares slope of log error vs log eps

    def prefactor_spread(self) -> float:
        """(max - min)/max of the prefactors; 0 for identically-zero errors."""
        if np.max(self.prefactors) == 0.0:
            return 0.0
        return float(np.ptp(self.prefactors) / np.max(self.prefactors))


def error_and_rate(a: CoefficientField, ell: int, f: Forcing,
                   eps_list: Sequence[float], grid: FullSpaceGrid,
                   abars: Sequence[np.ndarray],
                   cache: SymbolCache | None = None,
                   opts: SolveOptions = DEFAULT_OPTIONS) -> RateTable:
    """Error table e(eps) = || grad(averaged - truncated hierarchy) ||.

    eps_list should be geometric with at least 4 points.  The fitted slope
    and the prefactors e/(eps^ell ||<grad>^{2 ell-1} f||) are reported.
    """
    eps = np.asarray(sorted(eps_list, reverse=True), dtype=float)
    if len(eps) < 2:
        raise ValueError("need at least two scales to fit a rate")
    grid.check_admissible(float(eps[0]))
    if cache is None:
        cache = SymbolCache(a, opts)
    hier = solve_hierarchy(list(abars)[:ell], f, grid)
    wnorm = grid.weighted_norm(f.values(grid), (2 * ell - 1) / 2.0)
    errs = []
    for e in eps:
        exact = averaged_solution(a, float(e), f, grid, cache, opts)
        errs.append(grid.norm(exact - hier.truncated_gradient(float(e))))
    errs = np.array(errs)
    pref = errs / (eps ** ell * wnorm)
    if np.all(errs > 1e-15):
        slope = float(np.polyfit(np.log(eps), np.log(errs), 1)[0])
    else:
        slope = float("nan")
    return RateTable(ell, eps, errs, wnorm, pref, slope)


def write_rate_csv(table: RateTable, path) -> None:
    """Columns: eps, error, weighted_norm, ratio."""
    lines = ["eps,error,weighted_norm,ratio"]
    for e, err, p in zip(table.eps, table.errors, table.prefactors):
        lines.append(f"{e:.12e},{err:.12e},{table.weighted_norm:.12e},{p:.12e}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# ill-posedness guard for the naive all-orders operator
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NaiveSymbolReport:
    detected: bool
    min_ratio: float                 # min |symbol| / |xi|^2 over the grid
    worst_frequency: np.ndarray | None
    threshold: float


def naive_symbol_guard(abars: Sequence[np.ndarray], eps: float,
                       grid: FullSpaceGrid, lam: float) -> NaiveSymbolReport:
    """Scan the all-orders truncated operator symbol for near-vanishing.

    The direct truncation sum_k eps^(k-1) (i xi)^(k-1)-contracted tensors can
    vanish at grid frequencies, which is why the hierarchy solves order by
    order instead.  Flags |symbol| < (lam/4) |xi|^2.
    """
    xi = grid.frequencies()
    d = xi.shape[0]
    sym = np.zeros(xi.shape[1:], dtype=complex)
    for k, ak in enumerate(abars, start=1):
        ak = np.asarray(ak, dtype=float)
        for idx in itertools.product(range(d), repeat=k - 1):
            mono = np.ones(xi.shape[1:], dtype=complex) * eps ** (k - 1)
            for i in idx:
                mono = mono * (1j * xi[i])
            sym = sym + mono * np.einsum("a...,ab,b...->...", xi, ak[idx], xi)
    q = np.sum(xi ** 2, axis=0)
    mask = q > 0.0
    ratio = np.abs(sym[mask]) / q[mask]
    min_ratio = float(ratio.min())
    threshold = lam / 4.0
    detected = bool(min_ratio < threshold)
    worst = None
    if detected:
        pos = np.argwhere(mask)[int(np.argmin(ratio))]
        worst = xi[(slice(None),) + tuple(pos)]
    return NaiveSymbolReport(detected, min_ratio, worst, threshold)


# ---------------------------------------------------------------------------
# two-scale identity on a commensurate torus
# ---------------------------------------------------------------------------

def _embed_cell_field(f: SpectralField, big: FrequencyLattice,
                      multiple: int, phase_shift=None) -> SpectralField:
    """Place a unit-cell field onto a lattice whose period is ``multiple``
    cells (big index = multiple * cell mode), optionally translating the
    cell variable by ``phase_shift`` in [0,1)^d."""
    small = f.lattice
    if big.M < multiple * small.M:
        raise ValueError("target lattice cannot hold the embedded band")
    coeffs = f.coeffs
    if phase_shift is not None:
        kk = small.wavevectors()
        z = np.asarray(phase_shift, dtype=float)
        coeffs = coeffs * np.exp(1j * np.tensordot(z, kk, axes=(0, 0)))
    shape = coeffs.shape[: f.rank] + big.mode_shape
    out = np.zeros(shape, dtype=complex)
    idx = np.ix_(*(multiple * small.mode_range() + big.M,) * small.d)
    out[(...,) + idx] = coeffs
    return SpectralField(big, out, f.is_real and phase_shift is None)


def _wbar_field(big: FrequencyLattice, modes: Mapping[tuple[int, ...], complex]
                ) -> SpectralField:
    w = SpectralField.from_modes(big, dict(modes))
    return w


def _derivative(f: SpectralField, idx: tuple[int, ...]) -> SpectralField:
    kk = f.lattice.wavevectors()
    m = np.ones(f.lattice.mode_shape, dtype=complex)
    for i in idx:
        m = m * (1j * kk[i])
    return SpectralField(f.lattice, f.coeffs * m, False)


def two_scale_residual(cs: CorrectorSet, n: int,
                       wbar_modes: Mapping[tuple[int, ...], complex],
                       period: int = 1) -> float:
    """Residual of the order-n two-scale identity on a torus of ``period``
    unit cells, relative to ||<grad>^{n+1} wbar||.

    Both sides are evaluated spectrally with exact (alias-free) products:
    div(a grad F_n[wbar]) against the effective-tensor terms plus the
    boundary flux term carried by (a phi^n - sigma^n).
    """
    if n > cs.order:
        raise ValueError(f"need correctors up to order {n}, have {cs.order}")
    a = cs.medium
    lat = a.lattice
    d = lat.d
    if period < 1 or int(period) != period:
        raise ValueError("torus period must be a positive integer")
    mw = max((max(abs(k) for k in mode) for mode in wbar_modes), default=0)
    M_big = 2 * period * lat.M + mw
    big = FrequencyLattice(d, M_big, period=float(period))
    a_big = _embed_cell_field(a.field, big, period)
    wbar = _wbar_field(big, wbar_modes)

    # F_n[wbar] = sum_k sum_idx phi^k_idx d^k_idx wbar
    f_n = SpectralField.zeros(big, 0)
    for k in range(0, n + 1):
        for idx in itertools.product(range(d), repeat=k):
            phi_big = _embed_cell_field(cs.phi[k][idx], big, period)
            f_n = f_n + pointwise_product(phi_big, _derivative(wbar, idx))
    lhs = divergence(pointwise_product(a_big, gradient(f_n)))

    # effective-tensor terms
    rhs_vec = SpectralField.zeros(big, 1)
    for k in range(1, n + 1):
        ak = cs.abar[k]
        for idx in itertools.product(range(d), repeat=k - 1):
            mat = ak[idx]
            for p in range(d):
                comp = SpectralField.zeros(big, 0)
                for j in range(d):
                    if mat[p, j] != 0.0:
                        comp = comp + mat[p, j] * _derivative(wbar, idx + (j,))
                rhs_vec.coeffs[p] += comp.coeffs
    rhs = divergence(rhs_vec)

    # flux term (a phi^n - sigma^n) grad d^n wbar
    flux_vec = SpectralField.zeros(big, 1)
    for idx in itertools.product(range(d), repeat=n):
        phi_big = _embed_cell_field(cs.phi[n][idx], big, period)
        sig_big = _embed_cell_field(cs.sigma[n][idx], big, period)
        mat = pointwise_product(a_big, phi_big) - sig_big
        gw = gradient(_derivative(wbar, idx))
        flux_vec = flux_vec + pointwise_product(mat, gw)
    rhs = rhs + divergence(flux_vec)

    num = (lhs - rhs).norm()
    den = wbar.sobolev_norm((n + 1) / 2.0)
    return float(num / den)


# ---------------------------------------------------------------------------
# two-scale expansion error against heterogeneous solves
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExpansionError:
    eps: float
    rms_error: float             # RMS over translations of ||grad(u - S)||
    weighted_norm: float
    ratio: float                 # rms / (eps^ell * weighted_norm)
    per_translation: np.ndarray


def expansion_error(cs: CorrectorSet, ell: int, f: Forcing, eps: float,
                    Z: int, torus_period: int = 8,
                    opts: SolveOptions = DEFAULT_OPTIONS,
                    cutoff: float = TWO_PI) -> ExpansionError:
    """Two-scale expansion error at scale eps = 1/m, averaged over a Z-per-
    axis grid of cell translations, on a torus of ``torus_period``.

    Solves the heterogeneous problem per translation with the Krylov cell
    solver, assembles sum_k eps^k phi^k(./eps + z) d^k u_bar^ell, and reports
    the root-mean-square gradient error and its ratio to
    eps^ell ||<grad>^{2 ell - 1} f||.
    """
    from .cell import _certify, solve_cell  # local import to avoid cycle

    a = cs.medium
    d = a.d
    if d > 2:
        raise ValueError("expansion_error is limited to d <= 2")
    if Z < 1 or Z > 16:
        raise ValueError("translation count per axis must be in 1..16")
    m = 1.0 / eps
    if abs(m - round(m)) > 1e-12:
        raise ValueError(f"eps={eps} is not the reciprocal of an integer")
    m = int(round(m))
    R = int(torus_period)
    mult = m * R

    band_f = int(np.floor(cutoff / (TWO_PI / R)))
    M_big = mult * a.lattice.M + band_f
    big = FrequencyLattice(d, M_big, period=float(R))

    # torus coefficients of f: continuum transform sampled / R^d
    kk = big.wavevectors()
    fhat = np.asarray(f.profile(kk), dtype=complex)
    band_mask = np.max(np.abs(kk), axis=0) <= cutoff
    fcoef = fhat * band_mask[None] / R ** d
    f_field = SpectralField(big, fcoef)

    # homogenized hierarchy on the torus frequency set
    abars = [cs.abar[k] for k in range(1, ell + 1)]
    pots = _potential_recursion(abars, fcoef, kk)
    ubar = np.zeros_like(pots[0])
    for nn, p in enumerate(pots, start=1):
        ubar = ubar + eps ** (nn - 1) * p
    ubar_field = SpectralField(big, ubar)

    wnorm_torus = SpectralField(big, fcoef).sobolev_norm((2 * ell - 1) / 2.0)
    wnorm = R ** (d / 2.0) * wnorm_torus

    errors = []
    for jz in itertools.product(range(Z), repeat=d):
        z = np.array(jz, dtype=float) / Z
        az_coeffs = _embed_cell_field(a.field, big, mult, phase_shift=z)
        az = _certify(big, az_coeffs)
        sol = solve_cell(az, f_field, opts)
        # expansion S = sum_k eps^k phi^k(./eps + z) d^k ubar
        S = SpectralField(big, ubar_field.coeffs.copy())
        for k in range(1, ell + 1):
            for idx in itertools.product(range(d), repeat=k):
                phi_big = _embed_cell_field(cs.phi[k][idx], big, mult,
                                            phase_shift=z)
                term = pointwise_product(phi_big, _derivative(ubar_field, idx))
                S = S + (eps ** k) * term
        err = gradient(sol.phi - S).norm() * R ** (d / 2.0)
        errors.append(err)
    errors = np.array(errors)
    rms = float(np.sqrt(np.mean(errors ** 2)))
    return ExpansionError(eps, rms, wnorm, rms / (eps ** ell * wnorm), errors)
