"""Elliptic solves on the periodic cell.

Two problems are covered, both preconditioned by exact (shifted) inverse
Laplacians so that Krylov iteration counts depend on the medium contrast and
not on the grid:

* corrector-type:  -div(a grad phi) = div g  with  mean(phi) = 0,
* shifted (Bloch): -(grad + i xi) . a (grad + i xi) v = i xi . e  with v
  periodic; its mean is the quantity the averaged-symbol route consumes.

Coefficient fields are validated at construction: the ellipticity constant
``lam`` and the upper norm bound ``upper`` are certified numerically on the
product grid, never trusted from the descriptor.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np
from scipy.sparse.linalg import LinearOperator, bicgstab, cg, gmres

from .fourier import (
    FrequencyLattice,
    SpectralField,
    divergence,
    to_coefficients,
    to_grid,
)


class EllipticityError(ValueError):
    """Coefficient field fails the ellipticity certificate."""


class SolverError(RuntimeError):
    """Krylov iteration did not reach the requested residual."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (relative residual {residual:.3e})")
        self.residual = residual


class ConditioningWarning(UserWarning):
    pass


# ---------------------------------------------------------------------------
# coefficient fields
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class CoefficientField:
    """Matrix-valued periodic medium with certified ellipticity.

    ``lam``   smallest eigenvalue of the symmetric part over the grid,
    ``upper`` largest singular value over the grid,
    ``symmetric`` whether a^T = a pointwise (within 1e-12).
    ``grid_values`` caches the real samples on the product grid.
    """

    lattice: FrequencyLattice
    field: SpectralField
    grid_values: np.ndarray
    lam: float
    upper: float
    symmetric: bool

    @property
    def d(self) -> int:
        return self.lattice.d


def _certify(lattice: FrequencyLattice, field: SpectralField) -> CoefficientField:
    d = lattice.d
    grid = to_grid(field)
    imag = np.max(np.abs(grid.imag))
    scale = max(np.max(np.abs(grid.real)), 1.0)
    if imag > 1e-10 * scale:
        raise EllipticityError(f"medium is not real on the grid (max imag {imag:.2e})")
    a = np.ascontiguousarray(np.moveaxis(grid.real, (0, 1), (-2, -1)))  # grid+(d,d)
    sym = 0.5 * (a + np.swapaxes(a, -1, -2))
    eig = np.linalg.eigvalsh(sym)
    lam = float(eig[..., 0].min())
    if lam <= 0.0:
        flat = int(np.argmin(eig[..., 0]))
        point = np.unravel_index(flat, lattice.grid_shape)
        x = np.array(point) * lattice.period / lattice.N
        raise EllipticityError(
            f"ellipticity violated: smallest symmetric-part eigenvalue "
            f"{lam:.6e} at grid point {point} (x = {np.round(x, 6)})"
        )
    sv = np.linalg.svd(a, compute_uv=False)
    upper = float(sv[..., 0].max())
    skew = np.max(np.abs(a - np.swapaxes(a, -1, -2)))
    symmetric = bool(skew <= 1e-12 * scale)
    field = SpectralField(lattice, field.coeffs, True)
    return CoefficientField(lattice, field, grid.real, lam, upper, symmetric)


def coefficient_from_modes(lattice: FrequencyLattice,
                           modes: dict[tuple[int, ...], np.ndarray]) -> CoefficientField:
    """Explicit Fourier modes; each value is a d x d matrix."""
    field = SpectralField.from_modes(lattice, {
        k: np.asarray(v, dtype=complex).reshape(lattice.d, lattice.d)
        for k, v in modes.items()
    })
    return _certify(lattice, field)


def coefficient_from_function(lattice: FrequencyLattice, fn) -> CoefficientField:
    """Closed-form medium; ``fn(x)`` maps (d,)+grid coordinates to scalar
    values (isotropic) or a (d, d)+grid matrix array.  Band-limited by
    projection onto the lattice."""
    x = lattice.grid_points()
    vals = np.asarray(fn(x), dtype=float)
    if vals.shape == lattice.grid_shape:
        eye = np.eye(lattice.d).reshape((lattice.d, lattice.d) + (1,) * lattice.d)
        vals = eye * vals
    if vals.shape != (lattice.d, lattice.d) + lattice.grid_shape:
        raise ValueError(f"descriptor returned shape {vals.shape}")
    field = to_coefficients(vals, lattice)
    return _certify(lattice, field)


def coefficient_from_samples(lattice: FrequencyLattice,
                             cells: np.ndarray) -> CoefficientField:
    """Piecewise-constant medium from per-cell samples, band-limited by
    projection.  ``cells`` has shape (m,)*d (isotropic scalars) or
    (d, d) + (m,)*d; m must divide the grid size."""
    cells = np.asarray(cells, dtype=float)
    d = lattice.d
    if cells.ndim == d:
        eye = np.eye(d).reshape((d, d) + (1,) * d)
        cells = eye * cells
    m = cells.shape[-1]
    if cells.shape != (d, d) + (m,) * d or lattice.N % m != 0:
        raise ValueError(
            f"cell sample shape {cells.shape} incompatible with grid N={lattice.N}"
        )
    rep = lattice.N // m
    grid = cells
    for ax in range(-d, 0):
        grid = np.repeat(grid, rep, axis=ax)
    field = to_coefficients(grid, lattice)
    return _certify(lattice, field)


def make_coefficient_field(lattice: FrequencyLattice, descriptor) -> CoefficientField:
    """Dispatch on a (kind, payload) descriptor: ``("modes", mapping)``,
    ``("function", callable)`` or ``("samples", array)``."""
    kind, payload = descriptor
    builders = {
        "modes": coefficient_from_modes,
        "function": coefficient_from_function,
        "samples": coefficient_from_samples,
    }
    if kind not in builders:
        raise ValueError(f"unknown coefficient descriptor kind {kind!r}")
    return builders[kind](lattice, payload)


# -- named media used across experiments ------------------------------------

def identity_medium(d: int, M: int = 4) -> CoefficientField:
    lat = FrequencyLattice(d, M)
    return coefficient_from_function(lat, lambda x: np.ones(x.shape[1:]))


def cosine_medium_1d(M: int = 24) -> CoefficientField:
    """a(x) = 1/(2 + cos 2 pi x) on the unit interval; lam = 1/3."""
    lat = FrequencyLattice(1, M)
    return coefficient_from_function(lat, lambda x: 1.0 / (2.0 + np.cos(2 * np.pi * x[0])))


def laminate_medium_2d(M: int = 16, amplitude: float = 0.5) -> CoefficientField:
    """a(x) = (1 + amplitude cos 2 pi x_1) Id; lam = 1 - amplitude."""
    lat = FrequencyLattice(2, M)
    return coefficient_from_function(
        lat, lambda x: 1.0 + amplitude * np.cos(2 * np.pi * x[0])
    )


# ---------------------------------------------------------------------------
# solver options and results
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SolveOptions:
    """Krylov controls; ``method`` "auto" picks CG for symmetric media and
    BiCGStab otherwise."""

    tol: float = 1e-10
    maxiter: int = 2000
    method: str = "auto"

    def __post_init__(self):
        if not 0.0 < self.tol <= 1e-4:
            raise ValueError(f"tolerance {self.tol} outside (0, 1e-4]")

    def with_tol(self, tol: float) -> "SolveOptions":
        return replace(self, tol=tol)


DEFAULT_OPTIONS = SolveOptions()


@dataclass(frozen=True)
class CellSolution:
    phi: SpectralField
    residual: float          # relative to the forcing norm
    iterations: int


@dataclass(frozen=True)
class BlochSolution:
    v: SpectralField
    mean: complex
    residual: float
    iterations: int


# ---------------------------------------------------------------------------
# solves
# ---------------------------------------------------------------------------

def _medium_operator(a: CoefficientField, shift: np.ndarray | None):
    """Return chat -> coefficients of -(D+i xi).(a (D+i xi) field)."""
    lat = a.lattice
    sk = lat.wavevectors()
    if shift is not None:
        sk = sk + np.asarray(shift, dtype=float).reshape((lat.d,) + (1,) * lat.d)
    ag = a.grid_values

    def apply(chat: np.ndarray) -> np.ndarray:
        grad = 1j * sk * chat[None]
        ggrid = to_grid(SpectralField(lat, grad))
        flux = np.einsum("jk...,k...->j...", ag, ggrid)
        fhat = to_coefficients(flux, lat, is_real=False).coeffs
        return -np.sum(1j * sk * fhat, axis=0)

    return apply, sk


def _krylov(apply, precond, b: np.ndarray, opts: SolveOptions, symmetric: bool):
    shape = b.shape
    n = b.size
    count = {"it": 0}

    def matvec(v):
        return apply(v.reshape(shape)).ravel()

    def psolve(v):
        return (precond * v.reshape(shape)).ravel()

    A = LinearOperator((n, n), matvec=matvec, dtype=np.complex128)
    M = LinearOperator((n, n), matvec=psolve, dtype=np.complex128)

    def cb(xk):
        count["it"] += 1

    method = opts.method
    if method == "auto":
        method = "cg" if symmetric else "bicgstab"
    bnorm = np.linalg.norm(b)
    kw = dict(rtol=0.2 * opts.tol, atol=0.0, maxiter=opts.maxiter, M=M)
    if method == "cg":
        x, info = cg(A, b.ravel(), callback=cb, **kw)
    elif method == "bicgstab":
        x, info = bicgstab(A, b.ravel(), callback=cb, **kw)
    elif method == "gmres":
        x, info = gmres(A, b.ravel(), **kw)
    else:
        raise ValueError(f"unknown Krylov method {method!r}")
    x = x.reshape(shape)
    res = float(np.linalg.norm(apply(x).ravel() - b.ravel()) / bnorm)
    if res > opts.tol:
        raise SolverError(
            f"{method} did not converge in {opts.maxiter} iterations", res
        )
    return x, res, count["it"]


def solve_cell(a: CoefficientField, g: SpectralField,
               opts: SolveOptions = DEFAULT_OPTIONS) -> CellSolution:
    """Solve -div(a grad phi) = div g for mean-zero periodic phi.

    g is a vector field on the same lattice.  Preconditioner: exact inverse
    Laplacian restricted to mean-zero fields.
    """
    if g.rank != 1:
        raise ValueError("forcing g must be a vector field")
    lat = a.lattice
    if g.lattice != lat:
        raise ValueError("forcing lattice differs from the medium lattice")
    b = divergence(g).coeffs
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return CellSolution(SpectralField.zeros(lat, 0, is_real=True), 0.0, 0)
    apply, sk = _medium_operator(a, None)
    k2 = np.sum(sk ** 2, axis=0)
    precond = np.where(k2 > 0.0, 1.0 / np.where(k2 > 0.0, k2, 1.0), 0.0)
    x, res, it = _krylov(apply, precond, b, opts, a.symmetric)
    x[(lat.M,) * lat.d] = 0.0
    phi = SpectralField(lat, x, is_real=False)
    if g.is_real and a.field.is_real:
        phi = SpectralField(lat, 0.5 * (x + phi.conj_reflected().coeffs), True)
    return CellSolution(phi, res, it)


def admissible_shift(lattice: FrequencyLattice, xi: np.ndarray) -> bool:
    """Strictly inside the first dual cell and away from the origin."""
    xi = np.asarray(xi, dtype=float)
    hi = 2.0 * np.pi / lattice.period
    return bool(np.any(xi != 0.0) and np.all(np.abs(xi) < hi))


def solve_bloch(a: CoefficientField, xi, e,
                opts: SolveOptions = DEFAULT_OPTIONS) -> BlochSolution:
    """Solve the shifted cell problem -(D+i xi).a(D+i xi) v = i xi.e.

    xi must lie strictly inside the first dual cell, xi != 0.  Returns the
    periodic amplitude v and its mean.  Preconditioner: 1/|kappa+xi|^2.
    """
    lat = a.lattice
    xi = np.asarray(xi, dtype=float).reshape(lat.d)
    e = np.asarray(e, dtype=float).reshape(lat.d)
    if not admissible_shift(lat, xi):
        raise ValueError(
            f"shift {xi} is zero or not strictly inside the first dual cell"
        )
    if np.linalg.norm(xi) < 1e-3:
        warnings.warn(
            f"shift |xi|={np.linalg.norm(xi):.2e} is close to the origin; "
            "the shifted problem is badly conditioned",
            ConditioningWarning,
            stacklevel=2,
        )
    rhs_val = 1j * float(xi @ e)
    b = np.zeros(lat.mode_shape, dtype=np.complex128)
    b[(lat.M,) * lat.d] = rhs_val
    apply, sk = _medium_operator(a, xi)
    k2 = np.sum(sk ** 2, axis=0)
    precond = 1.0 / k2
    x, res, it = _krylov(apply, precond, b, opts, a.symmetric)
    v = SpectralField(lat, x, is_real=False)
    return BlochSolution(v, complex(v.mean()), res, it)
