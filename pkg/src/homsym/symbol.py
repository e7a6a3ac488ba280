"""Averaged-operator symbol near the origin and its polynomial models.

The scalar symbol value at a shift xi is extracted from the shifted cell
problem as (i xi . e) / mean(v).  It is independent of the probe direction e
for accepted media; ``probe_consistency`` measures that.  ``fit_taylor_model``
performs least squares over even-degree homogeneous polynomials sampled on
rays at several radii (odd degrees vanish by parity for symmetric real media
and can be included only as a diagnostic).  ``compare_with_correctors``
checks, order by order, that the fitted homogeneous parts match the
symmetrized contractions of the effective tensors from the corrector route.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass

import numpy as np

from .cell import (
    CoefficientField,
    DEFAULT_OPTIONS,
    SolveOptions,
    _certify,
    solve_bloch,
)
from .correctors import CorrectorSet, symmetrized_form
from .fourier import SpectralField

BAND_SLACK = 1e-9
IMAG_SLACK = 1e-8
DEFAULT_RADII = (0.2, 0.1, 0.05)
MAX_DESIGN_COND = 1e6


class BandViolationError(ValueError):
    """Symbol value escaped the certified ellipticity band."""


class RayDeficiencyError(ValueError):
    """Sample geometry cannot resolve the requested polynomial degrees."""


@dataclass(frozen=True)
class SymbolSample:
    xi: np.ndarray
    value: complex
    probe: np.ndarray
    residual: float


def symbol_at(a: CoefficientField, xi, e=None,
              opts: SolveOptions = DEFAULT_OPTIONS,
              check_band: bool = True) -> SymbolSample:
    """Symbol value at shift xi via the shifted cell problem.

    Default probe e = xi/|xi| (maximizes the forcing).  The real part is
    checked against the certified band lam |xi|^2 .. upper |xi|^2; for
    symmetric media the imaginary part must be negligible.
    """
    lat = a.lattice
    xi = np.asarray(xi, dtype=float).reshape(lat.d)
    if e is None:
        e = xi / np.linalg.norm(xi)
    e = np.asarray(e, dtype=float).reshape(lat.d)
    if abs(xi @ e) < 1e-12:
        raise ValueError(f"probe {e} is orthogonal to xi={xi}: forcing vanishes")
    sol = solve_bloch(a, xi, e, opts)
    value = 1j * (xi @ e) / sol.mean
    if check_band:
        _check_band(a, xi, value)
    return SymbolSample(xi, complex(value), e, sol.residual)


def _check_band(a: CoefficientField, xi: np.ndarray, value: complex):
    q = float(xi @ xi)
    lo, hi = a.lam * q, a.upper * q
    if not (lo * (1 - BAND_SLACK) - BAND_SLACK <= value.real
            <= hi * (1 + BAND_SLACK) + BAND_SLACK):
        raise BandViolationError(
            f"Re symbol {value.real:.12e} at xi={xi} outside band "
            f"[{lo:.6e}, {hi:.6e}]"
        )
    if a.symmetric and abs(value.imag) > IMAG_SLACK * q:
        raise BandViolationError(
            f"Im symbol {value.imag:.3e} at xi={xi} exceeds {IMAG_SLACK:.0e} |xi|^2"
        )


def probe_consistency(a: CoefficientField, xi, probes=None,
                      opts: SolveOptions = DEFAULT_OPTIONS) -> float:
    """Max pairwise deviation of the symbol across probe directions."""
    lat = a.lattice
    xi = np.asarray(xi, dtype=float).reshape(lat.d)
    if probes is None:
        probes = [xi / np.linalg.norm(xi)]
        probes += [np.eye(lat.d)[j] for j in range(lat.d)]
        probes.append(np.full(lat.d, 1.0 / np.sqrt(lat.d)))
    admissible = [np.asarray(p, dtype=float) for p in probes
                  if abs(np.asarray(p, dtype=float) @ xi) >= 1e-12]
    if not admissible:
        raise ValueError("no admissible probes for this xi")
    values = [symbol_at(a, xi, p, opts).value for p in admissible]
    if len(values) == 1:
        return 0.0
    return max(
        abs(u - v) for u, v in itertools.combinations(values, 2)
    )


# ---------------------------------------------------------------------------
# ray geometry
# ---------------------------------------------------------------------------

def monomial_exponents(d: int, degree: int) -> list[tuple[int, ...]]:
    """All exponent tuples alpha with |alpha| = degree, lexicographic."""
    out = []
    for combo in itertools.combinations_with_replacement(range(d), degree):
        alpha = [0] * d
        for j in combo:
            alpha[j] += 1
        out.append(tuple(alpha))
    return sorted(set(out), reverse=True)


def ray_set(d: int, degree: int, seed: int = 20240 + 1) -> list[np.ndarray]:
    """Coordinate rays, the (+-1)-diagonals (one per sign class), then
    deterministic pseudo-random rays until the degree can be resolved with a
    well-conditioned design."""
    rays = [np.eye(d)[j] for j in range(d)]
    for signs in itertools.product((1.0, -1.0), repeat=d - 1):
        v = np.array((1.0,) + signs) / np.sqrt(d)
        rays.append(v)
    need = len(monomial_exponents(d, degree))
    rng = np.random.default_rng(seed)
    while len(rays) < need + 2:
        v = rng.standard_normal(d)
        rays.append(v / np.linalg.norm(v))
    return rays


def sample_on_rays(a: CoefficientField, rays, radii,
                   opts: SolveOptions = DEFAULT_OPTIONS,
                   check_band: bool = True) -> list[SymbolSample]:
    samples = []
    for u in rays:
        for r in radii:
            samples.append(symbol_at(a, r * np.asarray(u), opts=opts,
                                     check_band=check_band))
    return samples


# ---------------------------------------------------------------------------
# polynomial model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TaylorModel:
    """Homogeneous polynomial model of the symbol near the origin.

    ``coefficients`` maps degree -> (exponents, coeff array); only even
    degrees 2..max_degree unless the model was fitted diagnostically with
    odd degrees included.
    """

    d: int
    max_degree: int
    coefficients: dict[int, tuple[list[tuple[int, ...]], np.ndarray]]
    residual: float
    radii: tuple[float, ...]

    def form(self, degree: int, xi) -> float:
        """Evaluate the homogeneous degree part at xi (0 if absent)."""
        xi = np.asarray(xi, dtype=float)
        if degree not in self.coefficients:
            return 0.0
        exps, coef = self.coefficients[degree]
        return float(sum(
            c * np.prod(xi ** np.array(al)) for al, c in zip(exps, coef)
        ))

    def __call__(self, xi) -> float:
        return sum(self.form(deg, xi) for deg in self.coefficients)

    def quadratic_matrix(self) -> np.ndarray:
        """Matrix Q with xi.Q.xi equal to the degree-2 part."""
        Q = np.zeros((self.d, self.d))
        exps, coef = self.coefficients[2]
        for al, c in zip(exps, coef):
            idx = [j for j in range(self.d) for _ in range(al[j])]
            i, j = idx
            if i == j:
                Q[i, i] += c
            else:
                Q[i, j] += c / 2
                Q[j, i] += c / 2
        return Q


def fit_taylor_model(samples: list[SymbolSample], max_degree: int,
                     lam: float | None = None, upper: float | None = None,
                     include_odd: bool = False) -> TaylorModel:
    """Least squares over homogeneous polynomials of degree 2..max_degree.

    Even degrees only by default (parity); ``include_odd`` adds odd degrees
    for diagnostic fits.  Columns are norm-scaled before solving; a design
    condition number above 1e6 raises RayDeficiencyError.
    """
    if max_degree < 2:
        raise ValueError("max_degree must be >= 2")
    d = samples[0].xi.size
    degrees = [m for m in range(2, max_degree + 1)
               if include_odd or m % 2 == 0]
    basis: list[tuple[int, tuple[int, ...]]] = []
    for m in degrees:
        basis.extend((m, al) for al in monomial_exponents(d, m))
    n_rays_needed = len(monomial_exponents(d, max(degrees)))
    xis = np.array([s.xi for s in samples])
    rays = {tuple(np.round(x / np.linalg.norm(x), 12)) for x in xis}
    rays |= {tuple(-np.array(r)) for r in rays}
    if len(rays) // 2 < n_rays_needed:
        raise RayDeficiencyError(
            f"{len(rays) // 2} distinct rays cannot resolve degree "
            f"{max(degrees)} ({n_rays_needed} monomials); add more rays"
        )
    y = np.array([s.value.real for s in samples])
    X = np.empty((len(samples), len(basis)))
    for col, (_, al) in enumerate(basis):
        X[:, col] = np.prod(xis ** np.array(al), axis=1)
    scale = np.linalg.norm(X, axis=0)
    if np.any(scale == 0.0):
        raise RayDeficiencyError("degenerate design column; add more rays")
    Xs = X / scale
    cond = np.linalg.cond(Xs)
    if cond > MAX_DESIGN_COND:
        raise RayDeficiencyError(
            f"design condition number {cond:.2e} > {MAX_DESIGN_COND:.0e}; "
            "add more rays or radii"
        )
    coef, *_ = np.linalg.lstsq(Xs, y, rcond=None)
    coef = coef / scale
    resid = float(np.sqrt(np.mean((X @ coef - y) ** 2)))
    coefficients: dict[int, tuple[list[tuple[int, ...]], np.ndarray]] = {}
    pos = 0
    for m in degrees:
        exps = monomial_exponents(d, m)
        coefficients[m] = (exps, coef[pos:pos + len(exps)])
        pos += len(exps)
    radii = tuple(sorted({round(float(np.linalg.norm(s.xi)), 12)
                          for s in samples}, reverse=True))
    model = TaylorModel(d, max_degree, coefficients, resid, radii)
    if lam is not None:
        eig = np.linalg.eigvalsh(model.quadratic_matrix())
        hi = upper if upper is not None else 1.0
        if eig[0] < lam - 1e-6 or eig[-1] > hi + 1e-6:
            raise BandViolationError(
                f"quadratic part eigenvalues {eig} outside [{lam}, {hi}]"
            )
    return model


def fit_symbol(a: CoefficientField, max_degree: int,
               radii=DEFAULT_RADII, extra_halvings: int = 0,
               opts: SolveOptions = DEFAULT_OPTIONS
               ) -> tuple[TaylorModel, list[SymbolSample]]:
    """Sample the symbol on the documented ray set and fit a model."""
    radii = list(radii)
    for _ in range(extra_halvings):
        radii.append(radii[-1] / 2)
    rays = ray_set(a.d, max_degree)
    samples = sample_on_rays(a, rays, radii, opts)
    model = fit_taylor_model(samples, max_degree, lam=a.lam, upper=a.upper)
    return model, samples


# ---------------------------------------------------------------------------
# cross-route comparison
# ---------------------------------------------------------------------------

def corrector_route_form(cs: CorrectorSet, n: int, xi) -> float:
    """Degree-(n+1) homogeneous symbol part predicted by the effective
    tensors: the symmetrized contraction, with the sign (-1)^((n-1)/2)
    carried by the (i xi)^(n-1) monomial weights for odd n.  For even n the
    raw contraction is returned; it must vanish by parity."""
    _, scalar = symmetrized_form(cs.abar[n], xi)
    if n % 2 == 1:
        return float((-1) ** ((n - 1) // 2)) * scalar
    return scalar


def compare_with_correctors(model: TaylorModel, cs: CorrectorSet, ell: int,
                            probes=None) -> dict[int, float]:
    """Per-order relative discrepancy between the fitted symbol parts and
    the corrector-route forms, maximized over probe directions."""
    if model.max_degree < ell + 1:
        raise ValueError(f"model degree {model.max_degree} < {ell + 1}")
    if cs.order < ell:
        raise ValueError(f"corrector order {cs.order} < {ell}")
    if probes is None:
        probes = ray_set(cs.d, 2)
    out = {}
    for n in range(1, ell + 1):
        worst = 0.0
        for u in probes:
            route = corrector_route_form(cs, n, u)
            part = model.form(n + 1, u)
            worst = max(worst, abs(part - route) / max(1.0, abs(route)))
        out[n] = worst
    return out


# ---------------------------------------------------------------------------
# translation ensemble oracle
# ---------------------------------------------------------------------------

def translation_average(a: CoefficientField, xi, e, Z: int,
                        opts: SolveOptions = DEFAULT_OPTIONS) -> complex:
    """Average the shifted-medium responses over a Z^d translation grid.

    Solves the shifted cell problem for every translated medium a(. + z),
    z on the Z-per-axis grid, and averages the mean amplitudes.  Must agree
    with the untranslated mean for band-limited media.
    """
    lat = a.lattice
    if lat.N % Z != 0:
        raise ValueError(f"Z={Z} does not divide the grid size N={lat.N}")
    kk = lat.wavevectors()
    total = 0.0 + 0.0j
    shifts = itertools.product(range(Z), repeat=lat.d)
    for jz in shifts:
        z = np.array(jz, dtype=float) * lat.period / Z
        phase = np.exp(1j * np.tensordot(z, kk, axes=(0, 0)))
        shifted = SpectralField(lat, a.field.coeffs * phase, a.field.is_real)
        az = _certify(lat, shifted)
        total += solve_bloch(az, xi, e, opts).mean
    return total / Z ** lat.d


# ---------------------------------------------------------------------------
# table output
# ---------------------------------------------------------------------------

def write_symbol_csv(samples: list[SymbolSample], path) -> None:
    """Columns: xi_1..xi_d, re, im, residual."""
    d = samples[0].xi.size
    header = ",".join(f"xi_{j + 1}" for j in range(d)) + ",re,im,residual"
    lines = [header]
    for s in samples:
        xi = ",".join(f"{x:.12e}" for x in s.xi)
        lines.append(
            f"{xi},{s.value.real:.12e},{s.value.imag:.12e},{s.residual:.3e}"
        )
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def write_taylor_manifest(model: TaylorModel, path) -> None:
    doc = {
        "dimension": model.d,
        "max_degree": model.max_degree,
        "residual": model.residual,
        "radii": list(model.radii),
        "coefficients": {
            str(deg): [
                {"exponents": list(al), "value": float(c)}
                for al, c in zip(*model.coefficients[deg])
            ]
            for deg in sorted(model.coefficients)
        },
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
