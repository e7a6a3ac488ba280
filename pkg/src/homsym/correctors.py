"""Higher-order corrector hierarchy for a periodic medium.

Order n holds a d^n-indexed family of scalar correctors phi, the d^(n-1)
family of d x d effective tensors abar, the flux family q and the
skew-symmetric flux potentials sigma.  The recursion per index tuple
(i_1 ... i_n):

    -div(a grad phi^n)   = div((a phi^{n-1} - sigma^{n-1}) e_{i_n}),
    abar^n e_j           = mean(a (grad phi^n_{..j} + phi^{n-1} e_j)),
    q^n                  = a grad phi^n + (a phi^{n-1} - sigma^{n-1}) e_{i_n}
                           - abar^n e_{i_n},
    -Laplace sigma^n     = curl q^n  (exact Fourier inversion),

with all of phi^n, sigma^n, q^n mean-free for n >= 1.  No symmetry in the
index tuple is assumed; all d^n ordered tuples are stored.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass

import numpy as np

from .cell import CoefficientField, DEFAULT_OPTIONS, SolveOptions, SolverError, _certify, solve_cell
from .fourier import (
    FrequencyLattice,
    SpectralField,
    apply_multiplier,
    curl_matrix,
    divergence,
    gradient,
    pointwise_product,
)

# all dⁿ index tuples are stored; caps keep the tensor count desk-sized
MAX_ORDER = {1: 8, 2: 6, 3: 4}
Q_MEAN_TOL = 1e-10
FLUX_IDENTITY_TOL = 1e-9
ABAR_IMAG_TOL = 1e-10

Index = tuple[int, ...]


class HierarchyError(RuntimeError):
    """A corrector-level identity failed after an accepted solve."""


@dataclass(frozen=True, eq=False)
class CorrectorSet:
    """Correctors, fluxes and effective tensors up to ``order``.

    ``phi[n]``/``sigma[n]`` map index tuples of length n to scalar / matrix
    fields (``phi[0][()]`` is the constant 1, ``sigma[0][()]`` is 0).
    ``q[n]`` (n >= 1) maps to vector fields.  ``abar[n]`` (n >= 1) is an
    ndarray of shape (d,)*(n-1) + (d, d).
    """

    medium: CoefficientField
    order: int
    phi: list[dict[Index, SpectralField]]
    sigma: list[dict[Index, SpectralField]]
    q: list[dict[Index, SpectralField] | None]
    abar: list[np.ndarray | None]

    @property
    def d(self) -> int:
        return self.medium.d


def _index_tuples(d: int, n: int):
    return itertools.product(range(d), repeat=n)


def compute_correctors(a: CoefficientField, order: int,
                       opts: SolveOptions = DEFAULT_OPTIONS) -> CorrectorSet:
    """Run the recursion up to ``order`` (>= 1)."""
    d = a.d
    if order < 1:
        raise ValueError("order must be >= 1")
    if order > MAX_ORDER[d]:
        raise ValueError(
            f"order {order} exceeds the cap {MAX_ORDER[d]} for d={d} "
            "(tensor count grows as d^n)"
        )
    lat = a.lattice
    kk = lat.wavevectors()
    k2 = np.sum(kk ** 2, axis=0)
    inv_k2 = np.where(k2 > 0.0, 1.0 / np.where(k2 > 0.0, k2, 1.0), 0.0)

    # columns a e_j of the medium, reused at every order
    a_cols = [
        SpectralField(lat, a.field.coeffs[:, j], a.field.is_real) for j in range(d)
    ]

    phi: list[dict[Index, SpectralField]] = [
        {(): SpectralField.constant(lat, 1.0)}
    ]
    sigma: list[dict[Index, SpectralField]] = [
        {(): SpectralField.zeros(lat, 2)}
    ]
    q: list[dict[Index, SpectralField] | None] = [None]
    abar: list[np.ndarray | None] = [None]

    for n in range(1, order + 1):
        phi_n: dict[Index, SpectralField] = {}
        sig_n: dict[Index, SpectralField] = {}
        q_n: dict[Index, SpectralField] = {}
        ab_n = np.zeros((d,) * (n - 1) + (d, d))
        for idx in _index_tuples(d, n):
            prev, j = idx[:-1], idx[-1]
            # forcing (a phi^{n-1} - sigma^{n-1}) e_j
            g = pointwise_product(phi[n - 1][prev], a_cols[j])
            sig_col = SpectralField(
                lat, sigma[n - 1][prev].coeffs[:, j], sigma[n - 1][prev].is_real
            )
            g = g - sig_col
            try:
                sol = solve_cell(a, g, opts)
            except SolverError as err:
                raise SolverError(
                    f"corrector solve failed at order {n}, index {idx}: {err}",
                    err.residual,
                ) from err
            phi_n[idx] = sol.phi

            flux = pointwise_product(a.field, gradient(sol.phi)) + g
            col = flux.mean()
            if np.max(np.abs(col.imag)) > ABAR_IMAG_TOL:
                raise HierarchyError(
                    f"effective tensor column at order {n}, index {idx} has "
                    f"imaginary residue {np.max(np.abs(col.imag)):.2e}"
                )
            ab_n[prev + (slice(None), j)] = col.real

            qf = flux - SpectralField.constant(lat, col.real)
            if np.max(np.abs(qf.mean())) > Q_MEAN_TOL:
                raise HierarchyError(f"flux mean nonzero at order {n}, index {idx}")
            q_n[idx] = qf

            # sigma: exact inversion of the constant-coefficient problem
            curl = curl_matrix(qf)
            sig = SpectralField(lat, curl.coeffs * inv_k2, qf.is_real)
            _verify_sigma(sig, qf, k2, n, idx)
            sig_n[idx] = sig
        phi.append(phi_n)
        sigma.append(sig_n)
        q.append(q_n)
        abar.append(ab_n)
    return CorrectorSet(a, order, phi, sigma, q, abar)


def _verify_sigma(sig: SpectralField, qf: SpectralField, k2: np.ndarray,
                  n: int, idx: Index):
    lap = apply_multiplier(sig, k2)  # -Laplace in Fourier form
    res_curl = (lap - curl_matrix(qf)).norm()
    res_div = (divergence(sig) - qf).norm()
    if res_curl > FLUX_IDENTITY_TOL or res_div > FLUX_IDENTITY_TOL:
        raise HierarchyError(
            f"flux potential identities violated at order {n}, index {idx}: "
            f"|curl residual| = {res_curl:.2e}, |div residual| = {res_div:.2e}"
        )


# ---------------------------------------------------------------------------
# derived quantities
# ---------------------------------------------------------------------------

def homogenized_tensor(cs: CorrectorSet, n: int) -> np.ndarray:
    """The order-n effective tensor, shape (d,)*(n-1) + (d, d)."""
    if not 1 <= n <= cs.order:
        raise ValueError(f"order {n} outside computed range 1..{cs.order}")
    return np.array(cs.abar[n])


def symmetrized_form(abar_n: np.ndarray, xi) -> tuple[np.ndarray, float]:
    """Contract the symmetrized tensor with xi over the leading indices.

    Returns (matrix, scalar) where matrix = sym(abar)_{i1..} xi_{i1} ... and
    scalar = xi . matrix . xi, a homogeneous polynomial of degree n+1 in xi.
    """
    A = np.asarray(abar_n, dtype=float)
    xi = np.asarray(xi, dtype=float)
    S = 0.5 * (A + np.swapaxes(A, -1, -2))
    while S.ndim > 2:
        S = np.tensordot(xi, S, axes=(0, 0))
    return S, float(xi @ S @ xi)


@dataclass(frozen=True)
class GrowthReport:
    orders: np.ndarray
    phi_sigma: np.ndarray     # ||(phi^n, sigma^n)||_{L2}
    abar: np.ndarray          # Frobenius norm over all indices
    q: np.ndarray
    base: float               # fitted geometric growth base


def growth_report(cs: CorrectorSet) -> GrowthReport:
    orders = np.arange(1, cs.order + 1)
    ps, ab, qn = [], [], []
    for n in orders:
        ps.append(np.sqrt(
            sum(f.norm() ** 2 for f in cs.phi[n].values())
            + sum(s.norm() ** 2 for s in cs.sigma[n].values())
        ))
        ab.append(float(np.linalg.norm(cs.abar[n].ravel())))
        qn.append(np.sqrt(sum(f.norm() ** 2 for f in cs.q[n].values())))
    total = np.array(ps) + np.array(ab) + np.array(qn)
    mask = total > 1e-14
    if mask.sum() >= 2:
        slope = np.polyfit(orders[mask], np.log(total[mask]), 1)[0]
        base = float(np.exp(slope))
    else:
        base = 0.0
    return GrowthReport(orders, np.array(ps), np.array(ab), np.array(qn), base)


# ---------------------------------------------------------------------------
# container file
# ---------------------------------------------------------------------------

_FORMAT_VERSION = 1


def save_correctors(cs: CorrectorSet, path) -> None:
    """Write a CorrectorSet to an .npz container.

    Layout: key "manifest" holds a JSON string with {format, d, M, N, period,
    order, lam, upper, symmetric}; key "a" holds the medium coefficients; keys
    "phi{n}_{i1}_{i2}..." / "sigma{n}_..." / "q{n}_..." hold coefficient
    arrays in the centered lexicographic mode order; keys "abar{n}" hold the
    effective tensors.
    """
    lat = cs.medium.lattice
    manifest = {
        "format": _FORMAT_VERSION,
        "d": lat.d,
        "M": lat.M,
        "N": lat.N,
        "period": lat.period,
        "order": cs.order,
        "lam": cs.medium.lam,
        "upper": cs.medium.upper,
        "symmetric": cs.medium.symmetric,
    }
    arrays: dict[str, np.ndarray] = {"a": cs.medium.field.coeffs}
    for n in range(1, cs.order + 1):
        arrays[f"abar{n}"] = cs.abar[n]
        for idx in _index_tuples(lat.d, n):
            tag = "_".join(map(str, idx))
            arrays[f"phi{n}_{tag}"] = cs.phi[n][idx].coeffs
            arrays[f"sigma{n}_{tag}"] = cs.sigma[n][idx].coeffs
            arrays[f"q{n}_{tag}"] = cs.q[n][idx].coeffs
    np.savez_compressed(path, manifest=json.dumps(manifest), **arrays)


def load_correctors(path) -> CorrectorSet:
    with np.load(path, allow_pickle=False) as data:
        manifest = json.loads(str(data["manifest"]))
        if manifest["format"] != _FORMAT_VERSION:
            raise ValueError(f"unsupported container format {manifest['format']}")
        lat = FrequencyLattice(
            manifest["d"], manifest["M"], manifest["N"], manifest["period"]
        )
        medium = _certify(lat, SpectralField(lat, data["a"]))
        order = manifest["order"]
        phi = [{(): SpectralField.constant(lat, 1.0)}]
        sigma = [{(): SpectralField.zeros(lat, 2)}]
        q: list[dict[Index, SpectralField] | None] = [None]
        abar: list[np.ndarray | None] = [None]
        for n in range(1, order + 1):
            abar.append(np.array(data[f"abar{n}"]))
            pn, sn, qn = {}, {}, {}
            for idx in _index_tuples(lat.d, n):
                tag = "_".join(map(str, idx))
                pn[idx] = SpectralField(lat, data[f"phi{n}_{tag}"])
                sn[idx] = SpectralField(lat, data[f"sigma{n}_{tag}"])
                qn[idx] = SpectralField(lat, data[f"q{n}_{tag}"])
            phi.append(pn)
            sigma.append(sn)
            q.append(qn)
    return CorrectorSet(medium, order, phi, sigma, q, abar)
