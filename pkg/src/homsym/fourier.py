"""Spectral algebra on the periodic cell.

Fields are stored as truncated Fourier series

    f(x) = sum_k c_k exp(i kappa_k . x),   kappa_k = (2 pi / period) k,

with integer modes k in [-M, M]^d and the centered coefficient layout
``coeffs[..., i1, ..., id]`` holding mode ``k_j = i_j - M``.  The mean of a
field is exactly ``c_0``.  Pointwise products are evaluated on an N-point
grid per dimension with N >= 3M + 1, which makes every retained mode of a
quadratic product alias-free.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.fft import next_fast_len

REALITY_RTOL = 1e-12

Multiplier = Callable[[np.ndarray], np.ndarray] | np.ndarray


class RankError(ValueError):
    """Operand tensor ranks do not match the requested operation."""


class SingularMultiplierError(ValueError):
    """A singular multiplier hit a mode carrying a nonzero coefficient."""


# ---------------------------------------------------------------------------
# lattice
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FrequencyLattice:
    """Mode set {k : |k_j| <= M} with an attached product grid of size N^d.

    ``period`` rescales the cell: wavevectors are (2 pi / period) k.  The
    default period 1 is the unit cell.  Mode enumeration is lexicographic
    in (k_1, ..., k_d); ``flatten`` order of the coefficient array follows it.
    """

    d: int
    M: int
    N: int = 0
    period: float = 1.0

    def __post_init__(self):
        if not 1 <= self.d <= 3:
            raise ValueError(f"dimension d={self.d} outside supported range 1..3")
        if self.M < 1:
            raise ValueError("mode bound M must be >= 1")
        if self.N == 0:
            # even default so the grid contains half-period points, where
            # smooth media typically attain the extremes certified downstream
            n = int(next_fast_len(3 * self.M + 1))
            while n % 2:
                n = int(next_fast_len(n + 1))
            object.__setattr__(self, "N", n)
        if self.N < 3 * self.M + 1:
            raise ValueError(
                f"grid size N={self.N} < 3M+1={3 * self.M + 1}: no dealiasing headroom"
            )
        if self.period <= 0:
            raise ValueError("period must be positive")

    @property
    def n_modes(self) -> int:
        return 2 * self.M + 1

    @property
    def mode_shape(self) -> tuple[int, ...]:
        return (self.n_modes,) * self.d

    @property
    def grid_shape(self) -> tuple[int, ...]:
        return (self.N,) * self.d

    def mode_range(self) -> np.ndarray:
        return np.arange(-self.M, self.M + 1)

    def wavevectors(self) -> np.ndarray:
        """Array of shape (d,) + mode_shape with kappa_j on entry j."""
        axes = np.meshgrid(*(self.mode_range(),) * self.d, indexing="ij")
        return (2.0 * np.pi / self.period) * np.stack(axes).astype(float)

    def grid_points(self) -> np.ndarray:
        """Sample points x_j = period * j / N, shape (d,) + grid_shape."""
        t = self.period * np.arange(self.N) / self.N
        return np.stack(np.meshgrid(*(t,) * self.d, indexing="ij"))

    def _embed_index(self) -> tuple[np.ndarray, ...]:
        idx = self.mode_range() % self.N
        return np.ix_(*(idx,) * self.d)

    def refine(self, dM: int = 2) -> "FrequencyLattice":
        return FrequencyLattice(self.d, self.M + dM, period=self.period)


# ---------------------------------------------------------------------------
# fields
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SpectralField:
    """Truncated Fourier series; rank 0 (scalar), 1 (vector) or 2 (matrix).

    Component axes lead, mode axes trail:  shape = (d,)*rank + (2M+1,)*d.
    ``is_real`` records Hermitian symmetry c_{-k} = conj(c_k); it is set by
    constructors and propagated (never silently assumed) by operations.
    """

    lattice: FrequencyLattice
    coeffs: np.ndarray
    is_real: bool = False

    def __post_init__(self):
        lat = self.lattice
        expect_tail = lat.mode_shape
        if self.coeffs.shape[-lat.d:] != expect_tail:
            raise ValueError(
                f"coefficient shape {self.coeffs.shape} does not end in {expect_tail}"
            )
        rank = self.coeffs.ndim - lat.d
        if rank not in (0, 1, 2) or self.coeffs.shape[: rank] != (lat.d,) * rank:
            raise ValueError(f"unsupported component shape {self.coeffs.shape[:rank]}")
        if self.coeffs.dtype != np.complex128:
            object.__setattr__(self, "coeffs", self.coeffs.astype(np.complex128))

    @property
    def rank(self) -> int:
        return self.coeffs.ndim - self.lattice.d

    @property
    def d(self) -> int:
        return self.lattice.d

    # -- constructors ------------------------------------------------------

    @classmethod
    def zeros(cls, lattice: FrequencyLattice, rank: int = 0,
              is_real: bool = True) -> "SpectralField":
        shape = (lattice.d,) * rank + lattice.mode_shape
        return cls(lattice, np.zeros(shape, dtype=np.complex128), is_real)

    @classmethod
    def constant(cls, lattice: FrequencyLattice, value) -> "SpectralField":
        value = np.asarray(value, dtype=np.complex128)
        rank = value.ndim
        out = cls.zeros(lattice, rank, is_real=bool(np.all(np.isreal(value))))
        out.coeffs[(...,) + (lattice.M,) * lattice.d] = value
        return out

    @classmethod
    def from_modes(cls, lattice: FrequencyLattice,
                   modes: Mapping[tuple[int, ...], complex | np.ndarray],
                   is_real: bool | None = None) -> "SpectralField":
        """Build a field from a {mode tuple: coefficient} mapping."""
        items = list(modes.items())
        rank = np.asarray(items[0][1]).ndim
        out = cls.zeros(lattice, rank, is_real=False)
        for k, c in items:
            if len(k) != lattice.d or any(abs(kj) > lattice.M for kj in k):
                raise ValueError(f"mode {k} outside lattice bound M={lattice.M}")
            pos = tuple(kj + lattice.M for kj in k)
            out.coeffs[(...,) + pos] = np.asarray(c, dtype=np.complex128)
        if is_real is None:
            is_real = _hermitian(out.coeffs, lattice.d)
        object.__setattr__(out, "is_real", bool(is_real))
        return out

    # -- basic queries -----------------------------------------------------

    def mean(self) -> complex | np.ndarray:
        val = self.coeffs[(...,) + (self.lattice.M,) * self.d]
        return complex(val) if self.rank == 0 else np.array(val)

    def norm(self) -> float:
        """L2(cell) norm with normalized cell measure (Parseval)."""
        return float(np.sqrt(np.sum(np.abs(self.coeffs) ** 2)))

    def sobolev_norm(self, s: float) -> float:
        """(sum_k (1+|kappa|^2)^s |c_k|^2)^(1/2)."""
        kk = self.lattice.wavevectors()
        w = (1.0 + np.sum(kk ** 2, axis=0)) ** s
        return float(np.sqrt(np.sum(w * np.abs(self.coeffs) ** 2)))

    def check_reality(self, rtol: float = REALITY_RTOL) -> bool:
        return _hermitian(self.coeffs, self.d, rtol)

    def conj_reflected(self) -> "SpectralField":
        """Field with coefficients conj(c_{-k}); equals self when real."""
        flipped = np.flip(np.conj(self.coeffs), axis=tuple(range(-self.d, 0)))
        return SpectralField(self.lattice, flipped, self.is_real)

    # -- arithmetic on the same lattice -------------------------------------

    def __add__(self, other: "SpectralField") -> "SpectralField":
        _check_same_lattice(self, other)
        return SpectralField(self.lattice, self.coeffs + other.coeffs,
                             self.is_real and other.is_real)

    def __sub__(self, other: "SpectralField") -> "SpectralField":
        _check_same_lattice(self, other)
        return SpectralField(self.lattice, self.coeffs - other.coeffs,
                             self.is_real and other.is_real)

    def __mul__(self, scalar) -> "SpectralField":
        scalar = complex(scalar)
        return SpectralField(self.lattice, self.coeffs * scalar,
                             self.is_real and scalar.imag == 0.0)

    __rmul__ = __mul__

    def __neg__(self) -> "SpectralField":
        return SpectralField(self.lattice, -self.coeffs, self.is_real)

    def component(self, *idx: int) -> "SpectralField":
        if len(idx) != self.rank:
            raise RankError(f"component index {idx} for rank-{self.rank} field")
        return SpectralField(self.lattice, self.coeffs[idx], self.is_real)


def _hermitian(coeffs: np.ndarray, d: int, rtol: float = REALITY_RTOL) -> bool:
    flipped = np.flip(np.conj(coeffs), axis=tuple(range(-d, 0)))
    scale = np.max(np.abs(coeffs))
    if scale == 0.0:
        return True
    return bool(np.max(np.abs(coeffs - flipped)) <= rtol * scale)


def _check_same_lattice(f: SpectralField, g: SpectralField):
    if f.lattice != g.lattice:
        raise ValueError("fields live on different lattices")


# ---------------------------------------------------------------------------
# transforms
# ---------------------------------------------------------------------------

def to_coefficients(samples: np.ndarray, lattice: FrequencyLattice,
                    is_real: bool | None = None) -> SpectralField:
    """Forward transform of grid samples (trailing axes = grid_shape)."""
    samples = np.asarray(samples)
    if samples.shape[-lattice.d:] != lattice.grid_shape:
        raise ValueError(
            f"grid shape {samples.shape[-lattice.d:]} does not match lattice "
            f"grid {lattice.grid_shape}"
        )
    axes = tuple(range(-lattice.d, 0))
    chat = np.fft.fftn(samples, axes=axes) / lattice.N ** lattice.d
    coeffs = chat[(...,) + lattice._embed_index()]
    if is_real is None:
        is_real = bool(np.isrealobj(samples))
    return SpectralField(lattice, np.ascontiguousarray(coeffs), is_real)


def to_grid(f: SpectralField, N: int | None = None) -> np.ndarray:
    """Inverse transform onto the N-point grid (complex array)."""
    lat = f.lattice
    N = lat.N if N is None else N
    if N < 2 * lat.M + 1:
        raise ValueError(f"target grid N={N} cannot hold modes up to M={lat.M}")
    shape = f.coeffs.shape[: f.rank] + (N,) * lat.d
    full = np.zeros(shape, dtype=np.complex128)
    idx = np.ix_(*(lat.mode_range() % N,) * lat.d)
    full[(...,) + idx] = f.coeffs
    axes = tuple(range(-lat.d, 0))
    out = np.fft.ifftn(full, axes=axes) * N ** lat.d
    return out


def to_grid_real(f: SpectralField, N: int | None = None) -> np.ndarray:
    if not f.is_real:
        raise ValueError("field is not flagged real")
    return to_grid(f, N).real


# ---------------------------------------------------------------------------
# multipliers and derivatives
# ---------------------------------------------------------------------------

def _multiplier_array(m: Multiplier, lattice: FrequencyLattice) -> np.ndarray:
    arr = m(lattice.wavevectors()) if callable(m) else np.asarray(m)
    if arr.shape[-lattice.d:] != lattice.mode_shape:
        raise ValueError("multiplier array does not match the mode grid")
    return arr


def apply_multiplier(f: SpectralField, m: Multiplier) -> SpectralField:
    """Scale coefficients c_k -> m(kappa_k) c_k.

    Singular multiplier values (inf/nan) are allowed only on modes whose
    coefficient is zero (up to 1e-14 of the field scale); the result carries
    zero there.  Reality is propagated iff m(-kappa) = conj(m(kappa)).
    """
    lat = f.lattice
    arr = _multiplier_array(m, lat)
    bad = ~np.isfinite(arr)
    if np.any(bad):
        scale = max(np.max(np.abs(f.coeffs)), 1.0)
        offending = np.abs(f.coeffs) > 1e-14 * scale
        # broadcast bad across component axes
        hit = offending & np.broadcast_to(bad, f.coeffs.shape)
        if np.any(hit):
            flat = np.argwhere(hit)[0]
            mode = tuple(int(i) - lat.M for i in flat[f.rank:])
            raise SingularMultiplierError(
                f"singular multiplier applied to nonzero coefficient at mode {mode}"
            )
        arr = np.where(bad, 0.0, arr)
    out = f.coeffs * arr
    real = f.is_real and _hermitian(np.asarray(arr, dtype=np.complex128), lat.d)
    return SpectralField(lat, out, real)


def gradient(f: SpectralField) -> SpectralField:
    """Scalar -> vector field with components d_j f (multiplier i kappa_j)."""
    if f.rank != 0:
        raise RankError("gradient expects a scalar field")
    kk = f.lattice.wavevectors()
    out = 1j * kk * f.coeffs[None]
    return SpectralField(f.lattice, out, f.is_real)


def divergence(f: SpectralField) -> SpectralField:
    """Vector -> scalar  sum_j d_j f_j;  matrix -> vector  (div Y)_i = d_j Y_ij."""
    kk = f.lattice.wavevectors()
    if f.rank == 1:
        out = np.sum(1j * kk * f.coeffs, axis=0)
    elif f.rank == 2:
        out = np.sum(1j * kk[None, :] * f.coeffs, axis=1)
    else:
        raise RankError("divergence expects a vector or matrix field")
    return SpectralField(f.lattice, out, f.is_real)


def curl_matrix(f: SpectralField) -> SpectralField:
    """Vector -> skew matrix  (curl X)_ij = d_i X_j - d_j X_i."""
    if f.rank != 1:
        raise RankError("curl expects a vector field")
    kk = f.lattice.wavevectors()
    gij = 1j * kk[:, None] * f.coeffs[None, :]
    return SpectralField(f.lattice, gij - np.swapaxes(gij, 0, 1), f.is_real)


def inverse_laplacian(f: SpectralField) -> SpectralField:
    """(-Laplace)^{-1} on mean-zero fields; rejects nonzero mean."""
    kk = f.lattice.wavevectors()
    k2 = np.sum(kk ** 2, axis=0)
    with np.errstate(divide="ignore"):
        m = np.where(k2 > 0.0, 1.0 / np.where(k2 > 0.0, k2, 1.0), np.inf)
    return apply_multiplier(f, m)


# ---------------------------------------------------------------------------
# pointwise (dealiased) products
# ---------------------------------------------------------------------------

_EINSUM = {
    (0, 0): "...,...->...",
    (0, 1): "...,j...->j...",
    (0, 2): "...,jk...->jk...",
    (1, 0): "j...,...->j...",
    (2, 0): "jk...,...->jk...",
    (2, 1): "jk...,k...->j...",
    (1, 1): None,  # ambiguous: use dot() for contraction
    (2, 2): None,
    (1, 2): None,
}


def pointwise_product(f: SpectralField, g: SpectralField) -> SpectralField:
    """Pointwise product with quadratic dealiasing.

    Supported rank pairs: scalar x any, any x scalar, matrix x vector
    (matrix-vector contraction per point).  Other pairs are rejected.
    """
    _check_same_lattice(f, g)
    spec = _EINSUM.get((f.rank, g.rank))
    if spec is None:
        raise RankError(f"unsupported product ranks ({f.rank}, {g.rank})")
    return _grid_product(f, g, spec)


def dot_product(f: SpectralField, g: SpectralField) -> SpectralField:
    """Pointwise contraction v . w of two vector fields (dealiased)."""
    _check_same_lattice(f, g)
    if f.rank != 1 or g.rank != 1:
        raise RankError("dot_product expects two vector fields")
    return _grid_product(f, g, "j...,j...->...")


def _grid_product(f: SpectralField, g: SpectralField, spec: str) -> SpectralField:
    lat = f.lattice
    fg = np.einsum(spec, to_grid(f), to_grid(g))
    out = to_coefficients(fg, lat, is_real=False)
    return SpectralField(lat, out.coeffs, f.is_real and g.is_real)


# ---------------------------------------------------------------------------
# inner products
# ---------------------------------------------------------------------------

def inner(f: SpectralField, g: SpectralField) -> complex:
    """L2(cell) inner product <f, g> = sum_k f_k conj(g_k) over components."""
    _check_same_lattice(f, g)
    if f.rank != g.rank:
        raise RankError("inner product requires equal ranks")
    return complex(np.sum(f.coeffs * np.conj(g.coeffs)))


def grid_l2_norm(samples: np.ndarray, d: int) -> float:
    """Mean-square grid norm matching the coefficient l2 norm (Parseval)."""
    n = np.prod(samples.shape[-d:])
    return float(np.sqrt(np.sum(np.abs(samples) ** 2) / n))
