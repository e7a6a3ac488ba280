"""Random media on the discrete torus (Z/LZ)^d.

Sites carry iid matrix perturbations b(x) with |b(x)| <= 1, the medium is
a(x) = Id - delta b(x), and the discrete elliptic problem uses the forward
difference gradient  (grad u)_j(x) = u(x+e_j) - u(x)  and its adjoint
(backward) divergence  (div G)(x) = sum_j G_j(x) - G_j(x-e_j),  so that the
unperturbed operator -div(grad u) has the positive symbol

    |m(xi)|^2,    m_j(xi) = exp(i xi_j) - 1,

on the dual lattice xi in (2 pi / L) Z^d.  The averaged symbol at xi is
estimated by Monte Carlo over plane-wave solves and validated against exact
enumeration of all configurations on tiny tori.

Randomness is reproducible by construction: the draw at site x of sample s
is a pure function of (seed, s, x) - a Philox generator keyed by (seed, s)
fills the site array in lexicographic (row-major) site order, components
last.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass

import numpy as np
from scipy.sparse.linalg import LinearOperator, bicgstab, cg

from .cell import SolveOptions, SolverError, DEFAULT_OPTIONS

DISTRIBUTIONS = ("rademacher", "uniform", "diagonal")
ENUMERATION_GUARD = 2 ** 20


# ---------------------------------------------------------------------------
# fields and sampling
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RngSpec:
    """Master seed plus the documented stream derivation rule."""

    seed: int

    def generator(self, sample: int) -> np.random.Generator:
        return np.random.Generator(np.random.Philox(key=[self.seed, sample]))


@dataclass(frozen=True, eq=False)
class LatticeField:
    """Per-site d x d matrices on the torus, shape (L,)*d + (d, d)."""

    d: int
    L: int
    values: np.ndarray
    bound: float            # certified max spectral norm over sites

    @classmethod
    def from_values(cls, values: np.ndarray) -> "LatticeField":
        values = np.asarray(values, dtype=float)
        d = values.ndim - 2
        L = values.shape[0]
        if d < 1 or values.shape != (L,) * d + (d, d):
            raise ValueError(f"unexpected lattice field shape {values.shape}")
        sv = np.linalg.svd(values, compute_uv=False)
        return cls(d, L, values, float(sv[..., 0].max()))


def sample_field(distribution: str, d: int, L: int, sample: int,
                 rng: RngSpec) -> LatticeField:
    """Draw the iid perturbation field b for one sample.

    rademacher: b(x) = +-1 Id;  uniform: b(x) = U[-1,1] Id;
    diagonal:   b(x) = diag of d iid U[-1,1] entries.
    All draws satisfy |b(x)| <= 1.
    """
    if L < 2:
        raise ValueError("lattice side must be >= 2")
    if distribution not in DISTRIBUTIONS:
        raise ValueError(
            f"unknown distribution {distribution!r}; choose from {DISTRIBUTIONS}"
        )
    gen = rng.generator(sample)
    shape = (L,) * d
    eye = np.eye(d)
    if distribution == "rademacher":
        scal = 2.0 * gen.integers(0, 2, size=shape) - 1.0
        vals = scal[..., None, None] * eye
    elif distribution == "uniform":
        scal = gen.uniform(-1.0, 1.0, size=shape)
        vals = scal[..., None, None] * eye
    else:
        diag = gen.uniform(-1.0, 1.0, size=shape + (d,))
        vals = np.zeros(shape + (d, d))
        for j in range(d):
            vals[..., j, j] = diag[..., j]
    return LatticeField.from_values(vals)


def perturbed_medium(b: LatticeField, delta: float) -> LatticeField:
    """a = Id - delta b; requires |delta| < 1 to keep ellipticity (negative
    delta realizes the sign-flipped ensemble used by parity checks)."""
    if not -1.0 < delta < 1.0:
        raise ValueError(f"delta={delta} outside (-1, 1)")
    eye = np.eye(b.values.shape[-1])
    return LatticeField.from_values(eye - delta * b.values)


# ---------------------------------------------------------------------------
# discrete calculus
# ---------------------------------------------------------------------------

def forward_gradient(u: np.ndarray, d: int) -> np.ndarray:
    """(grad u)_j(x) = u(x + e_j) - u(x), shape (d,) + site shape."""
    return np.stack([np.roll(u, -1, axis=j) - u for j in range(d)])


def backward_divergence(G: np.ndarray) -> np.ndarray:
    """(div G)(x) = sum_j G_j(x) - G_j(x - e_j)."""
    d = G.shape[0]
    return sum(G[j] - np.roll(G[j], 1, axis=j) for j in range(d))


def dual_symbols(d: int, L: int) -> np.ndarray:
    """m_j(xi) = exp(i xi_j) - 1 on the FFT grid, shape (d,) + (L,)*d."""
    xi1 = 2.0 * np.pi * np.fft.fftfreq(L)
    axes = np.meshgrid(*(xi1,) * d, indexing="ij")
    return np.exp(1j * np.stack(axes)) - 1.0


def laplace_symbol(d: int, L: int) -> np.ndarray:
    m = dual_symbols(d, L)
    return np.sum(np.abs(m) ** 2, axis=0)


def dual_vector(d: int, L: int, xi_index) -> np.ndarray:
    xi_index = np.asarray(xi_index, dtype=int).reshape(d)
    if np.all(xi_index % L == 0):
        raise ValueError("xi must be a nonzero dual-lattice vector")
    return 2.0 * np.pi * xi_index / L


def plane_wave(d: int, L: int, xi: np.ndarray, e: np.ndarray) -> np.ndarray:
    """Vector field e exp(i xi . x), shape (d,) + (L,)*d."""
    coords = np.meshgrid(*(np.arange(L),) * d, indexing="ij")
    phase = np.exp(1j * sum(xi[j] * coords[j] for j in range(d)))
    return e.reshape((d,) + (1,) * d) * phase


def mode_amplitude(u: np.ndarray, xi: np.ndarray) -> complex:
    """DFT coefficient (1/L^d) sum_x u(x) exp(-i xi . x)."""
    d = u.ndim
    L = u.shape[0]
    coords = np.meshgrid(*(np.arange(L),) * d, indexing="ij")
    phase = np.exp(-1j * sum(xi[j] * coords[j] for j in range(d)))
    return complex(np.sum(u * phase) / L ** d)


# ---------------------------------------------------------------------------
# discrete solve
# ---------------------------------------------------------------------------

def solve_discrete(a: LatticeField, f: np.ndarray,
                   opts: SolveOptions = DEFAULT_OPTIONS) -> np.ndarray:
    """Solve -div(a grad u) = div f on the torus, mean(u) = 0.

    Krylov iteration with the exact FFT inverse of the unperturbed operator
    as preconditioner.  f has shape (d,) + (L,)*d.
    """
    d, L = a.d, a.L
    if f.shape != (d,) + (L,) * d:
        raise ValueError(f"forcing shape {f.shape} does not match the torus")
    b = backward_divergence(np.asarray(f, dtype=complex))
    b = b - b.mean()
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros((L,) * d, dtype=complex)
    sym = laplace_symbol(d, L)
    inv_sym = np.zeros_like(sym)
    inv_sym[sym > 0] = 1.0 / sym[sym > 0]
    av = a.values

    def apply(u: np.ndarray) -> np.ndarray:
        grad = forward_gradient(u, d)
        flux = np.einsum("...jk,k...->j...", av, grad)
        return -backward_divergence(flux)

    def precond(r: np.ndarray) -> np.ndarray:
        return np.fft.ifftn(np.fft.fftn(r) * inv_sym)

    shape = (L,) * d
    n = b.size
    A = LinearOperator((n, n), matvec=lambda v: apply(v.reshape(shape)).ravel(),
                       dtype=np.complex128)
    M = LinearOperator((n, n), matvec=lambda v: precond(v.reshape(shape)).ravel(),
                       dtype=np.complex128)
    symmetric = bool(
        np.max(np.abs(av - np.swapaxes(av, -1, -2))) <= 1e-12
    )
    solver = cg if symmetric else bicgstab
    x, _ = solver(A, b.ravel(), rtol=0.2 * opts.tol, atol=0.0,
                  maxiter=opts.maxiter, M=M)
    u = x.reshape(shape)
    res = float(np.linalg.norm(apply(u) - b) / bnorm)
    if res > opts.tol:
        raise SolverError("discrete solve did not converge", res)
    return u - u.mean()


# ---------------------------------------------------------------------------
# symbol estimation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MCEstimate:
    """Monte Carlo estimate of the averaged symbol at one (xi, delta)."""

    value: complex
    stderr: float
    n: int
    xi: np.ndarray
    delta: float
    amplitude_mean: complex
    amplitude_stderr: float
    cross_mode: float        # max |mean amplitude| over off-modes (diagnostic)


def _probe_direction(d: int, xi: np.ndarray) -> np.ndarray:
    m = np.exp(1j * xi) - 1.0
    return np.eye(d)[int(np.argmax(np.abs(m)))]


def _forcing_coefficient(xi: np.ndarray, e: np.ndarray) -> complex:
    m = np.exp(1j * xi) - 1.0
    return complex(-np.conj(m) @ e)


def estimate_symbol(distribution: str, d: int, L: int, delta: float,
                    xi_index, n_samples: int, rng: RngSpec,
                    opts: SolveOptions = DEFAULT_OPTIONS,
                    e=None, min_samples: int = 2) -> MCEstimate:
    """Monte Carlo estimate of the averaged symbol at xi = 2 pi xi_index / L.

    Per sample: solve with plane-wave forcing, extract the xi-mode amplitude
    of u, average, and divide the forcing coefficient by the mean amplitude.
    The standard error is propagated from the amplitude spread; the mean
    amplitude at a handful of other modes is reported as the cross-mode
    contamination diagnostic (zero in expectation by shift invariance).
    """
    if n_samples < min_samples:
        raise ValueError(f"need at least {min_samples} samples")
    xi = dual_vector(d, L, xi_index)
    e = _probe_direction(d, xi) if e is None else np.asarray(e, dtype=float)
    f = plane_wave(d, L, xi, e)
    g = _forcing_coefficient(xi, e)
    others = _off_modes(d, L, np.asarray(xi_index))
    amps = np.empty(n_samples, dtype=complex)
    off = np.zeros((len(others), n_samples), dtype=complex)
    for s in range(n_samples):
        b = sample_field(distribution, d, L, s, rng)
        u = solve_discrete(perturbed_medium(b, delta), f, opts)
        amps[s] = mode_amplitude(u, xi)
        for j, oxi in enumerate(others):
            off[j, s] = mode_amplitude(u, oxi)
    amp_mean = complex(np.mean(amps))
    amp_std = float(np.std(amps, ddof=1)) if n_samples > 1 else 0.0
    amp_se = amp_std / np.sqrt(n_samples)
    value = g / amp_mean
    stderr = abs(value) * amp_se / abs(amp_mean)
    cross = float(np.max(np.abs(off.mean(axis=1)))) if others else 0.0
    return MCEstimate(value, stderr, n_samples, xi, delta,
                      amp_mean, amp_se, cross)


def _off_modes(d: int, L: int, xi_index: np.ndarray) -> list[np.ndarray]:
    out = []
    for shift in itertools.islice(
        itertools.product(range(L), repeat=d), 0, None
    ):
        idx = np.array(shift)
        if np.all(idx % L == 0) or np.all((idx - xi_index) % L == 0):
            continue
        out.append(2.0 * np.pi * idx / L)
        if len(out) == 3:
            break
    return out


def enumerate_exact(d: int, L: int, delta: float, xi_index,
                    values: tuple[float, float] = (-1.0, 1.0),
                    probs: tuple[float, float] = (0.5, 0.5),
                    opts: SolveOptions = DEFAULT_OPTIONS, e=None) -> complex:
    """Exact averaged symbol for a scalar two-point site distribution.

    Enumerates every configuration on the torus with its probability (guard:
    at most 2^20 states) and averages the plane-wave amplitudes exactly.
    """
    n_sites = L ** d
    if 2 ** n_sites > ENUMERATION_GUARD:
        raise ValueError(
            f"2^{n_sites} configurations exceed the enumeration guard"
        )
    xi = dual_vector(d, L, xi_index)
    e = _probe_direction(d, xi) if e is None else np.asarray(e, dtype=float)
    f = plane_wave(d, L, xi, e)
    g = _forcing_coefficient(xi, e)
    eye = np.eye(d)
    total = 0.0 + 0.0j
    for bits in itertools.product((0, 1), repeat=n_sites):
        scal = np.array([values[t] for t in bits]).reshape((L,) * d)
        weight = float(np.prod([probs[t] for t in bits]))
        med = LatticeField.from_values(
            eye - delta * scal[..., None, None] * eye
        )
        u = solve_discrete(med, f, opts)
        total += weight * mode_amplitude(u, xi)
    return complex(g / total)


# ---------------------------------------------------------------------------
# discrete correctors and periodization
# ---------------------------------------------------------------------------

MAX_DISCRETE_ORDER = 3

Index = tuple[int, ...]


@dataclass(frozen=True, eq=False)
class DiscreteCorrectorSet:
    medium: LatticeField
    order: int
    phi: list[dict[Index, np.ndarray]]
    sigma: list[dict[Index, np.ndarray]]
    q: list[dict[Index, np.ndarray] | None]
    abar: list[np.ndarray | None]


def discrete_correctors(a: LatticeField, order: int,
                        opts: SolveOptions = DEFAULT_OPTIONS
                        ) -> DiscreteCorrectorSet:
    """Lattice transcription of the corrector recursion with forward
    gradients; sigma solves invert the discrete Laplacian exactly in the
    discrete Fourier basis."""
    if not 1 <= order <= MAX_DISCRETE_ORDER:
        raise ValueError(f"order must be in 1..{MAX_DISCRETE_ORDER}")
    d, L = a.d, a.L
    av = a.values
    m = dual_symbols(d, L)
    sym = np.sum(np.abs(m) ** 2, axis=0)
    inv_sym = np.zeros_like(sym)
    inv_sym[sym > 0] = 1.0 / sym[sym > 0]

    phi: list[dict[Index, np.ndarray]] = [
        {(): np.ones((L,) * d, dtype=complex)}
    ]
    sigma: list[dict[Index, np.ndarray]] = [
        {(): np.zeros((d, d) + (L,) * d, dtype=complex)}
    ]
    q: list[dict[Index, np.ndarray] | None] = [None]
    abar: list[np.ndarray | None] = [None]

    for n in range(1, order + 1):
        phi_n, sig_n, q_n = {}, {}, {}
        ab_n = np.zeros((d,) * (n - 1) + (d, d))
        for idx in itertools.product(range(d), repeat=n):
            prev, j = idx[:-1], idx[-1]
            # (a phi^{n-1} - sigma^{n-1}) e_j, exact site-wise products
            g = av[..., :, j].copy().astype(complex)
            g = np.moveaxis(g, -1, 0) * phi[n - 1][prev][None]
            g = g - sigma[n - 1][prev][:, j]
            u = solve_discrete(a, g, opts)
            phi_n[idx] = u
            grad = forward_gradient(u, d)
            flux = np.einsum("...jk,k...->j...", av, grad) + g
            col = flux.reshape(d, -1).mean(axis=1)
            if np.max(np.abs(col.imag)) > 1e-9:
                raise SolverError("effective column has imaginary residue",
                                  float(np.max(np.abs(col.imag))))
            ab_n[prev + (slice(None), j)] = col.real
            qf = flux - col.reshape((d,) + (1,) * d)
            q_n[idx] = qf
            # sigma_pq = (m_p qhat_q - m_q qhat_p)/|m|^2
            qhat = np.fft.fftn(qf, axes=tuple(range(1, d + 1)))
            cross = m[:, None] * qhat[None, :] - m[None, :] * qhat[:, None]
            sig = np.fft.ifftn(cross * inv_sym,
                               axes=tuple(range(2, d + 2)))
            div_sig = np.stack([
                backward_divergence(sig[p]) for p in range(d)
            ])
            if np.linalg.norm(div_sig - qf) / max(np.linalg.norm(qf), 1.0) > 1e-8:
                raise SolverError(
                    f"discrete flux potential identity failed at {idx}",
                    float(np.linalg.norm(div_sig - qf)),
                )
            sig_n[idx] = sig
        phi.append(phi_n)
        sigma.append(sig_n)
        q.append(q_n)
        abar.append(ab_n)
    return DiscreteCorrectorSet(a, order, phi, sigma, q, abar)


@dataclass(frozen=True)
class PeriodizationRow:
    L: int
    mean: np.ndarray        # E[abar_L^n], shape (d,)*(n-1) + (d, d)
    stderr: np.ndarray
    n_samples: int


def periodization_experiment(distribution: str, d: int, delta: float,
                             L_list, order: int, n_samples: int,
                             rng: RngSpec,
                             opts: SolveOptions = DEFAULT_OPTIONS
                             ) -> list[PeriodizationRow]:
    """Monte Carlo means of the periodized effective tensors against L.

    Emits the trend table only; no limit value is asserted.
    """
    if order > 2:
        raise ValueError("periodization experiment is limited to order <= 2")
    rows = []
    for L in L_list:
        acc = []
        for s in range(n_samples):
            b = sample_field(distribution, d, int(L), s, rng)
            med = perturbed_medium(b, delta)
            cs = discrete_correctors(med, order, opts)
            acc.append(cs.abar[order])
        acc = np.array(acc)
        mean = acc.mean(axis=0)
        stderr = acc.std(axis=0, ddof=1) / np.sqrt(n_samples)
        rows.append(PeriodizationRow(int(L), mean, stderr, n_samples))
    return rows


# ---------------------------------------------------------------------------
# table output
# ---------------------------------------------------------------------------

def write_mc_csv(estimates: list[MCEstimate], d: int, L: int, path) -> None:
    """Columns: d, L, delta, xi_1..xi_d, re, im, stderr, n."""
    header = ["d", "L", "delta"] + [f"xi_{j + 1}" for j in range(d)]
    header += ["re", "im", "stderr", "n"]
    lines = [",".join(header)]
    for est in estimates:
        row = [str(d), str(L), f"{est.delta:.6g}"]
        row += [f"{x:.12e}" for x in est.xi]
        row += [f"{est.value.real:.12e}", f"{est.value.imag:.12e}",
                f"{est.stderr:.6e}", str(est.n)]
        lines.append(",".join(row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_enumeration_fixtures(path) -> dict:
    with open(path) as fh:
        return json.load(fh)
