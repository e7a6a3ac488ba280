import numpy as np
import pytest

from homsym.cell import (
    ConditioningWarning,
    EllipticityError,
    SolveOptions,
    SolverError,
    coefficient_from_modes,
    coefficient_from_samples,
    cosine_medium_1d,
    identity_medium,
    laminate_medium_2d,
    make_coefficient_field,
    solve_bloch,
    solve_cell,
)
from homsym.fourier import (
    FrequencyLattice,
    SpectralField,
    divergence,
    gradient,
    pointwise_product,
    to_grid,
)


class TestCoefficientField:
    def test_identity(self):
        a = identity_medium(2)
        assert a.lam == pytest.approx(1.0)
        assert a.upper == pytest.approx(1.0)
        assert a.symmetric

    def test_cosine_1d_lambda(self):
        a = cosine_medium_1d()
        assert a.lam == pytest.approx(1.0 / 3.0, rel=1e-9)
        assert a.upper == pytest.approx(1.0, rel=1e-9)

    def test_laminate_lambda(self):
        a = laminate_medium_2d(M=8)
        assert a.lam == pytest.approx(0.5, rel=1e-9)
        assert a.upper == pytest.approx(1.5, rel=1e-9)

    def test_ellipticity_violation_reports_point(self):
        lat = FrequencyLattice(1, 8)
        with pytest.raises(EllipticityError, match="grid point"):
            make_coefficient_field(
                lat, ("function", lambda x: np.cos(2 * np.pi * x[0]))
            )

    def test_nonsymmetric_flag(self):
        lat = FrequencyLattice(2, 4)
        a = coefficient_from_modes(
            lat, {(0, 0): np.array([[1.0, 0.2], [-0.2, 1.0]])}
        )
        assert not a.symmetric
        assert a.lam == pytest.approx(1.0)

    def test_from_samples_checkerboard(self):
        lat = FrequencyLattice(2, 8, N=28)
        cells = np.array([[1.0, 0.6], [0.6, 1.0]])
        a = coefficient_from_samples(lat, cells)
        # projection of a two-value checkerboard keeps the mean
        assert a.field.mean()[0, 0] == pytest.approx(0.8, abs=1e-12)
        assert 0 < a.lam <= 0.8

    def test_unknown_descriptor(self):
        lat = FrequencyLattice(1, 4)
        with pytest.raises(ValueError, match="descriptor"):
            make_coefficient_field(lat, ("mystery", None))


class TestSolveOptions:
    def test_tolerance_window(self):
        with pytest.raises(ValueError):
            SolveOptions(tol=1e-3)
        with pytest.raises(ValueError):
            SolveOptions(tol=0.0)


class TestSolveCell:
    def test_constant_coefficient_closed_form(self):
        # a = Id, d=1, g = sin(2 pi x) e1  ->  phi = cos(2 pi x)/(2 pi)
        a = identity_medium(1, M=8)
        lat = a.lattice
        g = SpectralField.from_modes(
            lat, {(1,): np.array([-0.5j]), (-1,): np.array([0.5j])}
        )
        sol = solve_cell(a, g)
        x = lat.grid_points()[0]
        expect = np.cos(2 * np.pi * x) / (2 * np.pi)
        assert np.allclose(to_grid(sol.phi).real, expect, atol=1e-11)
        assert abs(sol.phi.mean()) < 1e-13

    def test_first_corrector_against_first_integral(self):
        # oracle: in 1d the flux a (1 + phi') is constant, so the corrector
        # solving -d(a d phi) = d(a) is phi = sin(2 pi x)/(4 pi) for the
        # cosine medium
        a = cosine_medium_1d()
        lat = a.lattice
        e1 = SpectralField.constant(lat, np.array([1.0]))
        g = pointwise_product(a.field, e1)
        sol = solve_cell(a, g)
        x = lat.grid_points()[0]
        expect = np.sin(2 * np.pi * x) / (4 * np.pi)
        assert np.allclose(to_grid(sol.phi).real, expect, atol=1e-10)
        # flux constancy on the grid
        flux = a.grid_values[0, 0] * (1.0 + to_grid(gradient(sol.phi).component(0)).real)
        assert np.ptp(flux) < 1e-9

    def test_divergence_free_forcing(self):
        a = cosine_medium_1d(M=8)
        g = SpectralField.zeros(a.lattice, 1)
        sol = solve_cell(a, g)
        assert sol.phi.norm() == 0.0
        assert sol.iterations == 0

    def test_energy_bound(self):
        a = laminate_medium_2d(M=8)
        lat = a.lattice
        g = SpectralField.from_modes(
            lat,
            {
                (1, 0): np.array([0.25, 0.1]),
                (-1, 0): np.array([0.25, 0.1]),
                (0, 2): np.array([0.0, 0.5j]),
                (0, -2): np.array([0.0, -0.5j]),
            },
        )
        sol = solve_cell(a, g)
        grad_norm = gradient(sol.phi).norm()
        assert a.lam * grad_norm <= g.norm() * (1 + 1e-10)

    def test_refinement_invariance(self):
        a = cosine_medium_1d(M=24)
        lat = a.lattice
        e1 = SpectralField.constant(lat, np.array([1.0]))
        g = pointwise_product(a.field, e1)
        sol = solve_cell(a, g)

        a2 = cosine_medium_1d(M=26)
        e1b = SpectralField.constant(a2.lattice, np.array([1.0]))
        g2 = pointwise_product(a2.field, e1b)
        sol2 = solve_cell(a2, g2)
        common = sol2.phi.coeffs[2:-2]
        assert np.max(np.abs(common - sol.phi.coeffs)) < 2e-10

    def test_nonconvergence_error(self):
        a = cosine_medium_1d(M=8)
        lat = a.lattice
        e1 = SpectralField.constant(lat, np.array([1.0]))
        g = pointwise_product(a.field, e1)
        with pytest.raises(SolverError) as err:
            solve_cell(a, g, SolveOptions(tol=1e-12, maxiter=1))
        assert err.value.residual > 0


class TestSolveBloch:
    def test_identity_medium_constant_solution(self):
        a = identity_medium(2, M=6)
        xi = np.array([0.3, 0.2])
        e = np.array([1.0, 0.0])
        sol = solve_bloch(a, xi, e)
        expect = 1j * (xi @ e) / (xi @ xi)
        assert sol.mean == pytest.approx(expect, abs=1e-12)
        rest = sol.v.coeffs.copy()
        rest[(a.lattice.M,) * 2] = 0.0
        assert np.max(np.abs(rest)) < 1e-12

    def test_cosine_1d_mean_value(self):
        # oracle: integrating the first integral (D + i xi) v = -1/a over the
        # cell gives  mean(v) = -<1/a>/(i xi) = -2/(i xi)
        a = cosine_medium_1d()
        for xi in (0.3, 1.7, 5.9):
            sol = solve_bloch(a, [xi], [1.0])
            expect = -2.0 / (1j * xi)
            assert sol.mean == pytest.approx(expect, rel=1e-9)

    def test_laminate_reduces_to_1d(self):
        a2 = laminate_medium_2d(M=12)
        lat1 = FrequencyLattice(1, 12)
        a1 = make_coefficient_field(
            lat1, ("function", lambda x: 1.0 + 0.5 * np.cos(2 * np.pi * x[0]))
        )
        xi1 = 0.7
        sol2 = solve_bloch(a2, [xi1, 0.0], [1.0, 0.0])
        sol1 = solve_bloch(a1, [xi1], [1.0])
        assert sol2.mean == pytest.approx(sol1.mean, rel=1e-10)

    def test_shifted_coercivity(self):
        a = laminate_medium_2d(M=8)
        lat = a.lattice
        xi = np.array([0.4, 0.9])
        e = np.array([0.6, 0.8])
        sol = solve_bloch(a, xi, e)
        kk = lat.wavevectors() + xi.reshape(2, 1, 1)
        grad_shift = np.sqrt(np.sum(np.abs(1j * kk * sol.v.coeffs[None]) ** 2))
        pairing = abs(np.conj(sol.mean) * (1j * xi @ e))
        assert a.lam * grad_shift**2 <= pairing * (1 + 1e-9)

    def test_rejects_origin_and_boundary(self):
        a = identity_medium(1, M=4)
        with pytest.raises(ValueError):
            solve_bloch(a, [0.0], [1.0])
        with pytest.raises(ValueError):
            solve_bloch(a, [2 * np.pi], [1.0])

    def test_small_shift_warns(self):
        a = identity_medium(1, M=4)
        with pytest.warns(ConditioningWarning):
            solve_bloch(a, [1e-4], [1.0])
