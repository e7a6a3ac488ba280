import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from homsym.cell import (
    cosine_medium_1d,
    identity_medium,
    laminate_medium_2d,
    make_coefficient_field,
)
from homsym.correctors import (
    compute_correctors,
    growth_report,
    homogenized_tensor,
    load_correctors,
    save_correctors,
    symmetrized_form,
)
from homsym.fourier import FrequencyLattice, divergence, gradient, to_grid


@pytest.fixture(scope="module")
def cosine_set():
    return compute_correctors(cosine_medium_1d(), 3)


@pytest.fixture(scope="module")
def laminate_set():
    return compute_correctors(laminate_medium_2d(M=16), 3)


class TestIdentityMedium:
    def test_zero_cascade(self):
        cs = compute_correctors(identity_medium(2, M=4), 3)
        for n in range(1, 4):
            assert all(f.norm() < 1e-12 for f in cs.phi[n].values())
            assert all(s.norm() < 1e-12 for s in cs.sigma[n].values())
        assert np.allclose(homogenized_tensor(cs, 1), np.eye(2), atol=1e-12)
        for n in (2, 3):
            assert np.max(np.abs(homogenized_tensor(cs, n))) < 1e-12

    def test_growth_report_identity(self):
        cs = compute_correctors(identity_medium(2, M=4), 2)
        rep = growth_report(cs)
        assert rep.abar[0] == pytest.approx(np.sqrt(2))
        assert rep.phi_sigma[1] < 1e-12
        assert rep.base == 0.0


class TestCosine1d:
    def test_phi1_closed_form(self, cosine_set):
        lat = cosine_set.medium.lattice
        x = lat.grid_points()[0]
        phi1 = to_grid(cosine_set.phi[1][(0,)]).real
        assert np.allclose(phi1, np.sin(2 * np.pi * x) / (4 * np.pi), atol=1e-10)

    def test_q1_vanishes(self, cosine_set):
        assert cosine_set.q[1][(0,)].norm() < 1e-10
        assert cosine_set.sigma[1][(0,)].norm() < 1e-10

    def test_phi2_prime_is_minus_phi1(self, cosine_set):
        dphi2 = gradient(cosine_set.phi[2][(0, 0)]).component(0)
        diff = dphi2 + cosine_set.phi[1][(0,)]
        assert diff.norm() < 1e-9

    def test_effective_orders(self, cosine_set):
        assert homogenized_tensor(cosine_set, 1)[0, 0] == pytest.approx(0.5, abs=1e-9)
        assert abs(homogenized_tensor(cosine_set, 2)[0, 0, 0]) < 1e-9
        assert abs(homogenized_tensor(cosine_set, 3)[0, 0, 0, 0]) < 1e-8

    def test_growth_norm_phi1(self, cosine_set):
        rep = growth_report(cosine_set)
        # ||phi^1|| = 1/(4 pi sqrt(2)) and sigma^1 = 0
        assert rep.phi_sigma[0] == pytest.approx(1 / (4 * np.pi * np.sqrt(2)), rel=1e-8)
        assert np.isfinite(rep.base)


class TestLaminate2d:
    def test_first_order_tensor(self, laminate_set):
        # oracle: harmonic mean along x1 (2/sqrt(3) inverse), arithmetic
        # mean along x2, computed here by quadrature
        t = np.linspace(0, 1, 4096, endpoint=False)
        prof = 1 + 0.5 * np.cos(2 * np.pi * t)
        harm = 1.0 / np.mean(1.0 / prof)
        arith = np.mean(prof)
        ab1 = homogenized_tensor(laminate_set, 1)
        assert ab1[0, 0] == pytest.approx(harm, abs=1e-9)
        assert ab1[1, 1] == pytest.approx(arith, abs=1e-9)
        assert ab1[0, 0] == pytest.approx(np.sqrt(3) / 2, abs=1e-9)
        assert abs(ab1[0, 1]) < 1e-10 and abs(ab1[1, 0]) < 1e-10

    def test_ellipticity_of_first_order(self, laminate_set):
        ab1 = homogenized_tensor(laminate_set, 1)
        sym = 0.5 * (ab1 + ab1.T)
        eig = np.linalg.eigvalsh(sym)
        lam = laminate_set.medium.lam
        assert eig[0] >= lam - 1e-10
        assert eig[-1] <= 1 / lam + 1e-10

    def test_flux_identities(self, laminate_set):
        for n in range(1, laminate_set.order + 1):
            for idx, qf in laminate_set.q[n].items():
                sig = laminate_set.sigma[n][idx]
                assert (divergence(sig) - qf).norm() < 1e-9
                assert abs(np.max(np.abs(qf.mean()))) < 1e-10
                # pointwise skew-symmetry
                assert np.allclose(
                    sig.coeffs, -np.swapaxes(sig.coeffs, 0, 1), atol=1e-12
                )

    def test_second_order_parity(self, laminate_set):
        # even-order symmetrized contraction vanishes for symmetric real media
        ab2 = homogenized_tensor(laminate_set, 2)
        for xi in ([1.0, 0.0], [0.0, 1.0], [0.7, -0.4]):
            _, scalar = symmetrized_form(ab2, xi)
            assert abs(scalar) < 1e-7


class TestSymmetrizedForm:
    def test_identity_first_order(self):
        mat, scalar = symmetrized_form(np.eye(3), [1.0, 2.0, 2.0])
        assert np.allclose(mat, np.eye(3))
        assert scalar == pytest.approx(9.0)

    def test_zero_tensor(self):
        mat, scalar = symmetrized_form(np.zeros((2, 2, 2)), [0.3, 0.4])
        assert np.allclose(mat, 0.0) and scalar == 0.0

    def test_1d_third_order(self):
        c = 0.37
        _, scalar = symmetrized_form(np.full((1, 1, 1, 1), c), [2.0])
        assert scalar == pytest.approx(c * 16.0)


class TestGuards:
    def test_order_cap(self):
        a = identity_medium(2, M=2)
        with pytest.raises(ValueError, match="cap"):
            compute_correctors(a, 7)

    def test_out_of_range_tensor(self, cosine_set):
        with pytest.raises(ValueError):
            homogenized_tensor(cosine_set, 9)


class TestOneDimensionalCollapse:
    @given(
        c1=st.floats(-0.4, 0.4),
        c2=st.floats(-0.2, 0.2),
        shift=st.floats(0.0, 1.0),
    )
    @settings(max_examples=8, deadline=None)
    def test_higher_orders_vanish(self, c1, c2, shift):
        lat = FrequencyLattice(1, 16)
        a = make_coefficient_field(
            lat,
            (
                "function",
                lambda x: 1.0
                + c1 * np.cos(2 * np.pi * (x[0] - shift))
                + c2 * np.sin(4 * np.pi * x[0]),
            ),
        )
        cs = compute_correctors(a, 3)
        for n in (2, 3):
            assert np.max(np.abs(homogenized_tensor(cs, n))) < 1e-8


class TestSerialization:
    def test_roundtrip(self, tmp_path, cosine_set):
        path = tmp_path / "correctors.npz"
        save_correctors(cosine_set, path)
        back = load_correctors(path)
        assert back.order == cosine_set.order
        assert back.medium.lam == pytest.approx(cosine_set.medium.lam)
        for n in range(1, cosine_set.order + 1):
            assert np.allclose(back.abar[n], cosine_set.abar[n])
            for idx in cosine_set.phi[n]:
                assert np.array_equal(
                    back.phi[n][idx].coeffs, cosine_set.phi[n][idx].coeffs
                )
                assert np.array_equal(
                    back.sigma[n][idx].coeffs, cosine_set.sigma[n][idx].coeffs
                )
