import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from homsym.cell import (
    SolveOptions,
    cosine_medium_1d,
    identity_medium,
    laminate_medium_2d,
)
from homsym.correctors import compute_correctors
from homsym.symbol import (
    BandViolationError,
    RayDeficiencyError,
    SymbolSample,
    compare_with_correctors,
    fit_symbol,
    fit_taylor_model,
    monomial_exponents,
    probe_consistency,
    ray_set,
    sample_on_rays,
    symbol_at,
    translation_average,
    write_symbol_csv,
    write_taylor_manifest,
)

TIGHT = SolveOptions(tol=1e-12)


@pytest.fixture(scope="module")
def cosine1d():
    return cosine_medium_1d()


@pytest.fixture(scope="module")
def laminate():
    return laminate_medium_2d(M=12)


class TestSymbolAt:
    def test_identity_is_squared_norm(self):
        a = identity_medium(2, M=4)
        for xi in ([0.3, 0.2], [1.5, -2.0], [0.0, 4.0]):
            s = symbol_at(a, xi, opts=TIGHT)
            assert s.value.real == pytest.approx(np.dot(xi, xi), rel=1e-12)
            assert abs(s.value.imag) < 1e-12

    def test_cosine_1d_exact_quadratic(self, cosine1d):
        s = symbol_at(cosine1d, [0.3], opts=TIGHT)
        assert s.value.real == pytest.approx(0.045, rel=1e-10)

    @given(xi=st.floats(0.05, 6.2))
    @settings(max_examples=12, deadline=None)
    def test_cosine_1d_exactness_across_shifts(self, cosine1d, xi):
        s = symbol_at(cosine1d, [xi], opts=TIGHT)
        assert s.value.real / xi**2 == pytest.approx(0.5, abs=1e-9)

    def test_laminate_1d_reduction(self, laminate):
        s = symbol_at(laminate, [0.3, 0.0], opts=TIGHT)
        assert s.value.real == pytest.approx(np.sqrt(3) / 2 * 0.09, rel=1e-9)

    def test_band_enforced(self, cosine1d):
        s = symbol_at(cosine1d, [1.0], opts=TIGHT)
        assert cosine1d.lam <= s.value.real <= cosine1d.upper * (1 + 1e-9)

    def test_orthogonal_probe_rejected(self):
        a = identity_medium(2, M=4)
        with pytest.raises(ValueError, match="orthogonal"):
            symbol_at(a, [0.5, 0.0], e=[0.0, 1.0])


class TestProbeConsistency:
    def test_identity_two_probes(self):
        a = identity_medium(2, M=4)
        dev = probe_consistency(
            a, [0.3, 0.2],
            probes=[[1.0, 0.0], [1 / np.sqrt(2), 1 / np.sqrt(2)]],
            opts=TIGHT,
        )
        assert dev < 1e-12

    def test_1d_single_probe(self, cosine1d):
        assert probe_consistency(cosine1d, [0.4], probes=[[1.0]]) == 0.0

    def test_laminate_cross_probes(self, laminate):
        dev = probe_consistency(
            laminate, [0.2, 0.2], probes=[[1.0, 0.0], [0.0, 1.0]], opts=TIGHT
        )
        assert dev < 1e-8


class TestTaylorFit:
    def _synthetic(self, fn, rays, radii):
        out = []
        for u in rays:
            for r in radii:
                xi = r * np.asarray(u)
                out.append(SymbolSample(xi, complex(fn(xi)), u, 0.0))
        return out

    def test_exact_quadratic_reproduction(self):
        rays = ray_set(2, 4)
        samples = self._synthetic(lambda x: x @ x, rays, (0.2, 0.1, 0.05))
        model = fit_taylor_model(samples, 4)
        assert np.allclose(model.quadratic_matrix(), np.eye(2), atol=1e-12)
        for al, c in zip(*model.coefficients[4]):
            assert abs(c) < 1e-12
        assert model.residual < 1e-12

    def test_quartic_monomial_recovery(self):
        rays = ray_set(2, 4)
        samples = self._synthetic(
            lambda x: x @ x + 0.1 * x[0] ** 4, rays, (0.2, 0.1, 0.05)
        )
        model = fit_taylor_model(samples, 4)
        exps, coef = model.coefficients[4]
        got = dict(zip(exps, coef))
        assert got[(4, 0)] == pytest.approx(0.1, abs=1e-10)
        for al in exps:
            if al != (4, 0):
                assert abs(got[al]) < 1e-10

    def test_cosine_1d_model(self, cosine1d):
        model, samples = fit_symbol(
            cosine1d, 6, radii=(2.0, 1.0, 0.5), opts=TIGHT
        )
        assert model.form(2, [1.0]) == pytest.approx(0.5, abs=1e-10)
        assert abs(model.form(4, [1.0])) < 1e-9
        assert abs(model.form(6, [1.0])) < 1e-9

    def test_ray_deficiency(self):
        samples = self._synthetic(
            lambda x: x @ x, [np.array([1.0, 0.0])], (0.2, 0.1, 0.05)
        )
        with pytest.raises(RayDeficiencyError, match="rays"):
            fit_taylor_model(samples, 4)

    def test_fit_stability_under_radius_halving(self, laminate):
        model1, _ = fit_symbol(laminate, 6, radii=(0.2, 0.1, 0.05),
                               extra_halvings=1, opts=TIGHT)
        model2, _ = fit_symbol(laminate, 6, radii=(0.1, 0.05, 0.025),
                               extra_halvings=1, opts=TIGHT)
        for deg in (2, 4):
            for u in ray_set(2, 2)[:4]:
                a1, a2 = model1.form(deg, u), model2.form(deg, u)
                if abs(a1) > 1e-8:
                    assert abs(a1 - a2) / abs(a1) < 1e-4

    def test_odd_degrees_vanish_diagnostically(self, laminate):
        # antipodal ray pairs separate odd from even parts; degree 6 is
        # included so the even tail of the symbol does not leak into the
        # odd columns
        rays = ray_set(2, 6)
        rays = rays + [-u for u in rays]
        samples = sample_on_rays(laminate, rays, (0.2, 0.1, 0.05), TIGHT)
        model = fit_taylor_model(samples, 6, include_odd=True)
        for deg in (3, 5):
            for al, c in zip(*model.coefficients[deg]):
                assert abs(c) < 1e-7


class TestCrossRoute:
    def test_identity_all_orders(self):
        a = identity_medium(2, M=4)
        cs = compute_correctors(a, 3)
        model, _ = fit_symbol(a, 4, opts=TIGHT)
        disc = compare_with_correctors(model, cs, 3)
        assert all(v < 1e-10 for v in disc.values())

    def test_cosine_1d_orders(self, cosine1d):
        cs = compute_correctors(cosine1d, 3, SolveOptions(tol=1e-11))
        model, _ = fit_symbol(cosine1d, 4, radii=(2.0, 1.0, 0.5), opts=TIGHT)
        disc = compare_with_correctors(model, cs, 3)
        assert disc[1] < 1e-9
        assert disc[2] < 1e-7
        assert disc[3] < 1e-7


class TestTranslationAverage:
    def test_identity_constant(self):
        a = identity_medium(1, M=5)
        xi, e = [0.7], [1.0]
        avg = translation_average(a, xi, e, Z=4, opts=TIGHT)
        assert avg == pytest.approx(1j * 0.7 / 0.49, rel=1e-11)

    def test_cosine_full_orbit(self, cosine1d):
        xi = 1.1
        avg = translation_average(cosine1d, [xi], [1.0], Z=cosine1d.lattice.N,
                                  opts=SolveOptions(tol=1e-11))
        assert avg == pytest.approx(-2.0 / (1j * xi), abs=1e-9)

    def test_laminate_shift_grid(self):
        a = laminate_medium_2d(M=8, amplitude=0.4)
        from homsym.cell import solve_bloch

        xi, e = np.array([0.5, 0.3]), np.array([1.0, 0.0])
        direct = solve_bloch(a, xi, e, SolveOptions(tol=1e-11)).mean
        avg = translation_average(a, xi, e, Z=4, opts=SolveOptions(tol=1e-11))
        assert avg == pytest.approx(direct, abs=1e-8)

    def test_grid_divisibility(self, cosine1d):
        with pytest.raises(ValueError, match="divide"):
            translation_average(cosine1d, [0.5], [1.0], Z=7)


class TestOutputs:
    def test_symbol_csv(self, tmp_path):
        a = identity_medium(2, M=4)
        samples = sample_on_rays(a, [np.array([1.0, 0.0])], (0.2, 0.1), TIGHT)
        path = tmp_path / "symbol.csv"
        write_symbol_csv(samples, path)
        lines = path.read_text().strip().split("\n")
        assert lines[0] == "xi_1,xi_2,re,im,residual"
        assert len(lines) == 3
        assert float(lines[1].split(",")[2]) == pytest.approx(0.04)

    def test_taylor_manifest(self, tmp_path):
        import json

        rays = ray_set(2, 4)
        samples = []
        for u in rays:
            for r in (0.2, 0.1, 0.05):
                xi = r * np.asarray(u)
                samples.append(SymbolSample(xi, complex(xi @ xi), u, 0.0))
        model = fit_taylor_model(samples, 4)
        path = tmp_path / "model.json"
        write_taylor_manifest(model, path)
        doc = json.loads(path.read_text())
        assert doc["max_degree"] == 4
        assert "2" in doc["coefficients"]


def test_monomial_counts():
    assert len(monomial_exponents(2, 4)) == 5
    assert len(monomial_exponents(3, 2)) == 6
    assert monomial_exponents(1, 6) == [(6,)]
