import numpy as np
import pytest

from descent.contour import (
    CurveResult,
    build_rectangle,
    contour_integral,
    estimate_spectrum_max,
    evolution_curves,
)
from descent.selfconsistent import infinite_time_errors
from descent.spectra import AtomSpectrum, nonisotropic_spectrum, ridgeless_spectrum

RIDGELESS = ridgeless_spectrum(1.0, 0.5, psi=0.5, phi=1.0)  # phi0 = 2


class TestRectangle:
    def test_axis_crossings(self):
        c = build_rectangle(4.0, 0.01, nodes_per_side=64)
        assert c.nodes[c.right_crossing_index()] == pytest.approx(4.8)
        assert c.nodes[c.left_crossing_index()] == pytest.approx(-0.005)

    def test_degenerate_spectrum_rule(self):
        c = build_rectangle(0.0, 1.0, nodes_per_side=64)
        assert c.nodes[c.right_crossing_index()] == pytest.approx(1.2)
        assert c.nodes[c.left_crossing_index()] == pytest.approx(-0.5)

    def test_closure(self):
        for nps in (64, 128, 400):
            c = build_rectangle(3.0, 0.05, nodes_per_side=nps)
            assert abs(c.weights.sum()) <= 1e-12

    def test_conjugate_symmetric_nodes(self):
        c = build_rectangle(2.0, 0.1, nodes_per_side=32)
        for j in range(len(c)):
            assert c.nodes[c.conj_index(j)] == pytest.approx(np.conj(c.nodes[j]), abs=1e-15)

    def test_too_few_nodes_rejected(self):
        with pytest.raises(ValueError):
            build_rectangle(1.0, 0.1, nodes_per_side=4)

    def test_lambda_zero_rejected(self):
        with pytest.raises(ValueError):
            build_rectangle(1.0, 0.0)


class TestContourIntegral:
    def test_residue_theorem(self):
        c = build_rectangle(4.0, 0.01, nodes_per_side=400)
        val = contour_integral(c, lambda z: 1.0 / (z - (0.3 + 0.1j)))
        assert abs(val - 2j * np.pi) < 1e-8

    def test_entire_integrand(self):
        c = build_rectangle(4.0, 0.01, nodes_per_side=400)
        assert abs(contour_integral(c, lambda z: z**2)) < 1e-10

    def test_eigenvalue_count(self):
        c = build_rectangle(4.0, 0.5, nodes_per_side=400)
        lams = [1.0, 2.0, 3.0]
        val = contour_integral(c, lambda z: sum(1.0 / (l - z) for l in lams))
        assert abs(val * (-1.0 / (2j * np.pi)) - 3.0) < 1e-8

    def test_nonfinite_integrand_reported(self):
        c = build_rectangle(1.0, 0.5, nodes_per_side=16)
        with pytest.raises(ArithmeticError, match="node"):
            contour_integral(c, lambda z: 1.0 / (z - z))


class TestSpectrumMax:
    def test_ridgeless_edge(self):
        smax = estimate_spectrum_max(RIDGELESS, 1e-3)
        # phi u = 2 atom: bulk edge of the student gram sits near 5.8
        assert 5.0 < smax < 9.0

    def test_all_u_zero(self):
        spec = AtomSpectrum(np.array([1.0]), np.array([0.0]), np.array([1.0]), 1.0)
        assert estimate_spectrum_max(spec, 1e-3) == 0.0


class TestEvolution:
    @pytest.fixture(scope="class")
    def curve(self):
        times = np.concatenate([[0.0], np.logspace(-1, 4, 25), [2e4]])
        return evolution_curves(RIDGELESS, 1e-3, 1.0, times=times, nodes_per_side=400)

    def test_t_zero_exact(self, curve):
        assert curve.b1[0] == 0.0
        assert curve.h1[0] == 0.0
        assert curve.b0[0] == pytest.approx(RIDGELESS.mean_u(), abs=1e-6)

    def test_component_assembly(self, curve):
        gen = RIDGELESS.c0() + curve.r0**2 * curve.b0 + curve.b1
        assert np.allclose(gen, curve.gen, rtol=0, atol=1e-14)

    def test_errors_nonnegative(self, curve):
        assert curve.gen.min() > -1e-8
        assert curve.train.min() > -1e-8

    def test_b0_nonincreasing(self, curve):
        assert (np.diff(curve.b0) <= 1e-6).all()

    def test_long_time_limits(self, curve):
        ref = infinite_time_errors(RIDGELESS, 1e-3)
        assert curve.gen[-1] == pytest.approx(ref.gen, abs=1e-3)
        assert curve.train[-1] / curve.gen[-1] == pytest.approx(ref.eta**2, abs=1e-3)

    def test_lambda_zero_rejected(self):
        with pytest.raises(ValueError, match="infinite_time_errors"):
            evolution_curves(RIDGELESS, 0.0, 1.0)

    def test_doubling_stability(self):
        times = np.logspace(-1, 3, 8)
        a = evolution_curves(RIDGELESS, 1e-2, 1.0, times=times, nodes_per_side=400)
        b = evolution_curves(RIDGELESS, 1e-2, 1.0, times=times, nodes_per_side=800)
        assert np.max(np.abs(a.gen - b.gen)) < 1e-6
        assert np.max(np.abs(a.train - b.train)) < 1e-6

    def test_multiple_descent_profile(self):
        # two-level spectrum keeps a visible intermediate plateau in time
        spec = nonisotropic_spectrum(2, 1e4, phi=0.45)
        times = np.concatenate([np.logspace(-2, 8, 40), [20.0 / 1e-7]])
        res = evolution_curves(spec, 1e-7, 1.0, times=times, nodes_per_side=400)
        assert res.gen.min() > -1e-8
        ref = infinite_time_errors(spec, 1e-7)
        assert res.gen[-1] == pytest.approx(ref.gen, rel=1e-3)


class TestCurveSerialization:
    def test_csv_header_and_roundtrip(self, tmp_path):
        times = np.logspace(-1, 1, 4)
        res = evolution_curves(RIDGELESS, 1e-2, 1.0, times=times, nodes_per_side=64)
        csv_path = tmp_path / "curve.csv"
        res.to_csv(csv_path)
        lines = csv_path.read_text().splitlines()
        assert lines[0] == "t,gen_error,train_error,B0,B1,H0,H1"
        assert len(lines) == 5
        json_path = tmp_path / "curve.json"
        res.to_json(json_path)
        back = CurveResult.from_json(json_path)
        assert np.array_equal(back.gen, res.gen)
        assert back.params == res.params
        assert back.lam == res.lam
