import numpy as np
import pytest

from descent.contour import evolution_curves
from descent.randomfeatures import RFParams, rf_functionals, rf_solve_state
from descent.selfconsistent import infinite_time_errors, solve_zeta
from descent.simulate import exact_flow_errors, sample_instance

BASE = RFParams(mu=0.5, nu=0.3, r=1.0, sigma=0.1, phi0=2.0, psi0=1.0, psi=0.25)


class TestState:
    def test_equation_residuals(self):
        for z in (-1e-3, -0.7, complex(1.5, 0.8), complex(-0.2, -2.0)):
            state = rf_solve_state(BASE, z)
            assert max(state.equation_residuals(BASE)) < 1e-11

    def test_mu_zero_decouples_delta(self):
        params = RFParams(mu=0.0, nu=0.6, r=1.0, sigma=0.2, phi0=2.0, psi0=1.0, psi=0.25)
        state = rf_solve_state(params, -0.5)
        assert state.delta_z == 1.0
        f1t, f2_x, c0 = rf_functionals(params, state, state)
        assert f2_x == pytest.approx(0.0, abs=1e-12)

    def test_conjugate_input_conjugate_state(self):
        up = rf_solve_state(BASE, complex(-0.4, 0.9))
        dn = rf_solve_state(BASE, complex(-0.4, -0.9))
        assert up.zeta.conjugate() == pytest.approx(dn.zeta, rel=1e-11)
        assert up.gamma_z.conjugate() == pytest.approx(dn.gamma_z, rel=1e-11)

    def test_matches_generic_solver(self):
        for z in (-1e-2, complex(0.3, 0.6)):
            joint = rf_solve_state(BASE, z)
            generic = solve_zeta(BASE, z)
            assert joint.zeta == pytest.approx(generic.zeta, rel=1e-9)

    def test_invalid_geometry_rejected(self):
        with pytest.raises(ValueError, match="noise block"):
            RFParams(mu=1.0, nu=0.0, r=1.0, sigma=0.1, phi0=1.0, psi0=3.0, psi=0.3)


class TestFunctionals:
    def test_kappa3_is_one(self):
        # the sigma^2 term enters f1_tilde additively with unit coefficient
        noisy = BASE
        clean = RFParams(mu=0.5, nu=0.3, r=1.0, sigma=0.0, phi0=2.0, psi0=1.0, psi=0.25)
        x, y = -0.3, -0.8
        sx_n, sy_n = rf_solve_state(noisy, x), rf_solve_state(noisy, y)
        sx_c, sy_c = rf_solve_state(clean, x), rf_solve_state(clean, y)
        f1_n, _, _ = rf_functionals(noisy, sx_n, sy_n)
        f1_c, _, _ = rf_functionals(clean, sx_c, sy_c)
        kappa2 = -(sy_n.zeta - sx_n.zeta) / (y - x)
        assert f1_n - f1_c == pytest.approx(kappa2 * noisy.sigma**2, rel=1e-10)

    def test_kappa2_symmetry(self):
        x, y = complex(-0.5, 0.4), complex(1.2, -0.7)
        sx, sy = rf_solve_state(BASE, x), rf_solve_state(BASE, y)
        f_xy, _, _ = rf_functionals(BASE, sx, sy)
        f_yx, _, _ = rf_functionals(BASE, sy, sx)
        assert f_xy == pytest.approx(f_yx, rel=1e-11)

    def test_coincident_limit_consistent(self):
        x = -0.02
        s = rf_solve_state(BASE, x)
        f_lim, _, _ = rf_functionals(BASE, s, s)
        s2 = rf_solve_state(BASE, x * (1 + 1e-4))
        f_near, _, _ = rf_functionals(BASE, s, s2)
        assert f_lim == pytest.approx(f_near, rel=1e-3)

    def test_c0(self):
        assert BASE.c0() == pytest.approx(1.01)

    def test_provider_grid_matches_scalar(self):
        zs = np.array([0.3 + 0.4j, -0.1 + 1.2j, 2.0 - 0.5j])
        zetas = np.array([solve_zeta(BASE, z).zeta for z in zs])
        a_grid, b_grid = BASE.f1_parts_grid(zetas, zetas)
        for i in range(3):
            for j in range(3):
                a, b = BASE.f1_parts(zetas[i], zetas[j])
                assert a_grid[i, j] == pytest.approx(a, rel=1e-9)
                assert b_grid[i, j] == pytest.approx(b, rel=1e-7)


class TestLimits:
    def test_feature_rich_limit_reaches_ridgeless(self):
        # psi0 -> infinity with (mu, nu) = (1, 0) collapses onto plain ridgeless
        for phi0, target in ((2.0, 0.5), (0.5, 1.0)):
            params = RFParams(mu=1.0, nu=0.0, r=1.0, sigma=0.5, phi0=phi0,
                              psi0=1e3, psi=0.5 / (1 + 1e3))
            got = infinite_time_errors(params, 1e-8).gen
            assert got == pytest.approx(target, rel=0.02)

    def test_curve_matches_simulation_smoke(self):
        lam, r0 = 1e-2, 1.0
        times = np.logspace(-1, 3, 8)
        theory = evolution_curves(BASE, lam, r0, times=times, nodes_per_side=200)
        gens = []
        trains = []
        for seed in range(3):
            inst = sample_instance(BASE, d=1200, seed=seed, lam=lam)
            traj = exact_flow_errors(inst, times, r0, seed_beta0=77 + seed)
            gens.append(traj.gen_errors)
            trains.append(traj.train_errors)
        gen_mc = np.mean(gens, axis=0)
        train_mc = np.mean(trains, axis=0)
        assert np.max(np.abs(gen_mc - theory.gen) / np.abs(gen_mc)) < 0.08
        assert np.max(np.abs(train_mc - theory.train) / np.maximum(train_mc, 0.05)) < 0.08
