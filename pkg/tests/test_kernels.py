import math
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate

from mildns import spectral
from mildns.diagnostics import oseen_ball_mean, oseen_bound_audit
from mildns.fields import GridSpec, Trajectory, VelocityField, leray_project, make_datum, max_divergence_ratio
from mildns.kernels import (
    PROJECTION_WARNINGS,
    TimeMesh,
    duhamel,
    heat_propagate,
    heat_trajectory,
    nonlinear_history,
    nonlinear_term,
    oseen_point_eval,
    pressure_solve,
)

from conftest import random_field

seeds = st.integers(0, 2**32 - 1)


def periodic_gaussian(grid, var, terms=3):
    """Separable periodic sum of ``exp(-|x|^2 / 2 var)``."""
    x = grid.coordinates()
    shifts = grid.extent * np.arange(-terms, terms + 1)
    g1 = np.exp(-((x[:, None] - shifts[None, :]) ** 2) / (2 * var)).sum(axis=1)
    return g1[:, None, None] * g1[None, :, None] * g1[None, None, :]


class TestTimeMesh:
    def test_graded_nodes(self):
        m = TimeMesh.graded(1.0, 16, 2.0)
        assert m.M == 16 and m.nodes[-1] == 1.0 and m.nodes[0] > 0
        assert np.all(np.diff(m.nodes) > 0)
        # clustered at both ends: first and last gaps equal and smaller than the middle gap
        gaps = np.diff(m.knots)
        assert math.isclose(gaps[0], gaps[-1], rel_tol=1e-12)
        assert gaps[0] < gaps[len(gaps) // 2]

    @pytest.mark.parametrize("nodes", [[0.1] * 8, list(range(1, 8)), [0.0] + list(range(1, 8))])
    def test_invalid_nodes(self, nodes):
        with pytest.raises(ValueError):
            TimeMesh(float(nodes[-1]), nodes)

    def test_gamma_below_one(self):
        with pytest.raises(ValueError):
            TimeMesh.graded(1.0, 16, 0.5)

    def test_refined_doubles(self):
        m = TimeMesh.graded(2.0, 16)
        r = m.refined()
        assert r.M == 32 and np.allclose(r.nodes[1::2], m.nodes, rtol=1e-14)


class TestHeat:
    def test_identity_at_zero(self, grid16):
        f = random_field(grid16, 1)
        assert np.array_equal(heat_propagate(f, 0.0).samples, f.samples)

    def test_negative_time(self, grid16):
        with pytest.raises(ValueError):
            heat_propagate(random_field(grid16, 1), -1e-3)

    def test_constant_field_unchanged(self, grid16):
        f = VelocityField(grid16, np.ones((3, 16, 16, 16)) * np.array([1.0, -2.0, 0.5])[:, None, None, None])
        assert np.allclose(heat_propagate(f, 3.7).samples, f.samples, rtol=0, atol=1e-14)

    @pytest.mark.parametrize("sigma, t", [(0.3, 0.01), (0.3, 0.2), (0.5, 1.0)])
    def test_gaussian_oracle(self, sigma, t):
        g = GridSpec(64, 2 * math.pi)
        s = np.zeros((3, 64, 64, 64))
        s[0] = periodic_gaussian(g, sigma**2)
        out = heat_propagate(VelocityField(g, s), t).samples[0]
        var = sigma**2 + 2 * t
        exact = (sigma**2 / var) ** 1.5 * periodic_gaussian(g, var)
        assert np.max(np.abs(out - exact)) / np.max(np.abs(exact)) <= 1e-6

    @given(seeds, st.floats(0, 2), st.floats(0, 2))
    def test_semigroup_and_mean(self, seed, s, t):
        g = GridSpec(16, 2 * math.pi)
        f = random_field(g, seed)
        two = heat_propagate(heat_propagate(f, s), t).samples
        one = heat_propagate(f, s + t).samples
        assert np.max(np.abs(two - one)) <= 1e-12 * np.max(np.abs(f.samples))
        assert np.allclose(one.mean(axis=(1, 2, 3)), f.samples.mean(axis=(1, 2, 3)), atol=1e-14)

    @given(seeds, st.floats(0, 1))
    def test_commutes_with_leray(self, seed, t):
        g = GridSpec(16, 2 * math.pi)
        f = random_field(g, seed)
        a = leray_project(heat_propagate(f, t)).samples
        b = heat_propagate(leray_project(f), t).samples
        assert np.max(np.abs(a - b)) <= 1e-12 * np.max(np.abs(f.samples))

    def test_trajectory_matches_pointwise(self, grid16):
        f = random_field(grid16, 2)
        mesh = TimeMesh.graded(0.5, 8)
        tr = heat_trajectory(f, mesh)
        assert np.array_equal(tr.initial, f.samples)
        assert np.allclose(tr.samples[3], heat_propagate(f, mesh.nodes[3]).samples, atol=1e-14)


class TestDuhamel:
    """Product integration is exact for forcing polynomial in time up to the stencil order."""

    @pytest.mark.parametrize("order, poly", [(1, (1.0, -2.0)), (2, (0.5, 1.0, -3.0))])
    @pytest.mark.parametrize("mode", [0, 1, 5])
    def test_polynomial_forcing_exact(self, order, poly, mode):
        g = GridSpec(16, 2 * math.pi)
        x1 = g.mesh()[0]
        base = np.zeros((3, 16, 16, 16))
        base[1] = np.cos(mode * x1) * np.ones((1, 16, 16))
        base_hat = spectral.rfft3(base)
        mesh = TimeMesh.graded(0.7, 12)
        knots = mesh.knots

        def p(s):
            return sum(c * s**k for k, c in enumerate(poly))

        out = duhamel(lambda i: p(knots[i]) * base_hat, g, mesh, order)
        lam = mode**2
        for j in (0, 5, 11):
            t = mesh.nodes[j]
            exact, _ = integrate.quad(lambda s: math.exp(-(t - s) * lam) * p(s), 0, t, epsabs=0, epsrel=1e-13)
            assert np.allclose(out[j], exact * base, rtol=0, atol=1e-12)

    def test_rejects_order(self, grid16):
        with pytest.raises(ValueError):
            duhamel(lambda i: None, grid16, TimeMesh.graded(1.0, 8), order=3)


class TestNonlinear:
    def test_zero_inputs(self, grid16):
        mesh = TimeMesh.graded(0.1, 8)
        z = heat_trajectory(VelocityField.zeros(grid16), mesh)
        a = heat_trajectory(leray_project(random_field(grid16, 4)), mesh)
        assert not np.any(nonlinear_history(z, z, mesh).samples)
        assert not np.any(nonlinear_history(a, z, mesh).samples)
        assert not np.any(nonlinear_term(z, a, mesh).samples)

    @given(seeds, st.floats(-3, 3))
    def test_bilinear(self, seed, c):
        g = GridSpec(16, 2 * math.pi)
        mesh = TimeMesh.graded(0.05, 8)
        a = heat_trajectory(random_field(g, seed, solenoidal=True), mesh)
        a2 = heat_trajectory(random_field(g, seed + 1, solenoidal=True), mesh)
        b = heat_trajectory(random_field(g, seed + 2, solenoidal=True), mesh)
        comb = Trajectory(g, mesh.nodes, a.samples + c * a2.samples, initial=a.initial + c * a2.initial)
        lhs = nonlinear_history(comb, b, mesh).samples
        rhs = nonlinear_history(a, b, mesh).samples + c * nonlinear_history(a2, b, mesh).samples
        assert np.max(np.abs(lhs - rhs)) <= 1e-12 * max(1.0, np.max(np.abs(rhs)))

    def test_output_is_solenoidal(self, grid32):
        mesh = TimeMesh.graded(0.05, 8)
        a = heat_trajectory(make_datum("curl_gaussian", 0.5, grid32.extent / 16, grid32), mesh)
        b = heat_trajectory(make_datum("dipole", 0.5, grid32.extent / 32, grid32, axis=(1, 0, 0)), mesh)
        N = nonlinear_history(a, b, mesh)
        assert max(max_divergence_ratio(N.at(j)) for j in range(mesh.M)) <= 1e-10

    def test_self_convergence(self, grid32):
        u0 = make_datum("curl_gaussian", 0.5, grid32.extent / 16, grid32)
        t = (grid32.extent / 16) ** 2
        finals = []
        for M in (8, 16, 32, 64):
            mesh = TimeMesh.graded(t, M)
            a = heat_trajectory(u0, mesh)
            finals.append(nonlinear_term(a, a, mesh).samples)
        d = [np.max(np.abs(finals[i + 1] - finals[i])) for i in range(3)]
        assert d[0] / d[1] >= 2 and d[1] / d[2] >= 2

    def test_history_mismatch(self, grid16):
        mesh = TimeMesh.graded(0.1, 8)
        other = TimeMesh.graded(0.2, 8)
        a = heat_trajectory(VelocityField.zeros(grid16), mesh)
        with pytest.raises(ValueError, match="nodes"):
            nonlinear_history(a, a, other)
        bare = Trajectory(grid16, mesh.nodes, a.samples)
        with pytest.raises(ValueError, match="t = 0"):
            nonlinear_history(bare, bare, mesh)

    def test_non_solenoidal_input_is_projected_with_warning(self, grid16):
        mesh = TimeMesh.graded(0.1, 8)
        raw = heat_trajectory(random_field(grid16, 9), mesh)
        clean = Trajectory(grid16, mesh.nodes, np.stack([leray_project(raw.at(j)).samples for j in range(8)]),
                           initial=leray_project(VelocityField(grid16, raw.initial)).samples)
        before = PROJECTION_WARNINGS.count
        with pytest.warns(RuntimeWarning, match="non-solenoidal"):
            N_raw = nonlinear_history(raw, raw, mesh)
        assert PROJECTION_WARNINGS.count > before
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            N_clean = nonlinear_history(clean, clean, mesh)
        assert np.allclose(N_raw.samples, N_clean.samples, atol=1e-12)


class TestPressure:
    def test_zero(self, grid16):
        assert not np.any(pressure_solve(VelocityField.zeros(grid16)).samples)

    def test_shear_has_no_pressure(self, grid16):
        x2 = grid16.mesh()[1]
        s = np.zeros((3, 16, 16, 16))
        s[0] = 0.7 * np.sin(2 * np.pi * x2 / grid16.extent) * np.ones((16, 1, 16))
        assert np.max(np.abs(pressure_solve(VelocityField(grid16, s)).samples)) < 1e-14

    def test_taylor_green_closed_form(self, grid16):
        x1, x2, _ = grid16.mesh()
        one = np.ones((16, 16, 16))
        s = np.stack([np.sin(x1) * np.cos(x2) * one, -np.cos(x1) * np.sin(x2) * one, 0 * one])
        p = pressure_solve(VelocityField(grid16, s)).samples
        exact = 0.25 * (np.cos(2 * x1) + np.cos(2 * x2)) * one
        assert np.max(np.abs(p - exact)) < 1e-13

    @given(seeds)
    def test_poisson_residual_and_homogeneity(self, seed):
        g = GridSpec(16, 2 * math.pi)
        u = random_field(g, seed, solenoidal=True)
        p = pressure_solve(u).samples
        wn = g.wavenumbers()
        lap_p = spectral.irfft3(-wn.kd2 * spectral.rfft3(p), g.n)
        flux = spectral.rfft3(u.samples[:, None] * u.samples[None, :])
        ddf = spectral.irfft3(-sum(wn.k[i] * wn.k[j] * flux[i, j] for i in range(3) for j in range(3)), g.n)
        scale = np.max(np.abs(ddf))
        assert np.max(np.abs(lap_p + ddf)) <= 1e-10 * scale
        assert abs(p.mean()) < 1e-12 * np.max(np.abs(p))
        p2 = pressure_solve(u.scaled(2.0)).samples
        assert np.max(np.abs(p2 - 4 * p)) <= 1e-12 * np.max(np.abs(p2))


class TestOseen:
    @given(st.floats(1e-3, 1e2), st.lists(st.floats(-5, 5), min_size=3, max_size=3))
    def test_symmetric(self, s, z):
        E = oseen_point_eval(s, z).value
        assert np.allclose(E, E.T, rtol=1e-12, atol=1e-15 * np.max(np.abs(E)))
        assert np.all(np.isfinite(E))

    @given(st.floats(1e-2, 10), st.lists(st.floats(-3, 3), min_size=3, max_size=3))
    def test_columns_divergence_free(self, s, z):
        # d_j E_ij = -d_i H + d_i Lap phi = 0 since Lap phi = H
        D = oseen_point_eval(s, z, h=1).value
        div = np.einsum("ijj->i", D)
        assert np.max(np.abs(div)) <= 1e-8 * max(np.max(np.abs(D)), 1e-300)

    def test_rejects_nonpositive_time(self):
        with pytest.raises(ValueError):
            oseen_point_eval(0.0, [1, 0, 0])
        with pytest.raises(ValueError):
            oseen_point_eval(1.0, [1, 0, 0], h=2)

    def test_series_and_radial_branches_agree(self):
        s = 1.0
        e = np.array([1.0, 2.0, -0.5]) / np.linalg.norm([1.0, 2.0, -0.5])
        for h in (0, 1):
            below = oseen_point_eval(s, e * (1 - 1e-9), h).value
            above = oseen_point_eval(s, e * (1 + 1e-9), h).value
            assert np.max(np.abs(below - above)) <= 1e-7 * np.max(np.abs(above))

    def test_far_field_is_pure_dipole(self):
        # for |z|^2 >> s the heat part vanishes and E -> D^2 of -1/(4 pi |z|)
        z = np.array([0.0, 30.0, 0.0])
        E = oseen_point_eval(1.0, z).value
        r = np.linalg.norm(z)
        e = z / r
        exact = (np.eye(3) - 3 * np.outer(e, e)) / (4 * np.pi * r**3)
        assert np.allclose(E, exact, rtol=1e-10, atol=0)

    @pytest.mark.parametrize("h", [0, 1])
    def test_decay_rates(self, h):
        report = oseen_bound_audit(h, seed=1, samples=100)
        assert abs(report.decay_slope - (-3 - h)) < 0.05
        assert abs(report.center_slope - (-1.5 - h)) < 0.05
        assert math.isfinite(report.constant) and report.constant > 0

    def test_gradient_has_zero_mean_over_ball(self):
        total, scale = oseen_ball_mean(1.0, 20.0, h=1, n_r=32, n_ang=16)
        assert np.max(np.abs(total)) <= 1e-3 * scale
