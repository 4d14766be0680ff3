import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mildns.fields import (
    DATUM_KINDS,
    GridSpec,
    ScalarField,
    SpectralField,
    Trajectory,
    VelocityField,
    boundary_mass_fraction,
    divergence,
    from_spectral,
    gradient,
    leray_project,
    make_datum,
    max_divergence_ratio,
    random_datum,
    to_spectral,
)
from mildns.norms import lq_norm

from conftest import random_field

seeds = st.integers(0, 2**32 - 1)


class TestGridSpec:
    @pytest.mark.parametrize("n", [4, 12, 0, -8])
    def test_rejects_bad_sizes(self, n):
        with pytest.raises(ValueError):
            GridSpec(n, 1.0)

    @pytest.mark.parametrize("extent", [0.0, -1.0, math.inf, math.nan])
    def test_rejects_bad_extent(self, extent):
        with pytest.raises(ValueError):
            GridSpec(16, extent)

    @given(st.sampled_from([8, 16, 32, 64, 128]), st.floats(1e-3, 1e3))
    def test_spacing_times_n_is_extent(self, n, extent):
        g = GridSpec(n, extent)
        assert g.spacing * g.n == g.extent

    def test_origin_is_a_node(self, grid16):
        assert grid16.coordinates()[grid16.n // 2] == 0.0


class TestFieldValidation:
    def test_wrong_shape(self, grid16):
        with pytest.raises(ValueError, match="shape"):
            VelocityField(grid16, np.zeros((3, 8, 8, 8)))

    def test_nonfinite(self, grid16):
        s = np.zeros((3, 16, 16, 16))
        s[1, 2, 3, 4] = np.nan
        with pytest.raises(ValueError, match="non-finite"):
            VelocityField(grid16, s)
        with pytest.raises(ValueError):
            ScalarField(grid16, s[0] + np.inf)

    def test_samples_are_read_only(self, grid16):
        f = VelocityField.zeros(grid16)
        with pytest.raises(ValueError):
            f.samples[0, 0, 0, 0] = 1.0

    def test_trajectory_rejects_unsorted_times(self, grid16):
        s = np.zeros((2, 3, 16, 16, 16))
        with pytest.raises(ValueError):
            Trajectory(grid16, [0.2, 0.1], s)
        with pytest.raises(ValueError):
            Trajectory(grid16, [0.0, 0.1], s)


class TestTransform:
    def test_zero_field(self, grid16):
        assert not np.any(to_spectral(VelocityField.zeros(grid16)).coefficients)

    def test_single_mode_has_two_coefficients(self, grid16):
        x1, _, _ = grid16.mesh()
        s = np.zeros((3, 16, 16, 16))
        s[1] = np.sin(2 * np.pi * x1 / grid16.extent)
        c = to_spectral(VelocityField(grid16, s)).coefficients
        big = np.argwhere(np.abs(c) > 1e-12)
        assert len(big) == 2
        assert np.all(big[:, 0] == 1)
        (i, j) = [tuple(b[1:]) for b in big]
        assert np.isclose(c[(1,) + i], np.conj(c[(1,) + j]))

    @given(seeds)
    def test_round_trip(self, seed):
        g = GridSpec(16, 3.0)
        f = random_field(g, seed)
        back = from_spectral(to_spectral(f))
        assert np.max(np.abs(back.samples - f.samples)) <= 1e-12 * np.max(np.abs(f.samples))

    @given(seeds)
    def test_parseval(self, seed):
        g = GridSpec(16, 3.0)
        f = random_field(g, seed)
        phys = np.mean(f.samples**2)
        coef = np.sum(np.abs(to_spectral(f).coefficients) ** 2) / 1.0
        assert math.isclose(phys * 3, coef, rel_tol=1e-10)

    def test_non_hermitian_coefficients_rejected(self, grid16):
        c = np.zeros((3, 16, 16, 16), complex)
        c[0, 1, 0, 0] = 1.0
        with pytest.raises(ValueError, match="conjugate"):
            from_spectral(SpectralField(grid16, c))

    def test_nonfinite_rejected(self, grid16):
        c = np.zeros((3, 16, 16, 16), complex)
        c[0, 0, 0, 0] = np.nan
        with pytest.raises(ValueError):
            SpectralField(grid16, c)


class TestLeray:
    @given(seeds)
    def test_idempotent_and_solenoidal(self, seed):
        g = GridSpec(16, 2 * math.pi)
        f = random_field(g, seed)
        p = leray_project(f)
        pp = leray_project(p)
        assert np.max(np.abs(pp.samples - p.samples)) <= 1e-12 * np.max(np.abs(p.samples))
        assert max_divergence_ratio(p) <= 1e-10

    @given(seeds)
    def test_mean_preserved(self, seed):
        g = GridSpec(16, 2 * math.pi)
        f = random_field(g, seed)
        p = leray_project(f)
        assert np.allclose(p.samples.mean(axis=(1, 2, 3)), f.samples.mean(axis=(1, 2, 3)), atol=1e-14)

    def test_gradient_field_is_removed(self, grid16):
        x1, x2, x3 = grid16.mesh()
        phi = np.sin(x1) * np.cos(2 * x2) + np.sin(x3) ** 2
        grad = np.stack(np.broadcast_arrays(
            np.cos(x1) * np.cos(2 * x2),
            -2 * np.sin(x1) * np.sin(2 * x2),
            2 * np.sin(x3) * np.cos(x3),
        ))
        assert np.max(np.abs(leray_project(VelocityField(grid16, grad)).samples)) < 1e-12
        del phi

    def test_divergence_free_field_unchanged(self, grid16):
        f = make_datum("curl_gaussian", 0.1, grid16.extent / 16, grid16)
        again = leray_project(f)
        assert np.max(np.abs(again.samples - f.samples)) <= 1e-12 * np.max(np.abs(f.samples))

    def test_divergence_of_projected_random_field(self, grid32):
        f = leray_project(random_field(grid32, 7))
        d = divergence(f).samples
        assert np.max(np.abs(d)) <= 1e-10 * np.max(np.abs(f.samples)) / grid32.spacing


class TestDatum:
    @pytest.mark.parametrize("kind", DATUM_KINDS)
    def test_zero_amplitude(self, kind, grid16):
        f = make_datum(kind, 0.0, 0.3, grid16)
        assert not np.any(f.samples) and lq_norm(f, 3) == 0

    def test_dipole_is_solenoidal(self, grid32):
        f = make_datum("dipole", 0.1, grid32.extent / 32, grid32)
        assert max_divergence_ratio(f) <= 1e-10

    def test_curl_gaussian_norm_matches_amplitude(self):
        g = GridSpec(64, 2 * math.pi)
        f = make_datum("curl_gaussian", 0.2, g.extent / 16, g)
        assert math.isclose(lq_norm(f, 3), 0.2, rel_tol=1e-5)

    def test_scale_too_large(self, grid16):
        with pytest.raises(ValueError, match="scale too large"):
            make_datum("curl_gaussian", 0.1, grid16.extent / 4, grid16)

    def test_unknown_kind(self, grid16):
        with pytest.raises(ValueError, match="unknown datum kind"):
            make_datum("vortex_ring", 0.1, 0.3, grid16)

    def test_boundary_mass_is_small(self, grid32):
        f = make_datum("curl_gaussian", 0.1, grid32.extent / 16, grid32)
        assert boundary_mass_fraction(f) <= 1e-8

    def test_scaling_family_l3_converges(self):
        # ||U_lam||_3 = ||U_1||_3 in the continuum; the gap should shrink under refinement
        gaps = []
        for n in (32, 64, 128):
            g = GridSpec(n, 2 * math.pi)
            s = g.extent / 16
            a = lq_norm(make_datum("curl_gaussian", 0.1, s, g), 3)
            b = lq_norm(make_datum("curl_gaussian", 0.1, s, g, lam=2.0), 3)
            gaps.append(abs(a - b) / a)
        assert gaps[-1] <= 1e-4
        assert gaps[0] > gaps[1] > gaps[2]

    def test_rescaling_relation(self):
        g = GridSpec(64, 2 * math.pi)
        s = g.extent / 16
        u1 = make_datum("curl_gaussian", 0.1, s, g, lam=1.0)
        u2 = make_datum("curl_gaussian", 0.1, s, g, lam=2.0)
        # U_2(x) = 2 U_1(2x): node n/2 + k of U_2 pairs with node n/2 + 2k of U_1
        k = np.arange(-g.n // 8, g.n // 8)
        idx1, idx2 = g.n // 2 + 2 * k, g.n // 2 + k
        sub1 = u1.samples[:, idx1][:, :, idx1][:, :, :, idx1]
        sub2 = u2.samples[:, idx2][:, :, idx2][:, :, :, idx2]
        assert np.max(np.abs(sub2 - 2 * sub1)) <= 1e-8 * np.max(np.abs(u2.samples))

    @given(seeds)
    def test_random_datum_is_solenoidal(self, seed):
        g = GridSpec(32, 2 * math.pi)
        f = random_datum(g, np.random.default_rng(seed))
        assert max_divergence_ratio(f) <= 1e-10
        assert boundary_mass_fraction(f) <= 1e-8


def test_gradient_of_single_mode(grid16):
    x1, _, _ = grid16.mesh()
    s = np.zeros((3, 16, 16, 16))
    s[2] = np.sin(3 * x1) * np.ones((1, 16, 16))
    J = gradient(VelocityField(grid16, s))
    assert np.allclose(J[2, 0], 3 * np.cos(3 * x1) * np.ones((1, 16, 16)), atol=1e-12)
    assert np.allclose(J[2, 1], 0, atol=1e-12)
