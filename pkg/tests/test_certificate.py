import json
import math

import numpy as np
import pytest
from hypothesis import assume, example, given, strategies as st

from mildns.certificate import (
    Certificate,
    Constants,
    DatumNorms,
    criterion_from_norms,
    criterion_value,
    default_ladder,
    derive_constants,
    existence_time,
    global_margin,
    majorant,
    majorant_from_criterion,
    recursion_fixed_point,
    t_of_rho,
)
from mildns.fields import GridSpec, VelocityField, make_datum
from mildns.norms import localized_l3, lq_norm

CONST = derive_constants()


@pytest.fixture(scope="module")
def datum():
    g = GridSpec(32, 2 * math.pi)
    return make_datum("curl_gaussian", 0.05, g.extent / 16, g)


@pytest.fixture(scope="module")
def cert(datum):
    return existence_time(datum, CONST)


class TestConstants:
    def test_closed_form_gaussian_integrals(self):
        # (int ((4 pi)^-1.5 e^{-a y^2})^1.5 dy)^(2/3) = pi / (1.5 a (4 pi)^1.5)
        assert math.isclose(CONST.h0, 1 / (3 * math.sqrt(math.pi)), rel_tol=1e-10)
        assert math.isclose(CONST.h1, 2 / (3 * math.sqrt(math.pi)), rel_tol=1e-10)
        assert CONST.c1 == 1.0 and CONST.source == "derived"
        assert CONST.threshold == 0.25

    @pytest.mark.parametrize("kw", [dict(h0=0.0, h1=1.0), dict(h0=1.0, h1=-1.0), dict(h0=1.0, h1=1.0, c1=math.inf),
                                    dict(h0=1.0, h1=1.0, source="guessed")])
    def test_validation(self, kw):
        with pytest.raises(ValueError):
            Constants(**kw)


class TestRecursion:
    def test_examples(self):
        assert recursion_fixed_point(0.0, 1.0) == 0.0
        assert math.isclose(recursion_fixed_point(3 / 16, 1.0), 0.25, rel_tol=1e-15)
        assert recursion_fixed_point(0.25, 1.0) is None
        assert recursion_fixed_point(0.3, 1.0) is None

    def test_brute_force(self):
        root = recursion_fixed_point(0.2, 1.0)
        xi, worst = 0.2, 0.0
        for _ in range(10_000):
            xi = 0.2 + xi * xi
            worst = max(worst, xi)
        assert worst <= root + 1e-12
        assert math.isclose(worst, root, rel_tol=1e-9)

    @given(st.floats(1e-6, 1e3), st.floats(0, 0.999))
    @example(1e-6, 5e-324)
    def test_root_of_quadratic(self, c, frac):
        xi0 = frac / (4 * c)
        root = recursion_fixed_point(xi0, c)
        assert root is not None and root >= xi0
        assert abs(c * root * root - root + xi0) <= 1e-12 * max(root, 1e-300) + 1e-300
        assert root < 1 / (2 * c)

    def test_rejects_negative(self):
        with pytest.raises(ValueError):
            recursion_fixed_point(-1.0, 1.0)
        with pytest.raises(ValueError):
            recursion_fixed_point(0.1, 0.0)


class TestCriterion:
    def test_zero_datum(self):
        dn = DatumNorms(0.0, (0.5, 1.0), (0.0, 0.0))
        assert criterion_value(dn, CONST, 1.0, 10.0) == 0.0

    def test_small_t_limit(self, cert):
        dn = cert.datum_norms
        rho = dn.rhos[10]
        limit = (CONST.h0 + 1) * dn.localized_at(rho)
        assert criterion_value(dn, CONST, rho, 0.0) == limit
        # the sqrt(t)/rho term is 1e-10 * l3 here
        assert abs(criterion_value(dn, CONST, rho, 1e-20 * rho**2) - limit) <= 1e-9

    def test_double_evaluation(self, datum, cert):
        rho = cert.datum_norms.rhos[7]
        t = 0.01
        direct = (CONST.h0 + 1) * localized_l3(datum, rho) + (
            CONST.h1 * math.exp(-rho**2 / (8 * t)) + math.sqrt(t) / rho
        ) * lq_norm(datum, 3)
        assert abs(direct - criterion_value(cert.datum_norms, CONST, rho, t)) <= 1e-12

    @given(st.floats(1e-6, 10), st.floats(1e-6, 10), st.floats(0.01, 5), st.floats(0, 1))
    def test_increasing_in_t(self, t1, t2, rho, loc_frac):
        assume(t1 < t2)
        l3 = 0.3
        assert criterion_from_norms(loc_frac * l3, l3, CONST, rho, t1) < criterion_from_norms(loc_frac * l3, l3, CONST, rho, t2)

    def test_unknown_radius(self, cert):
        with pytest.raises(KeyError):
            criterion_value(cert.datum_norms, CONST, 0.123456, 1.0)


class TestTOfRho:
    def test_zero_datum_is_infinite(self):
        dn = DatumNorms(0.0, (1.0,), (0.0,))
        assert t_of_rho(dn, CONST, 1.0) == math.inf

    def test_violated_at_t0(self):
        loc = 0.25 / (CONST.h0 + 1)
        dn = DatumNorms(1.0, (1.0,), (loc,))
        assert t_of_rho(dn, CONST, 1.0) is None

    @given(st.floats(0.05, 0.2), st.floats(0.1, 3.0), st.floats(0.0, 0.9))
    def test_bisection_residual(self, l3, rho, loc_frac):
        loc = loc_frac * l3
        assume((CONST.h0 + 1) * loc < 0.24)
        dn = DatumNorms(l3, (rho,), (loc,))
        t = t_of_rho(dn, CONST, rho)
        assume(t is not None and math.isfinite(t))
        assert abs(criterion_value(dn, CONST, rho, t) - CONST.threshold) <= 1e-9

    def test_generic_datum(self, cert):
        for rho, t in zip(cert.rhos, cert.t_of_rho):
            if t is not None and math.isfinite(t):
                assert abs(cert.criterion(t, rho) - 0.25) <= 1e-9


class TestExistenceTime:
    def test_zero_datum(self):
        g = GridSpec(16, 1.0)
        c = existence_time(VelocityField.zeros(g), CONST)
        assert c.T == math.inf and c.global_flag and c.status == "criterion holds for all t"

    def test_T_is_table_max(self, cert):
        finite = [t for t in cert.t_of_rho if t is not None]
        assert cert.T == max(finite)
        assert cert.rho_star == cert.rhos[cert.t_of_rho.index(cert.T)]

    def test_majorant_table(self, cert):
        A = np.array(cert.A_values)
        assert np.all(np.diff(A) > 0)
        assert np.all(A < 1 / (2 * CONST.c1))
        for t, a in zip(cert.A_times, cert.A_values):
            assert t < cert.T
            B = cert.criterion(t)
            assert B < CONST.threshold
            assert abs(a - recursion_fixed_point(B, CONST.c1)) <= 1e-12
            assert abs(a - 2 * B / (1 + math.sqrt(1 - 4 * CONST.c1 * B))) <= 1e-12

    def test_larger_amplitude_shrinks_T(self):
        g = GridSpec(32, 2 * math.pi)
        Ts = [existence_time(make_datum("curl_gaussian", a, g.extent / 16, g), CONST).T for a in (0.15, 0.22, 0.3)]
        assert Ts[0] > Ts[1] > Ts[2] > 0

    def test_huge_c1_violates_everywhere(self, datum):
        c = existence_time(datum, derive_constants(1e9))
        assert c.T == 0.0 and c.rho_star is None
        assert c.status == "criterion violated at every radius"
        assert not c.global_flag

    def test_ladder_validation(self, datum):
        with pytest.raises(ValueError, match="at least"):
            existence_time(datum, CONST, np.geomspace(0.5, 1.0, 8))
        with pytest.raises(ValueError):
            existence_time(datum, CONST, np.geomspace(0.5, 10.0, 20))

    def test_refinement_around_interior_optimum(self):
        g = GridSpec(32, 2 * math.pi)
        u = make_datum("curl_gaussian", 0.22, g.extent / 16, g)
        plain = existence_time(u, CONST)
        fine = existence_time(u, CONST, refine=True)
        assert fine.T > plain.T and len(fine.rhos) > len(plain.rhos)
        assert fine.notes

    def test_json_round_trip(self, cert):
        back = Certificate.from_dict(json.loads(json.dumps(cert.to_dict())))
        assert back.T == cert.T and back.rho_star == cert.rho_star
        assert back.t_of_rho == cert.t_of_rho and back.datum_norms == cert.datum_norms

    def test_infinite_T_serializes(self):
        c = existence_time(VelocityField.zeros(GridSpec(16, 1.0)), CONST)
        d = json.loads(json.dumps(c.to_dict()))
        assert d["T"] == "inf" and Certificate.from_dict(d).T == math.inf

    def test_default_ladder(self):
        lad = default_ladder(0.1, 4.0)
        assert lad.size == 32 and lad[0] == pytest.approx(0.2) and lad[-1] == pytest.approx(2.0)


class TestScaling:
    def test_criterion_invariant_under_parabolic_rescaling(self):
        # U_2 on a half-size cube is the same sample array as U_1 scaled by 2,
        # so B(rho/2, t/4) for U_2 equals B(rho, t) for U_1 exactly
        big, small = GridSpec(64, 2 * math.pi), GridSpec(64, math.pi)
        s = big.extent / 16
        u1 = make_datum("curl_gaussian", 0.2, s, big)
        u2 = make_datum("curl_gaussian", 0.2, s, small, lam=2.0)
        for rho, t in [(0.5, 0.01), (1.0, 0.1), (2.0, 0.3)]:
            b1 = criterion_value(DatumNorms.from_field(u1, [rho]), CONST, rho, t)
            b2 = criterion_value(DatumNorms.from_field(u2, [rho / 2]), CONST, rho / 2, t / 4)
            assert math.isclose(b1, b2, rel_tol=1e-12)


def test_majorant_decreases_along_property_sequence():
    # t_p = 4^-p, rho_p = 2^(-p/2) p: sqrt(t_p)/rho_p -> 0 and rho_p^2/t_p -> inf,
    # so the time-dependent part of B vanishes and A falls toward the local floor
    g = GridSpec(64, 16.0)
    u = make_datum("curl_gaussian", 0.05, 1.0, g)
    A, excess = [], []
    for p in range(1, 7):
        t, rho = 4.0**-p, 2 ** (-p / 2) * p
        dn = DatumNorms.from_field(u, [rho])
        A.append(majorant(dn, CONST, rho, t))
        excess.append(A[-1] - majorant_from_criterion((CONST.h0 + 1) * dn.localized_at(rho), CONST.c1))
    assert all(b < a for a, b in zip(A, A[1:]))
    assert all(b < a for a, b in zip(excess, excess[1:]))
    assert excess[-1] < 0.05 * excess[0]


class TestGlobalMargin:
    def test_zero(self):
        assert global_margin(0.0, CONST) == 0.0

    @given(st.floats(1e-4, 1.0))
    def test_linear_in_l3(self, l3):
        assert math.isclose(global_margin(2 * l3, CONST), 2 * global_margin(l3, CONST), rel_tol=1e-12)

    def test_flag_matches_margin(self):
        g = GridSpec(32, 2 * math.pi)
        small = existence_time(make_datum("curl_gaussian", 0.05, g.extent / 16, g), CONST)
        large = existence_time(make_datum("curl_gaussian", 0.5, g.extent / 16, g), CONST)
        assert small.global_flag and not large.global_flag
