import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from warpreg.warp import (
    WarpSpec,
    fc_slopes,
    fc_slopes_jacobian,
    hermite_basis,
    hermite_h,
    identity_warp,
    jupp,
    jupp_inv,
    jupp_inv_jacobian,
    make_warp,
    warp_deriv,
    warp_eval,
    warp_invert,
)

SPEC1 = WarpSpec(domain=(0.0, 1.0), knots=(0.5,))
SPEC2 = WarpSpec(domain=(0.0, 1.0), knots=(0.3, 0.6))


def random_warp(rng, spec, scale=1.0):
    return make_warp(spec, jupp_inv(spec, rng.normal(0, scale, size=spec.r)))


class TestHermite:
    def test_shape_values_at_ends(self):
        assert hermite_h(0.0) == (1.0, 0.0)
        assert hermite_h(1.0) == (0.0, 0.0)

    def test_half(self):
        h00, h10 = hermite_h(0.5)
        assert h00 == pytest.approx(0.5)
        assert h10 == pytest.approx(0.125)

    def test_cardinal_interpolation(self):
        nodes = SPEC2.grid
        for j in range(SPEC2.r + 2):
            for k, s in enumerate(nodes):
                a, b = hermite_basis(SPEC2, j, s)
                assert a == pytest.approx(1.0 if k == j else 0.0)
                assert b == pytest.approx(0.0)

    def test_middle_branch(self):
        a, _ = hermite_basis(SPEC1, 1, 0.25)
        assert a == pytest.approx(0.5)  # h00(0.5) on the ascending branch

    def test_expansion_matches_eval(self):
        rng = np.random.default_rng(2)
        w = random_warp(rng, SPEC2)
        s = np.linspace(0, 1, 97)
        ext = np.concatenate([[0.0], w.values, [1.0]])
        total = np.zeros_like(s)
        for j in range(SPEC2.r + 2):
            a, b = hermite_basis(SPEC2, j, s)
            total += ext[j] * a + w.slopes[j] * b
        np.testing.assert_allclose(total, warp_eval(w, s), atol=1e-12)


class TestSlopes:
    def test_identity_values_give_unit_slopes(self):
        np.testing.assert_allclose(fc_slopes(SPEC2, np.array(SPEC2.knots)), 1.0)

    def test_monotone_on_grid(self):
        rng = np.random.default_rng(7)
        s = np.linspace(0, 1, 10_001)
        for _ in range(50):
            w = random_warp(rng, SPEC2, scale=2.0)
            vals = warp_eval(w, s)
            assert np.diff(vals).min() > 0

    def test_extreme_value_still_monotone(self):
        w = make_warp(SPEC1, np.array([0.9]))
        s = np.linspace(0, 1, 10_001)
        assert np.diff(warp_eval(w, s)).min() > 0
        # projection must be active for the short right interval
        assert np.hypot(*w.slopes[1:]) <= 3.0 * (1.0 - 0.9) / 0.5 + 1e-12

    def test_nonmonotone_rejected(self):
        with pytest.raises(ValueError):
            fc_slopes(SPEC2, np.array([0.6, 0.3]))

    def test_slopes_nonnegative(self):
        rng = np.random.default_rng(8)
        for _ in range(100):
            w = random_warp(rng, SPEC2, scale=3.0)
            assert w.slopes.min() >= 0

    def test_jacobian_matches_fd(self):
        rng = np.random.default_rng(9)
        for _ in range(25):
            tau = jupp_inv(SPEC2, rng.normal(0, 1.5, size=2))
            d, jac = fc_slopes_jacobian(SPEC2, tau)
            np.testing.assert_allclose(d, fc_slopes(SPEC2, tau), atol=0)
            h = 1e-7
            for k in range(2):
                step = np.zeros(2)
                step[k] = h
                fd = (fc_slopes(SPEC2, tau + step) - fc_slopes(SPEC2, tau - step)) / (2 * h)
                np.testing.assert_allclose(jac[:, k], fd, atol=1e-5)


class TestEvalInvert:
    def test_identity(self):
        w = identity_warp(SPEC2)
        s = np.linspace(0, 1, 31)
        np.testing.assert_allclose(warp_eval(w, s), s, atol=1e-14)
        np.testing.assert_allclose(warp_invert(w, s), s, atol=1e-12)

    def test_endpoints_fixed(self):
        rng = np.random.default_rng(10)
        for _ in range(20):
            w = random_warp(rng, SPEC2, scale=2.0)
            assert warp_eval(w, 0.0) == 0.0
            assert warp_eval(w, 1.0) == 1.0

    def test_knot_interpolation(self):
        w = make_warp(SPEC1, np.array([0.3]))
        assert warp_eval(w, 0.5) == pytest.approx(0.3, abs=1e-14)
        assert warp_invert(w, 0.3) == pytest.approx(0.5, abs=1e-10)

    def test_derivative_at_knots_equals_slopes(self):
        rng = np.random.default_rng(11)
        w = random_warp(rng, SPEC2)
        h = 1e-6
        for x, d in zip(SPEC2.grid[1:-1], w.slopes[1:-1]):
            fd = (warp_eval(w, x + h) - warp_eval(w, x - h)) / (2 * h)
            assert fd == pytest.approx(d, abs=1e-6)
        np.testing.assert_allclose(warp_deriv(w, SPEC2.grid[1:-1]), w.slopes[1:-1], atol=1e-12)

    def test_invert_round_trip(self):
        rng = np.random.default_rng(12)
        w = random_warp(rng, SPEC2, scale=2.0)
        s = rng.uniform(0, 1, size=1000)
        np.testing.assert_allclose(warp_invert(w, warp_eval(w, s)), s, atol=1e-8)

    def test_out_of_domain(self):
        w = identity_warp(SPEC1)
        with pytest.raises(ValueError):
            warp_eval(w, 1.5)
        with pytest.raises(ValueError):
            warp_invert(w, -0.2)


class TestJupp:
    def test_equally_spaced_maps_to_zero(self):
        spec = WarpSpec(domain=(0.0, 1.0), knots=(0.25, 0.5, 0.75))
        np.testing.assert_allclose(jupp(spec, np.array([0.25, 0.5, 0.75])), 0.0, atol=1e-15)

    def test_log_ratio_example(self):
        np.testing.assert_allclose(
            jupp(SPEC2, np.array([0.25, 0.5])), [0.0, np.log(2.0)], atol=1e-14
        )

    def test_inverse_zero(self):
        np.testing.assert_allclose(jupp_inv(SPEC1, np.zeros(1)), [0.5])
        np.testing.assert_allclose(jupp_inv(SPEC2, np.zeros(2)), [1 / 3, 2 / 3])

    def test_round_trips(self):
        rng = np.random.default_rng(13)
        for _ in range(200):
            th = rng.normal(0, 2, size=2)
            np.testing.assert_allclose(jupp(SPEC2, jupp_inv(SPEC2, th)), th, atol=1e-12)
            tau = np.sort(rng.uniform(0.01, 0.99, size=2))
            if tau[1] - tau[0] < 1e-3:
                continue
            np.testing.assert_allclose(jupp_inv(SPEC2, jupp(SPEC2, tau)), tau, atol=1e-12)

    def test_extreme_coordinate_stays_increasing(self):
        # large positive first coordinate squeezes the first gap
        tau = jupp_inv(SPEC2, np.array([20.0, 0.0]))
        assert 0 < tau[0] < tau[1] < 1
        assert tau[0] < 1e-6
        tau = jupp_inv(SPEC1, np.array([-20.0]))
        assert tau[0] > 1 - 1e-6

    def test_invalid_inputs(self):
        with pytest.raises(ValueError):
            jupp(SPEC2, np.array([0.5, 0.5]))
        with pytest.raises(ValueError):
            jupp_inv(SPEC1, np.array([np.inf]))

    def test_jacobian_matches_fd(self):
        rng = np.random.default_rng(14)
        for _ in range(25):
            th = rng.normal(0, 1.5, size=2)
            tau, jac = jupp_inv_jacobian(SPEC2, th)
            np.testing.assert_allclose(tau, jupp_inv(SPEC2, th), atol=0)
            h = 1e-7
            for k in range(2):
                step = np.zeros(2)
                step[k] = h
                fd = (jupp_inv(SPEC2, th + step) - jupp_inv(SPEC2, th - step)) / (2 * h)
                np.testing.assert_allclose(jac[:, k], fd, atol=1e-6)


@settings(max_examples=200, deadline=None)
@given(
    th=st.lists(st.floats(-4, 4), min_size=3, max_size=3),
)
def test_property_warp_pipeline(th):
    spec = WarpSpec(domain=(0.0, 1.0), knots=(0.2, 0.5, 0.7))
    theta = np.asarray(th)
    tau = jupp_inv(spec, theta)
    assert np.all(np.diff(np.concatenate([[0.0], tau, [1.0]])) > 0)
    np.testing.assert_allclose(jupp(spec, tau), theta, atol=1e-10)
    w = make_warp(spec, tau)
    s = np.linspace(0, 1, 251)
    vals = warp_eval(w, s)
    assert vals[0] == 0.0 and vals[-1] == 1.0
    assert np.diff(vals).min() > 0
    back = warp_invert(w, vals)
    np.testing.assert_allclose(back, s, atol=1e-8)
