import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import special

from silc.errors import ContractViolation
from silc.gauss import (
    GaussianComponent,
    chi2_cdf,
    chi2_quantile,
    diag_mahalanobis,
    fit_diag_gaussian,
    regularized_gamma_p,
)


def bisect_chi2_oracle(dof, conf):
    """Independent quantile oracle: bisection on scipy's incomplete gamma."""
    lo, hi = 0.0, 1.0
    while special.gammainc(dof / 2.0, hi / 2.0) < conf:
        hi *= 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if special.gammainc(dof / 2.0, mid / 2.0) < conf:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


class TestMahalanobis:
    def test_zero_at_mean(self):
        comp = GaussianComponent(np.array([0.5, 0.5]), np.array([0.2, 0.3]))
        assert diag_mahalanobis([0.5, 0.5], comp) == 0.0

    def test_unit_variance_is_euclidean(self):
        comp = GaussianComponent(np.array([0.0, 0.0]), np.array([1.0, 1.0]))
        assert diag_mahalanobis([3.0, 4.0], comp) == pytest.approx(5.0)

    def test_variance_rescales_axes(self):
        comp = GaussianComponent(np.array([0.0, 0.0]), np.array([4.0, 1.0]))
        assert diag_mahalanobis([2.0, 0.0], comp) == pytest.approx(1.0)

    def test_dimension_mismatch(self):
        comp = GaussianComponent(np.array([0.0, 0.0]), np.array([1.0, 1.0]))
        with pytest.raises(ContractViolation):
            diag_mahalanobis([1.0, 2.0, 3.0], comp)

    @given(
        st.lists(st.floats(-50, 50), min_size=1, max_size=6),
        st.lists(st.floats(-50, 50), min_size=1, max_size=6),
        st.lists(st.floats(0.01, 100), min_size=1, max_size=6),
        st.lists(st.floats(-50, 50), min_size=1, max_size=6),
    )
    def test_metric_properties(self, x, y, var, mu):
        n = min(len(x), len(y), len(var), len(mu))
        x, y = np.array(x[:n]), np.array(y[:n])
        comp = GaussianComponent(np.array(mu[:n]), np.array(var[:n]))
        dx, dy = diag_mahalanobis(x, comp), diag_mahalanobis(y, comp)
        assert dx >= 0.0
        # symmetry in (x - mu): reflecting x through the mean keeps the distance
        assert diag_mahalanobis(2 * comp.mean - x, comp) == pytest.approx(dx, rel=1e-12)
        # triangle inequality in the rescaled coordinates
        shifted = GaussianComponent(x, comp.variance)
        assert diag_mahalanobis(y, shifted) >= abs(dx - dy) - 1e-9


class TestChi2Quantile:
    @pytest.mark.parametrize("conf,expected", [(0.99, 9.210340), (0.5, 1.386294)])
    def test_dof2_closed_form(self, conf, expected):
        assert chi2_quantile(2, conf) == pytest.approx(expected, abs=1e-6)
        assert abs(chi2_quantile(2, conf) - (-2.0 * math.log(1.0 - conf))) <= 1e-9

    def test_dof1_against_bisection_oracle(self):
        assert abs(chi2_quantile(1, 0.99) - 6.634897) < 1e-6
        assert abs(chi2_quantile(1, 0.99) - bisect_chi2_oracle(1, 0.99)) <= 1e-9

    @pytest.mark.parametrize("dof", [1, 2, 3, 10, 60, 128])
    @pytest.mark.parametrize("conf", [0.5, 0.9, 0.99])
    def test_oracle_grid(self, dof, conf):
        assert abs(chi2_quantile(dof, conf) - bisect_chi2_oracle(dof, conf)) <= 1e-9

    def test_monotone_in_confidence_and_dof(self):
        confs = [0.1, 0.3, 0.5, 0.8, 0.95, 0.99, 0.999]
        qs = [chi2_quantile(5, c) for c in confs]
        assert all(a < b for a, b in zip(qs, qs[1:]))
        dofs = [1, 2, 4, 9, 33, 130]
        qs = [chi2_quantile(d, 0.9) for d in dofs]
        assert all(a < b for a, b in zip(qs, qs[1:]))

    def test_roundtrip_through_cdf(self):
        for dof in (1, 3, 17):
            for conf in (0.2, 0.75, 0.995):
                assert chi2_cdf(chi2_quantile(dof, conf), dof) == pytest.approx(conf, abs=1e-10)

    @pytest.mark.parametrize("dof,conf", [(0, 0.5), (5000, 0.5), (3, 0.0), (3, 1.0), (3, -1.0)])
    def test_contract_violations(self, dof, conf):
        with pytest.raises(ContractViolation):
            chi2_quantile(dof, conf)

    def test_gamma_p_matches_scipy(self):
        for a in (0.5, 1.0, 3.7, 64.0):
            for x in (0.0, 0.3, 1.0, 5.0, 80.0):
                assert regularized_gamma_p(a, x) == pytest.approx(special.gammainc(a, x), abs=1e-13)


class TestFitDiagGaussian:
    def test_single_point_hits_floor(self):
        comp = fit_diag_gaussian([[1.0, 1.0]], variance_floor=1e-6)
        assert np.allclose(comp.mean, [1.0, 1.0])
        assert np.allclose(comp.variance, [1e-6, 1e-6])

    def test_population_variance_1d(self):
        comp = fit_diag_gaussian([[-1.0], [1.0]])
        assert comp.mean[0] == 0.0
        assert comp.variance[0] == pytest.approx(1.0)

    def test_square_of_points(self):
        comp = fit_diag_gaussian([[0, 0], [2, 0], [0, 2], [2, 2]])
        assert np.allclose(comp.mean, [1.0, 1.0])
        assert np.allclose(comp.variance, [1.0, 1.0])

    def test_empty_set_rejected(self):
        with pytest.raises(ContractViolation):
            fit_diag_gaussian(np.empty((0, 2)))

    @given(st.lists(st.lists(st.floats(-10, 10), min_size=2, max_size=2), min_size=2, max_size=12))
    @settings(max_examples=50)
    def test_permutation_invariance(self, pts):
        a = fit_diag_gaussian(pts)
        b = fit_diag_gaussian(list(reversed(pts)))
        assert np.allclose(a.mean, b.mean, atol=1e-12)
        assert np.allclose(a.variance, b.variance, atol=1e-12)

    def test_scaling_invariance_of_distance(self):
        # Per-axis scaling cancels between the fit and the query when no
        # variance entry is clamped by the floor.
        rng = np.random.default_rng(7)
        pts = rng.normal(size=(30, 3))
        lam = np.array([2.0, 0.5, 3.0])
        x = rng.normal(size=3)
        base = diag_mahalanobis(x, fit_diag_gaussian(pts))
        scaled = diag_mahalanobis(lam * x, fit_diag_gaussian(pts * lam))
        assert scaled == pytest.approx(base, rel=1e-9)
