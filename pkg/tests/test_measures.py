"""Free/pinned path measures, heat kernels, and the quadrature oracles."""

import numpy as np
import pytest
from scipy import stats

from pinpath import geom, measures, paths
from pinpath.geom import CurvatureModel
from pinpath.jacobi import Partition
from pinpath.measures import (MASS_OBSERVABLE, CylinderObservable,
                              heat_kernel_exact, pinned_estimate,
                              pinned_fdd_oracle, pinned_samples,
                              radial_observable, radial_pde_kernel,
                              sample_nu1P)

from tests.oracles import flat_bridge_abs_moment_1d, flat_bridge_second_moment

FLAT1 = CurvatureModel("flat", 1)
FLAT2 = CurvatureModel("flat", 2)
HYP2 = CurvatureModel("hyperbolic", 2, 1.0)
HYP3 = CurvatureModel("hyperbolic", 3, 1.0)

# frozen regression values (computed once with the shipped settings)
H3_KERNEL_AT_1 = 0.019875748452065724
PDE_KERNEL_REGRESSION = [0.032609159087367126, 0.019875300386726864,
                         0.00287397600960093]
FDD_MIDPOINT_R = 0.018378317218229277


def test_heat_kernel_flat_values():
    """Flat kernel: Gaussian normalization and decay."""
    assert heat_kernel_exact(FLAT2, 1.0, rho=0.0) == pytest.approx(1 / (2 * np.pi))
    want = (2 * np.pi) ** (-0.5) * np.exp(-0.5)
    assert heat_kernel_exact(FLAT1, 1.0, rho=1.0) == pytest.approx(want, rel=1e-14)
    # x/y form matches the radial form
    x, y = np.array([0.3, -0.4]), np.array([0.3, 0.6])
    assert heat_kernel_exact(FLAT2, 0.5, x, y) == pytest.approx(
        heat_kernel_exact(FLAT2, 0.5, rho=1.0), rel=1e-14)


def test_heat_kernel_hyperbolic_closed_form():
    """d=3, kappa=1 radial kernel at rho=1 (frozen) and its formula."""
    got = heat_kernel_exact(HYP3, 1.0, rho=1.0)
    assert got == pytest.approx(H3_KERNEL_AT_1, rel=1e-12)
    want = (2 * np.pi) ** (-1.5) * (1.0 / np.sinh(1.0)) * np.exp(-1.0)
    assert got == pytest.approx(want, rel=1e-12)


def test_heat_kernel_rejects_unsupported():
    """Hyperbolic closed form outside d=3/kappa=1, and bad t, must raise."""
    with pytest.raises(ValueError):
        heat_kernel_exact(HYP2, 1.0, rho=1.0)
    with pytest.raises(ValueError):
        heat_kernel_exact(CurvatureModel("hyperbolic", 3, 2.0), 1.0, rho=1.0)
    with pytest.raises(ValueError):
        heat_kernel_exact(HYP3, 0.0, rho=1.0)
    with pytest.raises(ValueError):
        heat_kernel_exact(HYP3, 1.0)


def test_radial_pde_kernel_regression():
    """Crank-Nicolson oracle: frozen values and closed-form agreement."""
    got = radial_pde_kernel([0.5, 1.0, 2.0])
    assert np.allclose(got, PDE_KERNEL_REGRESSION, rtol=1e-9)
    closed = [heat_kernel_exact(HYP3, 1.0, rho=r) for r in (0.5, 1.0, 2.0)]
    assert np.allclose(got, closed, rtol=1e-3)


def test_fdd_oracle_mass_is_chapman_kolmogorov():
    """g = 1 collapses the split integral to p_1(o, x)."""
    val, err = pinned_fdd_oracle(HYP3, (np.array([1.0, 0, 0]), 1.0),
                                 lambda r: np.ones_like(r))
    assert err < 1e-4
    assert val == pytest.approx(heat_kernel_exact(HYP3, 1.0, rho=1.0), rel=1e-5)
    # flat version of the same collapse
    x = np.array([0.7, -0.2])
    val, _ = pinned_fdd_oracle(FLAT2, x, lambda r: np.ones_like(r))
    assert val == pytest.approx(heat_kernel_exact(FLAT2, 1.0, rho=np.linalg.norm(x)),
                                rel=1e-5)


def test_fdd_oracle_flat_bridge_moments():
    """Flat split integrals match Gaussian bridge algebra for g = r^2 and r."""
    for d, xv in ((1, np.array([0.8])), (2, np.array([1.0, 0.5])),
                  (3, np.array([0.3, -0.6, 1.1]))):
        model = CurvatureModel("flat", d)
        val, _ = pinned_fdd_oracle(model, xv, lambda r: r * r, tol=1e-7)
        assert val == pytest.approx(flat_bridge_second_moment(d, xv), rel=1e-6)
    val, _ = pinned_fdd_oracle(FLAT1, np.array([1.3]), lambda r: r, tol=1e-7)
    assert val == pytest.approx(flat_bridge_abs_moment_1d(1.3), rel=1e-6)


def test_fdd_oracle_midpoint_r_frozen():
    """Frozen value used by the acceptance run (hyperbolic, g = r)."""
    val, err = pinned_fdd_oracle(HYP3, (np.array([1.0, 0, 0]), 1.0), lambda r: r)
    assert err < 1e-4
    assert val == pytest.approx(FDD_MIDPOINT_R, rel=1e-9)
    with pytest.raises(ValueError):
        pinned_fdd_oracle(HYP2, np.zeros(2), lambda r: r)


def test_observable_evaluation_and_bounds():
    """Cylinder observables: kinds, knot-time validation, bound check."""
    part = Partition(4)
    batch = sample_nu1P(FLAT2, part, 50, seed=2)
    assert np.all(MASS_OBSERVABLE.evaluate(FLAT2, part, batch.points) == 1.0)

    obs = radial_observable(0.5, "r2")
    vals = obs.evaluate(FLAT2, part, batch.points)
    want = np.sum(batch.points[:, 2, :] ** 2, axis=-1)
    assert np.allclose(vals, want)

    with pytest.raises(ValueError):
        radial_observable(0.3).evaluate(FLAT2, part, batch.points)

    tight = radial_observable(0.5, "r2", bound=1e-6)
    with pytest.raises(ValueError):
        tight.evaluate(FLAT2, part, batch.points)

    gauss = CylinderObservable("exp_end", (1.0,), 1.0, "exp_radial2",
                               {"times": [1.0], "scales": [2.0]})
    vals = gauss.evaluate(FLAT2, part, batch.points)
    assert np.all((vals > 0.0) & (vals <= 1.0))


def test_nu1p_flat_marginals():
    """Flat endpoint coordinates are standard normal (KS at 1e4 samples)."""
    part = Partition(8)
    batch = sample_nu1P(FLAT2, part, 10000, seed=1)
    end = batch.points[:, -1, :]
    for coord in range(2):
        pval = stats.kstest(end[:, coord], "norm").pvalue
        assert pval > 0.01
    # independence of the two endpoint coordinates (at MC accuracy)
    assert abs(np.corrcoef(end[:, 0], end[:, 1])[0, 1]) < 0.05


def test_nu1p_single_interval():
    """n=1 free paths land at exp_o of one increment."""
    part = Partition(1)
    batch = sample_nu1P(HYP2, part, 8, seed=4)
    fp = geom.base_frame_point(HYP2)
    for i in range(8):
        want = geom.exp_map(HYP2, fp, batch.increments[i, 0]).point
        assert np.allclose(batch.points[i, 1], want, atol=1e-12)
        assert isinstance(batch.path(i), paths.BrokenGeodesic)


def test_nu1p_seed_stability():
    """E[d(o, sigma(1))^2] agrees across seeds within combined error bars."""
    part = Partition(16)
    vals = []
    for seed in (11, 12):
        batch = sample_nu1P(HYP2, part, 4000, seed=seed)
        d2 = geom.distance(HYP2, geom.base_point(HYP2), batch.points[:, -1, :]) ** 2
        vals.append((d2.mean(), d2.std(ddof=1) / np.sqrt(len(d2))))
    gap = abs(vals[0][0] - vals[1][0])
    assert gap < 3 * (vals[0][1] + vals[1][1])


def test_target_point_forms():
    """(direction, dist), frame coordinates, and ambient input all agree."""
    e1 = np.array([1.0, 0.0])
    a = measures._target_point(HYP2, (e1, 0.8))
    b = measures._target_point(HYP2, 0.8 * e1)
    assert np.allclose(a, b, atol=1e-12)
    c = measures._target_point(HYP2, a)       # ambient passthrough
    assert np.allclose(a, c)
    with pytest.raises(ValueError):
        measures._target_point(HYP2, np.array([1.0, 0.0, 0.0]))  # off the sheet
    with pytest.raises(ValueError):
        measures._target_point(FLAT2, np.zeros(3))


def test_pinned_estimate_flat_unbiased():
    """Flat mass estimate hits the Gaussian kernel within 3 stderr."""
    x = np.array([1.0, 0.0])
    res = pinned_estimate(FLAT2, Partition(4), x, MASS_OBSERVABLE,
                          n_samples=20000, seed=3)
    oracle = heat_kernel_exact(FLAT2, 1.0, rho=1.0)
    assert abs(res.mean - oracle) < 3 * res.stderr
    assert res.stderr < 0.02 * oracle
    assert np.all(np.isfinite(res.log_weights))
    assert np.isfinite(res.weight_summary()["log_w_var"])
    assert res.meta["tip_cond_hits"] == 0


def test_pinned_estimate_hyperbolic_bounded_and_converges():
    """f == 1: one constant bounds every (x, n); d=3, n=32 hits the kernel."""
    e1 = np.array([1.0, 0.0])
    for rho in (0.0, 1.0, 2.0):
        for n in (4, 16):
            xa = measures._target_point(HYP2, (e1, float(rho)))
            r = pinned_estimate(HYP2, Partition(n), xa, MASS_OBSERVABLE,
                                n_samples=4000, seed=9)
            assert r.mean + 3 * r.stderr < 0.2
    x0 = measures._target_point(HYP3, (np.array([1.0, 0.0, 0.0]), 0.0))
    res = pinned_estimate(HYP3, Partition(32), x0, MASS_OBSERVABLE,
                          n_samples=60000, seed=2)
    p0 = heat_kernel_exact(HYP3, 1.0, rho=0.0)
    assert abs(res.mean - p0) < 3 * res.stderr


def test_pinned_estimate_validation():
    """Too-few samples and off-knot observable times are rejected."""
    with pytest.raises(ValueError):
        pinned_estimate(FLAT2, Partition(4), np.zeros(2), n_samples=1)
    with pytest.raises(ValueError):
        pinned_estimate(FLAT2, Partition(4), np.zeros(2),
                        observable=radial_observable(0.3), n_samples=16)


def test_pinned_estimate_worker_invariance():
    """Worker count does not change the result bits."""
    x = np.array([0.5, 0.0])
    a = pinned_estimate(FLAT2, Partition(4), x, n_samples=6000, seed=9, workers=1)
    b = pinned_estimate(FLAT2, Partition(4), x, n_samples=6000, seed=9, workers=2)
    assert a.mean == b.mean
    assert a.stderr == b.stderr


def test_pinned_samples_container():
    """Pinned draws expose pinned endpoints, weights, and consistent shapes."""
    x_amb = measures._target_point(HYP2, (np.array([1.0, 0.0]), 1.0))
    samples = pinned_samples(HYP2, Partition(4), x_amb, 5, seed=8)
    assert len(samples) == 5
    for s in samples:
        assert np.allclose(s.points[-1], x_amb, atol=1e-9)
        assert s.points.shape == (5, 3)
        assert s.body_increments.shape == (3, 2)
        assert s.increments.shape == (4, 2)
        assert np.isclose(s.weight, np.exp(s.log_weight))
        assert np.isfinite(s.f_value)
