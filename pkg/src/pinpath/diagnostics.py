"""Lift construction, convergence-rate reports, and integration-by-parts checks.

Everything here consumes broken geodesics (paths.py) together with their
interval response matrices (jacobi.py) and compares discrete objects against
the damped closed forms (damped.py).  All report objects are CSV-serializable
and carry explicit pass/fail gates so the CLI can turn them into exit codes.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import null_space

from . import damped, geom, jacobi, paths
from .geom import CurvatureModel, NumericalError
from .jacobi import COND_LIMIT, Partition

FD_STEP = 1e-5    # central-difference step for chart perturbations
DIV_STEP = 1e-3   # larger outer step for divergence-of-velocity differences
FLAT_FLOOR = 1e-13  # below this a statistic counts as identically zero


# ---------------------------------------------------------------------------
# endpoint vector fields
# ---------------------------------------------------------------------------

def projected_constant_field(model, direction=None):
    """Return X(p) = tangent projection of a fixed ambient vector.

    Smooth and bounded on the whole space; the default direction is a fixed
    unit vector so reports are reproducible.  Works on batched points.
    """
    if direction is None:
        direction = np.arange(1.0, model.ambient_dim + 1.0)
    direction = np.asarray(direction, dtype=float)
    direction = direction / np.linalg.norm(direction)

    def field(p):
        p = np.asarray(p, dtype=float)
        return geom.project_tangent(model, p, np.broadcast_to(direction, p.shape))

    return field


def zero_field(model):
    def field(p):
        return np.zeros_like(np.asarray(p, dtype=float))

    return field


# ---------------------------------------------------------------------------
# lift of an endpoint vector field through the pinning map
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Lift:
    """Minimal-norm path-space representative of an endpoint vector.

    slopes[i] is the right-hand slope on interval i in the rolled frame;
    knot_values[j] collects the induced field at knot j.  endpoint_residual
    is |knot_values[n] - endpoint_coords| (should be ~1e-15, gated 1e-10).
    """

    endpoint_coords: np.ndarray   # (d,) frame coordinates of X at the endpoint
    coefficients: np.ndarray      # (d,) mass-matrix inverse applied to them
    slopes: np.ndarray            # (n, d)
    knot_values: np.ndarray       # (n+1, d)
    endpoint_residual: float


def lift_build(path, family, x_vector):
    """Build the lift of an endpoint tangent vector along a broken geodesic.

    x_vector: ambient vector at path.endpoint (or a callable point -> vector);
    it is tangent-projected before use.  Returns a Lift.
    """
    model = family.model
    n = family.partition.n
    tip = path.points[-1]
    vec = x_vector(tip) if callable(x_vector) else np.asarray(x_vector, dtype=float)
    vec = geom.project_tangent(model, tip, vec)
    coords = geom.frame_coords(model, path.frames[-1], vec)

    coeff = jacobi._guarded_solve(family.K[n], coords, COND_LIMIT, False, "mass matrix")
    slopes = np.einsum("iab,a->ib", family.f[1:, n], coeff)
    knot_values = jacobi.jacobi_from_slopes(family, slopes)
    residual = float(np.max(np.abs(knot_values[n] - coords)))
    return Lift(coords, coeff, slopes, knot_values, residual)


def endpoint_map_matrix(family):
    """(d, n*d) matrix sending stacked slopes to the endpoint value / n."""
    n = family.partition.n
    d = family.model.dim
    cols = np.transpose(family.f[1:, n], (1, 0, 2)).reshape(family.model.dim, n * d)
    return cols / n


def lift_orthogonality(family, lift_slopes):
    """Residual of the lift against the null space of the endpoint map.

    Returns dict with the worst normalized inner product ("residual"),
    the null-space dimension, and the basis used (stacked slope vectors).
    """
    n = family.partition.n
    d = family.model.dim
    basis = null_space(endpoint_map_matrix(family))  # (n*d, q), euclidean-ON
    if basis.size == 0:
        return {"residual": 0.0, "null_dim": 0, "basis": basis}
    worst = 0.0
    flat_lift = np.asarray(lift_slopes, dtype=float).reshape(n * d)
    for q in range(basis.shape[1]):
        z = basis[:, q]
        # G1 inner product of slope lists = (euclidean dot) / n
        val = abs(float(flat_lift @ z)) / n
        znorm = float(np.linalg.norm(z)) / np.sqrt(n)
        worst = max(worst, val / znorm)
    return {"residual": worst, "null_dim": basis.shape[1], "basis": basis}


def lift_competitor_deficit(family, lift_slopes, count=100, seed=0):
    """Max norm deficit of random same-endpoint competitors vs the lift.

    Competitors are lift + null-space elements; returns min over draws of
    (competitor norm - lift norm), which must be >= -1e-10 when the lift is
    minimal.
    """
    n = family.partition.n
    d = family.model.dim
    basis = null_space(endpoint_map_matrix(family))
    flat_lift = np.asarray(lift_slopes, dtype=float).reshape(n * d)
    lift_norm = np.linalg.norm(flat_lift) / np.sqrt(n)
    if basis.size == 0:
        return 0.0
    rng = np.random.default_rng(seed)
    worst = np.inf
    for _ in range(count):
        coeffs = rng.standard_normal(basis.shape[1])
        comp = flat_lift + basis @ coeffs
        worst = min(worst, np.linalg.norm(comp) / np.sqrt(n) - lift_norm)
    return float(worst)


# ---------------------------------------------------------------------------
# convergence reports
# ---------------------------------------------------------------------------

@dataclass
class ConvergenceReport:
    statistic: str
    n_values: list
    q05: np.ndarray
    q50: np.ndarray
    q95: np.ndarray
    mean: np.ndarray
    slope: float
    passed: bool
    notes: dict = field(default_factory=dict)

    def to_csv(self, fh):
        fh.write("schema=1\n")
        fh.write("n,q05,q50,q95,mean,slope,pass\n")
        for k, n in enumerate(self.n_values):
            fh.write(",".join([
                repr(n), repr(float(self.q05[k])), repr(float(self.q50[k])),
                repr(float(self.q95[k])), repr(float(self.mean[k])),
                repr(float(self.slope)), str(self.passed),
            ]) + "\n")

    def table(self):
        lines = ["statistic: %s   slope=%.3f   pass=%s"
                 % (self.statistic, self.slope, self.passed)]
        lines.append("%6s %12s %12s %12s %12s" % ("n", "q05", "q50", "q95", "mean"))
        for k, n in enumerate(self.n_values):
            lines.append("%6d %12.4e %12.4e %12.4e %12.4e"
                         % (n, self.q05[k], self.q50[k], self.q95[k], self.mean[k]))
        return "\n".join(lines)


def _fit_slope(n_values, values):
    """Least-squares slope of log(values) against log(n), sign-flipped.

    Needs >= 4 points; all-zero values give +inf (exactly converged).
    """
    n_values = np.asarray(n_values, dtype=float)
    values = np.asarray(values, dtype=float)
    if len(n_values) < 4:
        return float("nan")
    if np.all(values <= FLAT_FLOOR):
        return float("inf")
    good = values > 0
    if good.sum() < 4:
        return float("inf")
    coeff = np.polyfit(np.log(n_values[good]), np.log(values[good]), 1)
    return float(-coeff[0])


def _decreasing(medians, strict):
    m = np.asarray(medians, dtype=float)
    if np.all(m <= FLAT_FLOOR):
        return True
    if strict:
        return bool(np.all(np.diff(m) < 0))
    return bool(np.all(np.diff(m) <= 0))


def _report(statistic, n_values, stats_per_n, gate):
    """Assemble a ConvergenceReport from per-n sample arrays.

    The monotone / quarter-rule gates act on medians (robust against the
    heavy tails of the sup statistics); the fitted rate uses the mean curve,
    whose small-window fit tracks the asymptotic rate much closer than the
    median's (the medians lag the CLT scale on coarse partitions).

    gate: "slope" (medians decreasing and slope >= 0.4),
          "quarter" (strictly decreasing and final < initial / 4),
          "decreasing" (medians decreasing).
    """
    q05 = np.array([np.quantile(s, 0.05) for s in stats_per_n])
    q50 = np.array([np.quantile(s, 0.50) for s in stats_per_n])
    q95 = np.array([np.quantile(s, 0.95) for s in stats_per_n])
    mean = np.array([np.mean(s) for s in stats_per_n])
    slope = _fit_slope(n_values, mean)
    zero = bool(np.all(q50 <= FLAT_FLOOR) and np.all(mean <= FLAT_FLOOR))
    if gate == "slope":
        passed = zero or (_decreasing(q50, strict=True)
                          and (slope >= 0.4 or slope == float("inf")))
    elif gate == "quarter":
        passed = zero or (_decreasing(q50, strict=True) and q50[-1] < q50[0] / 4)
    else:
        passed = zero or _decreasing(q50, strict=True)
    return ConvergenceReport(statistic, list(n_values), q05, q50, q95, mean,
                             slope, passed, notes={"identically_zero": zero})


def convergence_suite(model, n_values, samples, seed=0, statistics=("f", "K", "J", "adjoint"),
                      x_field=None):
    """Compute the requested convergence statistics over shared sample paths.

    Sample paths use common random drivers: one batch of increments is drawn
    at the finest n and coarse-grained (consecutive sums) for every coarser n
    that divides it, so the per-n statistics are positively coupled and the
    monotone-in-n comparisons are made on refinements of the same underlying
    Brownian path.  n values that do not divide the finest one fall back to
    independent draws.  Each statistic is the per-path sup over knots of the
    named discrepancy against the damped closed form.  Returns
    {name: ConvergenceReport}.

    Orientation note: the interval response matrices have eigenvalues >= 1 and
    their products grow, so the transported profile they approach is the
    *inverse* transport ratio t(s_i)/t(s_j) (these are scalars here and
    commute), and the mass-matrix limit is the undressed profile
    e^c * K-profile; the lift ratio K(s)/K(1) is dressing-invariant.  The
    stored damped module keeps the decaying normalization, which is what the
    scalar example values pin down.
    """
    if x_field is None:
        x_field = projected_constant_field(model)
    n_values = [int(n) for n in n_values]
    ric = model.kappa * (model.dim - 1)
    collected = {name: [] for name in statistics}

    n_fine = max(n_values)
    inc_fine = paths.sample_increments(model, Partition(n_fine), samples, seed)

    for n in n_values:
        part = Partition(n)
        knots = part.knots
        t_prof = np.exp(-0.5 * ric * knots)               # (n+1,) decaying
        k_prof = damped._k_profile(ric, knots)            # (n+1,)
        k_cmp = np.exp(ric) * k_prof                      # undressed profile
        ctil = damped._ctilde_scalar(ric)
        # family row i carries one S-factor (-> identity in the limit) and
        # C-products over (s_i, s_j], so its transport ratio is
        # t(s_i) / t(s_j) = e^{+c (s_j - s_i)/2}
        ratio = t_prof[:, None] / t_prof[None, :]
        eye = np.eye(model.dim)

        if n_fine % n == 0:
            group = n_fine // n
            inc = inc_fine.reshape(samples, n, group, model.dim).sum(axis=2)
        else:
            inc = paths.sample_increments(model, part, samples, seed + 7 * n)
        pts, frs = paths.roll_batch(model, inc)
        vec = x_field(pts[:, -1])
        vec = geom.project_tangent(model, pts[:, -1], vec)
        coords = geom.frame_coords(model, frs[:, -1], vec)  # (samples, d)

        per_stat = {name: np.empty(samples) for name in statistics}
        iu = np.triu_indices(n, k=0)  # pairs (i-1, j-1) with 1 <= i <= j <= n
        for s in range(samples):
            fam = jacobi.build_family(model, part, inc[s])
            if "f" in per_stat:
                diff = fam.f[1:, 1:] - ratio[1:, 1:, None, None] * eye
                norms = np.linalg.norm(diff, axis=(2, 3))
                per_stat["f"][s] = norms[iu].max()
            need_lift = {"J", "adjoint"} & set(per_stat)
            if "K" in per_stat:
                kdiff = fam.K[1:] - k_cmp[1:, None, None] * eye
                per_stat["K"][s] = np.linalg.norm(kdiff, axis=(1, 2)).max()
            if need_lift:
                coeff = np.linalg.solve(fam.K[n], coords[s])
                if "J" in per_stat:
                    lift_J = np.einsum("jab,a->jb", fam.K, coeff)
                    damped_J = (k_prof / k_prof[-1])[:, None] * coords[s]
                    per_stat["J"][s] = np.linalg.norm(lift_J - damped_J, axis=1).max()
                if "adjoint" in per_stat:
                    slopes = np.einsum("iab,a->ib", fam.f[1:, n], coeff)
                    discrete = float(np.sum(slopes * inc[s]))
                    weights = inc[s] * t_prof[:-1, None]
                    limit = ctil * float(coords[s] @ weights.sum(axis=0))
                    per_stat["adjoint"][s] = abs(discrete - limit)
        for name in statistics:
            collected[name].append(per_stat[name])

    gates = {"f": "slope", "K": "quarter", "J": "quarter", "adjoint": "decreasing"}
    return {name: _report(name, n_values, collected[name], gates[name])
            for name in statistics}


def converge_f_vs_damped(model, n_values, samples, seed=0):
    """Sup-over-pairs deviation of interval response from the damped ratio."""
    return convergence_suite(model, n_values, samples, seed, ("f",))["f"]


def converge_K_and_J(model, n_values, samples, seed=0, x_field=None):
    """Mass-matrix and lift deviations from their damped profiles."""
    return convergence_suite(model, n_values, samples, seed, ("K", "J"), x_field)


def converge_adjoint_martingale(model, n_values, samples, seed=0, x_field=None):
    """Gap between discrete and damped adjoint pairings on shared increments."""
    return convergence_suite(model, n_values, samples, seed, ("adjoint",), x_field)


# ---------------------------------------------------------------------------
# chart-level integration by parts
# ---------------------------------------------------------------------------

def _batched_lift_slopes(model, part, inc, x_field):
    """Slopes of the lift for a batch of increment charts.

    Returns (slopes (N,n,d), endpoint coords (N,d), points, frames, cond (N,)).
    """
    n = part.n
    pts, frs = paths.roll_batch(model, inc)
    vec = x_field(pts[:, -1])
    vec = geom.project_tangent(model, pts[:, -1], vec)
    coords = geom.frame_coords(model, frs[:, -1], vec)
    f_end = jacobi.batch_endpoint_f(model, inc, part.mesh)
    mass = jacobi.batch_mass_matrix(f_end, part.mesh)
    coeff = np.linalg.solve(mass, coords[..., None])[..., 0]
    slopes = np.einsum("niab,na->nib", f_end, coeff)
    return slopes, coords, pts, frs


def _knot_coords_relative(model, base_pts, base_frs, other_pts):
    """Frame coordinates of log(base knot -> other knot), batched.

    base_pts/other_pts: (N, n+1, D); base_frs: (N, n+1, D, d).
    Returns (N, n+1, d) with zeros at knot 0.
    """
    N, m, D = base_pts.shape
    d = base_frs.shape[-1]
    out = np.zeros((N, m, d))
    for j in range(1, m):
        v = geom.log_point(model, base_pts[:, j], other_pts[:, j])
        out[:, j] = geom.frame_coords(model, base_frs[:, j], v)
    return out


def _slopes_from_knots_batch(C, S, knot_vals):
    """Triangular inversion of knot values to slopes, batched over paths.

    C, S: (N, n, d, d) interval solutions at the full step (interval j lives
    at index j - 1); knot_vals: (N, n+1, d).
    """
    N, m, d = knot_vals.shape
    n = m - 1
    out = np.empty((N, n, d))
    for j in range(1, n + 1):
        rhs = knot_vals[:, j] - np.einsum("nab,nb->na", C[:, j - 1], knot_vals[:, j - 1])
        out[:, j - 1] = np.linalg.solve(S[:, j - 1], rhs[..., None])[..., 0]
    return out


def _chart_velocity(model, part, inc, x_field, want_cond=True):
    """Solve M v = k for the increment-chart velocity of the lift.

    M's columns are the slope representations of unit chart perturbations,
    built by central differences (paths rolled at inc +/- FD_STEP e_col and
    anti-developed against the base path), then inverted triangularly.
    Returns (velocity (N, n*d), slopes k (N, n, d), cond (N,), M (N, nd, nd),
    base_pts (N, n+1, D)).  want_cond=False skips the SVD (used inside
    divergence differences).
    """
    N = inc.shape[0]
    n, d = part.n, model.dim
    nd = n * d
    slopes, coords, base_pts, base_frs = _batched_lift_slopes(model, part, inc, x_field)
    C, S = jacobi.batch_cs(model, inc, part.mesh)

    M = np.empty((N, nd, nd))
    for col in range(nd):
        i, a = divmod(col, d)
        shift = np.zeros((n, d))
        shift[i, a] = FD_STEP
        pts_plus, _ = paths.roll_batch(model, inc + shift)
        pts_minus, _ = paths.roll_batch(model, inc - shift)
        v_plus = _knot_coords_relative(model, base_pts, base_frs, pts_plus)
        v_minus = _knot_coords_relative(model, base_pts, base_frs, pts_minus)
        deriv = (v_plus - v_minus) / (2 * FD_STEP)
        M[:, :, col] = _slopes_from_knots_batch(C, S, deriv).reshape(N, nd)

    cond = np.linalg.cond(M) if want_cond else np.full(N, np.nan)
    velocity = np.linalg.solve(M, slopes.reshape(N, nd)[..., None])[..., 0]
    return velocity, slopes, cond, M, base_pts


def _directional_derivative(model, part, inc, direction, observable, step=FD_STEP):
    """Central difference of a cylinder observable along a chart direction.

    direction: (N, n, d), not necessarily unit; the step is applied along the
    normalized direction and rescaled, so per-sample magnitudes stay safe.
    """
    norms = np.linalg.norm(direction.reshape(direction.shape[0], -1), axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    unit = direction / safe[:, None, None]
    pts_plus, _ = paths.roll_batch(model, inc + step * unit)
    pts_minus, _ = paths.roll_batch(model, inc - step * unit)
    f_plus = observable.evaluate(model, part, pts_plus)
    f_minus = observable.evaluate(model, part, pts_minus)
    return norms * (f_plus - f_minus) / (2 * step)


@dataclass
class IbpResult:
    lhs_mean: float
    lhs_stderr: float
    rhs_mean: float
    rhs_stderr: float
    diff_mean: float
    diff_stderr: float
    n_used: int
    n_aborted: int
    passed: bool
    scalar_gap: dict = field(default_factory=dict)

    def summary(self):
        return ("ibp lhs=%.6g+-%.2g rhs=%.6g+-%.2g diff=%.3g+-%.2g "
                "used=%d aborted=%d pass=%s"
                % (self.lhs_mean, self.lhs_stderr, self.rhs_mean, self.rhs_stderr,
                   self.diff_mean, self.diff_stderr, self.n_used, self.n_aborted,
                   self.passed))


def ibp_check(model, partition, f_obs, g_obs, n_samples, seed=0, x_field=None,
              scalar_subsample=256):
    """Gaussian integration by parts in the increment chart.

    Compares E[(Xf) g] with E[f (-Xg + m g)] where X differentiates along the
    chart velocity of the lift and m = n * <z, V> - div_z V with the divergence
    taken by outer central differences of the velocity field.  Samples whose
    perturbation matrix has condition number above COND_LIMIT/100 are dropped
    (counted in n_aborted).  Pass gate: paired difference within 3 stderr.

    scalar_gap reports the ungated per-sample comparison of the chart
    multiplication scalar against the slope-pairing-minus-divergence form
    computed directly on path space (on a subsample).
    """
    if n_samples < 2:
        raise ValueError("need at least 2 samples")
    if x_field is None:
        x_field = projected_constant_field(model)
    part = partition
    n, d = part.n, model.dim
    nd = n * d
    inc = paths.sample_increments(model, part, n_samples, seed)

    velocity, slopes, cond, M, base_pts = _chart_velocity(model, part, inc, x_field)
    keep = cond <= 1e10
    n_aborted = int((~keep).sum())
    inc = inc[keep]
    velocity = velocity[keep]
    slopes = slopes[keep]
    M = M[keep]
    base_pts = base_pts[keep]
    N = inc.shape[0]
    if N < 2:
        raise NumericalError("all but %d samples aborted on conditioning" % N)

    f_vals = f_obs.evaluate(model, part, base_pts)
    g_vals = g_obs.evaluate(model, part, base_pts)
    vel_paths = velocity.reshape(N, n, d)
    xf = _directional_derivative(model, part, inc, vel_paths, f_obs)
    xg = _directional_derivative(model, part, inc, vel_paths, g_obs)

    # divergence of the chart velocity by outer central differences
    div = np.zeros(N)
    for col in range(nd):
        i, a = divmod(col, d)
        shift = np.zeros((n, d))
        shift[i, a] = DIV_STEP
        v_plus = _chart_velocity(model, part, inc + shift, x_field, want_cond=False)[0]
        v_minus = _chart_velocity(model, part, inc - shift, x_field, want_cond=False)[0]
        div += (v_plus[:, col] - v_minus[:, col]) / (2 * DIV_STEP)

    mult = n * np.einsum("nc,nc->n", inc.reshape(N, nd), velocity) - div
    lhs = xf * g_vals
    rhs = f_vals * (-xg + mult * g_vals)
    diff = lhs - rhs

    lhs_mean = float(np.mean(lhs))
    lhs_err = float(np.std(lhs, ddof=1) / np.sqrt(N))
    rhs_mean = float(np.mean(rhs))
    rhs_err = float(np.std(rhs, ddof=1) / np.sqrt(N))
    diff_mean = float(np.mean(diff))
    diff_err = float(np.std(diff, ddof=1) / np.sqrt(N))
    passed = abs(diff_mean) <= 3 * diff_err if diff_err > 0 else abs(diff_mean) < 1e-12

    scalar = _scalar_gap(model, part, inc[:scalar_subsample],
                         velocity[:scalar_subsample], slopes[:scalar_subsample],
                         M[:scalar_subsample], mult[:scalar_subsample], x_field)
    return IbpResult(lhs_mean, lhs_err, rhs_mean, rhs_err, diff_mean, diff_err,
                     N, n_aborted, passed, scalar)


def _scalar_gap(model, part, inc, velocity, slopes, M, mult, x_field):
    """Ungated comparison of the two multiplication scalars on a subsample.

    Chart form: n <z, V> - div_z V (already in `mult`).  Path-space form:
    sum_i <slope_i, increment_i> minus the divergence over the
    slope-orthonormal directions, the latter by central differences of the
    lift slopes along chart velocities that realize those directions
    (columns of M^{-1}).  The pairing needs no extra scale factor: the chart
    velocity is the increment representation of the slope list, so
    n <z, V> is already the slope/increment pairing.
    """
    N = inc.shape[0]
    if N == 0:
        return {}
    n, d = part.n, model.dim
    nd = n * d
    # chart velocities realizing the orthonormal slope directions sqrt(n) e_col
    basis_vel = np.linalg.solve(M, np.sqrt(n) * np.broadcast_to(np.eye(nd), (N, nd, nd)))
    div_path = np.zeros(N)
    for col in range(nd):
        i, a = divmod(col, d)
        direction = basis_vel[:, :, col].reshape(N, n, d)
        norms = np.linalg.norm(direction.reshape(N, -1), axis=1)
        safe = np.where(norms > 0, norms, 1.0)
        unit = direction / safe[:, None, None]
        s_plus = _batched_lift_slopes(model, part, inc + FD_STEP * unit, x_field)[0]
        s_minus = _batched_lift_slopes(model, part, inc - FD_STEP * unit, x_field)[0]
        dslope = norms * (s_plus[:, i, a] - s_minus[:, i, a]) / (2 * FD_STEP)
        div_path += dslope / np.sqrt(n)
    pairing = np.einsum("nid,nid->n", slopes, inc)
    path_scalar = pairing - div_path
    gap = mult - path_scalar
    return {
        "median_abs_gap": float(np.median(np.abs(gap))),
        "mean_gap": float(np.mean(gap)),
        "subsample": int(N),
    }


def gradient_compare(model, partition, observable, n_samples=64, seed=0,
                     x_field=None, refine=8):
    """Ungated diagnostic: chart derivative vs damped-gradient pairing.

    Left: Xf via the chart velocity (as in ibp_check).  Right: the damped
    closed-form field paired with frame-coordinate gradients of the
    observable at its knot times; gradients use frames from a refinement-8
    re-roll of the same path as a stand-in for the continuum development.
    Returns per-sample medians; the gap mixes discretization effects and is
    reported, not gated.
    """
    if x_field is None:
        x_field = projected_constant_field(model)
    part = partition
    n, d = part.n, model.dim
    ric = model.kappa * (model.dim - 1)
    inc = paths.sample_increments(model, part, n_samples, seed)
    velocity, slopes, cond, M, base_pts = _chart_velocity(model, part, inc, x_field)
    keep = cond <= 1e10
    inc, velocity, base_pts = inc[keep], velocity[keep], base_pts[keep]
    N = inc.shape[0]
    vel_paths = velocity.reshape(N, n, d)
    chart_side = _directional_derivative(model, part, inc, vel_paths, observable)

    # refined roll: same increments split across `refine` sub-steps
    fine_inc = np.repeat(inc / refine, refine, axis=1)
    fine_pts, fine_frs = paths.roll_batch(model, fine_inc)
    idx = np.arange(0, n * refine + 1, refine)
    frames = fine_frs[:, idx]          # (N, n+1, D, d)
    points = fine_pts[:, idx]

    # endpoint coords in the refined frame, damped profile along knots
    vec = x_field(points[:, -1])
    vec = geom.project_tangent(model, points[:, -1], vec)
    coords = geom.frame_coords(model, frames[:, -1], vec)
    k_prof = damped._k_profile(ric, part.knots)
    damped_field = (k_prof / k_prof[-1])[None, :, None] * coords[:, None, :]

    times = observable.times
    knot_idx = [_knot_time_index(part, t) for t in times]
    pair_side = np.zeros(N)
    for j in knot_idx:
        if j == 0:
            continue
        for a in range(d):
            moved_plus = points.copy()
            moved_minus = points.copy()
            step_vec = FD_STEP * frames[:, j, :, a]
            moved_plus[:, j] = geom.exp_point(model, points[:, j], step_vec)
            moved_minus[:, j] = geom.exp_point(model, points[:, j], -step_vec)
            f_plus = observable.evaluate(model, part, moved_plus)
            f_minus = observable.evaluate(model, part, moved_minus)
            grad_a = (f_plus - f_minus) / (2 * FD_STEP)
            pair_side += damped_field[:, j, a] * grad_a
    gap = chart_side - pair_side
    return {
        "median_abs_gap": float(np.median(np.abs(gap))),
        "median_abs_chart": float(np.median(np.abs(chart_side))),
        "n_samples": int(N),
        "refine": int(refine),
        "note": "refined-roll frames stand in for the continuum development",
    }


def _knot_time_index(part, t):
    j = t * part.n
    k = int(round(j))
    if abs(j - k) > 1e-9:
        raise ValueError("observable time %r is not a knot" % (t,))
    return k


# ---------------------------------------------------------------------------
# pathwise property sweep (positivity / bounds audit)
# ---------------------------------------------------------------------------

@dataclass
class PropertyReport:
    n_paths: int
    violations: dict
    worst: dict

    @property
    def total_violations(self):
        return int(sum(self.violations.values()))

    def summary(self):
        parts = ["paths=%d" % self.n_paths]
        for key in sorted(self.violations):
            parts.append("%s: violations=%d worst=%.3e"
                         % (key, self.violations[key], self.worst[key]))
        return "\n".join(parts)


def property_sweep(model_list, n_paths, n=64, seed=0):
    """Audit pathwise inequalities over random broken geodesics.

    For each model in model_list, draws paths and checks: mass-matrix
    eigenvalues >= 1, normal Jacobian >= 1, slope-determinant product >= 1,
    interval response bounds (|C| below the curvature cosh envelope, |S - sI|
    and |C - I| below their envelopes), and the endpoint volume factor below
    its combinatorial envelope.  Returns a PropertyReport counting violations
    (tolerances: 1e-10 on eigenvalues, 1e-12 on determinants).
    """
    checks = ["mass_eig", "normal_jacobian", "slope_det", "response_bound",
              "volume_bound"]
    violations = {c: 0 for c in checks}
    worst = {c: np.inf for c in checks}
    per_model = max(1, n_paths // max(1, len(model_list)))

    for m_idx, model in enumerate(model_list):
        part = Partition(n)
        count = per_model
        inc = paths.sample_increments(model, part, count, seed + 101 * m_idx)
        big_n = model.curvature_bound
        for s in range(count):
            fam = jacobi.build_family(model, part, inc[s])
            eig = np.linalg.eigvalsh(0.5 * (fam.K[n] + fam.K[n].T))
            margin = float(eig.min() - 1.0)
            worst["mass_eig"] = min(worst["mass_eig"], margin)
            if margin < -1e-10:
                violations["mass_eig"] += 1

            jp = jacobi.normal_jacobian(fam)
            margin = float(jp - 1.0)
            worst["normal_jacobian"] = min(worst["normal_jacobian"], margin)
            if margin < -1e-12:
                violations["normal_jacobian"] += 1

            rho = jacobi.rho_P(fam)
            margin = float(rho - 1.0)
            worst["slope_det"] = min(worst["slope_det"], margin)
            if margin < -1e-12:
                violations["slope_det"] += 1

            margin = _response_bound_margin(model, fam, big_n)
            worst["response_bound"] = min(worst["response_bound"], margin)
            if margin < -1e-10:
                violations["response_bound"] += 1

            margin = _volume_bound_margin(model, part, fam, inc[s], big_n)
            worst["volume_bound"] = min(worst["volume_bound"], margin)
            if margin < -1e-8:
                violations["volume_bound"] += 1
    return PropertyReport(per_model * len(model_list), violations, worst)


def _response_bound_margin(model, fam, big_n):
    """Smallest slack in the interval response envelopes over intervals."""
    n = fam.partition.n
    h = fam.partition.mesh
    margin = np.inf
    for i in range(1, n + 1):
        speed = np.linalg.norm(fam.velocities[i - 1])
        env = np.cosh(np.sqrt(big_n) * speed * h)
        margin = min(margin, env - np.linalg.norm(fam.C[i], 2))
        grow = np.exp(big_n * speed ** 2 * h ** 2 / 2.0)
        s_env = big_n * speed ** 2 * h ** 3 / 6.0 * grow
        margin = min(margin, s_env - np.linalg.norm(fam.S[i] - h * np.eye(model.dim), 2))
        c_env = big_n * speed ** 2 * h ** 2 / 2.0 * grow
        margin = min(margin, c_env - np.linalg.norm(fam.C[i] - np.eye(model.dim), 2))
    return float(margin)


def _volume_bound_margin(model, part, fam, inc, big_n):
    """Slack of V_x under its combinatorial envelope, x = the rolled endpoint
    pushed one mesh step along the last increment direction."""
    n, d = part.n, model.dim
    if n < 2:
        return 0.0
    pts, frs = paths.roll_batch(model, inc[None])
    sigma_tau = pts[0, -2]
    frame_tau = frs[0, -2]
    x = pts[0, -1]
    xi = geom.frame_coords(model, frame_tau, geom.log_point(model, sigma_tau, x))
    vx = jacobi.volume_change_Vx(model, fam, xi)
    dist_tip = np.linalg.norm(xi)
    leg = np.linalg.norm(inc, axis=1)
    log_leg_sum = big_n * float(np.sum(leg ** 2))
    from math import comb
    bound = 0.0
    for k in range(d + 1):
        bound += comb(d, k) * n ** (k / 2.0) * np.exp(
            k * big_n * dist_tip ** 2 / 2.0 + k * log_leg_sum)
    return float(bound - vx)
