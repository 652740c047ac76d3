"""Matrix Jacobi flows along broken geodesics.

Each interval of an equally spaced partition carries a constant frame velocity
xi_i; the second-order matrix system Y'' = A_i Y (A_i the curvature quadratic
of xi_i) has cosine/sine-type solutions C_i, S_i.  Products of these assemble
the interval response matrices f_i(s_j), the positive mass matrix K(s), the
endpoint normal Jacobian, and the two volume factors used by the pinned
estimator.  Closed forms are the production route; a fixed-step RK4 integrator
provides the independent oracle behind the same interface.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import geom
from .geom import CurvatureModel, NumericalError

COND_LIMIT = 1e12   # refuse/warn beyond this condition number


@dataclass(frozen=True)
class Partition:
    """Equally spaced partition {0, 1/n, ..., 1} of the unit interval."""

    n: int

    def __post_init__(self):
        if not (isinstance(self.n, (int, np.integer)) and self.n >= 1):
            raise ValueError("partition needs an integer n >= 1")

    @property
    def knots(self) -> np.ndarray:
        return np.arange(self.n + 1) / self.n

    @property
    def mesh(self) -> float:
        """|P| = max interval length = 1/n."""
        return 1.0 / self.n

    @classmethod
    def from_knots(cls, knots) -> "Partition":
        knots = np.asarray(knots, dtype=float)
        n = len(knots) - 1
        if n < 1 or not np.allclose(knots, np.arange(n + 1) / n, atol=1e-12):
            raise ValueError("knots must be 0, 1/n, ..., 1 (equal spacing)")
        return cls(n)


# ---------------------------------------------------------------------------
# One-interval cosine/sine solutions of Y'' = A_xi Y
# ---------------------------------------------------------------------------

def _cs_closed(model: CurvatureModel, xi, s):
    """Closed-form (C_xi(s), S_xi(s)); xi (..., d), s scalar or (...,).

    Constant curvature: with omega = sqrt(kappa)|xi| and P the projector onto
    xi,  C = P + cosh(omega s) (I-P)  and  S = s P + sinh(omega s)/omega (I-P);
    flat (or xi = 0) degenerates to C = I, S = s I.
    """
    xi = np.asarray(xi, dtype=float)
    d = model.dim
    s = np.asarray(s, dtype=float)[..., None, None]
    eye = np.eye(d)
    nrm2 = np.sum(xi * xi, axis=-1)[..., None, None]
    if model.kind == "flat":
        shape = np.broadcast_shapes(xi.shape[:-1] + (d, d), s.shape[:-2] + (d, d))
        C = np.broadcast_to(eye, shape).copy()
        S = np.broadcast_to(s * eye, shape).copy()
        return C, S
    safe = np.maximum(nrm2, 1e-300)
    proj = xi[..., :, None] * xi[..., None, :] / safe
    proj = np.where(nrm2 > 0, proj, 0.0)
    a = np.sqrt(model.kappa * nrm2) * s
    C = eye + (np.cosh(a) - 1.0) * (eye - proj)
    S = s * proj + s * geom.sinhc(a) * (eye - proj)
    return C, S


def _cs_closed_derivative(model: CurvatureModel, xi, s):
    """(C'(s), S'(s)) of the closed forms above."""
    xi = np.asarray(xi, dtype=float)
    d = model.dim
    s = np.asarray(s, dtype=float)[..., None, None]
    eye = np.eye(d)
    nrm2 = np.sum(xi * xi, axis=-1)[..., None, None]
    if model.kind == "flat":
        shape = np.broadcast_shapes(xi.shape[:-1] + (d, d), s.shape[:-2] + (d, d))
        return np.zeros(shape), np.broadcast_to(eye, shape).copy()
    safe = np.maximum(nrm2, 1e-300)
    proj = xi[..., :, None] * xi[..., None, :] / safe
    proj = np.where(nrm2 > 0, proj, 0.0)
    omega = np.sqrt(model.kappa * nrm2)
    a = omega * s
    Cp = omega * np.sinh(a) * (eye - proj)
    Sp = proj + np.cosh(a) * (eye - proj)
    return Cp, Sp


def _cs_rk4(model: CurvatureModel, xi, h, substeps):
    """Fixed-step RK4 for Y'' = A_xi Y on [0, h]; returns (C, S, C', S')."""
    d = model.dim
    A = geom.curvature_matrix(model, xi)
    Y = np.hstack([np.eye(d), np.zeros((d, d))])     # values   of (C, S)
    V = np.hstack([np.zeros((d, d)), np.eye(d)])     # slopes   of (C, S)
    dt = h / substeps

    def rhs(y, v):
        return v, A @ y

    for _ in range(substeps):
        k1y, k1v = rhs(Y, V)
        k2y, k2v = rhs(Y + 0.5 * dt * k1y, V + 0.5 * dt * k1v)
        k3y, k3v = rhs(Y + 0.5 * dt * k2y, V + 0.5 * dt * k2v)
        k4y, k4v = rhs(Y + dt * k3y, V + dt * k3v)
        Y = Y + dt / 6.0 * (k1y + 2 * k2y + 2 * k3y + k4y)
        V = V + dt / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v)
    return Y[:, :d], Y[:, d:], V[:, :d], V[:, d:]


def solve_cs_interval(model: CurvatureModel, xi, h, method="closed", substeps=100):
    """Cosine/sine matrix pair (C_xi(h), S_xi(h)) for one interval.

    method "closed" is the production route; "rk4" integrates the same system
    with `substeps` fixed RK4 steps and exists as an independent check.
    """
    xi = np.asarray(xi, dtype=float)
    if not np.all(np.isfinite(xi)):
        raise ValueError("xi must be finite")
    try:
        h = float(h)
    except (TypeError, ValueError):
        raise ValueError("interval length h must be a scalar") from None
    if not np.isfinite(h) or h <= 0:
        raise ValueError("interval length h must be a positive finite scalar")
    if xi.shape != (model.dim,):
        raise ValueError(f"xi must have shape ({model.dim},)")
    if method == "closed":
        C, S = _cs_closed(model, xi, float(h))
        return C, S
    if method == "rk4":
        C, S, _, _ = _cs_rk4(model, xi, float(h), int(substeps))
        return C, S
    raise ValueError(f"unknown method {method!r}")


# ---------------------------------------------------------------------------
# The interval family f_i(s_j) and the mass matrix K
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class JacobiFamily:
    """All interval response matrices of one broken geodesic.

    velocities : (n, d) constant frame velocity per interval (n * increment)
    C, S       : (n+1, d, d) interval solutions at full step 1/n; index i >= 1
                 is interval [s_{i-1}, s_i], index 0 is unused padding
    f          : (n+1, n+1, d, d); f[i, j] = f_i(s_j).  Row 0 is the identity
                 convention; f[i, j] = 0 for j < i.
    K          : (n+1, d, d); K[j] = K(s_j), the running mass matrix
    """

    model: CurvatureModel
    partition: Partition
    velocities: np.ndarray
    C: np.ndarray
    S: np.ndarray
    f: np.ndarray
    K: np.ndarray

    @property
    def n(self) -> int:
        return self.partition.n

    def f_matrix(self, i: int, j: int) -> np.ndarray:
        return self.f[i, j]

    def K_at(self, j: int) -> np.ndarray:
        return self.K[j]

    def f_eval(self, i: int, s: float) -> np.ndarray:
        """f_i(s) at arbitrary s (piecewise between stored knot values)."""
        n, d, delta = self.n, self.model.dim, self.partition.mesh
        if i == 0:
            return np.eye(d)
        if s <= (i - 1) * delta:
            return np.zeros((d, d))
        j = min(int(np.ceil(s / delta - 1e-12)), n)   # interval index holding s
        local = s - (j - 1) * delta
        if j == i:
            _, S = _cs_closed(self.model, self.velocities[i - 1], local)
            return S / delta
        C, _ = _cs_closed(self.model, self.velocities[j - 1], local)
        return C @ self.f[i, j - 1]

    def jacobi_eval(self, slopes, s: float) -> np.ndarray:
        """Piecewise field with value 0 at s=0 and right-slope k_i at s_i."""
        slopes = np.asarray(slopes, dtype=float)
        n, delta = self.n, self.partition.mesh
        j = min(max(int(np.ceil(s / delta - 1e-12)), 1), n)
        J = np.zeros(self.model.dim)
        for l in range(1, j):
            C, S = self.C[l], self.S[l]
            J = C @ J + S @ slopes[l - 1]
        local = s - (j - 1) * delta
        C, S = _cs_closed(self.model, self.velocities[j - 1], local)
        return C @ J + S @ slopes[j - 1]


def build_family(model: CurvatureModel, partition: Partition, increments) -> JacobiFamily:
    """Assemble the interval family from anti-developed increments (n, d)."""
    increments = np.asarray(increments, dtype=float)
    n, d = partition.n, model.dim
    if increments.shape != (n, d):
        raise ValueError(f"increments must have shape ({n}, {d})")
    if not np.all(np.isfinite(increments)):
        raise ValueError("increments must be finite")
    delta = partition.mesh
    velocities = increments / delta

    C = np.zeros((n + 1, d, d))
    S = np.zeros((n + 1, d, d))
    C[0] = np.eye(d)
    C[1:], S[1:] = _cs_closed(model, velocities, delta)

    f = np.zeros((n + 1, n + 1, d, d))
    f[0, :] = np.eye(d)
    for j in range(1, n + 1):
        f[j, j] = S[j] / delta
        if j > 1:
            f[1:j, j] = np.einsum("ab,ibc->iac", C[j], f[1:j, j - 1])

    K = np.zeros((n + 1, d, d))
    for j in range(1, n + 1):
        K[j] = np.einsum("iab,icb->ac", f[1:j + 1, j], f[1:j + 1, n]) / n
    return JacobiFamily(model, partition, velocities, C, S, f, K)


def jacobi_from_slopes(family: JacobiFamily, slopes) -> np.ndarray:
    """Knot values (n+1, d) of the field with right-slopes k_i at the knots.

    Identical to (1/n) sum_i f_{i+1}(s_j) k_i; evaluated by the two-term
    interval recursion J(s_j) = C_j J(s_{j-1}) + S_j k_{j-1}.
    """
    slopes = np.asarray(slopes, dtype=float)
    n, d = family.n, family.model.dim
    if slopes.shape != (n, d):
        raise ValueError(f"slopes must have shape ({n}, {d})")
    J = np.zeros((n + 1, d))
    for j in range(1, n + 1):
        J[j] = family.C[j] @ J[j - 1] + family.S[j] @ slopes[j - 1]
    return J


def slopes_from_knots(family: JacobiFamily, knot_values) -> np.ndarray:
    """Invert jacobi_from_slopes: recover k from J(s_1..s_n) (triangular)."""
    knot_values = np.asarray(knot_values, dtype=float)
    n, d = family.n, family.model.dim
    slopes = np.zeros((n, d))
    for j in range(1, n + 1):
        slopes[j - 1] = _guarded_solve(family.S[j],
                                       knot_values[j] - family.C[j] @ knot_values[j - 1])
    return slopes


def _guarded_solve(mat, rhs, limit=COND_LIMIT, warn_only=False, label="matrix"):
    """LU solve with a condition-number guard."""
    cond = np.linalg.cond(mat)
    if cond > limit:
        if warn_only:
            warnings.warn(f"{label} condition number {cond:.3e} exceeds {limit:.1e}")
        else:
            raise NumericalError(f"{label} condition number {cond:.3e} exceeds {limit:.1e}")
    return np.linalg.solve(mat, rhs)


# ---------------------------------------------------------------------------
# Scalar functionals of a family
# ---------------------------------------------------------------------------

def normal_jacobian(family: JacobiFamily) -> float:
    """sqrt(det K(1)); the endpoint volume factor, always >= 1."""
    sign, logdet = np.linalg.slogdet(family.K[family.n])
    if sign <= 0:
        raise NumericalError("mass matrix K(1) lost positivity")
    return float(np.exp(0.5 * logdet))


def log_normal_jacobian(family: JacobiFamily) -> float:
    sign, logdet = np.linalg.slogdet(family.K[family.n])
    if sign <= 0:
        raise NumericalError("mass matrix K(1) lost positivity")
    return float(0.5 * logdet)


def rho_P(family: JacobiFamily) -> float:
    """Product over the first n-1 intervals of det(S_i(1/n) * n); >= 1."""
    return float(np.exp(log_rho_P(family)))


def log_rho_P(family: JacobiFamily) -> float:
    n = family.n
    total = 0.0
    for i in range(1, n):
        sign, logdet = np.linalg.slogdet(family.S[i] * n)
        if sign <= 0:
            raise NumericalError("sine-type solution lost orientation")
        total += logdet
    return float(total)


def volume_change_Vx(model: CurvatureModel, family: JacobiFamily, xi_x) -> float:
    """Volume factor of pinning the free endpoint to x.

    family : built on a path whose first n-1 intervals are the body (the last
             interval is ignored, so a full pinned-path family works)
    xi_x   : frame coordinates at time 1 - 1/n of the log towards x
    returns sqrt(det(I + L F L^T)) with L = C_x(1/n) S_x(1/n)^{-1} and
    F = (1/n^2) sum_{i=0}^{n-2} f_i(1 - 1/n) f_i(1 - 1/n)^T.
    """
    n, d = family.n, model.dim
    xi_x = np.asarray(xi_x, dtype=float)
    # the tip geodesic covers the log vector in time 1/n, so its velocity
    # is n * xi_x
    Cx, Sx = _cs_closed(model, xi_x / family.partition.mesh, family.partition.mesh)
    L = _guarded_solve(Sx.T, Cx.T, warn_only=True, label="tip sine factor").T
    F = np.eye(d)
    for i in range(1, n - 1):
        F = F + family.f[i, n - 1] @ family.f[i, n - 1].T
    F = F / n ** 2 if n >= 2 else np.zeros((d, d))
    M = np.eye(d) + L @ F @ L.T
    sign, logdet = np.linalg.slogdet(M)
    if sign <= 0:
        raise NumericalError("pinning volume factor lost positivity")
    return float(np.exp(0.5 * logdet))


# ---------------------------------------------------------------------------
# Batched variants (leading sample axes) used by the estimator fast path
# ---------------------------------------------------------------------------

def batch_cs(model: CurvatureModel, increments, delta: float):
    """(C_i(delta), S_i(delta)) for batched increments (..., m, d)."""
    velocities = np.asarray(increments, dtype=float) / delta
    return _cs_closed(model, velocities, delta)


def batch_endpoint_f(model: CurvatureModel, increments, delta: float) -> np.ndarray:
    """f_i evaluated at the right end of the covered span, i = 1..m.

    increments (..., m, d); returns (..., m, d, d) where entry i-1 is
    C_m ... C_{i+1} S_i / delta (suffix products).
    """
    C, S = batch_cs(model, increments, delta)
    m, d = C.shape[-3], C.shape[-1]
    out = np.empty_like(C)
    suffix = np.broadcast_to(np.eye(d), C.shape[:-3] + (d, d)).copy()
    for a in range(m - 1, -1, -1):
        out[..., a, :, :] = suffix @ (S[..., a, :, :] / delta)
        suffix = suffix @ C[..., a, :, :]
    return out


def batch_mass_matrix(f_end, delta: float) -> np.ndarray:
    """K(end) = delta * sum_i f_i f_i^T from stacked f_i (..., m, d, d)."""
    return delta * np.einsum("...iab,...icb->...ac", f_end, f_end)


def batch_log_normal_jacobian(f_end, delta: float) -> np.ndarray:
    """log sqrt(det K(1)) batched; raises if positivity is lost."""
    K = batch_mass_matrix(f_end, delta)
    sign, logdet = np.linalg.slogdet(K)
    if np.any(sign <= 0):
        raise NumericalError("mass matrix K(1) lost positivity in a batch")
    return 0.5 * logdet


def det_identity_check(A, rtol=1e-10):
    """Evaluate det(S^T S) against det(I + A A^T) for the stack S = [I; A].

    A : (k, m) block mapping the m-dim identity slot to k extra rows.
    Returns (lhs, rhs, ok); the two dets agree to rtol in exact arithmetic.
    """
    A = np.asarray(A, dtype=float)
    k, m = A.shape
    S = np.vstack([np.eye(m), A])
    lhs = float(np.linalg.det(S.T @ S))
    rhs = float(np.linalg.det(np.eye(k) + A @ A.T))
    ok = abs(lhs - rhs) <= rtol * max(abs(lhs), abs(rhs), 1.0)
    return lhs, rhs, ok
