"""Young differential equations driven by averaged fields.

The central object is theta_t = theta_0 + int_0^t A(ds, theta_s) for an
averaged field A = T^w b.  The default solver marches the germ
theta_{i+1} = theta_i + A_{t_i, t_{i+1}}(theta_i) on a dyadic ladder of
partitions; coherence of the germ makes the ladder differences contract,
which is simultaneously the convergence proof, the acceptance test, and the
source of the reported scheme tolerance.  Picard iteration of the nonlinear
Young integral is the independent cross-check, not the default.

Flows are solved batched over a grid of initial conditions.  The inverse
flow comes from monotone interpolation of the flow graph (exact affine
inversion for affine fields) and is verified against a solve of the
time-reversed equation, whose driving field over [r1, r2] is minus the
forward field over [T - r2, T - r1].

"Uniqueness" is operationalised: the two schemes must agree within a small
multiple of the measured scheme tolerance under refinement.  Trajectories
that leave the localisation window of A abort the run with an error; they
are never clamped.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, replace

import numpy as np

from ._serial import _pack_f64, _pack_u64, MAGIC, format_float
from .averaging import AveragingError
from .gaussian import SamplePath, sample_fbm_exact
from .grids import SpaceGrid, TimeGrid
from .young import YoungError, linear_young_integral, nonlinear_young_integral


class YdeError(ValueError):
    """Raised for non-convergent solves, window exits, and bad problems."""


_SCHEMES = ("euler_sewing", "picard")
_LADDER_RUNGS = 3  # solve at n/4, n/2, n and extrapolate


@dataclass(frozen=True)
class YdeProblem:
    """A Young differential equation: field, initial point, grid, scheme.

    The solvability condition gamma * (1 + nu) > 1 is checked on A's
    measured time exponent with nu = 1 (Lipschitz spatial evaluation); it is
    the regime in which the germ ladder is guaranteed to contract.  ``tol``
    caps the accepted extrapolation remainder and the Picard stopping
    increment.
    """

    A: object
    theta0: np.ndarray
    tgrid: TimeGrid
    scheme: str = "euler_sewing"
    tol: float = 1e-6

    def __post_init__(self):
        x0 = np.atleast_1d(np.asarray(self.theta0, dtype=float))
        if x0.ndim != 1 or x0.size != self.A.d:
            raise YdeError(
                f"theta0 shape {x0.shape} does not match field dimension "
                f"{self.A.d}")
        object.__setattr__(self, "theta0", x0)
        if self.scheme not in _SCHEMES:
            raise YdeError(f"unknown scheme {self.scheme!r}; "
                           f"choose from {_SCHEMES}")
        if not self.tol > 0:
            raise YdeError(f"tol must be positive, got {self.tol}")
        gamma = min(float(self.A.gamma_est.exponent), 1.0)
        if gamma * 2.0 <= 1.0:
            raise YdeError(
                f"Young condition violated: gamma * (1 + nu) = "
                f"{gamma * 2.0:.3f} <= 1 for the measured time exponent "
                f"{gamma:.3f}")


@dataclass(frozen=True)
class YdeSolveReport:
    """A solution path with the diagnostics the acceptance checks read.

    ``scheme_tol`` is the estimated distance to the refinement limit
    (extrapolation remainder for euler_sewing, final contraction increment
    for picard); ``level_differences`` are the raw ladder gaps, coarsest
    first.
    """

    path: SamplePath
    scheme: str
    scheme_tol: float
    level_differences: tuple


def _step_increment(A, t0: float, t1: float, x: np.ndarray) -> np.ndarray:
    """One vectorized germ step, with window exits promoted to YdeError."""
    pts = x[:, 0] if A.d == 1 else x
    try:
        inc = A.increment(t0, t1, pts)
    except AveragingError as exc:
        raise YdeError(
            f"trajectory left the field's valid window at t = {t0:.6g}: "
            f"{exc}") from exc
    return inc[:, None] if A.d == 1 else inc


def _euler_ladder(A, x0: np.ndarray, tgrid: TimeGrid, tol: float):
    """March the Euler germ on the dyadic ladder and extrapolate.

    x0 has shape (batch, d).  Returns (values, scheme_tol, diffs) where
    values has shape (n + 1, batch, d).  Raises "no Young solution
    detected" when the ladder refuses to contract.
    """
    n = tgrid.n
    if n % (1 << (_LADDER_RUNGS - 1)) or n < (1 << (_LADDER_RUNGS - 1)) * 2:
        raise YdeError(
            f"grid with n = {n} does not support the refinement ladder")
    batch, d = x0.shape
    levels = []
    for k in range(_LADDER_RUNGS):
        step = 1 << (_LADDER_RUNGS - 1 - k)
        nk = n // step
        theta = np.empty((nk + 1, batch, d))
        theta[0] = x0
        for i in range(nk):
            t0 = tgrid.node(i * step)
            t1 = tgrid.node((i + 1) * step)
            theta[i + 1] = theta[i] + _step_increment(A, t0, t1, theta[i])
        levels.append(theta)
    diffs = []
    for k in range(_LADDER_RUNGS - 1):
        coarse, fine = levels[k], levels[k + 1]
        diffs.append(float(np.max(np.abs(fine[::2] - coarse))))
    scale = float(np.max(np.abs(levels[-1]))) or 1.0
    if diffs[-2] > 1e-14 * scale:
        ratio = diffs[-1] / diffs[-2]
        if ratio >= 0.95 and diffs[-1] > tol:
            raise YdeError(
                f"no Young solution detected: refinement ladder stalled "
                f"with ratio {ratio:.3f}")
        q = min(ratio, 0.9)
    else:
        q = 0.0
    fine = levels[-1]
    if q > 0.0 and diffs[-1] > 1e-14 * scale:
        gap = np.empty_like(fine)
        gap[::2] = fine[::2] - levels[-2]
        gap[1::2] = 0.5 * (gap[:-1:2] + gap[2::2])
        values = fine + (q / (1.0 - q)) * gap
        scheme_tol = max(float(diffs[-1] * q / (1.0 - q)), 1e-15)
    else:
        values = fine
        scheme_tol = max(float(diffs[-1]), 1e-15)
    return values, scheme_tol, tuple(diffs)


def _solve_picard(p: YdeProblem, max_iter: int = 60):
    """Fixed-point iteration theta <- theta0 + int A(ds, theta_s)."""
    n = p.tgrid.n
    d = p.theta0.size
    vals = np.tile(p.theta0, (n + 1, 1))
    theta = SamplePath(p.tgrid, vals, seed=0, kind="yde")
    last_change = math.inf
    for _ in range(max_iter):
        try:
            integral = nonlinear_young_integral(p.A, theta, levels=3)
        except AveragingError as exc:
            raise YdeError(f"trajectory left the field's valid window: "
                           f"{exc}") from exc
        new_vals = p.theta0[None, :] + integral.values.reshape(n + 1, d)
        last_change = float(np.max(np.abs(new_vals - theta.values)))
        theta = SamplePath(p.tgrid, new_vals, seed=0, kind="yde")
        if last_change < p.tol:
            return theta, last_change
    raise YdeError(
        f"no Young solution detected: Picard iteration stalled with "
        f"change {last_change:.3e} after {max_iter} sweeps")


def solve_yde_report(p: YdeProblem) -> YdeSolveReport:
    """Solve the YDE and keep the convergence diagnostics.

    euler_sewing marches the germ on partitions of n/4, n/2 and n
    intervals, requires the ladder gaps to contract, and returns the
    Richardson extrapolation of the two finest runs.  picard iterates the
    nonlinear Young integral from the constant path until the C^0 change
    drops below ``p.tol``.

    Raises:
        YdeError: "no Young solution detected" when refinement stalls;
            window exits abort with the offending time in the message.
    """
    if p.scheme == "picard":
        theta, change = _solve_picard(p)
        return YdeSolveReport(theta, p.scheme, max(change, 1e-15), (change,))
    values, scheme_tol, diffs = _euler_ladder(
        p.A, p.theta0[None, :], p.tgrid, p.tol)
    path = SamplePath(p.tgrid, values[:, 0, :], seed=0, kind="yde")
    return YdeSolveReport(path, p.scheme, scheme_tol, diffs)


def solve_yde(p: YdeProblem) -> SamplePath:
    """The solution path theta of the problem (see solve_yde_report)."""
    return solve_yde_report(p).path


# ---------------------------------------------------------------------------
# a-priori bound measurement

@dataclass(frozen=True)
class AprioriReport:
    """Measured ingredients of the a-priori estimate.

    ratio = [theta]_{C^gamma} / (1 + ||A||^2) is the quantity whose
    stability across problem families the existence theorem's constant
    controls; ``field_norm`` adds the sup increment rate and the Lipschitz
    increment rate of A over a dyadic (s, t) sweep.
    """

    ratio: float
    path_seminorm: float
    field_norm: float
    gamma: float


def _dyadic_pairs(tgrid: TimeGrid, max_pairs: int = 256):
    """(s, t) node-pair arrays per dyadic level, capped at max_pairs each."""
    n = tgrid.n
    out = []
    step = n
    while step >= 1:
        idx = np.arange(0, n - step + 1, step)
        if idx.size > max_pairs:
            idx = idx[:: int(np.ceil(idx.size / max_pairs))]
        nodes = tgrid.nodes
        out.append((nodes[idx], nodes[idx + step]))
        if n // step >= 1024:
            break
        step //= 2
    return out


def _field_gamma_norm(A, gamma: float, radius: float, other=None) -> float:
    """sup |A_{s,t}(x)| / |t-s|^gamma + the same for the Jacobian.

    With ``other`` given, measures the field difference A - other instead;
    probes 33 positions across [-radius, radius].
    """
    xs = np.linspace(-radius, radius, 33)
    if A.d > 1:
        xs = np.column_stack([xs] * A.d)
    best0 = best1 = 0.0
    for s, t in _dyadic_pairs(A.tgrid):
        span = float(t[0] - s[0]) ** gamma
        for x in xs:
            pos = np.full(s.size, x) if A.d == 1 else np.tile(x, (s.size, 1))
            inc = A.increment(s, t, pos)
            jac = A.jacobian_increment(s, t, pos)
            if other is not None:
                inc = inc - other.increment(s, t, pos)
                jac = jac - other.jacobian_increment(s, t, pos)
            best0 = max(best0, float(np.max(np.abs(inc))) / span)
            best1 = max(best1, float(np.max(np.abs(jac))) / span)
    return best0 + best1


def apriori_report(p: YdeProblem, theta: SamplePath,
                   gamma: float | None = None) -> AprioriReport:
    """Measure [theta]_{C^gamma} against 1 + ||A||^2 for the solved path."""
    if gamma is None:
        gamma = min(float(p.A.gamma_est.exponent), 1.0)
    seminorm = theta.holder_seminorm(gamma)
    radius = float(np.max(np.abs(theta.values))) + 0.5
    if math.isfinite(p.A.window_radius):
        radius = min(radius, p.A.window_radius)
    norm = _field_gamma_norm(p.A, gamma, radius)
    return AprioriReport(seminorm / (1.0 + norm**2), seminorm, norm, gamma)


# ---------------------------------------------------------------------------
# comparison of solutions

@dataclass(frozen=True)
class ComparisonReport:
    """Distances between two solves and the stability ratio.

    ``ratio`` divides the sup distance of the solutions by
    |theta0_1 - theta0_2| + the measured C^gamma-Lipschitz distance of the
    fields, the shape of the comparison principle; ``holder_ratio`` uses
    the full C^gamma norm (sup + seminorm) in the numerator.
    """

    ratio: float
    holder_ratio: float
    sup_difference: float
    seminorm_difference: float
    field_distance: float
    theta0_distance: float


def compare_solutions(A1, A2, theta0_1, theta0_2, tgrid: TimeGrid,
                      scheme: str = "euler_sewing",
                      tol: float = 1e-6) -> ComparisonReport:
    """Solve both problems and measure the comparison-principle ratio."""
    r1 = solve_yde_report(YdeProblem(A1, theta0_1, tgrid, scheme, tol))
    r2 = solve_yde_report(YdeProblem(A2, theta0_2, tgrid, scheme, tol))
    gamma = min(float(A1.gamma_est.exponent), float(A2.gamma_est.exponent),
                1.0)
    diff = r1.path.values - r2.path.values
    sup = float(np.max(np.abs(diff)))
    semi = SamplePath(tgrid, diff, seed=0).holder_seminorm(gamma)
    x0_dist = float(np.max(np.abs(r1.path.values[0] - r2.path.values[0])))
    radius = float(np.max(np.abs(np.stack(
        [r1.path.values, r2.path.values])))) + 0.5
    for A in (A1, A2):
        if math.isfinite(A.window_radius):
            radius = min(radius, A.window_radius)
    fdist = 0.0 if A1 is A2 else _field_gamma_norm(A1, gamma, radius, A2)
    den = x0_dist + fdist
    if den == 0.0:
        ratio = 0.0 if sup == 0.0 else math.inf
        hratio = 0.0 if sup + semi == 0.0 else math.inf
    else:
        ratio = sup / den
        hratio = (sup + semi) / den
    return ComparisonReport(ratio, hratio, sup, semi, fdist, x0_dist)


# ---------------------------------------------------------------------------
# flows

@dataclass(frozen=True)
class _ReversedField:
    """The driving field of the time-reversed equation.

    For eta_u = theta_{T-u} the germ over [u1, u2] is minus the forward
    increment over [T - u2, T - u1]; for our time-independent drifts this
    is exactly averaging along the reversed path w~_t = w_{T-t}.
    """

    base: object
    T: float

    @property
    def d(self) -> int:
        return self.base.d

    @property
    def gamma_est(self):
        return self.base.gamma_est

    @property
    def window_radius(self) -> float:
        return self.base.window_radius

    @property
    def tgrid(self) -> TimeGrid:
        return self.base.tgrid

    def increment(self, s, t, x):
        return -self.base.increment(self.T - np.asarray(t),
                                    self.T - np.asarray(s), x)

    def jacobian_increment(self, s, t, x):
        return -self.base.jacobian_increment(self.T - np.asarray(t),
                                             self.T - np.asarray(s), x)


@dataclass(frozen=True)
class FlowAtlas:
    """The flow solved from a grid of initial conditions.

    phi has shape (n_t + 1, batch, d) with phi[0] the initial grid; dphi is
    the spatial Jacobian per node (finite differences of phi until
    variational_derivative replaces it with the linear-YDE solution, see
    ``dphi_source``); jac = det(dphi); psi holds the inverse flow evaluated
    at the same grid.  ``inverse_deviation`` is the measured mismatch of
    the interpolated inverse against an independent solve of the
    time-reversed equation at the final time.
    """

    x0grid: SpaceGrid
    tgrid: TimeGrid
    phi: np.ndarray
    dphi: np.ndarray
    jac: np.ndarray
    psi: np.ndarray
    scheme_tol: float
    inverse_deviation: float
    dphi_source: str = "fd"
    dphi_fd_deviation: float = math.nan

    @property
    def points(self) -> np.ndarray:
        return self.phi[0]


def _grid_points(x0grid: SpaceGrid) -> np.ndarray:
    if x0grid.d == 1:
        return x0grid.axis[:, None]
    X, Y = np.meshgrid(x0grid.axis, x0grid.axis, indexing="ij")
    return np.column_stack([X.ravel(), Y.ravel()])


def _fd_jacobian(phi: np.ndarray, x0grid: SpaceGrid) -> np.ndarray:
    """Central finite differences of the flow in its initial condition."""
    nt1, batch, d = phi.shape
    if d == 1:
        dphi = np.gradient(phi[:, :, 0], x0grid.axis, axis=1)
        return dphi[:, :, None, None]
    m = x0grid.m
    cube = phi.reshape(nt1, m, m, d)
    out = np.empty((nt1, m, m, d, 2))
    out[..., 0] = np.gradient(cube, x0grid.axis, axis=1)
    out[..., 1] = np.gradient(cube, x0grid.axis, axis=2)
    return out.reshape(nt1, batch, d, 2)


def _affine_inverse(A, phi: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Exact inverse flow for affine fields: invert x -> M_t x + c_t."""
    nt1, batch, d = phi.shape
    span = A.tgrid  # noqa: F841  (affine flows are global; no window)
    psi = np.empty_like(phi)
    x0 = points[0]
    x1 = points[min(1, batch - 1)]
    for i in range(nt1):
        # recover the affine map from d+1 trajectories
        base = phi[i, 0]
        cols = []
        for k in range(d):
            probe = next(j for j in range(batch)
                         if abs(points[j, k] - x0[k]) > 1e-12)
            cols.append((phi[i, probe] - base) /
                        (points[probe, k] - x0[k]))
        M = np.column_stack(cols) if d > 1 else np.array([[cols[0][0]]])
        c = base - M @ x0
        psi[i] = np.linalg.solve(M, (points - c).T).T
    return psi


def compute_flow(A, x0grid: SpaceGrid, tgrid: TimeGrid,
                 tol: float = 1e-6) -> FlowAtlas:
    """Solve the flow from every grid point and assemble the atlas.

    The batch of initial conditions marches through the same Euler ladder
    as a single solve.  The inverse flow is obtained by monotone
    interpolation of the flow graph (d = 1) or exact affine inversion, and
    verified at the final time against an independent solve of the
    time-reversed equation started from the forward endpoints.

    Raises:
        YdeError: "flow inversion failed" when that verification exceeds
            10x the measured scheme tolerance; also if the Jacobian loses
            positivity (under-resolved flow).
    """
    points = _grid_points(x0grid)
    YdeProblem(A, points[0], tgrid, "euler_sewing", tol)  # validates regime
    phi, scheme_tol, _ = _euler_ladder(A, points, tgrid, tol)
    dphi = _fd_jacobian(phi, x0grid)
    jac = np.linalg.det(dphi)
    if float(np.min(jac)) <= 0.0:
        raise YdeError("flow Jacobian lost positivity; refine the grid")

    affine = getattr(A, "field", None) is None and A.derivative_stack == ()
    if affine:
        psi = _affine_inverse(A, phi, points)
    elif A.d == 1:
        psi = np.empty_like(phi)
        ax = points[:, 0]
        for i in range(phi.shape[0]):
            graph = phi[i, :, 0]
            if np.any(np.diff(graph) <= 0):
                raise YdeError("flow inversion failed: flow graph is not "
                               "monotone at this resolution")
            psi[i, :, 0] = np.interp(ax, graph, ax)
    else:
        raise YdeError("inverse flow needs a 1d field or an affine field")

    # independent check: the reversed equation from the forward endpoints
    rev = _ReversedField(A, tgrid.t1)
    back, _, _ = _euler_ladder(rev, phi[-1], tgrid, tol)
    inv_dev = float(np.max(np.abs(back[-1] - points)))
    if inv_dev > 10.0 * max(scheme_tol, tol):
        raise YdeError(
            f"flow inversion failed: reversed solve misses the initial "
            f"points by {inv_dev:.3e} > 10x tolerance")
    return FlowAtlas(x0grid, tgrid, phi, dphi, jac, psi, scheme_tol, inv_dev)


def flow_property_check(A, atlas: FlowAtlas, u: float | None = None):
    """Restart the flow at time u from Phi(0, u, x) and measure the gap.

    Returns (max deviation, per-point deviations at the final time); the
    self-consistency contract is deviation < 5x the scheme tolerance.
    """
    tg = atlas.tgrid
    iu = tg.n // 2 if u is None else tg.index_of(u)
    sub = TimeGrid(tg.node(iu), tg.t1, tg.n - iu)
    restart, _, _ = _euler_ladder(A, atlas.phi[iu], sub, atlas.scheme_tol)
    dev = np.abs(restart - atlas.phi[iu:])
    per_point = dev[-1].max(axis=-1)
    return float(dev.max()), per_point


# ---------------------------------------------------------------------------
# variational equation, Jacobian identity, second variation

def _jacobian_path(A, atlas: FlowAtlas) -> np.ndarray:
    """V_t = int_0^t T^w Db(dr, Phi_r), cumulated per grid point."""
    tg = atlas.tgrid
    nt1, batch, d = atlas.phi.shape
    V = np.zeros((nt1, batch, d, d))
    for i in range(nt1 - 1):
        x = atlas.phi[i, :, 0] if d == 1 else atlas.phi[i]
        V[i + 1] = V[i] + A.jacobian_increment(tg.node(i), tg.node(i + 1), x)
    return V


def variational_derivative(A, atlas: FlowAtlas, tol: float = 1e-10,
                           max_iter: int = 40) -> FlowAtlas:
    """Replace the atlas Jacobian with the linear-YDE solution for DPhi.

    Solves DPhi_t = I + int_0^t (T^w Db)(dr, Phi_r) DPhi_r by Picard
    iteration whose every sweep is a sewn linear Young integral against the
    matrix path V = int T^w Db(dr, Phi_r), vectorized across the atlas
    batch.  The previous (finite-difference) dphi is kept as the
    cross-validation reference in ``dphi_fd_deviation`` (interior points
    only; FD is one-sided at the grid edge).
    """
    tg = atlas.tgrid
    nt1, batch, d = atlas.phi.shape
    V = _jacobian_path(A, atlas)
    vpath = SamplePath(tg, V.reshape(nt1, batch * d * d), seed=0)
    eye = np.broadcast_to(np.eye(d), (nt1, batch, d, d))

    def product(m_s, dV):
        m = m_s.reshape(-1, batch, d, d)
        dv = dV.reshape(-1, batch, d, d)
        return np.einsum("xbij,xbjk->xbik", dv, m).reshape(m_s.shape)

    # Euler warm start, then sewn Picard sweeps to the fixed point
    M = np.empty((nt1, batch, d, d))
    M[0] = np.eye(d)
    dV = np.diff(V, axis=0)
    for i in range(nt1 - 1):
        M[i + 1] = M[i] + np.einsum("bij,bjk->bik", dV[i], M[i])
    for _ in range(max_iter):
        f = SamplePath(tg, M.reshape(nt1, batch * d * d), seed=0)
        integral = linear_young_integral(f, vpath, levels=3, product=product)
        new = eye + integral.values.reshape(nt1, batch, d, d)
        change = float(np.max(np.abs(new - M)))
        M = new
        if change < tol:
            break
    else:
        raise YdeError(
            f"variational linear YDE did not converge (last change "
            f"{change:.3e})")
    interior = slice(2, batch - 2) if atlas.x0grid.d == 1 else slice(None)
    fd_dev = float(np.max(np.abs(M[:, interior] - atlas.dphi[:, interior])))
    return replace(atlas, dphi=M, jac=np.linalg.det(M),
                   dphi_source="variational", dphi_fd_deviation=fd_dev)


@dataclass(frozen=True)
class _DivergenceField:
    """Adapter exposing div T^w b as a scalar averaged field."""

    base: object

    @property
    def gamma_est(self):
        return self.base.gamma_est

    @property
    def window_radius(self) -> float:
        return self.base.window_radius

    def increment(self, s, t, x):
        return self.base.divergence_increment(s, t, x)


def jacobian_identity_check(A, atlas: FlowAtlas) -> float:
    """max |det DPhi - exp(int div T^w b(ds, Phi))| over the atlas.

    The exponent is the nonlinear Young integral of the divergence field
    along each trajectory; agreement of the two routes is the Jacobian
    identity.  The two-sided bound C^{-1} <= J Phi <= C holds with
    C = max(sup jac, 1/inf jac), which positivity (checked at solve time)
    keeps finite.
    """
    div_field = _DivergenceField(A)
    tg = atlas.tgrid
    worst = 0.0
    for b in range(atlas.phi.shape[1]):
        theta = SamplePath(tg, atlas.phi[:, b, :], seed=0)
        integral = nonlinear_young_integral(div_field, theta, levels=3)
        z = np.exp(integral.values[:, 0])
        worst = max(worst, float(np.max(np.abs(z - atlas.jac[:, b]))))
    return worst


@dataclass(frozen=True)
class SecondVariationReport:
    """D^2 Phi per (t, grid point) with the ladder's refinement gap."""

    values: np.ndarray
    refinement_gap: float


def second_variation(A, atlas: FlowAtlas) -> SecondVariationReport:
    """Solve the k = 2 variational equation along the stored flow.

    D^2 Phi obeys a linear YDE with forcing: its increments are
    J dN = (T^w Db)(dr, Phi) D^2 Phi + (T^w D^2 b)(dr, Phi)[DPhi, DPhi].
    Marched at the stored resolution and at half resolution; the gap is
    reported so callers can judge the scheme error.
    """
    tg = atlas.tgrid
    nt1, batch, d = atlas.phi.shape

    def march(step: int) -> np.ndarray:
        nk = (nt1 - 1) // step
        N = np.zeros((nk + 1, batch, d, d, d))
        for i in range(nk):
            i0, i1 = i * step, (i + 1) * step
            x = atlas.phi[i0, :, 0] if d == 1 else atlas.phi[i0]
            J = A.jacobian_increment(tg.node(i0), tg.node(i1), x)
            Hs = A.hessian_increment(tg.node(i0), tg.node(i1), x)
            M = atlas.dphi[i0]
            N[i + 1] = (N[i] + np.einsum("xae,xebc->xabc", J, N[i])
                        + np.einsum("xaef,xeb,xfc->xabc", Hs, M, M))
        return N

    fine = march(1)
    coarse = march(2)
    gap = float(np.max(np.abs(fine[::2] - coarse)))
    return SecondVariationReport(fine, gap)


# ---------------------------------------------------------------------------
# Peano regularisation demonstration

@dataclass(frozen=True)
class PeanoReport:
    """Branching vs noise-restored uniqueness for b(x) = sign(x)|x|^kappa.

    ``separation_w0`` is the final-time gap between the two w = 0 branches
    seeded at +/- 1e-12 (classical non-uniqueness leaves it order one);
    ``coincidence_rate`` the fraction of fBm seeds whose two seeded runs
    stay within 1e-3 of each other in sup norm.
    """

    kappa: float
    hurst: float
    n_seeds: int
    separation_w0: float
    branch_value: float
    coincidence_rate: float
    tolerance: float = 1e-3


def _euler_perturbed(kappa: float, x0: float, w: np.ndarray,
                     dt: float) -> np.ndarray:
    out = np.empty(w.size)
    out[0] = x0
    x = x0
    for i in range(w.size - 1):
        x = x + math.copysign(abs(x) ** kappa, x) * dt + (w[i + 1] - w[i])
        out[i + 1] = x
    return out


def peano_experiment(kappa: float, hurst: float, seeds: int = 50,
                     n_time: int = 4096, t_final: float = 1.0,
                     base_seed: int = 0) -> PeanoReport:
    """Two seeded Euler runs per driver: do the branches merge under noise?

    With w = 0 the equation x' = sign(x)|x|^kappa from x0 = +/- 1e-12
    picks distinct branches (the classical Peano funnel); an fBm
    perturbation with small H restores uniqueness pathwise, so the two
    runs should coincide for the vast majority of seeds.
    """
    if not 0.0 < kappa <= 1.0:
        raise YdeError(f"need kappa in (0, 1], got {kappa}")
    if not 0.0 < hurst < 1.0:
        raise YdeError(f"need hurst in (0, 1), got {hurst}")
    if seeds < 1:
        raise YdeError("need at least one seed")
    tg = TimeGrid(0.0, t_final, n_time)
    dt = tg.dt
    zero = np.zeros(n_time + 1)
    plus = _euler_perturbed(kappa, 1e-12, zero, dt)
    minus = _euler_perturbed(kappa, -1e-12, zero, dt)
    separation = float(abs(plus[-1] - minus[-1]))
    coincide = 0
    for s in range(seeds):
        w = sample_fbm_exact(hurst, tg, seed=base_seed + s).values[:, 0]
        a = _euler_perturbed(kappa, 1e-12, w, dt)
        b = _euler_perturbed(kappa, -1e-12, w, dt)
        if float(np.max(np.abs(a - b))) < 1e-3:
            coincide += 1
    return PeanoReport(kappa, hurst, seeds, separation, float(plus[-1]),
                       coincide / seeds)


# ---------------------------------------------------------------------------
# serialization

_KIND_ATLAS = 4


def save_flow_atlas(atlas: FlowAtlas, directory, basename: str = "atlas",
                    flow_deviation: np.ndarray | None = None) -> tuple:
    """Write the atlas as flat binary plus a CSV summary.

    The binary holds phi, dphi, jac, psi row-major after a header; the CSV
    has one row per grid point: x0, Phi_T, J Phi_T and (when supplied) the
    per-point flow-property deviation.  Returns the two paths written.
    """
    os.makedirs(directory, exist_ok=True)
    nt1, batch, d = atlas.phi.shape
    bin_path = os.path.join(directory, basename + ".bin")
    with open(bin_path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(_pack_u64(_KIND_ATLAS, d, atlas.x0grid.m, nt1 - 1, batch))
        fh.write(_pack_f64(atlas.x0grid.L, atlas.tgrid.t0, atlas.tgrid.t1,
                           atlas.scheme_tol))
        for arr in (atlas.phi, atlas.dphi, atlas.jac, atlas.psi):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    csv_path = os.path.join(directory, basename + ".csv")
    dev = (np.full(batch, math.nan) if flow_deviation is None
           else np.asarray(flow_deviation, dtype=float))
    cols = ([f"x0_{k + 1}" for k in range(d)]
            + [f"phi_T_{k + 1}" for k in range(d)]
            + ["jac_T", "max_flow_deviation"])
    with open(csv_path, "w", newline="") as fh:
        fh.write(",".join(cols) + "\n")
        for b in range(batch):
            cells = ([format_float(v) for v in atlas.phi[0, b]]
                     + [format_float(v) for v in atlas.phi[-1, b]]
                     + [format_float(atlas.jac[-1, b]), format_float(dev[b])])
            fh.write(",".join(cells) + "\n")
    return bin_path, csv_path
