"""Transport and continuity equations along perturbed characteristics.

The transport solution is read off the inverse flow, u(t, x) = u0(psi_t(x));
the continuity solution is the particle pushforward, with densities from the
Jacobian form exp(-int div T^w b(dr, Phi_r)).  Both therefore inherit their
accuracy from the flow atlas, and the checks in this module are the ones
that make that inheritance honest: constancy along characteristics, the
weak (Young-transport) residual with its |t-s|^{2 gamma} scaling, exact
mass conservation, and the commutator R^eps(h, g) whose uniform vanishing
is the Lions-style core of the uniqueness argument.

Mollification here is periodic (the fields live on a periodic box): the
compact bump stencil is embedded at the origin of the grid and applied as a
Fourier multiplier, the same discrete kernel used by SpectralDrift.mollified,
so exchanging mollification with averaging is exact to rounding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .gaussian import SamplePath
from .grids import (GridError, ScalarField, SpaceGrid, SpaceTimeField,
                    TimeGrid, mollifier_kernel)
from .yde import FlowAtlas, _DivergenceField
from .young import nonlinear_young_integral


class PdeError(ValueError):
    """Raised for incompatible grids, missing data, or escaped particles."""


# ---------------------------------------------------------------------------
# periodic helpers

def _spectral_gradient(values: np.ndarray, grid: SpaceGrid) -> np.ndarray:
    """d/dx on the periodic box, Nyquist mode zeroed (real output)."""
    k = np.fft.rfftfreq(grid.m, d=grid.h) * 2.0 * math.pi
    mult = 1j * k
    if grid.m % 2 == 0:
        mult[-1] = 0.0
    return np.fft.irfft(np.fft.rfft(values) * mult, n=grid.m)


def _mollify_periodic(values: np.ndarray, grid: SpaceGrid,
                      eps: float) -> np.ndarray:
    """Periodic convolution with the unit-mass bump at scale eps."""
    ker = mollifier_kernel(grid, eps)
    kfull = np.zeros(grid.m)
    half = ker.size // 2
    kfull[np.arange(-half, half + 1) % grid.m] += ker
    return np.fft.irfft(np.fft.rfft(values) * np.fft.rfft(kfull),
                        n=grid.m) * grid.h


def _periodic_interp(values: np.ndarray, grid: SpaceGrid,
                     x: np.ndarray) -> np.ndarray:
    """Quintic-spline evaluation of a periodic grid function at points x."""
    filt = ndimage.spline_filter1d(values, order=5, mode="grid-wrap")
    idx = (np.asarray(x, dtype=float) - (-grid.L)) / grid.h
    return ndimage.map_coordinates(filt, [idx], order=5, mode="grid-wrap",
                                   prefilter=False)


# ---------------------------------------------------------------------------
# transport

@dataclass(frozen=True)
class TransportSolution:
    """u(t, x) = u0(psi_t(x)) on the atlas grid, with its provenance."""

    u: SpaceTimeField
    u0: ScalarField
    atlas: FlowAtlas


def solve_transport(u0: ScalarField, atlas: FlowAtlas) -> TransportSolution:
    """Pull the initial datum back along the inverse flow.

    u0 is interpolated (quintic, periodic) at the stored inverse-flow
    positions, so u(0, .) = u0 holds exactly on the grid and constancy
    along characteristics holds within the atlas scheme tolerance.

    Raises:
        PdeError: non-1d data (the inverse flow is interpolated from the
            monotone flow graph, a 1d construction) or grid mismatch.
    """
    if u0.grid.d != 1 or atlas.x0grid.d != 1:
        raise PdeError("transport solutions are built on 1d atlases")
    nt1 = atlas.phi.shape[0]
    vals = np.empty((nt1, 1, atlas.x0grid.m))
    for i in range(nt1):
        vals[i, 0] = _periodic_interp(u0.values, u0.grid, atlas.psi[i, :, 0])
    u = SpaceTimeField(atlas.tgrid, atlas.x0grid, vals, components=1)
    return TransportSolution(u, u0, atlas)


def characteristic_constancy(sol: TransportSolution) -> float:
    """sup |u(t, Phi_t(x)) - u0(x)| over the atlas trajectories."""
    atlas = sol.atlas
    worst = 0.0
    for i in range(atlas.phi.shape[0]):
        ui = _periodic_interp(sol.u.values[i, 0], sol.u.sgrid,
                              atlas.phi[i, :, 0])
        u0 = _periodic_interp(sol.u0.values, sol.u0.grid, atlas.phi[0, :, 0])
        worst = max(worst, float(np.max(np.abs(ui - u0))))
    return worst


def transport_classical_residual(sol: TransportSolution, A,
                                 stride: int = 16) -> float:
    """sup |du/dt + b~ . grad u| at interior nodes, for smooth drifts.

    The effective drift over a centered window is b~(t_i, x) =
    A_{t_{i-1}, t_{i+1}}(x) / (2 dt); gradients are spectral.  Meaningful
    when the field is differentiable in time (smooth or zero path).
    """
    tg = sol.u.tgrid
    grid = sol.u.sgrid
    worst = 0.0
    for i in range(stride, tg.n - stride + 1, stride):
        t0, t1 = tg.node(i - stride), tg.node(i + stride)
        span = t1 - t0
        du = (sol.u.values[i + stride, 0] - sol.u.values[i - stride, 0]) / span
        drift = A.increment(t0, t1, grid.axis) / span
        grad = _spectral_gradient(sol.u.values[i, 0], grid)
        worst = max(worst, float(np.max(np.abs(du + drift * grad))))
    return worst


def tensor_bump_probes(grid: SpaceGrid, count: int = 8,
                       width: float | None = None) -> list:
    """Compactly supported smooth bumps centered across the box interior."""
    if width is None:
        width = grid.L / count
    centers = np.linspace(-grid.L + 2 * width, grid.L - 2 * width, count)
    out = []
    for c in centers:
        u = np.clip(np.abs(grid.axis - c) / width, 0.0, 1.0)
        vals = np.where(u < 1.0, np.exp(-1.0 / np.maximum(1.0 - u**2, 1e-300)),
                        0.0)
        out.append(ScalarField(grid, vals * math.e))
    return out


@dataclass(frozen=True)
class WeakResidualReport:
    """Scaled weak-formulation residuals over the dyadic (s, t) sweep.

    level_maxima[l] is the max over probes and pairs with gap T / 2^l of
    |<u_{s,t}, phi> - <u_s, div(A_{s,t} phi)>| / |t-s|^{2 gamma}; a genuine
    solution keeps the sequence bounded, a frozen (wrong) one lets it grow
    like |t-s|^{-2 gamma + 1}.
    """

    gamma: float
    levels: int
    level_maxima: tuple

    @property
    def max_residual(self) -> float:
        return max(self.level_maxima)


def transport_weak_residual(sol_u: SpaceTimeField, A, probes=None,
                            levels: int = 4,
                            gamma: float | None = None) -> WeakResidualReport:
    """Test the two-increment weak formulation against the field.

    Accepts the SpaceTimeField of a transport solution (so deliberately
    wrong fields can be probed as negative controls).  gamma defaults to
    A's measured time exponent minus 0.05, the margin that absorbs
    estimation error in the scaling |t-s|^{2 gamma}.
    """
    grid = sol_u.sgrid
    tg = sol_u.tgrid
    if probes is None:
        probes = tensor_bump_probes(grid)
    if gamma is None:
        gamma = min(float(A.gamma_est.exponent), 1.0) - 0.05
    if not 0.0 < gamma <= 1.0:
        raise PdeError(f"need gamma in (0, 1], got {gamma}")
    h = grid.h
    phis = np.stack([p.values for p in probes])
    grad_phis = np.stack([_spectral_gradient(p.values, grid) for p in probes])
    maxima = []
    for lev in range(levels):
        step = tg.n >> lev
        if step < 1 or tg.n % step:
            raise PdeError(f"grid does not support {levels} dyadic levels")
        worst = 0.0
        for i0 in range(0, tg.n, step):
            s, t = tg.node(i0), tg.node(i0 + step)
            du = sol_u.values[i0 + step, 0] - sol_u.values[i0, 0]
            inc = A.increment(s, t, grid.axis)
            jinc = A.jacobian_increment(s, t, grid.axis)[:, 0, 0]
            div_term = jinc * phis + inc * grad_phis
            lhs = h * np.sum(du * phis, axis=1)
            rhs = h * np.sum(sol_u.values[i0, 0] * div_term, axis=1)
            worst = max(worst, float(np.max(np.abs(lhs - rhs)))
                        / (t - s) ** (2.0 * gamma))
        maxima.append(worst)
    return WeakResidualReport(gamma, levels, tuple(maxima))


# ---------------------------------------------------------------------------
# continuity

@dataclass(frozen=True)
class ParticleMeasure:
    """A weighted empirical measure sum_j w_j delta_{x_j}."""

    positions: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        if pos.ndim == 1:
            pos = pos[:, None]
        w = np.asarray(self.weights, dtype=float)
        if w.shape != (pos.shape[0],):
            raise PdeError(f"weights shape {w.shape} does not match "
                           f"{pos.shape[0]} particles")
        if not (np.all(np.isfinite(pos)) and np.all(np.isfinite(w))):
            raise PdeError("particle data must be finite")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "weights", w)

    @property
    def count(self) -> int:
        return self.positions.shape[0]

    @property
    def mass(self) -> float:
        return float(np.sum(self.weights))


@dataclass(frozen=True)
class ContinuityFlow:
    """Particle trajectories under the flow, with optional densities.

    positions has shape (n_t + 1, count, d); weights never change, so
    total mass is conserved exactly by construction.  densities (when a
    starting density was supplied) follow the Jacobian form
    rho_t(Phi_t(x0)) = rho_0(x0) exp(-int_0^t div T^w b(dr, Phi_r)).
    """

    tgrid: TimeGrid
    positions: np.ndarray
    weights: np.ndarray
    densities: np.ndarray | None = None

    def measure_at(self, t: float) -> ParticleMeasure:
        i = self.tgrid.index_of(t)
        return ParticleMeasure(self.positions[i], self.weights)

    @property
    def mass(self) -> float:
        return float(np.sum(self.weights))


def solve_continuity(v0: ParticleMeasure, atlas: FlowAtlas, A=None,
                     density0: np.ndarray | None = None) -> ContinuityFlow:
    """Push the particles forward along the atlas flow.

    Positions are interpolated from the monotone flow graph (1d); weights
    ride along untouched.  If ``density0`` (the initial density at each
    particle) and the field are supplied, per-particle densities are
    emitted via the exp(-int div) Jacobian form, the nonlinear Young
    integral of the divergence along each trajectory.

    Raises:
        PdeError: particles outside the atlas grid, non-1d atlases, or a
            density request without the field.
    """
    if atlas.x0grid.d != 1:
        raise PdeError("particle pushforward is built on 1d atlases")
    x0 = v0.positions[:, 0]
    ax = atlas.phi[0, :, 0]
    if np.min(x0) < ax[0] - 1e-12 or np.max(x0) > ax[-1] + 1e-12:
        raise PdeError("particles outside the atlas grid")
    nt1 = atlas.phi.shape[0]
    pos = np.empty((nt1, v0.count, 1))
    for i in range(nt1):
        pos[i, :, 0] = np.interp(x0, ax, atlas.phi[i, :, 0])
    densities = None
    if density0 is not None:
        if A is None:
            raise PdeError("density emission needs the averaged field")
        rho0 = np.asarray(density0, dtype=float)
        if rho0.shape != (v0.count,):
            raise PdeError("density0 must give one value per particle")
        div_field = _DivergenceField(A)
        densities = np.empty((nt1, v0.count))
        for j in range(v0.count):
            theta = SamplePath(atlas.tgrid, pos[:, j, :], seed=0)
            integral = nonlinear_young_integral(div_field, theta, levels=3)
            densities[:, j] = rho0[j] * np.exp(-integral.values[:, 0])
    return ContinuityFlow(atlas.tgrid, pos, v0.weights.copy(), densities)


def kernel_density_deviation(flow: ContinuityFlow, t: float,
                             bandwidth: float) -> float:
    """Compare the particle KDE with the Jacobian-form densities at time t.

    Gaussian kernel, evaluated at the particle positions themselves;
    returns the max absolute deviation.  Needs densities and enough
    particles that the KDE bias O(bandwidth^2) + noise is below the target
    tolerance.
    """
    if flow.densities is None:
        raise PdeError("flow carries no densities to check against")
    i = flow.tgrid.index_of(t)
    x = flow.positions[i, :, 0]
    kde = np.empty_like(x)
    norm = 1.0 / (math.sqrt(2.0 * math.pi) * bandwidth)
    for j, xj in enumerate(x):
        kde[j] = norm * np.sum(flow.weights
                               * np.exp(-0.5 * ((x - xj) / bandwidth) ** 2))
    return float(np.max(np.abs(kde - flow.densities[i])))


# ---------------------------------------------------------------------------
# commutator

def commutator(h: ScalarField, g: ScalarField, eps: float) -> ScalarField:
    """R^eps(h, g) = (g . grad h)^eps - g . grad(h^eps), periodic, 1d.

    Gradients are spectral and mollification is a Fourier multiplier, so
    convolution and differentiation commute exactly and the two terms
    cancel to rounding for constant g.

    Raises:
        PdeError: mismatched grids or d != 1.
        GridError: eps below the grid spacing (under-resolved mollifier).
    """
    if h.grid != g.grid:
        raise PdeError("h and g must share one grid")
    if h.grid.d != 1:
        raise PdeError("the commutator is implemented for 1d fields")
    grid = h.grid
    grad_h = _spectral_gradient(h.values, grid)
    term1 = _mollify_periodic(g.values * grad_h, grid, eps)
    term2 = g.values * _mollify_periodic(grad_h, grid, eps)
    return ScalarField(grid, term1 - term2)


@dataclass(frozen=True)
class CommutatorSweep:
    """sup |R^eps| along a decreasing eps ladder.

    ``monotone`` tolerates single-step increases up to 20% (the sweep is
    a measured quantity, not an exact inequality); ``final_ratio`` is the
    last sup over the first and is the vanishing certificate.
    """

    eps: tuple
    sups: tuple

    @property
    def monotone(self) -> bool:
        return all(b <= a * 1.2 for a, b in zip(self.sups, self.sups[1:]))

    @property
    def final_ratio(self) -> float:
        return self.sups[-1] / self.sups[0] if self.sups[0] else 0.0


def commutator_vanishing_check(h: ScalarField, g: ScalarField,
                               eps: tuple | None = None) -> CommutatorSweep:
    """Drive eps down a dyadic ladder and record sup |R^eps(h, g)|."""
    if eps is None:
        eps = tuple(h.grid.L * 2.0**-k for k in range(3, 8))
    sups = tuple(float(np.max(np.abs(commutator(h, g, e).values)))
                 for e in eps)
    return CommutatorSweep(tuple(eps), sups)
