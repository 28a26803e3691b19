"""Sewing-lemma integration and (non)linear Young integrals.

A germ is a two-parameter family Gamma_{s,t}; its sewn integral is the limit
of Riemann-Stieltjes-type sums over refining partitions.  Coherence of the
germ (delta Gamma small of order beta > 1) makes the dyadic level differences
contract geometrically with ratio 2^{1-beta}, which is both the convergence
proof and the measurement this module reports.

The nonlinear Young integral int_0^t A(ds, theta_s) is the sewn integral of
the germ Gamma_{s,t} = A_{s,t}(theta_s); it exists when the time exponent
gamma of A, its spatial order nu, and the path exponent rho of theta satisfy
gamma + nu * rho > 1.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .gaussian import SamplePath
from .grids import TimeGrid


class YoungError(ValueError):
    """Raised for incoherent germs or violated exponent conditions."""


@dataclass(frozen=True)
class Germ:
    """Two-parameter germ Gamma : (s, t) -> values.

    evaluator must be vectorized: called with equal-length arrays (s, t) it
    returns an array of shape (len(s), ...) of increment values.  gamma is
    the claimed first-order exponent (|Gamma_{s,t}| <~ |t-s|^gamma), beta the
    claimed coherence exponent; beta > 1 is the sewing hypothesis and is
    enforced as a measured contraction, not assumed.
    """

    evaluator: Callable[[np.ndarray, np.ndarray], np.ndarray]
    gamma: float
    beta: float


@dataclass(frozen=True)
class YoungIntegral:
    """A sewn integral path with its convergence diagnostics.

    local_error_constant is the measured sup over dyadic pairs of
    |(I Gamma)_{s,t} - Gamma_{s,t}| / |t-s|^beta; contraction_ratio the
    median measured ratio of successive dyadic level differences
    (theoretical value 2^{1-beta}); level_differences the sup-norm
    differences themselves, coarsest first.
    """

    path: SamplePath
    local_error_constant: float
    contraction_ratio: float
    level_differences: tuple

    @property
    def values(self) -> np.ndarray:
        return self.path.values


def _riemann_sums(germ: Germ, nodes: np.ndarray, step: int) -> np.ndarray:
    """Cumulative germ sums over the partition using every ``step``-th node."""
    s = nodes[:-1:step]
    t = nodes[step::step]
    if t.size < s.size:
        s = s[: t.size]
    incs = np.asarray(germ.evaluator(s, t), dtype=float)
    out = np.zeros((s.size + 1,) + incs.shape[1:])
    np.cumsum(incs, axis=0, out=out[1:])
    return out


def sew(germ: Germ, tgrid: TimeGrid, levels: int = 4) -> YoungIntegral:
    """Sew a germ over tgrid by compensated dyadic refinement.

    Riemann sums are formed on the dyadic ladder of sub-partitions with
    steps 2^{levels-1}, ..., 2, 1; successive level differences must
    contract when the germ claims beta > 1, and the limit is estimated by
    Richardson extrapolation from the two finest levels using the measured
    ratio.  Germs with beta <= 1 carry no coherence claim: the finest sums
    are returned as-is with diagnostics.

    Args:
        germ: the two-parameter increment family.
        tgrid: output grid; n must be divisible by 2^{levels-1}.
        levels: number of dyadic levels (>= 3 so a ratio can be measured).

    Returns:
        YoungIntegral whose path starts at 0 and lives on tgrid.

    Raises:
        YoungError: "germ not coherent" when beta > 1 is claimed but the
            measured level-difference ratio is >= 0.95; also for grids not
            supporting the requested ladder.
    """
    if levels < 3:
        raise YoungError("sewing needs at least 3 dyadic levels")
    n = tgrid.n
    if n % (1 << (levels - 1)) != 0:
        raise YoungError(
            f"grid with n = {n} does not support {levels} dyadic levels"
        )
    nodes = tgrid.nodes
    sums = [_riemann_sums(germ, nodes, 1 << (levels - 1 - k))
            for k in range(levels)]
    coarse_n = n >> (levels - 1)
    diffs = []
    for k in range(levels - 1):
        # compare levels k and k+1 on the coarsest partition's nodes
        a = sums[k + 1][:: (sums[k + 1].shape[0] - 1) // coarse_n]
        b = sums[k][:: (sums[k].shape[0] - 1) // coarse_n]
        diffs.append(float(np.max(np.abs(a - b))))
    scale = float(np.max(np.abs(sums[-1]))) or 1.0
    # cumulative sums of n cells carry up to ~n*eps relative roundoff, so
    # level differences below that are noise, not a contraction signal
    floor = max(1e-14, n * np.finfo(float).eps) * scale
    nonzero = [d for d in diffs if d > floor]
    if len(nonzero) >= 2:
        ratios = [nonzero[i + 1] / nonzero[i] for i in range(len(nonzero) - 1)]
        ratio = float(np.median(ratios))
    else:
        ratio = 0.0
    if germ.beta > 1.0 and ratio >= 0.95:
        raise YoungError(
            f"germ not coherent: dyadic differences contract with ratio "
            f"{ratio:.3f} >= 0.95 (claimed beta = {germ.beta:g})"
        )
    fine = sums[-1]
    if germ.beta > 1.0 and diffs[-1] > floor:
        # Richardson: I ~ S_L + q/(1-q) (S_L - S_{L-1}), measured q
        q = min(ratio, 0.9)
        coarse = sums[-2]
        d_half = fine[::2] - coarse
        d_full = np.empty_like(fine)
        d_full[::2] = d_half
        d_full[1::2] = 0.5 * (d_half[:-1] + d_half[1:])
        values = fine + (q / (1.0 - q)) * d_full
    else:
        values = fine
    flat = values.reshape(values.shape[0], -1)
    path = SamplePath(tgrid, flat, seed=0, kind="generic")
    # local error constant over all dyadic pairs
    const = 0.0
    for k in range(levels):
        step = 1 << (levels - 1 - k)
        s = nodes[:-1:step]
        t = nodes[step::step]
        if t.size < s.size:
            s = s[: t.size]
        g = np.asarray(germ.evaluator(s, t), dtype=float).reshape(s.size, -1)
        inc = flat[step::step][: s.size] - flat[:-1:step][: s.size]
        dev = np.max(np.abs(inc - g)) if s.size else 0.0
        dt_level = step * tgrid.dt
        const = max(const, float(dev) / dt_level**germ.beta)
    return YoungIntegral(path, const, ratio, tuple(diffs))


def nonlinear_young_integral(A, theta: SamplePath, gamma: float | None = None,
                             nu: float = 1.0, rho: float | None = None,
                             levels: int = 4) -> YoungIntegral:
    """Sew the germ Gamma_{s,t} = A_{s,t}(theta_s) along the path theta.

    A must expose ``increment(s, t, x)`` (vectorized over equal-length
    arrays) returning A(t, x) - A(s, x), a time exponent estimate
    ``gamma_est.exponent``, and optionally ``window_radius`` bounding the
    spatial window theta must stay inside.

    The exponents are user-declared with measured fallbacks: gamma defaults
    to A's estimate, rho to the measured Holder exponent of theta, nu to 1
    (Lipschitz evaluation).  The Young condition gamma + nu*rho > 1 is
    enforced.

    Raises:
        YoungError: "Young condition violated" when gamma + nu*rho <= 1;
            window exit when theta leaves A's localisation window.
    """
    if gamma is None:
        gamma = float(A.gamma_est.exponent)
    if rho is None:
        est = theta.estimate_holder_exponent()
        rho = min(float(est.exponent), 1.0)
    if gamma + nu * rho <= 1.0:
        raise YoungError(
            f"Young condition violated: gamma + nu*rho = "
            f"{gamma + nu * rho:.3f} <= 1"
        )
    radius = getattr(A, "window_radius", None)
    if radius is not None and np.max(np.abs(theta.values)) > radius:
        raise YoungError("path leaves the localisation window of the field")
    tg = theta.tgrid

    def evaluator(s, t):
        i_s = np.rint((s - tg.t0) / tg.dt).astype(int)
        x = theta.values[i_s, 0] if theta.d == 1 else theta.values[i_s]
        return A.increment(s, t, x)

    germ = Germ(evaluator, gamma=gamma, beta=gamma + nu * rho)
    return sew(germ, tg, levels=levels)


def linear_young_integral(f: SamplePath, V: SamplePath,
                          levels: int = 4,
                          product: Callable | None = None) -> YoungIntegral:
    """Sew the linear germ Gamma_{s,t} = f_s * (V_t - V_s).

    f and V must share one grid; components are combined elementwise unless
    a custom ``product(f_s, dV)`` is supplied.  The Young condition is
    checked on the measured Holder exponents of f and V.

    Raises:
        YoungError: measured exponent sum <= 1, or mismatched grids.
    """
    if f.tgrid != V.tgrid:
        raise YoungError("integrand and integrator must share one grid")
    rho_f = min(float(f.estimate_holder_exponent().exponent), 1.0)
    rho_v = min(float(V.estimate_holder_exponent().exponent), 1.0)
    if rho_f + rho_v <= 1.0:
        raise YoungError(
            f"Young condition violated: exponent sum {rho_f + rho_v:.3f} <= 1"
        )
    tg = f.tgrid
    mul = product if product is not None else (lambda a, dv: a * dv)

    def evaluator(s, t):
        i_s = np.rint((s - tg.t0) / tg.dt).astype(int)
        i_t = np.rint((t - tg.t0) / tg.dt).astype(int)
        return mul(f.values[i_s], V.values[i_t] - V.values[i_s])

    germ = Germ(evaluator, gamma=rho_v, beta=rho_f + rho_v)
    return sew(germ, tg, levels=levels)
