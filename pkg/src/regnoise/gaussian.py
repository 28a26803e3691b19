"""Gaussian path samplers: two-sided Brownian motion and fractional Brownian
motion, with the conditional decomposition used for local nondeterminism.

Fractional Brownian motion of Hurst index H is the mean-zero Gaussian process
with covariance

    Cov(W_s, W_t) = (|t|^{2H} + |s|^{2H} - |t - s|^{2H}) / 2.

Besides exact sampling by circulant embedding, the module implements the
moving-average representation driven by a two-sided Brownian motion B,

    W_t = c_H * int_{-inf}^t [ (t-r)_+^{H-1/2} - (-r)_+^{H-1/2} ] dB_r,
    c_H = 1 / Gamma(H + 1/2),

truncated to a finite look-back window, and its conditional splitting
W_t = W1_{s,t} + W2_{s,t} where W1 collects the noise on (s, t] and is
independent of the driver up to time s, with

    Var(W1_{s,t}) = c_tilde_H * |t - s|^{2H},  c_tilde_H = c_H^2 / (2 H).

All randomness comes from counter-based Philox streams keyed by
(seed, stream id), so batches parallelize without coordination and grid
refinement at a fixed seed reproduces the path on shared nodes exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import fftconvolve

from .grids import GridError, TimeGrid, estimate_holder_exponent, holder_seminorm

_MASK64 = (1 << 64) - 1

# Stream-id offsets keep the draws of different samplers disjoint even when
# they share a seed.
_STREAM_BM = 0
_STREAM_FBM_EXACT = 1 << 32

_CHOLESKY_CAP = 2**13
_FBM_N_CAP = 2**16


class GaussianError(ValueError):
    """Raised for invalid sampler inputs or covariance factorization failure."""


def _philox_normals(seed: int, stream: int, block: int, count: int) -> np.ndarray:
    """Standard normals from one counter block of a Philox-4x64 cipher.

    Distinct (seed, stream, block) triples start 2^128 counter steps apart,
    so their draws never overlap and can be generated in any order.
    """
    key = np.array([seed & _MASK64, stream & _MASK64], dtype=np.uint64)
    counter = np.array([0, 0, block & _MASK64, 0], dtype=np.uint64)
    bitgen = np.random.Philox(counter=counter, key=key)
    return np.random.Generator(bitgen).standard_normal(count)


@dataclass(frozen=True)
class HurstParams:
    """Hurst index together with the normalization constants of the
    moving-average representation."""

    H: float
    c_H: float
    c_tilde_H: float

    @classmethod
    def for_hurst(cls, H: float) -> "HurstParams":
        if not 0.0 < H < 1.0:
            raise GaussianError("H must lie in (0, 1)")
        c = 1.0 / math.gamma(H + 0.5)
        return cls(H=float(H), c_H=c, c_tilde_H=c * c / (2.0 * H))


@dataclass(frozen=True)
class SamplePath:
    """A vector-valued path sampled on a uniform time grid.

    values has shape (n + 1, d); ``kind`` records the law the sample was
    drawn from ("bm", "fbm", or "generic").
    """

    tgrid: TimeGrid
    values: np.ndarray
    seed: int
    kind: str = "generic"
    hurst: float | None = None

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim == 1:
            vals = vals[:, None]
        if vals.ndim != 2 or vals.shape[0] != self.tgrid.n + 1:
            raise GaussianError(
                f"values shape {vals.shape} does not match grid with "
                f"{self.tgrid.n + 1} nodes"
            )
        if not np.all(np.isfinite(vals)):
            raise GaussianError("path values must be finite")
        object.__setattr__(self, "values", vals)

    @property
    def d(self) -> int:
        return self.values.shape[1]

    def component(self, i: int = 0) -> np.ndarray:
        return self.values[:, i]

    def holder_seminorm(self, gamma: float) -> float:
        return holder_seminorm(self.values, self.tgrid.nodes, gamma)

    def estimate_holder_exponent(self):
        return estimate_holder_exponent(self.values, self.tgrid.nodes)

    def restrict(self, t0: float, t1: float) -> "SamplePath":
        """The same path on the sub-grid [t0, t1] (both must be nodes)."""
        i0 = self.tgrid.index_of(t0)
        i1 = self.tgrid.index_of(t1)
        if i1 <= i0:
            raise GaussianError("restriction window is empty")
        sub = TimeGrid(self.tgrid.node(i0), self.tgrid.node(i1), i1 - i0)
        return SamplePath(sub, self.values[i0 : i1 + 1].copy(), self.seed,
                          self.kind, self.hurst)


@dataclass(frozen=True)
class FbmDecomposition:
    """Conditional splitting W_t = w1 + w2 over [s, t].

    w1 integrates the driver on (s, t] only and is independent of the
    driver's past; w2 is measurable with respect to the driver up to s.
    """

    s: float
    t: float
    w1: np.ndarray
    w2: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return self.w1 + self.w2


def fbm_covariance(H: float, s, t):
    """Covariance (|t|^{2H} + |s|^{2H} - |t-s|^{2H}) / 2 of fBm (broadcasting)."""
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    two_h = 2.0 * H
    out = 0.5 * (np.abs(t) ** two_h + np.abs(s) ** two_h - np.abs(t - s) ** two_h)
    return out if out.ndim else float(out)


def marginal_variance_factor(H: float) -> float:
    """Variance of the moving-average process at t = 1 (V_H).

    With the normalization c_H = 1/Gamma(H + 1/2), the moving-average
    representation produces sqrt(V_H) times a standard fBm, where

        V_H = Gamma(2 - 2H) cos(pi H) / (pi H (1 - 2H)),   V_{1/2} = 1.

    The conditional-variance identity Var(W1_{s,t}) = c_tilde_H |t-s|^{2H}
    holds exactly for this normalization, which is why it is kept.
    """
    if not 0.0 < H < 1.0:
        raise GaussianError("H must lie in (0, 1)")
    if abs(H - 0.5) < 1e-9:
        return 1.0
    return math.gamma(2.0 - 2.0 * H) * math.cos(math.pi * H) / (
        math.pi * H * (1.0 - 2.0 * H))


def sample_two_sided_bm(seed: int, tgrid: TimeGrid, d: int = 1) -> SamplePath:
    """Sample a two-sided Brownian motion pinned to B_0 = 0.

    The grid must contain a node at time 0; it may extend to negative times
    (the look-back window of the moving-average fBm representation).

    Construction: a dyadic bridge.  Write n = n_odd * 2^levels.  Level 0
    draws the n_odd coarse increments, and every further level fills cell
    midpoints with Brownian-bridge corrections of variance (cell width)/4.
    Each level has its own Philox counter block, so refining the grid at a
    fixed seed leaves the values on shared nodes bit-identical.

    Args:
        seed: 64-bit stream key.
        tgrid: uniform grid spanning [-T_back, T] with a node at 0.
        d: number of independent components.

    Returns:
        SamplePath of kind "bm" with values of shape (n + 1, d).

    Raises:
        GaussianError: if the grid has no node at time 0.
    """
    try:
        k0 = tgrid.index_of(0.0)
    except GridError as exc:
        raise GaussianError("two-sided grid must contain a node at time 0") from exc
    n = tgrid.n
    n_odd, levels = n, 0
    while n_odd % 2 == 0:
        n_odd //= 2
        levels += 1
    span = tgrid.t1 - tgrid.t0
    vals = np.empty((n + 1, d))
    for comp in range(d):
        dt = span / n_odd
        z0 = _philox_normals(seed, _STREAM_BM + comp, 0, n_odd)
        b = np.concatenate([[0.0], np.cumsum(math.sqrt(dt) * z0)])
        for lev in range(1, levels + 1):
            z = _philox_normals(seed, _STREAM_BM + comp, lev, b.size - 1)
            mid = 0.5 * (b[:-1] + b[1:]) + math.sqrt(dt / 4.0) * z
            merged = np.empty(2 * b.size - 1)
            merged[::2] = b
            merged[1::2] = mid
            b = merged
            dt /= 2.0
        vals[:, comp] = b - b[k0]
    return SamplePath(tgrid, vals, seed, kind="bm", hurst=0.5)


def sample_fbm_exact(H: float, tgrid: TimeGrid, seed: int, d: int = 1) -> SamplePath:
    """Sample fBm on [0, T] with exactly the target covariance.

    Primary route: circulant embedding of the stationary increment process
    (eigenvalues by FFT of the symmetrized autocovariance).  If the embedding
    is not nonnegative definite, falls back to a dense Cholesky factorization
    of the path covariance, capped at n = 2^13.

    Raises:
        GaussianError: H outside (0,1); n > 2^16; grid not starting at 0;
            covariance factorization failure after the fallback.
    """
    if not 0.0 < H < 1.0:
        raise GaussianError("H must lie in (0, 1)")
    if tgrid.n > _FBM_N_CAP:
        raise GaussianError(f"n = {tgrid.n} exceeds the sampler cap 2^16")
    if abs(tgrid.t0) > 1e-12 * max(1.0, abs(tgrid.t1)):
        raise GaussianError("fBm sample grid must start at time 0")
    n, dt = tgrid.n, tgrid.dt
    two_h = 2.0 * H
    k = np.arange(n + 1, dtype=float)
    gam = 0.5 * dt**two_h * ((k + 1) ** two_h - 2.0 * k**two_h
                             + np.abs(k - 1) ** two_h)
    first_row = np.concatenate([gam[:n], gam[n : n + 1], gam[n - 1 : 0 : -1]])
    lam = np.fft.fft(first_row).real
    vals = np.empty((n + 1, d))
    vals[0] = 0.0
    if lam.min() >= -1e-8 * lam.max():
        lam = np.clip(lam, 0.0, None)
        root0 = math.sqrt(lam[0] / (2 * n))
        rootn = math.sqrt(lam[n] / (2 * n))
        half = np.sqrt(lam[1:n] / (4 * n))
        for comp in range(d):
            z = _philox_normals(seed, _STREAM_FBM_EXACT + comp, 0, 2 * n)
            a = np.empty(2 * n, dtype=complex)
            a[0] = root0 * z[0]
            a[n] = rootn * z[1]
            a[1:n] = half * (z[2 : n + 1] + 1j * z[n + 1 : 2 * n])
            a[2 * n - 1 : n : -1] = np.conj(a[1:n])
            fgn = np.fft.fft(a).real[:n]
            vals[1:, comp] = np.cumsum(fgn)
    else:
        if n > _CHOLESKY_CAP:
            raise GaussianError(
                f"circulant embedding not nonnegative definite "
                f"(min eigenvalue {lam.min():.3e}) and n = {n} exceeds the "
                f"Cholesky fallback cap 2^13"
            )
        tt = tgrid.nodes[1:]
        cov = fbm_covariance(H, tt[:, None], tt[None, :])
        cov[np.diag_indices_from(cov)] += 1e-12 * cov.diagonal().max()
        try:
            chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError as exc:
            raise GaussianError(
                f"covariance factorization failed: circulant min eigenvalue "
                f"{lam.min():.3e}, Cholesky not positive definite"
            ) from exc
        for comp in range(d):
            z = _philox_normals(seed, _STREAM_FBM_EXACT + comp, 0, n)
            vals[1:, comp] = chol @ z
    return SamplePath(tgrid, vals, seed, kind="fbm", hurst=float(H))


def _kernel_weights(alpha: float, dt: float, gaps: np.ndarray) -> np.ndarray:
    """Exact cell averages of (t - r)^alpha against a flat dB density.

    For a cell whose right edge sits ``gap`` cells before t, the weight is

        (1/dt) * int_cell (t - r)^alpha dr
            = dt^alpha * (gap^{alpha+1} - (gap-1)^{alpha+1}) / (alpha + 1),

    finite for every alpha > -1 including the singular cell gap = 1.
    """
    return dt**alpha * (gaps ** (alpha + 1.0) - (gaps - 1.0) ** (alpha + 1.0)) / (alpha + 1.0)


def fbm_from_driver(driver: SamplePath, H: float) -> SamplePath:
    """Moving-average fBm on [0, T] from an explicit two-sided driver.

    Computes T1[p] = sum_{j<p} w(p - j) dB_j by FFT convolution; then
    W_t at node k0 + i equals c_H * (T1[k0 + i] - T1[k0]), which makes
    W_0 = 0 exact and subsumes the stationary (-r)_+^{H-1/2} correction.
    """
    params = HurstParams.for_hurst(H)
    tg = driver.tgrid
    k0 = tg.index_of(0.0)
    n_out = tg.n - k0
    if n_out < 1:
        raise GaussianError("driver grid must extend past time 0")
    alpha = H - 0.5
    w = _kernel_weights(alpha, tg.dt, np.arange(1, tg.n + 1, dtype=float))
    out = np.empty((n_out + 1, driver.d))
    for comp in range(driver.d):
        db = np.diff(driver.values[:, comp])
        t1 = np.concatenate([[0.0], fftconvolve(db, w)[: tg.n]])
        out[:, comp] = params.c_H * (t1[k0:] - t1[k0])
    sub = TimeGrid(0.0, tg.t1, n_out)
    return SamplePath(sub, out, driver.seed, kind="fbm", hurst=float(H))


def sample_fbm_volterra(H: float, tgrid: TimeGrid, seed: int, d: int = 1) -> SamplePath:
    """Sample fBm on [0, T] through the truncated moving-average representation.

    The driver grid spans [-T_back, T]; the integral from -infinity is
    truncated at -T_back, which must be at least 10 T to keep the truncation
    bias below sampling noise (the kernel difference decays like r^{H-3/2}).

    Normalization: with c_H = 1/Gamma(H + 1/2) the sampled process is
    sqrt(V_H) times a standard fBm (see marginal_variance_factor); this keeps
    the conditional decomposition's variance identity exact.  Use
    sample_fbm_exact when the standard covariance itself is needed.

    Args:
        H: Hurst index in (0, 1).
        tgrid: driver grid spanning [-T_back, T] with a node at 0.
        seed: 64-bit stream key (shared with the driver).
        d: number of independent components.

    Returns:
        SamplePath of kind "fbm" on [0, T] (the nonnegative part of tgrid).

    Raises:
        GaussianError: T_back < 10 T, no node at 0, or H outside (0, 1).
    """
    if not 0.0 < H < 1.0:
        raise GaussianError("H must lie in (0, 1)")
    T = tgrid.t1
    if T <= 0.0:
        raise GaussianError("driver grid must extend to positive times")
    t_back = -tgrid.t0
    if t_back < 10.0 * T * (1.0 - 1e-12):
        raise GaussianError(
            f"T_back = {t_back:g} too small: the truncated representation "
            f"requires T_back >= 10*T = {10.0 * T:g}"
        )
    driver = sample_two_sided_bm(seed, tgrid, d)
    return fbm_from_driver(driver, H)


def conditional_decomposition(driver: SamplePath, H: float, s: float,
                              t: float) -> FbmDecomposition:
    """Split W_t into the independent part w1 and the F_s-measurable part w2.

        w1 = c_H * int_s^t (t - r)^{H-1/2} dB_r,
        w2 = c_H * int_{-T_back}^s [(t-r)^{H-1/2} - (-r)_+^{H-1/2}] dB_r,

    both by the per-cell exact singular quadrature, so w1 + w2 agrees with
    the moving-average W_t on the same driver to rounding.  At H = 1/2 the
    kernel is an indicator and w1 = B_t - B_s, w2 = B_s hold exactly.

    Raises:
        GaussianError: s >= t, s < 0, or s/t not nodes of the driver grid.
    """
    params = HurstParams.for_hurst(H)
    if s >= t:
        raise GaussianError("decomposition requires s < t")
    if s < 0.0:
        raise GaussianError("decomposition requires s >= 0")
    tg = driver.tgrid
    i_s, i_t, k0 = tg.index_of(s), tg.index_of(t), tg.index_of(0.0)
    alpha = H - 0.5
    db = np.diff(driver.values, axis=0)
    gaps_t = (i_t - np.arange(i_t)).astype(float)
    w_t = _kernel_weights(alpha, tg.dt, gaps_t)
    w1 = params.c_H * (db[i_s:i_t].T @ w_t[i_s:i_t])
    part_t = params.c_H * (db[:i_s].T @ w_t[:i_s])
    gaps_0 = (k0 - np.arange(k0)).astype(float)
    w_0 = _kernel_weights(alpha, tg.dt, gaps_0)
    static = params.c_H * (db[:k0].T @ w_0)
    return FbmDecomposition(s=tg.node(i_s), t=tg.node(i_t),
                            w1=np.atleast_1d(w1), w2=np.atleast_1d(part_t - static))
