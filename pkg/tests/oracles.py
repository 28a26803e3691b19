"""Independent oracles for the derived expected values in the test suite.

Everything in here is deliberately written from scratch against textbook
formulas or brute-force quadrature (scipy.integrate.quad, dense Riemann
sums), never by calling back into the package, so a test comparing the
package against an oracle is a genuine dual-route check.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.integrate import quad


# --- mollifier ------------------------------------------------------------

def bump_fourier_factor(eps: float, k: float) -> float:
    """Fourier factor m_hat(eps*k) of the unit-mass bump exp(-1/(1-z^2)).

    Direct quadrature of the continuum kernel; the grid mollifier must
    reproduce this once eps spans a few cells.
    """
    mass, _ = quad(lambda z: math.exp(-1.0 / (1.0 - z * z)), -1.0, 1.0)
    val, _ = quad(lambda z: math.exp(-1.0 / (1.0 - z * z))
                  * math.cos(eps * k * z), -1.0, 1.0)
    return val / mass


# --- heat semigroup -------------------------------------------------------

def heat_of_gaussian(sigma2: float, t: float, x: np.ndarray) -> np.ndarray:
    """P_t applied to exp(-x^2 / (2 sigma^2)): the closed-form convolution.

    With the kernel (2 pi t)^{-1/2} exp(-x^2/2t), a Gaussian bump of
    variance sigma^2 maps to sqrt(sigma^2/(sigma^2+t)) times the bump of
    variance sigma^2 + t.
    """
    s2 = sigma2 + t
    return math.sqrt(sigma2 / s2) * np.exp(-x * x / (2.0 * s2))


# --- fractional calculus --------------------------------------------------

def frac_integral_of_one(alpha: float, t: np.ndarray) -> np.ndarray:
    """I^alpha 1 = t^alpha / Gamma(alpha + 1) (power rule)."""
    return t ** alpha / math.gamma(alpha + 1.0)


def frac_derivative_of_t(alpha: float, t: np.ndarray) -> np.ndarray:
    """D^alpha t = t^{1 - alpha} / Gamma(2 - alpha) (power rule)."""
    return t ** (1.0 - alpha) / math.gamma(2.0 - alpha)


def kh_kernel_quad(H: float, t: float, s: float) -> float:
    """The H > 1/2 Volterra kernel by direct singular quadrature.

    c*_H s^{1/2-H} int_s^t (u-s)^{H-3/2} u^{H-1/2} du with the standard-fBm
    normalisation c*_H = [H(2H-1) / B(2-2H, H-1/2)]^{1/2}.
    """
    if not 0.5 < H < 1.0 or not 0.0 < s < t:
        raise ValueError("kernel oracle needs H in (1/2,1) and 0 < s < t")
    beta = math.gamma(2.0 - 2.0 * H) * math.gamma(H - 0.5) / math.gamma(1.5 - H)
    c_star = math.sqrt(H * (2.0 * H - 1.0) / beta)
    val, _ = quad(lambda u: (u - s) ** (H - 1.5) * u ** (H - 0.5), s, t,
                  points=[s], limit=200)
    return c_star * s ** (0.5 - H) * val


def fbm_cov(H: float, s: float, t: float) -> float:
    """The two-parameter covariance, written out independently."""
    return 0.5 * (abs(t) ** (2 * H) + abs(s) ** (2 * H)
                  - abs(t - s) ** (2 * H))


def lnd_variance(H: float, s: float, t: float) -> float:
    """c_tilde_H |t-s|^{2H} with c_tilde_H = 1/(Gamma(H+1/2)^2 2H)."""
    c_h = 1.0 / math.gamma(H + 0.5)
    return c_h * c_h / (2.0 * H) * (t - s) ** (2.0 * H)


def w1_kernel_weights(H: float, nodes: np.ndarray, i_s: int,
                      i_t: int) -> np.ndarray:
    """Per-cell exact-integral weights of (t-r)^{H-1/2} on (s, t].

    Returns the weight multiplying each driver increment db[i_s:i_t]
    (increments over (r_{j-1}, r_j]), so that
    c_H * dot(weights, db[i_s:i_t]) is the independent part W^1 of the
    conditional decomposition.  The c_H = 1/Gamma(H+1/2) factor is left to
    the caller.
    """
    t = nodes[i_t]
    dt = nodes[1] - nodes[0]
    left = t - nodes[i_s:i_t]
    right = np.maximum(t - nodes[i_s + 1:i_t + 1], 0.0)
    p = H + 0.5
    return (left ** p - right ** p) / (p * dt)


# --- classical integrals --------------------------------------------------

def riemann_stieltjes(f: np.ndarray, g: np.ndarray) -> float:
    """Trapezoid Riemann-Stieltjes sum of int f dg on a shared fine grid."""
    return float(np.sum(0.5 * (f[:-1] + f[1:]) * np.diff(g)))


def ito_left_sum(f: np.ndarray, g: np.ndarray) -> float:
    """Left-point sum of int f dg (the Ito convention)."""
    return float(np.dot(f[:-1], np.diff(g)))


def phase_integral_ramp(k: int, v: float, t: float) -> complex:
    """Phi_k(t) = int_0^t e^{i k v s} ds = (e^{ikvt} - 1)/(ikv) for a ramp."""
    return (np.exp(1j * k * v * t) - 1.0) / (1j * k * v)


# --- linear closed forms --------------------------------------------------

def linear_yde(x0: float, lam: float, t: np.ndarray) -> np.ndarray:
    """x' = lam x from x0 (what the averaged affine drift with w = 0 is)."""
    return x0 * np.exp(lam * t)


def linear_continuity_density(rho0: float, lam: float, t: float) -> float:
    """Density along a particle for b = lam x: rho0 * exp(-lam t)."""
    return rho0 * math.exp(-lam * t)


# --- commutator by real-space convolution ---------------------------------

def commutator_direct(h: np.ndarray, g: np.ndarray, eps: float,
                      L: float) -> np.ndarray:
    """(g h')^eps - g (h')^eps with a sampled bump kernel and np.gradient.

    A deliberately different discretisation (real-space periodic
    convolution, second-order finite differences) of the same continuum
    object; agreement with the spectral implementation is a dual-route
    check at grid-error tolerance.
    """
    m = h.shape[0]
    hx = 2.0 * L / m
    half = int(math.ceil(eps / hx))
    z = np.arange(-half, half + 1) * hx / eps
    ker = np.where(np.abs(z) < 1.0, np.exp(-1.0 / np.maximum(1.0 - z * z,
                                                             1e-300)), 0.0)
    ker /= ker.sum()

    def smooth(v):
        out = np.zeros(m)
        for off, wgt in zip(range(-half, half + 1), ker):
            out += wgt * np.roll(v, off)
        return out

    x = np.arange(m) * hx
    grad_h = np.gradient(h, x, edge_order=2)
    # periodic wrap for the two boundary one-sided stencils
    grad_h[0] = (h[1] - h[-1]) / (2 * hx)
    grad_h[-1] = (h[0] - h[-2]) / (2 * hx)
    return smooth(g * grad_h) - g * smooth(grad_h)
