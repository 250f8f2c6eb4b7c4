"""
Scalar Gaussian-channel measures for unit-power QPSK.

A QPSK symbol in circular complex Gaussian noise of variance ``z`` splits
into two independent BPSK dimensions with per-dimension SNR ``rho = 1/z``.
Everything here reduces to two Gaussian expectations over ``U ~ N(rho, rho)``:

    mmse(rho)   = E[sech^2(U)]                (= 1 - E[tanh U])
    I_bpsk(rho) = ln 2 - E[log1p(exp(-2U))]   (= rho - E[ln cosh U], nats)

For small ``rho`` the expectations are taken with Gauss-Hermite nodes. For
larger ``rho`` the integrands develop a feature of width ``1/sqrt(rho)`` far
in the Gaussian tail, which Hermite nodes cannot resolve, so the Gaussian
factor ``exp(-rho/2)`` is pulled out and the remaining integral over ``u``
is evaluated with the trapezoidal rule (exponentially convergent for these
integrands, which are analytic in the strip ``|Im u| < pi/2``).
"""
from dataclasses import dataclass, field
from functools import lru_cache
import math

import numpy as np
from numpy.polynomial.hermite_e import hermegauss

__all__ = [
    "INF",
    "QuadratureSpec",
    "DEFAULT_QUADRATURE",
    "mse_qpsk",
    "mse_inverse",
    "mutual_info_qpsk",
    "kl_complex_gaussian",
]

#: Sentinel for an infinite noise level (no information about the symbol).
INF = math.inf

LN4 = 2.0 * math.log(2.0)

# per-dimension SNR at or below which Gauss-Hermite is used
_RHO_SWITCH = 0.25
# trapezoid window in the shifted variable u; tails are below exp(-40)
_U_LO, _U_HI = -14.0, 42.0


@dataclass(frozen=True)
class QuadratureSpec:
    """Quadrature settings for the Gaussian expectations.

    ``node_count`` is the number of Gauss-Hermite nodes for the low-SNR
    branch; the high-SNR trapezoid uses ``4 * node_count`` points.
    """

    node_count: int = 63
    scheme: str = field(default="hermite+trapezoid")

    def __post_init__(self):
        if self.node_count < 20:
            raise ValueError("node_count must be at least 20")
        if self.scheme != "hermite+trapezoid":
            raise ValueError(f"unknown quadrature scheme {self.scheme!r}")

    def hermite(self):
        return _hermite_rule(self.node_count)

    def trapezoid(self):
        return _trapezoid_rule(self.node_count)


DEFAULT_QUADRATURE = QuadratureSpec()


@lru_cache(maxsize=None)
def _hermite_rule(n):
    x, w = hermegauss(n)
    w = w / w.sum()
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


@lru_cache(maxsize=None)
def _trapezoid_rule(n):
    u = np.linspace(_U_LO, _U_HI, 4 * n + 1)
    h = u[1] - u[0]
    a = np.abs(u)
    e2 = np.exp(-2.0 * a)
    # sech^2(u) * exp(u), split by sign to avoid overflow
    s_mse = np.where(u > 0, 4.0 * np.exp(-a), 4.0 * np.exp(-3.0 * a)) / (1.0 + e2) ** 2
    # log1p(exp(-2u)) * exp(u)
    s_mi = np.where(u > 0, np.log1p(e2) * np.exp(a),
                    (2.0 * a + np.log1p(e2)) * np.exp(-a))
    u2 = u * u
    for arr in (u2, s_mse, s_mi):
        arr.setflags(write=False)
    return u2, h, s_mse, s_mi


def _gaussian_expectation(rho, low_fn, high_kernel, q):
    """E[f(U)], U ~ N(rho, rho), for a 1-D array of rho > 0."""
    # equal inputs must give bitwise equal outputs; batched BLAS rows need not
    rho, back = np.unique(rho, return_inverse=True)
    out = np.empty_like(rho)
    low = rho <= _RHO_SWITCH
    if low.any():
        g, w = q.hermite()
        r = rho[low][:, None]
        out[low] = low_fn(r + np.sqrt(r) * g) @ w
    high = ~low
    if high.any():
        u2, h, s_mse, s_mi = q.trapezoid()
        kern = s_mse if high_kernel == "mse" else s_mi
        r = rho[high]
        integral = h * (np.exp(-u2 / (2.0 * r[:, None])) @ kern)
        out[high] = np.exp(-0.5 * r) / np.sqrt(2.0 * np.pi * r) * integral
    return out[back.reshape(-1)]


def _sech2(x):
    return 1.0 / np.cosh(x) ** 2


def _log1p_exp_m2(x):
    return np.log1p(np.exp(-2.0 * x))


def _mse_array(z, q):
    """Vectorised xi(z) that also accepts z = 0 (returns 0) and z = inf (returns 1)."""
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    flat_z = z.reshape(-1)
    flat = out.reshape(-1)
    # subnormal z would overflow 1/z; xi is already 0 to double precision there
    zero = flat_z < 1e-300
    inf = np.isinf(flat_z)
    mid = ~(zero | inf)
    flat[zero] = 0.0
    flat[inf] = 1.0
    if mid.any():
        flat[mid] = _gaussian_expectation(1.0 / flat_z[mid], _sech2, "mse", q)
    return out


def mse_qpsk(z, q=DEFAULT_QUADRATURE):
    """MMSE of a unit-power QPSK symbol in complex Gaussian noise of variance ``z``.

    Accepts a scalar or an array. ``z`` may be ``INF`` (returns exactly 1).

    Raises
    ------
    ValueError
        If any finite ``z`` is not strictly positive.
    """
    arr = np.asarray(z, dtype=float)
    if np.any(np.isnan(arr)) or np.any(arr <= 0.0):
        raise ValueError("noise level z must be positive (or INF)")
    out = _mse_array(arr, q)
    return float(out) if out.ndim == 0 else out


def mse_inverse(y, q=DEFAULT_QUADRATURE, rtol=1e-13):
    """Noise level ``z`` with ``mse_qpsk(z) == y``, by bisection on ``log z``."""
    y = float(y)
    if not 0.0 < y < 1.0:
        raise ValueError("mse value must lie strictly between 0 and 1")

    def f(z):
        return float(_mse_array(np.array([z]), q)[0])

    lo, hi = 0.5, 2.0
    while f(lo) >= y:
        lo *= 0.5
        if lo < 1e-300:
            raise ValueError("mse value too small to invert")
    while f(hi) <= y:
        hi *= 2.0
        if hi > 1e300:
            raise ValueError("mse value too close to 1 to invert")
    llo, lhi = math.log(lo), math.log(hi)
    while lhi - llo > rtol:
        mid = 0.5 * (llo + lhi)
        if f(math.exp(mid)) < y:
            llo = mid
        else:
            lhi = mid
    return math.exp(0.5 * (llo + lhi))


def mutual_info_qpsk(sir, q=DEFAULT_QUADRATURE):
    """Mutual information (nats) between unit-power QPSK and its output at SNR ``sir``.

    Sum of two BPSK dimensions, each at SNR ``sir``; lies in ``[0, ln 4]``.
    """
    arr = np.asarray(sir, dtype=float)
    if np.any(np.isnan(arr)) or np.any(arr < 0.0):
        raise ValueError("sir must be nonnegative")
    flat_s = arr.reshape(-1)
    flat = np.zeros_like(flat_s)
    inf = np.isinf(flat_s)
    flat[inf] = LN4
    pos = (flat_s > 0.0) & ~inf
    if pos.any():
        e = _gaussian_expectation(flat_s[pos], _log1p_exp_m2, "mi", q)
        flat[pos] = 2.0 * (math.log(2.0) - e)
    out = np.clip(flat.reshape(arr.shape), 0.0, LN4)
    return float(out) if out.ndim == 0 else out


def kl_complex_gaussian(sigma2, sigma_t2):
    """KL divergence D(CN(0, sigma2) || CN(0, sigma_t2)) in nats."""
    if sigma2 <= 0 or sigma_t2 <= 0:
        raise ValueError("variances must be positive")
    r = sigma2 / sigma_t2
    # ln(1/r) + r - 1, written to keep precision when r is near 1
    return -math.log1p(r - 1.0) + (r - 1.0)
