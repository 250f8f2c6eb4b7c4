"""
Threshold finders and the effective potential.

All finders bisect on the load ``beta`` using a boolean predicate that is
true below the threshold. Because several predicates are only monotone
inside the bistable window (worst- and genie-initialised iterations agree
again once the small-MSE branch disappears), the bracket is first scanned
for the window and the bisection then runs on a straddling sub-bracket.
"""
from dataclasses import dataclass, field
import csv
import io
import json
import math

import numpy as np
from scipy.integrate import quad
from scipy.interpolate import PchipInterpolator
from scipy.optimize import brentq, minimize_scalar

from .coupling import CouplingSpec, build_uncoupled, sigma2_to_db
from .de_core import DEFAULT_MAX_ITER, DEFAULT_TOL, de_solve
from .scalar_channel import DEFAULT_QUADRATURE, _mse_array, mse_inverse

__all__ = [
    "ThresholdError",
    "UniqueRegimeError",
    "ThresholdQuery",
    "ThresholdRecord",
    "PotentialProfile",
    "MSEInverseTable",
    "fold_points",
    "stationary_points",
    "bp_threshold",
    "io_threshold_uncoupled",
    "io_threshold_coupled",
    "potential",
    "potential_difference",
    "potential_threshold",
    "diffusion_coefficient",
    "solutions_agree",
]

DEFAULT_BRACKET = (0.5, 4.0)
MATCH_TOL = 1e-6


class ThresholdError(ValueError):
    """The bracket does not contain a usable threshold."""


class UniqueRegimeError(ThresholdError):
    """The fixed-point equations have a unique solution everywhere on the bracket."""


@dataclass(frozen=True)
class ThresholdQuery:
    spec: CouplingSpec
    sigma2: float
    bracket: tuple = DEFAULT_BRACKET
    tol: float = 5e-5

    def __post_init__(self):
        lo, hi = self.bracket
        if not lo < hi:
            raise ValueError("bracket must satisfy lo < hi")
        if self.tol <= 0:
            raise ValueError("tolerance must be positive")


@dataclass(frozen=True)
class ThresholdRecord:
    snr_db: float
    kind: str
    family: str
    L: int
    W: int
    beta_init: float
    threshold: float
    tolerance: float

    FIELDS = ("snr_db", "family", "L", "W", "beta_init", "threshold", "kind", "tolerance")

    def to_dict(self):
        return {k: getattr(self, k) for k in self.FIELDS}

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def csv_text(cls, records):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cls.FIELDS)
        for r in records:
            w.writerow([f"{v:.17g}" if isinstance(v, float) else v
                        for v in (getattr(r, k) for k in cls.FIELDS)])
        return buf.getvalue()


# --------------------------------------------------------------------------
# uncoupled fixed-point curve


def fold_points(sigma2, q=DEFAULT_QUADRATURE, n=4000):
    """Saddle-node loads ``(beta_low, beta_high)`` of the uncoupled recursion, or None.

    Fixed points satisfy ``beta = (z - sigma2) / xi(z)`` with ``z`` the
    effective noise; the bistable window lies between the local minimum and
    local maximum of this curve. ``beta_low`` is the uncoupled BP threshold.
    """
    z = sigma2 * np.logspace(1e-6, 5, n)
    b = (z - sigma2) / _mse_array(z, q)
    db = np.diff(b)
    sign_change = np.flatnonzero(np.sign(db[1:]) != np.sign(db[:-1]))
    if sign_change.size < 2:
        return None

    def refine(i, want_max):
        a, c = math.log(z[i]), math.log(z[i + 2])
        f = lambda lz: -_curve(lz, sigma2, q) if want_max else _curve(lz, sigma2, q)
        res = minimize_scalar(f, bounds=(a, c), method="bounded",
                              options={"xatol": 1e-12})
        return _curve(res.x, sigma2, q)

    hi = refine(sign_change[0], True)
    lo = refine(sign_change[1], False)
    return lo, hi


def _curve(log_z, sigma2, q):
    z = math.exp(log_z)
    return (z - sigma2) / float(_mse_array(np.array([z]), q)[0])


# --------------------------------------------------------------------------
# agreement of worst/genie initialisations


def _solve_pair(system, tol, max_iter, q):
    worst = de_solve(system, "worst", tol=tol, max_iter=max_iter, q=q)
    genie = de_solve(system, "genie", tol=tol, max_iter=max_iter, q=q)
    return worst, genie


def solutions_agree(worst, genie, match_tol=MATCH_TOL):
    """Whether two fixed points coincide in every per-symbol MSE."""
    if not (worst.converged and genie.converged):
        return False
    return float(np.max(np.abs(worst.mse - genie.mse))) < match_tol


def _bisect(pred, lo, hi, tol):
    """Largest beta with ``pred`` true, given pred(lo) true and pred(hi) false."""
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if pred(mid):
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _scan_start(sigma2, lo, step, q):
    window = fold_points(sigma2, q)
    if window is None:
        return lo
    return max(lo, window[0] - step)


def _grid(lo, hi, step):
    n = int(math.floor((hi - lo) / step + 1e-9))
    pts = [lo + i * step for i in range(n + 1)]
    if pts[-1] < hi:
        pts.append(hi)
    return pts


def bp_threshold(query, match_tol=MATCH_TOL, scan_step=0.01, de_tol=DEFAULT_TOL,
                 max_iter=DEFAULT_MAX_ITER, q=DEFAULT_QUADRATURE):
    """Largest load below which worst- and genie-initialised iterations coincide.

    Raises
    ------
    ThresholdError
        If the iterations already disagree at the lower end of the bracket.
    UniqueRegimeError
        If they agree everywhere on the scanned bracket.
    """
    spec, sigma2 = query.spec, query.sigma2
    lo, hi = query.bracket

    def agree(beta):
        w, g = _solve_pair(spec.build(sigma2, beta), de_tol, max_iter, q)
        return solutions_agree(w, g, match_tol)

    if not agree(lo):
        raise ThresholdError(f"solutions already disagree at beta={lo} (both ends disagree "
                             "or bracket starts above the threshold)")
    if not agree(hi):
        return _bisect(agree, lo, hi, query.tol)
    start = _scan_start(sigma2, lo, scan_step, q)
    prev = lo
    for beta in _grid(start, hi, scan_step):
        if beta <= lo:
            continue
        if not agree(beta):
            return _bisect(agree, prev, beta, query.tol)
        prev = beta
    raise UniqueRegimeError(f"worst and genie solutions agree on the whole bracket "
                            f"[{lo}, {hi}] at {sigma2_to_db(sigma2):.3f} dB")


def _io_threshold(build, sigma2, bracket, tol, scan_step, de_tol, max_iter, q,
                  match_tol=MATCH_TOL):
    lo, hi = bracket
    cache = {}

    def pair(beta):
        if beta not in cache:
            cache[beta] = _solve_pair(build(beta), de_tol, max_iter, q)
        return cache[beta]

    start = _scan_start(sigma2, lo, scan_step, q)
    bistable = []
    for beta in _grid(start, hi, scan_step):
        w, g = pair(beta)
        if not solutions_agree(w, g, match_tol):
            bistable.append(beta)
        elif bistable:
            break
    if not bistable:
        raise UniqueRegimeError(f"unique solution regime on [{lo}, {hi}] "
                                f"at {sigma2_to_db(sigma2):.3f} dB")
    first, last = bistable[0], bistable[-1]

    def small_wins(beta):
        w, g = pair(beta)
        if solutions_agree(w, g, match_tol):
            return beta < first
        if not (w.converged and g.converged):
            raise ThresholdError(f"fixed-point iteration did not converge at beta={beta}")
        return g.free_energy < w.free_energy

    a = max(lo, first - scan_step)
    b = min(hi, last + scan_step)
    if not small_wins(a) or small_wins(b):
        raise ThresholdError("free-energy difference does not change sign on the bracket")
    cache.clear()
    return _bisect(small_wins, a, b, tol)


def io_threshold_uncoupled(sigma2, bracket=DEFAULT_BRACKET, tol=5e-5, scan_step=0.01,
                           de_tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER,
                           q=DEFAULT_QUADRATURE):
    """Load at which the small- and large-MSE fixed points have equal free energy."""
    return _io_threshold(lambda b: build_uncoupled(1, b, sigma2), sigma2, bracket, tol,
                         scan_step, de_tol, max_iter, q)


def io_threshold_coupled(spec, sigma2, bracket=DEFAULT_BRACKET, tol=5e-5, scan_step=0.01,
                         de_tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER,
                         q=DEFAULT_QUADRATURE):
    """Free-energy crossing of the worst- and genie-initialised coupled fixed points.

    This is an upper bound on the coupled IO threshold, not the threshold itself.
    """
    return _io_threshold(lambda b: spec.build(sigma2, b), sigma2, bracket, tol,
                         scan_step, de_tol, max_iter, q)


# --------------------------------------------------------------------------
# effective potential


class MSEInverseTable:
    """Memoised inverse of the MSE function via monotone interpolation in log-log space.

    Built once from ``n`` log-spaced noise levels; read-only afterwards.
    """

    def __init__(self, z_min=1e-2, z_max=1e4, n=4001, q=DEFAULT_QUADRATURE):
        z = np.logspace(math.log10(z_min), math.log10(z_max), n)
        y = _mse_array(z, q)
        keep = y > 0
        self.q = q
        self.y_min = float(y[keep][0])
        self.y_max = float(y[-1])
        self._log_interp = PchipInterpolator(np.log(y[keep]), np.log(z[keep]))
        self._d_log_interp = self._log_interp.derivative()

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        inside = (y >= self.y_min) & (y <= self.y_max)
        if np.all(inside):
            return np.exp(self._log_interp(np.log(y)))
        out = np.empty_like(y)
        out[inside] = np.exp(self._log_interp(np.log(y[inside])))
        for idx in zip(*np.nonzero(~inside)):
            out[idx] = mse_inverse(float(y[idx]), self.q)
        return out

    def derivative(self, y):
        """d xi^{-1}/dy, clipped to the tabulated range."""
        y = np.clip(np.asarray(y, dtype=float), self.y_min, self.y_max)
        ly = np.log(y)
        z = np.exp(self._log_interp(ly))
        return z / y * self._d_log_interp(ly)


@dataclass(frozen=True, eq=False)
class PotentialProfile:
    beta: float
    sigma2: float
    y: np.ndarray
    U: np.ndarray
    stationary: list = field(default_factory=list)

    @property
    def minima(self):
        return [(y, u) for y, u, k in self.stationary if k == "min"]

    @property
    def maxima(self):
        return [(y, u) for y, u, k in self.stationary if k == "max"]


def _fixed_point_residual(y, beta, sigma2, q):
    # same sign as U'(y) = xi^{-1}(y) - sigma2 - beta*y, since xi is increasing
    y = np.asarray(y, dtype=float)
    return y - _mse_array(sigma2 + beta * y, q)


def stationary_points(beta, sigma2, q=DEFAULT_QUADRATURE, n=3000):
    """Stationary points of U as ``[(y, kind)]``, kind in {"min", "max"}, sorted by y."""
    grid = np.unique(np.concatenate([np.logspace(-30, 0, n, endpoint=False),
                                     np.linspace(0.0, 1.0, n, endpoint=False)[1:]]))
    h = _fixed_point_residual(grid, beta, sigma2, q)
    out = []
    for i in np.flatnonzero(np.sign(h[1:]) != np.sign(h[:-1])):
        f = lambda y: float(_fixed_point_residual(np.array([y]), beta, sigma2, q)[0])
        root = brentq(f, grid[i], grid[i + 1], xtol=1e-15)
        out.append((root, "min" if h[i] < 0 else "max"))
    return out


def _xi_integral(z_lo, z_hi, q):
    if z_hi <= z_lo:
        return 0.0
    f = lambda z: float(_mse_array(np.array([z]), q)[0])
    val, _ = quad(f, z_lo, z_hi, epsabs=1e-14, epsrel=1e-12, limit=200)
    return val


def _potential_values(ys, zs, beta, sigma2, q):
    """U at sorted ys with z = xi^{-1}(y) known; U(y) = z*y - int_0^z xi - sigma2*y - beta*y^2/2."""
    out = np.empty(len(ys))
    acc, z_prev = 0.0, 0.0
    for i, (y, z) in enumerate(zip(ys, zs)):
        acc += _xi_integral(z_prev, z, q)
        z_prev = z
        out[i] = z * y - acc - sigma2 * y - 0.5 * beta * y * y
    return out


def potential(beta, sigma2, y_grid, q=DEFAULT_QUADRATURE):
    """Sample the effective potential on ``y_grid`` and locate its stationary points.

    ``int_0^y xi^{-1}`` is integrated by parts as ``z*y - int_0^z xi(z') dz'``
    with ``z = xi^{-1}(y)``; the z-integral is adaptive quadrature.
    """
    y_grid = np.asarray(y_grid, dtype=float)
    if y_grid.size and (np.any(y_grid <= 0) or np.any(y_grid >= 1)):
        raise ValueError("potential grid must lie inside (0, 1)")
    if np.any(np.diff(y_grid) <= 0):
        raise ValueError("potential grid must be sorted ascending")
    zs = np.array([mse_inverse(y, q) for y in y_grid])
    U = _potential_values(y_grid, zs, beta, sigma2, q)
    stat = []
    for y, kind in stationary_points(beta, sigma2, q):
        u = _potential_values([y], [sigma2 + beta * y], beta, sigma2, q)[0]
        stat.append((y, u, kind))
    return PotentialProfile(beta, sigma2, y_grid, U, stat)


def potential_difference(beta, sigma2, q=DEFAULT_QUADRATURE):
    """U(small-MSE minimum) - U(large-MSE minimum); None with fewer than two minima."""
    mins = [y for y, k in stationary_points(beta, sigma2, q) if k == "min"]
    if len(mins) < 2:
        return None
    y0, y1 = mins[0], mins[-1]
    z0, z1 = sigma2 + beta * y0, sigma2 + beta * y1
    # difference of z*y - int xi - sigma2*y - beta*y^2/2 between the minima
    return ((z0 * y0 - z1 * y1) + _xi_integral(z0, z1, q)
            - sigma2 * (y0 - y1) - 0.5 * beta * (y0 * y0 - y1 * y1))


def potential_threshold(sigma2, bracket=DEFAULT_BRACKET, tol=5e-5, q=DEFAULT_QUADRATURE):
    """Load at which the two minima of the effective potential have equal depth."""
    window = fold_points(sigma2, q)
    lo, hi = bracket
    if window is None or window[1] <= lo or window[0] >= hi:
        raise UniqueRegimeError(f"single-minimum potential on [{lo}, {hi}] "
                                f"at {sigma2_to_db(sigma2):.3f} dB")
    a = max(lo, window[0])
    b = min(hi, window[1])
    eps = 1e-6 * (b - a)
    a, b = a + eps, b - eps

    def small_deeper(beta):
        d = potential_difference(beta, sigma2, q)
        if d is None:
            return beta < 0.5 * (a + b)
        return d < 0

    if not small_deeper(a) or small_deeper(b):
        raise ThresholdError("potential minima do not reach equal depth on the bracket")
    return _bisect(small_deeper, a, b, tol)


def diffusion_coefficient(beta, W, L):
    """Diffusion coefficient of the continuum limit of a circularly coupled chain."""
    if W < 0 or L < 1:
        raise ValueError("need W >= 0 and L >= 1")
    s = sum((t - lp) ** 2 for t in range(W + 1) for lp in range(W + 1))
    return beta / (2.0 * (W + 1) ** 2 * L ** 2) * s
