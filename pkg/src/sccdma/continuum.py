"""
Spatially continuous phenomenological model of threshold saturation.

A field ``y(x)`` on ``[0, 1]`` with Dirichlet boundaries evolves by the
discrete-time gradient map

    y <- y + step * ( -U'(y; beta) + D * y'' )

``step = 1`` is the plain map. The explicit scheme is only stable for
``step * (4 D (M-1)^2 + max U'') < 2``; stationary profiles do not depend
on ``step``, so threshold searches pick a stable one automatically.
"""
from dataclasses import dataclass, field, replace
import csv
import io
import math
import warnings

import numpy as np

from .coupling import db_to_sigma2
from .scalar_channel import DEFAULT_QUADRATURE
from .thresholds import (
    MSEInverseTable,
    ThresholdError,
    fold_points,
    stationary_points,
)

__all__ = [
    "QuarticPotential",
    "CDMAPotential",
    "ContinuumConfig",
    "ContinuumState",
    "ContinuumResult",
    "continuum_step",
    "run_to_stationary",
    "stable_step",
    "continuum_bp_threshold",
    "snapshots_csv",
]


class QuarticPotential:
    """Tilted double well ``y^4/4 - y^2/2 + beta*y``; equal depths at ``beta = 0``."""

    def value(self, y, beta):
        return y ** 4 / 4.0 - y ** 2 / 2.0 + beta * y

    def grad(self, y, beta):
        return y ** 3 - y + beta

    def curvature(self, y, beta):
        return 3.0 * y ** 2 - 1.0

    def stationary(self, beta):
        roots = np.roots([1.0, 0.0, -1.0, beta])
        real = sorted(r.real for r in roots if abs(r.imag) < 1e-10)
        return [(r, "min" if self.curvature(r, beta) > 0 else "max") for r in real]

    def minima(self, beta):
        return [y for y, k in self.stationary(beta) if k == "min"]

    def y_range(self, beta):
        return -1.6, 1.6

    def window(self):
        c = 2.0 / (3.0 * math.sqrt(3.0))
        return -c, c


class CDMAPotential:
    """Effective potential of the coupled CDMA chain at noise power ``sigma2``.

    ``U'(y) = xi^{-1}(y) - sigma2 - beta*y`` with the inverse MSE taken from
    a memoised table.
    """

    def __init__(self, sigma2, table=None, q=DEFAULT_QUADRATURE):
        self.sigma2 = float(sigma2)
        self.q = q
        self.table = table if table is not None else MSEInverseTable(q=q)

    @classmethod
    def from_db(cls, snr_db, **kw):
        return cls(db_to_sigma2(snr_db), **kw)

    def _clip(self, y):
        return np.clip(y, self.table.y_min, self.table.y_max)

    def grad(self, y, beta):
        y = self._clip(y)
        return self.table(y) - self.sigma2 - beta * y

    def curvature(self, y, beta):
        return self.table.derivative(self._clip(y)) - beta

    def stationary(self, beta):
        return stationary_points(beta, self.sigma2, self.q)

    def minima(self, beta):
        return [y for y, k in self.stationary(beta) if k == "min"]

    def y_range(self, beta):
        mins = self.minima(beta)
        return 0.5 * mins[0], min(1.0, 1.5 * mins[-1])

    def window(self):
        return fold_points(self.sigma2, self.q)


@dataclass(frozen=True)
class ContinuumConfig:
    potential: object
    beta: float
    D: float
    y_bnd: float
    M: int = 257
    max_iter: int = 1_000_000
    tol: float = 1e-10
    step: float = 1.0

    def __post_init__(self):
        if self.M < 3:
            raise ValueError("need at least 3 grid points")
        # D = 0 is allowed: the points then descend independently
        if not self.D >= 0:
            raise ValueError("diffusion coefficient must be nonnegative")
        if not self.tol > 0 or not self.step > 0:
            raise ValueError("tolerance and step must be positive")

    @property
    def x(self):
        return np.linspace(0.0, 1.0, self.M)


@dataclass(frozen=True, eq=False)
class ContinuumState:
    y: np.ndarray
    iteration: int = 0


@dataclass(frozen=True, eq=False)
class ContinuumResult:
    state: ContinuumState
    converged: bool
    residual: float
    snapshots: list = field(default_factory=list)


def _drift(y, config):
    """-U'(y) + D y'' at interior points."""
    inner = y[1:-1]
    lap = (y[2:] - 2.0 * inner + y[:-2]) * (config.M - 1) ** 2
    return -config.potential.grad(inner, config.beta) + config.D * lap


def continuum_step(state, config):
    y = np.array(state.y, dtype=float)
    new = y.copy()
    new[1:-1] = y[1:-1] + config.step * _drift(y, config)
    new[0] = new[-1] = config.y_bnd
    return ContinuumState(new, state.iteration + 1)


def stable_step(config, safety=0.5, n=400):
    """Largest step keeping the linearised explicit map stable, times ``safety``."""
    lo, hi = config.potential.y_range(config.beta)
    ys = np.linspace(lo, hi, n)
    kmax = float(np.max(np.abs(config.potential.curvature(ys, config.beta))))
    return safety * 2.0 / (4.0 * config.D * (config.M - 1) ** 2 + kmax)


def _check_stability(config):
    bound = stable_step(config, safety=1.0)
    if config.step > bound:
        warnings.warn(f"step {config.step:g} exceeds the explicit stability bound "
                      f"{bound:.3g} (D*(M-1)^2 = {config.D * (config.M - 1) ** 2:.3g})",
                      RuntimeWarning, stacklevel=3)


def run_to_stationary(config, initial, record_every=0, stop=None):
    """Iterate until the stationarity residual ``max |-U' + D y''|`` over
    interior points falls below ``config.tol``.

    With ``step = 1`` this is the size of the last update. ``initial`` is an
    array of M samples (boundaries are overwritten). If
    ``record_every`` is positive, ``(iteration, y)`` snapshots are kept.
    ``stop(y)`` may end the run early; the result then reports
    ``converged=False``.
    """
    _check_stability(config)
    y = np.array(initial, dtype=float)
    if y.shape != (config.M,):
        raise ValueError("initial profile must have M samples")
    y[0] = y[-1] = config.y_bnd
    snaps = [(0, y.copy())] if record_every else []
    converged = False
    it = 0
    while it < config.max_iter:
        drift = _drift(y, config)
        if not np.all(np.isfinite(drift)):
            break
        if float(np.max(np.abs(drift))) < config.tol:
            converged = True
            break
        y[1:-1] += config.step * drift
        it += 1
        if record_every and it % record_every == 0:
            snaps.append((it, y.copy()))
        if stop is not None and it % 64 == 0 and stop(y):
            break
    residual = float(np.max(np.abs(_drift(y, config))))
    return ContinuumResult(ContinuumState(y, it), converged, residual, snaps)


def continuum_bp_threshold(potential, D, bracket=None, tol=1e-3, M=257, boundary="low",
                           max_iter=2_000_000, safety=0.5, stationary_tol=1e-9):
    """Largest load for which pinning the boundaries to one minimum drives the
    whole field there, starting from the other minimum.

    ``D`` is a number or a callable ``D(beta)``. ``boundary`` selects which
    minimum is pinned: the one at smaller y ("low") or larger y ("high").
    The bracket must lie inside the two-minimum window of the potential.
    """
    if bracket is None:
        w = potential.window()
        if w is None:
            raise ThresholdError("potential never has two minima")
        pad = 0.02 * (w[1] - w[0])
        bracket = (w[0] + pad, w[1] - pad)
    d_of = D if callable(D) else (lambda beta: D)

    def uniform(beta):
        mins = potential.minima(beta)
        if len(mins) < 2:
            raise ThresholdError(f"potential has a single minimum at beta={beta}")
        good, bad = (mins[0], mins[-1]) if boundary == "low" else (mins[-1], mins[0])
        barrier = [y for y, k in potential.stationary(beta) if k == "max"][0]
        cfg = ContinuumConfig(potential, beta, d_of(beta), good, M=M, max_iter=max_iter,
                              tol=stationary_tol)
        cfg = replace(cfg, step=stable_step(cfg, safety))
        init = np.full(M, bad)
        side = np.sign(good - barrier)

        def captured(y):
            return bool(np.all(np.sign(y - barrier) == side))

        res = run_to_stationary(cfg, init, stop=captured)
        return captured(res.state.y)

    lo, hi = bracket
    if not uniform(lo):
        raise ThresholdError(f"no uniform convergence at the lower end beta={lo}")
    if uniform(hi):
        raise ThresholdError(f"uniform convergence persists at the upper end beta={hi}")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if uniform(mid):
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def snapshots_csv(result, x):
    """Long-format CSV ``iteration,x,y`` of the recorded snapshots."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["iteration", "x", "y"])
    for it, y in result.snapshots:
        for xi, yi in zip(x, y):
            w.writerow([it, f"{xi:.17g}", f"{yi:.17g}"])
    return buf.getvalue()
