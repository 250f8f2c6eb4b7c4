"""
Coupled density evolution for spatially coupled CDMA.

The state is the vector of effective noise variances ``sigma_t^2``. One
iteration maps it to

    sigma_t^2 <- sigma^2 + beta_t * sum_l h2[t, l] * xi( sum_t' h2[t', l] sigma_t'^2 )

and fixed points of this map are compared through the free energy.
"""
from dataclasses import dataclass, field, replace
import json

import numpy as np

from .coupling import CouplingSystem
from .scalar_channel import (
    DEFAULT_QUADRATURE,
    INF,
    _mse_array,
    kl_complex_gaussian,
    mutual_info_qpsk,
)

__all__ = [
    "DEState",
    "DESolution",
    "ConvergenceError",
    "initial_state",
    "sir_profile",
    "de_step",
    "de_iterates",
    "de_solve",
    "free_energy",
    "select_solution",
    "TIE_TOL",
]

DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITER = 100_000
TIE_TOL = 1e-9


class ConvergenceError(RuntimeError):
    """Raised when a quantity defined only at fixed points is requested off one."""


@dataclass(frozen=True, eq=False)
class DEState:
    sigma_t2: np.ndarray
    iteration: int = 0

    def __post_init__(self):
        s = np.array(self.sigma_t2, dtype=float).reshape(-1)
        if np.any(np.isnan(s)) or np.any(s < 0):
            raise ValueError("variances must be nonnegative (or INF)")
        s.setflags(write=False)
        object.__setattr__(self, "sigma_t2", s)


@dataclass(frozen=True, eq=False)
class DESolution:
    state: DEState
    sir: np.ndarray
    mse: np.ndarray
    free_energy: float
    converged: bool
    residual: float
    init: str = "custom"
    tie: bool = False

    @property
    def iterations(self):
        return self.state.iteration

    @property
    def mean_mse(self):
        return float(np.mean(self.mse))

    def to_dict(self):
        def enc(a):
            return [None if np.isinf(v) else float(v) for v in np.asarray(a)]

        return {
            "init": self.init,
            "sigma_t2": enc(self.state.sigma_t2),
            "sir": enc(self.sir),
            "mse": enc(self.mse),
            "free_energy": None if self.free_energy is None else float(self.free_energy),
            "iterations": int(self.state.iteration),
            "converged": bool(self.converged),
            "residual": float(self.residual),
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    def profile_csv(self):
        lines = ["l,xi_l"]
        lines += [f"{l},{x:.17g}" for l, x in enumerate(self.mse)]
        return "\n".join(lines) + "\n"


def initial_state(system, init="worst"):
    """Starting state for ``"worst"`` (infinite variance), ``"genie"`` (zero) or a vector."""
    L = system.L
    if isinstance(init, str):
        if init == "worst":
            return DEState(np.full(L, INF))
        if init == "genie":
            return DEState(np.zeros(L))
        raise ValueError(f"unknown init mode {init!r}")
    vec = np.asarray(init, dtype=float).reshape(-1)
    if vec.shape[0] != L:
        raise ValueError("custom initialisation must have length L")
    return DEState(vec)


def _effective_noise(sig, h2):
    """Column sums ``sum_t h2[t, l] sig[t]`` with INF dominating any positive weight."""
    inf = np.isinf(sig)
    if not inf.any():
        return sig @ h2
    z = np.where(inf, 0.0, sig) @ h2
    hit = (h2[inf] > 0).any(axis=0)
    z[hit] = INF
    return z


def sir_profile(state, system):
    sig = state.sigma_t2 if isinstance(state, DEState) else np.asarray(state, float)
    if sig.shape[0] != system.L:
        raise ValueError("state length does not match L")
    z = _effective_noise(sig, system.h2)
    with np.errstate(divide="ignore"):
        return 1.0 / z


def _step_array(sig, system, q):
    z = _effective_noise(sig, system.h2)
    xi = _mse_array(z, q)
    return system.sigma2 + system.loads * (system.h2 @ xi)


def de_step(state, system, q=DEFAULT_QUADRATURE):
    if state.sigma_t2.shape[0] != system.L:
        raise ValueError("state length does not match L")
    return DEState(_step_array(state.sigma_t2, system, q), state.iteration + 1)


def de_iterates(system, init="worst", n=None, q=DEFAULT_QUADRATURE):
    """Yield successive states starting from the initial one (``n`` steps, or forever)."""
    state = initial_state(system, init)
    yield state
    i = 0
    while n is None or i < n:
        state = de_step(state, system, q)
        yield state
        i += 1


def de_solve(system, init="worst", tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER,
             q=DEFAULT_QUADRATURE):
    """Iterate to a fixed point from the given initialisation.

    Stops when the largest variance update drops below ``tol``. Hitting
    ``max_iter`` returns the last iterate with ``converged=False`` and no
    free energy.
    """
    if tol <= 0 or max_iter < 1:
        raise ValueError("need tol > 0 and max_iter >= 1")
    label = init if isinstance(init, str) else "custom"
    sig = initial_state(system, init).sigma_t2
    converged = False
    residual = INF
    it = 0
    while it < max_iter:
        new = _step_array(sig, system, q)
        it += 1
        with np.errstate(invalid="ignore"):
            residual = float(np.max(np.abs(new - sig)))
        sig = new
        if residual < tol:
            converged = True
            break
    state = DEState(sig, it)
    sir = sir_profile(state, system)
    with np.errstate(divide="ignore"):
        mse = _mse_array(1.0 / sir, q)
    sol = DESolution(state, sir, mse, None, converged, residual, label)
    if converged:
        sol = replace(sol, free_energy=free_energy(sol, system, q))
    return sol


def free_energy(solution, system, q=DEFAULT_QUADRATURE):
    """Free energy in nats per period: mean mutual information plus load-weighted KL terms.

    Periods with zero load contribute nothing (their variance equals sigma^2).
    """
    if not solution.converged:
        raise ConvergenceError("free energy is only defined at a converged fixed point")
    info = float(np.mean(mutual_info_qpsk(solution.sir, q)))
    kl = 0.0
    for beta_t, s_t in zip(system.loads, solution.state.sigma_t2):
        if beta_t > 0:
            kl += kl_complex_gaussian(system.sigma2, s_t) / beta_t
    return info + kl / system.L


def select_solution(candidates, tie_tol=TIE_TOL):
    """Pick the fixed point of least free energy.

    Candidates within ``tie_tol`` nats of the minimum are tied; the one with
    the smallest mean MSE wins (earliest on equal MSE) and is flagged.
    """
    candidates = list(candidates)
    if not candidates:
        raise ValueError("no candidate solutions")
    for c in candidates:
        if not c.converged or c.free_energy is None:
            raise ConvergenceError("all candidates must be converged fixed points")
    f_min = min(c.free_energy for c in candidates)
    near = [c for c in candidates if c.free_energy - f_min <= tie_tol]
    best = min(near, key=lambda c: c.mean_mse)
    return replace(best, tie=len(near) > 1)
