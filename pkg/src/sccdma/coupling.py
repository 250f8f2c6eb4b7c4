"""Coupling-coefficient matrices, load profiles and sum rates."""
from dataclasses import dataclass
import json
import math
import warnings

import numpy as np

__all__ = [
    "CouplingSystem",
    "CouplingSpec",
    "ValidationReport",
    "build_uncoupled",
    "build_circular",
    "sum_rate",
    "validate",
    "db_to_sigma2",
    "sigma2_to_db",
]

SUM_TOL = 1e-12


def db_to_sigma2(snr_db):
    """Noise power for an SNR ``1/sigma^2`` given in dB."""
    return 10.0 ** (-float(snr_db) / 10.0)


def sigma2_to_db(sigma2):
    return -10.0 * math.log10(sigma2)


@dataclass(frozen=True, eq=False)
class CouplingSystem:
    """Squared coupling magnitudes ``h2[t, l]``, per-period loads and noise power.

    Immutable: the arrays are flagged read-only on construction.
    """

    h2: np.ndarray
    loads: np.ndarray
    sigma2: float
    kind: str = "custom"
    W: int = 0

    def __post_init__(self):
        h2 = np.array(self.h2, dtype=float)
        loads = np.array(self.loads, dtype=float).reshape(-1)
        if h2.ndim != 2 or h2.shape[0] != h2.shape[1]:
            raise ValueError("h2 must be a square matrix")
        if loads.shape[0] != h2.shape[0]:
            raise ValueError("loads must have length L")
        if np.any(loads < 0):
            raise ValueError("loads must be nonnegative")
        if not self.sigma2 > 0:
            raise ValueError("sigma2 must be positive")
        h2.setflags(write=False)
        loads.setflags(write=False)
        object.__setattr__(self, "h2", h2)
        object.__setattr__(self, "loads", loads)
        object.__setattr__(self, "sigma2", float(self.sigma2))

    @property
    def L(self):
        return self.h2.shape[0]

    def shifted(self, k):
        """Same system with every period index moved forward by ``k`` (mod L)."""
        h2 = np.roll(np.roll(self.h2, k, axis=0), k, axis=1)
        return CouplingSystem(h2, np.roll(self.loads, k), self.sigma2, self.kind, self.W)


@dataclass(frozen=True)
class CouplingSpec:
    """A coupling family with the communication-phase load left as a parameter."""

    kind: str = "circular"
    L: int = 32
    W: int = 1
    beta: float = 1.0
    beta_init: float = 0.0

    def __post_init__(self):
        if self.kind not in ("uncoupled", "circular"):
            raise ValueError(f"unknown coupling kind {self.kind!r}")
        if self.L < 1:
            raise ValueError("L must be positive")
        if self.kind == "circular" and not 0 <= self.W < self.L:
            raise ValueError("need 0 <= W < L")
        if self.beta <= 0 or self.beta_init < 0:
            raise ValueError("need beta > 0 and beta_init >= 0")

    def build(self, sigma2, beta=None):
        beta = self.beta if beta is None else beta
        if self.kind == "uncoupled":
            return build_uncoupled(self.L, beta, sigma2)
        return build_circular(self.L, self.W, beta, self.beta_init, sigma2)

    def to_json(self, sigma2):
        doc = {
            "kind": self.kind,
            "L": self.L,
            "beta": self.beta,
            "beta_init": self.beta_init,
            "sigma2_db": sigma2_to_db(sigma2),
        }
        if self.kind == "circular":
            doc["W"] = self.W
        return json.dumps(doc, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        """Parse ``{L, W?, kind, beta, beta_init, sigma2_db}``; returns ``(spec, sigma2)``."""
        doc = json.loads(text) if isinstance(text, str) else dict(text)
        kind = doc.get("kind", "circular")
        spec = cls(
            kind=kind,
            L=int(doc["L"]),
            W=int(doc.get("W", 0)) if kind == "circular" else 0,
            beta=float(doc["beta"]),
            beta_init=float(doc.get("beta_init", 0.0)),
        )
        return spec, db_to_sigma2(doc["sigma2_db"])


def build_uncoupled(L, beta, sigma2):
    if L < 1:
        raise ValueError("L must be positive")
    if beta <= 0:
        raise ValueError("beta must be positive")
    return CouplingSystem(np.eye(L), np.full(L, float(beta)), sigma2, "uncoupled", 0)


def build_circular(L, W, beta, beta_init, sigma2):
    """Banded circulant: ``h2[t, l] = 1/(W+1)`` when ``(t - l) mod L <= W``.

    Periods ``0..W-1`` form the initialisation phase with load ``beta_init``.
    """
    if not 0 <= W < L:
        raise ValueError(f"need 0 <= W < L, got W={W}, L={L}")
    if beta <= 0 or beta_init < 0:
        raise ValueError("need beta > 0 and beta_init >= 0")
    t = np.arange(L)
    diff = (t[:, None] - t[None, :]) % L
    h2 = np.where(diff <= W, 1.0 / (W + 1), 0.0)
    loads = np.full(L, float(beta))
    loads[:W] = beta_init
    return CouplingSystem(h2, loads, sigma2, "circular", W)


def sum_rate(beta, beta_init, W, L):
    """Sum rate (bits per chip for QPSK) of a circularly coupled system."""
    if beta <= 0 or beta_init < 0:
        raise ValueError("need beta > 0 and beta_init >= 0")
    if not 0 <= W < L:
        raise ValueError("need 0 <= W < L")
    if W == 0:
        return 2.0 * beta
    if beta_init == 0:
        warnings.warn("beta_init = 0 makes the initialisation phase infinitely long; "
                      "sum rate is 0", RuntimeWarning, stacklevel=2)
        return 0.0
    frac = W / L
    return 2.0 / (frac / beta_init + (1.0 - frac) / beta)


@dataclass(frozen=True)
class ValidationReport:
    ok: bool
    axis: str = ""
    index: int = -1
    residual: float = 0.0

    def __bool__(self):
        return self.ok


def validate(system, tol=SUM_TOL):
    """Check nonnegativity and unit row and column sums of ``h2``.

    Reports the first violation found (rows before columns).
    """
    h2 = np.asarray(system.h2 if hasattr(system, "h2") else system, dtype=float)
    neg = np.argwhere(h2 < 0)
    if neg.size:
        t, l = neg[0]
        return ValidationReport(False, "negative", int(t), float(h2[t, l]))
    for axis, sums in (("row", h2.sum(axis=1)), ("column", h2.sum(axis=0))):
        bad = np.flatnonzero(np.abs(sums - 1.0) > tol)
        if bad.size:
            i = int(bad[0])
            return ValidationReport(False, axis, i, float(abs(sums[i] - 1.0)))
    return ValidationReport(True)
