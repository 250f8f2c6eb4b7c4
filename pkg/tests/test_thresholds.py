import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sccdma.coupling import CouplingSpec, db_to_sigma2
from sccdma.de_core import de_solve
from sccdma.coupling import build_uncoupled
from sccdma.scalar_channel import INF, mse_qpsk
from sccdma.thresholds import (
    MSEInverseTable,
    ThresholdError,
    ThresholdQuery,
    ThresholdRecord,
    UniqueRegimeError,
    bp_threshold,
    diffusion_coefficient,
    fold_points,
    io_threshold_coupled,
    io_threshold_uncoupled,
    potential,
    potential_difference,
    potential_threshold,
    stationary_points,
)
from oracles import scalar_fixed_point

S10 = db_to_sigma2(10)


def dense_fold_oracle(sigma2, n=200_000):
    """Local extrema of beta(z) = (z - sigma2)/xi(z) on a dense log grid."""
    z = sigma2 * np.logspace(1e-7, 4, n)
    b = (z - sigma2) / mse_qpsk(z)
    d = np.sign(np.diff(b))
    idx = np.flatnonzero(d[1:] != d[:-1]) + 1
    return b[idx[1]], b[idx[0]]


# ---- diffusion coefficient

def test_diffusion_uncoupled_is_zero():
    assert diffusion_coefficient(1.8, 0, 32) == 0.0


@given(st.floats(0.1, 5), st.integers(1, 500))
def test_diffusion_w1_closed_form(beta, L):
    assert diffusion_coefficient(beta, 1, L) == pytest.approx(beta / (4 * L * L), rel=1e-14)


def test_diffusion_w2_brute_force():
    s = sum((t - l) ** 2 for t in range(3) for l in range(3))
    assert s == 12
    assert diffusion_coefficient(1.8, 2, 32) == pytest.approx(1.8 / (2 * 9 * 1024) * 12,
                                                              rel=1e-15)
    assert diffusion_coefficient(1.8, 2, 32) == pytest.approx(0.001171875, rel=1e-15)


@given(st.floats(0.1, 5), st.integers(0, 8), st.integers(1, 1000))
def test_diffusion_inverse_square_scaling(beta, W, L):
    assert diffusion_coefficient(beta, W, 2 * L) == diffusion_coefficient(beta, W, L) / 4


def test_diffusion_domain():
    with pytest.raises(ValueError):
        diffusion_coefficient(1.0, -1, 4)


# ---- fold points and BP thresholds

@pytest.mark.parametrize("snr", [9, 10, 12, 14])
def test_fold_points_match_dense_oracle(snr):
    lo, hi = fold_points(db_to_sigma2(snr))
    olo, ohi = dense_fold_oracle(db_to_sigma2(snr))
    assert lo == pytest.approx(olo, abs=1e-6)
    assert hi == pytest.approx(ohi, abs=1e-5)


def test_no_folds_below_uniqueness_boundary():
    assert fold_points(db_to_sigma2(8)) is None
    lo, hi = fold_points(db_to_sigma2(8.25))
    assert 0 < hi - lo < 1e-3


@pytest.mark.parametrize("L", [1, 5])
def test_bp_uncoupled_any_length(L):
    q = ThresholdQuery(CouplingSpec("uncoupled", L, 0, 1.0), S10)
    b = bp_threshold(q)
    assert b == pytest.approx(1.7307, abs=1e-3)
    assert b == pytest.approx(fold_points(S10)[0], abs=1e-4)


def test_bp_circular_w0_equals_uncoupled():
    q = ThresholdQuery(CouplingSpec("circular", 6, 0, 1.0, 0.0), S10)
    assert bp_threshold(q) == pytest.approx(fold_points(S10)[0], abs=1e-4)


def test_bp_rejects_bracket_above_threshold():
    q = ThresholdQuery(CouplingSpec("uncoupled", 1, 0, 1.0), S10, bracket=(1.8, 1.9))
    with pytest.raises(ThresholdError):
        bp_threshold(q)


def test_bp_unique_regime():
    q = ThresholdQuery(CouplingSpec("uncoupled", 1, 0, 1.0), db_to_sigma2(7),
                       bracket=(1.0, 2.0))
    with pytest.raises(UniqueRegimeError):
        bp_threshold(q, scan_step=0.05)


def test_query_validation():
    spec = CouplingSpec("uncoupled", 1, 0, 1.0)
    with pytest.raises(ValueError):
        ThresholdQuery(spec, S10, bracket=(2.0, 1.0))
    with pytest.raises(ValueError):
        ThresholdQuery(spec, S10, tol=0)


# ---- IO thresholds

@pytest.mark.parametrize("snr,expected", [(10, 1.9826), (14, 2.9855)])
def test_io_uncoupled(snr, expected):
    assert io_threshold_uncoupled(db_to_sigma2(snr)) == pytest.approx(expected, abs=2e-3)


def test_io_unique_regime():
    with pytest.raises(UniqueRegimeError):
        io_threshold_uncoupled(db_to_sigma2(8))


def test_io_free_energy_sign():
    b = io_threshold_uncoupled(S10)
    for beta, small in ((b - 0.01, True), (b + 0.01, False)):
        s = build_uncoupled(1, beta, S10)
        w, g = de_solve(s, "worst"), de_solve(s, "genie")
        assert bool(g.free_energy < w.free_energy) is small


@pytest.mark.parametrize("snr,expected", [(9, 1.7048), (10, 1.9873), (12, 2.4973)])
def test_io_coupled_upper_bound(snr, expected):
    spec = CouplingSpec("circular", 32, 1, 1.0, 0.0)
    assert io_threshold_coupled(spec, db_to_sigma2(snr)) == pytest.approx(expected, abs=5e-3)


# ---- potential

def test_inverse_table_matches_bisection():
    t = MSEInverseTable()
    from sccdma.scalar_channel import mse_inverse
    for y in (0.01, 0.1, 0.3, 0.6, 0.9):
        assert t(y) == pytest.approx(mse_inverse(y), rel=1e-7)


def test_potential_vanishes_at_origin():
    p = potential(1.8, S10, [1e-12, 1e-9, 1e-6])
    assert np.all(np.abs(p.U) < 1e-5)
    assert abs(p.U[0]) < abs(p.U[-1]) + 1e-15


def test_potential_minima_are_fixed_points():
    p = potential(1.9, S10, np.linspace(0.01, 0.9, 5))
    assert len(p.minima) == 2 and len(p.maxima) == 1
    for y, _ in p.minima:
        assert abs(y - mse_qpsk(S10 + 1.9 * y)) < 1e-8


def test_potential_equal_depth():
    p = potential(1.8121, S10, [0.5])
    (y0, u0), (y1, u1) = p.minima
    assert abs(u0 - u1) < 1e-4
    assert abs(potential_difference(1.8121, S10)) < 1e-4


def test_potential_derivative_matches_definition():
    # finite differences of U against xi^{-1}(y) - sigma2 - beta*y
    from sccdma.scalar_channel import mse_inverse
    y = np.array([0.2 - 1e-5, 0.2 + 1e-5])
    U = potential(1.7, S10, y).U
    deriv = (U[1] - U[0]) / 2e-5
    assert deriv == pytest.approx(mse_inverse(0.2) - S10 - 1.7 * 0.2, abs=1e-6)


def test_potential_grid_domain():
    with pytest.raises(ValueError):
        potential(1.8, S10, [0.0, 0.5])
    with pytest.raises(ValueError):
        potential(1.8, S10, [0.5, 1.0])
    with pytest.raises(ValueError):
        potential(1.8, S10, [0.5, 0.2])


@settings(max_examples=12, deadline=None)
@given(st.floats(9.0, 14.0), st.floats(0.05, 0.95))
def test_stationary_points_are_de_fixed_points(snr, frac):
    sigma2 = db_to_sigma2(snr)
    lo, hi = fold_points(sigma2)
    beta = lo + frac * (hi - lo)
    stat = stationary_points(beta, sigma2)
    kinds = [k for _, k in stat]
    assert kinds == ["min", "max", "min"]
    # genie start: the first iterate from zero variance is sigma2
    small = scalar_fixed_point(beta, sigma2, sigma2, mse_qpsk)
    large = scalar_fixed_point(beta, sigma2, INF, mse_qpsk)
    assert stat[0][0] == pytest.approx(mse_qpsk(small), abs=1e-8)
    assert stat[2][0] == pytest.approx(mse_qpsk(large), abs=1e-8)
    y_mid = stat[1][0]
    assert abs(y_mid - mse_qpsk(sigma2 + beta * y_mid)) < 1e-8


@pytest.mark.parametrize("snr,expected", [(9, 1.6550), (10, 1.8121), (14, 2.1132)])
def test_potential_threshold(snr, expected):
    assert potential_threshold(db_to_sigma2(snr)) == pytest.approx(expected, abs=2e-3)


def test_potential_threshold_unique_regime():
    with pytest.raises(UniqueRegimeError):
        potential_threshold(db_to_sigma2(8))


# ---- records

def test_record_serialisation():
    r = ThresholdRecord(10.0, "bp", "circular", 32, 1, 0.0, 1.8120591, 5e-5)
    d = json.loads(r.to_json())
    assert set(d) == {"snr_db", "family", "L", "W", "beta_init", "threshold", "kind",
                      "tolerance"}
    text = ThresholdRecord.csv_text([r, r])
    lines = text.splitlines()
    assert lines[0] == "snr_db,family,L,W,beta_init,threshold,kind,tolerance"
    assert len(lines) == 3
    assert float(lines[1].split(",")[5]) == 1.8120591
