"""Ratio-limit kernel, radical, metrics, traces and the identity checks."""

import math

import numpy as np
import pytest

import walkops as w
from walkops.errors import CoverageError, PreconditionError
from walkops.ratiolimit import ClosedFormFreeTable, ConstantKernelTable

SQRT3 = math.sqrt(3.0)


# ---------------------------------------------------------------------------
# ratio sequences
# ---------------------------------------------------------------------------

def test_ratio_sequence_identity_row(lazy_z_cache):
    ms, rs = w.ratio_sequence(lazy_z_cache, (0,), (5,))
    assert np.all(rs == 1.0)


def test_ratio_sequence_lazy_z_trend(lazy_z_cache):
    ms, rs = w.ratio_sequence(lazy_z_cache, (1,), (0,))
    # exact DP: ratios pull toward 1 with the expected monotone trend
    tail = rs[ms >= 200]
    assert abs(tail[-1] - 1.0) < abs(rs[9] - 1.0)
    assert abs(tail[-1] - 1.0) <= 0.01


def test_ratio_sequence_rejects_periodic(lattice1):
    srw = w.parse_measure("(1) 1/2\n(-1) 1/2", lattice1)
    cache = w.convolution_powers(lattice1, srw, 32)
    with pytest.raises(PreconditionError):
        w.ratio_sequence(cache, (1,), (0,))


def test_ratio_sequence_unreached(lazy_z_cache):
    with pytest.raises(CoverageError):
        w.ratio_sequence(lazy_z_cache, (1,), (500,))


def test_ratio_tail_in_bound_constants(f2_cache, f2_spectral):
    # c_x <= mu^{*m}(x^-1 y)/mu^{*m}(y) <= C_x for large m
    bc = w.bound_constants(f2_cache, (1,), f2_spectral.rho_hat)
    assert 0 < bc.c <= bc.C
    ms, rs = w.ratio_sequence(f2_cache, (1,), ())
    tail = rs[ms >= 100]
    assert np.all(tail <= bc.C * (1 + 1e-9))
    assert np.all(tail >= bc.c * (1 - 1e-9))


def test_bound_constants_identity(f2_cache, f2_spectral):
    bc = w.bound_constants(f2_cache, (), f2_spectral.rho_hat)
    assert bc.c == bc.C == 1.0
    assert bc.n_plus == bc.n_minus == 0


def test_bound_constants_lazy_z(lazy_z_cache, lazy_z_spectral):
    bc = w.bound_constants(lazy_z_cache, (1,), lazy_z_spectral.rho_hat)
    assert bc.n_plus == 1
    assert bc.C == pytest.approx(lazy_z_spectral.rho_hat / 0.25, rel=1e-12)
    assert bc.c == pytest.approx(0.25 / lazy_z_spectral.rho_hat, rel=1e-12)


# ---------------------------------------------------------------------------
# kernel estimates and the closed form
# ---------------------------------------------------------------------------

def test_estimate_H_identity_row_exact(lazy_z_cache):
    entry = w.estimate_H(lazy_z_cache, (0,), (3,))
    assert entry.estimate == entry.lo == entry.hi == 1.0


def test_closed_form_values():
    F2 = w.FreeGroup(2)
    a, ab = F2.parse("a"), F2.parse("ab")
    for y in [(), (1,), (1, 2), (2, -1)]:
        assert w.closed_form_H_free_isotropic(2, (), y) == 1.0
    assert w.closed_form_H_free_isotropic(2, a, a) == pytest.approx(
        (1.0 / 1.5) * SQRT3, rel=1e-15
    )
    assert w.closed_form_H_free_isotropic(2, a, ab) == pytest.approx(
        (1.5 / 2.0) * SQRT3, rel=1e-15
    )


def test_estimate_H_matches_closed_form(f2_table, free2):
    """1% closed-form agreement on the 2-ball at depth 2000 (it is far
    tighter in practice)."""
    ball = free2.ball(2)
    for x in ball:
        for y in ball:
            entry = f2_table.get(x, y)
            exact = w.closed_form_H_free_isotropic(2, x, y)
            assert abs(entry.estimate - exact) <= 0.01 * exact, (x, y)
            assert entry.estimate > 0


def test_estimate_H_avez_target(lazy_z2_table, lattice2):
    # amenable symmetric aperiodic: H constant 1
    ball = lattice2.ball(3)
    for x in ball:
        for y in ball:
            entry = lazy_z2_table.get(x, y)
            assert abs(entry.estimate - 1.0) <= 0.05


def test_kernel_entry_bookkeeping(f2_table):
    entry = f2_table.get((1,), (1, 2))
    assert entry.accelerated
    assert entry.lo <= entry.estimate <= entry.hi
    assert entry.m_window[1] == 2000
    assert len(entry.raw_tail) > 100
    m0, r0 = entry.raw_tail[0]
    assert r0 > 0


def test_kernel_table_rejects_periodic(lattice1):
    srw = w.parse_measure("(1) 1/2\n(-1) 1/2", lattice1)
    cache = w.convolution_powers(lattice1, srw, 32)
    with pytest.raises(PreconditionError):
        w.KernelTable(cache)


# ---------------------------------------------------------------------------
# SRLP diagnostic
# ---------------------------------------------------------------------------

def test_srlp_lazy_z_consistent(lazy_z_cache, lazy_z_table):
    rep = w.srlp_diagnostic(lazy_z_cache, ball_radius=3, tol=0.02,
                            table=lazy_z_table)
    assert rep.passed
    assert "consistent" in rep.verdict


def test_srlp_rejects_periodic(lattice1):
    srw = w.parse_measure("(1) 1/2\n(-1) 1/2", lattice1)
    cache = w.convolution_powers(lattice1, srw, 32)
    with pytest.raises(PreconditionError):
        w.srlp_diagnostic(cache, 1, 0.05)


def test_srlp_f2_consistent(f2_cache, f2_table):
    rep = w.srlp_diagnostic(f2_cache, ball_radius=2, tol=0.01, table=f2_table)
    assert rep.passed


# ---------------------------------------------------------------------------
# radical detection
# ---------------------------------------------------------------------------

def test_radical_identity_always_flagged(f2_table):
    rep = w.detect_radical(f2_table, ball_radius=1, probe_radius=1)
    assert () in rep.flagged


def test_radical_f2_trivial(f2_table, free2):
    rep = w.detect_radical(f2_table, ball_radius=2, probe_radius=1)
    assert rep.flags_only_identity(free2.identity())


def test_radical_lazy_z2_everything(lazy_z2_table, lattice2):
    rep = w.detect_radical(lazy_z2_table, ball_radius=3, probe_radius=1)
    assert rep.flags_all(lattice2.ball(3))
    # closure residuals stay within 3x the detection band
    for res in rep.product_residuals.values():
        assert res <= 3.0 * max(rep.tol_used.values())
    for res in rep.inverse_residuals.values():
        assert res <= 3.0 * max(rep.tol_used.values())


# ---------------------------------------------------------------------------
# ratio metric
# ---------------------------------------------------------------------------

def test_ratio_metric_zero_distance(f2_table):
    mv = w.ratio_metric(f2_table, (1,), (1,), 2)
    assert mv.value == 0.0
    assert mv.tail_bound == 2.0 ** (-17)


def test_ratio_metric_separates_f2(f2_table):
    mv = w.ratio_metric(f2_table, (1,), (2,), 2)
    assert mv.value > mv.uncertainty > 0.0


def test_ratio_metric_pseudometric_axioms(f2_table):
    pts = [(1,), (2,), (1, 2), ()]
    for y in pts:
        for z in pts:
            d_yz = w.ratio_metric(f2_table, y, z, 2)
            d_zy = w.ratio_metric(f2_table, z, y, 2)
            assert d_yz.value == d_zy.value
            for t in pts:
                d_yt = w.ratio_metric(f2_table, y, t, 2)
                d_tz = w.ratio_metric(f2_table, t, z, 2)
                assert d_yz.value <= d_yt.value + d_tz.value + 1e-12


def test_ratio_metric_lazy_z_single_coset(lazy_z_table, lattice1):
    # amenable symmetric walk: true distance 0 for every pair, and the
    # estimate stays within its own uncertainty + tail budget
    for y in lattice1.ball(3):
        for z in lattice1.ball(3):
            mv = w.ratio_metric(lazy_z_table, y, z, 3)
            assert mv.value <= mv.uncertainty + mv.tail_bound, (y, z)


# ---------------------------------------------------------------------------
# boundary traces
# ---------------------------------------------------------------------------

def test_boundary_trace_constant_sequence(f2_table):
    # residual = 0 + tail bound 2^-17, so any tolerance above that passes
    rep = w.boundary_trace(f2_table, [(1, 2)] * 4, probe_radius=1,
                           metric_ball_radius=2, tol=1e-4)
    assert rep.passed and rep.verdict == "converging"
    col = rep.extra["traces"]["a"]
    assert all(v == col[0] for v in col)


def test_boundary_trace_ray_converges(f2_table, free2):
    seq = [(1,) * k for k in range(6, 13)]
    rep = w.boundary_trace(f2_table, seq, probe_radius=2,
                           metric_ball_radius=2, tol=0.01)
    assert rep.passed
    # limit along the a-ray approaches the closed-form boundary value
    lim = rep.extra["limits"]["a"]
    assert lim == pytest.approx(SQRT3, rel=0.02)


def test_boundary_trace_alternating_not_cauchy(f2_table):
    seq = []
    for k in range(4, 8):
        seq.append((1,) * k)
        seq.append((2,) * k)
    rep = w.boundary_trace(f2_table, seq, probe_radius=1,
                           metric_ball_radius=2, tol=0.01)
    assert not rep.passed
    assert rep.verdict == "not Cauchy"


# ---------------------------------------------------------------------------
# cocycle, harmonicity, Cartesian product, Martin comparison
# ---------------------------------------------------------------------------

def test_cocycle_identity_element(f2_table):
    res = w.cocycle_check(f2_table, (), (1,), (2,))
    assert res.residual == 0.0


def test_cocycle_closed_form_exact():
    table = ClosedFormFreeTable(w.FreeGroup(2))
    for g, x, y in [((1,), (2,), (1, 2)), ((2, 1), (1,), (2,)),
                    ((-1,), (1, 2), ())]:
        res = w.cocycle_check(table, g, x, y)
        assert res.residual <= 1e-12


def test_cocycle_estimates_within_allowance(lazy_z2_table):
    res = w.cocycle_check(lazy_z2_table, (1, 0), (0, 1), (1, 1))
    assert res.residual <= max(res.allowance, 0.01)


def test_rho_harmonicity_closed_form(free2, iso_f2):
    # exact rho for the lazy isotropic walk; closed form is rho-harmonic
    rho = 0.2 + 0.8 * (SQRT3 / 2.0)
    table = ClosedFormFreeTable(free2)
    for x, y in [((1,), (1, 2, 1)), ((2,), (1,) * 5), ((), (2, 2))]:
        res = w.rho_harmonicity_check(table, iso_f2, rho, x, y)
        assert res.residual <= 1e-6


def test_rho_harmonicity_estimates(f2_table, iso_f2, f2_spectral):
    res = w.rho_harmonicity_check(
        f2_table, iso_f2, f2_spectral.rho_hat, (1,), (1, 2, 1),
        rho_spread=f2_spectral.spread, slack=3.0,
    )
    assert res.passed


def test_cartesian_identity_and_constant_branch(f2_table):
    prod_desc = w.ProductGroup(w.FreeGroup(2), w.LatticeGroup(1))
    const = ConstantKernelTable(w.LatticeGroup(1))
    e = prod_desc.identity()
    assert w.cartesian_H(f2_table, const, e, ((1, 2), (3,))) == 1.0
    # H_2 = 1 branch: the product kernel equals H_1 of the first components
    x = ((1,), (2,))
    y = ((1, 2), (-1,))
    assert w.cartesian_H(f2_table, const, x, y) == f2_table.get((1,), (1, 2)).estimate


def test_martin_vs_ratio_base_point(f2_cache, f2_spectral, f2_table):
    alpha = w.local_limit_exponent(f2_cache, f2_spectral)
    mt = w.MartinTable(f2_cache, f2_spectral.rho_hat, alpha)
    rep = w.martin_vs_ratio(mt, f2_table, [()], [(1,) * 6], rel_tol=1e-12)
    assert rep.passed  # both kernels are exactly 1 at the base point
