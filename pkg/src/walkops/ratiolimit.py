"""Ratio-limit kernel estimation, the radical, metrics and cross-checks.

The central object is the kernel H(x,y) = lim_m mu^{*m}(x^-1 y)/mu^{*m}(y),
estimated from DP ratio tails with geometric-ladder Aitken acceleration in
the log domain (which cancels the O(1/m) local-limit correction exactly on
a doubling ladder).  Every entry carries an interval taken over the
accelerated window; the raw tail is retained so estimates can be re-audited.

On top of the kernel table: the detected radical subgroup, the ratio-limit
pseudometric with rigorous tail bounds, boundary-ray traces, the cocycle
and rho-harmonicity identities, Cartesian factorization, the free-group
closed form, and the Martin-vs-ratio comparison.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import CoverageError, PreconditionError
from .groups import FreeGroup, GroupDescriptor
from .measures import NEG_INF, ScaledMeasure
from .powers import PowersCache, convolution_powers, is_aperiodic
from .reports import DiagnosticsReport
from .sequences import aitken_step, halving_ladder, richardson_harmonic
from .spectral import MetricValue


# ---------------------------------------------------------------------------
# ratio sequences and kernel entries
# ---------------------------------------------------------------------------

def ratio_sequence(cache: PowersCache, x, y):
    """(ms, rs) with r_m = mu^{*m}(x^-1 y) / mu^{*m}(y) where both exist.

    Ratios are exact mantissa quotients (shared level log-scale cancels).
    Requires an aperiodic walk; gaps (levels where the denominator entry is
    absent) are simply skipped.
    """
    aperiodic, period = is_aperiodic(cache)
    if not aperiodic:
        raise PreconditionError(
            f"ratio sequences need an aperiodic walk (period {period} detected)"
        )
    desc = cache.descriptor
    num = desc.multiply(desc.inverse(x), y)
    ms, rs = [], []
    for m in range(1, cache.depth + 1):
        ln = cache.log_value(m, num)
        ld = cache.log_value(m, y)
        if ln > NEG_INF and ld > NEG_INF:
            ms.append(m)
            rs.append(math.exp(ln - ld))
    if not ms:
        raise CoverageError("y never reached within the cache depth")
    return np.array(ms), np.array(rs)


@dataclass
class KernelEntry:
    x: object
    y: object
    estimate: float
    lo: float
    hi: float
    m_window: tuple
    accelerated: bool
    raw_tail: list = field(default_factory=list, repr=False)

    @property
    def uncertainty(self) -> float:
        return max(self.hi - self.estimate, self.estimate - self.lo)


def estimate_H(cache: PowersCache, x, y, ladder_points: int = 5,
               ladder_floor: int | None = None) -> KernelEntry:
    """Accelerated tail estimate of H(x,y) with a [min, max] window interval.

    The ratio tail is sampled on a doubling ladder of levels ending at the
    cache depth; Aitken runs on the log-ratios of consecutive ladder
    triples.  The interval spans all accelerated values (coarse triples are
    less accurate, so the window is a conservative error band); with fewer
    than three ladder points the raw tail value is reported unaccelerated.
    """
    desc = cache.descriptor
    if x == desc.identity():
        return KernelEntry(x=x, y=y, estimate=1.0, lo=1.0, hi=1.0,
                           m_window=(0, cache.depth), accelerated=False,
                           raw_tail=[])
    ms, rs = ratio_sequence(cache, x, y)
    defined = dict(zip(ms.tolist(), rs.tolist()))
    depth = int(ms[-1])
    floor = ladder_floor if ladder_floor is not None else max(4, depth // 16)
    floor = max(floor, int(ms[0]))
    ladder = []
    for h in halving_ladder(depth, floor, max_points=ladder_points):
        # nudge upward past parity/presence gaps
        for probe in range(h, min(h + 4, depth + 1)):
            if probe in defined:
                if not ladder or ladder[-1][0] != probe:
                    ladder.append((probe, defined[probe]))
                break
    tail_from = np.searchsorted(ms, max(1, depth // 4))
    raw_tail = list(zip(ms[tail_from:].tolist(), rs[tail_from:].tolist()))
    if len(ladder) < 3:
        vals = [r for _, r in raw_tail] or rs.tolist()
        return KernelEntry(x=x, y=y, estimate=float(rs[-1]),
                           lo=float(min(vals)), hi=float(max(vals)),
                           m_window=(int(ms[0]), depth), accelerated=False,
                           raw_tail=raw_tail)
    logs = [math.log(r) for _, r in ladder]
    acc = [math.exp(aitken_step(logs[i], logs[i + 1], logs[i + 2]))
           for i in range(len(logs) - 2)]
    return KernelEntry(
        x=x, y=y,
        estimate=float(acc[-1]),
        lo=float(min(acc)),
        hi=float(max(acc)),
        m_window=(ladder[0][0], ladder[-1][0]),
        accelerated=True,
        raw_tail=raw_tail,
    )


@dataclass
class BoundConstants:
    x: object
    c: float
    C: float
    n_plus: int   # minimal n with mu^{*n}(x) > 0
    n_minus: int  # minimal n' with mu^{*n'}(x^-1) > 0


def bound_constants(cache: PowersCache, x, rho_hat: float) -> BoundConstants:
    """C_x = rho^n / mu^{*n}(x), c_x = mu^{*n'}(x^-1) / rho^{n'} at the
    minimal levels where x (resp. x^-1) is first reached."""
    desc = cache.descriptor
    inv = desc.inverse(x)
    n_plus = n_minus = None
    for m in range(cache.depth + 1):
        if n_plus is None and cache.has_value(m, x):
            n_plus = m
        if n_minus is None and cache.has_value(m, inv):
            n_minus = m
        if n_plus is not None and n_minus is not None:
            break
    if n_plus is None or n_minus is None:
        raise CoverageError(
            f"{desc.format(x)} or its inverse unreachable within depth {cache.depth}"
        )
    big = math.exp(n_plus * math.log(rho_hat) - cache.log_value(n_plus, x))
    small = math.exp(cache.log_value(n_minus, inv) - n_minus * math.log(rho_hat))
    return BoundConstants(x=x, c=small, C=big, n_plus=n_plus, n_minus=n_minus)


# ---------------------------------------------------------------------------
# kernel tables
# ---------------------------------------------------------------------------

class KernelTable:
    """Lazy (x, y) -> KernelEntry table over one powers cache."""

    def __init__(self, cache: PowersCache, rho_hat: float | None = None,
                 ladder_points: int = 5, ladder_floor: int | None = None):
        aperiodic, period = is_aperiodic(cache)
        if not aperiodic:
            raise PreconditionError(
                f"kernel estimation needs an aperiodic walk (period {period})"
            )
        self.cache = cache
        self.descriptor = cache.descriptor
        self.rho_hat = rho_hat
        self.ladder_points = ladder_points
        self.ladder_floor = ladder_floor
        self._entries: dict = {}
        self._bounds: dict = {}

    def get(self, x, y) -> KernelEntry:
        key = (x, y)
        if key not in self._entries:
            self._entries[key] = estimate_H(
                self.cache, x, y,
                ladder_points=self.ladder_points,
                ladder_floor=self.ladder_floor,
            )
        return self._entries[key]

    def bound_constant(self, x) -> BoundConstants:
        if self.rho_hat is None:
            raise PreconditionError("bound constants need rho_hat on the table")
        if x not in self._bounds:
            self._bounds[x] = bound_constants(self.cache, x, self.rho_hat)
        return self._bounds[x]

    def entries(self) -> dict:
        return dict(self._entries)

    def provenance(self) -> dict:
        return {
            "kernel": "ratio-limit",
            "M": self.cache.depth,
            "rho_hat": self.rho_hat,
            "acceleration": "aitken-log-halving-ladder",
            "ladder_points": self.ladder_points,
            "engine": self.cache.engine_name,
        }


def closed_form_H_free_isotropic(s: int, x, y) -> float:
    """Ratio-limit kernel of an isotropic lazy walk on F_s, from the
    tree local limit: a rational-in-distance prefactor times a power of
    2s-1.  x, y are reduced words; purely combinatorial.
    """
    desc = FreeGroup(s)
    dxy = len(desc.multiply(desc.inverse(x), y))
    dey = len(y)
    pref = (1.0 + (s - 1.0) / s * dxy) / (1.0 + (s - 1.0) / s * dey)
    return pref * (2.0 * s - 1.0) ** ((dey - dxy) / 2.0)


class ClosedFormFreeTable:
    """KernelTable-compatible view of the free-group closed form.

    Entries are exact (zero-width intervals).  Bound constants still come
    from a shallow DP cache of the actual walk, built on demand.
    """

    def __init__(self, descriptor: FreeGroup, mu: ScaledMeasure | None = None,
                 rho_hat: float | None = None):
        self.descriptor = descriptor
        self.rho_hat = rho_hat
        self._mu = mu
        self._cache = None
        self._bounds: dict = {}

    def get(self, x, y) -> KernelEntry:
        v = closed_form_H_free_isotropic(self.descriptor.rank, x, y)
        return KernelEntry(x=x, y=y, estimate=v, lo=v, hi=v,
                           m_window=(0, 0), accelerated=False, raw_tail=[])

    def bound_constant(self, x) -> BoundConstants:
        if x not in self._bounds:
            if self._mu is None or self.rho_hat is None:
                raise PreconditionError(
                    "closed-form table needs mu and rho_hat for bound constants"
                )
            if self._cache is None or self._cache.depth < len(x) + 2:
                self._cache = convolution_powers(
                    self.descriptor, self._mu, max(4, len(x) + 2)
                )
            self._bounds[x] = bound_constants(self._cache, x, self.rho_hat)
        return self._bounds[x]

    def provenance(self) -> dict:
        return {"kernel": "closed-form-free-isotropic", "rank": self.descriptor.rank}


class ConstantKernelTable:
    """H identically constant (amenable symmetric factor: constant 1)."""

    def __init__(self, descriptor: GroupDescriptor, value: float = 1.0):
        self.descriptor = descriptor
        self.value = value

    def get(self, x, y) -> KernelEntry:
        return KernelEntry(x=x, y=y, estimate=self.value, lo=self.value,
                           hi=self.value, m_window=(0, 0), accelerated=False,
                           raw_tail=[])

    def provenance(self) -> dict:
        return {"kernel": "constant", "value": self.value}


class CartesianKernelTable:
    """Product-kernel table: H((w1,v1),(w2,v2)) = H1(w1,w2) * H2(v1,v2)."""

    def __init__(self, descriptor, left_table, right_table):
        self.descriptor = descriptor
        self.left = left_table
        self.right = right_table

    def get(self, x, y) -> KernelEntry:
        e1 = self.left.get(x[0], y[0])
        e2 = self.right.get(x[1], y[1])
        est = e1.estimate * e2.estimate
        lo = e1.lo * e2.lo
        hi = e1.hi * e2.hi
        return KernelEntry(x=x, y=y, estimate=est, lo=lo, hi=hi,
                           m_window=(0, 0), accelerated=False, raw_tail=[])

    def provenance(self) -> dict:
        return {
            "kernel": "cartesian-product",
            "left": self.left.provenance(),
            "right": self.right.provenance(),
        }


def cartesian_H(left_table, right_table, x, y) -> float:
    """Product formula for Cartesian walks: kernel of the pair inputs."""
    return left_table.get(x[0], y[0]).estimate * right_table.get(x[1], y[1]).estimate


# ---------------------------------------------------------------------------
# SRLP diagnostics
# ---------------------------------------------------------------------------

def srlp_diagnostic(cache: PowersCache, ball_radius: int, tol: float,
                    table: KernelTable | None = None) -> DiagnosticsReport:
    """Tail-oscillation evidence for the strong ratio limit property.

    For every (x, y) in the ball the oscillation of the accelerated ratio
    tail (the kernel-entry window width) is compared against ``tol``.  The
    verdict is consistency evidence only, never a proof.
    """
    aperiodic, period = is_aperiodic(cache)
    if not aperiodic:
        raise PreconditionError(
            f"SRLP diagnostic needs an aperiodic walk (period {period})"
        )
    if table is None:
        table = KernelTable(cache)
    ball = cache.descriptor.ball(ball_radius)
    fmt = cache.descriptor.format
    residuals = []
    worst = 0.0
    offenders = []
    for x in ball:
        for y in ball:
            entry = table.get(x, y)
            osc = entry.hi - entry.lo
            worst = max(worst, osc)
            residuals.append({
                "x": fmt(x), "y": fmt(y),
                "oscillation": osc,
                "estimate": entry.estimate,
                "accelerated": entry.accelerated,
            })
            if osc > tol:
                offenders.append((fmt(x), fmt(y), osc))
    passed = not offenders
    verdict = (
        f"consistent with SRLP at tol {tol:g}"
        if passed else f"{len(offenders)} pair(s) oscillate beyond tol {tol:g}"
    )
    return DiagnosticsReport(
        name="srlp-diagnostic",
        inputs={"ball_radius": ball_radius, "pairs": len(residuals)},
        residuals=residuals,
        passed=passed,
        verdict=verdict,
        tolerances={"oscillation": tol},
        provenance=table.provenance(),
    )


# ---------------------------------------------------------------------------
# radical detection
# ---------------------------------------------------------------------------

@dataclass
class RadicalReport:
    ball_radius: int
    probe_radius: int
    flagged: list
    deviations: dict
    tol_used: dict
    product_residuals: dict
    inverse_residuals: dict

    def flags_all(self, ball) -> bool:
        flagged = set(self.flagged)
        return all(g in flagged for g in ball)

    def flags_only_identity(self, identity) -> bool:
        return self.flagged == [identity]


def detect_radical(table, ball_radius: int, probe_radius: int,
                   tol: float | None = None) -> RadicalReport:
    """Elements y of the ball with H(x,y) = H(x,e) across the probe ball.

    With estimates, equality is a band: the default tolerance per y is 3x
    the propagated kernel uncertainty.  Product/inverse closure residuals
    of the flagged set evidence the subgroup property.
    """
    desc = table.descriptor
    e = desc.identity()
    ball = desc.ball(ball_radius)
    probe = desc.ball(probe_radius)
    deviations = {}
    tol_used = {}
    flagged = []
    for y in ball:
        dev = 0.0
        unc = 0.0
        for x in probe:
            ey = table.get(x, y)
            ee = table.get(x, e)
            dev = max(dev, abs(ey.estimate - ee.estimate))
            unc = max(unc, ey.uncertainty + ee.uncertainty)
        deviations[y] = dev
        t = tol if tol is not None else 3.0 * unc
        tol_used[y] = t
        if dev <= t:
            flagged.append(y)
    ball_set = set(ball)
    product_residuals = {}
    inverse_residuals = {}
    for y in flagged:
        inv = desc.inverse(y)
        if inv in ball_set:
            inverse_residuals[y] = max(
                abs(table.get(x, inv).estimate - table.get(x, e).estimate)
                for x in probe
            )
        for z in flagged:
            yz = desc.multiply(y, z)
            if yz in ball_set and (y, z) != (e, e):
                product_residuals[(y, z)] = max(
                    abs(table.get(x, yz).estimate - table.get(x, e).estimate)
                    for x in probe
                )
    return RadicalReport(
        ball_radius=ball_radius,
        probe_radius=probe_radius,
        flagged=flagged,
        deviations=deviations,
        tol_used=tol_used,
        product_residuals=product_residuals,
        inverse_residuals=inverse_residuals,
    )


# ---------------------------------------------------------------------------
# the ratio-limit pseudometric and boundary traces
# ---------------------------------------------------------------------------

def ratio_metric(table, y, z, ball_radius: int) -> MetricValue:
    """Truncated d(yR, zR) = sum_x |H(x,y) - H(x,z)| / (C_x 2^phi(x)).

    phi is the 1-based ball position; the tail over phi > N is at most
    2^-N because |H(x,y) - H(x,z)| <= C_x by the bound constants.  Kernel
    interval widths propagate into ``uncertainty``.
    """
    ball = table.descriptor.ball(ball_radius)
    total = 0.0
    unc = 0.0
    for phi, x in enumerate(ball, start=1):
        c_x = table.bound_constant(x).C
        ey = table.get(x, y)
        ez = table.get(x, z)
        w = 1.0 / (c_x * 2.0 ** phi)
        total += abs(ey.estimate - ez.estimate) * w
        unc += (ey.uncertainty + ez.uncertainty) * w
    return MetricValue(value=total, tail_bound=2.0 ** (-len(ball)), uncertainty=unc)


def boundary_trace(table, sequence: list, probe_radius: int,
                   metric_ball_radius: int, tol: float) -> DiagnosticsReport:
    """Per-x traces H(x, y_k) along a sequence, with Cauchy evidence.

    Consecutive points are compared in the truncated ratio metric (tail
    bound included); the verdict is "converging" when every residual stays
    within ``tol``, and the reported limits are Aitken-extrapolated trace
    tails.
    """
    desc = table.descriptor
    probe = desc.ball(probe_radius)
    fmt = desc.format
    traces = {x: [table.get(x, y).estimate for y in sequence] for x in probe}
    residuals = []
    for a, b in zip(sequence, sequence[1:]):
        mv = ratio_metric(table, a, b, metric_ball_radius)
        residuals.append({
            "from": fmt(a), "to": fmt(b),
            "metric": mv.value,
            "with_tail": mv.value + mv.tail_bound,
        })
    worst = max((r["with_tail"] for r in residuals), default=0.0)
    passed = worst <= tol
    ks = []
    for pos, y in enumerate(sequence, start=1):
        try:
            ks.append(desc.word_length(y))
        except Exception:
            ks.append(pos)
    limits = {}
    for x, tr in traces.items():
        if len(tr) >= 2 and len(set(tr)) > 1 and ks[-1] > ks[-2]:
            # trace tails carry O(1/k) corrections; Richardson removes them
            limits[fmt(x)] = float(richardson_harmonic(ks, tr)[-1])
        else:
            limits[fmt(x)] = tr[-1]
    return DiagnosticsReport(
        name="boundary-trace",
        inputs={
            "sequence": [fmt(y) for y in sequence],
            "probe_radius": probe_radius,
            "metric_ball_radius": metric_ball_radius,
        },
        residuals=residuals,
        passed=passed,
        verdict="converging" if passed else "not Cauchy",
        tolerances={"cauchy_residual": tol},
        provenance=table.provenance(),
        extra={"limits": limits,
               "traces": {fmt(x): tr for x, tr in traces.items()}},
    )


# ---------------------------------------------------------------------------
# identity checks
# ---------------------------------------------------------------------------

@dataclass
class CheckResult:
    residual: float
    allowance: float

    @property
    def passed(self) -> bool:
        return self.residual <= self.allowance


def cocycle_check(table, g, x, y, slack: float = 3.0) -> CheckResult:
    """|H(x,gy) H(g^-1,y) - H(g^-1 x, y)| against propagated uncertainty."""
    desc = table.descriptor
    ginv = desc.inverse(g)
    a = table.get(x, desc.multiply(g, y))
    b = table.get(ginv, y)
    c = table.get(desc.multiply(ginv, x), y)
    residual = abs(a.estimate * b.estimate - c.estimate)
    allowance = slack * (
        a.uncertainty * abs(b.estimate)
        + b.uncertainty * abs(a.estimate)
        + c.uncertainty
    )
    return CheckResult(residual=residual, allowance=allowance)


def rho_harmonicity_check(table, mu: ScaledMeasure, rho_hat: float, x, y,
                          rho_spread: float = 0.0, slack: float = 1.0) -> CheckResult:
    """|sum_{x'} P_{x,x'} H(x',y) - rho H(x,y)|, x' over x * supp(mu)."""
    desc = table.descriptor
    total = 0.0
    allowance = 0.0
    for s, p in mu.items_values():
        xp = desc.multiply(x, s)
        entry = table.get(xp, y)
        total += p * entry.estimate
        allowance += p * entry.uncertainty
    center = table.get(x, y)
    residual = abs(total - rho_hat * center.estimate)
    allowance += rho_hat * center.uncertainty + rho_spread * abs(center.estimate)
    return CheckResult(residual=residual, allowance=slack * max(allowance, 1e-15))


def martin_vs_ratio(martin_table, kernel_table, xs: list, ys: list,
                    rel_tol: float) -> DiagnosticsReport:
    """Per-x comparison of the Martin and ratio-limit kernel estimates
    along a sequence; evidence for the covering question, never proof."""
    fmt = kernel_table.descriptor.format
    rows = []
    worst = 0.0
    for y in ys:
        for x in xs:
            k = martin_table.get(x, y)
            h = kernel_table.get(x, y)
            rel = abs(k.estimate - h.estimate) / abs(h.estimate)
            worst = max(worst, rel)
            rows.append({
                "x": fmt(x), "y": fmt(y),
                "martin": k.estimate, "ratio_limit": h.estimate,
                "rel_diff": rel,
            })
    passed = worst <= rel_tol
    return DiagnosticsReport(
        name="martin-vs-ratio",
        inputs={"points": len(rows)},
        residuals=rows,
        passed=passed,
        verdict=(
            f"kernels agree within {rel_tol:g} relative"
            if passed else f"max relative difference {worst:.3g} exceeds {rel_tol:g}"
        ),
        tolerances={"rel_diff": rel_tol},
        provenance={
            "martin": martin_table.provenance(),
            "ratio_limit": kernel_table.provenance(),
        },
    )
