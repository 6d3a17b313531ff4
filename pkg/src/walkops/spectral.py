"""Spectral radius, Green/F kernels, the Martin kernel and its metric.

All estimates come with explicit error accounting: the spectral radius
reports the oscillation of its extrapolated tail, Green values carry a
rigorous truncation bound from a geometric/polynomial tail model, and
Martin kernel entries carry an interval propagated from those bounds (or
from ladder spread when evaluation at the radius is not justified).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import PreconditionError
from .measures import NEG_INF
from .powers import PowersCache, is_aperiodic
from .sequences import fit_harmonic, richardson_harmonic, aitken_step


@dataclass
class SpectralEstimate:
    rho_hat: float
    method: str               # "extrapolated" | "even-subsequence" | "successive-ratio"
    m_range: tuple
    spread: float
    period: int = 1
    ratios: list = field(default_factory=list)  # raw (m, ratio) tail, for plots/audit

    def as_dict(self):
        return {
            "rho_hat": self.rho_hat,
            "method": self.method,
            "m_range": list(self.m_range),
            "spread": self.spread,
            "period": self.period,
        }


def _return_ratio_tail(cache: PowersCache, period: int):
    """(m, mu^{*(m+p)}(e)/mu^{*m}(e)) over the deepest defined stretch."""
    e = cache.descriptor.identity()
    logs = {}
    for m in range(cache.depth + 1):
        lv = cache.log_value(m, e)
        if lv > NEG_INF:
            logs[m] = lv
    ms, rs = [], []
    for m in sorted(logs):
        if m + period in logs:
            ms.append(m)
            rs.append(math.exp(logs[m + period] - logs[m]))
    return np.array(ms), np.array(rs)


def spectral_radius(cache: PowersCache, tail_window: int | None = None) -> SpectralEstimate:
    """Estimate rho from return-probability ratios.

    Aperiodic walks use successive ratios mu^{*(m+1)}(e)/mu^{*m}(e);
    period-p walks the p-step subsequence (ratio -> rho^p).  A Richardson
    step removes the 1 + c/m correction; the reported spread is the
    oscillation of the extrapolated tail.
    """
    aperiodic, period = is_aperiodic(cache)
    ms, rs = _return_ratio_tail(cache, period)
    if len(ms) < 2:
        raise PreconditionError("cache too shallow for spectral-radius ratios")
    half = np.searchsorted(ms, ms[-1] // 2)
    tail_ms, tail_rs = ms[half:], rs[half:]
    raw = list(zip(ms.tolist(), rs.tolist()))
    if len(tail_ms) < 2:
        tail_ms, tail_rs = ms, rs
    if len(tail_ms) == 1 or tail_ms[-1] < 8:
        rho = float(tail_rs[-1]) ** (1.0 / period)
        return SpectralEstimate(
            rho_hat=rho,
            method="successive-ratio" if aperiodic else "even-subsequence",
            m_range=(int(ms[0]), int(ms[-1])),
            spread=float(tail_rs.max() - tail_rs.min()),
            period=period,
            ratios=raw,
        )
    extr = richardson_harmonic(tail_ms, tail_rs)
    window = tail_window or max(4, len(extr) // 4)
    view = extr[-window:]
    rho_p = float(extr[-1])
    rho = rho_p ** (1.0 / period)
    spread = float(view.max() - view.min()) / period
    return SpectralEstimate(
        rho_hat=rho,
        method="extrapolated" if aperiodic else "even-subsequence",
        m_range=(int(tail_ms[0]), int(tail_ms[-1])),
        spread=spread,
        period=period,
        ratios=raw,
    )


def local_limit_exponent(cache: PowersCache, estimate: SpectralEstimate | None = None):
    """Fit alpha in mu^{*m}(e) ~ C rho^m m^{-alpha} from the ratio tail.

    Fits r_m = a + b/m on the deepest half of the return-ratio sequence;
    alpha = -b / (a * period).  Used by truncation-error models and by the
    decision to evaluate Green series at the radius.
    """
    if estimate is None:
        estimate = spectral_radius(cache)
    period = estimate.period
    ms, rs = _return_ratio_tail(cache, period)
    half = np.searchsorted(ms, ms[-1] // 2)
    ms, rs = ms[half:], rs[half:]
    if len(ms) < 3:
        raise PreconditionError("cache too shallow to fit a local-limit exponent")
    a, b = fit_harmonic(ms, rs)
    return -b / (a * period)


# ---------------------------------------------------------------------------
# Green kernel
# ---------------------------------------------------------------------------

@dataclass
class GreenValue:
    value: float
    truncation_bound: float
    terms_used: int
    z: float
    reliable: bool = True


def green(cache: PowersCache, x, y, z: float, terms: int | None = None,
          rho_hat: float | None = None, alpha: float | None = None) -> GreenValue:
    """Partial sum of G(x,y|z) = sum_n P^(n)_{x,y} z^n with a tail bound.

    The bound uses the geometric model t_{T+j} <= t_T (z rho)^j, tightened
    by the fitted polynomial factor when summing at the radius z rho = 1
    (needs alpha > 1); flagged unreliable past the radius of convergence.
    """
    if z < 0:
        raise PreconditionError("Green kernel is evaluated for z >= 0 only")
    top = cache.depth if terms is None else min(terms, cache.depth)
    g = cache.descriptor.multiply(cache.descriptor.inverse(x), y)
    log_z = math.log(z) if z > 0 else NEG_INF
    total = 0.0
    tail_terms = []
    for n in range(top + 1):
        lv = cache.log_value(n, g)
        if lv > NEG_INF:
            if n == 0:
                t = math.exp(lv)
            elif z == 0.0:
                t = 0.0
            else:
                t = math.exp(lv + n * log_z)
            total += t
            if n > top - 6 and t > 0.0:
                tail_terms.append(t)
        # absent entries contribute nothing; presence may resume later
    if z == 0.0:
        return GreenValue(value=total, truncation_bound=0.0, terms_used=top, z=z)
    if total == 0.0:
        # y not reached within the summed terms: nothing to anchor a tail
        # model on, so the partial sum bounds nothing
        return GreenValue(value=0.0, truncation_bound=math.inf, terms_used=top,
                          z=z, reliable=False)
    t_ref = max(tail_terms) if tail_terms else 0.0
    if t_ref == 0.0:
        return GreenValue(value=total, truncation_bound=0.0, terms_used=top, z=z)
    if rho_hat is None:
        rho_hat = spectral_radius(cache).rho_hat
    w = z * rho_hat
    if w < 1.0 - 1e-12:
        bound = t_ref * w / (1.0 - w)
        reliable = True
    elif w <= 1.0 + 1e-9 and alpha is not None and alpha > 1.0:
        bound = t_ref * top / (alpha - 1.0)
        reliable = True
    else:
        bound = math.inf
        reliable = False
    return GreenValue(value=total, truncation_bound=bound, terms_used=top,
                      z=z, reliable=reliable)


def f_kernel(cache: PowersCache, x, y, z: float, **kw) -> float:
    """F(x,y|z) = G(x,y|z) / G(y,y|z)."""
    gxy = green(cache, x, y, z, **kw)
    gyy = green(cache, y, y, z, **kw)
    return gxy.value / gyy.value


# ---------------------------------------------------------------------------
# Martin kernel
# ---------------------------------------------------------------------------

@dataclass
class MartinEntry:
    x: object
    y: object
    estimate: float
    lo: float
    hi: float
    method: str          # "at-radius" | "ladder"
    converged: bool = True

    @property
    def uncertainty(self) -> float:
        return max(self.hi - self.estimate, self.estimate - self.lo)


def martin_kernel(cache: PowersCache, x, y, rho_hat: float, alpha: float,
                  terms: int | None = None, ladder_steps: int = 8,
                  policy: str = "auto") -> MartinEntry:
    """K(x,y) = lim_{z -> 1/rho} G(x,y|z) / G(e,y|z), base point e.

    Evaluation policy: with ``auto``, the ratio is evaluated directly at
    the radius when the fitted local-limit exponent exceeds 1 (the series
    converges there), with the interval propagated from the two truncation
    bounds; otherwise along the ladder z_k = (1 - 2^-k)/rho with Aitken
    extrapolation and the ladder spread as the interval.  ``at-radius`` and
    ``ladder`` force one branch.
    """
    e = cache.descriptor.identity()
    if policy not in ("auto", "at-radius", "ladder"):
        raise PreconditionError(f"unknown martin_kernel policy {policy!r}")
    at_radius = alpha > 1.0 if policy == "auto" else policy == "at-radius"
    if at_radius:
        z = 1.0 / rho_hat
        g1 = green(cache, x, y, z, terms=terms, rho_hat=rho_hat, alpha=alpha)
        g2 = green(cache, e, y, z, terms=terms, rho_hat=rho_hat, alpha=alpha)
        est = g1.value / g2.value
        lo = g1.value / (g2.value + g2.truncation_bound)
        hi = (g1.value + g1.truncation_bound) / g2.value
        return MartinEntry(x=x, y=y, estimate=est, lo=lo, hi=hi, method="at-radius",
                           converged=g1.reliable and g2.reliable)
    vals = []
    for k in range(2, 2 + ladder_steps):
        z = (1.0 - 2.0 ** (-k)) / rho_hat
        g1 = green(cache, x, y, z, terms=terms, rho_hat=rho_hat, alpha=alpha)
        g2 = green(cache, e, y, z, terms=terms, rho_hat=rho_hat, alpha=alpha)
        vals.append(g1.value / g2.value)
    acc = [aitken_step(vals[i], vals[i + 1], vals[i + 2]) for i in range(len(vals) - 2)]
    tail = acc[-3:]
    est = tail[-1]
    lo, hi = min(tail), max(tail)
    spread = hi - lo
    return MartinEntry(x=x, y=y, estimate=est, lo=lo, hi=hi, method="ladder",
                       converged=spread <= 0.05 * max(abs(est), 1e-30))


class MartinTable:
    """Lazy table of Martin-kernel entries over one cache."""

    def __init__(self, cache: PowersCache, rho_hat: float, alpha: float,
                 terms: int | None = None, policy: str = "auto"):
        self.cache = cache
        self.rho_hat = rho_hat
        self.alpha = alpha
        self.terms = terms
        self.policy = policy
        self._entries: dict = {}

    def get(self, x, y) -> MartinEntry:
        key = (x, y)
        if key not in self._entries:
            self._entries[key] = martin_kernel(
                self.cache, x, y, self.rho_hat, self.alpha, terms=self.terms,
                policy=self.policy,
            )
        return self._entries[key]

    def provenance(self) -> dict:
        return {
            "kernel": "martin",
            "M": self.cache.depth,
            "rho_hat": self.rho_hat,
            "alpha": self.alpha,
            "terms": self.terms or self.cache.depth,
            "policy": self.policy,
        }


@dataclass
class MetricValue:
    value: float
    tail_bound: float
    uncertainty: float

    @property
    def upper(self) -> float:
        return self.value + self.tail_bound + self.uncertainty


def martin_metric(table, j1, j2, ball: list, bounds) -> MetricValue:
    """Truncated Martin metric over the phi-prefix ``ball``.

    d(j1,j2) = sum_i (|K(i,j1) - K(i,j2)| + |d_{i,j1} - d_{i,j2}|) / (C_i 2^phi(i))
    with phi the 1-based ball position.  The tail over phi > N is bounded
    by 2 * 2^-N, valid whenever every C_i >= 1 (each summand is then at
    most 2 * 2^-phi); ``bounds`` maps an element to its C constant.
    """
    total = 0.0
    unc = 0.0
    min_c = math.inf
    for phi, i in enumerate(ball, start=1):
        c_i = bounds(i)
        min_c = min(min_c, c_i)
        e1 = table.get(i, j1)
        e2 = table.get(i, j2)
        delta = abs(e1.estimate - e2.estimate)
        delta += abs((1.0 if i == j1 else 0.0) - (1.0 if i == j2 else 0.0))
        weight = 1.0 / (c_i * 2.0 ** phi)
        total += delta * weight
        unc += (e1.uncertainty + e2.uncertainty) * weight
    tail = 2.0 * 2.0 ** (-len(ball))
    if min_c < 1.0:
        tail /= min_c
    return MetricValue(value=total, tail_bound=tail, uncertainty=unc)
