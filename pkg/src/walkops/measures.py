"""Finitely supported measures on a group, stored mantissa + log-scale.

Convolution powers of a walk decay geometrically, so measures keep their
values as mantissas (max mantissa 1) alongside one shared natural-log
scale factor.  Ratios of entries of one measure are then exact float
quotients of mantissas, which is what every ratio-limit estimate consumes.

Also here: the measure-file grammar, structural validation (mass,
symmetry, aperiodicity probe, semigroup generation evidence), and the
radial calculus for isotropic measures on free groups, built on the
homogeneous-tree sphere counts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import (
    BudgetExceededError,
    ElementParseError,
    IsotropyError,
    PreconditionError,
)
from .groups import FreeGroup, GroupDescriptor

MASS_TOL = 1e-12
NEG_INF = float("-inf")


@dataclass
class ScaledMeasure:
    """Nonnegative finitely supported function: mantissas * exp(log_scale)."""

    support: dict
    log_scale: float = 0.0
    step_index: int = 0

    @classmethod
    def from_values(cls, values, descriptor=None, log_scale=0.0, step_index=0):
        """Normalize raw values to max-mantissa-1 form; zero entries dropped."""
        items = [(g, v) for g, v in values.items() if v != 0.0]
        if not items:
            raise ValueError("measure has empty support")
        if any(v < 0 for _, v in items):
            raise ValueError("measure has a negative entry")
        if descriptor is not None:
            items.sort(key=lambda gv: descriptor.sort_key(gv[0]))
        peak = max(v for _, v in items)
        return cls(
            support={g: v / peak for g, v in items},
            log_scale=log_scale + math.log(peak),
            step_index=step_index,
        )

    @classmethod
    def point_mass(cls, descriptor):
        return cls(support={descriptor.identity(): 1.0}, log_scale=0.0, step_index=0)

    def value(self, g) -> float:
        m = self.support.get(g, 0.0)
        return m * math.exp(self.log_scale) if m else 0.0

    def log_value(self, g) -> float:
        m = self.support.get(g, 0.0)
        return math.log(m) + self.log_scale if m else NEG_INF

    def total_mass(self) -> float:
        return math.fsum(self.support.values()) * math.exp(self.log_scale)

    def items_values(self):
        """(element, reconstructed value) pairs."""
        scale = math.exp(self.log_scale)
        return [(g, m * scale) for g, m in self.support.items()]


def convolve(mu: ScaledMeasure, nu: ScaledMeasure, descriptor: GroupDescriptor,
             support_cap: int | None = None) -> ScaledMeasure:
    """(mu * nu)(w) = sum_u mu(u) nu(u^-1 w), on mantissas.

    The reference keyed-collection implementation; the cache engines in
    ``powers`` provide faster equivalents and are tested against this one.
    """
    out: dict = {}
    for u, a in sorted(mu.support.items(), key=lambda gv: descriptor.sort_key(gv[0])):
        for w, b in sorted(nu.support.items(), key=lambda gv: descriptor.sort_key(gv[0])):
            g = descriptor.multiply(u, w)
            out[g] = out.get(g, 0.0) + a * b
    if support_cap is not None and len(out) > support_cap:
        raise BudgetExceededError(
            f"convolution support {len(out)} exceeds cap {support_cap}"
        )
    return ScaledMeasure.from_values(
        out,
        descriptor,
        log_scale=mu.log_scale + nu.log_scale,
        step_index=mu.step_index + nu.step_index,
    )


# ---------------------------------------------------------------------------
# measure files
# ---------------------------------------------------------------------------

def parse_measure(text: str, descriptor: GroupDescriptor) -> ScaledMeasure:
    """Parse lines of ``<element-text> <probability>``.

    Probabilities may be exact rationals (``1/4``) or decimals; blank lines
    and ``#`` comments are skipped.  Repeated elements are an error.
    """
    values: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.rsplit(None, 1)
        if len(parts) != 2:
            raise ElementParseError(f"measure line {lineno}: expected two fields")
        g = descriptor.parse(parts[0])
        try:
            p = float(Fraction(parts[1]))
        except (ValueError, ZeroDivisionError) as exc:
            raise ElementParseError(
                f"measure line {lineno}: bad probability {parts[1]!r}"
            ) from exc
        if g in values:
            raise ElementParseError(
                f"measure line {lineno}: duplicate element {parts[0]!r}"
            )
        values[g] = p
    return ScaledMeasure.from_values(values, descriptor)


def format_measure(mu: ScaledMeasure, descriptor: GroupDescriptor) -> str:
    lines = []
    for g, v in sorted(mu.items_values(), key=lambda gv: descriptor.sort_key(gv[0])):
        lines.append(f"{descriptor.format(g)} {v!r}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------

@dataclass
class MeasureReport:
    total_mass: float
    mass_ok: bool
    nonnegative: bool
    symmetric: bool
    period: int | None
    aperiodic: bool | None
    generates: str  # "yes" | "no" | "inconclusive"
    valid: bool
    messages: list = field(default_factory=list)


def validate_measure(mu: ScaledMeasure, descriptor: GroupDescriptor,
                     r_check: int = 3, probe_depth: int = 12,
                     mass_tol: float = MASS_TOL) -> MeasureReport:
    """Structural checks: mass 1, nonnegativity, symmetry flag, aperiodicity
    probe, and semigroup-generation evidence up to ``ball(r_check)``.

    Generation beyond the probe horizon is reported "inconclusive", never
    proved; it is evidence in the sense of the irreducibility assumption.
    """
    messages = []
    mass = mu.total_mass()
    mass_ok = abs(mass - 1.0) <= mass_tol
    if not mass_ok:
        messages.append(f"total mass {mass!r} differs from 1 beyond {mass_tol}")
    nonnegative = all(v >= 0.0 for v in mu.support.values())
    if not nonnegative:
        messages.append("negative entry in support")

    symmetric = True
    for g, v in mu.items_values():
        w = mu.value(descriptor.inverse(g))
        if not math.isclose(v, w, rel_tol=1e-12, abs_tol=0.0):
            symmetric = False
            break

    # aperiodicity probe: gcd of return times of small convolution powers
    period: int | None = None
    aperiodic: bool | None = None
    e = descriptor.identity()
    power = ScaledMeasure.point_mass(descriptor)
    returns = []
    try:
        for m in range(1, probe_depth + 1):
            power = convolve(power, mu, descriptor, support_cap=200_000)
            if power.support.get(e, 0.0) > 0.0:
                returns.append(m)
    except BudgetExceededError:
        messages.append("aperiodicity probe hit its support cap")
    if returns:
        period = math.gcd(*returns)
        aperiodic = period == 1
    else:
        messages.append(f"no return to identity within {probe_depth} steps")

    # semigroup generation: products of support elements must reach ball(r_check)
    target = set(descriptor.ball(r_check))
    supp = list(mu.support.keys())
    reached = {e}
    frontier = {e}
    generates = "inconclusive"
    for _ in range(4 * r_check + 4):
        nxt = set()
        for g in frontier:
            for s in supp:
                h = descriptor.multiply(g, s)
                if h not in reached:
                    nxt.add(h)
        if not nxt:
            generates = "yes" if target <= reached else "no"
            break
        reached |= nxt
        frontier = nxt
        if target <= reached:
            generates = "yes"
            break
    if generates == "no":
        messages.append(f"support does not generate ball({r_check}) as a semigroup")
    elif generates == "inconclusive":
        messages.append(f"generation check inconclusive within ball({r_check}) probe")

    valid = mass_ok and nonnegative and generates != "no"
    return MeasureReport(
        total_mass=mass,
        mass_ok=mass_ok,
        nonnegative=nonnegative,
        symmetric=symmetric,
        period=period,
        aperiodic=aperiodic,
        generates=generates,
        valid=valid,
        messages=messages,
    )


# ---------------------------------------------------------------------------
# homogeneous-tree combinatorics and the radial calculus
# ---------------------------------------------------------------------------

def sphere_size(q: int, r: int) -> int:
    """Number of vertices at distance r from a vertex of the q-regular tree."""
    if r < 0:
        return 0
    if r == 0:
        return 1
    return q * (q - 1) ** (r - 1)


def tree_sphere_count(n: int, k: int, l: int, q: int) -> int:
    """Vertices u of the q-regular tree with d(e,u)=k and d(u,w)=l, where
    d(e,w)=n.  Zero unless |n-k| <= l <= n+k and l = n+k (mod 2)."""
    if min(n, k, l) < 0:
        return 0
    if (n + k + l) % 2 or l < abs(n - k) or l > n + k:
        return 0
    b = (k + l - n) // 2  # branch length off the [e,w] geodesic
    a = k - b             # branch point distance from e
    if a < 0 or a > n:
        return 0
    if b == 0:
        return 1
    if n == 0:
        return sphere_size(q, b)
    if a == 0 or a == n:
        return (q - 1) ** b
    return (q - 2) * (q - 1) ** (b - 1)


def radial_step(f: np.ndarray, g: np.ndarray, q: int) -> np.ndarray:
    """Per-element radial convolution along axis 0 of ``f`` with radial ``g``.

    f[k] is the per-element value at tree distance k (extra axes broadcast);
    the result has ``len(f) + len(g) - 1`` radii.  Uses the closed-form
    sphere counts, vectorized over the output radius.
    """
    n_f = f.shape[0]
    out_shape = (n_f + len(g) - 1,) + f.shape[1:]
    out = np.zeros(out_shape, dtype=f.dtype)
    extra = (np.newaxis,) * (f.ndim - 1)
    for l in range(len(g)):
        gl = g[l]
        if gl == 0.0:
            continue
        if l == 0:
            out[:n_f] += gl * f
            continue
        # n = 0 target: u must sit on the sphere of radius l
        if l < n_f:
            out[0] += gl * sphere_size(q, l) * f[l]
        for o in range(-l, l + 1, 2):
            b = (o + l) // 2
            n_lo = max(1, b - o, -o)
            n_hi = min(out_shape[0] - 1, n_f - 1 - o)
            if n_hi < n_lo:
                continue
            if b == 0:
                counts = 1.0
            elif o == l:
                counts = float((q - 1) ** b)
            else:
                ns = np.arange(n_lo, n_hi + 1)
                counts = np.where(
                    ns == b - o,
                    float((q - 1) ** b),
                    float((q - 2) * (q - 1) ** (b - 1)),
                )[(...,) + extra]
            out[n_lo : n_hi + 1] += gl * counts * f[n_lo + o : n_hi + 1 + o]
    return out


@dataclass
class RadialMeasure:
    """Isotropic measure on F_s: per-element value indexed by tree distance."""

    values: np.ndarray
    log_scale: float = 0.0
    tree_degree: int = 4
    step_index: int = 0

    @classmethod
    def point_mass(cls, q: int):
        return cls(values=np.array([1.0]), log_scale=0.0, tree_degree=q, step_index=0)

    def value_at_radius(self, r: int) -> float:
        if 0 <= r < len(self.values):
            return float(self.values[r]) * math.exp(self.log_scale)
        return 0.0

    def total_mass(self) -> float:
        logs = log_radial_mass(self.values, self.tree_degree)
        return math.exp(logs + self.log_scale) if logs > NEG_INF else 0.0


def log_radial_mass(values: np.ndarray, q: int) -> float:
    """log( sum_r sphere_size(r) * values[r] ), overflow-safe."""
    terms = []
    for r, v in enumerate(values):
        if v > 0.0:
            terms.append(math.log(v) + _log_sphere_size(q, r))
    if not terms:
        return NEG_INF
    peak = max(terms)
    return peak + math.log(math.fsum(math.exp(t - peak) for t in terms))


def _log_sphere_size(q: int, r: int) -> float:
    if r == 0:
        return 0.0
    return math.log(q) + (r - 1) * math.log(q - 1)


def radial_reduce(mu: ScaledMeasure, descriptor: FreeGroup,
                  rel_tol: float = 1e-12) -> RadialMeasure:
    """Collapse an isotropic measure on F_s to per-radius values.

    Raises IsotropyError unless every element of each sphere carries the
    same mass (within ``rel_tol`` relative).
    """
    if not isinstance(descriptor, FreeGroup):
        raise PreconditionError("radial reduction requires a free-group descriptor")
    q = 2 * descriptor.rank
    by_radius: dict = {}
    for g, v in mu.support.items():
        by_radius.setdefault(len(g), []).append((g, v))
    max_r = max(by_radius)
    values = np.zeros(max_r + 1)
    for r, entries in by_radius.items():
        vals = [v for _, v in entries]
        lo, hi = min(vals), max(vals)
        if hi - lo > rel_tol * hi:
            raise IsotropyError(
                f"sphere radius {r}: per-element masses spread beyond {rel_tol}"
            )
        if len(entries) != sphere_size(q, r):
            raise IsotropyError(
                f"sphere radius {r}: {len(entries)} of {sphere_size(q, r)} "
                "elements carry mass"
            )
        values[r] = vals[0]
    return RadialMeasure(
        values=values,
        log_scale=mu.log_scale,
        tree_degree=q,
        step_index=mu.step_index,
    )


def radial_convolve(f: RadialMeasure, g: RadialMeasure) -> RadialMeasure:
    """Radial convolution (f*g)(n) = sum_{k,l} f(k) g(l) M(n,k,l)."""
    if f.tree_degree != g.tree_degree:
        raise PreconditionError("radial measures live on different trees")
    raw = radial_step(f.values, g.values, f.tree_degree)
    peak = raw.max()
    if peak <= 0.0:
        raise ValueError("radial convolution produced an empty measure")
    return RadialMeasure(
        values=raw / peak,
        log_scale=f.log_scale + g.log_scale + math.log(peak),
        tree_degree=f.tree_degree,
        step_index=f.step_index + g.step_index,
    )


def radial_to_measure(f: RadialMeasure, descriptor: FreeGroup,
                      max_radius: int | None = None) -> ScaledMeasure:
    """Expand a radial measure to explicit elements (small radii only)."""
    top = len(f.values) - 1 if max_radius is None else min(max_radius, len(f.values) - 1)
    values = {}
    for g in descriptor.ball(top):
        v = f.values[len(g)]
        if v > 0.0:
            values[g] = float(v)
    return ScaledMeasure.from_values(
        values, descriptor, log_scale=f.log_scale, step_index=f.step_index
    )
