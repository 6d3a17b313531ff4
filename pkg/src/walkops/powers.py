"""Convolution-power caches: every level of mu^{*m} for m = 0..M.

Iterative powering (never binary) so that ratio sequences can read every
level.  Four engines share one query interface:

* ``dense``          lattice walks, one box-shaped array per level
* ``radial``         isotropic free-group walks, O(m) radii per level
* ``radial-lattice`` Cartesian (isotropic free) x (lattice) walks
* ``generic``        anything else, interned-element scatter-add loops
                     (the hot kernel; compiled when the extension built)

An entry of mu^{*m} "exists" exactly when it is present/positive in the
level storage; zeros are never stored.  Each level keeps mantissas with a
shared log scale, so entry ratios within a level are exact float
quotients.

Retention is ``full`` (every level queryable everywhere) or ``tracked``
(every level queryable on a declared element set / region only, bounding
memory for deep caches).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from . import _backend
from .errors import (
    BudgetExceededError,
    CoverageError,
    PreconditionError,
)
from .groups import (
    FreeGroup,
    GroupDescriptor,
    LatticeGroup,
    ProductGroup,
    descriptor_from_string,
)
from .measures import (
    NEG_INF,
    RadialMeasure,
    ScaledMeasure,
    IsotropyError,
    log_radial_mass,
    radial_reduce,
    radial_step,
    sphere_size,
)

DEFAULT_SUPPORT_CAP = 2_000_000
DEFAULT_MEMORY_BUDGET_MB = 512


class PowersCache:
    """Base cache: query interface over per-level storage."""

    engine_name = "abstract"

    def __init__(self, descriptor: GroupDescriptor, mu: ScaledMeasure):
        self.descriptor = descriptor
        self.mu = mu
        self.complete = True
        self.budget_note = ""

    # -- to be provided by engines ------------------------------------------

    @property
    def depth(self) -> int:
        raise NotImplementedError

    def log_value(self, m: int, g) -> float:
        """log mu^{*m}(g); -inf when the entry is absent (true zero)."""
        raise NotImplementedError

    def level_mass(self, m: int) -> float:
        raise NotImplementedError

    def level_log_scale(self, m: int) -> float:
        raise NotImplementedError

    # -- shared queries -------------------------------------------------------

    def _check_level(self, m: int):
        if not 0 <= m <= self.depth:
            raise CoverageError(f"level {m} outside cache depth {self.depth}")

    def value(self, m: int, g) -> float:
        lv = self.log_value(m, g)
        return math.exp(lv) if lv > NEG_INF else 0.0

    def has_value(self, m: int, g) -> bool:
        return self.log_value(m, g) > NEG_INF

    def log_transition(self, m: int, x, y) -> float:
        """log P^(m)_{x,y} = log mu^{*m}(x^-1 y)."""
        return self.log_value(m, self.descriptor.multiply(self.descriptor.inverse(x), y))

    def has_edge(self, m: int, x, y) -> bool:
        return self.log_transition(m, x, y) > NEG_INF

    def support_in_ball(self, m: int, radius: int) -> list:
        """(element, log value) for the part of level m inside ball(radius)."""
        out = []
        for g in self.descriptor.ball(radius):
            lv = self.log_value(m, g)
            if lv > NEG_INF:
                out.append((g, lv))
        return out

    def level_measure(self, m: int) -> ScaledMeasure:
        raise CoverageError(
            f"{self.engine_name} engine does not materialize full levels"
        )

    def export_payload(self) -> dict:
        raise NotImplementedError


def transition(cache: PowersCache, n: int, x, y) -> float:
    """P^(n)_{x,y} as a plain float (0.0 when the edge is absent)."""
    lv = cache.log_transition(n, x, y)
    return math.exp(lv) if lv > NEG_INF else 0.0


def is_aperiodic(cache: PowersCache, probe_depth: int | None = None):
    """(aperiodic, period) from the gcd of return times within the cache."""
    e = cache.descriptor.identity()
    top = cache.depth if probe_depth is None else min(probe_depth, cache.depth)
    returns = [m for m in range(1, top + 1) if cache.has_value(m, e)]
    if not returns:
        raise PreconditionError(
            f"no return to identity within {top} steps; period undetectable"
        )
    period = math.gcd(*returns)
    return period == 1, period


# ---------------------------------------------------------------------------
# generic engine
# ---------------------------------------------------------------------------

class _Interner:
    """Stable element <-> integer-id table shared by all levels."""

    def __init__(self, descriptor):
        e = descriptor.identity()
        self.elements = [e]
        self.index = {e: 0}

    def intern(self, g) -> int:
        i = self.index.get(g)
        if i is None:
            i = len(self.elements)
            self.index[g] = i
            self.elements.append(g)
        return i

    def __len__(self):
        return len(self.elements)


@dataclass
class _Level:
    ids: np.ndarray       # sorted int64 interned ids with positive mass
    vals: np.ndarray      # mantissas, max 1
    log_scale: float
    mass: float


class GenericPowers(PowersCache):
    """Keyed-support engine over interned ids; scatter-add hot loop."""

    engine_name = "generic"

    def __init__(self, descriptor, mu, depth, support_cap=DEFAULT_SUPPORT_CAP,
                 track=None):
        super().__init__(descriptor, mu)
        items = sorted(mu.support.items(), key=lambda gv: descriptor.sort_key(gv[0]))
        self._mu_elems = [g for g, _ in items]
        self._mu_vals = np.array([v for _, v in items])
        self._mu_ls = mu.log_scale
        self._interner = _Interner(descriptor)
        self._rows = np.full((256, len(self._mu_elems)), -1, dtype=np.int64)
        self._track_set = None
        if track is not None:
            self._track_set = set(track)
            self._track_set.add(descriptor.identity())
        self._levels: list = []
        self._tracked_levels: list = []
        self._push_level(np.array([0], dtype=np.int64), np.array([1.0]), 0.0)
        for m in range(1, depth + 1):
            try:
                self._step(support_cap)
            except BudgetExceededError as exc:
                self.complete = False
                self.budget_note = f"stopped at level {m - 1}: {exc}"
                break

    def _push_level(self, ids, vals, log_scale):
        mass = math.exp(math.log(math.fsum(vals)) + log_scale)
        level = _Level(ids=ids, vals=vals, log_scale=log_scale, mass=mass)
        if self._track_set is None:
            self._levels.append(level)
        else:
            tracked = {}
            for g in self._track_set:
                i = self._interner.index.get(g)
                if i is not None:
                    pos = np.searchsorted(ids, i)
                    if pos < len(ids) and ids[pos] == i:
                        tracked[g] = float(vals[pos])
            self._tracked_levels.append((tracked, log_scale, mass))
            self._current = level

    def _ensure_rows(self, ids):
        inter = self._interner
        mul = self.descriptor.multiply
        elems = inter.elements
        missing = ids[self._rows[ids, 0] < 0]
        for i in missing.tolist():
            g = elems[i]
            row = [inter.intern(mul(g, s)) for s in self._mu_elems]
            if len(inter) > self._rows.shape[0]:
                grown = np.full(
                    (max(2 * self._rows.shape[0], len(inter)), self._rows.shape[1]),
                    -1,
                    dtype=np.int64,
                )
                grown[: self._rows.shape[0]] = self._rows
                self._rows = grown
            self._rows[i] = row

    def _step(self, support_cap):
        level = self._levels[-1] if self._track_set is None else self._current
        self._ensure_rows(level.ids)
        acc = np.zeros(len(self._interner))
        _backend.scatter_add_outer(
            acc, np.ascontiguousarray(self._rows[level.ids]), level.vals, self._mu_vals
        )
        ids = np.flatnonzero(acc > 0.0).astype(np.int64)
        if len(ids) > support_cap:
            raise BudgetExceededError(
                f"support {len(ids)} exceeds cap {support_cap}"
            )
        vals = acc[ids]
        peak = vals.max()
        self._push_level(
            ids, vals / peak, level.log_scale + self._mu_ls + math.log(peak)
        )

    @property
    def depth(self):
        n = len(self._levels) if self._track_set is None else len(self._tracked_levels)
        return n - 1

    def log_value(self, m, g):
        self._check_level(m)
        if self._track_set is not None:
            if g not in self._track_set:
                raise CoverageError(
                    "element not in the tracked set of this cache"
                )
            tracked, ls, _ = self._tracked_levels[m]
            v = tracked.get(g, 0.0)
            return math.log(v) + ls if v else NEG_INF
        i = self._interner.index.get(g)
        if i is None:
            return NEG_INF
        level = self._levels[m]
        pos = int(np.searchsorted(level.ids, i))
        if pos < len(level.ids) and level.ids[pos] == i:
            return math.log(level.vals[pos]) + level.log_scale
        return NEG_INF

    def level_mass(self, m):
        self._check_level(m)
        if self._track_set is not None:
            return self._tracked_levels[m][2]
        return self._levels[m].mass

    def level_log_scale(self, m):
        self._check_level(m)
        if self._track_set is not None:
            return self._tracked_levels[m][1]
        return self._levels[m].log_scale

    def level_measure(self, m):
        self._check_level(m)
        if self._track_set is not None:
            raise CoverageError("tracked cache cannot materialize full levels")
        level = self._levels[m]
        elems = self._interner.elements
        return ScaledMeasure(
            support={elems[i]: float(v) for i, v in zip(level.ids.tolist(), level.vals)},
            log_scale=level.log_scale,
            step_index=m,
        )

    def support_size(self, m):
        self._check_level(m)
        if self._track_set is not None:
            raise CoverageError("tracked cache does not keep full supports")
        return len(self._levels[m].ids)

    def export_payload(self):
        if self._track_set is not None:
            raise CoverageError("tracked caches are not exportable")
        fmt = self.descriptor.format
        elems = self._interner.elements
        levels = []
        for level in self._levels:
            levels.append({
                "log_scale": level.log_scale,
                "entries": [
                    [fmt(elems[i]), float(v)]
                    for i, v in zip(level.ids.tolist(), level.vals)
                ],
            })
        return {"levels": levels}

    @classmethod
    def _from_payload(cls, descriptor, mu, payload):
        self = cls.__new__(cls)
        PowersCache.__init__(self, descriptor, mu)
        items = sorted(mu.support.items(), key=lambda gv: descriptor.sort_key(gv[0]))
        self._mu_elems = [g for g, _ in items]
        self._mu_vals = np.array([v for _, v in items])
        self._mu_ls = mu.log_scale
        self._interner = _Interner(descriptor)
        self._rows = np.full((256, len(self._mu_elems)), -1, dtype=np.int64)
        self._track_set = None
        self._levels = []
        self._tracked_levels = []
        for lv in payload["levels"]:
            pairs = [(self._interner.intern(descriptor.parse(t)), v)
                     for t, v in lv["entries"]]
            pairs.sort()
            ids = np.array([i for i, _ in pairs], dtype=np.int64)
            vals = np.array([v for _, v in pairs])
            self._push_level(ids, vals, lv["log_scale"])
        return self


# ---------------------------------------------------------------------------
# dense lattice engine
# ---------------------------------------------------------------------------

class DenseLatticePowers(PowersCache):
    """Z^d walks: one box array per level; steps are shifted adds."""

    engine_name = "dense"

    def __init__(self, descriptor: LatticeGroup, mu, depth,
                 memory_budget_mb=DEFAULT_MEMORY_BUDGET_MB, track=None):
        super().__init__(descriptor, mu)
        d = descriptor.dimension
        items = sorted(mu.support.items(), key=lambda gv: descriptor.sort_key(gv[0]))
        self._offsets = [g for g, _ in items]
        self._ovals = [v for _, v in items]
        self._mu_ls = mu.log_scale
        self._lo_step = tuple(min(g[i] for g in self._offsets) for i in range(d))
        self._hi_step = tuple(max(g[i] for g in self._offsets) for i in range(d))

        est = self._estimate_bytes(depth)
        self._track_box = None
        if est > memory_budget_mb * 2**20:
            if track is None:
                raise BudgetExceededError(
                    f"full retention needs ~{est / 2**20:.0f} MiB "
                    f"(budget {memory_budget_mb} MiB); pass a track set"
                )
            pts = list(track) + [descriptor.identity()]
            self._track_box = (
                tuple(min(p[i] for p in pts) for i in range(d)),
                tuple(max(p[i] for p in pts) for i in range(d)),
            )
        # levels: (lo, array, log_scale, mass)
        self._levels = [((0,) * d, np.ones((1,) * d), 0.0, 1.0)]
        self._current = self._levels[0]
        for _ in range(depth):
            self._step()

    def _estimate_bytes(self, depth):
        total = 0
        width = tuple(h - l for l, h in zip(self._lo_step, self._hi_step))
        for m in range(depth + 1):
            cells = 1
            for w in width:
                cells *= m * w + 1
            total += cells * 8
        return total

    def _step(self):
        lo, arr, ls, _ = self._current
        d = len(lo)
        lo_new = tuple(l + s for l, s in zip(lo, self._lo_step))
        hi_new = tuple(
            l + n - 1 + s for l, n, s in zip(lo, arr.shape, self._hi_step)
        )
        shape = tuple(h - l + 1 for l, h in zip(lo_new, hi_new))
        out = np.zeros(shape)
        for g, v in zip(self._offsets, self._ovals):
            start = tuple(ol + gc - nl for ol, gc, nl in zip(lo, g, lo_new))
            sl = tuple(slice(s, s + n) for s, n in zip(start, arr.shape))
            out[sl] += v * arr
        peak = out.max()
        out /= peak
        ls_new = ls + self._mu_ls + math.log(peak)
        mass = math.exp(math.log(out.sum()) + ls_new)
        full = (lo_new, out, ls_new, mass)
        self._current = full
        if self._track_box is None:
            self._levels.append(full)
        else:
            tlo = tuple(max(a, b) for a, b in zip(lo_new, self._track_box[0]))
            thi = tuple(
                min(l + n - 1, b)
                for l, n, b in zip(lo_new, shape, self._track_box[1])
            )
            if any(a > b for a, b in zip(tlo, thi)):
                self._levels.append((tlo, np.zeros((0,) * len(lo)), ls_new, mass))
            else:
                sl = tuple(
                    slice(a - l, b - l + 1) for a, b, l in zip(tlo, thi, lo_new)
                )
                self._levels.append((tlo, out[sl].copy(), ls_new, mass))

    @property
    def depth(self):
        return len(self._levels) - 1

    def log_value(self, m, g):
        self._check_level(m)
        lo, arr, ls, _ = self._levels[m]
        idx = tuple(c - l for c, l in zip(g, lo))
        if any(i < 0 or i >= n for i, n in zip(idx, arr.shape)):
            if self._track_box is not None and not self._inside_track(g):
                raise CoverageError("element outside the tracked box of this cache")
            return NEG_INF
        v = arr[idx]
        return math.log(v) + ls if v > 0.0 else NEG_INF

    def _inside_track(self, g):
        lo, hi = self._track_box
        return all(a <= c <= b for c, a, b in zip(g, lo, hi))

    def level_mass(self, m):
        self._check_level(m)
        return self._levels[m][3]

    def level_log_scale(self, m):
        self._check_level(m)
        return self._levels[m][2]

    def level_measure(self, m):
        self._check_level(m)
        if self._track_box is not None:
            raise CoverageError("tracked cache cannot materialize full levels")
        lo, arr, ls, _ = self._levels[m]
        support = {}
        for idx in np.argwhere(arr > 0.0):
            g = tuple(int(i + l) for i, l in zip(idx, lo))
            support[g] = float(arr[tuple(idx)])
        return ScaledMeasure(support=support, log_scale=ls, step_index=m)

    def export_payload(self):
        if self._track_box is not None:
            raise CoverageError("tracked caches are not exportable")
        levels = []
        for lo, arr, ls, _ in self._levels:
            levels.append({
                "lo": list(lo),
                "shape": list(arr.shape),
                "values": [float(v) for v in arr.ravel()],
                "log_scale": ls,
            })
        return {"levels": levels}

    @classmethod
    def _from_payload(cls, descriptor, mu, payload):
        self = cls.__new__(cls)
        PowersCache.__init__(self, descriptor, mu)
        items = sorted(mu.support.items(), key=lambda gv: descriptor.sort_key(gv[0]))
        self._offsets = [g for g, _ in items]
        self._ovals = [v for _, v in items]
        self._mu_ls = mu.log_scale
        d = descriptor.dimension
        self._lo_step = tuple(min(g[i] for g in self._offsets) for i in range(d))
        self._hi_step = tuple(max(g[i] for g in self._offsets) for i in range(d))
        self._track_box = None
        self._levels = []
        for lv in payload["levels"]:
            arr = np.array(lv["values"]).reshape(lv["shape"])
            ls = lv["log_scale"]
            mass = math.exp(math.log(arr.sum()) + ls) if arr.size else 0.0
            self._levels.append((tuple(lv["lo"]), arr, ls, mass))
        self._current = self._levels[-1]
        return self


# ---------------------------------------------------------------------------
# radial free-group engine
# ---------------------------------------------------------------------------

class RadialFreePowers(PowersCache):
    """Isotropic walks on F_s: per-level per-element values by tree radius."""

    engine_name = "radial"

    def __init__(self, descriptor: FreeGroup, mu, depth):
        super().__init__(descriptor, mu)
        radial = radial_reduce(mu, descriptor)
        self.q = radial.tree_degree
        self._mu_vals = radial.values
        self._mu_ls = radial.log_scale
        # levels: (values, log_scale, mass)
        self._levels = [(np.array([1.0]), 0.0, 1.0)]
        for _ in range(depth):
            self._step()

    def _step(self):
        vals, ls, _ = self._levels[-1]
        out = radial_step(vals, self._mu_vals, self.q)
        peak = out.max()
        out /= peak
        ls_new = ls + self._mu_ls + math.log(peak)
        mass = math.exp(log_radial_mass(out, self.q) + ls_new)
        self._levels.append((out, ls_new, mass))

    @property
    def depth(self):
        return len(self._levels) - 1

    def log_value_at_radius(self, m, r):
        self._check_level(m)
        vals, ls, _ = self._levels[m]
        if 0 <= r < len(vals) and vals[r] > 0.0:
            return math.log(vals[r]) + ls
        return NEG_INF

    def log_value(self, m, g):
        return self.log_value_at_radius(m, len(g))

    def level_mass(self, m):
        self._check_level(m)
        return self._levels[m][2]

    def level_log_scale(self, m):
        self._check_level(m)
        return self._levels[m][1]

    def level_radial(self, m) -> RadialMeasure:
        self._check_level(m)
        vals, ls, _ = self._levels[m]
        return RadialMeasure(
            values=vals.copy(), log_scale=ls, tree_degree=self.q, step_index=m
        )

    def level_measure(self, m):
        raise CoverageError(
            "radial levels are not materialized per element; "
            "use level_radial or support_in_ball"
        )

    def export_payload(self):
        return {
            "levels": [
                {"values": [float(v) for v in vals], "log_scale": ls}
                for vals, ls, _ in self._levels
            ]
        }

    @classmethod
    def _from_payload(cls, descriptor, mu, payload):
        self = cls.__new__(cls)
        PowersCache.__init__(self, descriptor, mu)
        radial = radial_reduce(mu, descriptor)
        self.q = radial.tree_degree
        self._mu_vals = radial.values
        self._mu_ls = radial.log_scale
        self._levels = []
        for lv in payload["levels"]:
            vals = np.array(lv["values"])
            ls = lv["log_scale"]
            mass = math.exp(log_radial_mass(vals, self.q) + ls)
            self._levels.append((vals, ls, mass))
        return self


# ---------------------------------------------------------------------------
# Cartesian (isotropic free) x (lattice) engine
# ---------------------------------------------------------------------------

def _cartesian_split(descriptor: ProductGroup, mu: ScaledMeasure):
    """Split a Cartesian measure on free x lattice into radial + offset parts.

    Returns (tree_values, lattice_offsets) in mantissa units, or None when
    the measure moves both coordinates at once (not a Cartesian mixture).
    Mass at the identity is carried by the tree part (either choice acts as
    the identity in the step).
    """
    left, right = descriptor.left, descriptor.right
    if not isinstance(left, FreeGroup) or not isinstance(right, LatticeGroup):
        return None
    e_l, zero = left.identity(), right.identity()
    q = 2 * left.rank
    tree_elems: dict = {}
    lat: dict = {}
    for (w, v), mass in mu.support.items():
        if v == zero:
            tree_elems[w] = mass
        elif w == e_l:
            lat[v] = mass
        else:
            return None
    if not tree_elems:
        tree_vals = np.array([0.0])
    else:
        by_radius: dict = {}
        for w, mass in tree_elems.items():
            by_radius.setdefault(len(w), []).append(mass)
        values = np.zeros(max(by_radius) + 1)
        for r, masses in by_radius.items():
            if len(masses) != sphere_size(q, r):
                raise IsotropyError(
                    f"tree factor of the Cartesian measure misses sphere {r} elements"
                )
            lo, hi = min(masses), max(masses)
            if hi - lo > 1e-12 * hi:
                raise IsotropyError(
                    f"tree factor of the Cartesian measure is not isotropic at radius {r}"
                )
            values[r] = masses[0]
        tree_vals = values
    return tree_vals, lat


class RadialLatticePowers(PowersCache):
    """Cartesian walks on F_s x Z^d with an isotropic tree factor.

    Level state: value per (tree radius, lattice point); the step is a
    radial tree move plus lattice shifted adds, both linear in the state.
    """

    engine_name = "radial-lattice"

    def __init__(self, descriptor: ProductGroup, mu, depth,
                 memory_budget_mb=DEFAULT_MEMORY_BUDGET_MB, track=None):
        super().__init__(descriptor, mu)
        split = _cartesian_split(descriptor, mu)
        if split is None:
            raise PreconditionError(
                "measure is not a Cartesian mixture on free x lattice"
            )
        self._tree_vals, self._lat = split
        self.q = 2 * descriptor.left.rank
        self._mu_ls = mu.log_scale
        d = descriptor.right.dimension
        offs = list(self._lat.keys()) + [descriptor.right.identity()]
        self._lo_step = tuple(min(o[i] for o in offs) for i in range(d))
        self._hi_step = tuple(max(o[i] for o in offs) for i in range(d))
        self._r_step = len(self._tree_vals) - 1

        est = self._estimate_bytes(depth)
        self._track_region = None
        if est > memory_budget_mb * 2**20:
            if track is None:
                raise BudgetExceededError(
                    f"full retention needs ~{est / 2**20:.0f} MiB "
                    f"(budget {memory_budget_mb} MiB); pass a track set"
                )
            pts = list(track) + [descriptor.identity()]
            r_keep = max(len(w) for w, _ in pts)
            lat_lo = tuple(min(p[1][i] for p in pts) for i in range(d))
            lat_hi = tuple(max(p[1][i] for p in pts) for i in range(d))
            self._track_region = (r_keep, lat_lo, lat_hi)
        # levels: (lat_lo, array[(r, *lattice)], log_scale, mass)
        self._levels = [((0,) * d, np.ones((1,) * (d + 1)), 0.0, 1.0)]
        self._current = self._levels[0]
        for _ in range(depth):
            self._step()

    def _estimate_bytes(self, depth):
        total = 0
        width = tuple(h - l for l, h in zip(self._lo_step, self._hi_step))
        for m in range(depth + 1):
            cells = m * self._r_step + 1
            for w in width:
                cells *= m * w + 1
            total += cells * 8
        return total

    def _step(self):
        lat_lo, arr, ls, _ = self._current
        d = len(lat_lo)
        lo_new = tuple(l + s for l, s in zip(lat_lo, self._lo_step))
        hi_new = tuple(
            l + n - 1 + s
            for l, n, s in zip(lat_lo, arr.shape[1:], self._hi_step)
        )
        lat_shape = tuple(h - l + 1 for l, h in zip(lo_new, hi_new))
        r_size = arr.shape[0] + self._r_step
        out = np.zeros((r_size,) + lat_shape)
        # tree-factor move: radial step along axis 0, lattice unchanged
        emb = tuple(
            slice(ol - nl, ol - nl + n)
            for ol, nl, n in zip(lat_lo, lo_new, arr.shape[1:])
        )
        out[(slice(0, arr.shape[0] + self._r_step),) + emb] += radial_step(
            arr, self._tree_vals, self.q
        )
        # lattice-factor moves: shifted adds at fixed tree radius
        for v, mass in sorted(self._lat.items()):
            start = tuple(ol + vc - nl for ol, vc, nl in zip(lat_lo, v, lo_new))
            sl = tuple(slice(s, s + n) for s, n in zip(start, arr.shape[1:]))
            out[(slice(0, arr.shape[0]),) + sl] += mass * arr
        peak = out.max()
        out /= peak
        ls_new = ls + self._mu_ls + math.log(peak)
        mass = self._mass_of(out, ls_new)
        full = (lo_new, out, ls_new, mass)
        self._current = full
        if self._track_region is None:
            self._levels.append(full)
        else:
            r_keep, tlo, thi = self._track_region
            clo = tuple(max(a, b) for a, b in zip(lo_new, tlo))
            chi = tuple(
                min(l + n - 1, b) for l, n, b in zip(lo_new, lat_shape, thi)
            )
            if any(a > b for a, b in zip(clo, chi)):
                self._levels.append((clo, np.zeros((0,) * (d + 1)), ls_new, mass))
            else:
                sl = tuple(slice(a - l, b - l + 1) for a, b, l in zip(clo, chi, lo_new))
                keep = out[(slice(0, min(r_keep + 1, out.shape[0])),) + sl].copy()
                self._levels.append((clo, keep, ls_new, mass))

    def _mass_of(self, arr, ls):
        flat = arr.reshape(arr.shape[0], -1).sum(axis=1)
        logs = log_radial_mass(flat, self.q)
        return math.exp(logs + ls) if logs > NEG_INF else 0.0

    @property
    def depth(self):
        return len(self._levels) - 1

    def log_value(self, m, g):
        self._check_level(m)
        w, v = g
        lat_lo, arr, ls, _ = self._levels[m]
        r = len(w)
        idx = tuple(c - l for c, l in zip(v, lat_lo))
        inside = r < arr.shape[0] and all(
            0 <= i < n for i, n in zip(idx, arr.shape[1:])
        )
        if not inside:
            if self._track_region is not None and not self._inside_track(g):
                raise CoverageError("element outside the tracked region of this cache")
            return NEG_INF
        val = arr[(r,) + idx]
        return math.log(val) + ls if val > 0.0 else NEG_INF

    def _inside_track(self, g):
        w, v = g
        r_keep, tlo, thi = self._track_region
        return len(w) <= r_keep and all(a <= c <= b for c, a, b in zip(v, tlo, thi))

    def level_mass(self, m):
        self._check_level(m)
        return self._levels[m][3]

    def level_log_scale(self, m):
        self._check_level(m)
        return self._levels[m][2]

    def export_payload(self):
        if self._track_region is not None:
            raise CoverageError("tracked caches are not exportable")
        levels = []
        for lat_lo, arr, ls, _ in self._levels:
            levels.append({
                "lat_lo": list(lat_lo),
                "shape": list(arr.shape),
                "values": [float(v) for v in arr.ravel()],
                "log_scale": ls,
            })
        return {"levels": levels}

    @classmethod
    def _from_payload(cls, descriptor, mu, payload):
        self = cls.__new__(cls)
        PowersCache.__init__(self, descriptor, mu)
        split = _cartesian_split(descriptor, mu)
        self._tree_vals, self._lat = split
        self.q = 2 * descriptor.left.rank
        self._mu_ls = mu.log_scale
        self._track_region = None
        self._levels = []
        for lv in payload["levels"]:
            arr = np.array(lv["values"]).reshape(lv["shape"])
            ls = lv["log_scale"]
            self._levels.append((tuple(lv["lat_lo"]), arr, ls, self._mass_of(arr, ls)))
        self._current = self._levels[-1]
        return self


# ---------------------------------------------------------------------------
# construction and (de)serialization
# ---------------------------------------------------------------------------

_ENGINES = {
    "generic": GenericPowers,
    "dense": DenseLatticePowers,
    "radial": RadialFreePowers,
    "radial-lattice": RadialLatticePowers,
}


def pick_engine(descriptor: GroupDescriptor, mu: ScaledMeasure) -> str:
    """Fastest applicable engine for this (descriptor, measure) pair."""
    if isinstance(descriptor, LatticeGroup):
        return "dense"
    if isinstance(descriptor, FreeGroup):
        try:
            radial_reduce(mu, descriptor)
            return "radial"
        except IsotropyError:
            return "generic"
    if isinstance(descriptor, ProductGroup):
        try:
            if _cartesian_split(descriptor, mu) is not None:
                return "radial-lattice"
        except IsotropyError:
            pass
        return "generic"
    return "generic"


def convolution_powers(descriptor: GroupDescriptor, mu: ScaledMeasure, depth: int,
                       engine: str = "auto",
                       support_cap: int = DEFAULT_SUPPORT_CAP,
                       memory_budget_mb: int = DEFAULT_MEMORY_BUDGET_MB,
                       track=None) -> PowersCache:
    """Compute and retain mu^{*m} for m = 0..depth.

    ``track`` declares elements that must stay queryable at every level if
    full retention would blow the memory budget (deep dense/product runs).
    """
    if depth < 0:
        raise ValueError("depth must be >= 0")
    name = pick_engine(descriptor, mu) if engine == "auto" else engine
    if name == "dense":
        return DenseLatticePowers(
            descriptor, mu, depth, memory_budget_mb=memory_budget_mb, track=track
        )
    if name == "radial":
        return RadialFreePowers(descriptor, mu, depth)
    if name == "radial-lattice":
        return RadialLatticePowers(
            descriptor, mu, depth, memory_budget_mb=memory_budget_mb, track=track
        )
    if name == "generic":
        return GenericPowers(
            descriptor, mu, depth, support_cap=support_cap, track=track
        )
    raise ValueError(f"unknown engine {name!r}")


def export_cache_json(cache: PowersCache) -> str:
    """Serialize a fully retained cache (descriptor + measure + all levels)."""
    fmt = cache.descriptor.format
    mu_entries = [
        [fmt(g), float(v)] for g, v in sorted(
            cache.mu.support.items(),
            key=lambda gv: cache.descriptor.sort_key(gv[0]),
        )
    ]
    doc = {
        "format": "walkops-powers-cache",
        "version": 1,
        "descriptor": cache.descriptor.spec_string(),
        "engine": cache.engine_name,
        "depth": cache.depth,
        "complete": cache.complete,
        "measure": {
            "entries": mu_entries,
            "log_scale": cache.mu.log_scale,
        },
        "payload": cache.export_payload(),
    }
    return json.dumps(doc, sort_keys=True)


def import_cache_json(text: str) -> PowersCache:
    doc = json.loads(text)
    if doc.get("format") != "walkops-powers-cache":
        raise ValueError("not a walkops powers-cache artifact")
    descriptor = descriptor_from_string(doc["descriptor"])
    mu = ScaledMeasure(
        support={descriptor.parse(t): v for t, v in doc["measure"]["entries"]},
        log_scale=doc["measure"]["log_scale"],
        step_index=1,
    )
    cls = _ENGINES[doc["engine"]]
    cache = cls._from_payload(descriptor, mu, doc["payload"])
    cache.complete = doc["complete"]
    return cache
