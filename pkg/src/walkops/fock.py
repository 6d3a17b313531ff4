"""Finite Fock-space windows and the sparse operator suite on them.

The window holds the basis vectors e^(m)_{x,z} with m up to a cutoff and
x, z in fixed balls, one vector per positive m-step transition (the
edge-presence rule).  Operators are built directly from their action
formulas as sparse matrices on this basis.  Outputs that would leave the
window are excluded at construction, and defect norms never look at the
top ``interior_margin`` levels, so truncation artifacts cannot be misread
as algebraic defects.

The defect suite certifies the "relations modulo compacts" numerically:
each identity holds exactly (float tolerance) above a per-fiber edge
threshold m_0 computed from the cache, with sub-threshold defects
reported rather than hidden.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import PreconditionError
from .measures import NEG_INF
from .powers import PowersCache
from .reports import DiagnosticsReport

EXACT_TOL = 1e-12


class FockWindow:
    """Finite slice of the Fock basis with interior-level bookkeeping."""

    def __init__(self, cache: PowersCache, max_level: int, x_radius: int,
                 z_radius: int, interior_margin: int):
        if cache.depth < max_level:
            raise PreconditionError(
                f"cache depth {cache.depth} below window level {max_level}"
            )
        if interior_margin < 1 or interior_margin > max_level:
            raise PreconditionError("interior margin must be in [1, max_level]")
        self.cache = cache
        self.descriptor = cache.descriptor
        self.max_level = max_level
        self.x_radius = x_radius
        self.z_radius = z_radius
        self.interior_margin = interior_margin
        self.interior_top = max_level - interior_margin
        self.x_elems = self.descriptor.ball(x_radius)
        self.z_elems = self.descriptor.ball(z_radius)
        self.basis: list = []
        self.index: dict = {}
        self._log_p: dict = {}
        for m in range(max_level + 1):
            for x in self.x_elems:
                for z in self.z_elems:
                    lp = cache.log_transition(m, x, z)
                    if lp > NEG_INF:
                        self.index[(m, x, z)] = len(self.basis)
                        self.basis.append((m, x, z))
                        self._log_p[(m, x, z)] = lp
        self._by_row: dict = {}
        for i, (m, x, z) in enumerate(self.basis):
            self._by_row.setdefault(x, []).append(i)
        self._thresholds: dict = {}

    @property
    def size(self) -> int:
        return len(self.basis)

    def has(self, m, x, z) -> bool:
        return (m, x, z) in self.index

    def log_p(self, m, x, z) -> float:
        """log P^(m)_{x,z}; memoized, -inf when absent."""
        key = (m, x, z)
        if key not in self._log_p:
            self._log_p[key] = self.cache.log_transition(m, x, z)
        return self._log_p[key]

    def row_indices(self, x) -> list:
        """Basis positions with row element x."""
        return self._by_row.get(x, [])

    def edge_threshold(self, rows, z) -> int:
        """First level from which every (row, z) transition stays present
        up to the window top (max_level + 1 when none does)."""
        t = 0
        for r in rows:
            key = (r, z)
            if key not in self._thresholds:
                val = self.max_level + 1
                for m in range(self.max_level, -1, -1):
                    if self.log_p(m, r, z) > NEG_INF:
                        val = m
                    else:
                        break
                self._thresholds[key] = val
            t = max(t, self._thresholds[key])
        return t

    def select(self, rows=None, fiber=None, level_lo=0, level_hi=None) -> np.ndarray:
        """Basis positions filtered by row set, column fiber and level band."""
        hi = self.max_level if level_hi is None else level_hi
        rowset = None if rows is None else set(rows)
        out = []
        for i, (m, x, z) in enumerate(self.basis):
            if m < level_lo or m > hi:
                continue
            if rowset is not None and x not in rowset:
                continue
            if fiber is not None and z != fiber:
                continue
            out.append(i)
        return np.array(out, dtype=np.intp)

    def spec_dict(self) -> dict:
        return {
            "max_level": self.max_level,
            "x_radius": self.x_radius,
            "z_radius": self.z_radius,
            "interior_margin": self.interior_margin,
            "basis_size": self.size,
        }

    def export_payload(self) -> dict:
        fmt = self.descriptor.format
        return {
            "window": self.spec_dict(),
            "descriptor": self.descriptor.spec_string(),
            "basis": [[m, fmt(x), fmt(z)] for (m, x, z) in self.basis],
        }


@dataclass
class WindowedOperator:
    """Sparse operator on a window basis, with its label and parameters."""

    window: FockWindow
    label: str
    params: dict
    matrix: sp.csr_matrix

    def adjoint(self) -> "WindowedOperator":
        return WindowedOperator(
            window=self.window,
            label=f"{self.label}*",
            params=self.params,
            matrix=self.matrix.conj().transpose().tocsr(),
        )

    def compose(self, other: "WindowedOperator") -> "WindowedOperator":
        return WindowedOperator(
            window=self.window,
            label=f"{self.label}.{other.label}",
            params={},
            matrix=(self.matrix @ other.matrix).tocsr(),
        )

    def __matmul__(self, other):
        return self.compose(other)

    def sub(self, other: "WindowedOperator") -> "WindowedOperator":
        return WindowedOperator(
            window=self.window,
            label=f"{self.label}-{other.label}",
            params={},
            matrix=(self.matrix - other.matrix).tocsr(),
        )

    def scale(self, c) -> "WindowedOperator":
        return WindowedOperator(
            window=self.window, label=f"{c}*{self.label}", params=self.params,
            matrix=(self.matrix * c).tocsr(),
        )

    def add(self, other: "WindowedOperator") -> "WindowedOperator":
        return WindowedOperator(
            window=self.window, label=f"{self.label}+{other.label}", params={},
            matrix=(self.matrix + other.matrix).tocsr(),
        )

    def coefficient(self, out_key, in_key) -> float:
        i = self.window.index[out_key]
        j = self.window.index[in_key]
        return self.matrix[i, j]

    def norm_estimate(self, tol: float = 1e-10, seed: int = 7) -> float:
        return operator_norm(self.matrix, tol=tol, seed=seed)

    def max_abs_on_columns(self, cols: np.ndarray) -> float:
        """sup over the selected input vectors of the output 2-norm."""
        if len(cols) == 0:
            return 0.0
        sub = self.matrix.tocsc()[:, cols]
        if sub.nnz == 0:
            return 0.0
        col_sq = np.asarray(sub.multiply(sub.conj()).sum(axis=0)).ravel()
        return float(np.sqrt(col_sq.real.max()))

    def export_payload(self) -> dict:
        coo = self.matrix.tocoo()
        fmt = self.window.descriptor.format
        triplets = []
        for i, j, v in zip(coo.row.tolist(), coo.col.tolist(), coo.data.tolist()):
            mo, xo, zo = self.window.basis[i]
            mi, xi, zi = self.window.basis[j]
            triplets.append({
                "out": [mo, fmt(xo), fmt(zo)],
                "in": [mi, fmt(xi), fmt(zi)],
                "value": v if not isinstance(v, complex) else [v.real, v.imag],
            })
        return {"label": self.label, "params": self.params, "triplets": triplets}


def operator_norm(matrix, tol: float = 1e-10, seed: int = 7,
                  max_iter: int = 20000) -> float:
    """Largest singular value by power iteration on A*A.

    Deterministic: fixed-seed start vector, relative stop at ``tol``.
    """
    n = matrix.shape[1]
    if n == 0 or matrix.nnz == 0:
        return 0.0
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(n)
    if np.iscomplexobj(matrix):
        v = v + 1j * rng.standard_normal(n)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        w = matrix @ v
        u = matrix.conj().T @ w
        nu = np.linalg.norm(u)
        if nu == 0.0:
            return 0.0
        lam_new = float(np.real(np.vdot(v, u)))
        v = u / nu
        if abs(lam_new - lam) <= tol * max(abs(lam_new), 1e-300):
            lam = lam_new
            break
        lam = lam_new
    return math.sqrt(max(lam, 0.0))


def _build(window, label, params, entries, dtype=float) -> WindowedOperator:
    rows, cols, data = [], [], []
    for out_key, in_key, coeff in entries:
        rows.append(window.index[out_key])
        cols.append(window.index[in_key])
        data.append(coeff)
    matrix = sp.csr_matrix(
        (np.array(data, dtype=dtype), (rows, cols)),
        shape=(window.size, window.size),
    )
    return WindowedOperator(window=window, label=label, params=params, matrix=matrix)


# ---------------------------------------------------------------------------
# operator constructions (action formulas)
# ---------------------------------------------------------------------------

def build_S(window: FockWindow, n: int, x, y) -> WindowedOperator:
    """Weighted shift S^(n)_{x,y}: e^(m)_{y,z} -> sqrt(P^(n)_{x,y} P^(m)_{y,z}
    / P^(n+m)_{x,z}) e^(n+m)_{x,z}.  Contractive by Chapman-Kolmogorov."""
    log_pn = window.cache.log_transition(n, x, y)
    if log_pn == NEG_INF:
        raise PreconditionError("(x, y) is not an edge of P^n")
    entries = []
    for j in window.row_indices(y):
        m, _, z = window.basis[j]
        if m + n > window.max_level or not window.has(m + n, x, z):
            continue
        coeff = math.exp(0.5 * (
            log_pn + window.log_p(m, y, z) - window.log_p(m + n, x, z)
        ))
        entries.append(((m + n, x, z), (m, y, z), coeff))
    return _build(window, f"S^{n}", {"n": n, "x": x, "y": y}, entries)


def build_T(window: FockWindow, n: int, x, y, rho_hat: float) -> WindowedOperator:
    """T^(n)_{x,y}: coefficient sqrt(rho^n P^(m)_{y,z} / P^(n+m)_{x,z}).

    Built from the action formula (the normalized weighted shift), which is
    what all the compact-difference statements use.
    """
    if window.cache.log_transition(n, x, y) == NEG_INF:
        raise PreconditionError("(x, y) is not an edge of P^n")
    entries = []
    for j in window.row_indices(y):
        m, _, z = window.basis[j]
        if m + n > window.max_level or not window.has(m + n, x, z):
            continue
        coeff = math.exp(0.5 * (
            n * math.log(rho_hat) + window.log_p(m, y, z) - window.log_p(m + n, x, z)
        ))
        entries.append(((m + n, x, z), (m, y, z), coeff))
    return _build(window, f"T^{n}", {"n": n, "x": x, "y": y, "rho_hat": rho_hat},
                  entries)


def build_W(window: FockWindow, n: int, x, y, table) -> WindowedOperator:
    """W^(n)_{x,y}: e^(m)_{y,z} -> sqrt(H(x^-1 y, x^-1 z)) e^(m+n)_{x,z}."""
    if window.cache.log_transition(n, x, y) == NEG_INF:
        raise PreconditionError("(x, y) is not an edge of P^n")
    desc = window.descriptor
    xinv = desc.inverse(x)
    xy = desc.multiply(xinv, y)
    entries = []
    for j in window.row_indices(y):
        m, _, z = window.basis[j]
        if m + n > window.max_level or not window.has(m + n, x, z):
            continue
        h = table.get(xy, desc.multiply(xinv, z)).estimate
        entries.append(((m + n, x, z), (m, y, z), math.sqrt(h)))
    return _build(window, f"W^{n}", {"n": n, "x": x, "y": y}, entries)


def build_V(window: FockWindow, n: int, x, y) -> WindowedOperator:
    """Plain shift V^(n)_{x,y}: e^(m)_{y,z} -> e^(m+n)_{x,z}."""
    if window.cache.log_transition(n, x, y) == NEG_INF:
        raise PreconditionError("(x, y) is not an edge of P^n")
    entries = []
    for j in window.row_indices(y):
        m, _, z = window.basis[j]
        if m + n > window.max_level or not window.has(m + n, x, z):
            continue
        entries.append(((m + n, x, z), (m, y, z), 1.0))
    return _build(window, f"V^{n}", {"n": n, "x": x, "y": y}, entries)


def build_R(window: FockWindow, x, y, table, inverse: bool = False) -> WindowedOperator:
    """Level-preserving weight R_{x,y} (or its spectral inverse R'):
    e^(m)_{y,z} -> H(x^-1 y, x^-1 z)^{+-1/2} e^(m)_{y,z}."""
    desc = window.descriptor
    xinv = desc.inverse(x)
    xy = desc.multiply(xinv, y)
    power = -0.5 if inverse else 0.5
    entries = []
    for j in window.row_indices(y):
        m, _, z = window.basis[j]
        h = table.get(xy, desc.multiply(xinv, z)).estimate
        entries.append(((m, y, z), (m, y, z), h ** power))
    return _build(window, "R'" if inverse else "R", {"x": x, "y": y}, entries)


def build_E(window: FockWindow, x, y) -> WindowedOperator:
    """Row swap E_{x,y}: e^(m)_{y,z} -> e^(m)_{x,z} when (x,z) in E(P^m)."""
    entries = []
    for j in window.row_indices(y):
        m, _, z = window.basis[j]
        if window.has(m, x, z):
            entries.append(((m, x, z), (m, y, z), 1.0))
    return _build(window, "E", {"x": x, "y": y}, entries)


def build_U_row(window: FockWindow, x) -> WindowedOperator:
    """U_x: e^(m)_{x,z} -> e^(m+1)_{x,z} when the target exists."""
    entries = []
    for j in window.row_indices(x):
        m, _, z = window.basis[j]
        if m + 1 <= window.max_level and window.has(m + 1, x, z):
            entries.append(((m + 1, x, z), (m, x, z), 1.0))
    return _build(window, "U_x", {"x": x}, entries)


def build_U(window: FockWindow) -> WindowedOperator:
    """U = direct sum of the U_x over every row of the window."""
    entries = []
    for m, x, z in window.basis:
        if m + 1 <= window.max_level and window.has(m + 1, x, z):
            entries.append(((m + 1, x, z), (m, x, z), 1.0))
    return _build(window, "U", {}, entries)


def build_Hop(window: FockWindow, z0, x, y, table) -> WindowedOperator:
    """H^(z0)_{x,y} = E_{z0,y} R_{x,y} E_{y,z0}: the diagonal weight
    sqrt(H(x^-1 y, x^-1 w)) on row z0, guarded by (y,w) presence."""
    desc = window.descriptor
    xinv = desc.inverse(x)
    xy = desc.multiply(xinv, y)
    entries = []
    for j in window.row_indices(z0):
        m, _, w = window.basis[j]
        if window.log_p(m, y, w) == NEG_INF:
            continue
        h = table.get(xy, desc.multiply(xinv, w)).estimate
        entries.append(((m, z0, w), (m, z0, w), math.sqrt(h)))
    return _build(window, "H^(z0)", {"z0": z0, "x": x, "y": y}, entries)


def build_H_diag(window: FockWindow, x, y, table) -> WindowedOperator:
    """H_{x,y} = direct sum over z0 of H^(z0)_{x,y} (acts on every row)."""
    desc = window.descriptor
    xinv = desc.inverse(x)
    xy = desc.multiply(xinv, y)
    entries = []
    for m, r, w in window.basis:
        if window.log_p(m, y, w) == NEG_INF:
            continue
        h = table.get(xy, desc.multiply(xinv, w)).estimate
        entries.append(((m, r, w), (m, r, w), math.sqrt(h)))
    return _build(window, "H", {"x": x, "y": y}, entries)


def build_projection(window: FockWindow, x) -> WindowedOperator:
    """p_x = S^(0)_{x,x}: the diagonal projection onto row x."""
    entries = []
    for j in window.row_indices(x):
        key = window.basis[j]
        entries.append((key, key, 1.0))
    return _build(window, "p", {"x": x}, entries)


def build_Vg(window: FockWindow, g) -> WindowedOperator:
    """Left-translation unitary V_g: e^(m)_{x,z} -> e^(m)_{gx,gz},
    restricted to pairs whose image stays in the window."""
    desc = window.descriptor
    entries = []
    for m, x, z in window.basis:
        gx = desc.multiply(g, x)
        gz = desc.multiply(g, z)
        if window.has(m, gx, gz):
            entries.append(((m, gx, gz), (m, x, z), 1.0))
    return _build(window, "V_g", {"g": g}, entries)


def build_Uzeta(window: FockWindow, zeta) -> WindowedOperator:
    """Gauge unitary U_zeta: e^(m)_{x,z} -> zeta^m e^(m)_{x,z}."""
    zeta = complex(zeta)
    real = zeta.imag == 0.0
    entries = []
    for key in window.basis:
        m = key[0]
        phase = zeta ** m
        entries.append((key, key, phase.real if real else phase))
    return _build(window, "U_zeta", {"zeta": zeta}, entries,
                  dtype=float if real else complex)


def identity_operator(window: FockWindow) -> WindowedOperator:
    return WindowedOperator(
        window=window, label="I", params={},
        matrix=sp.identity(window.size, format="csr"),
    )


# ---------------------------------------------------------------------------
# defect diagnostics
# ---------------------------------------------------------------------------

def _interior_defect_by_fiber(window: FockWindow, op: WindowedOperator,
                              rows_needed, level_shift: int = 0,
                              extra_threshold: int = 0):
    """Per-fiber max defect of ``op`` on inputs at interior levels at or
    above the fiber's edge threshold; sub-threshold maxima reported too."""
    per_fiber = []
    for w in window.z_elems:
        m0 = window.edge_threshold(rows_needed, w) + extra_threshold
        top = window.interior_top - level_shift
        sel = window.select(fiber=w, level_lo=m0, level_hi=top)
        above = op.max_abs_on_columns(sel)
        below = op.max_abs_on_columns(window.select(fiber=w, level_hi=min(m0 - 1, top)))
        per_fiber.append({
            "fiber": window.descriptor.format(w),
            "m0": m0,
            "levels_checked": int(len(sel)),  # 0 flags a too-shallow window
            "defect_above_m0": above,
            "defect_below_m0": below,
        })
    return per_fiber


def _fiber_report(name, window, inputs, per_fiber, tol, provenance) -> DiagnosticsReport:
    worst = max((r["defect_above_m0"] for r in per_fiber), default=0.0)
    passed = worst <= tol
    return DiagnosticsReport(
        name=name,
        inputs=inputs,
        residuals=per_fiber,
        passed=passed,
        verdict=(
            f"exact above edge thresholds (max {worst:.3e})"
            if passed else f"defect {worst:.3e} above tolerance {tol:g}"
        ),
        tolerances={"above_threshold": tol},
        provenance=provenance,
    )


def matrix_unit_defects(window: FockWindow, triples, tol: float = EXACT_TOL) -> DiagnosticsReport:
    """E_{x,y}E_{y',z} = delta_{y,y'} E_{x,z} and E_{x,y}* = E_{y,x},
    exactly above the per-fiber edge thresholds."""
    fmt = window.descriptor.format
    residuals = []
    worst = 0.0
    for x, y, y2, z in triples:
        prod = build_E(window, x, y) @ build_E(window, y2, z)
        defect = prod.sub(build_E(window, x, z)) if y == y2 else prod
        per_fiber = _interior_defect_by_fiber(window, defect, rows_needed=[x, y, y2, z])
        adj = build_E(window, x, y).adjoint().sub(build_E(window, y, x))
        adj_fiber = _interior_defect_by_fiber(window, adj, rows_needed=[x, y])
        for r in per_fiber:
            r["identity"] = f"E[{fmt(x)},{fmt(y)}]E[{fmt(y2)},{fmt(z)}]"
        for r in adj_fiber:
            r["identity"] = f"E[{fmt(x)},{fmt(y)}]* - E[{fmt(y)},{fmt(x)}]"
        residuals.extend(per_fiber + adj_fiber)
        worst = max(
            worst,
            max(r["defect_above_m0"] for r in per_fiber + adj_fiber),
        )
    return _fiber_report(
        "matrix-unit-defects", window,
        {"triples": [[fmt(t) for t in tr] for tr in triples]},
        residuals, tol,
        {"window": window.spec_dict(), "M": window.cache.depth},
    )


def unitary_and_commutation_defects(window: FockWindow, pairs, table,
                                    tol: float = EXACT_TOL) -> DiagnosticsReport:
    """U*U = I = UU* (above m_0 + 1), and E- and H-operators commute with U
    and with each other, above the per-fiber thresholds."""
    fmt = window.descriptor.format
    u = build_U(window)
    ident = identity_operator(window)
    residuals = []
    rows_all = list(window.x_elems)
    uu = _interior_defect_by_fiber(
        window, u.adjoint().compose(u).sub(ident), rows_all, extra_threshold=1
    )
    for r in uu:
        r["identity"] = "U*U - I"
    uu2 = _interior_defect_by_fiber(
        window, u.compose(u.adjoint()).sub(ident), rows_all, extra_threshold=1
    )
    for r in uu2:
        r["identity"] = "UU* - I"
    residuals.extend(uu + uu2)
    for x, y in pairs:
        e_op = build_E(window, x, y)
        h_op = build_H_diag(window, x, y, table)
        comm_eu = e_op.compose(u).sub(u.compose(e_op))
        comm_hu = h_op.compose(u).sub(u.compose(h_op))
        comm_eh = e_op.compose(h_op).sub(h_op.compose(e_op))
        for op, label, extra in (
            (comm_eu, f"[E[{fmt(x)},{fmt(y)}], U]", 0),
            (comm_hu, f"[H[{fmt(x)},{fmt(y)}], U]", 0),
            (comm_eh, f"[E[{fmt(x)},{fmt(y)}], H[{fmt(x)},{fmt(y)}]]", 0),
        ):
            per = _interior_defect_by_fiber(
                window, op, rows_needed=[x, y], level_shift=1, extra_threshold=extra
            )
            for r in per:
                r["identity"] = label
            residuals.extend(per)
    return _fiber_report(
        "unitary-and-commutation-defects", window,
        {"pairs": [[fmt(x), fmt(y)] for x, y in pairs]},
        residuals, tol,
        {"window": window.spec_dict(), "M": window.cache.depth},
    )


def generator_identity_defect(window: FockWindow, n: int, x, y, table,
                              tol: float = EXACT_TOL) -> DiagnosticsReport:
    """W^(n)_{x,y} = U_x^n E_{x,e} H^(e)_{x,y} E_{e,y} above thresholds."""
    desc = window.descriptor
    e = desc.identity()
    w_op = build_W(window, n, x, y, table)
    u_x = build_U_row(window, x)
    rhs = build_E(window, x, e) @ build_Hop(window, e, x, y, table) @ build_E(window, e, y)
    rhs = rhs if n == 0 else _power(u_x, n) @ rhs
    defect = w_op.sub(rhs)
    per_fiber = _interior_defect_by_fiber(
        window, defect, rows_needed=[e, x, y], level_shift=n
    )
    fmt = desc.format
    return _fiber_report(
        "generator-identity-defect", window,
        {"n": n, "x": fmt(x), "y": fmt(y)},
        per_fiber, tol,
        {"window": window.spec_dict(), "M": window.cache.depth},
    )


def _power(op: WindowedOperator, n: int) -> WindowedOperator:
    out = op
    for _ in range(n - 1):
        out = out @ op
    return out


def q0_projection_check(window: FockWindow, x, tol: float = EXACT_TOL) -> DiagnosticsReport:
    """R^(0)_x = p_x - sum_y S^(1)_{x,y} S^(1)*_{x,y} is the level-0
    projection of row x: fixes e^(0)_{x,x}, kills interior e^(m+1)_{x,z}
    (Chapman-Kolmogorov makes the coefficient sum exactly 1) and other rows."""
    desc = window.descriptor
    cache = window.cache
    x_rows = set(window.x_elems)
    r0 = build_projection(window, x).matrix
    for s in sorted(cache.mu.support, key=desc.sort_key):
        y = desc.multiply(x, s)
        if cache.log_transition(1, x, y) == NEG_INF:
            continue
        if y not in x_rows:
            raise PreconditionError(
                f"window row ball must contain every one-step neighbour of "
                f"{desc.format(x)}; {desc.format(y)} is missing"
            )
        s1 = build_S(window, 1, x, y)
        r0 = (r0 - s1.matrix @ s1.matrix.transpose()).tocsr()
    op = WindowedOperator(window=window, label="R0", params={"x": x}, matrix=r0)
    residuals = []
    key0 = (0, x, x)
    fix_res = None
    if key0 in window.index:
        i = window.index[key0]
        col = r0[:, i].toarray().ravel()
        col[i] -= 1.0
        fix_res = float(np.linalg.norm(col))
        residuals.append({"identity": "R0 e0_xx = e0_xx", "residual": fix_res})
    kill = op.max_abs_on_columns(
        window.select(rows=[x], level_lo=1, level_hi=window.interior_top)
    )
    residuals.append({"identity": "R0 e^(m+1)_xz = 0 (interior)", "residual": kill})
    other_rows = [r for r in window.x_elems if r != x]
    other = op.max_abs_on_columns(
        window.select(rows=other_rows, level_hi=window.interior_top)
    )
    residuals.append({"identity": "R0 on other rows = 0", "residual": other})
    worst = max(r["residual"] for r in residuals)
    return DiagnosticsReport(
        name="q0-projection-check",
        inputs={"x": desc.format(x)},
        residuals=residuals,
        passed=worst <= tol,
        verdict=f"max residual {worst:.3e}",
        tolerances={"residual": tol},
        provenance={"window": window.spec_dict(), "M": cache.depth},
    )


def subproduct_coisometry_check(cache: PowersCache, n: int, m: int,
                                x_radius: int, z_radius: int,
                                tol: float = EXACT_TOL) -> DiagnosticsReport:
    """U_{n,m} U_{n,m}* = I on the (n+m)-edge span: for every (x,z) pair in
    the balls, sum_y P^(n)_{x,y} P^(m)_{y,z} / P^(n+m)_{x,z} = 1."""
    desc = cache.descriptor
    if cache.depth < n + m:
        raise PreconditionError("cache depth below n + m")
    mid_radius = n * _support_radius(cache, desc)
    mids = [u for u, _ in cache.support_in_ball(n, mid_radius)]
    residuals = []
    worst = 0.0
    for x in desc.ball(x_radius):
        for z in desc.ball(z_radius):
            log_tot = cache.log_transition(n + m, x, z)
            if log_tot == NEG_INF:
                continue
            total = 0.0
            for u in mids:
                y = desc.multiply(x, u)
                ln = cache.log_value(n, u)
                lm = cache.log_transition(m, y, z)
                if lm > NEG_INF:
                    total += math.exp(ln + lm - log_tot)
            res = abs(total - 1.0)
            worst = max(worst, res)
            residuals.append({
                "x": desc.format(x), "z": desc.format(z), "residual": res,
            })
    return DiagnosticsReport(
        name="subproduct-coisometry",
        inputs={"n": n, "m": m, "x_radius": x_radius, "z_radius": z_radius,
                "pairs": len(residuals)},
        residuals=residuals,
        passed=worst <= tol,
        verdict=f"max |diag - 1| = {worst:.3e}",
        tolerances={"diagonal": tol},
        provenance={"M": cache.depth, "engine": cache.engine_name},
    )


def _support_radius(cache, desc) -> int:
    return max(desc.word_length(g) for g in cache.mu.support)


def covariance_check(window: FockWindow, g, zeta, n: int, x, y,
                     tol: float = EXACT_TOL) -> DiagnosticsReport:
    """V_g S^(n)_{x,y} V_g^-1 = S^(n)_{gx,gy} on the g-stable part of the
    window, and U_zeta S U_zeta^-1 = zeta^n S (gauge phase), entrywise."""
    desc = window.descriptor
    s_op = build_S(window, n, x, y)
    gx, gy = desc.multiply(g, x), desc.multiply(g, y)
    sg_op = build_S(window, n, gx, gy)
    vg = build_Vg(window, g)
    lhs = vg @ s_op
    rhs = sg_op @ vg
    region = []
    for i, (m, r, w) in enumerate(window.basis):
        if m + n > window.max_level:
            continue
        if window.has(m, desc.multiply(g, r), desc.multiply(g, w)):
            if window.has(m + n, desc.multiply(g, x), desc.multiply(g, w)) or r != y:
                region.append(i)
    region = np.array(region, dtype=np.intp)
    if len(region) == 0:
        raise PreconditionError("empty covariance comparison region")
    cov = lhs.sub(rhs).max_abs_on_columns(region)

    u_z = build_Uzeta(window, zeta)
    zc = complex(zeta)
    inv_entries = 1.0 / u_z.matrix.diagonal()
    u_inv = WindowedOperator(
        window=window, label="U_zeta^-1", params={},
        matrix=sp.diags(inv_entries).tocsr(),
    )
    gauge_lhs = (u_z @ s_op) @ u_inv
    phase = zc ** n
    target = s_op.scale(phase.real if zc.imag == 0.0 else phase)
    gauge = gauge_lhs.sub(target).max_abs_on_columns(
        np.arange(window.size, dtype=np.intp)
    )
    residuals = [
        {"identity": "V_g S V_g^-1 = S_g", "residual": cov,
         "region_size": int(len(region))},
        {"identity": "U_zeta S U_zeta^-1 = zeta^n S", "residual": gauge},
    ]
    worst = max(cov, gauge)
    return DiagnosticsReport(
        name="covariance-check",
        inputs={"g": desc.format(g), "zeta": repr(zeta), "n": n,
                "x": desc.format(x), "y": desc.format(y)},
        residuals=residuals,
        passed=worst <= tol,
        verdict=f"max residual {worst:.3e}",
        tolerances={"residual": tol},
        provenance={"window": window.spec_dict(), "M": window.cache.depth},
    )


def t_vs_w_level_defects(window: FockWindow, n: int, x, y, rho_hat: float,
                         table, fibers, levels) -> list:
    """Per-level, per-fiber norm of (T - W) restricted to one input vector:
    |sqrt(rho^n P^(m)_{y,z} / P^(n+m)_{x,z}) - sqrt(H(x^-1y, x^-1z))|."""
    desc = window.descriptor
    xinv = desc.inverse(x)
    xy = desc.multiply(xinv, y)
    out = []
    for z in fibers:
        h = table.get(xy, desc.multiply(xinv, z)).estimate
        for m in levels:
            lp_y = window.log_p(m, y, z)
            lp_x = window.log_p(m + n, x, z)
            if lp_y == NEG_INF or lp_x == NEG_INF:
                out.append({"fiber": desc.format(z), "level": m, "defect": None})
                continue
            t_coeff = math.exp(0.5 * (n * math.log(rho_hat) + lp_y - lp_x))
            out.append({
                "fiber": desc.format(z),
                "level": m,
                "defect": abs(t_coeff - math.sqrt(h)),
            })
    return out


# ---------------------------------------------------------------------------
# quotient norms
# ---------------------------------------------------------------------------

@dataclass
class QuotientNormEstimate:
    estimate: float
    per_fiber: dict      # fiber text -> list of (m, norm) ladder values
    stabilized: bool
    ladder: list

    def as_dict(self):
        return {
            "estimate": self.estimate,
            "per_fiber": self.per_fiber,
            "stabilized": self.stabilized,
            "ladder": self.ladder,
        }


def quotient_norm_estimate(window: FockWindow, op: WindowedOperator,
                           z_samples, ladder=None, tol: float = 1e-10,
                           seed: int = 7,
                           stabilization_rtol: float = 0.02) -> QuotientNormEstimate:
    """sup over sampled fibers of lim_m ||T Q^{[m, interior]}|_{F_z}||.

    For each fiber the restricted norm is computed on an increasing ladder
    of m via power iteration; the fiber value is the final ladder entry and
    the sup is over the sampled fibers only (a lower bound for the true
    sup over all of G, which is reported as such).
    """
    top = window.interior_top
    if ladder is None:
        step = max(1, top // 4)
        ladder = sorted({min(top, m) for m in range(step, top + 1, step)})
    per_fiber = {}
    sup = 0.0
    stabilized = True
    for z in z_samples:
        vals = []
        for m in ladder:
            idx = window.select(fiber=z, level_lo=m, level_hi=top)
            if len(idx) == 0:
                vals.append((m, 0.0))
                continue
            sub = op.matrix.tocsc()[:, idx][idx, :]
            vals.append((m, operator_norm(sp.csr_matrix(sub), tol=tol, seed=seed)))
        per_fiber[window.descriptor.format(z)] = vals
        tail = [v for _, v in vals if v > 0.0]
        if len(tail) >= 2 and abs(tail[-1] - tail[-2]) > stabilization_rtol * max(tail[-1], 1e-300):
            stabilized = False
        if vals:
            sup = max(sup, vals[-1][1])
    return QuotientNormEstimate(
        estimate=sup, per_fiber=per_fiber, stabilized=stabilized, ladder=list(ladder)
    )
