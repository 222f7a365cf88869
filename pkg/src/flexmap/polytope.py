"""Inequality systems, Fourier-Motzkin projection, and 2D polygon geometry.

The projection driver eliminates variables one at a time, controlling row
growth with a layered redundancy cascade:

1. equality fast path: a lower/upper row pair forming an equality lets the
   variable be substituted out (Gaussian step), generating rows linearly
   instead of quadratically;
2. ancestry rule: a derived row combining more than (eliminated + 1)
   epoch-start rows is redundant and is dropped before materialization;
3. offset dominance among equal normals, kept derivation-compatible: the
   surviving row's ancestry must be contained in the dropped row's;
4. box screen: a row whose supremum over the bounding box of the feasible
   set stays strictly under its offset never binds; combination rows are
   screened at birth, before they ever join the system;
5. support certification against the frozen input system: the live rows
   always describe the exact projection of the input, so a row's support
   value over the input polytope settles whether it ever touches the
   feasible set. Rows whose support stays strictly under their offset are
   strictly redundant and can be dropped as one group, because the
   defining row of every facet (and of the affine hull, for flat sets) is
   supporting and survives. Support LPs are solved in the input space,
   where the system size is fixed, and the values are cached by direction
   for the whole run: a cached direction d bounds any nearby row u through
   sup(u) <= sup(d) + sup_box(u - d), which resolves the fans of
   near-parallel rows that network sensitivity systems produce without new
   solves. Rows tight at a cached feasible point are kept without any LP.

The ancestry rule argues about derivations, not feasible sets: it promises
that every facet of the projection is re-derived along some path whose
recorded ancestry stays within budget. A set-level deletion (box screen,
support prune) can remove an intermediate of that path, leaving only
fat-ancestry re-derivations that the rule would then wrongly drop.
Whenever such a deletion happens the driver therefore starts a new epoch:
ancestry masks are rebased onto the surviving rows and the budget counter
restarts. Within an epoch only derivation-compatible removals run, so the
classical argument applies with the epoch-start system as its origin. On
systems large enough that the support prune fires after every step the
budget never leaves its floor and the ancestry rule goes dormant; the
set-level rules carry the load there, and pairing skips the ancestry
bookkeeping entirely rather than computing counts that cannot prune.

The final two-variable system is reduced to one defining row per facet by
polar duality: with a strictly interior point, a halfplane is
non-redundant exactly when its dual point is a vertex of the dual hull.

Every removal is justified by a sufficient redundancy condition, so the
feasible set is preserved exactly up to the stated tolerances.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import linprog

from .errors import (
    BadParameter,
    DegenerateReference,
    DimensionMismatch,
    EmptyRegion,
    InfeasibleSystem,
    NumericalInstability,
    UnboundedRegion,
    UnknownVariable,
)

log = logging.getLogger(__name__)

COEFF_TOL = 1e-11      # coefficients at or below this count as zero
CERT_TOL = 1e-9        # LP redundancy certification slack
VERTEX_TOL = 1e-7      # vertex dedup / feasibility tolerance
QUANT = 1e-9           # row quantization grid for dedup
ZERO_COL = 1e-10       # variable involvement threshold on unit-norm rows
EQ_COL = 1e-6          # smallest pivot the equality fast path will divide by
B_FAR = 1e7            # unit-norm rows with offsets beyond this are culled
REF_TOL = 1e-7         # strict-redundancy margin for reference support tests
DIR_CAP = 1024         # cached support directions kept alive
PT_CAP = 1024          # cached feasible points kept alive


# --------------------------------------------------------------------------
# linear system


@dataclass(frozen=True)
class LinearSystem:
    """Rows a @ x <= b over named variables."""

    a: np.ndarray
    b: np.ndarray
    labels: tuple[str, ...]

    def __post_init__(self):
        a = np.atleast_2d(np.asarray(self.a, dtype=float))
        b = np.atleast_1d(np.asarray(self.b, dtype=float))
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "labels", tuple(self.labels))
        if a.ndim != 2 or a.shape[1] != len(self.labels):
            raise DimensionMismatch(
                f"coefficient block {a.shape} does not match "
                f"{len(self.labels)} labels")
        if b.shape != (a.shape[0],):
            raise DimensionMismatch(
                f"offset vector {b.shape} does not match {a.shape[0]} rows")
        if len(set(self.labels)) != len(self.labels):
            raise BadParameter("variable labels must be unique")

    @property
    def m(self) -> int:
        return self.a.shape[0]

    @property
    def n_vars(self) -> int:
        return len(self.labels)

    def var_index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise UnknownVariable(
                f"variable '{label}' not in system {self.labels}")

    def contains(self, x, tol: float = 1e-9) -> bool:
        x = np.asarray(x, dtype=float)
        if self.m == 0:
            return True
        return bool(np.all(self.a @ x <= self.b + tol))


# --------------------------------------------------------------------------
# LP helpers (all variables free; linprog defaults to x >= 0 otherwise)


def _lp(c, a, b):
    return linprog(c, A_ub=a, b_ub=b, bounds=(None, None), method="highs")


def _phase1_point(a: np.ndarray, b: np.ndarray, tol: float = CERT_TOL):
    """Feasible point via min uniform slack, or None if infeasible.

    The slack is bounded at zero, otherwise one-sided systems would make
    this LP unbounded and read as infeasible.
    """
    m, d = a.shape
    if m == 0:
        return np.zeros(d)
    c = np.zeros(d + 1)
    c[-1] = 1.0
    a_ext = np.hstack([a, -np.ones((m, 1))])
    res = linprog(c, A_ub=a_ext, b_ub=b,
                  bounds=[(None, None)] * d + [(0, None)], method="highs")
    if res.status != 0 or res.x is None:
        return None
    if res.x[-1] > tol:
        return None
    return res.x[:d]


def _support(a: np.ndarray, b: np.ndarray, direction: np.ndarray):
    """(max direction @ x, argmax or None, bounded flag).

    Numerical trouble reports (nan, None, True): callers treat the queried
    row as irreplaceable, which is the conservative choice.
    """
    res = _lp(-direction, a, b)
    if res.status == 3:
        return math.inf, None, False
    if res.status == 0:
        return -res.fun, res.x, True
    return math.nan, None, True


def _nnls_small(a: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Nonnegative least squares by active sets, sized for tall-thin duals.

    Row counts here are tiny (space dimension plus one) while column
    counts run to a few hundred, and the solver is called thousands of
    times per projection; the generic library routine spends more time
    on bookkeeping than arithmetic at this shape. Callers judge the fit
    by the residual of the returned coefficients, so an early bailout is
    harmless.
    """
    r, n = a.shape
    x = np.zeros(n)
    passive = np.zeros(n, dtype=bool)
    resid = rhs.astype(float, copy=True)
    scale = 1.0 + float(rhs @ rhs)
    for _ in range(3 * r + 30):
        w = a.T @ resid
        w[passive] = -np.inf
        j = int(np.argmax(w))
        if w[j] <= 1e-12 * scale:
            break
        passive[j] = True
        for _ in range(100):
            cols = np.flatnonzero(passive)
            z, *_ = np.linalg.lstsq(a[:, cols], rhs, rcond=None)
            if z.min() > 0.0:
                x[:] = 0.0
                x[cols] = z
                break
            xp = x[cols]
            neg = z <= 0.0
            denom = xp[neg] - z[neg]
            denom[denom <= 0.0] = np.inf
            alpha = float(np.min(xp[neg] / denom))
            alpha = min(max(alpha, 0.0), 1.0)
            xp = xp + alpha * (z - xp)
            drop = xp <= 1e-14
            xp[drop] = 0.0
            x[cols] = xp
            passive[cols[drop]] = False
            if not drop.any():
                break
        resid = rhs - a @ x
    return x


# --------------------------------------------------------------------------
# row hygiene


def _normalize_rows(a: np.ndarray, b: np.ndarray):
    """Unit-norm rows; returns (a, b, kept_index_array).

    Zero-coefficient rows are dropped when trivially true and raise
    InfeasibleSystem when contradictory.
    """
    if not (np.isfinite(a).all() and np.isfinite(b).all()):
        raise NumericalInstability("non-finite row entries")
    norms = np.linalg.norm(a, axis=1)
    zero = norms <= COEFF_TOL
    if np.any(zero & (b < -CERT_TOL)):
        raise InfeasibleSystem("row with zero coefficients and negative offset")
    keep = np.flatnonzero(~zero)
    scale = norms[keep]
    return a[keep] / scale[:, None], b[keep] / scale, keep


def _dedup_dominated(a: np.ndarray, b: np.ndarray):
    """Among rows with (quantized) identical normals keep the tightest.

    Rows must be unit-normalized. Returns survivor indices in original order.
    """
    m = a.shape[0]
    if m == 0:
        return np.arange(0)
    keys = np.round(a / QUANT).astype(np.int64)
    order = np.lexsort(keys.T[::-1])
    sorted_keys = keys[order]
    group_start = np.ones(m, dtype=bool)
    group_start[1:] = np.any(sorted_keys[1:] != sorted_keys[:-1], axis=1)
    group_ids = np.cumsum(group_start) - 1
    winners = []
    for g in range(group_ids[-1] + 1):
        members = order[group_ids == g]
        winners.append(members[np.argmin(b[members])])
    return np.array(sorted(winners))


def _dedup_mask_ancestry(a: np.ndarray, b: np.ndarray, hist: np.ndarray):
    """Dominance dedup that keeps the ancestry rule honest.

    Among rows with identical quantized normals, a row may only be dropped
    for a keeper with b_keep <= b_drop whose ancestry mask is a subset of
    the dropped row's: any derivation path through the dropped row then
    continues through the keeper with ancestry that can only shrink, so
    every re-derivation the ancestry rule counts on still exists.
    Returns a boolean keep mask; rows must be unit-normalized.
    """
    m = a.shape[0]
    alive = np.ones(m, dtype=bool)
    if m == 0:
        return alive
    keys = np.round(a / QUANT).astype(np.int64)
    order = np.lexsort(keys.T[::-1])
    sorted_keys = keys[order]
    group_start = np.ones(m, dtype=bool)
    group_start[1:] = np.any(sorted_keys[1:] != sorted_keys[:-1], axis=1)
    group_ids = np.cumsum(group_start) - 1
    for g in range(group_ids[-1] + 1):
        members = order[group_ids == g]
        if members.size == 1:
            continue
        members = members[np.argsort(b[members], kind="stable")]
        kept = [members[0]]
        for r in members[1:]:
            for k in kept:
                if not np.any(hist[k] & ~hist[r]):
                    alive[r] = False
                    break
            else:
                kept.append(r)
    return alive


def _ancestry_bits(a: np.ndarray, b: np.ndarray):
    """Per-row ancestry bit ids; mirrored row pairs share one id.

    An equality enters an inequality system as two mirrored rows. A
    nonnegative combination never needs both: equal parts cancel, leaving
    only the net multiple of one member. Counting the pair as a single
    ancestor keeps the ancestry rule's count equal to the size of a real
    minimal derivation; counting its members separately inflates the count
    and makes the rule drop rows the projection still needs. Near-mirror
    pairs within the quantization grid also share an id, which only makes
    the rule more lenient, never less sound.
    """
    m = a.shape[0]
    quant = np.round(np.hstack([a, b[:, None]]) / 1e-8).astype(np.int64)
    assigned: dict[bytes, int] = {}
    bits = np.empty(m, dtype=np.int64)
    n_bits = 0
    for r in range(m):
        key = quant[r].tobytes()
        prev = assigned.get(key)
        if prev is None:
            prev = assigned.get((-quant[r]).tobytes())
        if prev is None:
            prev = n_bits
            n_bits += 1
        assigned.setdefault(key, prev)
        bits[r] = prev
    return bits, max(1, n_bits)


# --------------------------------------------------------------------------
# Fourier-Motzkin single step


def fme_eliminate(sys: LinearSystem, var: str) -> LinearSystem:
    """Eliminate one variable by pairing lower and upper rows.

    Rows not involving the variable carry over unchanged; every
    (lower, upper) pair contributes one combined row, tautologies included
    (pruning is a separate concern). The feasible set of the result is
    exactly the projection of the input's feasible set.
    """
    j = sys.var_index(var)
    col = sys.a[:, j]
    zero = np.abs(col) <= COEFF_TOL
    pos = col > COEFF_TOL
    neg = col < -COEFF_TOL

    rest = np.delete(np.arange(sys.n_vars), j)
    a_keep = sys.a[zero][:, rest]
    b_keep = sys.b[zero]

    # scale so the variable coefficient is +1 (upper) / -1 (lower)
    a_pos = sys.a[pos][:, rest] / col[pos, None]
    b_pos = sys.b[pos] / col[pos]
    a_neg = sys.a[neg][:, rest] / (-col[neg, None])
    b_neg = sys.b[neg] / (-col[neg])

    if a_pos.shape[0] and a_neg.shape[0]:
        a_new = (a_neg[:, None, :] + a_pos[None, :, :]).reshape(-1, len(rest))
        b_new = (b_neg[:, None] + b_pos[None, :]).reshape(-1)
    else:
        a_new = np.zeros((0, len(rest)))
        b_new = np.zeros(0)

    labels = tuple(l for l in sys.labels if l != var)
    return LinearSystem(np.vstack([a_keep, a_new]),
                        np.concatenate([b_keep, b_new]), labels)


# --------------------------------------------------------------------------
# redundancy removal (public, fully certified)


def remove_redundant(sys: LinearSystem, tol: float = CERT_TOL) -> LinearSystem:
    """Drop rows certified redundant; the feasible set is unchanged.

    Every removed row r satisfies max{a_r @ x : remaining rows} <= b_r + tol.
    Rows come back unit-normalized. Raises InfeasibleSystem when no feasible
    point exists, since an empty region is an outcome callers must handle.
    """
    a, b, _ = _normalize_rows(sys.a.copy(), sys.b.copy())
    keep = _dedup_dominated(a, b)
    a, b = a[keep], b[keep]
    if a.shape[0] == 0:
        return LinearSystem(np.zeros((0, sys.n_vars)), np.zeros(0), sys.labels)
    if _phase1_point(a, b, tol) is None:
        raise InfeasibleSystem("system certified infeasible")
    alive = np.ones(a.shape[0], dtype=bool)
    for r in range(a.shape[0]):
        alive[r] = False
        rows = np.flatnonzero(alive)
        if rows.size == 0:
            alive[r] = True  # sole remaining row bounds direction a_r
            continue
        val, _, bounded = _support(a[rows], b[rows], a[r])
        if not bounded or math.isnan(val) or val > b[r] + tol:
            alive[r] = True
    return LinearSystem(a[alive], b[alive], sys.labels)


# --------------------------------------------------------------------------
# projection driver


@dataclass
class EliminationStep:
    var: str
    rows_before: int
    pairs: int            # lower*upper pairings available
    rows_generated: int   # materialized rows incl. carried-over ones
    rows_after: int
    removed: int
    used_equality: bool
    wall_time_s: float


@dataclass
class EliminationReport:
    initial_rows: int
    final_rows: int
    steps: list[EliminationStep] = field(default_factory=list)
    total_wall_time_s: float = 0.0

    @property
    def order(self) -> list[str]:
        return [s.var for s in self.steps]

    @property
    def max_rows_generated(self) -> int:
        return max((s.rows_generated for s in self.steps), default=0)

    def to_dict(self, include_timing: bool = False) -> dict:
        return {
            "initial_rows": self.initial_rows,
            "final_rows": self.final_rows,
            "total_wall_time_s":
                self.total_wall_time_s if include_timing else None,
            "steps": [
                {
                    "var": s.var,
                    "rows_before": s.rows_before,
                    "pairs": s.pairs,
                    "rows_generated": s.rows_generated,
                    "rows_after": s.rows_after,
                    "removed": s.removed,
                    "used_equality": s.used_equality,
                    "wall_time_s": s.wall_time_s if include_timing else None,
                }
                for s in self.steps
            ],
        }


class _Projector:
    """Working state of one projection run.

    Maintains, besides the rows themselves: per-row ancestry bitmasks over
    the epoch-start rows (for the ancestry rule), and a frozen copy of the
    pruned input system. The frozen copy is the certification reference:
    the live rows always describe the exact projection of the input, so
    redundancy tests run in the input space, where the LP size never grows
    and support values, feasible points, and the bounding box stay valid
    for the whole run and are cached across steps.
    """

    def __init__(self, sys: LinearSystem, keep: Sequence[str], tol: float,
                 lp_trigger: int, lp_target: int):
        self.labels = list(sys.labels)
        for k in keep:
            if k not in self.labels:
                raise UnknownVariable(f"keep variable '{k}' not in system")
        self.keep = list(keep)
        self.tol = tol
        self.lp_trigger = lp_trigger
        self.lp_target = lp_target
        a, b, kept = _normalize_rows(sys.a.copy(), sys.b.copy())
        self.a = a
        self.b = b
        self.hist = np.zeros((a.shape[0], 1), dtype=np.uint64)
        self.n_elim = 0
        self.epoch_elims = 0
        self.words = 1
        self._rev = 0              # bumped on any row mutation
        self._eq_cache = (-1, {})  # (revision, {column: (lower, upper)})
        self.ref_a = None          # frozen certification reference
        self.ref_b = None
        self.ref_cols = np.arange(a.shape[1])  # live column -> reference column
        self.ref_lo = None         # reference bounding box, built lazily
        self.ref_hi = None
        self.ref_dirs = None       # cached support directions (ring buffer)
        self.ref_vals = None
        self.ref_n = 0
        self.ref_base = 0          # axis directions are never evicted
        self._dir_cursor = 0
        self.ref_pts = None        # cached feasible reference points
        self._pt_n = 0
        self._pt_cursor = 0
        pt = _phase1_point(self.a, self.b, tol)
        if pt is None:
            raise InfeasibleSystem("system certified infeasible")
        self._seed_pt = pt

    # -- bookkeeping ------------------------------------------------------

    def _single_var_box(self):
        """Bounds implied by rows with exactly one nonzero coefficient.

        These bounds are literal rows of the current system, so a row that
        cannot reach its offset over the box is implied by the bound rows
        alone; dropping it is sound no matter what else gets pruned.
        """
        d = len(self.labels)
        lo = np.full(d, -np.inf)
        hi = np.full(d, np.inf)
        nz = np.abs(self.a) > COEFF_TOL
        single = nz.sum(axis=1) == 1
        for r in np.flatnonzero(single):
            v = int(np.argmax(nz[r]))
            c = self.a[r, v]
            bound = self.b[r] / c
            if c > 0:
                hi[v] = min(hi[v], bound)
            else:
                lo[v] = max(lo[v], bound)
        return lo, hi

    def _box_filter_mask(self):
        """True for rows that might bind somewhere over the box.

        The strict margin keeps the bound rows themselves: their maximum
        activity equals their offset exactly, never strictly below it.
        """
        lo, hi = self._single_var_box()
        a, b = self.a, self.b
        with np.errstate(invalid="ignore"):
            term = np.where(a > 0, a * hi[None, :], a * lo[None, :])
        term = np.where(np.abs(a) <= COEFF_TOL, 0.0, term)
        sup = term.sum(axis=1)
        return ~(sup <= b - 1e-9)

    def _apply_keep(self, mask):
        self.a = self.a[mask]
        self.b = self.b[mask]
        self.hist = self.hist[mask]
        self._rev += 1

    def _reset_epoch(self):
        """Rebase ancestry onto the current rows and restart the budget.

        Required after any deletion the ancestry rule cannot reason about;
        the classical argument then re-applies with the surviving system
        playing the role of the original one. Mirrored row pairs get one
        shared ancestry id (see _ancestry_bits).
        """
        m = self.a.shape[0]
        bits, n_bits = _ancestry_bits(self.a, self.b)
        self.words = (n_bits + 63) // 64
        hist = np.zeros((m, self.words), dtype=np.uint64)
        if m:
            hist[np.arange(m), bits // 64] = \
                np.uint64(1) << (bits % 64).astype(np.uint64)
        self.hist = hist
        self.epoch_elims = 0

    def _cheap_prune(self):
        # mid-run hygiene: only derivation-compatible removals, no epoch cost
        a, b, kept = _normalize_rows(self.a, self.b)
        self.a, self.b, self.hist = a, b, self.hist[kept]
        self._rev += 1
        alive = _dedup_mask_ancestry(self.a, self.b, self.hist)
        if not alive.all():
            self._apply_keep(alive)
        # safety valve: offsets this far out only arise from near-parallel
        # cancellations; culling them is set-sound but not derivation-sound,
        # so it costs an epoch restart
        far = self.b > B_FAR
        if far.any():
            self._apply_keep(~far)
            self._reset_epoch()

    def _input_prune(self):
        """Full hygiene pass for a system no eliminations have touched yet.

        Dominance without the ancestry condition plus the box filter; both
        are plain set-level reductions of the input, so the epoch restarts
        from the survivors, which then become the certification reference.
        Large systems get one support pass against their own snapshot and
        the reference is refrozen from the survivors: the feasible set is
        unchanged, and every later reference LP shrinks with it.
        """
        a, b, kept = _normalize_rows(self.a, self.b)
        self.a, self.b, self.hist = a, b, self.hist[kept]
        self._rev += 1
        keep = _dedup_dominated(self.a, self.b)
        mask = np.zeros(self.a.shape[0], dtype=bool)
        mask[keep] = True
        self._apply_keep(mask)
        bind = self._box_filter_mask()
        if not bind.all():
            self._apply_keep(bind)
        self._reset_epoch()
        self._freeze_reference()
        if self.a.shape[0] > self.lp_trigger:
            self._support_prune()
            if self.a.shape[0] < self.ref_a.shape[0]:
                self._freeze_reference()

    # -- certification reference -------------------------------------------

    def _freeze_reference(self):
        """Snapshot the live rows as the certification reference.

        The live system always describes the exact projection of the
        input, so every later combination row is a valid inequality over
        this snapshot and support queries against it settle redundancy.
        Freezing right after the input prune keeps the reference LPs small
        and of fixed size for the rest of the run.
        """
        self.ref_a = self.a.copy()
        self.ref_b = self.b.copy()
        self.ref_cols = np.arange(self.a.shape[1])
        self.ref_lo = None
        self.ref_hi = None

    def _ensure_ref_cache(self):
        """Bounding box, direction cache, and point cache of the reference.

        One pair of support solves per variable gives exact per-variable
        bounds; the axis directions seed the direction cache and their
        optima seed the point cache. Unbounded or failed axes keep an
        infinite bound, which disables only the tests relying on them.
        """
        if self.ref_lo is not None:
            return
        a, b = self.ref_a, self.ref_b
        d = a.shape[1]
        lo = np.full(d, -np.inf)
        hi = np.full(d, np.inf)
        dirs, vals, pts = [], [], []
        if self._seed_pt is not None and self._seed_pt.size == d:
            pts.append(self._seed_pt)
        eye = np.eye(d)
        for v in range(d):
            for sgn in (1.0, -1.0):
                direction = sgn * eye[v]
                val, x, bounded = _support(a, b, direction)
                if not bounded or math.isnan(val):
                    continue
                if sgn > 0:
                    hi[v] = val
                else:
                    lo[v] = -val
                dirs.append(direction)
                vals.append(val)
                if x is not None:
                    pts.append(x)
        self.ref_lo = lo
        self.ref_hi = hi
        self.ref_dirs = np.zeros((DIR_CAP, d))
        self.ref_vals = np.zeros(DIR_CAP)
        n = min(len(dirs), DIR_CAP)
        if n:
            self.ref_dirs[:n] = np.array(dirs)[:n]
            self.ref_vals[:n] = np.array(vals)[:n]
        self.ref_n = n
        self.ref_base = n
        self._dir_cursor = n
        self.ref_pts = np.zeros((PT_CAP, d))
        k = min(len(pts), PT_CAP)
        if k:
            self.ref_pts[:k] = np.array(pts)[:k]
        self._pt_n = k
        self._pt_cursor = k % PT_CAP

    def _cache_dir(self, direction, val):
        # ring buffer past the cap; the axis block at the front is pinned
        if self.ref_n < DIR_CAP:
            self.ref_dirs[self.ref_n] = direction
            self.ref_vals[self.ref_n] = val
            self.ref_n += 1
            return
        if self.ref_base >= DIR_CAP:
            return
        self.ref_dirs[self._dir_cursor] = direction
        self.ref_vals[self._dir_cursor] = val
        self._dir_cursor += 1
        if self._dir_cursor >= DIR_CAP:
            self._dir_cursor = self.ref_base

    def _cache_pt(self, x):
        if self._pt_n < PT_CAP:
            self.ref_pts[self._pt_n] = x
            self._pt_n += 1
            return
        self.ref_pts[self._pt_cursor] = x
        self._pt_cursor = (self._pt_cursor + 1) % PT_CAP

    def _lift(self, rows):
        """Live-space rows as reference-space rows (zeros where eliminated)."""
        out = np.zeros((rows.shape[0], self.ref_a.shape[1]))
        out[:, self.ref_cols] = rows
        return out

    def _ref_box_sup(self, w):
        """Exact componentwise supremum of w @ x over the reference box."""
        with np.errstate(invalid="ignore"):
            term = np.where(w >= 0, w * self.ref_hi[None, :],
                            w * self.ref_lo[None, :])
        term = np.where(np.isnan(term), 0.0, term)  # exact 0 * infinite axis
        return term.sum(axis=1)

    def _box_screen_mask(self, a, b):
        """True for rows whose offset is reachable over the reference box.

        Rows gated off stay strictly under their offset everywhere in the
        box, hence everywhere in the feasible set: strictly redundant, and
        safe to drop together with any other strictly redundant rows.
        """
        lo = self.ref_lo[self.ref_cols]
        hi = self.ref_hi[self.ref_cols]
        with np.errstate(invalid="ignore"):
            term = np.where(a >= 0, a * hi[None, :], a * lo[None, :])
        term = np.where(np.isnan(term), 0.0, term)
        return ~(term.sum(axis=1) <= b - 1e-9)

    def _lp_prune(self, force: bool = False):
        m = self.a.shape[0]
        if m == 0:
            return
        if force:
            if len(self.labels) == 2:
                self._final_prune_2d()
            else:
                self._lp_prune_exact()
            return
        if m <= max(self.lp_trigger, self.lp_target):
            return
        self._support_prune()
        self._facet_prune()

    def _support_prune(self):
        """Group-delete rows that never touch the feasible set.

        Every live row is a valid inequality of the exact projection, so
        its support over the reference polytope is at most its offset.
        Rows whose support stays strictly below the offset are strictly
        redundant and all go at once: the defining row of every facet (and
        of the affine hull, when the set is flat) is supporting and
        survives, so the survivors describe the same set. Verdicts come
        from, in order of cost: the reference box, tightness at a cached
        feasible point (keep), a cached support direction d via
        sup(u) <= sup(d) + sup_box(u - d) (drop), and finally the row's
        own support LP, which also feeds both caches. The pass decides
        every row: survivors are exactly the supporting rows, which is
        what keeps the next pairing from compounding.
        """
        m_enter = self.a.shape[0]
        if m_enter == 0:
            return
        if self.ref_a is None:
            self._freeze_reference()
        self._ensure_ref_cache()
        a, b, kept = _normalize_rows(self.a, self.b)
        self.a, self.b, self.hist = a, b, self.hist[kept]
        self._rev += 1
        alive = self._box_screen_mask(self.a, self.b)
        u = self._lift(self.a)
        b = self.b
        undecided = alive.copy()
        if self._pt_n:
            lb = (u @ self.ref_pts[:self._pt_n].T).max(axis=1)
            undecided &= lb < b - REF_TOL
        while True:
            idx = np.flatnonzero(undecided)
            if idx.size == 0:
                break
            cover = None
            if self.ref_n:
                sims = u[idx] @ self.ref_dirs[:self.ref_n].T
                best = np.argmax(sims, axis=1)
                ub = self.ref_vals[:self.ref_n][best] + self._ref_box_sup(
                    u[idx] - self.ref_dirs[:self.ref_n][best])
                dead = ub <= b[idx] - REF_TOL
                if dead.any():
                    alive[idx[dead]] = False
                    undecided[idx[dead]] = False
                    idx = idx[~dead]
                    if idx.size == 0:
                        break
                cover = sims[~dead, :].max(axis=1)
            if cover is not None:
                # solve the least cache-covered directions first: each
                # value settles its row and widens the cache for the rest
                idx = idx[np.argsort(cover, kind="stable")]
            batch = idx[:32]
            fresh = []
            for r in batch:
                val, x, bounded = _support(self.ref_a, self.ref_b, u[r])
                undecided[r] = False
                if not bounded or math.isnan(val):
                    continue
                self._cache_dir(u[r], val)
                if x is not None:
                    self._cache_pt(x)
                    fresh.append(x)
                if val <= b[r] - self.tol:
                    alive[r] = False
            if fresh:
                arr = np.array(fresh)
                rest = np.flatnonzero(undecided)
                if rest.size:
                    lb = (u[rest] @ arr.T).max(axis=1)
                    undecided[rest[lb >= b[rest] - REF_TOL]] = False
        if not alive.all():
            self._apply_keep(alive)
        if self.a.shape[0] < m_enter:
            self._reset_epoch()

    def _facet_prune(self):
        """Drop supporting rows that define no facet of the live set.

        The support test keeps every row that touches the feasible set,
        so fans of rows through a shared shadow vertex all survive it and
        their pairings compound step over step. Polar duality removes
        them: about a strictly interior point, facet rows map to vertices
        of the dual point cloud and vertex-tangent rows map into the
        convex hull of those vertices. Vertices are confirmed in bulk by
        strict argmax over direction batteries; the rest are certified
        redundant by expressing their dual point as a convex combination
        of confirmed vertices (a small nonnegative least squares solve,
        no LP). Failed expressions donate their residual as a new
        direction, which exposes exactly the sliver vertices random
        sampling misses. Unresolved rows stay: keeping a redundant row
        is always sound. Confirmed rows are never deleted, so every
        certificate cites surviving rows only and the whole group can go
        at once. Needs a bounded full-dimensional set; flat, thin, or
        unbounded systems are left to the support test alone.
        """
        m, d = self.a.shape
        if m <= 48:
            return
        if self.ref_lo is None or not np.isfinite(self.ref_lo).all() \
                or not np.isfinite(self.ref_hi).all():
            return
        a, b = self.a, self.b
        res = linprog(np.r_[np.zeros(d), -1.0],
                      A_ub=np.hstack([a, np.ones((m, 1))]), b_ub=b,
                      bounds=[(None, None)] * d + [(0.0, 1.0)],
                      method="highs")
        if not res.success or res.x is None:
            return
        t_star = float(res.x[-1])
        if t_star <= 1e-7:
            return
        z = res.x[:d]
        slack = b - a @ z
        if slack.min() <= 1e-9:
            return
        dual = a / slack[:, None]
        confirmed = np.zeros(m, dtype=bool)
        rng = np.random.default_rng(7)

        def refine(tied, depth):
            # split an argmax tie with fresh directions until one point
            # stands alone; a stalled tie is a duplicate cluster and one
            # representative serves as generator for the rest
            if tied.size == 1 or depth > d + 2:
                confirmed[tied[0]] = True
                return
            v = dual[tied] @ rng.normal(size=d)
            mx = v.max()
            sub = np.flatnonzero(v >= mx - 1e-10 * (1.0 + abs(mx)))
            if sub.size == tied.size:
                confirmed[tied[0]] = True
                return
            refine(tied[sub], depth + 1)

        def confirm(dirs):
            vals = dual @ dirs.T
            mx = vals.max(axis=0)
            cut = mx - 1e-10 * (1.0 + np.abs(mx))
            tied_mask = vals >= cut[None, :]
            counts = tied_mask.sum(axis=0)
            lone = counts == 1
            if lone.any():
                confirmed[np.argmax(vals[:, lone], axis=0)] = True
            seen = set()
            for c in np.flatnonzero(~lone):
                tied = np.flatnonzero(tied_mask[:, c])
                key = tied.tobytes()
                if key in seen:
                    continue
                seen.add(key)
                refine(tied, 0)

        confirm(np.eye(d))
        confirm(-np.eye(d))
        confirm(rng.normal(size=(min(4 * m, 1024), d)))
        norms = np.linalg.norm(dual, axis=1)
        safe = norms > 1e-14
        confirm(dual[safe] / norms[safe, None])
        removable = np.zeros(m, dtype=bool)
        for _ in range(64):
            nv = int(confirmed.sum())
            if nv == 0:
                break
            # the augmented coordinate folds the convex-combination
            # constraint into plain cone membership
            base = np.vstack([dual[confirmed].T, np.ones(nv)])
            todo = np.flatnonzero(~confirmed & ~removable)
            if todo.size == 0:
                break
            fresh_dirs = []
            for j in todo:
                rhs = np.r_[dual[j], 1.0]
                lam = _nnls_small(base, rhs)
                # the residual vector is the certificate: near-zero
                # proves the convex combination, anything else separates
                gap = rhs - base @ lam
                if np.linalg.norm(gap) <= 1e-10 * (1.0 + np.linalg.norm(rhs)):
                    removable[j] = True
                else:
                    fresh_dirs.append(gap[:d])
            if not fresh_dirs:
                break
            w = np.array(fresh_dirs)
            wn = np.linalg.norm(w, axis=1)
            w = w[wn > 1e-14] / wn[wn > 1e-14, None]
            before = int(confirmed.sum())
            if w.shape[0]:
                confirm(w)
            if int(confirmed.sum()) == before:
                break
        if removable.any():
            self._apply_keep(~removable)
            self._reset_epoch()

    def _final_prune_2d(self):
        """Reduce the final two-variable system to one row per facet.

        Polar duality about a strictly interior point: a halfplane is
        non-redundant exactly when its dual point is a vertex of the dual
        hull, so one convex hull replaces per-row LP certification.
        Degenerate and unbounded regions fall back to the sequential pass,
        which handles them exactly, if slowly.
        """
        if self.ref_a is not None and self.a.shape[0] > self.lp_trigger:
            self._support_prune()
        a, b, kept = _normalize_rows(self.a, self.b)
        self.a, self.b, self.hist = a, b, self.hist[kept]
        self._rev += 1
        keep = _dedup_dominated(self.a, self.b)
        mask = np.zeros(self.a.shape[0], dtype=bool)
        mask[keep] = True
        self._apply_keep(mask)
        m = self.a.shape[0]
        if m <= 3:
            return
        for direction in ((1.0, 0.0), (-1.0, 0.0), (0.0, 1.0), (0.0, -1.0)):
            _, _, bounded = _support(self.a, self.b, np.asarray(direction))
            if not bounded:
                self._lp_prune_exact()
                return
        # deepest point: rows are unit-norm, so the auxiliary variable is
        # the distance to the nearest boundary
        c = np.zeros(3)
        c[-1] = -1.0
        a_ext = np.hstack([self.a, np.ones((m, 1))])
        res = linprog(c, A_ub=a_ext, b_ub=self.b,
                      bounds=[(None, None), (None, None), (0, None)],
                      method="highs")
        if res.status != 0 or res.x is None or res.x[-1] <= 1e-9:
            self._lp_prune_exact()  # flat region, no interior to dualize at
            return
        z = res.x[:2]
        dual = self.a / (self.b - self.a @ z)[:, None]
        hull = _hull_indices(dual)
        if hull.size < 3:
            self._lp_prune_exact()
            return
        alive = np.zeros(m, dtype=bool)
        alive[hull] = True
        self._apply_keep(alive)

    def _lp_prune_exact(self):
        """Sequential full certification; leaves only necessary rows."""
        m = self.a.shape[0]
        alive = np.ones(m, dtype=bool)
        for r in range(m):
            alive[r] = False
            rows = np.flatnonzero(alive)
            if rows.size == 0:
                alive[r] = True
                continue
            val, x, bounded = _support(self.a[rows], self.b[rows], self.a[r])
            if bounded and not math.isnan(val) and val <= self.b[r] + self.tol:
                continue
            alive[r] = True
        self._apply_keep(alive)

    # -- elimination ------------------------------------------------------

    def _equality_map(self):
        """Column -> (lower, upper) mirrored-pair rows, one shared pass.

        A mirrored pair is an equality; any column where it has a pivot
        above EQ_COL can be substituted out through it (smaller pivots are
        not reported: substitution divides by the pivot and would amplify
        the whole row). Cached per revision so the per-step cost is one
        hashing pass instead of one per candidate variable.
        """
        if self._eq_cache[0] == self._rev:
            return self._eq_cache[1]
        out: dict[int, tuple[int, int]] = {}
        a, b = self.a, self.b
        if a.shape[0]:
            stack = np.hstack([a, b[:, None]])
            ok = np.flatnonzero(np.abs(stack).max(axis=1) <= 1e10)
            quant = np.round(stack[ok] / 1e-8).astype(np.int64)
            seen: dict[bytes, int] = {}
            for pos in range(quant.shape[0]):
                mate = seen.get((-quant[pos]).tobytes())
                if mate is not None:
                    r1, r2 = int(ok[mate]), int(ok[pos])
                    for j in np.flatnonzero(np.abs(a[r1]) > EQ_COL):
                        if int(j) not in out:
                            out[int(j)] = (r2, r1) if a[r1, j] > 0 else (r1, r2)
                seen.setdefault(quant[pos].tobytes(), pos)
        self._eq_cache = (self._rev, out)
        return out

    def _step_cost(self, j):
        col = self.a[:, j]
        n_pos = int(np.count_nonzero(col > ZERO_COL))
        n_neg = int(np.count_nonzero(col < -ZERO_COL))
        return n_pos * n_neg, n_pos, n_neg

    def _pair_fresh(self, a_pos, b_pos, h_pos, a_neg, b_neg, h_neg,
                    sc_pos, sc_neg):
        """All pairings of a fresh epoch, screened at birth.

        Right after an epoch reset every parent carries a singleton
        ancestry mask, so the ancestry budget admits every pairing and
        counting would be wasted work. Combined rows are normalized and
        screened against the reference box chunk by chunk, so the full
        quadratic block never materializes at once.
        """
        d = a_pos.shape[1]
        n_pos = a_pos.shape[0]
        use_box = self.ref_lo is not None
        acc_a, acc_b, acc_n, acc_p = [], [], [], []
        chunk = max(1, 300_000 // max(1, n_pos))
        for s in range(0, a_neg.shape[0], chunk):
            sl = slice(s, s + chunk)
            anew = (a_neg[sl][:, None, :] + a_pos[None, :, :]).reshape(-1, d)
            bnew = (b_neg[sl][:, None] + b_pos[None, :]).reshape(-1)
            scale = np.maximum(sc_neg[sl][:, None],
                               sc_pos[None, :]).reshape(-1)
            anew[np.abs(anew) < 1e-13 * scale[:, None]] = 0.0
            norms = np.linalg.norm(anew, axis=1)
            live = norms > COEFF_TOL
            # a combined row that cancels to nothing must have a
            # nonnegative offset: the input was verified feasible
            bad = ~live & (bnew < -1e-9 * np.maximum(1.0, scale))
            if bad.any():
                raise NumericalInstability(
                    "cancelled row pair with negative offset")
            src = np.flatnonzero(live)
            anew = anew[src] / norms[src][:, None]
            bnew = bnew[src] / norms[src]
            if use_box:
                keep = self._box_screen_mask(anew, bnew)
                anew, bnew, src = anew[keep], bnew[keep], src[keep]
            acc_a.append(anew)
            acc_b.append(bnew)
            acc_n.append(s + src // n_pos)
            acc_p.append(src % n_pos)
        a_new = np.vstack(acc_a)
        b_new = np.concatenate(acc_b)
        jn = np.concatenate(acc_n)
        jp = np.concatenate(acc_p)
        return a_new, b_new, h_neg[jn] | h_pos[jp]

    def eliminate(self, var: str) -> EliminationStep:
        t0 = time.perf_counter()
        j = self.labels.index(var)
        col = self.a[:, j]
        rows_before = self.a.shape[0]
        pos = col > ZERO_COL
        neg = col < -ZERO_COL
        zero = ~(pos | neg)
        pairs = int(pos.sum()) * int(neg.sum())

        eq = self._equality_map().get(j)
        used_eq = eq is not None
        if used_eq:
            lower, upper = eq
            # Gaussian substitution of var from the equality pair. Each
            # rewritten row is a positive multiple of one lower/upper
            # pairing, and those pairings imply all remaining ones, so the
            # result is still the exact projection.
            e_row = self.a[upper] / col[upper]
            e_off = self.b[upper] / col[upper]
            others = np.flatnonzero(np.abs(col) > ZERO_COL)
            others = others[(others != lower) & (others != upper)]
            coef = col[others]
            a_new = self.a[others] - coef[:, None] * e_row[None, :]
            b_new = self.b[others] - coef * e_off
            # snap cancellation residue: entries this far under the update
            # magnitude are float noise, and later steps would divide by them
            upd = np.maximum(1.0, np.abs(coef) *
                             max(float(np.abs(e_row).max()), abs(e_off)))
            a_new[np.abs(a_new) < 1e-13 * upd[:, None]] = 0.0
            h_new = np.where((coef > 0)[:, None],
                             self.hist[others] | self.hist[lower],
                             self.hist[others] | self.hist[upper])
            generated = a_new.shape[0]
        else:
            a_pos = self.a[pos] / col[pos, None]
            b_pos = self.b[pos] / col[pos]
            h_pos = self.hist[pos]
            a_neg = self.a[neg] / (-col[neg, None])
            b_neg = self.b[neg] / (-col[neg])
            h_neg = self.hist[neg]
            # parent magnitudes, for residue snapping after each pairing
            sc_pos = np.maximum(np.abs(a_pos).max(axis=1), np.abs(b_pos)) \
                if a_pos.shape[0] else np.zeros(0)
            sc_neg = np.maximum(np.abs(a_neg).max(axis=1), np.abs(b_neg)) \
                if a_neg.shape[0] else np.zeros(0)
            if a_pos.shape[0] and a_neg.shape[0] and self.epoch_elims == 0:
                a_new, b_new, h_new = self._pair_fresh(
                    a_pos, b_pos, h_pos, a_neg, b_neg, h_neg, sc_pos, sc_neg)
            elif a_pos.shape[0] and a_neg.shape[0]:
                # chunk the pairing so the bitmask outer product stays small
                budget = self.epoch_elims + 2
                chunk = max(1, 4_000_000 // max(1, a_pos.shape[0] * self.words))
                blocks_a, blocks_b, blocks_h = [], [], []
                for s in range(0, a_neg.shape[0], chunk):
                    sl = slice(s, s + chunk)
                    union = h_neg[sl][:, None, :] | h_pos[None, :, :]
                    # ancestry rule: more than epoch_elims+2 epoch-start
                    # rows in the combination -> redundant
                    counts = np.bitwise_count(union).sum(axis=2)
                    jj, kk = np.nonzero(counts <= budget)
                    anew = a_neg[sl][jj] + a_pos[kk]
                    bnew = b_neg[sl][jj] + b_pos[kk]
                    scale = np.maximum(sc_neg[sl][jj], sc_pos[kk])
                    if anew.shape[0]:
                        anew[np.abs(anew) < 1e-13 * scale[:, None]] = 0.0
                        live = np.abs(anew).max(axis=1) > 0.0
                        # a combined row that cancels to nothing must have a
                        # nonnegative offset: the input was verified feasible
                        bad = ~live & (bnew < -1e-9 * np.maximum(1.0, scale))
                        if bad.any():
                            raise NumericalInstability(
                                "cancelled row pair with negative offset")
                        anew, bnew = anew[live], bnew[live]
                        union_kept = union[jj, kk][live]
                    else:
                        union_kept = union[jj, kk]
                    blocks_a.append(anew)
                    blocks_b.append(bnew)
                    blocks_h.append(union_kept)
                a_new = np.vstack(blocks_a)
                b_new = np.concatenate(blocks_b)
                h_new = np.vstack(blocks_h)
            else:
                a_new = np.zeros((0, self.a.shape[1]))
                b_new = np.zeros(0)
                h_new = np.zeros((0, self.words), dtype=np.uint64)
            generated = a_new.shape[0]

        self.a = np.delete(np.vstack([self.a[zero], a_new]), j, axis=1)
        self.b = np.concatenate([self.b[zero], b_new])
        self.hist = np.vstack([self.hist[zero], h_new])
        self.labels.pop(j)
        self.ref_cols = np.delete(self.ref_cols, j)
        self.n_elim += 1
        self.epoch_elims += 1
        self._rev += 1

        carried = int(zero.sum())
        self._cheap_prune()
        self._lp_prune()
        rows_after = self.a.shape[0]
        return EliminationStep(
            var=var, rows_before=rows_before, pairs=pairs,
            rows_generated=generated + carried, rows_after=rows_after,
            removed=generated + carried - rows_after,
            used_equality=used_eq,
            wall_time_s=time.perf_counter() - t0)

    def choose_next(self):
        eq = self._equality_map()
        best = None
        for j, lbl in enumerate(self.labels):
            if lbl in self.keep:
                continue
            cost, n_pos, n_neg = self._step_cost(j)
            if cost > 0 and j in eq:
                cost = n_pos + n_neg  # substitution grows linearly
            if best is None or cost < best[0]:
                best = (cost, lbl)
        return best[1] if best else None


def project_to_plane(sys: LinearSystem, keep: Sequence[str] = ("dP", "dQ"),
                     order: Sequence[str] | None = None,
                     tol: float = CERT_TOL,
                     lp_trigger: int = 96, lp_target: int = 0
                     ) -> tuple[LinearSystem, EliminationReport]:
    """Project the system onto the kept variables by repeated elimination.

    Alternates an elimination step with redundancy pruning. The default
    order eliminates the variable with the fewest lower*upper pairings
    next; `order` may pin an explicit sequence instead (it must list every
    non-kept variable exactly once). The final system is fully certified:
    one defining row per facet for a full-dimensional projection, and
    row-by-row LP certification for flat or unbounded ones.

    Raises InfeasibleSystem when the input has no feasible point.
    """
    t0 = time.perf_counter()
    if len(set(keep)) != len(keep):
        raise BadParameter("keep variables must be distinct")
    proj = _Projector(sys, keep, tol, lp_trigger, lp_target)
    report = EliminationReport(initial_rows=sys.m, final_rows=0)
    proj._input_prune()

    if order is not None:
        pending = list(order)
        if sorted(pending) != sorted(l for l in sys.labels if l not in keep):
            raise BadParameter(
                "explicit order must list every non-kept variable once")
        for var in pending:
            report.steps.append(proj.eliminate(var))
    else:
        while True:
            var = proj.choose_next()
            if var is None:
                break
            report.steps.append(proj.eliminate(var))

    proj._lp_prune(force=True)
    out = LinearSystem(proj.a, proj.b, tuple(proj.labels))
    if tuple(proj.labels) != tuple(keep):
        perm = [proj.labels.index(k) for k in keep]
        out = LinearSystem(out.a[:, perm], out.b, tuple(keep))
    report.final_rows = out.m
    report.total_wall_time_s = time.perf_counter() - t0
    return out, report


# --------------------------------------------------------------------------
# polygons


class Polygon2D:
    """Convex polygon, CCW vertices, first vertex lexicographically least.

    Degenerate regions (single points, segments) are representable; they
    report area 0 and is_degenerate True.
    """

    __slots__ = ("vertices",)

    def __init__(self, vertices):
        v = np.asarray(vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2 or v.shape[0] < 1:
            raise BadParameter("polygon needs a (k, 2) vertex array, k >= 1")
        self.vertices = v

    @classmethod
    def from_points(cls, points: Iterable[Sequence[float]]) -> "Polygon2D":
        pts = np.asarray(list(points), dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] == 0:
            raise BadParameter("need at least one 2D point")
        return cls(_monotone_chain(pts))

    @property
    def k(self) -> int:
        return self.vertices.shape[0]

    @property
    def area(self) -> float:
        return area(self)

    @property
    def is_degenerate(self) -> bool:
        return self.k < 3 or self.area <= 1e-14

    def contains(self, point, tol: float = VERTEX_TOL) -> bool:
        p = np.asarray(point, dtype=float)
        v = self.vertices
        if self.k == 1:
            return bool(np.linalg.norm(p - v[0]) <= tol)
        if self.k == 2:
            return _point_segment_distance(p, v[0], v[1]) <= tol
        nxt = np.roll(v, -1, axis=0)
        cross = (nxt[:, 0] - v[:, 0]) * (p[1] - v[:, 1]) \
            - (nxt[:, 1] - v[:, 1]) * (p[0] - v[:, 0])
        return bool(np.all(cross >= -tol * np.linalg.norm(nxt - v, axis=1)))

    def contains_many(self, points, tol: float = VERTEX_TOL) -> np.ndarray:
        """Vectorized containment test for an (N, 2) array of points."""
        pts = np.asarray(points, dtype=float)
        if self.k < 3:
            return np.array([self.contains(p, tol) for p in pts], dtype=bool)
        v = self.vertices
        nxt = np.roll(v, -1, axis=0)
        ex = (nxt[:, 0] - v[:, 0])[None, :]
        ey = (nxt[:, 1] - v[:, 1])[None, :]
        rx = pts[:, 0][:, None] - v[None, :, 0]
        ry = pts[:, 1][:, None] - v[None, :, 1]
        cross = ex * ry - ey * rx
        edge_len = np.linalg.norm(nxt - v, axis=1)[None, :]
        return np.all(cross >= -tol * edge_len, axis=1)

    def translate(self, shift) -> "Polygon2D":
        return Polygon2D(self.vertices + np.asarray(shift, dtype=float))

    def __repr__(self):
        return f"Polygon2D({self.k} vertices, area={self.area:.6g})"


def _merge_close(pts: np.ndarray, tol: float = VERTEX_TOL) -> np.ndarray:
    if pts.shape[0] <= 1:
        return pts
    out = [pts[0]]
    for p in pts[1:]:
        if np.linalg.norm(p - out[-1]) > tol:
            out.append(p)
    if len(out) > 1 and np.linalg.norm(out[0] - out[-1]) <= tol:
        out.pop()
    return np.array(out)


def _monotone_chain(pts: np.ndarray) -> np.ndarray:
    """Convex hull, CCW, starting at the lexicographically least vertex.

    Handles large clouds (hundreds of thousands of points): the lexsort
    dominates, the chain walk is linear.
    """
    order = np.lexsort((pts[:, 1], pts[:, 0]))
    pts = pts[order]
    if pts.shape[0] <= 2:
        return _merge_close(np.unique(pts, axis=0))

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower: list[np.ndarray] = []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 1e-16:
            lower.pop()
        lower.append(p)
    upper: list[np.ndarray] = []
    for p in pts[::-1]:
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 1e-16:
            upper.pop()
        upper.append(p)
    hull = _merge_close(np.array(lower[:-1] + upper[:-1]))
    if hull.shape[0] > 1:
        start = np.lexsort((hull[:, 1], hull[:, 0]))[0]
        hull = np.roll(hull, -start, axis=0)
    return hull


def _hull_indices(pts: np.ndarray) -> np.ndarray:
    """Convex hull vertex indices of a 2D point cloud, CCW.

    Strictly convex turns only: collinear boundary points are not reported
    as vertices, which is what the dual-space redundancy test needs.
    """
    n = pts.shape[0]
    if n < 3:
        return np.arange(n)
    order = np.lexsort((pts[:, 1], pts[:, 0]))

    def cross(o, p, q):
        return (p[0] - o[0]) * (q[1] - o[1]) - (p[1] - o[1]) * (q[0] - o[0])

    lower: list[int] = []
    for i in order:
        while len(lower) >= 2 and \
                cross(pts[lower[-2]], pts[lower[-1]], pts[i]) <= 0.0:
            lower.pop()
        lower.append(int(i))
    upper: list[int] = []
    for i in order[::-1]:
        while len(upper) >= 2 and \
                cross(pts[upper[-2]], pts[upper[-1]], pts[i]) <= 0.0:
            upper.pop()
        upper.append(int(i))
    return np.array(lower[:-1] + upper[:-1], dtype=int)


def convex_hull(points: Iterable[Sequence[float]]) -> Polygon2D:
    return Polygon2D.from_points(points)


def area(poly: Polygon2D) -> float:
    v = poly.vertices
    if v.shape[0] < 3:
        return 0.0
    x, y = v[:, 0], v[:, 1]
    return float(abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))) / 2)


def intersect(a: Polygon2D, b: Polygon2D) -> Polygon2D:
    """Convex clipping (Sutherland-Hodgman).

    Raises EmptyRegion when the polygons do not overlap or either operand
    is degenerate (a zero-area operand yields a zero-area intersection,
    which the metric callers treat as empty anyway).
    """
    if a.is_degenerate or b.is_degenerate:
        raise EmptyRegion("degenerate operand, zero-area intersection")
    subject = a.vertices
    for (cx, cy), (dx, dy) in zip(b.vertices, np.roll(b.vertices, -1, axis=0)):
        if subject.shape[0] == 0:
            break
        ex, ey = dx - cx, dy - cy
        out = []
        for p, q in zip(np.roll(subject, 1, axis=0), subject):
            side_p = ex * (p[1] - cy) - ey * (p[0] - cx)
            side_q = ex * (q[1] - cy) - ey * (q[0] - cx)
            if (side_p >= -1e-12) != (side_q >= -1e-12):
                out.append(p + (side_p / (side_p - side_q)) * (q - p))
            if side_q >= -1e-12:
                out.append(q)
        subject = np.array(out) if out else np.zeros((0, 2))
    if subject.shape[0] == 0:
        raise EmptyRegion("polygons do not intersect")
    return Polygon2D.from_points(subject)


def minkowski_sum(polys: Sequence[Polygon2D]) -> Polygon2D:
    """Sum of convex polygons by merging edge vectors in angular order."""
    if not polys:
        raise BadParameter("minkowski_sum needs at least one polygon")
    acc = polys[0]
    for p in polys[1:]:
        acc = _minkowski_pair(acc, p)
    return acc


def _edges_ccw(poly: Polygon2D) -> list[np.ndarray]:
    v = poly.vertices
    if v.shape[0] == 1:
        return []
    if v.shape[0] == 2:
        # a segment sweeps both directions
        return [v[1] - v[0], v[0] - v[1]]
    return list(np.roll(v, -1, axis=0) - v)


def _start_vertex(poly: Polygon2D) -> np.ndarray:
    v = poly.vertices
    return v[np.lexsort((v[:, 0], v[:, 1]))[0]]  # lowest y, then lowest x


def _minkowski_pair(p: Polygon2D, q: Polygon2D) -> Polygon2D:
    edges = _edges_ccw(p) + _edges_ccw(q)
    if not edges:
        return Polygon2D.from_points([p.vertices[0] + q.vertices[0]])

    def angle(e):
        a = math.atan2(e[1], e[0])
        # the walk starts at the lowest point, so angles near 0 come first
        return a if a >= -1e-12 else a + 2 * math.pi

    edges.sort(key=angle)
    pts = [_start_vertex(p) + _start_vertex(q)]
    for e in edges:
        pts.append(pts[-1] + e)
    return Polygon2D.from_points(pts)


def fill_factor(a: Polygon2D, a_star: Polygon2D) -> float:
    """Share of the reference region covered: area(a & a*) / area(a*)."""
    ref = area(a_star)
    if ref <= 1e-14:
        raise DegenerateReference("reference region has zero area")
    try:
        overlap = area(intersect(a, a_star))
    except EmptyRegion:
        overlap = 0.0
    return float(min(1.0, max(0.0, overlap / ref)))


def approx_error(a: Polygon2D, a_star: Polygon2D) -> float:
    """Overreach of a beyond the reference: 1 - area(a & a*) / area(a)."""
    own = area(a)
    if own <= 1e-14:
        return 0.0
    if area(a_star) <= 1e-14:
        raise DegenerateReference("reference region has zero area")
    try:
        overlap = area(intersect(a, a_star))
    except EmptyRegion:
        overlap = 0.0
    return float(min(1.0, max(0.0, 1.0 - overlap / own)))


def _point_segment_distance(p, a, b) -> float:
    d = b - a
    denom = float(np.dot(d, d))
    if denom <= 1e-300:
        return float(np.linalg.norm(p - a))
    t = float(np.clip(np.dot(p - a, d) / denom, 0.0, 1.0))
    return float(np.linalg.norm(p - (a + t * d)))


def _point_polygon_distance(p, poly: Polygon2D) -> float:
    if poly.k >= 3 and poly.contains(p, tol=0.0):
        return 0.0
    v = poly.vertices
    if poly.k == 1:
        return float(np.linalg.norm(p - v[0]))
    nxt = np.roll(v, -1, axis=0)
    return min(_point_segment_distance(p, s, e) for s, e in zip(v, nxt))


def directed_hausdorff(a: Polygon2D, b: Polygon2D) -> float:
    """Max distance from a's vertices to b; 0 exactly when a lies inside b."""
    return max(_point_polygon_distance(p, b) for p in a.vertices)


def hausdorff(a: Polygon2D, b: Polygon2D) -> float:
    return max(directed_hausdorff(a, b), directed_hausdorff(b, a))


# --------------------------------------------------------------------------
# 2-variable systems -> polygons


def polygon_from_system(sys: LinearSystem, tol: float = VERTEX_TOL) -> Polygon2D:
    """Vertex enumeration of a two-variable inequality system.

    Vertices are feasible intersections of row pairs. Raises EmptyRegion
    and UnboundedRegion for those outcomes; degenerate point or segment
    regions come back as degenerate polygons.
    """
    if sys.n_vars != 2:
        raise DimensionMismatch(
            f"polygon extraction needs exactly 2 variables, got {sys.n_vars}")
    a, b, _ = _normalize_rows(sys.a.copy(), sys.b.copy())
    keep = _dedup_dominated(a, b)
    a, b = a[keep], b[keep]

    anchor = _phase1_point(a, b)
    if anchor is None:
        raise EmptyRegion("two-variable system is infeasible")
    for direction in ((1.0, 0.0), (-1.0, 0.0), (0.0, 1.0), (0.0, -1.0)):
        _, _, bounded = _support(a, b, np.asarray(direction))
        if not bounded:
            raise UnboundedRegion(
                "feasible set unbounded in direction "
                f"({direction[0]:+.0f}, {direction[1]:+.0f})")

    m = a.shape[0]
    pts = [anchor]
    for i in range(m):
        for j in range(i + 1, m):
            det = a[i, 0] * a[j, 1] - a[i, 1] * a[j, 0]
            if abs(det) <= 1e-10:
                continue
            pts.append(np.array([
                (b[i] * a[j, 1] - a[i, 1] * b[j]) / det,
                (a[i, 0] * b[j] - b[i] * a[j, 0]) / det,
            ]))
    pts = np.array(pts)
    feas = pts[(a @ pts.T - b[:, None]).max(axis=0) <= tol]
    if feas.shape[0] == 0:
        feas = np.array([anchor])
    return Polygon2D.from_points(feas)


def system_from_polygon(poly: Polygon2D,
                        labels: tuple[str, str] = ("dP", "dQ")) -> LinearSystem:
    """Halfspace form of a non-degenerate convex polygon."""
    if poly.is_degenerate:
        raise BadParameter("cannot build halfspaces of a degenerate polygon")
    v = poly.vertices
    e = np.roll(v, -1, axis=0) - v
    normals = np.stack([e[:, 1], -e[:, 0]], axis=1)
    normals = normals / np.linalg.norm(normals, axis=1)[:, None]
    return LinearSystem(normals, np.sum(normals * v, axis=1), labels)


# --------------------------------------------------------------------------
# serialization


def polygon_to_dict(poly: Polygon2D) -> dict:
    return {"vertices": [[float(x), float(y)] for x, y in poly.vertices]}


def polygon_from_dict(data: dict) -> Polygon2D:
    return Polygon2D(np.asarray(data["vertices"], dtype=float))


def polygon_to_csv(poly: Polygon2D) -> str:
    lines = ["p_pu,q_pu"]
    lines += [f"{float(x)!r},{float(y)!r}" for x, y in poly.vertices]
    return "\n".join(lines) + "\n"


def polygon_from_csv(text: str) -> Polygon2D:
    rows = [ln for ln in text.strip().splitlines()[1:] if ln]
    pts = [tuple(float(tok) for tok in ln.split(",")) for ln in rows]
    return Polygon2D(np.asarray(pts, dtype=float))
