"""End-to-end flexibility-region pipelines and the comparison harness.

Four routes to the same question, namely which interface flows (P, Q) the
feeder can offer at its coupling point:

  * fme_for          exact projection of the linearized constraint set
  * gsk_for          aggregate-dispatch restriction of the same set
  * minkowski_for    network-blind sum of unit capability polygons
  * monte_carlo_for  nonlinear rejection-sampling reference

All results are in absolute interface coordinates (base flow plus the
deviation), export positive. compare() turns a batch of results into the
fill-factor / overreach / area / runtime table.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import yaml

from .errors import (
    BadParameter,
    DegenerateReference,
    DimensionMismatch,
    InfeasibleSystem,
    NoFeasibleSamples,
    ParseError,
    SingularCoupling,
    UnitError,
)
from .linearization import (
    assemble_system,
    build_sensitivity,
    capability_halfplanes,
)
from .network import (
    PV,
    DerUnit,
    RadialNetwork,
    base_operating_point,
    build_sweep_matrices,
    solve_power_flow_batch,
)
from .polytope import (
    EliminationReport,
    LinearSystem,
    Polygon2D,
    approx_error,
    fill_factor,
    minkowski_sum,
    polygon_from_system,
    project_to_plane,
)
from .uncertainty import MarginSet, apply_margins

__all__ = [
    "ForResult",
    "GskScheme",
    "MetricsRow",
    "MetricsTable",
    "capacity_scheme",
    "load_gsk_scheme",
    "fme_for",
    "gsk_for",
    "minkowski_for",
    "monte_carlo_for",
    "compare",
]


# --- result carriers ---------------------------------------------------------

@dataclass(frozen=True)
class ForResult:
    """One method's flexibility region in absolute interface coordinates."""

    method: str
    polygon: Polygon2D
    base_pcc: tuple[float, float]
    wall_time_s: float
    report: EliminationReport | None = None
    samples: np.ndarray | None = None


@dataclass(frozen=True)
class GskScheme:
    """Fixed fractions splitting an aggregate dispatch across units.

    g_p[i] scales unit i's active deviation, g_q[i] its reactive one. Both
    vectors are nonnegative and sum to one.
    """

    g_p: tuple[float, ...]
    g_q: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.g_p) == 0 or len(self.g_p) != len(self.g_q):
            raise DimensionMismatch("scheme vectors must be nonempty and equal length")
        for name, vec in (("g_p", self.g_p), ("g_q", self.g_q)):
            if any(not math.isfinite(v) or v < -1e-12 for v in vec):
                raise BadParameter(f"{name} entries must be finite and >= 0")
            if abs(sum(vec) - 1.0) > 1e-9:
                raise BadParameter(f"{name} must sum to 1, got {sum(vec)}")


def _normalised(weights: list[float]) -> tuple[float, ...]:
    total = sum(weights)
    if total <= 0.0:
        # nothing to share, split evenly
        return tuple(1.0 / len(weights) for _ in weights)
    return tuple(w / total for w in weights)


def capacity_scheme(units: Sequence[DerUnit]) -> GskScheme:
    """Default split: active span p_upper - p_lower, reactive rating s_max."""
    if not units:
        raise BadParameter("a dispatch scheme needs at least one unit")
    return GskScheme(
        g_p=_normalised([u.p_upper - u.p_lower for u in units]),
        g_q=_normalised([u.s_max for u in units]),
    )


def load_gsk_scheme(path: str | Path, n_units: int) -> GskScheme:
    """Read {g_p: [...], g_q: [...]} weights from YAML and normalise them."""
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except FileNotFoundError:
        raise ParseError(f"scheme file not found: {path}")
    except yaml.YAMLError as exc:
        raise ParseError(f"{path}: not valid YAML: {exc}")
    if not isinstance(raw, dict) or set(raw) != {"g_p", "g_q"}:
        raise ParseError(f"{path}: expected exactly the keys g_p and g_q")
    vecs = {}
    for key in ("g_p", "g_q"):
        try:
            vec = [float(v) for v in raw[key]]
        except (TypeError, ValueError) as exc:
            raise ParseError(f"{path}: {key}: {exc}") from exc
        if len(vec) != n_units:
            raise DimensionMismatch(
                f"{path}: {key} has {len(vec)} entries for {n_units} units")
        if any(v < 0.0 or not math.isfinite(v) for v in vec):
            raise ParseError(f"{path}: {key} entries must be finite and >= 0")
        if sum(vec) <= 0.0:
            raise ParseError(f"{path}: {key} must have positive total weight")
        vecs[key] = _normalised(vec)
    return GskScheme(g_p=vecs["g_p"], g_q=vecs["g_q"])


# --- shared pipeline pieces ---------------------------------------------------

def _effective_units(net: RadialNetwork,
                     units: Sequence[DerUnit] | None,
                     margins: MarginSet | None) -> tuple[DerUnit, ...]:
    out = net.ders if units is None else tuple(units)
    if margins is not None:
        out = apply_margins(out, margins)
    return out


def _linearized_system(net, units, k_cap, k_cur):
    base = base_operating_point(net, units)
    m = build_sweep_matrices(net, v_bar=base.v)
    model = build_sensitivity(m, base, units)
    return base, model, assemble_system(net, model, units=units,
                                        k_cap=k_cap, k_cur=k_cur)


# --- the four methods ----------------------------------------------------------

def fme_for(net: RadialNetwork,
            units: Sequence[DerUnit] | None = None,
            k_cap: int = 12, k_cur: int = 8,
            margins: MarginSet | None = None) -> ForResult:
    """Project the full linearized constraint set onto the interface plane."""
    t0 = time.perf_counter()
    units = _effective_units(net, units, margins)
    base, _model, sys = _linearized_system(net, units, k_cap, k_cur)
    flat, report = project_to_plane(sys)
    poly = polygon_from_system(flat).translate((base.pcc_p, base.pcc_q))
    return ForResult(method="fme", polygon=poly,
                     base_pcc=(base.pcc_p, base.pcc_q),
                     wall_time_s=max(time.perf_counter() - t0, 1e-9),
                     report=report)


def gsk_for(net: RadialNetwork,
            units: Sequence[DerUnit] | None = None,
            scheme: GskScheme | None = None,
            k_cap: int = 12, k_cur: int = 8,
            margins: MarginSet | None = None) -> ForResult:
    """Restrict the constraint set to fixed-fraction aggregate dispatch.

    Unit deviations are parametrized as y = G (t, s) with the scheme columns
    in G, and the aggregate pair maps through the interface sensitivities,
    (dP, dQ) = M (t, s). Substituting x = [I; G M^-1] (dP, dQ) keeps every
    dispatch inside the full polytope, so the region is an exact restriction
    of the projected one; the coupling rows vanish identically.
    """
    t0 = time.perf_counter()
    units = _effective_units(net, units, margins)
    if scheme is None:
        scheme = capacity_scheme(units)
    nc = len(units)
    if len(scheme.g_p) != nc:
        raise DimensionMismatch(
            f"scheme covers {len(scheme.g_p)} units, network has {nc}")
    base, model, sys = _linearized_system(net, units, k_cap, k_cur)

    g = np.zeros((2 * nc, 2))
    g[:nc, 0] = scheme.g_p
    g[nc:, 1] = scheme.g_q
    m2 = model.dpq_map @ g
    det = m2[0, 0] * m2[1, 1] - m2[0, 1] * m2[1, 0]
    if abs(det) <= 1e-12 * max(1.0, float(np.abs(m2).max()) ** 2):
        raise SingularCoupling(
            "scheme directions are invisible at the interface (det ~ 0)")
    m_inv = np.array([[m2[1, 1], -m2[0, 1]], [-m2[1, 0], m2[0, 0]]]) / det

    t = np.zeros((sys.n_vars, 2))
    t[0, 0] = 1.0
    t[1, 1] = 1.0
    t[2:, :] = g @ m_inv
    a2 = sys.a @ t
    norms = np.abs(a2).max(axis=1)
    zero = norms <= 1e-12
    if np.any(zero & (sys.b < -1e-9)):
        raise InfeasibleSystem("restriction produced a contradictory row")
    flat = LinearSystem(a2[~zero], sys.b[~zero], ("dP", "dQ"))
    poly = polygon_from_system(flat).translate((base.pcc_p, base.pcc_q))
    return ForResult(method="gsk", polygon=poly,
                     base_pcc=(base.pcc_p, base.pcc_q),
                     wall_time_s=max(time.perf_counter() - t0, 1e-9))


def minkowski_for(net: RadialNetwork,
                  units: Sequence[DerUnit] | None = None,
                  k_cap: int = 12,
                  margins: MarginSet | None = None) -> ForResult:
    """Sum the unit capability polygons, ignoring the network entirely."""
    t0 = time.perf_counter()
    units = _effective_units(net, units, margins)
    if not units:
        raise BadParameter("the capability sum needs at least one unit")
    base = base_operating_point(net, units)
    polys = []
    for unit in units:
        rows = capability_halfplanes(unit, k_cap)
        a = np.array([hp.normal for hp in rows])
        b = np.array([hp.offset for hp in rows])
        polys.append(polygon_from_system(LinearSystem(a, b, ("dp", "dq"))))
    poly = minkowski_sum(polys).translate((base.pcc_p, base.pcc_q))
    return ForResult(method="minkowski", polygon=poly,
                     base_pcc=(base.pcc_p, base.pcc_q),
                     wall_time_s=max(time.perf_counter() - t0, 1e-9))


# --- Monte Carlo reference -----------------------------------------------------

def _sample_capability(unit: DerUnit, n: int, rng: np.random.Generator
                       ) -> tuple[np.ndarray, np.ndarray]:
    """Uniform draws from the exact (quadratic) capability set of one unit."""
    s = unit.s_max
    p_lo = max(unit.p_lower, -s)
    p_hi = min(unit.p_upper, s)
    if p_hi < p_lo - 1e-12:
        raise UnitError(f"unit {unit.index}: empty capability set")
    tan_t = None
    if unit.kind == PV and unit.pf_min > 0.0:
        tan_t = math.tan(math.acos(unit.pf_min))

    if p_hi - p_lo <= 1e-15:
        # degenerate active range: sample the remaining q segment directly
        p_val = min(max(0.5 * (p_lo + p_hi), p_lo), p_hi)
        q_half = math.sqrt(max(s * s - p_val * p_val, 0.0))
        if tan_t is not None:
            q_half = min(q_half, tan_t * max(p_val, 0.0))
        p = np.full(n, p_val)
        if q_half <= 1e-15:
            return p, np.zeros(n)
        return p, rng.uniform(-q_half, q_half, n)

    p_out = np.empty(n)
    q_out = np.empty(n)
    have = 0
    for _ in range(64):
        if have >= n:
            break
        need = n - have
        m = max(4 * need, 1024)
        p = rng.uniform(p_lo, p_hi, m)
        q = rng.uniform(-s, s, m)
        ok = p * p + q * q <= s * s
        if tan_t is not None:
            ok &= np.abs(q) <= tan_t * p
        idx = np.flatnonzero(ok)[:need]
        p_out[have:have + idx.size] = p[idx]
        q_out[have:have + idx.size] = q[idx]
        have += idx.size
    if have < n:
        raise NoFeasibleSamples(
            f"unit {unit.index}: capability set has vanishing area")
    return p_out, q_out


def monte_carlo_for(net: RadialNetwork,
                    units: Sequence[DerUnit] | None = None,
                    n_samples: int = 100_000,
                    seed: int = 0,
                    margins: MarginSet | None = None,
                    chunk: int = 25_000) -> ForResult:
    """Nonlinear reference: sample dispatches, solve, keep limit-respecting
    interface flows, take their hull.

    Each unit draws from its own generator stream keyed by (seed, unit
    index), so the result does not depend on unit processing order. The
    batched power-flow solve runs in column chunks to bound memory.
    """
    t0 = time.perf_counter()
    if n_samples < 1:
        raise BadParameter(f"n_samples must be >= 1, got {n_samples}")
    if seed < 0:
        raise BadParameter("seed must be a nonnegative integer")
    units = _effective_units(net, units, margins)
    base = base_operating_point(net, units)

    n = net.n
    p_inj = np.repeat(-net.load_p[:, None], n_samples, axis=1)
    q_inj = np.repeat(-net.load_q[:, None], n_samples, axis=1)
    for unit in units:
        rng = np.random.default_rng([int(seed), int(unit.index)])
        p_u, q_u = _sample_capability(unit, n_samples, rng)
        p_inj[unit.node - 1] += p_u
        q_inj[unit.node - 1] += q_u

    i_max = np.array([br.i_max for br in net.branches])
    points = []
    for lo in range(0, n_samples, chunk):
        hi = min(lo + chunk, n_samples)
        v, i_br, pcc, conv = solve_power_flow_batch(
            net, p_inj[:, lo:hi], q_inj[:, lo:hi])
        v_mag = np.abs(v)
        ok = conv.copy()
        ok &= np.all((v_mag >= net.v_min) & (v_mag <= net.v_max), axis=0)
        ok &= np.all(np.abs(i_br) <= i_max[:, None], axis=0)
        if np.any(ok):
            points.append(np.column_stack([pcc[ok].real, pcc[ok].imag]))
    if not points:
        raise NoFeasibleSamples(
            "no sampled dispatch satisfied the operating limits")
    samples = np.vstack(points)
    poly = Polygon2D.from_points(samples)
    return ForResult(method="monte_carlo", polygon=poly,
                     base_pcc=(base.pcc_p, base.pcc_q),
                     wall_time_s=max(time.perf_counter() - t0, 1e-9),
                     samples=samples)


# --- comparison harness ---------------------------------------------------------

@dataclass(frozen=True)
class MetricsRow:
    method: str
    area_pu2: float
    fill_factor: float
    error: float
    wall_time_ms: float


@dataclass(frozen=True)
class MetricsTable:
    """Per-method region metrics against one reference region."""

    reference: str
    rows: tuple[MetricsRow, ...]

    def to_dict(self, include_timing: bool = False) -> dict:
        return {
            "reference": self.reference,
            "rows": [
                {
                    "method": r.method,
                    "area_pu2": r.area_pu2,
                    "fill_factor": r.fill_factor,
                    "error": r.error,
                    "wall_time_ms": r.wall_time_ms if include_timing else None,
                }
                for r in self.rows
            ],
        }

    def render(self, include_timing: bool = True) -> str:
        head = ["method", "area [pu^2]", "fill", "overreach"]
        if include_timing:
            head.append("time [ms]")
        lines = []
        for r in self.rows:
            cells = [r.method, f"{r.area_pu2:.6f}", f"{r.fill_factor:.4f}",
                     f"{r.error:.4f}"]
            if include_timing:
                cells.append(f"{r.wall_time_ms:.1f}")
            lines.append(cells)
        widths = [max(len(head[c]), *(len(row[c]) for row in lines)) if lines
                  else len(head[c]) for c in range(len(head))]
        def fmt(cells):
            return "  ".join(c.ljust(widths[k]) if k == 0 else c.rjust(widths[k])
                             for k, c in enumerate(cells))
        out = [fmt(head), fmt(["-" * w for w in widths])]
        out.extend(fmt(row) for row in lines)
        out.append(f"reference: {self.reference}")
        return "\n".join(out)


def compare(results: Sequence[ForResult], reference: ForResult) -> MetricsTable:
    """Fill factor, overreach and area of each region against the reference."""
    if reference.polygon.is_degenerate:
        raise DegenerateReference(
            f"reference region ({reference.method}) has no area")
    rows = []
    for res in results:
        rows.append(MetricsRow(
            method=res.method,
            area_pu2=res.polygon.area,
            fill_factor=fill_factor(res.polygon, reference.polygon),
            error=approx_error(res.polygon, reference.polygon),
            wall_time_ms=res.wall_time_s * 1e3,
        ))
    return MetricsTable(reference=reference.method, rows=tuple(rows))
