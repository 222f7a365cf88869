"""Operating-point sensitivity model and linear constraint assembly.

Builds the inequality description of network-feasible injection shifts:
x = (dP, dQ, dp_1..dp_nc, dq_1..dq_nc), where dP/dQ are the interface
power deviations and dp_i/dq_i the unit deviations, all per unit and
generation-positive. Quadratic limits (apparent power, branch current)
are replaced by inscribed polygons, so the assembled region is an inner
approximation: everything it admits is feasible for the exact limits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import (
    BadParameter,
    BadSegmentCount,
    BaseViolation,
    DimensionMismatch,
    InfeasibleBase,
)
from .network import (
    BESS,
    DG,
    PV,
    DerUnit,
    OperatingPoint,
    RadialNetwork,
    SweepMatrices,
)
from .polytope import LinearSystem

BASE_TOL = 1e-9


@dataclass(frozen=True)
class HalfPlane:
    """normal . (p, q) <= offset in one unit's own injection plane."""

    normal: tuple[float, float]
    offset: float

    def __post_init__(self):
        if math.hypot(*self.normal) <= 1e-12:
            raise BadParameter("half-plane normal must be nonzero")


@dataclass(frozen=True)
class SensitivityModel:
    """Linear response of currents, voltages, and interface power to unit
    injection shifts (dp_1..dp_nc, dq_1..dq_nc), taken at `base`.

    di_map:  (n, 2nc) complex, branch current shift per unit shift
    dv_map:  (n, 2nc) complex, bus voltage shift
    di0_map: (2nc,) complex, interface current shift
    dpq_map: (2, 2nc) real, interface (dP, dQ) shift
    """

    di_map: np.ndarray
    dv_map: np.ndarray
    di0_map: np.ndarray
    dpq_map: np.ndarray
    base: OperatingPoint

    @property
    def n_units(self) -> int:
        return self.di_map.shape[1] // 2

    @property
    def n_x(self) -> int:
        return 2 + self.di_map.shape[1]


def placement_matrix(n: int, units: Sequence[DerUnit]) -> np.ndarray:
    """(2n, 2nc) selector mapping unit deviations to bus-level (dP, dQ).

    Bus rows are 1..n in position 0..n-1, P block then Q block; unit
    columns are p_1..p_nc then q_1..q_nc. Units sharing a node add up.
    """
    nc = len(units)
    c_g = np.zeros((2 * n, 2 * nc))
    for col, unit in enumerate(units):
        if not 1 <= unit.node <= n:
            raise BadParameter(
                f"unit {unit.index} sits at bus {unit.node}, outside 1..{n}")
        c_g[unit.node - 1, col] += 1.0
        c_g[n + unit.node - 1, nc + col] += 1.0
    return c_g


def build_sensitivity(m: SweepMatrices, base: OperatingPoint,
                      placement: Sequence[DerUnit]) -> SensitivityModel:
    """Superposition response maps around `base`.

    The sweep matrices must be built at the base voltages so the injection
    current sensitivities are taken at the operating point.
    """
    n = m.bibc.shape[0]
    if base.v.shape != (n,):
        raise DimensionMismatch(
            f"operating point has {base.v.shape[0]} buses, matrices have {n}")
    inj = m.pici() @ placement_matrix(n, placement)   # (n, 2nc) complex
    di_map = m.bibc @ inj
    dv_map = -m.dlf @ inj
    di0_map = m.bibc[list(m.root_rows)].sum(axis=0) @ inj
    s_row = m.slack_v * np.conj(di0_map)
    dpq_map = np.vstack([np.real(s_row), np.imag(s_row)])
    return SensitivityModel(di_map=di_map, dv_map=dv_map, di0_map=di0_map,
                            dpq_map=dpq_map, base=base)


# --------------------------------------------------------------------------
# inscribed polygons


def inscribe_disc(radius: float, segments: int,
                  arc: tuple[float, float] | None = None) -> list[HalfPlane]:
    """Chord rows of the polygon inscribed in a disc (or a disc sector).

    Full circle: the regular `segments`-gon with a vertex at angle 0 and
    apothem radius*cos(pi/k). With `arc` = (start, end), the chords span
    only that angular window; together with the caller's own radial rows
    they bound the inscribed sector polygon. Inner approximation always:
    any point satisfying every returned row (and lying in the arc wedge)
    has norm <= radius.
    """
    if radius <= 0:
        raise BadParameter(f"disc radius must be positive, got {radius}")
    if arc is None:
        if segments < 3:
            raise BadSegmentCount(
                f"a full circle needs >= 3 segments, got {segments}")
        start, span = 0.0, 2.0 * math.pi
    else:
        if segments < 1:
            raise BadSegmentCount(
                f"an arc needs >= 1 segment, got {segments}")
        start, end = arc
        span = end - start
        if not 0.0 < span <= 2.0 * math.pi + 1e-12:
            raise BadParameter(f"arc span {span} outside (0, 2*pi]")
    half = span / (2.0 * segments)
    apothem = radius * math.cos(half)
    rows = []
    for j in range(segments):
        mid = start + (2 * j + 1) * half
        rows.append(HalfPlane((math.cos(mid), math.sin(mid)), apothem))
    return rows


def capability_halfplanes(unit: DerUnit, k: int) -> list[HalfPlane]:
    """One unit's feasible injection set as rows over (dp_i, dq_i).

    PV: 0 <= p <= p_upper, inscribed arc chords of the s_max disc over the
    power-factor wedge, and the two wedge rows |q| <= p tan(acos(pf_min)).
    A PV with pf_min = 0 has no wedge; the chords then cover the half disc.
    BESS: p_lower <= p <= p_upper plus the full inscribed s_max polygon.
    DG: p >= p_lower plus the full inscribed s_max polygon.

    Row offsets are shifted so the rows read over deviations from the
    unit's initial point. Raises InfeasibleBase when the initial point
    violates any row (the assembled system must admit x = 0).
    """
    rows: list[HalfPlane] = []
    if unit.kind == PV:
        rows.append(HalfPlane((1.0, 0.0), unit.p_upper))
        rows.append(HalfPlane((-1.0, 0.0), 0.0))
        if unit.pf_min > 0.0:
            alpha = math.acos(min(1.0, unit.pf_min))
            slope = math.tan(alpha)
            rows.append(HalfPlane((-slope, 1.0), 0.0))    # q <= p tan
            rows.append(HalfPlane((-slope, -1.0), 0.0))   # -q <= p tan
        else:
            alpha = 0.5 * math.pi
        rows.extend(inscribe_disc(unit.s_max, k, arc=(-alpha, alpha)))
    elif unit.kind == BESS:
        rows.append(HalfPlane((1.0, 0.0), unit.p_upper))
        rows.append(HalfPlane((-1.0, 0.0), -unit.p_lower))
        rows.extend(inscribe_disc(unit.s_max, k))
    elif unit.kind == DG:
        rows.append(HalfPlane((-1.0, 0.0), -unit.p_lower))
        rows.extend(inscribe_disc(unit.s_max, k))
    else:
        raise BadParameter(f"unknown unit kind {unit.kind!r}")

    shifted = []
    for hp in rows:
        off = hp.offset - (hp.normal[0] * unit.p_init
                           + hp.normal[1] * unit.q_init)
        if off < -BASE_TOL:
            raise InfeasibleBase(
                f"unit {unit.index} ({unit.kind}) initial point "
                f"({unit.p_init}, {unit.q_init}) violates its capability "
                f"row by {-off:.3e}")
        shifted.append(HalfPlane(hp.normal, off))
    return shifted


def _embed(coeff_y: np.ndarray, n_x: int) -> np.ndarray:
    """Row over (dp.., dq..) lifted into x = (dP, dQ, dp.., dq..)."""
    row = np.zeros(n_x)
    row[2:] = coeff_y
    return row


def current_constraint_rows(s: SensitivityModel, branch: int,
                            i_init: complex, i_max: float, k: int
                            ) -> tuple[np.ndarray, np.ndarray]:
    """Thermal limit of one branch as k rows over x.

    The exact constraint is |i_init + dI| <= i_max, a disc for dI centered
    at -i_init. The inscribed k-gon is rotated so one vertex lines up with
    the direction of i_init: that keeps the base point x = 0 inside the
    polygon for any |i_init| <= i_max, and the headroom along the loading
    direction stays exactly i_max - |i_init|.
    """
    mag = abs(i_init)
    if mag > i_max + BASE_TOL:
        raise BaseViolation(
            f"branch {branch} already over its limit: |I| = {mag:.6g} "
            f"> {i_max:.6g}")
    if k < 3:
        raise BadSegmentCount(f"current polygon needs >= 3 segments, got {k}")
    theta = float(np.angle(i_init)) if mag > 0 else 0.0
    apothem = i_max * math.cos(math.pi / k)
    w = s.di_map[branch]
    re_w, im_w = np.real(w), np.imag(w)
    center = (-i_init.real, -i_init.imag)
    a = np.zeros((k, s.n_x))
    b = np.zeros(k)
    for j in range(k):
        ang = theta + (2 * j + 1) * math.pi / k
        nx, ny = math.cos(ang), math.sin(ang)
        a[j] = _embed(nx * re_w + ny * im_w, s.n_x)
        b[j] = apothem + nx * center[0] + ny * center[1]
    return a, b


def voltage_constraint_rows(s: SensitivityModel, bus: int, v_init: complex,
                            v_min: float, v_max: float
                            ) -> tuple[np.ndarray, np.ndarray]:
    """Band on the real part of one bus voltage as 2 rows over x."""
    re0 = v_init.real
    if not v_min - BASE_TOL <= re0 <= v_max + BASE_TOL:
        raise BaseViolation(
            f"bus {bus} base voltage Re(v) = {re0:.6g} outside "
            f"[{v_min}, {v_max}]")
    coeff = np.real(s.dv_map[bus - 1])
    a = np.vstack([_embed(coeff, s.n_x), _embed(-coeff, s.n_x)])
    b = np.array([v_max - re0, re0 - v_min])
    return a, b


# --------------------------------------------------------------------------
# assembly


def variable_labels(units: Sequence[DerUnit]) -> tuple[str, ...]:
    return tuple(["dP", "dQ"]
                 + [f"dp{u.index + 1}" for u in units]
                 + [f"dq{u.index + 1}" for u in units])


def assemble_system(net: RadialNetwork, s: SensitivityModel,
                    units: Sequence[DerUnit] | None = None,
                    k_cap: int = 12, k_cur: int = 8) -> LinearSystem:
    """Full inequality system over x = (dP, dQ, dp.., dq..).

    Row order is deterministic: interface coupling pairs, capability rows
    unit by unit, current rows branch by branch, voltage rows bus by bus.
    The coupling rows encode dP = dpq_map[0] . y and dQ = dpq_map[1] . y as
    opposing inequality pairs. All-zero rows (for example current rows of
    a branch no unit can influence) are dropped; a zero row with negative
    offset would mean a builder emitted an infeasible tautology and is
    rejected outright.
    """
    if units is None:
        units = net.ders
    units = list(units)
    nc = len(units)
    if s.n_units != nc:
        raise DimensionMismatch(
            f"sensitivity model covers {s.n_units} units, got {nc}")
    n_x = 2 + 2 * nc
    rows: list[np.ndarray] = []
    offs: list[float] = []

    for plane, coeff in ((0, s.dpq_map[0]), (1, s.dpq_map[1])):
        row = np.zeros(n_x)
        row[plane] = 1.0
        row[2:] = -coeff
        rows.append(row)
        offs.append(0.0)
        rows.append(-row)
        offs.append(0.0)

    for u_pos, unit in enumerate(units):
        for hp in capability_halfplanes(unit, k_cap):
            row = np.zeros(n_x)
            row[2 + u_pos] = hp.normal[0]
            row[2 + nc + u_pos] = hp.normal[1]
            rows.append(row)
            offs.append(hp.offset)

    for br in range(net.n):
        i_lim = net.branches[br].i_max
        if not np.isfinite(i_lim):
            continue
        a, b = current_constraint_rows(s, br, complex(s.base.i[br]),
                                       float(i_lim), k_cur)
        rows.extend(a)
        offs.extend(b)

    for bus in range(1, net.n + 1):
        a, b = voltage_constraint_rows(s, bus, complex(s.base.v[bus - 1]),
                                       net.v_min, net.v_max)
        rows.extend(a)
        offs.extend(b)

    a_full = np.array(rows)
    b_full = np.array(offs)
    nz = np.abs(a_full).max(axis=1) > 1e-14
    if np.any(~nz & (b_full < -BASE_TOL)):
        raise InfeasibleBase("assembly produced a contradictory zero row")
    return LinearSystem(a_full[nz], b_full[nz], variable_labels(units))
