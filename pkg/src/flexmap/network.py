"""Radial network model and backward/forward-sweep power flow.

The network is a tree rooted at bus 0 (the transmission interface). All
quantities are stored per-unit against the document's (s_kva, v_kv) base.

Sign convention used throughout the library: bus injections are positive
into the network (generation positive), branch currents are the sums of
downstream injection currents, and the forward sweep computes
``v = slack_v - dlf @ i_inj``. Interface power is export-positive:
``pcc_p + j*pcc_q = slack_v * conj(root branch current + root injection)``.
The nonlinear solver iterates exactly this update, so the linear model and
the solved state share one convention.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
import yaml

from .errors import (
    DimensionMismatch,
    NonConvergence,
    ParseError,
    SingularVoltage,
    TopologyError,
    UnitError,
)

log = logging.getLogger(__name__)

DEFAULT_V_MIN = 0.9
DEFAULT_V_MAX = 1.1

PV = "PV"
BESS = "BESS"
DG = "DG"
DER_KINDS = (PV, BESS, DG)


@dataclass(frozen=True)
class Bus:
    id: int
    p_load: float  # p.u., consumption positive
    q_load: float


@dataclass(frozen=True)
class Branch:
    index: int
    from_bus: int  # parent (closer to root)
    to_bus: int    # child
    r: float       # p.u.
    x: float
    i_max: float   # p.u. magnitude limit

    @property
    def z(self) -> complex:
        return complex(self.r, self.x)


@dataclass(frozen=True)
class DerUnit:
    """One controllable resource with its linear box and disc parameters.

    p_upper/p_lower bound active power (PV irradiation cap, BESS +/- rating,
    DG minimum loading). s_max is the apparent-power radius, NOT squared.
    pf_min applies to PV only (0 disables the power-factor wedge).
    p_init/q_init are the setpoints at the linearization operating point.
    """

    index: int
    node: int
    kind: str
    s_max: float
    p_upper: float
    p_lower: float
    pf_min: float = 0.0
    p_init: float = 0.0
    q_init: float = 0.0


@dataclass(frozen=True)
class RadialNetwork:
    s_base_kva: float
    v_base_kv: float
    slack_v: complex
    v_min: float
    v_max: float
    buses: tuple[Bus, ...]        # index 0 is the slack bus
    branches: tuple[Branch, ...]  # one per non-slack bus, file order
    ders: tuple[DerUnit, ...]

    @property
    def n(self) -> int:
        """Number of non-slack buses (= number of branches)."""
        return len(self.branches)

    @property
    def load_p(self) -> np.ndarray:
        """Active loads of buses 1..n (vector position k = bus k+1)."""
        return np.array([b.p_load for b in self.buses[1:]])

    @property
    def load_q(self) -> np.ndarray:
        return np.array([b.q_load for b in self.buses[1:]])

    @property
    def i_max(self) -> np.ndarray:
        return np.array([br.i_max for br in self.branches])

    def parent_branch(self, bus_id: int) -> Branch:
        for br in self.branches:
            if br.to_bus == bus_id:
                return br
        raise TopologyError(f"bus {bus_id} has no parent branch")

    @property
    def root_branch_indices(self) -> tuple[int, ...]:
        return tuple(br.index for br in self.branches if br.from_bus == 0)


@dataclass(frozen=True)
class SweepMatrices:
    """Path-incidence and impedance operators at a linearization voltage.

    bibc[b, k] = 1 iff branch b lies on the path from the root to bus k+1.
    bcbv[k, b] = z_b iff branch b lies on that same path (else 0).
    dlf = bcbv @ bibc. v_bar is the linearization voltage of buses 1..n.
    """

    bibc: np.ndarray   # (n, n) float {0, 1}
    bcbv: np.ndarray   # (n, n) complex
    dlf: np.ndarray    # (n, n) complex
    v_bar: np.ndarray  # (n,) complex
    slack_v: complex
    root_rows: tuple[int, ...]  # branch indices incident to the root

    @property
    def n(self) -> int:
        return self.bibc.shape[0]

    def pici(self) -> np.ndarray:
        """(n, 2n) complex map from stacked (P, Q) injections to currents."""
        inv = 1.0 / np.conj(self.v_bar)
        return np.hstack([np.diag(inv), np.diag(-1j * inv)])

    def injection_currents(self, p_inj: np.ndarray, q_inj: np.ndarray) -> np.ndarray:
        return (p_inj - 1j * q_inj) / np.conj(self.v_bar)


@dataclass(frozen=True)
class OperatingPoint:
    """A solved network state; der_p/der_q are set by base_operating_point."""

    v: np.ndarray        # (n,) complex bus voltages (buses 1..n)
    i: np.ndarray        # (n,) complex branch currents
    pcc_p: float         # export-positive interface active power, p.u.
    pcc_q: float
    iterations: int
    der_p: np.ndarray | None = None
    der_q: np.ndarray | None = None


@dataclass(frozen=True)
class ViolationReport:
    voltage: tuple[tuple[int, float, float, float], ...]  # (bus, value, lo, hi)
    current: tuple[tuple[int, float, float], ...]         # (branch, value, i_max)

    @property
    def ok(self) -> bool:
        return not self.voltage and not self.current


# --------------------------------------------------------------------------
# parsing


def _require(mapping: dict, key: str, ctx: str):
    if key not in mapping:
        raise ParseError(f"{ctx}: missing required field '{key}'")
    return mapping[key]


def _reject_unknown(mapping: dict, allowed: frozenset, ctx: str):
    # a silently ignored key means a silently wrong model, so fail loudly
    unknown = set(mapping) - allowed
    if unknown:
        raise ParseError(f"{ctx}: unknown field(s) {sorted(unknown)}")


_BASE_KEYS = frozenset({"s_kva", "v_kv", "slack_v_pu", "v_min_pu", "v_max_pu"})
_BUS_KEYS = frozenset({"id", "p_kw", "q_kvar"})
_BRANCH_KEYS = frozenset({"from", "to", "r_ohm", "x_ohm", "i_max_a"})
_DER_KEYS = frozenset({"node", "kind", "s_max_kva", "p_upper_kw", "p_lower_kw",
                       "pf_min", "p_init_kw", "q_init_kvar"})


def load_network(path: str | Path) -> RadialNetwork:
    """Parse and validate a network document, normalizing to per-unit."""
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except FileNotFoundError:
        raise ParseError(f"network file not found: {path}")
    except yaml.YAMLError as exc:
        raise ParseError(f"{path}: not valid YAML: {exc}")
    if not isinstance(raw, dict):
        raise ParseError(f"{path}: top level must be a mapping")

    base = _require(raw, "base", str(path))
    _reject_unknown(base, _BASE_KEYS, "base")
    s_kva = float(_require(base, "s_kva", "base"))
    v_kv = float(_require(base, "v_kv", "base"))
    if s_kva <= 0 or v_kv <= 0:
        raise ParseError("base: s_kva and v_kv must be positive")
    slack_pu = float(base.get("slack_v_pu", 1.0))
    if slack_pu <= 0:
        raise ParseError("base: slack_v_pu must be positive")
    v_min = float(base.get("v_min_pu", DEFAULT_V_MIN))
    v_max = float(base.get("v_max_pu", DEFAULT_V_MAX))
    if not v_min < v_max:
        raise ParseError("base: v_min_pu must be below v_max_pu")

    z_base_ohm = (v_kv * 1e3) ** 2 / (s_kva * 1e3)
    i_base_a = (s_kva * 1e3) / (v_kv * 1e3)

    raw_buses = _require(raw, "buses", str(path))
    buses: list[Bus] = []
    seen_ids = set()
    for rec in raw_buses:
        _reject_unknown(rec, _BUS_KEYS, "buses")
        bid = int(_require(rec, "id", "buses"))
        if bid in seen_ids:
            raise ParseError(f"buses: duplicate id {bid}")
        seen_ids.add(bid)
        buses.append(Bus(
            id=bid,
            p_load=float(rec.get("p_kw", 0.0)) / s_kva,
            q_load=float(rec.get("q_kvar", 0.0)) / s_kva,
        ))
    buses.sort(key=lambda b: b.id)
    n_total = len(buses)
    if n_total < 2:
        raise ParseError("buses: need the slack bus plus at least one bus")
    if [b.id for b in buses] != list(range(n_total)):
        raise ParseError("buses: ids must be contiguous 0..n with 0 the slack")

    raw_branches = _require(raw, "branches", str(path))
    if len(raw_branches) != n_total - 1:
        raise TopologyError(
            f"expected {n_total - 1} branches for {n_total} buses, "
            f"got {len(raw_branches)}")

    edges = []
    for k, rec in enumerate(raw_branches):
        _reject_unknown(rec, _BRANCH_KEYS, f"branches[{k}]")
        f = int(_require(rec, "from", f"branches[{k}]"))
        t = int(_require(rec, "to", f"branches[{k}]"))
        if f == t:
            raise TopologyError(f"branches[{k}]: self loop at bus {f}")
        if f not in seen_ids or t not in seen_ids:
            raise TopologyError(f"branches[{k}]: unknown bus in ({f}, {t})")
        r = float(_require(rec, "r_ohm", f"branches[{k}]")) / z_base_ohm
        x = float(_require(rec, "x_ohm", f"branches[{k}]")) / z_base_ohm
        if abs(complex(r, x)) <= 0.0:
            raise ParseError(f"branches[{k}]: impedance magnitude must be > 0")
        i_max = float(rec.get("i_max_a", math.inf))
        if not i_max > 0:
            raise ParseError(f"branches[{k}]: i_max_a must be positive")
        edges.append((f, t, r, x, i_max / i_base_a if math.isfinite(i_max) else math.inf))

    # orient every branch parent->child by breadth-first search from the root
    adjacency: dict[int, list[int]] = {b.id: [] for b in buses}
    for k, (f, t, *_rest) in enumerate(edges):
        adjacency[f].append(k)
        adjacency[t].append(k)
    parent_of: dict[int, int] = {0: -1}
    order = [0]
    head = 0
    oriented: dict[int, tuple[int, int]] = {}
    while head < len(order):
        bus = order[head]
        head += 1
        for k in adjacency[bus]:
            f, t, *_rest = edges[k]
            other = t if f == bus else f
            if k in oriented:
                continue
            if other in parent_of:
                raise TopologyError(
                    f"branches: edge ({f}, {t}) closes a cycle at bus {other}")
            oriented[k] = (bus, other)
            parent_of[other] = k
            order.append(other)
    if len(order) != n_total:
        missing = sorted(seen_ids - set(order))
        raise TopologyError(f"buses {missing} are not connected to the root")

    branches = tuple(
        Branch(index=k, from_bus=oriented[k][0], to_bus=oriented[k][1],
               r=e[2], x=e[3], i_max=e[4])
        for k, e in enumerate(edges))

    ders: list[DerUnit] = []
    for j, rec in enumerate(raw.get("ders") or []):
        _reject_unknown(rec, _DER_KEYS, f"ders[{j}]")
        node = int(_require(rec, "node", f"ders[{j}]"))
        kind = str(_require(rec, "kind", f"ders[{j}]")).upper()
        if kind not in DER_KINDS:
            raise UnitError(f"ders[{j}]: unknown kind '{kind}'")
        if node == 0:
            raise UnitError(f"ders[{j}]: units at the slack bus are not supported")
        if node not in seen_ids:
            raise UnitError(f"ders[{j}]: unknown node {node}")
        s_max = float(_require(rec, "s_max_kva", f"ders[{j}]")) / s_kva
        if s_max <= 0:
            raise UnitError(f"ders[{j}]: s_max_kva must be positive")
        p_upper = float(rec.get("p_upper_kw", s_max * s_kva)) / s_kva
        if kind == BESS:
            p_lower = float(rec.get("p_lower_kw", -p_upper * s_kva)) / s_kva
        else:
            p_lower = float(rec.get("p_lower_kw", 0.0)) / s_kva
        if p_lower > p_upper:
            raise UnitError(f"ders[{j}]: p_lower_kw above p_upper_kw")
        pf_min = float(rec.get("pf_min", 0.0))
        if not 0.0 <= pf_min <= 1.0:
            raise UnitError(f"ders[{j}]: pf_min must lie in [0, 1]")
        p_init = float(rec.get("p_init_kw", min(max(0.0, p_lower * s_kva), p_upper * s_kva))) / s_kva
        q_init = float(rec.get("q_init_kvar", 0.0)) / s_kva
        ders.append(DerUnit(index=j, node=node, kind=kind, s_max=s_max,
                            p_upper=p_upper, p_lower=p_lower, pf_min=pf_min,
                            p_init=p_init, q_init=q_init))

    net = RadialNetwork(
        s_base_kva=s_kva, v_base_kv=v_kv, slack_v=complex(slack_pu, 0.0),
        v_min=v_min, v_max=v_max, buses=tuple(buses), branches=branches,
        ders=tuple(ders))
    log.debug("loaded %s: %d buses, %d branches, %d DER units",
              path.name, n_total, net.n, len(ders))
    return net


# --------------------------------------------------------------------------
# sweep matrices and power flow


def build_sweep_matrices(net: RadialNetwork, v_bar: np.ndarray | None = None) -> SweepMatrices:
    """Assemble path-incidence operators at the voltage point v_bar.

    v_bar defaults to a flat profile at the slack voltage. Entries of zero
    magnitude make injection currents undefined and are rejected.
    """
    n = net.n
    if v_bar is None:
        v_bar = np.full(n, net.slack_v, dtype=complex)
    v_bar = np.asarray(v_bar, dtype=complex)
    if v_bar.shape != (n,):
        raise DimensionMismatch(f"v_bar must have shape ({n},), got {v_bar.shape}")
    if np.any(np.abs(v_bar) == 0.0):
        raise SingularVoltage("v_bar contains a zero entry")

    parent = {br.to_bus: br for br in net.branches}
    bibc = np.zeros((n, n))
    for bus in range(1, n + 1):
        node = bus
        while node != 0:
            br = parent[node]
            bibc[br.index, bus - 1] = 1.0
            node = br.from_bus
    z = np.array([br.z for br in net.branches])
    bcbv = bibc.T * z[np.newaxis, :]
    dlf = bcbv @ bibc
    return SweepMatrices(bibc=bibc, bcbv=bcbv, dlf=dlf, v_bar=v_bar,
                         slack_v=net.slack_v,
                         root_rows=net.root_branch_indices)


def injections_from_der(net: RadialNetwork,
                        units: Sequence[DerUnit] | None = None,
                        p: np.ndarray | None = None,
                        q: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Net bus injections (buses 1..n) for DER setpoints over the loads.

    p/q default to each unit's stored setpoint. Injections are generation
    minus load, positive into the network.
    """
    units = net.ders if units is None else tuple(units)
    p = np.array([u.p_init for u in units]) if p is None else np.asarray(p, dtype=float)
    q = np.array([u.q_init for u in units]) if q is None else np.asarray(q, dtype=float)
    if p.shape != (len(units),) or q.shape != (len(units),):
        raise DimensionMismatch(
            f"setpoint vectors must have shape ({len(units)},)")
    p_inj = -net.load_p
    q_inj = -net.load_q
    for u, pu, qu in zip(units, p, q):
        p_inj[u.node - 1] += pu
        q_inj[u.node - 1] += qu
    return p_inj, q_inj


def bfs_iteration(m: SweepMatrices, p_inj: np.ndarray, q_inj: np.ndarray
                  ) -> tuple[np.ndarray, np.ndarray]:
    """One backward/forward sweep at the stored voltage point.

    Returns (v_new, i_branch). The update is v = slack - dlf @ i_inj with
    injection currents i_inj = (p - jq)/conj(v_bar).
    """
    p_inj = np.asarray(p_inj, dtype=float)
    q_inj = np.asarray(q_inj, dtype=float)
    if p_inj.shape != (m.n,) or q_inj.shape != (m.n,):
        raise DimensionMismatch(f"injection vectors must have shape ({m.n},)")
    i_inj = m.injection_currents(p_inj, q_inj)
    i_branch = m.bibc @ i_inj
    v_new = m.slack_v - m.dlf @ i_inj
    return v_new, i_branch


def _pcc_flow(net: RadialNetwork, m: SweepMatrices, i_branch: np.ndarray) -> complex:
    """Export-positive interface power from root branch + root injections."""
    bus0 = net.buses[0]
    i_root = i_branch[list(m.root_rows)].sum()
    s_inj0 = complex(-bus0.p_load, -bus0.q_load)
    i_inj0 = np.conj(s_inj0 / net.slack_v)
    return net.slack_v * np.conj(i_root + i_inj0)


def solve_power_flow(net: RadialNetwork, p_inj: np.ndarray, q_inj: np.ndarray,
                     tol: float = 1e-8, max_iter: int = 100) -> OperatingPoint:
    """Fixed-point sweep iteration until the voltage update stalls below tol."""
    n = net.n
    p_inj = np.asarray(p_inj, dtype=float)
    q_inj = np.asarray(q_inj, dtype=float)
    if p_inj.shape != (n,) or q_inj.shape != (n,):
        raise DimensionMismatch(f"injection vectors must have shape ({n},)")
    m = build_sweep_matrices(net)
    v = m.v_bar.copy()
    const = p_inj - 1j * q_inj
    for it in range(1, max_iter + 1):
        i_inj = const / np.conj(v)
        v_new = net.slack_v - m.dlf @ i_inj
        if not np.all(np.isfinite(v_new)):
            raise NonConvergence(
                f"voltage iterate became non-finite at iteration {it}")
        delta = float(np.max(np.abs(v_new - v)))
        v = v_new
        if delta <= tol:
            i_inj = const / np.conj(v)
            i_branch = m.bibc @ i_inj
            m_at = replace(m, v_bar=v)
            s = _pcc_flow(net, m_at, i_branch)
            return OperatingPoint(v=v, i=i_branch, pcc_p=s.real, pcc_q=s.imag,
                                  iterations=it)
    raise NonConvergence(f"power flow did not converge in {max_iter} iterations")


def solve_power_flow_batch(net: RadialNetwork, p_inj: np.ndarray, q_inj: np.ndarray,
                           tol: float = 1e-8, max_iter: int = 100,
                           v_start: np.ndarray | None = None
                           ) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized fixed-point solve of many injection columns at once.

    p_inj/q_inj have shape (n, N). Returns (v, i_branch, pcc, converged)
    where v and i_branch are (n, N) complex, pcc is (N,) complex and
    converged a boolean mask. Semantics per column match solve_power_flow;
    columns that diverge are reported unconverged instead of raising.
    """
    n = net.n
    p_inj = np.asarray(p_inj, dtype=float)
    q_inj = np.asarray(q_inj, dtype=float)
    if p_inj.ndim != 2 or p_inj.shape[0] != n or q_inj.shape != p_inj.shape:
        raise DimensionMismatch(f"batch injections must have shape ({n}, N)")
    n_cols = p_inj.shape[1]
    m = build_sweep_matrices(net)
    const = p_inj - 1j * q_inj
    if v_start is None:
        v = np.full((n, n_cols), net.slack_v, dtype=complex)
    else:
        v = np.repeat(np.asarray(v_start, dtype=complex)[:, None], n_cols, axis=1)
    active = np.ones(n_cols, dtype=bool)
    converged = np.zeros(n_cols, dtype=bool)
    for _ in range(max_iter):
        if not active.any():
            break
        idx = np.flatnonzero(active)
        i_inj = const[:, idx] / np.conj(v[:, idx])
        v_new = net.slack_v - m.dlf @ i_inj
        finite = np.all(np.isfinite(v_new), axis=0)
        delta = np.where(finite, np.max(np.abs(v_new - v[:, idx]), axis=0), np.inf)
        v[:, idx[finite]] = v_new[:, finite]
        done = finite & (delta <= tol)
        converged[idx[done]] = True
        active[idx[done]] = False
        active[idx[~finite]] = False
    i_inj = const / np.conj(v)
    i_branch = m.bibc @ i_inj
    bus0 = net.buses[0]
    i_inj0 = np.conj(complex(-bus0.p_load, -bus0.q_load) / net.slack_v)
    i_root = i_branch[list(m.root_rows), :].sum(axis=0)
    pcc = net.slack_v * np.conj(i_root + i_inj0)
    return v, i_branch, pcc, converged


def base_operating_point(net: RadialNetwork,
                         units: Sequence[DerUnit] | None = None) -> OperatingPoint:
    """Solve the network at the stored DER setpoints and attach them."""
    units = net.ders if units is None else tuple(units)
    p = np.array([u.p_init for u in units])
    q = np.array([u.q_init for u in units])
    p_inj, q_inj = injections_from_der(net, units, p, q)
    op = solve_power_flow(net, p_inj, q_inj)
    return replace(op, der_p=p, der_q=q)


def check_operating_limits(net: RadialNetwork, op: OperatingPoint,
                           use_exact: bool = True,
                           v_min: float | None = None,
                           v_max: float | None = None) -> ViolationReport:
    """List voltage/current limit violations of a solved state.

    use_exact checks |v|; otherwise the real part is checked, matching the
    linearized voltage rows.
    """
    lo = net.v_min if v_min is None else v_min
    hi = net.v_max if v_max is None else v_max
    level = np.abs(op.v) if use_exact else op.v.real
    voltage = tuple(
        (bus + 1, float(level[bus]), lo, hi)
        for bus in range(net.n)
        if level[bus] < lo or level[bus] > hi)
    mag = np.abs(op.i)
    current = tuple(
        (br.index, float(mag[br.index]), br.i_max)
        for br in net.branches
        if mag[br.index] > br.i_max)
    return ViolationReport(voltage=voltage, current=current)
