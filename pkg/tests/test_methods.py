"""Pipeline tests: the four region methods against each other and against
hand-computable toy feeders.

The 2-bus near-lossless feeder is the workhorse: there the interface map is
the identity, so the projected region must equal the capability geometry
exactly and every cross-method claim has a closed-form answer.
"""

import dataclasses
import json
import math

import numpy as np
import pytest

from flexmap.errors import (
    BadParameter,
    DegenerateReference,
    DimensionMismatch,
    NoFeasibleSamples,
    ParseError,
    SingularCoupling,
)
from flexmap.linearization import capability_halfplanes
from flexmap.methods import (
    ForResult,
    GskScheme,
    MetricsTable,
    capacity_scheme,
    compare,
    fme_for,
    gsk_for,
    load_gsk_scheme,
    minkowski_for,
    monte_carlo_for,
)
from flexmap.network import (
    BESS,
    DG,
    PV,
    DerUnit,
    load_network,
)
from flexmap.polytope import (
    LinearSystem,
    Polygon2D,
    fill_factor,
    hausdorff,
    intersect,
    polygon_from_system,
)


def write_net(tmp_path, text, name="net.yaml"):
    p = tmp_path / name
    p.write_text(text)
    return load_network(p)


def lossless_bess_net(tmp_path, load_kw=0.0):
    # r, x tiny: interface map is the identity to ~1e-6
    return write_net(tmp_path, f"""
base: {{s_kva: 1000.0, v_kv: 1.0}}
buses:
  - {{id: 0}}
  - {{id: 1, p_kw: {load_kw}}}
branches:
  - {{from: 0, to: 1, r_ohm: 1.0e-06, x_ohm: 1.0e-06}}
ders:
  - {{node: 1, kind: BESS, s_max_kva: 60.0, p_upper_kw: 50.0}}
""")


def loaded_multi_unit_net(tmp_path):
    return write_net(tmp_path, """
base: {s_kva: 1000.0, v_kv: 1.0}
buses:
  - {id: 0}
  - {id: 1, p_kw: 40.0, q_kvar: 15.0}
  - {id: 2, p_kw: 30.0, q_kvar: 10.0}
  - {id: 3, p_kw: 25.0, q_kvar: 10.0}
branches:
  - {from: 0, to: 1, r_ohm: 0.01, x_ohm: 0.02, i_max_a: 500.0}
  - {from: 1, to: 2, r_ohm: 0.012, x_ohm: 0.022, i_max_a: 400.0}
  - {from: 2, to: 3, r_ohm: 0.015, x_ohm: 0.025, i_max_a: 300.0}
ders:
  - {node: 2, kind: BESS, s_max_kva: 60.0, p_upper_kw: 50.0}
  - {node: 3, kind: PV, s_max_kva: 40.0, p_upper_kw: 38.0, pf_min: 0.9,
     p_init_kw: 10.0}
  - {node: 1, kind: DG, s_max_kva: 80.0, p_lower_kw: 10.0, p_init_kw: 30.0}
""")


def capability_polygon(unit, k_cap=12):
    rows = capability_halfplanes(unit, k_cap)
    a = np.array([hp.normal for hp in rows])
    b = np.array([hp.offset for hp in rows])
    return polygon_from_system(LinearSystem(a, b, ("dp", "dq")))


def assert_contained(inner, outer, tol=1e-6):
    assert hausdorff(intersect(inner, outer), inner) <= tol


# --------------------------------------------------------------------------


class TestFmeFor:
    def test_no_ders_gives_point_region_at_base_flow(self, tmp_path):
        net = write_net(tmp_path, """
base: {s_kva: 1000.0, v_kv: 1.0}
buses:
  - {id: 0}
  - {id: 1, p_kw: 100.0, q_kvar: 30.0}
branches:
  - {from: 0, to: 1, r_ohm: 0.01, x_ohm: 0.02}
ders: []
""")
        res = fme_for(net)
        assert res.polygon.is_degenerate
        v = res.polygon.vertices[0]
        assert v[0] == pytest.approx(res.base_pcc[0], abs=1e-12)
        assert v[1] == pytest.approx(res.base_pcc[1], abs=1e-12)
        assert res.base_pcc[0] < 0  # importing feeder

    def test_lossless_single_bess_equals_capability_image(self, tmp_path):
        net = lossless_bess_net(tmp_path, load_kw=50.0)
        res = fme_for(net)
        want = capability_polygon(net.ders[0]).translate(res.base_pcc)
        assert hausdorff(res.polygon, want) <= 1e-4
        assert res.report is not None
        assert res.wall_time_s > 0

    def test_margins_equal_pretightened_units(self, tmp_path):
        from flexmap.uncertainty import MarginSet, apply_margins
        net = loaded_multi_unit_net(tmp_path)
        ms = MarginSet(bounds={1: 0.020}, method="quantile", epsilon=0.1)
        direct = fme_for(net, margins=ms)
        pre = fme_for(net, units=apply_margins(net.ders, ms))
        assert np.array_equal(direct.polygon.vertices, pre.polygon.vertices)


class TestGskFor:
    def test_single_unit_matches_fme(self, tmp_path):
        net = lossless_bess_net(tmp_path, load_kw=30.0)
        a = fme_for(net)
        b = gsk_for(net)
        assert hausdorff(a.polygon, b.polygon) <= 1e-6

    def test_single_unit_matches_fme_on_loaded_feeder(self, tmp_path):
        net = write_net(tmp_path, """
base: {s_kva: 1000.0, v_kv: 1.0}
buses:
  - {id: 0}
  - {id: 1, p_kw: 60.0, q_kvar: 20.0}
branches:
  - {from: 0, to: 1, r_ohm: 0.02, x_ohm: 0.04, i_max_a: 300.0}
ders:
  - {node: 1, kind: BESS, s_max_kva: 60.0, p_upper_kw: 50.0}
""")
        a = fme_for(net)
        b = gsk_for(net)
        assert hausdorff(a.polygon, b.polygon) <= 1e-6

    def test_split_pair_matches_doubled_unit(self, tmp_path):
        shared = """
base: {s_kva: 1000.0, v_kv: 1.0}
buses:
  - {id: 0}
  - {id: 1, p_kw: 20.0}
branches:
  - {from: 0, to: 1, r_ohm: 0.01, x_ohm: 0.02}
ders:
"""
        pair = write_net(tmp_path, shared + """
  - {node: 1, kind: BESS, s_max_kva: 30.0, p_upper_kw: 25.0}
  - {node: 1, kind: BESS, s_max_kva: 30.0, p_upper_kw: 25.0}
""", name="pair.yaml")
        single = write_net(tmp_path, shared + """
  - {node: 1, kind: BESS, s_max_kva: 60.0, p_upper_kw: 50.0}
""", name="single.yaml")
        a = gsk_for(pair, scheme=GskScheme(g_p=(0.5, 0.5), g_q=(0.5, 0.5)))
        b = gsk_for(single)
        assert hausdorff(a.polygon, b.polygon) <= 1e-9

    def test_contained_in_fme_region(self, tmp_path):
        net = loaded_multi_unit_net(tmp_path)
        full = fme_for(net)
        restricted = gsk_for(net)
        assert_contained(restricted.polygon, full.polygon)
        assert restricted.polygon.area < full.polygon.area

    def test_scheme_length_mismatch(self, tmp_path):
        net = loaded_multi_unit_net(tmp_path)
        with pytest.raises(DimensionMismatch):
            gsk_for(net, scheme=GskScheme(g_p=(1.0,), g_q=(1.0,)))

    def test_singular_coupling_detected(self, tmp_path, monkeypatch):
        net = lossless_bess_net(tmp_path)
        import flexmap.methods as methods_mod
        real = methods_mod._linearized_system

        def doctored(net_, units, k_cap, k_cur):
            base, model, sys = real(net_, units, k_cap, k_cur)
            blind = dataclasses.replace(
                model, dpq_map=np.array([[1.0, 0.0], [1.0, 0.0]]))
            return base, blind, sys

        monkeypatch.setattr(methods_mod, "_linearized_system", doctored)
        with pytest.raises(SingularCoupling):
            gsk_for(net)


class TestSchemes:
    def test_capacity_proportions(self):
        u1 = DerUnit(index=0, node=1, kind=BESS, s_max=0.03,
                     p_upper=0.01, p_lower=-0.01)   # span 0.02
        u2 = DerUnit(index=1, node=2, kind=DG, s_max=0.09,
                     p_upper=0.07, p_lower=0.01)    # span 0.06
        sch = capacity_scheme((u1, u2))
        assert sch.g_p == pytest.approx((0.25, 0.75), abs=1e-15)
        assert sch.g_q == pytest.approx((0.25, 0.75), abs=1e-15)

    def test_zero_span_falls_back_to_uniform(self):
        u = DerUnit(index=0, node=1, kind=PV, s_max=0.04,
                    p_upper=0.0, p_lower=0.0, pf_min=0.9)
        sch = capacity_scheme((u, u))
        assert sch.g_p == (0.5, 0.5)

    def test_scheme_validation(self):
        with pytest.raises(BadParameter):
            GskScheme(g_p=(0.4, 0.4), g_q=(0.5, 0.5))
        with pytest.raises(BadParameter):
            GskScheme(g_p=(-0.1, 1.1), g_q=(0.5, 0.5))
        with pytest.raises(DimensionMismatch):
            GskScheme(g_p=(1.0,), g_q=(0.5, 0.5))

    def test_load_scheme_normalises(self, tmp_path):
        f = tmp_path / "scheme.yaml"
        f.write_text("g_p: [2.0, 6.0]\ng_q: [1.0, 1.0]\n")
        sch = load_gsk_scheme(f, 2)
        assert sch.g_p == pytest.approx((0.25, 0.75), abs=1e-15)
        assert sch.g_q == (0.5, 0.5)

    def test_load_scheme_errors(self, tmp_path):
        f = tmp_path / "scheme.yaml"
        f.write_text("g_p: [1.0]\ng_q: [1.0]\n")
        with pytest.raises(DimensionMismatch):
            load_gsk_scheme(f, 2)
        f.write_text("g_p: [1.0, -1.0]\ng_q: [1.0, 1.0]\n")
        with pytest.raises(ParseError):
            load_gsk_scheme(f, 2)
        f.write_text("g_p: [1.0, 1.0]\n")
        with pytest.raises(ParseError):
            load_gsk_scheme(f, 2)
        with pytest.raises(ParseError):
            load_gsk_scheme(tmp_path / "absent.yaml", 2)


class TestMinkowskiFor:
    def test_single_unit_is_its_capability_polygon(self, tmp_path):
        net = lossless_bess_net(tmp_path, load_kw=50.0)
        res = minkowski_for(net)
        want = capability_polygon(net.ders[0]).translate(res.base_pcc)
        assert hausdorff(res.polygon, want) <= 1e-12

    def test_two_identical_diamonds_double(self, tmp_path):
        net = write_net(tmp_path, """
base: {s_kva: 1000.0, v_kv: 1.0}
buses: [{id: 0}, {id: 1}]
branches:
  - {from: 0, to: 1, r_ohm: 1.0e-06, x_ohm: 1.0e-06}
ders:
  - {node: 1, kind: BESS, s_max_kva: 1000.0}
  - {node: 1, kind: BESS, s_max_kva: 1000.0}
""")
        res = minkowski_for(net, k_cap=4)
        # k = 4 inscribed polygon has vertices on the axes, so each unit
        # contributes a unit diamond and the sum is the doubled diamond
        want = Polygon2D.from_points(
            [(2.0, 0.0), (0.0, 2.0), (-2.0, 0.0), (0.0, -2.0)]
        ).translate(res.base_pcc)
        assert hausdorff(res.polygon, want) <= 1e-9

    def test_contains_fme_region_on_loaded_feeder(self, tmp_path):
        net = loaded_multi_unit_net(tmp_path)
        outer = minkowski_for(net)
        inner = fme_for(net)
        # this feeder has wide voltage/current limits, so the network rows
        # barely cut the region and losses amplify PCC moves: the exact
        # projection can exceed the network-blind sum by a few percent
        assert inner.polygon.area <= outer.polygon.area * 1.05
        assert fill_factor(inner.polygon, outer.polygon) >= 0.98

    def test_needs_units(self, tmp_path):
        net = write_net(tmp_path, """
base: {s_kva: 1000.0, v_kv: 1.0}
buses: [{id: 0}, {id: 1}]
branches: [{from: 0, to: 1, r_ohm: 0.01, x_ohm: 0.02}]
ders: []
""")
        with pytest.raises(BadParameter):
            minkowski_for(net)


class TestMonteCarloFor:
    def test_toy_agreement_with_fme(self, tmp_path):
        net = lossless_bess_net(tmp_path, load_kw=20.0)
        # many capability segments, otherwise the inscribed polygon sits
        # visibly inside the true disc the sampler draws from
        lin = fme_for(net, k_cap=128)
        mc = monte_carlo_for(net, n_samples=20_000, seed=1)
        assert mc.samples is not None and mc.samples.shape[1] == 2
        # near-lossless feeder: hull converges to the linear region from
        # inside and never overreaches it beyond the segment sagitta
        assert fill_factor(mc.polygon, lin.polygon) >= 0.97
        assert mc.polygon.area <= lin.polygon.area * 1.001
        inside = lin.polygon.contains_many(mc.samples, tol=1e-7)
        assert inside.mean() >= 0.998

    def test_zero_capacity_collapses_to_base_point(self, tmp_path):
        net = lossless_bess_net(tmp_path, load_kw=35.0)
        husk = DerUnit(index=0, node=1, kind=BESS, s_max=1e-12,
                       p_upper=0.0, p_lower=0.0)
        res = monte_carlo_for(net, units=(husk,), n_samples=500, seed=3)
        assert res.polygon.is_degenerate
        v = res.polygon.vertices[0]
        assert v[0] == pytest.approx(res.base_pcc[0], abs=1e-9)
        assert v[1] == pytest.approx(res.base_pcc[1], abs=1e-9)

    def test_deterministic_per_seed(self, tmp_path):
        net = loaded_multi_unit_net(tmp_path)
        a = monte_carlo_for(net, n_samples=2_000, seed=7)
        b = monte_carlo_for(net, n_samples=2_000, seed=7)
        c = monte_carlo_for(net, n_samples=2_000, seed=8)
        assert np.array_equal(a.samples, b.samples)
        assert np.array_equal(a.polygon.vertices, b.polygon.vertices)
        assert not np.array_equal(a.samples, c.samples)

    def test_chunking_does_not_change_results(self, tmp_path):
        net = loaded_multi_unit_net(tmp_path)
        a = monte_carlo_for(net, n_samples=3_000, seed=5, chunk=512)
        b = monte_carlo_for(net, n_samples=3_000, seed=5, chunk=3_000)
        assert np.array_equal(a.samples, b.samples)

    def test_rejects_when_limits_rule_out_everything(self, tmp_path):
        net = write_net(tmp_path, """
base: {s_kva: 1000.0, v_kv: 1.0, v_min_pu: 0.999, v_max_pu: 1.001}
buses:
  - {id: 0}
  - {id: 1, p_kw: 400.0, q_kvar: 100.0}
branches:
  - {from: 0, to: 1, r_ohm: 0.05, x_ohm: 0.08}
ders:
  - {node: 1, kind: BESS, s_max_kva: 10.0}
""")
        # the load alone drags the voltage far below the sliver band
        with pytest.raises(NoFeasibleSamples):
            monte_carlo_for(net, n_samples=200, seed=0)

    def test_parameter_validation(self, tmp_path):
        net = lossless_bess_net(tmp_path)
        with pytest.raises(BadParameter):
            monte_carlo_for(net, n_samples=0)
        with pytest.raises(BadParameter):
            monte_carlo_for(net, seed=-4)

    def test_curtailed_pv_sampling_is_exact(self, tmp_path):
        net = lossless_bess_net(tmp_path)
        pinned = DerUnit(index=0, node=1, kind=PV, s_max=0.04,
                         p_upper=0.0, p_lower=0.0, pf_min=0.9)
        res = monte_carlo_for(net, units=(pinned,), n_samples=400, seed=2)
        assert res.polygon.is_degenerate


# --------------------------------------------------------------------------


class TestCompare:
    def square_result(self, method, half=1.0, wall=0.01):
        poly = Polygon2D.from_points(
            [(half, half), (-half, half), (-half, -half), (half, -half)])
        return ForResult(method=method, polygon=poly, base_pcc=(0.0, 0.0),
                         wall_time_s=wall)

    def test_self_comparison(self):
        ref = self.square_result("monte_carlo")
        table = compare([ref], ref)
        row = table.rows[0]
        assert row.fill_factor == pytest.approx(1.0, abs=1e-12)
        assert row.error == pytest.approx(0.0, abs=1e-12)
        assert row.area_pu2 == pytest.approx(4.0, abs=1e-12)

    def test_orderings_visible_in_rows(self):
        ref = self.square_result("monte_carlo")
        small = self.square_result("gsk", half=0.5)
        big = self.square_result("minkowski", half=2.0)
        table = compare([small, big], ref)
        by = {r.method: r for r in table.rows}
        assert by["gsk"].fill_factor == pytest.approx(0.25, abs=1e-12)
        assert by["gsk"].error == 0.0
        assert by["minkowski"].fill_factor == pytest.approx(1.0, abs=1e-12)
        # own area 16, overlap 4: error is the share of own area overreaching
        assert by["minkowski"].error == pytest.approx(0.75, abs=1e-12)

    def test_degenerate_reference_rejected(self):
        ref = ForResult(method="monte_carlo",
                        polygon=Polygon2D.from_points([(0.0, 0.0)]),
                        base_pcc=(0.0, 0.0), wall_time_s=0.01)
        with pytest.raises(DegenerateReference):
            compare([self.square_result("fme")], ref)

    def test_dict_hides_timing_by_default(self):
        ref = self.square_result("monte_carlo")
        table = compare([self.square_result("fme", half=0.9)], ref)
        d = table.to_dict()
        assert d["rows"][0]["wall_time_ms"] is None
        timed = table.to_dict(include_timing=True)
        assert timed["rows"][0]["wall_time_ms"] == pytest.approx(10.0)
        json.dumps(d)  # must be serialisable as-is

    def test_render_is_aligned_and_deterministic(self):
        ref = self.square_result("monte_carlo")
        table = compare([self.square_result("fme", half=0.9), ref], ref)
        text = table.render()
        lines = text.splitlines()
        assert len({len(l) for l in lines[:-1]}) == 1
        assert text == table.render()
        assert "fme" in text and "reference: monte_carlo" in text


class TestCrossMethodOrdering:
    """The headline comparison on a loaded feeder, desk scale."""

    def test_region_ordering(self, tmp_path):
        net = loaded_multi_unit_net(tmp_path)
        full = fme_for(net)
        restricted = gsk_for(net)
        blind = minkowski_for(net)
        assert restricted.polygon.area < full.polygon.area
        # wide limits on this feeder: losses can push the exact projection
        # slightly past the network-blind sum (see TestMinkowskiFor)
        assert full.polygon.area < blind.polygon.area * 1.05
        assert_contained(restricted.polygon, full.polygon)

    def test_metrics_table_end_to_end(self, tmp_path):
        net = loaded_multi_unit_net(tmp_path)
        mc = monte_carlo_for(net, n_samples=8_000, seed=11)
        table = compare(
            [fme_for(net), gsk_for(net), minkowski_for(net), mc], mc)
        by = {r.method: r for r in table.rows}
        assert by["gsk"].fill_factor <= by["fme"].fill_factor + 1e-12
        assert by["monte_carlo"].fill_factor == pytest.approx(1.0, abs=1e-12)
        assert by["minkowski"].area_pu2 * 1.05 >= by["fme"].area_pu2
