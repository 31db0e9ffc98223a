from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from twinload.cost import (CostInputs, System, break_even, components, cost_report, efficiency_curve,
                           parse_overrides, perf_per_dollar, speedup, total_cost)
from twinload.metrics import FIELDS, SimStats, emit_stats

# published totals, whole dollars
PUBLISHED = {System.BASELINE: 3154, System.TL: 3963, System.NUMA: 8696, System.CLUSTER: 6308}


@pytest.mark.parametrize("system", list(System))
def test_totals_match_published_table(system):
    assert abs(total_cost(system) - PUBLISHED[system]) <= 1


def test_baseline_total_by_hand():
    assert total_cost(System.BASELINE) == Fraction(2 * 1166 + 8 * 175 + 1000, 3) + 252 + 1325
    assert isinstance(total_cost(System.TL), Fraction)
    assert sum(components(System.TL).values()) == total_cost(System.TL)


def test_zero_inputs_cost_nothing():
    zero = CostInputs(**{k: 0 for k in ("processor", "numa_processor", "memory", "board", "mec", "power", "other")})
    assert all(total_cost(s, zero) == 0 for s in System)


def test_tl_vs_numa_and_cluster_break_even():
    # recomputed from the rounded published totals
    ratio_oracle = (0.74 / 3963) / (2 * 0.76 / 8696)
    even_oracle = 0.74 * 6308 / (2 * 3963)
    ratio = perf_per_dollar(System.TL) / perf_per_dollar(System.NUMA)
    assert float(ratio) == pytest.approx(ratio_oracle, abs=1e-3)
    assert 1.06 <= ratio <= 1.08
    even = break_even(System.CLUSTER)
    assert float(even) == pytest.approx(even_oracle, abs=1e-3)
    assert Fraction(58, 100) <= even <= Fraction(60, 100)
    assert perf_per_dollar(System.CLUSTER, c=even) == 1
    with pytest.raises(ValueError):
        break_even(System.TL)


def test_speedups():
    assert speedup(System.TL) == Fraction(74, 100)
    assert speedup(System.NUMA, c=Fraction(1, 2)) == Fraction(76, 100)
    assert speedup(System.CLUSTER, c=Fraction(1, 2)) == 1
    assert perf_per_dollar(System.TL) == 1


@settings(max_examples=50, deadline=None)
@given(st.fractions(min_value=Fraction(1, 100), max_value=100), st.fractions(min_value=0, max_value=1))
def test_x_cancels(x, c):
    base, scaled = CostInputs(x=x), CostInputs(x=2 * x)
    # the baseline is the reference x is measured against, so only the extensions are compared
    for s in (System.TL, System.NUMA, System.CLUSTER):
        assert perf_per_dollar(s, base, c) == perf_per_dollar(s, scaled, c)


def test_overrides():
    cheap = CostInputs().with_overrides(parse_overrides(["mec=0"]))
    # eight MECs over three years
    assert total_cost(System.TL) - total_cost(System.TL, cheap) == Fraction(800, 3)
    with pytest.raises(KeyError):
        CostInputs().with_overrides({"gold": 1})
    with pytest.raises(ValueError):
        CostInputs(memory=-1)
    with pytest.raises(ValueError):
        CostInputs(years=0)


def test_curve_and_report():
    curve = efficiency_curve(steps=4)
    assert [c for c, _, _ in curve] == [0, Fraction(1, 4), Fraction(1, 2), Fraction(3, 4), 1]
    assert all(a <= b for (_, a, _), (_, b, _) in zip(curve, curve[1:]))
    text = cost_report(steps=4)
    assert "$3,154.33" in text and "c,numa,cluster" in text
    assert text == cost_report(steps=4)


def test_empty_stats_row_is_all_zero():
    header, row = emit_stats(SimStats()).splitlines()
    assert header.split(",") == FIELDS
    assert all(v in ("", "0", "0.0") for v in row.split(","))


def test_emit_formats():
    runs = [SimStats(mechanism="tl-ooo", completed_ops=3, elapsed_ns=1.5), SimStats(mechanism="ideal")]
    csv_text = emit_stats(runs, extra=[{"latency_ns": 0}, {"latency_ns": 15}])
    lines = csv_text.splitlines()
    assert lines[0].startswith("latency_ns,mechanism,") and lines[1].startswith("0,tl-ooo,3,1.5,")
    assert emit_stats(runs) == emit_stats(list(runs))
    table = emit_stats(runs, fmt="table")
    assert table.splitlines()[0].split()[:2] == ["mechanism", "completed_ops"]
    with pytest.raises(ValueError):
        emit_stats(runs, fmt="xml")
    with pytest.raises(ValueError):
        emit_stats(runs, extra=[{}])
