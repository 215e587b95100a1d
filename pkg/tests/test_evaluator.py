import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aiplace.domain import Placement, make_chain
from aiplace.evaluator import (FAMILIES, PLACEMENT_FAMILIES, RealizedDemand, acceptance_ratio,
                               chain_latency, check_constraints, derive_activation, energy,
                               energy_terms, link_load, link_loads)
from aiplace.oracle import random_factors, random_scenario, reference_energy, reference_violations
from reference import traditional_model


def ones(m):
    return RealizedDemand.ones(m)


def test_single_model_energy(hosts10):
    ch = make_chain(hosts10, [0])
    assert energy(Placement((0,)), ch, ones(1), hosts10) == 1700.0


def test_split_pair_adds_network_power(hosts10):
    ch = make_chain(hosts10, [0, 0])
    together = energy(Placement((0, 0)), ch, ones(2), hosts10)
    apart = energy(Placement((0, 1)), ch, ones(2), hosts10)
    assert together == 2 * 1600 + 100
    assert apart == 2 * 1600 + 200 + 0.1 * 200


def test_link_load_examples(hosts10):
    ch = make_chain(hosts10, [0, 1])
    assert link_load(Placement((0, 1)), ch, 0, hosts10) == 100
    assert link_load(Placement((0, 1)), ch, 1, hosts10) == 100
    assert link_loads(Placement((0, 0)), ch, hosts10) == [0.0] * 10
    assert link_loads(Placement((3,)), make_chain(hosts10, [2]), hosts10) == [0.0] * 10


def test_activation(hosts10):
    ch = make_chain(hosts10, [0, 1, 2])
    act = derive_activation(Placement((0, 0, 0)), ch, hosts10)
    assert sum(act.active_hosts) == 1 and not any(act.active_links)
    act = derive_activation(Placement((0, 1)), make_chain(hosts10, [0, 1]), hosts10)
    assert act.active_hosts[:2] == (True, True) and act.active_links[:2] == (True, True)
    with pytest.raises(ValueError):
        derive_activation(Placement((0,)), ch, hosts10)


def test_cpu_slack_on_small_host(hosts10):
    rep = check_constraints(Placement((9,)), make_chain(hosts10, [0]), ones(1), hosts10)
    assert rep.slack["cpu"] == 2.0
    assert rep.feasible_on(("cpu", "gpu", "disk"))
    rep = check_constraints(Placement((9, 9)), make_chain(hosts10, [0, 0]), ones(2), hosts10)
    assert "cpu" in rep.violated and rep.slack["cpu"] == -2.0


def test_zero_demand_fits_anywhere(hosts10):
    m = 6
    f = RealizedDemand((0.0,) * m, (0.0,) * m, (0.0,) * m, (2.0,) * m)
    rep = check_constraints(Placement((9,) * m), make_chain(hosts10, [0] * m), f, hosts10)
    assert rep.feasible_on(("cpu", "gpu", "disk", "sla"))


def test_sla_is_chain_mean(hosts10):
    ch = make_chain(hosts10, [0, 1])
    # completions 80 * 1.1875 = 95 and 80 * 1.0 = 80 average to 87.5 >= 85
    f = RealizedDemand((1.0, 1.0), (1.0, 1.0), (1.0, 1.0), (1.1875, 1.0))
    rep = check_constraints(Placement((0, 0)), ch, f, hosts10)
    assert rep.slack["sla"] == pytest.approx(2.5)
    assert "sla" not in rep.violated
    assert "sla" in check_constraints(Placement((0, 0)), ch, ones(2), hosts10).violated


def test_latency_counts_both_links(hosts10):
    ch = make_chain(hosts10, [3, 4])
    assert chain_latency(Placement((2, 0)), ch, hosts10) == 20 + 20 + 10 + 30
    assert chain_latency(Placement((2, 2)), ch, hosts10) == 40


def test_acceptance_ratio():
    assert acceptance_ratio([True] * 50 + [False] * 50) == 0.5
    assert acceptance_ratio([True] * 3) == 1.0
    assert acceptance_ratio([False] * 3) == 0.0
    with pytest.raises(ValueError):
        acceptance_ratio([])


def test_factor_validation():
    with pytest.raises(ValueError):
        RealizedDemand((1.0,), (1.0,), (1.0,), (-0.1,))
    with pytest.raises(ValueError):
        RealizedDemand((1.0,), (1.0, 1.0), (1.0,), (1.0,))
    with pytest.raises(ValueError):
        RealizedDemand((float("nan"),), (1.0,), (1.0,), (1.0,))


def test_rejects_bad_placements(hosts10):
    ch = make_chain(hosts10, [0, 1])
    with pytest.raises(ValueError):
        energy(Placement((0,)), ch, ones(2), hosts10)
    with pytest.raises(ValueError):
        check_constraints(Placement((0, 10)), ch, ones(2), hosts10)
    with pytest.raises(ValueError):
        check_constraints(Placement((0, 1)), ch, ones(3), hosts10)


def _instances(count, seed, unit=True):
    rng = np.random.default_rng(seed)
    for _ in range(count):
        s = random_scenario(rng, int(rng.integers(1, 5)))
        m = int(rng.integers(1, 7))
        ch = make_chain(s, rng.integers(0, len(s.catalog), size=m))
        pl = Placement(tuple(int(h) for h in rng.integers(0, s.n_hosts, size=m)))
        yield s, ch, pl, (ones(m) if unit else random_factors(rng, m))


def test_unit_factors_match_traditional_model():
    for s, ch, pl, f in _instances(100, 11):
        e_ref, bad = traditional_model(s, ch.model_ids, pl.host_of, ch.latency_budget)
        assert abs(energy(pl, ch, f, s) - e_ref) < 1e-9
        got = set(check_constraints(pl, ch, f, s).violated) & set(PLACEMENT_FAMILIES)
        assert got == bad


def test_agrees_with_vectorized_reference():
    for s, ch, pl, f in _instances(300, 12, unit=False):
        assert energy(pl, ch, f, s) == pytest.approx(reference_energy(pl, ch, f, s), abs=1e-9)
        assert check_constraints(pl, ch, f, s).violated == reference_violations(pl, ch, f, s)


def test_slack_sign_matches_violation():
    for s, ch, pl, f in _instances(200, 13, unit=False):
        rep = check_constraints(pl, ch, f, s)
        assert rep.feasible == (not rep.violated)
        for fam in FAMILIES:
            assert (rep.slack[fam] < -1e-9) == (fam in rep.violated)


@st.composite
def instances(draw):
    seed = draw(st.integers(0, 2 ** 32 - 1))
    rng = np.random.default_rng(seed)
    s = random_scenario(rng, draw(st.integers(1, 4)))
    m = draw(st.integers(1, 6))
    ids = draw(st.lists(st.integers(0, len(s.catalog) - 1), min_size=m, max_size=m))
    hosts = draw(st.lists(st.integers(0, s.n_hosts - 1), min_size=m, max_size=m))
    return s, make_chain(s, ids), Placement(tuple(hosts)), random_factors(rng, m)


@settings(max_examples=150, deadline=None)
@given(instances())
def test_energy_decomposition(inst):
    s, ch, pl, f = inst
    c, i, n = energy_terms(pl, ch, f, s)
    assert c >= 0 and i >= 0 and n >= 0
    assert energy(pl, ch, f, s) == c + i + n
    assert n == pytest.approx(s.net_unit_power * sum(link_loads(pl, ch, s)))
    assert i == sum(s.hosts[h].idle_power for h in set(pl.host_of))


@settings(max_examples=150, deadline=None)
@given(instances(), st.data())
def test_adding_a_model_never_increases_slack(inst, data):
    s, ch, pl, f = inst
    h = data.draw(st.integers(0, s.n_hosts - 1))
    a = data.draw(st.integers(0, len(s.catalog) - 1))
    bigger = make_chain(s, ch.model_ids + (a,))
    pl2 = Placement(pl.host_of + (h,))
    f2 = RealizedDemand(f.f_c + (1.0,), f.f_g + (1.0,), f.f_d + (1.0,), f.f_q + (1.0,))
    before = check_constraints(pl, ch, f, s).slack
    after = check_constraints(pl2, bigger, f2, s).slack
    for fam in ("cpu", "gpu", "disk"):
        assert after[fam] <= before[fam] + 1e-12


@settings(max_examples=100, deadline=None)
@given(instances(), st.data())
def test_swapping_colocated_equal_neighbours_is_neutral(inst, data):
    s, ch, pl, f = inst
    m = len(ch.model_ids)
    if m < 2:
        return
    k = data.draw(st.integers(0, m - 2))
    ids = list(ch.model_ids)
    ids[k + 1] = ids[k]
    hosts = list(pl.host_of)
    hosts[k + 1] = hosts[k]
    ch1 = make_chain(s, ids)
    pl1 = Placement(tuple(hosts))
    swap = lambda t: t[:k] + (t[k + 1], t[k]) + t[k + 2:]  # noqa: E731
    f1 = RealizedDemand(f.f_c, f.f_g, f.f_d, f.f_q)
    f2 = RealizedDemand(swap(f.f_c), swap(f.f_g), swap(f.f_d), swap(f.f_q))
    e1, e2 = energy(pl1, ch1, f1, s), energy(pl1, ch1, f2, s)
    assert e1 == pytest.approx(e2, rel=1e-12)
    assert check_constraints(pl1, ch1, f1, s).violated == check_constraints(pl1, ch1, f2, s).violated
