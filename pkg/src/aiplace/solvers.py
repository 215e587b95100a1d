"""Non-neural baselines: first fit, branch and bound, exhaustive enumeration.

All three plan against ``planning_factors`` (nominal demand by default) and
report the plan's energy. By default they enforce only the placement-dependent
families (cpu, gpu, bandwidth, latency, disk): mean completion does not depend
on where models run, so a planner cannot act on it. ``plan_sla=True`` adds it.
"""
from __future__ import annotations

import itertools
import time
from dataclasses import dataclass

from .domain import Placement, Scenario, ServiceChain
from .evaluator import (FAMILIES, PLACEMENT_FAMILIES, TOL, RealizedDemand, check_constraints,
                        energy, mean_completion)

OPTIMAL, FEASIBLE, INFEASIBLE, TIMEOUT = "optimal", "feasible", "infeasible", "timeout"


@dataclass(frozen=True)
class SolveResult:
    placement: Placement | None
    objective: float | None
    status: str
    nodes_explored: int
    wall_time: float  # ms

    def __post_init__(self):
        if (self.placement is not None) != (self.status in (OPTIMAL, FEASIBLE)):
            raise ValueError(f"placement must be present iff status is optimal/feasible, got {self.status}")


def _factors(chain: ServiceChain, planning_factors: RealizedDemand | None,
             margin: float) -> RealizedDemand:
    f = RealizedDemand.ones(len(chain.model_ids)) if planning_factors is None else planning_factors
    if len(f) != len(chain.model_ids):
        raise ValueError("planning factors do not match the chain length")
    return f.with_margin(margin)


def _families(plan_sla: bool) -> tuple[str, ...]:
    return FAMILIES if plan_sla else PLACEMENT_FAMILIES


def _ms(t0: float) -> float:
    return (time.perf_counter() - t0) * 1000.0


def first_fit(chain: ServiceChain, scenario: Scenario, planning_factors: RealizedDemand | None = None,
              margin: float = 1.0, plan_sla: bool = False) -> SolveResult:
    """Each position goes to the lowest-index host with room left for it."""
    t0 = time.perf_counter()
    f = _factors(chain, planning_factors, margin)
    n = scenario.n_hosts
    cpu, gpu, disk = [0.0] * n, [0.0] * n, [0.0] * n
    hosts = []
    for k, a in enumerate(chain.model_ids):
        p = scenario.catalog[a]
        dc, dg, dd = p.nominal_cpu * f.f_c[k], p.nominal_gpu * f.f_g[k], p.nominal_disk * f.f_d[k]
        for h, spec in enumerate(scenario.hosts):
            if (cpu[h] + dc <= spec.cpu_capacity + TOL and gpu[h] + dg <= spec.gpu_capacity + TOL
                    and disk[h] + dd <= spec.disk_capacity + TOL):
                cpu[h] += dc
                gpu[h] += dg
                disk[h] += dd
                hosts.append(h)
                break
        else:
            return SolveResult(None, None, INFEASIBLE, k + 1, _ms(t0))
    pl = Placement(tuple(hosts))
    rep = check_constraints(pl, chain, f, scenario)
    if not rep.feasible_on(_families(plan_sla)):
        return SolveResult(None, None, INFEASIBLE, len(hosts), _ms(t0))
    return SolveResult(pl, energy(pl, chain, f, scenario), FEASIBLE, len(hosts), _ms(t0))


def tree_size(m: int, n: int) -> int:
    """Partial assignments of depth 1..m: what unpruned branch and bound visits."""
    return sum(n ** k for k in range(1, m + 1))


def branch_and_bound(chain: ServiceChain, scenario: Scenario,
                     planning_factors: RealizedDemand | None = None, node_limit: int = 200_000,
                     margin: float = 1.0, plan_sla: bool = False, prune: bool = True,
                     bound_offset: float = 0.0) -> SolveResult:
    """Depth-first search in chain order, cheapest-increment host first.

    Prunes partial assignments that already break a capacity, bandwidth or
    latency limit, and those whose energy plus the cheapest possible compute
    energy of the remaining positions cannot beat the incumbent.
    ``bound_offset`` inflates that bound (a mutation hook for oracle tests).
    Hitting ``node_limit`` returns the incumbent as ``feasible``, or
    ``timeout`` when there is none.
    """
    t0 = time.perf_counter()
    f = _factors(chain, planning_factors, margin)
    ids = chain.model_ids
    m, n = len(ids), scenario.n_hosts
    cat, hs = scenario.catalog, scenario.hosts
    if plan_sla and mean_completion(chain, f, scenario) < chain.sla_completion - TOL:
        return SolveResult(None, None, INFEASIBLE, 0, _ms(t0))

    dem = [(cat[a].nominal_cpu * f.f_c[k], cat[a].nominal_gpu * f.f_g[k],
            cat[a].nominal_disk * f.f_d[k]) for k, a in enumerate(ids)]
    comp = [[hs[h].cpu_unit_power * dem[k][0] + hs[h].gpu_unit_power * dem[k][1] for h in range(n)]
            for k in range(m)]
    # suffix[k] = cheapest compute energy for positions k..m-1
    suffix = [0.0] * (m + 1)
    for k in range(m - 1, -1, -1):
        suffix[k] = suffix[k + 1] + min(comp[k])
    bw = [cat[a].bandwidth_demand for a in ids]
    lat_floor = sum(cat[a].compute_latency for a in ids)
    w_net = scenario.net_unit_power

    cpu, gpu, disk, load = [0.0] * n, [0.0] * n, [0.0] * n, [0.0] * n
    count = [0] * n
    assign = [0] * m
    best: list = [None, float("inf")]
    nodes = 0
    stopped = False

    def dfs(k: int, e_cur: float, lat: float) -> None:
        nonlocal nodes, stopped
        prev = assign[k - 1] if k else -1
        dc, dg, dd = dem[k]
        options = []
        for h in range(n):
            inc = comp[k][h]
            if count[h] == 0:
                inc += hs[h].idle_power
            if k and h != prev:
                inc += w_net * 2.0 * bw[k - 1]
            options.append((inc, h))
        options.sort()
        for inc, h in options:
            if nodes >= node_limit:
                stopped = True
                return
            nodes += 1
            hop = k > 0 and h != prev
            new_lat = lat + (hs[prev].link_latency + hs[h].link_latency if hop else 0.0)
            if prune:
                if (cpu[h] + dc > hs[h].cpu_capacity + TOL or gpu[h] + dg > hs[h].gpu_capacity + TOL
                        or disk[h] + dd > hs[h].disk_capacity + TOL
                        or new_lat > chain.latency_budget + TOL):
                    continue
                if hop and (load[prev] + bw[k - 1] > hs[prev].link_bandwidth + TOL
                            or load[h] + bw[k - 1] > hs[h].link_bandwidth + TOL):
                    continue
                if e_cur + inc + suffix[k + 1] + bound_offset >= best[1] - 1e-9:
                    continue
            cpu[h] += dc
            gpu[h] += dg
            disk[h] += dd
            count[h] += 1
            if hop:
                load[prev] += bw[k - 1]
                load[h] += bw[k - 1]
            assign[k] = h
            if k + 1 == m:
                _leaf()
            else:
                dfs(k + 1, e_cur + inc, new_lat)
            cpu[h] -= dc
            gpu[h] -= dg
            disk[h] -= dd
            count[h] -= 1
            if hop:
                load[prev] -= bw[k - 1]
                load[h] -= bw[k - 1]
            if stopped:
                return

    families = _families(plan_sla)

    def _leaf() -> None:
        pl = Placement(tuple(assign))
        if not prune and not check_constraints(pl, chain, f, scenario).feasible_on(families):
            return
        # report the evaluator's energy so objectives compare exactly with brute force
        obj = energy(pl, chain, f, scenario)
        if obj < best[1] - 1e-9:
            best[0], best[1] = pl, obj

    dfs(0, 0.0, lat_floor)
    if best[0] is None:
        return SolveResult(None, None, TIMEOUT if stopped else INFEASIBLE, nodes, _ms(t0))
    return SolveResult(best[0], best[1], FEASIBLE if stopped else OPTIMAL, nodes, _ms(t0))


def brute_force(chain: ServiceChain, scenario: Scenario,
                planning_factors: RealizedDemand | None = None, max_placements: int = 10 ** 6,
                margin: float = 1.0, plan_sla: bool = False) -> SolveResult:
    """Evaluate every placement with the evaluator; ties go to the lexicographically smallest."""
    t0 = time.perf_counter()
    f = _factors(chain, planning_factors, margin)
    m, n = len(chain.model_ids), scenario.n_hosts
    if n ** m > max_placements:
        raise ValueError(f"{n}^{m} placements exceeds the enumeration limit {max_placements}")
    families = _families(plan_sla)
    best, best_e = None, float("inf")
    for hosts in itertools.product(range(n), repeat=m):
        pl = Placement(hosts)
        if not check_constraints(pl, chain, f, scenario).feasible_on(families):
            continue
        e = energy(pl, chain, f, scenario)
        if e < best_e:
            best, best_e = pl, e
    if best is None:
        return SolveResult(None, None, INFEASIBLE, n ** m, _ms(t0))
    return SolveResult(best, best_e, OPTIMAL, n ** m, _ms(t0))
