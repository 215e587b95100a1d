"""Energy objective and constraint checks for one placement under one draw.

Traffic model: consecutive chain positions on different hosts exchange the
sender's bandwidth demand, which loads both hosts' access links and adds
both links' latencies to the chain latency. Colocated neighbours cost
nothing on the network.

Plain Python loops on purpose: chains are short and this runs inside the
brute-force oracle, where numpy call overhead dominates.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

from .domain import Placement, Scenario, ServiceChain

FAMILIES = ("cpu", "gpu", "bandwidth", "latency", "disk", "sla")
PLACEMENT_FAMILIES = FAMILIES[:5]

# usage may exceed capacity by float noise without counting as a violation
TOL = 1e-9


@dataclass(frozen=True)
class RealizedDemand:
    """Multiplicative uncertainty factors, one entry per chain position."""

    f_c: tuple[float, ...]
    f_g: tuple[float, ...]
    f_d: tuple[float, ...]
    f_q: tuple[float, ...]

    def __post_init__(self):
        m = len(self.f_c)
        if not (len(self.f_g) == len(self.f_d) == len(self.f_q) == m):
            raise ValueError("all factor vectors must have the chain length")
        for v in (*self.f_c, *self.f_g, *self.f_d, *self.f_q):
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"uncertainty factors must be finite and >= 0, got {v}")

    def __len__(self) -> int:
        return len(self.f_c)

    @classmethod
    def ones(cls, m: int) -> "RealizedDemand":
        one = (1.0,) * m
        return cls(one, one, one, one)

    def with_margin(self, margin: float) -> "RealizedDemand":
        """Scale the resource factors (not completion) by ``margin``."""
        if margin == 1.0:
            return self
        return RealizedDemand(tuple(v * margin for v in self.f_c),
                              tuple(v * margin for v in self.f_g),
                              tuple(v * margin for v in self.f_d), self.f_q)


@dataclass(frozen=True)
class ActivationState:
    active_hosts: tuple[bool, ...]
    active_links: tuple[bool, ...]


@dataclass(frozen=True)
class ConstraintReport:
    feasible: bool
    violated: tuple[str, ...]
    slack: Mapping[str, float]  # capacity - usage; worst case across hosts/links

    def feasible_on(self, families: Sequence[str]) -> bool:
        return not any(f in self.violated for f in families)


def _check(placement: Placement, chain: ServiceChain, n_hosts: int | None = None) -> None:
    if len(chain.model_ids) == 0:
        raise ValueError("empty chain")
    placement.validate(n_hosts if n_hosts is not None else 1 << 30, len(chain.model_ids))


def link_loads(placement: Placement, chain: ServiceChain, scenario: Scenario) -> list[float]:
    _check(placement, chain, scenario.n_hosts)
    loads = [0.0] * scenario.n_hosts
    hosts = placement.host_of
    for k in range(len(hosts) - 1):
        h, nxt = hosts[k], hosts[k + 1]
        if h != nxt:
            b = scenario.catalog[chain.model_ids[k]].bandwidth_demand
            loads[h] += b
            loads[nxt] += b
    return loads


def link_load(placement: Placement, chain: ServiceChain, host: int,
              scenario: Scenario) -> float:
    """Traffic (Mbps) on the access link of ``host``."""
    return link_loads(placement, chain, scenario)[host]


def derive_activation(placement: Placement, chain: ServiceChain,
                      scenario: Scenario) -> ActivationState:
    loads = link_loads(placement, chain, scenario)
    used = set(placement.host_of)
    return ActivationState(tuple(h in used for h in range(scenario.n_hosts)),
                           tuple(v > 0 for v in loads))


def host_usage(placement: Placement, chain: ServiceChain, realized: RealizedDemand,
               scenario: Scenario) -> tuple[list[float], list[float], list[float]]:
    """Realized (cpu, gpu, disk) usage per host."""
    n = scenario.n_hosts
    cpu, gpu, disk = [0.0] * n, [0.0] * n, [0.0] * n
    for k, (a, h) in enumerate(zip(chain.model_ids, placement.host_of)):
        prof = scenario.catalog[a]
        cpu[h] += prof.nominal_cpu * realized.f_c[k]
        gpu[h] += prof.nominal_gpu * realized.f_g[k]
        disk[h] += prof.nominal_disk * realized.f_d[k]
    return cpu, gpu, disk


def chain_latency(placement: Placement, chain: ServiceChain, scenario: Scenario) -> float:
    total = sum(scenario.catalog[a].compute_latency for a in chain.model_ids)
    hosts = placement.host_of
    for k in range(len(hosts) - 1):
        if hosts[k] != hosts[k + 1]:
            total += scenario.hosts[hosts[k]].link_latency + scenario.hosts[hosts[k + 1]].link_latency
    return total


def mean_completion(chain: ServiceChain, realized: RealizedDemand, scenario: Scenario) -> float:
    tot = sum(scenario.catalog[a].nominal_completion * realized.f_q[k]
              for k, a in enumerate(chain.model_ids))
    return tot / len(chain.model_ids)


def energy_terms(placement: Placement, chain: ServiceChain, realized: RealizedDemand,
                 scenario: Scenario) -> tuple[float, float, float]:
    """(compute, idle, network) watts; they sum to :func:`energy`."""
    _check(placement, chain, scenario.n_hosts)
    compute = 0.0
    for k, (a, h) in enumerate(zip(chain.model_ids, placement.host_of)):
        prof, host = scenario.catalog[a], scenario.hosts[h]
        compute += (host.cpu_unit_power * prof.nominal_cpu * realized.f_c[k]
                    + host.gpu_unit_power * prof.nominal_gpu * realized.f_g[k])
    idle = sum(scenario.hosts[h].idle_power for h in set(placement.host_of))
    network = scenario.net_unit_power * sum(link_loads(placement, chain, scenario))
    return compute, idle, network


def energy(placement: Placement, chain: ServiceChain, realized: RealizedDemand,
           scenario: Scenario) -> float:
    c, i, n = energy_terms(placement, chain, realized, scenario)
    return c + i + n


def check_constraints(placement: Placement, chain: ServiceChain, realized: RealizedDemand,
                      scenario: Scenario) -> ConstraintReport:
    _check(placement, chain, scenario.n_hosts)
    if len(realized) != len(chain.model_ids):
        raise ValueError("realized demand length does not match the chain")
    cpu, gpu, disk = host_usage(placement, chain, realized, scenario)
    loads = link_loads(placement, chain, scenario)
    hosts = scenario.hosts
    slack = {
        "cpu": min(h.cpu_capacity - u for h, u in zip(hosts, cpu)),
        "gpu": min(h.gpu_capacity - u for h, u in zip(hosts, gpu)),
        "bandwidth": min(h.link_bandwidth - u for h, u in zip(hosts, loads)),
        "latency": chain.latency_budget - chain_latency(placement, chain, scenario),
        "disk": min(h.disk_capacity - u for h, u in zip(hosts, disk)),
        "sla": mean_completion(chain, realized, scenario) - chain.sla_completion,
    }
    violated = tuple(f for f in FAMILIES if slack[f] < -TOL)
    return ConstraintReport(not violated, violated, slack)


def acceptance_ratio(reports: Sequence[ConstraintReport | bool]) -> float:
    """Fraction of feasible entries; plain booleans count as reports."""
    if not reports:
        raise ValueError("acceptance_ratio needs at least one report")
    ok = sum(1 for r in reports if (r.feasible if isinstance(r, ConstraintReport) else bool(r)))
    return ok / len(reports)
