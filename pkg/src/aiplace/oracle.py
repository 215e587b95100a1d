"""Independent reference computations and the solver oracle suite.

``reference_*`` restate the objective and constraints in the binary-variable
form (x[k, h] = position k on host h) with numpy, sharing no code with the
evaluator, so the two can check each other.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .domain import AIModelProfile, HostSpec, Placement, Scenario, ServiceChain, make_chain
from .evaluator import FAMILIES, PLACEMENT_FAMILIES, RealizedDemand, check_constraints, energy
from .solvers import branch_and_bound, brute_force, first_fit, tree_size


def _arrays(placement: Placement, chain: ServiceChain, f: RealizedDemand, s: Scenario):
    m, n = len(chain.model_ids), s.n_hosts
    x = np.zeros((m, n))
    x[np.arange(m), list(placement.host_of)] = 1.0
    prof = [s.catalog[a] for a in chain.model_ids]
    c = np.array([p.nominal_cpu for p in prof]) * np.array(f.f_c)
    g = np.array([p.nominal_gpu for p in prof]) * np.array(f.f_g)
    d = np.array([p.nominal_disk for p in prof]) * np.array(f.f_d)
    b = np.array([p.bandwidth_demand for p in prof])
    # t[k] = 1 when positions k and k+1 sit on different hosts
    t = 1.0 - np.sum(x[:-1] * x[1:], axis=1)
    link = (t * b[:-1]) @ (x[:-1] + x[1:]) if m > 1 else np.zeros(n)
    return x, c, g, d, t, link, prof


def reference_energy(placement: Placement, chain: ServiceChain, f: RealizedDemand,
                     s: Scenario) -> float:
    x, c, g, _, _, link, _ = _arrays(placement, chain, f, s)
    wc = np.array([h.cpu_unit_power for h in s.hosts])
    wg = np.array([h.gpu_unit_power for h in s.hosts])
    we = np.array([h.idle_power for h in s.hosts])
    y = x.max(axis=0)
    return float(np.sum(x * (np.outer(c, wc) + np.outer(g, wg))) + y @ we
                 + s.net_unit_power * link.sum())


def reference_violations(placement: Placement, chain: ServiceChain, f: RealizedDemand,
                         s: Scenario, tol: float = 1e-9) -> tuple[str, ...]:
    x, c, g, d, t, link, prof = _arrays(placement, chain, f, s)
    cap = np.array([[h.cpu_capacity, h.gpu_capacity, h.disk_capacity, h.link_bandwidth]
                    for h in s.hosts])
    lat_link = np.array([h.link_latency for h in s.hosts])
    lat = sum(p.compute_latency for p in prof)
    if len(prof) > 1:
        lat += float(t @ ((x[:-1] + x[1:]) @ lat_link))
    q = np.mean([p.nominal_completion for p in prof] * np.array(f.f_q))
    bad = {
        "cpu": np.any(c @ x > cap[:, 0] + tol),
        "gpu": np.any(g @ x > cap[:, 1] + tol),
        "bandwidth": np.any(link > cap[:, 3] + tol),
        "latency": lat > chain.latency_budget + tol,
        "disk": np.any(d @ x > cap[:, 2] + tol),
        "sla": q < chain.sla_completion - tol,
    }
    return tuple(k for k in FAMILIES if bad[k])


def random_scenario(rng: np.random.Generator, n_hosts: int, n_models: int = 4) -> Scenario:
    """Small heterogeneous scenario; capacities tight enough that some chains do not fit."""
    hosts = tuple(HostSpec(
        h, float(rng.integers(2, 12)), float(rng.integers(2, 12)), float(rng.integers(2, 12)),
        float(rng.integers(50, 400)), float(rng.integers(5, 60)), float(rng.integers(0, 200)),
        float(rng.integers(50, 300)), float(rng.integers(50, 300))) for h in range(n_hosts))
    cat = tuple(AIModelProfile(
        a, float(rng.integers(1, 5)), float(rng.integers(1, 5)), float(rng.integers(1, 5)),
        float(rng.integers(10, 120)), float(rng.integers(10, 100)), float(rng.integers(70, 95)))
        for a in range(n_models))
    return Scenario(hosts, cat, net_unit_power=float(rng.choice([0.0, 0.1, 0.5])),
                    latency_slack=float(rng.choice([1.0, 1.5])), name="random")


def random_factors(rng: np.random.Generator, m: int) -> RealizedDemand:
    return RealizedDemand(*(tuple(float(v) for v in rng.uniform(0.8, 1.6, m)) for _ in range(4)))


def random_instance(rng: np.random.Generator, max_m: int = 6, max_n: int = 4,
                    scenario: Scenario | None = None):
    """(scenario, chain, planning factors or None) with n^m within enumeration reach."""
    s = scenario if scenario is not None else random_scenario(rng, int(rng.integers(1, max_n + 1)))
    m = int(rng.integers(1, max_m + 1))
    chain = make_chain(s, rng.integers(0, len(s.catalog), size=m))
    f = random_factors(rng, m) if rng.random() < 0.5 else None
    return s, chain, f


@dataclass
class OracleReport:
    trials: int
    mismatches: list[str] = field(default_factory=list)
    feasible: int = 0

    @property
    def passed(self) -> bool:
        return not self.mismatches


def check_instance(s: Scenario, chain: ServiceChain, f: RealizedDemand | None,
                   bound_offset: float = 0.0) -> tuple[list[str], bool]:
    """Mismatch descriptions for one instance (empty when all agree), and its feasibility."""
    out = []
    m, n = len(chain.model_ids), s.n_hosts
    bb = branch_and_bound(chain, s, f, bound_offset=bound_offset)
    bf = brute_force(chain, s, f)
    if bb.status != bf.status or bb.objective != bf.objective:
        out.append(f"bnb {bb.status}/{bb.objective} vs brute force {bf.status}/{bf.objective}")
    full = branch_and_bound(chain, s, f, prune=False, node_limit=tree_size(m, n) + 1)
    if full.nodes_explored != tree_size(m, n) or full.objective != bf.objective:
        out.append(f"unpruned bnb visited {full.nodes_explored} of {tree_size(m, n)}")
    if bb.nodes_explored > tree_size(m, n):
        out.append(f"pruned bnb visited {bb.nodes_explored} nodes")
    ff = first_fit(chain, s, f)
    if ff.placement is not None and bf.placement is None:
        out.append("first fit found a placement the enumeration calls infeasible")
    factors = RealizedDemand.ones(m) if f is None else f
    pl = bf.placement or Placement(tuple(0 for _ in range(m)))
    ref_e = reference_energy(pl, chain, factors, s)
    if abs(ref_e - energy(pl, chain, factors, s)) > 1e-9 * max(1.0, abs(ref_e)):
        out.append(f"evaluator energy {energy(pl, chain, factors, s)} vs reference {ref_e}")
    if reference_violations(pl, chain, factors, s) != check_constraints(pl, chain, factors, s).violated:
        out.append("evaluator and reference disagree on violated families")
    if bf.placement is not None and any(
            v in PLACEMENT_FAMILIES for v in reference_violations(bf.placement, chain, factors, s)):
        out.append("brute-force optimum violates a placement constraint")
    return out, bf.placement is not None


def oracle_check(scenario: Scenario | None, trials: int, seed: int,
                 bound_offset: float = 0.0) -> OracleReport:
    """Run ``trials`` random instances; ``scenario=None`` draws a fresh small scenario per trial."""
    if trials < 0:
        raise ValueError("trials must be >= 0")
    if trials == 0:
        warnings.warn("oracle check with zero trials passes vacuously", stacklevel=2)
    max_m = 6
    if scenario is not None:
        while max_m > 1 and scenario.n_hosts ** max_m > 4096:
            max_m -= 1
    rng = np.random.default_rng(seed)
    report = OracleReport(trials)
    for i in range(trials):
        s, chain, f = random_instance(rng, max_m=max_m, scenario=scenario)
        bad, ok = check_instance(s, chain, f, bound_offset)
        report.mismatches += [f"trial {i} (chain {chain.model_ids}): {msg}" for msg in bad]
        report.feasible += ok
    return report
