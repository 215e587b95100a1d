"""Infrastructure, AI-model catalog, service chains and placements.

Hosts sit on a star: every host owns one access link, so link ``i`` is the
link of host ``i``. Indices are zero-based throughout (host 0 is the first
column of the published host tables, model 0 the first catalog profile).
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import yaml


class ScenarioError(ValueError):
    """A scenario file failed to parse or validate. ``path`` names the key."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


@dataclass(frozen=True)
class DistributionSpec:
    kind: str  # "normal" (param_a=mean, param_b=stddev) or "uniform" (bounds)
    param_a: float
    param_b: float
    clip_lo: float
    clip_hi: float

    def __post_init__(self):
        if self.kind not in ("normal", "uniform"):
            raise ValueError(f"unknown distribution kind {self.kind!r}")
        if self.kind == "uniform" and self.param_a > self.param_b:
            raise ValueError("uniform needs param_a <= param_b")
        if self.kind == "normal" and self.param_b < 0:
            raise ValueError("normal needs a nonnegative stddev")
        if self.clip_lo > self.clip_hi:
            raise ValueError("clip_lo must not exceed clip_hi")

    def sample(self, rng: np.random.Generator) -> float:
        if self.kind == "normal":
            v = rng.normal(self.param_a, self.param_b)
        else:
            v = rng.uniform(self.param_a, self.param_b)
        return float(min(max(v, self.clip_lo), self.clip_hi))


DEFAULT_CPU_GPU_DELTA = DistributionSpec("normal", 0.5, 0.25, 0.0, 1.0)
DEFAULT_DISK_DELTA = DistributionSpec("normal", 0.5, 0.25, 0.0, 1.0)
DEFAULT_COMPLETION_DELTA = DistributionSpec("uniform", 0.0, 15.0, 0.0, 15.0)


@dataclass(frozen=True)
class HostSpec:
    id: int
    cpu_capacity: float
    gpu_capacity: float
    disk_capacity: float
    link_bandwidth: float  # Mbps
    link_latency: float  # ms
    idle_power: float  # W while active
    cpu_unit_power: float  # W per CPU unit
    gpu_unit_power: float


@dataclass(frozen=True)
class AIModelProfile:
    id: int
    nominal_cpu: float
    nominal_gpu: float
    nominal_disk: float
    bandwidth_demand: float  # Mbps sent to the next chain position
    compute_latency: float  # ms
    nominal_completion: float  # percent
    cpu_gpu_delta_dist: DistributionSpec = DEFAULT_CPU_GPU_DELTA
    disk_delta_dist: DistributionSpec = DEFAULT_DISK_DELTA
    completion_delta_dist: DistributionSpec = DEFAULT_COMPLETION_DELTA


@dataclass(frozen=True)
class ServiceChain:
    model_ids: tuple[int, ...]
    latency_budget: float
    sla_completion: float

    def __len__(self) -> int:
        return len(self.model_ids)


@dataclass(frozen=True)
class Placement:
    host_of: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.host_of)

    def validate(self, n_hosts: int, chain_length: int | None = None) -> None:
        if chain_length is not None and len(self.host_of) != chain_length:
            raise ValueError(
                f"placement has {len(self.host_of)} entries for a chain of {chain_length}")
        for h in self.host_of:
            if not 0 <= h < n_hosts:
                raise ValueError(f"host index {h} out of range [0, {n_hosts})")


@dataclass(frozen=True)
class Scenario:
    hosts: tuple[HostSpec, ...]
    catalog: tuple[AIModelProfile, ...]
    net_unit_power: float = 0.1
    default_sla_completion: float = 85.0
    latency_slack: float = 1.0
    seed: int = 0
    name: str = field(default="", compare=False)

    def __post_init__(self):
        if not self.hosts or not self.catalog:
            raise ValueError("a scenario needs at least one host and one catalog model")
        if [h.id for h in self.hosts] != list(range(len(self.hosts))):
            raise ValueError("host ids must be 0..n-1 in order")
        if [a.id for a in self.catalog] != list(range(len(self.catalog))):
            raise ValueError("catalog ids must be 0..k-1 in order")
        if self.net_unit_power < 0 or self.latency_slack < 1:
            raise ValueError("need net_unit_power >= 0 and latency_slack >= 1")

    @property
    def n_hosts(self) -> int:
        return len(self.hosts)

    @property
    def mean_link_latency(self) -> float:
        return sum(h.link_latency for h in self.hosts) / len(self.hosts)

    def fingerprint(self) -> str:
        blob = json.dumps(scenario_to_dict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


# ------------------------------------------------------------------ file format

_HOST_KEYS = {"cpu", "gpu", "disk", "link_bandwidth", "link_latency",
              "idle_power", "cpu_unit_power", "gpu_unit_power"}
_MODEL_KEYS = {"cpu_gpu", "cpu", "gpu", "disk", "bandwidth", "latency", "completion", "deltas"}
_DELTA_KEYS = {"cpu_gpu", "disk", "completion"}
_TOP_KEYS = {"name", "hosts", "catalog", "power", "sla", "seed"}


def _num(v: Any, path: str, *, minimum: float | None = 0.0) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ScenarioError(path, f"expected a number, got {v!r}")
    v = float(v)
    if not math.isfinite(v):
        raise ScenarioError(path, "must be finite")
    if minimum is not None and v < minimum:
        raise ScenarioError(path, f"must be >= {minimum}, got {v}")
    return v


def _mapping(v: Any, path: str, allowed: set[str]) -> dict:
    if not isinstance(v, dict):
        raise ScenarioError(path, f"expected a mapping, got {type(v).__name__}")
    extra = set(v) - allowed
    if extra:
        raise ScenarioError(f"{path}.{sorted(extra)[0]}" if path else sorted(extra)[0],
                            "unknown key")
    return v


def _dist(v: Any, path: str, default: DistributionSpec) -> DistributionSpec:
    if v is None:
        return default
    v = _mapping(v, path, {"kind", "a", "b", "clip"})
    kind = v.get("kind", default.kind)
    a = _num(v.get("a", default.param_a), f"{path}.a", minimum=None)
    b = _num(v.get("b", default.param_b), f"{path}.b", minimum=None)
    clip = v.get("clip", [default.clip_lo, default.clip_hi])
    if not isinstance(clip, (list, tuple)) or len(clip) != 2:
        raise ScenarioError(f"{path}.clip", "expected [lo, hi]")
    lo = _num(clip[0], f"{path}.clip[0]", minimum=None)
    hi = _num(clip[1], f"{path}.clip[1]", minimum=None)
    try:
        return DistributionSpec(kind, a, b, lo, hi)
    except ValueError as exc:
        raise ScenarioError(path, str(exc)) from None


def scenario_from_dict(doc: Any, name: str = "") -> Scenario:
    doc = _mapping(doc, "", _TOP_KEYS)
    power = _mapping(doc.get("power", {}), "power", {"cpu_unit", "gpu_unit", "idle", "net_unit"})
    cpu_unit = _num(power.get("cpu_unit", 200.0), "power.cpu_unit")
    gpu_unit = _num(power.get("gpu_unit", 200.0), "power.gpu_unit")
    idle = _num(power.get("idle", 100.0), "power.idle")
    net_unit = _num(power.get("net_unit", 0.1), "power.net_unit")

    raw_hosts = doc.get("hosts")
    if not isinstance(raw_hosts, list) or not raw_hosts:
        raise ScenarioError("hosts", "expected a nonempty list")
    hosts = []
    for i, h in enumerate(raw_hosts):
        p = f"hosts[{i}]"
        h = _mapping(h, p, _HOST_KEYS)
        for key in ("cpu", "disk", "link_bandwidth", "link_latency"):
            if key not in h:
                raise ScenarioError(f"{p}.{key}", "missing")
        cpu = _num(h["cpu"], f"{p}.cpu")
        hosts.append(HostSpec(
            id=i,
            cpu_capacity=cpu,
            gpu_capacity=_num(h.get("gpu", cpu), f"{p}.gpu"),
            disk_capacity=_num(h["disk"], f"{p}.disk"),
            link_bandwidth=_num(h["link_bandwidth"], f"{p}.link_bandwidth"),
            link_latency=_num(h["link_latency"], f"{p}.link_latency"),
            idle_power=_num(h.get("idle_power", idle), f"{p}.idle_power"),
            cpu_unit_power=_num(h.get("cpu_unit_power", cpu_unit), f"{p}.cpu_unit_power"),
            gpu_unit_power=_num(h.get("gpu_unit_power", gpu_unit), f"{p}.gpu_unit_power"),
        ))

    raw_cat = doc.get("catalog")
    if not isinstance(raw_cat, list) or not raw_cat:
        raise ScenarioError("catalog", "expected a nonempty list")
    catalog = []
    for i, a in enumerate(raw_cat):
        p = f"catalog[{i}]"
        a = _mapping(a, p, _MODEL_KEYS)
        if "cpu_gpu" in a:
            cpu = gpu = _num(a["cpu_gpu"], f"{p}.cpu_gpu")
        elif "cpu" in a:
            cpu = _num(a["cpu"], f"{p}.cpu")
            gpu = _num(a.get("gpu", cpu), f"{p}.gpu")
        else:
            raise ScenarioError(f"{p}.cpu_gpu", "missing")
        for key in ("disk", "bandwidth", "latency", "completion"):
            if key not in a:
                raise ScenarioError(f"{p}.{key}", "missing")
        disk = _num(a["disk"], f"{p}.disk")
        completion = _num(a["completion"], f"{p}.completion")
        if completion > 100.0:
            raise ScenarioError(f"{p}.completion", "must be <= 100")
        for key, v in (("cpu_gpu", cpu), ("gpu", gpu), ("disk", disk)):
            if v <= 0:
                raise ScenarioError(f"{p}.{key}", "nominal demand must be positive")
        if completion <= 0:
            raise ScenarioError(f"{p}.completion", "nominal completion must be positive")
        deltas = _mapping(a.get("deltas", {}) or {}, f"{p}.deltas", _DELTA_KEYS)
        catalog.append(AIModelProfile(
            id=i,
            nominal_cpu=cpu,
            nominal_gpu=gpu,
            nominal_disk=disk,
            bandwidth_demand=_num(a["bandwidth"], f"{p}.bandwidth"),
            compute_latency=_num(a["latency"], f"{p}.latency"),
            nominal_completion=completion,
            cpu_gpu_delta_dist=_dist(deltas.get("cpu_gpu"), f"{p}.deltas.cpu_gpu", DEFAULT_CPU_GPU_DELTA),
            disk_delta_dist=_dist(deltas.get("disk"), f"{p}.deltas.disk", DEFAULT_DISK_DELTA),
            completion_delta_dist=_dist(deltas.get("completion"), f"{p}.deltas.completion",
                                        DEFAULT_COMPLETION_DELTA),
        ))

    sla = _mapping(doc.get("sla", {}) or {}, "sla", {"completion", "latency_slack"})
    completion = _num(sla.get("completion", 85.0), "sla.completion")
    slack = _num(sla.get("latency_slack", 1.0), "sla.latency_slack")
    if slack < 1.0:
        raise ScenarioError("sla.latency_slack", "must be >= 1")
    seed = doc.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int):
        raise ScenarioError("seed", f"expected an integer, got {seed!r}")
    return Scenario(hosts=tuple(hosts), catalog=tuple(catalog), net_unit_power=net_unit,
                    default_sla_completion=completion, latency_slack=slack, seed=seed,
                    name=str(doc.get("name", name)))


def _dist_to_dict(d: DistributionSpec) -> dict:
    return {"kind": d.kind, "a": d.param_a, "b": d.param_b, "clip": [d.clip_lo, d.clip_hi]}


def scenario_to_dict(s: Scenario) -> dict:
    """Inverse of :func:`scenario_from_dict`; every field is written explicitly."""
    first = s.hosts[0]
    return {
        "hosts": [{
            "cpu": h.cpu_capacity, "gpu": h.gpu_capacity, "disk": h.disk_capacity,
            "link_bandwidth": h.link_bandwidth, "link_latency": h.link_latency,
            "idle_power": h.idle_power, "cpu_unit_power": h.cpu_unit_power,
            "gpu_unit_power": h.gpu_unit_power,
        } for h in s.hosts],
        "catalog": [{
            "cpu": a.nominal_cpu, "gpu": a.nominal_gpu, "disk": a.nominal_disk,
            "bandwidth": a.bandwidth_demand, "latency": a.compute_latency,
            "completion": a.nominal_completion,
            "deltas": {
                "cpu_gpu": _dist_to_dict(a.cpu_gpu_delta_dist),
                "disk": _dist_to_dict(a.disk_delta_dist),
                "completion": _dist_to_dict(a.completion_delta_dist),
            },
        } for a in s.catalog],
        "power": {"cpu_unit": first.cpu_unit_power, "gpu_unit": first.gpu_unit_power,
                  "idle": first.idle_power, "net_unit": s.net_unit_power},
        "sla": {"completion": s.default_sla_completion, "latency_slack": s.latency_slack},
        "seed": s.seed,
    }


def load_scenario(path: str | Path) -> Scenario:
    """Load a scenario file, or a bundled one by name (``hosts10``, ``hosts20``, ``tiny``)."""
    p = Path(path)
    if not p.exists() and str(path) in bundled_scenarios():
        p = _bundled_path(str(path))
    try:
        text = p.read_text()
    except OSError as exc:
        raise ScenarioError("", f"cannot read {path}: {exc}") from None
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ScenarioError("", f"parse error in {path}: {exc}") from None
    return scenario_from_dict(doc, name=p.stem)


def write_scenario(s: Scenario, path: str | Path) -> None:
    doc = scenario_to_dict(s)
    if s.name:
        doc = {"name": s.name, **doc}
    Path(path).write_text(yaml.safe_dump(doc, sort_keys=False))


def bundled_scenarios() -> list[str]:
    root = resources.files("aiplace") / "scenarios"
    return sorted(f.name[:-5] for f in root.iterdir() if f.name.endswith(".yaml"))


def _bundled_path(name: str) -> Path:
    return Path(str(resources.files("aiplace") / "scenarios" / f"{name}.yaml"))


# --------------------------------------------------------------------- requests

def latency_budget(scenario: Scenario, model_ids: Sequence[int]) -> float:
    compute = sum(scenario.catalog[a].compute_latency for a in model_ids)
    return compute + len(model_ids) * scenario.latency_slack * scenario.mean_link_latency


def make_chain(scenario: Scenario, model_ids: Sequence[int],
               sla_completion: float | None = None) -> ServiceChain:
    ids = tuple(int(a) for a in model_ids)
    if not ids:
        raise ValueError("a service chain needs at least one model")
    for a in ids:
        if not 0 <= a < len(scenario.catalog):
            raise ValueError(f"model id {a} not in catalog of {len(scenario.catalog)}")
    sla = scenario.default_sla_completion if sla_completion is None else sla_completion
    return ServiceChain(ids, latency_budget(scenario, ids), sla)


def generate_request(scenario: Scenario, chain_length: int,
                     rng: np.random.Generator) -> ServiceChain:
    """Draw a chain of ``chain_length`` models uniformly with replacement."""
    if chain_length < 1:
        raise ValueError("chain_length must be >= 1")
    if not scenario.catalog:
        raise ValueError("scenario catalog is empty")
    ids = rng.integers(0, len(scenario.catalog), size=chain_length)
    return make_chain(scenario, ids)
