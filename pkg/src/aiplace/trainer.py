"""REINFORCE training with a learned baseline, and policy checkpoints."""
from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from . import numerics as nx
from .domain import Placement, Scenario, generate_request
from .evaluator import FAMILIES, ConstraintReport, RealizedDemand, check_constraints, energy
from .policy import (DecodeTrace, PolicyConfig, PolicyParameters, decode, encode,
                     fit_certificates, value_estimate)
from .uncertainty import FuzzyParams, draw_realization

METRIC_COLUMNS = ("epoch", "mean_reward", "accept_fraction", "policy_loss", "value_loss")


class TrainingError(FloatingPointError):
    pass


class CheckpointError(ValueError):
    pass


class FingerprintWarning(UserWarning):
    pass


@dataclass(frozen=True)
class RewardConfig:
    energy_norm: float | None = None  # None -> n_hosts * 2000 W
    infeasible_base: float = 1.0
    violation_weight: float = 1.0

    def __post_init__(self):
        if self.energy_norm is not None and not self.energy_norm > 0:
            raise ValueError("energy_norm must be positive")
        if self.infeasible_base < 0 or self.violation_weight < 0:
            raise ValueError("penalties must be nonnegative")

    def for_scenario(self, scenario: Scenario) -> "RewardConfig":
        if self.energy_norm is not None:
            return self
        return RewardConfig(scenario.n_hosts * 2000.0, self.infeasible_base, self.violation_weight)


def reward(report: ConstraintReport, energy_w: float, cfg: RewardConfig) -> float:
    if cfg.energy_norm is None:
        raise ValueError("resolve energy_norm with RewardConfig.for_scenario first")
    if report.feasible:
        return -energy_w / cfg.energy_norm
    return -cfg.infeasible_base - cfg.violation_weight * len(report.violated) / len(FAMILIES)


@dataclass
class TrainConfig:
    epochs: int = 1000
    episodes: int = 64  # per epoch
    batch_size: int = 64
    learning_rate: float = 1e-4
    entropy_coeff: float = 0.01
    chain_length: int | tuple[int, ...] = 12  # a tuple draws one length per batch
    seed: int = 0
    oc_samples: int = 10_000
    oc_refresh_every: int = 0  # refit certificates every N epochs; 0 keeps them frozen

    def __post_init__(self):
        lengths = self.lengths
        if min(self.epochs, self.episodes, self.batch_size, *lengths) < 1:
            raise ValueError("counts and chain lengths must be positive")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")

    @property
    def lengths(self) -> tuple[int, ...]:
        cl = self.chain_length
        return (cl,) if isinstance(cl, int) else tuple(cl)


@dataclass
class EpisodeResult:
    placement: Placement
    realized: RealizedDemand
    report: ConstraintReport
    energy: float
    reward: float


@dataclass
class EpochMetrics:
    epoch: int
    mean_reward: float
    accept_fraction: float
    policy_loss: float
    value_loss: float

    def row(self) -> list:
        return [self.epoch, repr(self.mean_reward), repr(self.accept_fraction),
                repr(self.policy_loss), repr(self.value_loss)]


def policy_gradient_loss(log_prob_sums: nx.Tensor, entropies: nx.Tensor, rewards: np.ndarray,
                         baseline: np.ndarray, entropy_coeff: float) -> nx.Tensor:
    """-mean[(R - b) * sum log p] - entropy_coeff * mean entropy; ``b`` is treated as constant."""
    adv = np.asarray(rewards, dtype=np.float64) - np.asarray(baseline, dtype=np.float64)
    pg = nx.mul(nx.mean(nx.mul(log_prob_sums, adv)), -1.0)
    if entropy_coeff == 0:
        return pg
    return nx.sub(pg, nx.mul(nx.mean(entropies), entropy_coeff))


def value_loss(baseline: nx.Tensor, rewards: np.ndarray) -> nx.Tensor:
    return nx.mean(nx.square(nx.sub(baseline, np.asarray(rewards, dtype=np.float64))))


class Trainer:
    """Owns the optimizer state and random streams of one training run."""

    def __init__(self, scenario: Scenario, policy: PolicyParameters, cfg: TrainConfig,
                 reward_cfg: RewardConfig = RewardConfig(), fit_oc: bool = True):
        self.scenario = scenario
        self.policy = policy
        self.cfg = cfg
        self.reward_cfg = reward_cfg.for_scenario(scenario)
        oc_seed, train_seed = np.random.SeedSequence(cfg.seed).spawn(2)
        self.oc_rng = np.random.default_rng(oc_seed)
        self.rng = np.random.default_rng(train_seed)
        self.actor = nx.Adam(policy.policy_tensors(), lr=cfg.learning_rate)
        self.critic = nx.Adam(policy.value_tensors(), lr=cfg.learning_rate)
        self.epoch = 0
        if fit_oc:
            self.refit_certificates()

    def refit_certificates(self) -> list[float]:
        return fit_certificates(self.policy, self.scenario, self.oc_rng,
                                n_samples=self.cfg.oc_samples, chain_length=self.cfg.lengths[0])

    def _score(self, trace: DecodeTrace, chains) -> list[EpisodeResult]:
        out = []
        for b, chain in enumerate(chains):
            pl = trace.placement(b)
            realized = draw_realization(chain, self.scenario, self.rng)
            rep = check_constraints(pl, chain, realized, self.scenario)
            e = energy(pl, chain, realized, self.scenario)
            out.append(EpisodeResult(pl, realized, rep, e, reward(rep, e, self.reward_cfg)))
        return out

    def train_batch(self, n: int) -> tuple[list[EpisodeResult], float, float]:
        lengths = self.cfg.lengths
        m = lengths[0] if len(lengths) == 1 else int(lengths[self.rng.integers(len(lengths))])
        chains = [generate_request(self.scenario, m, self.rng) for _ in range(n)]
        enc = encode(chains, self.policy)
        trace = decode(enc, self.scenario, self.policy, mode="sample", rng=self.rng)
        base = value_estimate(enc, self.policy)
        results = self._score(trace, chains)
        rewards = np.array([r.reward for r in results])
        ploss = policy_gradient_loss(trace.total_log_prob(), trace.entropies, rewards,
                                     base.data, self.cfg.entropy_coeff)
        vloss = value_loss(base, rewards)
        total = nx.add(ploss, vloss)
        if not math.isfinite(total.item()):
            raise TrainingError(
                f"non-finite loss at epoch {self.epoch}: policy={ploss.item()} value={vloss.item()} "
                f"rewards=[{rewards.min()}, {rewards.max()}] baseline=[{base.data.min()}, {base.data.max()}]")
        self.actor.zero_grad()
        self.critic.zero_grad()
        self.policy["oc.certificates"].grad = None
        nx.backward(total)
        self.actor.step()
        self.critic.step()
        self.policy["oc.certificates"].grad = None
        return results, ploss.item(), vloss.item()

    def train_epoch(self) -> EpochMetrics:
        done = 0
        results: list[EpisodeResult] = []
        plosses, vlosses = [], []
        while done < self.cfg.episodes:
            n = min(self.cfg.batch_size, self.cfg.episodes - done)
            res, pl, vl = self.train_batch(n)
            results += res
            plosses.append(pl)
            vlosses.append(vl)
            done += n
        self.epoch += 1
        self.policy.step += 1
        if self.cfg.oc_refresh_every and self.epoch % self.cfg.oc_refresh_every == 0:
            self.refit_certificates()
        return EpochMetrics(self.epoch, float(np.mean([r.reward for r in results])),
                            float(np.mean([r.report.feasible for r in results])),
                            float(np.mean(plosses)), float(np.mean(vlosses)))

    def train(self, epochs: int | None = None, metrics_path: str | Path | None = None,
              callback: Callable[[EpochMetrics], None] | None = None) -> list[EpochMetrics]:
        epochs = self.cfg.epochs if epochs is None else epochs
        history = []
        writer = None
        fh = None
        if metrics_path is not None:
            path = Path(metrics_path)
            new = not path.exists() or path.stat().st_size == 0
            fh = path.open("a", newline="")
            writer = csv.writer(fh)
            if new:
                writer.writerow(METRIC_COLUMNS)
        try:
            for _ in range(epochs):
                mt = self.train_epoch()
                history.append(mt)
                if writer is not None:
                    writer.writerow(mt.row())
                if callback is not None:
                    callback(mt)
        finally:
            if fh is not None:
                fh.close()
        return history


def train_policy(scenario: Scenario, cfg: TrainConfig, reward_cfg: RewardConfig = RewardConfig(),
                 use_fuzzy: bool = True, metrics_path: str | Path | None = None,
                 **policy_kw) -> tuple[PolicyParameters, list[EpochMetrics]]:
    """Initialize from ``cfg.seed``, fit certificates, train for ``cfg.epochs``."""
    init_seed = np.random.SeedSequence([cfg.seed, 1])
    policy = PolicyParameters.init(scenario, np.random.default_rng(init_seed),
                                   use_fuzzy=use_fuzzy, **policy_kw)
    trainer = Trainer(scenario, policy, cfg, reward_cfg)
    history = trainer.train(metrics_path=metrics_path)
    return policy, history


# ---------------------------------------------------------------- checkpoints

_FORMAT = "aiplace-checkpoint"


def _arr(a: np.ndarray) -> dict:
    return {"shape": list(a.shape), "values": [float(v) for v in np.asarray(a).reshape(-1)]}


def _unarr(d: dict) -> np.ndarray:
    return np.array(d["values"], dtype=np.float64).reshape(d["shape"])


def save_checkpoint(policy: PolicyParameters, path: str | Path) -> None:
    cfg = asdict(policy.config)
    doc = {
        "format": _FORMAT,
        "version": 1,
        "fingerprint": policy.fingerprint,
        "step": policy.step,
        "config": cfg,
        "tables": {"stats": _arr(policy.stats), "demands": _arr(policy.demands),
                   "capacities": _arr(policy.capacities),
                   "link_latency": _arr(policy.link_latency)},
        "latency_slack": policy.latency_slack,
        "tensors": [{"name": k, **_arr(t.data)} for k, t in policy.tensors.items()],
    }
    # json writes floats with repr, which round-trips float64 exactly
    Path(path).write_text(json.dumps(doc, separators=(",", ":")))


def load_checkpoint(path: str | Path, scenario: Scenario | None = None) -> PolicyParameters:
    try:
        doc = json.loads(Path(path).read_text())
        if doc.get("format") != _FORMAT:
            raise CheckpointError(f"{path}: not a policy checkpoint")
        cfg_d = dict(doc["config"])
        cfg_d["fuzzy"] = FuzzyParams(**cfg_d["fuzzy"])
        cfg = PolicyConfig(**cfg_d)
        tensors = {}
        for entry in doc["tensors"]:
            data = _unarr(entry)
            tensors[entry["name"]] = nx.Tensor(data, requires_grad=True, name=entry["name"])
        tables = doc["tables"]
        policy = PolicyParameters(cfg, tensors, _unarr(tables["stats"]), _unarr(tables["demands"]),
                                  _unarr(tables["capacities"]), _unarr(tables["link_latency"]),
                                  float(doc["latency_slack"]), doc["fingerprint"], int(doc["step"]))
    except CheckpointError:
        raise
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"{path}: corrupt checkpoint ({exc})") from None
    if scenario is not None and scenario.fingerprint() != policy.fingerprint:
        warnings.warn(f"checkpoint {path} was trained on a different scenario "
                      f"({policy.fingerprint} != {scenario.fingerprint()})", FingerprintWarning,
                      stacklevel=2)
    return policy
