"""Encoder-decoder placement policy with certificate-weighted attention.

All tensors carry a leading batch axis ``B``; chains in one batch share a
length ``m``. The encoder is a stack of LSTMs over model embeddings. The
decoder runs one LSTM step per chain position, attends over the encoder
states and scores the ``n`` hosts from ``[decoder state ; context]``.

Attention scores are multiplied by each position's fuzzy membership before
the softmax. With memberships fixed at 1 the policy is the plain attention
model (``use_fuzzy=False``).

With ``host_state`` on, a small per-host network adds a score computed from
what each host would have left after taking the current model (capacity,
co-location with the previous position, link latency against the chain's
budget). Without it the decoder cannot see earlier placements except through
its recurrent state.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numerics as nx
from .domain import Placement, Scenario, ServiceChain, generate_request
from .uncertainty import (FuzzyParams, OCParameters, catalog_stats, draw_realization,
                          fuzzy_membership_t, oc_scores, realized_stats, train_oc)

MASK_TOL = 1e-9
# per host: remaining cpu, gpu, disk after the candidate placement, holds the
# previous position, already in use, hop latency, link-latency budget left
N_HOST_FEATURES = 7


@dataclass
class PolicyConfig:
    n_models: int
    n_hosts: int
    embedding_size: int = 10
    encoder_layers: int = 2
    d_u: int = 4
    orthonormality_weight: float = 1.0
    fuzzy: FuzzyParams = field(default_factory=FuzzyParams)
    use_fuzzy: bool = True
    host_state: bool = True  # score hosts on their remaining capacity as well


class PolicyParameters:
    """Named learnable tensors plus the frozen per-scenario lookup tables."""

    def __init__(self, config: PolicyConfig, tensors: dict[str, nx.Tensor],
                 stats: np.ndarray, demands: np.ndarray, capacities: np.ndarray,
                 link_latency: np.ndarray, latency_slack: float = 1.0,
                 fingerprint: str = "", step: int = 0):
        self.config = config
        self.tensors = tensors
        self.stats = stats  # (K, 4) normalized nominal stats
        self.demands = demands  # (K, 3) nominal cpu, gpu, disk
        self.capacities = capacities  # (n, 3)
        self.link_latency = link_latency  # (n,)
        self.latency_slack = latency_slack
        self.fingerprint = fingerprint
        self.step = step
        for name, t in tensors.items():
            t.name = name

    def __getitem__(self, name: str) -> nx.Tensor:
        return self.tensors[name]

    @property
    def oc(self) -> OCParameters:
        return OCParameters(self.tensors["oc.certificates"], self.config.orthonormality_weight)

    def policy_tensors(self) -> list[nx.Tensor]:
        return [t for k, t in self.tensors.items() if not k.startswith(("value.", "oc."))]

    def value_tensors(self) -> list[nx.Tensor]:
        return [t for k, t in self.tensors.items() if k.startswith("value.")]

    @classmethod
    def init(cls, scenario: Scenario, rng: np.random.Generator, **config_kw) -> "PolicyParameters":
        cfg = PolicyConfig(n_models=len(scenario.catalog), n_hosts=scenario.n_hosts, **config_kw)
        e, n, k = cfg.embedding_size, cfg.n_hosts, cfg.n_models
        u = nx.uniform_init
        t: dict[str, nx.Tensor] = {"model_embedding": u(rng, (k, e), e)}
        for layer in range(cfg.encoder_layers):
            t[f"enc{layer}.w"] = u(rng, (2 * e, 4 * e), 2 * e)
            t[f"enc{layer}.b"] = nx.zeros(4 * e)
        t["dec.w"] = u(rng, (2 * e, 4 * e), 2 * e)
        t["dec.b"] = nx.zeros(4 * e)
        t["att.omega"] = u(rng, (e, 1), e)
        t["att.xi_v"] = u(rng, (e, e), e)
        t["att.xi_a"] = u(rng, (e, e), e)
        t["out.w"] = u(rng, (2 * e, n), 2 * e)
        t["out.b"] = nx.zeros(n)
        t["start_token"] = u(rng, (1, e), e)
        t["host_embedding"] = u(rng, (n, e), e)
        t["oc.certificates"] = OCParameters.init(e, rng, cfg.d_u).certificates
        if cfg.host_state:
            t["state.w1"] = u(rng, (N_HOST_FEATURES, e), N_HOST_FEATURES)
            t["state.b1"] = nx.zeros(e)
            t["state.w2"] = u(rng, (e, 1), e)
        t["value.w1"] = u(rng, (e, e), e)
        t["value.b1"] = nx.zeros(e)
        t["value.w2"] = u(rng, (e, 1), e)
        t["value.b2"] = nx.zeros(1)
        return cls(cfg, t, *scenario_tables(scenario), latency_slack=scenario.latency_slack,
                   fingerprint=scenario.fingerprint())


def scenario_tables(scenario: Scenario) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """(normalized stats, nominal demands, host capacities, link latencies)."""
    demands = np.array([[a.nominal_cpu, a.nominal_gpu, a.nominal_disk] for a in scenario.catalog])
    caps = np.array([[h.cpu_capacity, h.gpu_capacity, h.disk_capacity] for h in scenario.hosts])
    lat = np.array([h.link_latency for h in scenario.hosts], dtype=np.float64)
    return catalog_stats(scenario), demands, caps, lat


@dataclass
class EncoderOutput:
    source_states: nx.Tensor  # (B, m, e)
    pooled: nx.Tensor  # (B, e)
    oc_features: nx.Tensor  # (B, m, e + 4)
    final_h: nx.Tensor  # (B, e), top layer
    final_c: nx.Tensor
    model_ids: np.ndarray  # (B, m)

    @property
    def batch_size(self) -> int:
        return self.model_ids.shape[0]

    @property
    def length(self) -> int:
        return self.model_ids.shape[1]


@dataclass
class DecodeTrace:
    hosts: np.ndarray  # (B, m) chosen host per position
    log_probs: nx.Tensor  # (B, m) log-prob of each choice
    entropies: nx.Tensor  # (B, m)
    distributions: np.ndarray  # (B, m, n)
    masks: np.ndarray  # (B, m, n) true where a host was disallowed
    memberships: np.ndarray  # (B, m)
    infeasible_at_decode: np.ndarray  # (B,) some step had every host masked

    def placement(self, b: int = 0) -> Placement:
        return Placement(tuple(int(h) for h in self.hosts[b]))

    def total_log_prob(self) -> nx.Tensor:
        return nx.sum(self.log_probs, axis=1)


def _ids(chains) -> np.ndarray:
    if isinstance(chains, ServiceChain):
        return np.array([chains.model_ids], dtype=np.int64)
    if isinstance(chains, np.ndarray):
        return np.atleast_2d(chains).astype(np.int64)
    ids = [c.model_ids if isinstance(c, ServiceChain) else tuple(c) for c in chains]
    if len({len(r) for r in ids}) != 1:
        raise ValueError("chains in one batch must share a length")
    return np.array(ids, dtype=np.int64)


def encode(chains, params: PolicyParameters) -> EncoderOutput:
    """Run the LSTM stack over one chain, a list of equal-length chains, or an id array."""
    ids = _ids(chains)
    if ids.size == 0 or ids.shape[1] == 0:
        raise ValueError("empty chain")
    if ids.min() < 0 or ids.max() >= params.config.n_models:
        raise ValueError(f"unknown model id in {ids.tolist()}")
    bsz, m = ids.shape
    e = params.config.embedding_size
    emb = params["model_embedding"]
    inputs = [nx.take_rows(emb, ids[:, t]) for t in range(m)]
    zero = nx.Tensor(np.zeros((bsz, e)))
    h = c = zero
    for layer in range(params.config.encoder_layers):
        w, b = params[f"enc{layer}.w"], params[f"enc{layer}.b"]
        h = c = zero
        outs = []
        for x in inputs:
            h, c = nx.lstm_cell(x, h, c, w, b)
            outs.append(h)
        inputs = outs
    source = nx.stack(inputs, axis=1)
    pooled = nx.mean(source, axis=1)
    feats = nx.concat([source, nx.Tensor(params.stats[ids])], axis=-1)
    return EncoderOutput(source, pooled, feats, h, c, ids)


def _batched(x) -> tuple[nx.Tensor, bool]:
    x = nx.as_tensor(x)
    return (x, False) if x.data.ndim >= 2 else (nx.reshape(x, (1,) + x.shape), True)


def attention_scores(decoder_state: nx.Tensor, projected_sources: nx.Tensor,
                     params: PolicyParameters) -> nx.Tensor:
    """omega . tanh(xi_v rho_v + xi_a rho_a) for every source position, (B, m)."""
    bsz, m, e = projected_sources.shape
    if decoder_state.shape != (bsz, e):
        raise nx.ShapeError(f"decoder state {decoder_state.shape} vs sources {projected_sources.shape}")
    q = nx.reshape(nx.matmul(decoder_state, params["att.xi_v"]), (bsz, 1, e))
    act = nx.tanh(nx.add(projected_sources, q))
    return nx.reshape(nx.matmul(act, params["att.omega"]), (bsz, m))


def project_sources(source_states: nx.Tensor, params: PolicyParameters) -> nx.Tensor:
    return nx.matmul(source_states, params["att.xi_a"])


def alignment(decoder_state, source_states, params: PolicyParameters) -> nx.Tensor:
    """Softmax-normalized attention weights over source positions."""
    d, single = _batched(decoder_state)
    s = nx.as_tensor(source_states)
    if s.data.ndim == 2:
        s = nx.reshape(s, (1,) + s.shape)
    w = nx.softmax(attention_scores(d, project_sources(s, params), params))
    return nx.reshape(w, w.shape[1:]) if single else w


def memberships(oc_features: nx.Tensor, params: PolicyParameters) -> nx.Tensor:
    u = oc_scores(params["oc.certificates"], oc_features)
    return fuzzy_membership_t(u, params.config.fuzzy)


def fused_alignment(decoder_state, source_states, oc_features, params: PolicyParameters,
                    membership=None) -> nx.Tensor:
    """Attention weights with each score scaled by its position's membership.

    ``membership`` overrides the certificate-derived weights when given.
    """
    d, single = _batched(decoder_state)
    s = nx.as_tensor(source_states)
    f = nx.as_tensor(oc_features)
    if s.data.ndim == 2:
        s = nx.reshape(s, (1,) + s.shape)
        f = nx.reshape(f, (1,) + f.shape)
    mem = memberships(f, params) if membership is None else nx.as_tensor(membership)
    if mem.data.ndim == 1:
        mem = nx.reshape(mem, (1,) + mem.shape)
    scores = attention_scores(d, project_sources(s, params), params)
    w = nx.softmax(nx.mul(scores, mem))
    return nx.reshape(w, w.shape[1:]) if single else w


def context(weights, source_states) -> nx.Tensor:
    """Convex combination of source states, (B, e) or (e,) for unbatched input."""
    w, single = _batched(weights)
    s = nx.as_tensor(source_states)
    if s.data.ndim == 2:
        s = nx.reshape(s, (1,) + s.shape)
    bsz, m = w.shape
    if s.shape[:2] != (bsz, m):
        raise nx.ShapeError(f"weights {w.shape} vs source states {s.shape}")
    c = nx.reshape(nx.matmul(nx.reshape(w, (bsz, 1, m)), s), (bsz, s.shape[2]))
    return nx.reshape(c, c.shape[1:]) if single else c


def host_scores(features: np.ndarray, params: PolicyParameters) -> nx.Tensor:
    """Logit offset per host from its load features (B, n, F), one tanh layer, (B, n)."""
    hid = nx.tanh(nx.add(nx.matmul(nx.Tensor(features), params["state.w1"]), params["state.b1"]))
    out = nx.matmul(hid, params["state.w2"])
    return nx.reshape(out, features.shape[:2])


def _sample_rows(p: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    u = rng.random(p.shape[0])
    cdf = np.cumsum(p, axis=1)
    a = np.sum(cdf <= u[:, None], axis=1)
    # round-off can push u past the last cdf value; fall back to the last allowed host
    over = a >= p.shape[1]
    if over.any():
        a[over] = [np.flatnonzero(row > 0)[-1] for row in p[over]]
    return a


def decode(enc: EncoderOutput, scenario: Scenario | None, params: PolicyParameters,
           mode: str = "greedy", rng: np.random.Generator | None = None,
           actions: np.ndarray | None = None, membership=None) -> DecodeTrace:
    """Place every chain position in order.

    ``mode`` is ``"greedy"`` (argmax, lowest index on ties) or ``"sample"``.
    ``actions`` forces the chosen hosts (for scoring a fixed trace).
    Hosts whose remaining nominal CPU, GPU or disk would go negative are
    masked; if every host is masked at a step the mask is lifted for that
    step and the chain is flagged ``infeasible_at_decode``.
    """
    if mode not in ("greedy", "sample"):
        raise ValueError(f"unknown decode mode {mode!r}")
    if mode == "sample" and rng is None and actions is None:
        raise ValueError("sample mode needs an rng")
    if scenario is None:
        demands, caps, lat, slack = (params.demands, params.capacities, params.link_latency,
                                     params.latency_slack)
    else:
        _, demands, caps, lat = scenario_tables(scenario)
        slack = scenario.latency_slack
    ids = enc.model_ids
    bsz, m = ids.shape
    n = caps.shape[0]
    if n != params.config.n_hosts:
        raise ValueError(f"policy built for {params.config.n_hosts} hosts, scenario has {n}")

    source = enc.source_states
    proj = project_sources(source, params)
    if membership is not None:
        mem = nx.as_tensor(np.broadcast_to(np.asarray(
            membership.data if isinstance(membership, nx.Tensor) else membership, float), (bsz, m)))
    elif params.config.use_fuzzy:
        mem = memberships(enc.oc_features, params)
    else:
        mem = None

    remaining = np.broadcast_to(caps, (bsz, n, 3)).copy()
    used = np.zeros((bsz, n))
    prev = np.zeros((bsz, n))
    scale = float(demands.max())
    # link latency the budget allows beyond compute, and the part already spent
    allowance = m * slack * float(lat.mean())
    spent = np.zeros(bsz)
    lat_scale = 2.0 * float(lat.mean()) if lat.mean() > 0 else 1.0
    rows = np.arange(bsz)
    h, c = enc.final_h, enc.final_c
    x = nx.take_rows(params["start_token"], np.zeros(bsz, dtype=np.int64))
    w_dec, b_dec = params["dec.w"], params["dec.b"]
    hosts = np.zeros((bsz, m), dtype=np.int64)
    dists = np.zeros((bsz, m, n))
    masks = np.zeros((bsz, m, n), dtype=bool)
    dead = np.zeros(bsz, dtype=bool)
    step_lp, step_ent = [], []
    for v in range(m):
        h, c = nx.lstm_cell(x, h, c, w_dec, b_dec)
        scores = attention_scores(h, proj, params)
        if mem is not None:
            scores = nx.mul(scores, mem)
        ctx = context(nx.softmax(scores), source)
        logits = nx.add(nx.matmul(nx.concat([h, ctx], axis=-1), params["out.w"]), params["out.b"])

        need = demands[ids[:, v]]
        after = remaining - need[:, None, :]
        if params.config.host_state:
            hop = np.where(prev > 0, 0.0, lat[None, :] + (prev @ lat)[:, None]) if v else np.zeros((bsz, n))
            left = (allowance - spent[:, None] - hop) / max(allowance, 1e-12)
            feats = np.concatenate([after / scale, prev[..., None], used[..., None],
                                    (hop / lat_scale)[..., None], left[..., None]], axis=-1)
            logits = nx.add(logits, host_scores(feats, params))
        mask = np.any(after < -MASK_TOL, axis=-1)
        full = mask.all(axis=1)
        if full.any():
            dead |= full
            mask[full] = False
        logp = nx.log_softmax(logits, mask)
        p = np.exp(logp.data)
        if actions is not None:
            a = np.asarray(actions, dtype=np.int64).reshape(bsz, m)[:, v]
        elif mode == "greedy":
            a = np.argmax(p, axis=1)
        else:
            a = _sample_rows(p, rng)
        step_lp.append(nx.gather_last(logp, a))
        plogp = nx.mul(nx.exp(logp), nx.masked_fill(logp, mask, 0.0))
        step_ent.append(nx.mul(nx.sum(plogp, axis=-1), -1.0))
        if v:
            last = hosts[:, v - 1]
            spent += np.where(last != a, lat[last] + lat[a], 0.0)
        remaining[rows, a] -= need
        used[rows, a] = 1.0
        prev[:] = 0.0
        prev[rows, a] = 1.0
        hosts[:, v] = a
        dists[:, v] = p
        masks[:, v] = mask
        x = nx.take_rows(params["host_embedding"], a)

    mem_np = np.ones((bsz, m)) if mem is None else mem.data.copy()
    return DecodeTrace(hosts, nx.stack(step_lp, axis=1), nx.stack(step_ent, axis=1),
                       dists, masks, mem_np, dead)


def value_estimate(enc: EncoderOutput, params: PolicyParameters) -> nx.Tensor:
    """Baseline from the pooled encoder state: one tanh layer then a scalar, (B,)."""
    hid = nx.tanh(nx.add(nx.matmul(enc.pooled, params["value.w1"]), params["value.b1"]))
    out = nx.add(nx.matmul(hid, params["value.w2"]), params["value.b2"])
    return nx.reshape(out, (enc.batch_size,))


def place(chains, params: PolicyParameters, scenario: Scenario | None = None) -> list[Placement]:
    """Greedy placements for a list of chains, batched by length, in input order."""
    chains = list(chains)
    out: list[Placement | None] = [None] * len(chains)
    by_len: dict[int, list[int]] = {}
    for i, ch in enumerate(chains):
        by_len.setdefault(len(ch.model_ids), []).append(i)
    with nx.no_grad():
        for _, idx in sorted(by_len.items()):
            enc = encode([chains[i] for i in idx], params)
            trace = decode(enc, scenario, params, mode="greedy")
            for j, i in enumerate(idx):
                out[i] = trace.placement(j)
    return out  # type: ignore[return-value]


# ------------------------------------------------------------ certificate fit

def oc_training_features(params: PolicyParameters, scenario: Scenario,
                         rng: np.random.Generator, n_samples: int = 10_000,
                         chain_length: int = 12) -> np.ndarray:
    """Encoder states paired with post-draw stats, one row per chain position."""
    rows = []
    total = 0
    batch = max(1, min(256, n_samples // chain_length + 1))
    with nx.no_grad():
        while total < n_samples:
            chains = [generate_request(scenario, chain_length, rng) for _ in range(batch)]
            enc = encode(chains, params)
            src = enc.source_states.data
            for b, ch in enumerate(chains):
                stats = realized_stats(ch, draw_realization(ch, scenario, rng), scenario)
                rows.append(np.concatenate([src[b], stats], axis=1))
                total += len(ch)
    return np.concatenate(rows, axis=0)[:n_samples]


def fit_certificates(params: PolicyParameters, scenario: Scenario, rng: np.random.Generator,
                     n_samples: int = 10_000, chain_length: int = 12, **train_kw) -> list[float]:
    feats = oc_training_features(params, scenario, rng, n_samples, chain_length)
    return train_oc(params.oc, feats, **train_kw)
