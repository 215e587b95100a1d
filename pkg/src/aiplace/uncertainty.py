"""Uncertainty draws, orthonormal certificates and Gaussian fuzzy membership.

The certificate map ``C`` (features x d_u) is trained to send in-distribution
features to zero while staying close to orthonormal. Its mean squared
response is the epistemic score of a feature; the fuzzy layer turns the
score into a confidence weight in (0, 1].
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .domain import AIModelProfile, Scenario, ServiceChain
from .evaluator import RealizedDemand

N_STATS = 4  # cpu, gpu, disk, completion


def draw_realization(chain: ServiceChain, scenario: Scenario,
                     rng: np.random.Generator) -> RealizedDemand:
    """Sample additive deltas per chain position and convert them to factors."""
    f_c, f_g, f_d, f_q = [], [], [], []
    for a in chain.model_ids:
        prof = scenario.catalog[a]
        if min(prof.nominal_cpu, prof.nominal_gpu, prof.nominal_disk, prof.nominal_completion) <= 0:
            raise ValueError(f"model {a} has a zero nominal demand; factors undefined")
        delta = prof.cpu_gpu_delta_dist.sample(rng)
        theta = prof.disk_delta_dist.sample(rng)
        upsilon = prof.completion_delta_dist.sample(rng)
        f_c.append((prof.nominal_cpu + delta) / prof.nominal_cpu)
        f_g.append((prof.nominal_gpu + delta) / prof.nominal_gpu)
        f_d.append((prof.nominal_disk + theta) / prof.nominal_disk)
        f_q.append((prof.nominal_completion + upsilon) / prof.nominal_completion)
    return RealizedDemand(tuple(f_c), tuple(f_g), tuple(f_d), tuple(f_q))


def stat_scales(scenario: Scenario) -> np.ndarray:
    """Catalog maxima of (cpu, gpu, disk, completion), used as normalizers."""
    cat = scenario.catalog
    return np.array([max(a.nominal_cpu for a in cat), max(a.nominal_gpu for a in cat),
                     max(a.nominal_disk for a in cat), max(a.nominal_completion for a in cat)])


def catalog_stats(scenario: Scenario) -> np.ndarray:
    """Normalized nominal stats, one row per catalog model."""
    raw = np.array([[a.nominal_cpu, a.nominal_gpu, a.nominal_disk, a.nominal_completion]
                    for a in scenario.catalog])
    return raw / stat_scales(scenario)


def realized_stats(chain: ServiceChain, realized: RealizedDemand,
                   scenario: Scenario) -> np.ndarray:
    """Normalized post-draw stats, shape (m, 4)."""
    rows = []
    for k, a in enumerate(chain.model_ids):
        p = scenario.catalog[a]
        rows.append([p.nominal_cpu * realized.f_c[k], p.nominal_gpu * realized.f_g[k],
                     p.nominal_disk * realized.f_d[k], p.nominal_completion * realized.f_q[k]])
    return np.array(rows) / stat_scales(scenario)


def oc_feature(embedding: np.ndarray, profile: AIModelProfile,
               scales: np.ndarray) -> np.ndarray:
    stats = np.array([profile.nominal_cpu, profile.nominal_gpu, profile.nominal_disk,
                      profile.nominal_completion]) / scales
    return np.concatenate([np.asarray(embedding, dtype=np.float64), stats])


# ------------------------------------------------------------- certificates

@dataclass
class OCParameters:
    certificates: nx.Tensor  # (e + 4, d_u)
    orthonormality_weight: float = 1.0

    @property
    def d_u(self) -> int:
        return self.certificates.shape[1]

    @property
    def feature_dim(self) -> int:
        return self.certificates.shape[0]

    @classmethod
    def init(cls, embedding_size: int, rng: np.random.Generator, d_u: int = 4,
             orthonormality_weight: float = 1.0) -> "OCParameters":
        dim = embedding_size + N_STATS
        c = nx.uniform_init(rng, (dim, d_u), fan_in=dim, name="oc_certificates")
        return cls(c, orthonormality_weight)


def _as_batch(features, dim: int) -> nx.Tensor:
    x = nx.as_tensor(features)
    if x.data.ndim != 2 or x.shape[1] != dim:
        raise nx.ShapeError(f"expected features of shape (N, {dim}), got {x.shape}")
    if x.shape[0] == 0:
        raise ValueError("empty feature batch")
    return x


def oc_loss(params: OCParameters, features) -> nx.Tensor:
    """mean_i ||C^T x_i||^2 + w * ||C^T C - I||_F^2."""
    c = params.certificates
    x = _as_batch(features, params.feature_dim)
    fit = nx.mul(nx.squared_norm(nx.matmul(x, c)), 1.0 / x.shape[0])
    gram = nx.matmul(nx.transpose(c), c)
    ortho = nx.squared_norm(nx.sub(gram, np.eye(params.d_u)))
    return nx.add(fit, nx.mul(ortho, params.orthonormality_weight))


def oc_scores(certificates: nx.Tensor, features: nx.Tensor) -> nx.Tensor:
    """Differentiable u_e over the last axis of ``features``."""
    if features.shape[-1] != certificates.shape[0]:
        raise nx.ShapeError(
            f"feature dim {features.shape[-1]} vs certificates {certificates.shape}")
    d_u = certificates.shape[1]
    return nx.mul(nx.squared_norm(nx.matmul(features, certificates), axis=-1), 1.0 / d_u)


def oc_score(params: OCParameters, feature) -> float:
    x = np.asarray(feature, dtype=np.float64)
    if x.shape[-1] != params.feature_dim:
        raise nx.ShapeError(f"feature dim {x.shape[-1]} vs certificates {params.certificates.shape}")
    r = x @ params.certificates.data
    return np.sum(r * r, axis=-1) / params.d_u


def orthonormality_error(params: OCParameters) -> float:
    c = params.certificates.data
    return float(np.linalg.norm(c.T @ c - np.eye(params.d_u)))


def train_oc(params: OCParameters, features: np.ndarray, lr: float = 1e-2,
             max_steps: int = 20000, tol: float = 1e-12, patience: int = 50) -> list[float]:
    """Full-batch Adam on :func:`oc_loss` until the loss stops moving."""
    x = nx.Tensor(features)
    opt = nx.Adam([params.certificates], lr=lr)
    opt.zero_grad()
    history: list[float] = []
    still = 0
    for _ in range(max_steps):
        loss = oc_loss(params, x)
        nx.backward(loss)
        opt.step()
        v = loss.item()
        if history and abs(history[-1] - v) <= tol * max(1.0, abs(v)):
            still += 1
            if still >= patience:
                history.append(v)
                break
        else:
            still = 0
        history.append(v)
    return history


# ------------------------------------------------------------------- fuzzy

@dataclass(frozen=True)
class FuzzyParams:
    mu: float = 0.0
    sigma_sq: float = 1.0

    def __post_init__(self):
        if not self.sigma_sq > 0:
            raise ValueError("sigma_sq must be positive")


def fuzzy_membership(u, params: FuzzyParams = FuzzyParams()):
    """exp(-(u - mu)^2 / sigma^2) for scalars or arrays."""
    d = np.asarray(u, dtype=np.float64) - params.mu
    out = np.exp(-(d * d) / params.sigma_sq)
    return float(out) if out.ndim == 0 else out


def fuzzy_membership_t(u: nx.Tensor, params: FuzzyParams) -> nx.Tensor:
    d = nx.sub(u, params.mu)
    return nx.exp(nx.mul(nx.square(d), -1.0 / params.sigma_sq))
