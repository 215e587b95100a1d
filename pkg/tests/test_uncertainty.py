import math

import numpy as np
import pytest

from aiplace import numerics as nx
from aiplace.domain import make_chain
from aiplace.evaluator import RealizedDemand
from aiplace.uncertainty import (FuzzyParams, OCParameters, catalog_stats, draw_realization,
                                 fuzzy_membership, fuzzy_membership_t, oc_feature, oc_loss,
                                 oc_score, orthonormality_error, realized_stats, stat_scales,
                                 train_oc)
from conftest import grad_errors


class FixedRng:
    """Stands in for a Generator: normal() and uniform() return preset values."""

    def __init__(self, normal, uniform):
        self._normal, self._uniform = normal, uniform

    def normal(self, *_):
        return self._normal

    def uniform(self, *_):
        return self._uniform


def test_zero_deltas_give_unit_factors(hosts10):
    ch = make_chain(hosts10, [0, 6])
    f = draw_realization(ch, hosts10, FixedRng(0.0, 0.0))
    assert f == RealizedDemand.ones(2)


def test_delta_conversion(hosts10):
    ch = make_chain(hosts10, [0])
    f = draw_realization(ch, hosts10, FixedRng(1.0, 15.0))
    assert f.f_c == f.f_g == (1.25,)
    assert f.f_d == (1.25,)
    assert f.f_q == (1.1875,)


def test_draws_are_clipped_and_reproducible(hosts10):
    ch = make_chain(hosts10, list(range(8)) * 4)
    a = draw_realization(ch, hosts10, np.random.default_rng(5))
    b = draw_realization(ch, hosts10, np.random.default_rng(5))
    assert a == b
    for k, model in enumerate(ch.model_ids):
        p = hosts10.catalog[model]
        assert 0.0 <= p.nominal_cpu * (a.f_c[k] - 1) <= 1.0 + 1e-12
        assert 0.0 <= p.nominal_completion * (a.f_q[k] - 1) <= 15.0 + 1e-12


def test_oc_feature_normalization(hosts10):
    scales = stat_scales(hosts10)
    top = oc_feature(np.zeros(10), hosts10.catalog[0], scales)
    assert top.tolist() == [0.0] * 10 + [1.0, 1.0, 1.0, 1.0]
    assert oc_feature(np.ones(10), hosts10.catalog[6], scales)[10] == 0.25
    assert catalog_stats(hosts10).shape == (8, 4)


def test_realized_stats_scale(hosts10):
    ch = make_chain(hosts10, [0])
    f = RealizedDemand((1.25,), (1.25,), (1.0,), (1.0,))
    assert realized_stats(ch, f, hosts10).tolist() == [[1.25, 1.25, 1.0, 1.0]]


def _oc(c, w=1.0):
    return OCParameters(nx.Tensor(np.array(c, dtype=float), requires_grad=True), w)


def test_oc_loss_vanishes_for_orthonormal_null_certificates():
    c = np.zeros((6, 2))
    c[4, 0] = c[5, 1] = 1.0
    x = np.hstack([np.random.default_rng(0).normal(size=(10, 4)), np.zeros((10, 2))])
    assert oc_loss(_oc(c), x).item() == 0.0


def test_oc_loss_of_zero_map_is_weight_times_du():
    x = np.random.default_rng(0).normal(size=(5, 14))
    assert oc_loss(_oc(np.zeros((14, 4)), 2.5), x).item() == 10.0


def test_oc_loss_invariant_to_batch_duplication():
    rng = np.random.default_rng(1)
    params = _oc(rng.normal(size=(14, 4)))
    x = rng.normal(size=(7, 14))
    a = oc_loss(params, x).item()
    b = oc_loss(params, np.vstack([x, x])).item()
    assert a == pytest.approx(b, rel=1e-14)


def test_oc_loss_shape_errors():
    params = _oc(np.zeros((14, 4)))
    with pytest.raises(nx.ShapeError):
        oc_loss(params, np.zeros((3, 13)))
    with pytest.raises(ValueError):
        oc_loss(params, np.zeros((0, 14)))
    with pytest.raises(nx.ShapeError):
        oc_score(params, np.zeros(5))


def test_oc_loss_gradient_matches_finite_differences():
    rng = np.random.default_rng(2)
    params = _oc(rng.normal(size=(14, 4)) * 0.5, 0.7)
    params.certificates.name = "C"
    x = nx.Tensor(rng.normal(size=(9, 14)))
    assert grad_errors(lambda: oc_loss(params, x), [params.certificates])["C"] < 1e-6


def test_oc_score_examples():
    c = np.zeros((14, 4))
    c[:4, :4] = np.eye(4)
    x = np.zeros(14)
    x[:4] = 1.0
    assert oc_score(_oc(c), x) == 1.0
    x[:4] = 0.0
    x[5:] = 3.0
    assert oc_score(_oc(c), x) == 0.0
    # zero certificate rows on zero feature slots change nothing
    c2 = np.vstack([c, np.zeros((2, 4))])
    assert oc_score(_oc(c2), np.r_[np.ones(4), np.zeros(12)]) == 1.0


def test_trained_certificates_separate_shifted_features():
    rng = np.random.default_rng(0)
    basis = rng.normal(size=(14, 6))
    feats = rng.normal(size=(2000, 6)) @ basis.T * 0.3
    params = OCParameters.init(10, rng)
    train_oc(params, feats, max_steps=4000)
    assert orthonormality_error(params) < 0.1
    shifted = feats + rng.normal(size=(1, 14))
    assert oc_score(params, feats).mean() < oc_score(params, shifted).mean()


def test_membership_values():
    p = FuzzyParams(mu=0.3, sigma_sq=2.0)
    assert fuzzy_membership(0.3, p) == 1.0
    assert abs(fuzzy_membership(0.3 + math.sqrt(2.0), p) - math.exp(-1)) < 1e-12
    assert fuzzy_membership(1e6, p) == 0.0


def test_membership_symmetric_monotone_and_bounded():
    p = FuzzyParams()
    d = np.linspace(0, 5, 200)
    up, down = fuzzy_membership(p.mu + d, p), fuzzy_membership(p.mu - d, p)
    assert np.array_equal(up, down)
    assert np.all(np.diff(up) <= 0)
    assert np.all((up > 0) | (d > 4)) and np.all(up <= 1)


def test_tensor_membership_matches_numpy():
    p = FuzzyParams(0.2, 0.5)
    u = np.array([0.0, 0.2, 1.3])
    assert np.allclose(fuzzy_membership_t(nx.Tensor(u), p).data, fuzzy_membership(u, p), atol=1e-15)


def test_sigma_must_be_positive():
    with pytest.raises(ValueError):
        FuzzyParams(sigma_sq=0.0)
