"""Acceptance suite: one PASS/FAIL line per criterion, at the stated tolerances.

Criteria 8 and 9 train policies and take minutes; they are marked slow but are
part of the default run.
"""
import math
import statistics
import time

import numpy as np
import pytest

from aiplace import numerics as nx
from aiplace.domain import Placement, load_scenario, make_chain
from aiplace.evaluator import PLACEMENT_FAMILIES, RealizedDemand, acceptance_ratio, check_constraints, energy
from aiplace.harness import ExperimentSpec, judge, request_stream, run_experiment
from aiplace.oracle import oracle_check, random_scenario
from aiplace.policy import (PolicyParameters, alignment, decode, encode, fit_certificates,
                            fused_alignment, oc_training_features, place, value_estimate)
from aiplace.solvers import first_fit
from aiplace.trainer import TrainConfig, load_checkpoint, save_checkpoint, train_policy, value_loss
from aiplace.uncertainty import (OCParameters, oc_loss, oc_scores, orthonormality_error,
                                 fuzzy_membership, FuzzyParams)
from conftest import grad_errors, toy_scenario
from reference import traditional_model


@pytest.fixture
def verdict(capsys):
    def report(n: int, ok: bool, detail: str) -> None:
        with capsys.disabled():
            print(f"\ncriterion {n:2d} {'PASS' if ok else 'FAIL'}: {detail}")
        assert ok, detail
    return report


def test_c01_oracle_equivalence(verdict):
    t0 = time.perf_counter()
    rep = oracle_check(None, trials=50, seed=0)
    secs = time.perf_counter() - t0
    mixed = 0 < rep.feasible < rep.trials
    verdict(1, rep.passed and mixed and secs < 10.0,
            f"{rep.trials} instances, {rep.feasible} feasible, {len(rep.mismatches)} mismatches, "
            f"{secs:.2f} s")


def test_c02_zero_uncertainty_reduction(verdict):
    rng = np.random.default_rng(2)
    worst, family_mismatch = 0.0, 0
    for _ in range(100):
        s = random_scenario(rng, int(rng.integers(1, 5)))
        m = int(rng.integers(1, 7))
        ch = make_chain(s, rng.integers(0, len(s.catalog), size=m))
        pl = Placement(tuple(int(h) for h in rng.integers(0, s.n_hosts, size=m)))
        e_ref, bad = traditional_model(s, ch.model_ids, pl.host_of, ch.latency_budget)
        ones = RealizedDemand.ones(m)
        worst = max(worst, abs(energy(pl, ch, ones, s) - e_ref))
        got = set(check_constraints(pl, ch, ones, s).violated) & set(PLACEMENT_FAMILIES)
        family_mismatch += got != bad
    verdict(2, worst <= 1e-9 and family_mismatch == 0,
            f"max |dE| = {worst:.3g} W over 100 instances, {family_mismatch} constraint mismatches")


def test_c03_gradient_fidelity(verdict):
    t0 = time.perf_counter()
    s = toy_scenario()
    p = PolicyParameters.init(s, np.random.default_rng(1), embedding_size=3)
    chain = make_chain(s, [0, 2, 1])
    rng = np.random.default_rng(4)
    cert = OCParameters(nx.Tensor(rng.normal(size=(7, 4)) * 0.5, requires_grad=True, name="C"), 0.7)
    feats = nx.Tensor(rng.normal(size=(6, 7)))
    errs = {f"oc:{k}": v for k, v in grad_errors(lambda: oc_loss(cert, feats), [cert.certificates]).items()}

    def trace_lp():
        return nx.sum(decode(encode(chain, p), s, p, actions=np.array([[1, 1, 2]])).log_probs)

    errs.update({f"trace:{k}": v for k, v in grad_errors(trace_lp, p.policy_tensors()).items()})
    rewards = np.array([-0.4])

    def vloss():
        return value_loss(value_estimate(encode(chain, p), p), rewards)

    errs.update({f"value:{k}": v for k, v in grad_errors(vloss, p.value_tensors()).items()})
    secs = time.perf_counter() - t0
    worst = max(errs, key=errs.get)
    verdict(3, errs[worst] < 1e-3 and secs < 60.0,
            f"{len(errs)} parameters, worst relative error {errs[worst]:.2e} ({worst}), {secs:.1f} s")


def test_c04_membership_one_reduction(verdict):
    s = load_scenario("hosts10")
    p = PolicyParameters.init(s, np.random.default_rng(0))
    rng = np.random.default_rng(4)
    e = p.config.embedding_size
    unequal = 0
    for _ in range(1000):
        m = int(rng.integers(1, 20))
        d, src = nx.Tensor(rng.normal(size=e)), nx.Tensor(rng.normal(size=(m, e)))
        feats = nx.Tensor(rng.normal(size=(m, e + 4)))
        a = alignment(d, src, p).data
        b = fused_alignment(d, src, feats, p, membership=np.ones(m)).data
        unequal += a.tobytes() != b.tobytes()
    verdict(4, unequal == 0, f"{1000 - unequal}/1000 instances bit-equal")


def test_c05_fuzzy_and_softmax_invariants(verdict):
    fp = FuzzyParams(mu=0.0, sigma_sq=1.0)
    at_mu = fuzzy_membership(fp.mu, fp)
    at_sigma = fuzzy_membership(fp.mu + math.sqrt(fp.sigma_sq), fp)
    s = load_scenario("hosts10")
    p = PolicyParameters.init(s, np.random.default_rng(0))
    rng = np.random.default_rng(5)
    worst_sum, masked_mass, n_masked = 0.0, 0.0, 0
    for length in (6, 12, 18, 24):
        chains = [make_chain(s, rng.integers(0, len(s.catalog), size=length)) for _ in range(32)]
        for mode in ("greedy", "sample"):
            tr = decode(encode(chains, p), s, p, mode=mode, rng=rng)
            worst_sum = max(worst_sum, float(np.max(np.abs(tr.distributions.sum(-1) - 1))))
            masked_mass = max(masked_mass, float(np.max(tr.distributions[tr.masks], initial=0.0)))
            n_masked += int(tr.masks.sum())
    ok = (at_mu == 1.0 and abs(at_sigma - math.exp(-1)) <= 1e-12 and worst_sum <= 1e-9
          and masked_mass == 0.0 and n_masked > 0)
    verdict(5, ok, f"m(mu)={at_mu}, m(mu+sigma)-1/e={at_sigma - math.exp(-1):.1e}, "
                   f"max |sum-1|={worst_sum:.1e}, mass on {n_masked} masked hosts={masked_mass}")


def test_c06_oc_separation(verdict):
    s = load_scenario("hosts10")
    p = PolicyParameters.init(s, np.random.default_rng(0))
    fit_certificates(p, s, np.random.default_rng(1))
    held_out = oc_training_features(p, s, np.random.default_rng(2), n_samples=1000)
    doubled = held_out.copy()
    doubled[:, -4:] *= 2.0
    c = p.oc.certificates
    u_in = float(oc_scores(c, nx.Tensor(held_out)).data.mean())
    u_out = float(oc_scores(c, nx.Tensor(doubled)).data.mean())
    ortho = orthonormality_error(p.oc)
    verdict(6, u_in < u_out and ortho < 0.1,
            f"mean u_e {u_in:.3g} in-distribution vs {u_out:.3g} doubled stats, "
            f"||C'C - I||_F = {ortho:.4f}")


def test_c07_metric_arithmetic(verdict, monkeypatch):
    from aiplace import harness
    monkeypatch.setattr(harness, "judge", lambda pls, ch, dr, s: ([True] * 50 + [False] * 50, [1.0] * 50))
    row = run_experiment(ExperimentSpec("tiny", "ff", 100, 2))
    direct = acceptance_ratio([True] * 50 + [False] * 50)
    verdict(7, row.accept_ratio == 0.5 and direct == 0.5 and row.accepted == 50,
            f"50 of 100 -> {row.accept_ratio}")


def _greedy_accept(policy, s, length, n=128, seed=0):
    chains, draws = request_stream(s, n, length, seed)
    ok, _ = judge(place(chains, policy, s), chains, draws, s)
    return acceptance_ratio(ok)


def _ff_accept(s, length, n=128, seed=0):
    chains, draws = request_stream(s, n, length, seed)
    ok, _ = judge([first_fit(c, s).placement for c in chains], chains, draws, s)
    return acceptance_ratio(ok)


@pytest.mark.slow
def test_c08_trend_reproduction(verdict):
    s = load_scenario("hosts10")
    cfg = TrainConfig(epochs=1500, learning_rate=1e-3, chain_length=tuple(range(4, 19, 2)), seed=0)
    t0 = time.perf_counter()
    policy, _ = train_policy(s, cfg)
    secs = time.perf_counter() - t0
    ratios = {m: _greedy_accept(policy, s, m) for m in (12, 14, 16, 18)}
    vals = list(ratios.values())
    monotone = all(a >= b for a, b in zip(vals, vals[1:]))
    verdict(8, monotone and vals[-1] < vals[0] and cfg.epochs <= 5000 and secs < 1800,
            f"accept by length {ratios} after {cfg.epochs} epochs ({secs:.0f} s)")


@pytest.mark.slow
def test_c09_uncertainty_advantage(verdict):
    s = load_scenario("hosts20")
    lengths = (4, 8, 12, 16, 20, 24, 28, 30)
    fuzzy, plain = [], []
    for seed in (0, 1, 2):
        cfg = TrainConfig(epochs=4000, learning_rate=1e-3, chain_length=lengths, seed=seed)
        fuzzy.append(_greedy_accept(train_policy(s, cfg, use_fuzzy=True)[0], s, 28))
        plain.append(_greedy_accept(train_policy(s, cfg, use_fuzzy=False)[0], s, 28))
    ff = _ff_accept(s, 28)
    med_f, med_p = statistics.median(fuzzy), statistics.median(plain)
    verdict(9, med_f >= 1.2 * ff and med_f >= med_p,
            f"length 28: s2s {fuzzy} (median {med_f}), s2s_nofuzzy {plain} (median {med_p}), "
            f"first_fit {ff}")


def test_c10_cli_determinism(verdict, tmp_path):
    from aiplace.harness import main
    ckpt = tmp_path / "p.json"
    save_checkpoint(PolicyParameters.init(load_scenario("tiny"), np.random.default_rng(0)), ckpt)
    commands = {
        "train": (lambda d: ["train", "--scenario", "tiny", "--epochs", "2", "--chain-length", "3",
                             "--episodes", "8", "--batch-size", "4", "--oc-samples", "100",
                             "--out", str(d / "c.json"), "--metrics", str(d / "m.csv")],
                  ("c.json", "m.csv")),
        "evaluate": (lambda d: ["evaluate", "--scenario", "tiny", "--algo", "s2s", "--requests", "16",
                                "--chain-length", "3", "--checkpoint", str(ckpt),
                                "--out", str(d / "r.csv")], ("r.csv",)),
        "compare": (lambda d: ["compare", "--scenario", "tiny", "--algos", "s2s,s2s_nofuzzy,ff,bnb",
                               "--lengths", "2,4", "--requests", "8", "--checkpoint", str(ckpt),
                               "--out", str(d)], ("results.csv", "plot_data.csv")),
        "solve": (lambda d: ["solve", "--scenario", "hosts10", "--chain", "0,3,5", "--algo", "bnb",
                             "--out", str(d / "s.csv")], ("s.csv",)),
    }
    differing = []
    for name, (args, outputs) in commands.items():
        blobs = []
        for run in ("a", "b"):
            d = tmp_path / name / run
            d.mkdir(parents=True)
            assert main(args(d)) == 0
            blobs.append([(d / o).read_bytes() for o in outputs])
        if blobs[0] != blobs[1]:
            differing.append(name)
    verdict(10, not differing, f"{len(commands) - len(differing)}/{len(commands)} subcommands "
                               f"byte-identical{'; differing: ' + ', '.join(differing) if differing else ''}")


def test_c11_checkpoint_round_trip(verdict, tmp_path):
    s = load_scenario("hosts20")
    p = PolicyParameters.init(s, np.random.default_rng(3))
    fit_certificates(p, s, np.random.default_rng(4), n_samples=500, max_steps=200)
    save_checkpoint(p, tmp_path / "c.json")
    q = load_checkpoint(tmp_path / "c.json", s)
    same = [k for k, t in p.tensors.items()
            if k in q.tensors and q[k].data.dtype == t.data.dtype and q[k].data.tobytes() == t.data.tobytes()]
    verdict(11, len(same) == len(p.tensors) == len(q.tensors),
            f"{len(same)}/{len(p.tensors)} tensors bit-exact")
