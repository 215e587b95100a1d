"""Experiment orchestration and the ``aiplace`` command line.

Every request stream is derived from the experiment seed alone, so all
algorithms in a comparison see the same chains and the same realized draw
per request. Results go to append-only CSV files with a fixed schema.

Exit codes: 0 success, 1 usage error, 2 internal failure, 3 oracle mismatch.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
import time
import warnings
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .domain import Scenario, ScenarioError, generate_request, load_scenario, make_chain
from .evaluator import acceptance_ratio, check_constraints, energy
from .oracle import oracle_check
from .policy import PolicyParameters, place
from .solvers import branch_and_bound, first_fit
from .trainer import (CheckpointError, TrainConfig, Trainer, TrainingError,
                      load_checkpoint, save_checkpoint)
from .uncertainty import draw_realization

log = logging.getLogger("aiplace")

NEURAL = ("s2s", "s2s_nofuzzy")
ALGORITHMS = NEURAL + ("ff", "bnb")
EXIT_OK, EXIT_USAGE, EXIT_INTERNAL, EXIT_ORACLE = 0, 1, 2, 3


class UsageError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentSpec:
    scenario_path: str
    algorithm: str
    n_requests: int
    chain_length: int
    seed: int = 0
    checkpoint_path: str | None = None
    output_path: str | None = None
    margin: float = 1.0  # baseline planning safety margin
    node_limit: int = 200_000
    record_time: bool = False

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise UsageError(f"unknown algorithm {self.algorithm!r}; choose from {ALGORITHMS}")
        if self.n_requests < 1 or self.chain_length < 1:
            raise UsageError("n_requests and chain_length must be positive")
        if (self.checkpoint_path is not None) != (self.algorithm in NEURAL):
            raise UsageError(f"{self.algorithm}: a checkpoint is required for neural "
                             "algorithms and meaningless for baselines")


@dataclass(frozen=True)
class ResultRow:
    algorithm: str
    n_hosts: int
    chain_length: int
    n_requests: int
    accepted: int
    accept_ratio: float
    mean_energy: float | None  # over accepted requests
    mean_solve_time: float | None  # ms; only recorded on request
    seed: int

    def __post_init__(self):
        if not 0 <= self.accepted <= self.n_requests:
            raise ValueError("accepted must lie in [0, n_requests]")


RESULT_COLUMNS = tuple(f.name for f in fields(ResultRow))


def _fmt(v) -> str:
    if v is None:
        return ""
    return repr(v) if isinstance(v, float) else str(v)


def append_rows(path: str | Path, rows: Sequence[ResultRow]) -> None:
    path = Path(path)
    new = not path.exists() or path.stat().st_size == 0
    if not new:
        with path.open(newline="") as fh:
            header = next(csv.reader(fh), None)
        if tuple(header or ()) != RESULT_COLUMNS:
            raise ValueError(f"{path} has a different column layout")
    with path.open("a", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if new:
            w.writerow(RESULT_COLUMNS)
        for r in rows:
            w.writerow([_fmt(getattr(r, c)) for c in RESULT_COLUMNS])


def load_rows(path: str | Path) -> list[ResultRow]:
    out = []
    with Path(path).open(newline="") as fh:
        for rec in csv.DictReader(fh):
            opt = lambda k: None if rec[k] == "" else float(rec[k])  # noqa: E731
            out.append(ResultRow(rec["algorithm"], int(rec["n_hosts"]), int(rec["chain_length"]),
                                 int(rec["n_requests"]), int(rec["accepted"]),
                                 float(rec["accept_ratio"]), opt("mean_energy"),
                                 opt("mean_solve_time"), int(rec["seed"])))
    return out


# ---------------------------------------------------------------- requests

def request_stream(scenario: Scenario, n_requests: int, chain_length: int, seed: int):
    """Chains and their realized draws; request i's draw has its own rng stream."""
    chain_rng = np.random.default_rng(np.random.SeedSequence([seed, 0, chain_length]))
    chains = [generate_request(scenario, chain_length, chain_rng) for _ in range(n_requests)]
    draws = [draw_realization(ch, scenario, np.random.default_rng(
        np.random.SeedSequence([seed, 1, chain_length, i]))) for i, ch in enumerate(chains)]
    return chains, draws


def _load_policy(spec: ExperimentSpec, scenario: Scenario) -> PolicyParameters:
    policy = load_checkpoint(spec.checkpoint_path, scenario)
    if spec.algorithm == "s2s_nofuzzy" and policy.config.use_fuzzy:
        policy.config = replace(policy.config, use_fuzzy=False)
    return policy


def solve_all(spec: ExperimentSpec, scenario: Scenario, chains) -> tuple[list, list[float]]:
    """Proposed placement (or None) and solve time in ms for every chain."""
    if spec.algorithm in NEURAL:
        policy = _load_policy(spec, scenario)
        t0 = time.perf_counter()
        pls = place(chains, policy, scenario)
        per = (time.perf_counter() - t0) * 1000.0 / len(chains)
        return pls, [per] * len(chains)
    out, times = [], []
    for ch in chains:
        if spec.algorithm == "ff":
            res = first_fit(ch, scenario, margin=spec.margin)
        else:
            res = branch_and_bound(ch, scenario, node_limit=spec.node_limit, margin=spec.margin)
        out.append(res.placement)
        times.append(res.wall_time)
    return out, times


def judge(placements, chains, draws, scenario: Scenario) -> tuple[list[bool], list[float]]:
    ok, energies = [], []
    for pl, ch, f in zip(placements, chains, draws):
        good = pl is not None and check_constraints(pl, ch, f, scenario).feasible
        ok.append(good)
        if good:
            energies.append(energy(pl, ch, f, scenario))
    return ok, energies


def run_experiment(spec: ExperimentSpec, scenario: Scenario | None = None) -> ResultRow:
    scenario = load_scenario(spec.scenario_path) if scenario is None else scenario
    chains, draws = request_stream(scenario, spec.n_requests, spec.chain_length, spec.seed)
    pls, times = solve_all(spec, scenario, chains)
    ok, energies = judge(pls, chains, draws, scenario)
    row = ResultRow(spec.algorithm, scenario.n_hosts, spec.chain_length, spec.n_requests,
                    sum(ok), acceptance_ratio(ok),
                    float(np.mean(energies)) if energies else None,
                    float(np.mean(times)) if spec.record_time else None, spec.seed)
    if spec.output_path is not None:
        append_rows(spec.output_path, [row])
    return row


def compare(specs: Sequence[ExperimentSpec], out_dir: str | Path | None = None) -> list[ResultRow]:
    """One row per (algorithm, chain length); writes results.csv and plot_data.csv."""
    if not specs:
        raise UsageError("nothing to compare")
    first = specs[0]
    for s in specs:
        if (s.scenario_path, s.n_requests, s.seed) != (first.scenario_path, first.n_requests, first.seed):
            raise UsageError("compared experiments must share scenario, request count and seed")
    scenario = load_scenario(first.scenario_path)
    rows = [run_experiment(replace(s, output_path=None), scenario) for s in specs]
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        append_rows(out / "results.csv", rows)
        write_plot_data(out / "plot_data.csv", rows)
    return rows


def write_plot_data(path: str | Path, rows: Sequence[ResultRow]) -> None:
    """Wide table: chain_length, then one accept_ratio column per algorithm."""
    algos = list(dict.fromkeys(r.algorithm for r in rows))
    lengths = sorted({r.chain_length for r in rows})
    cell = {(r.algorithm, r.chain_length): r.accept_ratio for r in rows}
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["chain_length", *algos])
        for m in lengths:
            w.writerow([m, *(_fmt(cell.get((a, m))) for a in algos)])


# --------------------------------------------------------------------- CLI

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _ints(text: str) -> list[int]:
    try:
        vals = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _algos(text: str) -> list[str]:
    vals = [v.strip() for v in text.split(",") if v.strip()]
    bad = [v for v in vals if v not in ALGORITHMS]
    if bad or not vals:
        raise argparse.ArgumentTypeError(f"unknown algorithms {bad}; choose from {ALGORITHMS}")
    return vals


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="aiplace", description="AI model chain placement under demand uncertainty")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train a placement policy and save a checkpoint")
    t.add_argument("--scenario", required=True)
    t.add_argument("--epochs", type=int, required=True)
    t.add_argument("--chain-length", type=_ints, required=True,
                   help="one length, or a comma list to mix lengths across batches")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", required=True)
    t.add_argument("--episodes", type=int, default=64, help="episodes per epoch")
    t.add_argument("--batch-size", type=int, default=64)
    t.add_argument("--lr", type=float, default=1e-4)
    t.add_argument("--entropy-coeff", type=float, default=0.01)
    t.add_argument("--oc-samples", type=int, default=10_000)
    t.add_argument("--no-fuzzy", action="store_true", help="train with memberships fixed at 1")
    t.add_argument("--metrics", help="append per-epoch metrics to this CSV")

    e = sub.add_parser("evaluate", help="judge one algorithm on a request batch")
    e.add_argument("--scenario", required=True)
    e.add_argument("--algo", choices=ALGORITHMS, required=True)
    e.add_argument("--requests", type=int, required=True)
    e.add_argument("--chain-length", type=int, required=True)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--checkpoint")
    e.add_argument("--out", required=True)
    e.add_argument("--margin", type=float, default=1.0)
    e.add_argument("--record-time", action="store_true", help="fill mean_solve_time")

    c = sub.add_parser("compare", help="paired comparison over algorithms and chain lengths")
    c.add_argument("--scenario", required=True)
    c.add_argument("--algos", type=_algos, required=True)
    c.add_argument("--lengths", type=_ints, required=True)
    c.add_argument("--requests", type=int, required=True)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--out", required=True, help="output directory")
    c.add_argument("--checkpoint", help="policy for s2s")
    c.add_argument("--checkpoint-nofuzzy",
                   help="policy for s2s_nofuzzy; defaults to --checkpoint with memberships at 1")
    c.add_argument("--margin", type=float, default=1.0)
    c.add_argument("--record-time", action="store_true")

    s = sub.add_parser("solve", help="place one chain with a baseline solver")
    s.add_argument("--scenario", required=True)
    s.add_argument("--chain", type=_ints, required=True, help="comma-separated catalog ids")
    s.add_argument("--algo", choices=("ff", "bnb"), required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--margin", type=float, default=1.0)
    s.add_argument("--node-limit", type=int, default=200_000)
    s.add_argument("--record-time", action="store_true")

    o = sub.add_parser("oracle-check", help="cross-check solvers and evaluator on random instances")
    o.add_argument("--trials", type=int, default=50)
    o.add_argument("--seed", type=int, default=0)
    o.add_argument("--scenario", default="tiny")
    o.add_argument("--bound-offset", type=float, default=0.0, help=argparse.SUPPRESS)
    return p


def _cmd_train(a) -> int:
    scenario = load_scenario(a.scenario)
    cfg = TrainConfig(epochs=a.epochs, episodes=a.episodes, batch_size=a.batch_size,
                      learning_rate=a.lr, entropy_coeff=a.entropy_coeff,
                      chain_length=tuple(a.chain_length), seed=a.seed, oc_samples=a.oc_samples)
    policy = PolicyParameters.init(scenario, np.random.default_rng(np.random.SeedSequence([a.seed, 1])),
                                   use_fuzzy=not a.no_fuzzy)
    trainer = Trainer(scenario, policy, cfg)
    if a.metrics and Path(a.metrics).exists():
        Path(a.metrics).unlink()

    def report(mt):
        if mt.epoch % max(1, cfg.epochs // 20) == 0 or mt.epoch == cfg.epochs:
            log.info("epoch %d reward %.4f accept %.3f", mt.epoch, mt.mean_reward, mt.accept_fraction)

    trainer.train(metrics_path=a.metrics, callback=report)
    save_checkpoint(policy, a.out)
    return EXIT_OK


def _cmd_evaluate(a) -> int:
    spec = ExperimentSpec(a.scenario, a.algo, a.requests, a.chain_length, a.seed,
                          a.checkpoint, a.out, margin=a.margin, record_time=a.record_time)
    row = run_experiment(spec)
    print(f"{row.algorithm} m={row.chain_length}: {row.accepted}/{row.n_requests} accepted")
    return EXIT_OK


def _cmd_compare(a) -> int:
    specs = []
    for algo in a.algos:
        ckpt = None
        if algo == "s2s":
            ckpt = a.checkpoint
        elif algo == "s2s_nofuzzy":
            ckpt = a.checkpoint_nofuzzy or a.checkpoint
        if algo in NEURAL and ckpt is None:
            raise UsageError(f"{algo} needs --checkpoint")
        for m in a.lengths:
            specs.append(ExperimentSpec(a.scenario, algo, a.requests, m, a.seed, ckpt,
                                        margin=a.margin, record_time=a.record_time))
    out = Path(a.out)
    for name in ("results.csv", "plot_data.csv"):
        if (out / name).exists():
            (out / name).unlink()
    for r in compare(specs, out):
        print(f"{r.algorithm:12s} m={r.chain_length:3d} accept={r.accept_ratio:.3f}")
    return EXIT_OK


SOLVE_COLUMNS = ("algorithm", "chain", "status", "objective", "placement", "nodes_explored",
                 "wall_time")


def _cmd_solve(a) -> int:
    scenario = load_scenario(a.scenario)
    try:
        chain = make_chain(scenario, a.chain)
    except ValueError as exc:
        raise UsageError(str(exc))
    if a.algo == "ff":
        res = first_fit(chain, scenario, margin=a.margin)
    else:
        res = branch_and_bound(chain, scenario, node_limit=a.node_limit, margin=a.margin)
    place_s = "" if res.placement is None else " ".join(map(str, res.placement.host_of))
    with Path(a.out).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SOLVE_COLUMNS)
        w.writerow([a.algo, " ".join(map(str, chain.model_ids)), res.status, _fmt(res.objective),
                    place_s, res.nodes_explored, _fmt(res.wall_time) if a.record_time else ""])
    print(f"{a.algo}: {res.status} {res.objective if res.objective is not None else ''}")
    return EXIT_OK


def _cmd_oracle(a) -> int:
    if a.trials < 0:
        raise UsageError("--trials must be >= 0")
    scenario = load_scenario(a.scenario) if a.scenario != "random" else None
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        rep = oracle_check(scenario, a.trials, a.seed, bound_offset=a.bound_offset)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    for msg in rep.mismatches:
        print(msg, file=sys.stderr)
    verdict = "pass" if rep.passed else "FAIL"
    print(f"oracle check {verdict}: {rep.trials} trials, {rep.feasible} feasible, "
          f"{len(rep.mismatches)} mismatches")
    return EXIT_OK if rep.passed else EXIT_ORACLE


COMMANDS = {"train": _cmd_train, "evaluate": _cmd_evaluate, "compare": _cmd_compare,
            "solve": _cmd_solve, "oracle-check": _cmd_oracle}


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ScenarioError, CheckpointError, FileNotFoundError) as exc:
        print(f"aiplace: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TrainingError, FloatingPointError, RuntimeError, ValueError) as exc:
        log.exception("internal failure")
        print(f"aiplace: internal failure: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
