"""End-to-end acceptance criteria.

Each test records its outcome in ``conftest.ACCEPTANCE`` so the session ends
with one PASS/FAIL line per criterion, then asserts.
"""
import json
import math
import time

import numpy as np
import pytest

import conftest
from conftest import stub_command
from detnas_bench import costs, database as db, metrics, oracle
from detnas_bench.cli import EXIT_EVALUATOR, EXIT_OK, main
from detnas_bench.evaluator import Evaluator, EvaluatorSpec, synthetic_map, synthetic_map_genes
from detnas_bench.evolution import EAParams, cost_latency, ea_search, model_fitness
from detnas_bench.predictor import GBDTParams, load_model, save_model
from detnas_bench.sampling import REPAIRED_DIMS, bin_edges, sample_lhs, sample_stratified
from detnas_bench.self_evolve import (
    SelfEvolveConfig, initial_pool, run_random_expansion, run_self_evolve, train_ensemble,
    validation_report,
)
from detnas_bench.space import (
    CARDINALITY, FIELDS, PALETTES, configs_from_genes, encode, encode_genes,
    genes_to_index, index_to_genes, validate,
)

SEEDS = (1, 2, 3)
# 8 numeric columns (channels, depths), then one one-hot block per operator field
ONEHOT_GROUPS = [(8, 10), (10, 12), (12, 15), (15, 19), (19, 22), (22, 24)]
ORACLE_SEED = 1


def record(k, ok, detail):
    conftest.ACCEPTANCE[k] = (bool(ok), detail)
    assert ok, detail


def cli(capsys, *argv):
    code = main([str(a) for a in argv])
    out, _ = capsys.readouterr()
    return code, out


@pytest.fixture(scope="module")
def pools():
    spec = EvaluatorSpec("synthetic", oracle_seed=ORACLE_SEED)
    return {s: initial_pool(Evaluator(spec), s) for s in SEEDS}


def test_criterion_1_space_exactness(capsys):
    t0 = time.perf_counter()
    code, out = cli(capsys, "space", "info")
    reported = json.loads(out)["cardinality"]
    every = np.arange(CARDINALITY)
    configs = configs_from_genes(index_to_genes(every))
    all_valid = all(validate(c) for c in configs)
    distinct = len({c.canonical() for c in configs})
    probe = np.random.default_rng(1).integers(0, CARDINALITY, 10_000)
    round_trip = bool(np.array_equal(genes_to_index(index_to_genes(probe)), probe))
    elapsed = time.perf_counter() - t0
    ok = (code == EXIT_OK and reported == 1_679_616 and all_valid and distinct == CARDINALITY
          and round_trip and elapsed < 60)
    record(1, ok, f"cardinality {reported}, all valid {all_valid}, distinct {distinct}, "
                  f"round trip {round_trip}, {elapsed:.1f}s")


def test_criterion_2_encoding():
    rng = np.random.default_rng(2)
    genes = index_to_genes(rng.integers(0, CARDINALITY, 10_000))
    X = encode_genes(genes)
    sums_ok = all(np.all(X[:, lo:hi].sum(axis=1) == 1) for lo, hi in ONEHOT_GROUPS)
    single = encode(configs_from_genes(genes[:1])[0])
    ok = X.shape == (10_000, 24) and single.shape == (24,) and sums_ok
    record(2, ok, f"dim {X.shape[1]}, one-hot sums {sums_ok}")


def brute_counts(y, yhat):
    C = D = Tx = Ty = 0
    for i in range(len(y)):
        for j in range(i + 1, len(y)):
            a = (y[j] > y[i]) - (y[j] < y[i])
            b = (yhat[j] > yhat[i]) - (yhat[j] < yhat[i])
            if a and b:
                C, D = (C + 1, D) if a == b else (C, D + 1)
            elif a and not b:
                Tx += 1
            elif b and not a:
                Ty += 1
    denom = (C + D + Tx) * (C + D + Ty)
    return None if denom == 0 else (C - D) / math.sqrt(denom)


def test_criterion_3_metrics_oracle():
    rng = np.random.default_rng(3)
    mismatches = 0
    for _ in range(1000):
        n = int(rng.integers(2, 201))
        # coarse grids force plenty of ties on both sides
        y = np.round(rng.uniform(0.25, 0.35, n), int(rng.integers(2, 5)))
        yhat = y + rng.normal(0, rng.choice([0.0005, 0.003, 0.02]), n)
        if rng.random() < 0.1:
            yhat[:] = yhat[0]
        rounded = [float(v) for v in metrics.round_sparse(yhat)]
        for got, want in ((metrics.kendall_tau_b(y, yhat), brute_counts(y.tolist(), yhat.tolist())),
                          (metrics.sparse_kendall_tau(y, yhat), brute_counts(y.tolist(), rounded))):
            if got != want:
                mismatches += 1
    fixture = metrics.kendall_tau_b([1, 2, 3, 4], [1, 1, 2, 3])
    sparse_fixture = metrics.sparse_kendall_tau([0.250, 0.260, 0.270, 0.280],
                                                [0.2503, 0.2504, 0.272, 0.281])
    r2 = metrics.r_squared([0, 1, 2], [0.5, 1, 1.5])
    target = 5 / math.sqrt(30)
    ok = (mismatches == 0 and abs(fixture - target) <= 1e-12
          and abs(sparse_fixture - target) <= 1e-12 and r2 == 0.75)
    record(3, ok, f"{mismatches} mismatches on 1000 instances, tau-b fixture {fixture:.12f}, "
                  f"r2 fixture {r2}")


def test_criterion_4_sampling_balance():
    lhs = sample_lhs(400, 4)
    worst = []
    for d, f in enumerate(FIELDS):
        if d in REPAIRED_DIMS:
            continue
        k = len(PALETTES[f])
        counts = [sum(getattr(c, f) == v for c in lhs) for v in PALETTES[f]]
        if not set(counts) <= {400 // k, math.ceil(400 / k)}:
            worst.append(f)
    edges = bin_edges(8)
    strat = sample_stratified(400, 8, 4)
    tc = np.array([costs.cost(c).total_cost for c in strat])
    per_bin = [strat[50 * b: 50 * (b + 1)] for b in range(8)]
    inside = all(edges[b] <= costs.cost(c).total_cost <= edges[b + 1]
                 for b, group in enumerate(per_bin) for c in group)
    counts = np.bincount(np.minimum(((tc - edges[0]) / (edges[1] - edges[0])).astype(int), 7),
                         minlength=8)
    ok = not worst and inside and counts.tolist() == [50] * 8
    record(4, ok, f"unbalanced LHS dims {worst}, stratified per-bin {counts.tolist()}")


def test_criterion_5_predictor_fidelity(pools):
    t0 = time.perf_counter()
    rows, ok = [], True
    for s in SEEDS:
        train, val = db.split(pools[s], 0.2, s)
        rep, _ = validation_report(pools[s], GBDTParams(), s, 10, 0.2)
        ok &= len(train) == 800 and len(val) == 200 and rep.n == 200
        ok &= rep.sparse_kendall_tau >= 0.60 and rep.r2 >= 0.70
        rows.append(f"seed {s}: sKT {rep.sparse_kendall_tau:.3f} R2 {rep.r2:.3f}")
    elapsed = time.perf_counter() - t0
    ok &= elapsed < 120
    record(5, ok, "; ".join(rows) + f" ({elapsed:.0f}s)")


def noise_free_fitness(genes):
    return synthetic_map_genes(genes, ORACLE_SEED, False)


def test_criterion_6_ea_vs_brute_force(pools):
    t0 = time.perf_counter()
    rows, ok = [], True
    for s in SEEDS:
        target = float(np.median(pools[s].latencies()))
        optimum = oracle.best(target, ORACLE_SEED, noise=False)[0]["map_50_95"]
        found = ea_search(noise_free_fitness, cost_latency, target, EAParams(seed=s)).entries[0]
        true_map = synthetic_map(found.config, ORACLE_SEED, noise=False)
        ok &= found.latency_ms <= target and true_map >= optimum - 0.005
        rows.append(f"seed {s}: gap {optimum - true_map:.5f}")
    elapsed = time.perf_counter() - t0
    ok &= elapsed < 120
    record(6, ok, "; ".join(rows) + f" ({elapsed:.0f}s)")


def test_criterion_7_self_evolve_schedule(pools, synthetic_spec):
    start = pools[1]
    pool, _, logs = run_self_evolve(start, SelfEvolveConfig(synthetic_spec, 1))
    ok = len(start) == 1000 and len(logs) == 10
    per_round = [len(log.added_ids) for log in logs]
    ok &= all(n + log.shortfall == 50 for n, log in zip(per_round, logs))
    ok &= len(pool) == 1000 + sum(per_round)
    violations = 0
    for log in logs:
        # walk buckets in order: each contributes top_per_bucket picks unless it fell short
        live = [t for t in log.targets if t is not None]
        if log.shortfall == 0 and len(live) * 5 == len(log.added_ids):
            for j, rid in enumerate(log.added_ids):
                violations += pool[rid].latency_ms > live[j // 5]
        else:
            violations += sum(pool[rid].latency_ms > max(live) for rid in log.added_ids)
        violations += log.latency_violations
    ok &= violations == 0
    record(7, ok and len(pool) == 1500,
           f"pool {len(start)} -> {len(pool)}, per round {per_round}, "
           f"shortfall {sum(log.shortfall for log in logs)}, latency violations {violations}")


def test_criterion_8_ablation_direction(pools, synthetic_spec):
    evaluator = Evaluator(synthetic_spec)
    skt_wins = best_wins = 0
    rows = []
    for s in SEEDS:
        base = pools[s]
        target = float(np.median(base.latencies()))
        evolved, evolved_model, _ = run_self_evolve(base, SelfEvolveConfig(synthetic_spec, s,
                                                                           rounds=4), evaluator)
        random_pool = run_random_expansion(base, 200, evaluator, s)
        assert len(evolved) == len(random_pool) == 1200
        se_rep, _ = validation_report(evolved, GBDTParams(), s, 10)
        rnd_rep, _ = validation_report(random_pool, GBDTParams(), s, 10)
        random_model = train_ensemble(random_pool, GBDTParams(), s, 10)

        def ea_best(model):
            entry = ea_search(model_fitness(model), cost_latency, target, EAParams(seed=s),
                              top_k=1).entries[0]
            return synthetic_map(entry.config, ORACLE_SEED, noise=False)

        se_best, rnd_best = ea_best(evolved_model), ea_best(random_model)
        skt_wins += se_rep.sparse_kendall_tau > rnd_rep.sparse_kendall_tau
        best_wins += se_best >= rnd_best
        rows.append(f"seed {s}: sKT {se_rep.sparse_kendall_tau:.3f} vs "
                    f"{rnd_rep.sparse_kendall_tau:.3f}, best {se_best:.4f} vs {rnd_best:.4f}")
    ok = skt_wins >= 2 and best_wins >= 2
    record(8, ok, f"sKT wins {skt_wins}/3, EA-best wins {best_wins}/3; " + "; ".join(rows))


def test_criterion_9_determinism(capsys, tmp_path):
    def twice(name, *argv, out_flag="--out"):
        blobs = []
        for k in (0, 1):
            out = tmp_path / f"{name}{k}"
            code, stdout = cli(capsys, *argv, out_flag, out)
            assert code == EXIT_OK, (name, code)
            blobs.append(out.read_bytes())
        return blobs[0] == blobs[1]

    results = {}
    for strategy in ("random", "stratified", "lhs"):
        results[f"sample {strategy}"] = twice(f"sample-{strategy}", "sample", "--strategy",
                                              strategy, "--n", 40, "--seed", 6)
    boot = ["bootstrap", "--evaluator", "synthetic:1", "--seed", 6, "--n-random", 30,
            "--n-stratified", 40, "--n-lhs", 40]
    results["bootstrap"] = twice("boot", *boot)
    pool = tmp_path / "boot0"

    unevaluated = tmp_path / "fresh.jsonl"
    cli(capsys, "sample", "--strategy", "lhs", "--n", 20, "--seed", 8, "--out", unevaluated)
    table = tmp_path / "table.jsonl"
    table.write_bytes(unevaluated.read_bytes())
    cli(capsys, "evaluate", "--db", table, "--evaluator", "synthetic:1")
    for kind in ("synthetic:1", f"table:{table}"):
        copies = []
        for k in (0, 1):
            target = tmp_path / f"eval{k}.jsonl"
            target.write_bytes(unevaluated.read_bytes())
            assert cli(capsys, "evaluate", "--db", target, "--evaluator", kind)[0] == EXIT_OK
            copies.append(target.read_bytes())
        results[f"evaluate {kind.split(':')[0]}"] = copies[0] == copies[1]

    results["predictor train"] = twice("model", "predictor", "train", "--db", pool, "--seed", 1,
                                       "--ensemble", 3)
    model = tmp_path / "model0"
    results["search"] = twice("search", "search", "--model", model, "--target-latency", 120,
                              "--seed", 2, "--ea-population", 20, "--ea-generations", 10)
    results["self-evolve"] = twice("se", "self-evolve", "--db", pool, "--evaluator", "synthetic:1",
                                   "--seed", 3, "--rounds", 2, "--buckets", 3, "--top", 2,
                                   "--ensemble", 2, "--ea-population", 10,
                                   "--ea-generations", 5, "--log", tmp_path / "se.log")
    results["expand-random"] = twice("exp", "expand-random", "--db", pool, "--n-add", 10,
                                     "--evaluator", "synthetic:1", "--seed", 4)
    results["db merge"] = twice("merged", "db", "merge", pool, tmp_path / "exp0")
    results["db export-csv"] = twice("csv", "db", "export-csv", pool, "--model", model)

    loaded = load_model(model)
    resaved = tmp_path / "resaved.json"
    save_model(loaded, resaved)
    probe = encode_genes(index_to_genes(np.random.default_rng(9).integers(0, CARDINALITY, 100)))
    reloaded = load_model(resaved)
    round_trip = (np.array_equal(loaded.predict(probe), reloaded.predict(probe))
                  and resaved.read_bytes() == model.read_bytes())
    failed = [k for k, v in results.items() if not v]
    record(9, not failed and round_trip,
           f"{len(results)} commands byte-identical, failures {failed}, model round trip "
           f"{round_trip}")


def test_criterion_10_command_protocol(capsys, tmp_path):
    fresh = tmp_path / "fresh.jsonl"
    cli(capsys, "sample", "--strategy", "random", "--n", 3, "--seed", 1, "--out", fresh)
    cases = [("echo_trainer.py", [], EXIT_OK), ("failing_trainer.py", [], EXIT_EVALUATOR),
             ("malformed_trainer.py", [], EXIT_EVALUATOR),
             ("not_json_trainer.py", [], EXIT_EVALUATOR),
             ("slow_trainer.py", ["--timeout", 0.5], EXIT_EVALUATOR)]
    got = {}
    for stub, extra, expected in cases:
        path = tmp_path / stub.replace(".py", ".jsonl")
        path.write_bytes(fresh.read_bytes())
        code, _ = cli(capsys, "evaluate", "--db", path, "--evaluator", "cmd:" + stub_command(stub),
                      *extra)
        evaluated = len(db.load(path).evaluated())
        got[stub] = (code, evaluated)
    expected = {stub: (code, 3 if code == EXIT_OK else 0) for stub, _, code in cases}
    record(10, got == expected, f"exit codes and evaluated counts {got}")
