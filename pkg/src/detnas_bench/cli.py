"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data/validation error, 3 evaluator
failure. Data goes to stdout or ``--out`` files; messages and the run
manifest go to stderr unless ``--manifest`` names a file.
"""
from __future__ import annotations

import hashlib
import json
import logging
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import click

from . import __version__
from . import costs, database as db, metrics, oracle, sampling, space
from .database import ArchRecord, DatabaseError, Pool
from .evaluator import Evaluator, EvaluatorError, EvaluatorSpec
from .evolution import EAParams, InfeasibleTargetError, cost_latency, ea_search, model_fitness
from .predictor import (
    GBDTParams, ModelFormatError, load_model, save_model,
)
from .self_evolve import (
    SelfEvolveAborted, SelfEvolveConfig, initial_pool, pool_xy, run_random_expansion,
    run_self_evolve, train_ensemble,
)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_EVALUATOR = 0, 1, 2, 3

logger = logging.getLogger("detnas_bench")


class DataError(click.ClickException):
    exit_code = EXIT_DATA


def _digest(path) -> Optional[str]:
    p = Path(path)
    if not p.is_file():
        return None
    return hashlib.sha256(p.read_bytes()).hexdigest()


@dataclass
class RunManifest:
    argv: list[str]
    seeds: dict = field(default_factory=dict)
    inputs: dict = field(default_factory=dict)
    outputs: list[str] = field(default_factory=list)
    started: float = field(default_factory=time.time)

    def read(self, *paths) -> None:
        # digest inputs up front: `evaluate` rewrites its input in place
        for p in paths:
            self.inputs[p] = _digest(p)

    def emit(self, manifest_path: Optional[str]) -> None:
        body = {
            "command": self.argv,
            "seeds": self.seeds,
            "version": __version__,
            "inputs": self.inputs,
            "outputs": {p: _digest(p) for p in self.outputs},
            "wall_clock_s": round(time.time() - self.started, 3),
        }
        text = json.dumps(body, sort_keys=True)
        if manifest_path:
            db.atomic_write_text(manifest_path, text + "\n")
        else:
            click.echo(f"manifest: {text}", err=True)


def _manifest(ctx: click.Context, **seeds) -> RunManifest:
    root = ctx.find_root()
    return RunManifest(list(root.obj["argv"]), {k: v for k, v in seeds.items() if v is not None})


manifest_option = click.option("--manifest", "manifest_path", type=click.Path(dir_okay=False),
                               help="Write the run manifest here instead of stderr.")


def _evaluator_from(text: str, parallel: int, timeout: float) -> Evaluator:
    try:
        spec = EvaluatorSpec.parse(text, max_parallel=parallel, timeout_s=timeout)
    except ValueError as exc:
        raise click.BadParameter(str(exc), param_hint="--evaluator") from None
    return Evaluator(spec)


def _echo_json(obj) -> None:
    click.echo(json.dumps(obj, indent=2))


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
@click.option("-v", "--verbose", count=True, help="Increase log verbosity.")
@click.version_option(__version__, prog_name="detnas-bench")
def cli(verbose):
    """Surrogate-benchmark engine for a discrete YOLO-style search space."""
    level = logging.WARNING - 10 * min(verbose, 2)
    logging.basicConfig(level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")


# --- space ---------------------------------------------------------------------

@cli.group("space")
def space_group():
    """Inspect the search space."""


@space_group.command("info")
@click.option("--costs", "with_costs", is_flag=True, help="Include cost-model constants.")
def space_info(with_costs):
    """Print cardinality, palettes and encoding size as JSON."""
    info = space.space_info()
    if with_costs:
        lo, hi = costs.cost_range()
        info["costs"] = {**costs.constants(), "total_cost_range": [lo, hi]}
    _echo_json(info)


# --- sample / bootstrap / evaluate ------------------------------------------------

@cli.command()
@click.option("--strategy", type=click.Choice(sampling.STRATEGIES), required=True)
@click.option("--n", "n", type=click.IntRange(min=1), required=True)
@click.option("--seed", type=int, required=True)
@click.option("--bins", type=click.IntRange(min=2), default=sampling.DEFAULT_BINS, show_default=True,
              help="Cost strata (stratified only).")
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@manifest_option
@click.pass_context
def sample(ctx, strategy, n, seed, bins, out, manifest_path):
    """Write N unevaluated configs drawn by STRATEGY as a JSONL pool."""
    run = _manifest(ctx, seed=seed)
    plan = sampling.SamplePlan(strategy, n, seed, bins if strategy == "stratified" else None)
    try:
        configs = plan.run()
    except ValueError as exc:
        raise DataError(str(exc)) from None
    pool = Pool()
    for c in configs:
        rec = ArchRecord.new(c, strategy)
        if rec.id not in pool:
            pool.add(rec)
    if len(pool) < len(configs):
        click.echo(f"note: {len(configs) - len(pool)} duplicate configs dropped", err=True)
    db.save(pool, out)
    run.outputs.append(out)
    run.emit(manifest_path)


@cli.command()
@click.option("--evaluator", "evaluator_text", required=True,
              help="synthetic:SEED[:nonoise] | table:PATH | cmd:COMMAND")
@click.option("--seed", type=int, required=True)
@click.option("--n-random", type=click.IntRange(min=1), default=200, show_default=True)
@click.option("--n-stratified", type=click.IntRange(min=2), default=400, show_default=True)
@click.option("--n-lhs", type=click.IntRange(min=1), default=400, show_default=True)
@click.option("--bins", type=click.IntRange(min=2), default=sampling.DEFAULT_BINS, show_default=True)
@click.option("--parallel", type=click.IntRange(min=1), default=1, show_default=True)
@click.option("--timeout", type=float, default=3600.0, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@manifest_option
@click.pass_context
def bootstrap(ctx, evaluator_text, seed, n_random, n_stratified, n_lhs, bins, parallel, timeout,
              out, manifest_path):
    """Build and evaluate the mixed random/stratified/LHS starting pool."""
    run = _manifest(ctx, seed=seed)
    evaluator = _evaluator_from(evaluator_text, parallel, timeout)
    pool = initial_pool(evaluator, seed, n_random, n_stratified, n_lhs, bins)
    db.save(pool, out)
    run.outputs.append(out)
    run.emit(manifest_path)


def _load_pool(path) -> Pool:
    try:
        return db.load(path)
    except FileNotFoundError:
        raise DataError(f"no such file: {path}") from None
    except DatabaseError as exc:
        raise DataError(f"{path}: {exc}") from None


@cli.command()
@click.option("--db", "db_path", type=click.Path(dir_okay=False), required=True)
@click.option("--evaluator", "evaluator_text", required=True,
              help="synthetic:SEED[:nonoise] | table:PATH | cmd:COMMAND")
@click.option("--parallel", type=click.IntRange(min=1), default=1, show_default=True)
@click.option("--timeout", type=float, default=3600.0, show_default=True,
              help="Per-call timeout for command evaluators, seconds.")
@manifest_option
@click.pass_context
def evaluate(ctx, db_path, evaluator_text, parallel, timeout, manifest_path):
    """Fill missing mAP/latency fields of --db in place."""
    run = _manifest(ctx)
    run.read(db_path)
    evaluator = _evaluator_from(evaluator_text, parallel, timeout)
    pool = _load_pool(db_path)
    todo = pool.unevaluated()
    try:
        for lo in range(0, len(todo), parallel):
            chunk = todo[lo:lo + parallel]
            for rec, ev in zip(chunk, evaluator.evaluate_many([r.config for r in chunk])):
                pool.put(rec.with_evaluation(ev.map_50_95, ev.latency_ms))
    finally:
        db.save(pool, db_path)
    run.outputs.append(db_path)
    run.emit(manifest_path)


# --- db ------------------------------------------------------------------------------

@cli.group("db")
def db_group():
    """Inspect and combine JSONL pools."""


@db_group.command("stats")
@click.argument("file", type=click.Path(dir_okay=False))
def db_stats(file):
    _echo_json(db.stats(_load_pool(file)))


@db_group.command("merge")
@click.argument("a", type=click.Path(dir_okay=False))
@click.argument("b", type=click.Path(dir_okay=False))
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@manifest_option
@click.pass_context
def db_merge(ctx, a, b, out, manifest_path):
    run = _manifest(ctx)
    run.read(a, b)
    try:
        merged = db.merge(_load_pool(a), _load_pool(b))
    except DatabaseError as exc:
        raise DataError(str(exc)) from None
    db.save(merged, out)
    run.outputs.append(out)
    run.emit(manifest_path)


@db_group.command("export-csv")
@click.argument("file", type=click.Path(dir_okay=False))
@click.option("--model", "model_path", type=click.Path(dir_okay=False),
              help="Fill the predicted_map column from this model.")
@click.option("--out", type=click.Path(dir_okay=False), help="Write here instead of stdout.")
def db_export_csv(file, model_path, out):
    """CSV with id, total_cost, latency_ms, map_50_95, predicted_map, source."""
    model = _load_model(model_path) if model_path else None
    text = db.export_csv(_load_pool(file), model)
    if out:
        db.atomic_write_text(out, text)
    else:
        click.echo(text, nl=False)


# --- predictor ---------------------------------------------------------------------

def _load_model(path):
    try:
        return load_model(path)
    except FileNotFoundError:
        raise DataError(f"no such file: {path}") from None
    except ModelFormatError as exc:
        raise DataError(f"{path}: {exc}") from None


@cli.group("predictor")
def predictor_group():
    """Train and score the boosted-tree surrogate."""


@predictor_group.command("train")
@click.option("--db", "db_path", type=click.Path(dir_okay=False), required=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@click.option("--seed", type=int, required=True)
@click.option("--ensemble", type=click.IntRange(min=1), default=10, show_default=True)
@click.option("--val-split", type=click.FloatRange(0.0, 1.0, min_open=True, max_open=True),
              default=0.2, show_default=True)
@click.option("--refit-full", is_flag=True,
              help="Save a model refit on every evaluated record (metrics still from the split).")
@click.option("--n-trees", type=click.IntRange(min=1), default=GBDTParams.n_trees, show_default=True)
@click.option("--learning-rate", type=float, default=GBDTParams.learning_rate, show_default=True)
@click.option("--max-leaves", type=click.IntRange(min=2), default=GBDTParams.max_leaves, show_default=True)
@click.option("--min-leaf", type=click.IntRange(min=1), default=GBDTParams.min_leaf, show_default=True)
@click.option("--row-subsample", type=float, default=GBDTParams.row_subsample, show_default=True)
@click.option("--feature-subsample", type=float, default=GBDTParams.feature_subsample, show_default=True)
@manifest_option
@click.pass_context
def predictor_train(ctx, db_path, out, seed, ensemble, val_split, refit_full, n_trees,
                    learning_rate, max_leaves, min_leaf, row_subsample, feature_subsample,
                    manifest_path):
    """Fit on the train split, print validation metrics, save the model."""
    run = _manifest(ctx, seed=seed)
    run.read(db_path)
    try:
        params = GBDTParams(n_trees, learning_rate, max_leaves, min_leaf, row_subsample,
                            feature_subsample)
    except ValueError as exc:
        raise click.BadParameter(str(exc)) from None
    pool = _load_pool(db_path)
    try:
        train, val = db.split(pool, val_split, seed)
        model = train_ensemble(train, params, seed, ensemble)
        Xv, yv = pool_xy(val)
        rep = metrics.report(yv, model.predict(Xv))
        if refit_full:
            model = train_ensemble(pool, params, seed, ensemble)
    except (DatabaseError, ValueError) as exc:
        raise DataError(str(exc)) from None
    save_model(model.members[0] if ensemble == 1 else model, out)
    _echo_json(rep.to_json_dict())
    run.outputs.append(out)
    run.emit(manifest_path)


@predictor_group.command("eval")
@click.option("--model", "model_path", type=click.Path(dir_okay=False), required=True)
@click.option("--db", "db_path", type=click.Path(dir_okay=False), required=True)
def predictor_eval(model_path, db_path):
    """Print R2 / Kendall tau / sKT of MODEL on the evaluated records of DB."""
    model = _load_model(model_path)
    pool = _load_pool(db_path)
    if len(pool.evaluated()) < 2:
        raise DataError("need at least 2 evaluated records")
    X, y = pool_xy(pool)
    _echo_json(metrics.report(y, model.predict(X)).to_json_dict())


# --- search / self-evolve ------------------------------------------------------------

def _ea_params(population, generations, seed) -> EAParams:
    try:
        return EAParams(population=population, generations=generations, seed=seed)
    except ValueError as exc:
        raise click.BadParameter(str(exc)) from None


@cli.command()
@click.option("--model", "model_path", type=click.Path(dir_okay=False), required=True)
@click.option("--target-latency", type=float, required=True)
@click.option("--seed", type=int, required=True)
@click.option("--ea-population", type=int, default=50, show_default=True)
@click.option("--ea-generations", type=int, default=100, show_default=True)
@click.option("--top", type=click.IntRange(min=1), default=5, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@manifest_option
@click.pass_context
def search(ctx, model_path, target_latency, seed, ea_population, ea_generations, top, out,
           manifest_path):
    """Evolutionary search with predicted mAP as fitness under a latency bound.

    Latency is the cost-model proxy.
    """
    run = _manifest(ctx, seed=seed)
    run.read(model_path)
    model = _load_model(model_path)
    params = _ea_params(ea_population, ea_generations, seed)
    try:
        result = ea_search(model_fitness(model), cost_latency, target_latency, params, top)
    except InfeasibleTargetError as exc:
        raise DataError(str(exc)) from None
    pool = Pool(ArchRecord.new(e.config, "search") for e in result.entries)
    db.save(pool, out)
    _echo_json([{"id": r.id, "config": e.config.canonical(), "predicted_map": e.predicted_map,
                 "latency_ms": e.latency_ms} for r, e in zip(pool, result.entries)])
    run.outputs.append(out)
    run.emit(manifest_path)


@cli.command("self-evolve")
@click.option("--db", "db_path", type=click.Path(dir_okay=False), required=True)
@click.option("--evaluator", "evaluator_text", required=True,
              help="synthetic:SEED[:nonoise] | table:PATH | cmd:COMMAND")
@click.option("--seed", type=int, required=True)
@click.option("--rounds", type=click.IntRange(min=1), default=10, show_default=True)
@click.option("--buckets", type=click.IntRange(min=1), default=10, show_default=True)
@click.option("--top", type=click.IntRange(min=1), default=5, show_default=True)
@click.option("--ensemble", type=click.IntRange(min=1), default=10, show_default=True)
@click.option("--ea-population", type=int, default=50, show_default=True)
@click.option("--ea-generations", type=int, default=100, show_default=True)
@click.option("--freeze-buckets", is_flag=True, help="Keep round-1 latency buckets for all rounds.")
@click.option("--parallel", type=click.IntRange(min=1), default=1, show_default=True)
@click.option("--timeout", type=float, default=3600.0, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@click.option("--log", "log_path", type=click.Path(dir_okay=False), required=True)
@click.option("--model-out", type=click.Path(dir_okay=False),
              help="Also save the final full-pool ensemble.")
@manifest_option
@click.pass_context
def self_evolve_cmd(ctx, db_path, evaluator_text, seed, rounds, buckets, top, ensemble,
                    ea_population, ea_generations, freeze_buckets, parallel, timeout, out,
                    log_path, model_out, manifest_path):
    """Grow the pool with predictor-guided discoveries, one EA per latency bucket."""
    run = _manifest(ctx, seed=seed)
    run.read(db_path)
    evaluator = _evaluator_from(evaluator_text, parallel, timeout)
    cfg = SelfEvolveConfig(evaluator.spec, seed, rounds, buckets, top, ensemble,
                           _ea_params(ea_population, ea_generations, seed),
                           freeze_buckets=freeze_buckets)
    pool = _load_pool(db_path)
    try:
        final_pool, model, logs = run_self_evolve(pool, cfg, evaluator)
    except SelfEvolveAborted as exc:
        db.save(exc.pool, out)
        db.atomic_write_text(log_path, "".join(l.to_json() + "\n" for l in exc.logs))
        raise
    except ValueError as exc:
        raise DataError(str(exc)) from None
    db.save(final_pool, out)
    db.atomic_write_text(log_path, "".join(l.to_json() + "\n" for l in logs))
    run.outputs += [out, log_path]
    if model_out:
        save_model(model, model_out)
        run.outputs.append(model_out)
    run.emit(manifest_path)


@cli.command("expand-random")
@click.option("--db", "db_path", type=click.Path(dir_okay=False), required=True)
@click.option("--n-add", type=click.IntRange(min=0), required=True)
@click.option("--evaluator", "evaluator_text", required=True)
@click.option("--seed", type=int, required=True)
@click.option("--parallel", type=click.IntRange(min=1), default=1, show_default=True)
@click.option("--timeout", type=float, default=3600.0, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@manifest_option
@click.pass_context
def expand_random(ctx, db_path, n_add, evaluator_text, seed, parallel, timeout, out,
                  manifest_path):
    """Ablation baseline: add N uniformly sampled, evaluated configs."""
    run = _manifest(ctx, seed=seed)
    run.read(db_path)
    evaluator = _evaluator_from(evaluator_text, parallel, timeout)
    pool = run_random_expansion(_load_pool(db_path), n_add, evaluator, seed)
    db.save(pool, out)
    run.outputs.append(out)
    run.emit(manifest_path)


# --- oracle ---------------------------------------------------------------------------

@cli.group("oracle")
def oracle_group():
    """Exhaustive sweeps of the synthetic oracle."""


noise_option = click.option("--noise", type=click.Choice(["on", "off"]), default="on",
                            show_default=True)


@oracle_group.command("best")
@click.option("--latency-max", type=float, required=True)
@click.option("--oracle-seed", type=int, required=True)
@noise_option
@click.option("--top", type=click.IntRange(min=1), default=1, show_default=True)
def oracle_best(latency_max, oracle_seed, noise, top):
    """Argmax synthetic mAP over every config with latency <= --latency-max."""
    found = oracle.best(latency_max, oracle_seed, noise == "on", top)
    if not found:
        raise DataError(f"no config has latency <= {latency_max}")
    _echo_json(found[0] if top == 1 else found)


@oracle_group.command("sweep")
@click.option("--oracle-seed", type=int, required=True)
@noise_option
@click.option("--latency-max", type=float)
def oracle_sweep(oracle_seed, noise, latency_max):
    """Summary statistics of synthetic mAP over the (feasible) space."""
    _echo_json(oracle.sweep(oracle_seed, noise == "on", latency_max))


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = list(sys.argv[1:] if argv is None else argv)
    try:
        cli.main(args=args, prog_name="detnas-bench", standalone_mode=False,
                 obj={"argv": args})
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.UsageError as exc:
        exc.show()
        return EXIT_USAGE
    except click.Abort:
        click.echo("aborted", err=True)
        return EXIT_USAGE
    except click.ClickException as exc:
        exc.show()
        return exc.exit_code
    except (EvaluatorError, SelfEvolveAborted) as exc:
        click.echo(f"evaluator failure: {exc}", err=True)
        return EXIT_EVALUATOR
    except (DatabaseError, ModelFormatError, InfeasibleTargetError, ValueError, OSError) as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
