"""
selfgate command line
gen / train / eval / sweep / analyze-sfm / runs
"""

import argparse
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
from tqdm import tqdm

from config import (ENV_LOG_LEVEL, RunConfig, SweepSpec, load_config, parse_float_list,
                    parse_int_list, save_config)
from errors import ConfigError, GateTraceError, InvalidArgumentError, SelfGateError
from evaluator import (evaluate_link_prediction, evaluate_node_classification, quality_trend,
                       sfm_category_analysis)
from graph_builder import HomogeneousGraph, graph_summary, kg_summary
from ingest import dataset_kind, load_dataset, write_homogeneous, write_kg
from model import LINK_PREDICTION, NODE_CLASSIFICATION
from report import ReportGenerator, metric_columns, write_csv, write_json, write_text
from rng import RngStream
from self_filter import GateTrace
from storage import RunStore, load_checkpoint
from synthetic import KG_RULES, gen_synthetic_kg, gen_synthetic_nc
from trainer import model_from_checkpoint, train

logger = logging.getLogger("selfgate")

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"
EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2
RESOLVED_CONFIG = "config.json"


def setup_logging(level: Optional[str]) -> None:
    level = (level or os.environ.get(ENV_LOG_LEVEL) or "INFO").upper()
    logging.basicConfig(level=getattr(logging, level, logging.INFO), format=LOG_FORMAT,
                        stream=sys.stderr, force=True)


def _record(config: RunConfig, command: str, metrics: Dict[str, Any], task: Optional[str],
            status: str = "ok", error: Optional[str] = None) -> None:
    if not config.output.run_db:
        return
    RunStore(config.output.run_db).initialize().record_run(
        command, config.to_dict(), metrics, status=status, error=error, task=task)


def _test_metrics(model, params, graph, split: str, seed: int) -> Dict[str, float]:
    if model.task == LINK_PREDICTION:
        _, report, _ = evaluate_link_prediction(model, params, graph, split, seed)
        return report.to_dict()
    return {"accuracy": evaluate_node_classification(model, params, graph, split, seed)}


# gen

def cmd_gen(args) -> int:
    rng = RngStream(args.seed)
    if args.kind == "nc":
        params = {
            "nodes": args.nodes,
            "classes": args.classes,
            "homophily": args.homophily,
            "noise_fraction": args.noise_fraction,
            "feature_dim": args.feature_dim,
            "avg_degree": args.avg_degree,
        }
        try:
            graph = gen_synthetic_nc(args.nodes, args.classes, args.homophily, args.noise_fraction,
                                     args.feature_dim, rng, avg_degree=args.avg_degree)
        except InvalidArgumentError as exc:
            raise ConfigError("gen", str(exc))
        summary = graph_summary(graph)
        writer = write_homogeneous
    else:
        pattern = [p.strip() for p in args.pattern.split(",") if p.strip()] if args.pattern else ["compose"]
        params = {"entities": args.entities, "relations": args.relations, "pattern": pattern}
        try:
            graph = gen_synthetic_kg(args.entities, args.relations, rng, pattern=pattern)
        except InvalidArgumentError as exc:
            raise ConfigError("gen", str(exc))
        summary = kg_summary(graph)
        writer = write_kg

    meta = {"kind": args.kind, "seed": args.seed, "params": params, "summary": summary}
    try:
        writer(graph, args.out, meta)
    except OSError as exc:
        raise SelfGateError(f"cannot write dataset to {args.out}: {exc}")
    logger.info("Generated %s dataset in %s: %s", args.kind, args.out, summary)
    return EXIT_OK


# train

def _run_config(args) -> RunConfig:
    overrides = list(args.set or [])
    if getattr(args, "dataset", None):
        overrides.append(f"data.path={args.dataset}")
    if getattr(args, "out", None):
        overrides.append(f"output.dir={args.out}")
    config = load_config(args.config, overrides)
    if getattr(args, "variant", None):
        config.set("model.variant", args.variant)
    if getattr(args, "layers", None) is not None:
        config.set("model.layers", args.layers)
    if getattr(args, "seed", None) is not None:
        config.set("train.seed", args.seed)
    return config


def cmd_train(args) -> int:
    config = _run_config(args).validate()
    os.makedirs(config.output.dir, exist_ok=True)
    save_config(config, config.output.path(RESOLVED_CONFIG))
    try:
        result = train(config, show_progress=args.progress)
    except SelfGateError as exc:
        _record(config, "train", {}, None, status="failed", error=str(exc))
        raise
    metrics = {"best_valid": result.checkpoint.best_metric, "best_epoch": result.checkpoint.epoch}
    _record(config, "train", {k: v for k, v in metrics.items() if v is not None}, result.model.task)
    logger.info("Checkpoint written to %s", result.checkpoint_path)
    return EXIT_OK


# eval

def cmd_eval(args) -> int:
    checkpoint = load_checkpoint(args.checkpoint)
    graph = load_dataset(args.dataset) if args.dataset else None
    model, graph, config = model_from_checkpoint(checkpoint, graph)
    seed = config.train.seed
    metrics = _test_metrics(model, checkpoint.params, graph, args.split, seed)

    out_dir = args.out or os.path.dirname(os.path.abspath(args.checkpoint))
    context = {
        "checkpoint": os.path.basename(args.checkpoint),
        "task": model.task,
        "encoder": config.model.encoder,
        "decoder": config.model.decoder,
        "variant": config.model.variant,
        "layers": config.model.layers,
        "split": args.split,
        "seed": seed,
    }
    write_json(os.path.join(out_dir, "metrics.json"), {"context": context, "metrics": metrics})
    write_text(os.path.join(out_dir, "report.md"),
               ReportGenerator().metrics_markdown("Evaluation report", metrics, context))
    logger.info("Wrote metrics.json and report.md to %s", out_dir)
    return EXIT_OK


# sweep

def run_sweep_cell(job: Dict[str, Any]) -> Dict[str, Any]:
    """Train one (layers, variant, seed) cell, over the lr grid when given, and score the test split"""
    row: Dict[str, Any] = {"layers": job["layers"], "variant": job["variant"], "seed": job["seed"],
                           "lr": None, "status": "ok", "error": None}
    try:
        best = None
        for lr in job["lrs"]:
            config = RunConfig.from_dict(job["config"])
            config.train.lr = lr
            if len(job["lrs"]) > 1:
                config.output.dir = os.path.join(job["config"]["output"]["dir"], f"lr{lr:g}")
            result = train(config)
            valid = result.checkpoint.best_metric
            key = float("-inf") if valid is None else valid
            if best is None or key > best[0]:
                best = (key, lr, result)
        _, lr, result = best
        row["lr"] = lr
        row.update(_test_metrics(result.model, result.checkpoint.params, result.graph, "test", job["seed"]))
    except Exception as exc:  # recorded in the row, the sweep carries on
        row["status"] = "failed"
        row["error"] = f"{type(exc).__name__}: {exc}"
    return row


def _sweep_jobs(spec: SweepSpec, out_dir: str) -> List[Dict[str, Any]]:
    jobs = []
    lrs = spec.lr_grid or [spec.base.train.lr]
    for layers, variant, seed in spec.cells():
        cell_dir = os.path.join(out_dir, "cells", f"L{layers}_{variant}_s{seed}")
        config = spec.config_for(layers, variant, seed, out_dir=cell_dir)
        config.output.run_db = None
        jobs.append({"layers": layers, "variant": variant, "seed": seed,
                     "lrs": lrs, "config": config.to_dict()})
    return jobs


def cmd_sweep(args) -> int:
    base = _run_config(args)
    spec = SweepSpec(
        base=base,
        layers=parse_int_list("sweep.layers", args.layers_list),
        variants=[v.strip() for v in args.variants.split(",") if v.strip()],
        seeds=parse_int_list("sweep.seeds", args.seeds),
        lr_grid=parse_float_list("sweep.lr_grid", args.lr_grid) if args.lr_grid else None,
    ).validate()
    if args.jobs < 1:
        raise ConfigError("--jobs", "must be >= 1")
    out_dir = base.output.dir
    task = LINK_PREDICTION if dataset_kind(base.data.path) == "kg" else NODE_CLASSIFICATION
    jobs = _sweep_jobs(spec, out_dir)
    logger.info("Sweep: %d cells (%d layer depths x %d variants x %d seeds) with %d workers",
                len(jobs), len(spec.layers), len(spec.variants), len(spec.seeds), args.jobs)

    if args.jobs == 1:
        rows = [run_sweep_cell(job) for job in tqdm(jobs, desc="sweep", disable=not args.progress)]
    else:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            rows = list(tqdm(pool.map(run_sweep_cell, jobs), total=len(jobs), desc="sweep",
                             disable=not args.progress))

    failed = [row for row in rows if row["status"] != "ok"]
    for row in failed:
        logger.warning("Cell L=%d %s seed %d failed: %s", row["layers"], row["variant"], row["seed"], row["error"])

    generator = ReportGenerator()
    summary = generator.sweep_summary(rows, task)
    best = generator.best_layers(summary, task)
    write_csv(os.path.join(out_dir, "sweep.csv"), generator.sweep_table(rows, task))
    write_csv(os.path.join(out_dir, "sweep_summary.csv"), summary)
    write_csv(os.path.join(out_dir, "best_layers.csv"), best)
    write_text(os.path.join(out_dir, "sweep.md"), generator.sweep_markdown(summary, best, task))

    for job, row in zip(jobs, rows):
        config = RunConfig.from_dict(job["config"])
        config.output.run_db = base.output.run_db
        metrics = {m: row[m] for m in metric_columns(task) if row.get(m) is not None}
        _record(config, "sweep", metrics, task, status=row["status"], error=row["error"])
    logger.info("Sweep finished: %d ok, %d failed; tables in %s", len(rows) - len(failed), len(failed), out_dir)
    return EXIT_OK


# analyze-sfm

def cmd_analyze_sfm(args) -> int:
    checkpoint = load_checkpoint(args.checkpoint)
    if checkpoint.variant == "base" or checkpoint.gate_trace is None:
        raise GateTraceError("no gate trace")
    graph = load_dataset(args.dataset) if args.dataset else None
    model, graph, config = model_from_checkpoint(checkpoint, graph)
    if isinstance(graph, HomogeneousGraph):
        raise GateTraceError("gate analysis needs a link-prediction checkpoint")

    stored = GateTrace.from_matrix(checkpoint.gate_trace)
    records, report, trace = evaluate_link_prediction(model, checkpoint.params, graph, args.split,
                                                      config.train.seed)
    if trace is None or not np.array_equal(trace.matrix(), stored.matrix()):
        raise GateTraceError("stored gate trace does not match the checkpoint's eval-mode gates")

    table, entity_mrr = sfm_category_analysis(stored, records)
    trend = quality_trend(table)
    pass_rates = stored.pass_rate()
    out_dir = args.out or os.path.dirname(os.path.abspath(args.checkpoint))
    context = {
        "checkpoint": os.path.basename(args.checkpoint),
        "layers": stored.layers,
        "split": args.split,
        "triples": report.count,
    }
    write_csv(os.path.join(out_dir, "categories.csv"), table)
    write_json(os.path.join(out_dir, "categories.json"), {
        "context": context,
        "categories": table.to_dict(orient="records"),
        "entity_mrr": entity_mrr,
        "triple_metrics": report.to_dict(),
        "trend": trend,
        "pass_rate": pass_rates,
    })
    write_text(os.path.join(out_dir, "report.md"),
               ReportGenerator().category_markdown(table, entity_mrr, trend, pass_rates, context))
    logger.info("Gate analysis: %d categories, entity MRR %.4f, trend %s", len(table), entity_mrr, trend)
    return EXIT_OK


# runs

def cmd_runs(args) -> int:
    selected = args.show if args.show is not None else args.delete
    if not os.path.exists(args.db):
        if selected is not None:
            raise SelfGateError(f"no run index at {args.db}")
        print("No recorded runs.")
        return EXIT_OK
    store = RunStore(args.db).initialize()
    generator = ReportGenerator()

    if args.delete is not None:
        if not store.delete_run(args.delete):
            raise SelfGateError(f"no run {args.delete} in {args.db}")
        logger.info("Deleted run %d from %s", args.delete, args.db)
        print(f"Deleted run {args.delete}.")
        return EXIT_OK
    if args.show is not None:
        run = store.get_run(args.show)
        if run is None:
            raise SelfGateError(f"no run {args.show} in {args.db}")
        sys.stdout.write(generator.run_details(run))
        return EXIT_OK
    if args.stats:
        sys.stdout.write(generator.run_statistics(store.get_run_statistics()))
        return EXIT_OK
    sys.stdout.write(generator.runs_table(store.list_runs(args.limit)))
    return EXIT_OK


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                   help="override one config value (repeatable)")
    p.add_argument("--dataset", help="dataset directory (sets data.path)")
    p.add_argument("--out", help="output directory (sets output.dir)")
    p.add_argument("--progress", action="store_true", help="show progress bars")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="selfgate",
                                     description="Self-filtering GNN lab: train, evaluate and sweep")
    parser.add_argument("--log-level", help=f"logging level (default ${ENV_LOG_LEVEL} or INFO)")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="generate a synthetic dataset")
    gen.add_argument("kind", choices=["nc", "kg"])
    gen.add_argument("--out", required=True)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--nodes", type=int, default=600)
    gen.add_argument("--classes", type=int, default=4)
    gen.add_argument("--homophily", type=float, default=0.8)
    gen.add_argument("--noise-fraction", type=float, default=0.3)
    gen.add_argument("--feature-dim", type=int, default=16)
    gen.add_argument("--avg-degree", type=float, default=8.0)
    gen.add_argument("--entities", type=int, default=100)
    gen.add_argument("--relations", type=int, default=4)
    gen.add_argument("--pattern", help=f"comma list of {', '.join(KG_RULES)} (default compose)")
    gen.set_defaults(func=cmd_gen)

    tr = sub.add_parser("train", help="train one configuration")
    _add_config_flags(tr)
    tr.add_argument("--variant", choices=["base", "sfgnn"])
    tr.add_argument("--layers", type=int)
    tr.add_argument("--seed", type=int)
    tr.set_defaults(func=cmd_train)

    ev = sub.add_parser("eval", help="score a checkpoint on one split")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--dataset", help="dataset directory (default: the one it was trained on)")
    ev.add_argument("--split", choices=["train", "valid", "test"], default="test")
    ev.add_argument("--out", help="report directory (default: next to the checkpoint)")
    ev.set_defaults(func=cmd_eval)

    sw = sub.add_parser("sweep", help="layer-depth sweep over variants and seeds")
    _add_config_flags(sw)
    sw.add_argument("--layers", dest="layers_list", default="1-5", help="e.g. 1-5 or 2,4,8")
    sw.add_argument("--variants", default="base,sfgnn")
    sw.add_argument("--seeds", default="0")
    sw.add_argument("--lr-grid", help="comma list of learning rates to select from on valid")
    sw.add_argument("--jobs", type=int, default=1)
    sw.set_defaults(func=cmd_sweep)

    an = sub.add_parser("analyze-sfm", help="category analysis of the gate trace")
    an.add_argument("--checkpoint", required=True)
    an.add_argument("--dataset")
    an.add_argument("--split", choices=["valid", "test"], default="test")
    an.add_argument("--out")
    an.set_defaults(func=cmd_analyze_sfm)

    runs = sub.add_parser("runs", help="list recorded runs")
    runs.add_argument("--db", default="selfgate_runs.db")
    runs.add_argument("--limit", type=int, default=20)
    picked = runs.add_mutually_exclusive_group()
    picked.add_argument("--show", type=int, metavar="ID", help="print one run with its metrics and config")
    picked.add_argument("--delete", type=int, metavar="ID", help="remove one run from the index")
    picked.add_argument("--stats", action="store_true", help="count recorded and failed runs")
    runs.set_defaults(func=cmd_runs)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(args.log_level)
    try:
        return args.func(args)
    except ConfigError as exc:
        logger.error("Configuration error: %s", exc)
        return EXIT_USAGE
    except SelfGateError as exc:
        logger.error("%s", exc)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
