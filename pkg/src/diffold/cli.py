"""Command-line interface: featurize, train, sample, eval, analyze.

Primary results go to standard output; diagnostics go to standard error.
Every failure exits nonzero with a one-line ``E_CODE: message`` on stderr.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .analysis import (
    AnalysisError,
    compare_sc_ablation,
    export_alignment_attention,
    layer_kl,
    write_kl_csv,
    write_sc_ablation_csv,
    write_schedule_csv,
)
from .autodiff import NumericFault
from .backbone import BackboneParseError, load_backbone
from .cache import load_or_build_graph, save_graph
from .denoiser import ModelConfig
from .diffusion import make_schedule
from .features import FeaturizationError, build_graph
from .sampling import (
    SPLITS,
    evaluate_graphs,
    predicted_letters,
    sample_sequence,
    write_report_csv,
)
from .training import (
    CheckpointError,
    TrainConfig,
    load_checkpoint,
    save_checkpoint,
    train,
)

EXIT_CODES = {
    "E_BAD_ARGS": 2,
    "E_PARSE": 3,
    "E_EMPTY_DATASET": 4,
    "E_CHECKPOINT": 5,
    "E_NUMERIC": 6,
    "E_CONFIG": 7,
    "E_IO": 8,
}

log = logging.getLogger("diffold")


class CliError(Exception):
    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


# ---------------------------------------------------------------------------
# Config plumbing
# ---------------------------------------------------------------------------

_MODEL_FIELDS = {f.name: f.type for f in dataclasses.fields(ModelConfig)}
_TRAIN_FIELDS = {f.name: f.type for f in dataclasses.fields(TrainConfig)}
_BOOL_TRUE = {"1", "true", "yes", "on"}
_BOOL_FALSE = {"0", "false", "no", "off"}


def _coerce(key: str, value: str):
    text = value.strip()
    lowered = text.lower()
    if lowered in _BOOL_TRUE:
        return True
    if lowered in _BOOL_FALSE:
        return False
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        pass
    return text


def parse_config_file(path) -> dict:
    """Flat ``key = value`` file; '#' starts a comment."""
    out = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise CliError("E_CONFIG", f"cannot read config file {path}: {exc}") from exc
    for lineno, line in enumerate(lines, 1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise CliError("E_CONFIG", f"{path}:{lineno}: expected key=value, got {line!r}")
        key, value = stripped.split("=", 1)
        out[key.strip()] = _coerce(key, value)
    return out


def _build_configs(args, file_values: dict) -> tuple[ModelConfig, TrainConfig, int]:
    """Merge config-file values with CLI flags (flags win)."""
    merged = dict(file_values)
    overrides = {
        "lr": args.lr,
        "weight_decay": args.weight_decay,
        "batch_size": args.batch_size,
        "grad_accum_steps": args.grad_accum,
        "total_steps": args.steps,
        "alpha": args.alpha,
        "lam": args.lam,
        "seed": args.seed,
        "T": args.T,
        "schedule": args.schedule,
        "grad_clip": args.grad_clip,
        "attn_loss_all_layers": args.attn_loss_all_layers,
        "hidden_dim": args.hidden_dim,
        "n_layers": args.layers,
        "activation": args.activation,
        "use_shared_center": args.shared_center,
        "freeze_type_embeddings": args.freeze_type_emb,
        "k": args.k,
    }
    for key, value in overrides.items():
        if value is not None:
            merged[key] = value
    k = int(merged.pop("k", 30))
    unknown = set(merged) - set(_MODEL_FIELDS) - set(_TRAIN_FIELDS)
    if unknown:
        raise CliError("E_CONFIG", f"unknown config keys: {sorted(unknown)}")
    try:
        model_config = ModelConfig(
            **{k_: v for k_, v in merged.items() if k_ in _MODEL_FIELDS}
        )
        train_config = TrainConfig(
            **{k_: v for k_, v in merged.items() if k_ in _TRAIN_FIELDS}
        )
    except (TypeError, ValueError) as exc:
        raise CliError("E_CONFIG", f"invalid configuration: {exc}") from exc
    return model_config, train_config, k


def _load_split_ids(path) -> list[str]:
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise CliError("E_IO", f"cannot read split file {path}: {exc}") from exc
    ids = [line.strip() for line in lines if line.strip()]
    if not ids:
        raise CliError("E_EMPTY_DATASET", f"split file {path} lists no proteins")
    return ids


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def _featurize_one(args_tuple):
    path, cache_dir, k, sphere_points = args_tuple
    backbone = load_backbone(path)
    graph = build_graph(backbone, k=k, n_sphere_points=sphere_points)
    out = save_graph(graph, cache_dir)
    return backbone.id, out


def cmd_featurize(args) -> int:
    paths = sorted(Path(args.in_dir).glob("*.json"))
    if not paths:
        raise CliError("E_EMPTY_DATASET", f"no backbone files in {args.in_dir}")
    tasks = [(p, args.cache_dir, args.k, args.sphere_points) for p in paths]
    if args.jobs > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_featurize_one, tasks))
    else:
        results = [_featurize_one(t) for t in tasks]
    for protein_id, out in results:
        log.info("featurized %s -> %s", protein_id, out)
    print(f"featurized {len(results)} proteins into {args.cache_dir}")
    return 0


def cmd_train(args) -> int:
    file_values = parse_config_file(args.config) if args.config else {}
    model_config, train_config, k = _build_configs(args, file_values)
    ids = _load_split_ids(args.split)
    data_dir = Path(args.data)
    graphs = []
    for pid in ids:
        path = data_dir / f"{pid}.json"
        if not path.exists():
            raise CliError("E_IO", f"protein {pid!r} not found at {path}")
        backbone = load_backbone(path)
        if args.cache_dir:
            graphs.append(load_or_build_graph(backbone, args.cache_dir, k=k))
        else:
            graphs.append(build_graph(backbone, k=k))

    params = optimizer = rng = None
    start_step = 0
    if args.resume:
        ckpt = load_checkpoint(args.resume)
        params, optimizer, rng = ckpt.params, ckpt.optimizer, ckpt.rng
        start_step = ckpt.step
        model_config, train_config = ckpt.model_config, ckpt.train_config
        log.info("resumed from %s at step %d", args.resume, start_step)

    log_path = args.log or (str(args.out) + ".log.csv")
    result = train(
        graphs,
        model_config,
        train_config,
        params=params,
        optimizer=optimizer,
        rng=rng,
        start_step=start_step,
        log_path=log_path,
    )
    save_checkpoint(
        args.out, result.params, result.optimizer, train_config, result.last_step, result.rng
    )
    final = result.history[-1] if result.history else {"total": float("nan")}
    print(
        f"trained {result.last_step} steps on {len(graphs)} proteins; "
        f"final loss {final['total']:.4f}; checkpoint {args.out}"
    )
    return 0


def cmd_sample(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    backbone = load_backbone(args.in_file)
    graph = build_graph(backbone, k=args.k)
    schedule = make_schedule(ckpt.train_config.T, kind=ckpt.train_config.schedule)
    stride = args.stride if args.stride is not None else ckpt.train_config.T
    pred, trace = sample_sequence(
        graph, ckpt.params, schedule, stride, np.random.default_rng(args.seed)
    )
    trace_path = args.trace_out or (str(args.in_file) + ".trace.json")
    trace_doc = {
        "id": backbone.id,
        "steps": trace.steps,
        "states": [predicted_letters(np.argmax(s, axis=1)) for s in trace.states],
        "final_logits": trace.final_logits.tolist(),
    }
    Path(trace_path).write_text(json.dumps(trace_doc), encoding="utf-8")
    log.info("trace written to %s", trace_path)
    print(predicted_letters(pred))
    return 0


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    paths = sorted(Path(args.data).glob("*.json"))
    if not paths:
        raise CliError("E_EMPTY_DATASET", f"no backbone files in {args.data}")
    graphs = []
    for p in paths:
        backbone = load_backbone(p)
        if args.cache_dir:
            graphs.append(load_or_build_graph(backbone, args.cache_dir, k=args.k))
        else:
            graphs.append(build_graph(backbone, k=args.k))
    schedule = make_schedule(ckpt.train_config.T, kind=ckpt.train_config.schedule)
    stride = args.stride if args.stride is not None else ckpt.train_config.T
    report = evaluate_graphs(
        graphs, ckpt.params, schedule, args.split, stride, seed=args.seed, jobs=args.jobs
    )
    if report.n_proteins == 0:
        raise CliError("E_EMPTY_DATASET", f"split {args.split!r} matched no proteins")
    if args.out:
        write_report_csv(report, args.out)
        log.info("report written to %s", args.out)
    print(
        f"split={args.split} n={report.n_proteins} "
        f"median_recovery={report.median_recovery:.4f} "
        f"mean_recovery={report.mean_recovery:.4f} "
        f"perplexity={report.dataset_perplexity:.4f}"
    )
    return 0


def _single_step_trace(ckpt, in_file, k, seed):
    backbone = load_backbone(in_file)
    graph = build_graph(backbone, k=k)
    schedule = make_schedule(ckpt.train_config.T, kind=ckpt.train_config.schedule)
    pred, trace = sample_sequence(
        graph, ckpt.params, schedule, schedule.T, np.random.default_rng(seed)
    )
    return backbone, graph, pred, trace


def cmd_analyze(args) -> int:
    if args.what == "schedule":
        schedule = make_schedule(args.T, kind=args.kind)
        write_schedule_csv(schedule, args.out)
        print(f"schedule ({args.kind}, T={args.T}) written to {args.out}")
        return 0

    if args.what == "kl":
        ckpt = load_checkpoint(args.ckpt)
        backbone, _, _, trace = _single_step_trace(ckpt, args.in_file, args.k, args.seed)
        out = Path(args.out_dir) / f"{backbone.id}.kl.csv"
        out.parent.mkdir(parents=True, exist_ok=True)
        write_kl_csv(layer_kl(trace.layer_trace), out)
        print(f"layer KL written to {out}")
        return 0

    if args.what == "attn":
        ckpt = load_checkpoint(args.ckpt)
        backbone, graph, pred, trace = _single_step_trace(
            ckpt, args.in_file, args.k, args.seed
        )
        out = Path(args.out_dir) / f"{backbone.id}.attn.csv"
        out.parent.mkdir(parents=True, exist_ok=True)
        export_alignment_attention(trace.layer_trace, graph.true_types, pred, out)
        print(f"alignment attention written to {out}")
        return 0

    if args.what == "sc-ablation":
        ckpt_with = load_checkpoint(args.ckpt_with)
        ckpt_without = load_checkpoint(args.ckpt_without)
        paths = sorted(Path(args.data).glob("*.json"))[: args.sample]
        if not paths:
            raise CliError("E_EMPTY_DATASET", f"no backbone files in {args.data}")
        graphs = [build_graph(load_backbone(p), k=args.k) for p in paths]
        rows = compare_sc_ablation(
            graphs, ckpt_with.params, ckpt_without.params,
            t=ckpt_with.train_config.T, seed=args.seed,
        )
        write_sc_ablation_csv(rows, args.out)
        print(f"shared-center ablation series written to {args.out}")
        return 0

    raise CliError("E_BAD_ARGS", f"unknown analyze target {args.what!r}")


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="diffold",
        description="Discrete-diffusion sequence design on protein backbone graphs.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("featurize", help="build and cache residue graphs")
    p.add_argument("--in", dest="in_dir", required=True, help="directory of backbone JSON files")
    p.add_argument("--cache-dir", required=True, help="output directory for graph caches")
    p.add_argument("--k", type=int, default=30, help="k-NN neighbors (default 30)")
    p.add_argument("--sphere-points", type=int, default=128, help="SASA sphere points")
    p.add_argument("--jobs", type=int, default=1, help="parallel workers")
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("train", help="train a denoiser")
    p.add_argument("--data", required=True, help="directory of backbone JSON files")
    p.add_argument("--split", required=True, help="text file of protein ids, one per line")
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--config", help="flat key=value config file (flags win)")
    p.add_argument("--cache-dir", help="reuse featurized graphs from this directory")
    p.add_argument("--log", help="training log CSV (default: <out>.log.csv)")
    p.add_argument("--resume", help="checkpoint to resume from")
    p.add_argument("--lr", type=float)
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--grad-accum", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--lam", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--T", type=int)
    p.add_argument("--schedule", choices=["cosine", "linear"])
    p.add_argument("--grad-clip", type=float)
    p.add_argument("--hidden-dim", type=int)
    p.add_argument("--layers", type=int)
    p.add_argument("--activation", choices=["gelu", "relu"])
    p.add_argument("--k", type=int)
    p.add_argument("--shared-center", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--freeze-type-emb", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument(
        "--attn-loss-all-layers", action=argparse.BooleanOptionalAction, default=None
    )
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="generate a sequence for one backbone")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", dest="in_file", required=True, help="backbone JSON file")
    p.add_argument("--stride", type=int, help="reverse-step stride (default: full skip)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--k", type=int, default=30)
    p.add_argument("--trace-out", help="trace JSON path (default: <in>.trace.json)")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("eval", help="evaluate recovery/perplexity on a dataset")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=list(SPLITS), required=True)
    p.add_argument("--out", help="report CSV path")
    p.add_argument("--stride", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--k", type=int, default=30)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--cache-dir")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("analyze", help="diagnostic exports")
    asub = p.add_subparsers(dest="what", required=True)

    a = asub.add_parser("schedule", help="dump (t, alpha, alpha_bar) CSV")
    a.add_argument("--T", type=int, default=500)
    a.add_argument("--kind", choices=["cosine", "linear"], default="cosine")
    a.add_argument("--out", required=True)
    a.set_defaults(func=cmd_analyze)

    a = asub.add_parser("kl", help="layer-wise log KL for one protein")
    a.add_argument("--ckpt", required=True)
    a.add_argument("--in", dest="in_file", required=True)
    a.add_argument("--out-dir", required=True)
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--k", type=int, default=30)
    a.set_defaults(func=cmd_analyze)

    a = asub.add_parser("attn", help="alignment attention export for one protein")
    a.add_argument("--ckpt", required=True)
    a.add_argument("--in", dest="in_file", required=True)
    a.add_argument("--out-dir", required=True)
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--k", type=int, default=30)
    a.set_defaults(func=cmd_analyze)

    a = asub.add_parser("sc-ablation", help="paired log-KL series for the SC ablation")
    a.add_argument("--ckpt-with", required=True)
    a.add_argument("--ckpt-without", required=True)
    a.add_argument("--data", required=True)
    a.add_argument("--out", required=True)
    a.add_argument("--sample", type=int, default=50)
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--k", type=int, default=30)
    a.set_defaults(func=cmd_analyze)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO, format="%(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"{exc.code}: {exc}", file=sys.stderr)
        return EXIT_CODES[exc.code]
    except (BackboneParseError, FeaturizationError) as exc:
        print(f"E_PARSE: {exc}", file=sys.stderr)
        return EXIT_CODES["E_PARSE"]
    except CheckpointError as exc:
        print(f"E_CHECKPOINT: {exc}", file=sys.stderr)
        return EXIT_CODES["E_CHECKPOINT"]
    except NumericFault as exc:
        print(f"E_NUMERIC: {exc}", file=sys.stderr)
        return EXIT_CODES["E_NUMERIC"]
    except AnalysisError as exc:
        print(f"E_CONFIG: {exc}", file=sys.stderr)
        return EXIT_CODES["E_CONFIG"]
    except (ValueError, OSError) as exc:
        print(f"E_BAD_ARGS: {exc}", file=sys.stderr)
        return EXIT_CODES["E_BAD_ARGS"]


if __name__ == "__main__":
    sys.exit(main())
