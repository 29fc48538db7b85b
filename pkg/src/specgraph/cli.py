"""``specgraph`` command line: generate, estimate, learn, extract, evaluate, pipeline.

Exit codes: 0 success, 1 runtime or numerical failure, 2 usage or validation error.
"""

from __future__ import annotations

import argparse
import glob
import json
import math
import os
import sys
import time
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import __version__
from .cf import cf_learn
from .evaluation import (
    METHOD_KINDS,
    ExperimentConfig,
    default_methods,
    run_experiment,
    summarize,
    write_results_csv,
    write_results_json,
    write_summary_csv,
    write_summary_json,
)
from .graph import DEFAULT_THRESHOLD, extract_kpcg, load_kpcg, save_kpcg, shd, write_edge_csv
from .ia import IAConfig, ia_learn, write_trace_csv
from .spectral import auto_half_size, naive_inverse, read_panel_csv, smoothed_periodogram, write_panel_csv
from .synth import (
    generate_batch,
    ground_truth_kpcg,
    load_structure,
    reference_structure,
    save_structure,
    structure_hash,
)
from .tensor_core import (
    FrequencyPartition,
    InverseCSDTensor,
    NumericalError,
    SpecGraphError,
    TimeSeriesPanel,
    ValidationError,
    load_tensor,
    n_frequencies,
    parse_blocks,
    save_tensor,
)

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2
IA_KEYS = tuple(f.name for f in fields(IAConfig))


# --- helpers -------------------------------------------------------------------


def read_config_file(path: str | Path) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment. Keys are IAConfig field names."""
    out = {}
    try:
        text = Path(path).read_text()
    except FileNotFoundError as exc:
        raise ValidationError(f"config file not found: {path}") from exc
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in IA_KEYS:
            raise ValidationError(f"{path}:{lineno}: unknown key {key!r}")
        out[key] = value
    return out


def resolve_threads(flag: int | None) -> int:
    if flag is not None:
        n = flag
    else:
        env = os.environ.get("SPECGRAPH_THREADS", "")
        try:
            n = int(env) if env else 1
        except ValueError as exc:
            raise ValidationError(f"SPECGRAPH_THREADS must be an integer, got {env!r}") from exc
    if n < 1:
        raise ValidationError("thread count must be at least 1")
    return n


def resolve_partition(args, m: int) -> FrequencyPartition:
    if args.blocks is not None:
        return parse_blocks(args.blocks, m)
    if args.equal_blocks is not None:
        return FrequencyPartition.equal(args.equal_blocks, m)
    raise ValidationError("a partition is required: pass --blocks or --equal-blocks")


def expand_inputs(patterns) -> list[str]:
    paths = []
    for pat in patterns:
        hits = sorted(glob.glob(pat))
        if not hits and not any(c in pat for c in "*?["):
            hits = [pat]
        paths.extend(hits)
    if not paths:
        raise ValidationError(f"no input files match {list(patterns)}")
    for p in paths:
        if not Path(p).is_file():
            raise ValidationError(f"input file not found: {p}")
    return paths


def _dump(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True))


def _ia_config(args) -> IAConfig:
    values = read_config_file(args.config) if args.config else {}
    for key in IA_KEYS:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    return IAConfig.from_mapping(values)


def _load_structure(path, t: int):
    return load_structure(path) if path else reference_structure(t)


# --- commands -------------------------------------------------------------------


def cmd_generate(args) -> int:
    structure = _load_structure(args.structure, args.t)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    data = generate_batch(structure, args.t, args.seed, args.replicates)
    files = []
    for r, panel in enumerate(data):
        name = f"panel_{r:04d}.csv"
        write_panel_csv(TimeSeriesPanel(panel), out / name)
        files.append(name)
    save_structure(structure, out / "structure.json")
    manifest = {
        "seed": args.seed,
        "t": args.t,
        "n": structure.n,
        "replicates": args.replicates,
        "structure_sha256": structure_hash(structure),
        "files": files,
        "version": __version__,
    }
    _dump(manifest, out / "manifest.json")
    print(f"wrote {len(files)} panels to {out}")
    return EXIT_OK


def cmd_estimate(args) -> int:
    paths = expand_inputs(args.panels)
    panels = [read_panel_csv(p, header=args.header) for p in paths]
    shapes = {p.data.shape for p in panels}
    if len(shapes) != 1:
        raise ValidationError(f"panels disagree on (N, T): {sorted(shapes)}")
    t = panels[0].t
    half = auto_half_size(t) if args.half_size == "auto" else int(args.half_size)
    smoothed = smoothed_periodogram(panels, half)
    save_tensor(smoothed, args.out)
    print(f"averaged {len(panels)} panel(s), half-window {half}, M={smoothed.m} -> {args.out}")
    return EXIT_OK


def cmd_learn(args) -> int:
    tensor = load_tensor(args.tensor)
    partition = resolve_partition(args, tensor.m)
    out = Path(args.out)
    meta = {"method": args.method, "input": str(args.tensor), "blocks": list(partition.starts), "version": __version__}
    start = time.perf_counter()
    if args.method == "cf":
        naive = tensor if isinstance(tensor, InverseCSDTensor) else naive_inverse(tensor)
        if args.budget is not None:
            budget = [int(s) for s in args.budget.split(",")]
        elif args.s is not None:
            budget = [args.s] * partition.k
        else:
            raise ValidationError("cf needs --s or --budget")
        result = cf_learn(naive, partition, budget)
        meta.update(budget=budget, iterations=0, converged=True)
    else:
        if isinstance(tensor, InverseCSDTensor):
            raise ValidationError("ia expects a smoothed CSD tensor, not an inverse")
        config = _ia_config(args)
        threads = resolve_threads(args.threads)
        chunk = math.ceil(tensor.m / threads) if threads > 1 else None
        res = ia_learn(tensor, partition, config, order=args.order, chunk_size=chunk, threads=threads)
        result = res.inverse
        trace_path = Path(args.trace) if args.trace else out.with_name(out.stem + ".trace.csv")
        write_trace_csv(res.trace, trace_path)
        if args.csd_out:
            save_tensor(res.csd, args.csd_out)
        meta.update(config=config.as_dict(), iterations=res.iterations, converged=res.converged, trace=str(trace_path))
    meta["wall_time_s"] = time.perf_counter() - start
    save_tensor(result, out)
    _dump(meta, Path(args.meta) if args.meta else out.with_name(out.stem + ".meta.json"))
    print(f"{args.method}: iterations={meta['iterations']} converged={meta['converged']} -> {out}")
    return EXIT_OK


def cmd_extract(args) -> int:
    inv = load_tensor(args.inverse, inverse=True)
    partition = resolve_partition(args, inv.m)
    g = extract_kpcg(inv, partition, args.threshold, global_normalization=args.global_normalization)
    save_kpcg(g, args.out)
    if args.edges_csv:
        write_edge_csv(g, args.edges_csv)
    for note in g.warnings:
        print(f"warning: {note}", file=sys.stderr)
    print(f"edges per layer: {g.cardinalities()} -> {args.out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    if args.estimated:
        est = load_kpcg(args.estimated)
        if args.truth:
            truth = load_kpcg(args.truth)
        else:
            structure = _load_structure(args.structure, args.t)
            truth = ground_truth_kpcg(structure, FrequencyPartition.equal(est.k, n_frequencies(args.t)))
        print(f"SHD {shd(est, truth)}")
        return EXIT_OK

    regimes = ExperimentConfig.FULL_REGIMES if args.full else tuple(int(x) for x in args.regimes.split(","))
    config = ExperimentConfig(t=args.t, k=args.k, regimes=regimes, runs=args.runs, seed=args.seed, threshold=args.threshold)
    wanted = args.methods.split(",")
    for w in wanted:
        if w not in METHOD_KINDS:
            raise ValidationError(f"unknown method {w!r}; expected some of {METHOD_KINDS}")
    methods = [m for m in default_methods(s=args.s, max_iters=args.max_iters) if m.kind in wanted]
    structure = _load_structure(args.structure, args.t)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    def progress(row):
        if not args.quiet:
            print(f"{row.method:6s} N={row.regime:<5d} run={row.run:<3d} shd={row.shd} iters={row.iterations} {row.error}")

    rows = run_experiment(structure, methods, config, progress=progress)
    write_results_csv(rows, out / "results.csv")
    write_results_json(rows, out / "results.json")
    report = summarize(rows)
    write_summary_csv(report, out / "summary.csv")
    write_summary_json(report, out / "summary.json")
    for s in report["summary"]:
        print(f"{s['method']:6s} N={s['regime']:<5d} median SHD {s['median']}  [{s['p2_5']}, {s['p97_5']}]")
    return EXIT_OK


def cmd_pipeline(args) -> int:
    """Generate, estimate, learn, extract and score against the generating structure."""
    structure = _load_structure(args.structure, args.t)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    data = generate_batch(structure, args.t, args.seed, args.replicates)
    half = auto_half_size(args.t) if args.half_size == "auto" else int(args.half_size)
    smoothed = smoothed_periodogram(data, half)
    save_tensor(smoothed, out / "csd.json")
    partition = resolve_partition(args, smoothed.m)
    meta = {"seed": args.seed, "replicates": args.replicates, "half_size": half, "method": args.method}
    if args.method == "naive":
        inv = naive_inverse(smoothed)
    elif args.method == "cf":
        s = args.s if args.s is not None else min(7, structure.n * (structure.n - 1) // 2)
        inv = cf_learn(naive_inverse(smoothed), partition, [s] * partition.k)
        meta["s"] = s
    else:
        config = _ia_config(args)
        res = ia_learn(smoothed, partition, config)
        inv = res.inverse
        write_trace_csv(res.trace, out / "trace.csv")
        meta.update(config=config.as_dict(), iterations=res.iterations, converged=res.converged)
    save_tensor(inv, out / "inverse.json")
    eval_partition = FrequencyPartition.equal(args.k, smoothed.m)
    g = extract_kpcg(inv, eval_partition, args.threshold)
    save_kpcg(g, out / "kpcg.json")
    write_edge_csv(g, out / "edges.csv")
    truth = ground_truth_kpcg(structure, eval_partition)
    meta["shd"] = shd(g, truth)
    _dump(meta, out / "run.json")
    print(f"{args.method}: SHD {meta['shd']} (edges per layer {g.cardinalities()}, truth {truth.cardinalities()})")
    return EXIT_OK


# --- parser ---------------------------------------------------------------------


def _half_size(value: str):
    if value == "auto":
        return value
    try:
        v = int(value)
    except ValueError:
        raise argparse.ArgumentTypeError("half size must be an integer or 'auto'") from None
    if v < 0:
        raise argparse.ArgumentTypeError("half size must be nonnegative")
    return v


def _add_partition(p, required=True):
    g = p.add_mutually_exclusive_group(required=required)
    g.add_argument("--blocks", help="comma-separated block start indices, e.g. 0,64,448")
    g.add_argument("--equal-blocks", type=int, metavar="K", help="K blocks of equal size")


def _add_ia_flags(p):
    p.add_argument("--config", help="flat key = value file with IA settings (flags win)")
    p.add_argument("--lam", type=float)
    p.add_argument("--eta", type=float)
    p.add_argument("--eps", type=float)
    p.add_argument("--tau", type=float)
    p.add_argument("--max-iters", dest="max_iters", type=int)
    p.add_argument("--init", choices=("identity", "inverse"))
    p.add_argument("--stepsize-rule", dest="stepsize_rule", choices=("log_t", "log_sqrt_t"))
    p.add_argument("--c1", type=float)
    p.add_argument("--c2", type=float)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="specgraph", description="Multi-frequency partial correlation graphs.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("--threads", type=int, help="worker cap (default: $SPECGRAPH_THREADS or 1)")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="simulate panels from a band structure")
    p.add_argument("--structure", help="structure JSON (default: built-in two-band reference)")
    p.add_argument("--t", type=int, default=1024)
    p.add_argument("--replicates", type=int, default=1)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("estimate", help="average smoothed periodograms of panel CSVs")
    p.add_argument("panels", nargs="+", help="panel CSV files or glob patterns")
    p.add_argument("--half-size", type=_half_size, default="auto")
    p.add_argument("--header", action="store_true", help="panel CSVs have a header row")
    p.add_argument("--out", required=True, help="tensor file (.json or .bin)")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("learn", help="learn a block-sparse inverse CSD")
    p.add_argument("method", choices=("cf", "ia"))
    p.add_argument("--tensor", required=True)
    _add_partition(p)
    p.add_argument("--s", type=int, help="cf: the same budget for every block")
    p.add_argument("--budget", help="cf: comma-separated per-block budgets")
    _add_ia_flags(p)
    p.add_argument("--order", choices=("forward", "reverse"), default="forward")
    p.add_argument("--trace", help="ia: residual trace CSV (default: <out>.trace.csv)")
    p.add_argument("--csd-out", help="ia: also write the learned CSD tensor")
    p.add_argument("--meta", help="run metadata JSON (default: <out>.meta.json)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_learn)

    p = sub.add_parser("extract", help="threshold partial coherence into a layered graph")
    p.add_argument("--inverse", required=True)
    _add_partition(p)
    p.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD)
    p.add_argument("--global-normalization", action="store_true")
    p.add_argument("--out", required=True)
    p.add_argument("--edges-csv")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("evaluate", help="score a graph, or run the sample-availability sweep")
    p.add_argument("--estimated", help="KPCG JSON to score (skips the sweep)")
    p.add_argument("--truth", help="ground-truth KPCG JSON (default: from --structure)")
    p.add_argument("--structure")
    p.add_argument("--t", type=int, default=1024)
    p.add_argument("--k", type=int, default=8)
    p.add_argument("--regimes", default="5,20,100,1000")
    p.add_argument("--full", action="store_true", help="all regimes 5,10,20,50,100,1000")
    p.add_argument("--runs", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--methods", default=",".join(METHOD_KINDS))
    p.add_argument("--s", type=int, default=7, help="cf-nz budget")
    p.add_argument("--max-iters", type=int, default=2000)
    p.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD)
    p.add_argument("--out-dir", default="results")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("pipeline", help="generate -> estimate -> learn -> extract -> score")
    p.add_argument("--structure")
    p.add_argument("--t", type=int, default=1024)
    p.add_argument("--replicates", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--half-size", type=_half_size, default=8)
    p.add_argument("--method", choices=("naive", "cf", "ia"), default="ia")
    _add_partition(p, required=False)
    p.add_argument("--s", type=int)
    _add_ia_flags(p)
    p.add_argument("--k", type=int, default=8, help="blocks of the scoring partition")
    p.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_pipeline)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "pipeline" and args.blocks is None and args.equal_blocks is None:
        args.equal_blocks = args.k
    try:
        args.threads = resolve_threads(args.threads)
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalError, SpecGraphError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
