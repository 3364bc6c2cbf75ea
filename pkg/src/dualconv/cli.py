"""``dualconv`` command-line entry point.

Subcommands: analyze, verify, gradcheck, bench, train-demo, emit-config.
Exit status is 0 when every check a subcommand performs passes, 1 when a
check fails and 2 on invalid input.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from . import bench as bench_mod
from . import cost as cost_mod
from . import published, sweep
from .errors import DualConvError
from .graph import ModelConfig, emit_config, parse_config
from .kernels import ConvKind, ConvSpec
from .policy import RULES, ReplacementPolicy, apply_policy, default_policy
from .train import SyntheticTask, TrainConfig, end_to_end_gradcheck, layer_gradcheck, train
from .zoo import MODELS, TINY_MODELS, build, canonical, tiny

GRAD_TOLERANCE = 1e-6
TRAIN_TARGET = 0.95


def _write(path: str | Path, text: str) -> None:
    Path(path).write_text(text, encoding="utf-8")


def _json_sibling(path: str | Path) -> Path:
    p = Path(path)
    return p.with_suffix(".json") if p.suffix != ".json" else p.with_name(p.stem + ".data.json")


def _kind_arg(args) -> ConvKind | None:
    if getattr(args, "dual", False):
        return ConvKind.DUAL
    return ConvKind.parse(args.kind) if args.kind else None


def _g_or_p(kind: ConvKind | None, args) -> int | None:
    if kind is ConvKind.HET:
        return args.p if args.p is not None else args.g
    if kind in (ConvKind.GROUP, ConvKind.DUAL):
        return args.g if args.g is not None else args.p
    return None


def _default_variant(model: str) -> str:
    return "voc" if model.lower().startswith("yolo") else "cifar10"


def _load_model(args) -> tuple[ModelConfig, str, str]:
    """(config, model name, variant) for a built-in, toy or file-based model."""
    if args.config:
        cfg = parse_config(Path(args.config).read_text(encoding="utf-8"))
        return cfg, cfg.name, "custom"
    if not args.model:
        raise DualConvError("give a model name or --config PATH")
    if args.model in TINY_MODELS:
        return tiny(args.model), args.model, "toy"
    model, variant = canonical(args.model, args.variant or _default_variant(args.model))
    return build(model, variant), model, variant


def _policy(args, model: str, variant: str, kind: ConvKind, g_or_p):
    if args.rule:
        return ReplacementPolicy.named(args.rule, kind, g_or_p)
    if model in MODELS:
        return default_policy(model, variant, kind, g_or_p)
    return ReplacementPolicy.named("stride1", kind, g_or_p)


def _find_row(model, variant, kind, g_or_p):
    for row in published.ROWS:
        if (row.model, row.variant, row.kind, row.g_or_p) == (model, variant, kind, g_or_p):
            return row
    return None


# -- analyze --------------------------------------------------------------------

def cmd_analyze(args) -> int:
    if args.paper_tables:
        return _published_tables(args)
    cfg, model, variant = _load_model(args)
    kind = _kind_arg(args) or ConvKind.STANDARD
    g_or_p = _g_or_p(kind, args)
    row = None
    if model in MODELS and not args.rule and not args.config:
        row = _find_row(model, variant, kind, g_or_p)
    if row is not None:
        cfg = row.config()
        base = build(model, variant, **row.options)
    else:
        base = cfg
        if kind is not ConvKind.STANDARD:
            cfg = apply_policy(cfg, _policy(args, model, variant, kind, g_or_p))
    cost = cost_mod.model_cost(cfg)
    std = cost_mod.model_cost(base)
    if args.layers:
        print(cost_mod.layer_table(cost))
    record = dict(model=model, variant=variant, G_or_P=g_or_p, flops_mac=cost.flops, params=cost.params,
                  ratio_vs_standard=cost.flops / std.flops)
    line = f"{model} {variant} {kind.value}"
    if g_or_p is not None:
        line += f" {'P' if kind is ConvKind.HET else 'G'}={g_or_p}"
    line += f": {cost_mod.human(cost.flops)} / {cost_mod.human(cost.params)}"
    line += f"  (flops {cost.flops}, params {cost.params}, ratio {record['ratio_vs_standard']:.4f})"
    print(line)
    status = 0
    extra: tuple[str, ...] = ()
    if row is not None:
        check = published.check_row(row)
        record.update(published_flops=row.flops, published_params=row.params or "",
                      flops_error=check.flops_error, status=check.status)
        extra = ("published_flops", "published_params", "flops_error", "status")
        print(f"published {row.flops} / {row.params or '-'}  flops err {check.flops_error:.2%}  {check.status}")
        if not check.passed and row.gating:
            status = 1
    if args.out:
        _write(args.out, cost_mod.rows_to_csv([record], extra))
        _write(_json_sibling(args.out), json.dumps(
            {"summary": record, "layers": [dict(name=l.name, op=l.op, kind=l.kind, out_shape=list(l.out_shape),
                                                flops=l.flops, params=l.params) for l in cost.layers]}, indent=2))
    return status


def _published_tables(args) -> int:
    t0 = time.perf_counter()
    checks = published.check_all()
    std_cache: dict[tuple, int] = {}
    records = []
    print(f"{'row':<40}{'flops':>12}{'published':>12}{'err':>8}{'params':>12}{'published':>12}{'err':>8}  status")
    for c in checks:
        r = c.row
        key = (r.model, r.variant, tuple(sorted(r.options.items())))
        if key not in std_cache:
            std_cache[key] = published.standard_flops(r.model, r.variant, **r.options)
        p_err = "" if c.params_error is None else f"{c.params_error:.2%}"
        print(f"{r.label:<40}{cost_mod.human(c.flops):>12}{r.flops:>12}{c.flops_error:>8.2%}"
              f"{cost_mod.human(c.params):>12}{r.params or '-':>12}{p_err:>8}  {c.status}")
        records.append(dict(model=r.model, variant=r.variant, G_or_P=r.g_or_p, flops_mac=c.flops,
                            params=c.params, ratio_vs_standard=c.flops / std_cache[key], kind=r.kind.value,
                            published_flops=r.flops, published_params=r.params or "",
                            flops_error=c.flops_error, params_error="" if c.params_error is None else c.params_error,
                            tolerance=r.tolerance, status=c.status, note=r.note))
    failed = [c for c in checks if not c.passed and c.row.gating]
    flagged = [c for c in checks if not c.passed and not c.row.gating]
    print(f"{len(checks)} rows: {len(checks) - len(failed) - len(flagged)} pass, {len(failed)} fail, "
          f"{len(flagged)} non-gating mismatch ({time.perf_counter() - t0:.2f}s)")
    for c in flagged:
        print(f"  note {c.row.label}: {c.row.note}")
    if args.out:
        extra = ("kind", "published_flops", "published_params", "flops_error", "params_error", "tolerance",
                 "status", "note")
        _write(args.out, cost_mod.rows_to_csv(records, extra))
        _write(_json_sibling(args.out), cost_mod.rows_to_json(records))
    return 1 if (failed and args.strict) else 0


# -- verify ---------------------------------------------------------------------

def _parse_kinds(text: str | None):
    if not text:
        return sweep.ALL_KINDS
    return tuple(ConvKind.parse(k) for k in text.split(","))


def cmd_verify(args) -> int:
    precision = 64 if args.f64 else 32
    kinds = _parse_kinds(args.kinds)
    if args.g is not None:
        bad = [k.value for k in kinds if k not in (ConvKind.GROUP, ConvKind.DUAL, ConvKind.HET)]
        if bad:
            raise DualConvError(f"--g applies to group/dual/het only, not {', '.join(bad)}")
    t0 = time.perf_counter()
    report = sweep.run_sweep(args.seed, args.cases, precision, kinds, args.g)
    tol = report.tolerance
    ok = report.passed
    print(f"{len(report.results)} cases, float{precision}, tolerance {tol:g} ({time.perf_counter() - t0:.1f}s)")
    for kind, diff in sorted(report.max_by_kind().items()):
        print(f"  {kind:<6} max |fast - oracle| = {diff:.3e}  {'PASS' if diff <= tol else 'FAIL'}")
    if any(r.decomposition_diff is not None for r in report.results):
        d = report.max_decomposition_diff
        print(f"  dual decomposition max diff = {d:.3e}  {'PASS' if d <= tol else 'FAIL'}")
    mism = report.mac_mismatches
    print(f"  MAC counter vs cost model: {len(mism)} mismatches  {'PASS' if not mism else 'FAIL'}")
    degen = sweep.degeneracy_diffs(args.seed, precision)
    for name, d in degen.items():
        good = d <= tol
        ok = ok and good
        print(f"  degeneracy {name} = {d:.3e}  {'PASS' if good else 'FAIL'}")
    print("PASS" if ok else "FAIL")
    if args.out:
        _write(args.out, json.dumps({
            "precision": precision, "cases": len(report.results), "tolerance": tol,
            "max_by_kind": report.max_by_kind(), "decomposition": report.max_decomposition_diff,
            "mac_mismatches": len(mism), "degeneracies": degen, "passed": ok}, indent=2))
    return 0 if ok else 1


# -- gradcheck ------------------------------------------------------------------

_LAYER_SPECS = (
    ConvSpec(ConvKind.STANDARD, 4, 6, 3, 1, 1),
    ConvSpec(ConvKind.GROUP, 4, 6, 3, 2, 1, 2),
    ConvSpec(ConvKind.DUAL, 4, 6, 3, 1, 1, 2),
    ConvSpec(ConvKind.DUAL, 4, 4, 3, 2, 0, 4),
    ConvSpec(ConvKind.HET, 4, 5, 3, 1, 1, None, 2),
    ConvSpec(ConvKind.DEPTHWISE_SEPARABLE, 4, 6, 3, 1, 1),
)


def cmd_gradcheck(args) -> int:
    results = {}
    if args.layers:
        for spec in _LAYER_SPECS:
            r = layer_gradcheck(spec, args.seed)
            results[bench_mod.spec_id(spec, (2, spec.in_channels, 6, 6))] = r.max_rel_error
    if args.model:
        t0 = time.perf_counter()
        r = end_to_end_gradcheck(tiny(args.model), args.seed)
        results[args.model] = r.max_rel_error
        print(f"{args.model}: {r.entries} weights checked ({time.perf_counter() - t0:.1f}s)")
    ok = True
    for name, err in results.items():
        good = err <= GRAD_TOLERANCE
        ok = ok and good
        print(f"  {name:<48} max rel. error {err:.3e}  {'PASS' if good else 'FAIL'}")
    if args.out:
        _write(args.out, json.dumps({"tolerance": GRAD_TOLERANCE, "max_rel_error": results, "passed": ok},
                                    indent=2))
    return 0 if ok else 1


# -- bench ----------------------------------------------------------------------

def cmd_bench(args) -> int:
    results = []
    if args.model:
        cfg, _, _ = _load_model(args)
        mb = bench_mod.bench_model(cfg, args.warmup, args.runs, args.seed, args.gemm)
        print(f"{cfg.name}: median {mb.total.median_ms:.3f} ms (MAD {mb.total.mad_ns / 1e6:.3f} ms)")
        for name, r in mb.layers.items():
            print(f"  {name:<28}{r.median_ms:>10.3f} ms")
        results = [mb.total, *mb.layers.values()]
    else:
        m, n, d, k = (int(v) for v in args.layer.split(","))
        shape = (1, m, d, d)
        medians: dict[str, float] = {}
        for kind in _parse_kinds(args.kinds):
            groups = [None]
            if kind in (ConvKind.GROUP, ConvKind.DUAL, ConvKind.HET):
                groups = [int(g) for g in args.g.split(",")]
            for g in groups:
                parts = g if kind is ConvKind.HET else None
                spec = ConvSpec(kind, m, n, k, 1, (k - 1) // 2, None if parts else g, parts)
                r = bench_mod.bench_layer(spec, shape, args.warmup, args.runs, args.seed, args.gemm)
                results.append(r)
                label = kind.value if g is None else f"{kind.value}-{'P' if parts else 'G'}{g}"
                medians[label] = r.median_ms
                print(f"  {label:<12} median {r.median_ms:9.3f} ms  MAD {r.mad_ns / 1e6:7.3f} ms  "
                      f"{r.macs_per_second / 1e9:6.2f} GMAC/s")
        if "dual-G16" in medians and "dual-G32" in medians:
            faster = "G32" if medians["dual-G32"] < medians["dual-G16"] else "G16"
            print(f"  dual G16 vs G32: {faster} is faster")
    if args.out:
        _write(args.out, bench_mod.results_to_csv(results))
        _write(_json_sibling(args.out), bench_mod.results_to_json(results))
    return 0


# -- train-demo -----------------------------------------------------------------

def cmd_train_demo(args) -> int:
    task = SyntheticTask(classes=2, channels=4, size=8, noise=args.noise, seed=args.seed)
    cfg = TrainConfig(learning_rate=args.lr, epochs=args.epochs, seed=args.seed)
    t0 = time.perf_counter()
    result = train(tiny(args.model), task, cfg, trajectory_path=args.out)
    for r in result.history:
        if args.verbose or r.epoch == len(result.history) - 1:
            print(f"epoch {r.epoch:3d}  lr {r.lr:.4g}  loss {r.train_loss:.4f}  test acc {r.test_accuracy:.4f}")
    acc = result.final_accuracy
    ok = acc >= args.target
    print(f"final accuracy {acc:.4f} (target {args.target}) {'PASS' if ok else 'FAIL'} "
          f"({time.perf_counter() - t0:.1f}s)")
    return 0 if ok else 1


# -- emit-config ----------------------------------------------------------------

def cmd_emit_config(args) -> int:
    if args.model in TINY_MODELS:
        cfg, model, variant = tiny(args.model), args.model, "toy"
    else:
        model, variant = canonical(args.model, args.variant or _default_variant(args.model))
        cfg = build(model, variant)
    kind = _kind_arg(args)
    if kind is not None and kind is not ConvKind.STANDARD:
        cfg = apply_policy(cfg, _policy(args, model, variant, kind, _g_or_p(kind, args)))
    text = emit_config(cfg)
    if parse_config(text) != cfg:
        print("emitted text does not re-parse to the same model", file=sys.stderr)
        return 1
    if args.out:
        _write(args.out, text)
    else:
        sys.stdout.write(text)
    return 0


# -- parser ---------------------------------------------------------------------

def _policy_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--kind", help="target operator: std, group, dual, het, dsc")
    p.add_argument("--dual", action="store_true", help="shorthand for --kind dual")
    p.add_argument("--g", type=int, help="group count G for group/dual")
    p.add_argument("--p", type=int, help="part count P for het")
    p.add_argument("--rule", choices=RULES, help="replacement rule (default: the model's own rule)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dualconv", description="Cost analysis, operator verification, benchmarks and toy training for DualConv.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("analyze", help="FLOPs and parameter counts of a model")
    p.add_argument("model", nargs="?", help=f"built-in model ({', '.join(MODELS)}) or toy model")
    p.add_argument("--variant", help="dataset variant: cifar10, cifar100, imagenet, voc")
    p.add_argument("--config", help="path to a model config text file instead of a built-in model")
    _policy_flags(p)
    p.add_argument("--layers", action="store_true", help="print the per-layer table")
    p.add_argument("--paper-tables", action="store_true",
                   help="check every built-in row against its published FLOPs/params")
    p.add_argument("--strict", action="store_true", help="with --paper-tables, exit 1 if a gating row fails")
    p.add_argument("--seed", type=int, default=0, help="unused; accepted for uniformity")
    p.add_argument("--out", help="CSV output path; a JSON copy is written next to it")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("verify", help="randomised fast-path vs oracle sweep")
    p.add_argument("--seed", type=int, default=0, help="sweep seed")
    p.add_argument("--cases", type=int, default=200, help="number of random cases")
    p.add_argument("--f64", action="store_true", help="run in float64 (tolerance 1e-12) instead of float32")
    p.add_argument("--kinds", help="comma-separated kinds to sweep (default: all)")
    p.add_argument("--g", type=int, help="fix the group/part count")
    p.add_argument("--out", help="JSON summary path")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("gradcheck", help="finite-difference gradient checks in float64")
    p.add_argument("--model", default="tiny-dual", help=f"toy model ({', '.join(TINY_MODELS)}); '' to skip")
    p.add_argument("--layers", action="store_true", help="also check one layer of every kind")
    p.add_argument("--seed", type=int, default=0, help="weights/input seed")
    p.add_argument("--out", help="JSON summary path")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("bench", help="single-threaded forward timing")
    p.add_argument("--layer", default="256,256,28,3", help="M,N,D,K of the benchmarked layer")
    p.add_argument("--kinds", default="std,dual", help="comma-separated kinds for layer mode")
    p.add_argument("--g", default="4,8,16,32", help="comma-separated G (or P) values for layer mode")
    p.add_argument("--model", help="benchmark a whole model at batch 1 instead of one layer")
    p.add_argument("--variant", help="variant for --model")
    p.add_argument("--config", help="model config file for whole-model mode")
    p.add_argument("--warmup", type=int, default=3, help="untimed warm-up runs")
    p.add_argument("--runs", type=int, default=bench_mod.MIN_RUNS, help="timed runs (>= 10)")
    p.add_argument("--gemm", choices=("tiled", "reference"), default="tiled", help="GEMM variant")
    p.add_argument("--seed", type=int, default=0, help="input/weight seed")
    p.add_argument("--out", help="CSV output path; a JSON copy is written next to it")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("train-demo", help="train a toy network on the synthetic task")
    p.add_argument("--model", default="tiny-dual", choices=[m for m in TINY_MODELS if m != "single-pointwise"],
                   help="toy network")
    p.add_argument("--epochs", type=int, default=30, help="training epochs")
    p.add_argument("--lr", type=float, default=0.1, help="initial learning rate")
    p.add_argument("--noise", type=float, default=1.0, help="noise level of the synthetic task")
    p.add_argument("--target", type=float, default=TRAIN_TARGET, help="accuracy needed for exit 0")
    p.add_argument("--seed", type=int, default=0, help="data, init and shuffling seed")
    p.add_argument("--verbose", action="store_true", help="print every epoch")
    p.add_argument("--out", help="trajectory CSV path")
    p.set_defaults(func=cmd_train_demo)

    p = sub.add_parser("emit-config", help="print a model as config text")
    p.add_argument("model", help="built-in or toy model")
    p.add_argument("variant", nargs="?", help="dataset variant")
    _policy_flags(p)
    p.add_argument("--seed", type=int, default=0, help="unused; accepted for uniformity")
    p.add_argument("--out", help="output path (default: stdout)")
    p.set_defaults(func=cmd_emit_config)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (DualConvError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
