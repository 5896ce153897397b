"""Command-line entry point: ``flagforge <command> ...``.

Exit codes: 0 success, 2 usage or input error, 3 internal invariant violation.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from . import __version__
from .dataset import build_dataset, load_label_manifest
from .errors import DegenerateDifferences, FlagForgeError, InvariantViolation
from .flag import Flag, read_flags, write_flags
from .stats import format_mean_std, paired_t_test

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_INVARIANT = 3

FIXED_TIMESTAMP = "1970-01-01T00:00:00Z"
REPORT_METRICS = ("macro_precision", "macro_recall", "macro_f1")

log = logging.getLogger("flagforge")


class InputError(Exception):
    """Bad user input; reported on stderr with exit code 2."""


def _now(deterministic: bool) -> str:
    if deterministic:
        return FIXED_TIMESTAMP
    return datetime.now(timezone.utc).replace(microsecond=0).isoformat().replace("+00:00", "Z")


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _parse_int_list(text: str) -> List[int]:
    """``"1,2,3"`` or ``"1-5"`` (inclusive) -> list of ints."""
    out: List[int] = []
    try:
        for part in text.split(","):
            part = part.strip()
            if "-" in part[1:]:
                lo, hi = part.split("-", 1)
                out.extend(range(int(lo), int(hi) + 1))
            elif part:
                out.append(int(part))
    except ValueError:
        raise InputError(f"expected comma-separated integers or a range, got {text!r}") from None
    if not out:
        raise InputError(f"empty integer list {text!r}")
    return out


# ------------------------------------------------------------------ build


def cmd_build(args) -> int:
    ast_dir = Path(args.ast_dir)
    if not ast_dir.is_dir():
        raise InputError(f"{ast_dir}: not a directory")
    files = sorted(p for p in ast_dir.rglob("*.json") if p.is_file() and p.name != "labels.json")
    if args.labels:
        labels_path = Path(args.labels).resolve()
        files = [p for p in files if p.resolve() != labels_path]
    if not files:
        print(f"error: no input files in {ast_dir}", file=sys.stderr)
        return EXIT_INPUT
    labels = load_label_manifest(args.labels) if args.labels else None
    sweep = sorted(set(_parse_int_list(args.sweep_coverage))) if args.sweep_coverage else []
    for c in [args.coverage, *sweep]:
        if c < 1:
            raise InputError(f"coverage must be >= 1, got {c}")

    result = build_dataset(files, args.coverage, labels, args.default_label, sweep)
    out = Path(args.out)
    created = _now(args.deterministic)
    report = result.report(args.coverage, created)
    report_path = Path(args.report) if args.report else out.with_name(out.name + ".report.json")
    _write_json(report_path, report)

    if result.warnings:
        print(
            f"warning: {len(result.warnings)} dangling reference(s) (builtins or external ids); see {report_path}",
            file=sys.stderr,
        )
    for w in result.unresolved_labels:
        print(f"warning: {w}", file=sys.stderr)
    if result.errors:
        for path, err in result.errors:
            print(f"error: {path}: {err}", file=sys.stderr)
        print(f"error: {len(result.errors)} file(s) failed to parse; no dataset written", file=sys.stderr)
        return EXIT_INPUT

    out.parent.mkdir(parents=True, exist_ok=True)
    n_bytes = write_flags(out, result.flags)
    manifest = {
        "dataset_name": out.stem,
        "coverage": args.coverage,
        "created_at": created,
        "tool_version": __version__,
        "entries": [
            {"ast_path": f, "label_manifest_path": str(args.labels) if args.labels else None}
            for f in result.files
        ],
    }
    _write_json(out.with_name(out.name + ".manifest.json"), manifest)
    print(
        f"wrote {len(result.flags)} FLAGs from {len(files)} file(s) to {out} ({n_bytes} bytes)",
        file=sys.stderr,
    )
    if sweep:
        for row in report["coverage_sweep"]:
            print(f"coverage {row['coverage']}: {row['bytes']} bytes (x{row['relative']})", file=sys.stderr)
    return EXIT_OK


# ------------------------------------------------------------------ train


def _load_train_config(path: Optional[str]):
    from .train_eval import TrainConfig

    if not path:
        return TrainConfig()
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(doc, dict):
        raise InputError(f"{path}: config must be a JSON object")
    try:
        return TrainConfig.from_json(doc)
    except (TypeError, ValueError) as exc:
        raise InputError(f"{path}: {exc}") from None


def _run_seed(flags: Sequence[Flag], cfg, out_dir: str) -> dict:
    from .train_eval import run_experiment

    return run_experiment(flags, cfg, out_dir)


def summary_table(per_seed: Dict[int, dict]) -> List[str]:
    """Markdown rows of mean (± std) over seeds for each split."""
    lines = [
        f"| split | {' | '.join(REPORT_METRICS)} |",
        "|---|" + "---|" * len(REPORT_METRICS),
    ]
    for split in ("train", "val", "test"):
        runs = [per_seed[s][split] for s in sorted(per_seed) if per_seed[s].get(split)]
        if runs:
            cells = [format_mean_std([r[m] for r in runs]) for m in REPORT_METRICS]
            lines.append(f"| {split} | " + " | ".join(cells) + " |")
    return lines


def cmd_train(args) -> int:
    cfg = _load_train_config(args.config)
    try:
        warnings = cfg.validate()
    except ValueError as exc:
        raise InputError(f"invalid config: {exc}") from None
    for w in warnings:
        print(f"warning: {w}", file=sys.stderr)
    seeds = _parse_int_list(args.seeds) if args.seeds else [cfg.seed]
    if len(set(seeds)) != len(seeds):
        raise InputError("duplicate seeds")
    flags = read_flags(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    jobs = [(s, replace(cfg, seed=s), str(out / f"seed_{s}")) for s in seeds]
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_run_seed, [flags] * len(jobs), [j[1] for j in jobs], [j[2] for j in jobs]))
    else:
        results = [_run_seed(flags, c, d) for _, c, d in jobs]
    per_seed = {s: m for (s, _, _), m in zip(jobs, results)}

    _write_json(out / "seeds.json", {"seeds": seeds, "runs": {str(s): f"seed_{s}" for s in seeds}})
    lines = [f"# Summary over {len(seeds)} seed(s): {', '.join(map(str, seeds))}", ""]
    lines += summary_table(per_seed) + [""]
    (out / "summary.md").write_text("\n".join(lines), encoding="utf-8")
    print("\n".join(lines))
    return EXIT_OK


# ------------------------------------------------------------------ evaluate / predict


def _load_model(path: str, config_hash: Optional[str] = None):
    from .train_eval import load_model

    return load_model(path, config_hash)


def cmd_evaluate(args) -> int:
    from .train_eval import evaluate

    model = _load_model(args.checkpoint, args.config_hash)
    flags = [f for f in read_flags(args.data) if f.label is not None]
    if not flags:
        raise InputError(f"{args.data}: no labeled FLAGs")
    metrics = evaluate(model, flags).to_json()
    metrics["classes"] = list(model.classes)
    metrics["n"] = len(flags)
    text = json.dumps(metrics, indent=2, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return EXIT_OK


def cmd_predict(args) -> int:
    from .ast_ingest import load_ast_file
    from .fa_asg import build_fa_asg, check_invariants
    from .flag import extract_flags
    from .nn_core import load_checkpoint

    model = _load_model(args.checkpoint, args.config_hash)
    coverage = args.coverage or load_checkpoint(args.checkpoint)[1].get("coverage", 4)
    tree = load_ast_file(args.ast)
    g = build_fa_asg(tree)
    check_invariants(g)
    flags = extract_flags(g, coverage, tree)
    records = []
    if flags:
        proba = model.predict_proba(flags)
        for f, p in zip(flags, proba):
            records.append(
                {
                    "name": f.function_name,
                    "signature": list(f.signature),
                    "function_id": f.target_function,
                    "predicted_class": model.classes[int(p.argmax())],
                    "probabilities": {c: float(v) for c, v in zip(model.classes, p)},
                }
            )
    sys.stdout.write(json.dumps(records, indent=2) + "\n")
    return EXIT_OK


# ------------------------------------------------------------------ report


def _load_run_set(run_dir: Path, split: str) -> Dict[int, dict]:
    if not run_dir.is_dir():
        raise InputError(f"{run_dir}: not a directory")
    runs: Dict[int, dict] = {}
    for metrics_path in sorted(run_dir.glob("seed_*/metrics.json")):
        doc = json.loads(metrics_path.read_text(encoding="utf-8"))
        if doc.get(split) is None:
            raise InputError(f"{metrics_path}: no {split} metrics")
        runs[int(doc["seed"])] = doc[split]
    if not runs:
        raise InputError(f"{run_dir}: no seed_*/metrics.json found")
    return runs


def _format_p(p: float) -> str:
    cell = f"{p:.4f}" if p >= 1e-4 else f"{p:.2e}"
    return cell + ("*" if p <= 0.05 else "")


def comparison_table(a: Dict[int, dict], b: Dict[int, dict], names=("A", "B"), fmt: str = "md") -> str:
    seeds = sorted(a)
    rows = []
    for m in REPORT_METRICS:
        va = [a[s][m] for s in seeds]
        vb = [b[s][m] for s in seeds]
        try:
            t, p = paired_t_test(va, vb)
            p_cell, t_cell = _format_p(p), f"{t:.4f}"
        except DegenerateDifferences:
            p_cell, t_cell = "DegenerateDifferences", "-"
        rows.append([m, format_mean_std(va), format_mean_std(vb), t_cell, p_cell])
    header = ["metric", names[0], names[1], "t", "p-value"]
    if fmt == "csv":
        return "\n".join(",".join(f'"{c}"' if "," in c else c for c in r) for r in [header, *rows]) + "\n"
    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    lines += ["| " + " | ".join(r) + " |" for r in rows]
    lines.append("")
    lines.append(f"seeds: {', '.join(map(str, seeds))}; * marks p <= 0.05 (two-sided paired t-test)")
    return "\n".join(lines) + "\n"


def cmd_report(args) -> int:
    dir_a, dir_b = (Path(r) for r in args.runs)
    a = _load_run_set(dir_a, args.split)
    b = _load_run_set(dir_b, args.split)
    if sorted(a) != sorted(b):
        print(f"error: seed lists differ: {sorted(a)} vs {sorted(b)}", file=sys.stderr)
        return EXIT_INPUT
    if len(a) < 2:
        raise InputError("paired t-test needs at least two seeds per run set")
    text = comparison_table(a, b, (dir_a.name, dir_b.name), args.format)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return EXIT_OK


# ------------------------------------------------------------------ inspect / synth


def cmd_inspect(args) -> int:
    path = Path(args.path)
    with open(path, "rb") as fh:
        head = fh.read(8)
    if head == b"FLAGCKPT":
        from .nn_core import load_checkpoint

        arrays, header = load_checkpoint(path)
        info = {k: v for k, v in header.items() if k != "vocab"}
        info["vocab_size"] = len(header.get("vocab", {}).get("vocab", {}))
        info["parameters"] = {k: list(v.shape) for k, v in sorted(arrays.items())}
        info["parameter_count"] = int(sum(v.size for v in arrays.values()))
    elif path.suffix == ".jsonl":
        flags = read_flags(path)
        labels: Dict[str, int] = {}
        for f in flags:
            labels[str(f.label)] = labels.get(str(f.label), 0) + 1
        info = {
            "flags": len(flags),
            "files": len({f.source_path for f in flags}),
            "labels": dict(sorted(labels.items())),
            "nodes": sum(f.num_nodes for f in flags),
            "edges": sum(len(f.edges) for f in flags),
            "coverage": sorted({f.coverage for f in flags}),
        }
    else:
        from .ast_ingest import load_ast_file
        from .fa_asg import EdgeKind, build_fa_asg
        from .flag import extract_flags

        tree = load_ast_file(path)
        g = build_fa_asg(tree)
        info = {
            "source_path": tree.source_path,
            "nodes": len(g.nodes),
            "edges": {k.value: g.count(k) for k in EdgeKind},
            "functions": [
                {"name": f.function_name, "signature": list(f.signature), "nodes": f.num_nodes, "groups": f.num_groups}
                for f in extract_flags(g, args.coverage, tree)
            ],
            "warnings": g.warnings,
        }
    sys.stdout.write(json.dumps(info, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_synth(args) -> int:
    from .synth import planted_motif_corpus

    labels = planted_motif_corpus(args.out, n_contracts=args.contracts, seed=args.seed)
    print(f"wrote {len(labels)} contracts and labels.json to {args.out}", file=sys.stderr)
    return EXIT_OK


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="flagforge", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build", help="AST JSON directory -> JSONL FLAG dataset")
    p.add_argument("--ast-dir", required=True)
    p.add_argument("--labels", help="label manifest: {file: {function: class}}")
    p.add_argument("--coverage", type=int, default=4)
    p.add_argument("--out", required=True, help="output .jsonl path")
    p.add_argument("--sweep-coverage", help="also report bytes for these coverages, e.g. 1-5")
    p.add_argument("--default-label", help="label for functions absent from the manifest")
    p.add_argument("--report", help="build report path (default <out>.report.json)")
    p.add_argument("--deterministic", action="store_true", help="zero timestamps")
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("train", help="train one run per seed")
    p.add_argument("--data", required=True)
    p.add_argument("--config")
    p.add_argument("--seeds", help="comma-separated seeds (default: config seed)")
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, default=1, help="parallel seed processes")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="metrics of a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--config-hash", help="refuse checkpoints with a different config hash")
    p.add_argument("--out", help="also write metrics JSON here")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", help="per-function predictions for one AST file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--ast", required=True)
    p.add_argument("--coverage", type=int, help="override the coverage stored in the checkpoint")
    p.add_argument("--config-hash")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("report", help="compare two multi-seed run sets")
    p.add_argument("--runs", nargs=2, required=True, metavar=("DIR_A", "DIR_B"))
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--format", default="md", choices=("md", "csv"))
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("inspect", help="summarize an AST file, FLAG dataset or checkpoint")
    p.add_argument("path")
    p.add_argument("--coverage", type=int, default=4)
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("synth", help="generate the planted-motif corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--contracts", type=int, default=40)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except InvariantViolation as exc:
        print(f"internal error: invariant violated: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except (InputError, FlagForgeError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
