"""Corpus-level plumbing: AST directory + label manifest -> labeled FLAG dataset."""

from __future__ import annotations

import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from . import __version__
from .ast_ingest import load_ast_file
from .errors import FlagForgeError, InvariantViolation
from .fa_asg import build_fa_asg, check_invariants
from .flag import Flag, extract_flags

THREADS_ENV = "FLAGFORGE_THREADS"
LabelManifest = Dict[str, Dict[str, str]]


def load_label_manifest(path) -> LabelManifest:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict) or not all(isinstance(v, dict) for v in doc.values()):
        raise ValueError(f"{path}: label manifest must map file -> {{function: class}}")
    return doc


def _manifest_key(manifest: LabelManifest, source_path: str, ast_path: Path) -> Optional[str]:
    candidates = [
        source_path,
        Path(source_path).name,
        ast_path.name,
        ast_path.stem,
        ast_path.stem + ".sol",
    ]
    for c in candidates:
        if c in manifest:
            return c
    return None


def _lookup_label(entries: Dict[str, str], flag: Flag) -> Tuple[Optional[str], Optional[str]]:
    """(label, manifest entry used); an exact ``name(types)`` key beats a bare name."""
    full = f"{flag.function_name}({','.join(flag.signature)})"
    if full in entries:
        return entries[full], full
    if flag.function_name in entries:
        return entries[flag.function_name], flag.function_name
    return None, None


@dataclass
class FileResult:
    ast_path: str
    flags: List[Flag] = field(default_factory=list)
    warnings: List[str] = field(default_factory=list)
    error: Optional[str] = None
    source_path: str = ""
    contracts: int = 0
    sweep_bytes: Dict[int, int] = field(default_factory=dict)


def process_file(ast_path: str, coverage: int, sweep: Sequence[int] = ()) -> FileResult:
    """Parse one AST file and cut its FLAGs (plus byte counts for a coverage sweep)."""
    res = FileResult(ast_path=str(ast_path))
    try:
        tree = load_ast_file(ast_path)
        res.source_path = tree.source_path
        res.contracts = sum(1 for n in tree.nodes.values() if n.node_type == "ContractDefinition")
        g = build_fa_asg(tree)
        check_invariants(g)
        res.warnings.extend(f"{ast_path}: {w}" for w in g.warnings)
        res.flags = extract_flags(g, coverage, tree)
        for c in sweep:
            flags = res.flags if c == coverage else extract_flags(g, c, tree)
            res.sweep_bytes[c] = sum(len(f.dumps().encode("utf-8")) + 1 for f in flags)
    except InvariantViolation:
        raise
    except FlagForgeError as exc:
        res.error = f"{type(exc).__name__}: {exc}"
    except OSError as exc:
        res.error = f"{type(exc).__name__}: {exc}"
    return res


def _threads() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


@dataclass
class BuildResult:
    flags: List[Flag]
    errors: List[Tuple[str, str]]
    warnings: List[str]
    unresolved_labels: List[str]
    sweep_bytes: Dict[int, int]
    files: List[str]
    contract_count: int = 0

    def report(self, coverage: int, created_at: str) -> dict:
        counts: Dict[str, int] = {}
        for f in self.flags:
            key = f.label if f.label is not None else "<unlabeled>"
            counts[key] = counts.get(key, 0) + 1
        rep = {
            "tool_version": __version__,
            "created_at": created_at,
            "coverage": coverage,
            "contract_count": self.contract_count,
            "file_count": len(self.files),
            "function_count": len(self.flags),
            "label_counts": dict(sorted(counts.items())),
            "dangling_reference_warnings": len(self.warnings),
            "warnings": self.warnings,
            "unresolved_labels": self.unresolved_labels,
            "errors": [{"file": f, "error": e} for f, e in self.errors],
        }
        if self.sweep_bytes:
            base = self.sweep_bytes[min(self.sweep_bytes)]
            rep["coverage_sweep"] = [
                {"coverage": c, "bytes": b, "relative": round(b / base, 4) if base else None}
                for c, b in sorted(self.sweep_bytes.items())
            ]
        return rep


def build_dataset(
    ast_files: Sequence[Path],
    coverage: int,
    labels: Optional[LabelManifest] = None,
    default_label: Optional[str] = None,
    sweep: Sequence[int] = (),
    threads: Optional[int] = None,
) -> BuildResult:
    """Process files (in parallel when FLAGFORGE_THREADS > 1) and attach labels."""
    files = [str(p) for p in ast_files]
    threads = _threads() if threads is None else threads
    if threads > 1 and len(files) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(process_file, files, [coverage] * len(files), [tuple(sweep)] * len(files)))
    else:
        results = [process_file(f, coverage, sweep) for f in files]

    flags: List[Flag] = []
    errors = []
    warnings: List[str] = []
    unresolved: List[str] = []
    sweep_bytes: Dict[int, int] = {c: 0 for c in sweep}
    used_keys = set()
    contract_count = 0
    for res in results:
        if res.error is not None:
            errors.append((res.ast_path, res.error))
            continue
        warnings.extend(res.warnings)
        contract_count += res.contracts
        for c, b in res.sweep_bytes.items():
            sweep_bytes[c] += b
        if labels is None:
            flags.extend(res.flags)
            continue
        key = _manifest_key(labels, res.source_path, Path(res.ast_path))
        entries = labels.get(key, {}) if key is not None else {}
        for f in res.flags:
            label, used = _lookup_label(entries, f)
            if used is not None:
                used_keys.add((key, used))
            f.label = label if label is not None else default_label
            flags.append(f)
    if labels is not None:
        for file_key, entries in sorted(labels.items()):
            for fn in sorted(entries):
                if (file_key, fn) not in used_keys:
                    unresolved.append(f"{file_key}: label for {fn!r} matches no FunctionDefinition")
    return BuildResult(flags, errors, warnings, unresolved, sweep_bytes, files, contract_count)
