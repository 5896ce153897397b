"""Function-level graphs cut from an FA-ASG, and their pooled quotient.

A FLAG starts from one function's subtree.  Each further coverage level adds
the subtrees of declarations that the current node set points at through
ReferencedDeclaration, Assignment or SuperFunction edges.  Coverage ``c``
therefore performs ``c - 1`` expansion rounds.
"""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

from .ast_ingest import AstTree
from .errors import CoverageOutOfRange
from .fa_asg import EdgeKind, FaAsg

SCHEMA_VERSION = 1
DEFAULT_COVERAGE = 4

EXPANSION_KINDS = frozenset(
    {EdgeKind.ReferencedDeclaration, EdgeKind.Assignment, EdgeKind.SuperFunction}
)
# Referenced declarations outside any function/state-variable subtree whose
# whole subtree is pulled in (into the Context group).  Anything else, e.g. a
# ContractDefinition, contributes only the referenced node itself.
CONTEXT_SUBTREE_TYPES = frozenset(
    {
        "ModifierDefinition",
        "EventDefinition",
        "ErrorDefinition",
        "StructDefinition",
        "EnumDefinition",
        "UserDefinedValueTypeDefinition",
    }
)

FUNCTION_GROUP = "Function"
VARIABLE_GROUP = "Variable"
CONTEXT_GROUP = "Context"


@dataclass
class Flag:
    target_function: int
    coverage: int
    node_ids: List[int]
    node_types: List[str]
    texts: List[str]
    node_decls: List[Optional[int]]
    edges: List[Tuple[int, int, str]]
    function_name: str = ""
    signature: List[str] = field(default_factory=list)
    source_path: str = ""
    label: Optional[str] = None
    pool_map: List[int] = field(default_factory=list)
    groups: List[Tuple[str, Optional[int]]] = field(default_factory=list)

    @property
    def num_nodes(self) -> int:
        return len(self.node_ids)

    @property
    def num_groups(self) -> int:
        return len(self.groups)

    @property
    def key(self) -> Tuple[str, str, Tuple[str, ...]]:
        return (self.source_path, self.function_name, tuple(self.signature))

    def to_record(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "source_path": self.source_path,
            "target_function": self.target_function,
            "function_name": self.function_name,
            "signature": list(self.signature),
            "coverage": self.coverage,
            "label": self.label,
            "nodes": [
                {"id": i, "node_type": t, "text": x, "decl": d, "group": g}
                for i, t, x, d, g in zip(
                    self.node_ids, self.node_types, self.texts, self.node_decls, self.pool_map
                )
            ],
            "edges": [list(e) for e in self.edges],
            "groups": [list(g) for g in self.groups],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_record(), separators=(",", ":"), ensure_ascii=False)

    @classmethod
    def from_record(cls, rec: dict) -> "Flag":
        if rec.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported FLAG schema_version {rec.get('schema_version')!r}")
        nodes = rec["nodes"]
        return cls(
            target_function=rec["target_function"],
            coverage=rec["coverage"],
            node_ids=[n["id"] for n in nodes],
            node_types=[n["node_type"] for n in nodes],
            texts=[n["text"] for n in nodes],
            node_decls=[n["decl"] for n in nodes],
            edges=[(int(a), int(b), str(k)) for a, b, k in rec["edges"]],
            function_name=rec.get("function_name", ""),
            signature=list(rec.get("signature", [])),
            source_path=rec.get("source_path", ""),
            label=rec.get("label"),
            pool_map=[n["group"] for n in nodes],
            groups=[(k, d) for k, d in rec["groups"]],
        )


@dataclass
class PooledFlag:
    supernodes: List[Tuple[str, Optional[int]]]
    edges: List[Tuple[int, int]]
    batch_id: List[int]


def function_identity(tree: AstTree, func_id: int) -> Tuple[str, List[str]]:
    """(display name, parameter type strings) of a FunctionDefinition."""
    node = tree[func_id]
    name = node.name or node.attributes.get("kind", "function")
    params = tree.child_with_role(func_id, "parameters")
    sig = []
    if params is not None:
        for p in tree.children_with_role(params.id, "parameters"):
            sig.append(p.attributes.get("type_string", "?"))
    return name, sig


class _GraphIndex:
    """Adjacency views of an FA-ASG used during extraction."""

    def __init__(self, g: FaAsg):
        self.g = g
        self.children: Dict[int, List[int]] = defaultdict(list)
        self.refs: Dict[int, List[int]] = defaultdict(list)
        self.out: Dict[int, List[Tuple[int, int, EdgeKind]]] = defaultdict(list)
        for s, d, k in g.edges:
            self.out[s].append((s, d, k))
            if k is EdgeKind.Child:
                self.children[s].append(d)
            elif k in EXPANSION_KINDS:
                self.refs[s].append(d)
        self._subtrees: Dict[int, List[int]] = {}

    def subtree(self, root: int) -> List[int]:
        hit = self._subtrees.get(root)
        if hit is None:
            hit = []
            stack = [root]
            while stack:
                u = stack.pop()
                hit.append(u)
                stack.extend(reversed(self.children.get(u, ())))
            self._subtrees[root] = hit
        return hit

    def unit_of(self, target: int) -> Tuple[int, List[int]]:
        """The inclusion unit (key, node ids) a referenced node drags in."""
        node = self.g.nodes[target]
        if node.decl is not None:
            return node.decl, self.subtree(node.decl)
        if node.node_type in CONTEXT_SUBTREE_TYPES:
            return target, self.subtree(target)
        return target, [target]


def _extract_one(index: _GraphIndex, func_id: int, coverage: int) -> Flag:
    g = index.g
    units = {func_id}
    order: List[int] = list(index.subtree(func_id))
    members = set(order)
    frontier = list(order)
    for _ in range(coverage - 1):
        added: List[int] = []
        for u in frontier:
            for v in index.refs.get(u, ()):
                key, unit_nodes = index.unit_of(v)
                if key in units:
                    continue
                units.add(key)
                fresh = [x for x in unit_nodes if x not in members]
                members.update(fresh)
                added.extend(fresh)
        if not added:
            break
        order.extend(added)
        frontier = added

    pos = {nid: i for i, nid in enumerate(order)}
    edges = []
    for u in order:
        for s, d, k in index.out.get(u, ()):
            j = pos.get(d)
            if j is not None:
                edges.append((pos[s], j, k.value))
    edges.sort()
    flag = Flag(
        target_function=func_id,
        coverage=coverage,
        node_ids=order,
        node_types=[g.nodes[n].node_type for n in order],
        texts=[g.nodes[n].text for n in order],
        node_decls=[g.nodes[n].decl for n in order],
        edges=edges,
        source_path=g.tree_ref,
    )
    return build_pool_map(flag)


def extract_flags(g: FaAsg, coverage: int = DEFAULT_COVERAGE, tree: Optional[AstTree] = None) -> List[Flag]:
    """One FLAG per FunctionDefinition, ordered by node id."""
    if not isinstance(coverage, int) or coverage < 1:
        raise CoverageOutOfRange(f"coverage must be an integer >= 1, got {coverage!r}")
    index = _GraphIndex(g)
    flags = []
    for fid in sorted(n.id for n in g.nodes.values() if n.node_type == "FunctionDefinition"):
        flag = _extract_one(index, fid, coverage)
        if tree is not None:
            flag.function_name, flag.signature = function_identity(tree, fid)
        else:
            text = g.nodes[fid].text.split(" ", 1)
            flag.function_name = text[1] if len(text) > 1 else "function"
        flags.append(flag)
    return flags


def _group_kind(node_type: str) -> str:
    return FUNCTION_GROUP if node_type == "FunctionDefinition" else VARIABLE_GROUP


def build_pool_map(f: Flag) -> Flag:
    """Assign every node to its declaration group; leftovers share one Context group."""
    type_of = dict(zip(f.node_ids, f.node_types))
    group_of: Dict[int, int] = {f.target_function: 0}
    groups: List[Tuple[str, Optional[int]]] = [(FUNCTION_GROUP, f.target_function)]
    pool_map: List[int] = []
    needs_context: List[int] = []
    for i, decl in enumerate(f.node_decls):
        if decl is None or decl not in type_of:
            pool_map.append(-1)
            needs_context.append(i)
            continue
        gi = group_of.get(decl)
        if gi is None:
            gi = group_of[decl] = len(groups)
            groups.append((_group_kind(type_of[decl]), decl))
        pool_map.append(gi)
    if needs_context:
        ctx = len(groups)
        groups.append((CONTEXT_GROUP, None))
        for i in needs_context:
            pool_map[i] = ctx
    f.pool_map = pool_map
    f.groups = groups
    return f


def pool_structure(f: Flag) -> PooledFlag:
    """Quotient graph of the FLAG under its pool map, inter-group edges only."""
    pm = f.pool_map
    pairs = {(pm[u], pm[v]) for u, v, _ in f.edges if pm[u] != pm[v]}
    return PooledFlag(
        supernodes=list(f.groups),
        edges=sorted(pairs),
        batch_id=[0] * len(f.groups),
    )


def write_flags(path, flags: Sequence[Flag]) -> int:
    """Write JSONL; returns bytes written."""
    data = "".join(f.dumps() + "\n" for f in flags).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(data)
    return len(data)


def read_flags(path) -> List[Flag]:
    with open(path, encoding="utf-8") as fh:
        return [Flag.from_record(json.loads(line)) for line in fh if line.strip()]
