"""Load solc compact-JSON ASTs into a flat, id-indexed tree.

The compact format (solc >= 0.4.12) stores every node as a JSON object with
``id``, ``nodeType`` and ``src``; sub-nodes hang off typed fields such as
``body``, ``condition`` or ``statements``.  Those fields are flattened into an
ordered ``children`` list and the field name is kept on the child as the
``child_role`` attribute so later passes can still ask for "the trueBody of
this IfStatement".
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Dict, Iterator, List, Optional, Set

from .errors import DuplicateId, MalformedJson, SchemaMismatch

SCHEMA_VERSION = 1
# Ids for nodes that carry none.  Kept far below solc's small negative builtin
# ids (msg = -15, ...) so a synthetic node can never capture a builtin reference.
SYNTHETIC_ID_BASE = -1_000_001

# Scalar fields copied into AstNode.attributes (stringified).
_ATTRIBUTE_KEYS = {
    "operator": "operator",
    "value": "value",
    "hexValue": "hex_value",
    "visibility": "visibility",
    "stateMutability": "state_mutability",
    "kind": "kind",
    "memberName": "member_name",
    "stateVariable": "state_variable",
    "constant": "constant",
    "mutability": "mutability",
    "storageLocation": "storage_location",
    "isConstructor": "is_constructor",
    "superFunction": "super_function",
    "prefix": "prefix",
}

DECLARATION_ROOT_TYPES = ("FunctionDefinition", "VariableDeclaration")
_TOP_LEVEL_PARENTS = ("ContractDefinition", "SourceUnit")


@dataclass
class AstNode:
    id: int
    node_type: str
    name: Optional[str] = None
    attributes: Dict[str, str] = field(default_factory=dict)
    referenced_declaration: Optional[int] = None
    children: List[int] = field(default_factory=list)
    src: str = ""
    # filled by mark_declarations
    parent: Optional[int] = None
    decl: Optional[int] = None

    @property
    def role(self) -> Optional[str]:
        return self.attributes.get("child_role")

    @property
    def base_functions(self) -> List[int]:
        ids = [int(x) for x in self.attributes.get("base_functions", "").split()]
        old = self.attributes.get("super_function")
        if old not in (None, "", "0", "None"):
            ids.append(int(old))
        return ids


@dataclass
class AstTree:
    root: int
    nodes: Dict[int, AstNode]
    source_path: str = ""
    declaration_roots: Set[int] = field(default_factory=set)

    def __getitem__(self, node_id: int) -> AstNode:
        return self.nodes[node_id]

    def __len__(self) -> int:
        return len(self.nodes)

    def child_with_role(self, node_id: int, role: str) -> Optional[AstNode]:
        for cid in self.nodes[node_id].children:
            if self.nodes[cid].role == role:
                return self.nodes[cid]
        return None

    def children_with_role(self, node_id: int, role: str) -> List[AstNode]:
        return [self.nodes[c] for c in self.nodes[node_id].children if self.nodes[c].role == role]

    def walk(self, start: Optional[int] = None) -> Iterator[AstNode]:
        """Pre-order traversal, children in document order."""
        stack = [self.root if start is None else start]
        while stack:
            node = self.nodes[stack.pop()]
            yield node
            stack.extend(reversed(node.children))

    def subtree_ids(self, start: int) -> List[int]:
        return [n.id for n in self.walk(start)]

    def functions(self) -> List[AstNode]:
        return [n for n in self.walk() if n.node_type == "FunctionDefinition"]


def _stringify(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def _is_node(obj: Any) -> bool:
    return isinstance(obj, dict) and "nodeType" in obj


def _unwrap_root(doc: Any) -> dict:
    if _is_node(doc):
        return doc
    if isinstance(doc, dict):
        if _is_node(doc.get("ast")):
            return doc["ast"]
        sources = doc.get("sources")
        if isinstance(sources, dict) and len(sources) == 1:
            (entry,) = sources.values()
            if isinstance(entry, dict) and _is_node(entry.get("ast")):
                return entry["ast"]
    raise SchemaMismatch("document root carries no nodeType")


def parse_ast_json(raw: bytes | str, source_path: str = "") -> AstTree:
    """Parse one compact-JSON AST document.

    Raises MalformedJson, SchemaMismatch or DuplicateId.
    """
    try:
        doc = json.loads(raw)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise MalformedJson(f"{source_path or '<input>'}: {exc}") from exc
    root_raw = _unwrap_root(doc)
    if not source_path:
        source_path = str(root_raw.get("absolutePath", ""))

    nodes: Dict[int, AstNode] = {}
    next_synthetic = SYNTHETIC_ID_BASE
    root_id: Optional[int] = None
    # (raw dict, parent id, role); children are attached in document order
    stack: list = [(root_raw, None, None)]
    while stack:
        obj, parent_id, role = stack.pop()
        if "id" in obj:
            node_id = obj["id"]
            if isinstance(node_id, bool) or not isinstance(node_id, int):
                raise SchemaMismatch(f"non-integer id {node_id!r} on {obj.get('nodeType')}")
        else:
            node_id = next_synthetic
            next_synthetic -= 1
        if node_id in nodes:
            raise DuplicateId(f"id {node_id} appears more than once")
        node_type = obj["nodeType"]
        if not isinstance(node_type, str):
            raise SchemaMismatch(f"node {node_id}: nodeType must be a string")

        attrs: Dict[str, str] = {}
        if role is not None:
            attrs["child_role"] = role
        for key, out_key in _ATTRIBUTE_KEYS.items():
            val = obj.get(key)
            if val is not None and not isinstance(val, (dict, list)):
                attrs[out_key] = _stringify(val)
        type_desc = obj.get("typeDescriptions")
        if isinstance(type_desc, dict) and type_desc.get("typeString") is not None:
            attrs["type_string"] = str(type_desc["typeString"])
        base = obj.get("baseFunctions")
        if isinstance(base, list) and base:
            attrs["base_functions"] = " ".join(str(int(b)) for b in base)

        ref = obj.get("referencedDeclaration")
        name = obj.get("name")
        node = AstNode(
            id=node_id,
            node_type=node_type,
            name=name if isinstance(name, str) else None,
            attributes=attrs,
            referenced_declaration=ref if isinstance(ref, int) and not isinstance(ref, bool) else None,
            src=str(obj.get("src", "")),
            parent=parent_id,
        )
        nodes[node_id] = node
        if parent_id is None:
            root_id = node_id
        else:
            nodes[parent_id].children.append(node_id)

        pending = []
        for key, val in obj.items():
            items = val if isinstance(val, list) else [val]
            for item in items:
                if _is_node(item):
                    pending.append((item, node_id, key))
                elif isinstance(item, dict) and "id" in item:
                    raise SchemaMismatch(f"node {node_id}.{key}: object has id but no nodeType")
        stack.extend(reversed(pending))

    assert root_id is not None
    tree = AstTree(root=root_id, nodes=nodes, source_path=source_path)
    return mark_declarations(tree)


def mark_declarations(tree: AstTree) -> AstTree:
    """Collect declaration roots and tag every node with its enclosing one.

    Roots are all FunctionDefinitions plus VariableDeclarations declared
    directly in a contract or at file level.  Locals and parameters are not
    roots; they map to their enclosing function.
    """
    roots: Set[int] = set()
    stack: list = [(tree.root, None)]
    while stack:
        node_id, enclosing = stack.pop()
        node = tree.nodes[node_id]
        if enclosing is None and node.node_type in DECLARATION_ROOT_TYPES:
            parent_type = tree.nodes[node.parent].node_type if node.parent is not None else None
            if node.node_type == "FunctionDefinition" or parent_type in _TOP_LEVEL_PARENTS:
                roots.add(node_id)
                enclosing = node_id
        node.decl = enclosing
        stack.extend((c, enclosing) for c in node.children)
    tree.declaration_roots = roots
    return tree


def tree_to_json(tree: AstTree) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "source_path": tree.source_path,
        "root": tree.root,
        "nodes": [
            {
                "id": n.id,
                "node_type": n.node_type,
                "name": n.name,
                "attributes": dict(sorted(n.attributes.items())),
                "referenced_declaration": n.referenced_declaration,
                "children": list(n.children),
                "src": n.src,
            }
            for n in tree.walk()
        ],
    }


def tree_from_json(doc: dict) -> AstTree:
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise SchemaMismatch(f"unsupported AstTree schema_version {doc.get('schema_version')!r}")
    nodes: Dict[int, AstNode] = {}
    for rec in doc["nodes"]:
        if rec["id"] in nodes:
            raise DuplicateId(f"id {rec['id']} appears more than once")
        nodes[rec["id"]] = AstNode(
            id=rec["id"],
            node_type=rec["node_type"],
            name=rec.get("name"),
            attributes=dict(rec.get("attributes", {})),
            referenced_declaration=rec.get("referenced_declaration"),
            children=list(rec.get("children", [])),
            src=rec.get("src", ""),
        )
    for node in nodes.values():
        for c in node.children:
            if c not in nodes:
                raise SchemaMismatch(f"node {node.id} lists missing child {c}")
            nodes[c].parent = node.id
    tree = AstTree(root=doc["root"], nodes=nodes, source_path=doc.get("source_path", ""))
    return mark_declarations(tree)


def load_ast_file(path) -> AstTree:
    with open(path, "rb") as fh:
        raw = fh.read()
    tree = parse_ast_json(raw)
    if not tree.source_path:
        tree.source_path = str(path)
    return tree
