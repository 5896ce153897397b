"""Flow-augmented abstract syntax graph.

Three edge families are layered onto the AST:

* basic: Child / Parent pairs for every tree edge;
* data flow: ReferencedDeclaration, FunctionReturnParameter, SuperFunction,
  Assignment;
* control flow: CondTrue / CondFalse, While/For Execution and Next,
  NextStatement.

Only the basic family is reciprocal.  Flow edges are directed.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Tuple

from .ast_ingest import AstNode, AstTree
from .errors import InvariantViolation
from .tokenizer import node_text

SCHEMA_VERSION = 1


class EdgeKind(str, enum.Enum):
    Child = "Child"
    Parent = "Parent"
    ReferencedDeclaration = "ReferencedDeclaration"
    FunctionReturnParameter = "FunctionReturnParameter"
    SuperFunction = "SuperFunction"
    Assignment = "Assignment"
    CondTrue = "CondTrue"
    CondFalse = "CondFalse"
    WhileExecution = "WhileExecution"
    ForExecution = "ForExecution"
    WhileNext = "WhileNext"
    ForNext = "ForNext"
    NextStatement = "NextStatement"


BASIC_KINDS = frozenset({EdgeKind.Child, EdgeKind.Parent})
DATA_FLOW_KINDS = frozenset(
    {
        EdgeKind.ReferencedDeclaration,
        EdgeKind.FunctionReturnParameter,
        EdgeKind.SuperFunction,
        EdgeKind.Assignment,
    }
)
CONTROL_FLOW_KINDS = frozenset(set(EdgeKind) - BASIC_KINDS - DATA_FLOW_KINDS)

# Schema variants folded onto the abstract statement kinds the edge rules use.
NODE_KIND_ALIASES = {
    "WhileStatement": "while",
    "DoWhileStatement": "while",
    "ForStatement": "for",
    "IfStatement": "if",
    "Block": "block",
    "UncheckedBlock": "block",
}

# Node types that may be the target of a ReferencedDeclaration edge.
DECLARATION_TYPES = frozenset(
    {
        "FunctionDefinition",
        "VariableDeclaration",
        "ModifierDefinition",
        "EventDefinition",
        "ErrorDefinition",
        "StructDefinition",
        "EnumDefinition",
        "EnumValue",
        "ContractDefinition",
        "UserDefinedValueTypeDefinition",
        "ImportDirective",
    }
)

REFERENCE_NODE_TYPES = ("Identifier", "MemberAccess", "IdentifierPath")

Edge = Tuple[int, int, EdgeKind]


@dataclass
class GraphNode:
    id: int
    node_type: str
    text: str
    decl: Optional[int]


@dataclass
class FaAsg:
    nodes: Dict[int, GraphNode]
    edges: List[Edge] = field(default_factory=list)
    tree_ref: str = ""
    warnings: List[str] = field(default_factory=list)

    def add(self, src: int, dst: int, kind: EdgeKind) -> None:
        self.edges.append((src, dst, kind))

    def finalize(self) -> "FaAsg":
        self.edges = sorted(set(self.edges), key=lambda e: (e[0], e[1], e[2].value))
        return self

    def count(self, kind: EdgeKind) -> int:
        return sum(1 for e in self.edges if e[2] is kind)

    def to_record(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "tree_ref": self.tree_ref,
            "nodes": [
                {"id": n.id, "node_type": n.node_type, "text": n.text, "decl": n.decl}
                for n in sorted(self.nodes.values(), key=lambda n: n.id)
            ],
            "edges": [[s, d, k.value] for s, d, k in self.edges],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_record(), separators=(",", ":"))


def build_basic_edges(tree: AstTree) -> FaAsg:
    g = FaAsg(
        nodes={
            n.id: GraphNode(n.id, n.node_type, node_text(n), n.decl) for n in tree.nodes.values()
        },
        tree_ref=tree.source_path,
    )
    for node in tree.nodes.values():
        for c in node.children:
            g.add(node.id, c, EdgeKind.Child)
            g.add(c, node.id, EdgeKind.Parent)
    return g


def _lhs_declarations(tree: AstTree, expr: Optional[AstNode]) -> Iterable[int]:
    """Declaration ids written by an assignment's left-hand side."""
    if expr is None:
        return
    t = expr.node_type
    if t == "Identifier":
        if expr.referenced_declaration is not None:
            yield expr.referenced_declaration
    elif t == "IndexAccess" or t == "IndexRangeAccess":
        yield from _lhs_declarations(tree, tree.child_with_role(expr.id, "baseExpression"))
    elif t == "MemberAccess":
        yield from _lhs_declarations(tree, tree.child_with_role(expr.id, "expression"))
    elif t == "TupleExpression":
        for comp in tree.children_with_role(expr.id, "components"):
            yield from _lhs_declarations(tree, comp)


def add_data_flow_edges(g: FaAsg, tree: AstTree) -> FaAsg:
    nodes = tree.nodes
    for node in tree.nodes.values():
        t = node.node_type
        if t in REFERENCE_NODE_TYPES and node.referenced_declaration is not None:
            target = nodes.get(node.referenced_declaration)
            if target is None:
                g.warnings.append(
                    f"DanglingReference: node {node.id} ({node.name or node.attributes.get('member_name', t)})"
                    f" -> {node.referenced_declaration}"
                )
            elif target.node_type in DECLARATION_TYPES:
                g.add(node.id, target.id, EdgeKind.ReferencedDeclaration)
        elif t == "FunctionDefinition":
            returns = tree.child_with_role(node.id, "returnParameters")
            if returns is not None:
                for p in tree.children_with_role(returns.id, "parameters"):
                    g.add(node.id, p.id, EdgeKind.FunctionReturnParameter)
            for base in node.base_functions:
                if base in nodes:
                    g.add(node.id, base, EdgeKind.SuperFunction)
                else:
                    g.warnings.append(f"DanglingReference: function {node.id} overrides {base}")
        elif t == "Assignment":
            lhs = tree.child_with_role(node.id, "leftHandSide")
            for decl in _lhs_declarations(tree, lhs):
                if decl in nodes:
                    g.add(node.id, decl, EdgeKind.Assignment)
    return g


def add_control_flow_edges(g: FaAsg, tree: AstTree) -> FaAsg:
    for node in tree.nodes.values():
        kind = NODE_KIND_ALIASES.get(node.node_type)
        if kind == "if":
            body = tree.child_with_role(node.id, "trueBody")
            if body is not None:
                g.add(node.id, body.id, EdgeKind.CondTrue)
            body = tree.child_with_role(node.id, "falseBody")
            if body is not None:
                g.add(node.id, body.id, EdgeKind.CondFalse)
        elif kind in ("while", "for"):
            execution, nxt = (
                (EdgeKind.WhileExecution, EdgeKind.WhileNext)
                if kind == "while"
                else (EdgeKind.ForExecution, EdgeKind.ForNext)
            )
            cond = tree.child_with_role(node.id, "condition")
            body = tree.child_with_role(node.id, "body")
            if cond is not None:
                g.add(node.id, cond.id, execution)
                if body is not None:
                    g.add(cond.id, body.id, nxt)
        elif kind == "block":
            stmts = tree.children_with_role(node.id, "statements")
            for a, b in zip(stmts, stmts[1:]):
                g.add(a.id, b.id, EdgeKind.NextStatement)
    return g


def build_fa_asg(tree: AstTree) -> FaAsg:
    g = build_basic_edges(tree)
    add_data_flow_edges(g, tree)
    add_control_flow_edges(g, tree)
    return g.finalize()


def check_invariants(g: FaAsg) -> None:
    """Raise InvariantViolation if reciprocity, endpoint or uniqueness rules fail."""
    seen = set()
    for s, d, k in g.edges:
        if s not in g.nodes or d not in g.nodes:
            raise InvariantViolation(f"edge {s}->{d} ({k.value}) has a missing endpoint")
        if (s, d, k) in seen:
            raise InvariantViolation(f"duplicate edge {s}->{d} ({k.value})")
        seen.add((s, d, k))
    for s, d, k in g.edges:
        if k is EdgeKind.Child and (d, s, EdgeKind.Parent) not in seen:
            raise InvariantViolation(f"Child {s}->{d} lacks its Parent edge")
        if k is EdgeKind.Parent and (d, s, EdgeKind.Child) not in seen:
            raise InvariantViolation(f"Parent {s}->{d} lacks its Child edge")
