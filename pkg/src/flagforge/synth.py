"""Emit solc-style compact-JSON ASTs without a compiler.

:class:`AstBuilder` produces dictionaries with the same field names and
nesting as ``solc --ast-compact-json`` (0.8 series).  It backs the planted
motif corpus used for learnability checks and the random trees used by the
property tests.
"""

from __future__ import annotations

import json
import random
from pathlib import Path
from typing import Dict, List, Optional, Sequence

# solc's reserved ids for global symbols
BUILTIN_IDS = {
    "msg": -15,
    "block": -4,
    "require": -18,
    "now": -17,
    "this": -28,
    "assert": -3,
}


class AstBuilder:
    def __init__(self, path: str = "C.sol", start_id: int = 1):
        self.path = path
        self._next = start_id
        self._offset = 0

    def reserve(self) -> int:
        nid = self._next
        self._next += 1
        return nid

    def _node(self, node_type: str, node_id: Optional[int] = None, **fields) -> dict:
        nid = self.reserve() if node_id is None else node_id
        length = 1 + len(fields)
        src = f"{self._offset}:{length}:0"
        self._offset += length + 1
        return {"id": nid, "nodeType": node_type, "src": src, **fields}

    @staticmethod
    def _type(type_string: str) -> dict:
        return {"typeIdentifier": "t_" + type_string.replace(" ", "_"), "typeString": type_string}

    # -- declarations -------------------------------------------------------
    def source_unit(self, nodes: List[dict]) -> dict:
        return self._node("SourceUnit", absolutePath=self.path, exportedSymbols={}, nodes=nodes)

    def pragma(self) -> dict:
        return self._node("PragmaDirective", literals=["solidity", "^", "0.8", ".0"])

    def contract(self, name: str, nodes: List[dict], kind: str = "contract", node_id=None) -> dict:
        return self._node(
            "ContractDefinition",
            node_id,
            abstract=False,
            baseContracts=[],
            contractDependencies=[],
            contractKind=kind,
            fullyImplemented=True,
            linearizedBaseContracts=[],
            name=name,
            nodes=nodes,
        )

    def elementary(self, type_name: str) -> dict:
        return self._node(
            "ElementaryTypeName",
            name=type_name,
            typeDescriptions=self._type(type_name),
        )

    def mapping(self, key: str, value: str) -> dict:
        return self._node(
            "Mapping",
            keyType=self.elementary(key),
            valueType=self.elementary(value),
            typeDescriptions=self._type(f"mapping({key} => {value})"),
        )

    def var(
        self,
        name: str,
        type_name: str = "uint256",
        state: bool = False,
        value: Optional[dict] = None,
        node_id: Optional[int] = None,
        type_node: Optional[dict] = None,
        visibility: Optional[str] = None,
    ) -> dict:
        tnode = type_node if type_node is not None else self.elementary(type_name)
        type_string = tnode.get("typeDescriptions", {}).get("typeString", type_name)
        return self._node(
            "VariableDeclaration",
            node_id,
            constant=False,
            mutability="mutable",
            name=name,
            stateVariable=state,
            storageLocation="default",
            typeDescriptions=self._type(type_string),
            typeName=tnode,
            value=value,
            visibility=visibility or ("internal" if state else "internal"),
        )

    def params(self, decls: Sequence[dict]) -> dict:
        return self._node("ParameterList", parameters=list(decls))

    def function(
        self,
        name: str,
        body: Optional[dict],
        params: Sequence[dict] = (),
        returns: Sequence[dict] = (),
        node_id: Optional[int] = None,
        visibility: str = "public",
        mutability: str = "nonpayable",
        kind: str = "function",
        modifiers: Sequence[dict] = (),
        base_functions: Optional[Sequence[int]] = None,
    ) -> dict:
        fields = dict(
            body=body,
            implemented=body is not None,
            kind=kind,
            modifiers=list(modifiers),
            name=name,
            parameters=self.params(params),
            returnParameters=self.params(returns),
            stateMutability=mutability,
            virtual=False,
            visibility=visibility,
        )
        if base_functions:
            fields["baseFunctions"] = list(base_functions)
        return self._node("FunctionDefinition", node_id, **fields)

    def modifier(self, name: str, body: dict, node_id: Optional[int] = None) -> dict:
        return self._node(
            "ModifierDefinition", node_id, body=body, name=name, parameters=self.params([]),
            virtual=False, visibility="internal",
        )

    def modifier_invocation(self, name: str, ref: int) -> dict:
        path = self._node("IdentifierPath", name=name, referencedDeclaration=ref)
        return self._node("ModifierInvocation", arguments=None, modifierName=path)

    def event(self, name: str, params: Sequence[dict] = (), node_id: Optional[int] = None) -> dict:
        return self._node("EventDefinition", node_id, anonymous=False, name=name, parameters=self.params(params))

    # -- statements ---------------------------------------------------------
    def block(self, stmts: Sequence[dict]) -> dict:
        return self._node("Block", statements=list(stmts))

    def unchecked(self, stmts: Sequence[dict]) -> dict:
        return self._node("UncheckedBlock", statements=list(stmts))

    def expr_stmt(self, expr: dict) -> dict:
        return self._node("ExpressionStatement", expression=expr)

    def var_stmt(self, decl: dict, init: Optional[dict] = None) -> dict:
        return self._node(
            "VariableDeclarationStatement",
            assignments=[decl["id"]],
            declarations=[decl],
            initialValue=init,
        )

    def if_(self, cond: dict, true_body: dict, false_body: Optional[dict] = None) -> dict:
        return self._node("IfStatement", condition=cond, falseBody=false_body, trueBody=true_body)

    def while_(self, cond: dict, body: dict) -> dict:
        return self._node("WhileStatement", body=body, condition=cond)

    def do_while(self, cond: dict, body: dict) -> dict:
        return self._node("DoWhileStatement", body=body, condition=cond)

    def for_(self, init: Optional[dict], cond: Optional[dict], step: Optional[dict], body: dict) -> dict:
        return self._node(
            "ForStatement", body=body, condition=cond, initializationExpression=init, loopExpression=step
        )

    def return_(self, expr: Optional[dict], returns_list: Optional[int] = None) -> dict:
        return self._node("Return", expression=expr, functionReturnParameters=returns_list)

    def emit(self, call: dict) -> dict:
        return self._node("EmitStatement", eventCall=call)

    def placeholder(self) -> dict:
        return self._node("PlaceholderStatement")

    # -- expressions --------------------------------------------------------
    def ident(self, name: str, ref: Optional[int] = None, type_string: str = "uint256") -> dict:
        if ref is None:
            ref = BUILTIN_IDS[name]
        return self._node(
            "Identifier",
            name=name,
            overloadedDeclarations=[],
            referencedDeclaration=ref,
            typeDescriptions=self._type(type_string),
        )

    def member(self, expr: dict, member: str, ref: Optional[int] = None, type_string: str = "uint256") -> dict:
        fields = dict(expression=expr, memberName=member, typeDescriptions=self._type(type_string))
        if ref is not None:
            fields["referencedDeclaration"] = ref
        return self._node("MemberAccess", **fields)

    def index(self, base: dict, idx: dict) -> dict:
        return self._node(
            "IndexAccess", baseExpression=base, indexExpression=idx, typeDescriptions=self._type("uint256")
        )

    def call(self, expr: dict, args: Sequence[dict] = (), type_string: str = "tuple()") -> dict:
        return self._node(
            "FunctionCall",
            arguments=list(args),
            expression=expr,
            kind="functionCall",
            names=[],
            typeDescriptions=self._type(type_string),
        )

    def call_options(self, expr: dict, names: Sequence[str], options: Sequence[dict]) -> dict:
        return self._node("FunctionCallOptions", expression=expr, names=list(names), options=list(options))

    def literal(self, value: str, kind: str = "number") -> dict:
        return self._node(
            "Literal",
            hexValue=value.encode().hex(),
            kind=kind,
            value=value,
            typeDescriptions=self._type(f"int_const {value}" if kind == "number" else kind),
        )

    def binop(self, left: dict, op: str, right: dict) -> dict:
        return self._node(
            "BinaryOperation",
            commonType=self._type("uint256"),
            leftExpression=left,
            operator=op,
            rightExpression=right,
            typeDescriptions=self._type("bool" if op in ("<", ">", "<=", ">=", "==", "!=", "&&", "||") else "uint256"),
        )

    def unop(self, op: str, expr: dict, prefix: bool = False) -> dict:
        return self._node("UnaryOperation", operator=op, prefix=prefix, subExpression=expr)

    def assign(self, lhs: dict, rhs: dict, op: str = "=") -> dict:
        return self._node(
            "Assignment", leftHandSide=lhs, operator=op, rightHandSide=rhs, typeDescriptions=self._type("uint256")
        )

    def tuple_(self, components: Sequence[Optional[dict]]) -> dict:
        return self._node("TupleExpression", components=list(components), isInlineArray=False)

    # -- idioms ---------------------------------------------------------------
    def msg_sender(self) -> dict:
        return self.member(self.ident("msg", type_string="msg"), "sender", type_string="address")

    def require(self, cond: dict) -> dict:
        return self.expr_stmt(self.call(self.ident("require", type_string="function (bool) pure"), [cond]))


def dump_ast(doc: dict) -> str:
    """Serialise like solc: sorted keys, compact separators."""
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


# ---------------------------------------------------------- planted motif


def _planted_contract(idx: int, vulnerable: Sequence[bool], rng: random.Random):
    """One contract with a balances mapping and one function per flag in ``vulnerable``.

    Vulnerable functions send Ether with a low-level call inside an if and
    only afterwards zero the balance (call before state update).  Safe
    functions update state and never call out.
    """
    b = AstBuilder(f"planted_{idx:03d}.sol")
    bal_id = b.reserve()
    total_id = b.reserve()
    balances = b.var("balances", state=True, node_id=bal_id, type_node=b.mapping("address", "uint256"))
    total = b.var("total", state=True, node_id=total_id)
    members: List[dict] = [balances, total]
    labels: Dict[str, str] = {}
    for j, vuln in enumerate(vulnerable):
        amount = b.var("amount")
        filler = []
        for _ in range(rng.randint(0, 2)):
            filler.append(
                b.expr_stmt(b.assign(b.ident("total", total_id), b.literal(str(rng.randint(1, 9))), "+="))
            )
        if vuln:
            call = b.call(
                b.call_options(
                    b.member(b.msg_sender(), "call", type_string="function (bytes memory) payable returns (bool,bytes memory)"),
                    ["value"],
                    [b.ident("amount", amount["id"])],
                ),
                [b.literal("", kind="string")],
                type_string="tuple(bool,bytes memory)",
            )
            ok = b.var("ok", "bool")
            stmts = [
                b.if_(
                    b.binop(b.index(b.ident("balances", bal_id), b.msg_sender()), ">=", b.ident("amount", amount["id"])),
                    b.block(
                        [
                            b.var_stmt(ok, call),
                            b.expr_stmt(
                                b.assign(b.index(b.ident("balances", bal_id), b.msg_sender()), b.literal("0"))
                            ),
                        ]
                    ),
                ),
            ]
        else:
            stmts = [
                b.require(b.binop(b.ident("amount", amount["id"]), ">", b.literal("0"))),
                b.expr_stmt(
                    b.assign(b.index(b.ident("balances", bal_id), b.msg_sender()), b.ident("amount", amount["id"]), "+=")
                ),
            ]
        rng.shuffle(filler)
        body = b.block(filler + stmts)
        name = f"f{j}"
        members.append(b.function(name, body, params=[amount]))
        labels[name] = "reentrancy" if vuln else "safe"
    unit = b.source_unit([b.pragma(), b.contract(f"Planted{idx}", members)])
    return b.path, unit, labels


def planted_motif_corpus(out_dir, n_contracts: int = 40, seed: int = 0) -> Dict[str, Dict[str, str]]:
    """Write ``n_contracts`` AST files plus ``labels.json``; returns the label manifest.

    Every contract mixes one safe and one vulnerable function so the two
    classes stay balanced under contract-grouped splits.
    """
    rng = random.Random(seed)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest: Dict[str, Dict[str, str]] = {}
    for i in range(n_contracts):
        pattern = [True, False]
        rng.shuffle(pattern)
        path, unit, labels = _planted_contract(i, pattern, rng)
        (out / (Path(path).stem + ".json")).write_text(dump_ast(unit), encoding="utf-8")
        manifest[path] = labels
    (out / "labels.json").write_text(json.dumps(manifest, indent=1, sort_keys=True), encoding="utf-8")
    return manifest


# ---------------------------------------------------------- random trees


def random_contract(rng: random.Random, path: str = "Rand.sol", max_depth: int = 3) -> dict:
    """Random but well-formed contract AST for property tests."""
    b = AstBuilder(path)
    state_ids = [b.reserve() for _ in range(rng.randint(1, 3))]
    func_ids = [b.reserve() for _ in range(rng.randint(1, 4))]

    def expr(depth: int) -> dict:
        r = rng.random()
        if depth <= 0 or r < 0.3:
            return b.ident(f"s{rng.randrange(len(state_ids))}", rng.choice(state_ids))
        if r < 0.5:
            return b.literal(str(rng.randint(0, 99)))
        if r < 0.7:
            return b.binop(expr(depth - 1), rng.choice(["+", "-", "<", "=="]), expr(depth - 1))
        if r < 0.85:
            fid = rng.choice(func_ids)
            return b.call(b.ident(f"g{func_ids.index(fid)}", fid))
        return b.member(b.ident("msg"), "sender")

    def stmt(depth: int) -> dict:
        r = rng.random()
        if depth <= 0 or r < 0.35:
            sid = rng.randrange(len(state_ids))
            return b.expr_stmt(b.assign(b.ident(f"s{sid}", state_ids[sid]), expr(1), rng.choice(["=", "+="])))
        if r < 0.5:
            return b.if_(expr(1), block(depth - 1), block(depth - 1) if rng.random() < 0.5 else None)
        if r < 0.6:
            return b.while_(expr(1), block(depth - 1))
        if r < 0.7:
            return b.do_while(expr(1), block(depth - 1))
        if r < 0.8:
            return b.for_(None, expr(1) if rng.random() < 0.8 else None, None, block(depth - 1))
        if r < 0.9:
            return b.expr_stmt(expr(2))
        return block(depth - 1)

    def block(depth: int) -> dict:
        return b.block([stmt(depth) for _ in range(rng.randint(0, 4))])

    members = [b.var(f"s{i}", state=True, node_id=sid) for i, sid in enumerate(state_ids)]
    for i, fid in enumerate(func_ids):
        members.append(b.function(f"g{i}", block(max_depth), node_id=fid))
    return b.source_unit([b.pragma(), b.contract("Rand", members)])
