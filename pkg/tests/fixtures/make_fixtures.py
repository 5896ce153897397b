"""Regenerate the checked-in AST fixture corpus.

    python tests/fixtures/make_fixtures.py

Each fixture is a small contract written out node by node in solc's
compact-JSON shape.  The files under ``ast/`` are the artifacts the tests
read; this script only documents how they were produced.  Golden edge files
come from ``tests/oracles/reference_walker.py``, which does not import the
package.
"""

from __future__ import annotations

import json
from pathlib import Path

from flagforge.synth import AstBuilder, dump_ast

HERE = Path(__file__).resolve().parent
AST_DIR = HERE / "ast"


def reentrancy_mini():
    b = AstBuilder("reentrancy_mini.sol")
    bal = b.var("balances", state=True, type_node=b.mapping("address", "uint256"))
    owner = b.var("owner", "address", state=True)

    # withdraw(): if (balances[msg.sender] > 0) { msg.sender.call{value: balances[msg.sender]}(""); balances[msg.sender] = 0; }
    call = b.call(
        b.call_options(
            b.member(b.msg_sender(), "call", type_string="function (bytes) payable returns (bool,bytes)"),
            ["value"],
            [b.index(b.ident("balances", bal["id"]), b.msg_sender())],
        ),
        [b.literal("", "string")],
    )
    withdraw = b.function(
        "withdraw",
        b.block(
            [
                b.if_(
                    b.binop(b.index(b.ident("balances", bal["id"]), b.msg_sender()), ">", b.literal("0")),
                    b.block(
                        [
                            b.expr_stmt(call),
                            b.expr_stmt(
                                b.assign(b.index(b.ident("balances", bal["id"]), b.msg_sender()), b.literal("0"))
                            ),
                        ]
                    ),
                )
            ]
        ),
    )
    deposit = b.function(
        "deposit",
        b.block(
            [
                b.expr_stmt(
                    b.assign(
                        b.index(b.ident("balances", bal["id"]), b.msg_sender()),
                        b.member(b.ident("msg", type_string="msg"), "value"),
                        "+=",
                    )
                )
            ]
        ),
        mutability="payable",
    )
    c = b.contract("Bank", [bal, owner, withdraw, deposit])
    labels = {"withdraw": "reentrancy", "deposit": "safe"}
    return b.source_unit([b.pragma(), c]), labels


def appendix_contract():
    """3 functions, 2 state variables: a() calls b() and reads x, b() writes y, c() is self-contained."""
    b = AstBuilder("appendix_contract.sol")
    x = b.var("x", state=True, value=b.literal("7"))
    y = b.var("y", state=True)
    b_id = b.reserve()
    fa = b.function(
        "a",
        b.block(
            [
                b.expr_stmt(b.call(b.ident("b", b_id, "function (uint256)"), [b.ident("x", x["id"])])),
            ]
        ),
        returns=[b.var("r")],
    )
    p = b.var("v")
    fb = b.function("b", b.block([b.expr_stmt(b.assign(b.ident("y", y["id"]), b.ident("v", p["id"])))]), [p], node_id=b_id)
    loc = b.var("t")
    fc = b.function(
        "c",
        b.block([b.var_stmt(loc, b.literal("1")), b.expr_stmt(b.assign(b.ident("t", loc["id"]), b.literal("2")))]),
        visibility="external",
    )
    c = b.contract("Appendix", [x, y, fa, fb, fc])
    labels = {"a": "safe", "b": "safe", "c": "safe"}
    return b.source_unit([b.pragma(), c]), labels


def nested_modifier():
    b = AstBuilder("nested_modifier.sol")
    owner = b.var("owner", "address", state=True)
    mod = b.modifier(
        "onlyOwner",
        b.block(
            [
                b.if_(
                    b.binop(b.msg_sender(), "==", b.ident("owner", owner["id"], "address")),
                    b.block([b.block([b.placeholder()])]),
                )
            ]
        ),
    )
    counter = b.var("counter", state=True)
    i = b.var("i")
    body = b.block(
        [
            b.var_stmt(i, b.literal("0")),
            b.block(
                [
                    b.if_(
                        b.binop(b.ident("i", i["id"]), "<", b.literal("3")),
                        b.block([b.expr_stmt(b.assign(b.ident("counter", counter["id"]), b.ident("i", i["id"]), "+="))]),
                    )
                ]
            ),
        ]
    )
    fn = b.function("bump", body, modifiers=[b.modifier_invocation("onlyOwner", mod["id"])])
    c = b.contract("Guarded", [owner, counter, mod, fn])
    return b.source_unit([b.pragma(), c]), {"bump": "safe"}


def no_call_function():
    """``coverage1`` touches nothing outside itself; ``coverage2``/``coverage3`` form a call chain."""
    b = AstBuilder("no_call_function.sol")
    total = b.var("total", state=True)
    a = b.var("a")
    f1 = b.function(
        "coverage1",
        b.block(
            [
                b.var_stmt(a, b.literal("1")),
                b.expr_stmt(b.assign(b.ident("a", a["id"]), b.binop(b.ident("a", a["id"]), "+", b.literal("2")))),
            ]
        ),
        mutability="pure",
    )
    f3_id = b.reserve()
    f2 = b.function("coverage2", b.block([b.expr_stmt(b.call(b.ident("coverage3", f3_id, "function ()")))]))
    f3 = b.function(
        "coverage3",
        b.block([b.expr_stmt(b.assign(b.ident("total", total["id"]), b.literal("1"), "+="))]),
        node_id=f3_id,
    )
    c = b.contract("Coverage", [total, f1, f2, f3])
    return b.source_unit([b.pragma(), c]), {"coverage1": "safe", "coverage2": "safe", "coverage3": "safe"}


def loops_while():
    b = AstBuilder("loops_while.sol")
    n = b.var("n", state=True)
    i = b.var("i")
    body = b.block(
        [
            b.var_stmt(i, b.literal("0")),
            b.while_(
                b.binop(b.ident("i", i["id"]), "<", b.ident("n", n["id"])),
                b.block([b.expr_stmt(b.unop("++", b.ident("i", i["id"]))), b.expr_stmt(b.unop("--", b.ident("n", n["id"])))]),
            ),
            b.do_while(
                b.binop(b.ident("i", i["id"]), ">", b.literal("0")),
                b.block([b.expr_stmt(b.assign(b.ident("i", i["id"]), b.literal("1"), "-="))]),
            ),
            # while without a block body
            b.while_(b.literal("false", "bool"), b.expr_stmt(b.unop("++", b.ident("i", i["id"])))),
        ]
    )
    c = b.contract("Loops", [n, b.function("spin", body)])
    return b.source_unit([b.pragma(), c]), {"spin": "safe"}


def loops_for():
    b = AstBuilder("loops_for.sol")
    acc = b.var("acc", state=True)
    i = b.var("i")
    j = b.var("j")
    body = b.block(
        [
            b.for_(
                b.var_stmt(i, b.literal("0")),
                b.binop(b.ident("i", i["id"]), "<", b.literal("10")),
                b.expr_stmt(b.unop("++", b.ident("i", i["id"]))),
                b.block([b.expr_stmt(b.assign(b.ident("acc", acc["id"]), b.ident("i", i["id"]), "+="))]),
            ),
            # for (;;) { break-free toy }: no condition, so no Execution/Next edges
            b.for_(None, None, None, b.block([b.expr_stmt(b.unop("++", b.ident("acc", acc["id"])))])),
            b.for_(
                b.var_stmt(j, b.literal("0")),
                b.binop(b.ident("j", j["id"]), "<", b.literal("2")),
                None,
                b.unchecked([b.expr_stmt(b.unop("++", b.ident("j", j["id"]))), b.expr_stmt(b.unop("--", b.ident("acc", acc["id"])))]),
            ),
        ]
    )
    c = b.contract("ForLoops", [acc, b.function("sum", body)])
    return b.source_unit([b.pragma(), c]), {"sum": "safe"}


def branches():
    b = AstBuilder("branches.sol")
    flag = b.var("flag", "bool", state=True)
    val = b.var("val", state=True)
    x = b.var("x")
    body = b.block(
        [
            b.if_(
                b.ident("flag", flag["id"], "bool"),
                b.block([b.expr_stmt(b.assign(b.ident("val", val["id"]), b.literal("1")))]),
                b.block([b.expr_stmt(b.assign(b.ident("val", val["id"]), b.literal("2")))]),
            ),
            b.if_(
                b.binop(b.ident("x", x["id"]), ">", b.literal("5")),
                b.expr_stmt(b.assign(b.ident("val", val["id"]), b.ident("x", x["id"]))),
                b.if_(
                    b.binop(b.ident("x", x["id"]), "==", b.literal("0")),
                    b.block([b.return_(None), b.expr_stmt(b.unop("++", b.ident("val", val["id"])))]),
                ),
            ),
            b.if_(b.ident("flag", flag["id"], "bool"), b.block([])),
        ]
    )
    c = b.contract("Branches", [flag, val, b.function("choose", body, [x])])
    return b.source_unit([b.pragma(), c]), {"choose": "safe"}


def overrides():
    b = AstBuilder("overrides.sol")
    hits = b.var("hits", state=True)
    base_f = b.function("ping", b.block([b.expr_stmt(b.unop("++", b.ident("hits", hits["id"])))]))
    base_g = b.function("pong", b.block([]))
    base = b.contract("Base", [hits, base_f, base_g], kind="contract")
    mid_f = b.function(
        "ping",
        b.block([b.expr_stmt(b.call(b.member(b.ident("super", -30, "type(contract super Mid)"), "ping", base_f["id"])))]),
        base_functions=[base_f["id"]],
    )
    mid = b.contract("Mid", [mid_f])
    top_f = b.function("ping", b.block([]), base_functions=[mid_f["id"], 999_999])
    top_g = b.function("pong", b.block([]), base_functions=[base_g["id"]])
    top = b.contract("Top", [top_f, top_g])
    labels = {"ping": "safe", "pong()": "safe"}
    return b.source_unit([b.pragma(), base, mid, top]), labels


def tuple_assign():
    b = AstBuilder("tuple_assign.sol")
    p = b.var("p", state=True)
    q = b.var("q", state=True)
    arr = b.var("arr", "uint256[]", state=True)
    s_id = b.reserve()
    struct = b._node(
        "StructDefinition",
        s_id,
        name="Pos",
        members=[b.var("lo"), b.var("hi")],
        visibility="public",
    )
    pos = b.var("pos", "struct Tuple.Pos", state=True)
    k = b.var("k")
    body = b.block(
        [
            b.expr_stmt(
                b.assign(
                    b.tuple_([b.ident("p", p["id"]), None, b.ident("q", q["id"])]),
                    b.tuple_([b.ident("q", q["id"]), b.literal("0"), b.ident("p", p["id"])]),
                )
            ),
            b.expr_stmt(b.assign(b.index(b.ident("arr", arr["id"], "uint256[]"), b.ident("k", k["id"])), b.literal("3"))),
            b.expr_stmt(b.assign(b.member(b.ident("pos", pos["id"], "struct Tuple.Pos"), "lo"), b.ident("k", k["id"]), "-=")),
            b.expr_stmt(b.assign(b.ident("k", k["id"]), b.literal("9"), "*=")),
        ]
    )
    c = b.contract("Tuple", [p, q, arr, struct, pos, b.function("swap", body, [k])])
    return b.source_unit([b.pragma(), c]), {"swap": "safe"}


def returns_and_events():
    b = AstBuilder("returns_and_events.sol")
    ev = b.event("Paid", [b.var("who", "address"), b.var("amt")])
    ledger = b.var("ledger", state=True)
    r1 = b.var("ok", "bool")
    r2 = b.var("left")
    ret_list = b.params([r1, r2])
    pay = b._node(
        "FunctionDefinition",
        None,
        body=b.block(
            [
                b.emit(b.call(b.ident("Paid", ev["id"], "function (address,uint256)"), [b.msg_sender(), b.ident("ledger", ledger["id"])])),
                b.expr_stmt(b.assign(b.ident("left", r2["id"]), b.ident("ledger", ledger["id"]))),
                b.return_(b.tuple_([b.literal("true", "bool"), b.ident("left", r2["id"])]), ret_list["id"]),
            ]
        ),
        implemented=True,
        kind="function",
        modifiers=[],
        name="pay",
        parameters=b.params([]),
        returnParameters=ret_list,
        stateMutability="nonpayable",
        virtual=False,
        visibility="public",
    )
    noret = b.function("noop", b.block([]))
    ctor = b.function("", b.block([b.expr_stmt(b.assign(b.ident("ledger", ledger["id"]), b.literal("100")))]), kind="constructor")
    c = b.contract("Events", [ev, ledger, ctor, pay, noret])
    return b.source_unit([b.pragma(), c]), {"pay": "unchecked_low_level_calls", "noop": "safe", "missing": "safe"}


def empty_contract():
    b = AstBuilder("empty_contract.sol")
    return b.source_unit([b.pragma(), b.contract("Nothing", [])]), {}


def free_function():
    """File-level constant and free function next to a contract that uses both."""
    b = AstBuilder("free_function.sol")
    cap = b._node(
        "VariableDeclaration",
        None,
        constant=True,
        mutability="constant",
        name="CAP",
        stateVariable=False,
        storageLocation="default",
        typeDescriptions=b._type("uint256"),
        typeName=b.elementary("uint256"),
        value=b.literal("1000"),
        visibility="internal",
    )
    arg = b.var("v")
    clamp = b.function(
        "clamp",
        b.block(
            [
                b.if_(
                    b.binop(b.ident("v", arg["id"]), ">", b.ident("CAP", cap["id"])),
                    b.return_(b.ident("CAP", cap["id"])),
                ),
                b.return_(b.ident("v", arg["id"])),
            ]
        ),
        [arg],
        returns=[b.var("")],
        visibility="internal",
        mutability="pure",
    )
    stored = b.var("stored", state=True)
    w = b.var("w")
    setter = b.function(
        "set",
        b.block([b.expr_stmt(b.assign(b.ident("stored", stored["id"]), b.call(b.ident("clamp", clamp["id"]), [b.ident("w", w["id"])])))]),
        [w],
    )
    c = b.contract("Store", [stored, setter])
    return b.source_unit([b.pragma(), cap, clamp, c]), {"set(uint256)": "safe", "clamp": "safe"}


# Written out by hand rather than through the builder: a pre-0.6 style file
# with a legacy ``superFunction`` field and literal sub-objects that carry a
# nodeType but no id.
RAW_LEGACY = {
    "absolutePath": "legacy_raw.sol",
    "exportedSymbols": {"Child": [30], "Parent": [10]},
    "id": 1,
    "nodeType": "SourceUnit",
    "nodes": [
        {
            "id": 10,
            "name": "Parent",
            "nodeType": "ContractDefinition",
            "contractKind": "contract",
            "nodes": [
                {"id": 11, "name": "stamp", "nodeType": "VariableDeclaration", "stateVariable": True,
                 "typeName": {"id": 12, "name": "uint", "nodeType": "ElementaryTypeName"}, "src": "30:10:0"},
                {"id": 13, "name": "touch", "nodeType": "FunctionDefinition", "kind": "function",
                 "visibility": "public", "superFunction": None,
                 "parameters": {"id": 14, "nodeType": "ParameterList", "parameters": []},
                 "returnParameters": {"id": 15, "nodeType": "ParameterList", "parameters": []},
                 "body": {"id": 16, "nodeType": "Block", "statements": [
                     {"id": 17, "nodeType": "ExpressionStatement", "expression": {
                         "id": 18, "nodeType": "Assignment", "operator": "=",
                         "leftHandSide": {"id": 19, "name": "stamp", "nodeType": "Identifier", "referencedDeclaration": 11},
                         "rightHandSide": {"id": 20, "name": "now", "nodeType": "Identifier", "referencedDeclaration": -17}}}]},
                 "src": "45:60:0"},
            ],
            "src": "0:120:0",
        },
        {
            "id": 30,
            "name": "Child",
            "nodeType": "ContractDefinition",
            "contractKind": "contract",
            "baseContracts": [
                {"id": 31, "nodeType": "InheritanceSpecifier",
                 "baseName": {"id": 32, "name": "Parent", "nodeType": "UserDefinedTypeName", "referencedDeclaration": 10}}
            ],
            "nodes": [
                {"id": 33, "name": "touch", "nodeType": "FunctionDefinition", "kind": "function",
                 "visibility": "public", "superFunction": 13,
                 "parameters": {"id": 34, "nodeType": "ParameterList", "parameters": []},
                 "returnParameters": {"id": 35, "nodeType": "ParameterList", "parameters": []},
                 "body": {"id": 36, "nodeType": "Block", "statements": [
                     {"id": 37, "nodeType": "IfStatement",
                      "condition": {"nodeType": "Literal", "value": "true", "kind": "bool"},
                      "trueBody": {"id": 38, "nodeType": "ExpressionStatement", "expression": {
                          "id": 39, "nodeType": "FunctionCall", "arguments": [],
                          "expression": {"id": 40, "name": "touch", "nodeType": "Identifier", "referencedDeclaration": 13}}},
                      "falseBody": {"nodeType": "Block", "statements": [
                          {"nodeType": "PlaceholderStatement"},
                          {"nodeType": "PlaceholderStatement"}]}},
                     {"id": 41, "nodeType": "ExpressionStatement", "expression": {
                         "id": 42, "nodeType": "Assignment", "operator": "+=",
                         "leftHandSide": {"id": 43, "name": "stamp", "nodeType": "Identifier", "referencedDeclaration": 11},
                         "rightHandSide": {"nodeType": "Literal", "value": "1", "kind": "number"}}}]},
                 "src": "150:80:0"},
            ],
            "src": "125:110:0",
        },
    ],
    "src": "0:240:0",
}


FIXTURES = {
    "reentrancy_mini": reentrancy_mini,
    "appendix_contract": appendix_contract,
    "nested_modifier": nested_modifier,
    "no_call_function": no_call_function,
    "loops_while": loops_while,
    "loops_for": loops_for,
    "branches": branches,
    "overrides": overrides,
    "tuple_assign": tuple_assign,
    "returns_and_events": returns_and_events,
    "empty_contract": empty_contract,
    "free_function": free_function,
}


def main() -> None:
    AST_DIR.mkdir(parents=True, exist_ok=True)
    labels = {}
    for name, make in FIXTURES.items():
        doc, lab = make()
        (AST_DIR / f"{name}.json").write_text(dump_ast(doc) + "\n", encoding="utf-8")
        if lab:
            labels[f"{name}.sol"] = lab
    (AST_DIR / "legacy_raw.json").write_text(json.dumps(RAW_LEGACY, indent=1) + "\n", encoding="utf-8")
    labels["legacy_raw.sol"] = {"touch": "time_manipulation"}
    (HERE / "labels.json").write_text(json.dumps(labels, indent=2, sort_keys=True) + "\n", encoding="utf-8")


if __name__ == "__main__":
    main()
