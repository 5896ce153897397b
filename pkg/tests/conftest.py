import json
import random
import sys
from pathlib import Path

import pytest

from flagforge.ast_ingest import load_ast_file, parse_ast_json
from flagforge.fa_asg import build_fa_asg
from flagforge.synth import dump_ast, random_contract

TESTS = Path(__file__).resolve().parent
FIXTURES = TESTS / "fixtures"
AST_DIR = FIXTURES / "ast"
GOLDEN_DIR = FIXTURES / "golden"
LABELS = FIXTURES / "labels.json"

sys.path.insert(0, str(TESTS / "oracles"))


def fixture_paths():
    return sorted(AST_DIR.glob("*.json"))


def load_fixture(name):
    return load_ast_file(AST_DIR / f"{name}.json")


def random_tree(seed, max_depth=3):
    doc = random_contract(random.Random(seed), f"rand_{seed}.sol", max_depth)
    return doc, parse_ast_json(dump_ast(doc))


@pytest.fixture
def fixture_corpus():
    return {p.stem: load_ast_file(p) for p in fixture_paths()}


@pytest.fixture
def fixture_graphs(fixture_corpus):
    return {k: (t, build_fa_asg(t)) for k, t in fixture_corpus.items()}


@pytest.fixture
def labels_manifest():
    return json.loads(LABELS.read_text())


PLANTED_CLASSES = ("safe", "reentrancy")

# shrunken network for fast training tests
SMALL = dict(
    embed_dim=16, sage_dims=(16, 16, 16), gat_dims=(16, 16, 16), gat_heads=(4, 1, 1),
    clf_dims=(16, 16), vocab_size=300, classes=PLANTED_CLASSES, lr=1e-2,
)


def small_config(**over):
    from flagforge.train_eval import TrainConfig

    return TrainConfig(**{**SMALL, **over})


@pytest.fixture(scope="session")
def planted_dir(tmp_path_factory):
    from flagforge.synth import planted_motif_corpus

    d = tmp_path_factory.mktemp("planted")
    planted_motif_corpus(d, n_contracts=12, seed=0)
    return d


@pytest.fixture(scope="session")
def planted_flags(planted_dir):
    from flagforge.dataset import build_dataset, load_label_manifest

    files = sorted(p for p in planted_dir.glob("*.json") if p.name != "labels.json")
    res = build_dataset(files, 2, load_label_manifest(planted_dir / "labels.json"), threads=1)
    assert not res.errors and not res.unresolved_labels
    return res.flags
