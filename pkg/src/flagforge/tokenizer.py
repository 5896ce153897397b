"""Byte-level BPE over node attribute strings.

Strings are handled as UTF-8 bytes; internally each byte is one latin-1
character so that tokens are plain ``str`` objects whose ordering is byte
order.  Each node text is a single "word": no whitespace pre-splitting.
"""

from __future__ import annotations

import json
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Tuple

from .errors import EmptyCorpus, VocabTooSmall

PAD = "<pad>"
UNK = "<unk>"
PAD_ID = 0
UNK_ID = 1
VOCAB_VERSION = 1
DEFAULT_VOCAB_SIZE = 4096


def node_text(node) -> str:
    """Textual attribute of an AST node: type, name, operator, literal value."""
    parts = [node.node_type]
    attrs = node.attributes
    name = node.name or attrs.get("member_name")
    if name:
        parts.append(name)
    if attrs.get("operator"):
        parts.append(attrs["operator"])
    if node.node_type == "Literal" and attrs.get("value") is not None:
        parts.append(attrs["value"])
    return " ".join(parts)


def _to_symbols(text: str) -> str:
    return text.encode("utf-8").decode("latin-1")


@dataclass
class BpeVocab:
    merges: List[Tuple[str, str]]
    token_to_id: Dict[str, int]
    specials: Dict[str, int] = field(default_factory=lambda: {"PAD": PAD_ID, "UNK": UNK_ID})
    _cache: Dict[str, List[int]] = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self._ranks = {pair: i for i, pair in enumerate(self.merges)}

    @property
    def vocab_size(self) -> int:
        return len(self.token_to_id)

    def to_json(self) -> dict:
        return {
            "version": VOCAB_VERSION,
            "merges": [list(p) for p in self.merges],
            "vocab": self.token_to_id,
            "specials": self.specials,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, ensure_ascii=True)

    @classmethod
    def from_json(cls, doc: dict) -> "BpeVocab":
        if doc.get("version") != VOCAB_VERSION:
            raise ValueError(f"unsupported vocab version {doc.get('version')!r}")
        return cls(
            merges=[tuple(p) for p in doc["merges"]],
            token_to_id={k: int(v) for k, v in doc["vocab"].items()},
            specials={k: int(v) for k, v in doc["specials"].items()},
        )

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.dumps())

    @classmethod
    def load(cls, path) -> "BpeVocab":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))


def train_bpe(
    corpus: Iterable[str], vocab_size: int = DEFAULT_VOCAB_SIZE, min_frequency: int = 2
) -> BpeVocab:
    """Greedy most-frequent-pair merging.

    Stops when the vocabulary (specials included) reaches ``vocab_size`` or no
    adjacent pair occurs ``min_frequency`` times.  Ties go to the
    lexicographically smallest pair.
    """
    words = Counter(_to_symbols(s) for s in corpus)
    words.pop("", None)
    if not words:
        raise EmptyCorpus("BPE corpus contains no non-empty strings")
    alphabet = sorted({ch for w in words for ch in w})
    if vocab_size <= len(alphabet) + 2:
        raise VocabTooSmall(
            f"vocab_size {vocab_size} must exceed base alphabet {len(alphabet)} + 2 specials"
        )

    token_to_id = {PAD: PAD_ID, UNK: UNK_ID}
    for ch in alphabet:
        token_to_id[ch] = len(token_to_id)

    seqs: List[List[str]] = [list(w) for w in words]
    freqs: List[int] = list(words.values())
    pair_counts: Counter = Counter()
    where: Dict[Tuple[str, str], set] = defaultdict(set)
    for i, seq in enumerate(seqs):
        for pair in zip(seq, seq[1:]):
            pair_counts[pair] += freqs[i]
            where[pair].add(i)

    merges: List[Tuple[str, str]] = []
    while len(token_to_id) < vocab_size:
        best: Optional[Tuple[str, str]] = None
        best_count = 0
        for pair, count in pair_counts.items():
            if count > best_count or (count == best_count and count > 0 and pair < best):
                best, best_count = pair, count
        if best is None or best_count < min_frequency:
            break
        merged = best[0] + best[1]
        merges.append(best)
        if merged not in token_to_id:
            token_to_id[merged] = len(token_to_id)
        for i in sorted(where.pop(best, ())):
            seq, f = seqs[i], freqs[i]
            for pair in zip(seq, seq[1:]):
                pair_counts[pair] -= f
            new_seq = _merge_pair(seq, best, merged)
            seqs[i] = new_seq
            for pair in zip(new_seq, new_seq[1:]):
                pair_counts[pair] += f
                where[pair].add(i)
        for pair in [p for p, c in pair_counts.items() if c <= 0]:
            del pair_counts[pair]
            where.pop(pair, None)
    return BpeVocab(merges=merges, token_to_id=token_to_id)


def _merge_pair(seq: List[str], pair: Tuple[str, str], merged: str) -> List[str]:
    out: List[str] = []
    i = 0
    n = len(seq)
    while i < n:
        if i + 1 < n and seq[i] == pair[0] and seq[i + 1] == pair[1]:
            out.append(merged)
            i += 2
        else:
            out.append(seq[i])
            i += 1
    return out


def encode(vocab: BpeVocab, text: str) -> List[int]:
    """Apply learned merges in rank order; unknown symbols become UNK."""
    cached = vocab._cache.get(text)
    if cached is not None:
        return list(cached)
    seq = list(_to_symbols(text))
    if not seq:
        ids = [UNK_ID]
    else:
        ranks = vocab._ranks
        while len(seq) > 1:
            best_rank = None
            best_pair = None
            for pair in zip(seq, seq[1:]):
                r = ranks.get(pair)
                if r is not None and (best_rank is None or r < best_rank):
                    best_rank, best_pair = r, pair
            if best_pair is None:
                break
            seq = _merge_pair(seq, best_pair, best_pair[0] + best_pair[1])
        ids = [vocab.token_to_id.get(tok, UNK_ID) for tok in seq]
    vocab._cache[text] = ids
    return list(ids)
