"""Two-stage GNN over FLAGs.

Stage one embeds node text (mean of BPE token embeddings) and runs three
GraphSAGE layers on the full FLAG.  CGPool then averages node states per
declaration group, giving one supernode per group.  Stage two runs three GAT
layers on the pooled graph, averages supernodes per graph and classifies.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

from . import nn_core as nn
from .errors import EmptyGraph, ShapeMismatch
from .flag import Flag, pool_structure
from .nn_core import Tensor
from .tokenizer import BpeVocab, encode

DEFAULT_CLASSES = ("safe", "reentrancy", "unchecked_low_level_calls", "time_manipulation")


@dataclass
class ModelConfig:
    vocab_size: int
    num_classes: int = len(DEFAULT_CLASSES)
    embed_dim: int = 512
    sage_dims: Tuple[int, ...] = (1024, 1024, 1024)
    gat_dims: Tuple[int, ...] = (1024, 1024, 1024)
    gat_heads: Tuple[int, ...] = (4, 1, 1)
    clf_dims: Tuple[int, ...] = (1024, 1024)
    dropout_gnn: float = 0.5
    dropout_clf: float = 0.3
    leaky_slope: float = 0.2

    def __post_init__(self):
        self.sage_dims = tuple(self.sage_dims)
        self.gat_dims = tuple(self.gat_dims)
        self.gat_heads = tuple(self.gat_heads)
        self.clf_dims = tuple(self.clf_dims)
        if len(self.gat_dims) != len(self.gat_heads):
            raise ValueError("gat_dims and gat_heads must have equal length")
        for d, h in zip(self.gat_dims, self.gat_heads):
            if d % h:
                raise ValueError(f"GAT width {d} not divisible by {h} heads")

    def to_json(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_json(cls, doc: dict) -> "ModelConfig":
        return cls(**doc)

    def digest(self) -> str:
        blob = json.dumps(self.to_json(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


def param_shapes(cfg: ModelConfig) -> Dict[str, Tuple[int, ...]]:
    """Name -> shape for every trainable tensor, in a fixed order."""
    shapes: Dict[str, Tuple[int, ...]] = {"embedding": (cfg.vocab_size, cfg.embed_dim)}
    d_in = cfg.embed_dim
    for k, d_out in enumerate(cfg.sage_dims, 1):
        shapes[f"sage{k}.weight"] = (2 * d_in, d_out)
        shapes[f"sage{k}.bias"] = (d_out,)
        d_in = d_out
    for k, (d_out, heads) in enumerate(zip(cfg.gat_dims, cfg.gat_heads), 1):
        hd = d_out // heads
        for h in range(heads):
            shapes[f"gat{k}.head{h}.weight"] = (d_in, hd)
            shapes[f"gat{k}.head{h}.att"] = (2 * hd, 1)
        d_in = d_out
    for k, d_out in enumerate(tuple(cfg.clf_dims) + (cfg.num_classes,), 1):
        shapes[f"clf{k}.weight"] = (d_in, d_out)
        shapes[f"clf{k}.bias"] = (d_out,)
        d_in = d_out
    return shapes


def init_params(cfg: ModelConfig, seed: int) -> Dict[str, Tensor]:
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(cfg).items():
        data = np.zeros(shape) if name.endswith(".bias") else nn.glorot(shape, rng)
        params[name] = Tensor(data, requires_grad=True, name=name)
    return params


# ------------------------------------------------------------------ batching


@dataclass
class Batch:
    """Several FLAGs merged into one disconnected graph plus pooling operators."""

    num_graphs: int
    num_nodes: int
    num_groups: int
    token_matrix: sp.csr_matrix  # nodes x vocab, rows average token embeddings
    neighbor_mean: sp.csr_matrix  # nodes x nodes, rows average in-neighbours
    node_group: np.ndarray  # node -> global group index
    pooled_src: np.ndarray  # pooled edges incl. self loops, message src -> dst
    pooled_dst: np.ndarray
    group_graph: np.ndarray  # group -> graph index
    labels: Optional[np.ndarray] = None


def flag_token_ids(flag: Flag, vocab: BpeVocab) -> List[List[int]]:
    return [encode(vocab, t) for t in flag.texts]


def make_batch(
    flags: Sequence[Flag],
    vocab_size: int,
    token_ids: Sequence[List[List[int]]],
    labels: Optional[Sequence[int]] = None,
) -> Batch:
    rows, cols, vals = [], [], []
    e_src, e_dst = [], []
    node_group = []
    p_src, p_dst = [], []
    group_graph = []
    node_off = 0
    group_off = 0
    for gi, (flag, toks) in enumerate(zip(flags, token_ids)):
        n = flag.num_nodes
        if flag.num_groups == 0 or n == 0:
            raise EmptyGraph(f"FLAG {flag.function_name!r} has no nodes")
        for v, ids in enumerate(toks):
            w = 1.0 / len(ids)
            for t in ids:
                rows.append(node_off + v)
                cols.append(t)
                vals.append(w)
        pairs = sorted({(u, v) for u, v, _ in flag.edges})
        e_src.extend(node_off + u for u, _ in pairs)
        e_dst.extend(node_off + v for _, v in pairs)
        node_group.extend(group_off + g for g in flag.pool_map)
        pooled = pool_structure(flag)
        for u, v in pooled.edges:
            p_src.append(group_off + u)
            p_dst.append(group_off + v)
        for g in range(flag.num_groups):
            p_src.append(group_off + g)
            p_dst.append(group_off + g)
        group_graph.extend([gi] * flag.num_groups)
        node_off += n
        group_off += flag.num_groups

    token_matrix = sp.csr_matrix((vals, (rows, cols)), shape=(node_off, vocab_size))
    e_dst_arr = np.asarray(e_dst, dtype=np.int64)
    if len(e_dst_arr):
        deg = np.bincount(e_dst_arr, minlength=node_off).astype(float)
        w = 1.0 / deg[e_dst_arr]
    else:
        w = np.zeros(0)
    neighbor_mean = sp.csr_matrix(
        (w, (e_dst_arr, np.asarray(e_src, dtype=np.int64))), shape=(node_off, node_off)
    )
    return Batch(
        num_graphs=len(flags),
        num_nodes=node_off,
        num_groups=group_off,
        token_matrix=token_matrix,
        neighbor_mean=neighbor_mean,
        node_group=np.asarray(node_group, dtype=np.int64),
        pooled_src=np.asarray(p_src, dtype=np.int64),
        pooled_dst=np.asarray(p_dst, dtype=np.int64),
        group_graph=np.asarray(group_graph, dtype=np.int64),
        labels=None if labels is None else np.asarray(labels, dtype=np.int64),
    )


# ------------------------------------------------------------------- layers


def embed_nodes(batch: Batch, embedding: Tensor) -> Tensor:
    """h0: each node's row is the mean of its tokens' embeddings."""
    return nn.spmm(batch.token_matrix, embedding)


def sage_forward(
    H: Tensor,
    neighbor_mean: sp.spmatrix,
    weight: Tensor,
    bias: Tensor,
    activation: bool,
) -> Tensor:
    """concat(mean of in-neighbours, self) -> linear -> optional ReLU."""
    if weight.shape[0] != 2 * H.shape[1]:
        raise ShapeMismatch(f"SAGE weight {weight.shape} for input width {H.shape[1]}")
    msg = nn.spmm(neighbor_mean, H)
    out = nn.add(nn.matmul(nn.concat([msg, H]), weight), bias)
    return nn.relu(out) if activation else out


def cg_pool(H: Tensor, batch: Batch) -> Tensor:
    """Supernode features: mean of node states per declaration group."""
    return nn.mean_over_rows(H, batch.node_group, batch.num_groups)


def gat_head(
    S: Tensor, src: np.ndarray, dst: np.ndarray, weight: Tensor, att: Tensor, slope: float
) -> Tensor:
    z = nn.matmul(S, weight)
    pair = nn.concat([nn.gather_rows(z, dst), nn.gather_rows(z, src)])
    logits = nn.leaky_relu(nn.matmul(pair, att), slope)
    alpha = nn.segment_softmax(logits, dst, S.shape[0])
    return nn.segment_sum(nn.mul(alpha, nn.gather_rows(z, src)), dst, S.shape[0])


def gat_forward(
    S: Tensor,
    src: np.ndarray,
    dst: np.ndarray,
    heads: Sequence[Tuple[Tensor, Tensor]],
    slope: float = 0.2,
) -> Tensor:
    """Multi-head attention layer (heads concatenated) followed by ReLU.

    ``src``/``dst`` must already contain a self loop for every supernode.
    """
    outs = [gat_head(S, src, dst, w, a, slope) for w, a in heads]
    out = outs[0] if len(outs) == 1 else nn.concat(outs)
    return nn.relu(out)


def readout(S: Tensor, batch: Batch) -> Tensor:
    return nn.mean_over_rows(S, batch.group_graph, batch.num_graphs)


def classifier_logits(
    h: Tensor,
    params: Dict[str, Tensor],
    n_layers: int,
    dropout: float,
    train: bool,
    rng: Optional[np.random.Generator],
) -> Tensor:
    for k in range(1, n_layers + 1):
        h = nn.add(nn.matmul(h, params[f"clf{k}.weight"]), params[f"clf{k}.bias"])
        if k < n_layers:
            h = nn.dropout(nn.relu(h), dropout, train, rng)
    return h


def forward_logits(
    batch: Batch,
    params: Dict[str, Tensor],
    cfg: ModelConfig,
    train: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> Tensor:
    """embed -> SAGE x3 -> CGPool -> GAT x3 -> mean readout -> classifier logits."""
    if train and rng is None:
        raise ValueError("training-mode forward needs an rng for dropout")
    H = embed_nodes(batch, params["embedding"])
    n_sage = len(cfg.sage_dims)
    for k in range(1, n_sage + 1):
        last = k == n_sage
        H = sage_forward(
            H, batch.neighbor_mean, params[f"sage{k}.weight"], params[f"sage{k}.bias"], not last
        )
        if not last:
            H = nn.dropout(H, cfg.dropout_gnn, train, rng)
    S = cg_pool(H, batch)
    n_gat = len(cfg.gat_dims)
    for k, heads in enumerate(cfg.gat_heads, 1):
        hp = [(params[f"gat{k}.head{h}.weight"], params[f"gat{k}.head{h}.att"]) for h in range(heads)]
        S = gat_forward(S, batch.pooled_src, batch.pooled_dst, hp, cfg.leaky_slope)
        if k < n_gat:
            S = nn.dropout(S, cfg.dropout_gnn, train, rng)
    h_graph = readout(S, batch)
    return classifier_logits(
        h_graph, params, len(cfg.clf_dims) + 1, cfg.dropout_clf, train, rng
    )


def classify(logits: Tensor) -> Tensor:
    return nn.row_softmax(logits)


def full_forward(batch, params, cfg, train=False, rng=None) -> Tensor:
    """Class probabilities, one row per graph in the batch."""
    return classify(forward_logits(batch, params, cfg, train, rng))


class Model:
    """Config + parameters + tokenizer bundled for inference."""

    def __init__(self, cfg: ModelConfig, params: Dict[str, Tensor], vocab: BpeVocab, classes: Sequence[str]):
        self.cfg = cfg
        self.params = params
        self.vocab = vocab
        self.classes = list(classes)
        if len(self.classes) != cfg.num_classes:
            raise ValueError(f"{len(self.classes)} class names for {cfg.num_classes} classes")

    def batch(self, flags: Sequence[Flag], labels=None) -> Batch:
        toks = [flag_token_ids(f, self.vocab) for f in flags]
        return make_batch(flags, self.cfg.vocab_size, toks, labels)

    def predict_proba(self, flags: Sequence[Flag], batch_size: int = 64) -> np.ndarray:
        out = []
        for i in range(0, len(flags), batch_size):
            b = self.batch(flags[i : i + batch_size])
            out.append(full_forward(b, self.params, self.cfg).data)
        if not out:
            return np.zeros((0, self.cfg.num_classes))
        return np.concatenate(out, axis=0)
