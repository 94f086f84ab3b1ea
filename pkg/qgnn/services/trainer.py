"""
Desk-scale RGCN Trainer

Full-batch training of an RGCN over an encoded graph, for node
classification (cross-entropy) or link prediction (DistMult with softplus
loss over sampled negative tails).

Input embeddings are one trainable matrix per node type, except the target
type: its rows are the deterministic per-IRI vectors the inference path
also uses, and they stay frozen. Literal nodes have zero inputs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple, Union
import logging
import math

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from qgnn.core.config import TaskConfig
from qgnn.core.errors import ConfigurationError, QgnnError
from qgnn.services.encoding import EncodingMaps, target_vector
from qgnn.services.rgcn_core import (
    DTYPE, ClassifierHead, DistMultHead, EncodedGraph, LayerWeights, RgcnModel, forward,
)

logger = logging.getLogger(__name__)


class DivergenceError(QgnnError):
    """Raised when the training loss stops being finite."""

    def __init__(self, epoch: int, loss: float):
        self.epoch = epoch
        super().__init__(f"Training diverged at epoch {epoch} (loss={loss})")


@dataclass(frozen=True)
class TrainingConfig:
    epochs: int = 200
    lr: float = 0.01
    num_layers: int = 2
    hidden_dim: int = 16
    embedding_dim: int = 16
    seed: int = 0
    num_negatives: int = 1

    @classmethod
    def from_task(cls, cfg: TaskConfig) -> "TrainingConfig":
        return cls(
            epochs=cfg.epochs, lr=cfg.lr, num_layers=cfg.num_layers,
            hidden_dim=cfg.hidden_dim, embedding_dim=cfg.embedding_dim, seed=cfg.seed,
        )


@dataclass(frozen=True)
class NodeClassificationTask:
    """Labelled training nodes (global ids) and their class ids."""

    nodes: Sequence[int]
    labels: Sequence[int]


@dataclass(frozen=True)
class LinkPredictionTask:
    """
    Positive (head, predicate index, tail) triples over global ids.

    Negative tails are drawn from `candidates` (every encoded node when empty).
    """

    positives: Sequence[Tuple[int, int, int]]
    candidates: Sequence[int] = ()


TrainingTask = Union[NodeClassificationTask, LinkPredictionTask]


def _xavier(shape: Tuple[int, ...], fan_in: int, fan_out: int, generator: torch.Generator) -> torch.Tensor:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return (torch.rand(shape, generator=generator, dtype=DTYPE) * 2.0 - 1.0) * bound


class RgcnNetwork(nn.Module):
    """Trainable parameters of an RgcnModel; forward delegates to rgcn_core."""

    def __init__(
            self,
            enc: EncodingMaps,
            num_nodes: int,
            hyper: TrainingConfig,
            head_kind: str,
            num_outputs: int
    ):
        super().__init__()
        self.enc = enc
        self.num_literals = num_nodes - enc.num_nodes
        self.head_kind = head_kind
        generator = torch.Generator().manual_seed(hyper.seed)

        dims = [hyper.embedding_dim] + [hyper.hidden_dim] * hyper.num_layers
        self.relation = nn.ParameterList([
            nn.Parameter(_xavier((enc.num_relations, d_in, d_out), d_in, d_out, generator))
            for d_in, d_out in zip(dims, dims[1:])
        ])
        self.self_loop = nn.ParameterList([
            nn.Parameter(_xavier((d_in, d_out), d_in, d_out, generator))
            for d_in, d_out in zip(dims, dims[1:])
        ])

        blocks = []
        for type_name, count in zip(enc.type_names, enc.type_counts):
            if type_name == enc.target_type:
                rows = [target_vector(iri, hyper.embedding_dim, hyper.seed) for iri in self._iris_of(type_name)]
                frozen = np.stack(rows) if rows else np.zeros((0, hyper.embedding_dim), np.float32)
                blocks.append(nn.Parameter(torch.as_tensor(frozen, dtype=DTYPE), requires_grad=False))
            else:
                blocks.append(nn.Parameter(_xavier((count, hyper.embedding_dim), 1, hyper.embedding_dim, generator)))
        self.embeddings = nn.ParameterList(blocks)

        if head_kind == "classifier":
            self.head_weight = nn.Parameter(_xavier((hyper.hidden_dim, num_outputs), hyper.hidden_dim, num_outputs, generator))
            self.head_bias = nn.Parameter(torch.zeros(num_outputs, dtype=DTYPE))
        else:
            self.head_weight = nn.Parameter(_xavier((num_outputs, hyper.hidden_dim), 1, hyper.hidden_dim, generator))

    def _iris_of(self, type_name: str) -> List[str]:
        start = self.enc.type_offsets[self.enc.type_index(type_name)]
        count = self.enc.type_counts[self.enc.type_index(type_name)]
        return list(self.enc.node_dec[start:start + count])

    def layer_weights(self) -> List[LayerWeights]:
        return [LayerWeights(r, w0) for r, w0 in zip(self.relation, self.self_loop)]

    def inputs(self) -> torch.Tensor:
        dim = self.self_loop[0].shape[0]
        parts = list(self.embeddings) + [torch.zeros(self.num_literals, dim, dtype=DTYPE)]
        return torch.cat(parts, dim=0)

    def forward(self, g: EncodedGraph) -> torch.Tensor:
        return forward(g, self.inputs(), self.layer_weights(), mode="sparse")

    def to_model(self, meta: dict) -> RgcnModel:
        """Freeze into an RgcnModel with float32 tensors, as the stores hold them."""
        layers = [
            LayerWeights(r.detach().to(torch.float32).clone(), w0.detach().to(torch.float32).clone())
            for r, w0 in zip(self.relation, self.self_loop)
        ]
        embeddings = {
            type_name: block.detach().numpy().astype(np.float32)
            for type_name, block in zip(self.enc.type_names, self.embeddings)
        }
        model = RgcnModel(layers=layers, embeddings=embeddings, head_kind=self.head_kind, meta=meta)
        if self.head_kind == "classifier":
            model.classifier = ClassifierHead(
                self.head_weight.detach().to(torch.float32).clone(),
                self.head_bias.detach().to(torch.float32).clone(),
            )
        else:
            model.distmult = DistMultHead(self.head_weight.detach().to(torch.float32).clone())
        return model


def _classification_loss(out: torch.Tensor, net: RgcnNetwork, task: NodeClassificationTask) -> torch.Tensor:
    nodes = torch.as_tensor(list(task.nodes), dtype=torch.long)
    labels = torch.as_tensor(list(task.labels), dtype=torch.long)
    scores = out[nodes] @ net.head_weight + net.head_bias
    return F.cross_entropy(scores, labels)


def _link_loss(
        out: torch.Tensor,
        net: RgcnNetwork,
        task: LinkPredictionTask,
        pool: torch.Tensor,
        num_negatives: int,
        generator: torch.Generator
) -> torch.Tensor:
    triples = torch.as_tensor(np.asarray(task.positives, dtype=np.int64).reshape(-1, 3))
    heads, rels, tails = triples[:, 0], triples[:, 1], triples[:, 2]
    positive = (out[heads] * net.head_weight[rels] * out[tails]).sum(dim=1)

    picks = torch.randint(0, pool.shape[0], (triples.shape[0] * num_negatives,), generator=generator)
    neg_tails = pool[picks]
    neg_heads = heads.repeat_interleave(num_negatives)
    neg_rels = rels.repeat_interleave(num_negatives)
    negative = (out[neg_heads] * net.head_weight[neg_rels] * out[neg_tails]).sum(dim=1)
    return F.softplus(-positive).mean() + F.softplus(negative).mean()


def model_meta(enc: EncodingMaps, hyper: TrainingConfig, head_kind: str, **extra) -> dict:
    meta = {
        "head_kind": head_kind,
        "relation_keys": list(enc.relation_keys),
        "type_names": list(enc.type_names),
        "labels": enc.label_dec,
        "target_type": enc.target_type,
        "seed": hyper.seed,
        "embedding_dim": hyper.embedding_dim,
        "hidden_dim": hyper.hidden_dim,
        "num_layers": hyper.num_layers,
        "epochs": hyper.epochs,
        "lr": hyper.lr,
    }
    meta.update(extra)
    return meta


def train(
        g: EncodedGraph,
        enc: EncodingMaps,
        task: TrainingTask,
        hyper: TrainingConfig,
        link_predicate: Optional[str] = None
) -> RgcnModel:
    """
    Train an RGCN on g and return it in decomposable form.

    Args:
        g: Encoded graph (encoded nodes first, literal nodes after)
        enc: Training-time encodings of g
        task: NC labels or LP positives
        hyper: Epochs, learning rate, depth, widths, seed
        link_predicate: Predicate IRI scored by the LP head (recorded in the model definition)

    Raises:
        ConfigurationError: If the task carries no training signal
        DivergenceError: If the loss becomes NaN or infinite
    """
    if isinstance(task, NodeClassificationTask):
        if not task.nodes or len(task.nodes) != len(task.labels):
            raise ConfigurationError("Node classification needs at least one labelled node")
        head_kind, num_outputs = "classifier", max(len(enc.label_enc), 1)
    else:
        if not task.positives:
            raise ConfigurationError("Link prediction needs at least one positive triple")
        head_kind, num_outputs = "distmult", enc.num_predicates

    net = RgcnNetwork(enc, g.num_nodes, hyper, head_kind, num_outputs)
    trainable = [p for p in net.parameters() if p.requires_grad]
    optimizer = torch.optim.Adam(trainable, lr=hyper.lr)
    generator = torch.Generator().manual_seed(hyper.seed + 1)
    pool = torch.as_tensor(list(getattr(task, "candidates", ()) or range(enc.num_nodes)), dtype=torch.long)

    log_every = max(1, hyper.epochs // 10)
    for epoch in range(1, hyper.epochs + 1):
        optimizer.zero_grad()
        out = net(g)
        if head_kind == "classifier":
            loss = _classification_loss(out, net, task)
        else:
            loss = _link_loss(out, net, task, pool, hyper.num_negatives, generator)
        value = float(loss.detach())
        if not math.isfinite(value):
            logger.error(f"Non-finite loss at epoch {epoch}")
            raise DivergenceError(epoch, value)
        loss.backward()
        optimizer.step()
        if epoch % log_every == 0 or epoch == hyper.epochs:
            logger.info(f"epoch {epoch}/{hyper.epochs} loss={value:.6f}")

    extra = {"link_predicate": link_predicate} if link_predicate else {}
    return net.to_model(model_meta(enc, hyper, head_kind, **extra))
