"""TransR knowledge-graph embeddings.

Entities and relations live in separate spaces; a per-relation projection
matrix maps entities into the relation space, where a valid triple should
satisfy h.M_r + r ~= t.M_r. Training minimizes a margin ranking loss
between each triple and a corrupted (head- or tail-replaced) copy.
Triple lookup for the dialogue model concatenates the raw head, relation
and tail embeddings; the projection is used only inside the score.
"""

import random
from dataclasses import dataclass, field

import numpy as np
import torch

from .arrayio import load_arrays, save_arrays
from .corpus import DEL
from .rng import stream

DEFAULT_DIM = 200


class KGEError(ValueError):
    """Unknown entity/relation id or invalid training setup."""


@dataclass
class TransRConfig:
    dim_entity: int = DEFAULT_DIM
    dim_relation: int = DEFAULT_DIM
    epochs: int = 200
    lr: float = 0.05
    margin: float = 1.0
    neg_per_pos: int = 1
    seed: int = 0


@dataclass
class TransRParams:
    entity_ids: dict
    relation_ids: dict
    entities: torch.Tensor   # (|E|, d_e)
    relations: torch.Tensor  # (|R|, d_r)
    proj: torch.Tensor       # (|R|, d_e, d_r)

    @property
    def dim_entity(self) -> int:
        return self.entities.shape[1]

    @property
    def dim_relation(self) -> int:
        return self.relations.shape[1]

    @property
    def triple_dim(self) -> int:
        return 2 * self.dim_entity + self.dim_relation

    def entity_id(self, surface: str) -> int:
        try:
            return self.entity_ids[surface]
        except KeyError:
            raise KGEError(f"unknown entity {surface!r}") from None

    def relation_id(self, name: str) -> int:
        try:
            return self.relation_ids[name]
        except KeyError:
            raise KGEError(f"unknown relation {name!r}") from None

    def save(self, path) -> None:
        save_arrays(
            path,
            {
                "entities": self.entities.detach().numpy().astype(np.float32),
                "relations": self.relations.detach().numpy().astype(np.float32),
                "proj": self.proj.detach().numpy().astype(np.float32),
            },
            meta={
                "entity_ids": self.entity_ids,
                "relation_ids": self.relation_ids,
                "dim_entity": self.dim_entity,
                "dim_relation": self.dim_relation,
            },
        )

    @classmethod
    def load(cls, path) -> "TransRParams":
        arrays, meta = load_arrays(path)
        return cls(
            entity_ids=dict(meta["entity_ids"]),
            relation_ids=dict(meta["relation_ids"]),
            entities=torch.from_numpy(arrays["entities"]),
            relations=torch.from_numpy(arrays["relations"]),
            proj=torch.from_numpy(arrays["proj"]),
        )


def init_params(triples, config: TransRConfig) -> TransRParams:
    """Fresh parameter tables covering every id in the KG plus the
    dedicated [DEL] slot row. Projections start near identity."""
    entities = sorted({s for t in triples for s in (t.head, t.tail)})
    if DEL not in entities:
        entities.append(DEL)
    relations = sorted({t.relation for t in triples})
    entity_ids = {s: i for i, s in enumerate(entities)}
    relation_ids = {r: i for i, r in enumerate(relations)}
    gen = torch.Generator().manual_seed(config.seed)
    d_e, d_r = config.dim_entity, config.dim_relation
    bound = 0.1 / np.sqrt(d_e)
    ent = (torch.rand((len(entities), d_e), generator=gen, dtype=torch.float64) * 2 - 1) * bound
    rel = (torch.rand((len(relations), d_r), generator=gen, dtype=torch.float64) * 2 - 1) * bound
    eye = torch.zeros((d_e, d_r), dtype=torch.float64)
    eye[: min(d_e, d_r), : min(d_e, d_r)] = torch.eye(min(d_e, d_r), dtype=torch.float64)
    proj = eye.expand(len(relations), d_e, d_r).clone()
    proj += torch.randn((len(relations), d_e, d_r), generator=gen, dtype=torch.float64) * 0.01
    return TransRParams(entity_ids, relation_ids, ent, rel, proj)


def transr_score(head: str, relation: str, tail: str, params: TransRParams) -> float:
    """Squared L2 norm of the projected translation h.M_r + r - t.M_r."""
    h = params.entities[params.entity_id(head)]
    t = params.entities[params.entity_id(tail)]
    r_id = params.relation_id(relation)
    r = params.relations[r_id]
    m = params.proj[r_id]
    diff = h @ m + r - t @ m
    return float((diff * diff).sum())


def _score_batch(ent, rel, proj, h_ids, r_ids, t_ids):
    m = proj[r_ids]                       # (B, d_e, d_r)
    h = ent[h_ids].unsqueeze(1)           # (B, 1, d_e)
    t = ent[t_ids].unsqueeze(1)
    diff = (h @ m).squeeze(1) + rel[r_ids] - (t @ m).squeeze(1)
    return (diff * diff).sum(dim=1)


def margin_loss(ent, rel, proj, pos_ids, neg_ids, margin: float):
    """Sum of max(0, margin + score(pos) - score(neg)) over triple pairs."""
    s_pos = _score_batch(ent, rel, proj, *pos_ids)
    s_neg = _score_batch(ent, rel, proj, *neg_ids)
    return torch.clamp(margin + s_pos - s_neg, min=0.0).sum()


def corrupt(triple_ids, n_entities: int, rng: random.Random):
    """Replace head or tail (uniform choice) with a uniform random entity."""
    h, r, t = triple_ids
    if rng.random() < 0.5:
        return (rng.randrange(n_entities), r, t)
    return (h, r, rng.randrange(n_entities))


def train_transr(triples, config: TransRConfig) -> tuple[TransRParams, list[float]]:
    """Full-batch gradient descent on the margin ranking loss.

    Corruptions are drawn once up front, keeping the per-epoch loss a
    deterministic, (for small lr) non-increasing curve.
    """
    triples = list(triples)
    if not triples:
        raise KGEError("cannot train on an empty triple set")
    params = init_params(triples, config)
    ids = [(params.entity_id(t.head), params.relation_id(t.relation), params.entity_id(t.tail))
           for t in triples]
    rng = stream(config.seed, "transr-corrupt")
    n_ent = len(params.entity_ids)
    pos, neg = [], []
    for triple_ids in ids:
        for _ in range(config.neg_per_pos):
            pos.append(triple_ids)
            neg.append(corrupt(triple_ids, n_ent, rng))

    def columns(rows):
        return tuple(torch.tensor(col, dtype=torch.long) for col in zip(*rows))

    pos_ids, neg_ids = columns(pos), columns(neg)
    ent = params.entities.clone().requires_grad_(True)
    rel = params.relations.clone().requires_grad_(True)
    proj = params.proj.clone().requires_grad_(True)
    opt = torch.optim.SGD([ent, rel, proj], lr=config.lr)
    losses = []
    for _ in range(config.epochs):
        opt.zero_grad()
        loss = margin_loss(ent, rel, proj, pos_ids, neg_ids, config.margin)
        loss.backward()
        opt.step()
        with torch.no_grad():
            for table in (ent, rel):
                norms = table.norm(dim=1, keepdim=True).clamp(min=1.0)
                table.div_(norms)
        losses.append(float(loss.detach()))
    params.entities = ent.detach()
    params.relations = rel.detach()
    params.proj = proj.detach()
    return params, losses


def embed_triple(triple, params: TransRParams) -> torch.Tensor:
    """Concatenated (head, relation, tail) embedding rows."""
    return torch.cat(
        [
            params.entities[params.entity_id(triple.head)],
            params.relations[params.relation_id(triple.relation)],
            params.entities[params.entity_id(triple.tail)],
        ]
    )


def embed_knowledge(knowledge, params: TransRParams) -> torch.Tensor:
    """Stack triple representations into a (|K|, 2*d_e + d_r) tensor."""
    if not knowledge:
        return torch.zeros((0, params.triple_dim), dtype=params.entities.dtype)
    return torch.stack([embed_triple(t, params) for t in knowledge])
