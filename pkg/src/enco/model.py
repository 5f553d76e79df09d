"""Knowledge-grounded dialogue network.

Context encoder (residual self-attention + FFN layers), knowledge fusion
(multi-head attention with each triple embedding as query over context
token states, heads concatenated), and a decoder whose layers add two
parallel cross-attentions (context and fused knowledge) to the residual
stream. Sub-layers are pre-normalized for training stability; the
written recurrences otherwise carry no normalization at all, which
diverges at any usable learning rate.
"""

import math
import random
from dataclasses import dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F

from .corpus import (
    BOS_ID,
    EOS_ID,
    MAX_CONTEXT_TOKENS,
    MAX_RESPONSE_TOKENS,
    PAD_ID,
    UNK_ID,
    Vocabulary,
    context_token_ids,
)
from .kge import TransRParams, embed_knowledge

NEG_INF = -1e9  # finite mask value so log-probabilities stay finite


class ModelError(ValueError):
    pass


@dataclass
class ModelConfig:
    vocab_size: int
    d_model: int = 64
    n_enc_layers: int = 2
    n_dec_layers: int = 2
    n_fusion_heads: int = 4
    n_heads: int = 4
    ffn_dim: int = 256
    kge_dim: int = 600
    max_context: int = MAX_CONTEXT_TOKENS
    max_response: int = MAX_RESPONSE_TOKENS
    alpha: float = 1.0

    def __post_init__(self):
        if self.n_enc_layers < 1 or self.n_dec_layers < 1:
            raise ModelError("need at least one encoder and one decoder layer")
        if self.alpha < 0:
            raise ModelError("contrastive weight must be >= 0")
        for heads in (self.n_fusion_heads, self.n_heads):
            if self.d_model % heads:
                raise ModelError(f"d_model={self.d_model} not divisible by {heads} heads")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def desk_config(vocab_size: int, **overrides) -> ModelConfig:
    return ModelConfig(vocab_size=vocab_size, **overrides)


def paper_config(vocab_size: int, **overrides) -> ModelConfig:
    """Full-scale profile matching the published hyperparameters."""
    base = dict(
        d_model=1024, n_enc_layers=12, n_dec_layers=12, n_fusion_heads=8,
        n_heads=16, ffn_dim=4096,
    )
    base.update(overrides)
    return ModelConfig(vocab_size=vocab_size, **base)


class MultiHeadAttention(nn.Module):
    """Scaled dot-product attention with per-head projections.

    ``scale`` defaults to 1/sqrt(d_head); the fusion module overrides it
    to 1/sqrt(d_model) and drops the output projection (heads are used
    concatenated as-is).
    """

    def __init__(self, d_model: int, n_heads: int, scale: float | None = None,
                 out_proj: bool = True):
        super().__init__()
        self.n_heads = n_heads
        self.d_head = d_model // n_heads
        self.scale = scale if scale is not None else 1.0 / math.sqrt(self.d_head)
        self.q_proj = nn.Linear(d_model, d_model)
        self.k_proj = nn.Linear(d_model, d_model)
        self.v_proj = nn.Linear(d_model, d_model)
        self.out_proj = nn.Linear(d_model, d_model) if out_proj else None

    def forward(self, query, keyval, key_mask=None, causal=False, need_weights=False):
        """query (B,Tq,d), keyval (B,Tk,d), key_mask (B,Tk) True=valid."""
        bsz, t_q, _ = query.shape
        t_k = keyval.shape[1]

        def split(x):
            return x.view(bsz, -1, self.n_heads, self.d_head).transpose(1, 2)

        q = split(self.q_proj(query))
        k = split(self.k_proj(keyval))
        v = split(self.v_proj(keyval))
        scores = (q @ k.transpose(-1, -2)) * self.scale  # (B,h,Tq,Tk)
        if key_mask is not None:
            scores = scores.masked_fill(~key_mask[:, None, None, :], float("-inf"))
        if causal:
            future = torch.triu(
                torch.ones(t_q, t_k, dtype=torch.bool, device=scores.device), diagonal=1
            )
            scores = scores.masked_fill(future, float("-inf"))
        weights = torch.softmax(scores, dim=-1)
        out = (weights @ v).transpose(1, 2).reshape(bsz, t_q, -1)
        if self.out_proj is not None:
            out = self.out_proj(out)
        if need_weights:
            return out, weights
        return out


class FeedForward(nn.Module):
    def __init__(self, d_model: int, ffn_dim: int):
        super().__init__()
        self.fc1 = nn.Linear(d_model, ffn_dim)
        self.fc2 = nn.Linear(ffn_dim, d_model)

    def forward(self, x):
        return self.fc2(F.relu(self.fc1(x)))


class EncoderLayer(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.attn = MultiHeadAttention(cfg.d_model, cfg.n_heads)
        self.ffn = FeedForward(cfg.d_model, cfg.ffn_dim)
        self.norm_attn = nn.LayerNorm(cfg.d_model)
        self.norm_ffn = nn.LayerNorm(cfg.d_model)

    def forward(self, x, mask, need_weights=False):
        normed = self.norm_attn(x)
        attn = self.attn(normed, normed, key_mask=mask, need_weights=need_weights)
        if need_weights:
            attn, weights = attn
        x = x + attn
        x = x + self.ffn(self.norm_ffn(x))
        if need_weights:
            return x, weights
        return x


class DecoderLayer(nn.Module):
    """Masked self-attention, then the sum of context and knowledge
    cross-attentions added to the residual, then the FFN. The two
    cross-attentions keep separate parameter sets."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.self_attn = MultiHeadAttention(cfg.d_model, cfg.n_heads)
        self.cross_ctx = MultiHeadAttention(cfg.d_model, cfg.n_heads)
        self.cross_know = MultiHeadAttention(cfg.d_model, cfg.n_heads)
        self.ffn = FeedForward(cfg.d_model, cfg.ffn_dim)
        self.norm_self = nn.LayerNorm(cfg.d_model)
        self.norm_cross = nn.LayerNorm(cfg.d_model)
        self.norm_ffn = nn.LayerNorm(cfg.d_model)

    def forward(self, x, enc_out, ctx_mask, know_out, know_mask):
        normed = self.norm_self(x)
        x = x + self.self_attn(normed, normed, causal=True)
        normed = self.norm_cross(x)
        cross = self.cross_ctx(normed, enc_out, key_mask=ctx_mask)
        if know_out is not None and know_out.shape[1] > 0:
            cross = cross + self.cross_know(normed, know_out, key_mask=know_mask)
        x = x + cross
        x = x + self.ffn(self.norm_ffn(x))
        return x


class KGDModel(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.token_emb = nn.Embedding(cfg.vocab_size, cfg.d_model)
        max_pos = max(cfg.max_context, cfg.max_response + 1)
        self.pos_emb = nn.Embedding(max_pos, cfg.d_model)
        self.enc_layers = nn.ModuleList(EncoderLayer(cfg) for _ in range(cfg.n_enc_layers))
        self.know_adapter = nn.Linear(cfg.kge_dim, cfg.d_model)
        self.fusion = MultiHeadAttention(
            cfg.d_model, cfg.n_fusion_heads,
            scale=1.0 / math.sqrt(cfg.d_model), out_proj=False,
        )
        self.dec_layers = nn.ModuleList(DecoderLayer(cfg) for _ in range(cfg.n_dec_layers))
        self.norm_out = nn.LayerNorm(cfg.d_model)
        self.output = nn.Linear(cfg.d_model, cfg.vocab_size)

    def _embed(self, ids):
        positions = torch.arange(ids.shape[1], device=ids.device)
        return self.token_emb(ids) + self.pos_emb(positions)[None, :, :]

    def encode(self, ctx_ids, ctx_mask):
        """Token ids (B,T) + validity mask -> per-token states (B,T,d)."""
        if ctx_ids.shape[1] > self.cfg.max_context:
            raise ModelError(
                f"context length {ctx_ids.shape[1]} exceeds budget {self.cfg.max_context}"
            )
        x = self._embed(ctx_ids)
        for layer in self.enc_layers:
            x = layer(x, ctx_mask)
        return x

    def fuse(self, triple_reps, know_mask, enc_out, ctx_mask):
        """Triple embeddings (B,M,kge_dim) -> context-enriched triples (B,M,d).

        The attention output is added to the adapted triple embedding
        (residual), so the fused vector carries the triple's own content
        alongside the attended context; a pure attention output over
        context values would lose the triple identity entirely.
        """
        if triple_reps.shape[1] == 0:
            bsz = enc_out.shape[0]
            return torch.zeros(
                (bsz, 0, self.cfg.d_model), dtype=enc_out.dtype, device=enc_out.device
            )
        queries = self.know_adapter(triple_reps.to(enc_out.dtype))
        return queries + self.fusion(queries, enc_out, key_mask=ctx_mask)

    def decode(self, resp_in, enc_out, ctx_mask, know_out, know_mask):
        """Teacher-forced logits (B,T,V) for [BOS]-prefixed response input."""
        if resp_in.shape[1] == 0:
            raise ModelError("decoder prefix must be non-empty")
        x = self._embed(resp_in)
        for layer in self.dec_layers:
            x = layer(x, enc_out, ctx_mask, know_out, know_mask)
        logits = self.output(self.norm_out(x))
        logits[..., PAD_ID] = NEG_INF
        logits[..., UNK_ID] = NEG_INF
        return logits

    @staticmethod
    def pool(enc_out, ctx_mask):
        """Mean of non-padding token states; the sequence-level context
        representation used by the contrastive objective."""
        counts = ctx_mask.sum(dim=1, keepdim=True)
        if (counts == 0).any():
            raise ModelError("cannot pool an all-padding context")
        masked = enc_out * ctx_mask[:, :, None].to(enc_out.dtype)
        return masked.sum(dim=1) / counts.to(enc_out.dtype)

    def forward(self, ctx_ids, ctx_mask, triple_reps, know_mask, resp_in):
        enc_out = self.encode(ctx_ids, ctx_mask)
        know_out = self.fuse(triple_reps, know_mask, enc_out, ctx_mask)
        return self.decode(resp_in, enc_out, ctx_mask, know_out, know_mask)


def pad_batch(sequences, pad_value=PAD_ID, dtype=torch.long):
    """List of id lists -> (ids (B,T), mask (B,T))."""
    width = max((len(s) for s in sequences), default=0)
    width = max(width, 1)
    ids = torch.full((len(sequences), width), pad_value, dtype=dtype)
    mask = torch.zeros((len(sequences), width), dtype=torch.bool)
    for i, seq in enumerate(sequences):
        ids[i, : len(seq)] = torch.tensor(seq, dtype=dtype)
        mask[i, : len(seq)] = True
    return ids, mask


def pad_triple_reps(reps, kge_dim: int, dtype=torch.float32):
    """List of (M_i, kge_dim) tensors -> (reps (B,M,kge_dim), mask (B,M))."""
    width = max((r.shape[0] for r in reps), default=0)
    out = torch.zeros((len(reps), width, kge_dim), dtype=dtype)
    mask = torch.zeros((len(reps), width), dtype=torch.bool)
    for i, r in enumerate(reps):
        if r.shape[0]:
            out[i, : r.shape[0]] = r.to(dtype)
            mask[i, : r.shape[0]] = True
    return out, mask


def decode_step(model: KGDModel, prefix_ids, enc_out, ctx_mask, know_out, know_mask):
    """Next-token distribution given a [BOS]-prefixed id list."""
    if not len(prefix_ids):
        raise ModelError("decoder prefix must be non-empty")
    if prefix_ids[0] != BOS_ID:
        raise ModelError("decoder prefix must start with [BOS]")
    ids = torch.tensor([list(prefix_ids)], dtype=torch.long)
    logits = model.decode(ids, enc_out, ctx_mask, know_out, know_mask)
    return torch.softmax(logits[0, -1], dim=-1)


@dataclass
class GenerationStrategy:
    kind: str = "greedy"  # "greedy" | "top-k"
    k: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("greedy", "top-k"):
            raise ModelError(f"unknown decoding strategy {self.kind!r}")
        if self.k < 1:
            raise ModelError("top-k width must be >= 1")


@torch.no_grad()
def generate(model: KGDModel, sample, vocab: Vocabulary, kge_params: TransRParams,
             strategy: GenerationStrategy | None = None,
             max_len: int | None = None) -> list[str]:
    """Autoregressive decoding until [EOS] or ``max_len`` tokens."""
    strategy = strategy or GenerationStrategy()
    max_len = max_len if max_len is not None else model.cfg.max_response
    if max_len < 1:
        raise ModelError("max_len must be >= 1")
    ctx = context_token_ids(sample, vocab, model.cfg.max_context)
    ctx_ids, ctx_mask = pad_batch([ctx])
    reps, know_mask = pad_triple_reps(
        [embed_knowledge(sample.knowledge, kge_params)], model.cfg.kge_dim
    )
    enc_out = model.encode(ctx_ids, ctx_mask)
    know_out = model.fuse(reps, know_mask, enc_out, ctx_mask)
    rng = random.Random(strategy.seed)
    prefix = [BOS_ID]
    out_ids: list[int] = []
    for _ in range(max_len):
        probs = decode_step(model, prefix, enc_out, ctx_mask, know_out, know_mask)
        if strategy.kind == "greedy":
            next_id = int(torch.argmax(probs))
        else:
            top = torch.topk(probs, min(strategy.k, probs.shape[0]))
            weights = (top.values / top.values.sum()).tolist()
            next_id = int(top.indices[_weighted_choice(weights, rng)])
        if next_id == EOS_ID:
            break
        out_ids.append(next_id)
        prefix.append(next_id)
    return vocab.decode(out_ids)


def _weighted_choice(weights, rng: random.Random) -> int:
    roll = rng.random()
    acc = 0.0
    for i, w in enumerate(weights):
        acc += w
        if roll < acc:
            return i
    return len(weights) - 1


def save_checkpoint(model: KGDModel, path, vocab_hash: str = "", step: int = 0) -> None:
    """Parameter container with a JSON header (config, vocab hash, step)."""
    from .arrayio import save_arrays

    arrays = {name: p.detach().cpu().numpy() for name, p in model.state_dict().items()}
    save_arrays(path, arrays, meta={
        "config": model.cfg.to_dict(), "vocab_hash": vocab_hash, "step": step,
    })


def load_checkpoint(path) -> tuple[KGDModel, dict]:
    from .arrayio import load_arrays

    arrays, meta = load_arrays(path)
    model = KGDModel(ModelConfig.from_dict(meta["config"]))
    state = {name: torch.from_numpy(arr) for name, arr in arrays.items()}
    model.load_state_dict(state)
    return model, meta
