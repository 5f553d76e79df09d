"""Joint generation + contrastive objective and the optimization loop.

Per anchor sample the training unit is a :class:`ContrastiveGroup`:
the anchor, its paraphrase/truncation positives and its entity-edit
negatives. The loss is

    L = L_van + sum_pos L_pos + alpha * L_ctr

where L_van / L_pos are autoregressive NLL over the (shared) gold
response and L_ctr is the pairwise log-ratio loss over pooled context
encoder states with similarity f(a, b) = exp(a.b). Negatives enter only
through L_ctr. L_ctr is evaluated in log-space (softplus of the dot
product gap), which is mathematically identical to the exp ratio but
cannot overflow.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import torch
import torch.nn.functional as F

from .corpus import (
    BOS_ID,
    EOS_ID,
    KGDSample,
    PAD_ID,
    Vocabulary,
    context_token_ids,
    response_token_ids,
)
from .entity import EntityInventory
from .kge import TransRParams, embed_knowledge
from .model import KGDModel, ModelConfig, pad_batch, pad_triple_reps, save_checkpoint
from .neggen import make_negatives
from .posgen import ParaphraserInterface, make_positives
from .rng import stream

log = logging.getLogger(__name__)


class TrainError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    lr: float = 5e-4
    warmup: int = 100
    epochs: int = 5
    batch_groups: int = 8
    alpha: float = 1.0
    seed: int = 0
    betas: tuple = (0.9, 0.999)
    n_pos: int = 5
    n_neg: int = 5
    top_k: int = 5
    weight_decay: float = 0.0
    include_positives_nll: bool = True  # False = "positives excluded from NLL" ablation

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("lr must be >= 0")
        if self.warmup < 0 or self.alpha < 0:
            raise ValueError("warmup and alpha must be >= 0")

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["betas"] = list(self.betas)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "betas" in d:
            d["betas"] = tuple(d["betas"])
        return cls(**d)


def paper_train_config(**overrides) -> TrainConfig:
    """Full-scale profile matching the published training setup."""
    base = dict(lr=5e-5, warmup=1000, epochs=20, batch_groups=8, alpha=1.0)
    base.update(overrides)
    return TrainConfig(**base)


@dataclass
class ContrastiveGroup:
    anchor: KGDSample
    positives: list
    negatives: list
    edit_logs: list = field(default_factory=list)

    def __post_init__(self):
        for pos in self.positives:
            if pos.response.tokens != self.anchor.response.tokens:
                raise ValueError(f"{pos.sample_id}: positive must share the anchor response")


def build_group(sample: KGDSample, inventory: EntityInventory,
                phraser: ParaphraserInterface, cfg: TrainConfig) -> ContrastiveGroup:
    positives = make_positives(sample, cfg.n_pos, inventory, phraser, cfg.seed, cfg.top_k) \
        if cfg.n_pos else []
    if cfg.n_neg:
        negatives, logs = make_negatives(sample, cfg.n_neg, inventory, cfg.seed)
    else:
        negatives, logs = [], []
    return ContrastiveGroup(sample, positives, negatives, logs)


def build_groups(samples, inventory, phraser, cfg: TrainConfig):
    return [build_group(s, inventory, phraser, cfg) for s in samples]


@dataclass
class EncodedSample:
    ctx: list
    resp_in: list
    resp_target: list
    triple_reps: torch.Tensor


def encode_sample(sample: KGDSample, vocab: Vocabulary, kge_params: TransRParams,
                  model_cfg: ModelConfig) -> EncodedSample:
    ctx = context_token_ids(sample, vocab, model_cfg.max_context)
    resp = response_token_ids(sample, vocab, model_cfg.max_response)
    return EncodedSample(
        ctx=ctx,
        resp_in=[BOS_ID] + resp,
        resp_target=resp + [EOS_ID],
        triple_reps=embed_knowledge(sample.knowledge, kge_params),
    )


def _batch_forward_nll(model: KGDModel, encoded: list[EncodedSample]):
    """Per-sample NLL sums and token counts for a batch of encoded samples."""
    ctx_ids, ctx_mask = pad_batch([e.ctx for e in encoded])
    resp_in, _ = pad_batch([e.resp_in for e in encoded])
    resp_tgt, tgt_mask = pad_batch([e.resp_target for e in encoded])
    dtype = next(model.parameters()).dtype
    reps, know_mask = pad_triple_reps([e.triple_reps for e in encoded],
                                      model.cfg.kge_dim, dtype=dtype)
    logits = model(ctx_ids, ctx_mask, reps, know_mask, resp_in)
    losses = F.cross_entropy(
        logits.reshape(-1, logits.shape[-1]), resp_tgt.reshape(-1), reduction="none"
    ).reshape(resp_tgt.shape)
    losses = losses * tgt_mask.to(losses.dtype)
    return losses.sum(dim=1), tgt_mask.sum(dim=1)


def _pool_contexts(model: KGDModel, contexts: list[list]):
    ctx_ids, ctx_mask = pad_batch(contexts)
    return model.pool(model.encode(ctx_ids, ctx_mask), ctx_mask)


def nll_loss(model: KGDModel, sample: KGDSample, vocab: Vocabulary,
             kge_params: TransRParams) -> torch.Tensor:
    """Summed negative log-likelihood of the gold response (incl. [EOS])."""
    if not sample.response.tokens:
        raise ValueError(f"{sample.sample_id}: response is empty")
    encoded = encode_sample(sample, vocab, kge_params, model.cfg)
    nll, _ = _batch_forward_nll(model, [encoded])
    return nll[0]


def contrastive_loss(anchor_pool: torch.Tensor, positive_pools: torch.Tensor,
                     negative_pools: torch.Tensor) -> torch.Tensor:
    """Pairwise positive x negative grid loss.

    -log[f(a,p) / (f(a,p) + f(a,n))] with f(a,b)=exp(a.b) equals
    softplus(a.n - a.p), which is what is computed here.
    """
    if positive_pools.shape[0] == 0 or negative_pools.shape[0] == 0:
        raise ValueError("need at least one positive and one negative")
    sim_pos = positive_pools @ anchor_pool  # (P,)
    sim_neg = negative_pools @ anchor_pool  # (N,)
    gaps = sim_neg[None, :] - sim_pos[:, None]
    return F.softplus(gaps).sum()


def group_losses(model: KGDModel, group: ContrastiveGroup, vocab: Vocabulary,
                 kge_params: TransRParams, alpha: float,
                 include_positives_nll: bool = True):
    """NLL and contrastive parts for one group.

    Returns (nll_sum, token_count, ctr) where nll_sum covers the anchor
    plus (optionally) the positives, and ctr is the grid loss (zero
    tensor when alpha == 0 or the group has no positives/negatives).
    """
    nll_samples = [group.anchor] + (list(group.positives) if include_positives_nll else [])
    encoded = [encode_sample(s, vocab, kge_params, model.cfg) for s in nll_samples]
    nll, counts = _batch_forward_nll(model, encoded)
    zero = torch.zeros((), dtype=nll.dtype)
    ctr = zero
    if alpha > 0 and group.positives and group.negatives:
        contexts = [
            context_token_ids(s, vocab, model.cfg.max_context)
            for s in [group.anchor, *group.positives, *group.negatives]
        ]
        pools = _pool_contexts(model, contexts)
        n_pos = len(group.positives)
        ctr = contrastive_loss(pools[0], pools[1:1 + n_pos], pools[1 + n_pos:])
    return nll.sum(), counts.sum(), ctr


def total_loss(model: KGDModel, group: ContrastiveGroup, vocab: Vocabulary,
               kge_params: TransRParams, alpha: float | None = None,
               include_positives_nll: bool = True) -> torch.Tensor:
    """L_van + sum_pos L_pos + alpha * L_ctr for one group (summed form)."""
    alpha = model.cfg.alpha if alpha is None else alpha
    nll_sum, _, ctr = group_losses(model, group, vocab, kge_params, alpha,
                                   include_positives_nll)
    return nll_sum + alpha * ctr


def effective_lr(base_lr: float, step: int, warmup: int) -> float:
    """Linear ramp from 0 over ``warmup`` steps, then constant."""
    if warmup <= 0 or step >= warmup:
        return base_lr
    return base_lr * step / warmup


def train_loop(groups: list[ContrastiveGroup], model: KGDModel, vocab: Vocabulary,
               kge_params: TransRParams, cfg: TrainConfig,
               out_dir=None, eval_fn=None) -> list[dict]:
    """Adam with linear warmup over batches of contrastive groups.

    Batch reduction: NLL terms are averaged per target token across the
    batch, the contrastive term per group. ``eval_fn(model) -> dict`` is
    merged into each epoch record when given. Returns the metrics log.
    """
    if not groups:
        raise TrainError("cannot train on an empty corpus")
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    torch.manual_seed(cfg.seed)
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.lr, betas=cfg.betas,
                                 weight_decay=cfg.weight_decay)
    metrics_log = []
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        order = list(range(len(groups)))
        stream(cfg.seed, "epoch-order", epoch).shuffle(order)
        epoch_nll = epoch_tokens = 0.0
        epoch_ctr = 0.0
        for start in range(0, len(order), cfg.batch_groups):
            batch = [groups[i] for i in order[start:start + cfg.batch_groups]]
            step += 1
            for pg in optimizer.param_groups:
                pg["lr"] = effective_lr(cfg.lr, step, cfg.warmup)
            optimizer.zero_grad()
            nll_total = torch.zeros(())
            tokens_total = torch.zeros(())
            ctr_total = torch.zeros(())
            for group in batch:
                nll, count, ctr = group_losses(
                    model, group, vocab, kge_params, cfg.alpha, cfg.include_positives_nll
                )
                nll_total = nll_total + nll
                tokens_total = tokens_total + count
                ctr_total = ctr_total + ctr
            loss = nll_total / tokens_total + cfg.alpha * ctr_total / len(batch)
            if not torch.isfinite(loss):
                ids = ", ".join(g.anchor.sample_id for g in batch)
                raise TrainError(f"non-finite loss at step {step} (groups: {ids})")
            loss.backward()
            optimizer.step()
            epoch_nll += float(nll_total.detach())
            epoch_tokens += float(tokens_total)
            epoch_ctr += float(ctr_total.detach())
        record = {
            "epoch": epoch,
            "step": step,
            "train_nll": epoch_nll / max(epoch_tokens, 1.0),
            "train_ctr": epoch_ctr / len(groups),
        }
        if eval_fn is not None:
            record.update(eval_fn(model))
        metrics_log.append(record)
        log.info("epoch %d: nll/token %.4f ctr/group %.4f",
                 epoch, record["train_nll"], record["train_ctr"])
        if out_dir is not None:
            save_checkpoint(model, out_dir / f"checkpoint-epoch{epoch:03d}.enco", step=step)
            with open(out_dir / "metrics.jsonl", "a", encoding="utf-8") as f:
                f.write(json.dumps(record) + "\n")
    return metrics_log


def grad_check(loss_fn, parameters, eps: float = 1e-4) -> dict:
    """Compare analytic gradients against central finite differences.

    ``loss_fn()`` must rebuild the loss from the current parameter
    values. Returns {parameter name: max relative error}; parameters
    with zero gradient on both sides report 0.
    """
    parameters = dict(parameters)
    for p in parameters.values():
        p.grad = None
    loss = loss_fn()
    loss.backward()
    report = {}
    for name, p in parameters.items():
        analytic = p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p)
        numeric = torch.zeros_like(p)
        flat = p.data.view(-1)
        num_flat = numeric.view(-1)
        for i in range(flat.numel()):
            orig = float(flat[i])
            flat[i] = orig + eps
            with torch.no_grad():
                up = float(loss_fn())
            flat[i] = orig - eps
            with torch.no_grad():
                down = float(loss_fn())
            flat[i] = orig
            num_flat[i] = (up - down) / (2 * eps)
        denom = torch.maximum(analytic.abs(), numeric.abs())
        err = (analytic - numeric).abs() / torch.clamp(denom, min=1e-6)
        err[(analytic.abs() < 1e-12) & (numeric.abs() < 1e-12)] = 0.0
        report[name] = float(err.max()) if err.numel() else 0.0
    return report
