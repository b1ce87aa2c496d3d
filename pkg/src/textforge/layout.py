"""Stage-1 layout model: summed prompt embedding, transformer encoder, and an
autoregressive box decoder with learned positional queries.

The n-th decoder query corresponds to the n-th keyword; queries attend
causally among themselves and each slot additionally receives the previously
decoded box through a linear embedding, so box n depends only on the encoder
output and boxes 0..n-1. Coordinates go through a sigmoid and are therefore
always in [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .checkpoint import load_checkpoint, save_checkpoint
from .errors import ConfigurationError, DataError, TooManyKeywordsError
from .geometry import BoundingBoxSet
from .prompts import NUM_WIDTH_BUCKETS, TokenizedPrompt
from .text_encoder import TextEncoder, TextEncoderConfig
from .tokenizer import PAD


@dataclass
class LayoutModelConfig:
    vocab_size: int
    num_layers: int = 2
    dim: int = 512
    seq_len: int = 77
    k_max: int = 8
    num_heads: int = 8
    ffn_dim: int | None = None  # defaults to 2 * dim
    text_encoder_layers: int = 1
    use_width_embedding: bool = True
    lr: float = 1e-3
    weight_decay: float = 0.0

    def __post_init__(self):
        if self.num_layers < 1:
            raise ConfigurationError("need at least one transformer layer")
        if self.dim % self.num_heads:
            raise ConfigurationError("dim must be divisible by num_heads")
        if self.ffn_dim is None:
            self.ffn_dim = 2 * self.dim


@dataclass
class EmbeddingSet:
    """The four additive terms of the prompt embedding, each (B, L, d)."""

    text_term: torch.Tensor
    pos_term: torch.Tensor
    key_term: torch.Tensor
    width_term: torch.Tensor

    def total(self) -> torch.Tensor:
        return self.text_term + self.pos_term + self.key_term + self.width_term


class LayoutModel(nn.Module):
    def __init__(self, config: LayoutModelConfig):
        super().__init__()
        self.config = config
        self.text_encoder = TextEncoder(
            TextEncoderConfig(
                vocab_size=config.vocab_size,
                dim=config.dim,
                num_layers=config.text_encoder_layers,
                num_heads=config.num_heads,
                context_length=config.seq_len,
            )
        )
        self.pos_embed = nn.Embedding(config.seq_len, config.dim)
        self.key_embed = nn.Embedding(2, config.dim)
        self.width_embed = nn.Embedding(NUM_WIDTH_BUCKETS, config.dim)

        enc_layer = nn.TransformerEncoderLayer(
            d_model=config.dim,
            nhead=config.num_heads,
            dim_feedforward=config.ffn_dim,
            dropout=0.0,
            batch_first=True,
            norm_first=True,
        )
        self.encoder = nn.TransformerEncoder(
            enc_layer, num_layers=config.num_layers, enable_nested_tensor=False
        )
        dec_layer = nn.TransformerDecoderLayer(
            d_model=config.dim,
            nhead=config.num_heads,
            dim_feedforward=config.ffn_dim,
            dropout=0.0,
            batch_first=True,
            norm_first=True,
        )
        self.decoder = nn.TransformerDecoder(dec_layer, num_layers=config.num_layers)
        self.query_pos = nn.Parameter(torch.randn(config.k_max, config.dim) * 0.02)
        self.start_embed = nn.Parameter(torch.zeros(config.dim))
        self.prev_box_embed = nn.Linear(4, config.dim)
        self.box_head = nn.Linear(config.dim, 4)

    # -- Embedding -----------------------------------------------------------

    def embedding_terms(self, tp_ids, tp_flags, tp_buckets) -> EmbeddingSet:
        positions = torch.arange(tp_ids.shape[-1], device=tp_ids.device)
        width_term = self.width_embed(tp_buckets)
        if not self.config.use_width_embedding:
            width_term = torch.zeros_like(width_term)
        return EmbeddingSet(
            text_term=self.text_encoder(tp_ids),
            pos_term=self.pos_embed(positions).expand(tp_ids.shape[0], -1, -1),
            key_term=self.key_embed(tp_flags),
            width_term=width_term,
        )

    def build_embedding(self, tp_ids, tp_flags, tp_buckets) -> torch.Tensor:
        """Elementwise sum of text, positional, keyword, and width terms."""
        return self.embedding_terms(tp_ids, tp_flags, tp_buckets).total()

    def encode(self, tp_ids, tp_flags, tp_buckets) -> torch.Tensor:
        emb = self.build_embedding(tp_ids, tp_flags, tp_buckets)
        return self.encoder(emb, src_key_padding_mask=tp_ids == PAD)

    # -- Decoding ------------------------------------------------------------

    def _decode(self, memory, memory_pad_mask, prev_boxes) -> torch.Tensor:
        """One causal pass over K query slots.

        prev_boxes: (B, K, 4) where slot n holds the box decoded at n-1
        (slot 0 is ignored and replaced by the start embedding).
        """
        bsz, k, _ = prev_boxes.shape
        queries = self.query_pos[:k].unsqueeze(0) + self.prev_box_embed(prev_boxes)
        start = (self.query_pos[0] + self.start_embed).expand(bsz, 1, -1)
        queries = torch.cat([start, queries[:, 1:]], dim=1)
        causal = nn.Transformer.generate_square_subsequent_mask(k, device=memory.device)
        out = self.decoder(
            queries,
            memory,
            tgt_mask=causal,
            memory_key_padding_mask=memory_pad_mask,
        )
        return torch.sigmoid(self.box_head(out))

    def forward(self, tp_ids, tp_flags, tp_buckets, gt_boxes) -> torch.Tensor:
        """Teacher-forced prediction of (B, K, 4) boxes against ground truth."""
        if gt_boxes.shape[1] > self.config.k_max:
            raise DataError(
                f"{gt_boxes.shape[1]} target boxes exceed k_max={self.config.k_max}"
            )
        memory = self.encode(tp_ids, tp_flags, tp_buckets)
        prev = torch.cat([torch.zeros_like(gt_boxes[:, :1]), gt_boxes[:, :-1]], dim=1)
        return self._decode(memory, tp_ids == PAD, prev)

    @torch.no_grad()
    def predict_boxes(self, tp: TokenizedPrompt, k: int) -> BoundingBoxSet:
        """Sequentially decode k boxes for one prompt."""
        if k > self.config.k_max:
            raise TooManyKeywordsError(f"k={k} exceeds k_max={self.config.k_max}")
        if k == 0:
            return BoundingBoxSet(np.zeros((0, 4)))
        self.eval()
        device = self.query_pos.device
        ids = torch.as_tensor(tp.token_ids, device=device).unsqueeze(0)
        flags = torch.as_tensor(tp.keyword_flags, device=device).unsqueeze(0)
        buckets = torch.as_tensor(tp.width_buckets, device=device).unsqueeze(0)
        memory = self.encode(ids, flags, buckets)
        prev = torch.zeros(1, k, 4, device=device)
        boxes = torch.zeros(1, k, 4, device=device)
        for n in range(k):
            out = self._decode(memory, ids == PAD, prev[:, : n + 1])
            boxes[:, n] = out[:, n]
            if n + 1 < k:
                prev[:, n + 1] = out[:, n]
        return BoundingBoxSet(boxes[0].cpu().numpy())


@dataclass
class LayoutBatch:
    """Tensors for one training step; ``box_mask`` marks real (non-padded) boxes."""

    token_ids: torch.Tensor  # (B, L)
    keyword_flags: torch.Tensor  # (B, L)
    width_buckets: torch.Tensor  # (B, L)
    boxes: torch.Tensor  # (B, K, 4)
    box_mask: torch.Tensor  # (B, K) bool

    def __post_init__(self):
        if self.boxes.shape[:2] != self.box_mask.shape:
            raise DataError("boxes and box_mask disagree on batch/slot counts")


def layout_l1_loss(pred: torch.Tensor, target: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Mean absolute coordinate error over real boxes."""
    diff = (pred - target).abs() * mask.unsqueeze(-1)
    denom = mask.sum() * 4
    if denom == 0:
        raise DataError("batch contains no boxes")
    return diff.sum() / denom


def train_layout_step(
    batch: LayoutBatch, model: LayoutModel, optimizer: torch.optim.Optimizer
) -> float:
    """One teacher-forced l1 step; returns the scalar loss."""
    model.train()
    pred = model(batch.token_ids, batch.keyword_flags, batch.width_buckets, batch.boxes)
    loss = layout_l1_loss(pred, batch.boxes, batch.box_mask)
    optimizer.zero_grad(set_to_none=True)
    loss.backward()
    optimizer.step()
    return float(loss.detach())


def make_optimizer(model: LayoutModel) -> torch.optim.Optimizer:
    return torch.optim.AdamW(
        model.parameters(), lr=model.config.lr, weight_decay=model.config.weight_decay
    )


LAYOUT_KIND = "layout-model"


def save_layout_model(path, model: LayoutModel, meta: dict | None = None) -> None:
    save_checkpoint(path, LAYOUT_KIND, model.config, model.state_dict(), meta)


def load_layout_model(path) -> LayoutModel:
    payload = load_checkpoint(path, expected_kind=LAYOUT_KIND)
    model = LayoutModel(LayoutModelConfig(**payload["config"]))
    model.load_state_dict(payload["state"])
    return model
