"""Small trainable transformer text encoder.

Exposes the same (L x d sequence) interface as a pretrained contrastive text
encoder would; an adapter wrapping a pretrained model can be dropped in
anywhere a TextEncoder is used, as long as it maps (B, L) token ids to
(B, L, d) features.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .errors import ConfigurationError
from .tokenizer import PAD


@dataclass
class TextEncoderConfig:
    vocab_size: int
    dim: int = 512
    num_layers: int = 1
    num_heads: int = 8
    ffn_dim: int | None = None  # defaults to 2 * dim
    context_length: int = 77
    dropout: float = 0.0

    def __post_init__(self):
        if self.dim % self.num_heads:
            raise ConfigurationError("dim must be divisible by num_heads")
        if self.ffn_dim is None:
            self.ffn_dim = 2 * self.dim


class TextEncoder(nn.Module):
    def __init__(self, config: TextEncoderConfig):
        super().__init__()
        self.config = config
        self.token_embed = nn.Embedding(config.vocab_size, config.dim)
        self.pos_embed = nn.Embedding(config.context_length, config.dim)
        layer = nn.TransformerEncoderLayer(
            d_model=config.dim,
            nhead=config.num_heads,
            dim_feedforward=config.ffn_dim,
            dropout=config.dropout,
            batch_first=True,
            norm_first=True,
        )
        self.layers = nn.TransformerEncoder(
            layer, num_layers=config.num_layers, enable_nested_tensor=False
        )

    def forward(self, token_ids: torch.Tensor) -> torch.Tensor:
        """(B, L) int64 -> (B, L, dim) features."""
        if token_ids.shape[-1] != self.config.context_length:
            raise ConfigurationError(
                f"expected sequence length {self.config.context_length}, got {token_ids.shape[-1]}"
            )
        positions = torch.arange(token_ids.shape[-1], device=token_ids.device)
        x = self.token_embed(token_ids) + self.pos_embed(positions)
        pad_mask = token_ids == PAD
        return self.layers(x, src_key_padding_mask=pad_mask)
