"""A small self-contained encoder-decoder for toy-scale runs.

Registered as base model "tiny". Larger pretrained seq2seq checkpoints can be
plugged in through the same checkpoint interface when the environment can
load them; the tiny model keeps tests and smoke runs hermetic.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import torch
from torch import nn


@dataclass(frozen=True)
class TinyConfig:
    vocab_size: int
    embed_dim: int = 64
    hidden_dim: int = 96
    max_decode_len: int = 96


class TinySeq2Seq(nn.Module):
    """GRU encoder-decoder with tied source/target embeddings."""

    def __init__(self, config: TinyConfig):
        super().__init__()
        self.config = config
        self.embedding = nn.Embedding(config.vocab_size, config.embed_dim, padding_idx=0)
        self.encoder = nn.GRU(config.embed_dim, config.hidden_dim, batch_first=True)
        self.decoder = nn.GRU(config.embed_dim, config.hidden_dim, batch_first=True)
        self.head = nn.Linear(config.hidden_dim, config.vocab_size)

    def encode(self, src: torch.Tensor) -> torch.Tensor:
        _, hidden = self.encoder(self.embedding(src))
        return hidden

    def forward(self, src: torch.Tensor, tgt_in: torch.Tensor) -> torch.Tensor:
        hidden = self.encode(src)
        out, _ = self.decoder(self.embedding(tgt_in), hidden)
        return self.head(out)

    @torch.no_grad()
    def greedy_decode(self, src: torch.Tensor, bos_id: int, eos_id: int) -> list[int]:
        self.eval()
        hidden = self.encode(src)
        token = torch.tensor([[bos_id]], dtype=torch.long)
        out_ids: list[int] = []
        for _ in range(self.config.max_decode_len):
            step, hidden = self.decoder(self.embedding(token), hidden)
            next_id = int(self.head(step[:, -1]).argmax(dim=-1))
            if next_id == eos_id:
                break
            out_ids.append(next_id)
            token = torch.tensor([[next_id]], dtype=torch.long)
        return out_ids

    def config_dict(self) -> dict:
        return asdict(self.config)
