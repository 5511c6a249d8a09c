"""Tiny random-weight VLP implementing the hook contract.

Stands in for a pretrained model so the full hook/backward/serialize path
can run anywhere: token and image features are seeded deterministically,
eight stacked cross-attention layers expose their probability tensors, and
a sigmoid head scores the match. Useful for protocol and integration
testing only; it has no vision or language knowledge.
"""

from __future__ import annotations

import zlib

import torch
from torch import nn

EMBED_DIM = 16
N_HEADS = 2
N_LAYERS = 8
MASK_NEG = -1e9


def _stable_seed(*parts) -> int:
    acc = 0
    for part in parts:
        acc = zlib.crc32(str(part).encode("utf-8"), acc)
    return acc & 0x7FFFFFFF


class CrossAttentionProbs(nn.Module):
    """Computes and RETURNS the attention probabilities (hookable output)."""

    def __init__(self, dim, heads):
        super().__init__()
        self.heads = heads
        self.query = nn.Linear(dim, dim, bias=False)
        self.key = nn.Linear(dim, dim, bias=False)

    def forward(self, text, visual, key_mask=None):
        b, t, d = text.shape
        n = visual.shape[1]
        hd = d // self.heads
        q = self.query(text).reshape(b, t, self.heads, hd).transpose(1, 2)
        k = self.key(visual).reshape(b, n, self.heads, hd).transpose(1, 2)
        logits = q @ k.transpose(-1, -2) / hd**0.5
        if key_mask is not None:
            logits = logits.masked_fill(key_mask.reshape(1, 1, 1, n) == 0, MASK_NEG)
        return torch.softmax(logits, dim=-1)


class ToyVlp(nn.Module):
    """Eight cross-attention layers over hashed token/image features."""

    def __init__(self, seed: int = 0, latent=(6, 8), image_size=(48, 32)):
        super().__init__()
        self._latent = tuple(latent)
        self._image_size = tuple(image_size)
        self.seed = seed
        generator = torch.Generator().manual_seed(seed)
        self.layers = nn.ModuleList(
            CrossAttentionProbs(EMBED_DIM, N_HEADS) for _ in range(N_LAYERS)
        )
        self.values = nn.ModuleList(
            nn.Linear(EMBED_DIM, EMBED_DIM, bias=False) for _ in range(N_LAYERS)
        )
        self.head = nn.Linear(EMBED_DIM, 1)
        with torch.no_grad():
            for param in self.parameters():
                param.copy_(torch.randn(param.shape, generator=generator) * 0.25)
        self.eval()

    @property
    def cross_attention_probs(self):
        return list(self.layers)

    def latent_grid(self):
        return self._latent

    def image_size(self):
        return self._image_size

    def _token_features(self, tokens):
        rows = []
        for token in tokens:
            gen = torch.Generator().manual_seed(_stable_seed("tok", self.seed, token))
            rows.append(torch.randn(EMBED_DIM, generator=gen))
        return torch.stack(rows)[None, :, :]

    def _image_features(self, image_ref):
        h, w = self._latent
        gen = torch.Generator().manual_seed(_stable_seed("img", self.seed, image_ref))
        return torch.randn(h * w, EMBED_DIM, generator=gen)[None, :, :]

    def itm_forward(self, tokens, image_ref, feature_mask=None, image_mask=None):
        text = self._token_features(tokens)
        visual = self._image_features(image_ref)
        if image_mask is not None:
            visual = visual * image_mask.reshape(1, -1, 1)
        state = text
        for attn, value in zip(self.layers, self.values):
            probs = attn(state, visual, feature_mask)
            context = (probs @ value(visual).reshape(
                1, visual.shape[1], N_HEADS, EMBED_DIM // N_HEADS
            ).transpose(1, 2)).transpose(1, 2).reshape(1, state.shape[1], EMBED_DIM)
            state = state + context
        pooled = state.mean(dim=1)
        return torch.sigmoid(self.head(pooled)).reshape(())


def build(arg: str = ""):
    """Factory for the model spec ``toy[:SEED[:HxW]]``."""
    seed = 0
    latent = (6, 8)
    if arg:
        parts = arg.split(":")
        if parts[0]:
            seed = int(parts[0])
        if len(parts) > 1 and parts[1]:
            h, _, w = parts[1].partition("x")
            latent = (int(h), int(w))
    return ToyVlp(seed=seed, latent=latent)
