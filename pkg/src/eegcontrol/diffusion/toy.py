"""Desk-scale latent diffusion backbone: a small VAE, a word-level caption
embedder and a two-resolution text-conditioned UNet whose encoder and
decoder halves are separate modules (so the encoder can be cloned)."""

from __future__ import annotations

import math
import re
from typing import List, NamedTuple, Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

from .residuals import ControlResiduals, EncoderOutput, inject_residuals

NULL_TOKEN = "<null>"
PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"


class TextContext(NamedTuple):
    tokens: torch.Tensor  # (B, S, ctx_dim)
    mask: torch.Tensor  # (B, S) True where a real token is present

    def select(self, index) -> "TextContext":
        return TextContext(self.tokens[index], self.mask[index])


def _words(caption: str) -> List[str]:
    return [w for w in re.split(r"\s+", caption.strip().lower()) if w]


class CaptionEmbedder(nn.Module):
    """Word-level token table with learned positions; every caption starts with a null token."""

    def __init__(self, vocab: Sequence[str], dim: int = 64, max_len: int = 8):
        super().__init__()
        base = [NULL_TOKEN, PAD_TOKEN, UNK_TOKEN]
        self.vocab = base + [w for w in dict.fromkeys(vocab) if w not in base]
        self.index = {w: i for i, w in enumerate(self.vocab)}
        self.dim = dim
        self.max_len = max_len
        self.table = nn.Embedding(len(self.vocab), dim)
        self.position = nn.Parameter(torch.randn(max_len, dim) * 0.02)

    @staticmethod
    def vocab_for(class_names: Sequence[str]) -> List[str]:
        words = ["image", "of"]
        for name in class_names:
            words.extend(_words(name))
        return list(dict.fromkeys(words))

    def tokenize(self, captions: Sequence[str]):
        seqs = []
        for cap in captions:
            ids = [self.index[NULL_TOKEN]] + [self.index.get(w, self.index[UNK_TOKEN]) for w in _words(cap)]
            seqs.append(ids[: self.max_len])
        width = max(len(s) for s in seqs)
        ids = torch.full((len(seqs), width), self.index[PAD_TOKEN], dtype=torch.long)
        mask = torch.zeros((len(seqs), width), dtype=torch.bool)
        for i, s in enumerate(seqs):
            ids[i, : len(s)] = torch.tensor(s)
            mask[i, : len(s)] = True
        return ids, mask

    def forward(self, captions: Sequence[str]) -> TextContext:
        ids, mask = self.tokenize(captions)
        tok = self.table(ids) + self.position[: ids.shape[1]]
        return TextContext(tok, mask)


def timestep_features(t: torch.Tensor, dim: int) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float32) / half)
    args = t.float()[:, None] * freqs[None, :]
    return torch.cat([torch.cos(args), torch.sin(args)], dim=1)


def _norm(ch: int) -> nn.GroupNorm:
    return nn.GroupNorm(min(8, ch), ch)


class ResBlock(nn.Module):
    def __init__(self, cin: int, cout: int, emb_dim: int):
        super().__init__()
        self.norm1 = _norm(cin)
        self.conv1 = nn.Conv2d(cin, cout, 3, padding=1)
        self.emb = nn.Linear(emb_dim, cout)
        self.norm2 = _norm(cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=1)
        self.skip = nn.Conv2d(cin, cout, 1) if cin != cout else nn.Identity()

    def forward(self, x, emb):
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.emb(F.silu(emb))[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return self.skip(x) + h


class CrossAttention(nn.Module):
    def __init__(self, channels: int, ctx_dim: int, heads: int = 4):
        super().__init__()
        self.norm = _norm(channels)
        self.attn = nn.MultiheadAttention(channels, heads, kdim=ctx_dim, vdim=ctx_dim, batch_first=True)

    def forward(self, x, ctx: TextContext):
        b, c, h, w = x.shape
        q = self.norm(x).flatten(2).transpose(1, 2)
        out, _ = self.attn(q, ctx.tokens, ctx.tokens, key_padding_mask=~ctx.mask, need_weights=False)
        return x + out.transpose(1, 2).reshape(b, c, h, w)


class UNetEncoder(nn.Module):
    """Time embedding, input conv, two resolution levels and the bottleneck."""

    def __init__(self, latent_channels: int = 4, width: int = 32, ctx_dim: int = 64):
        super().__init__()
        self.latent_channels = latent_channels
        self.width = width
        emb_dim = 4 * width
        self.time_embed = nn.Sequential(nn.Linear(width, emb_dim), nn.SiLU(), nn.Linear(emb_dim, emb_dim))
        self.conv_in = nn.Conv2d(latent_channels, width, 3, padding=1)
        self.res0 = ResBlock(width, width, emb_dim)
        self.attn0 = CrossAttention(width, ctx_dim)
        self.down = nn.Conv2d(width, width, 3, stride=2, padding=1)
        self.res1 = ResBlock(width, 2 * width, emb_dim)
        self.attn1 = CrossAttention(2 * width, ctx_dim)
        self.mid_res0 = ResBlock(2 * width, 2 * width, emb_dim)
        self.mid_attn = CrossAttention(2 * width, ctx_dim)
        self.mid_res1 = ResBlock(2 * width, 2 * width, emb_dim)

    @property
    def block_channels(self) -> List[int]:
        w = self.width
        return [w, w, w, 2 * w, 2 * w]

    def block_shapes(self, latent_hw) -> List[tuple]:
        h, w = latent_hw
        h2, w2 = (h + 1) // 2, (w + 1) // 2
        res = [(h, w), (h, w), (h2, w2), (h2, w2), (h2, w2)]
        return [(c, *r) for c, r in zip(self.block_channels, res)]

    def forward(self, z: torch.Tensor, t: torch.Tensor, ctx: TextContext) -> EncoderOutput:
        emb = self.time_embed(timestep_features(t, self.width).to(self.conv_in.weight.dtype))
        h0 = self.conv_in(z)
        h1 = self.attn0(self.res0(h0, emb), ctx)
        h2 = self.down(h1)
        h3 = self.attn1(self.res1(h2, emb), ctx)
        m = self.mid_res1(self.mid_attn(self.mid_res0(h3, emb), ctx), emb)
        return EncoderOutput([h0, h1, h2, h3], m, emb)


class UNetDecoder(nn.Module):
    def __init__(self, latent_channels: int = 4, width: int = 32, ctx_dim: int = 64):
        super().__init__()
        emb_dim = 4 * width
        w2 = 2 * width
        self.up_res0 = ResBlock(w2 + w2, w2, emb_dim)
        self.up_attn0 = CrossAttention(w2, ctx_dim)
        self.up_res1 = ResBlock(w2 + width, w2, emb_dim)
        self.upsample = nn.Conv2d(w2, w2, 3, padding=1)
        self.up_res2 = ResBlock(w2 + width, width, emb_dim)
        self.up_attn2 = CrossAttention(width, ctx_dim)
        self.up_res3 = ResBlock(width + width, width, emb_dim)
        self.norm_out = _norm(width)
        self.conv_out = nn.Conv2d(width, latent_channels, 3, padding=1)

    def forward(self, enc: EncoderOutput, ctx: TextContext) -> torch.Tensor:
        h0, h1, h2, h3 = enc.skips
        emb = enc.emb
        u = self.up_attn0(self.up_res0(torch.cat([enc.mid, h3], 1), emb), ctx)
        u = self.up_res1(torch.cat([u, h2], 1), emb)
        u = self.upsample(F.interpolate(u, size=h1.shape[-2:], mode="nearest"))
        u = self.up_attn2(self.up_res2(torch.cat([u, h1], 1), emb), ctx)
        u = self.up_res3(torch.cat([u, h0], 1), emb)
        return self.conv_out(F.silu(self.norm_out(u)))


class ToyUNet(nn.Module):
    def __init__(self, latent_channels: int = 4, width: int = 32, ctx_dim: int = 64):
        super().__init__()
        self.encoder = UNetEncoder(latent_channels, width, ctx_dim)
        self.decoder = UNetDecoder(latent_channels, width, ctx_dim)

    def forward(self, z, t, ctx: TextContext, residuals: ControlResiduals | None = None):
        enc = self.encoder(z, t, ctx)
        if residuals is not None:
            enc = inject_residuals(enc, residuals)
        return self.decoder(enc, ctx)


class ToyVAE(nn.Module):
    """Convolutional VAE with a fixed 8x spatial downsampling."""

    def __init__(self, latent_channels: int = 4, image_size: int = 64, width: int = 16):
        super().__init__()
        if image_size % 8:
            raise ValueError("image_size must be divisible by 8")
        self.latent_channels = latent_channels
        self.image_size = image_size
        w = width
        self.enc = nn.Sequential(
            nn.Conv2d(3, w, 4, stride=2, padding=1), nn.SiLU(),
            nn.Conv2d(w, 2 * w, 4, stride=2, padding=1), nn.SiLU(),
            nn.Conv2d(2 * w, 4 * w, 4, stride=2, padding=1), nn.SiLU(),
            nn.Conv2d(4 * w, 2 * latent_channels, 1),
        )
        self.dec = nn.Sequential(
            nn.Conv2d(latent_channels, 4 * w, 3, padding=1), nn.SiLU(),
            nn.ConvTranspose2d(4 * w, 2 * w, 4, stride=2, padding=1), nn.SiLU(),
            nn.ConvTranspose2d(2 * w, w, 4, stride=2, padding=1), nn.SiLU(),
            nn.ConvTranspose2d(w, w, 4, stride=2, padding=1), nn.SiLU(),
            nn.Conv2d(w, 3, 3, padding=1),
        )
        # rescales raw latents to roughly unit variance; set after training
        self.register_buffer("scaling_factor", torch.tensor(1.0))

    @property
    def latent_shape(self):
        s = self.image_size // 8
        return (self.latent_channels, s, s)

    def moments(self, x: torch.Tensor):
        mean, logvar = self.enc(x * 2.0 - 1.0).chunk(2, dim=1)
        return mean, logvar.clamp(-20.0, 10.0)

    def decode_raw(self, z: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.dec(z))
