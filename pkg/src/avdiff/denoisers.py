"""
Miniature two-level UNets for the audio (2-D) and video (pseudo-3-D) streams.

Both nets share one topology:

    conv_in -> [res, text-xattn] -> down -> [res, text-xattn]   encoder
                                   bottleneck tokens f  --(bridge)-->  f_hat
    [res, text-xattn] -> up -> concat skip -> [res, text-xattn] -> conv_out

The video net replaces every 3x3 convolution by a temporal 1-D convolution
followed by the spatial 2-D one, and adds a temporal self-attention layer after
each text cross-attention.  Temporal convolutions start as identity kernels
and temporal attention starts with a zero output projection, so a fresh video
net processes each frame independently.  conv_out is zero-initialized: a fresh
net predicts eps = 0 everywhere.

Video tensors are handled frames-folded, (B*T, C, H, W), with `frames` = T
passed alongside for the temporal layers.
"""

from __future__ import annotations

import hashlib
import math
import re
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F


def timestep_embedding(t: torch.Tensor, dim: int, max_period: float = 10_000.0) -> torch.Tensor:
    """Sinusoidal embedding of (B,) timesteps -> (B, dim)."""
    half = dim // 2
    freqs = torch.exp(-math.log(max_period) * torch.arange(half, dtype=torch.float64) / half)
    args = t.double()[:, None] * freqs[None]
    emb = torch.cat([torch.cos(args), torch.sin(args)], dim=-1)
    if dim % 2:
        emb = F.pad(emb, (0, 1))
    return emb


# ------------------------------------------------------------------ text


@dataclass
class TextEmbedding:
    tokens: torch.Tensor  # (L, D) or (B, L, D)
    mask: torch.Tensor  # (L,) or (B, L), True = valid

    @property
    def dim(self) -> int:
        return self.tokens.shape[-1]


class HashTextEncoder:
    """
    Stand-in for a pretrained text encoder: each lowercase word maps to a fixed
    Gaussian vector seeded by a stable hash of (seed, word).  Deterministic
    across processes and platforms.
    """

    def __init__(self, dim: int = 128, max_tokens: int = 32, seed: int = 0):
        self.dim = dim
        self.max_tokens = max_tokens
        self.seed = seed
        self._cache: dict[str, np.ndarray] = {}

    @staticmethod
    def tokenize(caption: str) -> list[str]:
        return re.findall(r"[a-z0-9]+(?:[-'][a-z0-9]+)*", caption.lower())

    def token_vector(self, token: str) -> np.ndarray:
        vec = self._cache.get(token)
        if vec is None:
            digest = hashlib.blake2b(f"{self.seed}:{token}".encode(), digest_size=8).digest()
            rng = np.random.default_rng(int.from_bytes(digest, "little"))
            vec = rng.standard_normal(self.dim) / math.sqrt(self.dim)
            self._cache[token] = vec
        return vec

    def __call__(self, caption: str) -> TextEmbedding:
        if not isinstance(caption, str) or not caption.strip():
            raise ValueError("caption must be a non-empty string")
        toks = self.tokenize(caption)[: self.max_tokens]
        if not toks:
            raise ValueError(f"caption {caption!r} has no word tokens")
        out = np.zeros((self.max_tokens, self.dim))
        for i, tok in enumerate(toks):
            out[i] = self.token_vector(tok)
        mask = np.zeros(self.max_tokens, dtype=bool)
        mask[: len(toks)] = True
        return TextEmbedding(torch.as_tensor(out, dtype=torch.float32), torch.as_tensor(mask))

    def batch(self, captions) -> TextEmbedding:
        embs = [self(c) for c in captions]
        return TextEmbedding(torch.stack([e.tokens for e in embs]), torch.stack([e.mask for e in embs]))


def embed_text(caption: str, encoder: HashTextEncoder | None = None) -> TextEmbedding:
    return (encoder or HashTextEncoder())(caption)


def pooled_text(emb: TextEmbedding) -> torch.Tensor:
    m = emb.mask.to(emb.tokens.dtype).unsqueeze(-1)
    return (emb.tokens * m).sum(-2) / m.sum(-2).clamp_min(1.0)


# ------------------------------------------------------------- attention


class Attention(nn.Module):
    """Multi-head scaled dot-product attention; returns the pre-residual output."""

    def __init__(self, query_dim: int, context_dim: int | None = None, heads: int = 4, zero_out: bool = False):
        super().__init__()
        context_dim = context_dim or query_dim
        if query_dim % heads:
            raise ValueError(f"query_dim {query_dim} not divisible by heads {heads}")
        self.heads = heads
        self.to_q = nn.Linear(query_dim, query_dim, bias=False)
        self.to_k = nn.Linear(context_dim, query_dim, bias=False)
        self.to_v = nn.Linear(context_dim, query_dim, bias=False)
        self.to_out = nn.Linear(query_dim, query_dim)
        if zero_out:
            nn.init.zeros_(self.to_out.weight)
            nn.init.zeros_(self.to_out.bias)

    def forward(self, x: torch.Tensor, context: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
        if context.shape[-2] == 0:
            raise ValueError("attention needs at least one key/value token")
        b, n, d = x.shape
        h = self.heads
        q = self.to_q(x).view(b, n, h, d // h).transpose(1, 2)
        k = self.to_k(context).view(b, -1, h, d // h).transpose(1, 2)
        v = self.to_v(context).view(b, -1, h, d // h).transpose(1, 2)
        attn_mask = None if mask is None else mask[:, None, None, :]
        out = F.scaled_dot_product_attention(q, k, v, attn_mask=attn_mask)
        return self.to_out(out.transpose(1, 2).reshape(b, n, d))


def _groups(ch: int, groups: int) -> int:
    g = min(groups, ch)
    while ch % g:
        g -= 1
    return g


class TextCrossAttention(nn.Module):
    """Residual cross-attention from spatial positions to the caption tokens."""

    def __init__(self, ch: int, text_dim: int, heads: int = 4):
        super().__init__()
        self.norm = nn.LayerNorm(ch)
        self.attn = Attention(ch, text_dim, heads)

    def forward(self, x: torch.Tensor, ctx: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        n, c, hh, ww = x.shape
        tokens = x.flatten(2).transpose(1, 2)
        tokens = tokens + self.attn(self.norm(tokens), ctx, mask)
        return tokens.transpose(1, 2).reshape(n, c, hh, ww)


class TemporalAttention(nn.Module):
    """Self-attention across frames at each spatial position, zero-initialized output."""

    def __init__(self, ch: int, heads: int = 4, max_frames: int = 64):
        super().__init__()
        self.norm = nn.LayerNorm(ch)
        self.attn = Attention(ch, ch, heads, zero_out=True)
        pos = timestep_embedding(torch.arange(max_frames), ch).float()
        self.register_buffer("pos", pos, persistent=False)

    def forward(self, x: torch.Tensor, frames: int) -> torch.Tensor:
        n, c, hh, ww = x.shape
        b = n // frames
        seq = x.view(b, frames, c, hh * ww).permute(0, 3, 1, 2).reshape(b * hh * ww, frames, c)
        hseq = self.norm(seq) + self.pos[:frames].to(seq.dtype)
        seq = seq + self.attn(hseq, hseq)
        return seq.view(b, hh * ww, frames, c).permute(0, 2, 3, 1).reshape(n, c, hh, ww)


# ---------------------------------------------------------- convolutions


class Conv(nn.Module):
    """2-D conv, optionally preceded by an identity-initialized temporal 1-D conv."""

    def __init__(self, c_in: int, c_out: int, kernel: int = 3, stride: int = 1, temporal: bool = False):
        super().__init__()
        self.spatial = nn.Conv2d(c_in, c_out, kernel, stride=stride, padding=kernel // 2)
        self.temporal = None
        if temporal:
            self.temporal = nn.Conv1d(c_in, c_in, 3, padding=1)
            with torch.no_grad():
                self.temporal.weight.zero_()
                self.temporal.weight[:, :, 1].copy_(torch.eye(c_in))
                self.temporal.bias.zero_()

    def temporal_mix(self, x: torch.Tensor, frames: int) -> torch.Tensor:
        """Kernel-3 convolution along frames, computed as a (3, 1) conv over (B, C, T, H*W)."""
        n, c, hh, ww = x.shape
        b = n // frames
        seq = x.view(b, frames, c, hh * ww).transpose(1, 2)
        out = F.conv2d(seq, self.temporal.weight[..., None], self.temporal.bias, padding=(1, 0))
        return out.transpose(1, 2).reshape(n, c, hh, ww)

    def forward(self, x: torch.Tensor, frames: int = 1, use_temporal: bool = True) -> torch.Tensor:
        if self.temporal is not None and use_temporal:
            x = self.temporal_mix(x, frames)
        return self.spatial(x)


class ResBlock(nn.Module):
    def __init__(self, c_in: int, c_out: int, temb_dim: int, groups: int = 8, temporal: bool = False):
        super().__init__()
        self.norm1 = nn.GroupNorm(_groups(c_in, groups), c_in)
        self.conv1 = Conv(c_in, c_out, temporal=temporal)
        self.temb = nn.Linear(temb_dim, c_out)
        self.norm2 = nn.GroupNorm(_groups(c_out, groups), c_out)
        self.conv2 = Conv(c_out, c_out, temporal=temporal)
        self.skip = nn.Conv2d(c_in, c_out, 1) if c_in != c_out else nn.Identity()

    def forward(self, x, temb, frames=1, use_temporal=True):
        h = self.conv1(F.silu(self.norm1(x)), frames, use_temporal)
        h = h + self.temb(F.silu(temb))[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)), frames, use_temporal)
        return self.skip(x) + h


class Stage(nn.Module):
    """ResBlock -> text cross-attention -> (video only) temporal attention."""

    def __init__(self, c_in, c_out, temb_dim, text_dim, groups, heads, temporal):
        super().__init__()
        self.res = ResBlock(c_in, c_out, temb_dim, groups, temporal)
        self.xattn = TextCrossAttention(c_out, text_dim, heads)
        self.tattn = TemporalAttention(c_out, heads) if temporal else None

    def forward(self, x, temb, ctx, mask, frames=1, use_temporal=True):
        x = self.res(x, temb, frames, use_temporal)
        x = self.xattn(x, ctx, mask)
        if self.tattn is not None and use_temporal:
            x = self.tattn(x, frames)
        return x


# ------------------------------------------------------------------ UNet


@dataclass
class EncoderState:
    skip: torch.Tensor
    temb: torch.Tensor
    ctx: torch.Tensor
    mask: torch.Tensor
    frames: int
    batch: int
    grid: tuple[int, int]


class MiniUNet(nn.Module):
    def __init__(
        self,
        in_channels: int,
        width: int = 64,
        text_dim: int = 128,
        groups: int = 8,
        heads: int = 4,
        temporal: bool = False,
    ):
        super().__init__()
        self.in_channels = in_channels
        self.width = width
        self.temporal = temporal
        self.use_temporal = temporal
        temb_dim = 2 * width
        self.time_mlp = nn.Sequential(nn.Linear(width, temb_dim), nn.SiLU(), nn.Linear(temb_dim, temb_dim))
        stage = lambda ci, co: Stage(ci, co, temb_dim, text_dim, groups, heads, temporal)
        self.conv_in = Conv(in_channels, width, temporal=temporal)
        self.enc0 = stage(width, width)
        self.down = Conv(width, width, stride=2, temporal=temporal)
        self.enc1 = stage(width, width)
        self.dec1 = stage(width, width)
        self.up = Conv(width, width, temporal=temporal)
        self.dec0 = stage(2 * width, width)
        self.norm_out = nn.GroupNorm(_groups(width, groups), width)
        self.conv_out = nn.Conv2d(width, in_channels, 3, padding=1)
        nn.init.zeros_(self.conv_out.weight)
        nn.init.zeros_(self.conv_out.bias)

    # subclasses fold their inputs to (N, C, H, W) and report the frame count
    def _fold(self, z: torch.Tensor) -> tuple[torch.Tensor, int, int]:
        raise NotImplementedError

    def _unfold(self, x: torch.Tensor, batch: int, frames: int) -> torch.Tensor:
        raise NotImplementedError

    def _time(self, t, batch: int, dtype) -> torch.Tensor:
        t = torch.as_tensor(t)
        if t.ndim == 0:
            t = t.expand(batch)
        return self.time_mlp(timestep_embedding(t, self.width).to(dtype))

    def encode(self, z_t: torch.Tensor, t, c: TextEmbedding) -> tuple[torch.Tensor, EncoderState]:
        """Run the encoder half; returns bottleneck tokens (B, frames*h*w, width)."""
        x, batch, frames = self._fold(z_t)
        dtype = x.dtype
        if x.shape[-2] % 2 or x.shape[-1] % 2:
            raise ValueError(f"latent spatial dims {tuple(x.shape[-2:])} must be even")
        ut = self.use_temporal
        temb = self._time(t, batch, dtype).repeat_interleave(frames, 0)
        tokens, mask = c.tokens, c.mask
        if tokens.ndim == 2:
            tokens, mask = tokens.expand(batch, -1, -1), mask.expand(batch, -1)
        ctx = tokens.to(dtype).repeat_interleave(frames, 0)
        mask = mask.repeat_interleave(frames, 0)
        h0 = self.enc0(self.conv_in(x, frames, ut), temb, ctx, mask, frames, ut)
        h1 = self.enc1(self.down(h0, frames, ut), temb, ctx, mask, frames, ut)
        n, w, hh, ww = h1.shape
        f = h1.view(batch, frames, w, hh * ww).permute(0, 1, 3, 2).reshape(batch, frames * hh * ww, w)
        return f, EncoderState(h0, temb, ctx, mask, frames, batch, (hh, ww))

    def decode(self, f_hat: torch.Tensor, st: EncoderState) -> torch.Tensor:
        ut = self.use_temporal
        hh, ww = st.grid
        h1 = f_hat.view(st.batch, st.frames, hh * ww, self.width).permute(0, 1, 3, 2)
        h1 = h1.reshape(st.batch * st.frames, self.width, hh, ww)
        h = self.dec1(h1, st.temb, st.ctx, st.mask, st.frames, ut)
        h = self.up(F.interpolate(h, scale_factor=2, mode="nearest"), st.frames, ut)
        h = self.dec0(torch.cat([h, st.skip], dim=1), st.temb, st.ctx, st.mask, st.frames, ut)
        out = self.conv_out(F.silu(self.norm_out(h)))
        return self._unfold(out, st.batch, st.frames)

    def forward(self, z_t: torch.Tensor, t, c: TextEmbedding, bridge=None):
        """Returns (eps_pred, f).  `bridge`, if given, maps f -> f_hat before decoding."""
        f, st = self.encode(z_t, t, c)
        f_hat = f if bridge is None else bridge(f)
        return self.decode(f_hat, st), f


class AudioDenoiser(MiniUNet):
    """2-D UNet over 8-channel audio latents (B, 8, h, w)."""

    LATENT_CHANNELS = 8

    def __init__(self, width=64, text_dim=128, groups=8, heads=4):
        super().__init__(self.LATENT_CHANNELS, width, text_dim, groups, heads, temporal=False)

    def _fold(self, z):
        if z.ndim != 4:
            raise ValueError(f"audio latent must be (B, C, h, w), got shape {tuple(z.shape)}")
        if z.shape[1] != self.LATENT_CHANNELS:
            raise ValueError(f"audio denoiser expects {self.LATENT_CHANNELS} input channels, got {z.shape[1]}")
        return z, z.shape[0], 1

    def _unfold(self, x, batch, frames):
        return x


class VideoDenoiser(MiniUNet):
    """Pseudo-3-D UNet over video latents (B, T, 4, h, w)."""

    LATENT_CHANNELS = 4

    def __init__(self, width=64, text_dim=128, groups=8, heads=4):
        super().__init__(self.LATENT_CHANNELS, width, text_dim, groups, heads, temporal=True)

    def _fold(self, z):
        if z.ndim != 5:
            raise ValueError(f"video latent must be (B, T, C, h, w), got shape {tuple(z.shape)}")
        if z.shape[2] != self.LATENT_CHANNELS:
            raise ValueError(f"video denoiser expects {self.LATENT_CHANNELS} channels, got {z.shape[2]}")
        b, t = z.shape[:2]
        return z.reshape(b * t, *z.shape[2:]), b, t

    def _unfold(self, x, batch, frames):
        return x.view(batch, frames, *x.shape[1:])


def audio_denoiser(net: AudioDenoiser, z_a_t, t, c):
    return net(z_a_t, t, c)


def video_denoiser(net: VideoDenoiser, z_v_t, t, c):
    return net(z_v_t, t, c)
