"""
Audio-video interaction at the UNet bottleneck and the contrastive alignment
objective on the bridged features.

Weighted similarity between token sets a (N_a x D) and v (N_v x D), with
per-token softmax weights w_a, w_v from each modality's own projection:

    pool(v) = sum_j w_v[j] v_j          pool(a) = sum_i w_a[i] a_i
    s(a, v) = sum_i w_a[i] cos(a_i, pool(v)) + sum_j w_v[j] cos(v_j, pool(a))

s lies in [-2, 2] and is symmetric under swapping the modalities along with
their weights.  The alignment loss is a bidirectional InfoNCE over the B x B
matrix S[i, j] = s(a_i, v_j) with in-batch negatives, averaged over the batch.
"""

from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F

from .denoisers import Attention


def _as_batch(x) -> torch.Tensor:
    if isinstance(x, (list, tuple)):
        return torch.stack(list(x))
    return x


class CrossAttention(nn.Module):
    """
    f_hat = f_q + out(attn(LN(f_q), LN(f_kv))).  The output projection starts at
    zero, so a fresh block is exactly the identity on f_q.  No positional
    encoding is applied to the key/value tokens.
    """

    def __init__(self, query_dim: int, kv_dim: int | None = None, heads: int = 4):
        super().__init__()
        kv_dim = kv_dim or query_dim
        self.norm_q = nn.LayerNorm(query_dim)
        self.norm_kv = nn.LayerNorm(kv_dim)
        self.attn = Attention(query_dim, kv_dim, heads, zero_out=True)

    def attend(self, f_q: torch.Tensor, f_kv: torch.Tensor) -> torch.Tensor:
        """Attention output before the residual connection."""
        if f_q.shape[-2] == 0 or f_kv.shape[-2] == 0:
            raise ValueError("cross-attention needs non-empty query and key/value sequences")
        return self.attn(self.norm_q(f_q), self.norm_kv(f_kv))

    def forward(self, f_q: torch.Tensor, f_kv: torch.Tensor) -> torch.Tensor:
        return f_q + self.attend(f_q, f_kv)


class Bridge(nn.Module):
    """Bidirectional exchange: f_hat_a = CA(f_a, f_v), f_hat_v = CA(f_v, f_a)."""

    def __init__(self, audio_dim: int, video_dim: int, heads: int = 4):
        super().__init__()
        self.audio_from_video = CrossAttention(audio_dim, video_dim, heads)
        self.video_from_audio = CrossAttention(video_dim, audio_dim, heads)

    def forward(self, f_a: torch.Tensor, f_v: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        return self.audio_from_video(f_a, f_v), self.video_from_audio(f_v, f_a)


class SimilarityWeights(nn.Module):
    """Per-modality linear scoring of tokens followed by a softmax over tokens."""

    def __init__(self, audio_dim: int, video_dim: int):
        super().__init__()
        self.l_beta_a = nn.Linear(audio_dim, 1)
        self.l_beta_v = nn.Linear(video_dim, 1)

    def audio(self, f_a: torch.Tensor) -> torch.Tensor:
        return self.l_beta_a(f_a).squeeze(-1).softmax(-1)

    def video(self, f_v: torch.Tensor) -> torch.Tensor:
        return self.l_beta_v(f_v).squeeze(-1).softmax(-1)


def _check_tokens(f_a: torch.Tensor, f_v: torch.Tensor) -> None:
    if f_a.shape[-2] == 0 or f_v.shape[-2] == 0:
        raise ValueError("token sequences must be non-empty")
    if f_a.shape[-1] != f_v.shape[-1]:
        raise ValueError(f"token widths differ ({f_a.shape[-1]} vs {f_v.shape[-1]}); project them first")


def similarity_from_weights(
    f_a: torch.Tensor, f_v: torch.Tensor, w_a: torch.Tensor, w_v: torch.Tensor
) -> torch.Tensor:
    """
    All-pairs weighted similarity.  f_a (B, N_a, D), f_v (B, N_v, D) with their
    token weights (B, N_a), (B, N_v); returns S (B, B) with S[i, j] = s(a_i, v_j).
    """
    _check_tokens(f_a, f_v)
    pool_a = torch.einsum("bn,bnd->bd", w_a, f_a)
    pool_v = torch.einsum("bn,bnd->bd", w_v, f_v)
    na, nv = F.normalize(f_a, dim=-1), F.normalize(f_v, dim=-1)
    pa, pv = F.normalize(pool_a, dim=-1), F.normalize(pool_v, dim=-1)
    audio_side = torch.einsum("in,ind,jd->ij", w_a, na, pv)
    video_side = torch.einsum("jn,jnd,id->ij", w_v, nv, pa)
    return audio_side + video_side


def weighted_similarity(f_a: torch.Tensor, f_v: torch.Tensor, w: SimilarityWeights) -> torch.Tensor:
    """s(f_a, f_v) for a single pair of token sequences (N_a, D), (N_v, D)."""
    _check_tokens(f_a, f_v)
    S = similarity_from_weights(f_a[None], f_v[None], w.audio(f_a[None]), w.video(f_v[None]))
    return S[0, 0]


def pairwise_similarity(f_a, f_v, w: SimilarityWeights, mode: str = "token") -> torch.Tensor:
    """
    B x B similarity matrix.  mode="token" is the weighted token form above;
    mode="pooled" compares one mean vector per clip, 2 * cos(mean a_i, mean v_j),
    kept on the same [-2, 2] scale.
    """
    f_a, f_v = _as_batch(f_a), _as_batch(f_v)
    if f_a.shape[0] != f_v.shape[0]:
        raise ValueError(f"batch sizes differ: {f_a.shape[0]} audio vs {f_v.shape[0]} video")
    if mode == "token":
        return similarity_from_weights(f_a, f_v, w.audio(f_a), w.video(f_v))
    if mode == "pooled":
        _check_tokens(f_a, f_v)
        pa = F.normalize(f_a.mean(1), dim=-1)
        pv = F.normalize(f_v.mean(1), dim=-1)
        return 2.0 * pa @ pv.T
    raise ValueError(f"unknown similarity mode {mode!r}")


def contrastive_from_similarity(S: torch.Tensor, tau: float) -> torch.Tensor:
    """Bidirectional InfoNCE with positives on the diagonal, averaged over the batch."""
    if not tau > 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ValueError(f"similarity matrix must be square, got {tuple(S.shape)}")
    logits = S / tau
    a2v = -torch.diagonal(logits.log_softmax(dim=1))
    v2a = -torch.diagonal(logits.log_softmax(dim=0))
    return (a2v + v2a).mean()


def eas_loss(batch_f_a, batch_f_v, w: SimilarityWeights, tau: float = 0.1, mode: str = "token") -> torch.Tensor:
    """Explicit alignment loss over a batch of paired bridged features."""
    if not tau > 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    return contrastive_from_similarity(pairwise_similarity(batch_f_a, batch_f_v, w, mode), tau)


def total_loss(l_diff: torch.Tensor, l_eas: torch.Tensor, lam: float = 0.1) -> torch.Tensor:
    if lam < 0 or math.isnan(lam):
        raise ValueError(f"loss weight must be >= 0, got {lam}")
    return l_diff + lam * l_eas


def pooled_feature_cosine(f_a: torch.Tensor, f_v: torch.Tensor) -> torch.Tensor:
    """cos(mean-pooled f_a, mean-pooled f_v) per sample; used by the ablation readout."""
    _check_tokens(f_a, f_v)
    return F.cosine_similarity(f_a.mean(-2), f_v.mean(-2), dim=-1)
