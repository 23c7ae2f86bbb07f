"""
Per-modality latent codecs with the /8 spatial contracts:

    video  T x 3 x H x W  ->  T x 4 x H/8 x W/8
    audio  1 x H x W      ->  8 x H/8 x W/8

Two families share one interface.  `AnalyticCodec` applies a fixed block-wise
orthonormal (Haar) projection: encode(decode(z)) == z, and decode(encode(x))
is the orthogonal projection onto the codec's range, hence the identity on
every decoded signal.  `LearnedCodec` is a small convolutional autoencoder
trained on the synthetic corpus, then frozen.
"""

from __future__ import annotations

import numpy as np
import torch
import torch.nn as nn

from .audio import AudioSpectrogram
from .media import VideoTensor

BLOCK = 8
VIDEO_CHANNELS, VIDEO_LATENT = 3, 4
AUDIO_CHANNELS, AUDIO_LATENT = 1, 8


def haar_matrix(n: int = BLOCK) -> np.ndarray:
    """Orthonormal 1-D Haar basis, rows ordered coarse to fine."""
    if n == 1:
        return np.ones((1, 1))
    h = haar_matrix(n // 2)
    top = np.kron(h, [1.0, 1.0])
    bottom = np.kron(np.eye(n // 2), [1.0, -1.0])
    return np.vstack([top, bottom]) / np.sqrt(2.0)


def video_basis() -> np.ndarray:
    """(4, 3, 8, 8): per-colour block means plus the vertical Haar edge of luminance."""
    h = haar_matrix()
    dc = np.outer(h[0], h[0])
    vert = np.outer(h[1], h[0])
    basis = np.zeros((VIDEO_LATENT, VIDEO_CHANNELS, BLOCK, BLOCK))
    for c in range(3):
        basis[c, c] = dc
    basis[3] = vert[None] / np.sqrt(3.0)
    return basis


def audio_basis() -> np.ndarray:
    """(8, 1, 8, 8): full Haar resolution over mel bins, block mean over time."""
    h = haar_matrix()
    return np.stack([np.outer(h[i], h[0])[None] for i in range(AUDIO_LATENT)])


def check_media_shape(x: torch.Tensor, channels: int, what: str) -> None:
    if x.ndim < 3:
        raise ValueError(f"{what}: expected (..., C, H, W), got shape {tuple(x.shape)}")
    if x.shape[-3] != channels:
        raise ValueError(f"{what}: expected {channels} channels, got {x.shape[-3]}")
    if x.shape[-2] % BLOCK or x.shape[-1] % BLOCK:
        raise ValueError(f"{what}: spatial dims {tuple(x.shape[-2:])} not divisible by {BLOCK}")


class LatentCodec(nn.Module):
    modality: str
    in_channels: int
    latent_channels: int

    def encode_tensor(self, x: torch.Tensor) -> torch.Tensor:
        raise NotImplementedError

    def decode_tensor(self, z: torch.Tensor) -> torch.Tensor:
        raise NotImplementedError

    def latent_shape(self, media_shape: tuple[int, ...]) -> tuple[int, ...]:
        *lead, _, h, w = media_shape
        return (*lead, self.latent_channels, h // BLOCK, w // BLOCK)

    def _check_latent(self, z: torch.Tensor) -> None:
        if z.ndim < 3 or z.shape[-3] != self.latent_channels:
            raise ValueError(
                f"{self.modality} latent: expected {self.latent_channels} channels, got shape {tuple(z.shape)}"
            )

    # media-typed wrappers
    def encode(self, x) -> torch.Tensor:
        data = x.data if isinstance(x, (VideoTensor, AudioSpectrogram)) else x
        return self.encode_tensor(torch.as_tensor(np.asarray(data) if not torch.is_tensor(data) else data))

    def decode(self, z: torch.Tensor):
        """Decode to a media object, clamped to the [-1, 1] media range."""
        out = self.decode_tensor(z).clamp(-1.0, 1.0)
        if out.ndim == 4 and self.modality == "video":
            return VideoTensor(out.detach().cpu().numpy())
        if out.ndim == 3 and self.modality == "audio":
            return AudioSpectrogram(out.detach().cpu().numpy())
        return out


class AnalyticCodec(LatentCodec):
    """Fixed block projection; `scale` multiplies latents (exact for powers of 2)."""

    def __init__(self, modality: str, scale: float = 0.125):
        super().__init__()
        if modality == "video":
            basis, self.in_channels, self.latent_channels = video_basis(), VIDEO_CHANNELS, VIDEO_LATENT
        elif modality == "audio":
            basis, self.in_channels, self.latent_channels = audio_basis(), AUDIO_CHANNELS, AUDIO_LATENT
        else:
            raise ValueError(f"unknown modality {modality!r}")
        self.modality = modality
        self.scale = float(scale)
        self.register_buffer("basis", torch.as_tensor(basis, dtype=torch.float64))

    def encode_tensor(self, x: torch.Tensor) -> torch.Tensor:
        check_media_shape(x, self.in_channels, f"{self.modality} encode")
        *lead, c, h, w = x.shape
        blocks = x.reshape(*lead, c, h // BLOCK, BLOCK, w // BLOCK, BLOCK)
        z = torch.einsum("kcij,...chiwj->...khw", self.basis.to(x.dtype), blocks)
        return z * self.scale

    def decode_tensor(self, z: torch.Tensor) -> torch.Tensor:
        self._check_latent(z)
        *lead, k, h, w = z.shape
        x = torch.einsum("kcij,...khw->...chiwj", self.basis.to(z.dtype), z / self.scale)
        return x.reshape(*lead, self.in_channels, h * BLOCK, w * BLOCK)


class LearnedCodec(LatentCodec):
    """Deterministic conv autoencoder: three stride-2 stages each way."""

    def __init__(self, modality: str, width: int = 32):
        super().__init__()
        if modality == "video":
            self.in_channels, self.latent_channels = VIDEO_CHANNELS, VIDEO_LATENT
        elif modality == "audio":
            self.in_channels, self.latent_channels = AUDIO_CHANNELS, AUDIO_LATENT
        else:
            raise ValueError(f"unknown modality {modality!r}")
        self.modality = modality
        c, w, k = self.in_channels, width, self.latent_channels
        self.encoder = nn.Sequential(
            nn.Conv2d(c, w, 3, padding=1), nn.SiLU(),
            nn.Conv2d(w, w, 4, stride=2, padding=1), nn.SiLU(),
            nn.Conv2d(w, 2 * w, 4, stride=2, padding=1), nn.SiLU(),
            nn.Conv2d(2 * w, 2 * w, 4, stride=2, padding=1), nn.SiLU(),
            nn.Conv2d(2 * w, k, 1),
        )
        self.decoder = nn.Sequential(
            nn.Conv2d(k, 2 * w, 3, padding=1), nn.SiLU(),
            nn.ConvTranspose2d(2 * w, 2 * w, 4, stride=2, padding=1), nn.SiLU(),
            nn.ConvTranspose2d(2 * w, w, 4, stride=2, padding=1), nn.SiLU(),
            nn.ConvTranspose2d(w, w, 4, stride=2, padding=1), nn.SiLU(),
            nn.Conv2d(w, c, 3, padding=1),
        )

    def _flat(self, x: torch.Tensor, net: nn.Module) -> torch.Tensor:
        *lead, c, h, w = x.shape
        y = net(x.reshape(-1, c, h, w).to(next(self.parameters()).dtype))
        return y.reshape(*lead, *y.shape[1:])

    def encode_tensor(self, x: torch.Tensor) -> torch.Tensor:
        check_media_shape(x, self.in_channels, f"{self.modality} encode")
        return self._flat(x, self.encoder)

    def decode_tensor(self, z: torch.Tensor) -> torch.Tensor:
        self._check_latent(z)
        return self._flat(z, self.decoder)

    def freeze(self) -> "LearnedCodec":
        self.eval()
        for p in self.parameters():
            p.requires_grad_(False)
        return self


def train_codec(
    codec: LearnedCodec,
    images: torch.Tensor,
    steps: int = 2000,
    batch_size: int = 16,
    lr: float = 1e-3,
    seed: int = 0,
) -> list[float]:
    """
    Fit `codec` to reconstruct `images` (N x C x H x W) with MSE, then freeze it.

    Returns the per-step training loss.
    """
    check_media_shape(images, codec.in_channels, "train_codec")
    gen = torch.Generator().manual_seed(seed)
    opt = torch.optim.Adam(codec.parameters(), lr=lr)
    codec.train()
    history = []
    for _ in range(steps):
        idx = torch.randint(0, images.shape[0], (batch_size,), generator=gen)
        x = images[idx]
        loss = ((codec.decode_tensor(codec.encode_tensor(x)) - x) ** 2).mean()
        opt.zero_grad()
        loss.backward()
        opt.step()
        history.append(loss.item())
    codec.freeze()
    return history


def reconstruction_mse(codec: LatentCodec, images: torch.Tensor, chunk: int = 64) -> float:
    with torch.no_grad():
        errs = [
            ((codec.decode_tensor(codec.encode_tensor(x)) - x) ** 2).sum()
            for x in images.split(chunk)
        ]
    return float(sum(errs) / images.numel())


def make_codec(kind: str, modality: str, **kwargs) -> LatentCodec:
    if kind == "analytic":
        return AnalyticCodec(modality, **kwargs)
    if kind == "learned":
        return LearnedCodec(modality, **kwargs)
    raise ValueError(f"unknown codec kind {kind!r}")
