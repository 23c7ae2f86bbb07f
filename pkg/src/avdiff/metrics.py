"""
Evaluation statistics over a pluggable embedding provider.

Any object with `dim`, `provider_id`, `embed_frame`, `embed_audio` and
`embed_text` returning unit vectors can back the metrics.  The bundled
ToyAlignmentProvider reads the shape's height from a frame and the tone's pitch
from a spectrogram and puts both on the same half circle:

    e(h) = normalize([cos(pi h), sin(pi h), sigma * n])

where n is standard normal noise seeded by a hash of the input, living in the
remaining dim - 2 coordinates.  Two embeddings whose heights agree have a larger
angular component in common than two that disagree, so matched audio and video
score higher under cosine similarity.
"""

from __future__ import annotations

import hashlib
import math
import re
from dataclasses import dataclass
from typing import Protocol, runtime_checkable

import numpy as np

from . import audio as A
from .data import PitchLaw, height_of
from .media import VideoTensor

UNIT_TOL = 1e-6


@runtime_checkable
class EmbeddingProvider(Protocol):
    dim: int
    provider_id: str

    def embed_frame(self, frame) -> np.ndarray: ...

    def embed_audio(self, audio) -> np.ndarray: ...

    def embed_text(self, text: str) -> np.ndarray: ...


def check_unit(v: np.ndarray, dim: int, what: str = "embedding") -> np.ndarray:
    """Provider outputs must already be unit vectors of the right width; never renormalized here."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (dim,):
        raise ValueError(f"{what} has shape {v.shape}, expected ({dim},)")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{what} has non-finite entries")
    norm = float(np.linalg.norm(v))
    if abs(norm - 1.0) > UNIT_TOL:
        raise ValueError(f"{what} is not unit norm (|v| = {norm:.8f})")
    return v


def _frames(frames) -> list[np.ndarray]:
    if isinstance(frames, VideoTensor):
        frames = frames.data
    return [np.asarray(f) for f in frames]


def _content_seed(*parts) -> int:
    h = hashlib.blake2b(digest_size=8)
    for p in parts:
        h.update(p if isinstance(p, bytes) else np.ascontiguousarray(p).tobytes())
    return int.from_bytes(h.digest(), "little")


class ToyAlignmentProvider:
    """
    Deterministic stand-in for a joint audio-visual-text encoder on the synthetic
    corpus.  Frame height is the foreground centroid (pixels weighted by their
    distance from the median colour); audio height is the pitch law inverted at
    each column's peak mel bin, circular-averaged over loud columns.  Text height
    comes from position words in the caption.
    """

    _TEXT_HEIGHTS = {"top": 5 / 6, "high": 5 / 6, "middle": 0.5, "mid-range": 0.5, "bottom": 1 / 6, "low": 1 / 6}

    def __init__(self, dim: int = 32, noise: float = 0.1, pitch_law: PitchLaw = PitchLaw(),
                 mel: A.MelConfig = A.DEFAULT_MEL):
        if dim < 3:
            raise ValueError("dim must be at least 3")
        self.dim = dim
        self.noise = noise
        self.pitch_law = pitch_law
        self.mel = mel
        self.provider_id = f"toy-alignment-d{dim}-s{noise:g}"

    def _encode(self, angle_vec: np.ndarray | None, seed: int) -> np.ndarray:
        rng = np.random.default_rng(seed)
        v = np.zeros(self.dim)
        if angle_vec is not None:
            v[:2] = angle_vec
        v[2:] = self.noise * rng.standard_normal(self.dim - 2)
        return v / np.linalg.norm(v)

    @staticmethod
    def _angle(h: float) -> np.ndarray:
        return np.array([math.cos(math.pi * h), math.sin(math.pi * h)])

    def frame_height(self, frame) -> float | None:
        f = np.asarray(frame, dtype=np.float64)
        if f.ndim != 3 or f.shape[0] != 3:
            raise ValueError(f"frame must be 3xHxW, got {f.shape}")
        bg = np.median(f.reshape(3, -1), axis=1)
        w = np.linalg.norm(f - bg[:, None, None], axis=0)
        if w.sum() < 1e-6:
            return None
        rows = (np.arange(f.shape[1]) + 0.5) / f.shape[1]
        cy = float((w.sum(axis=1) * rows).sum() / w.sum())
        return float(np.clip(height_of(cy), 0.0, 1.0))

    def audio_heights(self, audio) -> np.ndarray:
        data = audio.data if isinstance(audio, A.AudioSpectrogram) else np.asarray(audio)
        spec = np.asarray(data, dtype=np.float64).reshape(-1, data.shape[-1])
        loud = spec.max(axis=0) > -0.5
        peaks = spec.argmax(axis=0)[loud]
        return np.clip(self.pitch_law.inverse(A.mel_centers(self.mel)[peaks]), 0.0, 1.0)

    def embed_frame(self, frame) -> np.ndarray:
        h = self.frame_height(frame)
        return self._encode(None if h is None else self._angle(h), _content_seed(b"frame", np.asarray(frame)))

    def embed_audio(self, audio) -> np.ndarray:
        data = audio.data if isinstance(audio, A.AudioSpectrogram) else np.asarray(audio)
        hs = self.audio_heights(data)
        vec = None
        if hs.size:
            vec = np.stack([np.cos(math.pi * hs), np.sin(math.pi * hs)]).mean(axis=1)
        return self._encode(vec, _content_seed(b"audio", data))

    def embed_text(self, text: str) -> np.ndarray:
        if not text or not text.strip():
            raise ValueError("caption must be non-empty")
        words = re.findall(r"[a-z\-]+", text.lower())
        hs = [self._TEXT_HEIGHTS[w] for w in words if w in self._TEXT_HEIGHTS]
        vec = self._angle(float(np.mean(hs))) if hs else None
        return self._encode(vec, _content_seed(b"text", text.encode("utf-8")))

    def embed_video(self, frames) -> np.ndarray:
        """Clip-level feature: mean of frame embeddings (not unit norm)."""
        return np.mean([check_unit(self.embed_frame(f), self.dim, "frame embedding") for f in _frames(frames)], axis=0)


def avh_from_embeddings(frame_embs, audio_emb, dim: int | None = None) -> float:
    """Mean over frames of cos(frame_i, audio); all inputs unit vectors."""
    frame_embs = list(frame_embs)
    if not frame_embs:
        raise ValueError("need at least one frame")
    dim = dim or len(audio_emb)
    a = check_unit(audio_emb, dim, "audio embedding")
    return float(np.mean([check_unit(f, dim, "frame embedding") @ a for f in frame_embs]))


def avh_score(frames, audio, p: EmbeddingProvider) -> float:
    """Audio-visual harmony: (1/N) sum_i cos(E_v(V_i), E_a(A)) over all N frames."""
    frames = _frames(frames)
    if not frames:
        raise ValueError("need at least one frame")
    return avh_from_embeddings([p.embed_frame(f) for f in frames], p.embed_audio(audio), p.dim)


def prompt_similarity_from_embeddings(frame_embs, text_emb, dim: int | None = None) -> float:
    frame_embs = list(frame_embs)
    if not frame_embs:
        raise ValueError("need at least one frame")
    dim = dim or len(text_emb)
    c = check_unit(text_emb, dim, "text embedding")
    return 100.0 * float(np.mean([check_unit(f, dim, "frame embedding") @ c for f in frame_embs]))


def prompt_similarity(frames, caption: str, p: EmbeddingProvider) -> float:
    """Mean frame-text cosine, x100."""
    if not caption or not caption.strip():
        raise ValueError("caption must be non-empty")
    frames = _frames(frames)
    if not frames:
        raise ValueError("need at least one frame")
    return prompt_similarity_from_embeddings([p.embed_frame(f) for f in frames], p.embed_text(caption), p.dim)


@dataclass(frozen=True)
class DistributionStats:
    mean: np.ndarray
    covariance: np.ndarray
    count: int

    def __post_init__(self):
        mu, cov = np.asarray(self.mean, dtype=np.float64), np.asarray(self.covariance, dtype=np.float64)
        if mu.ndim != 1 or cov.shape != (mu.size, mu.size):
            raise ValueError(f"mean {mu.shape} and covariance {cov.shape} disagree")
        if self.count < 2:
            raise ValueError(f"need at least 2 samples, got {self.count}")
        if np.max(np.abs(cov - cov.T), initial=0.0) > 1e-10:
            raise ValueError("covariance is not symmetric")
        object.__setattr__(self, "mean", mu)
        object.__setattr__(self, "covariance", cov)

    @classmethod
    def from_samples(cls, x) -> "DistributionStats":
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[0] < 2:
            raise ValueError(f"need an (N >= 2, d) sample matrix, got {x.shape}")
        cov = np.cov(x, rowvar=False).reshape(x.shape[1], x.shape[1])
        return cls(x.mean(axis=0), 0.5 * (cov + cov.T), x.shape[0])


def _psd_sqrt(m: np.ndarray, what: str) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues (clipped to >= 0) and eigenvectors of a symmetrized PSD matrix."""
    vals, vecs = np.linalg.eigh(0.5 * (m + m.T))
    if vals.size and vals.min() < -1e-8:
        raise ValueError(f"{what} is not positive semi-definite (min eigenvalue {vals.min():.3e})")
    return np.sqrt(np.clip(vals, 0.0, None)), vecs


def frechet_distance(s1: DistributionStats, s2: DistributionStats) -> float:
    """|mu1 - mu2|^2 + Tr(S1 + S2 - 2 (S1 S2)^(1/2))."""
    if s1.mean.shape != s2.mean.shape:
        raise ValueError(f"dimension mismatch: {s1.mean.size} vs {s2.mean.size}")
    sq1, v1 = _psd_sqrt(s1.covariance, "first covariance")
    _psd_sqrt(s2.covariance, "second covariance")
    root1 = (v1 * sq1) @ v1.T
    # (S1 S2)^(1/2) has the same trace as (S1^(1/2) S2 S1^(1/2))^(1/2), which is symmetric
    cross, _ = _psd_sqrt(root1 @ s2.covariance @ root1, "covariance product")
    diff = s1.mean - s2.mean
    value = diff @ diff + np.trace(s1.covariance) + np.trace(s2.covariance) - 2.0 * cross.sum()
    return float(max(value, 0.0))


def polynomial_kernel(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return (x @ y.T / x.shape[1] + 1.0) ** 3


def kernel_distance(x, y) -> float:
    """
    Unbiased MMD^2 with the cubic polynomial kernel.  Equal-size sets use the
    paired U-statistic mean_{i != j} [k(x_i,x_j) + k(y_i,y_j) - k(x_i,y_j) - k(x_j,y_i)],
    which is exactly zero when y is x; unequal sizes use the two-sample form.
    """
    x, y = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
    if x.ndim != 2 or y.ndim != 2 or x.shape[1] != y.shape[1]:
        raise ValueError(f"need (m, d) and (n, d) sample matrices, got {x.shape} and {y.shape}")
    m, n = x.shape[0], y.shape[0]
    if m < 2 or n < 2:
        raise ValueError(f"need at least 2 samples per set, got {m} and {n}")
    kxx, kyy, kxy = polynomial_kernel(x, x), polynomial_kernel(y, y), polynomial_kernel(x, y)
    if m == n:
        h = kxx + kyy - kxy - kxy.T
        return float((h.sum() - np.trace(h)) / (m * (m - 1)))
    sxx = (kxx.sum() - np.trace(kxx)) / (m * (m - 1))
    syy = (kyy.sum() - np.trace(kyy)) / (n * (n - 1))
    return float(sxx + syy - 2.0 * kxy.mean())
