"""
Mel-spectrogram analysis, waveform synthesis by iterative phase recovery,
and 16-bit PCM WAV I/O.

Spectrograms are stored as log-magnitude mel frames mapped to [-1, 1]:
db_floor -> -1, db_ceil -> +1.  The value -1 is treated as silence on the
way back, so an all-floor spectrogram resynthesizes to a zero waveform.
"""

from __future__ import annotations

import wave
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
import torch

SAMPLE_RATE = 16_000
HOP = 256
N_FFT = 1024
N_MELS = 64
DB_FLOOR = -40.0
DB_CEIL = 50.0


@dataclass(frozen=True)
class MelConfig:
    sample_rate: int = SAMPLE_RATE
    hop: int = HOP
    n_fft: int = N_FFT
    n_mels: int = N_MELS
    fmin: float = 0.0
    fmax: float | None = None
    db_floor: float = DB_FLOOR
    db_ceil: float = DB_CEIL

    @property
    def f_max(self) -> float:
        return self.fmax if self.fmax is not None else self.sample_rate / 2

    def n_samples(self, n_frames: int) -> int:
        """Waveform length whose centered STFT has exactly `n_frames` frames."""
        return (n_frames - 1) * self.hop

    def n_frames_for(self, duration: float) -> int:
        """Smallest multiple of 8 covering `duration` seconds."""
        raw = int(np.ceil(duration * self.sample_rate / self.hop))
        return max(8, int(np.ceil(raw / 8)) * 8)


DEFAULT_MEL = MelConfig()


@dataclass
class AudioSpectrogram:
    """1 x n_mels x frames normalized log-mel array plus its analysis metadata."""

    data: np.ndarray
    sample_rate: int = SAMPLE_RATE
    hop: int = HOP
    source_seed: int | None = None

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.ndim != 3 or self.data.shape[0] != 1:
            raise ValueError(f"spectrogram must be 1 x H x W, got {self.data.shape}")
        if self.data.shape[1] % 8 or self.data.shape[2] % 8:
            raise ValueError(f"spectrogram dims must be divisible by 8, got {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("spectrogram has non-finite entries")

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __eq__(self, other):
        if not isinstance(other, AudioSpectrogram):
            return NotImplemented
        return (
            self.sample_rate == other.sample_rate
            and self.hop == other.hop
            and self.source_seed == other.source_seed
            and np.array_equal(self.data, other.data)
        )


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@lru_cache(maxsize=8)
def mel_filterbank(cfg: MelConfig = DEFAULT_MEL) -> np.ndarray:
    """Triangular HTK-scale filters with unit peak, shape (n_mels, n_fft//2 + 1)."""
    freqs = np.linspace(0.0, cfg.sample_rate / 2, cfg.n_fft // 2 + 1)
    edges = mel_to_hz(np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.f_max), cfg.n_mels + 2))
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    up = (freqs[None, :] - lo) / (mid - lo)
    down = (hi - freqs[None, :]) / (hi - mid)
    fb = np.maximum(0.0, np.minimum(up, down))
    fb.setflags(write=False)
    return fb


def mel_centers(cfg: MelConfig = DEFAULT_MEL) -> np.ndarray:
    """Centre frequency (Hz) of each mel filter."""
    return mel_to_hz(np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.f_max), cfg.n_mels + 2))[1:-1]


def mel_bin_for_frequency(f_hz: float, cfg: MelConfig = DEFAULT_MEL) -> int:
    """Index of the mel filter with the largest response at f_hz."""
    return int(np.argmin(np.abs(hz_to_mel(mel_centers(cfg)) - hz_to_mel(f_hz))))


def _window(cfg: MelConfig) -> torch.Tensor:
    return torch.hann_window(cfg.n_fft, periodic=True, dtype=torch.float64)


def stft(wav, cfg: MelConfig = DEFAULT_MEL) -> torch.Tensor:
    x = torch.as_tensor(np.asarray(wav, dtype=np.float64)) if not torch.is_tensor(wav) else wav
    return torch.stft(
        x, cfg.n_fft, hop_length=cfg.hop, window=_window(cfg), center=True,
        pad_mode="reflect", return_complex=True,
    )


def istft(spec: torch.Tensor, length: int, cfg: MelConfig = DEFAULT_MEL) -> torch.Tensor:
    return torch.istft(
        spec, cfg.n_fft, hop_length=cfg.hop, window=_window(cfg), center=True, length=length
    )


def mel_magnitude(wav: np.ndarray, cfg: MelConfig = DEFAULT_MEL) -> np.ndarray:
    """Linear-amplitude mel spectrogram, shape (n_mels, frames)."""
    mag = stft(wav, cfg).abs().numpy()
    return mel_filterbank(cfg) @ mag


def normalize_db(mel_amp: np.ndarray, cfg: MelConfig = DEFAULT_MEL) -> np.ndarray:
    db = 20.0 * np.log10(np.maximum(mel_amp, 1e-10))
    x = 2.0 * (db - cfg.db_floor) / (cfg.db_ceil - cfg.db_floor) - 1.0
    return np.clip(x, -1.0, 1.0)


def denormalize_db(x: np.ndarray, cfg: MelConfig = DEFAULT_MEL) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    db = (np.clip(x, -1.0, 1.0) + 1.0) / 2.0 * (cfg.db_ceil - cfg.db_floor) + cfg.db_floor
    return np.where(x <= -1.0, 0.0, 10.0 ** (db / 20.0))


def analyze(wav: np.ndarray, cfg: MelConfig = DEFAULT_MEL, source_seed: int | None = None) -> AudioSpectrogram:
    """Waveform -> normalized log-mel AudioSpectrogram (1 x n_mels x frames)."""
    x = normalize_db(mel_magnitude(wav, cfg), cfg)
    return AudioSpectrogram(
        x[None].astype(np.float32), sample_rate=cfg.sample_rate, hop=cfg.hop, source_seed=source_seed
    )


def mel_to_linear(mel_amp: np.ndarray, cfg: MelConfig = DEFAULT_MEL) -> np.ndarray:
    """Least-squares inverse of the filterbank, clipped to nonnegative magnitudes."""
    inv = np.linalg.pinv(mel_filterbank(cfg))
    return np.maximum(inv @ mel_amp, 0.0)


def _random_phase(shape, seed: int) -> torch.Tensor:
    gen = torch.Generator().manual_seed(seed)
    phase = torch.rand(shape, generator=gen, dtype=torch.float64) * 2 * np.pi
    return torch.polar(torch.ones(shape, dtype=torch.float64), phase)


def griffin_lim(
    magnitude: np.ndarray,
    length: int,
    cfg: MelConfig = DEFAULT_MEL,
    n_iter: int = 32,
    momentum: float = 0.99,
    seed: int = 0,
    mel_target: np.ndarray | None = None,
) -> np.ndarray:
    """
    Recover a waveform from a linear STFT magnitude (freq x frames).

    Fast Griffin-Lim: alternating projections with momentum on the
    consistent-spectrogram estimate, phase seeded from a uniform draw.

    With `mel_target`, the magnitude is re-estimated every iteration from the
    current signal's own spectrum, rescaled multiplicatively so that its mel
    projection matches the target.  A filterbank pseudo-inverse alone gives
    magnitudes no real signal has; this keeps the estimate consistent.
    """
    mag = torch.as_tensor(np.array(magnitude, dtype=np.float64))
    if not torch.any(mag > 0):
        return np.zeros(length)
    if mel_target is not None:
        fb = torch.as_tensor(np.array(mel_filterbank(cfg)))
        fb_mass = fb.sum(0).clamp_min(1e-8)[:, None]
        target = torch.as_tensor(np.array(mel_target, dtype=np.float64))
    angles = _random_phase(mag.shape, seed)
    prev = torch.zeros_like(angles)
    for _ in range(n_iter):
        rebuilt = stft(istft(mag * angles, length, cfg), cfg)
        if mel_target is not None:
            mag = rebuilt.abs()
            mag = mag * (fb.T @ (target / (fb @ mag).clamp_min(1e-12))) / fb_mass
        accel = rebuilt - momentum / (1 + momentum) * prev
        angles = accel / accel.abs().clamp_min(1e-16)
        prev = rebuilt
    return istft(mag * angles, length, cfg).numpy()


def spectrogram_to_waveform(
    spec: AudioSpectrogram, cfg: MelConfig = DEFAULT_MEL, n_iter: int = 32
) -> np.ndarray:
    """Invert a spectrogram produced by `analyze` back to a waveform."""
    if spec.sample_rate != cfg.sample_rate or spec.hop != cfg.hop:
        raise ValueError(
            f"spectrogram metadata ({spec.sample_rate} Hz, hop {spec.hop}) does not match "
            f"analysis config ({cfg.sample_rate} Hz, hop {cfg.hop})"
        )
    if spec.data.shape[1] != cfg.n_mels:
        raise ValueError(f"expected {cfg.n_mels} mel bins, got {spec.data.shape[1]}")
    mel_amp = denormalize_db(spec.data[0], cfg)
    frames = spec.data.shape[2]
    return griffin_lim(
        mel_to_linear(mel_amp, cfg), cfg.n_samples(frames), cfg, n_iter=n_iter, mel_target=mel_amp
    )


def write_wav(path: str | Path, wav: np.ndarray, sample_rate: int = SAMPLE_RATE) -> None:
    """16-bit PCM mono; samples clipped to [-1, 1]."""
    pcm = np.round(np.clip(np.asarray(wav, dtype=np.float64), -1.0, 1.0) * 32767).astype("<i2")
    with wave.open(str(path), "wb") as f:
        f.setnchannels(1)
        f.setsampwidth(2)
        f.setframerate(int(sample_rate))
        f.writeframes(pcm.tobytes())


def read_wav(path: str | Path) -> tuple[np.ndarray, int]:
    with wave.open(str(path), "rb") as f:
        if f.getsampwidth() != 2:
            raise ValueError(f"{path}: only 16-bit PCM is supported")
        n_ch = f.getnchannels()
        rate = f.getframerate()
        raw = np.frombuffer(f.readframes(f.getnframes()), dtype="<i2")
    wav = raw.reshape(-1, n_ch).mean(axis=1) / 32767.0
    return wav, rate
