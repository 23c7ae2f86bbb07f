"""Text-to-audible-video sampling from a trained checkpoint."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch

from . import audio as A
from .data import FPS, AudibleVideoSample, write_manifest
from .media import VideoTensor, export_png_sequence, write_video
from .model import AudibleVideoDiffusion
from .train import Codecs, text_encoder_for


def media_shapes(duration: float, mel: A.MelConfig = A.DEFAULT_MEL, frame_size: int = 64) -> tuple[tuple, tuple]:
    """(spectrogram shape, video shape) for a clip of `duration` seconds."""
    n_frames = max(1, int(round(duration * FPS)))
    return (1, mel.n_mels, mel.n_frames_for(duration)), (n_frames, 3, frame_size, frame_size)


@torch.no_grad()
def generate(
    model: AudibleVideoDiffusion, codecs: Codecs, caption: str, seed: int = 0, steps: int = 50
) -> AudibleVideoSample:
    """One sample per caption; the initial noise comes from a generator seeded with `seed`."""
    cfg = model.cfg
    c = text_encoder_for(cfg)(caption)
    c.tokens, c.mask = c.tokens[None], c.mask[None]
    spec_shape, video_shape = media_shapes(cfg.duration)
    za_shape = (1, *codecs.audio.latent_shape(spec_shape))
    zv_shape = (1, *codecs.video.latent_shape(video_shape))
    gen = torch.Generator().manual_seed(seed)
    z_a, z_v = model.sample(c, za_shape, zv_shape, steps=steps, generator=gen)
    frames = codecs.video.decode_tensor(z_v[0]).clamp(-1, 1).float().numpy()
    spec = codecs.audio.decode_tensor(z_a[0]).clamp(-1, 1).float().numpy()
    return AudibleVideoSample(
        VideoTensor(frames, frame_rate=FPS), A.AudioSpectrogram(spec, source_seed=seed), caption, True, seed
    )


def write_outputs(
    samples: list[AudibleVideoSample], out_dir: str | Path, meta: dict, png: bool = True, gl_iters: int = 32
) -> Path:
    """
    Per sample: raw video tensor, WAV, optional PNG frames and a metadata JSON.
    A manifest over all samples makes the directory directly evaluable.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = out_dir / "manifest.jsonl"
    write_manifest(samples, manifest)
    for i, s in enumerate(samples):
        stem = out_dir / f"sample_{i:03d}"
        write_video(stem.with_suffix(".video.avt"), s.video)
        A.write_wav(stem.with_suffix(".wav"), A.spectrogram_to_waveform(s.audio, n_iter=gl_iters))
        if png:
            export_png_sequence(s.video, out_dir / f"{stem.name}_frames")
        record = {**meta, "caption": s.caption, "seed": s.seed,
                  "video_shape": list(s.video.shape), "spectrogram_shape": list(s.audio.shape)}
        stem.with_suffix(".json").write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")
    return manifest


def sample_to_dir(
    model: AudibleVideoDiffusion,
    codecs: Codecs,
    captions: list[str],
    out_dir: str | Path,
    seed: int = 0,
    steps: int = 50,
    png: bool = True,
) -> Path:
    """Caption i is sampled with seed + i; no reranking, one draw per caption."""
    if not captions:
        raise ValueError("need at least one caption")
    samples = [generate(model, codecs, cap, seed + i, steps) for i, cap in enumerate(captions)]
    meta = {"steps": steps, "config_hash": model.cfg.config_hash, "base_seed": seed}
    return write_outputs(samples, out_dir, meta, png=png)

