"""Training loop: frozen codecs, precomputed latents, one shared timestep per batch."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .checkpoint import load_checkpoint, save_checkpoint
from .codecs import LatentCodec, LearnedCodec, make_codec, train_codec
from .config import RunConfig
from .data import AudibleVideoSample, load_samples, make_corpus
from .denoisers import HashTextEncoder, TextEmbedding
from .model import AudibleVideoDiffusion

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class Codecs:
    audio: LatentCodec
    video: LatentCodec


@dataclass
class EncodedCorpus:
    z_a: torch.Tensor  # (N, 8, h_a, w_a)
    z_v: torch.Tensor  # (N, T_f, 4, h_v, w_v)
    text: TextEmbedding  # batched (N, L, D)
    captions: list[str]


@dataclass
class TrainResult:
    model: AudibleVideoDiffusion
    codecs: Codecs
    log: list[dict] = field(default_factory=list)


def load_corpus(cfg: RunConfig) -> list[AudibleVideoSample]:
    if cfg.manifest:
        return load_samples(cfg.manifest)
    return make_corpus(cfg.n_train, "train", cfg.duration)


def build_codecs(cfg: RunConfig, samples: list[AudibleVideoSample]) -> Codecs:
    if cfg.codec == "analytic":
        return Codecs(make_codec("analytic", "audio"), make_codec("analytic", "video"))
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(cfg.seed + 17)
        audio, video = LearnedCodec("audio"), LearnedCodec("video")
    frames = torch.as_tensor(np.concatenate([s.video.data for s in samples]))
    specs = torch.as_tensor(np.stack([s.audio.data for s in samples]))
    train_codec(video, frames, cfg.codec_steps, seed=cfg.seed)
    train_codec(audio, specs, cfg.codec_steps, batch_size=8, seed=cfg.seed)
    return Codecs(audio, video)


@torch.no_grad()
def encode_corpus(samples, codecs: Codecs, encoder: HashTextEncoder) -> EncodedCorpus:
    z_a = torch.stack([codecs.audio.encode(s.audio).float() for s in samples])
    z_v = torch.stack([codecs.video.encode(s.video).float() for s in samples])
    captions = [s.caption for s in samples]
    return EncodedCorpus(z_a, z_v, encoder.batch(captions), captions)


def _batches(n: int, batch_size: int, gen: torch.Generator):
    """Epoch-wise shuffling; a batch never repeats a sample (in-batch negatives stay valid)."""
    while True:
        perm = torch.randperm(n, generator=gen)
        for i in range(0, n - batch_size + 1, batch_size):
            yield perm[i : i + batch_size]


def text_encoder_for(cfg: RunConfig) -> HashTextEncoder:
    return HashTextEncoder(dim=cfg.text_dim, seed=0)


def train(cfg: RunConfig, samples=None, on_step=None, codecs: Codecs | None = None) -> TrainResult:
    """
    Optimise the two-stream model for cfg.steps steps.  Deterministic given the
    config (including its seed).  Raises TrainingDiverged on a non-finite loss.
    """
    cfg.validate()
    torch.use_deterministic_algorithms(True, warn_only=True)
    samples = load_corpus(cfg) if samples is None else samples
    if len(samples) < cfg.batch_size:
        raise ValueError(f"corpus has {len(samples)} samples, fewer than batch_size {cfg.batch_size}")
    codecs = codecs or build_codecs(cfg, samples)
    corpus = encode_corpus(samples, codecs, text_encoder_for(cfg))
    model = AudibleVideoDiffusion(cfg)
    opt = torch.optim.Adam([p for p in model.parameters() if p.requires_grad], lr=cfg.lr)
    gen = torch.Generator().manual_seed(cfg.seed)
    batches = _batches(len(samples), cfg.batch_size, gen)
    out_dir = cfg.resolved_output_dir()
    result = TrainResult(model, codecs)
    model.train()
    for step in range(1, cfg.steps + 1):
        idx = next(batches)
        t = int(torch.randint(1, cfg.T + 1, (1,), generator=gen))
        z_a0, z_v0 = corpus.z_a[idx], corpus.z_v[idx]
        eps_a = torch.randn(z_a0.shape, generator=gen)
        eps_v = torch.randn(z_v0.shape, generator=gen)
        c = TextEmbedding(corpus.text.tokens[idx], corpus.text.mask[idx])
        losses = model.losses(z_a0, z_v0, c, t, eps_a, eps_v)
        total = losses["total"]
        if not math.isfinite(total.item()):
            raise TrainingDiverged(
                f"non-finite loss at step {step} (config {cfg.config_hash}, seed {cfg.seed})"
            )
        opt.zero_grad(set_to_none=True)
        total.backward()
        opt.step()
        record = {"step": step, "t": t, **{k: v.item() for k, v in losses.items()}}
        result.log.append(record)
        if on_step is not None:
            on_step(record)
        if step % 100 == 0:
            log.info("step %d total %.4f diff %.4f eas %.4f", step, record["total"], record["l_diff"], record["l_eas"])
        if cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
            save_run(result, out_dir, name=f"step{step:06d}.ckpt")
    return result


def checkpoint_tensors(result: TrainResult) -> dict[str, torch.Tensor]:
    tensors = {f"model.{k}": v for k, v in result.model.state_dict().items()}
    for name, codec in (("audio", result.codecs.audio), ("video", result.codecs.video)):
        if isinstance(codec, LearnedCodec):
            tensors.update({f"codec.{name}.{k}": v for k, v in codec.state_dict().items()})
    return tensors


def save_run(result: TrainResult, out_dir: str | Path, name: str = "final.ckpt") -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg = result.model.cfg
    ckpt = out_dir / name
    meta = {"steps_done": len(result.log)}
    save_checkpoint(ckpt, checkpoint_tensors(result), cfg.to_dict(), meta)
    with open(out_dir / "loss_log.jsonl", "w", encoding="utf-8") as f:
        for rec in result.log:
            f.write(json.dumps({"config_hash": cfg.config_hash, "seed": cfg.seed, **rec}) + "\n")
    return ckpt


def load_model(path: str | Path) -> tuple[AudibleVideoDiffusion, Codecs, dict]:
    tensors, header = load_checkpoint(path)
    cfg = RunConfig.from_dict(header["config"])
    model = AudibleVideoDiffusion(cfg)
    state = {k[len("model."):]: v for k, v in tensors.items() if k.startswith("model.")}
    try:
        model.load_state_dict(state)
    except RuntimeError as exc:
        raise ValueError(f"{path}: checkpoint incompatible with its config: {exc}") from None
    model.eval()
    codecs = []
    for name in ("audio", "video"):
        prefix = f"codec.{name}."
        sub = {k[len(prefix):]: v for k, v in tensors.items() if k.startswith(prefix)}
        if sub:
            codec = LearnedCodec(name)
            codec.load_state_dict(sub)
            codecs.append(codec.freeze())
        else:
            codecs.append(make_codec("analytic", name))
    return model, Codecs(*codecs), header
