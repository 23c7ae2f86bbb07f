"""Two-stream audible-video diffusion model: denoisers, optional bridge, alignment head."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from .bridge import Bridge, SimilarityWeights, eas_loss, pooled_feature_cosine, total_loss
from .config import RunConfig
from .denoisers import AudioDenoiser, TextEmbedding, VideoDenoiser
from .schedule import ddim_step, forward_sample, make_linear_schedule, noise_estimation_loss

# Each component is initialized from its own seed so that switching the bridge
# or the alignment head on or off never perturbs the other components' weights.
_COMPONENT_SEEDS = {"audio": 1, "video": 2, "bridge": 3, "weights": 4}


def _build(seed: int, component: str, factory):
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed * 1009 + _COMPONENT_SEEDS[component])
        return factory()


@dataclass
class StepOutput:
    eps_a: torch.Tensor
    eps_v: torch.Tensor
    f_a: torch.Tensor
    f_v: torch.Tensor


class AudibleVideoDiffusion(nn.Module):
    def __init__(self, cfg: RunConfig):
        super().__init__()
        self.cfg = cfg
        self.schedule = make_linear_schedule(cfg.T, cfg.beta_start, cfg.beta_end)
        kw = dict(width=cfg.width, text_dim=cfg.text_dim, groups=cfg.groups, heads=cfg.heads)
        self.audio = _build(cfg.seed, "audio", lambda: AudioDenoiser(**kw))
        self.video = _build(cfg.seed, "video", lambda: VideoDenoiser(**kw))
        self.bridge = (
            _build(cfg.seed, "bridge", lambda: Bridge(cfg.width, cfg.width, cfg.heads)) if cfg.bridge else None
        )
        self.weights = (
            _build(cfg.seed, "weights", lambda: SimilarityWeights(cfg.width, cfg.width))
            if cfg.eas_lambda > 0
            else None
        )

    def step(self, z_a_t: torch.Tensor, z_v_t: torch.Tensor, t, c: TextEmbedding) -> StepOutput:
        """Both denoisers at timestep t; f_a/f_v are the post-bridge bottleneck tokens."""
        f_a, st_a = self.audio.encode(z_a_t, t, c)
        f_v, st_v = self.video.encode(z_v_t, t, c)
        if self.bridge is not None:
            f_a, f_v = self.bridge(f_a, f_v)
        return StepOutput(self.audio.decode(f_a, st_a), self.video.decode(f_v, st_v), f_a, f_v)

    def losses(self, z_a0, z_v0, c: TextEmbedding, t: int, eps_a, eps_v) -> dict[str, torch.Tensor]:
        """Training objective at one timestep shared by both streams."""
        z_a_t = forward_sample(z_a0, t, eps_a, self.schedule)
        z_v_t = forward_sample(z_v0, t, eps_v, self.schedule)
        out = self.step(z_a_t, z_v_t, t, c)
        l_a = noise_estimation_loss(out.eps_a, eps_a)
        l_v = noise_estimation_loss(out.eps_v, eps_v)
        l_diff = l_a + l_v
        if self.weights is not None:
            l_eas = eas_loss(out.f_a, out.f_v, self.weights, self.cfg.tau, self.cfg.eas_mode)
            total = total_loss(l_diff, l_eas, self.cfg.eas_lambda)
        else:
            l_eas = torch.zeros((), dtype=l_diff.dtype)
            total = l_diff
        return {"l_a": l_a, "l_v": l_v, "l_diff": l_diff, "l_eas": l_eas, "total": total}

    @torch.no_grad()
    def sample(
        self,
        c: TextEmbedding,
        audio_shape: tuple[int, ...],
        video_shape: tuple[int, ...],
        steps: int = 50,
        generator: torch.Generator | None = None,
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """Deterministic DDIM from Gaussian noise; shapes include the batch dimension."""
        z_a = torch.randn(audio_shape, generator=generator)
        z_v = torch.randn(video_shape, generator=generator)
        ts = self.schedule.ddim_timesteps(steps)
        for t, t_prev in zip(ts, ts[1:] + [0]):
            out = self.step(z_a, z_v, t, c)
            z_a = ddim_step(z_a, out.eps_a, t, t_prev, self.schedule)
            z_v = ddim_step(z_v, out.eps_v, t, t_prev, self.schedule)
        return z_a, z_v

    @torch.no_grad()
    def feature_alignment(self, z_a0, z_v0, c: TextEmbedding, timesteps, generator=None) -> torch.Tensor:
        """Mean pooled cosine between bridged audio and video features over noisy copies."""
        scores = []
        for t in timesteps:
            eps_a = torch.randn(z_a0.shape, generator=generator)
            eps_v = torch.randn(z_v0.shape, generator=generator)
            out = self.step(
                forward_sample(z_a0, t, eps_a, self.schedule), forward_sample(z_v0, t, eps_v, self.schedule), t, c
            )
            scores.append(pooled_feature_cosine(out.f_a, out.f_v))
        return torch.stack(scores).mean(0)
