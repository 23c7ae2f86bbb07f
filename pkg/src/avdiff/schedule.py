"""
Noise schedules and the closed-form diffusion algebra shared by both streams.

Timesteps are 1-indexed: t in {1..T}, and t = 0 denotes clean data
(alpha_bar_0 = 1).  Prediction target is the injected noise (epsilon).

    z_t      = sqrt(abar_t) z_0 + sqrt(1 - abar_t) eps
    mu_theta = (z_t - beta_t / sqrt(1 - abar_t) eps_pred) / sqrt(alpha_t)
    var_t    = beta_t (1 - abar_{t-1}) / (1 - abar_t)

All coefficients are evaluated in float64 and the result is cast back to the
promoted dtype of the tensor inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch


@dataclass(frozen=True)
class NoiseSchedule:
    """Tables of beta_t and alpha_bar_t for t = 1..T (stored 0-indexed)."""

    beta: np.ndarray
    alpha_bar: np.ndarray = field(init=False)

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=np.float64)
        if beta.ndim != 1 or beta.size < 1:
            raise ValueError("beta must be a non-empty 1-D sequence")
        if not np.all((beta > 0) & (beta < 1)):
            raise ValueError("every beta_t must lie in (0, 1)")
        beta.setflags(write=False)
        alpha_bar = np.cumprod(1.0 - beta)
        alpha_bar.setflags(write=False)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "alpha_bar", alpha_bar)

    @property
    def T(self) -> int:
        return int(self.beta.size)

    def check_t(self, t: int, allow_zero: bool = False) -> int:
        lo = 0 if allow_zero else 1
        t = int(t)
        if not lo <= t <= self.T:
            raise ValueError(f"timestep {t} outside [{lo}, {self.T}]")
        return t

    def abar(self, t: int) -> float:
        """alpha_bar at 1-indexed t; abar(0) == 1."""
        t = self.check_t(t, allow_zero=True)
        return 1.0 if t == 0 else float(self.alpha_bar[t - 1])

    def beta_at(self, t: int) -> float:
        return float(self.beta[self.check_t(t) - 1])

    def posterior_variance(self, t: int) -> float:
        """beta_tilde_t, the variance of q(z_{t-1} | z_t, z_0)."""
        t = self.check_t(t)
        return self.beta_at(t) * (1.0 - self.abar(t - 1)) / (1.0 - self.abar(t))

    def ddim_timesteps(self, steps: int) -> list[int]:
        """Descending, uniformly strided subset of [1, T] with `steps` entries."""
        if steps < 1:
            raise ValueError("steps must be >= 1")
        steps = min(steps, self.T)
        ts = np.unique(np.round(np.linspace(1, self.T, steps)).astype(int))
        return [int(t) for t in ts[::-1]]

    def to_dict(self) -> dict:
        return {"beta": self.beta.tolist()}


def make_linear_schedule(T: int = 1000, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    """Linear beta from beta_start (t=1) to beta_end (t=T), both endpoints inclusive."""
    if int(T) != T or T < 1:
        raise ValueError(f"T must be a positive integer, got {T}")
    if not 0 < beta_start <= beta_end < 1:
        raise ValueError(
            f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"
        )
    if T == 1:
        beta = np.array([beta_start], dtype=np.float64)
    else:
        beta = np.linspace(beta_start, beta_end, int(T), dtype=np.float64)
    return NoiseSchedule(beta)


def _same_shape(a: torch.Tensor, b: torch.Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{what}: shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")


def _out_dtype(*xs: torch.Tensor) -> torch.dtype:
    dtype = xs[0].dtype
    for x in xs[1:]:
        dtype = torch.promote_types(dtype, x.dtype)
    return dtype


def forward_sample(z0: torch.Tensor, t: int, eps: torch.Tensor, sched: NoiseSchedule) -> torch.Tensor:
    """Draw z_t ~ q(z_t | z_0) in closed form, with the noise passed in explicitly."""
    _same_shape(z0, eps, "forward_sample")
    abar = sched.abar(sched.check_t(t))
    dtype = _out_dtype(z0, eps)
    z = np.sqrt(abar) * z0.double() + np.sqrt(1.0 - abar) * eps.double()
    return z.to(dtype)


def predict_x0(z_t: torch.Tensor, eps_pred: torch.Tensor, t: int, sched: NoiseSchedule) -> torch.Tensor:
    _same_shape(z_t, eps_pred, "predict_x0")
    abar = sched.abar(sched.check_t(t))
    x0 = (z_t.double() - np.sqrt(1.0 - abar) * eps_pred.double()) / np.sqrt(abar)
    return x0.to(_out_dtype(z_t, eps_pred))


def posterior_mean(z_t: torch.Tensor, eps_pred: torch.Tensor, t: int, sched: NoiseSchedule) -> torch.Tensor:
    _same_shape(z_t, eps_pred, "posterior_mean")
    t = sched.check_t(t)
    beta = sched.beta_at(t)
    abar = sched.abar(t)
    mu = (z_t.double() - beta / np.sqrt(1.0 - abar) * eps_pred.double()) / np.sqrt(1.0 - beta)
    return mu.to(_out_dtype(z_t, eps_pred))


def posterior_step(
    z_t: torch.Tensor,
    eps_pred: torch.Tensor,
    t: int,
    sched: NoiseSchedule,
    noise: torch.Tensor | None = None,
) -> torch.Tensor:
    """
    One DDPM ancestral step z_t -> z_{t-1} with fixed variance beta_tilde_t.

    The noise term is dropped at t = 1 (terminal step) and when `noise` is None.
    """
    t = sched.check_t(t)
    mu = posterior_mean(z_t, eps_pred, t, sched)
    if noise is None or t == 1:
        return mu
    _same_shape(z_t, noise, "posterior_step")
    sigma = np.sqrt(sched.posterior_variance(t))
    return (mu.double() + sigma * noise.double()).to(_out_dtype(mu, noise))


def ddim_step(
    z_t: torch.Tensor, eps_pred: torch.Tensor, t: int, t_prev: int, sched: NoiseSchedule
) -> torch.Tensor:
    """Deterministic (eta = 0) DDIM update from t to t_prev < t."""
    t = sched.check_t(t)
    t_prev = sched.check_t(t_prev, allow_zero=True)
    if t_prev >= t:
        raise ValueError(f"t_prev ({t_prev}) must be smaller than t ({t})")
    _same_shape(z_t, eps_pred, "ddim_step")
    abar_t = sched.abar(t)
    abar_p = sched.abar(t_prev)
    e = eps_pred.double()
    x0 = (z_t.double() - np.sqrt(1.0 - abar_t) * e) / np.sqrt(abar_t)
    z = np.sqrt(abar_p) * x0 + np.sqrt(1.0 - abar_p) * e
    return z.to(_out_dtype(z_t, eps_pred))


def noise_estimation_loss(eps_pred: torch.Tensor, eps_true: torch.Tensor) -> torch.Tensor:
    """Mean squared error over all elements (differentiable)."""
    _same_shape(eps_pred, eps_true, "noise_estimation_loss")
    return ((eps_pred - eps_true) ** 2).mean()


def multimodal_diffusion_loss(audio_terms, video_terms) -> torch.Tensor:
    """
    L_a + L_v.  Each argument is either an already-reduced scalar loss or an
    (eps_pred, eps_true) pair for that stream.
    """

    def _reduce(terms):
        if isinstance(terms, (tuple, list)):
            return noise_estimation_loss(*terms)
        return torch.as_tensor(terms)

    return _reduce(audio_terms) + _reduce(video_terms)
