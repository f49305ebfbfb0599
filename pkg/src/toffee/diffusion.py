"""Shared diffusion machinery.

Epsilon-prediction convention throughout: a denoiser maps (x_t, t, cond) to
the noise estimate. Noise levels are indexed t = 0..T-1 with
x_t = sqrt(abar_t) * x0 + sqrt(1 - abar_t) * eps; start_t = T means pure
noise. The DDIM sampler is the eta=0 deterministic path.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import torch


class ScheduleError(ValueError):
    pass


class SamplingError(RuntimeError):
    pass


@dataclass(frozen=True)
class NoiseSchedule:
    """Forward-process constants. betas is a length-T array in (0, 1)."""

    betas: np.ndarray
    alphas: np.ndarray = field(init=False)
    alpha_bars: np.ndarray = field(init=False)

    def __post_init__(self):
        betas = np.asarray(self.betas, dtype=np.float64)
        if betas.ndim != 1 or betas.size < 1:
            raise ScheduleError("betas must be a 1-D array with at least one entry")
        if not ((betas > 0.0).all() and (betas < 1.0).all()):
            raise ScheduleError("betas must lie strictly in (0, 1)")
        alphas = 1.0 - betas
        alpha_bars = np.cumprod(alphas)
        if not (np.diff(alpha_bars) < 0.0).all():
            raise ScheduleError("alpha_bars must be strictly decreasing")
        object.__setattr__(self, "betas", betas)
        object.__setattr__(self, "alphas", alphas)
        object.__setattr__(self, "alpha_bars", alpha_bars)

    @property
    def T(self) -> int:
        return int(self.betas.size)

    def to_config(self) -> dict:
        return {"T": self.T, "beta_start": float(self.betas[0]), "beta_end": float(self.betas[-1])}


def linear_schedule(T: int = 1000, beta_start: float = 1e-4, beta_end: float = 2e-2) -> NoiseSchedule:
    """Linear beta ramp. Endpoints are checked so abar spans ~1 down to ~0."""
    sched = NoiseSchedule(np.linspace(beta_start, beta_end, T))
    if sched.alpha_bars[0] < 0.99 or sched.alpha_bars[-1] > 0.01:
        raise ScheduleError(
            f"schedule endpoints out of range: abar[0]={sched.alpha_bars[0]:.4f}, "
            f"abar[-1]={sched.alpha_bars[-1]:.6f}"
        )
    return sched


def _coef(sched: NoiseSchedule, t, device, dtype):
    abar = torch.as_tensor(sched.alpha_bars, device=device, dtype=torch.float64)[t]
    sqrt_ab = abar.sqrt().to(dtype)
    sqrt_1mab = (1.0 - abar).sqrt().to(dtype)
    return sqrt_ab, sqrt_1mab


def q_sample(x0: torch.Tensor, t, eps: torch.Tensor, sched: NoiseSchedule) -> torch.Tensor:
    """Forward noising: sqrt(abar_t)*x0 + sqrt(1-abar_t)*eps."""
    if eps.shape != x0.shape:
        raise ValueError(f"eps shape {tuple(eps.shape)} != x0 shape {tuple(x0.shape)}")
    t = torch.as_tensor(t, device=x0.device, dtype=torch.long)
    if (t < 0).any() or (t >= sched.T).any():
        raise ValueError(f"t must be in [0, {sched.T}), got {t}")
    sqrt_ab, sqrt_1mab = _coef(sched, t, x0.device, x0.dtype)
    # broadcast per-sample coefficients over trailing dims
    while sqrt_ab.dim() < x0.dim():
        sqrt_ab = sqrt_ab.unsqueeze(-1)
        sqrt_1mab = sqrt_1mab.unsqueeze(-1)
    return sqrt_ab * x0 + sqrt_1mab * eps


def cfg_combine(eps_cond: torch.Tensor, eps_uncond: torch.Tensor, scale: float) -> torch.Tensor:
    """Classifier-free guidance: eps_uncond + scale * (eps_cond - eps_uncond).

    scale == 1 short-circuits to the conditional prediction so the guided
    path is bit-identical to plain conditional sampling.
    """
    if eps_cond.shape != eps_uncond.shape:
        raise ValueError("eps_cond and eps_uncond shapes differ")
    if scale == 1.0:
        return eps_cond
    if scale == 0.0:
        return eps_uncond
    return eps_uncond + scale * (eps_cond - eps_uncond)


@dataclass
class BlendSpec:
    """Per-step latent blending against a reference image.

    After every sampler update at noise level t, the latent is replaced by
    weights*x + (1-weights)*q_sample(reference, t, noise); the final clean
    output is composited against the reference directly. weights holds 1
    where the sampler's content is kept (the editable region). noise is
    drawn once per record so blending stays deterministic under batching.
    """

    weights: torch.Tensor  # (..., 1, H, W) in {0, 1}
    reference: torch.Tensor  # (..., C, H, W), same batching as the latent
    noise: torch.Tensor  # same shape as reference

    def apply(self, x: torch.Tensor, t: Optional[int], sched: NoiseSchedule) -> torch.Tensor:
        w = self.weights.to(x.dtype)
        if t is None:
            return w * x + (1.0 - w) * self.reference
        t_arg = torch.full(x.shape[:1], t, dtype=torch.long) if x.dim() == 4 else t
        noised = q_sample(self.reference, t_arg, self.noise, sched)
        return w * x + (1.0 - w) * noised


DenoiseFn = Callable[[torch.Tensor, torch.Tensor, bool], torch.Tensor]


@torch.no_grad()
def ddim_sample(
    denoise_fn: DenoiseFn,
    sched: NoiseSchedule,
    *,
    steps: int,
    x_init: torch.Tensor,
    start_t: Optional[int] = None,
    guidance_scale: float = 1.0,
    blend: Optional[BlendSpec] = None,
    clamp_output: bool = True,
) -> torch.Tensor:
    """Deterministic DDIM sampling over a uniform grid of noise levels.

    denoise_fn(x, t_batch, uncond) returns the predicted noise; it is called
    with uncond=True only when guidance_scale != 1. start_t = T starts from
    pure noise in x_init; start_t < T expects x_init = q_sample(x0, start_t);
    start_t = 0 returns x_init untouched.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if steps > sched.T:
        raise ValueError(f"steps={steps} exceeds schedule length T={sched.T}")
    if start_t is None:
        start_t = sched.T
    if not 0 <= start_t <= sched.T:
        raise ValueError(f"start_t must be in [0, {sched.T}], got {start_t}")
    if start_t == 0:
        return x_init

    top = min(start_t, sched.T - 1)
    grid = np.unique(np.linspace(0, top, num=min(steps, top + 1)).round().astype(np.int64))

    x = x_init
    batched = x.dim() == 4
    n = x.shape[0] if batched else 1
    for k in range(len(grid) - 1, -1, -1):
        t = int(grid[k])
        t_batch = torch.full((n,), t, dtype=torch.long, device=x.device)
        x_in = x if batched else x.unsqueeze(0)
        eps = denoise_fn(x_in, t_batch, False)
        if guidance_scale != 1.0:
            eps_uncond = denoise_fn(x_in, t_batch, True)
            eps = cfg_combine(eps, eps_uncond, guidance_scale)
        if not batched:
            eps = eps.squeeze(0)

        abar_t = float(sched.alpha_bars[t])
        x0_hat = (x - np.sqrt(1.0 - abar_t) * eps) / np.sqrt(abar_t)
        if k == 0:
            x = x0_hat
            if blend is not None:
                x = blend.apply(x, None, sched)
        else:
            t_prev = int(grid[k - 1])
            abar_prev = float(sched.alpha_bars[t_prev])
            x = np.sqrt(abar_prev) * x0_hat + np.sqrt(1.0 - abar_prev) * eps
            if blend is not None:
                x = blend.apply(x, t_prev, sched)
        if not torch.isfinite(x).all():
            raise SamplingError(f"non-finite latent after denoising step at t={t}")

    if clamp_output:
        x = x.clamp(-1.0, 1.0)
    return x


def diffusion_train_step(
    model: torch.nn.Module,
    x0: torch.Tensor,
    cond: dict,
    sched: NoiseSchedule,
    optimizer: torch.optim.Optimizer,
    generator: torch.Generator,
) -> float:
    """One epsilon-prediction MSE step. Returns the scalar loss."""
    if x0.shape[0] < 1:
        raise ValueError("empty batch")
    t = torch.randint(0, sched.T, (x0.shape[0],), generator=generator)
    eps = torch.randn(x0.shape, generator=generator, dtype=x0.dtype)
    x_t = q_sample(x0, t, eps, sched)
    eps_hat = model(x_t, t, **cond)
    loss = torch.mean((eps_hat - eps) ** 2)
    if not torch.isfinite(loss):
        raise SamplingError(f"training loss is non-finite: {loss.item()}")
    optimizer.zero_grad()
    loss.backward()
    optimizer.step()
    from . import training  # local import to avoid a cycle

    training.STEP_COUNTER.increment()
    return float(loss.detach())
