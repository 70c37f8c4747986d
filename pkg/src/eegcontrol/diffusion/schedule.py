"""Forward Gaussian noising process."""

from __future__ import annotations

from typing import Union

import torch

TimeLike = Union[int, torch.Tensor]


class NoiseSchedule:
    """Variance schedule over steps ``1..T``; step 0 is the clean latent.

    ``alphas_cumprod[t]`` is the cumulative signal fraction, with
    ``alphas_cumprod[0] == 1`` so that noising at t=0 is the identity.
    ``kind="scaled_linear"`` is linear in ``sqrt(beta)``, as used by pretrained LDM weights.
    """

    KINDS = ("linear", "scaled_linear")

    def __init__(self, num_steps: int = 1000, beta_start: float = 1e-4, beta_end: float = 0.02,
                 kind: str = "linear"):
        if kind not in self.KINDS:
            raise ValueError(f"unknown schedule kind {kind!r}")
        if num_steps < 1:
            raise ValueError("num_steps must be >= 1")
        if not 0.0 < beta_start <= beta_end < 1.0:
            raise ValueError("need 0 < beta_start <= beta_end < 1")
        self.num_steps = int(num_steps)
        self.beta_start = float(beta_start)
        self.beta_end = float(beta_end)
        self.kind = kind
        if kind == "linear":
            betas = torch.linspace(beta_start, beta_end, num_steps, dtype=torch.float64)
        else:
            betas = torch.linspace(beta_start ** 0.5, beta_end ** 0.5, num_steps, dtype=torch.float64) ** 2
        self.betas = torch.cat([torch.zeros(1, dtype=torch.float64), betas])
        self.alphas_cumprod = torch.cumprod(1.0 - self.betas, dim=0)

    @property
    def T(self) -> int:
        return self.num_steps

    def to_dict(self) -> dict:
        d = {"num_steps": self.num_steps, "beta_start": self.beta_start, "beta_end": self.beta_end}
        if self.kind != "linear":
            d["kind"] = self.kind
        return d

    def check_t(self, t: TimeLike) -> torch.Tensor:
        tt = torch.as_tensor(t)
        if tt.is_floating_point():
            if not torch.equal(tt, tt.round()):
                raise ValueError("timesteps must be integers")
            tt = tt.long()
        if tt.numel() and (int(tt.min()) < 0 or int(tt.max()) > self.num_steps):
            raise ValueError(f"timestep out of range [0, {self.num_steps}]: {tt.tolist()}")
        return tt.long()

    def coefficients(self, t: TimeLike, dtype=torch.float32):
        """Return ``(sqrt(abar_t), sqrt(1 - abar_t))`` for integer step(s) ``t``."""
        tt = self.check_t(t)
        ab = self.alphas_cumprod[tt]
        return ab.sqrt().to(dtype), (1.0 - ab).sqrt().to(dtype)

    def add_noise(self, z: torch.Tensor, t: TimeLike, epsilon: torch.Tensor) -> torch.Tensor:
        if epsilon.shape != z.shape:
            raise ValueError(f"epsilon shape {tuple(epsilon.shape)} != latent shape {tuple(z.shape)}")
        a, s = self.coefficients(t, z.dtype)
        if a.dim() == 1:
            shape = (-1,) + (1,) * (z.dim() - 1)
            a, s = a.view(shape), s.view(shape)
        return a * z + s * epsilon

    def sampling_timesteps(self, steps: int) -> list:
        """Evenly spaced descending steps from T to 1 for a ``steps``-step sampler."""
        if steps < 1:
            raise ValueError("steps must be >= 1")
        steps = min(steps, self.num_steps)
        ts = torch.linspace(self.num_steps, 1, steps, dtype=torch.float64).round().long().tolist()
        return list(dict.fromkeys(ts))


def add_noise(z: torch.Tensor, t: TimeLike, epsilon: torch.Tensor, schedule: NoiseSchedule) -> torch.Tensor:
    return schedule.add_noise(z, t, epsilon)
