"""Rectified-flow core: straight-path interpolation, velocity regression
loss, and Euler sampling, generic over any token grid.

The path is z_t = (1-t) z0 + t eps, so the regression target is the constant
velocity eps - z0. Sampling runs the ODE backwards along a strictly
descending time grid from t=1 to t=0 with signed steps dt = t_next - t < 0;
with a velocity field pointing data -> noise this integrates noise back to
data, and the single-datapoint closed form v(z, t) = (z - z0*)/t recovers
z0* in one Euler step, which pins the sign convention.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from semflow.errors import ConfigError, NumericError, SamplingError
from semflow.numerics import Rng, Tensor


@dataclass
class ForwardPath:
    """One interpolation sample: data grid, noise grid, and time."""

    z0: np.ndarray
    eps: np.ndarray
    t: float

    def z_t(self) -> np.ndarray:
        return forward_interpolate(self.z0, self.eps, self.t)

    def velocity(self) -> np.ndarray:
        return cfm_target(self.z0, self.eps)


@dataclass
class SamplerConfig:
    num_steps: int = 50
    guidance: None = None  # reserved; no guidance mechanism is defined

    def timesteps(self) -> np.ndarray:
        """Strictly decreasing knots 1 -> 0, num_steps intervals."""
        if self.num_steps < 1:
            raise ConfigError(f"num_steps must be >= 1, got {self.num_steps}")
        return np.linspace(1.0, 0.0, self.num_steps + 1)


def forward_interpolate(z0: np.ndarray, eps: np.ndarray, t: float) -> np.ndarray:
    if not 0.0 <= t <= 1.0:
        raise ConfigError(f"interpolation time {t} outside [0, 1]")
    if z0.shape != eps.shape:
        raise ConfigError(f"z0 shape {z0.shape} != eps shape {eps.shape}")
    return (1.0 - t) * z0 + t * eps


def cfm_target(z0: np.ndarray, eps: np.ndarray) -> np.ndarray:
    """Path velocity; constant in t for the straight path."""
    if z0.shape != eps.shape:
        raise ConfigError(f"z0 shape {z0.shape} != eps shape {eps.shape}")
    return eps - z0


def draw_noise(batch: list, rng: Rng) -> list[tuple[float, np.ndarray]]:
    """One (t, eps) pair per batch element, t uniform on [0, 1]."""
    return [
        (float(rng.uniform()), rng.normal(np.asarray(z0).shape))
        for z0, _cond in batch
    ]


def cfm_loss(model, batch: list, rng: Rng | None = None,
             noise: list[tuple[float, np.ndarray]] | None = None) -> Tensor:
    """Velocity-matching loss, mean squared error over every grid element.

    `model(z_t, t, cond) -> Tensor` with z_t a plain array; gradients flow
    into whatever parameters the model closure holds, never into the data.
    `noise` fixes the per-element (t, eps) draws; otherwise they come from
    `rng`. Pairing draws with elements explicitly is what makes the loss
    invariant under joint permutation of batch and draws.
    """
    if not batch:
        raise ConfigError("cfm_loss needs a non-empty batch")
    if noise is None:
        if rng is None:
            raise ConfigError("cfm_loss needs either rng or explicit noise")
        noise = draw_noise(batch, rng)
    if len(noise) != len(batch):
        raise ConfigError(f"{len(noise)} noise draws for {len(batch)} elements")
    total = None
    for (z0, cond), (t, eps) in zip(batch, noise):
        z0 = np.asarray(z0, dtype=np.float64)
        z_t = forward_interpolate(z0, eps, t)
        pred = model(z_t, t, cond)
        diff = pred - Tensor(cfm_target(z0, eps))
        term = (diff * diff).mean()
        total = term if total is None else total + term
    loss = total * (1.0 / len(batch))
    if not np.isfinite(loss.data):
        ts = [round(t, 4) for t, _ in noise]
        raise NumericError(f"non-finite flow loss over batch of {len(batch)} (t draws {ts})")
    return loss


def euler_sample(model, cond, cfg: SamplerConfig, rng: Rng,
                 shape: tuple[int, ...]) -> np.ndarray:
    """Integrate z' = v(z, t) from t=1 (pure noise) down to t=0."""
    knots = cfg.timesteps()
    z = rng.normal(shape)
    for k in range(cfg.num_steps):
        t, t_next = knots[k], knots[k + 1]
        v = model(z, float(t), cond)
        v = v.data if isinstance(v, Tensor) else np.asarray(v)
        z = z + v * (t_next - t)
        if not np.all(np.isfinite(z)):
            raise SamplingError(f"non-finite state at sampler step {k}", step=k)
    return z
