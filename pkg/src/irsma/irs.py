"""IRS phase configurations, cascade-channel algebra and codebook quantization.

Phases are carried as a column vector ``v = [e^{j theta_1}, ..., e^{j theta_N}, 1]``.
The combined channel of user ``k`` is ``z_k^T v`` with
``z_k = [conj(r_k) * g, h_k]``, so ``|z_k^T v|^2 = Tr(V M_k)`` for the lifted
``V = v v^H`` and ``M_k = conj(z_k) z_k^T``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import ChannelBatch, ChannelState

__all__ = [
    "PhaseConfig",
    "CascadeMatrix",
    "codebook",
    "wrap_phase",
    "circular_distance",
    "quantize",
    "quantize_angles",
    "build_cascade",
    "effective_gain",
    "combined_channel",
    "batch_gains",
    "random_phases",
]

TWO_PI = 2.0 * np.pi


def wrap_phase(theta):
    out = np.mod(theta, TWO_PI)
    # mod can round tiny negatives up to exactly 2*pi
    return np.where(out >= TWO_PI, 0.0, out)


def circular_distance(a, b):
    d = np.abs(np.mod(np.asarray(a) - np.asarray(b), TWO_PI))
    return np.minimum(d, TWO_PI - d)


def codebook(levels: int) -> np.ndarray:
    if levels < 1:
        raise ValueError("quantization needs at least one bit")
    return np.arange(2 ** levels) * (TWO_PI / 2 ** levels)


@dataclass(frozen=True)
class PhaseConfig:
    """Reflection phases in ``[0, 2*pi)``; ``levels=None`` means continuous."""

    theta: np.ndarray
    levels: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "theta", wrap_phase(np.asarray(self.theta, dtype=float)))
        if self.levels is not None:
            cb = codebook(self.levels)
            if self.theta.size and np.max(np.min(circular_distance(self.theta[..., None], cb), axis=-1)) > 1e-9:
                raise ValueError("phase not on the codebook")

    @property
    def num_elements(self) -> int:
        return self.theta.shape[-1]

    @property
    def u(self) -> np.ndarray:
        return np.exp(1j * self.theta)

    @property
    def u_bar(self) -> np.ndarray:
        return np.concatenate([self.u, np.ones(self.theta.shape[:-1] + (1,))], axis=-1)

    @classmethod
    def from_vector(cls, v: np.ndarray, levels: int | None = None) -> "PhaseConfig":
        """Phases of a lifted vector ``v`` (length N+1), normalized so the last entry is 1."""
        v = np.asarray(v)
        ref = v[-1] if abs(v[-1]) > 0 else 1.0
        theta = np.angle(v[:-1] * np.conj(ref))
        cfg = cls(theta)
        return quantize(cfg, levels) if levels is not None else cfg


@dataclass(frozen=True)
class CascadeMatrix:
    z: np.ndarray  # (N+1,)

    def gram(self) -> np.ndarray:
        """Hermitian ``M`` with ``v^H M v = |z^T v|^2``."""
        return np.outer(np.conj(self.z), self.z)

    def combined(self, phases: PhaseConfig) -> complex:
        return complex(self.z @ phases.u_bar)


def quantize_angles(theta, levels: int) -> np.ndarray:
    cb = codebook(levels)
    dist = circular_distance(np.asarray(theta)[..., None], cb)
    # argmin keeps the first minimum, i.e. the smaller codebook phase on ties
    return cb[np.argmin(dist, axis=-1)]


def quantize(phases: PhaseConfig, levels: int) -> PhaseConfig:
    """Snap every phase to the nearest ``2**levels``-point codebook entry (circular metric)."""
    return PhaseConfig(quantize_angles(phases.theta, levels), levels)


def random_phases(rng: np.random.Generator, num_elements: int, levels: int | None) -> PhaseConfig:
    cfg = PhaseConfig(rng.uniform(0.0, TWO_PI, size=num_elements))
    return quantize(cfg, levels) if levels is not None else cfg


def build_cascade(state: ChannelState, user: int) -> CascadeMatrix:
    """Cascade vector of ``user`` (1 or 2)."""
    if user not in (1, 2):
        raise ValueError("user must be 1 or 2")
    k = user - 1
    z = np.concatenate([np.conj(state.r[k]) * state.g, [state.h[k]]])
    return CascadeMatrix(z)


def combined_channel(h, g, r, theta) -> np.ndarray:
    """``h_k + sum_n conj(r_kn) g_n e^{j theta_n}`` for both users, batched.

    Shapes: ``h (..., 2)``, ``g (..., N)``, ``r (..., 2, N)``,
    ``theta (..., N)`` or ``(..., 2, N)`` for per-user configurations.
    """
    u = np.exp(1j * np.asarray(theta))
    if u.ndim == np.ndim(g):
        u = u[..., None, :]
    return h + np.sum(np.conj(r) * g[..., None, :] * u, axis=-1)


def effective_gain(state: ChannelState, phases: PhaseConfig, user: int, noise_power: float) -> float:
    """Combined-channel power over noise, ``|h_k + r_k^H Theta g|^2 / sigma^2``."""
    if noise_power <= 0:
        raise ValueError("noise_power must be positive")
    return abs(build_cascade(state, user).combined(phases)) ** 2 / noise_power


def batch_gains(batch: ChannelBatch, theta, noise_power: float) -> np.ndarray:
    """Per-state gains ``(F, 2)`` for phases ``theta`` of shape ``(N,)``, ``(F, N)`` or ``(F, 2, N)``."""
    c = combined_channel(batch.h, batch.g, batch.r, theta)
    return np.abs(c) ** 2 / noise_power
