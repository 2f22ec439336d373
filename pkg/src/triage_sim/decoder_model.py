"""Finite decoder pool with power-law decode durations and lognormal jitter.

Durations are normalized so a degree-0 slice at speed 1.0 takes exactly one
layer-time: each unresolved neighbor adds one window-buffer slab of relative
thickness buffer_b/d to the decode volume, and volume enters through
``volume ** alpha``.  Speed ``r`` divides the result, so r > 1 means the
decoder outpaces syndrome generation.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence


class PoolAssignmentError(RuntimeError):
    """A task was assigned to a busy decoder; signals a scheduler bug."""


@dataclass(frozen=True)
class LatencyModel:
    alpha: float = 1.17
    d: int = 9
    buffer_b: float = 4.0
    # "inverse": speed divides the decode time (r > 1 outpaces generation).
    # "tau_ratio": speed IS the decode/generation time ratio (r < 1 is fast),
    # matching hardware design-space axes stated that way.
    speed_mode: str = "inverse"

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.d < 1:
            raise ValueError("code distance must be >= 1")
        if not (0 <= self.buffer_b <= self.d):
            raise ValueError("buffer_b must be within [0, d]")
        if self.speed_mode not in ("inverse", "tau_ratio"):
            raise ValueError("speed_mode must be 'inverse' or 'tau_ratio'")

    @property
    def buffer_ratio(self) -> float:
        return self.buffer_b / self.d


def relative_volume(degree: int, lm: LatencyModel) -> float:
    return 1.0 + degree * lm.buffer_ratio


def _apply_speed(volume_cost: float, lm: LatencyModel, speed: float) -> float:
    if lm.speed_mode == "tau_ratio":
        return volume_cost * speed
    return volume_cost / speed


def decode_duration(degree: int, lm: LatencyModel, speed: float) -> float:
    """Deterministic decode time of one slice, in layer-time units."""
    if degree < 0:
        raise ValueError("degree must be non-negative")
    return _apply_speed(relative_volume(degree, lm) ** lm.alpha, lm, speed)


def block_decode_duration(degrees: Iterable[int], lm: LatencyModel, speed: float) -> float:
    """Monolithic block decode: summed member volumes through the power law."""
    total = sum(relative_volume(g, lm) for g in degrees)
    return _apply_speed(total**lm.alpha, lm, speed)


@dataclass(frozen=True)
class JitterModel:
    enabled: bool = False
    sigma_base: float = 0.3447
    alpha_d: float = 0.0041
    alpha_p: float = 15.03
    p_ref: float = 1e-3
    sigma_min: float = 0.30
    sigma_max: float = 0.70
    p_phys: float = 1e-3
    sigma_override: float | None = None


def sigma(d: int, p: float, jm: JitterModel) -> float:
    """Calibrated lognormal scale: clamped affine-log in distance and error rate."""
    if d < 3:
        raise ValueError("sigma calibration requires d >= 3")
    if p <= 0:
        raise ValueError("physical error rate must be positive")
    raw = jm.sigma_base + jm.alpha_d * math.log2(d / 5) + jm.alpha_p * (p - jm.p_ref)
    return min(max(raw, jm.sigma_min), jm.sigma_max)


def sample_jitter_factor(sig: float, rng: random.Random) -> float:
    """Mean-preserving multiplicative factor exp(-sigma^2/2 + sigma*z)."""
    if sig < 0:
        raise ValueError("sigma must be non-negative")
    z = rng.gauss(0.0, 1.0)
    return math.exp(-0.5 * sig * sig + sig * z)


@dataclass(slots=True)
class DecodeTask:
    id: int
    slices: tuple
    decoder: int
    t_start: float
    t_finish: float
    kind: str
    awaited_id: int | None = None
    cancelled: bool = False
    validated: bool = False
    finished: bool = False


class DecoderPool:
    """M decoders with per-decoder relative speeds and busy-until stamps."""

    def __init__(self, speeds: Sequence[float]):
        if not speeds:
            raise ValueError("pool needs at least one decoder")
        if any(r <= 0 for r in speeds):
            raise ValueError("decoder speeds must be positive")
        self.speeds = tuple(float(r) for r in speeds)
        self.busy_until = [0.0] * len(self.speeds)

    @property
    def m(self) -> int:
        return len(self.speeds)

    @property
    def mean_speed(self) -> float:
        return sum(self.speeds) / len(self.speeds)

    def num_free(self, t: float) -> int:
        return sum(1 for b in self.busy_until if b <= t)

    def free_indices(self, t: float) -> list[int]:
        return [i for i, b in enumerate(self.busy_until) if b <= t]

    def first_free(self, t: float) -> int | None:
        for i, b in enumerate(self.busy_until):
            if b <= t:
                return i
        return None

    def assign(self, index: int, t_start: float, t_finish: float) -> None:
        if self.busy_until[index] > t_start:
            raise PoolAssignmentError(
                f"decoder {index} busy until {self.busy_until[index]:.6g}, assigned at {t_start:.6g}"
            )
        if t_finish <= t_start:
            raise ValueError("task must finish strictly after it starts")
        self.busy_until[index] = t_finish

    def snapshot(self) -> "DecoderPool":
        clone = DecoderPool(self.speeds)
        clone.busy_until = list(self.busy_until)
        return clone


def uniform_pool(m: int, speed: float) -> DecoderPool:
    return DecoderPool([speed] * m)
