"""Synthetic environmental data: deterministic per-channel generators."""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field


@dataclass(frozen=True)
class ChannelSpec:
    """Baseline + sinusoid + seeded Gaussian noise for one sensed quantity."""

    baseline: float
    amplitude: float = 0.0
    period_s: float = 86400.0
    noise_sigma: float = 0.0


DEFAULT_CHANNELS: dict[str, ChannelSpec] = {
    "temperature": ChannelSpec(baseline=21.0),
    "humidity": ChannelSpec(baseline=40.0),
    "pressure": ChannelSpec(baseline=1013.0),
    "gas": ChannelSpec(baseline=50000.0),
}


@dataclass(frozen=True)
class EnvironmentModel:
    channels: dict[str, ChannelSpec] = field(
        default_factory=lambda: dict(DEFAULT_CHANNELS)
    )
    seed: int = 0

    def value(self, name: str, t_s: float) -> float:
        spec = self.channels[name]
        v = spec.baseline + spec.amplitude * math.sin(2.0 * math.pi * t_s / spec.period_s)
        if spec.noise_sigma > 0:
            # String seeding keeps the draw a pure function of (seed, name, t)
            # and stable across processes (unlike hash()).
            rng = random.Random(f"{self.seed}|{name}|{t_s!r}")
            v += rng.gauss(0.0, spec.noise_sigma)
        return v


@dataclass(frozen=True)
class SensorSample:
    timestamp_s: float
    temperature: float
    humidity: float
    pressure: float
    gas: float


def read_sensors(env: EnvironmentModel, t_s: float) -> SensorSample:
    """One synthetic all-in-one reading; identical (env, t) gives identical values."""
    return SensorSample(
        timestamp_s=t_s,
        temperature=env.value("temperature", t_s),
        humidity=env.value("humidity", t_s),
        pressure=env.value("pressure", t_s),
        gas=env.value("gas", t_s),
    )
