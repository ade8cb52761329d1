"""Environment-condition sampling.

Every rendered view is parameterized by an EnvCondition: camera pose on a
viewing sphere, solid background color, additive/multiplicative lighting,
per-channel color shifts and sensor noise. Bounds follow the default
distribution below; all marginals are uniform and independent. Two
brightness presets narrow the multiplicative lighting range to its upper
(bright) or lower (dark) half.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

__all__ = [
    "EnvCondition", "EnvDistribution", "ViewpointRegime",
    "sample_env", "sample_viewpoint", "SIDE_AXIS_AZIMUTH",
    "BRIGHT", "DARK",
]

# the vehicle's length runs along +x, so the side profile is seen from +y
SIDE_AXIS_AZIMUTH = np.pi / 2.0

BRIGHT = "bright"
DARK = "dark"


@dataclass(frozen=True)
class EnvCondition:
    camera_distance: float          # object-lengths from the origin
    translation: tuple[float, float]  # image-plane shift, scene units
    rotation: tuple[float, float]   # (azimuth [0,2pi), elevation [0, elev_max])
    background_rgb: tuple[float, float, float]
    light_add: float
    light_mul: float
    channel_add: tuple[float, float, float]
    channel_mul: tuple[float, float, float]
    noise_std: float


def neutral_env(distance: float = 2.5, azimuth: float = 0.6, elevation: float = 0.4,
                background=(0.35, 0.35, 0.35)) -> EnvCondition:
    """Identity photometrics; handy for tests and previews."""
    return EnvCondition(distance, (0.0, 0.0), (azimuth, elevation), tuple(background),
                        0.0, 1.0, (0.0, 0.0, 0.0), (1.0, 1.0, 1.0), 0.0)


@dataclass(frozen=True)
class EnvDistribution:
    """Min/max bounds per environment parameter (all marginals uniform)."""
    camera_distance: tuple[float, float] = (1.0, 6.0)
    translation: tuple[float, float] = (-0.05, 0.05)
    background: tuple[float, float] = (0.1, 1.0)
    light_add: tuple[float, float] = (-0.15, 0.15)
    light_mul: tuple[float, float] = (0.5, 2.0)
    channel_add: tuple[float, float] = (-0.15, 0.15)
    channel_mul: tuple[float, float] = (0.7, 1.3)
    noise_std: tuple[float, float] = (0.0, 0.1)
    elev_max: float = np.deg2rad(75.0)

    def __post_init__(self):
        for name in ("camera_distance", "translation", "background", "light_add",
                     "light_mul", "channel_add", "channel_mul", "noise_std"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"EnvDistribution.{name}: min {lo} > max {hi}")
        if not 0.0 <= self.elev_max <= np.pi / 2:
            raise ValueError("elev_max must be in [0, pi/2]")

    def brightness_preset(self, preset: str | None) -> "EnvDistribution":
        """Narrow the multiplicative lighting range to its bright or dark half."""
        if preset is None:
            return self
        lo, hi = self.light_mul
        mid = 0.5 * (lo + hi)
        if preset == BRIGHT:
            return replace(self, light_mul=(mid, hi))
        if preset == DARK:
            return replace(self, light_mul=(lo, mid))
        raise ValueError(f"unknown brightness preset {preset!r}")


@dataclass(frozen=True)
class ViewpointRegime:
    kind: str = "free"              # "free" | "restricted"
    alpha: float = np.deg2rad(120.0)  # full cone width about the side axis

    def __post_init__(self):
        if self.kind not in ("free", "restricted"):
            raise ValueError(f"unknown viewpoint regime {self.kind!r}")
        if not 0.0 < self.alpha < 2 * np.pi:
            raise ValueError("alpha must be in (0, 2*pi)")


def _u(rng: np.random.Generator, bounds: tuple[float, float]) -> float:
    return float(rng.uniform(bounds[0], bounds[1]))


def sample_env(dist: EnvDistribution, preset: str | None,
               rng: np.random.Generator) -> EnvCondition:
    """One draw from the environment distribution, optionally brightness-narrowed."""
    d = dist.brightness_preset(preset)
    return EnvCondition(
        camera_distance=_u(rng, d.camera_distance),
        translation=(_u(rng, d.translation), _u(rng, d.translation)),
        rotation=(float(rng.uniform(0.0, 2 * np.pi)), float(rng.uniform(0.0, d.elev_max))),
        background_rgb=tuple(float(rng.uniform(*d.background)) for _ in range(3)),
        light_add=_u(rng, d.light_add),
        light_mul=_u(rng, d.light_mul),
        channel_add=tuple(float(rng.uniform(*d.channel_add)) for _ in range(3)),
        channel_mul=tuple(float(rng.uniform(*d.channel_mul)) for _ in range(3)),
        noise_std=_u(rng, d.noise_std),
    )


def sample_viewpoint(regime: ViewpointRegime, rng: np.random.Generator,
                     dist: EnvDistribution | None = None) -> tuple[float, float, float]:
    """(azimuth, elevation, distance) for the requested viewing regime.

    Free: azimuth anywhere on the circle. Restricted: azimuth within
    +-alpha/2 of the object's side axis. Elevation and distance are sampled
    from the environment bounds either way.
    """
    d = dist if dist is not None else EnvDistribution()
    if regime.kind == "free":
        azimuth = float(rng.uniform(0.0, 2 * np.pi))
    else:
        half = regime.alpha / 2.0
        azimuth = float(rng.uniform(SIDE_AXIS_AZIMUTH - half, SIDE_AXIS_AZIMUTH + half))
        azimuth %= 2 * np.pi
    elevation = float(rng.uniform(0.0, d.elev_max))
    distance = _u(rng, d.camera_distance)
    return azimuth, elevation, distance


def env_with_viewpoint(env: EnvCondition, viewpoint: tuple[float, float, float]) -> EnvCondition:
    """Replace an EnvCondition's pose with a sampled (azimuth, elevation, distance)."""
    az, el, dist = viewpoint
    return replace(env, rotation=(az, el), camera_distance=dist)
