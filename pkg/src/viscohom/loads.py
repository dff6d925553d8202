"""Body-force fields ``f(x, t) = amplitude * shape(x) * profile(t)``."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

SHAPES = ("constant", "sine", "curl_bump")
PROFILES = ("constant", "ramp", "smooth", "sin", "pulse")


def _profile(kind: str, t, period: float):
    t = np.asarray(t, dtype=float)
    if kind == "constant":
        return np.ones_like(t)
    if kind == "ramp":
        return np.clip(t / period, 0.0, 1.0)
    if kind == "smooth":
        s = np.clip(t / period, 0.0, 1.0)
        return np.sin(0.5 * np.pi * s) ** 2
    if kind == "sin":
        return np.sin(2 * np.pi * t / period)
    if kind == "pulse":
        s = np.clip(t / period, 0.0, 1.0)
        return np.sin(np.pi * s) ** 2
    raise ConfigError(f"unknown time profile {kind!r}", "profile")


@dataclass(frozen=True)
class LoadField:
    """Separable load on the unit box.

    Spatial shapes:

    ``constant``  the amplitude vector everywhere
    ``sine``      amplitude times ``prod_i sin(pi x_i)``
    ``curl_bump`` (2D) the curl of ``(sin(pi x) sin(pi y))^2`` scaled by the
                  first amplitude entry; divergence free and zero on the boundary
    """

    shape: str = "constant"
    amplitude: tuple = (0.0,)
    profile: str = "constant"
    period: float = 1.0

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ConfigError(f"unknown load shape {self.shape!r}", "shape")
        if self.profile not in PROFILES:
            raise ConfigError(f"unknown time profile {self.profile!r}", "profile")
        object.__setattr__(self, "amplitude", tuple(float(a) for a in self.amplitude))

    @classmethod
    def zero(cls, n: int) -> "LoadField":
        return cls("constant", (0.0,) * n)

    def is_zero(self) -> bool:
        return not any(self.amplitude)

    def spatial(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        n = x.shape[1]
        amp = np.asarray(self.amplitude)
        if amp.size == 1 and self.shape != "curl_bump":
            amp = np.full(n, amp[0])
        if self.shape == "constant":
            return np.broadcast_to(amp, x.shape).copy()
        if self.shape == "sine":
            return np.prod(np.sin(np.pi * x), axis=1)[:, None] * amp[None, :]
        if n != 2:
            raise ConfigError("curl_bump is two-dimensional", "shape")
        sx, sy = np.sin(np.pi * x[:, 0]), np.sin(np.pi * x[:, 1])
        cx, cy = np.cos(np.pi * x[:, 0]), np.cos(np.pi * x[:, 1])
        dpsi_dx = 2 * np.pi * sx * cx * sy**2
        dpsi_dy = 2 * np.pi * sy * cy * sx**2
        return amp[0] * np.stack([dpsi_dy, -dpsi_dx], axis=1)

    def time_factor(self, t) -> float:
        return float(_profile(self.profile, t, self.period))

    def __call__(self, x, t) -> np.ndarray:
        return self.spatial(x) * self.time_factor(t)

    def to_dict(self) -> dict:
        return {
            "shape": self.shape,
            "amplitude": list(self.amplitude),
            "profile": self.profile,
            "period": self.period,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "LoadField":
        unknown = set(data) - {"shape", "amplitude", "profile", "period"}
        if unknown:
            raise ConfigError(f"unknown keys {sorted(unknown)}")
        return cls(
            data.get("shape", "constant"),
            tuple(data.get("amplitude", (0.0,))),
            data.get("profile", "constant"),
            float(data.get("period", 1.0)),
        )
