"""External wind: fixed magnitude, direction rotating at a constant rate."""
from dataclasses import dataclass
from math import cos, pi, sin

import numpy as np

# "5 Hz" read as 5 rad/s by default; ``hz`` selects 2*pi*5 rad/s instead.
RATE_CONVENTIONS = ("rad_per_s", "hz")

DEFAULT_WIND_MAGNITUDE = {"point": 0.25, "car": 2.5}


@dataclass(frozen=True)
class WindSpec:
    magnitude: float = 0.0
    angular_rate: float = 5.0
    phase: float = 0.0

    def __post_init__(self):
        if not (np.isfinite(self.magnitude) and self.magnitude >= 0.0):
            raise ValueError(f"wind magnitude must be finite and >= 0, got {self.magnitude!r}")
        if not np.isfinite(self.angular_rate) or not np.isfinite(self.phase):
            raise ValueError("wind angular_rate and phase must be finite")

    @classmethod
    def from_rate(cls, magnitude, rate, convention="rad_per_s", phase=0.0):
        if convention == "rad_per_s":
            return cls(magnitude, rate, phase)
        if convention == "hz":
            return cls(magnitude, 2.0 * pi * rate, phase)
        raise ValueError(f"unknown rate convention {convention!r}; expected one of {RATE_CONVENTIONS}")

    @property
    def period(self):
        return float("inf") if self.angular_rate == 0.0 else 2.0 * pi / abs(self.angular_rate)


def wind_at(spec, t):
    """World-frame wind acceleration (2,) at time ``t`` seconds."""
    if t < 0:
        raise ValueError("t must be non-negative")
    angle = spec.phase + spec.angular_rate * t
    return np.array([spec.magnitude * cos(angle), spec.magnitude * sin(angle)])
