"""Physical parameter records shared by the analysis, simulation and protocol layers.

Quadratures are in shot-noise units with X = a + a^dagger, so the vacuum
variance is 1, a coherent state |beta> has mean X of 2*Re(beta), and the
four-state modulation of amplitude ``alpha`` has per-quadrature variance
V_A = 2*alpha**2 and symbol values +-alpha*sqrt(2).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

FIBER_LOSS_DB_PER_KM = 0.2

NOISE_REFERENCES = ("input", "output")


@dataclass(frozen=True)
class ModulationParams:
    """Coherent-state amplitude of the four-state constellation."""

    alpha: float

    def __post_init__(self):
        if not math.isfinite(self.alpha) or self.alpha < 0:
            raise ValueError(f"alpha must be finite and >= 0, got {self.alpha}")

    @property
    def v_a(self) -> float:
        return 2.0 * self.alpha**2

    @property
    def symbol_amplitude(self) -> float:
        """|mean quadrature| of each coherent state, alpha*sqrt(2)."""
        return self.alpha * math.sqrt(2.0)

    @classmethod
    def from_variance(cls, v_a: float) -> "ModulationParams":
        if not math.isfinite(v_a) or v_a < 0:
            raise ValueError(f"modulation variance must be finite and >= 0, got {v_a}")
        return cls(math.sqrt(v_a / 2.0))


@dataclass(frozen=True)
class ChannelParams:
    """Lossy, noisy bosonic channel with fiber loss folded into the transmission.

    ``xi`` is the excess noise in shot-noise units. With
    ``noise_reference="input"`` (default) it is referred to the channel
    input, so Bob sees ``t*xi`` on top of shot noise; with ``"output"`` it is
    added at Bob's input as is.
    """

    distance_km: float
    xi: float
    eta: float = 1.0
    noise_reference: str = "input"

    def __post_init__(self):
        if not math.isfinite(self.distance_km) or self.distance_km < 0:
            raise ValueError(f"distance must be finite and >= 0 km, got {self.distance_km}")
        if not math.isfinite(self.xi) or self.xi < 0:
            raise ValueError(f"excess noise must be finite and >= 0, got {self.xi}")
        if not (0 < self.eta <= 1):
            raise ValueError(f"detector efficiency must lie in (0, 1], got {self.eta}")
        if self.noise_reference not in NOISE_REFERENCES:
            raise ValueError(f"noise_reference must be one of {NOISE_REFERENCES}")
        if self.t <= 0:
            raise ValueError("transmission underflows to zero")

    @property
    def t(self) -> float:
        return self.eta * 10.0 ** (-FIBER_LOSS_DB_PER_KM / 10.0 * self.distance_km)

    @property
    def xi_bob(self) -> float:
        """Excess noise variance present at Bob's detector."""
        return self.t * self.xi if self.noise_reference == "input" else self.xi

    @classmethod
    def from_transmission(cls, t: float, xi: float, noise_reference: str = "input") -> "ChannelParams":
        """Channel with a given total transmission and unit detector efficiency."""
        if not (0 < t <= 1):
            raise ValueError(f"transmission must lie in (0, 1], got {t}")
        return cls(-10.0 / FIBER_LOSS_DB_PER_KM * math.log10(t), xi, 1.0, noise_reference)
