"""Session configuration shared by both endpoints (key = value text files)."""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

from ..params import ChannelParams, ModulationParams


@dataclass(frozen=True)
class SessionConfig:
    code: str = "lowrate-n65536"  # builtin code name or path to a parity-check file
    k_rep: int = 10
    batch_size: int = 800_000
    estimation_fraction: float = 0.1
    distance_km: float = 25.0
    xi: float = 0.005
    eta: float = 0.6
    noise_reference: str = "input"
    alpha: float | None = None  # None: the amplitude putting k_rep * SNR at block_snr
    block_snr: float = 0.40  # SNR per repetition block the code is run at
    sim_xi: float | None = None  # excess noise actually simulated; defaults to xi
    xi_tol: float = 0.2  # abort when xi_hat > xi + xi_tol
    t_tol: float = 0.2  # abort when |t_hat - T| > t_tol * T
    alice_seed: int = 1
    bob_seed: int = 2
    max_iters: int = 200
    max_frames: int = 0  # 0: as many frames as the key symbols allow

    def __post_init__(self):
        if self.k_rep < 1:
            raise ValueError("k_rep must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not (0 < self.estimation_fraction < 1):
            raise ValueError("estimation_fraction must lie in (0, 1)")
        if self.alpha is not None and self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.block_snr <= 0:
            raise ValueError("block_snr must be positive")
        if self.xi_tol < 0 or self.t_tol < 0:
            raise ValueError("tolerances must be >= 0")
        if self.max_iters < 1 or self.max_frames < 0:
            raise ValueError("max_iters must be >= 1 and max_frames >= 0")
        for seed in (self.alice_seed, self.bob_seed):
            if not 0 <= seed < 2**64:
                raise ValueError("seeds must be 64-bit unsigned integers")
        self.channel()  # validates physical parameters

    def channel(self) -> ChannelParams:
        """Expected channel: drives the amplitude choice, the guards and the key length."""
        return ChannelParams(self.distance_km, self.xi, self.eta, self.noise_reference)

    def sim_channel(self) -> ChannelParams:
        xi = self.xi if self.sim_xi is None else self.sim_xi
        return ChannelParams(self.distance_km, xi, self.eta, self.noise_reference)

    def modulation(self) -> ModulationParams:
        if self.alpha is not None:
            return ModulationParams(self.alpha)
        ch = self.channel()
        return ModulationParams.from_variance(self.block_snr / self.k_rep * (1.0 + ch.xi_bob) / ch.t)

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        """Hash of every field except the private seeds."""
        public = {k: v for k, v in self.as_dict().items() if k not in ("alice_seed", "bob_seed")}
        return hashlib.sha256(json.dumps(public, sort_keys=True).encode()).hexdigest()

    def replace(self, **changes) -> "SessionConfig":
        return dataclasses.replace(self, **changes)

    @classmethod
    def from_text(cls, text: str) -> "SessionConfig":
        fields = {f.name: f for f in dataclasses.fields(cls)}
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"line {lineno}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            key = key.replace("-", "_")
            if key not in fields:
                raise ValueError(f"line {lineno}: unknown setting {key!r}")
            values[key] = _parse(key, value)
        return cls(**values)

    @classmethod
    def load(cls, path) -> "SessionConfig":
        return cls.from_text(Path(path).read_text())

    def to_text(self) -> str:
        lines = []
        for k, v in self.as_dict().items():
            lines.append(f"{k} = {'auto' if v is None else v}")
        return "\n".join(lines) + "\n"


_INT = {"k_rep", "batch_size", "alice_seed", "bob_seed", "max_iters", "max_frames"}
_STR = {"code", "noise_reference"}
_OPTIONAL = {"alpha", "sim_xi"}


def _parse(key: str, value: str):
    if key in _STR:
        return value
    if key in _OPTIONAL and value.lower() in ("auto", "none", ""):
        return None
    if key in _INT:
        return int(value.replace("_", ""), 0)
    return float(value)
