"""Quadrature-level Monte-Carlo simulation of the prepare-and-measure protocol.

Alice picks one of four coherent states, the Gaussian channel scales the
mean quadrature by sqrt(T) and adds Gaussian noise of variance 1 + xi_B
(shot noise plus excess noise at Bob), and Bob homodynes a random
quadrature. Random numbers come from Philox streams keyed by
(seed, block index), so any index range is reproducible on its own.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .params import ChannelParams, ModulationParams

BLOCK = 1 << 16
MIN_ESTIMATION_SAMPLES = 1000

Q, P = 0, 1
# sign of the mean quadrature of alpha*exp(i(2k+1)pi/4), indexed [basis, symbol]
QUADRATURE_SIGN = np.array([[1, -1, -1, 1], [1, 1, -1, -1]], dtype=np.int8)


def block_rng(seed: int, block: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(block,))))


@dataclass(frozen=True)
class RoundBatch:
    symbols: np.ndarray  # uint8 in 0..3
    bases: np.ndarray  # uint8, 0 = q, 1 = p
    alice_quad: np.ndarray  # +-alpha*sqrt(2) projected on Bob's basis
    bob_y: np.ndarray
    seed: int
    start: int = 0

    def __len__(self):
        return len(self.bob_y)

    def subset(self, idx) -> "RoundBatch":
        idx = np.asarray(idx)
        return RoundBatch(self.symbols[idx], self.bases[idx], self.alice_quad[idx], self.bob_y[idx], self.seed, self.start)


def alice_quadrature(symbols, bases, alpha: float) -> np.ndarray:
    return QUADRATURE_SIGN[bases, symbols] * (alpha * math.sqrt(2.0))


def simulate_batch(n: int, mod: ModulationParams, ch: ChannelParams, seed: int, start: int = 0) -> RoundBatch:
    """Simulate rounds ``start .. start+n-1`` of the session keyed by ``seed``."""
    if n < 1:
        raise ValueError("need at least one round")
    if start < 0:
        raise ValueError("start index must be >= 0")
    first, last = start // BLOCK, (start + n - 1) // BLOCK
    sym, bas, noise = [], [], []
    for b in range(first, last + 1):
        rng = block_rng(seed, b)
        sym.append(rng.integers(0, 4, BLOCK, dtype=np.uint8))
        bas.append(rng.integers(0, 2, BLOCK, dtype=np.uint8))
        noise.append(rng.standard_normal(BLOCK))
    off = start - first * BLOCK
    sl = slice(off, off + n)
    symbols = np.concatenate(sym)[sl]
    bases = np.concatenate(bas)[sl]
    g = np.concatenate(noise)[sl]
    a = alice_quadrature(symbols, bases, mod.alpha)
    y = math.sqrt(ch.t) * a + math.sqrt(1.0 + ch.xi_bob) * g
    return RoundBatch(symbols, bases, a, y, seed, start)


def raw_key_split(batch_or_y):
    """Bob's raw bits (1 for y >= 0) and the magnitudes he discloses."""
    y = batch_or_y.bob_y if isinstance(batch_or_y, RoundBatch) else np.asarray(batch_or_y, dtype=float)
    return (y >= 0).astype(np.uint8), np.abs(y)


@dataclass(frozen=True)
class ChannelEstimate:
    t_hat: float
    xi_hat: float  # same referencing as the ChannelParams used for analysis
    n_samples: int
    xi_bob_hat: float

    @property
    def flagged(self) -> bool:
        """Negative excess-noise estimate (statistical fluctuation)."""
        return self.xi_hat < 0


def estimate_channel(alice_quad, bob_y, noise_reference: str = "input") -> ChannelEstimate:
    """Moment estimates of T and xi from disclosed (alice_quad, bob_y) pairs."""
    a = np.asarray(alice_quad, dtype=float)
    y = np.asarray(bob_y, dtype=float)
    if a.shape != y.shape:
        raise ValueError("alice_quad and bob_y must have equal length")
    if len(a) < MIN_ESTIMATION_SAMPLES:
        raise ValueError(f"parameter estimation needs >= {MIN_ESTIMATION_SAMPLES} samples, got {len(a)}")
    cov = np.cov(a, y)
    t_hat = (cov[0, 1] / cov[0, 0]) ** 2
    xi_bob = float(np.var(y - math.sqrt(t_hat) * a, ddof=1) - 1.0)
    xi_hat = xi_bob / t_hat if noise_reference == "input" else xi_bob
    return ChannelEstimate(float(t_hat), float(xi_hat), len(a), xi_bob)


def write_batch_csv(batch: RoundBatch, path_or_file) -> None:
    """Columns index, symbol, basis (q/p), alice_quad, bob_y; floats round-trip exactly."""
    if hasattr(path_or_file, "write"):
        _write_rows(batch, path_or_file)
        return
    with open(path_or_file, "w", newline="") as fh:
        _write_rows(batch, fh)


def _write_rows(batch: RoundBatch, fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["index", "symbol", "basis", "alice_quad", "bob_y"])
    for i in range(len(batch)):
        w.writerow([batch.start + i, int(batch.symbols[i]), "qp"[batch.bases[i]],
                    repr(float(batch.alice_quad[i])), repr(float(batch.bob_y[i]))])


def read_batch_csv(path, seed: int = -1) -> RoundBatch:
    with Path(path).open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{path}: no rounds")
    return RoundBatch(
        symbols=np.array([int(r["symbol"]) for r in rows], dtype=np.uint8),
        bases=np.array(["qp".index(r["basis"]) for r in rows], dtype=np.uint8),
        alice_quad=np.array([float(r["alice_quad"]) for r in rows]),
        bob_y=np.array([float(r["bob_y"]) for r in rows]),
        seed=seed,
        start=int(rows[0]["index"]),
    )
