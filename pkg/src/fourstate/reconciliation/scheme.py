"""Reverse reconciliation with a repetition code concatenated to an LDPC code.

Bob's N = k*n homodyne outcomes are cut into n blocks of k. The key bit
of block i is the sign of its first outcome; Bob discloses every |y|, the
signs of each outcome relative to the block's first one, the LDPC syndrome
of his n key bits and a 64-bit verification tag. Alice turns her symbols
into one LLR per block and decodes in the syndrome's coset.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from ..channel import raw_key_split, simulate_batch
from ..params import ChannelParams, ModulationParams
from .ldpc import DEFAULT_MAX_ITERS, LdpcCode, bp_decode

TAG_BITS = 64
_TAG_PRIME = (1 << 64) - 59
_TAG_BASE = 0x9E3779B97F4A7C15 % _TAG_PRIME


def verify_tag(bits, key: int = 0) -> int:
    """64-bit polynomial hash of a bit string, evaluated mod the prime 2^64 - 59.

    Bits are packed into 64-bit little-endian words w_j and the tag is
    (len + sum_j w_j * base^(j+1)) mod p with base derived from ``key``.
    """
    bits = np.asarray(bits, dtype=np.uint8)
    base = (_TAG_BASE + key) % _TAG_PRIME or 1
    packed = np.packbits(bits, bitorder="little")
    packed = np.concatenate([packed, np.zeros(-len(packed) % 8, np.uint8)])
    h = 0
    for w in packed.view("<u8")[::-1].tolist():
        h = (h + w) * base % _TAG_PRIME
    return (h + len(bits)) % _TAG_PRIME


@dataclass(frozen=True)
class SideInfo:
    magnitudes: np.ndarray  # (N,)
    rel_signs: np.ndarray  # (n, k_rep) int8 in {+1, -1}, first column +1
    syndrome: np.ndarray  # (m_checks,) uint8
    k_rep: int
    verify_tag: int

    @property
    def n_blocks(self) -> int:
        return self.rel_signs.shape[0]

    @property
    def leaked_bits(self) -> int:
        """Classical-channel leakage about the key bits: syndrome plus tag."""
        return len(self.syndrome) + TAG_BITS

    def to_bytes(self) -> bytes:
        """Length-prefixed sections: header, float64 magnitudes, sign bits, syndrome bits."""
        header = struct.pack("<IIIQ", self.k_rep, self.n_blocks, len(self.syndrome), self.verify_tag)
        sections = (
            header,
            self.magnitudes.astype("<f8").tobytes(),
            np.packbits(self.rel_signs.ravel() < 0, bitorder="little").tobytes(),
            np.packbits(self.syndrome.astype(bool), bitorder="little").tobytes(),
        )
        return b"".join(struct.pack("<I", len(s)) + s for s in sections)

    @classmethod
    def from_bytes(cls, data: bytes) -> "SideInfo":
        sections, pos = [], 0
        for _ in range(4):
            if pos + 4 > len(data):
                raise ValueError("truncated side information")
            (size,) = struct.unpack_from("<I", data, pos)
            pos += 4
            if pos + size > len(data):
                raise ValueError("truncated side information")
            sections.append(data[pos:pos + size])
            pos += size
        if pos != len(data):
            raise ValueError("trailing bytes after side information")
        k_rep, n_blocks, m, tag = struct.unpack("<IIIQ", sections[0])
        total = k_rep * n_blocks
        mags = np.frombuffer(sections[1], dtype="<f8").astype(float)
        if len(mags) != total:
            raise ValueError("magnitude section length mismatch")
        neg = np.unpackbits(np.frombuffer(sections[2], np.uint8), count=total, bitorder="little")
        syn = np.unpackbits(np.frombuffer(sections[3], np.uint8), count=m, bitorder="little")
        rel = (1 - 2 * neg.astype(np.int8)).reshape(n_blocks, k_rep)
        return cls(mags, rel, syn.astype(np.uint8), k_rep, tag)


def make_side_info(bob_y, code: LdpcCode, k_rep: int, tag_key: int = 0):
    """Bob's key bits Y (one per block) and the side information he discloses."""
    y = np.asarray(bob_y, dtype=float)
    if k_rep < 1:
        raise ValueError("k_rep must be >= 1")
    if y.shape != (k_rep * code.n,):
        raise ValueError(f"need k_rep*n = {k_rep * code.n} outcomes, got {y.shape}")
    bits, mags = raw_key_split(y)
    blocks = bits.reshape(code.n, k_rep)
    key_bits = blocks[:, 0].copy()
    rel = np.where(blocks == key_bits[:, None], 1, -1).astype(np.int8)
    side = SideInfo(mags, rel, code.syndrome(key_bits), k_rep, verify_tag(key_bits, tag_key))
    return key_bits, side


def block_signs(key_bits, side: SideInfo) -> np.ndarray:
    """Signs of every outcome rebuilt from key bits and relative signs."""
    return ((2 * np.asarray(key_bits, dtype=np.int8) - 1)[:, None] * side.rel_signs).ravel()


def compute_llrs(alice_quad, side: SideInfo, t_hat: float, xi_bob_hat: float) -> np.ndarray:
    """Per-block log P(Y=1)/P(Y=0) from Alice's symbols and Bob's disclosures.

    Each outcome contributes 2 sqrt(T) s |y| a / (1 + xi_B), the log ratio of
    the Gaussian likelihoods of y = +s|y| and y = -s|y| given Alice's symbol a.
    """
    a = np.asarray(alice_quad, dtype=float).reshape(side.rel_signs.shape)
    noise = 1.0 + xi_bob_hat
    if noise <= 0:
        raise ValueError("noise variance estimate must be positive")
    mags = side.magnitudes.reshape(side.rel_signs.shape)
    return (2.0 * math.sqrt(max(t_hat, 0.0)) / noise) * np.sum(side.rel_signs * mags * a, axis=1)


def alice_decode(code: LdpcCode, alice_quad, side: SideInfo, t_hat: float, xi_bob_hat: float,
                 max_iters: int = DEFAULT_MAX_ITERS, tag_key: int = 0):
    """Alice's side: returns (bits, ok, iters); ok means converged and tag matched."""
    llrs = compute_llrs(alice_quad, side, t_hat, xi_bob_hat)
    bits, converged, iters = bp_decode(code, llrs, side.syndrome, max_iters)
    ok = converged and verify_tag(bits, tag_key) == side.verify_tag
    return bits, ok, iters


def beta_repetition(s: float, k: int, beta_ldpc: float) -> float:
    """Efficiency at SNR s/k of a k-fold repetition on top of a code with efficiency beta_ldpc at SNR s."""
    if s <= 0:
        raise ValueError("s must be positive")
    if k < 1:
        raise ValueError("k must be >= 1")
    return math.log2(1.0 + s) / (k * math.log2(1.0 + s / k)) * beta_ldpc


def beta_repetition_approx(s: float, beta_ldpc: float) -> float:
    """Small-s approximation (1 - s/2) * beta_ldpc of beta_repetition."""
    return (1.0 - s / 2.0) * beta_ldpc


def efficiency(rate: float, snr: float, k_rep: int = 1) -> float:
    """Extracted bits per symbol, rate/k_rep, over the AWGN capacity at the per-symbol SNR."""
    return rate / (k_rep * 0.5 * math.log2(1.0 + snr))


@dataclass(frozen=True)
class EfficiencyReport:
    snr: float
    k_rep: int
    bits_extracted: int  # n*rate per frame
    n_symbols: int  # N = k_rep*n per frame
    beta_measured: float
    fer: float
    beta_predicted: float
    trials: int
    mean_iters: float


def measure_efficiency(code: LdpcCode, k_rep: int, snr: float, trials: int, seed: int = 0,
                       max_iters: int = DEFAULT_MAX_ITERS) -> EfficiencyReport:
    """End-to-end reconciliation of ``trials`` simulated frames at per-symbol ``snr``.

    Frames come from the channel simulator with a lossless, noise-free
    channel and V_A = snr. A frame fails if decoding does not converge or
    the verification tag disagrees.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if snr <= 0:
        raise ValueError("snr must be positive")
    mod = ModulationParams.from_variance(snr)
    ch = ChannelParams(0.0, 0.0)
    n_sym = k_rep * code.n
    failures, iters = 0, 0
    for trial in range(trials):
        batch = simulate_batch(n_sym, mod, ch, seed, start=trial * n_sym)
        _, side = make_side_info(batch.bob_y, code, k_rep)
        _, ok, it = alice_decode(code, batch.alice_quad, side, 1.0, 0.0, max_iters)
        failures += not ok
        iters += it
    beta_ldpc = efficiency(code.rate, snr * k_rep)
    return EfficiencyReport(
        snr=snr,
        k_rep=k_rep,
        bits_extracted=code.n - code.m_checks,
        n_symbols=n_sym,
        beta_measured=efficiency(code.rate, snr, k_rep),
        fer=failures / trials,
        beta_predicted=beta_repetition(snr * k_rep, k_rep, beta_ldpc),
        trials=trials,
        mean_iters=iters / trials,
    )
