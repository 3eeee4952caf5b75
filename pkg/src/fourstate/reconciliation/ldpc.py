"""Sparse binary LDPC codes and syndrome-constrained sum-product decoding.

LLRs at the public boundary follow the reconciliation convention
``log P(bit=1) / P(bit=0)``: positive values favour a one.
"""
from __future__ import annotations

import gzip
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

LLR_CLIP = 30.0
DEFAULT_MAX_ITERS = 200


@dataclass(frozen=True)
class LdpcCode:
    n: int
    m_checks: int
    rows: tuple[tuple[int, ...], ...]
    name: str = ""
    # edge arrays, sorted by check; built once in __post_init__
    _check_of_edge: np.ndarray = field(init=False, repr=False, compare=False)
    _var_of_edge: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if len(self.rows) != self.m_checks:
            raise ValueError(f"expected {self.m_checks} checks, got {len(self.rows)}")
        if not 0 < self.m_checks < self.n:
            raise ValueError("need 0 < m_checks < n")
        checks, cols = [], []
        for c, row in enumerate(self.rows):
            if len(set(row)) != len(row):
                raise ValueError(f"check {c} lists a column twice")
            for j in row:
                if not 0 <= j < self.n:
                    raise ValueError(f"check {c} references column {j} outside [0, {self.n})")
                checks.append(c)
                cols.append(j)
        check_of_edge = np.asarray(checks, dtype=np.int64)
        var_of_edge = np.asarray(cols, dtype=np.int64)
        if np.bincount(var_of_edge, minlength=self.n).min() == 0:
            raise ValueError("every column of the parity-check matrix must be nonzero")
        object.__setattr__(self, "_check_of_edge", check_of_edge)
        object.__setattr__(self, "_var_of_edge", var_of_edge)

    @property
    def rate(self) -> float:
        return (self.n - self.m_checks) / self.n

    @property
    def n_edges(self) -> int:
        return len(self._var_of_edge)

    def column_degrees(self) -> np.ndarray:
        return np.bincount(self._var_of_edge, minlength=self.n)

    def row_degrees(self) -> np.ndarray:
        return np.bincount(self._check_of_edge, minlength=self.m_checks)

    def syndrome(self, bits) -> np.ndarray:
        bits = np.asarray(bits, dtype=np.int64)
        if bits.shape != (self.n,):
            raise ValueError(f"expected {self.n} bits, got shape {bits.shape}")
        s = np.bincount(self._check_of_edge, weights=bits[self._var_of_edge], minlength=self.m_checks)
        return (s.astype(np.int64) & 1).astype(np.uint8)

    def dense(self) -> np.ndarray:
        h = np.zeros((self.m_checks, self.n), dtype=np.uint8)
        h[self._check_of_edge, self._var_of_edge] = 1
        return h

    @classmethod
    def from_dense(cls, h, name: str = "") -> "LdpcCode":
        h = np.asarray(h)
        rows = tuple(tuple(int(j) for j in np.flatnonzero(r)) for r in h)
        return cls(n=h.shape[1], m_checks=h.shape[0], rows=rows, name=name)

    # -- text format: line 1 "n m_checks", then one line of 0-based columns per check

    @classmethod
    def load(cls, path) -> "LdpcCode":
        path = Path(path)
        text = gzip.decompress(path.read_bytes()).decode() if path.suffix == ".gz" else path.read_text()
        return cls.from_text(text, name=path.name.split(".")[0])

    @classmethod
    def from_text(cls, text: str, name: str = "") -> "LdpcCode":
        lines = [ln.split("#", 1)[0].strip() for ln in text.splitlines()]
        lines = [ln for ln in lines if ln]
        if not lines:
            raise ValueError(f"{name or 'code'}: empty parity-check file")
        header = lines[0].split()
        if len(header) != 2:
            raise ValueError(f"{name or 'code'}: header must be 'n m_checks'")
        n, m = int(header[0]), int(header[1])
        rows = tuple(tuple(int(t) for t in ln.split()) for ln in lines[1:])
        return cls(n=n, m_checks=m, rows=rows, name=name)

    def to_text(self) -> str:
        out = [f"{self.n} {self.m_checks}"]
        out.extend(" ".join(str(j) for j in row) for row in self.rows)
        return "\n".join(out) + "\n"

    def save(self, path) -> None:
        path = Path(path)
        data = self.to_text().encode()
        path.write_bytes(gzip.compress(data, mtime=0) if path.suffix == ".gz" else data)


def _phi(x):
    # phi(x) = -log(tanh(x/2)), its own inverse on (0, inf)
    x = np.clip(x, 1e-12, 2 * LLR_CLIP)
    return -np.log(np.tanh(0.5 * x))


def bp_decode(code: LdpcCode, llrs, syndrome, max_iters: int = DEFAULT_MAX_ITERS):
    """Flooding sum-product decoding towards the coset fixed by ``syndrome``.

    Returns ``(bits, converged, iters)``. ``iters`` counts message-passing
    rounds; it is 0 when the channel hard decision already satisfies the
    syndrome. On failure the best-effort hard decision of the last round is
    returned with ``converged=False``.
    """
    llrs = np.asarray(llrs, dtype=float)
    syndrome = np.asarray(syndrome, dtype=np.uint8)
    if llrs.shape != (code.n,):
        raise ValueError(f"expected {code.n} LLRs, got shape {llrs.shape}")
    if syndrome.shape != (code.m_checks,):
        raise ValueError(f"expected {code.m_checks} syndrome bits, got shape {syndrome.shape}")

    ce, ve, m = code._check_of_edge, code._var_of_edge, code.m_checks
    # internal sign convention: L = log P(0)/P(1)
    prior = -np.clip(llrs, -LLR_CLIP, LLR_CLIP)
    check_sign = 1.0 - 2.0 * syndrome.astype(float)

    bits = (prior < 0).astype(np.uint8)
    if np.array_equal(code.syndrome(bits), syndrome):
        return bits, True, 0

    v2c = prior[ve].copy()
    for it in range(1, max_iters + 1):
        mag = _phi(np.abs(v2c))
        total = np.bincount(ce, weights=mag, minlength=m)
        neg = v2c < 0
        parity = np.bincount(ce, weights=neg, minlength=m).astype(np.int64) & 1
        sign = check_sign[ce] * np.where((parity[ce] ^ neg) == 1, -1.0, 1.0)
        c2v = sign * _phi(total[ce] - mag)
        np.clip(c2v, -LLR_CLIP, LLR_CLIP, out=c2v)

        posterior = prior + np.bincount(ve, weights=c2v, minlength=code.n)
        bits = (posterior < 0).astype(np.uint8)
        if np.array_equal(code.syndrome(bits), syndrome):
            return bits, True, it
        v2c = np.clip(posterior[ve] - c2v, -LLR_CLIP, LLR_CLIP)
    return bits, False, max_iters
