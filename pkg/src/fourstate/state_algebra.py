"""Fock-space algebra of the four-state coherent mixture.

The signal state is rho = 1/4 sum_k |alpha_k><alpha_k| with
alpha_k = alpha * exp(i(2k+1)pi/4). It is diagonal in four states |phi_k>
supported on Fock indices n = k (mod 4); the symmetric Schmidt form
sum_k sqrt(lambda_k) |phi_k>|phi_k> purifies it, and Alice's measurement
basis |psi_k> is the discrete Fourier transform of the |phi_k>.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import gammaln
from scipy.stats import poisson

from .params import ChannelParams, ModulationParams

TAIL_TOL = 1e-12
MIN_N_MAX = 32
NEGLIGIBLE_LAMBDA = 1e-300
# below this alpha**2 the closed forms lose digits to cancellation in lambda_2, lambda_3
_SERIES_CUTOFF = 0.5


class TruncationError(ValueError):
    """The Fock cutoff leaves more Poisson tail mass than tolerated."""


def _check_alpha(alpha, allow_zero=True):
    if not math.isfinite(alpha) or alpha < 0 or (alpha == 0 and not allow_zero):
        raise ValueError(f"alpha must be finite and {'>=' if allow_zero else '>'} 0, got {alpha}")


def symbol_amplitudes(alpha: float) -> np.ndarray:
    """The four complex amplitudes alpha*exp(i(2k+1)pi/4), k = 0..3."""
    return alpha * np.exp(1j * (2 * np.arange(4) + 1) * np.pi / 4)


def eigenvalues(alpha: float) -> np.ndarray:
    """Spectrum (lambda_0, ..., lambda_3) of the four-state mixture."""
    _check_alpha(alpha)
    x = alpha * alpha
    if x < _SERIES_CUTOFF:
        # lambda_k = e^{-x} sum_j x^(4j+k)/(4j+k)!, identical to the closed form
        lam = np.zeros(4)
        term = 1.0
        for n in range(60):
            if n:
                term *= x / n
            lam[n % 4] += term
            if term < 1e-300:
                break
        return lam * math.exp(-x)
    e1, e2 = math.exp(-x), math.exp(-2 * x)
    ch, sh = 0.25 * (1 + e2), 0.25 * (1 - e2)  # e^{-x}cosh(x)/2, e^{-x}sinh(x)/2
    c, s = 0.5 * e1 * math.cos(x), 0.5 * e1 * math.sin(x)
    return np.array([ch + c, sh + s, ch - c, sh - s])


def truncation(alpha: float, tail_tol: float = TAIL_TOL) -> int:
    """Smallest Fock cutoff (at least 32) leaving Poisson(alpha^2) tail < tail_tol."""
    n_max = MIN_N_MAX
    x = alpha * alpha
    while poisson.sf(n_max, x) >= tail_tol:
        n_max += 8
    return n_max


@dataclass(frozen=True)
class SpectralData:
    alpha: float
    n_max: int
    lam: np.ndarray
    phi: np.ndarray  # (4, n_max+1), real
    negligible: tuple[bool, bool, bool, bool]


@lru_cache(maxsize=4096)
def _phi_states(alpha: float, n_max: int, tail_tol: float) -> SpectralData:
    x = alpha * alpha
    if poisson.sf(n_max, x) > tail_tol:
        raise TruncationError(f"Fock cutoff {n_max} too small for alpha={alpha} (tail_tol={tail_tol})")
    lam = eigenvalues(alpha)
    n = np.arange(n_max + 1)
    phi = np.zeros((4, n_max + 1))
    negligible = []
    for k in range(4):
        idx = n[k::4]
        if lam[k] < NEGLIGIBLE_LAMBDA:
            phi[k, k] = 1.0
            negligible.append(True)
            continue
        log_mag = idx * math.log(alpha) - 0.5 * gammaln(idx + 1) - 0.5 * x - 0.5 * math.log(lam[k])
        phi[k, idx] = np.exp(log_mag) * (-1.0) ** ((idx - k) // 4)
        negligible.append(False)
    phi.setflags(write=False)
    lam.setflags(write=False)
    return SpectralData(alpha, n_max, lam, phi, tuple(negligible))


def phi_states(alpha: float, n_max: int | None = None, tail_tol: float = TAIL_TOL) -> SpectralData:
    """Eigenvectors |phi_k> of the mixture in the truncated Fock basis."""
    _check_alpha(alpha, allow_zero=False)
    if n_max is None:
        n_max = truncation(alpha, tail_tol)
    return _phi_states(float(alpha), int(n_max), float(tail_tol))


def psi_states(alpha: float, n_max: int | None = None) -> np.ndarray:
    """Alice's measurement states, rows |psi_k> = 1/2 sum_m e^{-i(1+2k)m pi/4} |phi_m>."""
    sd = phi_states(alpha, n_max)
    k = np.arange(4)[:, None]
    m = np.arange(4)[None, :]
    dft = 0.5 * np.exp(-1j * (1 + 2 * k) * m * np.pi / 4)
    return dft @ sd.phi


def coherent_state(beta: complex, n_max: int) -> np.ndarray:
    """Truncated Fock vector of the coherent state |beta>."""
    n = np.arange(n_max + 1)
    with np.errstate(divide="ignore"):
        log_mag = n * np.log(abs(beta)) - 0.5 * gammaln(n + 1) - 0.5 * abs(beta) ** 2
    out = np.exp(log_mag) * np.exp(1j * np.angle(beta) * n)
    if beta == 0:
        out = np.zeros(n_max + 1, complex)
        out[0] = 1.0
    return out


def quadrature_operator(n_max: int) -> np.ndarray:
    """X = a + a^dagger in the Fock basis {|0>, ..., |n_max>}."""
    off = np.sqrt(np.arange(1, n_max + 1))
    return np.diag(off, 1) + np.diag(off, -1)


@dataclass(frozen=True)
class Correlations:
    z: float
    z_epr: float


def compute_z(alpha: float, n_max: int | None = None) -> Correlations:
    """Correlation <Phi| X_A (x) X_B |Phi> of the purification, plus the EPR value."""
    _check_alpha(alpha)
    v_a = 2.0 * alpha * alpha
    z_epr = math.sqrt(v_a * v_a + 2 * v_a)
    if alpha == 0:
        return Correlations(0.0, 0.0)
    sd = phi_states(alpha, n_max)
    x_op = quadrature_operator(sd.n_max)
    amp = np.sqrt(sd.lam)
    m = sd.phi @ x_op @ sd.phi.T
    z = float(amp @ (m * m) @ amp)
    return Correlations(z, z_epr)


def z_closed_form(alpha: float) -> float:
    """2 alpha^2 sum_k lambda_{k-1}^{3/2} / lambda_k^{1/2}; agrees with compute_z."""
    lam = eigenvalues(alpha)
    if alpha == 0:
        return 0.0
    return 2 * alpha * alpha * sum(lam[k - 1] ** 1.5 / math.sqrt(lam[k]) for k in range(4))


def covariance_matrix(mod: ModulationParams, ch: ChannelParams, z: float) -> np.ndarray:
    """4x4 covariance matrix of Alice's and Bob's modes, ordering (x_A, p_A, x_B, p_B)."""
    t = ch.t
    if not (0 < t <= 1):
        raise ValueError(f"transmission must lie in (0, 1], got {t}")
    if ch.xi_bob < 0:
        raise ValueError("excess noise must be >= 0")
    if not math.isfinite(z) or z < 0:
        raise ValueError(f"correlation must be finite and >= 0, got {z}")
    a = mod.v_a + 1.0
    b = t * mod.v_a + 1.0 + ch.xi_bob
    c = math.sqrt(t) * z
    return np.array(
        [
            [a, 0.0, c, 0.0],
            [0.0, a, 0.0, -c],
            [c, 0.0, b, 0.0],
            [0.0, -c, 0.0, b],
        ]
    )
