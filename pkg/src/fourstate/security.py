"""Asymptotic secret key rate of the four-state protocol with reverse reconciliation.

K = beta * I(x:y) - S(y:E), where S(y:E) is bounded by the Holevo
information of the Gaussian state sharing the covariance matrix of the
purification (Gaussian extremality).
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial.hermite import hermgauss
from scipy.optimize import brentq

from .params import ChannelParams, ModulationParams
from .state_algebra import compute_z, covariance_matrix

GH_NODES = 256
PURITY_TOL = 1e-9
DEFAULT_BRACKET = (0.05, 1.5)
CURVE_XI = (0.002, 0.004, 0.006, 0.008, 0.01)
CURVE_ETA = 0.6
CSV_HEADER = ("distance_km", "xi", "alpha_opt", "snr", "i_xy", "s_ye", "beta", "key_rate")

_gh_x, _gh_w = hermgauss(GH_NODES)
OMEGA = np.array([[0.0, 1.0], [-1.0, 0.0]])


class NonPhysicalError(ValueError):
    """Covariance matrix violates the uncertainty principle."""


class NoPositiveKeyError(RuntimeError):
    """No amplitude in the search bracket yields a positive key rate."""


def snr(mod: ModulationParams, ch: ChannelParams) -> float:
    """Signal variance at Bob over total noise variance at Bob, T V_A / (1 + xi_B)."""
    return ch.t * mod.v_a / (1.0 + ch.xi_bob)


def biawgn_mutual_info(snr: float) -> float:
    """I(X;Y) in bits for X = +-sqrt(snr) equiprobable, Y = X + N(0, 1).

    I = 1 - E[log2(1 + exp(-2 snr - 2 sqrt(snr) n))], n ~ N(0,1), evaluated
    by 256-node Gauss-Hermite quadrature.
    """
    if not math.isfinite(snr) or snr < 0:
        raise ValueError(f"snr must be finite and >= 0, got {snr}")
    if snr == 0:
        return 0.0
    n = math.sqrt(2.0) * _gh_x
    loss = np.logaddexp(0.0, -2.0 * snr - 2.0 * math.sqrt(snr) * n)
    return float(1.0 - (_gh_w @ loss) / (math.sqrt(math.pi) * math.log(2.0)))


def gaussian_capacity(snr: float) -> float:
    """Shannon capacity 1/2 log2(1 + snr) of the real AWGN channel."""
    if not math.isfinite(snr) or snr < 0:
        raise ValueError(f"snr must be finite and >= 0, got {snr}")
    return 0.5 * math.log2(1.0 + snr)


MUTUAL_INFO = {"gaussian": gaussian_capacity, "biawgn": biawgn_mutual_info}


def entropy_g(nu: float) -> float:
    """Von Neumann entropy (bits) of a thermal mode with symplectic eigenvalue nu."""
    if nu < 1.0 - PURITY_TOL:
        raise NonPhysicalError(f"symplectic eigenvalue {nu} < 1")
    if nu <= 1.0:
        return 0.0
    p, q = 0.5 * (nu + 1.0), 0.5 * (nu - 1.0)
    return p * math.log2(p) - q * math.log2(q)


def symplectic_eigenvalues(gamma) -> np.ndarray:
    """Symplectic spectrum of a 2N x 2N covariance matrix in (x1, p1, x2, p2, ...) order."""
    gamma = np.asarray(gamma, dtype=float)
    modes = gamma.shape[0] // 2
    omega = np.kron(np.eye(modes), OMEGA)
    ev = np.abs(np.linalg.eigvals(1j * omega @ gamma))
    # eigenvalues of i*Omega*Gamma come in +-nu pairs
    return np.sort(ev)[::2]


def holevo_bound(gamma) -> float:
    """S(y:E) for homodyne detection of Bob's x quadrature, Eve purifying AB."""
    gamma = np.asarray(gamma, dtype=float)
    if gamma.shape != (4, 4) or not np.allclose(gamma, gamma.T):
        raise ValueError("expected a symmetric 4x4 covariance matrix")
    nus = symplectic_eigenvalues(gamma)
    s_ab = sum(entropy_g(nu) for nu in nus)

    a, b, c = gamma[:2, :2], gamma[2:, 2:], gamma[:2, 2:]
    proj = np.diag([1.0, 0.0])
    a_cond = a - c @ np.linalg.pinv(proj @ b @ proj) @ c.T
    nu_cond = symplectic_eigenvalues(a_cond)[0]
    s_a_cond = entropy_g(nu_cond)
    return max(s_ab - s_a_cond, 0.0)


@dataclass(frozen=True)
class KeyRateReport:
    snr: float
    i_xy: float
    s_ye: float
    beta: float
    k_real: float
    alpha_used: float


@lru_cache(maxsize=65536)
def _z(alpha: float) -> float:
    return compute_z(alpha).z


def secret_key_rate(
    mod: ModulationParams,
    ch: ChannelParams,
    beta: float,
    normalization: str = "gaussian",
    z: float | None = None,
) -> KeyRateReport:
    """K_real = beta * I(x:y) - S(y:E) at a fixed amplitude.

    ``normalization`` picks the I(x:y) used with beta: "gaussian" (the
    AWGN capacity, default; the same reference the efficiency
    measurement divides by) or "biawgn". ``z`` overrides the correlation of
    the purification, e.g. with the EPR value for comparison.
    """
    if not (0.0 <= beta <= 1.0):
        raise ValueError(f"beta must lie in [0, 1], got {beta}")
    if normalization not in MUTUAL_INFO:
        raise ValueError(f"normalization must be one of {sorted(MUTUAL_INFO)}")
    s = snr(mod, ch)
    i_xy = MUTUAL_INFO[normalization](s)
    if z is None:
        z = _z(float(mod.alpha))
    s_ye = float(holevo_bound(covariance_matrix(mod, ch, z)))
    return KeyRateReport(s, i_xy, s_ye, beta, beta * i_xy - s_ye, float(mod.alpha))


_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


def golden_section_max(f, lo: float, hi: float, tol: float = 1e-6) -> float:
    """Argmax of a unimodal f on [lo, hi] to within tol."""
    if hi < lo:
        raise ValueError("empty bracket")
    a, b = lo, hi
    c = b - _INV_PHI * (b - a)
    d = a + _INV_PHI * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - _INV_PHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INV_PHI * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def best_rate(ch, beta, bracket=DEFAULT_BRACKET, tol=1e-6, normalization="gaussian") -> KeyRateReport:
    """Report at the rate-maximising amplitude, without judging its sign."""
    lo, hi = bracket
    if not (0 < lo <= hi):
        raise ValueError(f"bracket must satisfy 0 < lo <= hi, got {bracket}")

    def rate(alpha):
        return secret_key_rate(ModulationParams(alpha), ch, beta, normalization).k_real

    alpha = lo if hi == lo else golden_section_max(rate, lo, hi, tol)
    return secret_key_rate(ModulationParams(alpha), ch, beta, normalization)


def optimize_alpha(ch, beta, bracket=DEFAULT_BRACKET, tol=1e-6, normalization="gaussian"):
    """Golden-section maximisation of K_real over the amplitude.

    Returns ``(alpha_star, report)``; raises NoPositiveKeyError if the best
    rate in the bracket is negative.
    """
    rep = best_rate(ch, beta, bracket, tol, normalization)
    if rep.k_real < 0:
        raise NoPositiveKeyError(
            f"no positive key at d={ch.distance_km} km, xi={ch.xi}, beta={beta} (best {rep.k_real:.3g})"
        )
    return rep.alpha_used, rep


@dataclass(frozen=True)
class CurvePoint:
    distance_km: float
    xi: float
    report: KeyRateReport

    @property
    def key_rate(self) -> float:
        return max(self.report.k_real, 0.0)


def key_rate_curve(xi_list=CURVE_XI, eta=CURVE_ETA, beta=0.8, d_grid=None, bracket=DEFAULT_BRACKET,
                   normalization="gaussian", noise_reference="input") -> list[CurvePoint]:
    """Amplitude-optimised key rate for every (xi, distance) pair, xi-major order."""
    if d_grid is None:
        d_grid = np.arange(0.0, 400.0 + 1e-9, 5.0)
    out = []
    for xi in xi_list:
        for d in d_grid:
            ch = ChannelParams(float(d), float(xi), eta, noise_reference)
            out.append(CurvePoint(float(d), float(xi), best_rate(ch, beta, bracket, normalization=normalization)))
    return out


def cutoff_distance(xi, eta=CURVE_ETA, beta=0.8, d_max=500.0, bracket=DEFAULT_BRACKET, xtol=1e-6,
                    normalization="gaussian", noise_reference="input") -> float:
    """Largest distance with a positive optimised key rate (0 if none at d=0)."""

    def f(d):
        return best_rate(ChannelParams(d, xi, eta, noise_reference), beta, bracket, normalization=normalization).k_real

    if f(0.0) <= 0:
        return 0.0
    if f(d_max) > 0:
        return d_max
    return brentq(f, 0.0, d_max, xtol=xtol)


def _fmt(v: float) -> str:
    return np.format_float_positional(v, precision=12, unique=False, fractional=False, trim="-")


def curve_csv(points) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for p in points:
        r = p.report
        w.writerow([_fmt(v) for v in (p.distance_km, p.xi, r.alpha_used, r.snr, r.i_xy, r.s_ye, r.beta, p.key_rate)])
    return buf.getvalue()
