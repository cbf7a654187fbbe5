"""Approximate GKP codewords in the Fock basis.

The codeword is the symmetric-width approximation of the square-lattice
grid state: a Gaussian-envelope comb of squeezed position-space peaks,

    psi(q) ~ sum_s exp(-Delta^2 mu_s^2 / 2) exp(-(q - mu_s)^2 / (2 Delta^2))

with peaks ``mu_s = (2s + logical) sqrt(pi)`` and ``Delta^2 = 10^(-dB/10)``.
Envelope and peak width share the same Delta, the common convention behind
dB-threshold statements; the truncation-fidelity anchors in the test suite
are what pin this choice down.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractError
from .fock import FockVector, normalize

# comb terms with envelope weight below this are dropped
_ENVELOPE_FLOOR = 1e-16

# reference cutoff standing in for the untruncated codeword
_REFERENCE_FLOOR = 128


@dataclass(frozen=True)
class GkpParams:
    """Squeezing level in dB plus the codeword selector (logical 0 or 1)."""

    squeezing_db: float
    logical: int = 0

    def __post_init__(self):
        if self.squeezing_db < 0:
            raise ContractError("squeezing level must be >= 0 dB")
        if self.logical not in (0, 1):
            raise ContractError("logical selector must be 0 or 1")

    @property
    def delta(self) -> float:
        return delta_from_db(self.squeezing_db)


def delta_from_db(squeezing_db: float) -> float:
    """Delta with Delta^2 = 10^(-dB/10)."""
    return 10.0 ** (-squeezing_db / 20.0)


def db_from_delta(delta: float) -> float:
    if delta <= 0:
        raise ContractError("delta must be positive")
    return -20.0 * math.log10(delta)


def db_delta_roundtrip(squeezing_db: float) -> float:
    """dB -> Delta -> dB; identity to rounding."""
    return db_from_delta(delta_from_db(squeezing_db))


def _comb_centers(p: GkpParams) -> tuple[np.ndarray, np.ndarray]:
    """Peak positions and envelope weights above the floor."""
    delta2 = p.delta**2
    centers = []
    s = 0
    while True:
        mu = (2 * s + p.logical) * math.sqrt(math.pi)
        w = math.exp(-0.5 * delta2 * mu * mu)
        if w < _ENVELOPE_FLOOR and s > 0:
            break
        centers.append((mu, w))
        if s > 0 or (s == 0 and p.logical == 1):
            centers.append((-mu, math.exp(-0.5 * delta2 * mu * mu)))
        s += 1
    mus = np.array([c[0] for c in centers])
    ws = np.array([c[1] for c in centers])
    order = np.argsort(mus)
    return mus[order], ws[order]


def _wavefunction(p: GkpParams, q: np.ndarray) -> np.ndarray:
    mus, ws = _comb_centers(p)
    delta2 = p.delta**2
    psi = np.zeros_like(q)
    for mu, w in zip(mus, ws):
        psi += w * np.exp(-((q - mu) ** 2) / (2.0 * delta2))
    return psi


def _raw_coefficients(p: GkpParams, n_max: int) -> np.ndarray:
    """Overlaps of the comb wavefunction with Hermite functions 0..n_max.

    Uniform-grid Simpson quadrature; the grid is symmetric about zero so
    odd-n overlaps of the logical-0 comb cancel to rounding.
    """
    mus, _ = _comb_centers(p)
    q_max = float(np.abs(mus).max()) + 12.0 * p.delta + 1.0
    # resolve both the peak width and the fastest Hermite oscillation
    dq = min(p.delta, math.pi / math.sqrt(2.0 * n_max + 1.0)) / 16.0
    half = int(math.ceil(q_max / dq))
    q = np.linspace(-half * dq, half * dq, 2 * half + 1)

    psi = _wavefunction(p, q)

    # stable recursion for Hermite functions h_n(q)
    h_prev = np.pi ** (-0.25) * np.exp(-0.5 * q * q)
    h = math.sqrt(2.0) * q * h_prev
    coeffs = np.empty(n_max + 1)
    coeffs[0] = _simpson(psi * h_prev, dq)
    if n_max >= 1:
        coeffs[1] = _simpson(psi * h, dq)
    for n in range(2, n_max + 1):
        h, h_prev = math.sqrt(2.0 / n) * q * h - math.sqrt((n - 1.0) / n) * h_prev, h
        coeffs[n] = _simpson(psi * h, dq)
    return coeffs


def _simpson(values: np.ndarray, dq: float) -> float:
    acc = values[0] + values[-1] + 4.0 * values[1:-1:2].sum() + 2.0 * values[2:-1:2].sum()
    return float(acc * dq / 3.0)


def gkp_coefficients(p: GkpParams, n_max: int) -> FockVector:
    """Normalized Fock coefficients of the codeword truncated at ``n_max``."""
    if n_max < 0:
        raise ContractError("n_max must be non-negative")
    raw = _raw_coefficients(p, n_max)
    out, _ = normalize(FockVector(raw.astype(np.complex128)))
    return out


def truncation_fidelity(p: GkpParams, n_max: int) -> float:
    """|<codeword truncated at n_max | codeword>|^2.

    The untruncated state is stood in for by a reference cutoff of
    ``max(4 n_max, 128)``, whose own tail is negligible for the squeezing
    levels of interest.
    """
    if n_max < 0:
        raise ContractError("n_max must be non-negative")
    reference = max(4 * n_max, _REFERENCE_FLOOR)
    raw = _raw_coefficients(p, reference)
    weights = raw**2
    total = weights.sum()
    if total <= 0.0:
        raise ContractError("reference codeword has vanishing norm")
    return float(weights[: n_max + 1].sum() / total)
