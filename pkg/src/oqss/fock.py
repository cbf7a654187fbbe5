"""Truncated single-mode Fock arithmetic and the truncated-unitary oracle.

This module owns the beam-splitter sign convention for the whole package:

    <n,0| B(theta) |i,j> = sqrt(n!/(i!j!)) (cos theta)^i (-sin theta)^j

which corresponds to the generator ``theta (a b^dag - a^dag b)``.  The
Gaussian simulation kernel derives its symplectic matrices from the same
Heisenberg action, so heralding formulas agree across modules.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.linalg import expm

from .errors import CapacityError, ContractError, DegenerateHeraldError, FormatError

NORMALIZATION_TOL = 1e-10
MAX_ORACLE_CUTOFF = 20

# log(n!) for n = 0..512, enough for any cutoff arithmetic in this package
_LOG_FACT = np.concatenate(([0.0], np.cumsum(np.log(np.arange(1, 513)))))


@dataclass(frozen=True)
class FockVector:
    """Complex amplitudes over |0> .. |d> for one mode.

    ``normalized`` tags unit vectors; raw vectors keep the tag False and are
    rejected by operations whose contract requires normalized input.
    """

    amplitudes: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        amps = np.ascontiguousarray(self.amplitudes, dtype=np.complex128)
        if amps.ndim != 1 or amps.size == 0:
            raise ContractError("amplitudes must be a non-empty 1-D array")
        if self.normalized:
            nrm = np.linalg.norm(amps)
            if abs(nrm - 1.0) > NORMALIZATION_TOL:
                raise ContractError(f"vector tagged normalized has norm {nrm!r}")
        amps.setflags(write=False)
        object.__setattr__(self, "amplitudes", amps)

    @property
    def cutoff(self) -> int:
        return self.amplitudes.size - 1


def basis_state(n: int, cutoff: int) -> FockVector:
    """|n> truncated at ``cutoff``."""
    if not 0 <= n <= cutoff:
        raise ContractError(f"basis index {n} outside cutoff {cutoff}")
    amps = np.zeros(cutoff + 1, dtype=np.complex128)
    amps[n] = 1.0
    return FockVector(amps, normalized=True)


def pad_to(v: FockVector, cutoff: int) -> FockVector:
    """Zero-pad to a larger cutoff (norm and tag preserved)."""
    if cutoff < v.cutoff:
        raise ContractError(f"cannot pad cutoff {v.cutoff} down to {cutoff}")
    amps = np.zeros(cutoff + 1, dtype=np.complex128)
    amps[: v.amplitudes.size] = v.amplitudes
    return FockVector(amps, normalized=v.normalized)


def normalize(v: FockVector) -> tuple[FockVector, float]:
    """Unit vector plus the original norm."""
    nrm = float(np.linalg.norm(v.amplitudes))
    if nrm == 0.0:
        raise ContractError("cannot normalize the zero vector")
    return FockVector(v.amplitudes / nrm, normalized=True), nrm


def fidelity(a: FockVector, b: FockVector) -> float:
    """|<a|b>|^2 with the shorter vector zero-padded."""
    if not (a.normalized and b.normalized):
        raise ContractError("fidelity requires normalized inputs")
    n = min(a.amplitudes.size, b.amplitudes.size)
    overlap = np.vdot(a.amplitudes[:n], b.amplitudes[:n])
    return min(float(abs(overlap) ** 2), 1.0)


def bs_element(i: int, j: int, n: int, m: int, theta: float) -> complex:
    """<n,m| B(theta) |i,j> under the shared sign convention.

    Zero unless photon number is conserved (i + j == n + m).
    """
    if min(i, j, n, m) < 0:
        raise ContractError("photon numbers must be non-negative")
    if i + j != n + m:
        return 0.0 + 0.0j
    c, s = math.cos(theta), math.sin(theta)
    pref = math.exp(
        0.5 * (_LOG_FACT[n] + _LOG_FACT[m] - _LOG_FACT[i] - _LOG_FACT[j])
    )
    total = 0.0
    for k in range(max(0, n - j), min(i, n) + 1):
        term = (
            math.comb(i, k)
            * math.comb(j, k + j - n)
            * c ** (2 * k + j - n)
            * s ** (i + n - 2 * k)
        )
        if (n - k) % 2:
            term = -term
        total += term
    return complex(pref * total)


def _bs_zero_herald_matrix(d_a: int, d_b: int, theta: float) -> np.ndarray:
    """M[n, i] = <n,0|B|i,n-i> for i <= d_a, n-i <= d_b (else 0)."""
    c, s = math.cos(theta), math.sin(theta)
    n_max = d_a + d_b
    out = np.zeros((n_max + 1, d_a + 1))
    for n in range(n_max + 1):
        for i in range(max(0, n - d_b), min(d_a, n) + 1):
            j = n - i
            pref = math.exp(0.5 * (_LOG_FACT[n] - _LOG_FACT[i] - _LOG_FACT[j]))
            out[n, i] = pref * c**i * (-s) ** j
    return out


def couple_and_herald_zero(
    a: FockVector, b: FockVector, theta: float
) -> tuple[FockVector, float]:
    """Couple two states on a beam splitter and project mode 2 on vacuum.

    Output amplitudes are ``c_n = sum_{i+j=n} a_i b_j <n,0|B|i,j>`` with
    exact support ``n <= d_a + d_b``; the success probability is the squared
    norm of the projected (pre-normalization) vector.
    """
    if not (a.normalized and b.normalized):
        raise ContractError("couple_and_herald_zero requires normalized inputs")
    d_a, d_b = a.cutoff, b.cutoff
    mat = _bs_zero_herald_matrix(d_a, d_b, theta)
    c = np.zeros(d_a + d_b + 1, dtype=np.complex128)
    for n in range(c.size):
        lo = max(0, n - d_b)
        hi = min(d_a, n)
        i = np.arange(lo, hi + 1)
        c[n] = np.sum(a.amplitudes[i] * b.amplitudes[n - i] * mat[n, i])
    probability = float(np.vdot(c, c).real)
    if probability < 1e-300:
        raise DegenerateHeraldError("zero-photon herald has vanishing probability")
    out, _ = normalize(FockVector(c))
    return out, probability


# ---------------------------------------------------------------------------
# truncated-unitary oracle
# ---------------------------------------------------------------------------


def _lowering(cutoff: int) -> np.ndarray:
    return np.diag(np.sqrt(np.arange(1, cutoff + 1)), 1).astype(np.complex128)


def bs_unitary_oracle(theta: float, cutoff: int, phi: float = 0.0) -> np.ndarray:
    """Truncated two-mode beam-splitter unitary (exponentiated generator).

    Basis index ``i * (cutoff+1) + j`` is |i, j>.  Blocks of fixed total
    photon number n <= cutoff are exactly unitary; blocks above the cutoff
    are truncated.
    """
    if cutoff > MAX_ORACLE_CUTOFF:
        raise CapacityError(f"oracle cutoff {cutoff} exceeds {MAX_ORACLE_CUTOFF}")
    d = cutoff + 1
    a = _lowering(cutoff)
    eye = np.eye(d, dtype=np.complex128)
    a1 = np.kron(a, eye)
    a2 = np.kron(eye, a)
    gen = theta * (
        np.exp(1j * phi) * a1 @ a2.conj().T - np.exp(-1j * phi) * a1.conj().T @ a2
    )
    return expm(gen)


def squeeze_unitary_oracle(r: float, phi: float, cutoff: int) -> np.ndarray:
    """Truncated single-mode squeezer exp((conj(z) a^2 - z a^dag^2)/2)."""
    a = _lowering(cutoff)
    z = r * np.exp(1j * phi)
    gen = 0.5 * (np.conj(z) * a @ a - z * a.conj().T @ a.conj().T)
    return expm(gen)


def displacement_unitary_oracle(alpha: complex, cutoff: int) -> np.ndarray:
    """Truncated displacement exp(alpha a^dag - conj(alpha) a)."""
    a = _lowering(cutoff)
    gen = alpha * a.conj().T - np.conj(alpha) * a
    return expm(gen)


def phase_unitary_oracle(phi: float, cutoff: int) -> np.ndarray:
    """Phase rotation diag(e^{i n phi}) (exact at any cutoff)."""
    return np.diag(np.exp(1j * phi * np.arange(cutoff + 1)))


MAX_CIRCUIT_ORACLE_CUTOFF = 64


def truncated_circuit_state(
    ops: Sequence[dict], mode_count: int, cutoff: int
) -> np.ndarray:
    """Brute-force statevector of a circuit on a truncated Fock lattice.

    ``ops`` is the shared circuit description (see ``oqss.gaussian``): an
    ordered list of ``{"op", "modes", "params"}`` dicts applied to the
    ``mode_count``-mode vacuum.  Returns the full amplitude tensor of shape
    ``(cutoff+1,) * mode_count``.  Independent of the hafnian pipeline by
    construction, which is the whole point.

    Truncation error lives near the cutoff boundary; run with ``cutoff``
    well above the photon content you inspect (48 brings squeezers with
    r <= 1.2 below 1e-8 at n <= 8).  Beam splitters are applied per
    total-photon block, which equals the full-generator exponential exactly
    because the generator is block diagonal.
    """
    if cutoff > MAX_CIRCUIT_ORACLE_CUTOFF:
        raise CapacityError(f"circuit oracle cutoff {cutoff} exceeds {MAX_CIRCUIT_ORACLE_CUTOFF}")
    d = cutoff + 1
    psi = np.zeros((d,) * mode_count, dtype=np.complex128)
    psi[(0,) * mode_count] = 1.0
    for op in ops:
        name = op["op"]
        modes = list(op["modes"])
        params = op.get("params", {})
        if name == "squeeze":
            gate = squeeze_unitary_oracle(params["r"], params.get("phi", 0.0), cutoff)
            psi = _apply_single(psi, gate, modes[0])
        elif name == "displace":
            alpha = complex(params["alpha_re"], params.get("alpha_im", 0.0))
            psi = _apply_single(psi, displacement_unitary_oracle(alpha, cutoff), modes[0])
        elif name == "phase":
            psi = _apply_single(psi, phase_unitary_oracle(params["phi"], cutoff), modes[0])
        elif name == "beamsplitter":
            psi = _apply_bs_blocks(
                psi, params["theta"], params.get("phi", 0.0), modes[0], modes[1], d
            )
        else:
            raise ContractError(f"unknown circuit op {name!r}")
    return psi


def _apply_single(psi, gate, mode):
    out = np.tensordot(gate, psi, axes=([1], [mode]))
    return np.moveaxis(out, 0, mode)


def _apply_bs_blocks(psi, theta, phi, mode_a, mode_b, d):
    """Beam splitter on two modes, exponentiated block by block."""
    mode_count = psi.ndim
    work = np.moveaxis(psi, (mode_a, mode_b), (0, 1)).reshape(d * d, -1).copy()
    ephi = np.exp(1j * phi)
    for total in range(2 * d - 1):
        ks = np.arange(max(0, total - d + 1), min(d - 1, total) + 1)
        if ks.size < 2:
            continue
        gen = np.zeros((ks.size, ks.size), dtype=np.complex128)
        for pos, k in enumerate(ks[:-1]):
            # a b^dag couples (k+1, total-k-1) -> (k, total-k)
            amp = theta * math.sqrt((k + 1) * (total - k))
            gen[pos, pos + 1] = ephi * amp
            gen[pos + 1, pos] = -np.conj(ephi) * amp
        flat = ks * d + (total - ks)
        work[flat] = expm(gen) @ work[flat]
    out = work.reshape((d,) * mode_count)
    return np.moveaxis(out, (0, 1), (mode_a, mode_b))


# ---------------------------------------------------------------------------
# Wigner grid
# ---------------------------------------------------------------------------


def wigner_grid(
    v: FockVector,
    q_range: tuple[float, float],
    p_range: tuple[float, float],
    resolution: int | tuple[int, int],
) -> np.ndarray:
    """Wigner function W(q, p) sampled on a uniform grid.

    Normalization is ``integral W dq dp = 1`` (vacuum peaks at 1/pi at the
    origin).  Returns shape ``(n_q, n_p)`` with ``W[iq, ip] = W(q_iq, p_ip)``.
    Evaluation uses the Clenshaw recurrence over density-matrix diagonals,
    which stays stable at high photon number.
    """
    if not v.normalized:
        raise ContractError("wigner_grid requires a normalized state")
    n_q, n_p = (resolution, resolution) if isinstance(resolution, int) else resolution
    if n_q < 1 or n_p < 1:
        raise ContractError("grid resolution must be positive")
    qs = np.linspace(q_range[0], q_range[1], n_q)
    ps = np.linspace(p_range[0], p_range[1], n_p)
    q, p = np.meshgrid(qs, ps, indexing="ij")

    amps = v.amplitudes
    if amps.size < 2:  # the Clenshaw seed needs at least one off-diagonal
        amps = np.concatenate([amps, [0.0 + 0.0j]])
    rho = np.outer(amps, amps.conj())
    m = rho.shape[0]
    a2 = np.sqrt(2.0) * (q + 1j * p)
    b = np.abs(a2) ** 2
    w = 2.0 * rho[0, -1] * np.ones_like(a2)
    rho_scaled = rho * (2.0 - np.eye(m))
    level = m - 1
    while level > 0:
        level -= 1
        diag = np.diag(rho_scaled, level)
        w = _laguerre_clenshaw(level, b, diag) + w * a2 * (level + 1) ** -0.5
    return np.real(w * np.exp(-0.5 * b)) / np.pi


def _laguerre_clenshaw(level, x, coeffs):
    # Clenshaw evaluation of sum_k coeffs[k] L_k^level(x) (QuTiP-style)
    if len(coeffs) == 1:
        y0, y1 = coeffs[0], 0.0
    elif len(coeffs) == 2:
        y0, y1 = coeffs[0], coeffs[1]
    else:
        k = len(coeffs)
        y0 = coeffs[-2] * np.ones_like(x)
        y1 = coeffs[-1] * np.ones_like(x)
        for i in range(3, len(coeffs) + 1):
            k -= 1
            y0, y1 = (
                coeffs[-i] - y1 * (float((k - 1) * (level + k - 1)) / ((level + k) * k)) ** 0.5,
                y0 - y1 * ((level + 2 * k - 1) - x) * ((level + k) * k) ** -0.5,
            )
    return y0 - y1 * ((level + 1) - x) * (level + 1) ** -0.5


def wigner_grid_to_csv(
    grid: np.ndarray, q_range: tuple[float, float], p_range: tuple[float, float]
) -> str:
    """CSV per the file interface: axes in the header, W values row-major."""
    n_q, n_p = grid.shape
    lines = [f"# {q_range[0]:.17g} {q_range[1]:.17g} {p_range[0]:.17g} {p_range[1]:.17g} {n_q} {n_p}"]
    for row in grid:
        lines.append(",".join(f"{val:.12g}" for val in row))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# FockVector files
# ---------------------------------------------------------------------------


def fock_to_text(v: FockVector) -> str:
    """Lines of ``n re im``."""
    lines = [
        f"{n} {amp.real:.17g} {amp.imag:.17g}" for n, amp in enumerate(v.amplitudes)
    ]
    return "\n".join(lines) + "\n"


def fock_from_text(text: str) -> FockVector:
    """Parse the ``n re im`` format; unit-norm vectors come back tagged."""
    entries = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 3:
            raise FormatError(f"line {lineno}: expected 'n re im', got {line!r}")
        try:
            n = int(parts[0])
            re, im = float(parts[1]), float(parts[2])
        except ValueError as exc:
            raise FormatError(f"line {lineno}: {exc}") from exc
        if n < 0 or n in entries:
            raise FormatError(f"line {lineno}: bad or duplicate index {n}")
        entries[n] = complex(re, im)
    if not entries:
        raise FormatError("no amplitudes found")
    amps = np.zeros(max(entries) + 1, dtype=np.complex128)
    for n, amp in entries.items():
        amps[n] = amp
    is_unit = abs(np.linalg.norm(amps) - 1.0) <= NORMALIZATION_TOL
    return FockVector(amps, normalized=is_unit)
