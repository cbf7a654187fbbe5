"""Pure multimode Gaussian states and heralded Fock-amplitude extraction.

Conventions (fixed once, enforced by tests):

* hbar = 1, quadratures ordered ``(x_1, p_1, ..., x_l, p_l)``, vacuum
  quadrature variance 1/2, so ``a = (x + i p) / sqrt(2)``.
* A state is stored as the symplectic record ``(S, mean)`` of the circuit
  that produced it from vacuum: applying a gate G maps
  ``S -> S_G S, mean -> S_G mean + m_G`` and the covariance is
  ``V = S S^T / 2``.
* Fock amplitudes come from the Bargmann form ``(B, gamma, C)``:

      <n|psi> = C * lhaf(reduce(B, n, gamma)) / sqrt(prod n_i!)

  ``C`` is chosen real and non-negative (only |C| is physical; every
  amplitude shares this one global-phase choice).
* Beam-splitter sign convention is shared with ``oqss.fock``:
  ``U+ a U = a cos(theta) - e^{-i phi} b sin(theta)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import CapacityError, ContractError, DegenerateHeraldError, FormatError, ValidityError
from .fock import FockVector, normalize
from .hafnian import (
    MAX_DIMENSION,
    RepetitionVector,
    SymmetricComplexMatrix,
    _loop_hafnian_array,
    reduce_matrix,
)

SYMPLECTIC_TOL = 1e-10

# total photons supported by fock_amplitude; the probability tail scan in
# heralded_state may go a bit further, still under the hafnian ceiling
PHOTON_CAPACITY = 24
_TAIL_SCAN_LIMIT = min(36, MAX_DIMENSION)
_TAIL_REL = 1e-12

_LOG_FACT = np.concatenate(([0.0], np.cumsum(np.log(np.arange(1, 513)))))


def _omega(l: int) -> np.ndarray:
    w = np.zeros((2 * l, 2 * l))
    for i in range(l):
        w[2 * i, 2 * i + 1] = 1.0
        w[2 * i + 1, 2 * i] = -1.0
    return w


@dataclass(frozen=True)
class GaussianPureState:
    """Pure Gaussian state as a symplectic transform record plus mean."""

    mode_count: int
    symplectic: np.ndarray
    mean: np.ndarray

    def __post_init__(self):
        l = self.mode_count
        if l < 1:
            raise ContractError("mode count must be positive")
        s = np.ascontiguousarray(self.symplectic, dtype=np.float64)
        m = np.ascontiguousarray(self.mean, dtype=np.float64)
        if s.shape != (2 * l, 2 * l) or m.shape != (2 * l,):
            raise ContractError(f"shape mismatch for {l} modes: {s.shape}, {m.shape}")
        w = _omega(l)
        scale = max(1.0, float(np.abs(s).max()) ** 2)
        if np.abs(s @ w @ s.T - w).max() > SYMPLECTIC_TOL * scale:
            raise ValidityError("transform violates the symplectic condition")
        s.setflags(write=False)
        m.setflags(write=False)
        object.__setattr__(self, "symplectic", s)
        object.__setattr__(self, "mean", m)

    @property
    def covariance(self) -> np.ndarray:
        return 0.5 * self.symplectic @ self.symplectic.T


@dataclass(frozen=True)
class BargmannForm:
    """(B, gamma, C) of the Fock-amplitude expansion (see module docstring)."""

    b_matrix: SymmetricComplexMatrix
    gamma: np.ndarray
    prefactor: complex


@dataclass(frozen=True)
class DetectionPattern:
    """Heralded photon counts, one per measured mode."""

    counts: tuple[int, ...]
    modes: tuple[int, ...]

    def __post_init__(self):
        counts = tuple(int(c) for c in self.counts)
        modes = tuple(int(m) for m in self.modes)
        if len(counts) != len(modes):
            raise ContractError("counts and modes must have equal length")
        if any(c < 0 for c in counts):
            raise ContractError("photon counts must be non-negative")
        if len(set(modes)) != len(modes):
            raise ContractError("heralded modes must be distinct")
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "modes", modes)

    @property
    def total(self) -> int:
        return sum(self.counts)


# ---------------------------------------------------------------------------
# state construction
# ---------------------------------------------------------------------------


def vacuum(l: int) -> GaussianPureState:
    """l-mode vacuum: identity transform, zero mean."""
    if l < 1:
        raise ContractError("mode count must be positive")
    return GaussianPureState(l, np.eye(2 * l), np.zeros(2 * l))


def _embed_single(l: int, mode: int, block: np.ndarray) -> np.ndarray:
    g = np.eye(2 * l)
    g[2 * mode : 2 * mode + 2, 2 * mode : 2 * mode + 2] = block
    return g


def _apply(st: GaussianPureState, gate: np.ndarray, shift: np.ndarray | None = None):
    mean = gate @ st.mean
    if shift is not None:
        mean = mean + shift
    return GaussianPureState(st.mode_count, gate @ st.symplectic, mean)


def apply_squeeze(st: GaussianPureState, mode: int, r: float, phi: float = 0.0):
    """Single-mode squeezer; r > 0, phi = 0 squeezes Var(x) to e^{-2r}/2."""
    _check_mode(st, mode)
    ch, sh = math.cosh(r), math.sinh(r)
    block = np.array(
        [
            [ch - sh * math.cos(phi), -sh * math.sin(phi)],
            [-sh * math.sin(phi), ch + sh * math.cos(phi)],
        ]
    )
    return _apply(st, _embed_single(st.mode_count, mode, block))


def apply_displacement(st: GaussianPureState, mode: int, alpha: complex):
    """Displace one mode: mean shifts by sqrt(2)(Re a, Im a)."""
    _check_mode(st, mode)
    shift = np.zeros(2 * st.mode_count)
    shift[2 * mode] = math.sqrt(2.0) * alpha.real
    shift[2 * mode + 1] = math.sqrt(2.0) * alpha.imag
    return _apply(st, np.eye(2 * st.mode_count), shift)


def apply_phase(st: GaussianPureState, mode: int, phi: float):
    """Phase-space rotation by phi on one mode."""
    _check_mode(st, mode)
    c, s = math.cos(phi), math.sin(phi)
    return _apply(st, _embed_single(st.mode_count, mode, np.array([[c, -s], [s, c]])))


def apply_beamsplitter(
    st: GaussianPureState, mode_a: int, mode_b: int, theta: float, phi: float = 0.0
):
    """Two-mode passive coupling, transmission amplitude cos(theta)."""
    _check_mode(st, mode_a)
    _check_mode(st, mode_b)
    if mode_a == mode_b:
        raise ContractError("beam splitter needs two distinct modes")
    u = np.array(
        [
            [math.cos(theta), -np.exp(-1j * phi) * math.sin(theta)],
            [np.exp(1j * phi) * math.sin(theta), math.cos(theta)],
        ],
        dtype=np.complex128,
    )
    g = np.eye(2 * st.mode_count)
    for i, gm in enumerate((mode_a, mode_b)):
        for j, hm in enumerate((mode_a, mode_b)):
            re, im = u[i, j].real, u[i, j].imag
            g[2 * gm : 2 * gm + 2, 2 * hm : 2 * hm + 2] = np.array([[re, -im], [im, re]])
    return _apply(st, g)


def _check_mode(st: GaussianPureState, mode: int):
    if not 0 <= mode < st.mode_count:
        raise ContractError(f"mode {mode} outside 0..{st.mode_count - 1}")


# ---------------------------------------------------------------------------
# circuit description (shared wire format)
# ---------------------------------------------------------------------------


def op_squeeze(mode: int, r: float, phi: float = 0.0) -> dict:
    return {"op": "squeeze", "modes": [mode], "params": {"r": float(r), "phi": float(phi)}}


def op_displace(mode: int, alpha: complex) -> dict:
    return {
        "op": "displace",
        "modes": [mode],
        "params": {"alpha_re": float(alpha.real), "alpha_im": float(alpha.imag)},
    }


def op_phase(mode: int, phi: float) -> dict:
    return {"op": "phase", "modes": [mode], "params": {"phi": float(phi)}}


def op_beamsplitter(mode_a: int, mode_b: int, theta: float, phi: float = 0.0) -> dict:
    return {
        "op": "beamsplitter",
        "modes": [mode_a, mode_b],
        "params": {"theta": float(theta), "phi": float(phi)},
    }


def apply_ops(st: GaussianPureState, ops: Sequence[dict]) -> GaussianPureState:
    """Apply a serialized circuit description in order."""
    for op in ops:
        name = op["op"]
        modes = op["modes"]
        params = op.get("params", {})
        if name == "squeeze":
            st = apply_squeeze(st, modes[0], params["r"], params.get("phi", 0.0))
        elif name == "displace":
            st = apply_displacement(
                st, modes[0], complex(params["alpha_re"], params.get("alpha_im", 0.0))
            )
        elif name == "phase":
            st = apply_phase(st, modes[0], params["phi"])
        elif name == "beamsplitter":
            st = apply_beamsplitter(
                st, modes[0], modes[1], params["theta"], params.get("phi", 0.0)
            )
        else:
            raise ContractError(f"unknown circuit op {name!r}")
    return st


def circuit_to_text(ops: Sequence[dict]) -> str:
    return json.dumps(list(ops), indent=2) + "\n"


def circuit_from_text(text: str) -> list[dict]:
    try:
        ops = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"circuit text is not valid JSON: {exc}") from exc
    if not isinstance(ops, list):
        raise FormatError("circuit text must hold a list of operations")
    for op in ops:
        if not isinstance(op, dict) or "op" not in op or "modes" not in op:
            raise FormatError(f"malformed circuit op: {op!r}")
    return ops


# ---------------------------------------------------------------------------
# Bargmann form and Fock amplitudes
# ---------------------------------------------------------------------------


def _quad_to_ladder(l: int) -> np.ndarray:
    """Unitary T with (a_1..a_l, a^dag_1..a^dag_l) = T (x_1, p_1, ...)."""
    t = np.zeros((2 * l, 2 * l), dtype=np.complex128)
    inv_sqrt2 = 1.0 / math.sqrt(2.0)
    for i in range(l):
        t[i, 2 * i] = inv_sqrt2
        t[i, 2 * i + 1] = 1j * inv_sqrt2
        t[l + i, 2 * i] = inv_sqrt2
        t[l + i, 2 * i + 1] = -1j * inv_sqrt2
    return t


def bargmann_form(st: GaussianPureState) -> BargmannForm:
    """Extract (B, gamma, C) such that reduced loop hafnians give amplitudes.

    The state is annihilated by ``U a U^dag = P a + Q a^dag + c`` where
    ``[[P, Q], [conj Q, conj P]]`` is the ladder-basis form of the inverse
    symplectic; solving against the exponential ansatz gives
    ``B = -P^{-1} Q`` and ``gamma = -P^{-1} c``.  ``|C|`` is fixed by the
    vacuum-overlap probability and its phase set to zero.
    """
    l = st.mode_count
    s = st.symplectic
    w = _omega(l)
    s_inv = -w @ s.T @ w
    t = _quad_to_ladder(l)
    w_ladder = t @ s_inv @ t.conj().T
    p = w_ladder[:l, :l]
    q = w_ladder[:l, l:]
    try:
        b = -np.linalg.solve(p, q)
        gamma = np.linalg.solve(p, (t @ (s_inv @ st.mean))[:l])
    except np.linalg.LinAlgError as exc:  # cannot happen for a valid pure state
        raise ValidityError(f"Bargmann extraction failed: {exc}") from exc
    b = (b + b.T) / 2.0
    if np.linalg.norm(b, ord=2) >= 1.0:
        raise ValidityError("Bargmann matrix has spectral norm >= 1")

    v_plus = st.covariance + 0.5 * np.eye(2 * l)
    sign, logdet = np.linalg.slogdet(v_plus)
    if sign <= 0:
        raise ValidityError("covariance + I/2 is not positive definite")
    quad = float(st.mean @ np.linalg.solve(v_plus, st.mean))
    c_mag = math.exp(-0.25 * logdet - 0.25 * quad)
    return BargmannForm(SymmetricComplexMatrix(b), gamma, complex(c_mag))


def fock_amplitude(st: GaussianPureState, pattern: Sequence[int]) -> complex:
    """Exact <n_1..n_l|psi> via Bargmann form + matrix reduction + loop hafnian."""
    counts = tuple(int(n) for n in pattern)
    if len(counts) != st.mode_count:
        raise ContractError(f"pattern needs {st.mode_count} entries, got {len(counts)}")
    if any(n < 0 for n in counts):
        raise ContractError("photon numbers must be non-negative")
    if sum(counts) > PHOTON_CAPACITY:
        raise CapacityError(f"total photons {sum(counts)} exceed capacity {PHOTON_CAPACITY}")
    return _amplitude(bargmann_form(st), counts)


def _amplitude(form: BargmannForm, counts: Sequence[int]) -> complex:
    reduced = reduce_matrix(form.b_matrix, RepetitionVector(tuple(counts)), form.gamma)
    log_norm = 0.5 * sum(_LOG_FACT[n] for n in counts)
    return form.prefactor * _loop_hafnian_array(reduced.entries) * math.exp(-log_norm)


def heralded_amplitudes(
    st: GaussianPureState,
    pattern: DetectionPattern,
    output_mode: int,
    cutoff: int,
) -> np.ndarray:
    """Raw output-mode amplitudes a_n = <n, m|psi> for n = 0..cutoff."""
    form, full = _herald_setup(st, pattern, output_mode, cutoff)
    return np.array(
        [_amplitude(form, _with_output(full, output_mode, n)) for n in range(cutoff + 1)]
    )


def heralded_state(
    st: GaussianPureState,
    pattern: DetectionPattern,
    output_mode: int,
    cutoff: int,
) -> tuple[FockVector, float]:
    """Condition on a detection pattern; return output state and probability.

    The returned vector is the normalized truncation of the conditional
    state at ``cutoff``.  The herald probability sums |a_n|^2 past the
    cutoff until the remaining tail is below 1e-12 of the running sum; when
    the scan hits the photon-capacity ceiling first, the geometric decay of
    the trailing terms is extrapolated to close the sum.
    """
    form, full = _herald_setup(st, pattern, output_mode, cutoff)
    amps = [_amplitude(form, _with_output(full, output_mode, n)) for n in range(cutoff + 1)]

    # pairwise blocks make the tail test robust to parity-forced zeros
    total = float(np.sum(np.abs(np.asarray(amps)) ** 2))
    blocks: list[float] = []
    converged = False
    n = cutoff + 1
    while pattern.total + n + 1 <= _TAIL_SCAN_LIMIT:
        a0 = _amplitude(form, _with_output(full, output_mode, n))
        a1 = _amplitude(form, _with_output(full, output_mode, n + 1))
        blocks.append(abs(a0) ** 2 + abs(a1) ** 2)
        total += blocks[-1]
        n += 2
        if total > 0.0 and blocks[-1] < _TAIL_REL * total:
            converged = True
            break
    if not converged and total > 0.0 and blocks and blocks[-1] > _TAIL_REL * total:
        ratio = blocks[-1] / blocks[-2] if len(blocks) >= 2 and blocks[-2] > 0.0 else 1.0
        if ratio < 0.999:
            total += blocks[-1] * ratio / (1.0 - ratio)
        else:
            raise CapacityError("herald probability tail does not converge within capacity")

    if total < 1e-300:
        raise DegenerateHeraldError(f"pattern {pattern.counts} on modes {pattern.modes} is unreachable")
    truncated = np.asarray(amps)
    if np.linalg.norm(truncated) == 0.0:
        raise DegenerateHeraldError("conditional state has no support below the cutoff")
    out, _ = normalize(FockVector(truncated))
    return out, total


def _herald_setup(st, pattern, output_mode, cutoff):
    _check_mode(st, output_mode)
    if output_mode in pattern.modes:
        raise ContractError("output mode cannot be heralded")
    expected = set(range(st.mode_count)) - {output_mode}
    if set(pattern.modes) != expected:
        raise ContractError("pattern must herald every mode except the output")
    if cutoff < 0:
        raise ContractError("cutoff must be non-negative")
    if pattern.total + cutoff > PHOTON_CAPACITY:
        raise CapacityError(
            f"herald total {pattern.total} + cutoff {cutoff} exceeds capacity {PHOTON_CAPACITY}"
        )
    full = np.zeros(st.mode_count, dtype=np.int64)
    for mode, count in zip(pattern.modes, pattern.counts):
        full[mode] = count
    return bargmann_form(st), full


def _with_output(full: np.ndarray, output_mode: int, n: int) -> tuple[int, ...]:
    counts = full.copy()
    counts[output_mode] = n
    return tuple(counts)
