import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oqss.errors import CapacityError, ContractError, DegenerateHeraldError, FormatError
from oqss.fock import (
    FockVector,
    basis_state,
    bs_element,
    bs_unitary_oracle,
    couple_and_herald_zero,
    fidelity,
    fock_from_text,
    fock_to_text,
    normalize,
    pad_to,
    truncated_circuit_state,
    wigner_grid,
    wigner_grid_to_csv,
)


def random_state(cutoff, seed):
    rng = np.random.default_rng(seed)
    amps = rng.standard_normal(cutoff + 1) + 1j * rng.standard_normal(cutoff + 1)
    out, _ = normalize(FockVector(amps))
    return out


class TestNormalize:
    def test_unit_vector(self):
        out, nrm = normalize(FockVector(np.array([1.0, 0.0])))
        assert nrm == 1.0
        assert np.allclose(out.amplitudes, [1.0, 0.0])

    def test_three_four_five(self):
        out, nrm = normalize(FockVector(np.array([3.0, 4.0])))
        assert nrm == pytest.approx(5.0)
        assert np.allclose(out.amplitudes, [0.6, 0.8])

    def test_idempotent(self):
        v = random_state(6, seed=9)
        again, nrm = normalize(v)
        assert nrm == pytest.approx(1.0, abs=1e-12)
        assert np.allclose(again.amplitudes, v.amplitudes, atol=1e-12)

    def test_zero_vector_rejected(self):
        with pytest.raises(ContractError):
            normalize(FockVector(np.zeros(3)))

    def test_normalized_tag_enforced(self):
        with pytest.raises(ContractError):
            FockVector(np.array([2.0, 0.0]), normalized=True)


class TestFidelity:
    def test_identical(self):
        v = random_state(5, seed=1)
        assert fidelity(v, v) == pytest.approx(1.0)

    def test_orthogonal(self):
        assert fidelity(basis_state(0, 1), basis_state(1, 1)) == 0.0

    def test_half_overlap(self):
        plus = FockVector(np.array([1.0, 0.0, 1.0]) / math.sqrt(2), normalized=True)
        assert fidelity(plus, basis_state(0, 0)) == pytest.approx(0.5)

    def test_symmetric_and_phase_invariant(self):
        a = random_state(4, seed=2)
        b = random_state(4, seed=3)
        assert fidelity(a, b) == pytest.approx(fidelity(b, a))
        rotated = FockVector(a.amplitudes * np.exp(0.77j), normalized=True)
        assert fidelity(rotated, b) == pytest.approx(fidelity(a, b))

    def test_raw_input_rejected(self):
        raw = FockVector(np.array([1.0, 0.0]))
        with pytest.raises(ContractError):
            fidelity(raw, basis_state(0, 1))


class TestBsElement:
    def test_single_photon_transmission(self):
        assert bs_element(1, 0, 1, 0, 0.37) == pytest.approx(math.cos(0.37))

    def test_hom(self):
        got = bs_element(1, 1, 2, 0, math.pi / 4)
        assert got == pytest.approx(-1.0 / math.sqrt(2.0))

    def test_photon_number_conservation(self):
        assert bs_element(2, 1, 1, 1, 0.3) == 0.0
        assert bs_element(0, 1, 2, 0, 0.3) == 0.0

    @pytest.mark.parametrize("i,j", [(0, 0), (1, 0), (2, 1), (3, 2)])
    def test_row_unitarity(self, i, j):
        theta = 0.6
        total = sum(
            abs(bs_element(i, j, n, i + j - n, theta)) ** 2 for n in range(i + j + 1)
        )
        assert total == pytest.approx(1.0, abs=1e-12)


class TestCoupleAndHeraldZero:
    def test_vacua(self):
        out, prob = couple_and_herald_zero(basis_state(0, 0), basis_state(0, 0), 0.8)
        assert prob == pytest.approx(1.0)
        assert np.allclose(out.amplitudes, [1.0])

    def test_single_photon(self):
        out, prob = couple_and_herald_zero(basis_state(1, 1), basis_state(0, 0), 0.6)
        assert prob == pytest.approx(math.cos(0.6) ** 2)
        assert fidelity(out, basis_state(1, 1)) == pytest.approx(1.0)

    def test_hom(self):
        out, prob = couple_and_herald_zero(basis_state(1, 1), basis_state(1, 1), math.pi / 4)
        assert prob == pytest.approx(0.5)
        assert fidelity(out, basis_state(2, 2)) == pytest.approx(1.0)

    def test_degenerate_probability(self):
        # identity coupling cannot empty an occupied second mode
        with pytest.raises(DegenerateHeraldError):
            couple_and_herald_zero(basis_state(0, 0), basis_state(1, 1), 0.0)

    @settings(max_examples=40, deadline=None)
    @given(
        d_a=st.integers(0, 5),
        d_b=st.integers(0, 5),
        seed=st.integers(0, 2**31 - 1),
    )
    def test_cutoff_additivity_and_probability(self, d_a, d_b, seed):
        rng = np.random.default_rng(seed)
        a = random_state(d_a, seed)
        b = random_state(d_b, seed + 1)
        theta = rng.uniform(0.1, math.pi / 2 - 0.1)
        out, prob = couple_and_herald_zero(a, b, theta)
        assert out.cutoff == d_a + d_b
        assert 0.0 < prob <= 1.0 + 1e-12
        assert np.linalg.norm(out.amplitudes) == pytest.approx(1.0, abs=1e-10)


class TestOracle:
    def test_identity_at_zero(self):
        u = bs_unitary_oracle(0.0, 5)
        assert np.allclose(u, np.eye(36))

    def test_unitarity_on_conserving_subspace(self):
        cutoff = 8
        u = bs_unitary_oracle(0.9, cutoff)
        err = np.abs(u.conj().T @ u - np.eye((cutoff + 1) ** 2)).max()
        assert err < 1e-8

    def test_columns_match_bs_element(self):
        cutoff = 10
        theta = 0.7
        u = bs_unitary_oracle(theta, cutoff)
        d = cutoff + 1
        for i in range(4):
            for j in range(4):
                for n in range(i + j + 1):
                    m = i + j - n
                    assert u[n * d + m, i * d + j] == pytest.approx(
                        bs_element(i, j, n, m, theta), abs=1e-9
                    )

    def test_cutoff_capacity(self):
        with pytest.raises(CapacityError):
            bs_unitary_oracle(0.5, 21)

    def test_circuit_state_unknown_op(self):
        with pytest.raises(ContractError):
            truncated_circuit_state([{"op": "nope", "modes": [0], "params": {}}], 1, 4)


class TestWigner:
    def test_vacuum_peak(self):
        w = wigner_grid(basis_state(0, 0), (-4, 4), (-4, 4), 81)
        assert w[40, 40] == pytest.approx(1.0 / math.pi, abs=1e-12)

    def test_single_photon_origin(self):
        w = wigner_grid(basis_state(1, 1), (-4, 4), (-4, 4), 81)
        assert w[40, 40] == pytest.approx(-1.0 / math.pi, abs=1e-12)

    def test_even_parity_symmetry(self):
        amps = np.zeros(5)
        amps[0], amps[2], amps[4] = 1.0, 0.5, 0.25
        v, _ = normalize(FockVector(amps))
        w = wigner_grid(v, (-3, 3), (-3, 3), 41)
        assert np.allclose(w, w[::-1, ::-1], atol=1e-12)

    def test_integrates_to_one(self):
        v = random_state(6, seed=21)
        n = 161
        w = wigner_grid(v, (-7, 7), (-7, 7), n)
        dq = 14.0 / (n - 1)
        assert w.sum() * dq * dq == pytest.approx(1.0, abs=1e-3)

    def test_csv_header(self):
        w = wigner_grid(basis_state(0, 0), (-2, 2), (-1, 1), (3, 5))
        csv = wigner_grid_to_csv(w, (-2, 2), (-1, 1))
        lines = csv.strip().split("\n")
        assert lines[0] == "# -2 2 -1 1 3 5"
        assert len(lines) == 4
        assert len(lines[1].split(",")) == 5


class TestFockFiles:
    def test_roundtrip(self):
        v = random_state(7, seed=33)
        back = fock_from_text(fock_to_text(v))
        assert back.normalized
        assert np.allclose(back.amplitudes, v.amplitudes, atol=1e-15)

    def test_raw_vector_not_tagged(self):
        text = "0 1.0 0.0\n1 1.0 0.0\n"
        assert not fock_from_text(text).normalized

    def test_parse_errors(self):
        with pytest.raises(FormatError):
            fock_from_text("0 1.0\n")
        with pytest.raises(FormatError):
            fock_from_text("0 one 0.0\n")
        with pytest.raises(FormatError):
            fock_from_text("")
        with pytest.raises(FormatError):
            fock_from_text("0 1 0\n0 1 0\n")

    def test_pad_to(self):
        v = basis_state(1, 1)
        padded = pad_to(v, 4)
        assert padded.cutoff == 4
        assert padded.normalized
        with pytest.raises(ContractError):
            pad_to(padded, 2)
