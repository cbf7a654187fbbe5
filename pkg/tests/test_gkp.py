import numpy as np
import pytest

from oqss.errors import ContractError
from oqss.fock import basis_state, fidelity
from oqss.gkp import (
    GkpParams,
    db_delta_roundtrip,
    db_from_delta,
    delta_from_db,
    gkp_coefficients,
    truncation_fidelity,
)


class TestParametrization:
    def test_ten_db(self):
        assert delta_from_db(10.0) ** 2 == pytest.approx(0.1, rel=1e-12)

    def test_zero_db(self):
        assert delta_from_db(0.0) == 1.0

    def test_roundtrip_identity(self):
        for db in (0.0, 3.7, 10.0, 14.2):
            assert db_delta_roundtrip(db) == pytest.approx(db, abs=1e-12)

    def test_validation(self):
        with pytest.raises(ContractError):
            GkpParams(-1.0)
        with pytest.raises(ContractError):
            GkpParams(10.0, logical=2)
        with pytest.raises(ContractError):
            db_from_delta(0.0)


class TestCoefficients:
    def test_low_squeezing_approaches_vacuum(self):
        v = gkp_coefficients(GkpParams(0.0), 8)
        assert fidelity(v, basis_state(0, 8)) > 0.9

    @pytest.mark.parametrize("db", [6.0, 10.0, 13.0])
    def test_logical_zero_even_support(self, db):
        v = gkp_coefficients(GkpParams(db), 32)
        assert np.abs(v.amplitudes[1::2]).max() < 1e-12

    def test_normalized(self):
        v = gkp_coefficients(GkpParams(9.0), 24)
        assert np.linalg.norm(v.amplitudes) == pytest.approx(1.0, abs=1e-12)

    def test_logical_one_differs(self):
        v0 = gkp_coefficients(GkpParams(10.0), 24)
        v1 = gkp_coefficients(GkpParams(10.0, logical=1), 24)
        assert fidelity(v0, v1) < 0.5

    def test_negative_cutoff_rejected(self):
        with pytest.raises(ContractError):
            gkp_coefficients(GkpParams(10.0), -1)


class TestTruncationFidelity:
    # the ~99 / ~99.9 / ~99.99 % anchors at 10 dB
    @pytest.mark.parametrize(
        "n_max,lo,hi",
        [(24, 0.985, 0.995), (32, 0.9985, 0.9995), (42, 0.99985, 0.99995)],
    )
    def test_ten_db_anchors(self, n_max, lo, hi):
        f = truncation_fidelity(GkpParams(10.0), n_max)
        assert lo <= f <= hi

    def test_monotone_in_cutoff(self):
        p = GkpParams(10.0)
        fids = [truncation_fidelity(p, n) for n in (8, 16, 24, 32, 48)]
        assert all(b >= a for a, b in zip(fids, fids[1:]))
        assert fids[-1] > 0.9999

    def test_sharper_combs_need_more_photons(self):
        for n_max in (16, 24, 32):
            fids = [truncation_fidelity(GkpParams(db), n_max) for db in (6.0, 8.0, 10.0, 12.0)]
            assert all(b <= a + 1e-12 for a, b in zip(fids, fids[1:]))
