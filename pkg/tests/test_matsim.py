from __future__ import annotations

import numpy as np
import pytest

from patsim.exceptions import ConfigError, DegenerateInput, DimMismatch
from patsim.matsim import (
    SimScore,
    UNDEFINED_SCORE,
    combined,
    cross_sim,
    eds,
    eds_alignment,
    mms,
    pair_diagnostic,
    rv2,
)

from conftest import unit_rows
from oracles import enumerate_best_mean_path, mms_reference, rv2_reference


class TestCrossSim:
    def test_self_cross_has_unit_diagonal(self, rng):
        a = unit_rows(rng, 3, 5)
        c = cross_sim(a, a)
        np.testing.assert_allclose(np.diag(c), 1.0, atol=1e-9)

    def test_orthogonal_rows_give_zero(self):
        a = np.eye(2, 6)
        b = np.eye(2, 6, k=2)
        np.testing.assert_allclose(cross_sim(a, b), 0.0, atol=1e-12)

    def test_single_rows_give_dot_product(self, rng):
        a = unit_rows(rng, 1, 4)
        b = unit_rows(rng, 1, 4)
        c = cross_sim(a, b)
        assert c.shape == (1, 1)
        assert c[0, 0] == pytest.approx(float(a[0] @ b[0]), abs=1e-12)

    def test_dim_mismatch(self, rng):
        with pytest.raises(DimMismatch):
            cross_sim(unit_rows(rng, 2, 4), unit_rows(rng, 2, 5))

    def test_entries_within_cosine_bounds(self, rng):
        c = cross_sim(unit_rows(rng, 6, 3), unit_rows(rng, 5, 3))
        assert np.all(np.abs(c) <= 1 + 1e-9)


class TestRv2:
    def test_self_similarity_is_one(self, rng):
        for _ in range(20):
            a = unit_rows(rng, int(rng.integers(2, 9)), int(rng.integers(2, 7)))
            score = rv2(a, a)
            assert score.defined
            assert score.value == pytest.approx(1.0, abs=1e-12)

    def test_column_reflection_gives_minus_one(self, rng):
        # with d = 2 the off-diagonal cross-product flips sign when one
        # column is negated, so the correlation is exactly inverted
        a = unit_rows(rng, 5, 2)
        b = a.copy()
        b[:, 0] = -b[:, 0]
        score = rv2(a, b)
        assert score.defined
        assert score.value == pytest.approx(-1.0, abs=1e-9)

    def test_matches_straight_line_reference(self, rng):
        for _ in range(60):
            n1 = int(rng.integers(1, 21))
            n2 = int(rng.integers(1, 21))
            d = int(rng.integers(2, 17))
            a = unit_rows(rng, n1, d)
            b = unit_rows(rng, n2, d)
            want = rv2_reference(a, b)
            got = rv2(a, b)
            if want is None:
                assert not got.defined
            else:
                assert got.defined
                assert got.value == pytest.approx(want, abs=1e-12)

    def test_orthogonal_columns_degenerate(self):
        score = rv2(np.eye(3), np.eye(3))
        assert score == UNDEFINED_SCORE or not score.defined
        assert not score.defined

    def test_row_permutation_invariance(self, rng):
        a = unit_rows(rng, 7, 4)
        b = unit_rows(rng, 5, 4)
        perm = rng.permutation(7)
        assert rv2(a, b).value == pytest.approx(
            rv2(a[perm], b).value, abs=1e-13
        )

    def test_bounds(self, rng):
        for _ in range(40):
            a = unit_rows(rng, int(rng.integers(2, 8)), 3)
            b = unit_rows(rng, int(rng.integers(2, 8)), 3)
            s = rv2(a, b)
            if s.defined:
                assert -1 - 1e-9 <= s.value <= 1 + 1e-9


class TestMms:
    def test_self_similarity_is_one(self, rng):
        a = unit_rows(rng, 6, 4)
        assert mms(a, a).value == pytest.approx(1.0, abs=1e-9)

    def test_single_rows_equal_cosine(self, rng):
        a = unit_rows(rng, 1, 5)
        b = unit_rows(rng, 1, 5)
        assert mms(a, b).value == pytest.approx(float(a[0] @ b[0]), abs=1e-12)

    def test_matches_loop_reference(self, rng):
        for _ in range(40):
            a = unit_rows(rng, int(rng.integers(1, 6)), 4)
            b = unit_rows(rng, int(rng.integers(1, 6)), 4)
            assert mms(a, b).value == pytest.approx(mms_reference(a, b), abs=1e-12)

    def test_row_permutation_invariance(self, rng):
        a = unit_rows(rng, 6, 4)
        b = unit_rows(rng, 4, 4)
        pa = rng.permutation(6)
        pb = rng.permutation(4)
        assert mms(a, b).value == pytest.approx(mms(a[pa], b[pb]).value, abs=1e-13)


class TestEds:
    def test_single_note_pairs_equal_cosine(self, rng):
        a = unit_rows(rng, 1, 5)
        b = unit_rows(rng, 1, 5)
        assert eds(a, b).value == pytest.approx(float(a[0] @ b[0]), abs=1e-12)

    def test_self_similarity_is_one(self, rng):
        a = unit_rows(rng, 5, 4)
        assert eds(a, a).value == pytest.approx(1.0, abs=1e-9)

    def test_matches_enumeration(self, rng):
        for _ in range(40):
            a = unit_rows(rng, int(rng.integers(1, 6)), 3)
            b = unit_rows(rng, int(rng.integers(1, 6)), 3)
            want = enumerate_best_mean_path(a @ b.T)
            assert eds(a, b).value == pytest.approx(want, abs=1e-9)

    def test_order_sensitivity_witness(self):
        # aligned identical sequences score 1; reversing one drops the score
        a = np.eye(2)
        swapped = a[::-1].copy()
        aligned = eds(a, a).value
        reversed_ = eds(swapped, a).value
        assert aligned == pytest.approx(1.0, abs=1e-12)
        assert reversed_ == pytest.approx(1.0 / 3.0, abs=1e-12)
        assert aligned - reversed_ > 0.5

    def test_alignment_path_shape(self, rng):
        a = unit_rows(rng, 4, 3)
        b = unit_rows(rng, 6, 3)
        score, path = eds_alignment(a, b)
        assert path[0] == (0, 0)
        assert path[-1] == (3, 5)
        assert score.defined


class TestSymmetryAndBounds:
    def test_all_methods_symmetric(self, rng):
        for _ in range(30):
            a = unit_rows(rng, int(rng.integers(1, 7)), 4)
            b = unit_rows(rng, int(rng.integers(1, 7)), 4)
            for method in (rv2, mms, eds):
                ab = method(a, b)
                ba = method(b, a)
                assert ab.defined == ba.defined
                if ab.defined:
                    assert ab.value == pytest.approx(ba.value, abs=1e-12)
                    assert -1 - 1e-9 <= ab.value <= 1 + 1e-9


class TestSyntheticCrossPatterns:
    """Block, diagonal and anti-diagonal cross structures separate the
    methods: the alignment score is order-aware, the matching score is
    not, and the correlation score ignores row order entirely."""

    def basis_patients(self, order, d=8):
        rows = np.eye(d)[list(order)]
        return np.ascontiguousarray(rows)

    def test_methods_rank_patterns_differently(self):
        n = 4
        ref = self.basis_patients(range(n))
        diag = self.basis_patients(range(n))
        anti = self.basis_patients(range(n - 1, -1, -1))
        half = n // 2
        block = self.basis_patients([0] * half + [1] * half)

        eds_scores = {
            "diag": eds(ref, diag).value,
            "anti": eds(ref, anti).value,
            "block": eds(ref, block).value,
        }
        mms_scores = {
            "diag": mms(ref, diag).value,
            "anti": mms(ref, anti).value,
        }
        assert eds_scores["diag"] == pytest.approx(1.0, abs=1e-12)
        assert eds_scores["diag"] > eds_scores["anti"]
        assert mms_scores["diag"] == pytest.approx(mms_scores["anti"], abs=1e-12)

        _, path = eds_alignment(ref, anti)
        assert path[0] == (0, 0) and path[-1] == (n - 1, n - 1)
        for (i0, j0), (i1, j1) in zip(path, path[1:]):
            assert (i1 - i0, j1 - j0) in {(1, 0), (0, 1), (1, 1)}


class TestPairDiagnostic:
    def test_eds_record_carries_path(self, rng):
        import json

        a = unit_rows(rng, 3, 4)
        b = unit_rows(rng, 2, 4)
        record = pair_diagnostic(a, b, "eds")
        assert record["method"] == "eds"
        assert record["defined"] is True
        assert record["path"][0] == [0, 0]
        assert record["path"][-1] == [2, 1]
        json.dumps(record)  # must be serializable as-is

    def test_undefined_score_serialized_as_null(self):
        record = pair_diagnostic(np.eye(3), np.eye(3), "rv2")
        assert record["score"] is None
        assert record["defined"] is False
        assert "path" not in record

    def test_unknown_method(self, rng):
        with pytest.raises(ConfigError):
            pair_diagnostic(unit_rows(rng, 2, 3), unit_rows(rng, 2, 3), "bogus")


class TestCombined:
    def test_plain_mean(self):
        scores = [SimScore(0.2, True), SimScore(0.4, True), SimScore(0.6, True)]
        assert combined(scores).value == pytest.approx(0.4, abs=1e-12)

    def test_undefined_member_excluded(self):
        scores = [SimScore(0.5, True), UNDEFINED_SCORE, SimScore(0.7, True)]
        out = combined(scores)
        assert out.defined
        assert out.value == pytest.approx(0.6, abs=1e-12)

    def test_all_undefined_propagates(self):
        out = combined([UNDEFINED_SCORE] * 3)
        assert not out.defined

    def test_empty_input_raises(self):
        with pytest.raises(DegenerateInput):
            combined([])
