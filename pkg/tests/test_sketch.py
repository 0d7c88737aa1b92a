import numpy as np
import pytest

from dpsketch import sketch
from dpsketch.errors import CapacityError, ContractViolationError, FormatError
from dpsketch.sketch import GaussianSketcher, Sketch, deserialize, merge, serialize


class TestSketcherConstruction:
    def test_same_seed_identical(self):
        a = GaussianSketcher(7, 4, 8)
        b = GaussianSketcher(7, 4, 8)
        assert np.array_equal(a.omega, b.omega)

    def test_different_seed_differs(self):
        a = GaussianSketcher(7, 4, 8)
        b = GaussianSketcher(8, 4, 8)
        assert not np.array_equal(a.omega, b.omega)

    def test_on_demand_matches_stored(self):
        a = GaussianSketcher(11, 5, 9, store_omega=True)
        b = GaussianSketcher(11, 5, 9, store_omega=False)
        assert np.array_equal(a.omega, b.omega)
        assert np.array_equal(a.omega[:, 3:7], b.column_block(3, 7))

    def test_moment_bounds(self):
        sk = GaussianSketcher(3, 100, 100)
        n = 100 * 100
        assert abs(sk.omega.mean()) <= 5 / np.sqrt(n)
        assert abs(sk.omega.var() - 1.0) <= 10 / np.sqrt(n)

    def test_capacity_error(self):
        with pytest.raises(CapacityError):
            GaussianSketcher(0, 1 << 14, 1 << 14)

    def test_bad_dims(self):
        with pytest.raises(ContractViolationError):
            GaussianSketcher(0, 0, 5)


class TestProjectionOps:
    def test_psg1_zero(self):
        sk = GaussianSketcher(1, 4, 6)
        np.testing.assert_array_equal(sk.psg1(np.zeros(6)), np.zeros(4))

    def test_psg1_basis_vector(self):
        sk = GaussianSketcher(2, 4, 6)
        for i in range(6):
            e = np.zeros(6)
            e[i] = 1.0
            np.testing.assert_allclose(sk.psg1(e), sk.omega[:, i], atol=1e-14)

    @pytest.mark.parametrize("seed", range(25))
    def test_psg_linearity(self, seed):
        rng = np.random.default_rng(seed)
        sk = GaussianSketcher(seed, 5, 8)
        u, v = rng.standard_normal(8), rng.standard_normal(8)
        a, b = rng.uniform(-2, 2, size=2)
        for op in (sk.psg1, sk.psg2):
            lhs = op(a * u + b * v)
            rhs = a * op(u) + b * op(v)
            assert np.linalg.norm(lhs - rhs) <= 1e-10 * max(np.linalg.norm(rhs), 1e-30)

    def test_psg2_zero(self):
        sk = GaussianSketcher(1, 4, 6)
        np.testing.assert_array_equal(sk.psg2(np.zeros(6)), np.zeros(6))

    def test_psg2_composition_identity(self):
        sk = GaussianSketcher(9, 3, 7)
        v = np.random.default_rng(9).standard_normal(7)
        assert np.array_equal(sk.psg2(v), sk.omega.T @ sk.psg1(v))

    def test_psg2_expectation_is_identity(self):
        # E[omega.T omega] = r I, so the r-rescaled reprojection is unbiased.
        v = np.array([1.0, -2.0, 0.5, 3.0])
        trials = 10_000
        r = 4
        total = np.zeros(4)
        total_sq = np.zeros(4)
        for t in range(trials):
            out = GaussianSketcher(40_000 + t, r, 4).psg2(v) / r
            total += out
            total_sq += out * out
        mean = total / trials
        stderr = np.sqrt((total_sq / trials - mean**2) / trials)
        assert np.all(np.abs(mean - v) <= 3 * stderr)

    def test_length_mismatch(self):
        sk = GaussianSketcher(1, 4, 6)
        with pytest.raises(ContractViolationError):
            sk.psg1(np.zeros(5))
        with pytest.raises(ContractViolationError):
            sk.psg2(np.zeros(7))


class TestSketchUpdates:
    def _pair(self, kind, seed=21, r=4, m=6, c=5):
        sk = GaussianSketcher(seed, r, m)
        return sk, Sketch.empty(sk, kind, c)

    def test_cancellation(self):
        sk, s = self._pair("psg1")
        v = np.random.default_rng(0).standard_normal(6)
        s.update_column(sk, 2, v)
        s.update_column(sk, 2, -v)
        assert np.linalg.norm(s.data) <= 1e-12

    def test_update_linearity(self):
        sk, s1 = self._pair("psg2")
        _, s2 = self._pair("psg2")
        rng = np.random.default_rng(1)
        v, w = rng.standard_normal(6), rng.standard_normal(6)
        s1.update_column(sk, 0, v)
        s1.update_column(sk, 0, w)
        s2.update_column(sk, 0, v + w)
        assert np.allclose(s1.data, s2.data, rtol=0, atol=1e-10)

    def test_streamed_equals_batch(self):
        sk, s = self._pair("psg1", c=5)
        a = np.random.default_rng(2).standard_normal((6, 5))
        for j in range(5):
            s.update_column(sk, j, a[:, j])
        np.testing.assert_allclose(s.data, sk.omega @ a, rtol=1e-12, atol=1e-12)

    def test_psg2_sketch_rows(self):
        _, s = self._pair("psg2")
        assert s.data.shape[0] == 6

    def test_fingerprint_mismatch(self):
        sk, s = self._pair("psg1")
        other = GaussianSketcher(99, 4, 6)
        with pytest.raises(ContractViolationError):
            s.update_column(other, 0, np.zeros(6))

    def test_zero_update_is_noop(self):
        sk, s = self._pair("psg1")
        before = s.data.copy()
        s.update_column(sk, 1, np.zeros(6))
        assert np.array_equal(s.data, before)


class TestMerge:
    def test_merge_with_zero(self):
        sk = GaussianSketcher(5, 3, 4)
        s = Sketch.empty(sk, "psg1", 2)
        s.update_column(sk, 0, np.ones(4))
        z = Sketch.empty(sk, "psg1", 2)
        merged = merge(s, z)
        assert np.array_equal(merged.data, s.data)

    def test_merge_commutes(self):
        sk = GaussianSketcher(5, 3, 4)
        a = Sketch.empty(sk, "psg1", 2)
        b = Sketch.empty(sk, "psg1", 2)
        a.update_column(sk, 0, np.arange(4.0))
        b.update_column(sk, 1, np.ones(4))
        assert np.array_equal(merge(a, b).data, merge(b, a).data)

    def test_sharded_stream_equals_single_pass(self):
        sk = GaussianSketcher(17, 4, 6)
        updates = [
            (j % 3, np.random.default_rng(j).standard_normal(6)) for j in range(12)
        ]
        single = Sketch.empty(sk, "psg1", 3)
        for col, v in updates:
            single.update_column(sk, col, v)
        shards = [Sketch.empty(sk, "psg1", 3) for _ in range(4)]
        for idx, (col, v) in enumerate(updates):
            shards[idx % 4].update_column(sk, col, v)
        combined = shards[0]
        for piece in shards[1:]:
            combined = merge(combined, piece)
        scale = max(np.linalg.norm(single.data), 1e-30)
        assert np.linalg.norm(combined.data - single.data) <= 1e-10 * scale

    def test_mismatch_errors(self):
        sk = GaussianSketcher(5, 3, 4)
        other = GaussianSketcher(6, 3, 4)
        with pytest.raises(ContractViolationError):
            merge(Sketch.empty(sk, "psg1", 2), Sketch.empty(sk, "psg2", 2))
        with pytest.raises(ContractViolationError):
            merge(Sketch.empty(sk, "psg1", 2), Sketch.empty(other, "psg1", 2))


class TestSerialization:
    def test_empty_roundtrip(self):
        sk = GaussianSketcher(1, 3, 4)
        s = Sketch.empty(sk, "psg1", 0)
        back = deserialize(serialize(s))
        assert back.col_count == 0 and back.kind == "psg1"

    def test_roundtrip_bit_exact(self):
        sk = GaussianSketcher(23, 16, 20)
        s = Sketch.empty(sk, "psg1", 32)
        rng = np.random.default_rng(4)
        for j in range(32):
            s.update_column(sk, j, rng.standard_normal(20))
        blob = serialize(s)
        back = deserialize(blob)
        assert np.array_equal(back.data, s.data)
        assert serialize(back) == blob

    def test_wrong_magic(self):
        sk = GaussianSketcher(1, 3, 4)
        blob = bytearray(serialize(Sketch.empty(sk, "psg1", 2)))
        blob[:4] = b"NOPE"
        with pytest.raises(FormatError):
            deserialize(bytes(blob))

    def test_truncation(self):
        sk = GaussianSketcher(1, 3, 4)
        blob = serialize(Sketch.empty(sk, "psg1", 2))
        with pytest.raises(FormatError):
            deserialize(blob[:-5])
        with pytest.raises(FormatError):
            deserialize(blob[:10])

    def test_fingerprint_tamper(self):
        sk = GaussianSketcher(1, 3, 4)
        blob = bytearray(serialize(Sketch.empty(sk, "psg1", 2)))
        blob[sketch._HEADER.size - 8] ^= 0xFF  # flip a fingerprint byte
        with pytest.raises(FormatError):
            deserialize(bytes(blob))
