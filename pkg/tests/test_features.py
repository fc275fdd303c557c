import numpy as np
import pytest

from hiertopo.errors import DomainError
from hiertopo.features import (
    DESCRIPTOR_BYTES,
    FeatureSet,
    extract_local_features,
    geometric_inliers,
    hamming_distance_matrix,
    hamming_match,
    image_likelihoods,
    match_points,
    read_feature_sets,
    verify_match,
    write_feature_sets,
)


def random_feature_set(rng, count, image_id=0):
    xy = rng.uniform(20, 230, size=(count, 2)).astype(np.float32)
    desc = rng.integers(0, 256, size=(count, DESCRIPTOR_BYTES), dtype=np.uint8)
    return FeatureSet(image_id, xy, desc)


def hamming_oracle(a: bytes, b: bytes) -> int:
    return sum(bin(x ^ y).count("1") for x, y in zip(a, b))


class TestExtraction:
    def test_constant_image_has_no_features(self):
        fs = extract_local_features(np.full((128, 128), 40.0))
        assert len(fs) == 0

    def test_count_bounded_by_grid(self):
        rng = np.random.default_rng(0)
        img = rng.random((160, 160)) * 255
        fs = extract_local_features(img, max_per_cell=1, grid=6)
        assert 0 < len(fs) <= 36

    def test_keypoints_away_from_border(self):
        rng = np.random.default_rng(1)
        img = rng.random((96, 96)) * 255
        fs = extract_local_features(img)
        assert np.all(fs.xy[:, 0] >= 16)
        assert np.all(fs.xy[:, 0] < 96 - 16)
        assert np.all(fs.xy[:, 1] >= 16)
        assert np.all(fs.xy[:, 1] < 96 - 16)

    def test_translated_image_descriptors_match(self):
        # bright dots on black; dots survive a 5 px shift within their cell
        rng = np.random.default_rng(2)
        img = np.zeros((128, 128))
        for y in range(24, 105, 16):
            for x in range(24, 100, 16):
                img[y + rng.integers(-2, 3), x + rng.integers(-2, 3)] = 255.0
        shifted = np.zeros_like(img)
        shifted[:, 5:] = img[:, :-5]

        fs_a = extract_local_features(img, max_per_cell=1, grid=8)
        fs_b = extract_local_features(shifted, max_per_cell=1, grid=8)
        pos_a = {(float(x), float(y)): d for (x, y), d in zip(fs_a.xy, fs_a.descriptors)}
        checked = 0
        for (x, y), d in zip(fs_b.xy, fs_b.descriptors):
            key = (float(x) - 5.0, float(y))
            if key in pos_a:
                assert hamming_oracle(pos_a[key].tobytes(), d.tobytes()) == 0
                checked += 1
        assert checked >= 5

    def test_deterministic(self):
        rng = np.random.default_rng(9)
        img = rng.random((80, 80)) * 255
        a = extract_local_features(img)
        b = extract_local_features(img)
        assert np.array_equal(a.xy, b.xy)
        assert np.array_equal(a.descriptors, b.descriptors)


class TestHammingMatch:
    def test_distance_values(self):
        a = FeatureSet(0, np.zeros((1, 2)), np.zeros((1, 32), dtype=np.uint8))
        b = FeatureSet(1, np.zeros((1, 2)), np.full((1, 32), 0xFF, dtype=np.uint8))
        d = hamming_distance_matrix(a, b)
        assert d[0, 0] == 256  # 8 per byte over 32 complementary bytes
        assert hamming_distance_matrix(a, a)[0, 0] == 0

    def test_matrix_matches_bytewise_oracle(self):
        rng = np.random.default_rng(3)
        q = random_feature_set(rng, 8)
        t = random_feature_set(rng, 6)
        d = hamming_distance_matrix(q, t)
        for i in range(8):
            for j in range(6):
                assert d[i, j] == hamming_oracle(
                    q.descriptors[i].tobytes(), t.descriptors[j].tobytes()
                )

    def test_identical_sets_identity_matching(self):
        rng = np.random.default_rng(4)
        fs = random_feature_set(rng, 40)
        pairs = hamming_match(fs, fs)
        assert pairs.shape[0] == 40
        assert np.array_equal(pairs[:, 0], pairs[:, 1])
        d = hamming_distance_matrix(fs, fs)
        assert all(d[i, j] == 0 for i, j in pairs)

    def test_random_sets_rarely_match(self):
        rng = np.random.default_rng(5)
        rates = []
        for _ in range(100):
            q = random_feature_set(rng, 200)
            t = random_feature_set(rng, 200, image_id=1)
            pairs = hamming_match(q, t)
            rates.append(pairs.shape[0] / 200)
        assert float(np.mean(rates)) < 0.05

    def test_symmetric_under_swap(self):
        rng = np.random.default_rng(6)
        q = random_feature_set(rng, 60)
        t = random_feature_set(rng, 50, image_id=1)
        ab = {(int(i), int(j)) for i, j in hamming_match(q, t)}
        ba = {(int(j), int(i)) for i, j in hamming_match(t, q)}
        assert ab == ba

    def test_each_feature_used_once(self):
        rng = np.random.default_rng(7)
        q = random_feature_set(rng, 80)
        t = random_feature_set(rng, 80, image_id=1)
        pairs = hamming_match(q, t)
        assert len(set(pairs[:, 0].tolist())) == pairs.shape[0]
        assert len(set(pairs[:, 1].tolist())) == pairs.shape[0]

    def test_invalid_ratio(self):
        rng = np.random.default_rng(8)
        fs = random_feature_set(rng, 4)
        with pytest.raises(DomainError):
            hamming_match(fs, fs, ratio=1.5)


class TestBatchMatchCounts:
    def test_matches_pairwise_path(self):
        from hiertopo.features import batch_match_counts

        rng = np.random.default_rng(17)
        q = random_feature_set(rng, 32)
        targets = [random_feature_set(rng, n, image_id=i)
                   for i, n in enumerate([32, 32, 17, 1, 0, 32, 17])]
        targets.append(FeatureSet(9, q.xy.copy(), q.descriptors.copy()))
        got = batch_match_counts(q, targets)
        want = [hamming_match(q, t).shape[0] for t in targets]
        assert got.tolist() == want

    def test_empty_query(self):
        from hiertopo.features import batch_match_counts

        rng = np.random.default_rng(18)
        q = FeatureSet(0, np.zeros((0, 2)), np.zeros((0, DESCRIPTOR_BYTES)))
        assert batch_match_counts(q, [random_feature_set(rng, 5)]).tolist() == [0]


class TestGeometricInliers:
    @staticmethod
    def similarity(points, scale, angle, tx, ty):
        c, s = scale * np.cos(angle), scale * np.sin(angle)
        x, y = points[:, 0], points[:, 1]
        return np.stack([c * x - s * y + tx, s * x + c * y + ty], axis=1)

    def test_exact_transform_all_inliers(self):
        rng = np.random.default_rng(0)
        src = rng.uniform(0, 200, size=(60, 2))
        dst = self.similarity(src, 1.1, 0.3, 14.0, -6.0)
        assert geometric_inliers(src, dst, seed=0) == 60

    def test_single_correspondence_is_zero(self):
        assert geometric_inliers(np.ones((1, 2)), np.ones((1, 2))) == 0

    def test_controlled_outlier_mix(self):
        rng = np.random.default_rng(1)
        src = rng.uniform(0, 256, size=(100, 2))
        dst = self.similarity(src, 0.95, -0.2, 5.0, 9.0)
        dst[50:] = rng.uniform(0, 256, size=(50, 2))  # half become outliers
        for seed in range(20):
            count = geometric_inliers(src, dst, seed=seed)
            assert 50 <= count <= 55

    def test_monotone_on_exact_sets(self):
        rng = np.random.default_rng(2)
        base = rng.uniform(0, 200, size=(10, 2))
        prev = 0
        for extra in range(0, 30, 5):
            pts = np.vstack([base, rng.uniform(0, 200, size=(extra, 2))])
            dst = self.similarity(pts, 1.02, 0.15, 3.0, 4.0)
            count = geometric_inliers(pts, dst, seed=11)
            assert count >= prev
            prev = count

    def test_threshold_must_be_positive(self):
        with pytest.raises(DomainError):
            geometric_inliers(np.ones((3, 2)), np.ones((3, 2)), threshold_px=0.0)


class TestImageLikelihoods:
    def test_equal_scores_uniform(self):
        rng = np.random.default_rng(3)
        q = random_feature_set(rng, 30)
        cands = [random_feature_set(rng, 30, image_id=i) for i in range(4)]
        like = image_likelihoods(q, cands)
        assert like.sum() == pytest.approx(1.0)
        np.testing.assert_allclose(like, 0.25, atol=0.08)

    def test_identical_candidate_wins(self):
        rng = np.random.default_rng(4)
        q = random_feature_set(rng, 40)
        cands = [random_feature_set(rng, 40, image_id=i) for i in range(3)]
        cands.append(FeatureSet(3, q.xy.copy(), q.descriptors.copy()))
        like = image_likelihoods(q, cands)
        assert int(np.argmax(like)) == 3

    def test_single_candidate(self):
        rng = np.random.default_rng(5)
        q = random_feature_set(rng, 10)
        like = image_likelihoods(q, [random_feature_set(rng, 10, image_id=1)])
        np.testing.assert_allclose(like, [1.0])

    def test_empty_candidates_rejected(self):
        rng = np.random.default_rng(6)
        with pytest.raises(DomainError):
            image_likelihoods(random_feature_set(rng, 4), [])


class TestVerifyMatch:
    def test_translated_copy_verifies(self):
        rng = np.random.default_rng(7)
        base = random_feature_set(rng, 64)
        moved = FeatureSet(1, base.xy + np.float32([7.0, -3.0]), base.descriptors.copy())
        assert verify_match(base, moved, seed=0) >= 60

    def test_unrelated_sets_fail_gate(self):
        rng = np.random.default_rng(8)
        a = random_feature_set(rng, 64)
        b = random_feature_set(rng, 64, image_id=1)
        assert verify_match(a, b, seed=0) < 10


class TestLfeaIo:
    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(9)
        sets = [random_feature_set(rng, n, image_id=i) for i, n in enumerate([5, 0, 12])]
        path = tmp_path / "f.lfea"
        write_feature_sets(sets, path)
        loaded = read_feature_sets(path)
        assert len(loaded) == 3
        for orig, back in zip(sets, loaded):
            assert back.image_id == orig.image_id
            assert np.array_equal(back.xy, orig.xy)
            assert np.array_equal(back.descriptors, orig.descriptors)

    def test_truncated_file(self, tmp_path):
        rng = np.random.default_rng(10)
        path = tmp_path / "t.lfea"
        write_feature_sets([random_feature_set(rng, 6)], path)
        raw = path.read_bytes()
        path.write_bytes(raw[:-7])
        from hiertopo.errors import FormatError

        with pytest.raises(FormatError):
            read_feature_sets(path)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.lfea"
        path.write_bytes(b"XXXX\x01")
        from hiertopo.errors import FormatError

        with pytest.raises(FormatError):
            read_feature_sets(path)
