import logging
import math
from decimal import Decimal

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deepseqcoco.dataset import (DISEASE_CLASSES, BatchPlan, ImageSet, LabeledSample, SplitConfig, batches,
                                 decode_image, make_synthetic_dataset, read_manifest, resize, scan_dataset, split,
                                 train_size, write_ppm)
from deepseqcoco.errors import DataError, DecodeError, SpecError


def fake_samples(n):
    return [LabeledSample(f"img_{i}.ppm", i % 5, f"c{i % 5}") for i in range(n)]


class TestSplit:
    def test_corpus_counts(self):
        train, val = split(fake_samples(5858), SplitConfig(0.8, seed=0))
        assert (len(train), len(val)) == (4687, 1171)

    def test_ten(self):
        assert train_size(10, 0.8) == 8
        train, val = split(fake_samples(10), SplitConfig(0.8))
        assert (len(train), len(val)) == (8, 2)

    def test_same_seed_same_membership(self):
        a = split(fake_samples(100), SplitConfig(0.8, seed=5))
        b = split(fake_samples(100), SplitConfig(0.8, seed=5))
        assert a == b
        assert a != split(fake_samples(100), SplitConfig(0.8, seed=6))

    def test_no_shuffle_keeps_order(self):
        train, val = split(fake_samples(10), SplitConfig(0.5, shuffle=False))
        assert train == fake_samples(10)[:5]

    @settings(max_examples=200, deadline=None)
    @given(st.integers(2, 3000), st.floats(0.01, 0.99), st.integers(0, 2 ** 32 - 1))
    def test_partition(self, n, fraction, seed):
        samples = fake_samples(n)
        train, val = split(samples, SplitConfig(fraction, seed=seed))
        assert len(train) + len(val) == n
        assert 1 <= len(train) <= n - 1
        assert not set(s.path for s in train) & set(s.path for s in val)
        assert set(s.path for s in train) | set(s.path for s in val) == set(s.path for s in samples)
        expected = math.ceil(Decimal(repr(fraction)) * n)
        assert len(train) == min(max(expected, 1), n - 1)

    def test_invalid(self):
        with pytest.raises(SpecError):
            SplitConfig(1.0)
        with pytest.raises(DataError):
            split(fake_samples(1), SplitConfig())


class TestScan:
    def test_disease_classes(self, tmp_path):
        classes = make_synthetic_dataset(tmp_path, num_images=10, size=8)
        samples, roster = scan_dataset(tmp_path)
        assert roster == sorted(DISEASE_CLASSES) == classes and len(roster) == 5
        assert len(samples) == 10
        assert all(s.class_name == roster[s.class_index] for s in samples)

    def test_single_class(self, tmp_path):
        (tmp_path / "only").mkdir()
        for i in range(3):
            write_ppm(tmp_path / "only" / f"{i}.ppm", np.zeros((2, 2, 3)))
        samples, roster = scan_dataset(tmp_path)
        assert roster == ["only"] and [s.class_index for s in samples] == [0, 0, 0]

    def test_duplicate_names(self, tmp_path):
        for c in ("a", "b"):
            (tmp_path / c).mkdir()
            write_ppm(tmp_path / c / "x.ppm", np.zeros((2, 2, 3)))
        samples, _ = scan_dataset(tmp_path)
        assert len({s.path for s in samples}) == 2

    def test_empty_class_warns(self, tmp_path, caplog):
        (tmp_path / "a").mkdir()
        (tmp_path / "b").mkdir()
        write_ppm(tmp_path / "a" / "x.ppm", np.zeros((2, 2, 3)))
        with caplog.at_level(logging.WARNING):
            samples, roster = scan_dataset(tmp_path)
        assert roster == ["a", "b"] and len(samples) == 1
        assert "no images" in caplog.text

    def test_no_classes(self, tmp_path):
        with pytest.raises(DataError):
            scan_dataset(tmp_path)

    def test_manifest(self, tmp_path):
        write_ppm(tmp_path / "p.ppm", np.zeros((2, 2, 3)))
        write_ppm(tmp_path / "q.ppm", np.zeros((2, 2, 3)))
        (tmp_path / "m.tsv").write_text("# comment\np.ppm\tleaf_rot\nq.ppm\tbud_rot\n")
        samples, classes = read_manifest(tmp_path / "m.tsv")
        assert classes == ["bud_rot", "leaf_rot"]
        assert [(s.path.name, s.class_index) for s in samples] == [("p.ppm", 1), ("q.ppm", 0)]
        (tmp_path / "bad.tsv").write_text("p.ppm leaf_rot\n")
        with pytest.raises(DataError, match=":1:"):
            read_manifest(tmp_path / "bad.tsv")


class TestDecode:
    def test_p6_bytes(self, tmp_path):
        pixels = bytes(range(12))
        (tmp_path / "a.ppm").write_bytes(b"P6\n2 2\n255\n" + pixels)
        img = decode_image(tmp_path / "a.ppm")
        assert img.shape == (2, 2, 3)
        np.testing.assert_array_equal(img.reshape(-1), np.arange(12))

    def test_header_comment(self, tmp_path):
        (tmp_path / "a.ppm").write_bytes(b"P6 # made by hand\n1 1 255\n" + bytes([1, 2, 3]))
        np.testing.assert_array_equal(decode_image(tmp_path / "a.ppm").reshape(-1), [1, 2, 3])

    def test_grayscale(self, tmp_path):
        (tmp_path / "g.pgm").write_bytes(b"P5\n2 1\n255\n" + bytes([10, 200]))
        img = decode_image(tmp_path / "g.pgm")
        assert img.shape == (1, 2, 3)
        np.testing.assert_array_equal(img[0, 1], [200, 200, 200])

    def test_truncated(self, tmp_path):
        (tmp_path / "t.ppm").write_bytes(b"P6\n2 2\n255\n" + bytes(5))
        with pytest.raises(DecodeError, match="t.ppm"):
            decode_image(tmp_path / "t.ppm")

    def test_garbage(self, tmp_path):
        (tmp_path / "x.ppm").write_bytes(b"not an image")
        with pytest.raises(DecodeError):
            decode_image(tmp_path / "x.ppm")

    def test_missing(self, tmp_path):
        with pytest.raises(DecodeError):
            decode_image(tmp_path / "nope.ppm")

    def test_png_via_pillow(self, tmp_path):
        pil = pytest.importorskip("PIL.Image")
        arr = np.random.default_rng(0).integers(0, 256, size=(3, 4, 3), dtype=np.uint8)
        pil.fromarray(arr).save(tmp_path / "a.png")
        np.testing.assert_array_equal(decode_image(tmp_path / "a.png"), arr)

    def test_write_read_round_trip(self, tmp_path, rng):
        arr = rng.integers(0, 256, size=(5, 7, 3)).astype(np.float32)
        write_ppm(tmp_path / "r.ppm", arr)
        np.testing.assert_array_equal(decode_image(tmp_path / "r.ppm"), arr)


class TestResize:
    def test_source_to_target(self, rng):
        assert resize(rng.uniform(0, 255, size=(768, 1024, 3)), (300, 300)).shape == (300, 300, 3)

    def test_same_size_unchanged(self, rng):
        img = rng.uniform(0, 255, size=(30, 30, 3))
        assert np.max(np.abs(resize(img, (30, 30)) - img)) <= 1 / 255

    def test_constant(self):
        img = np.full((17, 23, 3), 42.0)
        for target in ((5, 5), (40, 31), (1, 1)):
            np.testing.assert_allclose(resize(img, target), 42.0, atol=1e-4)

    def test_downsample_by_two_averages(self):
        img = np.arange(16.0).reshape(4, 4, 1).repeat(3, axis=2)
        out = resize(img, (2, 2))
        np.testing.assert_allclose(out[..., 0], [[2.5, 4.5], [10.5, 12.5]])


@pytest.fixture(scope="module")
def hundred(tmp_path_factory):
    root = tmp_path_factory.mktemp("hundred")
    make_synthetic_dataset(root, num_images=100, size=8, seed=1)
    return scan_dataset(root)[0]


class TestBatches:
    def test_sizes(self, hundred):
        ds = ImageSet(hundred, (8, 8))
        sizes = [len(y) for _, y in batches(ds, BatchPlan(32), epoch=1)]
        assert sizes == [32, 32, 32, 4]
        assert [len(y) for _, y in batches(ds, BatchPlan(32, drop_last=True), 1)] == [32, 32, 32]

    def test_deterministic_and_epoch_dependent(self, hundred):
        ds = ImageSet(hundred, (8, 8))
        a = [y.tolist() for _, y in batches(ds, BatchPlan(32, seed=3), 1)]
        b = [y.tolist() for _, y in batches(ds, BatchPlan(32, seed=3), 1)]
        c = [y.tolist() for _, y in batches(ds, BatchPlan(32, seed=3), 2)]
        assert a == b and a != c

    def test_cache(self, hundred):
        ds = ImageSet(hundred, (8, 8))
        for _ in batches(ds, BatchPlan(32), 1):
            pass
        assert ds.reads == 100
        first = [x.copy() for x, _ in batches(ds, BatchPlan(32, shuffle=False))]
        for _ in batches(ds, BatchPlan(32), 2):
            pass
        assert ds.reads == 100
        uncached = ImageSet(hundred, (8, 8), cache=False)
        again = [x for x, _ in batches(uncached, BatchPlan(32, shuffle=False))]
        assert uncached.reads == 100
        assert all(np.array_equal(p, q) for p, q in zip(first, again))

    def test_batch_contents(self, hundred):
        ds = ImageSet(hundred, (8, 8))
        x, y = next(batches(ds, BatchPlan(4, shuffle=False)))
        assert x.shape == (4, 8, 8, 3) and x.dtype == np.float32 and y.dtype == np.int64
        np.testing.assert_array_equal(y, [s.class_index for s in hundred[:4]])


def test_synthetic_is_reproducible(tmp_path):
    make_synthetic_dataset(tmp_path / "a", num_images=10, size=8, seed=4)
    make_synthetic_dataset(tmp_path / "b", num_images=10, size=8, seed=4)
    for p in sorted((tmp_path / "a").rglob("*.ppm")):
        assert p.read_bytes() == (tmp_path / "b" / p.relative_to(tmp_path / "a")).read_bytes()
