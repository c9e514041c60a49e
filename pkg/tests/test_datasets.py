import gzip
import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from smcomm.datasets import build_idx, load_idx_files, make_dataset, make_synthetic, parse_idx
from smcomm.errors import ConfigurationError, ParseError
from smcomm.probe import fit_probe


def hand_blob():
    """Two 2x2 images written byte by byte from the IDX layout."""
    images = struct.pack(">IIII", 0x00000803, 2, 2, 2) + bytes([0, 255, 128, 0, 64, 32, 16, 8])
    labels = struct.pack(">II", 0x00000801, 2) + bytes([7, 3])
    return images, labels


class TestIdx:
    def test_hand_built(self):
        ds = parse_idx(*hand_blob(), heldout_fraction=0.0)
        np.testing.assert_array_equal(ds.samples[0], [0.0, 1.0, 128 / 255, 0.0])
        np.testing.assert_array_equal(ds.samples[1], np.array([64, 32, 16, 8]) / 255)
        np.testing.assert_array_equal(ds.labels, [7, 3])

    def test_build_matches_hand_blob(self):
        img = np.array([[[0, 255], [128, 0]], [[64, 32], [16, 8]]])
        assert build_idx(img, [7, 3]) == hand_blob()

    def test_label_magic_to_image_parser(self):
        _, labels = hand_blob()
        with pytest.raises(ParseError, match="magic") as info:
            parse_idx(labels, labels)
        assert info.value.field == "magic"

    def test_empty_file(self):
        img, lab = build_idx(np.zeros((0, 28, 28)), [])
        ds = parse_idx(img, lab)
        assert len(ds.samples) == 0 and ds.dim == 784

    def test_count_mismatch(self):
        img, _ = hand_blob()
        lab = struct.pack(">II", 0x801, 3) + bytes([1, 2, 3])
        with pytest.raises(ParseError) as info:
            parse_idx(img, lab)
        assert info.value.field == "count"

    @pytest.mark.parametrize("cut, field", [(2, "magic"), (10, "dims"), (18, "pixels")])
    def test_truncated_images(self, cut, field):
        img, lab = hand_blob()
        with pytest.raises(ParseError) as info:
            parse_idx(img[:cut], lab)
        assert info.value.field == field

    def test_truncated_labels(self):
        img, lab = hand_blob()
        with pytest.raises(ParseError) as info:
            parse_idx(img, lab[:9])
        assert info.value.field == "labels"

    def test_gzip_and_files(self, tmp_path):
        img, lab = hand_blob()
        (tmp_path / "i.gz").write_bytes(gzip.compress(img))
        (tmp_path / "l").write_bytes(lab)
        ds = load_idx_files(tmp_path / "i.gz", tmp_path / "l", heldout_fraction=0.0)
        np.testing.assert_array_equal(ds.labels, [7, 3])

    def test_limit(self):
        assert len(parse_idx(*hand_blob(), limit=1).samples) == 1


class TestSynthetic:
    @pytest.mark.parametrize("corpus", ["bars", "blobs"])
    def test_deterministic(self, corpus):
        a = make_synthetic(corpus, 10, seed=4)
        b = make_synthetic(corpus, 10, seed=4)
        np.testing.assert_array_equal(a.samples, b.samples)
        np.testing.assert_array_equal(a.heldout_idx, b.heldout_idx)
        assert not np.array_equal(a.samples, make_synthetic(corpus, 10, seed=5).samples)

    @pytest.mark.parametrize("corpus", ["bars", "blobs"])
    def test_shape_and_range(self, corpus):
        ds = make_synthetic(corpus, 12, seed=0)
        assert ds.samples.shape == (120, 64)
        assert ds.samples.min() >= 0 and ds.samples.max() <= 1
        np.testing.assert_array_equal(np.bincount(ds.labels), [12] * 10)
        assert ds.n_classes == 10

    def test_corpora_differ(self):
        bars = make_synthetic("bars", 30, 0).samples
        blobs = make_synthetic("blobs", 30, 0).samples
        # bars are sparse strokes, blobs are smooth bumps
        assert (bars > 0.5).mean() < (blobs > 0.1).mean()

    def test_linearly_decodable(self):
        ds = make_synthetic("bars", 40, seed=1)
        probe = fit_probe(*ds.train(), n_classes=10)
        assert probe.accuracy(*ds.heldout()) > 0.9

    def test_unknown_corpus(self):
        with pytest.raises(ConfigurationError):
            make_synthetic("digits", 5, 0)


@settings(max_examples=50, deadline=None)
@given(n=st.integers(0, 200), frac=st.floats(0, 0.9), seed=st.integers(0, 1000))
def test_split_is_partition(n, frac, seed):
    ds = make_dataset(np.zeros((n, 2)), np.zeros(n, int), frac, seed)
    both = np.concatenate([ds.train_idx, ds.heldout_idx])
    np.testing.assert_array_equal(np.sort(both), np.arange(n))


def test_probe_is_deterministic():
    ds = make_synthetic("blobs", 10, seed=2)
    a = fit_probe(*ds.train(), n_classes=10, steps=50)
    b = fit_probe(*ds.train(), n_classes=10, steps=50)
    assert a.net.equals(b.net)
