import gzip
import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from kfan.data import (ImageSet, MultiviewSynthConfig, NoiseConfig, TripletDataset,
                       add_stroke_noise, binarize, content_box, encode_idx, encode_multiview,
                       load_idx, load_multiview, make_triplets, one_hot, parse_idx,
                       parse_multiview, planted_bayes_errors, split, synth_multiview, write_idx,
                       write_multiview)
from kfan.errors import DomainError, FormatError
from kfan.rng import make_rng


def idx_images(n, h, w, payload):
    return struct.pack(">I3I", 0x803, n, h, w) + bytes(payload)


def digit_like(rng, h=28, w=28):
    """A binary blob roughly the size of a handwritten digit."""
    img = np.zeros((h, w))
    top, left, bh, bw = content_box(h, w)
    img[top + 3:top + bh - 3, left + 6:left + bw - 6] = rng.random((bh - 6, bw - 12)) < 0.4
    return img.reshape(-1)


# --- IDX ---

def test_idx_header_example():
    images = parse_idx(idx_images(2, 2, 2, [0, 255, 51, 102, 0, 0, 0, 255]))
    assert len(images) == 2 and images.images.shape == (2, 4)
    assert images.images[0, 1] == 1.0 and images.images[0, 2] == pytest.approx(0.2)


def test_idx_labels():
    raw = struct.pack(">II", 0x801, 3) + bytes([7, 0, 9])
    assert list(parse_idx(raw)) == [7, 0, 9]


def test_idx_round_trip_bytes(tmp_path):
    raw = idx_images(3, 2, 3, range(0, 180, 10))
    path = tmp_path / "a-idx3-ubyte"
    write_idx(path, parse_idx(raw))
    assert path.read_bytes() == raw
    gz = tmp_path / "a-idx3-ubyte.gz"
    write_idx(gz, parse_idx(raw))
    assert gzip.decompress(gz.read_bytes()) == raw
    assert np.array_equal(load_idx(gz).images, load_idx(path).images)
    labels = np.array([1, 2, 3])
    assert np.array_equal(parse_idx(encode_idx(labels)), labels)


@pytest.mark.parametrize("raw, offset", [
    (struct.pack(">I3I", 0x802, 1, 1, 1) + b"\0", 0),
    (b"\0\0\x08", 3),
    (struct.pack(">I2I", 0x803, 1, 2), 12),
    (idx_images(2, 2, 2, [0] * 7), 23),
    (idx_images(1, 1, 1, [0, 0]), 17),
])
def test_idx_format_errors_carry_offsets(raw, offset):
    with pytest.raises(FormatError) as info:
        parse_idx(raw)
    assert info.value.offset == offset
    assert f"at byte offset {offset}" in str(info.value)


def test_bundled_mnist_subset_is_well_formed():
    images = load_idx("data/mnist5k-images-idx3-ubyte.gz")
    labels = load_idx("data/mnist5k-labels-idx1-ubyte.gz")
    assert (images.height, images.width) == (28, 28)
    assert len(images) == labels.shape[0] == 5000
    assert set(np.unique(labels)) == set(range(10))


# --- binarize ---

def test_binarize_examples():
    zeros = ImageSet(np.zeros((1, 4)), 2, 2)
    assert not binarize(zeros, 0.5).images.any()
    half = ImageSet(np.array([[0.5, 0.49, 0.51, 1.0]]), 2, 2)
    assert list(binarize(half, 0.5).images[0]) == [1, 0, 1, 1]
    with pytest.raises(DomainError):
        binarize(half, 1.0)


@given(st.lists(st.floats(0, 1), min_size=4, max_size=4), st.floats(0.01, 0.99))
def test_binarize_idempotent(pixels, t):
    once = binarize(ImageSet(np.array([pixels]), 2, 2), t)
    assert np.array_equal(binarize(once, t).images, once.images)


# --- stroke noise ---

def test_zero_strokes_leave_image_unchanged():
    img = digit_like(make_rng(0))
    out = add_stroke_noise(img, 28, 28, NoiseConfig(num_strokes=0), make_rng(1))
    assert np.array_equal(out.image, img) and out.ok


def test_default_noise_coverage_window_over_1000_draws():
    cfg = NoiseConfig()
    rng = make_rng(7)
    img = digit_like(make_rng(0))
    coverages = []
    for _ in range(1000):
        out = add_stroke_noise(img, 28, 28, cfg, rng)
        assert out.ok
        assert np.all(out.image >= img)
        coverages.append(out.coverage)
    assert min(coverages) >= 0.3 and max(coverages) <= 0.6


@given(st.integers(0, 2**32))
def test_noise_is_monotone_and_seeded(seed):
    img = digit_like(make_rng(seed, 1))
    a = add_stroke_noise(img, 28, 28, NoiseConfig(), make_rng(seed))
    b = add_stroke_noise(img, 28, 28, NoiseConfig(), make_rng(seed))
    assert np.all(a.image >= img)
    assert np.array_equal(a.image, b.image)
    assert set(np.unique(a.image)) <= {0.0, 1.0}


def test_unreachable_coverage_is_flagged():
    cfg = NoiseConfig(num_strokes=1, thickness_range=(0.5, 0.5), coverage_range=(0.9, 1.0),
                      max_retries=3)
    out = add_stroke_noise(np.zeros(784), 28, 28, cfg, make_rng(0))
    assert not out.ok and out.coverage < 0.9 and out.image.any()


def test_noise_config_invariants():
    with pytest.raises(DomainError):
        NoiseConfig(coverage_range=(0.6, 0.3))
    with pytest.raises(DomainError):
        NoiseConfig(coverage_range=(0.0, 0.5))


# --- triplets ---

def test_triplets_one_copy():
    rng = make_rng(0)
    clean = ImageSet(np.stack([digit_like(rng) for _ in range(5)]), 28, 28, [0, 1, 2, 1, 0])
    t = make_triplets(clean, NoiseConfig(), 1, make_rng(1))
    assert len(t) == 5 and t.dims == (784, 784, 3)
    assert np.array_equal(t.y, clean.images)
    assert list(t.labels) == [0, 1, 2, 1, 0]
    assert np.all(t.x >= t.y)


def test_triplets_usps_style_counts():
    # 39 clean images per class, 10 noisy copies each
    rng = make_rng(0)
    labels = np.repeat(np.arange(3), 39)
    clean = ImageSet((rng.random((labels.size, 16 * 16)) < 0.3).astype(float), 16, 16, labels)
    t = make_triplets(clean, NoiseConfig(), 10, make_rng(1))
    assert np.array_equal(np.bincount(t.labels), [390, 390, 390])
    for i in range(0, len(t), 10):
        assert np.all(t.y[i:i + 10] == clean.images[i // 10])


def test_triplets_need_labels():
    with pytest.raises(DomainError):
        make_triplets(ImageSet(np.zeros((1, 4)), 2, 2), NoiseConfig(), 1, make_rng(0))


def test_triplet_dataset_checks():
    with pytest.raises(DomainError):
        TripletDataset(np.zeros((2, 1)), np.zeros((3, 1)), one_hot([0, 1], 2))
    with pytest.raises(DomainError):
        TripletDataset(np.zeros((1, 1)), np.zeros((1, 1)), [[1.0, 1.0]])


# --- multiview records ---

def kmvd_header(n, d_x, d_view, k):
    return struct.pack("<4s4I", b"KMVD", n, d_x, d_view, k)


def test_kmvd_round_trip(tmp_path):
    data = synth_multiview(MultiviewSynthConfig(n=20, d_x=5), make_rng(0))
    raw = encode_multiview(data)
    assert raw[:4] == b"KMVD" and len(raw) == 20 + 20 * (8 * 5 + 6 + 1)
    write_multiview(tmp_path / "m.kmvd", data)
    back = load_multiview(tmp_path / "m.kmvd")
    assert np.array_equal(back.x, data.x) and np.array_equal(back.y, data.y)
    assert np.array_equal(back.z, data.z)


def test_kmvd_full_size_header():
    rng = make_rng(0)
    n, d_x, d_view = 4907, 5632, 6
    dtype = np.dtype([("x", "<f8", (d_x,)), ("view", "u1", (d_view,)), ("cls", "u1")])
    recs = np.zeros(n, dtype=dtype)
    recs["cls"] = rng.integers(0, 3, n)
    recs["view"][np.arange(n), rng.integers(0, d_view, n)] = 1
    data = parse_multiview(kmvd_header(n, d_x, d_view, 3) + recs.tobytes())
    assert len(data) == n and data.dims == (5632, 6, 3)


def test_kmvd_bad_class_byte_offset():
    rec = struct.pack("<d", 0.5) + bytes([1, 0]) + bytes([3])
    with pytest.raises(FormatError) as info:
        parse_multiview(kmvd_header(1, 1, 2, 3) + rec)
    assert info.value.offset == 20 + 10


def test_kmvd_bad_magic():
    with pytest.raises(FormatError) as info:
        parse_multiview(b"KMVX" + bytes(16))
    assert info.value.offset == 0


def test_synth_bayes_errors_from_enumeration():
    cfg = MultiviewSynthConfig()
    bayes = planted_bayes_errors(cfg)
    assert bayes["both"] == pytest.approx(0.0, abs=1e-12)
    # every camera shift is equally likely, so each input alone is independent of
    # the class and the best guess is the majority class: 1 - 3354/4707
    assert bayes["x"] == pytest.approx(1353 / 4707, abs=1e-12)
    assert bayes["view"] == pytest.approx(1353 / 4707, abs=1e-12)


def test_synth_bayes_errors_match_sampled_data():
    # second route: group a large sample by what each input reveals
    cfg = MultiviewSynthConfig(n=60_000, d_x=16)
    data = synth_multiview(cfg, make_rng(3))
    cluster = [row.tobytes() for row in (data.x > 0.5)]
    camera = np.argmax(data.y, axis=1)
    labels = data.labels

    def empirical(keys):
        groups = {}
        for key, z in zip(keys, labels):
            groups.setdefault(key, []).append(z)
        wrong = sum(len(g) - np.bincount(g).max() for g in groups.values())
        return wrong / len(labels)

    bayes = planted_bayes_errors(cfg)
    assert empirical(cluster) == pytest.approx(bayes["x"], abs=0.01)
    assert empirical(list(camera)) == pytest.approx(bayes["view"], abs=0.01)
    assert empirical(list(zip(cluster, camera))) == 0.0


def test_synth_zero_ambiguity_majority_rate():
    cfg = MultiviewSynthConfig(ambiguity=0.0)
    bayes = planted_bayes_errors(cfg)
    assert bayes["x"] == 0.0
    data = synth_multiview(MultiviewSynthConfig(n=50_000, ambiguity=0.0), make_rng(1))
    majority = np.argmax(cfg.class_prior)
    err = np.mean(data.labels != majority)
    assert err == pytest.approx(bayes["majority"], abs=0.01)


def test_synth_is_seeded():
    cfg = MultiviewSynthConfig(n=50)
    a, b = synth_multiview(cfg, make_rng(5)), synth_multiview(cfg, make_rng(5))
    assert np.array_equal(a.x, b.x) and np.array_equal(a.z, b.z)
    assert np.all((a.x >= 0) & (a.x <= 1))


# --- splits ---

def test_ten_fold_sizes():
    folds = split(4907, k_folds=10, seed=0)
    assert sorted({len(f) for f in folds}) == [490, 491]
    assert np.array_equal(np.sort(np.concatenate(folds)), np.arange(4907))


def test_eighty_twenty_split():
    train, test = split(1014, fractions=[0.8, 0.2], seed=0)
    assert (len(train), len(test)) == (811, 203)


def test_split_errors_and_determinism():
    with pytest.raises(DomainError):
        split(5, k_folds=6)
    with pytest.raises(DomainError):
        split(5, fractions=[0.5, 0.4])
    a = split(100, k_folds=3, seed=9)
    b = split(100, k_folds=3, seed=9)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))


@given(st.integers(2, 300), st.integers(2, 12), st.integers(0, 2**32))
def test_folds_partition(n, k, seed):
    if k > n:
        return
    folds = split(n, k_folds=k, seed=seed)
    sizes = [len(f) for f in folds]
    assert max(sizes) - min(sizes) <= 1
    assert np.array_equal(np.sort(np.concatenate(folds)), np.arange(n))
