import filecmp

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from disclabel.errors import ValidationError
from disclabel.io import read_image, read_labels
from disclabel.phantom import PhantomConfig, generate_dataset, generate_phantom, render_clean


def test_deterministic():
    a_img, a_lab = generate_phantom(PhantomConfig(), 11)
    b_img, b_lab = generate_phantom(PhantomConfig(), 11)
    assert a_img.pixels.tobytes() == b_img.pixels.tobytes()
    assert a_lab == b_lab


def test_exact_disc_count():
    _, labels = generate_phantom(PhantomConfig(disc_count_range=(7, 7)), 3)
    assert len(labels) == 7


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6), st.sampled_from(["t1_like", "t2_like"]))
def test_phantom_invariants(seed, mode):
    cfg = PhantomConfig(contrast_mode=mode)
    img, labels = generate_phantom(cfg, seed)
    assert img.shape == (141, 141)
    assert img.spacing_mm == (1.0, 1.0)
    assert img.pixels.min() >= 0 and img.pixels.max() <= 1
    labels.check_bounds(img.shape)
    gaps = np.diff([p.row for p in labels])
    assert np.all((gaps >= 14) & (gaps <= 20))
    assert [p.level for p in labels] == list(range(3, 3 + len(labels)))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10**6))
def test_contrast_modes_invert_disc_cord_order(seed):
    means = {}
    for mode in ("t1_like", "t2_like"):
        rng = np.random.default_rng(seed)
        clean, labels, _, center = render_clean(PhantomConfig(contrast_mode=mode), rng)
        img, _ = generate_phantom(PhantomConfig(contrast_mode=mode), seed)
        px = img.pixels
        disc = np.mean([px[int(p.row), int(p.col) - 7] for p in labels])
        cord = np.mean([px[int(p.row), int(round(center[int(p.row)]))] for p in labels])
        means[mode] = (disc, cord)
    assert means["t1_like"][0] < means["t1_like"][1]
    assert means["t2_like"][0] > means["t2_like"][1]


def test_detectability_guard():
    with pytest.raises(ValidationError):
        generate_phantom(PhantomConfig(noise_sigma=0.5), 0)


@pytest.mark.parametrize("kwargs", [
    {"size": 32},
    {"disc_spacing_range_px": (8, 12)},
    {"disc_count_range": (9, 9), "disc_spacing_range_px": (16, 20)},
    {"contrast_mode": "pd_like"},
    {"bias_field_amplitude": 1.0},
])
def test_invalid_config(kwargs):
    with pytest.raises(ValidationError):
        PhantomConfig(**kwargs)


def test_generate_dataset(tmp_path):
    path, m = generate_dataset(PhantomConfig(), 20, tmp_path / "a", seed=4)
    assert m.counts() == (15, 2, 3)
    assert len(list((tmp_path / "a").glob("*.i2f"))) == 20
    assert len(list((tmp_path / "a").glob("phantom_*.json"))) == 20
    img = read_image(m.resolve(m.samples[0].image_path))
    lab = read_labels(m.resolve(m.samples[0].labels_path))
    ref_img, ref_lab = generate_phantom(PhantomConfig(), 4)
    assert img == ref_img and lab == ref_lab

    generate_dataset(PhantomConfig(), 20, tmp_path / "b", seed=4)
    cmp = filecmp.dircmp(tmp_path / "a", tmp_path / "b")
    assert not cmp.diff_files and not cmp.left_only and not cmp.right_only
    for name in cmp.common_files:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_generate_dataset_alternates_contrast(tmp_path):
    _, m = generate_dataset(PhantomConfig(), 2, tmp_path, seed=0)
    a = read_image(m.resolve(m.samples[0].image_path)).pixels
    b = read_image(m.resolve(m.samples[1].image_path)).pixels
    la = read_labels(m.resolve(m.samples[0].labels_path))
    lb = read_labels(m.resolve(m.samples[1].labels_path))
    # t1_like discs are dark, t2_like discs bright
    assert np.mean([a[int(p.row), int(p.col) - 7] for p in la]) < 0.4
    assert np.mean([b[int(p.row), int(p.col) - 7] for p in lb]) > 0.6


def test_generate_dataset_needs_samples(tmp_path):
    with pytest.raises(ValidationError):
        generate_dataset(PhantomConfig(), 0, tmp_path)
