import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from disclabel.errors import CorruptFile, EmptyDataset, FormatError, ValidationError
from disclabel.io import (Image2D, KeypointLabel, LabelSet, Sample, level_name, read_image, read_labels,
                          read_manifest, split_counts, split_manifest, write_image, write_labels,
                          write_manifest)


def test_image_roundtrip_zeros(tmp_path):
    img = Image2D(np.zeros((141, 141)), (1.0, 1.0))
    write_image(tmp_path / "a.i2f", img)
    back = read_image(tmp_path / "a.i2f")
    assert back == img
    assert back.spacing_mm == (1.0, 1.0)
    assert back.pixels.tobytes() == img.pixels.tobytes()


def test_image_file_layout(tmp_path):
    img = Image2D(np.arange(6, dtype=np.float32).reshape(2, 3), (0.5, 2.0))
    write_image(tmp_path / "a.i2f", img)
    raw = (tmp_path / "a.i2f").read_bytes()
    magic, header, payload = raw.split(b"\n", 2)
    assert magic == b"I2F1"
    assert json.loads(header) == {"h": 2, "w": 3, "spacing_mm": [0.5, 2.0]}
    assert np.array_equal(np.frombuffer(payload, "<f4"), np.arange(6, dtype=np.float32))


def test_bad_magic(tmp_path):
    p = tmp_path / "bad.i2f"
    p.write_bytes(b'XXXX\n{"h":1,"w":1,"spacing_mm":[1,1]}\n' + np.zeros(1, "<f4").tobytes())
    with pytest.raises(FormatError):
        read_image(p)


def test_payload_length_mismatch(tmp_path):
    p = tmp_path / "short.i2f"
    p.write_bytes(b'I2F1\n{"h":2,"w":2,"spacing_mm":[1,1]}\n' + np.zeros(3, "<f4").tobytes())
    with pytest.raises(CorruptFile):
        read_image(p)


@pytest.mark.parametrize("bad", [np.nan, np.inf, -np.inf])
def test_non_finite_pixels_rejected(bad):
    px = np.zeros((3, 3))
    px[1, 1] = bad
    with pytest.raises(ValidationError):
        Image2D(px)


def test_bad_spacing():
    with pytest.raises(ValidationError):
        Image2D(np.zeros((2, 2)), (0.0, 1.0))


@settings(max_examples=40, deadline=None)
@given(arrays(np.float32, st.tuples(st.integers(1, 12), st.integers(1, 12)),
              elements=st.floats(-1e6, 1e6, width=32)),
       st.tuples(st.floats(0.1, 5), st.floats(0.1, 5)))
def test_image_roundtrip_property(tmp_path_factory, px, spacing):
    p = tmp_path_factory.mktemp("img") / "x.i2f"
    img = Image2D(px, spacing)
    write_image(p, img)
    back = read_image(p)
    assert back.pixels.tobytes() == img.pixels.tobytes()
    assert back.spacing_mm == img.spacing_mm


def test_level_names():
    assert level_name(3) == "C2-C3"
    assert level_name(8) == "C7-T1"
    assert level_name(9) == "T1-T2"
    assert level_name(20) == "T12-L1"
    assert level_name(25) == "L5-S1"
    with pytest.raises(ValidationError):
        level_name(1)


def test_labels_roundtrip(tmp_path):
    labels = LabelSet((KeypointLabel(20, 70, 3, "C2-C3"),))
    write_labels(tmp_path / "l.json", labels)
    assert read_labels(tmp_path / "l.json") == labels


def test_labels_sorted_on_load(tmp_path):
    p = tmp_path / "l.json"
    p.write_text(json.dumps({"points": [
        {"row": 40, "col": 70, "level": 4, "name": "C3-C4"},
        {"row": 20, "col": 71, "level": 3, "name": "C2-C3"},
    ]}))
    assert [q.row for q in read_labels(p)] == [20, 40]


def test_level_name_mismatch(tmp_path):
    p = tmp_path / "l.json"
    p.write_text(json.dumps({"points": [{"row": 20, "col": 70, "level": 4, "name": "C2-C3"}]}))
    with pytest.raises(ValidationError):
        read_labels(p)


def test_duplicate_rows_rejected():
    with pytest.raises(ValidationError):
        LabelSet((KeypointLabel(20, 70, 3), KeypointLabel(20, 80, 4)))


def test_levels_must_increase_with_row():
    with pytest.raises(ValidationError):
        LabelSet((KeypointLabel(20, 70, 4), KeypointLabel(30, 80, 3)))


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 500), st.floats(0, 140)), min_size=0, max_size=20,
                unique_by=lambda t: t[0]))
def test_labels_roundtrip_property(tmp_path_factory, pts):
    labels = LabelSet.from_coords([(r / 3.0, c) for r, c in pts][:23])
    p = tmp_path_factory.mktemp("lab") / "l.json"
    write_labels(p, labels, source="predicted")
    assert read_labels(p) == labels
    assert json.loads(p.read_text())["source"] == "predicted"


def _samples(n):
    return [Sample(f"{i}.i2f", f"{i}.json") for i in range(n)]


@pytest.mark.parametrize("n, expected", [(20, (15, 2, 3)), (4, (3, 0, 1)), (1, (1, 0, 0)), (10, (8, 1, 1))])
def test_split_counts(n, expected):
    # hand-checked largest-remainder arithmetic; n=10: 7.5, 1.0, 1.5 -> 7,1,1 +1 to train (tie 0.5 train first)
    assert split_counts(n) == expected
    assert split_manifest(_samples(n), seed=0).counts() == expected


def test_split_deterministic():
    a = split_manifest(_samples(30), seed=5)
    b = split_manifest(_samples(30), seed=5)
    assert a == b
    assert a != split_manifest(_samples(30), seed=6)


def test_split_empty():
    with pytest.raises(EmptyDataset):
        split_manifest([], seed=0)


def test_split_bad_fractions():
    with pytest.raises(ValidationError):
        split_manifest(_samples(3), fractions=(0.5, 0.5, 0.5))


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 400), st.integers(0, 2**32 - 1))
def test_split_is_partition(n, seed):
    m = split_manifest(_samples(n), seed=seed)
    assert sorted(s.image_path for s in m.samples) == sorted(s.image_path for s in _samples(n))
    counts = m.counts()
    assert sum(counts) == n
    for c, f in zip(counts, (0.75, 0.10, 0.15)):
        assert c >= int(n * f + 1e-9)


def test_manifest_roundtrip(tmp_path):
    for i in range(3):
        write_image(tmp_path / f"{i}.i2f", Image2D(np.zeros((2, 2))))
        write_labels(tmp_path / f"{i}.json", LabelSet())
    m = split_manifest(_samples(3), seed=1, root=tmp_path)
    write_manifest(tmp_path / "manifest.json", m)
    back = read_manifest(tmp_path / "manifest.json")
    assert back.samples == m.samples
    (tmp_path / "0.i2f").unlink()
    with pytest.raises(OSError):
        read_manifest(tmp_path / "manifest.json")
