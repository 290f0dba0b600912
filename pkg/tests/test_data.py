import hashlib
import json

import numpy as np
import pytest

from maa import data as d


def test_vocab_layout(tiny_handle):
    v = tiny_handle.vocab
    assert v.words[d.PAD_ID] == d.PAD_WORD
    assert v.words[d.MASK_ID] == d.MASK_WORD
    assert v.pad_id == d.PAD_ID and v.mask_id == d.MASK_ID
    assert len(set(v.words)) == len(v.words)


def test_captions_unique_and_tokenizable(tiny_handle):
    caps = [e.caption for e in tiny_handle.entries]
    assert len(set(caps)) == len(caps)
    for c in caps:
        toks = d.tokenize(c, tiny_handle.vocab)
        assert d.detokenize(toks) == c


def test_tokenize_rejects_oov_and_bad_length(tiny_handle):
    with pytest.raises(d.OutOfVocabularyError):
        d.tokenize("a mauve circle", tiny_handle.vocab)
    with pytest.raises(d.DataError):
        d.tokenize([], tiny_handle.vocab)
    with pytest.raises(d.DataError):
        d.tokenize(["a"] * (d.MAX_CAPTION_LEN + 1), tiny_handle.vocab)


def test_split_boundaries_cumulative_rounding():
    # cumulative rounding: each boundary rounds the cumulative fraction
    # (banker's rounding), not the individual split sizes
    assert d.split_boundaries(10, (0.7, 0.15, 0.15)) == (7, 8)
    assert d.split_boundaries(9, (0.7, 0.15, 0.15)) == (6, 8)
    assert d.split_boundaries(256, (0.625, 0.125, 0.25)) == (160, 192)


def test_splits_partition_dataset(tiny_handle):
    tr, va, te = (tiny_handle.indices(s) for s in ("train", "val", "test"))
    assert sorted(tr + va + te) == list(range(tiny_handle.num_pairs))
    b1, b2 = d.split_boundaries(tiny_handle.num_pairs,
                                tiny_handle.spec.split_fractions)
    assert (len(tr), len(va)) == (b1, b2 - b1)


def test_generation_is_byte_identical(tmp_path):
    spec = d.DatasetSpec(num_pairs=12, seed=3)
    h1 = d.generate_dataset(spec, tmp_path / "a")
    h2 = d.generate_dataset(d.DatasetSpec(num_pairs=12, seed=3), tmp_path / "b")
    for e1, e2 in zip(h1.entries, h2.entries):
        assert e1.sha256 == e2.sha256 and e1.caption == e2.caption
    assert ((tmp_path / "a" / "manifest.jsonl").read_text()
            == (tmp_path / "b" / "manifest.jsonl").read_text())


def test_different_seed_changes_images(tmp_path):
    h1 = d.generate_dataset(d.DatasetSpec(num_pairs=12, seed=3), tmp_path / "a")
    h2 = d.generate_dataset(d.DatasetSpec(num_pairs=12, seed=4), tmp_path / "b")
    assert any(e1.sha256 != e2.sha256 for e1, e2 in zip(h1.entries, h2.entries))


def test_load_pair_roundtrip_and_checksum(tiny_handle):
    img, toks = d.load_pair(tiny_handle, 0, verify=True)
    assert img.shape == (3, tiny_handle.spec.image_size, tiny_handle.spec.image_size)
    assert img.dtype == np.float64
    assert 0.0 <= img.min() and img.max() <= 1.0
    assert toks.words == tiny_handle.entries[0].caption.split()
    with pytest.raises(IndexError):
        d.load_pair(tiny_handle, tiny_handle.num_pairs)


def test_checksum_mismatch_detected(tmp_path):
    h = d.generate_dataset(d.DatasetSpec(num_pairs=8, seed=0), tmp_path)
    target = tmp_path / h.entries[0].image
    target.write_bytes(target.read_bytes()[:-1] + b"\x00")
    with pytest.raises(d.DataError, match="checksum"):
        d.load_pair(h, 0, verify=True)


def test_open_dataset_roundtrip(tiny_handle):
    h = d.open_dataset(tiny_handle.root)
    assert h.vocab.words == tiny_handle.vocab.words
    assert [e.__dict__ for e in h.entries] == [e.__dict__ for e in tiny_handle.entries]
    assert h.spec == tiny_handle.spec


def test_spec_validation_errors():
    with pytest.raises(d.DataError):
        d.DatasetSpec(num_pairs=4).validate()
    with pytest.raises(d.DataError):
        d.DatasetSpec(split_fractions=(0.8, 0.2, 0.0)).validate()
    with pytest.raises(d.DataError):
        d.DatasetSpec(split_fractions=(0.5, 0.3, 0.3)).validate()
    with pytest.raises(d.DataError, match="distinct captions"):
        d.DatasetSpec(num_pairs=600, shape_vocab=["circle"], color_vocab=["red"],
                      layout_vocab=["above"]).validate()
    with pytest.raises(d.DataError, match="RGB"):
        d.DatasetSpec(color_vocab=["red", "mauve"]).validate()


def test_manifest_checksums_match_files(tiny_handle):
    for e in tiny_handle.entries[:4]:
        digest = hashlib.sha256((tiny_handle.root / e.image).read_bytes()).hexdigest()
        assert digest == e.sha256


def test_manifest_is_jsonl_with_expected_fields(tiny_handle):
    lines = (tiny_handle.root / "manifest.jsonl").read_text().splitlines()
    assert len(lines) == tiny_handle.num_pairs
    row = json.loads(lines[0])
    assert set(row) == {"index", "image", "caption", "split", "sha256"}
