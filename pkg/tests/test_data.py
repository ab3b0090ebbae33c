import json
import re
import string
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scenetext.data import (
    AnnotationError,
    AnnotationWarning,
    MixSpec,
    Vocabulary,
    WordSample,
    apportion,
    encode_text,
    load_annotations,
    make_batch,
    preprocess,
    save_corpus,
    synth_corpus,
    write_image,
)
from scenetext.data.font import GLYPHS

ALNUM = string.digits + string.ascii_lowercase


# -- vocabulary --------------------------------------------------------------------------
def test_insensitive_layout():
    v = Vocabulary("insensitive")
    assert len(v) == 40
    assert [v.symbols[i] for i in (0, 9, 10, 35)] == ["0", "9", "a", "z"]
    assert v.specials == (36, 37, 38, 39)


def test_sensitive_has_66_classes():
    v = Vocabulary("sensitive")
    assert len(v) == 66
    assert v.encode("Ab") == [36, 11, v.end]


def test_encode_examples():
    v = Vocabulary()
    assert encode_text("ab1", v) == [10, 11, 1, v.end]
    assert encode_text("A?", v) == [10, v.unk, v.end]
    assert v.decode(v.encode("hello")) == "hello"


def test_encode_empty_text():
    with pytest.raises(ValueError):
        Vocabulary().encode("")


def test_batch_is_padded_to_longest():
    v = Vocabulary()
    out = v.encode_batch(["ab", "abcd"])
    assert out.shape == (2, 5)
    assert list(out[0]) == [10, 11, v.end, v.pad, v.pad]


@pytest.mark.parametrize("ch", list(ALNUM))
def test_single_symbol_bijection(ch):
    v = Vocabulary()
    assert v.decode(v.encode(ch)) == ch


@given(st.text(alphabet=ALNUM + string.ascii_uppercase, min_size=1, max_size=20))
def test_round_trip_sensitive(text):
    v = Vocabulary("sensitive")
    assert v.decode(v.encode(text)) == text


@given(st.lists(st.integers(0, 39), max_size=30))
def test_decoded_strings_never_contain_specials(tokens):
    out = Vocabulary().decode(tokens)
    assert all(c in ALNUM for c in out)


# -- samples / annotations ----------------------------------------------------------------
def _write_parent(tmp_path, name, rng, shape=(20, 40)):
    px = rng.integers(0, 256, size=shape, dtype=np.uint8)
    write_image(tmp_path / name, px)
    return px


def test_two_images_three_words_each(tmp_path):
    rng = np.random.default_rng(0)
    parents = [_write_parent(tmp_path, f"p{i}.pgm", rng) for i in range(2)]
    boxes = [[0, 0, 10, 5], [5, 5, 20, 10], [30, 10, 10, 10]]
    with open(tmp_path / "ann.jsonl", "w") as fh:
        for i in range(2):
            words = [{"box": b, "text": f"w{i}{j}"} for j, b in enumerate(boxes)]
            fh.write(json.dumps({"image": f"p{i}.pgm", "words": words}) + "\n")
    samples = load_annotations(tmp_path / "ann.jsonl")
    assert len(samples) == 6
    x, y, w, h = boxes[1]
    np.testing.assert_array_equal(samples[1].pixels[:, :, 0], parents[0][y : y + h, x : x + w])
    assert samples[4].box == tuple(boxes[1]) and samples[4].text == "w11"


def test_degenerate_and_outside_boxes_warn_and_skip(tmp_path):
    _write_parent(tmp_path, "p.pgm", np.random.default_rng(1))
    words = [
        {"box": [0, 0, 0, 5], "text": "zero"},
        {"box": [35, 0, 10, 5], "text": "outside"},
        {"box": [0, 0, 4, 4], "text": "ok"},
    ]
    (tmp_path / "ann.jsonl").write_text(json.dumps({"image": "p.pgm", "words": words}) + "\n")
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        samples = load_annotations(tmp_path / "ann.jsonl")
    assert [s.text for s in samples] == ["ok"]
    assert sum(issubclass(w.category, AnnotationWarning) for w in caught) == 2


def test_missing_image_is_reported_and_skipped(tmp_path):
    _write_parent(tmp_path, "p.pgm", np.random.default_rng(2))
    lines = [
        {"image": "gone.pgm", "words": [{"box": [0, 0, 2, 2], "text": "x"}]},
        {"image": "p.pgm", "words": [{"box": [0, 0, 2, 2], "text": "y"}]},
    ]
    (tmp_path / "a.jsonl").write_text("".join(json.dumps(r) + "\n" for r in lines))
    with pytest.warns(AnnotationWarning, match="missing image"):
        samples = load_annotations(tmp_path / "a.jsonl")
    assert [s.text for s in samples] == ["y"]


@pytest.mark.filterwarnings("ignore::scenetext.data.AnnotationWarning")
def test_malformed_json_names_the_line(tmp_path):
    (tmp_path / "a.jsonl").write_text('{"image": "p.pgm", "words": []}\n{not json\n')
    with pytest.raises(AnnotationError, match=":2:"):
        load_annotations(tmp_path / "a.jsonl")


def test_png_needs_the_flag(tmp_path):
    from PIL import Image

    Image.fromarray(np.zeros((4, 6), dtype=np.uint8)).save(tmp_path / "p.png")
    (tmp_path / "a.jsonl").write_text(json.dumps({"image": "p.png", "words": [{"box": [0, 0, 2, 2], "text": "x"}]}))
    with pytest.raises(ValueError, match="png"):
        load_annotations(tmp_path / "a.jsonl")
    assert len(load_annotations(tmp_path / "a.jsonl", allow_png=True)) == 1


def test_rgb_ppm_round_trip(tmp_path):
    px = np.random.default_rng(3).integers(0, 256, size=(5, 7, 3), dtype=np.uint8)
    s = WordSample(px, "rgb")
    ann = save_corpus([s], tmp_path)
    back = load_annotations(ann)
    np.testing.assert_array_equal(back[0].pixels, px)


def test_word_sample_requires_text():
    with pytest.raises(ValueError):
        WordSample(np.zeros((2, 2), dtype=np.uint8), "")


# -- preprocess -----------------------------------------------------------------------------
def test_white_rgb_gives_ones():
    out = preprocess(WordSample(np.full((10, 30, 3), 255, dtype=np.uint8), "w"))
    assert out.shape == (1, 64, 256)
    np.testing.assert_allclose(out, 1.0, atol=1e-6)


def test_pure_red_is_luma_weight():
    px = np.zeros((9, 17, 3), dtype=np.uint8)
    px[..., 0] = 255
    out = preprocess(WordSample(px, "r"))
    assert np.abs(out - 0.299).max() <= 1 / 255


def test_unaugmented_is_deterministic():
    s = synth_corpus(1, seed=4)[0]
    assert preprocess(s).tobytes() == preprocess(s).tobytes()


def test_augmentation_is_reproducible_from_the_seed():
    s = synth_corpus(1, seed=5)[0]
    a = preprocess(s, augment=True, rng=np.random.default_rng(9))
    b = preprocess(s, augment=True, rng=np.random.default_rng(9))
    c = preprocess(s, augment=True, rng=np.random.default_rng(10))
    assert a.tobytes() == b.tobytes()
    assert a.tobytes() != c.tobytes()


def test_resize_matches_bilinear_reference():
    # a horizontal ramp stays a ramp after an aspect-distorting resize
    px = np.tile(np.linspace(0, 255, 32).astype(np.uint8), (8, 1))
    out = preprocess(WordSample(px, "ramp"))[0]
    assert np.all(np.diff(out[32]) >= -1e-6)
    np.testing.assert_allclose(out[:, 0], out[0, 0])


@given(
    st.integers(1, 40),
    st.integers(1, 120),
    st.sampled_from([1, 3]),
    st.booleans(),
    st.integers(0, 2**32 - 1),
)
@settings(max_examples=40, deadline=None)
def test_preprocess_shape_and_range(h, w, c, augment, seed):
    rng = np.random.default_rng(seed)
    px = rng.integers(0, 256, size=(h, w, c), dtype=np.uint8)
    out = preprocess(WordSample(px, "x"), augment=augment, rng=rng)
    assert out.shape == (1, 64, 256)
    assert out.min() >= 0.0 and out.max() <= 1.0


# -- mixing -------------------------------------------------------------------------------------
@pytest.mark.parametrize(
    "mix,expected",
    [
        ({"A": 0.5, "B": 0.5}, [24, 24]),
        ({"MJ": 0.4, "OI": 0.2, "ST": 0.4}, [19, 10, 19]),
        ({"A": 1.0}, [48]),
    ],
)
def test_apportion_examples(mix, expected):
    assert list(MixSpec.from_mapping(mix, 48).counts().values()) == expected


@given(st.lists(st.integers(0, 100), min_size=1, max_size=6).filter(lambda xs: sum(xs) > 0), st.integers(1, 200))
def test_apportion_sums_to_batch(weights, batch):
    fractions = [w / sum(weights) for w in weights]
    counts = apportion(fractions, batch)
    assert sum(counts) == batch
    assert all(c >= 0 for c in counts)
    assert all(abs(c - f * batch) < 1 + 1e-9 for c, f in zip(counts, fractions))


def test_mixspec_validation():
    with pytest.raises(ValueError):
        MixSpec.from_mapping({"A": 0.5, "B": 0.4})
    with pytest.raises(ValueError):
        MixSpec.from_mapping({"A": 1.0}, batch_size=0)


def test_make_batch_counts_and_padding():
    data = {"MJ": synth_corpus(10, seed=1, source="MJ"), "OI": synth_corpus(5, seed=2, source="OI"), "ST": synth_corpus(7, seed=3, source="ST")}
    mix = MixSpec.from_mapping({"MJ": 0.4, "OI": 0.2, "ST": 0.4}, 48)
    v = Vocabulary()
    for seed in range(3):
        batch = make_batch(data, mix, v, np.random.default_rng(seed))
        assert batch.images.shape == (48, 1, 64, 256)
        assert [batch.sources.count(t) for t in ("MJ", "OI", "ST")] == [19, 10, 19]
        longest = max(len(t) for t in batch.texts) + 1
        assert batch.targets.shape == (48, longest)
        for row, text in zip(batch.targets, batch.texts):
            assert v.decode(row) == text
            assert (row[len(text) + 1 :] == v.pad).all()


def test_make_batch_unknown_tag():
    with pytest.raises(KeyError, match="XX"):
        make_batch({"A": synth_corpus(2)}, MixSpec.from_mapping({"XX": 1.0}), Vocabulary(), np.random.default_rng(0))


def test_make_batch_empty_dataset():
    with pytest.raises(ValueError, match="empty"):
        make_batch({"A": []}, MixSpec.from_mapping({"A": 1.0}), Vocabulary(), np.random.default_rng(0))


# -- synthetic corpus --------------------------------------------------------------------------
def test_synth_is_deterministic():
    a, b = synth_corpus(32, seed=7), synth_corpus(32, seed=7)
    assert [s.text for s in a] == [s.text for s in b]
    assert all(x.pixels.tobytes() == y.pixels.tobytes() for x, y in zip(a, b))


def test_synth_text_contract():
    for s in synth_corpus(200, seed=3):
        assert re.fullmatch(r"[0-9a-z]{1,10}", s.text)


def test_one_and_ell_glyphs_differ():
    assert not np.array_equal(GLYPHS["1"], GLYPHS["l"])
    assert len({g.tobytes() for g in GLYPHS.values()}) == len(GLYPHS)


def test_synth_empty_charset():
    with pytest.raises(ValueError):
        synth_corpus(3, charset="")


def test_synth_corpus_round_trips_through_disk(tmp_path):
    corpus = synth_corpus(5, seed=11)
    back = load_annotations(save_corpus(corpus, tmp_path))
    assert [s.text for s in back] == [s.text for s in corpus]
    assert all(np.array_equal(a.pixels, b.pixels) for a, b in zip(corpus, back))
