from collections import Counter

import pytest
from hypothesis import given, strategies as st

from speedbias.nmt.bpe import EOW, UNK_ID, BpeModel, bpe_apply, bpe_decode, bpe_learn, word_counts


def test_abab_first_merge():
    model = bpe_learn({"abab": 1}, 1)
    assert model.merges == [("a", "b")]


def test_zero_merges_is_character_level():
    model = bpe_learn({"low": 2, "lower": 1}, 0)
    assert model.merges == []
    assert model.segment("low") == ("l", "o", "w" + EOW)


def test_single_character_corpus():
    model = bpe_learn({"a": 5}, 10)
    assert model.merges == []


def test_tie_break_is_lexicographic():
    # (a,b) and (c,d) both occur once; the smaller pair wins
    model = bpe_learn({"cd": 1, "ab": 1}, 1)
    assert model.merges == [("a", "b" + EOW)]


def test_most_frequent_pair_wins():
    model = bpe_learn({"xy": 1, "ab": 3}, 1)
    assert model.merges == [("a", "b" + EOW)]


def test_round_trip():
    model = bpe_learn(word_counts(["my mother is a nurse .", "my father is a mechanic ."]), 20)
    text = "my mother is a nurse ."
    assert bpe_decode(model, bpe_apply(model, text)) == text


def test_empty_string():
    model = bpe_learn({"ab": 1}, 1)
    assert bpe_apply(model, "") == []
    assert bpe_decode(model, []) == ""


def test_unknown_character_maps_to_unk():
    model = bpe_learn({"ab": 1}, 1)
    assert UNK_ID in bpe_apply(model, "z")


def test_merge_replay_by_hand():
    corpus = {"lower": 2, "low": 5, "newest": 6, "widest": 3}
    model = bpe_learn(corpus, 3)
    # counts: (e,s)=9, (s,t</w>)=9 -> (e,s) first; then (es,t</w>)=9; then (l,o)=7
    assert model.merges == [("e", "s"), ("es", "t" + EOW), ("l", "o")]
    assert model.segment("lowest") == ("lo", "w", "est" + EOW)


def _replay(word, merges):
    symbols = list(word[:-1]) + [word[-1] + EOW]
    for a, b in merges:
        i, out = 0, []
        while i < len(symbols):
            if i + 1 < len(symbols) and (symbols[i], symbols[i + 1]) == (a, b):
                out.append(a + b)
                i += 2
            else:
                out.append(symbols[i])
                i += 1
        symbols = out
    return tuple(symbols)


word = st.text(alphabet="abcde", min_size=1, max_size=7)


@given(st.dictionaries(word, st.integers(1, 5), min_size=1, max_size=8), st.integers(0, 15))
def test_segmentation_matches_merge_replay(corpus, n):
    model = bpe_learn(corpus, n)
    for w in corpus:
        seg = model.segment(w)
        assert seg == _replay(w, model.merges)
        assert "".join(seg) == w + EOW
        assert all(s in model.vocabulary for s in seg)


@given(st.lists(st.lists(word, min_size=1, max_size=5), min_size=1, max_size=5), st.integers(0, 20))
def test_round_trip_property(lines, n):
    texts = [" ".join(ws) for ws in lines]
    model = bpe_learn(word_counts(texts), n)
    for t in texts:
        assert bpe_decode(model, bpe_apply(model, t)) == t


def test_save_load(tmp_path):
    model = bpe_learn(word_counts(["my mother is a nurse", "the nurses smiled"]), 15)
    path = tmp_path / "m.bpe"
    model.save(path)
    again = BpeModel.load(path)
    assert again.merges == model.merges
    assert again.vocabulary == model.vocabulary
    assert len(again) == len(model)
    assert again.encode("my nurse smiled") == model.encode("my nurse smiled")


def test_word_counts():
    assert word_counts(["a b a", "b"]) == Counter({"a": 2, "b": 2})


def test_empty_corpus_rejected():
    with pytest.raises(ValueError):
        bpe_learn({}, 3)
