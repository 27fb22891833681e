import math
import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from textkg.embeddings import (BOS_ID, EOS_ID, PAD_ID, UNK_ID, EmbeddingTable, VectorFileError,
                               Vocabulary, cosine_similarity, embed_word, load_word_vectors,
                               sentence_embedding)


def write(tmp_path, text):
    path = tmp_path / "vec.txt"
    path.write_text(text, encoding="utf-8")
    return str(path)


def test_load_two_lines(tmp_path):
    table = load_word_vectors(write(tmp_path, "cat 1 2 3\ndog 4 5 6\n"), 3)
    assert len(table) == 2
    assert embed_word(table, "dog").tolist() == [4.0, 5.0, 6.0]


def test_load_short_line_names_line(tmp_path):
    with pytest.raises(VectorFileError, match="line 1"):
        load_word_vectors(write(tmp_path, "cat 1 2\n"), 3)


def test_load_empty_file(tmp_path):
    table = load_word_vectors(write(tmp_path, ""), 3)
    assert len(table) == 0
    assert embed_word(table, "x").shape == (3,)


def test_duplicate_keeps_last(tmp_path):
    table = load_word_vectors(write(tmp_path, "cat 1 1\ncat 2 2\n"), 2)
    assert table.duplicates == 1
    assert embed_word(table, "cat").tolist() == [2.0, 2.0]


def test_unknown_word_is_deterministic_unit_vector():
    table = EmbeddingTable(300)
    a = embed_word(table, "zucchini")
    b = embed_word(EmbeddingTable(300), "zucchini")
    assert a.tobytes() == b.tobytes()
    assert abs(np.linalg.norm(a) - 1.0) < 1e-12


def test_unknown_word_depends_on_seed():
    a = embed_word(EmbeddingTable(8, unk_seed=0), "zucchini")
    b = embed_word(EmbeddingTable(8, unk_seed=1), "zucchini")
    assert not np.array_equal(a, b)


def test_fallback_reproducible_across_processes():
    code = ("from textkg.embeddings import EmbeddingTable, embed_word;"
            "print(embed_word(EmbeddingTable(5), 'okra').tobytes().hex())")
    out = subprocess.run([sys.executable, "-c", code], capture_output=True, text=True, check=True,
                         env=dict(os.environ, PYTHONHASHSEED="123")).stdout.strip()
    assert out == embed_word(EmbeddingTable(5), "okra").tobytes().hex()


def test_distinct_unknown_words_differ():
    table = EmbeddingTable(300)
    vecs = {embed_word(table, f"word{i}").tobytes() for i in range(1000)}
    assert len(vecs) == 1000


def test_sentence_embedding_examples():
    table = EmbeddingTable(2, {"a": np.array([1.0, 2.0]), "b": np.array([-1.0, -2.0]),
                               "c": np.array([3.0, 0.5])})
    assert sentence_embedding(table, ["a"]).tolist() == [1.0, 2.0]
    assert sentence_embedding(table, ["a", "b"]).tolist() == [0.0, 0.0]
    np.testing.assert_allclose(sentence_embedding(table, ["a", "b", "c"]), [1.0, 0.5 / 3],
                               rtol=0, atol=1e-12)
    with pytest.raises(ValueError):
        sentence_embedding(table, [])


def test_cosine_examples():
    assert cosine_similarity([2.0, 3.0], [2.0, 3.0]) == pytest.approx(1.0, abs=1e-15)
    assert cosine_similarity([1.0, 0.0], [0.0, 1.0]) == 0.0
    assert abs(cosine_similarity([1.0, 1.0], [1.0, 0.0]) - math.sqrt(2) / 2) < 1e-12
    assert cosine_similarity([0.0, 0.0], [1.0, 0.0]) == 0.0
    with pytest.raises(ValueError):
        cosine_similarity([1.0], [1.0, 2.0])


vec = st.lists(st.floats(-100, 100, allow_nan=False), min_size=3, max_size=3)


@settings(max_examples=200, deadline=None)
@given(vec, vec, st.floats(1e-3, 1e3))
def test_cosine_properties(u, v, alpha):
    c = cosine_similarity(u, v)
    assert c == cosine_similarity(v, u)
    assert abs(c) <= 1 + 1e-12
    if np.linalg.norm(u) > 1e-6 and np.linalg.norm(v) > 1e-6:
        assert abs(cosine_similarity(np.multiply(alpha, u), v) - c) < 1e-12


def test_vocabulary_reserved_ids_and_bijection():
    vocab = Vocabulary.build([["b", "a"], ["a", "<pad>"]])
    assert vocab.itos[:4] == ["<pad>", "<bos>", "<eos>", "<unk>"]
    assert (PAD_ID, BOS_ID, EOS_ID, UNK_ID) == (0, 1, 2, 3)
    assert vocab.itos[4:] == ["a", "b"]
    assert all(vocab.stoi[w] == i for i, w in enumerate(vocab.itos))
    assert vocab.encode(["a", "zzz"]) == [4, UNK_ID]
    assert vocab.decode([5, 4]) == ["b", "a"]


def test_vocabulary_min_count():
    vocab = Vocabulary.build([["a", "a", "b"]], min_count=2)
    assert "a" in vocab and "b" not in vocab
