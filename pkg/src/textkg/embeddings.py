"""Word vectors, vocabulary, mean-pooled sentence embeddings and cosine."""

import hashlib
import logging
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

PAD, BOS, EOS, UNK = "<pad>", "<bos>", "<eos>", "<unk>"
SPECIALS = (PAD, BOS, EOS, UNK)
PAD_ID, BOS_ID, EOS_ID, UNK_ID = range(4)


class VectorFileError(ValueError):
    pass


@dataclass
class EmbeddingTable:
    dim: int = 300
    vectors: dict = field(default_factory=dict)
    unk_seed: int = 0
    duplicates: int = 0

    def __post_init__(self):
        self._fallback = {}

    def __len__(self):
        return len(self.vectors)

    def __contains__(self, word):
        return word in self.vectors

    def lookup(self, word):
        return embed_word(self, word)


def load_word_vectors(path, dim, unk_seed=0):
    """Read a GloVe-style text file (``word v1 ... v_dim`` per line).

    A repeated word keeps its last vector; the repeat count is stored on the
    table as ``duplicates``.
    """
    vectors = {}
    dups = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.rstrip("\n").split(" ")
            if not parts or parts == [""]:
                continue
            word, vals = parts[0], parts[1:]
            if len(vals) != dim:
                raise VectorFileError(
                    f"{path}: line {lineno}: expected {dim} values for {word!r}, got {len(vals)}")
            try:
                vec = np.array([float(v) for v in vals])
            except ValueError as exc:
                raise VectorFileError(f"{path}: line {lineno}: {exc}") from None
            if word in vectors:
                dups += 1
            vectors[word] = vec
    if dups:
        log.warning("%s: %d duplicate words, last occurrence kept", path, dups)
    return EmbeddingTable(dim=dim, vectors=vectors, unk_seed=unk_seed, duplicates=dups)


def save_word_vectors(table, path):
    with open(path, "w", encoding="utf-8") as fh:
        for word, vec in table.vectors.items():
            fh.write(word + " " + " ".join(repr(float(v)) for v in vec) + "\n")


def _fallback_vector(word, dim, seed):
    digest = hashlib.blake2b(f"{seed}\x00{word}".encode("utf-8"), digest_size=8).digest()
    rng = np.random.default_rng(int.from_bytes(digest, "little"))
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)


def embed_word(table, word):
    """Stored vector, or a deterministic unit vector hashed from the word."""
    vec = table.vectors.get(word)
    if vec is not None:
        return vec
    vec = table._fallback.get(word)
    if vec is None:
        vec = _fallback_vector(word, table.dim, table.unk_seed)
        table._fallback[word] = vec
    return vec


def sentence_embedding(table, words):
    words = list(words)
    if not words:
        raise ValueError("sentence_embedding of an empty word sequence")
    return np.mean([embed_word(table, w) for w in words], axis=0)


def cosine_similarity(u, v):
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ValueError(f"cosine_similarity dim mismatch: {u.shape} vs {v.shape}")
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        return 0.0
    c = float(u @ v / (nu * nv))
    return min(1.0, max(-1.0, c))


class Vocabulary:
    """Word <-> index bijection with PAD/BOS/EOS/UNK at 0..3."""

    def __init__(self, words=()):
        self.itos = list(SPECIALS)
        self.stoi = {w: i for i, w in enumerate(self.itos)}
        for w in words:
            self.add(w)

    def add(self, word):
        if word not in self.stoi:
            self.stoi[word] = len(self.itos)
            self.itos.append(word)
        return self.stoi[word]

    def __len__(self):
        return len(self.itos)

    def __contains__(self, word):
        return word in self.stoi

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.itos == other.itos

    def index(self, word):
        return self.stoi.get(word, UNK_ID)

    def encode(self, words):
        return [self.index(w) for w in words]

    def decode(self, ids):
        return [self.itos[i] for i in ids]

    @classmethod
    def build(cls, sentences, min_count=1):
        counts = Counter(w for s in sentences for w in s)
        kept = sorted(w for w, c in counts.items() if c >= min_count and w not in SPECIALS)
        return cls(kept)
