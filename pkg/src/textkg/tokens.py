"""Token families and stream assembly.

External stream rows are ordered [region, knowledge, transcript, caption],
internal stream rows [transcript, caption, video].
"""

from dataclasses import dataclass, field, replace

import numpy as np

from . import autograd as ag
from .embeddings import embed_word, sentence_embedding

REGION, KNOWLEDGE, TRANSCRIPT, CAPTION, VIDEO = "region", "knowledge", "transcript", "caption", "video"
KINDS = (REGION, KNOWLEDGE, TRANSCRIPT, CAPTION, VIDEO)
KIND_CODE = {k: i for i, k in enumerate(KINDS)}
EXTERNAL, INTERNAL = "external", "internal"
STREAM_ORDER = {
    EXTERNAL: (REGION, KNOWLEDGE, TRANSCRIPT, CAPTION),
    INTERNAL: (TRANSCRIPT, CAPTION, VIDEO),
}


@dataclass(frozen=True)
class Segment:
    kind: str
    start: int
    length: int

    @property
    def stop(self):
        return self.start + self.length


@dataclass
class SegmentMap:
    stream: str
    segments: list
    region_categories: list = field(default_factory=list)
    knowledge_categories: list = field(default_factory=list)

    def __post_init__(self):
        kinds = tuple(s.kind for s in self.segments)
        if kinds != STREAM_ORDER[self.stream]:
            raise ValueError(f"{self.stream} segments must be {STREAM_ORDER[self.stream]}, got {kinds}")
        pos = 0
        for s in self.segments:
            if s.start != pos or s.length < 0:
                raise ValueError(f"segments are not contiguous at {s}")
            pos = s.stop

    @property
    def length(self):
        return self.segments[-1].stop if self.segments else 0

    def segment(self, kind):
        for s in self.segments:
            if s.kind == kind:
                return s
        return Segment(kind, 0, 0)

    def kinds(self):
        """Per-row kind codes."""
        return np.concatenate([np.full(s.length, KIND_CODE[s.kind], dtype=np.int64)
                               for s in self.segments]) if self.segments else np.zeros(0, np.int64)

    def positions(self):
        """Per-row index within its own segment."""
        return np.concatenate([np.arange(s.length) for s in self.segments]).astype(np.int64)

    def row_categories(self):
        """Per-row object category for region/knowledge rows, None elsewhere."""
        cats = [None] * self.length
        for kind, names in ((REGION, self.region_categories), (KNOWLEDGE, self.knowledge_categories)):
            seg = self.segment(kind)
            for i, c in enumerate(names):
                cats[seg.start + i] = c
        return cats


@dataclass
class StreamInput:
    tokens: ag.Tensor
    segmap: SegmentMap


@dataclass
class ClipInputs:
    """One clip after retrieval, truncation and ablation.

    ``video`` is the per-frame appearance||motion matrix.  ``knowledge`` is a
    list of (triple, source_category); ``candidates`` keeps the unselected
    per-category retrieval results so ablations can reselect.
    """

    video_id: str
    clip_id: str
    video: np.ndarray
    region_feats: np.ndarray
    region_categories: list
    transcript: list
    captions: list
    candidates: list = field(default_factory=list)
    knowledge: list = field(default_factory=list)

    @property
    def caption(self):
        return self.captions[0] if self.captions else []

    def copy(self, **changes):
        return replace(self, **changes)


# ------------------------------------------------------------------ token makers


def _project(vectors, proj):
    w, b = proj
    vectors = np.asarray(vectors, dtype=np.float64)
    if vectors.ndim != 2:
        vectors = vectors.reshape(0, w.shape[0])
    return ag.add(ag.matmul(ag.Tensor(vectors), w), b)


def make_video_tokens(appearance, motion, proj):
    appearance = np.asarray(appearance, dtype=np.float64)
    motion = np.asarray(motion, dtype=np.float64)
    if appearance.shape[0] != motion.shape[0]:
        raise ValueError(f"frame count mismatch: appearance {appearance.shape[0]} vs motion {motion.shape[0]}")
    return _project(np.concatenate([appearance, motion], axis=1), proj)


def select_regions(region_feats, categories, n_r, frames=None):
    """Keep the first ``n_r`` detections of every frame.

    Detections are assumed sorted by confidence within a frame.
    """
    region_feats = np.asarray(region_feats, dtype=np.float64)
    if len(categories) != len(region_feats):
        raise ValueError(f"{len(categories)} categories for {len(region_feats)} region features")
    if frames is None:
        frames = [0] * len(categories)
    used = {}
    keep = []
    for i, f in enumerate(frames):
        if used.get(f, 0) < n_r:
            used[f] = used.get(f, 0) + 1
            keep.append(i)
    return region_feats[keep].reshape(len(keep), -1), [categories[i] for i in keep]


def make_region_tokens(region_feats, categories, n_r, proj, frames=None):
    feats, cats = select_regions(region_feats, categories, n_r, frames)
    return _project(feats.reshape(len(cats), proj[0].shape[0]), proj), cats


def word_matrix(words, table):
    return np.array([embed_word(table, w) for w in words]).reshape(len(words), table.dim)


def make_text_tokens(words, table, cap, proj):
    """Transcript tokens: first ``cap`` words, embedded and projected."""
    return _project(word_matrix(list(words)[:cap], table), proj)


def make_caption_tokens(words, table, cap, proj, bos):
    """Caption input tokens: learned BOS row followed by up to ``cap`` words."""
    words = list(words)[:cap]
    body = _project(word_matrix(words, table), proj)
    return ag.concat([ag.reshape(bos, (1, -1)), body])


def phrase_vector(table, phrase):
    return sentence_embedding(table, phrase.split())


def make_knowledge_tokens(items, table, relation_embeddings, relation_index, proj):
    """Token per triple: proj(embed(tail) + relation_embedding[relation]).

    ``relation_index`` maps labels to rows; unknown labels use the last row
    (``rel_unk``).  Returns the token rows and the per-token source category.
    """
    items = list(items)
    unk = relation_embeddings.shape[0] - 1
    tails = np.array([phrase_vector(table, t.tail) for t, _ in items]).reshape(len(items), table.dim)
    rel_ids = [relation_index.get(t.relation, unk) for t, _ in items]
    summed = ag.add(ag.Tensor(tails), ag.take(relation_embeddings, rel_ids))
    w, b = proj
    return ag.add(ag.matmul(summed, w), b), [c for _, c in items]


# ------------------------------------------------------------------ assembly


def assemble(stream, parts, positions, type_table, region_categories=(), knowledge_categories=()):
    """Concatenate token blocks in stream order and add position/type rows.

    ``parts`` maps kind -> Tensor (missing kinds are empty).  ``positions``
    maps kind -> learned position table shared across streams;
    ``type_table`` has one row per kind for this stream.
    """
    order = STREAM_ORDER[stream]
    d = type_table.shape[1]
    segments = []
    blocks = []
    start = 0
    for kind in order:
        tok = parts.get(kind)
        if tok is None:
            tok = ag.Tensor(np.zeros((0, d)))
        if tok.data.ndim != 2 or tok.shape[1] != d:
            raise ValueError(f"{kind} tokens have width {tok.shape}, expected (n, {d})")
        n = tok.shape[0]
        table = positions[kind]
        if n > table.shape[0]:
            raise ValueError(f"{n} {kind} tokens exceed the position table ({table.shape[0]})")
        if n:
            tok = ag.add(ag.add(tok, ag.take(table, np.arange(n))),
                         ag.take(type_table, np.full(n, KIND_CODE[kind])))
            blocks.append(tok)
        segments.append(Segment(kind, start, n))
        start += n
    segmap = SegmentMap(stream, segments, list(region_categories), list(knowledge_categories))
    tokens = ag.concat(blocks) if blocks else ag.Tensor(np.zeros((0, d)))
    return StreamInput(tokens, segmap)


def assemble_external(regions, knowledge, transcript, caption, positions, type_table,
                      region_categories=(), knowledge_categories=()):
    return assemble(EXTERNAL, {REGION: regions, KNOWLEDGE: knowledge, TRANSCRIPT: transcript,
                               CAPTION: caption}, positions, type_table,
                    region_categories, knowledge_categories)


def assemble_internal(transcript, caption, video, positions, type_table):
    return assemble(INTERNAL, {TRANSCRIPT: transcript, CAPTION: caption, VIDEO: video},
                    positions, type_table)
