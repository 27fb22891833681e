"""Knowledge graphs: loading, phrase mining, retrieval and ranking."""

import logging
from collections import Counter
from dataclasses import dataclass, field

from .embeddings import cosine_similarity, sentence_embedding

log = logging.getLogger(__name__)

GENERAL, SPECIFIC = "general", "specific"
POS_TAGS = ("noun", "adjective", "verb", "adverb", "other")

HAS_PROPERTY = "has_property"
RELATED_TO = "related_to"
DONE_MANNER = "done_manner"
SPECIFIC_RELATIONS = (HAS_PROPERTY, RELATED_TO, DONE_MANNER)
TIE_TOLERANCE = 1e-12


class KGFormatError(ValueError):
    pass


@dataclass(frozen=True)
class KnowledgeTriple:
    head: str
    relation: str
    tail: str
    source: str = field(default=GENERAL, compare=False)

    def __post_init__(self):
        if not self.head.strip() or not self.tail.strip():
            raise ValueError(f"triple needs non-empty head and tail: {self!r}")

    @property
    def key(self):
        return (self.head, self.relation, self.tail)

    def words(self):
        """Words describing the triple, used for ranking."""
        return self.head.split() + self.relation.replace("_", " ").split() + self.tail.split()

    def tsv(self):
        return f"{self.head}\t{self.relation}\t{self.tail}"


class KnowledgeGraph:
    """Triples indexed by head and tail term (case-folded)."""

    def __init__(self, triples=()):
        self.triples = []
        self.counts = Counter()
        self.sources = {}
        self.relation_set = []
        self._keys = {}
        self._index = {}
        for t in triples:
            self.add(t)

    def add(self, triple, count=1):
        """Insert ``triple``; returns False when it was already present."""
        if triple.key in self._keys:
            self.counts[triple.key] += count
            self.sources[triple.key].add(triple.source)
            return False
        self._keys[triple.key] = len(self.triples)
        self.triples.append(triple)
        self.counts[triple.key] += count
        self.sources[triple.key] = {triple.source}
        if triple.relation not in self.relation_set:
            self.relation_set.append(triple.relation)
        pos = len(self.triples) - 1
        for term in {triple.head.casefold(), triple.tail.casefold()}:
            self._index.setdefault(term, []).append(pos)
        return True

    def __len__(self):
        return len(self.triples)

    def __iter__(self):
        return iter(self.triples)

    def __contains__(self, triple):
        return triple.key in self._keys

    def by_head(self, head):
        h = head.casefold()
        return [self.triples[i] for i in self._index.get(h, ()) if self.triples[i].head.casefold() == h]

    def source_counts(self):
        return Counter(t.source for t in self.triples)


def load_general_kg(path):
    """Parse ``head<TAB>relation<TAB>tail`` lines into a general graph.

    Returns ``(graph, stats)`` where stats counts loaded triples, skipped
    comment/blank lines and collapsed duplicates.
    """
    kg = KnowledgeGraph()
    stats = Counter(loaded=0, skipped=0, duplicates=0)
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if not line.strip() or line.lstrip().startswith("#"):
                stats["skipped"] += 1
                continue
            fields = line.split("\t")
            if len(fields) != 3:
                raise KGFormatError(f"{path}: line {lineno}: expected 3 tab-separated fields, got {len(fields)}")
            head, rel, tail = (f.strip() for f in fields)
            try:
                triple = KnowledgeTriple(head, rel, tail, GENERAL)
            except ValueError as exc:
                raise KGFormatError(f"{path}: line {lineno}: {exc}") from None
            if kg.add(triple):
                stats["loaded"] += 1
            else:
                stats["duplicates"] += 1
    return kg, dict(stats)


def write_kg(kg, path):
    with open(path, "w", encoding="utf-8") as fh:
        for t in kg:
            fh.write(t.tsv() + "\n")


def load_lexicon(path):
    lex = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) != 2 or fields[1] not in POS_TAGS:
                raise KGFormatError(f"{path}: line {lineno}: expected 'word<TAB>tag' with tag in {POS_TAGS}")
            lex[fields[0]] = fields[1]
    return lex


def pos_tag(words, lexicon):
    return [lexicon.get(w, "other") for w in words]


def build_specific_kg(transcripts, lexicon):
    """Mine adjective+noun, noun+noun and adverb+verb adjacent pairs.

    ``transcripts`` is a sequence of sentences, each a word sequence.
    """
    kg = KnowledgeGraph()
    for sentence in transcripts:
        words = list(sentence)
        tags = pos_tag(words, lexicon)
        for (w1, t1), (w2, t2) in zip(zip(words, tags), zip(words[1:], tags[1:])):
            if t1 == "adjective" and t2 == "noun":
                kg.add(KnowledgeTriple(w2, HAS_PROPERTY, w1, SPECIFIC))
            elif t1 == "noun" and t2 == "noun":
                kg.add(KnowledgeTriple(w2, RELATED_TO, w1, SPECIFIC))
            elif t1 == "adverb" and t2 == "verb":
                kg.add(KnowledgeTriple(w2, DONE_MANNER, w1, SPECIFIC))
    return kg


def merge_graphs(general=None, specific=None):
    """Union of the two graphs; a triple present in both keeps source=general."""
    kg = KnowledgeGraph()
    for g in (general, specific):
        if g is None:
            continue
        for t in g:
            kg.add(t, g.counts[t.key])
            kg.sources[t.key] |= g.sources[t.key]
    return kg


def retrieve(kg, category):
    """All triples whose head or tail equals ``category``, in insertion order."""
    return [kg.triples[i] for i in kg._index.get(category.casefold(), ())]


@dataclass
class RankedKnowledge:
    category: str
    triples: list
    scores: list

    def __len__(self):
        return len(self.triples)


def rank_knowledge(triples, transcript_words, table, n_k=5, category=""):
    """Keep the ``n_k`` triples most cosine-similar to the transcript.

    Ties on score are broken by the lexicographic (head, relation, tail).
    Returned scores are non-increasing up to ``TIE_TOLERANCE``.
    """
    if n_k < 0:
        raise ValueError("n_k must be >= 0")
    transcript_words = list(transcript_words)
    if not transcript_words:
        raise ValueError("cannot rank knowledge against an empty transcript")
    query = sentence_embedding(table, transcript_words)
    scored = [(cosine_similarity(sentence_embedding(table, t.words()), query), t) for t in triples]
    scored = _order_with_ties(scored)[:n_k]
    return RankedKnowledge(category, [t for _, t in scored], [s for s, _ in scored])


def _order_with_ties(scored):
    """Sort (score, triple) pairs by descending score, lexicographic on ties.

    Scores closer than ``TIE_TOLERANCE`` to their neighbour form one tie
    group: cosines that are equal in exact arithmetic can differ by an ulp
    after summation in a different order.
    """
    scored = sorted(scored, key=lambda st: -st[0])
    out, group = [], []
    for item in scored:
        if group and group[-1][0] - item[0] > TIE_TOLERANCE:
            out.extend(sorted(group, key=lambda st: st[1].key))
            group = []
        group.append(item)
    out.extend(sorted(group, key=lambda st: st[1].key))
    return out


def select_knowledge(kg, categories, transcript_words, table, n_k=5, use_ranking=True,
                     sources=(GENERAL, SPECIFIC)):
    """Per-clip knowledge selection.

    Retrieves for each distinct detected category, ranks against the
    transcript (or keeps insertion order when ranking is off or there is no
    transcript), caps at ``n_k`` per object and drops triples already taken
    by an earlier object.  Only triples backed by one of ``sources`` are
    eligible.  Returns a list of (triple, source_category).
    """
    sources = set(sources)
    chosen = []
    taken = set()
    seen_cats = []
    for c in categories:
        if c not in seen_cats:
            seen_cats.append(c)
    for cat in seen_cats:
        found = [t for t in retrieve(kg, cat)
                 if t.key not in taken and kg.sources[t.key] & sources]
        if use_ranking and transcript_words:
            found = rank_knowledge(found, transcript_words, table, n_k, cat).triples
        else:
            found = found[:n_k]
        for t in found:
            taken.add(t.key)
            chosen.append((t, cat))
    return chosen
