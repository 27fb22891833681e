"""Caption metrics (BLEU@4, ROUGE-L, CIDEr, Rep@4) and evaluation drivers.

All inputs are tokenized the same way: lowercase, punctuation stripped
except apostrophes, split on whitespace.  METEOR is not computed; reports
mark it absent.
"""

import math
from collections import Counter
from dataclasses import dataclass, field

from .data import tokenize
from .kernels import lcs_length

MAX_N = 4
BLEU_EPS = 1e-9
ROUGE_BETA2 = 1.2
CIDER_SCALE = 10.0
ABSENT = ("meteor",)


class EvaluationError(ValueError):
    pass


def _words(x):
    return tokenize(x) if isinstance(x, str) else tokenize(" ".join(x))


def ngrams(words, n):
    return Counter(tuple(words[i:i + n]) for i in range(len(words) - n + 1))


# ------------------------------------------------------------------ BLEU


def _bleu_stats(cand, refs):
    """(clipped matches per n, candidate n-gram totals per n, cand len, closest ref len)."""
    matches, totals = [], []
    for n in range(1, MAX_N + 1):
        c = ngrams(cand, n)
        best = Counter()
        for r in refs:
            best |= ngrams(r, n)
        matches.append(sum(min(k, best[g]) for g, k in c.items()))
        totals.append(max(len(cand) - n + 1, 0))
    ref_len = min((abs(len(r) - len(cand)), len(r)) for r in refs)[1]
    return matches, totals, len(cand), ref_len


def _bleu_from_stats(matches, totals, cand_len, ref_len):
    if cand_len == 0:
        return 0.0
    log_p = 0.0
    for m, t in zip(matches, totals):
        p = m / t if m > 0 else BLEU_EPS / max(t, 1)
        log_p += math.log(p) / MAX_N
    bp = 1.0 if cand_len > ref_len else math.exp(1.0 - ref_len / cand_len)
    return bp * math.exp(log_p)


def bleu4(candidate, references):
    """Sentence BLEU@4 with brevity penalty against the closest reference length."""
    refs = [_words(r) for r in references]
    if not refs:
        raise EvaluationError("bleu4 needs at least one reference")
    return _bleu_from_stats(*_bleu_stats(_words(candidate), refs))


def corpus_bleu4(candidates, references_per_item):
    """Corpus BLEU@4: clipped counts and lengths summed over items first."""
    matches, totals = [0] * MAX_N, [0] * MAX_N
    cand_len = ref_len = 0
    for cand, refs in zip(candidates, references_per_item):
        m, t, c, r = _bleu_stats(_words(cand), [_words(x) for x in refs])
        matches = [a + b for a, b in zip(matches, m)]
        totals = [a + b for a, b in zip(totals, t)]
        cand_len += c
        ref_len += r
    return _bleu_from_stats(matches, totals, cand_len, ref_len)


# ------------------------------------------------------------------ ROUGE-L


def rouge_l(candidate, references):
    """LCS F-measure with beta^2 = 1.2, maximized over references."""
    cand = _words(candidate)
    refs = [_words(r) for r in references]
    if not refs:
        raise EvaluationError("rouge_l needs at least one reference")
    if not cand:
        return 0.0
    ids = {}
    cand_ids = [ids.setdefault(w, len(ids)) for w in cand]
    best = 0.0
    for r in refs:
        if not r:
            continue
        lcs = lcs_length(cand_ids, [ids.setdefault(w, len(ids)) for w in r])
        if lcs == 0:
            continue
        p, rec = lcs / len(cand), lcs / len(r)
        best = max(best, (1 + ROUGE_BETA2) * p * rec / (rec + ROUGE_BETA2 * p))
    return best


# ------------------------------------------------------------------ CIDEr


def _tfidf(words, n, df, log_n):
    return {g: k * (log_n - math.log(max(1.0, df[g]))) for g, k in ngrams(words, n).items()}


def _cosine(a, b):
    na = math.sqrt(sum(v * v for v in a.values()))
    nb = math.sqrt(sum(v * v for v in b.values()))
    if na == 0 or nb == 0:
        return 0.0
    return sum(v * b.get(g, 0.0) for g, v in a.items()) / (na * nb)


def cider(candidates, references_per_item):
    """Per-item CIDEr and the corpus mean.

    Document frequency of an n-gram is the number of items whose reference
    set contains it; idf = ln(N) - ln(max(1, df)); tf is the raw count.
    """
    refs = [[_words(r) for r in item] for item in references_per_item]
    if not refs or not any(refs):
        raise EvaluationError("cider needs a non-empty reference corpus")
    if len(refs) != len(candidates):
        raise EvaluationError(f"{len(candidates)} candidates for {len(refs)} reference items")
    log_n = math.log(len(refs))
    df = [Counter() for _ in range(MAX_N)]
    for item in refs:
        for n in range(MAX_N):
            df[n].update({g for r in item for g in ngrams(r, n + 1)})
    scores = []
    for cand, item in zip(candidates, refs):
        cand = _words(cand)
        total = 0.0
        for n in range(MAX_N):
            vc = _tfidf(cand, n + 1, df[n], log_n)
            if item:
                total += sum(_cosine(vc, _tfidf(r, n + 1, df[n], log_n)) for r in item) / len(item)
        scores.append(CIDER_SCALE * total / MAX_N)
    return scores, sum(scores) / len(scores)


# ------------------------------------------------------------------ Rep@4


def rep4(paragraph):
    """1 - distinct/total 4-grams; 0.0 for paragraphs under four words."""
    words = _words(paragraph)
    grams = ngrams(words, 4)
    total = sum(grams.values())
    if total == 0:
        return 0.0
    return 1.0 - len(grams) / total


# ------------------------------------------------------------------ drivers


@dataclass
class EvalReport:
    mode: str
    scores: dict
    items: list = field(default_factory=list)  # (key, {metric: value})

    def lines(self):
        out = [f"{name}\t{self.mode}\t{value!r}" for name, value in self.scores.items()]
        out += [f"{name}\t{self.mode}\tabsent" for name in ABSENT]
        return out

    def table(self):
        names = list(self.scores) + list(ABSENT)
        width = max(len(n) for n in names)
        rows = [f"{'metric':<{width}}  {self.mode}", f"{'-' * width}  {'-' * 10}"]
        rows += [f"{n:<{width}}  {self.scores[n]:.6f}" for n in self.scores]
        rows += [f"{n:<{width}}  absent" for n in ABSENT]
        return "\n".join(rows)


def _score_items(keys, candidates, references):
    ciders = cider(candidates, references)[0]
    items = []
    for key, cand, refs, c in zip(keys, candidates, references, ciders):
        items.append((key, {"bleu4": bleu4(cand, refs), "rouge_l": rouge_l(cand, refs), "cider": c}))
    scores = {
        "bleu4": corpus_bleu4(candidates, references),
        "rouge_l": sum(i[1]["rouge_l"] for i in items) / len(items),
        "cider": sum(ciders) / len(ciders),
    }
    return scores, items


def _check_coverage(predictions, manifest):
    missing = [f"{v.video_id}/{c.clip_id}" for v, c in manifest.clips()
               if (v.video_id, c.clip_id) not in predictions]
    if missing:
        raise EvaluationError("missing predictions for clips: " + ", ".join(missing))


def evaluate_micro(predictions, manifest):
    """Score every clip independently.  ``predictions`` maps (video_id, clip_id) to words."""
    _check_coverage(predictions, manifest)
    pairs = manifest.clips()
    if not pairs:
        raise EvaluationError("manifest has no clips")
    keys = [(v.video_id, c.clip_id) for v, c in pairs]
    scores, items = _score_items(keys, [predictions[k] for k in keys],
                                 [c.captions for _, c in pairs])
    return EvalReport("micro", scores, items)


def paragraphs(predictions, manifest):
    """Per video: (video_id, predicted paragraph, reference paragraphs).

    The j-th reference paragraph joins the j-th reference caption of every
    clip, for j below the smallest reference count among the clips.
    """
    out = []
    for video in manifest.videos:
        if not video.clips:
            continue
        pred = " ".join(" ".join(_words(predictions[(video.video_id, c.clip_id)])) for c in video.clips)
        n_refs = min(len(c.captions) for c in video.clips)
        refs = [" ".join(" ".join(_words(c.captions[j])) for c in video.clips) for j in range(n_refs)]
        out.append((video.video_id, pred, refs))
    return out


def evaluate_paragraph(predictions, manifest):
    """Score one paragraph per video; Rep@4 over the predicted paragraphs."""
    _check_coverage(predictions, manifest)
    paras = paragraphs(predictions, manifest)
    if not paras:
        raise EvaluationError("manifest has no clips")
    scores, items = _score_items([p[0] for p in paras], [p[1] for p in paras], [p[2] for p in paras])
    for (_, pred, _), (_, item) in zip(paras, items):
        item["rep4"] = rep4(pred)
    scores["rep4"] = sum(i[1]["rep4"] for i in items) / len(items)
    return EvalReport("paragraph", scores, items)


def evaluate(predictions, manifest, mode="micro"):
    if mode == "micro":
        return evaluate_micro(predictions, manifest)
    if mode == "paragraph":
        return evaluate_paragraph(predictions, manifest)
    raise EvaluationError(f"unknown mode {mode!r} (micro|paragraph)")


# ------------------------------------------------------------------ prediction files


def write_predictions(path, predictions):
    """One line per clip: ``video_id<TAB>clip_id<TAB>words``, in insertion order."""
    with open(path, "w", encoding="utf-8") as fh:
        for (vid, cid), words in predictions.items():
            fh.write(f"{vid}\t{cid}\t{' '.join(words)}\n")


def read_predictions(path):
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise EvaluationError(f"{path}:{lineno}: expected 3 tab-separated fields")
            out[(parts[0], parts[1])] = parts[2].split()
    return out
