"""Additive attention masks (0 / -inf) for the two streams.

Rules, in the order their provenance is recorded:

* causal: a caption query at position t sees caption keys <= t only;
* context-caption: non-caption queries see no caption keys at all, so caption
  content can never flow back into context rows at deeper blocks;
* knowledge-isolation: caption queries see no knowledge keys (knowledge
  reaches captions only through region tokens);
* knowledge-relevance: region and knowledge tokens attend each other only
  when the knowledge was retrieved for that region's category.
"""

from dataclasses import dataclass

import numpy as np

from .tokens import CAPTION, KIND_CODE, KNOWLEDGE, REGION

NONE, CAUSAL, CONTEXT_CAPTION, KNOWLEDGE_ISOLATION, KNOWLEDGE_RELEVANCE = range(5)
PROVENANCE = {
    CAUSAL: "causal",
    CONTEXT_CAPTION: "context-caption",
    KNOWLEDGE_ISOLATION: "knowledge-isolation",
    KNOWLEDGE_RELEVANCE: "knowledge-relevance",
}


@dataclass
class MaskMatrix:
    values: np.ndarray
    provenance: np.ndarray

    @property
    def shape(self):
        return self.values.shape

    def blocked(self):
        return np.isneginf(self.values)

    def tags(self, i, j):
        return PROVENANCE.get(int(self.provenance[i, j]))


def _build(q_segmap, k_segmap, relevance):
    qk, kk = q_segmap.kinds(), k_segmap.kinds()
    qp, kp = q_segmap.positions(), k_segmap.positions()
    q_cap = (qk == KIND_CODE[CAPTION])[:, None]
    k_cap = (kk == KIND_CODE[CAPTION])[None, :]
    prov = np.zeros((len(qk), len(kk)), dtype=np.int8)

    causal = q_cap & k_cap & (kp[None, :] > qp[:, None])
    prov[causal] = CAUSAL
    ctx = ~q_cap & k_cap
    prov[ctx & (prov == NONE)] = CONTEXT_CAPTION
    iso = q_cap & (kk == KIND_CODE[KNOWLEDGE])[None, :]
    prov[iso & (prov == NONE)] = KNOWLEDGE_ISOLATION

    if relevance:
        qc = q_segmap.row_categories()
        kc = k_segmap.row_categories()
        q_reg = qk == KIND_CODE[REGION]
        q_kn = qk == KIND_CODE[KNOWLEDGE]
        k_reg = kk == KIND_CODE[REGION]
        k_kn = kk == KIND_CODE[KNOWLEDGE]
        pairs = (q_reg[:, None] & k_kn[None, :]) | (q_kn[:, None] & k_reg[None, :])
        for i, j in zip(*np.nonzero(pairs)):
            if qc[i] != kc[j] and prov[i, j] == NONE:
                prov[i, j] = KNOWLEDGE_RELEVANCE

    values = np.where(prov != NONE, -np.inf, 0.0)
    return MaskMatrix(values, prov)


def build_internal_mask(segmap):
    return _build(segmap, segmap, relevance=False)


def build_external_mask(segmap):
    return _build(segmap, segmap, relevance=True)


def build_cross_mask(query_segmap, key_segmap):
    return _build(query_segmap, key_segmap, relevance=True)
