"""Glue from a RunConfig to loaded resources, prepared clips and a model."""

from dataclasses import dataclass

from .data import load_manifest, prepare_clip
from .embeddings import EmbeddingTable, Vocabulary, load_word_vectors
from .knowledge import (KnowledgeGraph, build_specific_kg, load_general_kg, load_lexicon,
                        merge_graphs)
from .model import TextKGModel
from .training import apply_ablation


@dataclass
class Resources:
    manifest: object
    table: EmbeddingTable
    kg: KnowledgeGraph
    general: KnowledgeGraph
    specific: KnowledgeGraph


def build_graphs(manifest, general_path="", lexicon_path=""):
    general = load_general_kg(general_path)[0] if general_path else None
    specific = None
    if lexicon_path:
        sentences = [c.transcript for _, c in manifest.clips()]
        specific = build_specific_kg(sentences, load_lexicon(lexicon_path))
    return general, specific


def load_resources(config, manifest_path=None):
    paths = config.paths
    manifest = load_manifest(manifest_path or paths.manifest)
    if paths.word_vectors:
        table = load_word_vectors(paths.word_vectors, config.model.word_dim, config.unk_seed)
    else:
        table = EmbeddingTable(config.model.word_dim, unk_seed=config.unk_seed)
    general, specific = build_graphs(manifest, paths.general_kg, paths.lexicon)
    return Resources(manifest, table, merge_graphs(general, specific), general, specific)


def prepare_clips(res, config, split="train", switches=None):
    switches = switches or config.train.switches
    out = []
    for video, clip in res.manifest.clips(split):
        prepared = prepare_clip(res.manifest, video, clip, config.model)
        out.append(apply_ablation(prepared, switches, res.kg, res.table, config.model))
    return out


def build_vocab(manifest, min_count=1, split="train"):
    """Vocabulary over the raw captions and transcripts of one split.

    Built before any ablation so every switch setting shares one vocabulary.
    """
    pairs = manifest.clips(split)
    sentences = [cap for _, c in pairs for cap in c.captions] + [c.transcript for _, c in pairs]
    return Vocabulary.build(sentences, min_count)


def new_model(res, config):
    vocab = build_vocab(res.manifest, config.min_word_count)
    return TextKGModel(config.model, vocab, res.kg.relation_set, res.table, seed=config.train.seed)
