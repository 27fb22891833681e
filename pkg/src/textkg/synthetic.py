"""Deterministic toy cooking world standing in for the feature extractors.

Each clip shows one food and one utensil.  Foods come in look-alike groups
that share one visual prototype: one food per group carries the planted
attribute and the others share a common attribute.  Only the general
knowledge graph states which attribute a food has (``tomato has_property
crimson``) and what kind of food it is, so a caption's attribute word can be
placed reliably only by reading the retrieved knowledge.  Held-out foods
carry the planted attribute, reuse a group's prototype and appear only in
``split: test`` videos; without knowledge the look suggests the group's
common attribute.  The planted word never occurs in a transcript.
"""

import os

import numpy as np

from .config import ModalityConfig, RunConfig, TrainConfig, Paths
from .data import Clip, DatasetManifest, Region, Video, write_features
from .embeddings import EmbeddingTable, save_word_vectors

LONGTAIL_WORD = "crimson"

# (food, property, kind) groups sharing one visual prototype
FOOD_GROUPS = (
    (("tomato", LONGTAIL_WORD, "fruit"), ("potato", "golden", "tuber"),
     ("onion", "golden", "bulb"), ("corn", "golden", "grain")),
    (("cherry", LONGTAIL_WORD, "fruit"), ("lettuce", "leafy", "salad"),
     ("cabbage", "leafy", "brassica"), ("spinach", "leafy", "herb")),
)
# held-out food -> (property, kind, index of the group whose prototype it reuses)
HELDOUT_FOODS = {"radish": (LONGTAIL_WORD, "root", 0), "beet": (LONGTAIL_WORD, "root", 1)}

UTENSILS = {"knife": "sharp", "spoon": "wooden", "pan": "hot", "bowl": "large"}
UTENSIL_USE = {"knife": "cutting", "spoon": "stirring", "pan": "frying", "bowl": "mixing"}
VERBS = {  # verb -> (adverb, utensil)
    "chop": ("quickly", "knife"),
    "slice": ("thinly", "knife"),
    "peel": ("slowly", "knife"),
    "stir": ("gently", "spoon"),
    "fry": ("lightly", "pan"),
    "wash": ("carefully", "bowl"),
}
TRANSCRIPT_TEMPLATES = (
    "first grab the {uattr} {utensil} and {adverb} {verb} everything for a while",
    "now we {adverb} {verb} it using the {uattr} {utensil} right here",
    "okay take your {uattr} {utensil} then {adverb} {verb} it until done",
)
CAPTION_TEMPLATE = "{verb} the {prop} {food} with the {utensil}"
DISTRACTOR_TRIPLES = (
    ("car", "has_property", "fast"),
    ("river", "has_property", "wet"),
    ("kitchen", "used_for", "cooking"),
)

FRAMES = 2
APPEARANCE_DIM = 8
MOTION_DIM = 8
REGION_DIM = 16
WORD_DIM = 24


def food_table():
    """food -> (property, kind, prototype index, split)."""
    out = {}
    for k, group in enumerate(FOOD_GROUPS):
        for food, prop, kind in group:
            out[food] = (prop, kind, k, "train")
    for food, (prop, kind, k) in HELDOUT_FOODS.items():
        out[food] = (prop, kind, k, "test")
    return out


def lexicon():
    lex = {}
    for food in food_table():
        lex[food] = "noun"
    for prop, _, _, _ in food_table().values():
        lex[prop] = "adjective"
    for utensil, uattr in UTENSILS.items():
        lex[utensil] = "noun"
        lex[uattr] = "adjective"
    for verb, (adverb, _) in VERBS.items():
        lex[verb] = "verb"
        lex[adverb] = "adverb"
    return dict(sorted(lex.items()))


def general_triples():
    triples = []
    for food, (prop, kind, _, _) in food_table().items():
        triples.append((food, "has_property", prop))
        triples.append((food, "at_location", "kitchen"))
        triples.append((food, "is_a", kind))
    for utensil, use in UTENSIL_USE.items():
        triples.append((utensil, "used_for", use))
    triples.extend(DISTRACTOR_TRIPLES)
    return triples


def all_words():
    words = set(lexicon())
    for tpl in TRANSCRIPT_TEMPLATES + (CAPTION_TEMPLATE,):
        words.update(w for w in tpl.split() if not w.startswith("{"))
    for h, r, t in general_triples():
        words.update(h.split() + r.replace("_", " ").split() + t.split())
    return sorted(words)


def make_clip(rng, clip_id, food, verb, prototypes, feature_dir, noise=0.15):
    foods = food_table()
    prop, _, proto, _ = foods[food]
    adverb, utensil = VERBS[verb]
    uattr = UTENSILS[utensil]
    verbs = sorted(VERBS)
    v_idx = verbs.index(verb)
    app = prototypes["verb_app"][v_idx] + noise * rng.standard_normal((FRAMES, APPEARANCE_DIM))
    mot = prototypes["verb_mot"][v_idx] + noise * rng.standard_normal((FRAMES, MOTION_DIM))
    app_path = os.path.join(feature_dir, f"{clip_id}_app.txt")
    mot_path = os.path.join(feature_dir, f"{clip_id}_mot.txt")
    regions = []
    u_idx = sorted(UTENSILS).index(utensil)
    for f in range(FRAMES):
        fconf = round(0.9 - 0.05 * rng.random(), 4)
        uconf = round(0.6 - 0.05 * rng.random(), 4)
        food_feat = prototypes["food"][proto] + noise * rng.standard_normal(REGION_DIM)
        ut_feat = prototypes["utensil"][u_idx] + noise * rng.standard_normal(REGION_DIM)
        regions.append(Region(food, fconf, f, [round(float(x), 6) for x in food_feat]))
        regions.append(Region(utensil, uconf, f, [round(float(x), 6) for x in ut_feat]))
    tpl = TRANSCRIPT_TEMPLATES[int(rng.integers(len(TRANSCRIPT_TEMPLATES)))]
    transcript = tpl.format(uattr=uattr, utensil=utensil, adverb=adverb, verb=verb).split()
    caption = CAPTION_TEMPLATE.format(verb=verb, prop=prop, food=food, utensil=utensil).split()
    return Clip(clip_id, app_path, mot_path, regions, transcript, [caption]), (app, mot)


def generate(out_dir, seed=0, videos=4, clips=2, heldout_videos=0, heldout_clips=2):
    """Write manifest, features, lexicon, general KG, word vectors and config.

    Returns the manifest path.  Training foods are assigned in a seeded
    round-robin so any 8 consecutive training clips cover all 8 foods.
    """
    rng = np.random.default_rng(seed)
    os.makedirs(os.path.join(out_dir, "features"), exist_ok=True)
    prototypes = {
        "food": rng.standard_normal((len(FOOD_GROUPS), REGION_DIM)),
        "utensil": rng.standard_normal((len(UTENSILS), REGION_DIM)),
        "verb_app": rng.standard_normal((len(VERBS), APPEARANCE_DIM)),
        "verb_mot": rng.standard_normal((len(VERBS), MOTION_DIM)),
    }
    foods = food_table()
    train_foods = [f for f, (_, _, _, s) in foods.items() if s == "train"]
    test_foods = [f for f, (_, _, _, s) in foods.items() if s == "test"]
    verbs = sorted(VERBS)

    def schedule(pool, n):
        out = []
        while len(out) < n:
            out.extend(pool[i] for i in rng.permutation(len(pool)))
        return out[:n]

    vids = []
    train_plan = schedule(train_foods, videos * clips)
    test_plan = schedule(test_foods, heldout_videos * heldout_clips)
    for split, n_videos, n_clips, plan in (("train", videos, clips, train_plan),
                                           ("test", heldout_videos, heldout_clips, test_plan)):
        for v in range(n_videos):
            vid = f"{split}{v:03d}"
            clip_list = []
            for c in range(n_clips):
                food = plan[v * n_clips + c]
                verb = verbs[int(rng.integers(len(verbs)))]
                clip, (app, mot) = make_clip(rng, f"{vid}_c{c}", food, verb, prototypes, "features")
                write_features(os.path.join(out_dir, clip.appearance), app)
                write_features(os.path.join(out_dir, clip.motion), mot)
                clip_list.append(clip)
            vids.append(Video(vid, clip_list, split))
    manifest = DatasetManifest(vids, out_dir)
    manifest_path = os.path.join(out_dir, "manifest.json")
    manifest.save(manifest_path)

    with open(os.path.join(out_dir, "lexicon.tsv"), "w", encoding="utf-8") as fh:
        for w, tag in lexicon().items():
            fh.write(f"{w}\t{tag}\n")
    with open(os.path.join(out_dir, "general_kg.tsv"), "w", encoding="utf-8") as fh:
        fh.write("# head\trelation\ttail\n")
        for h, r, t in general_triples():
            fh.write(f"{h}\t{r}\t{t}\n")
    words = all_words()
    vecs = rng.standard_normal((len(words), WORD_DIM)) / np.sqrt(WORD_DIM)
    table = EmbeddingTable(WORD_DIM, {w: np.round(v, 6) for w, v in zip(words, vecs)})
    save_word_vectors(table, os.path.join(out_dir, "vectors.txt"))
    synthetic_config(seed).save(os.path.join(out_dir, "config.json"))
    return manifest_path


def synthetic_config(seed=0):
    """Desk-scale run config matching the generated corpus.

    Paths are relative to the corpus directory, where the config is saved.
    """
    model = ModalityConfig(d_model=64, heads=4, n_blocks=2, appearance_dim=APPEARANCE_DIM,
                           motion_dim=MOTION_DIM, region_dim=REGION_DIM, word_dim=WORD_DIM,
                           max_frames=8, max_objects=4)
    train = TrainConfig(base_lr=3e-3, batch_size=6, epochs=750, seed=seed, weight_decay=0.01)
    paths = Paths(manifest="manifest.json", word_vectors="vectors.txt", general_kg="general_kg.tsv",
                  lexicon="lexicon.tsv", out_dir="run")
    return RunConfig(model=model, train=train, paths=paths)
