"""Long-tail probe: can the model place a word that only the KG ties to a food?

The synthetic corpus holds out foods whose attribute is the planted word.
Their look-alike training foods carry other attributes, and the word never
occurs in a transcript, so only retrieved knowledge can justify it.  The
probe trains once with knowledge and once without, then reads the fused
teacher-forced prediction at the attribute slot of every held-out caption.
"""

import os
from dataclasses import dataclass, replace

from . import pipeline, synthetic
from .config import RunConfig, Switches
from .model import teacher_forced_predictions
from .training import train

ATTRIBUTE_SLOT = synthetic.CAPTION_TEMPLATE.split().index("{prop}")
PROBE_SIZE = {"videos": 48, "clips": 2, "heldout_videos": 5, "heldout_clips": 2}
PROBE_EPOCHS = 100


@dataclass
class ProbeResult:
    seed: int
    kg_on: float
    kg_off: float
    slots: int

    def satisfied(self, high=0.8, low=0.2):
        return self.kg_on >= high and self.kg_off <= low


def slot_accuracy(model, clips, word=synthetic.LONGTAIL_WORD, slot=ATTRIBUTE_SLOT):
    """Fraction of clips whose caption has ``word`` at ``slot`` and gets it predicted there."""
    target = model.vocab.index(word)
    hits = total = 0
    for clip in clips:
        if len(clip.caption) <= slot or clip.caption[slot] != word:
            continue
        total += 1
        hits += teacher_forced_predictions(model, clip, clip.caption)[slot] == target
    return hits / total if total else 0.0, total


def train_variant(config, switches, out_dir=None):
    cfg = RunConfig.from_dict(config.to_dict())
    cfg.train.switches = switches
    res = pipeline.load_resources(cfg)
    clips = pipeline.prepare_clips(res, cfg, "train", switches)
    model = pipeline.new_model(res, cfg)
    train(model, clips, cfg.train, out_dir)
    return model, pipeline.prepare_clips(res, cfg, "test", switches)


def run_probe(work_dir, seed, epochs=PROBE_EPOCHS):
    """Generate the probe corpus for ``seed`` and score both variants."""
    synthetic.generate(work_dir, seed=seed, **PROBE_SIZE)
    config = RunConfig.load(os.path.join(work_dir, "config.json"))
    config.train.epochs = epochs
    on_model, on_test = train_variant(config, Switches())
    off_model, off_test = train_variant(config, replace(Switches(), use_general_kg=False,
                                                       use_specific_kg=False))
    on, slots = slot_accuracy(on_model, on_test)
    off, _ = slot_accuracy(off_model, off_test)
    return ProbeResult(seed, on, off, slots)
