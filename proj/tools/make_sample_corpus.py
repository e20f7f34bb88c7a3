#!/usr/bin/env python3
"""Regenerates the bundled sample corpus (data/sample_corpus/*.txt).

The corpus is synthetic prose assembled from a small template grammar with a
fixed seed, so the project ships no third-party text. Re-running this script
reproduces the committed files byte for byte.
"""

import random
from pathlib import Path

SEED = 20250810
OUT = Path(__file__).resolve().parent.parent / "data" / "sample_corpus"

THEMES = {
    "river": ["river", "water", "current", "bank", "reeds", "stones", "fish", "bridge"],
    "orchard": ["orchard", "apple", "branch", "blossom", "ladder", "basket", "roots", "fruit"],
    "workshop": ["workshop", "bench", "plane", "timber", "shavings", "chisel", "joint", "grain"],
    "harbor": ["harbor", "boat", "rope", "tide", "gull", "sail", "pier", "nets"],
    "meadow": ["meadow", "grass", "clover", "bees", "path", "fence", "hay", "larks"],
    "kitchen": ["kitchen", "bread", "kettle", "oven", "flour", "butter", "table", "soup"],
    "forest": ["forest", "pines", "moss", "trail", "deer", "shade", "ferns", "owls"],
    "village": ["village", "square", "well", "bell", "market", "lane", "roofs", "neighbors"],
    "mountain": ["mountain", "ridge", "snow", "pass", "cliff", "valley", "summit", "scree"],
    "garden": ["garden", "beans", "trellis", "soil", "seedlings", "watering", "weeds", "rows"],
    "library": ["library", "shelves", "pages", "lamp", "ledger", "ink", "maps", "letters"],
    "station": ["station", "platform", "whistle", "rails", "timetable", "carriage", "signal", "steam"],
    "mill": ["mill", "wheel", "grindstone", "sacks", "stream", "miller", "gears", "chute"],
    "coast": ["coast", "dunes", "driftwood", "spray", "lighthouse", "shells", "breeze", "cliffs"],
}

POSITIVE = ["bright", "calm", "warm", "gentle", "fresh", "rich", "sweet", "clear", "kind",
            "golden", "quiet", "steady"]
NEGATIVE = ["dark", "cold", "harsh", "bitter", "dull", "heavy", "broken", "rough", "gray",
            "tired", "empty", "thin"]
VERBS = ["carried", "turned", "held", "crossed", "followed", "gathered", "watched", "mended",
         "opened", "filled", "measured", "remembered"]
TIMES = ["in the morning", "before noon", "after the rain", "at dusk", "all afternoon",
         "through the winter", "in early spring", "late in the season"]
PEOPLE = ["the old keeper", "a young apprentice", "the ferryman", "our neighbor",
          "the miller's daughter", "an early traveler", "the schoolteacher", "two quiet brothers"]

TEMPLATES = [
    "The {noun1} was {adj} {time}, and {person} {verb} the {noun2} without hurry.",
    "{person} {verb} a {adj} {noun1} near the {noun2} {time}.",
    "When the {noun1} grew {adj}, {person} {verb} the {noun2} again.",
    "The {adj} {noun1} stood beside the {noun2}, and nobody {verb} it {time}.",
    "{time} the {noun1} seemed {adj}, so {person} {verb} the {noun2} twice.",
    "A {adj} wind moved over the {noun1} while {person} {verb} the {noun2}.",
    "{person} said the {noun1} was {adj} and {verb} the {noun2} before dark.",
    "Every day the {noun1} turned more {adj}, and the {noun2} was {verb} by hand.",
]


def sentence(rng, words):
    tpl = rng.choice(TEMPLATES)
    adj = rng.choice(POSITIVE if rng.random() < 0.62 else NEGATIVE)
    return tpl.format(
        noun1=rng.choice(words),
        noun2=rng.choice(words),
        adj=adj,
        verb=rng.choice(VERBS),
        time=rng.choice(TIMES),
        person=rng.choice(PEOPLE),
    )


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    rng = random.Random(SEED)
    for theme, words in THEMES.items():
        lines = []
        for _ in range(18):  # paragraphs
            para = " ".join(sentence(rng, words) for _ in range(6))
            lines.append(para)
        text = "\n\n".join(lines) + "\n"
        (OUT / f"{theme}.txt").write_text(text, encoding="utf-8")
        print(f"{theme}.txt: {len(text)} bytes")


if __name__ == "__main__":
    main()
