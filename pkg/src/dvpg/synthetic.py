"""Toy labeled question-paraphrase generator for desk-scale runs.

Label 1 pairs keep the intent and swap the question template (several
valid rewrites exist, so the reference is one of many); label 0 pairs keep the
template and change one content slot, mirroring near-duplicate questions
with a different meaning. Place names are drawn from a long tail so that a
pruned vocabulary leaves some of them to the copy mechanism.
"""

from __future__ import annotations

import numpy as np

from .corpus import (PreparedCorpus, RawPair, Tokenizer, build_vocabulary, deduplicate, encode_pair,
                     filter_by_length, tokenize_pairs)

HOWTO_TEMPLATES = (
    "how do i {verb} {obj} ?",
    "how can i {verb} {obj} ?",
    "what is the best way to {verb} {obj} ?",
    "what are some tips to {verb} {obj} ?",
    "how should i {verb} {obj} ?",
)
WHAT_TEMPLATES = (
    "what is {adj} {noun} ?",
    "what does {adj} {noun} mean ?",
    "can you explain {adj} {noun} ?",
)
PLACE_TEMPLATES = (
    "what is the best {thing} in {place} ?",
    "which {thing} in {place} is the best ?",
    "where can i find a good {thing} in {place} ?",
)

VERB_OBJECTS = {
    "learn": ("python", "english", "guitar", "math", "chess", "french"),
    "quit": ("smoking", "my job", "sugar", "coffee"),
    "improve": ("my writing", "my memory", "my english", "my health"),
    "start": ("a business", "a blog", "a startup", "running"),
    "lose": ("weight", "belly fat", "ten pounds"),
    "find": ("a job", "a girlfriend", "an apartment", "a mentor"),
    "prepare for": ("an interview", "the exam", "a marathon"),
    "invest in": ("stocks", "real estate", "gold", "bitcoin"),
}
ADJ_NOUNS = (
    ("black", "white", "hat seo"),
    ("machine", "deep", "learning"),
    ("free", "paid", "web hosting"),
    ("dark", "white", "matter"),
    ("social", "print", "media"),
    ("quantum", "classical", "physics"),
)
THINGS = ("restaurant", "hotel", "university", "hospital", "gym", "school", "bookstore")
PLACES = (
    "india", "london", "paris", "berlin", "tokyo", "delhi", "mumbai", "boston", "chicago", "madrid",
    "rome", "sydney", "toronto", "dubai", "seoul", "lagos", "cairo", "lima", "oslo", "vienna",
    "prague", "dublin", "lisbon", "athens", "zurich", "munich", "austin", "denver", "seattle", "miami",
    "pune", "chennai", "kolkata", "jaipur", "goa", "hanoi", "manila", "jakarta", "nairobi", "accra",
    "quito", "bogota", "havana", "kyoto", "osaka", "perth", "auckland", "helsinki", "riga", "tallinn",
    "krakow", "porto", "seville", "valencia", "naples", "milan", "turin", "lyon", "nice", "geneva",
    "bergen", "malmo", "gdansk", "brno", "bratislava", "ljubljana", "zagreb", "split", "sarajevo", "skopje",
    "tirana", "sofia", "varna", "bucharest", "cluj", "iasi", "chisinau", "odessa", "lviv", "kharkiv",
    "minsk", "vilnius", "kaunas", "tartu", "turku", "tampere", "aarhus", "odense", "aalborg", "uppsala",
    "gothenburg", "trondheim", "stavanger", "reykjavik", "cork", "galway", "belfast", "glasgow", "leeds", "bristol",
    "cardiff", "york", "bath", "oxford", "cambridge", "brighton", "exeter", "norwich", "hull", "derby",
    "lille", "nantes", "rennes", "bordeaux", "toulouse", "marseille", "grenoble", "dijon", "reims", "metz",
    "bonn", "cologne", "dresden", "leipzig", "hanover", "bremen", "kiel", "mainz", "freiburg", "ulm",
    "basel", "bern", "lucerne", "lugano", "graz", "linz", "salzburg", "innsbruck", "bologna", "florence",
    "verona", "genoa", "palermo", "bari", "catania", "pisa", "siena", "bilbao", "malaga", "granada",
)


def _other(rng, options, current):
    choices = [o for o in options if o != current]
    return choices[int(rng.integers(len(choices)))]


def _pick(rng, options):
    return options[int(rng.integers(len(options)))]


def _howto(rng, label):
    verb = _pick(rng, sorted(VERB_OBJECTS))
    obj = _pick(rng, VERB_OBJECTS[verb])
    tpl = _pick(rng, HOWTO_TEMPLATES)
    original = tpl.format(verb=verb, obj=obj)
    if label == 1:
        return original, _other(rng, HOWTO_TEMPLATES, tpl).format(verb=verb, obj=obj)
    return original, tpl.format(verb=verb, obj=_other(rng, VERB_OBJECTS[verb], obj))


def _what(rng, label):
    adj, alt, noun = _pick(rng, ADJ_NOUNS)
    tpl = _pick(rng, WHAT_TEMPLATES)
    original = tpl.format(adj=adj, noun=noun)
    if label == 1:
        return original, _other(rng, WHAT_TEMPLATES, tpl).format(adj=adj, noun=noun)
    return original, tpl.format(adj=alt, noun=noun)


def _place(rng, label):
    thing, place = _pick(rng, THINGS), _pick(rng, PLACES)
    tpl = _pick(rng, PLACE_TEMPLATES)
    original = tpl.format(thing=thing, place=place)
    if label == 1:
        return original, _other(rng, PLACE_TEMPLATES, tpl).format(thing=thing, place=place)
    return original, tpl.format(thing=_other(rng, THINGS, thing), place=place)


_FAMILIES = (_howto, _howto, _what, _place, _place)


def generate_pairs(n: int, seed: int = 0, unique_originals: bool = False) -> list[RawPair]:
    """``n`` labeled pairs, roughly balanced between the two labels.

    With ``unique_originals`` no original question repeats, so every source
    has a single reference (useful for overfitting checks).
    """
    rng = np.random.default_rng(seed)
    pairs, seen = [], set()
    attempts = 0
    while len(pairs) < n:
        attempts += 1
        if attempts > 1000 * max(n, 1):
            raise ValueError(f"could not generate {n} distinct pairs")
        label = int(rng.integers(2))
        original, paraphrase = _pick(rng, _FAMILIES)(rng, label)
        key = original if unique_originals else (original, paraphrase, label)
        if key in seen:
            continue
        seen.add(key)
        pairs.append(RawPair(f"syn-{len(pairs)}", original, paraphrase, label))
    return pairs


def write_quora_tsv(path, pairs) -> None:
    """Write pairs in the six-column Quora layout, with header."""
    with open(path, "w", encoding="utf-8") as f:
        f.write("id\tqid1\tqid2\tquestion1\tquestion2\tis_duplicate\n")
        for i, p in enumerate(pairs):
            f.write(f"{i}\t{2 * i + 1}\t{2 * i + 2}\t{p.original}\t{p.paraphrase}\t{p.label}\n")


def toy_corpus(n: int, seed: int = 0, vocab_size: int = 200, max_source_length: int = 14) -> PreparedCorpus:
    """In-memory corpus whose train, dev and test splits are all the same ``n`` pairs.

    Originals are unique, so each source has exactly one reference; meant
    for overfitting checks.
    """
    pairs, _ = tokenize_pairs(generate_pairs(n, seed, unique_originals=True), Tokenizer())
    pairs = deduplicate(filter_by_length(pairs, max_source_length))
    vocab = build_vocabulary(pairs, vocab_size)
    encoded = [encode_pair(p, vocab) for p in pairs]
    return PreparedCorpus(vocab, encoded, list(encoded), list(encoded))
