"""Six-slot matrix-sentence grammar: one word is chosen per slot."""

from dataclasses import dataclass, field


@dataclass(frozen=True)
class SlotSpec:
    """One sentence position with its closed vocabulary."""

    name: str
    words: tuple
    phoneme_counts: dict  # word id -> number of phoneme units

    def __post_init__(self):
        if len(set(self.words)) != len(self.words):
            raise ValueError(f"slot {self.name}: duplicate word ids")
        for w in self.words:
            n = self.phoneme_counts.get(w)
            if n is None or n < 1:
                raise ValueError(f"slot {self.name}: word {w!r} needs a phoneme count >= 1")


@dataclass(frozen=True)
class GrammarSpec:
    slots: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if len(self.slots) != 6:
            raise ValueError(f"grammar must have exactly 6 slots, got {len(self.slots)}")

    @property
    def slot_names(self):
        return [s.name for s in self.slots]

    @property
    def keyword_slots(self):
        """Indices of the scored keyword slots (color, letter, digit)."""
        return (1, 3, 4)

    def slot_index(self, name):
        return self.slot_names.index(name)

    def vocabulary(self):
        return [w for s in self.slots for w in s.words]

    def phoneme_count(self, word_id):
        for s in self.slots:
            if word_id in s.phoneme_counts:
                return s.phoneme_counts[word_id]
        raise KeyError(f"unknown word id: {word_id}")

    def validate_sentence(self, word_choices):
        if len(word_choices) != len(self.slots):
            raise ValueError(
                f"expected {len(self.slots)} words (one per slot), got {len(word_choices)}"
            )
        for slot, word in zip(self.slots, word_choices):
            if word not in slot.phoneme_counts:
                raise ValueError(f"word {word!r} is not in slot {slot.name!r}")


_VERBS = {"bin": 3, "lay": 2, "place": 4, "set": 3}
_COLORS = {"blue": 3, "green": 4, "red": 3, "white": 3}
_PREPS = {"at": 2, "by": 2, "in": 2, "with": 3}
_LETTERS = {
    "a": 1, "b": 2, "c": 2, "d": 2, "e": 1, "f": 2, "g": 2, "h": 3, "i": 1,
    "j": 2, "k": 2, "l": 2, "m": 2, "n": 2, "o": 1, "p": 2, "q": 2, "r": 2,
    "s": 2, "t": 2, "u": 2, "v": 2, "x": 3, "y": 2, "z": 2,
}
_DIGITS = {
    "zero": 4, "one": 3, "two": 2, "three": 3, "four": 3,
    "five": 3, "six": 4, "seven": 5, "eight": 2, "nine": 3,
}
_ADVERBS = {"again": 4, "now": 2, "please": 4, "soon": 3}


def _slot(name, table):
    return SlotSpec(name=name, words=tuple(table), phoneme_counts=dict(table))


def default_grammar():
    """Verb(4)-color(4)-preposition(4)-letter(25)-digit(10)-adverb(4)."""
    return GrammarSpec(slots=(
        _slot("verb", _VERBS),
        _slot("color", _COLORS),
        _slot("preposition", _PREPS),
        _slot("letter", _LETTERS),
        _slot("digit", _DIGITS),
        _slot("adverb", _ADVERBS),
    ))


def toy_grammar(sizes=(2, 3, 2, 4, 3, 2)):
    """Shrunken grammar with the same slot structure, for fast tests."""
    full = default_grammar()
    slots = []
    for spec, n in zip(full.slots, sizes):
        words = spec.words[:n]
        slots.append(SlotSpec(spec.name, words, {w: spec.phoneme_counts[w] for w in words}))
    return GrammarSpec(slots=tuple(slots))
