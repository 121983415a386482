"""Utterance records and the JSON-lines corpus manifest."""

import json
from dataclasses import dataclass, asdict

NOISE_TAGS = ("none", "white", "ssn", "babble")


@dataclass
class UtteranceRecord:
    id: str
    speaker: str
    words: list               # 6 word ids, one per slot
    noise_type: str           # none | white | ssn | babble
    snr_db: object            # float, or the string "clean"
    audio: str                # path to the WAV file
    alignment: list           # [(word_id, start_sample, end_sample)], zero-based half-open
    scale: float = 1.0        # global rescale applied at mix time (peak limiting)
    n_samples: int | None = None

    def __post_init__(self):
        self.alignment = [tuple(seg) for seg in self.alignment]
        self.validate()

    def validate(self):
        if self.noise_type not in NOISE_TAGS:
            raise ValueError(f"record {self.id}: bad noise_type {self.noise_type!r}")
        if isinstance(self.snr_db, str):
            if self.snr_db != "clean":
                raise ValueError(f"record {self.id}: snr_db must be a number or 'clean'")
        else:
            self.snr_db = float(self.snr_db)
        if len(self.words) != 6:
            raise ValueError(f"record {self.id}: expected 6 words, got {len(self.words)}")
        prev_end = None
        for word, start, end in self.alignment:
            if start < 0 or end <= start:
                raise ValueError(f"record {self.id}: bad alignment span ({word}, {start}, {end})")
            if prev_end is not None and start < prev_end:
                raise ValueError(f"record {self.id}: overlapping alignment at word {word!r}")
            prev_end = end
        if self.n_samples is not None and self.alignment and prev_end > self.n_samples:
            raise ValueError(f"record {self.id}: alignment exceeds signal length")

    def snr_value(self, clean_snr_db=40.0):
        return clean_snr_db if self.snr_db == "clean" else float(self.snr_db)

    def condition(self):
        """(noise_type, snr label) bucket key for model training."""
        label = self.snr_db if isinstance(self.snr_db, str) else f"{self.snr_db:g}"
        return (self.noise_type, label)


def save_manifest(path, records):
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            row = asdict(rec)
            row["alignment"] = [list(seg) for seg in rec.alignment]
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def load_manifest(path):
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
                records.append(UtteranceRecord(**row))
            except (ValueError, TypeError, KeyError) as exc:
                raise ValueError(f"{path}:{lineno}: malformed record: {exc}") from exc
    return records
