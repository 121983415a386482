"""Simulated listeners: psychometric keyword responses for NH and HI cohorts."""

import csv
import json
from dataclasses import dataclass, field, asdict

import numpy as np

from .features import Audiogram
from .validation import rng_for, stable_seed

SSN_SRT_ANCHOR_DB = -10.31     # normal-hearing anchor in speech-shaped noise
ALT_SSN_SRT_ANCHOR_DB = -10.1  # alternative reading of the same anchor
DEFAULT_SRT_ANCHORS_DB = {"ssn": SSN_SRT_ANCHOR_DB, "white": -8.8, "babble": -4.8}

# bundled hearing-impaired audiogram presets (thresholds in dB HL at
# 0.25/0.5/1/2/4/8 kHz), typical sloping and flat losses
HIL_AUDIOGRAMS = (
    (15, 10, 15, 20, 50, 75),
    (35, 30, 40, 50, 65, 70),
    (20, 20, 35, 45, 35, 40),
    (0, 5, 15, 45, 65, 60),
    (10, 15, 20, 25, 50, 60),
    (65, 65, 65, 60, 60, 80),
    (15, 30, 40, 50, 60, 65),
    (20, 25, 35, 30, 60, 50),
    (15, 20, 25, 20, 15, 20),
)

DEFAULT_NHL_COHORT = 20
DEFAULT_HIL_COHORT = 9
DEFAULT_SLOPE_PER_DB = 0.8
DEFAULT_LAPSE = 0.01
DEFAULT_HIL_SRT_FACTOR = 0.25  # dB SRT shift per dB HL of mean 2-4 kHz loss


@dataclass
class ListenerProfile:
    id: str
    type: str                     # NHL | HIL
    srt_db: dict                  # noise type -> SRT anchor in dB
    slope: float = DEFAULT_SLOPE_PER_DB
    lapse: float = DEFAULT_LAPSE
    guess: dict = field(default_factory=dict)   # keyword slot name -> chance floor
    audiogram: Audiogram | None = None
    seed: int = 0

    def __post_init__(self):
        if self.type not in ("NHL", "HIL"):
            raise ValueError(f"listener type must be NHL or HIL, got {self.type!r}")
        if self.slope <= 0:
            raise ValueError("psychometric slope must be positive")
        if not 0.0 <= self.lapse <= 0.05:
            raise ValueError("lapse rate must be in [0, 0.05]")
        for slot, g in self.guess.items():
            if not 0.0 < g < 1.0:
                raise ValueError(f"guess floor for {slot} must be in (0, 1)")
        if self.type == "HIL" and self.audiogram is None:
            raise ValueError("HIL profiles need an audiogram")

    def effective_srt(self, noise_type, hil_factor=DEFAULT_HIL_SRT_FACTOR):
        srt = self.srt_db[noise_type]
        if self.type == "HIL":
            srt = srt + hil_factor * self.audiogram.mean_2_4_khz()
        return srt

    def p_correct(self, snr_db, slot_name, noise_type):
        guess = self.guess[slot_name]
        srt = self.effective_srt(noise_type)
        # place the logistic midpoint so srt is the exact 50%-correct point
        # despite the guess floor; degenerate floors (>= 0.5) skip the shift
        midpoint = srt
        if guess < 0.5 and self.lapse < 0.5:
            ratio = (0.5 - guess) / (0.5 - self.lapse)
            midpoint = srt - np.log(ratio) / self.slope
        logistic = 1.0 / (1.0 + np.exp(-self.slope * (snr_db - midpoint)))
        return guess + (1.0 - guess - self.lapse) * logistic


def simulate_response(profile: ListenerProfile, snr_db, slot_name, utt_id,
                      noise_type="ssn") -> bool:
    """One Bernoulli keyword outcome, reproducible from content alone."""
    p = profile.p_correct(snr_db, slot_name, noise_type)
    draw = rng_for("response", profile.id, profile.seed, utt_id, slot_name).random()
    return bool(draw < p)


def make_cohort(n_listeners, listener_type, seed, grammar,
                srt_anchors=None, srt_spread_db=1.0,
                slope=DEFAULT_SLOPE_PER_DB, lapse=DEFAULT_LAPSE):
    """Listener profiles with SRTs drawn around the anchors.

    Draws are mean-centered so the cohort-average SRT equals the configured
    anchor exactly. HIL cohorts attach the bundled audiograms cyclically.
    """
    if n_listeners < 1:
        raise ValueError("cohort needs at least one listener")
    anchors = dict(DEFAULT_SRT_ANCHORS_DB)
    if srt_anchors:
        anchors.update(srt_anchors)
    guess = {
        grammar.slots[i].name: 1.0 / len(grammar.slots[i].words)
        for i in grammar.keyword_slots
    }
    rng = rng_for("cohort", listener_type, seed, n_listeners)
    offsets = rng.normal(0.0, srt_spread_db, n_listeners)
    offsets -= offsets.mean()
    profiles = []
    for i in range(n_listeners):
        audiogram = None
        if listener_type == "HIL":
            audiogram = Audiogram(HIL_AUDIOGRAMS[i % len(HIL_AUDIOGRAMS)])
        profiles.append(ListenerProfile(
            id=f"{listener_type.lower()}{i + 1:02d}",
            type=listener_type,
            srt_db={k: v + offsets[i] for k, v in anchors.items()},
            slope=slope,
            lapse=lapse,
            guess=dict(guess),
            audiogram=audiogram,
            seed=stable_seed("listener", seed, i),
        ))
    return profiles


def save_profiles(path, profiles):
    rows = []
    for p in profiles:
        row = asdict(p)
        row["audiogram"] = list(p.audiogram.thresholds_db_hl) if p.audiogram else None
        rows.append(row)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(rows, fh, sort_keys=True, indent=1)


def load_profiles(path):
    with open(path, "r", encoding="utf-8") as fh:
        rows = json.load(fh)
    profiles = []
    for row in rows:
        audiogram = Audiogram(tuple(row["audiogram"])) if row["audiogram"] else None
        row["audiogram"] = audiogram
        profiles.append(ListenerProfile(**row))
    return profiles


def write_responses(path, rows):
    """CSV of (utt_id, slot, listener_id, correct), deterministic order."""
    ordered = sorted(rows, key=lambda r: (r[0], r[1], r[2]))
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["utt_id", "slot", "listener_id", "correct"])
        for utt_id, slot, listener_id, correct in ordered:
            writer.writerow([utt_id, slot, listener_id, int(correct)])


def read_responses(path):
    rows = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["utt_id", "slot", "listener_id", "correct"]:
            raise ValueError(f"{path}: unexpected responses header {header}")
        for utt_id, slot, listener_id, correct in reader:
            rows.append((utt_id, slot, listener_id, bool(int(correct))))
    return rows
