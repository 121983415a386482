"""Per-keyword measure extraction: model-based D/H/L/TAD/NLD + SNR-hat + STOI."""

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from ..corpus.audio import Waveform
from ..features import FeatureConfig, frames_for_span
from ..hmm.decode import DecodingGraph
from .confidence import (
    DEFAULT_DISPERSION_N,
    dispersion,
    entropy,
    loglik_ratio,
    normalized_likelihood_difference,
    score_all_models,
    time_alignment_difference,
)
from .snr_estimate import BlindSnrSplitter, SnrConfig
from .stoi import stoi

CSV_HEADER = [
    "utt_id", "slot", "true_word", "rec_word", "D", "H", "L", "TAD", "NLD",
    "SNRhat", "STOI", "alignment_source", "label",
]


@dataclass(frozen=True)
class MeasureConfig:
    dispersion_n: int = DEFAULT_DISPERSION_N
    stoi_context_ms: float = 400.0   # grow keyword spans to this length for STOI
    snr: SnrConfig = field(default_factory=SnrConfig)


@dataclass
class MeasureRecord:
    utt_id: str
    slot: str
    true_word: str
    rec_word: str
    D: float
    H: float
    L: float
    TAD: float
    NLD: float
    snr_hat_db: float
    stoi: float
    alignment_source: str      # reference | recognized
    label: bool | None = None

    def vector(self, names):
        lookup = {
            "D": self.D, "H": self.H, "L": self.L, "TAD": self.TAD,
            "NLD": self.NLD, "SNRhat": self.snr_hat_db, "STOI": self.stoi,
        }
        return np.asarray([lookup[n] for n in names], dtype=np.float64)


def _grow_span(start, end, total, target_len):
    if end - start >= target_len:
        return start, end
    extra = target_len - (end - start)
    start = max(0, start - extra // 2)
    end = min(total, start + target_len)
    start = max(0, end - target_len)
    return start, end


def extract_measures(record, noisy: Waveform, clean_aligned: Waveform, feats,
                     models, grammar, alignment_source="recognized",
                     config: MeasureConfig | None = None, feature_config=None,
                     free_graph: DecodingGraph | None = None,
                     score_sink: list | None = None,
                     splitter: BlindSnrSplitter | None = None) -> list:
    """All measures for the keyword slots (color, letter, digit) of one utterance.

    alignment_source picks how the observation sequence is segmented:
    'reference' uses the manifest alignment (TAD then measures the forced
    alignment against it); 'recognized' uses the free Viterbi segmentation.
    clean_aligned is the clean signal laid out on the noisy timeline (STOI
    reference). When score_sink is a list, the sorted per-slot log-likelihood
    lists are appended to it (inputs for dispersion-N sweeps).
    """
    if alignment_source not in ("reference", "recognized"):
        raise ValueError(f"bad alignment_source {alignment_source!r}")
    config = config or MeasureConfig()
    feature_config = feature_config or FeatureConfig()
    frames = feats.frames
    n_frames = frames.shape[0]
    sr = noisy.sample_rate
    shift = feature_config.shift(sr)
    frame_len = feature_config.frame_len(sr)

    if free_graph is None:
        free_graph = DecodingGraph(models, grammar)
    if splitter is None:
        splitter = BlindSnrSplitter(noisy, config.snr)
    decoded = free_graph.decode(frames)
    rec_spans = decoded.word_spans
    ref_spans = [
        frames_for_span(s, e, n_frames, feature_config, sr)
        for _, s, e in record.alignment
    ]
    if alignment_source == "reference":
        forced = DecodingGraph(models, grammar, fixed_words=record.words).decode(frames)
        tad_spans = [(s, e) for _, s, e in forced.word_spans]
        measure_spans = ref_spans
    else:
        tad_spans = [(s, e) for _, s, e in rec_spans]
        measure_spans = [(s, e) for _, s, e in rec_spans]

    out = []
    for slot_idx in grammar.keyword_slots:
        slot = grammar.slots[slot_idx]
        t0, t1 = measure_spans[slot_idx]
        t0, t1 = int(t0), int(max(t1, t0 + 1))
        slot_models = {w: models.words[w] for w in slot.words}
        scores = score_all_models(frames[t0:t1], slot_models, slot_index=slot_idx)
        true_word = record.words[slot_idx]
        if score_sink is not None:
            score_sink.append({
                "utt_id": record.id,
                "slot": slot.name,
                "true_word": true_word,
                "n_frames": scores.n_frames,
                "entries": [[w, float(v)] for w, v in scores.entries],
                "alignment_source": alignment_source,
            })
        d_val = dispersion(scores, config.dispersion_n)
        h_val = entropy(scores)
        l_val = loglik_ratio(scores) if len(scores.entries) > 1 else 0.0
        tad_val = time_alignment_difference(tad_spans[slot_idx], ref_spans[slot_idx])
        nld_val = normalized_likelihood_difference(scores, true_word)

        seg_start, seg_end = t0 * shift, min((t1 - 1) * shift + frame_len, len(noisy))
        snr_val = splitter.snr_db((seg_start, seg_end))

        # grow the span until enough speech-active frames survive silence
        # removal; fall back to the whole utterance for very short signals
        target_len = int(config.stoi_context_ms / 1000.0 * sr)
        while True:
            g0, g1 = _grow_span(seg_start, seg_end, len(noisy), target_len)
            try:
                stoi_val = stoi(
                    Waveform(clean_aligned.samples[g0:g1], sr),
                    Waveform(noisy.samples[g0:g1], sr),
                )
                break
            except ValueError:
                if g1 - g0 >= len(noisy):
                    raise
                target_len = int(target_len * 1.5)

        out.append(MeasureRecord(
            utt_id=record.id,
            slot=slot.name,
            true_word=true_word,
            rec_word=decoded.words[slot_idx],
            D=d_val, H=h_val, L=l_val, TAD=tad_val, NLD=nld_val,
            snr_hat_db=snr_val, stoi=stoi_val,
            alignment_source=alignment_source,
        ))
    return out


def write_measures(path, records):
    """CSV dump, deterministically ordered by (utterance, slot, source)."""
    ordered = sorted(records, key=lambda r: (r.utt_id, r.slot, r.alignment_source))
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for r in ordered:
            writer.writerow([
                r.utt_id, r.slot, r.true_word, r.rec_word,
                repr(float(r.D)), repr(float(r.H)), repr(float(r.L)),
                repr(float(r.TAD)), repr(float(r.NLD)),
                repr(float(r.snr_hat_db)), repr(float(r.stoi)), r.alignment_source,
                "" if r.label is None else int(r.label),
            ])


def read_measures(path):
    records = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != CSV_HEADER:
            raise ValueError(f"{path}: unexpected measures header {header}")
        for row in reader:
            records.append(MeasureRecord(
                utt_id=row[0], slot=row[1], true_word=row[2], rec_word=row[3],
                D=float(row[4]), H=float(row[5]), L=float(row[6]), TAD=float(row[7]),
                NLD=float(row[8]), snr_hat_db=float(row[9]), stoi=float(row[10]),
                alignment_source=row[11],
                label=None if row[12] == "" else bool(int(row[12])),
            ))
    return records


def write_score_lists(path, score_rows):
    """JSONL dump of sorted per-slot log-likelihood lists (for N-sweeps)."""
    with open(path, "w", encoding="utf-8") as fh:
        for row in score_rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def read_score_lists(path):
    with open(path, "r", encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]
