"""End-to-end pipeline: synthesis -> mixing -> ASR -> measures -> listeners
-> mapping -> evaluation -> report, with per-stage content-hash caching."""

import hashlib
import json
import shutil
from collections import defaultdict
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .corpus import (
    LtasConfig,
    NoiseProfile,
    SynthConfig,
    Waveform,
    compute_ltas,
    default_grammar,
    gen_noise,
    load_ltas,
    load_manifest,
    mix_at_snr,
    read_wav,
    save_ltas,
    save_manifest,
    synth_sentence,
    write_wav,
)
from .corpus.grammar import GrammarSpec, SlotSpec
from .corpus.manifest import UtteranceRecord
from .evaluation import (
    accuracy,
    fishers_exact,
    fit_psychometric,
    kendall_tau,
    macro_average,
    ncc,
    rmse,
)
from .features import FeatureConfig, dump_features, extract_features, load_features
from .hmm import (
    DecodingGraph,
    TrainConfig,
    kfold_split,
    load_condition_models,
    save_condition_models,
    train_condition_models,
)
from .listener import (
    DEFAULT_SRT_ANCHORS_DB,
    make_cohort,
    read_responses,
    save_profiles,
    simulate_response,
    write_responses,
)
from .mapping import CvPlan, MlpClassifier, MlpRegressor, run_cv, save_model
from .measures import (
    BlindSnrSplitter,
    MeasureConfig,
    SnrConfig,
    dispersion,
    extract_measures,
    read_measures,
    read_score_lists,
    write_measures,
    write_score_lists,
)
from .measures.confidence import SlotScoreList
from .report import build_report
from .validation import rng_for, stable_seed

KNOWN_MEASURES = ("D", "H", "L", "TAD", "NLD", "SNRhat", "STOI", "NORI")
NORI_COMPONENTS = ("D", "SNRhat")
STAGES = (
    "corpus-synth", "corpus-mix", "listeners-sim", "asr-train",
    "measures-extract", "map-train", "evaluate", "report",
)


class ConfigError(ValueError):
    def __init__(self, fld, message):
        self.field = fld
        super().__init__(f"config field '{fld}': {message}")


def _default_snr_grid():
    return tuple(float(v) for v in range(-14, 8, 2)) + (40.0,)


@dataclass
class RunConfig:
    out_dir: str = "nori-out"
    grammar_sizes: tuple = (4, 4, 4, 25, 10, 4)
    speakers: int = 4
    utterance_count: int = 125            # clean sentences; each mixed at every grid point
    noise_types: tuple = ("ssn",)
    snr_grid_db: tuple = field(default_factory=_default_snr_grid)
    clean_label_snr_db: float = 40.0
    lead_pad_ms: float = 200.0
    trail_pad_ms: float = 200.0
    asr_folds: int = 5
    mapping_folds: int = 7
    measures: tuple = KNOWN_MEASURES
    dispersion_n: int = 5
    alignment_sources: tuple = ("recognized", "reference")
    cohort_type: str = "NHL"
    cohort_size: int = 20
    srt_anchors: dict | None = None
    listener_slope: float = 0.8
    listener_lapse: float = 0.01
    srt_spread_db: float = 1.0
    pilot_n_values: tuple = (2, 3, 4, 5, 6, 7, 8)
    group_size: int = 10
    max_bw_iters: int = 20
    min_word_count: int = 3
    jitter_frac: float = 0.05
    jobs: int = 1
    seed: int = 2024

    def __post_init__(self):
        if len(self.grammar_sizes) != 6:
            raise ConfigError("grammar_sizes", "must list 6 slot sizes")
        unknown = [m for m in self.measures if m not in KNOWN_MEASURES]
        if unknown:
            raise ConfigError("measures", f"unknown measure name(s) {unknown}; "
                                          f"known: {list(KNOWN_MEASURES)}")
        if not self.snr_grid_db:
            raise ConfigError("snr_grid_db", "must not be empty")
        for src in self.alignment_sources:
            if src not in ("recognized", "reference"):
                raise ConfigError("alignment_sources", f"bad source {src!r}")
        if self.cohort_type not in ("NHL", "HIL"):
            raise ConfigError("cohort_type", "must be NHL or HIL")
        for nt in self.noise_types:
            if nt not in ("white", "ssn", "babble"):
                raise ConfigError("noise_types", f"unknown noise type {nt!r}")
        if self.utterance_count < 1:
            raise ConfigError("utterance_count", "must be positive")

    @classmethod
    def from_json(cls, path):
        with open(path, "r", encoding="utf-8") as fh:
            try:
                raw = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError("<file>", f"not valid JSON: {exc}") from exc
        known = {f for f in cls.__dataclass_fields__}
        unknown = [k for k in raw if k not in known]
        if unknown:
            raise ConfigError(unknown[0], "unknown config field")
        for key in ("grammar_sizes", "noise_types", "snr_grid_db", "measures",
                    "alignment_sources", "pilot_n_values"):
            if key in raw and isinstance(raw[key], list):
                raw[key] = tuple(raw[key])
        return cls(**raw)

    def grammar(self) -> GrammarSpec:
        full = default_grammar()
        slots = []
        for spec, size in zip(full.slots, self.grammar_sizes):
            if size < 1 or size > len(spec.words):
                raise ConfigError("grammar_sizes",
                                  f"slot {spec.name} supports 1..{len(spec.words)} words")
            words = spec.words[:size]
            slots.append(SlotSpec(spec.name, words,
                                  {w: spec.phoneme_counts[w] for w in words}))
        return GrammarSpec(slots=tuple(slots))

    def synth_config(self):
        return SynthConfig(jitter_frac=self.jitter_frac)

    def feature_config(self):
        return FeatureConfig()

    def train_config(self):
        return TrainConfig(max_bw_iters=self.max_bw_iters, min_count=self.min_word_count)

    def measure_config(self):
        return MeasureConfig(dispersion_n=self.dispersion_n, snr=SnrConfig())

    def snr_label(self, snr):
        return "clean" if float(snr) == self.clean_label_snr_db else f"{float(snr):g}"

    def conditions(self):
        return [(nt, float(snr)) for nt in self.noise_types for snr in self.snr_grid_db]


def _hash_payload(payload):
    return hashlib.sha256(
        json.dumps(payload, sort_keys=True, default=str).encode("utf-8")
    ).hexdigest()


class Stage:
    """One cached pipeline stage: skipped when its stamp matches.

    The fingerprint hashes the stage-relevant config subset plus the
    parents' committed stamps, so it is evaluated lazily (a rerun parent
    invalidates everything downstream).
    """

    def __init__(self, name, out_root, config_subset, parents):
        self.name = name
        self.dir = Path(out_root) / name.replace("-", "_")
        self.stamp_path = self.dir / ".stamp"
        self.config_subset = config_subset
        self.parents = parents

    def fingerprint(self):
        return _hash_payload({
            "stage": self.name,
            "config": self.config_subset,
            "parents": [p.current_stamp() for p in self.parents],
        })

    def current_stamp(self):
        if self.stamp_path.exists():
            return self.stamp_path.read_text(encoding="utf-8").strip()
        return ""

    def is_fresh(self):
        return self.current_stamp() == self.fingerprint()

    def reset(self):
        if self.dir.exists():
            shutil.rmtree(self.dir)
        self.dir.mkdir(parents=True, exist_ok=True)

    def commit(self):
        self.stamp_path.write_text(self.fingerprint(), encoding="utf-8")


def soft_accuracy(predictions, rates):
    """Mean accuracy (%) of binary predictions against per-row outcome rates.

    Equals plain accuracy over the expanded per-listener 0/1 rows: a True
    prediction is right for the `rate` fraction of them.
    """
    predictions = np.asarray(predictions, dtype=bool)
    rates = np.asarray(rates, dtype=np.float64)
    return 100.0 * float(np.mean(np.where(predictions, rates, 1.0 - rates)))


def balanced_word_choices(grammar, count, seed):
    """One word per slot per sentence, each slot's vocabulary used evenly."""
    columns = []
    for slot in grammar.slots:
        reps = [w for _ in range(count // len(slot.words) + 1) for w in slot.words][:count]
        rng_for("word-balance", seed, slot.name).shuffle(reps)
        columns.append(reps)
    return [tuple(col[i] for col in columns) for i in range(count)]


class Pipeline:
    def __init__(self, config: RunConfig):
        self.cfg = config
        self.out = Path(config.out_dir)
        self.grammar = config.grammar()
        self.stages = {}
        cfg = asdict(config)
        shared = {k: cfg[k] for k in ("grammar_sizes", "speakers", "utterance_count",
                                      "jitter_frac", "seed")}
        prev = []
        subsets = {
            "corpus-synth": shared,
            "corpus-mix": {k: cfg[k] for k in ("noise_types", "snr_grid_db",
                                               "clean_label_snr_db", "lead_pad_ms",
                                               "trail_pad_ms")},
            "asr-train": {k: cfg[k] for k in ("asr_folds", "max_bw_iters",
                                              "min_word_count", "cohort_type",
                                              "cohort_size")},
            "measures-extract": {k: cfg[k] for k in ("dispersion_n", "alignment_sources")},
            "listeners-sim": {k: cfg[k] for k in ("cohort_type", "cohort_size",
                                                  "srt_anchors", "listener_slope",
                                                  "listener_lapse", "srt_spread_db")},
            "map-train": {k: cfg[k] for k in ("mapping_folds", "measures")},
            "evaluate": {k: cfg[k] for k in ("group_size", "pilot_n_values", "measures")},
            "report": {},
        }
        for name in STAGES:
            stage = Stage(name, self.out, subsets[name], list(prev))
            self.stages[name] = stage
            prev.append(stage)

    # ---------- helpers ----------

    def _clean_manifest(self):
        return load_manifest(self.stages["corpus-synth"].dir / "clean.jsonl")

    def _noisy_manifest(self):
        return load_manifest(self.stages["corpus-mix"].dir / "noisy.jsonl")

    def _listeners(self):
        from .listener import load_profiles
        return load_profiles(self.stages["listeners-sim"].dir / "profiles.json")

    def _hil_listeners(self):
        """Listeners that get their own feature/model/mapping chain."""
        if self.cfg.cohort_type == "HIL":
            return self._listeners()
        return [None]

    def _model_tag(self, listener):
        return "pooled" if listener is None else listener.id

    def _splits(self):
        clean = self._clean_manifest()
        return kfold_split(clean, self.cfg.asr_folds, seed=stable_seed("split", self.cfg.seed))

    def _feature_path(self, utt_id, listener=None):
        tag = self._model_tag(listener)
        return self.stages["asr-train"].dir / "features" / tag / f"{utt_id}.feat"

    def _condition_key(self, noise, snr):
        return f"{noise}_{self.cfg.snr_label(snr)}"

    # ---------- stages ----------

    def run_corpus_synth(self, stage: Stage):
        cfg = self.cfg
        synth_cfg = cfg.synth_config()
        wav_dir = stage.dir / "wav"
        wav_dir.mkdir(parents=True, exist_ok=True)
        records = []
        waves = []
        for i, words in enumerate(balanced_word_choices(self.grammar, cfg.utterance_count,
                                                        cfg.seed)):
            utt_id = f"u{i:04d}"
            speaker = f"spk{i % cfg.speakers}"
            wav, alignment = synth_sentence(self.grammar, list(words), speaker,
                                            (cfg.seed, "corpus", i), synth_cfg)
            path = wav_dir / f"{utt_id}.wav"
            write_wav(path, wav)
            records.append(UtteranceRecord(
                id=utt_id, speaker=speaker, words=list(words), noise_type="none",
                snr_db="clean", audio=str(path.relative_to(stage.dir)),
                alignment=alignment, n_samples=len(wav),
            ))
            waves.append(wav)
        save_manifest(stage.dir / "clean.jsonl", records)
        ltas = compute_ltas(waves, LtasConfig())
        save_ltas(stage.dir / "ltas.json",
                  NoiseProfile(type="ssn", ltas=ltas, sample_rate=synth_cfg.sample_rate))

    def run_corpus_mix(self, stage: Stage):
        cfg = self.cfg
        synth_dir = self.stages["corpus-synth"].dir
        clean = self._clean_manifest()
        profiles = {}
        for nt in cfg.noise_types:
            if nt == "ssn":
                profiles[nt] = load_ltas(synth_dir / "ltas.json")
            else:
                profiles[nt] = NoiseProfile(type=nt, grammar=self.grammar,
                                            synth_config=cfg.synth_config())
        wav_dir = stage.dir / "wav"
        wav_dir.mkdir(parents=True, exist_ok=True)
        sr = cfg.synth_config().sample_rate
        lead = int(cfg.lead_pad_ms / 1000.0 * sr)
        trail = int(cfg.trail_pad_ms / 1000.0 * sr)
        records = []
        for rec in clean:
            wav = read_wav(synth_dir / rec.audio)
            for nt, snr in cfg.conditions():
                label = cfg.snr_label(snr)
                utt_id = f"{rec.id}-{nt}-{label}"
                noise = gen_noise(profiles[nt], lead + len(wav) + trail,
                                  stable_seed("mixnoise", cfg.seed, rec.id, nt, label))
                mix = mix_at_snr(wav, noise, snr, lead_pad=lead, trail_pad=trail)
                path = wav_dir / f"{utt_id}.wav"
                write_wav(path, mix.wave)
                alignment = [(w, s + lead, e + lead) for w, s, e in rec.alignment]
                records.append(UtteranceRecord(
                    id=utt_id, speaker=rec.speaker, words=list(rec.words),
                    noise_type=nt, snr_db="clean" if label == "clean" else snr,
                    audio=str(path.relative_to(stage.dir)), alignment=alignment,
                    scale=mix.scale, n_samples=len(mix.wave),
                ))
        save_manifest(stage.dir / "noisy.jsonl", records)

    def run_asr_train(self, stage: Stage):
        cfg = self.cfg
        noisy = self._noisy_manifest()
        mix_dir = self.stages["corpus-mix"].dir
        fc = cfg.feature_config()
        sr = cfg.synth_config().sample_rate
        listeners = self._hil_listeners()

        # features per (listener-tag, noisy utterance)
        for listener in listeners:
            feat_dir = self._feature_path("x", listener).parent
            feat_dir.mkdir(parents=True, exist_ok=True)
            audiogram = listener.audiogram if listener is not None else None
            for rec in noisy:
                wav = read_wav(mix_dir / rec.audio)
                seq = extract_features(wav, fc, audiogram=audiogram, utterance_id=rec.id)
                dump_features(self._feature_path(rec.id, listener), seq)

        by_condition = defaultdict(list)
        for rec in noisy:
            by_condition[rec.condition()].append(rec)
        splits = self._splits()
        model_dir = stage.dir / "models"
        for listener in listeners:
            tag = self._model_tag(listener)
            for fold, (train, _dev, _test) in enumerate(splits):
                train_ids = {r.id for r in train}
                for (nt, label), cond_records in sorted(by_condition.items()):
                    cond_train = [r for r in cond_records if r.id.split("-")[0] in train_ids]
                    feats = {r.id: load_features(self._feature_path(r.id, listener), r.id)
                             for r in cond_train}
                    models = train_condition_models(
                        cond_train, feats, self.grammar, fc, sr,
                        cfg.train_config(),
                        seed=stable_seed("train", cfg.seed, tag, fold, nt, label),
                        condition=f"{nt}_{label}", fold_id=fold,
                    )
                    out = model_dir / tag / f"fold{fold}"
                    out.mkdir(parents=True, exist_ok=True)
                    save_condition_models(out / f"{nt}_{label}.json", models)

    def run_measures_extract(self, stage: Stage):
        cfg = self.cfg
        noisy = self._noisy_manifest()
        clean = {r.id: r for r in self._clean_manifest()}
        mix_dir = self.stages["corpus-mix"].dir
        synth_dir = self.stages["corpus-synth"].dir
        model_dir = self.stages["asr-train"].dir / "models"
        fc = cfg.feature_config()
        mc = cfg.measure_config()
        splits = self._splits()
        fold_test_ids = [{r.id for r in test} for _, _, test in splits]

        by_condition = defaultdict(list)
        for rec in noisy:
            by_condition[rec.condition()].append(rec)

        signal_cache = {}
        for listener in self._hil_listeners():
            tag = self._model_tag(listener)
            all_records, score_rows = [], []
            for fold in range(cfg.asr_folds):
                for (nt, label), cond_records in sorted(by_condition.items()):
                    models = load_condition_models(
                        model_dir / tag / f"fold{fold}" / f"{nt}_{label}.json")
                    graph = DecodingGraph(models, self.grammar)
                    test_records = [r for r in cond_records
                                    if r.id.split("-")[0] in fold_test_ids[fold]]
                    for rec in sorted(test_records, key=lambda r: r.id):
                        noisy_wav = read_wav(mix_dir / rec.audio)
                        clean_rec = clean[rec.id.split("-")[0]]
                        clean_wav = read_wav(synth_dir / clean_rec.audio)
                        aligned = np.zeros(len(noisy_wav))
                        offset = rec.alignment[0][1] - clean_rec.alignment[0][1]
                        aligned[offset:offset + len(clean_wav)] = \
                            clean_wav.samples * rec.scale
                        feats = load_features(self._feature_path(rec.id, listener), rec.id)
                        splitter = BlindSnrSplitter(noisy_wav, mc.snr)
                        for source in cfg.alignment_sources:
                            recs = extract_measures(
                                rec, noisy_wav, Waveform(aligned, noisy_wav.sample_rate),
                                feats, models, self.grammar, alignment_source=source,
                                config=mc, feature_config=fc, free_graph=graph,
                                score_sink=score_rows, splitter=splitter,
                            )
                            if listener is not None:
                                for m in recs:
                                    key = (m.utt_id, m.slot, m.alignment_source)
                                    if key in signal_cache:
                                        m.snr_hat_db, m.stoi = signal_cache[key]
                                    else:
                                        signal_cache[key] = (m.snr_hat_db, m.stoi)
                            all_records.extend(recs)
            suffix = "" if listener is None else f"_{tag}"
            write_measures(stage.dir / f"measures{suffix}.csv", all_records)
            write_score_lists(stage.dir / f"scores{suffix}.jsonl", score_rows)

    def run_listeners_sim(self, stage: Stage):
        cfg = self.cfg
        cohort = make_cohort(
            cfg.cohort_size, cfg.cohort_type,
            seed=stable_seed("cohort", cfg.seed), grammar=self.grammar,
            srt_anchors=cfg.srt_anchors, srt_spread_db=cfg.srt_spread_db,
            slope=cfg.listener_slope, lapse=cfg.listener_lapse,
        )
        save_profiles(stage.dir / "profiles.json", cohort)
        rows = []
        for rec in self._noisy_manifest():
            snr = rec.snr_value(cfg.clean_label_snr_db)
            for slot_idx in self.grammar.keyword_slots:
                slot_name = self.grammar.slots[slot_idx].name
                for profile in cohort:
                    rows.append((
                        rec.id, slot_name, profile.id,
                        simulate_response(profile, snr, slot_name, rec.id, rec.noise_type),
                    ))
        write_responses(stage.dir / "responses.csv", rows)

    # mapping + evaluation share these joins
    def _measure_rows(self, listener=None):
        suffix = "" if listener is None else f"_{listener.id}"
        return read_measures(self.stages["measures-extract"].dir / f"measures{suffix}.csv")

    def _responses_by_key(self):
        by_key = defaultdict(dict)
        for utt_id, slot, listener_id, correct in read_responses(
                self.stages["listeners-sim"].dir / "responses.csv"):
            by_key[(utt_id, slot)][listener_id] = correct
        return by_key

    def measure_components(self, name):
        return list(NORI_COMPONENTS) if name == "NORI" else [name]

    def run_map_train(self, stage: Stage):
        cfg = self.cfg
        responses = self._responses_by_key()
        noisy = {r.id: r for r in self._noisy_manifest()}
        plan = CvPlan(k=cfg.mapping_folds, seed=stable_seed("mapping", cfg.seed))
        stage.dir.mkdir(parents=True, exist_ok=True)
        cv_rows = []
        for listener in self._hil_listeners():
            tag = self._model_tag(listener)
            rows = self._measure_rows(listener)
            allowed = None if listener is None else {listener.id}
            for source in cfg.alignment_sources:
                src_rows = [r for r in rows if r.alignment_source == source]
                for nt in cfg.noise_types:
                    nt_rows = [r for r in src_rows if noisy[r.utt_id].noise_type == nt]
                    for measure in cfg.measures:
                        comps = self.measure_components(measure)
                        # one row per keyword; listener outcomes enter as the
                        # empirical rate (exact for full-batch cross-entropy,
                        # since all listener copies share the input vector)
                        x, y, meta, groups = [], [], [], []
                        for r in nt_rows:
                            outcomes = [
                                (lid, correct)
                                for lid, correct in sorted(responses[(r.utt_id, r.slot)].items())
                                if allowed is None or lid in allowed
                            ]
                            x.append(r.vector(comps))
                            y.append(float(np.mean([c for _, c in outcomes])))
                            meta.append((r.utt_id, r.slot, outcomes))
                            groups.append(r.utt_id.split("-")[0])
                        x = np.asarray(x)
                        y = np.asarray(y)
                        seed = stable_seed("map", cfg.seed, tag, source, nt, measure)
                        result = run_cv(
                            x, y, plan,
                            make_model=lambda fold, s=seed: MlpClassifier(
                                seed=stable_seed(s, fold)),
                            metric_fn=lambda model, xt, yt: {
                                "accuracy": soft_accuracy(model.predict(xt), yt),
                            },
                            groups=groups,
                        )
                        condition_id = f"{tag}|{source}|{nt}"
                        for fold, metrics in enumerate(result.fold_metrics):
                            cv_rows.append([fold, measure, condition_id,
                                            "accuracy", metrics["accuracy"]])
                        mean, ci = result.mean_ci("accuracy")
                        cv_rows.append(["mean", measure, condition_id, "accuracy", mean])
                        cv_rows.append(["ci95", measure, condition_id, "accuracy", ci])
                        model_dir = stage.dir / "models"
                        model_dir.mkdir(exist_ok=True)
                        for fold, model in enumerate(result.models):
                            save_model(
                                model_dir / f"{tag}_{source}_{nt}_{measure}_fold{fold}.json",
                                model)
                        pred_path = stage.dir / f"pred_{tag}_{source}_{nt}_{measure}.csv"
                        with open(pred_path, "w", encoding="utf-8") as fh:
                            fh.write("utt_id,slot,listener_id,prob,label\n")
                            for (utt, slot, outcomes), prob in zip(
                                    meta, result.oof_prediction):
                                for lid, correct in outcomes:
                                    fh.write(f"{utt},{slot},{lid},{prob:.6f},"
                                             f"{int(correct)}\n")
        with open(stage.dir / "cv_report.csv", "w", encoding="utf-8") as fh:
            fh.write("fold,measure,condition,metric,value\n")
            for row in cv_rows:
                fh.write(",".join(str(v) for v in row) + "\n")

    def _load_predictions(self, tag, source, nt, measure):
        path = self.stages["map-train"].dir / f"pred_{tag}_{source}_{nt}_{measure}.csv"
        rows = []
        with open(path, "r", encoding="utf-8") as fh:
            next(fh)
            for line in fh:
                utt, slot, lid, prob, label = line.strip().split(",")
                rows.append((utt, slot, lid, float(prob), bool(int(label))))
        return rows

    def run_evaluate(self, stage: Stage):
        cfg = self.cfg
        noisy = {r.id: r for r in self._noisy_manifest()}
        responses = self._responses_by_key()
        evaluation = {
            "config": asdict(cfg),
            "microscopic": {},
            "significance": {},
            "pilot_dispersion_n": {},
            "macroscopic": {},
            "srt": {},
            "hil": {},
        }

        plan = CvPlan(k=cfg.mapping_folds, seed=stable_seed("macro-cv", cfg.seed))
        for listener in self._hil_listeners():
            tag = self._model_tag(listener)
            micro = {}
            for source in cfg.alignment_sources:
                for nt in cfg.noise_types:
                    for measure in cfg.measures:
                        rows = self._load_predictions(tag, source, nt, measure)
                        preds = [p >= 0.5 for _, _, _, p, _ in rows]
                        labels = [l for _, _, _, _, l in rows]
                        by_snr = defaultdict(lambda: ([], []))
                        for (utt, _, _, p, l) in rows:
                            snr = noisy[utt].snr_value(cfg.clean_label_snr_db)
                            by_snr[snr][0].append(p >= 0.5)
                            by_snr[snr][1].append(l)
                        micro[f"{source}|{nt}|{measure}"] = {
                            "accuracy": accuracy(preds, labels),
                            "by_snr": {
                                f"{snr:g}": accuracy(p, l)
                                for snr, (p, l) in sorted(by_snr.items())
                            },
                        }
            evaluation["microscopic"][tag] = micro

            # significance: each measure against the intrusive STOI baseline
            sig = {}
            for source in cfg.alignment_sources:
                for nt in cfg.noise_types:
                    if "STOI" not in cfg.measures:
                        continue
                    base_rows = self._load_predictions(tag, source, nt, "STOI")
                    base_ok = sum((p >= 0.5) == l for _, _, _, p, l in base_rows)
                    for measure in cfg.measures:
                        if measure == "STOI":
                            continue
                        rows = self._load_predictions(tag, source, nt, measure)
                        ok = sum((p >= 0.5) == l for _, _, _, p, l in rows)
                        p_val = fishers_exact(ok, len(rows) - ok,
                                              base_ok, len(base_rows) - base_ok)
                        sig[f"{source}|{nt}|{measure}_vs_STOI"] = p_val
            evaluation["significance"][tag] = sig

        # pilot: dispersion accuracy for different N (pooled cohort, recognized;
        # HIL runs use the first listener's score lists)
        score_suffix = "" if cfg.cohort_type == "NHL" else f"_{self._listeners()[0].id}"
        score_rows = read_score_lists(
            self.stages["measures-extract"].dir / f"scores{score_suffix}.jsonl")
        pilot = {}
        for nt in cfg.noise_types:
            accs = {}
            for n in cfg.pilot_n_values:
                x, y, groups = [], [], []
                for row in score_rows:
                    if row["alignment_source"] != "recognized":
                        continue
                    if noisy[row["utt_id"]].noise_type != nt:
                        continue
                    scores = SlotScoreList(slot=0, entries=[tuple(e) for e in row["entries"]],
                                           n_frames=row["n_frames"])
                    outcomes = [c for _, c in
                                sorted(responses[(row["utt_id"], row["slot"])].items())]
                    x.append([dispersion(scores, n)])
                    y.append(float(np.mean(outcomes)))
                    groups.append(row["utt_id"].split("-")[0])
                result = run_cv(
                    np.asarray(x), np.asarray(y),
                    CvPlan(k=cfg.mapping_folds, seed=stable_seed("pilot", cfg.seed, nt, n)),
                    make_model=lambda fold, s=stable_seed("pilotm", cfg.seed, nt, n):
                        MlpClassifier(seed=stable_seed(s, fold)),
                    metric_fn=lambda model, xt, yt: {
                        "accuracy": soft_accuracy(model.predict(xt), yt)},
                    groups=groups,
                )
                accs[str(n)] = result.mean_ci("accuracy")[0]
            pilot[nt] = accs
        evaluation["pilot_dispersion_n"] = pilot

        # macroscopic: group averages, regressor mapping, NCC/tau/RMSE + SRTs
        rows = [r for r in self._measure_rows(None if cfg.cohort_type == "NHL"
                                              else self._listeners()[0])
                if r.alignment_source == "recognized"]
        labels_by_key = {k: [v for _, v in sorted(d.items())]
                         for k, d in responses.items()}
        single_measures = sorted({
            c for m in cfg.measures for c in self.measure_components(m)
        })
        for nt in cfg.noise_types:
            macro_points = []
            human_curve = []
            asr_curve = []
            for snr in cfg.snr_grid_db:
                label = cfg.snr_label(snr)
                cell = [r for r in rows
                        if noisy[r.utt_id].condition() == (nt, label)]
                if not cell:
                    continue
                pts = macro_average(cell, labels_by_key, group_size=cfg.group_size,
                                    seed=stable_seed("macro", cfg.seed),
                                    condition=nt, snr_db=float(snr),
                                    measure_names=single_measures)
                macro_points.extend(pts)
                human_curve.append((float(snr), float(np.mean([p.wcs for p in pts]))))
                asr_wcs = np.mean([r.rec_word == r.true_word for r in cell])
                asr_curve.append((float(snr), float(asr_wcs)))

            macro = {"points": len(macro_points), "human_curve": human_curve,
                     "asr_curve": asr_curve, "metrics": {}, "pred_curves": {}}
            wcs = np.asarray([p.wcs for p in macro_points])
            snrs = np.asarray([p.snr_db for p in macro_points])
            groups = [p.group_id for p in macro_points]
            for measure in cfg.measures:
                comps = self.measure_components(measure)
                x = np.asarray([[p.measures[c] for c in comps] for p in macro_points])
                seed = stable_seed("macro-map", cfg.seed, nt, measure)
                result = run_cv(
                    x, wcs, plan,
                    make_model=lambda fold, s=seed: MlpRegressor(seed=stable_seed(s, fold)),
                    metric_fn=lambda model, xt, yt: {
                        "ncc": ncc(model.predict(xt), yt),
                        "tau": kendall_tau(model.predict(xt), yt),
                        "rmse": rmse(model.predict(xt), yt),
                    },
                    groups=groups,
                )
                macro["metrics"][measure] = {
                    name: result.mean_ci(name) for name in ("ncc", "tau", "rmse")
                }
                pred_by_snr = defaultdict(list)
                for snr, pred in zip(snrs, result.oof_prediction):
                    pred_by_snr[float(snr)].append(pred)
                macro["pred_curves"][measure] = sorted(
                    (s, float(np.mean(v))) for s, v in pred_by_snr.items()
                )
            evaluation["macroscopic"][nt] = macro

            # SRTs: human + per-measure predicted + raw ASR
            srt_entry = {}
            anchors = dict((cfg.srt_anchors or {}))
            anchor = anchors.get(nt, DEFAULT_SRT_ANCHORS_DB.get(nt))
            srt_entry["anchor_db"] = anchor
            try:
                srt_entry["human_db"] = fit_psychometric(human_curve).srt_db
            except ValueError as exc:
                srt_entry["human_db"] = None
                srt_entry["human_error"] = str(exc)
            for name, curve in [("ASR", asr_curve)] + [
                    (m, evaluation["macroscopic"][nt]["pred_curves"][m])
                    for m in cfg.measures]:
                try:
                    srt_entry[name] = fit_psychometric(curve).srt_db
                except ValueError:
                    srt_entry[name] = None
            evaluation["srt"][nt] = srt_entry

        # per-listener SRTs for HIL cohorts (threshold ordering check)
        if cfg.cohort_type == "HIL":
            per_listener = {}
            for profile in self._listeners():
                curves = defaultdict(lambda: ([], []))
                for (utt, slot), by_lid in responses.items():
                    if profile.id not in by_lid:
                        continue
                    rec = noisy[utt]
                    if rec.noise_type != cfg.noise_types[0]:
                        continue
                    snr = rec.snr_value(cfg.clean_label_snr_db)
                    curves[snr][0].append(by_lid[profile.id])
                pts = [(snr, float(np.mean(ok))) for snr, (ok, _) in sorted(curves.items())]
                try:
                    srt = fit_psychometric(pts).srt_db
                except ValueError:
                    srt = None
                per_listener[profile.id] = {
                    "srt_db": srt,
                    "mean_2_4_khz_db_hl": profile.audiogram.mean_2_4_khz(),
                }
            evaluation["hil"]["per_listener"] = per_listener

        with open(stage.dir / "evaluation.json", "w", encoding="utf-8") as fh:
            json.dump(evaluation, fh, sort_keys=True, indent=1)

    def run_report(self, stage: Stage):
        cfg = self.cfg
        with open(self.stages["evaluate"].dir / "evaluation.json", encoding="utf-8") as fh:
            evaluation = json.load(fh)

        tables = {}
        line_plots = {}
        bar_plots = {}

        acc_rows = []
        curves = []
        for tag, micro in sorted(evaluation["microscopic"].items()):
            for key, entry in sorted(micro.items()):
                source, nt, measure = key.split("|")
                acc_rows.append([tag, source, nt, measure, entry["accuracy"]])
                if tag == "pooled" and source == "recognized":
                    xs = [float(s) for s in entry["by_snr"]]
                    ys = [entry["by_snr"][s] for s in entry["by_snr"]]
                    order = np.argsort(xs)
                    curves.append((measure, [xs[i] for i in order], [ys[i] for i in order]))
        tables["accuracy"] = (
            ["model_tag", "alignment_source", "noise", "measure", "accuracy_pct"], acc_rows)
        if curves:
            line_plots["accuracy_vs_snr"] = (
                curves, "SNR (dB)", "prediction accuracy (%)",
                "Microscopic prediction accuracy vs SNR")

        pilot_rows = [[nt, n, acc] for nt, accs in sorted(
            evaluation["pilot_dispersion_n"].items()) for n, acc in sorted(
            accs.items(), key=lambda kv: int(kv[0]))]
        if pilot_rows:
            tables["pilot_dispersion_n"] = (["noise", "n_best", "accuracy_pct"], pilot_rows)
            for nt, accs in sorted(evaluation["pilot_dispersion_n"].items()):
                ns = sorted(int(k) for k in accs)
                line_plots[f"dispersion_n_{nt}"] = (
                    [("dispersion", [float(n) for n in ns], [accs[str(n)] for n in ns])],
                    "number of best hypotheses", "prediction accuracy (%)",
                    f"Dispersion accuracy vs N ({nt})")

        macro_rows = []
        for nt, macro in sorted(evaluation["macroscopic"].items()):
            for measure, metrics in sorted(macro["metrics"].items()):
                macro_rows.append([
                    nt, measure,
                    metrics["ncc"][0], metrics["ncc"][1],
                    metrics["tau"][0], metrics["tau"][1],
                    metrics["rmse"][0], metrics["rmse"][1],
                ])
            if macro["human_curve"]:
                series = [("human", [p[0] for p in macro["human_curve"]],
                           [p[1] for p in macro["human_curve"]])]
                for measure, curve in sorted(macro["pred_curves"].items()):
                    series.append((measure, [p[0] for p in curve], [p[1] for p in curve]))
                line_plots[f"psychometric_{nt}"] = (
                    series, "SNR (dB)", "word correct score",
                    f"Word correct score vs SNR ({nt})")
        tables["macroscopic"] = (
            ["noise", "measure", "ncc", "ncc_ci95", "tau", "tau_ci95", "rmse", "rmse_ci95"],
            macro_rows)
        for nt, macro in sorted(evaluation["macroscopic"].items()):
            labels = sorted(macro["metrics"])
            for metric in ("ncc", "tau", "rmse"):
                bar_plots[f"{metric}_{nt}"] = (
                    labels, [macro["metrics"][m][metric][0] for m in labels],
                    metric.upper(), f"{metric.upper()} per measure ({nt})")

        srt_rows = []
        for nt, entry in sorted(evaluation["srt"].items()):
            names = [k for k in entry if k not in ("anchor_db", "human_error")]
            for name in sorted(names):
                srt_rows.append([nt, name, entry[name]])
            labels = [n for n in sorted(names) if entry[n] is not None]
            bar_plots[f"srt_{nt}"] = (
                labels, [entry[n] for n in labels], "SRT (dB)",
                f"Speech reception thresholds ({nt})")
        tables["srt"] = (["noise", "source", "srt_db"], srt_rows)

        sig_rows = [[tag, key, p] for tag, sig in sorted(evaluation["significance"].items())
                    for key, p in sorted(sig.items())]
        tables["significance"] = (["model_tag", "comparison", "fisher_p"], sig_rows)

        if evaluation.get("hil", {}).get("per_listener"):
            rows = [[lid, v["srt_db"], v["mean_2_4_khz_db_hl"]]
                    for lid, v in sorted(evaluation["hil"]["per_listener"].items())]
            tables["hil_srt"] = (["listener", "srt_db", "mean_2_4_khz_db_hl"], rows)

        summary = {
            "config": evaluation["config"],
            "microscopic": evaluation["microscopic"],
            "significance": evaluation["significance"],
            "pilot_dispersion_n": evaluation["pilot_dispersion_n"],
            "macroscopic_metrics": {
                nt: macro["metrics"] for nt, macro in evaluation["macroscopic"].items()
            },
            "srt": evaluation["srt"],
            "hil": evaluation["hil"],
        }
        build_report(stage.dir, summary, tables, line_plots, bar_plots)

    # ---------- driver ----------

    def run_stage(self, name, force=False):
        stage = self.stages[name]
        if stage.is_fresh() and not force:
            return False
        stage.reset()
        getattr(self, "run_" + name.replace("-", "_"))(stage)
        stage.commit()
        return True

    def run_all(self, force=False):
        ran = {}
        for name in STAGES:
            ran[name] = self.run_stage(name, force=force)
        return ran


def run_pipeline(config: RunConfig, force=False):
    pipeline = Pipeline(config)
    ran = pipeline.run_all(force=force)
    return pipeline, ran
