import warnings

import pytest

from nori.corpus import (
    NoiseProfile,
    SynthConfig,
    compute_ltas,
    default_grammar,
    gen_noise,
    mix_at_snr,
    synth_sentence,
    toy_grammar,
)
from nori.corpus.manifest import UtteranceRecord
from nori.features import FeatureConfig, extract_features
from nori.validation import rng_for

warnings.filterwarnings("ignore", message="dispersion: n=")


def balanced_words(grammar, count, seed=0):
    columns = []
    for slot in grammar.slots:
        reps = [w for _ in range(count // len(slot.words) + 1) for w in slot.words][:count]
        rng_for("test-balance", seed, slot.name).shuffle(reps)
        columns.append(reps)
    return [tuple(col[i] for col in columns) for i in range(count)]


@pytest.fixture(scope="session")
def grammar():
    return default_grammar()


@pytest.fixture(scope="session")
def small_grammar():
    return toy_grammar()


@pytest.fixture(scope="session")
def ssn_profile(grammar):
    waves = [
        synth_sentence(grammar, list(words), f"spk{i % 3}", ("ltas", i))[0]
        for i, words in enumerate(balanced_words(grammar, 8))
    ]
    return NoiseProfile(type="ssn", ltas=compute_ltas(waves))


@pytest.fixture(scope="session")
def toy_corpus(small_grammar):
    """Clean toy corpus: records, features and waveforms keyed by id."""
    fc = FeatureConfig()
    records, feats, waves = [], {}, {}
    for i, words in enumerate(balanced_words(small_grammar, 40, seed=1)):
        speaker = f"spk{i % 3}"
        wav, alignment = synth_sentence(small_grammar, list(words), speaker, ("toy", i))
        rec = UtteranceRecord(
            id=f"u{i:03d}", speaker=speaker, words=list(words), noise_type="none",
            snr_db="clean", audio="", alignment=alignment, n_samples=len(wav),
        )
        records.append(rec)
        feats[rec.id] = extract_features(wav, fc, utterance_id=rec.id)
        waves[rec.id] = wav
    return {"records": records, "features": feats, "waves": waves, "config": fc}


@pytest.fixture(scope="session")
def toy_models(toy_corpus, small_grammar):
    from nori.hmm import TrainConfig, train_condition_models

    return train_condition_models(
        toy_corpus["records"], toy_corpus["features"], small_grammar,
        toy_corpus["config"], 25000,
        TrainConfig(max_bw_iters=8, min_count=1), seed=0, condition="clean",
    )


def make_mixture(grammar, profile, words, speaker, snr_db, seed, pad=5000):
    wav, alignment = synth_sentence(grammar, list(words), speaker, seed)
    noise = gen_noise(profile, len(wav) + 2 * pad, seed)
    mix = mix_at_snr(wav, noise, snr_db, lead_pad=pad, trail_pad=pad)
    return wav, mix, [(w, s + pad, e + pad) for w, s, e in alignment]
