import json

import numpy as np
import pytest
from scipy.stats import kurtosis

from nori.corpus import (
    LtasConfig,
    NoiseProfile,
    SynthConfig,
    Waveform,
    compute_ltas,
    gen_noise,
    load_ltas,
    load_manifest,
    mix_at_snr,
    save_ltas,
    save_manifest,
    synth_sentence,
    synth_word_waveform,
)
from nori.corpus.manifest import UtteranceRecord


class TestWordSynthesis:
    def test_duration_formula_zero_jitter(self, grammar):
        cfg = SynthConfig(jitter_frac=0.0)
        wav = synth_word_waveform(grammar, "bin", "spk1", 7, cfg)
        assert len(wav) == 3 * int(0.09 * 25000)  # 3 phonemes x 90 ms

    def test_bit_identical_repeat(self, grammar):
        a = synth_word_waveform(grammar, "green", "spk2", 11)
        b = synth_word_waveform(grammar, "green", "spk2", 11)
        assert np.array_equal(a.samples, b.samples)

    def test_jitter_bounded(self, grammar):
        cfg = SynthConfig(jitter_frac=0.05)
        base = 3 * int(0.09 * 25000)
        for seed in range(5):
            wav = synth_word_waveform(grammar, "bin", "spk1", seed, cfg)
            assert abs(len(wav) - base) <= 0.06 * base

    def test_unknown_word_rejected(self, grammar):
        with pytest.raises(KeyError):
            synth_word_waveform(grammar, "nosuchword", "spk1", 0)

    def test_different_words_have_distinct_spectra(self, grammar):
        """Spectral centroid trajectories of two different words differ by
        more than the jitter band (the centroid spread the duration jitter
        alone produces for one word across seeds)."""
        def centroid_track(wav):
            frames = wav.samples[: (len(wav) // 512) * 512].reshape(-1, 512)
            spec = np.abs(np.fft.rfft(frames * np.hanning(512), axis=1))
            freqs = np.fft.rfftfreq(512, 1 / wav.sample_rate)
            return (spec * freqs).sum(axis=1) / np.maximum(spec.sum(axis=1), 1e-12)

        def mean_diff(track_a, track_b):
            n = min(len(track_a), len(track_b))
            return float(np.mean(np.abs(track_a[:n] - track_b[:n])))

        cfg = SynthConfig(jitter_frac=0.05)
        jitter_band = max(
            mean_diff(
                centroid_track(synth_word_waveform(grammar, "bin", "spk1", s1, cfg)),
                centroid_track(synth_word_waveform(grammar, "bin", "spk1", s2, cfg)),
            )
            for s1, s2 in [(1, 2), (2, 3), (3, 4)]
        )
        cross = mean_diff(
            centroid_track(synth_word_waveform(grammar, "bin", "spk1", 3, cfg)),
            centroid_track(synth_word_waveform(grammar, "set", "spk1", 3, cfg)),
        )
        assert cross > jitter_band


class TestSentenceSynthesis:
    def test_total_duration(self, grammar):
        cfg = SynthConfig(jitter_frac=0.0)
        words = ["bin", "blue", "at", "h", "one", "again"]
        # 3+3+2+3+3+4 phonemes = 18 x 90 ms + 5 x 40 ms gaps
        wav, _ = synth_sentence(grammar, words, "spk1", 0, cfg)
        assert len(wav) == 18 * 2250 + 5 * 1000

    def test_alignment_construction(self, grammar):
        cfg = SynthConfig(jitter_frac=0.0)
        words = ["bin", "blue", "at", "h", "one", "again"]
        _, alignment = synth_sentence(grammar, words, "spk1", 0, cfg)
        gap = 1000
        for (_, _, end), (_, start, _) in zip(alignment[:-1], alignment[1:]):
            assert start == end + gap

    def test_resynthesis_identical(self, grammar):
        words = ["lay", "red", "by", "c", "two", "now"]
        w1, a1 = synth_sentence(grammar, words, "spk0", 42)
        w2, a2 = synth_sentence(grammar, words, "spk0", 42)
        assert a1 == a2
        assert np.array_equal(w1.samples, w2.samples)

    def test_slot_word_mismatch(self, grammar):
        with pytest.raises(ValueError):
            synth_sentence(grammar, ["blue", "bin", "at", "a", "one", "now"], "spk0", 0)


class TestNoise:
    def test_white_gaussian_kurtosis(self):
        wav = gen_noise(NoiseProfile(type="white"), 25000, 1)
        assert 2.7 <= kurtosis(wav.samples, fisher=False) <= 3.3

    def test_requested_length(self, ssn_profile):
        assert len(gen_noise(ssn_profile, 12345, 0)) == 12345

    def test_determinism(self, ssn_profile):
        a = gen_noise(ssn_profile, 20000, 5)
        b = gen_noise(ssn_profile, 20000, 5)
        assert np.array_equal(a.samples, b.samples)

    def test_ssn_matches_target_spectrum(self, ssn_profile):
        noise = gen_noise(ssn_profile, 250000, 2)
        measured = compute_ltas([noise])
        lsd = np.mean(np.abs(20 * np.log10(measured / ssn_profile.ltas)))
        assert lsd < 2.0

    def test_ssn_spectrum_converges_with_length(self, ssn_profile):
        short = compute_ltas([gen_noise(ssn_profile, 25000, 3)])
        long = compute_ltas([gen_noise(ssn_profile, 250000, 3)])
        lsd_short = np.mean(np.abs(20 * np.log10(short / ssn_profile.ltas)))
        lsd_long = np.mean(np.abs(20 * np.log10(long / ssn_profile.ltas)))
        assert lsd_long < lsd_short

    def test_babble_is_sum_of_sentences(self, small_grammar):
        prof = NoiseProfile(type="babble", grammar=small_grammar, babble_talkers=4)
        wav = gen_noise(prof, 30000, 1)
        assert len(wav) == 30000
        assert wav.rms() == pytest.approx(0.1, rel=1e-6)

    def test_invalid_profile(self):
        with pytest.raises(ValueError):
            NoiseProfile(type="pink")
        with pytest.raises(ValueError):
            NoiseProfile(type="ssn")  # missing LTAS
        with pytest.raises(ValueError):
            NoiseProfile(type="ssn", ltas=np.zeros(513))

    def test_bad_length(self, ssn_profile):
        with pytest.raises(ValueError):
            gen_noise(ssn_profile, 0, 1)


class TestLtas:
    def test_pure_tone_peak_bin(self):
        t = np.arange(50000) / 25000.0
        tone = Waveform(0.5 * np.sin(2 * np.pi * 1000.0 * t))
        ltas = compute_ltas([tone], LtasConfig())
        peak_hz = np.argmax(ltas) * 25000 / 1024
        assert abs(peak_hz - 1000.0) < 25000 / 1024

    def test_duplicated_corpus_identical(self, grammar):
        wav, _ = synth_sentence(grammar, ["bin", "blue", "at", "a", "one", "now"], "s", 0)
        assert np.allclose(compute_ltas([wav]), compute_ltas([wav, wav]), rtol=1e-12)

    def test_two_file_mean(self, grammar):
        w1, _ = synth_sentence(grammar, ["bin", "blue", "at", "a", "one", "now"], "s", 0)
        w2, _ = synth_sentence(grammar, ["lay", "red", "by", "b", "two", "soon"], "s", 1)
        cfg = LtasConfig()
        # oracle: frame-count-weighted mean of the per-file spectra
        def frames(w):
            return (len(w) - cfg.fft_size) // cfg.hop + 1
        n1, n2 = frames(w1), frames(w2)
        expected = (compute_ltas([w1], cfg) * n1 + compute_ltas([w2], cfg) * n2) / (n1 + n2)
        assert np.allclose(compute_ltas([w1, w2], cfg), expected, rtol=1e-12)

    def test_empty_corpus(self):
        with pytest.raises(ValueError):
            compute_ltas([])

    def test_json_round_trip(self, ssn_profile, tmp_path):
        path = tmp_path / "ltas.json"
        save_ltas(path, ssn_profile)
        loaded = load_ltas(path)
        assert loaded.fft_size == ssn_profile.fft_size
        assert np.allclose(loaded.ltas, ssn_profile.ltas)
        payload = json.loads(path.read_text())
        assert set(payload) == {"fft_size", "sample_rate", "magnitudes"}


class TestMixing:
    def test_unit_gain_at_equal_power(self):
        rng = np.random.default_rng(0)
        speech = Waveform(rng.normal(0, 0.1, 10000))
        noise = Waveform(rng.normal(0, 0.1, 10000))
        g_expected = np.sqrt(np.mean(speech.samples**2) / np.mean(noise.samples**2))
        mix = mix_at_snr(speech, noise, 0.0)
        assert mix.noise_gain == pytest.approx(g_expected, rel=1e-12)

    def test_six_db_closed_form(self):
        rng = np.random.default_rng(1)
        x = rng.normal(0, 0.1, 8000)
        speech = Waveform(x)
        noise = Waveform(np.roll(x, 17))  # identical power
        mix = mix_at_snr(speech, noise, 6.0)
        assert mix.noise_gain == pytest.approx(10 ** (-6 / 20), rel=1e-12)

    def test_post_mix_snr_exact(self, grammar, ssn_profile):
        rng = np.random.default_rng(2)
        for snr in (-14.0, -3.5, 0.0, 7.25):
            speech = Waveform(rng.normal(0, 0.05, 20000))
            noise = gen_noise(ssn_profile, 30000, int(snr * 10))
            mix = mix_at_snr(speech, noise, snr, lead_pad=4000, trail_pad=6000)
            scaled = noise.samples[4000:24000] * mix.noise_gain
            measured = 10 * np.log10(np.sum(speech.samples**2) / np.sum(scaled**2))
            assert abs(measured - snr) < 0.01

    def test_peak_limiting_recorded(self):
        speech = Waveform(np.full(5000, 0.9))
        noise = Waveform(np.full(5000, 0.9))
        mix = mix_at_snr(speech, noise, 0.0)
        assert mix.scale < 1.0
        assert np.max(np.abs(mix.wave.samples)) <= 1.0 + 1e-12

    def test_zero_power_errors(self):
        silent = Waveform(np.zeros(1000))
        loud = Waveform(np.ones(1000) * 0.1)
        with pytest.raises(ValueError):
            mix_at_snr(silent, loud, 0.0)
        with pytest.raises(ValueError):
            mix_at_snr(loud, silent, 0.0)

    def test_noise_too_short(self):
        with pytest.raises(ValueError):
            mix_at_snr(Waveform(np.ones(1000) * 0.1), Waveform(np.ones(500) * 0.1), 0.0)


class TestManifest:
    def _record(self, i=0):
        return UtteranceRecord(
            id=f"u{i:03d}", speaker="spk0",
            words=["bin", "blue", "at", "a", "one", "now"],
            noise_type="ssn", snr_db=-6.0, audio=f"wav/u{i:03d}.wav",
            alignment=[("bin", 0, 100), ("blue", 150, 300), ("at", 350, 400),
                       ("a", 450, 520), ("one", 600, 700), ("now", 750, 900)],
            scale=0.97, n_samples=1000,
        )

    def test_round_trip(self, tmp_path):
        records = [self._record(i) for i in range(100)]
        path = tmp_path / "m.jsonl"
        save_manifest(path, records)
        assert load_manifest(path) == records

    def test_overlapping_alignment_rejected(self, tmp_path):
        rec = self._record()
        rows = rec.__dict__.copy()
        rows["alignment"] = [["bin", 0, 200], ["blue", 150, 300], ["at", 350, 400],
                             ["a", 450, 520], ["one", 600, 700], ["now", 750, 900]]
        path = tmp_path / "m.jsonl"
        path.write_text(json.dumps(rows) + "\n")
        with pytest.raises(ValueError, match=":1:"):
            load_manifest(path)

    def test_empty_file(self, tmp_path):
        path = tmp_path / "m.jsonl"
        path.write_text("")
        assert load_manifest(path) == []

    def test_malformed_line_number(self, tmp_path):
        path = tmp_path / "m.jsonl"
        good = json.dumps({**self._record().__dict__,
                           "alignment": [list(s) for s in self._record().alignment]})
        path.write_text(good + "\n" + "{broken\n")
        with pytest.raises(ValueError, match=":2:"):
            load_manifest(path)

    def test_clean_label(self):
        rec = self._record()
        rec.snr_db = "clean"
        assert rec.snr_value() == 40.0
        assert rec.condition() == ("ssn", "clean")
