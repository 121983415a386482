import itertools
import json

import numpy as np
import pytest

from nori.corpus.grammar import GrammarSpec, SlotSpec
from nori.hmm import (
    ConditionModels,
    DiagGmm,
    DecodingGraph,
    TrainConfig,
    WordHmm,
    forward_log_likelihood,
    gmm_log_pdf,
    kfold_split,
    load_condition_models,
    save_condition_models,
    train_condition_models,
    viterbi_decode,
)
from nori.hmm.decode import viterbi_log_likelihood

rng = np.random.default_rng(1234)


def random_hmm(n_states, dim=2, n_mix=1, word="w"):
    states = []
    for _ in range(n_states):
        weights = rng.dirichlet(np.ones(n_mix))
        means = rng.normal(size=(n_mix, dim))
        variances = rng.uniform(0.5, 2.0, size=(n_mix, dim))
        states.append(DiagGmm(weights=weights, means=means, variances=variances))
    stay = rng.uniform(0.2, 0.8, n_states)
    return WordHmm(word=word, states=states,
                   log_self=np.log(stay), log_next=np.log(1 - stay))


def enumerate_paths(hmm, frames):
    """All monotone state paths with their log probabilities (incl. exit)."""
    t_len, s_len = len(frames), hmm.n_states
    logb = hmm.frame_log_likelihoods(frames)
    out = []
    for steps in itertools.product([0, 1], repeat=t_len - 1):
        if sum(steps) != s_len - 1:
            continue
        s, lp = 0, logb[0, 0]
        for t, step in enumerate(steps, start=1):
            lp += hmm.log_self[s] if step == 0 else hmm.log_next[s]
            s += step
            lp += logb[t, s]
        out.append(lp + hmm.log_next[-1])
    return out


class TestGmm:
    def test_single_component_at_mean(self):
        g = DiagGmm(weights=[1.0], means=[[0.5, -1.0]], variances=[[2.0, 0.5]])
        expected = -0.5 * (np.log(2 * np.pi * 2.0) + np.log(2 * np.pi * 0.5))
        assert gmm_log_pdf(g, [0.5, -1.0]) == pytest.approx(expected, abs=1e-12)

    def test_identical_components_collapse(self):
        g1 = DiagGmm(weights=[1.0], means=[[0.1, 0.2]], variances=[[1.0, 1.5]])
        g2 = DiagGmm(weights=[0.5, 0.5], means=[[0.1, 0.2]] * 2, variances=[[1.0, 1.5]] * 2)
        x = [0.7, -0.3]
        assert gmm_log_pdf(g1, x) == pytest.approx(gmm_log_pdf(g2, x), abs=1e-12)

    def test_matches_probability_domain_sum(self):
        for _ in range(20):
            g = DiagGmm(
                weights=rng.dirichlet(np.ones(2)),
                means=rng.normal(size=(2, 3)),
                variances=rng.uniform(0.5, 2.0, (2, 3)),
            )
            x = rng.normal(size=3)
            naive = 0.0
            for w, mu, var in zip(g.weights, g.means, g.variances):
                naive += w * np.prod(np.exp(-0.5 * (x - mu) ** 2 / var)
                                     / np.sqrt(2 * np.pi * var))
            assert gmm_log_pdf(g, x) == pytest.approx(np.log(naive), rel=1e-10)

    def test_dimension_mismatch(self):
        g = DiagGmm(weights=[1.0], means=[[0.0, 0.0]], variances=[[1.0, 1.0]])
        with pytest.raises(ValueError):
            gmm_log_pdf(g, [1.0, 2.0, 3.0])


class TestForward:
    def test_single_state_single_frame(self):
        hmm = random_hmm(1)
        x = rng.normal(size=(1, 2))
        expected = hmm.frame_log_likelihoods(x)[0, 0] + hmm.log_next[0]
        assert forward_log_likelihood(hmm, x) == pytest.approx(expected, abs=1e-12)

    def test_matches_path_enumeration(self):
        for _ in range(30):
            s = int(rng.integers(1, 5))
            t = int(rng.integers(s, 9))
            hmm = random_hmm(s)
            x = rng.normal(size=(t, 2))
            paths = enumerate_paths(hmm, x)
            expected = paths[0]
            for p in paths[1:]:
                expected = np.logaddexp(expected, p)
            assert forward_log_likelihood(hmm, x) == pytest.approx(expected, rel=1e-12)

    def test_impossible_when_too_short(self):
        hmm = random_hmm(4)
        assert forward_log_likelihood(hmm, rng.normal(size=(3, 2))) == -np.inf

    def test_empty_segment(self):
        with pytest.raises(ValueError):
            forward_log_likelihood(random_hmm(2), np.empty((0, 2)))

    def test_forward_at_least_viterbi(self):
        for _ in range(20):
            s = int(rng.integers(1, 5))
            t = int(rng.integers(s, 9))
            hmm = random_hmm(s)
            x = rng.normal(size=(t, 2))
            assert forward_log_likelihood(hmm, x) >= viterbi_log_likelihood(hmm, x) - 1e-12

    def test_viterbi_matches_path_max(self):
        for _ in range(30):
            s = int(rng.integers(1, 5))
            t = int(rng.integers(s, 9))
            hmm = random_hmm(s)
            x = rng.normal(size=(t, 2))
            assert viterbi_log_likelihood(hmm, x) == pytest.approx(
                max(enumerate_paths(hmm, x)), rel=1e-12)


def tiny_grammar_and_models(slot_sizes, state_counts):
    """A 6-slot grammar with hand-set tiny HMMs for joint enumeration."""
    slots, words = [], {}
    names = ["s1", "s2", "s3", "s4", "s5", "s6"]
    idx = 0
    for name, size in zip(names, slot_sizes):
        slot_words = []
        for k in range(size):
            wid = f"{name}w{k}"
            slot_words.append(wid)
            words[wid] = random_hmm(state_counts[idx % len(state_counts)], word=wid)
            idx += 1
        slots.append(SlotSpec(name, tuple(slot_words), {w: 1 for w in slot_words}))
    grammar = GrammarSpec(slots=tuple(slots))
    models = ConditionModels(condition="test", words=words, silence=None)
    return grammar, models


def enumerate_joint(grammar, models, frames):
    """Exhaustive max over word sequences x state paths through the chain."""
    t_len = frames.shape[0]
    best = (-np.inf, None)
    for combo in itertools.product(*[s.words for s in grammar.slots]):
        hmms = [models.words[w] for w in combo]
        sizes = [h.n_states for h in hmms]
        total_states = sum(sizes)
        if t_len < total_states:
            continue
        # enumerate frame counts per word, then per-word paths
        for cuts in itertools.combinations(range(1, t_len), len(hmms) - 1):
            bounds = (0,) + cuts + (t_len,)
            lens = [bounds[i + 1] - bounds[i] for i in range(len(hmms))]
            if any(l < s for l, s in zip(lens, sizes)):
                continue
            lp = 0.0
            for hmm, lo, hi in zip(hmms, bounds[:-1], bounds[1:]):
                seg = frames[lo:hi]
                lp += viterbi_log_likelihood(hmm, seg)
            if lp > best[0]:
                best = (lp, combo)
    return best


class TestGrammarViterbi:
    def test_single_hypothesis_recovers_sequence(self, small_grammar, toy_models,
                                                 toy_corpus):
        rec = toy_corpus["records"][0]
        frames = toy_corpus["features"][rec.id].frames
        alignment = viterbi_decode(toy_models, small_grammar, frames,
                                   fixed_words=rec.words)
        assert alignment.words == rec.words

    def test_matches_joint_enumeration(self):
        grammar, models = tiny_grammar_and_models(
            slot_sizes=(2, 1, 1, 2, 1, 1), state_counts=(1, 2, 1, 1, 1, 2, 1, 1))
        frames = rng.normal(size=(12, 2))
        alignment = viterbi_decode(models, grammar, frames, use_silence=False)
        best_lp, best_words = enumerate_joint(grammar, models, frames)
        assert alignment.log_likelihood == pytest.approx(best_lp, rel=1e-12)
        assert tuple(alignment.words) == best_words

    def test_alignment_tiles_frames(self, small_grammar, toy_models, toy_corpus):
        rec = toy_corpus["records"][3]
        frames = toy_corpus["features"][rec.id].frames
        alignment = viterbi_decode(toy_models, small_grammar, frames)
        alignment.validate(frames.shape[0])
        spans = alignment.word_spans
        assert len(spans) == 6

    def test_no_admissible_path(self, small_grammar, toy_models):
        with pytest.raises(ValueError):
            viterbi_decode(toy_models, small_grammar, rng.normal(size=(4, 39)))


class TestKfold:
    def test_partition_properties(self, toy_corpus):
        records = toy_corpus["records"]
        folds = kfold_split(records, 5, seed=3)
        tests = [tuple(r.id for r in test) for _, _, test in folds]
        all_test = [i for t in tests for i in t]
        assert len(all_test) == len(records)
        assert len(set(all_test)) == len(records)
        for train, dev, test in folds:
            ids = [r.id for r in train + dev + test]
            assert len(set(ids)) == len(records)

    def test_sizes_100_records(self, toy_corpus, small_grammar):
        from nori.corpus.manifest import UtteranceRecord
        from conftest import balanced_words
        records = []
        for i, words in enumerate(balanced_words(small_grammar, 100, seed=4)):
            records.append(UtteranceRecord(
                id=f"r{i:03d}", speaker="s", words=list(words), noise_type="none",
                snr_db="clean", audio="", alignment=[], n_samples=None))
        folds = kfold_split(records, 5, seed=0)
        for _, _, test in folds:
            assert len(test) == 20

    def test_deterministic(self, toy_corpus):
        a = kfold_split(toy_corpus["records"], 5, seed=9)
        b = kfold_split(toy_corpus["records"], 5, seed=9)
        assert [[r.id for r in t] for _, _, t in a] == [[r.id for r in t] for _, _, t in b]

    def test_every_word_in_every_training_split(self, toy_corpus, small_grammar):
        folds = kfold_split(toy_corpus["records"], 5, seed=3)
        vocab = set(small_grammar.vocabulary())
        for train, _, _ in folds:
            seen = {w for r in train for w in r.words}
            assert vocab <= seen

    def test_k_too_small(self, toy_corpus):
        with pytest.raises(ValueError):
            kfold_split(toy_corpus["records"], 1, seed=0)


class TestTraining:
    def test_deterministic(self, toy_corpus, small_grammar):
        kwargs = dict(grammar=small_grammar, feature_config=toy_corpus["config"],
                      sample_rate=25000, config=TrainConfig(max_bw_iters=2, min_count=1),
                      seed=5, condition="c")
        subset = toy_corpus["records"]
        m1 = train_condition_models(subset, toy_corpus["features"], **kwargs)
        m2 = train_condition_models(subset, toy_corpus["features"], **kwargs)
        assert m1.meta["ll_history"] == m2.meta["ll_history"]
        for w in m1.words:
            for s1, s2 in zip(m1.words[w].states, m2.words[w].states):
                assert np.array_equal(s1.means, s2.means)
                assert np.array_equal(s1.variances, s2.variances)

    def test_log_likelihood_non_decreasing(self, toy_models):
        history = toy_models.meta["ll_history"]
        assert len(history) >= 2
        for prev, cur in zip(history, history[1:]):
            assert cur >= prev - 1e-6 * abs(prev)

    def test_variance_floor(self, toy_models, toy_corpus):
        stacked = np.vstack([f.frames for f in toy_corpus["features"].values()])
        floor = 1e-3 * stacked.var(axis=0)
        for hmm in list(toy_models.words.values()) + [toy_models.silence]:
            for g in hmm.states:
                assert np.all(g.variances >= floor * (1 - 1e-9))

    def test_insufficient_data_rejected(self, toy_corpus, small_grammar):
        with pytest.raises(ValueError, match="insufficient"):
            train_condition_models(
                toy_corpus["records"][:3], toy_corpus["features"], small_grammar,
                toy_corpus["config"], 25000, TrainConfig(min_count=3), seed=0)

    def test_trained_transitions_are_stochastic(self, toy_models):
        for hmm in toy_models.words.values():
            rows = np.exp(hmm.log_self) + np.exp(hmm.log_next)
            assert np.allclose(rows, 1.0, atol=1e-9)


class TestSerialization:
    def test_round_trip(self, toy_models, tmp_path):
        path = tmp_path / "models.json"
        save_condition_models(path, toy_models)
        loaded = load_condition_models(path)
        assert set(loaded.words) == set(toy_models.words)
        for w in toy_models.words:
            a, b = toy_models.words[w], loaded.words[w]
            assert np.allclose(a.log_self, b.log_self)
            for s1, s2 in zip(a.states, b.states):
                assert np.allclose(s1.means, s2.means)
        assert loaded.silence is not None

    def test_unknown_version_rejected(self, toy_models, tmp_path):
        path = tmp_path / "models.json"
        save_condition_models(path, toy_models)
        payload = json.loads(path.read_text())
        payload["schema_version"] = 99
        path.write_text(json.dumps(payload))
        with pytest.raises(ValueError, match="version"):
            load_condition_models(path)


@pytest.mark.slow
class TestCleanCorpusRecognition:
    def test_held_out_keyword_accuracy(self, grammar):
        """200 clean sentences, single 60/20/20 split: accuracy >= 95%."""
        from nori.corpus.manifest import UtteranceRecord
        from nori.corpus import synth_sentence
        from nori.features import extract_features, FeatureConfig
        from nori.measures.confidence import score_all_models
        from nori.features import frames_for_span
        from conftest import balanced_words

        fc = FeatureConfig()
        records, feats = [], {}
        for i, words in enumerate(balanced_words(grammar, 200, seed=2)):
            speaker = f"spk{i % 4}"
            wav, alignment = synth_sentence(grammar, list(words), speaker, ("acc", i))
            rec = UtteranceRecord(id=f"u{i:03d}", speaker=speaker, words=list(words),
                                  noise_type="none", snr_db="clean", audio="",
                                  alignment=alignment, n_samples=len(wav))
            records.append(rec)
            feats[rec.id] = extract_features(wav, fc, utterance_id=rec.id)
        train, dev, test = kfold_split(records, 5, seed=11)[0]
        models = train_condition_models(train, feats, grammar, fc, 25000,
                                        TrainConfig(max_bw_iters=10), seed=0,
                                        condition="clean")
        graph = DecodingGraph(models, grammar)
        n_ok = n_kw = 0
        rank_ok = rank_tot = 0
        for rec in test:
            frames = feats[rec.id].frames
            alignment = graph.decode(frames)
            for slot_idx in grammar.keyword_slots:
                n_kw += 1
                n_ok += alignment.words[slot_idx] == rec.words[slot_idx]
                word, start, end = rec.alignment[slot_idx]
                t0, t1 = frames_for_span(start, end, len(frames), fc, 25000)
                scores = score_all_models(
                    frames[t0:t1],
                    {w: models.words[w] for w in grammar.slots[slot_idx].words})
                rank_tot += 1
                rank_ok += scores.words[0] == word
        assert n_ok / n_kw >= 0.95
        # likelihood ordering sanity: true model on top for >= 90% of segments
        assert rank_ok / rank_tot >= 0.90
