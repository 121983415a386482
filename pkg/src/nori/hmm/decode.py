"""Forward likelihoods and grammar-constrained Viterbi decoding."""

from dataclasses import dataclass

import numpy as np

from .model import SILENCE_LABEL, ConditionModels, EmissionStack, WordHmm


def forward_log_likelihood(hmm: WordHmm, frames) -> float:
    """log P(frames | hmm) over the left-to-right lattice, -inf if no path."""
    frames = np.atleast_2d(np.asarray(frames, dtype=np.float64))
    if frames.shape[0] == 0:
        raise ValueError("empty segment")
    logb = hmm.frame_log_likelihoods(frames)  # (T, S)
    t_len, s_len = logb.shape
    if t_len < s_len:
        return float("-inf")
    alpha = np.full(s_len, -np.inf)
    alpha[0] = logb[0, 0]
    for t in range(1, t_len):
        stay = alpha + hmm.log_self
        enter = np.concatenate(([-np.inf], alpha[:-1] + hmm.log_next[:-1]))
        alpha = np.logaddexp(stay, enter) + logb[t]
    return float(alpha[-1] + hmm.log_next[-1])


def viterbi_log_likelihood(hmm: WordHmm, frames) -> float:
    """Best-path log likelihood through one word model, -inf if no path."""
    frames = np.atleast_2d(np.asarray(frames, dtype=np.float64))
    if frames.shape[0] == 0:
        raise ValueError("empty segment")
    logb = hmm.frame_log_likelihoods(frames)
    t_len, s_len = logb.shape
    if t_len < s_len:
        return float("-inf")
    delta = np.full(s_len, -np.inf)
    delta[0] = logb[0, 0]
    for t in range(1, t_len):
        stay = delta + hmm.log_self
        enter = np.concatenate(([-np.inf], delta[:-1] + hmm.log_next[:-1]))
        delta = np.maximum(stay, enter) + logb[t]
    return float(delta[-1] + hmm.log_next[-1])


@dataclass
class Alignment:
    """Decoded segmentation: contiguous labeled spans covering [0, T)."""

    segments: list            # [(label, start_frame, end_frame)], includes silence spans
    log_likelihood: float

    @property
    def words(self):
        return [w for w, _, _ in self.segments if w != SILENCE_LABEL]

    @property
    def word_spans(self):
        return [(w, s, e) for w, s, e in self.segments if w != SILENCE_LABEL]

    def validate(self, n_frames):
        cursor = 0
        for _, start, end in self.segments:
            if start != cursor or end <= start:
                raise ValueError("alignment does not tile [0, T) contiguously")
            cursor = end
        if cursor != n_frames:
            raise ValueError(f"alignment covers [0, {cursor}) but T = {n_frames}")


class DecodingGraph:
    """Composite lattice: one parallel word bank per slot, silence in between.

    Gap silences are mandatory (the corpus always has inter-word gaps);
    lead/trail silences are skippable so both padded and unpadded signals
    decode. Ties break toward the lowest word index, then the lowest state
    index, via strict-improvement updates evaluated in priority order.
    Build once per (models, grammar, restriction) and reuse across
    utterances of the same condition.
    """

    def __init__(self, models: ConditionModels, grammar, fixed_words=None,
                 use_silence=None, edge_silence=True):
        if use_silence is None:
            use_silence = models.silence is not None
        if use_silence and models.silence is None:
            raise ValueError("silence requested but condition has no silence model")
        models.require(grammar.vocabulary())

        self.segments = []   # list of (units, optional) with units = [(label, hmm)]
        if use_silence and edge_silence:
            self.segments.append(([(SILENCE_LABEL, models.silence)], True))
        n_slots = len(grammar.slots)
        for slot_idx, slot in enumerate(grammar.slots):
            if fixed_words is not None:
                choices = [fixed_words[slot_idx]]
                if choices[0] not in slot.phoneme_counts:
                    raise ValueError(f"word {choices[0]!r} not in slot {slot.name!r}")
            else:
                choices = list(slot.words)
            self.segments.append(([(w, models.words[w]) for w in choices], False))
            if use_silence and slot_idx < n_slots - 1:
                self.segments.append(([(SILENCE_LABEL, models.silence)], False))
        if use_silence and edge_silence:
            self.segments.append(([(SILENCE_LABEL, models.silence)], True))

        labels, seg_of_state, self_lp, next_lp = [], [], [], []
        entry_state, exit_state, unit_seg = [], [], []
        means, variances, logw = [], [], []
        offset = 0
        for seg_idx, (units, _) in enumerate(self.segments):
            for label, hmm in units:
                s = hmm.n_states
                entry_state.append(offset)
                exit_state.append(offset + s - 1)
                unit_seg.append(seg_idx)
                labels.extend([label] * s)
                seg_of_state.extend([seg_idx] * s)
                self_lp.append(hmm.log_self)
                next_lp.append(hmm.log_next)
                for g in hmm.states:
                    means.append(g.means)
                    variances.append(g.variances)
                    logw.append(np.log(g.weights))
                offset += s

        self.n_states = offset
        self.labels = labels
        self.seg_of_state = np.asarray(seg_of_state)
        self.self_lp = np.concatenate(self_lp)
        self.next_lp = np.concatenate(next_lp)
        entry_state = np.asarray(entry_state)
        exit_state = np.asarray(exit_state)
        unit_seg = np.asarray(unit_seg)
        self.emissions = EmissionStack(np.stack(means), np.stack(variances), np.stack(logw))

        is_entry = np.zeros(self.n_states, dtype=bool)
        is_entry[entry_state] = True
        self.adv_to = np.nonzero(~is_entry)[0]
        self.adv_from = self.adv_to - 1
        self.n_segments = len(self.segments)
        self.seg_exit_states = [exit_state[unit_seg == s] for s in range(self.n_segments)]
        self.seg_entry_states = [entry_state[unit_seg == s] for s in range(self.n_segments)]

        optional = [opt for _, opt in self.segments]
        # segments reachable at t=0, and predecessor segments of each segment
        self.start_segments = [0]
        while optional[self.start_segments[-1]] and self.start_segments[-1] + 1 < self.n_segments:
            self.start_segments.append(self.start_segments[-1] + 1)
        self.pred_segments = [[] for _ in range(self.n_segments)]
        for seg in range(1, self.n_segments):
            i = seg - 1
            while True:
                self.pred_segments[seg].append(i)
                if not optional[i] or i == 0:
                    break
                i -= 1
        self.final_segments = [self.n_segments - 1]
        while optional[self.final_segments[-1]] and self.final_segments[-1] > 0:
            self.final_segments.append(self.final_segments[-1] - 1)
        self.min_frames = sum(
            min(hmm.n_states for _, hmm in units)
            for (units, opt) in self.segments if not opt
        )

    def frame_log_likelihoods(self, frames):
        """(T, N) emission log densities for every composite state."""
        return self.emissions.log_pdfs(np.asarray(frames, dtype=np.float64))

    def decode(self, frames) -> Alignment:
        frames = np.atleast_2d(np.asarray(frames, dtype=np.float64))
        t_len = frames.shape[0]
        if t_len < self.min_frames:
            raise ValueError(
                f"no admissible path: {t_len} frames < minimal path length {self.min_frames}"
            )
        logb = self.frame_log_likelihoods(frames)
        neg = -np.inf
        score = np.full(self.n_states, neg)
        for seg in self.start_segments:
            entries = self.seg_entry_states[seg]
            score[entries] = logb[0, entries]
        backptr = np.zeros((t_len, self.n_states), dtype=np.int32)
        backptr[0, :] = -1

        for t in range(1, t_len):
            # per-segment exit candidates from the previous frame
            seg_best = np.full(self.n_segments, neg)
            seg_src = np.zeros(self.n_segments, dtype=np.int64)
            for seg in range(self.n_segments):
                exits = self.seg_exit_states[seg]
                vals = score[exits] + self.next_lp[exits]
                k = int(np.argmax(vals))  # first max = lowest word index
                seg_best[seg] = vals[k]
                seg_src[seg] = exits[k]

            new = np.full(self.n_states, neg)
            src = np.full(self.n_states, -1, dtype=np.int64)
            # cross-segment entries first (lowest global index priority)
            for seg in range(1, self.n_segments):
                entries = self.seg_entry_states[seg]
                for pred in self.pred_segments[seg]:
                    if seg_best[pred] > new[entries[0]]:
                        new[entries] = seg_best[pred]
                        src[entries] = seg_src[pred]
            # then within-unit advance, then self-loop; strict > keeps priority
            adv_val = score[self.adv_from] + self.next_lp[self.adv_from]
            better = adv_val > new[self.adv_to]
            new[self.adv_to] = np.where(better, adv_val, new[self.adv_to])
            src[self.adv_to] = np.where(better, self.adv_from, src[self.adv_to])
            stay_val = score + self.self_lp
            better = stay_val > new
            src = np.where(better, np.arange(self.n_states), src)
            new = np.where(better, stay_val, new)

            score = new + logb[t]
            backptr[t] = src

        best_val, best_state = neg, -1
        for seg in self.final_segments:
            exits = self.seg_exit_states[seg]
            vals = score[exits] + self.next_lp[exits]
            k = int(np.argmax(vals))
            if vals[k] > best_val:
                best_val, best_state = float(vals[k]), int(exits[k])
        if not np.isfinite(best_val):
            raise ValueError("no admissible path through the grammar lattice")

        state = best_state
        path = np.empty(t_len, dtype=np.int64)
        for t in range(t_len - 1, -1, -1):
            path[t] = state
            state = int(backptr[t, state])
        segments = []
        start = 0
        for t in range(1, t_len + 1):
            boundary = t == t_len or (
                self.labels[path[t]] != self.labels[path[t - 1]]
                or self.seg_of_state[path[t]] != self.seg_of_state[path[t - 1]]
            )
            if boundary:
                segments.append((self.labels[path[start]], start, t))
                start = t
        return Alignment(segments=segments, log_likelihood=best_val)


def viterbi_decode(models: ConditionModels, grammar, frames,
                   fixed_words=None, use_silence=None, edge_silence=True) -> Alignment:
    """Best word per slot plus word boundaries; fixed_words forces an alignment."""
    graph = DecodingGraph(models, grammar, fixed_words=fixed_words,
                          use_silence=use_silence, edge_silence=edge_silence)
    alignment = graph.decode(frames)
    alignment.validate(np.atleast_2d(frames).shape[0])
    return alignment
