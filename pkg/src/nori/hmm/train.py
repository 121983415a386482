"""EM training of the per-condition word HMM set.

Recipe: flat start (uniform segmentation against global statistics), a few
hard-alignment single-Gaussian passes, mixture split to 2 components, hard
GMM passes, then embedded Baum-Welch over whole utterances with the silence
model inserted at gaps. Deterministic given (records, seed).
"""

from collections import Counter
from dataclasses import dataclass

import numpy as np

from ..features import frames_for_span
from ..validation import rng_for
from .model import SILENCE_LABEL, ConditionModels, DiagGmm, WordHmm


@dataclass(frozen=True)
class TrainConfig:
    n_mix: int = 2
    single_gauss_iters: int = 5
    gmm_seg_iters: int = 3
    max_bw_iters: int = 20
    rel_tol: float = 1e-4
    min_count: int = 3
    var_floor_frac: float = 1e-3
    self_loop_init: float = 0.6
    trans_floor: float = 1e-3
    split_offset: float = 0.2     # mixture split: mean +- offset * sigma
    states_per_phoneme: int = 3
    use_silence: bool = True
    silence_states: int = 3


def kfold_split(records, k, seed):
    """k folds of (train, dev, test) records: test groups partition the input.

    Fold i uses group i as test, group (i+1) % k as dev and the remaining
    k-2 groups as train (60/20/20 for k=5). Records are dealt per keyword
    word, round-robin over groups, so occurrences of every word spread
    across folds; a bounded re-deal guarantees every word that appears at
    least k-2 times lands in every training split.
    """
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    records = sorted(records, key=lambda r: r.id)
    if len(records) < k:
        raise ValueError(f"not enough records ({len(records)}) for {k} folds")

    vocab = sorted({w for rec in records for w in rec.words})
    counts = Counter(w for rec in records for w in rec.words)

    for attempt in range(100):
        rng = rng_for("kfold", seed, attempt)
        # deal per rarest-word bucket so scarce words spread over groups
        rarest = [min(rec.words, key=lambda w: (counts[w], w)) for rec in records]
        order = sorted(range(len(records)), key=lambda i: (rarest[i], records[i].id))
        groups = [[] for _ in range(k)]
        offset = 0
        current = None
        for i in order:
            if rarest[i] != current:
                current = rarest[i]
                offset = int(rng.integers(k))
            groups[offset % k].append(i)
            offset += 1
        folds = []
        ok = True
        for fold in range(k):
            test = groups[fold]
            dev = groups[(fold + 1) % k]
            train = [i for g in range(k) if g not in (fold, (fold + 1) % k) for i in groups[g]]
            train_words = Counter(w for i in train for w in records[i].words)
            if any(train_words[w] == 0 for w in vocab if counts[w] >= k - 2):
                ok = False
                break
            folds.append((
                [records[i] for i in sorted(train)],
                [records[i] for i in sorted(dev)],
                [records[i] for i in sorted(test)],
            ))
        if ok:
            return folds
    raise ValueError("could not build stratified folds covering every word")


def _word_spans(record, n_frames, feature_config, sample_rate):
    return [
        (word, *frames_for_span(start, end, n_frames, feature_config, sample_rate))
        for word, start, end in record.alignment
    ]


def utterance_units(record, n_frames, feature_config, sample_rate, use_silence):
    """Chain of (label, start_frame, end_frame) units tiling [0, n_frames)."""
    spans = _word_spans(record, n_frames, feature_config, sample_rate)
    units = []
    if use_silence:
        cursor = 0
        for word, t0, t1 in spans:
            t0, t1 = max(t0, cursor), max(t1, cursor)
            if t0 > cursor:
                units.append((SILENCE_LABEL, cursor, t0))
            units.append((word, t0, t1))
            cursor = t1
        if cursor < n_frames:
            units.append((SILENCE_LABEL, cursor, n_frames))
    else:
        # no silence model: stretch word spans to tile the utterance
        bounds = [0]
        for (_, _, prev_end), (_, next_start, _) in zip(spans[:-1], spans[1:]):
            bounds.append((prev_end + next_start) // 2)
        bounds.append(n_frames)
        units = [(w, bounds[i], bounds[i + 1]) for i, (w, _, _) in enumerate(spans)]
    return [(label, t0, t1) for label, t0, t1 in units if t1 > t0]


def _uniform_state_path(n_frames, n_states):
    return np.floor(np.arange(n_frames) * n_states / n_frames).astype(np.int64)


def _viterbi_state_path(hmm: WordHmm, frames):
    """Forced left-to-right state path covering the segment, or None."""
    t_len = frames.shape[0]
    s_len = hmm.n_states
    if t_len < s_len:
        return None
    logb = hmm.frame_log_likelihoods(frames)
    score = np.full(s_len, -np.inf)
    score[0] = logb[0, 0]
    came_from = np.zeros((t_len, s_len), dtype=np.int8)  # 1 = advanced
    for t in range(1, t_len):
        stay = score + hmm.log_self
        adv = np.concatenate(([-np.inf], score[:-1] + hmm.log_next[:-1]))
        came_from[t] = adv > stay
        score = np.maximum(stay, adv) + logb[t]
    if not np.isfinite(score[-1]):
        return None
    path = np.empty(t_len, dtype=np.int64)
    s = s_len - 1
    for t in range(t_len - 1, -1, -1):
        path[t] = s
        s -= came_from[t, s]
    return path


class _StateTable:
    """Flat accumulator index space over all (unit label, local state) pairs."""

    def __init__(self, state_counts):
        self.offsets = {}
        total = 0
        for label in sorted(state_counts):
            self.offsets[label] = total
            total += state_counts[label]
        self.total = total
        self.state_counts = dict(state_counts)

    def index(self, label, local):
        return self.offsets[label] + local

    def slice(self, label):
        start = self.offsets[label]
        return slice(start, start + self.state_counts[label])


def _make_hmms(table, means, variances, weights, stay, advance, config):
    """Assemble WordHmm objects from flat per-state parameter arrays."""
    hmms = {}
    for label, count in table.state_counts.items():
        sl = table.slice(label)
        w, m, v = weights[sl], means[sl], variances[sl]
        states = [DiagGmm(weights=w[i], means=m[i], variances=v[i]) for i in range(count)]
        stay_p = np.maximum(stay[sl], config.trans_floor)
        adv_p = np.maximum(advance[sl], config.trans_floor)
        norm = stay_p + adv_p
        hmms[label] = WordHmm(
            word=label,
            states=states,
            log_self=np.log(stay_p / norm),
            log_next=np.log(adv_p / norm),
        )
    return hmms


def _chain_arrays(units, hmms):
    """Concatenate unit HMMs into one left-to-right chain."""
    labels, local, self_lp, next_lp, unit_of = [], [], [], [], []
    entry, exit_ = [], []
    offset = 0
    for u, (label, _, _) in enumerate(units):
        hmm = hmms[label]
        s = hmm.n_states
        entry.append(offset)
        exit_.append(offset + s - 1)
        labels.extend([label] * s)
        local.extend(range(s))
        unit_of.extend([u] * s)
        self_lp.append(hmm.log_self)
        next_lp.append(hmm.log_next)
        offset += s
    return {
        "labels": labels,
        "local": np.asarray(local),
        "unit_of": np.asarray(unit_of),
        "self_lp": np.concatenate(self_lp),
        "next_lp": np.concatenate(next_lp),
        "entry": np.asarray(entry),
        "exit": np.asarray(exit_),
        "n": offset,
    }


def _chain_logb(chain, hmms, frames, with_components=False):
    # per-label emission matrices, reused where the silence model repeats
    per_label = {}
    for label in set(chain["labels"]):
        per_label[label] = hmms[label].emission_stack().log_pdfs(
            frames, with_components=with_components
        )
    n = chain["n"]
    t_len = frames.shape[0]
    logb = np.empty((t_len, n))
    comps = np.empty((t_len, n, hmms[chain["labels"][0]].states[0].means.shape[0])) \
        if with_components else None
    for s, (label, local) in enumerate(zip(chain["labels"], chain["local"])):
        if with_components:
            lb, cp = per_label[label]
            logb[:, s] = lb[:, local]
            comps[:, s, :] = cp[:, local, :]
        else:
            logb[:, s] = per_label[label][:, local]
    return logb, comps


def _forward_backward(chain, logb):
    """Log-domain alpha/beta over the chain; returns (alpha, beta, loglik)."""
    t_len, n = logb.shape
    self_lp, next_lp = chain["self_lp"], chain["next_lp"]
    entry, exit_ = chain["entry"], chain["exit"]
    alpha = np.full((t_len, n), -np.inf)
    alpha[0, entry[0]] = logb[0, entry[0]]
    adv_to = np.nonzero(~np.isin(np.arange(n), entry))[0]
    for t in range(1, t_len):
        prev = alpha[t - 1]
        stay = prev + self_lp
        cur = stay.copy()
        cur[adv_to] = np.logaddexp(cur[adv_to], prev[adv_to - 1] + next_lp[adv_to - 1])
        # cross-unit arcs: unit u exit -> unit u+1 entry
        cross = prev[exit_[:-1]] + next_lp[exit_[:-1]]
        cur[entry[1:]] = np.logaddexp(cur[entry[1:]], cross)
        alpha[t] = cur + logb[t]
    loglik = alpha[-1, exit_[-1]] + next_lp[exit_[-1]]
    if not np.isfinite(loglik):
        return alpha, None, float("-inf")

    beta = np.full((t_len, n), -np.inf)
    beta[-1, exit_[-1]] = next_lp[exit_[-1]]
    for t in range(t_len - 2, -1, -1):
        nxt = beta[t + 1] + logb[t + 1]
        cur = nxt + self_lp
        cur[adv_to - 1] = np.logaddexp(cur[adv_to - 1], nxt[adv_to] + next_lp[adv_to - 1])
        cross = nxt[entry[1:]] + next_lp[exit_[:-1]]
        cur[exit_[:-1]] = np.logaddexp(cur[exit_[:-1]], cross)
        beta[t] = cur
    return alpha, beta, float(loglik)


class _Accumulators:
    def __init__(self, table, n_mix, dim):
        self.occ = np.zeros((table.total, n_mix))
        self.first = np.zeros((table.total, n_mix, dim))
        self.second = np.zeros((table.total, n_mix, dim))
        self.stay = np.zeros(table.total)
        self.advance = np.zeros(table.total)

    def add_gmm(self, idx, gamma_comp, frames):
        np.add.at(self.occ, idx, gamma_comp.sum(axis=0))
        np.add.at(self.first, idx, np.einsum("tnm,td->nmd", gamma_comp, frames))
        np.add.at(self.second, idx, np.einsum("tnm,td->nmd", gamma_comp, frames**2))


def _update_params(acc, table, means, variances, weights, stay, advance, var_floor,
                   min_occ=1e-2):
    state_occ = acc.occ.sum(axis=1)
    for s in range(table.total):
        if state_occ[s] < min_occ:
            continue
        w = acc.occ[s] / state_occ[s]
        w = np.maximum(w, 1e-3)
        weights[s] = w / w.sum()
        for m in range(acc.occ.shape[1]):
            if acc.occ[s, m] < min_occ:
                continue
            mu = acc.first[s, m] / acc.occ[s, m]
            var = acc.second[s, m] / acc.occ[s, m] - mu**2
            means[s, m] = mu
            variances[s, m] = np.maximum(var, var_floor)
        total = acc.stay[s] + acc.advance[s]
        if total > min_occ:
            stay[s] = acc.stay[s] / total
            advance[s] = acc.advance[s] / total


def train_condition_models(records, features, grammar, feature_config, sample_rate,
                           config: TrainConfig | None = None, seed=0,
                           condition="", fold_id=None) -> ConditionModels:
    """Train all word models (and the silence model) for one condition.

    records carry reference alignments; features maps utterance id to its
    FeatureSequence. Raises if any vocabulary word occurs fewer than
    config.min_count times.
    """
    config = config or TrainConfig()
    vocab = grammar.vocabulary()
    counts = Counter(w for rec in records for w in rec.words)
    short = sorted(w for w in vocab if counts[w] < config.min_count)
    if short:
        raise ValueError(
            f"insufficient training data (need >= {config.min_count} occurrences): {short}"
        )

    state_counts = {w: config.states_per_phoneme * grammar.phoneme_count(w) for w in vocab}
    if config.use_silence:
        state_counts[SILENCE_LABEL] = config.silence_states
    table = _StateTable(state_counts)
    dim = next(iter(features.values())).frames.shape[1]

    # per-utterance frame matrices, unit chains and chain->table index maps
    utts = []
    all_frames = []
    for rec in sorted(records, key=lambda r: r.id):
        seq = features[rec.id]
        units = utterance_units(rec, len(seq), feature_config, sample_rate,
                                config.use_silence)
        utts.append((rec, seq.frames, units))
        all_frames.append(seq.frames)
    stacked = np.vstack(all_frames)
    global_mean = stacked.mean(axis=0)
    global_var = stacked.var(axis=0)
    var_floor = config.var_floor_frac * np.maximum(global_var, 1e-12)

    # flat start: every state carries the global Gaussian
    means = np.tile(global_mean, (table.total, 1, 1))        # (N, 1, D)
    variances = np.tile(np.maximum(global_var, var_floor), (table.total, 1, 1))
    weights = np.ones((table.total, 1))
    stay = np.full(table.total, config.self_loop_init)
    advance = 1.0 - stay

    def hard_pass(n_mix, first_pass):
        acc = _Accumulators(table, n_mix, dim)
        hmms = _make_hmms(table, means, variances, weights, stay, advance, config)
        for rec, frames, units in utts:
            for label, t0, t1 in units:
                seg = frames[t0:t1]
                hmm = hmms[label]
                if first_pass:
                    path = _uniform_state_path(t1 - t0, hmm.n_states)
                else:
                    path = _viterbi_state_path(hmm, seg)
                    if path is None:
                        continue
                idx = table.offsets[label] + path
                comp_lp = np.zeros((len(path), n_mix))
                if n_mix > 1:
                    for s in np.unique(path):
                        rows = path == s
                        comp_lp[rows] = hmm.states[s].component_log_pdfs(seg[rows])
                top = comp_lp.max(axis=1, keepdims=True)
                post = np.exp(comp_lp - top)
                post /= post.sum(axis=1, keepdims=True)
                np.add.at(acc.occ, idx, post)
                np.add.at(acc.first, idx, post[:, :, None] * seg[:, None, :])
                np.add.at(acc.second, idx, post[:, :, None] * seg[:, None, :] ** 2)
                # transition counts: each state is left exactly once per traversal
                visited, n_frames_in = np.unique(path, return_counts=True)
                np.add.at(acc.advance, table.offsets[label] + visited, 1.0)
                np.add.at(acc.stay, table.offsets[label] + visited, n_frames_in - 1.0)
        _update_params(acc, table, means, variances, weights, stay, advance, var_floor)

    for it in range(config.single_gauss_iters):
        hard_pass(1, first_pass=(it == 0))

    if config.n_mix == 2:
        sigma = np.sqrt(variances)
        means = np.concatenate(
            [means - config.split_offset * sigma, means + config.split_offset * sigma], axis=1
        )
        variances = np.concatenate([variances, variances], axis=1)
        weights = np.full((table.total, 2), 0.5)
        for _ in range(config.gmm_seg_iters):
            hard_pass(2, first_pass=False)
    elif config.n_mix != 1:
        raise ValueError("only 1- or 2-component mixtures are supported")

    # embedded Baum-Welch over full utterances
    n_mix = config.n_mix
    ll_history = []
    prev_params = None
    for it in range(config.max_bw_iters):
        hmms = _make_hmms(table, means, variances, weights, stay, advance, config)
        acc = _Accumulators(table, n_mix, dim)
        total_ll = 0.0
        for rec, frames, units in utts:
            chain = _chain_arrays(units, hmms)
            logb, comps = _chain_logb(chain, hmms, frames, with_components=True)
            alpha, beta, ll = _forward_backward(chain, logb)
            if not np.isfinite(ll):
                continue
            total_ll += ll
            gamma = np.exp(alpha + beta - ll)                      # (T, N)
            post = np.exp(comps - logb[:, :, None])                # comp | state
            idx = np.array([table.index(l, s) for l, s in zip(chain["labels"], chain["local"])])
            acc.add_gmm(idx, gamma[:, :, None] * post, frames)

            # transition posteriors
            self_lp, next_lp = chain["self_lp"], chain["next_lp"]
            entry, exit_ = chain["entry"], chain["exit"]
            adv_to = np.nonzero(~np.isin(np.arange(chain["n"]), entry))[0]
            xi_stay = np.exp(alpha[:-1] + self_lp + logb[1:] + beta[1:] - ll)
            np.add.at(acc.stay, idx, xi_stay.sum(axis=0))
            xi_adv = np.exp(
                alpha[:-1, adv_to - 1] + next_lp[adv_to - 1]
                + logb[1:, adv_to] + beta[1:, adv_to] - ll
            )
            np.add.at(acc.advance, idx[adv_to - 1], xi_adv.sum(axis=0))
            xi_cross = np.exp(
                alpha[:-1, exit_[:-1]] + next_lp[exit_[:-1]]
                + logb[1:, entry[1:]] + beta[1:, entry[1:]] - ll
            )
            np.add.at(acc.advance, idx[exit_[:-1]], xi_cross.sum(axis=0))
            acc.advance[idx[exit_[-1]]] += gamma[-1, exit_[-1]]

        if not np.isfinite(total_ll):
            raise ValueError("non-finite training log-likelihood")
        if ll_history and total_ll < ll_history[-1] - 1e-6 * abs(ll_history[-1]):
            # flooring can break the EM bound marginally; keep the better model
            means, variances, weights, stay, advance = prev_params
            break
        ll_history.append(total_ll)
        prev_params = (means.copy(), variances.copy(), weights.copy(),
                       stay.copy(), advance.copy())
        _update_params(acc, table, means, variances, weights, stay, advance, var_floor)
        if len(ll_history) >= 2:
            prev, cur = ll_history[-2], ll_history[-1]
            if abs(cur - prev) < config.rel_tol * abs(prev):
                break

    hmms = _make_hmms(table, means, variances, weights, stay, advance, config)
    silence = hmms.pop(SILENCE_LABEL, None)
    return ConditionModels(
        condition=condition,
        words=hmms,
        silence=silence,
        meta={
            "iterations": len(ll_history),
            "log_likelihood": ll_history[-1] if ll_history else None,
            "ll_history": ll_history,
            "fold": fold_id,
            "seed": seed,
        },
    )
