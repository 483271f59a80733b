"""Ranked PIN/word guessing from per-tap confidence rankings.

Candidate sequences are scored by the sum of per-position log confidences
and enumerated exactly (best-first over the ranking lattice, identical to a
brute-force sort of the product space). An optional joint k-gram language
model rescores candidates by adding its own log probability; recovery
curves summarize how many targets fall within the first m guesses.
"""

from __future__ import annotations

import heapq
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .classify import LdaModel, PredictionRanking, predict
from .errors import DataError

# Candidate-pool widening factor used before language-model rescoring.
FUSION_POOL_FACTOR = 10


@dataclass(frozen=True)
class ScoredSequence:
    symbols: tuple
    log_score: float

    def word(self) -> str:
        return "".join(self.symbols)


@dataclass(frozen=True)
class NgramModel:
    """Joint k-gram model with additive smoothing over a finite alphabet."""

    order_k: int
    gram_log_probs: dict
    alphabet: tuple
    smoothing_delta: float
    unseen_log_prob: float

    def log_prob_of_gram(self, gram: tuple) -> float:
        return self.gram_log_probs.get(gram, self.unseen_log_prob)


@dataclass(frozen=True)
class AttackResult:
    """Per-target ranks and the cumulative recovery curve."""

    targets: tuple
    rank_found: tuple  # 1-based rank or None
    recovery_curve: np.ndarray  # index m-1 = fraction recovered within m attempts

    @property
    def max_attempts(self) -> int:
        return self.recovery_curve.size


def _position_pools(rankings, depth_limit):
    pools = []
    alphabet = None
    for ranking in rankings:
        entries = list(ranking.entries)
        symbols = frozenset(label for label, _ in entries)
        if alphabet is None:
            alphabet = symbols
        elif symbols != alphabet:
            raise DataError("all rankings must cover the same alphabet")
        if depth_limit is not None:
            if depth_limit < 1 or depth_limit > len(entries):
                raise DataError(f"depth_limit must be in [1, {len(entries)}]")
            entries = entries[:depth_limit]
        pools.append([(label, math.log(conf)) for label, conf in entries])
    return pools


def enumerate_topk(rankings, k: int, depth_limit: int | None = None):
    """The k best sequences by summed log confidence, in exact sorted order.

    Each position draws from its ranking's top `depth_limit` labels (all
    labels when unlimited). The search is best-first over the rank lattice
    and matches a brute-force sort of the whole product space, ties broken
    lexicographically. Asking for more sequences than the restricted space
    holds returns the entire space with a warning.
    """
    if k < 1:
        raise DataError("k must be at least 1")
    if not rankings:
        raise DataError("need at least one per-tap ranking")
    pools = _position_pools(rankings, depth_limit)
    space = 1
    for pool in pools:
        space *= len(pool)
    if k > space:
        warnings.warn(f"k={k} exceeds the {space}-sequence search space; returning all")
        k = space

    def score_of(ranks):
        total = 0.0
        for pool, r in zip(pools, ranks):
            total += pool[r][1]
        return total

    def symbols_of(ranks):
        return tuple(pool[r][0] for pool, r in zip(pools, ranks))

    start = (0,) * len(pools)
    heap = [(-score_of(start), symbols_of(start), start)]
    seen = {start}
    out = []
    while heap and len(out) < k:
        neg_score, symbols, ranks = heapq.heappop(heap)
        out.append(ScoredSequence(symbols, -neg_score))
        for pos in range(len(pools)):
            if ranks[pos] + 1 < len(pools[pos]):
                child = ranks[:pos] + (ranks[pos] + 1,) + ranks[pos + 1 :]
                if child not in seen:
                    seen.add(child)
                    heapq.heappush(heap, (-score_of(child), symbols_of(child), child))
    return out


def train_ngram(corpus, order_k: int, alphabet, smoothing_delta: float = 0.01) -> NgramModel:
    """Count within-token k-windows with additive smoothing.

    `corpus` is an iterable of tokens; tokens are lowercased and dropped
    entirely if they contain symbols outside the alphabet. Probabilities
    are joint over all ``V**k`` windows: (count + delta) / (total + delta*V^k).
    """
    if order_k < 2:
        raise DataError("order_k must be at least 2")
    alphabet = tuple(sorted(set(alphabet)))
    allowed = set(alphabet)
    counts = {}
    total = 0
    for token in corpus:
        token = token.lower()
        if not token or any(ch not in allowed for ch in token):
            continue
        for i in range(len(token) - order_k + 1):
            gram = tuple(token[i : i + order_k])
            counts[gram] = counts.get(gram, 0) + 1
            total += 1
    if total == 0:
        raise DataError("corpus has no usable windows after alphabet filtering")
    delta = smoothing_delta
    v_pow_k = float(len(alphabet)) ** order_k
    denom = total + delta * v_pow_k
    if delta == 0.0:
        log_probs = {g: math.log(c / denom) for g, c in counts.items()}
        unseen = -math.inf
    else:
        log_probs = {g: math.log((c + delta) / denom) for g, c in counts.items()}
        unseen = math.log(delta / denom)
    return NgramModel(order_k, log_probs, alphabet, delta, unseen)


def ngram_log_prob(model: NgramModel, seq) -> float:
    """Sum of log window probabilities over all stride-1 windows of `seq`.

    Sequences shorter than the model order have no windows; they score 0
    (the empty product) and a warning is emitted.
    """
    symbols = tuple(seq)
    if len(symbols) < model.order_k:
        warnings.warn(
            f"sequence of {len(symbols)} symbols is shorter than the "
            f"{model.order_k}-gram order; scoring as an empty product"
        )
        return 0.0
    return sum(
        model.log_prob_of_gram(symbols[i : i + model.order_k])
        for i in range(len(symbols) - model.order_k + 1)
    )


def fuse_and_rank(
    rankings,
    ngram: NgramModel | None,
    k: int,
    depth_limit: int | None = None,
    pool_factor: int = FUSION_POOL_FACTOR,
):
    """Top-k sequences after language-model rescoring.

    A widened candidate pool (k * pool_factor) from `enumerate_topk` is
    rescored by log P_word + log P_ngram and re-sorted. Without a model the
    result is identical to `enumerate_topk`.
    """
    if ngram is None:
        return enumerate_topk(rankings, k, depth_limit)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        pool = enumerate_topk(rankings, k * pool_factor, depth_limit)
    fused = [
        ScoredSequence(cand.symbols, cand.log_score + ngram_log_prob(ngram, cand.symbols))
        for cand in pool
    ]
    fused.sort(key=lambda s: (-s.log_score, s.symbols))
    return fused[:k]


def dictionary_attack(rankings, dictionary, k: int):
    """Score every same-length dictionary word by summed log confidence.

    Words whose length does not match the ranking count are skipped with a
    warning; the top k remaining words are returned in sorted order.
    """
    if k < 1:
        raise DataError("k must be at least 1")
    log_conf = []
    for ranking in rankings:
        log_conf.append({label: math.log(conf) for label, conf in ranking.entries})
    scored = []
    skipped = 0
    for word in dictionary:
        symbols = tuple(word)
        if len(symbols) != len(rankings):
            skipped += 1
            continue
        try:
            total = sum(pos[s] for pos, s in zip(log_conf, symbols))
        except KeyError as exc:
            raise DataError(f"word {word!r} uses symbol {exc} outside the alphabet") from None
        scored.append(ScoredSequence(symbols, total))
    if skipped:
        warnings.warn(f"skipped {skipped} dictionary words of mismatched length")
    scored.sort(key=lambda s: (-s.log_score, s.symbols))
    return scored[:k]


def synthesize_word_rankings(per_label_pools, word, model: LdaModel, seed: int):
    """Per-letter rankings for a word assembled from pooled single-tap features.

    For each letter one feature vector is drawn uniformly (seeded) from that
    letter's pool and classified; the resulting ranking sequence stands in
    for a recording of the word being typed.
    """
    rng = np.random.default_rng(seed)
    rankings = []
    for letter in word:
        pool = per_label_pools.get(letter)
        if not pool:
            raise DataError(f"no pooled taps for letter {letter!r}")
        choice = pool[int(rng.integers(len(pool)))]
        rankings.append(predict(model, choice))
    return rankings


def score_attack(guess_lists, truths, max_attempts: int | None = None) -> AttackResult:
    """Ranks of the true sequences and the cumulative recovery curve.

    ``recovery_curve[m-1]`` is the fraction of targets whose truth appears
    within the first m guesses. When `max_attempts` is omitted, the longest
    guess list sets the curve length.
    """
    if len(guess_lists) != len(truths):
        raise DataError("need exactly one guess list per target")
    if max_attempts is None:
        max_attempts = max((len(g) for g in guess_lists), default=0)
    ranks = []
    for guesses, truth in zip(guess_lists, truths):
        truth_symbols = tuple(truth)
        rank = None
        for i, guess in enumerate(guesses, start=1):
            if tuple(guess.symbols) == truth_symbols:
                rank = i
                break
        ranks.append(rank)
    curve = np.zeros(max_attempts)
    n = max(len(truths), 1)
    for m in range(1, max_attempts + 1):
        curve[m - 1] = sum(1 for r in ranks if r is not None and r <= m) / n
    return AttackResult(tuple(tuple(t) for t in truths), tuple(ranks), curve)
