"""Beam-search family decoders over an abstract token scorer.

The scorer contract is tiny: an ordered vocabulary that includes the
end-of-sequence token, and a ``score(prefix, conditioning)`` returning one
log-probability per vocabulary entry (exponentials summing to 1 within
1e-6). Everything here is deterministic for a fixed scorer, conditioning,
and config: ties break on lexicographic token order.

Diverse beam search follows the Hamming-diversity scheme: groups decode in
fixed order and group g's step scores are penalized by
``-lambda * count(token at this position among groups < g)``. Penalized
scores steer selection only; stored log-probs are always the unpenalized
sums, so downstream highest-probability selection stays well-defined.
"""

from __future__ import annotations

import math
import uuid
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Callable, Protocol, Sequence, runtime_checkable

from . import protocol
from .corpus import Corpus
from .errors import ContractError, DomainError, ProtocolError
from .measure import LexiconMeasurer, Measurement, Measurer

EOS = "</s>"
BOS = "<s>"

NORMALIZATION_TOLERANCE = 1e-6


@runtime_checkable
class TokenScorer(Protocol):
    vocabulary: Sequence[str]

    def score(self, prefix: Sequence[str], conditioning: str) -> Sequence[float]: ...


@dataclass(frozen=True)
class Hypothesis:
    tokens: tuple[str, ...]
    log_prob: float
    finished: bool

    @property
    def text(self) -> str:
        return " ".join(t for t in self.tokens if t != EOS)


@dataclass(frozen=True)
class DecodeConfig:
    mode: str = "beam"  # beam | diverse_beam | constrained_beam
    beam_width: int = 5
    groups: int = 5
    beams_per_group: int = 1
    diversity_lambda: float = 0.5
    max_tokens: int = 32
    # End-of-sequence is suppressed until this many visible tokens exist
    # (unless nothing else has probability mass), so summaries are non-empty
    # by default.
    min_tokens: int = 1
    epsilon: float | None = None
    length_normalize: bool = False

    def __post_init__(self):
        if self.mode not in ("beam", "diverse_beam", "constrained_beam"):
            raise DomainError(f"unknown decode mode {self.mode!r}")
        if min(self.beam_width, self.groups, self.beams_per_group, self.max_tokens) < 1:
            raise DomainError("beam_width, groups, beams_per_group, max_tokens must be >= 1")
        if self.min_tokens < 0:
            raise DomainError("min_tokens must be >= 0")
        if self.diversity_lambda < 0:
            raise DomainError("diversity_lambda must be non-negative")
        if self.mode == "constrained_beam" and (self.epsilon is None or self.epsilon <= 0):
            raise DomainError("constrained mode requires a positive epsilon")


@dataclass(frozen=True)
class Candidate:
    text: str
    log_prob: float | None
    measurement: Measurement | None = None
    group: int | None = None

    def __post_init__(self):
        if self.log_prob is not None and not math.isfinite(self.log_prob):
            raise DomainError(f"candidate log_prob must be finite, got {self.log_prob}")


@dataclass(frozen=True)
class CandidateSet:
    candidates: tuple[Candidate, ...]
    source_instance: str = ""
    events: tuple[str, ...] = field(default=(), compare=False)

    def __len__(self) -> int:
        return len(self.candidates)


Generator = Callable[[str], CandidateSet]


@dataclass(frozen=True)
class _Beam:
    tokens: tuple[str, ...]
    log_prob: float
    penalized: float
    finished: bool


def _validated_scores(
    scorer: TokenScorer, prefix: tuple[str, ...], conditioning: str, cache: dict
) -> Sequence[float]:
    if prefix in cache:
        return cache[prefix]
    scores = scorer.score(prefix, conditioning)
    if len(scores) != len(scorer.vocabulary):
        raise ContractError(
            f"scorer returned {len(scores)} scores for a vocabulary of {len(scorer.vocabulary)}"
        )
    total = math.fsum(math.exp(s) for s in scores)
    if abs(total - 1.0) > NORMALIZATION_TOLERANCE:
        raise ContractError(f"scorer log-probabilities exponentiate to {total}, not 1")
    cache[prefix] = scores
    return scores


def _rank_key(length_normalize: bool):
    def key(beam: _Beam):
        score = beam.log_prob
        if length_normalize and beam.tokens:
            score /= len(beam.tokens)
        return (-score, beam.tokens)

    return key


def _force_finish(beams: list[_Beam]) -> list[_Beam]:
    return [replace(b, finished=True) if not b.finished else b for b in beams]


def _to_candidates(beams: Sequence[_Beam], group: int | None = None) -> list[Candidate]:
    out = []
    for b in beams:
        hyp = Hypothesis(tokens=b.tokens, log_prob=b.log_prob, finished=b.finished)
        out.append(Candidate(text=hyp.text, log_prob=hyp.log_prob, group=group))
    return out


def _expand(beam: _Beam, scorer: TokenScorer, scores, min_tokens: int) -> list[tuple[str, float]]:
    """Token choices for one unfinished beam, honoring the min-length rule."""
    allow_eos = len(beam.tokens) >= min_tokens
    choices = [
        (tok, lp)
        for tok, lp in zip(scorer.vocabulary, scores)
        if lp != -math.inf and (allow_eos or tok != EOS)
    ]
    if not choices:
        # Everything but end-of-sequence has zero probability; let the beam
        # finish early rather than deadlock.
        choices = [(tok, lp) for tok, lp in zip(scorer.vocabulary, scores) if lp != -math.inf]
    return choices


def beam_search(scorer: TokenScorer, conditioning: str, config: DecodeConfig) -> CandidateSet:
    """Standard beam search: up to beam_width finished hypotheses, best first.

    Hypotheses still unfinished when they reach max_tokens are force-stopped
    there; their log-probs remain the exact sums of their step scores.
    """
    beams, events = _constrained_or_plain_search(
        scorer, conditioning, config.beam_width, config.max_tokens, config.min_tokens,
        measurer=None, target=None, epsilon=None,
    )
    beams.sort(key=_rank_key(config.length_normalize))
    return CandidateSet(candidates=tuple(_to_candidates(beams)), events=tuple(events))


def constrained_beam_search(
    scorer: TokenScorer,
    conditioning: str,
    config: DecodeConfig,
    measurer: Measurer,
    target: float,
) -> CandidateSet:
    """Beam search that prunes prefixes measuring farther than epsilon from target.

    Prefixes with no measurable text yet (only end-of-sequence) are exempt.
    When pruning would empty a step entirely, the constraint is suspended for
    that step and the event recorded rather than failing the decode.
    """
    if config.epsilon is None:
        raise DomainError("constrained_beam_search requires config.epsilon")
    beams, events = _constrained_or_plain_search(
        scorer, conditioning, config.beam_width, config.max_tokens, config.min_tokens,
        measurer=measurer, target=target, epsilon=config.epsilon,
    )
    beams.sort(key=_rank_key(config.length_normalize))
    return CandidateSet(candidates=tuple(_to_candidates(beams)), events=tuple(events))


def _constrained_or_plain_search(
    scorer: TokenScorer,
    conditioning: str,
    beam_width: int,
    max_tokens: int,
    min_tokens: int,
    measurer: Measurer | None,
    target: float | None,
    epsilon: float | None,
) -> tuple[list[_Beam], list[str]]:
    cache: dict = {}
    measure_cache: dict[str, float] = {}
    events: list[str] = []

    def within_constraint(tokens: tuple[str, ...]) -> bool:
        text = " ".join(t for t in tokens if t != EOS)
        if not text:
            return True
        if text not in measure_cache:
            measure_cache[text] = measurer.measure_text(text).value
        return abs(measure_cache[text] - target) < epsilon

    beams = [_Beam(tokens=(), log_prob=0.0, penalized=0.0, finished=False)]
    for step in range(max_tokens):
        if all(b.finished for b in beams):
            break
        pool = [b for b in beams if b.finished]
        expansions: list[_Beam] = []
        for b in beams:
            if b.finished:
                continue
            scores = _validated_scores(scorer, b.tokens, conditioning, cache)
            for tok, lp in _expand(b, scorer, scores, min_tokens):
                expansions.append(
                    _Beam(
                        tokens=b.tokens + (tok,),
                        log_prob=b.log_prob + lp,
                        penalized=b.penalized + lp,
                        finished=tok == EOS,
                    )
                )
        if measurer is not None:
            kept = [e for e in expansions if within_constraint(e.tokens)]
            if not kept and expansions:
                events.append(f"constraint suspended at step {step}: all candidates pruned")
                kept = expansions
            expansions = kept
        pool.extend(expansions)
        pool.sort(key=_rank_key(False))
        beams = pool[:beam_width]
    return _force_finish(beams), events


def diverse_beam_search(
    scorer: TokenScorer, conditioning: str, config: DecodeConfig
) -> CandidateSet:
    """Group-wise beam search with a Hamming diversity penalty.

    Candidates come back group-major (group order is fixed), each group's
    beams ordered by unpenalized log-prob.
    """
    cache: dict = {}
    lam = config.diversity_lambda
    groups: list[list[_Beam]] = [
        [_Beam(tokens=(), log_prob=0.0, penalized=0.0, finished=False)]
        for _ in range(config.groups)
    ]
    for step in range(config.max_tokens):
        if all(b.finished for grp in groups for b in grp):
            break
        step_tokens: list[list[str]] = []
        for g in range(config.groups):
            counts = Counter(tok for earlier in step_tokens for tok in earlier)
            pool = [b for b in groups[g] if b.finished]
            for b in groups[g]:
                if b.finished:
                    continue
                scores = _validated_scores(scorer, b.tokens, conditioning, cache)
                for tok, lp in _expand(b, scorer, scores, config.min_tokens):
                    pool.append(
                        _Beam(
                            tokens=b.tokens + (tok,),
                            log_prob=b.log_prob + lp,
                            penalized=b.penalized + lp - lam * counts[tok],
                            finished=tok == EOS,
                        )
                    )
            pool.sort(key=lambda b: (-b.penalized, b.tokens))
            groups[g] = pool[: config.beams_per_group]
            step_tokens.append(
                [b.tokens[step] for b in groups[g] if len(b.tokens) == step + 1]
            )
    candidates: list[Candidate] = []
    for g, grp in enumerate(groups):
        beams = _force_finish(grp)
        beams.sort(key=_rank_key(config.length_normalize))
        candidates.extend(_to_candidates(beams, group=g))
    return CandidateSet(candidates=tuple(candidates))


class ToyNgramScorer:
    """Count-based conditional n-gram scorer with add-k smoothing.

    Conditioning enters through a coarse sentiment feature: the builtin
    lexicon value of the conditioning string, bucketed into thirds. Each
    bucket keeps its own n-gram table (built the same way from each training
    instance's joined inputs); a bucket never seen in training falls back to
    the pooled table.
    """

    def __init__(self, order: int, smoothing: float, vocabulary: Sequence[str]):
        self.order = order
        self.smoothing = smoothing
        self.vocabulary = tuple(vocabulary)
        self._index = {tok: i for i, tok in enumerate(self.vocabulary)}
        self._counts: dict[int, dict[tuple[str, ...], Counter]] = {}
        self._pooled: dict[tuple[str, ...], Counter] = {}
        self._lexicon = LexiconMeasurer()

    def bucket(self, text: str) -> int:
        if not text.strip():
            return 1
        value = self._lexicon.measure_text(text).value
        return min(2, int(value * 3))

    def _observe(self, bucket: int, summary_tokens: Sequence[str]) -> None:
        stream = [BOS] * (self.order - 1) + list(summary_tokens) + [EOS]
        table = self._counts.setdefault(bucket, {})
        for i in range(self.order - 1, len(stream)):
            ctx = tuple(stream[i - self.order + 1 : i])
            tok = stream[i]
            table.setdefault(ctx, Counter())[tok] += 1
            self._pooled.setdefault(ctx, Counter())[tok] += 1

    def _context(self, prefix: Sequence[str]) -> tuple[str, ...]:
        padded = [BOS] * (self.order - 1) + list(prefix)
        return tuple(padded[len(padded) - self.order + 1 :]) if self.order > 1 else ()

    def score(self, prefix: Sequence[str], conditioning: str) -> list[float]:
        table = self._counts.get(self.bucket(conditioning), self._pooled)
        ctx_counts = table.get(self._context(prefix), Counter())
        total = sum(ctx_counts.values())
        k = self.smoothing
        denom = total + k * len(self.vocabulary)
        return [math.log((ctx_counts[tok] + k) / denom) for tok in self.vocabulary]


def train_toy_scorer(corpus: Corpus, order: int = 2, smoothing: float = 0.1) -> ToyNgramScorer:
    """Fit the toy n-gram scorer on a corpus's reference summaries."""
    if order not in (1, 2, 3):
        raise DomainError(f"order must be 1, 2, or 3, got {order}")
    if smoothing <= 0:
        raise DomainError("smoothing must be positive")
    if not corpus.instances:
        raise DomainError("cannot train a scorer on an empty corpus")
    vocab = sorted({tok for inst in corpus.instances for tok in inst.reference_summary.split()})
    scorer = ToyNgramScorer(order=order, smoothing=smoothing, vocabulary=vocab + [EOS])
    for inst in corpus.instances:
        joined = " ".join(d.text for d in inst.documents)
        scorer._observe(scorer.bucket(joined), inst.reference_summary.split())
    return scorer


def sample_external(
    endpoint: str, conditioning: str, n: int, temperature: float, timeout: float = 30.0
) -> CandidateSet:
    """Fetch n sampled completions from an external generator backend.

    Backends that do not report sequence probabilities leave log_prob
    absent; those candidates carry log_prob None (ranked by arrival order
    downstream).
    """
    if n < 1:
        raise DomainError("n must be positive")
    client = protocol.LineClient(endpoint, timeout=timeout)
    try:
        req_id = uuid.uuid4().hex
        request = {
            "req_id": req_id,
            "conditioning": conditioning,
            "n": n,
            "temperature": temperature,
            "mode": "sample",
        }
        replies = client.request_stream(request)
    finally:
        client.close()
    if len(replies) != n:
        raise ProtocolError(f"{endpoint}: expected {n} candidates, got {len(replies)}")
    candidates = []
    for expected_seq, obj in enumerate(replies):
        if "error" in obj:
            raise ProtocolError(f"{endpoint}: backend error: {obj['error']}")
        if obj.get("seq_no") != expected_seq:
            raise ProtocolError(
                f"{endpoint}: reply out of order (seq_no {obj.get('seq_no')}, expected {expected_seq})"
            )
        if not isinstance(obj.get("text"), str):
            raise ProtocolError(f"{endpoint}: reply without text: {obj!r}")
        lp = obj.get("log_prob")
        candidates.append(Candidate(text=obj["text"], log_prob=None if lp is None else float(lp)))
    return CandidateSet(candidates=tuple(candidates))


def decode(
    scorer: TokenScorer,
    conditioning: str,
    config: DecodeConfig,
    measurer: Measurer | None = None,
    target: float | None = None,
) -> CandidateSet:
    """Dispatch on config.mode."""
    if config.mode == "beam":
        return beam_search(scorer, conditioning, config)
    if config.mode == "diverse_beam":
        return diverse_beam_search(scorer, conditioning, config)
    if measurer is None or target is None:
        raise DomainError("constrained mode requires a measurer and a target")
    return constrained_beam_search(scorer, conditioning, config, measurer, target)


def make_generator(
    scorer: TokenScorer,
    config: DecodeConfig,
    measurer: Measurer | None = None,
    target: float | None = None,
) -> Generator:
    return lambda conditioning: decode(scorer, conditioning, config, measurer, target)


def make_echo_generator(n: int) -> Generator:
    """In-process mirror of the echo backend's generator semantics."""

    def generate(conditioning: str) -> CandidateSet:
        cands = tuple(
            Candidate(text=text, log_prob=lp) for text, lp in protocol.echo_candidates(conditioning, n)
        )
        return CandidateSet(candidates=cands)

    return generate
