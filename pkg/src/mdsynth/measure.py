"""The measurement-model contract g(.): map any text to the latent property.

Builtin measurers are deterministic desk-scale stand-ins (a polarity-lexicon
sentiment scorer and a cue-phrase significance classifier); neural measurers
attach through the external line protocol (see ``protocol``).
"""

from __future__ import annotations

import string
from dataclasses import dataclass
from enum import Enum
from typing import Protocol, Sequence, runtime_checkable

from . import lexicon as _lexicon
from . import protocol
from .errors import DomainError, PipelineError, ProtocolError

NEUTRAL_VALUE = 0.5


class Kind(str, Enum):
    CONTINUOUS = "continuous"
    BINARY = "binary"


class Label(str, Enum):
    SIGNIFICANT = "significant"
    NOT_SIGNIFICANT = "not_significant"
    # Aliases for the opinion task; same underlying two-value label space.
    POSITIVE = "significant"
    NEGATIVE = "not_significant"


@dataclass(frozen=True)
class Measurement:
    kind: Kind
    value: float | None = None
    label: Label | None = None
    confidence: float | None = None

    def __post_init__(self):
        if self.kind is Kind.CONTINUOUS:
            if self.value is None or not 0.0 <= self.value <= 1.0:
                raise DomainError(f"continuous value must lie in [0,1], got {self.value}")
        else:
            if self.label is None:
                raise DomainError("binary measurement requires a label")
            if self.confidence is not None and not 0.0 <= self.confidence <= 1.0:
                raise DomainError(f"confidence must lie in [0,1], got {self.confidence}")

    @staticmethod
    def continuous(value: float) -> "Measurement":
        return Measurement(kind=Kind.CONTINUOUS, value=value)

    @staticmethod
    def binary(label: Label, confidence: float = 1.0) -> "Measurement":
        return Measurement(kind=Kind.BINARY, label=label, confidence=confidence)


@dataclass(frozen=True)
class MeasurerSpec:
    kind: str  # builtin_lexicon | builtin_keyword | external
    endpoint: str | None = None
    lexicon_path: str | None = None
    timeout: float = 10.0
    max_inflight: int = 4

    def __post_init__(self):
        if self.kind not in ("builtin_lexicon", "builtin_keyword", "external"):
            raise DomainError(f"unknown measurer kind {self.kind!r}")
        if self.kind == "external" and not self.endpoint:
            raise DomainError("external measurer requires an endpoint")


@runtime_checkable
class Measurer(Protocol):
    """Anything that can measure a text. Builtins are pure functions."""

    def measure_text(self, text: str) -> Measurement: ...

    def measure_batch(self, texts: Sequence[str]) -> list[Measurement]: ...


class _BatchByMapping:
    def measure_batch(self, texts: Sequence[str]) -> list[Measurement]:
        out = []
        for i, text in enumerate(texts):
            try:
                out.append(self.measure_text(text))  # type: ignore[attr-defined]
            except Exception as exc:
                raise PipelineError("measure_batch", f"element {i} failed: {exc}") from exc
        return out


def _tokens(text: str) -> list[str]:
    return [tok.strip(string.punctuation).lower() for tok in text.split()]


class LexiconMeasurer(_BatchByMapping):
    """Polarity-hit sentiment score mapped affinely onto [0,1].

    score = (pos - neg) / (pos + neg + 1); value = (score + 1) / 2, so a text
    with no lexicon hits measures exactly 0.5 (the neutral point). Appending
    a positive word never decreases the value.
    """

    def __init__(
        self,
        positive: frozenset[str] = _lexicon.POSITIVE_WORDS,
        negative: frozenset[str] = _lexicon.NEGATIVE_WORDS,
    ):
        self.positive = positive
        self.negative = negative

    def measure_text(self, text: str) -> Measurement:
        if not text.strip():
            raise DomainError("cannot measure empty text")
        pos = neg = 0
        for tok in _tokens(text):
            if tok in self.positive:
                pos += 1
            elif tok in self.negative:
                neg += 1
        score = (pos - neg) / (pos + neg + 1)
        return Measurement.continuous((score + 1.0) / 2.0)


# Ordered cue-phrase rules: first match wins. Negative cues come first so
# that e.g. "no significant difference" never fires the bare "significant"
# rule. Substring match over the lowercased text.
KEYWORD_RULES: tuple[tuple[str, Label], ...] = (
    ("no significant", Label.NOT_SIGNIFICANT),
    ("not significant", Label.NOT_SIGNIFICANT),
    ("no statistically significant", Label.NOT_SIGNIFICANT),
    ("did not differ", Label.NOT_SIGNIFICANT),
    ("does not differ", Label.NOT_SIGNIFICANT),
    ("no difference", Label.NOT_SIGNIFICANT),
    ("no evidence", Label.NOT_SIGNIFICANT),
    ("insufficient evidence", Label.NOT_SIGNIFICANT),
    ("little evidence", Label.NOT_SIGNIFICANT),
    ("lack of evidence", Label.NOT_SIGNIFICANT),
    ("neither effective", Label.NOT_SIGNIFICANT),
    ("not effective", Label.NOT_SIGNIFICANT),
    ("ineffective", Label.NOT_SIGNIFICANT),
    ("no effect", Label.NOT_SIGNIFICANT),
    ("did not improve", Label.NOT_SIGNIFICANT),
    ("did not reduce", Label.NOT_SIGNIFICANT),
    ("is unknown", Label.NOT_SIGNIFICANT),
    ("unclear", Label.NOT_SIGNIFICANT),
    ("significantly improved", Label.SIGNIFICANT),
    ("significantly reduced", Label.SIGNIFICANT),
    ("significant improvement", Label.SIGNIFICANT),
    ("significant reduction", Label.SIGNIFICANT),
    ("significant difference", Label.SIGNIFICANT),
    ("significant effect", Label.SIGNIFICANT),
    ("statistically significant", Label.SIGNIFICANT),
    ("significantly", Label.SIGNIFICANT),
    ("significant", Label.SIGNIFICANT),
    ("effective", Label.SIGNIFICANT),
)


class KeywordMeasurer(_BatchByMapping):
    """Cue-phrase significance classifier: ordered rules, first match wins.

    A rule hit carries confidence 1.0; the default (no cue found) is
    not_significant with confidence 0.5.
    """

    def __init__(self, rules: Sequence[tuple[str, Label]] = KEYWORD_RULES):
        self.rules = tuple(rules)

    def measure_text(self, text: str) -> Measurement:
        if not text.strip():
            raise DomainError("cannot measure empty text")
        lowered = text.lower()
        for phrase, label in self.rules:
            if phrase in lowered:
                return Measurement.binary(label, confidence=1.0)
        return Measurement.binary(Label.NOT_SIGNIFICANT, confidence=0.5)


class ExternalMeasurer:
    """Client for a measurer speaking the line protocol (see ``protocol``)."""

    def __init__(self, endpoint: str, timeout: float = 10.0, max_inflight: int = 4):
        self.endpoint = endpoint
        self.timeout = timeout
        self.max_inflight = max_inflight
        self._client = protocol.LineClient(endpoint, timeout=timeout)

    def measure_text(self, text: str) -> Measurement:
        if not text.strip():
            raise DomainError("cannot measure empty text")
        return self.measure_batch([text])[0]

    def measure_batch(self, texts: Sequence[str]) -> list[Measurement]:
        if not texts:
            return []
        requests = [{"req_id": str(i), "text": t} for i, t in enumerate(texts)]
        replies = self._client.request_many(requests, max_inflight=self.max_inflight)
        out: list[Measurement] = []
        for i in range(len(texts)):
            try:
                out.append(
                    protocol.parse_measurement_reply(replies[str(i)], Measurement, Kind, Label)
                )
            except protocol.ProtocolError as exc:
                raise ProtocolError(f"element {i} failed: {exc}") from exc
        return out

    def close(self) -> None:
        self._client.close()


def build_measurer(spec: MeasurerSpec) -> Measurer:
    if spec.kind == "builtin_lexicon":
        if spec.lexicon_path:
            pos, neg = _lexicon.load_lexicon(spec.lexicon_path)
            return LexiconMeasurer(pos, neg)
        return LexiconMeasurer()
    if spec.kind == "builtin_keyword":
        return KeywordMeasurer()
    return ExternalMeasurer(spec.endpoint, timeout=spec.timeout, max_inflight=spec.max_inflight)


def _resolve(measurer: Measurer | MeasurerSpec) -> Measurer:
    return build_measurer(measurer) if isinstance(measurer, MeasurerSpec) else measurer


def measure_text(measurer: Measurer | MeasurerSpec, text: str) -> Measurement:
    return _resolve(measurer).measure_text(text)


def measure_batch(measurer: Measurer | MeasurerSpec, texts: Sequence[str]) -> list[Measurement]:
    return _resolve(measurer).measure_batch(texts)


def binarize(m: Measurement, threshold: float) -> Measurement:
    """Project a continuous measurement onto the binary label space.

    The label is positive iff value >= threshold (ties go up); confidence is
    the distance to the threshold rescaled to [0,1] within the label's side.
    """
    if m.kind is not Kind.CONTINUOUS:
        raise TypeError("binarize expects a continuous measurement")
    if not 0.0 <= threshold <= 1.0:
        raise DomainError(f"threshold must lie in [0,1], got {threshold}")
    positive = m.value >= threshold
    side = (1.0 - threshold) if positive else threshold
    confidence = abs(m.value - threshold) / side if side > 0 else 0.0
    label = Label.POSITIVE if positive else Label.NEGATIVE
    return Measurement.binary(label, confidence=min(1.0, confidence))
