"""Multi-document instances: loading, validation, linearization, permutation.

Two line-oriented record schemas are supported (one JSON object per line,
UTF-8):

  movies: {"id", "reviews": [{"id", "text", "weight"?, "gold_measure"?}],
           "meta_review", "tomatometer"}
  trials: {"id", "studies": [{"id", "text", "effect"?, "variance"?,
           "gold_label"?, "weight"?}], "summary", "p_value"?, "gold_label"?}

Corpora and instances are immutable after construction; every mutating
operation returns a copy.
"""

from __future__ import annotations

import json
import logging
import random
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

from .errors import DomainError

logger = logging.getLogger(__name__)


class Task(str, Enum):
    CONTINUOUS = "continuous"
    BINARY = "binary"


class Split(str, Enum):
    TRAIN = "train"
    DEV = "dev"
    TEST = "test"


@dataclass(frozen=True)
class Document:
    """One input text with optional weight, gold measure, and trial statistics."""

    id: str
    text: str
    weight: float = 1.0
    gold_measure: float | None = None
    gold_label: str | None = None
    effect: float | None = None
    variance: float | None = None

    def __post_init__(self):
        if not self.text.strip():
            raise DomainError(f"document {self.id!r}: text is empty")
        if self.weight < 0:
            raise DomainError(f"document {self.id!r}: weight must be non-negative")
        if self.variance is not None and self.variance <= 0:
            raise DomainError(f"document {self.id!r}: variance must be positive")
        if self.gold_measure is not None and not 0.0 <= self.gold_measure <= 1.0:
            raise DomainError(f"document {self.id!r}: gold_measure must lie in [0,1]")


@dataclass(frozen=True)
class Instance:
    """A set of documents plus reference summary and gold aggregate target.

    Document order is significant: it is the experimental variable in the
    order-permutation studies.
    """

    id: str
    documents: tuple[Document, ...]
    reference_summary: str
    task: Task
    gold_aggregate: float | None = None
    p_value: float | None = None
    gold_label: str | None = None

    def __post_init__(self):
        if not self.documents:
            raise DomainError(f"instance {self.id!r}: documents list is empty")
        if self.gold_aggregate is not None and not 0.0 <= self.gold_aggregate <= 1.0:
            raise DomainError(f"instance {self.id!r}: gold_aggregate must lie in [0,1]")
        if self.p_value is not None and not 0.0 < self.p_value <= 1.0:
            raise DomainError(f"instance {self.id!r}: p_value must lie in (0,1]")
        if self.task is Task.BINARY and self.p_value is None and self.gold_label is None:
            raise DomainError(
                f"instance {self.id!r}: binary task requires a p_value or a resolved gold_label"
            )


@dataclass(frozen=True)
class RecordError:
    """A per-record load failure, kept alongside the successfully parsed corpus."""

    line_number: int
    message: str


@dataclass(frozen=True)
class Corpus:
    instances: tuple[Instance, ...]
    task: Task
    split: Split = Split.TEST
    errors: tuple[RecordError, ...] = ()

    def __post_init__(self):
        ids = [inst.id for inst in self.instances]
        if len(ids) != len(set(ids)):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise DomainError(f"duplicate instance ids in corpus: {dupes}")

    def __len__(self) -> int:
        return len(self.instances)


SCHEMAS = ("movies", "trials")


def _parse_movies_record(obj: dict) -> Instance:
    docs = []
    for rev in obj["reviews"]:
        docs.append(
            Document(
                id=str(rev["id"]),
                text=rev["text"],
                weight=float(rev.get("weight", 1.0)),
                gold_measure=rev.get("gold_measure"),
            )
        )
    return Instance(
        id=str(obj["id"]),
        documents=tuple(docs),
        reference_summary=obj["meta_review"],
        task=Task.CONTINUOUS,
        gold_aggregate=float(obj["tomatometer"]),
    )


def _parse_trials_record(obj: dict) -> Instance:
    docs = []
    for st in obj["studies"]:
        effect = st.get("effect")
        variance = st.get("variance")
        docs.append(
            Document(
                id=str(st["id"]),
                text=st["text"],
                weight=float(st.get("weight", 1.0)),
                gold_label=st.get("gold_label"),
                effect=None if effect is None else float(effect),
                variance=None if variance is None else float(variance),
            )
        )
    p_value = obj.get("p_value")
    return Instance(
        id=str(obj["id"]),
        documents=tuple(docs),
        reference_summary=obj["summary"],
        task=Task.BINARY,
        p_value=None if p_value is None else float(p_value),
        gold_label=obj.get("gold_label"),
    )


def load_corpus(path: str | Path, schema: str, split: Split = Split.TEST) -> Corpus:
    """Load a line-oriented corpus file.

    Malformed records are collected into ``Corpus.errors`` with their line
    numbers; they are never silently dropped. An unreadable file is fatal.
    """
    if schema not in SCHEMAS:
        raise DomainError(f"unknown schema {schema!r}; expected one of {SCHEMAS}")
    parse = _parse_movies_record if schema == "movies" else _parse_trials_record
    task = Task.CONTINUOUS if schema == "movies" else Task.BINARY

    text = Path(path).read_text(encoding="utf-8")
    instances: list[Instance] = []
    errors: list[RecordError] = []
    seen: set[str] = set()
    for line_number, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            inst = parse(obj)
            if inst.id in seen:
                raise DomainError(f"duplicate instance id {inst.id!r}")
            seen.add(inst.id)
            instances.append(inst)
        except (KeyError, TypeError, ValueError) as exc:
            msg = f"missing field {exc}" if isinstance(exc, KeyError) else str(exc)
            errors.append(RecordError(line_number=line_number, message=msg))

    if not instances and not errors:
        logger.warning("corpus file %s contains no records", path)
    return Corpus(instances=tuple(instances), task=task, split=split, errors=tuple(errors))


def _movies_record(inst: Instance) -> dict:
    reviews = []
    for d in inst.documents:
        rev: dict = {"id": d.id, "text": d.text}
        if d.weight != 1.0:
            rev["weight"] = d.weight
        if d.gold_measure is not None:
            rev["gold_measure"] = d.gold_measure
        reviews.append(rev)
    return {
        "id": inst.id,
        "reviews": reviews,
        "meta_review": inst.reference_summary,
        "tomatometer": inst.gold_aggregate,
    }


def _trials_record(inst: Instance) -> dict:
    studies = []
    for d in inst.documents:
        st: dict = {"id": d.id, "text": d.text}
        if d.weight != 1.0:
            st["weight"] = d.weight
        if d.effect is not None:
            st["effect"] = d.effect
        if d.variance is not None:
            st["variance"] = d.variance
        if d.gold_label is not None:
            st["gold_label"] = d.gold_label
        studies.append(st)
    obj: dict = {"id": inst.id, "studies": studies, "summary": inst.reference_summary}
    if inst.p_value is not None:
        obj["p_value"] = inst.p_value
    if inst.gold_label is not None:
        obj["gold_label"] = inst.gold_label
    return obj


def save_corpus(corpus: Corpus, path: str | Path) -> None:
    """Write a corpus back out in its line-oriented record format."""
    to_record = _movies_record if corpus.task is Task.CONTINUOUS else _trials_record
    with open(path, "w", encoding="utf-8") as fh:
        for inst in corpus.instances:
            fh.write(json.dumps(to_record(inst), ensure_ascii=False) + "\n")


@dataclass(frozen=True)
class Linearized:
    """A linearized instance plus the record of what happened on the way."""

    text: str
    truncated: bool = False
    dropped_tokens: int = 0
    separator_collisions: int = 0
    events: tuple[str, ...] = field(default=(), compare=False)


def linearize(
    instance: Instance,
    separator: str,
    max_length: int | None = None,
    truncate: str = "later_first",
) -> Linearized:
    """Concatenate documents with a demarcating separator token.

    Output is ``sep doc1 sep doc2 ...`` in the instance's current document
    order (whitespace-joined tokens). When ``max_length`` is set, the total
    whitespace-token budget is enforced by trimming the later documents
    first (truncate="earlier_first" flips the direction); truncation is a
    recorded event, not an error. A separator occurring inside a document is
    replaced with a single space and recorded as a collision.
    """
    if not separator.strip():
        raise DomainError("separator must be non-empty")
    if truncate not in ("later_first", "earlier_first"):
        raise DomainError(f"unknown truncation direction {truncate!r}")
    sep_tokens = separator.split()
    sep_len = len(sep_tokens)

    collisions = 0
    events: list[str] = []
    doc_token_lists: list[list[str]] = []
    for doc in instance.documents:
        text = doc.text
        if separator in text:
            collisions += text.count(separator)
            text = text.replace(separator, " ")
            events.append(f"separator collision in document {doc.id!r}; replaced with space")
            logger.warning("separator %r occurs in document %r; replaced", separator, doc.id)
        doc_token_lists.append(text.split())

    # Budget is handed out document by document, starting from the end that
    # is kept intact; a document only appears if its separator plus at least
    # one token fits.
    n = len(doc_token_lists)
    visit = range(n) if truncate == "later_first" else range(n - 1, -1, -1)
    takes = [0] * n
    included = [False] * n
    truncated = False
    dropped = 0
    used = 0
    fully_dropped = 0
    for i in visit:
        tokens = doc_token_lists[i]
        if max_length is not None and used + sep_len + 1 > max_length:
            dropped += len(tokens)
            fully_dropped += 1
            truncated = True
            continue
        take = len(tokens)
        if max_length is not None:
            take = min(take, max_length - used - sep_len)
        takes[i] = take
        included[i] = True
        used += sep_len + take
        if take < len(tokens):
            truncated = True
            dropped += len(tokens) - take
            events.append(f"document {instance.documents[i].id!r} truncated to {take} tokens")
    if fully_dropped:
        events.append(f"dropped {fully_dropped} whole documents: budget exhausted")

    out_tokens: list[str] = []
    for i in range(n):
        if included[i]:
            out_tokens.extend(sep_tokens)
            out_tokens.extend(doc_token_lists[i][: takes[i]])

    return Linearized(
        text=" ".join(out_tokens),
        truncated=truncated,
        dropped_tokens=dropped,
        separator_collisions=collisions,
        events=tuple(events),
    )


def permute_documents(instance: Instance, seed: int) -> Instance:
    """Return a copy of the instance with documents in seeded random order.

    The same seed always yields the same order; the original instance is
    untouched.
    """
    docs = list(instance.documents)
    random.Random(seed).shuffle(docs)
    return replace(instance, documents=tuple(docs))
