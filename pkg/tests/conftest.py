from __future__ import annotations

import json

import pytest

from mdsynth.corpus import Corpus, Document, Instance, Task


def make_instance(
    instance_id: str,
    texts: list[str],
    reference: str = "a reference summary",
    task: Task = Task.CONTINUOUS,
    gold_aggregate: float | None = 0.5,
    **kwargs,
) -> Instance:
    docs = tuple(
        Document(id=f"{instance_id}-d{i}", text=t) for i, t in enumerate(texts)
    )
    if task is Task.BINARY:
        kwargs.setdefault("p_value", 0.5)
        gold_aggregate = None
    return Instance(
        id=instance_id,
        documents=docs,
        reference_summary=reference,
        task=task,
        gold_aggregate=gold_aggregate,
        **kwargs,
    )


def make_corpus(instances, task=Task.CONTINUOUS) -> Corpus:
    return Corpus(instances=tuple(instances), task=task)


def write_movie_records(path, records: list[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")


@pytest.fixture
def movies_file(tmp_path):
    path = tmp_path / "movies.jsonl"
    write_movie_records(
        path,
        [
            {
                "id": "m1",
                "reviews": [
                    {"id": "r1", "text": "a great film"},
                    {"id": "r2", "text": "dull and boring"},
                ],
                "meta_review": "critics were split",
                "tomatometer": 0.5,
            },
            {
                "id": "m2",
                "reviews": [{"id": "r1", "text": "wonderful"}],
                "meta_review": "praised by all",
                "tomatometer": 0.97,
            },
        ],
    )
    return path
