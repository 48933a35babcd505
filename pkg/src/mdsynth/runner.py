"""Experiment orchestration, result persistence, and plot-data emission.

Results persist as append-only line records (``results.jsonl``): a config
snapshot line, one line per instance streamed as produced, a final aggregate
metrics block, and a run-info line. Re-running a builtin-only config with
the same seed reproduces the aggregate block byte-for-byte; timing lives in
the run-info line so it never perturbs that guarantee.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

from . import __version__, perturb, select
from .corpus import Corpus, Instance, Task, linearize, load_corpus
from .decode import (
    DecodeConfig,
    Generator,
    make_echo_generator,
    make_generator,
    sample_external,
    train_toy_scorer,
)
from .errors import DomainError, EngineError, StudySkipped
from .measure import Kind, Label, MeasurerSpec, build_measurer
from .metrics import PairedSeries, macro_f1_accuracy, mse, pearson, r_squared_centered, rouge1_f
from .select import PolicyKind, SelectionPolicy

STUDIES = ("calibration", "permutation", "composition", "flip", "improve")


class ConfigError(EngineError):
    """Invalid experiment configuration; nothing was run."""


@dataclass(frozen=True)
class GeneratorConfig:
    kind: str = "toy"  # toy | external | echo
    order: int = 2
    smoothing: float = 0.1
    train_path: str | None = None
    endpoint: str | None = None
    n: int = 5
    temperature: float = 0.6


@dataclass(frozen=True)
class ExperimentConfig:
    corpus_path: str
    schema: str
    study: str
    output_dir: str
    generator: GeneratorConfig = GeneratorConfig()
    measurer: MeasurerSpec = MeasurerSpec(kind="builtin_lexicon")
    decode: DecodeConfig = DecodeConfig(mode="diverse_beam")
    policy: SelectionPolicy = SelectionPolicy()
    seed: int = 0
    workers: int = 1
    separator: str = "<doc>"
    max_input_tokens: int | None = None
    n_permutations: int = 100
    threshold: float = 0.5

    def validate(self) -> None:
        if self.study not in STUDIES:
            raise ConfigError(f"unknown study {self.study!r}; expected one of {STUDIES}")
        if self.schema not in ("movies", "trials"):
            raise ConfigError(f"unknown schema {self.schema!r}")
        if self.study == "flip" and self.schema != "trials":
            raise ConfigError("flip studies require the trials schema")
        if self.generator.kind not in ("toy", "external", "echo"):
            raise ConfigError(f"unknown generator kind {self.generator.kind!r}")
        if self.generator.kind == "external" and not self.generator.endpoint:
            raise ConfigError("external generator requires an endpoint")
        if self.decode.mode == "constrained_beam":
            # The measurement constraint is re-targeted per instance, which
            # only the improve pipeline provides.
            if self.study != "improve":
                raise ConfigError("constrained decode mode is only supported in improve studies")
            if self.generator.kind != "toy":
                raise ConfigError("constrained decode mode requires the toy generator")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.n_permutations < 2:
            raise ConfigError("n_permutations must be >= 2")

    def snapshot(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class ExperimentRecord:
    config: dict
    instances: list[dict] = field(default_factory=list)
    aggregate: dict = field(default_factory=dict)
    elapsed_seconds: float = 0.0
    engine_version: str = __version__


def _instance_seed(seed: int, instance_id: str) -> int:
    digest = hashlib.blake2s(f"{seed}:{instance_id}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "big")


class ConstrainedGenerator:
    """Improve-study generator for the constrained decode mode: the
    measurement constraint is aimed at each instance's expected aggregate."""

    def __init__(self, scorer, decode_config: DecodeConfig, measurer):
        self.scorer = scorer
        self.decode_config = decode_config
        self.measurer = measurer

    def for_target(self, target: float) -> Generator:
        return make_generator(self.scorer, self.decode_config, self.measurer, target)

    def __call__(self, conditioning: str):
        raise DomainError("constrained generator needs a target; use for_target()")


def build_generator(config: ExperimentConfig, corpus: Corpus, measurer=None) -> Generator:
    gen = config.generator
    if gen.kind == "toy":
        train = corpus
        if gen.train_path:
            train = load_corpus(gen.train_path, config.schema)
        scorer = train_toy_scorer(train, order=gen.order, smoothing=gen.smoothing)
        if config.decode.mode == "constrained_beam":
            return ConstrainedGenerator(scorer, config.decode, measurer)
        return make_generator(scorer, config.decode)
    if gen.kind == "echo":
        n = (
            config.decode.groups * config.decode.beams_per_group
            if config.decode.mode == "diverse_beam"
            else config.decode.beam_width
        )
        return make_echo_generator(n)
    return lambda conditioning: sample_external(
        gen.endpoint, conditioning, gen.n, gen.temperature
    )


# --- per-instance study payloads ---------------------------------------------


def _calibration_payload(config, instance: Instance, generator, measurer) -> dict:
    m = measurer.measure_text(instance.reference_summary)
    if instance.task is Task.CONTINUOUS:
        if m.kind is not Kind.CONTINUOUS:
            raise DomainError("calibration on a continuous corpus needs a continuous measurer")
        return {"id": instance.id, "predicted": m.value, "gold": instance.gold_aggregate}
    gold = select.gold_label(instance)
    if gold is None:
        raise DomainError(f"instance {instance.id!r} has no gold label")
    if m.kind is not Kind.BINARY:
        raise DomainError("calibration on a binary corpus needs a binary measurer")
    return {"id": instance.id, "predicted_label": m.label.value, "gold_label": gold.value}


def _permutation_payload(config, instance: Instance, generator, measurer) -> dict:
    study = perturb.run_permutation_study(
        instance,
        generator,
        measurer,
        n=config.n_permutations,
        seed=_instance_seed(config.seed, instance.id),
        separator=config.separator,
        max_input_tokens=config.max_input_tokens,
    )
    payload = {"id": instance.id, "n_permutations": study.n_permutations, "rouge1": list(study.rouge1)}
    if instance.task is Task.CONTINUOUS:
        payload["spread"] = list(study.spread)
    else:
        payload["p_fraction"] = study.p_fraction
        payload["entropy_bits"] = study.entropy_bits
    return payload


def _composition_payload(config, instance: Instance, generator, measurer) -> dict:
    study = perturb.run_composition_study(
        instance,
        generator,
        measurer,
        threshold=config.threshold,
        separator=config.separator,
        max_input_tokens=config.max_input_tokens,
    )
    return {
        "id": instance.id,
        "fitted_slope": study.fitted_slope,
        "fitted_intercept": study.fitted_intercept,
        "points": [dataclasses.asdict(p) for p in study.points],
    }


def _flip_payload(config, instance: Instance, generator, measurer) -> dict:
    flip = perturb.construct_significance_flip(instance)
    return {
        "id": instance.id,
        "removed_document_ids": list(flip.removed_document_ids),
        "before": dataclasses.asdict(flip.before),
        "after": dataclasses.asdict(flip.after),
    }


def _improve_payload(config, instance: Instance, generator, measurer) -> dict:
    target, _doc_measures = select.estimate_target(instance, measurer, config.policy)
    text = linearize(instance, config.separator, config.max_input_tokens).text
    if isinstance(generator, ConstrainedGenerator):
        generator = generator.for_target(target.value)
    candidates = generator(text)
    if not candidates.candidates:
        raise DomainError("empty candidate set")

    baseline = candidates.candidates[0]
    baseline_m = measurer.measure_text(baseline.text)
    payload: dict = {
        "id": instance.id,
        "baseline_text": baseline.text,
        "baseline_rouge1": rouge1_f(baseline.text, instance.reference_summary),
    }

    if config.policy.is_binary:
        outcome = select.select_agree_or_abstain(candidates, target.label, measurer)
        payload["target_label"] = target.label.value
        payload["baseline_label"] = baseline_m.label.value
        payload["candidate_labels"] = [
            m.label.value for m in outcome.provenance.candidate_measures
        ]
        gold = select.gold_label(instance)
        payload["gold_label"] = None if gold is None else gold.value
    else:
        outcome = select.select_nearest(candidates, target.value, measurer)
        if (
            config.policy.max_distance is not None
            and abs(outcome.candidate.measurement.value - target.value)
            > config.policy.max_distance
        ):
            outcome = select.SelectionOutcome(
                status="abstained",
                reason=f"nearest candidate farther than {config.policy.max_distance} from target",
                target=outcome.target,
                provenance=outcome.provenance,
            )
        payload["target_value"] = target.value
        payload["baseline_value"] = baseline_m.value
        payload["candidate_values"] = [
            m.value for m in outcome.provenance.candidate_measures
        ]
        payload["gold"] = instance.gold_aggregate

    if outcome.abstained:
        payload["status"] = "abstained"
        payload["reason"] = outcome.reason
    else:
        chosen = outcome.candidate
        payload["status"] = "selected"
        payload["selected_text"] = chosen.text
        payload["selected_rouge1"] = rouge1_f(chosen.text, instance.reference_summary)
        if config.policy.is_binary:
            payload["selected_label"] = chosen.measurement.label.value
        else:
            payload["selected_value"] = chosen.measurement.value
    return payload


_STUDY_FNS: dict[str, Callable] = {
    "calibration": _calibration_payload,
    "permutation": _permutation_payload,
    "composition": _composition_payload,
    "flip": _flip_payload,
    "improve": _improve_payload,
}


# --- aggregation --------------------------------------------------------------


def _paired_metrics(predictions: list[float], targets: list[float]) -> dict:
    # Degenerate series (constant predictions or targets) record null rather
    # than failing the whole run.
    series = PairedSeries.of(predictions, targets)
    out: dict = {"mse": mse(series)}
    for name, fn in (("r2", r_squared_centered), ("pcc", pearson)):
        try:
            out[name] = fn(series)
        except DomainError:
            out[name] = None
    return out


def _label_metrics(predicted: list[str], gold: list[str]) -> dict:
    f1, acc = macro_f1_accuracy([Label(p) for p in predicted], [Label(g) for g in gold])
    return {"macro_f1": f1, "accuracy": acc}


def _aggregate_calibration(task: Task, rows: list[dict]) -> dict:
    ok = [r for r in rows if "error" not in r]
    out: dict = {"n_instances": len(rows), "n_errors": len(rows) - len(ok)}
    if not ok:
        return out
    if task is Task.CONTINUOUS:
        out.update(_paired_metrics([r["predicted"] for r in ok], [r["gold"] for r in ok]))
    else:
        out.update(_label_metrics([r["predicted_label"] for r in ok], [r["gold_label"] for r in ok]))
    return out


def _aggregate_permutation(task: Task, rows: list[dict]) -> dict:
    ok = [r for r in rows if "error" not in r]
    out = {"n_instances": len(rows), "n_errors": len(rows) - len(ok)}
    if not ok:
        return out
    if task is Task.CONTINUOUS:
        spreads = [v for r in ok for v in r["spread"]]
        out["total_permutations"] = sum(r["n_permutations"] for r in ok)
        out["mean_abs_spread"] = sum(abs(v) for v in spreads) / len(spreads)
        out["max_abs_spread"] = max(abs(v) for v in spreads)
    else:
        entropies = [r["entropy_bits"] for r in ok]
        out["mean_entropy_bits"] = sum(entropies) / len(entropies)
        out["fraction_order_insensitive"] = sum(1 for e in entropies if e == 0.0) / len(entropies)
    return out


def _aggregate_composition(task: Task, rows: list[dict]) -> dict:
    ok = [r for r in rows if "error" not in r and "skipped" not in r]
    skipped = [r for r in rows if "skipped" in r]
    out = {
        "n_instances": len(rows),
        "n_skipped": len(skipped),
        "n_errors": len(rows) - len(ok) - len(skipped),
    }
    if not ok:
        return out
    out["mean_slope"] = sum(r["fitted_slope"] for r in ok) / len(ok)
    out["mean_intercept"] = sum(r["fitted_intercept"] for r in ok) / len(ok)
    xs = [p["input_aggregate"] for r in ok for p in r["points"]]
    ys = [p["output_measure"] for r in ok for p in r["points"]]
    if len(set(xs)) > 1:
        out["pooled"] = _paired_metrics(ys, xs)
    return out


def _aggregate_flip(task: Task, rows: list[dict]) -> dict:
    ok = [r for r in rows if "error" not in r]
    out = {"n_instances": len(rows), "n_not_flippable": len(rows) - len(ok), "n_flipped": len(ok)}
    if ok:
        out["mean_removed"] = sum(len(r["removed_document_ids"]) for r in ok) / len(ok)
    return out


def _aggregate_improve(task: Task, rows: list[dict]) -> dict:
    ok = [r for r in rows if "error" not in r]
    out: dict = {"n_instances": len(rows), "n_errors": len(rows) - len(ok)}
    if not ok:
        return out
    returned = [r for r in ok if r["status"] == "selected"]
    out["abstention_rate"] = (len(ok) - len(returned)) / len(ok)
    if task is Task.CONTINUOUS:
        with_gold = [r for r in ok if r.get("gold") is not None]
        if len(with_gold) >= 2:
            out["baseline"] = _paired_metrics(
                [r["baseline_value"] for r in with_gold], [r["gold"] for r in with_gold]
            )
        ret_gold = [r for r in returned if r.get("gold") is not None]
        if len(ret_gold) >= 2:
            out["selected"] = _paired_metrics(
                [r["selected_value"] for r in ret_gold], [r["gold"] for r in ret_gold]
            )
        if "baseline" in out and "selected" in out:
            out["delta"] = {
                k: out["selected"][k] - out["baseline"][k]
                for k in ("r2", "pcc")
                if out["selected"][k] is not None and out["baseline"][k] is not None
            }
    else:
        with_gold = [r for r in ok if r.get("gold_label") is not None]
        if with_gold:
            out["baseline"] = _label_metrics(
                [r["baseline_label"] for r in with_gold], [r["gold_label"] for r in with_gold]
            )
        ret_gold = [r for r in returned if r.get("gold_label") is not None]
        if ret_gold:
            # F1 over the set of returned results only.
            out["selected"] = _label_metrics(
                [r["selected_label"] for r in ret_gold], [r["gold_label"] for r in ret_gold]
            )
        if "baseline" in out and "selected" in out:
            out["delta"] = {
                k: out["selected"][k] - out["baseline"][k] for k in ("macro_f1", "accuracy")
            }
    out["mean_baseline_rouge1"] = sum(r["baseline_rouge1"] for r in ok) / len(ok)
    if returned:
        out["mean_selected_rouge1"] = sum(r["selected_rouge1"] for r in returned) / len(returned)
    return out


_AGGREGATE_FNS = {
    "calibration": _aggregate_calibration,
    "permutation": _aggregate_permutation,
    "composition": _aggregate_composition,
    "flip": _aggregate_flip,
    "improve": _aggregate_improve,
}


def run_experiment(config: ExperimentConfig) -> ExperimentRecord:
    """Run one study over the corpus, streaming per-instance records to disk.

    Component failures are recorded per instance (with id, stage, and cause)
    and never abort the run; only configuration and I/O problems do. Partial
    results stay valid on interruption.
    """
    config.validate()
    try:
        corpus = load_corpus(config.corpus_path, config.schema)
    except OSError as exc:
        raise ConfigError(f"cannot read corpus: {exc}") from exc
    measurer = build_measurer(config.measurer)
    generator = build_generator(config, corpus, measurer)
    study_fn = _STUDY_FNS[config.study]

    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    record = ExperimentRecord(config=config.snapshot())
    started = time.monotonic()

    def run_one(instance: Instance) -> dict:
        try:
            return study_fn(config, instance, generator, measurer)
        except StudySkipped as exc:
            return {"id": instance.id, "skipped": exc.reason}
        except Exception as exc:  # recorded, never fatal; interrupts propagate
            stage = getattr(exc, "stage", config.study)
            return {"id": instance.id, "error": {"stage": stage, "message": str(exc)}}

    path = out_dir / "results.jsonl"
    with open(path, "w", encoding="utf-8") as sink:
        def emit(obj: dict) -> None:
            sink.write(json.dumps(obj, sort_keys=True, ensure_ascii=False) + "\n")
            sink.flush()

        emit({"type": "config", "config": record.config})
        instances = sorted(corpus.instances, key=lambda i: i.id)
        if config.workers == 1:
            results: Iterable[dict] = map(run_one, instances)
            for row in results:
                record.instances.append(row)
                emit({"type": "instance", **row})
        else:
            with ThreadPoolExecutor(max_workers=config.workers) as pool:
                for row in pool.map(run_one, instances):
                    record.instances.append(row)
                    emit({"type": "instance", **row})
        record.aggregate = _AGGREGATE_FNS[config.study](corpus.task, record.instances)
        emit({"type": "aggregate", "metrics": record.aggregate})
        record.elapsed_seconds = time.monotonic() - started
        emit(
            {
                "type": "run_info",
                "elapsed_seconds": record.elapsed_seconds,
                "engine_version": record.engine_version,
            }
        )
    return record


def load_record(path: str | Path) -> ExperimentRecord:
    """Read a results.jsonl back into an ExperimentRecord (path may be the dir)."""
    p = Path(path)
    if p.is_dir():
        p = p / "results.jsonl"
    record = ExperimentRecord(config={})
    for line in p.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        obj = json.loads(line)
        kind = obj.get("type")
        if kind == "config":
            record.config = obj["config"]
        elif kind == "instance":
            record.instances.append({k: v for k, v in obj.items() if k != "type"})
        elif kind == "aggregate":
            record.aggregate = obj["metrics"]
        elif kind == "run_info":
            record.elapsed_seconds = obj.get("elapsed_seconds", 0.0)
            record.engine_version = obj.get("engine_version", "")
    return record


FIGURES = ("spread_hist", "entropy_hist", "sensitivity_scatter", "candidate_range_hist")


def emit_plot_data(record: ExperimentRecord, figure: str, path: str | Path, bins: int = 30) -> None:
    """Write the plain tabular data behind one figure kind (tab-separated,
    header row first)."""
    if figure not in FIGURES:
        raise DomainError(f"unknown figure {figure!r}; expected one of {FIGURES}")
    study = record.config.get("study")
    rows: list[tuple] = []
    if figure == "spread_hist":
        if study != "permutation":
            raise DomainError("spread_hist requires a permutation study record")
        values = [v for r in record.instances for v in r.get("spread", [])]
        if not values:
            raise DomainError("record holds no continuous spread data")
        header = ("bin_lo", "bin_hi", "count")
        rows = list(_histogram_rows(values, bins))
    elif figure == "entropy_hist":
        if study != "permutation":
            raise DomainError("entropy_hist requires a permutation study record")
        values = [r["entropy_bits"] for r in record.instances if r.get("entropy_bits") is not None]
        if not values:
            raise DomainError("record holds no entropy data")
        header = ("bin_lo", "bin_hi", "count")
        rows = list(_histogram_rows(values, bins, value_range=(0.0, 1.0)))
    elif figure == "sensitivity_scatter":
        if study != "composition":
            raise DomainError("sensitivity_scatter requires a composition study record")
        header = ("instance_id", "fraction_removed", "polarity_removed", "input_aggregate", "output_measure")
        for r in record.instances:
            for p in r.get("points", []):
                rows.append(
                    (r["id"], p["fraction_removed"], p["polarity_removed"],
                     p["input_aggregate"], p["output_measure"])
                )
    else:  # candidate_range_hist
        if study != "improve":
            raise DomainError("candidate_range_hist requires an improve study record")
        header = ("instance_id", "value")
        for r in record.instances:
            if "candidate_values" in r:
                values = r["candidate_values"]
                rows.append((r["id"], max(values) - min(values)))
            elif "candidate_labels" in r:
                labels = r["candidate_labels"]
                frac = sum(1 for lab in labels if lab == Label.SIGNIFICANT.value) / len(labels)
                rows.append((r["id"], frac))
    if not rows:
        raise DomainError(f"record holds no rows for figure {figure!r}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\t".join(header) + "\n")
        for row in rows:
            fh.write("\t".join(str(v) for v in row) + "\n")


def _histogram_rows(values, bins, value_range=None):
    from .metrics import histogram

    for lo, hi, count in histogram(values, bins, value_range):
        yield (lo, hi, count)
