"""Command-line surface.

Verbs: calibrate, permute, compose, flip, improve (one per study kind),
plotdata (tabular figure data from a saved record), and serve-echo (the
deterministic test backend speaking both line protocols).

Every study verb accepts ``--config FILE`` (JSON mirroring the experiment
config schema); explicit flags override file values. The only environment
overrides are MDSYNTH_GENERATOR_ENDPOINT and MDSYNTH_MEASURER_ENDPOINT.

Exit codes: 0 success, 1 configuration error, 2 runtime failure (partial
results are preserved).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import protocol, runner
from .decode import DecodeConfig
from .errors import DomainError, EngineError
from .measure import MeasurerSpec
from .runner import ConfigError, ExperimentConfig, GeneratorConfig
from .select import PolicyKind, SelectionPolicy

_VERB_TO_STUDY = {
    "calibrate": "calibration",
    "permute": "permutation",
    "compose": "composition",
    "flip": "flip",
    "improve": "improve",
}


def _add_study_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file; flags override its values")
    p.add_argument("--corpus", help="corpus file path")
    p.add_argument("--schema", choices=("movies", "trials"))
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--separator")
    p.add_argument("--max-input-tokens", type=int, dest="max_input_tokens")
    p.add_argument("--n-permutations", type=int, dest="n_permutations")
    p.add_argument("--threshold", type=float)
    p.add_argument("--generator", choices=("toy", "external", "echo"), dest="generator_kind")
    p.add_argument("--order", type=int)
    p.add_argument("--smoothing", type=float)
    p.add_argument("--train-path", dest="train_path")
    p.add_argument("--generator-endpoint", dest="generator_endpoint")
    p.add_argument("--sample-n", type=int, dest="sample_n")
    p.add_argument("--temperature", type=float)
    p.add_argument(
        "--measurer",
        choices=("builtin_lexicon", "builtin_keyword", "external"),
        dest="measurer_kind",
    )
    p.add_argument("--measurer-endpoint", dest="measurer_endpoint")
    p.add_argument("--lexicon-path", dest="lexicon_path")
    p.add_argument("--mode", choices=("beam", "diverse_beam", "constrained_beam"))
    p.add_argument("--beam-width", type=int, dest="beam_width")
    p.add_argument("--groups", type=int)
    p.add_argument("--beams-per-group", type=int, dest="beams_per_group")
    p.add_argument("--diversity-lambda", type=float, dest="diversity_lambda")
    p.add_argument("--max-tokens", type=int, dest="max_tokens")
    p.add_argument("--min-tokens", type=int, dest="min_tokens")
    p.add_argument("--epsilon", type=float)
    p.add_argument(
        "--policy",
        choices=[k.value for k in PolicyKind],
        dest="policy_kind",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mdsynth", description=__doc__)
    sub = parser.add_subparsers(dest="verb", required=True)
    for verb in _VERB_TO_STUDY:
        _add_study_flags(sub.add_parser(verb, help=f"run the {verb} study"))
    plot = sub.add_parser("plotdata", help="emit tabular data for one figure")
    plot.add_argument("--record", required=True, help="results.jsonl file or its directory")
    plot.add_argument("--figure", required=True, choices=runner.FIGURES)
    plot.add_argument("--out", required=True)
    plot.add_argument("--bins", type=int, default=30)
    echo = sub.add_parser("serve-echo", help="run the echo test backend")
    echo.add_argument("--port", type=int, help="serve over TCP instead of standard streams")
    echo.add_argument("--host", default="127.0.0.1")
    return parser


def _merge(file_value, flag_value, default):
    if flag_value is not None:
        return flag_value
    if file_value is not None:
        return file_value
    return default


def build_config(args: argparse.Namespace) -> ExperimentConfig:
    file_cfg: dict = {}
    if args.config:
        try:
            file_cfg = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config file: {exc}") from exc
    gen_cfg = file_cfg.get("generator", {})
    meas_cfg = file_cfg.get("measurer", {})
    dec_cfg = file_cfg.get("decode", {})
    pol_cfg = file_cfg.get("policy", {})

    corpus_path = _merge(file_cfg.get("corpus_path"), args.corpus, None)
    schema = _merge(file_cfg.get("schema"), args.schema, None)
    output_dir = _merge(file_cfg.get("output_dir"), args.out, None)
    if not corpus_path or not schema or not output_dir:
        raise ConfigError("corpus path, schema, and output directory are required")

    generator_endpoint = _merge(
        gen_cfg.get("endpoint"),
        args.generator_endpoint,
        None,
    )
    generator_endpoint = os.environ.get("MDSYNTH_GENERATOR_ENDPOINT", generator_endpoint)
    measurer_endpoint = _merge(meas_cfg.get("endpoint"), args.measurer_endpoint, None)
    measurer_endpoint = os.environ.get("MDSYNTH_MEASURER_ENDPOINT", measurer_endpoint)

    default_measurer = "builtin_lexicon" if schema == "movies" else "builtin_keyword"
    try:
        generator = GeneratorConfig(
            kind=_merge(gen_cfg.get("kind"), args.generator_kind, "toy"),
            order=_merge(gen_cfg.get("order"), args.order, 2),
            smoothing=_merge(gen_cfg.get("smoothing"), args.smoothing, 0.1),
            train_path=_merge(gen_cfg.get("train_path"), args.train_path, None),
            endpoint=generator_endpoint,
            n=_merge(gen_cfg.get("n"), args.sample_n, 5),
            temperature=_merge(gen_cfg.get("temperature"), args.temperature, 0.6),
        )
        measurer = MeasurerSpec(
            kind=_merge(meas_cfg.get("kind"), args.measurer_kind, default_measurer),
            endpoint=measurer_endpoint,
            lexicon_path=_merge(meas_cfg.get("lexicon_path"), args.lexicon_path, None),
        )
        default_max_tokens = 64 if schema == "movies" else 256
        decode = DecodeConfig(
            mode=_merge(dec_cfg.get("mode"), args.mode, "diverse_beam"),
            beam_width=_merge(dec_cfg.get("beam_width"), args.beam_width, 5),
            groups=_merge(dec_cfg.get("groups"), args.groups, 5),
            beams_per_group=_merge(dec_cfg.get("beams_per_group"), args.beams_per_group, 1),
            diversity_lambda=_merge(
                dec_cfg.get("diversity_lambda"), args.diversity_lambda, 0.5
            ),
            max_tokens=_merge(dec_cfg.get("max_tokens"), args.max_tokens, default_max_tokens),
            min_tokens=_merge(dec_cfg.get("min_tokens"), args.min_tokens, 1),
            epsilon=_merge(dec_cfg.get("epsilon"), args.epsilon, None),
        )
        default_policy = (
            PolicyKind.NEAREST_CONTINUOUS if schema == "movies" else PolicyKind.AGREE_OR_ABSTAIN
        )
        threshold = _merge(file_cfg.get("threshold"), args.threshold, 0.5)
        policy = SelectionPolicy(
            kind=PolicyKind(_merge(pol_cfg.get("kind"), args.policy_kind, default_policy)),
            threshold=threshold,
            max_distance=pol_cfg.get("max_distance"),
            oracle_source=pol_cfg.get("oracle_source", "gold"),
        )
        return ExperimentConfig(
            corpus_path=corpus_path,
            schema=schema,
            study=_VERB_TO_STUDY[args.verb],
            output_dir=output_dir,
            generator=generator,
            measurer=measurer,
            decode=decode,
            policy=policy,
            seed=_merge(file_cfg.get("seed"), args.seed, 0),
            workers=_merge(file_cfg.get("workers"), args.workers, 1),
            separator=_merge(file_cfg.get("separator"), args.separator, "<doc>"),
            max_input_tokens=_merge(
                file_cfg.get("max_input_tokens"), args.max_input_tokens, None
            ),
            n_permutations=_merge(file_cfg.get("n_permutations"), args.n_permutations, 100),
            threshold=threshold,
        )
    except DomainError as exc:
        raise ConfigError(str(exc)) from exc


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.verb == "serve-echo":
        if args.port is not None:
            server = protocol.serve_echo_tcp(args.host, args.port)
            print(f"echo backend listening on tcp://{args.host}:{server.server_address[1]}", file=sys.stderr)
            try:
                server.serve_forever()
            except KeyboardInterrupt:
                pass
            finally:
                server.server_close()
        else:
            protocol.serve_echo_stdio()
        return 0
    if args.verb == "plotdata":
        try:
            record = runner.load_record(args.record)
        except OSError as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return 1
        try:
            runner.emit_plot_data(record, args.figure, args.out, bins=args.bins)
        except DomainError as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return 1
        return 0
    try:
        config = build_config(args)
        config.validate()
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    try:
        record = runner.run_experiment(config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (EngineError, OSError, KeyboardInterrupt) as exc:
        print(f"runtime failure (partial results preserved): {exc}", file=sys.stderr)
        return 2
    n_err = sum(1 for r in record.instances if "error" in r)
    print(
        f"{config.study}: {len(record.instances)} instances "
        f"({n_err} errors) -> {config.output_dir}/results.jsonl"
    )
    return 0


if __name__ == "__main__":
    sys.exit(main())
