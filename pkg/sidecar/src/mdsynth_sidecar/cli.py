"""mdsynth-sidecar entry point.

``serve`` runs one adapter as a long-lived process speaking the measurer or
generator line protocol over standard streams (default) or TCP (--port).
``replay`` re-runs a recorded transcript and verifies byte-identical replies.

Exit codes: 0 clean shutdown, 1 bad configuration, 3 model load failure,
4 transcript replay mismatch.
"""

from __future__ import annotations

import argparse
import sys

from . import server
from .backends import BackendLoadError, build_backend
from .config import AdapterConfig, ConfigurationError


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mdsynth-sidecar", description=__doc__)
    sub = parser.add_subparsers(dest="verb", required=True)

    serve = sub.add_parser("serve", help="run an adapter")
    serve.add_argument("--role", required=True, choices=("generator", "measurer"))
    serve.add_argument("--backend", default="echo",
                       choices=("echo", "hf_generator", "hf_measurer", "chat"))
    serve.add_argument("--task", default="continuous", choices=("continuous", "binary"))
    serve.add_argument("--model")
    serve.add_argument("--api-base", dest="api_base")
    serve.add_argument("--api-key-env", dest="api_key_env", default="SIDECAR_API_KEY")
    serve.add_argument("--prompt-template", dest="prompt_template")
    serve.add_argument("--n", type=int, default=5)
    serve.add_argument("--temperature", type=float, default=0.6)
    serve.add_argument("--max-tokens", type=int, dest="max_tokens", default=128)
    serve.add_argument("--port", type=int, help="serve over TCP instead of standard streams")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--transcript", help="record traffic to this file")

    replay = sub.add_parser("replay", help="re-run a transcript and verify replies")
    replay.add_argument("--role", required=True, choices=("generator", "measurer"))
    replay.add_argument("--backend", default="echo",
                        choices=("echo", "hf_generator", "hf_measurer", "chat"))
    replay.add_argument("--task", default="continuous", choices=("continuous", "binary"))
    replay.add_argument("--transcript", required=True)
    return parser


def _config_from(args: argparse.Namespace) -> AdapterConfig:
    return AdapterConfig(
        role=args.role,
        backend=args.backend,
        task=args.task,
        model=getattr(args, "model", None),
        api_base=getattr(args, "api_base", None),
        api_key_env=getattr(args, "api_key_env", "SIDECAR_API_KEY"),
        prompt_template=getattr(args, "prompt_template", None),
        n=getattr(args, "n", 5),
        temperature=getattr(args, "temperature", 0.6),
        max_tokens=getattr(args, "max_tokens", 128),
    )


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = _config_from(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    try:
        backend = build_backend(config)
    except BackendLoadError as exc:
        print(f"model load failure: {exc}", file=sys.stderr)
        return 3

    if args.verb == "replay":
        recorded, replayed = server.replay_transcript(args.transcript, backend, config)
        if recorded != replayed:
            print("transcript replay mismatch", file=sys.stderr)
            return 4
        print(f"transcript replays byte-identically ({len(recorded)} replies)")
        return 0

    transcript = server.Transcript(args.transcript)
    try:
        if args.port is not None:
            tcp = server.serve_tcp(backend, config, transcript, args.host, args.port)
            print(
                f"{config.backend} {config.role} listening on "
                f"tcp://{args.host}:{tcp.server_address[1]}",
                file=sys.stderr,
            )
            try:
                tcp.serve_forever()
            except KeyboardInterrupt:
                pass
            finally:
                tcp.server_close()
        else:
            server.serve_stdio(backend, config, transcript)
    finally:
        transcript.close()
    return 0


if __name__ == "__main__":
    sys.exit(main())
