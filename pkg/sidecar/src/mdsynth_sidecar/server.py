"""The serve loop: one JSON object per line in, reply lines out.

Per-request failures produce ``{"req_id", "error"}`` replies and the process
stays alive; replies within one request's stream are emitted in order, and
req_ids are echoed verbatim. An optional transcript records traffic
(``> request`` / ``< reply`` lines) for byte-identical replay checks.
"""

from __future__ import annotations

import json
import socketserver
import sys
from pathlib import Path
from typing import Iterable, Iterator

from .config import AdapterConfig


def encode(obj: dict) -> str:
    return json.dumps(obj, ensure_ascii=False, sort_keys=True)


def handle_request(obj: dict, backend, config: AdapterConfig) -> list[dict]:
    rid = obj.get("req_id")
    if rid is None:
        return [{"req_id": None, "error": "missing req_id"}]
    try:
        if config.role == "measurer":
            text = obj.get("text")
            if not isinstance(text, str) or not text.strip():
                return [{"req_id": rid, "error": "empty text"}]
            return [{"req_id": rid, **backend.measure(text)}]
        conditioning = obj.get("conditioning")
        if not isinstance(conditioning, str):
            return [{"req_id": rid, "error": "missing conditioning"}]
        n = int(obj.get("n", config.n))
        if n < 1:
            return [{"req_id": rid, "error": "n must be positive"}]
        temperature = float(obj.get("temperature", config.temperature))
        mode = str(obj.get("mode", "sample"))
        outputs = backend.generate(conditioning, n, temperature, mode)
        replies = []
        for seq_no, (text, log_prob) in enumerate(outputs):
            reply = {"req_id": rid, "seq_no": seq_no, "text": text}
            if log_prob is not None:
                reply["log_prob"] = log_prob
            replies.append(reply)
        replies.append({"req_id": rid, "done": True})
        return replies
    except Exception as exc:
        return [{"req_id": rid, "error": str(exc)}]


class Transcript:
    def __init__(self, path: str | Path | None):
        self._fh = open(path, "a", encoding="utf-8") if path else None

    def request(self, line: str) -> None:
        if self._fh:
            self._fh.write("> " + line + "\n")
            self._fh.flush()

    def reply(self, line: str) -> None:
        if self._fh:
            self._fh.write("< " + line + "\n")
            self._fh.flush()

    def close(self) -> None:
        if self._fh:
            self._fh.close()


def serve_lines(
    requests: Iterable[str], backend, config: AdapterConfig, transcript: Transcript
) -> Iterator[str]:
    for raw in requests:
        line = raw.strip()
        if not line:
            continue
        transcript.request(line)
        try:
            obj = json.loads(line)
            replies = handle_request(obj, backend, config)
        except json.JSONDecodeError:
            replies = [{"req_id": None, "error": "request is not valid JSON"}]
        for reply in replies:
            out = encode(reply)
            transcript.reply(out)
            yield out


def serve_stdio(backend, config: AdapterConfig, transcript: Transcript) -> None:
    for out in serve_lines(sys.stdin, backend, config, transcript):
        sys.stdout.write(out + "\n")
        sys.stdout.flush()


def serve_tcp(backend, config: AdapterConfig, transcript: Transcript, host: str, port: int):
    class Handler(socketserver.StreamRequestHandler):
        def handle(self):
            reader = (raw.decode("utf-8") for raw in self.rfile)
            for out in serve_lines(reader, backend, config, transcript):
                self.wfile.write((out + "\n").encode("utf-8"))
                self.wfile.flush()

    server = socketserver.ThreadingTCPServer((host, port), Handler)
    server.daemon_threads = True
    return server


def replay_transcript(path: str | Path, backend, config: AdapterConfig) -> tuple[list[str], list[str]]:
    """Re-run a transcript's requests; return (recorded, replayed) reply lines."""
    recorded_requests: list[str] = []
    recorded_replies: list[str] = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.startswith("> "):
            recorded_requests.append(line[2:])
        elif line.startswith("< "):
            recorded_replies.append(line[2:])
    replayed = list(serve_lines(recorded_requests, backend, config, Transcript(None)))
    return recorded_replies, replayed
