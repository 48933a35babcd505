"""Line-oriented wire protocols for external measurers and generators.

Both protocols exchange one JSON object per line (UTF-8, newline-terminated),
identically over any of three transports:

  proc:<command line>   a child process on standard streams
  tcp://host:port       a raw socket
  http://... (or https) request lines as POST body, reply lines as response

Measurer protocol: request ``{"req_id", "text"}``; one reply per request,
``{"req_id", "kind", "value"|"label", "confidence"}``.

Generator protocol: request ``{"req_id", "conditioning", "n", "temperature",
"mode"}``; replies ``{"req_id", "seq_no", "text", "log_prob"?}`` terminated by
``{"req_id", "done": true}``.

Either protocol may reply ``{"req_id", "error": "..."}`` for a per-request
failure; the backend stays alive. Transport failures raise
:class:`RetryableError`; schema violations raise :class:`ProtocolError`.
"""

from __future__ import annotations

import json
import os
import selectors
import shlex
import socket
import socketserver
import subprocess
import sys
import urllib.error
import urllib.request
from typing import Iterable, Iterator

from .errors import ProtocolError, RetryableError


def encode_line(obj: dict) -> str:
    return json.dumps(obj, ensure_ascii=False, sort_keys=True)


def decode_line(line: str, endpoint: str) -> dict:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ProtocolError(f"{endpoint}: reply is not valid JSON: {line!r}") from exc
    if not isinstance(obj, dict):
        raise ProtocolError(f"{endpoint}: reply is not an object: {line!r}")
    return obj


class _ProcTransport:
    # Line reads go through our own buffer over the raw fd: select() cannot
    # see data a buffered reader has already swallowed, which would turn an
    # already-delivered reply into a spurious timeout.

    def __init__(self, command: str, timeout: float):
        self.name = f"proc:{command}"
        self.timeout = timeout
        try:
            self._proc = subprocess.Popen(
                shlex.split(command),
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
            )
        except OSError as exc:
            raise RetryableError(f"{self.name}: cannot start backend: {exc}") from exc
        self._buf = bytearray()
        self._sel = selectors.DefaultSelector()
        self._sel.register(self._proc.stdout.fileno(), selectors.EVENT_READ)

    def send(self, lines: list[str]) -> None:
        if self._proc.poll() is not None:
            raise RetryableError(f"{self.name}: backend exited with code {self._proc.returncode}")
        try:
            self._proc.stdin.write(
                ("".join(line + "\n" for line in lines)).encode("utf-8")
            )
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise RetryableError(f"{self.name}: backend pipe closed: {exc}") from exc

    def recv_line(self) -> str:
        fd = self._proc.stdout.fileno()
        while True:
            newline = self._buf.find(b"\n")
            if newline >= 0:
                line = self._buf[:newline].decode("utf-8")
                del self._buf[: newline + 1]
                return line
            if not self._sel.select(self.timeout):
                raise RetryableError(
                    f"{self.name}: timeout after {self.timeout}s waiting for reply"
                )
            chunk = os.read(fd, 65536)
            if chunk == b"":
                raise RetryableError(f"{self.name}: backend closed the stream mid-reply")
            self._buf.extend(chunk)

    def close(self) -> None:
        self._sel.close()
        if self._proc.poll() is None:
            self._proc.stdin.close()
            try:
                self._proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self._proc.kill()


class _TcpTransport:
    def __init__(self, endpoint: str, timeout: float):
        self.name = endpoint
        hostport = endpoint[len("tcp://"):]
        host, _, port = hostport.rpartition(":")
        try:
            self._sock = socket.create_connection((host, int(port)), timeout=timeout)
        except OSError as exc:
            raise RetryableError(f"{endpoint}: cannot connect: {exc}") from exc
        self._sock.settimeout(timeout)
        self._rfile = self._sock.makefile("r", encoding="utf-8", newline="\n")

    def send(self, lines: list[str]) -> None:
        try:
            self._sock.sendall(("".join(line + "\n" for line in lines)).encode("utf-8"))
        except OSError as exc:
            raise RetryableError(f"{self.name}: send failed: {exc}") from exc

    def recv_line(self) -> str:
        try:
            line = self._rfile.readline()
        except (socket.timeout, OSError) as exc:
            raise RetryableError(f"{self.name}: receive failed: {exc}") from exc
        if line == "":
            raise RetryableError(f"{self.name}: backend closed the connection mid-reply")
        return line.rstrip("\n")

    def close(self) -> None:
        self._rfile.close()
        self._sock.close()


class LineClient:
    """A client for either protocol over any supported transport.

    Requests within one call are pipelined (the configured number of lines is
    written before replies are read); replies are matched back by ``req_id``
    so backends may answer out of order.
    """

    def __init__(self, endpoint: str, timeout: float = 10.0):
        self.endpoint = endpoint
        self.timeout = timeout
        self._transport = None
        if not (endpoint.startswith("http://") or endpoint.startswith("https://")):
            if endpoint.startswith("proc:"):
                self._transport = _ProcTransport(endpoint[len("proc:"):], timeout)
            elif endpoint.startswith("tcp://"):
                self._transport = _TcpTransport(endpoint, timeout)
            else:
                raise ProtocolError(f"unsupported endpoint scheme: {endpoint!r}")

    def _http_roundtrip(self, lines: list[str]) -> list[str]:
        body = "".join(line + "\n" for line in lines).encode("utf-8")
        req = urllib.request.Request(
            self.endpoint, data=body, headers={"Content-Type": "application/x-ndjson"}
        )
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                payload = resp.read().decode("utf-8")
        except urllib.error.HTTPError as exc:
            if exc.code >= 500:
                raise RetryableError(f"{self.endpoint}: server error {exc.code}") from exc
            raise ProtocolError(f"{self.endpoint}: rejected request: {exc.code}") from exc
        except (urllib.error.URLError, TimeoutError, OSError) as exc:
            raise RetryableError(f"{self.endpoint}: unreachable: {exc}") from exc
        return [line for line in payload.splitlines() if line.strip()]

    def request_many(self, requests: list[dict], max_inflight: int = 4) -> dict[str, dict]:
        """Single-reply exchange: one reply object per request, keyed by req_id."""
        expected = {str(r["req_id"]) for r in requests}
        if len(expected) != len(requests):
            raise ProtocolError("req_ids within one batch must be unique")
        replies: dict[str, dict] = {}
        if self._transport is None:
            raw = self._http_roundtrip([encode_line(r) for r in requests])
            for line in raw:
                obj = decode_line(line, self.endpoint)
                replies[str(obj.get("req_id"))] = obj
        else:
            pending = list(requests)
            inflight: set[str] = set()
            while pending or inflight:
                while pending and len(inflight) < max(1, max_inflight):
                    req = pending.pop(0)
                    self._transport.send([encode_line(req)])
                    inflight.add(str(req["req_id"]))
                obj = decode_line(self._transport.recv_line(), self.endpoint)
                rid = str(obj.get("req_id"))
                if rid not in inflight:
                    raise ProtocolError(f"{self.endpoint}: reply for unknown req_id {rid!r}")
                inflight.discard(rid)
                replies[rid] = obj
        missing = expected - set(replies)
        if missing:
            raise ProtocolError(f"{self.endpoint}: no reply for req_ids {sorted(missing)}")
        return replies

    def request_stream(self, request: dict) -> list[dict]:
        """Multi-reply exchange: collect replies until the done marker."""
        rid = str(request["req_id"])
        if self._transport is None:
            raw = self._http_roundtrip([encode_line(request)])
            objs = [decode_line(line, self.endpoint) for line in raw]
        else:
            self._transport.send([encode_line(request)])
            objs = []
            while True:
                obj = decode_line(self._transport.recv_line(), self.endpoint)
                objs.append(obj)
                if obj.get("done"):
                    break
        out: list[dict] = []
        done = False
        for obj in objs:
            if str(obj.get("req_id")) != rid:
                raise ProtocolError(f"{self.endpoint}: reply for unknown req_id {obj.get('req_id')!r}")
            if obj.get("done"):
                done = True
                break
            out.append(obj)
        if not done:
            raise ProtocolError(f"{self.endpoint}: stream ended without a done marker")
        return out

    def close(self) -> None:
        if self._transport is not None:
            self._transport.close()


def parse_measurement_reply(obj: dict, measurement_cls, kind_cls, label_cls):
    """Validate a measurer reply object and build a Measurement from it."""
    if "error" in obj:
        raise ProtocolError(f"backend error: {obj['error']}")
    kind = obj.get("kind")
    try:
        if kind == "continuous":
            return measurement_cls(
                kind=kind_cls.CONTINUOUS,
                value=float(obj["value"]),
                confidence=obj.get("confidence"),
            )
        if kind == "binary":
            return measurement_cls(
                kind=kind_cls.BINARY,
                label=label_cls(obj["label"]),
                confidence=float(obj.get("confidence", 1.0)),
            )
    except (KeyError, TypeError, ValueError) as exc:
        raise ProtocolError(f"malformed measurement reply {obj!r}: {exc}") from exc
    raise ProtocolError(f"malformed measurement reply {obj!r}: bad kind")


# --- Echo backend -----------------------------------------------------------
#
# The echo backend is the deterministic test double both for the builtin
# serve-echo CLI verb and for any external adapter's echo mode: candidate k
# is "echo {k}: {conditioning}" with log_prob -k, and the echoed measurement
# value is (sum of UTF-8 bytes of the text) % 1000 / 999.


def echo_candidates(conditioning: str, n: int) -> list[tuple[str, float]]:
    return [(f"echo {k}: {conditioning}", -float(k)) for k in range(n)]


def echo_measure_value(text: str) -> float:
    return (sum(text.encode("utf-8")) % 1000) / 999.0


def echo_replies(request: dict) -> list[dict]:
    """Compute the echo backend's reply lines for one request object."""
    rid = request.get("req_id")
    if rid is None:
        return [{"req_id": None, "error": "missing req_id"}]
    if "text" in request:  # measurer protocol
        text = request["text"]
        if not isinstance(text, str) or not text.strip():
            return [{"req_id": rid, "error": "empty text"}]
        return [
            {
                "req_id": rid,
                "kind": "continuous",
                "value": echo_measure_value(text),
                "confidence": 1.0,
            }
        ]
    if "conditioning" in request:  # generator protocol
        try:
            n = int(request.get("n", 1))
        except (TypeError, ValueError):
            return [{"req_id": rid, "error": "n must be an integer"}]
        if n < 1:
            return [{"req_id": rid, "error": "n must be positive"}]
        lines = [
            {"req_id": rid, "seq_no": k, "text": text, "log_prob": lp}
            for k, (text, lp) in enumerate(echo_candidates(str(request["conditioning"]), n))
        ]
        lines.append({"req_id": rid, "done": True})
        return lines
    return [{"req_id": rid, "error": "request is neither a measure nor a generate request"}]


def _serve_lines(requests: Iterable[str]) -> Iterator[str]:
    for raw in requests:
        line = raw.strip()
        if not line:
            continue
        try:
            request = json.loads(line)
        except json.JSONDecodeError:
            yield encode_line({"req_id": None, "error": "request is not valid JSON"})
            continue
        for reply in echo_replies(request):
            yield encode_line(reply)


def serve_echo_stdio() -> None:
    """Run the echo backend over standard streams until stdin closes."""
    for out in _serve_lines(sys.stdin):
        sys.stdout.write(out + "\n")
        sys.stdout.flush()


class _EchoTCPHandler(socketserver.StreamRequestHandler):
    def handle(self):
        reader = (raw.decode("utf-8") for raw in self.rfile)
        for out in _serve_lines(reader):
            self.wfile.write((out + "\n").encode("utf-8"))
            self.wfile.flush()


def serve_echo_tcp(host: str, port: int):
    """Create (not start) a TCP echo server; caller runs serve_forever()."""
    server = socketserver.ThreadingTCPServer((host, port), _EchoTCPHandler)
    server.daemon_threads = True
    return server
