"""Stage endpoints: the built-in mock responder and external transports.

The mock responder answers every protocol request from the pinned
deterministic generators, so a simulation routed through it (over stdio or
TCP) produces byte-identical traces to the fully in-process path.  The
same responder backs the ``serve-mock`` CLI command, which is the
reference peer for conformance-checking third-party stage servers.
"""

from __future__ import annotations

import os
import select
import shlex
import socket
import subprocess
import sys
import time
from dataclasses import dataclass, field

from ..core import (
    EncodingError,
    ProtocolOrderError,
    StageTimeoutError,
)
from ..duplex import (
    DecisionKind,
    DuplexDecision,
    PredictorContext,
    ThresholdParams,
    threshold_predictor,
)
from .wire import (
    PROTOCOL_VERSION,
    WireMessage,
    decode_message,
    encode_message,
    speech_token_ids,
    text_token_ids,
)

ALL_ROLES = (
    "voice_encoder",
    "text_llm",
    "voice_token_lm",
    "token2wav",
    "duplex_predictor",
)

DEFAULT_DEADLINE_MS = 5000


# ---------------------------------------------------------------------------
# Mock responder (server side)

@dataclass
class _SessionConfig:
    seed: int = 0
    codebook_size: int = 1024
    text_vocab: int = 32000
    predictor: dict = field(default_factory=dict)


class MockStageResponder:
    """Pure line-in, lines-out protocol server for all five stage roles.

    Malformed lines get an ``error`` reply and service continues; inbound
    seq regressions are reported but do not kill the connection.  Replies
    carry the request's session with a per-session strictly increasing seq.
    """

    def __init__(self, roles: tuple[str, ...] = ALL_ROLES, seed: int = 0) -> None:
        self.roles = tuple(roles)
        self.default_seed = seed
        self._configs: dict[str, _SessionConfig] = {}
        self._out_seq: dict[str, int] = {}
        self._in_seq: dict[str, int] = {}

    def _next_seq(self, session: str) -> int:
        seq = self._out_seq.get(session, 0)
        self._out_seq[session] = seq + 1
        return seq

    def _reply(self, session: str, mtype: str, payload: dict) -> str:
        msg = WireMessage(mtype, session, self._next_seq(session), payload)
        return encode_message(msg).decode("utf-8").rstrip("\n")

    def handle_line(self, line: str) -> list[str]:
        line = line.strip("\r\n")
        if not line:
            return []
        try:
            msg = decode_message(line)
        except EncodingError as exc:
            return [self._reply("", "error", {"reason": "parse", "detail": str(exc)})]

        last = self._in_seq.get(msg.session)
        if last is not None and msg.seq <= last:
            # keep the high-water mark; duplicates stay rejected
            return [
                self._reply(
                    msg.session,
                    "error",
                    {"reason": "seq_order", "got": msg.seq, "last": last},
                )
            ]
        self._in_seq[msg.session] = msg.seq

        handler = getattr(self, f"_on_{msg.type}", None)
        if handler is None:
            return [
                self._reply(
                    msg.session, "error", {"reason": "unsupported", "type": msg.type}
                )
            ]
        try:
            return handler(msg)
        except (KeyError, TypeError, ValueError) as exc:
            return [
                self._reply(
                    msg.session, "error", {"reason": "bad_payload", "detail": str(exc)}
                )
            ]

    def _config(self, session: str) -> _SessionConfig:
        return self._configs.setdefault(session, _SessionConfig(seed=self.default_seed))

    def _on_hello(self, msg: WireMessage) -> list[str]:
        return [
            self._reply(
                msg.session,
                "hello",
                {"protocol_version": PROTOCOL_VERSION, "roles": list(self.roles)},
            )
        ]

    def _on_configure(self, msg: WireMessage) -> list[str]:
        cfg = self._config(msg.session)
        p = msg.payload
        cfg.seed = int(p.get("seed", cfg.seed))
        cfg.codebook_size = int(p.get("codebook_size", cfg.codebook_size))
        cfg.text_vocab = int(p.get("text_vocab", cfg.text_vocab))
        cfg.predictor = dict(p.get("predictor", cfg.predictor))
        return [self._reply(msg.session, "ack", {})]

    def _on_text_batch(self, msg: WireMessage) -> list[str]:
        cfg = self._config(msg.session)
        p = msg.payload
        tokens = text_token_ids(
            cfg.seed,
            msg.session,
            int(p["turn"]),
            int(p["start"]),
            int(p["count"]),
            cfg.text_vocab,
        )
        return [
            self._reply(
                msg.session,
                "text_batch",
                {"turn": int(p["turn"]), "start": int(p["start"]), "tokens": tokens},
            )
        ]

    def _on_speech_batch(self, msg: WireMessage) -> list[str]:
        cfg = self._config(msg.session)
        p = msg.payload
        if "tokens" in p:  # token2wav direction: tokens delivered, just ack
            return [self._reply(msg.session, "ack", {})]
        tokens = speech_token_ids(
            cfg.seed,
            msg.session,
            int(p["turn"]),
            int(p["start"]),
            int(p["count"]),
            cfg.codebook_size,
        )
        return [
            self._reply(
                msg.session,
                "speech_batch",
                {"turn": int(p["turn"]), "start": int(p["start"]), "tokens": tokens},
            )
        ]

    def _on_marker(self, msg: WireMessage) -> list[str]:
        return [self._reply(msg.session, "ack", {})]

    def _on_predict_request(self, msg: WireMessage) -> list[str]:
        cfg = self._config(msg.session)
        p = msg.payload
        chunk = int(p["chunk"])
        decision = _decide(cfg.predictor, chunk, p)
        return [
            self._reply(
                msg.session,
                "predict_response",
                {
                    "chunk": chunk,
                    "decision": decision.kind.value,
                    "confidence": decision.confidence,
                },
            )
        ]

    def _on_ack(self, msg: WireMessage) -> list[str]:
        return []

    def _on_error(self, msg: WireMessage) -> list[str]:
        return []

    def _on_predict_response(self, msg: WireMessage) -> list[str]:
        return [
            self._reply(msg.session, "error", {"reason": "unsupported", "type": msg.type})
        ]


def _decide(predictor: dict, chunk: int, payload: dict) -> DuplexDecision:
    kind = predictor.get("kind")
    if kind == "scripted":
        for entry in predictor.get("script", []):
            if int(entry[0]) == chunk:
                decision = DecisionKind(entry[1])
                confidence = float(entry[2]) if len(entry) > 2 else 1.0
                return DuplexDecision(decision, confidence)
        return DuplexDecision(DecisionKind.NO_ACTION, 0.0)
    if kind == "threshold":
        ctx = PredictorContext(
            feature_vector=tuple(float(x) for x in payload.get("feature", [])),
            user_speaking=bool(payload.get("user_speaking", False)),
            assistant_speaking=bool(payload.get("assistant_speaking", False)),
            chunk_index=chunk,
            user_just_stopped=bool(payload.get("user_just_stopped", False)),
        )
        params = ThresholdParams(
            take_turn_threshold=float(predictor.get("take_turn_threshold", 0.75)),
            halt_threshold=float(predictor.get("halt_threshold", 0.55)),
            energy_index=int(predictor.get("energy_index", 0)),
        )
        return threshold_predictor(ctx, params)
    return DuplexDecision(DecisionKind.NO_ACTION, 0.0)


# ---------------------------------------------------------------------------
# Serving loops

def serve_lines(responder: MockStageResponder, reader, writer) -> None:
    """Run the responder over a pair of text streams until EOF."""
    for line in reader:
        for reply in responder.handle_line(line):
            writer.write(reply + "\n")
        writer.flush()


def serve_stdio(responder: MockStageResponder) -> None:
    serve_lines(responder, sys.stdin, sys.stdout)


def serve_tcp(responder_factory, host: str, port: int, once: bool = False) -> None:
    """Accept clients sequentially; each client gets a fresh responder."""
    with socket.create_server((host, port)) as server:
        while True:
            conn, _ = server.accept()
            with conn:
                reader = conn.makefile("r", encoding="utf-8", newline="\n")
                writer = conn.makefile("w", encoding="utf-8", newline="\n")
                serve_lines(responder_factory(), reader, writer)
            if once:
                return


# ---------------------------------------------------------------------------
# Client-side transports

class ProcessTransport:
    """Byte-stream transport over a child process's stdin/stdout."""

    def __init__(self, argv: list[str] | str) -> None:
        if isinstance(argv, str):
            argv = shlex.split(argv)
        self.argv = list(argv)
        self.proc = subprocess.Popen(
            self.argv,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            stderr=None,
        )
        self._buf = b""

    def send_line(self, data: bytes) -> None:
        assert self.proc.stdin is not None
        try:
            self.proc.stdin.write(data)
            self.proc.stdin.flush()
        except (BrokenPipeError, ValueError) as exc:
            raise StageTimeoutError(f"stage process is gone: {exc}") from exc

    def recv_line(self, deadline_ms: int) -> bytes:
        assert self.proc.stdout is not None
        fd = self.proc.stdout.fileno()
        deadline = time.monotonic() + deadline_ms / 1000.0
        while b"\n" not in self._buf:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise StageTimeoutError(
                    f"no reply from stage within {deadline_ms} ms"
                )
            ready, _, _ = select.select([fd], [], [], remaining)
            if not ready:
                continue
            chunk = os.read(fd, 65536)
            if not chunk:
                raise StageTimeoutError("stage process closed its output")
            self._buf += chunk
        line, self._buf = self._buf.split(b"\n", 1)
        return line

    def close(self) -> None:
        if self.proc.stdin:
            try:
                self.proc.stdin.close()
            except OSError:
                pass
        try:
            self.proc.wait(timeout=5)
        except subprocess.TimeoutExpired:
            self.proc.kill()
            self.proc.wait()


class TcpTransport:
    """Byte-stream transport over a TCP connection."""

    def __init__(self, host: str, port: int, connect_timeout_s: float = 5.0) -> None:
        try:
            self.sock = socket.create_connection((host, port), timeout=connect_timeout_s)
        except OSError as exc:
            raise StageTimeoutError(f"cannot reach stage at {host}:{port}: {exc}") from exc
        self._buf = b""

    def send_line(self, data: bytes) -> None:
        try:
            self.sock.sendall(data)
        except OSError as exc:
            raise StageTimeoutError(f"stage connection lost: {exc}") from exc

    def recv_line(self, deadline_ms: int) -> bytes:
        deadline = time.monotonic() + deadline_ms / 1000.0
        while b"\n" not in self._buf:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise StageTimeoutError(f"no reply from stage within {deadline_ms} ms")
            self.sock.settimeout(remaining)
            try:
                chunk = self.sock.recv(65536)
            except socket.timeout:
                continue
            except OSError as exc:
                raise StageTimeoutError(f"stage connection lost: {exc}") from exc
            if not chunk:
                raise StageTimeoutError("stage closed the connection")
            self._buf += chunk
        line, self._buf = self._buf.split(b"\n", 1)
        return line

    def close(self) -> None:
        try:
            self.sock.close()
        except OSError:
            pass


class StageChannel:
    """Engine-side request/reply channel with per-session seq bookkeeping.

    Outbound seq increases strictly per session; inbound replies must do
    the same or the channel raises, which the simulator converts into a
    single protocol-error trace event for the session.
    """

    def __init__(self, transport, deadline_ms: int = DEFAULT_DEADLINE_MS) -> None:
        self.transport = transport
        self.deadline_ms = deadline_ms
        self._out_seq: dict[str, int] = {}
        self._in_seq: dict[str, int] = {}

    def send(self, mtype: str, session: str, payload: dict) -> WireMessage:
        seq = self._out_seq.get(session, 0)
        self._out_seq[session] = seq + 1
        msg = WireMessage(mtype, session, seq, payload)
        self.transport.send_line(encode_message(msg))
        return msg

    def recv(self) -> WireMessage:
        line = self.transport.recv_line(self.deadline_ms)
        msg = decode_message(line)
        last = self._in_seq.get(msg.session)
        if last is not None and msg.seq <= last:
            raise ProtocolOrderError(
                f"stage reply seq {msg.seq} not above {last} for session {msg.session!r}"
            )
        self._in_seq[msg.session] = msg.seq
        return msg

    def request(self, mtype: str, session: str, payload: dict) -> WireMessage:
        self.send(mtype, session, payload)
        reply = self.recv()
        if reply.type == "error":
            raise ProtocolOrderError(f"stage error reply: {reply.payload}")
        if reply.session != session:
            raise ProtocolOrderError(
                f"stage answered for session {reply.session!r}, expected {session!r}"
            )
        return reply

    def close(self) -> None:
        self.transport.close()
