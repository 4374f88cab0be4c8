"""Verifier service: enrolls entities and makes threshold decisions."""

from __future__ import annotations

import logging
import secrets
import socket
import socketserver
import threading
from dataclasses import dataclass, field
from pathlib import Path

from ..calibration import threshold_bits
from ..hamming import HammingVariant, decode, enroll_helper
from ..puf_model import Response, hamming_distance
from .store import AuditLog, ChallengeSpec, CrpRecord, CrpStore, DuplicateEnrollment, utc_now
from .wire import (
    Challenge,
    ErrorCode,
    FrameType,
    Hello,
    Intent,
    MalformedFrame,
    ProtocolError,
    ResponseMessage,
    Result,
    TransportError,
    encode_error,
    expect,
    recv_frame,
    send_frame,
)

log = logging.getLogger(__name__)

EC_AT_ENTITY = "entity"
EC_AT_VERIFIER = "verifier"


@dataclass(frozen=True)
class ThresholdPolicy:
    tau_ber: float
    source: str = "manual"  # or "calibrated"

    def __post_init__(self):
        if not 0.0 <= self.tau_ber <= 1.0:
            raise ValueError("tau_ber must lie in [0, 1]")
        if self.source not in ("manual", "calibrated"):
            raise ValueError(f"unknown policy source {self.source!r}")

    def max_bits(self, n: int) -> int:
        return threshold_bits(self.tau_ber, n)


@dataclass(frozen=True)
class AuthDecision:
    device_id: str
    accepted: bool
    measured_ber: float
    tau_used: float
    hd_bits: int
    n: int
    decode_summary: dict | None = None


def decide(device_id: str, enrolled: Response, received: Response, policy: ThresholdPolicy,
           decode_summary: dict | None = None) -> AuthDecision:
    hd = hamming_distance(enrolled, received)
    n = len(enrolled)
    return AuthDecision(
        device_id=device_id,
        accepted=hd <= policy.max_bits(n),
        measured_ber=hd / n,
        tau_used=policy.tau_ber,
        hd_bits=hd,
        n=n,
        decode_summary=decode_summary,
    )


@dataclass
class VerifierConfig:
    store_path: Path
    policy: ThresholdPolicy
    audit_path: Path | None = None
    host: str = "127.0.0.1"
    port: int = 0
    variant: HammingVariant | None = None
    mv_count: int = 5
    challenge_offset: int = 0
    challenge_length: int = 2048
    ec_location: str = EC_AT_ENTITY

    def __post_init__(self):
        self.store_path = Path(self.store_path)
        if self.audit_path is not None:
            self.audit_path = Path(self.audit_path)
        if self.ec_location not in (EC_AT_ENTITY, EC_AT_VERIFIER):
            raise ValueError(f"ec_location must be '{EC_AT_ENTITY}' or '{EC_AT_VERIFIER}'")
        if not 1 <= self.mv_count <= 255:
            raise ValueError("mv_count must be in [1, 255]")
        if self.challenge_length < 1 or self.challenge_offset < 0:
            raise ValueError("invalid challenge window")
        if self.variant is not None and self.challenge_length % self.variant.data_bits:
            raise ValueError(
                f"challenge length {self.challenge_length} not divisible by "
                f"{self.variant.label} data width {self.variant.data_bits}"
            )


class Verifier:
    def __init__(self, config: VerifierConfig):
        self.config = config
        self.store = CrpStore(config.store_path)
        self.audit = AuditLog(config.audit_path)
        self.decisions: list[AuthDecision] = []
        self._server: socketserver.ThreadingTCPServer | None = None
        self._thread: threading.Thread | None = None

    # -- sessions ------------------------------------------------------------

    def handle(self, sock: socket.socket) -> AuthDecision | CrpRecord | None:
        """Run one session on a connected socket; never raises protocol errors."""
        device_id = ""
        intent = None
        try:
            ftype, payload = recv_frame(sock)
            if ftype != FrameType.HELLO:
                raise MalformedFrame(f"expected HELLO, got 0x{ftype:02x}")
            hello = Hello.decode(payload)
            device_id, intent = hello.device_id, hello.intent
            if hello.intent == Intent.ENROLL:
                return self._enroll(sock, hello)
            return self._authenticate(sock, hello)
        except ProtocolError as exc:
            log.info("session error for %r: %s", device_id, exc)
            if intent == Intent.AUTH:
                self.audit.record(device_id, None, self.config.policy.tau_ber, None, exc.code)
            try:
                send_frame(sock, FrameType.ERROR, encode_error(exc.code, exc.message))
            except TransportError:
                pass
        except TransportError as exc:
            log.warning("transport failure in session for %r: %s", device_id, exc)
        return None

    def _challenge(self, variant: HammingVariant | None, votes: int, offset: int, length: int) -> Challenge:
        return Challenge(
            offset=offset,
            length=length,
            nonce=secrets.token_bytes(8),
            variant=variant,
            votes=votes,
            entity_ec=self.config.ec_location == EC_AT_ENTITY,
        )

    def _enroll(self, sock: socket.socket, hello: Hello) -> CrpRecord:
        cfg = self.config
        if self.store.get(hello.device_id, cfg.challenge_offset, cfg.challenge_length) and not hello.overwrite:
            raise ProtocolError(ErrorCode.DUPLICATE_ENROLLMENT, f"{hello.device_id} already enrolled")
        ch = self._challenge(cfg.variant, cfg.mv_count, cfg.challenge_offset, cfg.challenge_length)
        send_frame(sock, FrameType.ENROLL_REQ, ch.encode())
        msg = ResponseMessage.decode(expect(sock, FrameType.ENROLL_RESP))
        if msg.nonce != ch.nonce:
            raise ProtocolError(ErrorCode.STALE_NONCE, "enrollment response bound to another nonce")
        if len(msg.response) != ch.length:
            raise ProtocolError(ErrorCode.LENGTH_MISMATCH, f"expected {ch.length} bits")
        helper = None
        if cfg.variant is not None and cfg.ec_location == EC_AT_VERIFIER:
            helper = enroll_helper(msg.response, cfg.variant)
        record = CrpRecord(
            device_id=hello.device_id,
            challenge=ChallengeSpec(ch.offset, ch.length, ch.nonce),
            enrolled_response=msg.response,
            variant=cfg.variant,
            mv_count=cfg.mv_count,
            enrolled_at=utc_now(),
            helper=helper,
        )
        try:
            self.store.put(record, overwrite=hello.overwrite)
        except DuplicateEnrollment as exc:
            raise ProtocolError(ErrorCode.DUPLICATE_ENROLLMENT, str(exc)) from exc
        send_frame(sock, FrameType.AUTH_RESULT, Result(True, 0, ch.length, 0).encode())
        return record

    def _authenticate(self, sock: socket.socket, hello: Hello) -> AuthDecision:
        record = self.store.get(hello.device_id)
        if record is None:
            raise ProtocolError(ErrorCode.UNKNOWN_DEVICE, f"unknown device {hello.device_id!r}")
        ch = self._challenge(record.variant, record.mv_count, record.challenge.offset, record.challenge.length)
        if record.helper is not None:
            ch = Challenge(ch.offset, ch.length, ch.nonce, ch.variant, ch.votes, entity_ec=False)
        send_frame(sock, FrameType.AUTH_CHALLENGE, ch.encode())
        msg = ResponseMessage.decode(expect(sock, FrameType.AUTH_RESPONSE))
        if msg.nonce != ch.nonce:
            raise ProtocolError(ErrorCode.STALE_NONCE, "response bound to a stale nonce")
        if len(msg.response) != len(record.enrolled_response):
            raise ProtocolError(ErrorCode.LENGTH_MISMATCH, f"expected {ch.length} bits")
        received, summary = msg.response, None
        if record.helper is not None:
            report = decode(received, record.helper)
            received, summary = report.corrected, report.summary()
        decision = decide(hello.device_id, record.enrolled_response, received, self.config.policy, summary)
        self.decisions.append(decision)
        self.audit.record(hello.device_id, decision.measured_ber, decision.tau_used, decision.accepted)
        send_frame(
            sock,
            FrameType.AUTH_RESULT,
            Result(decision.accepted, decision.hd_bits, decision.n, self.config.policy.max_bits(decision.n)).encode(),
        )
        return decision

    # -- TCP service ---------------------------------------------------------------

    def bind(self) -> tuple[str, int]:
        verifier = self

        class Handler(socketserver.BaseRequestHandler):
            def handle(self):
                verifier.handle(self.request)

        class Server(socketserver.ThreadingTCPServer):
            daemon_threads = True
            allow_reuse_address = True

        self._server = Server((self.config.host, self.config.port), Handler)
        return self._server.server_address[:2]

    @property
    def address(self) -> tuple[str, int]:
        if self._server is None:
            raise RuntimeError("verifier is not bound")
        return self._server.server_address[:2]

    def serve_forever(self) -> None:
        if self._server is None:
            self.bind()
        self._server.serve_forever(poll_interval=0.1)

    def start(self) -> tuple[str, int]:
        """Bind and serve on a background thread; returns the bound address."""
        addr = self.bind()
        self._thread = threading.Thread(target=self._server.serve_forever, args=(0.1,), daemon=True)
        self._thread.start()
        return addr

    def shutdown(self) -> None:
        if self._server is not None:
            self._server.shutdown()
            self._server.server_close()
            self._server = None
        if self._thread is not None:
            self._thread.join(timeout=5)
            self._thread = None
