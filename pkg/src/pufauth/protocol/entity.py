"""Entity client: reads its PUF, stabilizes, corrects, and answers the verifier."""

from __future__ import annotations

import logging
import re
import socket
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from ..hamming import HelperData, decode, enroll_helper
from ..puf_model import PufDevice, Response
from ..stabilizer import MajorityAccumulator
from .wire import (
    Challenge,
    FrameType,
    Hello,
    Intent,
    ProtocolError,
    ResponseMessage,
    Result,
    TransportError,
    expect,
    send_frame,
)

log = logging.getLogger(__name__)


class ReadingSource(Protocol):
    n_cells: int

    def read(self) -> Response: ...


class SimulatedSource:
    def __init__(self, device: PufDevice, rng: np.random.Generator):
        self.device = device
        self.rng = rng
        self.n_cells = device.n_cells

    def read(self) -> Response:
        return Response(self.device.sample_responses(self.rng, 1)[0])


class DumpSource:
    """Replays recorded raw readings in order, wrapping around at the end."""

    def __init__(self, readings: Sequence[Response]):
        if not readings:
            raise ValueError("dump holds no readings")
        sizes = {len(r) for r in readings}
        if len(sizes) != 1:
            raise ValueError("dump readings differ in length")
        self.readings = list(readings)
        self.n_cells = sizes.pop()
        self._next = 0

    def read(self) -> Response:
        r = self.readings[self._next]
        self._next = (self._next + 1) % len(self.readings)
        return r


def parse_address(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"address must look like host:port, got {text!r}")
    return host, int(port)


class Entity:
    """An authenticating device.  Helper data stays local (its NVS analogue)."""

    def __init__(self, device_id: str, source: ReadingSource, helper_dir: str | Path | None = None):
        self.device_id = device_id
        self.source = source
        self.helper_dir = Path(helper_dir) if helper_dir else None
        self._helpers: dict[tuple[int, int], HelperData] = {}

    # -- PUF access --------------------------------------------------------

    def stabilized_read(self, votes: int, offset: int = 0, length: int | None = None) -> Response:
        length = self.source.n_cells - offset if length is None else length
        if offset < 0 or offset + length > self.source.n_cells:
            raise ProtocolError(5, f"challenge window {offset}+{length} exceeds {self.source.n_cells} cells")
        acc = MajorityAccumulator(length, votes)
        for _ in range(votes):
            acc.accumulate(self.source.read()[offset:offset + length])
        return acc.finalize()

    # -- helper storage ----------------------------------------------------------

    def _helper_path(self, offset: int, length: int) -> Path | None:
        if self.helper_dir is None:
            return None
        safe = re.sub(r"[^A-Za-z0-9_.-]", "_", self.device_id)
        return self.helper_dir / f"{safe}_{offset}_{length}.pufh"

    def store_helper(self, offset: int, length: int, helper: HelperData) -> None:
        self._helpers[(offset, length)] = helper
        path = self._helper_path(offset, length)
        if path is not None:
            path.parent.mkdir(parents=True, exist_ok=True)
            helper.save(path)

    def load_helper(self, offset: int, length: int) -> HelperData | None:
        path = self._helper_path(offset, length)
        if path is not None and path.exists():
            return HelperData.load(path)
        return self._helpers.get((offset, length))

    # -- sessions ---------------------------------------------------------------------

    def enroll_over(self, sock: socket.socket, overwrite: bool = False) -> Response:
        send_frame(sock, FrameType.HELLO, Hello(self.device_id, Intent.ENROLL, overwrite).encode())
        ch = Challenge.decode(expect(sock, FrameType.ENROLL_REQ))
        response = self.stabilized_read(ch.votes, ch.offset, ch.length)
        if ch.variant is not None and ch.entity_ec:
            self.store_helper(ch.offset, ch.length, enroll_helper(response, ch.variant))
        send_frame(sock, FrameType.ENROLL_RESP, ResponseMessage(ch.nonce, response).encode())
        Result.decode(expect(sock, FrameType.AUTH_RESULT))
        return response

    def authenticate_over(self, sock: socket.socket) -> Result:
        send_frame(sock, FrameType.HELLO, Hello(self.device_id, Intent.AUTH).encode())
        ch = Challenge.decode(expect(sock, FrameType.AUTH_CHALLENGE))
        response = self.stabilized_read(ch.votes, ch.offset, ch.length)
        if ch.variant is not None and ch.entity_ec:
            helper = self.load_helper(ch.offset, ch.length)
            if helper is None:
                log.warning("no helper data for %s; sending uncorrected response", self.device_id)
            else:
                response = decode(response, helper).corrected
        send_frame(sock, FrameType.AUTH_RESPONSE, ResponseMessage(ch.nonce, response).encode())
        return Result.decode(expect(sock, FrameType.AUTH_RESULT))

    def enroll(self, address: tuple[str, int], overwrite: bool = False, timeout: float = 30.0) -> Response:
        with _connect(address, timeout) as sock:
            return self.enroll_over(sock, overwrite)

    def authenticate(self, address: tuple[str, int], timeout: float = 30.0) -> Result:
        with _connect(address, timeout) as sock:
            return self.authenticate_over(sock)


def _connect(address: tuple[str, int], timeout: float) -> socket.socket:
    try:
        return socket.create_connection(address, timeout=timeout)
    except OSError as exc:
        raise TransportError(f"cannot reach verifier at {address[0]}:{address[1]}: {exc}") from exc
