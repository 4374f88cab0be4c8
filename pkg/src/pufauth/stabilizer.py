"""Temporal majority voting over repeated PUF readings."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .puf_model import PufDevice, Response

MAX_VOTES = 255

# version, n (u32 BE), N, votes_seen, then n one-byte counters
_SNAPSHOT_VERSION = 1
_SNAPSHOT_HEAD = struct.Struct(">BIBB")


@dataclass(eq=False)
class MajorityAccumulator:
    """Per-bit vote counters, persistable between power cycles."""

    n: int
    target_votes: int
    counters: np.ndarray = field(default=None)  # type: ignore[assignment]
    votes_seen: int = 0

    def __post_init__(self):
        if not 1 <= self.target_votes <= MAX_VOTES:
            raise ValueError(f"target_votes must be in [1, {MAX_VOTES}]")
        if self.counters is None:
            self.counters = np.zeros(self.n, dtype=np.uint8)
        else:
            self.counters = np.array(self.counters, dtype=np.uint8)
        if self.counters.shape != (self.n,):
            raise ValueError("counters length must equal n")
        if not 0 <= self.votes_seen <= self.target_votes:
            raise ValueError("votes_seen out of range")
        if self.n and int(self.counters.max()) > self.votes_seen:
            raise ValueError("counter exceeds votes_seen")

    def accumulate(self, reading: Response) -> "MajorityAccumulator":
        if self.votes_seen >= self.target_votes:
            raise ValueError(f"already holds {self.target_votes} votes")
        if len(reading) != self.n:
            raise ValueError(f"reading has {len(reading)} bits, expected {self.n}")
        self.counters += reading.bits
        self.votes_seen += 1
        return self

    def finalize(self) -> Response:
        if self.votes_seen != self.target_votes:
            raise ValueError(f"finalize after {self.votes_seen} of {self.target_votes} votes")
        # strict majority: ties at even N go to 0
        return Response((2 * self.counters.astype(np.int32) > self.target_votes).astype(np.uint8))

    def to_bytes(self) -> bytes:
        head = _SNAPSHOT_HEAD.pack(_SNAPSHOT_VERSION, self.n, self.target_votes, self.votes_seen)
        return head + self.counters.tobytes()

    @classmethod
    def from_bytes(cls, blob: bytes) -> "MajorityAccumulator":
        if len(blob) < _SNAPSHOT_HEAD.size:
            raise ValueError("snapshot too short")
        version, n, target, seen = _SNAPSHOT_HEAD.unpack_from(blob)
        if version != _SNAPSHOT_VERSION:
            raise ValueError(f"unsupported snapshot version {version}")
        body = blob[_SNAPSHOT_HEAD.size:]
        if len(body) != n:
            raise ValueError(f"snapshot declares {n} counters, has {len(body)}")
        return cls(n, target, np.frombuffer(body, dtype=np.uint8), seen)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, MajorityAccumulator):
            return NotImplemented
        return (
            self.n == other.n
            and self.target_votes == other.target_votes
            and self.votes_seen == other.votes_seen
            and np.array_equal(self.counters, other.counters)
        )


def majority_vote(readings: np.ndarray) -> np.ndarray:
    """Vectorised majority over a (N, n) reading stack; same tie rule as finalize."""
    readings = np.asarray(readings)
    votes = readings.shape[0]
    if votes < 1:
        raise ValueError("need at least one reading")
    return (2 * readings.sum(axis=0, dtype=np.int32) > votes).astype(np.uint8)


def stabilized_read(device: PufDevice, votes: int, rng: np.random.Generator) -> Response:
    if votes < 1:
        raise ValueError("votes must be >= 1")
    acc = MajorityAccumulator(device.n_cells, votes)
    for row in device.sample_responses(rng, votes):
        acc.accumulate(Response(row))
    return acc.finalize()
