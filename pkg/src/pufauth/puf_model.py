"""Simulated SRAM PUF devices and response-quality metrics.

A device is a vector of cells, each with a noise-free power-up value and a
per-cell flip probability.  Every call to :func:`sample_response` models one
power cycle.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Iterable, Iterator, Sequence

import numpy as np


class Response:
    """Fixed-length bit string (one uint8 per bit, values 0/1)."""

    __slots__ = ("bits",)

    def __init__(self, bits: Iterable[int] | np.ndarray):
        arr = np.array(bits, dtype=np.uint8)
        if arr.ndim != 1:
            raise ValueError("response bits must be one-dimensional")
        if arr.size and arr.max() > 1:
            raise ValueError("response bits must be 0 or 1")
        arr.setflags(write=False)
        self.bits = arr

    @classmethod
    def from_string(cls, text: str) -> "Response":
        if set(text) - {"0", "1"}:
            raise ValueError(f"not a bit string: {text!r}")
        return cls([int(c) for c in text])

    @classmethod
    def unpack(cls, data: bytes, n_bits: int) -> "Response":
        """Inverse of :meth:`pack`."""
        need = (n_bits + 7) // 8
        if len(data) != need:
            raise ValueError(f"{n_bits} bits need {need} bytes, got {len(data)}")
        raw = np.frombuffer(data, dtype=np.uint8)
        return cls(np.unpackbits(raw, bitorder="little")[:n_bits])

    def pack(self) -> bytes:
        """Packed bytes, LSB-first within each byte, trailing bits zero."""
        return np.packbits(self.bits, bitorder="little").tobytes()

    def to_string(self) -> str:
        return "".join("1" if b else "0" for b in self.bits)

    def __len__(self) -> int:
        return int(self.bits.size)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Response):
            return NotImplemented
        return np.array_equal(self.bits, other.bits)

    def __hash__(self) -> int:
        return hash((len(self), self.pack()))

    def __xor__(self, other: "Response") -> "Response":
        _check_same_length(self, other)
        return Response(self.bits ^ other.bits)

    def __invert__(self) -> "Response":
        return Response(1 - self.bits)

    def __getitem__(self, item: slice) -> "Response":
        if not isinstance(item, slice):
            raise TypeError("use .bits for single-bit access")
        return Response(self.bits[item])

    def __repr__(self) -> str:
        if len(self) <= 32:
            return f"Response('{self.to_string()}')"
        return f"Response(<{len(self)} bits>)"

    @staticmethod
    def concat(parts: Sequence["Response"]) -> "Response":
        if not parts:
            return Response([])
        return Response(np.concatenate([p.bits for p in parts]))


def _check_same_length(a: Response, b: Response) -> None:
    if len(a) != len(b):
        raise ValueError(f"length mismatch: {len(a)} vs {len(b)}")


@dataclass(frozen=True)
class NoiseProfile:
    """Two-population cell noise: mostly stable cells plus an unstable fraction."""

    fraction_unstable: float = 0.05
    stable_eps: float = 0.001
    unstable_max: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.fraction_unstable <= 1.0:
            raise ValueError("fraction_unstable must be in [0, 1]")
        if not 0.0 <= self.stable_eps < self.unstable_max <= 0.5:
            raise ValueError("need 0 <= stable_eps < unstable_max <= 0.5")

    @classmethod
    def noiseless(cls) -> "NoiseProfile":
        # unstable_max must exceed stable_eps; with no unstable cells it is never used
        return cls(fraction_unstable=0.0, stable_eps=0.0, unstable_max=0.5)


@dataclass(eq=False)
class PufDevice:
    device_id: str
    stable_value: np.ndarray
    flip_prob: np.ndarray
    bias_q: float = 0.5
    rho_chip: float = 0.0
    seed: int = 0

    def __post_init__(self):
        self.stable_value = np.asarray(self.stable_value, dtype=np.uint8)
        self.flip_prob = np.asarray(self.flip_prob, dtype=np.float64)
        if self.stable_value.shape != self.flip_prob.shape or self.stable_value.ndim != 1:
            raise ValueError("stable_value and flip_prob must be 1-D of equal length")
        if self.flip_prob.size and (self.flip_prob.min() < 0 or self.flip_prob.max() > 0.5):
            raise ValueError("flip_prob must lie in [0, 0.5]")
        if not 0.0 < self.bias_q < 1.0:
            raise ValueError("bias_q must lie in (0, 1)")
        if not 0.0 <= self.rho_chip < 1.0:
            raise ValueError("rho_chip must lie in [0, 1)")

    @property
    def n_cells(self) -> int:
        return int(self.stable_value.size)

    def stable_response(self) -> Response:
        return Response(self.stable_value)

    def sample_responses(self, rng: np.random.Generator, count: int) -> np.ndarray:
        """``count`` independent readings as a (count, n_cells) uint8 array.

        Consumes the generator exactly as ``count`` successive
        :func:`sample_response` calls would.
        """
        flips = rng.random((count, self.n_cells)) < self.flip_prob
        return self.stable_value ^ flips.astype(np.uint8)


def derive_seed(master_seed: int, *parts: object) -> int:
    """Deterministic 64-bit seed from a master seed and any labels."""
    h = hashlib.blake2b(digest_size=8)
    h.update(str(int(master_seed)).encode())
    for p in parts:
        h.update(b"\x1f")
        h.update(str(p).encode())
    return int.from_bytes(h.digest(), "big")


def generate_device(
    master_seed: int,
    device_id: str,
    n: int,
    noise: NoiseProfile | None = None,
    bias_q: float = 0.5,
    rho_chip: float = 0.0,
    wafer_pattern: Response | None = None,
) -> PufDevice:
    noise = noise or NoiseProfile()
    if n < 0:
        raise ValueError("n must be non-negative")
    if not 0.0 < bias_q < 1.0:
        raise ValueError("bias_q must lie in (0, 1)")
    if not 0.0 <= rho_chip < 1.0:
        raise ValueError("rho_chip must lie in [0, 1)")
    if rho_chip > 0 and wafer_pattern is None:
        raise ValueError("rho_chip > 0 requires a wafer_pattern")
    if wafer_pattern is not None and len(wafer_pattern) != n:
        raise ValueError(f"wafer_pattern has {len(wafer_pattern)} bits, device has {n}")

    seed = derive_seed(master_seed, "device", device_id)
    rng = np.random.default_rng(seed)

    own = (rng.random(n) < bias_q).astype(np.uint8)
    if wafer_pattern is not None:
        # which cells follow the wafer is itself a wafer property, shared by every chip
        copy = wafer_mask_for(master_seed, n, rho_chip)
        stable = np.where(copy, wafer_pattern.bits, own).astype(np.uint8)
    else:
        stable = own

    unstable = rng.random(n) < noise.fraction_unstable
    # uniform on (stable_eps, unstable_max]
    width = noise.unstable_max - noise.stable_eps
    level = noise.unstable_max - rng.random(n) * width
    flip = np.where(unstable, level, noise.stable_eps)

    return PufDevice(device_id, stable, flip, bias_q=bias_q, rho_chip=rho_chip, seed=seed)


def wafer_pattern_for(master_seed: int, n: int) -> Response:
    rng = np.random.default_rng(derive_seed(master_seed, "wafer"))
    return Response(rng.integers(0, 2, size=n, dtype=np.uint8))


def wafer_mask_for(master_seed: int, n: int, rho_chip: float) -> np.ndarray:
    """Cells whose stable value is set by the wafer, each with probability ``rho_chip``.

    Masks for a larger rho contain those for a smaller one.
    """
    rng = np.random.default_rng(derive_seed(master_seed, "wafer-mask"))
    return rng.random(n) < rho_chip


def sample_response(device: PufDevice, rng: np.random.Generator) -> Response:
    return Response(device.sample_responses(rng, 1)[0])


def normalized_hd(a: Response, b: Response) -> float:
    _check_same_length(a, b)
    if len(a) == 0:
        raise ValueError("empty responses")
    return int(np.count_nonzero(a.bits != b.bits)) / len(a)


def hamming_distance(a: Response, b: Response) -> int:
    _check_same_length(a, b)
    return int(np.count_nonzero(a.bits != b.bits))


def uniformity(r: Response) -> float:
    """Fractional Hamming weight."""
    if len(r) == 0:
        raise ValueError("empty response")
    return int(np.count_nonzero(r.bits)) / len(r)


def partition_response(r: Response, block: int) -> list[Response]:
    if block <= 0 or len(r) % block:
        raise ValueError(f"block size {block} does not divide {len(r)}")
    return [Response(row) for row in r.bits.reshape(-1, block)]


# -- fleets -----------------------------------------------------------------


@dataclass
class Fleet:
    master_seed: int
    noise: NoiseProfile = field(default_factory=NoiseProfile)
    devices: list[PufDevice] = field(default_factory=list)

    @classmethod
    def generate(
        cls,
        master_seed: int,
        count: int,
        n: int,
        noise: NoiseProfile | None = None,
        bias_q: float = 0.5,
        rho_chip: float = 0.0,
        prefix: str = "dev",
    ) -> "Fleet":
        noise = noise or NoiseProfile()
        wafer = wafer_pattern_for(master_seed, n) if rho_chip > 0 else None
        devices = [
            generate_device(master_seed, f"{prefix}{i}", n, noise, bias_q, rho_chip, wafer)
            for i in range(count)
        ]
        return cls(master_seed, noise, devices)

    def to_json(self) -> str:
        doc = {
            "master_seed": self.master_seed,
            "noise": {
                "fraction_unstable": self.noise.fraction_unstable,
                "stable_eps": self.noise.stable_eps,
                "unstable_max": self.noise.unstable_max,
            },
            "devices": [
                {"id": d.device_id, "n": d.n_cells, "bias_q": d.bias_q, "rho_chip": d.rho_chip}
                for d in self.devices
            ],
        }
        return json.dumps(doc, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "Fleet":
        doc = json.loads(text)
        seed = int(doc["master_seed"])
        noise = NoiseProfile(**doc["noise"])
        devices = []
        wafers: dict[int, Response] = {}
        for d in doc["devices"]:
            n, rho = int(d["n"]), float(d["rho_chip"])
            wafer = None
            if rho > 0:
                wafer = wafers.setdefault(n, wafer_pattern_for(seed, n))
            devices.append(generate_device(seed, d["id"], n, noise, float(d["bias_q"]), rho, wafer))
        return cls(seed, noise, devices)


# -- raw response dumps -----------------------------------------------------
# Record: 4-byte little-endian bit count, then ceil(bits/8) packed bytes (LSB-first).

_DUMP_PREFIX = struct.Struct("<I")


def write_dump(fh: BinaryIO, responses: Iterable[Response]) -> int:
    count = 0
    for r in responses:
        fh.write(_DUMP_PREFIX.pack(len(r)))
        fh.write(r.pack())
        count += 1
    return count


def iter_dump(fh: BinaryIO) -> Iterator[Response]:
    while True:
        head = fh.read(_DUMP_PREFIX.size)
        if not head:
            return
        if len(head) != _DUMP_PREFIX.size:
            raise ValueError("truncated dump record header")
        (n_bits,) = _DUMP_PREFIX.unpack(head)
        body = fh.read((n_bits + 7) // 8)
        yield Response.unpack(body, n_bits)


def load_dump(path: str | Path) -> list[Response]:
    with open(path, "rb") as fh:
        return list(iter_dump(fh))


def save_dump(path: str | Path, responses: Iterable[Response]) -> int:
    with open(path, "wb") as fh:
        return write_dump(fh, responses)
