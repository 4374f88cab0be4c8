"""Hamming SEC / SECDED codes with parity-only helper data.

Codeword layout (1-based positions): parity bits at powers of two, data bits
in the remaining positions in ascending order; SECDED appends the overall
parity bit last.  With this layout the syndrome of a single error equals its
position.

Only parity bits are persisted.  Each codeword's parity is packed into one
helper byte, LSB-first: p1 at bit 0, p2 at bit 1, ..., the overall parity (if
any) at bit ``parity_bits - 1``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from .puf_model import Response

_PARITY_COUNT = {4: 3, 8: 4, 16: 5}
_WIDTH_CODE = {4: 0, 8: 1, 16: 2}

CLEAN, SINGLE_CORRECTED, DOUBLE_DETECTED, MISCORRECTION_POSSIBLE = range(4)


@dataclass(frozen=True)
class HammingVariant:
    data_bits: int
    extended: bool = False

    def __post_init__(self):
        if self.data_bits not in _PARITY_COUNT:
            raise ValueError(f"data_bits must be one of 4, 8, 16 (got {self.data_bits})")

    @property
    def hamming_parity_bits(self) -> int:
        return _PARITY_COUNT[self.data_bits]

    @property
    def codeword_bits(self) -> int:
        return self.data_bits + self.parity_bits

    @property
    def parity_bits(self) -> int:
        return self.hamming_parity_bits + int(self.extended)

    @property
    def code_rate(self) -> float:
        return self.data_bits / self.codeword_bits

    @property
    def label(self) -> str:
        return f"H({self.codeword_bits},{self.data_bits})"

    @property
    def tag(self) -> int:
        return _WIDTH_CODE[self.data_bits] | (int(self.extended) << 2)

    @classmethod
    def from_tag(cls, tag: int) -> "HammingVariant":
        width = tag & 0b11
        if width == 3 or tag >> 3:
            raise ValueError(f"invalid variant tag 0x{tag:02x}")
        return cls([4, 8, 16][width], bool(tag & 0b100))

    @classmethod
    def parse(cls, text: str) -> "HammingVariant | None":
        """Accepts ``H(7,4)``, ``H7,4``, ``h74`` style labels; ``none`` gives None."""
        s = text.strip().lower().replace(" ", "")
        if s in ("none", "", "no-ecc", "noecc"):
            return None
        s = s.replace("(", "").replace(")", "").replace(",", "")
        for v in ALL_VARIANTS:
            if s == f"h{v.codeword_bits}{v.data_bits}":
                return v
        raise ValueError(f"unknown Hamming variant {text!r}")

    def __str__(self) -> str:
        return self.label

    # -- geometry ----------------------------------------------------------

    @cached_property
    def _hamming_len(self) -> int:
        return self.data_bits + self.hamming_parity_bits

    @cached_property
    def _data_positions(self) -> np.ndarray:
        # 1-based positions that are not powers of two
        pos = [p for p in range(1, self._hamming_len + 1) if p & (p - 1)]
        return np.array(pos, dtype=np.int64)

    @cached_property
    def _parity_positions(self) -> np.ndarray:
        return np.array([1 << i for i in range(self.hamming_parity_bits)], dtype=np.int64)

    @cached_property
    def _data_coverage(self) -> np.ndarray:
        # (data_bits, r): data bit j participates in parity i
        r = self.hamming_parity_bits
        return ((self._data_positions[:, None] >> np.arange(r)) & 1).astype(np.uint8)

    @cached_property
    def _check_matrix(self) -> np.ndarray:
        # (hamming_len, r): position p contributes bit i of the syndrome
        r = self.hamming_parity_bits
        pos = np.arange(1, self._hamming_len + 1)
        return ((pos[:, None] >> np.arange(r)) & 1).astype(np.uint8)


SEC_VARIANTS = tuple(HammingVariant(d, False) for d in (4, 8, 16))
SECDED_VARIANTS = tuple(HammingVariant(d, True) for d in (4, 8, 16))
ALL_VARIANTS = tuple(v for pair in zip(SEC_VARIANTS, SECDED_VARIANTS) for v in pair)


def variant_label(variant: HammingVariant | None) -> str:
    return "none" if variant is None else variant.label


# -- block-level encode / decode ----------------------------------------------


def _as_blocks(bits: np.ndarray, width: int) -> np.ndarray:
    if bits.size % width:
        raise ValueError(f"length {bits.size} is not a multiple of {width}")
    return bits.reshape(-1, width)


def parity_of_blocks(data: np.ndarray, variant: HammingVariant) -> np.ndarray:
    """Parity bits (B, parity_bits) for data blocks (B, data_bits)."""
    data = np.asarray(data, dtype=np.uint8)
    par = (data.astype(np.int64) @ variant._data_coverage) & 1
    if variant.extended:
        overall = (data.sum(axis=1, dtype=np.int64) + par.sum(axis=1)) & 1
        par = np.concatenate([par, overall[:, None]], axis=1)
    return par.astype(np.uint8)


def assemble_codewords(data: np.ndarray, parity: np.ndarray, variant: HammingVariant) -> np.ndarray:
    """Full codewords (B, codeword_bits) in position order."""
    blocks = data.shape[0]
    cw = np.zeros((blocks, variant.codeword_bits), dtype=np.uint8)
    r = variant.hamming_parity_bits
    cw[:, variant._data_positions - 1] = data
    cw[:, variant._parity_positions - 1] = parity[:, :r]
    if variant.extended:
        cw[:, -1] = parity[:, r]
    return cw


def encode_blocks(data: np.ndarray, variant: HammingVariant) -> np.ndarray:
    data = np.asarray(data, dtype=np.uint8)
    return assemble_codewords(data, parity_of_blocks(data, variant), variant)


def extract_data(codewords: np.ndarray, variant: HammingVariant) -> np.ndarray:
    return codewords[:, variant._data_positions - 1]


def decode_codewords(codewords: np.ndarray, variant: HammingVariant) -> tuple[np.ndarray, np.ndarray]:
    """Syndrome-decode codewords; returns (corrected codewords, per-block outcome codes).

    SEC: a nonzero syndrome addressing a codeword position is corrected.
    SECDED: a nonzero syndrome with consistent overall parity is reported as a
    double error and left untouched.  A syndrome pointing past the end of a
    shortened code cannot be corrected; such blocks are left untouched and
    reported as MISCORRECTION_POSSIBLE (at least two errors are present).
    """
    cw = np.array(codewords, dtype=np.uint8, copy=True)
    if cw.ndim != 2 or cw.shape[1] != variant.codeword_bits:
        raise ValueError(f"expected (blocks, {variant.codeword_bits}) codewords")
    m = variant._hamming_len
    weights = 1 << np.arange(variant.hamming_parity_bits)
    syndrome = ((cw[:, :m].astype(np.int64) @ variant._check_matrix) & 1) @ weights

    outcome = np.full(cw.shape[0], CLEAN, dtype=np.int8)
    in_range = (syndrome >= 1) & (syndrome <= m)

    if variant.extended:
        odd = (cw.sum(axis=1, dtype=np.int64) & 1).astype(bool)
        fix = odd & in_range
        outcome[fix] = SINGLE_CORRECTED
        ext_only = odd & (syndrome == 0)
        cw[ext_only, m] ^= 1
        outcome[ext_only] = SINGLE_CORRECTED
        outcome[~odd & (syndrome != 0)] = DOUBLE_DETECTED
        outcome[odd & (syndrome > m)] = MISCORRECTION_POSSIBLE
    else:
        fix = in_range
        outcome[fix] = SINGLE_CORRECTED
        outcome[syndrome > m] = MISCORRECTION_POSSIBLE

    rows = np.nonzero(fix)[0]
    cw[rows, syndrome[rows] - 1] ^= 1
    return cw, outcome


# -- helper data ----------------------------------------------------------------


def pack_parity(parity: np.ndarray) -> bytes:
    weights = 1 << np.arange(parity.shape[1])
    return (parity.astype(np.int64) @ weights).astype(np.uint8).tobytes()


def unpack_parity(data: bytes, parity_bits: int) -> np.ndarray:
    raw = np.frombuffer(data, dtype=np.uint8)
    return ((raw[:, None] >> np.arange(parity_bits)) & 1).astype(np.uint8)


@dataclass(frozen=True)
class HelperData:
    variant: HammingVariant
    parity_blocks: bytes

    def __post_init__(self):
        if not isinstance(self.parity_blocks, bytes):
            object.__setattr__(self, "parity_blocks", bytes(self.parity_blocks))
        unused = 0xFF & ~((1 << self.variant.parity_bits) - 1)
        if any(b & unused for b in self.parity_blocks):
            raise ValueError("helper byte has bits set above the parity width")

    @property
    def codeword_count(self) -> int:
        return len(self.parity_blocks)

    def parity_matrix(self) -> np.ndarray:
        return unpack_parity(self.parity_blocks, self.variant.parity_bits)

    # File: b"PUFH", version, variant tag, u32 BE codeword count, parity bytes.
    MAGIC = b"PUFH"
    VERSION = 1
    _HEAD = struct.Struct(">4sBBI")

    def to_bytes(self) -> bytes:
        head = self._HEAD.pack(self.MAGIC, self.VERSION, self.variant.tag, self.codeword_count)
        return head + self.parity_blocks

    @classmethod
    def from_bytes(cls, blob: bytes) -> "HelperData":
        if len(blob) < cls._HEAD.size:
            raise ValueError("helper data too short")
        magic, version, tag, count = cls._HEAD.unpack_from(blob)
        if magic != cls.MAGIC:
            raise ValueError("bad helper data magic")
        if version != cls.VERSION:
            raise ValueError(f"unsupported helper data version {version}")
        body = blob[cls._HEAD.size:]
        if len(body) != count:
            raise ValueError(f"helper data declares {count} codewords, has {len(body)} bytes")
        return cls(HammingVariant.from_tag(tag), body)

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path: str | Path) -> "HelperData":
        return cls.from_bytes(Path(path).read_bytes())


@dataclass(frozen=True)
class DecodeReport:
    corrected: Response
    clean: int
    single_corrected: int
    double_detected: int
    miscorrection_possible: int
    bit_flips_applied: int

    @property
    def codeword_count(self) -> int:
        return self.clean + self.single_corrected + self.double_detected + self.miscorrection_possible

    def summary(self) -> dict[str, int]:
        return {
            "clean": self.clean,
            "single_corrected": self.single_corrected,
            "double_detected": self.double_detected,
            "miscorrection_possible": self.miscorrection_possible,
            "bit_flips_applied": self.bit_flips_applied,
        }


def enroll_helper(data: Response, variant: HammingVariant) -> HelperData:
    blocks = _as_blocks(data.bits, variant.data_bits)
    return HelperData(variant, pack_parity(parity_of_blocks(blocks, variant)))


def decode_bits(raw: np.ndarray, helper: HelperData) -> tuple[np.ndarray, np.ndarray, int]:
    """Array-level decode: (corrected data bits, outcome codes, flips applied)."""
    variant = helper.variant
    raw = np.asarray(raw, dtype=np.uint8)
    if raw.size != helper.codeword_count * variant.data_bits:
        raise ValueError(
            f"raw response has {raw.size} bits, helper covers "
            f"{helper.codeword_count} x {variant.data_bits}"
        )
    blocks = raw.reshape(-1, variant.data_bits)
    cw = assemble_codewords(blocks, helper.parity_matrix(), variant)
    fixed, outcome = decode_codewords(cw, variant)
    flips = int(np.count_nonzero(fixed != cw))
    return extract_data(fixed, variant).reshape(-1), outcome, flips


def decode(raw: Response, helper: HelperData) -> DecodeReport:
    bits, outcome, flips = decode_bits(raw.bits, helper)
    counts = np.bincount(outcome, minlength=4)
    return DecodeReport(
        corrected=Response(bits),
        clean=int(counts[CLEAN]),
        single_corrected=int(counts[SINGLE_CORRECTED]),
        double_detected=int(counts[DOUBLE_DETECTED]),
        miscorrection_possible=int(counts[MISCORRECTION_POSSIBLE]),
        bit_flips_applied=flips,
    )


@dataclass(frozen=True)
class Footprint:
    blocks: int
    parity_bits: int
    nvs_bytes: int
    code_rate: float


def parity_footprint(variant: HammingVariant, response_bytes: int) -> Footprint:
    bits = response_bytes * 8
    if bits % variant.data_bits:
        raise ValueError(f"{bits}-bit response not divisible by {variant.data_bits}")
    blocks = bits // variant.data_bits
    return Footprint(blocks, blocks * variant.parity_bits, blocks, variant.code_rate)
