"""Verifier-side persistence: CRP records (JSON lines) and the audit log (CSV)."""

from __future__ import annotations

import csv
import json
import os
import threading
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

from ..hamming import HammingVariant, HelperData, variant_label
from ..puf_model import Response


@dataclass(frozen=True)
class ChallengeSpec:
    offset: int
    length: int
    nonce: bytes

    @property
    def key(self) -> tuple[int, int]:
        return (self.offset, self.length)


@dataclass(frozen=True)
class CrpRecord:
    device_id: str
    challenge: ChallengeSpec
    enrolled_response: Response
    variant: HammingVariant | None
    mv_count: int
    enrolled_at: str
    helper: HelperData | None = None  # only when EC runs at the verifier

    def __post_init__(self):
        if len(self.enrolled_response) != self.challenge.length:
            raise ValueError("enrolled response length differs from the challenge length")

    @property
    def key(self) -> tuple[str, int, int]:
        return (self.device_id, *self.challenge.key)

    def to_json(self) -> str:
        return json.dumps({
            "device_id": self.device_id,
            "challenge": {
                "offset": self.challenge.offset,
                "length": self.challenge.length,
                "nonce": self.challenge.nonce.hex(),
            },
            "enrolled_response": self.enrolled_response.pack().hex(),
            "variant": variant_label(self.variant),
            "mv_count": self.mv_count,
            "enrolled_at": self.enrolled_at,
            "helper": self.helper.to_bytes().hex() if self.helper else None,
        }, sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "CrpRecord":
        doc = json.loads(line)
        ch = doc["challenge"]
        challenge = ChallengeSpec(int(ch["offset"]), int(ch["length"]), bytes.fromhex(ch["nonce"]))
        resp = Response.unpack(bytes.fromhex(doc["enrolled_response"]), challenge.length)
        helper = HelperData.from_bytes(bytes.fromhex(doc["helper"])) if doc.get("helper") else None
        return cls(
            device_id=doc["device_id"],
            challenge=challenge,
            enrolled_response=resp,
            variant=HammingVariant.parse(doc["variant"]),
            mv_count=int(doc["mv_count"]),
            enrolled_at=doc["enrolled_at"],
            helper=helper,
        )


def utc_now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="milliseconds")


class DuplicateEnrollment(Exception):
    pass


class CrpStore:
    """One active record per (device_id, challenge window).

    Writes append a line and are serialised by a lock; superseded lines are
    dropped by :meth:`compact`, which also runs on open.
    """

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._records: dict[tuple[str, int, int], CrpRecord] = {}
        self._load()

    def _load(self) -> None:
        if not self.path.exists():
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.touch()
            return
        lines = 0
        with open(self.path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    rec = CrpRecord.from_json(line)
                    self._records[rec.key] = rec
                    lines += 1
        if lines != len(self._records):
            self.compact()

    def put(self, record: CrpRecord, overwrite: bool = False) -> None:
        with self._lock:
            if record.key in self._records and not overwrite:
                raise DuplicateEnrollment(f"{record.device_id} already enrolled for {record.challenge.key}")
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(record.to_json() + "\n")
                fh.flush()
                os.fsync(fh.fileno())
            self._records[record.key] = record

    def get(self, device_id: str, offset: int | None = None, length: int | None = None) -> CrpRecord | None:
        if offset is not None and length is not None:
            return self._records.get((device_id, offset, length))
        matches = [r for k, r in list(self._records.items()) if k[0] == device_id]
        if not matches:
            return None
        return max(matches, key=lambda r: r.enrolled_at)

    def compact(self) -> None:
        with self._lock:
            tmp = self.path.with_suffix(self.path.suffix + ".tmp")
            with open(tmp, "w", encoding="utf-8") as fh:
                for rec in self._records.values():
                    fh.write(rec.to_json() + "\n")
            os.replace(tmp, self.path)

    def __len__(self) -> int:
        return len(self._records)

    def __contains__(self, device_id: str) -> bool:
        return any(k[0] == device_id for k in list(self._records))


AUDIT_COLUMNS = ("timestamp", "device_id", "measured_ber", "tau", "accepted", "error_code")


class AuditLog:
    def __init__(self, path: str | Path | None):
        self.path = Path(path) if path else None
        self._lock = threading.Lock()
        if self.path and not self.path.exists():
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "w", newline="") as fh:
                csv.writer(fh).writerow(AUDIT_COLUMNS)

    def record(
        self,
        device_id: str,
        measured_ber: float | None,
        tau: float | None,
        accepted: bool | None,
        error_code: int | None = None,
    ) -> None:
        if self.path is None:
            return
        row = [
            utc_now(),
            device_id,
            "" if measured_ber is None else repr(measured_ber),
            "" if tau is None else repr(tau),
            "" if accepted is None else str(accepted).lower(),
            "" if error_code is None else str(error_code),
        ]
        with self._lock, open(self.path, "a", newline="") as fh:
            csv.writer(fh).writerow(row)

    def rows(self) -> list[dict[str, str]]:
        if self.path is None or not self.path.exists():
            return []
        with open(self.path, newline="") as fh:
            return list(csv.DictReader(fh))
