from .entity import DumpSource, Entity, SimulatedSource, parse_address
from .store import AuditLog, ChallengeSpec, CrpRecord, CrpStore, DuplicateEnrollment
from .verifier import (
    EC_AT_ENTITY,
    EC_AT_VERIFIER,
    AuthDecision,
    ThresholdPolicy,
    Verifier,
    VerifierConfig,
    decide,
)
from .wire import ErrorCode, FrameType, ProtocolError, TransportError

__all__ = [
    "AuditLog", "AuthDecision", "ChallengeSpec", "CrpRecord", "CrpStore", "DumpSource",
    "DuplicateEnrollment", "EC_AT_ENTITY", "EC_AT_VERIFIER", "Entity", "ErrorCode", "FrameType",
    "ProtocolError", "SimulatedSource", "ThresholdPolicy", "TransportError", "Verifier",
    "VerifierConfig", "decide", "parse_address",
]
