import socket
import struct
import threading

import numpy as np
import pytest

from pufauth.calibration import ImpostorModel, far
from pufauth.hamming import ALL_VARIANTS, HammingVariant, enroll_helper
from pufauth.protocol import (
    EC_AT_VERIFIER,
    CrpStore,
    DumpSource,
    Entity,
    ErrorCode,
    FrameType,
    ProtocolError,
    SimulatedSource,
    ThresholdPolicy,
    TransportError,
    Verifier,
    VerifierConfig,
    decide,
    parse_address,
)
from pufauth.protocol.wire import (
    Challenge,
    Hello,
    Intent,
    ResponseMessage,
    Result,
    encode_frame,
    expect,
    recv_frame,
    send_frame,
)
from pufauth.puf_model import NoiseProfile, Response, generate_device

H74, H84, H128, H138, H2116, H2216 = ALL_VARIANTS


@pytest.fixture
def make_verifier(tmp_path):
    started = []

    def make(**kw):
        kw.setdefault("policy", ThresholdPolicy(0.05))
        cfg = VerifierConfig(store_path=tmp_path / "crp.jsonl", audit_path=tmp_path / "audit.csv", **kw)
        v = Verifier(cfg)
        addr = v.start()
        started.append(v)
        return v, addr

    yield make
    for v in started:
        v.shutdown()


def entity_for(device_id, seed=1, n=2048, noise=None, read_seed=0, helper_dir=None):
    dev = generate_device(seed, device_id, n, noise)
    return Entity(device_id, SimulatedSource(dev, np.random.default_rng(read_seed)), helper_dir), dev


class Tap:
    """Socket wrapper that records every byte in both directions."""

    def __init__(self, sock):
        self.sock = sock
        self.sent = bytearray()
        self.received = bytearray()

    def sendall(self, data):
        self.sent += data
        self.sock.sendall(data)

    def recv(self, count):
        data = self.sock.recv(count)
        self.received += data
        return data


def split_frames(stream: bytes):
    out, pos = [], 0
    while pos < len(stream):
        (length,) = struct.unpack_from(">I", stream, pos)
        out.append((stream[pos + 4], bytes(stream[pos + 5:pos + 4 + length])))
        pos += 4 + length
    return out


# -- message codecs -------------------------------------------------------------------


def test_frame_layout():
    frame = encode_frame(FrameType.AUTH_RESULT, Result(True, 3, 2048, 61).encode())
    assert frame[:4] == struct.pack(">I", 1 + 13)
    assert frame[4] == 0x06
    assert frame[5:] == bytes([1]) + struct.pack(">III", 3, 2048, 61)


def test_codecs_roundtrip():
    h = Hello("dev-7", Intent.ENROLL, overwrite=True)
    assert Hello.decode(h.encode()) == h
    c = Challenge(16, 1024, b"abcdefgh", H138, 5, False)
    assert Challenge.decode(c.encode()) == c
    c = Challenge(0, 64, b"\x00" * 8, None, 1)
    assert Challenge.decode(c.encode()) == c
    m = ResponseMessage(b"12345678", Response([1, 0, 1, 1, 0, 0, 0, 0, 1]))
    assert ResponseMessage.decode(m.encode()) == m
    assert m.encode()[8:] == struct.pack(">I", 9) + bytes([0b00001101, 0b1])


def test_hello_rejects_bad_magic_and_trailing_bytes():
    payload = Hello("x", Intent.AUTH).encode()
    with pytest.raises(ProtocolError) as e:
        Hello.decode(b"XXXX" + payload[4:])
    assert e.value.code == ErrorCode.MALFORMED
    with pytest.raises(ProtocolError):
        Hello.decode(payload + b"\x00")


def test_parse_address():
    assert parse_address("127.0.0.1:7390") == ("127.0.0.1", 7390)
    with pytest.raises(ValueError):
        parse_address("localhost")


# -- decision rule ----------------------------------------------------------------------


def test_decision_is_integer_exact():
    enrolled = Response(np.zeros(10, dtype=np.uint8))
    three = Response([1, 1, 1] + [0] * 7)
    # 0.3 * 10 is 2.9999999999999996 in floating point
    assert decide("d", enrolled, three, ThresholdPolicy(0.3)).accepted
    assert not decide("d", enrolled, three, ThresholdPolicy(0.29)).accepted


def test_decision_matches_ber_comparison():
    rng = np.random.default_rng(0)
    enrolled = Response(rng.integers(0, 2, 2048))
    for _ in range(200):
        flips = rng.integers(0, 120)
        noisy = enrolled.bits.copy()
        noisy[rng.choice(2048, flips, replace=False)] ^= 1
        tau = rng.integers(0, 100) / 2048
        d = decide("d", enrolled, Response(noisy), ThresholdPolicy(tau))
        assert d.accepted == (d.measured_ber <= d.tau_used)


def test_policy_validation():
    with pytest.raises(ValueError):
        ThresholdPolicy(1.5)
    with pytest.raises(ValueError):
        ThresholdPolicy(0.1, "guess")


def test_verifier_config_divisibility():
    with pytest.raises(ValueError):
        VerifierConfig(store_path="x", policy=ThresholdPolicy(0.1), variant=H128, challenge_length=100)


# -- sessions over loopback ----------------------------------------------------------------


def test_noise_free_round_trip(make_verifier, tmp_path):
    v, addr = make_verifier(variant=H74, mv_count=3)
    ent, dev = entity_for("quiet", noise=NoiseProfile.noiseless(), helper_dir=tmp_path / "nvs")
    enrolled = ent.enroll(addr)
    assert enrolled == dev.stable_response()
    result = ent.authenticate(addr)
    assert result.accepted and result.hd_bits == 0
    rec = v.store.get("quiet")
    assert rec.enrolled_response == dev.stable_response()
    assert rec.helper is None
    assert v.audit.rows()[-1]["accepted"] == "true"


def test_challenge_window(make_verifier):
    v, addr = make_verifier(mv_count=1, challenge_offset=512, challenge_length=256)
    ent, dev = entity_for("w", noise=NoiseProfile.noiseless())
    assert ent.enroll(addr) == dev.stable_response()[512:768]
    assert ent.authenticate(addr).n == 256


def test_window_past_end_is_length_error(make_verifier):
    _, addr = make_verifier(mv_count=1, challenge_offset=2000, challenge_length=256)
    ent, _ = entity_for("w")
    with pytest.raises(ProtocolError) as e:
        ent.enroll(addr)
    assert e.value.code == ErrorCode.LENGTH_MISMATCH


def test_entity_persists_helper_bytes(make_verifier, tmp_path):
    _, addr = make_verifier(variant=H128, mv_count=3, challenge_length=64)
    ent, _ = entity_for("small", n=64, helper_dir=tmp_path / "nvs")
    ent.enroll(addr)
    files = list((tmp_path / "nvs").iterdir())
    assert len(files) == 1
    assert len(ent.load_helper(0, 64).parity_blocks) == 8


def test_duplicate_enrollment(make_verifier):
    _, addr = make_verifier(mv_count=1)
    ent, _ = entity_for("dup")
    ent.enroll(addr)
    with pytest.raises(ProtocolError) as e:
        ent.enroll(addr)
    assert e.value.code == ErrorCode.DUPLICATE_ENROLLMENT
    ent.enroll(addr, overwrite=True)


def test_unknown_device(make_verifier):
    v, addr = make_verifier()
    ent, _ = entity_for("ghost")
    with pytest.raises(ProtocolError) as e:
        ent.authenticate(addr)
    assert e.value.code == ErrorCode.UNKNOWN_DEVICE
    row = v.audit.rows()[-1]
    assert row["device_id"] == "ghost" and row["error_code"] == "2"


def test_malformed_magic_closes_connection(make_verifier):
    _, addr = make_verifier()
    with socket.create_connection(addr, timeout=5) as s:
        bad = b"NOPE" + Hello("x", Intent.AUTH).encode()[4:]
        send_frame(s, FrameType.HELLO, bad)
        ftype, payload = recv_frame(s)
        assert ftype == FrameType.ERROR and payload[0] == 1
        assert s.recv(1) == b""


def test_wrong_first_frame(make_verifier):
    _, addr = make_verifier()
    with socket.create_connection(addr, timeout=5) as s:
        send_frame(s, FrameType.AUTH_RESPONSE, b"")
        ftype, payload = recv_frame(s)
        assert ftype == FrameType.ERROR and payload[0] == ErrorCode.MALFORMED


def test_stale_nonce_rejected(make_verifier):
    _, addr = make_verifier(mv_count=1)
    ent, _ = entity_for("n1")
    ent.enroll(addr)
    with socket.create_connection(addr, timeout=5) as s:
        send_frame(s, FrameType.HELLO, Hello("n1", Intent.AUTH).encode())
        ch = Challenge.decode(expect(s, FrameType.AUTH_CHALLENGE))
        stale = bytes(8) if ch.nonce != bytes(8) else b"\x01" * 8
        send_frame(s, FrameType.AUTH_RESPONSE, ResponseMessage(stale, ent.stabilized_read(1)).encode())
        with pytest.raises(ProtocolError) as e:
            expect(s, FrameType.AUTH_RESULT)
        assert e.value.code == ErrorCode.STALE_NONCE


def test_replayed_response_is_stale(make_verifier):
    _, addr = make_verifier(mv_count=1)
    ent, _ = entity_for("r1")
    ent.enroll(addr)
    tap_holder = {}
    with socket.create_connection(addr, timeout=5) as s:
        tap = Tap(s)
        ent.authenticate_over(tap)
        tap_holder["sent"] = bytes(tap.sent)
    # replay the recorded session bytes verbatim: the new challenge carries a fresh nonce
    frames = split_frames(tap_holder["sent"])
    with socket.create_connection(addr, timeout=5) as s:
        for ftype, payload in frames:
            send_frame(s, FrameType(ftype), payload)
            if ftype == FrameType.HELLO:
                expect(s, FrameType.AUTH_CHALLENGE)
        with pytest.raises(ProtocolError) as e:
            expect(s, FrameType.AUTH_RESULT)
        assert e.value.code == ErrorCode.STALE_NONCE


def test_length_mismatch(make_verifier):
    _, addr = make_verifier(mv_count=1)
    ent, _ = entity_for("l1")
    ent.enroll(addr)
    with socket.create_connection(addr, timeout=5) as s:
        send_frame(s, FrameType.HELLO, Hello("l1", Intent.AUTH).encode())
        ch = Challenge.decode(expect(s, FrameType.AUTH_CHALLENGE))
        short = Response(np.zeros(100, dtype=np.uint8))
        send_frame(s, FrameType.AUTH_RESPONSE, ResponseMessage(ch.nonce, short).encode())
        with pytest.raises(ProtocolError) as e:
            expect(s, FrameType.AUTH_RESULT)
        assert e.value.code == ErrorCode.LENGTH_MISMATCH


def test_helper_never_on_the_wire(make_verifier, tmp_path):
    _, addr = make_verifier(variant=H84, mv_count=5)
    ent, _ = entity_for("loc", helper_dir=tmp_path / "nvs")
    captured = []
    with socket.create_connection(addr, timeout=5) as s:
        tap = Tap(s)
        ent.enroll_over(tap)
        captured.append(tap)
    with socket.create_connection(addr, timeout=5) as s:
        tap = Tap(s)
        assert ent.authenticate_over(tap).accepted
        captured.append(tap)

    helper = ent.load_helper(0, 2048)
    parity = helper.parity_blocks
    for tap in captured:
        for stream in (tap.sent, tap.received):
            assert parity[:32] not in bytes(stream)
            for ftype, payload in split_frames(bytes(stream)):
                if ftype in (FrameType.ENROLL_RESP, FrameType.AUTH_RESPONSE):
                    # nonce + bit count + packed response, nothing else
                    assert len(payload) == 8 + 4 + 256
                else:
                    assert len(payload) < 64


def test_verifier_side_ec(make_verifier):
    v, addr = make_verifier(variant=H74, mv_count=5, ec_location=EC_AT_VERIFIER, policy=ThresholdPolicy(0.0))
    ent, dev = entity_for("vec")
    enrolled = ent.enroll(addr)
    rec = v.store.get("vec")
    assert rec.helper == enroll_helper(enrolled, H74)
    assert ent.load_helper(0, 2048) is None
    results = [ent.authenticate(addr) for _ in range(5)]
    # residual errors after correction at the verifier are tiny
    assert np.mean([r.hd_bits for r in results]) < 10
    assert v.decisions[-1].decode_summary["single_corrected"] > 0


def test_impostor_rejected(make_verifier):
    _, addr = make_verifier(variant=H74, mv_count=5)
    genuine, _ = entity_for("victim", seed=1)
    genuine.enroll(addr)
    impostor_dev = generate_device(999, "victim", 2048)
    impostor = Entity("victim", SimulatedSource(impostor_dev, np.random.default_rng(1)))
    result = impostor.authenticate(addr)
    assert not result.accepted
    assert result.measured_ber > 0.4
    # the chance of the opposite is the binomial tail at 102 bits
    assert far(ImpostorModel(2048), 0.05) < 1e-250


def test_genuine_acceptance_rate_h74_n10(make_verifier, tmp_path):
    _, addr = make_verifier(variant=H74, mv_count=10, policy=ThresholdPolicy(0.03))
    ent, _ = entity_for("g", seed=5, helper_dir=tmp_path / "nvs")
    ent.enroll(addr)
    accepted = sum(ent.authenticate(addr).accepted for _ in range(100))
    assert accepted >= 99


def test_store_survives_restart(tmp_path):
    cfg = dict(store_path=tmp_path / "crp.jsonl", policy=ThresholdPolicy(0.05), variant=H84, mv_count=3)
    v1 = Verifier(VerifierConfig(**cfg))
    addr = v1.start()
    ent, _ = entity_for("durable", helper_dir=tmp_path / "nvs", read_seed=3)
    ent.enroll(addr)
    first = ent.authenticate(addr)
    v1.shutdown()

    v2 = Verifier(VerifierConfig(**cfg))
    addr = v2.start()
    try:
        assert v2.store.get("durable") == v1.store.get("durable")
        second = ent.authenticate(addr)
        assert second.accepted == first.accepted
    finally:
        v2.shutdown()


def test_store_compacts_superseded_lines(tmp_path):
    path = tmp_path / "crp.jsonl"
    v = Verifier(VerifierConfig(store_path=path, policy=ThresholdPolicy(0.05), mv_count=1))
    addr = v.start()
    ent, _ = entity_for("c")
    try:
        ent.enroll(addr)
        ent.enroll(addr, overwrite=True)
    finally:
        v.shutdown()
    assert len(path.read_text().splitlines()) == 2
    store = CrpStore(path)
    assert len(store) == 1
    assert len(path.read_text().splitlines()) == 1


def test_concurrent_sessions(make_verifier):
    _, addr = make_verifier(mv_count=3, variant=H2216)
    entities = [entity_for(f"c{i}", seed=i)[0] for i in range(6)]
    for e in entities:
        e.enroll(addr)
    results = {}

    def run(e):
        results[e.device_id] = [e.authenticate(addr).accepted for _ in range(3)]

    threads = [threading.Thread(target=run, args=(e,)) for e in entities]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert all(all(r) for r in results.values())


def test_dump_source_replays(make_verifier, tmp_path):
    _, addr = make_verifier(variant=H74, mv_count=3)
    dev = generate_device(1, "hw", 2048)
    rng = np.random.default_rng(0)
    reads = [Response(r) for r in dev.sample_responses(rng, 3)]
    ent = Entity("hw", DumpSource(reads), tmp_path / "nvs")
    enrolled = ent.enroll(addr)
    again = Entity("hw", DumpSource(reads), tmp_path / "nvs")
    assert again.stabilized_read(3) == enrolled
    assert again.authenticate(addr).hd_bits == 0


def test_transport_failure():
    ent, _ = entity_for("x")
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        port = s.getsockname()[1]
    with pytest.raises(TransportError):
        ent.authenticate(("127.0.0.1", port), timeout=2)


def test_variant_tag_none_on_wire():
    assert HammingVariant.parse("none") is None
    c = Challenge(0, 8, b"n" * 8, None, 1)
    assert c.encode()[16] == 0xFF
