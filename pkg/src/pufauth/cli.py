"""``pufauth`` command line.

Exit codes: 0 ok, 2 protocol reject, 3 invalid config, 4 transport failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import calibration as cal
from .hamming import HammingVariant
from .harness import ExperimentPlan, PlanError, calibrate_table, run_sweep, write_calibration
from .protocol import (
    EC_AT_ENTITY,
    EC_AT_VERIFIER,
    DumpSource,
    Entity,
    ProtocolError,
    SimulatedSource,
    ThresholdPolicy,
    TransportError,
    Verifier,
    VerifierConfig,
    parse_address,
)
from .puf_model import Fleet, NoiseProfile, generate_device, load_dump, save_dump

EXIT_OK = 0
EXIT_REJECT = 2
EXIT_CONFIG = 3
EXIT_TRANSPORT = 4

log = logging.getLogger("pufauth")


def _variant(text: str) -> HammingVariant | None:
    try:
        return HammingVariant.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _noise_args(p: argparse.ArgumentParser) -> None:
    d = NoiseProfile()
    p.add_argument("--fraction-unstable", type=float, default=d.fraction_unstable)
    p.add_argument("--stable-eps", type=float, default=d.stable_eps)
    p.add_argument("--unstable-max", type=float, default=d.unstable_max)


def _device_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--device-id", required=True)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--seed", type=int, help="master seed of a simulated device")
    src.add_argument("--dump", type=Path, help="replay raw readings recorded in a dump file")
    p.add_argument("--fleet", type=Path, help="take device parameters from a fleet JSON document")
    p.add_argument("--cells", type=int, default=2048, help="simulated SRAM cells")
    p.add_argument("--bias-q", type=float, default=0.5)
    p.add_argument("--read-seed", type=int, help="seed the per-read noise (default: fresh entropy)")
    _noise_args(p)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pufauth", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sweep", help="run the seeded experiment sweep and write CSV tables")
    p.add_argument("--config", type=Path, help="ExperimentPlan JSON")
    p.add_argument("--out", type=Path, help="output directory (env PUFAUTH_OUTPUT_DIR also works)")
    p.add_argument("--seed", type=int)
    p.add_argument("--devices", type=int)
    p.add_argument("--iterations", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--report", action="store_true", help="render figures after the sweep")
    p.add_argument("--format", choices=("png", "svg", "pdf"), default="png")

    p = sub.add_parser("calibrate", help="derive tau_min/tau_max/SM_ec from a BER table")
    p.add_argument("ber_csv", type=Path)
    p.add_argument("--config", type=Path, help="calibration JSON (alpha_far, alpha_frr, n_min, sm_min, sm_ceil)")
    p.add_argument("--alpha-far", type=float, action="append")
    p.add_argument("--alpha-frr", type=float)
    p.add_argument("--n-min", type=int)
    p.add_argument("--out", type=Path, help="calibration CSV (default: next to the input)")

    p = sub.add_parser("report", help="render figures from a sweep directory")
    p.add_argument("results", type=Path)
    p.add_argument("--format", choices=("png", "svg", "pdf"), default="png")
    p.add_argument("--out", type=Path)

    p = sub.add_parser("serve", help="run the verifier")
    p.add_argument("--listen", default="127.0.0.1:7390")
    p.add_argument("--store", type=Path, required=True)
    p.add_argument("--audit", type=Path)
    p.add_argument("--tau", type=float, required=True)
    p.add_argument("--calibrated", action="store_true", help="mark tau as a calibrated tau_min")
    p.add_argument("--variant", type=_variant, default=None)
    p.add_argument("--votes", type=int, default=5)
    p.add_argument("--offset", type=int, default=0)
    p.add_argument("--length", type=int, default=2048)
    p.add_argument("--ec-at", choices=(EC_AT_ENTITY, EC_AT_VERIFIER), default=EC_AT_ENTITY)

    for name, helptext in (("enroll", "enroll a device with a verifier"),
                           ("auth", "authenticate a device against a verifier")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--connect", required=True)
        p.add_argument("--helper-dir", type=Path, help="entity-side helper store")
        p.add_argument("--timeout", type=float, default=30.0)
        _device_args(p)
        if name == "enroll":
            p.add_argument("--overwrite", action="store_true")

    p = sub.add_parser("entity", help="record raw readings of a simulated device into a dump file")
    _device_args(p)
    p.add_argument("--reads", type=int, default=20)
    p.add_argument("--out", type=Path, required=True)
    return parser


# -- commands ------------------------------------------------------------------------


def cmd_sweep(args) -> int:
    plan = ExperimentPlan.load(args.config) if args.config else ExperimentPlan()
    for attr, value in (("master_seed", args.seed), ("devices", args.devices),
                        ("iterations", args.iterations), ("workers", args.workers)):
        if value is not None:
            setattr(plan, attr, value)
    result = run_sweep(plan, args.out)
    for name, path in result.files.items():
        print(f"{name}: {path} ({result.rows[name]} rows)")
    if args.report:
        from .report import render_report

        for path in render_report(result.output_dir, args.format):
            print(f"figure: {path}")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    cfg = cal.CalibrationConfig()
    if args.config:
        cfg = cal.CalibrationConfig(**json.loads(args.config.read_text()))
    alphas = args.alpha_far or cfg.alpha_far
    alpha_frr = args.alpha_frr if args.alpha_frr is not None else cfg.alpha_frr
    n_min = args.n_min if args.n_min is not None else cfg.n_min
    results = calibrate_table(args.ber_csv, alphas, alpha_frr, n_min)
    out = args.out or args.ber_csv.with_name("calibration.csv")
    write_calibration(out, results, cfg.sm_min, cfg.sm_ceil)
    for r in results:
        rec = "none (unviable)" if r.recommended_tau is None else f"{r.recommended_tau:.6g}"
        print(f"n={r.n} N={r.votes} {r.variant} alpha_far={r.alpha_far:g}: "
              f"tau_min={r.tau_min:.6g} tau_max={r.tau_max:.6g} sm_ec={r.sm_ec:+.6g} "
              f"floored={r.floored} n_valid={r.n_valid} recommended_tau={rec}")
    print(f"wrote {out}")
    return EXIT_OK


def cmd_report(args) -> int:
    from .report import render_report

    for path in render_report(args.results, args.format, args.out):
        print(path)
    return EXIT_OK


def cmd_serve(args) -> int:
    host, port = parse_address(args.listen)
    cfg = VerifierConfig(
        store_path=args.store,
        audit_path=args.audit,
        policy=ThresholdPolicy(args.tau, "calibrated" if args.calibrated else "manual"),
        host=host,
        port=port,
        variant=args.variant,
        mv_count=args.votes,
        challenge_offset=args.offset,
        challenge_length=args.length,
        ec_location=args.ec_at,
    )
    verifier = Verifier(cfg)
    try:
        bound = verifier.bind()
    except OSError as exc:
        print(f"cannot bind {args.listen}: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT
    print(f"listening on {bound[0]}:{bound[1]}", flush=True)
    try:
        verifier.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        verifier.shutdown()
    return EXIT_OK


def _make_entity(args) -> Entity:
    if args.dump is not None:
        return Entity(args.device_id, DumpSource(load_dump(args.dump)), args.helper_dir)
    noise = NoiseProfile(args.fraction_unstable, args.stable_eps, args.unstable_max)
    if args.fleet is not None:
        fleet = Fleet.from_json(args.fleet.read_text())
        matches = [d for d in fleet.devices if d.device_id == args.device_id]
        if not matches:
            raise ValueError(f"{args.device_id} not in fleet {args.fleet}")
        device = matches[0]
    else:
        device = generate_device(args.seed, args.device_id, args.cells, noise, args.bias_q)
    rng = np.random.default_rng(args.read_seed)
    return Entity(args.device_id, SimulatedSource(device, rng), getattr(args, "helper_dir", None))


def cmd_entity(args) -> int:
    entity = _make_entity(args)
    count = save_dump(args.out, (entity.source.read() for _ in range(args.reads)))
    print(f"wrote {count} readings of {entity.source.n_cells} bits to {args.out}")
    return EXIT_OK


def cmd_enroll(args) -> int:
    entity = _make_entity(args)
    response = entity.enroll(parse_address(args.connect), overwrite=args.overwrite, timeout=args.timeout)
    print(f"enrolled {args.device_id}: {len(response)} bits")
    return EXIT_OK


def cmd_auth(args) -> int:
    entity = _make_entity(args)
    result = entity.authenticate(parse_address(args.connect), timeout=args.timeout)
    verdict = "accepted" if result.accepted else "rejected"
    print(f"{args.device_id}: {verdict} (hd={result.hd_bits}/{result.n}, "
          f"ber={result.measured_ber:.6f}, max_bits={result.tau_bits})")
    return EXIT_OK if result.accepted else EXIT_REJECT


COMMANDS = {
    "sweep": cmd_sweep,
    "calibrate": cmd_calibrate,
    "report": cmd_report,
    "serve": cmd_serve,
    "entity": cmd_entity,
    "enroll": cmd_enroll,
    "auth": cmd_auth,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * args.verbose, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ProtocolError as exc:
        print(f"protocol error {exc.code}: {exc.message}", file=sys.stderr)
        return EXIT_REJECT
    except TransportError as exc:
        print(f"transport failure: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT
    except (PlanError, ValueError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
