"""Seeded experiment sweeps producing the CSV tables behind every figure."""

from __future__ import annotations

import csv
import json
import logging
import os
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import calibration as cal
from .hamming import ALL_VARIANTS, HammingVariant, HelperData, decode_bits, enroll_helper, parity_footprint
from .puf_model import Fleet, NoiseProfile, PufDevice, Response, derive_seed
from .stabilizer import majority_vote

log = logging.getLogger(__name__)

OUTPUT_DIR_ENV = "PUFAUTH_OUTPUT_DIR"

VARIANT_LABELS = ("none",) + tuple(v.label for v in ALL_VARIANTS)

SCHEMA_VERSIONS = {
    "ber_vs_votes": 1,
    "ber_summary": 1,
    "uniformity": 1,
    "parity_footprint": 1,
    "timing": 1,
    "sm_scaling": 1,
    "target_zone": 1,
    "far_frr": 1,
    "delta_sm": 1,
    "bias_sweep": 1,
    "correlation_sweep": 1,
}

COLUMNS = {
    "ber_vs_votes": ("device_id", "iteration", "N", "variant", "n", "block", "hd_bits", "ber"),
    "ber_summary": ("n", "N", "variant", "count", "mean", "median", "q1", "q3",
                    "whisker_low", "whisker_high", "outliers"),
    "uniformity": ("device_id", "iteration", "N", "variant", "raw_uniformity", "stabilized_uniformity"),
    "parity_footprint": ("variant", "data_bits", "codeword_bits", "parity_bits_per_block",
                         "response_bytes", "blocks", "parity_bits", "nvs_bytes", "code_rate"),
    "timing": ("variant", "N", "iterations", "read_us", "mv_us", "ec_us", "store_us"),
    "sm_scaling": cal.CALIBRATION_COLUMNS,
    "target_zone": ("n", "N", "variant", "alpha_far", "sm_ec", "zone"),
    "far_frr": ("n", "N", "variant", "k", "tau", "far", "frr"),
    "delta_sm": ("n", "mismatch_p", "alpha_base", "alpha_tight", "tau_max_base", "tau_max_tight", "delta_sm"),
    "bias_sweep": ("n", "bias", "reading", "mismatch_p", "alpha_far", "tau_max_ideal", "tau_max_biased", "delta_sm"),
    "correlation_sweep": ("n", "rho_chip", "mismatch_p", "alpha_far", "tau_max_uncorrelated",
                          "tau_max_correlated", "delta_sm"),
}

# timing depends on the host clock; every other table is a pure function of the plan
NONDETERMINISTIC_TABLES = frozenset({"timing"})


class PlanError(ValueError):
    pass


@dataclass
class ExperimentPlan:
    devices: int = 6
    noise: NoiseProfile = field(default_factory=NoiseProfile)
    bias_q: float = 0.5
    rho_chip: float = 0.0
    base_bits: int = 2048
    n_grid: tuple[int, ...] = (64, 128, 256, 512, 1024, 2048)
    votes_grid: tuple[int, ...] = (1, 3, 5, 10, 20)
    variants: tuple[str, ...] = VARIANT_LABELS
    iterations: int = 45
    alpha_far: tuple[float, ...] = (cal.DEFAULT_ALPHA_FAR, cal.TIGHT_ALPHA_FAR)
    alpha_frr: float = cal.DEFAULT_ALPHA_FRR
    master_seed: int = 1
    output_dir: str = "results"
    analytic_n_max: int = 2048
    bias_grid: tuple[float, ...] = (0.5, 0.48, 0.46, 0.44, 0.42, 0.40)
    rho_grid: tuple[float, ...] = (0.0, 0.05, 0.10, 0.15, 0.20, 0.25, 0.30)
    far_frr_sizes: tuple[int, ...] = (64, 2048)
    timing_iterations: int = 5
    n_min: int = cal.DEFAULT_N_MIN
    sm_min: float = cal.DEFAULT_SM_MIN
    sm_ceil: float = cal.DEFAULT_SM_CEIL
    workers: int = 1

    def __post_init__(self):
        if isinstance(self.noise, dict):
            self.noise = NoiseProfile(**self.noise)
        for name in ("n_grid", "votes_grid", "variants", "alpha_far", "bias_grid", "rho_grid", "far_frr_sizes"):
            setattr(self, name, tuple(getattr(self, name)))

    def parsed_variants(self) -> list[HammingVariant | None]:
        return [HammingVariant.parse(v) for v in self.variants]

    def validate(self) -> None:
        for name in ("n_grid", "votes_grid", "variants", "alpha_far"):
            if not getattr(self, name):
                raise PlanError(f"{name} must not be empty")
        if self.devices < 1:
            raise PlanError("need at least one device")
        if self.iterations < 1:
            raise PlanError("iterations must be >= 1")
        if any(not 1 <= v <= 255 for v in self.votes_grid):
            raise PlanError("votes must lie in [1, 255]")
        try:
            variants = self.parsed_variants()
        except ValueError as exc:
            raise PlanError(str(exc)) from exc
        for n in self.n_grid:
            if n < 1 or self.base_bits % n:
                raise PlanError(f"n={n} does not divide the {self.base_bits}-bit base response")
            for v in variants:
                if v is not None and n % v.data_bits:
                    raise PlanError(f"n={n} not divisible by {v.label} data width")
        for v in variants:
            if v is not None and self.base_bits % v.data_bits:
                raise PlanError(f"base_bits not divisible by {v.label} data width")
        if any(not 0 < a < 1 for a in self.alpha_far) or not 0 < self.alpha_frr < 1:
            raise PlanError("alpha values must lie in (0, 1)")
        if self.analytic_n_max < 1:
            raise PlanError("analytic_n_max must be >= 1")
        if self.sm_min < 0 or self.sm_ceil <= self.sm_min:
            raise PlanError("need 0 <= sm_min < sm_ceil")

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["noise"] = asdict(self.noise)
        for k, v in doc.items():
            if isinstance(v, tuple):
                doc[k] = list(v)
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentPlan":
        known = set(cls.__dataclass_fields__)
        unknown = set(doc) - known
        if unknown:
            raise PlanError(f"unknown plan keys: {sorted(unknown)}")
        try:
            return cls(**doc)
        except (TypeError, ValueError) as exc:
            raise PlanError(str(exc)) from exc

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentPlan":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except json.JSONDecodeError as exc:
            raise PlanError(f"{path}: {exc}") from exc

    def resolved_output_dir(self) -> Path:
        return Path(os.environ.get(OUTPUT_DIR_ENV) or self.output_dir)

    def fleet(self) -> Fleet:
        return Fleet.generate(self.master_seed, self.devices, self.base_bits, self.noise, self.bias_q, self.rho_chip)


# -- simulation ----------------------------------------------------------------------


@dataclass
class CellResult:
    """All responses for one (device, N) cell; paired across variants."""

    device_id: str
    votes: int
    enrolled: np.ndarray                 # (base_bits,)
    raw_first: np.ndarray                # (iterations, base_bits)
    corrected: dict[str, np.ndarray]     # variant label -> (iterations, base_bits)


def simulate_cell(
    device: PufDevice,
    votes: int,
    variants: Sequence[HammingVariant | None],
    iterations: int,
    seed: int,
) -> CellResult:
    """One enrollment followed by ``iterations`` authentications.

    The same raw readings feed every variant so that variant comparisons are
    paired.
    """
    rng = np.random.default_rng(seed)
    enrolled = majority_vote(device.sample_responses(rng, votes))
    helpers = {
        v.label: enroll_helper(Response(enrolled), v) for v in variants if v is not None
    }
    raw_first = np.empty((iterations, device.n_cells), dtype=np.uint8)
    corrected = {
        (v.label if v else "none"): np.empty((iterations, device.n_cells), dtype=np.uint8)
        for v in variants
    }
    for it in range(iterations):
        reads = device.sample_responses(rng, votes)
        raw_first[it] = reads[0]
        stable = majority_vote(reads)
        for v in variants:
            if v is None:
                corrected["none"][it] = stable
            else:
                corrected[v.label][it], _, _ = decode_bits(stable, helpers[v.label])
    return CellResult(device.device_id, votes, enrolled, raw_first, corrected)


def block_hd(responses: np.ndarray, enrolled: np.ndarray, n: int) -> np.ndarray:
    """Hamming distances per block: (iterations, base_bits // n)."""
    diff = responses != enrolled
    return diff.reshape(diff.shape[0], -1, n).sum(axis=2)


def boxplot_stats(values: np.ndarray) -> dict:
    v = np.sort(np.asarray(values, dtype=np.float64))
    q1, med, q3 = np.percentile(v, [25, 50, 75])
    iqr = q3 - q1
    lo_fence, hi_fence = q1 - 1.5 * iqr, q3 + 1.5 * iqr
    inside = v[(v >= lo_fence) & (v <= hi_fence)]
    return {
        "count": int(v.size),
        "mean": float(v.mean()),
        "median": float(med),
        "q1": float(q1),
        "q3": float(q3),
        "whisker_low": float(inside.min()),
        "whisker_high": float(inside.max()),
        "outliers": int(v.size - inside.size),
    }


# -- table output ----------------------------------------------------------------------


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if value is None:
        return ""
    return str(value)


def write_table(path: Path, name: str, rows: Iterable[dict | Sequence]) -> int:
    cols = COLUMNS[name]
    count = 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for row in rows:
            if isinstance(row, dict):
                row = [row[c] for c in cols]
            w.writerow([_fmt(x) for x in row])
            count += 1
    return count


@dataclass
class SweepResult:
    output_dir: Path
    files: dict[str, Path]
    rows: dict[str, int]
    genuine: dict[tuple[int, int, str], np.ndarray]  # (n, N, variant) -> hd bits
    calibration: list[cal.CalibrationResult]


def run_sweep(plan: ExperimentPlan, output_dir: str | Path | None = None) -> SweepResult:
    plan.validate()
    out = Path(output_dir) if output_dir is not None else plan.resolved_output_dir()
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise PlanError(f"cannot create output directory {out}: {exc}") from exc

    fleet = plan.fleet()
    variants = plan.parsed_variants()
    labels = [v.label if v else "none" for v in variants]
    cells = [(d, votes) for d in fleet.devices for votes in plan.votes_grid]

    def run(cell):
        device, votes = cell
        seed = derive_seed(plan.master_seed, "cell", device.device_id, votes)
        return simulate_cell(device, votes, variants, plan.iterations, seed)

    log.info("simulating %d cells x %d iterations", len(cells), plan.iterations)
    if plan.workers > 1:
        with ThreadPoolExecutor(plan.workers) as pool:
            results = list(pool.map(run, cells))
    else:
        results = [run(c) for c in cells]

    files: dict[str, Path] = {}
    rows: dict[str, int] = {}

    def emit(name: str, table_rows) -> None:
        path = out / f"{name}.csv"
        rows[name] = write_table(path, name, table_rows)
        files[name] = path

    # per-block Hamming distances per cell, then pooled per (n, N, variant)
    cell_hd = [
        {(label, n): block_hd(res.corrected[label], res.enrolled, n) for label in labels for n in plan.n_grid}
        for res in results
    ]

    def ber_rows():
        for res, per_n in zip(results, cell_hd):
            for it in range(plan.iterations):
                for label in labels:
                    for n in plan.n_grid:
                        for block, h in enumerate(per_n[(label, n)][it].tolist()):
                            yield (res.device_id, it, res.votes, label, n, block, h, h / n)

    emit("ber_vs_votes", ber_rows())
    genuine: dict[tuple[int, int, str], list[np.ndarray]] = {}
    for res, per_n in zip(results, cell_hd):
        for (label, n), hd in per_n.items():
            genuine.setdefault((n, res.votes, label), []).append(hd.reshape(-1))
    hd_map = {k: np.concatenate(v) for k, v in genuine.items()}

    emit("ber_summary", (
        {"n": n, "N": votes, "variant": label, **boxplot_stats(hd_map[(n, votes, label)] / n)}
        for n in plan.n_grid for votes in plan.votes_grid for label in labels
    ))

    def uniformity_rows():
        for res in results:
            for it in range(plan.iterations):
                raw_u = float(res.raw_first[it].mean())
                for label in labels:
                    yield (res.device_id, it, res.votes, label, raw_u, float(res.corrected[label][it].mean()))

    emit("uniformity", uniformity_rows())

    response_bytes = plan.base_bits // 8
    emit("parity_footprint", (
        (v.label, v.data_bits, v.codeword_bits, v.parity_bits, response_bytes,
         fp.blocks, fp.parity_bits, fp.nvs_bytes, fp.code_rate)
        for v in variants if v is not None
        for fp in [parity_footprint(v, response_bytes)]
    ))

    emit("timing", measure_timing(fleet.devices[0], plan, variants))

    calibration = []
    for alpha in plan.alpha_far:
        for n in plan.n_grid:
            for votes in plan.votes_grid:
                for label in labels:
                    sample = cal.GenuineSample.from_bits(hd_map[(n, votes, label)], n, votes, label)
                    calibration.append(cal.calibrate(sample, alpha, plan.alpha_frr, n_min=plan.n_min))
    emit("sm_scaling", (r.row() for r in calibration))
    emit("target_zone", (
        (d.result.n, d.result.votes, d.result.variant, d.result.alpha_far, d.result.sm_ec, d.zone)
        for d in cal.target_zone_filter(calibration, plan.sm_min, plan.sm_ceil)
    ))

    far_rows = []
    frr_votes = 1 if 1 in plan.votes_grid else min(plan.votes_grid)
    for n in plan.far_frr_sizes:
        if n not in plan.n_grid:
            continue
        far = cal.far_curve(cal.ImpostorModel(n))
        for label in labels:
            frr = cal.GenuineSample.from_bits(hd_map[(n, frr_votes, label)], n).frr_curve()
            far_rows.extend((n, frr_votes, label, k, k / n, float(far[k]), float(frr[k])) for k in range(n + 1))
    emit("far_frr", far_rows)

    analytic_n = range(1, plan.analytic_n_max + 1)
    base_alpha = plan.alpha_far[0]
    tight_alpha = min(plan.alpha_far) if len(plan.alpha_far) > 1 else cal.TIGHT_ALPHA_FAR
    emit("delta_sm", cal.delta_sm_sweep(base_alpha, tight_alpha, analytic_n))
    # the bias parameter is reported under both readings: bit probability q and direct mismatch p
    emit("bias_sweep", cal.bias_sweep(plan.bias_grid, analytic_n, base_alpha)
         + cal.bias_sweep(plan.bias_grid, analytic_n, base_alpha, as_mismatch=True))
    emit("correlation_sweep", cal.correlation_sweep(plan.rho_grid, analytic_n, base_alpha))

    (out / "fleet.json").write_text(fleet.to_json() + "\n")
    manifest = {
        "schema": {name: SCHEMA_VERSIONS[name] for name in files},
        "columns": {name: list(COLUMNS[name]) for name in files},
        "rows": rows,
        "nondeterministic": sorted(NONDETERMINISTIC_TABLES & set(files)),
        "plan": plan.to_dict(),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return SweepResult(out, files, rows, hd_map, calibration)


def measure_timing(device: PufDevice, plan: ExperimentPlan, variants: Sequence[HammingVariant | None]) -> list[tuple]:
    """Wall-clock per stage on this host: raw reads, MV, EC compute, helper store access."""
    rows = []
    reps = max(1, plan.timing_iterations)
    rng = np.random.default_rng(derive_seed(plan.master_seed, "timing"))
    with tempfile.TemporaryDirectory() as tmp:
        for v in variants:
            label = v.label if v else "none"
            for votes in plan.votes_grid:
                enrolled = majority_vote(device.sample_responses(rng, votes))
                helper_path = Path(tmp) / f"{label}_{votes}.pufh"
                if v is not None:
                    enroll_helper(Response(enrolled), v).save(helper_path)
                acc = {"read": 0, "mv": 0, "ec": 0, "store": 0}
                for _ in range(reps):
                    t0 = time.perf_counter_ns()
                    reads = device.sample_responses(rng, votes)
                    t1 = time.perf_counter_ns()
                    stable = majority_vote(reads)
                    t2 = time.perf_counter_ns()
                    if v is not None:
                        helper = HelperData.load(helper_path)
                        t3 = time.perf_counter_ns()
                        decode_bits(stable, helper)
                        t4 = time.perf_counter_ns()
                    else:
                        t3 = t4 = t2
                    acc["read"] += t1 - t0
                    acc["mv"] += t2 - t1
                    acc["store"] += t3 - t2
                    acc["ec"] += t4 - t3
                us = {k: round(t / reps / 1000.0, 3) for k, t in acc.items()}
                rows.append((label, votes, reps, us["read"], us["mv"], us["ec"], us["store"]))
    return rows


# -- calibration from a BER table --------------------------------------------------------

CALIBRATION_OUTPUT_COLUMNS = cal.CALIBRATION_COLUMNS + ("recommended_tau", "zone")


def load_genuine_table(path: str | Path) -> dict[tuple[int, int, str], list[float]]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        cols = set(reader.fieldnames or ())
        votes_col = "N" if "N" in cols else "votes" if "votes" in cols else None
        missing = [c for c in ("n", "variant") if c not in cols]
        if votes_col is None:
            missing.append("N")
        if "ber" not in cols and "hd_bits" not in cols:
            missing.append("ber")
        if missing:
            raise PlanError(f"{path}: missing columns {missing}")
        groups: dict[tuple[int, int, str], list[float]] = {}
        for row in reader:
            n = int(row["n"])
            value = float(row["ber"]) if "ber" in cols else int(row["hd_bits"]) / n
            groups.setdefault((n, int(row[votes_col]), row["variant"]), []).append(value)
    return groups


def calibrate_table(
    path: str | Path,
    alpha_far: Sequence[float] = (cal.DEFAULT_ALPHA_FAR,),
    alpha_frr: float = cal.DEFAULT_ALPHA_FRR,
    n_min: int = cal.DEFAULT_N_MIN,
) -> list[cal.CalibrationResult]:
    groups = load_genuine_table(path)
    if not groups:
        raise PlanError(f"{path}: no rows")
    results = []
    for alpha in alpha_far:
        for (n, votes, label), values in sorted(groups.items()):
            if not values:
                raise PlanError(f"empty group {(n, votes, label)}")
            sample = cal.GenuineSample(np.array(values), n, votes, label)
            results.append(cal.calibrate(sample, alpha, alpha_frr, n_min=n_min))
    return results


def write_calibration(path: str | Path, results: Sequence[cal.CalibrationResult],
                      sm_min: float = cal.DEFAULT_SM_MIN, sm_ceil: float = cal.DEFAULT_SM_CEIL) -> None:
    decisions = cal.target_zone_filter(results, sm_min, sm_ceil)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CALIBRATION_OUTPUT_COLUMNS)
        for d in decisions:
            row = d.result.row()
            w.writerow([_fmt(row[c]) for c in cal.CALIBRATION_COLUMNS]
                       + [_fmt(d.result.recommended_tau), d.zone])
