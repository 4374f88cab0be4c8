"""Static figures rendered from a sweep's CSV tables."""

from __future__ import annotations

import json
import re
import logging
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

from .harness import SCHEMA_VERSIONS  # noqa: E402

log = logging.getLogger(__name__)

STYLE = {
    "figure.figsize": (6.4, 4.0),
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "legend.fontsize": 7,
    "savefig.bbox": "tight",
    # keep SVG output byte-stable between runs
    "svg.hashsalt": "pufauth",
    "svg.fonttype": "none",
}


class ReportError(RuntimeError):
    pass


def _check_manifest(results: Path) -> dict:
    path = results / "manifest.json"
    if not path.exists():
        raise ReportError(f"{results} has no manifest.json; run a sweep first")
    manifest = json.loads(path.read_text())
    for name, version in manifest.get("schema", {}).items():
        if SCHEMA_VERSIONS.get(name) != version:
            raise ReportError(f"{name}.csv has schema v{version}, this report expects v{SCHEMA_VERSIONS.get(name)}")
    return manifest


def _variant_order(labels) -> list[str]:
    def key(label):
        nums = [int(x) for x in re.findall(r"\d+", label)]
        return (label != "none", nums[::-1])

    return sorted(dict.fromkeys(labels), key=key)


def fig_uniformity(results: Path, ax_pair) -> None:
    u = pd.read_csv(results / "uniformity.csv")
    raw = u.drop_duplicates(["device_id", "iteration", "N"])
    raw = raw[raw.N == raw.N.min()]["raw_uniformity"]
    top = u[u.N == u.N.max()]
    bins = np.linspace(0.45, 0.55, 41)
    ax_pair[0].hist(raw, bins=bins, color="tab:gray")
    ax_pair[0].set_title(f"raw (N={u.N.min()}, no EC)")
    for label in _variant_order(top.variant):
        ax_pair[1].hist(top[top.variant == label].stabilized_uniformity, bins=bins, histtype="step", label=label)
    ax_pair[1].set_title(f"MV (N={u.N.max()}) + EC")
    ax_pair[1].legend()
    for ax in ax_pair:
        ax.set_xlabel("uniformity (fractional HW)")
        ax.axvline(0.5, color="k", lw=0.8, ls=":")


def fig_ber_vs_votes(results: Path, n: int, ax, tau_line: float = 0.03) -> None:
    s = pd.read_csv(results / "ber_summary.csv")
    s = s[s.n == n]
    votes = sorted(s.N.unique())
    labels = _variant_order(s.variant)
    width = 0.8 / len(labels)
    for i, label in enumerate(labels):
        d = s[s.variant == label].set_index("N").loc[votes]
        x = np.arange(len(votes)) + (i - len(labels) / 2 + 0.5) * width
        stats = [
            {"med": r["median"], "q1": r["q1"], "q3": r["q3"], "whislo": r["whisker_low"], "whishi": r["whisker_high"],
             "mean": r["mean"], "fliers": []}
            for _, r in d.iterrows()
        ]
        bp = ax.bxp(stats, positions=x, widths=width * 0.9, showmeans=True, patch_artist=True,
                    meanprops={"marker": "D", "markersize": 3})
        color = f"C{i}"
        for box in bp["boxes"]:
            box.set_facecolor(color)
            box.set_alpha(0.5)
        ax.plot(x, d["median"], color=color, lw=1, label=label)
    ax.axhline(tau_line, color="red", ls="--", lw=1)
    ax.set_xticks(np.arange(len(votes)), [str(v) for v in votes])
    ax.set_xlabel("MV count N")
    ax.set_ylabel("post-correction BER")
    ax.set_title(f"n = {n}")
    ax.legend(ncol=4)


def fig_parity_footprint(results: Path, ax) -> None:
    p = pd.read_csv(results / "parity_footprint.csv")
    ax.bar(p.variant, p.nvs_bytes, color="tab:blue")
    ax.set_ylabel("helper bytes (NVS)")
    twin = ax.twinx()
    twin.plot(p.variant, p.code_rate, "o-", color="tab:red")
    twin.set_ylabel("code rate", color="tab:red")
    twin.grid(False)
    ax.set_title(f"helper data for a {int(p.response_bytes.iloc[0])}-byte response")


def fig_timing(results: Path, ax) -> None:
    t = pd.read_csv(results / "timing.csv")
    votes = 10 if 10 in set(t.N) else int(t.N.max())
    t = t[t.N == votes]
    bottom = np.zeros(len(t))
    for col, color in (("read_us", "tab:blue"), ("mv_us", "tab:orange"), ("ec_us", "tab:red"), ("store_us", "tab:gray")):
        ax.bar(t.variant, t[col], bottom=bottom, color=color, label=col[:-3])
        bottom += t[col].to_numpy()
    ax.set_ylabel("wall-clock per authentication [us]")
    ax.set_title(f"stage timing on this host, N = {votes}")
    ax.legend()


def fig_far_frr(results: Path, n: int, ax) -> None:
    f = pd.read_csv(results / "far_frr.csv")
    f = f[f.n == n]
    first = f[f.variant == f.variant.iloc[0]]
    ax.semilogy(first.tau, first.far.clip(lower=1e-30), color="k", lw=1.5, label="FAR (binomial impostor)")
    for label in _variant_order(f.variant):
        d = f[f.variant == label]
        ax.step(d.tau, d.frr.clip(lower=1e-30), where="post", lw=1, label=f"FRR {label}")
    ax.set_ylim(1e-12, 2)
    ax.set_xlabel("acceptance threshold tau")
    ax.set_title(f"n = {n}, N = {int(f.N.iloc[0])}")
    ax.legend(ncol=2)


def fig_sm_scaling(results: Path, ax, sm_min: float = 0.05, sm_ceil: float = 0.10) -> None:
    s = pd.read_csv(results / "sm_scaling.csv")
    alpha = s.alpha_far.max()
    s = s[s.alpha_far == alpha]
    for votes in sorted(s.N.unique()):
        for label in _variant_order(s.variant):
            d = s[(s.N == votes) & (s.variant == label)].sort_values("n")
            ax.plot(d.n, d.sm_ec, lw=0.8, alpha=0.7)
    ax.axhspan(sm_min, sm_ceil, color="tab:green", alpha=0.15)
    ax.axhline(0, color="red", lw=0.8)
    ax.set_xscale("log", base=2)
    ax.set_xlabel("PUF size n")
    ax.set_ylabel("SM_ec")
    ax.set_title(f"SM_ec, all (N, variant) configs, alpha_FAR = {alpha:g}")


def fig_analytic(results: Path, name: str, group: str, ax, reading: str | None = None) -> None:
    t = pd.read_csv(results / f"{name}.csv")
    title = name.replace("_", " ")
    if reading is not None:
        t = t[t.reading == reading]
        title += f" ({reading.replace('_', ' ')})"
    if group:
        for key in sorted(t[group].unique()):
            d = t[t[group] == key]
            ax.plot(d.n, d.delta_sm, lw=0.6, label=f"{group}={key:g}")
        ax.legend(ncol=2)
    else:
        ax.plot(t.n, t.delta_sm, lw=0.6)
    ax.set_xscale("log", base=2)
    ax.set_xlabel("PUF size n")
    ax.set_ylabel("delta SM_ec")
    ax.set_title(title)


def render_report(results: str | Path, fmt: str = "png", out_dir: str | Path | None = None) -> list[Path]:
    results = Path(results)
    manifest = _check_manifest(results)
    out = Path(out_dir) if out_dir else results
    out.mkdir(parents=True, exist_ok=True)
    plan = manifest.get("plan", {})
    written = []

    def save(fig, stem: str) -> None:
        path = out / f"{stem}.{fmt}"
        fig.savefig(path, format=fmt, metadata={"Date": None} if fmt == "svg" else None)
        plt.close(fig)
        written.append(path)

    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, 2, figsize=(8, 3.2), sharey=True)
        fig_uniformity(results, axes)
        save(fig, "fig_uniformity")

        n_values = sorted(pd.read_csv(results / "ber_summary.csv").n.unique())
        for n in {n_values[0], n_values[-1]}:
            fig, ax = plt.subplots(figsize=(8, 4))
            fig_ber_vs_votes(results, int(n), ax)
            save(fig, f"fig_ber_vs_votes_n{int(n)}")

        fig, ax = plt.subplots()
        fig_parity_footprint(results, ax)
        save(fig, "fig_parity_footprint")

        fig, ax = plt.subplots()
        fig_timing(results, ax)
        save(fig, "fig_timing")

        for n in sorted(pd.read_csv(results / "far_frr.csv").n.unique()):
            fig, ax = plt.subplots()
            fig_far_frr(results, int(n), ax)
            save(fig, f"fig_far_frr_n{int(n)}")

        fig, ax = plt.subplots()
        fig_sm_scaling(results, ax, plan.get("sm_min", 0.05), plan.get("sm_ceil", 0.10))
        save(fig, "fig_sm_scaling")

        for name, group, reading, stem in (
            ("delta_sm", "", None, "fig_delta_sm"),
            ("bias_sweep", "bias", "bit_probability", "fig_bias_sweep_q"),
            ("bias_sweep", "bias", "mismatch", "fig_bias_sweep_p"),
            ("correlation_sweep", "rho_chip", None, "fig_correlation_sweep"),
        ):
            fig, ax = plt.subplots()
            fig_analytic(results, name, group, ax, reading)
            save(fig, stem)

    log.info("wrote %d figures to %s", len(written), out)
    return written
