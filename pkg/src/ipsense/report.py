"""Per-link CSV summaries and SVG figures from a trace and its events."""
from __future__ import annotations

import csv
import json
import re
from pathlib import Path

import numpy as np

from . import plotting
from .changepoint import FIELDS, DetectionEvent, field_values, pair_divergences
from .errors import InvalidArgument
from .samples import split_by_link

WINDOW_COLUMNS = ("window", "t_start_ms", "t_end_ms", "n_oss", "mean_oss_dbm",
                  "std_oss_db", "n_ber", "mean_ber", "kld_oss", "kld_ber")


def load_events(path):
    events = []
    with open(path, encoding="utf-8") as fh:
        for line, text in enumerate(fh, start=1):
            if text.strip():
                try:
                    events.append(DetectionEvent.from_record(json.loads(text)))
                except (ValueError, KeyError) as exc:
                    raise InvalidArgument(f"{path}: line {line}: bad event record ({exc})") from None
    return events


def write_events(events, path):
    with open(path, "w", encoding="utf-8") as fh:
        for e in events:
            fh.write(json.dumps(e.to_record()) + "\n")


def _safe(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]", "_", name)


def window_rows(stream, detectors):
    """One row per detector window of the ``oss`` field's windowing.

    Windows follow the samples usable for each field, so the two KLD
    columns may refer to slightly different sample sets when BER is
    missing on some rows.
    """
    w = detectors["oss"].window_size
    per_field = {}
    for f in FIELDS:
        values, ts = field_values(stream, f, detectors[f])
        per_field[f] = (values, ts, pair_divergences(values, detectors[f]))
    n_windows = max(per_field[f][0].size // detectors[f].window_size for f in FIELDS)
    rows = []
    for k in range(n_windows):
        row = {"window": k}
        ov, ots, okl = per_field["oss"]
        bv, bts, bkl = per_field["ber"]
        wo = slice(k * w, (k + 1) * w)
        wb = slice(k * detectors["ber"].window_size, (k + 1) * detectors["ber"].window_size)
        ts = ots[wo] if ots[wo].size else bts[wb]
        row["t_start_ms"] = int(ts[0]) if ts.size else ""
        row["t_end_ms"] = int(ts[-1]) if ts.size else ""
        row["n_oss"] = int(ov[wo].size)
        row["mean_oss_dbm"] = float(ov[wo].mean()) if ov[wo].size else ""
        row["std_oss_db"] = float(ov[wo].std()) if ov[wo].size else ""
        row["n_ber"] = int(bv[wb].size)
        row["mean_ber"] = (float(bv[wb].mean()) / detectors["ber"].bit_rate
                           if bv[wb].size else "")
        row["kld_oss"] = float(okl[k - 1]) if 0 < k <= okl.size else ""
        row["kld_ber"] = float(bkl[k - 1]) if 0 < k <= bkl.size else ""
        rows.append(row)
    return rows, per_field


def _minutes(ts_ms, t0_ms):
    return (np.asarray(ts_ms, dtype=float) - t0_ms) / 60000.0


def plot_signals(stream, events, path, t0):
    """BER above, OSS below, with detection markers on both panels."""
    fig, (ax_ber, ax_oss) = plotting.new_figure(2)
    ts = np.array([s.timestamp_ms for s in stream])
    ber = np.array([np.nan if s.ber is None else s.ber for s in stream])
    oss = np.array([np.nan if s.oss is None else s.oss for s in stream])
    ax_ber.plot(_minutes(ts, t0), ber, color=plotting.COLORS["ber"])
    ax_oss.plot(_minutes(ts, t0), oss, color=plotting.COLORS["oss"])
    if np.nanmin(ber, initial=np.inf) > 0 and np.isfinite(np.nanmax(ber, initial=np.nan)):
        ax_ber.set_yscale("log")
    ax_ber.set_ylabel("BER")
    ax_oss.set_ylabel("OSS (dBm)")
    ax_oss.set_xlabel("time (min)")
    for e in events:
        for ax in (ax_ber, ax_oss):
            if e.kind == "signal_lost":
                ax.axvspan(_minutes(e.t_start, t0), _minutes(e.t_end, t0),
                           color=plotting.COLORS["signal_lost"], alpha=0.3, lw=0)
            else:
                ax.axvline(_minutes((e.t_start + e.t_end) / 2.0, t0),
                           color=plotting.COLORS["kl_change"], ls="--", lw=0.7)
    ax_ber.set_title(f"{stream[0].link_id}: BER (above) and OSS (below)")
    return plotting.save(fig, path)


def plot_divergences(per_field, thresholds, link_id, path, t0):
    fig, axes = plotting.new_figure(2)
    for ax, f in zip(axes, ("ber", "oss")):
        values, ts, kls = per_field[f]
        if kls.size:
            w = values.size // (kls.size + 1)
            ends = [ts[(k + 2) * w - 1] for k in range(kls.size)]
            ax.plot(_minutes(ends, t0), kls, marker=".", color=plotting.COLORS[f])
        thr = thresholds.get((link_id, f))
        if thr is not None:
            ax.axhline(thr, color=plotting.COLORS["threshold"], ls=":", lw=0.8)
        ax.set_ylabel(f"KLD ({f})")
    axes[-1].set_xlabel("time (min)")
    axes[0].set_title(f"{link_id}: KL divergence of adjacent windows")
    return plotting.save(fig, path)


def write_report(samples, events, config, out_dir, thresholds=None):
    """Write per-link figures and CSV summaries; return the created paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    thresholds = thresholds or {}
    links = split_by_link(samples)
    stray = sorted({e.signal_id for e in events} - set(links))
    if stray:
        raise InvalidArgument(f"events reference links not in the trace: {stray}")
    t0 = min((s.timestamp_ms for s in samples), default=0)
    written = []
    summary_path = out_dir / "events_summary.csv"
    with open(summary_path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["link_id", "kind", "field", "t_start_ms", "t_end_ms", "kld", "threshold"])
        for e in events:
            wr.writerow([e.signal_id, e.kind, e.field or "", e.t_start, e.t_end,
                         "" if e.kld is None else repr(e.kld),
                         "" if e.threshold is None else repr(e.threshold)])
    written.append(summary_path)
    for link_id, stream in links.items():
        link_events = [e for e in events if e.signal_id == link_id]
        stem = _safe(link_id)
        rows, per_field = window_rows(stream, config.detector)
        csv_path = out_dir / f"{stem}_windows.csv"
        with open(csv_path, "w", newline="", encoding="utf-8") as fh:
            wr = csv.DictWriter(fh, fieldnames=WINDOW_COLUMNS, lineterminator="\n")
            wr.writeheader()
            wr.writerows(rows)
        written.append(csv_path)
        written.append(plot_signals(stream, link_events, out_dir / f"{stem}_signals.svg", t0))
        written.append(plot_divergences(per_field, thresholds, link_id,
                                        out_dir / f"{stem}_kld.svg", t0))
    return written
