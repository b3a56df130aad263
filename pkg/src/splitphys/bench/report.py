"""CSV output and the measured-vs-published summary table."""

from __future__ import annotations

import csv
import dataclasses
from typing import Iterable, Optional

from .latency import LatencyReport
from .scenarios import CCUReport, MultiObjectReport, RelayReport, SoftbodyReport

SUMMARY_COLUMNS = ("scenario", "size", "metric", "measured", "reference", "unit")


def _scalars(report) -> dict:
    out = {}
    for f in dataclasses.fields(report):
        v = getattr(report, f.name)
        if isinstance(v, (int, float, str, bool)) or v is None:
            out[f.name] = v
    return out


def write_report_csv(report, path: str):
    """One row of scalar fields; CCU adds its per-second outbound series."""
    with open(path, "w", newline="") as fh:
        if isinstance(report, CCUReport):
            w = csv.writer(fh)
            w.writerow(("second", "outbound_kbps"))
            w.writerows(zip(report.seconds, report.outbound_kbps))
            return
        if isinstance(report, LatencyReport):
            w = csv.writer(fh)
            w.writerow(("sample", "latency_ms"))
            w.writerows(enumerate(report.samples_ms))
            return
        row = _scalars(report)
        w = csv.DictWriter(fh, fieldnames=list(row))
        w.writeheader()
        w.writerow(row)


def summary_rows(reports: Iterable) -> list[tuple]:
    rows = []
    for r in reports:
        if isinstance(r, MultiObjectReport):
            rows.append(("multiobject", r.n, "outbound", r.outbound_mbps, r.reference_mbps, "Mb/s"))
            rows.append(("multiobject", r.n, "mean step", r.mean_step_ms, 10.0, "ms (budget)"))
        elif isinstance(r, SoftbodyReport):
            rows.append(("softbody", r.particles, "particle stream", r.particle_stream_mbps, r.reference_mbps, "Mb/s"))
            rows.append(("softbody", r.particles, "mean step", r.mean_step_ms, 10.0, "ms (budget)"))
        elif isinstance(r, RelayReport):
            rows.append(("relay", r.objects, "per subscriber", r.kbps_on_wire, r.reference_kbps, "KB/s"))
            rows.append(("relay", r.objects, "commercial relay", None, r.commercial_kbps, "KB/s"))
        elif isinstance(r, CCUReport):
            rows.append(("ccu", r.users, "stable outbound", r.outbound_kbps[-1] if r.outbound_kbps else None,
                         None, "KB/s"))
            rows.append(("ccu", r.users, "capacity N=M/4", r.capacity_users, None, "users"))
        elif isinstance(r, LatencyReport):
            rows.append(("latency", None, "end to end", r.measured_ms, r.reference_ms, "ms"))
            rows.append(("latency", None, "component sum", r.analytic_ms, r.reference_ms, "ms"))
    return rows


def _fmt(v: Optional[object]) -> str:
    if v is None:
        return "-"
    if isinstance(v, float):
        return f"{v:.3f}"
    return str(v)


def format_summary(rows: list[tuple]) -> str:
    """Fixed-width table. Absolute parity with the published figures is not expected;
    they depend on the original engine and hardware, so compare trends and magnitudes."""
    table = [SUMMARY_COLUMNS] + [tuple(_fmt(v) for v in r) for r in rows]
    widths = [max(len(r[i]) for r in table) for i in range(len(SUMMARY_COLUMNS))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)) for r in table]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)


def write_summary_csv(rows: list[tuple], path: str):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SUMMARY_COLUMNS)
        w.writerows(rows)
