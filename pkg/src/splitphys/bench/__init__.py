from .latency import PRESETS, LatencyBreakdown, LatencyConfig, LatencyReport, latency_breakdown
from .report import format_summary, summary_rows, write_report_csv, write_summary_csv
from .scenarios import (
    CCUReport,
    MultiObjectReport,
    RelayReport,
    ScenarioConfig,
    SoftbodyReport,
    capacity,
    run_ccu,
    run_multiobject,
    run_relay,
    run_softbody,
)

__all__ = [
    "PRESETS", "LatencyBreakdown", "LatencyConfig", "LatencyReport", "latency_breakdown",
    "format_summary", "summary_rows", "write_report_csv", "write_summary_csv",
    "CCUReport", "MultiObjectReport", "RelayReport", "ScenarioConfig", "SoftbodyReport",
    "capacity", "run_ccu", "run_multiobject", "run_relay", "run_softbody",
]
