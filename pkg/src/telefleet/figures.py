"""Report figures rendered on the CLI paths.

The analytics and scenario libraries stay table-only; these helpers turn
their outputs into PNG files next to the delimited reports. Rendering is
deterministic: the Agg backend with stripped metadata produces byte-identical
files for identical inputs.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .analytics import MetricSeries  # noqa: E402
from .scenario import ScenarioReport  # noqa: E402

_SAVE_KW = dict(dpi=110, metadata={"Software": None})


def _save(fig, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)
    return path


def queue_wait_figure(report: ScenarioReport, path: str | Path) -> Path:
    users = [u for u in report.users if u.queue_wait_s is not None]
    fig, ax = plt.subplots(figsize=(8, 3.2))
    ax.bar(range(len(users)), [u.queue_wait_s for u in users], color="#3a6ea5")
    ax.set_xlabel("user (arrival order)")
    ax.set_ylabel("queue wait [s]")
    ax.set_title("Time spent waiting for a robot")
    fig.tight_layout()
    return _save(fig, Path(path))


def session_duration_figure(report: ScenarioReport, path: str | Path) -> Path:
    reasons = sorted({u.end_reason for u in report.users if u.end_reason})
    fig, ax = plt.subplots(figsize=(8, 3.2))
    for i, reason in enumerate(reasons):
        vals = [
            u.session_duration_s
            for u in report.users
            if u.end_reason == reason and u.session_duration_s is not None
        ]
        ax.scatter([i] * len(vals), vals, s=14, alpha=0.7)
    ax.set_xticks(range(len(reasons)), reasons)
    ax.set_ylabel("session length [s]")
    ax.set_title("Session durations by end reason")
    fig.tight_layout()
    return _save(fig, Path(path))


def scenario_figures(report: ScenarioReport, out_dir: str | Path) -> list[Path]:
    out = Path(out_dir) / "figures"
    return [
        queue_wait_figure(report, out / "queue_waits.png"),
        session_duration_figure(report, out / "session_durations.png"),
    ]


def experience_curve_figure(series: MetricSeries, path: str | Path) -> Path:
    ks = [p.experience_index for p in series.points]
    fig, ax = plt.subplots(figsize=(6, 3.6))
    ax.fill_between(ks, [p.q1 for p in series.points], [p.q3 for p in series.points],
                    alpha=0.25, color="#3a6ea5", label="quartile band")
    ax.plot(ks, [p.median for p in series.points], color="#3a6ea5", marker="o",
            label="median")
    ax.set_xlabel("demonstrations of experience")
    ax.set_ylabel(series.metric)
    ax.set_title(f"{series.metric} vs experience")
    ax.legend()
    fig.tight_layout()
    return _save(fig, Path(path))
