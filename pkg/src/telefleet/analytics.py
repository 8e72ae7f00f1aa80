"""Demonstration analytics.

Per-session skill metrics (completion time, motion effort, orientation
change), quartile curves against operator experience, and the forward-only
time-contrastive machinery: chunked triplet sampling, hinge loss over frame
embeddings, and semi-hard negative selection. Embeddings are produced
elsewhere; this module only consumes them.
"""

from __future__ import annotations

import json
import math
import random
import struct
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .coordination import TASKS
from .protocol import (
    NANOS_PER_SEC,
    MsgKind,
    PhoneSample,
    decode_phone_sample,
    quat_geodesic_angle,
)
from .recorder import read_log

OUTCOMES = ("success", "failure", "timeout")

# End-of-session reason -> demonstration outcome.
REASON_OUTCOME = {
    "user_quit": "success",
    "time_limit": "timeout",
    "safety_abort": "failure",
    "disconnect": "failure",
}


@dataclass
class Demonstration:
    session_id: str
    user_id: str
    task: str
    outcome: str
    samples: list[PhoneSample]
    time_limit_s: float
    experience_index: int = 1  # this user's k-th demo, chronological
    started_at: int = 0

    def __post_init__(self):
        if self.outcome not in OUTCOMES:
            raise ValueError(f"unknown outcome {self.outcome!r}")
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}")

    @property
    def duration_s(self) -> float:
        if not self.samples:
            return 0.0
        return (self.samples[-1].t_client - self.samples[0].t_client) / NANOS_PER_SEC


def load_demonstration(path: str | Path) -> Demonstration:
    """Rebuild a demonstration from one session log.

    Session metadata travels on the event topic as JSON payloads; controller
    samples are decoded from the phone topic.
    """
    log = read_log(path)
    meta_start: dict | None = None
    meta_end: dict | None = None
    samples: list[PhoneSample] = []
    phone_ids = {t.topic_id for t in log.topics.values() if t.kind == MsgKind.PHONE}
    event_ids = {t.topic_id for t in log.topics.values() if t.kind == MsgKind.EVENT}
    for rec in log.read_merged():
        if rec.topic_id in phone_ids:
            samples.append(decode_phone_sample(rec.payload))
        elif rec.topic_id in event_ids:
            ev = json.loads(rec.payload.decode("utf-8"))
            if ev.get("event") == "session_start":
                meta_start = ev
            elif ev.get("event") == "session_end":
                meta_end = ev
    if meta_start is None:
        raise ValueError(f"{path}: no session_start event in log")
    reason = (meta_end or {}).get("reason", "disconnect")
    return Demonstration(
        session_id=log.session_id,
        user_id=meta_start["user_id"],
        task=meta_start["task"],
        outcome=REASON_OUTCOME.get(reason, "failure"),
        samples=samples,
        time_limit_s=float(meta_start.get("time_limit_s", 300.0)),
        started_at=int(meta_start.get("started_at", 0)),
    )


def assign_experience_indices(demos: list[Demonstration]) -> None:
    """Number each user's demos chronologically, starting at 1."""
    by_user: dict[str, list[Demonstration]] = {}
    for d in demos:
        by_user.setdefault(d.user_id, []).append(d)
    for user_demos in by_user.values():
        user_demos.sort(key=lambda d: (d.started_at, d.session_id))
        for k, d in enumerate(user_demos, start=1):
            d.experience_index = k


# -- per-demo metrics ----------------------------------------------------------


def completion_time(demo: Demonstration) -> float:
    """Seconds from first to last sample; timed-out demos report the limit."""
    if not demo.samples:
        raise ValueError("demonstration has no samples")
    if demo.outcome == "timeout":
        return demo.time_limit_s
    return demo.duration_s


def effort(demo: Demonstration) -> float:
    """Sum of squared translation norms over clutch-engaged samples (m^2)."""
    return sum(s.delta_pos.norm2() for s in demo.samples if s.clutch)


def mean_orientation_change(demo: Demonstration) -> float | None:
    """Mean geodesic angle between consecutive engaged samples (rad/sample).

    Returns None when fewer than two engaged samples exist.
    """
    engaged = [s for s in demo.samples if s.clutch]
    if len(engaged) < 2:
        return None
    total = 0.0
    for a, b in zip(engaged, engaged[1:]):
        total += quat_geodesic_angle(a.orientation, b.orientation)
    return total / (len(engaged) - 1)


METRICS = {
    "completion_time": completion_time,
    "effort": effort,
    "mean_orientation_change": mean_orientation_change,
}


@dataclass(frozen=True)
class QuartilePoint:
    experience_index: int
    q1: float
    median: float
    q3: float
    n: int


@dataclass(frozen=True)
class MetricSeries:
    metric: str
    points: tuple[QuartilePoint, ...]


def experience_quartiles(demos: list[Demonstration], metric: str) -> MetricSeries:
    """Quartiles of a metric across users at each experience index.

    Timed-out demos are excluded from completion-time statistics (their
    duration is the budget, not a skill signal); demos where the metric is
    undefined are skipped. Quartiles interpolate linearly between order
    statistics. Empty groups are omitted.
    """
    if metric not in METRICS:
        raise ValueError(f"unknown metric {metric!r}; choose from {sorted(METRICS)}")
    fn = METRICS[metric]
    groups: dict[int, list[float]] = {}
    for d in demos:
        if metric == "completion_time" and d.outcome == "timeout":
            continue
        v = fn(d)
        if v is None:
            continue
        groups.setdefault(d.experience_index, []).append(v)
    points = []
    for k in sorted(groups):
        vals = np.asarray(sorted(groups[k]))
        q1, med, q3 = np.percentile(vals, [25, 50, 75], method="linear")
        points.append(QuartilePoint(k, float(q1), float(med), float(q3), len(vals)))
    return MetricSeries(metric, tuple(points))


def total_hours(demos: list[Demonstration]) -> float:
    return sum(completion_time(d) for d in demos) / 3600.0


def metrics_rows(demos: list[Demonstration]) -> list[dict]:
    rows = []
    for d in demos:
        orient = mean_orientation_change(d)
        rows.append({
            "session_id": d.session_id,
            "user_id": d.user_id,
            "task": d.task,
            "outcome": d.outcome,
            "duration_s": completion_time(d),
            "effort_m2": effort(d),
            "mean_orient_rad": orient if orient is not None else "",
        })
    return rows


# -- time-contrastive sampling and losses ---------------------------------------


@dataclass(frozen=True)
class TripletConfig:
    chunk_len: int = 24
    pos_radius: int = 6
    neg_radius: int = 12
    chunk_pos_radius: int = 3
    chunk_neg_radius: int = 6
    margin: float = 0.2
    lambda_hf: float = 1.0
    lambda_lf: float = 1.0
    lambda_term: float = 1.0

    def __post_init__(self):
        if not (0 < self.pos_radius < self.neg_radius <= self.chunk_len):
            raise ValueError("need 0 < pos_radius < neg_radius <= chunk_len")
        if not (0 < self.chunk_pos_radius < self.chunk_neg_radius):
            raise ValueError("need 0 < chunk_pos_radius < chunk_neg_radius")

    @classmethod
    def from_dict(cls, d: dict) -> "TripletConfig":
        return cls(**d)


@dataclass(frozen=True)
class Triplet:
    anchor: int
    positive: int
    negative: int
    kind: str  # intra_chunk | inter_chunk


def _intra_candidates(anchor: int, chunk: int, cfg: TripletConfig):
    lo = chunk * cfg.chunk_len
    hi = lo + cfg.chunk_len  # exclusive
    pos = [i for i in range(lo, hi) if 0 < abs(i - anchor) <= cfg.pos_radius]
    neg = [i for i in range(lo, hi) if cfg.pos_radius < abs(i - anchor) <= cfg.neg_radius]
    return pos, neg


def sample_triplets(
    frame_count: int, cfg: TripletConfig, count: int, seed: int
) -> list[Triplet]:
    """Draw `count` triplets of each feasible kind, deterministically.

    Intra-chunk triplets relate nearby frames inside one fixed-length chunk;
    inter-chunk triplets relate frames of nearby chunks. Negatives live in
    the annulus beyond the positive radius. A kind with no valid triplets for
    this frame count is omitted with a warning.
    """
    n_chunks = frame_count // cfg.chunk_len
    if n_chunks < 2:
        raise ValueError(
            f"need at least {2 * cfg.chunk_len} frames, got {frame_count}"
        )
    rng = random.Random(seed)
    out: list[Triplet] = []

    made_intra = 0
    for _ in range(count * 20):
        if made_intra >= count:
            break
        chunk = rng.randrange(n_chunks)
        anchor = chunk * cfg.chunk_len + rng.randrange(cfg.chunk_len)
        pos, neg = _intra_candidates(anchor, chunk, cfg)
        if not pos or not neg:
            continue  # resample the anchor
        out.append(Triplet(anchor, rng.choice(pos), rng.choice(neg), "intra_chunk"))
        made_intra += 1
    if made_intra == 0:
        warnings.warn("no valid intra_chunk triplets for this frame count; kind omitted")

    pos_chunks_exist = n_chunks >= 2
    neg_chunks_exist = any(
        cfg.chunk_pos_radius < abs(cn - ca) <= cfg.chunk_neg_radius
        for ca in range(n_chunks)
        for cn in range(n_chunks)
    )
    if pos_chunks_exist and neg_chunks_exist:
        made_inter = 0
        for _ in range(count * 20):
            if made_inter >= count:
                break
            ca = rng.randrange(n_chunks)
            pos_chunks = [c for c in range(n_chunks) if 0 < abs(c - ca) <= cfg.chunk_pos_radius]
            neg_chunks = [
                c for c in range(n_chunks)
                if cfg.chunk_pos_radius < abs(c - ca) <= cfg.chunk_neg_radius
            ]
            if not pos_chunks or not neg_chunks:
                continue
            anchor = ca * cfg.chunk_len + rng.randrange(cfg.chunk_len)
            cp = rng.choice(pos_chunks)
            cn = rng.choice(neg_chunks)
            positive = cp * cfg.chunk_len + rng.randrange(cfg.chunk_len)
            negative = cn * cfg.chunk_len + rng.randrange(cfg.chunk_len)
            out.append(Triplet(anchor, positive, negative, "inter_chunk"))
            made_inter += 1
    else:
        warnings.warn("no valid inter_chunk triplets for this frame count; kind omitted")
    return out


def chunk_of(frame: int, cfg: TripletConfig) -> int:
    return frame // cfg.chunk_len


def terminal_frame_indices(frame_count: int, cfg: TripletConfig) -> range:
    """The last chunk of frames, treated as the task's terminal snapshot."""
    return range(max(0, frame_count - cfg.chunk_len), frame_count)


def _check_unit_rows(embeddings: np.ndarray) -> None:
    norms = np.linalg.norm(embeddings, axis=1)
    bad = np.abs(norms - 1.0) > 1e-6
    if bad.any():
        idx = int(np.argmax(bad))
        raise ValueError(f"embedding {idx} not unit norm (|e|={norms[idx]!r})")


def tcn_loss(
    embeddings: np.ndarray,
    triplets: list[Triplet],
    cfg: TripletConfig,
    terminal_frames: tuple[int, ...] | range = (),
) -> float:
    """Weighted hinge loss over intra- and inter-chunk triplets plus a
    terminal-frame pull-together term.

    Per triplet: max(0, |e_a - e_p|^2 - |e_a - e_n|^2 + margin); each kind
    contributes its mean (0 when absent). The terminal term is the mean
    squared distance over all pairs of designated terminal frames.
    """
    embeddings = np.asarray(embeddings, dtype=float)
    if embeddings.ndim != 2:
        raise ValueError("embeddings must be (frames, dim)")
    _check_unit_rows(embeddings)

    def hinge_mean(kind: str) -> float:
        sel = [t for t in triplets if t.kind == kind]
        if not sel:
            return 0.0
        a = embeddings[[t.anchor for t in sel]]
        p = embeddings[[t.positive for t in sel]]
        n = embeddings[[t.negative for t in sel]]
        d_ap = np.sum((a - p) ** 2, axis=1)
        d_an = np.sum((a - n) ** 2, axis=1)
        hinges = np.maximum(0.0, d_ap - d_an + cfg.margin)
        # fsum keeps the reduction exactly rounded (constant hinges average
        # back to the constant)
        return math.fsum(hinges) / len(sel)

    l_hf = hinge_mean("intra_chunk")
    l_lf = hinge_mean("inter_chunk")

    term = list(terminal_frames)
    l_term = 0.0
    if len(term) >= 2:
        e = embeddings[term]
        diffs = e[:, None, :] - e[None, :, :]
        sq = np.sum(diffs * diffs, axis=2)
        iu = np.triu_indices(len(term), k=1)
        l_term = math.fsum(sq[iu]) / len(iu[0])

    return cfg.lambda_hf * l_hf + cfg.lambda_lf * l_lf + cfg.lambda_term * l_term


def select_semihard(
    anchor: np.ndarray, positive: np.ndarray, candidates: np.ndarray
) -> int:
    """Index of the closest negative still farther than the positive.

    Falls back to the farthest candidate when none is beyond the positive;
    ties go to the lowest index.
    """
    candidates = np.asarray(candidates, dtype=float)
    if candidates.ndim != 2 or len(candidates) == 0:
        raise ValueError("candidates must be a non-empty (n, dim) array")
    d_ap = float(np.linalg.norm(np.asarray(anchor) - np.asarray(positive)))
    d_an = np.linalg.norm(candidates - np.asarray(anchor), axis=1)
    beyond = d_an > d_ap
    if beyond.any():
        masked = np.where(beyond, d_an, np.inf)
        return int(np.argmin(masked))
    return int(np.argmax(d_an))


# -- embedding file io -----------------------------------------------------------


def save_embeddings(path: str | Path, embeddings: np.ndarray) -> None:
    """Flat binary: [frame_count u32][dim u32][frame_count*dim f32 LE]."""
    arr = np.ascontiguousarray(embeddings, dtype="<f4")
    if arr.ndim != 2:
        raise ValueError("embeddings must be (frames, dim)")
    with open(path, "wb") as f:
        f.write(struct.pack("<II", arr.shape[0], arr.shape[1]))
        f.write(arr.tobytes())


def load_embeddings(path: str | Path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < 8:
        raise ValueError("embedding file too short for its header")
    n, dim = struct.unpack_from("<II", data, 0)
    expect = 8 + 4 * n * dim
    if len(data) != expect:
        raise ValueError(f"embedding file length {len(data)} != expected {expect}")
    return np.frombuffer(data, dtype="<f4", offset=8).reshape(n, dim).astype(float)
