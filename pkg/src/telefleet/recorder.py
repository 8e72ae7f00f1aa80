"""Append-only multi-topic session log.

File format v1, little-endian:

    header   [magic "RTLG"][version u16][session_id len u16 + bytes]
             [topic_count u16][per topic: id u16, name len u16 + bytes,
              kind u8, rate f64]
    records  [topic_id u16][seq u32][t u64][len u32][payload][crc32 u32]

The CRC covers (topic_id || seq || t || payload). Records carry per-topic
sequence numbers starting at 0 and non-decreasing per-topic timestamps; a
truncated tail (e.g. after a crash) loses at most the final partial record.
"""

from __future__ import annotations

import bisect
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

from .errors import DecodeError, IntegrityError, OrderingError
from .protocol import MsgKind, TopicDescriptor

MAGIC = b"RTLG"
VERSION = 1

_REC_HEAD = struct.Struct("<HIQI")  # topic_id, seq, t, len
_CRC_HEAD = struct.Struct("<HIQ")   # the CRC input prefix
_CRC_TAIL = struct.Struct("<I")

RECORD_OVERHEAD = _REC_HEAD.size + _CRC_TAIL.size  # 18 + 4 bytes per record


def _encode_header(session_id: str, topics: list[TopicDescriptor]) -> bytes:
    sid = session_id.encode("utf-8")
    out = bytearray()
    out += MAGIC
    out += struct.pack("<H", VERSION)
    out += struct.pack("<H", len(sid))
    out += sid
    out += struct.pack("<H", len(topics))
    for t in topics:
        name = t.name.encode("utf-8")
        out += struct.pack("<HH", t.topic_id, len(name))
        out += name
        out += struct.pack("<Bd", int(t.kind), t.declared_rate_hz)
    return bytes(out)


class LogWriter:
    """Single-session log writer.

    By default every append is flushed to the OS so a crashed process loses
    at most the record being written; hot paths may batch with
    flush_each=False and call flush() at their own cadence.
    """

    def __init__(
        self,
        path: str | Path,
        session_id: str,
        topics: list[TopicDescriptor],
        flush_each: bool = True,
    ):
        ids = [t.topic_id for t in topics]
        if len(set(ids)) != len(ids):
            raise ValueError("topic ids must be unique within a log")
        self.path = Path(path)
        self.topics = {t.topic_id: t for t in topics}
        self._next_seq = {t.topic_id: 0 for t in topics}
        self._last_t = {t.topic_id: -1 for t in topics}
        self._flush_each = flush_each
        self._file = open(self.path, "wb")
        self._file.write(_encode_header(session_id, topics))
        self._file.flush()
        self.record_count = 0

    def append(self, topic_id: int, t: int, payload: bytes) -> int:
        """Append one record; returns the assigned per-topic sequence number."""
        if topic_id not in self.topics:
            raise ValueError(f"unknown topic id {topic_id}")
        if t < 0 or t > 0xFFFF_FFFF_FFFF_FFFF:
            raise ValueError(f"timestamp {t} out of u64 range")
        if t < self._last_t[topic_id]:
            raise OrderingError(
                f"topic {topic_id}: timestamp {t} precedes previous {self._last_t[topic_id]}"
            )
        seq = self._next_seq[topic_id]
        crc = zlib.crc32(_CRC_HEAD.pack(topic_id, seq, t) + payload)
        self._file.write(_REC_HEAD.pack(topic_id, seq, t, len(payload)))
        self._file.write(payload)
        self._file.write(_CRC_TAIL.pack(crc))
        if self._flush_each:
            self._file.flush()
        self._next_seq[topic_id] = seq + 1
        self._last_t[topic_id] = t
        self.record_count += 1
        return seq

    def flush(self) -> None:
        self._file.flush()

    def close(self) -> None:
        if not self._file.closed:
            self._file.close()

    def __enter__(self) -> "LogWriter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


@dataclass(frozen=True, slots=True)
class TopicRecord:
    topic_id: int
    seq: int
    t: int
    payload: bytes
    crc_ok: bool


@dataclass(frozen=True, slots=True)
class AlignmentEntry:
    """Most recent record at or before the query time, if any."""

    record: TopicRecord | None
    staleness: int | None  # t_query - record.t, ns


class LogFile:
    """In-memory view of one session log.

    The whole file is read at open (logs are desk-scale); CRCs are verified
    lazily as records are accessed, so corruption is reported at exactly the
    damaged record.
    """

    def __init__(self, path: str | Path):
        self.path = Path(path)
        data = self.path.read_bytes()
        off = 0

        def need(n: int, what: str) -> int:
            if off + n > len(data):
                raise DecodeError(f"log header: truncated at {what}")
            return off + n

        off2 = need(4, "magic")
        if data[off:off2] != MAGIC:
            raise DecodeError("log header: bad magic")
        off = off2
        off2 = need(2, "version")
        (version,) = struct.unpack_from("<H", data, off)
        if version != VERSION:
            raise DecodeError(f"log header: unsupported version {version}")
        off = off2
        off2 = need(2, "session_id length")
        (sid_len,) = struct.unpack_from("<H", data, off)
        off = off2
        off2 = need(sid_len, "session_id")
        self.session_id = data[off:off2].decode("utf-8")
        off = off2
        off2 = need(2, "topic_count")
        (n_topics,) = struct.unpack_from("<H", data, off)
        off = off2
        topics = []
        for _ in range(n_topics):
            off2 = need(4, "topic id/name length")
            tid, name_len = struct.unpack_from("<HH", data, off)
            off = off2
            off2 = need(name_len, "topic name")
            name = data[off:off2].decode("utf-8")
            off = off2
            off2 = need(9, "topic kind/rate")
            kind, rate = struct.unpack_from("<Bd", data, off)
            off = off2
            topics.append(TopicDescriptor(tid, name, MsgKind(kind), rate))
        self.topics = {t.topic_id: t for t in topics}
        self.header_size = off

        # Index the record region; stop cleanly at a truncated tail.
        self._data = data
        self._index: list[tuple[int, int, int, int, int]] = []  # (t, tid, seq, off, len)
        self.truncated = False
        per_topic_seq: dict[int, int] = {t.topic_id: 0 for t in topics}
        while off < len(data):
            if off + _REC_HEAD.size > len(data):
                self.truncated = True
                break
            tid, seq, t, plen = _REC_HEAD.unpack_from(data, off)
            end = off + _REC_HEAD.size + plen + _CRC_TAIL.size
            if end > len(data):
                self.truncated = True
                break
            if tid not in self.topics:
                raise DecodeError(f"record at offset {off}: unknown topic id {tid}")
            if seq != per_topic_seq[tid]:
                raise DecodeError(
                    f"topic {tid}: sequence gap (expected {per_topic_seq[tid]}, found {seq})"
                )
            per_topic_seq[tid] = seq + 1
            self._index.append((t, tid, seq, off, plen))
            off = end
        self.record_count = len(self._index)

        self._topic_times: dict[int, list[int]] = {t: [] for t in self.topics}
        self._topic_rows: dict[int, list[int]] = {t: [] for t in self.topics}
        for i, (t, tid, seq, off, plen) in enumerate(self._index):
            self._topic_times[tid].append(t)
            self._topic_rows[tid].append(i)
        self._merged = sorted(range(len(self._index)), key=lambda i: (
            self._index[i][0], self._index[i][1], self._index[i][2]
        ))

    def _load(self, idx: int, verify: bool = True) -> TopicRecord:
        t, tid, seq, off, plen = self._index[idx]
        body = self._data[off + _REC_HEAD.size: off + _REC_HEAD.size + plen]
        (stored_crc,) = _CRC_TAIL.unpack_from(self._data, off + _REC_HEAD.size + plen)
        ok = zlib.crc32(_CRC_HEAD.pack(tid, seq, t) + body) == stored_crc
        if verify and not ok:
            raise IntegrityError(
                f"crc mismatch on topic {tid} seq {seq}", topic_id=tid, seq=seq
            )
        return TopicRecord(tid, seq, t, bytes(body), ok)

    def read_merged(self):
        """All records in (t, topic_id, seq) order, verifying each CRC."""
        for idx in self._merged:
            yield self._load(idx)

    def topic_records(self, topic_id: int):
        if topic_id not in self.topics:
            raise ValueError(f"unknown topic id {topic_id}")
        for row in self._topic_rows[topic_id]:
            yield self._load(row)

    def topic_id_by_name(self, name: str) -> int:
        for t in self.topics.values():
            if t.name == name:
                return t.topic_id
        raise ValueError(f"no topic named {name!r}")

    def align(self, t_query: int, topic_ids: list[int]) -> dict[int, AlignmentEntry]:
        """Per topic, the record with the greatest t <= t_query."""
        out = {}
        for tid in topic_ids:
            if tid not in self.topics:
                raise ValueError(f"unknown topic id {tid}")
            pos = bisect.bisect_right(self._topic_times[tid], t_query) - 1
            if pos < 0:
                out[tid] = AlignmentEntry(None, None)
            else:
                rec = self._load(self._topic_rows[tid][pos])
                out[tid] = AlignmentEntry(rec, t_query - rec.t)
        return out


def read_log(path: str | Path) -> LogFile:
    return LogFile(path)
