"""Labeled chat/subtitle event streams: types, file I/O, session filters and stats."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

DEFAULT_EMOTIONS = ("joy", "surprise", "anger", "disgust", "fear", "sadness")

# Table of the 11 source labels onto the 6 basic emotions.
EXTENDED_LABEL_MAP = {
    "joy": "joy",
    "anticipation": "joy",
    "optimism": "joy",
    "love": "joy",
    "trust": "joy",
    "sadness": "sadness",
    "pessimism": "sadness",
    "anger": "anger",
    "disgust": "disgust",
    "fear": "fear",
    "surprise": "surprise",
}

DEFAULT_MIN_GAP = 1.0 / 60.0
DEFAULT_MAX_GAP = 5.0


class EventsFileError(ValueError):
    """Malformed events file; `line` is the 1-based offending line, if known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass(frozen=True)
class EmotionSet:
    labels: tuple[str, ...] = DEFAULT_EMOTIONS

    def __post_init__(self):
        labels = tuple(str(x) for x in self.labels)
        object.__setattr__(self, "labels", labels)
        if not labels:
            raise ValueError("an emotion set needs at least one label")
        if len(set(labels)) != len(labels):
            raise ValueError(f"duplicate labels in {labels}")

    def __len__(self) -> int:
        return len(self.labels)

    def __iter__(self):
        return iter(self.labels)

    def __contains__(self, label) -> bool:
        return label in self.labels

    def index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise KeyError(f"unknown label {label!r}") from None

    @classmethod
    def parse(cls, text: str) -> "EmotionSet":
        return cls(tuple(s.strip() for s in text.split(",") if s.strip()))


def _frozen(a, dtype=float) -> np.ndarray:
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class VideoSession:
    """One live-chat session over ``[0, duration]`` minutes.

    Chat and subtitle records are kept as messages (sorted times plus a
    boolean label matrix) so that a message carrying several labels
    contributes one time to each of its label streams.
    """

    session_id: str
    duration: float
    chat_times: np.ndarray
    chat_labels: np.ndarray
    subtitle_times: np.ndarray
    subtitle_labels: np.ndarray
    _chat_events: tuple = field(init=False, repr=False)
    _subtitle_events: tuple = field(init=False, repr=False)

    def __post_init__(self):
        if not (self.duration > 0 and math.isfinite(self.duration)):
            raise ValueError(f"session {self.session_id!r}: duration must be > 0")
        ct, cl = _sorted_records(self.chat_times, self.chat_labels)
        st, sl = _sorted_records(self.subtitle_times, self.subtitle_labels, cl.shape[1])
        if cl.shape[1] != sl.shape[1]:
            raise ValueError("chat and subtitle label matrices disagree on the label count")
        for name, t in (("chat", ct), ("subtitle", st)):
            if t.size and (t[0] < 0 or t[-1] > self.duration):
                raise ValueError(
                    f"session {self.session_id!r}: {name} times must lie in [0, {self.duration}]"
                )
        object.__setattr__(self, "duration", float(self.duration))
        object.__setattr__(self, "chat_times", _frozen(ct))
        object.__setattr__(self, "chat_labels", _frozen(cl, bool))
        object.__setattr__(self, "subtitle_times", _frozen(st))
        object.__setattr__(self, "subtitle_labels", _frozen(sl, bool))
        object.__setattr__(self, "_chat_events", tuple(_frozen(ct[cl[:, k]]) for k in range(cl.shape[1])))
        object.__setattr__(
            self, "_subtitle_events", tuple(_frozen(st[sl[:, k]]) for k in range(sl.shape[1]))
        )

    @classmethod
    def from_label_lists(
        cls,
        session_id: str,
        duration: float,
        chat_events: Sequence[Sequence[float]],
        subtitle_events: Sequence[Sequence[float]] | None = None,
    ) -> "VideoSession":
        """Build a session where every event is its own single-label message."""
        k = len(chat_events)
        if subtitle_events is None:
            subtitle_events = [[] for _ in range(k)]
        if len(subtitle_events) != k:
            raise ValueError("chat_events and subtitle_events need one list per label")
        return cls(session_id, duration, *_stack(chat_events), *_stack(subtitle_events))

    @property
    def n_labels(self) -> int:
        return self.chat_labels.shape[1]

    @property
    def chat_events(self) -> tuple[np.ndarray, ...]:
        """Per-label sorted chat times."""
        return self._chat_events

    @property
    def subtitle_events(self) -> tuple[np.ndarray, ...]:
        return self._subtitle_events

    @property
    def counts(self) -> np.ndarray:
        return self.chat_labels.sum(axis=0)

    @property
    def n_messages(self) -> int:
        return int(self.chat_times.size)

    def merged_events(self) -> tuple[np.ndarray, np.ndarray]:
        """All label events as (times, label index), time-sorted, ties in input order."""
        rows, cols = np.nonzero(self.chat_labels)
        return self.chat_times[rows], cols.astype(np.int64)

    def __eq__(self, other):
        if not isinstance(other, VideoSession):
            return NotImplemented
        return (
            self.session_id == other.session_id
            and self.duration == other.duration
            and np.array_equal(self.chat_times, other.chat_times)
            and np.array_equal(self.chat_labels, other.chat_labels)
            and np.array_equal(self.subtitle_times, other.subtitle_times)
            and np.array_equal(self.subtitle_labels, other.subtitle_labels)
        )

    __hash__ = None


def _stack(per_label: Sequence[Sequence[float]]) -> tuple[np.ndarray, np.ndarray]:
    k = len(per_label)
    times = [np.asarray(x, dtype=float).ravel() for x in per_label]
    n = sum(t.size for t in times)
    labels = np.zeros((n, k), dtype=bool)
    pos = 0
    for j, t in enumerate(times):
        labels[pos:pos + t.size, j] = True
        pos += t.size
    all_t = np.concatenate(times) if times else np.zeros(0)
    return all_t, labels


def _sorted_records(times, labels, k: int | None = None):
    times = np.asarray(times, dtype=float).ravel()
    labels = np.asarray(labels, dtype=bool)
    if labels.size == 0 and labels.ndim < 2:
        labels = labels.reshape(0, k or 0)
    if labels.ndim != 2 or labels.shape[0] != times.size:
        raise ValueError("label matrix must have one row per event time")
    order = np.argsort(times, kind="stable")
    return times[order], labels[order]


@dataclass(frozen=True)
class SessionCollection:
    sessions: tuple[VideoSession, ...]
    emotion_set: EmotionSet = EmotionSet()

    def __post_init__(self):
        object.__setattr__(self, "sessions", tuple(self.sessions))
        k = len(self.emotion_set)
        for s in self.sessions:
            if s.n_labels != k:
                raise ValueError(
                    f"session {s.session_id!r} has {s.n_labels} labels, emotion set has {k}"
                )

    def __len__(self) -> int:
        return len(self.sessions)

    def __iter__(self):
        return iter(self.sessions)

    def __getitem__(self, i):
        return self.sessions[i]

    def subset(self, keep: Iterable[int]) -> "SessionCollection":
        return SessionCollection(tuple(self.sessions[i] for i in keep), self.emotion_set)

    def total_duration(self) -> float:
        return float(sum(s.duration for s in self.sessions))


def map_extended_labels(label11: str) -> str:
    try:
        return EXTENDED_LABEL_MAP[label11]
    except KeyError:
        raise KeyError(f"no basic-emotion mapping for label {label11!r}") from None


# ---------------------------------------------------------------------------
# events file I/O


def parse_events_file(
    path, emotion_set: EmotionSet = EmotionSet(), strict: bool = False, **kw
) -> SessionCollection:
    """Read a line-delimited JSON events file.

    With ``strict=True``, chat messages before the first or after the last
    subtitle of their session are dropped (sessions without subtitles are
    left untouched).  Other keywords go to :func:`parse_events`.
    """
    with open(path, encoding="utf-8") as fh:
        return parse_events(fh, emotion_set, strict=strict, **kw)


def parse_events(
    lines: Iterable[str],
    emotion_set: EmotionSet,
    strict: bool = False,
    drop_unknown: bool = False,
    label_map: Callable[[str], str] | None = None,
) -> SessionCollection:
    """Parse events records.

    `label_map` translates each raw label first (e.g. :func:`map_extended_labels`).
    With `drop_unknown`, labels outside `emotion_set` are discarded and records
    left without labels are skipped; otherwise they are an error.
    """
    k = len(emotion_set)
    order: list[str] = []
    recs: dict[str, dict] = {}

    def entry(sid):
        if sid not in recs:
            order.append(sid)
            recs[sid] = {"duration": None, "chat": [], "subtitle": [], "latest": (-1.0, 0)}
        return recs[sid]

    for lineno, raw in enumerate(lines, start=1):
        if not raw.strip():
            continue
        try:
            obj = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise EventsFileError(f"invalid JSON ({exc.msg})", lineno) from None
        if not isinstance(obj, dict):
            raise EventsFileError("record must be a JSON object", lineno)
        sid = obj.get("session")
        kind = obj.get("kind")
        if not isinstance(sid, str):
            raise EventsFileError("missing or non-string 'session'", lineno)
        rec = entry(sid)
        if kind == "meta":
            dur = obj.get("duration")
            if not _is_number(dur) or not dur > 0:
                raise EventsFileError("meta record needs a positive 'duration'", lineno)
            rec["duration"] = (float(dur), lineno)
            continue
        if kind not in ("chat", "subtitle"):
            raise EventsFileError(f"unknown kind {kind!r}", lineno)
        t = obj.get("t")
        if not _is_number(t) or not math.isfinite(t):
            raise EventsFileError("missing or non-numeric 't'", lineno)
        if t < 0:
            raise EventsFileError(f"negative time {t}", lineno)
        labels = obj.get("labels")
        if not isinstance(labels, list) or not labels:
            raise EventsFileError("'labels' must be a nonempty list", lineno)
        row = np.zeros(k, dtype=bool)
        for lab in labels:
            if label_map is not None:
                try:
                    lab = label_map(lab)
                except KeyError:
                    raise EventsFileError(f"unmappable label {lab!r}", lineno) from None
            if lab not in emotion_set:
                if drop_unknown:
                    continue
                raise EventsFileError(f"unknown label {lab!r}", lineno)
            row[emotion_set.index(lab)] = True
        if not row.any():
            continue
        rec[kind].append((float(t), row))
        if t > rec["latest"][0]:
            rec["latest"] = (float(t), lineno)

    sessions = []
    for sid in order:
        rec = recs[sid]
        latest_t, latest_line = rec["latest"]
        if rec["duration"] is not None:
            duration, meta_line = rec["duration"]
            if latest_t > duration:
                raise EventsFileError(
                    f"time {latest_t} exceeds declared duration {duration} of session {sid!r}",
                    latest_line,
                )
        else:
            duration = latest_t
            if not duration > 0:
                raise EventsFileError(f"session {sid!r} has no duration and no positive event time")
        chat, subs = rec["chat"], rec["subtitle"]
        if strict and subs and chat:
            lo = min(t for t, _ in subs)
            hi = max(t for t, _ in subs)
            chat = [(t, r) for t, r in chat if lo <= t <= hi]
        sessions.append(VideoSession(sid, duration, *_records_to_arrays(chat, k), *_records_to_arrays(subs, k)))
    return SessionCollection(tuple(sessions), emotion_set)


def _is_number(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool)


def _records_to_arrays(records, k):
    if not records:
        return np.zeros(0), np.zeros((0, k), dtype=bool)
    return np.array([t for t, _ in records]), np.array([r for _, r in records])


def iter_event_lines(collection: SessionCollection):
    labels = collection.emotion_set.labels
    for s in collection.sessions:
        yield json.dumps({"session": s.session_id, "kind": "meta", "duration": s.duration})
        for kind, times, lab in (
            ("subtitle", s.subtitle_times, s.subtitle_labels),
            ("chat", s.chat_times, s.chat_labels),
        ):
            for t, row in zip(times.tolist(), lab):
                names = [labels[j] for j in np.flatnonzero(row)]
                yield json.dumps({"session": s.session_id, "t": t, "kind": kind, "labels": names})


def write_events_file(collection: SessionCollection, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for line in iter_event_lines(collection):
            fh.write(line + "\n")


# ---------------------------------------------------------------------------
# filters and statistics


def median_gap(session: VideoSession) -> float:
    """Median time between consecutive chat messages (all labels pooled)."""
    if session.n_messages < 2:
        return math.nan
    return float(np.median(np.diff(session.chat_times)))


def filter_median_interval(
    collection: SessionCollection, min_gap: float = DEFAULT_MIN_GAP, max_gap: float = DEFAULT_MAX_GAP
) -> SessionCollection:
    if not min_gap < max_gap:
        raise ValueError(f"need min_gap < max_gap, got {min_gap}, {max_gap}")
    keep = []
    for i, s in enumerate(collection.sessions):
        g = median_gap(s)
        if not math.isnan(g) and min_gap <= g <= max_gap:
            keep.append(i)
    return collection.subset(keep)


def session_rates(collection: SessionCollection) -> np.ndarray:
    """(n_sessions, n_labels) chat messages per minute."""
    k = len(collection.emotion_set)
    if not collection.sessions:
        return np.zeros((0, k))
    return np.array([s.counts / s.duration for s in collection.sessions], dtype=float)


def rate_quantile_bounds(
    collection: SessionCollection, lo: float = 0.2, hi: float = 0.8
) -> tuple[np.ndarray, np.ndarray]:
    """Per-label (q_lo, q_hi) of messages per minute, linear interpolation
    between order statistics (``numpy.quantile(method="linear")``)."""
    if not (0.0 <= lo < hi <= 1.0):
        raise ValueError(f"need 0 <= lo < hi <= 1, got {lo}, {hi}")
    if len(collection) < 2:
        raise ValueError("rate quantiles need at least two sessions")
    rates = session_rates(collection)
    return (
        np.quantile(rates, lo, axis=0, method="linear"),
        np.quantile(rates, hi, axis=0, method="linear"),
    )


def filter_rate_bounds(collection: SessionCollection, q_lo, q_hi) -> SessionCollection:
    rates = session_rates(collection)
    if rates.shape[0] == 0:
        return collection
    ok = np.all((rates >= np.asarray(q_lo)) & (rates <= np.asarray(q_hi)), axis=1)
    return collection.subset(np.flatnonzero(ok).tolist())


def filter_rate_quantiles(
    collection: SessionCollection, lo: float = 0.2, hi: float = 0.8
) -> SessionCollection:
    """Keep sessions whose rate lies within the [lo, hi] quantiles for every label.

    The bounds are computed on the input collection; re-running this on its own
    output recomputes narrower bounds.  Use :func:`rate_quantile_bounds` with
    :func:`filter_rate_bounds` to apply a fixed pair of bounds.
    """
    q_lo, q_hi = rate_quantile_bounds(collection, lo, hi)
    return filter_rate_bounds(collection, q_lo, q_hi)


@dataclass(frozen=True)
class SessionStats:
    session_id: str
    n_messages: int
    median_gap_min: float
    rates: tuple[float, ...]
    duration: float


@dataclass(frozen=True)
class StatsReport:
    emotion_set: EmotionSet
    sessions: tuple[SessionStats, ...]
    median_rates: tuple[float, ...]
    median_messages: float
    median_duration: float

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["session", "n_messages", "median_gap_min"] + [f"rate_{x}" for x in self.emotion_set])
        for s in self.sessions:
            w.writerow([s.session_id, s.n_messages, repr(s.median_gap_min)] + [repr(r) for r in s.rates])
        return buf.getvalue()


def summary_stats(collection: SessionCollection) -> StatsReport:
    if not collection.sessions:
        raise ValueError("summary statistics need a nonempty collection")
    rates = session_rates(collection)
    rows = tuple(
        SessionStats(s.session_id, s.n_messages, median_gap(s), tuple(float(r) for r in rates[i]), s.duration)
        for i, s in enumerate(collection.sessions)
    )
    return StatsReport(
        emotion_set=collection.emotion_set,
        sessions=rows,
        median_rates=tuple(float(x) for x in np.median(rates, axis=0)),
        median_messages=float(np.median([s.n_messages for s in collection.sessions])),
        median_duration=float(np.median([s.duration for s in collection.sessions])),
    )


def write_stats_csv(report: StatsReport, path) -> None:
    Path(path).write_text(report.to_csv(), encoding="utf-8")
