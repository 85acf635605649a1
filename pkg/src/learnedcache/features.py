"""Per-page and per-inode access statistics and the eviction feature vector.

All nine features are unsigned 64-bit integers. Timestamp slots that were
never populated read as MISSING (2**64 - 1), and any delta involving such a
slot is MISSING as well. Recency scores are fixed-point EMAs: each access
adds EMA_SCALE, and the score halves for every whole half-life elapsed since
the last update (lazy decay via a right shift).

Tracker state lives in flat uint64 tables with one column per page (or per
inode) and one row per field, so an eviction window of candidates can be
scored by gathering whole field rows with array operations; the scalar API
reads the same columns one at a time.
"""

from __future__ import annotations

import csv
from bisect import bisect_right
from typing import Iterable, NamedTuple

import numpy as np

from .errors import TraceFormatError
from .trace import EventKind, PageKey, TraceEvent

MISSING = 2**64 - 1
EMA_SCALE = 1024
HALF_LIFE_NS = 1_000_000_000

FEATURE_NAMES = (
    "page_delta1",
    "page_delta2",
    "inode_delta1",
    "inode_delta2",
    "offset_distance",
    "file_size",
    "page_ema",
    "inode_ema",
    "access_to_eviction",
)

N_FEATURES = len(FEATURE_NAMES)

# page table field rows
P_OFF, P_D1, P_D2, P_EMA, P_EMA_T, P_LAST, P_INODE = range(7)
# inode table field rows
I_D1, I_D2, I_EMA, I_EMA_T, I_LAST, I_LAST_OFF, I_SIZE = range(7)


class FeatureVector(NamedTuple):
    page_delta1: int
    page_delta2: int
    inode_delta1: int
    inode_delta2: int
    offset_distance: int
    file_size: int
    page_ema: int
    inode_ema: int
    access_to_eviction: int


def _decayed(score: int, t_updated: int, t_now: int) -> int:
    halves = (t_now - t_updated) // HALF_LIFE_NS
    if halves <= 0:
        return score
    if halves >= 64:
        return 0
    return score >> halves


class AccessTracker:
    """Observes a time-ordered access stream and answers feature queries.

    Per-page columns hold (offset, delta1, delta2, ema, ema_t, last,
    inode_slot); per-inode columns hold (delta1, delta2, ema, ema_t, last,
    last_offset, file_size). The deltas are maintained incrementally: on each
    access the previous delta1 becomes delta2 and the new delta1 is the gap
    to the previous access (MISSING when there is no previous access), which
    is exactly the last/second_last/third_last timestamp formulation.
    """

    def __init__(self) -> None:
        self.page_slot: dict[PageKey, int] = {}
        self.inode_slot: dict[tuple[int, int], int] = {}
        self.page_keys: list[PageKey] = []
        self.page_tab = np.zeros((7, 256), dtype=np.uint64)
        self.inode_tab = np.zeros((7, 64), dtype=np.uint64)
        self.last_t = 0

    def _grow(self, tab: np.ndarray, need: int) -> np.ndarray:
        if need < tab.shape[1]:
            return tab
        new = np.zeros((7, max(need + 1, 2 * tab.shape[1])), dtype=np.uint64)
        new[:, : tab.shape[1]] = tab
        return new

    def on_access(self, key: PageKey, t_ns: int) -> int:
        """Update page and inode state; returns the page's column slot."""
        if t_ns < self.last_t:
            raise ValueError(f"access at t={t_ns} precedes tracker time {self.last_t}")
        self.last_t = t_ns

        ikey = (key.dev, key.inode)
        islot = self.inode_slot.get(ikey)
        if islot is None:
            islot = len(self.inode_slot)
            self.inode_slot[ikey] = islot
            self.inode_tab = self._grow(self.inode_tab, islot)
            self.inode_tab[:, islot] = (MISSING, MISSING, EMA_SCALE, t_ns, t_ns, key.offset, key.offset + 1)
        else:
            col = self.inode_tab[:, islot].tolist()
            ema = _decayed(col[I_EMA], col[I_EMA_T], t_ns) + EMA_SCALE
            size = col[I_SIZE]
            if key.offset + 1 > size:
                size = key.offset + 1
            self.inode_tab[:, islot] = (t_ns - col[I_LAST], col[I_D1], ema, t_ns, t_ns, key.offset, size)

        slot = self.page_slot.get(key)
        if slot is None:
            slot = len(self.page_slot)
            self.page_slot[key] = slot
            self.page_keys.append(key)
            self.page_tab = self._grow(self.page_tab, slot)
            self.page_tab[:, slot] = (key.offset, MISSING, MISSING, EMA_SCALE, t_ns, t_ns, islot)
        else:
            col = self.page_tab[:, slot].tolist()
            ema = _decayed(col[P_EMA], col[P_EMA_T], t_ns) + EMA_SCALE
            self.page_tab[P_D1:P_INODE, slot] = (t_ns - col[P_LAST], col[P_D1], ema, t_ns, t_ns)
        return slot

    def extract_features(self, key: PageKey, t_now: int) -> FeatureVector:
        """Feature vector for key as of t_now (>= the tracker's latest event).

        Never-seen keys get MISSING deltas and access gap, zero EMAs, zero
        offset distance and file size.
        """
        if t_now < self.last_t:
            raise ValueError(f"t_now={t_now} precedes tracker time {self.last_t}")

        slot = self.page_slot.get(key)
        if slot is None:
            f0 = f1 = f8 = MISSING
            f6 = 0
        else:
            col = self.page_tab[:, slot].tolist()
            f0, f1 = col[P_D1], col[P_D2]
            f6 = _decayed(col[P_EMA], col[P_EMA_T], t_now)
            f8 = t_now - col[P_LAST]

        islot = self.inode_slot.get((key.dev, key.inode))
        if islot is None:
            f2 = f3 = MISSING
            f4 = f5 = f7 = 0
        else:
            icol = self.inode_tab[:, islot].tolist()
            f2, f3 = icol[I_D1], icol[I_D2]
            f4 = abs(key.offset - icol[I_LAST_OFF])
            f5 = icol[I_SIZE]
            f7 = _decayed(icol[I_EMA], icol[I_EMA_T], t_now)

        return FeatureVector(f0, f1, f2, f3, f4, f5, f6, f7, f8)


class DatasetRow(NamedTuple):
    features: FeatureVector
    eviction_t_ns: int
    reuse_time_ns: int
    key: PageKey


def build_dataset(
    access_events: Iterable[TraceEvent], eviction_events: Iterable[TraceEvent]
) -> list[DatasetRow]:
    """Label each eviction with the time until the page's next access.

    For an eviction of page p at time e, the features are those extracted at
    p's latest access a <= e with access_to_eviction replaced by e - a, and
    reuse_time_ns is (first access of p after e) - e, or MISSING if p is never
    touched again. Evictions of never-accessed pages are dropped.
    """
    accesses = [ev for ev in access_events if ev.kind == EventKind.ACCESS]
    evictions = [ev for ev in eviction_events if ev.kind == EventKind.EVICT]
    for seq, label in ((accesses, "access"), (evictions, "eviction")):
        for prev, cur in zip(seq, seq[1:]):
            if cur.t_ns < prev.t_ns:
                raise ValueError(f"{label} events must be sorted by t_ns")

    times_by_key: dict[PageKey, list[int]] = {}
    for ev in accesses:
        times_by_key.setdefault(ev.key, []).append(ev.t_ns)

    tracker = AccessTracker()
    latest: dict[PageKey, tuple[FeatureVector, int]] = {}
    rows: list[DatasetRow] = []
    ai = 0
    n_acc = len(accesses)
    for ev in evictions:
        # replay accesses up to and including the eviction timestamp
        while ai < n_acc and accesses[ai].t_ns <= ev.t_ns:
            acc = accesses[ai]
            tracker.on_access(acc.key, acc.t_ns)
            latest[acc.key] = (tracker.extract_features(acc.key, acc.t_ns), acc.t_ns)
            ai += 1
        snap = latest.get(ev.key)
        if snap is None:
            continue
        feat, a = snap
        e = ev.t_ns
        times = times_by_key[ev.key]
        idx = bisect_right(times, e)
        reuse = times[idx] - e if idx < len(times) else MISSING
        rows.append(DatasetRow(feat._replace(access_to_eviction=e - a), e, reuse, ev.key))
    return rows


_DATASET_HEADER = list(FEATURE_NAMES) + ["eviction_t_ns", "reuse_time_ns", "dev", "inode", "offset"]


def export_dataset_csv(rows: Iterable[DatasetRow], path: str) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(_DATASET_HEADER)
        for row in rows:
            w.writerow(list(row.features) + [row.eviction_t_ns, row.reuse_time_ns, *row.key])


def read_dataset_csv(path: str) -> list[DatasetRow]:
    rows: list[DatasetRow] = []
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != _DATASET_HEADER:
            raise TraceFormatError(f"bad dataset header {header!r}")
        for lineno, rec in enumerate(reader, start=2):
            if len(rec) != len(_DATASET_HEADER):
                raise TraceFormatError(f"line {lineno}: expected {len(_DATASET_HEADER)} fields")
            try:
                vals = [int(v) for v in rec]
            except ValueError as exc:
                raise TraceFormatError(f"line {lineno}: {exc}") from None
            rows.append(
                DatasetRow(
                    FeatureVector(*vals[:N_FEATURES]),
                    vals[N_FEATURES],
                    vals[N_FEATURES + 1],
                    PageKey(*vals[N_FEATURES + 2:]),
                )
            )
    return rows
