"""Page access events, synthetic workload generators, and trace serialization.

A trace is a time-sorted list of TraceEvent. Generators emit Access events
only; Insert/Evict events are produced later by the cache simulator. The
binary format is little-endian: a 14-byte header (magic ``LCTR``, version u16,
record count u64) followed by 33-byte records (kind u8, t_ns u64, dev u64,
inode u64, offset u64).
"""

from __future__ import annotations

import csv
import math
import random
import struct
from bisect import bisect_right
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Iterable, NamedTuple

from .errors import ConfigurationError, InternalError, TraceFormatError

MAGIC = b"LCTR"
FORMAT_VERSION = 1

_HEADER = struct.Struct("<4sHQ")
_RECORD = struct.Struct("<BQQQQ")


class EventKind(IntEnum):
    ACCESS = 0
    INSERT = 1
    EVICT = 2


_KIND_NAMES = {EventKind.ACCESS: "Access", EventKind.INSERT: "Insert", EventKind.EVICT: "Evict"}
_KIND_FROM_NAME = {name: kind for kind, name in _KIND_NAMES.items()}


class PageKey(NamedTuple):
    dev: int
    inode: int
    offset: int


class TraceEvent(NamedTuple):
    kind: EventKind
    t_ns: int
    key: PageKey


@dataclass(frozen=True)
class SizeDist:
    """File size distribution, in pages (>= 1).

    kinds: fixed(a), uniform(a, b), lognormal(median=a, sigma=b),
    linear(base=a, step=b) where file i gets a + b*i pages.
    """

    kind: str
    a: float = 1
    b: float = 0

    def sample(self, index: int, rng: random.Random) -> int:
        if self.kind == "fixed":
            return max(1, int(self.a))
        if self.kind == "uniform":
            return rng.randint(max(1, int(self.a)), max(1, int(self.b)))
        if self.kind == "lognormal":
            return max(1, round(self.a * math.exp(rng.gauss(0.0, self.b))))
        if self.kind == "linear":
            return max(1, int(self.a + self.b * index))
        raise ConfigurationError(f"unknown size distribution {self.kind!r}")


@dataclass(frozen=True)
class PopularityDist:
    """File popularity: zipf(s) over file rank, or uniform."""

    kind: str
    s: float = 1.0

    def validate(self) -> None:
        if self.kind not in ("zipf", "uniform"):
            raise ConfigurationError(f"unknown popularity distribution {self.kind!r}")
        if self.kind == "zipf" and not self.s > 0:
            raise ConfigurationError("zipf exponent must be > 0")


@dataclass(frozen=True)
class WorkloadSpec:
    kind: str
    seed: int
    n_ops: int
    n_files: int
    file_sizes: SizeDist
    popularity: PopularityDist

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "seed": self.seed,
            "n_ops": self.n_ops,
            "n_files": self.n_files,
            "file_sizes": {"kind": self.file_sizes.kind, "a": self.file_sizes.a, "b": self.file_sizes.b},
            "popularity": {"kind": self.popularity.kind, "s": self.popularity.s},
        }


# Per-kind defaults: (n_files, SizeDist, PopularityDist). The kinds mimic the
# qualitative shape of the classic filebench personalities plus two synthetic
# ones; they are approximations, not replays of the original workloads.
_CATALOG: dict[str, tuple[int, SizeDist, PopularityDist]] = {
    "webserver": (1000, SizeDist("lognormal", 8, 0.7), PopularityDist("zipf", 1.1)),
    "webproxy": (2000, SizeDist("lognormal", 6, 1.0), PopularityDist("zipf", 0.75)),
    "varmail": (500, SizeDist("lognormal", 2, 0.5), PopularityDist("zipf", 1.0)),
    "copyfiles": (300, SizeDist("lognormal", 16, 0.6), PopularityDist("uniform")),
    "openfiles": (5000, SizeDist("uniform", 1, 4), PopularityDist("zipf", 0.6)),
    "mongo": (8, SizeDist("uniform", 256, 1024), PopularityDist("zipf", 1.0)),
    "synthetic_sizebias": (12, SizeDist("linear", 4, 4), PopularityDist("uniform")),
}

WORKLOAD_KINDS = tuple(_CATALOG)

_DEV = 1


def default_spec(kind: str, seed: int = 0, n_ops: int = 50_000, n_files: int | None = None) -> WorkloadSpec:
    if kind not in _CATALOG:
        raise ConfigurationError(
            f"unknown workload kind {kind!r}; valid kinds: {', '.join(WORKLOAD_KINDS)}"
        )
    files, sizes, pop = _CATALOG[kind]
    return WorkloadSpec(kind, seed, n_ops, n_files if n_files is not None else files, sizes, pop)


def _validate_spec(spec: WorkloadSpec) -> None:
    if spec.kind not in _CATALOG:
        raise ConfigurationError(
            f"unknown workload kind {spec.kind!r}; valid kinds: {', '.join(WORKLOAD_KINDS)}"
        )
    if spec.n_ops < 0:
        raise ConfigurationError("n_ops must be >= 0")
    if spec.n_files < 1 and spec.n_ops > 0:
        raise ConfigurationError("n_files must be >= 1 for a non-empty workload")
    spec.popularity.validate()


class _Emitter:
    """Accumulates Access events on a monotone virtual clock."""

    def __init__(self, rng: random.Random, t0: int = 1_000_000):
        self.rng = rng
        self.t = t0
        self.events: list[TraceEvent] = []

    def touch(self, inode: int, offset: int, dt_lo: int = 3_000, dt_hi: int = 9_000) -> None:
        self.t += self.rng.randint(dt_lo, dt_hi)
        self.events.append(TraceEvent(EventKind.ACCESS, self.t, PageKey(_DEV, inode, offset)))

    def gap(self, lo: int = 20_000, hi: int = 60_000) -> None:
        self.t += self.rng.randint(lo, hi)


class _Picker:
    """Samples a file index from the workload's popularity distribution."""

    def __init__(self, pop: PopularityDist, n: int):
        self.n = n
        self.cum: list[float] | None = None
        if pop.kind == "zipf" and n > 0:
            total = 0.0
            cum = []
            for i in range(n):
                total += (i + 1) ** -pop.s
                cum.append(total)
            self.cum = cum

    def pick(self, rng: random.Random) -> int:
        if self.cum is None:
            return rng.randrange(self.n)
        return bisect_right(self.cum, rng.random() * self.cum[-1])


def _file_sizes(spec: WorkloadSpec, rng: random.Random) -> list[int]:
    return [spec.file_sizes.sample(i, rng) for i in range(spec.n_files)]


def _gen_webserver(spec: WorkloadSpec, rng: random.Random) -> list[TraceEvent]:
    sizes = _file_sizes(spec, rng)
    pick = _Picker(spec.popularity, spec.n_files)
    em = _Emitter(rng)
    log_inode = spec.n_files + 1_000_000
    log_page = 0
    for _ in range(spec.n_ops):
        em.gap()
        if rng.random() < 0.95:
            f = pick.pick(rng)
            for page in range(min(sizes[f], 256)):
                em.touch(100 + f, page)
        else:
            em.touch(log_inode, log_page)
            log_page += 1
    return em.events


def _gen_webproxy(spec: WorkloadSpec, rng: random.Random) -> list[TraceEvent]:
    sizes = _file_sizes(spec, rng)
    pick = _Picker(spec.popularity, spec.n_files)
    em = _Emitter(rng)
    next_cold = spec.n_files + 1_000_000
    for _ in range(spec.n_ops):
        em.gap()
        if rng.random() < 0.85:
            f = pick.pick(rng)
            inode, n_pages = 100 + f, sizes[f]
        else:
            # cache-miss fetch of a fresh object, touched once and never again
            inode = next_cold
            next_cold += 1
            n_pages = spec.file_sizes.sample(0, rng)
        for page in range(min(n_pages, 256)):
            em.touch(inode, page)
    return em.events


def _gen_varmail(spec: WorkloadSpec, rng: random.Random) -> list[TraceEvent]:
    sizes = _file_sizes(spec, rng)
    pick = _Picker(spec.popularity, spec.n_files)
    em = _Emitter(rng)
    next_new = spec.n_files + 1_000_000
    for _ in range(spec.n_ops):
        em.gap(10_000, 30_000)
        r = rng.random()
        if r < 0.40:
            f = pick.pick(rng)
            for page in range(min(sizes[f], 64)):
                em.touch(100 + f, page)
        elif r < 0.80:
            f = pick.pick(rng)
            if sizes[f] < 64:
                em.touch(100 + f, sizes[f])
                sizes[f] += 1
            else:
                em.touch(100 + f, rng.randrange(sizes[f]))
        else:
            n_pages = spec.file_sizes.sample(0, rng)
            for page in range(min(n_pages, 64)):
                em.touch(next_new, page)
            next_new += 1
    return em.events


def _gen_copyfiles(spec: WorkloadSpec, rng: random.Random) -> list[TraceEvent]:
    sizes = _file_sizes(spec, rng)
    em = _Emitter(rng)
    order: list[int] = []
    for _ in range(spec.n_ops):
        em.gap()
        if not order:
            order = list(range(spec.n_files))
            rng.shuffle(order)
        f = order.pop()
        for page in range(min(sizes[f], 256)):
            em.touch(100 + f, page, 2_000, 5_000)
            em.touch(10_000_100 + f, page, 2_000, 5_000)
    return em.events


def _gen_openfiles(spec: WorkloadSpec, rng: random.Random) -> list[TraceEvent]:
    sizes = _file_sizes(spec, rng)
    pick = _Picker(spec.popularity, spec.n_files)
    em = _Emitter(rng)
    for _ in range(spec.n_ops):
        em.gap(5_000, 15_000)
        f = pick.pick(rng)
        page = 0 if rng.random() < 0.8 else rng.randrange(sizes[f])
        em.touch(100 + f, page)
    return em.events


def _gen_mongo(spec: WorkloadSpec, rng: random.Random) -> list[TraceEvent]:
    sizes = _file_sizes(spec, rng)
    pick = _Picker(spec.popularity, spec.n_files)
    em = _Emitter(rng)
    extent = 8
    journal_inode = spec.n_files + 1_000_000
    journal_page = 0
    # per-file extent popularity, hotter at low extent indices
    for _ in range(spec.n_ops):
        em.gap(10_000, 40_000)
        if rng.random() < 0.8:
            f = pick.pick(rng)
            n_extents = max(1, sizes[f] // extent)
            e = min(n_extents - 1, int(rng.paretovariate(1.2)) - 1)
            base = e * extent
            for page in range(base, min(base + extent, sizes[f])):
                em.touch(100 + f, page, 1_500, 4_000)
        else:
            em.touch(journal_inode, journal_page)
            journal_page += 1
    return em.events


def _gen_sizebias(spec: WorkloadSpec, rng: random.Random) -> list[TraceEvent]:
    """Slotted round-robin where bigger files are swept strictly less often.

    File i has size a + b*i pages and is swept in full every (i + 1) rounds at
    a fixed slot inside a fixed-length round, so every page of file i repeats
    with an exact gap of (i + 1) * round_ns: reuse time grows strictly with
    file size. Per-file random phases vary the interleaving across seeds.
    """
    sizes = _file_sizes(spec, rng)
    page_dt = 4_000
    slot_gap = 16_000
    slots = []
    t = 0
    for size in sizes:
        slots.append(t)
        t += size * page_dt + slot_gap
    round_ns = t
    periods = [i + 1 for i in range(spec.n_files)]
    phases = [rng.randrange(p) for p in periods]

    events: list[TraceEvent] = []
    ops = 0
    r = 0
    while ops < spec.n_ops:
        base = 1_000_000 + r * round_ns
        for i in range(spec.n_files):
            if ops >= spec.n_ops:
                break
            if (r + phases[i]) % periods[i] != 0:
                continue
            for page in range(sizes[i]):
                events.append(
                    TraceEvent(EventKind.ACCESS, base + slots[i] + page * page_dt, PageKey(_DEV, 100 + i, page))
                )
            ops += 1
        r += 1
    return events


_GENERATORS = {
    "webserver": _gen_webserver,
    "webproxy": _gen_webproxy,
    "varmail": _gen_varmail,
    "copyfiles": _gen_copyfiles,
    "openfiles": _gen_openfiles,
    "mongo": _gen_mongo,
    "synthetic_sizebias": _gen_sizebias,
}


def generate_workload(spec: WorkloadSpec) -> list[TraceEvent]:
    """Generate a deterministic, time-sorted Access-only trace."""
    _validate_spec(spec)
    if spec.n_ops == 0:
        return []
    rng = random.Random(spec.seed)
    events = _GENERATORS[spec.kind](spec, rng)
    for prev, cur in zip(events, events[1:]):
        if cur.t_ns < prev.t_ns:
            raise InternalError("generator emitted unsorted timestamps")  # pragma: no cover
    return events


# -- binary serialization ----------------------------------------------------


def write_trace(events: Iterable[TraceEvent], path: str) -> None:
    """Write events in the binary trace format. Events must be time-sorted."""
    records = []
    prev_t = 0
    for ev in events:
        if ev.t_ns < prev_t:
            raise ValueError("events must be sorted by t_ns before writing")
        prev_t = ev.t_ns
        records.append(_RECORD.pack(int(ev.kind), ev.t_ns, ev.key.dev, ev.key.inode, ev.key.offset))
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, FORMAT_VERSION, len(records)))
        f.write(b"".join(records))


def read_trace(path: str) -> list[TraceEvent]:
    """Read a binary trace, validating structure and timestamp order."""
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < _HEADER.size:
        raise TraceFormatError("truncated header", offset=len(data))
    magic, version, count = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise TraceFormatError(f"bad magic {magic!r}", offset=0)
    if version != FORMAT_VERSION:
        raise TraceFormatError(f"unsupported version {version}", offset=4)
    expected = _HEADER.size + count * _RECORD.size
    if len(data) < expected:
        raise TraceFormatError(
            f"truncated record data: expected {expected} bytes, got {len(data)}", offset=len(data)
        )
    if len(data) > expected:
        raise TraceFormatError("trailing bytes after last record", offset=expected)

    events: list[TraceEvent] = []
    prev_t = 0
    for i, (kind, t_ns, dev, inode, offset) in enumerate(_RECORD.iter_unpack(data[_HEADER.size:])):
        rec_off = _HEADER.size + i * _RECORD.size
        if kind > 2:
            raise TraceFormatError(f"invalid event kind {kind}", offset=rec_off)
        if t_ns < prev_t:
            raise TraceFormatError("timestamps not sorted", offset=rec_off)
        prev_t = t_ns
        events.append(TraceEvent(EventKind(kind), t_ns, PageKey(dev, inode, offset)))
    return events


# -- CSV serialization -------------------------------------------------------

_CSV_HEADER = ["kind", "t_ns", "dev", "inode", "offset"]


def export_csv(events: Iterable[TraceEvent], path: str) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(_CSV_HEADER)
        for ev in events:
            w.writerow([_KIND_NAMES[ev.kind], ev.t_ns, ev.key.dev, ev.key.inode, ev.key.offset])


def read_csv_trace(path: str) -> list[TraceEvent]:
    events: list[TraceEvent] = []
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != _CSV_HEADER:
            raise TraceFormatError(f"bad CSV header {header!r}")
        prev_t = 0
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 5:
                raise TraceFormatError(f"line {lineno}: expected 5 fields, got {len(row)}")
            name, t_s, dev_s, inode_s, off_s = row
            if name not in _KIND_FROM_NAME:
                raise TraceFormatError(f"line {lineno}: invalid event kind {name!r}")
            try:
                t_ns, dev, inode, offset = int(t_s), int(dev_s), int(inode_s), int(off_s)
            except ValueError as exc:
                raise TraceFormatError(f"line {lineno}: {exc}") from None
            if t_ns < prev_t:
                raise TraceFormatError(f"line {lineno}: timestamps not sorted")
            prev_t = t_ns
            events.append(TraceEvent(_KIND_FROM_NAME[name], t_ns, PageKey(dev, inode, offset)))
    return events
