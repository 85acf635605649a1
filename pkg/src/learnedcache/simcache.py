"""Trace-driven cache simulation: FIFO baseline and learned tail reranking.

The cache keeps residency as a membership index plus a FIFO order buffer
(oldest at the tail, newest at the head). On overflow an eviction request of
min(32, overflow) pages is issued. FIFO pops the oldest pages; the learned
policy rescopes the request to the oldest oversample * n resident pages,
scores them with the integer model, and evicts the lowest-scoring n
(predicted to be reused last), ties broken toward older pages, survivors
keeping their relative order.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigurationError
from .features import N_FEATURES, AccessTracker
from .modelpack import ModelPack, PreparedScorer
from .trace import EventKind, PageKey, TraceEvent

BATCH_MAX = 32
DEFAULT_OVERSAMPLE = 5

# below this window size the scalar scoring path beats array overhead
_VECTOR_CUTOFF = 16


@dataclass(frozen=True)
class FifoPolicy:
    name: str = "fifo"


@dataclass
class LearnedPolicy:
    pack: ModelPack
    oversample: int = DEFAULT_OVERSAMPLE
    name: str = "learned"

    def __post_init__(self) -> None:
        if self.oversample < 1:
            raise ConfigurationError("oversample must be >= 1")
        if self.pack.n_features > N_FEATURES:
            raise ConfigurationError(
                f"model pack has {self.pack.n_features} features; "
                f"the simulator computes {N_FEATURES}"
            )
        self._scorer = PreparedScorer(self.pack)


Policy = FifoPolicy | LearnedPolicy


class AccessResult(Enum):
    HIT = "hit"
    MISS_INSERTED = "miss_inserted"


@dataclass
class Counters:
    accesses: int = 0
    insertions: int = 0
    evictions: int = 0
    hits: int = 0


class CacheState:
    """Residency index + FIFO order buffer + feature tracker + counters.

    The order buffer holds tracker page slots; the live span is
    order[tail:head], oldest first. Evictions only ever remove entries at or
    near the tail, so the live span never contains dead entries.
    """

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ConfigurationError("capacity must be >= 1")
        self.capacity = capacity
        self.residency: dict[PageKey, None] = {}
        self.order = np.empty(max(256, 2 * capacity), dtype=np.int64)
        self.tail = 0
        self.head = 0
        self.tracker = AccessTracker()
        self.counters = Counters()
        self.eviction_latency_ns: list[int] = []
        self.candidate_counts: list[int] = []
        self.event_sink: list[TraceEvent] | None = None

    def __len__(self) -> int:
        return len(self.residency)

    def __contains__(self, key: PageKey) -> bool:
        return key in self.residency

    def resident_keys(self) -> list[PageKey]:
        """Resident pages in FIFO order, oldest first."""
        keys = self.tracker.page_keys
        return [keys[s] for s in self.order[self.tail:self.head].tolist()]

    def _append(self, slot: int) -> None:
        if self.head == len(self.order):
            live = self.head - self.tail
            buf = self.order
            if 2 * live > len(buf):
                buf = np.empty(2 * len(self.order), dtype=np.int64)
            buf[:live] = self.order[self.tail:self.head]
            self.order = buf
            self.tail = 0
            self.head = live
        self.order[self.head] = slot
        self.head += 1


def evict_fifo(cache: CacheState, n: int) -> list[PageKey]:
    """Evict the min(n, resident) oldest pages, oldest first."""
    if not 1 <= n <= BATCH_MAX:
        raise ConfigurationError(f"eviction request must be in [1, {BATCH_MAX}]")
    k = min(n, cache.head - cache.tail)
    victim_slots = cache.order[cache.tail:cache.tail + k].tolist()
    cache.tail += k
    keys = cache.tracker.page_keys
    victims = [keys[s] for s in victim_slots]
    residency = cache.residency
    for key in victims:
        del residency[key]
    return victims


def _evict_scored(
    cache: CacheState, n: int, scorer: PreparedScorer, oversample: int, t_now_ns: int
) -> list[PageKey]:
    live = cache.head - cache.tail
    n_evict = min(n, live)
    window = min(oversample * n, live)
    wslots = cache.order[cache.tail:cache.tail + window]
    keys = cache.tracker.page_keys

    if window <= 1:
        victim_slots = wslots[:n_evict].tolist()
    elif window < _VECTOR_CUTOFF:
        tracker = cache.tracker
        slot_list = wslots.tolist()
        scores = [
            scorer.score_one(tracker.extract_features(keys[s], t_now_ns)) for s in slot_list
        ]
        # lowest score first, FIFO position (oldest) breaking ties
        chosen = sorted(range(window), key=lambda i: (scores[i], i))[:n_evict]
        victim_slots = [slot_list[i] for i in chosen]
        if n_evict < window:
            keep = np.ones(window, dtype=bool)
            keep[chosen] = False
            cache.order[cache.tail + n_evict:cache.tail + window] = wslots[keep]
    else:
        scores = scorer.score_window(cache.tracker, wslots, t_now_ns)
        ranked = scores.argsort(kind="stable")
        victim_slots = wslots[ranked[:n_evict]].tolist()
        if n_evict < window:
            # survivors keep FIFO order: sort the kept positions
            kept = ranked[n_evict:]
            kept.sort()
            cache.order[cache.tail + n_evict:cache.tail + window] = wslots[kept]

    victims = [keys[s] for s in victim_slots]
    cache.tail += n_evict
    residency = cache.residency
    for key in victims:
        del residency[key]
    return victims


def evict_learned(
    cache: CacheState,
    n: int,
    pack: ModelPack,
    oversample: int = DEFAULT_OVERSAMPLE,
    t_now_ns: int | None = None,
) -> list[PageKey]:
    """Evict n pages chosen by model score from the oversample * n oldest."""
    if not 1 <= n <= BATCH_MAX:
        raise ConfigurationError(f"eviction request must be in [1, {BATCH_MAX}]")
    if oversample < 1:
        raise ConfigurationError("oversample must be >= 1")
    t = t_now_ns if t_now_ns is not None else cache.tracker.last_t
    return _evict_scored(cache, n, PreparedScorer(pack), oversample, t)


def access(cache: CacheState, key: PageKey, t_ns: int, policy: Policy) -> AccessResult:
    """Count the access, update features, insert on miss, evict on overflow."""
    c = cache.counters
    c.accesses += 1
    slot = cache.tracker.on_access(key, t_ns)
    if key in cache.residency:
        c.hits += 1
        return AccessResult.HIT

    cache.residency[key] = None
    cache._append(slot)
    c.insertions += 1
    if cache.event_sink is not None:
        cache.event_sink.append(TraceEvent(EventKind.INSERT, t_ns, key))

    overflow = len(cache.residency) - cache.capacity
    if overflow > 0:
        n = overflow if overflow < BATCH_MAX else BATCH_MAX
        if isinstance(policy, LearnedPolicy):
            considered = min(policy.oversample * n, len(cache.residency))
            t0 = time.perf_counter_ns()
            victims = _evict_scored(cache, n, policy._scorer, policy.oversample, t_ns)
        else:
            considered = min(n, len(cache.residency))
            t0 = time.perf_counter_ns()
            victims = evict_fifo(cache, n)
        dt = time.perf_counter_ns() - t0
        c.evictions += len(victims)
        cache.eviction_latency_ns.append(dt)
        cache.candidate_counts.append(considered)
        if cache.event_sink is not None:
            for v in victims:
                cache.event_sink.append(TraceEvent(EventKind.EVICT, t_ns, v))
    return AccessResult.MISS_INSERTED


@dataclass
class SimReport:
    policy: str
    capacity: int
    accesses: int
    insertions: int
    evictions: int
    hits: int
    insertion_rate: float  # nan when the trace had no accesses
    eviction_latency_ns: list[int] = field(repr=False, default_factory=list)
    candidate_counts: list[int] = field(repr=False, default_factory=list)


def run_simulation(
    events: Iterable[TraceEvent],
    policy: Policy,
    capacity: int,
    seed: int = 0,
    event_sink: list[TraceEvent] | None = None,
) -> SimReport:
    """Replay the Access events of a sorted trace through the cache.

    Insert/Evict events in the input are ignored (the simulator emits its
    own into event_sink when provided). seed is accepted for signature
    stability; both built-in policies are deterministic.
    """
    del seed
    cache = CacheState(capacity)
    cache.event_sink = event_sink
    prev_t = 0
    for ev in events:
        if ev.t_ns < prev_t:
            raise ValueError("trace events must be sorted by t_ns")
        prev_t = ev.t_ns
        if ev.kind != EventKind.ACCESS:
            continue
        access(cache, ev.key, ev.t_ns, policy)

    c = cache.counters
    rate = c.insertions / c.accesses if c.accesses else float("nan")
    return SimReport(
        policy=policy.name,
        capacity=capacity,
        accesses=c.accesses,
        insertions=c.insertions,
        evictions=c.evictions,
        hits=c.hits,
        insertion_rate=rate,
        eviction_latency_ns=cache.eviction_latency_ns,
        candidate_counts=cache.candidate_counts,
    )


def _percentile(samples: Sequence[int], q: float) -> float | None:
    if not samples:
        return None
    return float(np.percentile(np.asarray(samples, dtype=np.float64), q))


def report_to_dict(report: SimReport, samples_path: str | None = None) -> dict:
    rate = report.insertion_rate
    lat = report.eviction_latency_ns
    return {
        "policy": report.policy,
        "capacity": report.capacity,
        "accesses": report.accesses,
        "insertions": report.insertions,
        "evictions": report.evictions,
        "hits": report.hits,
        "insertion_rate": None if rate != rate else rate,
        "latency_ns": {
            "p50": _percentile(lat, 50),
            "p90": _percentile(lat, 90),
            "p99": _percentile(lat, 99),
            "mean": float(np.mean(lat)) if lat else None,
            "samples_path": samples_path,
        },
    }


def benchmark_eviction_latency(
    pack: ModelPack,
    capacity: int = 4096,
    batch: int = BATCH_MAX,
    oversample: int = DEFAULT_OVERSAMPLE,
    rounds: int = 500,
    seed: int = 0,
) -> dict:
    """Time full eviction requests for FIFO and the learned policy.

    Both caches are prefilled to capacity and then driven through identical
    rounds: one timed eviction request of `batch` pages followed by untimed
    refills back to capacity. Returns both latency distributions in ns.
    """
    del seed  # the drive sequence is fixed; accepted for signature stability
    if capacity < batch:
        raise ConfigurationError("capacity must be >= batch")
    results: dict[str, list[int]] = {}
    for label, policy in (("fifo", FifoPolicy()), ("learned", LearnedPolicy(pack, oversample))):
        cache = CacheState(capacity)
        pool = capacity * 2
        t = 1_000_000
        next_key = 0
        while len(cache) < capacity:
            i = next_key % pool
            next_key += 1
            t += 1_000
            access(cache, PageKey(1, 100 + i // 64, i % 64), t, policy)
        samples: list[int] = []
        for _ in range(rounds):
            t += 1_000
            t0 = time.perf_counter_ns()
            if isinstance(policy, LearnedPolicy):
                _evict_scored(cache, batch, policy._scorer, policy.oversample, t)
            else:
                evict_fifo(cache, batch)
            samples.append(time.perf_counter_ns() - t0)
            while len(cache) < capacity:
                i = next_key % pool
                next_key += 1
                t += 1_000
                access(cache, PageKey(1, 100 + i // 64, i % 64), t, policy)
        results[label] = samples

    def summary(samples: list[int]) -> dict:
        return {
            "p50": _percentile(samples, 50),
            "p90": _percentile(samples, 90),
            "p99": _percentile(samples, 99),
            "mean": float(np.mean(samples)),
            "samples": samples,
        }

    return {
        "batch": batch,
        "oversample": oversample,
        "window": min(oversample * batch, capacity),
        "capacity": capacity,
        "rounds": rounds,
        "fifo": summary(results["fifo"]),
        "learned": summary(results["learned"]),
    }
