"""Fixed-size worker pool with an asymmetric section split and a malleable
parallel-for.

The pool owns exactly ``t`` persistent worker threads and never creates more:
every construct in this module dispatches work onto those workers (or runs it
inline on the encountering thread), so the number of runnable workers can
never exceed the pool size.  An atomic high-water mark records the maximum
number of simultaneously executing work items, which stress tests assert
against.

Two constructs are provided:

* :func:`sections_2` runs two branches concurrently, each pinned to one
  worker.  It issues a fresh :class:`MalleableTeam` per invocation; the second
  branch may use it to recruit additional idle workers via
  :func:`parallel_for`.
* :func:`parallel_for` executes a chunked loop on the team.  The team size is
  re-read at every encounter, never mid-dispatch, so :func:`promote` calls
  from the other section become visible at the next loop boundary.

Chunks are assigned by a deterministic static-block policy: the work a chunk
performs depends only on the chunk index, never on the team size, which is
what makes kernel output bitwise reproducible across team sizes.
"""

from __future__ import annotations

import logging
import os
import threading
import time
from collections import deque
from dataclasses import dataclass

logger = logging.getLogger(__name__)

# Workers spin this long on an empty queue before parking on the condition
# variable (short-block idle policy).
_SPIN_SECONDS = 0.001

_ENV_THREADS = "PANELFORGE_THREADS"


def default_thread_count() -> int:
    """Pool size from the PANELFORGE_THREADS env var, else the CPU count."""
    raw = os.environ.get(_ENV_THREADS)
    if raw:
        try:
            n = int(raw)
            if n >= 1:
                return n
        except ValueError:
            pass
        logger.warning("ignoring invalid %s=%r", _ENV_THREADS, raw)
    return os.cpu_count() or 1


@dataclass(frozen=True)
class ChunkRange:
    """Half-open strided iteration space ``begin, begin+stride, ... < end``."""

    begin: int
    end: int
    stride: int = 1

    def __post_init__(self):
        if self.begin > self.end:
            raise ValueError("ChunkRange requires begin <= end")
        if self.stride < 1:
            raise ValueError("ChunkRange requires stride >= 1")

    @property
    def count(self) -> int:
        return (self.end - self.begin + self.stride - 1) // self.stride

    def chunk(self, idx: int) -> int:
        return self.begin + idx * self.stride


class MalleableTeam:
    """Shared, monotonically adjustable team-size cell.

    ``size()`` is read once per parallel-for encounter; :meth:`promote`
    changes take effect only at the next encounter.  The size is clamped to
    ``[1, max_size]`` at all times.
    """

    __slots__ = ("max_size", "_size")

    def __init__(self, size: int, max_size: int):
        if max_size < 1:
            raise ValueError("team max_size must be >= 1")
        self.max_size = max_size
        self._size = min(max(1, size), max_size)

    def size(self) -> int:
        return self._size

    def promote(self, new_size: int) -> int:
        clamped = min(max(1, new_size), self.max_size)
        if clamped != new_size:
            logger.warning("team size %d out of range, clamped to %d",
                           new_size, clamped)
        self._size = clamped
        return clamped


def promote(team: MalleableTeam, new_size: int) -> int:
    """Request a new team size; visible at the next parallel-for encounter.

    Out-of-range sizes are clamped and reported.  Returns the effective size.
    """
    return team.promote(new_size)


class _Latch:
    """Countdown latch used to wait for a batch of work items."""

    __slots__ = ("_remaining", "_lock", "_event", "exc")

    def __init__(self, count: int):
        self._remaining = count
        self._lock = threading.Lock()
        self._event = threading.Event()
        self.exc: BaseException | None = None
        if count == 0:
            self._event.set()

    def count_down(self, exc: BaseException | None = None):
        with self._lock:
            if exc is not None and self.exc is None:
                self.exc = exc
            self._remaining -= 1
            if self._remaining == 0:
                self._event.set()

    def done(self) -> bool:
        return self._event.is_set()

    def wait(self, timeout: float | None = None) -> bool:
        return self._event.wait(timeout)

    def reraise(self):
        if self.exc is not None:
            raise self.exc


class _WorkItem:
    __slots__ = ("fn", "latch")

    def __init__(self, fn, latch: _Latch):
        self.fn = fn
        self.latch = latch


class Pool:
    """Persistent pool of exactly ``t`` worker threads.

    The pool is the only source of concurrency in the library: constructs may
    run work inline on the encountering thread or hand it to idle workers,
    but never spawn new threads.  ``high_water`` tracks the maximum number of
    work items that were ever executing simultaneously.
    """

    def __init__(self, size: int | None = None):
        self.t = default_thread_count() if size is None else int(size)
        if self.t < 1:
            raise ValueError("pool size must be >= 1")
        self._queue: deque[_WorkItem] = deque()
        self._cond = threading.Condition()
        self._closed = False
        self._active = 0
        self.high_water = 0
        self._counter_lock = threading.Lock()
        self._workers = []
        for idx in range(self.t):
            th = threading.Thread(target=self._worker_loop, args=(idx,),
                                  name=f"panelforge-worker-{idx}", daemon=True)
            th.pf_pool = self
            th.pf_worker_index = idx
            self._workers.append(th)
            th.start()

    # -- worker machinery ---------------------------------------------------

    def _worker_loop(self, idx: int):
        while True:
            item = self._try_pop()
            if item is None:
                # brief spin before parking, to pick up bursty dispatch cheaply
                deadline = time.perf_counter() + _SPIN_SECONDS
                while item is None and time.perf_counter() < deadline:
                    time.sleep(0)
                    item = self._try_pop()
            if item is None:
                with self._cond:
                    while not self._queue and not self._closed:
                        self._cond.wait()
                    if self._closed and not self._queue:
                        return
                continue
            self._execute(item)

    def _try_pop(self) -> _WorkItem | None:
        with self._cond:
            if self._queue:
                return self._queue.popleft()
            return None

    def _execute(self, item: _WorkItem):
        # a worker that helps drain the queue while waiting inside an outer
        # item is still ONE runnable worker; count threads, not nesting
        th = threading.current_thread()
        depth = getattr(th, "pf_depth", 0)
        th.pf_depth = depth + 1
        if depth == 0:
            with self._counter_lock:
                self._active += 1
                if self._active > self.high_water:
                    self.high_water = self._active
        exc = None
        try:
            item.fn()
        except BaseException as e:   # propagate to the waiter, keep worker alive
            exc = e
        finally:
            th.pf_depth = depth
            if depth == 0:
                with self._counter_lock:
                    self._active -= 1
            item.latch.count_down(exc)

    def _push_items(self, items):
        with self._cond:
            if self._closed:
                raise RuntimeError("pool is closed")
            self._queue.extend(items)
            self._cond.notify_all()

    def reset_high_water(self):
        with self._counter_lock:
            self.high_water = self._active

    # -- lifecycle ----------------------------------------------------------

    def close(self):
        with self._cond:
            self._closed = True
            self._cond.notify_all()
        for th in self._workers:
            th.join(timeout=5.0)

    def __enter__(self):
        return self

    def __exit__(self, *exc_info):
        self.close()


def _current_pool_worker(pool: Pool) -> bool:
    return getattr(threading.current_thread(), "pf_pool", None) is pool


def _wait_helping(pool: Pool, latch: _Latch):
    """Wait for ``latch``, executing queued leaf items if we are a worker."""
    if _current_pool_worker(pool):
        while not latch.done():
            item = pool._try_pop()
            if item is not None:
                pool._execute(item)
            else:
                latch.wait(0.0005)
    else:
        latch.wait()
    latch.reraise()


def sections_2(pool: Pool, branch_a, branch_b) -> MalleableTeam:
    """Run two branches concurrently, each on one dedicated worker.

    Both callables receive the team handle issued for this invocation
    (initial size ``t - 1``).  By convention branch_a only ever calls
    :func:`promote` on it, while branch_b uses it for :func:`parallel_for`;
    handing out a single handle per invocation is what rules out deadlock
    between the branches.  Returns after both branches complete.

    With a single-worker pool the branches execute sequentially (branch_a
    first); this is a documented degradation, not an error.
    """
    team = MalleableTeam(size=max(1, pool.t - 1), max_size=pool.t)
    if pool.t == 1:
        for fn in (branch_a, branch_b):
            latch = _Latch(1)
            pool._push_items([_WorkItem(lambda f=fn: f(team), latch)])
            _wait_helping(pool, latch)
        return team
    latch = _Latch(2)
    pool._push_items([
        _WorkItem(lambda: branch_a(team), latch),
        _WorkItem(lambda: branch_b(team), latch),
    ])
    _wait_helping(pool, latch)
    return team


def parallel_for_blocks(pool: Pool | None, team: MalleableTeam | None,
                        n_chunks: int, run):
    """Static-block dispatch of ``n_chunks`` chunk indices.

    ``run(rank, lo, hi)`` processes the contiguous chunk indices
    ``[lo, hi)``.  Rank r owns ``[r*n//s, (r+1)*n//s)`` where s is the team
    size read once at this encounter; the index-to-output mapping inside
    ``run`` must not depend on s.  Serial (team size 1 or no pool) executes
    inline on the encountering thread, which also keeps pool workers that run
    kernels with a serial team free of queue traffic.
    """
    if n_chunks <= 0:
        return
    s = 1 if (team is None or pool is None) else min(team.size(), team.max_size, n_chunks)
    if s <= 1:
        run(0, 0, n_chunks)
        return
    latch = _Latch(s)
    items = []
    for r in range(s):
        lo = r * n_chunks // s
        hi = (r + 1) * n_chunks // s
        items.append(_WorkItem(lambda r=r, lo=lo, hi=hi: run(r, lo, hi), latch))
    pool._push_items(items)
    _wait_helping(pool, latch)


def parallel_for(pool: Pool | None, team: MalleableTeam | None,
                 rng: ChunkRange, body):
    """Execute ``body(chunk, rank)`` exactly once per chunk of ``rng``.

    Chunks are distributed by the same deterministic static-block policy as
    :func:`parallel_for_blocks`; the barrier at the end is implicit (the call
    returns only once every chunk has run).  An empty range returns
    immediately.
    """
    n = rng.count

    def run(rank, lo, hi):
        for idx in range(lo, hi):
            body(rng.chunk(idx), rank)

    parallel_for_blocks(pool, team, n, run)
