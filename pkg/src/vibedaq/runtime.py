"""Scheduling substrate: a virtual-time kernel for deterministic simulation
and a real-time event loop for live daemons. Both expose the same trio —
now_us(), call_at(), call_soon() — so node logic runs unchanged on either."""

from __future__ import annotations

import heapq
import threading
import time
from concurrent.futures import Future

from .core import VibedaqError


class SimKernel:
    """Single-threaded discrete-event executor on a virtual microsecond clock."""

    def __init__(self, start_us: int = 0):
        self._now = start_us
        self._heap: list[tuple[int, int, object]] = []
        self._seq = 0

    def now_us(self) -> int:
        return self._now

    def call_at(self, t_us: int, fn) -> None:
        if t_us < self._now:
            raise VibedaqError(f"cannot schedule at {t_us} before now {self._now}")
        self._seq += 1
        heapq.heappush(self._heap, (int(t_us), self._seq, fn))

    def call_soon(self, fn) -> None:
        self.call_at(self._now, fn)

    def run_until_idle(self, max_time_us: int | None = None, max_events: int = 50_000_000) -> None:
        events = 0
        while self._heap:
            t, _, fn = self._heap[0]
            if max_time_us is not None and t > max_time_us:
                break
            heapq.heappop(self._heap)
            self._now = t
            fn()
            events += 1
            if events > max_events:
                raise VibedaqError("simulation exceeded event budget; likely stuck")

    def run_until(self, predicate, max_time_us: int | None = None) -> bool:
        """Run events until predicate() turns true; returns whether it did."""
        while self._heap:
            if predicate():
                return True
            t, _, fn = heapq.heappop(self._heap)
            if max_time_us is not None and t > max_time_us:
                return predicate()
            self._now = t
            fn()
        return bool(predicate())


class EventLoop:
    """Timer/callback thread driven by the monotonic clock.

    Callbacks run serialized on the loop thread; submit() lets other threads
    run a function on the loop and wait for its result.
    """

    def __init__(self, name: str = "vibedaq-loop"):
        self._cond = threading.Condition()
        self._heap: list[tuple[int, int, object]] = []
        self._seq = 0
        self._running = False
        self._thread = threading.Thread(target=self._run, name=name, daemon=True)

    def start(self) -> None:
        self._running = True
        self._thread.start()

    def stop(self) -> None:
        with self._cond:
            self._running = False
            self._cond.notify()
        if self._thread.is_alive() and threading.current_thread() is not self._thread:
            self._thread.join(timeout=5)

    def now_us(self) -> int:
        return time.monotonic_ns() // 1000

    def call_at(self, t_us: int, fn) -> None:
        with self._cond:
            self._seq += 1
            heapq.heappush(self._heap, (int(t_us), self._seq, fn))
            self._cond.notify()

    def call_soon(self, fn) -> None:
        self.call_at(self.now_us(), fn)

    def call_later(self, delay_us: int, fn) -> None:
        self.call_at(self.now_us() + delay_us, fn)

    def submit(self, fn) -> Future:
        fut: Future = Future()

        def runner():
            try:
                fut.set_result(fn())
            except BaseException as exc:  # propagate to the waiting caller
                fut.set_exception(exc)

        self.call_soon(runner)
        return fut

    def _run(self) -> None:
        while True:
            with self._cond:
                if not self._running:
                    return
                now = self.now_us()
                if self._heap and self._heap[0][0] <= now:
                    _, _, fn = heapq.heappop(self._heap)
                else:
                    timeout = None
                    if self._heap:
                        timeout = max(0.0, (self._heap[0][0] - now) / 1e6)
                    self._cond.wait(timeout=timeout)
                    continue
            try:
                fn()
            except Exception:  # a failing callback must not kill the loop
                import traceback

                traceback.print_exc()


class Clock:
    """A node-local clock laid over a scheduler whose timeline may be shifted.

    local_time = scheduler_time + offset. Scheduling accepts local deadlines
    and converts them to the scheduler's timeline.
    """

    def __init__(self, scheduler, offset_us: int = 0):
        self._scheduler = scheduler
        self._offset = int(offset_us)

    def now_us(self) -> int:
        return self._scheduler.now_us() + self._offset

    def call_at(self, local_t_us: int, fn) -> None:
        self._scheduler.call_at(int(local_t_us) - self._offset, fn)

    def call_soon(self, fn) -> None:
        self._scheduler.call_soon(fn)

    def call_later(self, delay_us: int, fn) -> None:
        self.call_at(self.now_us() + int(delay_us), fn)
