"""Single-threaded discrete-event kernel.

Everything in a simulated deployment shares one of these: it is the clock,
the timer wheel, the source of named deterministic RNG streams and the
trace sink. Handlers run to completion in timestamp order (FIFO within a
timestamp). Synchronous waits are allowed anywhere: ``wait_for`` keeps
pumping queued events, re-entrantly, until the predicate holds or the
simulated deadline passes, so request/response code reads the same as in
live mode.
"""

from __future__ import annotations

import hashlib
import heapq
import itertools
import logging
import random

from iotmp.sim.trace import Trace

logger = logging.getLogger(__name__)

# 2021-01-04 00:00:00 UTC, a Monday; policy windows line up with weekdays
SIM_EPOCH = 1609718400.0


class ScheduledCall:
    __slots__ = ("fn", "args", "cancelled")

    def __init__(self, fn, args):
        self.fn = fn
        self.args = args
        self.cancelled = False

    def cancel(self) -> None:
        self.cancelled = True


class KernelWaiter:
    __slots__ = ("_kernel", "_flag")

    def __init__(self, kernel):
        self._kernel = kernel
        self._flag = False

    def set(self) -> None:
        self._flag = True

    def wait(self, timeout: float | None = None) -> bool:
        return self._kernel.wait_for(lambda: self._flag, timeout)


class Kernel:
    def __init__(self, seed: int = 0, start: float = SIM_EPOCH):
        self.seed = seed
        self._t = float(start)
        self._heap: list = []
        self._order = itertools.count()
        self._rngs: dict[str, random.Random] = {}
        self.trace_log = Trace()

    # -- clock and timers ----------------------------------------------------

    def now(self) -> float:
        return self._t

    def call_later(self, delay: float, fn, *args) -> ScheduledCall:
        return self.call_at(self._t + max(0.0, delay), fn, *args)

    def call_at(self, t: float, fn, *args) -> ScheduledCall:
        call = ScheduledCall(fn, args)
        heapq.heappush(self._heap, (max(t, self._t), next(self._order), call))
        return call

    def pump(self) -> bool:
        """Run the next queued call; False when the queue is empty."""
        while self._heap:
            t, _, call = heapq.heappop(self._heap)
            if call.cancelled:
                continue
            self._t = t
            try:
                call.fn(*call.args)
            except Exception:
                logger.exception("event handler failed at t=%s", t)
            return True
        return False

    def wait_for(self, predicate, timeout: float | None = None) -> bool:
        deadline = None if timeout is None else self._t + timeout
        while not predicate():
            if not self._heap:
                if deadline is not None:
                    self._t = deadline
                return predicate()
            t_next = self._heap[0][0]
            if deadline is not None and t_next > deadline:
                self._t = deadline
                return predicate()
            self.pump()
        return True

    def sleep(self, duration: float) -> None:
        self.wait_for(lambda: False, timeout=max(0.0, duration))

    def run_for(self, duration: float) -> None:
        end = self._t + duration
        while self._heap and self._heap[0][0] <= end:
            self.pump()
        self._t = end

    def run_until_idle(self, max_duration: float | None = None) -> None:
        limit = None if max_duration is None else self._t + max_duration
        while self._heap:
            if limit is not None and self._heap[0][0] > limit:
                self._t = limit
                return
            self.pump()

    def make_waiter(self) -> KernelWaiter:
        return KernelWaiter(self)

    # -- determinism ----------------------------------------------------------

    def rng(self, name: str) -> random.Random:
        """Named stream, stable across runs and insertion orders."""
        stream = self._rngs.get(name)
        if stream is None:
            digest = hashlib.sha256(f"{self.seed}:{name}".encode("utf-8")).digest()
            stream = random.Random(int.from_bytes(digest[:8], "big"))
            self._rngs[name] = stream
        return stream

    def trace(self, actor: str, event: str, **detail) -> None:
        self.trace_log.emit(self._t, actor, event, **detail)

    def trace_digest(self) -> str:
        return self.trace_log.digest()
