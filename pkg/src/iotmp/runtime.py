"""Execution-environment seam shared by live and simulated components.

Agents and managers never touch ``time`` or ``threading.Timer`` directly;
they go through a runtime object offering now / call_later / wait_for /
make_waiter / rng / trace. LiveRuntime backs these with the wall clock and
timer threads. The discrete-event kernel implements the same surface, which
is what makes whole-stack runs reproducible: swap the runtime, keep the
code.
"""

from __future__ import annotations

import logging
import random
import threading
import time

logger = logging.getLogger(__name__)


class TimerHandle:
    def __init__(self, timer: threading.Timer):
        self._timer = timer

    def cancel(self) -> None:
        self._timer.cancel()


class EventWaiter:
    """One-shot flag a caller blocks on; live version wraps threading.Event."""

    def __init__(self):
        self._event = threading.Event()

    def set(self) -> None:
        self._event.set()

    def wait(self, timeout: float | None = None) -> bool:
        return self._event.wait(timeout)


class LiveRuntime:
    """Wall-clock runtime: real time, timer threads, OS entropy."""

    def __init__(self):
        self._sysrandom = random.SystemRandom()

    def now(self) -> float:
        return time.time()

    def call_later(self, delay: float, fn, *args) -> TimerHandle:
        timer = threading.Timer(max(0.0, delay), self._guarded, (fn, args))
        timer.daemon = True
        timer.start()
        return TimerHandle(timer)

    @staticmethod
    def _guarded(fn, args):
        try:
            fn(*args)
        except Exception:
            logger.exception("timer callback failed")

    def wait_for(self, predicate, timeout: float | None = None,
                 poll: float = 0.005) -> bool:
        deadline = None if timeout is None else time.monotonic() + timeout
        while not predicate():
            if deadline is not None and time.monotonic() >= deadline:
                return predicate()
            time.sleep(poll)
        return True

    def sleep(self, duration: float) -> None:
        time.sleep(max(0.0, duration))

    def make_waiter(self) -> EventWaiter:
        return EventWaiter()

    def rng(self, name: str) -> random.Random:
        return self._sysrandom

    def trace(self, actor: str, event: str, **detail) -> None:
        logger.debug("trace %s %s %s", actor, event, detail)
