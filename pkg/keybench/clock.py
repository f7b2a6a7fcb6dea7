"""
Time sources shared by the meter backends, the DUT runner and the collector.

Everything that waits or timestamps takes a Clock so that tests can swap in a
VirtualClock and run acquisition windows faster than real time.
"""
from __future__ import annotations

import logging
import threading
import time
from typing import Optional

logger = logging.getLogger('keybench.clock')

# 2025-05-07 13:32:28 UTC, a convenient fixed wall-clock origin for virtual runs
DEFAULT_VIRTUAL_EPOCH = 1746624748.0


class Clock(object):
    """
    Interface for a time source.

    now()  monotonic seconds, only meaningful as differences
    wall() epoch seconds, for human-readable timestamps
    """

    def now(self) -> float:
        raise NotImplementedError

    def wall(self) -> float:
        raise NotImplementedError

    def sleep(self, seconds: float) -> None:
        raise NotImplementedError

    def wait_until(self, deadline: float, stop_event: Optional[threading.Event] = None) -> bool:
        """
        Block until now() >= deadline. Returns True if stop_event was set
        before the deadline was reached, False otherwise.
        """
        raise NotImplementedError


class SystemClock(Clock):
    def now(self) -> float:
        return time.monotonic()

    def wall(self) -> float:
        return time.time()

    def sleep(self, seconds: float) -> None:
        if seconds > 0:
            time.sleep(seconds)

    def wait_until(self, deadline, stop_event=None):
        remaining = deadline - self.now()
        if stop_event is None:
            self.sleep(remaining)
            return False
        if remaining <= 0:
            return stop_event.is_set()
        return stop_event.wait(remaining)


class VirtualClock(Clock):
    """
    A clock whose time only moves when someone moves it.

    sleep() advances virtual time at once and wakes every waiter. In
    free-running mode wait_until() simply jumps to the deadline, so a single
    thread can drive itself. With free_running=False, wait_until() blocks until
    another party (typically a workload calling sleep()) has advanced time far
    enough, or the stop event is set.

    With a speedup, sleep() also spends seconds/speedup of real time, which
    gives threads on the other end of a socket the chance to keep up.
    """

    # real seconds between checks of a stop event while blocked
    STOP_POLL_INTERVAL = 0.005

    def __init__(self, start: float = 0.0, epoch: float = DEFAULT_VIRTUAL_EPOCH,
                 free_running: bool = True, speedup: Optional[float] = None):
        if speedup is not None and speedup <= 0:
            raise ValueError("speedup must be > 0, not %r" % speedup)
        self._now = float(start)
        self._epoch = float(epoch)
        self.free_running = free_running
        self.speedup = speedup
        self._cond = threading.Condition()

    def now(self):
        with self._cond:
            return self._now

    def wall(self):
        with self._cond:
            return self._epoch + self._now

    def advance(self, seconds: float) -> float:
        if seconds < 0:
            raise ValueError("virtual time cannot go backwards (%r)" % seconds)
        with self._cond:
            self._now += seconds
            self._cond.notify_all()
            return self._now

    def advance_to(self, when: float) -> float:
        with self._cond:
            if when > self._now:
                self._now = float(when)
                self._cond.notify_all()
            return self._now

    def sleep(self, seconds):
        if seconds > 0:
            if self.speedup:
                time.sleep(seconds / self.speedup)
            self.advance(seconds)

    def wait_until(self, deadline, stop_event=None):
        if stop_event is not None and stop_event.is_set():
            return True
        if self.free_running:
            self.advance_to(deadline)
            return False
        with self._cond:
            while self._now < deadline:
                if stop_event is not None and stop_event.is_set():
                    return True
                self._cond.wait(self.STOP_POLL_INTERVAL)
        return False
