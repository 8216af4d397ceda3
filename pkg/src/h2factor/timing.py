"""Contiguous phase timing.

The timer is always inside exactly one phase, so the per-phase seconds
add up to the wall time between start and stop.
"""

from __future__ import annotations

import time

__all__ = ["PhaseTimer"]


class PhaseTimer:
    def __init__(self):
        self.seconds = {}
        self._phase = None
        self._mark = None

    def start(self, phase):
        self._phase = phase
        self._mark = time.perf_counter()

    def switch(self, phase):
        now = time.perf_counter()
        if self._phase is not None:
            self.seconds[self._phase] = (
                self.seconds.get(self._phase, 0.0) + now - self._mark
            )
        self._phase = phase
        self._mark = now

    def stop(self):
        self.switch(None)
        self._phase = None

    def total(self):
        return sum(self.seconds.values())
