"""Dynamic knob policies used as the "stock OS" baseline.

``ondemand_governor_step`` emulates a utilization-driven CPU frequency
governor; ``adaptive_itr_step`` emulates a two-class NIC interrupt moderation
policy (bulk traffic gets a long ITR, latency traffic a short one). The
classes here wrap them as engine hooks evaluated on a sampling period.
"""

from __future__ import annotations

from dataclasses import dataclass

from ..core import ConfigSpace

UP_THRESHOLD = 0.95
TARGET_UTIL = 0.8


def ondemand_governor_step(utilization: float, current: float, space: ConfigSpace,
                           up_threshold: float = UP_THRESHOLD,
                           target: float = TARGET_UTIL) -> float:
    if utilization > up_threshold:
        return space.f_max
    want = current * max(utilization, 0.0) / target
    if want <= space.f_min:
        return space.f_min
    return space.nearest_dvfs_at_least(want)


@dataclass(frozen=True)
class AdaptiveItrPolicy:
    bulk_bytes_per_s: float = 8e6
    bulk_pkts_per_s: float = 0.0
    bulk_itr_us: int = 50
    latency_itr_us: int = 2


def adaptive_itr_step(recent_throughput: float, recent_pkts: float,
                      policy: AdaptiveItrPolicy = AdaptiveItrPolicy()) -> int:
    """Bytes/s and packets/s over the last window -> ITR-delay in microseconds."""
    if recent_throughput >= policy.bulk_bytes_per_s and recent_pkts >= policy.bulk_pkts_per_s:
        return policy.bulk_itr_us
    return policy.latency_itr_us


class OndemandHook:
    """Engine hook re-evaluating DVFS every `period_s` of simulated time."""

    def __init__(self, space: ConfigSpace, period_s: float = 0.01,
                 up_threshold: float = UP_THRESHOLD, target: float = TARGET_UTIL):
        self.space = space
        self.period_s = period_s
        self.up_threshold = up_threshold
        self.target = target
        self._next = period_s
        self._last_t = 0.0
        self._last_busy = 0.0
        self.history: list[tuple[float, float]] = []

    def __call__(self, now, st):
        if now < self._next:
            return None
        span = now - self._last_t
        util = (st.busy_s - self._last_busy) / span if span > 0 else 0.0
        f = ondemand_governor_step(util, st.f_ghz, self.space, self.up_threshold, self.target)
        self._last_t, self._last_busy = now, st.busy_s
        self._next = now + self.period_s
        self.history.append((now, f))
        return f


class AdaptiveItrHook:
    """Engine hook re-classifying traffic every `period_s` of simulated time."""

    def __init__(self, policy: AdaptiveItrPolicy = AdaptiveItrPolicy(), period_s: float = 0.001):
        self.policy = policy
        self.period_s = period_s
        self._next = period_s
        self._last_t = 0.0
        self._last_bytes = 0.0
        self._last_pkts = 0
        self.history: list[tuple[float, int]] = []

    def __call__(self, now, st):
        if now < self._next:
            return None
        span = now - self._last_t
        bps = (st.bytes_in - self._last_bytes) / span
        pps = (st.pkts_in - self._last_pkts) / span
        itr = adaptive_itr_step(bps, pps, self.policy)
        self._last_t, self._last_bytes, self._last_pkts = now, st.bytes_in, st.pkts_in
        self._next = now + self.period_s
        self.history.append((now, itr))
        return itr
