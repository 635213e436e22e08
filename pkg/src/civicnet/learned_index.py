"""Piecewise-linear learned index with a hard error bound.

Keys are sorted 64-bit unsigned integers. Segments are fitted greedily with a
shrinking slope cone: a segment absorbs keys while some line through its
origin predicts every absorbed rank within +/- epsilon; when the feasible
slope interval empties, the segment is closed and a new one starts. Lookup
predicts a rank from the covering segment and scans the +/- epsilon window,
so results always agree with plain binary search.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass
from typing import Iterable

EPSILON = 64


@dataclass(frozen=True)
class Segment:
    start_key: int
    slope: float
    intercept: float

    def predict(self, key: int) -> float:
        return self.slope * key + self.intercept


class SearchIndex:
    def __init__(self, keys: list[int], locators: list, segments: list[Segment], epsilon: int):
        self.keys = keys
        self.locators = locators
        self.segments = segments
        self.epsilon = epsilon
        self._starts = [s.start_key for s in segments]

    @classmethod
    def build(cls, pairs: Iterable[tuple[int, object]], epsilon: int = EPSILON) -> "SearchIndex":
        # duplicate keys: the last locator wins, keeping ranks strictly increasing
        table: dict[int, object] = {}
        for key, locator in pairs:
            table[int(key)] = locator
        keys = sorted(table)
        locators = [table[k] for k in keys]
        segments = _fit_segments(keys, epsilon)
        index = cls(keys, locators, segments, epsilon)
        max_err = index.max_prediction_error()
        assert max_err <= epsilon, f"prediction error {max_err} exceeds bound {epsilon}"
        return index

    def max_prediction_error(self) -> int:
        worst = 0
        for rank, key in enumerate(self.keys):
            worst = max(worst, abs(self._predict_rank(key) - rank))
        return worst

    def _predict_rank(self, key: int) -> int:
        i = bisect.bisect_right(self._starts, key) - 1
        if i < 0:
            i = 0
        predicted = round(self.segments[i].predict(key))
        return max(0, min(len(self.keys) - 1, int(predicted)))

    def lookup(self, key: int):
        """Locator for ``key`` or None; scans only the bounded window."""
        if not self.keys:
            return None
        center = self._predict_rank(key)
        lo = max(0, center - self.epsilon)
        hi = min(len(self.keys), center + self.epsilon + 1)
        i = bisect.bisect_left(self.keys, key, lo, hi)
        if i < len(self.keys) and self.keys[i] == key:
            return self.locators[i]
        return None

    def __len__(self) -> int:
        return len(self.keys)


def _fit_segments(keys: list[int], epsilon: int) -> list[Segment]:
    if not keys:
        return []
    segments: list[Segment] = []
    x0, y0 = keys[0], 0
    slope_lo, slope_hi = float("-inf"), float("inf")
    for rank in range(1, len(keys)):
        x, y = keys[rank], rank
        dx = x - x0
        lo_needed = (y - epsilon - y0) / dx
        hi_needed = (y + epsilon - y0) / dx
        new_lo = max(slope_lo, lo_needed)
        new_hi = min(slope_hi, hi_needed)
        if new_lo > new_hi:
            segments.append(_close_segment(x0, y0, slope_lo, slope_hi))
            x0, y0 = x, y
            slope_lo, slope_hi = float("-inf"), float("inf")
        else:
            slope_lo, slope_hi = new_lo, new_hi
    segments.append(_close_segment(x0, y0, slope_lo, slope_hi))
    return segments


def _close_segment(x0: int, y0: int, slope_lo: float, slope_hi: float) -> Segment:
    if slope_lo == float("-inf"):  # single-point segment
        slope = 0.0
    else:
        slope = (slope_lo + slope_hi) / 2.0
    return Segment(start_key=x0, slope=slope, intercept=y0 - slope * x0)
