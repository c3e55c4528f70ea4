"""Read-only wave-function providers over a time interval.

A timeline hands out interpolation objects (anything with a
``combine(other, a, b)`` method, usually :class:`SplineField`) at arbitrary
times, linearly interpolating between equally spaced snapshots.  Queries that
land on a snapshot time return that snapshot exactly.
"""
from __future__ import annotations

import threading
from collections import OrderedDict
from typing import Callable

import numpy as np

from .errors import PropagationError
from .grid import GridWavefunction
from .spline import SplineField

__all__ = ["Timeline", "wavefunction_field"]

_SNAP_TOL = 1e-9


def wavefunction_field(psi: GridWavefunction) -> SplineField:
    field = SplineField.from_wavefunction(psi)
    field.mean_density = float(np.mean(psi.density()))
    return field


def _combine(f0, f1, a, b):
    out = f0.combine(f1, a, b)
    if hasattr(f0, "mean_density"):
        out.mean_density = a * f0.mean_density + b * f1.mean_density
    return out


class Timeline:
    """Snapshots ``initial, advance(initial), advance(advance(initial)), ...``.

    Parameters
    ----------
    initial : state at time ``t0``
    advance : callable mapping the snapshot at index ``i`` to index ``i+1``;
        may be None when ``snapshots`` is given
    step : time between snapshots
    horizon : last time that may be requested
    to_field : builds the interpolation object for one snapshot
    snapshots : optional precomputed list of states (then ``advance`` is unused)
    cache_size : snapshots kept in memory when propagating lazily
    """

    def __init__(
        self,
        initial,
        advance: Callable | None,
        step: float,
        horizon: float,
        to_field: Callable = wavefunction_field,
        snapshots: list | None = None,
        cache_size: int = 12,
        t0: float = 0.0,
    ):
        if not step > 0:
            raise ValueError("snapshot step must be positive")
        self.step = float(step)
        self.t0 = float(t0)
        self.horizon = float(horizon)
        self.count = int(round((self.horizon - self.t0) / self.step)) + 1
        self.to_field = to_field
        self._initial = initial
        self._advance = advance
        self._snapshots = snapshots
        if snapshots is not None and len(snapshots) < self.count:
            raise ValueError("not enough snapshots for the requested horizon")
        self._cache_size = max(int(cache_size), 3)
        self._states = OrderedDict()
        self._fields = OrderedDict()
        self._cursor = (0, initial)
        self._lock = threading.RLock()

    @classmethod
    def from_snapshots(cls, snapshots: list, step: float, to_field: Callable = wavefunction_field, t0: float = 0.0):
        return cls(snapshots[0], None, step, t0 + step * (len(snapshots) - 1), to_field, list(snapshots), t0=t0)

    def times(self) -> np.ndarray:
        return self.t0 + self.step * np.arange(self.count)

    def fresh(self) -> "Timeline":
        """Independent copy with an empty cache (for use on another worker)."""
        return Timeline(
            self._initial, self._advance, self.step, self.horizon, self.to_field, self._snapshots,
            self._cache_size, self.t0,
        )

    def _remember(self, store: OrderedDict, key, value):
        store[key] = value
        store.move_to_end(key)
        while len(store) > self._cache_size:
            store.popitem(last=False)

    def state(self, index: int):
        if not 0 <= index < self.count:
            raise PropagationError(f"snapshot {index} outside [0, {self.count - 1}]")
        with self._lock:
            if self._snapshots is not None:
                return self._snapshots[index]
            if index in self._states:
                self._states.move_to_end(index)
                return self._states[index]
            i, s = self._cursor
            if index < i:
                i, s = 0, self._initial
            while i < index:
                try:
                    s = self._advance(s)
                except Exception as exc:  # surface any solver failure as a provider failure
                    raise PropagationError(f"propagation to snapshot {i + 1} failed: {exc}") from exc
                i += 1
                if index - i < self._cache_size:
                    self._remember(self._states, i, s)
            self._cursor = (i, s)
            self._remember(self._states, index, s)
            return s

    def field_at_index(self, index: int):
        with self._lock:
            if index in self._fields:
                self._fields.move_to_end(index)
                return self._fields[index]
            f = self.to_field(self.state(index))
            self._remember(self._fields, index, f)
            return f

    def locate(self, t: float):
        """``(index, fraction)`` with ``t = t0 + (index + fraction) * step``."""
        x = (t - self.t0) / self.step
        if x < -_SNAP_TOL or x > self.count - 1 + _SNAP_TOL:
            raise PropagationError(f"time {t} outside timeline [{self.t0}, {self.horizon}]")
        i = int(np.floor(x + _SNAP_TOL))
        frac = x - i
        if abs(frac) < _SNAP_TOL:
            frac = 0.0
        i = min(max(i, 0), self.count - 1)
        return i, frac

    def field(self, t: float):
        i, frac = self.locate(t)
        if frac == 0.0:
            return self.field_at_index(i)
        return _combine(self.field_at_index(i), self.field_at_index(i + 1), 1.0 - frac, frac)

    def state_at(self, t: float):
        i, frac = self.locate(t)
        if frac != 0.0:
            raise PropagationError(f"time {t} is not a snapshot time")
        return self.state(i)
