"""Per-sample update time of the streaming updaters."""

from __future__ import annotations

import time
from typing import Optional, Sequence

import numpy as np

from ..belief import SsmHyper
from ..errors import CapabilityError, ConfigurationError
from ..learners import make_updater
from ..network import MlpSpec
from .csvio import LatencyRow

__all__ = ["measure_latency", "hidden_for_params", "time_updates", "DEFAULT_ROSTER"]

# (label, updater name, options)
DEFAULT_ROSTER = (
    ("vd-ekf", "vd-ekf", {}),
    ("lo-fi", "lo-fi", {"rank": 10}),
    ("cm-ekf", "cm-ekf", {}),
    ("bong-ef", "bong-ef", {"kind": "diag"}),
    ("bong-ef", "bong-ef", {"kind": "dlr", "rank": 10}),
    ("bong-ef", "bong-ef", {"kind": "full"}),
    ("bbb-10", "bbb", {"iters": 10}),
    ("gd-10", "gd", {"iters": 10}),
)


def hidden_for_params(d_in: int, d_out: int, P: int) -> int:
    """Hidden width of a one-hidden-layer MLP whose size is closest to ``P``."""
    h = max(1, round((P - d_out) / (d_in + 1 + d_out)))
    return int(h)


def _representation(updater) -> str:
    rep = getattr(updater, "representation", None)
    if rep is None:
        return "point"
    rank = getattr(updater, "rank", 0)
    return f"dlr-{rank}" if rep == "dlr" else rep


def time_updates(updater, spec: MlpSpec, n_updates: int = 1000, warmup: int = 100,
                 seed: int = 0, n_input_bits: int = 0) -> np.ndarray:
    """Wall time (microseconds) of ``n_updates`` consecutive streaming updates.

    The first ``warmup`` updates run but are not timed. ``n_input_bits``
    trailing inputs are drawn in (0, 1) like the soft bits a DeepSIC module
    receives; the rest are standard normal.
    """
    if not getattr(updater, "streaming", False):
        raise ConfigurationError(f"{updater.name} is not a streaming updater")
    rng = np.random.default_rng(seed)
    total = warmup + n_updates
    X = rng.standard_normal((total, spec.d_in))
    if n_input_bits:
        X[:, -n_input_bits:] = rng.uniform(0.0, 1.0, (total, n_input_bits))
    bits = rng.integers(0, 2, (total, spec.d_out)).astype(np.float64)
    state = updater.init_state(spec.init_params(rng))
    step_rng = np.random.default_rng(seed + 1)
    out = np.empty(n_updates)
    clock = time.perf_counter_ns
    for i in range(total):
        t0 = clock()
        state = updater.step(state, spec, X[i], bits[i], step_rng)
        dt = clock() - t0
        if i >= warmup:
            out[i - warmup] = dt / 1e3
    return out


def measure_latency(widths_grid: Sequence[tuple], roster=DEFAULT_ROSTER,
                    hyper: Optional[SsmHyper] = None, n_updates: int = 1000,
                    warmup: int = 100, n_input_bits: int = 0) -> list:
    """One :class:`LatencyRow` per (updater, representation, network size).

    Updaters refused by the capability policy get ``nan`` timings.
    """
    if n_updates < 1:
        raise ConfigurationError("n_updates must be positive")
    rows = []
    for widths in widths_grid:
        spec = MlpSpec(tuple(widths))
        for label, name, opts in roster:
            updater = make_updater(name, hyper, **opts)
            rep = _representation(updater)
            try:
                t = time_updates(updater, spec, n_updates, warmup, n_input_bits=n_input_bits)
            except CapabilityError:
                rows.append(LatencyRow(label, rep, spec.n_params, float("nan"), float("nan")))
                continue
            rows.append(LatencyRow(label, rep, spec.n_params, float(t.mean()),
                                   float(np.percentile(t, 95))))
    return rows
