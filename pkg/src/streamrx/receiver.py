"""Modular (DeepSIC) and monolithic receivers built on the MLP kernels.

DeepSIC runs ``Q`` soft-interference-cancellation iterations; iteration ``q``
holds one small network per user, all fed the same input
``[r, ell^(1), ..., ell^(K)]`` built from the previous iteration's soft bits
(0.5 everywhere before the first iteration). Each module keeps its own
belief (or weight vector) and is trained against its user's pilot bits.
"""

from __future__ import annotations

import time
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigurationError, ContractViolation
from .network import MlpSpec, forward, forward_batch

__all__ = [
    "assemble_input",
    "hard_decide",
    "DeepSic",
    "Pipeline",
    "Monolithic",
    "deepsic_forward",
    "pipelined_step",
]


def assemble_input(r, ell_prev) -> np.ndarray:
    """``[r, ell^(1), ..., ell^(K)]`` in user order."""
    return np.concatenate([np.asarray(r, dtype=np.float64),
                           np.asarray(ell_prev, dtype=np.float64)])


def hard_decide(ell) -> np.ndarray:
    """Strict threshold at one half."""
    return (np.asarray(ell) > 0.5).astype(np.int8)


class DeepSic:
    """K x Q lattice of per-user modules.

    Args:
        n_users: K.
        n_antennas: N; the received vector has length 2N.
        bits_per_symbol: B.
        updater: object from :mod:`streamrx.learners` shared by all modules.
        n_iters: Q.
        hidden: hidden width of every module.
        seed: seeds both the weight initialisation and per-module RNG streams.
        workers: if > 1, the K updates of a layer run on a thread pool.
    """

    def __init__(self, n_users: int, n_antennas: int, bits_per_symbol: int, updater,
                 n_iters: int = 3, hidden: int = 24, seed: int = 0,
                 workers: Optional[int] = None):
        if min(n_users, n_antennas, bits_per_symbol, n_iters, hidden) < 1:
            raise ConfigurationError("all DeepSIC dimensions must be positive")
        self.K, self.N, self.B, self.Q = n_users, n_antennas, bits_per_symbol, n_iters
        self.spec = MlpSpec((2 * n_antennas + n_users * bits_per_symbol, hidden,
                             bits_per_symbol))
        self.updater = updater
        init_seq, rng_seq = np.random.SeedSequence(seed).spawn(2)
        init_rng = np.random.default_rng(init_seq)
        self.rngs = [[np.random.default_rng(s) for s in seqs]
                     for seqs in (rs.spawn(n_users) for rs in rng_seq.spawn(n_iters))]
        self.states = [[updater.init_state(self.spec.init_params(init_rng))
                        for _ in range(n_users)] for _ in range(n_iters)]
        self._pool = ThreadPoolExecutor(workers) if workers and workers > 1 else None
        self.update_count = 0
        self.step_ns: list[int] = []   # wall time of every module update

    @property
    def input_dim(self) -> int:
        return self.spec.d_in

    @property
    def n_params_per_module(self) -> int:
        return self.spec.n_params

    def params(self, q: int, k: int) -> np.ndarray:
        return self.updater.params(self.states[q][k])

    def initial_soft(self) -> np.ndarray:
        return np.full(self.K * self.B, 0.5)

    def layer_forward(self, q: int, x) -> np.ndarray:
        return np.concatenate([forward(self.spec, self.params(q, k), x)
                               for k in range(self.K)])

    def forward(self, r) -> np.ndarray:
        r = self._check_r(r)
        ell = self.initial_soft()
        for q in range(self.Q):
            ell = self.layer_forward(q, assemble_input(r, ell))
        return ell

    def forward_batch(self, R) -> np.ndarray:
        R = np.atleast_2d(np.asarray(R, dtype=np.float64))
        ell = np.full((R.shape[0], self.K * self.B), 0.5)
        for q in range(self.Q):
            X = np.hstack([R, ell])
            ell = np.hstack([forward_batch(self.spec, self.params(q, k), X)
                             for k in range(self.K)])
        return ell

    def train_layer(self, q: int, x, bits) -> None:
        """Streaming update of every module of layer ``q`` on one sample."""
        bits = np.asarray(bits, dtype=np.float64).reshape(self.K, self.B)

        def one(k):
            t0 = time.perf_counter_ns()
            out = self.updater.step(self.states[q][k], self.spec, x, bits[k],
                                    self.rngs[q][k])
            self.step_ns.append(time.perf_counter_ns() - t0)
            return out

        if self._pool is None:
            new = [one(k) for k in range(self.K)]
        else:
            new = list(self._pool.map(one, range(self.K)))
        self.states[q] = new
        self.update_count += self.K

    def fit_batch(self, R, bits, rng: Optional[np.random.Generator] = None) -> None:
        """Layer-by-layer batch training (non-streaming updaters such as SGD)."""
        R = np.atleast_2d(np.asarray(R, dtype=np.float64))
        bits = np.asarray(bits, dtype=np.float64).reshape(R.shape[0], self.K, self.B)
        ell = np.full((R.shape[0], self.K * self.B), 0.5)
        for q in range(self.Q):
            X = np.hstack([R, ell])
            for k in range(self.K):
                self.states[q][k] = self.updater.fit(self.states[q][k], self.spec, X,
                                                     bits[:, k], rng or self.rngs[q][k])
            ell = np.hstack([forward_batch(self.spec, self.params(q, k), X)
                             for k in range(self.K)])

    def _check_r(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=np.float64)
        if r.shape != (2 * self.N,):
            raise ConfigurationError(f"received vector of shape {r.shape}, expected ({2 * self.N},)")
        return r

    def close(self):
        if self._pool is not None:
            self._pool.shutdown()


def deepsic_forward(state: DeepSic, r) -> np.ndarray:
    return state.forward(r)


@dataclass
class _Entry:
    index: int
    r: np.ndarray
    bits: Optional[np.ndarray]
    ell: np.ndarray


class Pipeline:
    """Staggered execution: at each tick stage q works on sample ``t - q``.

    A sample entering at tick ``t`` leaves after stage ``Q-1`` at tick
    ``t + Q - 1``. Pilot samples update every module of a stage (predict
    then update) before that stage's inference; data samples only run
    inference. Stage q reads the soft bits stage q-1 wrote one tick earlier.
    """

    def __init__(self, receiver: DeepSic, train: bool = True):
        self.rx = receiver
        self.train = train
        self.slots: list[Optional[_Entry]] = [None] * receiver.Q
        self.tick = 0
        self.touches: Counter = Counter()

    def step(self, r, bits=None, pilot: bool = False, index: Optional[int] = None):
        """Feed one sample; return ``(index, ell)`` of the sample leaving, if any."""
        if pilot and bits is None:
            raise ContractViolation("pilot sample given without label bits")
        entry = None
        if r is not None:
            entry = _Entry(self.tick if index is None else index,
                           self.rx._check_r(r),
                           None if not pilot else np.asarray(bits, dtype=np.float64).ravel(),
                           self.rx.initial_soft())
        self.slots = [entry] + self.slots[:-1]
        self.tick += 1
        for q, e in enumerate(self.slots):
            if e is None:
                continue
            x = assemble_input(e.r, e.ell)
            if self.train and e.bits is not None:
                self.rx.train_layer(q, x, e.bits)
                self.touches[(e.index, q)] += 1
            e.ell = self.rx.layer_forward(q, x)
        out = self.slots[-1]
        self.slots[-1] = None
        if out is None:
            return None
        return out.index, out.ell

    def flush(self) -> list:
        """Advance until the pipe is empty; return the emitted outputs."""
        outs = []
        while any(e is not None for e in self.slots):
            res = self.step(None)
            if res is not None:
                outs.append(res)
        return outs

    @property
    def in_flight(self) -> int:
        return sum(e is not None for e in self.slots)


def pipelined_step(pipe: Pipeline, r, bits=None, pilot: bool = False):
    return pipe.step(r, bits, pilot)


class Monolithic:
    """Single fully-connected network from ``r`` (length 2N) to all K*B soft bits.

    With K = 1 this is the single-user receiver used on the rotation channel.
    """

    def __init__(self, n_users: int, n_antennas: int, bits_per_symbol: int, updater,
                 hidden: Sequence[int] = (10,), seed: int = 0):
        self.K, self.N, self.B = n_users, n_antennas, bits_per_symbol
        self.spec = MlpSpec((2 * n_antennas, *hidden, n_users * bits_per_symbol))
        self.updater = updater
        init_seq, rng_seq = np.random.SeedSequence(seed).spawn(2)
        self.rng = np.random.default_rng(rng_seq)
        self.state = updater.init_state(self.spec.init_params(np.random.default_rng(init_seq)))
        self.update_count = 0
        self.step_ns: list[int] = []

    @property
    def n_params(self) -> int:
        return self.spec.n_params

    @property
    def params(self) -> np.ndarray:
        return self.updater.params(self.state)

    def forward(self, r) -> np.ndarray:
        return forward(self.spec, self.params, r)

    def forward_batch(self, R) -> np.ndarray:
        return forward_batch(self.spec, self.params, np.atleast_2d(R))

    def step(self, r, bits) -> None:
        t0 = time.perf_counter_ns()
        self.state = self.updater.step(self.state, self.spec, r,
                                       np.asarray(bits, dtype=np.float64).ravel(), self.rng)
        self.step_ns.append(time.perf_counter_ns() - t0)
        self.update_count += 1

    def fit_batch(self, R, bits, rng=None) -> None:
        R = np.atleast_2d(np.asarray(R, dtype=np.float64))
        bits = np.asarray(bits, dtype=np.float64).reshape(R.shape[0], -1)
        self.state = self.updater.fit(self.state, self.spec, R, bits, rng or self.rng)
