"""Drive a configured scenario end to end and score the data symbols.

For every trial and SNR point one channel realisation, one bit stream and
one receiver initialisation are drawn and shared by all updaters (common
random numbers), so differences between updaters are not sampling noise in
the channel.

Streaming updaters see each pilot once, in transmission order, through the
DeepSIC pipeline. Data symbols never change any weights, so decoding the
data of a block in one batch after the block's pilots have drained from the
pipeline gives the same decisions as pushing them through the pipeline one
by one; ``stream_data=True`` does the latter (slow, used to check this).
Non-streaming updaters (SGD) are refit on each block's pilot buffer.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Iterator, Optional, Sequence

import numpy as np

from ..baselines import NlmsState, map_decode, mmse_detect, nlms_decode, nlms_step
from ..channel import ChannelProcess, get_constellation, modulate, schedule_iter, to_real
from ..errors import ConfigurationError
from ..receiver import DeepSic, Monolithic, Pipeline, hard_decide
from .config import ExperimentConfig, UpdaterSpec

__all__ = [
    "RunRecord",
    "TrialData",
    "make_trial",
    "run_trial",
    "run_experiment",
    "run_updater",
    "run_references",
    "train_receiver",
    "tracking_ber",
    "tune_learning_rate",
    "worker_count",
]

REFERENCE_LABELS = {"mmse": "mmse", "map": "map", "nlms": "nlms"}


@dataclass(frozen=True)
class RunRecord:
    """Scores of one tracking block for one (trial, SNR, updater)."""

    trial: int
    snr_db: float
    updater: str
    block: int
    bit_errors: int
    n_bits: int
    symbol_errors: int
    n_symbols: int
    pilots_seen: int
    update_mean_us: float = float("nan")
    update_p95_us: float = float("nan")

    @property
    def ber(self) -> float:
        return self.bit_errors / self.n_bits if self.n_bits else float("nan")

    @property
    def ser(self) -> float:
        return self.symbol_errors / self.n_symbols if self.n_symbols else float("nan")


@dataclass
class TrialData:
    trial: int
    snr_db: float
    channel: ChannelProcess
    bits: np.ndarray        # (L, K, B) int8
    symbols: np.ndarray     # (L, K) point indices
    received: np.ndarray    # (L, 2N)
    block: np.ndarray       # (L,) channel block of every slot
    pilot: np.ndarray       # (L,) bool
    tracking: np.ndarray    # (L,) bool, False during the sync phase
    init_seed: int


def worker_count(requested: Optional[int] = None) -> int:
    """``requested``, else ``$STREAMRX_WORKERS``, else 1."""
    if requested is not None:
        return max(1, int(requested))
    env = os.environ.get("STREAMRX_WORKERS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigurationError(f"STREAMRX_WORKERS={env!r} is not an integer") from None
    return 1


def _trial_seeds(cfg: ExperimentConfig, trial: int):
    chan, bits, init = np.random.SeedSequence([cfg.seed, trial]).spawn(3)
    return (int(chan.generate_state(1, np.uint64)[0]), np.random.default_rng(bits),
            int(init.generate_state(1, np.uint64)[0]))


def make_trial(cfg: ExperimentConfig, trial: int, snr_db: float) -> TrialData:
    c = get_constellation(cfg.constellation)
    chan_seed, bit_rng, init_seed = _trial_seeds(cfg, trial)
    proc = ChannelProcess(cfg.channel_kind(snr_db), cfg.users, cfg.antennas, chan_seed)
    slots = list(schedule_iter(cfg.schedule))
    L = len(slots)
    bits = bit_rng.integers(0, 2, size=(L, cfg.users, c.bits_per_symbol), dtype=np.int8)
    sym = c.index_of_bits(bits)
    block = np.array([s.block for s in slots], dtype=np.int64)
    pilot = np.array([s.role.is_pilot for s in slots], dtype=bool)
    tracking = np.array([s.role.value != "sync-pilot" for s in slots], dtype=bool)
    received = np.empty((L, 2 * cfg.antennas))
    for b in np.unique(block):
        idx = np.flatnonzero(block == b)
        received[idx] = proc.transmit(int(b), c.points[sym[idx]])
    return TrialData(trial, snr_db, proc, bits, sym, received, block, pilot, tracking,
                     init_seed)


def _build_receiver(cfg: ExperimentConfig, updater, seed: int, workers: Optional[int]):
    B = cfg.bits_per_symbol
    if cfg.receiver == "deepsic":
        return DeepSic(cfg.users, cfg.antennas, B, updater, cfg.iterations, cfg.hidden[0],
                       seed=seed, workers=workers)
    return Monolithic(cfg.users, cfg.antennas, B, updater, cfg.hidden, seed=seed)


def _block_groups(td: TrialData):
    """``(block, pilot_idx, data_idx, is_tracking)`` in transmission order."""
    for b in np.unique(td.block):
        idx = np.flatnonzero(td.block == b)
        yield (int(b), idx[td.pilot[idx]], idx[~td.pilot[idx]],
               bool(td.tracking[idx].any()))


def _score(td: TrialData, data_idx, bits_hat, c) -> tuple:
    """Bit and symbol error counts of ``bits_hat`` shaped ``(n, K, B)``."""
    truth = td.bits[data_idx]
    bit_err = int(np.count_nonzero(bits_hat != truth))
    sym_err = int(np.count_nonzero(c.index_of_bits(bits_hat) != td.symbols[data_idx]))
    return bit_err, truth.size, sym_err, truth.shape[0] * truth.shape[1]


def _latency(ns: list) -> tuple:
    if not ns:
        return float("nan"), float("nan")
    a = np.asarray(ns, dtype=np.float64) / 1e3
    return float(a.mean()), float(np.percentile(a, 95))


def run_updater(cfg: ExperimentConfig, spec: UpdaterSpec, td: TrialData,
                workers: Optional[int] = None, stream_data: bool = False) -> list:
    """Train and score one updater on one prepared trial."""
    c = get_constellation(cfg.constellation)
    updater = spec.build(cfg.hyper)
    rx = _build_receiver(cfg, updater, td.init_seed, workers)
    K, B = cfg.users, cfg.bits_per_symbol
    trains = spec.name != "none"
    pipe = Pipeline(rx) if (cfg.receiver == "deepsic" and updater.streaming) else None
    records = []
    pilots_seen = 0
    try:
        for block, p_idx, d_idx, tracking in _block_groups(td):
            rx.step_ns.clear()
            if trains:
                _adapt(rx, pipe, td, p_idx)
            pilots_seen += len(p_idx)
            if not tracking or not len(d_idx):
                continue
            if pipe is not None and stream_data:
                ell = _stream_through(pipe, td, d_idx, K * B)
            else:
                if pipe is not None:
                    pipe.flush()
                ell = rx.forward_batch(td.received[d_idx])
            bits_hat = hard_decide(ell).reshape(len(d_idx), K, B)
            mean_us, p95_us = _latency(rx.step_ns)
            records.append(RunRecord(td.trial, td.snr_db, spec.label, _tracking_block(cfg, block),
                                     *_score(td, d_idx, bits_hat, c), pilots_seen,
                                     mean_us, p95_us))
    finally:
        if hasattr(rx, "close"):
            rx.close()
    return records


def _adapt(rx, pipe: Optional[Pipeline], td: TrialData, p_idx) -> None:
    """Feed one block's pilots to the receiver in transmission order."""
    if not len(p_idx):
        return
    if not rx.updater.streaming:
        rx.fit_batch(td.received[p_idx], td.bits[p_idx])
    elif pipe is not None:
        for i in p_idx:
            pipe.step(td.received[i], td.bits[i].ravel(), pilot=True, index=int(i))
    else:
        for i in p_idx:
            rx.step(td.received[i], td.bits[i].ravel())


def train_receiver(cfg: ExperimentConfig, spec: UpdaterSpec, td: TrialData):
    """Run every pilot of the trial through a fresh receiver and return it."""
    updater = spec.build(cfg.hyper)
    rx = _build_receiver(cfg, updater, td.init_seed, None)
    pipe = Pipeline(rx) if (cfg.receiver == "deepsic" and updater.streaming) else None
    if spec.name != "none":
        for _, p_idx, _, _ in _block_groups(td):
            _adapt(rx, pipe, td, p_idx)
    if pipe is not None:
        pipe.flush()
    return rx


def _stream_through(pipe: Pipeline, td: TrialData, d_idx, width) -> np.ndarray:
    out = {}
    for i in d_idx:
        res = pipe.step(td.received[i], index=int(i))
        if res is not None:
            out[res[0]] = res[1]
    for idx, ell in pipe.flush():
        out[idx] = ell
    return np.array([out[int(i)] for i in d_idx]).reshape(len(d_idx), width)


def _tracking_block(cfg: ExperimentConfig, block: int) -> int:
    return block - cfg.schedule.n_sync_blocks


def run_references(cfg: ExperimentConfig, td: TrialData) -> list:
    c = get_constellation(cfg.constellation)
    records = []
    nlms = NlmsState(step=cfg.nlms_step, delta=cfg.nlms_delta) if "nlms" in cfg.references else None
    pilots_seen = 0
    for block, p_idx, d_idx, tracking in _block_groups(td):
        if nlms is not None:
            for i in p_idx:
                s = to_real(c.points[td.symbols[i]])
                nlms = nlms_step(nlms, s, td.received[i])
        pilots_seen += len(p_idx)
        if not tracking or not len(d_idx):
            continue
        R = td.received[d_idx]
        tb = _tracking_block(cfg, block)
        for ref in cfg.references:
            if ref == "mmse":
                # complex noise variance is twice the per-real-dimension value
                _, bits_hat = mmse_detect(R, td.channel.matrix(block),
                                          2.0 * td.channel.noise_var, c)
            elif ref == "map":
                bits_hat = c.bit_table[map_decode(R, td.channel.angle(block), c,
                                                  td.channel.noise_var)][:, None, :]
            else:
                bits_hat = c.bit_table[nlms_decode(nlms, R, c)][:, None, :]
            records.append(RunRecord(td.trial, td.snr_db, REFERENCE_LABELS[ref], tb,
                                     *_score(td, d_idx, bits_hat, c), pilots_seen))
    return records


def run_trial(cfg: ExperimentConfig, trial: int, snr_db: float,
              labels: Optional[Sequence[str]] = None, workers: Optional[int] = None,
              stream_data: bool = False) -> list:
    td = make_trial(cfg, trial, snr_db)
    records = []
    for spec in cfg.updaters:
        if labels is None or spec.label in labels:
            records += run_updater(cfg, spec, td, workers, stream_data)
    if labels is None or any(r in labels for r in cfg.references):
        records += run_references(cfg, td)
    return records


def _task(args):
    cfg, trial, snr, labels = args
    return run_trial(cfg, trial, snr, labels)


def run_experiment(cfg: ExperimentConfig, labels: Optional[Sequence[str]] = None,
                   workers: Optional[int] = None) -> Iterator[RunRecord]:
    """Yield records for every (trial, SNR) task in a deterministic order.

    With more than one worker, tasks run in a process pool; output order is
    unchanged.
    """
    tasks = [(cfg, t, snr, labels) for t in range(cfg.trials) for snr in cfg.snr_points()]
    n = worker_count(workers)
    if n == 1 or len(tasks) == 1:
        for t in tasks:
            yield from _task(t)
        return
    with ProcessPoolExecutor(n) as pool:
        for recs in pool.map(_task, tasks):
            yield from recs


def tracking_ber(records: Sequence[RunRecord], label: str) -> float:
    """Mean over trials of the per-trial tracking BER for one updater."""
    per_trial: dict = {}
    for r in records:
        if r.updater == label:
            e, n = per_trial.get((r.trial, r.snr_db), (0, 0))
            per_trial[(r.trial, r.snr_db)] = (e + r.bit_errors, n + r.n_bits)
    if not per_trial:
        return float("nan")
    return float(np.mean([e / n for e, n in per_trial.values()]))


def tune_learning_rate(cfg: ExperimentConfig, label: str, grid: Sequence[float],
                       trials: int = 2, seed_offset: int = 10_000,
                       metric: str = "ber") -> tuple:
    """Pick the learning rate of updater ``label`` with the lowest mean error.

    Tuning uses trial seeds disjoint from evaluation (``seed + seed_offset``).
    Returns ``(best_lr, {lr: score})``.
    """
    base = cfg.updater(label)
    scores = {}
    for lr in grid:
        opts = dict(base.options)
        opts["lr"] = lr
        spec = replace(base, options=tuple(sorted(opts.items())))
        tcfg = replace(cfg, seed=cfg.seed + seed_offset, trials=trials,
                       updaters=(spec,), references=())
        recs = list(run_experiment(tcfg, [label]))
        if metric == "ser":
            scores[lr] = float(np.mean([r.ser for r in recs]))
        else:
            scores[lr] = tracking_ber(recs, label)
    finite = {k: v for k, v in scores.items() if math.isfinite(v)}
    best = min(finite, key=finite.get) if finite else grid[0]
    return best, scores
