"""Summary tables and their CSV files.

Four files, one per figure family, each UTF-8 with a header row and rows in
a fixed order:

``ber_vs_snr.csv``    updater, snr_db, ber_mean, ber_std
``ber_vs_time.csv``   updater, snr_db, block, ber
``latency.csv``       updater, repr, P, mean_us, p95_us
``ser_rotation.csv``  updater, block, ser

Floats are written with ``repr`` so that reading a file back gives exactly
the values that were written.
"""

from __future__ import annotations

import csv
from collections import defaultdict
from dataclasses import astuple, dataclass, fields
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .experiment import RunRecord

__all__ = [
    "SnrRow",
    "TimeRow",
    "LatencyRow",
    "SerRow",
    "Tables",
    "summarize",
    "emit_csv",
    "read_table",
    "FILES",
]


@dataclass(frozen=True)
class SnrRow:
    updater: str
    snr_db: float
    ber_mean: float
    ber_std: float


@dataclass(frozen=True)
class TimeRow:
    updater: str
    snr_db: float
    block: int
    ber: float


@dataclass(frozen=True)
class LatencyRow:
    updater: str
    repr: str
    P: int
    mean_us: float
    p95_us: float


@dataclass(frozen=True)
class SerRow:
    updater: str
    block: int
    ser: float


FILES = {
    "ber_vs_snr.csv": SnrRow,
    "ber_vs_time.csv": TimeRow,
    "latency.csv": LatencyRow,
    "ser_rotation.csv": SerRow,
}


@dataclass
class Tables:
    ber_vs_snr: list
    ber_vs_time: list
    latency: list
    ser_rotation: list

    def by_file(self) -> dict:
        return {"ber_vs_snr.csv": self.ber_vs_snr, "ber_vs_time.csv": self.ber_vs_time,
                "latency.csv": self.latency, "ser_rotation.csv": self.ser_rotation}


def _order(labels: Iterable[str], records: Sequence[RunRecord]) -> list:
    seen = []
    for r in records:
        if r.updater not in seen:
            seen.append(r.updater)
    return [lab for lab in labels if lab in seen] + [lab for lab in seen if lab not in labels]


def summarize(records: Sequence[RunRecord], latency: Sequence[LatencyRow] = (),
              rotation: bool = False, order: Sequence[str] = ()) -> Tables:
    """Average over trials.

    ``ber_mean`` is the arithmetic mean over trials of each trial's BER on all
    of its data bits; ``ber_std`` is the sample standard deviation of those
    values (0 for a single trial). Time series average the per-block BER.
    """
    labels = _order(order, records)
    per_trial = defaultdict(lambda: [0, 0])
    per_block = defaultdict(list)
    per_block_ser = defaultdict(list)
    for r in records:
        acc = per_trial[(r.updater, r.snr_db, r.trial)]
        acc[0] += r.bit_errors
        acc[1] += r.n_bits
        per_block[(r.updater, r.snr_db, r.block)].append(r.ber)
        per_block_ser[(r.updater, r.block)].append(r.ser)
    snrs = sorted({r.snr_db for r in records})
    blocks = sorted({r.block for r in records})

    snr_rows, time_rows, ser_rows = [], [], []
    for lab in labels:
        for snr in snrs:
            vals = [e / n for (u, s, _), (e, n) in sorted(per_trial.items())
                    if u == lab and s == snr and n]
            if not vals:
                continue
            std = float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0
            snr_rows.append(SnrRow(lab, snr, float(np.mean(vals)), std))
            for b in blocks:
                v = per_block.get((lab, snr, b))
                if v:
                    time_rows.append(TimeRow(lab, snr, b, float(np.mean(v))))
        if rotation:
            for b in blocks:
                v = per_block_ser.get((lab, b))
                if v:
                    ser_rows.append(SerRow(lab, b, float(np.mean(v))))
    return Tables(snr_rows, time_rows, list(latency), ser_rows)


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def emit_csv(tables: Tables, out_dir) -> list:
    """Write the four files into ``out_dir`` (created if missing); return their paths."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    paths = []
    for name, rows in tables.by_file().items():
        path = out / name
        cols = [f.name for f in fields(FILES[name])]
        try:
            with path.open("w", encoding="utf-8", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(cols)
                for row in rows:
                    w.writerow([_fmt(v) for v in astuple(row)])
        except OSError as exc:
            raise OSError(f"cannot write {path}: {exc}") from exc
        paths.append(path)
    return paths


def read_table(path) -> list:
    """Parse one of the emitted files back into its row type."""
    path = Path(path)
    row_type = FILES.get(path.name)
    if row_type is None:
        raise ValueError(f"{path}: not one of {', '.join(FILES)}")
    types = [f.type for f in fields(row_type)]
    conv = {"str": str, "float": float, "int": int}
    with path.open(encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        expected = [f.name for f in fields(row_type)]
        if header != expected:
            raise ValueError(f"{path}: header {header} != {expected}")
        return [row_type(*(conv[t](v) for t, v in zip(types, line))) for line in reader]
