"""Bit sources, constellations and time-varying synthetic channels.

Complex baseband quantities are carried as stacked real vectors
``[Re(z), Im(z)]`` so that an ``N``-antenna observation has length ``2N``.
Channels are indexed by *block* (snapshot): the channel matrix is constant
for every symbol of a block and drifts between blocks.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterator, NamedTuple, Union

import numpy as np

from .errors import ConfigurationError

__all__ = [
    "Constellation",
    "bpsk",
    "qpsk",
    "qam16",
    "get_constellation",
    "modulate",
    "to_real",
    "from_real",
    "random_bits",
    "Rotation",
    "LinearMimo",
    "TanhMimo",
    "ChannelProcess",
    "rotation_step",
    "mimo_step",
    "Role",
    "Slot",
    "TransmissionSchedule",
    "schedule_iter",
]


# ---------------------------------------------------------------------------
# Constellations
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Constellation:
    """Unit-energy symbol alphabet with a Gray labelling.

    ``gray_map[i]`` is the index into ``points`` of the symbol carrying the
    bit word whose MSB-first integer value is ``i``.
    """

    name: str
    points: np.ndarray
    bits_per_symbol: int
    gray_map: tuple

    def __post_init__(self):
        n = len(self.points)
        if n != 2**self.bits_per_symbol:
            raise ConfigurationError(
                f"{self.name}: {n} points but B={self.bits_per_symbol}"
            )
        if sorted(self.gray_map) != list(range(n)):
            raise ConfigurationError(f"{self.name}: gray_map is not a bijection")
        energy = float(np.mean(np.abs(self.points) ** 2))
        if abs(energy - 1.0) > 1e-12:
            raise ConfigurationError(f"{self.name}: mean energy {energy} != 1")

    @property
    def size(self) -> int:
        return len(self.points)

    @property
    def bit_table(self) -> np.ndarray:
        """``(2^B, B)`` array: bit word carried by each point index."""
        B = self.bits_per_symbol
        table = np.zeros((self.size, B), dtype=np.int8)
        for word, idx in enumerate(self.gray_map):
            for j in range(B):
                table[idx, j] = (word >> (B - 1 - j)) & 1
        return table

    def index_of_bits(self, bits) -> np.ndarray:
        """Point index for bit words along the last axis."""
        bits = np.asarray(bits)
        B = self.bits_per_symbol
        if bits.shape[-1] != B:
            raise ConfigurationError(
                f"bit words of length {bits.shape[-1]} for B={B} constellation"
            )
        weights = 1 << np.arange(B - 1, -1, -1)
        words = (bits.astype(np.int64) * weights).sum(axis=-1)
        return np.asarray(self.gray_map)[words]

    def nearest(self, z) -> np.ndarray:
        """Minimum-distance point index; ties go to the lowest index."""
        z = np.asarray(z)
        d = np.abs(z[..., None] - self.points) ** 2
        return np.argmin(d, axis=-1)


def bpsk() -> Constellation:
    return Constellation("bpsk", np.array([1.0 + 0j, -1.0 + 0j]), 1, (0, 1))


def qpsk() -> Constellation:
    # bit 1 -> sign of the real part, bit 2 -> sign of the imaginary part,
    # 0 -> +, 1 -> -
    a = 1 / math.sqrt(2)
    pts = np.array([a + 1j * a, a - 1j * a, -a + 1j * a, -a - 1j * a])
    return Constellation("qpsk", pts, 2, (0, 1, 2, 3))


def qam16() -> Constellation:
    # Per-axis Gray PAM-4: 00 -> +3, 01 -> +1, 11 -> -1, 10 -> -3
    pam = {0b00: 3.0, 0b01: 1.0, 0b11: -1.0, 0b10: -3.0}
    scale = 1 / math.sqrt(10)
    pts = np.array(
        [
            scale * (pam[w >> 2] + 1j * pam[w & 0b11])
            for w in range(16)
        ]
    )
    return Constellation("qam16", pts, 4, tuple(range(16)))


_CONSTELLATIONS = {"bpsk": bpsk, "qpsk": qpsk, "qam16": qam16}


def get_constellation(name: str) -> Constellation:
    try:
        return _CONSTELLATIONS[name.lower()]()
    except KeyError:
        raise ConfigurationError(f"unknown constellation {name!r}") from None


def random_bits(rng: np.random.Generator, shape) -> np.ndarray:
    return rng.integers(0, 2, size=shape, dtype=np.int8)


def modulate(bits, c: Constellation) -> np.ndarray:
    """Map ``(..., K, B)`` bits to ``(..., K)`` complex symbols, per user."""
    bits = np.asarray(bits)
    if bits.ndim < 1 or bits.shape[-1] != c.bits_per_symbol:
        raise ConfigurationError(
            f"bits shape {bits.shape} does not end in B={c.bits_per_symbol}"
        )
    if np.any((bits != 0) & (bits != 1)):
        raise ConfigurationError("bits must be 0 or 1")
    return c.points[c.index_of_bits(bits)]


def to_real(z) -> np.ndarray:
    z = np.asarray(z)
    return np.concatenate([z.real, z.imag], axis=-1).astype(np.float64)


def from_real(r) -> np.ndarray:
    r = np.asarray(r)
    n = r.shape[-1] // 2
    return r[..., :n] + 1j * r[..., n:]


# ---------------------------------------------------------------------------
# Channel processes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Rotation:
    """Single-user rotation channel; the angle advances by 2*pi*alpha per block."""

    alpha: float = 2.5e-4
    noise_var: float = 1.0 / 16.0


@dataclass(frozen=True)
class LinearMimo:
    """Gauss-Markov drifting complex channel matrix plus AWGN.

    ``rho`` is the per-block correlation of every entry (1.0 gives a static
    channel). Entries have variance ``1/K`` so the nominal received power per
    antenna is one; ``snr_db`` sets the noise from that nominal power.
    """

    rho: float = 0.995
    snr_db: float = 10.0

    @property
    def snr_linear(self) -> float:
        return 10.0 ** (self.snr_db / 10.0)


@dataclass(frozen=True)
class TanhMimo:
    """``tanh(scale * (H s + u))`` applied to real and imaginary parts."""

    inner: LinearMimo = field(default_factory=LinearMimo)
    scale: float = 1.0


ChannelKind = Union[Rotation, LinearMimo, TanhMimo]


class ChannelProcess:
    """Time-indexed channel producing received vectors for symbol vectors.

    The channel trajectory is a pure function of ``(seed, block)``; the
    additive noise is drawn from a separate stream owned by this object.
    """

    def __init__(self, kind: ChannelKind, n_users: int = 1, n_antennas: int = 1,
                 seed: int = 0):
        if isinstance(kind, Rotation) and (n_users != 1 or n_antennas != 1):
            raise ConfigurationError("rotation channel requires K=1, N=1")
        if n_users < 1 or n_antennas < 1:
            raise ConfigurationError("K and N must be positive")
        if isinstance(kind, (LinearMimo, TanhMimo)):
            lin = kind.inner if isinstance(kind, TanhMimo) else kind
            if not 0.0 <= lin.rho <= 1.0:
                raise ConfigurationError(f"rho={lin.rho} outside [0, 1]")
        self.kind = kind
        self.n_users = n_users
        self.n_antennas = n_antennas
        self.seed = seed
        traj_seq, noise_seq = np.random.SeedSequence(seed).spawn(2)
        self._traj_rng = np.random.default_rng(traj_seq)
        self.noise_rng = np.random.default_rng(noise_seq)
        self._trajectory: list[np.ndarray] = []

    @property
    def linear(self) -> LinearMimo | None:
        if isinstance(self.kind, TanhMimo):
            return self.kind.inner
        if isinstance(self.kind, LinearMimo):
            return self.kind
        return None

    @property
    def noise_var(self) -> float:
        """Noise variance per real dimension."""
        if isinstance(self.kind, Rotation):
            return self.kind.noise_var
        # nominal received power 1 per antenna, split over two real dims
        return 0.5 / self.linear.snr_linear

    @property
    def obs_dim(self) -> int:
        return 2 * self.n_antennas

    def angle(self, block: int) -> float:
        if not isinstance(self.kind, Rotation):
            raise ConfigurationError("angle() is only defined for rotation channels")
        return 2.0 * math.pi * self.kind.alpha * block

    def matrix(self, block: int) -> np.ndarray:
        """Complex ``(N, K)`` channel matrix at ``block``."""
        if isinstance(self.kind, Rotation):
            return np.array([[np.exp(1j * self.angle(block))]])
        if block < 0:
            raise ConfigurationError("block index must be non-negative")
        lin = self.linear
        K, N = self.n_users, self.n_antennas
        while len(self._trajectory) <= block:
            w = (self._traj_rng.standard_normal((N, K))
                 + 1j * self._traj_rng.standard_normal((N, K))) / math.sqrt(2 * K)
            if not self._trajectory:
                self._trajectory.append(w)
            else:
                prev = self._trajectory[-1]
                self._trajectory.append(lin.rho * prev + math.sqrt(1 - lin.rho**2) * w)
        return self._trajectory[block]

    def transmit(self, block: int, symbols, noiseless: bool = False) -> np.ndarray:
        """Received real vectors for ``(K,)`` or ``(n, K)`` complex symbols."""
        s = np.asarray(symbols, dtype=complex)
        single = s.ndim == 1
        s2 = np.atleast_2d(s)
        if s2.shape[-1] != self.n_users:
            raise ConfigurationError(
                f"symbol vector of length {s2.shape[-1]} for K={self.n_users}"
            )
        y = s2 @ self.matrix(block).T
        r = to_real(y)
        if not noiseless:
            r = r + math.sqrt(self.noise_var) * self.noise_rng.standard_normal(r.shape)
        if isinstance(self.kind, TanhMimo):
            r = np.tanh(self.kind.scale * r)
        return r[0] if single else r


def rotation_step(t: int, s, proc: ChannelProcess, noiseless: bool = False) -> np.ndarray:
    """``r = R(phi_t) [Re s, Im s] + u`` for one complex symbol (or a batch)."""
    if not isinstance(proc.kind, Rotation):
        raise ConfigurationError("rotation_step needs a Rotation channel")
    s = np.asarray(s, dtype=complex)
    return proc.transmit(t, s.reshape(-1, 1) if s.ndim else s.reshape(1),
                         noiseless=noiseless)


def mimo_step(t: int, s, proc: ChannelProcess, noiseless: bool = False) -> np.ndarray:
    if not isinstance(proc.kind, (LinearMimo, TanhMimo)):
        raise ConfigurationError("mimo_step needs a LinearMimo or TanhMimo channel")
    return proc.transmit(t, s, noiseless=noiseless)


# ---------------------------------------------------------------------------
# Transmission schedule
# ---------------------------------------------------------------------------


class Role(str, enum.Enum):
    SYNC = "sync-pilot"
    PILOT = "pilot"
    DATA = "data"

    @property
    def is_pilot(self) -> bool:
        return self is not Role.DATA


class Slot(NamedTuple):
    t: int
    role: Role
    block: int


@dataclass(frozen=True)
class TransmissionSchedule:
    T_sync: int
    block_len: int
    pilots_per_block: int
    n_blocks: int

    def __post_init__(self):
        if self.T_sync < 0 or self.n_blocks < 0:
            raise ConfigurationError("T_sync and n_blocks must be non-negative")
        if self.block_len < 1:
            raise ConfigurationError("block_len must be positive")
        if not 0 < self.pilots_per_block <= self.block_len:
            raise ConfigurationError("need 0 < pilots_per_block <= block_len")

    @property
    def n_sync_blocks(self) -> int:
        return -(-self.T_sync // self.block_len)

    @property
    def total_blocks(self) -> int:
        return self.n_sync_blocks + self.n_blocks

    @property
    def length(self) -> int:
        return self.T_sync + self.n_blocks * self.block_len

    @property
    def n_data(self) -> int:
        return self.n_blocks * (self.block_len - self.pilots_per_block)


def schedule_iter(sched: TransmissionSchedule) -> Iterator[Slot]:
    """Yield every time slot: sync pilots, then per block pilots before data."""
    for t in range(sched.T_sync):
        yield Slot(t, Role.SYNC, t // sched.block_len)
    t = sched.T_sync
    for b in range(sched.n_blocks):
        block = sched.n_sync_blocks + b
        for i in range(sched.block_len):
            role = Role.PILOT if i < sched.pilots_per_block else Role.DATA
            yield Slot(t, role, block)
            t += 1
