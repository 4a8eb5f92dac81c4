"""Shared OTFS primitives: frame geometry, constellations, bit mapping,
random delay-Doppler channels, and reproducible RNG streams.

Conventions used throughout the package:

* A frame carries M*N symbols, laid out delay-fastest: entry ``j*M + i``
  holds delay bin ``i`` of Doppler bin ``j``.
* The constellation has unit mean energy, so with per-sample complex noise
  variance ``N0`` the symbol SNR is ``Es/N0 = 1/N0``.
* Complex Gaussian noise with variance ``v`` means real and imaginary
  parts each have variance ``v/2``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

__all__ = [
    "LAYOUT_DD",
    "LAYOUT_PRECODED",
    "LAYOUT_TIME",
    "OtfsGrid",
    "Constellation",
    "PathSet",
    "NoiseSpec",
    "FrameVector",
    "make_grid",
    "qpsk_constellation",
    "map_bits",
    "demap_symbols",
    "nearest_point_indices",
    "sample_channel",
    "stream_rng",
    "frame_streams",
]

LAYOUT_DD = "dd-original"
LAYOUT_PRECODED = "dd-precoded"
LAYOUT_TIME = "time"
_LAYOUTS = (LAYOUT_DD, LAYOUT_PRECODED, LAYOUT_TIME)

# Stream ids for the named per-frame RNG streams.
STREAM_CHANNEL = 0
STREAM_BITS = 1
STREAM_NOISE = 2


@dataclass(frozen=True)
class OtfsGrid:
    """Critically sampled OTFS frame geometry.

    Attributes
    ----------
    m : delay bins / subcarriers
    n : Doppler bins / time slots
    delta_f : subcarrier spacing in Hz
    """

    m: int
    n: int
    delta_f: float

    @property
    def t_slot(self) -> float:
        """Slot duration T with T * delta_f = 1."""
        return 1.0 / self.delta_f

    @property
    def ts(self) -> float:
        """Sample interval Ts = T / M (the delay resolution)."""
        return 1.0 / (self.m * self.delta_f)

    @property
    def size(self) -> int:
        return self.m * self.n


def make_grid(m: int, n: int, delta_f: float = 15e3) -> OtfsGrid:
    """Build an OtfsGrid, rejecting degenerate geometries."""
    if int(m) != m or int(n) != n:
        raise ValueError("grid dimensions must be integers")
    m, n = int(m), int(n)
    if m < 2 or n < 2:
        raise ValueError(f"grid requires m >= 2 and n >= 2, got m={m}, n={n}")
    if delta_f <= 0:
        raise ValueError(f"subcarrier spacing must be positive, got {delta_f}")
    return OtfsGrid(m=m, n=n, delta_f=float(delta_f))


@dataclass(frozen=True, eq=False)
class Constellation:
    """Unit-mean-energy constellation with an explicit bit map.

    ``points[q]`` is the symbol whose bit label is the binary expansion of
    ``q`` (MSB first), so Gray adjacency is encoded in the ordering of
    ``points``.
    """

    name: str
    points: np.ndarray  # (Q,) complex128
    bit_map: np.ndarray  # (Q, bits_per_symbol) uint8, row q = bits of q

    @property
    def order(self) -> int:
        return len(self.points)

    @property
    def bits_per_symbol(self) -> int:
        return self.bit_map.shape[1]

    def __post_init__(self):
        q = len(self.points)
        if q < 2 or q & (q - 1):
            raise ValueError("constellation order must be a power of two")
        if len(np.unique(self.points)) != q:
            raise ValueError("constellation points must be distinct")
        energy = np.mean(np.abs(self.points) ** 2)
        if abs(energy - 1.0) > 1e-12:
            raise ValueError(f"constellation mean energy must be 1, got {energy}")


def qpsk_constellation() -> Constellation:
    """Gray-mapped QPSK: 00 -> (1+1j)/sqrt(2), 01 -> (-1+1j)/sqrt(2),
    11 -> (-1-1j)/sqrt(2), 10 -> (1-1j)/sqrt(2)."""
    pts = np.array([1 + 1j, -1 + 1j, 1 - 1j, -1 - 1j], dtype=np.complex128) / np.sqrt(2.0)
    bit_map = np.array([[0, 0], [0, 1], [1, 0], [1, 1]], dtype=np.uint8)
    return Constellation(name="qpsk", points=pts, bit_map=bit_map)


@dataclass(frozen=True, eq=False)
class FrameVector:
    """A length-M*N complex vector tagged with its coordinate layout."""

    data: np.ndarray
    layout: str

    def __post_init__(self):
        if self.layout not in _LAYOUTS:
            raise ValueError(f"unknown layout {self.layout!r}")
        object.__setattr__(self, "data", np.asarray(self.data, dtype=np.complex128))

    def __len__(self) -> int:
        return len(self.data)

    def require_layout(self, layout: str) -> None:
        if self.layout != layout:
            raise ValueError(
                f"expected a {layout!r} frame vector, got {self.layout!r}"
            )


def map_bits(bits: Iterable[int], constellation: Constellation) -> FrameVector:
    """Map a bit sequence onto constellation symbols (dd-original layout)."""
    b = np.asarray(list(bits) if not isinstance(bits, np.ndarray) else bits)
    bps = constellation.bits_per_symbol
    if b.size % bps != 0:
        raise ValueError(
            f"bit count {b.size} is not a multiple of bits/symbol {bps}"
        )
    if b.size and (b.min() < 0 or b.max() > 1):
        raise ValueError("bits must be 0 or 1")
    groups = b.reshape(-1, bps)
    weights = 1 << np.arange(bps - 1, -1, -1)
    idx = groups @ weights
    return FrameVector(constellation.points[idx], LAYOUT_DD)


def demap_symbols(decisions, constellation: Constellation) -> np.ndarray:
    """Invert map_bits for exact constellation decisions.

    Rejects any value that is not (numerically) a constellation point.
    """
    vals = decisions.data if isinstance(decisions, FrameVector) else np.asarray(decisions)
    vals = np.asarray(vals, dtype=np.complex128)
    dist = np.abs(vals[:, None] - constellation.points[None, :])
    idx = np.argmin(dist, axis=1)
    err = dist[np.arange(len(vals)), idx]
    if np.any(err > 1e-9):
        bad = int(np.argmax(err > 1e-9))
        raise ValueError(
            f"decision {vals[bad]} at position {bad} is not a constellation point"
        )
    return constellation.bit_map[idx].reshape(-1)


def nearest_point_indices(values: np.ndarray, constellation: Constellation) -> np.ndarray:
    """Indices of the nearest constellation point for each value (hard slicing)."""
    vals = np.asarray(values, dtype=np.complex128)
    dist = np.abs(vals[..., None] - constellation.points)
    return np.argmin(dist, axis=-1)


@dataclass(frozen=True, eq=False)
class PathSet:
    """A P-path delay-Doppler channel with grid-unit delay/Doppler indices."""

    gains: np.ndarray  # (P,) complex
    delay_indices: np.ndarray  # (P,) float >= 0
    doppler_indices: np.ndarray  # (P,) float

    def __post_init__(self):
        object.__setattr__(self, "gains", np.asarray(self.gains, dtype=np.complex128))
        object.__setattr__(
            self, "delay_indices", np.asarray(self.delay_indices, dtype=np.float64)
        )
        object.__setattr__(
            self, "doppler_indices", np.asarray(self.doppler_indices, dtype=np.float64)
        )
        p = len(self.gains)
        if p < 1:
            raise ValueError("a channel needs at least one path")
        if len(self.delay_indices) != p or len(self.doppler_indices) != p:
            raise ValueError("gain/delay/Doppler arrays must have equal length")
        if np.any(self.delay_indices < 0):
            raise ValueError("delay indices must be nonnegative")

    @property
    def p(self) -> int:
        return len(self.gains)

    @property
    def has_integer_delays(self) -> bool:
        return bool(np.all(self.delay_indices == np.round(self.delay_indices)))


@dataclass(frozen=True)
class NoiseSpec:
    """Per-complex-sample noise variance. n0 = 0 is allowed for noiseless runs."""

    n0: float

    def __post_init__(self):
        if self.n0 < 0:
            raise ValueError("noise variance must be nonnegative")


def sample_channel(
    p: int,
    l_max: int,
    k_max: int,
    rng: np.random.Generator,
    *,
    fractional_delay: bool = False,
    integer_doppler: bool = False,
    m: int | None = None,
) -> PathSet:
    """Draw a random P-path channel.

    Gains are i.i.d. CN(0, 1/P) so the mean channel power is 1. Delay
    indices are uniform on the integers {0..l_max}, or uniform on the real
    interval [0, l_max] with ``fractional_delay``. Doppler indices are
    uniform on [-k_max, k_max]; ``integer_doppler`` restricts them to the
    integer grid (useful for structural checks only).

    ``m`` (the delay-bin count), when given, rejects l_max >= m: such a
    delay spread exceeds the frame.
    """
    if p < 1:
        raise ValueError("need at least one path")
    if l_max < 0 or k_max < 0:
        raise ValueError("l_max and k_max must be nonnegative")
    if m is not None and l_max >= m:
        raise ValueError(f"l_max={l_max} must be smaller than the delay-bin count m={m}")
    gains = (rng.standard_normal(p) + 1j * rng.standard_normal(p)) * np.sqrt(0.5 / p)
    if fractional_delay:
        delays = rng.uniform(0.0, float(l_max), size=p)
    else:
        delays = rng.integers(0, l_max + 1, size=p).astype(np.float64)
    if integer_doppler:
        dopplers = rng.integers(-k_max, k_max + 1, size=p).astype(np.float64)
    else:
        dopplers = rng.uniform(-float(k_max), float(k_max), size=p)
    return PathSet(gains=gains, delay_indices=delays, doppler_indices=dopplers)


def stream_rng(master_seed: int, *path: int) -> np.random.Generator:
    """Deterministic named RNG stream derived from one master seed.

    Streams with different paths are statistically independent, so frames
    and noise/bits/channel draws can be generated in any order (or in
    parallel workers) without changing results.
    """
    ss = np.random.SeedSequence(entropy=int(master_seed), spawn_key=tuple(int(k) for k in path))
    return np.random.default_rng(ss)


def frame_streams(
    master_seed: int, point_index: int, frame_index: int
) -> tuple[np.random.Generator, np.random.Generator, np.random.Generator]:
    """(channel, bits, noise) generators for one Monte Carlo frame."""
    return (
        stream_rng(master_seed, point_index, frame_index, STREAM_CHANNEL),
        stream_rng(master_seed, point_index, frame_index, STREAM_BITS),
        stream_rng(master_seed, point_index, frame_index, STREAM_NOISE),
    )
