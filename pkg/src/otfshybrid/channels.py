"""Effective delay-Doppler channel matrices for the two standard OTFS stacks.

Two constructions are provided:

* ``dd_channel_isfft`` — ISFFT/SFFT stack with rectangular pulses. Exact
  for integer delay indices (any real Doppler); the time-domain matrix is
  a sum of modulated cyclic shifts.
* ``dd_channel_izt`` — IZT/ZT stack with a reduced cyclic prefix and sinc
  pulse shaping at both ends. Handles fractional delay indices; the per-path
  time matrix is dense, built from the pulse ambiguity function.

Both return an MN x MN matrix acting on the delay-fastest frame layout.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import ceil

import numpy as np

from .core import LAYOUT_DD, FrameVector, NoiseSpec, OtfsGrid, PathSet

__all__ = [
    "DdChannel",
    "PulseSpec",
    "time_channel_isfft",
    "dd_channel_isfft",
    "pulse_ambiguity",
    "path_time_matrix_izt",
    "dd_channel_izt",
    "default_cp_length",
    "apply_channel",
]


@dataclass(frozen=True, eq=False)
class DdChannel:
    """An effective DD-domain channel matrix plus its provenance."""

    h_dd: np.ndarray  # (MN, MN) complex
    source: str  # "isfft" | "izt"
    grid: OtfsGrid
    paths: PathSet

    def __post_init__(self):
        mn = self.grid.size
        if self.h_dd.shape != (mn, mn):
            raise ValueError(f"channel matrix must be {mn}x{mn}, got {self.h_dd.shape}")


@dataclass(frozen=True)
class PulseSpec:
    """Sinc pulse shaping with a reduced cyclic prefix of l_cp samples."""

    ts: float
    l_cp: int
    kind: str = "sinc"

    def validate(self, max_delay_samples: float, frame_size: int) -> None:
        if self.kind != "sinc":
            raise ValueError(f"unsupported pulse kind {self.kind!r}")
        if self.l_cp < ceil(max_delay_samples):
            raise ValueError(
                f"cyclic prefix of {self.l_cp} samples does not cover the "
                f"maximum delay of {max_delay_samples} samples"
            )
        if self.l_cp >= frame_size:
            raise ValueError("cyclic prefix must be shorter than the frame")


def time_channel_isfft(grid: OtfsGrid, paths: PathSet) -> np.ndarray:
    """Time-domain channel for the ISFFT/SFFT stack: a sum over paths of
    (Doppler phase ramp) x (cyclic delay shift), each scaled by the path gain
    and a delay-Doppler cross phase.

    Requires integer delay indices; each single-path term has exactly one
    nonzero entry per row.
    """
    if not paths.has_integer_delays:
        raise ValueError(
            "the ISFFT/SFFT construction is defined for integer delay indices "
            "only; use dd_channel_izt for fractional delays"
        )
    mn = grid.size
    rows = np.arange(mn)
    h = np.zeros((mn, mn), dtype=np.complex128)
    for gain, delay, doppler in zip(paths.gains, paths.delay_indices, paths.doppler_indices):
        li = int(round(delay))
        cross_phase = np.exp(-2j * np.pi * doppler * li / mn)
        ramp = np.exp(2j * np.pi * doppler * rows / mn)
        h[rows, (rows - li) % mn] += gain * cross_phase * ramp
    return h


def _dd_transform(h_time: np.ndarray, m: int, n: int) -> np.ndarray:
    """Unitary similarity (F_N kron I_M) H (F_N^H kron I_M) via axis FFTs."""
    mn = m * n
    h4 = h_time.reshape(n, m, n, m)
    h4 = np.fft.fft(h4, axis=0, norm="ortho")
    h4 = np.fft.ifft(h4, axis=2, norm="ortho")
    return np.ascontiguousarray(h4.reshape(mn, mn))


def dd_channel_isfft(grid: OtfsGrid, paths: PathSet) -> DdChannel:
    """DD-domain channel for the ISFFT/SFFT stack (integer delays)."""
    h_time = time_channel_isfft(grid, paths)
    return DdChannel(
        h_dd=_dd_transform(h_time, grid.m, grid.n),
        source="isfft",
        grid=grid,
        paths=paths,
    )


def pulse_ambiguity(tau, nu, ts: float):
    """Ambiguity function of the unit-energy sinc pulse p(t) = sinc(t/Ts)/sqrt(Ts).

    Evaluated in closed form from the rectangular spectral overlap: the pulse
    spectrum is flat on |f| <= 1/(2 Ts), so the delay-Doppler correlation is
    the integral of exp(j 2 pi f tau) over the overlap band, which vanishes
    for |nu| >= 1/Ts. Accepts array arguments and broadcasts.
    """
    if ts <= 0:
        raise ValueError("sample interval must be positive")
    tau = np.asarray(tau, dtype=np.float64)
    nu = np.asarray(nu, dtype=np.float64)
    half_band = 0.5 / ts
    f_lo = np.maximum(-half_band, nu - half_band)
    f_hi = np.minimum(half_band, nu + half_band)
    width = np.maximum(f_hi - f_lo, 0.0)
    val = ts * width * np.exp(1j * np.pi * (f_lo + f_hi) * tau) * np.sinc(width * tau)
    val = np.where(width > 0, val, 0.0 + 0.0j)
    if val.ndim == 0:
        return complex(val)
    return val


def default_cp_length(paths: PathSet, guard: int = 4) -> int:
    """Cyclic prefix covering the maximum path delay plus a small sinc guard."""
    return int(ceil(float(np.max(paths.delay_indices)))) + guard


def path_time_matrix_izt(grid: OtfsGrid, path, l_cp: int) -> np.ndarray:
    """Dense time-domain matrix of one path over the CP-extended frame.

    ``path`` is a (gain, delay_index, doppler_index) triple in grid units.
    Entry (m, n) is the contribution of transmit sample n to receive sample m
    after sinc matched filtering: gain * exp(j 2 pi nu n Ts) *
    conj(A_p((n - m) Ts + tau, nu)), with n counted on the absolute symbol
    axis (cyclic-prefix samples sit at n <= 0).
    """
    gain, delay_index, doppler_index = path
    mn = grid.size
    ts = grid.ts
    ext = mn + int(l_cp)
    tau = float(delay_index) * ts
    nu = float(doppler_index) / (mn * ts)
    idx = np.arange(ext)
    offsets = idx[None, :] - idx[:, None]  # n - m
    amb = pulse_ambiguity(offsets * ts + tau, nu, ts)
    symbol_axis = idx - int(l_cp) + 1
    ramp = np.exp(2j * np.pi * nu * ts * symbol_axis)
    return gain * ramp[None, :] * np.conj(amb)


def dd_channel_izt(grid: OtfsGrid, paths: PathSet, l_cp: int | None = None) -> DdChannel:
    """DD-domain channel for the IZT/ZT stack with sinc pulses and a reduced
    cyclic prefix. Fractional delay indices are supported."""
    if l_cp is None:
        l_cp = default_cp_length(paths)
    mn = grid.size
    pulse = PulseSpec(ts=grid.ts, l_cp=int(l_cp))
    pulse.validate(float(np.max(paths.delay_indices)), mn)

    ext = mn + pulse.l_cp
    total = np.zeros((ext, ext), dtype=np.complex128)
    for triple in zip(paths.gains, paths.delay_indices, paths.doppler_indices):
        total += path_time_matrix_izt(grid, triple, pulse.l_cp)

    # CP removal (drop the first l_cp rows) and CP insertion (prepend the last
    # l_cp samples), folded into the MN x MN time-domain matrix.
    body = total[pulse.l_cp :, :]
    h_time = body[:, pulse.l_cp :].copy()
    h_time[:, mn - pulse.l_cp :] += body[:, : pulse.l_cp]
    return DdChannel(
        h_dd=_dd_transform(h_time, grid.m, grid.n),
        source="izt",
        grid=grid,
        paths=paths,
    )


def apply_channel(
    channel: DdChannel,
    x: FrameVector,
    noise: NoiseSpec,
    rng: np.random.Generator,
) -> FrameVector:
    """y = H x + n with circularly symmetric complex noise of variance n0."""
    x.require_layout(LAYOUT_DD)
    mn = len(x)
    if channel.h_dd.shape[0] != mn:
        raise ValueError("channel and frame dimensions do not match")
    y = channel.h_dd @ x.data
    if noise.n0 > 0:
        scale = np.sqrt(noise.n0 / 2.0)
        y = y + scale * (rng.standard_normal(mn) + 1j * rng.standard_normal(mn))
    return FrameVector(y, LAYOUT_DD)
