"""Monte Carlo experiment driver: configuration, BER sweeps, convergence
studies, and CSV/JSON result emission.

All experiments are reproducible from a single master seed: every frame
derives its channel/bits/noise generators from (seed, snr-point index,
frame index), so results are bit-identical regardless of the worker count.
Adaptive BER sampling runs frames in fixed-size batches until every selected
detector has accumulated the target bit-error count (or the frame cap is
hit); the batch size, not the thread count, decides how many frames run.
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .channels import apply_channel, dd_channel_isfft, dd_channel_izt
from .core import (
    NoiseSpec,
    demap_symbols,
    frame_streams,
    make_grid,
    map_bits,
    qpsk_constellation,
    stream_rng,
)
from .detector import DetectorConfig, detect, full_lmmse_detect
from .precoding import block_partition, commutation_map, precode_channel, precode_vector, deprecode_vector

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "BerPoint",
    "BerCurve",
    "ConvergenceReportSet",
    "load_config",
    "save_config",
    "config_from_dict",
    "run_ber_sweep",
    "run_convergence_study",
    "emit_results",
    "write_iteration_trace",
    "DETECTOR_HYBRID",
    "DETECTOR_LMMSE",
]

DETECTOR_HYBRID = "hybrid"
DETECTOR_LMMSE = "full-lmmse"
_DETECTOR_CHOICES = (DETECTOR_HYBRID, DETECTOR_LMMSE, "both")
_CHANNEL_MODES = ("isfft-integer", "izt-integer", "izt-fractional")


class ConfigError(ValueError):
    """Invalid experiment configuration (bad value, unknown key, parse error)."""


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment: grid, channel statistics, SNR grid, detector settings."""

    m: int = 32
    n: int = 16
    delta_f: float = 15e3
    constellation: str = "qpsk"
    channel_mode: str = "isfft-integer"
    p: int = 6
    l_max: int = 8
    k_max: int = 8
    cp_guard: int = 4
    snr_db: tuple = tuple(float(s) for s in range(0, 21, 2))
    max_frames: int = 2000
    min_frames: int = 1
    target_bit_errors: int = 100
    batch_frames: int = 32
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    detectors: str = "both"
    seed: int = 1
    out: str | None = None

    def __post_init__(self):
        if self.m < 2 or self.n < 2:
            raise ConfigError("grid.m and grid.n must be at least 2")
        if self.delta_f <= 0:
            raise ConfigError("grid.delta_f_hz must be positive")
        if self.constellation != "qpsk":
            raise ConfigError(f"unknown constellation {self.constellation!r}")
        if self.channel_mode not in _CHANNEL_MODES:
            raise ConfigError(
                f"channel.mode must be one of {_CHANNEL_MODES}, got {self.channel_mode!r}"
            )
        if self.p < 1:
            raise ConfigError("channel.paths must be at least 1")
        if not 0 <= self.l_max < self.m:
            raise ConfigError("channel.l_max must satisfy 0 <= l_max < m")
        if self.k_max < 0:
            raise ConfigError("channel.k_max must be nonnegative")
        if self.cp_guard < 0:
            raise ConfigError("channel.cp_guard must be nonnegative")
        if len(self.snr_db) == 0:
            raise ConfigError("snr_db grid must not be empty")
        if self.max_frames < 1 or self.min_frames < 0 or self.batch_frames < 1:
            raise ConfigError("frame counts must be positive")
        if self.target_bit_errors < 1:
            raise ConfigError("frames.target_bit_errors must be positive")
        if self.detectors not in _DETECTOR_CHOICES:
            raise ConfigError(f"detectors must be one of {_DETECTOR_CHOICES}")

    @property
    def selected_detectors(self) -> tuple:
        if self.detectors == "both":
            return (DETECTOR_HYBRID, DETECTOR_LMMSE)
        return (self.detectors,)

    @property
    def l_cp(self) -> int:
        return self.l_max + self.cp_guard

    def to_canonical_dict(self) -> dict:
        return {
            "grid": {"m": self.m, "n": self.n, "delta_f_hz": self.delta_f},
            "constellation": self.constellation,
            "channel": {
                "mode": self.channel_mode,
                "paths": self.p,
                "l_max": self.l_max,
                "k_max": self.k_max,
                "cp_guard": self.cp_guard,
            },
            "snr_db": list(self.snr_db),
            "frames": {
                "max": self.max_frames,
                "min": self.min_frames,
                "target_bit_errors": self.target_bit_errors,
                "batch": self.batch_frames,
            },
            "detector": {
                "i_max": self.detector.i_max,
                "damping": self.detector.damping,
                "epsilon": self.detector.epsilon,
                "variance_floor": self.detector.variance_floor,
                "variance_cap": self.detector.variance_cap,
            },
            "detectors": self.detectors,
            "seed": self.seed,
            "out": self.out,
        }


def _take(group: dict, prefix: str, allowed: dict) -> dict:
    """Pull known keys out of a config group, rejecting unknown ones."""
    unknown = set(group) - set(allowed)
    if unknown:
        key = sorted(unknown)[0]
        full = f"{prefix}.{key}" if prefix else key
        raise ConfigError(f"unknown config key {full!r}")
    return {dest: group[src] for src, dest in allowed.items() if src in group}


def config_from_dict(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    top = _take(
        raw,
        "",
        {
            "grid": "grid",
            "constellation": "constellation",
            "channel": "channel",
            "snr_db": "snr_db",
            "frames": "frames",
            "detector": "detector",
            "detectors": "detectors",
            "seed": "seed",
            "out": "out",
        },
    )
    kwargs: dict = {}
    if "grid" in top:
        kwargs.update(
            _take(top["grid"], "grid", {"m": "m", "n": "n", "delta_f_hz": "delta_f"})
        )
    if "channel" in top:
        kwargs.update(
            _take(
                top["channel"],
                "channel",
                {
                    "mode": "channel_mode",
                    "paths": "p",
                    "l_max": "l_max",
                    "k_max": "k_max",
                    "cp_guard": "cp_guard",
                },
            )
        )
    if "frames" in top:
        kwargs.update(
            _take(
                top["frames"],
                "frames",
                {
                    "max": "max_frames",
                    "min": "min_frames",
                    "target_bit_errors": "target_bit_errors",
                    "batch": "batch_frames",
                },
            )
        )
    if "detector" in top:
        det_kwargs = _take(
            top["detector"],
            "detector",
            {
                "i_max": "i_max",
                "damping": "damping",
                "epsilon": "epsilon",
                "variance_floor": "variance_floor",
                "variance_cap": "variance_cap",
            },
        )
        try:
            kwargs["detector"] = DetectorConfig(**det_kwargs)
        except ValueError as exc:
            raise ConfigError(f"detector: {exc}") from exc
    for src in ("constellation", "detectors", "seed", "out"):
        if src in top:
            kwargs[src] = top[src]
    if "snr_db" in top:
        grid_spec = top["snr_db"]
        if isinstance(grid_spec, dict):
            spec = _take(grid_spec, "snr_db", {"start": "start", "stop": "stop", "step": "step"})
            missing = {"start", "stop", "step"} - set(spec)
            if missing:
                raise ConfigError(f"snr_db range needs start/stop/step, missing {sorted(missing)}")
            kwargs["snr_db"] = tuple(
                float(s) for s in np.arange(spec["start"], spec["stop"] + 1e-9, spec["step"])
            )
        else:
            kwargs["snr_db"] = tuple(float(s) for s in grid_spec)
    return ExperimentConfig(**kwargs)


def load_config(path: str) -> ExperimentConfig:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path!r}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    return config_from_dict(raw)


def save_config(cfg: ExperimentConfig, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(cfg.to_canonical_dict(), fh, indent=2)
        fh.write("\n")


# ---------------------------------------------------------------------------
# Result containers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BerPoint:
    snr_db: float
    frames: int
    bits: int
    bit_errors: int
    ber: float
    avg_iters: float | None


@dataclass(frozen=True)
class BerCurve:
    detector: str
    points: tuple

    def snr_at_ber(self, target: float) -> float:
        """SNR (dB) where the curve crosses ``target``, by log-linear
        interpolation between adjacent grid points."""
        snrs = np.array([pt.snr_db for pt in self.points])
        bers = np.array([max(pt.ber, 1e-12) for pt in self.points])
        order = np.argsort(snrs)
        snrs, bers = snrs[order], bers[order]
        log_t = np.log10(target)
        log_b = np.log10(bers)
        for i in range(len(snrs) - 1):
            hi, lo = log_b[i], log_b[i + 1]
            if (hi - log_t) * (lo - log_t) <= 0 and hi != lo:
                frac = (hi - log_t) / (hi - lo)
                return float(snrs[i] + frac * (snrs[i + 1] - snrs[i]))
        raise ValueError(
            f"BER {target} is not bracketed by the {self.detector} curve "
            f"(range {bers.min():.2e}..{bers.max():.2e})"
        )


@dataclass(frozen=True)
class ConvergenceReportSet:
    p: int
    channel_mode: str
    mean_iterations: tuple  # of (snr_db, frames, mean_iters)
    mse_cdf: dict  # budget -> np.ndarray of per-edge MSE samples
    cdf_snr_db: float | None


# ---------------------------------------------------------------------------
# Frame simulation
# ---------------------------------------------------------------------------

def _get_constellation(name: str):
    if name == "qpsk":
        return qpsk_constellation()
    raise ConfigError(f"unknown constellation {name!r}")


def _build_channel(cfg: ExperimentConfig, grid, ch_rng):
    from .core import sample_channel

    fractional = cfg.channel_mode == "izt-fractional"
    paths = sample_channel(
        cfg.p, cfg.l_max, cfg.k_max, ch_rng, fractional_delay=fractional, m=grid.m
    )
    if cfg.channel_mode == "isfft-integer":
        return dd_channel_isfft(grid, paths)
    return dd_channel_izt(grid, paths, cfg.l_cp)


def _frame_setup(cfg: ExperimentConfig, point_idx: int, frame_idx: int):
    grid = make_grid(cfg.m, cfg.n, cfg.delta_f)
    const = _get_constellation(cfg.constellation)
    ch_rng, bits_rng, noise_rng = frame_streams(cfg.seed, point_idx, frame_idx)
    channel = _build_channel(cfg, grid, ch_rng)
    bits = bits_rng.integers(0, 2, size=grid.size * const.bits_per_symbol)
    x = map_bits(bits, const)
    n0 = 10.0 ** (-cfg.snr_db[point_idx] / 10.0)
    y = apply_channel(channel, x, NoiseSpec(n0), noise_rng)
    return grid, const, channel, bits, x, y, n0


def _ber_frame(args) -> dict:
    cfg, point_idx, frame_idx = args
    grid, const, channel, bits, x, y, n0 = _frame_setup(cfg, point_idx, frame_idx)
    result = {"errors": {}, "iterations": None}
    if DETECTOR_HYBRID in cfg.selected_detectors:
        cmap = commutation_map(grid.m, grid.n)
        system = block_partition(precode_channel(cmap, channel), grid.n, n0)
        report = detect(precode_vector(cmap, y), system, cfg.detector, const)
        rx_bits = demap_symbols(deprecode_vector(cmap, report.decisions), const)
        result["errors"][DETECTOR_HYBRID] = int(np.sum(rx_bits != bits))
        result["iterations"] = report.iterations_used
    if DETECTOR_LMMSE in cfg.selected_detectors:
        decisions = full_lmmse_detect(y, channel, n0, const)
        rx_bits = demap_symbols(decisions, const)
        result["errors"][DETECTOR_LMMSE] = int(np.sum(rx_bits != bits))
    return result


def _converge_frame(args) -> dict:
    cfg, point_idx, frame_idx, budgets = args
    grid, const, channel, bits, x, y, n0 = _frame_setup(cfg, point_idx, frame_idx)
    cmap = commutation_map(grid.m, grid.n)
    system = block_partition(precode_channel(cmap, channel), grid.n, n0)
    yp = precode_vector(cmap, y)
    if budgets is None:
        report = detect(yp, system, cfg.detector, const)
        return {"iterations": report.iterations_used}
    truth = precode_vector(cmap, x).data
    fixed = replace(cfg.detector, i_max=max(budgets))
    report = detect(yp, system, fixed, const, true_symbols=truth, early_termination=False)
    return {
        "edge_mse": {b: report.edge_mse_history[b - 1].reshape(-1) for b in budgets}
    }


class _Runner:
    """Maps frame workloads either inline or over a process pool."""

    def __init__(self, threads: int):
        self.threads = max(1, int(threads))
        self._pool = None

    def __enter__(self):
        if self.threads > 1:
            self._pool = ProcessPoolExecutor(max_workers=self.threads)
        return self

    def __exit__(self, *exc):
        if self._pool is not None:
            self._pool.shutdown()
        return False

    def map(self, fn, items):
        if self._pool is None:
            return [fn(it) for it in items]
        return list(self._pool.map(fn, items, chunksize=1))


def run_ber_sweep(cfg: ExperimentConfig, threads: int = 1, progress=None) -> dict:
    """Monte Carlo BER curves for the selected detector(s).

    Frames are processed in batches of ``cfg.batch_frames``; a point stops
    once every selected detector has at least ``cfg.target_bit_errors`` bit
    errors (and ``cfg.min_frames`` frames ran) or at ``cfg.max_frames``.
    Returns {detector name: BerCurve}.
    """
    const = _get_constellation(cfg.constellation)
    bits_per_frame = cfg.m * cfg.n * const.bits_per_symbol
    detectors = cfg.selected_detectors
    curves = {det: [] for det in detectors}

    with _Runner(threads) as runner:
        for point_idx, snr in enumerate(cfg.snr_db):
            errors = {det: 0 for det in detectors}
            frames_done = 0
            iter_sum = 0
            while True:
                batch = min(cfg.batch_frames, cfg.max_frames - frames_done)
                results = runner.map(
                    _ber_frame,
                    [(cfg, point_idx, frames_done + k) for k in range(batch)],
                )
                for res in results:
                    for det, err in res["errors"].items():
                        errors[det] += err
                    if res["iterations"] is not None:
                        iter_sum += res["iterations"]
                frames_done += batch
                have_target = all(errors[det] >= cfg.target_bit_errors for det in detectors)
                if frames_done >= cfg.max_frames or (
                    have_target and frames_done >= cfg.min_frames
                ):
                    break
            bits_total = frames_done * bits_per_frame
            for det in detectors:
                curves[det].append(
                    BerPoint(
                        snr_db=float(snr),
                        frames=frames_done,
                        bits=bits_total,
                        bit_errors=errors[det],
                        ber=errors[det] / bits_total,
                        avg_iters=(iter_sum / frames_done)
                        if det == DETECTOR_HYBRID
                        else None,
                    )
                )
            if progress is not None:
                progress(point_idx, snr, frames_done, {d: errors[d] for d in detectors})

    return {det: BerCurve(detector=det, points=tuple(pts)) for det, pts in curves.items()}


def run_convergence_study(
    cfg: ExperimentConfig,
    iteration_budgets=None,
    threads: int = 1,
    cdf_snr_db: float | None = None,
    mse_sample_cap: int = 100_000,
) -> ConvergenceReportSet:
    """Convergence metrics for the hybrid detector.

    Iteration mode (always run): for every SNR grid point, run
    ``cfg.max_frames`` frames with early termination enabled and average the
    iteration counts. CDF mode (when ``iteration_budgets`` is given): at
    ``cdf_snr_db`` (default: the first grid point) run the same frame count
    with termination disabled and collect the per-edge extrinsic-message MSE
    against the true symbols after each requested budget; one detector run at
    the largest budget yields every smaller budget's snapshot. Samples are
    capped at ``mse_sample_cap`` per budget by deterministic subsampling.
    """
    frames = cfg.max_frames
    mean_iterations = []
    with _Runner(threads) as runner:
        for point_idx, snr in enumerate(cfg.snr_db):
            results = runner.map(
                _converge_frame, [(cfg, point_idx, k, None) for k in range(frames)]
            )
            iters = [res["iterations"] for res in results]
            mean_iterations.append((float(snr), frames, float(np.mean(iters))))

        mse_cdf: dict = {}
        cdf_point = None
        if iteration_budgets:
            budgets = tuple(sorted(int(b) for b in iteration_budgets))
            if budgets[0] < 1:
                raise ValueError("iteration budgets must be positive")
            cdf_point = float(cfg.snr_db[0]) if cdf_snr_db is None else float(cdf_snr_db)
            cdf_cfg = replace(cfg, snr_db=(cdf_point,))
            results = runner.map(
                _converge_frame, [(cdf_cfg, 0, k, budgets) for k in range(frames)]
            )
            for b in budgets:
                samples = np.concatenate([res["edge_mse"][b] for res in results])
                if len(samples) > mse_sample_cap:
                    sub_rng = stream_rng(cfg.seed, 10_000 + b)
                    keep = sub_rng.choice(len(samples), size=mse_sample_cap, replace=False)
                    samples = samples[np.sort(keep)]
                mse_cdf[b] = samples

    return ConvergenceReportSet(
        p=cfg.p,
        channel_mode=cfg.channel_mode,
        mean_iterations=tuple(mean_iterations),
        mse_cdf=mse_cdf,
        cdf_snr_db=cdf_point,
    )


# ---------------------------------------------------------------------------
# Emission
# ---------------------------------------------------------------------------

def _ber_rows(curves: dict) -> list:
    rows = []
    for det in sorted(curves):
        for pt in curves[det].points:
            rows.append(
                {
                    "detector": det,
                    "snr_db": pt.snr_db,
                    "frames": pt.frames,
                    "bits": pt.bits,
                    "bit_errors": pt.bit_errors,
                    "ber": pt.ber,
                    "avg_iters": pt.avg_iters,
                }
            )
    return rows


def emit_results(result, path: str, fmt: str = "csv") -> None:
    """Write a result object to ``path``.

    BER curves (a BerCurve or {name: BerCurve}) become CSV columns
    ``detector,snr_db,frames,bits,bit_errors,ber,avg_iters``. A
    ConvergenceReportSet becomes ``p,mode,snr_db,frames,mean_iterations``
    rows, with MSE samples (if any) in a sibling ``<path>.mse.csv`` as
    ``p,mode,budget,mse``. JSON output mirrors the same fields.
    """
    if fmt not in ("csv", "json"):
        raise ConfigError(f"unknown output format {fmt!r}")

    if isinstance(result, BerCurve):
        result = {result.detector: result}

    if isinstance(result, dict) and all(isinstance(v, BerCurve) for v in result.values()):
        rows = _ber_rows(result)
        if fmt == "json":
            with open(path, "w") as fh:
                json.dump(rows, fh, indent=2)
                fh.write("\n")
        else:
            with open(path, "w") as fh:
                fh.write("detector,snr_db,frames,bits,bit_errors,ber,avg_iters\n")
                for r in rows:
                    avg = "" if r["avg_iters"] is None else f"{r['avg_iters']:.4f}"
                    fh.write(
                        f"{r['detector']},{r['snr_db']:g},{r['frames']},{r['bits']},"
                        f"{r['bit_errors']},{r['ber']:.6e},{avg}\n"
                    )
        return

    if isinstance(result, ConvergenceReportSet):
        if fmt == "json":
            payload = {
                "p": result.p,
                "channel_mode": result.channel_mode,
                "mean_iterations": [
                    {"snr_db": s, "frames": f, "mean_iterations": m}
                    for s, f, m in result.mean_iterations
                ],
                "cdf_snr_db": result.cdf_snr_db,
                "mse_cdf": {str(b): v.tolist() for b, v in result.mse_cdf.items()},
            }
            with open(path, "w") as fh:
                json.dump(payload, fh)
                fh.write("\n")
        else:
            with open(path, "w") as fh:
                fh.write("p,mode,snr_db,frames,mean_iterations\n")
                for s, f, mi in result.mean_iterations:
                    fh.write(f"{result.p},{result.channel_mode},{s:g},{f},{mi:.4f}\n")
            if result.mse_cdf:
                with open(f"{path}.mse.csv", "w") as fh:
                    fh.write("p,mode,budget,mse\n")
                    for b in sorted(result.mse_cdf):
                        for v in result.mse_cdf[b]:
                            fh.write(f"{result.p},{result.channel_mode},{b},{v:.6e}\n")
        return

    raise TypeError(f"cannot emit a {type(result).__name__}")


def write_iteration_trace(report, path: str) -> None:
    """Per-iteration detector trace as CSV ``iter,eta,mse`` (mse blank when
    the true symbols were not supplied or the sweep terminated first)."""
    mse = report.message_mse_per_iter or []
    with open(path, "w") as fh:
        fh.write("iter,eta,mse\n")
        for i, eta in enumerate(report.eta_history, start=1):
            mse_val = f"{mse[i - 1]:.6e}" if i <= len(mse) else ""
            fh.write(f"{i},{eta:.6f},{mse_val}\n")
