"""Link-level OTFS simulation with commutation-precoded hybrid detection.

The package covers the full receive chain at desk scale: delay-Doppler
channel construction for the ISFFT/SFFT and IZT/ZT modulator stacks, the
commutation precoder that exposes the channel's block sparsity, an iterative
detector that runs local L-MMSE estimates per block and reconciles blocks by
probability-domain message passing, a full-size L-MMSE baseline, matched
filter bound references, and a seeded Monte Carlo harness with a CLI.
"""

from .core import (
    Constellation,
    FrameVector,
    NoiseSpec,
    OtfsGrid,
    PathSet,
    demap_symbols,
    frame_streams,
    make_grid,
    map_bits,
    qpsk_constellation,
    sample_channel,
    stream_rng,
)
from .channels import (
    DdChannel,
    PulseSpec,
    apply_channel,
    dd_channel_isfft,
    dd_channel_izt,
    default_cp_length,
    path_time_matrix_izt,
    pulse_ambiguity,
    time_channel_isfft,
)
from .precoding import (
    BlockStructureError,
    BlockSystem,
    CommutationMap,
    block_partition,
    commutation_map,
    deprecode_vector,
    precode_channel,
    precode_vector,
)
from .detector import (
    BeliefMatrix,
    DetectionReport,
    DetectorConfig,
    DetectorNumericalError,
    GaussianMessage,
    compute_eta,
    detect,
    flop_estimate,
    full_lmmse_detect,
    ob_update,
    vb_update,
)
from .bounds import MfbQuery, gauss_2f1, mfb_closed_form, mfb_monte_carlo
from .harness import (
    BerCurve,
    BerPoint,
    ConfigError,
    ConvergenceReportSet,
    ExperimentConfig,
    emit_results,
    load_config,
    run_ber_sweep,
    run_convergence_study,
    save_config,
)

__version__ = "0.1.0"
