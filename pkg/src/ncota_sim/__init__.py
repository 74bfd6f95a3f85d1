"""Simulator for decentralized gradient descent over non-coherent wireless consensus.

Nodes never exchange bits or channel state for consensus: each frame
they transmit energy-allocated preamble mixtures encoding their model,
and the superposition received through Rayleigh fading debiases into a
consensus direction whose mean is a pathloss-weighted neighborhood
average. The package also ships digital and analog per-link baselines,
the convergence analysis toolbox, and an experiment harness with a CLI.
"""

from .analysis import (
    ConvergenceBounds,
    ConvergenceConstants,
    MixingSpectrum,
    StepSchedule,
    StepsizeConditions,
    analysis_report,
    check_conditions,
    consensus_noise_bound,
    convergence_bounds,
    convergence_constants,
    horizon_schedule,
    lyapunov_value,
    minimize_lyapunov,
    mixing_matrix,
)
from .baselines import (
    DigitalLinkConfig,
    QuantizerConfig,
    choose_rate,
    dgd_step_reference,
    digital_link_config,
    dithered_quantize,
    oa_decode,
    oa_dgd_frame,
    oa_encode,
    oa_frame_duration_s,
    oa_mixing_matrix,
    od_dgd_frame,
    od_frame_duration_s,
    od_mixing_matrix,
)
from .channel import (
    DEFAULT_RADIO,
    Deployment,
    RadioConstants,
    RxCorrelations,
    SPEED_OF_LIGHT,
    assign_slots,
    build_deployment,
    deployment_from_json,
    deployment_to_json,
    friis_pathloss,
    transmit_and_correlate,
)
from .codec import (
    Codebook,
    TxFrame,
    build_codebook,
    build_tx_signal,
    decode_weights,
    encode_weights,
    project_to_ball,
)
from .harness import (
    ExperimentConfig,
    EnvelopeRow,
    FitResult,
    MetricsRow,
    RunResult,
    TrialRow,
    best_envelope,
    coarse_tune_schedule,
    fit_scaling,
    run_experiment,
    run_trajectory,
    sample_frames,
    worker_count,
)
from .ncota import (
    DivergenceError,
    NodeState,
    Stepsizes,
    consensus_signal,
    frame_duration_s,
    init_states,
    ncota_step,
    run_frame,
)
from .problem import (
    MU,
    Optimum,
    ProblemSpec,
    SMOOTHNESS,
    estimate_radius,
    ingest_dataset,
    read_idx_images,
    read_idx_labels,
    solve_centralized,
    synthesize_dataset,
)

__version__ = "0.1.0"
