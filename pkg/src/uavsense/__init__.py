"""Cooperative multi-BS UAV sensing: tensor-decomposition parameter
estimation per base station, followed by multistatic data association and
position/velocity fusion, plus a seeded Monte-Carlo harness."""

from . import errors
from .detection import DetectionMap, ScanGrid, detect_beam, estimate_count_mdl, mdl_order
from .dualpol import (
    PolarizationFactors,
    RxTensor4,
    decompose_dualpol,
    estimate_targets_dualpol,
    sample_polarization,
    split_pol_doppler,
    synthesize_dualpol,
)
from .estimation import (
    AoaEstimate,
    EstimateSet,
    SearchGrids,
    TargetEstimate,
    aoa_2d_oracle,
    aoa_grq,
    default_grids,
    delay_range,
    doppler_velocity,
    estimate_targets,
    estimates_from_records,
    estimates_to_records,
    grids_from_beams,
    resolve_scaling_and_alpha,
)
from .fusion import (
    AssociationResult,
    FusedTrack,
    FusionConfig,
    SensingReading,
    associate,
    back_project,
    calibrate_estimates,
    fuse_position,
    fuse_tracks,
    fuse_velocity_residual,
    fuse_velocity_wls,
    mean_fusion,
    reading_from_estimate,
    tracks_to_records,
)
from .harness import (
    ExperimentConfig,
    MetricRow,
    TrialRecord,
    default_config,
    run_experiment,
    run_trial,
    trimmed_rmse,
)
from .scene import (
    BsSite,
    PairTruth,
    Scene,
    UavTruth,
    channel_coefficient,
    ground_truth,
    pair_truth,
    path_loss_db,
    random_scene,
    scene_from_config,
    scene_to_config,
    transform_matrix,
)
from .tensorio import read_tensor, write_tensor
from .tensorops import (
    FactorMatrices,
    SmoothingPlan,
    Unfolding1,
    balanced_plan,
    check_uniqueness,
    decompose,
    khatri_rao,
    refold_mode1,
    smooth,
    unfold_mode1,
)
from .waveform import (
    Beamformer,
    RxTensor,
    channel_matrix,
    design_alignment_beams,
    noise_variance_per_sample,
    steering_horizontal,
    steering_upa,
    steering_vertical,
    synthesize_rx_tensor,
)

__version__ = "0.1.0"
