"""Flatness probing and the noise-mode, contamination and data-hiding studies."""

from .probe import (
    FLAT_THRESHOLD,
    LayerRecord,
    ProbeReport,
    constant_probe,
    layer_extent_check,
    probe_size,
    random_stack,
    random_stacks,
    rescale,
)
from .studies import (
    BASELINE_LABEL,
    NOISE_STUDY_VARIANTS,
    STUDY_LOSS,
    ContaminationResult,
    HidingArm,
    HidingConfig,
    StudyResult,
    TrainBudget,
    reconstruction_psnr,
    run_contamination_study,
    run_data_hiding_toy,
    run_noise_mode_study,
    train_arm,
    train_reconstruction,
    workers_from_env,
    write_study_csv,
)
