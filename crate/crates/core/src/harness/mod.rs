//! Experiment orchestration: configuration, data, training and artifacts.

pub mod commands;
mod config;
mod data;
mod emit;
mod run;

pub use config::{
    parse_config, DatasetSource, ExperimentConfig, Instrument, NoiseConfig, RmtConfig, Schedule, TieBreak,
    CIFAR_SHAPE, DEFAULT_BATCH_SIZE, DEFAULT_LR, DEFAULT_MOMENTUM, DEFAULT_WEIGHT_DECAY,
};
pub use data::{
    augment, augment_batch, augment_with, load_cifar10_dir, parse_cifar10_bin, parse_cifar10_bytes, preprocess,
    synth_dataset, ChannelStats, LabeledImageSet, SyntheticSpec, AUGMENT_PAD, CIFAR_RECORD, STD_FLOOR,
};
pub use emit::{
    emit, num, read_csv, read_metrics, write_condition, write_csv, write_density_table, write_divergence, write_json,
    write_metrics, write_noise, write_spectrum, METRIC_COLUMNS,
};
pub use run::{
    diagnostics_batch, evaluate, leg_seed, prepare_data, run_experiment, run_leg, select_best,
    weight_gradient_histograms, DiagnosticsLog, LayerHistogram, LegOutcome, MetricRow, PreparedData, RunArtifact,
};
