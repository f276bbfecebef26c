//! Training driver and evaluation protocols: reconstruction error, latent
//! probes, the supervised baseline, generative samples, interpolations and
//! latent exports.

mod data;
mod eval;
mod generate;
mod metrics;
mod probe;
mod train;

pub use data::{frame_to_image, tile_grid, Dataset, TILE};
pub use eval::eval_reconstruction;
pub use generate::{
    export_latent_3d, interpolate, latent_path, mean_pairwise_inner_product, nearest_neighbor_distance, prior_samples,
    sample_grid, write_latent_csv, write_sample_grid, write_strip, InterpolationStrip,
};
pub use metrics::{append_metrics, read_metrics, wall_clock, MetricsRow, METRICS_HEADER};
pub use probe::{
    cnn_baseline, linear_probe, probe_features, CnnBaseline, Mlp, Probe, ProbeConfig, ProbeResult, N_CLASSES,
    PROBE_HIDDEN,
};
pub use train::{encode_means, train, train_until, TrainConfig};
