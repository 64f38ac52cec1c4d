//! Through-plane super-resolution for anisotropic 3D volumes.
//!
//! A 2D convolutional autoencoder is trained on high-resolution in-plane
//! slices; intermediate slices are synthesized by decoding convex
//! combinations of the latent codes of adjacent slices. Classical
//! interpolators (linear, cubic B-spline, Lanczos-3), full-reference image
//! quality metrics (PSNR, SSIM, VIFp) and a slice-drop evaluation harness
//! round out the library.

pub mod autodiff;
pub mod autoencoder;
pub mod baselines;
pub mod error;
pub mod eval;
pub mod io;
pub mod metrics;
pub mod rng;
pub mod synth;
pub mod trainer;
pub mod volume;

pub use autodiff::{AdamParams, AdamState, ModelWeights, Tensor};
pub use autoencoder::{latent_mix, AeConfig, Autoencoder, LatentCode, LatentSource};
pub use baselines::{upsample_through_plane, InterpKind, Interpolator1D};
pub use error::{Error, Result};
pub use eval::{
    drop_alternate_slices, evaluate_volume, export_report, summarize, EvalRecord, EvalSummary,
    Method, ReportFormat,
};
pub use io::{load_volume, write_volume, VolumeFormat};
pub use metrics::{all_metrics, psnr, ssim, vif, wilcoxon_one_sided_greater, MetricResult};
pub use trainer::{augment, sample_patch, train, AugmentConfig, TrainConfig, TrainReport};
pub use volume::{stack_slices, Slice, Spacing, Volume};
