//! Luminance PSNR/SSIM, rain-mask scores and inference timing.

mod detection;
mod quality;
pub mod report;
mod timing;

pub use detection::{majority_baseline_accuracy, mask_metrics, MaskMetrics};
pub use quality::{psnr, ssim, ssim_with, to_luminance, SsimParams, LUMA_WEIGHTS};
pub use report::{EvalReport, EvalRow, MetricReport};
pub use timing::{time_inference, TimingStats};
