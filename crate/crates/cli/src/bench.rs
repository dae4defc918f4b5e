//! `derain bench`: seconds per image at several scales.

use derain::metrics::{time_inference, TimingStats};
use derain::network::NetworkConfig;
use derain::pipeline::{format_sequence, DehazeNet, DerainModel, Pipeline, PipelineConfig, Stage};
use derain::synthesis::backgrounds;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct BenchOptions {
    pub pipeline: PipelineConfig,
    /// Network shape used for stages without a checkpoint; run time does
    /// not depend on the weights.
    pub network: NetworkConfig,
    pub sizes: Vec<usize>,
    pub images: usize,
    pub warmup: usize,
    pub repeats: usize,
    pub seed: u64,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions {
            pipeline: PipelineConfig {
                stage_sequence: vec![Stage::Derain],
                ..Default::default()
            },
            network: NetworkConfig::default(),
            sizes: vec![80, 500],
            images: 2,
            warmup: 1,
            repeats: 3,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub method: String,
    #[serde(flatten)]
    pub stats: TimingStats,
}

fn build_pipeline(opts: &BenchOptions) -> Result<Pipeline> {
    let cfg = &opts.pipeline;
    let needs = |s: Stage| cfg.stage_sequence.contains(&s);
    let derain = match (&cfg.derain_checkpoint, needs(Stage::Derain)) {
        (Some(path), true) => Some(DerainModel::load(path)?),
        (None, true) => Some(DerainModel::new(opts.network.clone(), cfg.tau, false, opts.seed)?),
        (_, false) => None,
    };
    let dehaze = match (&cfg.dehaze_checkpoint, needs(Stage::Dehaze)) {
        (Some(path), true) => Some(DehazeNet::load(path)?),
        (None, true) => Some(DehazeNet::new(opts.network.clone(), opts.seed)?),
        (_, false) => None,
    };
    Ok(Pipeline::from_models(cfg.clone(), derain, dehaze)?)
}

/// Times the pipeline on one evaluation thread, one row per scale.
pub fn bench(opts: &BenchOptions) -> Result<Vec<BenchRow>> {
    if opts.sizes.is_empty() || opts.images == 0 {
        return Err(CliError::usage("bench needs at least one size and one image"));
    }
    let pipeline = build_pipeline(opts)?;
    let images: Vec<_> = opts
        .sizes
        .iter()
        .flat_map(|&s| (0..opts.images as u64).map(move |i| backgrounds::procedural(opts.seed, i, s, s)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let stats = pool.install(|| time_inference(|img| pipeline.run(img), &images, opts.warmup, opts.repeats))?;
    let method = format!("{} tau={}", format_sequence(&opts.pipeline.stage_sequence), opts.pipeline.tau);
    Ok(stats
        .into_iter()
        .map(|stats| BenchRow {
            method: method.clone(),
            stats,
        })
        .collect())
}

pub fn to_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from("method,height,width,images,repeats,median_s,mean_s,min_s,max_s,mad_s\n");
    for r in rows {
        let s = &r.stats;
        out.push_str(&format!(
            "{},{},{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
            r.method, s.height, s.width, s.images, s.repeats, s.median_s, s.mean_s, s.min_s, s.max_s, s.mad_s
        ));
    }
    out
}

