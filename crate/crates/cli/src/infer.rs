//! `derain infer`: runs a stage sequence over PNG files.

use std::path::{Path, PathBuf};
use std::time::Instant;

use derain::image::{BitDepth, Image};
use derain::pipeline::{format_sequence, Pipeline, PipelineConfig, SequenceOutput};
use derain::provenance::config_hash;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const INFER_MANIFEST_FILE: &str = "infer_manifest.json";

/// Per-iteration summary of a derain stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationSummary {
    /// Mean absolute value of the removed residue.
    pub residual_mean_abs: f64,
    /// Share of pixels detected as rain.
    pub mask_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub stage: String,
    pub output: PathBuf,
    pub iterations: Vec<IterationSummary>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: String,
    pub input: PathBuf,
    pub output: PathBuf,
    pub stages: Vec<StageSummary>,
    pub wall_time_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileFailure {
    pub input: PathBuf,
    pub error: String,
}

/// Written to the output directory after every run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InferManifest {
    pub config_hash: String,
    pub sequence: String,
    pub tau: usize,
    pub images: Vec<ImageRecord>,
    pub failures: Vec<FileFailure>,
}

impl InferManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
    }
}

/// Image id of an input file: its stem without a trailing `_O`.
pub fn input_id(path: &Path) -> String {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    stem.strip_suffix("_O").map(str::to_string).unwrap_or(stem)
}

fn is_png(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png"))
}

/// Expands directories into their PNG files. A directory holding rainy
/// `*_O.png` images (a synthesized split) contributes only those.
pub fn collect_inputs(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for input in inputs {
        if input.is_dir() {
            let entries = std::fs::read_dir(input).map_err(|e| CliError::io(input, e))?;
            let mut pngs: Vec<PathBuf> = entries
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| is_png(p))
                .collect();
            pngs.sort();
            let rainy = |p: &PathBuf| p.file_stem().is_some_and(|s| s.to_string_lossy().ends_with("_O"));
            if pngs.iter().any(rainy) {
                pngs.retain(rainy);
            }
            files.extend(pngs);
        } else {
            files.push(input.clone());
        }
    }
    if files.is_empty() {
        return Err(CliError::usage("no input images"));
    }
    Ok(files)
}

fn save(image: &Image, path: &Path, depth: BitDepth) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    image.clone().clip().save_png(path, depth)?;
    Ok(())
}

fn mean_abs(values: &[f64]) -> f64 {
    values.iter().map(|v| v.abs()).sum::<f64>() / values.len().max(1) as f64
}

fn process(
    pipeline: &Pipeline,
    input: &Path,
    out_dir: &Path,
    montage: bool,
) -> Result<ImageRecord> {
    let depth = pipeline.config.export_depth;
    let id = input_id(input);
    let image = Image::load_png(input)?;
    let start = Instant::now();
    let SequenceOutput { output, stages } = pipeline.run(&image)?;
    let wall_time_s = start.elapsed().as_secs_f64();

    let output_path = out_dir.join(format!("{id}.png"));
    save(&output, &output_path, depth)?;
    let mut summaries = Vec::with_capacity(stages.len());
    for (k, record) in stages.iter().enumerate() {
        let path = out_dir
            .join("stages")
            .join(format!("{id}_{}_{}.png", k + 1, record.stage));
        save(&record.output, &path, depth)?;
        let iterations = record
            .trace
            .iter()
            .flat_map(|t| &t.steps)
            .map(|s| IterationSummary {
                residual_mean_abs: mean_abs(s.residual.data()),
                mask_fraction: s.mask_prob.data().iter().filter(|&&p| p > 0.5).count() as f64
                    / s.mask_prob.data().len() as f64,
            })
            .collect();
        summaries.push(StageSummary {
            stage: record.stage.to_string(),
            output: path,
            iterations,
        });
    }
    if let Some(first) = stages.iter().find_map(|s| s.trace.as_ref()).and_then(|t| t.steps.first()) {
        save(&first.mask_prob, &out_dir.join("masks").join(format!("{id}.png")), depth)?;
    }
    if montage {
        let mut panels: Vec<&Image> = vec![&image];
        panels.extend(stages.iter().map(|s| &s.output));
        let clipped: Vec<Image> = panels.into_iter().map(|p| p.clone().clip()).collect();
        let refs: Vec<&Image> = clipped.iter().collect();
        save(&Image::hconcat(&refs)?, &out_dir.join("montage").join(format!("{id}.png")), depth)?;
    }
    Ok(ImageRecord {
        id,
        input: input.to_path_buf(),
        output: output_path,
        stages: summaries,
        wall_time_s,
    })
}

/// Loads the configured checkpoints and restores every input. Failures of
/// single files are recorded and the batch continues.
pub fn infer(inputs: &[PathBuf], config: &PipelineConfig, out_dir: &Path, montage: bool) -> Result<InferManifest> {
    let files = collect_inputs(inputs)?;
    let pipeline = Pipeline::load(config.clone())?;
    infer_with(&pipeline, &files, out_dir, montage)
}

pub fn infer_with(pipeline: &Pipeline, files: &[PathBuf], out_dir: &Path, montage: bool) -> Result<InferManifest> {
    std::fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;
    let mut manifest = InferManifest {
        config_hash: config_hash(&pipeline.config),
        sequence: format_sequence(&pipeline.config.stage_sequence),
        tau: pipeline.config.tau,
        images: Vec::new(),
        failures: Vec::new(),
    };
    for file in files {
        match process(pipeline, file, out_dir, montage) {
            Ok(record) => manifest.images.push(record),
            Err(err) => {
                eprintln!("error: {}: {err}", file.display());
                manifest.failures.push(FileFailure {
                    input: file.clone(),
                    error: err.to_string(),
                });
            }
        }
    }
    let path = out_dir.join(INFER_MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).expect("manifests serialize");
    std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
    Ok(manifest)
}
