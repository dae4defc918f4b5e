//! `derain eval`: pairs results with ground truth by id and tabulates
//! PSNR/SSIM (plus mask quality and timing when available).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use derain::image::Image;
use derain::metrics::{mask_metrics, psnr, ssim, EvalReport, EvalRow, MetricReport};
use derain::provenance::config_hash;
use derain::synthesis::RainMask;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{CliError, Result};
use crate::infer::{InferManifest, INFER_MANIFEST_FILE};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalOptions {
    pub results: PathBuf,
    pub truth: PathBuf,
    /// Suffix of result file stems; stripped to obtain the id.
    pub result_tag: String,
    /// Suffix of ground-truth file stems.
    pub truth_tag: String,
    pub method: String,
    pub dataset: String,
    /// Adds per-image wall time from the inference manifest.
    pub timing: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            results: PathBuf::new(),
            truth: PathBuf::new(),
            result_tag: String::new(),
            truth_tag: "_B".into(),
            method: "method".into(),
            dataset: "dataset".into(),
            timing: false,
        }
    }
}

/// Maps id to path for every `*{tag}.png` directly inside `dir`.
fn index(dir: &Path, tag: &str) -> Result<BTreeMap<String, PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
    let mut out = BTreeMap::new();
    for entry in entries.filter_map(|e| e.ok()) {
        let path = entry.path();
        if !path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
            continue;
        }
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        if let Some(id) = stem.strip_suffix(tag) {
            if !id.is_empty() {
                out.insert(id.to_string(), path);
            }
        }
    }
    Ok(out)
}

fn mask_scores(results: &Path, truth: &Path, id: &str) -> Result<Option<(f64, f64)>> {
    let pred = results.join("masks").join(format!("{id}.png"));
    let gt = truth.join(format!("{id}_R.png"));
    if !pred.exists() || !gt.exists() {
        return Ok(None);
    }
    let prob = Image::load_png(&pred)?;
    let mask = RainMask::from_image(&Image::load_png(&gt)?)?;
    let m = mask_metrics(prob.plane(0), &mask.to_f64(), 0.5)?;
    Ok(Some((m.accuracy, m.f1)))
}

#[derive(Serialize)]
struct Provenance<'a> {
    method: &'a str,
    dataset: &'a str,
    result_tag: &'a str,
    truth_tag: &'a str,
    timing: bool,
    ids: Vec<&'a String>,
    unmatched: &'a [String],
}

/// Builds the report. Ids present on only one side are listed in
/// `unmatched`; the remaining pairs still produce a table.
pub fn evaluate(opts: &EvalOptions) -> Result<EvalReport> {
    let results = index(&opts.results, &opts.result_tag)?;
    let truth = index(&opts.truth, &opts.truth_tag)?;
    let mut unmatched: Vec<String> = results
        .keys()
        .filter(|id| !truth.contains_key(*id))
        .map(|id| format!("{id} (no ground truth)"))
        .collect();
    unmatched.extend(
        truth
            .keys()
            .filter(|id| !results.contains_key(*id))
            .map(|id| format!("{id} (no result)")),
    );
    let pairs: Vec<(&String, &PathBuf, &PathBuf)> = results
        .iter()
        .filter_map(|(id, r)| truth.get(id).map(|t| (id, r, t)))
        .collect();
    if pairs.is_empty() {
        return Err(CliError::Runtime(format!(
            "no result in {} matches a ground-truth file in {}",
            opts.results.display(),
            opts.truth.display()
        )));
    }
    let timings: BTreeMap<String, f64> = if opts.timing {
        let manifest = InferManifest::load(&opts.results.join(INFER_MANIFEST_FILE))?;
        manifest.images.into_iter().map(|r| (r.id, r.wall_time_s)).collect()
    } else {
        BTreeMap::new()
    };
    let rows = pairs
        .par_iter()
        .map(|(id, result_path, truth_path)| {
            let result = Image::load_png(result_path)?;
            let clean = Image::load_png(truth_path)?;
            let masks = mask_scores(&opts.results, &opts.truth, id)?;
            Ok(EvalRow {
                method: opts.method.clone(),
                dataset: opts.dataset.clone(),
                id: (*id).clone(),
                metrics: MetricReport {
                    psnr: psnr(&result, &clean)?,
                    ssim: ssim(&result, &clean)?,
                    mask_accuracy: masks.map(|m| m.0),
                    mask_f1: masks.map(|m| m.1),
                    wall_time: timings.get(*id).copied(),
                },
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let hash = config_hash(&Provenance {
        method: &opts.method,
        dataset: &opts.dataset,
        result_tag: &opts.result_tag,
        truth_tag: &opts.truth_tag,
        timing: opts.timing,
        ids: pairs.iter().map(|p| p.0).collect(),
        unmatched: &unmatched,
    });
    Ok(EvalReport::new(hash, rows, unmatched))
}

/// Writes `<prefix>.csv` and `<prefix>.json`.
pub fn write_report(report: &EvalReport, prefix: &Path) -> Result<(PathBuf, PathBuf)> {
    if let Some(dir) = prefix.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let csv = prefix.with_extension("csv");
    let json = prefix.with_extension("json");
    std::fs::write(&csv, report.to_csv()).map_err(|e| CliError::io(&csv, e))?;
    std::fs::write(&json, report.to_json()).map_err(|e| CliError::io(&json, e))?;
    Ok((csv, json))
}
