//! `derain synth`: paired dataset generation and manifest replay.

use std::path::{Path, PathBuf};

use derain::synthesis::{
    build_dataset, replay_manifest, write_split, Background, Dataset, Manifest,
};

use crate::config::{BackgroundSpec, ExperimentConfig};
use crate::error::{CliError, Result};

/// One split written to disk.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitSummary {
    pub name: String,
    pub dir: PathBuf,
    pub examples: usize,
    pub config_hash: String,
}

/// Seed of split `index`, so splits never share scenes or streaks.
pub fn split_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(1_000_003).wrapping_add(index as u64 + 1)
}

/// Generates every split of `config.data` into `out_dir/<split name>`.
pub fn synthesize(config: &ExperimentConfig, out_dir: &Path) -> Result<Vec<SplitSummary>> {
    config.validate()?;
    let data = &config.data;
    let mut files = match &data.backgrounds {
        BackgroundSpec::Directory { path } => Some(Background::load_dir(path)?.into_iter()),
        BackgroundSpec::Procedural { .. } => None,
    };
    let mut summaries = Vec::with_capacity(data.splits.len());
    for (i, split) in data.splits.iter().enumerate() {
        let seed = split_seed(config.seed, i);
        let backgrounds: Vec<Background> = match (&data.backgrounds, files.as_mut()) {
            (BackgroundSpec::Procedural { height, width }, _) => (0..split.count as u64)
                .map(|j| Background::procedural(seed, j, *height, *width))
                .collect(),
            (BackgroundSpec::Directory { path }, Some(files)) => {
                let taken: Vec<Background> = files.by_ref().take(split.count).collect();
                if taken.len() < split.count {
                    return Err(CliError::usage(format!(
                        "{} holds too few backgrounds for split `{}`",
                        path.display(),
                        split.name
                    )));
                }
                taken
            }
            (BackgroundSpec::Directory { .. }, None) => unreachable!("directory backgrounds are loaded above"),
        };
        let dataset = build_dataset(&backgrounds, &data.synthesis_for(seed), data.mode)?;
        let dir = out_dir.join(&split.name);
        summaries.push(write(&dir, &split.name, &dataset)?);
    }
    Ok(summaries)
}

/// Regenerates the split described by `manifest_path` into `out_dir`.
pub fn replay(manifest_path: &Path, out_dir: &Path) -> Result<SplitSummary> {
    let manifest = Manifest::load(manifest_path)?;
    let dataset = replay_manifest(&manifest)?;
    let name = manifest_path
        .parent()
        .and_then(Path::file_name)
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "replay".into());
    write(out_dir, &name, &dataset)
}

fn write(dir: &Path, name: &str, dataset: &Dataset) -> Result<SplitSummary> {
    write_split(dir, dataset)?;
    Ok(SplitSummary {
        name: name.to_string(),
        dir: dir.to_path_buf(),
        examples: dataset.examples.len(),
        config_hash: dataset.manifest.config_hash.clone(),
    })
}
