//! Optional TOML defaults. Every key mirrors a long flag of the same
//! subcommand; flags given on the command line win.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Deserialize;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default)]
    pub world: WorldSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub explain: ExplainSection,
    #[serde(default)]
    pub axioms: AxiomsSection,
    #[serde(default)]
    pub audit: AuditSection,
    #[serde(default)]
    pub bench: BenchSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct WorldSection {
    pub latent_dim: Option<usize>,
    pub image_dim: Option<usize>,
    pub num_attrs: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct TrainSection {
    pub gamma: Option<f64>,
    pub faithfulness: Option<String>,
    pub epochs: Option<usize>,
    pub steps_per_epoch: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub final_lr_fraction: Option<f64>,
    pub p_cond: Option<f64>,
    pub seed: Option<u64>,
    pub hidden: Option<Vec<usize>>,
    pub eval_samples: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct ExplainSection {
    pub z_seed: Option<u64>,
    pub direction: Option<String>,
    pub names: Option<Vec<String>>,
    pub method: Option<String>,
    pub permutations: Option<usize>,
    pub permutation_seed: Option<u64>,
    pub cache: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct AxiomsSection {
    pub games: Option<usize>,
    pub min_players: Option<usize>,
    pub max_players: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct AuditSection {
    pub tolerance: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct BenchSection {
    pub min_players: Option<usize>,
    pub max_players: Option<usize>,
    pub ladder: Option<Vec<usize>>,
    pub ladder_players: Option<usize>,
    pub seeds: Option<u64>,
    pub seed: Option<u64>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

/// Fails early when an output path cannot be written.
pub fn check_output(path: &Path) -> Result<PathBuf> {
    let parent = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    anyhow::ensure!(parent.is_dir(), "output directory {} does not exist", parent.display());
    anyhow::ensure!(!path.is_dir(), "output path {} is a directory", path.display());
    Ok(path.to_path_buf())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sections() {
        let cfg: FileConfig = toml::from_str(
            "[train]\ngamma = 0.5\nhidden = [8, 8]\n[explain]\nmethod = \"sampled\"\ncache = false\n",
        )
        .unwrap();
        assert_eq!(cfg.train.gamma, Some(0.5));
        assert_eq!(cfg.train.hidden, Some(vec![8, 8]));
        assert_eq!(cfg.explain.cache, Some(false));
        assert!(cfg.world.seed.is_none());
    }

    #[test]
    fn rejects_unknown_keys() {
        assert!(toml::from_str::<FileConfig>("[train]\ngama = 0.5\n").is_err());
        assert!(toml::from_str::<FileConfig>("[trian]\n").is_err());
    }
}
