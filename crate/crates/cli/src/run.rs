use std::path::{Path, PathBuf};

use llgs_core::train::TrainConfig;
use llgs_core::{Error, Result};
use serde::{Deserialize, Serialize};

/// Contents of `run.toml`. Relative paths resolve against the file's
/// directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Dataset directory (cameras.json, views/, priors/, optional depth/).
    pub dataset: PathBuf,
    /// Anchor set written by `llgs init`.
    pub anchors: PathBuf,
    /// Receives scene.ckpt, train_log.jsonl and previews.
    pub out: PathBuf,
    #[serde(default)]
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Toml(e.to_string()))?;
        cfg.train.validate()?;
        for p in [&mut cfg.dataset, &mut cfg.anchors, &mut cfg.out] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<(Self, String)> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Ok((Self::parse(&text, base)?, text))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paths_resolve_against_the_run_file() {
        let cfg = RunConfig::parse(
            "dataset = \"data\"\nanchors = \"/abs/anchors.json\"\nout = \"run\"\n[train]\niterations = 5\n",
            Path::new("/cfg"),
        )
        .unwrap();
        assert_eq!(cfg.dataset, PathBuf::from("/cfg/data"));
        assert_eq!(cfg.anchors, PathBuf::from("/abs/anchors.json"));
        assert_eq!(cfg.train.iterations, 5);
        assert_eq!(cfg.train.seed, TrainConfig::default().seed);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::parse(
            "dataset = \"d\"\nanchors = \"a\"\nout = \"o\"\nepochs = 3\n",
            Path::new("."),
        );
        assert!(matches!(err, Err(Error::Toml(_))));
        let err = RunConfig::parse(
            "dataset = \"d\"\nanchors = \"a\"\nout = \"o\"\n[train]\nviews_per_step = 0\n",
            Path::new("."),
        );
        assert!(matches!(err, Err(Error::Invalid(_))));
    }
}
