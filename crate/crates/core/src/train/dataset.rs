use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Camera, Image};
use crate::synth::prior_provider;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct View {
    pub name: String,
    pub camera: Camera,
    pub split: Split,
    pub low: Image,
    /// Enhancement prior; required for training views.
    pub prior: Option<Image>,
    /// Scale-free monocular depth.
    pub depth_prior: Option<Image>,
}

/// One entry of `cameras.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub split: Split,
    pub camera: Camera,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub views: Vec<ManifestEntry>,
}

pub const MANIFEST_FILE: &str = "cameras.json";

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub views: Vec<View>,
}

impl Dataset {
    pub fn new(views: Vec<View>) -> Result<Self> {
        let ds = Dataset { views };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let mut names = BTreeSet::new();
        for v in &self.views {
            if !names.insert(v.name.as_str()) {
                return Err(Error::invalid(format!("duplicate view name {}", v.name)));
            }
            let (w, h) = (v.camera.width, v.camera.height);
            let check = |img: &Image, channels: usize, what: &str| {
                if img.width != w || img.height != h || img.channels != channels {
                    return Err(Error::invalid(format!(
                        "view {}: {what} is {}x{}x{}, expected {w}x{h}x{channels}",
                        v.name, img.width, img.height, img.channels
                    )));
                }
                Ok(())
            };
            check(&v.low, 3, "low-light image")?;
            match (&v.prior, v.split) {
                (Some(p), _) => check(p, 3, "prior image")?,
                (None, Split::Train) => {
                    return Err(Error::invalid(format!("training view {} has no prior image", v.name)));
                }
                (None, Split::Test) => {}
            }
            if let Some(d) = &v.depth_prior {
                check(d, 1, "depth prior")?;
            }
        }
        if self.train_indices().is_empty() {
            return Err(Error::invalid("dataset has no training views"));
        }
        Ok(())
    }

    pub fn train_indices(&self) -> Vec<usize> {
        (0..self.views.len())
            .filter(|&i| self.views[i].split == Split::Train)
            .collect()
    }

    pub fn test_indices(&self) -> Vec<usize> {
        (0..self.views.len())
            .filter(|&i| self.views[i].split == Split::Test)
            .collect()
    }

    /// Embedding slot of a view: its rank among training views.
    pub fn embedding_index(&self, view: usize) -> Option<usize> {
        if self.views.get(view)?.split != Split::Train {
            return None;
        }
        Some(self.views[..view].iter().filter(|v| v.split == Split::Train).count())
    }

    pub fn n_train(&self) -> usize {
        self.train_indices().len()
    }

    /// Reads a bundle directory: `cameras.json`, `views/`, and optionally
    /// `priors/` and `depth/`. Missing priors are derived from the low-light
    /// image with `gamma` when given.
    pub fn load_dir(dir: &Path, gamma: Option<f64>) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: Manifest = serde_json::from_str(&text)?;
        let mut views = Vec::with_capacity(manifest.views.len());
        for entry in manifest.views {
            let file = format!("{}.png", entry.name);
            let low = Image::load_png(&dir.join("views").join(&file))?;
            let prior_path = dir.join("priors").join(&file);
            let prior = if prior_path.exists() {
                Some(Image::load_png(&prior_path)?)
            } else {
                gamma.map(|g| prior_provider(&low, g)).transpose()?
            };
            let depth_path = dir.join("depth").join(&file);
            let depth_prior = if depth_path.exists() {
                Some(Image::load_png(&depth_path)?)
            } else {
                None
            };
            views.push(View {
                name: entry.name,
                camera: entry.camera,
                split: entry.split,
                low,
                prior,
                depth_prior,
            });
        }
        Dataset::new(views)
    }
}
