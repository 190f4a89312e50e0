//! Anchor initialization: voxel candidates from a dense cloud, distance-adaptive
//! stochastic pruning, and the depth-guided warm-up.

mod prune;
mod warmup;

use std::collections::BTreeSet;
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

pub use prune::{
    nearest_neighbor_distances, preservation_probability, retention_draw, stochastic_prune, update_threshold,
    PruneConfig, PruneReport, PruneRound,
};
pub use warmup::{depth_warmup_refine, mean_depth_loss, WarmupConfig, WarmupReport, COVERAGE_ALPHA};

use crate::error::{Error, Result};
use crate::geometry::PointCloud;

/// An occupied voxel promoted to an anchor candidate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateAnchor {
    pub position: Vector3<f64>,
    pub scale: f64,
    pub voxel: [i64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnchorSet {
    pub voxel_resolution: f64,
    pub anchors: Vec<CandidateAnchor>,
    /// Filled in by pruning.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<PruneReport>,
}

impl AnchorSet {
    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    pub fn positions(&self) -> Vec<Vector3<f64>> {
        self.anchors.iter().map(|a| a.position).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.voxel_resolution > 0.0) {
            return Err(Error::invalid("voxel resolution must be positive"));
        }
        let mut seen = BTreeSet::new();
        for a in &self.anchors {
            if !a.position.iter().all(|x| x.is_finite()) || !(a.scale > 0.0) {
                return Err(Error::invalid("anchor with non-finite position or non-positive scale"));
            }
            if !seen.insert(a.voxel) {
                return Err(Error::invalid(format!("two anchors share voxel {:?}", a.voxel)));
            }
        }
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let set: AnchorSet = serde_json::from_str(&text)?;
        set.validate()?;
        Ok(set)
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// One anchor per occupied voxel of side `r`, placed at the voxel center with
/// scale `r`. Anchors come out sorted by voxel index.
pub fn build_anchor_candidates(cloud: &PointCloud, r: f64) -> Result<AnchorSet> {
    if cloud.is_empty() {
        return Err(Error::invalid("point cloud is empty"));
    }
    if !(r > 0.0) || !r.is_finite() {
        return Err(Error::invalid(format!("voxel resolution must be positive, got {r}")));
    }
    let voxels: BTreeSet<[i64; 3]> = cloud
        .points
        .iter()
        .map(|p| [0, 1, 2].map(|a| (p[a] / r).floor() as i64))
        .collect();
    let anchors = voxels
        .into_iter()
        .map(|voxel| CandidateAnchor {
            position: Vector3::new(
                (voxel[0] as f64 + 0.5) * r,
                (voxel[1] as f64 + 0.5) * r,
                (voxel[2] as f64 + 0.5) * r,
            ),
            scale: r,
            voxel,
        })
        .collect();
    Ok(AnchorSet {
        voxel_resolution: r,
        anchors,
        provenance: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cloud(points: &[[f64; 3]]) -> PointCloud {
        PointCloud::new(points.iter().map(|p| Vector3::from(*p)).collect(), None).unwrap()
    }

    #[test]
    fn points_in_one_voxel_share_an_anchor() {
        let set = build_anchor_candidates(&cloud(&[[0.1, 0.1, 0.1], [0.4, 0.2, 0.3]]), 1.0).unwrap();
        assert_eq!(set.len(), 1);
        assert_eq!(set.anchors[0].position, Vector3::new(0.5, 0.5, 0.5));
        assert_eq!(set.anchors[0].scale, 1.0);
    }

    #[test]
    fn adjacent_voxels_give_two_anchors() {
        let set = build_anchor_candidates(&cloud(&[[0.1, 0.1, 0.1], [1.1, 0.2, 0.3]]), 1.0).unwrap();
        assert_eq!(set.len(), 2);
        set.validate().unwrap();
    }

    #[test]
    fn negative_coordinates_floor_correctly() {
        let set = build_anchor_candidates(&cloud(&[[-0.1, 0.0, 0.0]]), 1.0).unwrap();
        assert_eq!(set.anchors[0].voxel, [-1, 0, 0]);
        assert_eq!(set.anchors[0].position, Vector3::new(-0.5, 0.5, 0.5));
    }

    #[test]
    fn unit_cube_has_at_most_64_quarter_voxels() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<[f64; 3]> = (0..10_000)
            .map(|_| [rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()])
            .collect();
        let set = build_anchor_candidates(&cloud(&pts), 0.25).unwrap();
        assert!(set.len() <= 64);
    }

    #[test]
    fn empty_cloud_is_rejected() {
        assert!(build_anchor_candidates(&PointCloud::new(vec![], None).unwrap(), 1.0).is_err());
        assert!(build_anchor_candidates(&cloud(&[[0.0; 3]]), 0.0).is_err());
    }
}
