use nalgebra::Vector3;

use crate::error::{Error, Result};

/// Dense 3D point set, optionally colored, used as the geometric prior.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vector3<f64>>,
    pub colors: Option<Vec<Vector3<f64>>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vector3<f64>>, colors: Option<Vec<Vector3<f64>>>) -> Result<Self> {
        let cloud = PointCloud { points, colors };
        cloud.validate()?;
        Ok(cloud)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(i) = self.points.iter().position(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(Error::invalid(format!("point {i} has non-finite coordinates")));
        }
        if let Some(colors) = &self.colors {
            if colors.len() != self.points.len() {
                return Err(Error::invalid("color count differs from point count"));
            }
            if colors.iter().any(|c| c.iter().any(|v| !(0.0..=1.0).contains(v))) {
                return Err(Error::invalid("colors must lie in [0, 1]"));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}
