use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// Learning-rate group of a parameter tensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    AnchorPosition,
    /// Anchor spatial scale `l_v`; never optimized.
    AnchorScale,
    OffsetIntrinsic,
    OffsetTransient,
    Feature,
    OpacityDecoder,
    CovarianceDecoder,
    /// Reflectance, illumination and residual heads.
    DecompositionDecoder,
    ToneMapper,
    Embedding,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 10] = [
        ParamGroup::AnchorPosition,
        ParamGroup::AnchorScale,
        ParamGroup::OffsetIntrinsic,
        ParamGroup::OffsetTransient,
        ParamGroup::Feature,
        ParamGroup::OpacityDecoder,
        ParamGroup::CovarianceDecoder,
        ParamGroup::DecompositionDecoder,
        ParamGroup::ToneMapper,
        ParamGroup::Embedding,
    ];
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub group: ParamGroup,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Named flat `f64` arrays in declaration order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    tensors: Vec<Tensor>,
    by_name: BTreeMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a tensor. Panics on duplicate names or a shape/data mismatch.
    pub fn add(&mut self, name: &str, group: ParamGroup, shape: &[usize], data: Vec<f64>) -> ParamId {
        assert!(!self.by_name.contains_key(name), "duplicate parameter name {name}");
        assert_eq!(shape.iter().product::<usize>(), data.len(), "shape mismatch for {name}");
        let id = ParamId(self.tensors.len());
        self.tensors.push(Tensor {
            name: name.to_string(),
            group,
            shape: shape.to_vec(),
            data,
        });
        self.by_name.insert(name.to_string(), id);
        id
    }

    pub fn zeros(&mut self, name: &str, group: ParamGroup, shape: &[usize]) -> ParamId {
        self.add(name, group, shape, vec![0.0; shape.iter().product()])
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn tensor(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    #[inline]
    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.tensors[id.0].data
    }

    #[inline]
    pub fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.tensors[id.0].data
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    pub fn zero_grads(&self) -> Gradients {
        Gradients {
            bufs: self.tensors.iter().map(|t| vec![0.0; t.len()]).collect(),
        }
    }
}

/// Gradient buffers mirroring a [`ParamStore`] tensor for tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    bufs: Vec<Vec<f64>>,
}

impl Gradients {
    #[inline]
    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.bufs[id.0]
    }

    #[inline]
    pub fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.bufs[id.0]
    }

    /// Element-wise accumulation. Merging partial buffers in a fixed order
    /// keeps results bit-stable.
    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.bufs.iter_mut().zip(&other.bufs) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.bufs.iter_mut().flatten().for_each(|v| *v *= s);
    }

    pub fn zero(&mut self) {
        self.bufs.iter_mut().flatten().for_each(|v| *v = 0.0);
    }

    pub fn is_zero(&self) -> bool {
        self.bufs.iter().flatten().all(|&v| v == 0.0)
    }

    pub fn max_abs(&self) -> f64 {
        self.bufs.iter().flatten().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn buffers(&self) -> &[Vec<f64>] {
        &self.bufs
    }
}
