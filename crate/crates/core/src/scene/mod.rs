//! Anchor-based dual-branch scene representation.
//!
//! Every anchor owns two feature vectors. The intrinsic feature decodes into
//! `k` Gaussians carrying reflectance and illumination; the transient feature
//! (plus a per-training-view embedding) decodes into `k` Gaussians carrying a
//! signed residual. All learnable values live in one [`ParamStore`].

mod checkpoint;
mod covariance;
mod decode;
mod mlp;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use covariance::{build_covariance, build_covariance_backward, quat_to_rotation};
pub use decode::{
    decode_anchor, decode_anchor_backward, retone, view_geometry, AnchorDecode, BranchDecode, BranchGrads,
    DecodeRequest, GaussianGeometry, ViewGeometry,
};
pub use mlp::{sigmoid, softplus, softplus_inv, MlpParams};

use crate::diff::{ParamGroup, ParamId, ParamStore, Parameterized};
use crate::error::{Error, Result};
use crate::geometry::Camera;
use crate::llgim::AnchorSet;

/// Network sizes. Defaults follow the Scaffold-GS lineage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    /// Gaussians spawned per anchor (`k`).
    pub gaussians_per_anchor: usize,
    pub feature_dim: usize,
    pub hidden_dim: usize,
    /// Per-view embedding size (`r_e`).
    pub embedding_dim: usize,
    /// Initial Gaussian scale as a fraction of the anchor scale.
    pub init_scale: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            gaussians_per_anchor: 10,
            feature_dim: 32,
            hidden_dim: 32,
            embedding_dim: 16,
            init_scale: 0.5,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.gaussians_per_anchor == 0 || self.feature_dim == 0 || self.hidden_dim == 0 {
            return Err(Error::invalid("scene dimensions must be positive"));
        }
        if !(self.init_scale > 0.0) {
            return Err(Error::invalid("init_scale must be positive"));
        }
        Ok(())
    }
}

/// The eight decoders. Transient geometry uses its own opacity and
/// covariance heads on the transient feature.
#[derive(Clone, Debug, PartialEq)]
pub struct Decoders {
    pub opacity: MlpParams,
    pub covariance: MlpParams,
    pub reflectance: MlpParams,
    pub illumination: MlpParams,
    pub tone: MlpParams,
    pub transient_opacity: MlpParams,
    pub transient_covariance: MlpParams,
    pub residual: MlpParams,
}

impl Decoders {
    pub fn all(&self) -> [(&'static str, &MlpParams); 8] {
        [
            ("opacity", &self.opacity),
            ("covariance", &self.covariance),
            ("reflectance", &self.reflectance),
            ("illumination", &self.illumination),
            ("tone", &self.tone),
            ("transient_opacity", &self.transient_opacity),
            ("transient_covariance", &self.transient_covariance),
            ("residual", &self.residual),
        ]
    }
}

/// Where each scene quantity lives in the parameter store.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneLayout {
    pub positions: ParamId,
    pub scales: ParamId,
    pub offsets_intrinsic: ParamId,
    pub offsets_transient: ParamId,
    pub features_intrinsic: ParamId,
    pub features_transient: ParamId,
    pub embeddings: ParamId,
    pub decoders: Decoders,
}

struct DecoderDims {
    k: usize,
    f: usize,
    h: usize,
    e: usize,
}

impl DecoderDims {
    fn of(cfg: &SceneConfig) -> Self {
        DecoderDims {
            k: cfg.gaussians_per_anchor,
            f: cfg.feature_dim,
            h: cfg.hidden_dim,
            e: cfg.embedding_dim,
        }
    }

    // (name, group, in, out)
    fn decoders(&self) -> [(&'static str, ParamGroup, usize, usize); 8] {
        let geo = self.f + 4;
        [
            ("opacity", ParamGroup::OpacityDecoder, geo, self.k),
            ("covariance", ParamGroup::CovarianceDecoder, geo, 7 * self.k),
            ("reflectance", ParamGroup::DecompositionDecoder, self.f + 1, 3 * self.k),
            ("illumination", ParamGroup::DecompositionDecoder, geo, self.k),
            ("tone", ParamGroup::ToneMapper, 1 + self.f, 3),
            ("transient_opacity", ParamGroup::OpacityDecoder, geo, self.k),
            ("transient_covariance", ParamGroup::CovarianceDecoder, geo, 7 * self.k),
            ("residual", ParamGroup::DecompositionDecoder, geo + self.e, 3 * self.k),
        ]
    }
}

impl SceneLayout {
    fn register(store: &mut ParamStore, cfg: &SceneConfig, n_anchors: usize, n_views: usize) -> Self {
        let d = DecoderDims::of(cfg);
        let positions = store.zeros("anchor.position", ParamGroup::AnchorPosition, &[n_anchors, 3]);
        let scales = store.zeros("anchor.scale", ParamGroup::AnchorScale, &[n_anchors]);
        let offsets_intrinsic = store.zeros("offset.intrinsic", ParamGroup::OffsetIntrinsic, &[n_anchors, d.k, 3]);
        let offsets_transient = store.zeros("offset.transient", ParamGroup::OffsetTransient, &[n_anchors, d.k, 3]);
        let features_intrinsic = store.zeros("feature.intrinsic", ParamGroup::Feature, &[n_anchors, d.f]);
        let features_transient = store.zeros("feature.transient", ParamGroup::Feature, &[n_anchors, d.f]);
        let embeddings = store.zeros("embedding", ParamGroup::Embedding, &[n_views, d.e]);
        let mlps: Vec<MlpParams> = d
            .decoders()
            .iter()
            .map(|&(name, group, i, o)| MlpParams::register(store, &format!("mlp.{name}"), group, i, d.h, o))
            .collect();
        let mut it = mlps.into_iter();
        let mut next = || it.next().unwrap();
        SceneLayout {
            positions,
            scales,
            offsets_intrinsic,
            offsets_transient,
            features_intrinsic,
            features_transient,
            embeddings,
            decoders: Decoders {
                opacity: next(),
                covariance: next(),
                reflectance: next(),
                illumination: next(),
                tone: next(),
                transient_opacity: next(),
                transient_covariance: next(),
                residual: next(),
            },
        }
    }

    /// Rebinds a layout to a store loaded from disk, checking every shape.
    fn bind(store: &ParamStore, cfg: &SceneConfig, n_anchors: usize, n_views: usize) -> Result<Self> {
        let mut reference = ParamStore::new();
        let layout = SceneLayout::register(&mut reference, cfg, n_anchors, n_views);
        if reference.len() != store.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                reference.len(),
                store.len()
            )));
        }
        for (a, b) in reference.tensors().iter().zip(store.tensors()) {
            if a.name != b.name || a.shape != b.shape || a.group != b.group {
                return Err(Error::Checkpoint(format!(
                    "tensor mismatch: expected {} {:?}, found {} {:?}",
                    a.name, a.shape, b.name, b.shape
                )));
            }
        }
        Ok(layout)
    }
}

/// Owned copy of one anchor's parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Anchor {
    pub position: Vector3<f64>,
    pub scale: f64,
    pub offsets_intrinsic: Vec<Vector3<f64>>,
    pub offsets_transient: Vec<Vector3<f64>>,
    pub feature_intrinsic: Vec<f64>,
    pub feature_transient: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneModel {
    pub config: SceneConfig,
    pub voxel_resolution: f64,
    pub n_anchors: usize,
    pub n_views: usize,
    pub store: ParamStore,
    pub layout: SceneLayout,
}

impl SceneModel {
    /// Builds a scene on the given anchors with zero features, zero offsets,
    /// randomly initialized decoders and small random view embeddings.
    pub fn from_anchors(anchors: &AnchorSet, n_views: usize, cfg: &SceneConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        if anchors.is_empty() {
            return Err(Error::invalid("cannot build a scene without anchors"));
        }
        let n = anchors.len();
        let mut store = ParamStore::new();
        let layout = SceneLayout::register(&mut store, cfg, n, n_views);
        {
            let pos = store.get_mut(layout.positions);
            for (i, a) in anchors.anchors.iter().enumerate() {
                pos[3 * i..3 * i + 3].copy_from_slice(a.position.as_slice());
            }
        }
        {
            let scales = store.get_mut(layout.scales);
            for (s, a) in scales.iter_mut().zip(&anchors.anchors) {
                *s = a.scale;
            }
        }
        let mut scene = SceneModel {
            config: cfg.clone(),
            voxel_resolution: anchors.voxel_resolution,
            n_anchors: n,
            n_views,
            store,
            layout,
        };
        scene.init_decoders(seed);
        Ok(scene)
    }

    fn init_decoders(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = self.config.gaussians_per_anchor;
        let store = &mut self.store;
        let dec = &self.layout.decoders;
        for (_, mlp) in dec.all() {
            mlp.init_uniform(store, &mut rng);
        }
        let scale_bias = softplus_inv(self.config.init_scale);
        for cov in [&dec.covariance, &dec.transient_covariance] {
            store.get_mut(cov.w2).iter_mut().for_each(|w| *w *= 0.1);
            let b2 = store.get_mut(cov.b2);
            for i in 0..k {
                b2[7 * i..7 * i + 3].fill(scale_bias);
                b2[7 * i + 3..7 * i + 7].copy_from_slice(&[1.0, 0.0, 0.0, 0.0]);
            }
        }
        // residual starts silent
        store.get_mut(dec.residual.w2).fill(0.0);
        store.get_mut(dec.residual.b2).fill(0.0);
        for e in store.get_mut(self.layout.embeddings) {
            *e = rng.random_range(-0.1..0.1);
        }
    }

    /// Rebuilds a scene around an existing store (checkpoint loading).
    pub fn from_store(
        store: ParamStore,
        config: SceneConfig,
        voxel_resolution: f64,
        n_anchors: usize,
        n_views: usize,
    ) -> Result<Self> {
        config.validate()?;
        let layout = SceneLayout::bind(&store, &config, n_anchors, n_views)?;
        Ok(SceneModel {
            config,
            voxel_resolution,
            n_anchors,
            n_views,
            store,
            layout,
        })
    }

    pub fn k(&self) -> usize {
        self.config.gaussians_per_anchor
    }

    pub fn position(&self, v: usize) -> Vector3<f64> {
        Vector3::from_column_slice(&self.store.get(self.layout.positions)[3 * v..3 * v + 3])
    }

    pub fn scale(&self, v: usize) -> f64 {
        self.store.get(self.layout.scales)[v]
    }

    pub fn feature_intrinsic(&self, v: usize) -> &[f64] {
        let f = self.config.feature_dim;
        &self.store.get(self.layout.features_intrinsic)[v * f..(v + 1) * f]
    }

    pub fn feature_transient(&self, v: usize) -> &[f64] {
        let f = self.config.feature_dim;
        &self.store.get(self.layout.features_transient)[v * f..(v + 1) * f]
    }

    pub fn offsets_intrinsic(&self, v: usize) -> &[f64] {
        let n = 3 * self.k();
        &self.store.get(self.layout.offsets_intrinsic)[v * n..(v + 1) * n]
    }

    pub fn offsets_transient(&self, v: usize) -> &[f64] {
        let n = 3 * self.k();
        &self.store.get(self.layout.offsets_transient)[v * n..(v + 1) * n]
    }

    pub fn embedding(&self, view: usize) -> Result<&[f64]> {
        if view >= self.n_views {
            return Err(Error::invalid(format!(
                "no embedding for view {view} (scene has {} training views)",
                self.n_views
            )));
        }
        let e = self.config.embedding_dim;
        Ok(&self.store.get(self.layout.embeddings)[view * e..(view + 1) * e])
    }

    pub fn anchor(&self, v: usize) -> Anchor {
        let to_vecs = |s: &[f64]| s.chunks(3).map(Vector3::from_column_slice).collect();
        Anchor {
            position: self.position(v),
            scale: self.scale(v),
            offsets_intrinsic: to_vecs(self.offsets_intrinsic(v)),
            offsets_transient: to_vecs(self.offsets_transient(v)),
            feature_intrinsic: self.feature_intrinsic(v).to_vec(),
            feature_transient: self.feature_transient(v).to_vec(),
        }
    }

    /// Gaussian centers `x_v + O_i * l_v` of the intrinsic branch.
    pub fn decode_positions(&self, v: usize) -> Vec<Vector3<f64>> {
        decode::positions(&self.position(v), self.scale(v), self.offsets_intrinsic(v))
    }

    pub fn decode_opacity(&self, v: usize, cam: &Camera) -> Vec<f64> {
        self.decode_intrinsic(v, cam, false)
            .intrinsic
            .gaussians
            .iter()
            .map(|g| g.alpha)
            .collect()
    }

    pub fn decode_reflectance(&self, v: usize, cam: &Camera) -> Vec<[f64; 3]> {
        self.decode_intrinsic(v, cam, false)
            .intrinsic
            .payload
            .chunks(3)
            .map(|c| [c[0], c[1], c[2]])
            .collect()
    }

    pub fn decode_illumination(&self, v: usize, cam: &Camera) -> Vec<f64> {
        self.decode_intrinsic(v, cam, false).illumination
    }

    pub fn decode_enhanced_illumination(&self, v: usize, cam: &Camera) -> Vec<[f64; 3]> {
        self.decode_intrinsic(v, cam, true)
            .enhanced
            .chunks(3)
            .map(|c| [c[0], c[1], c[2]])
            .collect()
    }

    pub fn decode_residual(&self, v: usize, cam: &Camera, view: usize) -> Result<Vec<[f64; 3]>> {
        let d = decode_anchor(
            self,
            v,
            &cam.center(),
            &DecodeRequest {
                enhanced: false,
                transient: Some(view),
            },
        )?;
        let t = d.transient.expect("transient requested");
        Ok(t.payload.chunks(3).map(|c| [c[0], c[1], c[2]]).collect())
    }

    fn decode_intrinsic(&self, v: usize, cam: &Camera, enhanced: bool) -> AnchorDecode {
        decode_anchor(
            self,
            v,
            &cam.center(),
            &DecodeRequest {
                enhanced,
                transient: None,
            },
        )
        .expect("intrinsic decoding cannot fail")
    }
}

impl Parameterized for SceneModel {
    fn params(&self) -> &ParamStore {
        &self.store
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }
}
