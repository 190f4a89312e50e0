use nalgebra::{Matrix3, Vector3, Vector4};

use super::covariance::{build_covariance, build_covariance_backward};
use super::mlp::{sigmoid, softplus, MlpParams};
use super::SceneModel;
use crate::diff::Gradients;
use crate::error::Result;

/// Anchor-to-camera distance and unit direction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ViewGeometry {
    pub distance: f64,
    pub direction: Vector3<f64>,
    /// The camera sits exactly on the anchor; direction defaults to +Z and
    /// carries no gradient.
    pub degenerate: bool,
}

pub fn view_geometry(anchor: &Vector3<f64>, camera_center: &Vector3<f64>) -> ViewGeometry {
    let diff = anchor - camera_center;
    let distance = diff.norm();
    if distance == 0.0 {
        log::debug!("camera center coincides with an anchor; using +Z view direction");
        return ViewGeometry {
            distance,
            direction: Vector3::z(),
            degenerate: true,
        };
    }
    ViewGeometry {
        distance,
        direction: diff / distance,
        degenerate: false,
    }
}

pub(crate) fn positions(position: &Vector3<f64>, scale: f64, offsets: &[f64]) -> Vec<Vector3<f64>> {
    offsets
        .chunks(3)
        .map(|o| position + Vector3::new(o[0], o[1], o[2]) * scale)
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecodeRequest {
    /// Also run the tone mapper.
    pub enhanced: bool,
    /// Decode the transient branch with this training view's embedding.
    pub transient: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianGeometry {
    pub mean: Vector3<f64>,
    pub scale: Vector3<f64>,
    pub quat_raw: Vector4<f64>,
    pub quat: Vector4<f64>,
    pub cov: Matrix3<f64>,
    pub alpha: f64,
}

#[derive(Clone, Debug, PartialEq)]
struct MlpCache {
    hidden: Vec<f64>,
    raw: Vec<f64>,
}

impl MlpCache {
    fn run(mlp: &MlpParams, scene: &SceneModel, input: &[f64]) -> Self {
        let mut hidden = vec![0.0; mlp.hidden];
        let mut raw = vec![0.0; mlp.out_dim];
        mlp.forward(&scene.store, input, &mut hidden, &mut raw);
        MlpCache { hidden, raw }
    }
}

/// One branch of one anchor: geometry for its `k` Gaussians plus a
/// three-channel payload (reflectance or residual).
#[derive(Clone, Debug, PartialEq)]
pub struct BranchDecode {
    /// `[feature, distance, direction]`
    pub geo_input: Vec<f64>,
    opacity: MlpCache,
    covariance: MlpCache,
    pub gaussians: Vec<GaussianGeometry>,
    payload_input: Vec<f64>,
    payload_mlp: MlpCache,
    /// `3k` values, Gaussian-major.
    pub payload: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnchorDecode {
    pub geometry: ViewGeometry,
    pub intrinsic: BranchDecode,
    illumination_mlp: MlpCache,
    /// Per-Gaussian scalar illumination.
    pub illumination: Vec<f64>,
    tone: Vec<MlpCache>,
    /// Per-Gaussian enhanced illumination, `3k` values; empty unless requested.
    pub enhanced: Vec<f64>,
    pub transient: Option<BranchDecode>,
}

/// `[S_i, intrinsic feature]` as recorded when `decode` was produced.
fn tone_input(decode: &AnchorDecode, i: usize, f: usize) -> Vec<f64> {
    let mut input = Vec::with_capacity(1 + f);
    input.push(decode.illumination[i]);
    input.extend_from_slice(&decode.intrinsic.geo_input[..f]);
    input
}

/// Tone-mapper output of Gaussian `i` for the inputs recorded in `decode`
/// and the tone-mapper weights currently in `scene`.
pub fn retone(scene: &SceneModel, decode: &AnchorDecode, i: usize) -> [f64; 3] {
    let f = scene.config.feature_dim;
    let cache = MlpCache::run(&scene.layout.decoders.tone, scene, &tone_input(decode, i, f));
    [softplus(cache.raw[0]), softplus(cache.raw[1]), softplus(cache.raw[2])]
}

/// Upstream gradients for one branch of one anchor.
#[derive(Clone, Debug, PartialEq)]
pub struct BranchGrads {
    pub d_mean: Vec<Vector3<f64>>,
    pub d_cov: Vec<Matrix3<f64>>,
    pub d_alpha: Vec<f64>,
    pub d_payload: Vec<f64>,
    /// Intrinsic branch only.
    pub d_illumination: Vec<f64>,
    /// Intrinsic branch only, and only when enhanced decoding ran.
    pub d_enhanced: Vec<f64>,
}

impl BranchGrads {
    pub fn zeros(k: usize) -> Self {
        BranchGrads {
            d_mean: vec![Vector3::zeros(); k],
            d_cov: vec![Matrix3::zeros(); k],
            d_alpha: vec![0.0; k],
            d_payload: vec![0.0; 3 * k],
            d_illumination: vec![0.0; k],
            d_enhanced: vec![0.0; 3 * k],
        }
    }

    pub fn is_zero(&self) -> bool {
        self.d_mean.iter().all(|m| m.iter().all(|&x| x == 0.0))
            && self.d_cov.iter().all(|m| m.iter().all(|&x| x == 0.0))
            && [&self.d_alpha, &self.d_payload, &self.d_illumination, &self.d_enhanced]
                .iter()
                .all(|v| v.iter().all(|&x| x == 0.0))
    }
}

fn geometry_input(feature: &[f64], geo: &ViewGeometry) -> Vec<f64> {
    let mut input = Vec::with_capacity(feature.len() + 4);
    input.extend_from_slice(feature);
    input.push(geo.distance);
    input.extend_from_slice(geo.direction.as_slice());
    input
}

fn decode_gaussians(
    centers: Vec<Vector3<f64>>,
    scale: f64,
    opacity: &MlpCache,
    covariance: &MlpCache,
) -> Vec<GaussianGeometry> {
    centers
        .into_iter()
        .enumerate()
        .map(|(i, mean)| {
            let c = &covariance.raw[7 * i..7 * i + 7];
            let s = Vector3::new(softplus(c[0]), softplus(c[1]), softplus(c[2])) * scale;
            let quat_raw = Vector4::new(c[3], c[4], c[5], c[6]);
            let norm = quat_raw.norm();
            let quat = if norm > 0.0 {
                quat_raw / norm
            } else {
                Vector4::new(1.0, 0.0, 0.0, 0.0)
            };
            GaussianGeometry {
                mean,
                scale: s,
                quat_raw,
                quat,
                cov: build_covariance(&s, &quat),
                alpha: sigmoid(opacity.raw[i]),
            }
        })
        .collect()
}

/// Decodes one anchor as seen from `camera_center`.
pub fn decode_anchor(
    scene: &SceneModel,
    v: usize,
    camera_center: &Vector3<f64>,
    req: &DecodeRequest,
) -> Result<AnchorDecode> {
    let dec = &scene.layout.decoders;
    let position = scene.position(v);
    let scale = scene.scale(v);
    let geometry = view_geometry(&position, camera_center);

    let feature = scene.feature_intrinsic(v);
    let geo_input = geometry_input(feature, &geometry);
    let opacity = MlpCache::run(&dec.opacity, scene, &geo_input);
    let covariance = MlpCache::run(&dec.covariance, scene, &geo_input);
    let centers = positions(&position, scale, scene.offsets_intrinsic(v));
    let gaussians = decode_gaussians(centers, scale, &opacity, &covariance);
    let mut payload_input = feature.to_vec();
    payload_input.push(geometry.distance);
    let payload_mlp = MlpCache::run(&dec.reflectance, scene, &payload_input);
    let payload = payload_mlp.raw.iter().map(|&x| sigmoid(x)).collect();
    let illumination_mlp = MlpCache::run(&dec.illumination, scene, &geo_input);
    let illumination: Vec<f64> = illumination_mlp.raw.iter().map(|&x| softplus(x)).collect();

    let mut tone = Vec::new();
    let mut enhanced = Vec::new();
    if req.enhanced {
        for &s in &illumination {
            let mut input = Vec::with_capacity(1 + feature.len());
            input.push(s);
            input.extend_from_slice(feature);
            let cache = MlpCache::run(&dec.tone, scene, &input);
            enhanced.extend(cache.raw.iter().map(|&x| softplus(x)));
            tone.push(cache);
        }
    }

    let intrinsic = BranchDecode {
        geo_input,
        opacity,
        covariance,
        gaussians,
        payload_input,
        payload_mlp,
        payload,
    };

    let transient = match req.transient {
        None => None,
        Some(view) => {
            let embedding = scene.embedding(view)?;
            let geo_input = geometry_input(scene.feature_transient(v), &geometry);
            let opacity = MlpCache::run(&dec.transient_opacity, scene, &geo_input);
            let covariance = MlpCache::run(&dec.transient_covariance, scene, &geo_input);
            let centers = positions(&position, scale, scene.offsets_transient(v));
            let gaussians = decode_gaussians(centers, scale, &opacity, &covariance);
            let mut payload_input = geo_input.clone();
            payload_input.extend_from_slice(embedding);
            let payload_mlp = MlpCache::run(&dec.residual, scene, &payload_input);
            let payload = payload_mlp.raw.iter().map(|&x| x.tanh()).collect();
            Some(BranchDecode {
                geo_input,
                opacity,
                covariance,
                gaussians,
                payload_input,
                payload_mlp,
                payload,
            })
        }
    };

    Ok(AnchorDecode {
        geometry,
        intrinsic,
        illumination_mlp,
        illumination,
        tone,
        enhanced,
        transient,
    })
}

struct BranchMlps<'a> {
    opacity: &'a MlpParams,
    covariance: &'a MlpParams,
}

/// Pushes geometry gradients of one branch through the opacity and
/// covariance heads. Returns the gradient on the branch's geometry input and
/// the summed gradient on the Gaussian centers.
fn geometry_backward(
    scene: &SceneModel,
    mlps: BranchMlps,
    branch: &BranchDecode,
    g: &BranchGrads,
    scale: f64,
    d_offsets: &mut [f64],
    grads: &mut Gradients,
) -> (Vec<f64>, Vector3<f64>) {
    let k = branch.gaussians.len();
    let mut d_raw_opacity = vec![0.0; k];
    let mut d_raw_cov = vec![0.0; 7 * k];
    let mut d_center = Vector3::zeros();
    for (i, gs) in branch.gaussians.iter().enumerate() {
        d_center += g.d_mean[i];
        for a in 0..3 {
            d_offsets[3 * i + a] += g.d_mean[i][a] * scale;
        }
        d_raw_opacity[i] = g.d_alpha[i] * gs.alpha * (1.0 - gs.alpha);
        if g.d_cov[i].iter().all(|&x| x == 0.0) {
            continue;
        }
        let (d_scale, d_quat) = build_covariance_backward(&gs.scale, &gs.quat, &g.d_cov[i]);
        let raw = &branch.covariance.raw[7 * i..7 * i + 7];
        for a in 0..3 {
            d_raw_cov[7 * i + a] = d_scale[a] * scale * sigmoid(raw[a]);
        }
        let norm = gs.quat_raw.norm();
        if norm > 0.0 {
            let d_raw_quat = (d_quat - gs.quat * gs.quat.dot(&d_quat)) / norm;
            d_raw_cov[7 * i + 3..7 * i + 7].copy_from_slice(d_raw_quat.as_slice());
        }
    }
    let mut d_input = vec![0.0; branch.geo_input.len()];
    mlps.opacity.backward(
        &scene.store,
        &branch.geo_input,
        &branch.opacity.hidden,
        &d_raw_opacity,
        grads,
        Some(&mut d_input),
    );
    mlps.covariance.backward(
        &scene.store,
        &branch.geo_input,
        &branch.covariance.hidden,
        &d_raw_cov,
        grads,
        Some(&mut d_input),
    );
    (d_input, d_center)
}

/// Accumulates parameter gradients for one anchor into `grads`.
pub fn decode_anchor_backward(
    scene: &SceneModel,
    v: usize,
    view: Option<usize>,
    decode: &AnchorDecode,
    intrinsic: &BranchGrads,
    transient: Option<&BranchGrads>,
    grads: &mut Gradients,
) {
    let dec = &scene.layout.decoders;
    let layout = &scene.layout;
    let k = scene.k();
    let f = scene.config.feature_dim;
    let scale = scene.scale(v);

    let mut d_offsets = vec![0.0; 3 * k];
    let (mut d_geo, mut d_position) = geometry_backward(
        scene,
        BranchMlps {
            opacity: &dec.opacity,
            covariance: &dec.covariance,
        },
        &decode.intrinsic,
        intrinsic,
        scale,
        &mut d_offsets,
        grads,
    );
    grads.get_mut(layout.offsets_intrinsic)[v * 3 * k..(v + 1) * 3 * k]
        .iter_mut()
        .zip(&d_offsets)
        .for_each(|(g, d)| *g += d);

    // reflectance decoder sees [feature, distance]
    let d_raw_refl: Vec<f64> = decode
        .intrinsic
        .payload
        .iter()
        .zip(&intrinsic.d_payload)
        .map(|(&r, &d)| d * r * (1.0 - r))
        .collect();
    let mut d_dist_input = vec![0.0; f + 1];
    dec.reflectance.backward(
        &scene.store,
        &decode.intrinsic.payload_input,
        &decode.intrinsic.payload_mlp.hidden,
        &d_raw_refl,
        grads,
        Some(&mut d_dist_input),
    );
    for a in 0..=f {
        d_geo[a] += d_dist_input[a];
    }

    // the tone mapper's inputs are held fixed: the enhancement term only trains its weights
    for (i, cache) in decode.tone.iter().enumerate() {
        let d_enh = &intrinsic.d_enhanced[3 * i..3 * i + 3];
        if d_enh.iter().all(|&x| x == 0.0) {
            continue;
        }
        let d_raw: Vec<f64> = cache.raw.iter().zip(d_enh).map(|(&x, &d)| d * sigmoid(x)).collect();
        dec.tone.backward(
            &scene.store,
            &tone_input(decode, i, f),
            &cache.hidden,
            &d_raw,
            grads,
            None,
        );
    }
    let d_illum = &intrinsic.d_illumination;
    let d_raw_illum: Vec<f64> = decode
        .illumination_mlp
        .raw
        .iter()
        .zip(d_illum)
        .map(|(&x, &d)| d * sigmoid(x))
        .collect();
    dec.illumination.backward(
        &scene.store,
        &decode.intrinsic.geo_input,
        &decode.illumination_mlp.hidden,
        &d_raw_illum,
        grads,
        Some(&mut d_geo),
    );
    grads.get_mut(layout.features_intrinsic)[v * f..(v + 1) * f]
        .iter_mut()
        .zip(&d_geo[..f])
        .for_each(|(g, d)| *g += d);
    let mut d_distance = d_geo[f];
    let mut d_direction = Vector3::new(d_geo[f + 1], d_geo[f + 2], d_geo[f + 3]);

    if let (Some(t), Some(tg)) = (&decode.transient, transient) {
        let view = view.expect("transient gradients need a view index");
        d_offsets.fill(0.0);
        let (mut d_tgeo, d_tcenter) = geometry_backward(
            scene,
            BranchMlps {
                opacity: &dec.transient_opacity,
                covariance: &dec.transient_covariance,
            },
            t,
            tg,
            scale,
            &mut d_offsets,
            grads,
        );
        d_position += d_tcenter;
        grads.get_mut(layout.offsets_transient)[v * 3 * k..(v + 1) * 3 * k]
            .iter_mut()
            .zip(&d_offsets)
            .for_each(|(g, d)| *g += d);
        let d_raw_res: Vec<f64> = t
            .payload
            .iter()
            .zip(&tg.d_payload)
            .map(|(&r, &d)| d * (1.0 - r * r))
            .collect();
        let mut d_res_input = vec![0.0; t.payload_input.len()];
        dec.residual.backward(
            &scene.store,
            &t.payload_input,
            &t.payload_mlp.hidden,
            &d_raw_res,
            grads,
            Some(&mut d_res_input),
        );
        for a in 0..f + 4 {
            d_tgeo[a] += d_res_input[a];
        }
        let e = scene.config.embedding_dim;
        grads.get_mut(layout.embeddings)[view * e..(view + 1) * e]
            .iter_mut()
            .zip(&d_res_input[f + 4..])
            .for_each(|(g, d)| *g += d);
        grads.get_mut(layout.features_transient)[v * f..(v + 1) * f]
            .iter_mut()
            .zip(&d_tgeo[..f])
            .for_each(|(g, d)| *g += d);
        d_distance += d_tgeo[f];
        d_direction += Vector3::new(d_tgeo[f + 1], d_tgeo[f + 2], d_tgeo[f + 3]);
    }

    let geo = &decode.geometry;
    if !geo.degenerate {
        let dir = geo.direction;
        d_position += dir * d_distance + (d_direction - dir * dir.dot(&d_direction)) / geo.distance;
    }
    grads.get_mut(layout.positions)[3 * v..3 * v + 3]
        .iter_mut()
        .zip(d_position.iter())
        .for_each(|(g, d)| *g += d);
}
