//! Differentiable splatting of a decoded scene into per-view component maps.

mod project;
mod raster;

use rayon::prelude::*;

pub use project::{project_gaussian, project_gaussian_backward, Splat2D, DILATION, EXTENT_SIGMAS, NEAR_PLANE};
pub use raster::{
    composite, composite_trace, rasterize, rasterize_backward, Contribution, RasterGrads, RasterOutput, RasterPlan,
    SplatLayer, SIGMA_MAX, TILE, T_MIN,
};

use crate::diff::Gradients;
use crate::error::{Error, Result};
use crate::geometry::{Camera, Image};
use crate::scene::{
    decode_anchor, decode_anchor_backward, retone, AnchorDecode, BranchDecode, BranchGrads, DecodeRequest, SceneModel,
};

/// Anchors per gradient buffer in the parallel decode backward.
const ANCHOR_CHUNK: usize = 32;

// intrinsic payload layout
const CH_R: usize = 0;
const CH_S: usize = 3;
const CH_DEPTH: usize = 4;
const CH_ENH: usize = 5;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RenderOptions {
    /// Render the enhanced illumination map.
    pub enhanced: bool,
    /// Training view whose embedding drives the residual map.
    pub view: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComponentMaps {
    pub reflectance: Image,
    pub illumination: Image,
    /// Present only when a training view was given.
    pub residual: Option<Image>,
    /// Present only when enhanced rendering was requested.
    pub enhanced: Option<Image>,
    pub depth: Image,
    pub alpha: Image,
}

impl ComponentMaps {
    pub fn width(&self) -> usize {
        self.alpha.width
    }

    pub fn height(&self) -> usize {
        self.alpha.height
    }
}

/// `R ⊙ S + Rs`, unclamped.
pub fn compose_low(maps: &ComponentMaps) -> Image {
    let mut out = compose_intrinsic(maps);
    if let Some(rs) = &maps.residual {
        out.data.iter_mut().zip(&rs.data).for_each(|(o, r)| *o += r);
    }
    out
}

/// `R ⊙ S` without the residual.
pub fn compose_intrinsic(maps: &ComponentMaps) -> Image {
    let r = &maps.reflectance;
    Image::from_fn(r.width, r.height, 3, |x, y, c| {
        r.get(x, y, c) * maps.illumination.get(x, y, 0)
    })
}

/// `R ⊙ S̃`, unclamped. Requires the enhanced map.
pub fn compose_enhanced(maps: &ComponentMaps) -> Option<Image> {
    let e = maps.enhanced.as_ref()?;
    let r = &maps.reflectance;
    Some(Image::from_fn(r.width, r.height, 3, |x, y, c| {
        r.get(x, y, c) * e.get(x, y, c)
    }))
}

/// Adjoints of every map, row-major with the map's channel count.
#[derive(Clone, Debug, PartialEq)]
pub struct MapGrads {
    pub reflectance: Vec<f64>,
    pub illumination: Vec<f64>,
    pub residual: Vec<f64>,
    pub enhanced: Vec<f64>,
    pub depth: Vec<f64>,
    pub alpha: Vec<f64>,
}

impl MapGrads {
    pub fn zeros(width: usize, height: usize) -> Self {
        let n = width * height;
        MapGrads {
            reflectance: vec![0.0; 3 * n],
            illumination: vec![0.0; n],
            residual: vec![0.0; 3 * n],
            enhanced: vec![0.0; 3 * n],
            depth: vec![0.0; n],
            alpha: vec![0.0; n],
        }
    }

    pub fn is_zero(&self) -> bool {
        [
            &self.reflectance,
            &self.illumination,
            &self.residual,
            &self.enhanced,
            &self.depth,
            &self.alpha,
        ]
        .iter()
        .all(|v| v.iter().all(|&x| x == 0.0))
    }
}

#[derive(Clone, Debug)]
struct Layer {
    splats: Vec<Splat2D>,
    opacity: Vec<f64>,
    payload: Vec<f64>,
    channels: usize,
    /// `(anchor, gaussian)` per splat.
    source: Vec<(usize, usize)>,
    plan: RasterPlan,
    output: RasterOutput,
}

impl Layer {
    fn view(&self) -> SplatLayer<'_> {
        SplatLayer {
            splats: &self.splats,
            opacity: &self.opacity,
            payload: &self.payload,
            channels: self.channels,
        }
    }
}

fn build_layer(
    cam: &Camera,
    k: usize,
    branches: Vec<&BranchDecode>,
    channels: usize,
    payload_of: impl Fn(usize, usize, f64, &mut Vec<f64>),
) -> Layer {
    let mut layer = Layer {
        splats: Vec::new(),
        opacity: Vec::new(),
        payload: Vec::new(),
        channels,
        source: Vec::new(),
        plan: RasterPlan::new(&[], cam.width, cam.height),
        output: RasterOutput {
            color: Vec::new(),
            transmittance: Vec::new(),
        },
    };
    for (a, branch) in branches.iter().enumerate() {
        for (i, g) in branch.gaussians.iter().enumerate() {
            if let Some(s) = project_gaussian(cam, &g.mean, &g.cov, a * k + i) {
                payload_of(a, i, s.depth, &mut layer.payload);
                layer.opacity.push(g.alpha);
                layer.splats.push(s);
                layer.source.push((a, i));
            }
        }
    }
    layer.plan = RasterPlan::new(&layer.splats, cam.width, cam.height);
    layer.output = rasterize(&layer.view(), &layer.plan);
    layer
}

/// Forward state kept for the reverse pass.
#[derive(Clone, Debug)]
pub struct RenderState {
    pub options: RenderOptions,
    decodes: Vec<AnchorDecode>,
    intrinsic: Layer,
    transient: Option<Layer>,
}

impl RenderState {
    pub fn decodes(&self) -> &[AnchorDecode] {
        &self.decodes
    }

    pub fn splat_count(&self) -> usize {
        self.intrinsic.splats.len()
    }
}

pub fn render_components(scene: &SceneModel, cam: &Camera, opts: &RenderOptions) -> Result<ComponentMaps> {
    render(scene, cam, opts).map(|(maps, _)| maps)
}

pub fn render(scene: &SceneModel, cam: &Camera, opts: &RenderOptions) -> Result<(ComponentMaps, RenderState)> {
    let center = cam.center();
    let req = DecodeRequest {
        enhanced: opts.enhanced,
        transient: opts.view,
    };
    if let Some(v) = opts.view {
        scene.embedding(v)?;
    }
    let decodes: Vec<AnchorDecode> = (0..scene.n_anchors)
        .into_par_iter()
        .map(|v| decode_anchor(scene, v, &center, &req))
        .collect::<Result<_>>()?;
    let k = scene.k();
    let channels = if opts.enhanced { CH_ENH + 3 } else { CH_ENH };
    let intrinsic = build_layer(
        cam,
        k,
        decodes.iter().map(|d| &d.intrinsic).collect(),
        channels,
        |a, i, depth, out| {
            let d = &decodes[a];
            out.extend_from_slice(&d.intrinsic.payload[3 * i..3 * i + 3]);
            out.push(d.illumination[i]);
            out.push(depth);
            if opts.enhanced {
                out.extend_from_slice(&d.enhanced[3 * i..3 * i + 3]);
            }
        },
    );
    let transient = opts.view.map(|_| {
        build_layer(
            cam,
            k,
            decodes.iter().map(|d| d.transient.as_ref().unwrap()).collect(),
            3,
            |a, i, _, out| out.extend_from_slice(&decodes[a].transient.as_ref().unwrap().payload[3 * i..3 * i + 3]),
        )
    });

    let (w, h) = (cam.width, cam.height);
    let pick = |layer: &Layer, start: usize, count: usize| {
        let c = layer.channels;
        let data = (0..w * h)
            .flat_map(|p| layer.output.color[p * c + start..p * c + start + count].iter().copied())
            .collect();
        Image::from_data(w, h, count, data).map_err(|_| Error::Numerical("render produced non-finite values".into()))
    };
    let maps = ComponentMaps {
        reflectance: pick(&intrinsic, CH_R, 3)?,
        illumination: pick(&intrinsic, CH_S, 1)?,
        residual: transient.as_ref().map(|t| pick(t, 0, 3)).transpose()?,
        enhanced: opts.enhanced.then(|| pick(&intrinsic, CH_ENH, 3)).transpose()?,
        depth: pick(&intrinsic, CH_DEPTH, 1)?,
        alpha: pick_alpha(w, h, &intrinsic.output.transmittance)?,
    };
    Ok((
        maps,
        RenderState {
            options: *opts,
            decodes,
            intrinsic,
            transient,
        },
    ))
}

fn pick_alpha(w: usize, h: usize, transmittance: &[f64]) -> Result<Image> {
    Image::from_data(w, h, 1, transmittance.iter().map(|t| 1.0 - t).collect())
        .map_err(|_| Error::Numerical("render produced non-finite values".into()))
}

/// Enhanced illumination map with everything except the tone mapper's
/// weights frozen at `state`: splat geometry, compositing weights and the
/// tone mapper's inputs. This is the function whose gradient
/// [`render_backward`] returns for the enhanced channels.
pub fn recomposite_enhanced(scene: &SceneModel, state: &RenderState) -> Result<Image> {
    if !state.options.enhanced {
        return Err(Error::invalid("render state has no enhanced channels"));
    }
    let mut layer = state.intrinsic.clone();
    let c = layer.channels;
    for (s, &(a, i)) in layer.source.iter().enumerate() {
        let out = retone(scene, &state.decodes[a], i);
        layer.payload[s * c + CH_ENH..s * c + CH_ENH + 3].copy_from_slice(&out);
    }
    layer.output = rasterize(&layer.view(), &layer.plan);
    let (w, h) = (layer.plan.width(), layer.plan.height());
    let data = (0..w * h)
        .flat_map(|p| layer.output.color[p * c + CH_ENH..p * c + CH_ENH + 3].iter().copied())
        .collect();
    Image::from_data(w, h, 3, data).map_err(|_| Error::Numerical("render produced non-finite values".into()))
}

/// Splat-level gradients routed back onto per-anchor decode adjoints.
fn scatter_layer(
    cam: &Camera,
    layer: &Layer,
    d_color: &[f64],
    d_alpha: Option<&[f64]>,
    geometry_channels: usize,
    branches: &[&BranchDecode],
    out: &mut [BranchGrads],
    route_payload: impl Fn(&[f64], &mut BranchGrads, usize) -> f64,
) {
    let g = rasterize_backward(
        &layer.view(),
        &layer.plan,
        &layer.output,
        d_color,
        d_alpha,
        geometry_channels,
    );
    let d_cov2d = g.d_cov2d(&layer.splats);
    let c = layer.channels;
    for (s, &(a, i)) in layer.source.iter().enumerate() {
        let gauss = &branches[a].gaussians[i];
        let bg = &mut out[a];
        let d_depth = route_payload(&g.d_payload[s * c..(s + 1) * c], bg, i);
        let (d_mu, d_cov) =
            project_gaussian_backward(cam, &gauss.mean, &gauss.cov, &g.d_mean2d[s], &d_cov2d[s], d_depth);
        bg.d_mean[i] += d_mu;
        bg.d_cov[i] += d_cov;
        bg.d_alpha[i] += g.d_opacity[s];
    }
}

/// Reverse pass from map adjoints to every scene parameter.
pub fn render_backward(scene: &SceneModel, cam: &Camera, state: &RenderState, grads: &MapGrads) -> Gradients {
    let (w, h) = (cam.width, cam.height);
    let n = w * h;
    let k = scene.k();
    let mut intrinsic = vec![BranchGrads::zeros(k); scene.n_anchors];
    let enhanced = state.options.enhanced;

    let c = state.intrinsic.channels;
    let mut d_color = vec![0.0; n * c];
    for p in 0..n {
        let row = &mut d_color[p * c..(p + 1) * c];
        row[CH_R..CH_R + 3].copy_from_slice(&grads.reflectance[3 * p..3 * p + 3]);
        row[CH_S] = grads.illumination[p];
        row[CH_DEPTH] = grads.depth[p];
        if enhanced {
            row[CH_ENH..CH_ENH + 3].copy_from_slice(&grads.enhanced[3 * p..3 * p + 3]);
        }
    }
    let branches: Vec<&BranchDecode> = state.decodes.iter().map(|d| &d.intrinsic).collect();
    scatter_layer(
        cam,
        &state.intrinsic,
        &d_color,
        Some(&grads.alpha),
        CH_ENH,
        &branches,
        &mut intrinsic,
        |dp, bg, i| {
            for ch in 0..3 {
                bg.d_payload[3 * i + ch] += dp[CH_R + ch];
            }
            bg.d_illumination[i] += dp[CH_S];
            if enhanced {
                for ch in 0..3 {
                    bg.d_enhanced[3 * i + ch] += dp[CH_ENH + ch];
                }
            }
            dp[CH_DEPTH]
        },
    );

    let transient = state.transient.as_ref().map(|layer| {
        let mut tg = vec![BranchGrads::zeros(k); scene.n_anchors];
        let branches: Vec<&BranchDecode> = state.decodes.iter().map(|d| d.transient.as_ref().unwrap()).collect();
        scatter_layer(cam, layer, &grads.residual, None, 3, &branches, &mut tg, |dp, bg, i| {
            for ch in 0..3 {
                bg.d_payload[3 * i + ch] += dp[ch];
            }
            0.0
        });
        tg
    });

    let view = state.options.view;
    let partials: Vec<Gradients> = (0..scene.n_anchors)
        .collect::<Vec<_>>()
        .par_chunks(ANCHOR_CHUNK)
        .map(|chunk| {
            let mut g = scene.store.zero_grads();
            for &v in chunk {
                let tg = transient.as_ref().map(|t| &t[v]);
                if intrinsic[v].is_zero() && tg.is_none_or(|t| t.is_zero()) {
                    continue;
                }
                decode_anchor_backward(scene, v, view, &state.decodes[v], &intrinsic[v], tg, &mut g);
            }
            g
        })
        .collect();
    let mut total = scene.store.zero_grads();
    for p in &partials {
        total.add_assign(p);
    }
    total
}
