//! Small deterministic scenes shared by unit, integration and acceptance
//! tests.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diff::Gradients;
use crate::error::Result;
use crate::geometry::{Camera, Image};
use crate::llgim::{AnchorSet, CandidateAnchor};
use crate::losses::{total_loss, LossConfig, StopGrad, ViewTargets};
use crate::render::{recomposite_enhanced, render, render_backward, RenderOptions, RenderState};
use crate::scene::{SceneConfig, SceneModel};

/// Two anchors with four Gaussians each, three 16×16 views, every parameter
/// randomized so that all decoders carry gradient.
pub struct GradientFixture {
    pub scene: SceneModel,
    pub cameras: Vec<Camera>,
    pub targets: Vec<ViewTargets>,
    pub loss: LossConfig,
    /// Iteration fed to the schedule; past the enhancement start.
    pub iter: usize,
}

/// Stop-gradient values of one view taken at a base point.
pub struct PinnedView {
    pub stop: StopGrad,
    pub state: RenderState,
}

pub fn fixture_config() -> SceneConfig {
    SceneConfig {
        gaussians_per_anchor: 4,
        feature_dim: 6,
        hidden_dim: 8,
        embedding_dim: 4,
        init_scale: 0.5,
    }
}

/// Cameras on a ring of radius `radius` around the origin, looking at it.
pub fn ring_cameras(n: usize, radius: f64, height: f64, focal: f64, size: (usize, usize)) -> Vec<Camera> {
    (0..n)
        .map(|i| {
            let phi = -0.5 + i as f64 * 0.5;
            let eye = Vector3::new(radius * phi.sin(), height, -radius * phi.cos());
            Camera::look_at(eye, Vector3::zeros(), Vector3::new(0.0, -1.0, 0.0), focal, size)
                .expect("ring camera is valid")
        })
        .collect()
}

fn smooth_image(w: usize, h: usize, seed: u64, scale: f64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phase: Vec<f64> = (0..9).map(|_| rng.random_range(0.0..6.28)).collect();
    Image::from_fn(w, h, 3, |x, y, c| {
        let u = x as f64 / w as f64;
        let v = y as f64 / h as f64;
        scale
            * (0.5
                + 0.35 * (3.0 * u + phase[3 * c]).sin() * (2.0 * v + phase[3 * c + 1]).cos()
                + 0.1 * (phase[3 * c + 2] + 5.0 * u * v).sin())
    })
}

pub fn gradient_fixture() -> GradientFixture {
    let cfg = fixture_config();
    let anchors = AnchorSet {
        voxel_resolution: 0.5,
        anchors: vec![
            CandidateAnchor {
                position: Vector3::new(-0.2, 0.05, 0.1),
                scale: 0.5,
                voxel: [-1, 0, 0],
            },
            CandidateAnchor {
                position: Vector3::new(0.25, -0.1, -0.05),
                scale: 0.5,
                voxel: [0, -1, -1],
            },
        ],
        provenance: None,
    };
    let mut scene = SceneModel::from_anchors(&anchors, 3, &cfg, 11).expect("fixture scene");
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let layout = scene.layout.clone();
    for id in [layout.offsets_intrinsic, layout.offsets_transient] {
        for v in scene.store.get_mut(id) {
            *v = rng.random_range(-0.6..0.6);
        }
    }
    for id in [layout.features_intrinsic, layout.features_transient] {
        for v in scene.store.get_mut(id) {
            *v = rng.random_range(-1.0..1.0);
        }
    }
    for id in [layout.decoders.residual.w2, layout.decoders.residual.b2] {
        for v in scene.store.get_mut(id) {
            *v = rng.random_range(-0.3..0.3);
        }
    }
    for v in scene.store.get_mut(layout.embeddings) {
        *v = rng.random_range(-1.0..1.0);
    }
    // perturb biases away from exact ReLU kinks
    for (_, mlp) in layout.decoders.all() {
        for v in scene.store.get_mut(mlp.b1) {
            *v += rng.random_range(-0.1..0.1);
        }
    }
    let cameras = ring_cameras(3, 3.0, 0.4, 14.0, (16, 16));
    let loss = LossConfig::default();
    let targets = (0..3)
        .map(|v| {
            let low = smooth_image(16, 16, 100 + v as u64, 0.25);
            let prior = smooth_image(16, 16, 200 + v as u64, 0.8);
            ViewTargets::new(low, Some(prior), loss.eps_smooth).expect("fixture targets")
        })
        .collect();
    GradientFixture {
        scene,
        cameras,
        targets,
        loss,
        iter: 2500,
    }
}

impl GradientFixture {
    fn options(&self, view: usize) -> RenderOptions {
        RenderOptions {
            enhanced: true,
            view: Some(view),
        }
    }

    /// Stop-gradient values of every view at the current parameters.
    pub fn stop_grads(&self, scene: &SceneModel) -> Result<Vec<PinnedView>> {
        self.cameras
            .iter()
            .enumerate()
            .map(|(v, cam)| {
                let (maps, state) = render(scene, cam, &self.options(v))?;
                Ok(PinnedView {
                    stop: StopGrad::from_maps(&maps),
                    state,
                })
            })
            .collect()
    }

    /// Summed total loss over the three views. With `pins`, every
    /// stop-gradient quantity is held at its pinned value, so finite
    /// differences of this function see exactly what the analytic gradient
    /// differentiates.
    pub fn loss(&self, scene: &SceneModel, pins: Option<&[PinnedView]>) -> Result<f64> {
        let mut total = 0.0;
        for (v, cam) in self.cameras.iter().enumerate() {
            let (mut maps, _) = render(scene, cam, &self.options(v))?;
            let pin = pins.map(|p| &p[v]);
            if let Some(p) = pin {
                maps.enhanced = Some(recomposite_enhanced(scene, &p.state)?);
            }
            let (bundle, _) = total_loss(&maps, &self.targets[v], self.iter, &self.loss, pin.map(|p| &p.stop))?;
            total += bundle.total;
        }
        Ok(total)
    }

    pub fn loss_and_grad(&self, scene: &SceneModel) -> Result<(f64, Gradients)> {
        let mut total = 0.0;
        let mut grads = scene.store.zero_grads();
        for (v, cam) in self.cameras.iter().enumerate() {
            let (maps, state) = render(scene, cam, &self.options(v))?;
            let (bundle, mg) = total_loss(&maps, &self.targets[v], self.iter, &self.loss, None)?;
            total += bundle.total;
            grads.add_assign(&render_backward(scene, cam, &state, &mg));
        }
        Ok((total, grads))
    }
}

/// A 5×5 sheet of anchors facing two cameras, its true depth maps, and a copy
/// of the scene with the center anchor pushed `displacement` along the first
/// camera's optical axis.
pub struct DisplacedAnchorFixture {
    pub reference: SceneModel,
    pub displaced: SceneModel,
    pub views: Vec<(Camera, Image)>,
}

pub fn displaced_anchor_fixture(displacement: f64) -> DisplacedAnchorFixture {
    let cfg = SceneConfig {
        gaussians_per_anchor: 2,
        feature_dim: 4,
        hidden_dim: 8,
        embedding_dim: 2,
        init_scale: 0.6,
    };
    let r = 0.25;
    let mut anchors = Vec::new();
    for i in -2i64..=2 {
        for j in -2i64..=2 {
            // gently curved sheet so depth varies across the frame
            let (x, y) = (i as f64 * r, j as f64 * r);
            anchors.push(CandidateAnchor {
                position: Vector3::new(x, y, 0.3 * (x * x + y * y)),
                scale: r,
                voxel: [i, j, 0],
            });
        }
    }
    let set = AnchorSet {
        voxel_resolution: r,
        anchors,
        provenance: None,
    };
    let mut reference = SceneModel::from_anchors(&set, 2, &cfg, 5).expect("sheet scene");
    // make the sheet opaque so depth is well defined
    let b2 = reference.layout.decoders.opacity.b2;
    reference.store.get_mut(b2).fill(3.0);
    let cameras = vec![
        Camera::look_at(
            Vector3::new(0.0, 0.0, -3.0),
            Vector3::zeros(),
            Vector3::new(0.0, -1.0, 0.0),
            40.0,
            (32, 32),
        )
        .expect("camera"),
        Camera::look_at(
            Vector3::new(0.8, 0.3, -2.9),
            Vector3::zeros(),
            Vector3::new(0.0, -1.0, 0.0),
            40.0,
            (32, 32),
        )
        .expect("camera"),
    ];
    let views = cameras
        .into_iter()
        .map(|cam| {
            let depth = render(&reference, &cam, &RenderOptions::default())
                .expect("render")
                .0
                .depth;
            (cam, depth)
        })
        .collect::<Vec<_>>();
    let mut displaced = reference.clone();
    let axis = views[0].0.rotation.row(2).transpose();
    let pos = displaced.layout.positions;
    let center = 12;
    for a in 0..3 {
        displaced.store.get_mut(pos)[3 * center + a] += displacement * axis[a];
    }
    DisplacedAnchorFixture {
        reference,
        displaced,
        views,
    }
}
