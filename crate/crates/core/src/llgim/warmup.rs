use serde::{Deserialize, Serialize};

use crate::diff::{AdamState, ParamGroup};
use crate::error::Result;
use crate::geometry::{Camera, Image};
use crate::losses::depth_pcc_loss_grad;
use crate::render::{render, render_backward, MapGrads, RenderOptions};
use crate::scene::SceneModel;

/// Pixels count as covered above this accumulated alpha.
pub const COVERAGE_ALPHA: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WarmupConfig {
    pub iters: usize,
    pub lr: f64,
}

impl Default for WarmupConfig {
    fn default() -> Self {
        WarmupConfig { iters: 500, lr: 1e-3 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WarmupReport {
    /// Mean PCC loss before the first step (`None` if no view was usable).
    pub initial_loss: Option<f64>,
    pub final_loss: Option<f64>,
    /// View evaluations skipped for degenerate depth.
    pub skipped: usize,
}

struct Evaluation {
    loss: Option<f64>,
    skipped: usize,
    grads: Option<crate::diff::Gradients>,
}

fn evaluate(scene: &SceneModel, views: &[(Camera, Image)], with_grad: bool) -> Result<Evaluation> {
    let mut total = 0.0;
    let mut used = 0usize;
    let mut skipped = 0usize;
    let mut per_view = Vec::new();
    for (i, (cam, prior)) in views.iter().enumerate() {
        let (maps, state) = render(scene, cam, &RenderOptions::default())?;
        let mask: Vec<bool> = maps.alpha.data.iter().map(|&a| a > COVERAGE_ALPHA).collect();
        match depth_pcc_loss_grad(&maps.depth, prior, &mask)? {
            Some((loss, grad)) => {
                total += loss;
                used += 1;
                if with_grad {
                    per_view.push((cam, state, grad));
                }
            }
            None => {
                log::info!("warm-up: view {i} has degenerate depth; skipped");
                skipped += 1;
            }
        }
    }
    if used == 0 {
        return Ok(Evaluation {
            loss: None,
            skipped,
            grads: None,
        });
    }
    let grads = with_grad.then(|| {
        let mut acc = scene.store.zero_grads();
        for (cam, state, grad) in &per_view {
            let mut mg = MapGrads::zeros(cam.width, cam.height);
            mg.depth = grad.iter().map(|g| g / used as f64).collect();
            acc.add_assign(&render_backward(scene, cam, state, &mg));
        }
        acc
    });
    Ok(Evaluation {
        loss: Some(total / used as f64),
        skipped,
        grads,
    })
}

/// Mean PCC depth loss over views with usable depth.
pub fn mean_depth_loss(scene: &SceneModel, views: &[(Camera, Image)]) -> Result<Option<f64>> {
    Ok(evaluate(scene, views, false)?.loss)
}

/// Adam on anchor positions and intrinsic offsets against scale-free depth
/// priors; every other parameter is held fixed.
pub fn depth_warmup_refine(
    scene: &mut SceneModel,
    views: &[(Camera, Image)],
    cfg: &WarmupConfig,
) -> Result<WarmupReport> {
    let mut adam = AdamState::new(&scene.store);
    let mut report = WarmupReport {
        initial_loss: None,
        final_loss: None,
        skipped: 0,
    };
    let lr = |g: ParamGroup| match g {
        ParamGroup::AnchorPosition | ParamGroup::OffsetIntrinsic => cfg.lr,
        _ => 0.0,
    };
    for it in 0..cfg.iters {
        let eval = evaluate(scene, views, true)?;
        report.skipped += eval.skipped;
        if it == 0 {
            report.initial_loss = eval.loss;
        }
        let Some(mut grads) = eval.grads else {
            break;
        };
        adam.step(&mut scene.store, &mut grads, lr);
    }
    let last = evaluate(scene, views, false)?;
    if cfg.iters == 0 {
        report.initial_loss = last.loss;
    }
    report.final_loss = last.loss;
    Ok(report)
}
