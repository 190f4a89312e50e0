//! Training objectives with analytic gradients onto the rendered maps.

mod ssim;
mod terms;

use serde::{Deserialize, Serialize};

pub use ssim::{dssim, dssim_with_grad, gaussian_kernel, ssim, C1, C2, WINDOW, WINDOW_SIGMA};
pub use terms::{
    blur5, depth_pcc_loss, depth_pcc_loss_grad, enhancement_loss, enhancement_loss_grad, illum_prior_loss,
    init_illum_loss, init_illum_loss_grad, l1_weighted, l1_weighted_grad, residual_loss, residual_loss_grad,
    smoothness_loss, smoothness_loss_grad, smoothness_weights, EnhancementGrads, SmoothnessWeights,
};

use crate::error::{Error, Result};
use crate::geometry::Image;
use crate::render::{compose_intrinsic, compose_low, ComponentMaps, MapGrads};

/// Loss weights, schedules and numerical constants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub lambda_ill: f64,
    /// Residual weight at iteration 0, decayed linearly to `lambda_re_end`.
    pub lambda_re_start: f64,
    pub lambda_re_end: f64,
    pub lambda_re_decay_iters: usize,
    pub lambda_enh: f64,
    /// Enhancement term is off before this iteration.
    pub enh_start: usize,
    pub lambda_dssim: f64,
    pub lambda_smo: f64,
    /// Target ratio between enhanced and low-light illumination.
    pub gamma: f64,
    pub eps_l1: f64,
    pub eps_smooth: f64,
    pub eps_enh: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda_ill: 1.0,
            lambda_re_start: 2.0,
            lambda_re_end: 0.5,
            lambda_re_decay_iters: 2000,
            lambda_enh: 1.0,
            enh_start: 2000,
            lambda_dssim: 0.2,
            lambda_smo: 0.001,
            gamma: 4.0,
            eps_l1: 1e-3,
            eps_smooth: 1e-2,
            eps_enh: 1e-3,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let weights = [
            self.lambda_ill,
            self.lambda_re_start,
            self.lambda_re_end,
            self.lambda_enh,
            self.lambda_dssim,
            self.lambda_smo,
        ];
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) || self.lambda_dssim > 1.0 {
            return Err(Error::invalid(
                "loss weights must be finite and non-negative (dssim weight ≤ 1)",
            ));
        }
        if !(self.gamma > 0.0) {
            return Err(Error::invalid("gamma must be positive"));
        }
        if [self.eps_l1, self.eps_smooth, self.eps_enh].iter().any(|e| !(*e > 0.0)) {
            return Err(Error::invalid("loss epsilons must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub ill: f64,
    pub re: f64,
    pub enh: f64,
    pub dssim: f64,
}

pub fn lambda_schedule(iter: usize, cfg: &LossConfig) -> LossWeights {
    let re = if iter >= cfg.lambda_re_decay_iters {
        cfg.lambda_re_end
    } else {
        let t = iter as f64 / cfg.lambda_re_decay_iters as f64;
        cfg.lambda_re_start + (cfg.lambda_re_end - cfg.lambda_re_start) * t
    };
    LossWeights {
        ill: cfg.lambda_ill,
        re,
        enh: if iter >= cfg.enh_start { cfg.lambda_enh } else { 0.0 },
        dssim: cfg.lambda_dssim,
    }
}

/// Per-view supervision with the quantities that never change during training.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewTargets {
    pub low: Image,
    pub prior: Option<Image>,
    pub low_max: Image,
    pub weights: SmoothnessWeights,
}

impl ViewTargets {
    pub fn new(low: Image, prior: Option<Image>, eps_smooth: f64) -> Result<Self> {
        if low.channels != 3 {
            return Err(Error::invalid("low-light targets must be RGB"));
        }
        if let Some(p) = &prior {
            if !p.same_shape(&low) {
                return Err(Error::invalid("prior image shape differs from the low-light image"));
            }
        }
        let weights = smoothness_weights(&low.to_gray(), eps_smooth)?;
        Ok(ViewTargets {
            low_max: low.channel_max(),
            low,
            prior,
            weights,
        })
    }
}

/// Values that enter the loss under a stop-gradient. Normally read off the
/// current render; pinning them lets finite differences see the same
/// function as the analytic gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct StopGrad {
    pub low: Image,
    pub illumination: Image,
    /// Reflectance seen by the enhancement term, which trains only the tone
    /// mapper.
    pub reflectance: Image,
}

impl StopGrad {
    pub fn from_maps(maps: &ComponentMaps) -> Self {
        StopGrad {
            low: compose_low(maps),
            illumination: maps.illumination.clone(),
            reflectance: maps.reflectance.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBundle {
    pub recon: f64,
    pub ill: f64,
    pub re: f64,
    /// `None` while the enhancement term is inactive.
    pub enh: Option<f64>,
    pub total: f64,
    pub weights: LossWeights,
}

/// Composite objective for one training view and its map adjoints.
pub fn total_loss(
    maps: &ComponentMaps,
    targets: &ViewTargets,
    iter: usize,
    cfg: &LossConfig,
    stop: Option<&StopGrad>,
) -> Result<(LossBundle, MapGrads)> {
    let weights = lambda_schedule(iter, cfg);
    let (w, h) = (maps.width(), maps.height());
    let n = w * h;
    let mut g = MapGrads::zeros(w, h);
    let owned;
    let stop = match stop {
        Some(s) => s,
        None => {
            owned = StopGrad::from_maps(maps);
            &owned
        }
    };
    let r = &maps.reflectance.data;
    let s = &maps.illumination.data;

    // reconstruction: weighted L1 on the full composition, DSSIM on R ⊙ S only
    let low = compose_low(maps);
    let (l1, d_low) = l1_weighted_grad(&low, &targets.low, &stop.low, cfg.eps_l1)?;
    let (ds, d_int) = if weights.dssim > 0.0 {
        dssim_with_grad(&compose_intrinsic(maps), &targets.low)?
    } else {
        (0.0, vec![0.0; 3 * n])
    };
    let recon = (1.0 - weights.dssim) * l1 + weights.dssim * ds;
    for p in 0..n {
        for c in 0..3 {
            let i = 3 * p + c;
            let gl = (1.0 - weights.dssim) * d_low[i];
            let gi = gl + weights.dssim * d_int[i];
            g.reflectance[i] += gi * s[p];
            g.illumination[p] += gi * r[i];
            g.residual[i] += gl;
        }
    }

    let (init, d_init) = init_illum_loss_grad(&maps.illumination, &targets.low_max)?;
    let (smo, d_smo) = smoothness_loss_grad(&maps.illumination, &targets.weights)?;
    let ill = init + cfg.lambda_smo * smo;
    for p in 0..n {
        g.illumination[p] += weights.ill * (d_init[p] + cfg.lambda_smo * d_smo[p]);
    }

    let re = match &maps.residual {
        Some(rs) => {
            let (v, d) = residual_loss_grad(rs);
            for (gr, d) in g.residual.iter_mut().zip(&d) {
                *gr += weights.re * d;
            }
            v
        }
        None => 0.0,
    };

    let enh = if weights.enh > 0.0 {
        let enhanced = maps
            .enhanced
            .as_ref()
            .ok_or_else(|| Error::invalid("enhancement term active but no enhanced map rendered"))?;
        let prior = targets
            .prior
            .as_ref()
            .ok_or_else(|| Error::invalid("enhancement term active but the view has no prior image"))?;
        let e = enhancement_loss_grad(
            &stop.reflectance,
            enhanced,
            &stop.illumination,
            prior,
            cfg.gamma,
            cfg.eps_enh,
        )?;
        for i in 0..3 * n {
            g.enhanced[i] += weights.enh * e.d_enhanced[i];
        }
        Some(e.value)
    } else {
        None
    };

    let total = recon + weights.ill * ill + weights.re * re + weights.enh * enh.unwrap_or(0.0);
    Ok((
        LossBundle {
            recon,
            ill,
            re,
            enh,
            total,
            weights,
        },
        g,
    ))
}

#[cfg(test)]
mod tests;
