//! Central finite differences against analytic gradients.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Gradients, ParamGroup, ParamId, ParamStore};

#[derive(Clone, Debug)]
pub struct FdConfig {
    pub step: f64,
    pub samples: usize,
    pub seed: u64,
    /// Tensors to sample from; `None` means every non-empty trainable tensor.
    pub tensors: Option<Vec<ParamId>>,
}

impl Default for FdConfig {
    fn default() -> Self {
        FdConfig {
            step: 1e-4,
            samples: 200,
            seed: 0,
            tensors: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FdStatus {
    Ok,
    /// The loss was non-finite at a perturbed point.
    NonFinite,
    /// One-sided slopes disagree in a way curvature cannot explain (kink,
    /// clamp, culling boundary). Excluded from the aggregate.
    NonDifferentiable,
}

#[derive(Clone, Debug)]
pub struct FdSample {
    pub tensor: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
    pub status: FdStatus,
}

#[derive(Clone, Debug)]
pub struct FdReport {
    pub samples: Vec<FdSample>,
    /// Max relative error over samples with [`FdStatus::Ok`].
    pub max_rel_error: f64,
}

impl FdReport {
    pub fn checked(&self) -> usize {
        self.samples.iter().filter(|s| s.status == FdStatus::Ok).count()
    }

    pub fn excluded(&self) -> impl Iterator<Item = &FdSample> {
        self.samples.iter().filter(|s| s.status != FdStatus::Ok)
    }

    pub fn worst(&self) -> Option<&FdSample> {
        self.samples
            .iter()
            .filter(|s| s.status == FdStatus::Ok)
            .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }
}

/// Relative error `|analytic - numeric| / max(1e-8, |numeric|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / numeric.abs().max(1e-8)
}

/// Anything that owns a [`ParamStore`] and can be evaluated by a loss.
pub trait Parameterized {
    fn params(&self) -> &ParamStore;
    fn params_mut(&mut self) -> &mut ParamStore;
}

impl Parameterized for ParamStore {
    fn params(&self) -> &ParamStore {
        self
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        self
    }
}

/// Compares `grads` with central differences of `loss_fn` on `cfg.samples`
/// randomly chosen coordinates, spread round-robin over the selected tensors.
///
/// Every perturbation is undone before returning.
pub fn finite_difference_check<M: Parameterized>(
    mut loss_fn: impl FnMut(&M) -> f64,
    model: &mut M,
    grads: &Gradients,
    cfg: &FdConfig,
) -> FdReport {
    let store = model.params();
    let tensors: Vec<ParamId> = cfg
        .tensors
        .clone()
        .unwrap_or_else(|| {
            store
                .ids()
                .filter(|&id| store.tensor(id).group != ParamGroup::AnchorScale)
                .collect()
        })
        .into_iter()
        .filter(|&id| !store.get(id).is_empty())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut coords = Vec::with_capacity(cfg.samples);
    if !tensors.is_empty() {
        let mut order = tensors.clone();
        for s in 0..cfg.samples {
            if s % order.len() == 0 {
                // reshuffle each pass so short runs still touch random tensors
                order = tensors.choose_multiple(&mut rng, tensors.len()).copied().collect();
            }
            let id = order[s % order.len()];
            let idx = rng.random_range(0..store.get(id).len());
            coords.push((id, idx));
        }
    }

    let h = cfg.step;
    let f0 = loss_fn(model);
    let mut samples = Vec::with_capacity(coords.len());
    for (id, idx) in coords {
        let orig = model.params().get(id)[idx];
        let mut eval_at = |model: &mut M, delta: f64| {
            model.params_mut().get_mut(id)[idx] = orig + delta;
            let v = loss_fn(model);
            model.params_mut().get_mut(id)[idx] = orig;
            v
        };
        let fp = eval_at(model, h);
        let fm = eval_at(model, -h);
        let analytic = grads.get(id)[idx];
        let name = model.params().tensor(id).name.clone();
        if !(fp.is_finite() && fm.is_finite() && f0.is_finite()) {
            samples.push(FdSample {
                tensor: name,
                index: idx,
                analytic,
                numeric: f64::NAN,
                rel_error: f64::NAN,
                status: FdStatus::NonFinite,
            });
            continue;
        }
        let numeric = (fp - fm) / (2.0 * h);
        let rel_error = relative_error(analytic, numeric);

        // Smooth functions give fwd - bwd = h f'' + O(h^3), so halving h halves
        // the gap. A kink inside the stencil keeps the gap at the slope jump.
        let fwd = (fp - f0) / h;
        let bwd = (f0 - fm) / h;
        let gap = fwd - bwd;
        let mut status = FdStatus::Ok;
        let noise = 1e-7 * (fwd.abs() + bwd.abs()) + 1e-9;
        if gap.abs() > noise {
            let fp2 = eval_at(model, h / 2.0);
            let fm2 = eval_at(model, -h / 2.0);
            let gap2 = ((fp2 - f0) - (f0 - fm2)) / (h / 2.0);
            if (gap - 2.0 * gap2).abs() > 0.1 * gap.abs() + noise {
                status = FdStatus::NonDifferentiable;
            }
        }
        samples.push(FdSample {
            tensor: name,
            index: idx,
            analytic,
            numeric,
            rel_error,
            status,
        });
    }
    let max_rel_error = samples
        .iter()
        .filter(|s| s.status == FdStatus::Ok)
        .map(|s| s.rel_error)
        .fold(0.0, f64::max);
    FdReport { samples, max_rel_error }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::ParamGroup;

    fn store_with(values: Vec<f64>) -> (ParamStore, ParamId) {
        let mut store = ParamStore::new();
        let n = values.len();
        let id = store.add("p", ParamGroup::Feature, &[n], values);
        (store, id)
    }

    #[test]
    fn quadratic_is_exact() {
        let values: Vec<f64> = (0..20).map(|i| 0.5 + 0.075 * i as f64).collect();
        let (mut store, id) = store_with(values.clone());
        let mut grads = store.zero_grads();
        grads.get_mut(id).copy_from_slice(&values);
        let loss = |s: &ParamStore| 0.5 * s.get(id).iter().map(|v| v * v).sum::<f64>();
        let report = finite_difference_check(
            loss,
            &mut store,
            &grads,
            &FdConfig {
                samples: 50,
                ..Default::default()
            },
        );
        assert_eq!(report.checked(), 50);
        assert!(report.max_rel_error < 1e-9, "{}", report.max_rel_error);
        assert_eq!(store.get(id), values.as_slice());
    }

    #[test]
    fn wrong_gradient_is_detected() {
        let (mut store, id) = store_with(vec![1.0, 2.0]);
        let mut grads = store.zero_grads();
        grads.get_mut(id).copy_from_slice(&[1.0, 2.2]);
        let loss = |s: &ParamStore| 0.5 * s.get(id).iter().map(|v| v * v).sum::<f64>();
        let report = finite_difference_check(
            loss,
            &mut store,
            &grads,
            &FdConfig {
                samples: 10,
                ..Default::default()
            },
        );
        assert!(report.max_rel_error > 0.09);
    }

    #[test]
    fn abs_at_zero_is_flagged() {
        let (mut store, id) = store_with(vec![0.0]);
        let grads = store.zero_grads();
        let loss = |s: &ParamStore| s.get(id)[0].abs();
        let report = finite_difference_check(
            loss,
            &mut store,
            &grads,
            &FdConfig {
                samples: 1,
                ..Default::default()
            },
        );
        assert_eq!(report.samples[0].status, FdStatus::NonDifferentiable);
        assert_eq!(report.checked(), 0);
        assert_eq!(report.max_rel_error, 0.0);
    }

    #[test]
    fn strong_curvature_is_not_mistaken_for_a_kink() {
        let (mut store, id) = store_with(vec![1e-3]);
        let mut grads = store.zero_grads();
        grads.get_mut(id)[0] = 1e-3 * 1e3;
        // f = 500 p^2 has f'/f'' = p = 1e-3, far below the kink heuristics' scale
        let loss = |s: &ParamStore| 500.0 * s.get(id)[0].powi(2);
        let report = finite_difference_check(
            loss,
            &mut store,
            &grads,
            &FdConfig {
                samples: 1,
                ..Default::default()
            },
        );
        assert_eq!(report.samples[0].status, FdStatus::Ok);
        assert!(report.max_rel_error < 1e-6);
    }

    #[test]
    fn non_finite_loss_is_reported() {
        let (mut store, id) = store_with(vec![0.0]);
        let grads = store.zero_grads();
        let loss = |s: &ParamStore| if s.get(id)[0] > 0.0 { f64::NAN } else { 0.0 };
        let report = finite_difference_check(
            loss,
            &mut store,
            &grads,
            &FdConfig {
                samples: 1,
                ..Default::default()
            },
        );
        assert_eq!(report.samples[0].status, FdStatus::NonFinite);
    }
}
