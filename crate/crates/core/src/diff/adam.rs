use std::collections::BTreeSet;

use super::{Gradients, ParamGroup, ParamStore};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First/second moment estimates for every parameter in a store.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    /// Total number of group updates skipped because of non-finite gradients.
    pub skipped_updates: u64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamStepReport {
    pub skipped_groups: Vec<ParamGroup>,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = store.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        AdamState {
            step: 0,
            first: zeros.clone(),
            second: zeros,
            skipped_updates: 0,
        }
    }

    /// One bias-corrected Adam update with a learning rate per group.
    ///
    /// A group whose gradient contains a non-finite value is left untouched
    /// (moments included) for this step. Gradients are zeroed afterwards.
    pub fn step(
        &mut self,
        store: &mut ParamStore,
        grads: &mut Gradients,
        lr: impl Fn(ParamGroup) -> f64,
    ) -> AdamStepReport {
        self.step += 1;
        let t = self.step as f64;
        let bias1 = 1.0 - ADAM_BETA1.powf(t);
        let bias2 = 1.0 - ADAM_BETA2.powf(t);

        let mut bad_groups = BTreeSet::new();
        for id in store.ids() {
            if grads.get(id).iter().any(|g| !g.is_finite()) {
                bad_groups.insert(store.tensor(id).group);
            }
        }
        for &g in &bad_groups {
            log::warn!("adam: non-finite gradient in group {g:?}; skipping its update");
        }
        self.skipped_updates += bad_groups.len() as u64;

        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let group = store.tensor(id).group;
            if bad_groups.contains(&group) {
                continue;
            }
            let rate = lr(group);
            let g = grads.get(id);
            let m = &mut self.first[id.0];
            let v = &mut self.second[id.0];
            let p = store.get_mut(id);
            for i in 0..p.len() {
                m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
                v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
                if rate != 0.0 {
                    let m_hat = m[i] / bias1;
                    let v_hat = v[i] / bias2;
                    p[i] -= rate * m_hat / (v_hat.sqrt() + ADAM_EPS);
                }
            }
        }
        grads.zero();
        AdamStepReport {
            skipped_groups: bad_groups.into_iter().collect(),
        }
    }
}
