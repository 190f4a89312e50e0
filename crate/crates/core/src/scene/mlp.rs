//! One-hidden-layer ReLU perceptrons backed by [`ParamStore`] tensors.

use crate::diff::{Gradients, ParamGroup, ParamId, ParamStore};
use rand::Rng;

/// Tensor ids and dimensions of a decoder `out = W2 relu(W1 x + b1) + b2`.
///
/// `W1` is `hidden x in` and `W2` is `out x hidden`, both row-major. The head
/// activation is applied by the caller.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams {
    pub in_dim: usize,
    pub hidden: usize,
    pub out_dim: usize,
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl MlpParams {
    /// Registers zero-initialized `{name}.w1/.b1/.w2/.b2` tensors.
    pub fn register(
        store: &mut ParamStore,
        name: &str,
        group: ParamGroup,
        in_dim: usize,
        hidden: usize,
        out_dim: usize,
    ) -> Self {
        MlpParams {
            in_dim,
            hidden,
            out_dim,
            w1: store.zeros(&format!("{name}.w1"), group, &[hidden, in_dim]),
            b1: store.zeros(&format!("{name}.b1"), group, &[hidden]),
            w2: store.zeros(&format!("{name}.w2"), group, &[out_dim, hidden]),
            b2: store.zeros(&format!("{name}.b2"), group, &[out_dim]),
        }
    }

    /// Looks the tensors up by name in an existing store.
    pub fn bind(store: &ParamStore, name: &str, in_dim: usize, hidden: usize, out_dim: usize) -> Option<Self> {
        Some(MlpParams {
            in_dim,
            hidden,
            out_dim,
            w1: store.id(&format!("{name}.w1"))?,
            b1: store.id(&format!("{name}.b1"))?,
            w2: store.id(&format!("{name}.w2"))?,
            b2: store.id(&format!("{name}.b2"))?,
        })
    }

    /// Uniform `U(-1/sqrt(fan_in), 1/sqrt(fan_in))` init for both layers.
    pub fn init_uniform(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        let a1 = 1.0 / (self.in_dim as f64).sqrt();
        let a2 = 1.0 / (self.hidden as f64).sqrt();
        for (id, a) in [(self.w1, a1), (self.b1, a1), (self.w2, a2), (self.b2, a2)] {
            for v in store.get_mut(id) {
                *v = rng.random_range(-a..a);
            }
        }
    }

    pub fn forward(&self, store: &ParamStore, input: &[f64], hidden: &mut [f64], out: &mut [f64]) {
        debug_assert_eq!(input.len(), self.in_dim);
        let w1 = store.get(self.w1);
        let b1 = store.get(self.b1);
        for (j, h) in hidden.iter_mut().enumerate() {
            let row = &w1[j * self.in_dim..(j + 1) * self.in_dim];
            let z = b1[j] + row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>();
            *h = z.max(0.0);
        }
        let w2 = store.get(self.w2);
        let b2 = store.get(self.b2);
        for (o, y) in out.iter_mut().enumerate() {
            let row = &w2[o * self.hidden..(o + 1) * self.hidden];
            *y = b2[o] + row.iter().zip(hidden.iter()).map(|(w, h)| w * h).sum::<f64>();
        }
    }

    /// Accumulates parameter gradients and, when requested, adds the input
    /// gradient into `d_input`. `hidden` is the post-ReLU activation from the
    /// matching forward call; the ReLU derivative at 0 is taken as 0.
    pub fn backward(
        &self,
        store: &ParamStore,
        input: &[f64],
        hidden: &[f64],
        d_out: &[f64],
        grads: &mut Gradients,
        d_input: Option<&mut [f64]>,
    ) {
        if d_out.iter().all(|&g| g == 0.0) {
            return;
        }
        let w2 = store.get(self.w2);
        let mut d_hidden = vec![0.0; self.hidden];
        for (o, &g) in d_out.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            let row = &w2[o * self.hidden..(o + 1) * self.hidden];
            for (dh, w) in d_hidden.iter_mut().zip(row) {
                *dh += g * w;
            }
        }
        {
            let gw2 = grads.get_mut(self.w2);
            for (o, &g) in d_out.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                let row = &mut gw2[o * self.hidden..(o + 1) * self.hidden];
                for (gw, h) in row.iter_mut().zip(hidden) {
                    *gw += g * h;
                }
            }
        }
        for (gb, g) in grads.get_mut(self.b2).iter_mut().zip(d_out) {
            *gb += g;
        }
        for (dh, h) in d_hidden.iter_mut().zip(hidden) {
            if *h <= 0.0 {
                *dh = 0.0;
            }
        }
        {
            let gw1 = grads.get_mut(self.w1);
            for (j, &dz) in d_hidden.iter().enumerate() {
                if dz == 0.0 {
                    continue;
                }
                let row = &mut gw1[j * self.in_dim..(j + 1) * self.in_dim];
                for (gw, x) in row.iter_mut().zip(input) {
                    *gw += dz * x;
                }
            }
        }
        for (gb, dz) in grads.get_mut(self.b1).iter_mut().zip(&d_hidden) {
            *gb += dz;
        }
        if let Some(d_input) = d_input {
            let w1 = store.get(self.w1);
            for (j, &dz) in d_hidden.iter().enumerate() {
                if dz == 0.0 {
                    continue;
                }
                let row = &w1[j * self.in_dim..(j + 1) * self.in_dim];
                for (di, w) in d_input.iter_mut().zip(row) {
                    *di += dz * w;
                }
            }
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Inverse of [`softplus`] for `y > 0`.
pub fn softplus_inv(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::{finite_difference_check, FdConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn activations() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!((sigmoid(-10.0) - 4.5398e-5).abs() < 1e-8);
        assert!((softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((softplus(5.0) - 5.006715348489118).abs() < 1e-12);
        for y in [1e-3, 0.3, 1.0, 7.5] {
            assert!((softplus(softplus_inv(y)) - y).abs() < 1e-12);
        }
        assert!(softplus(-800.0) >= 0.0 && sigmoid(800.0) == 1.0);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut store = ParamStore::new();
        let mlp = MlpParams::register(&mut store, "m", ParamGroup::DecompositionDecoder, 5, 7, 3);
        let inp = store.add("x", ParamGroup::Feature, &[5], vec![0.3, -0.2, 0.9, 0.05, -0.7]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        mlp.init_uniform(&mut store, &mut rng);
        let upstream = [0.7, -1.3, 0.4];
        let loss = |s: &ParamStore| {
            let mut h = vec![0.0; 7];
            let mut o = vec![0.0; 3];
            mlp.forward(s, s.get(inp), &mut h, &mut o);
            o.iter().zip(&upstream).map(|(a, b)| a * b).sum::<f64>()
        };
        let mut grads = store.zero_grads();
        let mut h = vec![0.0; 7];
        let mut o = vec![0.0; 3];
        let x = store.get(inp).to_vec();
        mlp.forward(&store, &x, &mut h, &mut o);
        let mut dx = vec![0.0; 5];
        mlp.backward(&store, &x, &h, &upstream, &mut grads, Some(&mut dx));
        grads.get_mut(inp).copy_from_slice(&dx);
        let report = finite_difference_check(
            loss,
            &mut store,
            &grads,
            &FdConfig {
                samples: 120,
                seed: 1,
                ..Default::default()
            },
        );
        assert!(report.max_rel_error < 1e-6, "{:?}", report.worst());
    }
}
