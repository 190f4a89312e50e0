use std::num::NonZero;

use kiddo::{ImmutableKdTree, SquaredEuclidean};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::AnchorSet;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PruneConfig {
    pub tau0: f64,
    pub beta: f64,
    pub epsilon: f64,
    pub rounds: usize,
    pub seed: u64,
}

impl Default for PruneConfig {
    fn default() -> Self {
        PruneConfig {
            tau0: 1.0,
            beta: 1.0,
            epsilon: 1e-6,
            rounds: 3,
            seed: 0,
        }
    }
}

impl PruneConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau0 > 0.0 && self.beta > 0.0 && self.epsilon > 0.0) {
            return Err(Error::invalid("tau0, beta and epsilon must be positive"));
        }
        if self.rounds == 0 {
            return Err(Error::invalid("at least one pruning round is required"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PruneRound {
    pub threshold: f64,
    pub candidates: usize,
    pub retained: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PruneReport {
    pub config: PruneConfig,
    pub initial: usize,
    pub rounds: Vec<PruneRound>,
    /// Threshold after the last update.
    pub final_threshold: f64,
}

pub fn preservation_probability(d_min: f64, tau: f64, epsilon: f64) -> f64 {
    (d_min / tau + epsilon).min(1.0)
}

pub fn update_threshold(tau: f64, beta: f64, retained: usize, initial: usize) -> f64 {
    tau * (beta * retained as f64 / initial as f64).exp()
}

/// Uniform draw in `[0, 1)` keyed by `(seed, round, index)` so that the
/// outcome does not depend on evaluation order.
pub fn retention_draw(seed: u64, round: usize, index: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(round as u64);
    rng.set_word_pos(2 * index as u128);
    rng.random::<f64>()
}

/// Distance from every point to its nearest other point; `+inf` when the set
/// has a single element. Coincident points are at distance 0.
pub fn nearest_neighbor_distances(points: &[Vector3<f64>]) -> Vec<f64> {
    if points.len() < 2 {
        return vec![f64::INFINITY; points.len()];
    }
    let coords: Vec<[f64; 3]> = points.iter().map(|p| [p.x, p.y, p.z]).collect();
    let tree: ImmutableKdTree<f64, 3> =
        ImmutableKdTree::new_from_slice(&coords).expect("finite coordinates build a tree");
    let two = NonZero::new(2).unwrap();
    coords
        .par_iter()
        .enumerate()
        .map(|(i, q)| {
            let hits = tree.query(q).nearest_n::<SquaredEuclidean<f64>>(two).execute();
            hits.iter()
                .find(|h| h.item as usize != i)
                .map(|h| h.distance.sqrt())
                .unwrap_or(f64::INFINITY)
        })
        .collect()
}

/// Runs the configured number of pruning rounds. Each round measures
/// distances among the anchors that survived the previous round, keeps each
/// one with its preservation probability, then raises the threshold using the
/// post-round survivor count. Survivors keep their input order.
pub fn stochastic_prune(set: &AnchorSet, cfg: &PruneConfig) -> Result<AnchorSet> {
    cfg.validate()?;
    if set.is_empty() {
        return Err(Error::invalid("cannot prune an empty anchor set"));
    }
    let initial = set.len();
    let mut alive: Vec<usize> = (0..initial).collect();
    let mut tau = cfg.tau0;
    let mut rounds = Vec::with_capacity(cfg.rounds);
    for round in 0..cfg.rounds {
        let points: Vec<Vector3<f64>> = alive.iter().map(|&i| set.anchors[i].position).collect();
        let d_min = nearest_neighbor_distances(&points);
        let candidates = alive.len();
        alive = alive
            .iter()
            .zip(&d_min)
            .filter(|&(&i, &d)| retention_draw(cfg.seed, round, i) < preservation_probability(d, tau, cfg.epsilon))
            .map(|(&i, _)| i)
            .collect();
        rounds.push(PruneRound {
            threshold: tau,
            candidates,
            retained: alive.len(),
        });
        log::info!("pruning round {round}: tau {tau:.6}, kept {}/{candidates}", alive.len());
        tau = update_threshold(tau, cfg.beta, alive.len(), initial);
    }
    Ok(AnchorSet {
        voxel_resolution: set.voxel_resolution,
        anchors: alive.iter().map(|&i| set.anchors[i].clone()).collect(),
        provenance: Some(PruneReport {
            config: cfg.clone(),
            initial,
            rounds,
            final_threshold: tau,
        }),
    })
}
