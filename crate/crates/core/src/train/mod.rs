//! Warm-up followed by the main optimization loop.

mod dataset;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diff::{AdamState, Gradients, ParamGroup, ParamStore};
use crate::error::{Error, Result};
use crate::geometry::Image;
use crate::llgim::{depth_warmup_refine, AnchorSet, WarmupConfig, WarmupReport};
use crate::losses::{lambda_schedule, total_loss, LossConfig, ViewTargets};
use crate::render::{compose_enhanced, compose_intrinsic, render, render_backward, RenderOptions};
use crate::scene::{save_checkpoint, SceneConfig, SceneModel};

pub use dataset::{Dataset, Manifest, ManifestEntry, Split, View, MANIFEST_FILE};

/// Consecutive non-finite iterations tolerated before giving up.
pub const MAX_CONSECUTIVE_FAILURES: usize = 3;

/// Log-linear decay from `init` at iteration 0 to `final` at the last one.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrSchedule {
    pub init: f64,
    #[serde(rename = "final")]
    pub end: f64,
}

impl LrSchedule {
    pub const fn constant(lr: f64) -> Self {
        LrSchedule { init: lr, end: lr }
    }

    pub const fn decay(init: f64, end: f64) -> Self {
        LrSchedule { init, end }
    }

    pub fn at(&self, iter: usize, total: usize) -> f64 {
        if self.init <= 0.0 || self.end <= 0.0 {
            return if iter == 0 || total <= 1 {
                self.init.max(0.0)
            } else {
                self.end.max(0.0)
            };
        }
        if self.init == self.end {
            return self.init;
        }
        let s = if total <= 1 {
            0.0
        } else {
            (iter as f64 / (total - 1) as f64).clamp(0.0, 1.0)
        };
        ((1.0 - s) * self.init.ln() + s * self.end.ln()).exp()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearningRates {
    pub anchor_position: LrSchedule,
    pub offset_intrinsic: LrSchedule,
    pub offset_transient: LrSchedule,
    pub feature: LrSchedule,
    pub opacity: LrSchedule,
    pub covariance: LrSchedule,
    /// Reflectance, illumination and residual decoders.
    pub decoders: LrSchedule,
    pub tone: LrSchedule,
    pub embedding: LrSchedule,
}

impl Default for LearningRates {
    fn default() -> Self {
        LearningRates {
            anchor_position: LrSchedule::constant(0.0),
            offset_intrinsic: LrSchedule::decay(1e-3, 1e-5),
            offset_transient: LrSchedule::decay(5e-3, 5e-5),
            feature: LrSchedule::constant(7.5e-3),
            opacity: LrSchedule::decay(2e-3, 2e-5),
            covariance: LrSchedule::constant(4e-3),
            decoders: LrSchedule::decay(0.4, 2.5e-3),
            tone: LrSchedule::decay(0.4, 2.5e-3),
            embedding: LrSchedule::decay(5e-2, 5e-4),
        }
    }
}

impl LearningRates {
    pub fn schedule(&self, group: ParamGroup) -> LrSchedule {
        match group {
            ParamGroup::AnchorPosition => self.anchor_position,
            ParamGroup::AnchorScale => LrSchedule::constant(0.0),
            ParamGroup::OffsetIntrinsic => self.offset_intrinsic,
            ParamGroup::OffsetTransient => self.offset_transient,
            ParamGroup::Feature => self.feature,
            ParamGroup::OpacityDecoder => self.opacity,
            ParamGroup::CovarianceDecoder => self.covariance,
            ParamGroup::DecompositionDecoder => self.decoders,
            ParamGroup::ToneMapper => self.tone,
            ParamGroup::Embedding => self.embedding,
        }
    }

    fn validate(&self) -> Result<()> {
        for g in ParamGroup::ALL {
            let s = self.schedule(g);
            if !(s.init >= 0.0 && s.end >= 0.0 && s.init.is_finite() && s.end.is_finite()) {
                return Err(Error::invalid(format!(
                    "learning rate for {g:?} must be finite and non-negative"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: usize,
    pub seed: u64,
    pub views_per_step: usize,
    /// Write a preview render every this many iterations (0 disables).
    pub preview_every: usize,
    pub scene: SceneConfig,
    pub loss: LossConfig,
    pub lr: LearningRates,
    pub warmup: WarmupConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 8000,
            seed: 0,
            views_per_step: 1,
            preview_every: 1000,
            scene: SceneConfig::default(),
            loss: LossConfig::default(),
            lr: LearningRates::default(),
            warmup: WarmupConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.views_per_step == 0 {
            return Err(Error::invalid("views_per_step must be at least 1"));
        }
        self.scene.validate()?;
        self.loss.validate()?;
        self.lr.validate()?;
        if !(self.warmup.lr >= 0.0) {
            return Err(Error::invalid("warm-up learning rate must be non-negative"));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Scene with one embedding per training view of `dataset`.
pub fn initialize_scene(anchors: &AnchorSet, dataset: &Dataset, cfg: &TrainConfig) -> Result<SceneModel> {
    SceneModel::from_anchors(anchors, dataset.n_train(), &cfg.scene, cfg.seed)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterRecord {
    pub iter: usize,
    pub view: String,
    pub recon: f64,
    pub ill: f64,
    pub re: f64,
    pub enh: Option<f64>,
    pub total: f64,
    pub lambda_re: f64,
    pub lambda_enh: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TrainEvent {
    RolledBack {
        iter: usize,
        group: ParamGroup,
        lr_scale: f64,
    },
    SkippedGroups {
        iter: usize,
        groups: Vec<ParamGroup>,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub warmup: Option<WarmupReport>,
    pub records: Vec<IterRecord>,
    pub events: Vec<TrainEvent>,
}

#[derive(Serialize)]
struct LogHeader<'a> {
    config: &'a TrainConfig,
    train_views: usize,
    anchors: usize,
    /// Verbatim run file the configuration was read from.
    #[serde(skip_serializing_if = "Option::is_none")]
    run: Option<&'a str>,
}

#[derive(Serialize)]
struct LogLine<'a, T: Serialize> {
    kind: &'static str,
    #[serde(flatten)]
    body: &'a T,
}

struct Outputs {
    log: BufWriter<File>,
}

impl Outputs {
    fn line<T: Serialize>(&mut self, kind: &'static str, body: &T) -> Result<()> {
        let text = serde_json::to_string(&LogLine { kind, body })?;
        writeln!(self.log, "{text}").map_err(|e| Error::io("train_log.jsonl", e))
    }
}

/// Round-robin over the training views, reshuffled with the run seed at
/// every pass.
struct ViewOrder {
    views: Vec<usize>,
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl ViewOrder {
    fn new(views: Vec<usize>, seed: u64) -> Self {
        ViewOrder {
            order: Vec::new(),
            pos: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
            views,
        }
    }

    fn next(&mut self) -> usize {
        if self.pos == self.order.len() {
            self.order = self.views.clone();
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        self.pos += 1;
        self.order[self.pos - 1]
    }
}

fn group_change(before: &ParamStore, after: &ParamStore) -> Option<ParamGroup> {
    let mut best: Option<(f64, ParamGroup)> = None;
    for g in ParamGroup::ALL {
        let (mut num, mut den) = (0.0, 0.0);
        for id in before.ids().filter(|&id| before.tensor(id).group == g) {
            for (a, b) in before.get(id).iter().zip(after.get(id)) {
                let d = b - a;
                num += if d.is_finite() { d * d } else { f64::INFINITY };
                den += a * a;
            }
        }
        if num > 0.0 {
            let rel = num / den.max(1e-12);
            if best.is_none_or(|(r, _)| rel > r) {
                best = Some((rel, g));
            }
        }
    }
    best.map(|(_, g)| g)
}

fn write_previews(scene: &SceneModel, dataset: &Dataset, iter: usize, dir: &Path) -> Result<()> {
    let view = dataset.test_indices().first().copied().unwrap_or(0);
    let cam = &dataset.views[view].camera;
    let (maps, _) = render(
        scene,
        cam,
        &RenderOptions {
            enhanced: true,
            view: None,
        },
    )?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    compose_intrinsic(&maps).save_png(&dir.join(format!("iter_{iter:05}_intrinsic.png")))?;
    if let Some(enh) = compose_enhanced(&maps) {
        enh.save_png(&dir.join(format!("iter_{iter:05}_enhanced.png")))?;
    }
    Ok(())
}

/// Runs the depth warm-up (when every training view has a depth prior) and
/// `cfg.iterations` optimization steps. With `out` set, writes
/// `train_log.jsonl`, periodic previews and the final `scene.ckpt` there.
pub fn train(scene: &mut SceneModel, dataset: &Dataset, cfg: &TrainConfig, out: Option<&Path>) -> Result<TrainReport> {
    train_logged(scene, dataset, cfg, out, None)
}

/// [`train`], additionally echoing `run_file` into the log header.
pub fn train_logged(
    scene: &mut SceneModel,
    dataset: &Dataset,
    cfg: &TrainConfig,
    out: Option<&Path>,
    run_file: Option<&str>,
) -> Result<TrainReport> {
    cfg.validate()?;
    dataset.validate()?;
    if scene.n_views != dataset.n_train() {
        return Err(Error::invalid(format!(
            "scene has {} embeddings but the dataset has {} training views",
            scene.n_views,
            dataset.n_train()
        )));
    }
    let mut outputs = match out {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let path = dir.join("train_log.jsonl");
            let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
            let mut o = Outputs {
                log: BufWriter::new(file),
            };
            o.line(
                "header",
                &LogHeader {
                    config: cfg,
                    train_views: dataset.n_train(),
                    anchors: scene.n_anchors,
                    run: run_file,
                },
            )?;
            Some(o)
        }
        None => None,
    };

    let train_views = dataset.train_indices();
    let depth_views: Vec<_> = train_views
        .iter()
        .filter_map(|&v| {
            dataset.views[v]
                .depth_prior
                .clone()
                .map(|d| (dataset.views[v].camera.clone(), d))
        })
        .collect();
    let warmup = if cfg.warmup.iters > 0 && depth_views.len() == train_views.len() {
        let report = depth_warmup_refine(scene, &depth_views, &cfg.warmup)?;
        log::info!("warm-up: PCC loss {:?} -> {:?}", report.initial_loss, report.final_loss);
        if let Some(o) = outputs.as_mut() {
            o.line("warmup", &report)?;
        }
        Some(report)
    } else {
        if cfg.warmup.iters > 0 {
            log::info!("warm-up skipped: not every training view has a depth prior");
        }
        None
    };

    let targets: Vec<Option<ViewTargets>> = dataset
        .views
        .iter()
        .map(|v| match (v.split, &v.prior) {
            (Split::Train, Some(p)) => ViewTargets::new(v.low.clone(), Some(p.clone()), cfg.loss.eps_smooth).map(Some),
            _ => Ok(None),
        })
        .collect::<Result<_>>()?;

    let mut adam = AdamState::new(&scene.store);
    let mut order = ViewOrder::new(train_views, cfg.seed);
    let mut lr_scale = [1.0f64; ParamGroup::ALL.len()];
    let group_slot = |g: ParamGroup| ParamGroup::ALL.iter().position(|&x| x == g).unwrap();
    let mut snapshot: Option<(ParamStore, AdamState, Gradients, usize)> = None;
    let mut failures = 0usize;
    let mut records = Vec::with_capacity(cfg.iterations);
    let mut events = Vec::new();
    let mut iter = 0usize;

    while iter < cfg.iterations {
        let weights = lambda_schedule(iter, &cfg.loss);
        let mut grads = scene.store.zero_grads();
        let mut sums = IterRecord {
            iter,
            view: String::new(),
            recon: 0.0,
            ill: 0.0,
            re: 0.0,
            enh: None,
            total: 0.0,
            lambda_re: weights.re,
            lambda_enh: weights.enh,
        };
        let k = cfg.views_per_step as f64;
        let mut names = Vec::with_capacity(cfg.views_per_step);
        for _ in 0..cfg.views_per_step {
            let v = order.next();
            let view = &dataset.views[v];
            let opts = RenderOptions {
                enhanced: weights.enh > 0.0,
                view: dataset.embedding_index(v),
            };
            let (maps, state) = match render(scene, &view.camera, &opts) {
                Ok(r) => r,
                Err(Error::Numerical(_)) => {
                    sums.total = f64::NAN;
                    names.push(view.name.clone());
                    break;
                }
                Err(e) => return Err(e),
            };
            let target = targets[v].as_ref().expect("training views have targets");
            let (bundle, mut mg) = total_loss(&maps, target, iter, &cfg.loss, None)?;
            if k > 1.0 {
                for buf in [
                    &mut mg.reflectance,
                    &mut mg.illumination,
                    &mut mg.residual,
                    &mut mg.enhanced,
                ] {
                    buf.iter_mut().for_each(|g| *g /= k);
                }
            }
            sums.recon += bundle.recon / k;
            sums.ill += bundle.ill / k;
            sums.re += bundle.re / k;
            sums.enh = bundle.enh.map(|e| sums.enh.unwrap_or(0.0) + e / k);
            sums.total += bundle.total / k;
            names.push(view.name.clone());
            if bundle.total.is_finite() {
                grads.add_assign(&render_backward(scene, &view.camera, &state, &mg));
            }
        }
        sums.view = names.join(",");

        if !sums.total.is_finite() || !scene.store.all_finite() {
            failures += 1;
            if failures >= MAX_CONSECUTIVE_FAILURES {
                return Err(Error::Numerical(format!(
                    "{failures} consecutive non-finite losses at iteration {iter}"
                )));
            }
            if let Some((store, state, prev_grads, prev_iter)) = snapshot.as_ref() {
                let group = group_change(store, &scene.store).unwrap_or(ParamGroup::DecompositionDecoder);
                lr_scale[group_slot(group)] *= 0.5;
                log::warn!(
                    "iteration {iter}: non-finite loss; redoing the previous update with halved lr for {group:?}"
                );
                // replay the previous update from its saved state so the log keeps one line per iteration
                scene.store = store.clone();
                adam = state.clone();
                let mut g = prev_grads.clone();
                adam.step(&mut scene.store, &mut g, |grp| {
                    cfg.lr.schedule(grp).at(*prev_iter, cfg.iterations) * lr_scale[group_slot(grp)]
                });
                let event = TrainEvent::RolledBack {
                    iter,
                    group,
                    lr_scale: lr_scale[group_slot(group)],
                };
                if let Some(o) = outputs.as_mut() {
                    o.line("event", &event)?;
                }
                events.push(event);
            } else {
                log::warn!("iteration {iter}: non-finite loss before any update");
            }
            continue;
        }
        failures = 0;

        snapshot = Some((scene.store.clone(), adam.clone(), grads.clone(), iter));
        let total_iters = cfg.iterations;
        let report = adam.step(&mut scene.store, &mut grads, |g| {
            cfg.lr.schedule(g).at(iter, total_iters) * lr_scale[group_slot(g)]
        });
        if !report.skipped_groups.is_empty() {
            let event = TrainEvent::SkippedGroups {
                iter,
                groups: report.skipped_groups,
            };
            if let Some(o) = outputs.as_mut() {
                o.line("event", &event)?;
            }
            events.push(event);
        }

        if let Some(o) = outputs.as_mut() {
            o.line("iter", &sums)?;
        }
        log::debug!("iter {iter}: total {:.6} recon {:.6}", sums.total, sums.recon);
        records.push(sums);
        iter += 1;

        if cfg.preview_every > 0 && iter % cfg.preview_every == 0 {
            if let Some(dir) = out {
                write_previews(scene, dataset, iter, &dir.join("previews"))?;
            }
        }
    }

    if let Some(dir) = out {
        if let Some(o) = outputs.as_mut() {
            o.log.flush().map_err(|e| Error::io(dir.join("train_log.jsonl"), e))?;
        }
        save_checkpoint(scene, &dir.join("scene.ckpt"))?;
    }
    Ok(TrainReport {
        warmup,
        records,
        events,
    })
}

/// Enhanced render of a camera with the transient branch off.
pub fn render_enhanced(scene: &SceneModel, cam: &crate::geometry::Camera) -> Result<Image> {
    let (maps, _) = render(
        scene,
        cam,
        &RenderOptions {
            enhanced: true,
            view: None,
        },
    )?;
    Ok(compose_enhanced(&maps).expect("enhanced map requested"))
}
