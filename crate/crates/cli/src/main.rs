mod args;
mod run;

use std::path::Path;
use std::process::ExitCode;

use clap::Parser;
use llgs_core::eval::evaluate_directories;
use llgs_core::geometry::{load_ply, Camera, Image};
use llgs_core::llgim::{build_anchor_candidates, stochastic_prune, AnchorSet, PruneConfig};
use llgs_core::render::{compose_enhanced, compose_low, render, RenderOptions};
use llgs_core::scene::{load_checkpoint, SceneModel};
use llgs_core::synth::{generate, SynthSpec};
use llgs_core::train::{initialize_scene, train_logged, Dataset, Manifest, Split, MANIFEST_FILE};
use llgs_core::Error;
use serde::Serialize;

use args::{Cli, Command, Mode, SplitArg};
use run::RunConfig;

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

enum Failure {
    Usage(String),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

type CmdResult = std::result::Result<(), Failure>;

fn io_err(path: &Path, e: std::io::Error) -> Failure {
    Failure::Core(Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn print_json<T: Serialize>(value: &T) -> CmdResult {
    println!("{}", serde_json::to_string_pretty(value).map_err(Error::from)?);
    Ok(())
}

fn cmd_synth(spec: Option<&Path>, out: &Path, seed: u64) -> CmdResult {
    let spec = match spec {
        Some(p) => SynthSpec::load(p)?,
        None => SynthSpec::default(),
    };
    let bundle = generate(&spec, seed)?;
    bundle.write(out)?;
    log::info!("wrote {} views to {}", bundle.views.len(), out.display());
    Ok(())
}

fn cmd_init(cloud: &Path, out: &Path, r: f64, cfg: PruneConfig) -> CmdResult {
    let cloud = load_ply(cloud)?;
    let candidates = build_anchor_candidates(&cloud, r)?;
    let anchors = stochastic_prune(&candidates, &cfg)?;
    log::info!("{} candidates, {} anchors retained", candidates.len(), anchors.len());
    anchors.save_json(out)?;
    Ok(())
}

#[derive(Serialize)]
struct TrainSummary {
    iterations: usize,
    anchors: usize,
    final_total: Option<f64>,
    final_recon: Option<f64>,
    rollbacks: usize,
    checkpoint: String,
}

fn cmd_train(config: &Path, seed: Option<u64>) -> CmdResult {
    let (mut run, text) = RunConfig::load(config)?;
    if let Some(s) = seed {
        run.train.seed = s;
    }
    let dataset = Dataset::load_dir(&run.dataset, Some(run.train.loss.gamma))?;
    let anchors = AnchorSet::load_json(&run.anchors)?;
    let mut scene = initialize_scene(&anchors, &dataset, &run.train)?;
    let report = train_logged(&mut scene, &dataset, &run.train, Some(&run.out), Some(&text))?;
    let last = report.records.last();
    print_json(&TrainSummary {
        iterations: report.records.len(),
        anchors: scene.n_anchors,
        final_total: last.map(|r| r.total),
        final_recon: last.map(|r| r.recon),
        rollbacks: report.events.len(),
        checkpoint: run.out.join("scene.ckpt").display().to_string(),
    })
}

/// Min-max range recorded next to maps that are normalized for export.
#[derive(Serialize)]
struct RangeSidecar {
    min: f64,
    max: f64,
}

fn normalized(img: &Image) -> (Image, RangeSidecar) {
    let (min, max) = img.min_max();
    let span = max - min;
    let out = if span > 0.0 {
        img.map(|v| (v - min) / span)
    } else {
        img.map(|_| 0.0)
    };
    (out, RangeSidecar { min, max })
}

fn save_map(img: &Image, normalize: bool, path: &Path) -> CmdResult {
    if normalize {
        let (img, range) = normalized(img);
        img.save_png(path)?;
        let side = path.with_extension("json");
        let text = serde_json::to_string_pretty(&range).map_err(Error::from)?;
        std::fs::write(&side, text).map_err(|e| io_err(&side, e))?;
    } else {
        img.save_png(path)?;
    }
    Ok(())
}

fn check_view_index(scene: &SceneModel, view_index: Option<usize>) -> CmdResult {
    match view_index {
        Some(v) if v >= scene.n_views => Err(Failure::Core(Error::Invalid(format!(
            "view index {v} out of range: the scene has {} training embeddings",
            scene.n_views
        )))),
        _ => Ok(()),
    }
}

fn render_mode(scene: &SceneModel, cam: &Camera, mode: Mode, view_index: Option<usize>, out: &Path) -> CmdResult {
    let opts = RenderOptions {
        enhanced: mode == Mode::Enhanced,
        view: match mode {
            Mode::Low | Mode::Residual => view_index,
            _ => None,
        },
    };
    let (maps, _) = render(scene, cam, &opts)?;
    match mode {
        Mode::Low => save_map(&compose_low(&maps), false, out),
        Mode::Enhanced => save_map(&compose_enhanced(&maps).expect("enhanced map requested"), false, out),
        Mode::Reflectance => save_map(&maps.reflectance, false, out),
        Mode::Illumination => save_map(&maps.illumination, true, out),
        Mode::Depth => save_map(&maps.depth, true, out),
        Mode::Residual => save_map(maps.residual.as_ref().expect("residual requested"), true, out),
    }
}

fn load_manifest(dir: &Path) -> std::result::Result<Manifest, Failure> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
    Ok(serde_json::from_str(&text).map_err(Error::from)?)
}

struct RenderArgs<'a> {
    scene: &'a Path,
    camera: Option<&'a Path>,
    dataset: Option<&'a Path>,
    split: SplitArg,
    mode: Mode,
    view_index: Option<usize>,
    out: &'a Path,
}

fn cmd_render(a: RenderArgs) -> CmdResult {
    if a.mode == Mode::Residual && a.view_index.is_none() {
        return Err(Failure::Usage(
            "--mode residual needs --view-index: the residual map is driven by a training view's embedding".into(),
        ));
    }
    let scene = load_checkpoint(a.scene)?;
    check_view_index(&scene, a.view_index)?;
    match (a.camera, a.dataset) {
        (Some(cam), _) => render_mode(&scene, &Camera::load_json(cam)?, a.mode, a.view_index, a.out),
        (None, Some(dir)) => {
            let manifest = load_manifest(dir)?;
            std::fs::create_dir_all(a.out).map_err(|e| io_err(a.out, e))?;
            for v in &manifest.views {
                let keep = match a.split {
                    SplitArg::All => true,
                    SplitArg::Train => v.split == Split::Train,
                    SplitArg::Test => v.split == Split::Test,
                };
                if keep {
                    render_mode(
                        &scene,
                        &v.camera,
                        a.mode,
                        a.view_index,
                        &a.out.join(format!("{}.png", v.name)),
                    )?;
                }
            }
            Ok(())
        }
        (None, None) => Err(Failure::Usage("render needs --camera or --dataset".into())),
    }
}

fn cmd_decompose(scene: &Path, camera: &Path, view_index: Option<usize>, out: &Path) -> CmdResult {
    let scene = load_checkpoint(scene)?;
    check_view_index(&scene, view_index)?;
    let cam = Camera::load_json(camera)?;
    std::fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    let mut modes = vec![
        (Mode::Low, "low"),
        (Mode::Enhanced, "enhanced"),
        (Mode::Reflectance, "reflectance"),
        (Mode::Illumination, "illumination"),
        (Mode::Depth, "depth"),
    ];
    if view_index.is_some() {
        modes.push((Mode::Residual, "residual"));
    }
    for (mode, name) in modes {
        render_mode(&scene, &cam, mode, view_index, &out.join(format!("{name}.png")))?;
    }
    Ok(())
}

fn cmd_eval(pred: &Path, reference: &Path, align: bool, out: Option<&Path>) -> CmdResult {
    let report = evaluate_directories(pred, reference, align)?;
    if let Some(path) = out {
        let text = serde_json::to_string_pretty(&report).map_err(Error::from)?;
        std::fs::write(path, text).map_err(|e| io_err(path, e))?;
    }
    print_json(&report)
}

fn dispatch(cli: Cli) -> CmdResult {
    let seed = cli.seed;
    match cli.command {
        Command::Synth { spec, out } => cmd_synth(spec.as_deref(), &out, seed.unwrap_or(0)),
        Command::Init {
            cloud,
            out,
            r,
            tau0,
            beta,
            rounds,
        } => {
            let cfg = PruneConfig {
                tau0,
                beta,
                rounds,
                seed: seed.unwrap_or(0),
                ..PruneConfig::default()
            };
            cmd_init(&cloud, &out, r, cfg)
        }
        Command::Train { config } => cmd_train(&config, seed),
        Command::Render {
            scene,
            camera,
            dataset,
            split,
            mode,
            view_index,
            out,
        } => cmd_render(RenderArgs {
            scene: &scene,
            camera: camera.as_deref(),
            dataset: dataset.as_deref(),
            split,
            mode,
            view_index,
            out: &out,
        }),
        Command::Decompose {
            scene,
            camera,
            view_index,
            out,
        } => cmd_decompose(&scene, &camera, view_index, &out),
        Command::Eval {
            pred,
            reference,
            align,
            out,
        } => cmd_eval(&pred, &reference, align, out.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("LLGS_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(EXIT_USAGE);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: could not start the worker pool: {e}");
            return ExitCode::from(EXIT_DATA);
        }
    }
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Core(e)) => {
            eprintln!("error: {e}");
            match e {
                Error::Numerical(_) => ExitCode::from(EXIT_NUMERICAL),
                _ => ExitCode::from(EXIT_DATA),
            }
        }
    }
}
