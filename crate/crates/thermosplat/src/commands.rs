//! What each subcommand does, without argument parsing.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};
use thermosplat_core::appearance::AppearanceDims;
use thermosplat_core::autodiff::{GradCheckOptions, GradCheckReport};
use thermosplat_core::gradcheck::{self, Scale};
use thermosplat_core::image::Image;
use thermosplat_core::loss;
use thermosplat_core::model::{self, PipelineConfig, View};
use thermosplat_core::radiation::RadiationConfig;
use thermosplat_core::scene::{self, Scene, SceneSpec};
use thermosplat_core::trainer::{self, TrainConfig, TrainEvent, TrainOutcome};

use crate::checkpoint::{self, Checkpoint};
use crate::dataset::{self, Dataset};
use crate::error::{Error, Result};
use crate::metrics_log::{self, JsonLines};
use crate::pfm::{self, FloatImage};
use crate::{colormap, config, png_io};

pub const SCENE_SPEC: &str = "scene.toml";
pub const GT_CHECKPOINT: &str = "gt";
pub const LOSS_LOG: &str = "loss.jsonl";
pub const METRICS_LOG: &str = "metrics.jsonl";

/// Training config under which the ground-truth model of `spec` renders its own views.
pub fn ground_truth_config(spec: &SceneSpec) -> TrainConfig {
    TrainConfig {
        seed: spec.seed,
        neighbors: 8,
        appearance: AppearanceDims { sh_degree: spec.sh_degree, embed_dim: spec.embed_dim, ..AppearanceDims::default() },
        pipeline: PipelineConfig { radiation: spec.radiation(), ..PipelineConfig::default() },
        ..TrainConfig::default()
    }
}

/// Render the oracle scene into `out` as a dataset, with its spec and ground-truth checkpoint.
pub fn genscene(spec: &SceneSpec, out: &Path) -> Result<Scene> {
    let scene = scene::generate_scene(spec)?;
    std::fs::create_dir_all(out).map_err(Error::io(out))?;
    dataset::write(out, &scene.views, &spec.radiation())?;
    config::save(&out.join(SCENE_SPEC), spec)?;
    let gt = Checkpoint {
        model: scene.target.clone(),
        config: ground_truth_config(spec),
        cameras: scene.views.iter().map(|v| v.camera.clone()).collect(),
    };
    checkpoint::save(&out.join(GT_CHECKPOINT), &gt)?;
    Ok(scene)
}

/// `cfg` with the temperature bounds of the dataset it will be trained on.
pub fn resolve_for_dataset(mut cfg: TrainConfig, data: &Dataset) -> TrainConfig {
    cfg.pipeline.radiation.t_min = data.manifest.t_min;
    cfg.pipeline.radiation.t_max = data.manifest.t_max;
    cfg
}

/// Train on `data` and write the checkpoint plus step and eval logs to `out`.
pub fn train(data: &Dataset, cfg: &TrainConfig, out: &Path, progress: &mut dyn Write) -> Result<TrainOutcome> {
    cfg.validate()?;
    std::fs::create_dir_all(out).map_err(Error::io(out))?;
    config::save(&out.join(checkpoint::CONFIG), cfg)?;
    let mut steps = JsonLines::create(&out.join(LOSS_LOG))?;
    let mut evals = JsonLines::create(&out.join(METRICS_LOG))?;
    let mut failure: Option<Error> = None;
    let outcome = trainer::train(&data.views, cfg, &mut |e| {
        let r = match e {
            TrainEvent::Step(s) => steps.write(metrics_log::step_object(s)),
            TrainEvent::Eval(r) => {
                let _ = writeln!(
                    progress,
                    "step {:>6}  rgb {:6.2} dB  thermal {:6.2} dB  mae {:.3} C  gaussians {}",
                    r.step, r.psnr_rgb, r.psnr_t, r.mae_c, r.gaussians
                );
                evals.write(metrics_log::eval_object(r))
            }
            TrainEvent::Densify { step, report } => {
                let _ = writeln!(
                    progress,
                    "step {step:>6}  densify: {} cloned, {} split, {} pruned, {} -> {}",
                    report.cloned, report.split, report.pruned, report.before, report.after
                );
                Ok(())
            }
        };
        if let (Err(e), None) = (r, &failure) {
            failure = Some(e);
        }
    })?;
    if let Some(e) = failure {
        return Err(e);
    }
    steps.flush()?;
    evals.flush()?;
    let ckpt = Checkpoint { model: outcome.model.clone(), config: cfg.clone(), cameras: data.views.iter().map(|v| v.camera.clone()).collect() };
    checkpoint::save(out, &ckpt)?;
    Ok(outcome)
}

/// Thermal render in Celsius, unclamped.
pub fn celsius(thermal: &Image, rad: &RadiationConfig) -> FloatImage {
    FloatImage::from_image(&thermal.map(|t| rad.denormalize(t)))
}

/// Render camera `view` of the checkpoint into `out`; returns the files written.
pub fn render(ckpt: &Checkpoint, view: usize, out: &Path) -> Result<Vec<PathBuf>> {
    let cam = ckpt.cameras.get(view).ok_or_else(|| {
        Error::Core(thermosplat_core::Error::Usage(format!("view {view} out of range: checkpoint has {} cameras", ckpt.cameras.len())))
    })?;
    std::fs::create_dir_all(out).map_err(Error::io(out))?;
    let pipe = &ckpt.config.pipeline;
    let r = model::render(&ckpt.model, cam, pipe);
    let stem = format!("{view:03}");
    let files = [
        out.join(format!("{stem}_rgb.png")),
        out.join(format!("{stem}_thermal.pfm")),
        out.join(format!("{stem}_thermal.png")),
        out.join(format!("{stem}_depth.pfm")),
        out.join(format!("{stem}_depth_thermal.pfm")),
    ];
    png_io::save_rgb(&files[0], &r.rgb)?;
    pfm::save(&files[1], &celsius(&r.thermal, &pipe.radiation))?;
    let preview = png_io::encode_rgb8(r.thermal.width, r.thermal.height, &colormap::apply(&r.thermal))?;
    std::fs::write(&files[2], preview).map_err(Error::io(&files[2]))?;
    pfm::save(&files[3], &FloatImage::from_image(&r.depth_c))?;
    pfm::save(&files[4], &FloatImage::from_image(&r.depth_t))?;
    config::save(&out.join(checkpoint::CONFIG), &ckpt.config)?;
    Ok(files.to_vec())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalSummary {
    pub psnr_rgb: f64,
    pub ssim_rgb: f64,
    pub psnr_t: f64,
    pub ssim_t: f64,
    pub mae_c: f64,
    pub num_gaussians: usize,
}

impl EvalSummary {
    pub fn to_json(&self) -> Value {
        json!({
            "psnr_rgb": metrics_log::metric_value(self.psnr_rgb),
            "ssim_rgb": metrics_log::metric_value(self.ssim_rgb),
            "psnr_t": metrics_log::metric_value(self.psnr_t),
            "ssim_t": metrics_log::metric_value(self.ssim_t),
            "mae_c": metrics_log::metric_value(self.mae_c),
            "num_gaussians": self.num_gaussians,
        })
    }
}

/// Renders as they would be stored: 8-bit RGB and `f32` Celsius thermal normalized with `target`.
fn stored(rgb: &Image, thermal: &Image, source: &RadiationConfig, target: &RadiationConfig) -> (Image, Image) {
    let rgb = rgb.map(|v| png_io::quantize(v) as f64 / 255.0);
    let th = dataset::thermal_celsius(thermal, source).to_image();
    let th = th.map(|c| target.normalize(c.clamp(target.t_min, target.t_max)));
    (rgb, th)
}

/// Mean metrics of the checkpoint over every view of `data`, computed on stored-precision renders.
pub fn evaluate(ckpt: &Checkpoint, data: &Dataset) -> Result<EvalSummary> {
    if data.views.is_empty() {
        return Err(Error::Dataset(String::from("no views to evaluate")));
    }
    let pipe = &ckpt.config.pipeline;
    let target = data.manifest.radiation();
    let graph = ckpt.model.build_graph(0);
    let mut acc = [0.0; 5];
    for View { camera, rgb, thermal } in &data.views {
        let r = model::render_with_graph(&ckpt.model, camera, &graph, pipe);
        let (c, t) = stored(&r.rgb, &r.thermal, &pipe.radiation, &target);
        let mc = loss::metrics(&c, rgb, None)?;
        let mt = loss::metrics(&t, thermal, Some((target.t_min, target.t_max)))?;
        acc[0] += mc.psnr_db;
        acc[1] += mc.ssim;
        acc[2] += mt.psnr_db;
        acc[3] += mt.ssim;
        acc[4] += mt.mae_celsius.unwrap_or(0.0);
    }
    let n = data.views.len() as f64;
    Ok(EvalSummary {
        psnr_rgb: acc[0] / n,
        ssim_rgb: acc[1] / n,
        psnr_t: acc[2] / n,
        ssim_t: acc[3] / n,
        mae_c: acc[4] / n,
        num_gaussians: ckpt.model.cloud.len(),
    })
}

pub const GRADCHECK_TOLERANCE: f64 = 1e-3;

/// Full-pipeline finite-difference audit. The step defaults to `1e-4` for the tiny scene and
/// `1e-6` for the small one, whose larger images put more L1 and clamp kinks within reach.
pub fn gradcheck(scale: Scale, seed: u64, h: Option<f64>) -> Result<GradCheckReport> {
    let opts = match scale {
        Scale::Tiny => GradCheckOptions { h: h.unwrap_or(1e-4), per_array: 16, max_total: 400, ..GradCheckOptions::default() },
        Scale::Small => GradCheckOptions { h: h.unwrap_or(1e-6), per_array: 8, max_total: 300, ..GradCheckOptions::default() },
    };
    Ok(gradcheck::pipeline_gradcheck(scale, seed, &opts)?)
}
