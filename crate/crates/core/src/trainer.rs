//! Optimization loop: Adam, loss-weight schedule, adaptive density, K-NN refresh.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::appearance::AppearanceDims;
use crate::error::{Error, Result};
use crate::gaussian::GaussianCloud;
use crate::heat::NeighborGraph;
use crate::loss::{self, LossBreakdown};
use crate::math;
use crate::model::{self, GradStats, Model, PipelineConfig, View};
use crate::scene::{self, InitSpec};

/// Per-group Adam learning rates.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct LearningRates {
    /// Initial position rate, multiplied by the scene extent.
    pub position: f64,
    /// Position rate reached at the last iteration (exponential decay), times extent.
    pub position_final: f64,
    pub opacity: f64,
    pub scale: f64,
    pub rotation: f64,
    pub sh: f64,
    pub embedding: f64,
    pub t_base: f64,
    /// Projections and MLPs of the appearance model.
    pub network: f64,
    /// `f_grad`, `f_q`, `w_a`, `w_s`.
    pub heat: f64,
    /// Depth-uncertainty filter.
    pub uncertainty: f64,
    /// Factor every non-position rate reaches at the last iteration (exponential decay).
    pub final_factor: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            position: 1.6e-3,
            position_final: 1.6e-5,
            opacity: 0.05,
            scale: 5e-3,
            rotation: 1e-3,
            sh: 2.5e-3,
            embedding: 1e-3,
            t_base: 2.5e-2,
            network: 1e-3,
            heat: 1e-3,
            uncertainty: 1e-3,
            final_factor: 0.1,
        }
    }
}

impl LearningRates {
    /// Rate for the parameter array called `name` at `step` of `iterations`.
    pub fn for_name(&self, name: &str, step: usize, iterations: usize, extent: f64) -> f64 {
        let r = if iterations <= 1 { 0.0 } else { (step as f64 / (iterations - 1) as f64).min(1.0) };
        let lerp_log = |a: f64, b: f64| math::exp((1.0 - r) * math::ln(a.max(1e-300)) + r * math::ln(b.max(1e-300)));
        if name == "mu" {
            return lerp_log(self.position, self.position_final) * extent;
        }
        lerp_log(1.0, self.final_factor) * self.base_rate(name)
    }

    fn base_rate(&self, name: &str) -> f64 {
        match name {
            "rot" => self.rotation,
            "log_scale" => self.scale,
            "opacity_c" | "opacity_t" => self.opacity,
            "sh" => self.sh,
            "embedding" => self.embedding,
            "t_base" => self.t_base,
            "f_grad.weight" | "f_grad.bias" | "f_q.weight" | "f_q.bias" | "w_a" | "w_s" => self.heat,
            "psi.weight" | "psi.bias" => self.uncertainty,
            _ => self.network,
        }
    }
}

/// Linear decay of `lambda_boltz` between `window_start` and `window_end`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct BoltzSchedule {
    pub start: f64,
    pub end: f64,
    pub window_start: usize,
    pub window_end: usize,
}

impl Default for BoltzSchedule {
    fn default() -> Self {
        Self { start: 0.05, end: 0.01, window_start: 0, window_end: 1500 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct DensifyConfig {
    pub enabled: bool,
    /// Steps between densification passes.
    pub interval: usize,
    pub start: usize,
    pub stop: usize,
    /// Mean screen-space positional gradient (per pixel) above which a Gaussian is densified.
    pub grad_threshold: f64,
    /// Gaussians whose largest axis is at most this fraction of the extent are cloned, larger ones split.
    pub percent_dense: f64,
    /// Prune when `max(sigmoid(o_c), sigmoid(o_t))` falls below this.
    pub prune_opacity: f64,
    /// No densification once the cloud reaches this size.
    pub max_gaussians: usize,
}

impl Default for DensifyConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            interval: 100,
            start: 300,
            stop: 1500,
            grad_threshold: 1e-4,
            percent_dense: 0.05,
            prune_opacity: 0.005,
            max_gaussians: 600,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct TrainConfig {
    pub iterations: usize,
    pub seed: u64,
    pub lr: LearningRates,
    pub boltz: BoltzSchedule,
    pub densify: DensifyConfig,
    /// Steps between K-NN rebuilds (also rebuilt after every densification).
    pub knn_interval: usize,
    /// Neighbors per Gaussian in the heat transform.
    pub neighbors: usize,
    /// Views per optimizer step.
    pub batch_views: usize,
    /// Steps between evaluations on the training views; zero disables them.
    pub eval_interval: usize,
    /// Lower bound on log-scales after each step.
    pub min_log_scale: f64,
    pub init: InitSpec,
    pub appearance: AppearanceDims,
    pub pipeline: PipelineConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 2000,
            seed: 0,
            lr: LearningRates::default(),
            boltz: BoltzSchedule::default(),
            densify: DensifyConfig::default(),
            knn_interval: 100,
            neighbors: 8,
            batch_views: 1,
            eval_interval: 250,
            min_log_scale: -12.0,
            init: InitSpec::default(),
            appearance: AppearanceDims::default(),
            pipeline: PipelineConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config(String::from("iterations must be at least 1")));
        }
        let b = &self.boltz;
        if b.window_start > b.window_end || b.window_end > self.iterations {
            return Err(Error::Config(format!(
                "boltz window [{}, {}] must lie within [0, {}]",
                b.window_start, b.window_end, self.iterations
            )));
        }
        if self.batch_views == 0 {
            return Err(Error::Config(String::from("batch_views must be at least 1")));
        }
        if self.knn_interval == 0 {
            return Err(Error::Config(String::from("knn_interval must be at least 1")));
        }
        if self.densify.enabled && self.densify.interval == 0 {
            return Err(Error::Config(String::from("densify interval must be at least 1")));
        }
        self.pipeline.weights.validate()?;
        self.pipeline.radiation.validate()?;
        Ok(())
    }
}

/// `lambda_boltz` at `step`: `start` before the window, linear inside, `end` after.
pub fn lambda_boltz_at(step: usize, s: &BoltzSchedule) -> f64 {
    if step <= s.window_start {
        return s.start;
    }
    if step >= s.window_end {
        return s.end;
    }
    let r = (step - s.window_start) as f64 / (s.window_end - s.window_start) as f64;
    s.start + (s.end - s.start) * r
}

/// First and second moments with the same layout as the model.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Model,
    pub v: Model,
    pub t: u64,
}

impl AdamState {
    pub const BETA1: f64 = 0.9;
    pub const BETA2: f64 = 0.999;
    pub const EPS: f64 = 1e-15;

    pub fn new(model: &Model) -> Self {
        Self { m: model.zeros_like(), v: model.zeros_like(), t: 0 }
    }

    /// Re-layout per-Gaussian moments; `None` rows start from zero.
    pub fn remap(&mut self, map: &[Option<usize>]) {
        self.m.cloud = self.m.cloud.gather_or_zero(map);
        self.v.cloud = self.v.cloud.gather_or_zero(map);
    }
}

fn flat(p: &Model) -> Vec<f64> {
    let mut out = Vec::with_capacity(p.param_count());
    p.visit(&mut |_, v| out.extend_from_slice(v));
    out
}

/// One Adam update with a learning rate per named array. Quaternions are renormalized afterwards.
///
/// A non-finite gradient aborts before anything is modified.
pub fn adam_step(model: &mut Model, grad: &Model, state: &mut AdamState, lr: &dyn Fn(&str) -> f64) -> Result<()> {
    if model.param_count() != grad.param_count() || model.param_count() != state.m.param_count() {
        return Err(Error::Shape(format!(
            "model has {} parameters, gradient {}, optimizer state {}",
            model.param_count(),
            grad.param_count(),
            state.m.param_count()
        )));
    }
    if let Some((name, i)) = grad.first_non_finite() {
        return Err(Error::NonFinite { what: String::from("gradient"), location: format!("{name}[{i}]") });
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - libm::pow(AdamState::BETA1, t as f64);
    let c2 = 1.0 - libm::pow(AdamState::BETA2, t as f64);
    let g = flat(grad);
    let mut k = 0;
    state.m.visit_mut(&mut |_, m| {
        for x in m.iter_mut() {
            *x = AdamState::BETA1 * *x + (1.0 - AdamState::BETA1) * g[k];
            k += 1;
        }
    });
    k = 0;
    state.v.visit_mut(&mut |_, v| {
        for x in v.iter_mut() {
            *x = AdamState::BETA2 * *x + (1.0 - AdamState::BETA2) * g[k] * g[k];
            k += 1;
        }
    });
    let m = flat(&state.m);
    let v = flat(&state.v);
    let rot_before = model.cloud.rotations.clone();
    k = 0;
    model.visit_mut(&mut |name, p| {
        let rate = lr(name);
        for x in p.iter_mut() {
            let mh = m[k] / c1;
            let vh = v[k] / c2;
            *x -= rate * mh / (math::sqrt(vh) + AdamState::EPS);
            k += 1;
        }
    });
    for (q, old) in model.cloud.rotations.chunks_exact_mut(4).zip(rot_before.chunks_exact(4)) {
        if q != old {
            let n = math::normalize_quat(&[q[0], q[1], q[2], q[3]]);
            q.copy_from_slice(&n);
        }
    }
    Ok(())
}

/// What one densification pass did.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DensifyReport {
    pub before: usize,
    pub cloned: usize,
    pub split: usize,
    pub pruned: usize,
    pub after: usize,
}

/// Clone or split high-gradient Gaussians, then drop nearly transparent ones.
///
/// Returns the report and the source row of every Gaussian in the new cloud
/// (`None` for freshly created ones), which [`AdamState::remap`] consumes.
pub fn densify_and_prune<R: rand::Rng + ?Sized>(
    cloud: &GaussianCloud,
    stats: &GradStats,
    cfg: &DensifyConfig,
    extent: f64,
    densify: bool,
    rng: &mut R,
) -> Result<(GaussianCloud, Vec<Option<usize>>, DensifyReport)> {
    let n = cloud.len();
    if stats.visible.len() != n {
        return Err(Error::Shape(format!("stats cover {} Gaussians, cloud has {n}", stats.visible.len())));
    }
    let mut report = DensifyReport { before: n, ..DensifyReport::default() };
    let keep = |i: usize| math::sigmoid(cloud.opacity_c[i]).max(math::sigmoid(cloud.opacity_t[i])) >= cfg.prune_opacity;
    let mut out = GaussianCloud::new(cloud.sh_degree, cloud.embed_dim);
    let mut map = Vec::with_capacity(n);
    let mut fresh = Vec::new();
    let mut budget = cfg.max_gaussians.saturating_sub(n);
    for i in 0..n {
        if !keep(i) {
            report.pruned += 1;
            continue;
        }
        let g = cloud.gaussian(i);
        let hot = densify && budget > 0 && stats.visible[i] > 0 && stats.mean2d_norm[i] / stats.visible[i] as f64 > cfg.grad_threshold;
        if !hot {
            out.push(&g);
            map.push(Some(i));
            continue;
        }
        let largest = math::exp(g.log_scale[0].max(g.log_scale[1]).max(g.log_scale[2]));
        budget -= 1;
        if largest <= cfg.percent_dense * extent {
            report.cloned += 1;
            out.push(&g);
            map.push(Some(i));
            fresh.push(g);
        } else {
            report.split += 1;
            let r = math::quat_to_mat(&math::normalize_quat(&g.rot));
            let s = g.log_scale.map(math::exp);
            for child in 0..2 {
                let z: [f64; 3] = core::array::from_fn(|_| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng));
                let local = [z[0] * s[0], z[1] * s[1], z[2] * s[2]];
                let off = math::mat3_vec(&r, &local);
                let mut c = g.clone();
                c.mu = math::add3(&g.mu, &off);
                c.log_scale = g.log_scale.map(|l| l - math::ln(1.6));
                if child == 0 {
                    out.push(&c);
                    map.push(None);
                } else {
                    fresh.push(c);
                }
            }
        }
    }
    for g in &fresh {
        out.push(g);
        map.push(None);
    }
    if out.is_empty() {
        return Err(Error::Optimizer(format!(
            "pruning at opacity {} would remove all {n} Gaussians",
            cfg.prune_opacity
        )));
    }
    report.after = out.len();
    Ok((out, map, report))
}

/// Summary of one optimizer step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub loss: LossBreakdown,
    pub gaussians: usize,
}

/// Mean metrics over the training views.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EvalRecord {
    pub step: usize,
    pub psnr_rgb: f64,
    pub ssim_rgb: f64,
    pub psnr_t: f64,
    pub ssim_t: f64,
    pub mae_c: f64,
    pub gaussians: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrainEvent<'a> {
    Step(&'a StepRecord),
    Eval(&'a EvalRecord),
    Densify { step: usize, report: &'a DensifyReport },
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Model after the last successful step.
    pub model: Model,
    pub steps: Vec<StepRecord>,
    pub evals: Vec<EvalRecord>,
    /// Why training stopped early, if it did.
    pub stopped: Option<Error>,
}

/// Mean PSNR/SSIM/MAE of `model` over `views`. PSNR of identical images is `+inf`.
pub fn evaluate(model: &Model, views: &[View], graph: &NeighborGraph, cfg: &PipelineConfig, step: usize) -> Result<EvalRecord> {
    let mut acc = [0.0; 5];
    let range = (cfg.radiation.t_min, cfg.radiation.t_max);
    for v in views {
        let out = model::render_with_graph(model, &v.camera, graph, cfg);
        let c = loss::metrics(&out.rgb, &v.rgb, None)?;
        let t = loss::metrics(&out.thermal, &v.thermal, Some(range))?;
        acc[0] += c.psnr_db;
        acc[1] += c.ssim;
        acc[2] += t.psnr_db;
        acc[3] += t.ssim;
        acc[4] += t.mae_celsius.unwrap_or(0.0);
    }
    let n = views.len().max(1) as f64;
    Ok(EvalRecord {
        step,
        psnr_rgb: acc[0] / n,
        ssim_rgb: acc[1] / n,
        psnr_t: acc[2] / n,
        ssim_t: acc[3] / n,
        mae_c: acc[4] / n,
        gaussians: model.cloud.len(),
    })
}

/// Model built from `cfg.init` and `cfg.appearance`.
pub fn initial_model(cfg: &TrainConfig) -> Result<Model> {
    let cloud = scene::random_cloud(&cfg.init, cfg.appearance.sh_degree, cfg.appearance.embed_dim, cfg.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_a11c);
    Model::new(cloud, &cfg.appearance, cfg.neighbors, &mut rng)
}

/// Train from the initial model given by `cfg`.
pub fn train(views: &[View], cfg: &TrainConfig, on_event: &mut dyn FnMut(TrainEvent<'_>)) -> Result<TrainOutcome> {
    let model = initial_model(cfg)?;
    train_from(model, views, cfg, on_event)
}

/// Train starting from `model`. Deterministic in `cfg.seed`.
///
/// Zero iterations return `model` untouched without validating the rest of `cfg`.
pub fn train_from(mut model: Model, views: &[View], cfg: &TrainConfig, on_event: &mut dyn FnMut(TrainEvent<'_>)) -> Result<TrainOutcome> {
    if cfg.iterations == 0 {
        return Ok(TrainOutcome { model, steps: Vec::new(), evals: Vec::new(), stopped: None });
    }
    cfg.validate()?;
    if views.is_empty() {
        return Err(Error::Usage(String::from("training needs at least one view")));
    }
    model.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::new(&model);
    let mut graph = model.build_graph(0);
    let mut stats = GradStats::new(model.cloud.len());
    let mut order: Vec<usize> = Vec::new();
    let mut out = TrainOutcome { model: model.clone(), steps: Vec::new(), evals: Vec::new(), stopped: None };
    let extent = cfg.init.extent;
    let mut pipeline = cfg.pipeline.clone();
    let batch = cfg.batch_views.min(views.len());
    for step in 0..cfg.iterations {
        if order.len() < batch {
            let mut next: Vec<usize> = (0..views.len()).collect();
            next.shuffle(&mut rng);
            order.extend(next);
        }
        let picked: Vec<&View> = order.drain(..batch).map(|i| &views[i]).collect();
        pipeline.weights.lambda_boltz = lambda_boltz_at(step, &cfg.boltz);
        let (parts, grad, st) = match model::objective_and_grad(&model, &picked, &graph, &pipeline) {
            Ok(r) => r,
            Err(e @ Error::NonFinite { .. }) => {
                out.stopped = Some(e);
                break;
            }
            Err(e) => return Err(e),
        };
        let before = model.clone();
        let lr = |name: &str| cfg.lr.for_name(name, step, cfg.iterations, extent);
        if let Err(e) = adam_step(&mut model, &grad, &mut adam, &lr) {
            out.stopped = Some(e);
            break;
        }
        model.cloud.clamp_log_scales(cfg.min_log_scale);
        if let Some((name, i)) = model.first_non_finite() {
            out.stopped = Some(Error::NonFinite { what: String::from("parameter"), location: format!("{name}[{i}] after step {step}") });
            model = before;
            break;
        }
        stats.merge(&st);
        let rec = StepRecord { step, loss: parts, gaussians: model.cloud.len() };
        on_event(TrainEvent::Step(&rec));
        out.steps.push(rec);
        let done = step + 1;
        let d = &cfg.densify;
        let mut rebuilt = false;
        if d.enabled && done % d.interval == 0 && done >= d.start && done < cfg.iterations {
            let (cloud, map, report) = densify_and_prune(&model.cloud, &stats, d, extent, done <= d.stop, &mut rng)?;
            model.cloud = cloud;
            adam.remap(&map);
            stats = GradStats::new(model.cloud.len());
            graph = model.build_graph(done);
            rebuilt = true;
            on_event(TrainEvent::Densify { step: done, report: &report });
        }
        if !rebuilt && done % cfg.knn_interval == 0 {
            graph = model.build_graph(done);
        }
        if cfg.eval_interval > 0 && (done % cfg.eval_interval == 0 || done == cfg.iterations) {
            let rec = evaluate(&model, views, &graph, &pipeline, done)?;
            on_event(TrainEvent::Eval(&rec));
            out.evals.push(rec);
        }
    }
    out.model = model;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::Gaussian;
    use alloc::vec;

    fn one(o: f64) -> Gaussian {
        Gaussian {
            mu: [0.0; 3],
            rot: [1.0, 0.0, 0.0, 0.0],
            log_scale: [-3.0; 3],
            opacity_c: math::logit(o),
            opacity_t: math::logit(o),
            sh: vec![0.1; 3],
            embedding: vec![0.2, -0.1],
            t_base: 0.3,
        }
    }

    fn tiny_model() -> Model {
        let mut cloud = GaussianCloud::new(0, 2);
        for i in 0..3 {
            let mut g = one(0.5);
            g.mu = [0.3 * i as f64, 0.0, 0.0];
            g.rot = [1.0, 0.2 * i as f64, 0.0, 0.1];
            cloud.push(&g);
        }
        let dims = AppearanceDims { sh_degree: 0, embed_dim: 2, view_levels: 1, pos_levels: 1, feature_dim: 2, hidden: 3 };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        Model::new(cloud, &dims, 2, &mut rng).unwrap()
    }

    #[test]
    fn boltz_schedule_examples() {
        let s = BoltzSchedule { start: 0.05, end: 0.01, window_start: 0, window_end: 1000 };
        assert_eq!(lambda_boltz_at(0, &s), 0.05);
        assert_eq!(lambda_boltz_at(1000, &s), 0.01);
        assert!((lambda_boltz_at(500, &s) - 0.03).abs() < 1e-15);
        assert_eq!(lambda_boltz_at(5000, &s), 0.01);
        let late = BoltzSchedule { window_start: 200, window_end: 400, ..s };
        assert_eq!(lambda_boltz_at(100, &late), 0.05);
    }

    #[test]
    fn config_rejects_bad_window() {
        let mut c = TrainConfig::default();
        c.boltz.window_end = c.iterations + 1;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        c = TrainConfig { iterations: 0, ..TrainConfig::default() };
        assert!(c.validate().is_err());
        assert!(TrainConfig::default().validate().is_ok());
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut m = tiny_model();
        m.cloud.normalize_rotations();
        let before = m.clone();
        let mut st = AdamState::new(&m);
        let zero = m.zeros_like();
        adam_step(&mut m, &zero, &mut st, &|_| 0.1).unwrap();
        assert_eq!(st.t, 1);
        assert_eq!(flat(&m), flat(&before));
    }

    #[test]
    fn constant_gradient_moves_against_sign() {
        let mut m = tiny_model();
        let start = m.cloud.positions[0];
        let mut g = m.zeros_like();
        g.cloud.positions[0] = 0.7;
        g.cloud.positions[1] = -0.2;
        let y0 = m.cloud.positions[1];
        let mut st = AdamState::new(&m);
        for _ in 0..50 {
            adam_step(&mut m, &g, &mut st, &|_| 0.01).unwrap();
        }
        assert!(m.cloud.positions[0] < start - 0.4);
        assert!(m.cloud.positions[1] > y0 + 0.4);
    }

    #[test]
    fn quaternions_are_unit_after_step() {
        let mut m = tiny_model();
        let mut g = m.zeros_like();
        g.cloud.rotations.iter_mut().enumerate().for_each(|(k, x)| *x = 0.3 - 0.1 * k as f64);
        let mut st = AdamState::new(&m);
        adam_step(&mut m, &g, &mut st, &|_| 0.2).unwrap();
        for q in m.cloud.rotations.chunks_exact(4) {
            let n: f64 = q.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn nan_gradient_aborts_without_change() {
        let mut m = tiny_model();
        let before = m.clone();
        let mut g = m.zeros_like();
        g.cloud.log_scales[4] = f64::NAN;
        let mut st = AdamState::new(&m);
        match adam_step(&mut m, &g, &mut st, &|_| 0.1) {
            Err(Error::NonFinite { location, .. }) => assert_eq!(location, "log_scale[4]"),
            other => panic!("{other:?}"),
        }
        assert_eq!(m, before);
        assert_eq!(st.t, 0);
    }

    fn stats(n: usize, grad: f64) -> GradStats {
        GradStats { mean2d_norm: vec![grad; n], visible: vec![1; n], max_radius: vec![1.0; n] }
    }

    #[test]
    fn cold_cloud_is_unchanged() {
        let m = tiny_model();
        let cfg = DensifyConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (c, map, r) = densify_and_prune(&m.cloud, &stats(3, 0.0), &cfg, 1.0, true, &mut rng).unwrap();
        assert_eq!(c, m.cloud);
        assert_eq!(map, vec![Some(0), Some(1), Some(2)]);
        assert_eq!((r.cloned, r.split, r.pruned), (0, 0, 0));
    }

    #[test]
    fn transparent_gaussian_is_pruned() {
        let mut cloud = GaussianCloud::new(0, 2);
        cloud.push(&one(0.5));
        cloud.push(&one(0.001));
        let cfg = DensifyConfig { prune_opacity: 0.005, ..DensifyConfig::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (c, map, r) = densify_and_prune(&cloud, &stats(2, 0.0), &cfg, 1.0, true, &mut rng).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(map, vec![Some(0)]);
        assert_eq!(r.pruned, 1);
        let mut all = GaussianCloud::new(0, 2);
        all.push(&one(0.001));
        assert!(matches!(densify_and_prune(&all, &stats(1, 0.0), &cfg, 1.0, true, &mut rng), Err(Error::Optimizer(_))));
    }

    #[test]
    fn clone_copies_attributes_and_split_shrinks() {
        let mut cloud = GaussianCloud::new(0, 2);
        cloud.push(&one(0.5));
        let mut big = one(0.5);
        big.log_scale = [math::ln(0.5); 3];
        cloud.push(&big);
        let cfg = DensifyConfig { grad_threshold: 1e-3, percent_dense: 0.1, ..DensifyConfig::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (c, map, r) = densify_and_prune(&cloud, &stats(2, 1.0), &cfg, 1.0, true, &mut rng).unwrap();
        assert_eq!((r.cloned, r.split, r.after), (1, 1, 4));
        assert_eq!(map, vec![Some(0), None, None, None]);
        assert_eq!(c.gaussian(0), cloud.gaussian(0));
        // fresh rows: clone of 0, then the second split child
        assert_eq!(c.gaussian(2), cloud.gaussian(0));
        for i in [1, 3] {
            for k in 0..3 {
                assert!((c.log_scale(i)[k] - (math::ln(0.5) - math::ln(1.6))).abs() < 1e-15);
            }
            assert_ne!(c.position(i), big.mu);
        }
    }

    #[test]
    fn adam_remap_follows_densify() {
        let m = tiny_model();
        let mut st = AdamState::new(&m);
        st.m.cloud.positions.iter_mut().enumerate().for_each(|(k, x)| *x = k as f64 + 1.0);
        st.remap(&[Some(2), None, Some(0)]);
        assert_eq!(st.m.cloud.len(), 3);
        assert_eq!(&st.m.cloud.positions[0..3], &[7.0, 8.0, 9.0]);
        assert_eq!(&st.m.cloud.positions[3..6], &[0.0; 3]);
        assert_eq!(&st.m.cloud.positions[6..9], &[1.0, 2.0, 3.0]);
    }

    fn small_views() -> (Vec<View>, TrainConfig) {
        let spec = scene::SceneSpec {
            gaussians: 12,
            sh_degree: 0,
            embed_dim: 4,
            cameras: scene::CameraRing { count: 3, width: 16, height: 16, focal: 28.0, ..Default::default() },
            ..Default::default()
        };
        let sc = scene::generate_scene(&spec).unwrap();
        let cfg = TrainConfig {
            iterations: 30,
            eval_interval: 10,
            init: InitSpec { count: 20, ..InitSpec::default() },
            appearance: AppearanceDims { sh_degree: 0, embed_dim: 4, view_levels: 1, pos_levels: 1, feature_dim: 4, hidden: 8 },
            boltz: BoltzSchedule { window_end: 30, ..Default::default() },
            densify: DensifyConfig { interval: 10, start: 10, ..Default::default() },
            pipeline: PipelineConfig { radiation: spec.radiation(), ..PipelineConfig::default() },
            ..TrainConfig::default()
        };
        (sc.views, cfg)
    }

    #[test]
    fn zero_iterations_return_initial_model() {
        let (views, cfg) = small_views();
        let zero = TrainConfig { iterations: 0, ..cfg.clone() };
        let out = train(&views, &zero, &mut |_| {}).unwrap();
        assert_eq!(out.model, initial_model(&cfg).unwrap());
        assert!(out.steps.is_empty());
    }

    #[test]
    fn training_is_deterministic() {
        let (views, cfg) = small_views();
        let mut densified = 0;
        let mut steps = 0;
        let a = train(&views, &cfg, &mut |e| match e {
            TrainEvent::Densify { .. } => densified += 1,
            TrainEvent::Step(_) => steps += 1,
            TrainEvent::Eval(_) => {}
        })
        .unwrap();
        let b = train(&views, &cfg, &mut |_| {}).unwrap();
        assert!(a.stopped.is_none());
        assert_eq!(steps, 30);
        assert_eq!(densified, 2);
        assert_eq!(a.evals.len(), 3);
        assert_eq!(a.model, b.model);
        assert_eq!(a.steps, b.steps);
        assert_eq!(a.evals, b.evals);
    }

    #[test]
    fn loss_trends_down() {
        let (views, cfg) = small_views();
        let cfg = TrainConfig {
            iterations: 100,
            eval_interval: 0,
            boltz: BoltzSchedule { window_end: 100, ..Default::default() },
            densify: DensifyConfig { enabled: false, ..cfg.densify },
            ..cfg
        };
        let a = train(&views, &cfg, &mut |_| {}).unwrap();
        let mut deltas: Vec<f64> = a.steps.windows(2).map(|w| w[1].loss.l_total - w[0].loss.l_total).collect();
        deltas.sort_by(f64::total_cmp);
        assert!(deltas[deltas.len() / 2] < 0.0);
        let mean = |r: &[StepRecord]| r.iter().map(|x| x.loss.l_total).sum::<f64>() / r.len() as f64;
        assert!(mean(&a.steps[90..]) < 0.8 * mean(&a.steps[..10]));
    }
}
