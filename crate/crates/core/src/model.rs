//! The complete differentiable model: Gaussian cloud plus every learned map,
//! its two-modality render, the training objective and its gradient.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::appearance::{self, AppearanceDims, AppearanceParams, ColorTrace, FeatureTrace};
use crate::error::{Error, Result};
use crate::gaussian::GaussianCloud;
use crate::heat::{self, HeatParams, HeatTrace, NeighborGraph};
use crate::image::{Image, WindowFilter};
use crate::loss::{self, EdgeWeights, LossBreakdown, LossWeights};
use crate::math;
use crate::radiation::{self, RadiationConfig, UncertaintyParams};
use crate::raster::{self, BlendCache, Camera, Projection, ProjectionGrads, RenderSettings};

/// One training or evaluation view: a camera with aligned RGB and normalized thermal images.
#[derive(Debug, Clone, PartialEq)]
pub struct View {
    pub camera: Camera,
    /// `H x W x 3` in [0, 1].
    pub rgb: Image,
    /// `H x W x 1`, temperature normalized to [0, 1].
    pub thermal: Image,
}

/// Switches and constants of the forward pipeline and objective.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct PipelineConfig {
    pub render: RenderSettings,
    pub radiation: RadiationConfig,
    pub weights: LossWeights,
    pub use_heat: bool,
    pub use_boltz: bool,
    pub edge_aware_smoothness: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            render: RenderSettings::default(),
            radiation: RadiationConfig::default(),
            weights: LossWeights::default(),
            use_heat: true,
            use_boltz: true,
            edge_aware_smoothness: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Model {
    pub cloud: GaussianCloud,
    pub appearance: AppearanceParams,
    pub heat: HeatParams,
    pub uncertainty: UncertaintyParams,
}

impl Model {
    /// Fresh learned maps around an existing cloud; `k` neighbors per anchor.
    pub fn new<R: Rng + ?Sized>(cloud: GaussianCloud, dims: &AppearanceDims, k: usize, rng: &mut R) -> Result<Self> {
        if cloud.sh_degree != dims.sh_degree || cloud.embed_dim != dims.embed_dim {
            return Err(Error::Config(format!(
                "cloud (degree {}, embedding {}) does not match appearance dims (degree {}, embedding {})",
                cloud.sh_degree, cloud.embed_dim, dims.sh_degree, dims.embed_dim
            )));
        }
        let appearance = AppearanceParams::new(dims, rng);
        let heat = HeatParams::trainable(k, dims.feature_dim, rng);
        Ok(Self { cloud, appearance, heat, uncertainty: UncertaintyParams::zeros() })
    }

    /// Same shapes, every value zero.
    pub fn zeros_like(&self) -> Self {
        Self {
            cloud: self.cloud.zeros_like(),
            appearance: self.appearance.zeros_like(),
            heat: self.heat.zeros_like(),
            uncertainty: UncertaintyParams::zeros(),
        }
    }

    pub fn neighbor_count(&self) -> usize {
        self.heat.k()
    }

    pub fn check(&self) -> Result<()> {
        self.appearance.check_dims(self.cloud.sh_stride(), self.cloud.embed_dim)?;
        if self.heat.feature_dim() != self.appearance.feature_dim {
            return Err(Error::Config(format!(
                "heat transform width {} differs from thermal feature width {}",
                self.heat.feature_dim(),
                self.appearance.feature_dim
            )));
        }
        Ok(())
    }

    /// Every learnable array with a stable dotted name, in a fixed order.
    pub fn visit(&self, f: &mut dyn FnMut(&str, &[f64])) {
        for (name, v) in self.cloud.families() {
            f(name, v);
        }
        let a = &self.appearance;
        linear_visit("phi_sh", &a.phi_sh, f);
        linear_visit("phi_e", &a.phi_e, f);
        for (k, l) in a.color_mlp.layers.iter().enumerate() {
            linear_visit(&format!("color_mlp.{k}"), l, f);
        }
        for (k, l) in a.thermal_mlp.layers.iter().enumerate() {
            linear_visit(&format!("thermal_mlp.{k}"), l, f);
        }
        linear_visit("thermal_head", &a.thermal_head, f);
        linear_visit("f_grad", &self.heat.f_grad, f);
        linear_visit("f_q", &self.heat.f_q, f);
        f("w_a", core::slice::from_ref(&self.heat.w_a));
        f("w_s", core::slice::from_ref(&self.heat.w_s));
        f("psi.weight", &self.uncertainty.weights);
        f("psi.bias", core::slice::from_ref(&self.uncertainty.bias));
    }

    /// Mutable counterpart of [`Model::visit`], same order and names.
    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        for (name, v) in self.cloud.families_mut() {
            f(name, v);
        }
        let a = &mut self.appearance;
        linear_visit_mut("phi_sh", &mut a.phi_sh, f);
        linear_visit_mut("phi_e", &mut a.phi_e, f);
        for (k, l) in a.color_mlp.layers.iter_mut().enumerate() {
            linear_visit_mut(&format!("color_mlp.{k}"), l, f);
        }
        for (k, l) in a.thermal_mlp.layers.iter_mut().enumerate() {
            linear_visit_mut(&format!("thermal_mlp.{k}"), l, f);
        }
        linear_visit_mut("thermal_head", &mut a.thermal_head, f);
        linear_visit_mut("f_grad", &mut self.heat.f_grad, f);
        linear_visit_mut("f_q", &mut self.heat.f_q, f);
        f("w_a", core::slice::from_mut(&mut self.heat.w_a));
        f("w_s", core::slice::from_mut(&mut self.heat.w_s));
        f("psi.weight", &mut self.uncertainty.weights);
        f("psi.bias", core::slice::from_mut(&mut self.uncertainty.bias));
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, v| n += v.len());
        n
    }

    /// First non-finite learnable value, as `(array name, index)`.
    pub fn first_non_finite(&self) -> Option<(String, usize)> {
        let mut found = None;
        self.visit(&mut |name, v| {
            if found.is_none() {
                if let Some(i) = v.iter().position(|x| !x.is_finite()) {
                    found = Some((String::from(name), i));
                }
            }
        });
        found
    }

    /// K-NN graph over the current centers.
    pub fn build_graph(&self, step: usize) -> NeighborGraph {
        heat::build_knn(&self.cloud.positions, self.neighbor_count(), step)
    }
}

fn linear_visit(prefix: &str, l: &crate::nn::Linear, f: &mut dyn FnMut(&str, &[f64])) {
    f(&format!("{prefix}.weight"), &l.weight);
    f(&format!("{prefix}.bias"), &l.bias);
}

fn linear_visit_mut(prefix: &str, l: &mut crate::nn::Linear, f: &mut dyn FnMut(&str, &mut [f64])) {
    f(&format!("{prefix}.weight"), &mut l.weight);
    f(&format!("{prefix}.bias"), &mut l.bias);
}

/// View-independent per-Gaussian thermal values and what is needed to differentiate them.
pub struct ThermalState {
    pub features: Vec<f64>,
    traces: Vec<FeatureTrace>,
    heat: Option<HeatTrace>,
    /// `sigmoid(t_base) + thermal_head(F') - 0.5`
    pub values: Vec<f64>,
}

impl ThermalState {
    fn refined(&self) -> &[f64] {
        match &self.heat {
            Some(h) => &h.refined,
            None => &self.features,
        }
    }
}

pub fn thermal_forward(model: &Model, graph: &NeighborGraph, use_heat: bool) -> ThermalState {
    let cloud = &model.cloud;
    let app = &model.appearance;
    let m = cloud.len();
    let df = app.feature_dim;
    let mut features = Vec::with_capacity(m * df);
    let mut traces = Vec::with_capacity(m);
    for i in 0..m {
        let (f, tr) = appearance::gaussian_thermal_feature(&cloud.position(i), cloud.sh_of(i), cloud.embedding(i), app);
        features.extend(f);
        traces.push(tr);
    }
    let heat = use_heat.then(|| heat::heat_transform(&features, &cloud.opacity_t, graph, &model.heat));
    let mut st = ThermalState { features, traces, heat, values: Vec::new() };
    let refined = st.refined();
    st.values = (0..m)
        .map(|i| math::sigmoid(cloud.t_base[i]) + (appearance::thermal_head(&refined[i * df..(i + 1) * df], app) - 0.5))
        .collect();
    st
}

/// Backward of [`thermal_forward`] given `dL/d values`.
pub fn thermal_backward(model: &Model, graph: &NeighborGraph, st: &ThermalState, d_values: &[f64], grad: &mut Model) {
    let cloud = &model.cloud;
    let app = &model.appearance;
    let m = cloud.len();
    let df = app.feature_dim;
    let refined = st.refined();
    let mut d_refined = vec![0.0; m * df];
    for i in 0..m {
        let g = d_values[i];
        if g == 0.0 {
            continue;
        }
        let s = math::sigmoid(cloud.t_base[i]);
        grad.cloud.t_base[i] += g * s * (1.0 - s);
        let d = appearance::thermal_head_backward(&refined[i * df..(i + 1) * df], app, g, &mut grad.appearance);
        d_refined[i * df..(i + 1) * df].copy_from_slice(&d);
    }
    let d_features = match &st.heat {
        Some(h) => heat::heat_transform_backward(
            &st.features,
            &cloud.opacity_t,
            graph,
            &model.heat,
            h,
            &d_refined,
            &mut grad.cloud.opacity_t,
            &mut grad.heat,
        ),
        None => d_refined,
    };
    let stride = cloud.sh_stride();
    let de = cloud.embed_dim;
    for i in 0..m {
        let df_i = &d_features[i * df..(i + 1) * df];
        if df_i.iter().all(|v| *v == 0.0) {
            continue;
        }
        let mu = cloud.position(i);
        let dmu = appearance::gaussian_thermal_feature_backward(
            &st.traces[i],
            &mu,
            cloud.sh_of(i),
            cloud.embedding(i),
            app,
            df_i,
            &mut grad.cloud.sh[i * stride..(i + 1) * stride],
            &mut grad.cloud.embeddings[i * de..(i + 1) * de],
            &mut grad.appearance,
        );
        for k in 0..3 {
            grad.cloud.positions[3 * i + k] += dmu[k];
        }
    }
}

/// Renders of both modalities for one camera.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    pub rgb: Image,
    pub thermal: Image,
    pub depth_c: Image,
    pub depth_t: Image,
    pub acc_c: Image,
    pub acc_t: Image,
}

/// Per-view state kept for the backward pass.
struct ViewTrace {
    proj: Projection,
    colors: Vec<f64>,
    color_traces: Vec<(usize, ColorTrace)>,
    cache_c: BlendCache,
    cache_t: BlendCache,
    out: RenderOutput,
}

fn render_traced(model: &Model, cam: &Camera, thermal: &ThermalState, settings: &RenderSettings) -> ViewTrace {
    let cloud = &model.cloud;
    let proj = raster::project_cloud(cloud, cam, settings);
    let center = cam.center();
    let mut colors = vec![0.0; 3 * cloud.len()];
    let mut color_traces = Vec::with_capacity(proj.gaussians.len());
    for g in &proj.gaussians {
        let i = g.index;
        let (rgb, tr) = appearance::gaussian_color(
            &cloud.position(i),
            &center,
            cloud.sh_of(i),
            cloud.sh_degree,
            cloud.embedding(i),
            &model.appearance,
        );
        colors[3 * i..3 * i + 3].copy_from_slice(&rgb);
        color_traces.push((i, tr));
    }
    let (img_c, cache_c) = raster::blend(&proj, &cloud.opacity_c, &colors, 3, settings);
    let (img_t, cache_t) = raster::blend(&proj, &cloud.opacity_t, &thermal.values, 1, settings);
    let out = RenderOutput {
        rgb: img_c.color,
        thermal: img_t.color,
        depth_c: img_c.depth,
        depth_t: img_t.depth,
        acc_c: img_c.acc,
        acc_t: img_t.acc,
    };
    ViewTrace { proj, colors, color_traces, cache_c, cache_t, out }
}

/// Render both modalities with a graph built over the current centers.
pub fn render(model: &Model, cam: &Camera, cfg: &PipelineConfig) -> RenderOutput {
    let graph = model.build_graph(0);
    render_with_graph(model, cam, &graph, cfg)
}

pub fn render_with_graph(model: &Model, cam: &Camera, graph: &NeighborGraph, cfg: &PipelineConfig) -> RenderOutput {
    let st = thermal_forward(model, graph, cfg.use_heat);
    render_traced(model, cam, &st, &cfg.render).out
}

/// Per-Gaussian screen-space gradient statistics used by densification.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradStats {
    /// Sum over views of `|dL/d mean2d|` (pixels).
    pub mean2d_norm: Vec<f64>,
    /// Number of views in which the Gaussian was projected.
    pub visible: Vec<u32>,
    /// Largest screen-space radius (pixels, one sigma) over views.
    pub max_radius: Vec<f64>,
}

impl GradStats {
    pub fn new(m: usize) -> Self {
        Self { mean2d_norm: vec![0.0; m], visible: vec![0; m], max_radius: vec![0.0; m] }
    }

    pub fn merge(&mut self, other: &GradStats) {
        for i in 0..self.visible.len() {
            self.mean2d_norm[i] += other.mean2d_norm[i];
            self.visible[i] += other.visible[i];
            self.max_radius[i] = self.max_radius[i].max(other.max_radius[i]);
        }
    }
}

struct ViewLoss {
    parts: [f64; 4],
    boltz: Option<radiation::BoltzTrace>,
    edges_c: Option<EdgeWeights>,
    edges_t: Option<EdgeWeights>,
}

fn view_loss(out: &RenderOutput, view: &View, cfg: &PipelineConfig, ssim_win: &WindowFilter, s_win: &WindowFilter, uncertainty: &UncertaintyParams) -> Result<ViewLoss> {
    let lam = cfg.weights.lambda_dssim;
    let l_c = loss::modality_loss(&out.rgb, &view.rgb, lam, ssim_win)?;
    let l_t = loss::modality_loss(&out.thermal, &view.thermal, lam, ssim_win)?;
    let (edges_c, edges_t) = if cfg.edge_aware_smoothness {
        (Some(EdgeWeights::from_guide(&view.rgb)), Some(EdgeWeights::from_guide(&view.thermal)))
    } else {
        (None, None)
    };
    let l_s = loss::smoothness_loss(&out.rgb, &out.depth_c, edges_c.as_ref())?
        + loss::smoothness_loss(&out.thermal, &out.depth_t, edges_t.as_ref())?;
    let boltz = if cfg.use_boltz {
        Some(radiation::boltz_forward(&out.thermal, &view.thermal, &out.depth_t, uncertainty, &cfg.radiation, s_win)?)
    } else {
        None
    };
    let l_b = boltz.as_ref().map_or(0.0, |b| b.loss);
    Ok(ViewLoss { parts: [l_c, l_t, l_s, l_b], boltz, edges_c, edges_t })
}

fn check_view(model: &Model, view: &View) -> Result<()> {
    let (w, h) = (view.camera.width, view.camera.height);
    if view.rgb.width != w || view.rgb.height != h || view.rgb.channels != 3 {
        return Err(Error::Shape(format!(
            "view rgb is {}x{}x{}, camera expects {w}x{h}x3",
            view.rgb.width, view.rgb.height, view.rgb.channels
        )));
    }
    if view.thermal.width != w || view.thermal.height != h || view.thermal.channels != 1 {
        return Err(Error::Shape(format!(
            "view thermal is {}x{}x{}, camera expects {w}x{h}x1",
            view.thermal.width, view.thermal.height, view.thermal.channels
        )));
    }
    if model.cloud.is_empty() {
        return Err(Error::Scene(String::from("cloud has no Gaussians")));
    }
    Ok(())
}

/// Mean objective over `views`.
pub fn objective(model: &Model, views: &[&View], graph: &NeighborGraph, cfg: &PipelineConfig) -> Result<LossBreakdown> {
    if views.is_empty() {
        return Err(Error::Usage(String::from("objective needs at least one view")));
    }
    let ssim_win = loss::ssim_window();
    let s_win = cfg.radiation.filter()?;
    let st = thermal_forward(model, graph, cfg.use_heat);
    let mut acc = [0.0; 4];
    for view in views {
        check_view(model, view)?;
        let tr = render_traced(model, &view.camera, &st, &cfg.render);
        let vl = view_loss(&tr.out, view, cfg, &ssim_win, &s_win, &model.uncertainty)?;
        for k in 0..4 {
            acc[k] += vl.parts[k];
        }
    }
    let n = views.len() as f64;
    loss::total_loss(acc[0] / n, acc[1] / n, acc[2] / n, acc[3] / n, &cfg.weights)
}

/// Mean objective over `views`, its exact gradient, and densification statistics.
pub fn objective_and_grad(
    model: &Model,
    views: &[&View],
    graph: &NeighborGraph,
    cfg: &PipelineConfig,
) -> Result<(LossBreakdown, Model, GradStats)> {
    if views.is_empty() {
        return Err(Error::Usage(String::from("objective needs at least one view")));
    }
    let ssim_win = loss::ssim_window();
    let s_win = cfg.radiation.filter()?;
    let cloud = &model.cloud;
    let m = cloud.len();
    let st = thermal_forward(model, graph, cfg.use_heat);
    let mut grad = model.zeros_like();
    let mut stats = GradStats::new(m);
    let mut d_thermal_values = vec![0.0; m];
    let mut acc = [0.0; 4];
    let n = views.len() as f64;
    let w = &cfg.weights;
    let lam = w.lambda_dssim;
    for view in views {
        check_view(model, view)?;
        let tr = render_traced(model, &view.camera, &st, &cfg.render);
        let vl = view_loss(&tr.out, view, cfg, &ssim_win, &s_win, &model.uncertainty)?;
        for k in 0..4 {
            acc[k] += vl.parts[k];
        }
        let out = &tr.out;
        // image-space gradients
        let mut d_rgb = loss::modality_loss_backward(&out.rgb, &view.rgb, lam, &ssim_win, 1.0 / n)?;
        let mut d_th = loss::modality_loss_backward(&out.thermal, &view.thermal, lam, &ssim_win, 1.0 / n)?;
        let (g_rgb, d_dc) = loss::smoothness_loss_backward(&out.rgb, &out.depth_c, vl.edges_c.as_ref(), w.lambda_smooth / n);
        let (g_th, mut d_dt) = loss::smoothness_loss_backward(&out.thermal, &out.depth_t, vl.edges_t.as_ref(), w.lambda_smooth / n);
        add_into(&mut d_rgb, &g_rgb);
        add_into(&mut d_th, &g_th);
        if let Some(b) = &vl.boltz {
            let (g_th, g_dt) = radiation::boltz_backward(
                &out.thermal,
                &view.thermal,
                &out.depth_t,
                &model.uncertainty,
                &cfg.radiation,
                &s_win,
                b,
                w.lambda_boltz / n,
                &mut grad.uncertainty,
            )?;
            add_into(&mut d_th, &g_th);
            add_into(&mut d_dt, &g_dt);
        }
        // through the blender
        let mut pg = ProjectionGrads::zeros(&tr.proj);
        let mut d_colors = vec![0.0; 3 * m];
        raster::blend_backward(&tr.proj, &tr.cache_c, &cloud.opacity_c, &tr.colors, &d_rgb, &d_dc, &mut d_colors, &mut grad.cloud.opacity_c, &mut pg)?;
        raster::blend_backward(&tr.proj, &tr.cache_t, &cloud.opacity_t, &st.values, &d_th, &d_dt, &mut d_thermal_values, &mut grad.cloud.opacity_t, &mut pg)?;
        for (slot, g) in tr.proj.gaussians.iter().enumerate() {
            let i = g.index;
            let [gx, gy] = pg.mean2d[slot];
            stats.mean2d_norm[i] += math::sqrt(gx * gx + gy * gy);
            stats.visible[i] += 1;
            let mid = 0.5 * (g.cov2d[0] + g.cov2d[2]);
            let det = g.cov2d[0] * g.cov2d[2] - g.cov2d[1] * g.cov2d[1];
            let r = math::sqrt(mid + math::sqrt((mid * mid - det).max(0.0)));
            stats.max_radius[i] = stats.max_radius[i].max(r);
        }
        raster::project_backward(cloud, &view.camera, &tr.proj, &pg, &mut grad.cloud);
        // per-Gaussian colors
        let stride = cloud.sh_stride();
        let de = cloud.embed_dim;
        for (i, ct) in &tr.color_traces {
            let i = *i;
            let dc = [d_colors[3 * i], d_colors[3 * i + 1], d_colors[3 * i + 2]];
            if dc == [0.0; 3] {
                continue;
            }
            let dmu = appearance::gaussian_color_backward(
                ct,
                cloud.sh_of(i),
                cloud.sh_degree,
                &model.appearance,
                &dc,
                &mut grad.cloud.sh[i * stride..(i + 1) * stride],
                &mut grad.cloud.embeddings[i * de..(i + 1) * de],
                &mut grad.appearance,
            );
            for k in 0..3 {
                grad.cloud.positions[3 * i + k] += dmu[k];
            }
        }
    }
    thermal_backward(model, graph, &st, &d_thermal_values, &mut grad);
    let parts = loss::total_loss(acc[0] / n, acc[1] / n, acc[2] / n, acc[3] / n, w)?;
    Ok((parts, grad, stats))
}

fn add_into(a: &mut Image, b: &Image) {
    for (x, y) in a.data.iter_mut().zip(&b.data) {
        *x += y;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::{sh_coeff_count, Gaussian};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_model(rng: &mut ChaCha8Rng) -> Model {
        let dims = AppearanceDims { sh_degree: 1, embed_dim: 4, view_levels: 2, pos_levels: 2, feature_dim: 3, hidden: 5 };
        let mut cloud = GaussianCloud::new(1, 4);
        for i in 0..4 {
            let x = i as f64 * 0.3 - 0.45;
            cloud.push(&Gaussian {
                mu: [x, 0.1 * i as f64, 0.0],
                rot: [1.0, 0.1, 0.0, 0.05 * i as f64],
                log_scale: [-1.5, -1.7, -1.6],
                opacity_c: 0.5,
                opacity_t: 0.2,
                sh: (0..3 * sh_coeff_count(1)).map(|k| 0.1 * ((k + i) % 5) as f64 - 0.2).collect(),
                embedding: vec![0.3, -0.2, 0.1 * i as f64, 0.4],
                t_base: 0.1 * i as f64,
            });
        }
        Model::new(cloud, &dims, 2, rng).unwrap()
    }

    #[test]
    fn visit_orders_match() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut model = tiny_model(&mut rng);
        let mut a = Vec::new();
        model.visit(&mut |n, v| a.push((String::from(n), v.len())));
        let mut b = Vec::new();
        model.visit_mut(&mut |n, v| b.push((String::from(n), v.len())));
        assert_eq!(a, b);
        assert_eq!(a.iter().map(|x| x.1).sum::<usize>(), model.param_count());
        assert!(a.iter().any(|x| x.0 == "w_s"));
    }

    #[test]
    fn thermal_values_are_view_independent_and_start_from_base() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let model = tiny_model(&mut rng);
        let graph = model.build_graph(0);
        let st = thermal_forward(&model, &graph, true);
        for i in 0..model.cloud.len() {
            assert_eq!(st.values[i], math::sigmoid(model.cloud.t_base[i]));
        }
        let cam_a = Camera::look_at(&[0.0, 0.0, -3.0], &[0.0; 3], &[0.0, -1.0, 0.0], 16, 16, 20.0);
        let cam_b = Camera::look_at(&[2.0, 0.0, -2.0], &[0.0; 3], &[0.0, -1.0, 0.0], 16, 16, 20.0);
        let cfg = PipelineConfig::default();
        let a = render_with_graph(&model, &cam_a, &graph, &cfg);
        let b = render_with_graph(&model, &cam_b, &graph, &cfg);
        assert_ne!(a.thermal, b.thermal);
        assert_eq!(thermal_forward(&model, &graph, true).values, st.values);
    }

    #[test]
    fn objective_rejects_mismatched_views() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let model = tiny_model(&mut rng);
        let cam = Camera::look_at(&[0.0, 0.0, -3.0], &[0.0; 3], &[0.0, -1.0, 0.0], 16, 16, 20.0);
        let view = View { camera: cam, rgb: Image::zeros(8, 8, 3), thermal: Image::zeros(16, 16, 1) };
        let graph = model.build_graph(0);
        assert!(matches!(objective(&model, &[&view], &graph, &PipelineConfig::default()), Err(Error::Shape(_))));
        assert!(matches!(objective(&model, &[], &graph, &PipelineConfig::default()), Err(Error::Usage(_))));
    }
}
