//! Full-pipeline gradient audit on a tiny oracle scene.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{self, GradCheckOptions, GradCheckReport};
use crate::error::Result;
use crate::model::{self, Model, PipelineConfig, View};
use crate::scene::{self, CameraRing, SceneSpec};

/// Size presets for [`pipeline_gradcheck`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scale {
    /// 5 Gaussians, 16x16, 2 views.
    Tiny,
    /// 12 Gaussians, 24x24, 3 views.
    Small,
}

impl Scale {
    fn shape(self) -> (usize, usize, usize) {
        match self {
            Scale::Tiny => (5, 16, 2),
            Scale::Small => (12, 24, 3),
        }
    }
}

/// Ground-truth views plus a perturbed model whose every parameter family is active.
pub fn audit_problem(scale: Scale, seed: u64) -> Result<(Model, Vec<View>, PipelineConfig)> {
    let (count, size, views) = scale.shape();
    let spec = SceneSpec {
        seed,
        gaussians: count,
        extent: 0.5,
        scale_min: 1.0,
        scale_max: 1.4,
        opacity: 0.7,
        sh_degree: 1,
        embed_dim: 4,
        cameras: CameraRing {
            count: views,
            radius: 3.0,
            elevation: 0.5,
            arc_degrees: 60.0,
            width: size,
            height: size,
            focal: size as f64 * 2.5,
            ..CameraRing::default()
        },
        ..SceneSpec::default()
    };
    let scene = scene::generate_scene(&spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let dims = crate::appearance::AppearanceDims {
        sh_degree: 1,
        embed_dim: 4,
        view_levels: 2,
        pos_levels: 2,
        feature_dim: 4,
        hidden: 6,
    };
    let mut model = Model::new(scene.target.cloud.clone(), &dims, 8, &mut rng)?;
    model.visit_mut(&mut |name, v| {
        let amp = match name {
            "mu" => 0.08,
            "rot" | "log_scale" | "embedding" => 0.1,
            "opacity_c" | "opacity_t" | "t_base" => 0.4,
            "sh" => 0.3,
            "w_a" | "w_s" => 0.0,
            "psi.weight" | "psi.bias" => 0.15,
            _ if name.ends_with(".bias") => 0.2,
            _ => 0.0,
        };
        for x in v.iter_mut() {
            *x += amp * rng.random_range(-1.0..1.0);
        }
    });
    // zero-initialized output maps get random weights so their gradients carry signal
    for l in [&mut model.heat.f_grad, &mut model.heat.f_q, &mut model.appearance.thermal_head] {
        l.weight.iter_mut().for_each(|w| *w = rng.random_range(-0.4..0.4));
    }
    for mlp in [&mut model.appearance.color_mlp, &mut model.appearance.thermal_mlp] {
        let last = mlp.layers.len() - 1;
        mlp.layers[last].weight.iter_mut().for_each(|w| *w = rng.random_range(-0.4..0.4));
    }
    model.heat.w_a = 0.85;
    model.heat.w_s = 0.25;
    let cfg = PipelineConfig { radiation: crate::radiation::RadiationConfig { depth_floor: 1e-3 * spec.extent, ..spec.radiation() }, ..PipelineConfig::default() };
    Ok((model, scene.views, cfg))
}

/// Smallest `alpha / alpha_min` over every (view, pixel, Gaussian) pair, and whether every
/// Gaussian reaches every pixel of every view.
///
/// A margin well above one means no contribution sits near the cutoff, so the
/// objective is smooth around the audited point.
pub fn cutoff_margin(model: &Model, views: &[View], cfg: &PipelineConfig) -> (f64, bool) {
    let mut margin = f64::INFINITY;
    let mut full = true;
    let cloud = &model.cloud;
    for v in views {
        let cam = &v.camera;
        for i in 0..cloud.len() {
            let Some(pg) = crate::raster::project_gaussian(i, &cloud.position(i), &cloud.rotation(i), &cloud.log_scale(i), cam, &cfg.render) else {
                full = false;
                continue;
            };
            for py in 0..cam.height {
                for px in 0..cam.width {
                    let pix = [px as f64 + 0.5, py as f64 + 0.5];
                    for o in [cloud.opacity_c[i], cloud.opacity_t[i]] {
                        let a = crate::raster::compute_alpha(&pg, &pix, o, &cfg.render);
                        margin = margin.min(a / cfg.render.alpha_min);
                    }
                }
            }
        }
    }
    (margin, full)
}

/// Seed of the pinned audit scene used by the acceptance gradient check.
pub const AUDIT_SEED: u64 = 4;

/// Analytic gradient of the full objective against central differences.
pub fn pipeline_gradcheck(scale: Scale, seed: u64, opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let (model, views, cfg) = audit_problem(scale, seed)?;
    let refs: Vec<&View> = views.iter().collect();
    let graph = model.build_graph(0);
    let (_, grad, _) = model::objective_and_grad(&model, &refs, &graph, &cfg)?;
    let loss = |m: &Model| model::objective(m, &refs, &graph, &cfg).map_or(f64::NAN, |b| b.l_total);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(autodiff::finite_difference_check(&loss, &model, &grad, opts, &mut rng))
}
