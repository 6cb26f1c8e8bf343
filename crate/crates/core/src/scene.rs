//! Synthetic RGB-T scenes with known ground truth, and random initial clouds.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::appearance::{AppearanceDims, SH_C0};
use crate::error::{Error, Result};
use crate::gaussian::{sh_coeff_count, Gaussian, GaussianCloud};
use crate::math::{self, Vec3};
use crate::model::{self, Model, PipelineConfig, View};
use crate::radiation::RadiationConfig;
use crate::raster::{self, Camera};

/// Temperature rising smoothly from `t_cold` to `t_hot` inside a sphere.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct HotSphere {
    pub center: Vec3,
    pub radius: f64,
    /// Degrees Celsius.
    pub t_hot: f64,
    pub t_cold: f64,
    /// Width of the transition shell; zero gives a hard step.
    pub softness: f64,
}

impl Default for HotSphere {
    fn default() -> Self {
        Self { center: [0.2, -0.1, 0.0], radius: 0.5, t_hot: 80.0, t_cold: 10.0, softness: 0.1 }
    }
}

impl HotSphere {
    pub fn celsius_at(&self, p: &Vec3) -> f64 {
        let d = math::norm3(&math::sub3(p, &self.center));
        let w = if self.softness > 0.0 {
            math::sigmoid((self.radius - d) / self.softness)
        } else if d <= self.radius {
            1.0
        } else {
            0.0
        };
        self.t_cold + w * (self.t_hot - self.t_cold)
    }
}

/// `base + amplitude * sin(frequency * (x, y, z) . axis_c + phase_c)` per channel.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct ColorField {
    pub base: Vec3,
    pub amplitude: f64,
    pub frequency: f64,
}

impl Default for ColorField {
    fn default() -> Self {
        Self { base: [0.55, 0.45, 0.4], amplitude: 0.3, frequency: 2.0 }
    }
}

impl ColorField {
    pub fn rgb_at(&self, p: &Vec3) -> Vec3 {
        let axes = [[1.0, 0.3, 0.0], [0.0, 1.0, 0.4], [0.5, 0.0, 1.0]];
        let mut out = [0.0; 3];
        for c in 0..3 {
            let s = math::dot3(&axes[c], p);
            out[c] = (self.base[c] + self.amplitude * math::sin(self.frequency * s + c as f64)).clamp(0.02, 0.98);
        }
        out
    }
}

/// Cameras evenly spaced on a horizontal circle, all looking at `target`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct CameraRing {
    pub count: usize,
    pub radius: f64,
    /// Height of the ring above `target` (world `-y` is up).
    pub elevation: f64,
    pub target: Vec3,
    /// Angular span of the ring in degrees; 360 closes it.
    pub arc_degrees: f64,
    pub width: usize,
    pub height: usize,
    /// Focal length in pixels.
    pub focal: f64,
}

impl Default for CameraRing {
    fn default() -> Self {
        Self { count: 20, radius: 3.5, elevation: 0.8, target: [0.0; 3], arc_degrees: 360.0, width: 64, height: 64, focal: 110.0 }
    }
}

impl CameraRing {
    pub fn cameras(&self) -> Vec<Camera> {
        let span = self.arc_degrees.to_radians();
        let closed = (self.arc_degrees - 360.0).abs() < 1e-9;
        let denom = if closed || self.count < 2 { self.count.max(1) } else { self.count - 1 };
        (0..self.count)
            .map(|i| {
                let a = -0.5 * span * (!closed) as u8 as f64 + span * i as f64 / denom as f64;
                let eye = [
                    self.target[0] + self.radius * math::sin(a),
                    self.target[1] - self.elevation,
                    self.target[2] - self.radius * math::cos(a),
                ];
                Camera::look_at(&eye, &self.target, &[0.0, -1.0, 0.0], self.width, self.height, self.focal)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct SceneSpec {
    pub seed: u64,
    pub gaussians: usize,
    /// Centers are drawn uniformly from `[-extent, extent]^3`.
    pub extent: f64,
    /// Per-axis standard deviation range, as a fraction of `extent`.
    pub scale_min: f64,
    pub scale_max: f64,
    /// Opacity of every ground-truth Gaussian, both modalities.
    pub opacity: f64,
    pub temperature: HotSphere,
    pub color: ColorField,
    pub cameras: CameraRing,
    pub t_min: f64,
    pub t_max: f64,
    pub sh_degree: usize,
    pub embed_dim: usize,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            seed: 7,
            gaussians: 200,
            extent: 1.0,
            scale_min: 0.12,
            scale_max: 0.3,
            opacity: 0.6,
            temperature: HotSphere::default(),
            color: ColorField::default(),
            cameras: CameraRing::default(),
            t_min: -20.0,
            t_max: 120.0,
            sh_degree: 2,
            embed_dim: 16,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.gaussians == 0 {
            return Err(Error::Config(format!("scene needs at least one Gaussian")));
        }
        let ts = &self.temperature;
        for (name, t) in [("t_hot", ts.t_hot), ("t_cold", ts.t_cold)] {
            if !(t >= self.t_min && t <= self.t_max) {
                return Err(Error::Config(format!("{name} = {t} lies outside [{}, {}]", self.t_min, self.t_max)));
            }
        }
        if !(self.t_min < self.t_max) {
            return Err(Error::Config(format!("t_min must be below t_max")));
        }
        if !(self.opacity > 0.0 && self.opacity < 1.0) {
            return Err(Error::Config(format!("opacity must lie in (0, 1), got {}", self.opacity)));
        }
        if !(self.scale_min > 0.0 && self.scale_min <= self.scale_max) {
            return Err(Error::Config(format!("need 0 < scale_min <= scale_max")));
        }
        if self.cameras.count == 0 {
            return Err(Error::Config(format!("camera ring needs at least one camera")));
        }
        if self.sh_degree > crate::appearance::MAX_SH_DEGREE {
            return Err(Error::Config(format!("unsupported SH degree {}", self.sh_degree)));
        }
        Ok(())
    }

    pub fn radiation(&self) -> RadiationConfig {
        RadiationConfig { t_min: self.t_min, t_max: self.t_max, ..RadiationConfig::default() }
    }
}

/// Ground truth plus rendered views.
#[derive(Debug, Clone)]
pub struct Scene {
    pub target: Model,
    pub views: Vec<View>,
}

fn random_rotation(rng: &mut ChaCha8Rng) -> [f64; 4] {
    let q: [f64; 4] = core::array::from_fn(|_| StandardNormal.sample(rng));
    math::normalize_quat(&q)
}

/// SH DC coefficient that evaluates to `value` (other bands zero).
pub fn dc_for(value: f64) -> f64 {
    (value - 0.5) / SH_C0
}

/// Build the ground-truth model and render every camera of the ring.
pub fn generate_scene(spec: &SceneSpec) -> Result<Scene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let nb = sh_coeff_count(spec.sh_degree);
    let mut cloud = GaussianCloud::new(spec.sh_degree, spec.embed_dim);
    let radiation = spec.radiation();
    for _ in 0..spec.gaussians {
        let mu: Vec3 = core::array::from_fn(|_| rng.random_range(-spec.extent..=spec.extent));
        let log_scale: Vec3 = core::array::from_fn(|_| math::ln(rng.random_range(spec.scale_min..=spec.scale_max) * spec.extent));
        let rgb = spec.color.rgb_at(&mu);
        let mut sh = vec![0.0; 3 * nb];
        for c in 0..3 {
            sh[c * nb] = dc_for(rgb[c]);
        }
        let t = radiation.normalize(spec.temperature.celsius_at(&mu)).clamp(1e-4, 1.0 - 1e-4);
        let embedding = (0..spec.embed_dim).map(|_| 0.1 * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)).collect();
        cloud.push(&Gaussian {
            mu,
            rot: random_rotation(&mut rng),
            log_scale,
            opacity_c: math::logit(spec.opacity),
            opacity_t: math::logit(spec.opacity),
            sh,
            embedding,
            t_base: math::logit(t),
        });
    }
    let dims = AppearanceDims { sh_degree: spec.sh_degree, embed_dim: spec.embed_dim, ..AppearanceDims::default() };
    let target = Model::new(cloud, &dims, 8, &mut rng)?;
    let cfg = PipelineConfig { radiation, ..PipelineConfig::default() };
    let graph = target.build_graph(0);
    let mut views = Vec::with_capacity(spec.cameras.count);
    for (i, cam) in spec.cameras.cameras().into_iter().enumerate() {
        let proj = raster::project_cloud(&target.cloud, &cam, &cfg.render);
        if proj.gaussians.is_empty() {
            return Err(Error::Scene(format!("camera {i} sees no Gaussians")));
        }
        let out = model::render_with_graph(&target, &cam, &graph, &cfg);
        views.push(View { camera: cam, rgb: out.rgb, thermal: out.thermal });
    }
    Ok(Scene { target, views })
}

/// Settings for [`random_cloud`].
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct InitSpec {
    pub count: usize,
    pub center: Vec3,
    pub extent: f64,
    /// Initial per-axis standard deviation as a fraction of `extent`.
    pub scale: f64,
    pub opacity: f64,
}

impl Default for InitSpec {
    fn default() -> Self {
        Self { count: 200, center: [0.0; 3], extent: 1.0, scale: 0.12, opacity: 0.3 }
    }
}

/// Uniform random centers in a cube, isotropic scales, random colors and mid-range temperature.
pub fn random_cloud(init: &InitSpec, sh_degree: usize, embed_dim: usize, seed: u64) -> GaussianCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nb = sh_coeff_count(sh_degree);
    let mut cloud = GaussianCloud::new(sh_degree, embed_dim);
    for _ in 0..init.count {
        let mu: Vec3 = core::array::from_fn(|k| init.center[k] + rng.random_range(-init.extent..=init.extent));
        let mut sh = vec![0.0; 3 * nb];
        for c in 0..3 {
            sh[c * nb] = dc_for(rng.random_range(0.2..0.8));
        }
        let embedding = (0..embed_dim).map(|_| 0.1 * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)).collect();
        let ls = math::ln(init.scale * init.extent);
        cloud.push(&Gaussian {
            mu,
            rot: [1.0, 0.0, 0.0, 0.0],
            log_scale: [ls; 3],
            opacity_c: math::logit(init.opacity),
            opacity_t: math::logit(init.opacity),
            sh,
            embedding,
            t_base: 0.0,
        });
    }
    cloud
}

/// Point closest (in least squares) to every camera's optical axis, and the mean
/// camera distance to it.
pub fn camera_focus(cameras: &[Camera]) -> (Vec3, f64) {
    let mut a = [[0.0; 3]; 3];
    let mut b = [0.0; 3];
    for cam in cameras {
        let c = cam.center();
        let d = cam.rotation[2];
        // (I - d d^T) x = (I - d d^T) c
        for r in 0..3 {
            for s in 0..3 {
                let m = if r == s { 1.0 } else { 0.0 } - d[r] * d[s];
                a[r][s] += m;
                b[r] += m * c[s];
            }
        }
    }
    let p = solve3(&a, &b).unwrap_or_else(|| {
        let mut m = [0.0; 3];
        for cam in cameras {
            m = math::add3(&m, &cam.center());
        }
        math::scale3(&m, 1.0 / cameras.len().max(1) as f64)
    });
    let dist = cameras.iter().map(|c| math::norm3(&math::sub3(&c.center(), &p))).sum::<f64>() / cameras.len().max(1) as f64;
    (p, dist)
}

fn solve3(a: &[[f64; 3]; 3], b: &[f64; 3]) -> Option<Vec3> {
    let det = |m: &[[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let d = det(a);
    if d.abs() < 1e-9 {
        return None;
    }
    let mut out = [0.0; 3];
    for k in 0..3 {
        let mut m = *a;
        for r in 0..3 {
            m[r][k] = b[r];
        }
        out[k] = det(&m) / d;
    }
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> SceneSpec {
        SceneSpec {
            gaussians: 40,
            cameras: CameraRing { count: 4, width: 32, height: 32, focal: 35.0, ..CameraRing::default() },
            ..SceneSpec::default()
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = generate_scene(&small_spec()).unwrap();
        let b = generate_scene(&small_spec()).unwrap();
        assert_eq!(a.target, b.target);
        assert_eq!(a.views, b.views);
        let c = generate_scene(&SceneSpec { seed: 8, ..small_spec() }).unwrap();
        assert_ne!(a.views[0].rgb, c.views[0].rgb);
    }

    #[test]
    fn single_gaussian_peak() {
        let spec = SceneSpec {
            gaussians: 1,
            extent: 1e-9,
            scale_min: 2e8,
            scale_max: 2e8,
            cameras: CameraRing { count: 2, width: 31, height: 31, focal: 30.0, elevation: 0.0, ..CameraRing::default() },
            ..SceneSpec::default()
        };
        let scene = generate_scene(&spec).unwrap();
        let t = math::sigmoid(scene.target.cloud.t_base[0]);
        for v in &scene.views {
            let peak = v.thermal.data.iter().copied().fold(0.0, f64::max);
            // pixel (15, 15) samples the projected center
            let cam = &v.camera;
            let pg = raster::project_gaussian(0, &scene.target.cloud.position(0), &scene.target.cloud.rotation(0), &scene.target.cloud.log_scale(0), cam, &Default::default()).unwrap();
            let alpha = raster::compute_alpha(&pg, &[15.5, 15.5], scene.target.cloud.opacity_t[0], &Default::default());
            assert!((peak - t * alpha).abs() < 1e-12, "{peak} vs {}", t * alpha);
        }
    }

    #[test]
    fn hot_sphere_peak_inside_its_projection() {
        let spec = SceneSpec {
            temperature: HotSphere { center: [0.0; 3], radius: 0.5, t_hot: 100.0, t_cold: 0.0, softness: 0.05 },
            ..small_spec()
        };
        let scene = generate_scene(&spec).unwrap();
        for v in &scene.views {
            let cam = &v.camera;
            let c = cam.to_camera(&spec.temperature.center);
            let u = cam.fx * c[0] / c[2] + cam.cx;
            let w = cam.fy * c[1] / c[2] + cam.cy;
            let r = cam.fx * spec.temperature.radius / math::sqrt(c[2] * c[2] - spec.temperature.radius.powi(2));
            let k = v.thermal.data.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
            let (px, py) = ((k % v.thermal.width) as f64 + 0.5, (k / v.thermal.width) as f64 + 0.5);
            assert!(((px - u).powi(2) + (py - w).powi(2)).sqrt() <= r, "peak ({px}, {py}) outside disc at ({u}, {w}) r {r}");
        }
    }

    #[test]
    fn invisible_scene_is_an_error() {
        // a ring far from the cloud: it is behind half the cameras and past the far plane of the rest
        let mut s = small_spec();
        s.cameras.target = [100.0, 0.0, 0.0];
        s.cameras.radius = 1.0;
        assert!(matches!(generate_scene(&s), Err(Error::Scene(_))));
    }

    #[test]
    fn rejects_out_of_range_temperature() {
        let mut s = small_spec();
        s.temperature.t_hot = 500.0;
        assert!(generate_scene(&s).is_err());
    }

    #[test]
    fn ring_focus_is_target() {
        let ring = CameraRing { target: [0.3, -0.2, 0.1], ..CameraRing::default() };
        let (p, d) = camera_focus(&ring.cameras());
        for k in 0..3 {
            assert!((p[k] - ring.target[k]).abs() < 1e-9);
        }
        assert!((d - math::sqrt(ring.radius.powi(2) + ring.elevation.powi(2))).abs() < 1e-9);
    }
}
