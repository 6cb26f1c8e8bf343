//! Screen-space projection and front-to-back alpha blending of Gaussians,
//! with exact reverse-mode gradients.
//!
//! Pixel `(x, y)` samples the image plane at `(x + 0.5, y + 0.5)`. Depth is
//! camera-space `z`. Rendering is single-threaded and fully deterministic:
//! Gaussians are ordered by `(depth, index)` and every accumulation runs in a
//! fixed order.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::gaussian::{self, GaussianCloud};
use crate::image::Image;
use crate::math::{self, Mat3, Vec3};

/// Pinhole camera with a world-to-camera rigid transform (`x_cam = R x_world + t`).
///
/// Camera axes follow the computer-vision convention: `+x` right, `+y` down, `+z` forward.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Camera {
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub rotation: Mat3,
    pub translation: Vec3,
    pub near: f64,
    pub far: f64,
}

impl Camera {
    /// Camera at `eye` looking at `target`; `up` is a world-space hint.
    pub fn look_at(eye: &Vec3, target: &Vec3, up: &Vec3, width: usize, height: usize, focal: f64) -> Self {
        let forward = math::normalize3(&math::sub3(target, eye));
        let mut right = math::cross3(&forward, up);
        if math::norm3(&right) < 1e-9 {
            right = math::cross3(&forward, &[1.0, 0.0, 0.0]);
        }
        let right = math::normalize3(&right);
        let down = math::cross3(&forward, &right);
        let rotation = [right, down, forward];
        let translation = math::scale3(&math::mat3_vec(&rotation, eye), -1.0);
        Self {
            width,
            height,
            fx: focal,
            fy: focal,
            cx: width as f64 * 0.5,
            cy: height as f64 * 0.5,
            rotation,
            translation,
            near: 0.01,
            far: 100.0,
        }
    }

    /// Camera center in world coordinates, `-R^T t`.
    pub fn center(&self) -> Vec3 {
        let rt = math::mat3_transpose(&self.rotation);
        math::scale3(&math::mat3_vec(&rt, &self.translation), -1.0)
    }

    pub fn to_camera(&self, p: &Vec3) -> Vec3 {
        math::add3(&math::mat3_vec(&self.rotation, p), &self.translation)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::Config(format!("focal lengths must be positive, got {} / {}", self.fx, self.fy)));
        }
        if !(self.near > 0.0 && self.near < self.far) {
            return Err(Error::Config(format!("need 0 < near < far, got {} / {}", self.near, self.far)));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::Config(String::from("image size must be non-zero")));
        }
        Ok(())
    }
}

/// Numeric conventions of the blender.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct RenderSettings {
    /// Contributions with smaller alpha are skipped.
    pub alpha_min: f64,
    /// Upper clamp on alpha.
    pub alpha_max: f64,
    /// Blending stops once transmittance falls below this.
    pub transmittance_min: f64,
    /// Added to the diagonal of every screen-space covariance (pixels^2).
    pub dilation: f64,
    pub tile_size: usize,
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self { alpha_min: 1.0 / 255.0, alpha_max: 0.999, transmittance_min: 1e-4, dilation: 0.3, tile_size: 16 }
    }
}

impl RenderSettings {
    /// Mahalanobis radius beyond which even a fully opaque Gaussian falls under `alpha_min`.
    fn cutoff_sigmas(&self) -> f64 {
        if self.alpha_min > 0.0 && self.alpha_min < 1.0 {
            math::sqrt(2.0 * math::ln(1.0 / self.alpha_min))
        } else {
            // no cutoff: cover a generous footprint
            6.0
        }
    }
}

/// A Gaussian after projection onto the image plane.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedGaussian {
    pub index: usize,
    pub mean2d: [f64; 2],
    /// Symmetric 2x2 covariance `(a, b, c)` = `[[a, b], [b, c]]`, dilation included.
    pub cov2d: [f64; 3],
    /// Inverse of `cov2d` in the same layout.
    pub conic: [f64; 3],
    pub depth: f64,
    pub cam: Vec3,
    /// Inclusive pixel rectangle that can receive contributions: `(x0, y0, x1, y1)`.
    pub rect: (usize, usize, usize, usize),
}

fn jacobian(cam: &Camera, p: &Vec3) -> [[f64; 3]; 2] {
    let (x, y, z) = (p[0], p[1], p[2]);
    [
        [cam.fx / z, 0.0, -cam.fx * x / (z * z)],
        [0.0, cam.fy / z, -cam.fy * y / (z * z)],
    ]
}

/// Project one Gaussian; `None` when it is culled.
///
/// Culling happens when the depth leaves `(near, far)` or when the footprint
/// (the ellipse outside which alpha is below the cutoff for any opacity)
/// misses every pixel center.
pub fn project_gaussian(
    index: usize,
    mu: &Vec3,
    rot: &[f64; 4],
    log_scale: &Vec3,
    cam: &Camera,
    settings: &RenderSettings,
) -> Option<ProjectedGaussian> {
    let p = cam.to_camera(mu);
    if !(p[2] > cam.near && p[2] < cam.far) {
        return None;
    }
    let sigma = gaussian::covariance_from_rs(rot, log_scale);
    let w = &cam.rotation;
    let m = math::mat3_mul(&math::mat3_mul(w, &sigma), &math::mat3_transpose(w));
    let j = jacobian(cam, &p);
    let mut cov = [[0.0; 2]; 2];
    for r in 0..2 {
        for c in 0..2 {
            let mut s = 0.0;
            for a in 0..3 {
                for b in 0..3 {
                    s += j[r][a] * m[a][b] * j[c][b];
                }
            }
            cov[r][c] = s;
        }
    }
    let a = cov[0][0] + settings.dilation;
    let b = 0.5 * (cov[0][1] + cov[1][0]);
    let c = cov[1][1] + settings.dilation;
    let det = a * c - b * b;
    if !(det > 0.0) || !det.is_finite() {
        return None;
    }
    let conic = [c / det, -b / det, a / det];
    let mid = 0.5 * (a + c);
    let lambda_max = mid + math::sqrt((mid * mid - det).max(0.0));
    let radius = settings.cutoff_sigmas() * math::sqrt(lambda_max);
    let mean2d = [cam.fx * p[0] / p[2] + cam.cx, cam.fy * p[1] / p[2] + cam.cy];
    // pixel centers sit at integer + 0.5
    let x0 = math::ceil(mean2d[0] - radius - 0.5);
    let x1 = math::floor(mean2d[0] + radius - 0.5);
    let y0 = math::ceil(mean2d[1] - radius - 0.5);
    let y1 = math::floor(mean2d[1] + radius - 0.5);
    let (wmax, hmax) = ((cam.width - 1) as f64, (cam.height - 1) as f64);
    if x1 < 0.0 || y1 < 0.0 || x0 > wmax || y0 > hmax || !(x0 <= x1 && y0 <= y1) {
        return None;
    }
    let rect = (
        x0.max(0.0) as usize,
        y0.max(0.0) as usize,
        x1.min(wmax) as usize,
        y1.min(hmax) as usize,
    );
    Some(ProjectedGaussian { index, mean2d, cov2d: [a, b, c], conic, depth: p[2], cam: p, rect })
}

/// `sigmoid(o) * exp(-1/2 d^T cov2d^-1 d)` clamped to `alpha_max`.
///
/// Callers skip the contribution when the result is below `alpha_min`.
pub fn compute_alpha(pg: &ProjectedGaussian, pixel: &[f64; 2], opacity_logit: f64, settings: &RenderSettings) -> f64 {
    let power = gaussian_power(pg, pixel);
    (math::sigmoid(opacity_logit) * math::exp(power)).min(settings.alpha_max)
}

#[inline]
fn gaussian_power(pg: &ProjectedGaussian, pixel: &[f64; 2]) -> f64 {
    let dx = pixel[0] - pg.mean2d[0];
    let dy = pixel[1] - pg.mean2d[1];
    -0.5 * (pg.conic[0] * dx * dx + pg.conic[2] * dy * dy) - pg.conic[1] * dx * dy
}

/// All visible Gaussians of one view, sorted front to back, binned into tiles.
#[derive(Debug, Clone)]
pub struct Projection {
    pub width: usize,
    pub height: usize,
    pub tile_size: usize,
    pub tiles_x: usize,
    pub tiles_y: usize,
    pub gaussians: Vec<ProjectedGaussian>,
    /// Per tile, slots into `gaussians` in front-to-back order.
    pub tiles: Vec<Vec<u32>>,
}

impl Projection {
    /// Number of Gaussians in the source cloud (for sizing gradient buffers).
    pub fn slot_count(&self) -> usize {
        self.gaussians.len()
    }
}

pub fn project_cloud(cloud: &GaussianCloud, cam: &Camera, settings: &RenderSettings) -> Projection {
    let mut gaussians: Vec<ProjectedGaussian> = (0..cloud.len())
        .filter_map(|i| {
            project_gaussian(i, &cloud.position(i), &cloud.rotation(i), &cloud.log_scale(i), cam, settings)
        })
        .collect();
    gaussians.sort_by(|a, b| a.depth.total_cmp(&b.depth).then(a.index.cmp(&b.index)));
    let ts = settings.tile_size.max(1);
    let tiles_x = cam.width.div_ceil(ts);
    let tiles_y = cam.height.div_ceil(ts);
    let mut tiles = vec![Vec::new(); tiles_x * tiles_y];
    for (slot, g) in gaussians.iter().enumerate() {
        let (x0, y0, x1, y1) = g.rect;
        for ty in y0 / ts..=y1 / ts {
            for tx in x0 / ts..=x1 / ts {
                tiles[ty * tiles_x + tx].push(slot as u32);
            }
        }
    }
    Projection { width: cam.width, height: cam.height, tile_size: ts, tiles_x, tiles_y, gaussians, tiles }
}

/// Blended outputs of one modality.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalityImages {
    pub color: Image,
    pub depth: Image,
    pub acc: Image,
}

#[derive(Debug, Clone, Copy)]
struct Contribution {
    slot: u32,
    alpha: f64,
    transmittance: f64,
    clamped: bool,
}

/// Per-pixel contribution lists recorded by a forward pass.
#[derive(Debug, Clone, Default)]
pub struct BlendCache {
    width: usize,
    height: usize,
    channels: usize,
    offsets: Vec<usize>,
    contribs: Vec<Contribution>,
}

impl BlendCache {
    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    /// Total number of recorded (pixel, Gaussian) contributions.
    pub fn contribution_count(&self) -> usize {
        self.contribs.len()
    }

    /// `(sum of alpha_i T_i, acc)` per pixel, for checking conservation.
    pub fn weight_sums(&self) -> Vec<f64> {
        (0..self.width * self.height)
            .map(|p| self.contribs[self.offsets[p]..self.offsets[p + 1]].iter().map(|c| c.alpha * c.transmittance).sum())
            .collect()
    }
}

/// Blend `values` (`M x channels`, indexed by Gaussian id) using opacities `opacity_logits` (`M`).
pub fn blend(
    proj: &Projection,
    opacity_logits: &[f64],
    values: &[f64],
    channels: usize,
    settings: &RenderSettings,
) -> (ModalityImages, BlendCache) {
    let (w, h) = (proj.width, proj.height);
    let mut color = Image::zeros(w, h, channels);
    let mut depth = Image::zeros(w, h, 1);
    let mut acc = Image::zeros(w, h, 1);
    let opac: Vec<f64> = proj.gaussians.iter().map(|g| math::sigmoid(opacity_logits[g.index])).collect();
    let mut per_pixel: Vec<Vec<Contribution>> = vec![Vec::new(); w * h];
    let ts = proj.tile_size;
    for ty in 0..proj.tiles_y {
        for tx in 0..proj.tiles_x {
            let list = &proj.tiles[ty * proj.tiles_x + tx];
            for py in ty * ts..((ty + 1) * ts).min(h) {
                for px in tx * ts..((tx + 1) * ts).min(w) {
                    let pix = [px as f64 + 0.5, py as f64 + 0.5];
                    let p = py * w + px;
                    let mut t = 1.0;
                    let mut out = vec![0.0; channels];
                    let mut d = 0.0;
                    let rec = &mut per_pixel[p];
                    for &slot in list {
                        let g = &proj.gaussians[slot as usize];
                        let (x0, y0, x1, y1) = g.rect;
                        if px < x0 || px > x1 || py < y0 || py > y1 {
                            continue;
                        }
                        let power = gaussian_power(g, &pix);
                        if power > 0.0 {
                            continue;
                        }
                        let raw = opac[slot as usize] * math::exp(power);
                        if raw < settings.alpha_min {
                            continue;
                        }
                        let clamped = raw > settings.alpha_max;
                        let alpha = if clamped { settings.alpha_max } else { raw };
                        let wgt = alpha * t;
                        let v = &values[g.index * channels..(g.index + 1) * channels];
                        for c in 0..channels {
                            out[c] += v[c] * wgt;
                        }
                        d += g.depth * wgt;
                        rec.push(Contribution { slot, alpha, transmittance: t, clamped });
                        t *= 1.0 - alpha;
                        if t < settings.transmittance_min {
                            break;
                        }
                    }
                    for c in 0..channels {
                        color.data[p * channels + c] = out[c];
                    }
                    depth.data[p] = d;
                    acc.data[p] = 1.0 - t;
                }
            }
        }
    }
    let mut offsets = Vec::with_capacity(w * h + 1);
    let mut contribs = Vec::with_capacity(per_pixel.iter().map(Vec::len).sum());
    offsets.push(0);
    for list in per_pixel {
        contribs.extend(list);
        offsets.push(contribs.len());
    }
    (ModalityImages { color, depth, acc }, BlendCache { width: w, height: h, channels, offsets, contribs })
}

/// Gradients w.r.t. projected quantities, indexed by projection slot.
#[derive(Debug, Clone)]
pub struct ProjectionGrads {
    pub mean2d: Vec<[f64; 2]>,
    pub conic: Vec<[f64; 3]>,
    pub depth: Vec<f64>,
}

impl ProjectionGrads {
    pub fn zeros(proj: &Projection) -> Self {
        let n = proj.slot_count();
        Self { mean2d: vec![[0.0; 2]; n], conic: vec![[0.0; 3]; n], depth: vec![0.0; n] }
    }
}

/// Reverse pass of [`blend`].
///
/// `d_color` / `d_depth` are the upstream gradients of the blended images.
/// Accumulates into `d_values` (`M x channels`), `d_opacity` (`M`) and `pgrads`.
#[allow(clippy::too_many_arguments)]
pub fn blend_backward(
    proj: &Projection,
    cache: &BlendCache,
    opacity_logits: &[f64],
    values: &[f64],
    d_color: &Image,
    d_depth: &Image,
    d_values: &mut [f64],
    d_opacity: &mut [f64],
    pgrads: &mut ProjectionGrads,
) -> Result<()> {
    if cache.is_empty() {
        return Err(Error::Usage(String::from("backward called without a recorded forward pass")));
    }
    let channels = cache.channels;
    if d_color.width != cache.width
        || d_color.height != cache.height
        || d_color.channels != channels
        || d_depth.width != cache.width
        || d_depth.height != cache.height
    {
        return Err(Error::Shape(format!(
            "upstream gradients {}x{}x{} do not match the cached {}x{}x{} render",
            d_color.width, d_color.height, d_color.channels, cache.width, cache.height, channels
        )));
    }
    let w = cache.width;
    let mut behind = vec![0.0; channels];
    for p in 0..w * cache.height {
        let list = &cache.contribs[cache.offsets[p]..cache.offsets[p + 1]];
        if list.is_empty() {
            continue;
        }
        let dc = &d_color.data[p * channels..(p + 1) * channels];
        let dd = d_depth.data[p];
        if dd == 0.0 && dc.iter().all(|v| *v == 0.0) {
            continue;
        }
        let pix = [(p % w) as f64 + 0.5, (p / w) as f64 + 0.5];
        behind.iter_mut().for_each(|v| *v = 0.0);
        let mut behind_depth = 0.0;
        for con in list.iter().rev() {
            let g = &proj.gaussians[con.slot as usize];
            let v = &values[g.index * channels..(g.index + 1) * channels];
            let wgt = con.alpha * con.transmittance;
            let mut d_alpha = 0.0;
            for c in 0..channels {
                d_values[g.index * channels + c] += dc[c] * wgt;
                d_alpha += dc[c] * (v[c] - behind[c]);
                behind[c] = con.alpha * v[c] + (1.0 - con.alpha) * behind[c];
            }
            pgrads.depth[con.slot as usize] += dd * wgt;
            d_alpha += dd * (g.depth - behind_depth);
            behind_depth = con.alpha * g.depth + (1.0 - con.alpha) * behind_depth;
            d_alpha *= con.transmittance;
            if con.clamped {
                continue;
            }
            // alpha = s * G with s = sigmoid(o), G = exp(power)
            let power = gaussian_power(g, &pix);
            let gval = math::exp(power);
            let s = math::sigmoid(opacity_logits[g.index]);
            d_opacity[g.index] += d_alpha * gval * s * (1.0 - s);
            let d_power = d_alpha * con.alpha;
            let dx = pix[0] - g.mean2d[0];
            let dy = pix[1] - g.mean2d[1];
            let slot = con.slot as usize;
            pgrads.conic[slot][0] += -0.5 * dx * dx * d_power;
            pgrads.conic[slot][1] += -dx * dy * d_power;
            pgrads.conic[slot][2] += -0.5 * dy * dy * d_power;
            // d power / d mean = (A dx + B dy, B dx + C dy)
            pgrads.mean2d[slot][0] += d_power * (g.conic[0] * dx + g.conic[1] * dy);
            pgrads.mean2d[slot][1] += d_power * (g.conic[1] * dx + g.conic[2] * dy);
        }
    }
    Ok(())
}

/// Pull projection-slot gradients back to cloud positions, rotations and log-scales.
pub fn project_backward(cloud: &GaussianCloud, cam: &Camera, proj: &Projection, pgrads: &ProjectionGrads, grad: &mut GaussianCloud) {
    for (slot, g) in proj.gaussians.iter().enumerate() {
        let dm = pgrads.mean2d[slot];
        let dq = pgrads.conic[slot];
        let dz_depth = pgrads.depth[slot];
        if dm == [0.0; 2] && dq == [0.0; 3] && dz_depth == 0.0 {
            continue;
        }
        let i = g.index;
        let p = g.cam;
        let (x, y, z) = (p[0], p[1], p[2]);
        let mut dp = [0.0; 3];
        // mean2d
        dp[0] += dm[0] * cam.fx / z;
        dp[1] += dm[1] * cam.fy / z;
        dp[2] += -dm[0] * cam.fx * x / (z * z) - dm[1] * cam.fy * y / (z * z);
        dp[2] += dz_depth;

        // conic -> cov2d: dCov = -Q dQ Q with dQ the full-matrix gradient
        let q = [[g.conic[0], g.conic[1]], [g.conic[1], g.conic[2]]];
        let dqm = [[dq[0], 0.5 * dq[1]], [0.5 * dq[1], dq[2]]];
        let t = math::mat2_mul(&math::mat2_mul(&q, &dqm), &q);
        let dcov = [[-t[0][0], -t[0][1]], [-t[1][0], -t[1][1]]];

        let rot = cloud.rotation(i);
        let ls = cloud.log_scale(i);
        let sigma = gaussian::covariance_from_rs(&rot, &ls);
        let wr = &cam.rotation;
        let m = math::mat3_mul(&math::mat3_mul(wr, &sigma), &math::mat3_transpose(wr));
        let j = jacobian(cam, &p);
        // dM = J^T dCov J
        let mut dmm = [[0.0; 3]; 3];
        for a in 0..3 {
            for b in 0..3 {
                let mut s = 0.0;
                for r in 0..2 {
                    for c in 0..2 {
                        s += j[r][a] * dcov[r][c] * j[c][b];
                    }
                }
                dmm[a][b] = s;
            }
        }
        // dJ = (dCov + dCov^T) J M
        let mut dj = [[0.0; 3]; 2];
        for r in 0..2 {
            for b in 0..3 {
                let mut s = 0.0;
                for c in 0..2 {
                    let sym = dcov[r][c] + dcov[c][r];
                    for a in 0..3 {
                        s += sym * j[c][a] * m[a][b];
                    }
                }
                dj[r][b] = s;
            }
        }
        let (fx, fy) = (cam.fx, cam.fy);
        dp[0] += dj[0][2] * (-fx / (z * z));
        dp[1] += dj[1][2] * (-fy / (z * z));
        dp[2] += dj[0][0] * (-fx / (z * z))
            + dj[0][2] * (2.0 * fx * x / (z * z * z))
            + dj[1][1] * (-fy / (z * z))
            + dj[1][2] * (2.0 * fy * y / (z * z * z));

        // dSigma = W^T dM W
        let wt = math::mat3_transpose(wr);
        let dsigma = math::mat3_mul(&math::mat3_mul(&wt, &dmm), wr);
        let (drot, dls) = gaussian::covariance_backward(&rot, &ls, &dsigma);
        for k in 0..4 {
            grad.rotations[4 * i + k] += drot[k];
        }
        for k in 0..3 {
            grad.log_scales[3 * i + k] += dls[k];
        }
        let dmu = math::mat3_vec(&wt, &dp);
        for k in 0..3 {
            grad.positions[3 * i + k] += dmu[k];
        }
    }
}

/// Project and blend RGB values (`M x 3`) with the color opacities.
pub fn render_rgb(cloud: &GaussianCloud, colors: &[f64], cam: &Camera, settings: &RenderSettings) -> ModalityImages {
    let proj = project_cloud(cloud, cam, settings);
    blend(&proj, &cloud.opacity_c, colors, 3, settings).0
}

/// Project and blend scalar thermal values (`M`) with the thermal opacities.
pub fn render_thermal(cloud: &GaussianCloud, values: &[f64], cam: &Camera, settings: &RenderSettings) -> ModalityImages {
    let proj = project_cloud(cloud, cam, settings);
    blend(&proj, &cloud.opacity_t, values, 1, settings).0
}
