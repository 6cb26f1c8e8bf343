//! Per-Gaussian appearance: SH color, frequency encodings, orthogonal
//! extraction of the thermal embedding and the color/thermal heads.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::gaussian::sh_coeff_count;
use crate::math::{self, Vec3};
use crate::nn::{Linear, Mlp, MlpTrace};

pub const SH_C0: f64 = 0.28209479177387814;
const SH_C1: f64 = 0.4886025119029199;
const SH_C2: [f64; 5] = [
    1.0925484305920792,
    -1.0925484305920792,
    0.31539156525252005,
    -1.0925484305920792,
    0.5462742152960396,
];
const SH_C3: [f64; 7] = [
    -0.5900435899266435,
    2.890611442640554,
    -0.4570457994644658,
    0.3731763325901154,
    -0.4570457994644658,
    1.445305721320277,
    -0.5900435899266435,
];

pub const MAX_SH_DEGREE: usize = 3;

/// Real SH basis values up to degree 3 and their gradients w.r.t. the direction.
pub fn sh_basis(dir: &Vec3) -> ([f64; 16], [Vec3; 16]) {
    let [x, y, z] = *dir;
    let (xx, yy, zz) = (x * x, y * y, z * z);
    let b = [
        SH_C0,
        -SH_C1 * y,
        SH_C1 * z,
        -SH_C1 * x,
        SH_C2[0] * x * y,
        SH_C2[1] * y * z,
        SH_C2[2] * (2.0 * zz - xx - yy),
        SH_C2[3] * x * z,
        SH_C2[4] * (xx - yy),
        SH_C3[0] * y * (3.0 * xx - yy),
        SH_C3[1] * x * y * z,
        SH_C3[2] * y * (4.0 * zz - xx - yy),
        SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy),
        SH_C3[4] * x * (4.0 * zz - xx - yy),
        SH_C3[5] * z * (xx - yy),
        SH_C3[6] * x * (xx - 3.0 * yy),
    ];
    let g = [
        [0.0, 0.0, 0.0],
        [0.0, -SH_C1, 0.0],
        [0.0, 0.0, SH_C1],
        [-SH_C1, 0.0, 0.0],
        [SH_C2[0] * y, SH_C2[0] * x, 0.0],
        [0.0, SH_C2[1] * z, SH_C2[1] * y],
        [SH_C2[2] * -2.0 * x, SH_C2[2] * -2.0 * y, SH_C2[2] * 4.0 * z],
        [SH_C2[3] * z, 0.0, SH_C2[3] * x],
        [SH_C2[4] * 2.0 * x, SH_C2[4] * -2.0 * y, 0.0],
        [SH_C3[0] * 6.0 * x * y, SH_C3[0] * (3.0 * xx - 3.0 * yy), 0.0],
        [SH_C3[1] * y * z, SH_C3[1] * x * z, SH_C3[1] * x * y],
        [SH_C3[2] * -2.0 * x * y, SH_C3[2] * (4.0 * zz - xx - 3.0 * yy), SH_C3[2] * 8.0 * y * z],
        [SH_C3[3] * -6.0 * x * z, SH_C3[3] * -6.0 * y * z, SH_C3[3] * (6.0 * zz - 3.0 * xx - 3.0 * yy)],
        [SH_C3[4] * (4.0 * zz - 3.0 * xx - yy), SH_C3[4] * -2.0 * x * y, SH_C3[4] * 8.0 * x * z],
        [SH_C3[5] * 2.0 * x * z, SH_C3[5] * -2.0 * y * z, SH_C3[5] * (xx - yy)],
        [SH_C3[6] * (3.0 * xx - 3.0 * yy), SH_C3[6] * -6.0 * x * y, 0.0],
    ];
    (b, g)
}

/// Base color from SH: `clamp(sum_k coef_k Y_k(dir) + 0.5, 0, 1)` per channel.
///
/// `sh` holds `3 * (deg + 1)^2` coefficients, channel-major.
pub fn eval_sh(sh: &[f64], degree: usize, view_dir: &Vec3) -> Result<[f64; 3]> {
    if degree > MAX_SH_DEGREE {
        return Err(Error::Config(format!("unsupported SH degree {degree} (max {MAX_SH_DEGREE})")));
    }
    let nb = sh_coeff_count(degree);
    if sh.len() != 3 * nb {
        return Err(Error::Config(format!(
            "SH degree {degree} needs {} coefficients, got {}",
            3 * nb,
            sh.len()
        )));
    }
    Ok(eval_sh_unchecked(sh, nb, view_dir).0)
}

/// Returns the clamped color and the unclamped pre-offset sums.
fn eval_sh_unchecked(sh: &[f64], nb: usize, dir: &Vec3) -> ([f64; 3], [f64; 3]) {
    let (basis, _) = sh_basis(dir);
    let mut raw = [0.0; 3];
    for c in 0..3 {
        raw[c] = sh[c * nb..(c + 1) * nb].iter().zip(&basis).map(|(a, b)| a * b).sum::<f64>() + 0.5;
    }
    (raw.map(|v| v.clamp(0.0, 1.0)), raw)
}

/// Backward of [`eval_sh`]; accumulates into `d_sh` and returns `dL/d(dir)`.
fn eval_sh_backward(sh: &[f64], nb: usize, dir: &Vec3, raw: &[f64; 3], d_rgb: &[f64; 3], d_sh: &mut [f64]) -> Vec3 {
    let (basis, jac) = sh_basis(dir);
    let mut d_dir = [0.0; 3];
    for c in 0..3 {
        if !(0.0..=1.0).contains(&raw[c]) || d_rgb[c] == 0.0 {
            continue;
        }
        let g = d_rgb[c];
        for k in 0..nb {
            d_sh[c * nb + k] += g * basis[k];
            let coef = sh[c * nb + k];
            for a in 0..3 {
                d_dir[a] += g * coef * jac[k][a];
            }
        }
    }
    d_dir
}

/// `concat_{n=0}^{L-1} [sin(2^n pi x), cos(2^n pi x)]`, each block covering the three coordinates.
pub fn positional_encoding(x: &Vec3, levels: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(6 * levels);
    for n in 0..levels {
        let f = (1u64 << n) as f64 * core::f64::consts::PI;
        for v in x {
            out.push(math::sin(f * v));
        }
        for v in x {
            out.push(math::cos(f * v));
        }
    }
    out
}

fn positional_encoding_backward(x: &Vec3, levels: usize, d_enc: &[f64]) -> Vec3 {
    let mut dx = [0.0; 3];
    for n in 0..levels {
        let f = (1u64 << n) as f64 * core::f64::consts::PI;
        for k in 0..3 {
            let a = f * x[k];
            dx[k] += d_enc[6 * n + k] * f * math::cos(a);
            dx[k] -= d_enc[6 * n + 3 + k] * f * math::sin(a);
        }
    }
    dx
}

/// Learned maps shared by every Gaussian.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AppearanceParams {
    pub phi_sh: Linear,
    pub phi_e: Linear,
    pub color_mlp: Mlp,
    pub thermal_mlp: Mlp,
    pub thermal_head: Linear,
    pub view_levels: usize,
    pub pos_levels: usize,
    pub feature_dim: usize,
}

/// Shape knobs for [`AppearanceParams::new`].
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct AppearanceDims {
    pub sh_degree: usize,
    pub embed_dim: usize,
    pub view_levels: usize,
    pub pos_levels: usize,
    pub feature_dim: usize,
    pub hidden: usize,
}

impl Default for AppearanceDims {
    fn default() -> Self {
        Self { sh_degree: 2, embed_dim: 16, view_levels: 4, pos_levels: 6, feature_dim: 32, hidden: 32 }
    }
}

impl AppearanceParams {
    /// Random hidden layers; zero output layers so both residual heads start at exactly zero.
    /// Both residuals start at exactly zero: the color MLP and the thermal head
    /// have zero output layers. Thermal features themselves start non-zero.
    pub fn new<R: Rng + ?Sized>(dims: &AppearanceDims, rng: &mut R) -> Self {
        let sh_len = 3 * sh_coeff_count(dims.sh_degree);
        let mut thermal_mlp = Mlp::new(dims.embed_dim + 6 * dims.pos_levels, dims.hidden, 2, dims.feature_dim, rng);
        if let Some(last) = thermal_mlp.layers.last_mut() {
            *last = Linear::glorot(last.in_dim, last.out_dim, rng);
        }
        Self {
            phi_sh: Linear::glorot(sh_len, dims.embed_dim, rng),
            phi_e: Linear::glorot(dims.embed_dim, dims.embed_dim, rng),
            color_mlp: Mlp::new(dims.embed_dim + 6 * dims.view_levels, dims.hidden, 2, 3, rng),
            thermal_mlp,
            thermal_head: Linear::zeros(dims.feature_dim, 1),
            view_levels: dims.view_levels,
            pos_levels: dims.pos_levels,
            feature_dim: dims.feature_dim,
        }
    }

    pub fn embed_dim(&self) -> usize {
        self.phi_e.in_dim
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            phi_sh: self.phi_sh.zeros_like(),
            phi_e: self.phi_e.zeros_like(),
            color_mlp: self.color_mlp.zeros_like(),
            thermal_mlp: self.thermal_mlp.zeros_like(),
            thermal_head: self.thermal_head.zeros_like(),
            ..*self
        }
    }

    pub fn check_dims(&self, sh_len: usize, embed_dim: usize) -> Result<()> {
        let bad = |what: &str, want: usize, got: usize| {
            Err(Error::Config(format!("{what}: expected dimension {want}, found {got}")))
        };
        if self.phi_sh.in_dim != sh_len {
            return bad("phi_sh input", sh_len, self.phi_sh.in_dim);
        }
        if self.phi_sh.out_dim != embed_dim || self.phi_e.in_dim != embed_dim || self.phi_e.out_dim != embed_dim {
            return bad("phi_sh/phi_e width", embed_dim, self.phi_e.in_dim);
        }
        if self.color_mlp.in_dim() != embed_dim + 6 * self.view_levels || self.color_mlp.out_dim() != 3 {
            return bad("color_mlp input", embed_dim + 6 * self.view_levels, self.color_mlp.in_dim());
        }
        if self.thermal_mlp.in_dim() != embed_dim + 6 * self.pos_levels
            || self.thermal_mlp.out_dim() != self.feature_dim
        {
            return bad("thermal_mlp input", embed_dim + 6 * self.pos_levels, self.thermal_mlp.in_dim());
        }
        if self.thermal_head.in_dim != self.feature_dim || self.thermal_head.out_dim != 1 {
            return bad("thermal_head input", self.feature_dim, self.thermal_head.in_dim);
        }
        Ok(())
    }
}

const PROJECTION_EPS: f64 = 1e-12;

/// Intermediate values of [`orthogonal_extract`].
#[derive(Debug, Clone)]
pub struct OrthoTrace {
    pub sh_proj: Vec<f64>,
    pub e_orth: Vec<f64>,
    /// False when `|SH'|^2` fell below the projection epsilon.
    pub projected: bool,
}

/// Remove from `e_m` its component along `SH' = phi_sh(sh)` and map the rest through `phi_e`.
pub fn orthogonal_extract(e_m: &[f64], sh: &[f64], params: &AppearanceParams) -> (Vec<f64>, OrthoTrace) {
    let sh_proj = params.phi_sh.forward(sh);
    let (e_orth, projected) = reject(e_m, &sh_proj);
    let e_t = params.phi_e.forward(&e_orth);
    (e_t, OrthoTrace { sh_proj, e_orth, projected })
}

/// `e - (e.s / s.s) s`, or `e` unchanged when `s` is numerically zero.
pub fn reject(e: &[f64], s: &[f64]) -> (Vec<f64>, bool) {
    let b: f64 = s.iter().map(|v| v * v).sum();
    if b < PROJECTION_EPS {
        return (e.to_vec(), false);
    }
    let a: f64 = e.iter().zip(s).map(|(x, y)| x * y).sum();
    let k = a / b;
    (e.iter().zip(s).map(|(x, y)| x - k * y).collect(), true)
}

/// Returns `(dL/de_m, dL/dsh)` and accumulates into `grad`.
fn orthogonal_extract_backward(
    e_m: &[f64],
    sh: &[f64],
    params: &AppearanceParams,
    trace: &OrthoTrace,
    d_et: &[f64],
    grad: &mut AppearanceParams,
) -> (Vec<f64>, Vec<f64>) {
    let mut d_orth = vec![0.0; e_m.len()];
    params.phi_e.backward(&trace.e_orth, d_et, &mut grad.phi_e, &mut d_orth);
    let mut d_sh = vec![0.0; sh.len()];
    if !trace.projected {
        return (d_orth, d_sh);
    }
    let s = &trace.sh_proj;
    let b: f64 = s.iter().map(|v| v * v).sum();
    let a: f64 = e_m.iter().zip(s).map(|(x, y)| x * y).sum();
    let sg: f64 = s.iter().zip(&d_orth).map(|(x, y)| x * y).sum();
    let d_e: Vec<f64> = d_orth.iter().zip(s).map(|(g, sv)| g - sv * sg / b).collect();
    let d_s: Vec<f64> = (0..s.len())
        .map(|k| -(e_m[k] * sg / b + a * d_orth[k] / b - 2.0 * a * sg * s[k] / (b * b)))
        .collect();
    params.phi_sh.backward(sh, &d_s, &mut grad.phi_sh, &mut d_sh);
    (d_e, d_sh)
}

fn check_len(what: &str, want: usize, got: usize) -> Result<()> {
    if want != got {
        return Err(Error::Config(format!("{what}: expected length {want}, found {got}")));
    }
    Ok(())
}

/// `sigmoid(MLP(concat(e_m, pe_v)))`, each channel in (0, 1).
pub fn color_head(e_m: &[f64], pe_v: &[f64], params: &AppearanceParams) -> Result<[f64; 3]> {
    check_len("color_head input", params.color_mlp.in_dim(), e_m.len() + pe_v.len())?;
    let mut input = e_m.to_vec();
    input.extend_from_slice(pe_v);
    let (out, _) = params.color_mlp.forward(&input);
    Ok([math::sigmoid(out[0]), math::sigmoid(out[1]), math::sigmoid(out[2])])
}

/// `MLP(concat(e_t, pe_p))`, linear output of width `feature_dim`.
pub fn thermal_feature(e_t: &[f64], pe_p: &[f64], params: &AppearanceParams) -> Result<Vec<f64>> {
    check_len("thermal_feature input", params.thermal_mlp.in_dim(), e_t.len() + pe_p.len())?;
    let mut input = e_t.to_vec();
    input.extend_from_slice(pe_p);
    Ok(params.thermal_mlp.forward(&input).0)
}

/// `sigmoid(linear(f))`.
pub fn thermal_head(f_refined: &[f64], params: &AppearanceParams) -> f64 {
    let mut y = [0.0];
    params.thermal_head.forward_into(f_refined, &mut y);
    math::sigmoid(y[0])
}

/// Gradient of [`thermal_head`] w.r.t. its input; accumulates head parameter gradients.
pub fn thermal_head_backward(
    f_refined: &[f64],
    params: &AppearanceParams,
    d_out: f64,
    grad: &mut AppearanceParams,
) -> Vec<f64> {
    let t = thermal_head(f_refined, params);
    let d_logit = d_out * t * (1.0 - t);
    let mut df = vec![0.0; f_refined.len()];
    params.thermal_head.backward(f_refined, &[d_logit], &mut grad.thermal_head, &mut df);
    df
}

#[derive(Debug, Clone)]
pub struct ColorTrace {
    dir_raw: Vec3,
    dir: Vec3,
    sh_raw: [f64; 3],
    head_out: [f64; 3],
    mlp: MlpTrace,
}

/// Blended per-Gaussian RGB: SH color plus the re-centered color-head residual.
pub fn gaussian_color(
    mu: &Vec3,
    camera_center: &Vec3,
    sh: &[f64],
    sh_degree: usize,
    e_m: &[f64],
    params: &AppearanceParams,
) -> ([f64; 3], ColorTrace) {
    let dir_raw = math::sub3(mu, camera_center);
    let dir = math::normalize3(&dir_raw);
    let nb = sh_coeff_count(sh_degree);
    let (base, sh_raw) = eval_sh_unchecked(sh, nb, &dir);
    let mut head_input = e_m.to_vec();
    head_input.extend(positional_encoding(&dir, params.view_levels));
    let (logits, mlp) = params.color_mlp.forward(&head_input);
    let head_out = [math::sigmoid(logits[0]), math::sigmoid(logits[1]), math::sigmoid(logits[2])];
    let rgb = [
        base[0] + head_out[0] - 0.5,
        base[1] + head_out[1] - 0.5,
        base[2] + head_out[2] - 0.5,
    ];
    (rgb, ColorTrace { dir_raw, dir, sh_raw, head_out, mlp })
}

/// Backward of [`gaussian_color`]: accumulates into `d_sh`, `d_em`, `grad`, and returns `dL/dmu`.
pub fn gaussian_color_backward(
    trace: &ColorTrace,
    sh: &[f64],
    sh_degree: usize,
    params: &AppearanceParams,
    d_rgb: &[f64; 3],
    d_sh: &mut [f64],
    d_em: &mut [f64],
    grad: &mut AppearanceParams,
) -> Vec3 {
    let nb = sh_coeff_count(sh_degree);
    let mut d_dir = eval_sh_backward(sh, nb, &trace.dir, &trace.sh_raw, d_rgb, d_sh);
    let d_logits: Vec<f64> = (0..3).map(|c| d_rgb[c] * trace.head_out[c] * (1.0 - trace.head_out[c])).collect();
    let d_input = params.color_mlp.backward(&trace.mlp, &d_logits, &mut grad.color_mlp);
    let de = params.embed_dim();
    for (a, b) in d_em.iter_mut().zip(&d_input[..de]) {
        *a += b;
    }
    let d_pe = positional_encoding_backward(&trace.dir, params.view_levels, &d_input[de..]);
    for k in 0..3 {
        d_dir[k] += d_pe[k];
    }
    math::normalize3_backward(&trace.dir_raw, &d_dir)
}

/// View-independent thermal feature `F_t` for one Gaussian.
#[derive(Debug, Clone)]
pub struct FeatureTrace {
    ortho: OrthoTrace,
    mlp: MlpTrace,
}

pub fn gaussian_thermal_feature(
    mu: &Vec3,
    sh: &[f64],
    e_m: &[f64],
    params: &AppearanceParams,
) -> (Vec<f64>, FeatureTrace) {
    let (e_t, ortho) = orthogonal_extract(e_m, sh, params);
    let mut input = e_t;
    input.extend(positional_encoding(mu, params.pos_levels));
    let (f, mlp) = params.thermal_mlp.forward(&input);
    (f, FeatureTrace { ortho, mlp })
}

/// Backward of [`gaussian_thermal_feature`]; accumulates into `d_sh`, `d_em`, `grad`, returns `dL/dmu`.
pub fn gaussian_thermal_feature_backward(
    trace: &FeatureTrace,
    mu: &Vec3,
    sh: &[f64],
    e_m: &[f64],
    params: &AppearanceParams,
    d_f: &[f64],
    d_sh: &mut [f64],
    d_em: &mut [f64],
    grad: &mut AppearanceParams,
) -> Vec3 {
    let d_input = params.thermal_mlp.backward(&trace.mlp, d_f, &mut grad.thermal_mlp);
    let de = params.embed_dim();
    let (d_e, d_s) = orthogonal_extract_backward(e_m, sh, params, &trace.ortho, &d_input[..de], grad);
    for (a, b) in d_em.iter_mut().zip(&d_e) {
        *a += b;
    }
    for (a, b) in d_sh.iter_mut().zip(&d_s) {
        *a += b;
    }
    positional_encoding_backward(mu, params.pos_levels, &d_input[de..])
}
