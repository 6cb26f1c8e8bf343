//! Depth-aware radiation map, structure-only SSIM, depth uncertainty and the
//! uncertainty-weighted radiation loss.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::image::{Image, WindowFilter};
use crate::math;

/// Stefan-Boltzmann constant in W m^-2 K^-4.
pub const STEFAN_BOLTZMANN: f64 = 5.670374419e-8;
const CELSIUS_TO_KELVIN: f64 = 273.15;
const S_SSIM_EPS: f64 = 1e-8;
/// Pixels whose summed local variance is below this are excluded from the scalar S-SSIM.
const S_SSIM_VALID: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct RadiationConfig {
    pub tau: f64,
    pub t_min: f64,
    pub t_max: f64,
    pub window: usize,
    pub depth_floor: f64,
}

impl Default for RadiationConfig {
    fn default() -> Self {
        Self { tau: STEFAN_BOLTZMANN, t_min: -20.0, t_max: 120.0, window: 11, depth_floor: 1e-3 }
    }
}

impl RadiationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_min < self.t_max) {
            return Err(Error::Config(format!("t_min ({}) must be below t_max ({})", self.t_min, self.t_max)));
        }
        if self.window < 3 || self.window % 2 == 0 {
            return Err(Error::Config(format!("S-SSIM window must be odd and >= 3, got {}", self.window)));
        }
        if !(self.depth_floor > 0.0) {
            return Err(Error::Config(format!("depth_floor must be positive, got {}", self.depth_floor)));
        }
        Ok(())
    }

    pub fn filter(&self) -> Result<WindowFilter> {
        WindowFilter::gaussian(self.window, 1.5)
    }

    /// `(t - t_min) / (t_max - t_min)`.
    pub fn normalize(&self, celsius: f64) -> f64 {
        (celsius - self.t_min) / (self.t_max - self.t_min)
    }

    pub fn denormalize(&self, t: f64) -> f64 {
        self.t_min + t * (self.t_max - self.t_min)
    }

    pub fn kelvin(&self, t: f64) -> f64 {
        self.denormalize(t) + CELSIUS_TO_KELVIN
    }
}

/// Learned 3x3 filter and bias of the uncertainty branch.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct UncertaintyParams {
    /// Row-major, `weights[(dy + 1) * 3 + (dx + 1)]`.
    pub weights: [f64; 9],
    pub bias: f64,
}

impl UncertaintyParams {
    pub fn zeros() -> Self {
        Self { weights: [0.0; 9], bias: 0.0 }
    }
}

fn check_finite(img: &Image, what: &str) -> Result<()> {
    match img.data.iter().position(|v| !v.is_finite()) {
        None => Ok(()),
        Some(k) => {
            let p = k / img.channels;
            Err(Error::NonFinite {
                what: String::from(what),
                location: format!("pixel ({}, {})", p % img.width, p / img.width),
            })
        }
    }
}

fn check_plane(a: &Image, b: &Image, what: &str) -> Result<()> {
    a.check_same_shape(b, what)?;
    if a.channels != 1 {
        return Err(Error::Shape(format!("{what}: expected single-channel images, found {} channels", a.channels)));
    }
    Ok(())
}

/// `tau * T^4 / max(depth, depth_floor)^2` with `T` in Kelvin.
pub fn raw_radiation(t_norm: f64, depth: f64, cfg: &RadiationConfig) -> f64 {
    let k = cfg.kelvin(t_norm);
    let d = depth.max(cfg.depth_floor);
    cfg.tau * (k * k) * (k * k) / (d * d)
}

/// Raw radiation per pixel before normalization.
pub fn raw_radiation_map(t_gt_norm: &Image, depth: &Image, cfg: &RadiationConfig) -> Result<Image> {
    check_plane(t_gt_norm, depth, "radiation map")?;
    check_finite(t_gt_norm, "thermal ground truth")?;
    check_finite(depth, "depth")?;
    Ok(Image {
        data: t_gt_norm.data.iter().zip(&depth.data).map(|(&t, &d)| raw_radiation(t, d, cfg)).collect(),
        ..*depth
    })
}

/// Min-max normalized radiation map in [0, 1]; constant raw maps become zeros.
pub fn radiation_map(t_gt_norm: &Image, depth: &Image, cfg: &RadiationConfig) -> Result<Image> {
    let raw = raw_radiation_map(t_gt_norm, depth, cfg)?;
    Ok(min_max(&raw).0)
}

struct MinMax {
    lo: usize,
    hi: usize,
    range: f64,
}

fn min_max(raw: &Image) -> (Image, Option<MinMax>) {
    let (mut lo, mut hi) = (0, 0);
    for (k, v) in raw.data.iter().enumerate() {
        if *v < raw.data[lo] {
            lo = k;
        }
        if *v > raw.data[hi] {
            hi = k;
        }
    }
    let range = raw.data.get(hi).copied().unwrap_or(0.0) - raw.data.get(lo).copied().unwrap_or(0.0);
    if !(range > 0.0) {
        return (Image { data: vec![0.0; raw.data.len()], ..*raw }, None);
    }
    let base = raw.data[lo];
    (Image { data: raw.data.iter().map(|v| (v - base) / range).collect(), ..*raw }, Some(MinMax { lo, hi, range }))
}

/// Gradient of [`radiation_map`] w.r.t. depth.
pub fn radiation_map_backward(t_gt_norm: &Image, depth: &Image, cfg: &RadiationConfig, d_er: &Image) -> Result<Image> {
    let raw = raw_radiation_map(t_gt_norm, depth, cfg)?;
    let (er, mm) = min_max(&raw);
    let mut d_depth = Image::zeros(depth.width, depth.height, 1);
    let Some(mm) = mm else {
        return Ok(d_depth);
    };
    // E_k = (r_k - r_lo) / R
    let mut d_raw: Vec<f64> = d_er.data.iter().map(|g| g / mm.range).collect();
    let total: f64 = d_er.data.iter().sum();
    let weighted: f64 = d_er.data.iter().zip(&er.data).map(|(g, e)| g * e).sum();
    d_raw[mm.lo] += -total / mm.range + weighted / mm.range;
    d_raw[mm.hi] -= weighted / mm.range;
    for (k, g) in d_raw.iter().enumerate() {
        let d = depth.data[k];
        if d > cfg.depth_floor {
            d_depth.data[k] = -2.0 * g * raw.data[k] / d;
        }
    }
    Ok(d_depth)
}

/// Local statistics shared by the S-SSIM forward and backward passes.
struct LocalStats {
    mu_a: Vec<f64>,
    mu_b: Vec<f64>,
    var_a: Vec<f64>,
    var_b: Vec<f64>,
    cov: Vec<f64>,
}

fn local_stats(a: &Image, b: &Image, window: &WindowFilter) -> LocalStats {
    let (w, h) = (a.width, a.height);
    let mu_a = window.apply(&a.data, w, h);
    let mu_b = window.apply(&b.data, w, h);
    let sq = |x: &[f64], y: &[f64]| -> Vec<f64> { x.iter().zip(y).map(|(p, q)| p * q).collect() };
    let ea2 = window.apply(&sq(&a.data, &a.data), w, h);
    let eb2 = window.apply(&sq(&b.data, &b.data), w, h);
    let eab = window.apply(&sq(&a.data, &b.data), w, h);
    let n = w * h;
    let var_a = (0..n).map(|k| ea2[k] - mu_a[k] * mu_a[k]).collect();
    let var_b = (0..n).map(|k| eb2[k] - mu_b[k] * mu_b[k]).collect();
    let cov = (0..n).map(|k| eab[k] - mu_a[k] * mu_b[k]).collect();
    LocalStats { mu_a, mu_b, var_a, var_b, cov }
}

/// Structure-only similarity `2 C_ab / (C_a + C_b + eps)`.
///
/// Returns the mean over pixels with non-negligible local variance together with
/// the full per-pixel map.
pub fn s_ssim(a: &Image, b: &Image, window: &WindowFilter) -> Result<(f64, Image)> {
    check_plane(a, b, "s_ssim")?;
    let st = local_stats(a, b, window);
    let mut map = Image::zeros(a.width, a.height, 1);
    let (mut sum, mut count) = (0.0, 0usize);
    for k in 0..map.data.len() {
        let denom = st.var_a[k] + st.var_b[k];
        let s = 2.0 * st.cov[k] / (denom + S_SSIM_EPS);
        map.data[k] = s;
        if denom > S_SSIM_VALID {
            sum += s;
            count += 1;
        }
    }
    let scalar = if count == 0 { 0.0 } else { sum / count as f64 };
    Ok((scalar, map))
}

/// Gradients of `sum(d_map * s_map)` w.r.t. both inputs.
pub fn s_ssim_backward(a: &Image, b: &Image, window: &WindowFilter, d_map: &Image) -> Result<(Image, Image)> {
    check_plane(a, b, "s_ssim_backward")?;
    let (w, h) = (a.width, a.height);
    let n = w * h;
    let st = local_stats(a, b, window);
    let mut g_va = vec![0.0; n];
    let mut g_vb = vec![0.0; n];
    let mut g_cov = vec![0.0; n];
    for k in 0..n {
        let denom = st.var_a[k] + st.var_b[k] + S_SSIM_EPS;
        let s = 2.0 * st.cov[k] / denom;
        g_cov[k] = d_map.data[k] * 2.0 / denom;
        g_va[k] = -d_map.data[k] * s / denom;
        g_vb[k] = g_va[k];
    }
    // var = G(x^2) - G(x)^2 ; cov = G(ab) - G(a)G(b)
    let t_va = window.apply_adjoint(&g_va, w, h);
    let t_vb = window.apply_adjoint(&g_vb, w, h);
    let t_cov = window.apply_adjoint(&g_cov, w, h);
    let mean_a: Vec<f64> = (0..n).map(|k| -2.0 * g_va[k] * st.mu_a[k] - g_cov[k] * st.mu_b[k]).collect();
    let mean_b: Vec<f64> = (0..n).map(|k| -2.0 * g_vb[k] * st.mu_b[k] - g_cov[k] * st.mu_a[k]).collect();
    let t_ma = window.apply_adjoint(&mean_a, w, h);
    let t_mb = window.apply_adjoint(&mean_b, w, h);
    let mut da = Image::zeros(w, h, 1);
    let mut db = Image::zeros(w, h, 1);
    for k in 0..n {
        da.data[k] = 2.0 * a.data[k] * t_va[k] + b.data[k] * t_cov[k] + t_ma[k];
        db.data[k] = 2.0 * b.data[k] * t_vb[k] + a.data[k] * t_cov[k] + t_mb[k];
    }
    Ok((da, db))
}

fn conv3x3(depth: &Image, params: &UncertaintyParams) -> Vec<f64> {
    let (w, h) = (depth.width as isize, depth.height as isize);
    let mut out = vec![0.0; depth.data.len()];
    for y in 0..h {
        for x in 0..w {
            let mut z = params.bias;
            for dy in -1..=1isize {
                for dx in -1..=1isize {
                    let sx = (x + dx).clamp(0, w - 1);
                    let sy = (y + dy).clamp(0, h - 1);
                    z += params.weights[((dy + 1) * 3 + dx + 1) as usize] * depth.data[(sy * w + sx) as usize];
                }
            }
            out[(y * w + x) as usize] = z;
        }
    }
    out
}

/// `sigmoid(psi * depth + bias)` with replicate padding.
pub fn depth_uncertainty(depth: &Image, params: &UncertaintyParams) -> Image {
    Image { data: conv3x3(depth, params).into_iter().map(math::sigmoid).collect(), ..*depth }
}

/// Backward of [`depth_uncertainty`]: returns `dL/d depth` and accumulates into `grad`.
pub fn depth_uncertainty_backward(
    depth: &Image,
    params: &UncertaintyParams,
    d_u: &Image,
    grad: &mut UncertaintyParams,
) -> Image {
    let u = depth_uncertainty(depth, params);
    let (w, h) = (depth.width as isize, depth.height as isize);
    let mut d_depth = Image::zeros(depth.width, depth.height, 1);
    for y in 0..h {
        for x in 0..w {
            let k = (y * w + x) as usize;
            let dz = d_u.data[k] * u.data[k] * (1.0 - u.data[k]);
            if dz == 0.0 {
                continue;
            }
            grad.bias += dz;
            for dy in -1..=1isize {
                for dx in -1..=1isize {
                    let sx = (x + dx).clamp(0, w - 1);
                    let sy = (y + dy).clamp(0, h - 1);
                    let src = (sy * w + sx) as usize;
                    let wi = ((dy + 1) * 3 + dx + 1) as usize;
                    grad.weights[wi] += dz * depth.data[src];
                    d_depth.data[src] += dz * params.weights[wi];
                }
            }
        }
    }
    d_depth
}

/// Mean of `(1 - s) / exp(u) + u` over pixels.
pub fn boltz_loss(s_map: &Image, u: &Image) -> Result<f64> {
    check_plane(s_map, u, "boltz_loss")?;
    let n = s_map.data.len().max(1) as f64;
    Ok(s_map.data.iter().zip(&u.data).map(|(s, u)| (1.0 - s) * math::exp(-u) + u).sum::<f64>() / n)
}

/// Intermediate images of [`boltz_forward`].
#[derive(Debug, Clone)]
pub struct BoltzTrace {
    pub radiation: Image,
    pub uncertainty: Image,
    pub s_map: Image,
    pub loss: f64,
}

/// Full radiation branch: `E_r` from ground-truth temperature and thermal depth,
/// S-SSIM against the thermal render, uncertainty from depth, and the loss.
pub fn boltz_forward(
    thermal: &Image,
    t_gt_norm: &Image,
    depth: &Image,
    params: &UncertaintyParams,
    cfg: &RadiationConfig,
    window: &WindowFilter,
) -> Result<BoltzTrace> {
    let radiation = radiation_map(t_gt_norm, depth, cfg)?;
    let (_, s_map) = s_ssim(thermal, &radiation, window)?;
    let uncertainty = depth_uncertainty(depth, params);
    let loss = boltz_loss(&s_map, &uncertainty)?;
    Ok(BoltzTrace { radiation, uncertainty, s_map, loss })
}

/// Backward of [`boltz_forward`] scaled by `d_loss`; returns `(dL/d thermal, dL/d depth)`.
#[allow(clippy::too_many_arguments)]
pub fn boltz_backward(
    thermal: &Image,
    t_gt_norm: &Image,
    depth: &Image,
    params: &UncertaintyParams,
    cfg: &RadiationConfig,
    window: &WindowFilter,
    trace: &BoltzTrace,
    d_loss: f64,
    grad: &mut UncertaintyParams,
) -> Result<(Image, Image)> {
    let n = trace.s_map.data.len().max(1) as f64;
    let mut d_s = Image::zeros(thermal.width, thermal.height, 1);
    let mut d_u = Image::zeros(thermal.width, thermal.height, 1);
    for k in 0..d_s.data.len() {
        let e = math::exp(-trace.uncertainty.data[k]);
        d_s.data[k] = -d_loss * e / n;
        d_u.data[k] = d_loss * (1.0 - (1.0 - trace.s_map.data[k]) * e) / n;
    }
    let (d_thermal, d_er) = s_ssim_backward(thermal, &trace.radiation, window, &d_s)?;
    let mut d_depth = radiation_map_backward(t_gt_norm, depth, cfg, &d_er)?;
    let d_dep_u = depth_uncertainty_backward(depth, params, &d_u, grad);
    for (a, b) in d_depth.data.iter_mut().zip(&d_dep_u.data) {
        *a += b;
    }
    Ok((d_thermal, d_depth))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop, prop_assert, proptest};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(w: usize, h: usize, seed: u64) -> Image {
        noise_in(w, h, seed, 0.0, 1.0)
    }

    fn noise_in(w: usize, h: usize, seed: u64, lo: f64, hi: f64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..w * h).map(|_| rng.random_range(lo..hi)).collect();
        Image { width: w, height: h, channels: 1, data }
    }

    #[test]
    fn zero_celsius_at_unit_depth() {
        let cfg = RadiationConfig::default();
        let r = raw_radiation(cfg.normalize(0.0), 1.0, &cfg);
        // 40-digit evaluation of tau * 273.15^4
        assert!((r - 315.657_822_300_804_7).abs() < 1e-9);
        let r = raw_radiation(cfg.normalize(50.0), 2.0, &cfg);
        assert!((r - 154.585_368_771_186_04).abs() < 1e-9);
    }

    #[test]
    fn inverse_square() {
        let cfg = RadiationConfig::default();
        for t in [0.0, 0.3, 1.0] {
            for d in [0.5, 1.0, 3.7] {
                assert_eq!(raw_radiation(t, 2.0 * d, &cfg), raw_radiation(t, d, &cfg) / 4.0);
            }
        }
    }

    #[test]
    fn uniform_inputs_give_zero_map() {
        let cfg = RadiationConfig::default();
        let e = radiation_map(&Image::filled(5, 4, 1, 0.4), &Image::filled(5, 4, 1, 2.0), &cfg).unwrap();
        assert!(e.data.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn nan_pixel_is_named() {
        let cfg = RadiationConfig::default();
        let mut d = Image::filled(4, 3, 1, 1.0);
        d.data[2 * 4 + 1] = f64::NAN;
        match radiation_map(&Image::filled(4, 3, 1, 0.5), &d, &cfg) {
            Err(Error::NonFinite { location, .. }) => assert_eq!(location, "pixel (1, 2)"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn config_validation() {
        assert!(RadiationConfig::default().validate().is_ok());
        assert!(RadiationConfig { window: 4, ..Default::default() }.validate().is_err());
        assert!(RadiationConfig { t_min: 5.0, t_max: 5.0, ..Default::default() }.validate().is_err());
        assert!(RadiationConfig { depth_floor: 0.0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn normalization_round_trip() {
        let cfg = RadiationConfig::default();
        assert_eq!(cfg.normalize(50.0), 0.5);
        assert_eq!(cfg.normalize(-20.0), 0.0);
        assert_eq!(cfg.normalize(120.0), 1.0);
        for c in [-20.0, -3.3, 0.0, 36.6, 119.9] {
            assert!((cfg.denormalize(cfg.normalize(c)) - c).abs() < 1e-6);
        }
    }

    #[test]
    fn s_ssim_examples() {
        let win = WindowFilter::gaussian(11, 1.5).unwrap();
        let a = noise(16, 12, 1);
        let (s, _) = s_ssim(&a, &a, &win).unwrap();
        assert!((s - 1.0).abs() < 1e-6, "{s}");
        let neg = a.map(|v| -v);
        let (s, _) = s_ssim(&a, &neg, &win).unwrap();
        assert!((s + 1.0).abs() < 1e-6, "{s}");
        let (s, map) = s_ssim(&a, &Image::filled(16, 12, 1, 0.3), &win).unwrap();
        assert!(s.abs() < 1e-6);
        assert!(map.data.iter().all(|v| v.abs() < 1e-6));
        assert!(s_ssim(&a, &noise(12, 16, 2), &win).is_err());
    }

    #[test]
    fn uncertainty_examples() {
        let d = noise_in(6, 5, 3, 0.5, 4.0);
        let u = depth_uncertainty(&d, &UncertaintyParams::zeros());
        assert!(u.data.iter().all(|v| *v == 0.5));
        let u = depth_uncertainty(&d, &UncertaintyParams { bias: -60.0, ..UncertaintyParams::zeros() });
        assert!(u.data.iter().all(|v| *v < 1e-20));
        let lap = UncertaintyParams { weights: [0.0, 1.0, 0.0, 1.0, -4.0, 1.0, 0.0, 1.0, 0.0], bias: 0.0 };
        let u = depth_uncertainty(&Image::filled(6, 5, 1, 2.5), &lap);
        assert!(u.data.iter().all(|v| *v == 0.5));
    }

    #[test]
    fn boltz_examples() {
        let ones = Image::filled(4, 4, 1, 1.0);
        let zeros = Image::zeros(4, 4, 1);
        assert_eq!(boltz_loss(&ones, &zeros).unwrap(), 0.0);
        assert_eq!(boltz_loss(&zeros, &zeros).unwrap(), 1.0);
        // s = 0: stationary point of (1 - s) e^-u + u is u = ln(1 - s) = 0
        let f = |u: f64| boltz_loss(&zeros, &Image::filled(4, 4, 1, u)).unwrap();
        let h = 1e-5;
        assert!(((f(h) - f(-h)) / (2.0 * h)).abs() < 1e-9);
        assert!(f(0.0) < f(0.1) && f(0.0) < f(-0.1));
    }

    #[test]
    fn boltz_is_convex_in_constant_u() {
        for s in [-0.5, 0.0, 0.4, 0.9] {
            let sm = Image::filled(3, 3, 1, s);
            let f = |u: f64| boltz_loss(&sm, &Image::filled(3, 3, 1, u)).unwrap();
            let grid: Vec<f64> = (0..=200).map(|i| -3.0 + 6.0 * i as f64 / 200.0).collect();
            for w in grid.windows(3) {
                assert!(f(w[0]) + f(w[2]) - 2.0 * f(w[1]) > 0.0);
            }
            let best = grid.iter().copied().min_by(|a, b| f(*a).total_cmp(&f(*b))).unwrap();
            assert!((best - math::ln(1.0 - s)).abs() <= 0.03 + 1e-12);
        }
    }

    proptest! {
        #[test]
        fn radiation_map_in_unit_interval(seed in 0u64..1000) {
            let cfg = RadiationConfig::default();
            let t = noise(7, 5, seed);
            let d = noise_in(7, 5, seed + 1, 0.0, 5.0);
            let e = radiation_map(&t, &d, &cfg).unwrap();
            prop_assert!(e.data.iter().all(|v| (0.0..=1.0).contains(v)));
        }

        #[test]
        fn s_ssim_symmetric(seed in 0u64..1000, scale in prop::num::f64::POSITIVE) {
            let win = WindowFilter::gaussian(5, 1.5).unwrap();
            let a = noise(9, 7, seed);
            let b = noise(9, 7, seed + 7).map(|v| v * scale.clamp(0.1, 10.0));
            let (s1, _) = s_ssim(&a, &b, &win).unwrap();
            let (s2, _) = s_ssim(&b, &a, &win).unwrap();
            prop_assert!((s1 - s2).abs() < 1e-12);
            prop_assert!((-1.0 - 1e-9..=1.0 + 1e-9).contains(&s1));
        }
    }

    fn close(fd: f64, an: f64) -> bool {
        (fd - an).abs() <= 1e-3 * fd.abs().max(an.abs()).max(1e-3)
    }

    #[test]
    fn boltz_backward_matches_finite_differences() {
        let (w, h) = (8, 8);
        let cfg = RadiationConfig { depth_floor: 0.05, ..Default::default() };
        let win = WindowFilter::gaussian(5, 1.5).unwrap();
        let thermal = noise(w, h, 11);
        let t_gt = noise(w, h, 12);
        let depth = noise_in(w, h, 13, 1.0, 3.0);
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let mut params = UncertaintyParams::zeros();
        params.weights.iter_mut().for_each(|v| *v = rng.random_range(-0.3..0.3));
        params.bias = 0.1;
        let loss = |th: &Image, d: &Image, p: &UncertaintyParams| boltz_forward(th, &t_gt, d, p, &cfg, &win).unwrap().loss;
        let trace = boltz_forward(&thermal, &t_gt, &depth, &params, &cfg, &win).unwrap();
        let mut gp = UncertaintyParams::zeros();
        let (d_th, d_dep) = boltz_backward(&thermal, &t_gt, &depth, &params, &cfg, &win, &trace, 1.0, &mut gp).unwrap();
        let hstep = 1e-6;
        for k in 0..w * h {
            let (mut a, mut b) = (thermal.clone(), thermal.clone());
            a.data[k] += hstep;
            b.data[k] -= hstep;
            let fd = (loss(&a, &depth, &params) - loss(&b, &depth, &params)) / (2.0 * hstep);
            assert!(close(fd, d_th.data[k]), "thermal[{k}] {fd} vs {}", d_th.data[k]);
            let (mut a, mut b) = (depth.clone(), depth.clone());
            a.data[k] += hstep;
            b.data[k] -= hstep;
            let fd = (loss(&thermal, &a, &params) - loss(&thermal, &b, &params)) / (2.0 * hstep);
            assert!(close(fd, d_dep.data[k]), "depth[{k}] {fd} vs {}", d_dep.data[k]);
        }
        for i in 0..9 {
            let (mut a, mut b) = (params.clone(), params.clone());
            a.weights[i] += 1e-4;
            b.weights[i] -= 1e-4;
            let fd = (loss(&thermal, &depth, &a) - loss(&thermal, &depth, &b)) / 2e-4;
            assert!(close(fd, gp.weights[i]), "psi[{i}] {fd} vs {}", gp.weights[i]);
        }
        let (mut a, mut b) = (params.clone(), params.clone());
        a.bias += 1e-4;
        b.bias -= 1e-4;
        let fd = (loss(&thermal, &depth, &a) - loss(&thermal, &depth, &b)) / 2e-4;
        assert!(close(fd, gp.bias));
    }
}
