//! Photometric losses, smoothness prior, total-loss assembly and evaluation metrics.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::image::{Image, WindowFilter};
use crate::math;

const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct LossWeights {
    pub lambda_dssim: f64,
    pub lambda_smooth: f64,
    pub lambda_boltz: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda_dssim: 0.2, lambda_smooth: 0.6, lambda_boltz: 0.05 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_dssim", self.lambda_dssim),
            ("lambda_smooth", self.lambda_smooth),
            ("lambda_boltz", self.lambda_boltz),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be finite and non-negative, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LossBreakdown {
    pub l_c: f64,
    pub l_t: f64,
    pub l_smooth: f64,
    pub l_boltz: f64,
    pub l_total: f64,
    pub weights: LossWeights,
}

/// `l_c + l_t + lambda_smooth * l_smooth + lambda_boltz * l_boltz`.
pub fn total_loss(l_c: f64, l_t: f64, l_smooth: f64, l_boltz: f64, weights: &LossWeights) -> Result<LossBreakdown> {
    for (name, v) in [("l_c", l_c), ("l_t", l_t), ("l_smooth", l_smooth), ("l_boltz", l_boltz)] {
        if !v.is_finite() {
            return Err(Error::NonFinite { what: String::from("loss term"), location: String::from(name) });
        }
    }
    let l_total = l_c + l_t + weights.lambda_smooth * l_smooth + weights.lambda_boltz * l_boltz;
    Ok(LossBreakdown { l_c, l_t, l_smooth, l_boltz, l_total, weights: *weights })
}

struct SsimStats {
    mu_a: Vec<f64>,
    mu_b: Vec<f64>,
    var_a: Vec<f64>,
    var_b: Vec<f64>,
    cov: Vec<f64>,
}

fn plane_stats(a: &[f64], b: &[f64], w: usize, h: usize, win: &WindowFilter) -> SsimStats {
    let mu_a = win.apply(a, w, h);
    let mu_b = win.apply(b, w, h);
    let prod = |x: &[f64], y: &[f64]| -> Vec<f64> { x.iter().zip(y).map(|(p, q)| p * q).collect() };
    let ea2 = win.apply(&prod(a, a), w, h);
    let eb2 = win.apply(&prod(b, b), w, h);
    let eab = win.apply(&prod(a, b), w, h);
    let n = w * h;
    SsimStats {
        var_a: (0..n).map(|k| ea2[k] - mu_a[k] * mu_a[k]).collect(),
        var_b: (0..n).map(|k| eb2[k] - mu_b[k] * mu_b[k]).collect(),
        cov: (0..n).map(|k| eab[k] - mu_a[k] * mu_b[k]).collect(),
        mu_a,
        mu_b,
    }
}

fn ssim_pixel(st: &SsimStats, k: usize) -> (f64, f64, f64, f64, f64) {
    let a1 = 2.0 * st.mu_a[k] * st.mu_b[k] + SSIM_C1;
    let a2 = 2.0 * st.cov[k] + SSIM_C2;
    let b1 = st.mu_a[k] * st.mu_a[k] + st.mu_b[k] * st.mu_b[k] + SSIM_C1;
    let b2 = st.var_a[k] + st.var_b[k] + SSIM_C2;
    (a1 * a2 / (b1 * b2), a1, a2, b1, b2)
}

/// Default 11x11, sigma 1.5 window.
pub fn ssim_window() -> WindowFilter {
    WindowFilter::gaussian(11, 1.5).expect("fixed window size is valid")
}

/// Mean SSIM over all pixels and channels.
pub fn ssim(a: &Image, b: &Image, win: &WindowFilter) -> Result<f64> {
    a.check_same_shape(b, "ssim")?;
    let (w, h) = (a.width, a.height);
    let mut total = 0.0;
    for c in 0..a.channels {
        let st = plane_stats(&a.channel(c).data, &b.channel(c).data, w, h, win);
        total += (0..w * h).map(|k| ssim_pixel(&st, k).0).sum::<f64>();
    }
    Ok(total / a.data.len().max(1) as f64)
}

/// Gradient of [`ssim`] w.r.t. `a`, scaled by `d_out`.
pub fn ssim_backward(a: &Image, b: &Image, win: &WindowFilter, d_out: f64) -> Result<Image> {
    a.check_same_shape(b, "ssim_backward")?;
    let (w, h) = (a.width, a.height);
    let n = w * h;
    let scale = d_out / a.data.len().max(1) as f64;
    let mut out = Image::zeros(w, h, a.channels);
    for c in 0..a.channels {
        let pa = a.channel(c).data;
        let pb = b.channel(c).data;
        let st = plane_stats(&pa, &pb, w, h, win);
        let mut g_mu = vec![0.0; n];
        let mut g_va = vec![0.0; n];
        let mut g_cov = vec![0.0; n];
        for k in 0..n {
            // ratio form cancels exactly when a == b
            let (s, a1, a2, b1, b2) = ssim_pixel(&st, k);
            let (r1, r2) = (a1 / b1, a2 / b2);
            g_mu[k] = scale * 2.0 * (st.mu_b[k] * r2 - st.mu_a[k] * s) / b1;
            g_va[k] = -(scale * s / b2);
            g_cov[k] = 2.0 * (scale * r1 / b2);
        }
        let mean_term: Vec<f64> = (0..n).map(|k| g_mu[k] - 2.0 * g_va[k] * st.mu_a[k] - g_cov[k] * st.mu_b[k]).collect();
        let t_m = win.apply_adjoint(&mean_term, w, h);
        let t_va = win.apply_adjoint(&g_va, w, h);
        let t_cov = win.apply_adjoint(&g_cov, w, h);
        for k in 0..n {
            out.data[k * a.channels + c] = 2.0 * pa[k] * t_va[k] + pb[k] * t_cov[k] + t_m[k];
        }
    }
    Ok(out)
}

pub fn l1(a: &Image, b: &Image) -> Result<f64> {
    a.check_same_shape(b, "l1")?;
    Ok(a.data.iter().zip(&b.data).map(|(x, y)| math::abs(x - y)).sum::<f64>() / a.data.len().max(1) as f64)
}

/// `(1 - lambda) * L1 + lambda * (1 - SSIM) / 2`.
pub fn modality_loss(render: &Image, gt: &Image, lambda_dssim: f64, win: &WindowFilter) -> Result<f64> {
    let l = l1(render, gt)?;
    let s = if lambda_dssim != 0.0 { ssim(render, gt, win)? } else { 1.0 };
    Ok((1.0 - lambda_dssim) * l + lambda_dssim * (1.0 - s) / 2.0)
}

/// Gradient of [`modality_loss`] w.r.t. `render`, scaled by `d_out`.
pub fn modality_loss_backward(
    render: &Image,
    gt: &Image,
    lambda_dssim: f64,
    win: &WindowFilter,
    d_out: f64,
) -> Result<Image> {
    render.check_same_shape(gt, "modality_loss")?;
    let n = render.data.len().max(1) as f64;
    let k = d_out * (1.0 - lambda_dssim) / n;
    let mut g = Image {
        data: render.data.iter().zip(&gt.data).map(|(r, t)| k * sign(r - t)).collect(),
        ..*render
    };
    if lambda_dssim != 0.0 {
        let gs = ssim_backward(render, gt, win, -d_out * lambda_dssim / 2.0)?;
        for (a, b) in g.data.iter_mut().zip(&gs.data) {
            *a += b;
        }
    }
    Ok(g)
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Per-edge weights `exp(-|grad I_gt|)` (channel mean) for the edge-aware variant.
#[derive(Debug, Clone)]
pub struct EdgeWeights {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl EdgeWeights {
    pub fn from_guide(guide: &Image) -> Self {
        let (w, h, ch) = (guide.width, guide.height, guide.channels);
        let mut x = Vec::with_capacity(w.saturating_sub(1) * h);
        let mut y = Vec::with_capacity(w * h.saturating_sub(1));
        for py in 0..h {
            for px in 0..w.saturating_sub(1) {
                let d: f64 = (0..ch).map(|c| math::abs(guide.get(px + 1, py, c) - guide.get(px, py, c))).sum();
                x.push(math::exp(-d / ch as f64));
            }
        }
        for py in 0..h.saturating_sub(1) {
            for px in 0..w {
                let d: f64 = (0..ch).map(|c| math::abs(guide.get(px, py + 1, c) - guide.get(px, py, c))).sum();
                y.push(math::exp(-d / ch as f64));
            }
        }
        Self { x, y }
    }
}

/// `mean |dI/dx| + mean |dI/dy|` over forward differences, optionally edge-weighted.
fn total_variation(img: &Image, edges: Option<&EdgeWeights>, grad: Option<(&mut Image, f64)>) -> f64 {
    let (w, h, ch) = (img.width, img.height, img.channels);
    let nx = (w.saturating_sub(1) * h * ch) as f64;
    let ny = (w * h.saturating_sub(1) * ch) as f64;
    let mut sx = 0.0;
    let mut sy = 0.0;
    let mut grad = grad;
    for py in 0..h {
        for px in 0..w {
            for c in 0..ch {
                let here = img.get(px, py, c);
                if px + 1 < w {
                    let wt = edges.map_or(1.0, |e| e.x[py * (w - 1) + px]);
                    let d = img.get(px + 1, py, c) - here;
                    sx += wt * math::abs(d);
                    if let Some((g, s)) = grad.as_mut() {
                        let v = *s * wt * sign(d) / nx;
                        let i1 = img.idx(px + 1, py, c);
                        let i0 = img.idx(px, py, c);
                        g.data[i1] += v;
                        g.data[i0] -= v;
                    }
                }
                if py + 1 < h {
                    let wt = edges.map_or(1.0, |e| e.y[py * w + px]);
                    let d = img.get(px, py + 1, c) - here;
                    sy += wt * math::abs(d);
                    if let Some((g, s)) = grad.as_mut() {
                        let v = *s * wt * sign(d) / ny;
                        let i1 = img.idx(px, py + 1, c);
                        let i0 = img.idx(px, py, c);
                        g.data[i1] += v;
                        g.data[i0] -= v;
                    }
                }
            }
        }
    }
    let mx = if nx > 0.0 { sx / nx } else { 0.0 };
    let my = if ny > 0.0 { sy / ny } else { 0.0 };
    mx + my
}

/// Smoothness term of one modality: total variation of its render plus that of its depth.
pub fn smoothness_loss(image: &Image, depth: &Image, edges: Option<&EdgeWeights>) -> Result<f64> {
    if image.width != depth.width || image.height != depth.height {
        return Err(Error::Shape(format!(
            "smoothness: image {}x{} vs depth {}x{}",
            image.width, image.height, depth.width, depth.height
        )));
    }
    Ok(total_variation(image, edges, None) + total_variation(depth, edges, None))
}

/// Gradients of [`smoothness_loss`] scaled by `d_out`: `(d image, d depth)`.
pub fn smoothness_loss_backward(image: &Image, depth: &Image, edges: Option<&EdgeWeights>, d_out: f64) -> (Image, Image) {
    let mut gi = Image::zeros(image.width, image.height, image.channels);
    let mut gd = Image::zeros(depth.width, depth.height, depth.channels);
    total_variation(image, edges, Some((&mut gi, d_out)));
    total_variation(depth, edges, Some((&mut gd, d_out)));
    (gi, gd)
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Metrics {
    /// `f64::INFINITY` for identical images.
    pub psnr_db: f64,
    pub ssim: f64,
    /// Mean absolute error in degrees Celsius; thermal only.
    pub mae_celsius: Option<f64>,
}

/// `-10 log10(MSE)` at unit peak; `+inf` when the images are identical.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    a.check_same_shape(b, "psnr")?;
    let mse = a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.data.len().max(1) as f64;
    Ok(if mse == 0.0 { f64::INFINITY } else { -10.0 * math::log10(mse) })
}

/// PSNR/SSIM of `render` clamped to [0, 1] against `gt`; MAE in Celsius when `t_range = (t_min, t_max)` is given.
pub fn metrics(render: &Image, gt: &Image, t_range: Option<(f64, f64)>) -> Result<Metrics> {
    let r = render.clamped(0.0, 1.0);
    Ok(Metrics {
        psnr_db: psnr(&r, gt)?,
        ssim: ssim(&r, gt, &ssim_window())?,
        mae_celsius: match t_range {
            Some((lo, hi)) => Some(l1(&r, gt)? * (hi - lo)),
            None => None,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(w: usize, h: usize, c: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..w * h * c).map(|_| rng.random::<f64>()).collect();
        Image { width: w, height: h, channels: c, data }
    }

    #[test]
    fn modality_examples() {
        let win = ssim_window();
        let gt = noise(12, 10, 3, 1);
        assert!(modality_loss(&gt, &gt, 0.2, &win).unwrap().abs() < 1e-12);
        let shifted = gt.map(|v| v + 0.1);
        assert!((modality_loss(&shifted, &gt, 0.0, &win).unwrap() - 0.1).abs() < 1e-12);
        let other = noise(12, 10, 3, 2);
        let composed = 0.8 * l1(&other, &gt).unwrap() + 0.2 * (1.0 - ssim(&other, &gt, &win).unwrap()) / 2.0;
        assert!((modality_loss(&other, &gt, 0.2, &win).unwrap() - composed).abs() < 1e-15);
        assert!(modality_loss(&other, &noise(10, 12, 3, 3), 0.2, &win).is_err());
    }

    #[test]
    fn ssim_of_identical_is_one() {
        let a = noise(16, 16, 1, 5);
        assert!((ssim(&a, &a, &ssim_window()).unwrap() - 1.0).abs() < 1e-12);
        let c = Image::filled(8, 8, 3, 0.4);
        assert!((ssim(&c, &c, &ssim_window()).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ssim_matches_direct_window_sum() {
        // independent evaluation with explicit 2-D window weights at an interior pixel
        let (w, h) = (15, 15);
        let a = noise(w, h, 1, 8);
        let b = noise(w, h, 1, 9);
        let taps: Vec<f64> = (0..11).map(|i| math::exp(-((i as f64 - 5.0).powi(2)) / 4.5)).collect();
        let norm: f64 = taps.iter().sum::<f64>().powi(2);
        let (cx, cy) = (7, 7);
        let mut m = [0.0; 5];
        for j in 0..11 {
            for i in 0..11 {
                let wt = taps[i] * taps[j] / norm;
                let x = a.get(cx + i - 5, cy + j - 5, 0);
                let y = b.get(cx + i - 5, cy + j - 5, 0);
                m[0] += wt * x;
                m[1] += wt * y;
                m[2] += wt * x * x;
                m[3] += wt * y * y;
                m[4] += wt * x * y;
            }
        }
        let (va, vb, cab) = (m[2] - m[0] * m[0], m[3] - m[1] * m[1], m[4] - m[0] * m[1]);
        let direct = (2.0 * m[0] * m[1] + SSIM_C1) * (2.0 * cab + SSIM_C2)
            / ((m[0] * m[0] + m[1] * m[1] + SSIM_C1) * (va + vb + SSIM_C2));
        let st = plane_stats(&a.data, &b.data, w, h, &ssim_window());
        assert!((ssim_pixel(&st, cy * w + cx).0 - direct).abs() < 1e-12);
    }

    #[test]
    fn smoothness_examples() {
        let flat = Image::filled(6, 5, 3, 0.2);
        let dflat = Image::filled(6, 5, 1, 1.5);
        assert_eq!(smoothness_loss(&flat, &dflat, None).unwrap(), 0.0);
        let ramp = Image::from_fn(6, 5, 1, |x, _, _| 0.07 * x as f64);
        assert!((total_variation(&ramp, None, None) - 0.07).abs() < 1e-12);
        let step = Image::from_fn(6, 5, 1, |x, _, _| if x >= 3 { 0.5 } else { 0.0 });
        // one of five column-gaps carries the step in every row
        assert!((total_variation(&step, None, None) - 0.5 / 5.0).abs() < 1e-12);
    }

    #[test]
    fn total_loss_examples() {
        let w = LossWeights { lambda_dssim: 0.2, lambda_smooth: 0.6, lambda_boltz: 0.05 };
        assert_eq!(total_loss(0.0, 0.0, 0.0, 0.0, &w).unwrap().l_total, 0.0);
        assert!((total_loss(1.0, 1.0, 1.0, 1.0, &w).unwrap().l_total - 2.65).abs() < 1e-15);
        let decayed = LossWeights { lambda_boltz: 0.01, ..w };
        let a = total_loss(0.0, 0.0, 0.0, 3.0, &decayed).unwrap().l_total;
        assert!((a - 0.03).abs() < 1e-15);
        match total_loss(1.0, f64::NAN, 0.0, 0.0, &w) {
            Err(Error::NonFinite { location, .. }) => assert_eq!(location, "l_t"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn metric_examples() {
        let gt = Image::filled(4, 4, 1, 0.5);
        let off = gt.map(|v| v + 0.1);
        assert!((psnr(&off, &gt).unwrap() - 20.0).abs() < 1e-9);
        let m = metrics(&gt, &gt, Some((-20.0, 120.0))).unwrap();
        assert_eq!(m.psnr_db, f64::INFINITY);
        assert!((m.ssim - 1.0).abs() < 1e-12);
        assert_eq!(m.mae_celsius, Some(0.0));
        let m = metrics(&gt.map(|v| v + 0.01), &gt, Some((-20.0, 120.0))).unwrap();
        assert!((m.mae_celsius.unwrap() - 1.4).abs() < 1e-9);
    }

    fn fd_check(f: &dyn Fn(&Image) -> f64, x: &Image, g: &Image, h: f64) {
        for k in 0..x.data.len() {
            let (mut a, mut b) = (x.clone(), x.clone());
            a.data[k] += h;
            b.data[k] -= h;
            let fd = (f(&a) - f(&b)) / (2.0 * h);
            let an = g.data[k];
            assert!((fd - an).abs() <= 1e-3 * fd.abs().max(an.abs()).max(1e-3), "{k}: {fd} vs {an}");
        }
    }

    #[test]
    fn modality_gradient_matches_finite_differences() {
        let win = ssim_window();
        let gt = noise(8, 8, 3, 21);
        let r = noise(8, 8, 3, 22);
        let g = modality_loss_backward(&r, &gt, 0.2, &win, 1.0).unwrap();
        fd_check(&|x| modality_loss(x, &gt, 0.2, &win).unwrap(), &r, &g, 1e-6);
    }

    #[test]
    fn smoothness_gradient_matches_finite_differences() {
        let img = noise(7, 6, 3, 31);
        let dep = noise(7, 6, 1, 32);
        let guide = noise(7, 6, 3, 33);
        for edges in [None, Some(EdgeWeights::from_guide(&guide))] {
            let (gi, gd) = smoothness_loss_backward(&img, &dep, edges.as_ref(), 1.0);
            fd_check(&|x| smoothness_loss(x, &dep, edges.as_ref()).unwrap(), &img, &gi, 1e-7);
            fd_check(&|x| smoothness_loss(&img, x, edges.as_ref()).unwrap(), &dep, &gd, 1e-7);
        }
    }

    #[test]
    fn losses_are_non_negative() {
        let win = ssim_window();
        for seed in 0..20 {
            let a = noise(9, 9, 1, seed);
            let b = noise(9, 9, 1, seed + 100);
            assert!(modality_loss(&a, &b, 0.2, &win).unwrap() >= 0.0);
            assert!(smoothness_loss(&a, &b, None).unwrap() >= 0.0);
        }
    }
}
