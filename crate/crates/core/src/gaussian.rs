//! Gaussian cloud data model, covariance construction and 3D density.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::math::{self, Mat3, Vec3};

/// Number of SH coefficients per color channel for a given degree.
pub const fn sh_coeff_count(degree: usize) -> usize {
    (degree + 1) * (degree + 1)
}

/// One Gaussian pulled out of a [`GaussianCloud`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    pub mu: Vec3,
    /// `(w, x, y, z)`
    pub rot: [f64; 4],
    pub log_scale: Vec3,
    pub opacity_c: f64,
    pub opacity_t: f64,
    /// `3 * (deg + 1)^2`, channel-major.
    pub sh: Vec<f64>,
    pub embedding: Vec<f64>,
    pub t_base: f64,
}

impl Gaussian {
    pub fn covariance(&self) -> Mat3 {
        covariance_from_rs(&self.rot, &self.log_scale)
    }
}

/// Array-of-attributes storage for `M` Gaussians.
///
/// Every attribute lives in its own contiguous `Vec<f64>`; vector-valued
/// attributes are stored row-major (`M x width`).
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GaussianCloud {
    pub sh_degree: usize,
    pub embed_dim: usize,
    pub positions: Vec<f64>,
    pub rotations: Vec<f64>,
    pub log_scales: Vec<f64>,
    pub opacity_c: Vec<f64>,
    pub opacity_t: Vec<f64>,
    pub sh: Vec<f64>,
    pub embeddings: Vec<f64>,
    pub t_base: Vec<f64>,
}

impl GaussianCloud {
    pub fn new(sh_degree: usize, embed_dim: usize) -> Self {
        Self {
            sh_degree,
            embed_dim,
            positions: Vec::new(),
            rotations: Vec::new(),
            log_scales: Vec::new(),
            opacity_c: Vec::new(),
            opacity_t: Vec::new(),
            sh: Vec::new(),
            embeddings: Vec::new(),
            t_base: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.opacity_c.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// SH values stored per Gaussian (all three channels).
    pub fn sh_stride(&self) -> usize {
        3 * sh_coeff_count(self.sh_degree)
    }

    pub fn push(&mut self, g: &Gaussian) {
        assert_eq!(g.sh.len(), self.sh_stride(), "sh length");
        assert_eq!(g.embedding.len(), self.embed_dim, "embedding length");
        self.positions.extend_from_slice(&g.mu);
        self.rotations.extend_from_slice(&g.rot);
        self.log_scales.extend_from_slice(&g.log_scale);
        self.opacity_c.push(g.opacity_c);
        self.opacity_t.push(g.opacity_t);
        self.sh.extend_from_slice(&g.sh);
        self.embeddings.extend_from_slice(&g.embedding);
        self.t_base.push(g.t_base);
    }

    pub fn gaussian(&self, i: usize) -> Gaussian {
        Gaussian {
            mu: self.position(i),
            rot: self.rotation(i),
            log_scale: self.log_scale(i),
            opacity_c: self.opacity_c[i],
            opacity_t: self.opacity_t[i],
            sh: self.sh_of(i).to_vec(),
            embedding: self.embedding(i).to_vec(),
            t_base: self.t_base[i],
        }
    }

    pub fn position(&self, i: usize) -> Vec3 {
        [self.positions[3 * i], self.positions[3 * i + 1], self.positions[3 * i + 2]]
    }

    pub fn rotation(&self, i: usize) -> [f64; 4] {
        let r = &self.rotations[4 * i..4 * i + 4];
        [r[0], r[1], r[2], r[3]]
    }

    pub fn log_scale(&self, i: usize) -> Vec3 {
        [self.log_scales[3 * i], self.log_scales[3 * i + 1], self.log_scales[3 * i + 2]]
    }

    pub fn sh_of(&self, i: usize) -> &[f64] {
        let s = self.sh_stride();
        &self.sh[i * s..(i + 1) * s]
    }

    pub fn embedding(&self, i: usize) -> &[f64] {
        &self.embeddings[i * self.embed_dim..(i + 1) * self.embed_dim]
    }

    /// Build a new cloud from the Gaussians at `indices` (repetition allowed).
    pub fn select(&self, indices: &[usize]) -> GaussianCloud {
        let mut out = GaussianCloud::new(self.sh_degree, self.embed_dim);
        for &i in indices {
            out.push(&self.gaussian(i));
        }
        out
    }

    /// Same layout as `self` with every attribute zeroed. Used for gradients
    /// and optimizer moments.
    pub fn zeros_like(&self) -> GaussianCloud {
        let z = |v: &Vec<f64>| alloc::vec![0.0; v.len()];
        GaussianCloud {
            sh_degree: self.sh_degree,
            embed_dim: self.embed_dim,
            positions: z(&self.positions),
            rotations: z(&self.rotations),
            log_scales: z(&self.log_scales),
            opacity_c: z(&self.opacity_c),
            opacity_t: z(&self.opacity_t),
            sh: z(&self.sh),
            embeddings: z(&self.embeddings),
            t_base: z(&self.t_base),
        }
    }

    /// Gather rows by `map`; `None` entries become zero rows.
    pub fn gather_or_zero(&self, map: &[Option<usize>]) -> GaussianCloud {
        let mut out = GaussianCloud::new(self.sh_degree, self.embed_dim);
        let zero = Gaussian {
            mu: [0.0; 3],
            rot: [0.0; 4],
            log_scale: [0.0; 3],
            opacity_c: 0.0,
            opacity_t: 0.0,
            sh: alloc::vec![0.0; self.sh_stride()],
            embedding: alloc::vec![0.0; self.embed_dim],
            t_base: 0.0,
        };
        for m in map {
            match m {
                Some(i) => out.push(&self.gaussian(*i)),
                None => out.push(&zero),
            }
        }
        out
    }

    /// Named attribute arrays in a fixed order.
    pub fn families(&self) -> [(&'static str, &[f64]); 8] {
        [
            ("mu", &self.positions),
            ("rot", &self.rotations),
            ("log_scale", &self.log_scales),
            ("opacity_c", &self.opacity_c),
            ("opacity_t", &self.opacity_t),
            ("sh", &self.sh),
            ("embedding", &self.embeddings),
            ("t_base", &self.t_base),
        ]
    }

    pub fn families_mut(&mut self) -> [(&'static str, &mut [f64]); 8] {
        [
            ("mu", &mut self.positions),
            ("rot", &mut self.rotations),
            ("log_scale", &mut self.log_scales),
            ("opacity_c", &mut self.opacity_c),
            ("opacity_t", &mut self.opacity_t),
            ("sh", &mut self.sh),
            ("embedding", &mut self.embeddings),
            ("t_base", &mut self.t_base),
        ]
    }

    /// Renormalize every quaternion to unit length.
    pub fn normalize_rotations(&mut self) {
        for q in self.rotations.chunks_exact_mut(4) {
            let n = math::normalize_quat(&[q[0], q[1], q[2], q[3]]);
            q.copy_from_slice(&n);
        }
    }

    /// Enforce `log_scale >= floor` on every axis.
    pub fn clamp_log_scales(&mut self, floor: f64) {
        for s in &mut self.log_scales {
            if *s < floor {
                *s = floor;
            }
        }
    }

    /// Half the diagonal of the axis-aligned box around all centers (at least 1e-9).
    pub fn extent(&self) -> f64 {
        if self.is_empty() {
            return 1.0;
        }
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in self.positions.chunks_exact(3) {
            for k in 0..3 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        let d = math::sub3(&hi, &lo);
        (0.5 * math::norm3(&d)).max(1e-9)
    }
}

/// `R * diag(exp(log_scale))^2 * R^T`, with the quaternion renormalized first.
pub fn covariance_from_rs(rot: &[f64; 4], log_scale: &Vec3) -> Mat3 {
    let r = math::quat_to_mat(rot);
    let d = [
        math::exp(2.0 * log_scale[0]),
        math::exp(2.0 * log_scale[1]),
        math::exp(2.0 * log_scale[2]),
    ];
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = r[i][0] * d[0] * r[j][0] + r[i][1] * d[1] * r[j][1] + r[i][2] * d[2] * r[j][2];
        }
    }
    out
}

/// Gradient of [`covariance_from_rs`] given `dL/dSigma` as a full 3x3 matrix.
///
/// Returns `(dL/drot, dL/dlog_scale)`.
pub fn covariance_backward(rot: &[f64; 4], log_scale: &Vec3, d_sigma: &Mat3) -> ([f64; 4], Vec3) {
    let r = math::quat_to_mat(rot);
    let d = [
        math::exp(2.0 * log_scale[0]),
        math::exp(2.0 * log_scale[1]),
        math::exp(2.0 * log_scale[2]),
    ];
    let gs = math::mat3_add(d_sigma, &math::mat3_transpose(d_sigma));
    // dL/dR = (G + G^T) R D
    let mut d_r = [[0.0; 3]; 3];
    for i in 0..3 {
        for k in 0..3 {
            let mut s = 0.0;
            for j in 0..3 {
                s += gs[i][j] * r[j][k];
            }
            d_r[i][k] = s * d[k];
        }
    }
    // dL/dD_kk = (R^T G R)_kk
    let mut d_log = [0.0; 3];
    for k in 0..3 {
        let mut s = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                s += r[i][k] * d_sigma[i][j] * r[j][k];
            }
        }
        d_log[k] = s * 2.0 * d[k];
    }
    (math::quat_to_mat_backward(rot, &d_r), d_log)
}

/// `exp(-1/2 (x - mu)^T Sigma^-1 (x - mu))`.
pub fn gaussian_density(g: &Gaussian, x: &Vec3) -> f64 {
    let r = math::quat_to_mat(&g.rot);
    let delta = math::sub3(x, &g.mu);
    // Sigma^-1 = R D^-1 R^T, so the quadratic form is |D^-1/2 R^T delta|^2.
    let mut q = 0.0;
    for k in 0..3 {
        let local = r[0][k] * delta[0] + r[1][k] * delta[1] + r[2][k] * delta[2];
        q += local * local * math::exp(-2.0 * g.log_scale[k]);
    }
    math::exp(-0.5 * q)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostic {
    /// `None` for structural problems that are not tied to one Gaussian.
    pub index: Option<usize>,
    pub field: &'static str,
    pub message: String,
}

/// Structural and numeric health check. Empty result means the cloud is valid.
pub fn validate_cloud(cloud: &GaussianCloud) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let m = cloud.len();
    if m == 0 {
        out.push(Diagnostic {
            index: None,
            field: "opacity_c",
            message: String::from("cloud holds no Gaussians"),
        });
    }
    let widths: [(&'static str, usize); 8] = [
        ("mu", 3),
        ("rot", 4),
        ("log_scale", 3),
        ("opacity_c", 1),
        ("opacity_t", 1),
        ("sh", cloud.sh_stride()),
        ("embedding", cloud.embed_dim),
        ("t_base", 1),
    ];
    let mut structural = false;
    for ((name, data), (_, width)) in cloud.families().iter().zip(widths.iter()) {
        if data.len() != m * width {
            structural = true;
            out.push(Diagnostic {
                index: None,
                field: name,
                message: format!("expected {} values ({} x {}), found {}", m * width, m, width, data.len()),
            });
        }
    }
    if structural {
        return out;
    }
    for ((name, data), (_, width)) in cloud.families().iter().zip(widths.iter()) {
        if *width == 0 {
            continue;
        }
        for (i, row) in data.chunks_exact(*width).enumerate() {
            if let Some(bad) = row.iter().find(|v| !v.is_finite()) {
                out.push(Diagnostic {
                    index: Some(i),
                    field: name,
                    message: format!("non-finite value {bad}"),
                });
            }
        }
    }
    for (i, q) in cloud.rotations.chunks_exact(4).enumerate() {
        let n2: f64 = q.iter().map(|v| v * v).sum();
        if n2.is_finite() && n2 == 0.0 {
            out.push(Diagnostic {
                index: Some(i),
                field: "rot",
                message: String::from("zero quaternion"),
            });
        }
    }
    out
}
