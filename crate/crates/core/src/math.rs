//! Small fixed-size linear algebra and scalar helpers.
//!
//! Everything routes through `libm` so the crate stays `no_std`.

pub type Vec3 = [f64; 3];
pub type Mat3 = [[f64; 3]; 3];
pub type Mat2 = [[f64; 2]; 2];

#[inline]
pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}

#[inline]
pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[inline]
pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline]
pub fn sin(x: f64) -> f64 {
    libm::sin(x)
}

#[inline]
pub fn cos(x: f64) -> f64 {
    libm::cos(x)
}

#[inline]
pub fn abs(x: f64) -> f64 {
    libm::fabs(x)
}

#[inline]
pub fn log10(x: f64) -> f64 {
    libm::log10(x)
}

#[inline]
pub fn ceil(x: f64) -> f64 {
    libm::ceil(x)
}

#[inline]
pub fn floor(x: f64) -> f64 {
    libm::floor(x)
}

/// Numerically stable logistic function.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + exp(-x))
    } else {
        let e = exp(x);
        e / (1.0 + e)
    }
}

/// Inverse of [`sigmoid`]; `p` must lie in (0, 1).
#[inline]
pub fn logit(p: f64) -> f64 {
    ln(p / (1.0 - p))
}

#[inline]
pub fn dot3(a: &Vec3, b: &Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn sub3(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn add3(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn scale3(a: &Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
pub fn norm3(a: &Vec3) -> f64 {
    sqrt(dot3(a, a))
}

#[inline]
pub fn cross3(a: &Vec3, b: &Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub fn normalize3(a: &Vec3) -> Vec3 {
    let n = norm3(a);
    if n > 0.0 {
        scale3(a, 1.0 / n)
    } else {
        *a
    }
}

/// Pull a gradient w.r.t. `v / |v|` back onto `v`.
pub fn normalize3_backward(v: &Vec3, d_unit: &Vec3) -> Vec3 {
    let n = norm3(v);
    if n == 0.0 {
        return [0.0; 3];
    }
    let u = scale3(v, 1.0 / n);
    let proj = dot3(&u, d_unit);
    [
        (d_unit[0] - u[0] * proj) / n,
        (d_unit[1] - u[1] * proj) / n,
        (d_unit[2] - u[2] * proj) / n,
    ]
}

pub const IDENTITY3: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

pub fn mat3_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    out
}

pub fn mat3_transpose(a: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[j][i];
        }
    }
    out
}

pub fn mat3_vec(a: &Mat3, v: &Vec3) -> Vec3 {
    [dot3(&a[0], v), dot3(&a[1], v), dot3(&a[2], v)]
}

pub fn mat3_add(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = *a;
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] += b[i][j];
        }
    }
    out
}

pub fn mat2_mul(a: &Mat2, b: &Mat2) -> Mat2 {
    [
        [a[0][0] * b[0][0] + a[0][1] * b[1][0], a[0][0] * b[0][1] + a[0][1] * b[1][1]],
        [a[1][0] * b[0][0] + a[1][1] * b[1][0], a[1][0] * b[0][1] + a[1][1] * b[1][1]],
    ]
}

/// Unit quaternion `(w, x, y, z)` to rotation matrix. The input is normalized first.
pub fn quat_to_mat(q: &[f64; 4]) -> Mat3 {
    let [w, x, y, z] = normalize_quat(q);
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

pub fn normalize_quat(q: &[f64; 4]) -> [f64; 4] {
    let n = sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]);
    if n > 0.0 {
        [q[0] / n, q[1] / n, q[2] / n, q[3] / n]
    } else {
        [1.0, 0.0, 0.0, 0.0]
    }
}

/// Gradient of [`quat_to_mat`] w.r.t. the raw (unnormalized) quaternion.
pub fn quat_to_mat_backward(q: &[f64; 4], d_r: &Mat3) -> [f64; 4] {
    let [w, x, y, z] = normalize_quat(q);
    let g = d_r;
    let dw = 2.0
        * (-z * g[0][1] + y * g[0][2] + z * g[1][0] - x * g[1][2] - y * g[2][0] + x * g[2][1]);
    let dx = 2.0
        * (y * g[0][1] + z * g[0][2] + y * g[1][0] - 2.0 * x * g[1][1] - w * g[1][2]
            + z * g[2][0]
            + w * g[2][1]
            - 2.0 * x * g[2][2]);
    let dy = 2.0
        * (-2.0 * y * g[0][0] + x * g[0][1] + w * g[0][2] + x * g[1][0] + z * g[1][2]
            - w * g[2][0]
            + z * g[2][1]
            - 2.0 * y * g[2][2]);
    let dz = 2.0
        * (-2.0 * z * g[0][0] - w * g[0][1] + x * g[0][2] + w * g[1][0] - 2.0 * z * g[1][1]
            + y * g[1][2]
            + x * g[2][0]
            + y * g[2][1]);
    let dn = [dw, dx, dy, dz];
    let n = sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]);
    if n == 0.0 {
        return [0.0; 4];
    }
    let qn = [w, x, y, z];
    let proj = qn[0] * dn[0] + qn[1] * dn[1] + qn[2] * dn[2] + qn[3] * dn[3];
    [
        (dn[0] - qn[0] * proj) / n,
        (dn[1] - qn[1] * proj) / n,
        (dn[2] - qn[2] * proj) / n,
        (dn[3] - qn[3] * proj) / n,
    ]
}

/// Quaternion product `a * b`, both `(w, x, y, z)`.
pub fn quat_mul(a: &[f64; 4], b: &[f64; 4]) -> [f64; 4] {
    [
        a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
        a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
        a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
        a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0],
    ]
}

/// Quaternion for a rotation of `angle` radians about `axis`.
pub fn quat_from_axis_angle(axis: &Vec3, angle: f64) -> [f64; 4] {
    let a = normalize3(axis);
    let (s, c) = (sin(angle * 0.5), cos(angle * 0.5));
    [c, a[0] * s, a[1] * s, a[2] * s]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quat_backward_matches_finite_differences() {
        let q = [0.7, -0.2, 0.4, 0.3];
        let weights: Mat3 = [[0.3, -1.0, 0.2], [0.5, 0.7, -0.4], [1.1, 0.05, -0.6]];
        let f = |q: &[f64; 4]| {
            let r = quat_to_mat(q);
            let mut s = 0.0;
            for i in 0..3 {
                for j in 0..3 {
                    s += weights[i][j] * r[i][j];
                }
            }
            s
        };
        let g = quat_to_mat_backward(&q, &weights);
        for k in 0..4 {
            let h = 1e-6;
            let mut qp = q;
            let mut qm = q;
            qp[k] += h;
            qm[k] -= h;
            let fd = (f(&qp) - f(&qm)) / (2.0 * h);
            assert!((fd - g[k]).abs() < 1e-8, "component {k}: fd {fd} vs {}", g[k]);
        }
    }

    #[test]
    fn rotation_is_orthonormal() {
        let r = quat_to_mat(&[0.3, 0.1, -0.8, 0.2]);
        let rrt = mat3_mul(&r, &mat3_transpose(&r));
        for i in 0..3 {
            for j in 0..3 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((rrt[i][j] - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0);
        assert_eq!(sigmoid(800.0), 1.0);
        assert!((logit(sigmoid(1.3)) - 1.3).abs() < 1e-12);
    }
}
