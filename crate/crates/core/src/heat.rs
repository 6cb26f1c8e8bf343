//! Neighbor graph over Gaussian centers and the heat-conduction style
//! refinement of per-Gaussian thermal features.
//!
//! For anchor `i` with neighbor set `U` (ordered by distance):
//!
//! ```text
//! grad_i = f_grad(concat_u (F_u - F_i))
//! q_i    = f_q(-sigmoid(o_t_i) * grad_i)
//! F'_i   = w_a (F_i + q_i) + w_s mean_u F_u
//! ```

use alloc::vec;
use alloc::vec::Vec;

use crate::math;
use crate::nn::Linear;

/// Padding entry in [`NeighborGraph::neighbor_ids`].
pub const NO_NEIGHBOR: usize = usize::MAX;

/// Neighbor count for an `n x n` sampling stencil: `n^2 - 1`.
pub const fn neighbors_for_stencil(n: usize) -> usize {
    n * n - 1
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborGraph {
    pub k: usize,
    /// `M x k`, nearest first; missing slots hold [`NO_NEIGHBOR`].
    pub neighbor_ids: Vec<usize>,
    pub built_at_step: usize,
}

impl NeighborGraph {
    pub fn len(&self) -> usize {
        if self.k == 0 {
            0
        } else {
            self.neighbor_ids.len() / self.k
        }
    }

    pub fn is_empty(&self) -> bool {
        self.neighbor_ids.is_empty()
    }

    pub fn row(&self, i: usize) -> &[usize] {
        &self.neighbor_ids[i * self.k..(i + 1) * self.k]
    }

    /// Valid neighbors of `i`, nearest first.
    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.row(i).iter().copied().filter(|&u| u != NO_NEIGHBOR)
    }
}

/// Exact Euclidean k-nearest neighbors over `positions` (`M x 3`), ties broken by index.
///
/// With fewer than two points every row is empty.
pub fn build_knn(positions: &[f64], k: usize, step: usize) -> NeighborGraph {
    let m = positions.len() / 3;
    let mut ids = vec![NO_NEIGHBOR; m * k];
    if m >= 2 && k > 0 {
        let mut cand: Vec<(f64, usize)> = Vec::with_capacity(m);
        for i in 0..m {
            let p = [positions[3 * i], positions[3 * i + 1], positions[3 * i + 2]];
            cand.clear();
            for j in (0..m).filter(|&j| j != i) {
                let q = [positions[3 * j], positions[3 * j + 1], positions[3 * j + 2]];
                let d = math::sub3(&p, &q);
                cand.push((math::dot3(&d, &d), j));
            }
            let take = k.min(cand.len());
            let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
            if take < cand.len() {
                cand.select_nth_unstable_by(take - 1, cmp);
                cand.truncate(take);
            }
            cand.sort_unstable_by(cmp);
            for (s, &(_, j)) in cand.iter().enumerate() {
                ids[i * k + s] = j;
            }
        }
    }
    NeighborGraph { k, neighbor_ids: ids, built_at_step: step }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct HeatParams {
    /// `K * D_f -> D_f`
    pub f_grad: Linear,
    /// `D_f -> D_f`
    pub f_q: Linear,
    pub w_a: f64,
    pub w_s: f64,
}

impl HeatParams {
    /// Zero maps with `(w_a, w_s) = (1, 0)`: the identity transform.
    pub fn identity(k: usize, feature_dim: usize) -> Self {
        Self { f_grad: Linear::zeros(k * feature_dim, feature_dim), f_q: Linear::zeros(feature_dim, feature_dim), w_a: 1.0, w_s: 0.0 }
    }

    /// Identity at initialization like [`HeatParams::identity`], but with a random
    /// `f_grad` so that `f_q` receives gradient from the first step.
    pub fn trainable<R: rand::Rng + ?Sized>(k: usize, feature_dim: usize, rng: &mut R) -> Self {
        Self { f_grad: Linear::glorot(k * feature_dim, feature_dim, rng), ..Self::identity(k, feature_dim) }
    }

    pub fn k(&self) -> usize {
        if self.f_q.in_dim == 0 {
            0
        } else {
            self.f_grad.in_dim / self.f_q.in_dim
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.f_q.in_dim
    }

    pub fn zeros_like(&self) -> Self {
        Self { f_grad: self.f_grad.zeros_like(), f_q: self.f_q.zeros_like(), w_a: 0.0, w_s: 0.0 }
    }
}

/// Stacked neighbor differences for anchor `i` (zeros in padded slots).
fn stacked_differences(features: &[f64], dim: usize, graph: &NeighborGraph, i: usize) -> Vec<f64> {
    let mut x = vec![0.0; graph.k * dim];
    let fi = &features[i * dim..(i + 1) * dim];
    for (s, &u) in graph.row(i).iter().enumerate() {
        if u == NO_NEIGHBOR {
            continue;
        }
        let fu = &features[u * dim..(u + 1) * dim];
        for d in 0..dim {
            x[s * dim + d] = fu[d] - fi[d];
        }
    }
    x
}

/// `f_grad` over stacked neighbor differences; anchors without neighbors get zeros.
pub fn feature_gradient(features: &[f64], graph: &NeighborGraph, params: &HeatParams) -> Vec<f64> {
    let dim = params.feature_dim();
    let m = features.len() / dim;
    let mut out = vec![0.0; m * dim];
    for i in 0..m {
        if graph.neighbors(i).next().is_none() {
            continue;
        }
        let x = stacked_differences(features, dim, graph, i);
        params.f_grad.forward_into(&x, &mut out[i * dim..(i + 1) * dim]);
    }
    out
}

/// `q_i = f_q(-sigmoid(o_t_i) * grad_i)`.
pub fn heat_flux(grad_feat: &[f64], opacity_t: &[f64], params: &HeatParams) -> Vec<f64> {
    let dim = params.feature_dim();
    let m = grad_feat.len() / dim;
    let mut out = vec![0.0; m * dim];
    let mut z = vec![0.0; dim];
    for i in 0..m {
        let s = math::sigmoid(opacity_t[i]);
        for d in 0..dim {
            z[d] = -s * grad_feat[i * dim + d];
        }
        params.f_q.forward_into(&z, &mut out[i * dim..(i + 1) * dim]);
    }
    out
}

/// `F'_i = w_a (F_i + q_i) + w_s mean_{u in U_i} F_u` (mean term is zero for empty `U_i`).
pub fn refine_features(features: &[f64], flux: &[f64], graph: &NeighborGraph, params: &HeatParams) -> Vec<f64> {
    let dim = params.feature_dim();
    let m = features.len() / dim;
    let mut out = vec![0.0; m * dim];
    for i in 0..m {
        let mean = neighbor_mean(features, dim, graph, i);
        for d in 0..dim {
            let k = i * dim + d;
            out[k] = params.w_a * (features[k] + flux[k]) + params.w_s * mean[d];
        }
    }
    out
}

fn neighbor_mean(features: &[f64], dim: usize, graph: &NeighborGraph, i: usize) -> Vec<f64> {
    let mut mean = vec![0.0; dim];
    let mut count = 0usize;
    for u in graph.neighbors(i) {
        count += 1;
        for d in 0..dim {
            mean[d] += features[u * dim + d];
        }
    }
    if count > 0 {
        let inv = 1.0 / count as f64;
        mean.iter_mut().for_each(|v| *v *= inv);
    }
    mean
}

/// Full refinement: [`feature_gradient`] -> [`heat_flux`] -> [`refine_features`].
pub fn heat_transform(features: &[f64], opacity_t: &[f64], graph: &NeighborGraph, params: &HeatParams) -> HeatTrace {
    let grad = feature_gradient(features, graph, params);
    let flux = heat_flux(&grad, opacity_t, params);
    let refined = refine_features(features, &flux, graph, params);
    HeatTrace { grad, flux, refined }
}

#[derive(Debug, Clone)]
pub struct HeatTrace {
    pub grad: Vec<f64>,
    pub flux: Vec<f64>,
    pub refined: Vec<f64>,
}

/// Reverse pass of [`heat_transform`].
///
/// Returns `dL/dF` and accumulates `dL/do_t` into `d_opacity_t` and parameter gradients into `grad`.
pub fn heat_transform_backward(
    features: &[f64],
    opacity_t: &[f64],
    graph: &NeighborGraph,
    params: &HeatParams,
    trace: &HeatTrace,
    d_refined: &[f64],
    d_opacity_t: &mut [f64],
    grad: &mut HeatParams,
) -> Vec<f64> {
    let dim = params.feature_dim();
    let m = features.len() / dim;
    let mut d_f = vec![0.0; m * dim];
    let mut dz = vec![0.0; dim];
    let mut z = vec![0.0; dim];
    for i in 0..m {
        let g = &d_refined[i * dim..(i + 1) * dim];
        if g.iter().all(|v| *v == 0.0) {
            continue;
        }
        // refine
        let mean = neighbor_mean(features, dim, graph, i);
        let count = graph.neighbors(i).count();
        let mut d_flux = vec![0.0; dim];
        for d in 0..dim {
            let k = i * dim + d;
            d_f[k] += params.w_a * g[d];
            d_flux[d] = params.w_a * g[d];
            grad.w_a += g[d] * (features[k] + trace.flux[k]);
            grad.w_s += g[d] * mean[d];
        }
        if count > 0 {
            let share = params.w_s / count as f64;
            for u in graph.neighbors(i) {
                for d in 0..dim {
                    d_f[u * dim + d] += share * g[d];
                }
            }
        }
        // flux: q = f_q(z), z = -s * grad
        let s = math::sigmoid(opacity_t[i]);
        let gi = &trace.grad[i * dim..(i + 1) * dim];
        for d in 0..dim {
            z[d] = -s * gi[d];
        }
        dz.iter_mut().for_each(|v| *v = 0.0);
        params.f_q.backward(&z, &d_flux, &mut grad.f_q, &mut dz);
        let mut d_s = 0.0;
        let mut d_grad = vec![0.0; dim];
        for d in 0..dim {
            d_s -= dz[d] * gi[d];
            d_grad[d] = -s * dz[d];
        }
        d_opacity_t[i] += d_s * s * (1.0 - s);
        // gradient feature
        if count == 0 {
            continue;
        }
        let x = stacked_differences(features, dim, graph, i);
        let mut dx = vec![0.0; x.len()];
        params.f_grad.backward(&x, &d_grad, &mut grad.f_grad, &mut dx);
        for (slot, &u) in graph.row(i).iter().enumerate() {
            if u == NO_NEIGHBOR {
                continue;
            }
            for d in 0..dim {
                let v = dx[slot * dim + d];
                d_f[u * dim + d] += v;
                d_f[i * dim + d] -= v;
            }
        }
    }
    d_f
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_params(k: usize, dim: usize, rng: &mut ChaCha8Rng) -> HeatParams {
        let mut p = HeatParams::identity(k, dim);
        for w in p.f_grad.weight.iter_mut().chain(p.f_grad.bias.iter_mut()) {
            *w = rng.random_range(-0.5..0.5);
        }
        for w in p.f_q.weight.iter_mut().chain(p.f_q.bias.iter_mut()) {
            *w = rng.random_range(-0.5..0.5);
        }
        p.w_a = 0.8;
        p.w_s = 0.35;
        p
    }

    #[test]
    fn collinear_nearest_neighbor() {
        let g = build_knn(&[0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 3.0, 0.0, 0.0], 1, 0);
        assert_eq!(g.row(1), &[0]);
        assert_eq!(g.row(0), &[1]);
        assert_eq!(g.row(2), &[1]);
    }

    #[test]
    fn stencil_rule() {
        assert_eq!(neighbors_for_stencil(3), 8);
        assert_eq!(neighbors_for_stencil(1), 0);
        assert_eq!(neighbors_for_stencil(5), 24);
    }

    #[test]
    fn exhaustive_rows_when_k_exceeds_population() {
        let pos = [0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 5.0];
        let g = build_knn(&pos, 8, 0);
        for i in 0..4 {
            let mut n: Vec<usize> = g.neighbors(i).collect();
            n.sort();
            let want: Vec<usize> = (0..4).filter(|&j| j != i).collect();
            assert_eq!(n, want);
            assert_eq!(g.row(i).iter().filter(|&&u| u == NO_NEIGHBOR).count(), 5);
        }
    }

    #[test]
    fn single_point_has_empty_row() {
        let g = build_knn(&[0.0, 1.0, 2.0], 8, 0);
        assert!(g.neighbors(0).next().is_none());
        let p = HeatParams { w_a: 0.5, w_s: 2.0, ..HeatParams::identity(8, 2) };
        let f = [1.0, -2.0];
        let out = heat_transform(&f, &[0.0], &g, &p);
        assert_eq!(out.grad, vec![0.0, 0.0]);
        assert_eq!(out.refined, vec![0.5, -1.0]);
    }

    #[test]
    fn ties_break_by_index() {
        let pos = [0.0, 0.0, 0.0, 1.0, 0.0, 0.0, -1.0, 0.0, 0.0];
        let g = build_knn(&pos, 1, 0);
        assert_eq!(g.row(0), &[1]);
    }

    #[test]
    fn gradient_feature_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let graph = build_knn(&[0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0], 2, 0);
        let mut p = random_params(2, 3, &mut rng);
        p.f_grad.bias.iter_mut().for_each(|b| *b = 0.0);
        let uniform = [0.4, -0.1, 0.7].repeat(3);
        assert!(feature_gradient(&uniform, &graph, &p).iter().all(|v| *v == 0.0));

        // two Gaussians: anchor 0 sees F_1 - F_0
        let two = build_knn(&[0.0, 0.0, 0.0, 1.0, 0.0, 0.0], 1, 0);
        let p = HeatParams { f_grad: Linear::identity(2), ..HeatParams::identity(1, 2) };
        let a = [1.0, 2.0];
        let b = [4.0, -1.0];
        let g = feature_gradient(&[a[0], a[1], b[0], b[1]], &two, &p);
        assert_eq!(&g[..2], &[3.0, -3.0]);
        assert_eq!(&g[2..], &[-3.0, 3.0]);
    }

    #[test]
    fn flux_examples() {
        let mut p = HeatParams::identity(1, 2);
        p.f_q = Linear::identity(2);
        assert_eq!(heat_flux(&[0.0, 0.0], &[0.3], &p), vec![0.0, 0.0]);
        p.f_q.bias = vec![0.25, -0.5];
        // sigmoid(o) -> 0 leaves only the bias
        let q = heat_flux(&[3.0, 1.0], &[-800.0], &p);
        assert_eq!(q, vec![0.25, -0.5]);
        p.f_q.bias = vec![0.0, 0.0];
        let q1 = heat_flux(&[1.0, 2.0], &[math::logit(0.2)], &p);
        let q2 = heat_flux(&[1.0, 2.0], &[math::logit(0.4)], &p);
        for d in 0..2 {
            assert!((q2[d] - 2.0 * q1[d]).abs() < 1e-12);
        }
    }

    #[test]
    fn refine_examples() {
        let graph = build_knn(&[0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 3.0, 0.0, 0.0], 2, 0);
        let f = [1.0, 2.0, 5.0];
        let zero = [0.0; 3];
        let id = HeatParams::identity(2, 1);
        assert_eq!(refine_features(&f, &zero, &graph, &id), f.to_vec());
        let mean_only = HeatParams { w_a: 0.0, w_s: 1.0, ..HeatParams::identity(2, 1) };
        assert_eq!(refine_features(&f, &zero, &graph, &mean_only), vec![3.5, 3.0, 1.5]);
        let both = HeatParams { w_a: 0.3, w_s: 1.2, ..HeatParams::identity(2, 1) };
        let r = refine_features(&[2.0; 3], &zero, &graph, &both);
        assert!(r.iter().all(|v| (v - 3.0).abs() < 1e-12));
    }

    #[test]
    fn identity_transform_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let pos: Vec<f64> = (0..60).map(|_| rng.random_range(-1.0..1.0)).collect();
        let graph = build_knn(&pos, 8, 0);
        let f: Vec<f64> = (0..20 * 5).map(|_| rng.random_range(-3.0..3.0)).collect();
        let o: Vec<f64> = (0..20).map(|_| rng.random_range(-3.0..3.0)).collect();
        let out = heat_transform(&f, &o, &graph, &HeatParams::identity(8, 5));
        assert_eq!(out.refined, f);
    }

    #[test]
    fn relabeling_is_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let m = 9;
        let dim = 3;
        let pos: Vec<f64> = (0..3 * m).map(|_| rng.random_range(-1.0..1.0)).collect();
        let f: Vec<f64> = (0..m * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let o: Vec<f64> = (0..m).map(|_| rng.random_range(-2.0..2.0)).collect();
        let p = random_params(4, dim, &mut rng);
        let perm: Vec<usize> = (0..m).rev().collect();
        let gather = |v: &[f64], w: usize| perm.iter().flat_map(|&i| v[i * w..(i + 1) * w].to_vec()).collect::<Vec<f64>>();
        let base = heat_transform(&f, &o, &build_knn(&pos, 4, 0), &p).refined;
        let pp = gather(&pos, 3);
        let permuted = heat_transform(&gather(&f, dim), &gather(&o, 1), &build_knn(&pp, 4, 0), &p).refined;
        let expect = gather(&base, dim);
        for (a, b) in permuted.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn rebuild_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pos: Vec<f64> = (0..90).map(|_| rng.random_range(-1.0..1.0)).collect();
        assert_eq!(build_knn(&pos, 8, 3), build_knn(&pos, 8, 3));
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let m = 6;
        let dim = 3;
        let k = 3;
        let pos: Vec<f64> = (0..3 * m).map(|_| rng.random_range(-1.0..1.0)).collect();
        let graph = build_knn(&pos, k, 0);
        let f: Vec<f64> = (0..m * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let o: Vec<f64> = (0..m).map(|_| rng.random_range(-2.0..2.0)).collect();
        let p = random_params(k, dim, &mut rng);
        let w: Vec<f64> = (0..m * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let loss = |f: &[f64], o: &[f64], p: &HeatParams| -> f64 {
            heat_transform(f, o, &graph, p).refined.iter().zip(&w).map(|(a, b)| a * b).sum()
        };
        let trace = heat_transform(&f, &o, &graph, &p);
        let mut d_o = vec![0.0; m];
        let mut gp = p.zeros_like();
        let d_f = heat_transform_backward(&f, &o, &graph, &p, &trace, &w, &mut d_o, &mut gp);
        let h = 1e-4;
        let close = |fd: f64, an: f64| (fd - an).abs() <= 1e-3 * fd.abs().max(an.abs()).max(1e-3);
        for i in 0..f.len() {
            let (mut a, mut b) = (f.clone(), f.clone());
            a[i] += h;
            b[i] -= h;
            let fd = (loss(&a, &o, &p) - loss(&b, &o, &p)) / (2.0 * h);
            assert!(close(fd, d_f[i]), "F[{i}]: {fd} vs {}", d_f[i]);
        }
        for i in 0..m {
            let (mut a, mut b) = (o.clone(), o.clone());
            a[i] += h;
            b[i] -= h;
            let fd = (loss(&f, &a, &p) - loss(&f, &b, &p)) / (2.0 * h);
            assert!(close(fd, d_o[i]), "o[{i}]");
        }
        let fd_w = |mutate: &dyn Fn(&mut HeatParams, f64)| {
            let (mut a, mut b) = (p.clone(), p.clone());
            mutate(&mut a, h);
            mutate(&mut b, -h);
            (loss(&f, &o, &a) - loss(&f, &o, &b)) / (2.0 * h)
        };
        assert!(close(fd_w(&|q, d| q.w_a += d), gp.w_a));
        assert!(close(fd_w(&|q, d| q.w_s += d), gp.w_s));
        for j in [0, 5, 11, 20] {
            assert!(close(fd_w(&|q, d| q.f_grad.weight[j] += d), gp.f_grad.weight[j]));
        }
        for j in [0, 4, 8] {
            assert!(close(fd_w(&|q, d| q.f_q.weight[j] += d), gp.f_q.weight[j]));
        }
        assert!(close(fd_w(&|q, d| q.f_q.bias[1] += d), gp.f_q.bias[1]));
    }
}
