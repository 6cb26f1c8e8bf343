//! Differentiation contract shared by every learnable structure, and the
//! central-difference oracle used to audit it.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::index;
use rand::Rng;

use crate::error::{Error, Result};
use crate::model::Model;

/// A collection of named flat parameter arrays visited in a fixed order.
pub trait ParamSet: Clone {
    fn visit(&self, f: &mut dyn FnMut(&str, &[f64]));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64]));
    /// Same shapes, all zeros.
    fn zeros_like(&self) -> Self;
}

impl ParamSet for Vec<f64> {
    fn visit(&self, f: &mut dyn FnMut(&str, &[f64])) {
        f("p", self);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        f("p", self);
    }

    fn zeros_like(&self) -> Self {
        alloc::vec![0.0; self.len()]
    }
}

impl ParamSet for Model {
    fn visit(&self, f: &mut dyn FnMut(&str, &[f64])) {
        Model::visit(self, f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        Model::visit_mut(self, f);
    }

    fn zeros_like(&self) -> Self {
        Model::zeros_like(self)
    }
}

/// A scalar objective with an exact reverse-mode gradient.
pub trait Objective<P: ParamSet> {
    fn value(&self, params: &P) -> Result<f64>;
    fn value_and_grad(&self, params: &P) -> Result<(f64, P)>;
}

/// Gradient of `objective` at `params`.
pub fn grad<P: ParamSet, O: Objective<P> + ?Sized>(objective: &O, params: &P) -> Result<P> {
    let (v, g) = objective.value_and_grad(params)?;
    if !v.is_finite() {
        return Err(Error::NonFinite { what: String::from("objective"), location: String::from("value") });
    }
    Ok(g)
}

/// Reduce a loss that must be scalar; anything else is a usage error.
pub fn scalar(outputs: &[f64]) -> Result<f64> {
    match outputs {
        [v] => Ok(*v),
        _ => Err(Error::Usage(alloc::format!("loss must be a scalar, got {} outputs", outputs.len()))),
    }
}

/// Flatten to a single vector in visit order.
pub fn flatten<P: ParamSet>(p: &P) -> Vec<f64> {
    let mut out = Vec::new();
    p.visit(&mut |_, v| out.extend_from_slice(v));
    out
}

/// Names and lengths in visit order.
pub fn layout<P: ParamSet>(p: &P) -> Vec<(String, usize)> {
    let mut out = Vec::new();
    p.visit(&mut |n, v| out.push((String::from(n), v.len())));
    out
}

/// Apply `f` to the `index`-th element of the array called `name`.
pub fn with_coordinate<P: ParamSet>(p: &mut P, name: &str, index: usize, f: impl FnOnce(&mut f64)) {
    let mut f = Some(f);
    p.visit_mut(&mut |n, v| {
        if n == name {
            if let Some(f) = f.take() {
                f(&mut v[index]);
            }
        }
    });
}

pub fn get_coordinate<P: ParamSet>(p: &P, name: &str, index: usize) -> f64 {
    let mut out = f64::NAN;
    p.visit(&mut |n, v| {
        if n == name {
            out = v[index];
        }
    });
    out
}

/// `|a - f| / max(|a|, |f|, floor)`; the floor turns the relative tolerance into an
/// absolute one near zero (`floor = atol / rtol`).
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoordinateCheck {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checks: Vec<CoordinateCheck>,
    pub worst: Option<CoordinateCheck>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.worst.as_ref().map_or(0.0, |w| w.rel_error)
    }

    /// Worst error and sample count per array name, in name order.
    pub fn per_name(&self) -> BTreeMap<String, (f64, usize)> {
        let mut m: BTreeMap<String, (f64, usize)> = BTreeMap::new();
        for c in &self.checks {
            let e = m.entry(c.name.clone()).or_insert((0.0, 0));
            e.0 = e.0.max(c.rel_error);
            e.1 += 1;
        }
        m
    }
}

/// Sampling policy of [`finite_difference_check`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    pub h: f64,
    /// Coordinates drawn per named array (all of them when the array is smaller).
    pub per_array: usize,
    /// Overall cap; arrays keep at least one coordinate each when the cap bites.
    pub max_total: usize,
    /// `atol / rtol`.
    pub floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { h: 1e-4, per_array: 8, max_total: 200, floor: 1e-3 }
    }
}

/// Compare `grad` against central differences of `loss` on a stratified random subsample.
pub fn finite_difference_check<P: ParamSet, R: Rng + ?Sized>(
    loss: &dyn Fn(&P) -> f64,
    params: &P,
    grad: &P,
    opts: &GradCheckOptions,
    rng: &mut R,
) -> GradCheckReport {
    let arrays = layout(params);
    let mut picks: Vec<(String, Vec<usize>)> = arrays
        .iter()
        .filter(|(_, len)| *len > 0)
        .map(|(name, len)| {
            let take = opts.per_array.min(*len);
            let mut idx = index::sample(rng, *len, take).into_vec();
            idx.sort_unstable();
            (name.clone(), idx)
        })
        .collect();
    // trim round-robin from the largest strata until under the cap
    let mut total: usize = picks.iter().map(|p| p.1.len()).sum();
    while total > opts.max_total {
        let Some(big) = picks.iter_mut().filter(|p| p.1.len() > 1).max_by_key(|p| p.1.len()) else {
            break;
        };
        big.1.pop();
        total -= 1;
    }
    let mut checks = Vec::with_capacity(total);
    let mut work = params.clone();
    for (name, idx) in &picks {
        for &i in idx {
            let orig = get_coordinate(params, name, i);
            with_coordinate(&mut work, name, i, |v| *v = orig + opts.h);
            let fp = loss(&work);
            with_coordinate(&mut work, name, i, |v| *v = orig - opts.h);
            let fm = loss(&work);
            with_coordinate(&mut work, name, i, |v| *v = orig);
            let numeric = (fp - fm) / (2.0 * opts.h);
            let analytic = get_coordinate(grad, name, i);
            let rel_error = relative_error(analytic, numeric, opts.floor);
            checks.push(CoordinateCheck { name: name.clone(), index: i, analytic, numeric, rel_error });
        }
    }
    let worst = checks.iter().max_by(|a, b| a.rel_error.total_cmp(&b.rel_error)).cloned();
    GradCheckReport { checks, worst }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    struct SumSquares;

    impl Objective<Vec<f64>> for SumSquares {
        fn value(&self, p: &Vec<f64>) -> Result<f64> {
            Ok(p.iter().map(|v| v * v).sum())
        }
        fn value_and_grad(&self, p: &Vec<f64>) -> Result<(f64, Vec<f64>)> {
            Ok((self.value(p)?, p.iter().map(|v| 2.0 * v).collect()))
        }
    }

    struct Constant;

    impl Objective<Vec<f64>> for Constant {
        fn value(&self, _: &Vec<f64>) -> Result<f64> {
            Ok(4.2)
        }
        fn value_and_grad(&self, p: &Vec<f64>) -> Result<(f64, Vec<f64>)> {
            Ok((4.2, p.zeros_like()))
        }
    }

    /// `sum sigmoid(sigmoid(p_i) * c_i)`
    struct SigmoidChain(Vec<f64>);

    impl Objective<Vec<f64>> for SigmoidChain {
        fn value(&self, p: &Vec<f64>) -> Result<f64> {
            Ok(p.iter().zip(&self.0).map(|(x, c)| math::sigmoid(math::sigmoid(*x) * c)).sum())
        }
        fn value_and_grad(&self, p: &Vec<f64>) -> Result<(f64, Vec<f64>)> {
            let g = p
                .iter()
                .zip(&self.0)
                .map(|(x, c)| {
                    let s = math::sigmoid(*x);
                    let o = math::sigmoid(s * c);
                    o * (1.0 - o) * c * s * (1.0 - s)
                })
                .collect();
            Ok((self.value(p)?, g))
        }
    }

    fn check<O: Objective<Vec<f64>>>(o: &O, p: &Vec<f64>, h: f64) -> GradCheckReport {
        let g = grad(o, p).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let opts = GradCheckOptions { h, per_array: 200, ..Default::default() };
        finite_difference_check(&|q: &Vec<f64>| o.value(q).unwrap(), p, &g, &opts, &mut rng)
    }

    #[test]
    fn quadratic() {
        let p: Vec<f64> = (0..50).map(|i| 0.1 * i as f64 - 2.0).collect();
        assert_eq!(grad(&SumSquares, &p).unwrap(), p.iter().map(|v| 2.0 * v).collect::<Vec<_>>());
        assert!(check(&SumSquares, &p, 1e-4).max_rel_error() < 1e-9);
    }

    #[test]
    fn constant() {
        let p = alloc::vec![1.0, -2.0, 3.0];
        assert!(grad(&Constant, &p).unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn sigmoid_chain() {
        let p: Vec<f64> = (0..40).map(|i| 0.2 * i as f64 - 4.0).collect();
        let c: Vec<f64> = (0..40).map(|i| 1.0 + 0.1 * i as f64).collect();
        let r = check(&SigmoidChain(c), &p, 1e-5);
        assert!(r.max_rel_error() < 1e-6, "{:?}", r.worst);
        assert_eq!(r.checks.len(), 40);
    }

    #[test]
    fn corrupted_gradient_is_caught() {
        let p: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let mut g = grad(&SumSquares, &p).unwrap();
        g[7] *= 1.5;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let opts = GradCheckOptions { per_array: 10, ..Default::default() };
        let r = finite_difference_check(&|q: &Vec<f64>| SumSquares.value(q).unwrap(), &p, &g, &opts, &mut rng);
        let worst = r.worst.unwrap();
        assert_eq!(worst.index, 7);
        assert!(worst.rel_error > 0.1);
    }

    #[test]
    fn gradient_of_sum_is_sum_of_gradients() {
        let p: Vec<f64> = (0..12).map(|i| 0.3 * i as f64 - 1.0).collect();
        let c: Vec<f64> = (0..12).map(|i| 0.5 + 0.1 * i as f64).collect();
        let chain = SigmoidChain(c);
        struct Both<'a>(&'a SigmoidChain);
        impl Objective<Vec<f64>> for Both<'_> {
            fn value(&self, p: &Vec<f64>) -> Result<f64> {
                Ok(SumSquares.value(p)? + self.0.value(p)?)
            }
            fn value_and_grad(&self, p: &Vec<f64>) -> Result<(f64, Vec<f64>)> {
                let (a, ga) = SumSquares.value_and_grad(p)?;
                let (b, gb) = self.0.value_and_grad(p)?;
                Ok((a + b, ga.iter().zip(&gb).map(|(x, y)| x + y).collect()))
            }
        }
        let g = grad(&Both(&chain), &p).unwrap();
        let ga = grad(&SumSquares, &p).unwrap();
        let gb = grad(&chain, &p).unwrap();
        for k in 0..12 {
            assert_eq!(g[k], ga[k] + gb[k]);
        }
    }

    #[test]
    fn cap_keeps_every_array() {
        let p: Vec<f64> = (0..30).map(|i| i as f64).collect();
        let g = grad(&SumSquares, &p).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let opts = GradCheckOptions { per_array: 30, max_total: 5, ..Default::default() };
        let r = finite_difference_check(&|q: &Vec<f64>| SumSquares.value(q).unwrap(), &p, &g, &opts, &mut rng);
        assert_eq!(r.checks.len(), 5);
    }

    #[test]
    fn non_scalar_loss_is_a_usage_error() {
        assert_eq!(scalar(&[2.0]).unwrap(), 2.0);
        assert!(matches!(scalar(&[1.0, 2.0]), Err(Error::Usage(_))));
        assert!(matches!(scalar(&[]), Err(Error::Usage(_))));
    }
}
