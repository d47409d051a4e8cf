//! Weighted Euclidean inner-product spaces.
//!
//! Discretized function spaces carry quadrature weights so that
//! `<u, v> = sum_i w_i u_i v_i` approximates the continuous inner product.
//! Without weights the plain Euclidean product is used.

use nalgebra::DVector;

use crate::error::{check_len, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct InnerProductSpace {
    dim: usize,
    weights: Option<DVector<f64>>,
}

impl InnerProductSpace {
    pub fn euclidean(dim: usize) -> Self {
        Self { dim, weights: None }
    }

    /// Space with explicit positive weights.
    pub fn weighted(weights: Vec<f64>) -> Result<Self> {
        if let Some((i, w)) = weights
            .iter()
            .enumerate()
            .find(|(_, w)| !(w.is_finite() && **w > 0.0))
        {
            return Err(Error::invalid(format!(
                "weight {i} must be positive and finite, got {w}"
            )));
        }
        Ok(Self {
            dim: weights.len(),
            weights: Some(DVector::from_vec(weights)),
        })
    }

    /// Midpoint-rule weights `1/n` on the unit interval, so that norms of
    /// sampled functions approximate their L2(0,1) norms.
    pub fn midpoint(n: usize) -> Self {
        Self {
            dim: n,
            weights: Some(DVector::from_element(n, 1.0 / n as f64)),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weights(&self) -> Option<&DVector<f64>> {
        self.weights.as_ref()
    }

    /// Weight of coordinate `i` (1 for the Euclidean space).
    pub fn weight(&self, i: usize) -> f64 {
        self.weights.as_ref().map_or(1.0, |w| w[i])
    }

    /// Pairwise-summed inner product. The unweighted path is the weighted one
    /// with `w_i = 1`, so unit weights agree with it bit for bit.
    pub fn dot(&self, u: &DVector<f64>, v: &DVector<f64>) -> f64 {
        debug_assert_eq!(u.len(), self.dim);
        debug_assert_eq!(v.len(), self.dim);
        match &self.weights {
            None => pairwise_sum(u.as_slice(), v.as_slice(), None),
            Some(w) => pairwise_sum(u.as_slice(), v.as_slice(), Some(w.as_slice())),
        }
    }

    pub fn norm(&self, u: &DVector<f64>) -> f64 {
        self.dot(u, u).sqrt()
    }

    /// Total mass `sum_i w_i`, i.e. the squared norm of the constant vector 1.
    pub fn total_weight(&self) -> f64 {
        self.weights.as_ref().map_or(self.dim as f64, |w| w.sum())
    }

    pub fn check(&self, context: &'static str, v: &DVector<f64>) -> Result<()> {
        check_len(context, self.dim, v.len())
    }
}

const PAIRWISE_BLOCK: usize = 32;

fn pairwise_sum(u: &[f64], v: &[f64], w: Option<&[f64]>) -> f64 {
    let n = u.len();
    if n <= PAIRWISE_BLOCK {
        let mut acc = 0.0;
        for i in 0..n {
            let wi = w.map_or(1.0, |w| w[i]);
            acc += wi * u[i] * v[i];
        }
        return acc;
    }
    let half = n / 2;
    let (wl, wr) = match w {
        Some(w) => (Some(&w[..half]), Some(&w[half..])),
        None => (None, None),
    };
    pairwise_sum(&u[..half], &v[..half], wl) + pairwise_sum(&u[half..], &v[half..], wr)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_weights_match_euclidean_bitwise() {
        let u = DVector::from_vec(vec![0.1, -2.5, 3.25, 1e-7]);
        let v = DVector::from_vec(vec![7.0, 0.3, -1.1, 4.0]);
        let plain = InnerProductSpace::euclidean(4);
        let unit = InnerProductSpace::weighted(vec![1.0; 4]).unwrap();
        assert_eq!(plain.dot(&u, &v).to_bits(), unit.dot(&u, &v).to_bits());
        assert_eq!(plain.norm(&u).to_bits(), unit.norm(&u).to_bits());
    }

    #[test]
    fn long_sums_stay_accurate() {
        let n = 100_000;
        let space = InnerProductSpace::midpoint(n);
        let c = DVector::from_element(n, 3e-5);
        assert!((space.norm(&c) - 3e-5).abs() <= 1e-14 * 3e-5);
    }

    #[test]
    fn midpoint_constant_has_unit_norm() {
        let space = InnerProductSpace::midpoint(1000);
        let one = DVector::from_element(1000, 1.0);
        assert!((space.norm(&one) - 1.0).abs() < 1e-14);
        assert!((space.total_weight() - 1.0).abs() < 1e-13);
    }

    #[test]
    fn rejects_nonpositive_weights() {
        assert!(InnerProductSpace::weighted(vec![1.0, 0.0]).is_err());
        assert!(InnerProductSpace::weighted(vec![1.0, f64::NAN]).is_err());
    }
}
