//! Empirical HSIC (biased V-statistic) with Gaussian RBF kernels on both
//! the representation rows and the treatment labels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::matrix::Matrix;
use crate::numkit::tape::{Tape, Var};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bandwidth {
    /// Median of pairwise Euclidean distances between representation rows.
    #[default]
    Auto,
    Fixed(f64),
}

impl Bandwidth {
    pub fn resolve<F: Scalar>(self, r: &Matrix<F>) -> Result<F> {
        match self {
            Bandwidth::Fixed(s) if s > 0.0 => Ok(F::lit(s)),
            Bandwidth::Fixed(s) => Err(Error::invalid(format!("HSIC bandwidth must be positive, got {s}"))),
            Bandwidth::Auto => Ok(median_distance(r)),
        }
    }
}

/// Median pairwise distance; falls back to 1 when all rows coincide.
pub fn median_distance<F: Scalar>(r: &Matrix<F>) -> F {
    let m = r.rows();
    let mut d = Vec::with_capacity(m * (m.saturating_sub(1)) / 2);
    for i in 0..m {
        for j in i + 1..m {
            d.push(sq_dist(r.row(i), r.row(j)).sqrt());
        }
    }
    if d.is_empty() {
        return F::one();
    }
    let mid = d.len() / 2;
    d.select_nth_unstable_by(mid, |a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let med = d[mid];
    if med > F::zero() {
        med
    } else {
        F::one()
    }
}

#[inline]
fn sq_dist<F: Scalar>(a: &[F], b: &[F]) -> F {
    a.iter().zip(b).map(|(&p, &q)| (p - q) * (p - q)).sum()
}

/// K(x, y) = exp(-|x - y|^2 / (2 sigma^2)) over the rows of `x`.
pub fn rbf_kernel<F: Scalar>(x: &Matrix<F>, sigma: F) -> Matrix<F> {
    let m = x.rows();
    let denom = F::lit(2.0) * sigma * sigma;
    let mut k = Matrix::zeros(m, m);
    for i in 0..m {
        k.set(i, i, F::one());
        for j in i + 1..m {
            let v = (-sq_dist(x.row(i), x.row(j)) / denom).exp();
            k.set(i, j, v);
            k.set(j, i, v);
        }
    }
    k
}

/// H K H with H = I - 11^T/m.
pub fn double_center<F: Scalar>(k: &Matrix<F>) -> Matrix<F> {
    let m = k.rows();
    let mf = F::from_usize(m).unwrap();
    let row_mean: Vec<F> = (0..m).map(|i| k.row(i).iter().copied().sum::<F>() / mf).collect();
    let col_mean: Vec<F> = (0..m).map(|j| (0..m).map(|i| k.get(i, j)).sum::<F>() / mf).collect();
    let grand = row_mean.iter().copied().sum::<F>() / mf;
    let mut out = Matrix::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            out.set(i, j, k.get(i, j) - row_mean[i] - col_mean[j] + grand);
        }
    }
    out
}

/// Differentiable HSIC(R, T) on the tape; gradient flows to `r` only.
pub fn hsic<F: Scalar>(tape: &mut Tape<F>, r: Var, t: &[F], bandwidth: Bandwidth) -> Result<Var> {
    let x = tape.value(r);
    let m = x.rows();
    if m < 2 {
        return Err(Error::invalid("HSIC needs at least two samples"));
    }
    if t.len() != m {
        return Err(Error::shape(format!("{} labels for {m} representation rows", t.len())));
    }
    let sigma = bandwidth.resolve(x)?;
    let kr = rbf_kernel(x, sigma);
    let kt = rbf_kernel(&Matrix::column(t), sigma);
    let m2 = F::from_usize(m * m).unwrap();
    let weight = double_center(&kt).scale(F::one() / m2);
    let value = double_center(&kr).hadamard(&weight)?.sum();
    tape.hsic_node(r, weight, kr, sigma, value)
}

/// HSIC value without gradient bookkeeping.
pub fn hsic_value<F: Scalar>(r: &Matrix<F>, t: &[F], bandwidth: Bandwidth) -> Result<F> {
    let mut tape = Tape::new();
    let v = tape.constant(r.clone());
    let h = hsic(&mut tape, v, t, bandwidth)?;
    Ok(tape.scalar(h))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Literal triple/quadruple sums of the three-term V-statistic.
    fn brute(r: &Matrix<f64>, t: &[f64], sigma: f64) -> f64 {
        let n = r.rows();
        let k = |a: &[f64], b: &[f64]| (-sq_dist(a, b) / (2.0 * sigma * sigma)).exp();
        let kr = |i: usize, j: usize| k(r.row(i), r.row(j));
        let kt = |i: usize, j: usize| k(&[t[i]], &[t[j]]);
        let nf = n as f64;
        let mut a = 0.0;
        let mut b = 0.0;
        let mut c = 0.0;
        for i in 0..n {
            for j in 0..n {
                a += kr(i, j) * kt(i, j);
                for kk in 0..n {
                    c += kr(i, j) * kt(i, kk);
                    for l in 0..n {
                        b += kr(i, j) * kt(kk, l);
                    }
                }
            }
        }
        a / nf.powi(2) + b / nf.powi(4) - 2.0 * c / nf.powi(3)
    }

    #[test]
    fn constant_labels_or_rows_give_zero() {
        let r = Matrix::from_rows(&[vec![0.1, 2.0], vec![-1.0, 0.3], vec![0.5, 0.5], vec![2.0, 1.0]]).unwrap();
        assert_eq!(hsic_value(&r, &[1.0; 4], Bandwidth::Auto).unwrap(), 0.0);
        let c = Matrix::filled(4, 2, 0.7);
        assert_eq!(hsic_value(&c, &[1.0, 0.0, 1.0, 0.0], Bandwidth::Fixed(1.3)).unwrap(), 0.0);
    }

    #[test]
    fn small_instance_matches_brute_force() {
        let r = Matrix::from_rows(&[vec![0.3, -1.2], vec![1.1, 0.4], vec![-0.7, 0.9]]).unwrap();
        let t = [1.0, 0.0, 1.0];
        for sigma in [0.5, 1.0, 2.5] {
            let fast = hsic_value(&r, &t, Bandwidth::Fixed(sigma)).unwrap();
            assert!((fast - brute(&r, &t, sigma)).abs() < 1e-12);
        }
    }

    #[test]
    fn too_few_samples() {
        let r = Matrix::<f64>::zeros(1, 2);
        assert!(hsic_value(&r, &[1.0], Bandwidth::Auto).is_err());
    }

    #[test]
    fn permutation_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rows: Vec<Vec<f64>> = (0..12).map(|_| (0..3).map(|_| rng.random::<f64>()).collect()).collect();
        let t: Vec<f64> = (0..12).map(|i| (i % 3 == 0) as u8 as f64).collect();
        let r = Matrix::from_rows(&rows).unwrap();
        let base = hsic_value(&r, &t, Bandwidth::Auto).unwrap();
        let perm: Vec<usize> = (0..12).rev().collect();
        let rp = r.select_rows(&perm);
        let tp: Vec<f64> = perm.iter().map(|&i| t[i]).collect();
        assert!((hsic_value(&rp, &tp, Bandwidth::Auto).unwrap() - base).abs() < 1e-12);
    }

    #[test]
    fn independent_samples_pass_permutation_null() {
        let trials = 20;
        let mut accepted = 0;
        for seed in 0..trials {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let n = 200;
            let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..2).map(|_| rng.random::<f64>()).collect()).collect();
            let r = Matrix::from_rows(&rows).unwrap();
            let mut t: Vec<f64> = (0..n).map(|_| (rng.random::<f64>() < 0.4) as u8 as f64).collect();
            let sigma = Bandwidth::Fixed(median_distance(&r));
            let stat = hsic_value(&r, &t, sigma).unwrap();
            let mut null = Vec::new();
            for _ in 0..99 {
                use rand::seq::SliceRandom;
                t.shuffle(&mut rng);
                null.push(hsic_value(&r, &t, sigma).unwrap());
            }
            null.sort_by(|a, b| a.partial_cmp(b).unwrap());
            if stat <= null[94] {
                accepted += 1;
            }
        }
        assert!(accepted as f64 >= 0.9 * trials as f64, "accepted {accepted}/{trials}");
    }
}
