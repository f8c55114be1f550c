//! Population least squares over the span of a finite basis.
//!
//! The normal equations are solved through a symmetric eigendecomposition of
//! the Gram matrix. Eigenvalues at or below `EIG_REL_THRESHOLD * λ_max` are
//! discarded, which yields the minimum-Euclidean-norm coefficient vector when
//! the basis is rank deficient.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::population::{inner_unchecked, Population, Predictor};

pub const EIG_REL_THRESHOLD: f64 = 1e-12;

pub fn gram_matrix(basis: &[&Predictor], pop: &Population) -> Result<DMatrix<f64>> {
    for b in basis {
        b.check_shape(pop)?;
    }
    let m = basis.len();
    let mut g = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in i..m {
            let v = inner_unchecked(basis[i], basis[j], pop);
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    Ok(g)
}

pub fn cross_moments(
    basis: &[&Predictor],
    target: &Predictor,
    pop: &Population,
) -> Result<DVector<f64>> {
    target.check_shape(pop)?;
    for b in basis {
        b.check_shape(pop)?;
    }
    Ok(DVector::from_iterator(
        basis.len(),
        basis.iter().map(|b| inner_unchecked(b, target, pop)),
    ))
}

/// Eigendecomposition of a Gram matrix with the numerically null directions removed.
#[derive(Debug, Clone)]
pub struct SpanDecomposition {
    /// Retained eigenvalues, all strictly above the threshold.
    pub eigenvalues: Vec<f64>,
    /// Matching eigenvectors as columns (`m x r`).
    pub eigenvectors: DMatrix<f64>,
}

impl SpanDecomposition {
    pub fn new(gram: DMatrix<f64>) -> SpanDecomposition {
        let m = gram.nrows();
        let eig = SymmetricEigen::new(gram);
        let lmax = eig.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
        let cut = EIG_REL_THRESHOLD * lmax;
        // deterministic column order: by decreasing eigenvalue, then index
        let mut keep: Vec<usize> = (0..m)
            .filter(|&i| lmax > 0.0 && eig.eigenvalues[i] > cut)
            .collect();
        keep.sort_by(|&a, &b| {
            eig.eigenvalues[b]
                .total_cmp(&eig.eigenvalues[a])
                .then(a.cmp(&b))
        });
        let eigenvalues = keep.iter().map(|&i| eig.eigenvalues[i]).collect();
        let eigenvectors = DMatrix::from_fn(m, keep.len(), |r, c| eig.eigenvectors[(r, keep[c])]);
        SpanDecomposition {
            eigenvalues,
            eigenvectors,
        }
    }

    pub fn rank(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Minimum-norm solution of `gram * c = rhs` restricted to the retained spectrum.
    pub fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        let mut c = DVector::zeros(self.eigenvectors.nrows());
        for (k, &lam) in self.eigenvalues.iter().enumerate() {
            let u = self.eigenvectors.column(k);
            let coef = u.dot(rhs) / lam;
            c.axpy(coef, &u, 1.0);
        }
        c
    }
}

/// Minimum-norm coefficients `c` minimizing `E||target - Σ c_j basis_j||²`.
pub fn min_norm_least_squares(
    basis: &[&Predictor],
    target: &Predictor,
    pop: &Population,
) -> Result<Vec<f64>> {
    if basis.is_empty() {
        return Err(Error::EmptyBasis);
    }
    let gram = gram_matrix(basis, pop)?;
    let rhs = cross_moments(basis, target, pop)?;
    Ok(SpanDecomposition::new(gram)
        .solve(&rhs)
        .iter()
        .copied()
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::population::{mse, Point};

    #[test]
    fn duplicate_columns_get_minimum_norm_split() {
        let pop = Population::uniform(vec![(vec![], vec![1.0]), (vec![], vec![2.0])]).unwrap();
        let g = Predictor::scalar(vec![1.0, 2.0]);
        let c = min_norm_least_squares(&[&g, &g], &pop.labels(), &pop).unwrap();
        assert!((c[0] - 0.5).abs() < 1e-12 && (c[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn zero_basis_gives_zero_coefficients() {
        let pop = Population::new(vec![Point {
            x: vec![],
            y: vec![3.0],
            w: 1.0,
        }])
        .unwrap();
        let z = Predictor::scalar(vec![0.0]);
        let c = min_norm_least_squares(&[&z], &pop.labels(), &pop).unwrap();
        assert_eq!(c, vec![0.0]);
        let fit = Predictor::linear_combination(&[&z], &c).unwrap();
        assert_eq!(mse(&fit, &pop).unwrap(), 9.0);
    }

    #[test]
    fn empty_basis_rejected() {
        let pop = Population::uniform(vec![(vec![], vec![1.0])]).unwrap();
        assert!(matches!(
            min_norm_least_squares(&[], &pop.labels(), &pop),
            Err(Error::EmptyBasis)
        ));
    }
}
