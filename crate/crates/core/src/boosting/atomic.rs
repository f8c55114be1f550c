//! Atomic norm of a predictor in the span of a symmetric finite class.
//!
//! Because the class is closed under negation, `‖f‖_A = min Σ β_j` over
//! `β ≥ 0` with `Σ β_j g_j = f`. Writing the weighted atom matrix as
//! `Q R Pᵀ`, the equality constraints become `R Pᵀ β = Qᵀ f̃`, one row per
//! independent direction, which is equivalent whenever `f` lies in the span.

use super::class::AtomRange;
use super::WeakLearnerClass;
use crate::error::{Error, Result};
use crate::population::{weighted_norm, Population, Predictor};
use minilp::{ComparisonOp, OptimizationDirection, Problem};

/// Relative span-membership tolerance.
pub const SPAN_TOL: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct AtomicRepresentation {
    pub norm: f64,
    /// Non-negative weights on the class atoms attaining the norm.
    pub weights: Vec<f64>,
}

pub fn atomic_norm(f: &Predictor, class: &WeakLearnerClass, pop: &Population) -> Result<f64> {
    Ok(atomic_representation(f, class, pop)?.norm)
}

pub fn atomic_representation(
    f: &Predictor,
    class: &WeakLearnerClass,
    pop: &Population,
) -> Result<AtomicRepresentation> {
    let refs: Vec<&Predictor> = class.atoms().iter().map(|a| a.as_ref()).collect();
    f.check_shape(pop)?;
    let range = class.range();
    let ft = range.weighted(f);
    let coords = range.q.tr_mul(&ft);
    let fnorm = ft.norm();
    let residual = (&ft - &range.q * &coords).norm();
    if !(residual <= SPAN_TOL * fnorm.max(1.0)) {
        return Err(Error::OutsideSpan { residual });
    }
    if fnorm == 0.0 {
        return Ok(AtomicRepresentation {
            norm: 0.0,
            weights: vec![0.0; refs.len()],
        });
    }
    let lp = solve_lp(range, coords.as_slice())?;
    Ok(polish(&lp, &refs, f, pop).unwrap_or_else(|| {
        let norm = lp_norm(&lp);
        AtomicRepresentation { norm, weights: lp }
    }))
}

fn lp_norm(w: &[f64]) -> f64 {
    w.iter().sum()
}

fn solve_lp(range: &AtomRange, coords: &[f64]) -> Result<Vec<f64>> {
    let m = range.rows.ncols();
    let mut problem = Problem::new(OptimizationDirection::Minimize);
    let vars: Vec<_> = (0..m)
        .map(|_| problem.add_var(1.0, (0.0, f64::INFINITY)))
        .collect();
    for (k, &rhs) in coords.iter().enumerate() {
        let row = range.rows.row(k);
        let terms: Vec<_> = vars.iter().zip(row.iter()).map(|(&x, &c)| (x, c)).collect();
        problem.add_constraint(terms.as_slice(), ComparisonOp::Eq, rhs);
    }
    let sol = problem.solve().map_err(|e| Error::Lp(e.to_string()))?;
    Ok(vars.iter().map(|&v| sol.var_value(v).max(0.0)).collect())
}

/// Re-solves exactly on the support found by the LP; keeps the result only if
/// it stays non-negative and reproduces `f`.
fn polish(
    lp: &[f64],
    atoms: &[&Predictor],
    f: &Predictor,
    pop: &Population,
) -> Option<AtomicRepresentation> {
    let cut = 1e-9 * lp.iter().cloned().fold(0.0, f64::max);
    let support: Vec<usize> = (0..lp.len()).filter(|&j| lp[j] > cut).collect();
    if support.is_empty() {
        return None;
    }
    let basis: Vec<&Predictor> = support.iter().map(|&j| atoms[j]).collect();
    let coef = crate::lstsq::min_norm_least_squares(&basis, f, pop).ok()?;
    if coef.iter().any(|&c| c < -1e-12) {
        return None;
    }
    let fit = Predictor::linear_combination(&basis, &coef).ok()?;
    let res = weighted_norm(&f.sub(&fit).ok()?, pop).ok()?;
    let fnorm = weighted_norm(f, pop).ok()?;
    if res > 1e-12 * fnorm.max(1.0) {
        return None;
    }
    let mut weights = vec![0.0; lp.len()];
    for (&j, &c) in support.iter().zip(&coef) {
        weights[j] = c.max(0.0);
    }
    let norm = lp_norm(&weights);
    // the support fit must not be worse than the LP optimum it came from
    if norm > lp_norm(lp) + 1e-7 * (1.0 + norm) {
        return None;
    }
    Some(AtomicRepresentation { norm, weights })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pop(n: usize) -> Population {
        Population::uniform((0..n).map(|i| (vec![i as f64], vec![0.0])).collect()).unwrap()
    }

    fn basis_vector(n: usize, j: usize) -> Predictor {
        let mut v = vec![0.0; n];
        v[j] = (n as f64).sqrt();
        Predictor::scalar(v)
    }

    #[test]
    fn zero_has_zero_norm() {
        let p = pop(3);
        let c = WeakLearnerClass::new(vec![basis_vector(3, 0)], None, &p).unwrap();
        assert_eq!(atomic_norm(&Predictor::zeros(3, 1), &c, &p).unwrap(), 0.0);
    }

    #[test]
    fn orthonormal_atoms_give_l1_norm() {
        let p = pop(4);
        let c =
            WeakLearnerClass::new(vec![basis_vector(4, 0), basis_vector(4, 2)], None, &p).unwrap();
        assert!((atomic_norm(c.atom(0), &c, &p).unwrap() - 1.0).abs() < 1e-12);
        for (a, b) in [(0.3, -1.7), (-2.0, 0.25), (1.0, 1.0)] {
            let f = Predictor::linear_combination(&[c.atom(0), c.atom(2)], &[a, b]).unwrap();
            let n = atomic_norm(&f, &c, &p).unwrap();
            assert!((n - (a.abs() + b.abs())).abs() < 1e-10, "{n}");
        }
    }

    #[test]
    fn outside_span_is_an_error() {
        let p = pop(3);
        let c = WeakLearnerClass::new(vec![basis_vector(3, 0)], None, &p).unwrap();
        assert!(matches!(
            atomic_norm(&basis_vector(3, 1), &c, &p),
            Err(Error::OutsideSpan { .. })
        ));
    }

    #[test]
    fn redundant_atom_shortcut() {
        // h = (e0 + e1)/√2 gives ‖e0 + e1‖_A = √2 instead of 2
        let p = pop(2);
        let (e0, e1) = (basis_vector(2, 0), basis_vector(2, 1));
        let h = e0.add_scaled(1.0, &e1).unwrap().scale(1.0 / 2f64.sqrt());
        let c = WeakLearnerClass::new(vec![e0.clone(), e1.clone(), h], None, &p).unwrap();
        let f = e0.add_scaled(1.0, &e1).unwrap();
        assert!((atomic_norm(&f, &c, &p).unwrap() - 2f64.sqrt()).abs() < 1e-12);
    }
}
