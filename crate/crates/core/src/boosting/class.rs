use std::sync::Arc;

use nalgebra::linalg::ColPivQR;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::lstsq::{gram_matrix, EIG_REL_THRESHOLD};
use crate::population::{weighted_norm, Population, Predictor};

/// Atoms whose predictions agree to this relative precision are treated as equal
/// when closing the class under negation.
const SAME_ATOM_TOL: f64 = 1e-14;

/// A finite weak-learner class on a fixed population: symmetric, with atoms of
/// norm at most one and no zero atom.
#[derive(Debug, Clone)]
pub struct WeakLearnerClass {
    atoms: Vec<Arc<Predictor>>,
    names: Vec<String>,
    gram: DMatrix<f64>,
    range: AtomRange,
}

/// Rank-revealing factorization of the weighted atom matrix
/// `B[(i, c), j] = √w_i · g_j(x_i)_c` by column-pivoted Householder QR.
/// Directions with `|R_ii| ≤ √EIG_REL_THRESHOLD · |R_11|` are dropped, which
/// matches the eigenvalue cut of the least-squares solver.
#[derive(Debug, Clone)]
pub(crate) struct AtomRange {
    /// Orthonormal basis of the span (`N·d x r`).
    pub q: DMatrix<f64>,
    /// `Qᵀ B` restricted to the retained rows (`r x M`).
    pub rows: DMatrix<f64>,
    /// `√w_i` repeated per output coordinate.
    pub sqrt_w: Vec<f64>,
}

impl AtomRange {
    fn new(atoms: &[Predictor], pop: &Population) -> AtomRange {
        let d = pop.label_dim();
        let sqrt_w: Vec<f64> = pop
            .weights()
            .flat_map(|w| std::iter::repeat_n(w.sqrt(), d))
            .collect();
        let n = sqrt_w.len();
        let b = DMatrix::from_fn(n, atoms.len(), |r, j| sqrt_w[r] * atoms[j].values()[r]);
        let qr = ColPivQR::new(b);
        let (q, mut r) = (qr.q(), qr.r());
        qr.p().inv_permute_columns(&mut r);
        let pivoted = qr.r();
        let diag: Vec<f64> = (0..pivoted.nrows().min(pivoted.ncols()))
            .map(|i| pivoted[(i, i)].abs())
            .collect();
        let lead = diag.first().copied().unwrap_or(0.0);
        let rank = diag
            .iter()
            .take_while(|&&v| lead > 0.0 && v > EIG_REL_THRESHOLD.sqrt() * lead)
            .count();
        AtomRange {
            q: q.columns(0, rank).into_owned(),
            rows: r.rows(0, rank).into_owned(),
            sqrt_w,
        }
    }

    /// `√w ⊙ f`, flattened.
    pub fn weighted(&self, f: &Predictor) -> DVector<f64> {
        DVector::from_iterator(
            self.sqrt_w.len(),
            f.values().iter().zip(&self.sqrt_w).map(|(a, s)| a * s),
        )
    }
}

impl WeakLearnerClass {
    /// Rescales each base atom by `max(‖g‖, 1)` and adds `−g` unless already present.
    pub fn new(base: Vec<Predictor>, names: Option<Vec<String>>, pop: &Population) -> Result<Self> {
        if base.is_empty() {
            return Err(Error::EmptyBasis);
        }
        let names = match names {
            Some(n) if n.len() != base.len() => {
                return Err(Error::ShapeMismatch {
                    what: "atom names",
                    expected: base.len(),
                    got: n.len(),
                })
            }
            Some(n) => n,
            None => (0..base.len()).map(|i| format!("g{i}")).collect(),
        };
        let mut atoms: Vec<Predictor> = Vec::new();
        let mut labels = Vec::new();
        for (g, name) in base.into_iter().zip(names) {
            g.check_shape(pop)?;
            if !g.is_finite() {
                return Err(Error::ClassInvariant(format!(
                    "atom {name} has non-finite values"
                )));
            }
            let norm = weighted_norm(&g, pop)?;
            if norm == 0.0 {
                return Err(Error::ClassInvariant(format!(
                    "atom {name} is the zero predictor"
                )));
            }
            let g = g.scale(1.0 / norm.max(1.0));
            let neg = g.scale(-1.0);
            let has_neg = atoms.iter().any(|a| same(a, &neg));
            if atoms.iter().any(|a| same(a, &g)) {
                continue;
            }
            atoms.push(g);
            labels.push(name.clone());
            if !has_neg {
                atoms.push(neg);
                labels.push(format!("-{name}"));
            }
        }
        Self::from_closed(atoms, labels, pop)
    }

    fn from_closed(atoms: Vec<Predictor>, names: Vec<String>, pop: &Population) -> Result<Self> {
        let refs: Vec<&Predictor> = atoms.iter().collect();
        let gram = gram_matrix(&refs, pop)?;
        let range = AtomRange::new(&atoms, pop);
        let class = WeakLearnerClass {
            atoms: atoms.into_iter().map(Arc::new).collect(),
            names,
            gram,
            range,
        };
        class.validate(pop)?;
        Ok(class)
    }

    /// Decision stumps `±1{x_c ≤ θ}·e_j` at midpoints of each coordinate, plus constants `±e_j`.
    pub fn stumps(pop: &Population) -> Result<Self> {
        let d = pop.label_dim();
        let mut base = Vec::new();
        let mut names = Vec::new();
        for j in 0..d {
            base.push(unit_output(pop, j, |_| true)?);
            names.push(format!("const[{j}]"));
        }
        for c in 0..pop.feature_dim() {
            let mut vals: Vec<f64> = pop.points().iter().map(|p| p.x[c]).collect();
            vals.sort_by(f64::total_cmp);
            vals.dedup();
            for w in vals.windows(2) {
                let theta = 0.5 * (w[0] + w[1]);
                for j in 0..d {
                    base.push(unit_output(pop, j, |x| x[c] <= theta)?);
                    names.push(format!("x{c}<={theta}[{j}]"));
                }
            }
        }
        WeakLearnerClass::new(base, Some(names), pop)
    }

    /// Checks the three class invariants against `pop`.
    pub fn validate(&self, pop: &Population) -> Result<()> {
        for (g, name) in self.atoms.iter().zip(&self.names) {
            g.check_shape(pop)?;
            let norm = weighted_norm(g, pop)?;
            if norm == 0.0 {
                return Err(Error::ClassInvariant(format!(
                    "atom {name} is the zero predictor"
                )));
            }
            if norm > 1.0 + 1e-12 {
                return Err(Error::ClassInvariant(format!(
                    "atom {name} has norm {norm}"
                )));
            }
            let neg = g.scale(-1.0);
            if !self.atoms.iter().any(|a| same(a, &neg)) {
                return Err(Error::ClassInvariant(format!(
                    "negation of atom {name} is missing"
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn atoms(&self) -> &[Arc<Predictor>] {
        &self.atoms
    }

    pub fn atom(&self, i: usize) -> &Predictor {
        &self.atoms[i]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    /// Dimension of the span on the support.
    pub fn rank(&self) -> usize {
        self.range.q.ncols()
    }

    pub(crate) fn range(&self) -> &AtomRange {
        &self.range
    }
}

fn same(a: &Predictor, b: &Predictor) -> bool {
    a.values()
        .iter()
        .zip(b.values())
        .all(|(x, y)| (x - y).abs() <= SAME_ATOM_TOL * (1.0 + x.abs().max(y.abs())))
}

fn unit_output(pop: &Population, j: usize, on: impl Fn(&[f64]) -> bool) -> Result<Predictor> {
    let d = pop.label_dim();
    Predictor::from_fn(pop, d, |x| {
        let mut v = vec![0.0; d];
        if on(x) {
            v[j] = 1.0;
        }
        v
    })
}
