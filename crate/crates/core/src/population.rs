//! Finite-support populations, predictors, and the exact population
//! arithmetic every other module is built on.
//!
//! All expectations are weighted sums over the support, so norms, risks,
//! and disagreements are computed exactly up to floating-point rounding.
//! Labels are vectors of dimension `d`; `d = 1` is the scalar setting.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Maximum deviation of the weight total from one accepted on input.
pub const WEIGHT_SUM_INPUT_TOL: f64 = 1e-9;
/// Deviation of the weight total from one guaranteed after construction.
pub const WEIGHT_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub w: f64,
}

#[derive(Debug, Deserialize)]
struct RawPopulation {
    points: Vec<Point>,
}

/// A finite weighted support of `(x, y)` records.
///
/// Points are keyed by index; duplicate `x` values with different labels are
/// how label noise is encoded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPopulation")]
pub struct Population {
    points: Vec<Point>,
    #[serde(skip)]
    feature_dim: usize,
    #[serde(skip)]
    label_dim: usize,
}

impl TryFrom<RawPopulation> for Population {
    type Error = Error;

    fn try_from(raw: RawPopulation) -> Result<Self> {
        Population::new(raw.points)
    }
}

impl Population {
    pub fn new(mut points: Vec<Point>) -> Result<Self> {
        let first = points.first().ok_or_else(|| {
            Error::InvalidPopulation("support must contain at least one point".into())
        })?;
        let feature_dim = first.x.len();
        let label_dim = first.y.len();
        if label_dim == 0 {
            return Err(Error::InvalidPopulation(
                "label dimension must be at least 1".into(),
            ));
        }
        let mut total = 0.0;
        for (i, p) in points.iter().enumerate() {
            if p.x.len() != feature_dim {
                return Err(Error::InvalidPopulation(format!(
                    "point {i}: feature dimension {} differs from {feature_dim}",
                    p.x.len()
                )));
            }
            if p.y.len() != label_dim {
                return Err(Error::InvalidPopulation(format!(
                    "point {i}: label dimension {} differs from {label_dim}",
                    p.y.len()
                )));
            }
            if !(p.w.is_finite() && p.w > 0.0) {
                return Err(Error::InvalidPopulation(format!(
                    "point {i}: weight {} is not positive",
                    p.w
                )));
            }
            if p.x.iter().chain(&p.y).any(|v| !v.is_finite()) {
                return Err(Error::InvalidPopulation(format!(
                    "point {i}: non-finite coordinate"
                )));
            }
            total += p.w;
        }
        if (total - 1.0).abs() > WEIGHT_SUM_INPUT_TOL {
            return Err(Error::InvalidPopulation(format!(
                "weights sum to {total}, not 1"
            )));
        }
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            for p in &mut points {
                p.w /= total;
            }
        }
        Ok(Population {
            points,
            feature_dim,
            label_dim,
        })
    }

    /// Uniform weights over the given records.
    pub fn uniform(records: Vec<(Vec<f64>, Vec<f64>)>) -> Result<Self> {
        let n = records.len();
        if n == 0 {
            return Err(Error::InvalidPopulation(
                "support must contain at least one point".into(),
            ));
        }
        let w = 1.0 / n as f64;
        Population::new(
            records
                .into_iter()
                .map(|(x, y)| Point { x, y, w })
                .collect(),
        )
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("population serializes")
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn label_dim(&self) -> usize {
        self.label_dim
    }

    pub fn weights(&self) -> impl Iterator<Item = f64> + '_ {
        self.points.iter().map(|p| p.w)
    }

    /// The labels viewed as a predictor.
    pub fn labels(&self) -> Predictor {
        Predictor {
            dim: self.label_dim,
            values: self
                .points
                .iter()
                .flat_map(|p| p.y.iter().copied())
                .collect(),
        }
    }

    /// Same records with labels replaced.
    pub fn with_labels(&self, labels: &Predictor) -> Result<Population> {
        labels.check_shape(self)?;
        let points = self
            .points
            .iter()
            .zip(labels.rows())
            .map(|(p, y)| Point {
                x: p.x.clone(),
                y: y.to_vec(),
                w: p.w,
            })
            .collect();
        Population::new(points)
    }
}

/// Predictions at every support point: `N` rows of dimension `d`, stored flat.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictor {
    dim: usize,
    values: Vec<f64>,
}

impl Serialize for Predictor {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let rows: Vec<&[f64]> = self.rows().collect();
        rows.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Predictor {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        Predictor::from_rows(rows).map_err(serde::de::Error::custom)
    }
}

impl Predictor {
    pub fn from_flat(dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument(
                "predictor dimension must be at least 1".into(),
            ));
        }
        if !values.len().is_multiple_of(dim) {
            return Err(Error::ShapeMismatch {
                what: "flat predictor length",
                expected: dim,
                got: values.len(),
            });
        }
        Ok(Predictor { dim, values })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let dim = rows.first().map(Vec::len).unwrap_or(1);
        let mut values = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            check_dim("predictor row dimension", dim, r.len())?;
            values.extend(r);
        }
        Predictor::from_flat(dim, values)
    }

    /// Scalar predictor from one value per support point.
    pub fn scalar(values: Vec<f64>) -> Self {
        Predictor { dim: 1, values }
    }

    pub fn zeros(n: usize, dim: usize) -> Self {
        Predictor {
            dim,
            values: vec![0.0; n * dim],
        }
    }

    pub fn constant(n: usize, value: &[f64]) -> Self {
        Predictor {
            dim: value.len(),
            values: value
                .iter()
                .copied()
                .cycle()
                .take(n * value.len())
                .collect(),
        }
    }

    /// Compiles a function of `x` into a predictor over the support.
    pub fn from_fn(
        pop: &Population,
        dim: usize,
        mut f: impl FnMut(&[f64]) -> Vec<f64>,
    ) -> Result<Self> {
        let mut values = Vec::with_capacity(pop.len() * dim);
        for p in pop.points() {
            let v = f(&p.x);
            check_dim("compiled prediction dimension", dim, v.len())?;
            values.extend(v);
        }
        Predictor::from_flat(dim, values)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.values.chunks_exact(self.dim)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn check_shape(&self, pop: &Population) -> Result<()> {
        check_dim("predictor dimension", pop.label_dim(), self.dim)?;
        check_dim("predictor length", pop.len(), self.len())
    }

    pub fn check_same_shape(&self, other: &Predictor) -> Result<()> {
        check_dim("predictor dimension", self.dim, other.dim)?;
        check_dim("predictor length", self.len(), other.len())
    }

    pub fn scale(&self, c: f64) -> Predictor {
        Predictor {
            dim: self.dim,
            values: self.values.iter().map(|v| c * v).collect(),
        }
    }

    /// `self + c * other`.
    pub fn add_scaled(&self, c: f64, other: &Predictor) -> Result<Predictor> {
        self.check_same_shape(other)?;
        Ok(Predictor {
            dim: self.dim,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a + c * b)
                .collect(),
        })
    }

    pub fn sub(&self, other: &Predictor) -> Result<Predictor> {
        self.add_scaled(-1.0, other)
    }

    /// `Σ_j coeffs[j] * basis[j]`.
    pub fn linear_combination(basis: &[&Predictor], coeffs: &[f64]) -> Result<Predictor> {
        let first = basis.first().ok_or(Error::EmptyBasis)?;
        check_dim("coefficient count", basis.len(), coeffs.len())?;
        let mut values = vec![0.0; first.values.len()];
        for (b, &c) in basis.iter().zip(coeffs) {
            b.check_same_shape(first)?;
            for (v, bv) in values.iter_mut().zip(&b.values) {
                *v += c * bv;
            }
        }
        Ok(Predictor {
            dim: first.dim,
            values,
        })
    }
}

/// `E[<f(x), g(x)>]` under the population weights.
pub fn inner(f: &Predictor, g: &Predictor, pop: &Population) -> Result<f64> {
    f.check_shape(pop)?;
    g.check_shape(pop)?;
    Ok(inner_unchecked(f, g, pop))
}

pub(crate) fn inner_unchecked(f: &Predictor, g: &Predictor, pop: &Population) -> f64 {
    f.rows()
        .zip(g.rows())
        .zip(pop.weights())
        .map(|((a, b), w)| w * a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>())
        .sum()
}

fn weighted_sq_dist(a: &Predictor, b: &Predictor, pop: &Population) -> f64 {
    a.rows()
        .zip(b.rows())
        .zip(pop.weights())
        .map(|((u, v), w)| w * u.iter().zip(v).map(|(x, y)| (x - y) * (x - y)).sum::<f64>())
        .sum()
}

/// `(E ||f(x)||²)^{1/2}`.
pub fn weighted_norm(f: &Predictor, pop: &Population) -> Result<f64> {
    f.check_shape(pop)?;
    Ok(inner_unchecked(f, f, pop).sqrt())
}

/// `E ||y - f(x)||²`.
pub fn mse(f: &Predictor, pop: &Population) -> Result<f64> {
    f.check_shape(pop)?;
    Ok(pop
        .points()
        .iter()
        .zip(f.rows())
        .map(|(p, r)| {
            p.w * p
                .y
                .iter()
                .zip(r)
                .map(|(y, v)| (y - v) * (y - v))
                .sum::<f64>()
        })
        .sum())
}

/// `E ||f1(x) - f2(x)||²`.
pub fn disagreement(f1: &Predictor, f2: &Predictor, pop: &Population) -> Result<f64> {
    f1.check_shape(pop)?;
    f2.check_shape(pop)?;
    Ok(weighted_sq_dist(f1, f2, pop))
}

/// Pointwise average `(f1 + f2) / 2`.
pub fn midpoint(f1: &Predictor, f2: &Predictor) -> Result<Predictor> {
    f1.check_same_shape(f2)?;
    Ok(Predictor {
        dim: f1.dim,
        values: f1
            .values
            .iter()
            .zip(&f2.values)
            .map(|(a, b)| 0.5 * (a + b))
            .collect(),
    })
}

/// Which inequality (or identity) a certificate records.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundName {
    MidpointIdentity,
    MidpointAnchor,
    LocalLearningCurve,
    StronglyConvexAnchor,
    StackingPointwise,
    BoostingAgreementAnchor,
    BoostingAgreementRate,
    FrankWolfeAgreementAnchor,
    FrankWolfeAgreementRate,
}

/// Certificate tolerances: `absolute` for inequalities, `relative` for identities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Tolerances {
    pub absolute: f64,
    pub relative: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            absolute: 1e-9,
            relative: 1e-10,
        }
    }
}

/// Outcome of checking one anchoring statement on one pair of predictors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorCertificate {
    pub bound_name: BoundName,
    pub mse1: f64,
    pub mse2: f64,
    pub mse_mid: f64,
    pub disagreement: f64,
    /// Right-hand side minus left-hand side.
    pub slack: f64,
    pub passed: bool,
}

impl AnchorCertificate {
    /// Certificate for an inequality `disagreement <= rhs`.
    pub fn for_upper_bound(
        bound_name: BoundName,
        stats: PairStats,
        rhs: f64,
        tol: Tolerances,
    ) -> AnchorCertificate {
        let slack = rhs - stats.disagreement;
        AnchorCertificate {
            bound_name,
            mse1: stats.mse1,
            mse2: stats.mse2,
            mse_mid: stats.mse_mid,
            disagreement: stats.disagreement,
            slack,
            passed: slack >= -tol.absolute,
        }
    }
}

/// The four population quantities every pairwise certificate needs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairStats {
    pub mse1: f64,
    pub mse2: f64,
    pub mse_mid: f64,
    pub disagreement: f64,
}

impl PairStats {
    pub fn compute(f1: &Predictor, f2: &Predictor, pop: &Population) -> Result<PairStats> {
        let mid = midpoint(f1, f2)?;
        Ok(PairStats {
            mse1: mse(f1, pop)?,
            mse2: mse(f2, pop)?,
            mse_mid: mse(&mid, pop)?,
            disagreement: disagreement(f1, f2, pop)?,
        })
    }
}

/// `D(f1,f2) = 2(MSE(f1) + MSE(f2) - 2 MSE(f̄))`, checked as an equality.
pub fn check_midpoint_identity(
    f1: &Predictor,
    f2: &Predictor,
    pop: &Population,
    tol: Tolerances,
) -> Result<AnchorCertificate> {
    let s = PairStats::compute(f1, f2, pop)?;
    let rhs = 2.0 * (s.mse1 + s.mse2 - 2.0 * s.mse_mid);
    let slack = rhs - s.disagreement;
    Ok(AnchorCertificate {
        bound_name: BoundName::MidpointIdentity,
        mse1: s.mse1,
        mse2: s.mse2,
        mse_mid: s.mse_mid,
        disagreement: s.disagreement,
        slack,
        passed: slack.abs() <= tol.relative * (1.0 + s.disagreement.abs()),
    })
}

/// `D(f1,f2) <= 2(MSE(f1) - R(H)) + 2(MSE(f2) - R(H))` for a class `H`
/// that the caller guarantees contains the midpoint.
pub fn check_anchor_bound(
    f1: &Predictor,
    f2: &Predictor,
    risk_of_anchor_class: f64,
    pop: &Population,
    tol: Tolerances,
) -> Result<AnchorCertificate> {
    let s = PairStats::compute(f1, f2, pop)?;
    let rhs = 2.0 * (s.mse1 - risk_of_anchor_class) + 2.0 * (s.mse2 - risk_of_anchor_class);
    Ok(AnchorCertificate::for_upper_bound(
        BoundName::MidpointAnchor,
        s,
        rhs,
        tol,
    ))
}

/// `D(f1,f2) <= 4(R(F_n) - R(F_2n) + eps)` for two eps-suboptimal members of
/// a midpoint-closed hierarchy.
pub fn check_local_curve_bound(
    f1: &Predictor,
    f2: &Predictor,
    risk_n: f64,
    risk_2n: f64,
    eps: f64,
    pop: &Population,
    tol: Tolerances,
) -> Result<AnchorCertificate> {
    let s = PairStats::compute(f1, f2, pop)?;
    let rhs = 4.0 * (risk_n - risk_2n + eps);
    Ok(AnchorCertificate::for_upper_bound(
        BoundName::LocalLearningCurve,
        s,
        rhs,
        tol,
    ))
}
