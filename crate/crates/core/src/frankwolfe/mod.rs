//! Frank–Wolfe over the atomic-norm ball `K_τ = τ·conv(C)` for strongly
//! convex, smooth losses.

mod anchor;
mod loss;

use serde::{Deserialize, Serialize};

use crate::boosting::{atomic_norm, sq_query, SqChoice, SqOracle, WeakLearnerClass};
use crate::error::{Error, Result};
use crate::population::{
    inner, midpoint, AnchorCertificate, BoundName, PairStats, Population, Predictor, Tolerances,
};

pub use anchor::{risk_over_ktau, RiskInterval, KTAU_GAP_TARGET, KTAU_MAX_ITERS};
pub use loss::{
    builtin_losses, probe_loss, CertifiedLoss, Loss, LossProbeReport, LossSpec,
    RidgeSoftmaxCrossEntropy, SquaredLoss, DEFAULT_PROBES, LSE_HESSIAN_BOUND,
};

/// `R(f) = Σ_i w_i L(y_i, f(x_i))`.
pub fn risk(f: &Predictor, loss: &CertifiedLoss, pop: &Population) -> Result<f64> {
    f.check_shape(pop)?;
    Ok(pop
        .points()
        .iter()
        .zip(f.rows())
        .map(|(pt, p)| pt.w * loss.loss().value(&pt.y, p))
        .sum())
}

/// The field `x_i ↦ ∇_p L(y_i, f(x_i))`.
pub fn gradient_field(f: &Predictor, loss: &CertifiedLoss, pop: &Population) -> Result<Predictor> {
    f.check_shape(pop)?;
    let d = f.dim();
    let mut out = vec![0.0; f.values().len()];
    for ((pt, p), o) in pop
        .points()
        .iter()
        .zip(f.rows())
        .zip(out.chunks_exact_mut(d))
    {
        loss.loss().gradient(&pt.y, p, o);
    }
    Predictor::from_flat(d, out)
}

/// `G(f) = sup_{z ∈ K_τ} E⟨∇L(y, f), f − z⟩ = E⟨∇, f⟩ + τ · max_{c ∈ C} E⟨−∇, c⟩`.
pub fn fw_gap(
    f: &Predictor,
    class: &WeakLearnerClass,
    tau: f64,
    loss: &CertifiedLoss,
    pop: &Population,
) -> Result<f64> {
    let grad = gradient_field(f, loss, pop)?;
    gap_from_gradient(f, &grad, class, tau, pop)
}

fn gap_from_gradient(
    f: &Predictor,
    grad: &Predictor,
    class: &WeakLearnerClass,
    tau: f64,
    pop: &Population,
) -> Result<f64> {
    let neg = grad.scale(-1.0);
    let best = class
        .atoms()
        .iter()
        .map(|c| inner(&neg, c, pop))
        .collect::<Result<Vec<_>>>()?;
    let m = best.into_iter().fold(f64::NEG_INFINITY, f64::max);
    Ok(inner(grad, f, pop)? + tau * m)
}

/// The linear minimization step: an atom maximizing `E⟨−∇, s⟩` up to `ε_t`.
pub fn fw_linear_oracle(
    oracle: &SqOracle,
    grad: &Predictor,
    t: usize,
    class: &WeakLearnerClass,
    pop: &Population,
) -> Result<SqChoice> {
    sq_query(oracle, &grad.scale(-1.0), t, class, pop)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FwStep {
    pub t: usize,
    pub atom: usize,
    pub corr: f64,
    pub max_corr: f64,
    pub eps: f64,
    /// `‖s_t‖_A`.
    pub atom_norm: f64,
    pub alpha: f64,
    pub risk: f64,
    /// `G(f_{t−1})`.
    pub gap_prev: f64,
    /// `‖f_t‖_A`, when tracked.
    pub atomic_norm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FwTrace {
    pub k: usize,
    pub tau: f64,
    pub mu: f64,
    pub smoothness: f64,
    pub risk0: f64,
    pub steps: Vec<FwStep>,
}

impl FwTrace {
    pub fn eps_sum(&self) -> f64 {
        self.steps.iter().map(|s| s.eps).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FwOptions {
    /// Solve the atomic-norm LP at every iterate.
    pub track_atomic_norm: bool,
}

impl Default for FwOptions {
    fn default() -> Self {
        FwOptions {
            track_atomic_norm: true,
        }
    }
}

pub fn frank_wolfe(
    class: &WeakLearnerClass,
    pop: &Population,
    tau: f64,
    k: usize,
    loss: &CertifiedLoss,
    oracle: &SqOracle,
    options: FwOptions,
) -> Result<(Predictor, FwTrace)> {
    if !(tau >= 0.0 && tau.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "tau must be finite and non-negative, got {tau}"
        )));
    }
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if loss.dim() != pop.label_dim() {
        return Err(Error::ShapeMismatch {
            what: "loss dimension",
            expected: pop.label_dim(),
            got: loss.dim(),
        });
    }
    let mut norms: Vec<Option<f64>> = vec![None; class.len()];
    let mut f = Predictor::zeros(pop.len(), pop.label_dim());
    let risk0 = risk(&f, loss, pop)?;
    let mut steps = Vec::with_capacity(k);
    for t in 1..=k {
        let grad = gradient_field(&f, loss, pop)?;
        let gap_prev = gap_from_gradient(&f, &grad, class, tau, pop)?;
        let choice = fw_linear_oracle(oracle, &grad, t, class, pop)?;
        let s = class.atom(choice.atom);
        let atom_norm = match norms[choice.atom] {
            Some(v) => v,
            None => {
                let v = atomic_norm(s, class, pop)?;
                norms[choice.atom] = Some(v);
                v
            }
        };
        let alpha = 2.0 / (t as f64 + 1.0);
        let g = s.scale(tau / atom_norm);
        f = f.scale(1.0 - alpha).add_scaled(alpha, &g)?;
        let atomic = if options.track_atomic_norm {
            Some(atomic_norm(&f, class, pop)?)
        } else {
            None
        };
        steps.push(FwStep {
            t,
            atom: choice.atom,
            corr: choice.corr,
            max_corr: choice.max_corr,
            eps: choice.eps,
            atom_norm,
            alpha,
            risk: risk(&f, loss, pop)?,
            gap_prev,
            atomic_norm: atomic,
        });
    }
    Ok((
        f,
        FwTrace {
            k,
            tau,
            mu: loss.mu(),
            smoothness: loss.smoothness(),
            risk0,
            steps,
        },
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FwRateRow {
    pub t: usize,
    /// `R(f_t) − R(K_τ)` against the certified lower end of `R(K_τ)`.
    pub excess: f64,
    /// `8Lτ²/(t+1) + (2τ/(t+1)) Σ_{j≤t} ε_j`.
    pub rate_rhs: f64,
    /// `R(f_{t−1}) − R(f_t)`.
    pub progress: f64,
    /// `α_t (G(f_{t−1}) − τ ε_t) − 2Lτ²α_t²`.
    pub step_rhs: f64,
    /// `α_t (E_{t−1} − τ ε_t) − 2Lτ²α_t²`.
    pub recurrence_rhs: f64,
    /// `G(f_{t−1})`.
    pub gap_prev: f64,
    /// `E_{t−1} = R(f_{t−1}) − R(K_τ)`, which the gap must dominate.
    pub dual_rhs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FwRateReport {
    pub anchor: RiskInterval,
    pub rows: Vec<FwRateRow>,
    pub max_rate_violation: f64,
    pub max_step_violation: f64,
    pub max_recurrence_violation: f64,
    pub max_dual_violation: f64,
    /// `max_t ‖f_t‖_A − τ` over tracked iterates.
    pub max_feasibility_violation: f64,
    pub rate_passed: bool,
    pub step_passed: bool,
    pub recurrence_passed: bool,
    pub dual_passed: bool,
    pub feasibility_passed: bool,
}

impl FwRateReport {
    pub fn passed(&self) -> bool {
        self.rate_passed
            && self.step_passed
            && self.recurrence_passed
            && self.dual_passed
            && self.feasibility_passed
    }
}

pub fn certify_fw_rate(trace: &FwTrace, anchor: &RiskInterval) -> FwRateReport {
    let (tau, lip) = (trace.tau, trace.smoothness);
    let mut prev = trace.risk0;
    let mut eps_sum = 0.0;
    let mut rows = Vec::with_capacity(trace.steps.len());
    let mut feas: f64 = f64::NEG_INFINITY;
    for s in &trace.steps {
        eps_sum += s.eps;
        let a = s.alpha;
        let curvature = 2.0 * lip * tau * tau * a * a;
        rows.push(FwRateRow {
            t: s.t,
            excess: s.risk - anchor.lower,
            rate_rhs: 8.0 * lip * tau * tau / (s.t as f64 + 1.0)
                + 2.0 * tau / (s.t as f64 + 1.0) * eps_sum,
            progress: prev - s.risk,
            step_rhs: a * (s.gap_prev - tau * s.eps) - curvature,
            recurrence_rhs: a * (prev - anchor.lower - tau * s.eps) - curvature,
            gap_prev: s.gap_prev,
            dual_rhs: prev - anchor.lower,
        });
        if let Some(n) = s.atomic_norm {
            feas = feas.max(n - tau);
        }
        prev = s.risk;
    }
    let worst =
        |f: &dyn Fn(&FwRateRow) -> f64| rows.iter().map(f).fold(f64::NEG_INFINITY, f64::max);
    let max_rate_violation = worst(&|r| r.excess - r.rate_rhs);
    let max_step_violation = worst(&|r| r.step_rhs - r.progress);
    let max_recurrence_violation = worst(&|r| r.recurrence_rhs - r.progress);
    let max_dual_violation = worst(&|r| r.dual_rhs - r.gap_prev);
    FwRateReport {
        anchor: anchor.clone(),
        max_rate_violation,
        max_step_violation,
        max_recurrence_violation,
        max_dual_violation,
        max_feasibility_violation: feas,
        rate_passed: max_rate_violation <= 1e-8,
        step_passed: max_step_violation <= 1e-9,
        recurrence_passed: max_recurrence_violation <= 1e-9,
        dual_passed: max_dual_violation <= 1e-9,
        feasibility_passed: !(feas > 1e-8),
        rows,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FwAgreementReport {
    /// `D ≤ (4/μ)(R(f₁) − R(K_τ)) + (4/μ)(R(f₂) − R(K_τ))`; risk fields hold loss risks.
    pub anchor: AnchorCertificate,
    /// `D ≤ 64Lτ²/(μ(k+1)) + (8τ/(μ(k+1)))(Σε + Σε')`.
    pub rate: AnchorCertificate,
    /// For the squared loss: difference between this anchor bound and the
    /// squared-loss midpoint corollary at the same anchor risk.
    pub squared_cross_check: Option<f64>,
}

impl FwAgreementReport {
    pub fn passed(&self) -> bool {
        self.anchor.passed && self.rate.passed
    }
}

#[allow(clippy::too_many_arguments)]
pub fn certify_fw_agreement(
    f1: &Predictor,
    trace1: &FwTrace,
    f2: &Predictor,
    trace2: &FwTrace,
    loss: &CertifiedLoss,
    anchor: &RiskInterval,
    pop: &Population,
    tol: Tolerances,
) -> Result<FwAgreementReport> {
    if trace1.k != trace2.k || trace1.tau != trace2.tau {
        return Err(Error::InvalidArgument("runs differ in k or tau".into()));
    }
    let (k, tau, mu, lip) = (trace1.k as f64, trace1.tau, loss.mu(), loss.smoothness());
    let mid = midpoint(f1, f2)?;
    let stats = PairStats {
        mse1: risk(f1, loss, pop)?,
        mse2: risk(f2, loss, pop)?,
        mse_mid: risk(&mid, loss, pop)?,
        disagreement: crate::population::disagreement(f1, f2, pop)?,
    };
    let r = anchor.lower;
    let anchor_rhs = (4.0 / mu) * (stats.mse1 - r) + (4.0 / mu) * (stats.mse2 - r);
    let anchor_cert =
        AnchorCertificate::for_upper_bound(BoundName::StronglyConvexAnchor, stats, anchor_rhs, tol);
    let rate_rhs = 64.0 * lip * tau * tau / (mu * (k + 1.0))
        + 8.0 * tau / (mu * (k + 1.0)) * (trace1.eps_sum() + trace2.eps_sum());
    let rate = AnchorCertificate::for_upper_bound(
        BoundName::FrankWolfeAgreementRate,
        stats,
        rate_rhs,
        tol,
    );
    let squared_cross_check = if loss.is_squared() {
        let corollary = crate::population::check_anchor_bound(f1, f2, r, pop, tol)?;
        Some(anchor_rhs - (corollary.slack + corollary.disagreement))
    } else {
        None
    };
    Ok(FwAgreementReport {
        anchor: AnchorCertificate {
            bound_name: BoundName::FrankWolfeAgreementAnchor,
            ..anchor_cert
        },
        rate,
        squared_cross_check,
    })
}

/// `(4/μ)(L(y,p₁) + L(y,p₂) − 2L(y,p̄)) − ‖p₁ − p₂‖²` at every support point.
pub fn pointwise_anchor_slacks(
    f1: &Predictor,
    f2: &Predictor,
    loss: &CertifiedLoss,
    pop: &Population,
) -> Result<Vec<f64>> {
    f1.check_shape(pop)?;
    f1.check_same_shape(f2)?;
    let mid = midpoint(f1, f2)?;
    let l = loss.loss();
    Ok(pop
        .points()
        .iter()
        .zip(f1.rows().zip(f2.rows()).zip(mid.rows()))
        .map(|(pt, ((a, b), m))| {
            let d2: f64 = a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum();
            (4.0 / l.mu()) * (l.value(&pt.y, a) + l.value(&pt.y, b) - 2.0 * l.value(&pt.y, m)) - d2
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boosting::OracleMode;
    use crate::population::Point;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn setup(seed: u64, n: usize, atoms: usize, d: usize) -> (Population, WeakLearnerClass) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pop = Population::new(
            (0..n)
                .map(|i| Point {
                    x: vec![i as f64],
                    y: (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                    w: 1.0 / n as f64,
                })
                .collect(),
        )
        .unwrap();
        let base = (0..atoms)
            .map(|_| {
                Predictor::from_flat(d, (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect())
                    .unwrap()
            })
            .collect();
        (
            pop.clone(),
            WeakLearnerClass::new(base, None, &pop).unwrap(),
        )
    }

    fn squared(d: usize) -> CertifiedLoss {
        CertifiedLoss::new(Arc::new(SquaredLoss), d, 0).unwrap()
    }

    #[test]
    fn zero_radius_stays_at_zero() {
        let (pop, class) = setup(1, 8, 3, 1);
        let (f, tr) = frank_wolfe(
            &class,
            &pop,
            0.0,
            5,
            &squared(1),
            &SqOracle::exact(),
            FwOptions::default(),
        )
        .unwrap();
        assert!(f.values().iter().all(|&v| v == 0.0));
        assert!(tr.steps.iter().all(|s| s.risk == tr.risk0));
    }

    #[test]
    fn step_sizes_are_exact() {
        let (pop, class) = setup(2, 8, 3, 1);
        let (_, tr) = frank_wolfe(
            &class,
            &pop,
            1.0,
            6,
            &squared(1),
            &SqOracle::exact(),
            FwOptions::default(),
        )
        .unwrap();
        for s in &tr.steps {
            assert_eq!(s.alpha, 2.0 / (s.t as f64 + 1.0));
        }
    }

    #[test]
    fn zero_gradient_gives_zero_gap() {
        let (pop, class) = setup(3, 6, 2, 1);
        let y = pop.labels();
        assert!(fw_gap(&y, &class, 2.0, &squared(1), &pop).unwrap().abs() < 1e-15);
    }

    #[test]
    fn gap_matches_grid_over_three_atoms() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pop = Population::uniform(
            (0..5)
                .map(|i| (vec![i as f64], vec![rng.gen_range(-1.0..1.0)]))
                .collect(),
        )
        .unwrap();
        // one atom already contains its negation, so the class has three atoms
        let g = Predictor::scalar((0..5).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let class = WeakLearnerClass::new(
            vec![
                g.clone(),
                g.scale(-1.0),
                Predictor::scalar(vec![0.3, 0.1, -0.2, 0.5, 0.0]),
            ],
            None,
            &pop,
        )
        .unwrap();
        let f = Predictor::scalar((0..5).map(|_| rng.gen_range(-0.5..0.5)).collect());
        let loss = squared(1);
        let tau = 0.8;
        let grad = gradient_field(&f, &loss, &pop).unwrap();
        let gf = inner(&grad, &f, &pop).unwrap();
        let mut best = f64::NEG_INFINITY;
        let steps = 60;
        for i in 0..=steps {
            for j in 0..=(steps - i) {
                for l in 0..=(steps - i - j) {
                    let m = steps - i - j - l;
                    let c = [i, j, l, m].map(|v| tau * v as f64 / steps as f64);
                    let z = Predictor::linear_combination(
                        &[class.atom(0), class.atom(1), class.atom(2), class.atom(3)],
                        &c,
                    )
                    .unwrap();
                    best = best.max(gf - inner(&grad, &z, &pop).unwrap());
                }
            }
        }
        let gap = fw_gap(&f, &class, tau, &loss, &pop).unwrap();
        assert!((gap - best).abs() < 1e-6, "{gap} {best}");
    }

    #[test]
    fn orthonormal_class_containing_label() {
        let n = 4;
        let mut y = vec![0.0; n];
        y[0] = 1.5;
        y[1] = -0.5;
        let pop =
            Population::uniform((0..n).map(|i| (vec![i as f64], vec![y[i]])).collect()).unwrap();
        let labels = pop.labels();
        let ynorm = crate::population::weighted_norm(&labels, &pop).unwrap();
        let mut e2 = vec![0.0; n];
        e2[2] = 2.0;
        let class = WeakLearnerClass::new(
            vec![labels.scale(1.0 / ynorm), Predictor::scalar(e2)],
            None,
            &pop,
        )
        .unwrap();
        let loss = squared(1);
        let anchor = risk_over_ktau(&class, ynorm, &loss, &pop).unwrap();
        assert!(anchor.upper < 1e-10);
        let (_, tr) = frank_wolfe(
            &class,
            &pop,
            ynorm,
            40,
            &loss,
            &SqOracle::exact(),
            FwOptions::default(),
        )
        .unwrap();
        let rep = certify_fw_rate(&tr, &anchor);
        assert!(rep.passed(), "{rep:?}");
    }

    #[test]
    fn random_runs_certify() {
        for seed in 0..6 {
            let d = 1 + (seed % 3) as usize;
            let (pop, class) = setup(seed, 24, 6, d);
            for (loss, tau) in [
                (squared(d), 0.7),
                (
                    CertifiedLoss::new(Arc::new(RidgeSoftmaxCrossEntropy { mu0: 0.2 }), d, 0)
                        .unwrap(),
                    1.5,
                ),
            ] {
                let anchor = risk_over_ktau(&class, tau, &loss, &pop).unwrap();
                assert!(anchor.converged, "{anchor:?}");
                let o1 = SqOracle::new(OracleMode::AdversarialFloor, vec![0.01], seed).unwrap();
                let o2 = SqOracle::new(OracleMode::RandomFeasible, vec![0.01], seed + 1).unwrap();
                let (f1, t1) =
                    frank_wolfe(&class, &pop, tau, 30, &loss, &o1, FwOptions::default()).unwrap();
                let (f2, t2) =
                    frank_wolfe(&class, &pop, tau, 30, &loss, &o2, FwOptions::default()).unwrap();
                for t in [&t1, &t2] {
                    let rep = certify_fw_rate(t, &anchor);
                    assert!(rep.passed(), "seed {seed}: {rep:?}");
                }
                let agree = certify_fw_agreement(
                    &f1,
                    &t1,
                    &f2,
                    &t2,
                    &loss,
                    &anchor,
                    &pop,
                    Tolerances::default(),
                )
                .unwrap();
                assert!(agree.passed());
                if let Some(diff) = agree.squared_cross_check {
                    assert!(diff.abs() < 1e-12);
                }
                assert!(pointwise_anchor_slacks(&f1, &f2, &loss, &pop)
                    .unwrap()
                    .iter()
                    .all(|&s| s >= -1e-9));
            }
        }
    }

    #[test]
    fn identical_runs_agree() {
        let (pop, class) = setup(9, 10, 4, 1);
        let loss = squared(1);
        let anchor = risk_over_ktau(&class, 1.0, &loss, &pop).unwrap();
        let (f1, t1) = frank_wolfe(
            &class,
            &pop,
            1.0,
            10,
            &loss,
            &SqOracle::exact(),
            FwOptions::default(),
        )
        .unwrap();
        let (f2, t2) = frank_wolfe(
            &class,
            &pop,
            1.0,
            10,
            &loss,
            &SqOracle::exact(),
            FwOptions::default(),
        )
        .unwrap();
        let rep = certify_fw_agreement(
            &f1,
            &t1,
            &f2,
            &t2,
            &loss,
            &anchor,
            &pop,
            Tolerances::default(),
        )
        .unwrap();
        assert_eq!(rep.anchor.disagreement, 0.0);
    }
}
