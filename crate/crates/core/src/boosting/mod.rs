//! Gradient boosting over a finite symmetric weak-learner class.
//!
//! Each round queries an ε-approximate statistical-query oracle for an atom
//! correlated with the residual and takes the exact line-search step.
//! Correlations are population expectations `Σ_i w_i ⟨r(x_i), g(x_i)⟩`.

mod atomic;
mod class;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::population::{
    check_anchor_bound, inner, mse, AnchorCertificate, BoundName, PairStats, Population, Predictor,
    Tolerances,
};
use crate::seed::rng_for;
use crate::stacking::ols_span;

pub use atomic::{atomic_norm, atomic_representation, AtomicRepresentation, SPAN_TOL};
pub use class::WeakLearnerClass;

/// Tolerance for the per-step inequalities certified over a trace.
pub const STEP_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleMode {
    /// The best atom, ties to the lowest index.
    Exact,
    /// The least-correlated atom that is still within `ε_t` of the best.
    AdversarialFloor,
    /// A uniform draw among atoms within `ε_t` of the best.
    RandomFeasible,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SqOracle {
    pub mode: OracleMode,
    /// `ε_t` for `t = 1, 2, …`; the last entry repeats, an empty schedule means zero.
    #[serde(default)]
    pub eps_schedule: Vec<f64>,
    #[serde(default)]
    pub seed: u64,
}

impl SqOracle {
    pub fn exact() -> SqOracle {
        SqOracle {
            mode: OracleMode::Exact,
            eps_schedule: Vec::new(),
            seed: 0,
        }
    }

    pub fn new(mode: OracleMode, eps_schedule: Vec<f64>, seed: u64) -> Result<SqOracle> {
        if eps_schedule.iter().any(|e| !(e.is_finite() && *e >= 0.0)) {
            return Err(Error::InvalidArgument(
                "oracle errors must be finite and non-negative".into(),
            ));
        }
        Ok(SqOracle {
            mode,
            eps_schedule,
            seed,
        })
    }

    pub fn eps(&self, t: usize) -> f64 {
        match self.eps_schedule.len() {
            0 => 0.0,
            n => self.eps_schedule[(t.max(1) - 1).min(n - 1)],
        }
    }
}

/// Correlations `E⟨r, g⟩` with every atom.
pub fn correlations(r: &Predictor, class: &WeakLearnerClass, pop: &Population) -> Result<Vec<f64>> {
    class.atoms().iter().map(|g| inner(r, g, pop)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SqChoice {
    pub atom: usize,
    pub corr: f64,
    /// Brute-force maximum correlation over the class.
    pub max_corr: f64,
    pub eps: f64,
}

pub fn sq_query(
    oracle: &SqOracle,
    r: &Predictor,
    t: usize,
    class: &WeakLearnerClass,
    pop: &Population,
) -> Result<SqChoice> {
    if class.is_empty() {
        return Err(Error::EmptyBasis);
    }
    let corr = correlations(r, class, pop)?;
    let (best, max_corr) =
        corr.iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| {
                if v > bv {
                    (i, v)
                } else {
                    (bi, bv)
                }
            });
    let eps = oracle.eps(t);
    let floor = max_corr - eps;
    let atom = match oracle.mode {
        OracleMode::Exact => best,
        OracleMode::AdversarialFloor => (0..corr.len())
            .filter(|&i| corr[i] >= floor)
            .fold(best, |a, i| if corr[i] < corr[a] { i } else { a }),
        OracleMode::RandomFeasible => {
            let feasible: Vec<usize> = (0..corr.len()).filter(|&i| corr[i] >= floor).collect();
            feasible[rng_for(oracle.seed, &[t as u64]).gen_range(0..feasible.len())]
        }
    };
    Ok(SqChoice {
        atom,
        corr: corr[atom],
        max_corr,
        eps,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostStep {
    pub t: usize,
    pub atom: usize,
    pub corr: f64,
    pub max_corr: f64,
    pub eps: f64,
    pub alpha: f64,
    /// `‖g_t‖²`.
    pub norm2: f64,
    pub mse: f64,
    /// `MSE(f_{t−1}) − MSE(f_t)`.
    pub progress: f64,
    /// `corr²`.
    pub progress_floor: f64,
    /// `|progress − corr²/‖g_t‖²|`.
    pub progress_identity_error: f64,
    /// `Σ_s |α_s|` up to `t − 1`, an upper bound on `‖f_{t−1}‖_A`.
    pub coef_l1_prev: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostTrace {
    pub k: usize,
    pub mse0: f64,
    /// `R(V(C))`, the least-squares risk over the span of the class.
    pub anchor_risk: f64,
    pub steps: Vec<BoostStep>,
    /// Final weights on the class atoms.
    pub coefficients: Vec<f64>,
}

impl BoostTrace {
    /// `E_t = MSE(f_t) − R(V(C))` for `t = 0..=k`.
    pub fn excess(&self) -> Vec<f64> {
        std::iter::once(self.mse0)
            .chain(self.steps.iter().map(|s| s.mse))
            .map(|m| m - self.anchor_risk)
            .collect()
    }

    pub fn eps_sum_sq(&self) -> f64 {
        self.steps.iter().map(|s| s.eps * s.eps).sum()
    }

    /// Largest violation of the step invariants: exact progress identity,
    /// progress at least `corr²`, non-increasing risk, oracle feasibility.
    pub fn max_step_violation(&self) -> f64 {
        let mut prev = self.mse0;
        let mut worst: f64 = 0.0;
        for s in &self.steps {
            worst = worst.max(s.progress_identity_error - 1e-10 * (1.0 + s.progress.abs()));
            worst = worst.max(s.progress_floor - s.progress - 1e-10);
            worst = worst.max(s.mse - prev - 1e-12 * (1.0 + prev));
            worst = worst.max(s.max_corr - s.eps - s.corr);
            prev = s.mse;
        }
        worst
    }
}

pub fn gradient_boost(
    class: &WeakLearnerClass,
    pop: &Population,
    k: usize,
    oracle: &SqOracle,
) -> Result<(Predictor, BoostTrace)> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    let anchor_risk = ols_span(class.atoms(), pop)?.risk;
    let y = pop.labels();
    let mut f = Predictor::zeros(pop.len(), pop.label_dim());
    let mut coefficients = vec![0.0; class.len()];
    let mse0 = mse(&f, pop)?;
    let mut prev = mse0;
    let mut l1 = 0.0;
    let mut steps = Vec::with_capacity(k);
    for t in 1..=k {
        let r = y.sub(&f)?;
        let choice = sq_query(oracle, &r, t, class, pop)?;
        let g = class.atom(choice.atom);
        let norm2 = inner(g, g, pop)?;
        if norm2 == 0.0 {
            return Err(Error::ClassInvariant(format!(
                "atom {} has zero norm",
                choice.atom
            )));
        }
        let alpha = choice.corr / norm2;
        f = f.add_scaled(alpha, g)?;
        coefficients[choice.atom] += alpha;
        let cur = mse(&f, pop)?;
        let progress = prev - cur;
        let expected = choice.corr * choice.corr / norm2;
        steps.push(BoostStep {
            t,
            atom: choice.atom,
            corr: choice.corr,
            max_corr: choice.max_corr,
            eps: choice.eps,
            alpha,
            norm2,
            mse: cur,
            progress,
            progress_floor: choice.corr * choice.corr,
            progress_identity_error: (progress - expected).abs(),
            coef_l1_prev: l1,
        });
        l1 += alpha.abs();
        prev = cur;
    }
    Ok((
        f,
        BoostTrace {
            k,
            mse0,
            anchor_risk,
            steps,
            coefficients,
        },
    ))
}

/// The least-squares fit over the span of the class and its atomic norm.
pub fn tau_star(class: &WeakLearnerClass, pop: &Population) -> Result<(Predictor, f64)> {
    let fit = ols_span(class.atoms(), pop)?;
    let tau = atomic_norm(&fit.compiled, class, pop)?;
    Ok((fit.compiled, tau))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbRateRow {
    pub t: usize,
    pub excess: f64,
    /// `8τ*²/t + Σ_{s≤t} ε_s²`.
    pub rate_rhs: f64,
    /// `E_{t−1} − E_t`.
    pub recurrence_lhs: f64,
    /// `((E_{t−1}/(2τ*) − ε_t)_+)²`.
    pub recurrence_rhs: f64,
    /// Exact maximum correlation at `f_{t−1}`.
    pub dual_lhs: f64,
    /// `E_{t−1}/(2τ*)`.
    pub dual_rhs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbRateReport {
    pub tau_star: f64,
    pub rows: Vec<GbRateRow>,
    pub max_rate_violation: f64,
    pub max_recurrence_violation: f64,
    pub max_dual_violation: f64,
    pub rate_passed: bool,
    pub recurrence_passed: bool,
    pub dual_passed: bool,
}

pub fn certify_gb_rate(trace: &BoostTrace, tau_star: f64) -> GbRateReport {
    let e = trace.excess();
    let mut rows = Vec::with_capacity(trace.steps.len());
    let mut eps2 = 0.0;
    for s in &trace.steps {
        eps2 += s.eps * s.eps;
        let (prev, cur) = (e[s.t - 1], e[s.t]);
        let dual_rhs = if tau_star > 0.0 {
            prev / (2.0 * tau_star)
        } else {
            0.0
        };
        rows.push(GbRateRow {
            t: s.t,
            excess: cur,
            rate_rhs: 8.0 * tau_star * tau_star / s.t as f64 + eps2,
            recurrence_lhs: prev - cur,
            recurrence_rhs: (dual_rhs - s.eps).max(0.0).powi(2),
            dual_lhs: s.max_corr,
            dual_rhs,
        });
    }
    let worst =
        |f: &dyn Fn(&GbRateRow) -> f64| rows.iter().map(f).fold(f64::NEG_INFINITY, f64::max);
    let max_rate_violation = worst(&|r| r.excess - r.rate_rhs);
    let max_recurrence_violation = worst(&|r| r.recurrence_rhs - r.recurrence_lhs);
    let max_dual_violation = worst(&|r| r.dual_rhs - r.dual_lhs);
    GbRateReport {
        tau_star,
        max_rate_violation,
        max_recurrence_violation,
        max_dual_violation,
        rate_passed: max_rate_violation <= STEP_TOL,
        recurrence_passed: max_recurrence_violation <= STEP_TOL,
        dual_passed: max_dual_violation <= STEP_TOL,
        rows,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbTwoRunReport {
    /// `D ≤ 2(MSE₁ − R(V(C))) + 2(MSE₂ − R(V(C)))`.
    pub anchor: AnchorCertificate,
    /// `D ≤ 32τ*²/k + 2(Σε_t² + Σε_t'²)`.
    pub rate: AnchorCertificate,
    /// `2(MSE₁ + MSE₂ − 2 MSE(f̄))`.
    pub identity_value: f64,
}

impl GbTwoRunReport {
    pub fn passed(&self) -> bool {
        self.anchor.passed && self.rate.passed
    }
}

pub fn certify_gb_two_run(
    f1: &Predictor,
    trace1: &BoostTrace,
    f2: &Predictor,
    trace2: &BoostTrace,
    tau_star: f64,
    pop: &Population,
    tol: Tolerances,
) -> Result<GbTwoRunReport> {
    if trace1.k != trace2.k {
        return Err(Error::InvalidArgument(format!(
            "runs have different lengths {} and {}",
            trace1.k, trace2.k
        )));
    }
    let anchor = AnchorCertificate {
        bound_name: BoundName::BoostingAgreementAnchor,
        ..check_anchor_bound(f1, f2, trace1.anchor_risk, pop, tol)?
    };
    let stats = PairStats::compute(f1, f2, pop)?;
    let rhs = 32.0 * tau_star * tau_star / trace1.k as f64
        + 2.0 * (trace1.eps_sum_sq() + trace2.eps_sum_sq());
    let rate =
        AnchorCertificate::for_upper_bound(BoundName::BoostingAgreementRate, stats, rhs, tol);
    let identity_value = 2.0 * (stats.mse1 + stats.mse2 - 2.0 * stats.mse_mid);
    Ok(GbTwoRunReport {
        anchor,
        rate,
        identity_value,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::population::Point;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn basis_vector(n: usize, j: usize) -> Predictor {
        let mut v = vec![0.0; n];
        v[j] = (n as f64).sqrt();
        Predictor::scalar(v)
    }

    fn random_setup(seed: u64, n: usize, atoms: usize) -> (Population, WeakLearnerClass) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pop = Population::new(
            (0..n)
                .map(|i| Point {
                    x: vec![i as f64],
                    y: vec![rng.gen_range(-1.0..1.0)],
                    w: 1.0 / n as f64,
                })
                .collect(),
        )
        .unwrap();
        let base = (0..atoms)
            .map(|_| Predictor::scalar((0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()))
            .collect();
        let class = WeakLearnerClass::new(base, None, &pop).unwrap();
        (pop, class)
    }

    #[test]
    fn zero_residual_makes_every_atom_feasible() {
        let (pop, class) = random_setup(1, 6, 3);
        let r = Predictor::zeros(6, 1);
        let o = SqOracle::new(OracleMode::AdversarialFloor, vec![0.0], 0).unwrap();
        let c = sq_query(&o, &r, 1, &class, &pop).unwrap();
        assert_eq!((c.corr, c.max_corr), (0.0, 0.0));
    }

    #[test]
    fn exact_mode_matches_brute_force() {
        let (pop, class) = random_setup(2, 8, 5);
        let r = pop.labels();
        let c = sq_query(&SqOracle::exact(), &r, 1, &class, &pop).unwrap();
        let mut best = 0;
        for i in 0..class.len() {
            let v: f64 = (0..8)
                .map(|j| r.values()[j] * class.atom(i).values()[j] / 8.0)
                .sum();
            let b: f64 = (0..8)
                .map(|j| r.values()[j] * class.atom(best).values()[j] / 8.0)
                .sum();
            if v > b {
                best = i;
            }
        }
        assert_eq!(c.atom, best);
    }

    #[test]
    fn oracle_modes_respect_feasibility() {
        let (pop, class) = random_setup(3, 8, 6);
        let r = pop.labels();
        for mode in [OracleMode::AdversarialFloor, OracleMode::RandomFeasible] {
            for eps in [0.0, 0.05, 10.0] {
                let o = SqOracle::new(mode, vec![eps], 4).unwrap();
                let c = sq_query(&o, &r, 3, &class, &pop).unwrap();
                let all = correlations(&r, &class, &pop).unwrap();
                let m = all.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                assert!(c.corr >= m - eps);
                if mode == OracleMode::AdversarialFloor {
                    let floor = all
                        .iter()
                        .cloned()
                        .filter(|&v| v >= m - eps)
                        .fold(f64::INFINITY, f64::min);
                    assert_eq!(c.corr, floor);
                }
            }
        }
    }

    #[test]
    fn single_step_projection_onto_orthonormal_atom() {
        let pop = Population::uniform(
            (0..3)
                .map(|i| {
                    (
                        vec![i as f64],
                        vec![if i == 0 { 2.5 * 3f64.sqrt() } else { 0.0 }],
                    )
                })
                .collect(),
        )
        .unwrap();
        let class = WeakLearnerClass::new(vec![basis_vector(3, 0), basis_vector(3, 1)], None, &pop)
            .unwrap();
        let (f, trace) = gradient_boost(&class, &pop, 1, &SqOracle::exact()).unwrap();
        assert!((f.values()[0] - 2.5 * 3f64.sqrt()).abs() < 1e-12);
        assert!(trace.steps[0].mse < 1e-24);
    }

    #[test]
    fn orthogonal_residual_stalls() {
        let pop = Population::uniform(
            (0..3)
                .map(|i| (vec![i as f64], vec![if i == 2 { 1.0 } else { 0.0 }]))
                .collect(),
        )
        .unwrap();
        let class = WeakLearnerClass::new(vec![basis_vector(3, 0)], None, &pop).unwrap();
        let (f, trace) = gradient_boost(&class, &pop, 3, &SqOracle::exact()).unwrap();
        assert!(f.values().iter().all(|&v| v == 0.0));
        assert!(trace.steps.iter().all(|s| s.alpha == 0.0));
    }

    #[test]
    fn exact_runs_satisfy_step_invariants_and_rate() {
        for seed in 0..10 {
            let (pop, class) = random_setup(seed, 10, 6);
            let (_, tau) = tau_star(&class, &pop).unwrap();
            let (_, trace) = gradient_boost(&class, &pop, 30, &SqOracle::exact()).unwrap();
            assert!(trace.max_step_violation() <= 0.0, "seed {seed}");
            let rep = certify_gb_rate(&trace, tau);
            assert!(rep.rate_passed, "seed {seed}: {}", rep.max_rate_violation);
            assert!(rep.rows[0].excess <= 8.0 * tau * tau + 1e-9);
        }
    }

    #[test]
    fn tau_star_for_label_in_class() {
        let pop = Population::uniform(
            (0..4)
                .map(|i| (vec![i as f64], vec![if i % 2 == 0 { 1.0 } else { -1.0 }]))
                .collect(),
        )
        .unwrap();
        let class =
            WeakLearnerClass::new(vec![pop.labels(), basis_vector(4, 1)], None, &pop).unwrap();
        let (fstar, tau) = tau_star(&class, &pop).unwrap();
        assert!((tau - 1.0).abs() < 1e-10);
        assert!(mse(&fstar, &pop).unwrap() < 1e-20);
    }

    #[test]
    fn identical_exact_runs_agree() {
        let (pop, class) = random_setup(5, 8, 4);
        let (_, tau) = tau_star(&class, &pop).unwrap();
        let (f1, t1) = gradient_boost(&class, &pop, 10, &SqOracle::exact()).unwrap();
        let (f2, t2) = gradient_boost(&class, &pop, 10, &SqOracle::exact()).unwrap();
        let rep = certify_gb_two_run(&f1, &t1, &f2, &t2, tau, &pop, Tolerances::default()).unwrap();
        assert_eq!(rep.anchor.disagreement, 0.0);
        assert!(rep.passed());
        // the anchor form is never tighter than the identity value
        let anchor_rhs = rep.anchor.slack + rep.anchor.disagreement;
        assert!(anchor_rhs >= rep.identity_value - 1e-12);
    }
}
