//! Midpoint-closed model hierarchies: depth-bounded regression trees and
//! size-bounded ReLU networks, with agreement certificates built on them.

mod dp;
mod greedy;
mod nn;
mod train;
mod tree;

pub use dp::{optimal_tree, optimal_tree_with_budget, DpBudget, TreeDp};
pub use greedy::{greedy_tree, GreedyConfig, GreedyTreeLearner, MIN_GAIN};
pub use nn::{nn_eval, nn_midpoint, Affine, Edge, ReluNetwork, Source};
pub use train::{train_nn, NnTrainConfig};
pub use tree::{tree_eval, tree_midpoint, Node, RegressionTree};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::population::{
    disagreement, mse, AnchorCertificate, BoundName, Population, Predictor, Tolerances,
};
use crate::seed::{derive_seed, rng_for};

/// Strong-convexity modulus of the squared loss.
const SQUARED_MU: f64 = 2.0;
/// Tolerance for pointwise equality of a midpoint model with the average.
pub const CLOSURE_TOL: f64 = 1e-9;
/// Random off-support probes per closure check.
pub const OFF_SUPPORT_PROBES: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiskTag {
    Exact,
    UpperBoundProxy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaggedRisk {
    pub value: f64,
    pub tag: RiskTag,
}

/// `Pass`/`Fail` need exact risks at both levels; proxy risks only support
/// `Consistent`/`Inconsistent`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveVerdict {
    Pass,
    Fail,
    Consistent,
    Inconsistent,
}

/// Exact facts about the midpoint model, independent of any risk infimum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosureCheck {
    /// Largest deviation from the pointwise average over support and probes.
    pub max_error: f64,
    pub probes: usize,
    /// Depth (trees) or internal-node count (networks) of the two models and the midpoint.
    pub level1: usize,
    pub level2: usize,
    pub level_mid: usize,
    /// The closure lemma's limit for `level_mid`.
    pub level_limit: usize,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveCertificate {
    pub level: usize,
    pub risk_n: TaggedRisk,
    pub risk_2n: TaggedRisk,
    pub eps1: f64,
    pub eps2: f64,
    pub disagreement: f64,
    /// `4(R_n − R_2n + max(eps1, eps2))`.
    pub bound_rhs: f64,
    /// `(8/μ)(R_n − R_2n + eps)` with `μ = 2`.
    pub strongly_convex_rhs: f64,
    pub slack: f64,
    pub verdict: CurveVerdict,
    /// Midpoint identity evaluated with the closure model as the midpoint.
    pub identity: AnchorCertificate,
    pub closure: ClosureCheck,
}

impl CurveCertificate {
    fn new(
        level: usize,
        risk_n: TaggedRisk,
        risk_2n: TaggedRisk,
        eps: (f64, f64),
        identity: AnchorCertificate,
        closure: ClosureCheck,
        tol: Tolerances,
    ) -> CurveCertificate {
        let eps_max = eps.0.max(eps.1).max(0.0);
        let gap = risk_n.value - risk_2n.value + eps_max;
        let bound_rhs = 4.0 * gap;
        let slack = bound_rhs - identity.disagreement;
        let holds = slack >= -tol.absolute;
        let exact = risk_n.tag == RiskTag::Exact && risk_2n.tag == RiskTag::Exact;
        let verdict = match (exact, holds) {
            (true, true) => CurveVerdict::Pass,
            (true, false) => CurveVerdict::Fail,
            (false, true) => CurveVerdict::Consistent,
            (false, false) => CurveVerdict::Inconsistent,
        };
        CurveCertificate {
            level,
            risk_n,
            risk_2n,
            eps1: eps.0,
            eps2: eps.1,
            disagreement: identity.disagreement,
            bound_rhs,
            strongly_convex_rhs: 8.0 / SQUARED_MU * gap,
            slack,
            verdict,
            identity,
            closure,
        }
    }

    /// True when every exactly-checkable part holds: the identity, the
    /// closure facts, and (for exact tags) the bound itself.
    pub fn passed(&self) -> bool {
        self.identity.passed && self.closure.passed && self.verdict != CurveVerdict::Fail
    }
}

/// Midpoint identity with an explicitly supplied midpoint model.
pub fn identity_with_midpoint(
    f1: &Predictor,
    f2: &Predictor,
    mid: &Predictor,
    pop: &Population,
    tol: Tolerances,
) -> Result<AnchorCertificate> {
    let (mse1, mse2, mse_mid) = (mse(f1, pop)?, mse(f2, pop)?, mse(mid, pop)?);
    let d = disagreement(f1, f2, pop)?;
    let slack = 2.0 * (mse1 + mse2 - 2.0 * mse_mid) - d;
    Ok(AnchorCertificate {
        bound_name: BoundName::MidpointIdentity,
        mse1,
        mse2,
        mse_mid,
        disagreement: d,
        slack,
        passed: slack.abs() <= tol.relative * (1.0 + d.abs()),
    })
}

/// Support points plus seeded uniform draws from a box enlarged by one unit
/// around the support, so thresholds and kinks are probed from both sides.
pub fn probe_points(pop: &Population, extra: usize, seed: u64) -> Vec<Vec<f64>> {
    let dims = pop.feature_dim();
    let mut lo = vec![f64::INFINITY; dims];
    let mut hi = vec![f64::NEG_INFINITY; dims];
    for p in pop.points() {
        for c in 0..dims {
            lo[c] = lo[c].min(p.x[c]);
            hi[c] = hi[c].max(p.x[c]);
        }
    }
    let mut out: Vec<Vec<f64>> = pop.points().iter().map(|p| p.x.clone()).collect();
    let mut rng = rng_for(seed, &[]);
    for _ in 0..extra {
        out.push(
            (0..dims)
                .map(|c| rng.gen_range(lo[c] - 1.0..=hi[c] + 1.0))
                .collect(),
        );
    }
    out
}

fn max_average_error(
    points: &[Vec<f64>],
    mut f1: impl FnMut(&[f64]) -> Result<Vec<f64>>,
    mut f2: impl FnMut(&[f64]) -> Result<Vec<f64>>,
    mut mid: impl FnMut(&[f64]) -> Result<Vec<f64>>,
) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for x in points {
        let (a, b, m) = (f1(x)?, f2(x)?, mid(x)?);
        for ((u, v), w) in a.iter().zip(&b).zip(&m) {
            worst = worst.max((0.5 * (u + v) - w).abs());
        }
    }
    Ok(worst)
}

pub fn check_tree_closure(
    t1: &RegressionTree,
    t2: &RegressionTree,
    points: &[Vec<f64>],
) -> Result<(RegressionTree, ClosureCheck)> {
    let mid = tree_midpoint(t1, t2)?;
    let max_error = max_average_error(
        points,
        |x| Ok(t1.eval(x)?.to_vec()),
        |x| Ok(t2.eval(x)?.to_vec()),
        |x| Ok(mid.eval(x)?.to_vec()),
    )?;
    let level_limit = t1.depth() + t2.depth();
    let check = ClosureCheck {
        max_error,
        probes: points.len(),
        level1: t1.depth(),
        level2: t2.depth(),
        level_mid: mid.depth(),
        level_limit,
        passed: max_error <= CLOSURE_TOL && mid.depth() <= level_limit,
    };
    Ok((mid, check))
}

pub fn check_nn_closure(
    n1: &ReluNetwork,
    n2: &ReluNetwork,
    points: &[Vec<f64>],
) -> Result<(ReluNetwork, ClosureCheck)> {
    let mid = nn_midpoint(n1, n2)?;
    let max_error = max_average_error(points, |x| n1.eval(x), |x| n2.eval(x), |x| mid.eval(x))?;
    let level_limit = n1.size() + n2.size();
    let check = ClosureCheck {
        max_error,
        probes: points.len(),
        level1: n1.size(),
        level2: n2.size(),
        level_mid: mid.size(),
        level_limit,
        passed: max_error <= CLOSURE_TOL && mid.size() == level_limit,
    };
    Ok((mid, check))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TreeTrainerConfig {
    pub seeds: [u64; 2],
    pub greedy: GreedyConfig,
    pub budget: DpBudget,
}

impl Default for TreeTrainerConfig {
    fn default() -> Self {
        TreeTrainerConfig {
            seeds: [1, 2],
            greedy: GreedyConfig::default(),
            budget: DpBudget::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TreeAgreement {
    pub certificate: CurveCertificate,
    pub trees: [RegressionTree; 2],
    pub midpoint: RegressionTree,
    pub optimal: [RegressionTree; 2],
}

/// Two greedy depth-`depth` trees against exact DP optima at `depth` and `2·depth`.
pub fn certify_tree_agreement(
    pop: &Population,
    depth: usize,
    config: &TreeTrainerConfig,
) -> Result<TreeAgreement> {
    let mut dp = TreeDp::new(pop, config.budget)?;
    let (opt_n, r_n) = dp.solve(pop, depth)?;
    let (opt_2n, r_2n) = dp.solve(pop, 2 * depth)?;
    let t1 = greedy_tree(pop, depth, config.seeds[0], &config.greedy)?;
    let t2 = greedy_tree(pop, depth, config.seeds[1], &config.greedy)?;
    let (f1, f2) = (t1.compile(pop)?, t2.compile(pop)?);
    let probes = probe_points(
        pop,
        OFF_SUPPORT_PROBES,
        derive_seed(config.seeds[0], &[config.seeds[1]]),
    );
    let (mid, closure) = check_tree_closure(&t1, &t2, &probes)?;
    let identity =
        identity_with_midpoint(&f1, &f2, &mid.compile(pop)?, pop, Tolerances::default())?;
    let eps = (mse(&f1, pop)? - r_n, mse(&f2, pop)? - r_n);
    let certificate = CurveCertificate::new(
        depth,
        TaggedRisk {
            value: r_n,
            tag: RiskTag::Exact,
        },
        TaggedRisk {
            value: r_2n,
            tag: RiskTag::Exact,
        },
        eps,
        identity,
        closure,
        Tolerances::default(),
    );
    Ok(TreeAgreement {
        certificate,
        trees: [t1, t2],
        midpoint: mid,
        optimal: [opt_n, opt_2n],
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NnAgreementConfig {
    pub seeds: [u64; 2],
    pub train: NnTrainConfig,
}

impl Default for NnAgreementConfig {
    fn default() -> Self {
        NnAgreementConfig {
            seeds: [1, 2],
            train: NnTrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct NnAgreement {
    pub certificate: CurveCertificate,
    pub networks: [ReluNetwork; 2],
    pub midpoint: ReluNetwork,
}

/// Two trained size-`size` networks; level risks are best-found values and
/// therefore only upper-bound proxies for the class infima.
pub fn certify_nn_agreement(
    pop: &Population,
    size: usize,
    config: &NnAgreementConfig,
) -> Result<NnAgreement> {
    let (n1, r1) = train_nn(pop, size, config.seeds[0], &config.train)?;
    let (n2, r2) = train_nn(pop, size, config.seeds[1], &config.train)?;
    let (_, r_big) = train_nn(
        pop,
        2 * size,
        derive_seed(config.seeds[0], &[config.seeds[1], 2]),
        &config.train,
    )?;
    let (f1, f2) = (n1.compile(pop)?, n2.compile(pop)?);
    let probes = probe_points(
        pop,
        OFF_SUPPORT_PROBES,
        derive_seed(config.seeds[0], &[config.seeds[1]]),
    );
    let (mid, closure) = check_nn_closure(&n1, &n2, &probes)?;
    let f_mid = mid.compile(pop)?;
    let identity = identity_with_midpoint(&f1, &f2, &f_mid, pop, Tolerances::default())?;
    // the midpoint is itself a member of the doubled class
    let r_2n = r_big.min(identity.mse_mid);
    let r_n = r1.min(r2);
    let certificate = CurveCertificate::new(
        size,
        TaggedRisk {
            value: r_n,
            tag: RiskTag::UpperBoundProxy,
        },
        TaggedRisk {
            value: r_2n,
            tag: RiskTag::UpperBoundProxy,
        },
        (r1 - r_n, r2 - r_n),
        identity,
        closure,
        Tolerances::default(),
    );
    Ok(NnAgreement {
        certificate,
        networks: [n1, n2],
        midpoint: mid,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize, label: impl Fn(f64, f64) -> f64) -> Population {
        let mut recs = Vec::new();
        for i in 0..n {
            for j in 0..n {
                let (a, b) = (i as f64 / (n - 1) as f64, j as f64 / (n - 1) as f64);
                recs.push((vec![a, b], vec![label(a, b)]));
            }
        }
        Population::uniform(recs).unwrap()
    }

    #[test]
    fn separable_instance_certifies_with_zero_disagreement() {
        let pop = Population::uniform(
            (0..4)
                .map(|i| (vec![i as f64], vec![if i < 2 { 0.0 } else { 1.0 }]))
                .collect(),
        )
        .unwrap();
        let a = certify_tree_agreement(&pop, 1, &TreeTrainerConfig::default()).unwrap();
        let c = &a.certificate;
        assert_eq!(
            (c.risk_n.value, c.risk_2n.value, c.disagreement),
            (0.0, 0.0, 0.0)
        );
        assert_eq!(c.verdict, CurveVerdict::Pass);
        assert!(c.passed());
    }

    #[test]
    fn grid_instance_passes_with_exact_tags() {
        let pop = grid(5, |a, b| {
            (0.5 + 0.4 * (3.0 * a).sin() * (2.0 * b - 1.0)).clamp(0.0, 1.0)
        });
        let cfg = TreeTrainerConfig {
            greedy: GreedyConfig {
                sample_fraction: 0.7,
                ..GreedyConfig::default()
            },
            ..Default::default()
        };
        let a = certify_tree_agreement(&pop, 2, &cfg).unwrap();
        let c = &a.certificate;
        assert_eq!(c.verdict, CurveVerdict::Pass, "{c:?}");
        assert!(c.identity.passed && c.closure.passed);
        assert!(c.closure.level_mid <= 4);
        assert!((c.strongly_convex_rhs - c.bound_rhs).abs() <= 1e-15 * (1.0 + c.bound_rhs.abs()));
    }

    #[test]
    fn proxy_certificate_is_never_pass() {
        let pop = grid(3, |a, b| 0.5 * a + 0.25 * b);
        let cfg = NnAgreementConfig {
            train: NnTrainConfig {
                steps: 200,
                restarts: 1,
                ..Default::default()
            },
            ..Default::default()
        };
        let a = certify_nn_agreement(&pop, 2, &cfg).unwrap();
        let c = &a.certificate;
        assert_eq!(c.risk_n.tag, RiskTag::UpperBoundProxy);
        assert!(matches!(
            c.verdict,
            CurveVerdict::Consistent | CurveVerdict::Inconsistent
        ));
        assert_eq!(a.midpoint.size(), 4);
        assert!(c.identity.passed && c.closure.passed);
    }

    #[test]
    fn identical_seeds_give_zero_disagreement() {
        let pop = grid(3, |a, _| a);
        let cfg = NnAgreementConfig {
            seeds: [7, 7],
            train: NnTrainConfig {
                steps: 100,
                restarts: 1,
                ..Default::default()
            },
        };
        let a = certify_nn_agreement(&pop, 3, &cfg).unwrap();
        assert_eq!(a.certificate.disagreement, 0.0);
    }
}
