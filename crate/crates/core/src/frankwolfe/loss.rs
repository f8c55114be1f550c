//! Smooth, strongly convex pointwise losses and their probe certificates.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::rng_for;

/// A loss `L(y, p)` that is `mu`-strongly convex and `smoothness`-smooth in `p`.
pub trait Loss: Send + Sync {
    fn name(&self) -> &str;
    fn value(&self, y: &[f64], p: &[f64]) -> f64;
    fn gradient(&self, y: &[f64], p: &[f64], out: &mut [f64]);
    fn mu(&self) -> f64;
    fn smoothness(&self) -> f64;

    /// Row-major `d x d` Hessian in `p`; defaults to central differences of the gradient.
    fn hessian(&self, y: &[f64], p: &[f64], out: &mut [f64]) {
        let d = p.len();
        let (mut up, mut dn) = (vec![0.0; d], vec![0.0; d]);
        let mut q = p.to_vec();
        for c in 0..d {
            let h = 1e-5 * p[c].abs().max(1.0);
            q[c] = p[c] + h;
            self.gradient(y, &q, &mut up);
            q[c] = p[c] - h;
            self.gradient(y, &q, &mut dn);
            q[c] = p[c];
            for r in 0..d {
                out[r * d + c] = (up[r] - dn[r]) / (2.0 * h);
            }
        }
    }

    /// A label drawn from the loss's intended label domain, for probing.
    fn sample_label(&self, rng: &mut dyn rand::RngCore, dim: usize) -> Vec<f64> {
        (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect()
    }
}

/// `‖y − p‖²`, with `μ = L = 2`.
#[derive(Debug, Clone, Copy, Default)]
pub struct SquaredLoss;

impl Loss for SquaredLoss {
    fn name(&self) -> &str {
        "squared"
    }

    fn value(&self, y: &[f64], p: &[f64]) -> f64 {
        y.iter().zip(p).map(|(a, b)| (a - b) * (a - b)).sum()
    }

    fn gradient(&self, y: &[f64], p: &[f64], out: &mut [f64]) {
        for ((o, a), b) in out.iter_mut().zip(y).zip(p) {
            *o = 2.0 * (b - a);
        }
    }

    fn mu(&self) -> f64 {
        2.0
    }

    fn smoothness(&self) -> f64 {
        2.0
    }

    fn hessian(&self, _y: &[f64], p: &[f64], out: &mut [f64]) {
        let d = p.len();
        for r in 0..d {
            for c in 0..d {
                out[r * d + c] = if r == c { 2.0 } else { 0.0 };
            }
        }
    }
}

/// Softmax cross-entropy on logits with a ridge term:
/// `LSE(p) − ⟨y, p⟩ + (μ₀/2)‖p‖²` for a target distribution `y`.
///
/// The Hessian of log-sum-exp is `diag(s) − s sᵀ` with `s = softmax(p)`;
/// its largest eigenvalue is at most `1/2`, so `L = μ₀ + 1/2`.
#[derive(Debug, Clone, Copy)]
pub struct RidgeSoftmaxCrossEntropy {
    pub mu0: f64,
}

pub const LSE_HESSIAN_BOUND: f64 = 0.5;

fn softmax(p: &[f64]) -> (Vec<f64>, f64) {
    let m = p.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = p.iter().map(|v| (v - m).exp()).collect();
    let z: f64 = e.iter().sum();
    (e.iter().map(|v| v / z).collect(), m + z.ln())
}

impl Loss for RidgeSoftmaxCrossEntropy {
    fn name(&self) -> &str {
        "softmax_ce"
    }

    fn value(&self, y: &[f64], p: &[f64]) -> f64 {
        let (_, lse) = softmax(p);
        let yp: f64 = y.iter().zip(p).map(|(a, b)| a * b).sum();
        let pp: f64 = p.iter().map(|v| v * v).sum();
        lse - yp + 0.5 * self.mu0 * pp
    }

    fn gradient(&self, y: &[f64], p: &[f64], out: &mut [f64]) {
        let (s, _) = softmax(p);
        for i in 0..p.len() {
            out[i] = s[i] - y[i] + self.mu0 * p[i];
        }
    }

    fn mu(&self) -> f64 {
        self.mu0
    }

    fn smoothness(&self) -> f64 {
        self.mu0 + LSE_HESSIAN_BOUND
    }

    fn hessian(&self, _y: &[f64], p: &[f64], out: &mut [f64]) {
        let d = p.len();
        let (s, _) = softmax(p);
        for r in 0..d {
            for c in 0..d {
                out[r * d + c] = if r == c { s[r] + self.mu0 } else { 0.0 } - s[r] * s[c];
            }
        }
    }

    fn sample_label(&self, rng: &mut dyn rand::RngCore, dim: usize) -> Vec<f64> {
        let raw: Vec<f64> = (0..dim)
            .map(|_| -rng.gen::<f64>().max(1e-300).ln())
            .collect();
        let s: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / s).collect()
    }
}

/// Named loss configurations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum LossSpec {
    Squared,
    SoftmaxCe { mu0: f64 },
}

impl LossSpec {
    pub fn build(&self) -> Result<Arc<dyn Loss>> {
        match *self {
            LossSpec::Squared => Ok(Arc::new(SquaredLoss)),
            LossSpec::SoftmaxCe { mu0 } if mu0 > 0.0 && mu0.is_finite() => {
                Ok(Arc::new(RidgeSoftmaxCrossEntropy { mu0 }))
            }
            LossSpec::SoftmaxCe { mu0 } => Err(Error::InvalidArgument(format!(
                "ridge weight must be positive, got {mu0}"
            ))),
        }
    }
}

pub fn builtin_losses() -> Vec<LossSpec> {
    vec![LossSpec::Squared, LossSpec::SoftmaxCe { mu0: 0.1 }]
}

pub const DEFAULT_PROBES: usize = 1000;

/// Worst-case outcomes over random probes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossProbeReport {
    pub probes: usize,
    /// `min L(p₁) − L(p₂) − ⟨∇L(p₂), p₁−p₂⟩ − (μ/2)‖p₁−p₂‖²`.
    pub strong_convexity_slack: f64,
    /// `max ‖∇L(p₁) − ∇L(p₂)‖ / ‖p₁ − p₂‖`.
    pub gradient_lipschitz_ratio: f64,
    /// Largest finite-difference mismatch relative to `max(1, |∂_i L|)`.
    pub finite_difference_error: f64,
    /// `min (4/μ)(L(p₁) + L(p₂) − 2L(p̄)) − ‖p₁ − p₂‖²`.
    pub pointwise_anchor_slack: f64,
    /// Largest mismatch between the Hessian and differences of the gradient.
    pub hessian_error: f64,
    pub passed: bool,
}

pub fn probe_loss(loss: &dyn Loss, dim: usize, probes: usize, seed: u64) -> LossProbeReport {
    let (mu, lip) = (loss.mu(), loss.smoothness());
    let mut sc = f64::INFINITY;
    let mut ratio: f64 = 0.0;
    let mut fd: f64 = 0.0;
    let mut anchor = f64::INFINITY;
    let mut hess_err: f64 = 0.0;
    let (mut g1, mut g2) = (vec![0.0; dim], vec![0.0; dim]);
    let (mut hess, mut gu, mut gd) = (vec![0.0; dim * dim], vec![0.0; dim], vec![0.0; dim]);
    for i in 0..probes {
        let mut rng = rng_for(seed, &[i as u64]);
        let y = loss.sample_label(&mut rng, dim);
        let scale = [0.1, 1.0, 5.0][i % 3];
        let p1: Vec<f64> = (0..dim).map(|_| scale * rng.gen_range(-1.0..1.0)).collect();
        let p2: Vec<f64> = (0..dim).map(|_| scale * rng.gen_range(-1.0..1.0)).collect();
        let (l1, l2) = (loss.value(&y, &p1), loss.value(&y, &p2));
        loss.gradient(&y, &p1, &mut g1);
        loss.gradient(&y, &p2, &mut g2);
        let diff2: f64 = p1.iter().zip(&p2).map(|(a, b)| (a - b) * (a - b)).sum();
        let lin: f64 = g2
            .iter()
            .zip(p1.iter().zip(&p2))
            .map(|(g, (a, b))| g * (a - b))
            .sum();
        sc = sc.min((l1 - l2 - lin - 0.5 * mu * diff2) / (1.0 + l1.abs().max(l2.abs())));
        let gdiff: f64 = g1
            .iter()
            .zip(&g2)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        if diff2 > 0.0 {
            ratio = ratio.max(gdiff / diff2.sqrt());
        }
        let mid: Vec<f64> = p1.iter().zip(&p2).map(|(a, b)| 0.5 * (a + b)).collect();
        let lm = loss.value(&y, &mid);
        anchor = anchor.min((4.0 / mu) * (l1 + l2 - 2.0 * lm) - diff2);
        for c in 0..dim {
            let h = 1e-5 * p1[c].abs().max(1.0);
            let mut up = p1.clone();
            let mut dn = p1.clone();
            up[c] += h;
            dn[c] -= h;
            let est = (loss.value(&y, &up) - loss.value(&y, &dn)) / (2.0 * h);
            fd = fd.max((est - g1[c]).abs() / g1[c].abs().max(1.0));
            loss.gradient(&y, &up, &mut gu);
            loss.gradient(&y, &dn, &mut gd);
            loss.hessian(&y, &p1, &mut hess);
            for r in 0..dim {
                let col = (gu[r] - gd[r]) / (2.0 * h);
                hess_err = hess_err
                    .max((col - hess[r * dim + c]).abs() / hess[r * dim + c].abs().max(1.0));
            }
        }
    }
    let passed = sc >= -1e-9
        && ratio <= lip * (1.0 + 1e-9)
        && fd <= 1e-6
        && anchor >= -1e-9
        && hess_err <= 1e-5;
    LossProbeReport {
        probes,
        strong_convexity_slack: sc,
        gradient_lipschitz_ratio: ratio,
        finite_difference_error: fd,
        pointwise_anchor_slack: anchor,
        hessian_error: hess_err,
        passed,
    }
}

/// A loss that has passed the probe certificates at a given output dimension.
#[derive(Clone)]
pub struct CertifiedLoss {
    loss: Arc<dyn Loss>,
    dim: usize,
    pub report: LossProbeReport,
}

impl std::fmt::Debug for CertifiedLoss {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CertifiedLoss")
            .field("name", &self.loss.name())
            .field("dim", &self.dim)
            .finish()
    }
}

impl CertifiedLoss {
    pub fn new(loss: Arc<dyn Loss>, dim: usize, seed: u64) -> Result<CertifiedLoss> {
        if !(loss.mu() > 0.0 && loss.smoothness() >= loss.mu()) {
            return Err(Error::LossCertificate(format!(
                "{}: need 0 < mu <= L, got mu = {}, L = {}",
                loss.name(),
                loss.mu(),
                loss.smoothness()
            )));
        }
        let report = probe_loss(loss.as_ref(), dim, DEFAULT_PROBES, seed);
        if !report.passed {
            return Err(Error::LossCertificate(format!(
                "{}: {report:?}",
                loss.name()
            )));
        }
        Ok(CertifiedLoss { loss, dim, report })
    }

    pub fn loss(&self) -> &dyn Loss {
        self.loss.as_ref()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mu(&self) -> f64 {
        self.loss.mu()
    }

    pub fn smoothness(&self) -> f64 {
        self.loss.smoothness()
    }

    pub fn is_squared(&self) -> bool {
        self.loss.name() == "squared"
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, SymmetricEigen};

    #[test]
    fn squared_loss_is_exactly_quadratic() {
        let r = probe_loss(&SquaredLoss, 3, 300, 1);
        assert!(r.passed);
        assert!(r.strong_convexity_slack.abs() < 1e-12);
        assert!(r.pointwise_anchor_slack.abs() < 1e-9);
    }

    #[test]
    fn softmax_hessian_bound_holds_on_probes() {
        // exact Hessian of log-sum-exp at random logits
        let mut worst: f64 = 0.0;
        for i in 0..2000u64 {
            let mut rng = rng_for(99, &[i]);
            let dim = 2 + (i % 5) as usize;
            let scale = [0.01, 1.0, 10.0][(i % 3) as usize];
            let p: Vec<f64> = (0..dim).map(|_| scale * rng.gen_range(-1.0..1.0)).collect();
            let (s, _) = softmax(&p);
            let h = DMatrix::from_fn(dim, dim, |a, b| {
                if a == b {
                    s[a] - s[a] * s[b]
                } else {
                    -s[a] * s[b]
                }
            });
            let top = SymmetricEigen::new(h)
                .eigenvalues
                .iter()
                .cloned()
                .fold(f64::NEG_INFINITY, f64::max);
            worst = worst.max(top);
        }
        assert!(worst <= LSE_HESSIAN_BOUND + 1e-12, "{worst}");
        // two equal logits attain the bound
        assert!(worst > 0.49);
    }

    #[test]
    fn builtin_losses_certify() {
        for spec in builtin_losses() {
            for dim in [1, 2, 4] {
                CertifiedLoss::new(spec.build().unwrap(), dim, 7).unwrap();
            }
        }
    }

    struct Wrong;
    impl Loss for Wrong {
        fn name(&self) -> &str {
            "wrong"
        }
        fn value(&self, y: &[f64], p: &[f64]) -> f64 {
            SquaredLoss.value(y, p)
        }
        fn gradient(&self, y: &[f64], p: &[f64], out: &mut [f64]) {
            SquaredLoss.gradient(y, p, out);
            out[0] *= 1.01;
        }
        fn mu(&self) -> f64 {
            2.0
        }
        fn smoothness(&self) -> f64 {
            2.0
        }
    }

    #[test]
    fn wrong_gradient_is_rejected() {
        assert!(matches!(
            CertifiedLoss::new(Arc::new(Wrong), 2, 0),
            Err(Error::LossCertificate(_))
        ));
    }

    #[test]
    fn overclaimed_strong_convexity_is_rejected() {
        let l = Arc::new(RidgeSoftmaxCrossEntropy { mu0: 0.1 });
        struct Over(Arc<RidgeSoftmaxCrossEntropy>);
        impl Loss for Over {
            fn name(&self) -> &str {
                "over"
            }
            fn value(&self, y: &[f64], p: &[f64]) -> f64 {
                self.0.value(y, p)
            }
            fn gradient(&self, y: &[f64], p: &[f64], out: &mut [f64]) {
                self.0.gradient(y, p, out)
            }
            fn mu(&self) -> f64 {
                0.5
            }
            fn smoothness(&self) -> f64 {
                0.6
            }
        }
        assert!(CertifiedLoss::new(Arc::new(Over(l)), 3, 0).is_err());
    }

    #[test]
    fn unknown_ridge_rejected() {
        assert!(LossSpec::SoftmaxCe { mu0: 0.0 }.build().is_err());
        let s: LossSpec = serde_json::from_str(r#"{"name":"softmax_ce","mu0":0.2}"#).unwrap();
        assert_eq!(s, LossSpec::SoftmaxCe { mu0: 0.2 });
    }
}
