//! Certified value of `R(K_τ) = min_{‖f‖_A ≤ τ} R(f)`.
//!
//! `K_τ = {Σ β_j c_j : β ≥ 0, Σ β_j ≤ τ}`, so the problem is smooth convex
//! minimization over a capped simplex. It is solved by accelerated projected
//! gradient with function-value restarts followed by active-set Newton steps
//! on the optimal face, and certified by the Frank–Wolfe gap:
//! for any feasible `f`, `R(f) − G(f) ≤ R(K_τ) ≤ R(f)`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::{gap_from_gradient, gradient_field, risk, CertifiedLoss};
use crate::boosting::WeakLearnerClass;
use crate::error::{Error, Result};
use crate::population::{inner, Population, Predictor};

pub const KTAU_GAP_TARGET: f64 = 1e-11;
pub const KTAU_MAX_ITERS: usize = 200_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskInterval {
    /// `R(f) − max(G(f), 0)`, the safe side for every bound check.
    pub lower: f64,
    /// `R(f)` at the returned feasible point.
    pub upper: f64,
    /// `upper − lower`.
    pub gap: f64,
    /// Accelerated-gradient iterations spent.
    pub iterations: usize,
    pub converged: bool,
    /// Weights on the class atoms of the returned point.
    pub weights: Vec<f64>,
}

/// FISTA runs until the gap drops below this before the Newton phase starts.
const POLISH_START_GAP: f64 = 1e-6;
const POLISH_ROUNDS: usize = 100;

struct Problem<'a> {
    atoms: Vec<&'a Predictor>,
    class: &'a WeakLearnerClass,
    tau: f64,
    loss: &'a CertifiedLoss,
    pop: &'a Population,
}

struct Point {
    beta: Vec<f64>,
    risk: f64,
    gap: f64,
    /// `∂R/∂β_j`.
    grad: Vec<f64>,
}

impl Problem<'_> {
    fn eval(&self, beta: Vec<f64>) -> Result<Point> {
        let f = Predictor::linear_combination(&self.atoms, &beta)?;
        let risk = risk(&f, self.loss, self.pop)?;
        let g = gradient_field(&f, self.loss, self.pop)?;
        let gap = gap_from_gradient(&f, &g, self.class, self.tau, self.pop)?;
        let grad = self
            .atoms
            .iter()
            .map(|a| inner(&g, a, self.pop))
            .collect::<Result<_>>()?;
        Ok(Point {
            beta,
            risk,
            gap,
            grad,
        })
    }

    fn value(&self, beta: &[f64]) -> Result<f64> {
        risk(
            &Predictor::linear_combination(&self.atoms, beta)?,
            self.loss,
            self.pop,
        )
    }

    /// `Σ_i w_i A_S(x_i)ᵀ ∇²L A_S(x_i)` over the columns in `set`.
    fn hessian(&self, beta: &[f64], set: &[usize]) -> Result<DMatrix<f64>> {
        let f = Predictor::linear_combination(&self.atoms, beta)?;
        let d = f.dim();
        let s = set.len();
        let mut h = DMatrix::zeros(s, s);
        let mut hp = vec![0.0; d * d];
        for (i, (pt, p)) in self.pop.points().iter().zip(f.rows()).enumerate() {
            self.loss.loss().hessian(&pt.y, p, &mut hp);
            for a in 0..s {
                let ra = self.atoms[set[a]].row(i);
                let ha: Vec<f64> = (0..d)
                    .map(|c| (0..d).map(|r| ra[r] * hp[r * d + c]).sum())
                    .collect();
                for b in a..s {
                    let rb = self.atoms[set[b]].row(i);
                    let v = pt.w * ha.iter().zip(rb).map(|(x, y)| x * y).sum::<f64>();
                    h[(a, b)] += v;
                    if a != b {
                        h[(b, a)] += v;
                    }
                }
            }
        }
        Ok(h)
    }

    fn fista(&self, start: Point, budget: usize, stop_gap: f64) -> Result<(Point, usize)> {
        let lam = SymmetricEigen::new(self.class.gram().clone())
            .eigenvalues
            .iter()
            .cloned()
            .fold(0.0_f64, f64::max);
        let step = 1.0 / (self.loss.smoothness() * lam.max(f64::MIN_POSITIVE));
        let mut x = start;
        let mut z = x.beta.clone();
        let mut theta = 1.0_f64;
        let mut used = 0;
        while x.gap > stop_gap && used < budget {
            used += 1;
            let gz = self.eval(z.clone())?.grad;
            let mut next: Vec<f64> = z.iter().zip(&gz).map(|(b, d)| b - step * d).collect();
            project_capped_simplex(&mut next, self.tau);
            let cand = self.eval(next)?;
            if cand.risk > x.risk {
                // restart momentum from the current best point
                theta = 1.0;
                z = x.beta.clone();
                continue;
            }
            let theta_next = 0.5 * (1.0 + (1.0 + 4.0 * theta * theta).sqrt());
            let mom = (theta - 1.0) / theta_next;
            z = cand
                .beta
                .iter()
                .zip(&x.beta)
                .map(|(a, b)| a + mom * (a - b))
                .collect();
            theta = theta_next;
            x = cand;
        }
        Ok((x, used))
    }

    /// Active-set Newton iterations on the face identified by the current support.
    fn newton(&self, start: Point) -> Result<Point> {
        let m = self.atoms.len();
        let mut x = start;
        for _ in 0..POLISH_ROUNDS {
            if x.gap <= KTAU_GAP_TARGET {
                break;
            }
            let total: f64 = x.beta.iter().sum();
            let tight = total >= self.tau * (1.0 - 1e-12);
            let mut set: Vec<usize> = (0..m).filter(|&j| x.beta[j] > 0.0).collect();
            let nu = if tight && !set.is_empty() {
                -set.iter().map(|&j| x.grad[j]).sum::<f64>() / set.len() as f64
            } else {
                0.0
            };
            let scale = x
                .grad
                .iter()
                .fold(0.0_f64, |a, g| a.max(g.abs()))
                .max(f64::MIN_POSITIVE);
            if let Some(j) = (0..m)
                .filter(|j| !set.contains(j))
                .min_by(|&a, &b| x.grad[a].total_cmp(&x.grad[b]))
            {
                if x.grad[j] + nu < -1e-13 * scale {
                    set.push(j);
                }
            }
            let Some(dir) = self.newton_direction(&x, &mut set, tight)? else {
                break;
            };
            let mut tmax: f64 = 1.0;
            for (k, &j) in set.iter().enumerate() {
                if dir[k] < 0.0 {
                    tmax = tmax.min(x.beta[j] / -dir[k]);
                }
            }
            let dsum: f64 = dir.iter().sum();
            if !tight && dsum > 0.0 {
                tmax = tmax.min((self.tau - total) / dsum);
            }
            let slope: f64 = set.iter().zip(&dir).map(|(&j, d)| x.grad[j] * d).sum();
            if !(slope < 0.0) || tmax <= 0.0 {
                break;
            }
            let mut t = tmax;
            let mut accepted = None;
            while t > 1e-12 {
                let mut beta = x.beta.clone();
                for (k, &j) in set.iter().enumerate() {
                    beta[j] = (beta[j] + t * dir[k]).max(0.0);
                }
                let sum: f64 = beta.iter().sum();
                if sum > self.tau {
                    beta.iter_mut().for_each(|b| *b *= self.tau / sum);
                }
                if self.value(&beta)? <= x.risk + 1e-4 * t * slope {
                    accepted = Some(beta);
                    break;
                }
                t *= 0.5;
            }
            let Some(beta) = accepted else { break };
            x = self.eval(beta)?;
        }
        Ok(x)
    }

    fn newton_direction(
        &self,
        x: &Point,
        set: &mut Vec<usize>,
        tight: bool,
    ) -> Result<Option<Vec<f64>>> {
        loop {
            let s = set.len();
            if s == 0 {
                return Ok(None);
            }
            let h = self.hessian(&x.beta, set)?;
            let ridge = 1e-13 * (h.trace() / s as f64).max(f64::MIN_POSITIVE);
            let n = if tight { s + 1 } else { s };
            let mut kkt = DMatrix::zeros(n, n);
            let mut rhs = DVector::zeros(n);
            for a in 0..s {
                for b in 0..s {
                    kkt[(a, b)] = h[(a, b)];
                }
                kkt[(a, a)] += ridge;
                rhs[a] = -x.grad[set[a]];
                if tight {
                    kkt[(a, s)] = 1.0;
                    kkt[(s, a)] = 1.0;
                }
            }
            let Some(sol) = kkt.lu().solve(&rhs) else {
                return Ok(None);
            };
            let dir: Vec<f64> = sol.iter().take(s).copied().collect();
            // coordinates pinned at zero that want to go negative leave the face
            let blocked: Vec<usize> = (0..s)
                .filter(|&k| x.beta[set[k]] == 0.0 && dir[k] < 0.0)
                .collect();
            if blocked.is_empty() {
                return Ok(Some(dir));
            }
            for k in blocked.into_iter().rev() {
                set.remove(k);
            }
        }
    }
}

pub fn risk_over_ktau(
    class: &WeakLearnerClass,
    tau: f64,
    loss: &CertifiedLoss,
    pop: &Population,
) -> Result<RiskInterval> {
    if !(tau >= 0.0 && tau.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "tau must be finite and non-negative, got {tau}"
        )));
    }
    let prob = Problem {
        atoms: class.atoms().iter().map(|a| a.as_ref()).collect(),
        class,
        tau,
        loss,
        pop,
    };
    let mut x = prob.eval(vec![0.0; class.len()])?;
    let mut lower = x.risk - x.gap.max(0.0);
    let mut best = (x.risk, x.beta.clone());
    let mut iterations = 0;
    if tau > 0.0 {
        let mut stop = POLISH_START_GAP;
        while x.gap > KTAU_GAP_TARGET && iterations < KTAU_MAX_ITERS {
            let (y, used) = prob.fista(x, KTAU_MAX_ITERS - iterations, stop)?;
            iterations += used;
            x = prob.newton(y)?;
            // every feasible point gives a valid interval; keep the tightest ends
            lower = lower.max(x.risk - x.gap.max(0.0));
            if x.risk < best.0 {
                best = (x.risk, x.beta.clone());
            }
            stop = (x.gap * 1e-3).max(KTAU_GAP_TARGET);
            if used == 0 {
                break;
            }
        }
    }
    let gap = best.0 - lower;
    Ok(RiskInterval {
        lower,
        upper: best.0,
        gap,
        iterations,
        converged: gap <= KTAU_GAP_TARGET,
        weights: best.1,
    })
}

/// Euclidean projection onto `{β ≥ 0, Σβ ≤ τ}`.
fn project_capped_simplex(v: &mut [f64], tau: f64) {
    for b in v.iter_mut() {
        *b = b.max(0.0);
    }
    if v.iter().sum::<f64>() <= tau {
        return;
    }
    let mut u: Vec<f64> = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut acc = 0.0;
    let mut shift = 0.0;
    for (i, &ui) in u.iter().enumerate() {
        acc += ui;
        let t = (acc - tau) / (i as f64 + 1.0);
        if ui - t > 0.0 {
            shift = t;
        }
    }
    for b in v.iter_mut() {
        *b = (*b - shift).max(0.0);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boosting::tau_star;
    use crate::frankwolfe::SquaredLoss;
    use crate::stacking::ols_span;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    #[test]
    fn projection_lands_on_the_set() {
        let mut v = vec![0.8, -0.2, 0.5, 0.1];
        project_capped_simplex(&mut v, 1.0);
        assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!((v[0] - 0.65).abs() < 1e-15 && (v[2] - 0.35).abs() < 1e-15);
        let mut w = vec![0.1, -0.3, 0.2];
        project_capped_simplex(&mut w, 1.0);
        assert_eq!(w, vec![0.1, 0.0, 0.2]);
    }

    fn setup(seed: u64) -> (Population, WeakLearnerClass) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 12;
        let pop = Population::uniform(
            (0..n)
                .map(|i| (vec![i as f64], vec![rng.gen_range(-1.0..1.0)]))
                .collect(),
        )
        .unwrap();
        let base = (0..5)
            .map(|_| Predictor::scalar((0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()))
            .collect();
        (
            pop.clone(),
            WeakLearnerClass::new(base, None, &pop).unwrap(),
        )
    }

    #[test]
    fn zero_radius_is_the_zero_predictor() {
        let (pop, class) = setup(0);
        let loss = CertifiedLoss::new(Arc::new(SquaredLoss), 1, 0).unwrap();
        let r = risk_over_ktau(&class, 0.0, &loss, &pop).unwrap();
        let zero = crate::population::mse(&Predictor::zeros(12, 1), &pop).unwrap();
        assert_eq!(r.upper, zero);
    }

    #[test]
    fn large_radius_recovers_span_risk() {
        for seed in 0..5 {
            let (pop, class) = setup(seed);
            let loss = CertifiedLoss::new(Arc::new(SquaredLoss), 1, 0).unwrap();
            let (_, ts) = tau_star(&class, &pop).unwrap();
            let span = ols_span(class.atoms(), &pop).unwrap().risk;
            let r = risk_over_ktau(&class, ts * 1.01, &loss, &pop).unwrap();
            assert!(r.converged);
            assert!(
                (r.upper - span).abs() < 1e-8 && (r.lower - span).abs() < 1e-8,
                "{r:?} {span}"
            );
        }
    }

    #[test]
    fn matches_grid_search_on_small_class() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let pop = Population::uniform(
            (0..4)
                .map(|i| (vec![i as f64], vec![rng.gen_range(-1.0..1.0)]))
                .collect(),
        )
        .unwrap();
        let g = Predictor::scalar((0..4).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let h = Predictor::scalar((0..4).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let class = WeakLearnerClass::new(vec![g, h], None, &pop).unwrap();
        let loss = CertifiedLoss::new(Arc::new(SquaredLoss), 1, 0).unwrap();
        let tau = 0.6;
        // grid over (a, b) with |a| + |b| ≤ τ
        let (g, h) = (class.atom(0), class.atom(2));
        let mut best = f64::INFINITY;
        let steps = 2000;
        for i in 0..=steps {
            let a = -tau + 2.0 * tau * i as f64 / steps as f64;
            let rem = tau - a.abs();
            // the objective is a convex quadratic in b, minimize it exactly on [−rem, rem]
            let base = g.scale(a);
            let r = pop.labels().sub(&base).unwrap();
            let hh = inner(h, h, &pop).unwrap();
            let b = (inner(&r, h, &pop).unwrap() / hh).clamp(-rem, rem);
            let f = base.add_scaled(b, h).unwrap();
            best = best.min(crate::population::mse(&f, &pop).unwrap());
        }
        let r = risk_over_ktau(&class, tau, &loss, &pop).unwrap();
        assert!((r.upper - best).abs() < 1e-6, "{} {best}", r.upper);
        assert!(r.lower <= best + 1e-12);
    }
}
