//! The instance on which the factor 4 is nearly attained.
//!
//! `X = {0, …, m}` with uniform weights, `e_j = √(m+1)·1{x = j}`, label
//! `y = e_0` and atoms `g_i = e_0 + σ e_i` for `i = 1..m`. With `r` distinct
//! atoms the least-squares fit puts weight `1/(r + σ²)` on each and has risk
//! `σ²/(r + σ²)`.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{run_stacking_pair_detailed, BaseModelSource, ModelFamily, StackingTrialRecord};
use crate::error::{Error, Result};
use crate::population::{Population, Predictor};
use crate::stats::{mean_estimate, ratio_of_means, MeanEstimate, RatioEstimate};

/// Atoms `g_1..g_m`, generated on demand (index `i` yields `g_{i+1}`).
#[derive(Debug, Clone)]
pub struct TightnessAtoms {
    pub m: usize,
    pub sigma: f64,
}

impl ModelFamily for TightnessAtoms {
    fn len(&self) -> usize {
        self.m
    }

    fn model(&self, index: usize) -> Arc<Predictor> {
        let n = self.m + 1;
        let s = (n as f64).sqrt();
        let mut v = vec![0.0; n];
        v[0] = s;
        v[index + 1] = self.sigma * s;
        Arc::new(Predictor::scalar(v))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClosedForms {
    pub k: usize,
    pub eps: f64,
    pub sigma2: f64,
    pub m: usize,
    /// `σ²/(k+σ²) − σ²/(2k+σ²)`.
    pub delta0: f64,
    /// `2kσ²/(k+σ²)²`.
    pub d0: f64,
    /// `D₀/Δ₀ = 4 − 2σ²/(k+σ²)`.
    pub ratio: f64,
    /// `C(2k, 2)/m`.
    pub collision_bound: f64,
}

impl ClosedForms {
    pub fn new(k: usize, eps: f64) -> ClosedForms {
        let kf = k as f64;
        let sigma2 = eps * kf / 8.0;
        let raw = 96.0 * kf.powi(3) / eps;
        // guard against 5184.000000001 rounding up
        let m = if (raw - raw.round()).abs() <= 1e-9 * raw {
            raw.round()
        } else {
            raw.ceil()
        } as usize;
        ClosedForms {
            k,
            eps,
            sigma2,
            m,
            delta0: risk_with(kf, sigma2) - risk_with(2.0 * kf, sigma2),
            d0: 2.0 * kf * sigma2 / (kf + sigma2).powi(2),
            ratio: 4.0 - 2.0 * sigma2 / (kf + sigma2),
            collision_bound: kf * (2.0 * kf - 1.0) / m as f64,
        }
    }

    /// Least-squares weight on each atom when `r` distinct atoms are present.
    pub fn weight(&self, r: usize) -> f64 {
        1.0 / (r as f64 + self.sigma2)
    }

    /// Risk of the fit over `r` distinct atoms.
    pub fn risk(&self, r: usize) -> f64 {
        risk_with(r as f64, self.sigma2)
    }
}

fn risk_with(r: f64, sigma2: f64) -> f64 {
    sigma2 / (r + sigma2)
}

pub struct TightnessInstance {
    pub population: Population,
    pub source: BaseModelSource,
    pub closed: ClosedForms,
}

pub fn build_tightness_instance(k: usize, eps: f64, seed: u64) -> Result<TightnessInstance> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "eps must lie in (0, 1], got {eps}"
        )));
    }
    let closed = ClosedForms::new(k, eps);
    let n = closed.m + 1;
    let s = (n as f64).sqrt();
    let population = Population::uniform(
        (0..n)
            .map(|j| (vec![j as f64], vec![if j == 0 { s } else { 0.0 }]))
            .collect(),
    )?;
    let atoms = TightnessAtoms {
        m: closed.m,
        sigma: closed.sigma2.sqrt(),
    };
    let source = BaseModelSource::mixture(Arc::new(atoms), None, seed)?;
    Ok(TightnessInstance {
        population,
        source,
        closed,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TightnessReport {
    pub closed: ClosedForms,
    pub trials: usize,
    pub d: MeanEstimate,
    pub r_k: MeanEstimate,
    pub r_2k: MeanEstimate,
    /// `Ê[D] / (R̂_k − R̂_2k)`.
    pub ratio: RatioEstimate,
    pub lower_threshold: f64,
    pub upper_threshold: f64,
    pub passed_lower: bool,
    pub passed_upper: bool,
    pub inconclusive: bool,
    pub collision_free_trials: usize,
    /// Largest deviation from the closed forms over collision-free trials
    /// (coefficients, risks, `D₀`, `Δ₀`).
    pub max_closed_form_error: f64,
    pub min_pointwise_slack: f64,
    #[serde(skip)]
    pub records: Vec<StackingTrialRecord>,
}

pub fn verify_tightness(k: usize, eps: f64, trials: usize, seed: u64) -> Result<TightnessReport> {
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be at least 1".into()));
    }
    let inst = build_tightness_instance(k, eps, seed)?;
    let c = inst.closed;
    let per_trial: Vec<(StackingTrialRecord, Option<f64>)> = (0..trials as u64)
        .into_par_iter()
        .map(|t| {
            let p = run_stacking_pair_detailed(&inst.source, k, &inst.population, t)?;
            let mut ids: Vec<usize> = p.draws.iter().filter_map(|d| d.atom).collect();
            ids.sort_unstable();
            ids.dedup();
            let err = (ids.len() == 2 * k).then(|| {
                let r = &p.record;
                let w = c.weight(k);
                let coef = p
                    .h_g
                    .coefficients
                    .iter()
                    .chain(&p.h_gprime.coefficients)
                    .map(|a| (a - w).abs());
                let wu = c.weight(2 * k);
                let coef_u = p.h_union.coefficients.iter().map(|a| (a - wu).abs());
                coef.chain(coef_u)
                    .chain([
                        (r.r_g - c.risk(k)).abs(),
                        (r.r_gprime - c.risk(k)).abs(),
                        (r.r_union - c.risk(2 * k)).abs(),
                        (r.d - c.d0).abs(),
                        (r.gap() - c.delta0).abs(),
                    ])
                    .fold(0.0, f64::max)
            });
            Ok((p.record, err))
        })
        .collect::<Result<_>>()?;

    let records: Vec<StackingTrialRecord> = per_trial.iter().map(|(r, _)| r.clone()).collect();
    let ds: Vec<f64> = records.iter().map(|r| r.d).collect();
    let gaps: Vec<f64> = records.iter().map(|r| r.gap()).collect();
    let singles: Vec<f64> = records.iter().flat_map(|r| [r.r_g, r.r_gprime]).collect();
    let unions: Vec<f64> = records.iter().map(|r| r.r_union).collect();
    let ratio = ratio_of_means(&ds, &gaps);
    let inconclusive = !(ratio.denominator >= 1e-12);
    let lower_threshold = 4.0 - eps - 3.0 * ratio.stderr;
    let upper_threshold = 4.0 + 3.0 * ratio.stderr;
    Ok(TightnessReport {
        closed: c,
        trials,
        d: mean_estimate(&ds),
        r_k: mean_estimate(&singles),
        r_2k: mean_estimate(&unions),
        ratio,
        lower_threshold,
        upper_threshold,
        passed_lower: !inconclusive && ratio.ratio >= lower_threshold,
        passed_upper: !inconclusive && ratio.ratio <= upper_threshold,
        inconclusive,
        collision_free_trials: per_trial.iter().filter(|(_, e)| e.is_some()).count(),
        max_closed_form_error: per_trial.iter().filter_map(|(_, e)| *e).fold(0.0, f64::max),
        min_pointwise_slack: records
            .iter()
            .map(|r| r.pointwise_slack)
            .fold(f64::INFINITY, f64::min),
        records,
    })
}
