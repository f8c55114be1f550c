//! Stacked aggregation over sampled base models.
//!
//! A trial draws two independent `k`-samples `G`, `G'` from a
//! [`BaseModelSource`], fits population least squares over the spans of `G`,
//! `G'` and `G ∪ G'`, and records the pointwise inequality
//! `D(h_G, h_G') ≤ 2(R_G − R_∪) + 2(R_G' − R_∪)`.

mod source;
mod tightness;

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lstsq::min_norm_least_squares;
use crate::population::{disagreement, mse, Population, Predictor};
use crate::seed::derive_seed;
use crate::stats::{mean_estimate, MeanEstimate};

pub use source::{
    BaseModelSource, DataSource, Draw, ExplicitModels, ModelFamily, ShardLearner, ShardTrainer,
    SourceKind,
};
pub use tightness::{
    build_tightness_instance, verify_tightness, ClosedForms, TightnessAtoms, TightnessInstance,
    TightnessReport,
};

/// Least-squares fit over the span of a multiset of base predictors.
#[derive(Debug, Clone)]
pub struct SpanModel {
    pub basis: Vec<Arc<Predictor>>,
    pub coefficients: Vec<f64>,
    pub compiled: Predictor,
    pub risk: f64,
}

pub fn ols_span(basis: &[Arc<Predictor>], pop: &Population) -> Result<SpanModel> {
    let refs: Vec<&Predictor> = basis.iter().map(|b| b.as_ref()).collect();
    let coefficients = min_norm_least_squares(&refs, &pop.labels(), pop)?;
    let compiled = Predictor::linear_combination(&refs, &coefficients)?;
    let risk = mse(&compiled, pop)?;
    Ok(SpanModel {
        basis: basis.to_vec(),
        coefficients,
        compiled,
        risk,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackingTrialRecord {
    pub k: usize,
    pub trial: u64,
    /// Base seed of the source the trial was drawn from.
    pub seed: u64,
    pub r_g: f64,
    pub r_gprime: f64,
    pub r_union: f64,
    pub d: f64,
    pub pointwise_slack: f64,
}

impl StackingTrialRecord {
    /// `(R_G + R_G')/2 − R_∪`, the per-trial estimate of `R̄_k − R̄_2k`.
    pub fn gap(&self) -> f64 {
        0.5 * (self.r_g + self.r_gprime) - self.r_union
    }
}

/// A trial with its fitted models kept.
#[derive(Debug, Clone)]
pub struct StackingPair {
    pub record: StackingTrialRecord,
    pub draws: Vec<Draw>,
    pub h_g: SpanModel,
    pub h_gprime: SpanModel,
    pub h_union: SpanModel,
}

pub fn run_stacking_pair_detailed(
    source: &BaseModelSource,
    k: usize,
    pop: &Population,
    trial: u64,
) -> Result<StackingPair> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    let draws = source.sample(trial, 2 * k, pop)?;
    let models: Vec<Arc<Predictor>> = draws.iter().map(|d| Arc::clone(&d.model)).collect();
    let h_g = ols_span(&models[..k], pop)?;
    let h_gprime = ols_span(&models[k..], pop)?;
    let h_union = ols_span(&models, pop)?;
    let d = disagreement(&h_g.compiled, &h_gprime.compiled, pop)?;
    let record = StackingTrialRecord {
        k,
        trial,
        seed: source.base_seed,
        r_g: h_g.risk,
        r_gprime: h_gprime.risk,
        r_union: h_union.risk,
        d,
        pointwise_slack: 2.0 * (h_g.risk - h_union.risk) + 2.0 * (h_gprime.risk - h_union.risk) - d,
    };
    Ok(StackingPair {
        record,
        draws,
        h_g,
        h_gprime,
        h_union,
    })
}

pub fn run_stacking_pair(
    source: &BaseModelSource,
    k: usize,
    pop: &Population,
    trial: u64,
) -> Result<StackingTrialRecord> {
    Ok(run_stacking_pair_detailed(source, k, pop, trial)?.record)
}

/// Runs `trials` independent trials in parallel; records come back in trial order.
pub fn run_trials(
    source: &BaseModelSource,
    k: usize,
    pop: &Population,
    trials: usize,
) -> Result<Vec<StackingTrialRecord>> {
    (0..trials as u64)
        .into_par_iter()
        .map(|t| run_stacking_pair(source, k, pop, t))
        .collect()
}

/// Monte Carlo summary for one `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub k: usize,
    pub trials: usize,
    pub r_k: MeanEstimate,
    pub r_2k: MeanEstimate,
    pub d: MeanEstimate,
    /// Mean and standard error of `R_k − R_2k` from per-trial gaps.
    pub gap: MeanEstimate,
    /// `4(R̂_k − R̂_2k) − Ê[D]` with its standard error.
    pub margin: MeanEstimate,
    pub min_pointwise_slack: f64,
}

impl CurveRow {
    pub fn from_records(k: usize, records: &[StackingTrialRecord]) -> CurveRow {
        let singles: Vec<f64> = records.iter().flat_map(|r| [r.r_g, r.r_gprime]).collect();
        let unions: Vec<f64> = records.iter().map(|r| r.r_union).collect();
        let ds: Vec<f64> = records.iter().map(|r| r.d).collect();
        let gaps: Vec<f64> = records.iter().map(|r| r.gap()).collect();
        let margins: Vec<f64> = records.iter().map(|r| 4.0 * r.gap() - r.d).collect();
        CurveRow {
            k,
            trials: records.len(),
            r_k: mean_estimate(&singles),
            r_2k: mean_estimate(&unions),
            d: mean_estimate(&ds),
            gap: mean_estimate(&gaps),
            margin: mean_estimate(&margins),
            min_pointwise_slack: records
                .iter()
                .map(|r| r.pointwise_slack)
                .fold(f64::INFINITY, f64::min),
        }
    }

    /// `R̂_2k ≤ R̂_k + z·se`.
    pub fn monotone(&self, z: f64) -> bool {
        self.gap.mean >= -z * self.gap.stderr
    }

    /// Bound margin `≥ −z·se`.
    pub fn bound_holds(&self, z: f64) -> bool {
        self.margin.mean >= -z * self.margin.stderr
    }
}

#[derive(Debug, Clone)]
pub struct StackingCurve {
    pub rows: Vec<CurveRow>,
    pub records: Vec<StackingTrialRecord>,
}

/// Traces the learning curve at each `k`; the source is reseeded per `k`.
pub fn stacking_curve(
    source: &BaseModelSource,
    k_values: &[usize],
    trials: usize,
    pop: &Population,
) -> Result<StackingCurve> {
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be at least 1".into()));
    }
    let mut rows = Vec::new();
    let mut records = Vec::new();
    for &k in k_values {
        let src = source.reseeded(derive_seed(source.base_seed, &[k as u64]));
        let recs = run_trials(&src, k, pop, trials)?;
        rows.push(CurveRow::from_records(k, &recs));
        records.extend(recs);
    }
    Ok(StackingCurve { rows, records })
}
