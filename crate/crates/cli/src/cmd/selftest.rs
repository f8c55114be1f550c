//! Randomized identity and anchor suite, plus optional predictor fixtures.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{Context, Result};
use dlab_core::frankwolfe::{builtin_losses, pointwise_anchor_slacks, CertifiedLoss};
use dlab_core::report::ReportSet;
use dlab_core::seed::{derive_seed, rng_for};
use dlab_core::stacking::ols_span;
use dlab_core::{
    check_anchor_bound, check_local_curve_bound, check_midpoint_identity, Population, Predictor,
};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{identity_margin, Ctx, Outcome};
use crate::config::resolve_path;
use crate::gen;

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Params {
    pub instances: usize,
    pub max_support: usize,
    pub max_label_dim: usize,
    /// Files holding `{population, f1, f2}`; `null` entries stand for missing values.
    pub fixtures: Vec<PathBuf>,
}

impl Default for Params {
    fn default() -> Self {
        Params {
            instances: 1000,
            max_support: 12,
            max_label_dim: 3,
            fixtures: Vec::new(),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Fixture {
    population: Population,
    f1: Vec<Vec<Option<f64>>>,
    f2: Vec<Vec<Option<f64>>>,
}

fn fixture_predictor(rows: Vec<Vec<Option<f64>>>) -> Result<Predictor> {
    let rows = rows
        .into_iter()
        .map(|r| r.into_iter().map(|v| v.unwrap_or(f64::NAN)).collect())
        .collect();
    Ok(Predictor::from_rows(rows)?)
}

#[derive(Debug, Serialize)]
struct Row {
    instance: usize,
    support: usize,
    label_dim: usize,
    disagreement: f64,
    identity_rhs: f64,
    identity_residual: f64,
    anchor_slack: f64,
    curve_slack: f64,
    sc_squared_min_slack: f64,
    sc_softmax_min_slack: f64,
}

#[derive(Debug, Serialize)]
struct FixtureRow {
    fixture: String,
    disagreement: f64,
    identity_rhs: f64,
    identity_residual: f64,
    passed: bool,
}

fn span_risk(basis: &[Predictor], pop: &Population) -> Result<f64> {
    let arcs: Vec<Arc<Predictor>> = basis.iter().cloned().map(Arc::new).collect();
    Ok(ols_span(&arcs, pop)?.risk)
}

fn combo(rng: &mut impl Rng, basis: &[Predictor]) -> Result<Predictor> {
    let c: Vec<f64> = basis.iter().map(|_| rng.gen_range(-1.0..1.0)).collect();
    let refs: Vec<&Predictor> = basis.iter().collect();
    Ok(Predictor::linear_combination(&refs, &c)?)
}

pub fn run(ctx: &Ctx, p: &Params) -> Result<Outcome> {
    let max_d = p.max_label_dim.max(1);
    // loss certificates are per output dimension; build them once
    let mut losses: BTreeMap<(usize, usize), CertifiedLoss> = BTreeMap::new();
    for d in 1..=max_d {
        for (li, spec) in builtin_losses().iter().enumerate() {
            let cert = CertifiedLoss::new(
                spec.build()?,
                d,
                derive_seed(ctx.seed, &[9, li as u64, d as u64]),
            )?;
            losses.insert((li, d), cert);
        }
    }
    let tol = ctx.tol;
    let results: Vec<(Row, [bool; 4])> = (0..p.instances)
        .into_par_iter()
        .map(|i| -> Result<(Row, [bool; 4])> {
            let mut rng = rng_for(ctx.seed, &[1, i as u64]);
            let n = rng.gen_range(1..=p.max_support.max(1));
            let d = rng.gen_range(1..=max_d);
            let scale = 10f64.powf(rng.gen_range(-2.0..1.0));
            let pop = gen::population(&mut rng, n, d, -scale, scale)?;
            let b = rng.gen_range(1..=4);
            let basis: Vec<Predictor> = (0..2 * b)
                .map(|_| gen::predictor(&mut rng, &pop, scale))
                .collect();
            let f1 = combo(&mut rng, &basis[..b])?;
            let f2 = combo(&mut rng, &basis[..b])?;
            let id = check_midpoint_identity(&f1, &f2, &pop, tol)?;
            let r_n = span_risk(&basis[..b], &pop)?;
            let r_2n = span_risk(&basis, &pop)?;
            let anchor = check_anchor_bound(&f1, &f2, r_n, &pop, tol)?;
            let eps = (id.mse1 - r_n).max(id.mse2 - r_n).max(0.0);
            let curve = check_local_curve_bound(&f1, &f2, r_n, r_2n, eps, &pop, tol)?;
            let sc_min = |li: usize| -> Result<f64> {
                let s = pointwise_anchor_slacks(&f1, &f2, &losses[&(li, d)], &pop)?;
                Ok(s.into_iter().fold(f64::INFINITY, f64::min))
            };
            let (sq, ce) = (sc_min(0)?, sc_min(1)?);
            let sc_ok = sq >= -tol.absolute && ce >= -tol.absolute;
            let row = Row {
                instance: i,
                support: n,
                label_dim: d,
                disagreement: id.disagreement,
                identity_rhs: id.slack + id.disagreement,
                identity_residual: id.slack,
                anchor_slack: anchor.slack,
                curve_slack: curve.slack,
                sc_squared_min_slack: sq,
                sc_softmax_min_slack: ce,
            };
            Ok((row, [id.passed, anchor.passed, curve.passed, sc_ok]))
        })
        .collect::<Result<_>>()?;

    let mut reports = ReportSet::default();
    for (r, ok) in &results {
        let id_slack = identity_margin(&tol, r.disagreement, r.identity_residual);
        reports.record("midpoint-identity", id_slack, ok[0]);
        reports.record("midpoint-anchor", r.anchor_slack, ok[1]);
        reports.record("local-learning-curve", r.curve_slack, ok[2]);
        reports.record(
            "sc-midpoint-anchor",
            r.sc_squared_min_slack.min(r.sc_softmax_min_slack),
            ok[3],
        );
    }
    for cert in losses.values() {
        reports.record(
            "sc-midpoint-anchor",
            cert.report.pointwise_anchor_slack,
            cert.report.passed,
        );
    }
    let rows: Vec<Row> = results.into_iter().map(|(r, _)| r).collect();
    ctx.out.csv("selftest.csv", &rows)?;

    let mut fixture_rows = Vec::new();
    for path in &p.fixtures {
        let full = resolve_path(&ctx.base_dir, path);
        let text = std::fs::read_to_string(&full)
            .with_context(|| format!("reading fixture {}", full.display()))?;
        let fx: Fixture = serde_json::from_str(&text)
            .with_context(|| format!("parsing fixture {}", full.display()))?;
        let (f1, f2) = (fixture_predictor(fx.f1)?, fixture_predictor(fx.f2)?);
        let id = check_midpoint_identity(&f1, &f2, &fx.population, tol)?;
        let passed = id.passed && id.slack.is_finite();
        let slack = identity_margin(&tol, id.disagreement, id.slack);
        reports.record("midpoint-identity", slack, passed);
        fixture_rows.push(FixtureRow {
            fixture: path.display().to_string(),
            disagreement: id.disagreement,
            identity_rhs: id.slack + id.disagreement,
            identity_residual: id.slack,
            passed,
        });
    }
    if !fixture_rows.is_empty() {
        ctx.out.csv("selftest_fixtures.csv", &fixture_rows)?;
    }

    let mut summary = String::new();
    let _ = writeln!(
        summary,
        "selftest: {} random instances, {} fixtures",
        rows.len(),
        fixture_rows.len()
    );
    let worst = rows
        .iter()
        .map(|r| r.identity_residual.abs() / (1.0 + r.disagreement))
        .fold(0.0, f64::max);
    let _ = writeln!(summary, "max relative identity residual: {worst:.3e}");
    for f in fixture_rows.iter().filter(|f| !f.passed) {
        let _ = writeln!(
            summary,
            "fixture {} failed the identity check (residual {})",
            f.fixture, f.identity_residual
        );
    }
    Ok(Outcome { reports, summary })
}
