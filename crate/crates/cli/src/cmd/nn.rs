//! ReLU networks: exact midpoint closure on random DAGs and trained agreement.

use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use dlab_core::closure::{
    certify_nn_agreement, check_nn_closure, probe_points, CurveVerdict, NnAgreementConfig,
    CLOSURE_TOL, OFF_SUPPORT_PROBES,
};
use dlab_core::report::ReportSet;
use dlab_core::seed::{derive_seed, rng_for};
use dlab_core::Population;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{fixture_name, flag, identity_margin, verdict_name, Ctx, Outcome};
use crate::config::resolve_path;
use crate::gen;
use crate::output::{gnuplot, Series};

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Params {
    /// Random network pairs checked for exact midpoint closure.
    pub dag_pairs: usize,
    pub max_input_dim: usize,
    pub max_size: usize,
    pub max_output_dim: usize,
    /// Populations for the trained agreement experiment.
    pub fixtures: Vec<PathBuf>,
    pub random_fixtures: usize,
    pub sizes: Vec<usize>,
    pub trainer: NnAgreementConfig,
}

impl Default for Params {
    fn default() -> Self {
        Params {
            dag_pairs: 200,
            max_input_dim: 3,
            max_size: 8,
            max_output_dim: 2,
            fixtures: Vec::new(),
            random_fixtures: 3,
            sizes: vec![2, 4],
            trainer: NnAgreementConfig::default(),
        }
    }
}

#[derive(Debug, Serialize)]
struct MidpointRow {
    pair: usize,
    input_dim: usize,
    size1: usize,
    size2: usize,
    size_mid: usize,
    output_dim: usize,
    probes: usize,
    max_error: f64,
    passed: &'static str,
}

#[derive(Debug, Serialize)]
struct AgreementRow {
    fixture: String,
    size: usize,
    risk_n: f64,
    risk_2n: f64,
    eps1: f64,
    eps2: f64,
    disagreement: f64,
    bound_rhs: f64,
    slack: f64,
    identity_residual: f64,
    closure_max_error: f64,
    size_mid: usize,
    verdict: &'static str,
}

pub fn run(ctx: &Ctx, p: &Params) -> Result<Outcome> {
    if p.max_input_dim == 0 || p.max_size == 0 || p.max_output_dim == 0 {
        bail!("config error at `experiment`: network dimensions must be positive");
    }
    if p.sizes.contains(&0) {
        bail!("config error at `experiment.sizes`: need positive sizes");
    }
    let mut reports = ReportSet::default();

    let mid_rows: Vec<MidpointRow> = (0..p.dag_pairs)
        .into_par_iter()
        .map(|i| -> Result<MidpointRow> {
            let mut rng = rng_for(ctx.seed, &[1, i as u64]);
            let d_in = rng.gen_range(1..=p.max_input_dim);
            let d_out = rng.gen_range(1..=p.max_output_dim);
            let (s1, s2) = (rng.gen_range(1..=p.max_size), rng.gen_range(1..=p.max_size));
            let n1 = gen::dag(&mut rng, d_in, s1, d_out)?;
            let n2 = gen::dag(&mut rng, d_in, s2, d_out)?;
            let records = (0..8)
                .map(|_| {
                    (
                        (0..d_in).map(|_| rng.gen_range(-2.0..2.0)).collect(),
                        vec![0.0; d_out],
                    )
                })
                .collect();
            let pop = Population::uniform(records)?;
            let points = probe_points(
                &pop,
                OFF_SUPPORT_PROBES,
                derive_seed(ctx.seed, &[2, i as u64]),
            );
            let (mid, check) = check_nn_closure(&n1, &n2, &points)?;
            Ok(MidpointRow {
                pair: i,
                input_dim: d_in,
                size1: s1,
                size2: s2,
                size_mid: mid.size(),
                output_dim: d_out,
                probes: check.probes,
                max_error: check.max_error,
                passed: flag(check.passed),
            })
        })
        .collect::<Result<_>>()?;
    for r in &mid_rows {
        reports.record(
            "nn-midpoint-closure",
            CLOSURE_TOL - r.max_error,
            r.passed == "pass",
        );
    }

    let mut fixtures: Vec<(String, Population)> = Vec::new();
    for path in &p.fixtures {
        let full = resolve_path(&ctx.base_dir, path);
        let text = std::fs::read_to_string(&full)
            .with_context(|| format!("reading fixture {}", full.display()))?;
        let pop = serde_json::from_str(&text)
            .with_context(|| format!("parsing fixture {}", full.display()))?;
        fixtures.push((fixture_name(path), pop));
    }
    for r in 0..p.random_fixtures {
        let mut rng = rng_for(ctx.seed, &[3, r as u64]);
        let side = rng.gen_range(4..=7);
        fixtures.push((format!("random-{r}"), gen::tree_fixture(&mut rng, 2, side)?));
    }
    let jobs: Vec<(usize, usize)> = (0..fixtures.len())
        .flat_map(|f| p.sizes.iter().map(move |s| (f, *s)))
        .collect();
    let agreements: Vec<_> = jobs
        .par_iter()
        .map(|&(f, size)| -> Result<_> {
            let mut cfg = p.trainer;
            cfg.seeds = cfg
                .seeds
                .map(|s| derive_seed(ctx.seed, &[4, f as u64, size as u64, s]));
            Ok((f, size, certify_nn_agreement(&fixtures[f].1, size, &cfg)?))
        })
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for (f, size, ag) in &agreements {
        let c = &ag.certificate;
        reports.record(
            "nn-agreement",
            c.slack,
            c.verdict == CurveVerdict::Consistent,
        );
        reports.record(
            "nn-midpoint-closure",
            CLOSURE_TOL - c.closure.max_error,
            c.closure.passed,
        );
        reports.record(
            "midpoint-identity",
            identity_margin(&ctx.tol, c.disagreement, c.identity.slack),
            c.identity.passed,
        );
        rows.push(AgreementRow {
            fixture: fixtures[*f].0.clone(),
            size: *size,
            risk_n: c.risk_n.value,
            risk_2n: c.risk_2n.value,
            eps1: c.eps1,
            eps2: c.eps2,
            disagreement: c.disagreement,
            bound_rhs: c.bound_rhs,
            slack: c.slack,
            identity_residual: c.identity.slack,
            closure_max_error: c.closure.max_error,
            size_mid: ag.midpoint.size(),
            verdict: verdict_name(c.verdict),
        });
    }

    ctx.out.csv("nn_midpoint.csv", &mid_rows)?;
    ctx.out.csv("nn_agreement.csv", &rows)?;
    ctx.out.text(
        "nn.gp",
        &gnuplot(
            "nn_agreement.csv",
            "ReLU networks: disagreement vs 4 x proxy gap",
            "size",
            "value",
            false,
            &[
                Series {
                    x: "size",
                    y: "disagreement",
                    title: "D",
                },
                Series {
                    x: "size",
                    y: "bound_rhs",
                    title: "4(R_n - R_2n + eps), proxy",
                },
            ],
        ),
    )?;
    let mut summary = String::new();
    let worst = mid_rows.iter().map(|r| r.max_error).fold(0.0, f64::max);
    let _ = writeln!(
        summary,
        "nn: {} random pairs, max midpoint evaluation error {worst:.3e}",
        mid_rows.len()
    );
    let _ = writeln!(
        summary,
        "trained agreement rows use best-found risks and are reported as proxy-consistent only"
    );
    Ok(Outcome { reports, summary })
}
