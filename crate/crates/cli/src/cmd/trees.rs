//! Regression trees: exact DP learning curves and greedy-tree agreement.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use dlab_core::closure::{
    certify_tree_agreement, CurveVerdict, GreedyConfig, TreeDp, TreeTrainerConfig, CLOSURE_TOL,
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
    /// Population files with labels in `[0, 1]`.
    pub fixtures: Vec<PathBuf>,
    pub random_fixtures: usize,
    pub max_side: usize,
    pub depths: Vec<usize>,
    pub trainer: TreeTrainerConfig,
    /// Write the trained and midpoint trees as JSON.
    pub save_models: bool,
}

impl Default for Params {
    fn default() -> Self {
        Params {
            fixtures: Vec::new(),
            random_fixtures: 10,
            max_side: 8,
            depths: vec![1, 2, 3],
            trainer: TreeTrainerConfig {
                greedy: GreedyConfig {
                    restarts: 2,
                    top: 3,
                    sample_fraction: 0.7,
                },
                ..TreeTrainerConfig::default()
            },
            save_models: true,
        }
    }
}

#[derive(Debug, Serialize)]
struct CurveRow {
    fixture: String,
    depth: usize,
    risk: f64,
    leaves: usize,
}

#[derive(Debug, Serialize)]
struct AgreementRow {
    fixture: String,
    depth: usize,
    risk_n: f64,
    risk_2n: f64,
    eps1: f64,
    eps2: f64,
    disagreement: f64,
    bound_rhs: f64,
    strongly_convex_rhs: f64,
    slack: f64,
    identity_residual: f64,
    closure_max_error: f64,
    closure_probes: usize,
    depth_mid: usize,
    verdict: &'static str,
    passed: &'static str,
}

fn load_fixture(ctx: &Ctx, path: &Path) -> Result<Population> {
    let full = resolve_path(&ctx.base_dir, path);
    let text = std::fs::read_to_string(&full)
        .with_context(|| format!("reading fixture {}", full.display()))?;
    let pop: Population = serde_json::from_str(&text)
        .with_context(|| format!("parsing fixture {}", full.display()))?;
    if let Some(bad) = pop
        .points()
        .iter()
        .flat_map(|p| p.y.iter())
        .find(|v| !(0.0..=1.0).contains(*v))
    {
        bail!(
            "fixture {}: tree labels must lie in [0, 1], found {bad}",
            full.display()
        );
    }
    Ok(pop)
}

pub fn run(ctx: &Ctx, p: &Params) -> Result<Outcome> {
    if p.depths.is_empty() || p.depths.contains(&0) {
        bail!("config error at `experiment.depths`: need positive depths");
    }
    let mut fixtures: Vec<(String, Population)> = Vec::new();
    for path in &p.fixtures {
        fixtures.push((fixture_name(path), load_fixture(ctx, path)?));
    }
    for r in 0..p.random_fixtures {
        let mut rng = rng_for(ctx.seed, &[1, r as u64]);
        let dims = rng.gen_range(1..=2);
        let side = rng.gen_range(3..=p.max_side.max(3));
        fixtures.push((
            format!("random-{r}"),
            gen::tree_fixture(&mut rng, dims, side)?,
        ));
    }
    let max_depth = 2 * p.depths.iter().copied().max().unwrap_or(1);

    let mut reports = ReportSet::default();
    let mut curve_rows = Vec::new();
    for (name, pop) in &fixtures {
        let mut dp = TreeDp::new(pop, p.trainer.budget)?;
        let mut prev = f64::INFINITY;
        for depth in 0..=max_depth {
            let (tree, risk) = dp.solve(pop, depth)?;
            // optimal risks over nested classes never increase
            let slack = prev - risk;
            reports.record("local-learning-curve", slack.min(1.0), slack >= 0.0);
            prev = risk;
            curve_rows.push(CurveRow {
                fixture: name.clone(),
                depth,
                risk,
                leaves: tree.leaves(),
            });
        }
    }

    let jobs: Vec<(usize, usize)> = (0..fixtures.len())
        .flat_map(|f| p.depths.iter().map(move |d| (f, *d)))
        .collect();
    let results: Vec<_> = jobs
        .par_iter()
        .map(|&(f, depth)| -> Result<_> {
            let mut cfg = p.trainer;
            cfg.seeds = [
                derive_seed(ctx.seed, &[2, f as u64, depth as u64, cfg.seeds[0]]),
                derive_seed(ctx.seed, &[2, f as u64, depth as u64, cfg.seeds[1]]),
            ];
            Ok((
                f,
                depth,
                certify_tree_agreement(&fixtures[f].1, depth, &cfg)?,
            ))
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::new();
    for (f, depth, ag) in &results {
        let c = &ag.certificate;
        let name = &fixtures[*f].0;
        reports.record("tree-agreement", c.slack, c.verdict == CurveVerdict::Pass);
        reports.record(
            "tree-midpoint-closure",
            CLOSURE_TOL - c.closure.max_error,
            c.closure.passed,
        );
        reports.record(
            "midpoint-identity",
            identity_margin(&ctx.tol, c.disagreement, c.identity.slack),
            c.identity.passed,
        );
        let sc_slack = c.strongly_convex_rhs - c.disagreement;
        reports.record(
            "closure-agreement",
            sc_slack,
            c.verdict == CurveVerdict::Pass && sc_slack >= -ctx.tol.absolute,
        );
        rows.push(AgreementRow {
            fixture: name.clone(),
            depth: *depth,
            risk_n: c.risk_n.value,
            risk_2n: c.risk_2n.value,
            eps1: c.eps1,
            eps2: c.eps2,
            disagreement: c.disagreement,
            bound_rhs: c.bound_rhs,
            strongly_convex_rhs: c.strongly_convex_rhs,
            slack: c.slack,
            identity_residual: c.identity.slack,
            closure_max_error: c.closure.max_error,
            closure_probes: c.closure.probes,
            depth_mid: c.closure.level_mid,
            verdict: verdict_name(c.verdict),
            passed: flag(c.passed()),
        });
        if p.save_models {
            let stem = format!("trees_{name}_d{depth}");
            ctx.out
                .text(&format!("{stem}_a.json"), &ag.trees[0].to_json())?;
            ctx.out
                .text(&format!("{stem}_b.json"), &ag.trees[1].to_json())?;
            ctx.out
                .text(&format!("{stem}_mid.json"), &ag.midpoint.to_json())?;
        }
    }

    ctx.out.csv("trees_curve.csv", &curve_rows)?;
    ctx.out.csv("trees_agreement.csv", &rows)?;
    ctx.out.text(
        "trees.gp",
        &gnuplot(
            "trees_agreement.csv",
            "Depth-limited trees: disagreement vs 4 x local gap",
            "depth",
            "value",
            false,
            &[
                Series {
                    x: "depth",
                    y: "disagreement",
                    title: "D",
                },
                Series {
                    x: "depth",
                    y: "bound_rhs",
                    title: "4(R_n - R_2n + eps)",
                },
            ],
        ),
    )?;
    let mut summary = String::new();
    let _ = writeln!(
        summary,
        "trees: {} fixtures, depths {:?}",
        fixtures.len(),
        p.depths
    );
    let tightest = rows.iter().map(|r| r.slack).fold(f64::INFINITY, f64::min);
    let _ = writeln!(summary, "smallest bound slack {tightest:.3e}");
    Ok(Outcome { reports, summary })
}
