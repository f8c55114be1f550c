//! Gradient boosting with an approximate statistical-query oracle.

use std::fmt::Write as _;

use anyhow::{bail, Result};
use dlab_core::boosting::{
    certify_gb_rate, certify_gb_two_run, gradient_boost, tau_star, OracleMode, SqOracle, STEP_TOL,
};
use dlab_core::report::ReportSet;
use dlab_core::seed::{derive_seed, rng_for};
use dlab_core::Population;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{flag, identity_margin, Ctx, Outcome};
use crate::gen;
use crate::output::{gnuplot, Series};

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Params {
    pub classes: usize,
    pub support: usize,
    pub label_dim: usize,
    pub min_atoms: usize,
    pub max_atoms: usize,
    pub steps: usize,
    /// Constant oracle error `ε_t` for the inexact modes.
    pub eps: f64,
    pub modes: Vec<OracleMode>,
    pub pairs: usize,
}

impl Default for Params {
    fn default() -> Self {
        Params {
            classes: 10,
            support: 20,
            label_dim: 1,
            min_atoms: 4,
            max_atoms: 16,
            steps: 64,
            eps: 0.01,
            modes: vec![
                OracleMode::Exact,
                OracleMode::AdversarialFloor,
                OracleMode::RandomFeasible,
            ],
            pairs: 50,
        }
    }
}

#[derive(Debug, Serialize)]
struct RateRow {
    class: usize,
    atoms: usize,
    mode: &'static str,
    t: usize,
    excess: f64,
    rate_rhs: f64,
    recurrence_lhs: f64,
    recurrence_rhs: f64,
    dual_lhs: f64,
    dual_rhs: f64,
}

#[derive(Debug, Serialize)]
struct PairRow {
    pair: usize,
    class: usize,
    k: usize,
    tau_star: f64,
    mse1: f64,
    mse2: f64,
    mse_mid: f64,
    disagreement: f64,
    identity_value: f64,
    anchor_slack: f64,
    rate_slack: f64,
    passed: &'static str,
}

fn mode_name(m: OracleMode) -> &'static str {
    match m {
        OracleMode::Exact => "exact",
        OracleMode::AdversarialFloor => "adversarial_floor",
        OracleMode::RandomFeasible => "random_feasible",
    }
}

struct Instance {
    pop: Population,
    class: dlab_core::boosting::WeakLearnerClass,
    tau: f64,
}

fn instance(ctx: &Ctx, p: &Params, c: usize) -> Result<Instance> {
    let mut rng = rng_for(ctx.seed, &[1, c as u64]);
    let pop = gen::population(&mut rng, p.support, p.label_dim, -1.0, 1.0)?;
    let base = rng.gen_range(p.min_atoms..=p.max_atoms);
    let class = gen::class(&mut rng, &pop, base)?;
    let (_, tau) = tau_star(&class, &pop)?;
    Ok(Instance { pop, class, tau })
}

fn oracle(mode: OracleMode, eps: f64, seed: u64) -> Result<SqOracle> {
    let schedule = if mode == OracleMode::Exact {
        Vec::new()
    } else {
        vec![eps]
    };
    Ok(SqOracle::new(mode, schedule, seed)?)
}

pub fn run(ctx: &Ctx, p: &Params) -> Result<Outcome> {
    if p.classes == 0 || p.support == 0 || p.label_dim == 0 || p.steps == 0 {
        bail!(
            "config error at `experiment`: classes, support, label_dim and steps must be positive"
        );
    }
    if p.min_atoms == 0 || p.min_atoms > p.max_atoms {
        bail!("config error at `experiment.min_atoms`: need 1 <= min_atoms <= max_atoms");
    }
    let instances: Vec<Instance> = (0..p.classes)
        .into_par_iter()
        .map(|c| instance(ctx, p, c))
        .collect::<Result<_>>()?;

    let mut reports = ReportSet::default();
    let mut rate_rows = Vec::new();
    let runs: Vec<(usize, OracleMode)> = (0..p.classes)
        .flat_map(|c| p.modes.iter().map(move |m| (c, *m)))
        .collect();
    let traced: Vec<_> = runs
        .par_iter()
        .map(|&(c, mode)| -> Result<_> {
            let inst = &instances[c];
            let o = oracle(mode, p.eps, derive_seed(ctx.seed, &[2, c as u64]))?;
            let (_, trace) = gradient_boost(&inst.class, &inst.pop, p.steps, &o)?;
            let rate = certify_gb_rate(&trace, inst.tau);
            Ok((c, mode, trace, rate))
        })
        .collect::<Result<_>>()?;
    for (c, mode, trace, rate) in &traced {
        let step = trace.max_step_violation();
        reports.record("gb-single-step", 0.0 - step, step <= 0.0);
        reports.record(
            "gb-correlation-lower-bound",
            0.0 - rate.max_dual_violation,
            rate.dual_passed,
        );
        reports.record(
            "gb-gap-recurrence",
            0.0 - rate.max_recurrence_violation,
            rate.recurrence_passed,
        );
        reports.record("gb-rate", 0.0 - rate.max_rate_violation, rate.rate_passed);
        for r in &rate.rows {
            rate_rows.push(RateRow {
                class: *c,
                atoms: instances[*c].class.len(),
                mode: mode_name(*mode),
                t: r.t,
                excess: r.excess,
                rate_rhs: r.rate_rhs,
                recurrence_lhs: r.recurrence_lhs,
                recurrence_rhs: r.recurrence_rhs,
                dual_lhs: r.dual_lhs,
                dual_rhs: r.dual_rhs,
            });
        }
    }

    // pairs of independent runs on the same class, each with a random feasible oracle
    let pair_rows: Vec<PairRow> = (0..p.pairs)
        .into_par_iter()
        .map(|i| -> Result<PairRow> {
            let c = i % p.classes;
            let inst = &instances[c];
            let o1 = oracle(
                OracleMode::RandomFeasible,
                p.eps,
                derive_seed(ctx.seed, &[3, i as u64, 1]),
            )?;
            let o2 = oracle(
                OracleMode::RandomFeasible,
                p.eps,
                derive_seed(ctx.seed, &[3, i as u64, 2]),
            )?;
            let (f1, t1) = gradient_boost(&inst.class, &inst.pop, p.steps, &o1)?;
            let (f2, t2) = gradient_boost(&inst.class, &inst.pop, p.steps, &o2)?;
            let rep = certify_gb_two_run(&f1, &t1, &f2, &t2, inst.tau, &inst.pop, ctx.tol)?;
            Ok(PairRow {
                pair: i,
                class: c,
                k: p.steps,
                tau_star: inst.tau,
                mse1: rep.anchor.mse1,
                mse2: rep.anchor.mse2,
                mse_mid: rep.anchor.mse_mid,
                disagreement: rep.anchor.disagreement,
                identity_value: rep.identity_value,
                anchor_slack: rep.anchor.slack,
                rate_slack: rep.rate.slack,
                passed: flag(rep.passed()),
            })
        })
        .collect::<Result<_>>()?;
    for r in &pair_rows {
        reports.record(
            "gb-agreement",
            r.anchor_slack.min(r.rate_slack),
            r.passed == "pass",
        );
        let residual = r.identity_value - r.disagreement;
        let margin = identity_margin(&ctx.tol, r.disagreement, residual);
        reports.record("midpoint-identity", margin, margin >= 0.0);
    }

    ctx.out.csv("boost_rates.csv", &rate_rows)?;
    ctx.out.csv("boost_pairs.csv", &pair_rows)?;
    ctx.out.text(
        "boost_rates.gp",
        &gnuplot(
            "boost_rates.csv",
            "Gradient boosting: excess risk vs rate bound",
            "t",
            "value",
            true,
            &[
                Series {
                    x: "t",
                    y: "excess",
                    title: "excess",
                },
                Series {
                    x: "t",
                    y: "rate_rhs",
                    title: "rate bound",
                },
            ],
        ),
    )?;
    let mut summary = String::new();
    let _ = writeln!(
        summary,
        "boost: {} classes x {} oracle modes, {} steps, {} pairs",
        p.classes,
        p.modes.len(),
        p.steps,
        p.pairs
    );
    let worst_rate = traced
        .iter()
        .map(|t| t.3.max_rate_violation)
        .fold(f64::NEG_INFINITY, f64::max);
    let _ = writeln!(
        summary,
        "max rate violation {worst_rate:.3e} (tolerance {STEP_TOL:e})"
    );
    Ok(Outcome { reports, summary })
}
