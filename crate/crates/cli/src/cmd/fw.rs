//! Frank-Wolfe over the scaled hull under strongly convex losses.

use std::fmt::Write as _;

use anyhow::{bail, Result};
use dlab_core::boosting::{tau_star, OracleMode, SqOracle, WeakLearnerClass};
use dlab_core::frankwolfe::{
    builtin_losses, certify_fw_agreement, certify_fw_rate, frank_wolfe, pointwise_anchor_slacks,
    risk_over_ktau, CertifiedLoss, FwOptions, LossSpec, RiskInterval,
};
use dlab_core::report::ReportSet;
use dlab_core::seed::{derive_seed, rng_for};
use dlab_core::{Point, Population};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{flag, Ctx, Outcome};
use crate::gen;
use crate::output::{gnuplot, Series};

/// Tolerance for the squared-loss cross-check against the midpoint corollary.
pub const CROSS_CHECK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Params {
    pub losses: Vec<LossSpec>,
    /// Instances per loss; the label dimension cycles through 1, 2, 3.
    pub instances: usize,
    pub support: usize,
    pub min_atoms: usize,
    pub max_atoms: usize,
    /// `τ` as a fraction of the atomic norm of the unconstrained fit.
    pub tau_scale: f64,
    pub steps: usize,
    pub eps: f64,
    pub pairs: usize,
}

impl Default for Params {
    fn default() -> Self {
        Params {
            losses: builtin_losses(),
            instances: 10,
            support: 16,
            min_atoms: 3,
            max_atoms: 8,
            tau_scale: 0.7,
            steps: 64,
            eps: 0.01,
            pairs: 50,
        }
    }
}

struct Instance {
    loss_index: usize,
    pop: Population,
    class: WeakLearnerClass,
    loss: CertifiedLoss,
    tau: f64,
    anchor: RiskInterval,
}

#[derive(Debug, Serialize)]
struct LossRow {
    loss: usize,
    name: String,
    dim: usize,
    probes: usize,
    strong_convexity_slack: f64,
    gradient_lipschitz_ratio: f64,
    finite_difference_error: f64,
    pointwise_anchor_slack: f64,
    hessian_error: f64,
    passed: &'static str,
}

#[derive(Debug, Serialize)]
struct RateRow {
    instance: usize,
    loss: usize,
    mode: &'static str,
    t: usize,
    excess: f64,
    rate_rhs: f64,
    progress: f64,
    step_rhs: f64,
    recurrence_rhs: f64,
    gap_prev: f64,
    dual_rhs: f64,
    tau: f64,
    atomic_norm: Option<f64>,
}

#[derive(Debug, Serialize)]
struct PairRow {
    pair: usize,
    instance: usize,
    loss: usize,
    tau: f64,
    anchor_lower: f64,
    anchor_upper: f64,
    risk1: f64,
    risk2: f64,
    disagreement: f64,
    anchor_slack: f64,
    rate_slack: f64,
    squared_cross_check: Option<f64>,
    min_pointwise_slack: f64,
    passed: &'static str,
}

/// Target distributions for cross-entropy, raw labels otherwise.
fn labels_for(spec: &LossSpec, pop: Population) -> Result<Population> {
    match spec {
        LossSpec::Squared => Ok(pop),
        LossSpec::SoftmaxCe { .. } => {
            let points = pop
                .points()
                .iter()
                .map(|pt| {
                    let s: f64 = pt.y.iter().sum();
                    Point {
                        x: pt.x.clone(),
                        y: pt.y.iter().map(|v| v / s).collect(),
                        w: pt.w,
                    }
                })
                .collect();
            Ok(Population::new(points)?)
        }
    }
}

fn instance(ctx: &Ctx, p: &Params, li: usize, i: usize) -> Result<Instance> {
    let spec = &p.losses[li];
    let d = 1 + i % 3;
    let mut rng = rng_for(ctx.seed, &[1, li as u64, i as u64]);
    let raw = gen::population(&mut rng, p.support, d, 0.05, 1.0)?;
    let pop = labels_for(spec, raw)?;
    let base = rng.gen_range(p.min_atoms..=p.max_atoms);
    let class = gen::class(&mut rng, &pop, base)?;
    let loss = CertifiedLoss::new(
        spec.build()?,
        d,
        derive_seed(ctx.seed, &[2, li as u64, d as u64]),
    )?;
    let (_, ts) = tau_star(&class, &pop)?;
    let tau = p.tau_scale * ts;
    let anchor = risk_over_ktau(&class, tau, &loss, &pop)?;
    Ok(Instance {
        loss_index: li,
        pop,
        class,
        loss,
        tau,
        anchor,
    })
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
    if p.losses.is_empty() || p.instances == 0 || p.support == 0 || p.steps == 0 {
        bail!(
            "config error at `experiment`: losses, instances, support and steps must be non-empty"
        );
    }
    if p.min_atoms == 0 || p.min_atoms > p.max_atoms {
        bail!("config error at `experiment.min_atoms`: need 1 <= min_atoms <= max_atoms");
    }
    if !(p.tau_scale > 0.0 && p.tau_scale.is_finite()) {
        bail!("config error at `experiment.tau_scale`: must be positive");
    }
    let keys: Vec<(usize, usize)> = (0..p.losses.len())
        .flat_map(|l| (0..p.instances).map(move |i| (l, i)))
        .collect();
    let instances: Vec<Instance> = keys
        .par_iter()
        .map(|&(l, i)| instance(ctx, p, l, i))
        .collect::<Result<_>>()?;

    let mut reports = ReportSet::default();
    let mut loss_rows = Vec::new();
    for inst in &instances {
        let r = &inst.loss.report;
        if loss_rows
            .iter()
            .any(|l: &LossRow| l.loss == inst.loss_index && l.dim == inst.loss.dim())
        {
            continue;
        }
        reports.record("sc-midpoint-anchor", r.pointwise_anchor_slack, r.passed);
        loss_rows.push(LossRow {
            loss: inst.loss_index,
            name: inst.loss.loss().name().to_string(),
            dim: inst.loss.dim(),
            probes: r.probes,
            strong_convexity_slack: r.strong_convexity_slack,
            gradient_lipschitz_ratio: r.gradient_lipschitz_ratio,
            finite_difference_error: r.finite_difference_error,
            pointwise_anchor_slack: r.pointwise_anchor_slack,
            hessian_error: r.hessian_error,
            passed: flag(r.passed),
        });
    }

    let modes = [
        (OracleMode::Exact, "exact"),
        (OracleMode::RandomFeasible, "random_feasible"),
    ];
    let runs: Vec<(usize, usize)> = (0..instances.len())
        .flat_map(|i| (0..modes.len()).map(move |m| (i, m)))
        .collect();
    let traced: Vec<_> = runs
        .par_iter()
        .map(|&(i, m)| -> Result<_> {
            let inst = &instances[i];
            let o = oracle(modes[m].0, p.eps, derive_seed(ctx.seed, &[3, i as u64]))?;
            let (_, trace) = frank_wolfe(
                &inst.class,
                &inst.pop,
                inst.tau,
                p.steps,
                &inst.loss,
                &o,
                FwOptions::default(),
            )?;
            let rate = certify_fw_rate(&trace, &inst.anchor);
            Ok((i, m, trace, rate))
        })
        .collect::<Result<_>>()?;
    let mut rate_rows = Vec::new();
    for (i, m, trace, rate) in &traced {
        let anchor_ok = instances[*i].anchor.converged;
        reports.record(
            "fw-single-step",
            0.0 - rate.max_step_violation,
            rate.step_passed,
        );
        reports.record(
            "fw-correlation-lower-bound",
            0.0 - rate.max_dual_violation,
            rate.dual_passed,
        );
        reports.record(
            "fw-gap-recurrence",
            0.0 - rate.max_recurrence_violation,
            rate.recurrence_passed,
        );
        reports.record(
            "fw-rate",
            0.0 - rate.max_rate_violation,
            rate.rate_passed && anchor_ok,
        );
        reports.record(
            "fw-rate",
            0.0 - rate.max_feasibility_violation,
            rate.feasibility_passed,
        );
        for (r, step) in rate.rows.iter().zip(&trace.steps) {
            rate_rows.push(RateRow {
                instance: *i,
                loss: instances[*i].loss_index,
                mode: modes[*m].1,
                t: r.t,
                excess: r.excess,
                rate_rhs: r.rate_rhs,
                progress: r.progress,
                step_rhs: r.step_rhs,
                recurrence_rhs: r.recurrence_rhs,
                gap_prev: r.gap_prev,
                dual_rhs: r.dual_rhs,
                tau: trace.tau,
                atomic_norm: step.atomic_norm,
            });
        }
    }

    let no_track = FwOptions {
        track_atomic_norm: false,
    };
    let pair_rows: Vec<PairRow> = (0..p.pairs)
        .into_par_iter()
        .map(|j| -> Result<PairRow> {
            let i = j % instances.len();
            let inst = &instances[i];
            let o1 = oracle(
                OracleMode::RandomFeasible,
                p.eps,
                derive_seed(ctx.seed, &[4, j as u64, 1]),
            )?;
            let o2 = oracle(
                OracleMode::RandomFeasible,
                p.eps,
                derive_seed(ctx.seed, &[4, j as u64, 2]),
            )?;
            let (f1, t1) = frank_wolfe(
                &inst.class,
                &inst.pop,
                inst.tau,
                p.steps,
                &inst.loss,
                &o1,
                no_track,
            )?;
            let (f2, t2) = frank_wolfe(
                &inst.class,
                &inst.pop,
                inst.tau,
                p.steps,
                &inst.loss,
                &o2,
                no_track,
            )?;
            let rep = certify_fw_agreement(
                &f1,
                &t1,
                &f2,
                &t2,
                &inst.loss,
                &inst.anchor,
                &inst.pop,
                ctx.tol,
            )?;
            let cross_ok = rep
                .squared_cross_check
                .is_none_or(|c| c.abs() <= CROSS_CHECK_TOL);
            let slacks = pointwise_anchor_slacks(&f1, &f2, &inst.loss, &inst.pop)?;
            Ok(PairRow {
                pair: j,
                instance: i,
                loss: inst.loss_index,
                tau: inst.tau,
                anchor_lower: inst.anchor.lower,
                anchor_upper: inst.anchor.upper,
                risk1: rep.anchor.mse1,
                risk2: rep.anchor.mse2,
                disagreement: rep.anchor.disagreement,
                anchor_slack: rep.anchor.slack,
                rate_slack: rep.rate.slack,
                squared_cross_check: rep.squared_cross_check,
                min_pointwise_slack: slacks.into_iter().fold(f64::INFINITY, f64::min),
                passed: flag(rep.passed() && cross_ok),
            })
        })
        .collect::<Result<_>>()?;
    for r in &pair_rows {
        reports.record(
            "fw-agreement",
            r.anchor_slack.min(r.rate_slack),
            r.passed == "pass",
        );
        reports.record(
            "sc-midpoint-anchor",
            r.min_pointwise_slack,
            r.min_pointwise_slack >= -ctx.tol.absolute,
        );
    }

    ctx.out.csv("fw_losses.csv", &loss_rows)?;
    ctx.out.csv("fw_rates.csv", &rate_rows)?;
    ctx.out.csv("fw_pairs.csv", &pair_rows)?;
    ctx.out.text(
        "fw_rates.gp",
        &gnuplot(
            "fw_rates.csv",
            "Frank-Wolfe: excess risk vs rate bound",
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
        "fw: {} instances over {} losses, {} steps, {} pairs",
        instances.len(),
        p.losses.len(),
        p.steps,
        p.pairs
    );
    let unconverged = instances.iter().filter(|x| !x.anchor.converged).count();
    let worst_gap = instances.iter().map(|x| x.anchor.gap).fold(0.0, f64::max);
    let _ = writeln!(
        summary,
        "anchor risk intervals: widest gap {worst_gap:.3e}, {unconverged} unconverged"
    );
    Ok(Outcome { reports, summary })
}
