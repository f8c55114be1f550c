//! Bound reports, the static registry of certified results, and the
//! traceability matrix built from it.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

/// How strongly a row is established.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    /// The inequality is checked exactly on every instance run.
    ProvedPerInstance,
    /// An expectation-level statement checked by Monte Carlo at a stated z.
    MonteCarloPass,
    /// Reported against upper-bound proxies; never affects the exit code.
    ProxyConsistent,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::ProvedPerInstance => "proved-per-instance",
            Verdict::MonteCarloPass => "monte-carlo-pass",
            Verdict::ProxyConsistent => "proxy-consistent",
        }
    }

    pub fn gates_exit(self) -> bool {
        self != Verdict::ProxyConsistent
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResultKind {
    Lemma,
    Corollary,
    Proposition,
    Theorem,
}

/// One certified result.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RegistryEntry {
    pub id: &'static str,
    pub kind: ResultKind,
    pub title: &'static str,
    pub module: &'static str,
    pub verdict: Verdict,
}

const fn entry(
    id: &'static str,
    kind: ResultKind,
    title: &'static str,
    module: &'static str,
    verdict: Verdict,
) -> RegistryEntry {
    RegistryEntry {
        id,
        kind,
        title,
        module,
        verdict,
    }
}

use ResultKind::*;
use Verdict::*;

pub const REGISTRY: [RegistryEntry; 22] = [
    entry(
        "midpoint-identity",
        Lemma,
        "Midpoint identity for squared loss",
        "population-core",
        ProvedPerInstance,
    ),
    entry(
        "midpoint-anchor",
        Corollary,
        "Disagreement via the midpoint anchor",
        "population-core",
        ProvedPerInstance,
    ),
    entry(
        "local-learning-curve",
        Lemma,
        "Local learning-curve bound from midpoint closure",
        "population-core",
        ProvedPerInstance,
    ),
    entry(
        "stacking-agreement",
        Theorem,
        "Agreement for stacked aggregation",
        "stacking",
        MonteCarloPass,
    ),
    entry(
        "stacking-near-tightness",
        Theorem,
        "Near-tightness of the factor 4",
        "stacking",
        MonteCarloPass,
    ),
    entry(
        "gb-single-step",
        Lemma,
        "Single iterate progress",
        "boosting",
        ProvedPerInstance,
    ),
    entry(
        "gb-correlation-lower-bound",
        Lemma,
        "Correlation lower bound from the anchor gap",
        "boosting",
        ProvedPerInstance,
    ),
    entry(
        "gb-gap-recurrence",
        Proposition,
        "Gap recurrence toward R(V(C))",
        "boosting",
        ProvedPerInstance,
    ),
    entry(
        "gb-rate",
        Theorem,
        "Weak-learning anchor gap upper bound",
        "boosting",
        ProvedPerInstance,
    ),
    entry(
        "gb-agreement",
        Theorem,
        "Gradient boosting agreement bound",
        "boosting",
        ProvedPerInstance,
    ),
    entry(
        "nn-midpoint-closure",
        Lemma,
        "Neural-network midpoint closure",
        "closure-classes",
        ProvedPerInstance,
    ),
    entry(
        "nn-agreement",
        Corollary,
        "Neural-network agreement",
        "closure-classes",
        ProxyConsistent,
    ),
    entry(
        "tree-midpoint-closure",
        Lemma,
        "Regression-tree midpoint closure",
        "closure-classes",
        ProvedPerInstance,
    ),
    entry(
        "tree-agreement",
        Corollary,
        "Regression tree agreement",
        "closure-classes",
        ProvedPerInstance,
    ),
    entry(
        "sc-midpoint-anchor",
        Lemma,
        "Midpoint anchor for strongly convex losses",
        "frankwolfe",
        ProvedPerInstance,
    ),
    entry(
        "stacking-agreement-general",
        Theorem,
        "Stacked aggregation agreement, vector labels",
        "stacking",
        MonteCarloPass,
    ),
    entry(
        "fw-single-step",
        Lemma,
        "Frank-Wolfe single-iterate progress",
        "frankwolfe",
        ProvedPerInstance,
    ),
    entry(
        "fw-correlation-lower-bound",
        Lemma,
        "Frank-Wolfe gap dominates the anchor gap",
        "frankwolfe",
        ProvedPerInstance,
    ),
    entry(
        "fw-gap-recurrence",
        Lemma,
        "Frank-Wolfe gap recurrence toward R(K_tau)",
        "frankwolfe",
        ProvedPerInstance,
    ),
    entry(
        "fw-rate",
        Lemma,
        "Frank-Wolfe anchor gap upper bound",
        "frankwolfe",
        ProvedPerInstance,
    ),
    entry(
        "fw-agreement",
        Theorem,
        "Frank-Wolfe gradient boosting agreement bound",
        "frankwolfe",
        ProvedPerInstance,
    ),
    entry(
        "closure-agreement",
        Theorem,
        "Agreement from midpoint closure",
        "closure-classes",
        ProvedPerInstance,
    ),
];

/// A named check implemented somewhere in the workspace, and the result it certifies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CheckEntry {
    pub check: &'static str,
    pub bound: &'static str,
    pub verdict: Verdict,
}

const fn check(check: &'static str, bound: &'static str, verdict: Verdict) -> CheckEntry {
    CheckEntry {
        check,
        bound,
        verdict,
    }
}

pub const CHECKS: &[CheckEntry] = &[
    check(
        "population::check_midpoint_identity",
        "midpoint-identity",
        ProvedPerInstance,
    ),
    check(
        "population::check_anchor_bound",
        "midpoint-anchor",
        ProvedPerInstance,
    ),
    check(
        "population::check_local_curve_bound",
        "local-learning-curve",
        ProvedPerInstance,
    ),
    check(
        "stacking::stacking_curve",
        "stacking-agreement",
        MonteCarloPass,
    ),
    check(
        "stacking::verify_tightness",
        "stacking-near-tightness",
        MonteCarloPass,
    ),
    check(
        "boosting::BoostTrace::max_step_violation",
        "gb-single-step",
        ProvedPerInstance,
    ),
    check(
        "boosting::certify_gb_rate[dual]",
        "gb-correlation-lower-bound",
        ProvedPerInstance,
    ),
    check(
        "boosting::certify_gb_rate[recurrence]",
        "gb-gap-recurrence",
        ProvedPerInstance,
    ),
    check(
        "boosting::certify_gb_rate[rate]",
        "gb-rate",
        ProvedPerInstance,
    ),
    check(
        "boosting::certify_gb_two_run",
        "gb-agreement",
        ProvedPerInstance,
    ),
    check(
        "closure::check_nn_closure",
        "nn-midpoint-closure",
        ProvedPerInstance,
    ),
    check(
        "closure::certify_nn_agreement",
        "nn-agreement",
        ProxyConsistent,
    ),
    check(
        "closure::check_tree_closure",
        "tree-midpoint-closure",
        ProvedPerInstance,
    ),
    check(
        "closure::certify_tree_agreement",
        "tree-agreement",
        ProvedPerInstance,
    ),
    check(
        "frankwolfe::pointwise_anchor_slacks",
        "sc-midpoint-anchor",
        ProvedPerInstance,
    ),
    check(
        "stacking::stacking_curve[vector labels]",
        "stacking-agreement-general",
        MonteCarloPass,
    ),
    check(
        "frankwolfe::certify_fw_rate[step]",
        "fw-single-step",
        ProvedPerInstance,
    ),
    check(
        "frankwolfe::certify_fw_rate[dual]",
        "fw-correlation-lower-bound",
        ProvedPerInstance,
    ),
    check(
        "frankwolfe::certify_fw_rate[recurrence]",
        "fw-gap-recurrence",
        ProvedPerInstance,
    ),
    check(
        "frankwolfe::certify_fw_rate[rate]",
        "fw-rate",
        ProvedPerInstance,
    ),
    check(
        "frankwolfe::certify_fw_agreement",
        "fw-agreement",
        ProvedPerInstance,
    ),
    check(
        "closure::CurveCertificate::strongly_convex_rhs",
        "closure-agreement",
        ProvedPerInstance,
    ),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceStatus {
    Covered,
    /// No registered check certifies this result.
    Missing,
    /// A check certifies it under a different verdict kind than the registry.
    Mismatch,
}

impl TraceStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            TraceStatus::Covered => "covered",
            TraceStatus::Missing => "MISSING",
            TraceStatus::Mismatch => "MISMATCH",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    pub entry: RegistryEntry,
    pub checks: Vec<&'static str>,
    pub status: TraceStatus,
}

pub fn trace_matrix(registry: &[RegistryEntry], checks: &[CheckEntry]) -> Vec<TraceRow> {
    registry
        .iter()
        .map(|e| {
            let mine: Vec<&CheckEntry> = checks.iter().filter(|c| c.bound == e.id).collect();
            let status = if mine.is_empty() {
                TraceStatus::Missing
            } else if mine.iter().any(|c| c.verdict != e.verdict) {
                TraceStatus::Mismatch
            } else {
                TraceStatus::Covered
            };
            TraceRow {
                entry: *e,
                checks: mine.iter().map(|c| c.check).collect(),
                status,
            }
        })
        .collect()
}

/// Fixed-width text rendering of a trace matrix.
pub fn render_trace_matrix(rows: &[TraceRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<28} {:<12} {:<16} {:<20} {:<9} checks",
        "id", "kind", "module", "verdict", "status"
    );
    for r in rows {
        let kind = serde_json::to_value(r.entry.kind)
            .ok()
            .and_then(|v| v.as_str().map(str::to_owned))
            .unwrap_or_default();
        let _ = writeln!(
            out,
            "{:<28} {:<12} {:<16} {:<20} {:<9} {}",
            r.entry.id,
            kind,
            r.entry.module,
            r.entry.verdict.as_str(),
            r.status.as_str(),
            if r.checks.is_empty() {
                "-".to_string()
            } else {
                r.checks.join(", ")
            }
        );
    }
    out
}

pub fn registry_entry(id: &str) -> Option<&'static RegistryEntry> {
    REGISTRY.iter().find(|e| e.id == id)
}

/// Aggregated outcome for one result over all instances a run produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub bound: String,
    pub module: String,
    pub verdict: Verdict,
    pub instances: usize,
    /// Smallest right-hand side minus left-hand side observed.
    pub min_slack: Option<f64>,
    pub failures: usize,
}

impl BoundReport {
    /// Panics if `id` is not registered, so reports cannot drift from the registry.
    pub fn for_bound(id: &str) -> BoundReport {
        let e = registry_entry(id).unwrap_or_else(|| panic!("unregistered bound {id}"));
        BoundReport {
            bound: e.id.into(),
            module: e.module.into(),
            verdict: e.verdict,
            instances: 0,
            min_slack: None,
            failures: 0,
        }
    }

    /// Records one instance; a NaN slack counts as a failure.
    pub fn record(&mut self, slack: f64, passed: bool) {
        self.instances += 1;
        if !slack.is_nan() {
            self.min_slack = Some(self.min_slack.map_or(slack, |m| m.min(slack)));
        }
        if !passed || slack.is_nan() {
            self.failures += 1;
        }
    }

    pub fn passed(&self) -> bool {
        self.failures == 0 && self.instances > 0
    }
}

/// Reports keyed by bound id, in registry order when rendered.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportSet {
    pub reports: BTreeMap<String, BoundReport>,
}

impl ReportSet {
    pub fn record(&mut self, bound: &str, slack: f64, passed: bool) {
        self.reports
            .entry(bound.to_string())
            .or_insert_with(|| BoundReport::for_bound(bound))
            .record(slack, passed);
    }

    /// Registry-ordered rows.
    pub fn rows(&self) -> Vec<&BoundReport> {
        REGISTRY
            .iter()
            .filter_map(|e| self.reports.get(e.id))
            .collect()
    }

    /// The exit-code contract: every gating row passes; proxy rows are ignored.
    pub fn all_gating_passed(&self) -> bool {
        self.reports
            .values()
            .filter(|r| r.verdict.gates_exit())
            .all(BoundReport::passed)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<28} {:<20} {:>9} {:>9} {:>14}  result",
            "bound", "verdict", "instances", "failures", "min slack"
        );
        for r in self.rows() {
            let result = match (r.passed(), r.verdict) {
                (true, ProxyConsistent) => "consistent",
                (false, ProxyConsistent) => "inconsistent",
                (true, _) => "pass",
                (false, _) => "FAIL",
            };
            let slack = r.min_slack.map_or("-".to_string(), |s| format!("{s:.3e}"));
            let _ = writeln!(
                out,
                "{:<28} {:<20} {:>9} {:>9} {:>14}  {result}",
                r.bound,
                r.verdict.as_str(),
                r.instances,
                r.failures,
                slack
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_ids_are_unique_and_all_covered() {
        let mut ids: Vec<_> = REGISTRY.iter().map(|e| e.id).collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), REGISTRY.len());
        assert!(trace_matrix(&REGISTRY, CHECKS)
            .iter()
            .all(|r| r.status == TraceStatus::Covered));
        assert!(CHECKS.iter().all(|c| registry_entry(c.bound).is_some()));
    }

    #[test]
    fn removed_check_is_flagged_missing() {
        let fewer: Vec<CheckEntry> = CHECKS
            .iter()
            .copied()
            .filter(|c| c.bound != "gb-rate")
            .collect();
        let rows = trace_matrix(&REGISTRY, &fewer);
        let row = rows.iter().find(|r| r.entry.id == "gb-rate").unwrap();
        assert_eq!(row.status, TraceStatus::Missing);
        assert!(render_trace_matrix(&rows).contains("MISSING"));
    }

    #[test]
    fn verdict_mismatch_is_flagged() {
        let mut altered = CHECKS.to_vec();
        altered[0].verdict = MonteCarloPass;
        let rows = trace_matrix(&REGISTRY, &altered);
        assert_eq!(rows[0].status, TraceStatus::Mismatch);
    }

    #[test]
    fn proxy_rows_do_not_gate() {
        let mut set = ReportSet::default();
        set.record("midpoint-identity", 0.0, true);
        set.record("nn-agreement", -1.0, false);
        assert!(set.all_gating_passed());
        set.record("midpoint-identity", f64::NAN, true);
        assert!(!set.all_gating_passed());
    }
}
