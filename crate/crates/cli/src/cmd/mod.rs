use std::path::{Path, PathBuf};

use dlab_core::closure::CurveVerdict;
use dlab_core::report::ReportSet;
use dlab_core::Tolerances;

use crate::output::Output;

pub mod boost;
pub mod fw;
pub mod nn;
pub mod selftest;
pub mod stacking;
pub mod tightness;
pub mod trees;

pub struct Ctx {
    pub seed: u64,
    pub z: f64,
    pub tol: Tolerances,
    pub out: Output,
    /// Directory that relative paths in the config resolve against.
    pub base_dir: PathBuf,
}

pub struct Outcome {
    pub reports: ReportSet,
    /// Human-readable lines printed before the report table.
    pub summary: String,
}

/// CSV-friendly booleans.
pub fn flag(b: bool) -> &'static str {
    if b {
        "pass"
    } else {
        "fail"
    }
}

/// Distance of an identity residual inside its relative tolerance band.
pub fn identity_margin(tol: &Tolerances, disagreement: f64, residual: f64) -> f64 {
    tol.relative * (1.0 + disagreement.abs()) - residual.abs()
}

pub fn verdict_name(v: CurveVerdict) -> &'static str {
    match v {
        CurveVerdict::Pass => "pass",
        CurveVerdict::Fail => "fail",
        CurveVerdict::Consistent => "consistent",
        CurveVerdict::Inconsistent => "inconsistent",
    }
}

/// Short label for a fixture file: its stem.
pub fn fixture_name(path: &Path) -> String {
    path.file_stem().map_or_else(
        || path.display().to_string(),
        |s| s.to_string_lossy().into_owned(),
    )
}
