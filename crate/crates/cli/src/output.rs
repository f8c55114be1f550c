use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use dlab_core::report::ReportSet;
use dlab_core::Tolerances;
use serde::Serialize;

use crate::config::SeedSource;

/// Single writer for one run's output directory.
pub struct Output {
    dir: PathBuf,
}

impl Output {
    pub fn create(dir: &Path) -> Result<Output> {
        fs::create_dir_all(dir)
            .with_context(|| format!("creating output directory {}", dir.display()))?;
        Ok(Output {
            dir: dir.to_path_buf(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn csv<T: Serialize>(&self, name: &str, rows: &[T]) -> Result<()> {
        let path = self.path(name);
        let mut w =
            csv::Writer::from_path(&path).with_context(|| format!("writing {}", path.display()))?;
        for r in rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn text(&self, name: &str, content: &str) -> Result<()> {
        let path = self.path(name);
        fs::write(&path, content).with_context(|| format!("writing {}", path.display()))
    }

    pub fn json<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        self.text(name, &(serde_json::to_string_pretty(value)? + "\n"))
    }
}

#[derive(Debug, Serialize)]
pub struct RunMeta {
    pub subcommand: &'static str,
    pub config_sha256: String,
    pub seed: u64,
    pub seed_source: SeedSource,
    pub z: f64,
    pub tolerances: Tolerances,
}

#[derive(Serialize)]
struct ReportDoc<'a> {
    #[serde(flatten)]
    meta: &'a RunMeta,
    all_gating_passed: bool,
    reports: Vec<&'a dlab_core::report::BoundReport>,
}

pub fn write_report(out: &Output, meta: &RunMeta, reports: &ReportSet) -> Result<()> {
    out.json(
        "report.json",
        &ReportDoc {
            meta,
            all_gating_passed: reports.all_gating_passed(),
            reports: reports.rows(),
        },
    )
}

/// One plotted series: `(x column, y column, legend)`.
pub struct Series<'a> {
    pub x: &'a str,
    pub y: &'a str,
    pub title: &'a str,
}

/// A gnuplot script reading the CSV from the same directory.
pub fn gnuplot(
    csv_name: &str,
    title: &str,
    xlabel: &str,
    ylabel: &str,
    logx: bool,
    series: &[Series<'_>],
) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "# reads {csv_name}; run from this directory with gnuplot -p"
    );
    let _ = writeln!(s, "set datafile separator ','");
    let _ = writeln!(s, "set title '{title}'");
    let _ = writeln!(s, "set xlabel '{xlabel}'");
    let _ = writeln!(s, "set ylabel '{ylabel}'");
    let _ = writeln!(s, "set key left top autotitle columnhead");
    if logx {
        let _ = writeln!(s, "set logscale x 2");
    }
    let plots: Vec<String> = series
        .iter()
        .map(|p| {
            format!(
                "'{csv_name}' using '{}':'{}' with points title '{}'",
                p.x, p.y, p.title
            )
        })
        .collect();
    let _ = writeln!(s, "plot {}", plots.join(", \\\n     "));
    s
}
